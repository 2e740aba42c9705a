//! Multi-axis external weights: the spectral gating mechanism, the weight
//! generator, and the block built from them.
//!
//! A `[C,H,W]` map is split into four equal channel slices. Slices 1-3 are
//! gated in the frequency domain along the (H,W), (C,W) and (C,H) axis pairs:
//! forward DFT, pointwise product with a learned complex weight, inverse DFT.
//! Slice 4 goes through a depthwise-separable convolution for local detail.
//! The slices are re-concatenated and added to the input.
//!
//! Weights are complex, stored as half-spectrum maps. In `Generated` mode
//! each weight comes from a small learnable tensor (two 8x8 real planes)
//! resized by align-corners bilinear interpolation to the branch's spectrum
//! shape and refined by an inverted residual block; `Raw` mode learns the
//! full-size weight directly (the "Random" ablation row).

use crate::nn::{
    bilinear_resize, bilinear_resize_backward, DwSeparable, DwSeparableCache, Ffn, FfnCache,
    GradStore, GroupNorm, GroupNormCache, Irb, IrbCache, ParamId, ParamStore,
};
use crate::rng::Rng;
use crate::spectral::{
    irdft2, irdft2_backward, rdft2, rdft2_backward, spectral_mul, spectral_mul_backward, AxisPair,
};
use crate::tensor::{ComplexTensor, Tensor};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Base resolution of the learnable weight planes before interpolation.
pub const WINIT_BASE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorMode {
    Generated,
    Raw,
}

/// Branch toggles for the ablation grid. A disabled branch passes its channel
/// slice through unchanged (and owns no parameters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchMask {
    pub use_dw: bool,
    pub use_hw: bool,
    pub use_cw: bool,
    pub use_ch: bool,
}

impl Default for BranchMask {
    fn default() -> Self {
        Self {
            use_dw: true,
            use_hw: true,
            use_cw: true,
            use_ch: true,
        }
    }
}

impl BranchMask {
    pub fn spectral(&self, idx: usize) -> bool {
        match idx {
            0 => self.use_hw,
            1 => self.use_cw,
            2 => self.use_ch,
            _ => unreachable!(),
        }
    }

    /// Parse a comma-separated subset of `dw,hw,cw,ch`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let mut m = Self {
            use_dw: false,
            use_hw: false,
            use_cw: false,
            use_ch: false,
        };
        for tok in s.split(',').filter(|t| !t.is_empty()) {
            match tok.trim() {
                "dw" => m.use_dw = true,
                "hw" => m.use_hw = true,
                "cw" => m.use_cw = true,
                "ch" => m.use_ch = true,
                other => return Err(format!("unknown branch {other:?}")),
            }
        }
        Ok(m)
    }
}

/// Hyperparameters shared by every MEW block in a model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MewConfig {
    pub ffn_ratio: usize,
    pub groups: usize,
    pub mask: BranchMask,
    pub generator_mode: GeneratorMode,
    /// Include the pointwise mixing conv after the depthwise pass.
    pub dw_pointwise: bool,
    /// Force the imaginary weight plane to zero (comparison switch).
    pub real_weights: bool,
}

impl Default for MewConfig {
    fn default() -> Self {
        Self {
            ffn_ratio: 4,
            groups: 4,
            mask: BranchMask::default(),
            generator_mode: GeneratorMode::Generated,
            dw_pointwise: true,
            real_weights: false,
        }
    }
}

/// One learnable external weight and its generator.
#[derive(Debug, Clone)]
pub struct ExternalWeights {
    pub pair: AxisPair,
    pub mode: GeneratorMode,
    pub w_init: ParamId,
    pub irb: Option<Irb>,
    pub real_weights: bool,
    /// Fixed target shape (n1, stored bins); raw mode is locked to it.
    pub target: (usize, usize),
}

pub struct WeightGenCache {
    irb: Option<IrbCache>,
}

fn near_identity_planes(shape_hw: (usize, usize), rng: &mut Rng) -> Tensor {
    let (a, b) = shape_hw;
    let re = Tensor::randn(&[1, a, b], rng, 1.0, 0.02);
    let im = Tensor::randn(&[1, a, b], rng, 0.0, 0.02);
    let mut data = re.into_data();
    data.extend(im.into_data());
    Tensor::new(vec![2, a, b], data)
}

impl ExternalWeights {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        pair: AxisPair,
        mode: GeneratorMode,
        target: (usize, usize),
        real_weights: bool,
        rng: &mut Rng,
    ) -> Self {
        let (w_init, irb) = match mode {
            GeneratorMode::Generated => {
                let w = ps.register(
                    format!("{name}.w_init"),
                    near_identity_planes((WINIT_BASE, WINIT_BASE), rng),
                );
                // small projection init keeps the generated weight near BI(w_init)
                let irb = Irb::new(ps, &format!("{name}.irb"), 2, 4, Some(0.02), rng);
                (w, Some(irb))
            }
            GeneratorMode::Raw => {
                let w = ps.register(format!("{name}.w_init"), near_identity_planes(target, rng));
                (w, None)
            }
        };
        Self {
            pair,
            mode,
            w_init,
            irb,
            real_weights,
            target,
        }
    }

    /// Produce the complex weight at exactly the half-spectrum shape.
    pub fn generate(&self, ps: &ParamStore, target: (usize, usize)) -> (ComplexTensor, WeightGenCache) {
        assert!(target.0 >= 1 && target.1 >= 1, "degenerate weight target");
        let (planes, irb_cache): (Tensor, Option<IrbCache>) = match self.mode {
            GeneratorMode::Generated => {
                let bi = bilinear_resize(ps.get(self.w_init), target.0, target.1);
                let irb = self.irb.as_ref().unwrap();
                let (out, cache) = irb.forward(ps, &bi);
                (out, Some(cache))
            }
            GeneratorMode::Raw => {
                assert_eq!(
                    target, self.target,
                    "raw weights are fixed to the build-time spectrum shape"
                );
                (ps.get(self.w_init).clone(), None)
            }
        };
        let mut w = ComplexTensor::from_planes(&planes);
        if self.real_weights {
            for z in w.data_mut() {
                *z = Complex64::new(z.re, 0.0);
            }
        }
        assert_eq!(w.shape(), &[target.0, target.1]);
        (w, WeightGenCache { irb: irb_cache })
    }

    pub fn generate_backward(
        &self,
        ps: &ParamStore,
        cache: &WeightGenCache,
        dw: &ComplexTensor,
        gs: &mut GradStore,
    ) {
        let mut dw = dw.clone();
        if self.real_weights {
            for z in dw.data_mut() {
                *z = Complex64::new(z.re, 0.0);
            }
        }
        let dplanes = dw.to_planes();
        match self.mode {
            GeneratorMode::Generated => {
                let irb = self.irb.as_ref().unwrap();
                let dbi = irb.backward(ps, cache.irb.as_ref().unwrap(), &dplanes, gs);
                let dinit = bilinear_resize_backward(&dbi, WINIT_BASE, WINIT_BASE);
                gs.accumulate(self.w_init, &dinit);
            }
            GeneratorMode::Raw => {
                gs.accumulate(self.w_init, &dplanes);
            }
        }
    }
}

/// Expand a `[n1, h2]` weight across the untransformed axis to the full
/// stored-spectrum shape (explicit repeat; no implicit broadcasting).
fn expand_weight(w: &ComplexTensor, pair: AxisPair, spectrum_shape: &[usize]) -> ComplexTensor {
    let mut out = ComplexTensor::zeros(spectrum_shape);
    let (s0, s1, s2) = (spectrum_shape[0], spectrum_shape[1], spectrum_shape[2]);
    let wn = w.shape()[1];
    for a in 0..s0 {
        for b in 0..s1 {
            for c in 0..s2 {
                let idx3 = [a, b, c];
                let (k1, k2) = (idx3[pair.first], idx3[pair.second]);
                let i = out.at3(a, b, c);
                out.data_mut()[i] = w.data()[k1 * wn + k2];
            }
        }
    }
    out
}

/// Sum a full-spectrum-shaped gradient over the untransformed axis, the
/// adjoint of [`expand_weight`].
fn reduce_weight_grad(g: &ComplexTensor, pair: AxisPair, target: (usize, usize)) -> ComplexTensor {
    let mut out = ComplexTensor::zeros(&[target.0, target.1]);
    let s = g.shape();
    for a in 0..s[0] {
        for b in 0..s[1] {
            for c in 0..s[2] {
                let idx3 = [a, b, c];
                let (k1, k2) = (idx3[pair.first], idx3[pair.second]);
                out.data_mut()[k1 * target.1 + k2] += g.data()[g.at3(a, b, c)];
            }
        }
    }
    out
}

/// One frequency-gated branch over a channel slice.
#[derive(Debug, Clone)]
pub struct SpectralBranch {
    pub weights: ExternalWeights,
}

pub struct SpectralBranchCache {
    s: ComplexTensor,
    w_full: ComplexTensor,
    gen: WeightGenCache,
    dims: [usize; 3],
}

impl SpectralBranch {
    fn target_for(dims: [usize; 3], pair: AxisPair) -> (usize, usize) {
        (dims[pair.first], AxisPair::half_len(dims[pair.second]))
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> (Tensor, SpectralBranchCache) {
        let dims = [x.shape()[0], x.shape()[1], x.shape()[2]];
        let pair = self.weights.pair;
        let s = rdft2(x, pair);
        let target = Self::target_for(dims, pair);
        let (w, gen) = self.weights.generate(ps, target);
        let w_full = expand_weight(&w, pair, s.shape());
        let gated = spectral_mul(&s, &w_full);
        let y = irdft2(&gated, pair, dims);
        (
            y,
            SpectralBranchCache {
                s,
                w_full,
                gen,
                dims,
            },
        )
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &SpectralBranchCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Tensor {
        let pair = self.weights.pair;
        let dgated = irdft2_backward(dy, pair);
        let (ds, dw_full) = spectral_mul_backward(&cache.s, &cache.w_full, &dgated);
        let dx = rdft2_backward(&ds, pair, cache.dims);
        let target = Self::target_for(cache.dims, pair);
        let dw = reduce_weight_grad(&dw_full, pair, target);
        self.weights.generate_backward(ps, &cache.gen, &dw, gs);
        dx
    }
}

/// The four-branch mechanism: three spectral branches plus one local branch.
#[derive(Debug, Clone)]
pub struct MewLayer {
    pub channels: usize,
    pub spectral: [Option<SpectralBranch>; 3],
    pub dw: Option<DwSeparable>,
}

pub struct MewLayerCache {
    spectral: [Option<SpectralBranchCache>; 3],
    dw: Option<DwSeparableCache>,
}

impl MewLayer {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        channels: usize,
        spatial: (usize, usize),
        cfg: &MewConfig,
        rng: &mut Rng,
    ) -> Self {
        assert!(channels % 4 == 0, "MEW needs channels divisible by 4, got {channels}");
        let c4 = channels / 4;
        let slice_dims = [c4, spatial.0, spatial.1];
        let mk = |ps: &mut ParamStore, idx: usize, pair: AxisPair, tag: &str, rng: &mut Rng| {
            cfg.mask.spectral(idx).then(|| SpectralBranch {
                weights: ExternalWeights::new(
                    ps,
                    &format!("{name}.{tag}"),
                    pair,
                    cfg.generator_mode,
                    SpectralBranch::target_for(slice_dims, pair),
                    cfg.real_weights,
                    rng,
                ),
            })
        };
        let spectral = [
            mk(ps, 0, AxisPair::HW, "hw", rng),
            mk(ps, 1, AxisPair::CW, "cw", rng),
            mk(ps, 2, AxisPair::CH, "ch", rng),
        ];
        let dw = cfg
            .mask
            .use_dw
            .then(|| DwSeparable::new(ps, &format!("{name}.local"), c4, cfg.dw_pointwise, rng));
        Self {
            channels,
            spectral,
            dw,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> (Tensor, MewLayerCache) {
        assert_eq!(x.shape()[0], self.channels, "MEW channel mismatch");
        let parts = x.split_channels(4);
        let mut outs: Vec<Tensor> = Vec::with_capacity(4);
        let mut sp_caches: [Option<SpectralBranchCache>; 3] = [None, None, None];
        for i in 0..3 {
            match &self.spectral[i] {
                Some(branch) => {
                    let (y, c) = branch.forward(ps, &parts[i]);
                    outs.push(y);
                    sp_caches[i] = Some(c);
                }
                None => outs.push(parts[i].clone()), // masked: pass-through
            }
        }
        let dw_cache = match &self.dw {
            Some(dw) => {
                let (y, c) = dw.forward(ps, &parts[3]);
                outs.push(y);
                Some(c)
            }
            None => {
                outs.push(parts[3].clone());
                None
            }
        };
        let y = Tensor::concat_channels(&outs).add(x);
        (
            y,
            MewLayerCache {
                spectral: sp_caches,
                dw: dw_cache,
            },
        )
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &MewLayerCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Tensor {
        let dparts = dy.split_channels(4);
        let mut dxs: Vec<Tensor> = Vec::with_capacity(4);
        for i in 0..3 {
            match (&self.spectral[i], &cache.spectral[i]) {
                (Some(branch), Some(c)) => dxs.push(branch.backward(ps, c, &dparts[i], gs)),
                _ => dxs.push(dparts[i].clone()),
            }
        }
        match (&self.dw, &cache.dw) {
            (Some(dw), Some(c)) => dxs.push(dw.backward(ps, c, &dparts[3], gs)),
            _ => dxs.push(dparts[3].clone()),
        }
        Tensor::concat_channels(&dxs).add(dy) // + residual
    }
}

/// Pre-norm residual block: `X' = MEW(GN(X)) + X; Y = FFN(GN(X')) + X'`.
#[derive(Debug, Clone)]
pub struct MewBlock {
    pub gn1: GroupNorm,
    pub mew: MewLayer,
    pub gn2: GroupNorm,
    pub ffn: Ffn,
}

pub struct MewBlockCache {
    gn1: GroupNormCache,
    mew: MewLayerCache,
    gn2: GroupNormCache,
    ffn: FfnCache,
}

impl MewBlock {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        channels: usize,
        spatial: (usize, usize),
        cfg: &MewConfig,
        rng: &mut Rng,
    ) -> Self {
        Self {
            gn1: GroupNorm::new(ps, &format!("{name}.gn1"), channels, cfg.groups),
            mew: MewLayer::new(ps, &format!("{name}.mew"), channels, spatial, cfg, rng),
            gn2: GroupNorm::new(ps, &format!("{name}.gn2"), channels, cfg.groups),
            ffn: Ffn::new(ps, &format!("{name}.ffn"), channels, cfg.ffn_ratio, rng),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> (Tensor, MewBlockCache) {
        let (n1, gn1c) = self.gn1.forward(ps, x);
        let (m, mewc) = self.mew.forward(ps, &n1);
        let x2 = m.add(x);
        let (n2, gn2c) = self.gn2.forward(ps, &x2);
        let (f, ffnc) = self.ffn.forward(ps, &n2);
        let y = f.add(&x2);
        (
            y,
            MewBlockCache {
                gn1: gn1c,
                mew: mewc,
                gn2: gn2c,
                ffn: ffnc,
            },
        )
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &MewBlockCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Tensor {
        let dn2 = self.ffn.backward(ps, &cache.ffn, dy, gs);
        let dx2 = self.gn2.backward(ps, &cache.gn2, &dn2, gs).add(dy);
        let dn1 = self.mew.backward(ps, &cache.mew, &dx2, gs);
        self.gn1.backward(ps, &cache.gn1, &dn1, gs).add(&dx2)
    }
}
