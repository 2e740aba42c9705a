//! Non-spectral building blocks with hand-written reverse-mode gradients.
//!
//! Layers are plain data (parameter handles + hyperparameters); parameter
//! tensors live in a central [`ParamStore`]. `forward` is pure given the
//! store and returns the activation cache needed by `backward`, so batch
//! items can run in parallel with per-thread gradient stores reduced in a
//! fixed order.

use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamStore {
    values: Vec<Tensor>,
    names: Vec<String>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.values.push(t);
        self.names.push(name);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.values.iter())
    }

    pub fn total_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }
}

/// Per-parameter gradient buffers, same layout as the store.
#[derive(Debug, Clone)]
pub struct GradStore {
    grads: Vec<Tensor>,
}

impl GradStore {
    pub fn zeros_like(ps: &ParamStore) -> Self {
        Self {
            grads: ps.values.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.grads[id.0].add_assign(g);
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn reset(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.scale_assign(s);
        }
    }

    /// Fixed-order merge (index order), used for batch reduction.
    pub fn merge(&mut self, other: &GradStore) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    /// Test hook: linearizes the block so compositions can be checked
    /// against pure convolution oracles.
    Identity,
}

impl Activation {
    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn df(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_grad(x),
            Activation::Identity => 1.0,
        }
    }
}

const GELU_C: f64 = 0.044715;

/// tanh-approximation GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}

fn conv_out_extent(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Standard 2D cross-correlation with zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId, // [Cout, Cin, k, k]
    pub b: ParamId, // [Cout]
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct Conv2dCache {
    x: Tensor,
}

impl Conv2d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        Self::with_std(ps, name, cin, cout, k, stride, pad, rng, std)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_std(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
        std: f64,
    ) -> Self {
        let w = ps.register(format!("{name}.w"), Tensor::randn(&[cout, cin, k, k], rng, 0.0, std));
        let b = ps.register(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self {
            w,
            b,
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> (Tensor, Conv2dCache) {
        let s = x.shape();
        assert_eq!(s.len(), 3, "conv2d input must be [C,H,W]");
        assert_eq!(s[0], self.cin, "conv2d channel mismatch");
        let (h, w) = (s[1], s[2]);
        let (oh, ow) = (
            conv_out_extent(h, self.k, self.stride, self.pad),
            conv_out_extent(w, self.k, self.stride, self.pad),
        );
        let mut y = Tensor::zeros(&[self.cout, oh, ow]);
        let wd = ps.get(self.w).data();
        let bd = ps.get(self.b).data();
        let xd = x.data();
        if self.k == 1 && self.stride == 1 && self.pad == 0 {
            // 1x1 conv = per-pixel channel matmul
            let np = h * w;
            let yd = y.data_mut();
            for o in 0..self.cout {
                let row = &mut yd[o * np..(o + 1) * np];
                row.fill(bd[o]);
                for i in 0..self.cin {
                    let wv = wd[o * self.cin + i];
                    let xrow = &xd[i * np..(i + 1) * np];
                    for (r, &xv) in row.iter_mut().zip(xrow) {
                        *r += wv * xv;
                    }
                }
            }
            return (y, Conv2dCache { x: x.clone() });
        }
        for o in 0..self.cout {
            for yh in 0..oh {
                for yw in 0..ow {
                    let mut acc = bd[o];
                    for i in 0..self.cin {
                        for kh in 0..self.k {
                            let ih = yh * self.stride + kh;
                            if ih < self.pad || ih - self.pad >= h {
                                continue;
                            }
                            let ih = ih - self.pad;
                            let wrow = ((o * self.cin + i) * self.k + kh) * self.k;
                            let xrow = (i * h + ih) * w;
                            for kw in 0..self.k {
                                let iw = yw * self.stride + kw;
                                if iw < self.pad || iw - self.pad >= w {
                                    continue;
                                }
                                acc += wd[wrow + kw] * xd[xrow + iw - self.pad];
                            }
                        }
                    }
                    y.set3(o, yh, yw, acc);
                }
            }
        }
        (y, Conv2dCache { x: x.clone() })
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &Conv2dCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Tensor {
        let x = &cache.x;
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (oh, ow) = (dy.shape()[1], dy.shape()[2]);
        let mut dx = Tensor::zeros(x.shape());
        let mut dw = Tensor::zeros(ps.get(self.w).shape());
        let mut db = Tensor::zeros(ps.get(self.b).shape());
        let wd = ps.get(self.w).data();
        let xd = x.data();
        if self.k == 1 && self.stride == 1 && self.pad == 0 {
            let np = h * w;
            let dyd = dy.data();
            let dxd = dx.data_mut();
            let dwd = dw.data_mut();
            let dbd = db.data_mut();
            for o in 0..self.cout {
                let grow = &dyd[o * np..(o + 1) * np];
                dbd[o] = grow.iter().sum();
                for i in 0..self.cin {
                    let wv = wd[o * self.cin + i];
                    let xrow = &xd[i * np..(i + 1) * np];
                    let drow = &mut dxd[i * np..(i + 1) * np];
                    let mut acc = 0.0;
                    for ((d, &g), &xv) in drow.iter_mut().zip(grow).zip(xrow) {
                        *d += wv * g;
                        acc += g * xv;
                    }
                    dwd[o * self.cin + i] = acc;
                }
            }
            gs.accumulate(self.w, &dw);
            gs.accumulate(self.b, &db);
            return dx;
        }
        for o in 0..self.cout {
            for yh in 0..oh {
                for yw in 0..ow {
                    let g = dy.get3(o, yh, yw);
                    db.data_mut()[o] += g;
                    for i in 0..self.cin {
                        for kh in 0..self.k {
                            let ih = yh * self.stride + kh;
                            if ih < self.pad || ih - self.pad >= h {
                                continue;
                            }
                            let ih = ih - self.pad;
                            let wrow = ((o * self.cin + i) * self.k + kh) * self.k;
                            let xrow = (i * h + ih) * w;
                            for kw in 0..self.k {
                                let iw = yw * self.stride + kw;
                                if iw < self.pad || iw - self.pad >= w {
                                    continue;
                                }
                                let iw = iw - self.pad;
                                dw.data_mut()[wrow + kw] += g * xd[xrow + iw];
                                dx.data_mut()[xrow + iw] += g * wd[wrow + kw];
                            }
                        }
                    }
                }
            }
        }
        gs.accumulate(self.w, &dw);
        gs.accumulate(self.b, &db);
        dx
    }
}

/// Per-channel (depthwise) 2D convolution, kernel `[C,1,k,k]`, no bias.
#[derive(Debug, Clone)]
pub struct DwConv2d {
    pub w: ParamId,
    pub channels: usize,
    pub k: usize,
    pub pad: usize,
}

pub struct DwConv2dCache {
    x: Tensor,
}

impl DwConv2d {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, k: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / (k * k) as f64).sqrt();
        let w = ps.register(
            format!("{name}.w"),
            Tensor::randn(&[channels, 1, k, k], rng, 0.0, std),
        );
        Self {
            w,
            channels,
            k,
            pad: (k - 1) / 2,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> (Tensor, DwConv2dCache) {
        let s = x.shape();
        assert_eq!(s[0], self.channels, "depthwise channel mismatch");
        let (h, w) = (s[1], s[2]);
        let mut y = Tensor::zeros(&[self.channels, h, w]);
        let wd = ps.get(self.w).data();
        for c in 0..self.channels {
            for yh in 0..h {
                for yw in 0..w {
                    let mut acc = 0.0;
                    for kh in 0..self.k {
                        let ih = yh + kh;
                        if ih < self.pad || ih - self.pad >= h {
                            continue;
                        }
                        for kw in 0..self.k {
                            let iw = yw + kw;
                            if iw < self.pad || iw - self.pad >= w {
                                continue;
                            }
                            acc += wd[(c * self.k + kh) * self.k + kw]
                                * x.get3(c, ih - self.pad, iw - self.pad);
                        }
                    }
                    y.set3(c, yh, yw, acc);
                }
            }
        }
        (y, DwConv2dCache { x: x.clone() })
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &DwConv2dCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Tensor {
        let x = &cache.x;
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let mut dx = Tensor::zeros(x.shape());
        let mut dw = Tensor::zeros(ps.get(self.w).shape());
        let wd = ps.get(self.w).data();
        for c in 0..self.channels {
            for yh in 0..h {
                for yw in 0..w {
                    let g = dy.get3(c, yh, yw);
                    for kh in 0..self.k {
                        let ih = yh + kh;
                        if ih < self.pad || ih - self.pad >= h {
                            continue;
                        }
                        let ih = ih - self.pad;
                        for kw in 0..self.k {
                            let iw = yw + kw;
                            if iw < self.pad || iw - self.pad >= w {
                                continue;
                            }
                            let iw = iw - self.pad;
                            let wi = (c * self.k + kh) * self.k + kw;
                            dw.data_mut()[wi] += g * x.get3(c, ih, iw);
                            let xi = x.at3(c, ih, iw);
                            dx.data_mut()[xi] += g * wd[wi];
                        }
                    }
                }
            }
        }
        gs.accumulate(self.w, &dw);
        dx
    }

    /// Center-one delta kernels (identity convolution), for tests and the
    /// identity invariant.
    pub fn set_identity(&self, ps: &mut ParamStore) {
        assert_eq!(self.k % 2, 1);
        let t = ps.get_mut(self.w);
        t.fill(0.0);
        let mid = (self.k / 2) * self.k + self.k / 2;
        for c in 0..self.channels {
            t.data_mut()[c * self.k * self.k + mid] = 1.0;
        }
    }
}

/// Depthwise 3x3 pass followed by pointwise 1x1 mixing.
#[derive(Debug, Clone)]
pub struct DwSeparable {
    pub dw: DwConv2d,
    pub pw: Option<Conv2d>,
}

pub struct DwSeparableCache {
    dw: DwConv2dCache,
    pw: Option<Conv2dCache>,
}

impl DwSeparable {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        channels: usize,
        use_pointwise: bool,
        rng: &mut Rng,
    ) -> Self {
        let dw = DwConv2d::new(ps, &format!("{name}.dw"), channels, 3, rng);
        let pw = use_pointwise
            .then(|| Conv2d::new(ps, &format!("{name}.pw"), channels, channels, 1, 1, 0, rng));
        Self { dw, pw }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> (Tensor, DwSeparableCache) {
        let (h, dwc) = self.dw.forward(ps, x);
        match &self.pw {
            Some(pw) => {
                let (y, pwc) = pw.forward(ps, &h);
                (
                    y,
                    DwSeparableCache {
                        dw: dwc,
                        pw: Some(pwc),
                    },
                )
            }
            None => (h, DwSeparableCache { dw: dwc, pw: None }),
        }
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &DwSeparableCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Tensor {
        let dh = match (&self.pw, &cache.pw) {
            (Some(pw), Some(pwc)) => pw.backward(ps, pwc, dy, gs),
            _ => dy.clone(),
        };
        self.dw.backward(ps, &cache.dw, &dh, gs)
    }

    /// Identity configuration: delta depthwise kernels, identity pointwise.
    pub fn set_identity(&self, ps: &mut ParamStore) {
        self.dw.set_identity(ps);
        if let Some(pw) = &self.pw {
            let c = pw.cin;
            let t = ps.get_mut(pw.w);
            t.fill(0.0);
            for i in 0..c {
                t.data_mut()[i * c + i] = 1.0;
            }
            ps.get_mut(pw.b).fill(0.0);
        }
    }
}

/// GroupNorm over a single `[C,H,W]` sample.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
}

pub struct GroupNormCache {
    x: Tensor,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl GroupNorm {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        assert!(channels % groups == 0, "channels {channels} not divisible by groups {groups}");
        let gamma = ps.register(format!("{name}.gamma"), Tensor::ones(&[channels]));
        let beta = ps.register(format!("{name}.beta"), Tensor::zeros(&[channels]));
        Self {
            gamma,
            beta,
            channels,
            groups,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> (Tensor, GroupNormCache) {
        let s = x.shape();
        assert_eq!(s[0], self.channels, "group_norm channel mismatch");
        let (h, w) = (s[1], s[2]);
        let cg = self.channels / self.groups;
        let n = (cg * h * w) as f64;
        let gd = ps.get(self.gamma).data();
        let bd = ps.get(self.beta).data();
        let mut y = Tensor::zeros(s);
        let mut mean = vec![0.0; self.groups];
        let mut inv_std = vec![0.0; self.groups];
        for g in 0..self.groups {
            let lo = g * cg * h * w;
            let hi = lo + cg * h * w;
            let m = crate::tensor::pairwise_sum(&x.data()[lo..hi]) / n;
            let sq: Vec<f64> = x.data()[lo..hi].iter().map(|&v| (v - m) * (v - m)).collect();
            let var = crate::tensor::pairwise_sum(&sq) / n;
            let istd = 1.0 / (var + self.eps).sqrt();
            mean[g] = m;
            inv_std[g] = istd;
            for c in g * cg..(g + 1) * cg {
                for i in 0..h * w {
                    let idx = c * h * w + i;
                    y.data_mut()[idx] = gd[c] * (x.data()[idx] - m) * istd + bd[c];
                }
            }
        }
        (
            y,
            GroupNormCache {
                x: x.clone(),
                mean,
                inv_std,
            },
        )
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &GroupNormCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Tensor {
        let x = &cache.x;
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let cg = self.channels / self.groups;
        let n = (cg * h * w) as f64;
        let gd = ps.get(self.gamma).data();
        let mut dx = Tensor::zeros(x.shape());
        let mut dgamma = Tensor::zeros(&[self.channels]);
        let mut dbeta = Tensor::zeros(&[self.channels]);
        for g in 0..self.groups {
            let m = cache.mean[g];
            let istd = cache.inv_std[g];
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for c in g * cg..(g + 1) * cg {
                for i in 0..h * w {
                    let idx = c * h * w + i;
                    let xhat = (x.data()[idx] - m) * istd;
                    let dyv = dy.data()[idx];
                    dgamma.data_mut()[c] += dyv * xhat;
                    dbeta.data_mut()[c] += dyv;
                    let dxhat = dyv * gd[c];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
            }
            for c in g * cg..(g + 1) * cg {
                for i in 0..h * w {
                    let idx = c * h * w + i;
                    let xhat = (x.data()[idx] - m) * istd;
                    let dxhat = dy.data()[idx] * gd[c];
                    dx.data_mut()[idx] =
                        istd * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                }
            }
        }
        gs.accumulate(self.gamma, &dgamma);
        gs.accumulate(self.beta, &dbeta);
        dx
    }
}

/// Pointwise expand -> activation -> pointwise project feed-forward layer.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub act: Activation,
}

pub struct FfnCache {
    c1: Conv2dCache,
    pre_act: Tensor,
    c2: Conv2dCache,
}

impl Ffn {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, ratio: usize, rng: &mut Rng) -> Self {
        let hidden = channels * ratio;
        Self {
            conv1: Conv2d::new(ps, &format!("{name}.fc1"), channels, hidden, 1, 1, 0, rng),
            conv2: Conv2d::new(ps, &format!("{name}.fc2"), hidden, channels, 1, 1, 0, rng),
            act: Activation::Gelu,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> (Tensor, FfnCache) {
        let (h, c1) = self.conv1.forward(ps, x);
        let a = h.map(|v| self.act.f(v));
        let (y, c2) = self.conv2.forward(ps, &a);
        (
            y,
            FfnCache {
                c1,
                pre_act: h,
                c2,
            },
        )
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &FfnCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Tensor {
        let da = self.conv2.backward(ps, &cache.c2, dy, gs);
        let dh = da.mul(&cache.pre_act.map(|v| self.act.df(v)));
        self.conv1.backward(ps, &cache.c1, &dh, gs)
    }
}

/// Align-corners bilinear resize of the last two axes.
pub fn bilinear_resize(x: &Tensor, th: usize, tw: usize) -> Tensor {
    let s = x.shape();
    assert_eq!(s.len(), 3, "bilinear_resize needs rank 3");
    let (c, h, w) = (s[0], s[1], s[2]);
    assert!(th >= 1 && tw >= 1, "target dims must be >= 1");
    let sh = if th > 1 { (h - 1) as f64 / (th - 1) as f64 } else { 0.0 };
    let sw = if tw > 1 { (w - 1) as f64 / (tw - 1) as f64 } else { 0.0 };
    let mut y = Tensor::zeros(&[c, th, tw]);
    for ch in 0..c {
        for i in 0..th {
            let fh = i as f64 * sh;
            let h0 = fh.floor() as usize;
            let h1 = (h0 + 1).min(h - 1);
            let ah = fh - h0 as f64;
            for j in 0..tw {
                let fw = j as f64 * sw;
                let w0 = fw.floor() as usize;
                let w1 = (w0 + 1).min(w - 1);
                let aw = fw - w0 as f64;
                let v = (1.0 - ah) * (1.0 - aw) * x.get3(ch, h0, w0)
                    + (1.0 - ah) * aw * x.get3(ch, h0, w1)
                    + ah * (1.0 - aw) * x.get3(ch, h1, w0)
                    + ah * aw * x.get3(ch, h1, w1);
                y.set3(ch, i, j, v);
            }
        }
    }
    y
}

/// Adjoint of [`bilinear_resize`]: scatter the target gradient back to the
/// source grid with the same interpolation weights.
pub fn bilinear_resize_backward(dy: &Tensor, sh_dim: usize, sw_dim: usize) -> Tensor {
    let s = dy.shape();
    let (c, th, tw) = (s[0], s[1], s[2]);
    let (h, w) = (sh_dim, sw_dim);
    let sh = if th > 1 { (h - 1) as f64 / (th - 1) as f64 } else { 0.0 };
    let sw = if tw > 1 { (w - 1) as f64 / (tw - 1) as f64 } else { 0.0 };
    let mut dx = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for i in 0..th {
            let fh = i as f64 * sh;
            let h0 = fh.floor() as usize;
            let h1 = (h0 + 1).min(h - 1);
            let ah = fh - h0 as f64;
            for j in 0..tw {
                let fw = j as f64 * sw;
                let w0 = fw.floor() as usize;
                let w1 = (w0 + 1).min(w - 1);
                let aw = fw - w0 as f64;
                let g = dy.get3(ch, i, j);
                *dx.data_mut().get_mut((ch * h + h0) * w + w0).unwrap() +=
                    (1.0 - ah) * (1.0 - aw) * g;
                *dx.data_mut().get_mut((ch * h + h0) * w + w1).unwrap() += (1.0 - ah) * aw * g;
                *dx.data_mut().get_mut((ch * h + h1) * w + w0).unwrap() += ah * (1.0 - aw) * g;
                *dx.data_mut().get_mut((ch * h + h1) * w + w1).unwrap() += ah * aw * g;
            }
        }
    }
    dx
}

/// Inverted residual block: pointwise expand (x4) -> act -> 3x3 depthwise ->
/// act -> pointwise project, with identity residual. Shape-preserving.
#[derive(Debug, Clone)]
pub struct Irb {
    pub expand: Conv2d,
    pub dw: DwConv2d,
    pub project: Conv2d,
    pub act: Activation,
}

pub struct IrbCache {
    c1: Conv2dCache,
    h1: Tensor,
    cdw: DwConv2dCache,
    h2: Tensor,
    c3: Conv2dCache,
}

impl Irb {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        channels: usize,
        expand_ratio: usize,
        project_std: Option<f64>,
        rng: &mut Rng,
    ) -> Self {
        let hidden = channels * expand_ratio;
        let expand = Conv2d::new(ps, &format!("{name}.expand"), channels, hidden, 1, 1, 0, rng);
        let dw = DwConv2d::new(ps, &format!("{name}.dw"), hidden, 3, rng);
        let project = match project_std {
            Some(std) => Conv2d::with_std(ps, &format!("{name}.project"), hidden, channels, 1, 1, 0, rng, std),
            None => Conv2d::new(ps, &format!("{name}.project"), hidden, channels, 1, 1, 0, rng),
        };
        Self {
            expand,
            dw,
            project,
            act: Activation::Gelu,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> (Tensor, IrbCache) {
        let (h1, c1) = self.expand.forward(ps, x);
        let a1 = h1.map(|v| self.act.f(v));
        let (h2, cdw) = self.dw.forward(ps, &a1);
        let a2 = h2.map(|v| self.act.f(v));
        let (p, c3) = self.project.forward(ps, &a2);
        let y = p.add(x);
        (
            y,
            IrbCache {
                c1,
                h1,
                cdw,
                h2,
                c3,
            },
        )
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &IrbCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Tensor {
        let da2 = self.project.backward(ps, &cache.c3, dy, gs);
        let dh2 = da2.mul(&cache.h2.map(|v| self.act.df(v)));
        let da1 = self.dw.backward(ps, &cache.cdw, &dh2, gs);
        let dh1 = da1.mul(&cache.h1.map(|v| self.act.df(v)));
        let dx_path = self.expand.backward(ps, &cache.c1, &dh1, gs);
        dx_path.add(dy) // residual
    }

    pub fn zero_weights(&self, ps: &mut ParamStore) {
        for id in [self.expand.w, self.expand.b, self.dw.w, self.project.w, self.project.b] {
            ps.get_mut(id).fill(0.0);
        }
    }
}
