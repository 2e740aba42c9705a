//! U-shape segmentation network built from MEW blocks.
//!
//! Topology: 3x3 stem conv -> encoder stages (blocks, then stride-2 conv
//! doubling width) -> bottleneck blocks -> decoder stages (bilinear x2
//! upsample, 1x1 conv halving width, additive skip from the matching encoder
//! stage, blocks) -> 1x1 head emitting raw logits. Additive skips keep every
//! stage width at `base_width * 2^i`, which preserves the divisibility the
//! channel split and GroupNorm need.

use crate::error::{Error, Result};
use crate::io::{self, DType};
use crate::mew::{BranchMask, GeneratorMode, MewBlock, MewBlockCache, MewConfig};
use crate::nn::{
    bilinear_resize, bilinear_resize_backward, Conv2d, Conv2dCache, GradStore, ParamStore,
};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

fn d_base_width() -> usize {
    8
}
fn d_depths() -> Vec<usize> {
    vec![1, 1, 1]
}
fn d_ffn_ratio() -> usize {
    4
}
fn d_input_size() -> (usize, usize) {
    (64, 64)
}
fn d_gen_mode() -> GeneratorMode {
    GeneratorMode::Generated
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// 1 = binary (single sigmoid logit); >1 = softmax classes.
    pub n_classes: usize,
    #[serde(default = "d_base_width")]
    pub base_width: usize,
    #[serde(default = "d_depths")]
    pub stage_depths: Vec<usize>,
    #[serde(default)]
    pub branch_mask: BranchMask,
    #[serde(default = "d_gen_mode")]
    pub generator_mode: GeneratorMode,
    #[serde(default = "d_ffn_ratio")]
    pub ffn_ratio: usize,
    #[serde(default = "d_input_size")]
    pub input_size: (usize, usize),
    #[serde(default = "d_true")]
    pub dw_pointwise: bool,
    #[serde(default)]
    pub real_weights: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            n_classes: 1,
            base_width: d_base_width(),
            stage_depths: d_depths(),
            branch_mask: BranchMask::default(),
            generator_mode: d_gen_mode(),
            ffn_ratio: d_ffn_ratio(),
            input_size: d_input_size(),
            dw_pointwise: true,
            real_weights: false,
        }
    }
}

impl ModelConfig {
    pub fn stages(&self) -> usize {
        self.stage_depths.len()
    }

    pub fn stage_width(&self, i: usize) -> usize {
        self.base_width << i
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_depths.len() < 2 {
            return Err(Error::Config("need at least 2 stages".into()));
        }
        if self.in_channels == 0 || self.n_classes == 0 {
            return Err(Error::Config("in_channels and n_classes must be >= 1".into()));
        }
        for i in 0..self.stages() {
            let w = self.stage_width(i);
            if w % 4 != 0 {
                return Err(Error::Config(format!(
                    "stage {i} width {w} not divisible by 4"
                )));
            }
        }
        let div = 1 << (self.stages() - 1);
        if self.input_size.0 % div != 0 || self.input_size.1 % div != 0 {
            return Err(Error::Config(format!(
                "input size {:?} not divisible by 2^(stages-1) = {div}",
                self.input_size
            )));
        }
        Ok(())
    }

    fn mew_config(&self) -> MewConfig {
        MewConfig {
            ffn_ratio: self.ffn_ratio,
            groups: 4,
            mask: self.branch_mask,
            generator_mode: self.generator_mode,
            dw_pointwise: self.dw_pointwise,
            real_weights: self.real_weights,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub ps: ParamStore,
    stem: Conv2d,
    enc: Vec<Vec<MewBlock>>, // one entry per stage; last stage is the bottleneck
    down: Vec<Conv2d>,
    up: Vec<Conv2d>, // decoder 1x1 convs, index i maps stage i+1 width to stage i
    dec: Vec<Vec<MewBlock>>,
    head: Conv2d,
}

pub struct ModelCache {
    stem: Conv2dCache,
    enc: Vec<Vec<MewBlockCache>>,
    down: Vec<Conv2dCache>,
    up: Vec<Conv2dCache>,
    dec: Vec<Vec<MewBlockCache>>,
    head: Conv2dCache,
}

impl Model {
    pub fn build(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new();
        let s = config.stages();
        let (ih, iw) = config.input_size;
        let mcfg = config.mew_config();
        let stem = Conv2d::new(&mut ps, "stem", config.in_channels, config.base_width, 3, 1, 1, rng);
        let mut enc = Vec::new();
        let mut down = Vec::new();
        for i in 0..s {
            let w = config.stage_width(i);
            let spatial = (ih >> i, iw >> i);
            let blocks = (0..config.stage_depths[i])
                .map(|d| MewBlock::new(&mut ps, &format!("enc{i}.block{d}"), w, spatial, &mcfg, rng))
                .collect();
            enc.push(blocks);
            if i + 1 < s {
                down.push(Conv2d::new(
                    &mut ps,
                    &format!("down{i}"),
                    w,
                    config.stage_width(i + 1),
                    3,
                    2,
                    1,
                    rng,
                ));
            }
        }
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for i in (0..s - 1).rev() {
            let w = config.stage_width(i);
            let spatial = (ih >> i, iw >> i);
            up.push(Conv2d::new(
                &mut ps,
                &format!("up{i}"),
                config.stage_width(i + 1),
                w,
                1,
                1,
                0,
                rng,
            ));
            let blocks = (0..config.stage_depths[i])
                .map(|d| MewBlock::new(&mut ps, &format!("dec{i}.block{d}"), w, spatial, &mcfg, rng))
                .collect();
            dec.push(blocks);
        }
        let head = Conv2d::new(&mut ps, "head", config.base_width, config.n_classes, 1, 1, 0, rng);
        Ok(Self {
            config,
            ps,
            stem,
            enc,
            down,
            up,
            dec,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.ps.total_scalars()
    }

    /// Forward one `[Cin,H,W]` sample to `[n_classes,H,W]` logits.
    pub fn forward(&self, x: &Tensor) -> (Tensor, ModelCache) {
        let s = self.config.stages();
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let div = 1 << (s - 1);
        assert!(
            h % div == 0 && w % div == 0,
            "spatial dims {h}x{w} not divisible by {div}"
        );
        let (mut cur, stem_c) = self.stem.forward(&self.ps, x);
        let mut enc_c = Vec::with_capacity(s);
        let mut down_c = Vec::new();
        let mut skips: Vec<Tensor> = Vec::new();
        for i in 0..s {
            if i > 0 {
                let (y, c) = self.down[i - 1].forward(&self.ps, &cur);
                down_c.push(c);
                cur = y;
            }
            let mut stage_c = Vec::new();
            for block in &self.enc[i] {
                let (y, c) = block.forward(&self.ps, &cur);
                stage_c.push(c);
                cur = y;
            }
            enc_c.push(stage_c);
            if i + 1 < s {
                skips.push(cur.clone());
            }
        }
        let mut up_c = Vec::new();
        let mut dec_c = Vec::new();
        for (j, i) in (0..s - 1).rev().enumerate() {
            let (th, tw) = (h >> i, w >> i);
            let upsampled = bilinear_resize(&cur, th, tw);
            let (y, c) = self.up[j].forward(&self.ps, &upsampled);
            up_c.push(c);
            cur = y.add(&skips[i]);
            let mut stage_c = Vec::new();
            for block in &self.dec[j] {
                let (y, c) = block.forward(&self.ps, &cur);
                stage_c.push(c);
                cur = y;
            }
            dec_c.push(stage_c);
        }
        let (logits, head_c) = self.head.forward(&self.ps, &cur);
        (
            logits,
            ModelCache {
                stem: stem_c,
                enc: enc_c,
                down: down_c,
                up: up_c,
                dec: dec_c,
                head: head_c,
            },
        )
    }

    pub fn backward(&self, cache: &ModelCache, dlogits: &Tensor, gs: &mut GradStore) -> Tensor {
        let s = self.config.stages();
        let mut cur = self.head.backward(&self.ps, &cache.head, dlogits, gs);
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; s - 1];
        for (j, i) in (0..s - 1).rev().enumerate().collect::<Vec<_>>().into_iter().rev() {
            for (block, c) in self.dec[j].iter().zip(&cache.dec[j]).rev() {
                cur = block.backward(&self.ps, c, &cur, gs);
            }
            // additive skip: gradient flows to both the skip and the up conv
            skip_grads[i] = Some(cur.clone());
            let dup = self.up[j].backward(&self.ps, &cache.up[j], &cur, gs);
            // upsample source was exactly half the target extent
            cur = bilinear_resize_backward(&dup, dup.shape()[1] / 2, dup.shape()[2] / 2);
        }
        for i in (0..s).rev() {
            for (block, c) in self.enc[i].iter().zip(&cache.enc[i]).rev() {
                cur = block.backward(&self.ps, c, &cur, gs);
            }
            if i > 0 {
                cur = self.down[i - 1].backward(&self.ps, &cache.down[i - 1], &cur, gs);
                if let Some(g) = &skip_grads[i - 1] {
                    cur.add_assign(g);
                }
            }
        }
        self.stem.backward(&self.ps, &cache.stem, &cur, gs)
    }

    /// Per-item forwards, parallel over the batch.
    pub fn forward_batch(&self, xs: &[Tensor]) -> Vec<Tensor> {
        use rayon::prelude::*;
        xs.par_iter().map(|x| self.forward(x).0).collect()
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        self.save_with_tensors(path, &[], extra)
    }

    /// Save parameters plus named auxiliary tensors (optimizer state).
    pub fn save_with_tensors(
        &self,
        path: &Path,
        aux: &[(String, &Tensor)],
        extra: serde_json::Value,
    ) -> Result<()> {
        let mut records: Vec<(&Tensor, DType)> = Vec::new();
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        for (name, t) in self.ps.iter() {
            records.push((t, DType::F64));
            names.push(name.to_string());
            shapes.push(t.shape().to_vec());
        }
        for (name, t) in aux {
            records.push((t, DType::F64));
            names.push(format!("aux.{name}"));
            shapes.push(t.shape().to_vec());
        }
        let manifest = serde_json::json!({
            "kind": "mew-unet-checkpoint",
            "config": self.config,
            "records": names,
            "shapes": shapes,
            "extra": extra,
        });
        io::save_container(path, &records, &manifest)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<(String, Tensor)>, serde_json::Value)> {
        let c = io::load_container(path)?;
        let manifest = c
            .manifest
            .ok_or_else(|| Error::Format("checkpoint missing manifest".into()))?;
        let config: ModelConfig = serde_json::from_value(manifest["config"].clone())?;
        let names: Vec<String> = serde_json::from_value(manifest["records"].clone())?;
        if names.len() != c.tensors.len() {
            return Err(Error::Format(format!(
                "manifest lists {} records but file has {}",
                names.len(),
                c.tensors.len()
            )));
        }
        // parameter initialization is overwritten below; seed is irrelevant
        let mut rng = Rng::seed_from_u64(0);
        let mut model = Model::build(config, &mut rng)?;
        let mut aux = Vec::new();
        let mut loaded = vec![false; model.ps.len()];
        for (name, tensor) in names.iter().zip(c.tensors) {
            if let Some(stripped) = name.strip_prefix("aux.") {
                aux.push((stripped.to_string(), tensor));
                continue;
            }
            let id = model
                .ps
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {name} in checkpoint")))?;
            let dst = model.ps.get_mut(crate::nn::ParamId(id));
            if dst.shape() != tensor.shape() {
                return Err(Error::Format(format!(
                    "shape mismatch for {name}: model {:?} vs checkpoint {:?}",
                    dst.shape(),
                    tensor.shape()
                )));
            }
            *dst = tensor;
            loaded[id] = true;
        }
        if let Some(missing) = loaded.iter().position(|&l| !l) {
            return Err(Error::Format(format!(
                "checkpoint missing parameter {}",
                model.ps.name(crate::nn::ParamId(missing))
            )));
        }
        let extra = manifest.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok((model, aux, extra))
    }

    /// Load and reject checkpoints whose config differs from `expected`.
    pub fn load_with_config(
        path: &Path,
        expected: &ModelConfig,
    ) -> Result<(Self, Vec<(String, Tensor)>, serde_json::Value)> {
        let (model, aux, extra) = Self::load(path)?;
        if &model.config != expected {
            let got = serde_json::to_string(&model.config)?;
            let want = serde_json::to_string(expected)?;
            return Err(Error::Config(format!(
                "checkpoint config mismatch:\n  checkpoint: {got}\n  expected:   {want}"
            )));
        }
        Ok((model, aux, extra))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            in_channels: 1,
            n_classes: 2,
            base_width: 8,
            stage_depths: vec![1, 1],
            input_size: (8, 8),
            ..Default::default()
        }
    }

    #[test]
    fn build_deterministic() {
        let mut r1 = Rng::seed_from_u64(3);
        let mut r2 = Rng::seed_from_u64(3);
        let a = Model::build(tiny_config(), &mut r1).unwrap();
        let b = Model::build(tiny_config(), &mut r2).unwrap();
        for ((_, ta), (_, tb)) in a.ps.iter().zip(b.ps.iter()) {
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn invalid_width_rejected() {
        let cfg = ModelConfig {
            base_width: 6,
            ..tiny_config()
        };
        assert!(matches!(
            Model::build(cfg, &mut Rng::seed_from_u64(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn too_few_stages_rejected() {
        let cfg = ModelConfig {
            stage_depths: vec![1],
            ..tiny_config()
        };
        assert!(Model::build(cfg, &mut Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn forward_shape_contract() {
        let cfg = ModelConfig {
            in_channels: 3,
            n_classes: 2,
            stage_depths: vec![1, 1, 1],
            input_size: (64, 64),
            ..Default::default()
        };
        let model = Model::build(cfg, &mut Rng::seed_from_u64(1)).unwrap();
        let mut r = Rng::seed_from_u64(2);
        let x = Tensor::randn(&[3, 64, 64], &mut r, 0.0, 1.0);
        let (y, _) = model.forward(&x);
        assert_eq!(y.shape(), &[2, 64, 64]);
    }

    #[test]
    fn zero_head_gives_bias() {
        let model = {
            let mut m = Model::build(tiny_config(), &mut Rng::seed_from_u64(1)).unwrap();
            m.ps.get_mut(m.head.w).fill(0.0);
            m.ps.get_mut(m.head.b).data_mut().copy_from_slice(&[0.5, -0.5]);
            m
        };
        let mut r = Rng::seed_from_u64(2);
        let x = Tensor::randn(&[1, 8, 8], &mut r, 0.0, 1.0);
        let (y, _) = model.forward(&x);
        for h in 0..8 {
            for w in 0..8 {
                assert_eq!(y.get3(0, h, w), 0.5);
                assert_eq!(y.get3(1, h, w), -0.5);
            }
        }
    }

    #[test]
    fn width_does_not_change_output_shape() {
        for bw in [8, 16] {
            let cfg = ModelConfig {
                base_width: bw,
                ..tiny_config()
            };
            let model = Model::build(cfg, &mut Rng::seed_from_u64(1)).unwrap();
            let mut r = Rng::seed_from_u64(2);
            let x = Tensor::randn(&[1, 8, 8], &mut r, 0.0, 1.0);
            let (y, _) = model.forward(&x);
            assert_eq!(y.shape(), &[2, 8, 8]);
        }
    }

    #[test]
    fn save_load_roundtrip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.mewt");
        let model = Model::build(tiny_config(), &mut Rng::seed_from_u64(9)).unwrap();
        let mut r = Rng::seed_from_u64(10);
        let x = Tensor::randn(&[1, 8, 8], &mut r, 0.0, 1.0);
        let (y0, _) = model.forward(&x);
        model.save(&path, serde_json::json!({"epoch": 3})).unwrap();
        let (loaded, aux, extra) = Model::load(&path).unwrap();
        assert!(aux.is_empty());
        assert_eq!(extra["epoch"], 3);
        let (y1, _) = loaded.forward(&x);
        assert_eq!(y0, y1);
    }

    #[test]
    fn load_mismatched_config_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.mewt");
        let model = Model::build(tiny_config(), &mut Rng::seed_from_u64(9)).unwrap();
        model.save(&path, serde_json::Value::Null).unwrap();
        let other = ModelConfig {
            base_width: 16,
            ..tiny_config()
        };
        let err = Model::load_with_config(&path, &other).unwrap_err();
        assert!(err.to_string().contains("config mismatch"));
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.mewt");
        let model = Model::build(tiny_config(), &mut Rng::seed_from_u64(9)).unwrap();
        model.save(&path, serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(Model::load(&path).is_err());
    }

    #[test]
    fn logits_finite_on_random_probes() {
        let model = Model::build(tiny_config(), &mut Rng::seed_from_u64(4)).unwrap();
        let mut r = Rng::seed_from_u64(5);
        for _ in 0..25 {
            let x = Tensor::randn(&[1, 8, 8], &mut r, 0.0, 2.0);
            let (y, _) = model.forward(&x);
            assert!(y.all_finite());
        }
    }
}
