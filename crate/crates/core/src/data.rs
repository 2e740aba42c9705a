//! Synthetic frequency-texture segmentation dataset.
//!
//! Each image is `[3,H,W]` with an elliptical foreground region (class 1) on
//! background (class 0). Both regions carry cosine textures whose wavelengths
//! divide the analysis patch size, so patch spectra are leakage-free:
//!
//! - foreground: strong cos at (2,0) in H/W (amp 0.30), weak cos at (0,3)
//!   (amp 0.10), strong pure channel-axis cos (amp 0.55)
//! - background: medium cos at (2,0) (amp 0.18) and (0,3) (amp 0.24),
//!   faint channel-axis cos (amp 0.05)
//!
//! Viewed through the H/W spectrum alone the two sorted-magnitude curves
//! interleave (foreground wins rank 0, background wins rank 1), so the
//! single-pair view cannot order the regions. The channel-axis component is
//! invisible there (it only shifts the DC bin, equally for both regions on
//! average) but contributes four strong lines to the C/W and C/H spectra,
//! lifting the foreground's concatenated multi-pair curve above the
//! background's at every rank. `verify_separability` checks both properties
//! on the generated data and fails loudly if tuning ever breaks them.

use crate::error::{Error, Result};
use crate::io::{self, DType};
use crate::rng::Rng;
use crate::spectral::{count_crossings, signal_strength_curve, CurveMode};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// Analysis patch edge; all texture wavelengths divide it.
pub const PATCH: usize = 8;

const BASE: f64 = 0.5;
const FG_HW: [(f64, f64, f64); 2] = [(0.30, 2.0, 0.0), (0.10, 0.0, 3.0)]; // (amp, fy, fx) cycles/patch
const BG_HW: [(f64, f64, f64); 2] = [(0.18, 2.0, 0.0), (0.24, 0.0, 3.0)];
const FG_CHAN: f64 = 0.55;
const BG_CHAN: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
    pub noise_std: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_test: 50,
            height: 64,
            width: 64,
            noise_std: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,    // [3,H,W]
    pub mask: Vec<usize>, // H*W labels in {0,1}
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_fg_classes: usize,
}

fn ellipse_mask(h: usize, w: usize, rng: &mut Rng) -> Vec<usize> {
    let cy = h as f64 * (0.35 + 0.3 * rng.uniform());
    let cx = w as f64 * (0.35 + 0.3 * rng.uniform());
    let ry = h as f64 * (0.18 + 0.12 * rng.uniform());
    let rx = w as f64 * (0.18 + 0.12 * rng.uniform());
    let mut mask = vec![0usize; h * w];
    for y in 0..h {
        for x in 0..w {
            let dy = (y as f64 - cy) / ry;
            let dx = (x as f64 - cx) / rx;
            if dy * dy + dx * dx <= 1.0 {
                mask[y * w + x] = 1;
            }
        }
    }
    mask
}

fn texture(
    y: usize,
    x: usize,
    c: usize,
    hw: &[(f64, f64, f64); 2],
    chan_amp: f64,
    phases: &[f64; 3],
) -> f64 {
    let mut v = BASE;
    for (i, &(amp, fy, fx)) in hw.iter().enumerate() {
        v += amp
            * (2.0 * PI * (fy * y as f64 + fx * x as f64) / PATCH as f64 + phases[i]).cos();
    }
    v + chan_amp * (2.0 * PI * c as f64 / 3.0 + phases[2]).cos()
}

fn make_sample(h: usize, w: usize, noise_std: f64, rng: &mut Rng) -> Sample {
    let mask = ellipse_mask(h, w, rng);
    // per-sample phase jitter; exact-bin wavelengths keep magnitudes intact
    let fg_ph = [rng.uniform() * 2.0 * PI, rng.uniform() * 2.0 * PI, rng.uniform() * 2.0 * PI];
    let bg_ph = [rng.uniform() * 2.0 * PI, rng.uniform() * 2.0 * PI, rng.uniform() * 2.0 * PI];
    let mut image = Tensor::zeros(&[3, h, w]);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = if mask[y * w + x] == 1 {
                    texture(y, x, c, &FG_HW, FG_CHAN, &fg_ph)
                } else {
                    texture(y, x, c, &BG_HW, BG_CHAN, &bg_ph)
                };
                image.set3(c, y, x, v + noise_std * rng.normal());
            }
        }
    }
    Sample { image, mask }
}

pub fn generate_dataset(cfg: &DataConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    if cfg.height % PATCH != 0 || cfg.width % PATCH != 0 {
        return Err(Error::Config(format!(
            "image size must be a multiple of the {PATCH}-pixel analysis patch"
        )));
    }
    let build = |n: usize, split: u64| {
        let samples = (0..n)
            .map(|i| {
                let mut r = Rng::derive(seed, &[split, i as u64]);
                make_sample(cfg.height, cfg.width, cfg.noise_std, &mut r)
            })
            .collect();
        Dataset {
            samples,
            height: cfg.height,
            width: cfg.width,
            channels: 3,
            n_fg_classes: 1,
        }
    };
    let train = build(cfg.n_train, 0);
    let test = build(cfg.n_test, 1);
    verify_separability(&train)?;
    Ok((train, test))
}

/// Aligned `PATCH`-square blocks fully inside (label 1) and fully outside
/// (label 0) the mask, as `[3,PATCH,PATCH]` patches.
fn region_patches(sample: &Sample, h: usize, w: usize) -> (Vec<Tensor>, Vec<Tensor>) {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for by in (0..h).step_by(PATCH) {
        'block: for bx in (0..w).step_by(PATCH) {
            let first = sample.mask[by * w + bx];
            for y in by..by + PATCH {
                for x in bx..bx + PATCH {
                    if sample.mask[y * w + x] != first {
                        continue 'block;
                    }
                }
            }
            let mut patch = Tensor::zeros(&[3, PATCH, PATCH]);
            for c in 0..3 {
                for y in 0..PATCH {
                    for x in 0..PATCH {
                        patch.set3(c, y, x, sample.image.get3(c, by + y, bx + x));
                    }
                }
            }
            if first == 1 {
                fg.push(patch);
            } else {
                bg.push(patch);
            }
        }
    }
    (fg, bg)
}

/// Mean sorted-magnitude curves of foreground and background patches.
pub fn region_curves(ds: &Dataset, mode: CurveMode) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut fg_sum: Vec<f64> = Vec::new();
    let mut bg_sum: Vec<f64> = Vec::new();
    let (mut n_fg, mut n_bg) = (0usize, 0usize);
    let acc = |sum: &mut Vec<f64>, n: &mut usize, patch: &Tensor| {
        let c = signal_strength_curve(patch, mode);
        if sum.is_empty() {
            *sum = vec![0.0; c.len()];
        }
        for (s, v) in sum.iter_mut().zip(c) {
            *s += v;
        }
        *n += 1;
    };
    for s in &ds.samples {
        let (fg, bg) = region_patches(s, ds.height, ds.width);
        for p in &fg {
            acc(&mut fg_sum, &mut n_fg, p);
        }
        for p in &bg {
            acc(&mut bg_sum, &mut n_bg, p);
        }
    }
    if n_fg == 0 || n_bg == 0 {
        return Err(Error::Data(format!(
            "no fully-interior patches for some region (fg {n_fg}, bg {n_bg})"
        )));
    }
    for v in fg_sum.iter_mut() {
        *v /= n_fg as f64;
    }
    for v in bg_sum.iter_mut() {
        *v /= n_bg as f64;
    }
    Ok((fg_sum, bg_sum))
}

/// Noise floor for crossing counts: small fraction of the largest magnitude.
pub fn crossing_threshold(a: &[f64], b: &[f64]) -> f64 {
    0.02 * a[0].max(b[0])
}

/// The dataset's design contract: region curves must cross in the H/W-only
/// view and must not cross in the all-pairs view.
pub fn verify_separability(ds: &Dataset) -> Result<()> {
    let (fa, fb) = region_curves(ds, CurveMode::Single)?;
    let single = count_crossings(&fa, &fb, crossing_threshold(&fa, &fb));
    let (ma, mb) = region_curves(ds, CurveMode::Multi)?;
    let multi = count_crossings(&ma, &mb, crossing_threshold(&ma, &mb));
    if single == 0 {
        return Err(Error::Data(
            "generated textures do not cross in the single-pair spectrum".into(),
        ));
    }
    if multi != 0 {
        return Err(Error::Data(format!(
            "generated textures cross {multi}x in the all-pairs spectrum"
        )));
    }
    Ok(())
}

/// Random flips and quarter turns, applied identically to image and mask.
pub fn augment(image: &Tensor, mask: &[usize], rng: &mut Rng) -> (Tensor, Vec<usize>) {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let hflip = rng.coin();
    let vflip = rng.coin();
    let k = rng.below(4);
    let src = |mut y: usize, mut x: usize| -> (usize, usize) {
        // invert the output transform: undo rotation, then undo flips
        for _ in 0..k {
            let (ny, nx) = (x, h.max(w) - 1 - y); // square images only
            y = ny;
            x = nx;
        }
        if vflip {
            y = h - 1 - y;
        }
        if hflip {
            x = w - 1 - x;
        }
        (y, x)
    };
    assert_eq!(h, w, "augmentation assumes square images");
    let mut out_img = Tensor::zeros(&[c, h, w]);
    let mut out_mask = vec![0usize; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y, x);
            out_mask[y * w + x] = mask[sy * w + sx];
            for ch in 0..c {
                out_img.set3(ch, y, x, image.get3(ch, sy, sx));
            }
        }
    }
    (out_img, out_mask)
}

pub fn save_dataset(dir: &Path, name: &str, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut records: Vec<(&Tensor, DType)> = Vec::new();
    let mut masks = Vec::with_capacity(ds.samples.len());
    for s in &ds.samples {
        let mut m = Tensor::zeros(&[ds.height, ds.width]);
        for (d, &v) in m.data_mut().iter_mut().zip(&s.mask) {
            *d = v as f64;
        }
        masks.push(m);
    }
    for (s, m) in ds.samples.iter().zip(&masks) {
        records.push((&s.image, DType::F32));
        records.push((m, DType::F32));
    }
    let manifest = serde_json::json!({
        "kind": "mew-dataset",
        "n": ds.samples.len(),
        "height": ds.height,
        "width": ds.width,
        "channels": ds.channels,
        "n_fg_classes": ds.n_fg_classes,
    });
    io::save_container(&dir.join(format!("{name}.mewt")), &records, &manifest)
}

pub fn load_dataset(dir: &Path, name: &str) -> Result<Dataset> {
    let c = io::load_container(&dir.join(format!("{name}.mewt")))?;
    let manifest = c
        .manifest
        .ok_or_else(|| Error::Format("dataset missing manifest".into()))?;
    let n = manifest["n"].as_u64().ok_or_else(|| Error::Format("bad n".into()))? as usize;
    let height = manifest["height"].as_u64().unwrap_or(0) as usize;
    let width = manifest["width"].as_u64().unwrap_or(0) as usize;
    let channels = manifest["channels"].as_u64().unwrap_or(0) as usize;
    let n_fg_classes = manifest["n_fg_classes"].as_u64().unwrap_or(1) as usize;
    if c.tensors.len() != 2 * n {
        return Err(Error::Format(format!(
            "expected {} records, found {}",
            2 * n,
            c.tensors.len()
        )));
    }
    let mut samples = Vec::with_capacity(n);
    let mut it = c.tensors.into_iter();
    for i in 0..n {
        let image = it.next().unwrap();
        let mask_t = it.next().unwrap();
        if image.shape() != [channels, height, width] {
            return Err(Error::Format(format!("sample {i}: bad image shape")));
        }
        if mask_t.shape() != [height, width] {
            return Err(Error::Format(format!("sample {i}: bad mask shape")));
        }
        let mut mask = Vec::with_capacity(height * width);
        for &v in mask_t.data() {
            if v.fract() != 0.0 || v < 0.0 || v > n_fg_classes as f64 {
                return Err(Error::Format(format!(
                    "sample {i}: mask value {v} is not a valid label"
                )));
            }
            mask.push(v as usize);
        }
        samples.push(Sample { image, mask });
    }
    Ok(Dataset {
        samples,
        height,
        width,
        channels,
        n_fg_classes,
    })
}
