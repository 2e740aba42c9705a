//! Losses, optimizers, LR schedule, and the training loop.

use crate::data::{augment, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, logits_to_labels, MetricReport};
use crate::model::Model;
use crate::nn::{GradStore, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{pairwise_sum, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Combined BCE + soft-Dice loss on `[1,H,W]` logits against 0/1 labels.
/// Returns the scalar loss and the gradient w.r.t. the logits.
/// `wb`, `wd` weight the two terms (both 1 by default elsewhere).
pub fn bce_dice_binary(logits: &Tensor, mask: &[usize], wb: f64, wd: f64) -> (f64, Tensor) {
    assert_eq!(logits.shape()[0], 1);
    let n = logits.len();
    assert_eq!(mask.len(), n);
    let z = logits.data();
    let mut p = vec![0.0; n];
    let mut bce_terms = vec![0.0; n];
    for i in 0..n {
        let g = mask[i] as f64;
        p[i] = sigmoid(z[i]);
        // stable form: max(z,0) - z*g + ln(1 + e^{-|z|})
        bce_terms[i] = z[i].max(0.0) - z[i] * g + (-z[i].abs()).exp().ln_1p();
    }
    let bce = pairwise_sum(&bce_terms) / n as f64;
    let sum_pg = pairwise_sum(
        &p.iter()
            .zip(mask)
            .map(|(&pi, &g)| pi * g as f64)
            .collect::<Vec<_>>(),
    );
    let sum_p = pairwise_sum(&p);
    let sum_g = mask.iter().map(|&g| g as f64).sum::<f64>();
    let num = 2.0 * sum_pg + 1.0;
    let den = sum_p + sum_g + 1.0;
    let dice_loss = 1.0 - num / den;
    let loss = wb * bce + wd * dice_loss;
    let mut grad = Tensor::zeros(logits.shape());
    for i in 0..n {
        let g = mask[i] as f64;
        let dbce = (p[i] - g) / n as f64;
        // quotient rule on num/den, then sigmoid' = p(1-p)
        let ddice_dp = -(2.0 * g * den - num) / (den * den);
        grad.data_mut()[i] = wb * dbce + wd * ddice_dp * p[i] * (1.0 - p[i]);
    }
    (loss, grad)
}

/// Softmax cross-entropy + mean per-class soft Dice on `[C,H,W]` logits.
pub fn ce_dice_multiclass(logits: &Tensor, mask: &[usize], wb: f64, wd: f64) -> (f64, Tensor) {
    let (c, h, w) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    let n = h * w;
    assert!(c >= 2);
    assert_eq!(mask.len(), n);
    let mut probs = vec![0.0; c * n];
    let mut ce_terms = vec![0.0; n];
    for i in 0..n {
        let mut mx = f64::NEG_INFINITY;
        for ch in 0..c {
            mx = mx.max(logits.data()[ch * n + i]);
        }
        let mut denom = 0.0;
        for ch in 0..c {
            let e = (logits.data()[ch * n + i] - mx).exp();
            probs[ch * n + i] = e;
            denom += e;
        }
        for ch in 0..c {
            probs[ch * n + i] /= denom;
        }
        ce_terms[i] = -probs[mask[i] * n + i].ln();
    }
    let ce = pairwise_sum(&ce_terms) / n as f64;
    // per-class soft dice
    let mut dice = 0.0;
    let mut ddice_dp = vec![0.0; c * n]; // gradient of mean dice loss w.r.t. probs
    for ch in 0..c {
        let mut sum_pg = 0.0;
        let mut sum_p = 0.0;
        let mut sum_g = 0.0;
        for i in 0..n {
            let g = (mask[i] == ch) as usize as f64;
            sum_pg += probs[ch * n + i] * g;
            sum_p += probs[ch * n + i];
            sum_g += g;
        }
        let num = 2.0 * sum_pg + 1.0;
        let den = sum_p + sum_g + 1.0;
        dice += 1.0 - num / den;
        for i in 0..n {
            let g = (mask[i] == ch) as usize as f64;
            ddice_dp[ch * n + i] = -(2.0 * g * den - num) / (den * den) / c as f64;
        }
    }
    dice /= c as f64;
    let loss = wb * ce + wd * dice;
    let mut grad = Tensor::zeros(logits.shape());
    for i in 0..n {
        for ch in 0..c {
            let g = (mask[i] == ch) as usize as f64;
            let dce = (probs[ch * n + i] - g) / n as f64;
            // softmax jacobian applied to the dice term
            let mut dd = 0.0;
            for k in 0..c {
                let jac = probs[k * n + i]
                    * (((k == ch) as usize as f64) - probs[ch * n + i]);
                dd += ddice_dp[k * n + i] * jac;
            }
            grad.data_mut()[ch * n + i] = wb * dce + wd * dd;
        }
    }
    (loss, grad)
}

/// Dispatch on channel count: 1 logit = binary, else multiclass.
pub fn seg_loss(logits: &Tensor, mask: &[usize], wb: f64, wd: f64) -> (f64, Tensor) {
    if logits.shape()[0] == 1 {
        bce_dice_binary(logits, mask, wb, wd)
    } else {
        ce_dice_multiclass(logits, mask, wb, wd)
    }
}

/// Cosine annealing from `lr_init` at t=0 to `eta_min` at `t_max`.
pub fn cosine_annealing_lr(t: usize, t_max: usize, lr_init: f64, eta_min: f64) -> Result<f64> {
    if t > t_max || t_max == 0 {
        return Err(Error::Config(format!(
            "cosine schedule step {t} out of range 0..={t_max}"
        )));
    }
    let cosine = (std::f64::consts::PI * t as f64 / t_max as f64).cos();
    Ok(eta_min + 0.5 * (lr_init - eta_min) * (1.0 + cosine))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW,
    Sgd,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub t: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, ps: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = (0..ps.len())
            .map(|i| Tensor::zeros(ps.get(ParamId(i)).shape()))
            .collect();
        Self {
            kind,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, ps: &mut ParamStore, gs: &GradStore, lr: f64) {
        self.t += 1;
        match self.kind {
            OptimizerKind::AdamW => {
                let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                for i in 0..ps.len() {
                    let g = gs.get(ParamId(i)).data();
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    let p = ps.get_mut(ParamId(i)).data_mut();
                    for j in 0..p.len() {
                        // decoupled weight decay, then Adam update
                        p[j] -= lr * self.weight_decay * p[j];
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
            OptimizerKind::Sgd => {
                for i in 0..ps.len() {
                    let g = gs.get(ParamId(i)).data();
                    let buf = self.m[i].data_mut();
                    let p = ps.get_mut(ParamId(i)).data_mut();
                    for j in 0..p.len() {
                        let wd_g = g[j] + self.weight_decay * p[j];
                        buf[j] = self.momentum * buf[j] + wd_g;
                        p[j] -= lr * buf[j];
                    }
                }
            }
        }
    }

    /// Named state tensors for checkpointing, keyed by parameter name.
    pub fn state_tensors<'a>(&'a self, ps: &'a ParamStore) -> Vec<(String, &'a Tensor)> {
        let mut out = Vec::new();
        for i in 0..ps.len() {
            out.push((format!("opt.m.{}", ps.name(ParamId(i))), &self.m[i]));
        }
        if self.kind == OptimizerKind::AdamW {
            for i in 0..ps.len() {
                out.push((format!("opt.v.{}", ps.name(ParamId(i))), &self.v[i]));
            }
        }
        out
    }

    pub fn restore_state(&mut self, ps: &ParamStore, aux: &[(String, Tensor)], t: usize) -> Result<()> {
        self.t = t;
        for (name, tensor) in aux {
            let (slot, pname) = if let Some(p) = name.strip_prefix("opt.m.") {
                (0, p)
            } else if let Some(p) = name.strip_prefix("opt.v.") {
                (1, p)
            } else {
                continue;
            };
            let i = (0..ps.len())
                .find(|&i| ps.name(ParamId(i)) == pname)
                .ok_or_else(|| Error::Format(format!("optimizer state for unknown param {pname}")))?;
            let dst = if slot == 0 { &mut self.m[i] } else { &mut self.v[i] };
            if dst.shape() != tensor.shape() {
                return Err(Error::Format(format!("optimizer state shape mismatch for {pname}")));
            }
            *dst = tensor.clone();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub eta_min: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub bce_weight: f64,
    pub dice_weight: f64,
    pub augment: bool,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 8,
            lr: 1e-3,
            eta_min: 1e-5,
            weight_decay: 1e-2,
            optimizer: OptimizerKind::AdamW,
            bce_weight: 1.0,
            dice_weight: 1.0,
            augment: true,
            eval_every: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval: Option<MetricReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub history: Vec<EpochRow>,
    pub best_dsc: f64,
    pub best_epoch: usize,
    pub final_eval: MetricReport,
}

fn csv_row(row: &EpochRow) -> String {
    let m = |f: fn(&MetricReport) -> f64| {
        row.eval
            .as_ref()
            .map(|e| format!("{:.6}", f(e)))
            .unwrap_or_default()
    };
    format!(
        "{},{:.8},{:.8},{},{},{},{},{},{}\n",
        row.epoch,
        row.lr,
        row.train_loss,
        m(|e| e.mean_iou),
        m(|e| e.mean_dsc),
        m(|e| e.mean_accuracy),
        m(|e| e.mean_sensitivity),
        m(|e| e.mean_specificity),
        m(|e| e.mean_hd95),
    )
}

pub fn evaluate_model(model: &Model, ds: &Dataset) -> MetricReport {
    let preds: Vec<Vec<usize>> = ds
        .samples
        .par_iter()
        .map(|s| logits_to_labels(&model.forward(&s.image).0))
        .collect();
    let truths: Vec<Vec<usize>> = ds.samples.iter().map(|s| s.mask.clone()).collect();
    evaluate(&preds, &truths, ds.height, ds.width, ds.n_fg_classes)
}

/// Full training loop. Writes `metrics.csv` (and checkpoints) under
/// `out_dir` when given. Deterministic for a fixed config and seed.
pub fn train(
    model: &mut Model,
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    let mut opt = Optimizer::new(cfg.optimizer, cfg.weight_decay, &model.ps);
    let n = train_ds.samples.len();
    if n == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    let mut csv: Option<std::fs::File> = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::fs::File::create(dir.join("metrics.csv"))?;
            f.write_all(b"epoch,lr,train_loss,miou,dsc,accuracy,sensitivity,specificity,hd95\n")?;
            Some(f)
        }
        None => None,
    };
    let mut history = Vec::new();
    let mut best_dsc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    for epoch in 0..cfg.epochs {
        let lr = cosine_annealing_lr(epoch, cfg.epochs, cfg.lr, cfg.eta_min)?;
        let order = Rng::derive(cfg.seed, &[0xe90c, epoch as u64]).permutation(n);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            // per-sample rng streams make the parallel loop order-independent
            let results: Vec<(f64, GradStore)> = chunk
                .par_iter()
                .map(|&idx| {
                    let s = &train_ds.samples[idx];
                    let (x, m) = if cfg.augment {
                        let mut r = Rng::derive(cfg.seed, &[0xa06, epoch as u64, idx as u64]);
                        augment(&s.image, &s.mask, &mut r)
                    } else {
                        (s.image.clone(), s.mask.clone())
                    };
                    let (logits, cache) = model.forward(&x);
                    let (loss, dlogits) =
                        seg_loss(&logits, &m, cfg.bce_weight, cfg.dice_weight);
                    let mut gs = GradStore::zeros_like(&model.ps);
                    model.backward(&cache, &dlogits, &mut gs);
                    (loss, gs)
                })
                .collect();
            let mut gs = GradStore::zeros_like(&model.ps);
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                gs.merge(g);
            }
            batch_loss /= chunk.len() as f64;
            gs.scale(1.0 / chunk.len() as f64);
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {batch_loss} at epoch {epoch}"
                )));
            }
            opt.step(&mut model.ps, &gs, lr);
            loss_sum += batch_loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let do_eval = (epoch + 1) % cfg.eval_every.max(1) == 0 || epoch + 1 == cfg.epochs;
        let eval = if do_eval {
            let report = evaluate_model(model, test_ds);
            if report.mean_dsc > best_dsc {
                best_dsc = report.mean_dsc;
                best_epoch = epoch;
                if let Some(dir) = out_dir {
                    let aux = opt.state_tensors(&model.ps);
                    model.save_with_tensors(
                        &dir.join("best.mewt"),
                        &aux,
                        serde_json::json!({"epoch": epoch, "dsc": report.mean_dsc, "opt_t": opt.t}),
                    )?;
                }
            }
            Some(report)
        } else {
            None
        };
        let row = EpochRow {
            epoch,
            lr,
            train_loss,
            eval,
        };
        if let Some(f) = csv.as_mut() {
            f.write_all(csv_row(&row).as_bytes())?;
        }
        history.push(row);
    }
    let final_eval = evaluate_model(model, test_ds);
    if let Some(dir) = out_dir {
        let aux = opt.state_tensors(&model.ps);
        model.save_with_tensors(
            &dir.join("last.mewt"),
            &aux,
            serde_json::json!({"epoch": cfg.epochs - 1, "opt_t": opt.t}),
        )?;
    }
    Ok(TrainReport {
        history,
        best_dsc,
        best_epoch,
        final_eval,
    })
}
