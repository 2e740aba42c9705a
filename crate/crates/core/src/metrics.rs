//! Segmentation metrics: overlap rates from confusion counts plus the 95th
//! percentile Hausdorff distance (HD95) computed with an exact Euclidean
//! distance transform.

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fnn: u64,
    pub tn: u64,
}

impl Confusion {
    /// Counts for one class: `pred`/`truth` hold class labels per pixel.
    pub fn from_labels(pred: &[usize], truth: &[usize], class: usize) -> Self {
        assert_eq!(pred.len(), truth.len());
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == class, t == class) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fnn += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// Empty-vs-empty convention: perfect agreement on an absent class
    /// scores 1, not 0/0.
    pub fn iou(&self) -> f64 {
        let denom = self.tp + self.fp + self.fnn;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn dsc(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fnn;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.tp + self.fp + self.fnn + self.tn;
        assert!(total > 0);
        (self.tp + self.tn) as f64 / total as f64
    }

    pub fn sensitivity(&self) -> f64 {
        let denom = self.tp + self.fnn;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn specificity(&self) -> f64 {
        let denom = self.tn + self.fp;
        if denom == 0 {
            1.0
        } else {
            self.tn as f64 / denom as f64
        }
    }
}

/// Exact 1D squared distance transform (Felzenszwalb & Huttenlocher).
/// `f` holds squared distances (f64::INFINITY for "no site").
fn dt1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            if f[p].is_infinite() {
                // first finite parabola
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                assert!(k > 0);
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        d[q] = if f[p].is_infinite() {
            f64::INFINITY
        } else {
            let dq = q as f64 - p as f64;
            dq * dq + f[p]
        };
    }
    d
}

/// Exact squared Euclidean distance to the nearest `true` cell, per cell.
pub fn distance_transform_sq(mask: &[bool], h: usize, w: usize) -> Vec<f64> {
    assert_eq!(mask.len(), h * w);
    let mut d = vec![f64::INFINITY; h * w];
    for (i, &m) in mask.iter().enumerate() {
        if m {
            d[i] = 0.0;
        }
    }
    // columns first, then rows
    let mut col = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = d[y * w + x];
        }
        let out = dt1d(&col);
        for y in 0..h {
            d[y * w + x] = out[y];
        }
    }
    let mut row = vec![0.0; w];
    for y in 0..h {
        row.copy_from_slice(&d[y * w..(y + 1) * w]);
        let out = dt1d(&row);
        d[y * w..(y + 1) * w].copy_from_slice(&out);
    }
    d
}

fn percentile_95(sorted: &[f64]) -> f64 {
    assert!(!sorted.is_empty());
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    // linear interpolation at rank 0.95*(m-1)
    let pos = 0.95 * (m - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Symmetric 95th-percentile Hausdorff distance between binary masks.
/// Both empty -> 0. Exactly one empty -> +INFINITY (callers exclude these
/// from aggregates and report the count separately).
pub fn hd95(pred: &[bool], truth: &[bool], h: usize, w: usize) -> f64 {
    let np = pred.iter().filter(|&&b| b).count();
    let nt = truth.iter().filter(|&&b| b).count();
    if np == 0 && nt == 0 {
        return 0.0;
    }
    if np == 0 || nt == 0 {
        return f64::INFINITY;
    }
    let dp = distance_transform_sq(pred, h, w);
    let dt = distance_transform_sq(truth, h, w);
    let mut to_truth: Vec<f64> = pred
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| dt[i].sqrt())
        .collect();
    let mut to_pred: Vec<f64> = truth
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| dp[i].sqrt())
        .collect();
    to_truth.sort_by(|a, b| a.partial_cmp(b).unwrap());
    to_pred.sort_by(|a, b| a.partial_cmp(b).unwrap());
    percentile_95(&to_truth).max(percentile_95(&to_pred))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub iou: f64,
    pub dsc: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Mean HD95 over samples where it is finite; NaN when none are.
    pub hd95: f64,
    pub hd95_undefined: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    pub mean_iou: f64,
    pub mean_dsc: f64,
    pub mean_accuracy: f64,
    pub mean_sensitivity: f64,
    pub mean_specificity: f64,
    pub mean_hd95: f64,
}

/// Argmax labels from `[C,H,W]` logits; C==1 means sigmoid threshold at 0.
pub fn logits_to_labels(logits: &Tensor) -> Vec<usize> {
    let (c, h, w) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    let mut labels = vec![0usize; h * w];
    if c == 1 {
        for (i, l) in labels.iter_mut().enumerate() {
            *l = (logits.data()[i] > 0.0) as usize;
        }
        return labels;
    }
    for y in 0..h {
        for x in 0..w {
            let mut best = 0;
            let mut best_v = logits.get3(0, y, x);
            for ch in 1..c {
                let v = logits.get3(ch, y, x);
                if v > best_v {
                    best_v = v;
                    best = ch;
                }
            }
            labels[y * w + x] = best;
        }
    }
    labels
}

/// Evaluate predictions vs ground truth over a set of samples.
/// `n_fg_classes` counts foreground classes; class labels run 1..=n_fg_classes
/// with 0 = background (binary case: n_fg_classes = 1, labels in {0,1}).
pub fn evaluate(
    preds: &[Vec<usize>],
    truths: &[Vec<usize>],
    h: usize,
    w: usize,
    n_fg_classes: usize,
) -> MetricReport {
    assert_eq!(preds.len(), truths.len());
    assert!(!preds.is_empty());
    let mut per_class = Vec::new();
    for class in 1..=n_fg_classes {
        let mut conf = Confusion::default();
        let mut hds = Vec::new();
        let mut undefined = 0usize;
        for (p, t) in preds.iter().zip(truths) {
            let c = Confusion::from_labels(p, t, class);
            conf.tp += c.tp;
            conf.fp += c.fp;
            conf.fnn += c.fnn;
            conf.tn += c.tn;
            let pm: Vec<bool> = p.iter().map(|&v| v == class).collect();
            let tm: Vec<bool> = t.iter().map(|&v| v == class).collect();
            let d = hd95(&pm, &tm, h, w);
            if d.is_finite() {
                hds.push(d);
            } else {
                undefined += 1;
            }
        }
        let hd = if hds.is_empty() {
            f64::NAN
        } else {
            hds.iter().sum::<f64>() / hds.len() as f64
        };
        per_class.push(ClassMetrics {
            class,
            iou: conf.iou(),
            dsc: conf.dsc(),
            accuracy: conf.accuracy(),
            sensitivity: conf.sensitivity(),
            specificity: conf.specificity(),
            hd95: hd,
            hd95_undefined: undefined,
        });
    }
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    let finite_hd: Vec<f64> = per_class.iter().map(|c| c.hd95).filter(|v| v.is_finite()).collect();
    MetricReport {
        mean_iou: mean(|c| c.iou),
        mean_dsc: mean(|c| c.dsc),
        mean_accuracy: mean(|c| c.accuracy),
        mean_sensitivity: mean(|c| c.sensitivity),
        mean_specificity: mean(|c| c.specificity),
        mean_hd95: if finite_hd.is_empty() {
            f64::NAN
        } else {
            finite_hd.iter().sum::<f64>() / finite_hd.len() as f64
        },
        per_class,
    }
}
