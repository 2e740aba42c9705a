//! End-to-end acceptance gate. One sequential test walks every criterion in
//! order and prints a PASS/FAIL line per criterion; timing runs sequentially
//! on purpose so the per-criterion wall-clock limits are meaningful on a
//! single core.

use mew_core::data::{self, DataConfig};
use mew_core::metrics::hd95;
use mew_core::mew::{GeneratorMode, MewConfig, MewLayer};
use mew_core::model::{Model, ModelConfig};
use mew_core::nn::{GradStore, ParamId, ParamStore};
use mew_core::rng::Rng;
use mew_core::spectral::{count_crossings, irdft2, rdft2, AxisPair, CurveMode};
use mew_core::tensor::Tensor;
use mew_core::train::{self, Optimizer, OptimizerKind, TrainConfig};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    limit: Duration,
}

fn check(
    results: &mut Vec<Outcome>,
    name: &'static str,
    limit_secs: u64,
    f: impl FnOnce() -> (bool, String),
) {
    let t0 = Instant::now();
    let (ok, detail) = f();
    let elapsed = t0.elapsed();
    let limit = Duration::from_secs(limit_secs);
    let passed = ok && elapsed <= limit;
    println!(
        "{} criterion: {name} ({:.1}s of {}s budget) {detail}",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit_secs,
    );
    results.push(Outcome {
        name,
        passed,
        detail,
        elapsed,
        limit,
    });
}

fn naive_rdft2_bin(x: &Tensor, pair: AxisPair, u: usize, k1: usize, k2: usize) -> Complex64 {
    let dims = x.shape();
    let perm = pair.to_last();
    let (u_ax, a1, a2) = (perm[0], perm[1], perm[2]);
    let (n1, n2) = (dims[a1], dims[a2]);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut idx = [0usize; 3];
    for j1 in 0..n1 {
        for j2 in 0..n2 {
            idx[u_ax] = u;
            idx[a1] = j1;
            idx[a2] = j2;
            let ang = -2.0 * PI
                * (k1 as f64 * j1 as f64 / n1 as f64 + k2 as f64 * j2 as f64 / n2 as f64);
            acc += x.get3(idx[0], idx[1], idx[2]) * Complex64::from_polar(1.0, ang);
        }
    }
    acc
}

fn spectral_correctness() -> (bool, String) {
    let mut rng = Rng::seed_from_u64(1);
    for shape in [[2, 4, 4], [4, 8, 8], [3, 5, 7], [2, 6, 3]] {
        let x = Tensor::randn(&shape, &mut rng, 0.0, 1.0);
        for pair in AxisPair::ALL {
            let s = rdft2(&x, pair);
            // naive DFT equivalence on every stored bin
            let sp = s.permute3(pair.to_last());
            let (nu, n1, h2) = (sp.shape()[0], sp.shape()[1], sp.shape()[2]);
            let scale = sp.data().iter().map(|c| c.norm()).fold(1.0, f64::max);
            for u in 0..nu {
                for k1 in 0..n1 {
                    for k2 in 0..h2 {
                        let naive = naive_rdft2_bin(&x, pair, u, k1, k2);
                        let fast = sp.data()[sp.at3(u, k1, k2)];
                        if (fast - naive).norm() > 1e-10 * scale {
                            return (false, format!("naive DFT mismatch at {shape:?} {pair:?}"));
                        }
                    }
                }
            }
            // roundtrip
            let back = irdft2(&s, pair, shape);
            if back.sub(&x).max_abs() > 1e-10 {
                return (false, format!("roundtrip failed at {shape:?} {pair:?}"));
            }
            // Parseval with half-spectrum mirror weights
            let n2 = shape[pair.second];
            let mut e = 0.0;
            for u in 0..nu {
                for k1 in 0..n1 {
                    for k2 in 0..h2 {
                        let w = if k2 == 0 || 2 * k2 == n2 { 1.0 } else { 2.0 };
                        e += w * sp.data()[sp.at3(u, k1, k2)].norm_sqr();
                    }
                }
            }
            let direct: f64 = x.data().iter().map(|v| v * v).sum();
            if ((e / (n1 * n2) as f64 - direct) / direct).abs() > 1e-9 {
                return (false, format!("Parseval failed at {shape:?} {pair:?}"));
            }
        }
        // linearity
        let y = Tensor::randn(&shape, &mut rng, 0.0, 1.0);
        let lhs = rdft2(&x.scale(2.0).add(&y.scale(-0.5)), AxisPair::HW);
        let (sx, sy) = (rdft2(&x, AxisPair::HW), rdft2(&y, AxisPair::HW));
        for i in 0..lhs.data().len() {
            if (lhs.data()[i] - (sx.data()[i] * 2.0 - sy.data()[i] * 0.5)).norm() > 1e-10 {
                return (false, "linearity failed".into());
            }
        }
    }
    (true, "- naive DFT, roundtrip, Parseval, linearity".into())
}

fn mew_identity() -> (bool, String) {
    let mut ps = ParamStore::new();
    let mut rng = Rng::seed_from_u64(2);
    let cfg = MewConfig {
        generator_mode: GeneratorMode::Raw,
        ..MewConfig::default()
    };
    let layer = MewLayer::new(&mut ps, "m", 8, (16, 16), &cfg, &mut rng);
    for b in layer.spectral.iter().flatten() {
        let t = ps.get_mut(b.weights.w_init);
        let n = t.len() / 2;
        for i in 0..n {
            t.data_mut()[i] = 1.0;
            t.data_mut()[n + i] = 0.0;
        }
    }
    layer.dw.as_ref().unwrap().set_identity(&mut ps);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = Tensor::randn(&[8, 16, 16], &mut rng, 0.0, 1.0);
        let (y, _) = layer.forward(&ps, &x);
        worst = worst.max(y.sub(&x.scale(2.0)).max_abs());
    }
    (
        worst < 1e-10,
        format!("- identity config vs 2x input, worst |err| {worst:.2e}"),
    )
}

fn gradient_suite() -> (bool, String) {
    let h = 1e-5;
    let tol = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let mut rng = Rng::seed_from_u64(100 + seed);
        let cfg = ModelConfig {
            in_channels: 2,
            n_classes: 1,
            base_width: 8,
            stage_depths: vec![1, 1],
            input_size: (8, 8),
            ..Default::default()
        };
        let mut model = Model::build(cfg, &mut rng).unwrap();
        let x = Tensor::randn(&[2, 8, 8], &mut rng, 0.0, 1.0);
        let mask: Vec<usize> = (0..64).map(|i| (i % 5 == 0) as usize).collect();
        let loss =
            |m: &Model, x: &Tensor| train::seg_loss(&m.forward(x).0, &mask, 1.0, 1.0).0;
        let (logits, cache) = model.forward(&x);
        let (_, dlogits) = train::seg_loss(&logits, &mask, 1.0, 1.0);
        let mut gs = GradStore::zeros_like(&model.ps);
        let dx = model.backward(&cache, &dlogits, &mut gs);
        let mut probe = |an: f64, fd: f64| {
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1.0);
            worst = worst.max(rel);
            rel < tol
        };
        for _ in 0..4 {
            let i = rng.below(x.len());
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&model, &xp) - loss(&model, &xm)) / (2.0 * h);
            if !probe(dx.data()[i], fd) {
                return (false, format!("input grad mismatch (seed {seed})"));
            }
        }
        for p in 0..model.ps.len() {
            let id = ParamId(p);
            let len = model.ps.get(id).len();
            for _ in 0..2.min(len) {
                let i = rng.below(len);
                let orig = model.ps.get(id).data()[i];
                model.ps.get_mut(id).data_mut()[i] = orig + h;
                let fp = loss(&model, &x);
                model.ps.get_mut(id).data_mut()[i] = orig - h;
                let fm = loss(&model, &x);
                model.ps.get_mut(id).data_mut()[i] = orig;
                if !probe(gs.get(id).data()[i], (fp - fm) / (2.0 * h)) {
                    let name = model.ps.name(id).to_string();
                    return (false, format!("param grad mismatch at {name} (seed {seed})"));
                }
            }
        }
    }
    (
        true,
        format!("- end-to-end loss grads, 5 seeds, worst rel err {worst:.2e}"),
    )
}

fn overfit_single_sample() -> (bool, String) {
    let cfg = DataConfig {
        n_train: 1,
        n_test: 1,
        ..DataConfig::default()
    };
    let (train_ds, _) = data::generate_dataset(&cfg, 3).unwrap();
    let s = &train_ds.samples[0];
    let mut rng = Rng::seed_from_u64(4);
    let mut model = Model::build(
        ModelConfig {
            in_channels: 3,
            n_classes: 1,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    let mut opt = Optimizer::new(OptimizerKind::AdamW, 0.0, &model.ps);
    let mut last = f64::INFINITY;
    for _ in 0..200 {
        let (logits, cache) = model.forward(&s.image);
        let (loss, dlogits) = train::seg_loss(&logits, &s.mask, 1.0, 1.0);
        let mut gs = GradStore::zeros_like(&model.ps);
        model.backward(&cache, &dlogits, &mut gs);
        opt.step(&mut model.ps, &gs, 2e-3);
        last = loss;
    }
    (
        last < 0.01,
        format!("- 200 AdamW steps on one sample, final loss {last:.4}"),
    )
}

fn dataset_dirs() -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let small = dir.path().join("small");
    let (tr, te) = data::generate_dataset(&DataConfig::default(), 0).unwrap();
    data::save_dataset(&full, "train", &tr).unwrap();
    data::save_dataset(&full, "test", &te).unwrap();
    let small_cfg = DataConfig {
        n_train: 96,
        n_test: 32,
        ..DataConfig::default()
    };
    let (tr, te) = data::generate_dataset(&small_cfg, 1).unwrap();
    data::save_dataset(&small, "train", &tr).unwrap();
    data::save_dataset(&small, "test", &te).unwrap();
    (dir, full, small)
}

fn train_once(
    data_dir: &std::path::Path,
    mask: &str,
    generator: &str,
    seed: u64,
    epochs: usize,
) -> mew_core::metrics::MetricReport {
    let train_ds = data::load_dataset(data_dir, "train").unwrap();
    let test_ds = data::load_dataset(data_dir, "test").unwrap();
    let mcfg = ModelConfig {
        in_channels: train_ds.channels,
        n_classes: 1,
        input_size: (train_ds.height, train_ds.width),
        branch_mask: mew_core::mew::BranchMask::parse(mask).unwrap(),
        generator_mode: match generator {
            "raw" => GeneratorMode::Raw,
            _ => GeneratorMode::Generated,
        },
        ..Default::default()
    };
    let tcfg = TrainConfig {
        epochs,
        seed,
        eval_every: epochs, // final eval only
        ..TrainConfig::default()
    };
    let mut rng = Rng::derive(seed, &[0x0de1]);
    let mut model = Model::build(mcfg, &mut rng).unwrap();
    let report = train::train(&mut model, &train_ds, &test_ds, &tcfg, None).unwrap();
    report.final_eval
}

fn synthetic_task(full: &std::path::Path) -> (bool, String) {
    let report = train_once(full, "dw,hw,cw,ch", "generated", 0, 15);
    (
        report.mean_iou >= 0.85,
        format!("- 15 epochs on 200 samples, test mIoU {:.4} (need >= 0.85)", report.mean_iou),
    )
}

fn ablation_trend(small: &std::path::Path) -> (bool, String) {
    let rows = ["dw", "dw,hw", "dw,hw,cw", "hw,cw,ch", "dw,hw,cw,ch"];
    let mut means = std::collections::HashMap::new();
    let mut raw_wins = 0;
    let mut gen_per_seed = Vec::new();
    for mask in rows {
        let mut ious = Vec::new();
        for seed in 0..3 {
            let r = train_once(small, mask, "generated", seed, 10);
            ious.push(r.mean_iou);
        }
        if mask == "dw,hw,cw,ch" {
            gen_per_seed = ious.clone();
        }
        means.insert(mask, ious.iter().sum::<f64>() / 3.0);
    }
    for seed in 0..3 {
        let r = train_once(small, "dw,hw,cw,ch", "raw", seed, 10);
        if r.mean_iou > gen_per_seed[seed as usize] {
            raw_wins += 1;
        }
    }
    let full_m = means["dw,hw,cw,ch"];
    let single_m = means["dw,hw"];
    let dw_m = means["dw"];
    let ordered = full_m >= single_m && single_m >= dw_m;
    let gen_ge_raw = raw_wins <= 1; // generated wins on >= 2 of 3 seeds
    (
        ordered && gen_ge_raw,
        format!(
            "- mean mIoU full {full_m:.4} >= +HW {single_m:.4} >= DW-only {dw_m:.4}: {ordered}; generated beats raw on {}/3 seeds",
            3 - raw_wins
        ),
    )
}

fn metrics_oracle() -> (bool, String) {
    if hd95(
        &{
            let mut m = vec![false; 36];
            m[0] = true;
            m
        },
        &{
            let mut m = vec![false; 36];
            m[3 * 6 + 4] = true;
            m
        },
        6,
        6,
    ) != 5.0
    {
        return (false, "3-4-5 hand case failed".into());
    }
    let mut rng = Rng::seed_from_u64(77);
    for trial in 0..500 {
        let h = 2 + rng.below(11);
        let w = 2 + rng.below(11);
        let gen = |rng: &mut Rng| -> Vec<bool> { (0..h * w).map(|_| rng.coin()).collect() };
        let (a, b) = (gen(&mut rng), gen(&mut rng));
        let fast = hd95(&a, &b, h, w);
        // brute force all-pairs directed distances
        let pts = |m: &[bool]| -> Vec<(f64, f64)> {
            m.iter()
                .enumerate()
                .filter(|(_, &v)| v)
                .map(|(i, _)| ((i / w) as f64, (i % w) as f64))
                .collect()
        };
        let (pa, pb) = (pts(&a), pts(&b));
        let slow = if pa.is_empty() && pb.is_empty() {
            0.0
        } else if pa.is_empty() || pb.is_empty() {
            f64::INFINITY
        } else {
            let directed = |from: &[(f64, f64)], to: &[(f64, f64)]| {
                let mut ds: Vec<f64> = from
                    .iter()
                    .map(|&(y, x)| {
                        to.iter()
                            .map(|&(ty, tx)| ((y - ty).powi(2) + (x - tx).powi(2)).sqrt())
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect();
                ds.sort_by(|p, q| p.partial_cmp(q).unwrap());
                let pos = 0.95 * (ds.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let frac = pos - lo as f64;
                if ds.len() == 1 {
                    ds[0]
                } else {
                    ds[lo] * (1.0 - frac) + ds[lo + 1] * frac
                }
            };
            directed(&pa, &pb).max(directed(&pb, &pa))
        };
        let same = if fast.is_finite() && slow.is_finite() {
            (fast - slow).abs() < 1e-9
        } else {
            fast.is_infinite() == slow.is_infinite()
        };
        if !same {
            return (false, format!("brute-force mismatch on trial {trial}"));
        }
    }
    (true, "- 500 random mask pairs vs all-pairs brute force".into())
}

fn frequency_analysis(small: &std::path::Path) -> (bool, String) {
    let ds = data::load_dataset(small, "train").unwrap();
    let (fa, fb) = data::region_curves(&ds, CurveMode::Single).unwrap();
    let single = count_crossings(&fa, &fb, data::crossing_threshold(&fa, &fb));
    let (ma, mb) = data::region_curves(&ds, CurveMode::Multi).unwrap();
    let multi = count_crossings(&ma, &mb, data::crossing_threshold(&ma, &mb));
    (
        single > 0 && multi == 0,
        format!("- crossings: single-pair {single} (need > 0), all-pairs {multi} (need 0)"),
    )
}

fn determinism(small: &std::path::Path) -> (bool, String) {
    let bin = env!("CARGO_BIN_EXE_mew");
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = std::process::Command::new(bin)
            .args([
                "train",
                "--data",
                small.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "5",
                "--epochs",
                "2",
            ])
            .status()
            .unwrap();
        if !status.success() {
            return (false, format!("train run {run} failed: {status}"));
        }
        outs.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    (
        outs[0] == outs[1],
        "- two same-seed CLI runs produce byte-identical metrics.csv".into(),
    )
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    check(&mut results, "spectral correctness", 10, spectral_correctness);
    check(&mut results, "MEW identity configuration", 5, mew_identity);
    check(&mut results, "gradient checks", 300, gradient_suite);
    check(&mut results, "single-sample overfit", 120, overfit_single_sample);
    let (_tmp, full, small) = dataset_dirs();
    check(&mut results, "synthetic segmentation task", 900, || {
        synthetic_task(&full)
    });
    check(&mut results, "ablation trend", 5400, || ablation_trend(&small));
    check(&mut results, "metrics oracle", 30, metrics_oracle);
    check(&mut results, "frequency analysis", 30, || {
        frequency_analysis(&small)
    });
    check(&mut results, "determinism", 300, || determinism(&small));
    let failed: Vec<String> = results
        .iter()
        .filter(|o| !o.passed)
        .map(|o| {
            format!(
                "{} ({:.1}s/{}s): {}",
                o.name,
                o.elapsed.as_secs_f64(),
                o.limit.as_secs(),
                o.detail
            )
        })
        .collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
