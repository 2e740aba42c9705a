//! HD95 and the distance transform checked against brute-force all-pairs
//! computation on random masks.

use mew_core::metrics::{distance_transform_sq, hd95};
use mew_core::rng::Rng;

fn brute_hd95(pred: &[bool], truth: &[bool], w: usize) -> f64 {
    let pts = |m: &[bool]| -> Vec<(f64, f64)> {
        m.iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| ((i / w) as f64, (i % w) as f64))
            .collect()
    };
    let a = pts(pred);
    let b = pts(truth);
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let directed = |from: &[(f64, f64)], to: &[(f64, f64)]| -> f64 {
        let mut ds: Vec<f64> = from
            .iter()
            .map(|&(y, x)| {
                to.iter()
                    .map(|&(ty, tx)| ((y - ty).powi(2) + (x - tx).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        ds.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let m = ds.len();
        if m == 1 {
            return ds[0];
        }
        let pos = 0.95 * (m - 1) as f64;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        ds[lo] * (1.0 - frac) + ds[lo + 1] * frac
    };
    directed(&a, &b).max(directed(&b, &a))
}

#[test]
fn hd95_matches_brute_force_on_random_masks() {
    let mut rng = Rng::seed_from_u64(2024);
    for trial in 0..500 {
        let h = 2 + rng.below(11);
        let w = 2 + rng.below(11);
        let density = 0.05 + 0.4 * rng.uniform();
        let gen = |rng: &mut Rng| -> Vec<bool> {
            (0..h * w).map(|_| rng.uniform() < density).collect()
        };
        let a = gen(&mut rng);
        let b = gen(&mut rng);
        let fast = hd95(&a, &b, h, w);
        let slow = brute_hd95(&a, &b, w);
        if fast.is_infinite() || slow.is_infinite() {
            assert_eq!(fast.is_infinite(), slow.is_infinite(), "trial {trial}");
        } else {
            assert!(
                (fast - slow).abs() < 1e-9,
                "trial {trial} ({h}x{w}): fast {fast} vs brute {slow}"
            );
        }
    }
}

#[test]
fn distance_transform_matches_brute_force() {
    let mut rng = Rng::seed_from_u64(4048);
    for _ in 0..200 {
        let h = 1 + rng.below(12);
        let w = 1 + rng.below(12);
        let mask: Vec<bool> = (0..h * w).map(|_| rng.uniform() < 0.2).collect();
        if !mask.iter().any(|&b| b) {
            continue;
        }
        let d = distance_transform_sq(&mask, h, w);
        for y in 0..h {
            for x in 0..w {
                let mut best = f64::INFINITY;
                for yy in 0..h {
                    for xx in 0..w {
                        if mask[yy * w + xx] {
                            let dy = y as f64 - yy as f64;
                            let dx = x as f64 - xx as f64;
                            best = best.min(dy * dy + dx * dx);
                        }
                    }
                }
                // both sides are exact sums of integer squares
                assert_eq!(d[y * w + x], best, "({y},{x}) in {h}x{w}");
            }
        }
    }
}
