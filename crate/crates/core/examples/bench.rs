//! Rough single-sample timing breakdown for the default model.

use mew_core::model::{Model, ModelConfig};
use mew_core::nn::GradStore;
use mew_core::rng::Rng;
use mew_core::tensor::Tensor;
use std::time::Instant;

fn main() {
    let cfg = ModelConfig::default();
    let mut rng = Rng::seed_from_u64(0);
    let model = Model::build(cfg, &mut rng).unwrap();
    let x = Tensor::randn(&[3, 64, 64], &mut rng, 0.0, 1.0);
    let reps = 10;

    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = model.forward(&x);
    }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;

    let (y, cache) = model.forward(&x);
    let dy = Tensor::ones(y.shape());
    let mut gs = GradStore::zeros_like(&model.ps);
    let t1 = Instant::now();
    for _ in 0..reps {
        gs.reset();
        let _ = model.backward(&cache, &dy, &mut gs);
    }
    let bwd = t1.elapsed().as_secs_f64() / reps as f64;
    println!("forward {:.1} ms  backward {:.1} ms", fwd * 1e3, bwd * 1e3);

    // per-layer-type breakdown via isolated ops
    use mew_core::nn::{Conv2d, ParamStore};
    let mut ps = ParamStore::new();
    let conv = Conv2d::new(&mut ps, "c", 8, 32, 1, 1, 0, &mut rng);
    let xi = Tensor::randn(&[8, 64, 64], &mut rng, 0.0, 1.0);
    let t2 = Instant::now();
    for _ in 0..reps {
        let _ = conv.forward(&ps, &xi);
    }
    println!("1x1 conv 8->32 @64x64 fwd {:.2} ms", t2.elapsed().as_secs_f64() / reps as f64 * 1e3);

    use mew_core::spectral::{irdft2, rdft2, AxisPair};
    let t3 = Instant::now();
    for _ in 0..reps {
        let _ = rdft2(&xi, AxisPair::HW);
    }
    println!("rdft2 HW [8,64,64] {:.2} ms", t3.elapsed().as_secs_f64() / reps as f64 * 1e3);
    let s = rdft2(&xi, AxisPair::HW);
    let t4 = Instant::now();
    for _ in 0..reps {
        let _ = irdft2(&s, AxisPair::HW, [8, 64, 64]);
    }
    println!("irdft2 HW {:.2} ms", t4.elapsed().as_secs_f64() / reps as f64 * 1e3);

    use mew_core::mew::{MewBlock, MewConfig};
    use mew_core::nn::{DwSeparable, Ffn, GroupNorm, Activation};
    let mut ps2 = ParamStore::new();
    let block = MewBlock::new(&mut ps2, "b", 8, (64, 64), &MewConfig::default(), &mut rng);
    let t5 = Instant::now();
    for _ in 0..reps {
        let _ = block.forward(&ps2, &xi);
    }
    println!("MewBlock [8,64,64] fwd {:.2} ms", t5.elapsed().as_secs_f64() / reps as f64 * 1e3);

    let mut ps3 = ParamStore::new();
    let gn = GroupNorm::new(&mut ps3, "gn", 8, 4);
    let ffn = Ffn::new(&mut ps3, "ffn", 8, 4, &mut rng);
    let _ = Activation::Gelu;
    let dws = DwSeparable::new(&mut ps3, "dw", 2, true, &mut rng);
    let x2 = Tensor::randn(&[2, 64, 64], &mut rng, 0.0, 1.0);
    for (name, f) in [
        ("GroupNorm", Box::new(|| { let _ = gn.forward(&ps3, &xi); }) as Box<dyn Fn()>),
        ("Ffn", Box::new(|| { let _ = ffn.forward(&ps3, &xi); })),
        ("DwSep [2,64,64]", Box::new(|| { let _ = dws.forward(&ps3, &x2); })),
    ] {
        let t = Instant::now();
        for _ in 0..reps {
            f();
        }
        println!("{name} fwd {:.2} ms", t.elapsed().as_secs_f64() / reps as f64 * 1e3);
    }
}
