//! Property-based invariants over random shapes and values.

use mew_core::rng::Rng;
use mew_core::spectral::{irdft2, rdft2, AxisPair};
use mew_core::tensor::Tensor;
use proptest::prelude::*;

fn arb_tensor(max_c: usize, max_hw: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_c, 1..=max_hw, 1..=max_hw, any::<u64>()).prop_map(|(c, h, w, seed)| {
        let mut rng = Rng::seed_from_u64(seed);
        Tensor::randn(&[c, h, w], &mut rng, 0.0, 1.0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rdft2_roundtrip_any_shape(x in arb_tensor(4, 9)) {
        let dims = [x.shape()[0], x.shape()[1], x.shape()[2]];
        for pair in AxisPair::ALL {
            let y = irdft2(&rdft2(&x, pair), pair, dims);
            prop_assert!(y.sub(&x).max_abs() < 1e-9);
        }
    }

    #[test]
    fn split_concat_identity(x in arb_tensor(8, 6), parts in 1usize..=4) {
        let c = x.shape()[0];
        if c % parts == 0 {
            let split = x.split_channels(parts);
            let back = Tensor::concat_channels(&split);
            prop_assert_eq!(back, x);
        }
    }

    #[test]
    fn hw_transpose_is_involution(x in arb_tensor(3, 8)) {
        let perm = x.permute3([0, 2, 1]);
        let back = perm.permute3([0, 2, 1]);
        prop_assert_eq!(back, x);
    }

    #[test]
    fn pairwise_sum_matches_sequential(vals in proptest::collection::vec(-1e3f64..1e3, 0..200)) {
        let fast = mew_core::tensor::pairwise_sum(&vals);
        let slow: f64 = vals.iter().sum();
        prop_assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0));
    }
}
