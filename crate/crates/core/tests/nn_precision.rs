//! f16 forward of each op against the f32 forward on the same (f16-representable) values.

use proptest::prelude::*;
use takunet_core::nn::*;
use takunet_core::testutil::uniform;
use takunet_core::{Precision, Tensor};

const TOL: f64 = 1e-2;

fn both(t: &Tensor) -> (Tensor, Tensor) {
    let h = t.cast(Precision::F16);
    let f = h.cast(Precision::F32);
    (h, f)
}

fn parity(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    assert_eq!(a.precision(), Precision::F16);
    a.max_abs_diff(b)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(24) })]

    #[test]
    fn f16_forward_tracks_f32(seed in 0u64..10_000, c in 1usize..5, hw in 2usize..7, groups_pick in 0usize..2) {
        let x = uniform(&[2, 2 * c, hw, hw], -4.0, 4.0, seed, Precision::F32);
        let (xh, xf) = both(&x);

        let groups = if groups_pick == 0 { 1 } else { 2 };
        let spec = ConvSpec::new(2 * c, 4, 3).padding(1).groups(groups).bias(true);
        let bound = 1.0 / ((spec.weight_shape()[1] * 9) as f64).sqrt();
        let (wh, wf) = both(&uniform(&spec.weight_shape(), -bound, bound, seed + 1, Precision::F32));
        let (bh, bf) = both(&uniform(&[4], -bound, bound, seed + 2, Precision::F32));
        prop_assert!(parity(&conv2d(&xh, &wh, Some(&bh), &spec).unwrap(), &conv2d(&xf, &wf, Some(&bf), &spec).unwrap()) <= TOL);

        prop_assert!(parity(&relu6(&xh).unwrap(), &relu6(&xf).unwrap()) <= TOL);

        let mut sh = BatchNormState::new(2 * c, Precision::F16);
        let mut sf = BatchNormState::new(2 * c, Precision::F32);
        prop_assert!(parity(&batch_norm(&xh, &mut sh).unwrap().0, &batch_norm(&xf, &mut sf).unwrap().0) <= TOL);

        let mut gh = GrnState::per_channel(2 * c, Precision::F16);
        gh.gamma = uniform(&[2 * c], -0.5, 0.5, seed + 3, Precision::F16);
        gh.beta = uniform(&[2 * c], -0.5, 0.5, seed + 4, Precision::F16);
        let gf = gh.cast(Precision::F32);
        prop_assert!(parity(&grn(&xh, &gh).unwrap(), &grn(&xf, &gf).unwrap()) <= TOL);

        prop_assert!(parity(&max_pool2d(&xh, 2, 2).unwrap(), &max_pool2d(&xf, 2, 2).unwrap()) <= TOL);
        prop_assert!(parity(&avg_pool2d(&xh, 2, 2).unwrap(), &avg_pool2d(&xf, 2, 2).unwrap()) <= TOL);
        prop_assert!(parity(&adaptive_avg_pool(&xh).unwrap(), &adaptive_avg_pool(&xf).unwrap()) <= TOL);
        prop_assert!(parity(&channel_shuffle(&xh, 2).unwrap(), &channel_shuffle(&xf, 2).unwrap()) <= TOL);

        let feats = adaptive_avg_pool(&xf).unwrap();
        let (ph, pf) = both(&feats);
        let (lh, lf) = both(&uniform(&[5, 2 * c], -0.5, 0.5, seed + 5, Precision::F32));
        prop_assert!(parity(&linear(&ph, &lh, None).unwrap(), &linear(&pf, &lf, None).unwrap()) <= TOL);
    }
}
