use dsmp_core::adjoint::Multipliers;
use dsmp_core::applications::classical::AffineSigma;
use dsmp_core::control::{ControlTriple, ConvexSet};
use dsmp_core::ekeland::metric_d;
use dsmp_core::lattice::{AdaptedField, Lattice, LevelField};
use proptest::prelude::*;

fn well_conditioned(n: usize) -> impl Strategy<Value = Vec<f64>> {
    // Diagonally dominant, so always invertible.
    prop::collection::vec(-0.4..0.4f64, n * n).prop_map(move |mut m| {
        for i in 0..n {
            m[i * n + i] += if i % 2 == 0 { 2.0 } else { -2.0 };
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn sigma_roundtrip(
        (n, matrix, slope, offset, y, u) in (1usize..4).prop_flat_map(|n| (
            Just(n),
            well_conditioned(n),
            prop::collection::vec(-3.0..3.0f64, n * n),
            prop::collection::vec(-3.0..3.0f64, n),
            prop::collection::vec(-3.0..3.0f64, n),
            prop::collection::vec(-3.0..3.0f64, n),
        )),
    ) {
        let s = AffineSigma::new(n, 1, matrix, slope, offset).unwrap();
        let mut q = vec![0.0; n];
        s.eval(&y, &u, &mut q);
        let mut back = vec![0.0; n];
        s.invert(&y, &q, &mut back);
        let err = back.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-10, "roundtrip error {err}");
    }

    #[test]
    fn projection_is_idempotent_and_inside(
        lo in -2.0..0.0f64,
        width in 0.0..3.0f64,
        p in prop::collection::vec(-5.0..5.0f64, 3),
        r in 0.1..2.0f64,
    ) {
        let sets = [
            ConvexSet::interval(3, lo, lo + width).unwrap(),
            ConvexSet::ball(vec![0.5, -0.5, 0.0], r).unwrap(),
        ];
        for s in &sets {
            let once = s.projected(&p);
            prop_assert!(s.contains(&once, 1e-12));
            let twice = s.projected(&once);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metric_is_a_metric(vals in prop::collection::vec(-2.0..2.0f64, 9)) {
        let l = Lattice::new(1.0, 2).unwrap();
        let t = |o: usize| ControlTriple {
            xi: LevelField::constant(&l, 0, &[vals[o]]),
            eta: LevelField::constant(&l, 2, &[vals[o + 1]]),
            u: AdaptedField::from_fn(&l, 1, |n, out| out[0] = vals[o + 2] * n.time),
        };
        let (a, b, c) = (t(0), t(3), t(6));
        prop_assert_eq!(metric_d(&a, &a).unwrap(), 0.0);
        let ab = metric_d(&a, &b).unwrap();
        prop_assert!((ab - metric_d(&b, &a).unwrap()).abs() < 1e-14);
        prop_assert!(metric_d(&a, &c).unwrap() <= ab + metric_d(&b, &c).unwrap() + 1e-12);
    }

    #[test]
    fn normalized_multipliers_validate(
        h0 in -1.0..0.0f64,
        h1 in -1.0..0.0f64,
        h2 in -1.0..1.0f64,
        h3 in -1.0..1.0f64,
    ) {
        let n = (h0 * h0 + h1 * h1 + h2 * h2 + h3 * h3).sqrt();
        prop_assume!(n > 1e-3);
        let m = Multipliers::new(h0 / n, h1 / n, vec![h2 / n], vec![h3 / n]).unwrap();
        prop_assert!(m.validate().is_ok());
        prop_assert!((m.norm() - 1.0).abs() < 1e-12);
        prop_assert!(Multipliers::new(0.5, -0.5, vec![0.5], vec![0.5]).is_err());
        prop_assert!(Multipliers::new(h0, h1, vec![h2], vec![h3]).is_err() || (n - 1.0).abs() < 1e-9);
    }
}
