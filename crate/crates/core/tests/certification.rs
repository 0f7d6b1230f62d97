use dsmp_core::applications::example::paper_example_spec;
use dsmp_core::control::solve_state;
use dsmp_core::fbdsde::{certify_lipschitz, certify_monotonicity, PicardConfig};
use dsmp_core::lattice::Lattice;
use dsmp_core::presets::preset;

#[test]
fn example_coefficients_regression() {
    let spec = paper_example_spec(false).unwrap();
    let l = Lattice::new(1.0, 4).unwrap();
    let mono = certify_monotonicity(spec.coefficients.as_ref(), &l, &[0.0], 2000, 1).unwrap();
    // Supremum of the quadratic form is 1/4, so the sampled value sits just above -1/4.
    assert!(!mono.certified);
    assert!(mono.mu >= -0.25 && mono.mu < -0.245, "{}", mono.mu);
    assert!((mono.mu - MU).abs() < 1e-12, "{}", mono.mu);
    let lip = certify_lipschitz(spec.coefficients.as_ref(), &l, &[0.0], 2000, 1).unwrap();
    assert_eq!(lip.alpha, 0.0);
    assert!(lip.certified);
}

const MU: f64 = -2.499_340_536_407_609e-1;

#[test]
fn picard_residuals_do_not_increase_under_monotonicity() {
    let p = preset("nonlinear-scalar").unwrap();
    for n in [4, 8] {
        let l = Lattice::new(1.0, n).unwrap();
        let s = solve_state(&p.problem, &p.triple(&l), &PicardConfig::default()).unwrap();
        assert!(s.history.len() > 2);
        for w in s.history[1..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "N={n}: {:?}", s.history);
        }
    }
}
