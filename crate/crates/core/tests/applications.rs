use dsmp_core::adjoint::{mp_residuals, solve_adjoint, CostateWeights};
use dsmp_core::applications::bdsde_only::{bdsde_adjoint, bdsde_mp_residuals};
use dsmp_core::applications::classical::{classical_adjoints, classical_cost, solve_backward, solve_classical};
use dsmp_core::applications::lq::{lq_solve, LqConfig};
use dsmp_core::control::{evaluate_cost, solve_state, ControlTriple};
use dsmp_core::ekeland::{extract_multipliers, penalized_descent, penalty, Reference, StepRule};
use dsmp_core::fbdsde::PicardConfig;
use dsmp_core::lattice::{canonical_decomposition, ito_energy_check, AdaptedField, Lattice, LevelField};
use dsmp_core::presets::{preset, PresetKind};
use dsmp_core::variation::FrozenCoefficients;

fn cfg() -> PicardConfig {
    PicardConfig::default()
}

#[test]
fn single_equation_adjoint_matches_general_solver() {
    let p = preset("app-3.2-linear").unwrap();
    let l = Lattice::new(1.0, 6).unwrap();
    let t = p.triple(&l);
    let s = solve_state(&p.problem, &t, &cfg()).unwrap();
    let fr = FrozenCoefficients::from_spec(&p.problem, &s, &t).unwrap();
    let w = CostateWeights {
        h2: vec![0.4],
        ..CostateWeights::cost()
    };
    let general = solve_adjoint(&p.problem, &fr, &w, &cfg()).unwrap();
    let (n, delta) = bdsde_adjoint(&p.problem, &fr, &w).unwrap();
    assert!(n.max_abs_diff(&general.n).unwrap() < 1e-10);
    assert!(delta.max_abs_diff(&general.delta).unwrap() < 1e-10);

    let (_, rep) = bdsde_mp_residuals(&p.problem, &t, &s, &w, 4, 1, 1e-6).unwrap();
    let full = mp_residuals(&p.problem, &t, &s, &general, 1.0, 4, 1, 1e-6).unwrap();
    assert!((rep.r_u - full.r_u).abs() < 1e-10);
}

#[test]
fn classical_and_backward_costs_agree_to_first_order() {
    let p = preset("app-3.1-affine").unwrap();
    let PresetKind::Classical(c) = &p.kind else {
        panic!("classical preset expected")
    };
    let (mut diffs, mut gaps) = (Vec::new(), Vec::new());
    for n in [4, 8] {
        let l = Lattice::new(1.0, n).unwrap();
        let xi = LevelField::constant(&l, 0, &[0.2]);
        let u = AdaptedField::constant(&l, &[0.3]);
        let cs = solve_classical(c, &xi, &u).unwrap();
        let cj = classical_cost(c, &xi, &u, &cs).unwrap();
        let eta = cs.y.level_field(n);
        let (tr, bs) = solve_backward(&p.problem, &l, &xi, &eta, &cfg()).unwrap();
        let bj = evaluate_cost(&tr, &p.problem, &bs).unwrap();
        diffs.push((cj - bj).abs());
        let rep = classical_adjoints(c, &p.problem, &tr, &bs, 4, 2, &cfg()).unwrap();
        assert!(rep.pathwise_gap.is_finite());
        gaps.push(rep.expectation_gap);
    }
    assert!(gaps[1] < gaps[0] && gaps[1] < 0.2 / 8.0, "{gaps:?}");
    assert!(diffs[0] < 0.1 / 4.0 && diffs[1] < 0.1 / 8.0, "{diffs:?}");
    assert!(diffs[1] < diffs[0]);
}

#[test]
fn descent_decreases_the_penalty() {
    let p = preset("paper-3.12-constrained").unwrap();
    let l = Lattice::new(1.0, 4).unwrap();
    let zero = ControlTriple::constant(&l, &[0.0], &[0.0], &[0.0]);
    let reference = Reference::from_solution(&p.problem, &solve_state(&p.problem, &zero, &cfg()).unwrap());
    let start = p.triple(&l);
    let eps = 0.01;
    let first = penalty(&start, reference, &p.problem, eps, &cfg()).unwrap();
    assert!(first.value > 0.0);
    let d = penalized_descent(&p.problem, reference, eps, &start, &StepRule::default(), 20, &cfg()).unwrap();
    assert!(!d.stalled);
    assert!(d.history.len() > 1);
    assert!(d.history.windows(2).all(|w| w[1] < w[0]), "{:?}", d.history);
    assert!(d.report.candidate.is_admissible(&p.problem, 1e-12));

    let half = penalized_descent(&p.problem, reference, eps / 2.0, &start, &StepRule::default(), 20, &cfg()).unwrap();
    assert!(half.report.value <= d.report.value + 1e-12);
    if d.report.value > 0.0 {
        let m = extract_multipliers(&d.report).unwrap();
        assert!(m.h0 <= 0.0 && m.h1 <= 0.0);
    }
}

#[test]
fn energy_identity_error_is_first_order() {
    for name in ["lq-scalar-suboptimal", "nonlinear-scalar", "app-3.2-linear"] {
        let p = preset(name).unwrap();
        let mut r = Vec::new();
        for n in [4, 8] {
            let l = Lattice::new(1.0, n).unwrap();
            let s = solve_state(&p.problem, &p.triple(&l), &cfg()).unwrap();
            let mut worst: f64 = 0.0;
            for f in [&s.x, &s.y].into_iter().filter(|f| f.dim() > 0) {
                let d = canonical_decomposition(f).unwrap();
                worst = worst.max(ito_energy_check(f, &d.beta, &d.gamma, &d.delta).unwrap().max_residual);
            }
            r.push(worst);
        }
        assert!(r[1] < 0.6 * r[0], "{name}: {r:?}");
    }
}

#[test]
fn lq_presets_solve_to_stationarity() {
    for name in ["lq-scalar", "lq-2d"] {
        let p = preset(name).unwrap();
        let PresetKind::Lq(spec) = &p.kind else {
            panic!("lq preset expected")
        };
        let l = Lattice::new(1.0, 4).unwrap();
        let sol = lq_solve(spec, &l, &LqConfig::default()).unwrap();
        assert!(sol.stationarity < 1e-9, "{name}: {}", sol.stationarity);
        assert_eq!(sol.sign, -1.0);
        assert!(matches!(sol.other_sign_cost, Some(Some(c)) if c >= sol.cost) || sol.other_sign_cost == Some(None));
    }
}

#[test]
fn classical_residuals_hold_at_grid_optimum() {
    let p = preset("app-3.1-affine").unwrap();
    let PresetKind::Classical(c) = &p.kind else {
        panic!("classical preset expected")
    };
    let l = Lattice::new(1.0, 6).unwrap();
    let solve = |xi: f64, eta: f64| {
        let (t, s) = solve_backward(
            &p.problem,
            &l,
            &LevelField::constant(&l, 0, &[xi]),
            &LevelField::constant(&l, 6, &[eta]),
            &cfg(),
        )
        .unwrap();
        let j = evaluate_cost(&t, &p.problem, &s).unwrap();
        (t, s, j)
    };
    // E y_0 is affine in a constant eta and does not see xi; pin it to b0.
    let b0 = c.initial_value[0];
    let y0 = |eta: f64| solve(0.0, eta).1.y.expectation(0)[0];
    let (e0, e1) = (y0(0.0), y0(1.0));
    let eta = (b0 - e0) / (e1 - e0);
    let best = (-200..=200)
        .map(|i| i as f64 * 0.01)
        .map(|xi| (xi, solve(xi, eta).2))
        .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let (t, s, _) = solve(best.0, eta);
    let rep = classical_adjoints(c, &p.problem, &t, &s, 16, 3, &cfg()).unwrap();
    assert!(rep.expectation_gap <= 1e-10, "{}", rep.expectation_gap);
    // One grid step of slack on a set of diameter 4.
    let tol = 0.05;
    assert!(rep.r_xi <= tol && rep.r_eta >= -tol, "{} {}", rep.r_xi, rep.r_eta);
    let (t, s, _) = solve(best.0 + 0.5, eta);
    let off = classical_adjoints(c, &p.problem, &t, &s, 16, 3, &cfg()).unwrap();
    assert!(off.r_xi > tol, "{}", off.r_xi);
}
