//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion outside `KNOWN_RED` fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use dsmp_core::adjoint::{duality_gap, mp_residuals, solve_adjoint, CostateWeights};
use dsmp_core::applications::classical::{classical_cost, solve_backward, solve_classical, AffineSigma};
use dsmp_core::applications::example::{paper_example, zero_check, REFINEMENT_STEPS};
use dsmp_core::applications::lq::{grid_search_constant, lq_solve, lq_verify, sample_controls, LqConfig, SignChoice};
use dsmp_core::bdsde::{solve_bdsde, BdsdeSpec, LipschitzClaim};
use dsmp_core::control::{evaluate_cost, solve_state, ControlTriple};
use dsmp_core::ekeland::{
    extract_multipliers, penalized_descent, penalty, sample_directions, variational_inequality_residual, Reference,
    StepRule,
};
use dsmp_core::fbdsde::PicardConfig;
use dsmp_core::lattice::{canonical_decomposition, ito_energy_check, AdaptedField, Lattice, LevelField, Node};
use dsmp_core::presets::{preset, PresetKind};
use dsmp_core::variation::{
    difference_quotient_gap, directional_cost_derivative, solve_variational, FrozenCoefficients,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail; see the notes printed with them.
const KNOWN_RED: &[usize] = &[2];

/// Constant in the `<= C dt` bounds of the energy and duality criteria.
const C_DT: f64 = 2.0;

type Check = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Check);

fn picard() -> PicardConfig {
    PicardConfig::default()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Least-squares slope of `log r` against `log dt`.
fn order(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn c1_zero_control() -> Check {
    let z = zero_check(8, &picard()).map_err(err)?;
    let pass = z.max_state <= 1e-12 && z.max_costate <= 1e-12 && z.cost == 0.0;
    Ok((
        pass,
        format!("N=8 max|state|={:e} max|costate|={:e} J={:e}", z.max_state, z.max_costate, z.cost),
    ))
}

fn c2_refinement() -> Check {
    let r = paper_example(8, &REFINEMENT_STEPS, &picard()).map_err(err)?;
    let ok = |limit: f64, p: f64, expected: f64| (limit - expected).abs() <= 0.05 && p >= 0.7;
    let pass = ok(r.fit_one.limit, r.fit_one.order, r.expected_one) && ok(r.fit_t.limit, r.fit_t.order, r.expected_t);
    let last = r.rows.last().expect("rows");
    Ok((
        pass,
        format!(
            "u=1: J_inf={:.4} (want 3) p={:.2}; u=t: J_inf={:.4} (want 1) p={:.2}; J_14=({:.4}, {:.4}). \
             The discrete system driven by u tends to a limit whose cost is not 3 int u^2 dt",
            r.fit_one.limit, r.fit_one.order, r.fit_t.limit, r.fit_t.order, last.cost_one, last.cost_t
        ),
    ))
}

fn c3_bdsde() -> Check {
    let claim = LipschitzClaim::new(1.0, 0.25).map_err(err)?;
    let l = Lattice::new(1.0, 6).map_err(err)?;
    let eta = LevelField::from_fn(&l, 6, 1, |n, o| o[0] = l.forward_driver(6, n.index, 0));
    let zero = |_: Node, _: &[f64], _: &[f64], _: &mut [f64], _: &mut [f64]| {};
    let sol = solve_bdsde(&BdsdeSpec::new(eta, zero, claim).map_err(err)?).map_err(err)?;
    let mut w_err: f64 = 0.0;
    for k in 0..=6 {
        for i in 0..l.nodes() {
            w_err = w_err.max((sol.y.at(k, i)[0] - l.forward_driver(k, i, 0)).abs());
            w_err = w_err.max((sol.q.at(k, i)[0] - 1.0).abs());
        }
    }

    let (c0, c) = (0.7, -1.3);
    let eta = LevelField::constant(&l, 6, &[c0]);
    let g = move |_: Node, _: &[f64], _: &[f64], _: &mut [f64], g: &mut [f64]| g[0] = c;
    let sol = solve_bdsde(&BdsdeSpec::new(eta, g, claim).map_err(err)?).map_err(err)?;
    let mut b_err: f64 = 0.0;
    for k in 0..=6 {
        for i in 0..l.nodes() {
            b_err = b_err.max((sol.y.at(k, i)[0] - c0 - c * l.backward_driver_tail(k, i, 0)).abs());
            b_err = b_err.max(sol.q.at(k, i)[0].abs());
        }
    }

    let l16 = Lattice::new(1.0, 16).map_err(err)?;
    let eta = LevelField::constant(&l16, 16, &[1.0]);
    let ode = |_: Node, y: &[f64], _: &[f64], f: &mut [f64], _: &mut [f64]| f[0] = -y[0];
    let sol = solve_bdsde(&BdsdeSpec::new(eta, ode, claim).map_err(err)?).map_err(err)?;
    let ode_err = (sol.y.at(0, 0)[0] - (-1.0f64).exp()).abs();

    let pass = w_err <= 1e-12 && b_err <= 1e-12 && ode_err <= 2.0 * l16.dt();
    Ok((
        pass,
        format!("eta=W_T err={w_err:e}; constant g err={b_err:e}; |y_0 - e^-1|={ode_err:.3e} at N=16 (bound {:.4})", 2.0 * l16.dt()),
    ))
}

fn c4_energy() -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["lq-scalar-suboptimal", "nonlinear-scalar", "app-3.2-linear"] {
        let p = preset(name).map_err(err)?;
        let mut pts = Vec::new();
        for n in [4, 8, 16] {
            let l = Lattice::new(1.0, n).map_err(err)?;
            let s = solve_state(&p.problem, &p.triple(&l), &picard()).map_err(err)?;
            let mut worst: f64 = 0.0;
            for f in [&s.x, &s.y].into_iter().filter(|f| f.dim() > 0) {
                let d = canonical_decomposition(f).map_err(err)?;
                worst = worst.max(ito_energy_check(f, &d.beta, &d.gamma, &d.delta).map_err(err)?.max_residual);
            }
            pass &= worst <= C_DT * l.dt();
            pts.push((l.dt(), worst));
        }
        let p = order(&pts);
        pass &= p >= 0.7;
        parts.push(format!("{name} r16={:.2e} p={p:.2}", pts[2].1));
    }
    Ok((pass, parts.join("; ")))
}

fn duality_setup(name: &str, n: usize, weights: &CostateWeights, dir: Option<&ControlTriple>) -> Result<f64, String> {
    let p = preset(name).map_err(err)?;
    let l = Lattice::new(1.0, n).map_err(err)?;
    let base = p.triple(&l);
    let sol = solve_state(&p.problem, &base, &picard()).map_err(err)?;
    let frozen = FrozenCoefficients::from_spec(&p.problem, &sol, &base).map_err(err)?;
    let dir = match dir {
        Some(d) => d.clone(),
        None => {
            let mut d = base.zeros_like();
            d.u = AdaptedField::from_fn(&l, 1, |nd, o| o[0] = 0.8 - nd.time + 0.3 * l.forward_driver(nd.level, nd.index, 0));
            d.xi.as_mut_slice().iter_mut().for_each(|v| *v = 0.4);
            d.eta.as_mut_slice().iter_mut().for_each(|v| *v = -0.6);
            d
        }
    };
    let var = solve_variational(&frozen, &dir, &picard()).map_err(err)?;
    let adj = solve_adjoint(&p.problem, &frozen, weights, &picard()).map_err(err)?;
    duality_gap(&p.problem, &frozen, &var, &adj, weights, &dir).map_err(err)
}

fn c5_duality() -> Check {
    let l = Lattice::new(1.0, 6).map_err(err)?;
    let zero_dir = ControlTriple::constant(&l, &[0.0], &[0.0], &[0.0]);
    let g_dir = duality_setup("nonlinear-scalar", 6, &CostateWeights::cost(), Some(&zero_dir))?;
    let g_co = duality_setup("nonlinear-scalar", 6, &CostateWeights::zero(), None)?;
    let mut pts = Vec::new();
    for n in [4, 8, 16] {
        pts.push((1.0 / n as f64, duality_setup("nonlinear-scalar", n, &CostateWeights::cost(), None)?));
    }
    let p = order(&pts);
    let c = pts.iter().map(|(dt, g)| g / dt).fold(0.0, f64::max);
    let pass = g_dir <= 1e-10 && g_co <= 1e-10 && p >= 0.7 && c <= C_DT;
    Ok((
        pass,
        format!(
            "zero direction {g_dir:e}; zero costate {g_co:e}; nonlinear gaps {:.2e}/{:.2e}/{:.2e} at N=4/8/16, p={p:.2}, C={c:.3}",
            pts[0].1, pts[1].1, pts[2].1
        ),
    ))
}

fn c6_variation() -> Check {
    let rhos = [1.0, 0.1, 0.01];
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["lq-2d", "app-3.2-linear", "app-3.1-affine"] {
        let p = preset(name).map_err(err)?;
        let l = Lattice::new(1.0, 5).map_err(err)?;
        let base = p.triple(&l);
        let sol = solve_state(&p.problem, &base, &picard()).map_err(err)?;
        let dirs = sample_directions(&p.problem, &base, 1, 1.0, 3).map_err(err)?;
        let gaps = difference_quotient_gap(&p.problem, &base, &sol, &dirs[0], &rhos, &picard()).map_err(err)?;
        let worst = gaps.iter().map(|g| g.max()).fold(0.0, f64::max);
        pass &= worst <= 1e-9;
        parts.push(format!("{name} {worst:.1e}"));
    }

    let p = preset("nonlinear-scalar").map_err(err)?;
    let l = Lattice::new(1.0, 5).map_err(err)?;
    let base = p.triple(&l);
    let sol = solve_state(&p.problem, &base, &picard()).map_err(err)?;
    let mut dir = base.zeros_like();
    dir.u = AdaptedField::from_fn(&l, 1, |nd, o| o[0] = 0.5 - nd.time + 0.2 * l.forward_driver(nd.level, nd.index, 0));
    dir.xi.as_mut_slice().iter_mut().for_each(|v| *v = 0.3);
    dir.eta.as_mut_slice().iter_mut().for_each(|v| *v = -0.4);
    let gaps = difference_quotient_gap(&p.problem, &base, &sol, &dir, &[0.1, 0.01], &picard()).map_err(err)?;
    let (g1, g2) = (gaps[0].max(), gaps[1].max());
    pass &= g2 <= 0.5 * g1;

    let frozen = FrozenCoefficients::from_spec(&p.problem, &sol, &base).map_err(err)?;
    let var = solve_variational(&frozen, &dir, &picard()).map_err(err)?;
    let dj = directional_cost_derivative(&p.problem, &base, &sol, &dir, &var).map_err(err)?;
    let h = 1e-4;
    let cost_at = |t: f64| -> Result<f64, String> {
        let c = base.add_scaled(t, &dir).map_err(err)?;
        let s = solve_state(&p.problem, &c, &picard()).map_err(err)?;
        evaluate_cost(&c, &p.problem, &s).map_err(err)
    };
    let fd = (cost_at(h)? - cost_at(-h)?) / (2.0 * h);
    pass &= (dj - fd).abs() <= 1e-3;
    Ok((
        pass,
        format!(
            "linear max gaps: {}; nonlinear gap(0.1)={g1:.2e} gap(0.01)={g2:.2e}; dJ={dj:.8} fd={fd:.8}",
            parts.join(", ")
        ),
    ))
}

fn c7_multipliers() -> Check {
    let p = preset("paper-3.12-constrained").map_err(err)?;
    let optimum = p.optimum.clone().ok_or("preset has no optimum")?;
    let l = Lattice::new(1.0, 6).map_err(err)?;
    let eps = 0.01;
    let reference_triple = ControlTriple {
        u: optimum.field(&l),
        ..p.triple(&l)
    };
    let sol = solve_state(&p.problem, &reference_triple, &picard()).map_err(err)?;
    let reference = Reference::from_solution(&p.problem, &sol);
    let at = penalty(&reference_triple, reference, &p.problem, eps, &picard()).map_err(err)?;
    let f_err = (at.value - eps * std::f64::consts::SQRT_2).abs();
    let m = extract_multipliers(&at).map_err(err)?;
    let mut all = vec![m.clone()];
    let dirs = sample_directions(&p.problem, &reference_triple, 50, 1.0, 1).map_err(err)?;
    let vi = variational_inequality_residual(&m, &p.problem, &reference_triple, &sol, &dirs, &picard()).map_err(err)?;

    let start = p.triple(&l);
    let d = penalized_descent(&p.problem, reference, eps, &start, &StepRule::default(), 20, &picard()).map_err(err)?;
    if d.report.value > 0.0 {
        all.push(extract_multipliers(&d.report).map_err(err)?);
    }
    let signs = all.iter().all(|m| m.h0 <= 0.0 && m.h1 <= 0.0 && (m.norm() - 1.0).abs() <= 1e-9);
    let pass = signs && f_err <= 1e-12 && vi >= -1e-6;
    Ok((
        pass,
        format!(
            "F_eps - eps sqrt2 = {f_err:.1e}; h0={:.4} h1={:.4}; VI residual over 50 directions {vi:.2e}; {} multiplier sets checked",
            m.h0,
            m.h1,
            all.len()
        ),
    ))
}

fn c8_mp() -> Check {
    let tol = 1e-6;
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["lq-scalar", "lq-2d", "lq-scalar-suboptimal"] {
        let p = preset(name).map_err(err)?;
        let l = Lattice::new(1.0, 5).map_err(err)?;
        let triple = match (&p.kind, name) {
            (PresetKind::Lq(spec), _) => {
                let s = lq_solve(spec, &l, &LqConfig::default()).map_err(err)?;
                spec.triple(&l, s.u)
            }
            _ => p.triple(&l),
        };
        let sol = solve_state(&p.problem, &triple, &picard()).map_err(err)?;
        let frozen = FrozenCoefficients::from_spec(&p.problem, &sol, &triple).map_err(err)?;
        let w = CostateWeights::cost();
        let adj = solve_adjoint(&p.problem, &frozen, &w, &picard()).map_err(err)?;
        let r = mp_residuals(&p.problem, &triple, &sol, &adj, w.running, 8, 1, tol).map_err(err)?;
        let v = r.violations(tol);
        if name == "lq-scalar-suboptimal" {
            pass &= v == ["Hamiltonian control condition"] && r.r_u <= -1e-3;
        } else {
            pass &= v.is_empty();
        }
        parts.push(format!("{name}: r_u={:.2e} max|H_u|={:.2e} violated={v:?}", r.r_u, r.max_hu));
    }
    Ok((pass, parts.join("; ")))
}

fn c9_lq() -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, grid) in [("lq-scalar", (10, 0.2)), ("lq-2d", (4, 0.5))] {
        let p = preset(name).map_err(err)?;
        let PresetKind::Lq(spec) = &p.kind else {
            return Err(format!("{name} is not linear-quadratic"));
        };
        let l = Lattice::new(1.0, 6).map_err(err)?;
        let cfg = LqConfig {
            sign: SignChoice::Auto,
            ..LqConfig::default()
        };
        let sol = lq_solve(spec, &l, &cfg).map_err(err)?;
        let samples = sample_controls(spec, &sol.u, 8, 1.0, 1);
        let ver = lq_verify(spec, &l, &sol, &samples, &cfg).map_err(err)?;
        let values: Vec<f64> = (-grid.0..=grid.0).map(|i| i as f64 * grid.1).collect();
        let triple = spec.triple(&l, sol.u.clone());
        let (gu, gj) = grid_search_constant(&p.problem, &triple, &values, &cfg.picard).map_err(err)?;
        pass &= ver.margin >= -1e-6 && ver.uniqueness <= 1e-6 && sol.cost <= gj + 1e-6;
        parts.push(format!(
            "{name}: J*={:.5} margin={:.3} uniqueness={:.1e} grid best {gu:?} J={gj:.5}",
            sol.cost, ver.margin, ver.uniqueness
        ));
    }
    Ok((pass, parts.join("; ")))
}

fn c10_sigma() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.gen_range(1..=2);
        let d = rng.gen_range(1..=2);
        let w = k * d;
        let mut matrix: Vec<f64> = (0..w * w).map(|_| rng.gen_range(-0.5..0.5)).collect();
        for i in 0..w {
            matrix[i * w + i] = if rng.gen_bool(0.5) { 2.0 } else { -2.0 };
        }
        let slope: Vec<f64> = (0..w * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let offset: Vec<f64> = (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = AffineSigma::new(k, d, matrix, slope, offset).map_err(err)?;
        let y: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let u: Vec<f64> = (0..w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut q = vec![0.0; w];
        s.eval(&y, &u, &mut q);
        let mut back = vec![0.0; w];
        s.invert(&y, &q, &mut back);
        worst = worst.max(u.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }

    const C: f64 = 0.1;
    let p = preset("app-3.1-affine").map_err(err)?;
    let PresetKind::Classical(c) = &p.kind else {
        return Err("app-3.1-affine is not classical".into());
    };
    let l = Lattice::new(1.0, 6).map_err(err)?;
    let xi = LevelField::constant(&l, 0, &[0.2]);
    let u = AdaptedField::constant(&l, &[0.3]);
    let cs = solve_classical(c, &xi, &u).map_err(err)?;
    let cj = classical_cost(c, &xi, &u, &cs).map_err(err)?;
    let (tr, bs) = solve_backward(&p.problem, &l, &xi, &cs.y.level_field(6), &picard()).map_err(err)?;
    let bj = evaluate_cost(&tr, &p.problem, &bs).map_err(err)?;
    let diff = (cj - bj).abs();
    let pass = worst <= 1e-10 && diff <= C * l.dt();
    Ok((
        pass,
        format!("roundtrip max err {worst:.1e} over 100 instances; |J_classical - J_backward|={diff:.2e} at N=6 (bound {:.3})", C * l.dt()),
    ))
}

fn run_cli(dir: &Path, tag: &str, args: &[&str], with_out: bool) -> Result<Vec<u8>, String> {
    let report = dir.join(format!("{tag}.json"));
    let out = dir.join(format!("{tag}.csv"));
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dsmp"));
    cmd.args(args).arg("--report").arg(&report);
    if with_out {
        cmd.arg("--out").arg(&out);
    }
    let o = cmd.output().map_err(err)?;
    let mut bytes = format!("exit {:?}\n", o.status.code()).into_bytes();
    bytes.extend(&o.stdout);
    bytes.extend(&o.stderr);
    if let Ok(r) = std::fs::read(&report) {
        bytes.extend(r);
    }
    if with_out {
        bytes.extend(std::fs::read(&out).map_err(err)?);
    }
    Ok(bytes)
}

fn c11_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let runs: [(&str, &str, bool); 8] = [
        ("solve", "lq-scalar", true),
        ("cost", "nonlinear-scalar", false),
        ("adjoint", "app-3.2-linear", true),
        ("mp-check", "lq-scalar-suboptimal", false),
        ("ekeland", "paper-3.12-constrained", false),
        ("lq", "lq-2d", true),
        ("paper-example", "paper-3.12", true),
        ("certify", "nonlinear-scalar", false),
    ];
    let mut differing = Vec::new();
    for (command, name, with_out) in runs {
        let args = [command, "--preset", name, "--steps", "4"];
        let a = run_cli(dir.path(), &format!("{command}-a"), &args, with_out)?;
        let b = run_cli(dir.path(), &format!("{command}-b"), &args, with_out)?;
        if a != b || a.len() < 16 {
            differing.push(command);
        }
    }
    Ok((differing.is_empty(), format!("8 commands run twice; differing: {differing:?}")))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("worked example, exact part", c1_zero_control),
        ("worked example, convergent part", c2_refinement),
        ("BDSDE closed forms", c3_bdsde),
        ("discrete energy identity", c4_energy),
        ("duality identity", c5_duality),
        ("variational correctness", c6_variation),
        ("multiplier properties", c7_multipliers),
        ("maximum-principle detectability", c8_mp),
        ("LQ sufficiency and uniqueness", c9_lq),
        ("sigma inversion", c10_sigma),
        ("CLI determinism", c11_determinism),
    ];
    let started = Instant::now();
    let mut unexpected = Vec::new();
    for (i, (title, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        let t = Instant::now();
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        let tag = if pass { "PASS" } else { "FAIL" };
        let note = if !pass && KNOWN_RED.contains(&n) { " [known red]" } else { "" };
        println!("{tag} {n:>2} {title}{note} ({:.1}s): {detail}", t.elapsed().as_secs_f64());
        if !pass && !KNOWN_RED.contains(&n) {
            unexpected.push(n);
        }
    }
    println!("total {:.1}s", started.elapsed().as_secs_f64());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
