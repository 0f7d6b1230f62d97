//! Command orchestration.

use dsmp_core::adjoint::{mp_residuals, solve_adjoint, CostateWeights, MpReport, SetCheck};
use dsmp_core::applications::bdsde_only::bdsde_mp_residuals;
use dsmp_core::applications::classical::{classical_adjoints, ClassicalSpec};
use dsmp_core::applications::example::{paper_example, REFINEMENT_STEPS};
use dsmp_core::applications::lq::{
    grid_search_constant, lq_solve, lq_verify, sample_controls, LqConfig, LqSolution, LqSpec,
};
use dsmp_core::control::{
    constraint_residuals, cost_breakdown, solve_state, ControlTriple, ProblemSpec,
};
use dsmp_core::ekeland::{
    extract_multipliers, penalized_descent, penalty, sample_directions, variational_inequality_residual,
    PenaltyReport, Reference, StepRule,
};
use dsmp_core::fbdsde::{certify_lipschitz, certify_monotonicity, check_partials, fbdsde_residuals, PicardConfig};
use dsmp_core::lattice::{Lattice, LevelField, DEFAULT_MAX_BITS};
use dsmp_core::presets::{preset, ControlProfile, PresetKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{envelope, expectations, table_csv, trajectory_csv};

pub const CERTIFY_SAMPLES: usize = 2000;
/// Reach of the sampled perturbations in sufficiency and inequality checks.
pub const SAMPLE_REACH: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Solve,
    Cost,
    Adjoint,
    MpCheck,
    Ekeland,
    Lq,
    PaperExample,
    Certify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Cost => "cost",
            Command::Adjoint => "adjoint",
            Command::MpCheck => "mp-check",
            Command::Ekeland => "ekeland",
            Command::Lq => "lq",
            Command::PaperExample => "paper-example",
            Command::Certify => "certify",
        }
    }
}

/// A finished run: the report is always written; `failure` decides the
/// exit status afterwards.
pub struct Outcome {
    pub report: Value,
    pub csv: Option<String>,
    pub failure: Option<CliError>,
}

enum Kind {
    General,
    Lq(LqSpec),
    Classical(ClassicalSpec),
    Bdsde,
}

impl Kind {
    fn name(&self) -> &'static str {
        match self {
            Kind::General => "general",
            Kind::Lq(_) => "linear-quadratic",
            Kind::Classical(_) => "forward-sde-backward-form",
            Kind::Bdsde => "single-backward-equation",
        }
    }
}

struct Problem {
    name: String,
    spec: ProblemSpec,
    kind: Kind,
    xi: Vec<f64>,
    eta: Vec<f64>,
    control: ControlProfile,
    /// Set when the config supplies the control.
    explicit_control: bool,
    optimum: Option<ControlProfile>,
    lattice: Lattice,
}

fn check_len(what: &str, v: &[f64], n: usize) -> Result<(), CliError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(CliError::config(format!("{what} has {} entries, expected {n}", v.len())))
    }
}

impl Problem {
    fn load(cfg: &RunConfig) -> Result<Problem, CliError> {
        let (name, spec, kind, xi, eta, control, optimum) = match (&cfg.preset, &cfg.problem) {
            (Some(name), None) => {
                let p = preset(name).map_err(CliError::from_core_config)?;
                let kind = match p.kind {
                    PresetKind::General => Kind::General,
                    PresetKind::Lq(s) => Kind::Lq(s),
                    PresetKind::Classical(c) => Kind::Classical(c),
                    PresetKind::Bdsde => Kind::Bdsde,
                };
                (p.name.to_string(), p.problem, kind, p.xi, p.eta, p.control, p.optimum)
            }
            (None, Some(def)) => {
                let lq = def.build()?;
                let spec = lq.to_problem().map_err(CliError::from_core_config)?;
                let control = ControlProfile::constant(&vec![0.0; lq.dims.control]);
                let (xi, eta) = (lq.initial_state.clone(), lq.terminal_value.clone());
                (lq.name.clone(), spec, Kind::Lq(lq), xi, eta, control, None)
            }
            _ => return Err(CliError::config("a preset or an inline problem is required")),
        };
        let dims = spec.dims();
        let xi = cfg.xi.clone().unwrap_or(xi);
        let eta = cfg.eta.clone().unwrap_or(eta);
        check_len("xi", &xi, dims.state)?;
        check_len("eta", &eta, dims.backward)?;
        let explicit_control = cfg.control.is_some();
        let control = match &cfg.control {
            Some(c) => ControlProfile {
                offset: c.offset.clone(),
                slope: c.slope.clone().unwrap_or_else(|| vec![0.0; c.offset.len()]),
            },
            None => control,
        };
        check_len("control offset", &control.offset, dims.control)?;
        check_len("control slope", &control.slope, dims.control)?;
        if cfg.steps * dims.driver > DEFAULT_MAX_BITS {
            return Err(CliError::config("steps times driver dimension exceeds the lattice cap"));
        }
        let lattice = Lattice::with_options(cfg.horizon, cfg.steps, dims.driver, DEFAULT_MAX_BITS)
            .map_err(CliError::from_core_config)?;
        Ok(Problem {
            name,
            spec,
            kind,
            xi,
            eta,
            control,
            explicit_control,
            optimum,
            lattice,
        })
    }

    fn triple_with(&self, control: &ControlProfile) -> ControlTriple {
        ControlTriple {
            xi: LevelField::constant(&self.lattice, 0, &self.xi),
            eta: LevelField::constant(&self.lattice, self.lattice.steps(), &self.eta),
            u: control.field(&self.lattice),
        }
    }

    /// The control to analyse: the configured one, the solved optimum of a
    /// linear-quadratic problem, or the preset default.
    fn candidate(&self, cfg: &RunConfig) -> Result<(ControlTriple, Option<LqSolution>), CliError> {
        match &self.kind {
            Kind::Lq(spec) if !self.explicit_control => {
                let sol = lq_solve(spec, &self.lattice, &lq_config(cfg))?;
                let triple = ControlTriple {
                    u: sol.u.clone(),
                    ..self.triple_with(&self.control)
                };
                Ok((triple, Some(sol)))
            }
            _ => Ok((self.triple_with(&self.control), None)),
        }
    }

    fn describe(&self) -> Value {
        let d = self.spec.dims();
        json!({
            "name": self.name,
            "kind": self.kind.name(),
            "dims": { "state": d.state, "backward": d.backward, "driver": d.driver, "control": d.control },
            "steps": self.lattice.steps(),
            "dt": self.lattice.dt(),
            "xi": self.xi,
            "eta": self.eta,
        })
    }
}

pub fn picard(cfg: &RunConfig) -> PicardConfig {
    PicardConfig {
        damping: cfg.damping,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
    }
}

pub fn lq_config(cfg: &RunConfig) -> LqConfig {
    LqConfig {
        picard: picard(cfg),
        tol: cfg.lq_tol,
        max_iter: cfg.max_iter,
        damping: cfg.damping,
        sign: cfg.sign.choice(),
    }
}

/// Cost weights with zero multipliers on whatever constraints the problem has.
fn cost_weights(spec: &ProblemSpec) -> CostateWeights {
    CostateWeights {
        h2: spec.initial_constraint.as_ref().map(|c| vec![0.0; c.target.len()]).unwrap_or_default(),
        h3: spec.terminal_constraint.as_ref().map(|c| vec![0.0; c.target.len()]).unwrap_or_default(),
        ..CostateWeights::cost()
    }
}

fn set_check(s: &SetCheck) -> Value {
    json!({ "nodes": s.nodes, "on_boundary": s.on_boundary, "max_violation": s.max_violation })
}

fn mp_json(r: &MpReport, tol: f64) -> Value {
    json!({
        "r_xi": r.r_xi,
        "r_eta": r.r_eta,
        "r_u": r.r_u,
        "max_hu": r.max_hu,
        "xi": set_check(&r.xi),
        "eta": set_check(&r.eta),
        "u": set_check(&r.u),
        "tolerance": tol,
        "violated": r.violations(tol),
    })
}

fn penalty_json(r: &PenaltyReport) -> Value {
    json!({
        "value": r.value,
        "components": r.components,
        "terminal_gap": r.terminal_gap,
        "initial_gap": r.initial_gap,
        "epsilon": r.epsilon,
    })
}

fn lq_sign(sol: &Option<LqSolution>) -> Option<f64> {
    sol.as_ref().map(|s| s.sign)
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (result, csv, failure, sign) = match command {
        Command::PaperExample => run_paper_example(cfg)?,
        _ => {
            let problem = Problem::load(cfg)?;
            let mut out = match command {
                Command::Solve => run_solve(&problem, cfg)?,
                Command::Cost => run_cost(&problem, cfg)?,
                Command::Adjoint => run_adjoint(&problem, cfg)?,
                Command::MpCheck => run_mp_check(&problem, cfg)?,
                Command::Ekeland => run_ekeland(&problem, cfg)?,
                Command::Lq => run_lq(&problem, cfg)?,
                Command::Certify => run_certify(&problem, cfg)?,
                Command::PaperExample => unreachable!("handled above"),
            };
            if let Value::Object(m) = &mut out.0 {
                m.insert("problem".into(), problem.describe());
            }
            out
        }
    };
    if cfg.out.is_some() && csv.is_none() {
        return Err(CliError::config(format!("command {} writes no CSV output", command.name())));
    }
    Ok(Outcome {
        report: envelope(command.name(), cfg, sign, result),
        csv,
        failure,
    })
}

type Parts = (Value, Option<String>, Option<CliError>, Option<f64>);

fn run_solve(p: &Problem, cfg: &RunConfig) -> Result<Parts, CliError> {
    let (triple, lq) = p.candidate(cfg)?;
    let sol = solve_state(&p.spec, &triple, &picard(cfg))?;
    let (fwd, bwd) = fbdsde_residuals(p.spec.coefficients.as_ref(), &sol, &triple.u)?;
    let result = json!({
        "picard": {
            "iterations": sol.iterations,
            "residual": sol.residual,
            "final_damping": sol.damping,
            "history": sol.history,
        },
        "one_step_residuals": { "forward": fwd, "backward": bwd },
        "expectations": {
            "x": expectations(&sol.x),
            "z": expectations(&sol.z),
            "y": expectations(&sol.y),
            "q": expectations(&sol.q),
            "u": expectations(&triple.u),
        },
    });
    let csv = match cfg.out {
        Some(_) => Some(trajectory_csv(
            &p.lattice,
            &[("x", &sol.x), ("z", &sol.z), ("y", &sol.y), ("q", &sol.q)],
        )?),
        None => None,
    };
    Ok((result, csv, None, lq_sign(&lq)))
}

fn run_cost(p: &Problem, cfg: &RunConfig) -> Result<Parts, CliError> {
    let (triple, lq) = p.candidate(cfg)?;
    let sol = solve_state(&p.spec, &triple, &picard(cfg))?;
    let b = cost_breakdown(&triple, &p.spec, &sol)?;
    let gaps = constraint_residuals(&p.spec, &sol)?;
    let result = json!({
        "J": b.total,
        "breakdown": {
            "running": b.running,
            "xi": b.xi,
            "eta": b.eta,
            "terminal": b.terminal,
            "initial": b.initial,
        },
        "constraints": {
            "terminal_gap": gaps.terminal_gap,
            "initial_gap": gaps.initial_gap,
        },
        "admissibility_violation": triple.admissibility_violation(&p.spec),
    });
    Ok((result, None, None, lq_sign(&lq)))
}

fn run_adjoint(p: &Problem, cfg: &RunConfig) -> Result<Parts, CliError> {
    let (triple, lq) = p.candidate(cfg)?;
    let pc = picard(cfg);
    let sol = solve_state(&p.spec, &triple, &pc)?;
    let frozen = dsmp_core::variation::FrozenCoefficients::from_spec(&p.spec, &sol, &triple)?;
    let w = cost_weights(&p.spec);
    let adj = solve_adjoint(&p.spec, &frozen, &w, &pc)?;
    let result = json!({
        "weights": { "h0": w.h0, "h1": w.h1, "h2": w.h2, "h3": w.h3, "running": w.running },
        "iterations": adj.iterations,
        "residual": adj.residual,
        "expectations": {
            "m": expectations(&adj.m),
            "p": expectations(&adj.p),
            "n": expectations(&adj.n),
            "delta": expectations(&adj.delta),
        },
    });
    let csv = match cfg.out {
        Some(_) => Some(trajectory_csv(
            &p.lattice,
            &[("m", &adj.m), ("p", &adj.p), ("n", &adj.n), ("delta", &adj.delta)],
        )?),
        None => None,
    };
    Ok((result, csv, None, lq_sign(&lq)))
}

fn run_mp_check(p: &Problem, cfg: &RunConfig) -> Result<Parts, CliError> {
    let (triple, lq) = p.candidate(cfg)?;
    let pc = picard(cfg);
    let sol = solve_state(&p.spec, &triple, &pc)?;
    let tol = cfg.mp_tol;
    let (result, violated) = match &p.kind {
        Kind::Classical(c) => {
            let r = classical_adjoints(c, &p.spec, &triple, &sol, cfg.samples, cfg.seed, &pc)?;
            let mut violated = Vec::new();
            if r.r_xi > tol {
                violated.push("initial transversality");
            }
            if r.r_eta < -tol {
                violated.push("terminal transversality");
            }
            let v = json!({
                "r_xi": r.r_xi,
                "r_eta": r.r_eta,
                "multiplier": r.multiplier,
                "pathwise_initial_gap": r.pathwise_gap,
                "expectation_initial_gap": r.expectation_gap,
                "tolerance": tol,
                "violated": violated,
            });
            (v, violated)
        }
        Kind::Bdsde => {
            let w = cost_weights(&p.spec);
            let (_, r) = bdsde_mp_residuals(&p.spec, &triple, &sol, &w, cfg.samples, cfg.seed, tol)?;
            (mp_json(&r, tol), r.violations(tol))
        }
        _ => {
            let frozen = dsmp_core::variation::FrozenCoefficients::from_spec(&p.spec, &sol, &triple)?;
            let w = cost_weights(&p.spec);
            let adj = solve_adjoint(&p.spec, &frozen, &w, &pc)?;
            let r = mp_residuals(&p.spec, &triple, &sol, &adj, w.running, cfg.samples, cfg.seed, tol)?;
            (mp_json(&r, tol), r.violations(tol))
        }
    };
    let failure = if violated.is_empty() {
        None
    } else {
        Some(CliError::violation(
            format!("maximum principle violated: {}", violated.join(", ")),
            violated.iter().map(|s| s.to_string()).collect(),
        ))
    };
    let result = json!({ "passed": failure.is_none(), "residuals": result });
    Ok((result, None, failure, lq_sign(&lq)))
}

fn run_ekeland(p: &Problem, cfg: &RunConfig) -> Result<Parts, CliError> {
    let pc = picard(cfg);
    let (start, lq) = match &p.kind {
        // The optimum itself is a poor start; use the configured or zero control.
        Kind::Lq(_) => (p.triple_with(&p.control), None),
        _ => p.candidate(cfg)?,
    };
    let reference_triple = match (&p.optimum, &p.kind) {
        (Some(o), _) => p.triple_with(o),
        (None, Kind::Lq(spec)) => {
            let sol = lq_solve(spec, &p.lattice, &lq_config(cfg))?;
            ControlTriple {
                u: sol.u,
                ..p.triple_with(&p.control)
            }
        }
        (None, _) => start.clone(),
    };
    let reference_solution = solve_state(&p.spec, &reference_triple, &pc)?;
    let reference = Reference::from_solution(&p.spec, &reference_solution);
    let at_reference = penalty(&reference_triple, reference, &p.spec, cfg.epsilon, &pc)?;
    let reference_multipliers = extract_multipliers(&at_reference)?;
    let ref_dirs = sample_directions(&p.spec, &reference_triple, cfg.directions, SAMPLE_REACH, cfg.seed)?;
    let ref_vi = variational_inequality_residual(
        &reference_multipliers,
        &p.spec,
        &reference_triple,
        &reference_solution,
        &ref_dirs,
        &pc,
    )?;

    let descent = penalized_descent(&p.spec, reference, cfg.epsilon, &start, &StepRule::default(), cfg.descent_iter, &pc)?;
    let final_multipliers = if descent.report.value > 0.0 {
        let m = extract_multipliers(&descent.report)?;
        let cand = &descent.report.candidate;
        let sol = solve_state(&p.spec, cand, &pc)?;
        let dirs = sample_directions(&p.spec, cand, cfg.directions, SAMPLE_REACH, cfg.seed)?;
        let vi = variational_inequality_residual(&m, &p.spec, cand, &sol, &dirs, &pc)?;
        json!({ "h0": m.h0, "h1": m.h1, "h2": m.h2, "h3": m.h3, "norm": m.norm(), "inequality_residual": vi })
    } else {
        Value::Null
    };
    let m = &reference_multipliers;
    let result = json!({
        "epsilon": cfg.epsilon,
        "reference": {
            "terminal_cost": reference.terminal,
            "initial_cost": reference.initial,
            "penalty": penalty_json(&at_reference),
            "expected_penalty_if_feasible": std::f64::consts::SQRT_2 * cfg.epsilon,
            "multipliers": { "h0": m.h0, "h1": m.h1, "h2": m.h2, "h3": m.h3, "norm": m.norm() },
            "inequality_residual": ref_vi,
            "directions": cfg.directions,
        },
        "descent": {
            "history": descent.history,
            "final": penalty_json(&descent.report),
            "distance_from_start": descent.distance,
            "ball_radius": descent.radius,
            "stalled": descent.stalled,
            "multipliers": final_multipliers,
        },
    });
    Ok((result, None, None, lq_sign(&lq)))
}

fn grid_values(m: usize) -> Vec<f64> {
    let (n, h) = if m == 1 { (10, 0.2) } else { (4, 0.5) };
    (-n..=n).map(|i| i as f64 * h).collect()
}

fn run_lq(p: &Problem, cfg: &RunConfig) -> Result<Parts, CliError> {
    let Kind::Lq(spec) = &p.kind else {
        return Err(CliError::config(format!("problem '{}' is not linear-quadratic", p.name)));
    };
    let lc = lq_config(cfg);
    let sol = lq_solve(spec, &p.lattice, &lc)?;
    let samples = sample_controls(spec, &sol.u, cfg.samples, SAMPLE_REACH, cfg.seed);
    let ver = lq_verify(spec, &p.lattice, &sol, &samples, &lc)?;
    let triple = spec.triple(&p.lattice, sol.u.clone());
    let (grid_u, grid_j) = grid_search_constant(&p.spec, &triple, &grid_values(spec.dims.control), &lc.picard)?;
    let tol = cfg.mp_tol;
    let mut violated = Vec::new();
    if ver.margin < -tol {
        violated.push("sufficiency".to_string());
    }
    if ver.uniqueness > tol {
        violated.push("uniqueness".to_string());
    }
    if sol.cost > grid_j + tol {
        violated.push("grid minimality".to_string());
    }
    let result = json!({
        "sign": sol.sign,
        "other_sign_cost": match sol.other_sign_cost {
            Some(Some(c)) => json!(c),
            Some(None) => json!("diverged"),
            None => Value::Null,
        },
        "J": sol.cost,
        "iterations": sol.iterations,
        "stationarity": sol.stationarity,
        "history": sol.history,
        "u_expectation": expectations(&sol.u),
        "verification": {
            "samples": ver.samples,
            "reach": SAMPLE_REACH,
            "margin": ver.margin,
            "uniqueness": ver.uniqueness,
            "second_start_iterations": ver.second_start_iterations,
            "grid_best_control": grid_u,
            "grid_best_J": grid_j,
            "tolerance": tol,
            "violated": violated,
        },
    });
    let failure = if violated.is_empty() {
        None
    } else {
        Some(CliError::violation(format!("LQ verification failed: {}", violated.join(", ")), violated))
    };
    let csv = match cfg.out {
        Some(_) => Some(trajectory_csv(
            &p.lattice,
            &[("x", &sol.state.x), ("z", &sol.state.z), ("y", &sol.state.y), ("q", &sol.state.q), ("u", &sol.u)],
        )?),
        None => None,
    };
    Ok((result, csv, failure, Some(sol.sign)))
}

fn run_paper_example(cfg: &RunConfig) -> Result<Parts, CliError> {
    let r = paper_example(cfg.steps, &REFINEMENT_STEPS, &picard(cfg))?;
    let rows: Vec<Value> = r
        .rows
        .iter()
        .map(|row| json!({ "steps": row.steps, "dt": row.dt, "J_u1": row.cost_one, "J_ut": row.cost_t }))
        .collect();
    let fit = |f: &dsmp_core::applications::fit::Fit, expected: f64| {
        json!({
            "limit": f.limit,
            "coefficient": f.coefficient,
            "order": f.order,
            "rss": f.rss,
            "expected_limit": expected,
            "within_tolerance": (f.limit - expected).abs() <= 0.05 && f.order >= 0.7,
        })
    };
    let z = &r.zero;
    let exact = z.max_state <= 1e-12 && z.max_costate <= 1e-12 && z.cost == 0.0;
    let result = json!({
        "zero_control": {
            "steps": z.steps,
            "max_state": z.max_state,
            "max_costate": z.max_costate,
            "J": z.cost,
            "max_hu": z.max_hu,
            "exact": exact,
        },
        "refinement": rows,
        "fit_u1": fit(&r.fit_one, r.expected_one),
        "fit_ut": fit(&r.fit_t, r.expected_t),
    });
    let failure = if exact {
        None
    } else {
        Some(CliError::violation(
            "zero control does not give the zero solution",
            vec!["zero solution".into()],
        ))
    };
    let csv = match cfg.out {
        Some(_) => Some(table_csv(
            &["steps", "dt", "J_u1", "J_ut"],
            &r.rows.iter().map(|row| vec![row.steps as f64, row.dt, row.cost_one, row.cost_t]).collect::<Vec<_>>(),
        )?),
        None => None,
    };
    Ok((result, csv, failure, None))
}

fn run_certify(p: &Problem, cfg: &RunConfig) -> Result<Parts, CliError> {
    let coeffs = p.spec.coefficients.as_ref();
    let u = p.control.offset.clone();
    let mono = certify_monotonicity(coeffs, &p.lattice, &u, CERTIFY_SAMPLES, cfg.seed)?;
    let lip = certify_lipschitz(coeffs, &p.lattice, &u, CERTIFY_SAMPLES, cfg.seed)?;
    let partials = check_partials(coeffs, &p.lattice, CERTIFY_SAMPLES / 10, cfg.seed)?;
    let mut violated = Vec::new();
    if !mono.certified {
        violated.push("monotonicity".to_string());
    }
    if !lip.certified {
        violated.push("Lipschitz".to_string());
    }
    if partials > 1e-5 {
        violated.push("partial derivatives".to_string());
    }
    let sigma = match &p.kind {
        Kind::Classical(c) => {
            let s = &c.sigma;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let k = c.coefficients.dims().backward;
            let m = s.width();
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let y: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let uu: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let mut q = vec![0.0; m];
                s.eval(&y, &uu, &mut q);
                let mut back = vec![0.0; m];
                s.invert(&y, &q, &mut back);
                worst = back.iter().zip(&uu).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
            }
            if !(s.margin() > 0.0) || worst > 1e-10 {
                violated.push("sigma invertibility".to_string());
            }
            json!({ "margin": s.margin(), "roundtrip_error": worst, "instances": 100 })
        }
        _ => Value::Null,
    };
    let result = json!({
        "control": u,
        "samples": CERTIFY_SAMPLES,
        "monotonicity": { "mu": mono.mu, "certified": mono.certified },
        "lipschitz": { "constant": lip.constant, "alpha": lip.alpha, "certified": lip.certified },
        "partials_max_error": partials,
        "sigma": sigma,
        "violated": violated,
    });
    let failure = if violated.is_empty() {
        None
    } else {
        Some(CliError::violation(format!("hypotheses not certified: {}", violated.join(", ")), violated))
    };
    Ok((result, None, failure, None))
}
