//! Linear dynamics with quadratic cost.
//!
//! The costate is taken with unit weights on the running, terminal and
//! initial costs, so that `H_u = E'm + E''p + E'''n + E''''delta + J u`
//! (transposes implied) and the stationary control is `u = -J^-1 (...)`.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjoint::{hamiltonian_u, solve_adjoint, AdjointSolution, CostateWeights};
use crate::control::{evaluate_cost, solve_state, ControlTriple, ConvexSet, ProblemSpec, QuadraticCost, QuadraticForm};
use crate::error::{check_dim, Error, Result};
use crate::fbdsde::{AffineCoefficients, Arg, Coef, Dims, FbdsdeSolution, PicardConfig, Point};
use crate::lattice::{AdaptedField, Lattice, LevelField};
use crate::linalg::{is_symmetric, mat_t_vec_add, max_abs, solve, symmetric_eigenvalues};
use crate::variation::FrozenCoefficients;

/// Matrices multiplying `(x, z, y, q, u)` in one coefficient, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LqBlock {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
}

impl LqBlock {
    pub fn zero(dims: &Dims, c: Coef) -> Self {
        let rows = dims.coef(c);
        let m = |a| vec![0.0; rows * dims.arg(a)];
        LqBlock {
            x: m(Arg::X),
            z: m(Arg::Z),
            y: m(Arg::Y),
            q: m(Arg::Q),
            u: m(Arg::U),
        }
    }

    pub fn get(&self, a: Arg) -> &[f64] {
        match a {
            Arg::X => &self.x,
            Arg::Z => &self.z,
            Arg::Y => &self.y,
            Arg::Q => &self.q,
            Arg::U => &self.u,
        }
    }

    pub fn get_mut(&mut self, a: Arg) -> &mut Vec<f64> {
        match a {
            Arg::X => &mut self.x,
            Arg::Z => &mut self.z,
            Arg::Y => &mut self.y,
            Arg::Q => &mut self.q,
            Arg::U => &mut self.u,
        }
    }
}

/// Cost weights: running `1/2 (F x.x + G z.z + H y.y + I q.q + J u.u)`,
/// terminal `1/2 U x.x`, initial `1/2 Q y.y`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqWeights {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub terminal: Vec<f64>,
    pub initial: Vec<f64>,
}

impl LqWeights {
    pub fn zero(dims: &Dims) -> Self {
        let sq = |n: usize| vec![0.0; n * n];
        LqWeights {
            x: sq(dims.arg(Arg::X)),
            z: sq(dims.arg(Arg::Z)),
            y: sq(dims.arg(Arg::Y)),
            q: sq(dims.arg(Arg::Q)),
            u: sq(dims.arg(Arg::U)),
            terminal: sq(dims.state),
            initial: sq(dims.backward),
        }
    }

    pub fn running(&self, a: Arg) -> &[f64] {
        match a {
            Arg::X => &self.x,
            Arg::Z => &self.z,
            Arg::Y => &self.y,
            Arg::Q => &self.q,
            Arg::U => &self.u,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqSpec {
    pub name: String,
    pub dims: Dims,
    pub forward_drift: LqBlock,
    pub forward_diffusion: LqBlock,
    pub backward_drift: LqBlock,
    pub backward_diffusion: LqBlock,
    pub weights: LqWeights,
    pub initial_state: Vec<f64>,
    pub terminal_value: Vec<f64>,
    pub control_set: ConvexSet,
}

const DEFINITENESS_TOL: f64 = 1e-12;

impl LqSpec {
    pub fn zero(name: &str, dims: Dims) -> Self {
        LqSpec {
            name: name.into(),
            dims,
            forward_drift: LqBlock::zero(&dims, Coef::ForwardDrift),
            forward_diffusion: LqBlock::zero(&dims, Coef::ForwardDiffusion),
            backward_drift: LqBlock::zero(&dims, Coef::BackwardDrift),
            backward_diffusion: LqBlock::zero(&dims, Coef::BackwardDiffusion),
            weights: LqWeights::zero(&dims),
            initial_state: vec![0.0; dims.state],
            terminal_value: vec![0.0; dims.backward],
            control_set: ConvexSet::whole(dims.control),
        }
    }

    pub fn block(&self, c: Coef) -> &LqBlock {
        match c {
            Coef::ForwardDrift => &self.forward_drift,
            Coef::ForwardDiffusion => &self.forward_diffusion,
            Coef::BackwardDrift => &self.backward_drift,
            Coef::BackwardDiffusion => &self.backward_diffusion,
        }
    }

    pub fn block_mut(&mut self, c: Coef) -> &mut LqBlock {
        match c {
            Coef::ForwardDrift => &mut self.forward_drift,
            Coef::ForwardDiffusion => &mut self.forward_diffusion,
            Coef::BackwardDrift => &mut self.backward_drift,
            Coef::BackwardDiffusion => &mut self.backward_diffusion,
        }
    }

    /// Shapes, symmetry, `J, U, Q > 0` and `F, G, H, I >= 0`.
    pub fn check_invariants(&self) -> Result<()> {
        let d = &self.dims;
        for c in Coef::ALL {
            for a in Arg::ALL {
                check_dim("dynamics block", d.coef(c) * d.arg(a), self.block(c).get(a).len())?;
            }
        }
        check_dim("initial state", d.state, self.initial_state.len())?;
        check_dim("terminal value", d.backward, self.terminal_value.len())?;
        check_dim("control set", d.control, self.control_set.dim())?;
        self.control_set.validate()?;
        let w = &self.weights;
        let named: [(&str, &[f64], usize, bool); 7] = [
            ("F", &w.x, d.arg(Arg::X), false),
            ("G", &w.z, d.arg(Arg::Z), false),
            ("H", &w.y, d.arg(Arg::Y), false),
            ("I", &w.q, d.arg(Arg::Q), false),
            ("J", &w.u, d.arg(Arg::U), true),
            ("U", &w.terminal, d.state, true),
            ("Q", &w.initial, d.backward, true),
        ];
        for (name, m, n, strict) in named {
            if m.len() != n * n {
                return Err(Error::InvalidInput(format!("weight {name} must be {n}x{n}")));
            }
            if !is_symmetric(m, n, 1e-12) {
                return Err(Error::InvalidInput(format!("weight {name} is not symmetric")));
            }
            let min = symmetric_eigenvalues(m, n).first().copied().unwrap_or(1.0);
            if strict && !(min > DEFINITENESS_TOL) {
                return Err(Error::InvalidInput(format!(
                    "weight {name} must be positive definite (smallest eigenvalue {min})"
                )));
            }
            if !strict && min < -DEFINITENESS_TOL {
                return Err(Error::InvalidInput(format!(
                    "weight {name} must be nonnegative (smallest eigenvalue {min})"
                )));
            }
        }
        Ok(())
    }

    pub fn coefficients(&self) -> Result<AffineCoefficients> {
        let mut c = AffineCoefficients::zero(self.dims);
        for coef in Coef::ALL {
            for a in Arg::ALL {
                c.set(coef, a, self.block(coef).get(a))?;
            }
        }
        Ok(c)
    }

    pub fn cost(&self) -> Result<QuadraticCost> {
        let d = self.dims;
        let mut cost = QuadraticCost::zero(d);
        for a in Arg::ALL {
            let w = self.weights.running(a);
            let n = d.arg(a);
            for i in 0..n {
                for j in 0..n {
                    if i <= j && w[i * n + j] != 0.0 {
                        cost.add_running(a, i, a, j, w[i * n + j]);
                    }
                }
            }
        }
        cost.terminal = QuadraticForm::new(d.state, self.weights.terminal.clone(), vec![0.0; d.state])?;
        cost.initial = QuadraticForm::new(d.backward, self.weights.initial.clone(), vec![0.0; d.backward])?;
        Ok(cost)
    }

    /// The general problem with `xi` and `eta` pinned to the given constants.
    pub fn to_problem(&self) -> Result<ProblemSpec> {
        self.check_invariants()?;
        Ok(ProblemSpec {
            name: self.name.clone(),
            coefficients: Box::new(self.coefficients()?),
            cost: Box::new(self.cost()?),
            terminal_constraint: None,
            initial_constraint: None,
            initial_set: ConvexSet::Box {
                lo: self.initial_state.clone(),
                hi: self.initial_state.clone(),
            },
            terminal_set: ConvexSet::Box {
                lo: self.terminal_value.clone(),
                hi: self.terminal_value.clone(),
            },
            control_set: self.control_set.clone(),
        })
    }

    pub fn triple(&self, lattice: &Lattice, u: AdaptedField) -> ControlTriple {
        ControlTriple {
            xi: LevelField::constant(lattice, 0, &self.initial_state),
            eta: LevelField::constant(lattice, lattice.steps(), &self.terminal_value),
            u,
        }
    }
}

/// `s J^-1 (E'm + E''p + E'''n + E''''delta)` at every node.
pub fn lq_optimal_control(spec: &LqSpec, adjoint: &AdjointSolution, sign: f64) -> Result<AdaptedField> {
    let d = spec.dims;
    let l = *adjoint.m.lattice();
    let mut out = AdaptedField::zeros(&l, d.control);
    let mut v = vec![0.0; d.control];
    for k in 0..=l.steps() {
        for i in 0..l.nodes() {
            v.iter_mut().for_each(|x| *x = 0.0);
            let co = adjoint.at(k, i);
            for (c, w) in Coef::ALL.into_iter().zip([co.m, co.p, co.n, co.delta]) {
                mat_t_vec_add(spec.block(c).get(Arg::U), d.coef(c), d.control, w, &mut v);
            }
            let u = solve(&spec.weights.u, d.control, &v)?;
            for (o, x) in out.at_mut(k, i).iter_mut().zip(&u) {
                *o = sign * x;
            }
        }
    }
    Ok(out)
}

/// Which sign of the control formula to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignChoice {
    /// Run both and keep the one with the smaller cost.
    Auto,
    Plus,
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LqConfig {
    pub picard: PicardConfig,
    /// Sup-norm change of `u` at which the fixed point stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation of the control update, in `(0, 1]`.
    pub damping: f64,
    pub sign: SignChoice,
}

impl Default for LqConfig {
    fn default() -> Self {
        LqConfig {
            picard: PicardConfig::default(),
            tol: 1e-10,
            max_iter: 500,
            damping: 1.0,
            sign: SignChoice::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqSolution {
    pub sign: f64,
    pub u: AdaptedField,
    pub state: FbdsdeSolution,
    pub adjoint: AdjointSolution,
    pub cost: f64,
    pub iterations: usize,
    /// `sup |H_u|` over all nodes.
    pub stationarity: f64,
    pub history: Vec<f64>,
    /// Outcome of the other sign under [`SignChoice::Auto`]: its cost, or
    /// `None` when its iteration failed.
    pub other_sign_cost: Option<Option<f64>>,
}

fn stationarity(problem: &ProblemSpec, triple: &ControlTriple, sol: &FbdsdeSolution, adj: &AdjointSolution) -> f64 {
    let l = *triple.lattice();
    let mut worst: f64 = 0.0;
    for k in 0..=l.steps() {
        for i in 0..l.nodes() {
            let p = Point {
                x: sol.x.at(k, i),
                z: sol.z.at(k, i),
                y: sol.y.at(k, i),
                q: sol.q.at(k, i),
                u: triple.u.at(k, i),
            };
            let hu = hamiltonian_u(problem, l.node(k, i), &p, &adj.at(k, i), 1.0);
            worst = worst.max(max_abs(&hu));
        }
    }
    worst
}

/// State, costate and cost at a control.
pub fn lq_evaluate(
    problem: &ProblemSpec,
    triple: &ControlTriple,
    cfg: &PicardConfig,
) -> Result<(FbdsdeSolution, AdjointSolution, f64)> {
    let sol = solve_state(problem, triple, cfg)?;
    let frozen = FrozenCoefficients::from_spec(problem, &sol, triple)?;
    let adj = solve_adjoint(problem, &frozen, &CostateWeights::cost(), cfg)?;
    let cost = evaluate_cost(triple, problem, &sol)?;
    Ok((sol, adj, cost))
}

/// The damped fixed point `u <- (1 - theta) u + theta s J^-1 (...)` from `start`.
pub fn lq_solve_from(
    spec: &LqSpec,
    problem: &ProblemSpec,
    start: &AdaptedField,
    sign: f64,
    cfg: &LqConfig,
) -> Result<LqSolution> {
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(Error::Config(format!("damping {} must lie in (0, 1]", cfg.damping)));
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::Config("tolerance and iteration cap must be positive".into()));
    }
    let l = *start.lattice();
    let mut u = start.clone();
    let mut history = Vec::new();
    for iter in 1..=cfg.max_iter {
        let triple = spec.triple(&l, u.clone());
        let (_, adj, _) = lq_evaluate(problem, &triple, &cfg.picard)?;
        let target = lq_optimal_control(spec, &adj, sign)?;
        let change = target.max_abs_diff(&u)?;
        if !change.is_finite() || change > 1e12 {
            history.push(change);
            return Err(Error::NonConvergence {
                what: "control fixed point",
                iterations: iter,
                history,
            });
        }
        history.push(change);
        let mut next = target;
        next.blend(cfg.damping, &u);
        u = next;
        if change <= cfg.tol {
            let triple = spec.triple(&l, u.clone());
            let (state, adjoint, cost) = lq_evaluate(problem, &triple, &cfg.picard)?;
            let stationarity = stationarity(problem, &triple, &state, &adjoint);
            return Ok(LqSolution {
                sign,
                u,
                state,
                adjoint,
                cost,
                iterations: iter,
                stationarity,
                history,
                other_sign_cost: None,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "control fixed point",
        iterations: cfg.max_iter,
        history,
    })
}

/// Solves from `u = 0` with the configured sign choice.
pub fn lq_solve(spec: &LqSpec, lattice: &Lattice, cfg: &LqConfig) -> Result<LqSolution> {
    let problem = spec.to_problem()?;
    let start = AdaptedField::zeros(lattice, spec.dims.control);
    match cfg.sign {
        SignChoice::Plus => lq_solve_from(spec, &problem, &start, 1.0, cfg),
        SignChoice::Minus => lq_solve_from(spec, &problem, &start, -1.0, cfg),
        SignChoice::Auto => {
            let minus = lq_solve_from(spec, &problem, &start, -1.0, cfg);
            let plus = lq_solve_from(spec, &problem, &start, 1.0, cfg);
            match (minus, plus) {
                (Ok(mut a), Ok(b)) => {
                    if b.cost < a.cost {
                        let mut b = b;
                        b.other_sign_cost = Some(Some(a.cost));
                        Ok(b)
                    } else {
                        a.other_sign_cost = Some(Some(b.cost));
                        Ok(a)
                    }
                }
                (Ok(mut a), Err(_)) => {
                    a.other_sign_cost = Some(None);
                    Ok(a)
                }
                (Err(_), Ok(mut b)) => {
                    b.other_sign_cost = Some(None);
                    Ok(b)
                }
                (Err(e), Err(_)) => Err(e),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqVerification {
    /// `min_v J(v) - J(u*)` over the samples.
    pub margin: f64,
    pub samples: usize,
    /// `sup |u*_1 - u*_2|` between the fixed points from two starts.
    pub uniqueness: f64,
    pub second_start_iterations: usize,
}

/// Sufficiency over `samples` and uniqueness against a second start at
/// `u* + 1`.
pub fn lq_verify(
    spec: &LqSpec,
    lattice: &Lattice,
    solution: &LqSolution,
    samples: &[AdaptedField],
    cfg: &LqConfig,
) -> Result<LqVerification> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    let problem = spec.to_problem()?;
    let mut margin = f64::INFINITY;
    for v in samples {
        let triple = spec.triple(lattice, v.clone());
        let sol = solve_state(&problem, &triple, &cfg.picard)?;
        margin = margin.min(evaluate_cost(&triple, &problem, &sol)? - solution.cost);
    }
    let mut start = solution.u.clone();
    let shift = AdaptedField::constant(lattice, &vec![1.0; spec.dims.control]);
    start.axpy(1.0, &shift)?;
    let second = lq_solve_from(spec, &problem, &start, solution.sign, cfg)?;
    Ok(LqVerification {
        margin,
        samples: samples.len(),
        uniqueness: second.u.max_abs_diff(&solution.u)?,
        second_start_iterations: second.iterations,
    })
}

/// `center` plus nodewise uniform noise of the given reach, projected onto `K`.
pub fn sample_controls(spec: &LqSpec, center: &AdaptedField, count: usize, reach: f64, seed: u64) -> Vec<AdaptedField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = *center.lattice();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = center.clone();
        for k in 0..=l.steps() {
            for i in 0..l.nodes() {
                let slot = v.at_mut(k, i);
                slot.iter_mut().for_each(|x| *x += rng.gen_range(-reach..=reach));
                let p = slot.to_vec();
                spec.control_set.project(&p, slot);
            }
        }
        out.push(v);
    }
    out
}

/// Best constant control over the product grid `values^m`.
pub fn grid_search_constant(
    problem: &ProblemSpec,
    base: &ControlTriple,
    values: &[f64],
    cfg: &PicardConfig,
) -> Result<(Vec<f64>, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("empty grid".into()));
    }
    let m = problem.dims().control;
    let l = *base.lattice();
    let total = values.len().checked_pow(m as u32).filter(|t| *t <= 1 << 16).ok_or_else(|| {
        Error::InvalidInput(format!("grid of {} values in dimension {m} is too large", values.len()))
    })?;
    let mut best = (Vec::new(), f64::INFINITY);
    for idx in 0..total {
        let mut r = idx;
        let u: Vec<f64> = (0..m)
            .map(|_| {
                let v = values[r % values.len()];
                r /= values.len();
                v
            })
            .collect();
        if !problem.control_set.contains(&u, 1e-12) {
            continue;
        }
        let triple = ControlTriple {
            u: AdaptedField::constant(&l, &u),
            ..base.clone()
        };
        let sol = solve_state(problem, &triple, cfg)?;
        let j = evaluate_cost(&triple, problem, &sol)?;
        if j < best.1 {
            best = (u, j);
        }
    }
    Ok(best)
}
