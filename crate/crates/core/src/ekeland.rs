//! Penalized search for near-optimal constrained controls and the
//! multipliers it produces.
//!
//! The penalty is the Euclidean norm of
//! `(|E psi(x_N) - a|, |E h(y_0) - b|, (E[phi* - phi(x_N)] + eps)+, (E[gamma* - gamma(y_0)] + eps)+)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjoint::{boundary_functional, costate_gradient, solve_adjoint, CostateWeights, Multipliers};
use crate::control::{constraint_residuals, solve_state, ControlTriple, ProblemSpec};
use crate::error::{Error, Result};
use crate::fbdsde::{FbdsdeSolution, PicardConfig};
use crate::linalg::norm;
use crate::variation::{solve_variational, FrozenCoefficients};

/// `(E|xi1-xi2|^2)^1/2 + (E|eta1-eta2|^2)^1/2 + (E sum_{k<N} |u1-u2|^2 dt)^1/2`.
pub fn metric_d(a: &ControlTriple, b: &ControlTriple) -> Result<f64> {
    let d = a.direction_to(b)?;
    let l = *a.lattice();
    let nodes = l.nodes() as f64;
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / nodes;
    let u: f64 = (0..l.steps()).map(|k| sq(d.u.level(k))).sum::<f64>() * l.dt();
    Ok(libm::sqrt(sq(d.xi.as_slice())) + libm::sqrt(sq(d.eta.as_slice())) + libm::sqrt(u))
}

/// Optimal values `E phi(x*_N)` and `E gamma(y*_0)` the penalty compares against.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Reference {
    pub terminal: f64,
    pub initial: f64,
}

impl Reference {
    pub fn from_solution(spec: &ProblemSpec, sol: &FbdsdeSolution) -> Self {
        let l = *sol.x.lattice();
        let n = l.steps();
        let nodes = l.nodes() as f64;
        Reference {
            terminal: (0..l.nodes()).map(|i| spec.cost.terminal_cost(sol.x.at(n, i))).sum::<f64>() / nodes,
            initial: (0..l.nodes()).map(|i| spec.cost.initial_cost(sol.y.at(0, i))).sum::<f64>() / nodes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyReport {
    pub value: f64,
    /// `(|E psi - a|, |E h - b|, phi term, gamma term)`.
    pub components: [f64; 4],
    pub terminal_gap: Vec<f64>,
    pub initial_gap: Vec<f64>,
    pub candidate: ControlTriple,
    pub epsilon: f64,
}

impl PenaltyReport {
    /// Multiplier-shaped costate weights: `dF` along a direction is the
    /// boundary functional under these weights. All zero when `F = 0`.
    pub fn weights(&self) -> CostateWeights {
        let f = if self.value > 0.0 { self.value } else { f64::INFINITY };
        CostateWeights {
            h0: -self.components[3] / f,
            h1: -self.components[2] / f,
            h2: self.initial_gap.iter().map(|v| v / f).collect(),
            h3: self.terminal_gap.iter().map(|v| v / f).collect(),
            running: 0.0,
        }
    }
}

fn penalty_with_solution(
    candidate: &ControlTriple,
    reference: Reference,
    spec: &ProblemSpec,
    epsilon: f64,
    cfg: &PicardConfig,
) -> Result<(PenaltyReport, FbdsdeSolution)> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(alloc::format!("epsilon {epsilon} must be positive")));
    }
    let sol = solve_state(spec, candidate, cfg)?;
    let gaps = constraint_residuals(spec, &sol)?;
    let actual = Reference::from_solution(spec, &sol);
    let components = [
        gaps.terminal(),
        gaps.initial(),
        (reference.terminal - actual.terminal + epsilon).max(0.0),
        (reference.initial - actual.initial + epsilon).max(0.0),
    ];
    let report = PenaltyReport {
        value: norm(&components),
        components,
        terminal_gap: gaps.terminal_gap,
        initial_gap: gaps.initial_gap,
        candidate: candidate.clone(),
        epsilon,
    };
    Ok((report, sol))
}

pub fn penalty(
    candidate: &ControlTriple,
    reference: Reference,
    spec: &ProblemSpec,
    epsilon: f64,
    cfg: &PicardConfig,
) -> Result<PenaltyReport> {
    Ok(penalty_with_solution(candidate, reference, spec, epsilon, cfg)?.0)
}

/// Normalized penalty components; inactive components give zero multipliers.
pub fn extract_multipliers(report: &PenaltyReport) -> Result<Multipliers> {
    if !(report.value > 0.0) {
        return Err(Error::ZeroNorm("penalty value"));
    }
    let w = report.weights();
    Multipliers::new(w.h0, w.h1, w.h2, w.h3)
}

/// Backtracking parameters for [`penalized_descent`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRule {
    /// First trial step; `None` uses a tenth of the largest finite set
    /// diameter, or 1 when every set is unbounded.
    pub initial: Option<f64>,
    pub min_step: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule {
            initial: None,
            min_step: 1e-6,
            armijo: 1e-4,
        }
    }
}

impl StepRule {
    fn first_step(&self, spec: &ProblemSpec) -> f64 {
        if let Some(s) = self.initial {
            return s;
        }
        let diam = [&spec.initial_set, &spec.terminal_set, &spec.control_set]
            .iter()
            .map(|s| s.diameter())
            .filter(|d| d.is_finite() && *d > 0.0)
            .fold(f64::NAN, f64::max);
        if diam.is_nan() {
            1.0
        } else {
            0.1 * diam
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescentResult {
    pub report: PenaltyReport,
    /// Penalty value after every accepted step, starting value first.
    pub history: Vec<f64>,
    /// Distance from the start to the candidate.
    pub distance: f64,
    /// Radius `(sqrt(2) eps)^(1/2)` of the near-minimizer ball.
    pub radius: f64,
    /// No descent direction was found at the start.
    pub stalled: bool,
}

/// `dF` along `direction` at the report's candidate.
fn penalty_slope(
    spec: &ProblemSpec,
    report: &PenaltyReport,
    sol: &FbdsdeSolution,
    direction: &ControlTriple,
    cfg: &PicardConfig,
) -> Result<f64> {
    let frozen = FrozenCoefficients::from_spec(spec, sol, &report.candidate)?;
    let var = solve_variational(&frozen, direction, cfg)?;
    boundary_functional(spec, sol, &var, &report.weights())
}

/// Projected steepest descent on the penalty with backtracking.
pub fn penalized_descent(
    spec: &ProblemSpec,
    reference: Reference,
    epsilon: f64,
    start: &ControlTriple,
    rule: &StepRule,
    max_iter: usize,
    cfg: &PicardConfig,
) -> Result<DescentResult> {
    if !start.is_admissible(spec, 1e-12) {
        return Err(Error::InvalidInput("start triple is not admissible".into()));
    }
    let (mut report, mut sol) = penalty_with_solution(start, reference, spec, epsilon, cfg)?;
    let mut history = vec![report.value];
    let first = rule.first_step(spec);
    let mut stalled = false;
    for iter in 0..max_iter {
        if report.value == 0.0 {
            break;
        }
        let frozen = FrozenCoefficients::from_spec(spec, &sol, &report.candidate)?;
        let weights = report.weights();
        let adj = solve_adjoint(spec, &frozen, &weights, cfg)?;
        let grad = costate_gradient(spec, &report.candidate, &sol, &adj, 0.0)?;
        let mut step = first;
        let mut accepted = None;
        while step >= rule.min_step {
            let trial = report.candidate.add_scaled(-step, &grad)?.project(spec);
            let dir = report.candidate.direction_to(&trial)?;
            if dir.max_abs() == 0.0 {
                break;
            }
            let slope = penalty_slope(spec, &report, &sol, &dir, cfg)?;
            if slope < 0.0 {
                let (r, s) = penalty_with_solution(&trial, reference, spec, epsilon, cfg)?;
                if r.value < report.value && r.value <= report.value + rule.armijo * slope {
                    accepted = Some((r, s));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((r, s)) => {
                report = r;
                sol = s;
                history.push(report.value);
            }
            None => {
                stalled = iter == 0;
                break;
            }
        }
    }
    Ok(DescentResult {
        distance: metric_d(start, &report.candidate)?,
        radius: libm::sqrt(core::f64::consts::SQRT_2 * epsilon),
        report,
        history,
        stalled,
    })
}

/// Minimum over `directions` of
/// `h3 E<psi_x, x^_N> + h2 E<h_y, y^_0> + h1 E<phi_x, x^_N> + h0 E<gamma_y, y^_0>`.
pub fn variational_inequality_residual(
    multipliers: &Multipliers,
    spec: &ProblemSpec,
    base: &ControlTriple,
    base_solution: &FbdsdeSolution,
    directions: &[ControlTriple],
    cfg: &PicardConfig,
) -> Result<f64> {
    if directions.is_empty() {
        return Err(Error::InvalidInput("empty direction set".into()));
    }
    let frozen = FrozenCoefficients::from_spec(spec, base_solution, base)?;
    let weights = CostateWeights::from_multipliers(multipliers, 0.0);
    let mut worst = f64::INFINITY;
    for d in directions {
        let var = solve_variational(&frozen, d, cfg)?;
        worst = worst.min(boundary_functional(spec, base_solution, &var, &weights)?);
    }
    Ok(worst)
}

/// Admissible differences `v - base`: `v` is the projection of `base` plus
/// nodewise uniform noise of the given reach.
pub fn sample_directions(
    spec: &ProblemSpec,
    base: &ControlTriple,
    count: usize,
    reach: f64,
    seed: u64,
) -> Result<Vec<ControlTriple>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut noise = base.zeros_like();
        let mut fill = |v: &mut [f64]| v.iter_mut().for_each(|x| *x = rng.gen_range(-reach..=reach));
        fill(noise.xi.as_mut_slice());
        fill(noise.eta.as_mut_slice());
        fill(noise.u.as_mut_slice());
        let v = base.add_scaled(1.0, &noise)?.project(spec);
        out.push(base.direction_to(&v)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;

    #[test]
    fn metric_on_constant_shift() {
        let l = Lattice::new(1.0, 3).unwrap();
        let a = ControlTriple::constant(&l, &[0.0], &[0.0], &[0.0]);
        let b = ControlTriple::constant(&l, &[-2.5], &[0.0], &[0.0]);
        assert_eq!(metric_d(&a, &a).unwrap(), 0.0);
        assert!((metric_d(&a, &b).unwrap() - 2.5).abs() < 1e-15);
        let c = ControlTriple::constant(&l, &[0.0], &[0.0], &[3.0]);
        assert!((metric_d(&a, &c).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn multipliers_from_components() {
        let l = Lattice::new(1.0, 2).unwrap();
        let eps = 0.1;
        let c = [0.0, 0.0, eps, eps];
        let r = PenaltyReport {
            value: norm(&c),
            components: c,
            terminal_gap: vec![],
            initial_gap: vec![],
            candidate: ControlTriple::constant(&l, &[0.0], &[0.0], &[0.0]),
            epsilon: eps,
        };
        assert!((r.value - eps * core::f64::consts::SQRT_2).abs() < 1e-15);
        let m = extract_multipliers(&r).unwrap();
        let s = -core::f64::consts::FRAC_1_SQRT_2;
        assert!((m.h0 - s).abs() < 1e-15 && (m.h1 - s).abs() < 1e-15);

        let r = PenaltyReport {
            value: 0.3,
            components: [0.3, 0.0, 0.0, 0.0],
            terminal_gap: vec![-0.3],
            initial_gap: vec![0.0],
            ..r
        };
        let m = extract_multipliers(&r).unwrap();
        assert_eq!((m.h0, m.h1, m.h2[0], m.h3[0]), (0.0, 0.0, 0.0, -1.0));

        let zero = PenaltyReport { value: 0.0, components: [0.0; 4], ..r };
        assert!(matches!(extract_multipliers(&zero), Err(Error::ZeroNorm(_))));
    }
}
