//! The scalar example with `G = y/2 + u`, `g = (x + u)/2`, zero drifts,
//! running cost `x^2 - y^2 + z^2 - q^2 + 2xu - 4yu`, terminal `x(1)^2`,
//! initial `y(0)^2` and `K = [-1, 1]`. Its optimum is `u = 0` with every
//! field zero.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::adjoint::{hamiltonian_u, solve_adjoint, CostateWeights};
use crate::applications::fit::{fit_extrapolation, Fit};
use crate::control::{
    evaluate_cost, solve_state, Constraint, ControlTriple, ConvexSet, LinearMap, ProblemSpec, QuadraticCost,
    QuadraticForm,
};
use crate::error::Result;
use crate::fbdsde::{AffineCoefficients, Arg, Coef, Dims, PicardConfig, Point};
use crate::lattice::{AdaptedField, Lattice};
use crate::linalg::max_abs;
use crate::variation::FrozenCoefficients;

pub const REFINEMENT_STEPS: [usize; 6] = [4, 6, 8, 10, 12, 14];
pub const HORIZON: f64 = 1.0;

/// With `constrained`, adds `E x(1) = 0` and `E y(0) = 0`.
pub fn paper_example_spec(constrained: bool) -> Result<ProblemSpec> {
    let c = AffineCoefficients::zero(Dims::scalar())
        .with(Coef::ForwardDiffusion, Arg::Y, &[0.5])?
        .with(Coef::ForwardDiffusion, Arg::U, &[1.0])?
        .with(Coef::BackwardDiffusion, Arg::X, &[0.5])?
        .with(Coef::BackwardDiffusion, Arg::U, &[0.5])?;
    let mut cost = QuadraticCost::zero(Dims::scalar());
    cost.add_running(Arg::X, 0, Arg::X, 0, 2.0);
    cost.add_running(Arg::Z, 0, Arg::Z, 0, 2.0);
    cost.add_running(Arg::Y, 0, Arg::Y, 0, -2.0);
    cost.add_running(Arg::Q, 0, Arg::Q, 0, -2.0);
    cost.add_running(Arg::X, 0, Arg::U, 0, 2.0);
    cost.add_running(Arg::Y, 0, Arg::U, 0, -4.0);
    cost.terminal = QuadraticForm::new(1, vec![2.0], vec![0.0])?;
    cost.initial = QuadraticForm::new(1, vec![2.0], vec![0.0])?;
    let constraint = |on: bool| -> Result<Option<Constraint>> {
        Ok(if on {
            Some(Constraint::new(Box::new(LinearMap::identity(1)), vec![0.0])?)
        } else {
            None
        })
    };
    Ok(ProblemSpec {
        name: if constrained { "paper-3.12-constrained" } else { "paper-3.12" }.into(),
        coefficients: Box::new(c),
        cost: Box::new(cost),
        terminal_constraint: constraint(constrained)?,
        initial_constraint: constraint(constrained)?,
        initial_set: ConvexSet::interval(1, 0.0, 0.0)?,
        terminal_set: ConvexSet::interval(1, 0.0, 0.0)?,
        control_set: ConvexSet::interval(1, -1.0, 1.0)?,
    })
}

/// Controls `u = 1` and `u = t` on a lattice.
pub fn unit_control(lattice: &Lattice) -> AdaptedField {
    AdaptedField::constant(lattice, &[1.0])
}

pub fn time_control(lattice: &Lattice) -> AdaptedField {
    AdaptedField::from_fn(lattice, 1, |n, o| o[0] = n.time)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroCheck {
    pub steps: usize,
    pub max_state: f64,
    pub max_costate: f64,
    pub cost: f64,
    pub max_hu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinementRow {
    pub steps: usize,
    pub dt: f64,
    pub cost_one: f64,
    pub cost_t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaperExampleReport {
    pub zero: ZeroCheck,
    pub rows: Vec<RefinementRow>,
    pub fit_one: Fit,
    pub fit_t: Fit,
    /// Limits stated for `u = 1` and `u = t`.
    pub expected_one: f64,
    pub expected_t: f64,
}

pub fn zero_check(steps: usize, cfg: &PicardConfig) -> Result<ZeroCheck> {
    let spec = paper_example_spec(false)?;
    let l = Lattice::new(HORIZON, steps)?;
    let triple = ControlTriple::constant(&l, &[0.0], &[0.0], &[0.0]);
    let sol = solve_state(&spec, &triple, cfg)?;
    let frozen = FrozenCoefficients::from_spec(&spec, &sol, &triple)?;
    let adj = solve_adjoint(&spec, &frozen, &CostateWeights::cost(), cfg)?;
    let mut max_hu: f64 = 0.0;
    for k in 0..=l.steps() {
        for i in 0..l.nodes() {
            let p = Point {
                x: sol.x.at(k, i),
                z: sol.z.at(k, i),
                y: sol.y.at(k, i),
                q: sol.q.at(k, i),
                u: triple.u.at(k, i),
            };
            max_hu = max_hu.max(max_abs(&hamiltonian_u(&spec, l.node(k, i), &p, &adj.at(k, i), 1.0)));
        }
    }
    Ok(ZeroCheck {
        steps,
        max_state: sol.x.max_abs().max(sol.z.max_abs()).max(sol.y.max_abs()).max(sol.q.max_abs()),
        max_costate: adj.max_abs(),
        cost: evaluate_cost(&triple, &spec, &sol)?,
        max_hu,
    })
}

pub fn refinement_row(steps: usize, cfg: &PicardConfig) -> Result<RefinementRow> {
    let spec = paper_example_spec(false)?;
    let l = Lattice::new(HORIZON, steps)?;
    let cost = |u: AdaptedField| -> Result<f64> {
        let triple = ControlTriple {
            u,
            ..ControlTriple::constant(&l, &[0.0], &[0.0], &[0.0])
        };
        let sol = solve_state(&spec, &triple, cfg)?;
        evaluate_cost(&triple, &spec, &sol)
    };
    Ok(RefinementRow {
        steps,
        dt: l.dt(),
        cost_one: cost(unit_control(&l))?,
        cost_t: cost(time_control(&l))?,
    })
}

pub fn paper_example(steps: usize, refinement: &[usize], cfg: &PicardConfig) -> Result<PaperExampleReport> {
    let zero = zero_check(steps, cfg)?;
    let rows = refinement
        .iter()
        .map(|&n| refinement_row(n, cfg))
        .collect::<Result<Vec<_>>>()?;
    let one: Vec<(f64, f64)> = rows.iter().map(|r| (r.dt, r.cost_one)).collect();
    let t: Vec<(f64, f64)> = rows.iter().map(|r| (r.dt, r.cost_t)).collect();
    Ok(PaperExampleReport {
        zero,
        fit_one: fit_extrapolation(&one)?,
        fit_t: fit_extrapolation(&t)?,
        rows,
        expected_one: 3.0,
        expected_t: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_control_is_exact() {
        let z = zero_check(6, &PicardConfig::default()).unwrap();
        assert_eq!((z.max_state, z.max_costate, z.cost, z.max_hu), (0.0, 0.0, 0.0, 0.0));
    }
}
