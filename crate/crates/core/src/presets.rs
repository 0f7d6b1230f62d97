//! Named problems with default controls.

use alloc::boxed::Box;
use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::applications::classical::{to_backward_formulation, AffineSigma, ClassicalSpec};
use crate::applications::example::paper_example_spec;
use crate::applications::lq::LqSpec;
use crate::control::{Constraint, ControlTriple, ConvexSet, CostModel, LinearMap, ProblemSpec, QuadraticCost, QuadraticForm};
use crate::error::{Error, Result};
use crate::fbdsde::{AffineCoefficients, Arg, Coef, Coefficients, Dims, Point};
use crate::lattice::{AdaptedField, Lattice, LevelField, Node};

pub const PRESET_NAMES: [&str; 8] = [
    "paper-3.12",
    "paper-3.12-constrained",
    "lq-scalar",
    "lq-scalar-suboptimal",
    "lq-2d",
    "app-3.1-affine",
    "app-3.2-linear",
    "nonlinear-scalar",
];

/// Default control process `u(t) = offset + slope t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlProfile {
    pub offset: Vec<f64>,
    pub slope: Vec<f64>,
}

impl ControlProfile {
    pub fn constant(v: &[f64]) -> Self {
        ControlProfile {
            offset: v.to_vec(),
            slope: vec![0.0; v.len()],
        }
    }

    pub fn field(&self, lattice: &Lattice) -> AdaptedField {
        AdaptedField::from_fn(lattice, self.offset.len(), |n, o| {
            for ((o, a), b) in o.iter_mut().zip(&self.offset).zip(&self.slope) {
                *o = a + b * n.time;
            }
        })
    }
}

pub enum PresetKind {
    General,
    /// The default control is the solved optimum.
    Lq(LqSpec),
    Classical(ClassicalSpec),
    /// No forward state.
    Bdsde,
}

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub problem: ProblemSpec,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub control: ControlProfile,
    /// Known optimal control, when there is one in closed form.
    pub optimum: Option<ControlProfile>,
    pub kind: PresetKind,
}

impl Preset {
    pub fn triple(&self, lattice: &Lattice) -> ControlTriple {
        ControlTriple {
            xi: LevelField::constant(lattice, 0, &self.xi),
            eta: LevelField::constant(lattice, lattice.steps(), &self.eta),
            u: self.control.field(lattice),
        }
    }
}

pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "paper-3.12" => Ok(Preset {
            name: "paper-3.12",
            description: "scalar example with optimum u = 0 and zero trajectory",
            problem: paper_example_spec(false)?,
            xi: vec![0.0],
            eta: vec![0.0],
            control: ControlProfile::constant(&[0.0]),
            optimum: Some(ControlProfile::constant(&[0.0])),
            kind: PresetKind::General,
        }),
        "paper-3.12-constrained" => Ok(Preset {
            name: "paper-3.12-constrained",
            description: "the scalar example with E x(1) = 0 and E y(0) = 0, started at u = 0.02",
            problem: paper_example_spec(true)?,
            xi: vec![0.0],
            eta: vec![0.0],
            control: ControlProfile::constant(&[0.02]),
            optimum: Some(ControlProfile::constant(&[0.0])),
            kind: PresetKind::General,
        }),
        "lq-scalar" => {
            let lq = lq_scalar();
            Ok(Preset {
                name: "lq-scalar",
                description: "scalar linear-quadratic problem; default control is the optimum",
                problem: lq.to_problem()?,
                xi: lq.initial_state.clone(),
                eta: lq.terminal_value.clone(),
                control: ControlProfile::constant(&[0.0]),
                optimum: None,
                kind: PresetKind::Lq(lq),
            })
        }
        "lq-scalar-suboptimal" => {
            let lq = lq_scalar();
            Ok(Preset {
                name: "lq-scalar-suboptimal",
                description: "the scalar linear-quadratic problem at the non-optimal control u = 0.5",
                problem: lq.to_problem()?,
                xi: lq.initial_state.clone(),
                eta: lq.terminal_value.clone(),
                control: ControlProfile::constant(&[0.5]),
                optimum: None,
                kind: PresetKind::General,
            })
        }
        "lq-2d" => {
            let lq = lq_2d();
            Ok(Preset {
                name: "lq-2d",
                description: "two-dimensional linear-quadratic problem; default control is the optimum",
                problem: lq.to_problem()?,
                xi: lq.initial_state.clone(),
                eta: lq.terminal_value.clone(),
                control: ControlProfile::constant(&[0.0, 0.0]),
                optimum: None,
                kind: PresetKind::Lq(lq),
            })
        }
        "app-3.1-affine" => {
            let c = classical_affine()?;
            Ok(Preset {
                name: "app-3.1-affine",
                description: "forward SDE with affine diffusion driving a backward equation, in backward form",
                problem: to_backward_formulation(&c)?,
                xi: vec![0.2],
                eta: vec![0.3],
                control: ControlProfile::constant(&[]),
                optimum: None,
                kind: PresetKind::Classical(c),
            })
        }
        "app-3.2-linear" => Ok(Preset {
            name: "app-3.2-linear",
            description: "single linear backward doubly stochastic equation with E y(0) = 0.2",
            problem: bdsde_linear()?,
            xi: vec![],
            eta: vec![0.5],
            control: ControlProfile::constant(&[0.1]),
            optimum: None,
            kind: PresetKind::Bdsde,
        }),
        "nonlinear-scalar" => Ok(Preset {
            name: "nonlinear-scalar",
            description: "monotone scalar system with trigonometric and tanh couplings",
            problem: nonlinear_scalar()?,
            xi: vec![0.5],
            eta: vec![0.3],
            control: ControlProfile {
                offset: vec![0.2],
                slope: vec![0.5],
            },
            optimum: None,
            kind: PresetKind::General,
        }),
        other => Err(Error::Config(format!(
            "unknown preset '{other}'; known presets: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

pub fn lq_scalar() -> LqSpec {
    let mut s = LqSpec::zero("lq-scalar", Dims::scalar());
    s.forward_drift.x = vec![0.2];
    s.forward_drift.u = vec![0.5];
    s.forward_diffusion.y = vec![0.2];
    s.forward_diffusion.u = vec![0.4];
    s.backward_drift.q = vec![0.1];
    s.backward_drift.u = vec![0.3];
    s.backward_diffusion.x = vec![0.3];
    s.weights.x = vec![1.0];
    s.weights.y = vec![0.5];
    s.weights.u = vec![4.0];
    s.weights.terminal = vec![1.0];
    s.weights.initial = vec![1.0];
    s.initial_state = vec![1.0];
    s.terminal_value = vec![0.5];
    s
}

pub fn lq_2d() -> LqSpec {
    let dims = Dims {
        state: 2,
        backward: 2,
        driver: 1,
        control: 2,
    };
    let mut s = LqSpec::zero("lq-2d", dims);
    s.forward_drift.x = vec![0.2, 0.1, 0.0, -0.1];
    s.forward_drift.y = vec![0.1, 0.0, 0.0, 0.1];
    s.forward_drift.u = vec![0.5, 0.0, 0.2, 0.3];
    s.forward_diffusion.z = vec![0.1, 0.0, 0.0, 0.1];
    s.forward_diffusion.y = vec![0.2, 0.0, 0.1, 0.0];
    s.forward_diffusion.u = vec![0.3, 0.1, 0.0, 0.4];
    s.backward_drift.x = vec![0.1, 0.0, 0.0, 0.1];
    s.backward_drift.q = vec![0.1, 0.0, 0.0, 0.1];
    s.backward_drift.u = vec![0.2, 0.0, 0.1, 0.3];
    s.backward_diffusion.x = vec![0.2, 0.1, 0.0, 0.2];
    s.backward_diffusion.u = vec![0.1, 0.0, 0.0, 0.2];
    s.weights.x = vec![1.0, 0.2, 0.2, 1.0];
    s.weights.z = vec![0.5, 0.0, 0.0, 0.5];
    s.weights.y = vec![0.5, 0.0, 0.0, 0.5];
    s.weights.q = vec![0.2, 0.0, 0.0, 0.2];
    s.weights.u = vec![3.0, 0.5, 0.5, 4.0];
    s.weights.terminal = vec![1.0, 0.0, 0.0, 1.0];
    s.weights.initial = vec![1.0, 0.0, 0.0, 1.0];
    s.initial_state = vec![1.0, -0.5];
    s.terminal_value = vec![0.5, 0.2];
    s
}

/// `dy = (0.3u - 0.5y) dt + (2u + 0.5y + 0.1) dW`, `y(0) = 0.3`;
/// `-dx = (0.3x + 0.2y + 0.4u) dt + (0.1x + 0.2y + 0.3u) dW - z dB`.
pub fn classical_affine() -> Result<ClassicalSpec> {
    let c = AffineCoefficients::zero(Dims::scalar())
        .with(Coef::ForwardDrift, Arg::X, &[0.3])?
        .with(Coef::ForwardDrift, Arg::Y, &[0.2])?
        .with(Coef::ForwardDrift, Arg::U, &[0.4])?
        .with(Coef::ForwardDiffusion, Arg::X, &[0.1])?
        .with(Coef::ForwardDiffusion, Arg::Y, &[0.2])?
        .with(Coef::ForwardDiffusion, Arg::U, &[0.3])?
        .with(Coef::BackwardDrift, Arg::Y, &[-0.5])?
        .with(Coef::BackwardDrift, Arg::U, &[0.3])?;
    let mut cost = QuadraticCost::zero(Dims::scalar());
    cost.add_running(Arg::X, 0, Arg::X, 0, 1.0);
    cost.add_running(Arg::Y, 0, Arg::Y, 0, 1.0);
    cost.add_running(Arg::U, 0, Arg::U, 0, 1.0);
    cost.xi = QuadraticForm::new(1, vec![1.0], vec![0.0])?;
    cost.eta = QuadraticForm::new(1, vec![1.0], vec![-0.5])?;
    cost.terminal = QuadraticForm::new(1, vec![1.0], vec![0.0])?;
    let spec = ClassicalSpec {
        name: "app-3.1-affine".into(),
        coefficients: Rc::new(c),
        sigma: AffineSigma::new(1, 1, vec![2.0], vec![0.5], vec![0.1])?,
        cost: Rc::new(cost),
        initial_value: vec![0.3],
        initial_set: ConvexSet::interval(1, -2.0, 2.0)?,
        terminal_set: ConvexSet::interval(1, -2.0, 2.0)?,
    };
    spec.validate()?;
    Ok(spec)
}

/// `-dy = (0.3y + 0.2q + 0.5u) dt + (0.2y + 0.1q + 0.4u) dB - q dW`.
pub fn bdsde_linear() -> Result<ProblemSpec> {
    let dims = Dims {
        state: 0,
        backward: 1,
        driver: 1,
        control: 1,
    };
    let c = AffineCoefficients::zero(dims)
        .with(Coef::BackwardDrift, Arg::Y, &[0.3])?
        .with(Coef::BackwardDrift, Arg::Q, &[0.2])?
        .with(Coef::BackwardDrift, Arg::U, &[0.5])?
        .with(Coef::BackwardDiffusion, Arg::Y, &[0.2])?
        .with(Coef::BackwardDiffusion, Arg::Q, &[0.1])?
        .with(Coef::BackwardDiffusion, Arg::U, &[0.4])?;
    let mut cost = QuadraticCost::zero(dims);
    cost.add_running(Arg::Y, 0, Arg::Y, 0, 1.0);
    cost.add_running(Arg::Q, 0, Arg::Q, 0, 0.5);
    cost.add_running(Arg::U, 0, Arg::U, 0, 2.0);
    cost.eta = QuadraticForm::new(1, vec![1.0], vec![0.0])?;
    cost.initial = QuadraticForm::new(1, vec![1.0], vec![0.0])?;
    Ok(ProblemSpec {
        name: "app-3.2-linear".into(),
        coefficients: Box::new(c),
        cost: Box::new(cost),
        terminal_constraint: None,
        initial_constraint: Some(Constraint::new(Box::new(LinearMap::identity(1)), vec![0.2])?),
        initial_set: ConvexSet::whole(0),
        terminal_set: ConvexSet::interval(1, -1.0, 1.0)?,
        control_set: ConvexSet::interval(1, -1.0, 1.0)?,
    })
}

/// Scalar nonlinear coefficients, monotone with `alpha < 1/2`:
///
/// ```text
/// F = 0.8 x + 0.3 sin x + 0.2 y - 0.1 u
/// G = 0.5 z + 0.1 sin z + 0.1 y + 0.5 u
/// f = 0.6 y + 0.2 sin y + 0.2 q + 0.1 x + 0.3 u
/// g = 0.4 q + 0.1 sin q + 0.3 tanh x + 0.3 u
/// ```
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NonlinearScalar;

impl Coefficients for NonlinearScalar {
    fn dims(&self) -> Dims {
        Dims::scalar()
    }

    fn eval(&self, c: Coef, _node: Node, p: &Point, out: &mut [f64]) {
        let (x, z, y, q, u) = (p.x[0], p.z[0], p.y[0], p.q[0], p.u[0]);
        out[0] = match c {
            Coef::ForwardDrift => 0.8 * x + 0.3 * libm::sin(x) + 0.2 * y - 0.1 * u,
            Coef::ForwardDiffusion => 0.5 * z + 0.1 * libm::sin(z) + 0.1 * y + 0.5 * u,
            Coef::BackwardDrift => 0.6 * y + 0.2 * libm::sin(y) + 0.2 * q + 0.1 * x + 0.3 * u,
            Coef::BackwardDiffusion => 0.4 * q + 0.1 * libm::sin(q) + 0.3 * libm::tanh(x) + 0.3 * u,
        };
    }

    fn partial(&self, c: Coef, a: Arg, _node: Node, p: &Point, out: &mut [f64]) {
        let (x, z, y, q) = (p.x[0], p.z[0], p.y[0], p.q[0]);
        out[0] = match (c, a) {
            (Coef::ForwardDrift, Arg::X) => 0.8 + 0.3 * libm::cos(x),
            (Coef::ForwardDrift, Arg::Y) => 0.2,
            (Coef::ForwardDrift, Arg::U) => -0.1,
            (Coef::ForwardDiffusion, Arg::Z) => 0.5 + 0.1 * libm::cos(z),
            (Coef::ForwardDiffusion, Arg::Y) => 0.1,
            (Coef::ForwardDiffusion, Arg::U) => 0.5,
            (Coef::BackwardDrift, Arg::Y) => 0.6 + 0.2 * libm::cos(y),
            (Coef::BackwardDrift, Arg::Q) => 0.2,
            (Coef::BackwardDrift, Arg::X) => 0.1,
            (Coef::BackwardDrift, Arg::U) => 0.3,
            (Coef::BackwardDiffusion, Arg::X) => {
                let t = libm::tanh(x);
                0.3 * (1.0 - t * t)
            }
            (Coef::BackwardDiffusion, Arg::Q) => 0.4 + 0.1 * libm::cos(q),
            (Coef::BackwardDiffusion, Arg::U) => 0.3,
            _ => 0.0,
        };
    }
}

/// `l = (x^2 + y^2 + u^2)/2 + 0.2 x sin u`, `phi = x^2/2`, `gamma = y^2/2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NonlinearScalarCost;

impl CostModel for NonlinearScalarCost {
    fn running(&self, _node: Node, p: &Point) -> f64 {
        let (x, y, u) = (p.x[0], p.y[0], p.u[0]);
        0.5 * (x * x + y * y + u * u) + 0.2 * x * libm::sin(u)
    }

    fn running_partial(&self, a: Arg, _node: Node, p: &Point, out: &mut [f64]) {
        let (x, y, u) = (p.x[0], p.y[0], p.u[0]);
        out[0] = match a {
            Arg::X => x + 0.2 * libm::sin(u),
            Arg::Y => y,
            Arg::U => u + 0.2 * x * libm::cos(u),
            Arg::Z | Arg::Q => 0.0,
        };
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        0.5 * x[0] * x[0]
    }
    fn terminal_cost_grad(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0];
    }
    fn initial_cost(&self, y: &[f64]) -> f64 {
        0.5 * y[0] * y[0]
    }
    fn initial_cost_grad(&self, y: &[f64], out: &mut [f64]) {
        out[0] = y[0];
    }
}

pub fn nonlinear_scalar() -> Result<ProblemSpec> {
    Ok(ProblemSpec {
        name: "nonlinear-scalar".into(),
        coefficients: Box::new(NonlinearScalar),
        cost: Box::new(NonlinearScalarCost),
        terminal_constraint: None,
        initial_constraint: None,
        initial_set: ConvexSet::interval(1, -2.0, 2.0)?,
        terminal_set: ConvexSet::interval(1, -2.0, 2.0)?,
        control_set: ConvexSet::interval(1, -1.0, 1.0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbdsde::{certify_lipschitz, certify_monotonicity, check_partials};

    #[test]
    fn every_preset_builds_and_validates() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            p.problem.validate().unwrap();
            assert_eq!(p.name, name);
        }
        assert!(matches!(preset("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn nonlinear_preset_is_certified() {
        let l = Lattice::new(1.0, 4).unwrap();
        let mono = certify_monotonicity(&NonlinearScalar, &l, &[0.2], 2000, 1).unwrap();
        let lip = certify_lipschitz(&NonlinearScalar, &l, &[0.2], 2000, 1).unwrap();
        assert!(mono.certified && lip.certified, "{mono:?} {lip:?}");
    }

    #[test]
    fn nonlinear_partials_match_differences() {
        let l = Lattice::new(1.0, 3).unwrap();
        assert!(check_partials(&NonlinearScalar, &l, 50, 3).unwrap() < 1e-6);
    }
}
