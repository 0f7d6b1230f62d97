//! Single backward doubly stochastic equations
//! `-dy = f(t, y, q) dt + g(t, y, q) dB - q dW`, `y_T = eta`.

use alloc::format;

use crate::error::{Error, Result};
use crate::lattice::{AdaptedField, LevelField, Node};
use crate::sweep;

/// Drift `f` (length `k`) and backward integrand `g` (row-major `k x d`)
/// written into zeroed output slices.
pub trait BdsdeDriver {
    fn eval(&self, node: Node, y: &[f64], q: &[f64], f: &mut [f64], g: &mut [f64]);
}

impl<F> BdsdeDriver for F
where
    F: Fn(Node, &[f64], &[f64], &mut [f64], &mut [f64]),
{
    fn eval(&self, node: Node, y: &[f64], q: &[f64], f: &mut [f64], g: &mut [f64]) {
        self(node, y, q, f, g)
    }
}

/// Declared Lipschitz data: `|f1 - f2|^2 <= C (|y1-y2|^2 + |q1-q2|^2)` and
/// `|g1 - g2|^2 <= C |y1-y2|^2 + alpha |q1-q2|^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzClaim {
    pub constant: f64,
    pub alpha: f64,
}

/// Which contraction regime a claim falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// `alpha < 1/2`: good enough for the coupled forward-backward system.
    Coupled,
    /// `1/2 <= alpha < 1`: single equation only.
    Single,
}

impl LipschitzClaim {
    pub fn new(constant: f64, alpha: f64) -> Result<Self> {
        if !(constant > 0.0 && constant.is_finite()) {
            return Err(Error::Config(format!("Lipschitz constant {constant} must be positive")));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha {alpha} must lie in [0, 1)")));
        }
        Ok(LipschitzClaim { constant, alpha })
    }

    pub fn regime(&self) -> Regime {
        if self.alpha < 0.5 {
            Regime::Coupled
        } else {
            Regime::Single
        }
    }
}

pub struct BdsdeSpec<D> {
    pub terminal: LevelField,
    pub driver: D,
    pub lipschitz: LipschitzClaim,
}

impl<D: BdsdeDriver> BdsdeSpec<D> {
    pub fn new(terminal: LevelField, driver: D, lipschitz: LipschitzClaim) -> Result<Self> {
        let n = terminal.lattice().steps();
        if terminal.level() != n {
            return Err(Error::StepOutOfRange {
                step: terminal.level(),
                steps: n,
            });
        }
        Ok(BdsdeSpec {
            terminal,
            driver,
            lipschitz,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BdsdeSolution {
    pub y: AdaptedField,
    /// Forward-coin integrand, `k x d` row-major per node.
    pub q: AdaptedField,
}

pub fn solve_bdsde<D: BdsdeDriver>(spec: &BdsdeSpec<D>) -> Result<BdsdeSolution> {
    let (y, q) = sweep::backward(&spec.terminal, |node, y, q, f, g| {
        spec.driver.eval(node, y, q, f, g)
    })?;
    Ok(BdsdeSolution { y, q })
}

/// `max_k |y_k - E[Y|F_k]| + |q_k dt - E[Y dW_k|F_k]|` over `k < N`.
pub fn bdsde_residual<D: BdsdeDriver>(
    y: &AdaptedField,
    q: &AdaptedField,
    spec: &BdsdeSpec<D>,
) -> Result<f64> {
    spec.terminal.lattice().same(y.lattice())?;
    crate::error::check_dim("terminal", spec.terminal.dim(), y.dim())?;
    sweep::backward_residual(y, q, |node, y, q, f, g| spec.driver.eval(node, y, q, f, g))
}
