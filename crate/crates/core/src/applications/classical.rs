//! A forward SDE `dy = b(y, u) dt + sigma(y, u) dW`, `y(0) = b0`, driving a
//! backward doubly stochastic `x`, and its reformulation with `q = sigma` and
//! the terminal value `eta = y(T)` as controls.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adjoint::{solve_adjoint, AdjointSolution, CostateWeights};
use crate::control::{
    solve_state, Constraint, ControlTriple, ConvexSet, CostModel, LinearMap, ProblemSpec,
};
use crate::error::{check_dim, Error, Result};
use crate::fbdsde::{Arg, Coef, Coefficients, Dims, FbdsdeSolution, OwnedPoint, PicardConfig, Point};
use crate::lattice::{AdaptedField, Lattice, LevelField, Node};
use crate::linalg::{dot, mat_vec_add, solve, symmetric_eigenvalues};
use crate::sweep;
use crate::variation::FrozenCoefficients;

/// `sigma(y, u) = S u + R y + s0` with `S` invertible.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineSigma {
    backward: usize,
    width: usize,
    matrix: Vec<f64>,
    slope: Vec<f64>,
    offset: Vec<f64>,
    inverse: Vec<f64>,
}

impl AffineSigma {
    /// `matrix` is `kd x kd`, `slope` is `kd x k`, `offset` has length `kd`.
    pub fn new(backward: usize, driver: usize, matrix: Vec<f64>, slope: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let width = backward * driver;
        check_dim("sigma matrix", width * width, matrix.len())?;
        check_dim("sigma slope", width * backward, slope.len())?;
        check_dim("sigma offset", width, offset.len())?;
        let mut inverse = vec![0.0; width * width];
        let mut e = vec![0.0; width];
        for j in 0..width {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = solve(&matrix, width, &e)?;
            for i in 0..width {
                inverse[i * width + j] = col[i];
            }
        }
        Ok(AffineSigma {
            backward,
            width,
            matrix,
            slope,
            offset,
            inverse,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn eval(&self, y: &[f64], u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.offset);
        mat_vec_add(&self.matrix, self.width, self.width, u, out);
        mat_vec_add(&self.slope, self.width, self.backward, y, out);
    }

    /// The `u` with `sigma(y, u) = q`.
    pub fn invert(&self, y: &[f64], q: &[f64], out: &mut [f64]) {
        let mut r: Vec<f64> = q.iter().zip(&self.offset).map(|(a, b)| a - b).collect();
        let mut sy = vec![0.0; self.width];
        mat_vec_add(&self.slope, self.width, self.backward, y, &mut sy);
        r.iter_mut().zip(&sy).for_each(|(a, b)| *a -= b);
        out.iter_mut().for_each(|v| *v = 0.0);
        mat_vec_add(&self.inverse, self.width, self.width, &r, out);
    }

    /// `S^-1`, row-major.
    pub fn inverse(&self) -> &[f64] {
        &self.inverse
    }

    /// `S^-1 R`, the sensitivity of the inverse to `y` up to sign.
    fn inverse_slope(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width * self.backward];
        for i in 0..self.width {
            for j in 0..self.backward {
                out[i * self.backward + j] = (0..self.width)
                    .map(|l| self.inverse[i * self.width + l] * self.slope[l * self.backward + j])
                    .sum();
            }
        }
        out
    }

    /// Largest `a` with `|sigma(y,u1) - sigma(y,u2)| >= a |u1 - u2|`.
    pub fn margin(&self) -> f64 {
        let n = self.width;
        let mut sts = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                sts[i * n + j] = (0..n).map(|l| self.matrix[l * n + i] * self.matrix[l * n + j]).sum();
            }
        }
        let min = symmetric_eigenvalues(&sts, n).first().copied().unwrap_or(0.0);
        libm::sqrt(min.max(0.0))
    }
}

/// The classical problem. `coefficients` supplies `F`, `G` for `x` and, in
/// the backward-drift slot, the drift `b` of `y`; its control dimension is
/// `k d` and its backward-diffusion slot is ignored. `cost` is evaluated
/// with `q = 0`.
pub struct ClassicalSpec {
    pub name: String,
    pub coefficients: Rc<dyn Coefficients>,
    pub sigma: AffineSigma,
    pub cost: Rc<dyn CostModel>,
    pub initial_value: Vec<f64>,
    pub initial_set: ConvexSet,
    pub terminal_set: ConvexSet,
}

impl ClassicalSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.coefficients.dims();
        check_dim("classical control", d.backward * d.driver, d.control)?;
        check_dim("sigma width", d.control, self.sigma.width)?;
        check_dim("sigma rows", d.backward, self.sigma.backward)?;
        check_dim("initial value", d.backward, self.initial_value.len())?;
        check_dim("initial set", d.state, self.initial_set.dim())?;
        check_dim("terminal set", d.backward, self.terminal_set.dim())?;
        if !(self.sigma.margin() > 0.0) {
            return Err(Error::Singular("sigma control matrix"));
        }
        Ok(())
    }
}

pub fn sigma_invert(spec: &ClassicalSpec, y: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    check_dim("y", spec.sigma.backward, y.len())?;
    check_dim("q", spec.sigma.width, q.len())?;
    let mut u = vec![0.0; spec.sigma.width];
    spec.sigma.invert(y, q, &mut u);
    Ok(u)
}

fn classical_point(sigma: &AffineSigma, dims: &Dims, p: &Point) -> OwnedPoint {
    let mut o = OwnedPoint::zeros(dims);
    o.get_mut(Arg::X).copy_from_slice(p.x);
    o.get_mut(Arg::Z).copy_from_slice(p.z);
    o.get_mut(Arg::Y).copy_from_slice(p.y);
    sigma.invert(p.y, p.q, o.get_mut(Arg::U));
    o
}

/// `out = s (a_y - a_u S^-1 R)` or `s a_u S^-1`, for a row-major `rows x m` block `a_u`.
fn chain(rows: usize, au: &[f64], right: &[f64], cols: usize, m: usize, sign: f64, out: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            let v: f64 = (0..m).map(|l| au[r * m + l] * right[l * cols + c]).sum();
            out[r * cols + c] += sign * v;
        }
    }
}

struct BackwardCoefficients {
    inner: Rc<dyn Coefficients>,
    sigma: AffineSigma,
    inverse_slope: Vec<f64>,
}

impl BackwardCoefficients {
    fn inner_dims(&self) -> Dims {
        self.inner.dims()
    }
}

impl Coefficients for BackwardCoefficients {
    fn dims(&self) -> Dims {
        Dims {
            control: 0,
            ..self.inner_dims()
        }
    }

    fn eval(&self, c: Coef, node: Node, p: &Point, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if c == Coef::BackwardDiffusion {
            return;
        }
        let dims = self.inner_dims();
        let o = classical_point(&self.sigma, &dims, p);
        self.inner.eval(c, node, &o.as_point(), out);
        if c == Coef::BackwardDrift {
            out.iter_mut().for_each(|v| *v = -*v);
        }
    }

    fn partial(&self, c: Coef, a: Arg, node: Node, p: &Point, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if c == Coef::BackwardDiffusion || a == Arg::U {
            return;
        }
        let dims = self.inner_dims();
        let o = classical_point(&self.sigma, &dims, p);
        let ip = o.as_point();
        let sign = if c == Coef::BackwardDrift { -1.0 } else { 1.0 };
        let rows = dims.coef(c);
        let m = dims.control;
        match a {
            Arg::X | Arg::Z | Arg::Y => {
                self.inner.partial(c, a, node, &ip, out);
                if sign < 0.0 {
                    out.iter_mut().for_each(|v| *v = -*v);
                }
                if a == Arg::Y {
                    let mut au = vec![0.0; rows * m];
                    self.inner.partial(c, Arg::U, node, &ip, &mut au);
                    chain(rows, &au, &self.inverse_slope, dims.backward, m, -sign, out);
                }
            }
            Arg::Q => {
                let mut au = vec![0.0; rows * m];
                self.inner.partial(c, Arg::U, node, &ip, &mut au);
                chain(rows, &au, self.sigma.inverse(), m, m, sign, out);
            }
            Arg::U => {}
        }
    }
}

struct BackwardCost {
    inner: Rc<dyn CostModel>,
    dims: Dims,
    sigma: AffineSigma,
    inverse_slope: Vec<f64>,
}

impl CostModel for BackwardCost {
    fn running(&self, node: Node, p: &Point) -> f64 {
        let o = classical_point(&self.sigma, &self.dims, p);
        self.inner.running(node, &o.as_point())
    }

    fn running_partial(&self, a: Arg, node: Node, p: &Point, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if a == Arg::U {
            return;
        }
        let o = classical_point(&self.sigma, &self.dims, p);
        let ip = o.as_point();
        let m = self.dims.control;
        match a {
            Arg::X | Arg::Z | Arg::Y => {
                self.inner.running_partial(a, node, &ip, out);
                if a == Arg::Y {
                    let mut lu = vec![0.0; m];
                    self.inner.running_partial(Arg::U, node, &ip, &mut lu);
                    chain(1, &lu, &self.inverse_slope, self.dims.backward, m, -1.0, out);
                }
            }
            Arg::Q => {
                let mut lu = vec![0.0; m];
                self.inner.running_partial(Arg::U, node, &ip, &mut lu);
                chain(1, &lu, self.sigma.inverse(), m, m, 1.0, out);
            }
            Arg::U => {}
        }
    }

    fn xi_cost(&self, xi: &[f64]) -> f64 {
        self.inner.xi_cost(xi)
    }
    fn xi_cost_grad(&self, xi: &[f64], out: &mut [f64]) {
        self.inner.xi_cost_grad(xi, out)
    }
    fn eta_cost(&self, eta: &[f64]) -> f64 {
        self.inner.eta_cost(eta)
    }
    fn eta_cost_grad(&self, eta: &[f64], out: &mut [f64]) {
        self.inner.eta_cost_grad(eta, out)
    }
    fn terminal_cost(&self, x: &[f64]) -> f64 {
        self.inner.terminal_cost(x)
    }
    fn terminal_cost_grad(&self, x: &[f64], out: &mut [f64]) {
        self.inner.terminal_cost_grad(x, out)
    }
}

/// The problem over `(xi, eta)` with `y(0) = b0` as the initial constraint.
pub fn to_backward_formulation(spec: &ClassicalSpec) -> Result<ProblemSpec> {
    spec.validate()?;
    let dims = spec.coefficients.dims();
    let inverse_slope = spec.sigma.inverse_slope();
    Ok(ProblemSpec {
        name: alloc::format!("{} (backward)", spec.name),
        coefficients: Box::new(BackwardCoefficients {
            inner: spec.coefficients.clone(),
            sigma: spec.sigma.clone(),
            inverse_slope: inverse_slope.clone(),
        }),
        cost: Box::new(BackwardCost {
            inner: spec.cost.clone(),
            dims,
            sigma: spec.sigma.clone(),
            inverse_slope,
        }),
        terminal_constraint: None,
        initial_constraint: Some(Constraint::new(
            Box::new(LinearMap::identity(dims.backward)),
            spec.initial_value.clone(),
        )?),
        initial_set: spec.initial_set.clone(),
        terminal_set: spec.terminal_set.clone(),
        control_set: ConvexSet::whole(0),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalSolution {
    pub x: AdaptedField,
    pub z: AdaptedField,
    pub y: AdaptedField,
}

/// Euler steps for `y` (averaged over the backward coin of the step so that
/// `y` stays adapted) followed by a forward sweep for `(x, z)`.
pub fn solve_classical(spec: &ClassicalSpec, xi: &LevelField, u: &AdaptedField) -> Result<ClassicalSolution> {
    spec.validate()?;
    let l = *xi.lattice();
    l.same(u.lattice())?;
    let dims = spec.coefficients.dims();
    check_dim("classical control", dims.control, u.dim())?;
    check_dim("initial state", dims.state, xi.dim())?;
    let k = dims.backward;
    let d = l.driver_dim();
    let mut y = AdaptedField::zeros(&l, k);
    for i in 0..l.nodes() {
        y.at_mut(0, i).copy_from_slice(&spec.initial_value);
    }
    let mut p = OwnedPoint::zeros(&dims);
    let mut drift = vec![0.0; k];
    let mut sig = vec![0.0; k * d];
    let mut dw = vec![0.0; d];
    let weight = 1.0 / l.outcomes() as f64;
    for step in 0..l.steps() {
        for i in 0..l.nodes() {
            l.increments(l.group(i, step), &mut dw);
            let mut acc = vec![0.0; k];
            for b in 0..l.outcomes() {
                let j = l.with_group(i, step, b);
                p.get_mut(Arg::Y).copy_from_slice(y.at(step, j));
                p.get_mut(Arg::U).copy_from_slice(u.at(step, j));
                spec.coefficients.eval(Coef::BackwardDrift, l.node(step, j), &p.as_point(), &mut drift);
                spec.sigma.eval(y.at(step, j), u.at(step, j), &mut sig);
                for r in 0..k {
                    acc[r] += weight * (y.at(step, j)[r] + drift[r] * l.dt() + dot(&sig[r * d..(r + 1) * d], &dw));
                }
            }
            if acc.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "classical forward state", step: step + 1 });
            }
            y.at_mut(step + 1, i).copy_from_slice(&acc);
        }
    }
    let q0 = vec![0.0; k * d];
    let (x, z) = sweep::forward(xi, |node, x, z, big_f, big_g| {
        let pt = Point {
            x,
            z,
            y: y.at(node.level, node.index),
            q: &q0,
            u: u.at(node.level, node.index),
        };
        spec.coefficients.eval(Coef::ForwardDrift, node, &pt, big_f);
        spec.coefficients.eval(Coef::ForwardDiffusion, node, &pt, big_g);
    })?;
    Ok(ClassicalSolution { x, z, y })
}

/// `E[sum_{k<N} l(x, z, y, u) dt + chi(xi) + lambda(y_N) + phi(x_N)]`.
pub fn classical_cost(spec: &ClassicalSpec, xi: &LevelField, u: &AdaptedField, sol: &ClassicalSolution) -> Result<f64> {
    let l = *xi.lattice();
    let n = l.steps();
    let nodes = l.nodes() as f64;
    let dims = spec.coefficients.dims();
    let q0 = vec![0.0; dims.backward * l.driver_dim()];
    let mut running = 0.0;
    for k in 0..n {
        let level: f64 = (0..l.nodes())
            .map(|i| {
                let p = Point {
                    x: sol.x.at(k, i),
                    z: sol.z.at(k, i),
                    y: sol.y.at(k, i),
                    q: &q0,
                    u: u.at(k, i),
                };
                spec.cost.running(l.node(k, i), &p)
            })
            .sum();
        running += level / nodes * l.dt();
    }
    let boundary: f64 = (0..l.nodes())
        .map(|i| spec.cost.xi_cost(xi.at(i)) + spec.cost.eta_cost(sol.y.at(n, i)) + spec.cost.terminal_cost(sol.x.at(n, i)))
        .sum();
    let total = running + boundary / nodes;
    if !total.is_finite() {
        return Err(Error::NonFinite { what: "classical cost", step: 0 });
    }
    Ok(total)
}

/// `max |y_0 - b0|` over all backward paths.
pub fn pathwise_initial_gap(spec: &ClassicalSpec, sol: &FbdsdeSolution) -> f64 {
    let l = *sol.y.lattice();
    (0..l.nodes())
        .flat_map(|i| sol.y.at(0, i).iter().zip(&spec.initial_value).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

/// Transversality residuals of the reformulated problem over constant
/// directions, with the multiplier of `y(0) = b0` fitted by least squares.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalAdjointReport {
    pub adjoint: AdjointSolution,
    /// Multiplier `h2` of the initial constraint.
    pub multiplier: Vec<f64>,
    /// `max <E[m_0 - chi_x], xi - E xi*>`; optimality needs `<= tol`.
    pub r_xi: f64,
    /// `min <E[n_N + lambda_y], eta - E eta*>`; optimality needs `>= -tol`.
    pub r_eta: f64,
    pub pathwise_gap: f64,
    pub expectation_gap: f64,
}

fn combine(base: &mut AdjointSolution, w: f64, other: &AdjointSolution) -> Result<()> {
    base.m.axpy(w, &other.m)?;
    base.p.axpy(w, &other.p)?;
    base.n.axpy(w, &other.n)?;
    base.delta.axpy(w, &other.delta)
}

fn mean_at(f: &AdaptedField, k: usize) -> Vec<f64> {
    f.expectation(k)
}

pub fn classical_adjoints(
    classical: &ClassicalSpec,
    backward: &ProblemSpec,
    triple: &ControlTriple,
    sol: &FbdsdeSolution,
    samples: usize,
    seed: u64,
    cfg: &PicardConfig,
) -> Result<ClassicalAdjointReport> {
    if samples == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let l = *triple.lattice();
    let dims = backward.dims();
    let k = dims.backward;
    let nn = l.steps();
    let frozen = FrozenCoefficients::from_spec(backward, sol, triple)?;
    let mut cost_weights = CostateWeights::cost();
    cost_weights.h2 = vec![0.0; k];
    let mut adjoint = solve_adjoint(backward, &frozen, &cost_weights, cfg)?;
    let eta_grad = |a: &AdjointSolution, with_cost: bool| -> Vec<f64> {
        let mut g = mean_at(&a.n, nn);
        if with_cost {
            let mut lg = vec![0.0; k];
            for i in 0..l.nodes() {
                let mut buf = vec![0.0; k];
                backward.cost.eta_cost_grad(triple.eta.at(i), &mut buf);
                lg.iter_mut().zip(&buf).for_each(|(s, b)| *s += b / l.nodes() as f64);
            }
            g.iter_mut().zip(&lg).for_each(|(s, b)| *s += b);
        }
        g
    };
    let g0 = eta_grad(&adjoint, true);
    let mut unit = Vec::with_capacity(k);
    let mut columns = vec![0.0; k * k];
    for j in 0..k {
        let mut w = CostateWeights::zero();
        w.h2 = vec![0.0; k];
        w.h2[j] = 1.0;
        let a = solve_adjoint(backward, &frozen, &w, cfg)?;
        let g = eta_grad(&a, false);
        for i in 0..k {
            columns[i * k + j] = g[i];
        }
        unit.push(a);
    }
    let rhs: Vec<f64> = g0.iter().map(|v| -v).collect();
    let multiplier = solve(&columns, k, &rhs)?;
    for (mu, a) in multiplier.iter().zip(&unit) {
        combine(&mut adjoint, *mu, a)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi_star = triple.xi.expectation();
    let mut gx = mean_at(&adjoint.m, 0);
    let mut buf = vec![0.0; dims.state];
    for i in 0..l.nodes() {
        buf.iter_mut().for_each(|v| *v = 0.0);
        backward.cost.xi_cost_grad(triple.xi.at(i), &mut buf);
        gx.iter_mut().zip(&buf).for_each(|(s, b)| *s -= b / l.nodes() as f64);
    }
    let r_xi = backward
        .initial_set
        .sample(&mut rng, &xi_star, samples)
        .iter()
        .map(|v| dot(&gx, &v.iter().zip(&xi_star).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .fold(f64::NEG_INFINITY, f64::max);
    let eta_star = triple.eta.expectation();
    let ge = eta_grad(&adjoint, true);
    let r_eta = backward
        .terminal_set
        .sample(&mut rng, &eta_star, samples)
        .iter()
        .map(|v| dot(&ge, &v.iter().zip(&eta_star).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .fold(f64::INFINITY, f64::min);
    let expectation_gap = crate::linalg::norm(
        &sol.y
            .expectation(0)
            .iter()
            .zip(&classical.initial_value)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    );
    Ok(ClassicalAdjointReport {
        adjoint,
        multiplier,
        r_xi,
        r_eta,
        pathwise_gap: pathwise_initial_gap(classical, sol),
        expectation_gap,
    })
}

/// Runs the reformulated problem on a triple with no control process.
pub fn solve_backward(backward: &ProblemSpec, lattice: &Lattice, xi: &LevelField, eta: &LevelField, cfg: &PicardConfig) -> Result<(ControlTriple, FbdsdeSolution)> {
    let triple = ControlTriple {
        xi: xi.clone(),
        eta: eta.clone(),
        u: AdaptedField::zeros(lattice, 0),
    };
    let sol = solve_state(backward, &triple, cfg)?;
    Ok((triple, sol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_inverse_cases() {
        let s = AffineSigma::new(1, 1, vec![1.0], vec![0.0], vec![0.0]).unwrap();
        let mut u = [0.0];
        s.invert(&[0.4], &[-1.5], &mut u);
        assert_eq!(u[0], -1.5);
        let s = AffineSigma::new(1, 1, vec![2.0], vec![1.0], vec![0.0]).unwrap();
        s.invert(&[0.4], &[1.0], &mut u);
        assert!((u[0] - 0.3).abs() < 1e-15);
        assert!((s.margin() - 2.0).abs() < 1e-12);
        assert!(AffineSigma::new(1, 1, vec![0.0], vec![0.0], vec![0.0]).is_err());
    }
}
