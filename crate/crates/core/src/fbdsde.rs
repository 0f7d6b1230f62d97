//! Coupled time-symmetric systems
//!
//! ```text
//! -dx = F dt + G dW - z dB,   x_0 = xi
//! -dy = f dt + g dB - q dW,   y_T = eta
//! ```
//!
//! solved by damped Picard iteration between the forward and backward sweeps.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::lattice::{AdaptedField, Lattice, LevelField, Node};
use crate::linalg::dot;
use crate::sweep;

/// The four coefficient maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Coef {
    /// `F`, length `n`.
    ForwardDrift,
    /// `G`, `n x d`.
    ForwardDiffusion,
    /// `f`, length `k`.
    BackwardDrift,
    /// `g`, `k x d`.
    BackwardDiffusion,
}

impl Coef {
    pub const ALL: [Coef; 4] = [
        Coef::ForwardDrift,
        Coef::ForwardDiffusion,
        Coef::BackwardDrift,
        Coef::BackwardDiffusion,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Coef::ForwardDrift => "F",
            Coef::ForwardDiffusion => "G",
            Coef::BackwardDrift => "f",
            Coef::BackwardDiffusion => "g",
        }
    }
}

/// Arguments of the coefficients and running cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arg {
    X,
    Z,
    Y,
    Q,
    U,
}

impl Arg {
    pub const ALL: [Arg; 5] = [Arg::X, Arg::Z, Arg::Y, Arg::Q, Arg::U];
    pub const STATE: [Arg; 4] = [Arg::X, Arg::Z, Arg::Y, Arg::Q];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Arg::X => "x",
            Arg::Z => "z",
            Arg::Y => "y",
            Arg::Q => "q",
            Arg::U => "u",
        }
    }
}

/// State, backward, driver and control dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub state: usize,
    pub backward: usize,
    pub driver: usize,
    pub control: usize,
}

impl Dims {
    pub fn scalar() -> Self {
        Dims {
            state: 1,
            backward: 1,
            driver: 1,
            control: 1,
        }
    }

    pub fn coef(&self, c: Coef) -> usize {
        match c {
            Coef::ForwardDrift => self.state,
            Coef::ForwardDiffusion => self.state * self.driver,
            Coef::BackwardDrift => self.backward,
            Coef::BackwardDiffusion => self.backward * self.driver,
        }
    }

    pub fn arg(&self, a: Arg) -> usize {
        match a {
            Arg::X => self.state,
            Arg::Z => self.state * self.driver,
            Arg::Y => self.backward,
            Arg::Q => self.backward * self.driver,
            Arg::U => self.control,
        }
    }
}

/// Arguments at one node.
#[derive(Clone, Copy, Debug)]
pub struct Point<'a> {
    pub x: &'a [f64],
    pub z: &'a [f64],
    pub y: &'a [f64],
    pub q: &'a [f64],
    pub u: &'a [f64],
}

impl<'a> Point<'a> {
    pub fn arg(&self, a: Arg) -> &'a [f64] {
        match a {
            Arg::X => self.x,
            Arg::Z => self.z,
            Arg::Y => self.y,
            Arg::Q => self.q,
            Arg::U => self.u,
        }
    }
}

/// Owned counterpart of [`Point`], indexed by [`Arg`].
#[derive(Clone, Debug, PartialEq)]
pub struct OwnedPoint {
    pub parts: [Vec<f64>; 5],
}

impl OwnedPoint {
    pub fn zeros(dims: &Dims) -> Self {
        OwnedPoint {
            parts: Arg::ALL.map(|a| vec![0.0; dims.arg(a)]),
        }
    }

    pub fn as_point(&self) -> Point<'_> {
        Point {
            x: &self.parts[0],
            z: &self.parts[1],
            y: &self.parts[2],
            q: &self.parts[3],
            u: &self.parts[4],
        }
    }

    pub fn get(&self, a: Arg) -> &[f64] {
        &self.parts[a.index()]
    }

    pub fn get_mut(&mut self, a: Arg) -> &mut [f64] {
        &mut self.parts[a.index()]
    }
}

/// Coefficients `F, G, f, g` and their partial derivatives. Outputs are
/// written into zeroed slices; a partial is row-major `coef_dim x arg_dim`.
/// Coefficients may depend on the node (time and coin history).
pub trait Coefficients {
    fn dims(&self) -> Dims;
    fn eval(&self, c: Coef, node: Node, p: &Point, out: &mut [f64]);
    fn partial(&self, c: Coef, a: Arg, node: Node, p: &Point, out: &mut [f64]);
}

/// Coefficients that are affine in all arguments with constant matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineCoefficients {
    dims: Dims,
    blocks: [[Vec<f64>; 5]; 4],
    offsets: [Vec<f64>; 4],
}

impl AffineCoefficients {
    pub fn zero(dims: Dims) -> Self {
        AffineCoefficients {
            dims,
            blocks: Coef::ALL.map(|c| Arg::ALL.map(|a| vec![0.0; dims.coef(c) * dims.arg(a)])),
            offsets: Coef::ALL.map(|c| vec![0.0; dims.coef(c)]),
        }
    }

    pub fn set(&mut self, c: Coef, a: Arg, matrix: &[f64]) -> Result<()> {
        check_dim("coefficient block", self.dims.coef(c) * self.dims.arg(a), matrix.len())?;
        self.blocks[c.index()][a.index()].copy_from_slice(matrix);
        Ok(())
    }

    pub fn with(mut self, c: Coef, a: Arg, matrix: &[f64]) -> Result<Self> {
        self.set(c, a, matrix)?;
        Ok(self)
    }

    pub fn set_offset(&mut self, c: Coef, v: &[f64]) -> Result<()> {
        check_dim("coefficient offset", self.dims.coef(c), v.len())?;
        self.offsets[c.index()].copy_from_slice(v);
        Ok(())
    }

    pub fn block(&self, c: Coef, a: Arg) -> &[f64] {
        &self.blocks[c.index()][a.index()]
    }
}

impl Coefficients for AffineCoefficients {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn eval(&self, c: Coef, _node: Node, p: &Point, out: &mut [f64]) {
        let rows = self.dims.coef(c);
        out.copy_from_slice(&self.offsets[c.index()]);
        for a in Arg::ALL {
            let cols = self.dims.arg(a);
            crate::linalg::mat_vec_add(&self.blocks[c.index()][a.index()], rows, cols, p.arg(a), out);
        }
    }

    fn partial(&self, c: Coef, a: Arg, _node: Node, _p: &Point, out: &mut [f64]) {
        out.copy_from_slice(&self.blocks[c.index()][a.index()]);
    }
}

/// Picard settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardConfig {
    /// Initial damping `theta` in `(0, 1]`.
    pub damping: f64,
    /// Sup-norm change (relative to `max(1, |fields|)`) at which to stop.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            damping: 1.0,
            tol: 1e-12,
            max_iter: 500,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(alloc::format!(
                "damping {} must lie in (0, 1]",
                self.damping
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(alloc::format!("tolerance {} must be positive", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Solution of a coupled system together with its Picard diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct FbdsdeSolution {
    pub x: AdaptedField,
    pub z: AdaptedField,
    pub y: AdaptedField,
    pub q: AdaptedField,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    /// Damping in force when the iteration stopped.
    pub damping: f64,
}

pub(crate) type Pair = (AdaptedField, AdaptedField);

/// Damped Picard iteration between a forward map `(y, q) -> (x, z)` and a
/// backward map `(x, z) -> (y, q)`, starting from `(y, q) = 0`.
pub(crate) fn picard<Fw, Bw>(
    what: &'static str,
    lattice: &Lattice,
    dims: (usize, usize),
    cfg: &PicardConfig,
    mut forward: Fw,
    mut backward: Bw,
) -> Result<FbdsdeSolution>
where
    Fw: FnMut(&AdaptedField, &AdaptedField) -> Result<Pair>,
    Bw: FnMut(&AdaptedField, &AdaptedField) -> Result<Pair>,
{
    cfg.validate()?;
    let d = lattice.driver_dim();
    let (fd, bd) = dims;
    let mut x = AdaptedField::zeros(lattice, fd);
    let mut z = AdaptedField::zeros(lattice, fd * d);
    let mut y = AdaptedField::zeros(lattice, bd);
    let mut q = AdaptedField::zeros(lattice, bd * d);
    let mut theta = cfg.damping;
    let mut history = Vec::new();
    for iter in 1..=cfg.max_iter {
        let (mut xn, mut zn) = forward(&y, &q)?;
        xn.blend(theta, &x);
        zn.blend(theta, &z);
        let (mut yn, mut qn) = backward(&xn, &zn)?;
        yn.blend(theta, &y);
        qn.blend(theta, &q);
        let change = [
            xn.max_abs_diff(&x)?,
            zn.max_abs_diff(&z)?,
            yn.max_abs_diff(&y)?,
            qn.max_abs_diff(&q)?,
        ]
        .into_iter()
        .fold(0.0, f64::max);
        let scale = [xn.max_abs(), zn.max_abs(), yn.max_abs(), qn.max_abs()]
            .into_iter()
            .fold(1.0, f64::max);
        let residual = change / scale;
        if !residual.is_finite() {
            return Err(Error::NonConvergence {
                what,
                iterations: iter,
                history,
            });
        }
        history.push(residual);
        x = xn;
        z = zn;
        y = yn;
        q = qn;
        if residual <= cfg.tol {
            return Ok(FbdsdeSolution {
                x,
                z,
                y,
                q,
                iterations: iter,
                residual,
                history,
                damping: theta,
            });
        }
        let h = history.len();
        if theta == 1.0 && h >= 3 && history[h - 1] > history[h - 2] && history[h - 2] > history[h - 3] {
            theta = 0.5;
        }
    }
    Err(Error::NonConvergence {
        what,
        iterations: cfg.max_iter,
        history,
    })
}

fn check_inputs(
    coeffs: &dyn Coefficients,
    xi: &LevelField,
    eta: &LevelField,
    u: &AdaptedField,
) -> Result<Lattice> {
    let dims = coeffs.dims();
    let l = *xi.lattice();
    l.same(eta.lattice())?;
    l.same(u.lattice())?;
    if l.driver_dim() != dims.driver {
        return Err(Error::DimensionMismatch {
            what: "driver dimension",
            expected: dims.driver,
            found: l.driver_dim(),
        });
    }
    check_dim("initial state", dims.state, xi.dim())?;
    check_dim("terminal value", dims.backward, eta.dim())?;
    check_dim("control", dims.control, u.dim())?;
    if xi.level() != 0 {
        return Err(Error::StepOutOfRange {
            step: xi.level(),
            steps: l.steps(),
        });
    }
    if eta.level() != l.steps() {
        return Err(Error::StepOutOfRange {
            step: eta.level(),
            steps: l.steps(),
        });
    }
    Ok(l)
}

/// One forward sweep with `(y, q, u)` frozen.
pub fn forward_sweep(
    coeffs: &dyn Coefficients,
    xi: &LevelField,
    y: &AdaptedField,
    q: &AdaptedField,
    u: &AdaptedField,
) -> Result<(AdaptedField, AdaptedField)> {
    sweep::forward(xi, |node, x, z, big_f, big_g| {
        let p = Point {
            x,
            z,
            y: y.at(node.level, node.index),
            q: q.at(node.level, node.index),
            u: u.at(node.level, node.index),
        };
        coeffs.eval(Coef::ForwardDrift, node, &p, big_f);
        coeffs.eval(Coef::ForwardDiffusion, node, &p, big_g);
    })
}

/// One backward sweep with `(x, z, u)` frozen.
pub fn backward_sweep(
    coeffs: &dyn Coefficients,
    eta: &LevelField,
    x: &AdaptedField,
    z: &AdaptedField,
    u: &AdaptedField,
) -> Result<(AdaptedField, AdaptedField)> {
    sweep::backward(eta, |node, y, q, f, g| {
        let p = Point {
            x: x.at(node.level, node.index),
            z: z.at(node.level, node.index),
            y,
            q,
            u: u.at(node.level, node.index),
        };
        coeffs.eval(Coef::BackwardDrift, node, &p, f);
        coeffs.eval(Coef::BackwardDiffusion, node, &p, g);
    })
}

pub fn solve_fbdsde(
    coeffs: &dyn Coefficients,
    xi: &LevelField,
    eta: &LevelField,
    u: &AdaptedField,
    cfg: &PicardConfig,
) -> Result<FbdsdeSolution> {
    let l = check_inputs(coeffs, xi, eta, u)?;
    let dims = coeffs.dims();
    picard(
        "state system",
        &l,
        (dims.state, dims.backward),
        cfg,
        |y, q| forward_sweep(coeffs, xi, y, q, u),
        |x, z| backward_sweep(coeffs, eta, x, z, u),
    )
}

/// One-step residuals `(forward, backward)` of a candidate solution.
pub fn fbdsde_residuals(
    coeffs: &dyn Coefficients,
    sol: &FbdsdeSolution,
    u: &AdaptedField,
) -> Result<(f64, f64)> {
    let fwd = sweep::forward_residual(&sol.x, &sol.z, |node, x, z, big_f, big_g| {
        let p = Point {
            x,
            z,
            y: sol.y.at(node.level, node.index),
            q: sol.q.at(node.level, node.index),
            u: u.at(node.level, node.index),
        };
        coeffs.eval(Coef::ForwardDrift, node, &p, big_f);
        coeffs.eval(Coef::ForwardDiffusion, node, &p, big_g);
    })?;
    let bwd = sweep::backward_residual(&sol.y, &sol.q, |node, y, q, f, g| {
        let p = Point {
            x: sol.x.at(node.level, node.index),
            z: sol.z.at(node.level, node.index),
            y,
            q,
            u: u.at(node.level, node.index),
        };
        coeffs.eval(Coef::BackwardDrift, node, &p, f);
        coeffs.eval(Coef::BackwardDiffusion, node, &p, g);
    })?;
    Ok((fwd, bwd))
}

fn random_point(rng: &mut ChaCha8Rng, dims: &Dims, u: &[f64]) -> OwnedPoint {
    let mut p = OwnedPoint::zeros(dims);
    for a in Arg::STATE {
        for v in p.get_mut(a) {
            *v = rng.gen_range(-1.0..=1.0);
        }
    }
    p.get_mut(Arg::U).copy_from_slice(u);
    p
}

fn random_node(rng: &mut ChaCha8Rng, l: &Lattice) -> Node {
    let k = rng.gen_range(0..=l.steps());
    let i = rng.gen_range(0..l.nodes());
    l.node(k, i)
}

fn eval_all(coeffs: &dyn Coefficients, node: Node, p: &OwnedPoint) -> [Vec<f64>; 4] {
    let dims = coeffs.dims();
    Coef::ALL.map(|c| {
        let mut out = vec![0.0; dims.coef(c)];
        coeffs.eval(c, node, &p.as_point(), &mut out);
        out
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sampled monotonicity constant of `A = (-F, -G, -f, -g)` against
/// `(x, z, y, q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    /// `-max <A1 - A2, d zeta> / |d zeta|^2` over the samples.
    pub mu: f64,
    pub certified: bool,
    pub samples: usize,
}

/// Samples pairs of points in `[-1, 1]` boxes at random nodes with the
/// control fixed at `u`.
pub fn certify_monotonicity(
    coeffs: &dyn Coefficients,
    lattice: &Lattice,
    u: &[f64],
    samples: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    let dims = coeffs.dims();
    if samples == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    if lattice.driver_dim() != dims.driver {
        return Err(Error::DimensionMismatch {
            what: "forward vs backward driver dimension",
            expected: dims.driver,
            found: lattice.driver_dim(),
        });
    }
    check_dim("control", dims.control, u.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let node = random_node(&mut rng, lattice);
        let p1 = random_point(&mut rng, &dims, u);
        let p2 = random_point(&mut rng, &dims, u);
        let v1 = eval_all(coeffs, node, &p1);
        let v2 = eval_all(coeffs, node, &p2);
        let mut inner = 0.0;
        let mut norm = 0.0;
        for (c, a) in Coef::ALL.into_iter().zip(Arg::STATE) {
            let dz: Vec<f64> = p1.get(a).iter().zip(p2.get(a)).map(|(s, t)| s - t).collect();
            let da: Vec<f64> = v1[c.index()].iter().zip(&v2[c.index()]).map(|(s, t)| t - s).collect();
            inner += dot(&da, &dz);
            norm += dot(&dz, &dz);
        }
        if norm > 0.0 {
            worst = worst.max(inner / norm);
        }
    }
    let mu = -worst;
    Ok(MonotonicityReport {
        mu,
        certified: mu > 0.0,
        samples,
    })
}

/// Sampled Lipschitz data for the coupled system.
#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzReport {
    /// Bound on `|dF|^2 + |df|^2` over `|d zeta|^2` and on `|dG|^2 + |dg|^2`
    /// over `|dx|^2 + |dy|^2`.
    pub constant: f64,
    /// Bound on `|dG|^2 + |dg|^2` over `|dz|^2 + |dq|^2`.
    pub alpha: f64,
    /// `alpha < 1/2`.
    pub certified: bool,
    pub samples: usize,
}

pub fn certify_lipschitz(
    coeffs: &dyn Coefficients,
    lattice: &Lattice,
    u: &[f64],
    samples: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    let dims = coeffs.dims();
    if samples == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    check_dim("control", dims.control, u.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut constant: f64 = 0.0;
    let mut alpha: f64 = 0.0;
    let diffusion = |v1: &[Vec<f64>; 4], v2: &[Vec<f64>; 4]| {
        sq_dist(&v1[1], &v2[1]) + sq_dist(&v1[3], &v2[3])
    };
    for _ in 0..samples {
        let node = random_node(&mut rng, lattice);
        let p1 = random_point(&mut rng, &dims, u);
        let p2 = random_point(&mut rng, &dims, u);
        let v1 = eval_all(coeffs, node, &p1);
        let v2 = eval_all(coeffs, node, &p2);
        let dzeta: f64 = Arg::STATE.iter().map(|&a| sq_dist(p1.get(a), p2.get(a))).sum();
        if dzeta > 0.0 {
            let drift = sq_dist(&v1[0], &v2[0]) + sq_dist(&v1[2], &v2[2]);
            constant = constant.max(drift / dzeta);
        }
        // Vary (x, y) only.
        let mut p3 = p1.clone();
        p3.get_mut(Arg::X).copy_from_slice(p2.get(Arg::X));
        p3.get_mut(Arg::Y).copy_from_slice(p2.get(Arg::Y));
        let dxy = sq_dist(p1.get(Arg::X), p2.get(Arg::X)) + sq_dist(p1.get(Arg::Y), p2.get(Arg::Y));
        if dxy > 0.0 {
            let v3 = eval_all(coeffs, node, &p3);
            constant = constant.max(diffusion(&v1, &v3) / dxy);
        }
        // Vary (z, q) only.
        let mut p4 = p1.clone();
        p4.get_mut(Arg::Z).copy_from_slice(p2.get(Arg::Z));
        p4.get_mut(Arg::Q).copy_from_slice(p2.get(Arg::Q));
        let dzq = sq_dist(p1.get(Arg::Z), p2.get(Arg::Z)) + sq_dist(p1.get(Arg::Q), p2.get(Arg::Q));
        if dzq > 0.0 {
            let v4 = eval_all(coeffs, node, &p4);
            alpha = alpha.max(diffusion(&v1, &v4) / dzq);
        }
    }
    Ok(LipschitzReport {
        constant,
        alpha,
        certified: alpha < 0.5,
        samples,
    })
}

/// Largest discrepancy between supplied partials and central differences,
/// relative to `max(1, |partial|)`, at sampled points with controls drawn
/// from `[-1, 1]`.
pub fn check_partials(
    coeffs: &dyn Coefficients,
    lattice: &Lattice,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let dims = coeffs.dims();
    if samples == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let node = random_node(&mut rng, lattice);
        let u: Vec<f64> = (0..dims.control).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let base = random_point(&mut rng, &dims, &u);
        for c in Coef::ALL {
            let rows = dims.coef(c);
            for a in Arg::ALL {
                let cols = dims.arg(a);
                let mut jac = vec![0.0; rows * cols];
                coeffs.partial(c, a, node, &base.as_point(), &mut jac);
                for col in 0..cols {
                    let mut plus = base.clone();
                    plus.get_mut(a)[col] += h;
                    let mut minus = base.clone();
                    minus.get_mut(a)[col] -= h;
                    let mut fp = vec![0.0; rows];
                    let mut fm = vec![0.0; rows];
                    coeffs.eval(c, node, &plus.as_point(), &mut fp);
                    coeffs.eval(c, node, &minus.as_point(), &mut fm);
                    for r in 0..rows {
                        let fd = (fp[r] - fm[r]) / (2.0 * h);
                        let an = jac[r * cols + col];
                        worst = worst.max((fd - an).abs() / an.abs().max(1.0));
                    }
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_affine(entries: &[(Coef, Arg, f64)]) -> AffineCoefficients {
        let mut c = AffineCoefficients::zero(Dims::scalar());
        for &(coef, arg, v) in entries {
            c.set(coef, arg, &[v]).unwrap();
        }
        c
    }

    #[test]
    fn constant_diffusion_moves_state_by_w() {
        let l = Lattice::new(1.0, 5).unwrap();
        let mut c = AffineCoefficients::zero(Dims::scalar());
        c.set_offset(Coef::ForwardDiffusion, &[0.8]).unwrap();
        let xi = LevelField::constant(&l, 0, &[0.3]);
        let zero = AdaptedField::zeros(&l, 1);
        let (x, z) = forward_sweep(&c, &xi, &zero, &zero, &zero).unwrap();
        for k in 0..=5 {
            for i in 0..l.nodes() {
                assert!((x.at(k, i)[0] - (0.3 - 0.8 * l.forward_driver(k, i, 0))).abs() < 1e-14);
                assert_eq!(z.at(k, i)[0], 0.0);
            }
        }
    }

    #[test]
    fn random_initial_state_is_spread() {
        // With F = G = 0, x_k = E[xi | F_k] and xi = x_k - int z dB.
        let l = Lattice::new(1.0, 3).unwrap();
        let c = AffineCoefficients::zero(Dims::scalar());
        let xi = LevelField::from_fn(&l, 0, 1, |n, o| {
            let tail = l.backward_driver_tail(0, n.index, 0);
            o[0] = tail * tail + tail;
        });
        let zero = AdaptedField::zeros(&l, 1);
        let (x, _z) = forward_sweep(&c, &xi, &zero, &zero, &zero).unwrap();
        for i in 0..l.nodes() {
            let tail = l.backward_driver_tail(3, i, 0);
            // E[B_T^2 + B_T] over all b coins = T.
            assert!((x.at(3, i)[0] - 1.0).abs() < 1e-14, "{tail}");
        }
    }

    #[test]
    fn decoupled_system_needs_no_coupling() {
        let l = Lattice::new(1.0, 4).unwrap();
        let c = scalar_affine(&[
            (Coef::ForwardDrift, Arg::X, 0.5),
            (Coef::ForwardDiffusion, Arg::U, 1.0),
            (Coef::BackwardDrift, Arg::Y, -0.3),
            (Coef::BackwardDiffusion, Arg::Q, 0.2),
        ]);
        let xi = LevelField::constant(&l, 0, &[1.0]);
        let eta = LevelField::from_fn(&l, 4, 1, |n, o| o[0] = l.forward_driver(4, n.index, 0));
        let u = AdaptedField::from_fn(&l, 1, |n, o| o[0] = n.time);
        let sol = solve_fbdsde(&c, &xi, &eta, &u, &PicardConfig::default()).unwrap();
        let zero = AdaptedField::zeros(&l, 1);
        let (x, z) = forward_sweep(&c, &xi, &zero, &zero, &u).unwrap();
        let (y, q) = backward_sweep(&c, &eta, &zero, &zero, &u).unwrap();
        assert!(sol.x.max_abs_diff(&x).unwrap() < 1e-12);
        assert!(sol.z.max_abs_diff(&z).unwrap() < 1e-12);
        assert!(sol.y.max_abs_diff(&y).unwrap() < 1e-12);
        assert!(sol.q.max_abs_diff(&q).unwrap() < 1e-12);
        assert!(sol.iterations <= 2);
    }

    #[test]
    fn identity_dissipation_is_monotone() {
        let l = Lattice::new(1.0, 3).unwrap();
        let c = scalar_affine(&[
            (Coef::ForwardDrift, Arg::X, 1.0),
            (Coef::ForwardDiffusion, Arg::Z, 1.0),
            (Coef::BackwardDrift, Arg::Y, 1.0),
            (Coef::BackwardDiffusion, Arg::Q, 1.0),
        ]);
        let rep = certify_monotonicity(&c, &l, &[0.0], 200, 7).unwrap();
        assert!((rep.mu - 1.0).abs() < 1e-9);
        assert!(rep.certified);
        let zero = AffineCoefficients::zero(Dims::scalar());
        let rep = certify_monotonicity(&zero, &l, &[0.0], 50, 7).unwrap();
        assert_eq!(rep.mu, 0.0);
        assert!(!rep.certified);
    }

    #[test]
    fn lipschitz_of_quarter_q() {
        let l = Lattice::new(1.0, 3).unwrap();
        let c = scalar_affine(&[(Coef::BackwardDiffusion, Arg::Q, 0.25)]);
        let rep = certify_lipschitz(&c, &l, &[0.0], 100, 1).unwrap();
        assert!(rep.alpha <= 1.0 / 16.0 + 1e-12 && rep.alpha > 0.05, "{}", rep.alpha);
        assert_eq!(rep.constant, 0.0);
        let mut k = AffineCoefficients::zero(Dims::scalar());
        k.set_offset(Coef::BackwardDrift, &[2.0]).unwrap();
        let rep = certify_lipschitz(&k, &l, &[0.0], 100, 1).unwrap();
        assert_eq!((rep.constant, rep.alpha), (0.0, 0.0));
    }

    #[test]
    fn affine_partials_agree_with_differences() {
        let l = Lattice::new(1.0, 2).unwrap();
        let c = scalar_affine(&[
            (Coef::ForwardDrift, Arg::Y, 2.0),
            (Coef::BackwardDiffusion, Arg::U, -1.5),
            (Coef::ForwardDiffusion, Arg::Q, 0.25),
        ]);
        assert!(check_partials(&c, &l, 10, 3).unwrap() < 1e-8);
    }

    #[test]
    fn bad_damping_is_a_config_error() {
        let cfg = PicardConfig {
            damping: 0.0,
            ..PicardConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
