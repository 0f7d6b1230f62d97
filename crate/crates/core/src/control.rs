//! Problem data: admissible control triples, costs, expectation constraints
//! and the convex sets the controls live in.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::fbdsde::{solve_fbdsde, Arg, Coefficients, Dims, FbdsdeSolution, PicardConfig, Point};
use crate::lattice::{AdaptedField, Lattice, LevelField, Node};
use crate::linalg::{dot, mat_vec_add, norm};

/// Cost pieces. Every method has a zero default; gradients are written into
/// zeroed slices.
pub trait CostModel {
    /// Running cost `l`.
    fn running(&self, _node: Node, _p: &Point) -> f64 {
        0.0
    }
    fn running_partial(&self, _a: Arg, _node: Node, _p: &Point, _out: &mut [f64]) {}
    /// Cost `chi` of the initial state choice.
    fn xi_cost(&self, _xi: &[f64]) -> f64 {
        0.0
    }
    fn xi_cost_grad(&self, _xi: &[f64], _out: &mut [f64]) {}
    /// Cost `lambda` of the terminal value choice.
    fn eta_cost(&self, _eta: &[f64]) -> f64 {
        0.0
    }
    fn eta_cost_grad(&self, _eta: &[f64], _out: &mut [f64]) {}
    /// Terminal state cost `phi(x_T)`.
    fn terminal_cost(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn terminal_cost_grad(&self, _x: &[f64], _out: &mut [f64]) {}
    /// Initial backward-state cost `gamma(y_0)`.
    fn initial_cost(&self, _y: &[f64]) -> f64 {
        0.0
    }
    fn initial_cost_grad(&self, _y: &[f64], _out: &mut [f64]) {}
}

/// The zero cost.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoCost;

impl CostModel for NoCost {}

/// `x^T M x / 2 + c^T x` on a flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    dim: usize,
    matrix: Vec<f64>,
    linear: Vec<f64>,
}

impl QuadraticForm {
    pub fn zero(dim: usize) -> Self {
        QuadraticForm {
            dim,
            matrix: vec![0.0; dim * dim],
            linear: vec![0.0; dim],
        }
    }

    /// `matrix` must be symmetric.
    pub fn new(dim: usize, matrix: Vec<f64>, linear: Vec<f64>) -> Result<Self> {
        check_dim("quadratic form matrix", dim * dim, matrix.len())?;
        check_dim("quadratic form linear part", dim, linear.len())?;
        if !crate::linalg::is_symmetric(&matrix, dim, 1e-12) {
            return Err(Error::InvalidInput("quadratic form matrix is not symmetric".into()));
        }
        Ok(QuadraticForm {
            dim,
            matrix,
            linear,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        let mut mv = vec![0.0; self.dim];
        mat_vec_add(&self.matrix, self.dim, self.dim, v, &mut mv);
        0.5 * dot(v, &mv) + dot(&self.linear, v)
    }

    pub fn grad(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.linear);
        mat_vec_add(&self.matrix, self.dim, self.dim, v, out);
    }
}

/// Quadratic cost pieces. The running form acts on the stacked vector
/// `(x, z, y, q, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost {
    dims: Dims,
    pub running: QuadraticForm,
    pub xi: QuadraticForm,
    pub eta: QuadraticForm,
    pub terminal: QuadraticForm,
    pub initial: QuadraticForm,
}

impl QuadraticCost {
    pub fn zero(dims: Dims) -> Self {
        let total = Arg::ALL.iter().map(|&a| dims.arg(a)).sum();
        QuadraticCost {
            dims,
            running: QuadraticForm::zero(total),
            xi: QuadraticForm::zero(dims.state),
            eta: QuadraticForm::zero(dims.backward),
            terminal: QuadraticForm::zero(dims.state),
            initial: QuadraticForm::zero(dims.backward),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Offset of argument `a` inside the stacked vector.
    pub fn offset(&self, a: Arg) -> usize {
        Arg::ALL[..a.index()].iter().map(|&b| self.dims.arg(b)).sum()
    }

    /// Adds `weight` to the running-matrix entry coupling component `i` of
    /// `a` with component `j` of `b` (and its mirror).
    pub fn add_running(&mut self, a: Arg, i: usize, b: Arg, j: usize, weight: f64) {
        let n = self.running.dim;
        let r = self.offset(a) + i;
        let c = self.offset(b) + j;
        self.running.matrix[r * n + c] += weight;
        if r != c {
            self.running.matrix[c * n + r] += weight;
        }
    }

    fn stacked(&self, p: &Point) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.running.dim);
        for a in Arg::ALL {
            v.extend_from_slice(p.arg(a));
        }
        v
    }
}

impl CostModel for QuadraticCost {
    fn running(&self, _node: Node, p: &Point) -> f64 {
        self.running.value(&self.stacked(p))
    }
    fn running_partial(&self, a: Arg, _node: Node, p: &Point, out: &mut [f64]) {
        let v = self.stacked(p);
        let mut g = vec![0.0; v.len()];
        self.running.grad(&v, &mut g);
        let o = self.offset(a);
        out.copy_from_slice(&g[o..o + self.dims.arg(a)]);
    }
    fn xi_cost(&self, xi: &[f64]) -> f64 {
        self.xi.value(xi)
    }
    fn xi_cost_grad(&self, xi: &[f64], out: &mut [f64]) {
        self.xi.grad(xi, out)
    }
    fn eta_cost(&self, eta: &[f64]) -> f64 {
        self.eta.value(eta)
    }
    fn eta_cost_grad(&self, eta: &[f64], out: &mut [f64]) {
        self.eta.grad(eta, out)
    }
    fn terminal_cost(&self, x: &[f64]) -> f64 {
        self.terminal.value(x)
    }
    fn terminal_cost_grad(&self, x: &[f64], out: &mut [f64]) {
        self.terminal.grad(x, out)
    }
    fn initial_cost(&self, y: &[f64]) -> f64 {
        self.initial.value(y)
    }
    fn initial_cost_grad(&self, y: &[f64], out: &mut [f64]) {
        self.initial.grad(y, out)
    }
}

/// A map constrained in expectation, `E map(v) = target`.
pub trait ConstraintMap {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, v: &[f64], out: &mut [f64]);
    /// Row-major `output_dim x input_dim`.
    fn jacobian(&self, v: &[f64], out: &mut [f64]);
}

/// `v -> A v`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    pub rows: usize,
    pub cols: usize,
    pub matrix: Vec<f64>,
}

impl LinearMap {
    pub fn identity(n: usize) -> Self {
        LinearMap {
            rows: n,
            cols: n,
            matrix: crate::linalg::identity(n),
        }
    }
}

impl ConstraintMap for LinearMap {
    fn input_dim(&self) -> usize {
        self.cols
    }
    fn output_dim(&self) -> usize {
        self.rows
    }
    fn eval(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        mat_vec_add(&self.matrix, self.rows, self.cols, v, out);
    }
    fn jacobian(&self, _v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.matrix);
    }
}

/// `v -> (v_1^2, ..., v_n^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquareMap(pub usize);

impl ConstraintMap for SquareMap {
    fn input_dim(&self) -> usize {
        self.0
    }
    fn output_dim(&self) -> usize {
        self.0
    }
    fn eval(&self, v: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(v) {
            *o = x * x;
        }
    }
    fn jacobian(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, x) in v.iter().enumerate() {
            out[i * self.0 + i] = 2.0 * x;
        }
    }
}

pub struct Constraint {
    pub map: Box<dyn ConstraintMap>,
    pub target: Vec<f64>,
}

impl Constraint {
    pub fn new(map: Box<dyn ConstraintMap>, target: Vec<f64>) -> Result<Self> {
        check_dim("constraint target", map.output_dim(), target.len())?;
        Ok(Constraint { map, target })
    }

    /// `E map(v) - target` over a level field.
    pub fn gap(&self, values: &LevelField) -> Result<Vec<f64>> {
        check_dim("constraint input", self.map.input_dim(), values.dim())?;
        let nodes = values.lattice().nodes();
        let mut acc = vec![0.0; self.target.len()];
        let mut buf = vec![0.0; self.target.len()];
        for i in 0..nodes {
            self.map.eval(values.at(i), &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
        }
        Ok(acc
            .iter()
            .zip(&self.target)
            .map(|(a, t)| a / nodes as f64 - t)
            .collect())
    }
}

/// A box (bounds may be infinite) or a closed ball.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvexSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl ConvexSet {
    pub fn whole(dim: usize) -> Self {
        ConvexSet::Box {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    pub fn interval(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        let s = ConvexSet::Box {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let s = ConvexSet::Ball { center, radius };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lo, .. } => lo.len(),
            ConvexSet::Ball { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConvexSet::Box { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(Error::InvalidInput(format!(
                        "box bounds have lengths {} and {}",
                        lo.len(),
                        hi.len()
                    )));
                }
                for (a, b) in lo.iter().zip(hi) {
                    if a.is_nan() || b.is_nan() || a > b || *a == f64::INFINITY || *b == f64::NEG_INFINITY {
                        return Err(Error::InvalidInput(format!("empty box side [{a}, {b}]")));
                    }
                }
            }
            ConvexSet::Ball { center, radius } => {
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(Error::InvalidInput(format!("ball radius {radius} is invalid")));
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidInput("ball center is not finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn project(&self, p: &[f64], out: &mut [f64]) {
        match self {
            ConvexSet::Box { lo, hi } => {
                for i in 0..p.len() {
                    out[i] = p[i].max(lo[i]).min(hi[i]);
                }
            }
            ConvexSet::Ball { center, radius } => {
                let d: Vec<f64> = p.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = norm(&d);
                let s = if r > *radius { radius / r } else { 1.0 };
                for i in 0..p.len() {
                    out[i] = center[i] + s * d[i];
                }
            }
        }
    }

    pub fn projected(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; p.len()];
        self.project(p, &mut out);
        out
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        match self {
            ConvexSet::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *v >= a - tol && *v <= b + tol),
            ConvexSet::Ball { center, radius } => {
                let d: Vec<f64> = p.iter().zip(center).map(|(a, c)| a - c).collect();
                norm(&d) <= radius + tol
            }
        }
    }

    /// Euclidean diameter, infinite for unbounded boxes.
    pub fn diameter(&self) -> f64 {
        match self {
            ConvexSet::Box { lo, hi } => norm(&lo.iter().zip(hi).map(|(a, b)| b - a).collect::<Vec<_>>()),
            ConvexSet::Ball { radius, .. } => 2.0 * radius,
        }
    }

    pub fn on_boundary(&self, p: &[f64], tol: f64) -> bool {
        match self {
            ConvexSet::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .any(|(v, (a, b))| (v - a).abs() <= tol || (v - b).abs() <= tol),
            ConvexSet::Ball { center, radius } => {
                let d: Vec<f64> = p.iter().zip(center).map(|(a, c)| a - c).collect();
                (norm(&d) - radius).abs() <= tol
            }
        }
    }

    /// Distance of `g` from the normal cone at `p` (a point of the set).
    /// Zero iff `<g, v - p> <= 0` for every `v` in the set, up to `tol` in
    /// the boundary test.
    pub fn normal_cone_violation(&self, p: &[f64], g: &[f64], tol: f64) -> f64 {
        match self {
            ConvexSet::Box { lo, hi } => {
                let mut acc = 0.0;
                for i in 0..p.len() {
                    let at_lo = (p[i] - lo[i]).abs() <= tol;
                    let at_hi = (p[i] - hi[i]).abs() <= tol;
                    let v = match (at_lo, at_hi) {
                        (true, true) => 0.0,
                        (false, true) => (-g[i]).max(0.0),
                        (true, false) => g[i].max(0.0),
                        (false, false) => g[i].abs(),
                    };
                    acc += v * v;
                }
                libm::sqrt(acc)
            }
            ConvexSet::Ball { center, radius } => {
                let d: Vec<f64> = p.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = norm(&d);
                if *radius > 0.0 && (r - radius).abs() <= tol && r > 0.0 {
                    let gn = dot(g, &d) / r;
                    let s = gn.max(0.0) / r;
                    let rest: Vec<f64> = g.iter().zip(&d).map(|(gi, di)| gi - s * di).collect();
                    norm(&rest)
                } else if *radius == 0.0 {
                    0.0
                } else {
                    norm(g)
                }
            }
        }
    }

    /// Points of the set near `around`: projections of uniform perturbations,
    /// followed by the box corners when the box is bounded and small.
    pub fn sample(&self, rng: &mut ChaCha8Rng, around: &[f64], count: usize) -> Vec<Vec<f64>> {
        let diam = self.diameter();
        let reach = if diam.is_finite() && diam > 0.0 { diam } else { 1.0 };
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let p: Vec<f64> = around.iter().map(|a| a + rng.gen_range(-reach..=reach)).collect();
            out.push(self.projected(&p));
        }
        if let ConvexSet::Box { lo, hi } = self {
            let n = lo.len();
            if n <= 6 && lo.iter().chain(hi).all(|v| v.is_finite()) {
                for mask in 0..(1usize << n) {
                    out.push((0..n).map(|i| if (mask >> i) & 1 == 0 { lo[i] } else { hi[i] }).collect());
                }
            }
        }
        out
    }
}

/// The full problem: dynamics, costs, constraints and control sets.
pub struct ProblemSpec {
    pub name: String,
    pub coefficients: Box<dyn Coefficients>,
    pub cost: Box<dyn CostModel>,
    /// `E psi(x_T) = a`.
    pub terminal_constraint: Option<Constraint>,
    /// `E h(y_0) = b`.
    pub initial_constraint: Option<Constraint>,
    /// `K1`, where the initial state `xi` lives.
    pub initial_set: ConvexSet,
    /// `K2`, where the terminal value `eta` lives.
    pub terminal_set: ConvexSet,
    /// `K`, where the control `u` lives.
    pub control_set: ConvexSet,
}

impl ProblemSpec {
    pub fn dims(&self) -> Dims {
        self.coefficients.dims()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        check_dim("initial set", dims.state, self.initial_set.dim())?;
        check_dim("terminal set", dims.backward, self.terminal_set.dim())?;
        check_dim("control set", dims.control, self.control_set.dim())?;
        for s in [&self.initial_set, &self.terminal_set, &self.control_set] {
            s.validate()?;
        }
        if let Some(c) = &self.terminal_constraint {
            check_dim("terminal constraint input", dims.state, c.map.input_dim())?;
        }
        if let Some(c) = &self.initial_constraint {
            check_dim("initial constraint input", dims.backward, c.map.input_dim())?;
        }
        Ok(())
    }

    /// Builds a triple of constant fields.
    pub fn constant_triple(&self, lattice: &Lattice, xi: &[f64], eta: &[f64], u: &[f64]) -> Result<ControlTriple> {
        let dims = self.dims();
        check_dim("initial state", dims.state, xi.len())?;
        check_dim("terminal value", dims.backward, eta.len())?;
        check_dim("control", dims.control, u.len())?;
        Ok(ControlTriple::constant(lattice, xi, eta, u))
    }
}

/// `(xi, eta, u)`: initial state, terminal value and control process.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTriple {
    pub xi: LevelField,
    pub eta: LevelField,
    pub u: AdaptedField,
}

impl ControlTriple {
    pub fn constant(lattice: &Lattice, xi: &[f64], eta: &[f64], u: &[f64]) -> Self {
        ControlTriple {
            xi: LevelField::constant(lattice, 0, xi),
            eta: LevelField::constant(lattice, lattice.steps(), eta),
            u: AdaptedField::constant(lattice, u),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let l = self.lattice();
        ControlTriple {
            xi: LevelField::zeros(l, 0, self.xi.dim()),
            eta: LevelField::zeros(l, l.steps(), self.eta.dim()),
            u: AdaptedField::zeros(l, self.u.dim()),
        }
    }

    pub fn lattice(&self) -> &Lattice {
        self.xi.lattice()
    }

    fn check_like(&self, other: &ControlTriple) -> Result<()> {
        self.lattice().same(other.lattice())?;
        check_dim("initial state", self.xi.dim(), other.xi.dim())?;
        check_dim("terminal value", self.eta.dim(), other.eta.dim())?;
        check_dim("control", self.u.dim(), other.u.dim())
    }

    /// `self + t * dir`.
    pub fn add_scaled(&self, t: f64, dir: &ControlTriple) -> Result<ControlTriple> {
        self.check_like(dir)?;
        let mut out = self.clone();
        for (a, b) in out.xi.as_mut_slice().iter_mut().zip(dir.xi.as_slice()) {
            *a += t * b;
        }
        for (a, b) in out.eta.as_mut_slice().iter_mut().zip(dir.eta.as_slice()) {
            *a += t * b;
        }
        out.u.axpy(t, &dir.u)?;
        Ok(out)
    }

    /// `other - self`.
    pub fn direction_to(&self, other: &ControlTriple) -> Result<ControlTriple> {
        other.add_scaled(-1.0, self)
    }

    pub fn max_abs(&self) -> f64 {
        crate::linalg::max_abs(self.xi.as_slice())
            .max(crate::linalg::max_abs(self.eta.as_slice()))
            .max(self.u.max_abs())
    }

    /// Largest membership violation over all nodes.
    pub fn admissibility_violation(&self, spec: &ProblemSpec) -> f64 {
        let l = *self.lattice();
        let mut worst: f64 = 0.0;
        let mut buf = vec![0.0; self.u.dim().max(self.xi.dim()).max(self.eta.dim())];
        let mut check = |set: &ConvexSet, v: &[f64]| {
            let b = &mut buf[..v.len()];
            set.project(v, b);
            let d: f64 = v.iter().zip(b.iter()).map(|(a, c)| (a - c) * (a - c)).sum();
            worst = worst.max(libm::sqrt(d));
        };
        for i in 0..l.nodes() {
            check(&spec.initial_set, self.xi.at(i));
            check(&spec.terminal_set, self.eta.at(i));
        }
        for k in 0..=l.steps() {
            for i in 0..l.nodes() {
                check(&spec.control_set, self.u.at(k, i));
            }
        }
        worst
    }

    pub fn is_admissible(&self, spec: &ProblemSpec, tol: f64) -> bool {
        self.admissibility_violation(spec) <= tol
    }

    /// Nodewise projection onto `K1`, `K2`, `K`.
    pub fn project(&self, spec: &ProblemSpec) -> ControlTriple {
        let l = *self.lattice();
        let mut out = self.clone();
        for i in 0..l.nodes() {
            let v = self.xi.at(i).to_vec();
            spec.initial_set.project(&v, out.xi.at_mut(i));
            let v = self.eta.at(i).to_vec();
            spec.terminal_set.project(&v, out.eta.at_mut(i));
        }
        for k in 0..=l.steps() {
            for i in 0..l.nodes() {
                let v = self.u.at(k, i).to_vec();
                spec.control_set.project(&v, out.u.at_mut(k, i));
            }
        }
        out
    }

    /// `E<self, other>` in the control metric's inner product:
    /// `E<xi,xi'> + E<eta,eta'> + dt sum_{k<N} E<u_k,u'_k>`.
    pub fn inner(&self, other: &ControlTriple) -> Result<f64> {
        self.check_like(other)?;
        let l = *self.lattice();
        let nodes = l.nodes() as f64;
        let mut acc = dot(self.xi.as_slice(), other.xi.as_slice()) / nodes;
        acc += dot(self.eta.as_slice(), other.eta.as_slice()) / nodes;
        for k in 0..l.steps() {
            acc += dot(self.u.level(k), other.u.level(k)) / nodes * l.dt();
        }
        Ok(acc)
    }
}

pub fn solve_state(spec: &ProblemSpec, triple: &ControlTriple, cfg: &PicardConfig) -> Result<FbdsdeSolution> {
    solve_fbdsde(spec.coefficients.as_ref(), &triple.xi, &triple.eta, &triple.u, cfg)
}

/// Cost split into its pieces.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CostBreakdown {
    pub running: f64,
    pub xi: f64,
    pub eta: f64,
    pub terminal: f64,
    pub initial: f64,
    pub total: f64,
}

fn check_solution(triple: &ControlTriple, sol: &FbdsdeSolution, dims: &Dims) -> Result<()> {
    triple.lattice().same(sol.x.lattice())?;
    check_dim("solution state", dims.state, sol.x.dim())?;
    check_dim("solution backward state", dims.backward, sol.y.dim())?;
    check_dim("control", dims.control, triple.u.dim())
}

/// `E[sum_k l_k dt + chi(xi) + lambda(eta) + phi(x_N) + gamma(y_0)]`.
pub fn cost_breakdown(triple: &ControlTriple, spec: &ProblemSpec, sol: &FbdsdeSolution) -> Result<CostBreakdown> {
    check_solution(triple, sol, &spec.dims())?;
    let l = *triple.lattice();
    let nodes = l.nodes() as f64;
    let cost = spec.cost.as_ref();
    let mut running = 0.0;
    for k in 0..l.steps() {
        let mut level = 0.0;
        for i in 0..l.nodes() {
            let p = Point {
                x: sol.x.at(k, i),
                z: sol.z.at(k, i),
                y: sol.y.at(k, i),
                q: sol.q.at(k, i),
                u: triple.u.at(k, i),
            };
            level += cost.running(l.node(k, i), &p);
        }
        running += level / nodes * l.dt();
    }
    let n = l.steps();
    let mean = |f: &dyn Fn(usize) -> f64| (0..l.nodes()).map(f).sum::<f64>() / nodes;
    let xi = mean(&|i| cost.xi_cost(triple.xi.at(i)));
    let eta = mean(&|i| cost.eta_cost(triple.eta.at(i)));
    let terminal = mean(&|i| cost.terminal_cost(sol.x.at(n, i)));
    let initial = mean(&|i| cost.initial_cost(sol.y.at(0, i)));
    let b = CostBreakdown {
        running,
        xi,
        eta,
        terminal,
        initial,
        total: running + xi + eta + terminal + initial,
    };
    if !b.total.is_finite() {
        return Err(Error::NonFinite { what: "cost", step: 0 });
    }
    Ok(b)
}

pub fn evaluate_cost(triple: &ControlTriple, spec: &ProblemSpec, sol: &FbdsdeSolution) -> Result<f64> {
    Ok(cost_breakdown(triple, spec, sol)?.total)
}

/// Expectation-constraint gaps `E psi(x_N) - a` and `E h(y_0) - b`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintResiduals {
    pub terminal_gap: Vec<f64>,
    pub initial_gap: Vec<f64>,
}

impl ConstraintResiduals {
    pub fn terminal(&self) -> f64 {
        norm(&self.terminal_gap)
    }

    pub fn initial(&self) -> f64 {
        norm(&self.initial_gap)
    }

    pub fn feasible(&self, tol: f64) -> bool {
        self.terminal() <= tol && self.initial() <= tol
    }
}

pub fn constraint_residuals(spec: &ProblemSpec, sol: &FbdsdeSolution) -> Result<ConstraintResiduals> {
    let n = sol.x.lattice().steps();
    let terminal_gap = match &spec.terminal_constraint {
        Some(c) => c.gap(&sol.x.level_field(n))?,
        None => Vec::new(),
    };
    let initial_gap = match &spec.initial_constraint {
        Some(c) => c.gap(&sol.y.level_field(0))?,
        None => Vec::new(),
    };
    Ok(ConstraintResiduals {
        terminal_gap,
        initial_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn projections() {
        let b = ConvexSet::interval(1, -1.0, 1.0).unwrap();
        assert_eq!(b.projected(&[2.0]), vec![1.0]);
        assert_eq!(b.projected(&[0.25]), vec![0.25]);
        let ball = ConvexSet::ball(vec![0.0, 0.0], 1.0).unwrap();
        let p = ball.projected(&[3.0, 4.0]);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn malformed_sets() {
        assert!(ConvexSet::interval(1, 1.0, -1.0).is_err());
        assert!(ConvexSet::ball(vec![0.0], -1.0).is_err());
        let bad = ConvexSet::Box {
            lo: vec![0.0],
            hi: vec![1.0, 2.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn normal_cone_on_box_faces() {
        let b = ConvexSet::interval(2, -1.0, 1.0).unwrap();
        assert_eq!(b.normal_cone_violation(&[1.0, 0.0], &[0.5, 0.0], 1e-12), 0.0);
        assert_eq!(b.normal_cone_violation(&[1.0, 0.0], &[-0.5, 0.0], 1e-12), 0.5);
        assert_eq!(b.normal_cone_violation(&[-1.0, 0.0], &[-0.5, 0.0], 1e-12), 0.0);
        assert_eq!(b.normal_cone_violation(&[0.0, 0.0], &[0.0, 0.3], 1e-12), 0.3);
    }

    #[test]
    fn normal_cone_on_ball() {
        let b = ConvexSet::ball(vec![0.0, 0.0], 2.0).unwrap();
        assert!(b.normal_cone_violation(&[2.0, 0.0], &[3.0, 0.0], 1e-12) < 1e-15);
        assert!((b.normal_cone_violation(&[2.0, 0.0], &[1.0, 1.0], 1e-12) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = ConvexSet::ball(vec![1.0, -1.0], 0.5).unwrap();
        for p in b.sample(&mut rng, &[1.0, -1.0], 40) {
            assert!(b.contains(&p, 1e-12));
        }
        let bx = ConvexSet::interval(2, -1.0, 1.0).unwrap();
        assert_eq!(bx.sample(&mut rng, &[0.0, 0.0], 3).len(), 3 + 4);
    }

    #[test]
    fn quadratic_cost_partials() {
        let mut c = QuadraticCost::zero(Dims::scalar());
        c.add_running(Arg::X, 0, Arg::U, 0, 2.0);
        c.add_running(Arg::Y, 0, Arg::Y, 0, -2.0);
        let p = Point {
            x: &[0.5],
            z: &[0.0],
            y: &[2.0],
            q: &[0.0],
            u: &[3.0],
        };
        let node = Lattice::new(1.0, 1).unwrap().node(0, 0);
        assert!((c.running(node, &p) - (2.0 * 0.5 * 3.0 - 4.0)).abs() < 1e-15);
        let mut g = [0.0];
        c.running_partial(Arg::U, node, &p, &mut g);
        assert_eq!(g, [1.0]);
        c.running_partial(Arg::Y, node, &p, &mut g);
        assert_eq!(g, [-4.0]);
    }

    #[test]
    fn square_constraint_is_positive() {
        let l = Lattice::new(1.0, 3).unwrap();
        let c = Constraint::new(Box::new(SquareMap(1)), vec![0.0]).unwrap();
        let x = LevelField::from_fn(&l, 3, 1, |n, o| o[0] = l.forward_driver(3, n.index, 0));
        assert!((c.gap(&x).unwrap()[0] - 1.0).abs() < 1e-14);
    }
}
