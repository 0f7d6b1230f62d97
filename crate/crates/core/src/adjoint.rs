//! Costates, the Hamiltonian and maximum-principle residuals.
//!
//! The costate `(m, p, n, delta)` solves
//!
//! ```text
//! dm = (F_x'm + G_x'p + f_x'n + g_x'delta + w l_x) dt
//!      - (F_z'm + G_z'p + f_z'n + g_z'delta + w l_z) dB + p dW
//! dn = (F_y'm + G_y'p + f_y'n + g_y'delta + w l_y) dt
//!      + (F_q'm + G_q'p + f_q'n + g_q'delta + w l_q) dW - delta dB
//! m_T = -(psi_x' h3 + h1 phi_x),   n_0 = h_y' h2 + h0 gamma_y
//! ```
//!
//! with derivatives frozen along a base trajectory and `w` the running-cost
//! weight. `m` reuses the backward template and `n` the forward template.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::{ControlTriple, ConvexSet, ProblemSpec};
use crate::error::{check_dim, Error, Result};
use crate::fbdsde::{picard, Arg, Coef, FbdsdeSolution, PicardConfig, Point};
use crate::lattice::{AdaptedField, LevelField, Node};
use crate::linalg::{dot, mat_t_vec_add, norm};
use crate::sweep;
use crate::variation::FrozenCoefficients;

/// Multipliers produced by the penalized search: `h0, h1 <= 0`, unit norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Multipliers {
    pub h0: f64,
    pub h1: f64,
    pub h2: Vec<f64>,
    pub h3: Vec<f64>,
}

impl Multipliers {
    pub fn new(h0: f64, h1: f64, h2: Vec<f64>, h3: Vec<f64>) -> Result<Self> {
        let m = Multipliers { h0, h1, h2, h3 };
        m.validate()?;
        Ok(m)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.h0 * self.h0 + self.h1 * self.h1 + dot(&self.h2, &self.h2) + dot(&self.h3, &self.h3))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h0 <= 0.0 && self.h1 <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "cost multipliers must be nonpositive, got h0 = {}, h1 = {}",
                self.h0, self.h1
            )));
        }
        let n = self.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("multipliers have norm {n}, expected 1")));
        }
        Ok(())
    }
}

/// Boundary and running-cost weights entering the costate equations.
#[derive(Clone, Debug, PartialEq)]
pub struct CostateWeights {
    pub h0: f64,
    pub h1: f64,
    pub h2: Vec<f64>,
    pub h3: Vec<f64>,
    /// Weight `w` on the running cost and on the `chi`, `lambda` terms.
    pub running: f64,
}

impl CostateWeights {
    /// Weights under which the costate represents the derivative of the
    /// cost: `h0 = h1 = w = 1`, no constraint terms.
    pub fn cost() -> Self {
        CostateWeights {
            h0: 1.0,
            h1: 1.0,
            h2: Vec::new(),
            h3: Vec::new(),
            running: 1.0,
        }
    }

    pub fn zero() -> Self {
        CostateWeights {
            h0: 0.0,
            h1: 0.0,
            h2: Vec::new(),
            h3: Vec::new(),
            running: 0.0,
        }
    }

    pub fn from_multipliers(m: &Multipliers, running: f64) -> Self {
        CostateWeights {
            h0: m.h0,
            h1: m.h1,
            h2: m.h2.clone(),
            h3: m.h3.clone(),
            running,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjointSolution {
    pub m: AdaptedField,
    pub p: AdaptedField,
    pub n: AdaptedField,
    pub delta: AdaptedField,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Costate values at one node.
#[derive(Clone, Copy, Debug)]
pub struct CostatePoint<'a> {
    pub m: &'a [f64],
    pub p: &'a [f64],
    pub n: &'a [f64],
    pub delta: &'a [f64],
}

impl AdjointSolution {
    pub fn at(&self, k: usize, i: usize) -> CostatePoint<'_> {
        CostatePoint {
            m: self.m.at(k, i),
            p: self.p.at(k, i),
            n: self.n.at(k, i),
            delta: self.delta.at(k, i),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.m.max_abs().max(self.p.max_abs()).max(self.n.max_abs()).max(self.delta.max_abs())
    }
}

fn constraint_weights(spec: &ProblemSpec, w: &CostateWeights) -> Result<()> {
    let check = |c: &Option<crate::control::Constraint>, h: &[f64], what| match c {
        Some(c) => check_dim(what, c.map.output_dim(), h.len()),
        None if h.iter().all(|v| *v == 0.0) => Ok(()),
        None => Err(Error::DimensionMismatch {
            what,
            expected: 0,
            found: h.len(),
        }),
    };
    check(&spec.terminal_constraint, &w.h3, "terminal constraint multiplier")?;
    check(&spec.initial_constraint, &w.h2, "initial constraint multiplier")
}

/// `m_N` at every level-`N` node.
pub fn terminal_costate(spec: &ProblemSpec, base: &FbdsdeSolution, w: &CostateWeights) -> Result<LevelField> {
    constraint_weights(spec, w)?;
    let l = *base.x.lattice();
    let n = spec.dims().state;
    let nn = l.steps();
    let mut grad = vec![0.0; n];
    let mut out = LevelField::zeros(&l, nn, n);
    for i in 0..l.nodes() {
        let x = base.x.at(nn, i);
        let slot = out.at_mut(i);
        grad.iter_mut().for_each(|v| *v = 0.0);
        spec.cost.terminal_cost_grad(x, &mut grad);
        for (s, g) in slot.iter_mut().zip(&grad) {
            *s = w.h1 * g;
        }
        if let Some(c) = &spec.terminal_constraint {
            let mut jac = vec![0.0; c.map.output_dim() * n];
            c.map.jacobian(x, &mut jac);
            mat_t_vec_add(&jac, c.map.output_dim(), n, &w.h3, slot);
        }
        slot.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(out)
}

/// `n_0` at every level-0 node.
pub fn initial_costate(spec: &ProblemSpec, base: &FbdsdeSolution, w: &CostateWeights) -> Result<LevelField> {
    constraint_weights(spec, w)?;
    let l = *base.y.lattice();
    let k = spec.dims().backward;
    let mut grad = vec![0.0; k];
    let mut out = LevelField::zeros(&l, 0, k);
    for i in 0..l.nodes() {
        let y = base.y.at(0, i);
        let slot = out.at_mut(i);
        grad.iter_mut().for_each(|v| *v = 0.0);
        spec.cost.initial_cost_grad(y, &mut grad);
        for (s, g) in slot.iter_mut().zip(&grad) {
            *s = w.h0 * g;
        }
        if let Some(c) = &spec.initial_constraint {
            let mut jac = vec![0.0; c.map.output_dim() * k];
            c.map.jacobian(y, &mut jac);
            mat_t_vec_add(&jac, c.map.output_dim(), k, &w.h2, slot);
        }
    }
    Ok(out)
}

/// Computes `sum_c J_{c,a}' costate_c + w l_a` at a node.
struct Transposer<'f, 'a> {
    frozen: &'f FrozenCoefficients<'a>,
    running: f64,
    scratch: RefCell<(Vec<f64>, Vec<f64>)>,
}

impl<'f, 'a> Transposer<'f, 'a> {
    fn new(frozen: &'f FrozenCoefficients<'a>, running: f64) -> Self {
        let dims = frozen.dims();
        let max = Coef::ALL
            .iter()
            .flat_map(|&c| Arg::ALL.iter().map(move |&a| dims.coef(c) * dims.arg(a)))
            .max()
            .unwrap_or(0);
        let widest = Arg::ALL.iter().map(|&a| dims.arg(a)).max().unwrap_or(0);
        Transposer {
            frozen,
            running,
            scratch: RefCell::new((vec![0.0; max], vec![0.0; widest])),
        }
    }

    fn apply(&self, a: Arg, node: Node, co: &CostatePoint, out: &mut [f64]) {
        let dims = self.frozen.dims();
        let cols = dims.arg(a);
        let mut guard = self.scratch.borrow_mut();
        let (jac, lgrad) = &mut *guard;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (c, v) in Coef::ALL.into_iter().zip([co.m, co.p, co.n, co.delta]) {
            let rows = dims.coef(c);
            let j = &mut jac[..rows * cols];
            self.frozen.partial(c, a, node, j);
            mat_t_vec_add(j, rows, cols, v, out);
        }
        if self.running != 0.0 {
            let g = &mut lgrad[..cols];
            self.frozen.running_partial(a, node, g);
            for (o, v) in out.iter_mut().zip(g.iter()) {
                *o += self.running * v;
            }
        }
    }
}

pub fn solve_adjoint(
    spec: &ProblemSpec,
    frozen: &FrozenCoefficients,
    weights: &CostateWeights,
    cfg: &PicardConfig,
) -> Result<AdjointSolution> {
    let l = *frozen.lattice();
    let dims = frozen.dims();
    let m_terminal = terminal_costate(spec, frozen.base, weights)?;
    let n_initial = initial_costate(spec, frozen.base, weights)?;
    let tr = Transposer::new(frozen, weights.running);
    let width = dims.backward * l.driver_dim();
    let mut fwd_delta = vec![0.0; width];
    let mut bwd_delta = vec![0.0; width];

    let sol = picard(
        "costate system",
        &l,
        (dims.backward, dims.state),
        cfg,
        // n in the forward role; (m, p) frozen.
        |m, p| {
            sweep::forward(&n_initial, |node, n, z_t, big_f, big_g| {
                let delta = &mut fwd_delta;
                for (dl, z) in delta.iter_mut().zip(z_t) {
                    *dl = -z;
                }
                let co = CostatePoint {
                    m: m.at(node.level, node.index),
                    p: p.at(node.level, node.index),
                    n,
                    delta,
                };
                tr.apply(Arg::Y, node, &co, big_f);
                tr.apply(Arg::Q, node, &co, big_g);
                big_f.iter_mut().for_each(|v| *v = -*v);
                big_g.iter_mut().for_each(|v| *v = -*v);
            })
        },
        // m in the backward role; (n, delta) frozen.
        |n, z_t| {
            sweep::backward(&m_terminal, |node, m, p, f, g| {
                let delta = &mut bwd_delta;
                for (dl, z) in delta.iter_mut().zip(z_t.at(node.level, node.index)) {
                    *dl = -z;
                }
                let co = CostatePoint {
                    m,
                    p,
                    n: n.at(node.level, node.index),
                    delta,
                };
                tr.apply(Arg::X, node, &co, f);
                tr.apply(Arg::Z, node, &co, g);
                f.iter_mut().for_each(|v| *v = -*v);
            })
        },
    )?;
    let FbdsdeSolution {
        x: n,
        z: mut delta,
        y: m,
        q: p,
        iterations,
        residual,
        history,
        ..
    } = sol;
    delta.scale(-1.0);
    Ok(AdjointSolution {
        m,
        p,
        n,
        delta,
        iterations,
        residual,
        history,
    })
}

fn coefficient_values(spec: &ProblemSpec, node: Node, p: &Point) -> [Vec<f64>; 4] {
    let dims = spec.dims();
    Coef::ALL.map(|c| {
        let mut out = vec![0.0; dims.coef(c)];
        spec.coefficients.eval(c, node, p, &mut out);
        out
    })
}

/// `H = <F,m> + <G,p> + <f,n> + <g,delta> + w l`.
pub fn hamiltonian(spec: &ProblemSpec, node: Node, p: &Point, co: &CostatePoint, running: f64) -> f64 {
    let v = coefficient_values(spec, node, p);
    dot(&v[0], co.m) + dot(&v[1], co.p) + dot(&v[2], co.n) + dot(&v[3], co.delta)
        + running * spec.cost.running(node, p)
}

/// `H_u = F_u'm + G_u'p + f_u'n + g_u'delta + w l_u`.
pub fn hamiltonian_u(spec: &ProblemSpec, node: Node, p: &Point, co: &CostatePoint, running: f64) -> Vec<f64> {
    let dims = spec.dims();
    let cols = dims.control;
    let mut out = vec![0.0; cols];
    for (c, v) in Coef::ALL.into_iter().zip([co.m, co.p, co.n, co.delta]) {
        let rows = dims.coef(c);
        let mut jac = vec![0.0; rows * cols];
        spec.coefficients.partial(c, Arg::U, node, p, &mut jac);
        mat_t_vec_add(&jac, rows, cols, v, &mut out);
    }
    if running != 0.0 {
        let mut g = vec![0.0; cols];
        spec.cost.running_partial(Arg::U, node, p, &mut g);
        for (o, v) in out.iter_mut().zip(&g) {
            *o += running * v;
        }
    }
    out
}

fn base_point<'a>(sol: &'a FbdsdeSolution, u: &'a AdaptedField, k: usize, i: usize) -> Point<'a> {
    Point {
        x: sol.x.at(k, i),
        z: sol.z.at(k, i),
        y: sol.y.at(k, i),
        q: sol.q.at(k, i),
        u: u.at(k, i),
    }
}

/// Boundary classification of one optimality condition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SetCheck {
    pub nodes: usize,
    /// Nodes where the candidate sits on the boundary of its set.
    pub on_boundary: usize,
    /// Largest distance of the (sign-adjusted) gradient from the normal cone.
    pub max_violation: f64,
}

/// Pathwise maximum-principle residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct MpReport {
    /// `max <m_0 - w chi_x, xi - xi*>`; optimality needs `<= tol`.
    pub r_xi: f64,
    /// `min <n_N + w lambda_y, eta - eta*>`; optimality needs `>= -tol`.
    pub r_eta: f64,
    /// `min <H_u, u - u*>` over steps `0..N`; optimality needs `>= -tol`.
    pub r_u: f64,
    pub xi: SetCheck,
    pub eta: SetCheck,
    pub u: SetCheck,
    /// Largest `|H_u|` over the nodes of steps `0..N`.
    pub max_hu: f64,
}

impl MpReport {
    /// Names of the violated conditions at `tol`.
    pub fn violations(&self, tol: f64) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.r_xi > tol {
            v.push("initial transversality");
        }
        if self.r_eta < -tol {
            v.push("terminal transversality");
        }
        if self.r_u < -tol {
            v.push("Hamiltonian control condition");
        }
        v
    }
}

/// Evaluates the three maximum-principle inequalities, sampling `samples`
/// points of each set per node (plus the corners of bounded boxes).
pub fn mp_residuals(
    spec: &ProblemSpec,
    triple: &ControlTriple,
    base: &FbdsdeSolution,
    adjoint: &AdjointSolution,
    running: f64,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<MpReport> {
    if samples == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let l = *triple.lattice();
    l.same(base.x.lattice())?;
    l.same(adjoint.m.lattice())?;
    let dims = spec.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nn = l.steps();

    let mut check = |set: &ConvexSet, star: &[f64], g: &[f64], sign: f64, report: &mut SetCheck, extreme: &mut f64| {
        report.nodes += 1;
        if set.on_boundary(star, tol) {
            report.on_boundary += 1;
        }
        let signed: Vec<f64> = g.iter().map(|v| sign * v).collect();
        report.max_violation = report.max_violation.max(set.normal_cone_violation(star, &signed, tol));
        for s in set.sample(&mut rng, star, samples) {
            let d: Vec<f64> = s.iter().zip(star).map(|(a, b)| a - b).collect();
            let v = dot(g, &d);
            if sign > 0.0 {
                *extreme = extreme.max(v);
            } else {
                *extreme = extreme.min(v);
            }
        }
    };

    let mut xi = SetCheck::default();
    let mut r_xi = f64::NEG_INFINITY;
    let mut grad = vec![0.0; dims.state];
    for i in 0..l.nodes() {
        let star = triple.xi.at(i);
        grad.iter_mut().for_each(|v| *v = 0.0);
        spec.cost.xi_cost_grad(star, &mut grad);
        let g: Vec<f64> = adjoint.m.at(0, i).iter().zip(&grad).map(|(m, c)| m - running * c).collect();
        check(&spec.initial_set, star, &g, 1.0, &mut xi, &mut r_xi);
    }

    let mut eta = SetCheck::default();
    let mut r_eta = f64::INFINITY;
    let mut grad = vec![0.0; dims.backward];
    for i in 0..l.nodes() {
        let star = triple.eta.at(i);
        grad.iter_mut().for_each(|v| *v = 0.0);
        spec.cost.eta_cost_grad(star, &mut grad);
        let g: Vec<f64> = adjoint.n.at(nn, i).iter().zip(&grad).map(|(n, c)| n + running * c).collect();
        check(&spec.terminal_set, star, &g, -1.0, &mut eta, &mut r_eta);
    }

    let mut u = SetCheck::default();
    let mut r_u = f64::INFINITY;
    let mut max_hu: f64 = 0.0;
    for k in 0..nn {
        for i in 0..l.nodes() {
            let node = l.node(k, i);
            let hu = hamiltonian_u(spec, node, &base_point(base, &triple.u, k, i), &adjoint.at(k, i), running);
            max_hu = max_hu.max(norm(&hu));
            check(&spec.control_set, triple.u.at(k, i), &hu, -1.0, &mut u, &mut r_u);
        }
    }

    Ok(MpReport {
        r_xi,
        r_eta,
        r_u,
        xi,
        eta,
        u,
        max_hu,
    })
}

/// The gradient of the weighted objective with respect to the control
/// triple, in the inner product of [`ControlTriple::inner`]:
/// `(-(m_0 - w chi_x), n_N + w lambda_y, H_u)`; `u` at step `N` is zero.
pub fn costate_gradient(
    spec: &ProblemSpec,
    triple: &ControlTriple,
    base: &FbdsdeSolution,
    adjoint: &AdjointSolution,
    running: f64,
) -> Result<ControlTriple> {
    let l = *triple.lattice();
    let dims = spec.dims();
    let nn = l.steps();
    let mut out = triple.zeros_like();
    let mut grad = vec![0.0; dims.state];
    for i in 0..l.nodes() {
        grad.iter_mut().for_each(|v| *v = 0.0);
        spec.cost.xi_cost_grad(triple.xi.at(i), &mut grad);
        for ((o, m), c) in out.xi.at_mut(i).iter_mut().zip(adjoint.m.at(0, i)).zip(&grad) {
            *o = running * c - m;
        }
    }
    let mut grad = vec![0.0; dims.backward];
    for i in 0..l.nodes() {
        grad.iter_mut().for_each(|v| *v = 0.0);
        spec.cost.eta_cost_grad(triple.eta.at(i), &mut grad);
        for ((o, n), c) in out.eta.at_mut(i).iter_mut().zip(adjoint.n.at(nn, i)).zip(&grad) {
            *o = n + running * c;
        }
    }
    for k in 0..nn {
        for i in 0..l.nodes() {
            let hu = hamiltonian_u(spec, l.node(k, i), &base_point(base, &triple.u, k, i), &adjoint.at(k, i), running);
            out.u.at_mut(k, i).copy_from_slice(&hu);
        }
    }
    Ok(out)
}

/// Weighted boundary functional
/// `h3 E<psi_x, x^_N> + h2 E<h_y, y^_0> + h1 E<phi_x, x^_N> + h0 E<gamma_y, y^_0>`.
pub fn boundary_functional(
    spec: &ProblemSpec,
    base: &FbdsdeSolution,
    var: &FbdsdeSolution,
    weights: &CostateWeights,
) -> Result<f64> {
    // m_N and n_0 carry exactly these weights.
    let m_n = terminal_costate(spec, base, weights)?;
    let n_0 = initial_costate(spec, base, weights)?;
    let l = *base.x.lattice();
    let nn = l.steps();
    let nodes = l.nodes() as f64;
    let a: f64 = (0..l.nodes()).map(|i| dot(m_n.at(i), var.x.at(nn, i))).sum::<f64>() / nodes;
    let b: f64 = (0..l.nodes()).map(|i| dot(n_0.at(i), var.y.at(0, i))).sum::<f64>() / nodes;
    Ok(b - a)
}

/// `|E<n_N, y^_N> - E<m_0, x^_0> + dt sum E<Lambda_u, u^> - w dt sum E<l_a, a^>
///   - (boundary functional)|`, where `Lambda_u` is `H_u` without `l_u`.
pub fn duality_gap(
    spec: &ProblemSpec,
    frozen: &FrozenCoefficients,
    var: &FbdsdeSolution,
    adjoint: &AdjointSolution,
    weights: &CostateWeights,
    direction: &ControlTriple,
) -> Result<f64> {
    let l = *frozen.lattice();
    for f in [var.x.lattice(), adjoint.m.lattice(), direction.lattice()] {
        l.same(f)?;
    }
    let dims = spec.dims();
    let nn = l.steps();
    let nodes = l.nodes() as f64;
    let mean = |f: &dyn Fn(usize) -> f64| (0..l.nodes()).map(f).sum::<f64>() / nodes;
    let mut gap = mean(&|i| dot(adjoint.n.at(nn, i), var.y.at(nn, i))) - mean(&|i| dot(adjoint.m.at(0, i), var.x.at(0, i)));
    let widest = Arg::ALL.iter().map(|&a| dims.arg(a)).max().unwrap_or(0);
    let mut lg = vec![0.0; widest];
    for k in 0..nn {
        let mut level = 0.0;
        for i in 0..l.nodes() {
            let node = l.node(k, i);
            let p = frozen.point(k, i);
            let lambda = hamiltonian_u(spec, node, &p, &adjoint.at(k, i), 0.0);
            level += dot(&lambda, direction.u.at(k, i));
            if weights.running != 0.0 {
                let hat = [var.x.at(k, i), var.z.at(k, i), var.y.at(k, i), var.q.at(k, i)];
                for (a, h) in Arg::STATE.into_iter().zip(hat) {
                    let g = &mut lg[..dims.arg(a)];
                    frozen.running_partial(a, node, g);
                    level -= weights.running * dot(g, h);
                }
            }
        }
        gap += level / nodes * l.dt();
    }
    gap -= boundary_functional(spec, frozen.base, var, weights)?;
    Ok(gap.abs())
}
