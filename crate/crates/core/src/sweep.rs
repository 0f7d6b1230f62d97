//! The two one-pass engines shared by the state, variational and adjoint
//! solvers.
//!
//! Backward template, for `Y = y_{k+1} + f_{k+1} dt + g_{k+1} dB_k`:
//! `y_k = E[Y | F_k]`, `q_k = E[Y dW_k | F_k] / dt`.
//!
//! Forward template, for `X = x_k - F_k dt - G_k dW_k`:
//! `x_{k+1} = E[X | F_{k+1}]`, `z_{k+1} = -E[X dB_k | F_{k+1}] / dt`.
//!
//! The unresolved boundary integrands `q_N` and `z_0` are the adapted
//! projections `E[q_{N-1} | F_N]` and `E[z_1 | F_0]`, found by a local
//! fixed point since the last (first) step may itself read them.

use alloc::vec;

use crate::error::{check_dim, Error, Result};
use crate::lattice::{
    condexp_drop_b, condexp_drop_b_weighted, condexp_drop_w, condexp_drop_w_weighted,
    AdaptedField, AugmentedField, Lattice, LevelField, Node,
};

const BOUNDARY_MAX_ITER: usize = 200;

fn boundary_converged(change: f64, scale: f64) -> bool {
    change <= 1e-15 * (1.0 + scale)
}

/// `driver(node, y, q, f_out, g_out)` is evaluated at level `k + 1` nodes.
pub(crate) fn backward<D>(terminal: &LevelField, mut driver: D) -> Result<(AdaptedField, AdaptedField)>
where
    D: FnMut(Node, &[f64], &[f64], &mut [f64], &mut [f64]),
{
    let l = *terminal.lattice();
    let n = l.steps();
    if terminal.level() != n {
        return Err(Error::StepOutOfRange {
            step: terminal.level(),
            steps: n,
        });
    }
    let dim = terminal.dim();
    let qd = dim * l.driver_dim();
    let mut y = AdaptedField::zeros(&l, dim);
    let mut q = AdaptedField::zeros(&l, qd);
    y.set_level(terminal)?;

    for k in (0..n).rev() {
        let mut iterations = 0;
        loop {
            backward_step(&l, k, &mut y, &mut q, &mut driver)?;
            if k + 1 < n {
                break;
            }
            // Terminal integrand: project q_{N-1} onto F_N.
            let mut change: f64 = 0.0;
            let mut scale: f64 = 0.0;
            let weight = 1.0 / l.outcomes() as f64;
            let mut acc = vec![0.0; qd];
            for i in 0..l.nodes() {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for b in 0..l.outcomes() {
                    for (a, v) in acc.iter_mut().zip(q.at(k, l.with_group(i, k, b))) {
                        *a += weight * v;
                    }
                }
                let slot = q.at_mut(n, i);
                for (s, a) in slot.iter_mut().zip(&acc) {
                    change = change.max((*s - a).abs());
                    scale = scale.max(a.abs());
                    *s = *a;
                }
            }
            iterations += 1;
            if boundary_converged(change, scale) {
                // One more pass so that level N-1 is consistent with the final q_N.
                backward_step(&l, k, &mut y, &mut q, &mut driver)?;
                break;
            }
            if iterations >= BOUNDARY_MAX_ITER {
                return Err(Error::NonConvergence {
                    what: "terminal integrand projection",
                    iterations,
                    history: vec![change],
                });
            }
        }
    }
    Ok((y, q))
}

fn backward_step<D>(
    l: &Lattice,
    k: usize,
    y: &mut AdaptedField,
    q: &mut AdaptedField,
    driver: &mut D,
) -> Result<()>
where
    D: FnMut(Node, &[f64], &[f64], &mut [f64], &mut [f64]),
{
    let dim = y.dim();
    let d = l.driver_dim();
    let dt = l.dt();
    let mut f = vec![0.0; dim];
    let mut g = vec![0.0; dim * d];
    let mut db = vec![0.0; d];
    let mut aug = AugmentedField::zeros(l, k, dim)?;
    for i in 0..l.nodes() {
        f.iter_mut().for_each(|v| *v = 0.0);
        g.iter_mut().for_each(|v| *v = 0.0);
        let yi = y.at(k + 1, i);
        driver(l.node(k + 1, i), yi, q.at(k + 1, i), &mut f, &mut g);
        if !f.iter().chain(&g).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "backward driver",
                step: k + 1,
            });
        }
        for b in 0..l.outcomes() {
            l.increments(b, &mut db);
            let out = aug.at_mut(i, b);
            for r in 0..dim {
                let mut v = yi[r] + f[r] * dt;
                for c in 0..d {
                    v += g[r * d + c] * db[c];
                }
                out[r] = v;
            }
        }
    }
    let mean = condexp_drop_w(&aug);
    let mut weighted = condexp_drop_w_weighted(&aug);
    weighted.as_mut_slice().iter_mut().for_each(|v| *v /= dt);
    y.set_level(&mean)?;
    q.set_level(&weighted)?;
    Ok(())
}

/// `driver(node, x, z, F_out, G_out)` is evaluated at level `k` nodes.
pub(crate) fn forward<D>(initial: &LevelField, mut driver: D) -> Result<(AdaptedField, AdaptedField)>
where
    D: FnMut(Node, &[f64], &[f64], &mut [f64], &mut [f64]),
{
    let l = *initial.lattice();
    if initial.level() != 0 {
        return Err(Error::StepOutOfRange {
            step: initial.level(),
            steps: l.steps(),
        });
    }
    let dim = initial.dim();
    let zd = dim * l.driver_dim();
    let mut x = AdaptedField::zeros(&l, dim);
    let mut z = AdaptedField::zeros(&l, zd);
    x.set_level(initial)?;

    for k in 0..l.steps() {
        let mut iterations = 0;
        loop {
            forward_step(&l, k, &mut x, &mut z, &mut driver)?;
            if k > 0 {
                break;
            }
            // Initial integrand: project z_1 onto F_0.
            let mut change: f64 = 0.0;
            let mut scale: f64 = 0.0;
            let weight = 1.0 / l.outcomes() as f64;
            let mut acc = vec![0.0; zd];
            for j in 0..l.nodes() {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for w in 0..l.outcomes() {
                    for (a, v) in acc.iter_mut().zip(z.at(1, l.with_group(j, 0, w))) {
                        *a += weight * v;
                    }
                }
                let slot = z.at_mut(0, j);
                for (s, a) in slot.iter_mut().zip(&acc) {
                    change = change.max((*s - a).abs());
                    scale = scale.max(a.abs());
                    *s = *a;
                }
            }
            iterations += 1;
            if boundary_converged(change, scale) {
                forward_step(&l, k, &mut x, &mut z, &mut driver)?;
                break;
            }
            if iterations >= BOUNDARY_MAX_ITER {
                return Err(Error::NonConvergence {
                    what: "initial integrand projection",
                    iterations,
                    history: vec![change],
                });
            }
        }
    }
    Ok((x, z))
}

fn forward_step<D>(
    l: &Lattice,
    k: usize,
    x: &mut AdaptedField,
    z: &mut AdaptedField,
    driver: &mut D,
) -> Result<()>
where
    D: FnMut(Node, &[f64], &[f64], &mut [f64], &mut [f64]),
{
    let dim = x.dim();
    let d = l.driver_dim();
    let dt = l.dt();
    let mut big_f = vec![0.0; dim];
    let mut big_g = vec![0.0; dim * d];
    let mut dw = vec![0.0; d];
    let mut aug = AugmentedField::zeros(l, k, dim)?;
    for j in 0..l.nodes() {
        big_f.iter_mut().for_each(|v| *v = 0.0);
        big_g.iter_mut().for_each(|v| *v = 0.0);
        let xj = x.at(k, j);
        driver(l.node(k, j), xj, z.at(k, j), &mut big_f, &mut big_g);
        if !big_f.iter().chain(&big_g).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "forward driver",
                step: k,
            });
        }
        let b = l.group(j, k);
        for w in 0..l.outcomes() {
            l.increments(w, &mut dw);
            let out = aug.at_mut(l.with_group(j, k, w), b);
            for r in 0..dim {
                let mut v = xj[r] - big_f[r] * dt;
                for c in 0..d {
                    v -= big_g[r * d + c] * dw[c];
                }
                out[r] = v;
            }
        }
    }
    let mean = condexp_drop_b(&aug);
    let mut weighted = condexp_drop_b_weighted(&aug);
    weighted.as_mut_slice().iter_mut().for_each(|v| *v /= -dt);
    x.set_level(&mean)?;
    z.set_level(&weighted)?;
    Ok(())
}

/// Max one-step residual of the backward template (levels `0..N-1`).
pub(crate) fn backward_residual<D>(y: &AdaptedField, q: &AdaptedField, mut driver: D) -> Result<f64>
where
    D: FnMut(Node, &[f64], &[f64], &mut [f64], &mut [f64]),
{
    let l = *y.lattice();
    l.same(q.lattice())?;
    check_dim("backward integrand", y.dim() * l.driver_dim(), q.dim())?;
    let mut yy = y.clone();
    let mut qq = q.clone();
    let mut worst: f64 = 0.0;
    for k in 0..l.steps() {
        backward_step(&l, k, &mut yy, &mut qq, &mut driver)?;
        let dy = level_diff(&yy, y, k);
        let dq = level_diff(&qq, q, k) * l.dt();
        worst = worst.max(dy + dq);
        yy.level_mut(k).copy_from_slice(y.level(k));
        qq.level_mut(k).copy_from_slice(q.level(k));
    }
    Ok(worst)
}

/// Max one-step residual of the forward template (levels `1..N`).
pub(crate) fn forward_residual<D>(x: &AdaptedField, z: &AdaptedField, mut driver: D) -> Result<f64>
where
    D: FnMut(Node, &[f64], &[f64], &mut [f64], &mut [f64]),
{
    let l = *x.lattice();
    l.same(z.lattice())?;
    check_dim("forward integrand", x.dim() * l.driver_dim(), z.dim())?;
    let mut xx = x.clone();
    let mut zz = z.clone();
    let mut worst: f64 = 0.0;
    for k in 0..l.steps() {
        forward_step(&l, k, &mut xx, &mut zz, &mut driver)?;
        let dx = level_diff(&xx, x, k + 1);
        let dz = level_diff(&zz, z, k + 1) * l.dt();
        worst = worst.max(dx + dz);
        xx.level_mut(k + 1).copy_from_slice(x.level(k + 1));
        zz.level_mut(k + 1).copy_from_slice(z.level(k + 1));
    }
    Ok(worst)
}

fn level_diff(a: &AdaptedField, b: &AdaptedField, k: usize) -> f64 {
    a.level(k)
        .iter()
        .zip(b.level(k))
        .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}
