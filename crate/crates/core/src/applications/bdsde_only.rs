//! Control of a single backward doubly stochastic equation: the state
//! dimension is zero and the costate reduces to `(n, delta)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::adjoint::{initial_costate, mp_residuals, AdjointSolution, CostateWeights, MpReport};
use crate::control::{ControlTriple, ProblemSpec};
use crate::error::{Error, Result};
use crate::fbdsde::{Arg, Coef, FbdsdeSolution};
use crate::lattice::AdaptedField;
use crate::linalg::mat_t_vec_add;
use crate::sweep;
use crate::variation::FrozenCoefficients;

/// `dn = (f_y'n + g_y'delta + w l_y) dt + (f_q'n + g_q'delta + w l_q) dW - delta dB`,
/// `n_0 = h_y'h2 + h0 gamma_y`. Returns `(n, delta)`.
pub fn bdsde_adjoint(
    spec: &ProblemSpec,
    frozen: &FrozenCoefficients,
    weights: &CostateWeights,
) -> Result<(AdaptedField, AdaptedField)> {
    let dims = frozen.dims();
    if dims.state != 0 {
        return Err(Error::DimensionMismatch {
            what: "state dimension of a single backward equation",
            expected: 0,
            found: dims.state,
        });
    }
    let l = *frozen.lattice();
    let n0 = initial_costate(spec, frozen.base, weights)?;
    let k = dims.backward;
    let kd = k * l.driver_dim();
    let mut fy = vec![0.0; k * k];
    let mut gy = vec![0.0; kd * k];
    let mut fq = vec![0.0; k * kd];
    let mut gq = vec![0.0; kd * kd];
    let mut ly = vec![0.0; k];
    let mut lq = vec![0.0; kd];
    let mut delta: Vec<f64> = vec![0.0; kd];
    let (n, z) = sweep::forward(&n0, |node, n, z, big_f, big_g| {
        delta.iter_mut().zip(z).for_each(|(d, v)| *d = -v);
        frozen.partial(Coef::BackwardDrift, Arg::Y, node, &mut fy);
        frozen.partial(Coef::BackwardDiffusion, Arg::Y, node, &mut gy);
        frozen.partial(Coef::BackwardDrift, Arg::Q, node, &mut fq);
        frozen.partial(Coef::BackwardDiffusion, Arg::Q, node, &mut gq);
        big_f.iter_mut().for_each(|v| *v = 0.0);
        big_g.iter_mut().for_each(|v| *v = 0.0);
        mat_t_vec_add(&fy, k, k, n, big_f);
        mat_t_vec_add(&gy, kd, k, &delta, big_f);
        mat_t_vec_add(&fq, k, kd, n, big_g);
        mat_t_vec_add(&gq, kd, kd, &delta, big_g);
        if weights.running != 0.0 {
            frozen.running_partial(Arg::Y, node, &mut ly);
            frozen.running_partial(Arg::Q, node, &mut lq);
            big_f.iter_mut().zip(&ly).for_each(|(o, v)| *o += weights.running * v);
            big_g.iter_mut().zip(&lq).for_each(|(o, v)| *o += weights.running * v);
        }
        big_f.iter_mut().for_each(|v| *v = -*v);
        big_g.iter_mut().for_each(|v| *v = -*v);
    })?;
    let mut delta = z;
    delta.scale(-1.0);
    Ok((n, delta))
}

/// Terminal-value and Hamiltonian conditions for a single backward equation.
pub fn bdsde_mp_residuals(
    spec: &ProblemSpec,
    triple: &ControlTriple,
    base: &FbdsdeSolution,
    weights: &CostateWeights,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<(AdjointSolution, MpReport)> {
    let frozen = FrozenCoefficients::from_spec(spec, base, triple)?;
    let (n, delta) = bdsde_adjoint(spec, &frozen, weights)?;
    let l = *triple.lattice();
    let adjoint = AdjointSolution {
        m: AdaptedField::zeros(&l, 0),
        p: AdaptedField::zeros(&l, 0),
        n,
        delta,
        iterations: 1,
        residual: 0.0,
        history: Vec::new(),
    };
    let report = mp_residuals(spec, triple, base, &adjoint, weights.running, samples, seed, tol)?;
    Ok((adjoint, report))
}
