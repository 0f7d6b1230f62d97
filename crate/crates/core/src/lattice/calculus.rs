use alloc::vec;
use alloc::vec::Vec;

use super::{AdaptedField, AugmentedField, Lattice, LevelField, PathField};
use crate::error::{check_dim, Error, Result};

/// `E[Y | F_{t_k}]`: averages over the forward coin `w_k`, keeps `b_k`.
pub fn condexp_drop_w(input: &AugmentedField) -> LevelField {
    let l = *input.lattice();
    let k = input.step();
    let dim = input.dim();
    let weight = 1.0 / l.outcomes() as f64;
    let mut out = LevelField::zeros(&l, k, dim);
    for j in 0..l.nodes() {
        let b = l.group(j, k);
        let acc = out.at_mut(j);
        for w in 0..l.outcomes() {
            let v = input.at(l.with_group(j, k, w), b);
            for (a, x) in acc.iter_mut().zip(v) {
                *a += weight * x;
            }
        }
    }
    out
}

/// `E[Y dW_k^T | F_{t_k}]`, row-major `dim x driver_dim`.
pub fn condexp_drop_w_weighted(input: &AugmentedField) -> LevelField {
    let l = *input.lattice();
    let k = input.step();
    let dim = input.dim();
    let d = l.driver_dim();
    let weight = 1.0 / l.outcomes() as f64;
    let mut out = LevelField::zeros(&l, k, dim * d);
    for j in 0..l.nodes() {
        let b = l.group(j, k);
        let acc = out.at_mut(j);
        for w in 0..l.outcomes() {
            let v = input.at(l.with_group(j, k, w), b);
            for c in 0..d {
                let dw = weight * l.increment(w, c);
                for r in 0..dim {
                    acc[r * d + c] += v[r] * dw;
                }
            }
        }
    }
    out
}

/// `E[Y | F_{t_{k+1}}]`: averages over the backward coin `b_k`, keeps `w_k`.
pub fn condexp_drop_b(input: &AugmentedField) -> LevelField {
    let l = *input.lattice();
    let k = input.step();
    let dim = input.dim();
    let weight = 1.0 / l.outcomes() as f64;
    let mut out = LevelField::zeros(&l, k + 1, dim);
    for i in 0..l.nodes() {
        let acc = out.at_mut(i);
        for b in 0..l.outcomes() {
            for (a, x) in acc.iter_mut().zip(input.at(i, b)) {
                *a += weight * x;
            }
        }
    }
    out
}

/// `E[Y dB_k^T | F_{t_{k+1}}]`, row-major `dim x driver_dim`.
pub fn condexp_drop_b_weighted(input: &AugmentedField) -> LevelField {
    let l = *input.lattice();
    let k = input.step();
    let dim = input.dim();
    let d = l.driver_dim();
    let weight = 1.0 / l.outcomes() as f64;
    let mut out = LevelField::zeros(&l, k + 1, dim * d);
    for i in 0..l.nodes() {
        let acc = out.at_mut(i);
        for b in 0..l.outcomes() {
            let v = input.at(i, b);
            for c in 0..d {
                let db = weight * l.increment(b, c);
                for r in 0..dim {
                    acc[r * d + c] += v[r] * db;
                }
            }
        }
    }
    out
}

fn integrand_rows(integrand: &AdaptedField) -> Result<usize> {
    let d = integrand.lattice().driver_dim();
    if !integrand.dim().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            what: "integrand columns vs driver",
            expected: d,
            found: integrand.dim(),
        });
    }
    Ok(integrand.dim() / d)
}

/// `sum_{j<k} integrand_j dW_j` on every full path (left endpoints).
/// The integrand is read as a row-major `rows x driver_dim` matrix.
pub fn forward_ito_integral(integrand: &AdaptedField, k: usize) -> Result<PathField> {
    let l = *integrand.lattice();
    l.check_level(k)?;
    let rows = integrand_rows(integrand)?;
    let d = l.driver_dim();
    PathField::from_fn(&l, rows, |path, out| {
        for j in 0..k {
            let v = integrand.at(j, l.level_index(j, path));
            let w = l.group(path, j);
            for c in 0..d {
                let dw = l.increment(w, c);
                for r in 0..rows {
                    out[r] += v[r * d + c] * dw;
                }
            }
        }
    })
}

/// `sum_{j=k}^{N-1} integrand_{j+1} dB_j` on every full path (right endpoints).
pub fn backward_ito_integral(integrand: &AdaptedField, k: usize) -> Result<PathField> {
    let l = *integrand.lattice();
    l.check_level(k)?;
    let rows = integrand_rows(integrand)?;
    let d = l.driver_dim();
    let shift = l.bits();
    PathField::from_fn(&l, rows, |path, out| {
        for j in k..l.steps() {
            let v = integrand.at(j + 1, l.level_index(j + 1, path));
            let b = l.group(path >> shift, j);
            for c in 0..d {
                let db = l.increment(b, c);
                for r in 0..rows {
                    out[r] += v[r * d + c] * db;
                }
            }
        }
    })
}

/// Evaluates `f` on every full path and checks that the result depends only
/// on the information of level `level`. Returns the level field on success.
pub fn check_adapted(
    lattice: &Lattice,
    level: usize,
    dim: usize,
    mut f: impl FnMut(usize, &mut [f64]),
) -> Result<LevelField> {
    lattice.check_level(level)?;
    let paths = lattice.paths()?;
    let bits = lattice.bits();
    let mut seen = vec![false; lattice.nodes()];
    let mut data = vec![0.0; lattice.nodes() * dim];
    let mut buf = vec![0.0; dim];
    for p in 0..paths {
        buf.iter_mut().for_each(|v| *v = 0.0);
        f(p, &mut buf);
        let i = lattice.level_index(level, p);
        let slot = &mut data[i * dim..(i + 1) * dim];
        if !seen[i] {
            slot.copy_from_slice(&buf);
            seen[i] = true;
        } else if slot.iter().zip(&buf).any(|(a, b)| a.to_bits() != b.to_bits()) {
            // Locate a bit whose flip changes the value.
            let canonical = first_path(lattice, level, i);
            let diff = p ^ canonical;
            let bit = (0..2 * bits).find(|b| (diff >> b) & 1 == 1).unwrap_or(0);
            return Err(Error::NotAdapted { level, bit });
        }
    }
    Ok(LevelField::from_raw(*lattice, level, dim, data))
}

// The smallest path mapping to level index `i`: unused bits cleared.
fn first_path(l: &Lattice, level: usize, i: usize) -> usize {
    let bits = l.bits();
    let low = (1usize << (level * l.driver_dim())) - 1;
    let all = (1usize << bits) - 1;
    (i & low) | ((i & !low & all) << bits)
}

/// Per-level residuals of the discrete Ito energy identity.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    /// `r_k` for `k = 0..=N`.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// Checks `E|a_k|^2 = E|a_0|^2 + sum_{j<k} (2E<a_j,b_j> - E|g_{j+1}|^2 + E|d_j|^2) dt`
/// for fields satisfying `a_{k+1} = a_k + b_k dt + g_{k+1} dB_k + d_k dW_k`
/// pathwise. The dynamics are verified first.
pub fn ito_energy_check(
    alpha: &AdaptedField,
    beta: &AdaptedField,
    gamma: &AdaptedField,
    delta: &AdaptedField,
) -> Result<EnergyReport> {
    let l = *alpha.lattice();
    for f in [beta, gamma] {
        l.same(f.lattice())?;
        check_dim("drift/backward integrand", alpha.dim(), f.dim())?;
    }
    l.same(delta.lattice())?;
    let dim = alpha.dim();
    let d = l.driver_dim();
    check_dim("forward integrand", dim * d, delta.dim())?;
    check_dim("backward integrand", dim * d, gamma.dim())?;
    let dt = l.dt();
    let scale = alpha.max_abs().max(1.0);

    let mut dw = vec![0.0; d];
    let mut db = vec![0.0; d];
    for k in 0..l.steps() {
        let mut worst: f64 = 0.0;
        for i in 0..l.nodes() {
            l.increments(l.group(i, k), &mut dw);
            for bv in 0..l.outcomes() {
                l.increments(bv, &mut db);
                let j = l.with_group(i, k, bv);
                let (a0, b0, d0) = (alpha.at(k, j), beta.at(k, j), delta.at(k, j));
                let (a1, g1) = (alpha.at(k + 1, i), gamma.at(k + 1, i));
                for r in 0..dim {
                    let mut rhs = a0[r] + b0[r] * dt;
                    for c in 0..d {
                        rhs += g1[r * d + c] * db[c] + d0[r * d + c] * dw[c];
                    }
                    worst = worst.max((a1[r] - rhs).abs());
                }
            }
        }
        if worst > 1e-9 * scale {
            return Err(Error::DynamicsMismatch {
                step: k,
                residual: worst,
            });
        }
    }

    let mean_dot = |a: &AdaptedField, b: &AdaptedField, k: usize| -> f64 {
        a.level(k).iter().zip(b.level(k)).map(|(x, y)| x * y).sum::<f64>() / l.nodes() as f64
    };
    let e0 = alpha.second_moment(0);
    let mut acc = e0;
    let mut residuals = Vec::with_capacity(l.steps() + 1);
    residuals.push(0.0);
    for k in 0..l.steps() {
        acc += (2.0 * mean_dot(alpha, beta, k) - gamma.second_moment(k + 1)
            + delta.second_moment(k))
            * dt;
        residuals.push((alpha.second_moment(k + 1) - acc).abs());
    }
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(EnergyReport {
        residuals,
        max_residual,
    })
}

/// Drift and integrands of an exact one-step decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub beta: AdaptedField,
    pub gamma: AdaptedField,
    pub delta: AdaptedField,
}

/// The decomposition `a_{k+1} = a_k + b_k dt + g_{k+1} dB_k + d_k dW_k` in
/// which all three coefficients are constant in the coins `(w_k, b_k)`.
/// Every scalar-driver adapted field admits exactly one such decomposition.
pub fn canonical_decomposition(alpha: &AdaptedField) -> Result<Decomposition> {
    let l = *alpha.lattice();
    if l.driver_dim() != 1 {
        return Err(Error::UnsupportedDriverDim(l.driver_dim()));
    }
    let dim = alpha.dim();
    let s = l.sqrt_dt();
    let dt = l.dt();
    let mut beta = AdaptedField::zeros(&l, dim);
    let mut gamma = AdaptedField::zeros(&l, dim);
    let mut delta = AdaptedField::zeros(&l, dim);
    for k in 0..l.steps() {
        for i in 0..l.nodes() {
            // Only handle each 2x2 block once: the representative has w_k = 0
            // at level k+1 and b_k = 0 at level k.
            if l.group(i, k) != 0 {
                continue;
            }
            let (n0, n1) = (i, l.with_group(i, k, 1));
            for r in 0..dim {
                let a0 = alpha.at(k, n0)[r];
                let a1 = alpha.at(k, n1)[r];
                let p0 = alpha.at(k + 1, n0)[r];
                let p1 = alpha.at(k + 1, n1)[r];
                let b = (0.5 * (p0 + p1) - 0.5 * (a0 + a1)) / dt;
                let g = (a1 - a0) / (2.0 * s);
                let dl = (p0 - p1) / (2.0 * s);
                for n in [n0, n1] {
                    beta.at_mut(k, n)[r] = b;
                    delta.at_mut(k, n)[r] = dl;
                    gamma.at_mut(k + 1, n)[r] = g;
                }
            }
        }
    }
    Ok(Decomposition { beta, gamma, delta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(n: usize) -> Lattice {
        Lattice::new(1.0, n).unwrap()
    }

    #[test]
    fn drop_w_of_constant_in_coin() {
        let l = lat(3);
        let aug = AugmentedField::from_fn(&l, 1, 1, |i, b, o| {
            o[0] = (l.group(i, 0) as f64) + 10.0 * b as f64
        })
        .unwrap();
        let out = condexp_drop_w(&aug);
        for j in 0..l.nodes() {
            let expected = l.group(j, 0) as f64 + 10.0 * l.group(j, 1) as f64;
            assert_eq!(out.at(j)[0], expected);
        }
    }

    #[test]
    fn drop_w_of_increment_vanishes() {
        let l = lat(1);
        let aug =
            AugmentedField::from_fn(&l, 0, 1, |i, _b, o| o[0] = l.increment(l.group(i, 0), 0))
                .unwrap();
        assert!(condexp_drop_w(&aug).as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn drop_w_product_enumeration() {
        // Y = dW dB + dB at N = 1; the four outcomes average over w to dB.
        let l = lat(1);
        let aug = AugmentedField::from_fn(&l, 0, 1, |i, b, o| {
            let dw = l.increment(l.group(i, 0), 0);
            let db = l.increment(b, 0);
            o[0] = dw * db + db;
        })
        .unwrap();
        let out = condexp_drop_w(&aug);
        assert_eq!(out.at(0)[0], 1.0);
        assert_eq!(out.at(1)[0], -1.0);
    }

    #[test]
    fn drop_b_product_enumeration() {
        // Y = dW dB^2 at N = 1 gives dt dW.
        let l = Lattice::new(0.25, 1).unwrap();
        let aug = AugmentedField::from_fn(&l, 0, 1, |i, b, o| {
            let dw = l.increment(l.group(i, 0), 0);
            let db = l.increment(b, 0);
            o[0] = dw * db * db;
        })
        .unwrap();
        let out = condexp_drop_b(&aug);
        assert!((out.at(0)[0] - 0.25 * 0.5).abs() < 1e-15);
        assert!((out.at(1)[0] + 0.25 * 0.5).abs() < 1e-15);
        let weighted = condexp_drop_b_weighted(&aug);
        assert!(weighted.as_slice().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn forward_integral_of_one_is_w() {
        let l = lat(4);
        let one = AdaptedField::constant(&l, &[1.0]);
        let i_n = forward_ito_integral(&one, 4).unwrap();
        assert!((i_n.second_moment() - 1.0).abs() < 1e-12);
        assert!(i_n.expectation()[0].abs() < 1e-15);
        let zero = forward_ito_integral(&AdaptedField::zeros(&l, 1), 4).unwrap();
        assert_eq!(zero.second_moment(), 0.0);
    }

    #[test]
    fn backward_integral_of_one_is_b_tail() {
        let l = lat(4);
        let one = AdaptedField::constant(&l, &[1.0]);
        for k in 0..=4 {
            let i_k = backward_ito_integral(&one, k).unwrap();
            assert!((i_k.second_moment() - (1.0 - l.time(k))).abs() < 1e-12);
        }
    }

    #[test]
    fn integrand_shape_is_checked() {
        let l = Lattice::with_options(1.0, 2, 2, 18).unwrap();
        let f = AdaptedField::zeros(&l, 3);
        assert!(matches!(
            forward_ito_integral(&f, 2),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn adaptedness_violation_is_found() {
        let l = lat(3);
        // Level 1 may read w_0 and b_1, b_2; reading w_2 is not allowed.
        let ok = check_adapted(&l, 1, 1, |p, o| {
            o[0] = (l.level_index(1, p) & 1) as f64 + ((p >> 4) & 1) as f64
        });
        assert!(ok.is_ok());
        let bad = check_adapted(&l, 1, 1, |p, o| o[0] = ((p >> 2) & 1) as f64);
        assert_eq!(bad, Err(Error::NotAdapted { level: 1, bit: 2 }));
    }

    #[test]
    fn energy_of_constant_is_zero() {
        let l = lat(3);
        let a = AdaptedField::constant(&l, &[2.0]);
        let z = AdaptedField::zeros(&l, 1);
        let rep = ito_energy_check(&a, &z, &z, &z).unwrap();
        assert_eq!(rep.max_residual, 0.0);
    }

    #[test]
    fn energy_dynamics_mismatch_is_reported() {
        let l = lat(3);
        let a = AdaptedField::from_fn(&l, 1, |n, o| o[0] = n.level as f64);
        let z = AdaptedField::zeros(&l, 1);
        assert!(matches!(
            ito_energy_check(&a, &z, &z, &z),
            Err(Error::DynamicsMismatch { step: 0, .. })
        ));
    }

    #[test]
    fn canonical_decomposition_reproduces_dynamics() {
        let l = lat(4);
        let a = AdaptedField::from_fn(&l, 1, |n, o| {
            let w = l.forward_driver(n.level, n.index, 0);
            let b = l.backward_driver_tail(n.level, n.index, 0);
            o[0] = w * w + 0.3 * b + w * b + n.time;
        });
        let dec = canonical_decomposition(&a).unwrap();
        let rep = ito_energy_check(&a, &dec.beta, &dec.gamma, &dec.delta).unwrap();
        let beta_sq: f64 = (0..4).map(|k| dec.beta.second_moment(k)).sum::<f64>() * l.dt() * l.dt();
        assert!((rep.residuals[4] - beta_sq).abs() < 1e-12);
    }
}
