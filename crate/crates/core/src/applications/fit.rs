//! Least-squares fit of `J(dt) = J_inf + c dt^p`.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fit {
    pub limit: f64,
    pub coefficient: f64,
    pub order: f64,
    /// Sum of squared residuals.
    pub rss: f64,
}

const ORDER_MIN: f64 = 0.05;
const ORDER_MAX: f64 = 4.0;

fn linear_fit(points: &[(f64, f64)], p: f64) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(dt, j) in points {
        let x = libm::pow(dt, p);
        sx += x;
        sy += j;
        sxx += x * x;
        sxy += x * j;
    }
    let det = n * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return (sy / n, 0.0, f64::INFINITY);
    }
    let c = (n * sxy - sx * sy) / det;
    let a = (sy - c * sx) / n;
    let rss = points
        .iter()
        .map(|&(dt, j)| {
            let r = j - a - c * libm::pow(dt, p);
            r * r
        })
        .sum();
    (a, c, rss)
}

/// Grid scan over the order followed by golden-section refinement; the
/// limit and coefficient are linear least squares for each order.
pub fn fit_extrapolation(points: &[(f64, f64)]) -> Result<Fit> {
    if points.len() < 3 {
        return Err(Error::InvalidInput("an extrapolation fit needs at least three points".into()));
    }
    if points.iter().any(|(dt, j)| !(dt.is_finite() && *dt > 0.0 && j.is_finite())) {
        return Err(Error::InvalidInput("fit points must have positive steps and finite values".into()));
    }
    let rss = |p: f64| linear_fit(points, p).2;
    let steps = 800;
    let h = (ORDER_MAX - ORDER_MIN) / steps as f64;
    let mut best = ORDER_MIN;
    for i in 0..=steps {
        let p = ORDER_MIN + i as f64 * h;
        if rss(p) < rss(best) {
            best = p;
        }
    }
    let (mut lo, mut hi) = ((best - h).max(ORDER_MIN), (best + h).min(ORDER_MAX));
    let g = (libm::sqrt(5.0) - 1.0) / 2.0;
    for _ in 0..60 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if rss(a) < rss(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let order = 0.5 * (lo + hi);
    let (limit, coefficient, rss) = linear_fit(points, order);
    Ok(Fit {
        limit,
        coefficient,
        order,
        rss,
    })
}
