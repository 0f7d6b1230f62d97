use alloc::vec;
use alloc::vec::Vec;

use super::{Lattice, Node};
use crate::error::{check_dim, Error, Result};

/// A process on the lattice: for each level `k` a vector of `dim` values per
/// level-`k` node. Storage is adapted by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedField {
    lattice: Lattice,
    dim: usize,
    data: Vec<f64>,
}

impl AdaptedField {
    pub fn zeros(lattice: &Lattice, dim: usize) -> Self {
        AdaptedField {
            lattice: *lattice,
            dim,
            data: vec![0.0; (lattice.steps() + 1) * lattice.nodes() * dim],
        }
    }

    pub fn constant(lattice: &Lattice, value: &[f64]) -> Self {
        let mut f = Self::zeros(lattice, value.len());
        if !value.is_empty() {
            for chunk in f.data.chunks_exact_mut(value.len()) {
                chunk.copy_from_slice(value);
            }
        }
        f
    }

    pub fn from_fn(lattice: &Lattice, dim: usize, mut f: impl FnMut(Node, &mut [f64])) -> Self {
        let mut out = Self::zeros(lattice, dim);
        for k in 0..=lattice.steps() {
            for i in 0..lattice.nodes() {
                f(lattice.node(k, i), out.at_mut(k, i));
            }
        }
        out
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn level_len(&self) -> usize {
        self.lattice.nodes() * self.dim
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let len = self.level_len();
        &self.data[k * len..(k + 1) * len]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.level_len();
        &mut self.data[k * len..(k + 1) * len]
    }

    pub fn at(&self, k: usize, i: usize) -> &[f64] {
        let start = (k * self.lattice.nodes() + i) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn at_mut(&mut self, k: usize, i: usize) -> &mut [f64] {
        let start = (k * self.lattice.nodes() + i) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn level_field(&self, k: usize) -> LevelField {
        LevelField {
            lattice: self.lattice,
            level: k,
            dim: self.dim,
            data: self.level(k).to_vec(),
        }
    }

    pub fn set_level(&mut self, values: &LevelField) -> Result<()> {
        self.lattice.same(&values.lattice)?;
        check_dim("level values", self.dim, values.dim)?;
        self.level_mut(values.level).copy_from_slice(&values.data);
        Ok(())
    }

    /// Exact expectation at level `k`.
    pub fn expectation(&self, k: usize) -> Vec<f64> {
        mean_rows(self.level(k), self.dim, self.lattice.nodes())
    }

    /// `E |value|^2` at level `k`.
    pub fn second_moment(&self, k: usize) -> f64 {
        self.level(k).iter().map(|v| v * v).sum::<f64>() / self.lattice.nodes() as f64
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        crate::linalg::max_abs(&self.data)
    }

    pub fn max_abs_diff(&self, other: &AdaptedField) -> Result<f64> {
        self.lattice.same(&other.lattice)?;
        check_dim("field", self.dim, other.dim)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &AdaptedField) -> Result<()> {
        self.lattice.same(&x.lattice)?;
        check_dim("field", self.dim, x.dim)?;
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
        Ok(())
    }

    /// `self <- theta * self + (1 - theta) * old`.
    pub fn blend(&mut self, theta: f64, old: &AdaptedField) {
        if theta == 1.0 {
            return;
        }
        for (s, o) in self.data.iter_mut().zip(&old.data) {
            *s = theta * *s + (1.0 - theta) * o;
        }
    }

    pub fn map(&self, dim: usize, mut f: impl FnMut(Node, &[f64], &mut [f64])) -> AdaptedField {
        let mut out = AdaptedField::zeros(&self.lattice, dim);
        for k in 0..=self.lattice.steps() {
            for i in 0..self.lattice.nodes() {
                let node = self.lattice.node(k, i);
                let start = (k * self.lattice.nodes() + i) * dim;
                f(node, self.at(k, i), &mut out.data[start..start + dim]);
            }
        }
        out
    }
}

fn mean_rows(data: &[f64], dim: usize, rows: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for row in data.chunks_exact(dim.max(1)).take(rows) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= rows as f64);
    acc
}

/// Values at a single level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelField {
    lattice: Lattice,
    level: usize,
    dim: usize,
    data: Vec<f64>,
}

impl LevelField {
    pub fn zeros(lattice: &Lattice, level: usize, dim: usize) -> Self {
        LevelField {
            lattice: *lattice,
            level,
            dim,
            data: vec![0.0; lattice.nodes() * dim],
        }
    }

    pub fn constant(lattice: &Lattice, level: usize, value: &[f64]) -> Self {
        let mut f = Self::zeros(lattice, level, value.len());
        if !value.is_empty() {
            for chunk in f.data.chunks_exact_mut(value.len()) {
                chunk.copy_from_slice(value);
            }
        }
        f
    }

    pub fn from_fn(
        lattice: &Lattice,
        level: usize,
        dim: usize,
        mut f: impl FnMut(Node, &mut [f64]),
    ) -> Self {
        let mut out = Self::zeros(lattice, level, dim);
        for i in 0..lattice.nodes() {
            f(lattice.node(level, i), out.at_mut(i));
        }
        out
    }

    /// Builds a level field from a function of full paths, rejecting it if
    /// the function reads a bit outside the level's information.
    pub fn from_path_fn(
        lattice: &Lattice,
        level: usize,
        dim: usize,
        f: impl FnMut(usize, &mut [f64]),
    ) -> Result<Self> {
        super::calculus::check_adapted(lattice, level, dim, f)
    }

    pub(crate) fn from_raw(lattice: Lattice, level: usize, dim: usize, data: Vec<f64>) -> Self {
        LevelField {
            lattice,
            level,
            dim,
            data,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn at_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn expectation(&self) -> Vec<f64> {
        mean_rows(&self.data, self.dim, self.lattice.nodes())
    }

    pub fn second_moment(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() / self.lattice.nodes() as f64
    }

    pub fn max_abs_diff(&self, other: &LevelField) -> Result<f64> {
        self.lattice.same(&other.lattice)?;
        check_dim("level field", self.dim, other.dim)?;
        if self.level != other.level {
            return Err(Error::StepOutOfRange {
                step: other.level,
                steps: self.lattice.steps(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }
}

/// Values at transition `k`, indexed by a level-`k+1` node together with the
/// backward coin group `b_k`. This carries both `w_k` and `b_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedField {
    lattice: Lattice,
    step: usize,
    dim: usize,
    data: Vec<f64>,
}

impl AugmentedField {
    pub fn zeros(lattice: &Lattice, step: usize, dim: usize) -> Result<Self> {
        lattice.check_step(step)?;
        Ok(AugmentedField {
            lattice: *lattice,
            step,
            dim,
            data: vec![0.0; lattice.outcomes() * lattice.nodes() * dim],
        })
    }

    /// `f(next_index, b, out)`: `next_index` is a level-`step+1` node and `b`
    /// the value of the backward coin group at `step`.
    pub fn from_fn(
        lattice: &Lattice,
        step: usize,
        dim: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Result<Self> {
        let mut out = Self::zeros(lattice, step, dim)?;
        for b in 0..lattice.outcomes() {
            for i in 0..lattice.nodes() {
                f(i, b, out.at_mut(i, b));
            }
        }
        Ok(out)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, next_index: usize, b: usize) -> &[f64] {
        let start = (b * self.lattice.nodes() + next_index) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn at_mut(&mut self, next_index: usize, b: usize) -> &mut [f64] {
        let start = (b * self.lattice.nodes() + next_index) * self.dim;
        &mut self.data[start..start + self.dim]
    }
}

/// Values on full coin paths (all `w` and `b` groups at once). Used for
/// quantities that are not adapted, such as running Ito sums.
#[derive(Clone, Debug, PartialEq)]
pub struct PathField {
    lattice: Lattice,
    dim: usize,
    data: Vec<f64>,
}

impl PathField {
    pub fn from_fn(
        lattice: &Lattice,
        dim: usize,
        mut f: impl FnMut(usize, &mut [f64]),
    ) -> Result<Self> {
        let paths = lattice.paths()?;
        let mut data = vec![0.0; paths * dim];
        for p in 0..paths {
            f(p, &mut data[p * dim..(p + 1) * dim]);
        }
        Ok(PathField {
            lattice: *lattice,
            dim,
            data,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, path: usize) -> &[f64] {
        &self.data[path * self.dim..(path + 1) * self.dim]
    }

    pub fn expectation(&self) -> Vec<f64> {
        mean_rows(&self.data, self.dim, self.data.len() / self.dim.max(1))
    }

    pub fn second_moment(&self) -> f64 {
        let paths = self.data.len() / self.dim.max(1);
        self.data.iter().map(|v| v * v).sum::<f64>() / paths as f64
    }
}

impl Lattice {
    /// `W_{t_k}` component `c` at a level-`k` node.
    pub fn forward_driver(&self, k: usize, index: usize, c: usize) -> f64 {
        (0..k).map(|j| self.increment(self.group(index, j), c)).sum()
    }

    /// `B_T - B_{t_k}` component `c` at a level-`k` node.
    pub fn backward_driver_tail(&self, k: usize, index: usize, c: usize) -> f64 {
        (k..self.steps())
            .map(|j| self.increment(self.group(index, j), c))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_expectation() {
        let l = Lattice::new(1.0, 4).unwrap();
        let f = AdaptedField::constant(&l, &[1.5, -2.0]);
        assert_eq!(f.expectation(3), vec![1.5, -2.0]);
    }

    #[test]
    fn drivers_have_unit_variance_rate() {
        let l = Lattice::new(2.0, 6).unwrap();
        let w = LevelField::from_fn(&l, 6, 1, |n, o| o[0] = l.forward_driver(6, n.index, 0));
        let b = LevelField::from_fn(&l, 2, 1, |n, o| o[0] = l.backward_driver_tail(2, n.index, 0));
        assert!((w.second_moment() - 2.0).abs() < 1e-12);
        assert!((b.second_moment() - (2.0 - l.time(2))).abs() < 1e-12);
        assert!(w.expectation()[0].abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_one() {
        let l = Lattice::new(1.0, 10).unwrap();
        let f = LevelField::constant(&l, 3, &[1.0]);
        assert!((f.expectation()[0] - 1.0).abs() < 1e-14);
    }
}
