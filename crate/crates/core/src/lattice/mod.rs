//! The two-sided coin lattice.
//!
//! Each step `j` carries a forward coin group `w_j` and a backward coin group
//! `b_j`, each of `driver_dim` independent fair coins. Bit value 0 encodes an
//! increment of `+sqrt(dt)`, bit value 1 encodes `-sqrt(dt)`.
//!
//! A node at level `k` is indexed by `steps * driver_dim` bits: group `j`
//! holds `w_j` when `j < k` and `b_j` otherwise. Moving from level `k` to
//! `k + 1` therefore swaps the contents of group `k` from `b_k` to `w_k`.

mod calculus;
mod field;

pub use calculus::{
    backward_ito_integral, canonical_decomposition, check_adapted, condexp_drop_b,
    condexp_drop_b_weighted, condexp_drop_w, condexp_drop_w_weighted, forward_ito_integral,
    ito_energy_check, Decomposition, EnergyReport,
};
pub use field::{AdaptedField, AugmentedField, LevelField, PathField};

use alloc::string::String;

use crate::error::{Error, Result};

/// Default cap on the number of node index bits per level.
pub const DEFAULT_MAX_BITS: usize = 18;
/// Hard cap on full-path tables (both coin sequences at once).
pub const MAX_PATH_BITS: usize = 22;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    horizon: f64,
    steps: usize,
    driver_dim: usize,
    dt: f64,
    sqrt_dt: f64,
}

/// A lattice node: level, index within the level and time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub level: usize,
    pub index: usize,
    pub time: f64,
}

impl Lattice {
    /// Scalar drivers, default cap.
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        Self::with_options(horizon, steps, 1, DEFAULT_MAX_BITS)
    }

    pub fn with_options(
        horizon: f64,
        steps: usize,
        driver_dim: usize,
        max_bits: usize,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(String::from("horizon must be finite and positive")));
        }
        if steps == 0 {
            return Err(Error::Config(String::from("steps must be at least 1")));
        }
        if driver_dim == 0 {
            return Err(Error::Config(String::from("driver dimension must be at least 1")));
        }
        let bits = steps * driver_dim;
        let cap = max_bits.min(usize::BITS as usize - 2);
        if bits > cap {
            return Err(Error::CapExceeded { bits, cap });
        }
        let dt = horizon / steps as f64;
        Ok(Lattice {
            horizon,
            steps,
            driver_dim,
            dt,
            sqrt_dt: libm::sqrt(dt),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn driver_dim(&self) -> usize {
        self.driver_dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Increment magnitude `sqrt(dt)`.
    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    /// Time of level `k`; the last level is exactly the horizon.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn node(&self, level: usize, index: usize) -> Node {
        Node {
            level,
            index,
            time: self.time(level),
        }
    }

    /// Index bits per level.
    pub fn bits(&self) -> usize {
        self.steps * self.driver_dim
    }

    /// Nodes per level.
    pub fn nodes(&self) -> usize {
        1 << self.bits()
    }

    /// Outcomes of one coin group.
    pub fn outcomes(&self) -> usize {
        1 << self.driver_dim
    }

    pub fn group(&self, index: usize, j: usize) -> usize {
        (index >> (j * self.driver_dim)) & (self.outcomes() - 1)
    }

    pub fn with_group(&self, index: usize, j: usize, value: usize) -> usize {
        let shift = j * self.driver_dim;
        let mask = (self.outcomes() - 1) << shift;
        (index & !mask) | (value << shift)
    }

    /// Component `c` of the increment encoded by a coin group value.
    pub fn increment(&self, value: usize, c: usize) -> f64 {
        if (value >> c) & 1 == 0 {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    pub fn increments(&self, value: usize, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.increment(value, c);
        }
    }

    pub(crate) fn check_step(&self, k: usize) -> Result<()> {
        if k < self.steps {
            Ok(())
        } else {
            Err(Error::StepOutOfRange {
                step: k,
                steps: self.steps,
            })
        }
    }

    pub(crate) fn check_level(&self, k: usize) -> Result<()> {
        if k <= self.steps {
            Ok(())
        } else {
            Err(Error::StepOutOfRange {
                step: k,
                steps: self.steps,
            })
        }
    }

    pub(crate) fn same(&self, other: &Lattice) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::LatticeMismatch)
        }
    }

    /// Forward coin bits `w_0..w_{k-1}` of a level-`k` node, as '0'/'1'.
    pub fn w_bits(&self, k: usize, index: usize) -> String {
        (0..k * self.driver_dim)
            .map(|b| if (index >> b) & 1 == 0 { '0' } else { '1' })
            .collect()
    }

    /// Backward coin bits `b_k..b_{N-1}` of a level-`k` node.
    pub fn b_bits(&self, k: usize, index: usize) -> String {
        (k * self.driver_dim..self.bits())
            .map(|b| if (index >> b) & 1 == 0 { '0' } else { '1' })
            .collect()
    }

    /// Level-`k` index seen by a full path (`w` bits low, `b` bits high).
    pub fn level_index(&self, k: usize, path: usize) -> usize {
        let bits = self.bits();
        let low = (1usize << (k * self.driver_dim)) - 1;
        let all = (1usize << bits) - 1;
        let w = path & all;
        let b = (path >> bits) & all;
        (w & low) | (b & !low & all)
    }

    /// Full paths per lattice, or an error above [`MAX_PATH_BITS`].
    pub fn paths(&self) -> Result<usize> {
        let bits = 2 * self.bits();
        if bits > MAX_PATH_BITS {
            Err(Error::CapExceeded {
                bits,
                cap: MAX_PATH_BITS,
            })
        } else {
            Ok(1 << bits)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn times_hit_horizon() {
        for n in 1..=18 {
            let l = Lattice::new(1.0, n).unwrap();
            assert_eq!(l.time(n), 1.0);
            assert_eq!(l.time(0), 0.0);
        }
    }

    #[test]
    fn cap_is_enforced() {
        assert_eq!(
            Lattice::new(1.0, 19),
            Err(Error::CapExceeded { bits: 19, cap: 18 })
        );
        assert!(Lattice::with_options(1.0, 9, 2, 18).is_ok());
        assert!(Lattice::with_options(1.0, 10, 2, 18).is_err());
    }

    #[test]
    fn group_roundtrip() {
        let l = Lattice::with_options(1.0, 3, 2, 18).unwrap();
        let idx = 0b10_01_11;
        assert_eq!(l.group(idx, 0), 0b11);
        assert_eq!(l.group(idx, 2), 0b10);
        let j = l.with_group(idx, 1, 0b10);
        assert_eq!(j, 0b10_10_11);
    }

    #[test]
    fn level_index_selects_prefix_and_suffix() {
        let l = Lattice::new(1.0, 3).unwrap();
        let w = 0b101;
        let b = 0b011;
        let path = w | (b << 3);
        assert_eq!(l.level_index(0, path), b);
        assert_eq!(l.level_index(3, path), w);
        assert_eq!(l.level_index(1, path), 0b011 & !1 | 1);
        assert_eq!(l.w_bits(1, 0b011), "1");
        assert_eq!(l.b_bits(1, 0b011), "10");
    }
}
