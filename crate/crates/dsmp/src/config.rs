//! Run configuration: a strict JSON file merged with command-line flags.

use std::path::{Path, PathBuf};

use dsmp_core::applications::lq::{LqBlock, LqSpec, LqWeights, SignChoice};
use dsmp_core::control::ConvexSet;
use dsmp_core::fbdsde::{Arg, Coef, Dims};
use dsmp_core::lattice::DEFAULT_MAX_BITS;
use dsmp_core::presets::PRESET_NAMES;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MAX_STEPS: usize = 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Auto,
    Plus,
    Minus,
}

impl Sign {
    pub fn choice(self) -> SignChoice {
        match self {
            Sign::Auto => SignChoice::Auto,
            Sign::Plus => SignChoice::Plus,
            Sign::Minus => SignChoice::Minus,
        }
    }
}

/// One bound of a box; `null` is unbounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Scalar(Option<f64>),
    Vector(Vec<Option<f64>>),
}

impl Bound {
    fn expand(&self, dim: usize, missing: f64) -> Result<Vec<f64>, CliError> {
        match self {
            Bound::Scalar(v) => Ok(vec![v.unwrap_or(missing); dim]),
            Bound::Vector(v) if v.len() == dim => Ok(v.iter().map(|b| b.unwrap_or(missing)).collect()),
            Bound::Vector(v) => Err(CliError::config(format!("box bound has {} entries, expected {dim}", v.len()))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallDef {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SetDef {
    Box(Bound, Bound),
    Ball(BallDef),
}

impl SetDef {
    pub fn build(&self, dim: usize) -> Result<ConvexSet, CliError> {
        let set = match self {
            SetDef::Box(lo, hi) => ConvexSet::Box {
                lo: lo.expand(dim, f64::NEG_INFINITY)?,
                hi: hi.expand(dim, f64::INFINITY)?,
            },
            SetDef::Ball(b) => ConvexSet::Ball {
                center: b.center.clone(),
                radius: b.radius,
            },
        };
        if set.dim() != dim {
            return Err(CliError::config(format!("set has dimension {}, expected {dim}", set.dim())));
        }
        set.validate().map_err(CliError::from_core_config)?;
        Ok(set)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsDef {
    pub state: usize,
    pub backward: usize,
    #[serde(default = "one")]
    pub driver: usize,
    pub control: usize,
}

fn one() -> usize {
    1
}

/// Row-major blocks of one coefficient; missing blocks are zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    pub u: Vec<f64>,
    pub terminal: Vec<f64>,
    pub initial: Vec<f64>,
}

/// A linear-quadratic problem given inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqDef {
    pub name: String,
    pub dims: DimsDef,
    #[serde(default)]
    pub forward_drift: BlockDef,
    #[serde(default)]
    pub forward_diffusion: BlockDef,
    #[serde(default)]
    pub backward_drift: BlockDef,
    #[serde(default)]
    pub backward_diffusion: BlockDef,
    pub weights: WeightsDef,
    pub initial_state: Vec<f64>,
    pub terminal_value: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_set: Option<SetDef>,
}

fn fill_block(block: &mut LqBlock, def: &BlockDef) {
    for (a, v) in [(Arg::X, &def.x), (Arg::Z, &def.z), (Arg::Y, &def.y), (Arg::Q, &def.q), (Arg::U, &def.u)] {
        if let Some(v) = v {
            *block.get_mut(a) = v.clone();
        }
    }
}

impl LqDef {
    pub fn dims(&self) -> Dims {
        Dims {
            state: self.dims.state,
            backward: self.dims.backward,
            driver: self.dims.driver,
            control: self.dims.control,
        }
    }

    pub fn build(&self) -> Result<LqSpec, CliError> {
        let dims = self.dims();
        let mut s = LqSpec::zero(&self.name, dims);
        for (c, def) in [
            (Coef::ForwardDrift, &self.forward_drift),
            (Coef::ForwardDiffusion, &self.forward_diffusion),
            (Coef::BackwardDrift, &self.backward_drift),
            (Coef::BackwardDiffusion, &self.backward_diffusion),
        ] {
            fill_block(s.block_mut(c), def);
        }
        let w = &self.weights;
        let mut weights = LqWeights::zero(&dims);
        for (slot, v) in [(&mut weights.x, &w.x), (&mut weights.z, &w.z), (&mut weights.y, &w.y), (&mut weights.q, &w.q)] {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        weights.u = w.u.clone();
        weights.terminal = w.terminal.clone();
        weights.initial = w.initial.clone();
        s.weights = weights;
        s.initial_state = self.initial_state.clone();
        s.terminal_value = self.terminal_value.clone();
        if let Some(set) = &self.control_set {
            s.control_set = set.build(dims.control)?;
        }
        s.check_invariants().map_err(CliError::from_core_config)?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlDef {
    pub offset: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<Vec<f64>>,
}

/// The JSON file schema. Every key is optional; unknown keys are errors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub problem: Option<LqDef>,
    pub backend: Option<String>,
    pub steps: Option<usize>,
    pub horizon: Option<f64>,
    pub damping: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub lq_tol: Option<f64>,
    pub mp_tol: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub directions: Option<usize>,
    pub descent_iter: Option<usize>,
    pub sign: Option<Sign>,
    pub xi: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    pub control: Option<ControlDef>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Values given on the command line; they override the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub steps: Option<usize>,
    pub damping: Option<f64>,
    pub tol: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub sign: Option<Sign>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Fully resolved configuration, embedded in every report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub config_file: Option<String>,
    pub problem: Option<LqDef>,
    pub backend: String,
    pub steps: usize,
    pub horizon: f64,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub lq_tol: f64,
    pub mp_tol: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub samples: usize,
    pub directions: usize,
    pub descent_iter: usize,
    pub sign: Sign,
    pub xi: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    pub control: Option<ControlDef>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub report: Option<PathBuf>,
}

pub fn read_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<FileConfig, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn nonzero(name: &str, v: usize) -> Result<usize, CliError> {
    if v > 0 {
        Ok(v)
    } else {
        Err(CliError::config(format!("{name} must be positive")))
    }
}

impl RunConfig {
    pub fn resolve(file: FileConfig, flags: Overrides) -> Result<RunConfig, CliError> {
        let preset = flags.preset.or(file.preset);
        if let Some(p) = &preset {
            if !PRESET_NAMES.contains(&p.as_str()) {
                return Err(CliError::config(format!(
                    "unknown preset '{p}'; known presets: {}",
                    PRESET_NAMES.join(", ")
                )));
            }
        }
        if preset.is_some() && file.problem.is_some() {
            return Err(CliError::config("give either a preset or an inline problem, not both"));
        }
        let backend = file.backend.unwrap_or_else(|| "lattice".into());
        if backend != "lattice" {
            return Err(CliError::config(format!("unsupported backend '{backend}'; only 'lattice' is available")));
        }
        let steps = flags.steps.or(file.steps).unwrap_or(6);
        if !(1..=MAX_STEPS).contains(&steps) {
            return Err(CliError::config(format!("steps must lie in 1..={MAX_STEPS}, got {steps}")));
        }
        if let Some(p) = &file.problem {
            if steps * p.dims.driver > DEFAULT_MAX_BITS {
                return Err(CliError::config("steps times driver dimension exceeds the lattice cap"));
            }
        }
        let damping = flags.damping.or(file.damping).unwrap_or(1.0);
        if !(damping > 0.0 && damping <= 1.0) {
            return Err(CliError::config(format!("damping must lie in (0, 1], got {damping}")));
        }
        Ok(RunConfig {
            preset,
            config_file: flags.config.map(|p| p.display().to_string()),
            problem: file.problem,
            backend,
            steps,
            horizon: positive("horizon", file.horizon.unwrap_or(1.0))?,
            damping,
            tol: positive("tol", flags.tol.or(file.tol).unwrap_or(1e-12))?,
            max_iter: nonzero("max_iter", file.max_iter.unwrap_or(500))?,
            lq_tol: positive("lq_tol", file.lq_tol.unwrap_or(1e-10))?,
            mp_tol: positive("mp_tol", file.mp_tol.unwrap_or(1e-6))?,
            epsilon: positive("epsilon", flags.epsilon.or(file.epsilon).unwrap_or(0.01))?,
            seed: flags.seed.or(file.seed).unwrap_or(1),
            samples: nonzero("samples", file.samples.unwrap_or(8))?,
            directions: nonzero("directions", file.directions.unwrap_or(50))?,
            descent_iter: nonzero("descent_iter", file.descent_iter.unwrap_or(50))?,
            sign: flags.sign.or(file.sign).unwrap_or(Sign::Auto),
            xi: file.xi,
            eta: file.eta,
            control: file.control,
            out: flags.out.or(file.out),
            report: flags.report.or(file.report),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse(r#"{"steps": 4, "stpes": 5}"#).is_err());
        assert!(parse(r#"{"control": {"offset": [0.0], "slop": [1.0]}}"#).is_err());
    }

    #[test]
    fn sets_parse_in_both_shapes() {
        let b: SetDef = serde_json::from_str(r#"{"box": [-1, 1]}"#).unwrap();
        assert_eq!(b.build(2).unwrap(), ConvexSet::interval(2, -1.0, 1.0).unwrap());
        let open: SetDef = serde_json::from_str(r#"{"box": [null, [0, 1]]}"#).unwrap();
        assert!(open.build(2).unwrap().contains(&[-50.0, 0.5], 0.0));
        let ball: SetDef = serde_json::from_str(r#"{"ball": {"center": [0, 0], "radius": 2}}"#).unwrap();
        assert!(ball.build(2).is_ok());
        assert!(ball.build(3).is_err());
    }

    #[test]
    fn flags_override_and_ranges_are_checked() {
        let file = parse(r#"{"steps": 4, "seed": 3}"#).unwrap();
        let cfg = RunConfig::resolve(
            file.clone(),
            Overrides {
                steps: Some(5),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!((cfg.steps, cfg.seed), (5, 3));
        let too_many = Overrides {
            steps: Some(19),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(file.clone(), too_many).is_err());
        let bad_tol = Overrides {
            tol: Some(0.0),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(file, bad_tol).is_err());
    }
}
