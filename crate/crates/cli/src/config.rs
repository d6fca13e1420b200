//! Pipeline configuration: a flat `key = value` file, overridable by flags.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated; component lists also accept inclusive ranges (`3-25`).
//! Matrices use `;` between rows and `,` between entries.

use std::path::{Path, PathBuf};

use gmm_imm::gmm::{InitMode, DEFAULT_MAX_ITER, DEFAULT_TOL};
use gmm_imm::imm::{ImmConfig, TransitionConfig, TransitionMatrix, WeightPrior, DEFAULT_TR_DIAG};
use gmm_imm::synth::{Dwell, SynthConfig};
use gmm_imm::sysid::{NoiseParams, DEFAULT_STRIDE, DEFAULT_WINDOW};
use gmm_imm::{consistency::DEFAULT_TAIL, filter::DEFAULT_P0};

use crate::error::CliError;

/// Every key accepted in a config file, in documentation order.
pub const KEYS: &[&str] = &[
    "data_dir",
    "output_dir",
    "window",
    "stride",
    "components",
    "seed",
    "max_iter",
    "tol",
    "init",
    "q",
    "r",
    "x0_mode",
    "p0",
    "tr_diag",
    "tr_matrix",
    "weight_prior",
    "tail",
    "seen",
    "unseen",
    "workers",
    "synth_runs",
    "synth_holdout",
    "synth_steps",
    "synth_seed",
    "synth_dwell",
    "synth_dwell_mode",
    "synth_min_dwell",
    "synth_regimes",
    "synth_process_std",
    "synth_measurement_std",
    "synth_amplitude",
    "synth_dt",
];

/// Only supported initial-state rule: every filter starts at the first
/// measured angular velocity with variance `p0`.
pub const X0_FIRST_MEASUREMENT: &str = "first_measurement";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub window: usize,
    pub stride: usize,
    pub components: Vec<usize>,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub init: InitMode,
    pub noise: NoiseParams,
    pub p0: f64,
    pub transition: TransitionConfig,
    pub weight_prior: WeightPrior,
    pub tail: f64,
    /// Runs used for fitting. Empty means "every run not listed as unseen".
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
    /// Parallel estimation jobs; 0 lets the thread pool decide.
    pub workers: usize,
    pub synth: SynthConfig,
    /// Extra runs generated after `synth.runs` and tagged unseen.
    pub synth_holdout: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            components: (3..=25).collect(),
            seed: 1,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            init: InitMode::KMeansPlusPlus,
            noise: NoiseParams::default(),
            p0: DEFAULT_P0,
            transition: TransitionConfig::Sticky(DEFAULT_TR_DIAG),
            weight_prior: WeightPrior::default(),
            tail: DEFAULT_TAIL,
            seen: Vec::new(),
            unseen: Vec::new(),
            workers: 0,
            synth: SynthConfig::default(),
            synth_holdout: 0,
        }
    }
}

impl PipelineConfig {
    /// Reads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected key = value", i + 1)));
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config(format!("line {}: {}", i + 1, e.message())))?;
        }
        Ok(())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = |what: &str| CliError::Config(format!("{key}: {what} `{value}`"));
        macro_rules! num {
            () => {
                value.parse().map_err(|_| bad("not a number"))?
            };
        }
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "window" => self.window = num!(),
            "stride" => self.stride = num!(),
            "components" => self.components = parse_components(value).ok_or_else(|| bad("bad component list"))?,
            "seed" => self.seed = num!(),
            "max_iter" => self.max_iter = num!(),
            "tol" => self.tol = num!(),
            "init" => self.init = value.parse().map_err(|_| bad("unknown init mode"))?,
            "q" => self.noise.q = num!(),
            "r" => self.noise.r = num!(),
            "x0_mode" => {
                if value != X0_FIRST_MEASUREMENT {
                    return Err(bad("unsupported x0 mode"));
                }
            }
            "p0" => self.p0 = num!(),
            "tr_diag" => self.transition = TransitionConfig::Sticky(num!()),
            "tr_matrix" => {
                let rows = parse_matrix(value).ok_or_else(|| bad("bad matrix"))?;
                let tr = TransitionMatrix::new(rows).map_err(|e| CliError::Config(format!("{key}: {e}")))?;
                self.transition = TransitionConfig::Full(tr);
            }
            "weight_prior" => self.weight_prior = value.parse().map_err(|_| bad("unknown weight prior"))?,
            "tail" => self.tail = num!(),
            "seen" => self.seen = parse_list(value),
            "unseen" => self.unseen = parse_list(value),
            "workers" => self.workers = num!(),
            "synth_runs" => self.synth.runs = num!(),
            "synth_holdout" => self.synth_holdout = num!(),
            "synth_steps" => self.synth.steps = num!(),
            "synth_seed" => self.synth.seed = num!(),
            "synth_dwell" => {
                self.synth.dwell = match self.synth.dwell {
                    Dwell::Fixed(_) => Dwell::Fixed(num!()),
                    Dwell::Exponential(_) => Dwell::Exponential(num!()),
                }
            }
            "synth_dwell_mode" => {
                let mean = match self.synth.dwell {
                    Dwell::Fixed(n) => n as f64,
                    Dwell::Exponential(m) => m,
                };
                self.synth.dwell = match value {
                    "exponential" => Dwell::Exponential(mean),
                    "fixed" => Dwell::Fixed(mean.round() as usize),
                    _ => return Err(bad("unknown dwell mode")),
                }
            }
            "synth_min_dwell" => self.synth.min_dwell = num!(),
            "synth_regimes" => {
                let rows = parse_matrix(value).ok_or_else(|| bad("bad regime list"))?;
                let mut regimes = Vec::with_capacity(rows.len());
                for r in rows {
                    let triple: [f64; 3] = r.try_into().map_err(|_| bad("regimes need 3 entries each"))?;
                    regimes.push(triple);
                }
                self.synth.regimes = regimes;
            }
            "synth_process_std" => self.synth.process_noise_std = num!(),
            "synth_measurement_std" => self.synth.measurement_noise_std = num!(),
            "synth_amplitude" => self.synth.input.amplitude = num!(),
            "synth_dt" => self.synth.dt = num!(),
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Checks the value-level invariants. Run-id existence is checked when
    /// the data is loaded.
    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.window < 3 {
            return fail(format!("window must be at least 3, got {}", self.window));
        }
        if self.stride == 0 {
            return fail("stride must be at least 1".into());
        }
        if self.components.is_empty() || self.components.contains(&0) {
            return fail("components must be a non-empty list of values >= 1".into());
        }
        if self.tol.is_nan() || self.tol < 0.0 || self.max_iter == 0 {
            return fail("tol must be >= 0 and max_iter >= 1".into());
        }
        self.noise.validate().map_err(CliError::config)?;
        if !(self.p0 > 0.0 && self.p0.is_finite()) {
            return fail(format!("p0 must be positive, got {}", self.p0));
        }
        if let TransitionConfig::Sticky(d) = self.transition {
            if !(0.0..=1.0).contains(&d) {
                return fail(format!("tr_diag must lie in [0, 1], got {d}"));
            }
        }
        for &m in &self.components {
            self.transition.build(m).map_err(CliError::config)?;
        }
        if !(self.tail > 0.0 && self.tail < 0.5) {
            return fail(format!("tail must lie in (0, 0.5), got {}", self.tail));
        }
        if let Some(id) = self.seen.iter().find(|id| self.unseen.contains(id)) {
            return fail(format!("run `{id}` is listed as both seen and unseen"));
        }
        Ok(())
    }

    pub fn imm(&self) -> ImmConfig {
        ImmConfig {
            transition: self.transition.clone(),
            p0: self.p0,
            weight_prior: self.weight_prior,
        }
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// `3,6,9` or `3-25` or a mix; result is sorted and deduplicated.
pub fn parse_components(value: &str) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi): (usize, usize) = (lo.trim().parse().ok()?, hi.trim().parse().ok()?);
                if lo > hi {
                    return None;
                }
                out.extend(lo..=hi);
            }
            None => out.push(part.parse().ok()?),
        }
    }
    out.sort_unstable();
    out.dedup();
    (!out.is_empty()).then_some(out)
}

fn parse_matrix(value: &str) -> Option<Vec<Vec<f64>>> {
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|row| row.split(',').map(|v| v.trim().parse().ok()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn component_ranges() {
        assert_eq!(parse_components("3-5, 9,4"), Some(vec![3, 4, 5, 9]));
        assert_eq!(parse_components("3-25").unwrap().len(), 23);
        assert_eq!(parse_components("5-3"), None);
        assert_eq!(parse_components("x"), None);
    }

    #[test]
    fn file_text_applies_in_order() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text("# comment\nwindow = 30\n\ncomponents = 1,3\ntr_matrix = 0.9,0.1;0.2,0.8\nseen = a, b\n")
            .unwrap();
        assert_eq!(cfg.window, 30);
        assert_eq!(cfg.components, vec![1, 3]);
        assert_eq!(cfg.seen, vec!["a", "b"]);
        assert!(matches!(cfg.transition, TransitionConfig::Full(_)));
        // 2x2 matrix cannot serve M=3
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("window", "abc").is_err());
        assert!(cfg.set("x0_mode", "zero").is_err());
        cfg.set("window", "2").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn every_documented_key_is_settable() {
        let sample = |k: &str| match k {
            "components" | "seen" | "unseen" => "3",
            "init" => "random",
            "x0_mode" => X0_FIRST_MEASUREMENT,
            "tr_matrix" => "1",
            "weight_prior" => "previous",
            "synth_dwell_mode" => "fixed",
            "synth_regimes" => "0.5,0.1,0.1",
            "data_dir" | "output_dir" => "d",
            "tol" | "q" | "r" | "p0" | "tr_diag" | "tail" | "synth_process_std" | "synth_measurement_std"
            | "synth_amplitude" | "synth_dt" => "0.1",
            _ => "30",
        };
        for k in KEYS {
            PipelineConfig::default().set(k, sample(k)).unwrap();
        }
    }
}
