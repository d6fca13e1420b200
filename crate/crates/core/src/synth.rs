//! Regime-switching yaw-rate trajectories with known ground truth.
//!
//! Each run simulates `x_{k+1} = a·x_k + b1·φ̇_l + b2·φ̇_r + w_k` where
//! `(a, b1, b2)` switches between configured regimes, and records
//! `z_k = x_k + v_k`. Wheel inputs are independent piecewise-constant levels
//! with random hold times. The per-step regime labels are returned alongside
//! for test oracles only.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::trajectory::Trajectory;
use crate::{Error, Execution, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dwell {
    /// Exponentially distributed time in each regime with this mean, in
    /// steps (memoryless switching).
    Exponential(f64),
    /// Switch every `n` steps.
    Fixed(usize),
}

impl Dwell {
    fn mean(&self) -> f64 {
        match *self {
            Dwell::Exponential(m) => m,
            Dwell::Fixed(n) => n as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputProfile {
    /// Wheel levels are drawn uniformly from `[-amplitude, amplitude]` rad/s.
    pub amplitude: f64,
    pub hold_min: usize,
    pub hold_max: usize,
}

impl Default for InputProfile {
    fn default() -> Self {
        Self {
            amplitude: 6.0,
            hold_min: 3,
            hold_max: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// `[a, b1, b2]` per regime.
    pub regimes: Vec<[f64; 3]>,
    pub dwell: Dwell,
    /// Shortest allowed stay in a regime; normally the fitting window length.
    pub min_dwell: usize,
    pub process_noise_std: f64,
    pub measurement_noise_std: f64,
    pub input: InputProfile,
    /// Transitions per run; each run has `steps + 1` rows.
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    pub dt: f64,
    pub x0: f64,
    /// Index added to run numbers when naming files, so held-out runs can be
    /// generated with their own seed without clashing ids.
    pub first_run: usize,
}

impl Default for SynthConfig {
    /// Three surface regimes, 9 runs of 358 transitions: 3006 windows at
    /// W = 25. Noise levels match the default filter tuning.
    fn default() -> Self {
        Self {
            regimes: vec![[0.60, -0.080, 0.080], [0.85, -0.035, 0.030], [0.97, -0.008, 0.010]],
            dwell: Dwell::Exponential(200.0),
            min_dwell: 25,
            process_noise_std: 1e-3f64.sqrt(),
            measurement_noise_std: 0.1,
            input: InputProfile::default(),
            steps: 358,
            runs: 9,
            seed: 7,
            dt: 0.05,
            x0: 0.0,
            first_run: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::param("at least one regime is required"));
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if !r.iter().all(|c| c.is_finite()) || r[0].abs() >= 1.05 {
                return Err(Error::param(format!("regime {i} {r:?} must be finite with |a| < 1.05")));
            }
        }
        if !(self.process_noise_std >= 0.0 && self.measurement_noise_std >= 0.0)
            || !self.process_noise_std.is_finite()
            || !self.measurement_noise_std.is_finite()
        {
            return Err(Error::param("noise standard deviations must be finite and nonnegative"));
        }
        let mean = self.dwell.mean();
        if !mean.is_finite() || mean < self.min_dwell as f64 || mean < 1.0 {
            return Err(Error::param(format!(
                "mean dwell {mean} must be at least the minimum dwell {}",
                self.min_dwell
            )));
        }
        let inp = &self.input;
        if !(inp.amplitude.is_finite() && inp.amplitude >= 0.0) || inp.hold_min == 0 || inp.hold_max < inp.hold_min {
            return Err(Error::param(format!("invalid input profile {inp:?}")));
        }
        if self.steps == 0 || self.runs == 0 {
            return Err(Error::param("steps and runs must be positive"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) || !self.x0.is_finite() {
            return Err(Error::param("dt must be positive and x0 finite"));
        }
        Ok(())
    }

    pub fn run_id(&self, run: usize) -> String {
        format!("run_{:03}", self.first_run + run)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRun {
    pub trajectory: Trajectory,
    /// Regime index per row; row `k` holds the regime governing the
    /// transition out of it (the last row repeats its predecessor).
    pub labels: Vec<usize>,
}

impl SynthRun {
    /// `time_s,regime_index`
    pub fn write_labels_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let wrap = |e: csv::Error| Error::Io {
            path: self.trajectory.run_id().into(),
            source: e.into(),
        };
        w.write_record(["time_s", "regime_index"]).map_err(wrap)?;
        let dt = self.trajectory.dt();
        for (k, l) in self.labels.iter().enumerate() {
            w.write_record([(k as f64 * dt).to_string(), l.to_string()]).map_err(wrap)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: self.trajectory.run_id().into(),
            source,
        })
    }
}

pub fn generate(config: &SynthConfig) -> Result<Vec<SynthRun>> {
    generate_with(config, Execution::default())
}

pub fn generate_with(config: &SynthConfig, exec: Execution) -> Result<Vec<SynthRun>> {
    config.validate()?;
    exec.map_range(config.runs, |run| simulate(config, run))
        .into_iter()
        .collect()
}

struct Hold {
    level: f64,
    left: usize,
}

impl Hold {
    fn next<R: Rng>(&mut self, p: &InputProfile, rng: &mut R) -> f64 {
        if self.left == 0 {
            self.level = if p.amplitude > 0.0 {
                rng.random_range(-p.amplitude..=p.amplitude)
            } else {
                0.0
            };
            self.left = rng.random_range(p.hold_min..=p.hold_max);
        }
        self.left -= 1;
        self.level
    }
}

fn simulate(config: &SynthConfig, run: usize) -> Result<SynthRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream((config.first_run + run) as u64);
    let process = Normal::new(0.0, config.process_noise_std).map_err(|e| Error::param(e.to_string()))?;
    let measure = Normal::new(0.0, config.measurement_noise_std).map_err(|e| Error::param(e.to_string()))?;
    let n_regimes = config.regimes.len();
    let draw_dwell = |rng: &mut ChaCha8Rng| -> usize {
        let d = match config.dwell {
            Dwell::Fixed(n) => n,
            Dwell::Exponential(mean) => {
                let e = Exp::new(1.0 / mean).expect("validated mean");
                e.sample(rng).ceil() as usize
            }
        };
        d.max(config.min_dwell).max(1)
    };

    let mut regime = rng.random_range(0..n_regimes);
    let mut remaining = draw_dwell(&mut rng);
    let mut left = Hold { level: 0.0, left: 0 };
    let mut right = Hold { level: 0.0, left: 0 };

    let mut x = config.x0;
    let mut omega = Vec::with_capacity(config.steps + 1);
    let mut wheels = Vec::with_capacity(config.steps);
    let mut labels = Vec::with_capacity(config.steps + 1);
    for _ in 0..config.steps {
        if remaining == 0 {
            if n_regimes > 1 {
                let hop = rng.random_range(1..n_regimes);
                regime = (regime + hop) % n_regimes;
            }
            remaining = draw_dwell(&mut rng);
        }
        remaining -= 1;
        let u = [left.next(&config.input, &mut rng), right.next(&config.input, &mut rng)];
        omega.push(x + measure.sample(&mut rng));
        labels.push(regime);
        wheels.push(u);
        let [a, b1, b2] = config.regimes[regime];
        x = a * x + b1 * u[0] + b2 * u[1] + process.sample(&mut rng);
    }
    omega.push(x + measure.sample(&mut rng));
    labels.push(regime);
    let trajectory = Trajectory::from_rows(config.run_id(run), config.dt, &omega, &wheels)?;
    Ok(SynthRun { trajectory, labels })
}
