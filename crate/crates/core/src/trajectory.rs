//! Trajectory logs: one run of yaw-rate measurements under wheel-speed inputs.
//!
//! A run is stored as a CSV file with the header
//! `time_s,omega_radps,wheel_left_radps,wheel_right_radps`, rows strictly
//! increasing in time. The run id is the file stem. Row `i` and row `i+1`
//! together form one [`TrajectorySample`]: `x = ω_i`, `u = (φ̇_l, φ̇_r)_i`,
//! `x_next = ω_{i+1}`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::{Error, Execution, Result};

pub const COL_TIME: &str = "time_s";
pub const COL_OMEGA: &str = "omega_radps";
pub const COL_WHEEL_LEFT: &str = "wheel_left_radps";
pub const COL_WHEEL_RIGHT: &str = "wheel_right_radps";

/// Chain tolerance for samples assembled from separate `x` / `x_next` values.
pub const CHAIN_TOLERANCE: f64 = 1e-9;

/// One transition `(x_k, u_k, x_{k+1})`. Angular velocities and wheel speeds
/// are all in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub x: f64,
    /// `[φ̇_l, φ̇_r]`
    pub u: [f64; 2],
    pub x_next: f64,
}

impl TrajectorySample {
    pub fn new(x: f64, u: [f64; 2], x_next: f64) -> Self {
        Self { x, u, x_next }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.u[0].is_finite() && self.u[1].is_finite() && self.x_next.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    run_id: String,
    dt: f64,
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    /// Builds a run from explicit transitions, checking finiteness and that
    /// consecutive samples chain (`samples[i].x_next ≈ samples[i+1].x`).
    pub fn new(run_id: impl Into<String>, dt: f64, samples: Vec<TrajectorySample>) -> Result<Self> {
        let run_id = run_id.into();
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param(format!("run {run_id}: dt must be positive, got {dt}")));
        }
        if samples.is_empty() {
            return Err(Error::param(format!("run {run_id}: no samples")));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invariant(format!("run {run_id}: sample {i} is not finite")));
        }
        for (i, pair) in samples.windows(2).enumerate() {
            if (pair[0].x_next - pair[1].x).abs() > CHAIN_TOLERANCE {
                return Err(Error::invariant(format!(
                    "run {run_id}: sample {i} x_next={} does not chain to sample {} x={}",
                    pair[0].x_next,
                    i + 1,
                    pair[1].x
                )));
            }
        }
        Ok(Self { run_id, dt, samples })
    }

    /// Builds a run from per-row measurements `omega` and the wheel input
    /// applied over each transition (`omega.len() − 1` entries). Transitions
    /// chain by construction.
    pub fn from_rows(run_id: impl Into<String>, dt: f64, omega: &[f64], wheels: &[[f64; 2]]) -> Result<Self> {
        if omega.len() < 2 {
            return Err(Error::param("a run needs at least 2 rows"));
        }
        if wheels.len() + 1 != omega.len() {
            return Err(Error::param(format!(
                "{} omega rows need {} wheel inputs, got {}",
                omega.len(),
                omega.len() - 1,
                wheels.len()
            )));
        }
        let samples = omega
            .windows(2)
            .zip(wheels)
            .map(|(w, u)| TrajectorySample::new(w[0], *u, w[1]))
            .collect();
        Self::new(run_id, dt, samples)
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes the run in the ingest schema. Timestamps are regenerated as
    /// `k·dt`; the final wheel row repeats the last input.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io {
            path: PathBuf::from(&self.run_id),
            source: e.into(),
        };
        w.write_record([COL_TIME, COL_OMEGA, COL_WHEEL_LEFT, COL_WHEEL_RIGHT]).map_err(io)?;
        for (k, s) in self.samples.iter().enumerate() {
            write_row(&mut w, k as f64 * self.dt, s.x, s.u).map_err(io)?;
        }
        let last = self.samples.last().expect("non-empty by construction");
        write_row(&mut w, self.samples.len() as f64 * self.dt, last.x_next, last.u).map_err(io)?;
        w.flush().map_err(|e| Error::Io {
            path: PathBuf::from(&self.run_id),
            source: e,
        })
    }
}

fn write_row<W: Write>(w: &mut csv::Writer<W>, t: f64, omega: f64, u: [f64; 2]) -> csv::Result<()> {
    w.write_record([t.to_string(), omega.to_string(), u[0].to_string(), u[1].to_string()])
}

/// A contiguous slice of one run used for a single local fit.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub run_id: &'a str,
    pub start_index: usize,
    pub samples: &'a [TrajectorySample],
}

/// Slices `traj` into windows of exactly `window` samples whose start indices
/// advance by `stride`. A run shorter than the window yields no windows.
pub fn sliding_windows(traj: &Trajectory, window: usize, stride: usize) -> Result<Vec<Window<'_>>> {
    check_window_params(window, stride)?;
    let n = traj.len();
    if window > n {
        return Ok(Vec::new());
    }
    Ok((0..=n - window)
        .step_by(stride)
        .map(|start| Window {
            run_id: traj.run_id(),
            start_index: start,
            samples: &traj.samples()[start..start + window],
        })
        .collect())
}

pub(crate) fn check_window_params(window: usize, stride: usize) -> Result<()> {
    if window < 3 {
        return Err(Error::param(format!(
            "window length must be at least 3 (three coefficients are fitted), got {window}"
        )));
    }
    if stride < 1 {
        return Err(Error::param("stride must be at least 1"));
    }
    Ok(())
}

/// Loads one run file, or every `*.csv` directly inside a directory, sorted
/// by file name.
pub fn load_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let meta = std::fs::metadata(path).map_err(io)?;
    if meta.is_file() {
        return Ok(vec![load_trajectory(path)?]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(io)? {
        let p = entry.map_err(io)?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "csv") {
            files.push(p);
        }
    }
    files.sort();
    Execution::default()
        .map(&files, |f| load_trajectory(f))
        .into_iter()
        .collect()
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let run_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_trajectory(run_id, path, file)
}

/// Parses the CSV schema from any reader. `origin` only labels errors.
pub fn parse_trajectory<R: Read>(run_id: impl Into<String>, origin: &Path, reader: R) -> Result<Trajectory> {
    let err = |row: usize, message: String| Error::Ingest {
        file: origin.to_path_buf(),
        row,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(1, format!("missing column `{name}`")))
    };
    let cols = [col(COL_TIME)?, col(COL_OMEGA)?, col(COL_WHEEL_LEFT)?, col(COL_WHEEL_RIGHT)?];
    let names = [COL_TIME, COL_OMEGA, COL_WHEEL_LEFT, COL_WHEEL_RIGHT];

    let mut times = Vec::new();
    let mut omega = Vec::new();
    let mut wheels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| err(row, e.to_string()))?;
        let mut vals = [0.0; 4];
        for (v, (&c, name)) in vals.iter_mut().zip(cols.iter().zip(names)) {
            let cell = record
                .get(c)
                .ok_or_else(|| err(row, format!("missing value for `{name}`")))?;
            *v = cell
                .parse::<f64>()
                .map_err(|_| err(row, format!("`{name}` is not numeric: {cell:?}")))?;
            if !v.is_finite() {
                return Err(err(row, format!("`{name}` is not finite: {cell}")));
            }
        }
        if let Some(&prev) = times.last() {
            if vals[0] <= prev {
                return Err(err(
                    row,
                    format!("`{COL_TIME}` not strictly increasing ({} after {prev})", vals[0]),
                ));
            }
        }
        times.push(vals[0]);
        omega.push(vals[1]);
        wheels.push([vals[2], vals[3]]);
    }
    if times.len() < 2 {
        return Err(err(
            times.len() + 1,
            format!("need at least 2 data rows, found {}", times.len()),
        ));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    Trajectory::from_rows(run_id, dt, &omega, &wheels[..wheels.len() - 1])
        .map_err(|e| err(1, e.to_string()))
}
