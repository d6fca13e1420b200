//! Least-squares identification of `x_{k+1} = a·x_k + b1·φ̇_l + b2·φ̇_r`.
//!
//! The fit is the full-transition form; the delta-form state coefficient of
//! a zero-order-hold model `x_{k+1} = x_k + A_d·x_k + …` is `a − 1`.
//!
//! Rows are folded into a 3×3 triangular factor with Givens rotations, so a
//! fit never materializes the N×3 regressor. The minimum-norm solution comes
//! from an SVD of that factor; singular values below
//! [`RANK_TOLERANCE`]`·σ_max` count as zero, and such fits are flagged as
//! degenerate.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::trajectory::{check_window_params, sliding_windows, Trajectory, TrajectorySample, Window};
use crate::{Error, Execution, Result};

/// Relative singular-value cutoff for the minimum-norm solve.
pub const RANK_TOLERANCE: f64 = 1e-10;

pub const DEFAULT_WINDOW: usize = 25;
pub const DEFAULT_STRIDE: usize = 1;

/// Process (`q`) and measurement (`r`) noise variances, (rad/s)².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub q: f64,
    pub r: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { q: 1e-3, r: 1e-2 }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.q.is_finite() && self.q > 0.0) || !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::param(format!(
                "noise variances must be positive and finite (q={}, r={})",
                self.q, self.r
            )));
        }
        Ok(())
    }
}

/// Scalar yaw-rate model with measurement `z = x + v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub a: f64,
    pub b1: f64,
    pub b2: f64,
    pub q: f64,
    pub r: f64,
}

impl LinearModel {
    pub fn new(coeffs: [f64; 3], noise: NoiseParams) -> Result<Self> {
        let m = Self {
            a: coeffs[0],
            b1: coeffs[1],
            b2: coeffs[2],
            q: noise.q,
            r: noise.r,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.coeffs().iter().all(|c| c.is_finite()) {
            return Err(Error::invariant(format!("non-finite model coefficients {:?}", self.coeffs())));
        }
        self.noise().validate()
    }

    pub fn coeffs(&self) -> [f64; 3] {
        [self.a, self.b1, self.b2]
    }

    pub fn noise(&self) -> NoiseParams {
        NoiseParams { q: self.q, r: self.r }
    }

    /// Noise-free one-step prediction.
    pub fn step(&self, x: f64, u: [f64; 2]) -> f64 {
        self.a * x + self.b1 * u[0] + self.b2 * u[1]
    }
}

/// Result of one least-squares solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    /// `[a, b1, b2]`
    pub coeffs: [f64; 3],
    /// Numerical rank of the regressor.
    pub rank: usize,
    /// Singular values of the regressor, descending.
    pub singular_values: [f64; 3],
}

impl LinearFit {
    pub fn is_degenerate(&self) -> bool {
        self.rank < 3
    }
}

/// Streaming least squares over rows `[x, u_l, u_r] → y`.
#[derive(Debug, Clone, Default)]
pub struct LeastSquares3 {
    r: [[f64; 3]; 3],
    qtb: [f64; 3],
    rows: usize,
}

impl LeastSquares3 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn push(&mut self, regressor: [f64; 3], y: f64) {
        let mut row = regressor;
        let mut rhs = y;
        for j in 0..3 {
            if row[j] == 0.0 {
                continue;
            }
            let diag = self.r[j][j];
            let h = diag.hypot(row[j]);
            let (c, s) = (diag / h, row[j] / h);
            for k in j..3 {
                let rk = self.r[j][k];
                self.r[j][k] = c * rk + s * row[k];
                row[k] = c * row[k] - s * rk;
            }
            let b = self.qtb[j];
            self.qtb[j] = c * b + s * rhs;
            rhs = c * rhs - s * b;
        }
        self.rows += 1;
    }

    pub fn push_sample(&mut self, s: &TrajectorySample) {
        self.push([s.x, s.u[0], s.u[1]], s.x_next);
    }

    pub fn solve(&self) -> LinearFit {
        let r = Matrix3::from_fn(|i, j| self.r[i][j]);
        let svd = r.svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        let sigma = svd.singular_values;
        let sigma_max = sigma.max();
        let d = Vector3::from(self.qtb);
        let utd = u.transpose() * d;
        let mut coeffs = Vector3::zeros();
        let mut rank = 0;
        for i in 0..3 {
            if sigma_max > 0.0 && sigma[i] > RANK_TOLERANCE * sigma_max {
                coeffs += v_t.row(i).transpose() * (utd[i] / sigma[i]);
                rank += 1;
            }
        }
        let mut sv = [sigma[0], sigma[1], sigma[2]];
        sv.sort_by(|a, b| b.total_cmp(a));
        LinearFit {
            coeffs: [coeffs[0], coeffs[1], coeffs[2]],
            rank,
            singular_values: sv,
        }
    }
}

/// Fits `X⁺ = [a b1 b2]·[X; U]` over aligned sequences of length ≥ 3.
pub fn fit_linear(x: &[f64], u: &[[f64; 2]], x_plus: &[f64]) -> Result<LinearFit> {
    if x.len() != u.len() || x.len() != x_plus.len() {
        return Err(Error::param(format!(
            "misaligned sequences: x={}, u={}, x_plus={}",
            x.len(),
            u.len(),
            x_plus.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::param(format!("need at least 3 transitions, got {}", x.len())));
    }
    let mut ls = LeastSquares3::new();
    for ((&xk, uk), &y) in x.iter().zip(u).zip(x_plus) {
        ls.push([xk, uk[0], uk[1]], y);
    }
    Ok(ls.solve())
}

pub fn fit_samples(samples: &[TrajectorySample]) -> Result<LinearFit> {
    if samples.len() < 3 {
        return Err(Error::param(format!("need at least 3 transitions, got {}", samples.len())));
    }
    let mut ls = LeastSquares3::new();
    samples.iter().for_each(|s| ls.push_sample(s));
    Ok(ls.solve())
}

/// One model fitted over every transition of every run.
pub fn fit_global(dataset: &[Trajectory], noise: NoiseParams) -> Result<LinearModel> {
    if dataset.is_empty() {
        return Err(Error::param("empty dataset"));
    }
    let mut ls = LeastSquares3::new();
    for s in dataset.iter().flat_map(|t| t.samples()) {
        ls.push_sample(s);
    }
    if ls.rows() < 3 {
        return Err(Error::param(format!("need at least 3 transitions, got {}", ls.rows())));
    }
    LinearModel::new(ls.solve().coeffs, noise)
}

/// A point `[a, b1, b2]` in model space, tagged with the window it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPoint {
    pub s: [f64; 3],
    pub run_id: String,
    pub start_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCloud {
    pub points: Vec<ModelPoint>,
    pub window: usize,
    pub stride: usize,
    /// Windows dropped because their regressor was rank-deficient.
    pub degenerate: usize,
}

impl ModelCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coords(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.s).collect()
    }

    /// `run_id,start_index,a,b1,b2`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let wrap = |e: csv::Error| Error::Io {
            path: "models.csv".into(),
            source: e.into(),
        };
        w.write_record(["run_id", "start_index", "a", "b1", "b2"]).map_err(wrap)?;
        for p in &self.points {
            w.write_record([
                p.run_id.clone(),
                p.start_index.to_string(),
                p.s[0].to_string(),
                p.s[1].to_string(),
                p.s[2].to_string(),
            ])
            .map_err(wrap)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "models.csv".into(),
            source,
        })
    }

    /// Reads the export written by [`ModelCloud::write_csv`]. The CSV does
    /// not carry the window parameters, so the caller supplies them.
    pub fn read_csv<R: Read>(reader: R, origin: &Path, window: usize, stride: usize) -> Result<Self> {
        let err = |row: usize, message: String| Error::Ingest {
            file: origin.to_path_buf(),
            row,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
        let expected = ["run_id", "start_index", "a", "b1", "b2"];
        if headers.iter().ne(expected) {
            return Err(err(1, format!("expected header {}", expected.join(","))));
        }
        let mut points = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| err(row, e.to_string()))?;
            let num = |c: usize| -> Result<f64> {
                let v: f64 = rec[c]
                    .parse()
                    .map_err(|_| err(row, format!("`{}` is not numeric: {:?}", expected[c], &rec[c])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(err(row, format!("`{}` is not finite", expected[c])))
                }
            };
            let start_index = rec[1]
                .parse()
                .map_err(|_| err(row, format!("`start_index` is not an integer: {:?}", &rec[1])))?;
            points.push(ModelPoint {
                s: [num(2)?, num(3)?, num(4)?],
                run_id: rec[0].to_string(),
                start_index,
            });
        }
        if points.is_empty() {
            return Err(Error::NoUsableWindows(format!("{} has no model rows", origin.display())));
        }
        Ok(Self {
            points,
            window,
            stride,
            degenerate: 0,
        })
    }
}

/// One local model per window, ordered by run then start index.
pub fn fit_local_models(dataset: &[Trajectory], window: usize, stride: usize) -> Result<ModelCloud> {
    fit_local_models_with(dataset, window, stride, Execution::default())
}

pub fn fit_local_models_with(
    dataset: &[Trajectory],
    window: usize,
    stride: usize,
    exec: Execution,
) -> Result<ModelCloud> {
    check_window_params(window, stride)?;
    let mut windows: Vec<Window<'_>> = Vec::new();
    for traj in dataset {
        windows.extend(sliding_windows(traj, window, stride)?);
    }
    let fits = exec.map(&windows, |w| fit_samples(w.samples));
    let mut points = Vec::with_capacity(windows.len());
    let mut degenerate = 0;
    for (w, fit) in windows.iter().zip(fits) {
        let fit = fit?;
        if fit.is_degenerate() || !fit.coeffs.iter().all(|c| c.is_finite()) {
            degenerate += 1;
            continue;
        }
        points.push(ModelPoint {
            s: fit.coeffs,
            run_id: w.run_id.to_string(),
            start_index: w.start_index,
        });
    }
    if points.is_empty() {
        return Err(Error::NoUsableWindows(format!(
            "{} windows of length {window}, {degenerate} degenerate",
            windows.len()
        )));
    }
    Ok(ModelCloud {
        points,
        window,
        stride,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Normal equations solved by Cramer's rule; independent of the QR path.
    fn normal_equations(x: &[f64], u: &[[f64; 2]], y: &[f64]) -> [f64; 3] {
        let mut g = [[0.0; 3]; 3];
        let mut h = [0.0; 3];
        for ((&xk, uk), &yk) in x.iter().zip(u).zip(y) {
            let row = [xk, uk[0], uk[1]];
            for i in 0..3 {
                h[i] += row[i] * yk;
                for j in 0..3 {
                    g[i][j] += row[i] * row[j];
                }
            }
        }
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(g);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let mut m = g;
            for r in 0..3 {
                m[r][c] = h[r];
            }
            out[c] = det(m) / d;
        }
        out
    }

    fn varied(n: usize) -> (Vec<f64>, Vec<[f64; 2]>) {
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() * 2.0).collect();
        let u: Vec<[f64; 2]> = (0..n)
            .map(|i| [(i as f64 * 1.3).cos() * 5.0, ((i * i) as f64 * 0.11).sin() * 4.0])
            .collect();
        (x, u)
    }

    #[test]
    fn recovers_generator_exactly() {
        let (x, u) = varied(25);
        let y: Vec<f64> = x.iter().zip(&u).map(|(x, u)| 0.9 * x + 0.05 * u[0] + 0.05 * u[1]).collect();
        let fit = fit_linear(&x, &u, &y).unwrap();
        assert_eq!(fit.rank, 3);
        for (got, want) in fit.coeffs.iter().zip([0.9, 0.05, 0.05]) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn matches_normal_equation_oracle_on_noisy_data() {
        let (x, u) = varied(40);
        let y: Vec<f64> = x
            .iter()
            .zip(&u)
            .enumerate()
            .map(|(i, (x, u))| 0.7 * x - 0.1 * u[0] + 0.12 * u[1] + 0.01 * ((i * 7919) as f64).sin())
            .collect();
        let fit = fit_linear(&x, &u, &y).unwrap();
        let oracle = normal_equations(&x, &u, &y);
        for (got, want) in fit.coeffs.iter().zip(oracle) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn identity_dynamics_with_no_input_is_minimum_norm() {
        let fit = fit_linear(&[1.0; 10], &[[0.0, 0.0]; 10], &[1.0; 10]).unwrap();
        assert!(fit.is_degenerate());
        assert_eq!(fit.rank, 1);
        assert!((fit.coeffs[0] - 1.0).abs() < 1e-12);
        assert_eq!(fit.coeffs[1], 0.0);
        assert_eq!(fit.coeffs[2], 0.0);
    }

    #[test]
    fn all_zero_regressor_is_flagged_zero() {
        let fit = fit_linear(&[0.0; 5], &[[0.0, 0.0]; 5], &[3.0; 5]).unwrap();
        assert_eq!(fit.rank, 0);
        assert_eq!(fit.coeffs, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn collinear_inputs_are_rank_two() {
        let (x, _) = varied(20);
        let u: Vec<[f64; 2]> = (0..20).map(|i| [i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = x.iter().zip(&u).map(|(x, u)| 0.5 * x + u[0]).collect();
        let fit = fit_linear(&x, &u, &y).unwrap();
        assert_eq!(fit.rank, 2);
        // minimum-norm: b1 + 2·b2 = 1 with smallest |b| gives (0.2, 0.4)
        assert!((fit.coeffs[0] - 0.5).abs() < 1e-10);
        assert!((fit.coeffs[1] - 0.2).abs() < 1e-10);
        assert!((fit.coeffs[2] - 0.4).abs() < 1e-10);
    }

    #[test]
    fn too_few_or_misaligned_is_error() {
        assert!(fit_linear(&[1.0, 2.0], &[[0.0, 0.0]; 2], &[1.0, 2.0]).is_err());
        assert!(fit_linear(&[1.0; 4], &[[0.0, 0.0]; 3], &[1.0; 4]).is_err());
    }

    fn two_regime_run() -> Trajectory {
        let mut omega = vec![0.0];
        let mut wheels = Vec::new();
        for k in 0..200 {
            let u = [((k * 13 % 7) as f64 - 3.0) * 1.5, ((k * 5 % 11) as f64 - 5.0)];
            let a = if k < 100 { 0.95 } else { 0.6 };
            let b = [-0.05, 0.05];
            let x = *omega.last().unwrap();
            omega.push(a * x + b[0] * u[0] + b[1] * u[1]);
            wheels.push(u);
        }
        Trajectory::from_rows("two", 0.05, &omega, &wheels).unwrap()
    }

    #[test]
    fn global_fit_on_two_regimes_lies_between() {
        let t = two_regime_run();
        let m = fit_global(std::slice::from_ref(&t), NoiseParams::default()).unwrap();
        assert!(m.a > 0.6 && m.a < 0.95, "a = {}", m.a);
        let s = t.samples();
        let xs: Vec<f64> = s.iter().map(|s| s.x).collect();
        let us: Vec<[f64; 2]> = s.iter().map(|s| s.u).collect();
        let ys: Vec<f64> = s.iter().map(|s| s.x_next).collect();
        let oracle = normal_equations(&xs, &us, &ys);
        for (got, want) in m.coeffs().iter().zip(oracle) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn local_models_concentrate_at_each_regime() {
        let t = two_regime_run();
        let cloud = fit_local_models(std::slice::from_ref(&t), 25, 1).unwrap();
        assert_eq!(cloud.len() + cloud.degenerate, 200 - 24);
        let within = |p: &ModelPoint, truth: [f64; 3]| {
            p.s.iter().zip(truth).all(|(a, b)| (a - b).abs() < 1e-9)
        };
        let first = cloud.points.iter().filter(|p| p.start_index + 25 <= 100).collect::<Vec<_>>();
        let second = cloud.points.iter().filter(|p| p.start_index >= 100).collect::<Vec<_>>();
        assert!(first.iter().all(|p| within(p, [0.95, -0.05, 0.05])));
        assert!(second.iter().all(|p| within(p, [0.6, -0.05, 0.05])));
    }

    #[test]
    fn whole_run_window_equals_global() {
        let t = two_regime_run();
        let cloud = fit_local_models(std::slice::from_ref(&t), t.len(), 1).unwrap();
        assert_eq!(cloud.len(), 1);
        let g = fit_global(std::slice::from_ref(&t), NoiseParams::default()).unwrap();
        assert_eq!(cloud.points[0].s, g.coeffs());
    }

    #[test]
    fn unexcited_run_has_no_usable_windows() {
        let omega = vec![1.0; 40];
        let wheels = vec![[0.0, 0.0]; 39];
        let t = Trajectory::from_rows("flat", 0.1, &omega, &wheels).unwrap();
        match fit_local_models(&[t], 25, 1) {
            Err(Error::NoUsableWindows(msg)) => assert!(msg.contains("15 degenerate"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cloud_csv_round_trip() {
        let cloud = fit_local_models(&[two_regime_run()], 25, 5).unwrap();
        let mut buf = Vec::new();
        cloud.write_csv(&mut buf).unwrap();
        let back = ModelCloud::read_csv(buf.as_slice(), Path::new("m.csv"), 25, 5).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn model_validation() {
        assert!(LinearModel::new([0.9, 0.1, 0.1], NoiseParams { q: 0.0, r: 1.0 }).is_err());
        assert!(LinearModel::new([f64::NAN, 0.1, 0.1], NoiseParams::default()).is_err());
        let m = LinearModel::new([0.9, 0.1, 0.2], NoiseParams::default()).unwrap();
        assert!((m.step(1.0, [1.0, 1.0]) - 1.2).abs() < 1e-15);
    }
}
