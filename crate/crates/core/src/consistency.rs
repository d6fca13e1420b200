//! Filter consistency via normalized innovation squared (NIS).
//!
//! For a consistent filter `ν_k = y_k² / S_k` is χ²-distributed with one
//! degree of freedom. Steps above the upper quantile count as overconfident,
//! steps below the lower quantile as underconfident.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Two-sided tail mass per side; 2.5% / 97.5% bounds.
pub const DEFAULT_TAIL: f64 = 0.025;

pub fn nis_step(y: f64, s: f64) -> Result<f64> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::invariant(format!("innovation variance must be positive, got {s}")));
    }
    Ok(y * y / s)
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-15 for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        // series: P = e^{-x} x^a / Γ(a) · Σ x^n / (a (a+1) … (a+n))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefix).exp().min(1.0)
    } else {
        // continued fraction for Q, modified Lentz
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (1.0 - (log_prefix.exp() * h)).max(0.0)
    }
}

pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    gamma_p(dof as f64 / 2.0, x / 2.0)
}

/// Inverse CDF by bisection on [`chi2_cdf`].
pub fn chi2_quantile(p: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::param("degrees of freedom must be at least 1"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param(format!("probability must lie in (0, 1), got {p}")));
    }
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while chi2_cdf(hi, dof) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `(lower, upper)` quantiles at `tail` and `1 − tail`.
pub fn chi2_bounds(dof: usize, tail: f64) -> Result<(f64, f64)> {
    if !(tail > 0.0 && tail < 0.5) {
        return Err(Error::param(format!("tail must lie in (0, 0.5), got {tail}")));
    }
    Ok((chi2_quantile(tail, dof)?, chi2_quantile(1.0 - tail, dof)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NisSeries {
    values: Vec<f64>,
    dof: usize,
}

impl NisSeries {
    pub fn new(values: Vec<f64>, dof: usize) -> Result<Self> {
        if dof == 0 {
            return Err(Error::param("degrees of freedom must be at least 1"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invariant(format!("NIS value {v} is negative or non-finite")));
        }
        Ok(Self { values, dof })
    }

    /// Scalar innovations `(y, S)`.
    pub fn from_innovations(innovations: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let values = innovations
            .into_iter()
            .map(|(y, s)| nis_step(y, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(values, 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Seen,
    Unseen,
}

impl std::fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetTag::Seen => "seen",
            DatasetTag::Unseen => "unseen",
        })
    }
}

/// Violation counts for one estimator on one split, pooled over `runs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NisReport {
    pub label: String,
    /// Bank size; `None` for the single global-model baseline.
    #[serde(rename = "M")]
    pub components: Option<usize>,
    pub dataset_tag: DatasetTag,
    pub mean_nis: f64,
    pub lower: f64,
    pub upper: f64,
    pub count_over: usize,
    pub count_under: usize,
    pub fraction_over: f64,
    pub fraction_under: f64,
    pub steps: usize,
    #[serde(skip)]
    pub runs: usize,
}

impl NisReport {
    pub fn labeled(mut self, label: impl Into<String>, components: Option<usize>, tag: DatasetTag) -> Self {
        self.label = label.into();
        self.components = components;
        self.dataset_tag = tag;
        self
    }

    pub fn violations(&self) -> usize {
        self.count_over + self.count_under
    }

    pub fn avg_violations_per_run(&self) -> f64 {
        self.violations() as f64 / self.runs.max(1) as f64
    }
}

pub fn nis_report(series: &NisSeries, tail: f64) -> Result<NisReport> {
    nis_report_runs(std::slice::from_ref(series), tail)
}

/// Pools several runs into one report; `runs` records how many.
pub fn nis_report_runs(series: &[NisSeries], tail: f64) -> Result<NisReport> {
    let steps: usize = series.iter().map(NisSeries::len).sum();
    if steps == 0 {
        return Err(Error::param("empty NIS series"));
    }
    let dof = series[0].dof;
    if series.iter().any(|s| s.dof != dof) {
        return Err(Error::param("NIS series disagree on degrees of freedom"));
    }
    let (lower, upper) = chi2_bounds(dof, tail)?;
    let all = || series.iter().flat_map(|s| s.values.iter().copied());
    let count_over = all().filter(|&v| v > upper).count();
    let count_under = all().filter(|&v| v < lower).count();
    Ok(NisReport {
        label: String::new(),
        components: None,
        dataset_tag: DatasetTag::Seen,
        mean_nis: all().sum::<f64>() / steps as f64,
        lower,
        upper,
        count_over,
        count_under,
        fraction_over: count_over as f64 / steps as f64,
        fraction_under: count_under as f64 / steps as f64,
        steps,
        runs: series.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub label: String,
    #[serde(rename = "M")]
    pub components: Option<usize>,
    pub dataset_tag: DatasetTag,
    pub runs: usize,
    pub steps: usize,
    pub mean_nis: f64,
    pub avg_over_per_run: f64,
    pub avg_under_per_run: f64,
    pub avg_violations_per_run: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn get(&self, label: &str, tag: DatasetTag) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.label == label && r.dataset_tag == tag)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let wrap = |e: csv::Error| Error::Io {
            path: "nis_summary.csv".into(),
            source: e.into(),
        };
        for row in &self.rows {
            w.serialize(row).map_err(wrap)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "nis_summary.csv".into(),
            source,
        })
    }
}

/// Average violations per run for each `(label, split)`: baselines first,
/// then banks by size, seen before unseen.
pub fn compare_runs(reports: &[NisReport]) -> Result<SummaryTable> {
    if !reports.iter().any(|r| r.components.is_none()) {
        return Err(Error::param("comparison needs at least one baseline report"));
    }
    let mut seen = BTreeSet::new();
    for r in reports {
        if !seen.insert((r.label.as_str(), r.dataset_tag)) {
            return Err(Error::param(format!("duplicate report label `{}` ({})", r.label, r.dataset_tag)));
        }
    }
    let mut rows: Vec<SummaryRow> = reports
        .iter()
        .map(|r| {
            let runs = r.runs.max(1) as f64;
            SummaryRow {
                label: r.label.clone(),
                components: r.components,
                dataset_tag: r.dataset_tag,
                runs: r.runs,
                steps: r.steps,
                mean_nis: r.mean_nis,
                avg_over_per_run: r.count_over as f64 / runs,
                avg_under_per_run: r.count_under as f64 / runs,
                avg_violations_per_run: r.violations() as f64 / runs,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.components
            .cmp(&b.components)
            .then(a.dataset_tag.cmp(&b.dataset_tag))
            .then(a.label.cmp(&b.label))
    });
    Ok(SummaryTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nis_arithmetic() {
        assert_eq!(nis_step(0.0, 3.0).unwrap(), 0.0);
        assert_eq!(nis_step(2.0, 4.0).unwrap(), 1.0);
        assert!(nis_step(1.0, 0.0).is_err());
        assert!(nis_step(1.0, -1.0).is_err());
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn chi2_one_dof_matches_erf_form() {
        // P(χ²₁ ≤ x) = 2Φ(√x) − 1; Φ(1.959963984540054) = 0.975
        let x = 1.959_963_984_540_054f64.powi(2);
        assert!((chi2_cdf(x, 1) - 0.95).abs() < 1e-13);
        // χ²₂ is exponential with mean 2
        for x in [0.1, 1.0, 3.0, 12.0] {
            assert!((chi2_cdf(x, 2) - (1.0 - (-x / 2.0f64).exp())).abs() < 1e-14);
        }
    }

    #[test]
    fn tabulated_bounds() {
        let (lo, hi) = chi2_bounds(1, 0.025).unwrap();
        assert!((lo - 0.000_982_069).abs() < 1e-9, "{lo}");
        assert!((hi - 5.023_886_4).abs() < 1e-6, "{hi}");
        let (lo, hi) = chi2_bounds(1, 0.05).unwrap();
        assert!((lo - 0.003_932_14).abs() < 1e-8, "{lo}");
        assert!((hi - 3.841_458_8).abs() < 1e-6, "{hi}");
    }

    #[test]
    fn upper_bound_grows_with_dof() {
        let uppers: Vec<f64> = (1..10).map(|k| chi2_bounds(k, 0.025).unwrap().1).collect();
        assert!(uppers.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn bound_parameters_are_checked() {
        assert!(chi2_bounds(0, 0.025).is_err());
        assert!(chi2_bounds(1, 0.0).is_err());
        assert!(chi2_bounds(1, 0.5).is_err());
    }

    #[test]
    fn report_counts() {
        let r = nis_report(&NisSeries::new(vec![1.0; 10], 1).unwrap(), 0.025).unwrap();
        assert_eq!((r.count_over, r.count_under), (0, 0));
        let r = nis_report(&NisSeries::new(vec![0.0005, 6.0, 1.0], 1).unwrap(), 0.025).unwrap();
        assert_eq!((r.count_over, r.count_under), (1, 1));
        assert!((r.fraction_over - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.mean_nis - 7.0005 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_or_invalid_series() {
        assert!(nis_report(&NisSeries::new(vec![], 1).unwrap(), 0.025).is_err());
        assert!(NisSeries::new(vec![-1.0], 1).is_err());
        assert!(NisSeries::new(vec![1.0], 0).is_err());
    }

    fn report(label: &str, m: Option<usize>, tag: DatasetTag, over: usize) -> NisReport {
        let mut v = vec![1.0; 100];
        v[..over].fill(100.0);
        nis_report(&NisSeries::new(v, 1).unwrap(), 0.025)
            .unwrap()
            .labeled(label, m, tag)
    }

    #[test]
    fn comparison_table() {
        let t = compare_runs(&[report("global", None, DatasetTag::Seen, 4)]).unwrap();
        assert_eq!(t.rows.len(), 1);
        let t = compare_runs(&[
            report("gmm_6", Some(6), DatasetTag::Unseen, 1),
            report("gmm_3", Some(3), DatasetTag::Seen, 2),
            report("global", None, DatasetTag::Unseen, 5),
            report("global", None, DatasetTag::Seen, 4),
        ])
        .unwrap();
        let order: Vec<_> = t.rows.iter().map(|r| (r.label.as_str(), r.dataset_tag)).collect();
        assert_eq!(
            order,
            [
                ("global", DatasetTag::Seen),
                ("global", DatasetTag::Unseen),
                ("gmm_3", DatasetTag::Seen),
                ("gmm_6", DatasetTag::Unseen)
            ]
        );
        assert_eq!(t.get("gmm_3", DatasetTag::Seen).unwrap().avg_violations_per_run, 2.0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,M,dataset_tag,runs,steps,mean_nis,"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn comparison_errors() {
        assert!(compare_runs(&[report("gmm_3", Some(3), DatasetTag::Seen, 0)]).is_err());
        assert!(compare_runs(&[
            report("global", None, DatasetTag::Seen, 0),
            report("global", None, DatasetTag::Seen, 1)
        ])
        .is_err());
    }
}
