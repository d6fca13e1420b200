//! The five pipeline stages. Each reads its inputs from the data or output
//! directory, writes its artifacts atomically, and is deterministic for a
//! fixed config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gmm_imm::consistency::{compare_runs, nis_report_runs, DatasetTag, NisReport, NisSeries, SummaryTable};
use gmm_imm::filter::run_kf;
use gmm_imm::gmm::{extract_models, gmm_fit, GmmConfig, GmmExport};
use gmm_imm::imm::{run_imm, ImmConfig};
use gmm_imm::synth::{generate_with, SynthConfig, SynthRun};
use gmm_imm::sysid::{fit_global, fit_local_models_with, LinearModel, ModelCloud};
use gmm_imm::trajectory::{load_trajectories, Trajectory};
use gmm_imm::{consistency::chi2_bounds, Execution};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::plot::{bar_chart, line_chart, BarChart, LineChart, RefLine, Series};

pub const MANIFEST: &str = "manifest.txt";
pub const LABELS_DIR: &str = "labels";
pub const MODELS_CSV: &str = "models.csv";
pub const GLOBAL_JSON: &str = "global_model.json";
pub const ESTIMATES_DIR: &str = "estimates";
pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const SUMMARY_CSV: &str = "nis_summary.csv";
pub const PLOTS_DIR: &str = "plots";
pub const BASELINE_LABEL: &str = "global";

type Result<T> = std::result::Result<T, CliError>;

pub fn gmm_file(m: usize) -> String {
    format!("gmm_{m}.json")
}

pub fn bank_label(m: usize) -> String {
    format!("gmm_{m}")
}

/// `estimate_global.csv` for the baseline, `estimate_<M>.csv` for a bank.
pub fn estimate_file(components: Option<usize>) -> String {
    match components {
        None => format!("estimate_{BASELINE_LABEL}.csv"),
        Some(m) => format!("estimate_{m}.csv"),
    }
}

pub fn estimate_path(out: &Path, run_id: &str, components: Option<usize>) -> PathBuf {
    out.join(ESTIMATES_DIR).join(run_id).join(estimate_file(components))
}

/// Writes through a sibling temp file and renames it into place, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn execution() -> Execution {
    Execution::default()
}

/// Maps `f` over `jobs` on a pool of `workers` threads (0 = default size),
/// preserving job order in the output.
pub fn run_jobs<T: Sync, R: Send>(workers: usize, jobs: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
        Ok(pool.install(|| jobs.par_iter().map(&f).collect()))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        Ok(jobs.iter().map(f).collect())
    }
}

// ---------------------------------------------------------------- synth

/// Runs generated by `cmd_synth`: the fitting set followed by the held-out
/// set.
pub fn synth_runs(cfg: &PipelineConfig) -> Result<(Vec<SynthRun>, Vec<SynthRun>)> {
    let seen = generate_with(&cfg.synth, execution())?;
    let unseen = if cfg.synth_holdout > 0 {
        let held = SynthConfig {
            runs: cfg.synth_holdout,
            first_run: cfg.synth.first_run + cfg.synth.runs,
            ..cfg.synth.clone()
        };
        generate_with(&held, execution())?
    } else {
        Vec::new()
    };
    Ok((seen, unseen))
}

/// Writes `run_XXX.csv`, `labels/run_XXX.csv` and a manifest tagging each run
/// seen or unseen into the data directory. Returns the files written.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let (seen, unseen) = synth_runs(cfg)?;
    let dir = &cfg.data_dir;
    let mut written = Vec::new();
    let mut manifest = String::from("# role file\n");
    for (role, runs) in [("seen", &seen), ("unseen", &unseen)] {
        for run in runs.iter() {
            let id = run.trajectory.run_id();
            let mut buf = Vec::new();
            run.trajectory.write_csv(&mut buf)?;
            let file = format!("{id}.csv");
            write_atomic(&dir.join(&file), &buf)?;
            let _ = writeln!(manifest, "{role} {file}");
            written.push(dir.join(&file));

            let mut buf = Vec::new();
            run.write_labels_csv(&mut buf)?;
            let label = format!("{LABELS_DIR}/{id}.csv");
            write_atomic(&dir.join(&label), &buf)?;
            let _ = writeln!(manifest, "labels {label}");
            written.push(dir.join(&label));
        }
    }
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())?;
    written.push(dir.join(MANIFEST));
    Ok(written)
}

// ---------------------------------------------------------------- split

#[derive(Debug, Clone)]
pub struct Split {
    pub seen: Vec<Trajectory>,
    pub unseen: Vec<Trajectory>,
}

impl Split {
    pub fn tagged(&self) -> impl Iterator<Item = (DatasetTag, &Trajectory)> {
        let seen = self.seen.iter().map(|t| (DatasetTag::Seen, t));
        seen.chain(self.unseen.iter().map(|t| (DatasetTag::Unseen, t)))
    }
}

/// Reads the roles recorded by `cmd_synth`, if a manifest is present.
fn manifest_roles(dir: &Path) -> Result<Option<(Vec<String>, Vec<String>)>> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Ok(None);
    }
    let (mut seen, mut unseen) = (Vec::new(), Vec::new());
    for line in read_text(&path)?.lines().filter(|l| !l.starts_with('#')) {
        let Some((role, file)) = line.split_once(' ') else { continue };
        let id = file.trim_end_matches(".csv").to_string();
        match role {
            "seen" => seen.push(id),
            "unseen" => unseen.push(id),
            _ => {}
        }
    }
    Ok(Some((seen, unseen)))
}

/// Loads every run in the data directory and splits it. Explicit `seen` /
/// `unseen` lists win; otherwise a synth manifest is honored; otherwise all
/// runs are seen.
pub fn load_split(cfg: &PipelineConfig) -> Result<Split> {
    let all = load_trajectories(&cfg.data_dir)?;
    if all.is_empty() {
        return Err(CliError::Data(format!("{}: no run files", cfg.data_dir.display())));
    }
    let (seen_ids, unseen_ids) = if cfg.seen.is_empty() && cfg.unseen.is_empty() {
        manifest_roles(&cfg.data_dir)?.unwrap_or_default()
    } else {
        (cfg.seen.clone(), cfg.unseen.clone())
    };
    for id in seen_ids.iter().chain(&unseen_ids) {
        if !all.iter().any(|t| t.run_id() == id) {
            return Err(CliError::Config(format!("run `{id}` not found in {}", cfg.data_dir.display())));
        }
    }
    let (mut seen, mut unseen) = (Vec::new(), Vec::new());
    for t in all {
        if unseen_ids.iter().any(|id| id == t.run_id()) {
            unseen.push(t);
        } else if seen_ids.is_empty() || seen_ids.iter().any(|id| id == t.run_id()) {
            seen.push(t);
        }
    }
    if seen.is_empty() {
        return Err(CliError::Config("no seen runs to fit".into()));
    }
    Ok(Split { seen, unseen })
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone)]
pub struct FitSummary {
    pub models: usize,
    pub degenerate: usize,
    pub global: LinearModel,
}

/// Fits the windowed model cloud and the pooled global model on the seen runs.
pub fn cmd_fit(cfg: &PipelineConfig) -> Result<FitSummary> {
    let split = load_split(cfg)?;
    let cloud = fit_local_models_with(&split.seen, cfg.window, cfg.stride, execution())?;
    let global = fit_global(&split.seen, cfg.noise)?;
    let mut buf = Vec::new();
    cloud.write_csv(&mut buf)?;
    write_atomic(&cfg.output_dir.join(MODELS_CSV), &buf)?;
    write_atomic(&cfg.output_dir.join(GLOBAL_JSON), &to_json(&global)?)?;
    Ok(FitSummary {
        models: cloud.len(),
        degenerate: cloud.degenerate,
        global,
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Numerical(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn from_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::io(path, e))
}

pub fn read_cloud(cfg: &PipelineConfig) -> Result<ModelCloud> {
    let path = cfg.output_dir.join(MODELS_CSV);
    let file = std::fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(ModelCloud::read_csv(file, &path, cfg.window, cfg.stride)?)
}

pub fn read_global(cfg: &PipelineConfig) -> Result<LinearModel> {
    let path = cfg.output_dir.join(GLOBAL_JSON);
    let model: LinearModel = from_json(&path)?;
    model.validate().map_err(|e| CliError::io(&path, e))?;
    Ok(model)
}

// ---------------------------------------------------------------- cluster

#[derive(Debug, Clone)]
pub struct ClusterSummary {
    pub components: usize,
    pub iterations: usize,
    pub converged: bool,
    pub rescues: usize,
    pub path: PathBuf,
}

/// Fits one mixture per requested component count and writes `gmm_<M>.json`.
pub fn cmd_cluster(cfg: &PipelineConfig) -> Result<Vec<ClusterSummary>> {
    let points = read_cloud(cfg)?.coords();
    let mut out = Vec::with_capacity(cfg.components.len());
    for &m in &cfg.components {
        let gc = GmmConfig {
            max_iter: cfg.max_iter,
            tol: cfg.tol,
            init: cfg.init,
            exec: execution(),
            ..GmmConfig::new(m, cfg.seed)
        };
        let (params, trace) = gmm_fit(&points, &gc)?;
        let path = cfg.output_dir.join(gmm_file(m));
        write_atomic(&path, &to_json(&GmmExport::new(&params, &trace, cfg.seed))?)?;
        out.push(ClusterSummary {
            components: m,
            iterations: trace.iterations,
            converged: trace.converged,
            rescues: trace.rescues.len(),
            path,
        });
    }
    Ok(out)
}

pub fn read_bank(cfg: &PipelineConfig, m: usize) -> Result<Vec<LinearModel>> {
    let path = cfg.output_dir.join(gmm_file(m));
    let export: GmmExport = from_json(&path)?;
    let params = export.params().map_err(|e| CliError::io(&path, e))?;
    if params.components() != m {
        return Err(CliError::Data(format!("{}: holds {} components", path.display(), params.components())));
    }
    Ok(extract_models(&params, cfg.noise)?)
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    /// 1-based index of the measured row this estimate is conditioned on.
    pub k: usize,
    pub z: f64,
    pub x_hat: f64,
    pub p_hat: f64,
    pub weights: Vec<f64>,
    /// Normalized innovation squared of the step.
    pub nu: f64,
}

/// One estimate file. `components` is `None` for the single-model baseline,
/// whose rows carry no weight columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable {
    pub run_id: String,
    pub components: Option<usize>,
    pub rows: Vec<EstimateRow>,
    /// Rows where every likelihood underflowed or mixing fell back.
    pub flagged: Vec<usize>,
}

impl EstimateTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,z,x_hat,p_hat");
        for j in 1..=self.components.unwrap_or(0) {
            let _ = write!(s, ",w_{j}");
        }
        s.push_str(",nu\n");
        for r in &self.rows {
            let _ = write!(s, "{},{},{},{}", r.k, r.z, r.x_hat, r.p_hat);
            for w in &r.weights {
                let _ = write!(s, ",{w}");
            }
            let _ = writeln!(s, ",{}", r.nu);
        }
        s
    }

    /// Parses the layout written by [`to_csv`](Self::to_csv).
    pub fn parse(run_id: &str, text: &str, origin: &Path) -> Result<Self> {
        let bad = |line: usize, m: &str| CliError::Data(format!("{}: row {line}: {m}", origin.display()));
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad(1, "empty file"))?.split(',').collect();
        let n = header.len();
        if n < 5 || header[..4] != ["k", "z", "x_hat", "p_hat"] || header[n - 1] != "nu" {
            return Err(bad(1, "unexpected header"));
        }
        let m = n - 5;
        for (j, h) in header[4..n - 1].iter().enumerate() {
            if *h != format!("w_{}", j + 1) {
                return Err(bad(1, "unexpected weight column"));
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != n {
                return Err(bad(i + 2, "wrong number of columns"));
            }
            let num = |c: &str| c.parse::<f64>().map_err(|_| bad(i + 2, "not a number"));
            rows.push(EstimateRow {
                k: cells[0].parse().map_err(|_| bad(i + 2, "bad step index"))?,
                z: num(cells[1])?,
                x_hat: num(cells[2])?,
                p_hat: num(cells[3])?,
                weights: cells[4..n - 1].iter().map(|c| num(c)).collect::<Result<_>>()?,
                nu: num(cells[n - 1])?,
            });
        }
        Ok(Self {
            run_id: run_id.to_string(),
            components: (m > 0).then_some(m),
            rows,
            flagged: Vec::new(),
        })
    }

    pub fn nis(&self) -> Result<NisSeries> {
        Ok(NisSeries::new(self.rows.iter().map(|r| r.nu).collect(), 1)?)
    }
}

fn check_finite(table: &EstimateTable) -> Result<()> {
    for r in &table.rows {
        let ok = [r.x_hat, r.p_hat, r.nu].iter().chain(&r.weights).all(|v| v.is_finite());
        if !ok {
            return Err(CliError::Numerical(format!(
                "{}: {}: non-finite estimate at step {} ({} flagged steps)",
                table.run_id,
                estimate_file(table.components),
                r.k,
                table.flagged.len()
            )));
        }
    }
    Ok(())
}

/// Single-model Kalman filter baseline over one run.
pub fn estimate_baseline(model: &LinearModel, traj: &Trajectory, p0: f64) -> Result<EstimateTable> {
    let steps = run_kf(model, traj, p0)?;
    let rows = steps
        .iter()
        .zip(traj.samples())
        .enumerate()
        .map(|(i, (o, s))| EstimateRow {
            k: i + 1,
            z: s.x_next,
            x_hat: o.state.x,
            p_hat: o.state.p,
            weights: Vec::new(),
            nu: o.innovation * o.innovation / o.innovation_var,
        })
        .collect();
    let table = EstimateTable {
        run_id: traj.run_id().to_string(),
        components: None,
        rows,
        flagged: Vec::new(),
    };
    check_finite(&table)?;
    Ok(table)
}

/// IMM bank over one run; `nu` is the NIS of the mixture innovation.
pub fn estimate_bank(models: &[LinearModel], traj: &Trajectory, imm: &ImmConfig) -> Result<EstimateTable> {
    let steps = run_imm(models, traj, imm)?;
    let mut flagged = Vec::new();
    let rows = steps
        .iter()
        .zip(traj.samples())
        .enumerate()
        .map(|(i, (o, s))| {
            if o.likelihoods_floored || o.mixing_fallback {
                flagged.push(i + 1);
            }
            EstimateRow {
                k: i + 1,
                z: s.x_next,
                x_hat: o.combined.x,
                p_hat: o.combined.p,
                weights: o.weights.clone(),
                nu: o.mixture.y * o.mixture.y / o.mixture.s,
            }
        })
        .collect();
    let table = EstimateTable {
        run_id: traj.run_id().to_string(),
        components: Some(models.len()),
        rows,
        flagged,
    };
    check_finite(&table)?;
    Ok(table)
}

/// Runs the baseline and every requested bank over every run, writing
/// `estimates/<run>/estimate_*.csv` and a per-file flagged-step count.
pub fn cmd_estimate(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let split = load_split(cfg)?;
    let global = read_global(cfg)?;
    let global = LinearModel { q: cfg.noise.q, r: cfg.noise.r, ..global };
    let banks: Vec<(usize, Vec<LinearModel>)> = cfg
        .components
        .iter()
        .map(|&m| Ok((m, read_bank(cfg, m)?)))
        .collect::<Result<_>>()?;
    let imm = cfg.imm();

    let runs: Vec<&Trajectory> = split.tagged().map(|(_, t)| t).collect();
    let jobs: Vec<(&Trajectory, Option<usize>)> = runs
        .iter()
        .flat_map(|t| std::iter::once((*t, None)).chain(banks.iter().enumerate().map(move |(i, _)| (*t, Some(i)))))
        .collect();
    let results = run_jobs(cfg.workers, &jobs, |&(traj, bank)| -> Result<(PathBuf, EstimateTable)> {
        let table = match bank {
            None => estimate_baseline(&global, traj, cfg.p0)?,
            Some(i) => estimate_bank(&banks[i].1, traj, &imm)?,
        };
        let path = estimate_path(&cfg.output_dir, traj.run_id(), table.components);
        write_atomic(&path, table.to_csv().as_bytes())?;
        Ok((path, table))
    })?;

    let mut paths = Vec::with_capacity(results.len());
    let mut diag = String::from("run_id,label,flagged_steps\n");
    for r in results {
        let (path, table) = r?;
        let label = table.components.map_or(BASELINE_LABEL.to_string(), bank_label);
        let _ = writeln!(diag, "{},{},{}", table.run_id, label, table.flagged.len());
        paths.push(path);
    }
    let diag_path = cfg.output_dir.join(ESTIMATES_DIR).join(DIAGNOSTICS_CSV);
    write_atomic(&diag_path, diag.as_bytes())?;
    paths.push(diag_path);
    Ok(paths)
}

// ---------------------------------------------------------------- report

pub fn report_file(label: &str, tag: DatasetTag) -> String {
    format!("nis_report_{label}_{tag}.json")
}

/// Pools per-run NIS series into one labeled report per dataset tag present.
fn reports_for(
    label: &str,
    components: Option<usize>,
    tables: &[(DatasetTag, EstimateTable)],
    tail: f64,
) -> Result<Vec<NisReport>> {
    let mut out = Vec::new();
    for tag in [DatasetTag::Seen, DatasetTag::Unseen] {
        let series: Vec<NisSeries> = tables
            .iter()
            .filter(|(t, _)| *t == tag)
            .map(|(_, e)| e.nis())
            .collect::<Result<_>>()?;
        if !series.is_empty() {
            out.push(nis_report_runs(&series, tail)?.labeled(label, components, tag));
        }
    }
    Ok(out)
}

/// Builds reports, the summary table and plots from the estimate files.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<SummaryTable> {
    let split = load_split(cfg)?;
    let runs: Vec<(DatasetTag, &Trajectory)> = split.tagged().collect();
    let labels: Vec<Option<usize>> = std::iter::once(None).chain(cfg.components.iter().map(|&m| Some(m))).collect();
    let (lower, upper) = chi2_bounds(1, cfg.tail)?;

    let per_label = run_jobs(cfg.workers, &labels, |&m| -> Result<Vec<NisReport>> {
        let label = m.map_or(BASELINE_LABEL.to_string(), bank_label);
        let mut tables = Vec::with_capacity(runs.len());
        for &(tag, traj) in &runs {
            let path = estimate_path(&cfg.output_dir, traj.run_id(), m);
            let table = EstimateTable::parse(traj.run_id(), &read_text(&path)?, &path)?;
            if table.components != m {
                return Err(CliError::Data(format!("{}: unexpected weight columns", path.display())));
            }
            write_run_plots(cfg, &label, &table, (lower, upper))?;
            tables.push((tag, table));
        }
        let reports = reports_for(&label, m, &tables, cfg.tail)?;
        for r in &reports {
            write_atomic(&cfg.output_dir.join(report_file(&label, r.dataset_tag)), &to_json(r)?)?;
        }
        Ok(reports)
    })?;
    let mut reports = Vec::new();
    for r in per_label {
        reports.extend(r?);
    }
    let table = compare_runs(&reports)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_atomic(&cfg.output_dir.join(SUMMARY_CSV), &buf)?;
    write_atomic(
        &cfg.output_dir.join(PLOTS_DIR).join("nis_violations.svg"),
        summary_chart(&table, &labels).as_bytes(),
    )?;
    Ok(table)
}

fn write_run_plots(cfg: &PipelineConfig, label: &str, table: &EstimateTable, bounds: (f64, f64)) -> Result<()> {
    let dir = cfg.output_dir.join(PLOTS_DIR).join(&table.run_id);
    let nis = LineChart {
        title: format!("{} NIS, {label}", table.run_id),
        x_label: "step".into(),
        y_label: "NIS".into(),
        series: vec![Series {
            name: "NIS".into(),
            points: table.rows.iter().map(|r| (r.k as f64, r.nu)).collect(),
        }],
        ref_lines: vec![
            RefLine { name: format!("lower {:.4}", bounds.0), y: bounds.0 },
            RefLine { name: format!("upper {:.4}", bounds.1), y: bounds.1 },
        ],
        y_range: Some((0.0, 3.0 * bounds.1)),
    };
    write_atomic(&dir.join(format!("nis_{label}.svg")), line_chart(&nis).as_bytes())?;
    if let Some(m) = table.components {
        let weights = LineChart {
            title: format!("{} model weights, {label}", table.run_id),
            x_label: "step".into(),
            y_label: "weight".into(),
            series: (0..m)
                .map(|j| Series {
                    name: format!("w_{}", j + 1),
                    points: table.rows.iter().map(|r| (r.k as f64, r.weights[j])).collect(),
                })
                .collect(),
            ref_lines: Vec::new(),
            y_range: Some((0.0, 1.0)),
        };
        write_atomic(&dir.join(format!("weights_{label}.svg")), line_chart(&weights).as_bytes())?;
    }
    Ok(())
}

fn summary_chart(table: &SummaryTable, labels: &[Option<usize>]) -> String {
    let names: Vec<String> = labels
        .iter()
        .map(|m| m.map_or(BASELINE_LABEL.to_string(), bank_label))
        .collect();
    let groups = [DatasetTag::Seen, DatasetTag::Unseen]
        .into_iter()
        .filter(|tag| table.rows.iter().any(|r| r.dataset_tag == *tag))
        .map(|tag| {
            let v = names
                .iter()
                .map(|n| table.get(n, tag).map_or(f64::NAN, |r| r.avg_violations_per_run))
                .collect();
            (tag.to_string(), v)
        })
        .collect();
    bar_chart(&BarChart {
        title: "Average NIS bound violations per run".into(),
        y_label: "violations per run".into(),
        categories: labels.iter().map(|m| m.map_or("KF".to_string(), |m| m.to_string())).collect(),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_csv_round_trips() {
        let table = EstimateTable {
            run_id: "r".into(),
            components: Some(2),
            rows: vec![EstimateRow {
                k: 1,
                z: 0.1,
                x_hat: 1.0 / 3.0,
                p_hat: 1e-7,
                weights: vec![0.25, 0.75],
                nu: 2.5,
            }],
            flagged: Vec::new(),
        };
        let text = table.to_csv();
        assert!(text.starts_with("k,z,x_hat,p_hat,w_1,w_2,nu\n"));
        assert_eq!(EstimateTable::parse("r", &text, Path::new("x")).unwrap(), table);

        let base = EstimateTable { components: None, rows: vec![EstimateRow { weights: vec![], ..table.rows[0].clone() }], ..table };
        let text = base.to_csv();
        assert!(text.starts_with("k,z,x_hat,p_hat,nu\n"));
        assert_eq!(EstimateTable::parse("r", &text, Path::new("x")).unwrap(), base);
    }

    #[test]
    fn parse_rejects_bad_layouts() {
        let p = Path::new("x");
        assert!(EstimateTable::parse("r", "", p).is_err());
        assert!(EstimateTable::parse("r", "k,z,x_hat,p_hat,w_2,nu\n", p).is_err());
        assert!(EstimateTable::parse("r", "k,z,x_hat,p_hat,nu\n1,2,3\n", p).is_err());
        assert!(EstimateTable::parse("r", "k,z,x_hat,p_hat,nu\n1,2,3,x,5\n", p).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn jobs_keep_order() {
        let jobs: Vec<usize> = (0..100).collect();
        assert_eq!(run_jobs(3, &jobs, |j| j * 2).unwrap(), (0..100).map(|j| j * 2).collect::<Vec<_>>());
    }
}
