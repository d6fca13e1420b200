use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmm_imm_cli::pipeline::{cmd_cluster, cmd_estimate, cmd_fit, cmd_report, cmd_synth};
use gmm_imm_cli::{CliError, PipelineConfig};

#[derive(Parser)]
#[command(name = "gmm-imm", version, about = "GMM-clustered IMM angular-velocity estimation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a regime-switching synthetic corpus into the data directory
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of fitting runs
        #[arg(long)]
        runs: Option<usize>,
        /// Extra held-out runs, tagged unseen in the manifest
        #[arg(long)]
        holdout: Option<usize>,
        /// Samples per run
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fit the windowed model cloud and the global model on the seen runs
    Fit(Common),
    /// Fit one Gaussian mixture per requested component count
    Cluster(Common),
    /// Run the baseline filter and every IMM bank over every run
    Estimate(Common),
    /// Write NIS reports, the summary table and plots
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding the run CSV files
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for every artifact
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Component counts, e.g. `3,6,9` or `3-25`
    #[arg(long)]
    components: Option<String>,
    /// Mixture seed (synth: corpus seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Probability in each NIS tail
    #[arg(long)]
    tail: Option<f64>,
    /// Diagonal of the sticky transition matrix
    #[arg(long = "tr-diag")]
    tr_diag: Option<f64>,
    /// Parallel estimation jobs (0 = one per core)
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self, seed_key: &str) -> Result<PipelineConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        let overrides = [
            ("data_dir", self.data.as_ref().map(|p| p.display().to_string())),
            ("output_dir", self.out.as_ref().map(|p| p.display().to_string())),
            ("window", self.window.map(|v| v.to_string())),
            ("stride", self.stride.map(|v| v.to_string())),
            ("components", self.components.clone()),
            (seed_key, self.seed.map(|v| v.to_string())),
            ("tail", self.tail.map(|v| v.to_string())),
            ("tr_diag", self.tr_diag.map(|v| v.to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v).map_err(|e| CliError::Config(format!("--{}", e.message())))?;
            }
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common, runs, holdout, steps } => {
            let mut cfg = common.load("synth_seed")?;
            for (key, v) in [("synth_runs", runs), ("synth_holdout", holdout), ("synth_steps", steps)] {
                if let Some(v) = v {
                    cfg.set(key, &v.to_string())?;
                }
            }
            cfg.validate()?;
            let files = cmd_synth(&cfg)?;
            println!("wrote {} files to {}", files.len(), cfg.data_dir.display());
        }
        Command::Fit(common) => {
            let cfg = common.load("seed")?;
            cfg.validate()?;
            let s = cmd_fit(&cfg)?;
            println!(
                "{} window models ({} degenerate windows skipped); global a={} b1={} b2={}",
                s.models, s.degenerate, s.global.a, s.global.b1, s.global.b2
            );
        }
        Command::Cluster(common) => {
            let cfg = common.load("seed")?;
            cfg.validate()?;
            for s in cmd_cluster(&cfg)? {
                let status = if s.converged { "converged" } else { "hit max_iter" };
                println!(
                    "M={:>2}: {} after {} iterations, {} rescues -> {}",
                    s.components,
                    status,
                    s.iterations,
                    s.rescues,
                    s.path.display()
                );
            }
        }
        Command::Estimate(common) => {
            let cfg = common.load("seed")?;
            cfg.validate()?;
            let files = cmd_estimate(&cfg)?;
            println!("wrote {} files under {}", files.len(), cfg.output_dir.display());
        }
        Command::Report(common) => {
            let cfg = common.load("seed")?;
            cfg.validate()?;
            let table = cmd_report(&cfg)?;
            println!("{:<10} {:<7} {:>6} {:>10} {:>14}", "label", "tag", "runs", "mean NIS", "viol/run");
            for r in &table.rows {
                println!(
                    "{:<10} {:<7} {:>6} {:>10.4} {:>14.2}",
                    r.label, r.dataset_tag.to_string(), r.runs, r.mean_nis, r.avg_violations_per_run
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
