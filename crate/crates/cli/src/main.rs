use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use nphmm::experiment::{
    run_diagnostics, run_experiment, Case, DiagnosticsConfig, ExperimentConfig,
};

/// Simulate hidden-state regression data, estimate it by EM and write CSV
/// traces.
///
/// Settings are read from `--config` (key=value lines) and then overridden by
/// any flag given on the command line.
#[derive(Debug, Parser)]
#[command(name = "nphmm", version, about)]
struct Args {
    /// Configuration file with key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// b1_known_nu or b2_full.
    #[arg(long)]
    case: Option<Case>,
    /// Number of observation blocks per replicate.
    #[arg(long)]
    n_blocks: Option<usize>,
    /// Bandwidth of the simulated latent chain.
    #[arg(long)]
    a_star: Option<f64>,
    /// Particles per block for the bandwidth update.
    #[arg(long)]
    n_a: Option<usize>,
    /// Particles per block for the regression update.
    #[arg(long)]
    n_f: Option<usize>,
    /// EM iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Constant c in lambda_n = c log(n) sqrt(n).
    #[arg(long)]
    lambda_c: Option<f64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of independent replicates.
    #[arg(long)]
    replicates: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run the mixing and concentration diagnostics instead of an experiment.
    #[arg(long)]
    diagnostics: bool,
}

impl Args {
    fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
        }
        if let Some(v) = self.case {
            cfg.case = v;
        }
        if let Some(v) = self.n_blocks {
            cfg.n_blocks = v;
        }
        if let Some(v) = self.a_star {
            cfg.a_star = v;
        }
        if let Some(v) = self.n_a {
            cfg.n_a = v;
        }
        if let Some(v) = self.n_f {
            cfg.n_f = v;
        }
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.lambda_c {
            cfg.lambda_c = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.replicates {
            cfg.replicates = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        Ok(cfg)
    }
}

fn run(args: &Args) -> Result<bool> {
    let cfg = args.experiment_config()?;
    if args.diagnostics {
        let report = run_diagnostics(&DiagnosticsConfig::from_experiment(&cfg))?;
        for (lag, phi) in report.mixing.lags.iter().zip(&report.mixing.phi_hat) {
            println!("mixing lag {lag}: phi_hat = {phi:.4}");
        }
        for row in &report.tail.rows {
            println!(
                "tail x = {}: empirical {:.4} vs bound {:.4} ({})",
                row.x,
                row.empirical_tail,
                row.bound,
                if row.pass { "ok" } else { "VIOLATED" }
            );
        }
        return Ok(report.tail.all_pass());
    }
    let report = run_experiment(&cfg)?;
    if let Some(last) = report.summary.last() {
        let [a, _, l2, _, _, haus] = last.metrics;
        println!(
            "{} replicates, {} iterations: median a_hat {:.4}, median L2 error {:.4}, median Hausdorff {:.4}",
            report.replicates.len(),
            last.iter,
            a.median,
            l2.median,
            haus.median
        );
    }
    println!("wrote {} files to {}", report.files.len(), cfg.out_dir.display());
    Ok(true)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: concentration bound violated beyond Monte Carlo error");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
