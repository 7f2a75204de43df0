//! Experiment harness: simulate, estimate, measure and write CSV traces.
//!
//! Output layout of [`run_experiment`] inside `out_dir`:
//!
//! * `config.txt`: the configuration as `key=value` lines, followed by
//!   comment lines giving the metric grid sizes;
//! * `trace_rNNN.csv`: one row per EM iteration with columns
//!   `iter,a_hat,penalized_pll,l2_err_total,l2_err_f1,l2_err_f2,hausdorff`;
//! * `spline_rNNN.txt`: the final regression estimate;
//! * `summary.csv`: per iteration, lower quartile, median and upper quartile
//!   of every trace metric across replicates.
//!
//! [`run_diagnostics`] writes `mixing.csv` and `tail.csv`. Every float is
//! written with 17 significant digits.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::density::{lambda_schedule, ObservationBlocks};
use crate::diagnostics::{concentration_tail_check, estimate_mixing_decay, ConcentrationConfig, MixingEstimate, TailCheck};
use crate::em::{run_em_with, EmConfig};
use crate::error::{Error, Result};
use crate::metrics::{hausdorff_image_distance, l2_error_up_to_isometry, L2_NODES};
use crate::model::{simulate, TrueModel};
use crate::rng::{purpose, SeedPath};
use crate::spline::SplineFunction;

/// Grid size of the Hausdorff image distance reported in traces.
pub const HAUSDORFF_GRID: usize = 1001;

pub const TRACE_COLUMNS: [&str; 7] = [
    "iter",
    "a_hat",
    "penalized_pll",
    "l2_err_total",
    "l2_err_f1",
    "l2_err_f2",
    "hausdorff",
];

/// Which estimation problem to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    /// Single observations, latent law taken as the known uniform density.
    B1KnownNu,
    /// Pairs of observations, bandwidth estimated jointly with `f`.
    B2Full,
}

impl Case {
    pub fn block_len(self) -> usize {
        match self {
            Case::B1KnownNu => 1,
            Case::B2Full => 2,
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::B1KnownNu => "b1_known_nu",
            Case::B2Full => "b2_full",
        })
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "b1_known_nu" => Ok(Case::B1KnownNu),
            "b2_full" => Ok(Case::B2Full),
            other => Err(Error::Parse(format!(
                "unknown case {other:?}, expected b1_known_nu or b2_full"
            ))),
        }
    }
}

/// Settings of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub case: Case,
    pub n_blocks: usize,
    pub a_star: f64,
    /// Particles per block for the bandwidth update (ignored for `b1_known_nu`).
    pub n_a: usize,
    pub n_f: usize,
    pub iterations: usize,
    /// Constant `c` in `lambda_n = c log(n) sqrt(n)`.
    pub lambda_c: f64,
    pub seed: u64,
    pub replicates: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: Case::B1KnownNu,
            n_blocks: 2000,
            a_star: 1.0,
            n_a: 100,
            n_f: 100,
            iterations: 100,
            lambda_c: 1.0,
            seed: 1,
            replicates: 10,
            out_dir: PathBuf::from("results"),
        }
    }
}

/// Keys accepted in config files, in output order.
pub const CONFIG_KEYS: [&str; 10] = [
    "case",
    "n_blocks",
    "a_star",
    "n_a",
    "n_f",
    "iterations",
    "lambda_c",
    "seed",
    "replicates",
    "out_dir",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("invalid value {value:?} for {key}")))
}

impl ExperimentConfig {
    /// Desk-scale settings: `n = 2000`, 40 iterations for `b1_known_nu`;
    /// `n = 1000`, 30 iterations for `b2_full`.
    pub fn scaled(case: Case) -> Self {
        let (n_blocks, iterations) = match case {
            Case::B1KnownNu => (2000, 40),
            Case::B2Full => (1000, 30),
        };
        Self {
            case,
            n_blocks,
            iterations,
            ..Self::default()
        }
    }

    /// Set one field from its textual value. Dashes in `key` are read as
    /// underscores, so flag names are accepted too.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim().replace('-', "_").as_str() {
            "case" => self.case = value.parse()?,
            "n_blocks" => self.n_blocks = parse_value(key, value)?,
            "a_star" => self.a_star = parse_value(key, value)?,
            "n_a" => self.n_a = parse_value(key, value)?,
            "n_f" => self.n_f = parse_value(key, value)?,
            "iterations" => self.iterations = parse_value(key, value)?,
            "lambda_c" => self.lambda_c = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "replicates" => self.replicates = parse_value(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines. Blank lines and lines starting with `#` are
    /// skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        format!(
            "case={}\nn_blocks={}\na_star={}\nn_a={}\nn_f={}\niterations={}\nlambda_c={}\nseed={}\nreplicates={}\nout_dir={}\n",
            self.case,
            self.n_blocks,
            self.a_star,
            self.n_a,
            self.n_f,
            self.iterations,
            self.lambda_c,
            self.seed,
            self.replicates,
            self.out_dir.display()
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.n_blocks < 2 {
            return bad("n_blocks must be at least 2");
        }
        if self.n_f == 0 || (self.case == Case::B2Full && self.n_a == 0) {
            return bad("particle counts must be positive");
        }
        if self.iterations == 0 || self.replicates == 0 {
            return bad("iterations and replicates must be positive");
        }
        if !(self.a_star.is_finite() && self.a_star > 0.0) {
            return bad("a_star must be positive");
        }
        if !(self.lambda_c.is_finite() && self.lambda_c > 0.0) {
            return bad("lambda_c must be positive");
        }
        Ok(())
    }

    pub fn lambda_n(&self) -> f64 {
        lambda_schedule(self.lambda_c, self.n_blocks)
    }

    /// Seed of replicate `r`, shared by its simulation and its EM run.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        SeedPath::new(self.seed).child2(purpose::REPLICATE, r as u64).key()
    }

    /// EM settings for one replicate.
    pub fn em_config(&self, replicate: usize) -> Result<EmConfig> {
        let b = self.case.block_len();
        let mut em = EmConfig::new(b, 2, self.lambda_n())?;
        em.n_a = self.n_a;
        em.n_f = self.n_f;
        em.iterations = self.iterations;
        em.seed = self.replicate_seed(replicate);
        em.estimate_a = self.case == Case::B2Full;
        em.bootstrap_replicates = 0;
        Ok(em)
    }
}

/// One row of a trace CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub a_hat: f64,
    pub penalized_pll: f64,
    pub l2_err_total: f64,
    pub l2_err_f1: f64,
    pub l2_err_f2: f64,
    pub hausdorff: f64,
}

impl TraceRow {
    fn metrics(&self) -> [f64; 6] {
        [
            self.a_hat,
            self.penalized_pll,
            self.l2_err_total,
            self.l2_err_f1,
            self.l2_err_f2,
            self.hausdorff,
        ]
    }
}

/// Result of one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub trace: Vec<TraceRow>,
    pub f_hat: SplineFunction,
    pub a_hat: f64,
}

impl ReplicateResult {
    pub fn last(&self) -> &TraceRow {
        self.trace.last().expect("trace has at least one row")
    }
}

/// Quartiles of one metric at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Summary row: quartiles across replicates of each metric.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub iter: usize,
    /// In the order `a_hat, penalized_pll, l2_err_total, l2_err_f1,
    /// l2_err_f2, hausdorff`.
    pub metrics: [Quartiles; 6],
}

impl SummaryRow {
    pub fn a_hat(&self) -> Quartiles {
        self.metrics[0]
    }
}

/// Everything produced by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub replicates: Vec<ReplicateResult>,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

pub fn quartiles(values: &[f64]) -> Quartiles {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Quartiles {
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
    }
}

pub fn median(values: &[f64]) -> f64 {
    quartiles(values).median
}

/// Simulate and estimate one replicate without writing anything.
pub fn run_replicate(config: &ExperimentConfig, replicate: usize) -> Result<ReplicateResult> {
    config.validate()?;
    let model = TrueModel::half_circle(config.a_star)?;
    let seed = config.replicate_seed(replicate);
    let b = config.case.block_len();
    let traj = simulate(&model, config.n_blocks * b, seed)?;
    let obs = ObservationBlocks::from_trajectory(&traj, b)?;
    let em = config.em_config(replicate)?;
    let mut trace = Vec::with_capacity(config.iterations);
    let state = run_em_with(&em, &obs, |s| {
        let rec = s.trace.last().ok_or_else(|| Error::Internal("empty EM trace".into()))?;
        let l2 = l2_error_up_to_isometry(&s.f_hat, model.f_star.as_ref());
        let (haus, _) = hausdorff_image_distance(&s.f_hat, model.f_star.as_ref(), HAUSDORFF_GRID);
        trace.push(TraceRow {
            iter: rec.iter,
            a_hat: rec.a_hat,
            penalized_pll: rec.penalized_pll,
            l2_err_total: l2.total,
            l2_err_f1: l2.per_component[0],
            l2_err_f2: l2.per_component[1],
            hausdorff: haus,
        });
        Ok(())
    })?;
    Ok(ReplicateResult {
        replicate,
        seed,
        trace,
        f_hat: state.f_hat,
        a_hat: state.a_hat,
    })
}

/// Quartiles across replicates at every iteration.
pub fn summarize(results: &[ReplicateResult]) -> Vec<SummaryRow> {
    let iterations = results.iter().map(|r| r.trace.len()).min().unwrap_or(0);
    (0..iterations)
        .map(|i| {
            let metrics = std::array::from_fn(|m| {
                let vals: Vec<f64> = results.iter().map(|r| r.trace[i].metrics()[m]).collect();
                quartiles(&vals)
            });
            SummaryRow {
                iter: results[0].trace[i].iter,
                metrics,
            }
        })
        .collect()
}

/// Format a float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = TRACE_COLUMNS.join(",");
    out.push('\n');
    for r in trace {
        let cols: Vec<String> = r.metrics().iter().map(|&v| fmt_float(v)).collect();
        out.push_str(&format!("{},{}\n", r.iter, cols.join(",")));
    }
    out
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut header = vec!["iter".to_string()];
    for name in &TRACE_COLUMNS[1..] {
        for q in ["q1", "median", "q3"] {
            header.push(format!("{name}_{q}"));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for row in summary {
        let mut cols = vec![row.iter.to_string()];
        for q in &row.metrics {
            cols.extend([fmt_float(q.q1), fmt_float(q.median), fmt_float(q.q3)]);
        }
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

/// Writes files and deletes all of them (and a newly created directory)
/// unless [`OutputSet::commit`] is called.
struct OutputSet {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    committed: bool,
}

impl OutputSet {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
            committed: false,
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        self.files.push(path.clone());
        let mut file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
        file.write_all(contents.as_bytes()).map_err(|e| io_error(&path, e))?;
        Ok(())
    }

    fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Internal(format!("{}: {e}", path.display()))
}

/// Run all replicates in parallel and write traces, splines and summary.
/// On error every file written by this call is removed.
/// Comment lines recording the grids behind the trace metrics.
pub fn metric_metadata() -> String {
    format!("# l2_gauss_legendre_nodes={L2_NODES}\n# hausdorff_grid={HAUSDORFF_GRID}\n")
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut out = OutputSet::new(&config.out_dir)?;
    out.write("config.txt", &format!("{}{}", config.to_text(), metric_metadata()))?;
    let results: Vec<ReplicateResult> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, r))
        .collect::<Result<_>>()?;
    for r in &results {
        out.write(&format!("trace_r{:03}.csv", r.replicate), &trace_csv(&r.trace))?;
        out.write(&format!("spline_r{:03}.txt", r.replicate), &r.f_hat.to_text())?;
    }
    let summary = summarize(&results);
    out.write("summary.csv", &summary_csv(&summary))?;
    Ok(ExperimentReport {
        replicates: results,
        summary,
        files: out.commit(),
    })
}

/// Settings of [`run_diagnostics`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub a_star: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub mixing_length: usize,
    pub mixing_lags: Vec<usize>,
    pub mixing_bins: usize,
    pub tail: ConcentrationConfig,
}

impl DiagnosticsConfig {
    /// Diagnostics at the experiment's bandwidth, seed and output directory.
    pub fn from_experiment(config: &ExperimentConfig) -> Self {
        let tail = ConcentrationConfig {
            a: config.a_star,
            seed: config.seed,
            ..ConcentrationConfig::default()
        };
        Self {
            a_star: config.a_star,
            seed: config.seed,
            out_dir: config.out_dir.clone(),
            mixing_length: 100_000,
            mixing_lags: vec![1, 2, 4, 8],
            mixing_bins: 10,
            tail,
        }
    }
}

/// Results of [`run_diagnostics`].
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub mixing: MixingEstimate,
    pub tail: TailCheck,
    pub files: Vec<PathBuf>,
}

pub fn mixing_csv(m: &MixingEstimate) -> String {
    let mut out = String::from("lag,phi_hat,se,max_z,bins\n");
    for i in 0..m.lags.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.lags[i],
            fmt_float(m.phi_hat[i]),
            fmt_float(m.se[i]),
            fmt_float(m.max_z[i]),
            m.bins
        ));
    }
    out
}

pub fn tail_csv(t: &TailCheck) -> String {
    let mut out = String::from("x,radius,empirical_tail,se,bound,pass\n");
    for r in &t.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_float(r.x),
            fmt_float(r.radius),
            fmt_float(r.empirical_tail),
            fmt_float(r.se),
            fmt_float(r.bound),
            r.pass
        ));
    }
    out
}

/// Estimate mixing decay of the latent chain and run the concentration tail
/// check, writing `mixing.csv` and `tail.csv`.
pub fn run_diagnostics(config: &DiagnosticsConfig) -> Result<DiagnosticsReport> {
    let mut out = OutputSet::new(&config.out_dir)?;
    let model = TrueModel::half_circle(config.a_star)?;
    let traj = simulate(
        &model,
        config.mixing_length,
        SeedPath::new(config.seed).child(purpose::DIAGNOSTICS).key(),
    )?;
    let mixing = estimate_mixing_decay(&traj.states, &config.mixing_lags, config.mixing_bins)?;
    out.write("mixing.csv", &mixing_csv(&mixing))?;
    let tail = concentration_tail_check(&config.tail)?;
    out.write("tail.csv", &tail_csv(&tail))?;
    Ok(DiagnosticsReport {
        mixing,
        tail,
        files: out.commit(),
    })
}
