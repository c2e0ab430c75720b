//! Command-line front end: `run`, `cost`, `conformance`, `summarize`,
//! `dump-formats`.

pub mod config;
pub mod conformance;
pub mod cost;
pub mod experiment;
pub mod summarize;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::costmodel::{CostTable, MemoryModel};
use crate::error::{Error, Result};
use crate::network::{KernelMode, SchemeConfig, SCHEME_NAMES};
use crate::qformats::{enumerate_codepoints, NumericFormat, RoundingMode};
pub use config::{DataSource, ExperimentConfig, CIFAR_DIR_ENV};

#[derive(Debug, Parser)]
#[command(name = "lpnum", version, about = "Low-precision training simulator and cost model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Train a network under one numeric scheme and write metrics.
    Run(RunArgs),
    /// Per-layer time and memory estimates as CSV.
    Cost(CostArgs),
    /// Exhaustive codepoint, rounding, shift and gradient suites.
    Conformance(ConformanceArgs),
    /// Fold multi-seed runs into mean ± std rows.
    Summarize(SummarizeArgs),
    /// Print every codepoint of the given formats as CSV.
    DumpFormats(DumpArgs),
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named scheme (fp32-baseline, fixed12, scaled-fixed12, float12,
    /// ctx-fixed12, ctx-float12, pot).
    #[arg(long)]
    pub scheme: Option<String>,
    /// nearest, stochastic or truncate.
    #[arg(long)]
    pub rounding: Option<RoundingMode>,
    /// Per-class format override, e.g. `outputs=fixed[6,6]` (repeatable).
    #[arg(long = "format", value_name = "CLASS=FORMAT")]
    pub formats: Vec<String>,
    /// cifar10-cnn, compact, linear, or a topology JSON file.
    #[arg(long)]
    pub topology: Option<String>,
    /// Dataset source.
    #[arg(long, value_enum)]
    pub data: Option<DataSource>,
    /// CIFAR-10 binary directory.
    #[arg(long, env = CIFAR_DIR_ENV)]
    pub cifar_dir: Option<PathBuf>,
    /// Stratified training subset size.
    #[arg(long)]
    pub subset: Option<usize>,
    /// Stratified test subset size.
    #[arg(long)]
    pub test_subset: Option<usize>,
    /// Subtract the training set's per-channel means from both splits.
    #[arg(long)]
    pub mean_subtraction: bool,
    /// Synthetic data: number of classes.
    #[arg(long)]
    pub synthetic_classes: Option<usize>,
    /// Synthetic data: samples per class in each split.
    #[arg(long)]
    pub synthetic_per_class: Option<usize>,
    /// Synthetic data: prototype scale.
    #[arg(long)]
    pub synthetic_separation: Option<f64>,
    /// Synthetic data: per-pixel noise.
    #[arg(long)]
    pub synthetic_noise: Option<f64>,
    /// Synthetic data: image shape as C,H,W.
    #[arg(long, value_parser = parse_shape)]
    pub synthetic_shape: Option<(usize, usize, usize)>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Round the hyperparameters to powers of two.
    #[arg(long)]
    pub pot_hyperparameters: bool,
    /// Check stored tensors against their formats after every step.
    #[arg(long)]
    pub check_conformance: bool,
    /// Accuracy (percent) whose first crossing is reported.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-epoch log2-magnitude histograms.
    #[arg(long)]
    pub histograms: bool,
    /// Checkpoint stem to resume from (converted if the scheme differs).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Use multiply kernels even where shifts apply.
    #[arg(long)]
    pub multiply_kernels: bool,
}

fn parse_shape(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(format!("expected C,H,W, got '{s}'")),
    }
}

impl RunArgs {
    /// Config file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.scheme {
            c.scheme = v.clone();
        }
        if let Some(v) = self.rounding {
            c.rounding = v;
        }
        for f in &self.formats {
            let (class, spec) = f
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--format expects CLASS=FORMAT, got '{f}'")))?;
            c.formats.insert(class.trim().to_string(), spec.trim().to_string());
        }
        if let Some(v) = &self.topology {
            c.topology = v.clone();
        }
        if let Some(v) = self.data {
            c.data.source = v;
        }
        if let Some(v) = &self.cifar_dir {
            c.data.cifar_dir = Some(v.clone());
        }
        if let Some(v) = self.subset {
            c.data.subset = Some(v);
        }
        if let Some(v) = self.test_subset {
            c.data.test_subset = Some(v);
        }
        if self.mean_subtraction {
            c.data.mean_subtraction = true;
        }
        let s = &mut c.data.synthetic;
        if let Some(v) = self.synthetic_classes {
            s.classes = v;
        }
        if let Some(v) = self.synthetic_per_class {
            s.per_class = v;
        }
        if let Some(v) = self.synthetic_separation {
            s.separation = v;
        }
        if let Some(v) = self.synthetic_noise {
            s.noise = v;
        }
        if let Some(v) = self.synthetic_shape {
            s.shape = v;
        }
        let t = &mut c.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            t.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            t.weight_decay = v;
        }
        if self.pot_hyperparameters {
            t.pot_hyperparameters = true;
        }
        if self.check_conformance {
            t.check_conformance = true;
        }
        if let Some(v) = self.target_accuracy {
            t.target_accuracy = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
            c.data.synthetic.seed = v;
        }
        if let Some(v) = &self.out {
            c.output = v.clone();
        }
        if self.histograms {
            c.histograms = true;
        }
        if let Some(v) = &self.resume {
            c.resume = Some(v.clone());
        }
        if self.multiply_kernels {
            c.kernel = KernelMode::Multiply;
        }
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Scheme name, or `all`.
    #[arg(long, default_value = "all")]
    pub scheme: String,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50_000)]
    pub dataset_size: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    /// Charge the update multiplies as shifts.
    #[arg(long)]
    pub pot_hyperparameters: bool,
    /// Cost table JSON; defaults to the shipped calibration.
    #[arg(long)]
    pub cost_table: Option<PathBuf>,
    /// cifar10-cnn, or a topology JSON file.
    #[arg(long, default_value = "cifar10-cnn")]
    pub topology: String,
    /// Images whose activations are resident in the memory estimate.
    #[arg(long)]
    pub resident_images: Option<usize>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConformanceArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Probe points per format in the rounding suite.
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    /// Stochastic draws per probe point.
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    /// Random vector pairs in the shift suite.
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
    /// Self-test: offset every float bias on the implementation side, which
    /// must make the codepoint suites fail.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub inject_bias_offset: i32,
    /// Also write the reports as JSON lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Run directories or summary.csv files.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    /// Formats such as fixed[0,12] or float[5,6]; defaults to the suite formats.
    pub formats: Vec<String>,
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => stdout.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn cost(a: &CostArgs, stdout: &mut dyn Write) -> Result<()> {
    let table = match &a.cost_table {
        Some(p) => CostTable::load(p)?,
        None => CostTable::default_table(),
    };
    let schemes = if a.scheme == "all" {
        SCHEME_NAMES
            .iter()
            .map(|n| SchemeConfig::from_name(n))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![SchemeConfig::from_name(&a.scheme)?]
    };
    let mut memory = MemoryModel::default();
    if let Some(n) = a.resident_images {
        memory.resident_images = n;
    }
    let req = cost::CostRequest {
        schemes,
        topology: config::resolve_topology(&a.topology, crate::data::CIFAR_SHAPE, crate::data::CIFAR_CLASSES)?,
        dataset_size: a.dataset_size,
        epochs: a.epochs,
        batch_size: a.batch_size,
        pot_hyperparameters: a.pot_hyperparameters,
        table,
        memory,
    };
    emit(a.out.as_deref(), &cost::to_csv(&cost::cost_rows(&req)?)?, stdout)
}

fn conformance_cmd(a: &ConformanceArgs, stdout: &mut dyn Write) -> Result<bool> {
    let plan = conformance::SuitePlan {
        seed: a.seed,
        rounding_points: a.points,
        rounding_draws: a.draws,
        shift_pairs: a.pairs,
        inject_bias_offset: a.inject_bias_offset,
        ..conformance::SuitePlan::default()
    };
    let mut lines = String::new();
    let mut io_err = None;
    let ok = conformance::run_all(&plan, |r| {
        if let Err(e) = writeln!(stdout, "{}", r.render()) {
            io_err.get_or_insert(e);
        }
        lines.push_str(&serde_json::to_string(r).expect("report serializes"));
        lines.push('\n');
    })?;
    if let Some(e) = io_err {
        return Err(Error::io("<stdout>", e));
    }
    if let Some(p) = &a.out {
        std::fs::write(p, lines).map_err(|e| Error::io(p, e))?;
    }
    Ok(ok)
}

fn dump_formats(a: &DumpArgs, stdout: &mut dyn Write) -> Result<()> {
    let names: Vec<String> = if a.formats.is_empty() {
        conformance::SUITE_FORMATS.iter().map(|s| s.to_string()).collect()
    } else {
        a.formats.clone()
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["format", "index", "value"])
        .map_err(|e| Error::Config(e.to_string()))?;
    for n in names {
        let f: NumericFormat = n.parse()?;
        for (i, v) in enumerate_codepoints(&f)?.iter().enumerate() {
            w.write_record([f.to_string(), i.to_string(), v.to_string()])
                .map_err(|e| Error::Config(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    stdout.write_all(&bytes).map_err(|e| Error::io("<stdout>", e))
}

/// Runs a parsed command. `Ok(false)` means a suite failed.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<bool> {
    match &cli.command {
        Command::Run(a) => {
            let cfg = a.resolve()?;
            let s = experiment::run_train(&cfg)?;
            writeln!(
                stdout,
                "final accuracy {:.2}% after {} epochs; artifacts in {}",
                s.final_accuracy,
                s.epochs.len(),
                cfg.output.display()
            )
            .map_err(|e| Error::io("<stdout>", e))?;
            Ok(true)
        }
        Command::Cost(a) => cost(a, stdout).map(|_| true),
        Command::Conformance(a) => conformance_cmd(a, stdout),
        Command::Summarize(a) => {
            let rows = summarize::summarize(&summarize::read_summaries(&a.runs)?);
            emit(a.out.as_deref(), &summarize::to_csv(&rows)?, stdout).map(|_| true)
        }
        Command::DumpFormats(a) => dump_formats(a, stdout).map(|_| true),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli, &mut stdout) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: conformance suites failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
