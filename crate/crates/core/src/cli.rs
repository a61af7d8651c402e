//! `groupbal` command line: data generation, training, comparisons, c-sweeps.
//!
//! Exit codes: 0 success, 1 I/O, 2 invalid input, 3 divergence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balancer::Strategy;
use crate::data_synth::{self, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::group_state::ControllingVector;
use crate::models::{Activation, ModelKind, ModelSpec};
use crate::train::{self, TrainConfig, TrainReport};

/// Model architecture; input width and class count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelChoice {
    pub kind: ModelKind,
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for ModelChoice {
    fn default() -> Self {
        Self {
            kind: ModelKind::LinearSoftmax,
            hidden: 16,
            activation: Activation::Relu,
        }
    }
}

/// One JSON document describing data, model, training and output.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Generated on the fly when `dataset` is absent.
    pub synthetic: Option<SyntheticSpec>,
    /// Path of a file written by `gen-data`.
    pub dataset: Option<PathBuf>,
    pub data_seed: u64,
    pub model: ModelChoice,
    pub train: TrainConfig,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.synthetic.is_some() && self.dataset.is_some() {
            return Err(Error::invalid("dataset", "give either synthetic or dataset, not both"));
        }
        if self.dataset.is_none() {
            self.synthetic_spec().validate()?;
        }
        self.train.validate()?;
        if self.model.kind == ModelKind::Mlp1 && self.model.hidden == 0 {
            return Err(Error::invalid("model.hidden", "must be >= 1 for mlp1"));
        }
        if self.dataset.is_none() {
            self.train.control_for(data_synth::NUM_GROUPS)?;
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        self.synthetic.clone().unwrap_or_default()
    }

    /// Loads or generates the dataset; `seed` overrides `data_seed`.
    pub fn dataset(&self, seed: Option<u64>) -> Result<Dataset> {
        match &self.dataset {
            Some(p) => Dataset::load(p),
            None => data_synth::generate(&self.synthetic_spec(), seed.unwrap_or(self.data_seed)),
        }
    }

    pub fn model_spec(&self, data: &Dataset) -> ModelSpec {
        let classes = data.train.labels().iter().copied().max().unwrap_or(0).max(1) + 1;
        ModelSpec {
            kind: self.model.kind,
            feature_dim: data.train.feature_dim(),
            classes,
            hidden: self.model.hidden,
            activation: self.model.activation,
        }
    }
}

#[derive(Parser)]
#[command(name = "groupbal", version, about = "Group-balanced training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset file.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one model and write report.json and trajectory.csv.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every strategy on every seed and write summary.csv.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once per controlling vector and write pivot.csv.
    SweepC {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Semicolon-separated vectors, e.g. "1,1,1,1;1,1,1,2".
        #[arg(long = "c-vectors")]
        c_vectors: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::invalid("out", "no output directory (use --out or set \"out\")"))?;
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn report_json(r: &TrainReport) -> String {
    let mut s = serde_json::to_string_pretty(r).expect("report serialization cannot fail");
    s.push('\n');
    s
}

/// Parses `"1,1,1,1;1,1,1,2"`.
pub fn parse_c_vectors(text: &str) -> Result<Vec<ControllingVector>> {
    let mut out = Vec::new();
    for (i, part) in text.split(';').enumerate() {
        let values = part
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| {
                    Error::invalid(format!("c-vectors[{i}]"), format!("'{}' is not a number", v.trim()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let c = ControllingVector::new(values)
            .map_err(|e| Error::invalid(format!("c-vectors[{i}]"), e.to_string()))?;
        out.push(c);
    }
    Ok(out)
}

fn parse_strategies(names: &[String]) -> Result<Vec<Strategy>> {
    names.iter().map(|n| n.parse()).collect()
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("GROUPBAL_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::invalid("GROUPBAL_THREADS", format!("'{v}' is not a positive integer")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::invalid("GROUPBAL_THREADS", e.to_string()))
}

fn gen_data(config: Option<PathBuf>, out: PathBuf, seed: u64) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    if cfg.dataset.is_some() {
        return Err(Error::invalid("dataset", "gen-data needs a synthetic spec, not a dataset path"));
    }
    let data = data_synth::generate(&cfg.synthetic_spec(), seed)?;
    data.save(&out)?;
    for (name, b) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        let counts: Vec<String> = b.group_counts().iter().map(|c| c.to_string()).collect();
        println!("{name}: {}", counts.join(" "));
    }
    Ok(())
}

fn cmd_train(config: Option<PathBuf>, strategy: Option<String>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(s) = strategy {
        cfg.train.strategy = s.parse()?;
    }
    let dir = out_dir(out, &cfg)?;
    let data = cfg.dataset(None)?;
    let spec = cfg.model_spec(&data);
    let report = train::fit(&spec, &data, &cfg.train)?;
    write_file(&dir.join("report.json"), &report_json(&report))?;
    write_file(&dir.join("trajectory.csv"), &train::trajectory_csv(&report))?;
    println!(
        "test worst={:.4} avg={:.4} mean={:.4}",
        report.test.worst, report.test.weighted_average, report.test.mean
    );
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `summary.csv`: one row per run, then one `mean±std` row per strategy.
pub fn summary_csv(runs: &[(Strategy, u64, TrainReport)], strategies: &[Strategy]) -> String {
    let mut out = String::from("strategy,seed,worst,avg,mean,final_loss_gap,best_epoch\n");
    for (s, seed, r) in runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.name(),
            seed,
            r.test.worst,
            r.test.weighted_average,
            r.test.mean,
            r.final_loss_gap,
            r.best_epoch
        );
    }
    for s in strategies {
        let mine: Vec<&TrainReport> = runs.iter().filter(|(t, _, _)| t == s).map(|(_, _, r)| r).collect();
        if mine.is_empty() {
            continue;
        }
        let cols: [Vec<f64>; 5] = [
            mine.iter().map(|r| r.test.worst).collect(),
            mine.iter().map(|r| r.test.weighted_average).collect(),
            mine.iter().map(|r| r.test.mean).collect(),
            mine.iter().map(|r| r.final_loss_gap).collect(),
            mine.iter().map(|r| r.best_epoch as f64).collect(),
        ];
        out.push_str(s.name());
        out.push_str(",all");
        for c in &cols {
            let (m, sd) = mean_std(c);
            let _ = write!(out, ",{m}±{sd}");
        }
        out.push('\n');
    }
    out
}

fn cmd_compare(
    config: Option<PathBuf>,
    strategies: Vec<String>,
    seeds: Vec<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    let strategies = parse_strategies(&strategies)?;
    let dir = out_dir(out, &cfg)?;
    let jobs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let pool = thread_pool()?;
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(strategy, seed)| {
                let data = cfg.dataset(Some(seed))?;
                let spec = cfg.model_spec(&data);
                let tc = TrainConfig {
                    strategy,
                    seed,
                    ..cfg.train.clone()
                };
                let report = train::fit(&spec, &data, &tc).inspect_err(|e| {
                    eprintln!("error: {strategy} seed {seed}: {e}");
                })?;
                let path = dir.join(format!("{}-seed{seed}.json", strategy.name()));
                write_file(&path, &report_json(&report))?;
                Ok((strategy, seed, report))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summary_csv(&runs, &strategies);
    write_file(&dir.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn format_c(c: &ControllingVector) -> String {
    c.as_slice().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// `pivot.csv`: controlling vector against per-group test accuracy.
pub fn pivot_csv(reports: &[TrainReport]) -> String {
    let k = reports.first().map_or(0, |r| r.test.per_group_accuracy.len());
    let mut out = String::from("c");
    for g in 0..k {
        let _ = write!(out, ",acc_g{g}");
    }
    out.push_str(",worst,avg,mean\n");
    for r in reports {
        let c = r.config.control.as_ref().map(format_c).unwrap_or_default();
        out.push_str(&c);
        for a in &r.test.per_group_accuracy {
            let _ = write!(out, ",{a}");
        }
        let _ = writeln!(out, ",{},{},{}", r.test.worst, r.test.weighted_average, r.test.mean);
    }
    out
}

fn cmd_sweep_c(config: Option<PathBuf>, c_vectors: String, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    let cs = parse_c_vectors(&c_vectors)?;
    let dir = out_dir(out, &cfg)?;
    let data = cfg.dataset(None)?;
    let k = data.train.num_groups();
    if let Some((i, c)) = cs.iter().enumerate().find(|(_, c)| c.len() != k) {
        return Err(Error::invalid(
            format!("c-vectors[{i}]"),
            format!("has {} entries, data has {k} groups", c.len()),
        ));
    }
    let spec = cfg.model_spec(&data);
    let pool = thread_pool()?;
    let reports = pool.install(|| train::sweep_control(&spec, &data, &cfg.train, &cs))?;
    for (i, r) in reports.iter().enumerate() {
        write_file(&dir.join(format!("report-c{i}.json")), &report_json(r))?;
    }
    let pivot = pivot_csv(&reports);
    write_file(&dir.join("pivot.csv"), &pivot)?;
    print!("{pivot}");
    Ok(())
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::GenData { config, out, seed } => gen_data(config, out, seed),
        Command::Train { config, strategy, out } => cmd_train(config, strategy, out),
        Command::Compare {
            config,
            strategies,
            seeds,
            out,
        } => cmd_compare(config, strategies, seeds, out),
        Command::SweepC { config, c_vectors, out } => cmd_sweep_c(config, c_vectors, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
