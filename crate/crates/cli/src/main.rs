mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use fairltr::fairlp::FairnessMode;

use crate::config::ConfigFile;

#[derive(Parser, Debug)]
#[command(
    name = "fairltr",
    version,
    about = "Fair learning to rank with SPO+ training through a fairness-constrained LP"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Parse a LETOR file and assign protected groups.
    Ingest(IngestArgs),
    /// Simulate position-biased clicks on a dataset.
    Simulate(SimulateArgs),
    /// Train a scorer with the SPO+ loss.
    Train(TrainArgs),
    /// Evaluate a trained scorer.
    Eval(EvalArgs),
    /// Train and evaluate across a grid of fairness tolerances.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    /// key=value file with defaults for any flag; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for query-level parallelism (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct FairnessArgs {
    /// Fairness mode: none, unweighted or merit.
    #[arg(long)]
    pub mode: Option<FairnessMode>,
    /// Tolerance δ, either one value or a comma-separated per-group list.
    #[arg(long)]
    pub delta: Option<DeltaArg>,
    /// Position-bias power p in v_j = 1/(1+j)^p.
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct OptimArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Click log; when given, training uses IPS relevance estimates.
    #[arg(long)]
    pub clicks: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    /// Number of protected groups.
    #[arg(long)]
    pub groups: Option<usize>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// 1-based feature id whose quantiles define the groups.
    #[arg(long)]
    pub group_feature: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Standard deviation of the logging ranker's score noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub fairness: FairnessArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub fairness: FairnessArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model checkpoint written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also write every query's policy matrix.
    #[arg(long)]
    pub policies: bool,
}

#[derive(Args, Debug, Default, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated fairness modes.
    #[arg(long)]
    pub mode: Option<ModeList>,
    /// Inclusive grid start:end:step.
    #[arg(long)]
    pub deltas: Option<DeltaRange>,
    #[arg(long)]
    pub p: Option<f64>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out dataset for evaluation; defaults to the training data.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaArg(pub Vec<f64>);

impl FromStr for DeltaArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let values = s
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| format!("bad delta {x:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if values.iter().any(|d| d.is_nan() || *d < 0.0) {
            return Err("delta must be >= 0".into());
        }
        Ok(Self(values))
    }
}

impl fmt::Display for DeltaArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeList(pub Vec<FairnessMode>);

impl FromStr for ModeList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|m| m.trim().parse::<FairnessMode>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }
}

impl fmt::Display for ModeList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|m| m.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaRange {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl DeltaRange {
    /// Grid points from `start` to `end` inclusive.
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

impl FromStr for DeltaRange {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err("expected start:end:step".into());
        }
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("bad number {x:?}: {e}"));
        let (start, end, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step.is_nan() || step <= 0.0 || start < 0.0 || end < start {
            return Err("need 0 <= start <= end and step > 0".into());
        }
        Ok(Self { start, end, step })
    }
}

impl fmt::Display for DeltaRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.end, self.step)
    }
}

impl CommonArgs {
    fn load_config(&self) -> Result<ConfigFile> {
        match &self.config {
            Some(path) => ConfigFile::load(path),
            None => Ok(ConfigFile::default()),
        }
    }

    fn apply(&mut self, cfg: &ConfigFile) -> Result<()> {
        cfg.fill(&mut self.seed, "seed")?;
        cfg.fill(&mut self.workers, "workers")?;
        cfg.fill(&mut self.out_dir, "out-dir")
    }
}

impl FairnessArgs {
    fn apply(&mut self, cfg: &ConfigFile) -> Result<()> {
        cfg.fill(&mut self.mode, "mode")?;
        cfg.fill(&mut self.delta, "delta")?;
        cfg.fill(&mut self.p, "p")
    }
}

impl OptimArgs {
    fn apply(&mut self, cfg: &ConfigFile) -> Result<()> {
        cfg.fill(&mut self.lr, "lr")?;
        cfg.fill(&mut self.batch, "batch")?;
        cfg.fill(&mut self.epochs, "epochs")?;
        cfg.fill(&mut self.clicks, "clicks")
    }
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Gen(a) => &a.common,
            Command::Ingest(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Sweep(a) => &a.common,
        }
    }

    /// Fills flags that were not given from the `--config` file.
    fn resolve(&mut self) -> Result<()> {
        let cfg = self.common().load_config()?;
        match self {
            Command::Gen(a) => {
                a.common.apply(&cfg)?;
                cfg.fill(&mut a.queries, "queries")?;
                cfg.fill(&mut a.items, "items")?;
                cfg.fill(&mut a.features, "features")?;
                cfg.fill(&mut a.groups, "groups")?;
            }
            Command::Ingest(a) => {
                a.common.apply(&cfg)?;
                cfg.fill(&mut a.data, "data")?;
                cfg.fill(&mut a.group_feature, "group-feature")?;
                cfg.fill(&mut a.groups, "groups")?;
            }
            Command::Simulate(a) => {
                a.common.apply(&cfg)?;
                cfg.fill(&mut a.data, "data")?;
                cfg.fill(&mut a.sweeps, "sweeps")?;
                cfg.fill(&mut a.noise, "noise")?;
                cfg.fill(&mut a.p, "p")?;
            }
            Command::Train(a) => {
                a.common.apply(&cfg)?;
                a.fairness.apply(&cfg)?;
                a.optim.apply(&cfg)?;
                cfg.fill(&mut a.data, "data")?;
            }
            Command::Eval(a) => {
                a.common.apply(&cfg)?;
                a.fairness.apply(&cfg)?;
                cfg.fill(&mut a.data, "data")?;
                cfg.fill(&mut a.model, "model")?;
            }
            Command::Sweep(a) => {
                a.common.apply(&cfg)?;
                a.optim.apply(&cfg)?;
                cfg.fill(&mut a.mode, "mode")?;
                cfg.fill(&mut a.deltas, "deltas")?;
                cfg.fill(&mut a.p, "p")?;
                cfg.fill(&mut a.data, "data")?;
                cfg.fill(&mut a.test, "test")?;
            }
        }
        Ok(())
    }
}

fn run(mut cli: Cli) -> Result<()> {
    cli.command.resolve()?;
    let workers = cli.command.common().workers.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    pool.install(|| match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
    })
}

pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    match value {
        Some(v) => Ok(v.clone()),
        None => bail!("missing required option --{flag}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_range_is_inclusive() {
        let r: DeltaRange = "0:0.4:0.05".parse().unwrap();
        let v = r.values();
        assert_eq!(v.len(), 9);
        assert_eq!(v[3], 0.15);
        assert_eq!(*v.last().unwrap(), 0.4);
        assert!("0:0.4".parse::<DeltaRange>().is_err());
        assert!("0.4:0:0.1".parse::<DeltaRange>().is_err());
    }

    #[test]
    fn delta_lists() {
        assert_eq!("0.1".parse::<DeltaArg>().unwrap(), DeltaArg(vec![0.1]));
        assert_eq!("0.1, 0.2".parse::<DeltaArg>().unwrap(), DeltaArg(vec![0.1, 0.2]));
        assert!("-1".parse::<DeltaArg>().is_err());
    }

    #[test]
    fn mode_lists() {
        let m: ModeList = "unweighted,merit".parse().unwrap();
        assert_eq!(m.0, vec![FairnessMode::Unweighted, FairnessMode::MeritWeighted]);
        assert!("fair".parse::<ModeList>().is_err());
    }
}
