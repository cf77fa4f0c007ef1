use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use fairltr::clicksim::{simulate_query, ClickLog, ClickSimConfig};
use fairltr::datasets::{assign_groups, generate_synthetic, merit_weights, parse_letor, QuerySet};
use fairltr::evalmetrics::{delta_fairness_confidence, pairwise_disparity, QueryPolicy};
use fairltr::fairlp::{position_bias, FairnessMode, FairnessSpec, SolverCache};
use fairltr::scorer::{init_network, load_checkpoint, save_checkpoint, ModelParams};
use fairltr::spotrain::{
    evaluate, evaluate_queries, summarize, train as run_training, EpochMetrics, InfoMode, QueryEvaluation, TrainConfig,
    TrainingSet,
};
use fairltr::Error;

use crate::config::Manifest;
use crate::{
    required, CommonArgs, DeltaArg, DeltaRange, EvalArgs, FairnessArgs, GenArgs, IngestArgs, ModeList, OptimArgs,
    SimulateArgs, SweepArgs, TrainArgs,
};

const DEFAULT_LR: f64 = 1e-5;
const DEFAULT_BATCH: usize = 64;
const DEFAULT_EPOCHS: usize = 10;
const DEFAULT_DELTA: f64 = 0.1;

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

struct Loaded<T> {
    value: T,
    sha256: String,
}

fn load_dataset(path: &Path) -> Result<Loaded<QuerySet>> {
    let bytes = fs::read(path).with_context(|| format!("reading dataset {}", path.display()))?;
    let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let value = parse_letor(&text).with_context(|| format!("parsing dataset {}", path.display()))?;
    Ok(Loaded {
        sha256: sha256_hex(text.as_bytes()),
        value,
    })
}

fn load_clicks(path: &Path) -> Result<Loaded<ClickLog>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading click log {}", path.display()))?;
    let value = ClickLog::parse(&text).with_context(|| format!("parsing click log {}", path.display()))?;
    Ok(Loaded {
        sha256: sha256_hex(text.as_bytes()),
        value,
    })
}

fn out_dir(common: &CommonArgs) -> Result<PathBuf> {
    let dir = common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(path)
}

fn write_manifest(dir: &Path, command: &str, manifest: &Manifest) -> Result<()> {
    write(dir, &format!("manifest-{command}.txt"), &manifest.render()).map(|_| ())
}

fn fairness_spec(args: &FairnessArgs, num_groups: usize) -> Result<FairnessSpec<f64>> {
    let mode = args.mode.unwrap_or(FairnessMode::Unweighted);
    let delta = args.delta.clone().unwrap_or(DeltaArg(vec![DEFAULT_DELTA]));
    if delta.0.len() > 1 && delta.0.len() != num_groups {
        bail!(
            "--delta lists {} values but the dataset has {num_groups} groups",
            delta.0.len()
        );
    }
    let spec = FairnessSpec::per_group(mode, delta.0, args.p.unwrap_or(1.0));
    spec.validate()?;
    Ok(spec)
}

fn record_common(m: &mut Manifest, common: &CommonArgs, dir: &Path) {
    m.set("seed", common.seed.unwrap_or(0));
    m.set("out-dir", dir.display());
}

fn record_fairness(m: &mut Manifest, spec: &FairnessSpec<f64>) {
    m.set("mode", spec.mode);
    m.set("delta", DeltaArg(spec.delta.clone()));
    m.set("p", spec.p);
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let dir = out_dir(&a.common)?;
    let (queries, items, features, groups) = (
        a.queries.unwrap_or(100),
        a.items.unwrap_or(20),
        a.features.unwrap_or(16),
        a.groups.unwrap_or(2),
    );
    let seed = a.common.seed.unwrap_or(0);
    let qs = generate_synthetic(queries, items, features, groups, seed)?;
    let text = qs.to_letor();
    write(&dir, "dataset.txt", &text)?;
    let mut m = Manifest::new("gen");
    record_common(&mut m, &a.common, &dir);
    m.set("queries", queries);
    m.set("items", items);
    m.set("features", features);
    m.set("groups", groups);
    m.set("dataset-sha256", sha256_hex(text.as_bytes()));
    write_manifest(&dir, "gen", &m)
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let dir = out_dir(&a.common)?;
    let data = required(&a.data, "data")?;
    let input = load_dataset(&data)?;
    let mut m = Manifest::new("ingest");
    record_common(&mut m, &a.common, &dir);
    m.set("data", data.display());
    m.set("dataset-sha256", &input.sha256);
    let qs = match a.group_feature {
        Some(fid) => {
            if fid == 0 {
                bail!("--group-feature is 1-based");
            }
            let groups = a.groups.unwrap_or(2);
            m.set("group-feature", fid);
            m.set("groups", groups);
            assign_groups(&input.value, fid - 1, groups)?
        }
        None => input.value,
    };
    write(&dir, "dataset.txt", &qs.to_letor())?;
    info!(
        "{} queries, {} items, {} groups",
        qs.len(),
        qs.num_items(),
        qs.num_groups
    );
    write_manifest(&dir, "ingest", &m)
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let dir = out_dir(&a.common)?;
    let data = required(&a.data, "data")?;
    let input = load_dataset(&data)?;
    let cfg = ClickSimConfig {
        sweeps: a.sweeps.unwrap_or(100),
        noise: a.noise.unwrap_or(0.5),
        p: a.p.unwrap_or(1.0),
        seed: a.common.seed.unwrap_or(0),
    };
    if cfg.sweeps == 0 || cfg.noise.is_nan() || cfg.noise < 0.0 || cfg.p.is_nan() || cfg.p <= 0.0 {
        bail!("need --sweeps >= 1, --noise >= 0 and --p > 0");
    }
    let per_query: Vec<_> = input
        .value
        .queries
        .par_iter()
        .map(|q| simulate_query(q, &cfg))
        .collect();
    let log = ClickLog {
        entries: per_query.into_iter().flatten().collect(),
    };
    write(&dir, "clicks.txt", &log.to_text())?;
    let mut m = Manifest::new("simulate");
    record_common(&mut m, &a.common, &dir);
    m.set("data", data.display());
    m.set("dataset-sha256", &input.sha256);
    m.set("sweeps", cfg.sweeps);
    m.set("noise", cfg.noise);
    m.set("p", cfg.p);
    write_manifest(&dir, "simulate", &m)
}

fn train_config(optim: &OptimArgs, spec: FairnessSpec<f64>, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: optim.lr.unwrap_or(DEFAULT_LR),
        batch: optim.batch.unwrap_or(DEFAULT_BATCH),
        epochs: optim.epochs.unwrap_or(DEFAULT_EPOCHS),
        spec,
        seed,
        info: if optim.clicks.is_some() {
            InfoMode::Partial
        } else {
            InfoMode::Full
        },
    }
}

fn record_optim(m: &mut Manifest, cfg: &TrainConfig, clicks: Option<&(PathBuf, Loaded<ClickLog>)>) {
    m.set("lr", cfg.lr);
    m.set("batch", cfg.batch);
    m.set("epochs", cfg.epochs);
    if let Some((path, log)) = clicks {
        m.set("clicks", path.display());
        m.set("clicks-sha256", &log.sha256);
    }
}

fn training_set<'a>(
    qs: &'a QuerySet,
    clicks: Option<&(PathBuf, Loaded<ClickLog>)>,
    spec: &FairnessSpec<f64>,
) -> Result<TrainingSet<'a>, Error> {
    match clicks {
        Some((_, log)) => TrainingSet::partial(qs, &log.value, spec),
        None => TrainingSet::full(qs, spec),
    }
}

fn fit(
    set: &TrainingSet<'_>,
    qs: &QuerySet,
    cfg: &TrainConfig,
) -> Result<(ModelParams<f64>, Vec<EpochMetrics>), Error> {
    let mut params = init_network::<f64>(qs.feature_dim, cfg.seed)?;
    let mut history = vec![evaluate(0, &params, qs, &cfg.spec, set.cache())?];
    history.extend(run_training(set, &mut params, cfg, |m| {
        info!(
            "epoch {}: regret {:.6}, expected DCG {:.6} of {:.6}",
            m.epoch, m.mean_regret, m.mean_expected_dcg, m.mean_optimal_dcg
        )
    })?);
    Ok((params, history))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let dir = out_dir(&a.common)?;
    let data = required(&a.data, "data")?;
    let input = load_dataset(&data)?;
    let qs = &input.value;
    let spec = fairness_spec(&a.fairness, qs.num_groups)?;
    let seed = a.common.seed.unwrap_or(0);
    let cfg = train_config(&a.optim, spec.clone(), seed);
    let clicks = match &a.optim.clicks {
        Some(p) => Some((p.clone(), load_clicks(p)?)),
        None => None,
    };
    let set = training_set(qs, clicks.as_ref(), &spec).context("building training problems")?;
    let (params, history) = fit(&set, qs, &cfg).context("training")?;

    let mut csv = format!("{}\n", EpochMetrics::CSV_HEADER);
    for m in &history {
        let _ = writeln!(csv, "{}", m.csv_row());
    }
    write(&dir, "metrics.csv", &csv)?;
    let mut ckpt = Vec::new();
    save_checkpoint(&params, &mut ckpt)?;
    fs::write(dir.join("model.ckpt"), &ckpt).context("writing model.ckpt")?;
    info!("wrote {}", dir.join("model.ckpt").display());

    let mut m = Manifest::new("train");
    record_common(&mut m, &a.common, &dir);
    m.set("data", data.display());
    m.set("dataset-sha256", &input.sha256);
    record_fairness(&mut m, &spec);
    record_optim(&mut m, &cfg, clicks.as_ref());
    m.set("model-sha256", sha256_hex(&ckpt));
    write_manifest(&dir, "train", &m)
}

struct Evaluation {
    per_query: Vec<QueryEvaluation>,
    metrics: EpochMetrics,
    confidence: f64,
    disparities: Vec<Option<f64>>,
}

fn evaluate_all(params: &ModelParams<f64>, qs: &QuerySet, spec: &FairnessSpec<f64>) -> Result<Evaluation, Error> {
    let cache = SolverCache::new();
    let per_query = evaluate_queries(params, qs, spec, &cache)?;
    let merits: Vec<_> = qs
        .queries
        .iter()
        .map(|q| merit_weights(&q.relevances, &q.groups, qs.num_groups))
        .collect();
    let views: Vec<QueryPolicy<'_, f64>> = per_query
        .iter()
        .zip(&qs.queries)
        .zip(&merits)
        .map(|((e, q), m)| QueryPolicy {
            policy: &e.policy,
            groups: &q.groups,
            merit: Some(m),
        })
        .collect();
    let confidence = delta_fairness_confidence(&views, spec)?;
    let disparities = per_query
        .iter()
        .zip(&qs.queries)
        .map(|(e, q)| pairwise_disparity(&e.policy, &q.groups, &position_bias(q.len(), spec.p)).ok())
        .collect();
    Ok(Evaluation {
        metrics: summarize(0, &per_query),
        per_query,
        confidence,
        disparities,
    })
}

fn mean_disparity(d: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = d.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let dir = out_dir(&a.common)?;
    let data = required(&a.data, "data")?;
    let model = required(&a.model, "model")?;
    let input = load_dataset(&data)?;
    let qs = &input.value;
    let bytes = fs::read(&model).with_context(|| format!("reading model {}", model.display()))?;
    let params: ModelParams<f64> = load_checkpoint(bytes.as_slice()).context("loading model")?;
    if params.input_dim() != qs.feature_dim {
        bail!(
            "model expects {} features but the dataset has {}",
            params.input_dim(),
            qs.feature_dim
        );
    }
    let spec = fairness_spec(&a.fairness, qs.num_groups)?;
    let ev = evaluate_all(&params, qs, &spec).context("evaluating")?;

    let mut rows = String::from("qid,n,expected_dcg,optimal_dcg,regret");
    for g in 0..qs.num_groups {
        let _ = write!(rows, ",nu_{g}");
    }
    rows.push_str(",pairwise_disparity\n");
    for ((q, e), d) in qs.queries.iter().zip(&ev.per_query).zip(&ev.disparities) {
        let _ = write!(
            rows,
            "{},{},{},{},{}",
            q.id,
            q.len(),
            e.expected_dcg,
            e.optimal_dcg,
            e.regret
        );
        for g in 0..qs.num_groups {
            let _ = write!(rows, ",{}", opt_cell(e.violations.get(g).copied().flatten()));
        }
        let _ = writeln!(rows, ",{}", opt_cell(*d));
    }
    write(&dir, "eval_queries.csv", &rows)?;

    let m = &ev.metrics;
    let summary = format!(
        "queries,mean_expected_dcg,mean_optimal_dcg,mean_regret,mean_abs_violation,max_abs_violation,confidence,mean_pairwise_disparity\n{},{},{},{},{},{},{},{}\n",
        qs.len(),
        m.mean_expected_dcg,
        m.mean_optimal_dcg,
        m.mean_regret,
        m.mean_abs_violation,
        m.max_abs_violation,
        ev.confidence,
        opt_cell(mean_disparity(&ev.disparities))
    );
    write(&dir, "eval_summary.csv", &summary)?;
    info!(
        "confidence {:.4}, mean expected DCG {:.6}",
        ev.confidence, m.mean_expected_dcg
    );

    if a.policies {
        let mut out = String::from("qid,item,position,probability\n");
        for (q, e) in qs.queries.iter().zip(&ev.per_query) {
            let pm = e.policy.matrix();
            for i in 0..pm.rows() {
                for j in 0..pm.cols() {
                    if pm[(i, j)] > 1e-12 {
                        let _ = writeln!(out, "{},{i},{j},{}", q.id, pm[(i, j)]);
                    }
                }
            }
        }
        write(&dir, "policies.csv", &out)?;
    }

    let mut man = Manifest::new("eval");
    record_common(&mut man, &a.common, &dir);
    man.set("data", data.display());
    man.set("dataset-sha256", &input.sha256);
    man.set("model", model.display());
    man.set("model-sha256", sha256_hex(&bytes));
    record_fairness(&mut man, &spec);
    write_manifest(&dir, "eval", &man)
}

pub const SWEEP_HEADER: &str = "seed,mode,delta,status,min_feasible_delta,mean_expected_dcg,mean_optimal_dcg,mean_regret,mean_abs_violation,max_abs_violation,confidence";

pub const RESULTS_HEADER: &str = "seed,mode,delta,metric,value";

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let dir = out_dir(&a.common)?;
    let data = required(&a.data, "data")?;
    let input = load_dataset(&data)?;
    let qs = &input.value;
    let test = match &a.test {
        Some(p) => Some(load_dataset(p)?),
        None => None,
    };
    let eval_qs = test.as_ref().map_or(qs, |t| &t.value);
    if eval_qs.feature_dim != qs.feature_dim {
        bail!(
            "test data has {} features, training data {}",
            eval_qs.feature_dim,
            qs.feature_dim
        );
    }
    let clicks = match &a.optim.clicks {
        Some(p) => Some((p.clone(), load_clicks(p)?)),
        None => None,
    };
    let modes = a.mode.clone().unwrap_or(ModeList(vec![FairnessMode::Unweighted]));
    let grid = a.deltas.unwrap_or(DeltaRange {
        start: 0.0,
        end: 0.4,
        step: 0.05,
    });
    let p = a.p.unwrap_or(1.0);
    let seed = a.common.seed.unwrap_or(0);

    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut tidy = format!("{RESULTS_HEADER}\n");
    for &mode in &modes.0 {
        for delta in grid.values() {
            let spec = FairnessSpec::new(mode, delta, p);
            let cfg = train_config(&a.optim, spec.clone(), seed);
            let outcome = training_set(qs, clicks.as_ref(), &spec)
                .and_then(|set| fit(&set, qs, &cfg))
                .and_then(|(params, _)| evaluate_all(&params, eval_qs, &spec));
            match outcome {
                Ok(ev) => {
                    let m = &ev.metrics;
                    info!(
                        "{mode} δ={delta}: expected DCG {:.6}, confidence {}",
                        m.mean_expected_dcg, ev.confidence
                    );
                    let _ = writeln!(
                        csv,
                        "{seed},{mode},{delta},ok,,{},{},{},{},{},{}",
                        m.mean_expected_dcg,
                        m.mean_optimal_dcg,
                        m.mean_regret,
                        m.mean_abs_violation,
                        m.max_abs_violation,
                        ev.confidence
                    );
                    for (name, value) in [
                        ("mean_expected_dcg", m.mean_expected_dcg),
                        ("mean_optimal_dcg", m.mean_optimal_dcg),
                        ("mean_regret", m.mean_regret),
                        ("mean_abs_violation", m.mean_abs_violation),
                        ("max_abs_violation", m.max_abs_violation),
                        ("confidence", ev.confidence),
                    ] {
                        let _ = writeln!(tidy, "{seed},{mode},{delta},{name},{value}");
                    }
                }
                Err(Error::Infeasible { min_feasible_delta }) => {
                    info!("{mode} δ={delta}: infeasible, minimal feasible delta {min_feasible_delta:.6}");
                    let _ = writeln!(csv, "{seed},{mode},{delta},infeasible,{min_feasible_delta},,,,,,");
                    let _ = writeln!(tidy, "{seed},{mode},{delta},min_feasible_delta,{min_feasible_delta}");
                }
                Err(e) => return Err(e).with_context(|| format!("mode {mode}, delta {delta}")),
            }
        }
    }
    write(&dir, "tradeoff.csv", &csv)?;
    write(&dir, "results.csv", &tidy)?;

    let mut m = Manifest::new("sweep");
    record_common(&mut m, &a.common, &dir);
    m.set("data", data.display());
    m.set("dataset-sha256", &input.sha256);
    if let (Some(path), Some(t)) = (&a.test, &test) {
        m.set("test", path.display());
        m.set("test-sha256", &t.sha256);
    }
    m.set("mode", &modes);
    m.set("deltas", grid);
    m.set("p", p);
    record_optim(
        &mut m,
        &train_config(&a.optim, FairnessSpec::unconstrained(), seed),
        clicks.as_ref(),
    );
    write_manifest(&dir, "sweep", &m)
}
