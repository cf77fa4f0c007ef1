//! Ranking datasets: LETOR ingestion, quantile group assignment, a synthetic
//! generator and merit weights.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub id: u64,
    /// n × k item features.
    pub features: Matrix<f64>,
    pub groups: Vec<usize>,
    pub relevances: Vec<f64>,
}

impl Query {
    pub fn new(id: u64, features: Matrix<f64>, groups: Vec<usize>, relevances: Vec<f64>) -> Result<Self> {
        let q = Self {
            id,
            features,
            groups,
            relevances,
        };
        q.validate(usize::MAX)?;
        Ok(q)
    }

    pub fn len(&self) -> usize {
        self.relevances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevances.is_empty()
    }

    fn validate(&self, num_groups: usize) -> Result<()> {
        let n = self.relevances.len();
        if n == 0 {
            return Err(Error::InvalidArgument(format!("query {} has no items", self.id)));
        }
        if self.features.rows() != n || self.groups.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.features.rows().min(self.groups.len()),
            });
        }
        if self.relevances.iter().any(|&y| !(y >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "query {} has a negative relevance",
                self.id
            )));
        }
        if self.groups.iter().any(|&g| g >= num_groups) {
            return Err(Error::InvalidArgument(format!(
                "query {} has a group label >= {num_groups}",
                self.id
            )));
        }
        Ok(())
    }
}

/// How a dataset's group labels were obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupSource {
    /// Quantile buckets of a feature, stored as its 1-based LETOR id.
    Feature(usize),
    Explicit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet {
    pub queries: Vec<Query>,
    pub num_groups: usize,
    pub feature_dim: usize,
    pub group_source: GroupSource,
}

impl QuerySet {
    pub fn new(queries: Vec<Query>, num_groups: usize, feature_dim: usize) -> Result<Self> {
        let qs = Self {
            queries,
            num_groups,
            feature_dim,
            group_source: GroupSource::Explicit,
        };
        qs.validate()?;
        Ok(qs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.queries.is_empty() {
            return Err(Error::EmptyInput);
        }
        for q in &self.queries {
            q.validate(self.num_groups)?;
            if q.features.cols() != self.feature_dim {
                return Err(Error::Dimension {
                    expected: self.feature_dim,
                    got: q.features.cols(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn num_items(&self) -> usize {
        self.queries.iter().map(Query::len).sum()
    }

    /// LETOR lines preceded by `#groups` and `#num_groups` headers; every line
    /// carries its group label in a trailing `# group=<g>` comment.
    pub fn to_letor(&self) -> String {
        let mut out = String::new();
        match self.group_source {
            GroupSource::Feature(fid) => {
                let _ = writeln!(out, "#groups {fid}");
            }
            GroupSource::Explicit => out.push_str("#groups explicit\n"),
        }
        let _ = writeln!(out, "#num_groups {}", self.num_groups);
        for q in &self.queries {
            for i in 0..q.len() {
                let _ = write!(out, "{} qid:{}", q.relevances[i], q.id);
                for (f, x) in q.features.row(i).iter().enumerate() {
                    let _ = write!(out, " {}:{}", f + 1, x);
                }
                let _ = writeln!(out, " # group={}", q.groups[i]);
            }
        }
        out
    }

    /// Z-scores every feature column over all items. Constant columns are centred only.
    pub fn standardize(&mut self) {
        let k = self.feature_dim;
        let total = self.num_items() as f64;
        let mut mean = vec![0.0; k];
        let mut sq = vec![0.0; k];
        for q in &self.queries {
            for i in 0..q.len() {
                for (f, &x) in q.features.row(i).iter().enumerate() {
                    mean[f] += x;
                    sq[f] += x * x;
                }
            }
        }
        let sd: Vec<f64> = (0..k)
            .map(|f| {
                mean[f] /= total;
                (sq[f] / total - mean[f] * mean[f]).max(0.0).sqrt()
            })
            .collect();
        for q in &mut self.queries {
            for i in 0..q.relevances.len() {
                for (f, x) in q.features.row_mut(i).iter_mut().enumerate() {
                    *x -= mean[f];
                    if sd[f] > 0.0 {
                        *x /= sd[f];
                    }
                }
            }
        }
    }
}

struct ParsedLine {
    relevance: f64,
    qid: u64,
    features: Vec<(usize, f64)>,
    group: Option<usize>,
}

fn parse_line(line: &str, lineno: usize) -> Result<ParsedLine> {
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let (body, comment) = match line.find('#') {
        Some(p) => (&line[..p], Some(&line[p + 1..])),
        None => (line, None),
    };
    let mut tokens = body.split_whitespace();
    let label = tokens.next().ok_or_else(|| err("missing relevance".into()))?;
    let relevance: f64 = label
        .parse()
        .map_err(|_| err(format!("non-numeric relevance {label:?}")))?;
    if !(relevance >= 0.0) || !relevance.is_finite() {
        return Err(err(format!("relevance must be finite and >= 0, got {label}")));
    }
    let qtok = tokens.next().ok_or_else(|| err("missing qid".into()))?;
    let qid = qtok
        .strip_prefix("qid:")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(format!("expected qid:<int>, got {qtok:?}")))?;
    let mut features = Vec::new();
    for tok in tokens {
        let (fid, val) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("expected <fid>:<value>, got {tok:?}")))?;
        let fid: usize = fid
            .parse()
            .ok()
            .filter(|&f| f >= 1)
            .ok_or_else(|| err(format!("bad feature id in {tok:?}")))?;
        let val: f64 = val
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| err(format!("bad feature value in {tok:?}")))?;
        features.push((fid, val));
    }
    let group = comment.and_then(|c| {
        c.split_whitespace()
            .find_map(|t| t.strip_prefix("group=").and_then(|g| g.parse().ok()))
    });
    Ok(ParsedLine {
        relevance,
        qid,
        features,
        group,
    })
}

/// Parses LETOR/SVMlight ranking data. The feature dimension is the largest
/// feature id seen.
pub fn parse_letor(text: &str) -> Result<QuerySet> {
    parse_letor_with_dim(text, None)
}

/// Parses LETOR data with an explicit feature dimension; ids beyond it are an error.
pub fn parse_letor_with_dim(text: &str, feature_dim: Option<usize>) -> Result<QuerySet> {
    let mut order: Vec<u64> = Vec::new();
    let mut by_qid: HashMap<u64, Vec<ParsedLine>> = HashMap::new();
    let mut source = None;
    let mut declared_groups = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut parts = rest.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some("groups"), Some("explicit")) => source = Some(GroupSource::Explicit),
                (Some("groups"), Some(fid)) => {
                    let fid = fid.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad #groups header {line:?}"),
                    })?;
                    source = Some(GroupSource::Feature(fid));
                }
                (Some("num_groups"), Some(g)) => {
                    declared_groups = Some(g.parse::<usize>().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad #num_groups header {line:?}"),
                    })?);
                }
                _ => {}
            }
            continue;
        }
        let parsed = parse_line(line, lineno)?;
        if let Some(k) = feature_dim {
            if let Some(&(fid, _)) = parsed.features.iter().find(|(f, _)| *f > k) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("feature id {fid} exceeds dimension {k}"),
                });
            }
        }
        by_qid
            .entry(parsed.qid)
            .or_insert_with(|| {
                order.push(parsed.qid);
                Vec::new()
            })
            .push(parsed);
    }
    if order.is_empty() {
        return Err(Error::EmptyInput);
    }
    let k = feature_dim.unwrap_or_else(|| {
        by_qid
            .values()
            .flatten()
            .flat_map(|l| l.features.iter().map(|&(f, _)| f))
            .max()
            .unwrap_or(0)
    });
    let mut max_group = 0;
    let mut queries = Vec::with_capacity(order.len());
    for qid in order {
        let lines = by_qid.remove(&qid).expect("qid recorded");
        let n = lines.len();
        let mut features = Matrix::zeros(n, k);
        let mut groups = Vec::with_capacity(n);
        let mut relevances = Vec::with_capacity(n);
        for (i, l) in lines.into_iter().enumerate() {
            for (fid, v) in l.features {
                features[(i, fid - 1)] = v;
            }
            let g = l.group.unwrap_or(0);
            max_group = max_group.max(g);
            groups.push(g);
            relevances.push(l.relevance);
        }
        queries.push(Query {
            id: qid,
            features,
            groups,
            relevances,
        });
    }
    let num_groups = declared_groups.unwrap_or(max_group + 1).max(max_group + 1);
    let qs = QuerySet {
        queries,
        num_groups,
        feature_dim: k,
        group_source: source.unwrap_or(GroupSource::Explicit),
    };
    qs.validate()?;
    Ok(qs)
}

/// Nearest-rank percentile of ascending `sorted` data, `pct` in (0, 100].
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Thresholds for `num_groups` buckets: the 40th percentile for two groups,
/// evenly spaced quantiles otherwise.
pub fn group_thresholds(values: &[f64], num_groups: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if num_groups == 2 {
        vec![nearest_rank(&sorted, 40.0)]
    } else {
        (1..num_groups)
            .map(|m| nearest_rank(&sorted, 100.0 * m as f64 / num_groups as f64))
            .collect()
    }
}

/// Bucket index of `x`: values on a threshold go to the lower bucket.
pub fn bucket_of(x: f64, thresholds: &[f64]) -> usize {
    thresholds.iter().filter(|&&t| x > t).count()
}

/// Assigns protected groups from quantiles of feature column `feature_id`
/// (0-based), computed over every item of the dataset.
pub fn assign_groups(qs: &QuerySet, feature_id: usize, num_groups: usize) -> Result<QuerySet> {
    if feature_id >= qs.feature_dim {
        return Err(Error::InvalidArgument(format!(
            "feature {feature_id} out of range for dimension {}",
            qs.feature_dim
        )));
    }
    if num_groups < 2 {
        return Err(Error::InvalidArgument("num_groups must be >= 2".into()));
    }
    let values: Vec<f64> = qs
        .queries
        .iter()
        .flat_map(|q| (0..q.len()).map(move |i| q.features[(i, feature_id)]))
        .collect();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if lo == hi {
        return Err(Error::DegenerateGrouping);
    }
    let thresholds = group_thresholds(&values, num_groups);
    let mut out = qs.clone();
    for q in &mut out.queries {
        for i in 0..q.len() {
            q.groups[i] = bucket_of(q.features[(i, feature_id)], &thresholds);
        }
    }
    out.num_groups = num_groups;
    out.group_source = GroupSource::Feature(feature_id + 1);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_queries: usize,
    pub n_items: usize,
    pub feature_dim: usize,
    pub num_groups: usize,
    /// Share of items in group 0; the rest is split evenly over the others.
    pub majority_ratio: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(n_queries: usize, n_items: usize, feature_dim: usize, num_groups: usize, seed: u64) -> Self {
        Self {
            n_queries,
            n_items,
            feature_dim,
            num_groups,
            majority_ratio: 0.8,
            seed,
        }
    }
}

/// Relevance model of the synthetic generator: a clamped sparse linear function.
pub fn synthetic_relevance(x: &[f64]) -> f64 {
    const WEIGHTS: [f64; 4] = [0.3, -0.2, 0.15, 0.1];
    let s: f64 = x.iter().zip(WEIGHTS).map(|(a, w)| a * w).sum();
    (0.5 + s).clamp(0.0, 1.0)
}

pub fn generate_synthetic(
    n_queries: usize,
    n_items: usize,
    k: usize,
    num_groups: usize,
    seed: u64,
) -> Result<QuerySet> {
    generate_synthetic_with(&SyntheticConfig::new(n_queries, n_items, k, num_groups, seed))
}

/// Deterministic synthetic dataset: standard normal features, relevances from
/// [`synthetic_relevance`], and group labels drawn at the configured majority
/// ratio, resampled until every group appears in every query.
pub fn generate_synthetic_with(cfg: &SyntheticConfig) -> Result<QuerySet> {
    if cfg.n_queries == 0 || cfg.n_items == 0 || cfg.feature_dim == 0 || cfg.num_groups == 0 {
        return Err(Error::InvalidArgument("synthetic sizes must be >= 1".into()));
    }
    if cfg.num_groups > cfg.n_items {
        return Err(Error::InvalidArgument("num_groups must not exceed n_items".into()));
    }
    if !(0.0..=1.0).contains(&cfg.majority_ratio) {
        return Err(Error::InvalidArgument("majority_ratio must lie in [0,1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_items;
    let k = cfg.feature_dim;
    let g = cfg.num_groups;
    let mut queries = Vec::with_capacity(cfg.n_queries);
    for qid in 0..cfg.n_queries {
        let data: Vec<f64> = (0..n * k).map(|_| rng.sample(StandardNormal)).collect();
        let features = Matrix::from_vec(n, k, data);
        let relevances = (0..n).map(|i| synthetic_relevance(features.row(i))).collect();
        let groups = loop {
            let labels: Vec<usize> = (0..n)
                .map(|_| {
                    if g == 1 {
                        return 0;
                    }
                    let u: f64 = rng.random();
                    if u < cfg.majority_ratio {
                        0
                    } else {
                        let minority =
                            ((u - cfg.majority_ratio) / (1.0 - cfg.majority_ratio) * (g - 1) as f64) as usize;
                        1 + minority.min(g - 2)
                    }
                })
                .collect();
            let mut seen = vec![false; g];
            labels.iter().for_each(|&l| seen[l] = true);
            if seen.iter().all(|&s| s) {
                break labels;
            }
        };
        queries.push(Query {
            id: qid as u64,
            features,
            groups,
            relevances,
        });
    }
    QuerySet::new(queries, g, k)
}

/// Population and per-group mean relevance. Groups without items are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeritWeights<T> {
    pub mu: T,
    pub mu_g: Vec<Option<T>>,
}

pub fn merit_weights<T: Scalar>(relevances: &[T], groups: &[usize], num_groups: usize) -> MeritWeights<T> {
    let num_groups = num_groups.max(groups.iter().max().map_or(0, |&g| g + 1));
    let mut sums = vec![T::zero(); num_groups];
    let mut counts = vec![0usize; num_groups];
    for (&y, &g) in relevances.iter().zip(groups) {
        sums[g] += y;
        counts[g] += 1;
    }
    let total: T = relevances.iter().copied().sum();
    MeritWeights {
        mu: total / T::of(relevances.len() as f64),
        mu_g: sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| (c > 0).then(|| s / T::of(c as f64)))
            .collect(),
    }
}

pub fn compute_merit_weights(q: &Query, num_groups: usize) -> MeritWeights<f64> {
    merit_weights(&q.relevances, &q.groups, num_groups)
}
