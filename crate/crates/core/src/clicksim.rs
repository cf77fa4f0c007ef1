//! Position-based click simulation and inverse propensity scoring.
//!
//! A logging ranker sorts items by relevance plus Gaussian noise. Each shown
//! item is examined with the position-bias probability of its rank and, once
//! examined, clicked with probability equal to its (clamped) relevance, so
//! `c_i = o_i · y_i`. Clicks reweighted by their examination propensity give
//! unbiased utility and relevance estimates.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datasets::{Query, QuerySet};
use crate::error::{Error, Result};
use crate::evalmetrics::DiscountVector;

/// Examination probability `1/(1+position)^p` of a 1-based position.
pub fn propensity(position: usize, p: f64) -> f64 {
    1.0 / (1.0 + position as f64).powf(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClickEntry {
    pub qid: u64,
    pub sweep: usize,
    /// 0-based shown position of each item.
    pub ranking: Vec<usize>,
    pub clicks: Vec<bool>,
    /// Examination propensity of each item at its shown position.
    pub propensities: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClickLog {
    pub entries: Vec<ClickEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClickSimConfig {
    pub sweeps: usize,
    /// Standard deviation of the logger's score noise.
    pub noise: f64,
    /// Position-bias power.
    pub p: f64,
    pub seed: u64,
}

impl ClickSimConfig {
    pub fn new(sweeps: usize, noise: f64, seed: u64) -> Self {
        Self {
            sweeps,
            noise,
            p: 1.0,
            seed,
        }
    }
}

impl Default for ClickSimConfig {
    fn default() -> Self {
        Self::new(1, 0.5, 0)
    }
}

/// Per-query stream so that parallel and serial simulation agree exactly.
fn query_rng(seed: u64, qid: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(qid);
    rng
}

/// All sweeps of one query.
pub fn simulate_query(q: &Query, cfg: &ClickSimConfig) -> Vec<ClickEntry> {
    let n = q.len();
    let mut rng = query_rng(cfg.seed, q.id);
    let mut out = Vec::with_capacity(cfg.sweeps);
    for sweep in 0..cfg.sweeps {
        let noisy: Vec<f64> = q
            .relevances
            .iter()
            .map(|&y| {
                let z: f64 = rng.sample(StandardNormal);
                y + cfg.noise * z
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| noisy[b].total_cmp(&noisy[a]).then(a.cmp(&b)));
        let mut ranking = vec![0; n];
        for (pos, &item) in order.iter().enumerate() {
            ranking[item] = pos;
        }
        let propensities: Vec<f64> = ranking.iter().map(|&pos| propensity(pos + 1, cfg.p)).collect();
        let clicks = (0..n)
            .map(|i| {
                let examined = rng.random::<f64>() < propensities[i];
                let relevant = rng.random::<f64>() < q.relevances[i].clamp(0.0, 1.0);
                examined && relevant
            })
            .collect();
        out.push(ClickEntry {
            qid: q.id,
            sweep,
            ranking,
            clicks,
            propensities,
        });
    }
    out
}

pub fn simulate_clicks(qs: &QuerySet, sweeps: usize, noise: f64, seed: u64) -> Result<ClickLog> {
    simulate_clicks_with(qs, &ClickSimConfig::new(sweeps, noise, seed))
}

pub fn simulate_clicks_with(qs: &QuerySet, cfg: &ClickSimConfig) -> Result<ClickLog> {
    if cfg.sweeps == 0 {
        return Err(Error::InvalidArgument("sweeps must be >= 1".into()));
    }
    if !(cfg.noise >= 0.0) {
        return Err(Error::InvalidArgument("noise must be >= 0".into()));
    }
    Ok(ClickLog {
        entries: qs.queries.iter().flat_map(|q| simulate_query(q, cfg)).collect(),
    })
}

/// `Σ_{i clicked} w_{σ_i} / propensity_i`.
pub fn ips_utility(sigma: &[usize], clicks: &[bool], propensities: &[f64], w: &DiscountVector<f64>) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&pos, &clicked)) in sigma.iter().zip(clicks).enumerate() {
        if !clicked {
            continue;
        }
        let prop = propensities[i];
        if !(prop > 0.0) {
            return Err(Error::UnboundedPropensity { item: i });
        }
        total += w.as_slice()[pos] / prop;
    }
    Ok(total)
}

/// Per-query IPS relevance estimates `Σ_sweeps c_i/propensity_i / sweeps`, in
/// the query order of `qs`.
pub fn ips_relevance_estimates(log: &ClickLog, qs: &QuerySet) -> Result<Vec<Vec<f64>>> {
    let index: HashMap<u64, usize> = qs.queries.iter().enumerate().map(|(k, q)| (q.id, k)).collect();
    let mut sums: Vec<Vec<f64>> = qs.queries.iter().map(|q| vec![0.0; q.len()]).collect();
    let mut sweeps = vec![0usize; qs.len()];
    for e in &log.entries {
        let Some(&k) = index.get(&e.qid) else {
            continue;
        };
        if e.clicks.len() != sums[k].len() {
            return Err(Error::Dimension {
                expected: sums[k].len(),
                got: e.clicks.len(),
            });
        }
        sweeps[k] += 1;
        for (i, &clicked) in e.clicks.iter().enumerate() {
            if clicked {
                let prop = e.propensities[i];
                if !(prop > 0.0) {
                    return Err(Error::UnboundedPropensity { item: i });
                }
                sums[k][i] += 1.0 / prop;
            }
        }
    }
    for (k, s) in sweeps.iter().enumerate() {
        if *s == 0 {
            return Err(Error::InvalidArgument(format!(
                "click log has no entries for query {}",
                qs.queries[k].id
            )));
        }
        let sf = *s as f64;
        sums[k].iter_mut().for_each(|x| *x /= sf);
    }
    Ok(sums)
}

fn csv<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ClickLog {
    /// One line per entry: `qid sweep ranking clicks propensities`, lists comma separated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                e.qid,
                e.sweep,
                csv(&e.ranking),
                csv(e.clicks.iter().map(|&c| u8::from(c))),
                csv(&e.propensities)
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                line: idx + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(err("expected 5 fields"));
            }
            let list = |s: &str| -> Vec<String> { s.split(',').map(str::to_string).collect() };
            let ranking = list(f[2])
                .iter()
                .map(|x| x.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| err("bad ranking"))?;
            let clicks = list(f[3])
                .iter()
                .map(|x| match x.as_str() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(err("clicks must be 0/1")),
                })
                .collect::<Result<Vec<_>>>()?;
            let propensities = list(f[4])
                .iter()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| err("bad propensity"))?;
            let n = ranking.len();
            if clicks.len() != n || propensities.len() != n {
                return Err(err("list lengths differ"));
            }
            let mut seen = vec![false; n];
            for &p in &ranking {
                if p >= n || std::mem::replace(&mut seen[p], true) {
                    return Err(err("ranking is not a permutation"));
                }
            }
            if clicks.iter().zip(&propensities).any(|(&c, &p)| c && !(p > 0.0)) {
                return Err(err("clicked item with zero propensity"));
            }
            entries.push(ClickEntry {
                qid: f[0].parse().map_err(|_| err("bad qid"))?,
                sweep: f[1].parse().map_err(|_| err("bad sweep"))?,
                ranking,
                clicks,
                propensities,
            });
        }
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn one_query(y: Vec<f64>) -> QuerySet {
        let n = y.len();
        let q = Query::new(3, Matrix::zeros(n, 1), vec![0; n], y).unwrap();
        QuerySet::new(vec![q], 1, 1).unwrap()
    }

    #[test]
    fn propensity_values() {
        assert_eq!(propensity(1, 1.0), 0.5);
        assert!((propensity(2, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(propensity(3, 2.0), 1.0 / 16.0);
    }

    #[test]
    fn zero_relevance_never_clicks() {
        let log = simulate_clicks(&one_query(vec![0.0; 5]), 200, 0.5, 1).unwrap();
        assert!(log.entries.iter().all(|e| e.clicks.iter().all(|&c| !c)));
    }

    #[test]
    fn logged_propensities_match_positions() {
        let log = simulate_clicks(&one_query(vec![0.2, 0.9, 0.5, 0.1]), 50, 0.5, 2).unwrap();
        for e in &log.entries {
            for (i, &pos) in e.ranking.iter().enumerate() {
                assert_eq!(e.propensities[i], propensity(pos + 1, 1.0));
            }
        }
    }

    #[test]
    fn noiseless_top_item_click_rate() {
        let mut y = vec![0.0; 5];
        y[0] = 1.0;
        let sweeps = 10_000;
        let log = simulate_clicks(&one_query(y), sweeps, 0.0, 7).unwrap();
        assert!(log.entries.iter().all(|e| e.ranking[0] == 0));
        let clicks = log.entries.iter().filter(|e| e.clicks[0]).count() as f64;
        let rate = clicks / sweeps as f64;
        let sigma = (0.25 / sweeps as f64).sqrt();
        assert!((rate - 0.5).abs() < 3.0 * sigma, "{rate}");
    }

    #[test]
    fn determinism() {
        let qs = one_query(vec![0.3, 0.6, 0.9]);
        assert_eq!(
            simulate_clicks(&qs, 20, 0.5, 9).unwrap(),
            simulate_clicks(&qs, 20, 0.5, 9).unwrap()
        );
    }

    #[test]
    fn ips_utility_cases() {
        let w = DiscountVector::<f64>::new(3);
        let sigma = [2, 0, 1];
        let clicks = [true, false, true];
        let plain = w.as_slice()[2] + w.as_slice()[1];
        assert!((ips_utility(&sigma, &clicks, &[1.0; 3], &w).unwrap() - plain).abs() < 1e-15);
        assert_eq!(ips_utility(&sigma, &[false; 3], &[0.5; 3], &w).unwrap(), 0.0);
        assert!(matches!(
            ips_utility(&sigma, &clicks, &[0.0, 1.0, 1.0], &w),
            Err(Error::UnboundedPropensity { item: 0 })
        ));
    }

    #[test]
    fn ips_estimate_single_sweep() {
        let qs = one_query(vec![1.0, 0.0]);
        let log = ClickLog {
            entries: vec![ClickEntry {
                qid: 3,
                sweep: 0,
                ranking: vec![0, 1],
                clicks: vec![true, false],
                propensities: vec![0.5, 1.0 / 3.0],
            }],
        };
        let est = ips_relevance_estimates(&log, &qs).unwrap();
        assert_eq!(est, vec![vec![2.0, 0.0]]);
    }

    #[test]
    fn text_round_trip() {
        let log = simulate_clicks(&one_query(vec![0.3, 0.6, 0.9]), 5, 0.5, 4).unwrap();
        assert_eq!(ClickLog::parse(&log.to_text()).unwrap(), log);
        assert!(ClickLog::parse("1 0 0,0 1,0 0.5,0.3").is_err());
    }
}
