//! SPO+ training of the scorer through the fairness-constrained ranking LP.
//!
//! For a query with targets `y` and predictions `ŷ`, the costs are
//! `C = y wᵀ` and `Ĉ = ŷ wᵀ`. With `Π₁ = Π*(C)` and `Π₂ = Π*(2Ĉ − C)` the
//! surrogate gradient with respect to `Ĉ` is `Π₂ − Π₁`, which contracts to
//! the per-item gradient `g = (Π₂ − Π₁) w`. Both solves use the same
//! fairness constraints.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clicksim::{ips_relevance_estimates, ClickLog};
use crate::datasets::{merit_weights, MeritWeights, QuerySet};
use crate::error::{Error, Result};
use crate::evalmetrics::{expected_dcg, DiscountVector};
use crate::fairlp::{fairness_violation, CachedSolution, FairnessSpec, Policy, SolverCache};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::scorer::{adam_step, backward, forward, predict, AdamState, Gradients, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InfoMode {
    /// Train on the true relevance labels.
    Full,
    /// Train on IPS relevance estimates from a click log.
    Partial,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub spec: FairnessSpec<f64>,
    pub seed: u64,
    pub info: InfoMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            batch: 64,
            epochs: 1,
            spec: FairnessSpec::unconstrained(),
            seed: 0,
            info: InfoMode::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        self.spec.validate()
    }
}

/// `C_ij = scores_i · w_j`.
pub fn cost_matrix<T: Scalar>(scores: &[T], w: &DiscountVector<T>) -> Matrix<T> {
    Matrix::outer(scores, w.as_slice())
}

/// Per-item contraction `g_i = Σ_j G_ij w_j` of a cost-space gradient.
pub fn contract<T: Scalar>(grad: &Matrix<T>, w: &DiscountVector<T>) -> Vec<T> {
    grad.mul_vec(w.as_slice())
}

/// Constraint context shared by the solves of one query.
#[derive(Clone, Copy)]
pub struct LpContext<'a> {
    pub cache: &'a SolverCache<f64>,
    pub groups: &'a [usize],
    pub spec: &'a FairnessSpec<f64>,
    pub merit: Option<&'a MeritWeights<f64>>,
}

impl LpContext<'_> {
    fn solve(&self, cost: &Matrix<f64>, warm: Option<&CachedSolution<f64>>) -> Result<CachedSolution<f64>> {
        self.cache
            .solve_with_basis(cost, self.groups, self.spec, self.merit, warm.map(|a| &a.basis))
    }

    /// `Π*(y wᵀ)`, the anchor reused by regret and gradient computations.
    pub fn anchor(&self, y: &[f64], w: &DiscountVector<f64>) -> Result<CachedSolution<f64>> {
        self.solve(&cost_matrix(y, w), None)
    }
}

fn check_lengths(y: &[f64], y_hat: &[f64], w: &DiscountVector<f64>) -> Result<()> {
    if y.len() != y_hat.len() || y.len() != w.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: y_hat.len().min(w.len()),
        });
    }
    Ok(())
}

fn regret_from(
    anchor: &CachedSolution<f64>,
    y: &[f64],
    y_hat: &[f64],
    w: &DiscountVector<f64>,
    ctx: &LpContext<'_>,
) -> Result<(f64, Policy<f64>)> {
    let sol = ctx.solve(&cost_matrix(y_hat, w), Some(anchor))?;
    let r = expected_dcg(&anchor.policy, y, w) - expected_dcg(&sol.policy, y, w);
    Ok((r, sol.policy))
}

/// `yᵀΠ*(y)w − yᵀΠ*(ŷ)w` under the context's constraints.
pub fn regret(y: &[f64], y_hat: &[f64], w: &DiscountVector<f64>, ctx: &LpContext<'_>) -> Result<f64> {
    check_lengths(y, y_hat, w)?;
    let anchor = ctx.anchor(y, w)?;
    regret_from(&anchor, y, y_hat, w, ctx).map(|(r, _)| r)
}

fn perturbed_solution(
    anchor: &CachedSolution<f64>,
    y: &[f64],
    y_hat: &[f64],
    w: &DiscountVector<f64>,
    ctx: &LpContext<'_>,
) -> Result<CachedSolution<f64>> {
    let c = cost_matrix(y, w);
    let c_hat = cost_matrix(y_hat, w);
    let perturbed = c_hat.axpby(2.0, &c, -1.0);
    ctx.solve(&perturbed, Some(anchor))
}

/// `Π*(2Ĉ − C) − Π*(C)`, the SPO+ gradient with respect to the predicted cost.
pub fn spo_plus_gradient(
    y: &[f64],
    y_hat: &[f64],
    w: &DiscountVector<f64>,
    ctx: &LpContext<'_>,
) -> Result<Matrix<f64>> {
    check_lengths(y, y_hat, w)?;
    let anchor = ctx.anchor(y, w)?;
    let pi2 = perturbed_solution(&anchor, y, y_hat, w, ctx)?;
    Ok(pi2.policy.matrix().sub(anchor.policy.matrix()))
}

/// Half the SPO+ surrogate in utility-maximization form,
/// `½[max_Π ⟨2Ĉ − C, Π⟩ − ⟨2Ĉ − C, Π*(C)⟩]`, scaled so that
/// [`spo_plus_gradient`] is a subgradient.
pub fn spo_plus_loss(y: &[f64], y_hat: &[f64], w: &DiscountVector<f64>, ctx: &LpContext<'_>) -> Result<f64> {
    check_lengths(y, y_hat, w)?;
    let anchor = ctx.anchor(y, w)?;
    let pi2 = perturbed_solution(&anchor, y, y_hat, w, ctx)?;
    let perturbed = cost_matrix(y_hat, w).axpby(2.0, &cost_matrix(y, w), -1.0);
    Ok(0.5 * (perturbed.frobenius_dot(pi2.policy.matrix()) - perturbed.frobenius_dot(anchor.policy.matrix())))
}

/// Queries with their training targets and per-query anchor solutions.
pub struct TrainingSet<'a> {
    pub queries: &'a QuerySet,
    pub targets: Vec<Vec<f64>>,
    merits: Vec<MeritWeights<f64>>,
    anchors: Vec<CachedSolution<f64>>,
    discounts: Vec<DiscountVector<f64>>,
    spec: FairnessSpec<f64>,
    cache: SolverCache<f64>,
}

impl<'a> TrainingSet<'a> {
    /// Training on the true labels.
    pub fn full(queries: &'a QuerySet, spec: &FairnessSpec<f64>) -> Result<Self> {
        let targets = queries.queries.iter().map(|q| q.relevances.clone()).collect();
        Self::with_targets(queries, targets, spec)
    }

    /// Training on IPS estimates from `log`.
    pub fn partial(queries: &'a QuerySet, log: &ClickLog, spec: &FairnessSpec<f64>) -> Result<Self> {
        let targets = ips_relevance_estimates(log, queries)?;
        Self::with_targets(queries, targets, spec)
    }

    /// Merit weights come from the targets.
    pub fn with_targets(queries: &'a QuerySet, targets: Vec<Vec<f64>>, spec: &FairnessSpec<f64>) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::EmptyInput);
        }
        if targets.len() != queries.len() {
            return Err(Error::Dimension {
                expected: queries.len(),
                got: targets.len(),
            });
        }
        spec.validate()?;
        let merits: Vec<MeritWeights<f64>> = queries
            .queries
            .iter()
            .zip(&targets)
            .map(|(q, t)| merit_weights(t, &q.groups, queries.num_groups))
            .collect();
        let discounts: Vec<DiscountVector<f64>> =
            queries.queries.iter().map(|q| DiscountVector::new(q.len())).collect();
        let cache = SolverCache::new();
        let anchors = (0..queries.len())
            .into_par_iter()
            .map(|k| {
                let q = &queries.queries[k];
                if targets[k].len() != q.len() {
                    return Err(Error::Dimension {
                        expected: q.len(),
                        got: targets[k].len(),
                    });
                }
                let ctx = LpContext {
                    cache: &cache,
                    groups: &q.groups,
                    spec,
                    merit: Some(&merits[k]),
                };
                ctx.anchor(&targets[k], &discounts[k])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            queries,
            targets,
            merits,
            anchors,
            discounts,
            spec: spec.clone(),
            cache,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn cache(&self) -> &SolverCache<f64> {
        &self.cache
    }

    /// Objective `targetᵀΠ*(target)w` of query `k`.
    pub fn optimal_objective(&self, k: usize) -> f64 {
        expected_dcg(&self.anchors[k].policy, &self.targets[k], &self.discounts[k])
    }

    fn context(&self, k: usize) -> LpContext<'_> {
        LpContext {
            cache: &self.cache,
            groups: &self.queries.queries[k].groups,
            spec: &self.spec,
            merit: Some(&self.merits[k]),
        }
    }

    /// Parameter gradient of query `k`'s surrogate.
    fn query_gradient(&self, k: usize, params: &ModelParams<f64>) -> Result<Gradients<f64>> {
        let q = &self.queries.queries[k];
        let (y_hat, tape) = forward(params, &q.features)?;
        if let Some(i) = y_hat.iter().position(|s| !s.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite score for item {i} of query {}",
                q.id
            )));
        }
        let w = &self.discounts[k];
        let anchor = &self.anchors[k];
        let pi2 = perturbed_solution(anchor, &self.targets[k], &y_hat, w, &self.context(k))?;
        let upstream = contract(&pi2.policy.matrix().sub(anchor.policy.matrix()), w);
        backward(params, &tape, &upstream)
    }
}

/// Per-epoch summary, measured against the true labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_regret: f64,
    pub mean_expected_dcg: f64,
    /// Mean of `yᵀΠ*(y)w`, the best attainable value under the constraints.
    pub mean_optimal_dcg: f64,
    pub mean_abs_violation: f64,
    pub max_abs_violation: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,mean_regret,mean_expected_dcg,mean_abs_violation,max_abs_violation";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.mean_regret, self.mean_expected_dcg, self.mean_abs_violation, self.max_abs_violation
        )
    }
}

/// Per-query outcome of deploying the scorer's policy.
#[derive(Clone, Debug)]
pub struct QueryEvaluation {
    pub policy: Policy<f64>,
    pub regret: f64,
    pub expected_dcg: f64,
    pub optimal_dcg: f64,
    pub violations: Vec<Option<f64>>,
}

/// Policies `Π*(ŷ)` for every query, scored against the true labels with
/// merit weights taken from those labels.
pub fn evaluate_queries(
    params: &ModelParams<f64>,
    queries: &QuerySet,
    spec: &FairnessSpec<f64>,
    cache: &SolverCache<f64>,
) -> Result<Vec<QueryEvaluation>> {
    queries
        .queries
        .par_iter()
        .map(|q| {
            let w = DiscountVector::new(q.len());
            let merit = merit_weights(&q.relevances, &q.groups, queries.num_groups);
            let ctx = LpContext {
                cache,
                groups: &q.groups,
                spec,
                merit: Some(&merit),
            };
            let y_hat = predict(params, &q.features)?;
            if y_hat.iter().any(|s| !s.is_finite()) {
                return Err(Error::Divergence(format!("non-finite score in query {}", q.id)));
            }
            let anchor = ctx.anchor(&q.relevances, &w)?;
            let (regret, policy) = regret_from(&anchor, &q.relevances, &y_hat, &w, &ctx)?;
            let violations = fairness_violation(&policy, &q.groups, spec, Some(&merit))?;
            Ok(QueryEvaluation {
                expected_dcg: expected_dcg(&policy, &q.relevances, &w),
                optimal_dcg: expected_dcg(&anchor.policy, &q.relevances, &w),
                policy,
                regret,
                violations,
            })
        })
        .collect()
}

pub fn summarize(epoch: usize, evals: &[QueryEvaluation]) -> EpochMetrics {
    let m = evals.len().max(1) as f64;
    let mut abs_sum = 0.0;
    let mut abs_count = 0usize;
    let mut abs_max: f64 = 0.0;
    for e in evals {
        for v in e.violations.iter().flatten() {
            abs_sum += v.abs();
            abs_count += 1;
            abs_max = abs_max.max(v.abs());
        }
    }
    EpochMetrics {
        epoch,
        mean_regret: evals.iter().map(|e| e.regret).sum::<f64>() / m,
        mean_expected_dcg: evals.iter().map(|e| e.expected_dcg).sum::<f64>() / m,
        mean_optimal_dcg: evals.iter().map(|e| e.optimal_dcg).sum::<f64>() / m,
        mean_abs_violation: if abs_count == 0 {
            0.0
        } else {
            abs_sum / abs_count as f64
        },
        max_abs_violation: abs_max,
    }
}

pub fn evaluate(
    epoch: usize,
    params: &ModelParams<f64>,
    queries: &QuerySet,
    spec: &FairnessSpec<f64>,
    cache: &SolverCache<f64>,
) -> Result<EpochMetrics> {
    Ok(summarize(epoch, &evaluate_queries(params, queries, spec, cache)?))
}

/// Query visiting order of an epoch.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// One pass over the shuffled queries with an Adam step per batch of
/// averaged per-query gradients; returns metrics of the updated scorer.
pub fn train_epoch(
    set: &TrainingSet<'_>,
    params: &mut ModelParams<f64>,
    adam: &mut AdamState<f64>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochMetrics> {
    cfg.validate()?;
    adam.lr = cfg.lr;
    let order = epoch_order(set.len(), cfg.seed, epoch);
    for batch in order.chunks(cfg.batch) {
        let grads = batch
            .par_iter()
            .map(|&k| set.query_gradient(k, params))
            .collect::<Result<Vec<_>>>()?;
        let mut total = Gradients::zeros_like(params);
        for g in &grads {
            total.add_scaled(g, 1.0);
        }
        total.scale(1.0 / batch.len() as f64);
        adam_step(params, &total, adam)?;
    }
    evaluate(epoch + 1, params, set.queries, &set.spec, &set.cache)
}

/// Runs `cfg.epochs` epochs, reporting each epoch's metrics to `on_epoch`.
pub fn train(
    set: &TrainingSet<'_>,
    params: &mut ModelParams<f64>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let mut adam = AdamState::new(params, cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let m = train_epoch(set, params, &mut adam, cfg, epoch)?;
        on_epoch(&m);
        history.push(m);
    }
    Ok(history)
}
