//! The fairness-constrained ranking LP over the Birkhoff polytope.
//!
//! A policy is an `n × n` doubly stochastic matrix `Π` where `Π[i][j]` is the
//! probability that item `i` is shown at position `j`. The solver maximizes
//! `Σ C_ij Π_ij` for a cost matrix `C` (for ranking, `C = ŷ wᵀ`) subject to the
//! row and column sums, box bounds, and for every group `g` present in the
//! query the exposure constraint `|u_gᵀ Π v| ≤ δ_g`, split into two linear rows.
//!
//! `u_g = 1_g/|G_g| − 1/n` for equal exposure, `u_g = μ·1_g/|G_g| − μ_g/n` for
//! merit-weighted exposure, and `v_j = 1/(1+j)^p` is the position bias.
//!
//! Variables are laid out row-major: `Π[i][j]` is column `i·n + j`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, RwLock};

use crate::datasets::MeritWeights;
use crate::error::{Error, Result};
use crate::linalg::{invert_permutation, stable_argsort, Matrix};
use crate::scalar::Scalar;
use crate::simplex::{self, Basis, LinearProgram, Relation, SimplexError, SimplexOptions};

/// Tolerance used when checking row/column sums and entry bounds of a policy.
pub const POLICY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FairnessMode {
    None,
    Unweighted,
    MeritWeighted,
}

impl std::str::FromStr for FairnessMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FairnessMode::None),
            "unweighted" => Ok(FairnessMode::Unweighted),
            "merit" | "merit_weighted" => Ok(FairnessMode::MeritWeighted),
            other => Err(Error::InvalidArgument(format!("unknown fairness mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for FairnessMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FairnessMode::None => "none",
            FairnessMode::Unweighted => "unweighted",
            FairnessMode::MeritWeighted => "merit",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FairnessSpec<T> {
    pub mode: FairnessMode,
    /// Per-group tolerance. A single entry applies to every group.
    pub delta: Vec<T>,
    /// Position-bias exponent `p` of `v_j = 1/(1+j)^p`.
    pub p: T,
}

impl<T: Scalar> FairnessSpec<T> {
    pub fn new(mode: FairnessMode, delta: T, p: T) -> Self {
        Self {
            mode,
            delta: vec![delta],
            p,
        }
    }

    pub fn unconstrained() -> Self {
        Self::new(FairnessMode::None, T::infinity(), T::one())
    }

    pub fn per_group(mode: FairnessMode, delta: Vec<T>, p: T) -> Self {
        Self { mode, delta, p }
    }

    pub fn delta_for(&self, group: usize) -> T {
        match self.delta.len() {
            0 => T::infinity(),
            1 => self.delta[0],
            _ => self.delta.get(group).copied().unwrap_or(T::infinity()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta.iter().any(|d| d.is_nan() || *d < T::zero()) {
            return Err(Error::InvalidArgument("delta entries must be >= 0".into()));
        }
        if !(self.p > T::zero()) {
            return Err(Error::InvalidArgument("position bias power must be > 0".into()));
        }
        Ok(())
    }

    /// Copy with the tolerance replaced by a uniform value.
    pub fn with_delta(&self, delta: T) -> Self {
        Self {
            mode: self.mode,
            delta: vec![delta],
            p: self.p,
        }
    }
}

/// `v_j = 1/(1+j)^p` for positions `j = 1..=n`.
pub fn position_bias<T: Scalar>(n: usize, p: T) -> Vec<T> {
    (1..=n)
        .map(|j| T::one() / (T::one() + T::of(j as f64)).powf(p))
        .collect()
}

/// Doubly stochastic matrix of marginal rank probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy<T> {
    matrix: Matrix<T>,
}

impl<T: Scalar> Policy<T> {
    /// Validates row/column sums and entry bounds to [`POLICY_TOL`].
    pub fn new(matrix: Matrix<T>) -> Result<Self> {
        let p = Self { matrix };
        p.check()?;
        Ok(p)
    }

    /// Wraps a matrix without validation.
    pub fn new_unchecked(matrix: Matrix<T>) -> Self {
        Self { matrix }
    }

    pub fn uniform(n: usize) -> Self {
        let v = T::one() / T::of(n as f64);
        Self {
            matrix: Matrix::filled(n, n, v),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: Matrix::identity(n),
        }
    }

    /// Permutation matrix with item `i` at position `sigma[i]`.
    pub fn from_permutation(sigma: &[usize]) -> Self {
        let n = sigma.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &j) in sigma.iter().enumerate() {
            m[(i, j)] = T::one();
        }
        Self { matrix: m }
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.matrix
    }

    pub fn check(&self) -> Result<()> {
        let m = &self.matrix;
        if !m.is_square() {
            return Err(Error::Dimension {
                expected: m.rows(),
                got: m.cols(),
            });
        }
        let tol = T::of(POLICY_TOL);
        if m.as_slice()
            .iter()
            .any(|&x| !x.is_finite() || x < -tol || x > T::one() + tol)
        {
            return Err(Error::InvalidArgument("policy entry outside [0,1]".into()));
        }
        let bad = |s: &T| (*s - T::one()).abs() > tol;
        if m.row_sums().iter().any(bad) || m.col_sums().iter().any(bad) {
            return Err(Error::InvalidArgument("policy rows and columns must sum to 1".into()));
        }
        Ok(())
    }

    /// Expected exposure of every item, `e_i = Σ_j Π_ij v_j`.
    pub fn exposures(&self, v: &[T]) -> Vec<T> {
        self.matrix.mul_vec(v)
    }

    /// CSV with one matrix row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n() {
            let row: Vec<String> = self.matrix.row(i).iter().map(|x| x.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Count of items per group label, the cache key for a query's constraint system.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupSignature(pub Vec<usize>);

impl GroupSignature {
    pub fn of(groups: &[usize], num_groups: usize) -> Self {
        let mut counts = vec![0; num_groups];
        for &g in groups {
            counts[g] += 1;
        }
        Self(counts)
    }
}

/// One group's exposure expression `u_gᵀ Π v`.
#[derive(Clone, Debug, PartialEq)]
pub struct FairnessRow<T> {
    pub group: usize,
    /// Per-item weights `u_g`.
    pub item_weights: Vec<T>,
    pub delta: T,
}

impl<T: Scalar> FairnessRow<T> {
    pub fn evaluate(&self, exposures: &[T]) -> T {
        crate::linalg::dot(&self.item_weights, exposures)
    }
}

/// A built instance of the ranking LP. The constraint system does not depend
/// on the cost matrix, so one instance serves every cost with the same groups.
#[derive(Clone, Debug)]
pub struct LpInstance<T> {
    n: usize,
    groups: Vec<usize>,
    spec: FairnessSpec<T>,
    v: Vec<T>,
    fairness: Vec<FairnessRow<T>>,
    lp: LinearProgram<T>,
    warnings: Vec<String>,
}

impl<T: Scalar> LpInstance<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn spec(&self) -> &FairnessSpec<T> {
        &self.spec
    }

    pub fn position_bias(&self) -> &[T] {
        &self.v
    }

    pub fn fairness_rows(&self) -> &[FairnessRow<T>] {
        &self.fairness
    }

    pub fn linear_program(&self) -> &LinearProgram<T> {
        &self.lp
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn num_equalities(&self) -> usize {
        self.count(Relation::Eq)
    }

    /// Inequality rows, two per constrained group.
    pub fn num_fairness_rows(&self) -> usize {
        self.count(Relation::Le)
    }

    pub fn num_variables(&self) -> usize {
        self.lp.num_vars()
    }

    fn count(&self, rel: Relation) -> usize {
        self.lp.constraints().iter().filter(|c| c.relation == rel).count()
    }

    /// CPLEX LP text for the instance with the given cost matrix.
    pub fn to_lp_format(&self, cost: &Matrix<T>) -> String {
        let n = self.n;
        let var = |k: usize| format!("x_{}_{}", k / n, k % n);
        let term = |coef: T, k: usize, first: bool| {
            let c = coef.as_f64();
            let sign = if c < 0.0 {
                "-"
            } else if first {
                ""
            } else {
                "+"
            };
            format!("{sign} {} {}", c.abs(), var(k))
        };
        let mut out = String::from("\\ fair ranking policy LP\nMaximize\n obj:");
        let mut first = true;
        for (k, &c) in cost.as_slice().iter().enumerate() {
            if c != T::zero() {
                let _ = write!(out, " {}", term(c, k, first));
                first = false;
            }
        }
        if first {
            let _ = write!(out, " 0 {}", var(0));
        }
        out.push_str("\nSubject To\n");
        for (r, c) in self.lp.constraints().iter().enumerate() {
            let _ = write!(out, " c{r}:");
            let mut first = true;
            for &(k, a) in &c.coeffs {
                if a != T::zero() {
                    let _ = write!(out, " {}", term(a, k, first));
                    first = false;
                }
            }
            if first {
                let _ = write!(out, " 0 {}", var(0));
            }
            let op = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(out, " {op} {}", c.rhs.as_f64());
        }
        out.push_str("Bounds\n");
        for k in 0..self.lp.num_vars() {
            let (lo, hi) = self.lp.bounds(k);
            let _ = writeln!(out, " {} <= {} <= {}", lo.as_f64(), var(k), hi.as_f64());
        }
        out.push_str("End\n");
        out
    }
}

fn num_groups_for<T: Scalar>(groups: &[usize], spec: &FairnessSpec<T>) -> usize {
    let from_labels = groups.iter().max().map_or(0, |&g| g + 1);
    from_labels.max(spec.delta.len())
}

/// Per-group exposure weights `u_g`; `None` for groups with no items.
fn item_weights<T: Scalar>(
    groups: &[usize],
    num_groups: usize,
    mode: FairnessMode,
    merit: Option<&MeritWeights<T>>,
) -> Result<Vec<Option<Vec<T>>>> {
    let n = groups.len();
    let nf = T::of(n as f64);
    let counts = GroupSignature::of(groups, num_groups).0;
    let mut out = Vec::with_capacity(num_groups);
    for (g, &count) in counts.iter().enumerate() {
        if count == 0 {
            out.push(None);
            continue;
        }
        let cf = T::of(count as f64);
        let (group_coef, pop_coef) = match mode {
            FairnessMode::None | FairnessMode::Unweighted => (T::one() / cf, T::one() / nf),
            FairnessMode::MeritWeighted => {
                let m =
                    merit.ok_or_else(|| Error::InvalidArgument("merit-weighted mode requires merit weights".into()))?;
                let mu_g = m
                    .mu_g
                    .get(g)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::InvalidArgument(format!("missing merit weight for group {g}")))?;
                (m.mu / cf, mu_g / nf)
            }
        };
        out.push(Some(
            groups
                .iter()
                .map(|&a| if a == g { group_coef - pop_coef } else { -pop_coef })
                .collect(),
        ));
    }
    Ok(out)
}

fn birkhoff_lp<T: Scalar>(n: usize, extra_vars: usize) -> LinearProgram<T> {
    let mut lp = LinearProgram::new(n * n + extra_vars);
    for k in 0..n * n {
        lp.set_bounds(k, T::zero(), T::one());
    }
    for i in 0..n {
        lp.add_constraint((0..n).map(|j| (i * n + j, T::one())).collect(), Relation::Eq, T::one());
    }
    for j in 0..n {
        lp.add_constraint((0..n).map(|i| (i * n + j, T::one())).collect(), Relation::Eq, T::one());
    }
    lp
}

/// Coefficients of `u_gᵀ Π v` over the `n²` policy variables.
fn expression_coeffs<T: Scalar>(u: &[T], v: &[T]) -> Vec<(usize, T)> {
    let n = u.len();
    let mut coeffs = Vec::with_capacity(n * n);
    for (i, &ui) in u.iter().enumerate() {
        for (j, &vj) in v.iter().enumerate() {
            let c = ui * vj;
            if c != T::zero() {
                coeffs.push((i * n + j, c));
            }
        }
    }
    coeffs
}

/// Builds the ranking LP for a query with the given group labels.
pub fn build_lp<T: Scalar>(
    n: usize,
    groups: &[usize],
    spec: &FairnessSpec<T>,
    merit: Option<&MeritWeights<T>>,
) -> Result<LpInstance<T>> {
    if groups.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: groups.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty item list".into()));
    }
    spec.validate()?;
    if spec.mode == FairnessMode::MeritWeighted && merit.is_none() {
        return Err(Error::InvalidArgument(
            "merit-weighted mode requires merit weights".into(),
        ));
    }
    let v = position_bias(n, spec.p);
    let mut lp = birkhoff_lp(n, 0);
    let mut fairness = Vec::new();
    let mut warnings = Vec::new();
    if spec.mode != FairnessMode::None {
        let num_groups = num_groups_for(groups, spec);
        for (g, u) in item_weights(groups, num_groups, spec.mode, merit)?
            .into_iter()
            .enumerate()
        {
            let Some(u) = u else {
                let msg = format!("group {g} has no items; its fairness constraint is omitted");
                log::warn!("{msg}");
                warnings.push(msg);
                continue;
            };
            let delta = spec.delta_for(g);
            if !delta.is_finite() {
                continue;
            }
            let coeffs = expression_coeffs(&u, &v);
            let negated = coeffs.iter().map(|&(k, c)| (k, -c)).collect();
            lp.add_constraint(coeffs, Relation::Le, delta);
            lp.add_constraint(negated, Relation::Le, delta);
            fairness.push(FairnessRow {
                group: g,
                item_weights: u,
                delta,
            });
        }
    }
    Ok(LpInstance {
        n,
        groups: groups.to_vec(),
        spec: spec.clone(),
        v,
        fairness,
        lp,
        warnings,
    })
}

#[derive(Clone, Debug)]
pub struct PolicySolution<T> {
    pub policy: Policy<T>,
    pub objective: T,
    pub basis: Basis,
}

fn policy_from_x<T: Scalar>(n: usize, x: &[T]) -> Policy<T> {
    let data = x.iter().map(|&v| v.max(T::zero()).min(T::one())).collect();
    Policy::new_unchecked(Matrix::from_vec(n, n, data))
}

fn map_simplex_error<T: Scalar>(e: SimplexError, lp: &LpInstance<T>, merit: Option<&MeritWeights<T>>) -> Error {
    match e {
        SimplexError::Infeasible { .. } => {
            let hint = min_feasible_delta(lp.n, &lp.groups, &lp.spec, merit)
                .map(|d| d.as_f64())
                .unwrap_or(f64::NAN);
            Error::Infeasible {
                min_feasible_delta: hint,
            }
        }
        SimplexError::Unbounded => Error::Internal("ranking LP reported unbounded".into()),
        other => Error::Internal(other.to_string()),
    }
}

/// Maximizes `Σ C_ij Π_ij` over the instance's feasible policies.
///
/// The result is an optimal vertex and is a deterministic function of
/// `(lp, cost, warm)`. Infeasible instances report the smallest uniform δ
/// that would make them feasible.
pub fn solve<T: Scalar>(lp: &LpInstance<T>, cost: &Matrix<T>, warm: Option<&Basis>) -> Result<PolicySolution<T>> {
    solve_with_merit(lp, cost, warm, None)
}

/// [`solve`] with merit weights available for the infeasibility hint.
pub fn solve_with_merit<T: Scalar>(
    lp: &LpInstance<T>,
    cost: &Matrix<T>,
    warm: Option<&Basis>,
    merit: Option<&MeritWeights<T>>,
) -> Result<PolicySolution<T>> {
    let n = lp.n;
    if cost.rows() != n || cost.cols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: cost.rows(),
        });
    }
    if cost.as_slice().iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("non-finite cost".into()));
    }
    let sol = simplex::solve(&lp.lp, cost.as_slice(), warm, &SimplexOptions::default())
        .map_err(|e| map_simplex_error(e, lp, merit))?;
    let violation = lp.lp.max_violation(&sol.x);
    if violation > T::feasibility_tol() * T::of(10.0) {
        return Err(Error::Internal(format!(
            "solution violates constraints by {:.3e}",
            violation.as_f64()
        )));
    }
    Ok(PolicySolution {
        policy: policy_from_x(n, &sol.x),
        objective: sol.objective,
        basis: sol.basis,
    })
}

/// Smallest uniform δ for which the instance is feasible: the minimum over the
/// Birkhoff polytope of `max_g |u_gᵀ Π v|`.
pub fn min_feasible_delta<T: Scalar>(
    n: usize,
    groups: &[usize],
    spec: &FairnessSpec<T>,
    merit: Option<&MeritWeights<T>>,
) -> Result<T> {
    if groups.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: groups.len(),
        });
    }
    if spec.mode == FairnessMode::None {
        return Ok(T::zero());
    }
    let v = position_bias(n, spec.p);
    let num_groups = num_groups_for(groups, spec);
    let t = n * n;
    let mut lp = birkhoff_lp::<T>(n, 1);
    lp.set_bounds(t, T::zero(), T::infinity());
    for u in item_weights(groups, num_groups, spec.mode, merit)?
        .into_iter()
        .flatten()
    {
        let coeffs = expression_coeffs(&u, &v);
        let mut up: Vec<(usize, T)> = coeffs.clone();
        up.push((t, -T::one()));
        let mut down: Vec<(usize, T)> = coeffs.iter().map(|&(k, c)| (k, -c)).collect();
        down.push((t, -T::one()));
        lp.add_constraint(up, Relation::Le, T::zero());
        lp.add_constraint(down, Relation::Le, T::zero());
    }
    let mut objective = vec![T::zero(); t + 1];
    objective[t] = -T::one();
    let sol = simplex::solve(&lp, &objective, None, &SimplexOptions::default())
        .map_err(|e| Error::Internal(format!("auxiliary LP: {e}")))?;
    Ok(sol.x[t].max(T::zero()))
}

/// Per-group violation `ν_g`, `None` for groups without items.
///
/// Mode `None` reports the unweighted violation.
pub fn fairness_violation<T: Scalar>(
    policy: &Policy<T>,
    groups: &[usize],
    spec: &FairnessSpec<T>,
    merit: Option<&MeritWeights<T>>,
) -> Result<Vec<Option<T>>> {
    let n = policy.n();
    if groups.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: groups.len(),
        });
    }
    let v = position_bias(n, spec.p);
    let e = policy.exposures(&v);
    let num_groups = num_groups_for(groups, spec);
    Ok(item_weights(groups, num_groups, spec.mode, merit)?
        .into_iter()
        .map(|u| u.map(|u| crate::linalg::dot(&u, &e)))
        .collect())
}

/// Solved policy in the caller's item order.
#[derive(Clone, Debug)]
pub struct CachedSolution<T> {
    pub policy: Policy<T>,
    pub objective: T,
    /// Basis in the cache's sorted item order, reusable as a warm start for
    /// the same signature.
    pub basis: Basis,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct CacheKey {
    signature: GroupSignature,
    mode: FairnessMode,
    delta: Vec<i64>,
    p: i64,
    merit: Option<(i64, Vec<Option<i64>>)>,
}

fn quantize<T: Scalar>(x: T) -> i64 {
    let f = x.as_f64();
    if f.is_infinite() {
        if f > 0.0 {
            i64::MAX
        } else {
            i64::MIN
        }
    } else {
        (f * 1e9).round() as i64
    }
}

struct CachedSolver<T> {
    instance: Arc<LpInstance<T>>,
    basis: Mutex<Option<Basis>>,
}

/// Solver states keyed by sorted group composition.
///
/// Items are stably sorted by group label so every query with the same group
/// counts shares one constraint system; cost rows are permuted into that
/// order and the solution rows are permuted back. For two groups over lists
/// of length `n` at most `n + 1` states are ever created.
pub struct SolverCache<T> {
    entries: RwLock<HashMap<CacheKey, Arc<CachedSolver<T>>>>,
}

impl<T: Scalar> Default for SolverCache<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> SolverCache<T> {
    pub fn new() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn entry(
        &self,
        sorted_groups: &[usize],
        spec: &FairnessSpec<T>,
        merit: Option<&MeritWeights<T>>,
    ) -> Result<Arc<CachedSolver<T>>> {
        let num_groups = num_groups_for(sorted_groups, spec);
        let key = CacheKey {
            signature: GroupSignature::of(sorted_groups, num_groups),
            mode: spec.mode,
            delta: spec.delta.iter().map(|&d| quantize(d)).collect(),
            p: quantize(spec.p),
            merit: match spec.mode {
                FairnessMode::MeritWeighted => {
                    merit.map(|m| (quantize(m.mu), m.mu_g.iter().map(|x| x.map(quantize)).collect()))
                }
                _ => None,
            },
        };
        if let Some(e) = self.entries.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(e));
        }
        let instance = build_lp(sorted_groups.len(), sorted_groups, spec, merit)?;
        let mut map = self.entries.write().expect("cache lock");
        let e = map.entry(key).or_insert_with(|| {
            Arc::new(CachedSolver {
                instance: Arc::new(instance),
                basis: Mutex::new(None),
            })
        });
        Ok(Arc::clone(e))
    }

    /// Shared constraint system for a query, plus the stable sort order of its items.
    pub fn instance(
        &self,
        groups: &[usize],
        spec: &FairnessSpec<T>,
        merit: Option<&MeritWeights<T>>,
    ) -> Result<(Arc<LpInstance<T>>, Vec<usize>)> {
        let order = stable_argsort(groups);
        let sorted: Vec<usize> = order.iter().map(|&i| groups[i]).collect();
        let e = self.entry(&sorted, spec, merit)?;
        Ok((Arc::clone(&e.instance), order))
    }

    /// Solves with the signature's stored basis as warm start and stores the
    /// resulting basis for the next call.
    pub fn solve_cached(
        &self,
        cost: &Matrix<T>,
        groups: &[usize],
        spec: &FairnessSpec<T>,
        merit: Option<&MeritWeights<T>>,
    ) -> Result<CachedSolution<T>> {
        let order = stable_argsort(groups);
        let sorted: Vec<usize> = order.iter().map(|&i| groups[i]).collect();
        let entry = self.entry(&sorted, spec, merit)?;
        let mut slot = entry.basis.lock().expect("basis lock");
        let sol = solve_sorted(&entry.instance, &order, cost, slot.as_ref(), merit)?;
        *slot = Some(sol.basis.clone());
        Ok(sol)
    }

    /// Like [`solve_cached`](Self::solve_cached) but with a caller-owned warm
    /// start; the shared basis is left untouched.
    pub fn solve_with_basis(
        &self,
        cost: &Matrix<T>,
        groups: &[usize],
        spec: &FairnessSpec<T>,
        merit: Option<&MeritWeights<T>>,
        warm: Option<&Basis>,
    ) -> Result<CachedSolution<T>> {
        let (instance, order) = self.instance(groups, spec, merit)?;
        solve_sorted(&instance, &order, cost, warm, merit)
    }
}

fn solve_sorted<T: Scalar>(
    instance: &LpInstance<T>,
    order: &[usize],
    cost: &Matrix<T>,
    warm: Option<&Basis>,
    merit: Option<&MeritWeights<T>>,
) -> Result<CachedSolution<T>> {
    if cost.rows() != order.len() {
        return Err(Error::Dimension {
            expected: order.len(),
            got: cost.rows(),
        });
    }
    let permuted = cost.select_rows(order);
    let sol = solve_with_merit(instance, &permuted, warm, merit)?;
    let back = invert_permutation(order);
    let matrix = sol.policy.matrix().select_rows(&back);
    Ok(CachedSolution {
        policy: Policy::new_unchecked(matrix),
        objective: sol.objective,
        basis: sol.basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::merit_weights;

    fn spec(mode: FairnessMode, delta: f64) -> FairnessSpec<f64> {
        FairnessSpec::new(mode, delta, 1.0)
    }

    #[test]
    fn constraint_counts() {
        let lp = build_lp(3, &[0, 0, 0], &spec(FairnessMode::None, 0.1), None).unwrap();
        assert_eq!(lp.num_equalities(), 6);
        assert_eq!(lp.num_fairness_rows(), 0);
        assert_eq!(lp.num_variables(), 9);
        for k in 0..9 {
            assert_eq!(lp.linear_program().bounds(k), (0.0, 1.0));
        }
        let lp = build_lp(2, &[0, 1], &spec(FairnessMode::Unweighted, 0.1), None).unwrap();
        assert_eq!(lp.num_fairness_rows(), 4);
    }

    #[test]
    fn merit_coefficients_use_group_averages() {
        let y = [1.0, 0.0, 1.0, 1.0];
        let groups = [0, 0, 1, 1];
        let m = merit_weights(&y, &groups, 2);
        let lp = build_lp(4, &groups, &spec(FairnessMode::MeritWeighted, 0.1), Some(&m)).unwrap();
        let rows = lp.fairness_rows();
        // u_0 = 0.75/2 on members minus 0.5/4 everywhere.
        assert!((rows[0].item_weights[0] - (0.375 - 0.125)).abs() < 1e-15);
        assert!((rows[0].item_weights[2] + 0.125).abs() < 1e-15);
        // u_1 = 0.75/2 on members minus 1.0/4 everywhere.
        assert!((rows[1].item_weights[2] - (0.375 - 0.25)).abs() < 1e-15);
        assert!((rows[1].item_weights[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn empty_group_constraint_is_dropped_with_warning() {
        let s = FairnessSpec::per_group(FairnessMode::Unweighted, vec![0.1, 0.1, 0.1], 1.0);
        let lp = build_lp(3, &[0, 0, 2], &s, None).unwrap();
        assert_eq!(lp.num_fairness_rows(), 4);
        assert_eq!(lp.warnings().len(), 1);
        let v = fairness_violation(&Policy::uniform(3), &[0, 0, 2], &s, None).unwrap();
        assert!(v[1].is_none());
    }

    #[test]
    fn unconstrained_sorts_best_item_first() {
        let lp = build_lp(2, &[0, 1], &spec(FairnessMode::None, 0.0), None).unwrap();
        let cost = Matrix::outer(&[3.0, 1.0], &[1.0, 0.6309]);
        let s = solve(&lp, &cost, None).unwrap();
        assert_eq!(s.policy.matrix(), &Matrix::identity(2));
    }

    #[test]
    fn zero_delta_two_items_forces_uniform() {
        // Π = [[a,1-a],[1-a,a]] gives ν_0 = (a-1/2)(v1-v2)/2, zero only at a = 1/2.
        for a in [0.0, 0.25, 0.49, 0.51, 1.0] {
            let m = Matrix::from_rows(&[vec![a, 1.0 - a], vec![1.0 - a, a]]);
            let nu = fairness_violation(
                &Policy::new(m).unwrap(),
                &[0, 1],
                &spec(FairnessMode::Unweighted, 0.0),
                None,
            )
            .unwrap();
            assert!(nu[0].unwrap().abs() > 1e-4);
        }
        let lp = build_lp(2, &[0, 1], &spec(FairnessMode::Unweighted, 0.0), None).unwrap();
        let cost = Matrix::outer(&[3.0, 1.0], &[1.0, 0.6309]);
        let s = solve(&lp, &cost, None).unwrap();
        let expect = Matrix::filled(2, 2, 0.5);
        assert!(s.policy.matrix().max_abs_diff(&expect) < 1e-9);
    }

    #[test]
    fn violation_of_identity_two_items() {
        let nu = fairness_violation(
            &Policy::identity(2),
            &[0, 1],
            &spec(FairnessMode::Unweighted, 0.0),
            None,
        )
        .unwrap();
        assert!((nu[0].unwrap() - 1.0 / 12.0).abs() < 1e-15);
        assert!((nu[1].unwrap() + 1.0 / 12.0).abs() < 1e-15);
        let nu = fairness_violation(
            &Policy::uniform(5),
            &[0, 1, 1, 0, 1],
            &spec(FairnessMode::Unweighted, 0.0),
            None,
        )
        .unwrap();
        assert!(nu.iter().all(|x| x.unwrap().abs() < 1e-15));
    }

    #[test]
    fn min_feasible_delta_cases() {
        let z = min_feasible_delta(4, &[0, 1, 1, 0], &spec(FairnessMode::Unweighted, 0.0), None).unwrap();
        assert!(z.abs() < 1e-9);
        let y = [1.0, 0.0, 0.5];
        let m = merit_weights(&y, &[0, 0, 0], 1);
        let z = min_feasible_delta(3, &[0, 0, 0], &spec(FairnessMode::MeritWeighted, 0.0), Some(&m)).unwrap();
        assert!(z.abs() < 1e-9);

        // n=2, y=(1,0): both group expressions reduce to ±e_1/2 with
        // e_1 ∈ [1/3, 1/2], so the scan minimum is 1/6.
        let m = merit_weights(&[1.0, 0.0], &[0, 1], 2);
        let s = spec(FairnessMode::MeritWeighted, 0.0);
        let scan = (0..=1000)
            .map(|k| {
                let a = k as f64 / 1000.0;
                let pol = Policy::new(Matrix::from_rows(&[vec![a, 1.0 - a], vec![1.0 - a, a]])).unwrap();
                fairness_violation(&pol, &[0, 1], &s, Some(&m))
                    .unwrap()
                    .into_iter()
                    .flatten()
                    .fold(0.0f64, |acc, x| acc.max(x.abs()))
            })
            .fold(f64::INFINITY, f64::min);
        let z = min_feasible_delta(2, &[0, 1], &s, Some(&m)).unwrap();
        assert!(z > 0.0);
        assert!((z - scan).abs() < 1e-9, "{z} vs {scan}");
        assert!((z - 1.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_merit_reports_hint() {
        let m = merit_weights(&[1.0, 0.0], &[0, 1], 2);
        let lp = build_lp(2, &[0, 1], &spec(FairnessMode::MeritWeighted, 0.01), Some(&m)).unwrap();
        let cost = Matrix::outer(&[1.0, 0.0], &[1.0, 0.63]);
        match solve_with_merit(&lp, &cost, None, Some(&m)) {
            Err(Error::Infeasible { min_feasible_delta }) => {
                assert!((min_feasible_delta - 1.0 / 6.0).abs() < 1e-9)
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn cached_solve_matches_swapped_rows() {
        let cache = SolverCache::new();
        let s = spec(FairnessMode::Unweighted, 0.05);
        let w = [1.0, 0.6309, 0.5];
        let c1 = Matrix::outer(&[0.9, 0.2, 0.5], &w);
        let c2 = c1.select_rows(&[1, 0, 2]);
        let a = cache.solve_cached(&c1, &[1, 0, 0], &s, None).unwrap();
        let b = cache.solve_cached(&c2, &[0, 1, 0], &s, None).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-12);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn lp_format_dump_has_sections() {
        let lp = build_lp(2, &[0, 1], &spec(FairnessMode::Unweighted, 0.1), None).unwrap();
        let text = lp.to_lp_format(&Matrix::outer(&[1.0, 0.0], &[1.0, 0.5]));
        for section in ["Maximize", "Subject To", "Bounds", "End"] {
            assert!(text.contains(section));
        }
        assert_eq!(text.matches(" <= 0.1").count(), 4);
    }

    #[test]
    fn policy_csv_rows() {
        let csv = Policy::<f64>::identity(2).to_csv();
        assert_eq!(csv, "1,0\n0,1\n");
    }
}
