//! Bounded-variable primal simplex on a dense tableau.
//!
//! Problems are stated as `maximize cᵀx` subject to sparse rows `aᵀx {≤,=,≥} b`
//! and box bounds `l ≤ x ≤ u`. Internally every `≤`/`≥` row receives a slack and
//! every row receives an artificial column, so the working matrix is
//! `[A | S | R]`. The returned [`Basis`] can be handed back to [`solve`] for a
//! problem with the same constraint system and a different objective; a
//! primal feasible warm basis skips phase one entirely.
//!
//! Pricing is Dantzig's largest reduced cost with ties going to the lowest
//! variable index. After a run of degenerate pivots the solver switches to
//! Bland's rule until a pivot makes progress again.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint<T> {
    pub coeffs: Vec<(usize, T)>,
    pub relation: Relation,
    pub rhs: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram<T> {
    num_vars: usize,
    lower: Vec<T>,
    upper: Vec<T>,
    constraints: Vec<Constraint<T>>,
}

impl<T: Scalar> LinearProgram<T> {
    /// `num_vars` variables with bounds `[0, +inf)`.
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            lower: vec![T::zero(); num_vars],
            upper: vec![T::infinity(); num_vars],
            constraints: Vec::new(),
        }
    }

    pub fn set_bounds(&mut self, var: usize, lower: T, upper: T) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, T)>, relation: Relation, rhs: T) {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.num_vars));
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn constraints(&self) -> &[Constraint<T>] {
        &self.constraints
    }

    pub fn bounds(&self, var: usize) -> (T, T) {
        (self.lower[var], self.upper[var])
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for c in &self.constraints {
            let lhs: T = c.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let viol = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    fn num_slacks(&self) -> usize {
        self.constraints.iter().filter(|c| c.relation != Relation::Eq).count()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SimplexOptions {
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub stall_threshold: usize,
    pub max_iterations: usize,
    /// Pivots between tableau refactorizations.
    pub refactor_interval: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            stall_threshold: 50,
            max_iterations: 100_000,
            refactor_interval: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Status {
    Basic,
    Lower,
    Upper,
}

/// A simplex basis: which column is basic in each row, and the bound at which
/// every nonbasic column rests.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Basis {
    basic: Vec<usize>,
    status: Vec<Status>,
    artificial_sign: Vec<bool>,
}

impl Basis {
    pub fn num_rows(&self) -> usize {
        self.basic.len()
    }

    pub fn num_columns(&self) -> usize {
        self.status.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SimplexError {
    /// Phase one ended with positive artificial mass.
    Infeasible {
        infeasibility: f64,
    },
    Unbounded,
    IterationLimit,
    Singular,
}

impl std::fmt::Display for SimplexError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimplexError::Infeasible { infeasibility } => {
                write!(f, "infeasible (artificial mass {infeasibility:.3e})")
            }
            SimplexError::Unbounded => write!(f, "unbounded"),
            SimplexError::IterationLimit => write!(f, "iteration limit reached"),
            SimplexError::Singular => write!(f, "singular basis"),
        }
    }
}

impl std::error::Error for SimplexError {}

#[derive(Clone, Debug)]
pub struct Solution<T> {
    pub x: Vec<T>,
    pub objective: T,
    pub basis: Basis,
    pub iterations: usize,
    /// True when the supplied warm basis was primal feasible and phase one was skipped.
    pub warm_started: bool,
}

/// Maximizes `objective · x` over the feasible region of `lp`.
pub fn solve<T: Scalar>(
    lp: &LinearProgram<T>,
    objective: &[T],
    warm: Option<&Basis>,
    opts: &SimplexOptions,
) -> Result<Solution<T>, SimplexError> {
    assert_eq!(objective.len(), lp.num_vars, "objective length");
    let mut tab = Tableau::new(lp);
    let mut warm_started = false;
    if let Some(b) = warm {
        if tab.load_basis(b).is_ok() && tab.is_primal_feasible() {
            warm_started = true;
        }
    }
    let mut iterations = 0;
    if !warm_started {
        tab.cold_start();
        iterations += tab.phase_one(opts)?;
    }
    let mut cost = vec![T::zero(); tab.ncols];
    cost[..lp.num_vars].copy_from_slice(objective);
    iterations += tab.optimize(&cost, opts)?;
    let x = tab.primal_values();
    let structural = x[..lp.num_vars].to_vec();
    let objective_value = structural.iter().zip(objective).map(|(&a, &b)| a * b).sum();
    Ok(Solution {
        x: structural,
        objective: objective_value,
        basis: tab.basis(),
        iterations,
        warm_started,
    })
}

struct Tableau<'a, T> {
    lp: &'a LinearProgram<T>,
    m: usize,
    ncols: usize,
    /// Dense `[A | S | R]`, row-major, used for refactorization.
    a: Vec<T>,
    rhs: Vec<T>,
    lower: Vec<T>,
    upper: Vec<T>,
    artificial_start: usize,
    artificial_sign: Vec<bool>,
    /// `B⁻¹ [A | S | R]`, row-major m × ncols.
    t: Vec<T>,
    beta: Vec<T>,
    basic: Vec<usize>,
    status: Vec<Status>,
    /// Reduced costs for the current objective.
    d: Vec<T>,
    cost: Vec<T>,
    pivots_since_refactor: usize,
}

impl<'a, T: Scalar> Tableau<'a, T> {
    fn new(lp: &'a LinearProgram<T>) -> Self {
        let m = lp.constraints.len();
        let nv = lp.num_vars;
        let ns = lp.num_slacks();
        let ncols = nv + ns + m;
        let mut a = vec![T::zero(); m * ncols];
        let mut rhs = vec![T::zero(); m];
        let mut lower = vec![T::zero(); ncols];
        let mut upper = vec![T::infinity(); ncols];
        lower[..nv].copy_from_slice(&lp.lower);
        upper[..nv].copy_from_slice(&lp.upper);
        let mut slack = nv;
        for (r, c) in lp.constraints.iter().enumerate() {
            let row = &mut a[r * ncols..(r + 1) * ncols];
            for &(j, v) in &c.coeffs {
                row[j] += v;
            }
            rhs[r] = c.rhs;
            match c.relation {
                Relation::Le => {
                    row[slack] = T::one();
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -T::one();
                    slack += 1;
                }
                Relation::Eq => {}
            }
            row[nv + ns + r] = T::one();
        }
        Self {
            lp,
            m,
            ncols,
            a,
            rhs,
            lower,
            upper,
            artificial_start: nv + ns,
            artificial_sign: vec![true; m],
            t: vec![T::zero(); m * ncols],
            beta: vec![T::zero(); m],
            basic: vec![0; m],
            status: vec![Status::Lower; ncols],
            d: vec![T::zero(); ncols],
            cost: vec![T::zero(); ncols],
            pivots_since_refactor: 0,
        }
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.artificial_start
    }

    fn set_artificial_sign(&mut self, r: usize, positive: bool) {
        self.artificial_sign[r] = positive;
        let col = self.artificial_start + r;
        self.a[r * self.ncols + col] = if positive { T::one() } else { -T::one() };
    }

    fn nonbasic_value(&self, j: usize) -> T {
        match self.status[j] {
            Status::Upper => self.upper[j],
            _ => {
                if self.lower[j].is_finite() {
                    self.lower[j]
                } else if self.upper[j].is_finite() {
                    self.upper[j]
                } else {
                    T::zero()
                }
            }
        }
    }

    fn cold_start(&mut self) {
        let nv = self.lp.num_vars;
        for j in 0..self.ncols {
            self.status[j] = if self.lower[j].is_finite() || !self.upper[j].is_finite() {
                Status::Lower
            } else {
                Status::Upper
            };
        }
        for r in 0..self.m {
            self.upper[self.artificial_start + r] = T::infinity();
        }
        // Residual of each row with every structural column at its resting bound.
        let mut slack = nv;
        for r in 0..self.m {
            let row = &self.a[r * self.ncols..(r + 1) * self.ncols];
            let mut resid = self.rhs[r];
            for (j, &a) in row.iter().enumerate().take(nv) {
                if a != T::zero() {
                    resid -= a * self.nonbasic_value(j);
                }
            }
            let relation = self.lp.constraints[r].relation;
            let slack_col = if relation == Relation::Eq {
                None
            } else {
                let s = slack;
                slack += 1;
                Some(s)
            };
            let slack_coeff = match relation {
                Relation::Le => T::one(),
                Relation::Ge => -T::one(),
                Relation::Eq => T::zero(),
            };
            match slack_col {
                Some(s) if resid * slack_coeff >= T::zero() => {
                    self.basic[r] = s;
                    self.status[s] = Status::Basic;
                    self.set_artificial_sign(r, true);
                }
                _ => {
                    let art = self.artificial_start + r;
                    self.set_artificial_sign(r, resid >= T::zero());
                    self.basic[r] = art;
                    self.status[art] = Status::Basic;
                }
            }
        }
        self.refactor().expect("crash basis is a signed identity");
    }

    fn load_basis(&mut self, b: &Basis) -> Result<(), SimplexError> {
        if b.basic.len() != self.m || b.status.len() != self.ncols {
            return Err(SimplexError::Singular);
        }
        for r in 0..self.m {
            self.set_artificial_sign(r, b.artificial_sign[r]);
            self.upper[self.artificial_start + r] = T::zero();
        }
        self.basic.clone_from(&b.basic);
        self.status.clone_from(&b.status);
        self.refactor()
    }

    fn basis(&self) -> Basis {
        Basis {
            basic: self.basic.clone(),
            status: self.status.clone(),
            artificial_sign: self.artificial_sign.clone(),
        }
    }

    fn is_primal_feasible(&self) -> bool {
        let tol = T::feasibility_tol();
        self.basic
            .iter()
            .zip(&self.beta)
            .all(|(&j, &v)| v >= self.lower[j] - tol && v <= self.upper[j] + tol)
    }

    /// Rebuilds `B⁻¹[A|S|R]` and the basic values from the original data.
    fn refactor(&mut self) -> Result<(), SimplexError> {
        let m = self.m;
        let n = self.ncols;
        // Gauss-Jordan on [B | I].
        let mut bmat = vec![T::zero(); m * m];
        for r in 0..m {
            for (k, &j) in self.basic.iter().enumerate() {
                bmat[r * m + k] = self.a[r * n + j];
            }
        }
        let mut inv = vec![T::zero(); m * m];
        for i in 0..m {
            inv[i * m + i] = T::one();
        }
        for col in 0..m {
            let mut piv = col;
            let mut best = bmat[col * m + col].abs();
            for r in col + 1..m {
                let v = bmat[r * m + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best <= T::epsilon() * T::of(1e3) {
                return Err(SimplexError::Singular);
            }
            if piv != col {
                for k in 0..m {
                    bmat.swap(piv * m + k, col * m + k);
                    inv.swap(piv * m + k, col * m + k);
                }
            }
            let p = bmat[col * m + col];
            for k in 0..m {
                bmat[col * m + k] /= p;
                inv[col * m + k] /= p;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = bmat[r * m + col];
                if f == T::zero() {
                    continue;
                }
                for k in 0..m {
                    let bv = bmat[col * m + k];
                    let iv = inv[col * m + k];
                    bmat[r * m + k] -= f * bv;
                    inv[r * m + k] -= f * iv;
                }
            }
        }
        // t = inv · a
        self.t.iter_mut().for_each(|v| *v = T::zero());
        for r in 0..m {
            for k in 0..m {
                let f = inv[r * m + k];
                if f == T::zero() {
                    continue;
                }
                let src = &self.a[k * n..(k + 1) * n];
                let dst = &mut self.t[r * n..(r + 1) * n];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += f * s;
                }
            }
        }
        // beta = inv · (b - N x_N)
        let mut resid = self.rhs.clone();
        for j in 0..n {
            if self.status[j] == Status::Basic {
                continue;
            }
            let v = self.nonbasic_value(j);
            if v == T::zero() {
                continue;
            }
            for (r, res) in resid.iter_mut().enumerate() {
                *res -= self.a[r * n + j] * v;
            }
        }
        for r in 0..m {
            self.beta[r] = (0..m).map(|k| inv[r * m + k] * resid[k]).sum();
        }
        // Basic columns are exact unit vectors.
        for (r, &j) in self.basic.iter().enumerate() {
            for k in 0..m {
                self.t[k * n + j] = if k == r { T::one() } else { T::zero() };
            }
        }
        self.pivots_since_refactor = 0;
        self.recompute_reduced_costs();
        Ok(())
    }

    fn recompute_reduced_costs(&mut self) {
        let n = self.ncols;
        self.d.clone_from(&self.cost);
        for r in 0..self.m {
            let cb = self.cost[self.basic[r]];
            if cb == T::zero() {
                continue;
            }
            let row = &self.t[r * n..(r + 1) * n];
            for (d, &t) in self.d.iter_mut().zip(row) {
                *d -= cb * t;
            }
        }
        for &j in &self.basic {
            self.d[j] = T::zero();
        }
    }

    fn phase_one(&mut self, opts: &SimplexOptions) -> Result<usize, SimplexError> {
        let mut cost = vec![T::zero(); self.ncols];
        for r in 0..self.m {
            cost[self.artificial_start + r] = -T::one();
        }
        let iters = self.optimize(&cost, opts)?;
        let mass: T = self
            .basic
            .iter()
            .zip(&self.beta)
            .filter(|(&j, _)| self.is_artificial(j))
            .map(|(_, &v)| v.abs())
            .sum();
        let scale = self.rhs.iter().fold(T::one(), |acc, &b| acc.max(b.abs()));
        if mass > T::feasibility_tol() * scale {
            return Err(SimplexError::Infeasible {
                infeasibility: mass.as_f64(),
            });
        }
        // Artificials are fixed at zero from here on.
        for r in 0..self.m {
            let art = self.artificial_start + r;
            self.upper[art] = T::zero();
            if self.status[art] == Status::Upper {
                self.status[art] = Status::Lower;
            }
        }
        self.drive_out_artificials();
        Ok(iters)
    }

    /// Replaces zero-level basic artificials by structural or slack columns
    /// where the row allows it; rows that remain are linearly redundant.
    fn drive_out_artificials(&mut self) {
        let n = self.ncols;
        for r in 0..self.m {
            let j = self.basic[r];
            if !self.is_artificial(j) {
                continue;
            }
            let mut best: Option<(usize, T)> = None;
            for k in 0..self.artificial_start {
                if self.status[k] == Status::Basic || self.lower[k] == self.upper[k] {
                    continue;
                }
                let v = self.t[r * n + k].abs();
                if v > T::pivot_tol() * T::of(1e2) && best.is_none_or(|(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
            if let Some((k, _)) = best {
                // Degenerate pivot: the artificial leaves at zero, the
                // entering column keeps its bound value.
                let enter_value = self.nonbasic_value(k);
                let shift = self.beta[r];
                let alpha = self.t[r * n + k];
                let step = shift / alpha;
                for i in 0..self.m {
                    self.beta[i] -= self.t[i * n + k] * step;
                }
                self.beta[r] = enter_value + step;
                self.pivot(r, k, Status::Lower);
            }
        }
        self.beta
            .iter_mut()
            .zip(&self.basic)
            .filter(|(_, &j)| j >= self.artificial_start)
            .for_each(|(v, _)| *v = T::zero());
    }

    /// Primal simplex on the current basis with the given cost vector.
    fn optimize(&mut self, cost: &[T], opts: &SimplexOptions) -> Result<usize, SimplexError> {
        self.cost.clear();
        self.cost.extend_from_slice(cost);
        self.recompute_reduced_costs();
        let n = self.ncols;
        let opt_tol = T::optimality_tol();
        let piv_tol = T::pivot_tol();
        let mut iterations = 0;
        let mut degenerate_run = 0;
        let mut bland = false;
        let mut verified = false;
        loop {
            if iterations >= opts.max_iterations {
                return Err(SimplexError::IterationLimit);
            }
            if self.pivots_since_refactor >= opts.refactor_interval {
                self.refactor()?;
            }
            // Pricing.
            let mut entering: Option<(usize, T)> = None;
            for j in 0..n {
                let st = self.status[j];
                if st == Status::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                let dj = self.d[j];
                let gain = match st {
                    Status::Lower if dj > opt_tol => dj,
                    Status::Upper if dj < -opt_tol => -dj,
                    _ => continue,
                };
                if bland {
                    entering = Some((j, gain));
                    break;
                }
                if entering.is_none_or(|(_, g)| gain > g) {
                    entering = Some((j, gain));
                }
            }
            let Some((j, _)) = entering else {
                if verified {
                    return Ok(iterations);
                }
                // Confirm optimality on a fresh factorization.
                self.refactor()?;
                verified = true;
                continue;
            };
            verified = false;
            let dir = if self.status[j] == Status::Upper {
                -T::one()
            } else {
                T::one()
            };

            // Ratio test.
            let mut step = self.upper[j] - self.lower[j];
            let mut leave: Option<(usize, Status)> = None;
            for r in 0..self.m {
                let alpha = dir * self.t[r * n + j];
                let bj = self.basic[r];
                let limit = if alpha > piv_tol {
                    if !self.lower[bj].is_finite() {
                        continue;
                    }
                    ((self.beta[r] - self.lower[bj]) / alpha).max(T::zero())
                } else if alpha < -piv_tol {
                    if !self.upper[bj].is_finite() {
                        continue;
                    }
                    ((self.upper[bj] - self.beta[r]) / -alpha).max(T::zero())
                } else {
                    continue;
                };
                let to = if alpha > T::zero() {
                    Status::Lower
                } else {
                    Status::Upper
                };
                let better = match leave {
                    None => limit < step,
                    Some((lr, _)) => limit < step || (limit == step && bj < self.basic[lr]),
                };
                if better {
                    step = limit;
                    leave = Some((r, to));
                }
            }
            if !step.is_finite() {
                return Err(SimplexError::Unbounded);
            }
            iterations += 1;
            if step <= T::epsilon() {
                degenerate_run += 1;
                if degenerate_run >= opts.stall_threshold {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }
            let delta = dir * step;
            for r in 0..self.m {
                let a = self.t[r * n + j];
                if a != T::zero() {
                    self.beta[r] -= a * delta;
                }
            }
            match leave {
                None => {
                    // Bound flip.
                    self.status[j] = if self.status[j] == Status::Upper {
                        Status::Lower
                    } else {
                        Status::Upper
                    };
                }
                Some((r, to)) => {
                    self.beta[r] = self.nonbasic_value(j) + delta;
                    self.pivot(r, j, to);
                }
            }
        }
    }

    /// Makes column `j` basic in row `r`; the previous basic column rests at `to`.
    fn pivot(&mut self, r: usize, j: usize, to: Status) {
        let n = self.ncols;
        let leaving = self.basic[r];
        let p = self.t[r * n + j];
        {
            let row = &mut self.t[r * n..(r + 1) * n];
            for v in row.iter_mut() {
                *v /= p;
            }
            row[j] = T::one();
        }
        let (before, rest) = self.t.split_at_mut(r * n);
        let (prow, after) = rest.split_at_mut(n);
        for other in before.chunks_mut(n).chain(after.chunks_mut(n)) {
            let f = other[j];
            if f == T::zero() {
                continue;
            }
            for (o, &pv) in other.iter_mut().zip(prow.iter()) {
                *o -= f * pv;
            }
            other[j] = T::zero();
        }
        let f = self.d[j];
        if f != T::zero() {
            for (d, &pv) in self.d.iter_mut().zip(prow.iter()) {
                *d -= f * pv;
            }
        }
        self.d[j] = T::zero();
        self.basic[r] = j;
        self.status[j] = Status::Basic;
        self.status[leaving] = if self.lower[leaving] == self.upper[leaving] {
            Status::Lower
        } else {
            to
        };
        self.pivots_since_refactor += 1;
    }

    fn primal_values(&self) -> Vec<T> {
        let mut x: Vec<T> = (0..self.ncols)
            .map(|j| {
                if self.status[j] == Status::Basic {
                    T::zero()
                } else {
                    self.nonbasic_value(j)
                }
            })
            .collect();
        for (r, &j) in self.basic.iter().enumerate() {
            x[j] = self.beta[r].max(self.lower[j]).min(self.upper[j]);
        }
        x
    }
}
