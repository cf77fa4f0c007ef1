//! Utility and fairness measurements for rankings and ranking policies.

use crate::datasets::MeritWeights;
use crate::error::{Error, Result};
use crate::fairlp::{fairness_violation, FairnessSpec, Policy};
use crate::linalg::dot;
use crate::scalar::Scalar;

/// Violation slack used when counting δ-fair queries.
pub const CONFIDENCE_TOL: f64 = 1e-6;

/// Default δ sweep grid.
pub const DELTA_GRID: [f64; 9] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4];

/// Position discounts `w_i = 1/log2(1+i)`, `i = 1..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountVector<T>(Vec<T>);

impl<T: Scalar> DiscountVector<T> {
    pub fn new(n: usize) -> Self {
        Self(
            (1..=n)
                .map(|i| T::one() / (T::one() + T::of(i as f64)).log2())
                .collect(),
        )
    }

    /// Arbitrary weights, e.g. for tests with rounded values.
    pub fn from_weights(w: Vec<T>) -> Self {
        Self(w)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `Σ_i y_i w_{σ_i}` where `sigma[i]` is the 0-based position of item `i`.
pub fn dcg<T: Scalar>(sigma: &[usize], y: &[T], w: &DiscountVector<T>) -> T {
    sigma.iter().zip(y).map(|(&pos, &yi)| yi * w.0[pos]).sum()
}

/// `yᵀ Π w`.
pub fn expected_dcg<T: Scalar>(policy: &Policy<T>, y: &[T], w: &DiscountVector<T>) -> T {
    dot(&policy.matrix().vec_mul(y), &w.0)
}

/// Positions that sort `y` descending, ties by item index.
pub fn ideal_ranking<T: Scalar>(y: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| {
        y[b].partial_cmp(&y[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut sigma = vec![0; y.len()];
    for (pos, &item) in order.iter().enumerate() {
        sigma[item] = pos;
    }
    sigma
}

pub fn max_attainable_dcg<T: Scalar>(y: &[T], w: &DiscountVector<T>) -> T {
    dcg(&ideal_ranking(y), y, w)
}

/// One query's policy with the data needed to evaluate its fairness.
#[derive(Clone, Debug)]
pub struct QueryPolicy<'a, T> {
    pub policy: &'a Policy<T>,
    pub groups: &'a [usize],
    pub merit: Option<&'a MeritWeights<T>>,
}

/// Whether `max_g |ν_g| ≤ δ_g` up to [`CONFIDENCE_TOL`].
pub fn is_delta_fair<T: Scalar>(q: &QueryPolicy<'_, T>, spec: &FairnessSpec<T>) -> Result<bool> {
    let nu = fairness_violation(q.policy, q.groups, spec, q.merit)?;
    let tol = T::of(CONFIDENCE_TOL);
    Ok(nu
        .iter()
        .enumerate()
        .all(|(g, v)| v.is_none_or(|v| v.abs() <= spec.delta_for(g) + tol)))
}

/// Fraction of queries whose policy is δ-fair.
pub fn delta_fairness_confidence<T: Scalar>(queries: &[QueryPolicy<'_, T>], spec: &FairnessSpec<T>) -> Result<f64> {
    if queries.is_empty() {
        return Ok(1.0);
    }
    let mut fair = 0usize;
    for q in queries {
        if is_delta_fair(q, spec)? {
            fair += 1;
        }
    }
    Ok(fair as f64 / queries.len() as f64)
}

/// `|(1_g/|G_g| − 1_g'/|G_g'|)ᵀ Π v|` for every unordered pair of present
/// groups, as `(g, g', disparity)`.
pub fn pairwise_disparities<T: Scalar>(
    policy: &Policy<T>,
    groups: &[usize],
    v: &[T],
) -> Result<Vec<(usize, usize, T)>> {
    let n = policy.n();
    if groups.len() != n || v.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: groups.len().min(v.len()),
        });
    }
    let e = policy.exposures(v);
    let num_groups = groups.iter().max().map_or(0, |&g| g + 1);
    let mut sums = vec![T::zero(); num_groups];
    let mut counts = vec![0usize; num_groups];
    for (&g, &ei) in groups.iter().zip(&e) {
        sums[g] += ei;
        counts[g] += 1;
    }
    let means: Vec<(usize, T)> = (0..num_groups)
        .filter(|&g| counts[g] > 0)
        .map(|g| (g, sums[g] / T::of(counts[g] as f64)))
        .collect();
    if means.len() < 2 {
        return Err(Error::InvalidArgument(
            "pairwise disparity needs at least two groups".into(),
        ));
    }
    let mut out = Vec::new();
    for (a, &(g, mg)) in means.iter().enumerate() {
        for &(h, mh) in &means[a + 1..] {
            out.push((g, h, (mg - mh).abs()));
        }
    }
    Ok(out)
}

/// Sum of pairwise group exposure disparities over unordered pairs.
pub fn pairwise_disparity<T: Scalar>(policy: &Policy<T>, groups: &[usize], v: &[T]) -> Result<T> {
    Ok(pairwise_disparities(policy, groups, v)?
        .into_iter()
        .map(|(_, _, d)| d)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairlp::{position_bias, FairnessMode};
    use crate::linalg::Matrix;

    fn w2() -> DiscountVector<f64> {
        DiscountVector::new(2)
    }

    #[test]
    fn discounts() {
        let w = DiscountVector::<f64>::new(4);
        assert_eq!(w.as_slice()[0], 1.0);
        assert!((w.as_slice()[1] - 0.630_929_753_571_457_4).abs() < 1e-15);
        assert!(w.as_slice().windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn dcg_examples() {
        assert_eq!(dcg(&[0, 1], &[1.0, 0.0], &w2()), 1.0);
        assert!((dcg(&[0, 1], &[0.0, 1.0], &w2()) - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert_eq!(dcg(&[1, 0], &[0.0, 0.0], &w2()), 0.0);
    }

    #[test]
    fn expected_dcg_examples() {
        let y = [0.3, 0.9];
        assert_eq!(expected_dcg(&Policy::identity(2), &y, &w2()), dcg(&[0, 1], &y, &w2()));
        let e = expected_dcg(&Policy::uniform(2), &[1.0, 0.0], &w2());
        assert!((e - 0.5 * (1.0 + 1.0 / 3f64.log2())).abs() < 1e-15);
        assert!((e - 0.81546).abs() < 1e-5);
    }

    #[test]
    fn max_attainable_examples() {
        let w = DiscountVector::from_weights(vec![1.0, 0.63093]);
        assert_eq!(max_attainable_dcg(&[0.0, 1.0], &w), 1.0);
        let w4 = DiscountVector::<f64>::new(4);
        let c = max_attainable_dcg(&[0.5; 4], &w4);
        let total: f64 = w4.as_slice().iter().sum();
        assert!((c - 0.5 * total).abs() < 1e-15);
    }

    #[test]
    fn confidence_examples() {
        let groups = [0, 1];
        let id = Policy::identity(2);
        let qs = vec![QueryPolicy {
            policy: &id,
            groups: &groups,
            merit: None,
        }];
        let strict = FairnessSpec::new(FairnessMode::Unweighted, 0.01, 1.0);
        assert_eq!(delta_fairness_confidence(&qs, &strict).unwrap(), 0.0);
        let loose = FairnessSpec::new(FairnessMode::Unweighted, f64::INFINITY, 1.0);
        assert_eq!(delta_fairness_confidence(&qs, &loose).unwrap(), 1.0);
    }

    #[test]
    fn disparity_examples() {
        let v = position_bias::<f64>(4, 1.0);
        let groups = [0, 1, 1, 2];
        assert!(pairwise_disparity(&Policy::uniform(4), &groups, &v).unwrap() < 1e-15);
        assert!(pairwise_disparity(&Policy::identity(3), &[0, 0, 0], &v[..3]).is_err());

        // Two groups: |ν_0 − ν_1|.
        let m = Matrix::from_rows(&[vec![0.7, 0.3, 0.0], vec![0.3, 0.5, 0.2], vec![0.0, 0.2, 0.8]]);
        let p = Policy::new(m).unwrap();
        let g = [0, 1, 1];
        let v3 = position_bias::<f64>(3, 1.0);
        let spec = FairnessSpec::new(FairnessMode::Unweighted, 0.0, 1.0);
        let nu = crate::fairlp::fairness_violation(&p, &g, &spec, None).unwrap();
        let d = pairwise_disparity(&p, &g, &v3).unwrap();
        assert!((d - (nu[0].unwrap() - nu[1].unwrap()).abs()).abs() < 1e-15);
    }
}
