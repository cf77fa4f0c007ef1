//! Birkhoff–von Neumann decomposition of ranking policies and deployment-time
//! sampling of concrete rankings.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fairlp::{Policy, POLICY_TOL};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Convex combination of permutation matrices. `terms[k].1[i]` is the
/// 0-based position of item `i` in the k-th ranking.
#[derive(Clone, Debug, PartialEq)]
pub struct BvnDecomposition<T> {
    pub terms: Vec<(T, Vec<usize>)>,
}

impl<T: Scalar> BvnDecomposition<T> {
    pub fn n(&self) -> usize {
        self.terms.first().map_or(0, |t| t.1.len())
    }

    /// `Σ μ_k P(σ_k)`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for (mu, sigma) in &self.terms {
            for (i, &j) in sigma.iter().enumerate() {
                m[(i, j)] += *mu;
            }
        }
        m
    }

    /// CSV rows `coefficient,pos_0,...,pos_{n-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (mu, sigma) in &self.terms {
            out.push_str(&mu.to_string());
            for p in sigma {
                out.push(',');
                out.push_str(&p.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Kuhn's augmenting-path matching of rows to columns over `allowed` edges.
fn perfect_matching(n: usize, allowed: impl Fn(usize, usize) -> bool) -> Option<Vec<usize>> {
    fn augment(
        row: usize,
        n: usize,
        allowed: &dyn Fn(usize, usize) -> bool,
        seen: &mut [bool],
        col_owner: &mut [Option<usize>],
    ) -> bool {
        for col in 0..n {
            if !allowed(row, col) || seen[col] {
                continue;
            }
            seen[col] = true;
            let free = match col_owner[col] {
                None => true,
                Some(other) => augment(other, n, allowed, seen, col_owner),
            };
            if free {
                col_owner[col] = Some(row);
                return true;
            }
        }
        false
    }

    let mut col_owner = vec![None; n];
    for row in 0..n {
        let mut seen = vec![false; n];
        if !augment(row, n, &allowed, &mut seen, &mut col_owner) {
            return None;
        }
    }
    let mut sigma = vec![0; n];
    for (col, owner) in col_owner.into_iter().enumerate() {
        sigma[owner.expect("perfect matching covers every column")] = col;
    }
    Some(sigma)
}

/// Greedy decomposition: repeatedly match items to positions on the support
/// of the residual, peel off the smallest matched entry, and stop once the
/// residual mass falls below the dust level.
pub fn decompose<T: Scalar>(policy: &Policy<T>) -> Result<BvnDecomposition<T>> {
    policy.check().map_err(|_| Error::NotDoublyStochastic {
        residual_mass: f64::NAN,
    })?;
    let n = policy.n();
    let dust = T::dust();
    let mut residual = policy.matrix().map(|x| if x > dust { x } else { T::zero() });
    let nf = T::of(n as f64);
    let mut terms: Vec<(T, Vec<usize>)> = Vec::new();
    loop {
        let mass = residual.as_slice().iter().copied().sum::<T>() / nf;
        if mass < dust {
            break;
        }
        let Some(sigma) = perfect_matching(n, |i, j| residual[(i, j)] > dust) else {
            // Leftover attributable to the policy's own row/column tolerance.
            if mass.as_f64() <= POLICY_TOL * n as f64 {
                break;
            }
            return Err(Error::NotDoublyStochastic {
                residual_mass: mass.as_f64(),
            });
        };
        let coef = sigma
            .iter()
            .enumerate()
            .map(|(i, &j)| residual[(i, j)])
            .fold(T::infinity(), T::min);
        for (i, &j) in sigma.iter().enumerate() {
            let r = residual[(i, j)] - coef;
            residual[(i, j)] = if r > dust { r } else { T::zero() };
        }
        terms.push((coef, sigma));
        if terms.len() > n * n {
            return Err(Error::Internal("decomposition did not terminate".into()));
        }
    }
    let total: T = terms.iter().map(|t| t.0).sum();
    if total <= T::zero() {
        return Err(Error::NotDoublyStochastic { residual_mass: 0.0 });
    }
    for t in &mut terms {
        t.0 /= total;
    }
    Ok(BvnDecomposition { terms })
}

/// Draws ranking `k` with probability `μ_k`.
pub fn sample_ranking<T: Scalar, R: Rng + ?Sized>(d: &BvnDecomposition<T>, rng: &mut R) -> Vec<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (mu, sigma) in &d.terms {
        acc += mu.as_f64();
        if u < acc {
            return sigma.clone();
        }
    }
    d.terms.last().expect("non-empty decomposition").1.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn permutation_is_a_single_term() {
        let p = Policy::<f64>::from_permutation(&[2, 0, 1]);
        let d = decompose(&p).unwrap();
        assert_eq!(d.terms, vec![(1.0, vec![2, 0, 1])]);
    }

    #[test]
    fn uniform_two_by_two() {
        let d = decompose(&Policy::<f64>::uniform(2)).unwrap();
        let mut terms = d.terms.clone();
        terms.sort_by(|a, b| a.1.cmp(&b.1));
        assert_eq!(terms, vec![(0.5, vec![0, 1]), (0.5, vec![1, 0])]);
    }

    #[test]
    fn rejects_non_doubly_stochastic() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert!(matches!(
            decompose(&Policy::new_unchecked(m)),
            Err(Error::NotDoublyStochastic { .. })
        ));
    }

    #[test]
    fn single_term_sampling_is_constant() {
        let d = BvnDecomposition {
            terms: vec![(1.0, vec![1, 0, 2])],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_ranking(&d, &mut rng), vec![1, 0, 2]);
        }
    }

    #[test]
    fn csv_export() {
        let d = BvnDecomposition {
            terms: vec![(0.5, vec![0, 1]), (0.5, vec![1, 0])],
        };
        assert_eq!(d.to_csv(), "0.5,0,1\n0.5,1,0\n");
    }
}
