//! Transition estimation from batch count data: the MLE, the Dirichlet
//! posterior mean, and the generic weighted-average regularized estimate
//! `(1 - eps) * T_mle + eps * T_reg`.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::mdp::ROW_SUM_TOL;

/// Per-`(s, a, s')` nonnegative transition observation counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    counts: Array3<u64>,
}

impl TransitionCounts {
    pub fn new(counts: Array3<u64>) -> Result<Self> {
        let (n, _, n2) = counts.dim();
        if n == 0 || counts.dim().1 == 0 {
            return Err(Error::InvalidParameter(
                "counts need at least one state and one action".into(),
            ));
        }
        if n != n2 {
            return Err(Error::InvalidParameter(format!(
                "counts tensor must be square in states, got {:?}",
                counts.dim()
            )));
        }
        Ok(Self { counts })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            counts: Array3::zeros((n_states, n_actions, n_states)),
        }
    }

    pub fn record(&mut self, s: usize, a: usize, s_next: usize) {
        self.counts[[s, a, s_next]] += 1;
    }

    pub fn add(&mut self, s: usize, a: usize, s_next: usize, k: u64) {
        self.counts[[s, a, s_next]] += k;
    }

    pub fn counts(&self) -> &Array3<u64> {
        &self.counts
    }

    pub fn n_states(&self) -> usize {
        self.counts.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.counts.dim().1
    }

    /// Total observations out of `(s, a)`.
    pub fn row_total(&self, s: usize, a: usize) -> u64 {
        self.counts.slice(ndarray::s![s, a, ..]).sum()
    }

    pub fn row_totals(&self) -> Array2<u64> {
        let (n, a, _) = self.counts.dim();
        Array2::from_shape_fn((n, a), |(s, k)| self.row_total(s, k))
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }
}

/// MLE transition estimate plus the mask of rows with no observations.
/// Empty rows are all-zero in `probs` and flagged in `empty_rows`; downstream
/// regularizers replace them with the regularization row (forced eps = 1).
#[derive(Debug, Clone)]
pub struct MleEstimate {
    pub probs: Array3<f64>,
    pub empty_rows: Array2<bool>,
}

/// Normalized count rows; rows with zero total are returned as zeros and
/// flagged rather than raising an error.
pub fn mle_estimate(counts: &TransitionCounts) -> MleEstimate {
    let (n, a, _) = counts.counts().dim();
    let mut probs = Array3::<f64>::zeros((n, a, n));
    let mut empty = Array2::from_elem((n, a), false);
    for s in 0..n {
        for k in 0..a {
            let total = counts.row_total(s, k);
            if total == 0 {
                empty[[s, k]] = true;
            } else {
                for j in 0..n {
                    probs[[s, k, j]] = counts.counts()[[s, k, j]] as f64 / total as f64;
                }
            }
        }
    }
    MleEstimate {
        probs,
        empty_rows: empty,
    }
}

/// Dirichlet prior over every transition row, indexed `(s, a, s')`.
///
/// [`DirichletPrior::new`] requires strictly positive parameters. The prior
/// implied by discount regularization assigns zero magnitude to rows with no
/// observations; those are representable through the crate-internal
/// constructor and flagged by [`DirichletPrior::zero_magnitude_rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPrior {
    alpha: Array3<f64>,
}

impl DirichletPrior {
    pub fn new(alpha: Array3<f64>) -> Result<Self> {
        let (n, a, n2) = alpha.dim();
        if n == 0 || a == 0 || n != n2 {
            return Err(Error::InvalidParameter(format!(
                "prior tensor has bad shape {:?}",
                alpha.dim()
            )));
        }
        if alpha.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::InvalidParameter(
                "Dirichlet parameters must be finite and strictly positive".into(),
            ));
        }
        Ok(Self { alpha })
    }

    /// Uniform prior with the same parameter on every cell.
    pub fn uniform(n_states: usize, n_actions: usize, alpha_i: f64) -> Result<Self> {
        if !alpha_i.is_finite() || alpha_i <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "uniform Dirichlet parameter must be positive, got {alpha_i}"
            )));
        }
        Ok(Self {
            alpha: Array3::from_elem((n_states, n_actions, n_states), alpha_i),
        })
    }

    /// Uniform-row prior built from per-row magnitudes; zero magnitudes are
    /// permitted and flagged (the implied-prior case for unobserved rows).
    pub(crate) fn from_uniform_row_magnitudes(magnitudes: &Array2<f64>) -> Result<Self> {
        let (n, a) = magnitudes.dim();
        if magnitudes.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidParameter(
                "prior magnitudes must be finite and nonnegative".into(),
            ));
        }
        let mut alpha = Array3::<f64>::zeros((n, a, n));
        for s in 0..n {
            for k in 0..a {
                let cell = magnitudes[[s, k]] / n as f64;
                for j in 0..n {
                    alpha[[s, k, j]] = cell;
                }
            }
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> &Array3<f64> {
        &self.alpha
    }

    pub fn n_states(&self) -> usize {
        self.alpha.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.alpha.dim().1
    }

    /// Row magnitude: the sum of the row's Dirichlet parameters.
    pub fn row_magnitude(&self, s: usize, a: usize) -> f64 {
        self.alpha.slice(ndarray::s![s, a, ..]).sum()
    }

    /// Rows carrying zero prior mass (only produced by the implied prior).
    pub fn zero_magnitude_rows(&self) -> Array2<bool> {
        let (n, a, _) = self.alpha.dim();
        Array2::from_shape_fn((n, a), |(s, k)| self.row_magnitude(s, k) == 0.0)
    }

    /// Prior mean rows `alpha / sum(alpha)`; zero-magnitude rows fall back to
    /// the uniform row, matching the empty-row convention.
    pub fn mean(&self) -> Array3<f64> {
        let (n, a, _) = self.alpha.dim();
        let mut mean = Array3::<f64>::zeros((n, a, n));
        for s in 0..n {
            for k in 0..a {
                let total = self.row_magnitude(s, k);
                for j in 0..n {
                    mean[[s, k, j]] = if total > 0.0 {
                        self.alpha[[s, k, j]] / total
                    } else {
                        1.0 / n as f64
                    };
                }
            }
        }
        mean
    }
}

/// Posterior mean of the transition matrix under a Dirichlet prior:
/// row `(s, a)` is `(c_i + alpha_i) / (sum c + sum alpha)`, equivalently the
/// weighted average of the MLE row and the prior mean with
/// `eps = sum alpha / (sum c + sum alpha)`.
///
/// Rows where both the counts and the prior magnitude are zero take the
/// uniform row (the empty-row convention with a uniform regularizer).
pub fn dirichlet_posterior_mean(
    counts: &TransitionCounts,
    prior: &DirichletPrior,
) -> Result<Array3<f64>> {
    let dim = counts.counts().dim();
    if prior.alpha().dim() != dim {
        return Err(Error::InvalidParameter(format!(
            "prior shape {:?} does not match counts shape {:?}",
            prior.alpha().dim(),
            dim
        )));
    }
    let (n, a, _) = dim;
    let mut post = Array3::<f64>::zeros(dim);
    for s in 0..n {
        for k in 0..a {
            let c_total = counts.row_total(s, k) as f64;
            let a_total = prior.row_magnitude(s, k);
            let denom = c_total + a_total;
            for j in 0..n {
                post[[s, k, j]] = if denom > 0.0 {
                    (counts.counts()[[s, k, j]] as f64 + prior.alpha()[[s, k, j]]) / denom
                } else {
                    1.0 / n as f64
                };
            }
        }
    }
    Ok(post)
}

/// Weighted-average regularized transition tensor:
/// `(1 - eps[s,a]) * t_mle(s,a) + eps[s,a] * t_reg(s,a)`.
///
/// `t_reg` rows must each sum to 1 (prior mean) or 0 (zeros matrix) within
/// tolerance; anything else is rejected rather than silently renormalized.
/// Empty MLE rows take `t_reg`'s row regardless of `eps` (forced eps = 1).
pub fn weighted_average_regularize(
    mle: &MleEstimate,
    t_reg: &Array3<f64>,
    eps: &Array2<f64>,
) -> Result<Array3<f64>> {
    let dim = mle.probs.dim();
    if t_reg.dim() != dim {
        return Err(Error::InvalidParameter(format!(
            "regularization tensor shape {:?} does not match MLE shape {:?}",
            t_reg.dim(),
            dim
        )));
    }
    let (n, a, _) = dim;
    if eps.dim() != (n, a) {
        return Err(Error::InvalidParameter(format!(
            "eps field shape {:?} does not match ({n}, {a})",
            eps.dim()
        )));
    }
    if eps.iter().any(|e| !e.is_finite() || *e < 0.0 || *e > 1.0) {
        return Err(Error::InvalidParameter(
            "eps entries must lie in [0, 1]".into(),
        ));
    }
    for s in 0..n {
        for k in 0..a {
            let row = t_reg.slice(ndarray::s![s, k, ..]);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "regularization row ({s}, {k}) has negative or non-finite entries"
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL && sum.abs() > ROW_SUM_TOL {
                return Err(Error::InvalidParameter(format!(
                    "regularization row ({s}, {k}) sums to {sum}; expected 1 or 0"
                )));
            }
        }
    }

    let mut out = Array3::<f64>::zeros(dim);
    for s in 0..n {
        for k in 0..a {
            if mle.empty_rows[[s, k]] {
                for j in 0..n {
                    out[[s, k, j]] = t_reg[[s, k, j]];
                }
            } else {
                let e = eps[[s, k]];
                for j in 0..n {
                    out[[s, k, j]] = (1.0 - e) * mle.probs[[s, k, j]] + e * t_reg[[s, k, j]];
                }
            }
        }
    }
    Ok(out)
}

/// Uniform stochastic tensor (every row 1/N), the regularizer behind the
/// uniform Dirichlet prior.
pub fn uniform_tensor(n_states: usize, n_actions: usize) -> Array3<f64> {
    Array3::from_elem((n_states, n_actions, n_states), 1.0 / n_states as f64)
}

/// All-zeros tensor, the regularizer equivalent to discount regularization.
pub fn zeros_tensor(n_states: usize, n_actions: usize) -> Array3<f64> {
    Array3::zeros((n_states, n_actions, n_states))
}

/// Builds counts from `(s, a, s_next, count)` entries, the counts-file row
/// format.
pub fn counts_from_slice(
    n: usize,
    a: usize,
    rows: &[(usize, usize, usize, u64)],
) -> Result<TransitionCounts> {
    let mut c = TransitionCounts::zeros(n, a);
    for &(s, k, j, count) in rows {
        if s >= n || k >= a || j >= n {
            return Err(Error::InvalidParameter(format!(
                "count entry ({s}, {k}, {j}) out of range for ({n}, {a})"
            )));
        }
        c.add(s, k, j, count);
    }
    Ok(c)
}

/// One-row counts helper, convenient in tests and the ε*-table path.
pub fn counts_from_rows(rows: Array3<u64>) -> Result<TransitionCounts> {
    TransitionCounts::new(rows)
}

impl MleEstimate {
    /// Wraps a known probability tensor as a non-empty MLE (all rows observed).
    pub fn from_probs(probs: Array3<f64>) -> Self {
        let (n, a, _) = probs.dim();
        Self {
            probs,
            empty_rows: Array2::from_elem((n, a), false),
        }
    }
}

/// Per-row epsilon from counts and a prior: `sum alpha / (sum c + sum alpha)`.
pub fn eps_from_prior(counts: &TransitionCounts, prior: &DirichletPrior) -> Array2<f64> {
    let (n, a) = (counts.n_states(), counts.n_actions());
    Array2::from_shape_fn((n, a), |(s, k)| {
        let c = counts.row_total(s, k) as f64;
        let m = prior.row_magnitude(s, k);
        if c + m > 0.0 {
            m / (c + m)
        } else {
            1.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn one_row_counts(row: &[u64]) -> TransitionCounts {
        let n = row.len();
        let mut arr = Array3::<u64>::zeros((n, 1, n));
        for (j, &c) in row.iter().enumerate() {
            arr[[0, 0, j]] = c;
        }
        TransitionCounts::new(arr).unwrap()
    }

    #[test]
    fn mle_normalizes_counts() {
        let counts = one_row_counts(&[2, 0, 2]);
        let est = mle_estimate(&counts);
        assert_abs_diff_eq!(est.probs[[0, 0, 0]], 0.5);
        assert_abs_diff_eq!(est.probs[[0, 0, 1]], 0.0);
        assert_abs_diff_eq!(est.probs[[0, 0, 2]], 0.5);
        assert!(!est.empty_rows[[0, 0]]);
    }

    #[test]
    fn mle_symmetric_counts_uniform() {
        let counts = one_row_counts(&[1, 1, 1, 1]);
        let est = mle_estimate(&counts);
        for j in 0..4 {
            assert_abs_diff_eq!(est.probs[[0, 0, j]], 0.25);
        }
    }

    #[test]
    fn mle_empty_row_masked() {
        let counts = one_row_counts(&[0, 0, 0]);
        let est = mle_estimate(&counts);
        assert!(est.empty_rows[[0, 0]]);
        assert_eq!(est.probs.slice(ndarray::s![0, 0, ..]).sum(), 0.0);
    }

    #[test]
    fn posterior_mean_matches_weighted_average_path() {
        let counts = one_row_counts(&[3, 1]);
        let prior = DirichletPrior::uniform(2, 1, 1.0).unwrap();
        let post = dirichlet_posterior_mean(&counts, &prior).unwrap();
        assert_abs_diff_eq!(post[[0, 0, 0]], 4.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post[[0, 0, 1]], 2.0 / 6.0, epsilon = 1e-15);

        // Same thing through the weighted-average route with eps = 1/3.
        let mle = mle_estimate(&counts);
        let eps = eps_from_prior(&counts, &prior);
        assert_abs_diff_eq!(eps[[0, 0]], 1.0 / 3.0, epsilon = 1e-15);
        let avg = weighted_average_regularize(&mle, &prior.mean(), &eps).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(post[[0, 0, j]], avg[[0, 0, j]], epsilon = 1e-12);
        }
    }

    #[test]
    fn posterior_mean_no_data_is_prior_mean() {
        let counts = one_row_counts(&[0, 0, 0]);
        let mut alpha = Array3::<f64>::zeros((3, 1, 3));
        for s in 0..3 {
            for (j, v) in [1.0, 2.0, 3.0].iter().enumerate() {
                alpha[[s, 0, j]] = *v;
            }
        }
        let prior = DirichletPrior::new(alpha).unwrap();
        let post = dirichlet_posterior_mean(&counts, &prior).unwrap();
        assert_abs_diff_eq!(post[[0, 0, 0]], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post[[0, 0, 1]], 2.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post[[0, 0, 2]], 3.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn posterior_mean_vanishing_prior_approaches_mle() {
        let counts = one_row_counts(&[3, 1]);
        let prior = DirichletPrior::uniform(2, 1, 1e-9).unwrap();
        let post = dirichlet_posterior_mean(&counts, &prior).unwrap();
        assert_abs_diff_eq!(post[[0, 0, 0]], 0.75, epsilon = 1e-6);
        assert_abs_diff_eq!(post[[0, 0, 1]], 0.25, epsilon = 1e-6);
    }

    #[test]
    fn weighted_average_identity_and_full() {
        let counts = one_row_counts(&[3, 1]);
        let mle = mle_estimate(&counts);
        let unif = uniform_tensor(2, 1);
        let id = weighted_average_regularize(&mle, &unif, &Array2::zeros((2, 1))).unwrap();
        assert_abs_diff_eq!(id[[0, 0, 0]], 0.75, epsilon = 1e-15);
        let full = weighted_average_regularize(&mle, &unif, &Array2::from_elem((2, 1), 1.0)).unwrap();
        for s in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(full[[s, 0, j]], 0.5, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn weighted_average_with_zeros_matrix_is_substochastic() {
        let counts = one_row_counts(&[3, 1]);
        let mle = mle_estimate(&counts);
        let zeros = zeros_tensor(2, 1);
        let eps = Array2::from_elem((2, 1), 0.5);
        let out = weighted_average_regularize(&mle, &zeros, &eps).unwrap();
        assert_abs_diff_eq!(out[[0, 0, 0]], 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(out[[0, 0, 1]], 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(out.slice(ndarray::s![0, 0, ..]).sum(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn weighted_average_rejects_bad_inputs() {
        let counts = one_row_counts(&[3, 1]);
        let mle = mle_estimate(&counts);
        let unif = uniform_tensor(2, 1);
        let bad_eps = Array2::from_elem((2, 1), 1.5);
        assert!(weighted_average_regularize(&mle, &unif, &bad_eps).is_err());
        // Rows summing to 0.5 are neither stochastic nor zero.
        let half = Array3::from_elem((2, 1, 2), 0.25);
        let eps = Array2::from_elem((2, 1), 0.5);
        assert!(weighted_average_regularize(&mle, &half, &eps).is_err());
    }

    #[test]
    fn empty_rows_forced_to_regularizer() {
        let mut arr = Array3::<u64>::zeros((2, 1, 2));
        arr[[0, 0, 0]] = 4;
        let counts = TransitionCounts::new(arr).unwrap();
        let mle = mle_estimate(&counts);
        assert!(mle.empty_rows[[1, 0]]);
        let unif = uniform_tensor(2, 1);
        let eps = Array2::zeros((2, 1));
        let out = weighted_average_regularize(&mle, &unif, &eps).unwrap();
        // eps = 0 everywhere, but the empty row still takes the uniform row.
        assert_abs_diff_eq!(out[[1, 0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out[[0, 0, 0]], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn prior_requires_positive_parameters() {
        assert!(DirichletPrior::new(array![[[1.0, 0.0]]]).is_err());
        assert!(DirichletPrior::uniform(2, 1, 0.0).is_err());
    }

    proptest! {
        // Posterior mean and the eps-weighted average agree to 1e-12 for all
        // counts and priors.
        #[test]
        fn posterior_weighted_average_identity(
            c in proptest::collection::vec(0u64..200, 2..8),
            raw_alpha in proptest::collection::vec(0.01f64..50.0, 2..8),
        ) {
            let n = c.len().min(raw_alpha.len());
            let counts = one_row_counts(&c[..n]);
            let mut alpha = Array3::<f64>::zeros((n, 1, n));
            for j in 0..n {
                for s in 0..n {
                    alpha[[s, 0, j]] = raw_alpha[j];
                }
            }
            let prior = DirichletPrior::new(alpha).unwrap();
            let post = dirichlet_posterior_mean(&counts, &prior).unwrap();
            let mle = mle_estimate(&counts);
            let eps = eps_from_prior(&counts, &prior);
            let avg = weighted_average_regularize(&mle, &prior.mean(), &eps).unwrap();
            for s in 0..n {
                for j in 0..n {
                    prop_assert!((post[[s, 0, j]] - avg[[s, 0, j]]).abs() <= 1e-12);
                }
            }
        }

        // Increasing a row's prior magnitude strictly increases its eps.
        #[test]
        fn eps_monotone_in_prior_magnitude(
            c_total in 1u64..500,
            alpha_small in 0.01f64..10.0,
            bump in 0.01f64..10.0,
        ) {
            let counts = one_row_counts(&[c_total, 0]);
            let small = DirichletPrior::uniform(2, 1, alpha_small / 2.0).unwrap();
            let big = DirichletPrior::uniform(2, 1, (alpha_small + bump) / 2.0).unwrap();
            let e_small = eps_from_prior(&counts, &small)[[0, 0]];
            let e_big = eps_from_prior(&counts, &big)[[0, 0]];
            prop_assert!(e_big > e_small);
        }

        // Output rows sum to 1 under a stochastic regularizer and to 1 - eps
        // under the zeros matrix.
        #[test]
        fn row_sums_after_regularization(
            c in proptest::collection::vec(1u64..100, 2..6),
            eps in 0.0f64..=1.0,
        ) {
            let n = c.len();
            let counts = one_row_counts(&c);
            let mle = mle_estimate(&counts);
            let eps_field = Array2::from_elem((n, 1), eps);
            let unif = uniform_tensor(n, 1);
            let with_unif = weighted_average_regularize(&mle, &unif, &eps_field).unwrap();
            prop_assert!((with_unif.slice(ndarray::s![0, 0, ..]).sum() - 1.0).abs() <= 1e-9);
            let zeros = zeros_tensor(n, 1);
            let with_zeros = weighted_average_regularize(&mle, &zeros, &eps_field).unwrap();
            prop_assert!((with_zeros.slice(ndarray::s![0, 0, ..]).sum() - (1.0 - eps)).abs() <= 1e-9);
        }
    }
}
