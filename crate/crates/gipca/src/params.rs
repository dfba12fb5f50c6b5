//! Model parameters: per-source means, the joint score/loading pair shared
//! across sources, and per-source individual score/loading pairs; plus
//! natural-parameter assembly, the observed-data log-likelihood, and the
//! identifiability-condition checks.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dataset::{MultiSourceDataset, ObservationPattern};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("joint rank {joint} exceeds min(n-1, min_k p_k) = {bound}")]
    JointTooLarge { joint: usize, bound: usize },
    #[error(
        "source {source_index}: joint rank {joint} + individual rank {individual} \
         exceeds min(n_k-1, p_k) = {bound}"
    )]
    CombinedTooLarge { source_index: usize, joint: usize, individual: usize, bound: usize },
    #[error("rank spec has {got} individual ranks, dataset has {want} sources")]
    Arity { got: usize, want: usize },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(
        "non-finite natural parameter in source {source_index} at observed row {row}, column {col}"
    )]
    NonFiniteTheta { source_index: usize, row: usize, col: usize },
    #[error("model parameters sized for {got} sources, dataset has {want}")]
    Arity { got: usize, want: usize },
    #[error("source {source_index}: parameter block is {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    Shape {
        source_index: usize,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
}

/// Joint rank plus one individual rank per source.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RankSpec {
    pub joint: usize,
    pub individual: Vec<usize>,
}

impl RankSpec {
    pub fn new(joint: usize, individual: Vec<usize>) -> Self {
        Self { joint, individual }
    }

    pub fn zero(n_sources: usize) -> Self {
        Self { joint: 0, individual: vec![0; n_sources] }
    }

    /// Check the rank bounds against dataset dimensions. The `-1` against
    /// the printed `min(n, p_k)` bounds accounts for column-centering, which
    /// removes one degree of freedom from every score matrix.
    pub fn validate<T: Scalar>(&self, ds: &MultiSourceDataset<T>) -> Result<(), RankError> {
        if self.individual.len() != ds.n_sources() {
            return Err(RankError::Arity { got: self.individual.len(), want: ds.n_sources() });
        }
        let p_min = (0..ds.n_sources()).map(|k| ds.p(k)).min().unwrap_or(0);
        let joint_bound = (ds.n() - 1).min(p_min);
        if self.joint > joint_bound {
            return Err(RankError::JointTooLarge { joint: self.joint, bound: joint_bound });
        }
        for k in 0..ds.n_sources() {
            let bound = (ds.pattern().n_observed(k) - 1).min(ds.p(k));
            if self.joint + self.individual[k] > bound {
                return Err(RankError::CombinedTooLarge {
                    source_index: k,
                    joint: self.joint,
                    individual: self.individual[k],
                    bound,
                });
            }
        }
        Ok(())
    }
}

/// The full parameter set of the decomposition.
///
/// Shapes: `means[k]` is `p_k`; `joint_scores` is `n×r_J`; `joint_loadings[k]`
/// is `p_k×r_J`; `individual_scores[k]` is `n_k×r_k` (observed rows only, in
/// pattern order); `individual_loadings[k]` is `p_k×r_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    pub means: Vec<DVector<T>>,
    pub joint_scores: DMatrix<T>,
    pub joint_loadings: Vec<DMatrix<T>>,
    pub individual_scores: Vec<DMatrix<T>>,
    pub individual_loadings: Vec<DMatrix<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters of the given shape.
    pub fn zeros(n: usize, p: &[usize], n_obs: &[usize], ranks: &RankSpec) -> Self {
        let k = p.len();
        Self {
            means: p.iter().map(|&pk| DVector::zeros(pk)).collect(),
            joint_scores: DMatrix::zeros(n, ranks.joint),
            joint_loadings: p.iter().map(|&pk| DMatrix::zeros(pk, ranks.joint)).collect(),
            individual_scores: (0..k)
                .map(|j| DMatrix::zeros(n_obs[j], ranks.individual[j]))
                .collect(),
            individual_loadings: (0..k)
                .map(|j| DMatrix::zeros(p[j], ranks.individual[j]))
                .collect(),
        }
    }

    pub fn n_sources(&self) -> usize {
        self.means.len()
    }

    pub fn ranks(&self) -> RankSpec {
        RankSpec {
            joint: self.joint_scores.ncols(),
            individual: self.individual_scores.iter().map(|u| u.ncols()).collect(),
        }
    }

    /// Verify internal shape consistency against a dataset.
    pub fn validate_shapes(&self, ds: &MultiSourceDataset<T>) -> Result<(), EvalError> {
        let k = ds.n_sources();
        if self.n_sources() != k
            || self.joint_loadings.len() != k
            || self.individual_scores.len() != k
            || self.individual_loadings.len() != k
        {
            return Err(EvalError::Arity { got: self.n_sources(), want: k });
        }
        let r_j = self.joint_scores.ncols();
        if self.joint_scores.nrows() != ds.n() {
            return Err(EvalError::Shape {
                source_index: 0,
                got_rows: self.joint_scores.nrows(),
                got_cols: r_j,
                want_rows: ds.n(),
                want_cols: r_j,
            });
        }
        for s in 0..k {
            let p = ds.p(s);
            let n_k = ds.pattern().n_observed(s);
            let r_k = self.individual_loadings[s].ncols();
            let checks = [
                (self.means[s].nrows(), 1, p, 1),
                (self.joint_loadings[s].nrows(), self.joint_loadings[s].ncols(), p, r_j),
                (
                    self.individual_scores[s].nrows(),
                    self.individual_scores[s].ncols(),
                    n_k,
                    r_k,
                ),
                (
                    self.individual_loadings[s].nrows(),
                    self.individual_loadings[s].ncols(),
                    p,
                    r_k,
                ),
            ];
            for (got_rows, got_cols, want_rows, want_cols) in checks {
                if got_rows != want_rows || got_cols != want_cols {
                    return Err(EvalError::Shape {
                        source_index: s,
                        got_rows,
                        got_cols,
                        want_rows,
                        want_cols,
                    });
                }
            }
        }
        Ok(())
    }

    /// Natural parameters of source `k` on its observed rows:
    /// `1·μᵀ + U₀[O_k]·Vᵀ + U*·Aᵀ` (an `n_k×p_k` matrix).
    pub fn natural_params(&self, pattern: &ObservationPattern, k: usize) -> DMatrix<T> {
        let rows = pattern.observed(k);
        let mut theta = self.joint_natural_params(rows, k);
        if self.individual_scores[k].ncols() > 0 {
            theta.gemm(
                T::one(),
                &self.individual_scores[k],
                &self.individual_loadings[k].transpose(),
                T::one(),
            );
        }
        theta
    }

    /// Mean-plus-joint natural parameters `1·μᵀ + U₀[rows]·Vᵀ` of source `k`
    /// on an arbitrary set of global sample rows. This is the structure used
    /// to impute block-wise missing rows.
    pub fn joint_natural_params(&self, rows: &[usize], k: usize) -> DMatrix<T> {
        let p = self.means[k].nrows();
        let r_j = self.joint_scores.ncols();
        let mut theta = DMatrix::from_fn(rows.len(), p, |_, j| self.means[k][j]);
        if r_j > 0 {
            let u0 = self.joint_scores.select_rows(rows.iter());
            theta.gemm(T::one(), &u0, &self.joint_loadings[k].transpose(), T::one());
        }
        theta
    }
}

/// Observed-data log-likelihood: the sum of entry log-densities over every
/// observed entry of every source, at the natural parameters implied by
/// `psi`. Errors with the offending location if `psi` produces a non-finite
/// natural parameter.
pub fn log_likelihood<T: Scalar>(
    ds: &MultiSourceDataset<T>,
    psi: &ModelParams<T>,
) -> Result<T, EvalError> {
    psi.validate_shapes(ds)?;
    let mut total = T::zero();
    for k in 0..ds.n_sources() {
        let theta = psi.natural_params(ds.pattern(), k);
        let x = ds.data(k);
        let spec = ds.source(k);
        for (t, &sample) in ds.pattern().observed(k).iter().enumerate() {
            for j in 0..spec.p {
                let th = theta[(t, j)];
                if !th.is_finite() {
                    return Err(EvalError::NonFiniteTheta { source_index: k, row: sample, col: j });
                }
                total += spec.entry_kind(sample, j).log_density(x[(t, j)], th);
            }
        }
    }
    Ok(total)
}

/// Worst violations of the identifiability conditions, one field per
/// condition. All magnitudes are absolute.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentReport<T: Scalar> {
    /// Max |column mean| over joint-score columns and zero-filled
    /// individual-score columns.
    pub max_score_col_mean: T,
    /// Max entry of `[1, U₀]ᵀ·Ũ_k` over sources (`Ũ_k` zero-filled).
    pub max_joint_cross: T,
    /// Max off-diagonal of `U₀ᵀU₀`.
    pub max_offdiag_joint_scores: T,
    /// Max off-diagonal of `U*ᵀU*` over sources.
    pub max_offdiag_individual_scores: T,
    /// Max off-diagonal of `VᵀV` for the stacked joint loadings.
    pub max_offdiag_joint_loadings: T,
    /// Max off-diagonal of `A_kᵀA_k` over sources.
    pub max_offdiag_individual_loadings: T,
}

impl<T: Scalar> IdentReport<T> {
    pub fn pass(&self, tol: T) -> bool {
        self.worst() <= tol
    }

    pub fn worst(&self) -> T {
        [
            self.max_score_col_mean,
            self.max_joint_cross,
            self.max_offdiag_joint_scores,
            self.max_offdiag_individual_scores,
            self.max_offdiag_joint_loadings,
            self.max_offdiag_individual_loadings,
        ]
        .into_iter()
        .fold(T::zero(), |a, b| a.max(b))
    }
}

fn max_abs_offdiag<T: Scalar>(gram: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            if i != j {
                worst = worst.max(gram[(i, j)].abs());
            }
        }
    }
    worst
}

/// Evaluate the identifiability conditions: column-centered scores, joint
/// scores orthogonal to each (zero-filled) individual score matrix, and
/// orthogonal columns within every score and loading matrix.
pub fn check_identifiability<T: Scalar>(
    psi: &ModelParams<T>,
    pattern: &ObservationPattern,
) -> IdentReport<T> {
    let n = psi.joint_scores.nrows();
    let n_t = T::from_usize_c(n);
    let mut max_mean = T::zero();
    for col in psi.joint_scores.column_iter() {
        max_mean = max_mean.max((col.sum() / n_t).abs());
    }
    for u in &psi.individual_scores {
        // zero-filled column mean = (sum over observed rows) / n
        for col in u.column_iter() {
            max_mean = max_mean.max((col.sum() / n_t).abs());
        }
    }

    let mut max_cross = T::zero();
    for (k, u) in psi.individual_scores.iter().enumerate() {
        if u.ncols() == 0 {
            continue;
        }
        // [1, U0]ᵀ Ũ_k computed on observed rows only (the zero-filled rows
        // contribute nothing).
        for col in u.column_iter() {
            max_cross = max_cross.max(col.sum().abs());
        }
        if psi.joint_scores.ncols() > 0 {
            let u0_obs = psi.joint_scores.select_rows(pattern.observed(k).iter());
            let cross = u0_obs.transpose() * u;
            max_cross = max_cross.max(cross.abs().max());
        }
    }

    let gram_u0 = psi.joint_scores.transpose() * &psi.joint_scores;
    let stacked_v_rows: usize = psi.joint_loadings.iter().map(|v| v.nrows()).sum();
    let r_j = psi.joint_scores.ncols();
    let mut gram_v = DMatrix::zeros(r_j, r_j);
    let _ = stacked_v_rows;
    for v in &psi.joint_loadings {
        gram_v += v.transpose() * v;
    }

    let mut max_ustar = T::zero();
    let mut max_a = T::zero();
    for (u, a) in psi.individual_scores.iter().zip(&psi.individual_loadings) {
        max_ustar = max_ustar.max(max_abs_offdiag(&(u.transpose() * u)));
        max_a = max_a.max(max_abs_offdiag(&(a.transpose() * a)));
    }

    IdentReport {
        max_score_col_mean: max_mean,
        max_joint_cross: max_cross,
        max_offdiag_joint_scores: max_abs_offdiag(&gram_u0),
        max_offdiag_individual_scores: max_ustar,
        max_offdiag_joint_loadings: max_abs_offdiag(&gram_v),
        max_offdiag_individual_loadings: max_a,
    }
}
