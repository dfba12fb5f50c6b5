//! Block coordinate descent fitter.
//!
//! Each sweep alternates (a) per-column GLMs for the means and joint
//! loadings, (b) per-sample heterogeneous-link IRLS for the joint scores,
//! (c) per-source alternation of individual-loading rows and
//! individual-score rows, then (d) the identifiability regularization, which
//! re-parameterizes without changing the observed-entry likelihood. The
//! recorded log-likelihood is non-decreasing across sweeps; a sweep whose net
//! effect would decrease it is rejected and the fit stops at the previous
//! iterate.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

use crate::dataset::{MultiSourceDataset, ObservationPattern};
use crate::exp_family::DistributionKind;
use crate::glm::{fit_glm, GlmConfig, GlmError, GlmProblem};
use crate::params::{
    check_identifiability, log_likelihood, EvalError, ModelParams, RankError, RankSpec,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("GLM subproblem failed in step {step}, source {source_index}, index {index}")]
    Glm {
        step: &'static str,
        source_index: usize,
        index: usize,
        #[source]
        cause: GlmError,
    },
    #[error(
        "identifiability repair stalled: worst violation {worst} after {passes} extra passes"
    )]
    IdentRepairStalled { worst: f64, passes: usize },
}

#[derive(Debug, Error)]
#[error(
    "regularization would discard joint structure: trailing-to-leading singular value \
     ratio {ratio} exceeds tolerance {tol}"
)]
pub struct ResidualRankExceeded {
    pub ratio: f64,
    pub tol: f64,
}

/// Initialization strategy for the fitter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Init {
    /// Score and loading entries i.i.d. uniform on (−0.5, 0.5) from a seeded
    /// generator, then regularized.
    SeededRandom(u64),
    /// Truncated SVD of the link-transformed, column-centered, zero-filled
    /// working matrices.
    WarmStartSvd,
}

#[derive(Debug, Clone)]
pub struct FitConfig<T: Scalar> {
    pub max_sweeps: usize,
    /// Stop when the per-sweep log-likelihood change is at most
    /// `rel_tol · (|previous| + 1)`.
    pub rel_tol: T,
    pub init: Init,
    pub glm: GlmConfig<T>,
    /// Ridge added to every GLM subproblem's normal equations.
    pub ridge: T,
    /// Tolerance for the post-fit identifiability check.
    pub ident_tol: T,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            max_sweeps: 500,
            rel_tol: T::from_f64_c(1e-6),
            init: Init::WarmStartSvd,
            glm: GlmConfig::default(),
            ridge: T::from_f64_c(1e-8),
            ident_tol: T::from_f64_c(1e-8),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport<T: Scalar> {
    pub psi: ModelParams<T>,
    /// Log-likelihood after initialization, then after each sweep.
    pub loglik_trace: Vec<T>,
    pub sweeps: usize,
    pub converged: bool,
}

impl<T: Scalar> FitReport<T> {
    pub fn final_loglik(&self) -> T {
        *self.loglik_trace.last().expect("trace never empty")
    }
}

/// Orthonormal basis of a matrix's column space via SVD, discarding
/// directions below a relative singular-value threshold.
fn orthonormal_basis<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let s = &svd.singular_values;
    let smax = s.max();
    let cutoff = smax * T::from_f64_c(1e-12);
    let rank = (0..s.len()).take_while(|&i| s[i] > cutoff).count();
    if smax == T::zero() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    u.columns(0, rank).into_owned()
}

fn column_means<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    let n = T::from_usize_c(m.nrows());
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Result of one regularization pass: the transformed parameters and the
/// relative magnitude of joint structure discarded by the rank-`r_J`
/// truncation (zero when the pass is exact).
pub struct RegularizeOutcome<T: Scalar> {
    pub psi: ModelParams<T>,
    pub discarded_ratio: T,
}

/// The identifiability transform (projections plus SVDs) without the
/// exactness guard; see [`regularize`] for the guarded form.
pub fn regularize_unchecked<T: Scalar>(
    psi: &ModelParams<T>,
    pattern: &ObservationPattern,
) -> RegularizeOutcome<T> {
    let n = psi.joint_scores.nrows();
    let r_j = psi.joint_scores.ncols();
    let k_sources = psi.n_sources();

    // Orthonormal basis of [1, U0].
    let mut b = DMatrix::zeros(n, 1 + r_j);
    b.column_mut(0).fill(T::one());
    b.columns_mut(1, r_j).copy_from(&psi.joint_scores);
    let q = orthonormal_basis(&b);

    // Step 1-2 per source: project the zero-filled individual scores off the
    // joint column space, center over observed rows, and rotate the result
    // into scaled-orthonormal form. The product with the old loadings is
    // preserved exactly.
    let mut new_ind_scores = Vec::with_capacity(k_sources);
    let mut new_ind_loadings = Vec::with_capacity(k_sources);
    for k in 0..k_sources {
        let r_k = psi.individual_scores[k].ncols();
        let obs = pattern.observed(k);
        let n_k = obs.len();
        if r_k == 0 {
            new_ind_scores.push(DMatrix::zeros(n_k, 0));
            new_ind_loadings.push(DMatrix::zeros(psi.individual_loadings[k].nrows(), 0));
            continue;
        }
        let mut u_tilde = DMatrix::zeros(n, r_k);
        for (t, &i) in obs.iter().enumerate() {
            u_tilde.row_mut(i).copy_from(&psi.individual_scores[k].row(t));
        }
        let proj = &q * (q.transpose() * &u_tilde);
        let w = u_tilde - proj;
        let mut w_obs = w.select_rows(obs.iter());
        let centers = column_means(&w_obs);
        for mut row in w_obs.row_iter_mut() {
            row -= centers.transpose();
        }

        // S = W̄·Aᵀ factored through thin QR of both factors and an r×r SVD.
        let qr_w = w_obs.qr();
        let qr_a = psi.individual_loadings[k].clone().qr();
        let core = qr_w.r() * qr_a.r().transpose();
        let svd = core.svd(true, true);
        let u_c = svd.u.expect("u");
        let v_t = svd.v_t.expect("v_t");
        let mut scaled = u_c.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= svd.singular_values[j];
        }
        new_ind_scores.push(qr_w.q() * scaled);
        new_ind_loadings.push(qr_a.q() * v_t.transpose());
    }

    // Step 3: per-source full-row joint matrix J_k; on observed rows the old
    // fit minus the new individual structure, on missing rows mean + joint.
    // Column centers become the new means.
    let p_total: usize = psi.means.iter().map(|m| m.nrows()).sum();
    let mut j_all = DMatrix::zeros(n, p_total);
    let mut new_means = Vec::with_capacity(k_sources);
    let mut col_off = 0;
    for k in 0..k_sources {
        let p_k = psi.means[k].nrows();
        let obs = pattern.observed(k);
        let mut j_k = DMatrix::from_fn(n, p_k, |_, j| psi.means[k][j]);
        if r_j > 0 {
            j_k.gemm(T::one(), &psi.joint_scores, &psi.joint_loadings[k].transpose(), T::one());
        }
        if psi.individual_scores[k].ncols() > 0 {
            let mut delta = &psi.individual_scores[k] * psi.individual_loadings[k].transpose();
            delta.gemm(
                -T::one(),
                &new_ind_scores[k],
                &new_ind_loadings[k].transpose(),
                T::one(),
            );
            for (t, &i) in obs.iter().enumerate() {
                let merged = j_k.row(i) + delta.row(t);
                j_k.row_mut(i).copy_from(&merged);
            }
        }
        let mu_k = column_means(&j_k);
        for mut row in j_k.row_iter_mut() {
            row -= mu_k.transpose();
        }
        j_all.columns_mut(col_off, p_k).copy_from(&j_k);
        new_means.push(mu_k);
        col_off += p_k;
    }

    // Step 4: rank-r_J SVD of the concatenated centered joint structure. J's
    // columns live (up to the masked residue) in the span of {1, U0} and its
    // per-source missing-row masks, so the SVD is taken on a small core.
    let mut basis_cols: Vec<DVector<T>> = Vec::new();
    basis_cols.push(DVector::from_element(n, T::one()));
    for l in 0..r_j {
        basis_cols.push(psi.joint_scores.column(l).into_owned());
    }
    for k in 0..k_sources {
        if psi.individual_scores[k].ncols() == 0 {
            continue;
        }
        let missing = pattern.missing(k);
        if missing.is_empty() {
            continue;
        }
        let mut ones_masked = DVector::zeros(n);
        for &i in &missing {
            ones_masked[i] = T::one();
        }
        basis_cols.push(ones_masked);
        for l in 0..r_j {
            let mut col = DVector::zeros(n);
            for &i in &missing {
                col[i] = psi.joint_scores[(i, l)];
            }
            basis_cols.push(col);
        }
    }
    let basis = DMatrix::from_columns(&basis_cols);
    let qb = orthonormal_basis(&basis);
    let core = qb.transpose() * &j_all;
    let svd = core.svd(true, true);
    let sigma = &svd.singular_values;
    let u_c = svd.u.as_ref().expect("u");
    let v_t = svd.v_t.as_ref().expect("v_t");

    let discarded_ratio = if r_j == 0 {
        // Nothing representable: discarded mass relative to the uncentered
        // joint magnitude.
        let scale = j_all.norm().max(T::from_f64_c(f64::MIN_POSITIVE));
        if sigma.len() == 0 {
            T::zero()
        } else {
            sigma[0] / scale.max(sigma[0])
        }
    } else if sigma.len() > r_j && sigma[0] > T::zero() {
        sigma[r_j] / sigma[0]
    } else {
        T::zero()
    };

    let avail = r_j.min(sigma.len());
    let mut joint_scores = DMatrix::zeros(n, r_j);
    let mut v_full = DMatrix::zeros(p_total, r_j);
    if avail > 0 {
        let mut scaled = u_c.columns(0, avail).into_owned();
        for (l, mut col) in scaled.column_iter_mut().enumerate() {
            col *= sigma[l];
        }
        joint_scores.columns_mut(0, avail).copy_from(&(&qb * scaled));
        v_full
            .columns_mut(0, avail)
            .copy_from(&v_t.rows(0, avail).transpose());
    }
    let mut joint_loadings = Vec::with_capacity(k_sources);
    let mut off = 0;
    for k in 0..k_sources {
        let p_k = psi.means[k].nrows();
        joint_loadings.push(v_full.rows(off, p_k).into_owned());
        off += p_k;
    }

    RegularizeOutcome {
        psi: ModelParams {
            means: new_means,
            joint_scores,
            joint_loadings,
            individual_scores: new_ind_scores,
            individual_loadings: new_ind_loadings,
        },
        discarded_ratio,
    }
}

/// Likelihood-preserving re-parameterization enforcing the identifiability
/// conditions. Errors when the final rank-`r_J` truncation would discard
/// joint structure above `tol` relative magnitude, which signals that the
/// transform's exactness assumption (individual scores orthogonal to the
/// joint column space over the full rows) does not hold for this input.
pub fn regularize<T: Scalar>(
    psi: &ModelParams<T>,
    pattern: &ObservationPattern,
    tol: T,
) -> Result<ModelParams<T>, ResidualRankExceeded> {
    let out = regularize_unchecked(psi, pattern);
    if out.discarded_ratio > tol {
        return Err(ResidualRankExceeded {
            ratio: out.discarded_ratio.to_f64_c(),
            tol: tol.to_f64_c(),
        });
    }
    Ok(out.psi)
}

/// Closed-form intercept-only natural parameter for one column.
fn intercept_mle<T: Scalar>(
    ds: &MultiSourceDataset<T>,
    k: usize,
    j: usize,
) -> T {
    let x = ds.data(k);
    let obs = ds.pattern().observed(k);
    let n_k = T::from_usize_c(obs.len());
    match ds.source(k).entry_kind(obs[0], j) {
        DistributionKind::Gaussian => x.column(j).sum() / n_k,
        DistributionKind::Poisson => {
            let kind = DistributionKind::Poisson;
            kind.link(kind.clip_mean(x.column(j).sum() / n_k))
        }
        DistributionKind::Binomial { .. } => {
            // Pooled-rate MLE, robust to per-entry trials.
            let mut total_x = T::zero();
            let mut total_m = T::zero();
            for (t, &i) in obs.iter().enumerate() {
                total_x += x[(t, j)];
                let DistributionKind::Binomial { trials } = ds.source(k).entry_kind(i, j) else {
                    unreachable!("binomial column with non-binomial entry");
                };
                total_m += T::from_u64(trials).expect("trials representable");
            }
            let avg_m = total_m / n_k;
            let lo = T::one() / (T::from_f64_c(2.0) * avg_m);
            let rate = (total_x / total_m).clamp(lo, T::one() - lo);
            rate.ln() - (-rate).ln_1p()
        }
    }
}

/// Produce starting parameters; see [`Init`] for the two strategies. The
/// result already satisfies the identifiability conditions.
pub fn initialize<T: Scalar>(
    ds: &MultiSourceDataset<T>,
    ranks: &RankSpec,
    init: &Init,
) -> Result<ModelParams<T>, FitError> {
    ranks.validate(ds)?;
    let n = ds.n();
    let k_sources = ds.n_sources();
    let p: Vec<usize> = (0..k_sources).map(|k| ds.p(k)).collect();
    let n_obs: Vec<usize> = (0..k_sources).map(|k| ds.pattern().n_observed(k)).collect();
    let mut psi = ModelParams::zeros(n, &p, &n_obs, ranks);
    for k in 0..k_sources {
        for j in 0..p[k] {
            psi.means[k][j] = intercept_mle(ds, k, j);
        }
    }

    match init {
        Init::SeededRandom(seed) => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
            let mut fill = |m: &mut DMatrix<T>| {
                for j in 0..m.ncols() {
                    for i in 0..m.nrows() {
                        m[(i, j)] = T::from_f64_c(rng.gen_range(-0.5..0.5));
                    }
                }
            };
            fill(&mut psi.joint_scores);
            for k in 0..k_sources {
                fill(&mut psi.joint_loadings[k]);
                fill(&mut psi.individual_scores[k]);
                fill(&mut psi.individual_loadings[k]);
            }
        }
        Init::WarmStartSvd => {
            let p_total: usize = p.iter().sum();
            let mut z_full = DMatrix::zeros(n, p_total);
            let mut z_obs_blocks = Vec::with_capacity(k_sources);
            let mut off = 0;
            for k in 0..k_sources {
                let obs = ds.pattern().observed(k);
                let x = ds.data(k);
                let mut z = DMatrix::zeros(obs.len(), p[k]);
                for (t, &i) in obs.iter().enumerate() {
                    for j in 0..p[k] {
                        let kind = ds.source(k).entry_kind(i, j);
                        z[(t, j)] = kind.link(kind.clip_mean(x[(t, j)]));
                    }
                }
                let centers = column_means(&z);
                for mut row in z.row_iter_mut() {
                    row -= centers.transpose();
                }
                for (t, &i) in obs.iter().enumerate() {
                    z_full.view_mut((i, off), (1, p[k])).copy_from(&z.row(t));
                }
                z_obs_blocks.push(z);
                off += p[k];
            }
            if ranks.joint > 0 {
                let svd = z_full.clone().svd(true, true);
                let u = svd.u.as_ref().expect("u");
                let v_t = svd.v_t.as_ref().expect("v_t");
                let avail = ranks.joint.min(svd.singular_values.len());
                psi.joint_scores.columns_mut(0, avail).copy_from(&u.columns(0, avail));
                let mut off = 0;
                for k in 0..k_sources {
                    for l in 0..avail {
                        let s = svd.singular_values[l];
                        for j in 0..p[k] {
                            psi.joint_loadings[k][(j, l)] = v_t[(l, off + j)] * s;
                        }
                    }
                    off += p[k];
                }
            }
            for k in 0..k_sources {
                let r_k = ranks.individual[k];
                if r_k == 0 {
                    continue;
                }
                let obs = ds.pattern().observed(k);
                let mut resid = z_obs_blocks[k].clone();
                if ranks.joint > 0 {
                    let u0_obs = psi.joint_scores.select_rows(obs.iter());
                    resid.gemm(
                        -T::one(),
                        &u0_obs,
                        &psi.joint_loadings[k].transpose(),
                        T::one(),
                    );
                }
                let svd = resid.svd(true, true);
                let u = svd.u.as_ref().expect("u");
                let v_t = svd.v_t.as_ref().expect("v_t");
                let avail = r_k.min(svd.singular_values.len());
                psi.individual_scores[k]
                    .columns_mut(0, avail)
                    .copy_from(&u.columns(0, avail));
                for l in 0..avail {
                    let s = svd.singular_values[l];
                    for j in 0..p[k] {
                        psi.individual_loadings[k][(j, l)] = v_t[(l, j)] * s;
                    }
                }
            }
        }
    }

    Ok(regularize_unchecked(&psi, ds.pattern()).psi)
}

/// Step (a): for every source and column, refit the mean and joint-loading
/// row by a GLM on [1 | U0 rows] with the individual structure as offset.
fn sweep_joint_loadings<T: Scalar>(
    ds: &MultiSourceDataset<T>,
    psi: &mut ModelParams<T>,
    cfg: &FitConfig<T>,
) -> Result<(), FitError> {
    let r_j = psi.joint_scores.ncols();
    for k in 0..ds.n_sources() {
        let obs = ds.pattern().observed(k);
        let n_k = obs.len();
        let p_k = ds.p(k);
        let mut design = DMatrix::zeros(n_k, 1 + r_j);
        for (t, &i) in obs.iter().enumerate() {
            design[(t, 0)] = T::one();
            for l in 0..r_j {
                design[(t, 1 + l)] = psi.joint_scores[(i, l)];
            }
        }
        let offsets = if psi.individual_scores[k].ncols() > 0 {
            &psi.individual_scores[k] * psi.individual_loadings[k].transpose()
        } else {
            DMatrix::zeros(n_k, p_k)
        };
        let data = ds.data(k);
        let spec = ds.source(k);
        let betas: Vec<DVector<T>> = (0..p_k)
            .into_par_iter()
            .map(|j| {
                let kinds: Vec<DistributionKind> =
                    obs.iter().map(|&i| spec.entry_kind(i, j)).collect();
                let mut beta0 = DVector::zeros(1 + r_j);
                beta0[0] = psi.means[k][j];
                for l in 0..r_j {
                    beta0[1 + l] = psi.joint_loadings[k][(j, l)];
                }
                let prob = GlmProblem {
                    y: data.column(j),
                    x: design.as_view(),
                    offset: offsets.column(j),
                    kinds: &kinds,
                    ridge: cfg.ridge,
                };
                fit_glm(&prob, &beta0, &cfg.glm).map(|f| f.beta).map_err(|cause| {
                    FitError::Glm { step: "joint-loadings", source_index: k, index: j, cause }
                })
            })
            .collect::<Result<_, _>>()?;
        for (j, beta) in betas.iter().enumerate() {
            psi.means[k][j] = beta[0];
            for l in 0..r_j {
                psi.joint_loadings[k][(j, l)] = beta[1 + l];
            }
        }
    }
    Ok(())
}

/// Step (b): refit each joint-score row by IRLS over the sources observing
/// that sample, with heterogeneous links.
fn sweep_joint_scores<T: Scalar>(
    ds: &MultiSourceDataset<T>,
    psi: &mut ModelParams<T>,
    cfg: &FitConfig<T>,
) -> Result<(), FitError> {
    let r_j = psi.joint_scores.ncols();
    if r_j == 0 {
        return Ok(());
    }
    let n = ds.n();
    let k_sources = ds.n_sources();

    // Individual-structure offsets per source, reused across samples.
    let ind_offsets: Vec<DMatrix<T>> = (0..k_sources)
        .map(|k| {
            if psi.individual_scores[k].ncols() > 0 {
                &psi.individual_scores[k] * psi.individual_loadings[k].transpose()
            } else {
                DMatrix::zeros(ds.pattern().n_observed(k), ds.p(k))
            }
        })
        .collect();

    // One stacked design per distinct observing set.
    let mask_of = |i: usize| -> u64 {
        (0..k_sources)
            .filter(|&k| ds.pattern().is_observed(k, i))
            .fold(0u64, |m, k| m | (1 << k))
    };
    let mut designs: HashMap<u64, DMatrix<T>> = HashMap::new();
    for i in 0..n {
        let mask = mask_of(i);
        designs.entry(mask).or_insert_with(|| {
            let rows: usize =
                (0..k_sources).filter(|&k| mask & (1 << k) != 0).map(|k| ds.p(k)).sum();
            let mut x = DMatrix::zeros(rows, r_j);
            let mut off = 0;
            for k in 0..k_sources {
                if mask & (1 << k) == 0 {
                    continue;
                }
                x.rows_mut(off, ds.p(k)).copy_from(&psi.joint_loadings[k]);
                off += ds.p(k);
            }
            x
        });
    }

    let rows: Vec<DVector<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mask = mask_of(i);
            let design = &designs[&mask];
            let q = design.nrows();
            let mut y = DVector::zeros(q);
            let mut offset = DVector::zeros(q);
            let mut kinds = Vec::with_capacity(q);
            let mut off = 0;
            for k in 0..k_sources {
                let Some(t) = ds.pattern().local_row(k, i) else { continue };
                let p_k = ds.p(k);
                for j in 0..p_k {
                    y[off + j] = ds.data(k)[(t, j)];
                    offset[off + j] = psi.means[k][j] + ind_offsets[k][(t, j)];
                    kinds.push(ds.source(k).entry_kind(i, j));
                }
                off += p_k;
            }
            let beta0 = psi.joint_scores.row(i).transpose();
            let prob = GlmProblem {
                y: y.as_view(),
                x: design.as_view(),
                offset: offset.as_view(),
                kinds: &kinds,
                ridge: cfg.ridge,
            };
            fit_glm(&prob, &beta0, &cfg.glm).map(|f| f.beta).map_err(|cause| FitError::Glm {
                step: "joint-scores",
                source_index: usize::MAX,
                index: i,
                cause,
            })
        })
        .collect::<Result<_, _>>()?;
    for (i, beta) in rows.iter().enumerate() {
        psi.joint_scores.row_mut(i).copy_from(&beta.transpose());
    }
    Ok(())
}

/// Step (c): per source, one alternation of individual-loading rows then
/// individual-score rows, the mean-plus-joint part held fixed as offset.
fn sweep_individual<T: Scalar>(
    ds: &MultiSourceDataset<T>,
    psi: &mut ModelParams<T>,
    cfg: &FitConfig<T>,
) -> Result<(), FitError> {
    for k in 0..ds.n_sources() {
        let r_k = psi.individual_scores[k].ncols();
        if r_k == 0 {
            continue;
        }
        let obs = ds.pattern().observed(k);
        let p_k = ds.p(k);
        let data = ds.data(k);
        let spec = ds.source(k);
        // Mean + joint offsets, shared by both half-steps.
        let base = psi.joint_natural_params(obs, k);

        let loading_rows: Vec<DVector<T>> = (0..p_k)
            .into_par_iter()
            .map(|j| {
                let kinds: Vec<DistributionKind> =
                    obs.iter().map(|&i| spec.entry_kind(i, j)).collect();
                let beta0 = psi.individual_loadings[k].row(j).transpose();
                let prob = GlmProblem {
                    y: data.column(j),
                    x: psi.individual_scores[k].as_view(),
                    offset: base.column(j),
                    kinds: &kinds,
                    ridge: cfg.ridge,
                };
                fit_glm(&prob, &beta0, &cfg.glm).map(|f| f.beta).map_err(|cause| {
                    FitError::Glm { step: "individual-loadings", source_index: k, index: j, cause }
                })
            })
            .collect::<Result<_, _>>()?;
        for (j, beta) in loading_rows.iter().enumerate() {
            psi.individual_loadings[k].row_mut(j).copy_from(&beta.transpose());
        }

        let score_rows: Vec<DVector<T>> = (0..obs.len())
            .into_par_iter()
            .map(|t| {
                let i = obs[t];
                let kinds: Vec<DistributionKind> =
                    (0..p_k).map(|j| spec.entry_kind(i, j)).collect();
                let y = data.row(t).transpose();
                let offset = base.row(t).transpose();
                let beta0 = psi.individual_scores[k].row(t).transpose();
                let prob = GlmProblem {
                    y: y.as_view(),
                    x: psi.individual_loadings[k].as_view(),
                    offset: offset.as_view(),
                    kinds: &kinds,
                    ridge: cfg.ridge,
                };
                fit_glm(&prob, &beta0, &cfg.glm).map(|f| f.beta).map_err(|cause| {
                    FitError::Glm { step: "individual-scores", source_index: k, index: t, cause }
                })
            })
            .collect::<Result<_, _>>()?;
        for (t, beta) in score_rows.iter().enumerate() {
            psi.individual_scores[k].row_mut(t).copy_from(&beta.transpose());
        }
    }
    Ok(())
}

/// Fit the decomposition at fixed ranks by block coordinate descent.
///
/// The returned parameters satisfy the identifiability conditions at
/// `cfg.ident_tol` and the log-likelihood trace is non-decreasing. When the
/// sweep budget runs out the best iterate is returned with
/// `converged == false`.
pub fn fit<T: Scalar>(
    ds: &MultiSourceDataset<T>,
    ranks: &RankSpec,
    cfg: &FitConfig<T>,
) -> Result<FitReport<T>, FitError> {
    ranks.validate(ds)?;
    let mut psi = initialize(ds, ranks, &cfg.init)?;
    let mut ll = log_likelihood(ds, &psi)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut sweeps = 0;

    for sweep in 1..=cfg.max_sweeps {
        let previous = psi.clone();
        sweep_joint_loadings(ds, &mut psi, cfg)?;
        sweep_joint_scores(ds, &mut psi, cfg)?;
        sweep_individual(ds, &mut psi, cfg)?;
        psi = regularize_unchecked(&psi, ds.pattern()).psi;
        let new_ll = log_likelihood(ds, &psi)?;
        sweeps = sweep;
        let threshold = cfg.rel_tol * (ll.abs() + T::one());
        if new_ll < ll {
            // The regularization's truncation outweighed this sweep's gain;
            // keep the previous iterate rather than record a decrease.
            psi = previous;
            converged = ll - new_ll <= threshold;
            break;
        }
        trace.push(new_ll);
        let delta = new_ll - ll;
        ll = new_ll;
        if delta <= threshold {
            converged = true;
            break;
        }
    }

    // The single post-sweep pass enforces the conditions only up to the
    // orthogonality drift of that sweep; iterate until the check passes.
    let mut passes = 0;
    loop {
        let report = check_identifiability(&psi, ds.pattern());
        if report.pass(cfg.ident_tol) {
            break;
        }
        if passes >= 32 {
            return Err(FitError::IdentRepairStalled {
                worst: report.worst().to_f64_c(),
                passes,
            });
        }
        psi = regularize_unchecked(&psi, ds.pattern()).psi;
        passes += 1;
    }

    Ok(FitReport { psi, loglik_trace: trace, sweeps, converged })
}
