//! Row-level weighted-Newton / IRLS solver.
//!
//! One solver covers both shapes of subproblem the fitter produces: a
//! single-distribution GLM with offset (loading rows, individual-score rows)
//! and the heterogeneous-link problem where each response entry may follow a
//! different distribution (joint-score rows that span sources). With the
//! canonical link the working weight is `b''(θ)` and the working response is
//! `η + (y − b'(θ))/b''(θ)`; each iteration solves the weighted least squares
//! of the working response (minus offset) on the design.

use nalgebra::{Cholesky, DMatrix, DMatrixView, DVector, DVectorView};
use thiserror::Error;

use crate::exp_family::DistributionKind;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("weighted normal equations are singular beyond ridge repair")]
    SingularSystem,
    #[error("problem has {y_len} responses but {kinds_len} kinds / {offset_len} offsets")]
    ShapeMismatch { y_len: usize, kinds_len: usize, offset_len: usize },
}

/// One weighted-Newton subproblem: maximize
/// `Σ_i log f_{kind_i}(y_i | x_iᵀβ + offset_i) − (ridge/2)·‖β‖²`.
pub struct GlmProblem<'a, T: Scalar> {
    pub y: DVectorView<'a, T>,
    pub x: DMatrixView<'a, T>,
    pub offset: DVectorView<'a, T>,
    /// Per-response distribution; all equal for homogeneous problems, mixed
    /// for joint-score rows.
    pub kinds: &'a [DistributionKind],
    pub ridge: T,
}

#[derive(Debug, Clone)]
pub struct GlmConfig<T: Scalar> {
    pub max_iter: usize,
    /// Gradient tolerance, relative to `1 + |loglik|`.
    pub tol: T,
    pub max_step_halvings: usize,
}

impl<T: Scalar> Default for GlmConfig<T> {
    fn default() -> Self {
        Self { max_iter: 50, tol: T::from_f64_c(1e-8), max_step_halvings: 20 }
    }
}

#[derive(Debug, Clone)]
pub struct GlmFit<T: Scalar> {
    pub beta: DVector<T>,
    /// Unpenalized data log-likelihood at `beta`.
    pub loglik: T,
    /// Penalized objective at `beta`.
    pub penalized: T,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective after the initial point and each accepted step.
    pub objective_trace: Vec<T>,
}

/// Linear predictors are clamped to this magnitude inside the *weight*
/// computation only, so binomial working weights cannot underflow to zero and
/// freeze the iteration. Likelihood and gradient always use the exact values.
fn weight_clamp<T: Scalar>() -> T {
    T::from_f64_c(30.0)
}

struct Workspace<T: Scalar> {
    eta: DVector<T>,
    weights: DVector<T>,
    resid: DVector<T>,
}

impl<'a, T: Scalar> GlmProblem<'a, T> {
    fn check_shapes(&self) -> Result<(), GlmError> {
        let q = self.y.nrows();
        if self.kinds.len() != q || self.offset.nrows() != q || self.x.nrows() != q {
            return Err(GlmError::ShapeMismatch {
                y_len: q,
                kinds_len: self.kinds.len(),
                offset_len: self.offset.nrows(),
            });
        }
        Ok(())
    }

    fn eta_into(&self, beta: &DVector<T>, eta: &mut DVector<T>) {
        eta.copy_from(&self.offset);
        eta.gemv(T::one(), &self.x, beta, T::one());
    }

    /// Data log-likelihood dropping terms constant in θ.
    fn kernel_loglik(&self, eta: &DVector<T>) -> T {
        let mut total = T::zero();
        for i in 0..eta.nrows() {
            let theta = eta[i];
            total += self.y[i] * theta - self.kinds[i].log_partition(theta);
        }
        total
    }

    fn penalized(&self, beta: &DVector<T>, eta: &DVector<T>) -> T {
        self.kernel_loglik(eta) - self.ridge * beta.norm_squared() / T::from_f64_c(2.0)
    }

    /// Analytic gradient `Xᵀ(y − b'(θ)) − ridge·β`, infinity norm.
    fn gradient_inf_norm(&self, beta: &DVector<T>, eta: &DVector<T>) -> T {
        let mut resid = DVector::zeros(eta.nrows());
        for i in 0..eta.nrows() {
            resid[i] = self.y[i] - self.kinds[i].mean(eta[i]);
        }
        let mut grad = self.x.transpose() * resid;
        grad.axpy(-self.ridge, beta, T::one());
        grad.abs().max()
    }

    /// Base-measure constant of the data, independent of β.
    fn base_measure(&self) -> T {
        (0..self.y.nrows()).map(|i| self.kinds[i].log_base_measure(self.y[i])).sum()
    }
}

/// Fit one GLM by IRLS with step-halving. Non-convergence within `max_iter`
/// is reported through the `converged` flag (the best iterate is returned);
/// a rank-deficient weighted system is an error.
pub fn fit_glm<T: Scalar>(
    prob: &GlmProblem<'_, T>,
    beta0: &DVector<T>,
    cfg: &GlmConfig<T>,
) -> Result<GlmFit<T>, GlmError> {
    prob.check_shapes()?;
    let q = prob.y.nrows();
    let d = prob.x.ncols();
    debug_assert_eq!(beta0.nrows(), d);

    if d == 0 {
        let eta = prob.offset.clone_owned();
        let loglik = prob.kernel_loglik(&eta) + prob.base_measure();
        return Ok(GlmFit {
            beta: DVector::zeros(0),
            loglik,
            penalized: loglik,
            iterations: 0,
            converged: true,
            objective_trace: vec![loglik],
        });
    }

    let mut ws = Workspace {
        eta: DVector::zeros(q),
        weights: DVector::zeros(q),
        resid: DVector::zeros(q),
    };
    let clamp = weight_clamp::<T>();

    let mut beta = beta0.clone();
    prob.eta_into(&beta, &mut ws.eta);
    let mut pen = prob.penalized(&beta, &ws.eta);
    let mut trace = vec![pen];
    let mut converged = false;
    let mut iterations = 0;

    let mut cand_eta = DVector::zeros(q);
    for iter in 1..=cfg.max_iter {
        iterations = iter;
        for i in 0..q {
            let theta = ws.eta[i];
            ws.weights[i] = prob.kinds[i].variance(theta.clamp(-clamp, clamp));
            ws.resid[i] = prob.y[i] - prob.kinds[i].mean(theta);
        }

        // Normal equations (XᵀWX + ridge·I)·β⋆ = Xᵀ(W·Xβ + r). Writing the
        // right-hand side this way avoids dividing the working response by
        // near-zero weights.
        let mut wx = DMatrix::zeros(q, d);
        for j in 0..d {
            for i in 0..q {
                wx[(i, j)] = prob.x[(i, j)] * ws.weights[i];
            }
        }
        let mut h = prob.x.transpose() * &wx;
        for j in 0..d {
            h[(j, j)] += prob.ridge;
        }
        let mut rhs_vec = DVector::zeros(q);
        let xbeta = prob.x * &beta;
        for i in 0..q {
            rhs_vec[i] = ws.weights[i] * xbeta[i] + ws.resid[i];
        }
        let rhs = prob.x.transpose() * rhs_vec;

        let target = Cholesky::new(h).ok_or(GlmError::SingularSystem)?.solve(&rhs);

        // Step-halve toward the Newton target until the penalized objective
        // does not decrease.
        let direction = &target - &beta;
        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..=cfg.max_step_halvings {
            let cand = &beta + &direction * step;
            prob.eta_into(&cand, &mut cand_eta);
            let cand_pen = prob.penalized(&cand, &cand_eta);
            if cand_pen >= pen {
                beta = cand;
                ws.eta.copy_from(&cand_eta);
                pen = cand_pen;
                accepted = true;
                break;
            }
            step /= T::from_f64_c(2.0);
        }
        if accepted {
            trace.push(pen);
        }

        let grad = prob.gradient_inf_norm(&beta, &ws.eta);
        if grad <= cfg.tol * (T::one() + pen.abs()) {
            converged = true;
            break;
        }
        if !accepted {
            // No admissible ascent step: numerical limit reached.
            break;
        }
    }

    let loglik = prob.kernel_loglik(&ws.eta) + prob.base_measure();
    Ok(GlmFit {
        beta,
        loglik,
        penalized: pen,
        iterations,
        converged,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kinds(kind: DistributionKind, q: usize) -> Vec<DistributionKind> {
        vec![kind; q]
    }

    /// Ordinary least squares oracle via explicit normal equations.
    fn ols_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        let xtx = x.transpose() * x;
        let xty = x.transpose() * y;
        xtx.lu().solve(&xty).unwrap()
    }

    #[test]
    fn gaussian_matches_least_squares_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = 20;
        let d = 3;
        let x = DMatrix::from_fn(q, d, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(q, |_, _| rng.gen_range(-2.0..2.0));
        let offset = DVector::from_fn(q, |_, _| rng.gen_range(-0.5..0.5));
        let ks = kinds(DistributionKind::Gaussian, q);
        let prob = GlmProblem {
            y: y.as_view(),
            x: x.as_view(),
            offset: offset.as_view(),
            kinds: &ks,
            ridge: 0.0,
        };
        let fit = fit_glm(&prob, &DVector::zeros(d), &GlmConfig::default()).unwrap();
        let oracle = ols_oracle(&x, &(&y - &offset));
        assert_relative_eq!(fit.beta, oracle, max_relative = 1e-10);
        assert!(fit.converged);
    }

    /// Identity link: IRLS is exactly one weighted least squares solve.
    #[test]
    fn gaussian_converges_in_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = 15;
        let x = DMatrix::from_fn(q, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(q, |_, _| rng.gen_range(-2.0..2.0));
        let offset = DVector::zeros(q);
        let ks = kinds(DistributionKind::Gaussian, q);
        let prob = GlmProblem {
            y: y.as_view(),
            x: x.as_view(),
            offset: offset.as_view(),
            kinds: &ks,
            ridge: 0.0,
        };
        let fit = fit_glm(&prob, &DVector::zeros(2), &GlmConfig::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn poisson_intercept_only_is_log_mean() {
        let y = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let x = DMatrix::from_element(3, 1, 1.0);
        let offset = DVector::zeros(3);
        let ks = kinds(DistributionKind::Poisson, 3);
        let prob = GlmProblem {
            y: y.as_view(),
            x: x.as_view(),
            offset: offset.as_view(),
            kinds: &ks,
            ridge: 0.0,
        };
        let fit = fit_glm(&prob, &DVector::zeros(1), &GlmConfig::default()).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.beta[0], 2.0f64.ln(), max_relative = 1e-9);
    }

    /// Exact mixed log-likelihood for the brute-force oracle.
    fn mixed_loglik(
        beta: &[f64; 2],
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        ks: &[DistributionKind],
    ) -> f64 {
        let mut total = 0.0;
        for i in 0..y.nrows() {
            let theta = x[(i, 0)] * beta[0] + x[(i, 1)] * beta[1];
            total += ks[i].log_density(y[i], theta);
        }
        total
    }

    /// Refining grid search: independent maximizer of the exact objective.
    fn grid_oracle(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        ks: &[DistributionKind],
    ) -> [f64; 2] {
        let mut center = [0.0f64, 0.0];
        let mut half_width = 3.0f64;
        for _ in 0..5 {
            let mut best = f64::NEG_INFINITY;
            let mut best_beta = center;
            let steps = 60;
            for a in 0..=steps {
                for b in 0..=steps {
                    let cand = [
                        center[0] - half_width + 2.0 * half_width * a as f64 / steps as f64,
                        center[1] - half_width + 2.0 * half_width * b as f64 / steps as f64,
                    ];
                    let ll = mixed_loglik(&cand, x, y, ks);
                    if ll > best {
                        best = ll;
                        best_beta = cand;
                    }
                }
            }
            center = best_beta;
            half_width = 4.0 * half_width / steps as f64;
        }
        center
    }

    #[test]
    fn mixed_kinds_match_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = 20;
        let x = DMatrix::from_fn(q, 2, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.gen_range(-1.0..1.0)
            }
        });
        let mut ks = kinds(DistributionKind::Gaussian, 10);
        ks.extend(kinds(DistributionKind::Binomial { trials: 100 }, 10));
        let truth = [0.3, -0.7];
        let y = DVector::from_fn(q, |i, _| {
            let theta = x[(i, 0)] * truth[0] + x[(i, 1)] * truth[1];
            match ks[i] {
                DistributionKind::Gaussian => theta + rng.gen_range(-1.0..1.0),
                DistributionKind::Binomial { trials } => {
                    // crude but reproducible binomial draw
                    let p = 1.0 / (1.0 + f64::exp(-theta));
                    (0..trials).filter(|_| rng.gen_range(0.0..1.0) < p).count() as f64
                }
                _ => unreachable!(),
            }
        });
        let offset = DVector::zeros(q);
        let prob = GlmProblem {
            y: y.as_view(),
            x: x.as_view(),
            offset: offset.as_view(),
            kinds: &ks,
            ridge: 0.0,
        };
        let fit = fit_glm(&prob, &DVector::zeros(2), &GlmConfig::default()).unwrap();
        assert!(fit.converged);
        let oracle = grid_oracle(&x, &y, &ks);
        assert!(
            (fit.beta[0] - oracle[0]).abs() < 1e-4 && (fit.beta[1] - oracle[1]).abs() < 1e-4,
            "fit {:?} vs oracle {:?}",
            fit.beta,
            oracle
        );
    }

    #[test]
    fn objective_trace_is_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = 30;
        let x = DMatrix::from_fn(q, 2, |_, c| if c == 0 { 1.0 } else { rng.gen_range(-2.0..2.0) });
        let ks = kinds(DistributionKind::Poisson, q);
        let y = DVector::from_fn(q, |_, _| rng.gen_range(0..20) as f64);
        let offset = DVector::from_fn(q, |_, _| rng.gen_range(-0.3..0.3));
        let prob = GlmProblem {
            y: y.as_view(),
            x: x.as_view(),
            offset: offset.as_view(),
            kinds: &ks,
            ridge: 1e-8,
        };
        let fit = fit_glm(&prob, &DVector::from_row_slice(&[1.0, -1.0]), &GlmConfig::default())
            .unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "objective decreased: {w:?}");
        }
    }

    #[test]
    fn gradient_small_at_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = 25;
        let x = DMatrix::from_fn(q, 3, |_, c| if c == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) });
        let ks = kinds(DistributionKind::Binomial { trials: 50 }, q);
        let y = DVector::from_fn(q, |_, _| rng.gen_range(5..45) as f64);
        let offset = DVector::zeros(q);
        let prob = GlmProblem {
            y: y.as_view(),
            x: x.as_view(),
            offset: offset.as_view(),
            kinds: &ks,
            ridge: 1e-8,
        };
        let cfg = GlmConfig::default();
        let fit = fit_glm(&prob, &DVector::zeros(3), &cfg).unwrap();
        assert!(fit.converged);
        // Recompute the gradient independently.
        let mut grad = DVector::zeros(3);
        for i in 0..q {
            let theta: f64 = x.row(i).transpose().dot(&fit.beta);
            let r = y[i] - ks[i].mean(theta);
            for j in 0..3 {
                grad[j] += x[(i, j)] * r;
            }
        }
        grad -= &fit.beta * 1e-8;
        assert!(grad.abs().max() <= cfg.tol * (1.0 + fit.loglik.abs()));
    }

    #[test]
    fn singular_design_without_ridge_errors() {
        let x = DMatrix::from_fn(6, 2, |i, _| i as f64); // duplicate columns
        let y = DVector::from_fn(6, |i, _| i as f64);
        let offset = DVector::zeros(6);
        let ks = kinds(DistributionKind::Gaussian, 6);
        let prob = GlmProblem {
            y: y.as_view(),
            x: x.as_view(),
            offset: offset.as_view(),
            kinds: &ks,
            ridge: 0.0,
        };
        let err = fit_glm(&prob, &DVector::zeros(2), &GlmConfig::default()).unwrap_err();
        assert!(matches!(err, GlmError::SingularSystem));
    }

    #[test]
    fn empty_design_returns_offset_likelihood() {
        let y = DVector::from_row_slice(&[1.0, 0.0]);
        let x = DMatrix::<f64>::zeros(2, 0);
        let offset = DVector::from_row_slice(&[0.2, -0.1]);
        let ks = kinds(DistributionKind::Poisson, 2);
        let prob = GlmProblem {
            y: y.as_view(),
            x: x.as_view(),
            offset: offset.as_view(),
            kinds: &ks,
            ridge: 0.0,
        };
        let fit = fit_glm(&prob, &DVector::zeros(0), &GlmConfig::default()).unwrap();
        assert!(fit.converged);
        let expect: f64 = (0..2)
            .map(|i| ks[i].log_density(y[i], offset[i]))
            .sum();
        assert_relative_eq!(fit.loglik, expect, max_relative = 1e-14);
    }
}
