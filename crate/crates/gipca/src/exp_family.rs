//! Scalar exponential-family kernels for the three supported distributions:
//! Gaussian with unit variance, Poisson, and binomial with known trials.
//!
//! Every density is written in canonical form `exp{x·θ − b(θ) + c(x)}`, so
//! the log-partition `b` and its derivatives (mean, variance) fully describe
//! a distribution. The canonical link is the inverse of `b'`.

use crate::scalar::Scalar;

/// Distribution of a single matrix entry. Binomial trials may vary per entry,
/// so the trial count travels with the kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionKind {
    /// Gaussian with variance fixed at 1.
    Gaussian,
    Poisson,
    /// Binomial with a known, per-entry number of trials (≥ 1).
    Binomial { trials: u64 },
}

/// Stable `log(1 + exp(x))`: `max(x, 0) + ln(1 + exp(-|x|))`.
#[inline]
pub(crate) fn log1pexp<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Stable logistic function.
#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    let e = (-x.abs()).exp();
    let recip = T::one() / (T::one() + e);
    if x >= T::zero() {
        recip
    } else {
        e * recip
    }
}

/// `ln Γ(x)`, evaluated in `f64`.
#[inline]
fn ln_gamma<T: Scalar>(x: T) -> T {
    T::from_f64_c(statrs::function::gamma::ln_gamma(x.to_f64_c()))
}

impl DistributionKind {
    fn trials<T: Scalar>(self) -> T {
        match self {
            DistributionKind::Binomial { trials } => {
                debug_assert!(trials >= 1, "binomial trials must be >= 1");
                T::from_u64(trials).expect("trials representable in scalar type")
            }
            _ => unreachable!("trials queried for non-binomial kind"),
        }
    }

    /// Log-partition `b(θ)`: `θ²/2` (Gaussian), `e^θ` (Poisson),
    /// `m·log(1+e^θ)` (binomial). Convex in `θ`.
    #[inline]
    pub fn log_partition<T: Scalar>(self, theta: T) -> T {
        match self {
            DistributionKind::Gaussian => theta * theta / T::from_f64_c(2.0),
            DistributionKind::Poisson => theta.exp(),
            DistributionKind::Binomial { .. } => self.trials::<T>() * log1pexp(theta),
        }
    }

    /// Mean `b'(θ)`: identity, `e^θ`, or `m·σ(θ)`. Strictly increasing in `θ`.
    #[inline]
    pub fn mean<T: Scalar>(self, theta: T) -> T {
        match self {
            DistributionKind::Gaussian => theta,
            DistributionKind::Poisson => theta.exp(),
            DistributionKind::Binomial { .. } => self.trials::<T>() * sigmoid(theta),
        }
    }

    /// Variance `b''(θ)`: the IRLS working weight. `1`, `e^θ`, or
    /// `m·σ(θ)(1−σ(θ))`.
    #[inline]
    pub fn variance<T: Scalar>(self, theta: T) -> T {
        match self {
            DistributionKind::Gaussian => T::one(),
            DistributionKind::Poisson => theta.exp(),
            DistributionKind::Binomial { .. } => {
                // σ(θ)(1−σ(θ)) written symmetrically so it underflows only
                // around |θ| ≈ 745 instead of saturating at |θ| ≈ 37.
                let e = (-theta.abs()).exp();
                let denom = T::one() + e;
                self.trials::<T>() * e / (denom * denom)
            }
        }
    }

    /// Canonical link `g(μ) = b'⁻¹(μ)`.
    ///
    /// `μ` must lie in the open mean domain (Poisson: `μ > 0`; binomial:
    /// `0 < μ < m`); boundary values are the caller's contract violation —
    /// clip first with [`DistributionKind::clip_mean`]. At a boundary the
    /// IEEE result (`±∞`) propagates.
    #[inline]
    pub fn link<T: Scalar>(self, mu: T) -> T {
        match self {
            DistributionKind::Gaussian => mu,
            DistributionKind::Poisson => {
                debug_assert!(mu > T::zero(), "Poisson mean must be positive");
                mu.ln()
            }
            DistributionKind::Binomial { .. } => {
                let m = self.trials::<T>();
                debug_assert!(
                    mu > T::zero() && mu < m,
                    "binomial mean must lie strictly between 0 and trials"
                );
                let rate = mu / m;
                // logit(rate), written to stay accurate near both ends
                rate.ln() - (-rate).ln_1p()
            }
        }
    }

    /// Inverse canonical link; identical to [`DistributionKind::mean`].
    #[inline]
    pub fn link_inverse<T: Scalar>(self, theta: T) -> T {
        self.mean(theta)
    }

    /// Full log-density at an in-support observation, base-measure constant
    /// included: reported log-likelihoods are directly interpretable.
    #[inline]
    pub fn log_density<T: Scalar>(self, x: T, theta: T) -> T {
        x * theta - self.log_partition(theta) + self.log_base_measure(x)
    }

    /// The `c(x)` term of the canonical form, constant in `θ`.
    #[inline]
    pub fn log_base_measure<T: Scalar>(self, x: T) -> T {
        let half = T::from_f64_c(0.5);
        match self {
            DistributionKind::Gaussian => -half * x * x - half * T::two_pi().ln(),
            DistributionKind::Poisson => -ln_gamma(x + T::one()),
            DistributionKind::Binomial { .. } => {
                let m = self.trials::<T>();
                ln_gamma(m + T::one()) - ln_gamma(x + T::one()) - ln_gamma(m - x + T::one())
            }
        }
    }

    /// Pull a mean into the open link domain so `link` is safe to evaluate.
    /// Gaussian: identity. Poisson: `max(μ, 0.5)`. Binomial: clamp the rate
    /// into `[1/(2m), 1 − 1/(2m)]`.
    #[inline]
    pub fn clip_mean<T: Scalar>(self, mu: T) -> T {
        match self {
            DistributionKind::Gaussian => mu,
            DistributionKind::Poisson => mu.max(T::from_f64_c(0.5)),
            DistributionKind::Binomial { .. } => {
                let m = self.trials::<T>();
                let lo = T::one() / (T::from_f64_c(2.0) * m);
                m * (mu / m).clamp(lo, T::one() - lo)
            }
        }
    }

    /// Whether `x` lies in the distribution's support (Poisson: nonnegative
    /// integer; binomial: integer in `[0, trials]`; Gaussian: any finite).
    pub fn in_support<T: Scalar>(self, x: T) -> bool {
        if !x.is_finite() {
            return false;
        }
        match self {
            DistributionKind::Gaussian => true,
            DistributionKind::Poisson => x >= T::zero() && x.fract() == T::zero(),
            DistributionKind::Binomial { .. } => {
                x >= T::zero() && x <= self.trials::<T>() && x.fract() == T::zero()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const GAUSS: DistributionKind = DistributionKind::Gaussian;
    const POIS: DistributionKind = DistributionKind::Poisson;
    fn binom(m: u64) -> DistributionKind {
        DistributionKind::Binomial { trials: m }
    }

    #[test]
    fn log_partition_at_zero() {
        assert_eq!(GAUSS.log_partition(0.0), 0.0);
        assert_eq!(POIS.log_partition(0.0), 1.0);
        assert_relative_eq!(binom(1).log_partition(0.0), 2.0f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn mean_known_values() {
        assert_eq!(GAUSS.mean(3.5), 3.5);
        assert_relative_eq!(POIS.mean(2.0f64.ln()), 2.0, max_relative = 1e-15);
        assert_relative_eq!(binom(100).mean(0.0), 50.0, max_relative = 1e-15);
    }

    #[test]
    fn variance_known_values() {
        assert_eq!(GAUSS.variance(-7.0), 1.0);
        assert_eq!(POIS.variance(0.0), 1.0);
        assert_relative_eq!(binom(4).variance(0.0), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn link_known_values() {
        assert_eq!(POIS.link(1.0), 0.0);
        assert_eq!(binom(100).link(50.0), 0.0);
    }

    #[test]
    fn link_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let mu: f64 = rng.gen_range(-20.0..20.0);
            assert_relative_eq!(GAUSS.link_inverse(GAUSS.link(mu)), mu, max_relative = 1e-12);

            let mu: f64 = rng.gen_range(0.01..50.0);
            assert_relative_eq!(POIS.link_inverse(POIS.link(mu)), mu, max_relative = 1e-12);

            let m = rng.gen_range(1..200u64);
            let mu: f64 = rng.gen_range(0.001..0.999) * m as f64;
            let k = binom(m);
            assert_relative_eq!(k.link_inverse(k.link(mu)), mu, max_relative = 1e-10);
        }
    }

    #[test]
    fn log_density_known_values() {
        let two_pi: f64 = std::f64::consts::TAU;
        assert_relative_eq!(
            GAUSS.log_density(0.0, 0.0),
            -0.5 * two_pi.ln(),
            max_relative = 1e-15
        );
        assert_relative_eq!(POIS.log_density(0.0, 0.0), -1.0, max_relative = 1e-14);
        assert_relative_eq!(
            binom(1).log_density(1.0, 0.0),
            0.5f64.ln(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn clip_mean_known_values() {
        assert_eq!(POIS.clip_mean(0.0), 0.5);
        assert_eq!(binom(100).clip_mean(0.0), 0.5);
        assert_eq!(GAUSS.clip_mean(-3.0), -3.0);
    }

    /// Central finite differences: b' matches `mean`, and mean' matches
    /// `variance`, on 1000 random θ per kind.
    #[test]
    fn derivatives_match_numerically() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let kinds = [GAUSS, POIS, binom(1), binom(100)];
        let h = 1e-5;
        for kind in kinds {
            for _ in 0..1000 {
                let theta: f64 = rng.gen_range(-10.0..10.0);
                let db =
                    (kind.log_partition(theta + h) - kind.log_partition(theta - h)) / (2.0 * h);
                assert_relative_eq!(db, kind.mean(theta), max_relative = 1e-6, epsilon = 1e-9);
                let dm = (kind.mean(theta + h) - kind.mean(theta - h)) / (2.0 * h);
                assert_relative_eq!(dm, kind.variance(theta), max_relative = 1e-5, epsilon = 1e-9);
                assert!(kind.variance(theta) > 0.0);
            }
        }
    }

    /// The log-density over θ peaks at θ = link(x) for interior x.
    #[test]
    fn log_density_maximized_at_link() {
        let cases = [
            (GAUSS, 1.3),
            (POIS, 4.0),
            (binom(10), 3.0),
            (binom(100), 42.0),
        ];
        for (kind, x) in cases {
            let argmax = kind.link(x);
            let peak = kind.log_density(x, argmax);
            let mut best_grid = f64::NEG_INFINITY;
            let mut best_theta = f64::NAN;
            for i in 0..=400 {
                let theta = -10.0 + i as f64 * 0.05;
                let ll = kind.log_density(x, theta);
                if ll > best_grid {
                    best_grid = ll;
                    best_theta = theta;
                }
            }
            assert!(peak >= best_grid);
            assert_abs_diff_eq!(best_theta, argmax, epsilon = 0.05 + 1e-12);
        }
    }

    /// Stable forms keep values finite far into the tails.
    #[test]
    fn extreme_theta_stays_finite() {
        let k = binom(100);
        assert_relative_eq!(k.log_partition(700.0), 100.0 * 700.0, max_relative = 1e-12);
        assert!(k.variance(700.0) > 0.0);
        assert!(k.variance(-700.0) > 0.0);
        assert!(k.mean(700.0f64).is_finite());
        assert_relative_eq!(GAUSS.log_partition(700.0), 245_000.0, max_relative = 1e-12);
    }

    #[test]
    fn support_checks() {
        assert!(POIS.in_support(3.0));
        assert!(!POIS.in_support(-1.0));
        assert!(!POIS.in_support(2.5));
        assert!(binom(4).in_support(4.0));
        assert!(!binom(4).in_support(5.0));
        assert!(GAUSS.in_support(-2.75));
        assert!(!GAUSS.in_support(f64::NAN));
    }

    /// The kernels compile and agree across scalar types.
    #[test]
    fn f32_matches_f64() {
        for theta in [-3.0f64, -0.5, 0.0, 1.7] {
            let k = binom(100);
            let d64 = k.log_density(40.0f64, theta);
            let d32 = k.log_density(40.0f32, theta as f32);
            assert_relative_eq!(d32 as f64, d64, max_relative = 1e-5);
        }
    }
}
