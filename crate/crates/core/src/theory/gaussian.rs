//! One-dimensional Gaussian model of the confidence-weighted signal.
//!
//! The per-sample projection of the negative gradient onto the error
//! direction is `u ~ N(μ, σ²)`, the modulation is linear, `φ = a + b·u`, and
//! ACE reweights samples by `w = 1 + α·φ`. Signal quality is `Q = E[x]² / Var(x)`.
//! Every Monte Carlo estimate is reported next to its closed form and a
//! standard error, so checks read "within k standard errors".

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{AceError, Result};
use crate::seeding::{self, Purpose};

/// Fewest samples accepted for a Monte Carlo report.
pub const MIN_SAMPLES: usize = 1000;
/// Largest α for which the first-order quality check applies by default.
pub const SMALL_ALPHA: f64 = 0.1;
const GAMMA_BATCHES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianModelConfig {
    pub mu: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for GaussianModelConfig {
    fn default() -> Self {
        Self {
            mu: 0.5,
            sigma: 1.0,
            a: 0.5,
            b: 1.0,
            alpha: SMALL_ALPHA,
            n_samples: 1_000_000,
            seed: 0,
        }
    }
}

impl GaussianModelConfig {
    fn validate(&self) -> Result<()> {
        let finite = [self.mu, self.sigma, self.a, self.b, self.alpha]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(AceError::input("Gaussian model parameters must be finite"));
        }
        if self.sigma <= 0.0 {
            return Err(AceError::input(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.alpha < 0.0 {
            return Err(AceError::input(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if self.n_samples < MIN_SAMPLES {
            return Err(AceError::input(format!(
                "need at least {MIN_SAMPLES} samples, got {}",
                self.n_samples
            )));
        }
        Ok(())
    }

    fn moments(&self) -> [f64; 4] {
        let (m, s2) = (self.mu, self.sigma * self.sigma);
        [
            m,
            m * m + s2,
            m.powi(3) + 3.0 * m * s2,
            m.powi(4) + 6.0 * m * m * s2 + 3.0 * s2 * s2,
        ]
    }

    pub fn q_std_analytic(&self) -> f64 {
        (self.mu / self.sigma).powi(2)
    }

    pub fn gamma_analytic(&self) -> f64 {
        self.b * self.mu * self.sigma * self.sigma * (1.0 - self.q_std_analytic())
    }
}

/// A Monte Carlo value, its standard error and the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mc: f64,
    pub se: f64,
    pub analytic: f64,
}

impl Estimate {
    pub fn z_score(&self) -> f64 {
        let diff = (self.mc - self.analytic).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.se
        }
    }

    pub fn within(&self, k: f64) -> bool {
        (self.mc - self.analytic).abs() <= k * self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianQualityReport {
    pub config: GaussianModelConfig,
    /// `Cov(u, φu) = aσ² + 2bμσ²`.
    pub delta1: Estimate,
    /// `Cov(φ, u) = bσ²`.
    pub cov_phi_u: Estimate,
    /// `Cov(φ, u²) = 2bμσ²`.
    pub cov_phi_u2: Estimate,
    /// `Cov(φ,u)·μ / Cov(φ,u²)`, which is exactly 1/2 whenever `bμ ≠ 0`.
    pub cov_ratio_mc: Option<f64>,
    pub q_std: Estimate,
    pub q_ace_mc: f64,
    /// `Cov(φ,u)·μ·(1+Q) − Q·Cov(φ,u²) = bμσ²(1 − Q)`; batch-means standard error.
    pub gamma: Estimate,
    pub negative_phi_fraction: f64,
}

impl GaussianQualityReport {
    /// The closed-form moment identities all hold within `k` standard errors.
    pub fn moments_within(&self, k: f64) -> bool {
        self.delta1.within(k)
            && self.cov_phi_u.within(k)
            && self.cov_phi_u2.within(k)
            && self.gamma.within(k)
    }
}

fn sample_u(config: &GaussianModelConfig) -> Vec<f64> {
    let mut rng = seeding::stream(config.seed, Purpose::Gaussian, 0, 0);
    (0..config.n_samples)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            config.mu + config.sigma * z
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

/// Standard error of a mean of influence values.
fn influence_se(psi: impl Iterator<Item = f64>, n: usize) -> f64 {
    (mean(psi.map(|p| p * p), n) / n as f64).sqrt()
}

struct Moments {
    mean_u: f64,
    var_u: f64,
    cov_phi_u: f64,
    cov_phi_u2: f64,
}

fn moments_of(u: &[f64], config: &GaussianModelConfig) -> Moments {
    let n = u.len();
    let phi = |x: f64| config.a + config.b * x;
    let mean_u = mean(u.iter().copied(), n);
    let mean_phi = mean(u.iter().map(|&x| phi(x)), n);
    let mean_u2 = mean(u.iter().map(|&x| x * x), n);
    Moments {
        mean_u,
        var_u: mean(u.iter().map(|&x| (x - mean_u).powi(2)), n),
        cov_phi_u: mean(u.iter().map(|&x| (phi(x) - mean_phi) * (x - mean_u)), n),
        cov_phi_u2: mean(
            u.iter().map(|&x| (phi(x) - mean_phi) * (x * x - mean_u2)),
            n,
        ),
    }
}

fn gamma_of(m: &Moments) -> f64 {
    let q = m.mean_u * m.mean_u / m.var_u;
    m.cov_phi_u * m.mean_u * (1.0 + q) - q * m.cov_phi_u2
}

fn quality(xs: impl Iterator<Item = f64> + Clone, n: usize) -> f64 {
    let m = mean(xs.clone(), n);
    let v = mean(xs.map(|x| (x - m).powi(2)), n);
    m * m / v
}

/// Monte Carlo moments of the Gaussian model against their closed forms.
pub fn gaussian_quality_report(config: &GaussianModelConfig) -> Result<GaussianQualityReport> {
    config.validate()?;
    let u = sample_u(config);
    let n = u.len();
    let c = *config;
    let phi = |x: f64| c.a + c.b * x;
    let [mu, m2, _, _] = c.moments();
    let s2 = c.sigma * c.sigma;
    let m = moments_of(&u, config);

    // Cov(u, φu) = E[φu²] − E[u]E[φu]
    let mean_y = mean(u.iter().map(|&x| phi(x) * x), n);
    let mean_x = mean(u.iter().map(|&x| phi(x) * x * x), n);
    let delta1_mc = mean_x - m.mean_u * mean_y;
    let delta1_se = influence_se(
        u.iter().map(|&x| {
            (phi(x) * x * x - mean_x) - mean_y * (x - m.mean_u) - m.mean_u * (phi(x) * x - mean_y)
        }),
        n,
    );
    let mean_phi = mean(u.iter().map(|&x| phi(x)), n);
    let mean_u2 = mean(u.iter().map(|&x| x * x), n);
    let cov_se = influence_se(
        u.iter()
            .map(|&x| (phi(x) - mean_phi) * (x - m.mean_u) - m.cov_phi_u),
        n,
    );
    let cov2_se = influence_se(
        u.iter()
            .map(|&x| (phi(x) - mean_phi) * (x * x - mean_u2) - m.cov_phi_u2),
        n,
    );
    let q_std_se = {
        // Q = μ²/v: ∂Q/∂μ = 2μ/v (centred), ∂Q/∂v = −μ²/v²
        let v = m.var_u;
        influence_se(
            u.iter().map(|&x| {
                let d = x - m.mean_u;
                2.0 * m.mean_u / v * d - m.mean_u * m.mean_u / (v * v) * (d * d - v)
            }),
            n,
        )
    };

    let batch = n / GAMMA_BATCHES;
    let gammas: Vec<f64> = (0..GAMMA_BATCHES)
        .map(|i| gamma_of(&moments_of(&u[i * batch..(i + 1) * batch], config)))
        .collect();
    let gamma_mean = gammas.iter().sum::<f64>() / GAMMA_BATCHES as f64;
    let gamma_var =
        gammas.iter().map(|g| (g - gamma_mean).powi(2)).sum::<f64>() / (GAMMA_BATCHES - 1) as f64;
    // Full-sample estimate, with the spread of batch estimates scaled to n.
    let gamma_se = (gamma_var / GAMMA_BATCHES as f64).sqrt();

    let w = |x: f64| 1.0 + c.alpha * phi(x);
    let ratio = (m.cov_phi_u2 != 0.0).then(|| m.cov_phi_u * m.mean_u / m.cov_phi_u2);

    Ok(GaussianQualityReport {
        config: c,
        delta1: Estimate {
            mc: delta1_mc,
            se: delta1_se,
            analytic: c.a * s2 + 2.0 * c.b * mu * s2,
        },
        cov_phi_u: Estimate {
            mc: m.cov_phi_u,
            se: cov_se,
            analytic: c.b * s2,
        },
        cov_phi_u2: Estimate {
            mc: m.cov_phi_u2,
            se: cov2_se,
            analytic: c.b * (c.moments()[2] - mu * m2),
        },
        cov_ratio_mc: ratio,
        q_std: Estimate {
            mc: m.mean_u * m.mean_u / m.var_u,
            se: q_std_se,
            analytic: c.q_std_analytic(),
        },
        q_ace_mc: quality(u.iter().map(|&x| w(x) * x), n),
        gamma: Estimate {
            mc: gamma_of(&m),
            se: gamma_se,
            analytic: c.gamma_analytic(),
        },
        negative_phi_fraction: u.iter().filter(|&&x| phi(x) < 0.0).count() as f64 / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QualityVerdict {
    pub q_std: f64,
    pub q_ace: f64,
    /// `b > 0`, `μ > 0` and `Q_std < 1`, so Γ > 0.
    pub hypothesis_holds: bool,
    pub improved: bool,
}

/// Compares `Q_ACE` with `Q_std` on one shared sample, for `α ≤ 0.1`.
pub fn quality_improvement_check(config: &GaussianModelConfig) -> Result<QualityVerdict> {
    quality_improvement_check_with_limit(config, SMALL_ALPHA)
}

pub fn quality_improvement_check_with_limit(
    config: &GaussianModelConfig,
    max_alpha: f64,
) -> Result<QualityVerdict> {
    if config.alpha > max_alpha {
        return Err(AceError::input(format!(
            "alpha {} exceeds the first-order limit {max_alpha}",
            config.alpha
        )));
    }
    let report = gaussian_quality_report(config)?;
    Ok(QualityVerdict {
        q_std: report.q_std.mc,
        q_ace: report.q_ace_mc,
        hypothesis_holds: config.b > 0.0 && config.mu > 0.0 && config.q_std_analytic() < 1.0,
        improved: report.q_ace_mc > report.q_std.mc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondMomentReport {
    pub score_dim: usize,
    pub std_moment: f64,
    pub ace_moment: f64,
    /// `E[(w² − 1)‖s‖²] = 2αE[φ‖s‖²] + α²E[φ²‖s‖²]`.
    pub increase: Estimate,
    pub ace_exceeds_std: bool,
}

/// Gradient second moments with a unit penalty magnitude.
///
/// The per-sample score is `s = u·e₁ + (0, ξ)` with `ξ ~ N(0, I_{d−1})`
/// independent of `u`; GRPO weights it by 1 and ACE by `w = 1 + αφ`.
pub fn second_moment_check(
    config: &GaussianModelConfig,
    score_dim: usize,
) -> Result<SecondMomentReport> {
    config.validate()?;
    if score_dim == 0 {
        return Err(AceError::input("score dimension must be at least 1"));
    }
    let c = *config;
    let u = sample_u(config);
    let n = u.len();
    let mut rng = seeding::stream(c.seed, Purpose::Gaussian, 1, score_dim as u64);
    let mut sum_std = 0.0;
    let mut sum_ace = 0.0;
    let mut incs = Vec::with_capacity(n);
    for &x in &u {
        let noise: f64 = (1..score_dim)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * z
            })
            .sum();
        let norm2 = x * x + noise;
        let w = 1.0 + c.alpha * (c.a + c.b * x);
        sum_std += norm2;
        sum_ace += w * w * norm2;
        incs.push((w * w - 1.0) * norm2);
    }
    let inc_mean = incs.iter().sum::<f64>() / n as f64;
    let inc_se = influence_se(incs.iter().map(|v| v - inc_mean), n);

    let [mu, m2, m3, m4] = c.moments();
    let rest = (score_dim - 1) as f64;
    let e_phi_s = c.a * m2 + c.b * m3 + rest * (c.a + c.b * mu);
    let e_phi2_s = c.a * c.a * m2
        + 2.0 * c.a * c.b * m3
        + c.b * c.b * m4
        + rest * (c.a * c.a + 2.0 * c.a * c.b * mu + c.b * c.b * m2);

    let std_moment = sum_std / n as f64;
    let ace_moment = sum_ace / n as f64;
    Ok(SecondMomentReport {
        score_dim,
        std_moment,
        ace_moment,
        increase: Estimate {
            mc: inc_mean,
            se: inc_se,
            analytic: 2.0 * c.alpha * e_phi_s + c.alpha * c.alpha * e_phi2_s,
        },
        ace_exceeds_std: ace_moment > std_moment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectionalVariance {
    /// `Var(w·u) − Var(u)`.
    pub increase: Estimate,
    /// The increase exceeds three standard errors.
    pub significant: bool,
}

/// Variance of the weighted projection along the error direction.
pub fn directional_variance_check(config: &GaussianModelConfig) -> Result<DirectionalVariance> {
    config.validate()?;
    let c = *config;
    let u = sample_u(config);
    let n = u.len();
    let w = |x: f64| 1.0 + c.alpha * (c.a + c.b * x);
    let mean_wu = mean(u.iter().map(|&x| w(x) * x), n);
    let mean_u = mean(u.iter().copied(), n);
    let var_wu = mean(u.iter().map(|&x| (w(x) * x - mean_wu).powi(2)), n);
    let var_u = mean(u.iter().map(|&x| (x - mean_u).powi(2)), n);
    let d = var_wu - var_u;
    let se = influence_se(
        u.iter()
            .map(|&x| (w(x) * x - mean_wu).powi(2) - (x - mean_u).powi(2) - d),
        n,
    );

    let [mu, m2, m3, m4] = c.moments();
    let k = 1.0 + c.alpha * c.a;
    let ab = c.alpha * c.b;
    let e_w2u2 = k * k * m2 + 2.0 * k * ab * m3 + ab * ab * m4;
    let e_wu = k * mu + ab * m2;
    let analytic = e_w2u2 - e_wu * e_wu - c.sigma * c.sigma;
    let increase = Estimate {
        mc: d,
        se,
        analytic,
    };
    Ok(DirectionalVariance {
        increase,
        significant: d > 3.0 * se,
    })
}

/// The 27-point grid `μ, σ ∈ {0.25, 0.5, 1}` × `{0.5, 1, 2}`, `b ∈ {0.5, 1, 2}`.
pub fn default_grid(base: &GaussianModelConfig) -> Vec<GaussianModelConfig> {
    let mut out = Vec::with_capacity(27);
    for mu in [0.25, 0.5, 1.0] {
        for sigma in [0.5, 1.0, 2.0] {
            for b in [0.5, 1.0, 2.0] {
                out.push(GaussianModelConfig {
                    mu,
                    sigma,
                    b,
                    ..*base
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mu: f64, sigma: f64, b: f64) -> GaussianModelConfig {
        GaussianModelConfig {
            mu,
            sigma,
            b,
            n_samples: 200_000,
            seed: 3,
            ..GaussianModelConfig::default()
        }
    }

    #[test]
    fn refuses_small_samples() {
        let c = GaussianModelConfig {
            n_samples: 999,
            ..GaussianModelConfig::default()
        };
        assert!(gaussian_quality_report(&c).is_err());
    }

    #[test]
    fn moments_match_closed_forms() {
        let r = gaussian_quality_report(&small(0.5, 1.0, 1.0)).unwrap();
        assert!(r.moments_within(4.0), "{r:?}");
        assert!((r.cov_ratio_mc.unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn constant_modulation_has_no_covariance() {
        let r = gaussian_quality_report(&small(0.5, 1.0, 0.0)).unwrap();
        assert_eq!(r.cov_phi_u.analytic, 0.0);
        assert!(r.cov_phi_u.mc.abs() < 1e-12);
        assert!(r.cov_ratio_mc.is_none() || r.cov_phi_u2.mc.abs() < 1e-12);
    }

    #[test]
    fn quality_improves_below_unit_snr() {
        let v = quality_improvement_check(&small(0.25, 1.0, 1.0)).unwrap();
        assert!(v.hypothesis_holds);
        assert!(v.improved, "{v:?}");
        assert!(quality_improvement_check(&GaussianModelConfig {
            alpha: 0.5,
            ..small(0.25, 1.0, 1.0)
        })
        .is_err());
    }

    #[test]
    fn second_moment_increase_matches() {
        let r = second_moment_check(&small(0.5, 1.0, 1.0), 4).unwrap();
        assert!(r.increase.within(4.0), "{r:?}");
        assert!(r.ace_exceeds_std);
        let zero = second_moment_check(
            &GaussianModelConfig {
                alpha: 0.0,
                ..small(0.5, 1.0, 1.0)
            },
            4,
        )
        .unwrap();
        assert_eq!(zero.ace_moment, zero.std_moment);
        assert_eq!(zero.increase.analytic, 0.0);
    }

    #[test]
    fn directional_variance_matches() {
        let r = directional_variance_check(&small(0.5, 1.0, 1.0)).unwrap();
        assert!(r.increase.within(4.0), "{r:?}");
    }

    #[test]
    fn grid_has_27_points() {
        let g = default_grid(&GaussianModelConfig::default());
        assert_eq!(g.len(), 27);
        assert_eq!(g.iter().filter(|c| c.q_std_analytic() < 1.0).count(), 18);
    }
}
