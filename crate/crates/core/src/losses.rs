//! Variational objective for the force coefficients and the CVAE
//! objective, with their closed-form Gaussian terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{Coefficient, Cvae};
pub use crate::networks::kl_diag_gaussian;
use crate::Vec2;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mean: f64,
    pub std: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec { mean: 0.0, std: 1.0 }
    }
}

impl PriorSpec {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        let p = PriorSpec { mean, std };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(Error::Contract(format!("prior std must be positive, got {}", self.std)));
        }
        Ok(())
    }

    pub fn log_density(&self, k: f64) -> f64 {
        gaussian_log_density(k, self.mean, self.std)
    }

    /// `d/dk` of the negative log density.
    pub fn neg_log_density_grad(&self, k: f64) -> f64 {
        (k - self.mean) / (self.std * self.std)
    }
}

/// One prior per coefficient family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Priors {
    pub goal: PriorSpec,
    pub collision: PriorSpec,
    pub environment: PriorSpec,
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        self.goal.validate()?;
        self.collision.validate()?;
        self.environment.validate()
    }
}

pub fn gaussian_log_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - HALF_LN_2PI
}

/// `Σ log N(k_i; μ_i, σ_i²)`.
pub fn log_q(samples: &[f64], coefficients: &[Coefficient]) -> Result<f64> {
    if samples.len() != coefficients.len() {
        return Err(Error::shape("one coefficient per sample required"));
    }
    let mut total = 0.0;
    for (k, c) in samples.iter().zip(coefficients) {
        let std = c.std();
        if !(std > 0.0) {
            return Err(Error::Contract("posterior std must be positive".into()));
        }
        total += gaussian_log_density(*k, c.mean, std);
    }
    Ok(total)
}

pub fn log_prior(samples: &[f64], prior: &PriorSpec) -> Result<f64> {
    prior.validate()?;
    Ok(samples.iter().map(|k| prior.log_density(*k)).sum())
}

/// `−½ Σ_t ‖p̄_t − p_t‖² − (t_f/2)·log 2π`.
pub fn log_likelihood(predicted: &[Vec2], truth: &[Vec2]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!(
            "predicted {} positions, truth has {}",
            predicted.len(),
            truth.len()
        )));
    }
    let sq: f64 = predicted.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok(-0.5 * sq - predicted.len() as f64 * HALF_LN_2PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub log_q: f64,
    pub log_prior: f64,
    pub log_likelihood: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(log_q: f64, log_prior: f64, log_likelihood: f64) -> Self {
        LossBreakdown {
            log_q,
            log_prior,
            log_likelihood,
            total: log_q - log_likelihood - log_prior,
        }
    }

    pub fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.log_q += weight * other.log_q;
        self.log_prior += weight * other.log_prior;
        self.log_likelihood += weight * other.log_likelihood;
        self.total += weight * other.total;
    }
}

/// A residual target with its CVAE condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPair {
    pub residual: Vec2,
    pub condition: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CvaeLoss {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

/// Mean over pairs of `‖r − r̄‖² + λ·KL`, with the latent noise supplied
/// per pair. Gradients of the mean are accumulated into `grads`.
pub fn l_cvae(
    cvae: &Cvae,
    pairs: &[ResidualPair],
    noise: &[Vec<f64>],
    lambda: f64,
    mut grads: Option<&mut Cvae>,
) -> Result<CvaeLoss> {
    if pairs.is_empty() {
        return Err(Error::Contract("CVAE loss needs at least one residual".into()));
    }
    if noise.len() != pairs.len() {
        return Err(Error::shape("one latent noise vector per residual required"));
    }
    let w = 1.0 / pairs.len() as f64;
    let mut out = CvaeLoss::default();
    for (p, xi) in pairs.iter().zip(noise) {
        let t = cvae.loss_and_backward(p.residual, &p.condition, xi, lambda, w, grads.as_deref_mut())?;
        out.reconstruction += w * t.reconstruction;
        out.kl += w * t.kl;
    }
    out.total = out.reconstruction + lambda * out.kl;
    if !out.total.is_finite() {
        return Err(Error::numeric("non-finite CVAE loss"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::CvaeDims;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_q_hand_values() {
        let v = log_q(&[0.3], &[Coefficient::new(0.3, 0.0)]).unwrap();
        assert!((v + 0.918939).abs() < 1e-6);
        let v = log_q(&[0.3], &[Coefficient::new(0.3, 2f64.ln())]).unwrap();
        assert!((v + 1.612086).abs() < 1e-6);
        let at_mode = log_q(&[1.0], &[Coefficient::new(1.0, 0.2)]).unwrap();
        for k in [-1.0, 0.5, 0.99, 1.01, 3.0] {
            assert!(log_q(&[k], &[Coefficient::new(1.0, 0.2)]).unwrap() < at_mode);
        }
        assert!(matches!(log_q(&[0.0], &[Coefficient::fixed(0.0)]), Err(Error::Contract(_))));
    }

    #[test]
    fn log_prior_hand_values() {
        let p = PriorSpec::default();
        assert!((log_prior(&[0.0], &p).unwrap() + 0.918939).abs() < 1e-6);
        let q = PriorSpec::new(2.0, 3.0).unwrap();
        let mode = log_prior(&[2.0], &q).unwrap();
        assert!((log_prior(&[5.0], &q).unwrap() - (mode - 0.5)).abs() < 1e-12);
        let c = Coefficient::new(2.0, 3f64.ln());
        for k in [-4.0, 0.0, 7.5] {
            let diff = log_q(&[k], &[c]).unwrap() - log_prior(&[k], &q).unwrap();
            assert!(diff.abs() < 1e-12);
        }
        assert!(PriorSpec::new(0.0, 0.0).is_err());
    }

    #[test]
    fn log_likelihood_hand_values() {
        let truth: Vec<Vec2> = (0..12).map(|i| Vec2::new(i as f64, 2.0 * i as f64)).collect();
        assert!((log_likelihood(&truth, &truth).unwrap() + 11.02726).abs() < 1e-5);
        let shifted: Vec<Vec2> = truth.iter().map(|p| p + Vec2::new(1.0, 0.0)).collect();
        assert!((log_likelihood(&shifted, &truth).unwrap() + 17.02726).abs() < 1e-5);
        assert!(log_likelihood(&shifted[..3], &truth).is_err());
        let mut moved = truth.clone();
        let mut last = log_likelihood(&moved, &truth).unwrap();
        for _ in 0..5 {
            moved[4].x += 0.5;
            let now = log_likelihood(&moved, &truth).unwrap();
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn cvae_loss_lambda_terms() {
        let cvae = Cvae::new(&CvaeDims::compact(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let pairs: Vec<ResidualPair> = (0..4)
            .map(|i| ResidualPair {
                residual: Vec2::new(0.1 * i as f64, -0.2),
                condition: vec![0.05 * i as f64; 18],
            })
            .collect();
        let noise = vec![vec![0.3; cvae.latent_dim()]; 4];
        let zero = l_cvae(&cvae, &pairs, &noise, 0.0, None).unwrap();
        assert_eq!(zero.total, zero.reconstruction);
        let one = l_cvae(&cvae, &pairs, &noise, 1.0, None).unwrap();
        let two = l_cvae(&cvae, &pairs, &noise, 2.0, None).unwrap();
        assert!(((two.total - one.total) - one.kl).abs() < 1e-12);
    }

    /// Trapezoidal KL(N(μ, σ²) ‖ N(0, 1)) over ±12 std.
    fn kl_numeric(mu: f64, sigma: f64) -> f64 {
        let n = 20_000;
        let (lo, hi) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let q = gaussian_log_density(x, mu, sigma);
            let p = gaussian_log_density(x, 0.0, 1.0);
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * q.exp() * (q - p);
        }
        acc * h
    }

    #[test]
    fn kl_matches_numerical_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        for _ in 0..100 {
            let mu = rng.random_range(-2.0..2.0);
            let lv: f64 = rng.random_range(-2.0..1.5);
            let closed = kl_diag_gaussian(&[mu], &[lv]).unwrap();
            assert!((closed - kl_numeric(mu, (0.5 * lv).exp())).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn log_densities_match_oracle(k in -5.0f64..5.0, m in -2.0f64..2.0, ls in -0.5f64..2.0) {
            let s = ls.exp();
            let oracle = (-(k - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            let lq = log_q(&[k], &[Coefficient::new(m, ls)]).unwrap();
            let lp = log_prior(&[k], &PriorSpec::new(m, s).unwrap()).unwrap();
            prop_assert!((lq - oracle.ln()).abs() < 1e-10 * (1.0 + lq.abs()));
            prop_assert!((lp - lq).abs() < 1e-10 * (1.0 + lq.abs()));
        }

        #[test]
        fn kl_is_non_negative(m in proptest::collection::vec(-5.0f64..5.0, 16), lv in proptest::collection::vec(-8.0f64..8.0, 16)) {
            prop_assert!(kl_diag_gaussian(&m, &lv).unwrap() >= 0.0);
        }
    }
}
