//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::Parameters;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Central-difference step `h`.
    pub step: f64,
    /// Number of random parameter draws; `None` checks every parameter.
    pub draws: Option<usize>,
    /// Restrict random draws to parameters whose analytic gradient is
    /// non-zero (dead ReLU units dominate uniform draws on wide layers).
    pub nonzero_only: bool,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl GradCheck {
    pub fn exhaustive() -> Self {
        GradCheck {
            step: 1e-5,
            draws: None,
            nonzero_only: false,
            floor: 1e-7,
            seed: 0,
        }
    }

    pub fn random(draws: usize, seed: u64) -> Self {
        GradCheck {
            step: 1e-5,
            draws: Some(draws),
            nonzero_only: true,
            floor: 1e-7,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.rel_error < tol)
    }

    pub fn worst(&self) -> Option<&GradEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `analytic` (same layout as `params`) against central
/// differences of `loss` evaluated on perturbed copies of `params`.
pub fn check_gradients<P, F>(params: &P, analytic: &P, mut loss: F, cfg: &GradCheck) -> GradReport
where
    P: Parameters + Clone,
    F: FnMut(&P) -> f64,
{
    let n = params.num_params();
    let indices: Vec<usize> = match cfg.draws {
        None => (0..n).collect(),
        Some(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let pool: Vec<usize> = if cfg.nonzero_only {
                let mut pool = Vec::new();
                let mut offset = 0;
                analytic.visit("", &mut |_, s| {
                    pool.extend(s.iter().enumerate().filter(|(_, g)| **g != 0.0).map(|(i, _)| offset + i));
                    offset += s.len();
                });
                pool
            } else {
                (0..n).collect()
            };
            let k = k.min(pool.len());
            sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
        }
    };

    let mut probe = params.clone();
    let entries = indices
        .into_iter()
        .map(|index| {
            let orig = params.get_flat(index);
            probe.set_flat(index, orig + cfg.step);
            let up = loss(&probe);
            probe.set_flat(index, orig - cfg.step);
            let down = loss(&probe);
            probe.set_flat(index, orig);
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic.get_flat(index);
            GradEntry {
                index,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric, cfg.floor),
            }
        })
        .collect();
    GradReport { entries }
}
