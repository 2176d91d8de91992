//! Two-phase training: force networks under the variational loss, then the
//! residual CVAE with everything else frozen.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{AgentState, Window};
use crate::dynamics::{DynamicsConfig, SamplingMode};
use crate::error::{Error, Result};
use crate::losses::{l_cvae, ResidualPair};
use crate::model::Model;
use crate::networks::{Cvae, EnvGaussian, ForceNet, Networks};
use crate::nn::adam::{AdamConfig, AdamState};
use crate::nn::params::{zeros_like, Parameters};
use crate::rng;
use crate::rollout::{bayes_rollout, BayesGrads, WindowRollout};

/// Windows per parallel work unit. Fixed so that the summation order does
/// not depend on the thread count.
const CHUNK: usize = 4;
const SHUFFLE_TAG: u64 = 1 << 40;
const NOISE_TAG: u64 = 1 << 41;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseReport {
    /// Mean loss per epoch.
    pub losses: Vec<f64>,
    pub converged: bool,
}

impl PhaseReport {
    pub fn epochs(&self) -> usize {
        self.losses.len()
    }
}

/// Relative change of the last loss against the one `patience` epochs
/// earlier is below `tolerance`.
pub fn has_converged(losses: &[f64], tolerance: f64, patience: usize) -> bool {
    if losses.len() <= patience {
        return false;
    }
    let now = losses[losses.len() - 1];
    let then = losses[losses.len() - 1 - patience];
    (now - then).abs() / then.abs().max(f64::MIN_POSITIVE) < tolerance
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Goal,
    Interaction,
}

impl Part {
    fn tag(self) -> u64 {
        match self {
            Part::Goal => 0,
            Part::Interaction => 1,
        }
    }
}

struct PartGrads {
    goal: ForceNet,
    collision: ForceNet,
    env: EnvGaussian,
    loss: f64,
}

impl PartGrads {
    fn zeros(nets: &Networks) -> Self {
        PartGrads {
            goal: zeros_like(&nets.goal),
            collision: zeros_like(&nets.collision),
            env: zeros_like(&nets.env),
            loss: 0.0,
        }
    }

    fn add(&mut self, other: &PartGrads) {
        self.goal.add_scaled(1.0, &other.goal);
        self.collision.add_scaled(1.0, &other.collision);
        self.env.add_scaled(1.0, &other.env);
        self.loss += other.loss;
    }
}

fn batch_gradients(
    nets: &Networks,
    cfg: &TrainConfig,
    dynamics: &DynamicsConfig,
    batch: &[&Window],
    part: Part,
    epoch: usize,
) -> Result<PartGrads> {
    let seed = rng::derive_seed(cfg.seed, epoch as u64, part.tag());
    let weight = 1.0 / (batch.len() * cfg.mc_samples) as f64;
    let chunks: Vec<Result<PartGrads>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = PartGrads::zeros(nets);
            for w in chunk {
                for s in 0..cfg.mc_samples {
                    let mut r = rng::rollout_stream(seed, w.id, s);
                    let grads = match part {
                        Part::Goal => BayesGrads {
                            goal: Some(&mut acc.goal),
                            ..Default::default()
                        },
                        Part::Interaction => BayesGrads {
                            goal: None,
                            collision: Some(&mut acc.collision),
                            env: Some(&mut acc.env),
                        },
                    };
                    let (loss, _) = bayes_rollout(
                        nets,
                        dynamics,
                        &cfg.priors,
                        w,
                        SamplingMode::Stochastic,
                        &mut r,
                        weight,
                        Some(grads),
                    )?;
                    if !loss.total.is_finite() {
                        return Err(Error::numeric(format!(
                            "non-finite loss on window {} (agent {}, frame {})",
                            w.id, w.agent_id, w.start_frame
                        )));
                    }
                    acc.loss += weight * loss.total;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = PartGrads::zeros(nets);
    for c in chunks {
        total.add(&c?);
    }
    Ok(total)
}

fn shuffled(n: usize, seed: u64, key: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::aux_stream(seed, key));
    order
}

fn phase1_dynamics(cfg: &TrainConfig) -> DynamicsConfig {
    let mut d = cfg.dynamics;
    d.factors.epistemic = false;
    d
}

/// Alternates a goal-network update and a collision+environment update per
/// batch. On a numeric failure the networks keep their last good values.
pub fn train_phase1(networks: &mut Networks, windows: &[Window], cfg: &TrainConfig) -> Result<PhaseReport> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Contract("training needs at least one window".into()));
    }
    let dynamics = phase1_dynamics(cfg);
    let f = dynamics.factors;
    let train_goal = f.goal;
    let train_interaction = f.collision || f.environment;
    let mut adam_goal = AdamState::new(&networks.goal, AdamConfig::with_lr(cfg.lr_goal));
    let mut adam_col = AdamState::new(&networks.collision, AdamConfig::with_lr(cfg.lr_collision));
    let mut adam_env = AdamState::new(&networks.env, AdamConfig::with_lr(cfg.lr_collision));
    let mut report = PhaseReport::default();
    for epoch in 0..cfg.epochs_phase1 {
        let order = shuffled(windows.len(), cfg.seed, SHUFFLE_TAG | epoch as u64);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Window> = idx.iter().map(|&i| &windows[i]).collect();
            let share = batch.len() as f64 / windows.len() as f64;
            let context = |stage: &str, e: Error| {
                Error::numeric(format!("phase 1, epoch {epoch}, batch {b}, {stage}: {e}"))
            };
            let mut recorded = false;
            if train_goal {
                let g = batch_gradients(networks, cfg, &dynamics, &batch, Part::Goal, epoch)
                    .map_err(|e| context("goal update", e))?;
                adam_goal
                    .update(&mut networks.goal, &g.goal)
                    .map_err(|e| context("goal update", e))?;
                epoch_loss += share * g.loss;
                recorded = true;
            }
            if train_interaction {
                let g = batch_gradients(networks, cfg, &dynamics, &batch, Part::Interaction, epoch)
                    .map_err(|e| context("interaction update", e))?;
                if !(g.collision.all_finite() && g.env.all_finite()) {
                    return Err(context("interaction update", Error::numeric("non-finite gradient")));
                }
                if f.collision {
                    adam_col
                        .update(&mut networks.collision, &g.collision)
                        .map_err(|e| context("interaction update", e))?;
                }
                if f.environment {
                    adam_env
                        .update(&mut networks.env, &g.env)
                        .map_err(|e| context("interaction update", e))?;
                }
                if !recorded {
                    epoch_loss += share * g.loss;
                }
            }
        }
        log::info!("phase 1 epoch {epoch}: loss {epoch_loss:.6}");
        report.losses.push(epoch_loss);
        if has_converged(&report.losses, cfg.tolerance, cfg.patience) {
            report.converged = true;
            break;
        }
    }
    Ok(report)
}

/// One-step residual targets `r = p_{t+1} − p̄_{t+1}`, where `p̄` is the
/// mean-force step from the ground-truth state. Future velocities are
/// backward differences of ground-truth positions.
pub fn residual_pairs(networks: &Networks, windows: &[Window], cfg: &TrainConfig) -> Result<Vec<ResidualPair>> {
    let model = Model {
        networks: networks.clone(),
        dynamics: phase1_dynamics(cfg),
    };
    let scale = model.dynamics.input_scale;
    let per_window: Vec<Result<Vec<ResidualPair>>> = windows
        .par_iter()
        .map(|w| {
            let mut r = rng::rollout_stream(cfg.seed, w.id, 0);
            let mut cursor = WindowRollout::new(&model, w, w.destination)?;
            let mut pairs = Vec::with_capacity(w.future.len());
            while !cursor.done() {
                let dists = cursor.forces(&mut r)?;
                let out = cursor.sample(&dists, SamplingMode::Mean, &mut r)?;
                let drift = out.state.position;
                let truth = w.future[cursor.step];
                pairs.push(ResidualPair {
                    residual: truth - drift,
                    condition: networks.cvae.condition(&cursor.history, drift, scale)?,
                });
                let velocity = (truth - cursor.state.position) / model.dynamics.dt;
                cursor.commit(AgentState::new(truth, velocity));
            }
            Ok(pairs)
        })
        .collect();
    let mut out = Vec::new();
    for p in per_window {
        out.extend(p?);
    }
    Ok(out)
}

/// Mean CVAE loss over `pairs` and its gradient, reduced in fixed order.
pub fn cvae_batch_gradient(
    cvae: &Cvae,
    pairs: &[&ResidualPair],
    noise: &[Vec<f64>],
    lambda: f64,
) -> Result<(f64, Cvae)> {
    let n = pairs.len() as f64;
    let parts: Vec<Result<(f64, Cvae)>> = pairs
        .par_chunks(CHUNK)
        .zip(noise.par_chunks(CHUNK))
        .map(|(p, z)| {
            let owned: Vec<ResidualPair> = p.iter().map(|x| (*x).clone()).collect();
            let mut g = zeros_like(cvae);
            let loss = l_cvae(cvae, &owned, z, lambda, Some(&mut g))?;
            let w = owned.len() as f64 / n;
            g.scale(w);
            Ok((w * loss.total, g))
        })
        .collect();
    let mut grad = zeros_like(cvae);
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.add_scaled(1.0, &g);
    }
    Ok((loss, grad))
}

/// Trains the CVAE on residuals of the frozen phase-1 model.
pub fn train_phase2(networks: &mut Networks, windows: &[Window], cfg: &TrainConfig) -> Result<PhaseReport> {
    cfg.validate()?;
    let pairs = residual_pairs(networks, windows, cfg)?;
    if pairs.is_empty() {
        return Err(Error::Contract("phase 2 needs at least one residual".into()));
    }
    let latent = networks.cvae.latent_dim();
    let mut adam = AdamState::new(&networks.cvae, AdamConfig::with_lr(cfg.lr_cvae));
    let mut report = PhaseReport::default();
    for epoch in 0..cfg.epochs_phase2 {
        let order = shuffled(pairs.len(), cfg.seed, SHUFFLE_TAG | NOISE_TAG | epoch as u64);
        let seed = rng::derive_seed(cfg.seed, epoch as u64, 2);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&ResidualPair> = idx.iter().map(|&i| &pairs[i]).collect();
            let noise: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| {
                    let mut r = rng::keyed(seed, i as u64);
                    (0..latent).map(|_| StandardNormal.sample(&mut r)).collect()
                })
                .collect();
            let context = |e: Error| Error::numeric(format!("phase 2, epoch {epoch}, batch {b}: {e}"));
            let (loss, grad) = cvae_batch_gradient(&networks.cvae, &batch, &noise, cfg.lambda).map_err(context)?;
            adam.update(&mut networks.cvae, &grad).map_err(context)?;
            epoch_loss += loss * batch.len() as f64 / pairs.len() as f64;
        }
        log::info!("phase 2 epoch {epoch}: loss {epoch_loss:.6}");
        report.losses.push(epoch_loss);
        if has_converged(&report.losses, cfg.tolerance, cfg.patience) {
            report.converged = true;
            break;
        }
    }
    Ok(report)
}
