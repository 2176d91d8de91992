//! Goal and collision networks, the shared environment Gaussian and the
//! residual CVAE.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::dense::{Activation, Dense, Mlp, MlpCache};
use crate::nn::lstm::{LstmCell, LstmState, LstmStepCache};
use crate::nn::params::{join, Parameters};
use crate::Vec2;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 20.0;
pub const LOG_VAR_MIN: f64 = -20.0;
pub const LOG_VAR_MAX: f64 = 20.0;

/// A Gaussian force coefficient `k ~ N(mean, exp(log_std)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub mean: f64,
    pub log_std: f64,
}

impl Coefficient {
    pub fn new(mean: f64, log_std: f64) -> Self {
        Coefficient { mean, log_std }
    }

    /// A point mass; `std()` is exactly zero.
    pub fn fixed(mean: f64) -> Self {
        Coefficient {
            mean,
            log_std: f64::NEG_INFINITY,
        }
    }

    pub fn std(&self) -> f64 {
        if self.log_std == f64::NEG_INFINITY {
            0.0
        } else {
            self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX).exp()
        }
    }

    /// Whether the log-std clamp is active (its gradient is then zero).
    pub fn log_std_clamped(&self) -> bool {
        !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.log_std)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && !self.log_std.is_nan() && self.log_std != f64::INFINITY
    }
}

/// Layer widths of a [`ForceNet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForceNetDims {
    pub state: usize,
    pub pre: usize,
    pub hidden: usize,
    pub feature: usize,
    /// Context encoder widths, input first.
    pub context: Vec<usize>,
    /// Head widths; the input is `feature + context output`, the output 2.
    pub head: Vec<usize>,
}

impl ForceNetDims {
    pub fn goal() -> Self {
        ForceNetDims {
            state: 4,
            pre: 64,
            hidden: 256,
            feature: 16,
            context: vec![2, 64, 256, 16],
            head: vec![32, 512, 256, 512, 2],
        }
    }

    pub fn collision() -> Self {
        ForceNetDims {
            context: vec![4, 64, 256, 16],
            ..Self::goal()
        }
    }

    /// Narrow variant with the same wiring, for fast experiments.
    pub fn compact(context_in: usize) -> Self {
        ForceNetDims {
            state: 4,
            pre: 16,
            hidden: 32,
            feature: 8,
            context: vec![context_in, 16, 8],
            head: vec![16, 32, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.context.len() >= 2
            && self.head.len() >= 2
            && self.head[0] == self.feature + self.context[self.context.len() - 1]
            && self.head[self.head.len() - 1] == 2
            && [self.state, self.pre, self.hidden, self.feature].iter().all(|d| *d > 0)
            && self.context.iter().chain(&self.head).all(|d| *d > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("inconsistent force network dims {self:?}")))
        }
    }
}

/// State encoder (dense, LSTM, dense) plus a context encoder, joined by a
/// head that emits `(mean, log_std)` of one force coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceNet {
    pub pre: Dense,
    pub lstm: LstmCell,
    pub post: Dense,
    pub context: Mlp,
    pub head: Mlp,
}

#[derive(Debug, Clone)]
pub struct ForceStepCache {
    input: Vec<f64>,
    pre_out: Vec<f64>,
    lstm: LstmStepCache,
    hidden: Vec<f64>,
    feature: Vec<f64>,
}

/// Gradients flowing out of [`ForceNet::step_backward`].
#[derive(Debug, Clone)]
pub struct ForceStepGrad {
    pub state_input: Vec<f64>,
    pub hidden_prev: Vec<f64>,
    pub cell_prev: Vec<f64>,
}

impl ForceNet {
    pub fn new<R: Rng + ?Sized>(dims: &ForceNetDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        Ok(ForceNet {
            pre: Dense::new(dims.state, dims.pre, Activation::Relu, rng),
            lstm: LstmCell::new(dims.pre, dims.hidden, rng),
            post: Dense::new(dims.hidden, dims.feature, Activation::None, rng),
            context: Mlp::new(&dims.context, rng),
            head: Mlp::new(&dims.head, rng),
        })
    }

    pub fn dims(&self) -> ForceNetDims {
        ForceNetDims {
            state: self.pre.inputs,
            pre: self.pre.outputs,
            hidden: self.lstm.hidden_size,
            feature: self.post.outputs,
            context: self.context.dims(),
            head: self.head.dims(),
        }
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(self.lstm.hidden_size)
    }

    /// Advances the recurrent state by one frame and returns the state
    /// feature.
    pub fn step(&self, input: &[f64], state: &LstmState) -> Result<(LstmState, Vec<f64>, ForceStepCache)> {
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite network input"));
        }
        let pre_out = self.pre.forward(input)?;
        let (next, lstm) = self.lstm.step(&pre_out, state)?;
        let feature = self.post.forward(&next.hidden)?;
        let cache = ForceStepCache {
            input: input.to_vec(),
            pre_out,
            lstm,
            hidden: next.hidden.clone(),
            feature: feature.clone(),
        };
        Ok((next, feature, cache))
    }

    /// `grad_feature` is w.r.t. this step's feature; `grad_hidden` and
    /// `grad_cell` come from the following step.
    pub fn step_backward(
        &self,
        cache: &ForceStepCache,
        grad_feature: &[f64],
        grad_hidden: &[f64],
        grad_cell: &[f64],
        mut grads: Option<&mut ForceNet>,
    ) -> Result<ForceStepGrad> {
        let mut dh = self.post.backward(
            &cache.hidden,
            &cache.feature,
            grad_feature,
            grads.as_deref_mut().map(|g| &mut g.post),
        );
        for (a, b) in dh.iter_mut().zip(grad_hidden) {
            *a += b;
        }
        let lg = self
            .lstm
            .backward_step(&cache.lstm, &dh, grad_cell, grads.as_deref_mut().map(|g| &mut g.lstm))?;
        let state_input = self
            .pre
            .backward(&cache.input, &cache.pre_out, &lg.input, grads.map(|g| &mut g.pre));
        Ok(ForceStepGrad {
            state_input,
            hidden_prev: lg.hidden_prev,
            cell_prev: lg.cell_prev,
        })
    }

    pub fn encode(&self, context: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if context.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite network input"));
        }
        self.context.forward(context)
    }

    pub fn encode_backward(&self, cache: &MlpCache, grad: &[f64], grads: Option<&mut ForceNet>) -> Result<Vec<f64>> {
        self.context.backward(cache, grad, grads.map(|g| &mut g.context))
    }

    pub fn head(&self, feature: &[f64], context: &[f64]) -> Result<(Coefficient, MlpCache)> {
        let mut joint = Vec::with_capacity(feature.len() + context.len());
        joint.extend_from_slice(feature);
        joint.extend_from_slice(context);
        let (out, cache) = self.head.forward(&joint)?;
        let coef = Coefficient::new(out[0], out[1]);
        if !coef.mean.is_finite() || !coef.log_std.is_finite() {
            return Err(Error::numeric("force network produced a non-finite coefficient"));
        }
        Ok((coef, cache))
    }

    /// Returns the gradients w.r.t. the feature and the context encoding.
    pub fn head_backward(
        &self,
        cache: &MlpCache,
        grad_mean: f64,
        grad_log_std: f64,
        grads: Option<&mut ForceNet>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut joint = self
            .head
            .backward(cache, &[grad_mean, grad_log_std], grads.map(|g| &mut g.head))?;
        let context = joint.split_off(self.post.outputs);
        Ok((joint, context))
    }
}

impl Parameters for ForceNet {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        self.pre.visit(&join(prefix, "pre"), f);
        self.lstm.visit(&join(prefix, "lstm"), f);
        self.post.visit(&join(prefix, "post"), f);
        self.context.visit(&join(prefix, "context"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        self.pre.visit_mut(&join(prefix, "pre"), f);
        self.lstm.visit_mut(&join(prefix, "lstm"), f);
        self.post.visit_mut(&join(prefix, "post"), f);
        self.context.visit_mut(&join(prefix, "context"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// One learnable coefficient shared by every obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvGaussian {
    pub mean: f64,
    pub log_std: f64,
}

impl Default for EnvGaussian {
    fn default() -> Self {
        EnvGaussian { mean: 0.0, log_std: 0.0 }
    }
}

impl EnvGaussian {
    pub fn coefficient(&self) -> Coefficient {
        Coefficient::new(self.mean, self.log_std)
    }
}

impl Parameters for EnvGaussian {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(join(prefix, "mean"), std::slice::from_ref(&self.mean));
        f(join(prefix, "log_std"), std::slice::from_ref(&self.log_std));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(join(prefix, "mean"), std::slice::from_mut(&mut self.mean));
        f(join(prefix, "log_std"), std::slice::from_mut(&mut self.log_std));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeDims {
    pub residual: Vec<usize>,
    pub condition: Vec<usize>,
    pub latent: Vec<usize>,
    pub decoder: Vec<usize>,
    /// `M`: the condition holds `M + 1` history positions.
    pub history_len: usize,
    /// Std of the latent prior at sampling time.
    pub latent_std: f64,
}

impl Default for CvaeDims {
    fn default() -> Self {
        CvaeDims {
            residual: vec![2, 8, 16, 16],
            condition: vec![18, 512, 256, 16],
            latent: vec![32, 8, 50, 32],
            decoder: vec![32, 1024, 512, 1024, 2],
            history_len: 7,
            latent_std: 1.3,
        }
    }
}

impl CvaeDims {
    pub fn compact() -> Self {
        CvaeDims {
            residual: vec![2, 8, 8],
            condition: vec![18, 32, 8],
            latent: vec![16, 16, 8],
            decoder: vec![12, 32, 32, 2],
            history_len: 7,
            latent_std: 1.3,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent.last().copied().unwrap_or(0) / 2
    }

    pub fn condition_len(&self) -> usize {
        2 * (self.history_len + 1) + 2
    }

    pub fn validate(&self) -> Result<()> {
        let last = |v: &Vec<usize>| v.last().copied().unwrap_or(0);
        let ok = [&self.residual, &self.condition, &self.latent, &self.decoder]
            .iter()
            .all(|v| v.len() >= 2 && v.iter().all(|d| *d > 0))
            && self.residual[0] == 2
            && self.condition[0] == self.condition_len()
            && self.latent[0] == last(&self.residual) + last(&self.condition)
            && last(&self.latent) % 2 == 0
            && self.decoder[0] == self.latent_dim() + last(&self.condition)
            && last(&self.decoder) == 2
            && self.latent_std >= 0.0
            && self.latent_std.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("inconsistent CVAE dims {self:?}")))
        }
    }
}

/// Residual encoder, condition encoder, latent encoder and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Cvae {
    pub residual_encoder: Mlp,
    pub condition_encoder: Mlp,
    pub latent_encoder: Mlp,
    pub decoder: Mlp,
    pub history_len: usize,
    pub latent_std: f64,
}

#[derive(Debug, Clone)]
pub struct CvaeTrainOutput {
    pub reconstruction: Vec2,
    pub latent_mean: Vec<f64>,
    pub latent_log_var: Vec<f64>,
    cache: CvaeCache,
}

#[derive(Debug, Clone)]
struct CvaeCache {
    residual: MlpCache,
    condition: MlpCache,
    latent: MlpCache,
    decoder: MlpCache,
    noise: Vec<f64>,
}

/// Per-sample terms of the CVAE objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvaeLossTerms {
    pub reconstruction: f64,
    pub kl: f64,
}

impl Cvae {
    pub fn new<R: Rng + ?Sized>(dims: &CvaeDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        Ok(Cvae {
            residual_encoder: Mlp::new(&dims.residual, rng),
            condition_encoder: Mlp::new(&dims.condition, rng),
            latent_encoder: Mlp::new(&dims.latent, rng),
            decoder: Mlp::new(&dims.decoder, rng),
            history_len: dims.history_len,
            latent_std: dims.latent_std,
        })
    }

    pub fn dims(&self) -> CvaeDims {
        CvaeDims {
            residual: self.residual_encoder.dims(),
            condition: self.condition_encoder.dims(),
            latent: self.latent_encoder.dims(),
            decoder: self.decoder.dims(),
            history_len: self.history_len,
            latent_std: self.latent_std,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_encoder.output_dim() / 2
    }

    /// The condition vector: the last `M + 1` history positions (left
    /// padded with the earliest one) and the predicted next position, all
    /// relative to the newest history position and multiplied by `scale`.
    pub fn condition(&self, history: &[Vec2], predicted_next: Vec2, scale: f64) -> Result<Vec<f64>> {
        let Some(anchor) = history.last().copied() else {
            return Err(Error::shape("CVAE condition needs at least one history position"));
        };
        let n = self.history_len + 1;
        let mut out = Vec::with_capacity(2 * n + 2);
        let start = history.len().saturating_sub(n);
        let pad = n - (history.len() - start);
        for _ in 0..pad {
            let p = (history[0] - anchor) * scale;
            out.extend([p.x, p.y]);
        }
        for p in &history[start..] {
            let p = (p - anchor) * scale;
            out.extend([p.x, p.y]);
        }
        let q = (predicted_next - anchor) * scale;
        out.extend([q.x, q.y]);
        Ok(out)
    }

    /// Encoder/decoder pass with the reparameterization noise supplied.
    pub fn train_forward_with(&self, residual: Vec2, condition: &[f64], noise: &[f64]) -> Result<CvaeTrainOutput> {
        let d = self.latent_dim();
        if noise.len() != d {
            return Err(Error::shape(format!("expected {d} latent noise values, got {}", noise.len())));
        }
        let (r_feat, residual_cache) = self.residual_encoder.forward(&[residual.x, residual.y])?;
        let (c_feat, condition_cache) = self.condition_encoder.forward(condition)?;
        let joint: Vec<f64> = r_feat.iter().chain(&c_feat).copied().collect();
        let (stats, latent_cache) = self.latent_encoder.forward(&joint)?;
        let latent_mean = stats[..d].to_vec();
        let latent_log_var = stats[d..].to_vec();
        let z_in: Vec<f64> = (0..d)
            .map(|i| latent_mean[i] + (0.5 * latent_log_var[i].clamp(LOG_VAR_MIN, LOG_VAR_MAX)).exp() * noise[i])
            .chain(c_feat.iter().copied())
            .collect();
        let (out, decoder_cache) = self.decoder.forward(&z_in)?;
        let reconstruction = Vec2::new(out[0], out[1]);
        if !(reconstruction.x.is_finite() && reconstruction.y.is_finite()) {
            return Err(Error::numeric("CVAE produced a non-finite reconstruction"));
        }
        Ok(CvaeTrainOutput {
            reconstruction,
            latent_mean,
            latent_log_var,
            cache: CvaeCache {
                residual: residual_cache,
                condition: condition_cache,
                latent: latent_cache,
                decoder: decoder_cache,
                noise: noise.to_vec(),
            },
        })
    }

    pub fn train_forward<R: Rng + ?Sized>(
        &self,
        residual: Vec2,
        condition: &[f64],
        rng: &mut R,
    ) -> Result<CvaeTrainOutput> {
        let noise: Vec<f64> = (0..self.latent_dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.train_forward_with(residual, condition, &noise)
    }

    /// Per-sample loss `‖r − r̄‖² + λ·KL`; gradients are accumulated into
    /// `grads` scaled by `weight`.
    pub fn loss_and_backward(
        &self,
        residual: Vec2,
        condition: &[f64],
        noise: &[f64],
        lambda: f64,
        weight: f64,
        grads: Option<&mut Cvae>,
    ) -> Result<CvaeLossTerms> {
        let out = self.train_forward_with(residual, condition, noise)?;
        let diff = out.reconstruction - residual;
        let terms = CvaeLossTerms {
            reconstruction: diff.norm_squared(),
            kl: kl_diag_gaussian(&out.latent_mean, &out.latent_log_var)?,
        };
        if let Some(g) = grads {
            let d = self.latent_dim();
            let dout = [2.0 * diff.x * weight, 2.0 * diff.y * weight];
            let dz_in = self.decoder.backward(&out.cache.decoder, &dout, Some(&mut g.decoder))?;
            let mut dstats = vec![0.0; 2 * d];
            for i in 0..d {
                let lv = out.latent_log_var[i];
                let inside = (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&lv);
                let half_std = if inside { 0.5 * (0.5 * lv).exp() } else { 0.0 };
                let var = if inside { lv.exp() } else { lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX).exp() };
                dstats[i] = dz_in[i] + lambda * weight * out.latent_mean[i];
                dstats[d + i] = dz_in[i] * out.cache.noise[i] * half_std
                    + if inside { lambda * weight * 0.5 * (var - 1.0) } else { 0.0 };
            }
            let djoint = self.latent_encoder.backward(&out.cache.latent, &dstats, Some(&mut g.latent_encoder))?;
            let r_len = self.residual_encoder.output_dim();
            let mut dc = djoint[r_len..].to_vec();
            for (a, b) in dc.iter_mut().zip(&dz_in[d..]) {
                *a += b;
            }
            self.residual_encoder
                .backward(&out.cache.residual, &djoint[..r_len], Some(&mut g.residual_encoder))?;
            self.condition_encoder
                .backward(&out.cache.condition, &dc, Some(&mut g.condition_encoder))?;
        }
        Ok(terms)
    }

    pub fn decode(&self, condition: &[f64], z: &[f64]) -> Result<Vec2> {
        if z.len() != self.latent_dim() {
            return Err(Error::shape("latent length mismatch"));
        }
        let (c_feat, _) = self.condition_encoder.forward(condition)?;
        let z_in: Vec<f64> = z.iter().chain(&c_feat).copied().collect();
        let (out, _) = self.decoder.forward(&z_in)?;
        Ok(Vec2::new(out[0], out[1]))
    }

    /// Test-time residual: `z ~ N(0, latent_std² I)` decoded with the
    /// condition.
    pub fn sample<R: Rng + ?Sized>(&self, condition: &[f64], rng: &mut R) -> Result<Vec2> {
        let z: Vec<f64> = (0..self.latent_dim())
            .map(|_| self.latent_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.decode(condition, &z)
    }
}

impl Parameters for Cvae {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        self.residual_encoder.visit(&join(prefix, "residual"), f);
        self.condition_encoder.visit(&join(prefix, "condition"), f);
        self.latent_encoder.visit(&join(prefix, "latent"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        self.residual_encoder.visit_mut(&join(prefix, "residual"), f);
        self.condition_encoder.visit_mut(&join(prefix, "condition"), f);
        self.latent_encoder.visit_mut(&join(prefix, "latent"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

/// `½ Σ (μ² + σ² − 1 − log σ²)` with the log-variance clamped.
pub fn kl_diag_gaussian(mean: &[f64], log_var: &[f64]) -> Result<f64> {
    if mean.len() != log_var.len() {
        return Err(Error::shape("KL inputs differ in length"));
    }
    let mut kl = 0.0;
    for (m, lv) in mean.iter().zip(log_var) {
        if !m.is_finite() || lv.is_nan() {
            return Err(Error::numeric("non-finite KL input"));
        }
        let lv = lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
        kl += 0.5 * (m * m + lv.exp() - 1.0 - lv);
    }
    Ok(kl)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub goal: ForceNetDims,
    pub collision: ForceNetDims,
    pub cvae: CvaeDims,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            goal: ForceNetDims::goal(),
            collision: ForceNetDims::collision(),
            cvae: CvaeDims::default(),
        }
    }
}

impl Architecture {
    pub fn compact() -> Self {
        Architecture {
            goal: ForceNetDims::compact(2),
            collision: ForceNetDims::compact(4),
            cvae: CvaeDims::compact(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.goal.validate()?;
        self.collision.validate()?;
        self.cvae.validate()?;
        if self.goal.context[0] != 2 || self.collision.context[0] != 4 {
            return Err(Error::shape("goal context takes 2 inputs and collision context 4"));
        }
        Ok(())
    }
}

/// Every learnable component.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    pub goal: ForceNet,
    pub collision: ForceNet,
    pub env: EnvGaussian,
    pub cvae: Cvae,
}

impl Networks {
    pub fn new(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Networks {
            goal: ForceNet::new(&arch.goal, &mut rng)?,
            collision: ForceNet::new(&arch.collision, &mut rng)?,
            env: EnvGaussian::default(),
            cvae: Cvae::new(&arch.cvae, &mut rng)?,
        })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            goal: self.goal.dims(),
            collision: self.collision.dims(),
            cvae: self.cvae.dims(),
        }
    }
}

impl Parameters for Networks {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        self.goal.visit(&join(prefix, "gn"), f);
        self.collision.visit(&join(prefix, "cn"), f);
        self.env.visit(&join(prefix, "env"), f);
        self.cvae.visit(&join(prefix, "cvae"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        self.goal.visit_mut(&join(prefix, "gn"), f);
        self.collision.visit_mut(&join(prefix, "cn"), f);
        self.env.visit_mut(&join(prefix, "env"), f);
        self.cvae.visit_mut(&join(prefix, "cvae"), f);
    }
}
