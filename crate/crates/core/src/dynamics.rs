//! Closed-form force bases, their Gaussian coefficients and the
//! discretized stochastic step.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{is_neighbor, AgentState, DEFAULT_DT, DEFAULT_NEIGHBOR_RADIUS};
use crate::error::{Error, Result};
use crate::networks::Coefficient;
use crate::Vec2;

pub const MIN_DISTANCE: f64 = 1e-9;
pub const DEFAULT_COLLISION_RANGE: f64 = 50.0;
pub const DEFAULT_INPUT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Goal,
    Collision,
    Environment,
}

impl FactorKind {
    pub fn name(&self) -> &'static str {
        match self {
            FactorKind::Goal => "goal",
            FactorKind::Collision => "collision",
            FactorKind::Environment => "environment",
        }
    }
}

/// `F = base · k`, `k ~ N(mean, std²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceDistribution {
    pub kind: FactorKind,
    pub base: Vec2,
    pub coefficient: Coefficient,
}

impl ForceDistribution {
    pub fn mean_force(&self) -> Vec2 {
        self.base * self.coefficient.mean
    }

    pub fn axis_std(&self) -> Vec2 {
        self.base.abs() * self.coefficient.std()
    }
}

/// Which factors and noise sources take part in a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factors {
    pub goal: bool,
    pub collision: bool,
    pub environment: bool,
    pub aleatoric: bool,
    pub epistemic: bool,
}

impl Default for Factors {
    fn default() -> Self {
        Factors {
            goal: true,
            collision: true,
            environment: true,
            aleatoric: true,
            epistemic: true,
        }
    }
}

impl Factors {
    pub fn goal_only() -> Self {
        Factors {
            goal: true,
            collision: false,
            environment: false,
            aleatoric: false,
            epistemic: false,
        }
    }

    pub fn deterministic() -> Self {
        Factors {
            aleatoric: false,
            epistemic: false,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub dt: f64,
    /// Collision potential range `r_col`, pixels.
    pub collision_range: f64,
    pub neighbor_radius: f64,
    /// Obstacles farther than this exert no force.
    pub obstacle_radius: f64,
    /// Full view angle in degrees; `None` disables the cone test.
    pub fov: Option<f64>,
    /// Multiplier applied to pixel quantities before they enter a network.
    pub input_scale: f64,
    pub factors: Factors,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            dt: DEFAULT_DT,
            collision_range: DEFAULT_COLLISION_RANGE,
            neighbor_radius: DEFAULT_NEIGHBOR_RADIUS,
            obstacle_radius: DEFAULT_NEIGHBOR_RADIUS,
            fov: None,
            input_scale: DEFAULT_INPUT_SCALE,
            factors: Factors::default(),
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.dt) || !pos(self.collision_range) || !pos(self.input_scale) {
            return Err(Error::Validation("dt, collision_range and input_scale must be positive".into()));
        }
        if !(self.neighbor_radius >= 0.0 && self.obstacle_radius >= 0.0) {
            return Err(Error::Validation("radii must be non-negative".into()));
        }
        if let Some(f) = self.fov {
            if !(f > 0.0 && f <= 360.0) {
                return Err(Error::Validation(format!("fov must lie in (0, 360], got {f}")));
            }
        }
        Ok(())
    }

    /// Mean mode is forced when aleatoric sampling is disabled.
    pub fn effective_mode(&self, mode: SamplingMode) -> SamplingMode {
        if self.factors.aleatoric {
            mode
        } else {
            SamplingMode::Mean
        }
    }

    pub fn select_neighbors(&self, subject: &AgentState, candidates: &[AgentState]) -> Vec<AgentState> {
        if !self.factors.collision {
            return Vec::new();
        }
        candidates
            .iter()
            .filter(|c| is_neighbor(subject, c.position, self.neighbor_radius, self.fov))
            .copied()
            .collect()
    }

    pub fn select_obstacles<'a>(&self, position: Vec2, obstacles: impl IntoIterator<Item = &'a Vec2>) -> Vec<Vec2> {
        if !self.factors.environment {
            return Vec::new();
        }
        obstacles
            .into_iter()
            .filter(|o| (*o - position).norm() < self.obstacle_radius)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Stochastic,
    Mean,
}

/// `(p_T − p)/(n·dt) − v`: the velocity change that reaches the target in
/// the remaining `n` steps.
pub fn goal_force_base(p: Vec2, v: Vec2, target: Vec2, steps_remaining: usize, dt: f64) -> Result<Vec2> {
    if steps_remaining == 0 {
        return Err(Error::Contract("goal force needs at least one remaining step".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Contract("dt must be positive".into()));
    }
    Ok((target - p) / (steps_remaining as f64 * dt) - v)
}

fn clamp_offset<R: Rng + ?Sized>(r: Vec2, rng: &mut R) -> (Vec2, f64, bool) {
    let d = r.norm();
    if d >= MIN_DISTANCE && d.is_finite() {
        return (r, d, false);
    }
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let u = Vec2::new(angle.cos(), angle.sin()) * MIN_DISTANCE;
    (u, MIN_DISTANCE, true)
}

/// Negative gradient of `r_col · exp(−‖r‖/r_col)`, with `r = p_i − p_j`.
/// Offsets shorter than [`MIN_DISTANCE`] get a random direction; the flag
/// reports the clamp.
pub fn collision_force_base<R: Rng + ?Sized>(r: Vec2, r_col: f64, rng: &mut R) -> (Vec2, bool) {
    let (r, d, clamped) = clamp_offset(r, rng);
    ((-d / r_col).exp() * r / d, clamped)
}

/// `(p − o)/‖p − o‖²`.
pub fn env_force_base<R: Rng + ?Sized>(p: Vec2, obstacle: Vec2, rng: &mut R) -> (Vec2, bool) {
    let (r, d, clamped) = clamp_offset(p - obstacle, rng);
    (r / (d * d), clamped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: AgentState,
    pub force: Vec2,
    /// Sampled coefficient per distribution, in input order.
    pub coefficients: Vec<f64>,
    pub residual: Vec2,
}

/// `v' = v + F·dt`, `p' = p + v'·dt + ε`.
pub fn sde_step(state: &AgentState, force: Vec2, epsilon: Vec2, dt: f64) -> Result<(AgentState, Vec2)> {
    if !(dt > 0.0) {
        return Err(Error::Contract("dt must be positive".into()));
    }
    let velocity = state.velocity + force * dt;
    let drift = state.position + velocity * dt;
    let next = AgentState::new(drift + epsilon, velocity);
    if !next.is_finite() {
        return Err(Error::numeric("state became non-finite"));
    }
    Ok((next, drift))
}

/// Per-step coefficients produced by a model for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCoefficients {
    pub goal: Coefficient,
    /// One per neighbor, in the order given.
    pub collision: Vec<Coefficient>,
}

/// Everything a model needs to act for one agent.
pub trait ForceModel {
    /// Per-agent recurrent state.
    type Memory: Clone;

    fn dynamics(&self) -> &DynamicsConfig;

    /// Starts a window. Every observed state except the newest advances the
    /// memory; the newest is consumed by the first `coefficients` call.
    fn begin(&self, observed: &[AgentState], destination: Vec2) -> Result<Self::Memory>;

    /// Advances the memory with the current state and returns the goal and
    /// per-neighbor coefficients.
    fn coefficients(
        &self,
        memory: &mut Self::Memory,
        state: &AgentState,
        destination: Vec2,
        neighbors: &[AgentState],
    ) -> Result<StepCoefficients>;

    fn environment(&self) -> Coefficient;

    /// Epistemic residual for the next position.
    fn residual(&self, history: &[Vec2], predicted_next: Vec2, rng: &mut dyn rand::RngCore) -> Result<Vec2>;
}

/// Constant coefficients, optionally with isotropic Gaussian residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedCoefficients {
    pub goal: Coefficient,
    pub collision: Coefficient,
    pub environment: Coefficient,
    pub residual_std: f64,
    pub config: DynamicsConfig,
}

impl FixedCoefficients {
    pub fn new(goal: Coefficient, collision: Coefficient, environment: Coefficient, config: DynamicsConfig) -> Self {
        FixedCoefficients {
            goal,
            collision,
            environment,
            residual_std: 0.0,
            config,
        }
    }
}

impl ForceModel for FixedCoefficients {
    type Memory = ();

    fn dynamics(&self) -> &DynamicsConfig {
        &self.config
    }

    fn begin(&self, _observed: &[AgentState], _destination: Vec2) -> Result<()> {
        Ok(())
    }

    fn coefficients(
        &self,
        _memory: &mut (),
        _state: &AgentState,
        _destination: Vec2,
        neighbors: &[AgentState],
    ) -> Result<StepCoefficients> {
        Ok(StepCoefficients {
            goal: self.goal,
            collision: vec![self.collision; neighbors.len()],
        })
    }

    fn environment(&self) -> Coefficient {
        self.environment
    }

    fn residual(&self, _history: &[Vec2], _predicted_next: Vec2, rng: &mut dyn rand::RngCore) -> Result<Vec2> {
        if self.residual_std == 0.0 {
            return Ok(Vec2::zeros());
        }
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        Ok(Vec2::new(x, y) * self.residual_std)
    }
}

/// One agent's situation at one step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub state: &'a AgentState,
    pub destination: Vec2,
    pub steps_remaining: usize,
    /// Already filtered by radius and view.
    pub neighbors: &'a [AgentState],
    /// Already filtered by radius.
    pub obstacles: &'a [Vec2],
    /// Positions so far, newest last, including the current one.
    pub history: &'a [Vec2],
}

/// Goal, then one distribution per neighbor, then one per obstacle.
/// Disabled factors are absent.
pub fn assemble_forces<M: ForceModel, R: Rng + ?Sized>(
    model: &M,
    memory: &mut M::Memory,
    ctx: &StepContext,
    rng: &mut R,
) -> Result<Vec<ForceDistribution>> {
    let cfg = model.dynamics();
    let coefs = model.coefficients(memory, ctx.state, ctx.destination, ctx.neighbors)?;
    let mut out = Vec::with_capacity(1 + ctx.neighbors.len() + ctx.obstacles.len());
    let p = ctx.state.position;
    if cfg.factors.goal {
        out.push(ForceDistribution {
            kind: FactorKind::Goal,
            base: goal_force_base(p, ctx.state.velocity, ctx.destination, ctx.steps_remaining, cfg.dt)?,
            coefficient: coefs.goal,
        });
    }
    if cfg.factors.collision {
        for (n, c) in ctx.neighbors.iter().zip(&coefs.collision) {
            let (base, clamped) = collision_force_base(p - n.position, cfg.collision_range, rng);
            if clamped {
                log::debug!("collision distance clamped at {MIN_DISTANCE}");
            }
            out.push(ForceDistribution {
                kind: FactorKind::Collision,
                base,
                coefficient: *c,
            });
        }
    }
    if cfg.factors.environment {
        let env = model.environment();
        for o in ctx.obstacles {
            let (base, clamped) = env_force_base(p, *o, rng);
            if clamped {
                log::debug!("obstacle distance clamped at {MIN_DISTANCE}");
            }
            out.push(ForceDistribution {
                kind: FactorKind::Environment,
                base,
                coefficient: env,
            });
        }
    }
    for d in &out {
        if !d.coefficient.is_finite() || !(d.base.x.is_finite() && d.base.y.is_finite()) {
            return Err(Error::numeric(format!("non-finite {} force", d.kind.name())));
        }
    }
    Ok(out)
}

/// Draws one coefficient per distribution (in order) and sums the forces.
pub fn sample_forces<R: Rng + ?Sized>(dists: &[ForceDistribution], mode: SamplingMode, rng: &mut R) -> (Vec2, Vec<f64>) {
    let mut total = Vec2::zeros();
    let mut ks = Vec::with_capacity(dists.len());
    for d in dists {
        let k = match mode {
            SamplingMode::Mean => d.coefficient.mean,
            SamplingMode::Stochastic => {
                let xi: f64 = rng.sample(StandardNormal);
                d.coefficient.mean + d.coefficient.std() * xi
            }
        };
        total += d.base * k;
        ks.push(k);
    }
    (total, ks)
}

/// Samples forces, integrates, and adds the epistemic residual when enabled.
pub fn step_from_forces<M: ForceModel, R: Rng>(
    model: &M,
    dists: &[ForceDistribution],
    ctx: &StepContext,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<StepOutput> {
    let cfg = model.dynamics();
    let (force, coefficients) = sample_forces(dists, cfg.effective_mode(mode), rng);
    let (drift_state, drift) = sde_step(ctx.state, force, Vec2::zeros(), cfg.dt)?;
    let residual = if cfg.factors.epistemic {
        model.residual(ctx.history, drift, rng)?
    } else {
        Vec2::zeros()
    };
    let state = AgentState::new(drift_state.position + residual, drift_state.velocity);
    if !state.is_finite() {
        return Err(Error::numeric("state became non-finite"));
    }
    Ok(StepOutput {
        state,
        force,
        coefficients,
        residual,
    })
}

/// [`assemble_forces`] followed by [`step_from_forces`].
pub fn advance<M: ForceModel, R: Rng>(
    model: &M,
    memory: &mut M::Memory,
    ctx: &StepContext,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<(StepOutput, Vec<ForceDistribution>)> {
    let dists = assemble_forces(model, memory, ctx, rng)?;
    let out = step_from_forces(model, &dists, ctx, mode, rng)?;
    Ok((out, dists))
}
