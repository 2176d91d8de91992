//! Window rollouts: a stepping cursor for inference and a recorded,
//! differentiable rollout for the variational loss.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{AgentState, Window};
use crate::dynamics::{
    assemble_forces, collision_force_base, env_force_base, goal_force_base, step_from_forces, DynamicsConfig,
    ForceDistribution, ForceModel, SamplingMode, StepContext, StepOutput,
};
use crate::error::{Error, Result};
use crate::losses::{gaussian_log_density, log_likelihood, LossBreakdown, PriorSpec, Priors};
use crate::model::{goal_features, neighbor_features, state_features};
use crate::networks::{Coefficient, EnvGaussian, ForceNet, ForceStepCache, Networks};
use crate::nn::dense::MlpCache;
use crate::Vec2;

/// Index of the window frame at rollout step `step`.
pub fn frame_index(window: &Window, step: usize) -> usize {
    window.observed.len() - 1 + step
}

/// Neighbor candidates at a window frame.
pub fn frame_candidates(window: &Window, frame: usize) -> Vec<AgentState> {
    window.neighbors.get(frame).map(|v| v.iter().map(|n| n.state).collect()).unwrap_or_default()
}

/// Static obstacles followed by the frame's dynamic obstacles.
pub fn frame_obstacles(window: &Window, frame: usize) -> impl Iterator<Item = &Vec2> {
    window
        .obstacles
        .iter()
        .chain(window.dynamic_obstacles.get(frame).into_iter().flatten())
}

/// Step-by-step rollout of one window under a [`ForceModel`].
pub struct WindowRollout<'a, M: ForceModel> {
    model: &'a M,
    window: &'a Window,
    destination: Vec2,
    memory: M::Memory,
    pub state: AgentState,
    /// Observed positions followed by committed predictions.
    pub history: Vec<Vec2>,
    pub step: usize,
    horizon: usize,
}

impl<'a, M: ForceModel> WindowRollout<'a, M> {
    pub fn new(model: &'a M, window: &'a Window, destination: Vec2) -> Result<Self> {
        if window.observed.is_empty() {
            return Err(Error::Contract("window has no observed frames".into()));
        }
        Ok(WindowRollout {
            model,
            window,
            destination,
            memory: model.begin(&window.observed, destination)?,
            state: *window.last_observed(),
            history: window.observed.iter().map(|s| s.position).collect(),
            step: 0,
            horizon: window.future.len(),
        })
    }

    pub fn done(&self) -> bool {
        self.step >= self.horizon
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Current neighbors and obstacles after radius/view filtering.
    pub fn surroundings(&self) -> (Vec<AgentState>, Vec<Vec2>) {
        let cfg = self.model.dynamics();
        let f = frame_index(self.window, self.step);
        let neighbors = cfg.select_neighbors(&self.state, &frame_candidates(self.window, f));
        let obstacles = cfg.select_obstacles(self.state.position, frame_obstacles(self.window, f));
        (neighbors, obstacles)
    }

    /// Force distributions for the current step; advances the model memory.
    pub fn forces<R: Rng>(&mut self, rng: &mut R) -> Result<Vec<ForceDistribution>> {
        if self.done() {
            return Err(Error::Contract("rollout already finished".into()));
        }
        let (neighbors, obstacles) = self.surroundings();
        let ctx = StepContext {
            state: &self.state,
            destination: self.destination,
            steps_remaining: self.horizon - self.step,
            neighbors: &neighbors,
            obstacles: &obstacles,
            history: &self.history,
        };
        assemble_forces(self.model, &mut self.memory, &ctx, rng)
    }

    /// One candidate next state from the given distributions.
    pub fn sample<R: Rng>(&self, dists: &[ForceDistribution], mode: SamplingMode, rng: &mut R) -> Result<StepOutput> {
        let ctx = StepContext {
            state: &self.state,
            destination: self.destination,
            steps_remaining: self.horizon - self.step,
            neighbors: &[],
            obstacles: &[],
            history: &self.history,
        };
        step_from_forces(self.model, dists, &ctx, mode, rng)
    }

    pub fn commit(&mut self, state: AgentState) {
        self.state = state;
        self.history.push(state.position);
        self.step += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Predicted positions, one per future frame.
    pub positions: Vec<Vec2>,
    /// Force distributions at each step.
    pub forces: Vec<Vec<ForceDistribution>>,
}

pub fn rollout_window<M: ForceModel, R: Rng>(
    model: &M,
    window: &Window,
    destination: Vec2,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<Rollout> {
    let mut cursor = WindowRollout::new(model, window, destination)?;
    let mut positions = Vec::with_capacity(cursor.horizon());
    let mut forces = Vec::with_capacity(cursor.horizon());
    while !cursor.done() {
        let dists = cursor.forces(rng)?;
        let out = cursor.sample(&dists, mode, rng)?;
        positions.push(out.state.position);
        forces.push(dists);
        cursor.commit(out.state);
    }
    Ok(Rollout { positions, forces })
}

// ---------------------------------------------------------------------------
// Differentiable rollout

/// Gradient sinks; `None` groups are treated as frozen.
#[derive(Default)]
pub struct BayesGrads<'a> {
    pub goal: Option<&'a mut ForceNet>,
    pub collision: Option<&'a mut ForceNet>,
    pub env: Option<&'a mut EnvGaussian>,
}

impl BayesGrads<'_> {
    fn any(&self) -> bool {
        self.goal.is_some() || self.collision.is_some() || self.env.is_some()
    }
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    coef: Coefficient,
    xi: f64,
    k: f64,
    base: Vec2,
}

struct GoalTape {
    step: ForceStepCache,
    head: MlpCache,
    draw: Draw,
    steps_remaining: usize,
}

struct NeighborTape {
    encode: MlpCache,
    head: MlpCache,
    draw: Draw,
    offset: Vec2,
    clamped: bool,
}

struct ObstacleTape {
    draw: Draw,
    offset: Vec2,
    clamped: bool,
}

struct StepTape {
    goal: Option<GoalTape>,
    collision_step: Option<ForceStepCache>,
    neighbors: Vec<NeighborTape>,
    obstacles: Vec<ObstacleTape>,
}

/// Whether any rollout frame of the window carries a neighbor candidate.
pub fn window_has_candidates(window: &Window) -> bool {
    (0..window.future.len()).any(|s| {
        window
            .neighbors
            .get(frame_index(window, s))
            .is_some_and(|v| !v.is_empty())
    })
}

fn draw_coefficient<R: Rng>(coef: Coefficient, mode: SamplingMode, rng: &mut R) -> (f64, f64) {
    match mode {
        SamplingMode::Mean => (0.0, coef.mean),
        SamplingMode::Stochastic => {
            let xi: f64 = rng.sample(StandardNormal);
            (xi, coef.mean + coef.std() * xi)
        }
    }
}

fn coefficient_grads(kbar: f64, d: &Draw, prior: &PriorSpec, mode: SamplingMode, weight: f64) -> (f64, f64) {
    let total = kbar + weight * prior.neg_log_density_grad(d.k);
    match mode {
        SamplingMode::Mean => (total, 0.0),
        SamplingMode::Stochastic => {
            let ls = if d.coef.log_std_clamped() {
                0.0
            } else {
                total * d.coef.std() * d.xi - weight
            };
            (total, ls)
        }
    }
}

fn collision_jacobian_apply(r: Vec2, range: f64, v: Vec2) -> Vec2 {
    let d = r.norm();
    let e = (-d / range).exp();
    let rv = r.dot(&v);
    e * (v / d - r * (rv / (d * d * d)) - r * (rv / (range * d * d)))
}

fn env_jacobian_apply(r: Vec2, v: Vec2) -> Vec2 {
    let d2 = r.norm_squared();
    v / d2 - r * (2.0 * r.dot(&v) / (d2 * d2))
}

fn add_state_grad(pbar: &mut Vec2, vbar: &mut Vec2, g: &[f64], scale: f64) {
    *pbar += Vec2::new(g[0], g[1]) * scale;
    *vbar += Vec2::new(g[2], g[3]) * scale;
}

/// Single-sample estimate of `log q − log p(P | η) − log p(η)` for one
/// window, driven by the window's ground-truth destination, without
/// epistemic residuals. In mean mode the `log q` term is absent and `k = μ`.
/// When `grads` is given, gradients of `weight × total` are accumulated.
#[allow(clippy::too_many_arguments)]
pub fn bayes_rollout<R: Rng>(
    nets: &Networks,
    cfg: &DynamicsConfig,
    priors: &Priors,
    window: &Window,
    mode: SamplingMode,
    rng: &mut R,
    weight: f64,
    grads: Option<BayesGrads>,
) -> Result<(LossBreakdown, Vec<Vec2>)> {
    if window.observed.is_empty() || window.future.is_empty() {
        return Err(Error::Contract("window needs observed and future frames".into()));
    }
    let mode = cfg.effective_mode(mode);
    let scale = cfg.input_scale;
    let dt = cfg.dt;
    let dest = window.destination;
    let horizon = window.future.len();
    let f = &cfg.factors;
    let collision_active = f.collision && window_has_candidates(window);
    let warmup = &window.observed[..window.observed.len() - 1];

    // Encoders and warm-up.
    let mut goal_enc = None;
    let mut goal_state = nets.goal.initial_state();
    let mut goal_warm = Vec::new();
    if f.goal {
        let anchor = window.last_observed().position;
        goal_enc = Some(nets.goal.encode(&goal_features(dest, anchor, scale))?);
        for o in warmup {
            let (next, _, cache) = nets.goal.step(&state_features(o, dest, scale), &goal_state)?;
            goal_state = next;
            goal_warm.push(cache);
        }
    }
    let mut col_state = nets.collision.initial_state();
    let mut col_warm = Vec::new();
    if collision_active {
        for o in warmup {
            let (next, _, cache) = nets.collision.step(&state_features(o, dest, scale), &col_state)?;
            col_state = next;
            col_warm.push(cache);
        }
    }

    let env_coef = nets.env.coefficient();
    let mut state = *window.last_observed();
    let mut tape = Vec::with_capacity(horizon);
    let mut positions = Vec::with_capacity(horizon);
    let mut log_q = 0.0;
    let mut log_p = 0.0;
    for s in 0..horizon {
        let frame = frame_index(window, s);
        let input = state_features(&state, dest, scale);
        let p = state.position;

        let mut goal = None;
        if let Some((enc, _)) = &goal_enc {
            let (next, feat, step) = nets.goal.step(&input, &goal_state)?;
            goal_state = next;
            let (coef, head) = nets.goal.head(&feat, enc)?;
            let n = horizon - s;
            let base = goal_force_base(p, state.velocity, dest, n, dt)?;
            goal = Some((step, head, coef, base, n));
        }

        let mut collision_step = None;
        let mut neighbor_parts = Vec::new();
        if collision_active {
            let (next, feat, step) = nets.collision.step(&input, &col_state)?;
            col_state = next;
            collision_step = Some(step);
            for nb in cfg.select_neighbors(&state, &frame_candidates(window, frame)) {
                let (ctx, encode) = nets.collision.encode(&neighbor_features(&state, &nb, scale))?;
                let (coef, head) = nets.collision.head(&feat, &ctx)?;
                let offset = p - nb.position;
                let (base, clamped) = collision_force_base(offset, cfg.collision_range, rng);
                neighbor_parts.push((encode, head, coef, base, offset, clamped));
            }
        }

        let mut obstacle_parts = Vec::new();
        for o in cfg.select_obstacles(p, frame_obstacles(window, frame)) {
            let offset = p - o;
            let (base, clamped) = env_force_base(p, o, rng);
            obstacle_parts.push((base, offset, clamped));
        }

        // Coefficient draws in the same order as inference.
        let mut force = Vec2::zeros();
        let mut record = |coef: Coefficient, base: Vec2, prior: &PriorSpec, rng: &mut R| -> Draw {
            let (xi, k) = draw_coefficient(coef, mode, rng);
            force += base * k;
            if mode == SamplingMode::Stochastic {
                log_q += gaussian_log_density(k, coef.mean, coef.std());
            }
            log_p += prior.log_density(k);
            Draw { coef, xi, k, base }
        };
        let goal = goal.map(|(step, head, coef, base, n)| GoalTape {
            draw: record(coef, base, &priors.goal, rng),
            step,
            head,
            steps_remaining: n,
        });
        let neighbors: Vec<NeighborTape> = neighbor_parts
            .into_iter()
            .map(|(encode, head, coef, base, offset, clamped)| NeighborTape {
                draw: record(coef, base, &priors.collision, rng),
                encode,
                head,
                offset,
                clamped,
            })
            .collect();
        let obstacles: Vec<ObstacleTape> = obstacle_parts
            .into_iter()
            .map(|(base, offset, clamped)| ObstacleTape {
                draw: record(env_coef, base, &priors.environment, rng),
                offset,
                clamped,
            })
            .collect();

        let velocity = state.velocity + force * dt;
        let position = p + velocity * dt;
        state = AgentState::new(position, velocity);
        if !state.is_finite() {
            return Err(Error::numeric(format!("rollout diverged at step {s} of window {}", window.id)));
        }
        positions.push(position);
        tape.push(StepTape {
            goal,
            collision_step,
            neighbors,
            obstacles,
        });
    }

    let log_lik = log_likelihood(&positions, &window.future)?;
    let loss = LossBreakdown::new(log_q, log_p, log_lik);
    if !loss.total.is_finite() {
        return Err(Error::numeric(format!("non-finite loss on window {}", window.id)));
    }

    let Some(mut grads) = grads else {
        return Ok((loss, positions));
    };
    if !grads.any() {
        return Ok((loss, positions));
    }

    let hg = nets.goal.lstm.hidden_size;
    let hc = nets.collision.lstm.hidden_size;
    let (mut dh_g, mut dc_g) = (vec![0.0; hg], vec![0.0; hg]);
    let (mut dh_c, mut dc_c) = (vec![0.0; hc], vec![0.0; hc]);
    let mut d_goal_ctx = vec![0.0; goal_enc.as_ref().map_or(0, |(e, _)| e.len())];
    let mut a = Vec2::zeros();
    let mut b = Vec2::zeros();
    for s in (0..horizon).rev() {
        let t = &tape[s];
        a += (positions[s] - window.future[s]) * weight;
        let vtotal = b + a * dt;
        let fbar = vtotal * dt;
        let mut pbar = a;
        let mut vbar = vtotal;

        if let Some(g) = &t.goal {
            let basebar = fbar * g.draw.k;
            let kbar = fbar.dot(&g.draw.base);
            pbar -= basebar / (g.steps_remaining as f64 * dt);
            vbar -= basebar;
            let (mb, lb) = coefficient_grads(kbar, &g.draw, &priors.goal, mode, weight);
            let (dfeat, dctx) = nets.goal.head_backward(&g.head, mb, lb, grads.goal.as_deref_mut())?;
            for (x, y) in d_goal_ctx.iter_mut().zip(&dctx) {
                *x += y;
            }
            let sg = nets.goal.step_backward(&g.step, &dfeat, &dh_g, &dc_g, grads.goal.as_deref_mut())?;
            dh_g = sg.hidden_prev;
            dc_g = sg.cell_prev;
            add_state_grad(&mut pbar, &mut vbar, &sg.state_input, scale);
        }

        if let Some(step) = &t.collision_step {
            let mut dfeat = vec![0.0; nets.collision.post.outputs];
            for nb in &t.neighbors {
                let basebar = fbar * nb.draw.k;
                let kbar = fbar.dot(&nb.draw.base);
                if !nb.clamped {
                    pbar += collision_jacobian_apply(nb.offset, cfg.collision_range, basebar);
                }
                let (mb, lb) = coefficient_grads(kbar, &nb.draw, &priors.collision, mode, weight);
                let (df, dctx) = nets.collision.head_backward(&nb.head, mb, lb, grads.collision.as_deref_mut())?;
                for (x, y) in dfeat.iter_mut().zip(&df) {
                    *x += y;
                }
                let din = nets
                    .collision
                    .encode_backward(&nb.encode, &dctx, grads.collision.as_deref_mut())?;
                // features are (other − self)
                add_state_grad(&mut pbar, &mut vbar, &din.iter().map(|v| -v).collect::<Vec<_>>(), scale);
            }
            let sg = nets
                .collision
                .step_backward(step, &dfeat, &dh_c, &dc_c, grads.collision.as_deref_mut())?;
            dh_c = sg.hidden_prev;
            dc_c = sg.cell_prev;
            add_state_grad(&mut pbar, &mut vbar, &sg.state_input, scale);
        }

        for ob in &t.obstacles {
            let basebar = fbar * ob.draw.k;
            let kbar = fbar.dot(&ob.draw.base);
            if !ob.clamped {
                pbar += env_jacobian_apply(ob.offset, basebar);
            }
            let (mb, lb) = coefficient_grads(kbar, &ob.draw, &priors.environment, mode, weight);
            if let Some(e) = grads.env.as_deref_mut() {
                e.mean += mb;
                e.log_std += lb;
            }
        }

        a = pbar;
        b = vbar;
    }

    if let Some(g) = grads.goal.as_deref_mut() {
        let zero = vec![0.0; nets.goal.post.outputs];
        for cache in goal_warm.iter().rev() {
            let sg = nets.goal.step_backward(cache, &zero, &dh_g, &dc_g, Some(&mut *g))?;
            dh_g = sg.hidden_prev;
            dc_g = sg.cell_prev;
        }
        if let Some((_, enc_cache)) = &goal_enc {
            nets.goal.encode_backward(enc_cache, &d_goal_ctx, Some(g))?;
        }
    }
    if let Some(g) = grads.collision.as_deref_mut() {
        let zero = vec![0.0; nets.collision.post.outputs];
        for cache in col_warm.iter().rev() {
            let sg = nets.collision.step_backward(cache, &zero, &dh_c, &dc_c, Some(&mut *g))?;
            dh_c = sg.hidden_prev;
            dc_c = sg.cell_prev;
        }
    }
    Ok((loss, positions))
}
