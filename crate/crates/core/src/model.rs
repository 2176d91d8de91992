//! The learned force model: networks plus dynamics settings.

use crate::data::AgentState;
use crate::dynamics::{DynamicsConfig, ForceModel, StepCoefficients};
use crate::error::Result;
use crate::networks::{Architecture, Coefficient, Networks};
use crate::nn::lstm::LstmState;
use crate::Vec2;

/// Recurrent state input: position relative to the destination and
/// velocity, scaled.
pub fn state_features(state: &AgentState, destination: Vec2, scale: f64) -> [f64; 4] {
    let rel = (state.position - destination) * scale;
    let v = state.velocity * scale;
    [rel.x, rel.y, v.x, v.y]
}

/// Destination relative to the newest observed position, scaled.
pub fn goal_features(destination: Vec2, anchor: Vec2, scale: f64) -> [f64; 2] {
    let d = (destination - anchor) * scale;
    [d.x, d.y]
}

/// Neighbor position and velocity relative to the subject, scaled.
pub fn neighbor_features(subject: &AgentState, other: &AgentState, scale: f64) -> [f64; 4] {
    let dp = (other.position - subject.position) * scale;
    let dv = (other.velocity - subject.velocity) * scale;
    [dp.x, dp.y, dv.x, dv.y]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub networks: Networks,
    pub dynamics: DynamicsConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMemory {
    goal: LstmState,
    goal_context: Vec<f64>,
    collision: LstmState,
}

impl Model {
    pub fn new(arch: &Architecture, dynamics: DynamicsConfig, seed: u64) -> Result<Self> {
        dynamics.validate()?;
        Ok(Model {
            networks: Networks::new(arch, seed)?,
            dynamics,
        })
    }

    pub fn with_dynamics(&self, dynamics: DynamicsConfig) -> Self {
        Model {
            networks: self.networks.clone(),
            dynamics,
        }
    }
}

impl ForceModel for Model {
    type Memory = ModelMemory;

    fn dynamics(&self) -> &DynamicsConfig {
        &self.dynamics
    }

    fn begin(&self, observed: &[AgentState], destination: Vec2) -> Result<ModelMemory> {
        let s = self.dynamics.input_scale;
        let nets = &self.networks;
        let anchor = observed.last().map(|o| o.position).unwrap_or(destination);
        let mut goal = nets.goal.initial_state();
        let mut collision = nets.collision.initial_state();
        let mut goal_context = Vec::new();
        let warmup = &observed[..observed.len().saturating_sub(1)];
        if self.dynamics.factors.goal {
            goal_context = nets.goal.encode(&goal_features(destination, anchor, s))?.0;
            for o in warmup {
                goal = nets.goal.step(&state_features(o, destination, s), &goal)?.0;
            }
        }
        if self.dynamics.factors.collision {
            for o in warmup {
                collision = nets.collision.step(&state_features(o, destination, s), &collision)?.0;
            }
        }
        Ok(ModelMemory {
            goal,
            goal_context,
            collision,
        })
    }

    fn coefficients(
        &self,
        memory: &mut ModelMemory,
        state: &AgentState,
        destination: Vec2,
        neighbors: &[AgentState],
    ) -> Result<StepCoefficients> {
        let s = self.dynamics.input_scale;
        let nets = &self.networks;
        let input = state_features(state, destination, s);
        let goal = if self.dynamics.factors.goal {
            let (next, feat, _) = nets.goal.step(&input, &memory.goal)?;
            memory.goal = next;
            nets.goal.head(&feat, &memory.goal_context)?.0
        } else {
            Coefficient::fixed(0.0)
        };
        let mut collision = Vec::with_capacity(neighbors.len());
        if self.dynamics.factors.collision {
            let (next, feat, _) = nets.collision.step(&input, &memory.collision)?;
            memory.collision = next;
            for n in neighbors {
                let (ctx, _) = nets.collision.encode(&neighbor_features(state, n, s))?;
                collision.push(nets.collision.head(&feat, &ctx)?.0);
            }
        }
        Ok(StepCoefficients { goal, collision })
    }

    fn environment(&self) -> Coefficient {
        self.networks.env.coefficient()
    }

    fn residual(&self, history: &[Vec2], predicted_next: Vec2, rng: &mut dyn rand::RngCore) -> Result<Vec2> {
        let cvae = &self.networks.cvae;
        let condition = cvae.condition(history, predicted_next, self.dynamics.input_scale)?;
        cvae.sample(&condition, rng)
    }
}
