//! Synthetic scenes driven by known force coefficients, for training and
//! recovery tests.
//!
//! Each group (a lone walker or a crossing pair) is simulated for one window
//! length in its own block of frames, so groups never interact. Windows keep
//! the generating target as their destination.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AgentState, Bounds, Homography, Neighbor, Record, Scene, Window, OBS_LEN, WINDOW_LEN};
use crate::dynamics::{advance, DynamicsConfig, FixedCoefficients, ForceModel, SamplingMode, StepContext};
use crate::error::{Error, Result};
use crate::networks::Coefficient;
use crate::rng;
use crate::Vec2;

const GROUP_TAG: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Single,
    Crossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Ground-truth coefficients, factor flags and step length.
    pub goal: Coefficient,
    pub collision: Coefficient,
    pub environment: Coefficient,
    /// Isotropic per-step position noise.
    pub residual_std: f64,
    pub dynamics: DynamicsConfig,
    /// Region holding start positions and crossing centers.
    pub bounds: Bounds,
    /// Initial speed range, pixels per second.
    pub speed: [f64; 2],
    /// Largest angle between the initial heading and the target direction.
    pub max_turn: f64,
    pub group: GroupKind,
    /// Fraction of groups that are crossing pairs when `group` is `Crossing`;
    /// the rest are lone walkers.
    pub crossing_fraction: f64,
    pub obstacles: Vec<Vec2>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let mut dynamics = DynamicsConfig::default();
        dynamics.factors.collision = false;
        dynamics.factors.environment = false;
        dynamics.factors.aleatoric = false;
        dynamics.factors.epistemic = false;
        SyntheticSpec {
            goal: Coefficient::fixed(1.0),
            collision: Coefficient::fixed(0.0),
            environment: Coefficient::fixed(0.0),
            residual_std: 0.0,
            dynamics,
            bounds: Bounds {
                min: [0.0, 0.0],
                max: [400.0, 400.0],
            },
            speed: [20.0, 40.0],
            max_turn: 0.8,
            group: GroupKind::Single,
            crossing_fraction: 1.0,
            obstacles: Vec::new(),
        }
    }
}

impl SyntheticSpec {
    pub fn model(&self) -> FixedCoefficients {
        let mut m = FixedCoefficients::new(self.goal, self.collision, self.environment, self.dynamics);
        m.residual_std = self.residual_std;
        m
    }

    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        for c in [self.goal, self.collision, self.environment] {
            if !c.is_finite() {
                return Err(Error::Validation("synthetic coefficients must be finite".into()));
            }
        }
        if !(self.residual_std >= 0.0 && self.speed[0] >= 0.0 && self.speed[1] >= self.speed[0]) {
            return Err(Error::Validation("invalid synthetic noise or speed range".into()));
        }
        if !(0.0..=1.0).contains(&self.crossing_fraction) {
            return Err(Error::Validation("crossing_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// One window per agent; `id` equals the agent id and the window index.
    pub windows: Vec<Window>,
    pub scene: Scene,
    /// Generating target per window id.
    pub targets: BTreeMap<usize, Vec2>,
}

struct Walker {
    start: AgentState,
    target: Vec2,
}

fn heading(angle: f64) -> Vec2 {
    Vec2::new(angle.cos(), angle.sin())
}

fn uniform_in<R: Rng>(b: &Bounds, margin: f64, r: &mut R) -> Vec2 {
    let lo = |k: usize| b.min[k] + margin.min(0.5 * (b.max[k] - b.min[k]));
    let hi = |k: usize| b.max[k] - margin.min(0.5 * (b.max[k] - b.min[k]));
    Vec2::new(lo(0) + r.random::<f64>() * (hi(0) - lo(0)), lo(1) + r.random::<f64>() * (hi(1) - lo(1)))
}

fn lone_walker<R: Rng>(spec: &SyntheticSpec, span: f64, r: &mut R) -> Walker {
    let speed = spec.speed[0] + r.random::<f64>() * (spec.speed[1] - spec.speed[0]);
    let start = uniform_in(&spec.bounds, 0.0, r);
    let theta = r.random::<f64>() * 2.0 * PI;
    let turn = (2.0 * r.random::<f64>() - 1.0) * spec.max_turn;
    Walker {
        start: AgentState::new(start, heading(theta + turn) * speed),
        target: start + heading(theta) * (speed * span),
    }
}

fn crossing_pair<R: Rng>(spec: &SyntheticSpec, span: f64, r: &mut R) -> [Walker; 2] {
    let center = uniform_in(&spec.bounds, 0.25 * spec.bounds.width().min(spec.bounds.height()), r);
    let theta = r.random::<f64>() * 2.0 * PI;
    let phi = theta + PI * (0.5 + 0.5 * r.random::<f64>());
    let mut make = |angle: f64| {
        let speed = spec.speed[0] + r.random::<f64>() * (spec.speed[1] - spec.speed[0]);
        let d = heading(angle);
        let half = 0.5 * speed * span;
        let turn = (2.0 * r.random::<f64>() - 1.0) * spec.max_turn;
        let offset = Vec2::new(-d.y, d.x) * ((2.0 * r.random::<f64>() - 1.0) * 5.0);
        Walker {
            start: AgentState::new(center - d * half + offset, heading(angle + turn) * speed),
            target: center + d * half + offset,
        }
    };
    [make(theta), make(phi)]
}

/// Simulates walkers jointly for one window; returns states per frame.
fn run_group(spec: &SyntheticSpec, model: &FixedCoefficients, walkers: &[Walker], seed: u64) -> Result<Vec<Vec<AgentState>>> {
    let cfg = model.dynamics();
    let n = walkers.len();
    let mut states: Vec<Vec<AgentState>> = vec![walkers.iter().map(|w| w.start).collect()];
    let mut histories: Vec<Vec<Vec2>> = walkers.iter().map(|w| vec![w.start.position]).collect();
    for t in 0..WINDOW_LEN - 1 {
        let now = &states[t];
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let others: Vec<AgentState> = (0..n).filter(|j| *j != i).map(|j| now[j]).collect();
            let neighbors = cfg.select_neighbors(&now[i], &others);
            let obstacles = cfg.select_obstacles(now[i].position, spec.obstacles.iter());
            let ctx = StepContext {
                state: &now[i],
                destination: walkers[i].target,
                steps_remaining: WINDOW_LEN - 1 - t,
                neighbors: &neighbors,
                obstacles: &obstacles,
                history: &histories[i],
            };
            let mut r = rng::keyed(seed, (i * WINDOW_LEN + t) as u64);
            let (out, _) = advance(model, &mut (), &ctx, SamplingMode::Stochastic, &mut r)?;
            next.push(out.state);
        }
        for (h, s) in histories.iter_mut().zip(&next) {
            h.push(s.position);
        }
        states.push(next);
    }
    Ok(states)
}

/// Generates about `n_agents` walkers (crossing pairs count as two).
pub fn generate_synthetic(spec: &SyntheticSpec, n_agents: usize, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let model = spec.model();
    let dt = spec.dynamics.dt;
    let span = (WINDOW_LEN - 1) as f64 * dt;
    let mut windows = Vec::with_capacity(n_agents);
    let mut records = Vec::with_capacity(n_agents * WINDOW_LEN);
    let mut targets = BTreeMap::new();
    let mut group = 0u64;
    while windows.len() < n_agents {
        let mut r = rng::aux_stream(seed, (group << 8) | GROUP_TAG);
        let pair = spec.group == GroupKind::Crossing
            && n_agents - windows.len() >= 2
            && r.random::<f64>() < spec.crossing_fraction;
        let walkers: Vec<Walker> = if pair {
            crossing_pair(spec, span, &mut r).into()
        } else {
            vec![lone_walker(spec, span, &mut r)]
        };
        let states = run_group(spec, &model, &walkers, rng::derive_seed(seed, group, GROUP_TAG))?;
        let frame0 = group as i64 * WINDOW_LEN as i64;
        let first_id = windows.len();
        for (i, w) in walkers.iter().enumerate() {
            let id = first_id + i;
            let track: Vec<AgentState> = states.iter().map(|s| s[i]).collect();
            let neighbors: Vec<Vec<Neighbor>> = states
                .iter()
                .map(|s| {
                    (0..walkers.len())
                        .filter(|j| *j != i)
                        .map(|j| Neighbor {
                            agent_id: (first_id + j) as i64,
                            state: s[j],
                        })
                        .collect()
                })
                .collect();
            for (t, s) in track.iter().enumerate() {
                records.push(Record {
                    frame: frame0 + t as i64,
                    agent: id as i64,
                    position: s.position,
                });
            }
            windows.push(Window {
                id,
                agent_id: id as i64,
                start_frame: frame0,
                observed: track[..OBS_LEN].to_vec(),
                future: track[OBS_LEN..].iter().map(|s| s.position).collect(),
                destination: w.target,
                neighbors,
                dynamic_obstacles: vec![Vec::new(); WINDOW_LEN],
                obstacles: spec.obstacles.clone(),
            });
            targets.insert(id, w.target);
        }
        group += 1;
    }
    records.sort_by_key(|r| (r.frame, r.agent));
    let scene = Scene::from_records(&records, Homography::identity(), dt, WINDOW_LEN)?.with_obstacles(spec.obstacles.clone());
    Ok(SyntheticData {
        windows,
        scene,
        targets,
    })
}

/// Smallest distance between the two members of each crossing pair.
pub fn pair_min_distances(data: &SyntheticData) -> Vec<f64> {
    data.windows
        .iter()
        .filter_map(|w| {
            let other = w.neighbors.first()?.first()?.agent_id;
            if other < w.agent_id {
                return None;
            }
            let theirs = &data.windows[other as usize];
            let mine = w.positions();
            let min = mine
                .iter()
                .zip(theirs.positions())
                .map(|(a, b)| (a - b).norm())
                .fold(f64::INFINITY, f64::min);
            Some(min)
        })
        .collect()
}
