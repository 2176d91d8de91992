//! Crowd simulation from the boundaries and collision statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AgentState, Bounds, Record, PRED_LEN};
use crate::dynamics::{advance, ForceModel, SamplingMode, StepContext};
use crate::error::{Error, Result};
use crate::rng;
use crate::Vec2;

pub const DEFAULT_RADIUS_PX: f64 = 7.5;
pub const DEFAULT_RADIUS_M: f64 = 0.2;
pub const DEFAULT_INTERVALS: [[f64; 2]; 3] = [[0.0, 8.0], [4.0, 12.0], [8.0, 16.0]];

const SPAWN_TAG: u64 = 1 << 36;
const STEP_TAG: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub bounds: Bounds,
    /// Highest number of people present at once.
    pub hnp: usize,
    /// Agents per spawn batch; `None` means `ceil(hnp / 10)`.
    pub batch_size: Option<usize>,
    /// Seconds between spawn batches.
    pub spawn_interval: f64,
    /// Seconds.
    pub duration: f64,
    /// Collision radius; agents also despawn within it of their goal.
    pub radius: f64,
    pub intervals: Vec<[f64; 2]>,
    /// Initial speed and the speed used to estimate remaining steps.
    pub preferred_speed: f64,
    pub spawn_attempts: usize,
    pub obstacles: Vec<Vec2>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            bounds: Bounds {
                min: [0.0, 0.0],
                max: [400.0, 400.0],
            },
            hnp: 10,
            batch_size: None,
            spawn_interval: 1.0,
            duration: 30.0,
            radius: DEFAULT_RADIUS_PX,
            intervals: DEFAULT_INTERVALS.to_vec(),
            preferred_speed: 30.0,
            spawn_attempts: 100,
            obstacles: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hnp == 0 {
            return Err(Error::Validation("hnp must be at least 1".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Validation("collision radius must be positive".into()));
        }
        if !(self.duration > 0.0 && self.spawn_interval > 0.0 && self.preferred_speed > 0.0) {
            return Err(Error::Validation("duration, spawn interval and speed must be positive".into()));
        }
        if !(self.bounds.width() > 0.0 && self.bounds.height() > 0.0) {
            return Err(Error::Validation("scene bounds must have positive area".into()));
        }
        validate_intervals(&self.intervals, Some(self.duration))
    }

    pub fn batch(&self) -> usize {
        self.batch_size.unwrap_or(self.hnp.div_ceil(10)).max(1)
    }
}

fn validate_intervals(intervals: &[[f64; 2]], duration: Option<f64>) -> Result<()> {
    for iv in intervals {
        let upper = duration.unwrap_or(f64::INFINITY);
        if !(iv[0] >= 0.0 && iv[1] >= iv[0] && iv[1] <= upper) {
            return Err(Error::Validation(format!(
                "interval [{}, {}] must lie within [0, {upper}]",
                iv[0], iv[1]
            )));
        }
    }
    Ok(())
}

/// Parses `0-8,4-12,8-16`.
pub fn parse_intervals(text: &str) -> Result<Vec<[f64; 2]>> {
    text.split(',')
        .map(|part| {
            let (a, b) = part
                .trim()
                .split_once('-')
                .ok_or_else(|| Error::Validation(format!("interval {part:?} is not start-end")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Validation(format!("bad interval bound {s:?}")))
            };
            Ok([parse(a)?, parse(b)?])
        })
        .collect()
}

/// Positions per agent per frame index; frame `f` is at time `f·dt`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectories {
    pub dt: f64,
    pub tracks: BTreeMap<i64, BTreeMap<i64, Vec2>>,
}

impl Trajectories {
    pub fn new(dt: f64) -> Self {
        Trajectories {
            dt,
            tracks: BTreeMap::new(),
        }
    }

    pub fn from_records(records: &[Record], dt: f64) -> Self {
        let mut t = Trajectories::new(dt);
        for r in records {
            t.push(r.agent, r.frame, r.position);
        }
        t
    }

    pub fn push(&mut self, agent: i64, frame: i64, position: Vec2) {
        self.tracks.entry(agent).or_default().insert(frame, position);
    }

    pub fn records(&self) -> Vec<Record> {
        let mut out: Vec<Record> = self
            .tracks
            .iter()
            .flat_map(|(a, t)| {
                t.iter().map(move |(f, p)| Record {
                    frame: *f,
                    agent: *a,
                    position: *p,
                })
            })
            .collect();
        out.sort_by_key(|r| (r.frame, r.agent));
        out
    }

    fn in_interval(&self, frame: i64, iv: [f64; 2]) -> bool {
        let t = frame as f64 * self.dt;
        t >= iv[0] - 1e-9 && t <= iv[1] + 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub start: f64,
    pub end: f64,
    /// Agents present in the interval.
    pub n: usize,
    /// Colliding pairs.
    pub m: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub radius: f64,
    pub intervals: Vec<IntervalReport>,
    pub mean_rate: f64,
    /// Colliding pairs over the whole recording.
    pub total_collisions: usize,
}

/// Pairs whose distance drops below `2r` at some frame in `frames`,
/// found with a uniform grid of cell size `2r`.
fn colliding_pairs(traj: &Trajectories, threshold: f64, keep: impl Fn(i64) -> bool) -> (BTreeSet<(i64, i64)>, usize) {
    let mut by_frame: BTreeMap<i64, Vec<(i64, Vec2)>> = BTreeMap::new();
    let mut present = BTreeSet::new();
    for (a, t) in &traj.tracks {
        for (f, p) in t {
            if keep(*f) {
                by_frame.entry(*f).or_default().push((*a, *p));
                present.insert(*a);
            }
        }
    }
    let mut pairs = BTreeSet::new();
    let t2 = threshold * threshold;
    for agents in by_frame.values() {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let cell = |p: Vec2| ((p.x / threshold).floor() as i64, (p.y / threshold).floor() as i64);
        for (i, (_, p)) in agents.iter().enumerate() {
            cells.entry(cell(*p)).or_default().push(i);
        }
        for (a, p) in agents.iter() {
            let (cx, cy) = cell(*p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for &j in cells.get(&(cx + dx, cy + dy)).into_iter().flatten() {
                        let (b, q) = agents[j];
                        if *a < b && (p - q).norm_squared() < t2 {
                            pairs.insert((*a, b));
                        }
                    }
                }
            }
        }
    }
    (pairs, present.len())
}

/// A pair collides in an interval when its minimum distance there is below
/// `2r`; `rate = M / (N(N−1)/2)`, 0 when fewer than two agents are present.
pub fn collision_stats(traj: &Trajectories, radius: f64, intervals: &[[f64; 2]]) -> Result<CollisionReport> {
    if !(radius > 0.0) {
        return Err(Error::Validation("collision radius must be positive".into()));
    }
    validate_intervals(intervals, None)?;
    let threshold = 2.0 * radius;
    let mut reports = Vec::with_capacity(intervals.len());
    for iv in intervals {
        let (pairs, n) = colliding_pairs(traj, threshold, |f| traj.in_interval(f, *iv));
        let possible = n * n.saturating_sub(1) / 2;
        let m = pairs.len();
        reports.push(IntervalReport {
            start: iv[0],
            end: iv[1],
            n,
            m,
            rate: if possible == 0 { 0.0 } else { m as f64 / possible as f64 },
        });
    }
    let mean_rate = if reports.is_empty() {
        0.0
    } else {
        reports.iter().map(|r| r.rate).sum::<f64>() / reports.len() as f64
    };
    let (all, _) = colliding_pairs(traj, threshold, |_| true);
    Ok(CollisionReport {
        radius,
        intervals: reports,
        mean_rate,
        total_collisions: all.len(),
    })
}

/// A simulated pedestrian.
#[derive(Debug, Clone)]
pub struct SimAgent<Mem> {
    pub id: i64,
    pub state: AgentState,
    pub goal: Vec2,
    pub history: Vec<Vec2>,
    memory: Mem,
}

impl<Mem> SimAgent<Mem> {
    pub fn arrived(&self, radius: f64) -> bool {
        (self.state.position - self.goal).norm() < radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub trajectories: Trajectories,
    pub goals: BTreeMap<i64, Vec2>,
    pub spawned: usize,
    pub skipped: usize,
}

/// Point on side `side` (0 bottom, 1 right, 2 top, 3 left) at fraction `u`.
fn boundary_point(b: &Bounds, side: usize, u: f64) -> Vec2 {
    let (x0, y0, x1, y1) = (b.min[0], b.min[1], b.max[0], b.max[1]);
    match side % 4 {
        0 => Vec2::new(x0 + u * (x1 - x0), y0),
        1 => Vec2::new(x1, y0 + u * (y1 - y0)),
        2 => Vec2::new(x0 + u * (x1 - x0), y1),
        _ => Vec2::new(x0, y0 + u * (y1 - y0)),
    }
}

/// Estimated steps to the goal at the preferred speed, capped at the
/// prediction horizon.
pub fn steps_to_goal(position: Vec2, goal: Vec2, speed: f64, dt: f64) -> usize {
    let n = ((goal - position).norm() / (speed * dt)).ceil();
    (n as usize).clamp(1, PRED_LEN)
}

pub struct Simulation<'a, M: ForceModel> {
    model: &'a M,
    config: &'a SimConfig,
    seed: u64,
    pub agents: Vec<SimAgent<M::Memory>>,
    pub output: SimOutput,
    next_id: i64,
}

impl<'a, M> Simulation<'a, M>
where
    M: ForceModel + Sync,
    M::Memory: Send,
{
    pub fn new(model: &'a M, config: &'a SimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Simulation {
            model,
            config,
            seed,
            agents: Vec::new(),
            output: SimOutput {
                trajectories: Trajectories::new(model.dynamics().dt),
                goals: BTreeMap::new(),
                spawned: 0,
                skipped: 0,
            },
            next_id: 0,
        })
    }

    fn dt(&self) -> f64 {
        self.model.dynamics().dt
    }

    /// Adds an agent at `frame`; it despawns at once if already at its goal.
    pub fn add_agent(&mut self, frame: i64, state: AgentState, goal: Vec2) -> Result<i64> {
        let id = self.next_id;
        self.next_id += 1;
        let memory = self.model.begin(std::slice::from_ref(&state), goal)?;
        let agent = SimAgent {
            id,
            state,
            goal,
            history: vec![state.position],
            memory,
        };
        self.output.trajectories.push(id, frame, state.position);
        self.output.goals.insert(id, goal);
        self.output.spawned += 1;
        if !agent.arrived(self.config.radius) {
            self.agents.push(agent);
        }
        Ok(id)
    }

    fn spawn_batch(&mut self, frame: i64) -> Result<()> {
        let cfg = self.config;
        let want = cfg.batch().min(cfg.hnp.saturating_sub(self.agents.len()));
        let mut r = rng::aux_stream(self.seed, SPAWN_TAG | frame as u64);
        let min_sep2 = (2.0 * cfg.radius).powi(2);
        for _ in 0..want {
            let mut placed = None;
            for _ in 0..cfg.spawn_attempts {
                let side = r.random_range(0..4usize);
                let p = boundary_point(&cfg.bounds, side, r.random::<f64>());
                let goal = boundary_point(&cfg.bounds, side + 2, r.random::<f64>());
                if self.agents.iter().all(|a| (a.state.position - p).norm_squared() >= min_sep2) {
                    placed = Some((p, goal));
                    break;
                }
            }
            match placed {
                Some((p, goal)) => {
                    let dir = (goal - p).try_normalize(1e-12).unwrap_or_else(Vec2::zeros);
                    self.add_agent(frame, AgentState::new(p, dir * cfg.preferred_speed), goal)?;
                }
                None => {
                    log::warn!("frame {frame}: no collision-free spawn point after {} attempts", cfg.spawn_attempts);
                    self.output.skipped += 1;
                }
            }
        }
        Ok(())
    }

    /// Advances every agent from frame `frame` to `frame + 1` using only
    /// frame-`frame` states, then records and despawns arrivals.
    pub fn step(&mut self, frame: i64) -> Result<()> {
        let model = self.model;
        let cfg = model.dynamics();
        let dt = self.dt();
        let speed = self.config.preferred_speed;
        let obstacles = &self.config.obstacles;
        let seed = rng::derive_seed(self.seed, frame as u64, STEP_TAG);
        let states: Vec<AgentState> = self.agents.iter().map(|a| a.state).collect();
        let next: Vec<Result<AgentState>> = self
            .agents
            .par_iter_mut()
            .enumerate()
            .map(|(i, a)| {
                let others: Vec<AgentState> = states
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, s)| *s)
                    .collect();
                let neighbors = cfg.select_neighbors(&a.state, &others);
                let near = cfg.select_obstacles(a.state.position, obstacles.iter());
                let ctx = StepContext {
                    state: &a.state,
                    destination: a.goal,
                    steps_remaining: steps_to_goal(a.state.position, a.goal, speed, dt),
                    neighbors: &neighbors,
                    obstacles: &near,
                    history: &a.history,
                };
                let mut r = rng::keyed(seed, a.id as u64);
                let (out, _) = advance(model, &mut a.memory, &ctx, SamplingMode::Stochastic, &mut r)?;
                Ok(out.state)
            })
            .collect();
        for (a, s) in self.agents.iter_mut().zip(next) {
            a.state = s?;
            a.history.push(a.state.position);
            self.output.trajectories.push(a.id, frame + 1, a.state.position);
        }
        let radius = self.config.radius;
        self.agents.retain(|a| !a.arrived(radius));
        Ok(())
    }

    pub fn run(mut self) -> Result<SimOutput> {
        let dt = self.dt();
        let frames = (self.config.duration / dt).round() as i64;
        let every = ((self.config.spawn_interval / dt).round() as i64).max(1);
        for f in 0..frames {
            if f % every == 0 {
                self.spawn_batch(f)?;
            }
            self.step(f)?;
        }
        Ok(self.output)
    }
}

/// Runs a boundary-spawn simulation.
pub fn simulate<M>(model: &M, config: &SimConfig, seed: u64) -> Result<SimOutput>
where
    M: ForceModel + Sync,
    M::Memory: Send,
{
    Simulation::new(model, config, seed)?.run()
}
