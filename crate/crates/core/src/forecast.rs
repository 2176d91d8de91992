//! Trajectory prediction (standard and ultra sampling), destination
//! selection, and ADE/FDE scoring.

use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Homography, Window};
use crate::dynamics::{FactorKind, ForceDistribution, ForceModel, SamplingMode};
use crate::error::{Error, Result};
use crate::io;
use crate::rng;
use crate::rollout::WindowRollout;
use crate::Vec2;

pub const STANDARD_SAMPLES: usize = 20;
pub const ULTRA_GOALS: usize = 20;
pub const ULTRA_POSITIONS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    GroundTruth,
    File,
    EndpointGaussian,
}

impl GoalMode {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "ground_truth" => Ok(GoalMode::GroundTruth),
            "file" => Ok(GoalMode::File),
            "endpoint_gaussian" => Ok(GoalMode::EndpointGaussian),
            _ => Err(Error::Usage(format!(
                "unknown goal mode {text:?} (expected ground_truth, file or endpoint_gaussian)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GoalMode::GroundTruth => "ground_truth",
            GoalMode::File => "file",
            GoalMode::EndpointGaussian => "endpoint_gaussian",
        }
    }
}

/// Per-axis Gaussian over displacements from the last observed position to
/// the destination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointFit {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl EndpointFit {
    pub fn fit(windows: &[Window]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Contract("endpoint fit needs at least one window".into()));
        }
        let n = windows.len() as f64;
        let disp: Vec<Vec2> = windows.iter().map(|w| w.destination - w.last_observed().position).collect();
        let mean = disp.iter().sum::<Vec2>() / n;
        let var = disp.iter().map(|d| (d - mean).component_mul(&(d - mean))).sum::<Vec2>() / n;
        Ok(EndpointFit {
            mean: [mean.x, mean.y],
            std: [var.x.sqrt(), var.y.sqrt()],
        })
    }

    pub fn sample<R: rand::Rng>(&self, anchor: Vec2, rng: &mut R) -> Vec2 {
        let xi: [f64; 2] = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
        Vec2::new(
            anchor.x + self.mean[0] + self.std[0] * xi[0],
            anchor.y + self.mean[1] + self.std[1] * xi[1],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRecord {
    pub window_id: usize,
    pub goal: [f64; 2],
}

pub fn write_goals(path: impl AsRef<Path>, goals: &BTreeMap<usize, Vec2>) -> Result<()> {
    let records: Vec<GoalRecord> = goals
        .iter()
        .map(|(id, g)| GoalRecord {
            window_id: *id,
            goal: [g.x, g.y],
        })
        .collect();
    io::write_atomic(path, io::to_jsonl(&records)?.as_bytes())
}

pub fn read_goals(path: impl AsRef<Path>) -> Result<BTreeMap<usize, Vec2>> {
    let path = path.as_ref();
    let records: Vec<GoalRecord> = io::from_jsonl(&io::read_text(path)?, &path.display().to_string())?;
    Ok(records
        .into_iter()
        .map(|r| (r.window_id, Vec2::new(r.goal[0], r.goal[1])))
        .collect())
}

/// Destination source for prediction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GoalSource {
    pub file: Option<BTreeMap<usize, Vec2>>,
    pub endpoint: Option<EndpointFit>,
}

impl GoalSource {
    /// `count` destinations for `window`, drawn from the window's goal stream.
    pub fn goals(&self, mode: GoalMode, window: &Window, count: usize, seed: u64) -> Result<Vec<Vec2>> {
        match mode {
            GoalMode::GroundTruth => Ok(vec![window.destination; count]),
            GoalMode::File => {
                let map = self
                    .file
                    .as_ref()
                    .ok_or_else(|| Error::Contract("file goal mode needs a goals file".into()))?;
                let g = map
                    .get(&window.id)
                    .ok_or_else(|| Error::Lookup(format!("no goal for window {} in goals file", window.id)))?;
                Ok(vec![*g; count])
            }
            GoalMode::EndpointGaussian => {
                let fit = self
                    .endpoint
                    .ok_or_else(|| Error::Contract("endpoint_gaussian goal mode needs a fitted endpoint model".into()))?;
                let mut r = rng::goal_stream(seed, window.id);
                let anchor = window.last_observed().position;
                Ok((0..count).map(|_| fit.sample(anchor, &mut r)).collect())
            }
        }
    }
}

/// Serializable summary of one force distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorRecord {
    pub kind: FactorKind,
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl From<&ForceDistribution> for FactorRecord {
    fn from(d: &ForceDistribution) -> Self {
        let m = d.mean_force();
        let s = d.axis_std();
        FactorRecord {
            kind: d.kind,
            mean: [m.x, m.y],
            std: [s.x, s.y],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub window_id: usize,
    pub agent_id: i64,
    pub goal_mode: GoalMode,
    pub goals: Vec<[f64; 2]>,
    /// One trajectory of `t_f` positions per sample.
    pub samples: Vec<Vec<[f64; 2]>>,
    /// Force distributions of the first sample, per step.
    #[serde(default)]
    pub forces: Vec<Vec<FactorRecord>>,
}

impl PredictionSet {
    pub fn trajectories(&self) -> Vec<Vec<Vec2>> {
        self.samples
            .iter()
            .map(|s| s.iter().map(|p| Vec2::new(p[0], p[1])).collect())
            .collect()
    }
}

fn to_arrays(points: &[Vec2]) -> Vec<[f64; 2]> {
    points.iter().map(|p| [p.x, p.y]).collect()
}

/// One full stochastic rollout per goal; sample `s` uses its own stream.
pub fn predict_standard<M: ForceModel + Sync>(
    model: &M,
    window: &Window,
    goals: &[Vec2],
    mode: GoalMode,
    seed: u64,
) -> Result<PredictionSet> {
    predict_ultra_inner(model, window, goals, 1, mode, seed, None)
}

/// For each goal, every step draws `n_positions` candidate next states from
/// the same force distributions and keeps the one closest to the ground
/// truth. Evaluation only: it reads the window's future.
pub fn predict_ultra<M: ForceModel + Sync>(
    model: &M,
    window: &Window,
    goals: &[Vec2],
    n_positions: usize,
    mode: GoalMode,
    seed: u64,
) -> Result<PredictionSet> {
    if window.future.is_empty() {
        return Err(Error::Contract("ultra sampling needs the ground-truth future".into()));
    }
    predict_ultra_inner(model, window, goals, n_positions, mode, seed, Some(&window.future))
}

fn predict_ultra_inner<M: ForceModel + Sync>(
    model: &M,
    window: &Window,
    goals: &[Vec2],
    n_positions: usize,
    mode: GoalMode,
    seed: u64,
    truth: Option<&[Vec2]>,
) -> Result<PredictionSet> {
    if goals.is_empty() || n_positions == 0 {
        return Err(Error::Contract("need at least one goal and one candidate".into()));
    }
    type Run = (Vec<Vec2>, Vec<Vec<FactorRecord>>);
    let runs: Vec<Result<Run>> = goals
        .par_iter()
        .enumerate()
        .map(|(s, goal)| {
            let mut r = rng::rollout_stream(seed, window.id, s);
            let mut cursor = WindowRollout::new(model, window, *goal)?;
            let mut positions = Vec::with_capacity(cursor.horizon());
            let mut forces = Vec::new();
            while !cursor.done() {
                let dists = cursor.forces(&mut r)?;
                let mut best = cursor.sample(&dists, SamplingMode::Stochastic, &mut r)?;
                if let Some(truth) = truth {
                    let target = truth[cursor.step];
                    let mut best_d = (best.state.position - target).norm_squared();
                    for _ in 1..n_positions {
                        let c = cursor.sample(&dists, SamplingMode::Stochastic, &mut r)?;
                        let d = (c.state.position - target).norm_squared();
                        if d < best_d {
                            best = c;
                            best_d = d;
                        }
                    }
                }
                if s == 0 {
                    forces.push(dists.iter().map(FactorRecord::from).collect());
                }
                positions.push(best.state.position);
                cursor.commit(best.state);
            }
            Ok((positions, forces))
        })
        .collect();
    let mut samples = Vec::with_capacity(goals.len());
    let mut forces = Vec::new();
    for (s, run) in runs.into_iter().enumerate() {
        let (p, f) = run?;
        samples.push(to_arrays(&p));
        if s == 0 {
            forces = f;
        }
    }
    Ok(PredictionSet {
        window_id: window.id,
        agent_id: window.agent_id,
        goal_mode: mode,
        goals: to_arrays(goals),
        samples,
        forces,
    })
}

/// Extrapolates the last observed velocity.
pub fn constant_velocity(window: &Window, dt: f64) -> Vec<Vec2> {
    let last = window.last_observed();
    (1..=window.future.len())
        .map(|t| last.position + last.velocity * (dt * t as f64))
        .collect()
}

fn check_lengths(prediction: &[Vec2], truth: &[Vec2]) -> Result<()> {
    if prediction.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape(format!(
            "prediction has {} positions, truth {}",
            prediction.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn ade(prediction: &[Vec2], truth: &[Vec2]) -> Result<f64> {
    check_lengths(prediction, truth)?;
    Ok(prediction.iter().zip(truth).map(|(a, b)| (a - b).norm()).sum::<f64>() / truth.len() as f64)
}

pub fn fde(prediction: &[Vec2], truth: &[Vec2]) -> Result<f64> {
    check_lengths(prediction, truth)?;
    Ok((prediction[prediction.len() - 1] - truth[truth.len() - 1]).norm())
}

/// Minimum ADE and minimum FDE over the set, taken independently.
pub fn best_of(set: &[Vec<Vec2>], truth: &[Vec2]) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::Contract("best-of needs at least one trajectory".into()));
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for p in set {
        best.0 = best.0.min(ade(p, truth)?);
        best.1 = best.1.min(fde(p, truth)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window_id: usize,
    pub ade: f64,
    pub fde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub windows: usize,
    pub ade: f64,
    pub fde: f64,
    /// Whether errors were measured after projecting to world coordinates.
    pub world: bool,
    pub per_window: Vec<WindowScore>,
}

/// Best-of scores per prediction set, matched to windows by id. With a
/// homography, both sides are projected to world coordinates first.
pub fn evaluate(predictions: &[PredictionSet], windows: &[Window], homography: Option<&Homography>) -> Result<EvalReport> {
    let by_id: BTreeMap<usize, &Window> = windows.iter().map(|w| (w.id, w)).collect();
    let project = |pts: &[Vec2]| -> Result<Vec<Vec2>> {
        match homography {
            Some(h) => pts.iter().map(|p| h.pixel_to_world(*p)).collect(),
            None => Ok(pts.to_vec()),
        }
    };
    let mut per_window = Vec::with_capacity(predictions.len());
    for p in predictions {
        let w = by_id
            .get(&p.window_id)
            .ok_or_else(|| Error::Lookup(format!("prediction for unknown window {}", p.window_id)))?;
        let truth = project(&w.future)?;
        let set = p.trajectories().iter().map(|t| project(t)).collect::<Result<Vec<_>>>()?;
        let (a, f) = best_of(&set, &truth)?;
        per_window.push(WindowScore {
            window_id: p.window_id,
            ade: a,
            fde: f,
        });
    }
    if per_window.is_empty() {
        return Err(Error::Contract("no predictions to evaluate".into()));
    }
    let n = per_window.len() as f64;
    Ok(EvalReport {
        windows: per_window.len(),
        ade: per_window.iter().map(|s| s.ade).sum::<f64>() / n,
        fde: per_window.iter().map(|s| s.fde).sum::<f64>() / n,
        world: homography.is_some(),
        per_window,
    })
}

pub fn write_predictions(path: impl AsRef<Path>, sets: &[PredictionSet]) -> Result<()> {
    io::write_atomic(path, io::to_jsonl(sets)?.as_bytes())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionSet>> {
    let path = path.as_ref();
    io::from_jsonl(&io::read_text(path)?, &path.display().to_string())
}
