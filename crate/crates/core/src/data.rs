//! Trajectory ingestion, coordinate transforms, 8/12 windowing and
//! neighborhood queries.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec2;

/// Observed frames per window (`t_h + 1`).
pub const OBS_LEN: usize = 8;
/// Predicted frames per window (`t_f`).
pub const PRED_LEN: usize = 12;
pub const WINDOW_LEN: usize = OBS_LEN + PRED_LEN;
/// Tracks shorter than this are folded into the environment.
pub const MIN_TRACK_LEN: usize = WINDOW_LEN;
pub const DEFAULT_DT: f64 = 0.4;
pub const DEFAULT_NEIGHBOR_RADIUS: f64 = 100.0;
pub const DEFAULT_CONTEXT_RADIUS: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    /// Pixels.
    pub position: Vec2,
    /// Pixels per second.
    pub velocity: Vec2,
}

impl AgentState {
    pub fn new(position: Vec2, velocity: Vec2) -> Self {
        AgentState { position, velocity }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
    }
}

/// 3×3 projective map from world to pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    forward: Matrix3<f64>,
    inverse: Matrix3<f64>,
}

impl Homography {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("homography has non-finite entries".into()));
        }
        let det = matrix.determinant();
        if det.abs() <= 1e-12 {
            return Err(Error::Validation(format!("homography is singular (det = {det:e})")));
        }
        let inverse = matrix
            .try_inverse()
            .ok_or_else(|| Error::Validation("homography is not invertible".into()))?;
        Ok(Homography { forward: matrix, inverse })
    }

    pub fn identity() -> Self {
        Homography {
            forward: Matrix3::identity(),
            inverse: Matrix3::identity(),
        }
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.forward;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.forward
    }

    pub fn world_to_pixel(&self, point: Vec2) -> Result<Vec2> {
        apply(&self.forward, point)
    }

    pub fn pixel_to_world(&self, point: Vec2) -> Result<Vec2> {
        apply(&self.inverse, point)
    }

    /// Reads three lines of three whitespace-separated numbers.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = Vec::with_capacity(9);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("invalid number {tok:?}"),
                })?;
                values.push(v);
            }
        }
        if values.len() != 9 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 0,
                message: format!("expected 9 homography entries, found {}", values.len()),
            });
        }
        Self::new(Matrix3::from_row_slice(&values))
    }
}

fn apply(m: &Matrix3<f64>, p: Vec2) -> Result<Vec2> {
    let h = m * Vector3::new(p.x, p.y, 1.0);
    if h.z == 0.0 {
        return Err(Error::ProjectiveDegeneracy);
    }
    Ok(Vec2::new(h.x / h.z, h.y / h.z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Bounds {
            min: [min.x, min.y],
            max: [max.x, max.y],
        }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    fn enclosing<'a>(points: impl Iterator<Item = &'a Vec2>) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        if !min[0].is_finite() {
            return Bounds { min: [0.0; 2], max: [0.0; 2] };
        }
        Bounds { min, max }
    }
}

/// One agent's observations, ordered by frame id.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub agent_id: i64,
    pub frames: Vec<i64>,
    pub states: Vec<AgentState>,
}

impl Track {
    pub fn state_at(&self, frame: i64) -> Option<&AgentState> {
        self.frames.binary_search(&frame).ok().map(|i| &self.states[i])
    }
}

/// One raw observation: frame, agent and position in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub frame: i64,
    pub agent: i64,
    pub position: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub dt: f64,
    /// Every frame id carrying an agent or dynamic obstacle, increasing.
    pub frame_ids: Vec<i64>,
    /// Id difference between consecutive frames.
    pub frame_step: i64,
    pub agents: BTreeMap<i64, Track>,
    pub obstacles: Vec<Vec2>,
    pub dynamic_obstacles: BTreeMap<i64, Vec<Vec2>>,
    pub homography: Homography,
    pub bounds: Bounds,
}

impl Scene {
    /// Builds a scene from pixel-space records. Velocities are backward
    /// differences within contiguous runs (`v(t) = (p(t) - p(t-1)) / dt`);
    /// the first frame of a run copies the second frame's velocity. Agents
    /// with fewer than `min_track_len` frames become dynamic obstacles.
    pub fn from_records(
        records: &[Record],
        homography: Homography,
        dt: f64,
        min_track_len: usize,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Validation(format!("dt must be positive, got {dt}")));
        }
        let mut by_agent: BTreeMap<i64, Vec<(i64, Vec2)>> = BTreeMap::new();
        for r in records {
            if !(r.position.x.is_finite() && r.position.y.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite position for agent {} at frame {}",
                    r.agent, r.frame
                )));
            }
            by_agent.entry(r.agent).or_default().push((r.frame, r.position));
        }
        let mut all_frames: Vec<i64> = records.iter().map(|r| r.frame).collect();
        all_frames.sort_unstable();
        all_frames.dedup();
        let frame_step = all_frames
            .windows(2)
            .map(|w| w[1] - w[0])
            .min()
            .unwrap_or(1)
            .max(1);

        let mut agents = BTreeMap::new();
        let mut dynamic_obstacles: BTreeMap<i64, Vec<Vec2>> = BTreeMap::new();
        for (agent_id, mut obs) in by_agent {
            obs.sort_by_key(|(f, _)| *f);
            if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::Validation(format!(
                    "agent {agent_id} observed twice at frame {}",
                    w[0].0
                )));
            }
            if obs.len() < min_track_len {
                for (f, p) in obs {
                    dynamic_obstacles.entry(f).or_default().push(p);
                }
                continue;
            }
            let frames: Vec<i64> = obs.iter().map(|(f, _)| *f).collect();
            let states = velocities(&obs, frame_step, dt);
            agents.insert(agent_id, Track { agent_id, frames, states });
        }
        let bounds = Bounds::enclosing(records.iter().map(|r| &r.position));
        Ok(Scene {
            dt,
            frame_ids: all_frames,
            frame_step,
            agents,
            obstacles: Vec::new(),
            dynamic_obstacles,
            homography,
            bounds,
        })
    }

    pub fn with_obstacles(mut self, obstacles: Vec<Vec2>) -> Self {
        self.obstacles = obstacles;
        self
    }

    pub fn state_at(&self, agent: i64, frame: i64) -> Option<&AgentState> {
        self.agents.get(&agent).and_then(|t| t.state_at(frame))
    }

    /// All agents present at each frame, ordered by agent id.
    pub fn frame_index(&self) -> BTreeMap<i64, Vec<(i64, AgentState)>> {
        let mut index: BTreeMap<i64, Vec<(i64, AgentState)>> = BTreeMap::new();
        for track in self.agents.values() {
            for (f, s) in track.frames.iter().zip(&track.states) {
                index.entry(*f).or_default().push((track.agent_id, *s));
            }
        }
        index
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Validation("dt must be positive".into()));
        }
        if self.frame_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("frame ids must be strictly increasing".into()));
        }
        if self.homography.matrix().determinant().abs() <= 1e-12 {
            return Err(Error::Validation("homography is singular".into()));
        }
        for t in self.agents.values() {
            if t.states.iter().any(|s| !s.is_finite()) {
                return Err(Error::Validation(format!("agent {} has non-finite state", t.agent_id)));
            }
        }
        Ok(())
    }

    /// Pixel-space records of every agent and dynamic obstacle track is not
    /// recoverable, so only agents are emitted.
    pub fn records(&self) -> Vec<Record> {
        let mut out: Vec<Record> = self
            .agents
            .values()
            .flat_map(|t| {
                t.frames.iter().zip(&t.states).map(move |(f, s)| Record {
                    frame: *f,
                    agent: t.agent_id,
                    position: s.position,
                })
            })
            .collect();
        out.sort_by_key(|r| (r.frame, r.agent));
        out
    }
}

fn velocities(obs: &[(i64, Vec2)], frame_step: i64, dt: f64) -> Vec<AgentState> {
    let n = obs.len();
    let mut vel = vec![None; n];
    for i in 1..n {
        if obs[i].0 - obs[i - 1].0 == frame_step {
            vel[i] = Some((obs[i].1 - obs[i - 1].1) / dt);
        }
    }
    (0..n)
        .map(|i| {
            // A run start takes the next frame's velocity when the run
            // continues, zero for isolated frames.
            let v = vel[i]
                .or_else(|| vel.get(i + 1).copied().flatten())
                .unwrap_or_else(Vec2::zeros);
            AgentState::new(obs[i].1, v)
        })
        .collect()
}

/// Parses `frame<TAB>agent<TAB>x<TAB>y` lines (any whitespace accepted);
/// `#` lines and blank lines are skipped. Ids may be written as integral
/// floats (`12.0`).
pub fn parse_trajectories(text: &str, source: &str) -> Result<Vec<(i64, i64, f64, f64)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = fields[k]
                .parse()
                .map_err(|_| err(format!("invalid number {:?}", fields[k])))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value {:?}", fields[k])));
            }
            Ok(v)
        };
        let id = |k: usize| -> Result<i64> {
            let v = num(k)?;
            if v.fract() != 0.0 || v.abs() > 9.0e15 {
                return Err(err(format!("id {:?} is not an integer", fields[k])));
            }
            Ok(v as i64)
        };
        out.push((id(0)?, id(1)?, num(2)?, num(3)?));
    }
    Ok(out)
}

/// Loads a trajectory file in world coordinates, converts it to pixels
/// with the homography, and builds a [`Scene`].
pub fn load_trajectories(path: impl AsRef<Path>, homography_path: impl AsRef<Path>, dt: f64) -> Result<Scene> {
    let homography = Homography::load(homography_path)?;
    load_trajectories_with(path, homography, dt)
}

pub fn load_trajectories_with(path: impl AsRef<Path>, homography: Homography, dt: f64) -> Result<Scene> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_trajectories(&text, &path.display().to_string())?;
    let records = rows
        .into_iter()
        .map(|(frame, agent, x, y)| {
            Ok(Record {
                frame,
                agent,
                position: homography.world_to_pixel(Vec2::new(x, y))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Scene::from_records(&records, homography, dt, MIN_TRACK_LEN)
}

/// Writes records in the trajectory file format, projecting pixels back to
/// world coordinates.
pub fn write_trajectories(path: impl AsRef<Path>, records: &[Record], homography: &Homography) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("# frame\tagent\tx\ty\n");
    for r in records {
        let w = homography.pixel_to_world(r.position)?;
        text.push_str(&format!("{}\t{}\t{}\t{}\n", r.frame, r.agent, w.x, w.y));
    }
    crate::io::write_atomic(path, text.as_bytes())
}

/// Another agent visible to the subject at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub agent_id: i64,
    pub state: AgentState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSet {
    pub agent_id: i64,
    pub frame_id: i64,
    pub neighbor_ids: Vec<i64>,
}

/// Radius and optional field-of-view filter. A neighbor is kept when its
/// distance is strictly below `radius` and, with a field of view, its
/// bearing lies within `±fov/2` of the subject's heading (the cone test is
/// skipped when the subject is nearly at rest).
pub fn is_neighbor(subject: &AgentState, other: Vec2, radius: f64, fov_deg: Option<f64>) -> bool {
    let offset = other - subject.position;
    let dist = offset.norm();
    if dist >= radius {
        return false;
    }
    match fov_deg {
        None => true,
        Some(fov) => {
            let speed = subject.velocity.norm();
            if speed < 1e-6 || dist == 0.0 {
                return true;
            }
            let cos = subject.velocity.dot(&offset) / (speed * dist);
            let angle = cos.clamp(-1.0, 1.0).acos().to_degrees();
            angle <= fov / 2.0 + 1e-12
        }
    }
}

pub fn select_neighbors<'a>(
    subject: &AgentState,
    candidates: &'a [Neighbor],
    radius: f64,
    fov_deg: Option<f64>,
) -> impl Iterator<Item = &'a Neighbor> + 'a {
    let subject = *subject;
    candidates
        .iter()
        .filter(move |n| is_neighbor(&subject, n.state.position, radius, fov_deg))
}

pub fn neighbors(scene: &Scene, agent: i64, frame: i64, radius: f64, fov_deg: Option<f64>) -> Result<NeighborSet> {
    let subject = scene
        .state_at(agent, frame)
        .ok_or_else(|| Error::Lookup(format!("agent {agent} is not present at frame {frame}")))?;
    let neighbor_ids = scene
        .agents
        .values()
        .filter(|t| t.agent_id != agent)
        .filter_map(|t| t.state_at(frame).map(|s| (t.agent_id, s)))
        .filter(|(_, s)| is_neighbor(subject, s.position, radius, fov_deg))
        .map(|(id, _)| id)
        .collect();
    Ok(NeighborSet {
        agent_id: agent,
        frame_id: frame,
        neighbor_ids,
    })
}

/// One training/evaluation sample: `observed` states followed by `future`
/// positions, plus per-frame context (index `k` covers frame
/// `start_frame + k * frame_step` for `k` in `0..observed.len() + future.len()`).
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub id: usize,
    pub agent_id: i64,
    pub start_frame: i64,
    pub observed: Vec<AgentState>,
    pub future: Vec<Vec2>,
    pub destination: Vec2,
    /// Candidate neighbors per frame; the rollout applies the radius test.
    pub neighbors: Vec<Vec<Neighbor>>,
    pub dynamic_obstacles: Vec<Vec<Vec2>>,
    pub obstacles: Vec<Vec2>,
}

impl Window {
    /// A context-free window, mostly for tests and synthetic probes.
    pub fn isolated(id: usize, observed: Vec<AgentState>, future: Vec<Vec2>) -> Self {
        let frames = observed.len() + future.len();
        let destination = *future.last().expect("a window needs at least one future position");
        Window {
            id,
            agent_id: id as i64,
            start_frame: 0,
            observed,
            future,
            destination,
            neighbors: vec![Vec::new(); frames],
            dynamic_obstacles: vec![Vec::new(); frames],
            obstacles: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.observed.len() + self.future.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last_observed(&self) -> &AgentState {
        self.observed.last().expect("a window has observed frames")
    }

    /// Every ground-truth position, observed then future.
    pub fn positions(&self) -> Vec<Vec2> {
        self.observed
            .iter()
            .map(|s| s.position)
            .chain(self.future.iter().copied())
            .collect()
    }

    pub fn has_interactions(&self) -> bool {
        self.neighbors.iter().any(|n| !n.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowOptions {
    pub stride: usize,
    /// Other agents farther than this from the subject's ground-truth
    /// position are not stored as neighbor candidates.
    pub context_radius: f64,
}

impl Default for WindowOptions {
    fn default() -> Self {
        WindowOptions {
            stride: 1,
            context_radius: DEFAULT_CONTEXT_RADIUS,
        }
    }
}

/// Every full 20-frame span of each agent's contiguous runs, stepped by
/// `stride`.
pub fn window_scene(scene: &Scene, stride: usize) -> Result<Vec<Window>> {
    window_scene_with(
        scene,
        &WindowOptions {
            stride,
            ..Default::default()
        },
    )
}

pub fn window_scene_with(scene: &Scene, opts: &WindowOptions) -> Result<Vec<Window>> {
    if opts.stride == 0 {
        return Err(Error::Contract("window stride must be at least 1".into()));
    }
    let index = scene.frame_index();
    let mut windows = Vec::new();
    for track in scene.agents.values() {
        for (start, len) in contiguous_runs(&track.frames, scene.frame_step) {
            if len < WINDOW_LEN {
                continue;
            }
            let mut s = start;
            while s + WINDOW_LEN <= start + len {
                windows.push(build_window(scene, &index, track, s, windows.len(), opts.context_radius));
                s += opts.stride;
            }
        }
    }
    Ok(windows)
}

/// `(first index, length)` of each run of consecutive frame ids.
pub fn contiguous_runs(frames: &[i64], step: i64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=frames.len() {
        if i == frames.len() || frames[i] - frames[i - 1] != step {
            if i > start {
                runs.push((start, i - start));
            }
            start = i;
        }
    }
    runs
}

fn build_window(
    scene: &Scene,
    index: &BTreeMap<i64, Vec<(i64, AgentState)>>,
    track: &Track,
    start: usize,
    id: usize,
    context_radius: f64,
) -> Window {
    let span = start..start + WINDOW_LEN;
    let observed: Vec<AgentState> = track.states[start..start + OBS_LEN].to_vec();
    let future: Vec<Vec2> = track.states[start + OBS_LEN..span.end]
        .iter()
        .map(|s| s.position)
        .collect();
    let mut neighbors = Vec::with_capacity(WINDOW_LEN);
    let mut dynamic = Vec::with_capacity(WINDOW_LEN);
    for k in span.clone() {
        let frame = track.frames[k];
        let subject = track.states[k].position;
        let near = index
            .get(&frame)
            .map(|v| {
                v.iter()
                    .filter(|(id, s)| *id != track.agent_id && (s.position - subject).norm() < context_radius)
                    .map(|(id, s)| Neighbor {
                        agent_id: *id,
                        state: *s,
                    })
                    .collect()
            })
            .unwrap_or_default();
        neighbors.push(near);
        dynamic.push(scene.dynamic_obstacles.get(&frame).cloned().unwrap_or_default());
    }
    Window {
        id,
        agent_id: track.agent_id,
        start_frame: track.frames[start],
        destination: *future.last().unwrap(),
        observed,
        future,
        neighbors,
        dynamic_obstacles: dynamic,
        obstacles: scene.obstacles.clone(),
    }
}

// ---------------------------------------------------------------------------
// Scene export

#[derive(Debug, Serialize, Deserialize)]
struct AgentRecord {
    id: i64,
    frames: Vec<i64>,
    positions: Vec<[f64; 2]>,
    velocities: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DynamicRecord {
    frame: i64,
    points: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    dt: f64,
    agents: Vec<AgentRecord>,
    obstacles: Vec<[f64; 2]>,
    dynamic_obstacles: Vec<DynamicRecord>,
    homography: [[f64; 3]; 3],
    bounds: Bounds,
}

fn arr(v: &Vec2) -> [f64; 2] {
    [v.x, v.y]
}

fn vec2(a: &[f64; 2]) -> Vec2 {
    Vec2::new(a[0], a[1])
}

impl Scene {
    pub fn to_json(&self) -> Result<String> {
        let file = SceneFile {
            dt: self.dt,
            agents: self
                .agents
                .values()
                .map(|t| AgentRecord {
                    id: t.agent_id,
                    frames: t.frames.clone(),
                    positions: t.states.iter().map(|s| arr(&s.position)).collect(),
                    velocities: t.states.iter().map(|s| arr(&s.velocity)).collect(),
                })
                .collect(),
            obstacles: self.obstacles.iter().map(arr).collect(),
            dynamic_obstacles: self
                .dynamic_obstacles
                .iter()
                .map(|(f, pts)| DynamicRecord {
                    frame: *f,
                    points: pts.iter().map(arr).collect(),
                })
                .collect(),
            homography: self.homography.rows(),
            bounds: self.bounds,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(text)?;
        let homography = Homography::from_rows(file.homography)?;
        let mut frames: Vec<i64> = Vec::new();
        let mut agents = BTreeMap::new();
        for a in file.agents {
            if a.frames.len() != a.positions.len() || a.frames.len() != a.velocities.len() {
                return Err(Error::Validation(format!("agent {} has ragged arrays", a.id)));
            }
            frames.extend(&a.frames);
            let states = a
                .positions
                .iter()
                .zip(&a.velocities)
                .map(|(p, v)| AgentState::new(vec2(p), vec2(v)))
                .collect();
            agents.insert(
                a.id,
                Track {
                    agent_id: a.id,
                    frames: a.frames,
                    states,
                },
            );
        }
        let dynamic_obstacles: BTreeMap<i64, Vec<Vec2>> = file
            .dynamic_obstacles
            .into_iter()
            .map(|d| (d.frame, d.points.iter().map(vec2).collect()))
            .collect();
        frames.extend(dynamic_obstacles.keys());
        frames.sort_unstable();
        frames.dedup();
        let frame_step = frames.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(1).max(1);
        let scene = Scene {
            dt: file.dt,
            frame_ids: frames,
            frame_step,
            agents,
            obstacles: file.obstacles.iter().map(vec2).collect(),
            dynamic_obstacles,
            homography,
            bounds: file.bounds,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_track(agent: i64, frames: impl IntoIterator<Item = i64>, v: Vec2) -> Vec<Record> {
        frames
            .into_iter()
            .map(|f| Record {
                frame: f,
                agent,
                position: Vec2::new(10.0, 20.0) + v * f as f64,
            })
            .collect()
    }

    fn scene_of(records: &[Record]) -> Scene {
        Scene::from_records(records, Homography::identity(), DEFAULT_DT, MIN_TRACK_LEN).unwrap()
    }

    #[test]
    fn one_agent_twenty_five_frames() {
        let scene = scene_of(&line_track(1, 0..25, Vec2::new(1.0, 0.5)));
        assert_eq!(scene.agents.len(), 1);
        assert_eq!(scene.agents[&1].frames.len(), 25);
        assert_eq!(scene.frame_ids.len(), 25);
    }

    #[test]
    fn short_track_becomes_dynamic_obstacle() {
        let mut recs = line_track(1, 0..25, Vec2::new(1.0, 0.0));
        recs.extend(line_track(2, 0..10, Vec2::new(0.0, 1.0)));
        let scene = scene_of(&recs);
        assert!(scene.agents.contains_key(&1));
        assert!(!scene.agents.contains_key(&2));
        assert_eq!(scene.dynamic_obstacles.len(), 10);
        assert!(scene.dynamic_obstacles.values().all(|p| p.len() == 1));
    }

    #[test]
    fn identical_agents_share_velocities() {
        let mut recs = line_track(1, 0..20, Vec2::new(2.0, -1.0));
        recs.extend(line_track(2, 0..20, Vec2::new(2.0, -1.0)));
        let scene = scene_of(&recs);
        assert_eq!(scene.agents[&1].states, scene.agents[&2].states);
    }

    #[test]
    fn first_frame_copies_second_velocity() {
        let scene = scene_of(&line_track(1, 0..20, Vec2::new(2.0, 0.0)));
        let s = &scene.agents[&1].states;
        assert_eq!(s[0].velocity, s[1].velocity);
        assert!((s[1].velocity - Vec2::new(5.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn duplicate_observation_is_rejected() {
        let mut recs = line_track(1, 0..20, Vec2::new(1.0, 0.0));
        recs.push(recs[3]);
        assert!(matches!(
            Scene::from_records(&recs, Homography::identity(), 0.4, 20),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let text = "# header\n0\t1\t1.0\t2.0\n1\t1\toops\t2.0\n";
        match parse_trajectories(text, "t.txt") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn singular_homography_is_rejected() {
        let rows = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]];
        assert!(matches!(Homography::from_rows(rows), Err(Error::Validation(_))));
    }

    #[test]
    fn homography_examples() {
        let p = Vec2::new(3.0, 4.0);
        assert_eq!(Homography::identity().world_to_pixel(p).unwrap(), p);
        let scale = Homography::from_rows([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(scale.world_to_pixel(p).unwrap(), Vec2::new(6.0, 8.0));
        let shift = Homography::from_rows([[1.0, 0.0, 5.0], [0.0, 1.0, -2.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(shift.world_to_pixel(Vec2::zeros()).unwrap(), Vec2::new(5.0, -2.0));
    }

    #[test]
    fn projective_degeneracy() {
        // Third row maps (1, 0) to w = 0.
        let h = Homography::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]).unwrap();
        assert!(matches!(h.world_to_pixel(Vec2::new(1.0, 0.0)), Err(Error::ProjectiveDegeneracy)));
    }

    #[test]
    fn window_counts() {
        let scene = scene_of(&line_track(1, 0..25, Vec2::new(1.0, 0.0)));
        assert_eq!(window_scene(&scene, 1).unwrap().len(), 6);
        assert_eq!(window_scene(&scene, 2).unwrap().len(), 3);
        let exact = scene_of(&line_track(1, 0..20, Vec2::new(1.0, 0.0)));
        assert_eq!(window_scene(&exact, 1).unwrap().len(), 1);
    }

    #[test]
    fn gaps_split_windows() {
        // frames 0..22 and 30..52: runs of 22 and 22 -> 3 + 3 windows
        let scene = scene_of(&line_track(1, (0..22).chain(30..52), Vec2::new(1.0, 0.0)));
        let windows = window_scene(&scene, 1).unwrap();
        assert_eq!(windows.len(), 6);
        for w in &windows {
            assert!(w.start_frame + 19 < 22 || w.start_frame >= 30);
        }
    }

    #[test]
    fn window_layout() {
        let scene = scene_of(&line_track(1, 0..20, Vec2::new(1.0, 0.0)));
        let w = &window_scene(&scene, 1).unwrap()[0];
        assert_eq!(w.observed.len(), OBS_LEN);
        assert_eq!(w.future.len(), PRED_LEN);
        assert_eq!(w.destination, *w.future.last().unwrap());
        assert_eq!(w.neighbors.len(), WINDOW_LEN);
    }

    #[test]
    fn zero_stride_is_contract_violation() {
        let scene = scene_of(&line_track(1, 0..20, Vec2::new(1.0, 0.0)));
        assert!(matches!(window_scene(&scene, 0), Err(Error::Contract(_))));
    }

    fn two_agents(offset: Vec2, v: Vec2) -> Scene {
        let mut recs = Vec::new();
        for f in 0..20 {
            let base = Vec2::new(100.0, 100.0) + v * (f as f64 * DEFAULT_DT);
            recs.push(Record { frame: f, agent: 1, position: base });
            recs.push(Record { frame: f, agent: 2, position: base + offset });
        }
        scene_of(&recs)
    }

    #[test]
    fn neighbor_radius() {
        let scene = two_agents(Vec2::new(3.0, 4.0), Vec2::new(1.0, 0.0));
        assert_eq!(neighbors(&scene, 1, 5, 10.0, None).unwrap().neighbor_ids, vec![2]);
        assert_eq!(neighbors(&scene, 2, 5, 10.0, None).unwrap().neighbor_ids, vec![1]);
        assert!(neighbors(&scene, 1, 5, 0.0, None).unwrap().neighbor_ids.is_empty());
    }

    #[test]
    fn neighbor_behind_is_outside_half_plane_view() {
        let scene = two_agents(Vec2::new(-5.0, 0.0), Vec2::new(10.0, 0.0));
        assert!(neighbors(&scene, 1, 5, 10.0, Some(180.0)).unwrap().neighbor_ids.is_empty());
        // agent 2 looks forward at agent 1
        assert_eq!(neighbors(&scene, 2, 5, 10.0, Some(180.0)).unwrap().neighbor_ids, vec![1]);
    }

    #[test]
    fn unknown_agent_is_lookup_error() {
        let scene = two_agents(Vec2::new(3.0, 4.0), Vec2::new(1.0, 0.0));
        assert!(matches!(neighbors(&scene, 9, 0, 10.0, None), Err(Error::Lookup(_))));
        assert!(matches!(neighbors(&scene, 1, 99, 10.0, None), Err(Error::Lookup(_))));
    }

    #[test]
    fn scene_json_round_trip() {
        let mut recs = line_track(1, 0..22, Vec2::new(1.5, 0.25));
        recs.extend(line_track(2, 3..8, Vec2::new(-1.0, 0.0)));
        let scene = scene_of(&recs).with_obstacles(vec![Vec2::new(1.0, 2.0)]);
        let back = Scene::from_json(&scene.to_json().unwrap()).unwrap();
        assert_eq!(back, scene);
    }

    fn brute_force_window_count(frames: &[i64]) -> usize {
        let set: std::collections::BTreeSet<i64> = frames.iter().copied().collect();
        set.iter()
            .filter(|&&s| (0..WINDOW_LEN as i64).all(|k| set.contains(&(s + k))))
            .count()
    }

    proptest! {
        #[test]
        fn round_trip_homography(
            m in proptest::array::uniform9(-2.0f64..2.0),
            x in -50.0f64..50.0, y in -50.0f64..50.0,
        ) {
            let mut rows = [[0.0; 3]; 3];
            for (i, v) in m.iter().enumerate() { rows[i / 3][i % 3] = *v; }
            rows[0][0] += 3.0; rows[1][1] += 3.0; rows[2][2] = 1.0; rows[2][0] *= 1e-3; rows[2][1] *= 1e-3;
            if let Ok(h) = Homography::from_rows(rows) {
                let p = Vec2::new(x, y);
                if let Ok(px) = h.world_to_pixel(p) {
                    let back = h.pixel_to_world(px).unwrap();
                    prop_assert!((back - p).norm() <= 1e-9 * (1.0 + p.norm()));
                }
            }
        }

        #[test]
        fn window_count_matches_enumeration(mask in proptest::collection::vec(any::<bool>(), 20..80)) {
            let frames: Vec<i64> = mask.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i as i64).collect();
            let mut recs = line_track(1, frames.iter().copied(), Vec2::new(1.0, 0.0));
            // a long companion fixes the frame step at 1
            recs.extend(line_track(2, 0..80, Vec2::new(0.0, 1.0)));
            let scene = Scene::from_records(&recs, Homography::identity(), 0.4, 1).unwrap();
            let count = window_scene(&scene, 1).unwrap().iter().filter(|w| w.agent_id == 1).count();
            prop_assert_eq!(count, brute_force_window_count(&frames));
        }

        #[test]
        fn neighborhood_without_fov_is_symmetric(
            ax in -50.0f64..50.0, ay in -50.0f64..50.0, bx in -50.0f64..50.0, by in -50.0f64..50.0,
            r in 0.0f64..80.0,
        ) {
            let a = AgentState::new(Vec2::new(ax, ay), Vec2::new(1.0, 0.0));
            let b = AgentState::new(Vec2::new(bx, by), Vec2::new(0.0, -1.0));
            prop_assert_eq!(is_neighbor(&a, b.position, r, None), is_neighbor(&b, a.position, r, None));
        }

        #[test]
        fn velocities_reproduce_positions(steps in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 20..30)) {
            let mut p = Vec2::new(0.0, 0.0);
            let mut recs = Vec::new();
            for (f, (dx, dy)) in steps.iter().enumerate() {
                p += Vec2::new(*dx, *dy);
                recs.push(Record { frame: f as i64, agent: 1, position: p });
            }
            let scene = scene_of(&recs);
            for w in window_scene(&scene, 1).unwrap() {
                for k in 1..w.observed.len() {
                    let pred = w.observed[k - 1].position + w.observed[k].velocity * scene.dt;
                    prop_assert!((pred - w.observed[k].position).norm() <= 1e-12 * (1.0 + pred.norm()));
                }
            }
        }
    }
}
