use std::path::{Path, PathBuf};

use bnsp_core::checkpoint::Checkpoint;
use bnsp_core::config::TrainConfig;
use bnsp_core::data::{load_trajectories, load_trajectories_with, window_scene_with, write_trajectories, Homography, Scene, Window, WindowOptions, OBS_LEN};
use bnsp_core::explain::{explain, Extent, ExtentRule};
use bnsp_core::forecast::{
    evaluate, predict_standard, predict_ultra, read_goals, read_predictions, write_predictions, EndpointFit, GoalMode,
    GoalSource, PredictionSet, ULTRA_GOALS,
};
use bnsp_core::model::Model;
use bnsp_core::networks::Networks;
use bnsp_core::simulator::{collision_stats, parse_intervals, simulate, CollisionReport, SimConfig, Trajectories, DEFAULT_RADIUS_M, DEFAULT_RADIUS_PX};
use bnsp_core::training::{train_phase1, train_phase2};
use bnsp_core::{io, Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::cli::{EvaluateArgs, ExplainArgs, IngestArgs, Phase, PredictArgs, PredictMode, SimulateArgs, TrainArgs};

/// Paths a command read and wrote, plus what goes into its manifest.
pub struct RunRecord {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    io::write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn scene_windows(scene: &Scene, cfg: &TrainConfig) -> Result<Vec<Window>> {
    window_scene_with(
        scene,
        &WindowOptions {
            stride: cfg.window_stride,
            context_radius: cfg.context_radius,
        },
    )
}

pub fn ingest(a: &IngestArgs) -> Result<RunRecord> {
    let scene = match &a.homography {
        Some(h) => load_trajectories(&a.input, h, a.dt)?,
        None => load_trajectories_with(&a.input, Homography::identity(), a.dt)?,
    };
    scene.save(&a.out)?;
    log::info!("{} agents, {} frames", scene.agents.len(), scene.frame_ids.len());
    let mut inputs = vec![a.input.clone()];
    inputs.extend(a.homography.clone());
    Ok(RunRecord {
        inputs,
        outputs: vec![a.out.clone()],
        seed: None,
        config: json!({ "dt": a.dt }),
    })
}

fn train_config(a: &TrainArgs, resumed: Option<&Checkpoint>) -> Result<TrainConfig> {
    let mut cfg = match (&a.config, resumed) {
        (Some(path), _) => TrainConfig::parse(&io::read_text(path)?)?,
        (None, Some(ck)) => ck.config.clone(),
        (None, None) => TrainConfig::default(),
    };
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.seed = a.seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<RunRecord> {
    let resumed = a.resume.as_ref().map(Checkpoint::load).transpose()?;
    if a.phase == Phase::Two && !resumed.as_ref().is_some_and(|ck| ck.phase1.is_some()) {
        return Err(Error::Validation(
            "phase 2 needs a phase-1 checkpoint: pass --resume with a checkpoint trained through phase 1".into(),
        ));
    }
    let cfg = train_config(a, resumed.as_ref())?;
    let mut windows = Vec::new();
    for path in &a.scenes {
        windows.extend(scene_windows(&Scene::load(path)?, &cfg)?);
    }
    for (i, w) in windows.iter_mut().enumerate() {
        w.id = i;
    }
    if windows.is_empty() {
        return Err(Error::Validation("the scenes hold no complete 20-frame windows".into()));
    }
    log::info!("training on {} windows", windows.len());
    let mut ck = match resumed {
        Some(mut ck) => {
            if ck.networks.architecture() != cfg.architecture.build() {
                return Err(Error::Validation("config architecture differs from the resumed checkpoint".into()));
            }
            ck.config = cfg.clone();
            ck
        }
        None => Checkpoint::new(Networks::new(&cfg.architecture.build(), cfg.seed)?, cfg.clone()),
    };
    if matches!(a.phase, Phase::One | Phase::All) {
        let report = train_phase1(&mut ck.networks, &windows, &cfg)?;
        log::info!("phase 1: {} epochs, converged {}", report.epochs(), report.converged);
        ck.phase1 = Some(report);
    }
    if matches!(a.phase, Phase::Two | Phase::All) {
        let report = train_phase2(&mut ck.networks, &windows, &cfg)?;
        log::info!("phase 2: {} epochs, converged {}", report.epochs(), report.converged);
        ck.phase2 = Some(report);
    }
    ck.endpoint = Some(EndpointFit::fit(&windows)?);
    ck.save(&a.out)?;
    let mut inputs = a.scenes.clone();
    inputs.extend(a.config.clone());
    inputs.extend(a.resume.clone());
    Ok(RunRecord {
        inputs,
        outputs: vec![a.out.clone()],
        seed: Some(a.seed),
        config: serde_json::to_value(&cfg)?,
    })
}

pub fn predict(a: &PredictArgs) -> Result<RunRecord> {
    let ck = Checkpoint::load(&a.model)?;
    let scene = Scene::load(&a.scene)?;
    let mut model = ck.model();
    if a.mode == PredictMode::Deterministic {
        model.dynamics.factors.aleatoric = false;
        model.dynamics.factors.epistemic = false;
    }
    let goal_mode = GoalMode::parse(&a.goal_mode)?;
    let source = GoalSource {
        file: match (&a.goals_file, goal_mode) {
            (Some(p), _) => Some(read_goals(p)?),
            (None, GoalMode::File) => return Err(Error::Usage("--goal-mode file needs --goals-file".into())),
            (None, _) => None,
        },
        endpoint: ck.endpoint,
    };
    let mut windows = scene_windows(&scene, &ck.config)?;
    if let Some(n) = a.limit {
        windows.truncate(n);
    }
    let count = match a.mode {
        PredictMode::Standard => a.samples,
        PredictMode::Ultra => a.samples.clamp(1, ULTRA_GOALS),
        PredictMode::Deterministic => 1,
    };
    let mut sets = Vec::with_capacity(windows.len());
    for w in &windows {
        let goals = source.goals(goal_mode, w, count, a.seed)?;
        sets.push(match a.mode {
            PredictMode::Ultra => predict_ultra(&model, w, &goals, a.positions, goal_mode, a.seed)?,
            _ => predict_standard(&model, w, &goals, goal_mode, a.seed)?,
        });
    }
    write_predictions(&a.out, &sets)?;
    let mut inputs = vec![a.model.clone(), a.scene.clone()];
    inputs.extend(a.goals_file.clone());
    Ok(RunRecord {
        inputs,
        outputs: vec![a.out.clone()],
        seed: Some(a.seed),
        config: json!({
            "mode": a.mode.name(),
            "samples": count,
            "positions": if a.mode == PredictMode::Ultra { a.positions } else { 1 },
            "goal_mode": goal_mode.name(),
            "limit": a.limit,
        }),
    })
}

/// First sample of each prediction set on the scene's frame grid.
fn predicted_trajectories(sets: &[PredictionSet], windows: &[Window], scene: &Scene, world: bool) -> Result<Trajectories> {
    let mut t = Trajectories::new(scene.dt);
    for p in sets {
        let w = windows
            .get(p.window_id)
            .ok_or_else(|| Error::Lookup(format!("prediction for unknown window {}", p.window_id)))?;
        let first = w.start_frame / scene.frame_step + OBS_LEN as i64;
        for (k, pos) in p.trajectories().first().into_iter().flatten().enumerate() {
            let pos = if world { scene.homography.pixel_to_world(*pos)? } else { *pos };
            t.push(p.agent_id, first + k as i64, pos);
        }
    }
    Ok(t)
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<RunRecord> {
    let scene = Scene::load(&a.scene)?;
    let preds = read_predictions(&a.pred)?;
    let windows = window_scene_with(
        &scene,
        &WindowOptions {
            stride: a.stride,
            ..Default::default()
        },
    )?;
    for p in &preds {
        match windows.get(p.window_id) {
            Some(w) if w.agent_id == p.agent_id => {}
            _ => {
                return Err(Error::Validation(format!(
                    "prediction window {} (agent {}) does not match the scene windows; check --stride",
                    p.window_id, p.agent_id
                )))
            }
        }
    }
    let metrics: Vec<&str> = a.metrics.split(',').map(str::trim).filter(|m| !m.is_empty()).collect();
    if let Some(bad) = metrics.iter().find(|m| !["ade", "fde", "collision"].contains(m)) {
        return Err(Error::Usage(format!("unknown metric {bad:?} (expected ade, fde, collision)")));
    }
    let homography = a.world.then_some(&scene.homography);
    let mut out = serde_json::Map::new();
    out.insert("world".into(), json!(a.world));
    if metrics.iter().any(|m| *m == "ade" || *m == "fde") {
        let report = evaluate(&preds, &windows, homography)?;
        out.insert("windows".into(), json!(report.windows));
        if metrics.contains(&"ade") {
            out.insert("ade".into(), json!(report.ade));
        }
        if metrics.contains(&"fde") {
            out.insert("fde".into(), json!(report.fde));
        }
        out.insert("per_window".into(), serde_json::to_value(&report.per_window)?);
    }
    if metrics.contains(&"collision") {
        let radius = a.radius.unwrap_or(if a.world { DEFAULT_RADIUS_M } else { DEFAULT_RADIUS_PX });
        let traj = predicted_trajectories(&preds, &windows, &scene, a.world)?;
        let end = traj.tracks.values().flat_map(|t| t.keys()).max().copied().unwrap_or(0) as f64 * scene.dt;
        let intervals = match &a.intervals {
            Some(text) => parse_intervals(text)?,
            None => vec![[0.0, end.max(0.0)]],
        };
        let report: CollisionReport = collision_stats(&traj, radius, &intervals)?;
        out.insert("collision".into(), serde_json::to_value(&report)?);
    }
    write_json(&a.out, &out)?;
    Ok(RunRecord {
        inputs: vec![a.pred.clone(), a.scene.clone()],
        outputs: vec![a.out.clone()],
        seed: None,
        config: json!({ "metrics": metrics, "world": a.world, "radius": a.radius, "stride": a.stride }),
    })
}

pub fn simulate_cmd(a: &SimulateArgs) -> Result<RunRecord> {
    let ck = Checkpoint::load(&a.model)?;
    let model: Model = ck.model();
    let scene = a.scene.as_ref().map(Scene::load).transpose()?;
    let mut cfg = SimConfig {
        hnp: a.hnp,
        duration: a.duration,
        intervals: parse_intervals(&a.intervals)?,
        radius: a.radius,
        spawn_interval: a.spawn_interval,
        preferred_speed: a.speed,
        ..Default::default()
    };
    if let Some(s) = &scene {
        if s.bounds.width() > 0.0 && s.bounds.height() > 0.0 {
            cfg.bounds = s.bounds;
        }
        cfg.obstacles = s.obstacles.clone();
    }
    cfg.validate()?;
    let out = simulate(&model, &cfg, a.seed)?;
    log::info!("spawned {}, skipped {}", out.spawned, out.skipped);
    let report = collision_stats(&out.trajectories, cfg.radius, &cfg.intervals)?;
    let homography = scene.as_ref().map(|s| s.homography).unwrap_or_else(Homography::identity);
    write_trajectories(&a.out, &out.trajectories.records(), &homography)?;
    let report_path = a.report.clone().unwrap_or_else(|| with_suffix(&a.out, ".collisions.json"));
    write_json(&report_path, &report)?;
    let mut inputs = vec![a.model.clone()];
    inputs.extend(a.scene.clone());
    Ok(RunRecord {
        inputs,
        outputs: vec![a.out.clone(), report_path],
        seed: Some(a.seed),
        config: serde_json::to_value(&cfg)?,
    })
}

fn parse_extent(text: &str) -> Result<ExtentRule> {
    if let Some(n) = text.strip_prefix("std:") {
        let n: f64 = n
            .parse()
            .map_err(|_| Error::Usage(format!("invalid extent {text:?}")))?;
        return Ok(ExtentRule::Std(n));
    }
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("invalid extent {text:?}")))?;
    match v[..] {
        [x0, x1, y0, y1] => Ok(ExtentRule::Fixed(Extent { x: [x0, x1], y: [y0, y1] })),
        _ => Err(Error::Usage(format!("extent needs std:N or x0,x1,y0,y1, got {text:?}"))),
    }
}

pub fn explain_cmd(a: &ExplainArgs) -> Result<RunRecord> {
    let ck = Checkpoint::load(&a.model)?;
    let scene = Scene::load(&a.scene)?;
    let windows = scene_windows(&scene, &ck.config)?;
    let w = windows
        .get(a.window)
        .ok_or_else(|| Error::Lookup(format!("scene has {} windows, no window {}", windows.len(), a.window)))?;
    let rule = parse_extent(&a.extent)?;
    let ex = explain(&ck.model(), w, w.destination, a.grid, &rule)?;
    write_json(&a.out, &ex)?;
    Ok(RunRecord {
        inputs: vec![a.model.clone(), a.scene.clone()],
        outputs: vec![a.out.clone()],
        seed: None,
        config: json!({ "window": a.window, "grid": a.grid, "extent": a.extent }),
    })
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
