//! Training configuration and its line-oriented `key = value` format.

use serde::{Deserialize, Serialize};

use crate::data::{DEFAULT_CONTEXT_RADIUS, DEFAULT_DT, DEFAULT_NEIGHBOR_RADIUS};
use crate::dynamics::{DynamicsConfig, Factors, DEFAULT_COLLISION_RANGE, DEFAULT_INPUT_SCALE};
use crate::error::{Error, Result};
use crate::losses::{PriorSpec, Priors};
use crate::networks::Architecture;

pub const PHASE1_LR_RANGE: (f64, f64) = (3e-6, 3e-5);
pub const PHASE2_LR_RANGE: (f64, f64) = (1e-7, 1e-6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureKind {
    Full,
    Compact,
}

impl ArchitectureKind {
    pub fn build(&self) -> Architecture {
        match self {
            ArchitectureKind::Full => Architecture::default(),
            ArchitectureKind::Compact => Architecture::compact(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub architecture: ArchitectureKind,
    pub lr_goal: f64,
    pub lr_collision: f64,
    pub lr_cvae: f64,
    /// Allows learning rates outside the validated ranges.
    pub lr_override: bool,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub batch_size: usize,
    pub mc_samples: usize,
    pub lambda: f64,
    pub priors: Priors,
    /// Relative loss change that counts as converged.
    pub tolerance: f64,
    /// Epoch span over which the change is measured.
    pub patience: usize,
    pub window_stride: usize,
    pub context_radius: f64,
    pub dynamics: DynamicsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            architecture: ArchitectureKind::Full,
            lr_goal: 1e-5,
            lr_collision: 1e-5,
            lr_cvae: 5e-7,
            lr_override: false,
            epochs_phase1: 100,
            epochs_phase2: 100,
            batch_size: 32,
            mc_samples: 1,
            lambda: 1.0,
            priors: Priors::default(),
            tolerance: 1e-4,
            patience: 5,
            window_stride: 1,
            context_radius: DEFAULT_CONTEXT_RADIUS,
            dynamics: DynamicsConfig {
                dt: DEFAULT_DT,
                collision_range: DEFAULT_COLLISION_RANGE,
                neighbor_radius: DEFAULT_NEIGHBOR_RADIUS,
                obstacle_radius: DEFAULT_NEIGHBOR_RADIUS,
                fov: None,
                input_scale: DEFAULT_INPUT_SCALE,
                factors: Factors::default(),
            },
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "architecture",
    "lr_goal",
    "lr_collision",
    "lr_cvae",
    "lr_override",
    "epochs_phase1",
    "epochs_phase2",
    "batch_size",
    "mc_samples",
    "lambda",
    "prior_goal_mean",
    "prior_goal_std",
    "prior_collision_mean",
    "prior_collision_std",
    "prior_env_mean",
    "prior_env_std",
    "tolerance",
    "patience",
    "window_stride",
    "context_radius",
    "dt",
    "collision_range",
    "neighbor_radius",
    "obstacle_radius",
    "fov",
    "input_scale",
    "goal",
    "collision",
    "environment",
    "aleatoric",
    "epistemic",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Validation(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Validation(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.dynamics;
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "architecture" => {
                self.architecture = match value {
                    "full" => ArchitectureKind::Full,
                    "compact" => ArchitectureKind::Compact,
                    _ => return Err(Error::Validation(format!("unknown architecture {value:?}"))),
                }
            }
            "lr_goal" => self.lr_goal = parse_num(key, value)?,
            "lr_collision" => self.lr_collision = parse_num(key, value)?,
            "lr_cvae" => self.lr_cvae = parse_num(key, value)?,
            "lr_override" => self.lr_override = parse_bool(key, value)?,
            "epochs_phase1" => self.epochs_phase1 = parse_num(key, value)?,
            "epochs_phase2" => self.epochs_phase2 = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "mc_samples" => self.mc_samples = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "prior_goal_mean" => self.priors.goal.mean = parse_num(key, value)?,
            "prior_goal_std" => self.priors.goal.std = parse_num(key, value)?,
            "prior_collision_mean" => self.priors.collision.mean = parse_num(key, value)?,
            "prior_collision_std" => self.priors.collision.std = parse_num(key, value)?,
            "prior_env_mean" => self.priors.environment.mean = parse_num(key, value)?,
            "prior_env_std" => self.priors.environment.std = parse_num(key, value)?,
            "tolerance" => self.tolerance = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "window_stride" => self.window_stride = parse_num(key, value)?,
            "context_radius" => self.context_radius = parse_num(key, value)?,
            "dt" => d.dt = parse_num(key, value)?,
            "collision_range" => d.collision_range = parse_num(key, value)?,
            "neighbor_radius" => d.neighbor_radius = parse_num(key, value)?,
            "obstacle_radius" => d.obstacle_radius = parse_num(key, value)?,
            "fov" => {
                d.fov = match value {
                    "none" | "off" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "input_scale" => d.input_scale = parse_num(key, value)?,
            "goal" => d.factors.goal = parse_bool(key, value)?,
            "collision" => d.factors.collision = parse_bool(key, value)?,
            "environment" => d.factors.environment = parse_bool(key, value)?,
            "aleatoric" => d.factors.aleatoric = parse_bool(key, value)?,
            "epistemic" => d.factors.epistemic = parse_bool(key, value)?,
            _ => return Err(Error::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: "config".into(),
                    line: i + 1,
                    message: format!("expected `key = value`, got {line:?}"),
                });
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let d = &self.dynamics;
        let f = &d.factors;
        let arch = match self.architecture {
            ArchitectureKind::Full => "full",
            ArchitectureKind::Compact => "compact",
        };
        let fov = d.fov.map_or("none".to_string(), |v| v.to_string());
        let rows: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("architecture", arch.into()),
            ("lr_goal", self.lr_goal.to_string()),
            ("lr_collision", self.lr_collision.to_string()),
            ("lr_cvae", self.lr_cvae.to_string()),
            ("lr_override", self.lr_override.to_string()),
            ("epochs_phase1", self.epochs_phase1.to_string()),
            ("epochs_phase2", self.epochs_phase2.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("mc_samples", self.mc_samples.to_string()),
            ("lambda", self.lambda.to_string()),
            ("prior_goal_mean", self.priors.goal.mean.to_string()),
            ("prior_goal_std", self.priors.goal.std.to_string()),
            ("prior_collision_mean", self.priors.collision.mean.to_string()),
            ("prior_collision_std", self.priors.collision.std.to_string()),
            ("prior_env_mean", self.priors.environment.mean.to_string()),
            ("prior_env_std", self.priors.environment.std.to_string()),
            ("tolerance", self.tolerance.to_string()),
            ("patience", self.patience.to_string()),
            ("window_stride", self.window_stride.to_string()),
            ("context_radius", self.context_radius.to_string()),
            ("dt", d.dt.to_string()),
            ("collision_range", d.collision_range.to_string()),
            ("neighbor_radius", d.neighbor_radius.to_string()),
            ("obstacle_radius", d.obstacle_radius.to_string()),
            ("fov", fov),
            ("input_scale", d.input_scale.to_string()),
            ("goal", f.goal.to_string()),
            ("collision", f.collision.to_string()),
            ("environment", f.environment.to_string()),
            ("aleatoric", f.aleatoric.to_string()),
            ("epistemic", f.epistemic.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        self.priors.validate().map_err(|e| Error::Validation(e.to_string()))?;
        if self.batch_size == 0 || self.mc_samples == 0 || self.window_stride == 0 || self.patience == 0 {
            return Err(Error::Validation(
                "batch_size, mc_samples, window_stride and patience must be at least 1".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Validation("lambda must be non-negative".into()));
        }
        if !(self.tolerance >= 0.0) || !(self.context_radius >= 0.0) {
            return Err(Error::Validation("tolerance and context_radius must be non-negative".into()));
        }
        for (name, lr) in [("lr_goal", self.lr_goal), ("lr_collision", self.lr_collision), ("lr_cvae", self.lr_cvae)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Validation(format!("{name} must be a non-negative number")));
            }
        }
        if !self.lr_override {
            let within = |lr: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&lr);
            if !within(self.lr_goal, PHASE1_LR_RANGE) || !within(self.lr_collision, PHASE1_LR_RANGE) {
                return Err(Error::Validation(format!(
                    "phase-1 learning rates must lie in [{}, {}] unless lr_override is set",
                    PHASE1_LR_RANGE.0, PHASE1_LR_RANGE.1
                )));
            }
            if !within(self.lr_cvae, PHASE2_LR_RANGE) {
                return Err(Error::Validation(format!(
                    "phase-2 learning rate must lie in [{}, {}] unless lr_override is set",
                    PHASE2_LR_RANGE.0, PHASE2_LR_RANGE.1
                )));
            }
        }
        Ok(())
    }

    pub fn with_prior(mut self, which: &str, prior: PriorSpec) -> Self {
        match which {
            "goal" => self.priors.goal = prior,
            "collision" => self.priors.collision = prior,
            _ => self.priors.environment = prior,
        }
        self
    }
}
