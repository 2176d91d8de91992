//! JSON checkpoints: architecture, training config, phase reports and
//! named parameter arrays.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::forecast::EndpointFit;
use crate::io;
use crate::model::Model;
use crate::networks::{Architecture, Networks};
use crate::nn::params::Parameters;
use crate::training::PhaseReport;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub networks: Networks,
    pub config: TrainConfig,
    pub phase1: Option<PhaseReport>,
    pub phase2: Option<PhaseReport>,
    pub endpoint: Option<EndpointFit>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    architecture: Architecture,
    config: TrainConfig,
    phase1: Option<PhaseReport>,
    phase2: Option<PhaseReport>,
    endpoint: Option<EndpointFit>,
    parameters: BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<u32>,
}

impl Checkpoint {
    pub fn new(networks: Networks, config: TrainConfig) -> Self {
        Checkpoint {
            networks,
            config,
            phase1: None,
            phase2: None,
            endpoint: None,
        }
    }

    pub fn model(&self) -> Model {
        Model {
            networks: self.networks.clone(),
            dynamics: self.config.dynamics,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        if !self.networks.all_finite() {
            return Err(Error::numeric("refusing to write non-finite parameters"));
        }
        let parameters = self
            .networks
            .named_tensors("")
            .into_iter()
            .map(|(name, t)| (name, t.to_vec()))
            .collect();
        let file = CheckpointFile {
            format_version: FORMAT_VERSION,
            architecture: self.networks.architecture(),
            config: self.config.clone(),
            phase1: self.phase1.clone(),
            phase2: self.phase2.clone(),
            endpoint: self.endpoint,
            parameters,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let parse_err = |e: serde_json::Error| Error::Parse {
            path: source.into(),
            line: e.line(),
            message: e.to_string(),
        };
        let probe: VersionProbe = serde_json::from_str(text).map_err(parse_err)?;
        match probe.format_version {
            Some(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Incompatible {
                    found: v,
                    expected: FORMAT_VERSION,
                })
            }
            None => {
                return Err(Error::Parse {
                    path: source.into(),
                    line: 1,
                    message: "missing format_version".into(),
                })
            }
        }
        let mut file: CheckpointFile = serde_json::from_str(text).map_err(parse_err)?;
        file.config.validate()?;
        let mut networks = Networks::new(&file.architecture, 0)?;
        let mut missing = Vec::new();
        let mut wrong = Vec::new();
        networks.visit_mut("", &mut |name, dst| match file.parameters.remove(&name) {
            Some(src) if src.len() == dst.len() => dst.copy_from_slice(&src),
            Some(src) => wrong.push(format!("{name} ({} values, expected {})", src.len(), dst.len())),
            None => missing.push(name),
        });
        if !missing.is_empty() || !wrong.is_empty() || !file.parameters.is_empty() {
            let extra: Vec<&String> = file.parameters.keys().collect();
            return Err(Error::Validation(format!(
                "checkpoint tensors do not match the architecture: missing {missing:?}, wrong size {wrong:?}, unexpected {extra:?}"
            )));
        }
        if !networks.all_finite() {
            return Err(Error::numeric("checkpoint holds non-finite parameters"));
        }
        Ok(Checkpoint {
            networks,
            config: file.config,
            phase1: file.phase1,
            phase2: file.phase2,
            endpoint: file.endpoint,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&io::read_text(path)?, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ArchitectureKind;
    use crate::data::{AgentState, Window};
    use crate::nn::params::bit_identical;
    use crate::rollout::rollout_window;
    use crate::dynamics::SamplingMode;
    use crate::Vec2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_checkpoint() -> Checkpoint {
        let cfg = TrainConfig {
            architecture: ArchitectureKind::Compact,
            seed: 3,
            ..Default::default()
        };
        let mut nets = Networks::new(&cfg.architecture.build(), 8).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        nets.visit_mut("", &mut |_, s| s.iter_mut().for_each(|v| *v += r.random_range(-1e-3..1e-3) / 7.0));
        nets.env.mean = 0.1 + 0.2;
        let mut ck = Checkpoint::new(nets, cfg);
        ck.phase1 = Some(PhaseReport {
            losses: vec![3.25, 1.0 / 3.0],
            converged: false,
        });
        ck.endpoint = Some(EndpointFit {
            mean: [1.0 / 7.0, -2.5],
            std: [0.3, 0.0],
        });
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert!(bit_identical(&back.networks, &ck.networks));
        assert_eq!(back, ck);
        assert_eq!(back.to_json().unwrap(), ck.to_json().unwrap());

        let v = Vec2::new(7.0, 1.0);
        let observed: Vec<AgentState> = (0..8).map(|t| AgentState::new(v * (0.4 * t as f64), v)).collect();
        let future = (1..=12).map(|t| observed[7].position + v * (0.4 * t as f64)).collect();
        let w = Window::isolated(0, observed, future);
        let run = |m: &Model| {
            rollout_window(m, &w, w.destination, SamplingMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(2))
                .unwrap()
                .positions
        };
        assert_eq!(run(&ck.model()), run(&back.model()));
    }

    #[test]
    fn tensor_paths_are_grouped() {
        let json = sample_checkpoint().to_json().unwrap();
        for prefix in ["\"gn/", "\"cn/", "\"env/mean\"", "\"cvae/"] {
            assert!(json.contains(prefix), "{prefix}");
        }
    }

    #[test]
    fn corrupted_file_is_a_parse_error() {
        let json = sample_checkpoint().to_json().unwrap();
        let cut = &json[..json.len() / 2];
        assert!(matches!(Checkpoint::from_json(cut, "x"), Err(Error::Parse { .. })));
        assert!(matches!(Checkpoint::from_json("{}", "x"), Err(Error::Parse { .. })));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, cut).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn other_format_version_is_rejected() {
        let json = sample_checkpoint().to_json().unwrap();
        let old = json.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        assert!(matches!(Checkpoint::from_json(&old, "x"), Err(Error::Incompatible { .. })));
    }

    #[test]
    fn missing_tensor_is_rejected() {
        let json = sample_checkpoint().to_json().unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["parameters"].as_object_mut().unwrap().remove("env/log_std");
        let text = serde_json::to_string(&v).unwrap();
        assert!(matches!(Checkpoint::from_json(&text, "x"), Err(Error::Validation(_))));
    }
}
