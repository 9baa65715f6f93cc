//! Run configuration: one JSON document holding every tunable of a run.

use std::path::{Path, PathBuf};

use netrack_core::{
    Error as CoreError, MeasNetConfig, MotionConfig, ScenarioConfig, TrackerConfig, TrackerMode,
    TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub motion: MotionConfig,
    pub meas: MeasNetConfig,
}

/// Default locations used when the matching flag is absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub scenes: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Scenario, tracker, network and training settings plus seed and mode.
/// Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Tracker variant; overrides `tracker.mode`, which may not be set.
    pub mode: TrackerMode,
    /// Copy the sensor and clutter parameters of the tracker (`dt`, `p_d`,
    /// `mu_fp`, noise levels, region, velocity box) from each scene's
    /// scenario.
    pub model_from_scene: bool,
    pub scenario: ScenarioConfig,
    pub tracker: TrackerConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: TrackerMode::Mb,
            model_from_scene: true,
            scenario: ScenarioConfig::default(),
            tracker: TrackerConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Core(CoreError::config(field, reason))
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| invalid("config", e.to_string()))?;
        if value.pointer("/tracker/mode").is_some() {
            return Err(invalid("tracker.mode", "set the top-level mode instead"));
        }
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.scenario.validate()?;
        self.tracker_config(&self.scenario).validate()?;
        self.train.validate()?;
        let m = &self.network.motion;
        if m.hidden_dim == 0 || m.max_neighbors == 0 {
            return Err(invalid(
                "network.motion",
                "hidden_dim and max_neighbors must be positive",
            ));
        }
        let n = &self.network.meas;
        if n.roi_dim != 5 * self.scenario.map_channels {
            return Err(invalid(
                "network.meas.roi_dim",
                format!(
                    "must be 5 x map_channels = {}",
                    5 * self.scenario.map_channels
                ),
            ));
        }
        Ok(())
    }

    /// Tracker settings for a scene generated with `scenario`.
    pub fn tracker_config(&self, scenario: &ScenarioConfig) -> TrackerConfig {
        let mut t = TrackerConfig {
            mode: self.mode,
            ..self.tracker.clone()
        };
        if self.model_from_scene {
            t.dt = scenario.dt;
            t.p_d = scenario.p_d;
            t.mu_fp = scenario.mu_fp;
            t.sigma_pos = scenario.sigma_pos;
            t.sigma_vel = scenario.sigma_vel;
            t.region = scenario.region;
            t.v_max = scenario.clutter_v_max;
        }
        t
    }

    /// Motion configuration with the time step of `scenario`.
    pub fn motion_config(&self, scenario: &ScenarioConfig) -> MotionConfig {
        MotionConfig {
            dt: if self.model_from_scene {
                scenario.dt
            } else {
                self.network.motion.dt
            },
            ..self.network.motion
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            r#"{"sed": 1}"#,
            r#"{"scenario": {"dtt": 0.5}}"#,
            r#"{"tracker": {"mode": "ne"}}"#,
        ] {
            let err = RunConfig::from_json(doc).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{doc}: {err}");
        }
    }

    #[test]
    fn invalid_dt_names_the_field() {
        let err = RunConfig::from_json(r#"{"scenario": {"dt": 0.0}}"#).unwrap_err();
        assert!(
            matches!(&err, CliError::Core(CoreError::ConfigInvalid { field, .. }) if field == "dt"),
            "{err}"
        );
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg =
            RunConfig::from_json(r#"{"seed": 4, "mode": "ne-meas", "scenario": {"mu_fp": 5.0}}"#)
                .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.mode, TrackerMode::NeMeas);
        assert_eq!(cfg.scenario.mu_fp, 5.0);
        assert_eq!(cfg.scenario.dt, ScenarioConfig::default().dt);
        let t = cfg.tracker_config(&cfg.scenario);
        assert_eq!((t.mode, t.mu_fp), (TrackerMode::NeMeas, 5.0));
    }
}
