//! All learnable weights of the tracker and their weights-file mapping.

use std::path::Path;

use crate::error::{Error, Result};
use crate::measurement::{MeasNetConfig, MeasurementNets};
use crate::motion::{MotionConfig, MotionParams};
use crate::neural::io::{self, WeightsFile};
use crate::neural::{join, Parametric};
use crate::numerics::Rng;

/// Motion network plus the affinity/FPR networks.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub motion: MotionParams,
    pub meas: MeasurementNets,
}

impl NetworkParams {
    pub fn new(motion: MotionConfig, meas: MeasNetConfig, rng: &mut Rng) -> Self {
        Self {
            motion: MotionParams::new(motion, rng),
            meas: MeasurementNets::new(meas, rng),
        }
    }

    /// Linear-mode motion weights and neutral factor networks: the tracker
    /// then reproduces the model-based recursion.
    pub fn neutral(motion: MotionConfig, meas: MeasNetConfig, rng: &mut Rng) -> Self {
        Self {
            motion: MotionParams::linear_mode(motion, rng),
            meas: MeasurementNets::neutral(meas, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            motion: self.motion.zeros_like(),
            meas: self.meas.zeros_like(),
        }
    }

    pub fn to_file(&self) -> WeightsFile {
        let m = &self.motion.config;
        let n = &self.meas.config;
        let float = |v: f64| v.to_bits();
        let config = vec![
            ("d_h".to_string(), m.hidden_dim as u64),
            ("M".to_string(), m.max_neighbors as u64),
            ("L".to_string(), self.motion.depth() as u64),
            ("motion.dt".to_string(), float(m.dt)),
            ("motion.pos_scale".to_string(), float(m.pos_scale)),
            ("motion.vel_scale".to_string(), float(m.vel_scale)),
            ("motion.rel_pos_scale".to_string(), float(m.rel_pos_scale)),
            ("motion.out_scale.0".to_string(), float(m.out_scale[0])),
            ("motion.out_scale.1".to_string(), float(m.out_scale[1])),
            ("motion.out_scale.2".to_string(), float(m.out_scale[2])),
            ("motion.out_scale.3".to_string(), float(m.out_scale[3])),
            ("meas.roi_dim".to_string(), n.roi_dim as u64),
            ("meas.shape_dim".to_string(), n.shape_dim as u64),
            ("meas.hidden".to_string(), n.hidden as u64),
            ("meas.affinity_floor".to_string(), n.affinity_floor as u64),
            ("meas.pos_scale".to_string(), float(n.pos_scale)),
            ("meas.vel_scale".to_string(), float(n.vel_scale)),
            ("meas.size_scale".to_string(), float(n.size_scale)),
        ];
        WeightsFile {
            config,
            tensors: io::export_tensors(self),
        }
    }

    /// Rebuilds the networks described by a weights file. Floating-point
    /// configuration values are stored as IEEE-754 bit patterns.
    pub fn from_file(file: &WeightsFile) -> Result<Self> {
        let int = |k: &str| {
            file.config_value(k)
                .ok_or_else(|| Error::FormatVersionMismatch(format!("missing config key {k}")))
        };
        let float = |k: &str| int(k).map(f64::from_bits);
        let motion = MotionConfig {
            hidden_dim: int("d_h")? as usize,
            max_neighbors: int("M")? as usize,
            dt: float("motion.dt")?,
            pos_scale: float("motion.pos_scale")?,
            vel_scale: float("motion.vel_scale")?,
            rel_pos_scale: float("motion.rel_pos_scale")?,
            out_scale: [
                float("motion.out_scale.0")?,
                float("motion.out_scale.1")?,
                float("motion.out_scale.2")?,
                float("motion.out_scale.3")?,
            ],
        };
        let meas = MeasNetConfig {
            roi_dim: int("meas.roi_dim")? as usize,
            shape_dim: int("meas.shape_dim")? as usize,
            hidden: int("meas.hidden")? as usize,
            affinity_floor: int("meas.affinity_floor")? != 0,
            pos_scale: float("meas.pos_scale")?,
            vel_scale: float("meas.vel_scale")?,
            size_scale: float("meas.size_scale")?,
        };
        let mut p = Self::new(motion, meas, &mut Rng::new(0));
        if p.motion.depth() as u64 != int("L")? {
            return Err(Error::FormatVersionMismatch(
                "unsupported motion depth".into(),
            ));
        }
        io::import_tensors(&mut p, &file.tensors)?;
        Ok(p)
    }

    /// Writes the weights file and its plain-text manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, &self.to_file())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&io::read_file(path)?)
    }

    /// Loads tensors into an existing configuration; any shape difference
    /// is a [`Error::ShapeMismatch`].
    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let file = io::read_file(path)?;
        let mut staged = self.clone();
        io::import_tensors(&mut staged, &file.tensors)?;
        *self = staged;
        Ok(())
    }
}

impl Parametric for NetworkParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &[f64])) {
        self.motion.visit(&join(prefix, "motion"), f);
        self.meas.visit(&join(prefix, "meas"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &mut [f64])) {
        self.motion.visit_mut(&join(prefix, "motion"), f);
        self.meas.visit_mut(&join(prefix, "meas"), f);
    }
}
