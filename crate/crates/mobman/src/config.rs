//! On-disk robot description loading. The robot file is JSON carrying the
//! DH table, joint limits, mount transform, per-link inertial data and the
//! actuation limits; see `robots/arm7.json` in the repository for the
//! shipped example.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicModel, LinkInertia, GRAVITY};
use crate::grid::GridMap;
use crate::kinematics::{transform_from_rpy_xyz, DhRow, JointKind, JointLimit, KinematicChain};

/// Robot/scenario file schema version this build reads and writes.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Errors raised while loading configuration files. Parse errors carry the
/// file path plus serde's line/column diagnostics.
#[derive(thiserror::Error, Debug)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("{path}: unsupported schema version {found} (this build reads {expected})")]
    Schema { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}

/// Mount transform as roll-pitch-yaw plus translation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FrameConfig {
    pub rpy: [f64; 3],
    pub xyz: [f64; 3],
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self { rpy: [0.0; 3], xyz: [0.0; 3] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DhRowConfig {
    pub d: f64,
    pub theta_offset: f64,
    pub a: f64,
    pub alpha: f64,
    pub kind: JointKind,
}

/// Per-link mass properties; `inertia` is `[ixx, iyy, izz, ixy, ixz, iyz]`
/// about the center of mass in the link frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InertialConfig {
    pub mass: f64,
    pub com: [f64; 3],
    pub inertia: [f64; 6],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub name: String,
    pub dh: Vec<DhRowConfig>,
    pub limits: Vec<[f64; 2]>,
    #[serde(default)]
    pub base_frame: FrameConfig,
    pub inertial: Vec<InertialConfig>,
    pub velocity_limits: Vec<f64>,
    pub acceleration_limits: Vec<f64>,
    pub effort_limits: Vec<f64>,
    /// World gravity; defaults to standard gravity down z.
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
}

fn default_gravity() -> [f64; 3] {
    [GRAVITY.x, GRAVITY.y, GRAVITY.z]
}

/// A fully validated robot: kinematics, dynamics and actuation limits.
#[derive(Debug, Clone)]
pub struct Robot {
    pub name: String,
    pub model: DynamicModel,
    pub velocity_limits: Vec<f64>,
    pub acceleration_limits: Vec<f64>,
    pub effort_limits: Vec<f64>,
}

impl Robot {
    pub fn chain(&self) -> &KinematicChain {
        self.model.chain()
    }

    pub fn dof(&self) -> usize {
        self.model.dof()
    }
}

impl RobotConfig {
    pub fn build(&self) -> Result<Robot, String> {
        if self.schema != CONFIG_SCHEMA_VERSION {
            return Err(format!("unsupported schema {}", self.schema));
        }
        let n = self.dh.len();
        for (what, len) in [
            ("limits", self.limits.len()),
            ("inertial", self.inertial.len()),
            ("velocity_limits", self.velocity_limits.len()),
            ("acceleration_limits", self.acceleration_limits.len()),
            ("effort_limits", self.effort_limits.len()),
        ] {
            if len != n {
                return Err(format!("{what} has {len} entries but dh has {n} rows"));
            }
        }
        let rows = self
            .dh
            .iter()
            .map(|r| DhRow { d: r.d, theta_offset: r.theta_offset, a: r.a, alpha: r.alpha, kind: r.kind })
            .collect();
        let limits = self
            .limits
            .iter()
            .map(|l| JointLimit::new(l[0], l[1]).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let base = transform_from_rpy_xyz(self.base_frame.rpy, self.base_frame.xyz);
        let chain = KinematicChain::new(rows, limits, base).map_err(|e| e.to_string())?;
        let inertias = self
            .inertial
            .iter()
            .map(|i| {
                let [ixx, iyy, izz, ixy, ixz, iyz] = i.inertia;
                let tensor = Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
                LinkInertia::new(i.mass, Vector3::from(i.com), tensor).map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()?;
        if self.velocity_limits.iter().chain(&self.acceleration_limits).any(|v| *v <= 0.0) {
            return Err("velocity/acceleration limits must be positive".into());
        }
        if self.effort_limits.iter().any(|v| *v <= 0.0) {
            return Err("effort limits must be positive".into());
        }
        let model = DynamicModel::new(chain, inertias, Vector3::from(self.gravity))
            .map_err(|e| e.to_string())?;
        Ok(Robot {
            name: self.name.clone(),
            model,
            velocity_limits: self.velocity_limits.clone(),
            acceleration_limits: self.acceleration_limits.clone(),
            effort_limits: self.effort_limits.clone(),
        })
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

/// Loads and validates a robot description file.
pub fn load_robot(path: impl AsRef<Path>) -> Result<Robot, ConfigError> {
    let path = path.as_ref();
    let text = read(path)?;
    let config: RobotConfig = serde_json::from_str(&text)
        .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), detail: e.to_string() })?;
    if config.schema != CONFIG_SCHEMA_VERSION {
        return Err(ConfigError::Schema {
            path: path.to_path_buf(),
            found: config.schema,
            expected: CONFIG_SCHEMA_VERSION,
        });
    }
    config
        .build()
        .map_err(|detail| ConfigError::Invalid { path: path.to_path_buf(), detail })
}

/// Loads an occupancy grid map file.
pub fn load_map(path: impl AsRef<Path>) -> Result<GridMap, ConfigError> {
    let path = path.as_ref();
    let text = read(path)?;
    GridMap::parse(&text)
        .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), detail: e.to_string() })
}
