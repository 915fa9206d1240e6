//! Run configuration: ingestion from TOML or JSON, validation, and the
//! canonical digest that stamps every artifact produced from it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config field `{field}`: {msg}")]
    Invalid { field: &'static str, msg: String },
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    pub state_dim: usize,
    pub input_dim: usize,
    /// Plant components over variables x1..x{state_dim+input_dim}; the
    /// trailing variables are the inputs.
    pub plant: Vec<String>,
    /// Controller components over the state variables.
    pub controller: Vec<String>,
    /// Full squared coefficient multiplying |state|^2 in the triggering
    /// function.
    pub sigma_sq: f64,
    /// Expected homogeneity degree of the closed loop (validated).
    pub alpha: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConesConfig {
    #[serde(default)]
    pub count: Option<usize>,
    /// Explicit half-space matrices, one per cone, for dimensions beyond the
    /// planar generator.
    #[serde(default)]
    pub matrices: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaConfig {
    pub p: usize,
    pub d: f64,
    pub z_radius: f64,
    pub epsilon: f64,
    #[serde(default = "default_lp_samples")]
    pub lp_samples: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_coeff_cap_ratio")]
    pub coeff_cap_ratio: f64,
    #[serde(default = "default_max_boxes")]
    pub max_boxes: usize,
}

fn default_lp_samples() -> usize {
    4096
}
fn default_max_rounds() -> usize {
    8
}
fn default_coeff_cap_ratio() -> f64 {
    2.0
}
fn default_max_boxes() -> usize {
    600_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsochronConfig {
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverapproxConfig {
    /// Absolute bisection tolerance for the certified radii.
    pub tol: f64,
    #[serde(default = "default_seed_directions")]
    pub seed_directions: usize,
    #[serde(default)]
    pub emit_smtlib: bool,
}

fn default_seed_directions() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachConfig {
    #[serde(default = "default_grid_radial")]
    pub grid_radial: usize,
    #[serde(default = "default_grid_angular")]
    pub grid_angular: usize,
    #[serde(default = "default_growth_cap")]
    pub growth_cap: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_diameter_cap")]
    pub diameter_cap: f64,
    /// Line-search ceiling as a multiple of each region's lower bound.
    #[serde(default = "default_line_search_cap")]
    pub line_search_cap_factor: f64,
    /// Compute upper bounds and transitions for the outermost band only and
    /// scale to the others (valid for geometric time grids).
    #[serde(default)]
    pub use_scaling_shortcut: bool,
}

fn default_grid_radial() -> usize {
    8
}
fn default_grid_angular() -> usize {
    16
}
fn default_growth_cap() -> f64 {
    0.02
}
fn default_max_steps() -> usize {
    20_000
}
fn default_diameter_cap() -> f64 {
    50.0
}
fn default_line_search_cap() -> f64 {
    20.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapsConfig {
    /// Innermost-band cap as a multiple of the median upper bound of the
    /// band just outside it.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Per-cone overrides for the innermost band, keyed by cone index.
    #[serde(default)]
    pub explicit: Option<BTreeMap<String, f64>>,
}

fn default_kappa() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub system: SystemConfig,
    /// Sorted inter-event lower bounds, one per band.
    pub times: Vec<f64>,
    pub cones: ConesConfig,
    pub delta: DeltaConfig,
    pub isochron: IsochronConfig,
    pub overapprox: OverapproxConfig,
    #[serde(default = "default_reach")]
    pub reach: ReachConfig,
    #[serde(default = "default_caps")]
    pub caps: CapsConfig,
}

fn default_reach() -> ReachConfig {
    ReachConfig {
        grid_radial: default_grid_radial(),
        grid_angular: default_grid_angular(),
        growth_cap: default_growth_cap(),
        max_steps: default_max_steps(),
        diameter_cap: default_diameter_cap(),
        line_search_cap_factor: default_line_search_cap(),
        use_scaling_shortcut: false,
    }
}

fn default_caps() -> CapsConfig {
    CapsConfig {
        kappa: default_kappa(),
        explicit: None,
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.system.state_dim == 0 {
            return Err(invalid("system.state_dim", "must be positive"));
        }
        if self.system.plant.len() != self.system.state_dim {
            return Err(invalid(
                "system.plant",
                "one component per state dimension required",
            ));
        }
        if self.system.controller.len() != self.system.input_dim {
            return Err(invalid(
                "system.controller",
                "one component per input dimension required",
            ));
        }
        if self.system.sigma_sq <= 0.0 {
            return Err(invalid("system.sigma_sq", "must be positive"));
        }
        if self.times.is_empty() {
            return Err(invalid("times", "need at least one lower bound"));
        }
        if self.times[0] <= 0.0 || self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("times", "must be strictly increasing and positive"));
        }
        match (&self.cones.count, &self.cones.matrices) {
            (Some(m), _) if *m < 2 => return Err(invalid("cones.count", "need at least 2")),
            (None, None) => {
                return Err(invalid("cones", "either `count` or `matrices` is required"))
            }
            _ => {}
        }
        if self.delta.p == 0 {
            return Err(invalid("delta.p", "order must be >= 1"));
        }
        for (field, v) in [
            ("delta.d", self.delta.d),
            ("delta.z_radius", self.delta.z_radius),
            ("delta.epsilon", self.delta.epsilon),
            ("isochron.rho", self.isochron.rho),
            ("overapprox.tol", self.overapprox.tol),
            ("reach.growth_cap", self.reach.growth_cap),
            ("caps.kappa", self.caps.kappa),
        ] {
            if v <= 0.0 {
                return Err(invalid(
                    match field {
                        "delta.d" => "delta.d",
                        "delta.z_radius" => "delta.z_radius",
                        "delta.epsilon" => "delta.epsilon",
                        "isochron.rho" => "isochron.rho",
                        "overapprox.tol" => "overapprox.tol",
                        "reach.growth_cap" => "reach.growth_cap",
                        _ => "caps.kappa",
                    },
                    "must be positive",
                ));
            }
        }
        if self.isochron.rho > self.delta.z_radius {
            return Err(invalid("isochron.rho", "must not exceed delta.z_radius"));
        }
        Ok(())
    }

    /// Canonical digest of the configuration: SHA-256 of its canonical JSON
    /// form, hex encoded.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}
