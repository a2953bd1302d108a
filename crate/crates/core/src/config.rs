//! Run configuration (TOML).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::partition::ScaleSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionFamily {
    Lattice,
    Voronoi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub kind: PartitionFamily,
    /// Refinement levels `n`, strictly increasing.
    pub levels: Vec<usize>,
    #[serde(default = "defaults::mc_per_cell")]
    pub mc_per_cell: usize,
    #[serde(default = "defaults::quad_per_axis")]
    pub quad_per_axis: usize,
    /// Lattice window `[lo, hi]` for the whole space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default = "defaults::rank_tol")]
    pub rank_tol: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            rank_tol: defaults::rank_tol(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// Start point; the chain starts in the cell with the nearest centroid.
    pub start: Vec<f64>,
    /// Horizon of the recorded trajectories.
    pub horizon: f64,
    /// Number of recorded trajectories.
    #[serde(default = "defaults::trajectories")]
    pub trajectories: usize,
    /// Replicas per marginal time.
    pub replicas: usize,
    pub marginal_times: Vec<f64>,
    /// Long horizon for the stationarity check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    /// Euler step; defaults to `1e-4 · t` for each marginal time `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub replicas: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default = "defaults::yes")]
    pub consistency: bool,
    #[serde(default = "defaults::yes")]
    pub trackers: bool,
    #[serde(default = "defaults::yes")]
    pub hausdorff: bool,
    #[serde(default = "defaults::yes")]
    pub two_sample: bool,
    #[serde(default)]
    pub stationarity: bool,
    #[serde(default)]
    pub halfball: bool,
    #[serde(default)]
    pub symdiff: bool,
    #[serde(default = "defaults::permutations")]
    pub permutations: usize,
    #[serde(default = "defaults::hausdorff_pairs")]
    pub hausdorff_pairs: usize,
    #[serde(default = "defaults::halfball_samples")]
    pub halfball_samples: usize,
    /// Uniform reference samples for the stationarity check.
    #[serde(default = "defaults::uniform_samples")]
    pub uniform_samples: usize,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        toml::from_str("").expect("all diagnostics fields have defaults")
    }
}

/// Pass thresholds applied by the study stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    /// Required ratio of the consistency sup between the coarsest and finest level.
    #[serde(default = "defaults::decay_factor")]
    pub decay_factor: f64,
    /// Allowed max/min ratio of the fitted interior constant across levels.
    #[serde(default = "defaults::two")]
    pub constant_spread: f64,
    /// Allowed growth of the bound trackers across levels.
    #[serde(default = "defaults::two")]
    pub tracker_growth: f64,
    #[serde(default = "defaults::significance")]
    pub significance: f64,
}

impl Default for StudySpec {
    fn default() -> Self {
        toml::from_str("").expect("all study fields have defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    /// Output directory, relative to the working directory.
    pub output: String,
    pub domain: Domain<f64>,
    pub partition: PartitionSpec,
    pub scales: ScaleSchedule,
    #[serde(default)]
    pub generator: GeneratorSpec,
    pub simulation: SimulationSpec,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub study: StudySpec,
}

mod defaults {
    pub fn mc_per_cell() -> usize {
        200
    }
    pub fn quad_per_axis() -> usize {
        4
    }
    pub fn rank_tol() -> f64 {
        crate::linalg::DEFAULT_RANK_TOL
    }
    pub fn trajectories() -> usize {
        10
    }
    pub fn yes() -> bool {
        true
    }
    pub fn permutations() -> usize {
        200
    }
    pub fn hausdorff_pairs() -> usize {
        200
    }
    pub fn halfball_samples() -> usize {
        100_000
    }
    pub fn uniform_samples() -> usize {
        2000
    }
    pub fn decay_factor() -> f64 {
        1.5
    }
    pub fn two() -> f64 {
        2.0
    }
    pub fn significance() -> f64 {
        0.05
    }
}

/// 1-based line of the first `key =` or `[key]` occurrence in `text`.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            t.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
                || t == format!("[{key}]")
        })
        .map(|i| i + 1)
}

impl RunConfig {
    /// Parses and validates; errors carry line numbers.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()
            .map_err(|(key, msg)| match key_line(text, key) {
                Some(line) => Error::Config(format!("line {line}: {msg}")),
                None => Error::Config(msg),
            })?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Semantic checks; the error names the offending key.
    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        self.domain
            .validate()
            .map_err(|e| ("kind", e.to_string()))?;
        let d = self.dim();
        let p = &self.partition;
        if p.levels.is_empty() {
            return Err(("levels", "partition.levels must not be empty".into()));
        }
        if p.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err((
                "levels",
                format!(
                    "partition.levels must be strictly increasing, got {:?}",
                    p.levels
                ),
            ));
        }
        if p.levels[0] == 0 {
            return Err(("levels", "partition.levels must be positive".into()));
        }
        match (p.kind, &self.domain, &p.window) {
            (PartitionFamily::Voronoi, Domain::WholeSpace { .. }, _) => {
                return Err(("kind", "Voronoi partitions need a bounded domain".into()))
            }
            (PartitionFamily::Lattice, Domain::WholeSpace { .. }, None) => {
                return Err((
                    "window",
                    "a whole-space lattice needs partition.window".into(),
                ))
            }
            (_, _, Some(w))
                if w.lo.len() != d
                    || w.hi.len() != d
                    || w.lo.iter().zip(&w.hi).any(|(l, h)| !(l < h)) =>
            {
                return Err((
                    "window",
                    "partition.window must have lo < hi in every coordinate".into(),
                ))
            }
            (PartitionFamily::Lattice, Domain::Ball { .. } | Domain::Radial { .. }, _) => {
                return Err((
                    "kind",
                    "lattice partitions support box and whole-space domains".into(),
                ))
            }
            _ => {}
        }
        if p.kind == PartitionFamily::Voronoi && p.mc_per_cell == 0 {
            return Err((
                "mc_per_cell",
                "partition.mc_per_cell must be positive".into(),
            ));
        }
        if p.quad_per_axis == 0 {
            return Err((
                "quad_per_axis",
                "partition.quad_per_axis must be positive".into(),
            ));
        }
        if let ScaleSchedule::Explicit { a, b } = &self.scales {
            if a.len() != p.levels.len() || b.len() != p.levels.len() {
                return Err((
                    "rule",
                    "explicit scale lists need one entry per level".into(),
                ));
            }
        }
        let s = &self.simulation;
        if s.start.len() != d {
            return Err((
                "start",
                format!("simulation.start must have {d} coordinates"),
            ));
        }
        if !(s.horizon > 0.0) {
            return Err(("horizon", "simulation.horizon must be positive".into()));
        }
        if s.replicas == 0 || self.reference.replicas == 0 {
            return Err(("replicas", "replica counts must be positive".into()));
        }
        if s.marginal_times.is_empty() || s.marginal_times.iter().any(|&t| !(t > 0.0)) {
            return Err((
                "marginal_times",
                "simulation.marginal_times must be non-empty and positive".into(),
            ));
        }
        if s.stationary_time.is_some_and(|t| !(t > 0.0)) {
            return Err((
                "stationary_time",
                "simulation.stationary_time must be positive".into(),
            ));
        }
        if self.reference.dt.is_some_and(|dt| !(dt > 0.0)) {
            return Err(("dt", "reference.dt must be positive".into()));
        }
        if self.diagnostics.stationarity
            && (s.stationary_time.is_none() || !self.domain.is_bounded())
        {
            return Err((
                "stationarity",
                "the stationarity check needs a bounded domain and simulation.stationary_time"
                    .into(),
            ));
        }
        if !(self.generator.rank_tol > 0.0) {
            return Err(("rank_tol", "generator.rank_tol must be positive".into()));
        }
        Ok(())
    }
}
