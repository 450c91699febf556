//! Experiment configuration: one TOML file, every key optional, unknown keys
//! rejected. Command-line flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use widthlab_core::certlab::SUITES;
use widthlab_core::dirichlet::SolverSettings;
use widthlab_core::dmap::Domain;
use widthlab_core::manifold::{EmbeddedManifold, ManifoldKind};
use widthlab_core::sweepout::{TightenSettings, DEFAULT_SLICES};

/// Environment variable that may override the output directory.
pub const OUT_ENV: &str = "WIDTHLAB_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub manifold: ManifoldKind,
    pub grid: GridConfig,
    pub solver: SolverSettings,
    pub tighten: TightenSettings,
    pub width: WidthConfig,
    pub verify: VerifyConfig,
    pub bubble: BubbleConfig,
    pub ricci: RicciConfig,
    pub calibrate: CalibrateConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 7,
            output: None,
            manifold: ManifoldKind::RoundSphere { dim: 3, radius: 1.0 },
            grid: GridConfig::default(),
            solver: SolverSettings::default(),
            tighten: TightenSettings::default(),
            width: WidthConfig::default(),
            verify: VerifyConfig::default(),
            bubble: BubbleConfig::default(),
            ricci: RicciConfig::default(),
            calibrate: CalibrateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Nodes per chart side of the sphere mesh.
    pub n: usize,
    /// Parameter intervals of a sweepout.
    pub slices: usize,
    /// Vertices per curve in curve mode.
    pub curve_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 129, slices: DEFAULT_SLICES, curve_points: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WidthConfig {
    pub fixture: String,
    /// Curve mode: number of Birkhoff arcs.
    pub arcs: usize,
}

impl Default for WidthConfig {
    fn default() -> Self {
        Self { fixture: "perturbed-latitude-s3".into(), arcs: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Suites run by `verify all`.
    pub suites: Vec<String>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { suites: SUITES.iter().map(|s| s.to_string()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BubbleConfig {
    pub js: Vec<u32>,
}

impl Default for BubbleConfig {
    fn default() -> Self {
        Self { js: vec![1, 2, 4, 8] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RicciConfig {
    pub r0: f64,
    pub dt: f64,
    /// The free constant of the integrated width bound.
    pub c: f64,
}

impl Default for RicciConfig {
    fn default() -> Self {
        Self { r0: 1.0, dt: 1e-4, c: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateConfig {
    pub n: usize,
    pub energies: Vec<f64>,
    pub bases: usize,
    pub bumps: usize,
    pub margin: f64,
    pub ells: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub eps2: Vec<f64>,
    pub delta: f64,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            n: 33,
            energies: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            bases: 2,
            bumps: 2,
            margin: 10.0,
            ells: vec![1.0, 2.0],
            amplitudes: vec![0.05, 0.2, 0.4],
            eps2: vec![0.0625, 0.125, 0.25, 0.5, 1.0],
            delta: 0.05,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(p) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))
    }

    /// Checks every key before any computation starts.
    pub fn validate(&self) -> Result<(), String> {
        EmbeddedManifold::new(self.manifold.clone()).map_err(|e| format!("manifold: {e}"))?;
        self.solver.validate().map_err(|e| format!("solver: {e}"))?;
        self.tighten.validate().map_err(|e| format!("tighten: {e}"))?;
        Domain::sphere(self.grid.n).map_err(|e| format!("grid.n: {e}"))?;
        if self.grid.slices < 2 {
            return Err("grid.slices must be at least 2".into());
        }
        for s in &self.verify.suites {
            if !SUITES.contains(&s.as_str()) {
                return Err(format!("verify.suites: unknown suite {s:?} (known: {})", SUITES.join(", ")));
            }
        }
        if self.bubble.js.is_empty() || self.bubble.js.contains(&0) {
            return Err("bubble.js must be non-empty and positive".into());
        }
        let r = &self.ricci;
        if !(r.r0 > 0.0) || !(r.dt > 0.0) || !(r.c > 0.0) {
            return Err(format!("ricci: r0, dt and c must be positive (r0={}, dt={}, c={})", r.r0, r.dt, r.c));
        }
        let c = &self.calibrate;
        Domain::sphere(c.n).map_err(|e| format!("calibrate.n: {e}"))?;
        if c.energies.iter().any(|e| !(*e > 0.0)) || c.ells.iter().any(|l| !(*l > 0.0)) || !(c.margin > 0.0) || !(c.delta > 0.0) {
            return Err("calibrate: energies, ells, margin and delta must be positive".into());
        }
        Ok(())
    }

    /// Sphere fixtures are built for the unit round `S³`.
    pub fn require_unit_s3(&self) -> Result<(), String> {
        match self.manifold {
            ManifoldKind::RoundSphere { dim: 3, radius } if radius == 1.0 => Ok(()),
            _ => Err(format!("this subcommand needs manifold = unit round_sphere of dim 3, got {:?}", self.manifold)),
        }
    }

    /// Flag, then environment, then file, then `widthlab-out`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(f) = flag {
            return f.to_path_buf();
        }
        if let Some(e) = std::env::var_os(OUT_ENV) {
            return PathBuf::from(e);
        }
        self.output.clone().unwrap_or_else(|| PathBuf::from("widthlab-out"))
    }
}
