//! Experiment configuration: a TOML document with sections `[grid]`,
//! `[kernel]`, `[process]`, `[dynamics]`, `[scaling]` and `[run]`.
//!
//! Every section and key is optional; defaults reproduce the acceptance
//! settings. Unknown keys are rejected and all semantic problems are reported
//! together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsKind, HopKernel, HopShape, RateModel};
use crate::error::Result;
use crate::kernel::{ConvolutionKernel, KernelShape};
use crate::scaling::{BumpProfile, CylinderFunction, Discretization, OuterFunction};
use crate::state_space::{GridSpec, MAX_CELLS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("{} invalid setting(s):\n  {}", .0.len(), .0.join("\n  "))]
    Semantic(Vec<String>),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub dimension: usize,
    pub side_length: f64,
    pub cells_per_side: usize,
    pub torus: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            dimension: 1,
            side_length: 2.0,
            cells_per_side: 16,
            torus: true,
        }
    }
}

impl GridSection {
    pub fn build(&self) -> Result<GridSpec> {
        GridSpec::new(self.dimension, self.side_length, self.cells_per_side, self.torus)
    }

    fn check(&self, prefix: &str, errors: &mut Vec<String>) {
        if !(1..=3).contains(&self.dimension) {
            errors.push(format!(
                "{prefix}.dimension = {}: build_grid requires d in 1..=3",
                self.dimension
            ));
        }
        if !(self.side_length > 0.0) || !self.side_length.is_finite() {
            errors.push(format!(
                "{prefix}.side_length = {}: build_grid requires L > 0",
                self.side_length
            ));
        }
        if self.cells_per_side == 0 {
            errors.push(format!("{prefix}.cells_per_side = 0: build_grid requires M >= 1"));
        } else if (1..=3).contains(&self.dimension)
            && (self.cells_per_side as f64).powi(self.dimension as i32) > MAX_CELLS as f64
        {
            errors.push(format!(
                "{prefix}.cells_per_side = {}: build_grid requires M^d <= {MAX_CELLS}",
                self.cells_per_side
            ));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShapeName {
    Gaussian,
    ExponentialSmoothed,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub shape: KernelShapeName,
    pub amplitude: f64,
    pub lengthscale: f64,
    /// Knot file for `shape = "table"`, relative to the config file.
    pub table: Option<PathBuf>,
    /// Knots resolved from `table` at parse time.
    #[serde(skip_deserializing)]
    pub knots: Option<Vec<(f64, f64)>>,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            shape: KernelShapeName::Gaussian,
            amplitude: 1.0,
            lengthscale: 0.3,
            table: None,
            knots: None,
        }
    }
}

impl KernelSection {
    pub fn gaussian(amplitude: f64, lengthscale: f64) -> Self {
        Self {
            amplitude,
            lengthscale,
            ..Self::default()
        }
    }

    pub fn build(&self) -> Result<ConvolutionKernel> {
        let shape = match self.shape {
            KernelShapeName::Gaussian => KernelShape::Gaussian,
            KernelShapeName::ExponentialSmoothed => KernelShape::ExponentialSmoothed,
            KernelShapeName::Table => KernelShape::Table(self.knots.clone().unwrap_or_default()),
        };
        let ls = if self.shape == KernelShapeName::Table {
            1.0
        } else {
            self.lengthscale
        };
        ConvolutionKernel::new(shape, self.amplitude, ls)
    }

    fn resolve(&mut self, prefix: &str, base: Option<&Path>, errors: &mut Vec<String>) {
        if !self.amplitude.is_finite() {
            errors.push(format!("{prefix}.amplitude must be finite"));
        }
        match self.shape {
            KernelShapeName::Table => match &self.table {
                None => errors.push(format!("{prefix}.table: shape \"table\" requires a knot file")),
                Some(p) => {
                    let path = match base {
                        Some(b) if p.is_relative() => b.join(p),
                        _ => p.clone(),
                    };
                    match std::fs::read_to_string(&path) {
                        Err(e) => errors.push(format!("{prefix}.table: cannot read {}: {e}", path.display())),
                        Ok(text) => match ConvolutionKernel::parse_table(&text) {
                            Ok(k) => self.knots = Some(k),
                            Err(e) => errors.push(format!("{prefix}.table: {e}")),
                        },
                    }
                }
            },
            _ => {
                if !(self.lengthscale > 0.0) || !self.lengthscale.is_finite() {
                    errors.push(format!(
                        "{prefix}.lengthscale = {}: kernel requires ℓ > 0",
                        self.lengthscale
                    ));
                }
            }
        }
        if self.knots.is_some() || self.shape != KernelShapeName::Table {
            if let Err(e) = self.build() {
                errors.push(format!("{prefix}: {e}"));
            }
        }
    }
}

/// A single `l` or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LValues {
    One(usize),
    Many(Vec<usize>),
}

impl LValues {
    pub fn values(&self) -> Vec<usize> {
        match self {
            Self::One(l) => vec![*l],
            Self::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessSection {
    pub l: LValues,
    /// Cox replicas for the correlation suite.
    pub replicas: Option<usize>,
    pub seed: Option<u64>,
    /// Largest pair distance for correlation tuples, in grid spacings.
    pub pair_budget: f64,
    /// Configurations per GNZ run.
    pub gnz_samples: usize,
    /// Prior draws per Monte-Carlo Papangelou estimate.
    pub mc_draws: usize,
}

impl Default for ProcessSection {
    fn default() -> Self {
        Self {
            l: LValues::Many(vec![1, 2, 3]),
            replicas: None,
            seed: None,
            pair_budget: 3.0,
            gnz_samples: 100_000,
            mc_draws: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    pub kind: DynamicsKind,
    pub s: f64,
    pub l: usize,
    pub hop_shape: HopShape,
    pub hop_radius: f64,
    pub hop_amplitude: f64,
    pub horizon: f64,
    pub max_events: usize,
    pub replicas: usize,
    pub grid: GridSection,
    pub kernel: KernelSection,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self {
            kind: DynamicsKind::Glauber,
            s: 0.5,
            l: 1,
            hop_shape: HopShape::Box,
            hop_radius: 0.5,
            hop_amplitude: 1.0,
            horizon: 20.0,
            max_events: 1_000_000,
            replicas: 200,
            grid: GridSection {
                dimension: 1,
                side_length: 2.0,
                cells_per_side: 8,
                torus: true,
            },
            kernel: KernelSection::gaussian(1.2, 0.15),
        }
    }
}

impl DynamicsSection {
    pub fn hop(&self) -> Result<HopKernel> {
        HopKernel::new(self.hop_shape, self.hop_radius, self.hop_amplitude)
    }

    pub fn rate_model(&self, clamp: f64) -> Result<RateModel> {
        RateModel::new(self.s, self.hop()?, clamp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    pub eps: Vec<f64>,
    pub samples: usize,
    pub l: usize,
    pub hop_shape: HopShape,
    pub hop_radius: f64,
    pub hop_amplitude: f64,
    pub discretization: Discretization,
    pub functions: Vec<CylinderFunction>,
    pub grid: GridSection,
    pub kernel: KernelSection,
}

impl Default for ScalingSection {
    fn default() -> Self {
        let bump = || {
            vec![BumpProfile {
                center: vec![0.0],
                width: 0.3,
            }]
        };
        Self {
            eps: vec![1.0, 0.5, 0.25, 0.125],
            samples: 20_000,
            l: 1,
            hop_shape: HopShape::Biweight,
            hop_radius: 0.5,
            hop_amplitude: 1.0,
            discretization: Discretization::Lattice,
            functions: vec![
                CylinderFunction {
                    profiles: bump(),
                    outer: OuterFunction::Linear,
                },
                CylinderFunction {
                    profiles: bump(),
                    outer: OuterFunction::Tanh,
                },
            ],
            grid: GridSection {
                dimension: 1,
                side_length: 1.0,
                cells_per_side: 64,
                torus: true,
            },
            kernel: KernelSection::gaussian(2.5, 0.1),
        }
    }
}

impl ScalingSection {
    pub fn hop(&self) -> Result<HopKernel> {
        HopKernel::new(self.hop_shape, self.hop_radius, self.hop_amplitude)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub kernel: KernelSection,
    pub process: ProcessSection,
    pub dynamics: DynamicsSection,
    pub scaling: ScalingSection,
    pub run: RunSection,
}

/// Seed used when neither the command line nor the config sets one.
pub const DEFAULT_SEED: u64 = 1;
/// Cox replicas for the correlation suite when unset.
pub const DEFAULT_REPLICAS: usize = 200_000;

impl ExperimentConfig {
    /// `cli` > `[run] seed` > `[process] seed` > [`DEFAULT_SEED`].
    pub fn master_seed(&self, cli: Option<u64>) -> u64 {
        cli.or(self.run.seed).or(self.process.seed).unwrap_or(DEFAULT_SEED)
    }

    /// `[process] replicas` > `[run] replicas` > [`DEFAULT_REPLICAS`].
    pub fn replicas(&self) -> usize {
        self.process.replicas.or(self.run.replicas).unwrap_or(DEFAULT_REPLICAS)
    }

    pub fn l_values(&self) -> Vec<usize> {
        self.process.l.values()
    }

    /// Same settings with Monte-Carlo sizes cut down for smoke runs and the
    /// determinism criterion.
    pub fn quick(&self) -> Self {
        let mut q = self.clone();
        q.process.replicas = Some(4_000);
        q.run.replicas = None;
        q.process.gnz_samples = 4_000;
        q.process.mc_draws = crate::papangelou::MIN_MC_DRAWS;
        q.dynamics.replicas = 20;
        q.dynamics.horizon = q.dynamics.horizon.min(5.0);
        q.scaling.samples = 1_000;
        q
    }

    fn validate(&mut self, base: Option<&Path>) -> std::result::Result<(), ConfigError> {
        let mut errors = Vec::new();
        self.grid.check("grid", &mut errors);
        self.dynamics.grid.check("dynamics.grid", &mut errors);
        self.scaling.grid.check("scaling.grid", &mut errors);
        self.kernel.resolve("kernel", base, &mut errors);
        self.dynamics.kernel.resolve("dynamics.kernel", base, &mut errors);
        self.scaling.kernel.resolve("scaling.kernel", base, &mut errors);

        let ls = self.l_values();
        if ls.is_empty() || ls.contains(&0) {
            errors.push("process.l: every l must be at least 1".into());
        }
        if self.replicas() < 2 {
            errors.push("process.replicas: at least 2 replicas are needed for a standard error".into());
        }
        if !(self.process.pair_budget >= 0.0) {
            errors.push("process.pair_budget must be non-negative".into());
        }
        if self.process.gnz_samples < 2 {
            errors.push("process.gnz_samples: at least 2 samples required".into());
        }
        if self.process.mc_draws < crate::papangelou::MIN_MC_DRAWS {
            errors.push(format!(
                "process.mc_draws = {}: papangelou_mc requires n_mc >= {}",
                self.process.mc_draws,
                crate::papangelou::MIN_MC_DRAWS
            ));
        }

        let d = &self.dynamics;
        if !(0.0..=1.0).contains(&d.s) {
            errors.push(format!("dynamics.s = {}: rate model requires s in [0, 1]", d.s));
        }
        if d.l == 0 {
            errors.push("dynamics.l must be at least 1".into());
        }
        if let Err(e) = d.hop() {
            errors.push(format!("dynamics: {e}"));
        }
        if !(d.horizon > 0.0) || !d.horizon.is_finite() {
            errors.push(format!("dynamics.horizon = {}: must be positive", d.horizon));
        }
        if d.max_events == 0 {
            errors.push("dynamics.max_events must be positive".into());
        }
        if d.replicas < 2 {
            errors.push("dynamics.replicas: at least 2 replicas required".into());
        }

        let s = &self.scaling;
        if s.eps.is_empty() {
            errors.push("scaling.eps must not be empty".into());
        }
        if s.eps.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            errors.push("scaling.eps: scale_hop_kernel requires every ε in (0, 1]".into());
        }
        if s.eps.windows(2).any(|w| w[1] >= w[0]) {
            errors.push("scaling.eps: scaling_ladder requires a strictly descending list".into());
        }
        if let Err(e) = s.hop() {
            errors.push(format!("scaling: {e}"));
        } else if let (Ok(grid), Ok(hop)) = (s.grid.build(), s.hop()) {
            for &e in &s.eps {
                if e > 0.0 && e <= 1.0 {
                    if let Err(err) = crate::scaling::scale_hop_kernel(&hop, e, &grid) {
                        errors.push(format!("scaling.eps = {e}: {err}"));
                    }
                }
            }
        }
        if s.samples < 2 {
            errors.push("scaling.samples: at least 2 samples required".into());
        }
        if s.l == 0 {
            errors.push("scaling.l must be at least 1".into());
        }
        if s.functions.is_empty() {
            errors.push("scaling.functions must list at least one cylinder function".into());
        }
        for (i, f) in s.functions.iter().enumerate() {
            if f.profiles.is_empty() {
                errors.push(format!("scaling.functions[{i}]: needs at least one profile"));
            }
            for p in &f.profiles {
                if p.center.len() != s.grid.dimension {
                    errors.push(format!(
                        "scaling.functions[{i}]: profile centre has {} coordinates, grid dimension is {}",
                        p.center.len(),
                        s.grid.dimension
                    ));
                }
                if !(p.width > 0.0) {
                    errors.push(format!("scaling.functions[{i}]: profile width must be positive"));
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Semantic(errors))
        }
    }
}

/// Parses and validates a configuration. `base` resolves relative paths.
pub fn parse_config_with_base(text: &str, base: Option<&Path>) -> std::result::Result<ExperimentConfig, ConfigError> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    cfg.validate(base)?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, ConfigError> {
    parse_config_with_base(text, None)
}

pub fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config_with_base(&text, path.parent())
}
