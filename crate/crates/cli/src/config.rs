//! Run configuration.
//!
//! Precedence, lowest first: built-in defaults, the `--config` JSON document,
//! command-line flags (`--seed`, `--out`, `--only`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hmlab_core::fields::SigmaKind;
use hmlab_core::{
    Boundary, BoundaryParams, Convention, FlowKind, GridSpec, Side, SpinDataKind, Suite, C64,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CommandName {
    Verify,
    Simulate,
    Charges,
    Scan,
    Report,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_points: usize,
    pub half_length: f64,
    pub boundary: Boundary,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_points: 256, half_length: std::f64::consts::PI, boundary: Boundary::Periodic }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub spin: SpinDataKind,
    pub amplitude: f64,
    /// Auxiliary fields; ignored on spin-only grids.
    pub sigma: SigmaKind,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            spin: SpinDataKind::Twist { theta0: 0.8, winding: 1 },
            amplitude: 0.2,
            sigma: SigmaKind::Random { amplitude: 0.3, modes: 2 },
        }
    }
}

/// `K(λ) = α I + λ [[δ, β], [γ, −δ]]` for one end.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KConfig {
    pub alpha: C64,
    pub beta: C64,
    pub gamma: C64,
    pub delta: C64,
}

impl KConfig {
    pub fn params(&self, side: Side) -> BoundaryParams {
        BoundaryParams::new(side, self.alpha, self.beta, self.gamma, self.delta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryConfig {
    /// No boundary matrices; open grids then carry no charge or transfer monitors.
    None {},
    /// `K± = σ_z` with data built to satisfy the boundary relation.
    Reflective {},
    /// User matrices; the data are generated as for periodic runs.
    Custom { k_plus: KConfig, k_minus: KConfig },
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig::None {}
    }
}

impl BoundaryConfig {
    pub fn params(&self) -> Option<(BoundaryParams, BoundaryParams)> {
        match self {
            BoundaryConfig::None {} => None,
            BoundaryConfig::Reflective {} => {
                let k = KConfig { delta: C64::new(1.0, 0.0), ..KConfig::default() };
                Some((k.params(Side::Plus), k.params(Side::Minus)))
            }
            BoundaryConfig::Custom { k_plus, k_minus } => Some((k_plus.params(Side::Plus), k_minus.params(Side::Minus))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When present, must name the command being run.
    pub command: Option<CommandName>,
    pub grid: GridConfig,
    pub casimir_c: f64,
    pub flow: FlowKind,
    pub convention: Convention,
    pub data: DataConfig,
    pub boundary: BoundaryConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Threshold overrides keyed by check name.
    pub tolerances: BTreeMap<String, f64>,

    /// Suites run by `verify`; the identity suites when absent.
    pub suites: Option<Vec<Suite>>,
    pub samples: usize,
    /// Also rerun each selected suite with an injected fault.
    pub sensitivity: bool,
    /// Test hook: perturbs the r-matrix seen by the algebra suites.
    pub perturb_r_matrix: bool,

    /// Evolution span of `simulate`.
    pub span: f64,
    /// Step size; the flow's default step when absent.
    pub step: Option<f64>,
    pub checkpoints: usize,
    /// Write a grid snapshot at every checkpoint.
    pub snapshots: bool,
    /// Highest monitored charge order: 1 for `hm`, 0 for the other flows
    /// when absent.
    pub charges_order: Option<usize>,
    /// Spectral parameters `[re, im]` for transfer scans.
    pub lambdas: Option<Vec<C64>>,
    /// Test hook: adds `ε·c` to the `S_z` rate of `simulate`.
    pub perturbation: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            grid: GridConfig::default(),
            casimir_c: 1.0,
            flow: FlowKind::Hm,
            convention: Convention::Real,
            data: DataConfig::default(),
            boundary: BoundaryConfig::None {},
            seed: 7,
            out_dir: PathBuf::from("hmlab-out"),
            tolerances: BTreeMap::new(),
            suites: None,
            samples: 100,
            sensitivity: false,
            perturb_r_matrix: false,
            span: 0.5,
            step: None,
            checkpoints: 10,
            snapshots: false,
            charges_order: None,
            lambdas: None,
            perturbation: 0.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.casimir_c.is_finite() && self.casimir_c > 0.0) {
            bail!("casimir_c must be positive, got {}", self.casimir_c);
        }
        if !(self.span.is_finite() && self.span > 0.0) {
            bail!("span must be positive, got {}", self.span);
        }
        if self.checkpoints == 0 {
            bail!("checkpoints must be at least 1");
        }
        if self.samples == 0 {
            bail!("samples must be at least 1");
        }
        if let Some(ls) = &self.lambdas {
            if ls.is_empty() {
                bail!("lambdas must not be empty");
            }
        }
        self.grid_spec()?;
        Ok(())
    }

    pub fn c(&self) -> C64 {
        C64::new(self.casimir_c, 0.0)
    }

    /// The grid axis follows the flow: space for `hm` and the swapped flows,
    /// time for `dual_space` and `higher_space`.
    pub fn grid_spec(&self) -> Result<GridSpec> {
        Ok(GridSpec::new(self.grid.n_points, self.grid.half_length, self.grid.boundary, self.flow.grid_axis())?)
    }

    pub fn charges_order(&self) -> usize {
        self.charges_order.unwrap_or(if self.flow == FlowKind::Hm { 1 } else { 0 })
    }

    pub fn tolerance(&self, name: &str, default: f64) -> f64 {
        self.tolerances.get(name).copied().unwrap_or(default)
    }
}
