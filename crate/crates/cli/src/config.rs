//! Flat TOML experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use msfv_core::{BasisSpec, FineSolver, LocalPcaSelection, SensitivityMode};
use serde::{Deserialize, Serialize};

fn unit_widths() -> [f64; 3] {
    [1.0; 3]
}

fn default_families() -> Vec<String> {
    vec!["lagrange".into(), "skeleton".into(), "local_pca".into()]
}

fn default_modes() -> Vec<String> {
    vec!["ms-fixed".into(), "ms-adaptive".into()]
}

fn default_noise() -> f64 {
    0.01
}

fn default_alpha() -> f64 {
    1e-8
}

fn default_gn() -> usize {
    10
}

fn default_cg() -> usize {
    15
}

fn default_solver() -> String {
    "direct".into()
}

fn default_workers() -> usize {
    1
}

fn default_model() -> String {
    "block".into()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Every key is top level. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Fine cells per axis.
    pub cells: [usize; 3],
    #[serde(default = "unit_widths")]
    pub widths: [f64; 3],
    /// Fine cells per coarse block per axis.
    pub block: [usize; 3],
    /// Any of "lagrange", "source", "skeleton", "local_pca".
    #[serde(default = "default_families")]
    pub families: Vec<String>,
    /// Local components per block.
    #[serde(default)]
    pub pca_per_block: Option<usize>,
    /// Local components over all blocks, largest singular values first.
    #[serde(default)]
    pub pca_total: Option<usize>,
    /// Dipole source grid on the top surface.
    pub sources: [usize; 2],
    /// Point receiver grid on the top surface.
    pub receivers: [usize; 2],
    /// "block" or "salt".
    #[serde(default = "default_model")]
    pub model: String,
    /// Background conductivity.
    pub background: f64,
    /// Block model anomalies as `[i0, i1, j0, j1, k0, k1, sigma]`, cell
    /// ranges half open.
    #[serde(default)]
    pub anomalies: Vec<[f64; 7]>,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Bounds on the log-conductivity.
    pub lower: f64,
    pub upper: f64,
    #[serde(default = "default_gn")]
    pub gn_iters: usize,
    #[serde(default = "default_cg")]
    pub cg_iters: usize,
    /// Inversion modes: "full", "ms-fixed", "ms-adaptive".
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    /// "direct" or "blockcg"; used by the forward subcommand.
    #[serde(default = "default_solver")]
    pub solver: String,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("cannot parse configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.background <= 0.0 || !self.background.is_finite() {
            bail!("background conductivity must be positive");
        }
        if !(self.lower < self.upper) {
            bail!("lower bound must be below upper bound");
        }
        let m0 = self.background.ln();
        if m0 < self.lower || m0 > self.upper {
            bail!("log background {m0} lies outside the bounds");
        }
        if self.pca_per_block.is_some() && self.pca_total.is_some() {
            bail!("set at most one of pca_per_block and pca_total");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        self.basis_spec()?;
        self.fine_solver()?;
        self.sensitivity_modes()?;
        if !matches!(self.model.as_str(), "block" | "salt") {
            bail!("unknown model {:?}", self.model);
        }
        Ok(())
    }

    pub fn basis_spec(&self) -> Result<BasisSpec> {
        let mut spec = BasisSpec { lagrange: false, source: false, skeleton: false, local_pca: None };
        for f in &self.families {
            match f.as_str() {
                "lagrange" => spec.lagrange = true,
                "source" => spec.source = true,
                "skeleton" => spec.skeleton = true,
                "local_pca" => {
                    spec.local_pca = Some(match (self.pca_per_block, self.pca_total) {
                        (_, Some(n)) => LocalPcaSelection::Total(n),
                        (Some(r), None) => LocalPcaSelection::PerBlock(r),
                        (None, None) => bail!("local_pca needs pca_per_block or pca_total"),
                    })
                }
                other => bail!("unknown basis family {other:?}"),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn fine_solver(&self) -> Result<FineSolver> {
        parse_solver(&self.solver)
    }

    pub fn sensitivity_modes(&self) -> Result<Vec<SensitivityMode>> {
        if self.modes.is_empty() {
            bail!("no inversion mode requested");
        }
        self.modes.iter().map(|m| Ok(m.parse::<SensitivityMode>()?)).collect()
    }
}

pub fn parse_solver(s: &str) -> Result<FineSolver> {
    match s {
        "direct" => Ok(FineSolver::Direct),
        "blockcg" => Ok(FineSolver::block_cg_default()),
        other => bail!("unknown solver {other:?}"),
    }
}
