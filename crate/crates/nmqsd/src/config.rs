//! Run configuration as a flat TOML document.
//!
//! Every key is optional; missing keys take the production defaults. A
//! `run_meta.toml` written by a previous run is also accepted: its
//! `[config]` table holds the exact configuration of that run.

use std::path::PathBuf;

use nmqsd_core::{HierarchyMode, HierarchyParams, ModelSpec, NoiseParams, StepConfig, Unraveling};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Range { key: &'static str, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Full spin-boson coupling `L = sigma_x`.
    SigmaX,
    /// Rotating-wave coupling `L = sigma_minus`.
    SigmaMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HierarchyModeKey {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "bar_O_zero")]
    BarOZero,
    #[serde(rename = "truncated")]
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnravelingKey {
    Nonlinear,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub label: String,
    /// System frequency; all other rates are in these units.
    pub omega: f64,
    /// Bath memory rate.
    pub gamma: f64,
    /// Coupling product, `alpha(0) = gamma_Gamma / 2`.
    #[serde(rename = "gamma_Gamma")]
    pub gamma_gamma: f64,
    pub dt: f64,
    pub t_final: f64,
    /// Hierarchy cap.
    pub n_max: usize,
    pub eps_thres: f64,
    pub eps_tol: f64,
    pub hierarchy_mode: HierarchyModeKey,
    pub coupling_mode: CouplingMode,
    pub unraveling: UnravelingKey,
    /// Number of noise realizations.
    pub n_traj: u64,
    pub master_seed: u64,
    /// Worker threads; 0 uses all available cores.
    pub threads: usize,
    pub output_dir: PathBuf,
    pub output_stride: usize,
    /// Highest order reported in `qnorms.csv`.
    pub n_report: usize,
    /// Count trajectories that ended at the cap in the N_Q histogram.
    pub include_saturated: bool,
    /// Also run the step-halving and reduced-cap ensembles needed for the
    /// time-step and truncation error estimates.
    pub estimate_errors: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            label: "run".into(),
            omega: 1.0,
            gamma: 0.2,
            gamma_gamma: 0.2,
            dt: 0.02,
            t_final: 12.0,
            n_max: 100,
            eps_thres: 1e-8,
            eps_tol: 1e-4,
            hierarchy_mode: HierarchyModeKey::Full,
            coupling_mode: CouplingMode::SigmaX,
            unraveling: UnravelingKey::Nonlinear,
            n_traj: 8000,
            master_seed: 1,
            threads: 0,
            output_dir: PathBuf::from("out"),
            output_stride: 1,
            n_report: 12,
            include_saturated: false,
            estimate_errors: false,
        }
    }
}

fn range(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        key,
        reason: reason.into(),
    }
}

impl RunConfig {
    /// Parses and validates a configuration document.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        // A run_meta document keeps the configuration in its own table.
        if let Some(toml::Value::Table(inner)) = table.remove("config") {
            table = inner;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Renders the configuration so that `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(range(key, format!("must be positive and finite, got {v}")))
            }
        };
        positive("omega", self.omega)?;
        positive("dt", self.dt)?;
        positive("t_final", self.t_final)?;
        positive("eps_thres", self.eps_thres)?;
        positive("eps_tol", self.eps_tol)?;
        if !(self.gamma_gamma.is_finite() && self.gamma_gamma >= 0.0) {
            return Err(range(
                "gamma_Gamma",
                format!("must be non-negative, got {}", self.gamma_gamma),
            ));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(range(
                "gamma",
                format!("must be non-negative, got {}", self.gamma),
            ));
        }
        if self.gamma == 0.0 && self.gamma_gamma > 0.0 {
            return Err(range("gamma", "must be positive when gamma_Gamma > 0"));
        }
        if self.eps_thres > self.eps_tol {
            return Err(range("eps_thres", "must not exceed eps_tol"));
        }
        let steps = self.t_final / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(range(
                "t_final",
                format!("must be a multiple of dt = {}", self.dt),
            ));
        }
        if self.master_seed > i64::MAX as u64 {
            return Err(range("master_seed", "must be below 2^63"));
        }
        if self.n_traj == 0 {
            return Err(range("n_traj", "at least one trajectory is required"));
        }
        if self.output_stride == 0 {
            return Err(range("output_stride", "must be at least 1"));
        }
        if self.output_stride > self.n_steps() {
            return Err(range("output_stride", "exceeds the number of steps"));
        }
        if self.label.is_empty() || self.label.contains(['/', '\\']) {
            return Err(range(
                "label",
                "must be a non-empty name without path separators",
            ));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round().max(1.0) as usize
    }

    pub fn model(&self) -> ModelSpec {
        match self.coupling_mode {
            CouplingMode::SigmaX => ModelSpec::spin_boson(self.omega),
            CouplingMode::SigmaMinus => ModelSpec::spin_boson_rwa(self.omega),
        }
    }

    pub fn noise(&self) -> NoiseParams {
        NoiseParams {
            gamma: self.gamma,
            coupling: self.gamma_gamma,
            dt: self.dt,
            n_steps: self.n_steps(),
            seed: self.master_seed,
        }
    }

    pub fn hierarchy(&self) -> HierarchyParams {
        HierarchyParams {
            n_max: self.n_max,
            eps_thres: self.eps_thres,
            eps_tol: self.eps_tol,
            mode: match self.hierarchy_mode {
                HierarchyModeKey::Full => HierarchyMode::Full,
                HierarchyModeKey::BarOZero => HierarchyMode::BarOZero,
                HierarchyModeKey::Truncated => HierarchyMode::Truncated,
            },
        }
    }

    pub fn step(&self) -> StepConfig {
        StepConfig {
            output_stride: self.output_stride,
            n_report: self.n_report,
            unraveling: match self.unraveling {
                UnravelingKey::Nonlinear => Unraveling::Nonlinear,
                UnravelingKey::Linear => Unraveling::Linear,
            },
        }
    }
}
