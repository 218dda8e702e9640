//! Run configuration: a flat TOML tree with strict schema validation.
//!
//! Unknown keys are rejected everywhere, numeric ranges are checked up
//! front, and referenced files must exist, so that a config that loads is a
//! config that runs.

use crate::cell::GeometryMeta;
use crate::darcy::{ForceField, ForcePreset, MacroGrid};
use crate::error::ConfigError;
use crate::solver::PhysicalParams;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryMeta,
    pub params: ParamsConfig,
    #[serde(rename = "macro", default, skip_serializing_if = "Option::is_none")]
    pub macro_section: Option<MacroConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(rename = "N2")]
    pub n2: f64,
    #[serde(rename = "Rc")]
    pub rc: f64,
}

impl ParamsConfig {
    pub fn physical(&self) -> PhysicalParams {
        PhysicalParams { n2: self.n2, rc: self.rc }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroConfig {
    /// extents of the rectangle omega
    pub omega: [f64; 2],
    /// macro grid cells per axis
    pub grid: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-10, max_iter: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    /// eps sweep members, each in (0, 1)
    pub eps: Vec<f64>,
    /// cells per eps-period of the resolved grids
    pub m: usize,
    /// rule fixing the slab height from eps; only "sqrt" (h = sqrt(eps))
    pub h_rule: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: PathBuf::from("out"), formats: vec!["csv".into()] }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Validation(msg()))
    }
}

impl MacroConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        check(self.omega.iter().all(|&e| e > 0.0), || {
            format!("macro.omega extents {:?} must be positive", self.omega)
        })?;
        check(self.grid.iter().all(|&n| n >= 4), || {
            format!("macro.grid {:?} must be at least 4 cells per axis", self.grid)
        })?;
        check(!(self.f_preset.is_some() && self.f_csv.is_some()), || {
            "macro.f_preset and macro.f_csv are mutually exclusive".into()
        })?;
        check(self.f_preset.is_some() || self.f_csv.is_some(), || {
            "macro needs f_preset or f_csv".into()
        })?;
        check(!(self.g_preset.is_some() && self.g_csv.is_some()), || {
            "macro.g_preset and macro.g_csv are mutually exclusive".into()
        })?;
        for preset in [&self.f_preset, &self.g_preset].into_iter().flatten() {
            check(ForcePreset::parse(preset).is_some(), || {
                format!("unknown force preset {preset:?}")
            })?;
        }
        for csv in [&self.f_csv, &self.g_csv].into_iter().flatten() {
            check(csv.exists(), || format!("force file {} does not exist", csv.display()))?;
        }
        Ok(())
    }

    pub fn macro_grid(&self) -> Result<MacroGrid, ConfigError> {
        MacroGrid::new(self.omega, self.grid).map_err(|e| ConfigError::Validation(e.to_string()))
    }

    fn load_force(
        preset: &Option<String>,
        csv: &Option<PathBuf>,
        grid: &MacroGrid,
    ) -> Result<ForceField, ConfigError> {
        if let Some(name) = preset {
            let p = ForcePreset::parse(name)
                .ok_or_else(|| ConfigError::Validation(format!("unknown force preset {name:?}")))?;
            return Ok(ForceField::Preset(p));
        }
        if let Some(path) = csv {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
            return ForceField::from_csv_str(&text, grid)
                .map_err(|e| ConfigError::Parse(e.to_string()));
        }
        Ok(ForceField::Preset(ForcePreset::Zero))
    }

    pub fn f_force(&self, grid: &MacroGrid) -> Result<ForceField, ConfigError> {
        Self::load_force(&self.f_preset, &self.f_csv, grid)
    }

    pub fn g_force(&self, grid: &MacroGrid) -> Result<ForceField, ConfigError> {
        Self::load_force(&self.g_preset, &self.g_csv, grid)
    }
}

impl ValidationConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        check(self.eps.iter().all(|&e| 0.0 < e && e < 1.0), || {
            format!("validation.eps {:?} must all lie in (0, 1)", self.eps)
        })?;
        check(self.m >= 4, || format!("validation.m = {} must be at least 4", self.m))?;
        check(self.h_rule == "sqrt", || {
            format!("validation.h_rule {:?} is not supported; use \"sqrt\"", self.h_rule)
        })
    }

    /// Slab height for a given eps under the configured rule.
    pub fn height(&self, eps: f64) -> f64 {
        debug_assert_eq!(self.h_rule, "sqrt");
        eps.sqrt()
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.geometry.to_obstacle()?;
        check(self.geometry.n >= 4, || {
            format!("geometry.n = {} must be at least 4", self.geometry.n)
        })?;
        self.params
            .physical()
            .validate()
            .map_err(|e| ConfigError::Validation(e.to_string()))?;
        check(self.solver.tol > 0.0, || {
            format!("solver.tol = {} must be positive", self.solver.tol)
        })?;
        if let Some(m) = &self.macro_section {
            m.validate()?;
        }
        if let Some(v) = &self.validation {
            v.validate()?;
        }
        for f in &self.output.formats {
            check(f == "csv" || f == "vtk", || {
                format!("unknown output format {f:?}; use \"csv\" or \"vtk\"")
            })?;
        }
        Ok(())
    }

    /// A complete single-file default configuration, also used by tests.
    pub fn default_toml() -> &'static str {
        include_str!("../data/default_config.toml")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_loads_and_validates() {
        let config = RunConfig::from_toml_str(RunConfig::default_toml()).unwrap();
        assert_eq!(config.geometry.kind, "sphere");
        assert_eq!(config.geometry.n, 16);
        assert_eq!(config.params.n2, 0.5);
        let mac = config.macro_section.as_ref().unwrap();
        assert!(mac.f_preset.is_some());
        let validation = config.validation.as_ref().unwrap();
        assert_eq!(validation.height(0.25), 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::default_toml().to_string();
        text.push_str("\n[params2]\nx = 1\n");
        assert!(matches!(RunConfig::from_toml_str(&text), Err(ConfigError::Parse(_))));
        let text = RunConfig::default_toml().replace("N2 = 0.5", "N2 = 0.5\nextra = 3");
        assert!(matches!(RunConfig::from_toml_str(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn out_of_range_coupling_number_is_a_validation_error() {
        let text = RunConfig::default_toml().replace("N2 = 0.5", "N2 = 1.5");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("N2 < 1 required"), "message: {msg}");
    }

    #[test]
    fn exclusive_force_sources_are_enforced() {
        let text = RunConfig::default_toml()
            .replace("f_preset = \"solenoidal_sine\"", "f_preset = \"solenoidal_sine\"\nf_csv = \"forces.csv\"");
        assert!(matches!(RunConfig::from_toml_str(&text), Err(ConfigError::Validation(_))));
        let text = RunConfig::default_toml()
            .replace("f_preset = \"solenoidal_sine\"", "f_preset = \"no_such_preset\"");
        assert!(matches!(RunConfig::from_toml_str(&text), Err(ConfigError::Validation(_))));
    }

    #[test]
    fn bad_h_rule_is_rejected() {
        let text = RunConfig::default_toml().replace("h_rule = \"sqrt\"", "h_rule = \"linear\"");
        assert!(matches!(RunConfig::from_toml_str(&text), Err(ConfigError::Validation(_))));
    }
}
