//! Experiment configuration, a single JSON document.

use std::path::{Path, PathBuf};

use damped_mhd::{DampingFn, DampingSpec, GridSpec, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

fn yes() -> bool {
    true
}

fn default_eps() -> f64 {
    1e-6
}

/// Which checks a `run` performs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    #[serde(default = "yes")]
    pub l2: bool,
    #[serde(default = "yes")]
    pub h1_additive: bool,
    #[serde(default = "yes")]
    pub h1_exponential: bool,
    /// Grönwall self-check on the ledger.
    #[serde(default = "yes")]
    pub gronwall: bool,
    /// Integrated damping identity on the initial and final states.
    #[serde(default)]
    pub damping_identity: bool,
    #[serde(default)]
    pub lemmas: bool,
    #[serde(default)]
    pub twin: bool,
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            l2: true,
            h1_additive: true,
            h1_exponential: true,
            gronwall: true,
            damping_identity: false,
            lemmas: false,
            twin: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFlags {
    #[serde(default = "yes")]
    pub checkpoint: bool,
    #[serde(default = "yes")]
    pub summary_json: bool,
    /// Echo the check report to stdout.
    #[serde(default = "yes")]
    pub echo: bool,
}

impl Default for ReportFlags {
    fn default() -> Self {
        ReportFlags {
            checkpoint: true,
            summary_json: true,
            echo: true,
        }
    }
}

/// Settings of the perturbed twin run that differ from `solver`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwinPartner {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<DampingSpec>,
}

impl TwinPartner {
    pub fn apply(&self, base: &SolverConfig) -> SolverConfig {
        let mut c = base.clone();
        if let Some(g) = self.grid {
            c.grid = g;
        }
        if let Some(dt) = self.dt {
            c.dt = dt;
        }
        if let Some(d) = self.damping {
            c.damping = d;
        }
        c
    }
}

/// Parameter matrix of the lemma suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaMatrix {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub functions: Vec<DampingFn>,
    pub x_max: f64,
    pub x_points: usize,
    pub pairs: usize,
    pub pair_scale: [f64; 2],
    pub field_pairs: usize,
    pub field_modes: usize,
    pub z_max: f64,
    pub z_points: usize,
    pub seed: u64,
}

impl Default for LemmaMatrix {
    fn default() -> Self {
        LemmaMatrix {
            alphas: vec![0.1, 1.0, 10.0],
            betas: vec![3.5, 4.0, 5.0, 7.0],
            functions: DampingFn::ALL.to_vec(),
            x_max: 100.0,
            x_points: 10_000,
            pairs: 100_000,
            pair_scale: [1e-3, 1e3],
            field_pairs: 100,
            field_modes: 16,
            z_max: 1e6,
            z_points: 61,
            seed: 0,
        }
    }
}

impl LemmaMatrix {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.alphas.is_empty() || self.betas.is_empty() || self.functions.is_empty() {
            return Err(CliError::Usage("lemma matrix needs at least one alpha, beta and function".into()));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(CliError::Usage("lemma matrix alphas must be positive".into()));
        }
        if self.betas.iter().any(|b| !b.is_finite()) {
            return Err(CliError::Usage("lemma matrix betas must be finite".into()));
        }
        if !(self.x_max > 0.0) || self.x_points < 2 || self.z_points < 2 || !(self.z_max > 1.0) {
            return Err(CliError::Usage("lemma sample ranges are empty".into()));
        }
        let [lo, hi] = self.pair_scale;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(CliError::Usage("pair_scale must satisfy 0 < lo <= hi".into()));
        }
        GridSpec::new(self.field_modes).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub checks: Checks,
    /// Perturbation scale of the twin run.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub report: ReportFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub twin_partner: Option<TwinPartner>,
    #[serde(default)]
    pub lemmas: LemmaMatrix,
}

impl ExperimentConfig {
    /// Config for lemma runs without a file.
    pub fn lemmas_only(output_dir: PathBuf) -> Self {
        ExperimentConfig {
            name: "lemmas".into(),
            output_dir,
            solver: None,
            checks: Checks::default(),
            eps: default_eps(),
            report: ReportFlags::default(),
            twin_partner: None,
            lemmas: LemmaMatrix::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg = Self::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.trim().is_empty() {
            return Err(CliError::Usage("experiment name must be nonempty".into()));
        }
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(CliError::Usage(format!("eps must be non-negative, got {}", self.eps)));
        }
        if let Some(s) = &self.solver {
            s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if self.checks.lemmas {
            self.lemmas.validate()?;
        }
        Ok(())
    }

    pub fn solver(&self) -> Result<&SolverConfig, CliError> {
        self.solver
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("config `{}` has no `solver` section", self.name)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "demo",
        "output_dir": "out/demo",
        "solver": {
            "grid": {"n_modes": 16},
            "damping": {"kind": "power", "alpha": 1.0, "beta": 4.0},
            "dt": 0.01,
            "t_end": 0.1,
            "initial_condition": {"kind": "random_divfree", "target_h1": 0.01}
        }
    }"#;

    #[test]
    fn defaults_and_round_trip() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert!(c.checks.l2 && !c.checks.twin);
        assert_eq!(c.eps, 1e-6);
        assert_eq!(c.lemmas, LemmaMatrix::default());
        let again = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.to_json(), c.to_json());
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("\"eps\"", "\"x\"").replace("\"name\": \"demo\",", "\"name\": \"demo\", \"colour\": 1,");
        let e = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("colour") && e.contains("line"), "{e}");
        let bad = MINIMAL.replace("\"dt\": 0.01", "\"dt\": \"fast\"");
        let e = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("line 7"), "{e}");
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert!(c.validate().is_ok());
        c.name = " ".into();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.eps = -1.0;
        assert!(c.validate().is_err());
        let mut m = LemmaMatrix::default();
        m.betas.clear();
        assert!(m.validate().is_err());
        assert!(ExperimentConfig::lemmas_only("x".into()).solver().is_err());
    }

    #[test]
    fn partner_overrides() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let base = c.solver().unwrap();
        let p = TwinPartner { dt: Some(0.005), ..Default::default() };
        let other = p.apply(base);
        assert_eq!(other.dt, 0.005);
        assert_eq!(other.grid, base.grid);
    }
}
