//! Study configuration files.
//!
//! A config file is a list of `section.key = value` lines (TOML syntax, so
//! strings are quoted and lists use brackets). Lines starting with `#` are
//! comments. Every recognised key is listed in [`KEYS`]; anything else is
//! rejected. Keys left out keep their defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineConfig;
use crate::dgp::DgpConfig;
use crate::error::{Error, Result};
use crate::gcf::{InstrumentPlan, OrthogonalityOptions, WeightingMode};
use crate::optim::OptimizerOptions;

/// Recognised keys and what they set.
pub const KEYS: &[(&str, &str)] = &[
    ("dgp.n_firms", "firms per panel"),
    ("dgp.n_periods", "recorded periods per firm"),
    (
        "dgp.burn_in",
        "periods simulated and discarded before recording",
    ),
    ("dgp.seed", "seed for `simulate` and `check-orthogonality`"),
    ("dgp.eps_sd", "standard deviation of the output disturbance"),
    ("dgp.alpha", "CES share parameter, in (0, 1)"),
    ("dgp.rho", "CES substitution parameter, nonzero and below 1"),
    ("dgp.nu", "returns to scale, positive"),
    ("dgp.pk.mean", "stationary mean of the log capital price"),
    (
        "dgp.pk.variance",
        "stationary variance of the log capital price",
    ),
    (
        "dgp.pk.autocorr",
        "autocorrelation of the log capital price",
    ),
    (
        "dgp.pv.mean",
        "stationary mean of the log variable-input price",
    ),
    (
        "dgp.pv.variance",
        "stationary variance of the log variable-input price",
    ),
    (
        "dgp.pv.autocorr",
        "autocorrelation of the log variable-input price",
    ),
    (
        "dgp.delta1.mean",
        "stationary mean of the demand level shock",
    ),
    (
        "dgp.delta1.variance",
        "stationary variance of the demand level shock",
    ),
    (
        "dgp.delta1.autocorr",
        "autocorrelation of the demand level shock",
    ),
    (
        "dgp.delta2.mean",
        "stationary mean of the demand curvature shock",
    ),
    (
        "dgp.delta2.variance",
        "stationary variance of the demand curvature shock",
    ),
    (
        "dgp.delta2.autocorr",
        "autocorrelation of the demand curvature shock",
    ),
    ("dgp.omega.mean", "stationary mean of productivity"),
    ("dgp.omega.variance", "stationary variance of productivity"),
    (
        "dgp.omega.autocorr",
        "first-order autocorrelation of productivity",
    ),
    (
        "dgp.omega.corr_delta1",
        "correlation of productivity with the lagged level shock",
    ),
    (
        "dgp.omega.corr_delta2",
        "correlation of productivity with the lagged curvature shock",
    ),
    (
        "study.replications",
        "number of simulated panels, at least 1",
    ),
    (
        "study.master_seed",
        "seed from which every replication seed is derived",
    ),
    ("study.jobs", "replications run at once; 0 uses every core"),
    (
        "study.output_dir",
        "directory for the raw, summary and histogram files",
    ),
    (
        "study.gcf_degrees",
        "control-projection degrees of the GCF runs, e.g. [2, 4]",
    ),
    (
        "study.baseline",
        "also run the baseline estimator (true/false)",
    ),
    (
        "study.weighting",
        "\"oracle\", \"two_step\" or \"identity\"",
    ),
    ("study.histogram_bins", "bins in the exported histogram"),
    (
        "estimator.phi_degree",
        "total degree of the instrument functions",
    ),
    (
        "estimator.first_stage_degree",
        "baseline first-stage degree",
    ),
    (
        "estimator.g_degree",
        "baseline law-of-motion polynomial order",
    ),
    (
        "optimizer.gradient_tol",
        "gradient norm at which a run counts as converged",
    ),
    ("optimizer.max_iterations", "iteration cap per start"),
    ("optimizer.n_starts", "starting points per fit"),
    ("optimizer.jitter", "spread of the extra starting points"),
    ("orthogonality.directions", "random nuisance directions"),
    (
        "orthogonality.tol",
        "bound on derivative over standard error",
    ),
    ("orthogonality.seed", "seed for the directions"),
    (
        "orthogonality.degree",
        "control-projection degree used by the check",
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingChoice {
    /// Covariance at the true parameters of the generating process.
    Oracle,
    TwoStep,
    Identity,
}

impl WeightingChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "two_step" | "two-step" => Ok(Self::TwoStep),
            "identity" => Ok(Self::Identity),
            other => Err(Error::Config(format!("unknown weighting `{other}`"))),
        }
    }

    pub fn mode(self, dgp: &DgpConfig) -> WeightingMode {
        match self {
            Self::Oracle => WeightingMode::Oracle {
                theta: dgp.structural,
            },
            Self::TwoStep => WeightingMode::TwoStep,
            Self::Identity => WeightingMode::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Template panel; its seed is replaced per replication.
    pub dgp: DgpConfig,
    pub n_replications: usize,
    pub master_seed: u64,
    /// Zero means one job per core.
    pub jobs: usize,
    pub output_dir: PathBuf,
    pub gcf_degrees: Vec<usize>,
    pub baseline: bool,
    pub weighting: WeightingChoice,
    pub histogram_bins: usize,
    pub phi_degree: usize,
    pub first_stage_degree: usize,
    pub g_degree: usize,
    pub optimizer: OptimizerOptions,
    pub orthogonality: OrthogonalityOptions,
    pub orthogonality_degree: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let baseline = BaselineConfig::default();
        Self {
            dgp: DgpConfig {
                n_firms: 1000,
                ..DgpConfig::default()
            },
            n_replications: 50,
            master_seed: 20240601,
            jobs: 0,
            output_dir: PathBuf::from("mc_out"),
            gcf_degrees: vec![2, 4],
            baseline: true,
            weighting: WeightingChoice::Oracle,
            histogram_bins: 40,
            phi_degree: baseline.phi_degree,
            first_stage_degree: baseline.first_stage_degree,
            g_degree: baseline.g_degree,
            optimizer: OptimizerOptions::default(),
            orthogonality: OrthogonalityOptions::default(),
            orthogonality_degree: 4,
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("`{key}` must be a number"))),
    }
}

fn as_u64(key: &str, v: &toml::Value) -> Result<u64> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(Error::Config(format!(
            "`{key}` must be a nonnegative integer"
        ))),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    Ok(as_u64(key, v)? as usize)
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| Error::Config(format!("`{key}` must be true or false")))
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| Error::Config(format!("`{key}` must be a quoted string")))
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        let mut cfg = Self::default();
        for (key, value) in &flat {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        let d = &mut self.dgp;
        match key {
            "dgp.n_firms" => d.n_firms = as_usize(key, v)?,
            "dgp.n_periods" => d.n_periods = as_usize(key, v)?,
            "dgp.burn_in" => d.burn_in = as_usize(key, v)?,
            "dgp.seed" => d.seed = as_u64(key, v)?,
            "dgp.eps_sd" => d.eps_sd = as_f64(key, v)?,
            "dgp.alpha" => d.structural.alpha = as_f64(key, v)?,
            "dgp.rho" => d.structural.rho = as_f64(key, v)?,
            "dgp.nu" => d.structural.nu = as_f64(key, v)?,
            "dgp.pk.mean" => d.shock_pk.mean = as_f64(key, v)?,
            "dgp.pk.variance" => d.shock_pk.variance = as_f64(key, v)?,
            "dgp.pk.autocorr" => d.shock_pk.autocorr = as_f64(key, v)?,
            "dgp.pv.mean" => d.shock_pv.mean = as_f64(key, v)?,
            "dgp.pv.variance" => d.shock_pv.variance = as_f64(key, v)?,
            "dgp.pv.autocorr" => d.shock_pv.autocorr = as_f64(key, v)?,
            "dgp.delta1.mean" => d.shock_d1.mean = as_f64(key, v)?,
            "dgp.delta1.variance" => d.shock_d1.variance = as_f64(key, v)?,
            "dgp.delta1.autocorr" => d.shock_d1.autocorr = as_f64(key, v)?,
            "dgp.delta2.mean" => d.shock_d2.mean = as_f64(key, v)?,
            "dgp.delta2.variance" => d.shock_d2.variance = as_f64(key, v)?,
            "dgp.delta2.autocorr" => d.shock_d2.autocorr = as_f64(key, v)?,
            "dgp.omega.mean" => d.targets.mean_omega = as_f64(key, v)?,
            "dgp.omega.variance" => d.targets.var_omega = as_f64(key, v)?,
            "dgp.omega.autocorr" => d.targets.autocorr_omega = as_f64(key, v)?,
            "dgp.omega.corr_delta1" => d.targets.corr_omega_delta1 = as_f64(key, v)?,
            "dgp.omega.corr_delta2" => d.targets.corr_omega_delta2 = as_f64(key, v)?,
            "study.replications" => self.n_replications = as_usize(key, v)?,
            "study.master_seed" => self.master_seed = as_u64(key, v)?,
            "study.jobs" => self.jobs = as_usize(key, v)?,
            "study.output_dir" => self.output_dir = PathBuf::from(as_str(key, v)?),
            "study.gcf_degrees" => {
                let items = v
                    .as_array()
                    .ok_or_else(|| Error::Config(format!("`{key}` must be a list")))?;
                self.gcf_degrees = items
                    .iter()
                    .map(|x| as_usize(key, x))
                    .collect::<Result<_>>()?;
            }
            "study.baseline" => self.baseline = as_bool(key, v)?,
            "study.weighting" => self.weighting = WeightingChoice::parse(as_str(key, v)?)?,
            "study.histogram_bins" => self.histogram_bins = as_usize(key, v)?,
            "estimator.phi_degree" => self.phi_degree = as_usize(key, v)?,
            "estimator.first_stage_degree" => self.first_stage_degree = as_usize(key, v)?,
            "estimator.g_degree" => self.g_degree = as_usize(key, v)?,
            "optimizer.gradient_tol" => self.optimizer.gradient_tol = as_f64(key, v)?,
            "optimizer.max_iterations" => self.optimizer.max_iterations = as_usize(key, v)?,
            "optimizer.n_starts" => self.optimizer.n_starts = as_usize(key, v)?,
            "optimizer.jitter" => self.optimizer.jitter = as_f64(key, v)?,
            "orthogonality.directions" => self.orthogonality.n_directions = as_usize(key, v)?,
            "orthogonality.tol" => self.orthogonality.tol = as_f64(key, v)?,
            "orthogonality.seed" => self.orthogonality.seed = as_u64(key, v)?,
            "orthogonality.degree" => self.orthogonality_degree = as_usize(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.n_replications < 1 {
            return Err(Error::Config(
                "study.replications must be at least 1".into(),
            ));
        }
        if self.gcf_degrees.is_empty() && !self.baseline {
            return Err(Error::Config("no estimator configured".into()));
        }
        if self.histogram_bins < 1 {
            return Err(Error::Config(
                "study.histogram_bins must be at least 1".into(),
            ));
        }
        if self.optimizer.n_starts < 1 || !(self.optimizer.gradient_tol > 0.0) {
            return Err(Error::Config(
                "optimizer needs at least one start and a positive tolerance".into(),
            ));
        }
        for &d in &self.gcf_degrees {
            self.plan(d).validate()?;
        }
        self.plan(self.orthogonality_degree).validate()?;
        self.baseline_config().validate()
    }

    pub fn plan(&self, control_degree: usize) -> InstrumentPlan {
        InstrumentPlan {
            phi_degree: self.phi_degree,
            ..InstrumentPlan::with_control_degree(control_degree)
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            first_stage_degree: self.first_stage_degree,
            g_degree: self.g_degree,
            phi_degree: self.phi_degree,
            ..BaselineConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(StudyConfig::parse("").unwrap(), StudyConfig::default());
    }

    #[test]
    fn dotted_keys_are_applied() {
        let cfg = StudyConfig::parse(
            "# desk scale\n\
             dgp.n_firms = 200\n\
             dgp.omega.autocorr = 0.5\n\
             study.gcf_degrees = [3]\n\
             study.baseline = false\n\
             study.weighting = \"two_step\"\n\
             study.output_dir = \"out\"\n",
        )
        .unwrap();
        assert_eq!(cfg.dgp.n_firms, 200);
        assert_eq!(cfg.dgp.targets.autocorr_omega, 0.5);
        assert_eq!(cfg.gcf_degrees, vec![3]);
        assert!(!cfg.baseline);
        assert_eq!(cfg.weighting, WeightingChoice::TwoStep);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn unknown_and_mistyped_keys_are_errors() {
        for text in [
            "dgp.nfirms = 10",
            "study.baseline = 1",
            "dgp.n_firms = -3",
            "study.weighting = \"optimal\"",
            "study.replications = 0",
            "dgp.n_firms = ",
        ] {
            let err = StudyConfig::parse(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }

    #[test]
    fn every_documented_key_is_accepted() {
        for (key, _) in KEYS {
            let value = match *key {
                "study.output_dir" | "study.weighting" => "\"identity\"".to_string(),
                "study.gcf_degrees" => "[4]".into(),
                "study.baseline" => "true".into(),
                _ => {
                    let mut cfg = StudyConfig::default();
                    let probe = toml::Value::Integer(1);
                    if cfg.set(key, &probe).is_ok() {
                        continue;
                    }
                    "0.5".into()
                }
            };
            let mut cfg = StudyConfig::default();
            let v: toml::Table = format!("x = {value}").parse().unwrap();
            cfg.set(key, &v["x"])
                .unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
