//! Simulation scenario files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sos_core::models::{LossModel, ModelKind};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "FULL")]
    Full,
    #[serde(rename = "UNI")]
    Uni,
    #[serde(rename = "SOS")]
    Sos,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Full => "FULL",
            Estimator::Uni => "UNI",
            Estimator::Sos => "SOS",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// Quantiles of the simulated limiting law.
    #[default]
    MonteCarlo,
    /// Gaussian approximation, for subsamples much larger than √N.
    Normal,
    None,
}

fn default_replications() -> usize {
    1
}

fn default_level() -> f64 {
    0.95
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Uni, Estimator::Sos]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub model: String,
    pub theta0: Vec<f64>,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub n: usize,
    #[serde(rename = "K", default = "default_replications")]
    pub replications: usize,
    /// Monte Carlo draws per interval; defaults to `n`.
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub mc_draws: Option<usize>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub ci: CiMethod,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(format!("scenario field '{path}': {}", e.into_inner()))
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        self.model
            .parse()
            .map_err(|e: sos_core::Error| CliError::config(format!("scenario field 'model': {e}")))
    }

    pub fn covariates(&self) -> usize {
        match self.model_kind() {
            Ok(ModelKind::Weibull) => self.theta0.len().saturating_sub(2),
            _ => self.theta0.len().saturating_sub(1),
        }
    }

    /// Draws per interval after defaulting.
    pub fn draws(&self) -> usize {
        self.mc_draws.unwrap_or(self.n).max(sos_core::inference::MIN_DRAWS)
    }

    pub fn wants(&self, e: Estimator) -> bool {
        self.estimators.contains(&e)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(CliError::config(format!("scenario field '{field}': {msg}")));
        let model = self.model_kind()?;
        let min_len = if model == ModelKind::Weibull { 2 } else { 1 };
        if self.theta0.len() < min_len {
            return bad("theta0", format!("{model} needs at least {min_len} entries"));
        }
        if let Some(j) = self.theta0.iter().position(|v| !v.is_finite()) {
            return bad(&format!("theta0[{j}]"), "must be finite".into());
        }
        model
            .check_theta(&self.theta0)
            .or_else(|e| bad("theta0", e.to_string()))?;
        if self.big_n == 0 {
            return bad("N", "must be positive".into());
        }
        if self.n == 0 || self.n > self.big_n {
            return bad("n", format!("must lie in 1..={}", self.big_n));
        }
        let d = self.theta0.len();
        if self.n <= d {
            return bad("n", format!("must exceed the parameter dimension {d}"));
        }
        if self.replications == 0 {
            return bad("K", "must be at least 1".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level", "must lie strictly between 0 and 1".into());
        }
        if let Some(b) = self.mc_draws {
            if b < sos_core::inference::MIN_DRAWS {
                return bad("B", format!("must be at least {}", sos_core::inference::MIN_DRAWS));
            }
        }
        if self.estimators.is_empty() {
            return bad("estimators", "must name at least one of FULL, UNI, SOS".into());
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return bad("estimators", "contains duplicates".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OK: &str = r#"{"model": "logistic", "theta0": [0, 0.2, 0.2], "N": 1000, "n": 100}"#;

    #[test]
    fn defaults_are_filled() {
        let s = Scenario::from_json(OK).unwrap();
        assert_eq!(s.replications, 1);
        assert_eq!(s.level, 0.95);
        assert_eq!(s.estimators, vec![Estimator::Uni, Estimator::Sos]);
        assert_eq!(s.ci, CiMethod::MonteCarlo);
        assert_eq!(s.draws(), 100);
        assert_eq!(s.covariates(), 2);
    }

    #[test]
    fn round_trips() {
        let mut s = Scenario::from_json(OK).unwrap();
        s.mc_draws = Some(500);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(Scenario::from_json(&text).unwrap(), s);
    }

    fn err(text: &str) -> String {
        Scenario::from_json(text).unwrap_err().to_string()
    }

    #[test]
    fn errors_name_the_field() {
        assert!(err(&OK.replace("logistic", "probit")).contains("'model'"));
        assert!(err(&OK.replace("\"n\": 100", "\"n\": 5000")).contains("'n'"));
        assert!(err(&OK.replace("\"n\": 100", "\"n\": \"many\"")).contains("'n'"));
        assert!(err(&OK.replace("[0, 0.2, 0.2]", "[0, \"x\"]")).contains("theta0[1]"));
        assert!(err(&OK.replace("}", ", \"K\": 0}")).contains("'K'"));
        assert!(err(&OK.replace("}", ", \"level\": 1.5}")).contains("'level'"));
        assert!(err(&OK.replace("}", ", \"B\": 10}")).contains("'B'"));
        assert!(err(&OK.replace("}", ", \"estimators\": [\"SOS\", \"SOS\"]}")).contains("'estimators'"));
        assert!(err(&OK.replace("}", ", \"estimators\": [\"IPW\"]}")).contains("estimators[0]"));
        assert!(err(&OK.replace("}", ", \"bogus\": 1}")).contains("bogus"));
        let w = r#"{"model": "weibull", "theta0": [-0.5, 0], "N": 1000, "n": 100}"#;
        assert!(err(w).contains("'theta0'"));
    }
}
