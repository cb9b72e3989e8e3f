//! Run configurations: built-in defaults, overridden by a JSON file, overridden
//! by command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use carma_credit::carma::{self, CarmaSpec};
use carma_credit::credit::{PathConstruction, RecoveryParams};
use carma_credit::inference::{FitConfig, RecoveryModel};
use carma_credit::LevyDriver;

use crate::error::CliError;

/// CARMA coefficients as given on the command line or in a config file.
/// Without `b` the model is CAR(p).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub a: Vec<f64>,
    pub b: Option<Vec<f64>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            a: vec![6.0],
            b: None,
        }
    }
}

impl ModelConfig {
    /// Builds the model and rejects non-stationary or degenerate ones.
    pub fn spec(&self) -> Result<CarmaSpec, CliError> {
        let spec = match &self.b {
            None => CarmaSpec::car(self.a.clone()),
            Some(b) => CarmaSpec::new(self.a.clone(), b.clone()),
        }
        .map_err(|e| CliError::usage("model", e))?;
        let sys = carma::build_system(&spec).map_err(|e| CliError::usage("model", e))?;
        if !sys.is_stationary() {
            return Err(CliError::usage(
                "model.a",
                format!(
                    "{:?} is not stationary (largest eigenvalue real part {})",
                    self.a,
                    sys.max_real_part()
                ),
            ));
        }
        Ok(spec)
    }
}

/// `R = beta2 + beta0 exp(beta1 g)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticRecovery {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl StochasticRecovery {
    pub fn params(&self) -> Result<RecoveryParams, CliError> {
        RecoveryParams::stochastic(self.beta0, self.beta1, self.beta2)
            .map_err(|e| CliError::usage("srr", e))
    }
}

pub fn default_driver(kind: &str) -> Option<LevyDriver> {
    match kind {
        "brownian" => LevyDriver::brownian(0.0, 0.1).ok(),
        "cpn" => LevyDriver::compound_poisson(1.0, 0.0, 0.1).ok(),
        "nig" => LevyDriver::nig(10.0, 0.0, 0.1, 0.0).ok(),
        _ => None,
    }
}

fn default_cpn() -> LevyDriver {
    default_driver("cpn").expect("valid default driver")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelConfig,
    pub driver: LevyDriver,
    /// Stochastic recovery paths are written when set.
    pub srr: Option<StochasticRecovery>,
    /// Constant recovery paths are written when set.
    pub crr: Option<f64>,
    pub n: usize,
    pub h: f64,
    pub seed: u64,
    /// Initial premium.
    pub c0: f64,
    pub tenor: f64,
    pub construction: PathConstruction,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            model: ModelConfig::default(),
            driver: default_cpn(),
            srr: None,
            crr: Some(0.4),
            n: 3000,
            h: 1.0,
            seed: 0,
            c0: 100.0,
            tenor: 5.0,
            construction: PathConstruction::IntensityPrimary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BondConfig {
    pub model: ModelConfig,
    pub short_rate: f64,
    pub tau_max: f64,
    pub n_tau: usize,
    /// Integrate the coefficient ODEs with this step instead of the closed form.
    pub ode_step: Option<f64>,
}

impl Default for BondConfig {
    fn default() -> Self {
        BondConfig {
            model: ModelConfig::default(),
            short_rate: 0.03,
            tau_max: 10.0,
            n_tau: 40,
            ode_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdsConfig {
    pub model: ModelConfig,
    pub driver: LevyDriver,
    pub recovery: RecoveryParams,
    /// Initial intensity; paths are `gamma0 exp(int_0^t Y)`.
    pub gamma0: f64,
    /// Price a single flat intensity path instead of simulating.
    pub constant_gamma: bool,
    pub n_paths: usize,
    pub h: f64,
    pub tenor: f64,
    pub discount_rate: f64,
    pub seed: u64,
}

impl Default for CdsConfig {
    fn default() -> Self {
        CdsConfig {
            model: ModelConfig::default(),
            driver: default_cpn(),
            recovery: RecoveryParams::Constant { rate: 0.4 },
            gamma0: 0.02,
            constant_gamma: false,
            n_paths: 1000,
            h: 0.01,
            tenor: 5.0,
            discount_rate: 0.03,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnConfig {
    pub date: usize,
    pub value: usize,
}

impl Default for ColumnConfig {
    fn default() -> Self {
        ColumnConfig { date: 0, value: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitCommandConfig {
    pub model: RecoveryModel,
    pub fit: FitConfig,
    pub h: f64,
    pub tenor: f64,
    pub columns: ColumnConfig,
}

impl Default for FitCommandConfig {
    fn default() -> Self {
        FitCommandConfig {
            model: RecoveryModel::Srr,
            fit: FitConfig::default(),
            h: 1.0,
            tenor: 5.0,
            columns: ColumnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub fit: FitConfig,
    pub h: f64,
    pub tenor: f64,
    pub columns: ColumnConfig,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            fit: FitConfig::default(),
            h: 1.0,
            tenor: 5.0,
            columns: ColumnConfig::default(),
        }
    }
}

/// Flag values collected as a JSON object keyed by dotted paths.
#[derive(Debug, Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set(&mut self, path: &str, value: impl Into<Value>) {
        let mut parts = path.split('.').peekable();
        let mut node = &mut self.0;
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                node.insert(part.to_string(), value.into());
                return;
            }
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            if !entry.is_object() {
                *entry = Value::Object(Map::new());
            }
            node = entry.as_object_mut().expect("object");
        }
    }

    pub fn set_opt(&mut self, path: &str, value: Option<impl Into<Value>>) {
        if let Some(v) = value {
            self.set(path, v);
        }
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.0)
    }
}

/// Merges `over` into `base`. Objects merge key by key, except that an
/// object carrying a `kind` or `mode` tag replaces the previous value whole,
/// since it names a different variant.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let tagged = v
                    .as_object()
                    .is_some_and(|m| m.contains_key("kind") || m.contains_key("mode"));
                match b.get_mut(&k) {
                    Some(slot) if !tagged => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves defaults, then the JSON text of a config file, then flag
/// overrides, into `T`.
pub fn resolve<T>(file_text: Option<&str>, overrides: Value) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut value = serde_json::to_value(T::default()).expect("defaults serialize");
    if let Some(text) = file_text {
        let file: Value = serde_json::from_str(text).map_err(|e| CliError::usage("config", e))?;
        if !file.is_object() {
            return Err(CliError::usage("config", "top level must be a JSON object"));
        }
        merge(&mut value, file);
    }
    merge(&mut value, overrides);
    serde_json::from_value(value).map_err(|e| CliError::usage("config", e))
}

/// Parses a config file body on its own, without flags.
pub fn parse_config<T>(text: &str) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned + Default,
{
    resolve(Some(text), Value::Object(Map::new()))
}

pub fn read_config_file(path: Option<&Path>) -> Result<Option<String>, CliError> {
    path.map(|p| {
        std::fs::read_to_string(p)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", p.display())))
    })
    .transpose()
}

/// Single-line JSON of a resolved configuration.
pub fn to_json_line<T: Serialize>(config: &T) -> String {
    serde_json::to_string(config).expect("configs serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let mut o = Overrides::default();
        o.set("n", 10);
        let cfg: SimulateConfig = resolve(Some(r#"{"n": 20, "h": 0.5}"#), o.into_value()).unwrap();
        assert_eq!(cfg.n, 10);
        assert_eq!(cfg.h, 0.5);
        assert_eq!(cfg.c0, 100.0);
    }

    #[test]
    fn tagged_objects_replace() {
        let text = r#"{"driver": {"kind": "brownian", "drift": 0.0, "volatility": 2.0}}"#;
        let cfg: SimulateConfig = parse_config(text).unwrap();
        assert_eq!(cfg.driver, LevyDriver::brownian(0.0, 2.0).unwrap());
        let mut o = Overrides::default();
        o.set("driver.volatility", 3.0);
        let cfg: SimulateConfig = resolve(Some(text), o.into_value()).unwrap();
        assert_eq!(cfg.driver, LevyDriver::brownian(0.0, 3.0).unwrap());
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = parse_config::<SimulateConfig>(r#"{"nn": 3}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("nn"));
        assert!(parse_config::<SimulateConfig>("[1]").is_err());
        assert!(parse_config::<SimulateConfig>(
            r#"{"driver": {"kind": "cpn", "rate": -1, "jump_mean": 0, "jump_sd": 1}}"#
        )
        .is_err());
    }

    #[test]
    fn resolved_config_roundtrips() {
        let cfg = SimulateConfig {
            srr: Some(StochasticRecovery {
                beta0: 0.378,
                beta1: -0.0095,
                beta2: 0.637,
            }),
            ..SimulateConfig::default()
        };
        let back: SimulateConfig = parse_config(&to_json_line(&cfg)).unwrap();
        assert_eq!(back, cfg);
        let fit: FitCommandConfig =
            parse_config(&to_json_line(&FitCommandConfig::default())).unwrap();
        assert_eq!(fit, FitCommandConfig::default());
    }

    #[test]
    fn model_validation() {
        assert!(ModelConfig {
            a: vec![-1.0],
            b: None
        }
        .spec()
        .is_err());
        assert!(ModelConfig {
            a: vec![1.39631, 0.05029],
            b: Some(vec![2.0, 1.0])
        }
        .spec()
        .is_ok());
        let mut v = json!({"a": 1});
        merge(&mut v, json!({"b": {"c": 2}}));
        assert_eq!(v, json!({"a": 1, "b": {"c": 2}}));
    }
}
