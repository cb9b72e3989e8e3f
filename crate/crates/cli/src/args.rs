//! Command-line flags. Every flag maps to a field of the command's JSON
//! configuration and overrides the config file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{default_driver, Overrides};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "carma-cds",
    version,
    about = "Levy-driven CARMA models for CDS premia"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate CARMA state, premium and intensity paths
    Simulate(SimulateArgs),
    /// Price a zero-coupon bond curve (--bond) or a CDS spread (--cds)
    Price(PriceArgs),
    /// Fit constant or stochastic recovery to one premium series
    Fit(FitArgs),
    /// Compare constant and stochastic recovery over a manifest of series
    Compare(CompareArgs),
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// CAR(1) model; combine with --a1
    #[arg(long, conflicts_with_all = ["a", "b"])]
    pub car1: bool,
    /// CAR(1) coefficient
    #[arg(long, allow_negative_numbers = true)]
    pub a1: Option<f64>,
    /// AR coefficients a1..ap, comma separated
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub a: Option<Vec<f64>>,
    /// MA coefficients b0..b(p-1), comma separated, with b_q = 1
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub b: Option<Vec<f64>>,
}

impl ModelArgs {
    fn apply(&self, o: &mut Overrides) {
        if self.car1 {
            o.set("model.b", Value::Null);
        }
        if let Some(a1) = self.a1 {
            o.set("model.a", json!([a1]));
            o.set("model.b", Value::Null);
        }
        o.set_opt("model.a", self.a.clone());
        o.set_opt("model.b", self.b.clone());
    }

    fn check_car1(&self, a: &[f64]) -> Result<(), CliError> {
        if self.car1 && a.len() != 1 {
            return Err(CliError::usage(
                "model.a",
                format!("--car1 needs one coefficient, got {a:?}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Args, Default)]
pub struct DriverArgs {
    /// Driver law: brownian, cpn (compound Poisson, normal jumps) or nig
    #[arg(long, value_parser = ["brownian", "cpn", "nig"])]
    pub driver: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub drift: Option<f64>,
    #[arg(long)]
    pub volatility: Option<f64>,
    /// Jump rate of the compound Poisson driver
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub jump_mean: Option<f64>,
    #[arg(long)]
    pub jump_sd: Option<f64>,
    #[arg(long)]
    pub nig_alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub nig_beta: Option<f64>,
    #[arg(long)]
    pub nig_delta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub nig_mu: Option<f64>,
}

impl DriverArgs {
    fn any(&self) -> bool {
        self.driver.is_some()
            || [
                self.drift,
                self.volatility,
                self.rate,
                self.jump_mean,
                self.jump_sd,
                self.nig_alpha,
                self.nig_beta,
                self.nig_delta,
                self.nig_mu,
            ]
            .iter()
            .any(Option::is_some)
    }

    fn apply(&self, o: &mut Overrides) {
        let params = [
            ("drift", self.drift),
            ("volatility", self.volatility),
            ("rate", self.rate),
            ("jump_mean", self.jump_mean),
            ("jump_sd", self.jump_sd),
            ("alpha", self.nig_alpha),
            ("beta", self.nig_beta),
            ("delta", self.nig_delta),
            ("mu", self.nig_mu),
        ];
        match self.driver.as_deref().and_then(default_driver) {
            Some(d) => {
                let mut v = serde_json::to_value(d).expect("driver serializes");
                for (k, x) in params {
                    if let Some(x) = x {
                        v[k] = json!(x);
                    }
                }
                o.set("driver", v);
            }
            None => {
                for (k, x) in params {
                    o.set_opt(&format!("driver.{k}"), x);
                }
            }
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct BetaArgs {
    #[arg(long)]
    pub beta0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
}

impl BetaArgs {
    fn any(&self) -> bool {
        self.beta0.is_some() || self.beta1.is_some() || self.beta2.is_some()
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub driver: DriverArgs,
    #[command(flatten)]
    pub beta: BetaArgs,
    /// Constant recovery rate of the CRR paths
    #[arg(long, allow_negative_numbers = true)]
    pub recovery: Option<f64>,
    /// Number of steps
    #[arg(long)]
    pub n: Option<usize>,
    /// Step length
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial premium
    #[arg(long)]
    pub c0: Option<f64>,
    #[arg(long)]
    pub tenor: Option<f64>,
    /// Which path carries the integrated CARMA output
    #[arg(long, value_parser = ["spread_primary", "intensity_primary"])]
    pub construction: Option<String>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

impl SimulateArgs {
    pub fn overrides(&self) -> Value {
        let mut o = Overrides::default();
        self.model.apply(&mut o);
        self.driver.apply(&mut o);
        o.set_opt("srr.beta0", self.beta.beta0);
        o.set_opt("srr.beta1", self.beta.beta1);
        o.set_opt("srr.beta2", self.beta.beta2);
        o.set_opt("crr", self.recovery);
        o.set_opt("n", self.n);
        o.set_opt("h", self.h);
        o.set_opt("seed", self.seed);
        o.set_opt("c0", self.c0);
        o.set_opt("tenor", self.tenor);
        o.set_opt("construction", self.construction.clone());
        o.into_value()
    }

    pub fn check(&self, a: &[f64]) -> Result<(), CliError> {
        self.model.check_car1(a)
    }
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("mode").required(true).args(["bond", "cds"])))]
pub struct PriceArgs {
    /// Zero-coupon bond curve of the CAR(1) short rate
    #[arg(long)]
    pub bond: bool,
    /// Intensity-based fair CDS spread
    #[arg(long)]
    pub cds: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Short rate (bond) or flat discount rate (cds)
    #[arg(long, allow_negative_numbers = true)]
    pub r: Option<f64>,
    /// Longest maturity of the bond grid
    #[arg(long)]
    pub tau_max: Option<f64>,
    /// Number of bond grid intervals
    #[arg(long)]
    pub n_tau: Option<usize>,
    /// Integrate the bond coefficient ODEs with this step
    #[arg(long)]
    pub ode_step: Option<f64>,
    #[command(flatten)]
    pub driver: DriverArgs,
    #[command(flatten)]
    pub beta: BetaArgs,
    /// Constant recovery rate
    #[arg(long, allow_negative_numbers = true, conflicts_with_all = ["beta0", "beta1", "beta2"])]
    pub recovery: Option<f64>,
    /// Initial intensity
    #[arg(long)]
    pub gamma0: Option<f64>,
    /// Use a flat intensity path at gamma0
    #[arg(long)]
    pub constant_gamma: bool,
    /// Monte Carlo ensemble size
    #[arg(long)]
    pub paths: Option<usize>,
    /// Intensity grid step
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub tenor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

impl PriceArgs {
    pub fn bond_overrides(&self) -> Result<Value, CliError> {
        let cds_only = [
            ("driver", self.driver.any()),
            ("recovery", self.recovery.is_some() || self.beta.any()),
            ("gamma0", self.gamma0.is_some()),
            ("constant_gamma", self.constant_gamma),
            ("paths", self.paths.is_some()),
            ("h", self.h.is_some()),
            ("tenor", self.tenor.is_some()),
            ("seed", self.seed.is_some()),
        ];
        if let Some((name, _)) = cds_only.iter().find(|(_, set)| *set) {
            return Err(CliError::usage(name, "applies to --cds only"));
        }
        let mut o = Overrides::default();
        self.model.apply(&mut o);
        o.set_opt("short_rate", self.r);
        o.set_opt("tau_max", self.tau_max);
        o.set_opt("n_tau", self.n_tau);
        o.set_opt("ode_step", self.ode_step);
        Ok(o.into_value())
    }

    pub fn cds_overrides(&self) -> Result<Value, CliError> {
        let bond_only = [
            ("tau_max", self.tau_max.is_some()),
            ("n_tau", self.n_tau.is_some()),
            ("ode_step", self.ode_step.is_some()),
        ];
        if let Some((name, _)) = bond_only.iter().find(|(_, set)| *set) {
            return Err(CliError::usage(name, "applies to --bond only"));
        }
        let mut o = Overrides::default();
        self.model.apply(&mut o);
        self.driver.apply(&mut o);
        if let Some(rate) = self.recovery {
            o.set("recovery", json!({"mode": "constant", "rate": rate}));
        }
        if self.beta.any() {
            let mut v = json!({"mode": "stochastic"});
            for (k, x) in [
                ("beta0", self.beta.beta0),
                ("beta1", self.beta.beta1),
                ("beta2", self.beta.beta2),
            ] {
                if let Some(x) = x {
                    v[k] = json!(x);
                }
            }
            o.set("recovery", v);
        }
        o.set_opt("gamma0", self.gamma0);
        if self.constant_gamma {
            o.set("constant_gamma", true);
        }
        o.set_opt("n_paths", self.paths);
        o.set_opt("h", self.h);
        o.set_opt("tenor", self.tenor);
        o.set_opt("discount_rate", self.r);
        o.set_opt("seed", self.seed);
        Ok(o.into_value())
    }

    pub fn check(&self, a: &[f64]) -> Result<(), CliError> {
        self.model.check_car1(a)
    }
}

/// Flags shared by `fit` and `compare`.
#[derive(Debug, Args, Default)]
pub struct FitFlags {
    /// AR order
    #[arg(long)]
    pub p: Option<usize>,
    /// MA order
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Observation spacing
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub tenor: Option<f64>,
    /// Random optimizer starts
    #[arg(long)]
    pub n_starts: Option<usize>,
    /// Retained Metropolis draws
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Zero-based date column of the input CSV
    #[arg(long)]
    pub date_column: Option<usize>,
    /// Zero-based value column of the input CSV
    #[arg(long)]
    pub value_column: Option<usize>,
}

impl FitFlags {
    fn apply(&self, o: &mut Overrides) {
        o.set_opt("fit.p", self.p);
        o.set_opt("fit.q", self.q);
        o.set_opt("fit.seed", self.seed);
        o.set_opt("fit.optimizer.n_starts", self.n_starts);
        o.set_opt("fit.mcmc.n_samples", self.samples);
        o.set_opt("fit.mcmc.burn_in", self.burn_in);
        o.set_opt("h", self.h);
        o.set_opt("tenor", self.tenor);
        o.set_opt("columns.date", self.date_column);
        o.set_opt("columns.value", self.value_column);
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Premium series CSV (`date,value`)
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Recovery model: crr or srr
    #[arg(long, value_parser = ["crr", "srr"])]
    pub model: Option<String>,
    /// Entity name used in outputs; defaults to the input file stem
    #[arg(long)]
    pub entity: Option<String>,
    #[command(flatten)]
    pub flags: FitFlags,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

impl FitArgs {
    pub fn overrides(&self) -> Value {
        let mut o = Overrides::default();
        o.set_opt("model", self.model.clone());
        self.flags.apply(&mut o);
        o.into_value()
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// CSV manifest of `entity,path` rows
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: FitFlags,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

impl CompareArgs {
    pub fn overrides(&self) -> Value {
        let mut o = Overrides::default();
        self.flags.apply(&mut o);
        o.into_value()
    }
}
