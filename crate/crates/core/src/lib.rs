//! Lévy-driven CARMA(p,q) processes and their use for credit default swap
//! premia.
//!
//! * [`levy`]: increment laws of the driving Lévy process.
//! * [`carma`]: companion-form algebra, second-order theory and exact
//!   discretization / simulation of the state and output processes.
//! * [`ats`]: affine term structure coefficients of the CARMA short rate.
//! * [`credit`]: recovery-rate maps, credit triangle, spread and intensity
//!   paths, default times and intensity-based fair spreads.
//! * [`inference`]: Kalman-filter quasi-likelihood, QMLE, Metropolis sampling
//!   of recovery parameters and BIC model comparison.
//! * [`dataio`]: CSV ingestion, imputation and log-returns.

pub mod ats;
pub mod carma;
pub mod credit;
pub mod dataio;
pub mod inference;
pub mod levy;
mod linalg;
mod poly;

pub use carma::{CarmaSpec, CompanionSystem, InitialState, StatePath};
pub use credit::{DiscountCurve, IntensityPath, PathConstruction, RecoveryParams, SpreadPath};
pub use inference::{FitConfig, FitReport};
pub use levy::{LevyDriver, MomentRates};

use rand::SeedableRng;

/// Random stream used for every simulation in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
