//! `carma-cds`: simulate, price, fit and compare Lévy-driven CARMA models of
//! CDS premia from the command line.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

pub use args::{Cli, Command};
pub use error::CliError;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Price(a) => commands::price(a),
        Command::Fit(a) => commands::fit(a),
        Command::Compare(a) => commands::compare(a),
    }
}
