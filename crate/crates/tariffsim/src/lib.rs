//! Revenue-neutral electricity grid tariff simulation.
//!
//! The engine classifies households into financial-status / technology
//! groups, cleans hourly metering data, detects the system peak window,
//! calibrates a two-block time-of-use tariff, solves each scenario's
//! subscription fee and effective block rates under revenue neutrality,
//! applies a redistributive subscription factor, and quantifies per-group
//! bills and cross-subsidies against a flat base-case tariff.
//!
//! All accounting is fixed point: energy in integer watt-hours, money in
//! quanta of 10^-4 DKK, rates in micro-ore per kWh, with half-even rounding
//! at every quantization. Sums are exact and independent of worker count.

pub mod billing;
pub mod config;
pub mod domain;
pub mod metering;
pub mod money;
pub mod pipeline;
pub mod redistribution;
pub mod report;
pub mod synthpop;
pub mod tariff;

/// Unified error for pipeline-level operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Domain(#[from] domain::DomainError),
    #[error(transparent)]
    DomainFile(#[from] domain::DomainFileError),
    #[error(transparent)]
    Metering(#[from] metering::MeteringError),
    #[error(transparent)]
    Tariff(#[from] tariff::TariffError),
    #[error(transparent)]
    Redistribution(#[from] redistribution::RedistributionError),
    #[error(transparent)]
    Billing(#[from] billing::BillingError),
    #[error(transparent)]
    Synth(#[from] synthpop::SynthError),
    #[error("{0} households could not be classified (strict mode)")]
    StrictExclusions(usize),
    #[error("this operation needs household data; configure synth or attributes+metering")]
    NoDataSource,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
