//! Peak-hour detection, two-block ToU calibration and revenue-neutral
//! scenario solving.
//!
//! A scenario recovers `(1-s)` of the total network cost through the
//! subscription fee and `s` through the volumetric blocks. The base-case
//! calibration fixes the block rates at the flat-equivalent anchor; each
//! scenario scales them by `f(s) = s / s_base`. After the off-peak rate is
//! quantized to a micro-ore, the peak rate is solved once against the exact
//! volumetric target `s*T`, so the revenue identity holds to the audit
//! tolerance by construction rather than by accumulation luck.

use crate::metering::{HourlyProfile, SystemLoad};
use crate::money::{volumetric_cost, Money, Rate, Rational};
use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    /// Off-peak block at `rho * flat rate`; peak block solves exact recovery
    /// of the base-case volumetric revenue. Reproduces the published rates.
    OffpeakScaled,
    /// Peak block recovers `(1-rho)` of the volumetric revenue, off-peak
    /// block recovers `rho` of it.
    PeakShare,
}

/// Calibration defaults shared by the scenario ladder.
#[derive(Copy, Clone, Debug)]
pub struct TouConfig {
    pub recovery_factor: Rational,
    pub peak_fraction: Rational,
    pub mode: CalibrationMode,
    /// optional peak energy share of total consumption, for solving rates
    /// without hourly data (otherwise the split comes from the detected
    /// window)
    pub peak_energy_share: Option<Rational>,
}

impl Default for TouConfig {
    fn default() -> Self {
        TouConfig {
            recovery_factor: Rational::new(4, 5),
            peak_fraction: Rational::new(1, 20),
            mode: CalibrationMode::OffpeakScaled,
            peak_energy_share: None,
        }
    }
}

/// Volumetric share of one scenario: an explicit value or "the base case's".
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum VolumetricShare {
    BaseCase,
    Fixed(Rational),
}

/// One scenario definition from the scenario file; per-scenario overrides
/// fall back to the shared [`TouConfig`].
#[derive(Clone, Debug)]
pub struct ScenarioDef {
    pub name: String,
    pub volumetric_share: VolumetricShare,
    pub recovery_factor: Option<Rational>,
    pub peak_fraction: Option<Rational>,
    pub mode: Option<CalibrationMode>,
}

impl ScenarioDef {
    pub fn fixed(name: &str, share: Rational) -> Self {
        ScenarioDef {
            name: name.into(),
            volumetric_share: VolumetricShare::Fixed(share),
            recovery_factor: None,
            peak_fraction: None,
            mode: None,
        }
    }

    pub fn base_case_share(name: &str) -> Self {
        ScenarioDef {
            name: name.into(),
            volumetric_share: VolumetricShare::BaseCase,
            recovery_factor: None,
            peak_fraction: None,
            mode: None,
        }
    }
}

/// The canonical five-scenario ladder.
pub fn canonical_scenarios() -> Vec<ScenarioDef> {
    vec![
        ScenarioDef::fixed("100pct-subscription", Rational::ZERO),
        ScenarioDef::fixed("25pct-volumetric", Rational::new(1, 4)),
        ScenarioDef::base_case_share("55pct-volumetric"),
        ScenarioDef::fixed("75pct-volumetric", Rational::new(3, 4)),
        ScenarioDef::fixed("100pct-volumetric", Rational::ONE),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TariffError {
    #[error("peak fraction {0} outside (0, 1)")]
    InvalidPeakFraction(String),
    #[error("peak window would be empty (floor(fraction * hours) = 0)")]
    DegenerateWindow,
    #[error("calibration requires peak energy > 0")]
    ZeroPeakEnergy,
    #[error("calibration requires off-peak energy > 0")]
    ZeroBaseEnergy,
    #[error("peak + base energy ({0} Wh) does not equal total consumption ({1} Wh)")]
    InconsistentSplit(u64, u64),
    #[error("invalid base case: {0}")]
    InvalidBaseCase(String),
}

/// Base-case tariff and cost-recovery totals.
///
/// `total_cost_override` pins the recovery target T independently of
/// `subscription * households` for configurations that reproduce published
/// tables with a different fee basis.
#[derive(Clone, Debug)]
pub struct BaseCaseInputs {
    pub flat_rate: Rate,
    pub base_subscription: Money,
    pub total_energy_wh: u64,
    pub households: u64,
    pub total_cost_override: Option<Money>,
}

impl BaseCaseInputs {
    /// Exact volumetric revenue `Q_total * r_flat` in money quanta.
    pub fn volumetric_revenue(&self) -> Rational {
        crate::money::volumetric_cost_exact(self.total_energy_wh, self.flat_rate)
    }

    /// Exact subscription revenue `N * F_base` in money quanta.
    pub fn subscription_revenue(&self) -> Rational {
        Rational::from_integer(self.households as i128 * self.base_subscription.quanta() as i128)
    }

    /// Total recovery target T in money quanta (exact rational).
    pub fn total_cost(&self) -> Rational {
        match self.total_cost_override {
            Some(t) => Rational::from_integer(t.quanta() as i128),
            None => self.volumetric_revenue().add(&self.subscription_revenue()),
        }
    }

    /// Base volumetric share `s_base = V / T`.
    pub fn base_volumetric_share(&self) -> Rational {
        self.volumetric_revenue().div(&self.total_cost())
    }

    pub fn validate(&self) -> Result<(), TariffError> {
        if self.households == 0 {
            return Err(TariffError::InvalidBaseCase(
                "household count is zero".into(),
            ));
        }
        let t = self.total_cost();
        if t <= Rational::ZERO {
            return Err(TariffError::InvalidBaseCase(
                "total cost must be positive".into(),
            ));
        }
        let s = self.base_volumetric_share();
        if s <= Rational::ZERO || s >= Rational::ONE {
            return Err(TariffError::InvalidBaseCase(format!(
                "base volumetric share {s} outside (0, 1)"
            )));
        }
        Ok(())
    }
}

/// The `floor(fraction * hours)` highest-demand hours, as a sorted index set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeakWindow {
    hours: Vec<u32>,
    year_hours: u32,
}

impl PeakWindow {
    pub fn from_hours(mut hours: Vec<u32>, year_hours: u32) -> Self {
        hours.sort_unstable();
        hours.dedup();
        assert!(hours.iter().all(|&h| h < year_hours));
        PeakWindow { hours, year_hours }
    }

    pub fn hours(&self) -> &[u32] {
        &self.hours
    }

    pub fn year_hours(&self) -> u32 {
        self.year_hours
    }

    pub fn len(&self) -> usize {
        self.hours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hours.is_empty()
    }

    /// Membership mask over the whole year.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.year_hours as usize];
        for &h in &self.hours {
            m[h as usize] = true;
        }
        m
    }
}

/// Select the `floor(fraction * H)` hours with the highest system load.
/// Ties break by descending load then ascending hour index, so the result is
/// unique and identical for any parallel selection strategy.
pub fn detect_peak_hours(load: &SystemLoad, fraction: Rational) -> Result<PeakWindow, TariffError> {
    if fraction <= Rational::ZERO || fraction >= Rational::ONE {
        return Err(TariffError::InvalidPeakFraction(fraction.to_string()));
    }
    let hours = load.hours();
    let scaled = fraction.mul(&Rational::from_integer(hours as i128));
    let cardinality = scaled.numer().div_euclid(scaled.denom()) as usize;
    if cardinality == 0 {
        return Err(TariffError::DegenerateWindow);
    }
    let mut order: Vec<u32> = (0..hours as u32).collect();
    order.sort_unstable_by(|&a, &b| load.0[b as usize].cmp(&load.0[a as usize]).then(a.cmp(&b)));
    order.truncate(cardinality);
    Ok(PeakWindow::from_hours(order, hours as u32))
}

/// Split a profile's annual energy into (peak, off-peak) against a window.
pub fn split_profile(profile: &HourlyProfile, window: &PeakWindow) -> (u64, u64) {
    debug_assert_eq!(profile.hours(), window.year_hours() as usize);
    let peak: u64 = window
        .hours()
        .iter()
        .map(|&h| profile.energy_wh[h as usize] as u64)
        .sum();
    let total = profile.annual_wh();
    (peak, total - peak)
}

/// Calibrated two-block rates at the base-case anchor.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TouRates {
    pub offpeak: Rate,
    pub peak: Rate,
}

/// Calibrate the two-block ToU so the blocks together recover exactly the
/// base-case volumetric revenue.
pub fn calibrate_tou(
    inputs: &BaseCaseInputs,
    recovery_factor: Rational,
    peak_wh: u64,
    base_wh: u64,
    mode: CalibrationMode,
) -> Result<TouRates, TariffError> {
    if peak_wh == 0 {
        return Err(TariffError::ZeroPeakEnergy);
    }
    if base_wh == 0 {
        return Err(TariffError::ZeroBaseEnergy);
    }
    if peak_wh + base_wh != inputs.total_energy_wh {
        return Err(TariffError::InconsistentSplit(
            peak_wh + base_wh,
            inputs.total_energy_wh,
        ));
    }
    if recovery_factor <= Rational::ZERO || recovery_factor > Rational::ONE {
        return Err(TariffError::InvalidBaseCase(format!(
            "recovery factor {recovery_factor} outside (0, 1]"
        )));
    }
    let v = inputs.volumetric_revenue(); // quanta
    let to_micro_ore_per_kwh = Rational::from_integer(10_000_000); // quanta -> Wh*u-ore/kWh
    match mode {
        CalibrationMode::OffpeakScaled => {
            let offpeak = Rate::from_micro_ore_per_kwh(
                recovery_factor
                    .mul(&Rational::from_integer(
                        inputs.flat_rate.micro_ore_per_kwh() as i128,
                    ))
                    .round_half_even() as i64,
            );
            // peak rate solves: base*offpeak + peak*rate = V exactly
            let remaining = v.mul(&to_micro_ore_per_kwh).sub(&Rational::from_integer(
                base_wh as i128 * offpeak.micro_ore_per_kwh() as i128,
            ));
            let peak = Rate::from_micro_ore_per_kwh(
                remaining
                    .div(&Rational::from_integer(peak_wh as i128))
                    .round_half_even() as i64,
            );
            Ok(TouRates { offpeak, peak })
        }
        CalibrationMode::PeakShare => {
            let one_minus = Rational::ONE.sub(&recovery_factor);
            let peak = Rate::from_micro_ore_per_kwh(
                one_minus
                    .mul(&v)
                    .mul(&to_micro_ore_per_kwh)
                    .div(&Rational::from_integer(peak_wh as i128))
                    .round_half_even() as i64,
            );
            let offpeak = Rate::from_micro_ore_per_kwh(
                recovery_factor
                    .mul(&v)
                    .mul(&to_micro_ore_per_kwh)
                    .div(&Rational::from_integer(base_wh as i128))
                    .round_half_even() as i64,
            );
            Ok(TouRates { offpeak, peak })
        }
    }
}

/// Solved per-scenario tariff: the fee, the effective block rates and the
/// calibration record behind them.
#[derive(Clone, Debug)]
pub struct TariffRates {
    pub scenario: String,
    pub volumetric_share: Rational,
    /// fee quantized to the money quantum (what a multiplier-1 household pays)
    pub fee: Money,
    /// exact fee (1-s)*T/N in quanta; bill lines quantize `m * fee_exact`
    /// once, so subscription revenue conserves to half a quantum per household
    pub fee_exact: Rational,
    pub offpeak_eff: Rate,
    pub peak_eff: Rate,
    pub scale: Rational,
    pub calibration: TouRates,
    pub peak_wh: u64,
    pub base_wh: u64,
}

/// Solve one scenario under revenue neutrality.
///
/// fee = (1-s) * T / N; the off-peak effective rate is `f(s) * gt_base`
/// rounded to a micro-ore; the peak effective rate then absorbs that rounding
/// against the exact volumetric target `s * T`.
pub fn solve_scenario(
    inputs: &BaseCaseInputs,
    name: &str,
    share: &VolumetricShare,
    calibration: TouRates,
    peak_wh: u64,
    base_wh: u64,
) -> Result<TariffRates, TariffError> {
    inputs.validate()?;
    let s_base = inputs.base_volumetric_share();
    let s = match share {
        VolumetricShare::BaseCase => s_base,
        VolumetricShare::Fixed(v) => *v,
    };
    if s < Rational::ZERO || s > Rational::ONE {
        return Err(TariffError::InvalidBaseCase(format!(
            "volumetric share {s} outside [0, 1]"
        )));
    }
    let t = inputs.total_cost();
    let n = Rational::from_integer(inputs.households as i128);
    let fee_exact = Rational::ONE.sub(&s).mul(&t).div(&n);
    let fee = Money::from_quanta(fee_exact.round_half_even() as i64);
    if s.is_zero() {
        return Ok(TariffRates {
            scenario: name.into(),
            volumetric_share: s,
            fee,
            fee_exact,
            offpeak_eff: Rate::ZERO,
            peak_eff: Rate::ZERO,
            scale: Rational::ZERO,
            calibration,
            peak_wh,
            base_wh,
        });
    }
    if peak_wh == 0 {
        return Err(TariffError::ZeroPeakEnergy);
    }
    let scale = s.mul(&t).div(&inputs.volumetric_revenue());
    let offpeak_eff = Rate::from_micro_ore_per_kwh(
        scale
            .mul(&Rational::from_integer(
                calibration.offpeak.micro_ore_per_kwh() as i128,
            ))
            .round_half_even() as i64,
    );
    // remaining revenue the peak block must recover, in Wh * u-ore/kWh;
    // the volumetric target is exactly s*T because the subscription side
    // recovers exactly (1-s)*T up to per-household line rounding
    let vol_target = s.mul(&t);
    let remaining =
        vol_target
            .mul(&Rational::from_integer(10_000_000))
            .sub(&Rational::from_integer(
                base_wh as i128 * offpeak_eff.micro_ore_per_kwh() as i128,
            ));
    let peak_eff = Rate::from_micro_ore_per_kwh(
        remaining
            .div(&Rational::from_integer(peak_wh as i128))
            .round_half_even() as i64,
    );
    Ok(TariffRates {
        scenario: name.into(),
        volumetric_share: s,
        fee,
        fee_exact,
        offpeak_eff,
        peak_eff,
        scale,
        calibration,
        peak_wh,
        base_wh,
    })
}

/// Exact revenue collected at these rates from group totals, in quanta:
/// `N*fee + cost(base) + cost(peak)` with per-line half-even rounding.
pub fn scenario_revenue(rates: &TariffRates, households: u64) -> Money {
    let sub = Money::from_quanta((households as i128 * rates.fee.quanta() as i128) as i64);
    sub + volumetric_cost(rates.base_wh, rates.offpeak_eff)
        + volumetric_cost(rates.peak_wh, rates.peak_eff)
}
