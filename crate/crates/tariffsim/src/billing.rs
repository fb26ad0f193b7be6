//! Per-household bills, base-case comparison bills, equity deltas and the
//! revenue-neutrality audit.

use crate::money::{volumetric_cost, Money, Rational};
use crate::tariff::{BaseCaseInputs, TariffRates};

/// One bill split into its three components. Components are non-negative and
/// the total is their exact sum.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct BillBreakdown {
    pub subscription: Money,
    pub offpeak: Money,
    pub peak: Money,
}

impl BillBreakdown {
    pub fn total(&self) -> Money {
        self.subscription + self.offpeak + self.peak
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BillingError {
    #[error("base-case bill is zero; equity delta undefined")]
    ZeroBaseBill,
}

/// The subscription line for one household: the multiplier applied to the
/// exact fee, quantized once.
pub fn subscription_line(rates: &TariffRates, multiplier: &Rational) -> Money {
    debug_assert!(*multiplier >= Rational::ZERO);
    Money::from_quanta(multiplier.mul(&rates.fee_exact).round_half_even() as i64)
}

/// Bill a household (or a group average) under solved scenario rates with a
/// subscription multiplier. Each line is rounded half-even to the quantum.
pub fn compute_bill(
    peak_wh: u64,
    base_wh: u64,
    rates: &TariffRates,
    multiplier: &Rational,
) -> BillBreakdown {
    BillBreakdown {
        subscription: subscription_line(rates, multiplier),
        offpeak: volumetric_cost(base_wh, rates.offpeak_eff),
        peak: volumetric_cost(peak_wh, rates.peak_eff),
    }
}

/// The base-case bill: full subscription plus the flat volumetric charge,
/// booked entirely as off-peak (the base case has no ToU block).
pub fn bill_base_case(total_wh: u64, inputs: &BaseCaseInputs) -> BillBreakdown {
    BillBreakdown {
        subscription: inputs.base_subscription,
        offpeak: volumetric_cost(total_wh, inputs.flat_rate),
        peak: Money::ZERO,
    }
}

/// Signed bill change relative to the base case.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct EquityDelta {
    pub base_total: Money,
    pub new_total: Money,
}

impl EquityDelta {
    /// (new - base) / base as an exact fraction.
    pub fn fraction(&self) -> Rational {
        Rational::new(
            (self.new_total - self.base_total).quanta() as i128,
            self.base_total.quanta() as i128,
        )
    }

    /// Rendered as a percentage with two decimals.
    pub fn percent_string(&self) -> String {
        self.fraction().format_percent(2)
    }
}

pub fn equity_delta(
    bill: &BillBreakdown,
    base: &BillBreakdown,
) -> Result<EquityDelta, BillingError> {
    if base.total() <= Money::ZERO {
        return Err(BillingError::ZeroBaseBill);
    }
    Ok(EquityDelta {
        base_total: base.total(),
        new_total: bill.total(),
    })
}

/// Revenue-neutrality audit for one (scenario, factor) cell.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct RevenueAudit {
    pub target: Money,
    pub collected: Money,
    pub households: u64,
    pub groups: u64,
}

impl RevenueAudit {
    pub fn residual(&self) -> Money {
        self.collected - self.target
    }

    /// Tolerance: half a quantum per household plus one quantum per group line.
    /// Compared exactly (both sides doubled to avoid the half).
    pub fn passes(&self) -> bool {
        let residual = self.residual().quanta().unsigned_abs() as u128;
        2 * residual <= self.households as u128 + 2 * self.groups as u128
    }

    pub fn tolerance_description(&self) -> String {
        format!(
            "{}.{} quanta",
            (self.households + 2 * self.groups) / 2,
            if self.households % 2 == 1 { "5" } else { "0" }
        )
    }
}

/// Audit the summed bill totals of one (scenario, factor) cell against the
/// recovery target.
pub fn audit_revenue<I>(bill_totals: I, households: u64, groups: u64, target: Money) -> RevenueAudit
where
    I: IntoIterator<Item = Money>,
{
    let collected: Money = bill_totals.into_iter().sum();
    RevenueAudit {
        target,
        collected,
        households,
        groups,
    }
}
