//! The subscription redistribution factor.
//!
//! Low-financial-status households pay a fraction `r` of the subscription
//! fee; the shortfall is spread uniformly over all other households through
//! the increase multiplier `x = 1 + (1-r) * N_low / N_other`. Multipliers are
//! exact rationals so subscription revenue is conserved identically for
//! every factor; quantization happens once per bill line.

use crate::domain::{Status, StatusTechGroup};
use crate::money::Rational;
use std::collections::BTreeMap;

/// Redistribution policy: the factor `r` in [0, 1]. Eligibility is by
/// classified low financial status.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct RedistributionPolicy {
    pub factor: Rational,
}

impl RedistributionPolicy {
    pub fn new(factor: Rational) -> Result<Self, RedistributionError> {
        if factor < Rational::ZERO || factor > Rational::ONE {
            return Err(RedistributionError::FactorOutOfRange(factor.to_string()));
        }
        Ok(RedistributionPolicy { factor })
    }
}

/// Household counts per populated status/technology group.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroupCensus {
    counts: BTreeMap<StatusTechGroup, u64>,
}

impl GroupCensus {
    pub fn new(counts: BTreeMap<StatusTechGroup, u64>) -> Self {
        GroupCensus { counts }
    }

    pub fn add(&mut self, group: StatusTechGroup, households: u64) {
        *self.counts.entry(group).or_insert(0) += households;
    }

    pub fn counts(&self) -> &BTreeMap<StatusTechGroup, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn low(&self) -> u64 {
        self.counts
            .iter()
            .filter(|(g, _)| g.status == Status::Low)
            .map(|(_, &n)| n)
            .sum()
    }

    pub fn other(&self) -> u64 {
        self.total() - self.low()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RedistributionError {
    #[error("redistribution factor {0} outside [0, 1]")]
    FactorOutOfRange(String),
    #[error("no subsidizing households (factor < 1 with every household low status)")]
    NoSubsidizers,
}

/// The increase multiplier `x = 1 + (1-r) * N_low / N_other` paid by
/// non-low-status households. Exact rational; >= 1 with equality iff r = 1.
pub fn redistribution_multiplier(
    factor: Rational,
    n_low: u64,
    n_other: u64,
) -> Result<Rational, RedistributionError> {
    if factor < Rational::ZERO || factor > Rational::ONE {
        return Err(RedistributionError::FactorOutOfRange(factor.to_string()));
    }
    if n_other == 0 {
        if factor == Rational::ONE || n_low == 0 {
            return Ok(Rational::ONE);
        }
        return Err(RedistributionError::NoSubsidizers);
    }
    let shifted = Rational::ONE
        .sub(&factor)
        .mul(&Rational::new(n_low as i128, n_other as i128));
    Ok(Rational::ONE.add(&shifted))
}

/// Per-group subscription multipliers for one (scenario, factor) pair:
/// `r` for low-status groups, `x` for everyone else.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubscriptionMultipliers {
    per_group: BTreeMap<StatusTechGroup, Rational>,
    pub increase: Rational,
    pub factor: Rational,
    pub n_low: u64,
    pub n_other: u64,
}

impl SubscriptionMultipliers {
    pub fn multiplier(&self, group: &StatusTechGroup) -> Rational {
        match self.per_group.get(group) {
            Some(m) => *m,
            None => {
                if group.status == Status::Low {
                    self.factor
                } else {
                    self.increase
                }
            }
        }
    }

    pub fn per_group(&self) -> &BTreeMap<StatusTechGroup, Rational> {
        &self.per_group
    }

    /// Conservation identity: sum of counts times multipliers equals the
    /// total household count, exactly.
    pub fn conserves(&self, census: &GroupCensus) -> bool {
        let mut sum = Rational::ZERO;
        for (group, &n) in census.counts() {
            sum = sum.add(
                &self
                    .multiplier(group)
                    .mul(&Rational::from_integer(n as i128)),
            );
        }
        sum == Rational::from_integer(census.total() as i128)
    }
}

/// Build the multiplier vector for a policy over a census.
pub fn subscription_vector(
    policy: &RedistributionPolicy,
    census: &GroupCensus,
) -> Result<SubscriptionMultipliers, RedistributionError> {
    let n_low = census.low();
    let n_other = census.other();
    let increase = redistribution_multiplier(policy.factor, n_low, n_other)?;
    let per_group = census
        .counts()
        .keys()
        .map(|g| {
            let m = if g.status == Status::Low {
                policy.factor
            } else {
                increase
            };
            (*g, m)
        })
        .collect();
    Ok(SubscriptionMultipliers {
        per_group,
        increase,
        factor: policy.factor,
        n_low,
        n_other,
    })
}
