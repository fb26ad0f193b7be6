//! End-to-end orchestration: load or synthesize household data, clean it,
//! detect the peak window, solve every scenario and sweep the redistribution
//! factor grid, auditing revenue neutrality in every cell.

use crate::billing::{
    audit_revenue, bill_base_case, compute_bill, subscription_line, BillBreakdown, RevenueAudit,
};
use crate::config::{BaseCaseConfig, DataSource, RunConfig};
use crate::domain::{GroupKey, HouseholdAttributes, RuleTable, StatusTechGroup};
use crate::metering::{
    aggregate_annual, clean_profiles, parse_metering, system_load, ExclusionEntry, ParseIssue,
};
use crate::money::{div_round_half_even, volumetric_cost, Money, Rational};
use crate::redistribution::{subscription_vector, GroupCensus, RedistributionPolicy};
use crate::synthpop::Synthesizer;
use crate::tariff::{
    calibrate_tou, detect_peak_hours, solve_scenario, split_profile, BaseCaseInputs, ScenarioDef,
    TariffRates, TouConfig,
};
use crate::Error;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

/// One household's annual energy split, ready for billing.
#[derive(Copy, Clone, Debug)]
pub struct HouseholdEnergy {
    pub key: GroupKey,
    pub group: StatusTechGroup,
    pub peak_wh: u64,
    pub base_wh: u64,
}

impl HouseholdEnergy {
    pub fn total_wh(&self) -> u64 {
        self.peak_wh + self.base_wh
    }
}

/// Everything the billing sweep needs about the population.
pub struct PreparedData {
    pub energies: Vec<HouseholdEnergy>,
    pub census: GroupCensus,
    pub peak_window_len: usize,
    pub measured_total_wh: u64,
    pub measured_peak_wh: u64,
    pub parse_issues: Vec<ParseIssue>,
    pub exclusions: Vec<ExclusionEntry>,
}

/// Group-level accumulation for one (scenario, factor) cell.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub scenario: String,
    pub factor: Rational,
    pub group: StatusTechGroup,
    pub households: u64,
    /// group-average bill (components rounded to the quantum; total = sum)
    pub average: BillBreakdown,
    /// exact group totals
    pub total: BillBreakdown,
    /// equity delta vs the group's own base-case average, as a fraction
    pub delta: Rational,
}

#[derive(Clone, Debug)]
pub struct GroupBase {
    pub group: StatusTechGroup,
    pub households: u64,
    pub average: BillBreakdown,
    pub total: BillBreakdown,
}

#[derive(Clone, Debug)]
pub struct AuditRow {
    pub scenario: String,
    pub factor: Rational,
    pub audit: RevenueAudit,
}

/// The full sweep output.
pub struct SweepResult {
    pub inputs: BaseCaseInputs,
    pub rates: Vec<TariffRates>,
    pub factors: Vec<Rational>,
    pub groups: Vec<StatusTechGroup>,
    pub base: BTreeMap<StatusTechGroup, GroupBase>,
    pub cells: Vec<SweepCell>,
    pub audits: Vec<AuditRow>,
    pub parse_issue_count: usize,
    pub exclusion_count: usize,
}

impl SweepResult {
    pub fn cell(
        &self,
        scenario: &str,
        factor: &Rational,
        group: &StatusTechGroup,
    ) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.scenario == scenario && c.factor == *factor && c.group == *group)
    }

    pub fn all_audits_pass(&self) -> bool {
        self.audits.iter().all(|a| a.audit.passes())
    }
}

/// Load and prepare CSV data: parse, clean, split by the detected window.
pub fn prepare_csv_data(
    attributes_path: &Path,
    metering_path: &Path,
    year_hours: u32,
    table: &RuleTable,
    peak_fraction: Rational,
) -> Result<PreparedData, Error> {
    let attrs_file = File::open(attributes_path).map_err(Error::Io)?;
    let (attr_rows, attr_issues) = crate::domain::parse_attributes(BufReader::new(attrs_file))?;
    let attrs: BTreeMap<String, HouseholdAttributes> = attr_rows.into_iter().collect();

    let metering_file = File::open(metering_path).map_err(Error::Io)?;
    let (profiles, mut issues) =
        parse_metering(BufReader::new(metering_file), year_hours as usize)?;
    issues.extend(attr_issues.into_iter().map(|i| ParseIssue {
        line: i.line,
        household_id: None,
        message: format!("attributes: {}", i.message),
    }));

    let outcome = clean_profiles(profiles, &attrs, table)?;
    let load = system_load(&outcome.profiles, year_hours as usize)?;
    let window = detect_peak_hours(&load, peak_fraction)?;
    let annuals = aggregate_annual(&outcome.profiles, &window, &attrs, table)?;
    let measured_total_wh: u64 = annuals.iter().map(|g| g.total_wh()).sum();
    let measured_peak_wh: u64 = annuals.iter().map(|g| g.peak_wh).sum();

    let mut census = GroupCensus::default();
    for g in &annuals {
        census.add(table.classify_key(g.group)?, g.households);
    }
    let energies = outcome
        .profiles
        .par_iter()
        .map(|p| {
            let a = &attrs[&p.household_id];
            let key = table.key_of(a).expect("cleaned profiles are classifiable");
            let group = table.classify_key(key).expect("validated table");
            let (peak_wh, base_wh) = split_profile(p, &window);
            HouseholdEnergy {
                key,
                group,
                peak_wh,
                base_wh,
            }
        })
        .collect();
    Ok(PreparedData {
        energies,
        census,
        peak_window_len: window.len(),
        measured_total_wh,
        measured_peak_wh,
        parse_issues: issues,
        exclusions: outcome.exclusions,
    })
}

/// Prepare a synthetic population without materializing hourly profiles:
/// one streaming pass accumulates the system load, a second splits each
/// household against the detected window.
pub fn prepare_synth_data(
    synth: &Synthesizer,
    table: &RuleTable,
    peak_fraction: Rational,
) -> Result<PreparedData, Error> {
    let hours = synth.spec().year_hours as usize;
    let n = synth.households();
    let load_vec = (0..n)
        .into_par_iter()
        .fold(
            || vec![0u64; hours],
            |mut acc, i| {
                synth.add_hourly_into(i, &mut acc);
                acc
            },
        )
        .reduce(
            || vec![0u64; hours],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let window = detect_peak_hours(&crate::metering::SystemLoad(load_vec), peak_fraction)?;
    let window_hours: Vec<u32> = window.hours().to_vec();

    let energies: Result<Vec<HouseholdEnergy>, Error> = (0..n)
        .into_par_iter()
        .map(|i| {
            let h = synth.household(i);
            let key = table.key_of(&h.attrs).ok_or_else(|| {
                Error::Domain(crate::domain::DomainError::UnmappedCombination(
                    h.attrs.tuple(),
                ))
            })?;
            let group = table.classify_key(key)?;
            let annual = synth.annual_wh(i);
            let peak_wh = synth.energy_in(i, &window_hours);
            Ok(HouseholdEnergy {
                key,
                group,
                peak_wh,
                base_wh: annual - peak_wh,
            })
        })
        .collect();
    let energies = energies?;
    let mut census = GroupCensus::default();
    for e in &energies {
        census.add(e.group, 1);
    }
    let measured_total_wh = energies.par_iter().map(|e| e.total_wh()).sum();
    let measured_peak_wh = energies.par_iter().map(|e| e.peak_wh).sum();
    Ok(PreparedData {
        energies,
        census,
        peak_window_len: window.len(),
        measured_total_wh,
        measured_peak_wh,
        parse_issues: Vec::new(),
        exclusions: Vec::new(),
    })
}

/// Resolve the base-case inputs against measured data totals.
pub fn resolve_inputs(config: &BaseCaseConfig, data: &PreparedData) -> BaseCaseInputs {
    BaseCaseInputs {
        flat_rate: config.flat_rate,
        base_subscription: config.subscription,
        total_energy_wh: config
            .total_consumption_wh
            .unwrap_or(data.measured_total_wh),
        households: config.household_count.unwrap_or(data.energies.len() as u64),
        total_cost_override: config.total_cost,
    }
}

/// Calibration split consistent with the resolved total: the measured peak
/// share applied to the (possibly overridden) total consumption.
pub fn calibration_split(inputs: &BaseCaseInputs, data: &PreparedData) -> (u64, u64) {
    if inputs.total_energy_wh == data.measured_total_wh {
        return (
            data.measured_peak_wh,
            data.measured_total_wh - data.measured_peak_wh,
        );
    }
    let peak = div_round_half_even(
        inputs.total_energy_wh as i128 * data.measured_peak_wh as i128,
        data.measured_total_wh.max(1) as i128,
    ) as u64;
    (peak, inputs.total_energy_wh - peak)
}

/// Sweep every scenario over every redistribution factor.
pub fn sweep(
    inputs: &BaseCaseInputs,
    tou: &TouConfig,
    scenarios: &[ScenarioDef],
    factors: &[Rational],
    data: &PreparedData,
    peak_wh: u64,
    base_wh: u64,
) -> Result<SweepResult, Error> {
    inputs.validate()?;
    let census = &data.census;
    let groups: Vec<StatusTechGroup> = census.counts().keys().copied().collect();
    let group_index: BTreeMap<StatusTechGroup, usize> =
        groups.iter().enumerate().map(|(i, g)| (*g, i)).collect();
    let n_groups = groups.len();

    // base-case bills per group
    let base_totals = data
        .energies
        .par_iter()
        .fold(
            || vec![(0u64, Money::ZERO, Money::ZERO); n_groups],
            |mut acc, e| {
                let bill = bill_base_case(e.total_wh(), inputs);
                let slot = &mut acc[group_index[&e.group]];
                slot.0 += 1;
                slot.1 += bill.subscription;
                slot.2 += bill.offpeak;
                acc
            },
        )
        .reduce(
            || vec![(0u64, Money::ZERO, Money::ZERO); n_groups],
            merge_triples,
        );
    let mut base = BTreeMap::new();
    for (gi, group) in groups.iter().enumerate() {
        let (count, sub, off) = base_totals[gi];
        if count == 0 {
            continue;
        }
        base.insert(
            *group,
            GroupBase {
                group: *group,
                households: count,
                average: BillBreakdown {
                    subscription: avg(sub, count),
                    offpeak: avg(off, count),
                    peak: Money::ZERO,
                },
                total: BillBreakdown {
                    subscription: sub,
                    offpeak: off,
                    peak: Money::ZERO,
                },
            },
        );
    }

    let mut rates_out = Vec::new();
    let mut cells = Vec::new();
    let mut audits = Vec::new();
    let target = Money::from_quanta(inputs.total_cost().round_half_even() as i64);
    let n_households = data.energies.len() as u64;

    for def in scenarios {
        let rho = def.recovery_factor.unwrap_or(tou.recovery_factor);
        let mode = def.mode.unwrap_or(tou.mode);
        let calibration = calibrate_tou(inputs, rho, peak_wh, base_wh, mode)?;
        let rates = solve_scenario(
            inputs,
            &def.name,
            &def.volumetric_share,
            calibration,
            peak_wh,
            base_wh,
        )?;

        // volumetric sums per group are factor-independent
        let vol_sums = data
            .energies
            .par_iter()
            .fold(
                || vec![(0u64, Money::ZERO, Money::ZERO); n_groups],
                |mut acc, e| {
                    let off = volumetric_cost(e.base_wh, rates.offpeak_eff);
                    let pk = volumetric_cost(e.peak_wh, rates.peak_eff);
                    let slot = &mut acc[group_index[&e.group]];
                    slot.0 += 1;
                    slot.1 += off;
                    slot.2 += pk;
                    acc
                },
            )
            .reduce(
                || vec![(0u64, Money::ZERO, Money::ZERO); n_groups],
                merge_triples,
            );

        for factor in factors {
            let policy = RedistributionPolicy::new(*factor)?;
            let mults = subscription_vector(&policy, census)?;
            let mut collected = Money::ZERO;
            for (gi, group) in groups.iter().enumerate() {
                let (count, off_sum, peak_sum) = vol_sums[gi];
                if count == 0 {
                    continue;
                }
                let sub_per_household = subscription_line(&rates, &mults.multiplier(group));
                let sub_sum = Money::from_quanta(sub_per_household.quanta() * count as i64);
                let total = BillBreakdown {
                    subscription: sub_sum,
                    offpeak: off_sum,
                    peak: peak_sum,
                };
                collected += total.total();
                let base_total = base[group].total.total();
                let delta = Rational::new(
                    (total.total() - base_total).quanta() as i128,
                    base_total.quanta() as i128,
                );
                cells.push(SweepCell {
                    scenario: def.name.clone(),
                    factor: *factor,
                    group: *group,
                    households: count,
                    average: BillBreakdown {
                        subscription: sub_per_household,
                        offpeak: avg(off_sum, count),
                        peak: avg(peak_sum, count),
                    },
                    total,
                    delta,
                });
            }
            audits.push(AuditRow {
                scenario: def.name.clone(),
                factor: *factor,
                audit: audit_revenue([collected], n_households, n_groups as u64, target),
            });
        }
        rates_out.push(rates);
    }

    Ok(SweepResult {
        inputs: inputs.clone(),
        rates: rates_out,
        factors: factors.to_vec(),
        groups,
        base,
        cells,
        audits,
        parse_issue_count: data.parse_issues.len(),
        exclusion_count: data.exclusions.len(),
    })
}

fn avg(total: Money, count: u64) -> Money {
    Money::from_quanta(div_round_half_even(total.quanta() as i128, count as i128) as i64)
}

fn merge_triples(
    mut a: Vec<(u64, Money, Money)>,
    b: Vec<(u64, Money, Money)>,
) -> Vec<(u64, Money, Money)> {
    for (x, y) in a.iter_mut().zip(b) {
        x.0 += y.0;
        x.1 += y.1;
        x.2 += y.2;
    }
    a
}

/// Run a full configuration: prepare data, sweep, return the result.
pub fn run_sweep(config: &RunConfig) -> Result<SweepResult, Error> {
    let spec = &config.scenario_spec;
    let source = config.data.as_ref().ok_or(Error::NoDataSource)?;
    let data = match source {
        DataSource::Csv {
            attributes,
            metering,
            year_hours,
        } => prepare_csv_data(
            attributes,
            metering,
            *year_hours,
            &config.rules,
            spec.tou.peak_fraction,
        )?,
        DataSource::Synth(pop_spec) => {
            let synth = Synthesizer::new(pop_spec.clone())?;
            prepare_synth_data(&synth, &config.rules, spec.tou.peak_fraction)?
        }
    };
    if config.strict && !data.exclusions.is_empty() {
        return Err(Error::StrictExclusions(data.exclusions.len()));
    }
    let inputs = resolve_inputs(&spec.base, &data);
    let (peak_wh, base_wh) = calibration_split(&inputs, &data);
    sweep(
        &inputs,
        &spec.tou,
        &spec.scenarios,
        &config.factors,
        &data,
        peak_wh,
        base_wh,
    )
}

/// Stream a per-household bill export for one (scenario, factor) cell.
pub fn write_bill_export<W: Write>(
    mut out: W,
    data: &PreparedData,
    rates: &TariffRates,
    factor: &Rational,
) -> Result<(), Error> {
    let policy = RedistributionPolicy::new(*factor)?;
    let mults = subscription_vector(&policy, &data.census)?;
    writeln!(
        out,
        "group,status,tech,scenario,factor,subscription,offpeak,peak,total"
    )
    .map_err(Error::Io)?;
    let factor_str = format_factor(factor);
    for e in &data.energies {
        let bill = compute_bill(e.peak_wh, e.base_wh, rates, &mults.multiplier(&e.group));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.key.0,
            e.group.status.label(),
            e.group.tech.label(),
            rates.scenario,
            factor_str,
            bill.subscription.format_dkk(2),
            bill.offpeak.format_dkk(2),
            bill.peak.format_dkk(2),
            bill.total().format_dkk(2),
        )
        .map_err(Error::Io)?;
    }
    Ok(())
}

/// Render a factor as its exact decimal (grid factors are tenths).
pub fn format_factor(f: &Rational) -> String {
    let scaled = f.mul(&Rational::from_integer(100));
    if scaled.is_integer() {
        let v = scaled.to_integer();
        if v % 100 == 0 {
            format!("{}", v / 100)
        } else if v % 10 == 0 {
            format!("{}.{}", v / 100, (v % 100) / 10)
        } else {
            format!("{}.{:02}", v / 100, v % 100)
        }
    } else {
        format!("{f}")
    }
}
