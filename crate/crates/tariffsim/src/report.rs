//! Report emission: the average-bill table, the component-share table, the
//! delta table and the base-case aggregate, plus audit and rate listings.
//! All emitters are deterministic: fixed orderings, integer formatting.

use crate::domain::{Status, StatusTechGroup, Tech};
use crate::money::{div_round_half_even, Money, Rational};
use crate::pipeline::{format_factor, SweepResult};
use crate::tariff::TariffRates;
use std::fmt::Write;

fn group_label(g: &StatusTechGroup) -> String {
    format!("{}/{}", g.status.label(), g.tech.label())
}

fn column_key(scenario: &str, factor: &Rational) -> String {
    format!("{scenario}@r{}", format_factor(factor))
}

/// Average grid bill per group: base case plus one column per
/// (scenario, factor), DKK at one decimal.
pub fn avg_bill_table(result: &SweepResult) -> String {
    let mut out = String::from("status,tech,base_case");
    for rates in &result.rates {
        for factor in &result.factors {
            write!(out, ",{}", column_key(&rates.scenario, factor)).unwrap();
        }
    }
    out.push('\n');
    for group in &result.groups {
        write!(
            out,
            "{},{},{}",
            group.status.label(),
            group.tech.label(),
            result.base[group].average.total().format_dkk(1)
        )
        .unwrap();
        for rates in &result.rates {
            for factor in &result.factors {
                let cell = result
                    .cell(&rates.scenario, factor, group)
                    .expect("complete cross product");
                write!(out, ",{}", cell.average.total().format_dkk(1)).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

fn share_percent(part: Money, total: Money) -> String {
    if total <= Money::ZERO {
        return "0.00".into();
    }
    Rational::new(part.quanta() as i128, total.quanta() as i128).format_percent(2)
}

/// Relative share of each tariff cost component in the group-average bill,
/// percent at two decimals. Component rows sum to 100 within rendering
/// rounding.
pub fn component_share_table(result: &SweepResult) -> String {
    let mut out = String::from("component,status,tech");
    for rates in &result.rates {
        for factor in &result.factors {
            write!(out, ",{}", column_key(&rates.scenario, factor)).unwrap();
        }
    }
    out.push('\n');
    for (component, pick) in [("subscription", 0usize), ("offpeak", 1), ("peak", 2)] {
        for group in &result.groups {
            write!(
                out,
                "{},{},{}",
                component,
                group.status.label(),
                group.tech.label()
            )
            .unwrap();
            for rates in &result.rates {
                for factor in &result.factors {
                    let cell = result
                        .cell(&rates.scenario, factor, group)
                        .expect("complete cross product");
                    let total = cell.total.total();
                    let part = match pick {
                        0 => cell.total.subscription,
                        1 => cell.total.offpeak,
                        _ => cell.total.peak,
                    };
                    write!(out, ",{}", share_percent(part, total)).unwrap();
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Percent difference vs the group's own base-case average bill, one row per
/// (scenario, factor), one column per group.
pub fn delta_table(result: &SweepResult) -> String {
    let mut out = String::from("scenario,factor");
    for group in &result.groups {
        write!(out, ",{}", group_label(group)).unwrap();
    }
    out.push('\n');
    for rates in &result.rates {
        for factor in &result.factors {
            write!(out, "{},{}", rates.scenario, format_factor(factor)).unwrap();
            for group in &result.groups {
                let cell = result
                    .cell(&rates.scenario, factor, group)
                    .expect("complete cross product");
                write!(out, ",{}", cell.delta.format_percent(2)).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Base-case aggregate payments (DKK, one decimal): status rows, technology
/// columns, with row, column and grand totals re-summed from the cells
/// (a zero cell means the group is unpopulated).
pub fn aggregate_table(result: &SweepResult) -> String {
    let statuses = [Status::Low, Status::Medium, Status::High];
    let techs = [Tech::Ev, Tech::Hp, Tech::None];
    let lookup = |s: Status, t: Tech| -> Money {
        result
            .base
            .get(&StatusTechGroup::new(s, t))
            .map(|b| b.total.total())
            .unwrap_or(Money::ZERO)
    };
    let mut out = String::from("status,EV,HP,NoTech,total\n");
    let mut col_totals = [Money::ZERO; 3];
    let mut grand = Money::ZERO;
    for s in statuses {
        let mut row_total = Money::ZERO;
        write!(out, "{}", s.label()).unwrap();
        for (ci, t) in techs.into_iter().enumerate() {
            let v = lookup(s, t);
            row_total += v;
            col_totals[ci] += v;
            write!(out, ",{}", v.format_dkk(1)).unwrap();
        }
        grand += row_total;
        writeln!(out, ",{}", row_total.format_dkk(1)).unwrap();
    }
    write!(out, "total").unwrap();
    for c in col_totals {
        write!(out, ",{}", c.format_dkk(1)).unwrap();
    }
    writeln!(out, ",{}", grand.format_dkk(1)).unwrap();
    out
}

/// Long-form per-cell listing: traceable raw sweep output.
pub fn sweep_cells_table(result: &SweepResult) -> String {
    let mut out = String::from(
        "scenario,factor,status,tech,households,avg_subscription,avg_offpeak,avg_peak,avg_total,delta_pct\n",
    );
    for cell in &result.cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            cell.scenario,
            format_factor(&cell.factor),
            cell.group.status.label(),
            cell.group.tech.label(),
            cell.households,
            cell.average.subscription.format_dkk(2),
            cell.average.offpeak.format_dkk(2),
            cell.average.peak.format_dkk(2),
            cell.average.total().format_dkk(2),
            cell.delta.format_percent(2),
        )
        .unwrap();
    }
    out
}

/// Audit listing: one row per (scenario, factor) cell.
pub fn audit_table(result: &SweepResult) -> String {
    let mut out =
        String::from("scenario,factor,target_dkk,collected_dkk,residual_quanta,tolerance,pass\n");
    for row in &result.audits {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.scenario,
            format_factor(&row.factor),
            row.audit.target.format_dkk(2),
            row.audit.collected.format_dkk(2),
            row.audit.residual().quanta(),
            row.audit.tolerance_description(),
            if row.audit.passes() { "pass" } else { "FAIL" },
        )
        .unwrap();
    }
    out
}

/// Solved rates per scenario.
pub fn rates_table(rates: &[TariffRates]) -> String {
    let mut out = String::from(
        "scenario,volumetric_share,fee_dkk,offpeak_ore_per_kwh,peak_ore_per_kwh,scale,calib_offpeak,calib_peak,peak_wh,base_wh\n",
    );
    for r in rates {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            format_share(&r.volumetric_share),
            r.fee.format_dkk(2),
            r.offpeak_eff.format_ore(4),
            r.peak_eff.format_ore(4),
            format_share(&r.scale),
            r.calibration.offpeak.format_ore(4),
            r.calibration.peak.format_ore(4),
            r.peak_wh,
            r.base_wh,
        )
        .unwrap();
    }
    out
}

fn format_share(r: &Rational) -> String {
    // six decimals, trailing zeros trimmed
    let scaled = div_round_half_even(r.numer() * 1_000_000, r.denom());
    let mut s = format!(
        "{}.{:06}",
        scaled.div_euclid(1_000_000),
        scaled.rem_euclid(1_000_000)
    );
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_factor_grid, BaseCaseConfig};
    use crate::domain::RuleTable;
    use crate::money::Rate;
    use crate::pipeline::{calibration_split, prepare_synth_data, resolve_inputs, sweep};
    use crate::synthpop::{PopulationSpec, Synthesizer};
    use crate::tariff::{canonical_scenarios, TouConfig};

    fn small_result() -> SweepResult {
        let pop = PopulationSpec::with_defaults(10_000, 5);
        let synth = Synthesizer::new(pop).unwrap();
        let table = RuleTable::builtin_danish_2017();
        let tou = TouConfig::default();
        let data = prepare_synth_data(&synth, table, tou.peak_fraction).unwrap();
        let base = BaseCaseConfig {
            flat_rate: Rate::from_ore_str("18.25").unwrap(),
            subscription: Money::from_dkk_str("428.8").unwrap(),
            household_count: None,
            total_consumption_wh: None,
            total_cost: None,
        };
        let inputs = resolve_inputs(&base, &data);
        let (peak_wh, base_wh) = calibration_split(&inputs, &data);
        sweep(
            &inputs,
            &tou,
            &canonical_scenarios(),
            &default_factor_grid(),
            &data,
            peak_wh,
            base_wh,
        )
        .unwrap()
    }

    #[test]
    fn tables_have_expected_shape() {
        let result = small_result();
        let bills = avg_bill_table(&result);
        let lines: Vec<&str> = bills.lines().collect();
        assert_eq!(lines.len(), 1 + 8); // header + 8 groups
        assert_eq!(lines[0].split(',').count(), 2 + 1 + 55);

        let shares = component_share_table(&result);
        assert_eq!(shares.lines().count(), 1 + 3 * 8);

        let deltas = delta_table(&result);
        assert_eq!(deltas.lines().count(), 1 + 55);

        let agg = aggregate_table(&result);
        assert_eq!(agg.lines().count(), 1 + 4);

        let audits = audit_table(&result);
        assert!(audits.lines().skip(1).all(|l| l.ends_with(",pass")));
    }

    #[test]
    fn zero_consumption_population_pays_exactly_the_fee() {
        use crate::domain::GroupKey;
        use crate::pipeline::{HouseholdEnergy, PreparedData};
        use crate::redistribution::GroupCensus;
        use crate::tariff::ScenarioDef;
        let table = RuleTable::builtin_danish_2017();
        let groups = table.enumerate_groups().unwrap();
        let energies: Vec<HouseholdEnergy> = (0..3)
            .map(|i| HouseholdEnergy {
                key: GroupKey(i),
                group: groups[i as usize].1,
                peak_wh: 0,
                base_wh: 0,
            })
            .collect();
        let mut census = GroupCensus::default();
        for e in &energies {
            census.add(e.group, 1);
        }
        let data = PreparedData {
            energies,
            census,
            peak_window_len: 1,
            measured_total_wh: 0,
            measured_peak_wh: 0,
            parse_issues: Vec::new(),
            exclusions: Vec::new(),
        };
        let inputs = crate::tariff::BaseCaseInputs {
            flat_rate: Rate::from_ore_str("18.25").unwrap(),
            base_subscription: Money::from_dkk_str("428.8").unwrap(),
            total_energy_wh: 1_000_000, // nonzero total keeps the base share valid
            households: 3,
            total_cost_override: None,
        };
        let result = sweep(
            &inputs,
            &TouConfig::default(),
            &[ScenarioDef::fixed(
                "subs-only",
                crate::money::Rational::ZERO,
            )],
            &[crate::money::Rational::ONE],
            &data,
            70_300,
            929_700,
        )
        .unwrap();
        let fee = result.rates[0].fee;
        for cell in &result.cells {
            assert_eq!(cell.average.total(), fee);
            assert_eq!(cell.average.offpeak, Money::ZERO);
        }
        let table_csv = avg_bill_table(&result);
        for line in table_csv.lines().skip(1) {
            assert!(line.ends_with(&fee.format_dkk(1)), "{line}");
        }
    }

    #[test]
    fn component_shares_sum_to_100() {
        let result = small_result();
        let table = component_share_table(&result);
        let lines: Vec<&str> = table.lines().collect();
        let cols = lines[0].split(',').count();
        let rows: Vec<Vec<f64>> = lines[1..]
            .iter()
            .map(|l| {
                l.split(',')
                    .skip(3)
                    .map(|v| v.parse::<f64>().unwrap())
                    .collect()
            })
            .collect();
        for col in 0..cols - 3 {
            for g in 0..8 {
                let sum: f64 = (0..3).map(|comp| rows[comp * 8 + g][col]).sum();
                // a zero-bill cell (low status, factor 0, pure subscription)
                // renders as all-zero shares
                assert!(
                    (sum - 100.0).abs() < 0.03 || sum == 0.0,
                    "shares sum to {sum}"
                );
            }
        }
    }

    #[test]
    fn aggregate_margins_resum_and_low_ev_is_zero() {
        let result = small_result();
        let table = aggregate_table(&result);
        let lines: Vec<&str> = table.lines().collect();
        let parse_row = |line: &str| -> Vec<f64> {
            line.split(',')
                .skip(1)
                .map(|v| v.parse::<f64>().unwrap())
                .collect()
        };
        let low = parse_row(lines[1]);
        assert_eq!(low[0], 0.0); // EV cell unpopulated for low status
        for line in &lines[1..4] {
            let row = parse_row(line);
            assert!((row[0] + row[1] + row[2] - row[3]).abs() < 0.31);
        }
        let totals = parse_row(lines[4]);
        let grand: f64 = (1..4).map(|i| parse_row(lines[i])[3]).sum();
        assert!((totals[3] - grand).abs() < 0.41);
        // revenue neutrality: grand total ~ T
        let t = result.inputs.total_cost().to_f64() / 10_000.0;
        assert!((totals[3] - t).abs() < 1.0);
    }

    #[test]
    fn delta_table_structure() {
        let result = small_result();
        let table = delta_table(&result);
        let lines: Vec<&str> = table.lines().collect();
        // pure-volumetric rows identical across factors
        let vol_rows: Vec<&&str> = lines[1..]
            .iter()
            .filter(|l| l.starts_with("100pct-volumetric"))
            .collect();
        assert_eq!(vol_rows.len(), 11);
        let strip = |l: &str| l.splitn(3, ',').nth(2).unwrap().to_string();
        let first = strip(vol_rows[0]);
        assert!(vol_rows.iter().all(|l| strip(l) == first));
    }
}
