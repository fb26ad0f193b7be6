//! End-to-end CSV ingestion: the metering/attributes files written from a
//! synthetic population must drive the sweep to bit-identical results, and
//! deliberately corrupted data must flow into the issue and exclusion logs
//! without derailing the run.

use std::fmt::Write as _;
use tariffsim::config::{default_factor_grid, BaseCaseConfig};
use tariffsim::domain::{attribute_csv_fields, RuleTable};
use tariffsim::money::{Money, Rate};
use tariffsim::pipeline::{
    calibration_split, prepare_csv_data, prepare_synth_data, resolve_inputs, sweep,
};
use tariffsim::synthpop::{PopulationSpec, Synthesizer};
use tariffsim::tariff::{canonical_scenarios, TouConfig};

fn base_config() -> BaseCaseConfig {
    BaseCaseConfig {
        flat_rate: Rate::from_ore_str("18.25").unwrap(),
        subscription: Money::from_dkk_str("428.8").unwrap(),
        household_count: None,
        total_consumption_wh: None,
        total_cost: None,
    }
}

#[test]
fn csv_roundtrip_matches_streaming_sweep() {
    let mut spec = PopulationSpec::with_defaults(400, 7);
    spec.year_hours = 480; // 20 days; keeps the CSV small
    let synth = Synthesizer::new(spec).unwrap();
    let table = RuleTable::builtin_danish_2017();
    let tou = TouConfig::default();

    // write the two CSVs the synth command would produce
    let dir = tempfile::tempdir().unwrap();
    let attrs_path = dir.path().join("attributes.csv");
    let meter_path = dir.path().join("metering.csv");
    let mut attrs_csv =
        String::from("household_id,dwelling,area_band,occupancy,income_band,hp,ev\n");
    let mut meter_csv = String::from("household_id,hour,kwh\n");
    for i in 0..synth.households() {
        let h = synth.household(i);
        let id = synth.household_id(i);
        writeln!(
            attrs_csv,
            "{}",
            attribute_csv_fields(&id, &h.attrs).join(",")
        )
        .unwrap();
        let profile = synth.profile(i);
        for (hour, &wh) in profile.energy_wh.iter().enumerate() {
            writeln!(meter_csv, "{id},{hour},{}.{:03}", wh / 1000, wh % 1000).unwrap();
        }
    }
    std::fs::write(&attrs_path, attrs_csv).unwrap();
    std::fs::write(&meter_path, meter_csv).unwrap();

    let from_csv =
        prepare_csv_data(&attrs_path, &meter_path, 480, table, tou.peak_fraction).unwrap();
    assert!(from_csv.parse_issues.is_empty());
    assert!(from_csv.exclusions.is_empty());
    let from_synth = prepare_synth_data(&synth, table, tou.peak_fraction).unwrap();

    assert_eq!(from_csv.measured_total_wh, from_synth.measured_total_wh);
    assert_eq!(from_csv.measured_peak_wh, from_synth.measured_peak_wh);
    assert_eq!(from_csv.census, from_synth.census);

    let run = |data: &tariffsim::pipeline::PreparedData| {
        let inputs = resolve_inputs(&base_config(), data);
        let (peak_wh, base_wh) = calibration_split(&inputs, data);
        sweep(
            &inputs,
            &tou,
            &canonical_scenarios(),
            &default_factor_grid(),
            data,
            peak_wh,
            base_wh,
        )
        .unwrap()
    };
    let csv_result = run(&from_csv);
    let synth_result = run(&from_synth);
    assert_eq!(csv_result.cells.len(), synth_result.cells.len());
    for (a, b) in csv_result.cells.iter().zip(&synth_result.cells) {
        assert_eq!(a.scenario, b.scenario);
        assert_eq!(a.group, b.group);
        assert_eq!(
            a.average, b.average,
            "{} r={:?} {}",
            a.scenario, a.factor, a.group
        );
        assert_eq!(a.total, b.total);
    }
    assert!(csv_result.all_audits_pass());
}

#[test]
fn corrupted_rows_flow_into_logs_and_cleaning() {
    let table = RuleTable::builtin_danish_2017();
    let tou = TouConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let attrs_path = dir.path().join("attributes.csv");
    let meter_path = dir.path().join("metering.csv");

    // three proper households plus one with unmapped attributes
    std::fs::write(
        &attrs_path,
        "household_id,dwelling,area_band,occupancy,income_band,hp,ev\n\
         a,house,A1,P1,E1,0,0\n\
         b,house,A1,P1,E1,0,0\n\
         c,house,A1,P1,E1,0,0\n\
         odd,house,A1,P3+,E1,1,0\n",
    )
    .unwrap();
    let hours = 48usize;
    let mut meter = String::from("household_id,hour,kwh\n");
    for id in ["a", "b", "c", "odd"] {
        for h in 0..hours {
            if id == "b" && h == 7 {
                writeln!(meter, "b,7,-1.0").unwrap(); // negative -> faulty slot
                continue;
            }
            if id == "c" && h >= 40 {
                continue; // missing tail -> faulty slots
            }
            writeln!(meter, "{id},{h},1.000").unwrap();
        }
    }
    writeln!(meter, "zzz,9999,1.0").unwrap(); // hour out of range
    std::fs::write(&meter_path, meter).unwrap();

    let data = prepare_csv_data(
        &attrs_path,
        &meter_path,
        hours as u32,
        table,
        tou.peak_fraction,
    )
    .unwrap();
    // "odd" is excluded as unmapped; the negative row and bad hour are issues
    assert_eq!(data.exclusions.len(), 1);
    assert_eq!(data.exclusions[0].household_id, "odd");
    assert_eq!(data.parse_issues.len(), 2);
    assert_eq!(data.energies.len(), 3);
    // b's faulty hour and c's missing tail were filled with donor means (1 kWh)
    let per_household: u64 = 48 * 1000;
    let total: u64 = data.energies.iter().map(|e| e.total_wh()).sum();
    assert_eq!(total, 3 * per_household);
}
