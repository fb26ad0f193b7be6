//! Command-line front end: synthesize populations, validate inputs, solve
//! scenario rates, sweep the scenario x redistribution-factor grid, emit the
//! report tables and re-verify bill exports.
//!
//! Exit codes: 0 success, 1 validation failure, 2 audit failure.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tariffsim::config::{self, DataSource, RunConfig};
use tariffsim::domain::attribute_csv_fields;
use tariffsim::money::{Money, Rational};
use tariffsim::pipeline::{
    self, calibration_split, prepare_csv_data, prepare_synth_data, resolve_inputs, PreparedData,
};
use tariffsim::report;
use tariffsim::synthpop::Synthesizer;
use tariffsim::tariff::{calibrate_tou, solve_scenario, BaseCaseInputs, TariffRates};

#[derive(Parser)]
#[command(name = "tariffsim", version, about = "Grid tariff simulation engine")]
struct Cli {
    /// Size of the worker thread pool (affects speed only, never output)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the configuration's out_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the synthetic-population seed
    #[arg(long)]
    seed: Option<u64>,
    /// Fail on unmapped attribute combinations instead of excluding them
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population: attributes.csv + metering.csv
    Synth {
        /// Population spec (TOML)
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the household count
        #[arg(long)]
        households: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate the rule table and input data
    Validate(ConfigArgs),
    /// Solve and print the tariff rates of every scenario
    Solve(ConfigArgs),
    /// Run the full scenario x factor sweep with revenue audits
    Sweep {
        #[command(flatten)]
        common: ConfigArgs,
        /// Also export per-household bills for one cell, e.g. "55pct-volumetric@0.5"
        #[arg(long)]
        export_bills: Option<String>,
    },
    /// Emit the four report tables from a full sweep
    Report(ConfigArgs),
    /// Re-verify a per-household bill export against the configured target
    Audit {
        #[command(flatten)]
        common: ConfigArgs,
        /// Bill export CSV produced by `sweep --export-bills`
        #[arg(long)]
        bills: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth {
            spec,
            out,
            households,
            seed,
        } => cmd_synth(&spec, &out, households, seed),
        Command::Validate(args) => cmd_validate(&args),
        Command::Solve(args) => cmd_solve(&args),
        Command::Sweep {
            common,
            export_bills,
        } => cmd_sweep(&common, export_bills.as_deref()),
        Command::Report(args) => cmd_report(&args),
        Command::Audit { common, bills } => cmd_audit(&common, &bills),
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut config = config::load_run_config(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if args.strict {
        config.strict = true;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        if let Some(DataSource::Synth(spec)) = &mut config.data {
            spec.seed = seed;
        }
    }
    Ok(config)
}

fn cmd_synth(
    spec_path: &Path,
    out: &Path,
    households: Option<u64>,
    seed: Option<u64>,
) -> Result<ExitCode> {
    let mut spec = config::load_synth_spec(spec_path)
        .with_context(|| format!("loading {}", spec_path.display()))?;
    if let Some(n) = households {
        spec.households = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| anyhow::anyhow!(e))?;
    fs::create_dir_all(out)?;
    let synth = Synthesizer::new(spec)?;

    let mut attrs = BufWriter::new(File::create(out.join("attributes.csv"))?);
    writeln!(
        attrs,
        "household_id,dwelling,area_band,occupancy,income_band,hp,ev"
    )?;
    for i in 0..synth.households() {
        let h = synth.household(i);
        let fields = attribute_csv_fields(&synth.household_id(i), &h.attrs);
        writeln!(attrs, "{}", fields.join(","))?;
    }
    attrs.flush()?;

    let mut meter = BufWriter::new(File::create(out.join("metering.csv"))?);
    writeln!(meter, "household_id,hour,kwh")?;
    for i in 0..synth.households() {
        let id = synth.household_id(i);
        let profile = synth.profile(i);
        for (hour, &wh) in profile.energy_wh.iter().enumerate() {
            writeln!(meter, "{id},{hour},{}.{:03}", wh / 1000, wh % 1000)?;
        }
    }
    meter.flush()?;
    println!(
        "wrote {} households x {} hours to {}",
        synth.households(),
        synth.spec().year_hours,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: &ConfigArgs) -> Result<ExitCode> {
    let config = load_config(args)?;
    let mut problems = 0usize;

    let rule_report = config.rules.validate();
    if rule_report.is_empty() {
        println!(
            "rule table: ok ({} admitted groups, {} rules)",
            config.rules.admitted_count(),
            config.rules.rules().len()
        );
    } else {
        problems += 1;
        println!("rule table problems:\n{rule_report}");
    }

    match config.data.as_ref() {
        None => {
            println!("no data source configured (rate solving from pinned totals only)");
        }
        Some(DataSource::Synth(spec)) => {
            println!(
                "synthetic source: {} households, seed {}, {} rows",
                spec.households,
                spec.seed,
                spec.rows.len()
            );
        }
        Some(DataSource::Csv {
            attributes,
            metering,
            year_hours,
        }) => {
            let data = prepare_csv_data(
                attributes,
                metering,
                *year_hours,
                &config.rules,
                config.scenario_spec.tou.peak_fraction,
            )?;
            println!(
                "data: {} households kept, {} parse issues, {} excluded",
                data.energies.len(),
                data.parse_issues.len(),
                data.exclusions.len()
            );
            for issue in data.parse_issues.iter().take(20) {
                println!("  line {}: {}", issue.line, issue.message);
            }
            for entry in data.exclusions.iter().take(20) {
                println!("  excluded {}: {}", entry.household_id, entry.reason);
            }
            if !data.parse_issues.is_empty() || (config.strict && !data.exclusions.is_empty()) {
                problems += 1;
            }
        }
    }

    if problems == 0 {
        println!("validation: ok");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("validation: FAILED");
        Ok(ExitCode::from(1))
    }
}

/// Solve rates either from pinned totals plus an explicit peak-energy share,
/// or from prepared data.
fn solve_rates(config: &RunConfig) -> Result<Vec<TariffRates>> {
    let spec = &config.scenario_spec;
    let dataless = spec.base.household_count.is_some()
        && spec.base.total_consumption_wh.is_some()
        && spec.tou.peak_energy_share.is_some();
    let (inputs, peak_wh, base_wh) = if dataless {
        let inputs = BaseCaseInputs {
            flat_rate: spec.base.flat_rate,
            base_subscription: spec.base.subscription,
            total_energy_wh: spec.base.total_consumption_wh.unwrap(),
            households: spec.base.household_count.unwrap(),
            total_cost_override: spec.base.total_cost,
        };
        let share = spec.tou.peak_energy_share.unwrap();
        let peak = share
            .mul(&Rational::from_integer(inputs.total_energy_wh as i128))
            .round_half_even() as u64;
        let base = inputs.total_energy_wh - peak;
        (inputs, peak, base)
    } else {
        let data = prepare(config)?;
        let inputs = resolve_inputs(&spec.base, &data);
        let (p, b) = calibration_split(&inputs, &data);
        (inputs, p, b)
    };
    let mut out = Vec::new();
    for def in &spec.scenarios {
        let rho = def.recovery_factor.unwrap_or(spec.tou.recovery_factor);
        let mode = def.mode.unwrap_or(spec.tou.mode);
        let calibration = calibrate_tou(&inputs, rho, peak_wh, base_wh, mode)?;
        out.push(solve_scenario(
            &inputs,
            &def.name,
            &def.volumetric_share,
            calibration,
            peak_wh,
            base_wh,
        )?);
    }
    Ok(out)
}

fn cmd_solve(args: &ConfigArgs) -> Result<ExitCode> {
    let config = load_config(args)?;
    let rates = solve_rates(&config)?;
    print!("{}", report::rates_table(&rates));
    Ok(ExitCode::SUCCESS)
}

fn prepare(config: &RunConfig) -> Result<PreparedData> {
    let source = config
        .data
        .as_ref()
        .context("this operation needs household data; configure synth or attributes+metering")?;
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
            config.scenario_spec.tou.peak_fraction,
        )?,
        DataSource::Synth(spec) => {
            let synth = Synthesizer::new(spec.clone())?;
            prepare_synth_data(
                &synth,
                &config.rules,
                config.scenario_spec.tou.peak_fraction,
            )?
        }
    };
    if config.strict && !data.exclusions.is_empty() {
        bail!(
            "{} households could not be classified (strict mode)",
            data.exclusions.len()
        );
    }
    Ok(data)
}

fn write_logs(out_dir: &Path, data: &PreparedData) -> Result<()> {
    if !data.parse_issues.is_empty() {
        let mut w = BufWriter::new(File::create(out_dir.join("issues.csv"))?);
        writeln!(w, "line,household_id,message")?;
        for i in &data.parse_issues {
            writeln!(
                w,
                "{},{},{:?}",
                i.line,
                i.household_id.as_deref().unwrap_or(""),
                i.message
            )?;
        }
    }
    if !data.exclusions.is_empty() {
        let mut w = BufWriter::new(File::create(out_dir.join("exclusions.csv"))?);
        writeln!(w, "household_id,reason")?;
        for e in &data.exclusions {
            writeln!(w, "{},{}", e.household_id, e.reason)?;
        }
    }
    Ok(())
}

fn run_full(config: &RunConfig) -> Result<(PreparedData, pipeline::SweepResult)> {
    let data = prepare(config)?;
    let spec = &config.scenario_spec;
    let inputs = resolve_inputs(&spec.base, &data);
    let (peak_wh, base_wh) = calibration_split(&inputs, &data);
    let result = pipeline::sweep(
        &inputs,
        &spec.tou,
        &spec.scenarios,
        &config.factors,
        &data,
        peak_wh,
        base_wh,
    )?;
    Ok((data, result))
}

fn cmd_sweep(args: &ConfigArgs, export_bills: Option<&str>) -> Result<ExitCode> {
    let config = load_config(args)?;
    let (data, result) = run_full(&config)?;
    fs::create_dir_all(&config.out_dir)?;
    fs::write(
        config.out_dir.join("sweep_cells.csv"),
        report::sweep_cells_table(&result),
    )?;
    fs::write(
        config.out_dir.join("audits.csv"),
        report::audit_table(&result),
    )?;
    fs::write(
        config.out_dir.join("rates.csv"),
        report::rates_table(&result.rates),
    )?;
    write_logs(&config.out_dir, &data)?;

    if let Some(cell) = export_bills {
        let (scenario, factor) = cell
            .split_once('@')
            .context("--export-bills expects <scenario>@<factor>")?;
        let factor =
            Rational::from_decimal_str(factor).map_err(|e| anyhow::anyhow!("factor: {e}"))?;
        let rates = result
            .rates
            .iter()
            .find(|r| r.scenario == scenario)
            .with_context(|| format!("unknown scenario {scenario:?}"))?;
        let path = config.out_dir.join(format!(
            "bills_{}_r{}.csv",
            scenario,
            pipeline::format_factor(&factor)
        ));
        let file = BufWriter::new(File::create(&path)?);
        pipeline::write_bill_export(file, &data, rates, &factor)?;
        println!("bill export: {}", path.display());
    }

    println!(
        "sweep: {} cells, {} audits, {} households",
        result.cells.len(),
        result.audits.len(),
        data.energies.len()
    );
    if result.all_audits_pass() {
        println!("audits: all pass");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("audits: FAILURES (see audits.csv)");
        Ok(ExitCode::from(2))
    }
}

fn cmd_report(args: &ConfigArgs) -> Result<ExitCode> {
    let config = load_config(args)?;
    let (data, result) = run_full(&config)?;
    fs::create_dir_all(&config.out_dir)?;
    fs::write(
        config.out_dir.join("avg_bills.csv"),
        report::avg_bill_table(&result),
    )?;
    fs::write(
        config.out_dir.join("component_shares.csv"),
        report::component_share_table(&result),
    )?;
    fs::write(
        config.out_dir.join("deltas.csv"),
        report::delta_table(&result),
    )?;
    fs::write(
        config.out_dir.join("aggregate_base_case.csv"),
        report::aggregate_table(&result),
    )?;
    fs::write(
        config.out_dir.join("audits.csv"),
        report::audit_table(&result),
    )?;
    write_logs(&config.out_dir, &data)?;
    println!("report tables written to {}", config.out_dir.display());
    if result.all_audits_pass() {
        Ok(ExitCode::SUCCESS)
    } else {
        println!("audits: FAILURES (see audits.csv)");
        Ok(ExitCode::from(2))
    }
}

fn cmd_audit(args: &ConfigArgs, bills: &Path) -> Result<ExitCode> {
    let config = load_config(args)?;
    let file = BufReader::new(File::open(bills)?);
    let mut lines = file.lines();
    let header = lines.next().context("empty bill export")??;
    if header.trim() != "group,status,tech,scenario,factor,subscription,offpeak,peak,total" {
        bail!("unexpected bill export header: {header}");
    }
    // per (scenario, factor): household count, distinct groups, summed totals
    let mut cells: BTreeMap<(String, String), (u64, std::collections::BTreeSet<String>, i64)> =
        BTreeMap::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            bail!("malformed bill row: {line}");
        }
        let total = Money::from_dkk_str(fields[8]).map_err(|e| anyhow::anyhow!("total: {e}"))?;
        let entry = cells
            .entry((fields[3].to_string(), fields[4].to_string()))
            .or_insert_with(|| (0, Default::default(), 0));
        entry.0 += 1;
        entry.1.insert(format!("{}/{}", fields[1], fields[2]));
        entry.2 += total.quanta();
    }
    if cells.is_empty() {
        bail!("bill export has no rows");
    }

    // the recovery target: pinned totals if available, else measured data
    let spec = &config.scenario_spec;
    let target = if let Some(t) = spec.base.total_cost {
        Rational::from_integer(t.quanta() as i128)
    } else if let (Some(n), Some(q)) = (spec.base.household_count, spec.base.total_consumption_wh) {
        let inputs = BaseCaseInputs {
            flat_rate: spec.base.flat_rate,
            base_subscription: spec.base.subscription,
            total_energy_wh: q,
            households: n,
            total_cost_override: None,
        };
        inputs.total_cost()
    } else {
        let data = prepare(&config)?;
        resolve_inputs(&spec.base, &data).total_cost()
    };
    let target = Money::from_quanta(target.round_half_even() as i64);

    let mut all_pass = true;
    for ((scenario, factor), (count, groups, total_quanta)) in &cells {
        let collected = Money::from_quanta(*total_quanta);
        let residual = (collected - target).quanta();
        // export rows are rounded to 0.01 DKK, so the re-summation budget is
        // half of that per household on top of the internal half quantum
        let tolerance = (count * 100 + count) / 2 + groups.len() as u64;
        let pass = residual.unsigned_abs() <= tolerance;
        if !pass {
            all_pass = false;
        }
        println!(
            "{scenario} r={factor}: households={count} collected={} target={} residual={} quanta (tolerance {tolerance}) [{}]",
            collected.format_dkk(2),
            target.format_dkk(2),
            residual,
            if pass { "pass" } else { "FAIL" },
        );
    }
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}
