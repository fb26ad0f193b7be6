//! File formats: rule tables, scenario files, synthetic-population specs and
//! run configurations, all TOML. Decimal fields are recovered exactly (the
//! shortest round-trip decimal of a TOML float is what the user typed), so
//! shares and money survive parsing without float drift.

use crate::domain::{
    AreaBand, ClassificationRule, Dwelling, IncomeBand, Occupancy, Pattern, RuleTable, Status, Tech,
};
use crate::money::{Money, ParseDecimalError, Rate, Rational};
use crate::synthpop::{CategoryRow, PopulationSpec};
use crate::tariff::{CalibrationMode, ScenarioDef, TouConfig, VolumetricShare};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// An exact decimal from TOML: integer, float (recovered via shortest
/// round-trip) or quoted string.
#[derive(Clone, Debug)]
pub struct Dec(pub Rational);

impl<'de> Deserialize<'de> for Dec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Str(String),
        }
        let raw = Raw::deserialize(deserializer)?;
        let r = match raw {
            Raw::Int(v) => Ok(Rational::from_integer(v as i128)),
            Raw::Float(v) => Rational::from_f64_exact_decimal(v),
            Raw::Str(s) => Rational::from_decimal_str(&s),
        };
        r.map(Dec).map_err(serde::de::Error::custom)
    }
}

impl Dec {
    fn to_money(&self) -> Result<Money, ParseDecimalError> {
        let scaled = self
            .0
            .checked_mul(&Rational::from_integer(
                crate::money::QUANTA_PER_DKK as i128,
            ))
            .ok_or(ParseDecimalError::OutOfRange)?;
        if !scaled.is_integer() {
            return Err(ParseDecimalError::TooManyFractionDigits);
        }
        i64::try_from(scaled.to_integer())
            .map(Money::from_quanta)
            .map_err(|_| ParseDecimalError::OutOfRange)
    }

    fn to_rate(&self) -> Result<Rate, ParseDecimalError> {
        let scaled = self
            .0
            .checked_mul(&Rational::from_integer(
                crate::money::MICRO_ORE_PER_ORE as i128,
            ))
            .ok_or(ParseDecimalError::OutOfRange)?;
        if !scaled.is_integer() {
            return Err(ParseDecimalError::TooManyFractionDigits);
        }
        i64::try_from(scaled.to_integer())
            .map(Rate::from_micro_ore_per_kwh)
            .map_err(|_| ParseDecimalError::OutOfRange)
    }

    /// kWh with up to 3 fraction digits -> exact integer Wh.
    fn to_wh(&self) -> Result<u64, ParseDecimalError> {
        let scaled = self
            .0
            .checked_mul(&Rational::from_integer(1000))
            .ok_or(ParseDecimalError::OutOfRange)?;
        if !scaled.is_integer() {
            return Err(ParseDecimalError::TooManyFractionDigits);
        }
        u64::try_from(scaled.to_integer()).map_err(|_| ParseDecimalError::OutOfRange)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// rule table file
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct RuleTableFile {
    #[allow(dead_code)]
    version: Option<u32>,
    #[serde(default)]
    provenance: String,
    #[serde(default)]
    admitted: Vec<Pattern>,
    #[serde(default, rename = "rule")]
    rules: Vec<ClassificationRule>,
}

pub fn rule_table_from_toml(text: &str) -> Result<RuleTable, String> {
    let file: RuleTableFile = toml::from_str(text).map_err(|e| e.to_string())?;
    if file.admitted.is_empty() {
        return Err("rule table declares no admitted keys".into());
    }
    if file.rules.is_empty() {
        return Err("rule table declares no rules".into());
    }
    Ok(RuleTable::new(file.provenance, &file.admitted, file.rules))
}

pub fn load_rule_table(path: &Path) -> Result<RuleTable, ConfigError> {
    let text = read(path)?;
    rule_table_from_toml(&text).map_err(|message| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

// ---------------------------------------------------------------------------
// scenario file
// ---------------------------------------------------------------------------

/// Base-case knobs before data totals are known.
#[derive(Clone, Debug)]
pub struct BaseCaseConfig {
    pub flat_rate: Rate,
    pub subscription: Money,
    pub household_count: Option<u64>,
    pub total_consumption_wh: Option<u64>,
    pub total_cost: Option<Money>,
}

/// Parsed scenario file: base case, ToU calibration defaults, scenario list.
#[derive(Clone, Debug)]
pub struct ScenarioFileSpec {
    pub base: BaseCaseConfig,
    pub tou: TouConfig,
    pub scenarios: Vec<ScenarioDef>,
}

#[derive(Debug, Deserialize)]
struct ScenarioFileRaw {
    base_case: BaseCaseRaw,
    #[serde(default)]
    tou: TouRaw,
    #[serde(rename = "scenario")]
    scenarios: Vec<ScenarioRaw>,
}

#[derive(Debug, Deserialize)]
struct BaseCaseRaw {
    flat_rate_ore_per_kwh: Dec,
    subscription_dkk: Dec,
    household_count: Option<u64>,
    total_consumption_kwh: Option<Dec>,
    total_cost_dkk: Option<Dec>,
}

#[derive(Debug, Default, Deserialize)]
struct TouRaw {
    recovery_factor: Option<Dec>,
    peak_fraction: Option<Dec>,
    calibration_mode: Option<String>,
    peak_energy_share: Option<Dec>,
}

#[derive(Debug, Deserialize)]
struct ScenarioRaw {
    name: String,
    volumetric_share: toml::Value,
    recovery_factor: Option<Dec>,
    peak_fraction: Option<Dec>,
    calibration_mode: Option<String>,
}

fn parse_mode(s: &str) -> Result<CalibrationMode, String> {
    match s {
        "offpeak-scaled" => Ok(CalibrationMode::OffpeakScaled),
        "peak-share" => Ok(CalibrationMode::PeakShare),
        other => Err(format!(
            "unknown calibration_mode {other:?} (expected offpeak-scaled or peak-share)"
        )),
    }
}

fn parse_share(v: &toml::Value) -> Result<VolumetricShare, String> {
    match v {
        toml::Value::String(s) if s == "base" => Ok(VolumetricShare::BaseCase),
        toml::Value::String(s) => Rational::from_decimal_str(s)
            .map(VolumetricShare::Fixed)
            .map_err(|e| e.to_string()),
        toml::Value::Float(f) => Rational::from_f64_exact_decimal(*f)
            .map(VolumetricShare::Fixed)
            .map_err(|e| e.to_string()),
        toml::Value::Integer(i) => Ok(VolumetricShare::Fixed(Rational::from_integer(*i as i128))),
        other => Err(format!(
            "volumetric_share must be a number or \"base\", got {other}"
        )),
    }
}

pub fn scenario_file_from_toml(text: &str) -> Result<ScenarioFileSpec, String> {
    let raw: ScenarioFileRaw = toml::from_str(text).map_err(|e| e.to_string())?;
    let base = BaseCaseConfig {
        flat_rate: raw
            .base_case
            .flat_rate_ore_per_kwh
            .to_rate()
            .map_err(|e| format!("flat_rate_ore_per_kwh: {e}"))?,
        subscription: raw
            .base_case
            .subscription_dkk
            .to_money()
            .map_err(|e| format!("subscription_dkk: {e}"))?,
        household_count: raw.base_case.household_count,
        total_consumption_wh: raw
            .base_case
            .total_consumption_kwh
            .map(|d| d.to_wh().map_err(|e| format!("total_consumption_kwh: {e}")))
            .transpose()?,
        total_cost: raw
            .base_case
            .total_cost_dkk
            .map(|d| d.to_money().map_err(|e| format!("total_cost_dkk: {e}")))
            .transpose()?,
    };
    let tou = TouConfig {
        recovery_factor: raw
            .tou
            .recovery_factor
            .map(|d| d.0)
            .unwrap_or_else(|| Rational::new(4, 5)),
        peak_fraction: raw
            .tou
            .peak_fraction
            .map(|d| d.0)
            .unwrap_or_else(|| Rational::new(1, 20)),
        mode: raw
            .tou
            .calibration_mode
            .as_deref()
            .map(parse_mode)
            .transpose()?
            .unwrap_or(CalibrationMode::OffpeakScaled),
        peak_energy_share: raw.tou.peak_energy_share.map(|d| d.0),
    };
    if raw.scenarios.is_empty() {
        return Err("scenario list is empty".into());
    }
    let scenarios = raw
        .scenarios
        .into_iter()
        .map(|s| {
            Ok(ScenarioDef {
                name: s.name,
                volumetric_share: parse_share(&s.volumetric_share)?,
                recovery_factor: s.recovery_factor.map(|d| d.0),
                peak_fraction: s.peak_fraction.map(|d| d.0),
                mode: s.calibration_mode.as_deref().map(parse_mode).transpose()?,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    for s in &scenarios {
        if let VolumetricShare::Fixed(v) = &s.volumetric_share {
            if *v < Rational::ZERO || *v > Rational::ONE {
                return Err(format!(
                    "scenario {:?}: volumetric_share {} outside [0, 1]",
                    s.name, v
                ));
            }
        }
    }
    Ok(ScenarioFileSpec {
        base,
        tou,
        scenarios,
    })
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioFileSpec, ConfigError> {
    let text = read(path)?;
    scenario_file_from_toml(&text).map_err(|message| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

// ---------------------------------------------------------------------------
// synthetic population spec
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct SynthRaw {
    seed: u64,
    households: u64,
    #[serde(default)]
    year_hours: Option<u32>,
    #[serde(default)]
    mean_annual_kwh: Option<Dec>,
    #[serde(default)]
    jitter_sigma: Option<f64>,
    #[serde(default)]
    strict: Option<bool>,
    #[serde(default, rename = "row")]
    rows: Vec<RowRaw>,
}

#[derive(Debug, Deserialize)]
struct RowRaw {
    name: String,
    status: Status,
    tech: Tech,
    income: Vec<IncomeBand>,
    area: Vec<AreaBand>,
    #[serde(default)]
    occupancy: Vec<Occupancy>,
    #[serde(default)]
    dwelling: Vec<Dwelling>,
    population_share_pct: Dec,
    consumption_share_pct: Dec,
}

pub fn synth_spec_from_toml(text: &str) -> Result<PopulationSpec, String> {
    let raw: SynthRaw = toml::from_str(text).map_err(|e| e.to_string())?;
    let rows = if raw.rows.is_empty() {
        crate::synthpop::default_category_rows()
    } else {
        raw.rows
            .into_iter()
            .map(|r| CategoryRow {
                name: r.name,
                status: r.status,
                tech: r.tech,
                income: r.income,
                area: r.area,
                occupancy: r.occupancy,
                dwelling: r.dwelling,
                population_share_pct: r.population_share_pct.0,
                consumption_share_pct: r.consumption_share_pct.0,
            })
            .collect()
    };
    let mut spec =
        PopulationSpec::new(raw.households, raw.seed, rows).map_err(|e| e.to_string())?;
    if let Some(h) = raw.year_hours {
        spec.year_hours = h;
    }
    if let Some(m) = raw.mean_annual_kwh {
        spec.mean_annual_kwh = m.0.to_f64();
    }
    if let Some(j) = raw.jitter_sigma {
        spec.jitter_sigma = j;
    }
    if let Some(s) = raw.strict {
        spec.strict = s;
    }
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

pub fn load_synth_spec(path: &Path) -> Result<PopulationSpec, ConfigError> {
    let text = read(path)?;
    synth_spec_from_toml(&text).map_err(|message| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

/// Where household data comes from.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// attributes CSV + metering CSV
    Csv {
        attributes: PathBuf,
        metering: PathBuf,
        year_hours: u32,
    },
    /// streaming synthetic population
    Synth(PopulationSpec),
}

/// A fully resolved run configuration. `data` may be absent for commands
/// that can work from pinned totals alone (rate solving, export audits).
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub rules: RuleTable,
    pub data: Option<DataSource>,
    pub scenario_spec: ScenarioFileSpec,
    pub factors: Vec<Rational>,
    pub out_dir: PathBuf,
    pub strict: bool,
}

#[derive(Debug, Deserialize)]
struct RunRaw {
    rules: Option<PathBuf>,
    attributes: Option<PathBuf>,
    metering: Option<PathBuf>,
    synth: Option<PathBuf>,
    scenarios: PathBuf,
    #[serde(default)]
    factors: Vec<Dec>,
    out_dir: Option<PathBuf>,
    #[serde(default)]
    strict: bool,
    #[serde(default)]
    year_hours: Option<u32>,
}

/// Default redistribution factor grid: 1.0 down to 0.0 in steps of 0.1.
pub fn default_factor_grid() -> Vec<Rational> {
    (0..=10).rev().map(|k| Rational::new(k, 10)).collect()
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = read(path)?;
    let raw: RunRaw = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &PathBuf| -> PathBuf {
        if p.is_absolute() {
            p.clone()
        } else {
            dir.join(p)
        }
    };
    let invalid = |message: String| ConfigError::Invalid {
        path: path.to_path_buf(),
        message,
    };

    let rules = match &raw.rules {
        Some(p) => load_rule_table(&resolve(p))?,
        None => RuleTable::builtin_danish_2017().clone(),
    };
    let data = match (&raw.synth, &raw.attributes, &raw.metering) {
        (Some(s), None, None) => Some(DataSource::Synth(load_synth_spec(&resolve(s))?)),
        (None, Some(a), Some(m)) => Some(DataSource::Csv {
            attributes: resolve(a),
            metering: resolve(m),
            year_hours: raw.year_hours.unwrap_or(8760),
        }),
        (None, None, None) => None,
        _ => {
            return Err(invalid(
                "provide either synth = <spec.toml> or both attributes and metering CSVs".into(),
            ))
        }
    };
    let scenario_spec = load_scenario_file(&resolve(&raw.scenarios))?;
    let factors: Vec<Rational> = if raw.factors.is_empty() {
        default_factor_grid()
    } else {
        raw.factors.iter().map(|d| d.0).collect()
    };
    for f in &factors {
        if *f < Rational::ZERO || *f > Rational::ONE {
            return Err(invalid(format!("redistribution factor {f} outside [0, 1]")));
        }
    }
    Ok(RunConfig {
        rules,
        data,
        scenario_spec,
        factors,
        out_dir: raw
            .out_dir
            .map(|p| resolve(&p))
            .unwrap_or_else(|| dir.join("out")),
        strict: raw.strict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_file_parses_with_base_share_and_overrides() {
        let text = r#"
            [base_case]
            flat_rate_ore_per_kwh = 18.25
            subscription_dkk = 428.8
            household_count = 1468686
            total_consumption_kwh = "4150190652.055"

            [tou]
            recovery_factor = 0.8
            peak_fraction = 0.05
            calibration_mode = "offpeak-scaled"

            [[scenario]]
            name = "100pct-subscription"
            volumetric_share = 0.0

            [[scenario]]
            name = "55pct-volumetric"
            volumetric_share = "base"

            [[scenario]]
            name = "100pct-volumetric"
            volumetric_share = 1
            calibration_mode = "peak-share"
        "#;
        let spec = scenario_file_from_toml(text).unwrap();
        assert_eq!(spec.base.flat_rate, Rate::from_ore_str("18.25").unwrap());
        assert_eq!(
            spec.base.subscription,
            Money::from_dkk_str("428.8").unwrap()
        );
        assert_eq!(spec.base.total_consumption_wh, Some(4_150_190_652_055));
        assert_eq!(spec.tou.recovery_factor, Rational::new(4, 5));
        assert_eq!(spec.scenarios.len(), 3);
        assert!(matches!(
            spec.scenarios[1].volumetric_share,
            VolumetricShare::BaseCase
        ));
        assert_eq!(spec.scenarios[2].mode, Some(CalibrationMode::PeakShare));
    }

    #[test]
    fn share_outside_unit_interval_rejected() {
        let text = r#"
            [base_case]
            flat_rate_ore_per_kwh = 18.25
            subscription_dkk = 428.8
            [[scenario]]
            name = "bad"
            volumetric_share = 1.5
        "#;
        let err = scenario_file_from_toml(text).unwrap_err();
        assert!(err.contains("outside"));
    }

    #[test]
    fn empty_scenario_list_rejected() {
        let text = r#"
            [base_case]
            flat_rate_ore_per_kwh = 18.25
            subscription_dkk = 428.8
        "#;
        let err = scenario_file_from_toml(text).unwrap_err();
        assert!(err.contains("scenario"), "{err}");
    }

    #[test]
    fn builtin_rule_table_round_trips_through_loader() {
        let table = rule_table_from_toml(include_str!("../data/rules_dk2017.toml")).unwrap();
        assert_eq!(table.admitted_count(), 90);
        assert_eq!(table.provenance(), "dk-2017-registers");
    }
}
