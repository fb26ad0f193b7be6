//! Hourly metering data: parsing, cleaning, system load and per-group annual
//! aggregation.
//!
//! Energy is integer watt-hours throughout, so every aggregate is exact and
//! independent of summation order and worker count.

use crate::domain::{GroupKey, HouseholdAttributes, RuleTable};
use crate::money::div_round_half_even;
use crate::tariff::PeakWindow;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Read;

/// Number of faulty hours above which a profile is rebuilt wholesale from its
/// group average instead of having individual slots filled.
pub const FAULTY_REBUILD_THRESHOLD: u32 = 1000;

/// One household-year of hourly energy with a faulty-slot mask.
/// Faulty slots carry zero energy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HourlyProfile {
    pub household_id: String,
    pub energy_wh: Vec<u32>,
    pub faulty: Vec<bool>,
}

impl HourlyProfile {
    pub fn new(household_id: String, hours: usize) -> Self {
        HourlyProfile {
            household_id,
            energy_wh: vec![0; hours],
            faulty: vec![true; hours],
        }
    }

    /// A fully clean profile from explicit slot values.
    pub fn from_slots(household_id: String, energy_wh: Vec<u32>) -> Self {
        let hours = energy_wh.len();
        HourlyProfile {
            household_id,
            energy_wh,
            faulty: vec![false; hours],
        }
    }

    pub fn hours(&self) -> usize {
        self.energy_wh.len()
    }

    pub fn faulty_count(&self) -> u32 {
        self.faulty.iter().filter(|&&f| f).count() as u32
    }

    pub fn annual_wh(&self) -> u64 {
        self.energy_wh.iter().map(|&e| e as u64).sum()
    }
}

/// A problem with one input row; never aborts the parse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseIssue {
    pub line: u64,
    pub household_id: Option<String>,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum MeteringError {
    #[error("unreadable metering header: {0}")]
    Format(String),
    #[error("no usable donor data for group {group} at hour {hour}")]
    EmptyGroup { group: String, hour: u32 },
    #[error("profiles with mixed year lengths: {0} vs {1} hours")]
    MixedYearLength(usize, usize),
    #[error("household {household}: {source}")]
    Unclassifiable {
        household: String,
        source: crate::domain::DomainError,
    },
    #[error("household {0} has no attributes record")]
    MissingAttributes(String),
}

/// Parse a metering CSV (`household_id,hour,kwh`, rows in any order) into one
/// profile per household. Missing slots stay faulty; malformed rows, negative
/// or empty energies and duplicate slots become issue-log entries.
pub fn parse_metering<R: Read>(
    reader: R,
    hours: usize,
) -> Result<(Vec<HourlyProfile>, Vec<ParseIssue>), MeteringError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    {
        let headers = rdr
            .headers()
            .map_err(|e| MeteringError::Format(e.to_string()))?;
        let expected = ["household_id", "hour", "kwh"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
            return Err(MeteringError::Format(format!(
                "expected header household_id,hour,kwh; got {:?}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut profiles: Vec<HourlyProfile> = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    let mut issues = Vec::new();
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                issues.push(ParseIssue {
                    line: e.position().map(|p| p.line()).unwrap_or_default(),
                    household_id: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or_default();
        if record.len() != 3 {
            issues.push(ParseIssue {
                line,
                household_id: None,
                message: format!("expected 3 fields, got {}", record.len()),
            });
            continue;
        }
        let id = record[0].trim();
        if id.is_empty() {
            issues.push(ParseIssue {
                line,
                household_id: None,
                message: "empty household_id".into(),
            });
            continue;
        }
        let hour: usize = match record[1].trim().parse::<u32>() {
            Ok(h) if (h as usize) < hours => h as usize,
            Ok(h) => {
                issues.push(ParseIssue {
                    line,
                    household_id: Some(id.into()),
                    message: format!("hour {h} outside [0, {hours})"),
                });
                continue;
            }
            Err(_) => {
                issues.push(ParseIssue {
                    line,
                    household_id: Some(id.into()),
                    message: format!("unparseable hour {:?}", &record[1]),
                });
                continue;
            }
        };
        let idx = *by_id.entry(id.to_string()).or_insert_with(|| {
            profiles.push(HourlyProfile::new(id.to_string(), hours));
            profiles.len() - 1
        });
        let profile = &mut profiles[idx];
        if !profile.faulty[hour] {
            issues.push(ParseIssue {
                line,
                household_id: Some(id.into()),
                message: format!("duplicate slot for hour {hour}; first value kept"),
            });
            continue;
        }
        match parse_kwh_field(record[2].trim()) {
            KwhField::Valid(wh) => {
                profile.energy_wh[hour] = wh;
                profile.faulty[hour] = false;
            }
            KwhField::FaultySentinel(reason) => {
                // slot stays faulty (energy zero) but is recorded
                issues.push(ParseIssue {
                    line,
                    household_id: Some(id.into()),
                    message: reason,
                });
            }
            KwhField::Malformed(reason) => {
                issues.push(ParseIssue {
                    line,
                    household_id: Some(id.into()),
                    message: reason,
                });
            }
        }
    }
    Ok((profiles, issues))
}

enum KwhField {
    Valid(u32),
    FaultySentinel(String),
    Malformed(String),
}

/// kwh field contract: decimal with at most 3 fraction digits, converted
/// exactly to Wh; empty or negative marks the slot faulty.
fn parse_kwh_field(s: &str) -> KwhField {
    if s.is_empty() {
        return KwhField::FaultySentinel("empty kwh field; slot marked faulty".into());
    }
    if let Some(rest) = s.strip_prefix('-') {
        if rest.chars().any(|c| c.is_ascii_digit()) {
            return KwhField::FaultySentinel(format!("negative kwh {s:?}; slot marked faulty"));
        }
        return KwhField::Malformed(format!("unparseable kwh {s:?}"));
    }
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return KwhField::Malformed(format!("unparseable kwh {s:?}"));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return KwhField::Malformed(format!("unparseable kwh {s:?}"));
    }
    if frac_part.len() > 3 {
        return KwhField::Malformed(format!("kwh {s:?} has more than 3 fraction digits"));
    }
    let mut wh: u64 = 0;
    for c in int_part.chars() {
        wh = match wh
            .checked_mul(10)
            .and_then(|w| w.checked_add((c as u8 - b'0') as u64))
        {
            Some(w) => w,
            None => return KwhField::Malformed(format!("kwh {s:?} out of range")),
        };
    }
    for i in 0..3 {
        let digit = frac_part.as_bytes().get(i).map(|b| b - b'0').unwrap_or(0);
        wh = match wh.checked_mul(10).and_then(|w| w.checked_add(digit as u64)) {
            Some(w) => w,
            None => return KwhField::Malformed(format!("kwh {s:?} out of range")),
        };
    }
    match u32::try_from(wh) {
        Ok(w) => KwhField::Valid(w),
        Err(_) => KwhField::Malformed(format!("kwh {s:?} exceeds the slot range")),
    }
}

/// Why a household was dropped during cleaning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExclusionEntry {
    pub household_id: String,
    pub reason: String,
}

/// Cleaning result: profiles free of faulty slots plus bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct CleanOutcome {
    pub profiles: Vec<HourlyProfile>,
    pub exclusions: Vec<ExclusionEntry>,
    pub rebuilt_households: u64,
    pub filled_slots: u64,
}

/// Apply the cleaning rule: profiles with more than
/// [`FAULTY_REBUILD_THRESHOLD`] faulty hours are replaced wholesale by their
/// group's average profile; profiles with at most that many have only their
/// faulty slots filled with the group's per-hour average. Donor averages use
/// the values present before any rebuilding, over slots that are non-faulty
/// in the donor. Unclassifiable households land in the exclusion report.
pub fn clean_profiles(
    profiles: Vec<HourlyProfile>,
    attributes: &BTreeMap<String, HouseholdAttributes>,
    table: &RuleTable,
) -> Result<CleanOutcome, MeteringError> {
    let hours = match profiles.first() {
        Some(p) => p.hours(),
        None => return Ok(CleanOutcome::default()),
    };
    for p in &profiles {
        if p.hours() != hours {
            return Err(MeteringError::MixedYearLength(hours, p.hours()));
        }
    }

    let mut exclusions = Vec::new();
    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, p) in profiles.iter().enumerate() {
        match attributes.get(&p.household_id) {
            Some(attrs) => match table.key_of(attrs) {
                Some(key) => groups.entry(key).or_default().push(i),
                None => exclusions.push(ExclusionEntry {
                    household_id: p.household_id.clone(),
                    reason: format!("unmapped combination {}", attrs.tuple()),
                }),
            },
            None => exclusions.push(ExclusionEntry {
                household_id: p.household_id.clone(),
                reason: "no attributes record".into(),
            }),
        }
    }

    let group_list: Vec<(GroupKey, Vec<usize>)> = groups.into_iter().collect();
    let cleaned_groups: Result<Vec<Vec<(usize, HourlyProfile)>>, MeteringError> = group_list
        .par_iter()
        .map(|(key, members)| clean_group(*key, members, &profiles, table, hours))
        .collect();

    let mut slots: Vec<Option<HourlyProfile>> = vec![None; profiles.len()];
    let mut rebuilt = 0u64;
    let mut filled = 0u64;
    for group in cleaned_groups? {
        for (idx, profile) in group {
            let before = profiles[idx].faulty_count();
            if before > FAULTY_REBUILD_THRESHOLD {
                rebuilt += 1;
            } else {
                filled += before as u64;
            }
            slots[idx] = Some(profile);
        }
    }
    let cleaned: Vec<HourlyProfile> = slots.into_iter().flatten().collect();
    Ok(CleanOutcome {
        profiles: cleaned,
        exclusions,
        rebuilt_households: rebuilt,
        filled_slots: filled,
    })
}

fn clean_group(
    key: GroupKey,
    members: &[usize],
    profiles: &[HourlyProfile],
    table: &RuleTable,
    hours: usize,
) -> Result<Vec<(usize, HourlyProfile)>, MeteringError> {
    // donor sums per hour over non-faulty slots, before any rebuilding
    let mut sums = vec![0u64; hours];
    let mut counts = vec![0u32; hours];
    for &i in members {
        let p = &profiles[i];
        for h in 0..hours {
            if !p.faulty[h] {
                sums[h] += p.energy_wh[h] as u64;
                counts[h] += 1;
            }
        }
    }
    let donor_mean = |h: usize| -> Result<u32, MeteringError> {
        if counts[h] == 0 {
            return Err(MeteringError::EmptyGroup {
                group: table.tuple_of(key).to_string(),
                hour: h as u32,
            });
        }
        Ok(div_round_half_even(sums[h] as i128, counts[h] as i128) as u32)
    };

    let mut out = Vec::with_capacity(members.len());
    for &i in members {
        let p = &profiles[i];
        let faulty = p.faulty_count();
        let cleaned = if faulty == 0 {
            p.clone()
        } else if faulty > FAULTY_REBUILD_THRESHOLD {
            let mut energy = vec![0u32; hours];
            for (h, slot) in energy.iter_mut().enumerate() {
                *slot = donor_mean(h)?;
            }
            HourlyProfile::from_slots(p.household_id.clone(), energy)
        } else {
            let mut fixed = p.clone();
            for h in 0..hours {
                if fixed.faulty[h] {
                    fixed.energy_wh[h] = donor_mean(h)?;
                    fixed.faulty[h] = false;
                }
            }
            fixed
        };
        out.push((i, cleaned));
    }
    Ok(out)
}

/// Per-hour arithmetic mean over non-faulty contributions, rounded half-even
/// to integer Wh.
pub fn category_average_profile<'a, I>(profiles: I) -> Result<HourlyProfile, MeteringError>
where
    I: IntoIterator<Item = &'a HourlyProfile>,
{
    let mut iter = profiles.into_iter();
    let first = match iter.next() {
        Some(p) => p,
        None => {
            return Err(MeteringError::EmptyGroup {
                group: "(empty)".into(),
                hour: 0,
            })
        }
    };
    let hours = first.hours();
    let mut sums = vec![0u64; hours];
    let mut counts = vec![0u32; hours];
    for p in std::iter::once(first).chain(iter) {
        if p.hours() != hours {
            return Err(MeteringError::MixedYearLength(hours, p.hours()));
        }
        for h in 0..hours {
            if !p.faulty[h] {
                sums[h] += p.energy_wh[h] as u64;
                counts[h] += 1;
            }
        }
    }
    let mut energy = vec![0u32; hours];
    for h in 0..hours {
        if counts[h] == 0 {
            return Err(MeteringError::EmptyGroup {
                group: "(average)".into(),
                hour: h as u32,
            });
        }
        energy[h] = div_round_half_even(sums[h] as i128, counts[h] as i128) as u32;
    }
    Ok(HourlyProfile::from_slots("category-average".into(), energy))
}

/// Hour-by-hour total demand over all households, in watt-hours.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemLoad(pub Vec<u64>);

impl SystemLoad {
    pub fn hours(&self) -> usize {
        self.0.len()
    }
}

/// Exact slot-wise sum of the given profiles.
pub fn system_load(profiles: &[HourlyProfile], hours: usize) -> Result<SystemLoad, MeteringError> {
    for p in profiles {
        if p.hours() != hours {
            return Err(MeteringError::MixedYearLength(hours, p.hours()));
        }
    }
    let load = profiles
        .par_iter()
        .fold(
            || vec![0u64; hours],
            |mut acc, p| {
                for (a, &e) in acc.iter_mut().zip(&p.energy_wh) {
                    *a += e as u64;
                }
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
    Ok(SystemLoad(load))
}

/// Annual peak/off-peak energy and household count for one group.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct GroupAnnual {
    pub group: GroupKey,
    pub households: u64,
    pub peak_wh: u64,
    pub base_wh: u64,
}

impl GroupAnnual {
    pub fn total_wh(&self) -> u64 {
        self.peak_wh + self.base_wh
    }
}

/// Per-group annual peak/off-peak tallies. Groups with no households are
/// omitted. Classification failures propagate (run cleaning first to divert
/// unmappable households into the exclusion report instead).
pub fn aggregate_annual(
    profiles: &[HourlyProfile],
    window: &PeakWindow,
    attributes: &BTreeMap<String, HouseholdAttributes>,
    table: &RuleTable,
) -> Result<Vec<GroupAnnual>, MeteringError> {
    let tallies: Result<BTreeMap<GroupKey, (u64, u64, u64)>, MeteringError> = profiles
        .par_iter()
        .fold(
            || Ok(BTreeMap::<GroupKey, (u64, u64, u64)>::new()),
            |acc: Result<_, MeteringError>, p| {
                let mut acc = acc?;
                let attrs = attributes
                    .get(&p.household_id)
                    .ok_or_else(|| MeteringError::MissingAttributes(p.household_id.clone()))?;
                let key = table
                    .key_of(attrs)
                    .ok_or_else(|| MeteringError::Unclassifiable {
                        household: p.household_id.clone(),
                        source: crate::domain::DomainError::UnmappedCombination(attrs.tuple()),
                    })?;
                let (peak, base) = crate::tariff::split_profile(p, window);
                let entry = acc.entry(key).or_insert((0, 0, 0));
                entry.0 += 1;
                entry.1 += peak;
                entry.2 += base;
                Ok(acc)
            },
        )
        .reduce(
            || Ok(BTreeMap::new()),
            |a, b| {
                let (mut a, b) = (a?, b?);
                for (k, v) in b {
                    let entry = a.entry(k).or_insert((0, 0, 0));
                    entry.0 += v.0;
                    entry.1 += v.1;
                    entry.2 += v.2;
                }
                Ok(a)
            },
        );
    Ok(tallies?
        .into_iter()
        .map(|(group, (households, peak_wh, base_wh))| GroupAnnual {
            group,
            households,
            peak_wh,
            base_wh,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AreaBand, Dwelling, IncomeBand, Occupancy};
    use crate::tariff::{detect_peak_hours, PeakWindow};
    use std::fmt::Write as _;

    fn low_attrs() -> HouseholdAttributes {
        HouseholdAttributes::new(
            Dwelling::House,
            AreaBand::A1,
            Occupancy::P1,
            IncomeBand::E1,
            false,
            false,
        )
        .unwrap()
    }

    fn attrs_map(ids: &[&str]) -> BTreeMap<String, HouseholdAttributes> {
        ids.iter().map(|id| (id.to_string(), low_attrs())).collect()
    }

    fn metering_csv(rows: &[(&str, u32, &str)]) -> String {
        let mut s = String::from("household_id,hour,kwh\n");
        for (id, hour, kwh) in rows {
            writeln!(s, "{id},{hour},{kwh}").unwrap();
        }
        s
    }

    #[test]
    fn parse_well_formed_profiles() {
        let mut rows = Vec::new();
        for id in ["a", "b"] {
            for h in 0..48u32 {
                rows.push((id, h, "1.5"));
            }
        }
        let csv = metering_csv(
            &rows
                .iter()
                .map(|(i, h, k)| (*i, *h, *k))
                .collect::<Vec<_>>(),
        );
        let (profiles, issues) = parse_metering(csv.as_bytes(), 48).unwrap();
        assert_eq!(profiles.len(), 2);
        assert!(issues.is_empty());
        assert!(profiles.iter().all(|p| p.faulty_count() == 0));
        assert_eq!(profiles[0].energy_wh[0], 1500);
    }

    #[test]
    fn negative_kwh_marks_slot_faulty_with_issue() {
        let csv = metering_csv(&[("a", 0, "1.0"), ("a", 1, "-0.5")]);
        let (profiles, issues) = parse_metering(csv.as_bytes(), 2).unwrap();
        assert_eq!(profiles.len(), 1);
        assert!(profiles[0].faulty[1]);
        assert_eq!(profiles[0].energy_wh[1], 0);
        assert_eq!(issues.len(), 1);
        assert!(issues[0].message.contains("negative"));
    }

    #[test]
    fn missing_hours_stay_faulty() {
        // 8000 of 8760 hours present -> 760 faulty slots
        let mut s = String::from("household_id,hour,kwh\n");
        for h in 0..8000u32 {
            writeln!(s, "x,{h},0.1").unwrap();
        }
        let (profiles, issues) = parse_metering(s.as_bytes(), 8760).unwrap();
        assert!(issues.is_empty());
        assert_eq!(profiles[0].faulty_count(), 760);
    }

    #[test]
    fn duplicate_slot_keeps_first_value() {
        let csv = metering_csv(&[("a", 0, "1.0"), ("a", 0, "2.0")]);
        let (profiles, issues) = parse_metering(csv.as_bytes(), 1).unwrap();
        assert_eq!(profiles[0].energy_wh[0], 1000);
        assert_eq!(issues.len(), 1);
        assert!(issues[0].message.contains("duplicate"));
    }

    #[test]
    fn header_mismatch_is_fatal() {
        let err = parse_metering("id,h,v\n1,2,3\n".as_bytes(), 10).unwrap_err();
        assert!(matches!(err, MeteringError::Format(_)));
    }

    #[test]
    fn too_many_fraction_digits_rejected() {
        let csv = metering_csv(&[("a", 0, "1.2345")]);
        let (profiles, issues) = parse_metering(csv.as_bytes(), 1).unwrap();
        assert!(profiles[0].faulty[0]);
        assert!(issues[0].message.contains("fraction"));
    }

    #[test]
    fn clean_passthrough_when_no_faults() {
        let table = RuleTable::builtin_danish_2017();
        let p = HourlyProfile::from_slots("a".into(), vec![5, 6, 7]);
        let out = clean_profiles(vec![p.clone()], &attrs_map(&["a"]), table).unwrap();
        assert_eq!(out.profiles, vec![p]);
        assert_eq!(out.rebuilt_households, 0);
        assert_eq!(out.filled_slots, 0);
    }

    #[test]
    fn clean_fills_single_slot_with_donor_mean() {
        let table = RuleTable::builtin_danish_2017();
        let mut faulty = HourlyProfile::from_slots("c".into(), vec![10, 0, 10]);
        faulty.faulty[1] = true;
        faulty.energy_wh[1] = 0;
        let donors = vec![
            HourlyProfile::from_slots("a".into(), vec![10, 100, 10]),
            HourlyProfile::from_slots("b".into(), vec![10, 200, 10]),
            faulty,
        ];
        let out = clean_profiles(donors, &attrs_map(&["a", "b", "c"]), table).unwrap();
        let c = out.profiles.iter().find(|p| p.household_id == "c").unwrap();
        assert_eq!(c.energy_wh[1], 150); // mean of the other two at that hour
        assert_eq!(c.faulty_count(), 0);
        assert_eq!(out.filled_slots, 1);
    }

    #[test]
    fn clean_rebuilds_wholesale_above_threshold() {
        let table = RuleTable::builtin_danish_2017();
        let hours = 1200usize;
        let donor = HourlyProfile::from_slots("a".into(), vec![100; hours]);
        let mut broken = HourlyProfile::new("b".into(), hours);
        // 199 good slots with off-mean values, 1001 faulty
        for h in 0..199 {
            broken.energy_wh[h] = 7777;
            broken.faulty[h] = false;
        }
        assert_eq!(broken.faulty_count(), 1001);
        let out = clean_profiles(vec![donor, broken], &attrs_map(&["a", "b"]), table).unwrap();
        let b = out.profiles.iter().find(|p| p.household_id == "b").unwrap();
        assert_eq!(out.rebuilt_households, 1);
        assert_eq!(b.faulty_count(), 0);
        // wholesale replacement: even the formerly good slots become the
        // donor mean (own pre-rebuild values contribute to it);
        // (7777 + 100) / 2 = 3938.5 rounds half-even to 3938
        assert_eq!(b.energy_wh[0], 3938);
        assert_eq!(b.energy_wh[500], 100);
    }

    #[test]
    fn clean_at_threshold_fills_rather_than_rebuilds() {
        let table = RuleTable::builtin_danish_2017();
        let hours = 1200usize;
        let donor = HourlyProfile::from_slots("a".into(), vec![100; hours]);
        let mut broken = HourlyProfile::new("b".into(), hours);
        for h in 0..hours - 1000 {
            broken.energy_wh[h] = 7777;
            broken.faulty[h] = false;
        }
        assert_eq!(broken.faulty_count(), 1000);
        let out = clean_profiles(vec![donor, broken], &attrs_map(&["a", "b"]), table).unwrap();
        let b = out.profiles.iter().find(|p| p.household_id == "b").unwrap();
        assert_eq!(out.rebuilt_households, 0);
        assert_eq!(b.energy_wh[0], 7777); // kept
        assert_eq!(b.energy_wh[1100], 100); // filled
    }

    #[test]
    fn clean_is_idempotent() {
        let table = RuleTable::builtin_danish_2017();
        let mut p = HourlyProfile::from_slots("a".into(), vec![10, 20, 30, 40]);
        p.faulty[2] = true;
        p.energy_wh[2] = 0;
        let donor = HourlyProfile::from_slots("b".into(), vec![10, 20, 90, 40]);
        let attrs = attrs_map(&["a", "b"]);
        let once = clean_profiles(vec![p, donor], &attrs, table).unwrap();
        let twice = clean_profiles(once.profiles.clone(), &attrs, table).unwrap();
        assert_eq!(once.profiles, twice.profiles);
    }

    #[test]
    fn clean_errors_when_no_donor_exists() {
        let table = RuleTable::builtin_danish_2017();
        let mut p = HourlyProfile::from_slots("a".into(), vec![10, 20, 30]);
        p.faulty[1] = true;
        let err = clean_profiles(vec![p], &attrs_map(&["a"]), table).unwrap_err();
        assert!(matches!(err, MeteringError::EmptyGroup { hour: 1, .. }));
    }

    #[test]
    fn clean_excludes_unmapped_households() {
        let table = RuleTable::builtin_danish_2017();
        let p = HourlyProfile::from_slots("x".into(), vec![1, 2]);
        let mut attrs = BTreeMap::new();
        attrs.insert(
            "x".to_string(),
            HouseholdAttributes::new(
                Dwelling::House,
                AreaBand::A1,
                Occupancy::P3Plus,
                IncomeBand::E1,
                true,
                false,
            )
            .unwrap(),
        );
        let out = clean_profiles(vec![p], &attrs, table).unwrap();
        assert!(out.profiles.is_empty());
        assert_eq!(out.exclusions.len(), 1);
        assert!(out.exclusions[0].reason.contains("unmapped"));
    }

    #[test]
    fn average_profile_examples() {
        let single = HourlyProfile::from_slots("a".into(), vec![1, 2, 3]);
        let avg = category_average_profile([&single]).unwrap();
        assert_eq!(avg.energy_wh, vec![1, 2, 3]);

        let a = HourlyProfile::from_slots("a".into(), vec![1000; 4]);
        let b = HourlyProfile::from_slots("b".into(), vec![3000; 4]);
        let avg = category_average_profile([&a, &b]).unwrap();
        assert_eq!(avg.energy_wh, vec![2000; 4]);

        let a = HourlyProfile::from_slots("a".into(), vec![1]);
        let b = HourlyProfile::from_slots("b".into(), vec![2]);
        let c = HourlyProfile::from_slots("c".into(), vec![4]);
        let avg = category_average_profile([&a, &b, &c]).unwrap();
        assert_eq!(avg.energy_wh, vec![2]); // 2.333 rounds to 2
    }

    #[test]
    fn system_load_examples() {
        let load = system_load(&[], 4).unwrap();
        assert_eq!(load.0, vec![0; 4]);

        let a = HourlyProfile::from_slots("a".into(), vec![1, 2, 3]);
        let b = HourlyProfile::from_slots("b".into(), vec![10, 20, 30]);
        let load = system_load(&[a, b], 3).unwrap();
        assert_eq!(load.0, vec![11, 22, 33]);
    }

    #[test]
    fn system_load_matches_bruteforce_on_random_profiles() {
        let mut profiles = Vec::new();
        let mut x = 123456789u64;
        let hours = 50;
        for i in 0..100 {
            let mut slots = Vec::with_capacity(hours);
            for _ in 0..hours {
                x = x
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                slots.push((x >> 33) as u32 % 10_000);
            }
            profiles.push(HourlyProfile::from_slots(format!("h{i}"), slots));
        }
        let load = system_load(&profiles, hours).unwrap();
        for h in 0..hours {
            let expect: u64 = profiles.iter().map(|p| p.energy_wh[h] as u64).sum();
            assert_eq!(load.0[h], expect);
        }
    }

    #[test]
    fn mixed_year_length_rejected() {
        let a = HourlyProfile::from_slots("a".into(), vec![1, 2]);
        let b = HourlyProfile::from_slots("b".into(), vec![1]);
        assert!(matches!(
            system_load(&[a, b], 2),
            Err(MeteringError::MixedYearLength(2, 1))
        ));
    }

    #[test]
    fn aggregation_partitions_energy() {
        let table = RuleTable::builtin_danish_2017();
        // all energy inside the peak window -> base must be zero
        let p = HourlyProfile::from_slots("a".into(), vec![9, 0, 0, 0]);
        let window = PeakWindow::from_hours(vec![0], 4);
        let out = aggregate_annual(&[p], &window, &attrs_map(&["a"]), table).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].peak_wh, 9);
        assert_eq!(out[0].base_wh, 0);
        assert_eq!(out[0].households, 1);
    }

    #[test]
    fn aggregation_matches_naive_two_pass_tally() {
        let table = RuleTable::builtin_danish_2017();
        let hours = 24usize;
        let mut profiles = Vec::new();
        let mut attrs = BTreeMap::new();
        let keys = table.enumerate_groups().unwrap();
        let mut x = 42u64;
        for i in 0..50 {
            let mut slots = Vec::with_capacity(hours);
            for _ in 0..hours {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(99);
                slots.push((x >> 40) as u32 % 5000);
            }
            let id = format!("h{i}");
            profiles.push(HourlyProfile::from_slots(id.clone(), slots));
            let key = keys[(x % keys.len() as u64) as usize].0;
            attrs.insert(id, table.tuple_of(key).attributes());
        }
        let load = system_load(&profiles, hours).unwrap();
        let window = detect_peak_hours(&load, crate::money::Rational::new(1, 10)).unwrap();
        let got = aggregate_annual(&profiles, &window, &attrs, table).unwrap();

        // naive re-tally
        let mut naive: BTreeMap<GroupKey, (u64, u64, u64)> = BTreeMap::new();
        for p in &profiles {
            let key = table.key_of(&attrs[&p.household_id]).unwrap();
            let mut peak = 0u64;
            for &h in window.hours() {
                peak += p.energy_wh[h as usize] as u64;
            }
            let total = p.annual_wh();
            let e = naive.entry(key).or_default();
            e.0 += 1;
            e.1 += peak;
            e.2 += total - peak;
        }
        assert_eq!(got.len(), naive.len());
        for g in &got {
            let (n, pk, bs) = naive[&g.group];
            assert_eq!((g.households, g.peak_wh, g.base_wh), (n, pk, bs));
            assert_eq!(g.peak_wh + g.base_wh, g.total_wh());
        }
        // partition identity against the system total
        let total_energy: u64 = profiles.iter().map(|p| p.annual_wh()).sum();
        let agg_total: u64 = got.iter().map(|g| g.total_wh()).sum();
        assert_eq!(total_energy, agg_total);
        let window_energy: u64 = window.hours().iter().map(|&h| load.0[h as usize]).sum();
        let agg_peak: u64 = got.iter().map(|g| g.peak_wh).sum();
        assert_eq!(window_energy, agg_peak);
    }
}
