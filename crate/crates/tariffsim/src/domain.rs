//! Household attributes, the admitted group key space and the rule table that
//! classifies attribute tuples into financial-status / technology groups.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dwelling {
    House,
    Apartment,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AreaBand {
    A1,
    A2,
    A3,
}

impl AreaBand {
    /// Band a raw floor area. Intervals are half-open with boundary values in
    /// the upper band: houses [0,110), [110,146), [146,inf); apartments
    /// [0,66), [66,85), [85,inf).
    pub fn from_area_sqm(dwelling: Dwelling, sqm: u32) -> AreaBand {
        let (lo, hi) = match dwelling {
            Dwelling::House => (110, 146),
            Dwelling::Apartment => (66, 85),
        };
        if sqm < lo {
            AreaBand::A1
        } else if sqm < hi {
            AreaBand::A2
        } else {
            AreaBand::A3
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Occupancy {
    P1,
    P2,
    #[serde(rename = "P3+")]
    P3Plus,
    #[serde(rename = "P5+")]
    P5Plus,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IncomeBand {
    E1,
    E2,
    E3,
}

/// Advanced-equipment dimension. A household owns at most one of the two
/// technologies; tuples with both are outside the admitted space.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tech {
    None,
    Hp,
    Ev,
}

impl Tech {
    pub fn label(self) -> &'static str {
        match self {
            Tech::None => "NoTech",
            Tech::Hp => "HP",
            Tech::Ev => "EV",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Low,
    Medium,
    High,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Low => "Low",
            Status::Medium => "Medium",
            Status::High => "High",
        }
    }
}

/// One of the eight populated financial-status x technology groups.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StatusTechGroup {
    pub status: Status,
    pub tech: Tech,
}

impl StatusTechGroup {
    pub fn new(status: Status, tech: Tech) -> Self {
        StatusTechGroup { status, tech }
    }
}

impl fmt::Display for StatusTechGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.status.label(), self.tech.label())
    }
}

/// The raw attribute tuple of a household.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HouseholdAttributes {
    pub dwelling: Dwelling,
    pub area_band: AreaBand,
    pub occupancy: Occupancy,
    pub income_band: IncomeBand,
    pub heat_pump: bool,
    pub electric_vehicle: bool,
}

impl HouseholdAttributes {
    pub fn new(
        dwelling: Dwelling,
        area_band: AreaBand,
        occupancy: Occupancy,
        income_band: IncomeBand,
        heat_pump: bool,
        electric_vehicle: bool,
    ) -> Result<Self, DomainError> {
        if heat_pump && electric_vehicle {
            return Err(DomainError::HeatPumpAndEv);
        }
        Ok(HouseholdAttributes {
            dwelling,
            area_band,
            occupancy,
            income_band,
            heat_pump,
            electric_vehicle,
        })
    }

    pub fn tech(&self) -> Tech {
        match (self.heat_pump, self.electric_vehicle) {
            (true, _) => Tech::Hp,
            (_, true) => Tech::Ev,
            _ => Tech::None,
        }
    }

    pub fn tuple(&self) -> AttributeTuple {
        AttributeTuple {
            dwelling: self.dwelling,
            area_band: self.area_band,
            occupancy: self.occupancy,
            income_band: self.income_band,
            tech: self.tech(),
        }
    }
}

/// The five-dimensional key underlying the group id space (heat pump and
/// electric vehicle flags collapse to one technology dimension).
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttributeTuple {
    pub dwelling: Dwelling,
    pub area_band: AreaBand,
    pub occupancy: Occupancy,
    pub income_band: IncomeBand,
    pub tech: Tech,
}

impl AttributeTuple {
    pub fn attributes(&self) -> HouseholdAttributes {
        HouseholdAttributes {
            dwelling: self.dwelling,
            area_band: self.area_band,
            occupancy: self.occupancy,
            income_band: self.income_band,
            heat_pump: self.tech == Tech::Hp,
            electric_vehicle: self.tech == Tech::Ev,
        }
    }
}

impl fmt::Display for AttributeTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?};{:?};{};{:?};{}",
            self.dwelling,
            self.area_band,
            match self.occupancy {
                Occupancy::P1 => "P1",
                Occupancy::P2 => "P2",
                Occupancy::P3Plus => "P3+",
                Occupancy::P5Plus => "P5+",
            },
            self.income_band,
            match self.tech {
                Tech::None => "HP0;EV0",
                Tech::Hp => "HP1",
                Tech::Ev => "EV1",
            }
        )
    }
}

/// Dense id of an admitted attribute tuple; indexes the sorted key list of
/// the rule table it came from.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupKey(pub u16);

/// A predicate over attribute tuples, given as per-dimension value sets.
/// An empty set means "any value".
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pattern {
    pub dwelling: Vec<Dwelling>,
    pub area: Vec<AreaBand>,
    pub occupancy: Vec<Occupancy>,
    pub income: Vec<IncomeBand>,
    pub tech: Vec<Tech>,
}

impl Pattern {
    pub fn matches(&self, t: &AttributeTuple) -> bool {
        (self.dwelling.is_empty() || self.dwelling.contains(&t.dwelling))
            && (self.area.is_empty() || self.area.contains(&t.area_band))
            && (self.occupancy.is_empty() || self.occupancy.contains(&t.occupancy))
            && (self.income.is_empty() || self.income.contains(&t.income_band))
            && (self.tech.is_empty() || self.tech.contains(&t.tech))
    }

    /// Every concrete tuple covered by this pattern.
    pub fn expand(&self) -> Vec<AttributeTuple> {
        fn all<T: Copy>(set: &[T], universe: &[T]) -> Vec<T> {
            if set.is_empty() {
                universe.to_vec()
            } else {
                set.to_vec()
            }
        }
        let dwellings = all(&self.dwelling, &[Dwelling::House, Dwelling::Apartment]);
        let areas = all(&self.area, &[AreaBand::A1, AreaBand::A2, AreaBand::A3]);
        let occs = all(
            &self.occupancy,
            &[
                Occupancy::P1,
                Occupancy::P2,
                Occupancy::P3Plus,
                Occupancy::P5Plus,
            ],
        );
        let incomes = all(
            &self.income,
            &[IncomeBand::E1, IncomeBand::E2, IncomeBand::E3],
        );
        let techs = all(&self.tech, &[Tech::None, Tech::Hp, Tech::Ev]);
        let mut out = Vec::new();
        for &d in &dwellings {
            for &a in &areas {
                for &o in &occs {
                    for &i in &incomes {
                        for &t in &techs {
                            out.push(AttributeTuple {
                                dwelling: d,
                                area_band: a,
                                occupancy: o,
                                income_band: i,
                                tech: t,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// One classification rule: predicate plus the group it assigns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationRule {
    pub name: String,
    #[serde(rename = "match")]
    pub pattern: Pattern,
    pub status: Status,
    pub tech: Tech,
}

impl ClassificationRule {
    pub fn group(&self) -> StatusTechGroup {
        StatusTechGroup::new(self.status, self.tech)
    }
}

/// The rule table: an admitted key universe plus disjoint classification
/// rules over it. Immutable once built; lookups are table-driven.
#[derive(Clone, Debug)]
pub struct RuleTable {
    provenance: String,
    rules: Vec<ClassificationRule>,
    /// sorted admitted tuples; position = GroupKey id
    keys: Vec<AttributeTuple>,
    /// per admitted key: index of the first matching rule, if any
    assignment: Vec<Option<u16>>,
    index: BTreeMap<AttributeTuple, GroupKey>,
}

/// Problems found in a rule table. An empty report means the table is valid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    /// admitted keys matched by more than one rule (key, rule names)
    pub overlaps: Vec<(AttributeTuple, Vec<String>)>,
    /// admitted keys matched by no rule
    pub gaps: Vec<AttributeTuple>,
    /// rules matching no admitted key
    pub unreachable: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.overlaps.is_empty() && self.gaps.is_empty() && self.unreachable.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "rule table valid");
        }
        for (key, rules) in &self.overlaps {
            writeln!(f, "overlap: {key} matched by {}", rules.join(", "))?;
        }
        for key in &self.gaps {
            writeln!(f, "gap: {key} matched by no rule")?;
        }
        for name in &self.unreachable {
            writeln!(f, "unreachable rule: {name}")?;
        }
        Ok(())
    }
}

impl RuleTable {
    pub fn new(provenance: String, admitted: &[Pattern], rules: Vec<ClassificationRule>) -> Self {
        let mut set = BTreeSet::new();
        for pattern in admitted {
            set.extend(pattern.expand());
        }
        let keys: Vec<AttributeTuple> = set.into_iter().collect();
        let assignment = keys
            .iter()
            .map(|k| {
                rules
                    .iter()
                    .position(|r| r.pattern.matches(k))
                    .map(|i| i as u16)
            })
            .collect();
        let index = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (*k, GroupKey(i as u16)))
            .collect();
        RuleTable {
            provenance,
            rules,
            keys,
            assignment,
            index,
        }
    }

    /// The built-in Danish 2017 grouping shipped with the crate.
    pub fn builtin_danish_2017() -> &'static RuleTable {
        static TABLE: OnceLock<RuleTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            crate::config::rule_table_from_toml(include_str!("../data/rules_dk2017.toml"))
                .expect("built-in rule table parses")
        })
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn rules(&self) -> &[ClassificationRule] {
        &self.rules
    }

    pub fn admitted_count(&self) -> usize {
        self.keys.len()
    }

    pub fn key_of(&self, attrs: &HouseholdAttributes) -> Option<GroupKey> {
        self.index.get(&attrs.tuple()).copied()
    }

    pub fn tuple_of(&self, key: GroupKey) -> AttributeTuple {
        self.keys[key.0 as usize]
    }

    /// Classify a household into its status/technology group.
    pub fn classify(&self, attrs: &HouseholdAttributes) -> Result<StatusTechGroup, DomainError> {
        let key = self
            .key_of(attrs)
            .ok_or(DomainError::UnmappedCombination(attrs.tuple()))?;
        match self.assignment[key.0 as usize] {
            Some(rule) => Ok(self.rules[rule as usize].group()),
            None => Err(DomainError::UnmappedCombination(attrs.tuple())),
        }
    }

    /// Classify an admitted key directly.
    pub fn classify_key(&self, key: GroupKey) -> Result<StatusTechGroup, DomainError> {
        match self.assignment[key.0 as usize] {
            Some(rule) => Ok(self.rules[rule as usize].group()),
            None => Err(DomainError::UnmappedCombination(self.tuple_of(key))),
        }
    }

    /// All admitted keys with their groups, sorted by id. Errors if the table
    /// has gaps (run [`RuleTable::validate`] first for a full report).
    pub fn enumerate_groups(&self) -> Result<Vec<(GroupKey, StatusTechGroup)>, DomainError> {
        (0..self.keys.len())
            .map(|i| {
                let key = GroupKey(i as u16);
                self.classify_key(key).map(|g| (key, g))
            })
            .collect()
    }

    /// Check disjointness, coverage and reachability over the admitted space.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut reached = vec![false; self.rules.len()];
        for key in &self.keys {
            let matching: Vec<usize> = self
                .rules
                .iter()
                .enumerate()
                .filter(|(_, r)| r.pattern.matches(key))
                .map(|(i, _)| i)
                .collect();
            for &i in &matching {
                reached[i] = true;
            }
            match matching.len() {
                0 => report.gaps.push(*key),
                1 => {}
                _ => report.overlaps.push((
                    *key,
                    matching
                        .iter()
                        .map(|&i| self.rules[i].name.clone())
                        .collect(),
                )),
            }
        }
        for (i, r) in self.rules.iter().enumerate() {
            if !reached[i] {
                report.unreachable.push(r.name.clone());
            }
        }
        report
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("attribute combination {0} is not in the admitted group space")]
    UnmappedCombination(AttributeTuple),
    #[error("household cannot own both a heat pump and an electric vehicle")]
    HeatPumpAndEv,
}

// ---------------------------------------------------------------------------
// attributes CSV
// ---------------------------------------------------------------------------

/// A malformed attributes row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeIssue {
    pub line: u64,
    pub message: String,
}

/// Attribute rows plus the per-row issues collected while reading them.
pub type ParsedAttributes = (Vec<(String, HouseholdAttributes)>, Vec<AttributeIssue>);

/// Read an attributes CSV (`household_id,dwelling,area_band,occupancy,income_band,hp,ev`).
/// Malformed rows become issues, never a global failure.
pub fn parse_attributes<R: std::io::Read>(
    reader: R,
) -> Result<ParsedAttributes, DomainFileError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    {
        let headers = rdr
            .headers()
            .map_err(|e| DomainFileError::Header(e.to_string()))?;
        let expected = [
            "household_id",
            "dwelling",
            "area_band",
            "occupancy",
            "income_band",
            "hp",
            "ev",
        ];
        if headers.len() != expected.len()
            || headers.iter().zip(expected).any(|(h, e)| h.trim() != e)
        {
            return Err(DomainFileError::Header(format!(
                "expected header {:?}, got {:?}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut out = Vec::new();
    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                issues.push(AttributeIssue {
                    line: e.position().map(|p| p.line()).unwrap_or_default(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or_default();
        match parse_attribute_record(&record) {
            Ok((id, attrs)) => {
                if !seen.insert(id.clone()) {
                    issues.push(AttributeIssue {
                        line,
                        message: format!("duplicate household_id {id}"),
                    });
                } else {
                    out.push((id, attrs));
                }
            }
            Err(msg) => issues.push(AttributeIssue { line, message: msg }),
        }
    }
    Ok((out, issues))
}

fn parse_attribute_record(
    record: &csv::StringRecord,
) -> Result<(String, HouseholdAttributes), String> {
    if record.len() != 7 {
        return Err(format!("expected 7 fields, got {}", record.len()));
    }
    let id = record[0].trim().to_string();
    if id.is_empty() {
        return Err("empty household_id".into());
    }
    let dwelling = match record[1].trim().to_ascii_lowercase().as_str() {
        "house" | "h" => Dwelling::House,
        "apartment" | "ap" | "apt" => Dwelling::Apartment,
        other => return Err(format!("unknown dwelling {other:?}")),
    };
    let area_band = match record[2].trim().to_ascii_uppercase().as_str() {
        "A1" => AreaBand::A1,
        "A2" => AreaBand::A2,
        "A3" => AreaBand::A3,
        other => return Err(format!("unknown area_band {other:?}")),
    };
    let occupancy = match record[3].trim().to_ascii_uppercase().as_str() {
        "P1" => Occupancy::P1,
        "P2" => Occupancy::P2,
        "P3+" | "P3PLUS" => Occupancy::P3Plus,
        "P5+" | "P5PLUS" => Occupancy::P5Plus,
        other => return Err(format!("unknown occupancy {other:?}")),
    };
    let income_band = match record[4].trim().to_ascii_uppercase().as_str() {
        "E1" => IncomeBand::E1,
        "E2" => IncomeBand::E2,
        "E3" => IncomeBand::E3,
        other => return Err(format!("unknown income_band {other:?}")),
    };
    let flag = |s: &str| match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("flag must be 0 or 1, got {other:?}")),
    };
    let hp = flag(&record[5])?;
    let ev = flag(&record[6])?;
    HouseholdAttributes::new(dwelling, area_band, occupancy, income_band, hp, ev)
        .map(|a| (id, a))
        .map_err(|e| e.to_string())
}

/// Canonical attribute CSV field values for a tuple.
pub fn attribute_csv_fields(id: &str, attrs: &HouseholdAttributes) -> [String; 7] {
    [
        id.to_string(),
        match attrs.dwelling {
            Dwelling::House => "house",
            Dwelling::Apartment => "apartment",
        }
        .into(),
        format!("{:?}", attrs.area_band),
        match attrs.occupancy {
            Occupancy::P1 => "P1",
            Occupancy::P2 => "P2",
            Occupancy::P3Plus => "P3+",
            Occupancy::P5Plus => "P5+",
        }
        .into(),
        format!("{:?}", attrs.income_band),
        if attrs.heat_pump { "1" } else { "0" }.into(),
        if attrs.electric_vehicle { "1" } else { "0" }.into(),
    ]
}

/// Unrecoverable attributes-file problem.
#[derive(Debug, thiserror::Error)]
pub enum DomainFileError {
    #[error("unreadable attributes header: {0}")]
    Header(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(
        dwelling: Dwelling,
        area: AreaBand,
        occ: Occupancy,
        income: IncomeBand,
        hp: bool,
        ev: bool,
    ) -> HouseholdAttributes {
        HouseholdAttributes::new(dwelling, area, occ, income, hp, ev).unwrap()
    }

    #[test]
    fn default_table_admits_90_groups() {
        let table = RuleTable::builtin_danish_2017();
        assert_eq!(table.admitted_count(), 90);
        let groups = table.enumerate_groups().unwrap();
        assert_eq!(groups.len(), 90);
        // sorted, duplicate-free ids
        for (i, (key, _)) in groups.iter().enumerate() {
            assert_eq!(key.0 as usize, i);
        }
        // the low-status block: 8 no-tech + 4 heat-pump keys
        let low = groups
            .iter()
            .filter(|(_, g)| g.status == Status::Low)
            .count();
        assert_eq!(low, 12);
        // exactly 8 populated status x tech combinations, no low EV
        let populated: BTreeSet<StatusTechGroup> = groups.iter().map(|(_, g)| *g).collect();
        assert_eq!(populated.len(), 8);
        assert!(!populated.contains(&StatusTechGroup::new(Status::Low, Tech::Ev)));
    }

    #[test]
    fn classification_examples() {
        let table = RuleTable::builtin_danish_2017();
        assert_eq!(
            table
                .classify(&attrs(
                    Dwelling::House,
                    AreaBand::A1,
                    Occupancy::P1,
                    IncomeBand::E1,
                    false,
                    false
                ))
                .unwrap(),
            StatusTechGroup::new(Status::Low, Tech::None)
        );
        assert_eq!(
            table
                .classify(&attrs(
                    Dwelling::House,
                    AreaBand::A3,
                    Occupancy::P3Plus,
                    IncomeBand::E3,
                    false,
                    true
                ))
                .unwrap(),
            StatusTechGroup::new(Status::High, Tech::Ev)
        );
        assert_eq!(
            table
                .classify(&attrs(
                    Dwelling::Apartment,
                    AreaBand::A2,
                    Occupancy::P2,
                    IncomeBand::E2,
                    false,
                    false
                ))
                .unwrap(),
            StatusTechGroup::new(Status::Medium, Tech::None)
        );
        // low-income small-dwelling heat pumps only occur up to two occupants
        let err = table
            .classify(&attrs(
                Dwelling::House,
                AreaBand::A1,
                Occupancy::P3Plus,
                IncomeBand::E1,
                true,
                false,
            ))
            .unwrap_err();
        assert!(matches!(err, DomainError::UnmappedCombination(_)));
    }

    #[test]
    fn classification_total_over_admitted_keys() {
        let table = RuleTable::builtin_danish_2017();
        for (key, group) in table.enumerate_groups().unwrap() {
            let attrs = table.tuple_of(key).attributes();
            assert_eq!(table.classify(&attrs).unwrap(), group);
        }
    }

    #[test]
    fn default_table_validates_clean() {
        let report = RuleTable::builtin_danish_2017().validate();
        assert!(report.is_empty(), "unexpected problems: {report}");
    }

    #[test]
    fn validation_flags_overlap() {
        let base = RuleTable::builtin_danish_2017();
        let mut rules = base.rules().to_vec();
        rules.push(ClassificationRule {
            name: "duplicate-claim".into(),
            pattern: Pattern {
                dwelling: vec![Dwelling::House],
                area: vec![AreaBand::A1],
                occupancy: vec![Occupancy::P1],
                income: vec![IncomeBand::E1],
                tech: vec![Tech::None],
            },
            status: Status::Low,
            tech: Tech::None,
        });
        let admitted: Vec<Pattern> = vec![Pattern::default()];
        // restrict the universe to the default table's keys
        let table = RuleTable::new(
            "test".into(),
            &admitted
                .iter()
                .flat_map(|_| {
                    (0..base.admitted_count()).map(|i| {
                        let t = base.tuple_of(GroupKey(i as u16));
                        Pattern {
                            dwelling: vec![t.dwelling],
                            area: vec![t.area_band],
                            occupancy: vec![t.occupancy],
                            income: vec![t.income_band],
                            tech: vec![t.tech],
                        }
                    })
                })
                .collect::<Vec<_>>(),
            rules,
        );
        let report = table.validate();
        assert_eq!(report.overlaps.len(), 1);
        assert_eq!(report.overlaps[0].1, vec!["low-notech", "duplicate-claim"]);
        assert!(report.gaps.is_empty());
    }

    #[test]
    fn validation_flags_missing_high_ev_rules() {
        let base = RuleTable::builtin_danish_2017();
        let rules: Vec<ClassificationRule> = base
            .rules()
            .iter()
            .filter(|r| r.name != "high-ev")
            .cloned()
            .collect();
        let admitted: Vec<Pattern> = (0..base.admitted_count())
            .map(|i| {
                let t = base.tuple_of(GroupKey(i as u16));
                Pattern {
                    dwelling: vec![t.dwelling],
                    area: vec![t.area_band],
                    occupancy: vec![t.occupancy],
                    income: vec![t.income_band],
                    tech: vec![t.tech],
                }
            })
            .collect();
        let table = RuleTable::new("test".into(), &admitted, rules);
        let report = table.validate();
        assert_eq!(report.gaps.len(), 2, "{report}");
        let occs: BTreeSet<Occupancy> = report.gaps.iter().map(|k| k.occupancy).collect();
        assert_eq!(occs, BTreeSet::from([Occupancy::P3Plus, Occupancy::P5Plus]));
        assert!(report.gaps.iter().all(|k| k.tech == Tech::Ev));
    }

    #[test]
    fn catch_all_rule_covers_everything() {
        let base = RuleTable::builtin_danish_2017();
        let admitted: Vec<Pattern> = (0..base.admitted_count())
            .map(|i| {
                let t = base.tuple_of(GroupKey(i as u16));
                Pattern {
                    dwelling: vec![t.dwelling],
                    area: vec![t.area_band],
                    occupancy: vec![t.occupancy],
                    income: vec![t.income_band],
                    tech: vec![t.tech],
                }
            })
            .collect();
        let table = RuleTable::new(
            "catch-all".into(),
            &admitted,
            vec![ClassificationRule {
                name: "all".into(),
                pattern: Pattern::default(),
                status: Status::Medium,
                tech: Tech::None,
            }],
        );
        assert_eq!(table.enumerate_groups().unwrap().len(), 90);
        assert!(table.validate().is_empty());
    }

    #[test]
    fn area_banding_boundaries_fall_upward() {
        assert_eq!(AreaBand::from_area_sqm(Dwelling::House, 109), AreaBand::A1);
        assert_eq!(AreaBand::from_area_sqm(Dwelling::House, 110), AreaBand::A2);
        assert_eq!(AreaBand::from_area_sqm(Dwelling::House, 146), AreaBand::A3);
        assert_eq!(
            AreaBand::from_area_sqm(Dwelling::Apartment, 66),
            AreaBand::A2
        );
        assert_eq!(
            AreaBand::from_area_sqm(Dwelling::Apartment, 85),
            AreaBand::A3
        );
    }

    #[test]
    fn ev_and_hp_together_rejected() {
        let err = HouseholdAttributes::new(
            Dwelling::House,
            AreaBand::A3,
            Occupancy::P2,
            IncomeBand::E3,
            true,
            true,
        )
        .unwrap_err();
        assert_eq!(err, DomainError::HeatPumpAndEv);
    }

    #[test]
    fn attributes_csv_roundtrip_and_issues() {
        let csv_text = "household_id,dwelling,area_band,occupancy,income_band,hp,ev\n\
                        h1,house,A1,P1,E1,0,0\n\
                        h2,apartment,A2,P3+,E2,0,1\n\
                        h3,house,A9,P1,E1,0,0\n\
                        h2,apartment,A2,P3+,E2,0,1\n\
                        h4,house,A3,P2,E3,1,1\n";
        let (rows, issues) = parse_attributes(csv_text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].0, "h1");
        assert_eq!(rows[1].1.tech(), Tech::Ev);
        // bad area band, duplicate id, hp+ev
        assert_eq!(issues.len(), 3);
        assert!(issues.iter().any(|i| i.message.contains("A9")));
        assert!(issues.iter().any(|i| i.message.contains("duplicate")));
    }

    #[test]
    fn unreadable_header_is_fatal() {
        let err = parse_attributes("id,foo\nxx,yy\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DomainFileError::Header(_)));
    }
}
