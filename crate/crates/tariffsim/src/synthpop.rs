//! Deterministic synthetic populations and hourly load profiles calibrated to
//! published category shares, so the full pipeline runs without access to the
//! private register data.
//!
//! Generation is counter-based: every household's draw is keyed by
//! (seed, household index), so output is byte-identical for any worker count
//! or evaluation order. Hourly values are integer watt-hours carved out of
//! the household's annual energy by a cumulative fixed-point weight table;
//! the slots of one household always telescope to exactly its annual total.

use crate::domain::{AreaBand, Dwelling, HouseholdAttributes, IncomeBand, Occupancy, Status, Tech};
use crate::metering::HourlyProfile;
use crate::money::{div_round_half_even, Rational};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;

/// One generation category: an attribute cell set with population and
/// consumption share targets (percent).
#[derive(Clone, Debug)]
pub struct CategoryRow {
    pub name: String,
    pub status: Status,
    pub tech: Tech,
    pub income: Vec<IncomeBand>,
    pub area: Vec<AreaBand>,
    /// empty = all four occupancy bands
    pub occupancy: Vec<Occupancy>,
    /// empty = both dwelling types
    pub dwelling: Vec<Dwelling>,
    pub population_share_pct: Rational,
    pub consumption_share_pct: Rational,
}

impl CategoryRow {
    fn cells(&self) -> Vec<HouseholdAttributes> {
        let occupancies = if self.occupancy.is_empty() {
            vec![
                Occupancy::P1,
                Occupancy::P2,
                Occupancy::P3Plus,
                Occupancy::P5Plus,
            ]
        } else {
            self.occupancy.clone()
        };
        let dwellings = if self.dwelling.is_empty() {
            vec![Dwelling::House, Dwelling::Apartment]
        } else {
            self.dwelling.clone()
        };
        let mut out = Vec::new();
        for &income in &self.income {
            for &area in &self.area {
                for &dwelling in &dwellings {
                    for &occ in &occupancies {
                        out.push(
                            HouseholdAttributes::new(
                                dwelling,
                                area,
                                occ,
                                income,
                                self.tech == Tech::Hp,
                                self.tech == Tech::Ev,
                            )
                            .expect("row cells never combine hp and ev"),
                        );
                    }
                }
            }
        }
        out
    }
}

macro_rules! pct {
    ($num:literal / $den:literal) => {
        Rational::new($num, $den)
    };
}

/// The default category table: 21 rows grouped in three status blocks.
/// Shares are normalized hierarchically: the block totals are exact
/// (population 17.96 / 63.82 / 18.22, consumption 10.32 / 61.91 / 27.77,
/// each summing to 100.00) and the printed row shares are rescaled within
/// their block, absorbing the rounding drift of the published rows.
pub fn default_category_rows() -> Vec<CategoryRow> {
    struct Raw {
        name: &'static str,
        status: Status,
        tech: Tech,
        income: &'static [IncomeBand],
        area: &'static [AreaBand],
        occupancy: &'static [Occupancy],
        dwelling: &'static [Dwelling],
        pop: Rational,
        cons: Rational,
    }
    use AreaBand::*;
    use Dwelling::*;
    use IncomeBand::*;
    use Occupancy::*;
    const HOUSE: &[Dwelling] = &[House];
    const BOTH: &[Dwelling] = &[];
    let rows = [
        // low financial status: lowest income, smallest dwellings
        Raw {
            name: "low-small-p5",
            status: Status::Low,
            tech: Tech::None,
            income: &[E1],
            area: &[A1],
            occupancy: &[P5Plus],
            dwelling: BOTH,
            pop: pct!(5 / 100),
            cons: pct!(7 / 100),
        },
        Raw {
            name: "low-small-p3",
            status: Status::Low,
            tech: Tech::None,
            income: &[E1],
            area: &[A1],
            occupancy: &[P3Plus],
            dwelling: BOTH,
            pop: pct!(38 / 100),
            cons: pct!(45 / 100),
        },
        Raw {
            name: "low-small-p2",
            status: Status::Low,
            tech: Tech::None,
            income: &[E1],
            area: &[A1],
            occupancy: &[P2],
            dwelling: BOTH,
            pop: pct!(259 / 100),
            cons: pct!(183 / 100),
        },
        Raw {
            name: "low-small-p1",
            status: Status::Low,
            tech: Tech::None,
            income: &[E1],
            area: &[A1],
            occupancy: &[P1],
            dwelling: BOTH,
            pop: pct!(1485 / 100),
            cons: pct!(780 / 100),
        },
        Raw {
            name: "low-small-hp",
            status: Status::Low,
            tech: Tech::Hp,
            income: &[E1],
            area: &[A1],
            occupancy: &[P1, P2],
            dwelling: BOTH,
            pop: pct!(10 / 100),
            cons: pct!(17 / 100),
        },
        // medium financial status
        Raw {
            name: "med-high-income-smallmid",
            status: Status::Medium,
            tech: Tech::None,
            income: &[E3],
            area: &[A1, A2],
            occupancy: &[],
            dwelling: BOTH,
            pop: pct!(1592 / 100),
            cons: pct!(2051 / 100),
        },
        Raw {
            name: "med-high-income-smallmid-hp",
            status: Status::Medium,
            tech: Tech::Hp,
            income: &[E3],
            area: &[A1, A2],
            occupancy: &[P3Plus, P5Plus],
            dwelling: HOUSE,
            pop: pct!(7 / 100),
            cons: pct!(22 / 100),
        },
        Raw {
            name: "med-high-income-smallmid-ev",
            status: Status::Medium,
            tech: Tech::Ev,
            income: &[E3],
            area: &[A1, A2],
            occupancy: &[P3Plus],
            dwelling: HOUSE,
            pop: pct!(2 / 100),
            cons: pct!(4 / 100),
        },
        Raw {
            name: "med-mid-income",
            status: Status::Medium,
            tech: Tech::None,
            income: &[E2],
            area: &[A1, A2, A3],
            occupancy: &[],
            dwelling: BOTH,
            pop: pct!(3190 / 100),
            cons: pct!(2987 / 100),
        },
        Raw {
            name: "med-mid-income-hp",
            status: Status::Medium,
            tech: Tech::Hp,
            income: &[E2],
            area: &[A1, A2, A3],
            occupancy: &[P2, P3Plus, P5Plus],
            dwelling: HOUSE,
            pop: pct!(23 / 100),
            cons: pct!(60 / 100),
        },
        Raw {
            name: "med-low-income-mid",
            status: Status::Medium,
            tech: Tech::None,
            income: &[E1],
            area: &[A2],
            occupancy: &[],
            dwelling: BOTH,
            pop: pct!(1558 / 100),
            cons: pct!(1045 / 100),
        },
        Raw {
            name: "med-low-income-mid-hp",
            status: Status::Medium,
            tech: Tech::Hp,
            income: &[E1],
            area: &[A2],
            occupancy: &[P3Plus, P5Plus],
            dwelling: HOUSE,
            pop: pct!(11 / 100),
            cons: pct!(23 / 100),
        },
        // high financial status: highest income, largest dwellings
        Raw {
            name: "high-large-p5",
            status: Status::High,
            tech: Tech::None,
            income: &[E3],
            area: &[A3],
            occupancy: &[P5Plus],
            dwelling: BOTH,
            pop: pct!(212 / 100),
            cons: pct!(407 / 100),
        },
        Raw {
            name: "high-large-p3",
            status: Status::High,
            tech: Tech::None,
            income: &[E3],
            area: &[A3],
            occupancy: &[P3Plus],
            dwelling: BOTH,
            pop: pct!(875 / 100),
            cons: pct!(1379 / 100),
        },
        Raw {
            name: "high-large-p2",
            status: Status::High,
            tech: Tech::None,
            income: &[E3],
            area: &[A3],
            occupancy: &[P2],
            dwelling: BOTH,
            pop: pct!(631 / 100),
            cons: pct!(827 / 100),
        },
        Raw {
            name: "high-large-p1",
            status: Status::High,
            tech: Tech::None,
            income: &[E3],
            area: &[A3],
            occupancy: &[P1],
            dwelling: BOTH,
            pop: pct!(80 / 100),
            cons: pct!(77 / 100),
        },
        Raw {
            name: "high-large-ev-p5",
            status: Status::High,
            tech: Tech::Ev,
            income: &[E3],
            area: &[A3],
            occupancy: &[P5Plus],
            dwelling: HOUSE,
            pop: pct!(2 / 100),
            cons: pct!(8 / 100),
        },
        Raw {
            name: "high-large-ev-p3",
            status: Status::High,
            tech: Tech::Ev,
            income: &[E3],
            area: &[A3],
            occupancy: &[P3Plus],
            dwelling: HOUSE,
            pop: pct!(5 / 100),
            cons: pct!(17 / 100),
        },
        Raw {
            name: "high-large-hp-p5",
            status: Status::High,
            tech: Tech::Hp,
            income: &[E3],
            area: &[A3],
            occupancy: &[P5Plus],
            dwelling: HOUSE,
            pop: pct!(3 / 100),
            cons: pct!(10 / 100),
        },
        Raw {
            name: "high-large-hp-p3",
            status: Status::High,
            tech: Tech::Hp,
            income: &[E3],
            area: &[A3],
            occupancy: &[P3Plus],
            dwelling: HOUSE,
            pop: pct!(8 / 100),
            cons: pct!(28 / 100),
        },
        Raw {
            name: "high-large-hp-p2",
            status: Status::High,
            tech: Tech::Hp,
            income: &[E3],
            area: &[A3],
            occupancy: &[P2],
            dwelling: HOUSE,
            pop: pct!(7 / 100),
            cons: pct!(25 / 100),
        },
    ];
    // exact block targets
    let pop_block = |s: Status| match s {
        Status::Low => pct!(1796 / 100),
        Status::Medium => pct!(6382 / 100),
        Status::High => pct!(1822 / 100),
    };
    let cons_block = |s: Status| match s {
        Status::Low => pct!(1032 / 100),
        Status::Medium => pct!(6191 / 100),
        Status::High => pct!(2777 / 100),
    };
    let mut pop_sums = std::collections::BTreeMap::new();
    let mut cons_sums = std::collections::BTreeMap::new();
    for r in &rows {
        let p = pop_sums.entry(r.status).or_insert(Rational::ZERO);
        *p = p.add(&r.pop);
        let c = cons_sums.entry(r.status).or_insert(Rational::ZERO);
        *c = c.add(&r.cons);
    }
    rows.iter()
        .map(|r| CategoryRow {
            name: r.name.to_string(),
            status: r.status,
            tech: r.tech,
            income: r.income.to_vec(),
            area: r.area.to_vec(),
            occupancy: r.occupancy.to_vec(),
            dwelling: r.dwelling.to_vec(),
            population_share_pct: r.pop.mul(&pop_block(r.status)).div(&pop_sums[&r.status]),
            consumption_share_pct: r.cons.mul(&cons_block(r.status)).div(&cons_sums[&r.status]),
        })
        .collect()
}

/// Generation parameters.
#[derive(Clone, Debug)]
pub struct PopulationSpec {
    pub households: u64,
    pub seed: u64,
    pub year_hours: u32,
    pub mean_annual_kwh: f64,
    /// sigma of the mean-one lognormal annual-energy jitter
    pub jitter_sigma: f64,
    /// fail when a nonzero share apportions to zero households
    pub strict: bool,
    pub rows: Vec<CategoryRow>,
}

impl PopulationSpec {
    pub fn new(households: u64, seed: u64, rows: Vec<CategoryRow>) -> Result<Self, SynthError> {
        let spec = PopulationSpec {
            households,
            seed,
            year_hours: 8760,
            mean_annual_kwh: 2825.0,
            jitter_sigma: 0.35,
            strict: false,
            rows,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_defaults(households: u64, seed: u64) -> Self {
        PopulationSpec::new(households, seed, default_category_rows())
            .expect("default rows are valid")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.households == 0 {
            return Err(SynthError::Invalid("household count is zero".into()));
        }
        if self.rows.is_empty() {
            return Err(SynthError::Invalid("no category rows".into()));
        }
        if self.year_hours < 24 {
            return Err(SynthError::Invalid("year must span at least a day".into()));
        }
        if !self.mean_annual_kwh.is_finite() || self.mean_annual_kwh <= 0.0 {
            return Err(SynthError::Invalid(
                "mean annual energy must be positive".into(),
            ));
        }
        if !self.jitter_sigma.is_finite() || self.jitter_sigma < 0.0 || self.jitter_sigma >= 2.0 {
            return Err(SynthError::Invalid("jitter sigma outside [0, 2)".into()));
        }
        let mut pop = Rational::ZERO;
        let mut cons = Rational::ZERO;
        for row in &self.rows {
            if row.population_share_pct < Rational::ZERO
                || row.consumption_share_pct < Rational::ZERO
            {
                return Err(SynthError::Invalid(format!(
                    "row {}: negative share",
                    row.name
                )));
            }
            if row.consumption_share_pct > Rational::ZERO && row.population_share_pct.is_zero() {
                return Err(SynthError::Invalid(format!(
                    "row {}: consumption share without population",
                    row.name
                )));
            }
            if row.income.is_empty() || row.area.is_empty() {
                return Err(SynthError::Invalid(format!(
                    "row {}: income and area sets must be non-empty",
                    row.name
                )));
            }
            pop = pop.add(&row.population_share_pct);
            cons = cons.add(&row.consumption_share_pct);
        }
        for (what, sum) in [("population", pop), ("consumption", cons)] {
            let dev = sum.sub(&Rational::from_integer(100)).to_f64().abs();
            if dev > 0.05 {
                return Err(SynthError::Invalid(format!(
                    "{what} shares sum to {:.4}%, expected 100%",
                    sum.to_f64()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid population spec: {0}")]
    Invalid(String),
    #[error("share of category {0:?} apportions to zero households under strict mode")]
    InfeasibleShares(String),
    #[error("category {0:?} has no members to calibrate")]
    EmptyCategory(String),
}

/// Largest-remainder apportionment of `total` over non-negative weights.
/// Ties break toward lower index, so the result is unique.
pub fn largest_remainder(total: u64, weights: &[Rational]) -> Vec<u64> {
    let mut sum = Rational::ZERO;
    for w in weights {
        sum = sum.add(w);
    }
    if sum.is_zero() || total == 0 {
        return vec![0; weights.len()];
    }
    let mut counts = Vec::with_capacity(weights.len());
    let mut remainders: Vec<(usize, Rational)> = Vec::with_capacity(weights.len());
    let mut assigned = 0u64;
    for (i, w) in weights.iter().enumerate() {
        let quota = w.mul(&Rational::from_integer(total as i128)).div(&sum);
        let floor = quota.numer().div_euclid(quota.denom());
        let rem = quota.sub(&Rational::from_integer(floor));
        counts.push(floor as u64);
        assigned += floor as u64;
        remainders.push((i, rem));
    }
    let mut leftover = total - assigned;
    remainders.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut k = 0;
    while leftover > 0 {
        counts[remainders[k].0] += 1;
        leftover -= 1;
        k += 1;
    }
    counts
}

/// Normalized hourly weight vectors, each summing to one over the year.
#[derive(Clone, Debug)]
pub struct ShapeLibrary {
    pub base: Vec<f64>,
    pub heat_pump: Vec<f64>,
    pub ev: Vec<f64>,
}

impl ShapeLibrary {
    /// Residential double-peak base load with mild winter amplification, a
    /// winter-heavy continuous heat-pump shape and an evening EV-charging
    /// block.
    pub fn default_for(hours: u32) -> ShapeLibrary {
        const DAILY: [f64; 24] = [
            0.55, 0.45, 0.40, 0.38, 0.40, 0.50, 0.75, 1.00, 1.05, 0.90, 0.80, 0.78, 0.80, 0.78,
            0.75, 0.85, 1.10, 1.35, 1.50, 1.45, 1.30, 1.10, 0.90, 0.70,
        ];
        let h = hours as usize;
        let tau = std::f64::consts::TAU;
        // seasonal angle peaking mid-January (hour 336 of a standard year)
        let season = |i: usize| tau * ((i as f64 - 336.0) / hours as f64);
        let mut base = Vec::with_capacity(h);
        let mut hp = Vec::with_capacity(h);
        let mut ev = Vec::with_capacity(h);
        for i in 0..h {
            let hod = i % 24;
            base.push(DAILY[hod] * (1.0 + 0.18 * season(i).cos()));
            hp.push((0.5 * (1.0 + season(i).cos())).max(0.05));
            ev.push(if (18..23).contains(&hod) { 1.0 } else { 0.0 });
        }
        for shape in [&mut base, &mut hp, &mut ev] {
            let sum: f64 = shape.iter().sum();
            shape.iter_mut().for_each(|v| *v /= sum);
        }
        ShapeLibrary {
            base,
            heat_pump: hp,
            ev,
        }
    }

    /// Blend for one technology: fraction of annual energy following the
    /// technology shape, the rest following the base shape.
    pub fn blend(&self, tech: Tech) -> Vec<f64> {
        match tech {
            Tech::None => self.base.clone(),
            Tech::Hp => blend_weights(&self.base, &self.heat_pump, 0.55),
            Tech::Ev => blend_weights(&self.base, &self.ev, 0.35),
        }
    }
}

fn blend_weights(base: &[f64], tech: &[f64], beta: f64) -> Vec<f64> {
    base.iter()
        .zip(tech)
        .map(|(b, t)| (1.0 - beta) * b + beta * t)
        .collect()
}

/// Cumulative fixed-point weight table: `cum[0] = 0`, `cum[H] = 2^32`,
/// monotone. Slot h of a household with annual energy A is
/// `(A*cum[h+1] >> 32) - (A*cum[h] >> 32)`; the slots telescope to exactly A.
#[derive(Clone, Debug)]
pub struct CumulativeWeights(Vec<u64>);

impl CumulativeWeights {
    pub fn from_shape(shape: &[f64]) -> CumulativeWeights {
        const SCALE: f64 = 4294967296.0; // 2^32
        let total: f64 = shape.iter().sum();
        let mut cum = Vec::with_capacity(shape.len() + 1);
        cum.push(0u64);
        let mut acc = 0.0;
        for (i, w) in shape.iter().enumerate() {
            acc += w;
            let v = if i + 1 == shape.len() {
                1u64 << 32
            } else {
                ((acc / total) * SCALE).round().min(SCALE) as u64
            };
            cum.push(v.max(*cum.last().unwrap()));
        }
        CumulativeWeights(cum)
    }

    #[inline]
    pub fn slot_wh(&self, annual_wh: u64, hour: usize) -> u32 {
        debug_assert!(annual_wh < (1 << 32));
        (((annual_wh * self.0[hour + 1]) >> 32) - ((annual_wh * self.0[hour]) >> 32)) as u32
    }

    /// Add all hourly slots of one household into an accumulator.
    pub fn add_hourly_into(&self, annual_wh: u64, acc: &mut [u64]) {
        debug_assert_eq!(acc.len() + 1, self.0.len());
        let mut prev = 0u64;
        for (h, slot) in acc.iter_mut().enumerate() {
            let next = (annual_wh * self.0[h + 1]) >> 32;
            *slot += next - prev;
            prev = next;
        }
    }

    pub fn energy_in(&self, annual_wh: u64, hours: &[u32]) -> u64 {
        hours
            .iter()
            .map(|&h| self.slot_wh(annual_wh, h as usize) as u64)
            .sum()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mean-one lognormal jitter keyed by (seed, household index).
fn jitter(seed: u64, index: u64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let key = splitmix64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let dist = LogNormal::new(-0.5 * sigma * sigma, sigma).expect("valid sigma");
    rng.sample(dist)
}

/// Scale per-category annual energies so realized consumption shares equal
/// the targets, preserving total energy. Factors are applied per household
/// with half-even rounding; category sums land within half a watt-hour per
/// member of their targets. Returns the per-category scale factors.
pub fn calibrate_to_shares(
    annual_wh: &mut [u64],
    category_of: &[usize],
    target_weights: &[Rational],
    category_names: &[String],
) -> Result<Vec<f64>, SynthError> {
    assert_eq!(annual_wh.len(), category_of.len());
    let ncat = target_weights.len();
    let mut realized = vec![0u128; ncat];
    let mut members = vec![0u64; ncat];
    for (&a, &c) in annual_wh.iter().zip(category_of) {
        realized[c] += a as u128;
        members[c] += 1;
    }
    let total: u128 = realized.iter().sum();
    let mut weight_sum = Rational::ZERO;
    for w in target_weights {
        weight_sum = weight_sum.add(w);
    }
    // fixed-point factors at 2^40 keep the per-household scaling exact enough
    // (relative error ~1e-12) without i128 overflow on large populations
    const FP: u32 = 40;
    let mut factors_fp = vec![1u128 << FP; ncat];
    let mut factors = vec![1.0f64; ncat];
    for c in 0..ncat {
        if target_weights[c].is_zero() {
            continue;
        }
        if members[c] == 0 || realized[c] == 0 {
            return Err(SynthError::EmptyCategory(category_names[c].clone()));
        }
        let target = target_weights[c]
            .div(&weight_sum)
            .mul(&Rational::from_integer(total as i128));
        // factor = target / realized, as fixed point
        let num = target
            .mul(&Rational::from_integer(1i128 << FP))
            .div(&Rational::from_integer(realized[c] as i128));
        factors_fp[c] = num.round_half_even() as u128;
        factors[c] = factors_fp[c] as f64 / (1u128 << FP) as f64;
    }
    for (a, &c) in annual_wh.iter_mut().zip(category_of) {
        let scaled = (*a as u128) * factors_fp[c];
        *a = div_round_half_even(scaled as i128, 1i128 << FP) as u64;
    }
    Ok(factors)
}

/// A generated household: its position, category row and attribute cell.
#[derive(Copy, Clone, Debug)]
pub struct SynthHousehold {
    pub index: u64,
    pub row: u16,
    pub attrs: HouseholdAttributes,
}

/// The fully prepared generator: apportioned counts, calibrated annual
/// energies and per-row hourly weight tables. All lookups are O(1) and
/// side-effect free, so profile synthesis parallelizes trivially.
#[derive(Debug)]
pub struct Synthesizer {
    spec: PopulationSpec,
    /// per household: row id
    row_of: Vec<u16>,
    /// per household: attribute cell
    attrs_of: Vec<HouseholdAttributes>,
    /// per household: calibrated annual energy
    annual_wh: Vec<u64>,
    /// per row: cumulative hourly weights
    weights: Vec<CumulativeWeights>,
    /// per-category calibration factors (diagnostic)
    pub calibration_factors: Vec<f64>,
}

impl Synthesizer {
    pub fn new(spec: PopulationSpec) -> Result<Synthesizer, SynthError> {
        spec.validate()?;
        let n = spec.households;
        // hierarchical apportionment: status blocks, then rows, then cells
        let statuses = [Status::Low, Status::Medium, Status::High];
        let block_weights: Vec<Rational> = statuses
            .iter()
            .map(|s| {
                spec.rows
                    .iter()
                    .filter(|r| r.status == *s)
                    .fold(Rational::ZERO, |acc, r| acc.add(&r.population_share_pct))
            })
            .collect();
        let block_counts = largest_remainder(n, &block_weights);
        let mut row_counts = vec![0u64; spec.rows.len()];
        for (bi, status) in statuses.iter().enumerate() {
            let idx: Vec<usize> = spec
                .rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.status == *status)
                .map(|(i, _)| i)
                .collect();
            let weights: Vec<Rational> = idx
                .iter()
                .map(|&i| spec.rows[i].population_share_pct)
                .collect();
            let counts = largest_remainder(block_counts[bi], &weights);
            for (&i, &c) in idx.iter().zip(&counts) {
                row_counts[i] = c;
            }
        }
        if spec.strict {
            for (row, &count) in spec.rows.iter().zip(&row_counts) {
                if count == 0 && row.population_share_pct > Rational::ZERO {
                    return Err(SynthError::InfeasibleShares(row.name.clone()));
                }
            }
        }

        let mut row_of = Vec::with_capacity(n as usize);
        let mut attrs_of = Vec::with_capacity(n as usize);
        for (ri, row) in spec.rows.iter().enumerate() {
            let cells = row.cells();
            let cell_counts = largest_remainder(row_counts[ri], &vec![Rational::ONE; cells.len()]);
            for (cell, &count) in cells.iter().zip(&cell_counts) {
                for _ in 0..count {
                    row_of.push(ri as u16);
                    attrs_of.push(*cell);
                }
            }
        }
        debug_assert_eq!(row_of.len() as u64, n);

        // raw annual energies: category mean times seeded jitter
        let mean_total_wh = spec.mean_annual_kwh * 1000.0;
        let row_mean_wh: Vec<f64> = spec
            .rows
            .iter()
            .map(|r| {
                if r.population_share_pct.is_zero() {
                    0.0
                } else {
                    mean_total_wh
                        * r.consumption_share_pct
                            .div(&r.population_share_pct)
                            .to_f64()
                }
            })
            .collect();
        let mut annual_wh: Vec<u64> = (0..n)
            .map(|i| {
                let mean = row_mean_wh[row_of[i as usize] as usize];
                (mean * jitter(spec.seed, i, spec.jitter_sigma)).round() as u64
            })
            .collect();

        let category_of: Vec<usize> = row_of.iter().map(|&r| r as usize).collect();
        let targets: Vec<Rational> = spec.rows.iter().map(|r| r.consumption_share_pct).collect();
        let names: Vec<String> = spec.rows.iter().map(|r| r.name.clone()).collect();
        let populated_targets: Vec<Rational> = targets
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if row_counts[i] == 0 {
                    Rational::ZERO
                } else {
                    *t
                }
            })
            .collect();
        let calibration_factors =
            calibrate_to_shares(&mut annual_wh, &category_of, &populated_targets, &names)?;

        let shapes = ShapeLibrary::default_for(spec.year_hours);
        let weights = spec
            .rows
            .iter()
            .map(|r| CumulativeWeights::from_shape(&shapes.blend(r.tech)))
            .collect();

        Ok(Synthesizer {
            spec,
            row_of,
            attrs_of,
            annual_wh,
            weights,
            calibration_factors,
        })
    }

    pub fn spec(&self) -> &PopulationSpec {
        &self.spec
    }

    pub fn households(&self) -> u64 {
        self.spec.households
    }

    pub fn household_id(&self, index: u64) -> String {
        format!("synth-{index:08}")
    }

    pub fn household(&self, index: u64) -> SynthHousehold {
        SynthHousehold {
            index,
            row: self.row_of[index as usize],
            attrs: self.attrs_of[index as usize],
        }
    }

    pub fn annual_wh(&self, index: u64) -> u64 {
        self.annual_wh[index as usize]
    }

    pub fn total_energy_wh(&self) -> u64 {
        self.annual_wh.iter().sum()
    }

    fn table(&self, index: u64) -> &CumulativeWeights {
        &self.weights[self.row_of[index as usize] as usize]
    }

    /// Add this household's hourly energy into a per-hour accumulator.
    pub fn add_hourly_into(&self, index: u64, acc: &mut [u64]) {
        self.table(index)
            .add_hourly_into(self.annual_wh(index), acc);
    }

    /// Energy of one household inside a set of hours.
    pub fn energy_in(&self, index: u64, hours: &[u32]) -> u64 {
        self.table(index).energy_in(self.annual_wh(index), hours)
    }

    /// Materialize a full hourly profile (used by the CSV exporter and small
    /// runs; the sweep pipeline streams instead).
    pub fn profile(&self, index: u64) -> HourlyProfile {
        let annual = self.annual_wh(index);
        let table = self.table(index);
        let hours = self.spec.year_hours as usize;
        let mut slots = Vec::with_capacity(hours);
        for h in 0..hours {
            slots.push(table.slot_wh(annual, h));
        }
        HourlyProfile::from_slots(self.household_id(index), slots)
    }
}
