//! Fixed-point money and rate arithmetic.
//!
//! All revenue accounting runs on integers so that sums are exact and
//! independent of evaluation order: money in quanta of 10^-4 DKK, volumetric
//! rates in micro-ore per kWh, energy in integer watt-hours. Division always
//! rounds half to even.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub};

/// Money quanta per DKK (quantum = 10^-4 DKK).
pub const QUANTA_PER_DKK: i64 = 10_000;
/// Micro-ore per ore.
pub const MICRO_ORE_PER_ORE: i64 = 1_000_000;
/// Divisor for `energy_wh * rate_micro_ore_per_kwh -> quanta`:
/// 1 Wh * 1 u-ore/kWh = 10^-9 ore = 10^-7 quanta.
const WH_RATE_TO_QUANTA_DIV: i128 = 10_000_000;

/// Integer division rounding half to even (banker's rounding). `den > 0`.
pub fn div_round_half_even(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den); // 0 <= r < den
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => {
            if q % 2 == 0 {
                q
            } else {
                q + 1
            }
        }
    }
}

/// An amount of money in quanta of 10^-4 DKK. May be negative (residuals).
#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_quanta(quanta: i64) -> Self {
        Money(quanta)
    }

    pub fn quanta(self) -> i64 {
        self.0
    }

    /// Exact conversion from a decimal DKK string with at most 4 fractional
    /// digits, e.g. `"428.8"` -> 4,288,000 quanta.
    pub fn from_dkk_str(s: &str) -> Result<Self, ParseDecimalError> {
        let r = Rational::from_decimal_str(s)?;
        let scaled = r
            .checked_mul(&Rational::from_integer(QUANTA_PER_DKK as i128))
            .ok_or(ParseDecimalError::OutOfRange)?;
        if !scaled.is_integer() {
            return Err(ParseDecimalError::TooManyFractionDigits);
        }
        let q = scaled.to_integer();
        i64::try_from(q)
            .map(Money)
            .map_err(|_| ParseDecimalError::OutOfRange)
    }

    pub fn dkk_f64(self) -> f64 {
        self.0 as f64 / QUANTA_PER_DKK as f64
    }

    /// Render in DKK with `decimals` fraction digits, rounding half to even.
    pub fn format_dkk(self, decimals: u32) -> String {
        debug_assert!(decimals <= 4);
        let scale = 10_i64.pow(4 - decimals);
        let scaled = div_round_half_even(self.0 as i128, scale as i128);
        format_scaled(scaled, decimals)
    }

    pub fn checked_add(self, other: Money) -> Option<Money> {
        self.0.checked_add(other.0).map(Money)
    }

    pub fn abs(self) -> Money {
        Money(self.0.abs())
    }
}

fn format_scaled(value: i128, decimals: u32) -> String {
    let sign = if value < 0 { "-" } else { "" };
    let v = value.unsigned_abs();
    if decimals == 0 {
        return format!("{sign}{v}");
    }
    let pow = 10_u128.pow(decimals);
    format!(
        "{sign}{}.{:0width$}",
        v / pow,
        v % pow,
        width = decimals as usize
    )
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} DKK", self.format_dkk(4))
    }
}

/// A volumetric rate in micro-ore per kWh.
#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Rate(i64);

impl Rate {
    pub const ZERO: Rate = Rate(0);

    pub fn from_micro_ore_per_kwh(v: i64) -> Self {
        Rate(v)
    }

    pub fn micro_ore_per_kwh(self) -> i64 {
        self.0
    }

    /// Exact conversion from a decimal ore/kWh string with at most 6
    /// fractional digits, e.g. `"18.25"` -> 18,250,000.
    pub fn from_ore_str(s: &str) -> Result<Self, ParseDecimalError> {
        let r = Rational::from_decimal_str(s)?;
        let scaled = r
            .checked_mul(&Rational::from_integer(MICRO_ORE_PER_ORE as i128))
            .ok_or(ParseDecimalError::OutOfRange)?;
        if !scaled.is_integer() {
            return Err(ParseDecimalError::TooManyFractionDigits);
        }
        i64::try_from(scaled.to_integer())
            .map(Rate)
            .map_err(|_| ParseDecimalError::OutOfRange)
    }

    pub fn ore_per_kwh_f64(self) -> f64 {
        self.0 as f64 / MICRO_ORE_PER_ORE as f64
    }

    /// Render in ore/kWh with `decimals` fraction digits.
    pub fn format_ore(self, decimals: u32) -> String {
        debug_assert!(decimals <= 6);
        let scale = 10_i64.pow(6 - decimals);
        format_scaled(div_round_half_even(self.0 as i128, scale as i128), decimals)
    }
}

/// Cost of `energy_wh` at `rate`, rounded half-even to the money quantum.
pub fn volumetric_cost(energy_wh: u64, rate: Rate) -> Money {
    let num = energy_wh as i128 * rate.0 as i128;
    Money(div_round_half_even(num, WH_RATE_TO_QUANTA_DIV) as i64)
}

/// Exact volumetric revenue `energy_wh * rate` in quanta, as a rational.
pub fn volumetric_cost_exact(energy_wh: u64, rate: Rate) -> Rational {
    Rational::new(energy_wh as i128 * rate.0 as i128, WH_RATE_TO_QUANTA_DIV)
}

/// Error parsing a decimal literal.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseDecimalError {
    #[error("not a decimal number")]
    Malformed,
    #[error("more fraction digits than the fixed-point unit carries")]
    TooManyFractionDigits,
    #[error("value out of range")]
    OutOfRange,
}

/// Exact rational over i128, always reduced, denominator positive.
///
/// Used for shares, scale factors and redistribution multipliers so that
/// conservation identities hold to the quantum rather than to float epsilon.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Rational {
    num: i128,
    den: i128,
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

impl Rational {
    pub const ZERO: Rational = Rational { num: 0, den: 1 };
    pub const ONE: Rational = Rational { num: 1, den: 1 };

    pub fn new(num: i128, den: i128) -> Self {
        assert!(den != 0, "rational with zero denominator");
        let sign = if den < 0 { -1 } else { 1 };
        let g = gcd(num, den);
        Rational {
            num: sign * num / g,
            den: sign * den / g,
        }
    }

    pub fn from_integer(v: i128) -> Self {
        Rational { num: v, den: 1 }
    }

    /// Parse a plain decimal literal such as `"0.55"`, `"-1.5"`, `"18.25"`.
    pub fn from_decimal_str(s: &str) -> Result<Self, ParseDecimalError> {
        let s = s.trim();
        let (sign, body) = match s.strip_prefix('-') {
            Some(rest) => (-1i128, rest),
            None => (1i128, s.strip_prefix('+').unwrap_or(s)),
        };
        if body.is_empty() {
            return Err(ParseDecimalError::Malformed);
        }
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(ParseDecimalError::Malformed);
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(ParseDecimalError::Malformed);
        }
        if frac_part.len() > 27 {
            return Err(ParseDecimalError::OutOfRange);
        }
        let mut num: i128 = 0;
        for c in int_part.chars().chain(frac_part.chars()) {
            num = num
                .checked_mul(10)
                .and_then(|n| n.checked_add((c as u8 - b'0') as i128))
                .ok_or(ParseDecimalError::OutOfRange)?;
        }
        let den = 10_i128.pow(frac_part.len() as u32);
        Ok(Rational::new(sign * num, den))
    }

    /// Recover the decimal a human wrote from an f64 that came through a
    /// config parser: the shortest round-trip formatting of `v` is that
    /// decimal for any literal of sensible length.
    pub fn from_f64_exact_decimal(v: f64) -> Result<Self, ParseDecimalError> {
        if !v.is_finite() {
            return Err(ParseDecimalError::Malformed);
        }
        let s = format!("{v}");
        if s.contains(['e', 'E']) {
            return Err(ParseDecimalError::OutOfRange);
        }
        Rational::from_decimal_str(&s)
    }

    pub fn numer(&self) -> i128 {
        self.num
    }

    pub fn denom(&self) -> i128 {
        self.den
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn to_integer(&self) -> i128 {
        debug_assert!(self.is_integer());
        self.num
    }

    pub fn checked_add(&self, other: &Rational) -> Option<Rational> {
        let g = gcd(self.den, other.den);
        let lcm_b = other.den / g;
        let num = self
            .num
            .checked_mul(lcm_b)?
            .checked_add(other.num.checked_mul(self.den / g)?)?;
        let den = self.den.checked_mul(lcm_b)?;
        Some(Rational::new(num, den))
    }

    pub fn checked_sub(&self, other: &Rational) -> Option<Rational> {
        self.checked_add(&Rational::new(-other.num, other.den))
    }

    pub fn checked_mul(&self, other: &Rational) -> Option<Rational> {
        // cross-reduce first to keep magnitudes small
        let g1 = gcd(self.num, other.den);
        let g2 = gcd(other.num, self.den);
        let num = (self.num / g1).checked_mul(other.num / g2)?;
        let den = (self.den / g2).checked_mul(other.den / g1)?;
        Some(Rational::new(num, den))
    }

    pub fn checked_div(&self, other: &Rational) -> Option<Rational> {
        if other.num == 0 {
            return None;
        }
        self.checked_mul(&Rational::new(other.den, other.num))
    }

    pub fn add(&self, other: &Rational) -> Rational {
        self.checked_add(other).expect("rational overflow in add")
    }

    pub fn sub(&self, other: &Rational) -> Rational {
        self.checked_sub(other).expect("rational overflow in sub")
    }

    pub fn mul(&self, other: &Rational) -> Rational {
        self.checked_mul(other).expect("rational overflow in mul")
    }

    pub fn div(&self, other: &Rational) -> Rational {
        self.checked_div(other).expect("rational division failure")
    }

    /// Nearest integer, half to even.
    pub fn round_half_even(&self) -> i128 {
        div_round_half_even(self.num, self.den)
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Render as a percentage with `decimals` fraction digits (value 0.074 -> "7.40").
    pub fn format_percent(&self, decimals: u32) -> String {
        let scale = 10_i128.pow(decimals + 2);
        let scaled = div_round_half_even(
            self.num.checked_mul(scale).expect("percent overflow"),
            self.den,
        );
        format_scaled(scaled, decimals)
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // denominators are positive; compare via cross-multiplication
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Multiply money by an exact rational multiplier, rounding half-even once.
pub fn scale_money(amount: Money, factor: &Rational) -> Money {
    let num = (amount.quanta() as i128)
        .checked_mul(factor.num)
        .expect("money scale overflow");
    Money::from_quanta(div_round_half_even(num, factor.den) as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_even_rounding() {
        assert_eq!(div_round_half_even(5, 2), 2); // 2.5 -> 2
        assert_eq!(div_round_half_even(7, 2), 4); // 3.5 -> 4
        assert_eq!(div_round_half_even(-5, 2), -2); // -2.5 -> -2
        assert_eq!(div_round_half_even(-7, 2), -4); // -3.5 -> -4
        assert_eq!(div_round_half_even(7, 3), 2); // 2.33 -> 2
        assert_eq!(div_round_half_even(8, 3), 3); // 2.67 -> 3
    }

    #[test]
    fn dkk_parsing_is_exact() {
        assert_eq!(Money::from_dkk_str("428.8").unwrap().quanta(), 4_288_000);
        assert_eq!(Money::from_dkk_str("937.6").unwrap().quanta(), 9_376_000);
        assert_eq!(Money::from_dkk_str("0.0001").unwrap().quanta(), 1);
        assert!(Money::from_dkk_str("0.00001").is_err());
        assert!(Money::from_dkk_str("1,5").is_err());
    }

    #[test]
    fn rate_parsing_is_exact() {
        assert_eq!(
            Rate::from_ore_str("18.25").unwrap().micro_ore_per_kwh(),
            18_250_000
        );
        assert_eq!(
            Rate::from_ore_str("66.52").unwrap().micro_ore_per_kwh(),
            66_520_000
        );
    }

    #[test]
    fn volumetric_cost_quantum() {
        // 2000 kWh at 14.6 ore/kWh = 292.00 DKK
        assert_eq!(
            volumetric_cost(2_000_000, Rate::from_ore_str("14.6").unwrap()),
            Money::from_dkk_str("292").unwrap()
        );
        // 150 kWh at 66.52 ore/kWh = 99.78 DKK
        assert_eq!(
            volumetric_cost(150_000, Rate::from_ore_str("66.52").unwrap()),
            Money::from_dkk_str("99.78").unwrap()
        );
    }

    #[test]
    fn formatting_half_even() {
        assert_eq!(Money::from_quanta(8_730_415).format_dkk(2), "873.04");
        assert_eq!(Money::from_quanta(8_730_450).format_dkk(2), "873.04"); // tie to even
        assert_eq!(Money::from_quanta(8_730_550).format_dkk(2), "873.06");
        assert_eq!(Money::from_quanta(-1_250).format_dkk(2), "-0.12");
        assert_eq!(Money::from_quanta(9_376_000).format_dkk(1), "937.6");
    }

    #[test]
    fn rational_decimals() {
        let r = Rational::from_decimal_str("0.55").unwrap();
        assert_eq!((r.numer(), r.denom()), (11, 20));
        let r = Rational::from_f64_exact_decimal(0.55).unwrap();
        assert_eq!((r.numer(), r.denom()), (11, 20));
        let r = Rational::from_f64_exact_decimal(18.25).unwrap();
        assert_eq!((r.numer(), r.denom()), (73, 4));
    }

    #[test]
    fn percent_formatting() {
        let r = Rational::new(74, 1000);
        assert_eq!(r.format_percent(2), "7.40");
        let r = Rational::new(-63, 1000);
        assert_eq!(r.format_percent(2), "-6.30");
    }

    proptest! {
        #[test]
        fn half_even_matches_reference(num in -1_000_000_000i128..1_000_000_000, den in 1i128..1_000_000) {
            let got = div_round_half_even(num, den);
            // reference: rational arithmetic through f64 is not exact, so
            // recheck algebraically: |num - got*den| <= den/2, tie -> even
            let rem = num - got * den;
            prop_assert!(2 * rem.abs() <= den);
            if 2 * rem.abs() == den {
                prop_assert_eq!(got % 2, 0);
            }
        }

        #[test]
        fn rational_roundtrip_ops(a in -10_000i128..10_000, b in 1i128..10_000,
                                  c in -10_000i128..10_000, d in 1i128..10_000) {
            let x = Rational::new(a, b);
            let y = Rational::new(c, d);
            let s = x.add(&y);
            prop_assert_eq!(s.sub(&y), x);
            if !y.is_zero() {
                let p = x.mul(&y);
                prop_assert_eq!(p.div(&y), x);
            }
        }
    }
}
