//! Numeric abstraction for rate arithmetic.
//!
//! Hallucination rates and their weighted averages are computed over any
//! [`Scalar`]: `f32`, `f64`, or an exact [`Ratio`] over `i64` or `i128`. Rounding
//! is half-to-even and happens only when a value is rendered.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num};

pub trait Scalar: Num + Copy + PartialOrd + FromPrimitive + Debug + Send + Sync + 'static {
    /// `num / den`. `den` must be non-zero.
    fn from_counts(num: u64, den: u64) -> Self;

    /// Parses a plain decimal literal such as `32.31` or `-0.5`.
    fn parse_decimal(text: &str) -> Option<Self>;

    /// Fixed-point rendering with `decimals` fractional digits, rounding
    /// half-to-even.
    fn to_fixed(self, decimals: u32) -> String;

    fn hundred() -> Self {
        Self::from_u64(100).expect("100 is representable")
    }
}

/// Splits a decimal literal into an integer mantissa and a power-of-ten scale.
fn decimal_parts(text: &str) -> Option<(i64, u32)> {
    let text = text.trim();
    let (negative, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part
        .bytes()
        .chain(frac_part.bytes())
        .all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mantissa: i64 = if digits.is_empty() {
        0
    } else {
        digits.parse().ok()?
    };
    let scale = u32::try_from(frac_part.len()).ok()?;
    Some((if negative { -mantissa } else { mantissa }, scale))
}

fn normalize_negative_zero(s: String) -> String {
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn from_counts(num: u64, den: u64) -> Self {
                num as $t / den as $t
            }

            fn parse_decimal(text: &str) -> Option<Self> {
                decimal_parts(text)?;
                text.trim().parse().ok()
            }

            fn to_fixed(self, decimals: u32) -> String {
                let scale = (10 as $t).powi(decimals as i32);
                let rounded = (self * scale).round_ties_even() / scale;
                normalize_negative_zero(format!("{:.*}", decimals as usize, rounded))
            }
        }
    };
}

float_scalar!(f32);
float_scalar!(f64);

macro_rules! ratio_scalar {
    ($t:ty) => {
        impl Scalar for Ratio<$t> {
            fn from_counts(num: u64, den: u64) -> Self {
                let num = <$t>::try_from(num).expect("count fits the integer type");
                let den = <$t>::try_from(den).expect("count fits the integer type");
                Ratio::new(num, den)
            }

            fn parse_decimal(text: &str) -> Option<Self> {
                let (mantissa, scale) = decimal_parts(text)?;
                Some(Ratio::new(
                    <$t>::from(mantissa),
                    (10 as $t).checked_pow(scale)?,
                ))
            }

            fn to_fixed(self, decimals: u32) -> String {
                let unit = (10 as $t).pow(decimals);
                let scaled = self * Ratio::from_integer(unit);
                let floor = scaled.floor();
                let frac = scaled - floor;
                let half = Ratio::new(1, 2);
                let mut units = floor.to_integer();
                if frac > half || (frac == half && units % 2 != 0) {
                    units += 1;
                }
                let sign = if units < 0 { "-" } else { "" };
                let magnitude = units.unsigned_abs();
                let unit = unit.unsigned_abs();
                if decimals == 0 {
                    format!("{sign}{magnitude}")
                } else {
                    format!(
                        "{sign}{}.{:0width$}",
                        magnitude / unit,
                        magnitude % unit,
                        width = decimals as usize
                    )
                }
            }
        }
    };
}

ratio_scalar!(i64);
ratio_scalar!(i128);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_half_even() {
        let r = |s: &str| Ratio::<i64>::parse_decimal(s).unwrap();
        assert_eq!(r("0.125").to_fixed(2), "0.12");
        assert_eq!(r("0.135").to_fixed(2), "0.14");
        assert_eq!(r("19.1873").to_fixed(2), "19.19");
        assert_eq!(r("-0.125").to_fixed(2), "-0.12");
        assert_eq!(r("-0.001").to_fixed(2), "0.00");
        assert_eq!(r("2.5").to_fixed(0), "2");
        assert_eq!(r("3.5").to_fixed(0), "4");
    }

    #[test]
    fn float_rendering() {
        assert_eq!(0.25f64.to_fixed(2), "0.25");
        assert_eq!(33.0371f64.to_fixed(2), "33.04");
        assert_eq!((-0.0001f64).to_fixed(2), "0.00");
        assert_eq!(1.0f32.to_fixed(2), "1.00");
    }

    #[test]
    fn decimal_parsing() {
        assert_eq!(
            Ratio::<i64>::parse_decimal("32.31"),
            Some(Ratio::new(3231, 100))
        );
        assert_eq!(
            Ratio::<i64>::parse_decimal("100"),
            Some(Ratio::from_integer(100))
        );
        assert_eq!(f64::parse_decimal(".5"), Some(0.5));
        assert_eq!(f64::parse_decimal("nan"), None);
        assert_eq!(f64::parse_decimal("1e3"), None);
        assert_eq!(f64::parse_decimal(""), None);
    }

    #[test]
    fn wide_ratio() {
        let r = Ratio::<i128>::parse_decimal("19.1873").unwrap();
        assert_eq!(r.to_fixed(2), "19.19");
        assert_eq!(Ratio::<i128>::from_counts(3, 9), Ratio::new(1, 3));
    }

    #[test]
    fn counts() {
        assert_eq!(Ratio::<i64>::from_counts(1, 4), Ratio::new(1, 4));
        assert_eq!(f64::from_counts(1, 4), 0.25);
    }
}
