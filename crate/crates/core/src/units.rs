//! Duration strings with unit suffixes, normalized to integer picoseconds.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::timetag::Picos;

const UNITS: [(&str, u64); 5] = [
    ("ps", 1),
    ("ns", 1_000),
    ("us", 1_000_000),
    ("ms", 1_000_000_000),
    ("s", 1_000_000_000_000),
];

/// Parses `"12.5ns"`, `"80000 ps"`, `"1.5us"` or a bare integer (picoseconds).
///
/// Decimal fractions are evaluated exactly; a value that does not land on a
/// whole picosecond is rejected.
pub fn parse_duration(text: &str) -> Result<Picos> {
    let text = text.trim();
    let (number, scale) = UNITS
        .iter()
        .find_map(|(suffix, scale)| text.strip_suffix(suffix).map(|n| (n.trim_end(), *scale)))
        .unwrap_or((text, 1));
    let bad = || Error::param(format!("invalid duration '{text}'"));
    let (int_part, frac_part) = number.split_once('.').unwrap_or((number, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let whole: u64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| bad())? };
    let mut picos = whole.checked_mul(scale).ok_or_else(bad)?;
    let mut place = scale;
    for digit in frac_part.bytes().map(|b| u64::from(b - b'0')) {
        if digit != 0 && place < 10 {
            return Err(Error::param(format!("duration '{text}' is finer than 1 ps")));
        }
        place /= 10;
        picos = picos.checked_add(digit * place).ok_or_else(bad)?;
    }
    Ok(picos)
}

/// Renders picoseconds with the largest unit that represents them exactly.
pub fn format_duration(picos: Picos) -> String {
    for (suffix, scale) in UNITS.iter().rev() {
        if picos != 0 && *scale > 1 && picos.is_multiple_of((scale / 1000).max(1)) && picos >= *scale {
            let whole = picos / scale;
            let frac = picos % scale;
            if frac == 0 {
                return format!("{whole}{suffix}");
            }
            let digits = format!("{:0width$}", frac, width = scale.ilog10() as usize);
            return format!("{whole}.{}{suffix}", digits.trim_end_matches('0'));
        }
    }
    format!("{picos}ps")
}

/// A duration field that deserializes from an integer (ps) or a suffixed string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Duration(pub Picos);

impl Serialize for Duration {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_duration(self.0))
    }
}

impl<'de> Deserialize<'de> for Duration {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct DurationVisitor;

        impl Visitor<'_> for DurationVisitor {
            type Value = Duration;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an integer number of picoseconds or a string like \"12.5ns\"")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Duration, E> {
                u64::try_from(v)
                    .map(Duration)
                    .map_err(|_| E::custom("duration must be non-negative"))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Duration, E> {
                Ok(Duration(v))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Duration, E> {
                parse_duration(v).map(Duration).map_err(E::custom)
            }
        }

        deserializer.deserialize_any(DurationVisitor)
    }
}
