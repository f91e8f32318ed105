//! Unit-suffixed quantity parsing for config files.
//!
//! Times accept `s`, `ms`, `us`/`µs`, `ns`, and `inf`; frequencies accept
//! `Hz`, `kHz`, `MHz`, `GHz`. Bare numbers are SI base units. Mixed-unit
//! configs are the norm in this domain (ms decay times against kHz shifts),
//! so silent unit mistakes are worth a parser.

use serde::de::{self, Deserializer};
use serde::Deserialize;

pub fn parse_time(text: &str) -> Result<f64, String> {
    let trimmed = text.trim();
    let lower = trimmed.to_ascii_lowercase();
    if lower == "inf" || lower == "infinite" || lower == "infinity" {
        return Ok(f64::INFINITY);
    }
    let (number, unit) = split_unit(trimmed);
    let scale = match unit {
        "" | "s" => 1.0,
        "ms" => 1e-3,
        "us" | "µs" => 1e-6,
        "ns" => 1e-9,
        other => return Err(format!("unknown time unit '{other}' in '{text}'")),
    };
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse time '{text}'"))?;
    Ok(value * scale)
}

pub fn parse_frequency(text: &str) -> Result<f64, String> {
    let trimmed = text.trim();
    let (number, unit) = split_unit(trimmed);
    let scale = match unit {
        "" | "hz" | "Hz" => 1.0,
        "khz" | "kHz" => 1e3,
        "mhz" | "MHz" => 1e6,
        "ghz" | "GHz" => 1e9,
        other => return Err(format!("unknown frequency unit '{other}' in '{text}'")),
    };
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse frequency '{text}'"))?;
    Ok(value * scale)
}

fn split_unit(text: &str) -> (&str, &str) {
    let boundary = text
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_alphabetic() || *c == 'µ')
        .last()
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    (&text[..boundary], &text[boundary..])
}

/// A time in seconds, deserialized from either a bare number (seconds) or a
/// unit-suffixed string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeValue(pub f64);

impl<'de> Deserialize<'de> for TimeValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(v) => Ok(TimeValue(v)),
            Raw::Text(s) => parse_time(&s).map(TimeValue).map_err(de::Error::custom),
        }
    }
}

/// A frequency in Hz, deserialized like [`TimeValue`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyValue(pub f64);

impl<'de> Deserialize<'de> for FrequencyValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(v) => Ok(FrequencyValue(v)),
            Raw::Text(s) => parse_frequency(&s)
                .map(FrequencyValue)
                .map_err(de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1e-30)
    }

    #[test]
    fn times() {
        assert!(close(parse_time("1.4 ms").unwrap(), 1.4e-3));
        assert!(close(parse_time("30 us").unwrap(), 30e-6));
        assert!(close(parse_time("30µs").unwrap(), 30e-6));
        assert!(close(parse_time("7e-3").unwrap(), 7e-3));
        assert!(close(parse_time("2 s").unwrap(), 2.0));
        assert!(parse_time("inf").unwrap().is_infinite());
        assert!(parse_time("1.4 parsec").is_err());
    }

    #[test]
    fn frequencies() {
        assert!(close(parse_frequency("500 kHz").unwrap(), 500e3));
        assert!(close(parse_frequency("5.4 GHz").unwrap(), 5.4e9));
        assert!(close(parse_frequency("700kHz").unwrap(), 700e3));
        assert!(close(parse_frequency("250").unwrap(), 250.0));
        assert!(parse_frequency("3 furlongs").is_err());
    }
}
