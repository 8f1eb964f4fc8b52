//! Mute duration grammar: `^[0-9]+(s|m|h|d)$`, case-insensitive, 1s..=365d.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const MIN_MUTE_SECS: u64 = 1;
pub const MAX_MUTE_SECS: u64 = 365 * 86_400;

/// A validated mute duration in whole seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MuteDuration(u64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DurationError {
    #[error("duration {0:?} does not match <digits><s|m|h|d>")]
    Syntax(String),
    #[error("duration must be at least 1s")]
    TooShort,
    #[error("duration exceeds 365d")]
    TooLong,
}

impl MuteDuration {
    pub fn parse(input: &str) -> Result<Self, DurationError> {
        let syntax = || DurationError::Syntax(input.to_owned());
        let (digits, unit) = input.split_at(input.len().saturating_sub(1));
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(syntax());
        }
        let scale = match unit.to_ascii_lowercase().as_str() {
            "s" => 1,
            "m" => 60,
            "h" => 3_600,
            "d" => 86_400,
            _ => return Err(syntax()),
        };
        // Anything that overflows u64 is certainly over the cap.
        let value: u64 = match digits.parse() {
            Ok(v) => v,
            Err(_) => return Err(DurationError::TooLong),
        };
        let secs = value.checked_mul(scale).ok_or(DurationError::TooLong)?;
        Self::from_secs(secs)
    }

    pub fn from_secs(secs: u64) -> Result<Self, DurationError> {
        if secs < MIN_MUTE_SECS {
            Err(DurationError::TooShort)
        } else if secs > MAX_MUTE_SECS {
            Err(DurationError::TooLong)
        } else {
            Ok(Self(secs))
        }
    }

    pub fn secs(self) -> u64 {
        self.0
    }

    pub fn as_chrono(self) -> chrono::Duration {
        chrono::Duration::seconds(self.0 as i64)
    }
}

/// Renders seconds with the largest unit that divides them exactly, so the
/// output parses back to the same value.
pub fn format_secs(secs: u64) -> String {
    if secs > 0 && secs % 86_400 == 0 {
        format!("{}d", secs / 86_400)
    } else if secs > 0 && secs % 3_600 == 0 {
        format!("{}h", secs / 3_600)
    } else if secs > 0 && secs % 60 == 0 {
        format!("{}m", secs / 60)
    } else {
        format!("{secs}s")
    }
}

impl fmt::Display for MuteDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_secs(self.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accepts_units_case_insensitively() {
        assert_eq!(MuteDuration::parse("1h").unwrap().secs(), 3_600);
        assert_eq!(MuteDuration::parse("90S").unwrap().secs(), 90);
        assert_eq!(MuteDuration::parse("7D").unwrap().secs(), 604_800);
        assert_eq!(MuteDuration::parse("15m").unwrap().secs(), 900);
    }

    #[test]
    fn rejects_zero_and_garbage() {
        assert_eq!(MuteDuration::parse("0m"), Err(DurationError::TooShort));
        assert_eq!(MuteDuration::parse("0s"), Err(DurationError::TooShort));
        for bad in ["", "h", "1", "1w", "-1h", "1.5h", " 1h", "1h ", "1hh"] {
            assert!(
                matches!(MuteDuration::parse(bad), Err(DurationError::Syntax(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn enforces_upper_bound() {
        assert!(MuteDuration::parse("365d").is_ok());
        assert_eq!(MuteDuration::parse("366d"), Err(DurationError::TooLong));
        assert_eq!(
            MuteDuration::parse("99999999999999999999999d"),
            Err(DurationError::TooLong)
        );
    }

    proptest! {
        #[test]
        fn format_round_trips(secs in MIN_MUTE_SECS..=MAX_MUTE_SECS) {
            let d = MuteDuration::from_secs(secs).unwrap();
            prop_assert_eq!(MuteDuration::parse(&d.to_string()).unwrap(), d);
        }
    }
}
