//! Fixed-layout UTC timestamps and the logical clock that drives them.
//!
//! Timestamps are always the 15-byte form `YYYYMMDDThhmmss`. Nothing in this
//! crate reads the wall clock; time advances only through [`LogicalClock`].

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const TIMESTAMP_LEN: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimestampError {
    #[error("timestamp must be {TIMESTAMP_LEN} bytes, got {0}")]
    Length(usize),
    #[error("invalid timestamp byte at offset {0}")]
    BadDigit(usize),
    #[error("timestamp fields out of range")]
    OutOfRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Timestamp(NaiveDateTime);

impl Timestamp {
    /// Epoch of the logical clock: 2020-01-01 00:00:00.
    pub fn epoch() -> Self {
        Self::from_ymd_hms(2020, 1, 1, 0, 0, 0).expect("valid epoch")
    }

    pub fn from_ymd_hms(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> Option<Self> {
        if !(0..=9999).contains(&y) {
            return None;
        }
        NaiveDate::from_ymd_opt(y, mo, d)
            .and_then(|date| date.and_hms_opt(h, mi, s))
            .map(Timestamp)
    }

    /// Timestamp `ticks` seconds after the logical epoch.
    pub fn from_ticks(ticks: u64) -> Self {
        let secs = i64::try_from(ticks).unwrap_or(i64::MAX);
        Timestamp(Self::epoch().0 + Duration::seconds(secs))
    }

    pub fn parse_bytes(raw: &[u8]) -> Result<Self, TimestampError> {
        if raw.len() != TIMESTAMP_LEN {
            return Err(TimestampError::Length(raw.len()));
        }
        for (i, &b) in raw.iter().enumerate() {
            let ok = if i == 8 { b == b'T' } else { b.is_ascii_digit() };
            if !ok {
                return Err(TimestampError::BadDigit(i));
            }
        }
        let num = |range: std::ops::Range<usize>| -> u32 {
            raw[range].iter().fold(0u32, |acc, &b| acc * 10 + u32::from(b - b'0'))
        };
        Self::from_ymd_hms(
            num(0..4) as i32,
            num(4..6),
            num(6..8),
            num(9..11),
            num(11..13),
            num(13..15),
        )
        .ok_or(TimestampError::OutOfRange)
    }

    pub fn to_bytes(&self) -> [u8; TIMESTAMP_LEN] {
        let text = self.to_string();
        let mut out = [0u8; TIMESTAMP_LEN];
        out.copy_from_slice(text.as_bytes());
        out
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y%m%dT%H%M%S"))
    }
}

impl FromStr for Timestamp {
    type Err = TimestampError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_bytes(s.as_bytes())
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Shared logical clock in whole-second ticks since [`Timestamp::epoch`].
/// Clones observe the same time.
#[derive(Debug, Clone, Default)]
pub struct LogicalClock {
    ticks: Arc<AtomicU64>,
}

impl LogicalClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ticks(&self) -> u64 {
        self.ticks.load(Ordering::SeqCst)
    }

    pub fn now(&self) -> Timestamp {
        Timestamp::from_ticks(self.ticks())
    }

    /// Move the clock forward to `ticks`. Never moves it backwards.
    pub fn advance_to(&self, ticks: u64) {
        self.ticks.fetch_max(ticks, Ordering::SeqCst);
    }

    pub fn advance_by(&self, delta: u64) {
        self.ticks.fetch_add(delta, Ordering::SeqCst);
    }
}
