//! Calendar dates and simulation timestamps.
//!
//! Both render as fixed-width digit strings (`YYYYMMDD`,
//! `YYYYMMDDTHHMMSS`) so that lexicographic order inside credential
//! conditions equals chronological order.

use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {kind} `{text}`")]
pub struct TimeParseError {
    kind: &'static str,
    text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Date(NaiveDate);

impl Date {
    pub fn from_ymd(year: i32, month: u32, day: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, day).map(Date)
    }

    pub fn pred(self) -> Date {
        Date(self.0.pred_opt().expect("date underflow"))
    }

    pub fn succ(self) -> Date {
        Date(self.0.succ_opt().expect("date overflow"))
    }

    pub fn add_days(self, days: i64) -> Date {
        Date(self.0 + Duration::days(days))
    }

    pub fn start_of_day(self) -> SimTime {
        SimTime(self.0.and_hms_opt(0, 0, 0).expect("midnight exists"))
    }
}

impl fmt::Display for Date {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y%m%d"))
    }
}

impl FromStr for Date {
    type Err = TimeParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TimeParseError {
            kind: "date",
            text: s.to_string(),
        };
        if s.len() != 8 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        NaiveDate::parse_from_str(s, "%Y%m%d")
            .map(Date)
            .map_err(|_| err())
    }
}

/// A point on the simulation clock, second resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(NaiveDateTime);

impl SimTime {
    pub fn date(self) -> Date {
        Date(self.0.date())
    }

    pub fn plus_secs(self, secs: i64) -> SimTime {
        SimTime(self.0 + Duration::seconds(secs))
    }

    pub fn secs_until(self, later: SimTime) -> i64 {
        (later.0 - self.0).num_seconds()
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y%m%dT%H%M%S"))
    }
}

impl FromStr for SimTime {
    type Err = TimeParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TimeParseError {
            kind: "timestamp",
            text: s.to_string(),
        };
        let bytes = s.as_bytes();
        let shape_ok = bytes.len() == 15
            && bytes[8] == b'T'
            && bytes
                .iter()
                .enumerate()
                .all(|(i, b)| i == 8 || b.is_ascii_digit());
        if !shape_ok {
            return Err(err());
        }
        NaiveDateTime::parse_from_str(s, "%Y%m%dT%H%M%S")
            .map(SimTime)
            .map_err(|_| err())
    }
}

/// Half-open `[start, end)` interval on the simulation clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    pub start: SimTime,
    pub end: SimTime,
}

impl Interval {
    pub fn new(start: SimTime, end: SimTime) -> Option<Self> {
        (start < end).then_some(Interval { start, end })
    }

    pub fn contains(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn date_order_matches_string_order() {
        let a: Date = "20031119".parse().unwrap();
        let b: Date = "20040324".parse().unwrap();
        assert!(a < b);
        assert!(a.to_string() < b.to_string());
        assert_eq!(a.succ().to_string(), "20031120");
        assert_eq!(b.pred().to_string(), "20040323");
    }

    #[test]
    fn rejects_loose_formats() {
        assert!("2003-11-19".parse::<Date>().is_err());
        assert!("20031340".parse::<Date>().is_err());
        assert!("20031119 120000".parse::<SimTime>().is_err());
    }

    #[test]
    fn timestamps_round_trip() {
        let t: SimTime = "20031119T093000".parse().unwrap();
        assert_eq!(t.to_string(), "20031119T093000");
        assert_eq!(t.plus_secs(3600).to_string(), "20031119T103000");
        assert_eq!(t.date().to_string(), "20031119");
    }

    #[test]
    fn interval_semantics() {
        let t0: SimTime = "20031119T000000".parse().unwrap();
        let i = Interval::new(t0, t0.plus_secs(10)).unwrap();
        assert!(i.contains(t0));
        assert!(!i.contains(t0.plus_secs(10)));
        let j = Interval::new(t0.plus_secs(10), t0.plus_secs(20)).unwrap();
        assert!(!i.overlaps(&j));
        assert!(Interval::new(t0, t0).is_none());
    }
}
