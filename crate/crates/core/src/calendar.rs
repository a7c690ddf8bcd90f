use std::fmt;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive range of calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::InvalidParam(format!(
                "window end {end} precedes start {start}"
            )));
        }
        Ok(DateWindow { start, end })
    }

    /// Window of `days` consecutive days beginning at `start`.
    pub fn from_len(start: NaiveDate, days: usize) -> Result<Self> {
        if days == 0 {
            return Err(Error::Empty("date window"));
        }
        Ok(DateWindow {
            start,
            end: start + Duration::days(days as i64 - 1),
        })
    }

    pub fn len_days(&self) -> usize {
        ((self.end - self.start).num_days() + 1) as usize
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn intersect(&self, other: &DateWindow) -> Option<DateWindow> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(DateWindow { start, end })
    }

    /// Zero-based position of `date` within the window.
    pub fn offset_of(&self, date: NaiveDate) -> Option<usize> {
        self.contains(date)
            .then(|| (date - self.start).num_days() as usize)
    }

    pub fn day(&self, offset: usize) -> NaiveDate {
        self.start + Duration::days(offset as i64)
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.len_days()).map(move |i| self.day(i))
    }
}

impl fmt::Display for DateWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..={}", self.start, self.end)
    }
}

/// Parse a date or timestamp and truncate it to its UTC calendar day.
///
/// Accepts `YYYY-MM-DD`, RFC 3339 timestamps (offset converted to UTC),
/// naive `YYYY-MM-DD[T ]HH:MM:SS[.f]` timestamps (taken as UTC) and the
/// `Wed Oct 10 20:19:24 +0000 2018` form used by Twitter exports.
pub fn parse_day(raw: &str) -> Option<NaiveDate> {
    let s = raw.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d);
    }
    if let Ok(ts) = DateTime::parse_from_rfc3339(s) {
        return Some(ts.with_timezone(&Utc).date_naive());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(ts.date());
        }
    }
    if let Ok(ts) = DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y") {
        return Some(ts.with_timezone(&Utc).date_naive());
    }
    None
}
