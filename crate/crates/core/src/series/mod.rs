//! Daily time-series primitives: differencing, trailing rolling variance,
//! the ADF unit-root test and the cross-correlation function.

mod adf;
mod ccf;

pub use adf::{adf_test, default_max_lag, mackinnon_p_value, AdfResult};
pub use ccf::{ccf, ccf_with_bound, leading_lags, leading_lags_by, CcfResult, LagRule, LeadCriterion, Sidedness};

use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::calendar::DateWindow;
use crate::error::{Error, Result};

/// A gap-free daily series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub start: NaiveDate,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(start: NaiveDate, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("series"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("series contains non-finite values".into()));
        }
        Ok(Series { start, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn window(&self) -> DateWindow {
        DateWindow::from_len(self.start, self.values.len()).expect("non-empty")
    }

    pub fn date_of(&self, i: usize) -> NaiveDate {
        self.start + Duration::days(i as i64)
    }

    /// The part of the series inside `window`.
    pub fn restrict(&self, window: &DateWindow) -> Result<Series> {
        let own = self.window();
        let w = own.intersect(window).ok_or(Error::Empty("series window intersection"))?;
        let from = own.offset_of(w.start).expect("inside");
        let to = own.offset_of(w.end).expect("inside");
        Ok(Series {
            start: w.start,
            values: self.values[from..=to].to_vec(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        let mut body = String::from("date,value\n");
        for (i, v) in self.values.iter().enumerate() {
            body.push_str(&format!("{},{}\n", self.date_of(i), v));
        }
        out.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads the `date,value` format of [`Series::write_csv`]; days must be
    /// consecutive.
    pub fn read_csv(path: &Path) -> Result<Series> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let malformed = |line: usize, message: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = body.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "date,value" => {}
            _ => return Err(malformed(1, "header must be date,value".into())),
        }
        let mut start = None;
        let mut values = Vec::new();
        for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            let (d, v) = line
                .split_once(',')
                .ok_or_else(|| malformed(i + 1, "expected date,value".into()))?;
            let date = NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d")
                .map_err(|e| malformed(i + 1, format!("bad date {d:?}: {e}")))?;
            let first = *start.get_or_insert(date);
            if date != first + Duration::days(values.len() as i64) {
                return Err(malformed(i + 1, format!("non-consecutive date {date}")));
            }
            values.push(v.trim().parse::<f64>().map_err(|_| malformed(i + 1, format!("bad number {v:?}")))?);
        }
        Series::new(start.ok_or(Error::Empty("series"))?, values)
    }
}

/// Apply first differencing `order` times. The start date advances by
/// `order` days.
pub fn difference(s: &Series, order: usize) -> Result<Series> {
    if order == 0 {
        return Err(Error::InvalidParam("difference order must be >= 1".into()));
    }
    if s.len() <= order {
        return Err(Error::TooShort {
            needed: order + 1,
            got: s.len(),
        });
    }
    let mut values = s.values.clone();
    for _ in 0..order {
        values = values.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(Series {
        start: s.start + Duration::days(order as i64),
        values,
    })
}

/// Sample variance (denominator `window - 1`) over each trailing window.
/// The first `window - 1` positions have no full window and are dropped.
pub fn rolling_variance(s: &Series, window: usize) -> Result<Series> {
    if window < 2 {
        return Err(Error::InvalidParam("rolling window must be >= 2".into()));
    }
    if s.len() < window {
        return Err(Error::TooShort {
            needed: window,
            got: s.len(),
        });
    }
    let values = s
        .values
        .windows(window)
        .map(|w| {
            // Welford over the window
            let (mut mean, mut m2) = (0.0f64, 0.0f64);
            for (k, &x) in w.iter().enumerate() {
                let delta = x - mean;
                mean += delta / (k + 1) as f64;
                m2 += delta * (x - mean);
            }
            (m2 / (window - 1) as f64).max(0.0)
        })
        .collect();
    Ok(Series {
        start: s.start + Duration::days(window as i64 - 1),
        values,
    })
}

/// Trailing mean over each window; length shrinks by `window - 1`.
pub fn moving_average(s: &Series, window: usize) -> Result<Series> {
    if window == 0 {
        return Err(Error::InvalidParam("moving-average window must be >= 1".into()));
    }
    if s.len() < window {
        return Err(Error::TooShort {
            needed: window,
            got: s.len(),
        });
    }
    let values = s
        .values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    Ok(Series {
        start: s.start + Duration::days(window as i64 - 1),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 8, 1).unwrap()
    }

    fn s(v: &[f64]) -> Series {
        Series::new(day0(), v.to_vec()).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = Series::new(day0(), vec![1.5, -2.0, 1e-17, 3.0]).unwrap();
        s.write_csv(&p).unwrap();
        assert_eq!(Series::read_csv(&p).unwrap(), s);
        std::fs::write(&p, "date,value\n2020-08-01,1\n2020-08-03,2\n").unwrap();
        assert!(matches!(Series::read_csv(&p), Err(Error::Malformed { line: 3, .. })));
    }

    #[test]
    fn difference_examples() {
        let x = s(&[1.0, 4.0, 9.0, 16.0]);
        assert_eq!(difference(&x, 1).unwrap().values, vec![3.0, 5.0, 7.0]);
        let d2 = difference(&x, 2).unwrap();
        assert_eq!(d2.values, vec![2.0, 2.0]);
        assert_eq!(d2.start, day0() + Duration::days(2));
        assert_eq!(difference(&s(&[5.0; 6]), 3).unwrap().values, vec![0.0; 3]);
        assert!(matches!(difference(&x, 4), Err(Error::TooShort { .. })));
    }

    #[test]
    fn rolling_variance_examples() {
        let r = rolling_variance(&s(&[1.0, 2.0, 3.0, 4.0]), 3).unwrap();
        assert_eq!(r.values, vec![1.0, 1.0]);
        assert_eq!(r.start, day0() + Duration::days(2));
        assert_eq!(rolling_variance(&s(&[2.5; 5]), 3).unwrap().values, vec![0.0; 3]);
        assert_eq!(rolling_variance(&s(&[0.0, 0.0, 3.0]), 3).unwrap().values, vec![3.0]);
        assert!(rolling_variance(&s(&[1.0, 2.0]), 3).is_err());
    }

    #[test]
    fn moving_average_examples() {
        let m = moving_average(&s(&[3.0, 0.0, 3.0, 6.0]), 3).unwrap();
        assert_eq!(m.values, vec![2.0, 3.0]);
        assert_eq!(moving_average(&s(&[4.0; 5]), 3).unwrap().values, vec![4.0; 3]);
        assert!(moving_average(&s(&[1.0]), 3).is_err());
    }

    proptest! {
        #[test]
        fn iterated_first_difference_is_second_difference(v in proptest::collection::vec(-1e3f64..1e3, 3..60)) {
            let x = s(&v);
            let twice = difference(&difference(&x, 1).unwrap(), 1).unwrap();
            prop_assert_eq!(twice, difference(&x, 2).unwrap());
        }
    }
}
