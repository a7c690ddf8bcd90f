use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

use super::{doc_vector, EmbeddingModel};
use crate::calendar::DateWindow;
use crate::error::{Error, Result};
use crate::series::Series;
use crate::stats::CompensatedSum;
use crate::text::TokenizedDocument;

/// One row per calendar day, one column per embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DayMatrix {
    pub calendar: DateWindow,
    pub values: Array2<f64>,
    /// Rows copied from a neighbouring day because the day had no
    /// representable document.
    pub fill_mask: Vec<bool>,
}

impl DayMatrix {
    pub fn new(calendar: DateWindow, values: Array2<f64>, fill_mask: Vec<bool>) -> Result<Self> {
        if values.nrows() != calendar.len_days() {
            return Err(Error::DimensionMismatch {
                expected: calendar.len_days(),
                got: values.nrows(),
            });
        }
        if fill_mask.len() != values.nrows() {
            return Err(Error::DimensionMismatch {
                expected: values.nrows(),
                got: fill_mask.len(),
            });
        }
        if values.ncols() == 0 {
            return Err(Error::Empty("day matrix"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("day matrix contains non-finite values".into()));
        }
        Ok(DayMatrix {
            calendar,
            values,
            fill_mask,
        })
    }

    pub fn n_days(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.values.row(t)
    }

    pub fn column(&self, d: usize) -> Series {
        Series {
            start: self.calendar.start,
            values: self.values.column(d).to_vec(),
        }
    }

    pub fn restrict(&self, window: &DateWindow) -> Result<DayMatrix> {
        let w = self.calendar.intersect(window).ok_or(Error::Empty("day matrix window intersection"))?;
        let from = self.calendar.offset_of(w.start).expect("inside");
        let to = self.calendar.offset_of(w.end).expect("inside");
        Ok(DayMatrix {
            calendar: w,
            values: self.values.slice(ndarray::s![from..=to, ..]).to_owned(),
            fill_mask: self.fill_mask[from..=to].to_vec(),
        })
    }

    /// `date,filled,d0,d1,...` with one row per day.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header = vec!["date".to_string(), "filled".to_string()];
        header.extend((0..self.dim()).map(|d| format!("d{d}")));
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for (t, row) in self.values.axis_iter(Axis(0)).enumerate() {
            let mut rec = vec![self.calendar.day(t).to_string(), (self.fill_mask[t] as u8).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the format of [`DayMatrix::write_csv`]; the `filled` column is
    /// optional. Days must be consecutive.
    pub fn read_csv(path: &Path) -> Result<DayMatrix> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
        let malformed = |line: usize, message: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        if header.get(0) != Some("date") {
            return Err(malformed(1, "first column must be `date`".into()));
        }
        let has_fill = header.get(1) == Some("filled");
        let first_value = if has_fill { 2 } else { 1 };
        let dim = header.len().saturating_sub(first_value);
        if dim == 0 {
            return Err(malformed(1, "no dimension columns".into()));
        }
        let mut start: Option<NaiveDate> = None;
        let (mut values, mut mask) = (Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|e| malformed(line, format!("bad date {:?}: {e}", &rec[0])))?;
            let expected = start.map(|s| s + chrono::Duration::days(i as i64));
            match expected {
                None => start = Some(date),
                Some(d) if d == date => {}
                Some(d) => return Err(malformed(line, format!("expected {d}, found {date}"))),
            }
            mask.push(has_fill && rec[1].trim() == "1");
            if rec.len() != header.len() {
                return Err(malformed(line, format!("expected {} fields, got {}", header.len(), rec.len())));
            }
            for f in rec.iter().skip(first_value) {
                let v: f64 = f.trim().parse().map_err(|_| malformed(line, format!("bad number {f:?}")))?;
                values.push(v);
            }
        }
        let start = start.ok_or(Error::Empty("day matrix"))?;
        let n = mask.len();
        let values = Array2::from_shape_vec((n, dim), values).expect("shape");
        DayMatrix::new(DateWindow::from_len(start, n)?, values, mask)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Malformed {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        },
    }
}

/// Average document vectors per day. Days with no representable document copy
/// the previous row; leading empty days copy the first representable day.
pub fn day_matrix(
    model: &EmbeddingModel,
    calendar: DateWindow,
    docs_by_day: &[Vec<TokenizedDocument>],
) -> Result<DayMatrix> {
    if docs_by_day.len() != calendar.len_days() {
        return Err(Error::DimensionMismatch {
            expected: calendar.len_days(),
            got: docs_by_day.len(),
        });
    }
    let dim = model.dim;
    let rows: Vec<Option<Vec<f64>>> = docs_by_day
        .par_iter()
        .map(|docs| {
            let vecs: Vec<Vec<f64>> = docs.iter().filter_map(|d| doc_vector(model, &d.tokens)).collect();
            if vecs.is_empty() {
                return None;
            }
            let n = vecs.len() as f64;
            Some(
                (0..dim)
                    .map(|j| vecs.iter().map(|v| v[j]).collect::<CompensatedSum>().value() / n)
                    .collect(),
            )
        })
        .collect();
    let first = rows
        .iter()
        .position(Option::is_some)
        .ok_or(Error::Empty("representable documents in the corpus"))?;
    let mut values = Array2::zeros((rows.len(), dim));
    let mut mask = vec![false; rows.len()];
    let mut last = rows[first].clone().expect("present");
    for (t, row) in rows.into_iter().enumerate() {
        match row {
            Some(r) => last = r,
            None => mask[t] = true,
        }
        values.row_mut(t).assign(&ArrayView1::from(&last[..]));
    }
    DayMatrix::new(calendar, values, mask)
}
