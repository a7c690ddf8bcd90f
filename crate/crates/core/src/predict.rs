//! Lead-shifted regression of new cases on selected dimensions, with a
//! forest hyperparameter sweep and date-based holdout evaluation.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::DayMatrix;
use crate::error::{Error, Result};
use crate::forest::{fit, ForestModel, ForestParams};
use crate::ingest::CountSeries;
pub use crate::series::moving_average;
use crate::series::{difference, Series};

/// Which form of the new-case series the model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    #[default]
    Raw,
    Diff1,
    Diff2,
}

impl TargetTransform {
    pub fn apply(self, counts: &CountSeries) -> Result<Series> {
        let raw = counts.new_case_series()?;
        match self {
            TargetTransform::Raw => Ok(raw),
            TargetTransform::Diff1 => difference(&raw, 1),
            TargetTransform::Diff2 => difference(&raw, 2),
        }
    }
}

/// Which form of the selected columns the model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTransform {
    #[default]
    Raw,
    RollingVariance,
}

/// Supervised pairs: features on day t, target on day t + lead.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadFrame {
    pub lead_days: usize,
    pub dims: Vec<usize>,
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    /// Feature date of each row, strictly increasing.
    pub dates: Vec<NaiveDate>,
}

impl LeadFrame {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn target_date(&self, i: usize) -> NaiveDate {
        self.dates[i] + Duration::days(self.lead_days as i64)
    }

    fn take(&self, rows: std::ops::Range<usize>) -> LeadFrame {
        LeadFrame {
            lead_days: self.lead_days,
            dims: self.dims.clone(),
            x: self.x.slice(ndarray::s![rows.clone(), ..]).to_owned(),
            y: self.y[rows.clone()].to_vec(),
            dates: self.dates[rows].to_vec(),
        }
    }
}

/// Pair the `dims` columns of `m` on each day with `target` `lead` days later,
/// keeping only days where both exist.
pub fn make_frame(m: &DayMatrix, dims: &[usize], target: &Series, lead: usize) -> Result<LeadFrame> {
    if dims.is_empty() {
        return Err(Error::Empty("dimension set"));
    }
    if let Some(&d) = dims.iter().find(|&&d| d >= m.dim()) {
        return Err(Error::InvalidParam(format!(
            "dimension {d} out of range for a {}-column matrix",
            m.dim()
        )));
    }
    let window = target.window();
    let mut rows = Vec::new();
    let mut dates = Vec::new();
    let mut y = Vec::new();
    for (t, date) in m.calendar.days().enumerate() {
        if let Some(i) = window.offset_of(date + Duration::days(lead as i64)) {
            rows.push(t);
            dates.push(date);
            y.push(target.values[i]);
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("lead frame"));
    }
    let mut x = Array2::zeros((rows.len(), dims.len()));
    for (r, &t) in rows.iter().enumerate() {
        for (c, &d) in dims.iter().enumerate() {
            x[(r, c)] = m.values[(t, d)];
        }
    }
    Ok(LeadFrame {
        lead_days: lead,
        dims: dims.to_vec(),
        x,
        y,
        dates,
    })
}

/// Rows with feature date ≤ `train_end` train; the rest test. Both sides
/// must be non-empty.
pub fn split_by_date(frame: &LeadFrame, train_end: NaiveDate) -> Result<(LeadFrame, LeadFrame)> {
    let cut = frame.dates.partition_point(|&d| d <= train_end);
    if cut == 0 {
        return Err(Error::Empty("training split"));
    }
    if cut == frame.len() {
        return Err(Error::Empty("holdout split"));
    }
    Ok((frame.take(0..cut), frame.take(cut..frame.len())))
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::Empty("r2 input"));
    }
    let mean = crate::stats::mean(actual);
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Degenerate("r2 is undefined for a constant actual series".into()));
    }
    let ss_res: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p) * (a - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub n_trees: Vec<usize>,
    /// `None` is unlimited depth.
    pub max_depth: Vec<Option<usize>>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            n_trees: vec![100, 300, 500],
            max_depth: vec![Some(4), Some(8), Some(16), None],
        }
    }
}

impl Grid {
    pub fn cells(&self) -> Vec<(usize, Option<usize>)> {
        self.n_trees
            .iter()
            .flat_map(|&n| self.max_depth.iter().map(move |&d| (n, d)))
            .collect()
    }
}

/// Forest parameters of one grid cell. The seed depends only on the cell's
/// contents, so repeated cells give identical fits.
pub fn cell_params(base: &ForestParams, seed: u64, n_trees: usize, max_depth: Option<usize>) -> ForestParams {
    let depth_code = max_depth.map_or(0, |d| d as u64 + 1);
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [n_trees as u64, depth_code] {
        h = (h ^ v).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    ForestParams {
        n_trees,
        max_depth,
        seed: h,
        ..base.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Feature date.
    pub date: NaiveDate,
    pub target_date: NaiveDate,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedPoint {
    pub date: NaiveDate,
    pub actual_ma3: f64,
    pub predicted_ma3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lead_days: usize,
    pub train_end: NaiveDate,
    pub dims: Vec<usize>,
    pub params: ForestParams,
    pub r2: f64,
    /// R² of the 3-day moving averages; `None` when undefined.
    pub r2_smoothed: Option<f64>,
    pub predictions: Vec<Prediction>,
    pub smoothed: Vec<SmoothedPoint>,
    pub best: bool,
}

impl EvalReport {
    /// `date,actual,predicted,actual_ma3,predicted_ma3`; the first two rows
    /// have no moving average.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,actual,predicted,actual_ma3,predicted_ma3\n");
        let offset = self.predictions.len() - self.smoothed.len();
        for (i, p) in self.predictions.iter().enumerate() {
            let _ = write!(out, "{},{},{}", p.date, p.actual, p.predicted);
            match i.checked_sub(offset).and_then(|j| self.smoothed.get(j)) {
                Some(s) => {
                    let _ = writeln!(out, ",{},{}", s.actual_ma3, s.predicted_ma3);
                }
                None => out.push_str(",,\n"),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn write(&self, json: &Path, csv: &Path) -> Result<()> {
        std::fs::write(json, self.to_json()).map_err(|e| Error::io(json, e))?;
        std::fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))
    }
}

/// Fit on `train`, predict `test`, and score both raw and smoothed.
pub fn evaluate(
    train: &LeadFrame,
    test: &LeadFrame,
    train_end: NaiveDate,
    params: &ForestParams,
) -> Result<(EvalReport, ForestModel)> {
    let model = fit(train.x.view(), &train.y, params)?;
    let predicted = model.predict(test.x.view())?;
    let r2_raw = r2(&test.y, &predicted)?;
    let predictions: Vec<Prediction> = (0..test.len())
        .map(|i| Prediction {
            date: test.dates[i],
            target_date: test.target_date(i),
            actual: test.y[i],
            predicted: predicted[i],
        })
        .collect();
    let (smoothed, r2_smoothed) = if test.len() >= 3 {
        let a = moving_average(&Series::new(test.dates[0], test.y.clone())?, 3)?;
        let p = moving_average(&Series::new(test.dates[0], predicted.clone())?, 3)?;
        let pts = (0..a.len())
            .map(|i| SmoothedPoint {
                date: a.date_of(i),
                actual_ma3: a.values[i],
                predicted_ma3: p.values[i],
            })
            .collect();
        (pts, r2(&a.values, &p.values).ok())
    } else {
        (Vec::new(), None)
    };
    let report = EvalReport {
        lead_days: test.lead_days,
        train_end,
        dims: test.dims.clone(),
        params: params.clone(),
        r2: r2_raw,
        r2_smoothed,
        predictions,
        smoothed,
        best: false,
    };
    Ok((report, model))
}

/// Evaluate every grid cell in parallel. The report with the highest R² is
/// flagged `best` (first in grid order on ties).
pub fn sweep(
    train: &LeadFrame,
    test: &LeadFrame,
    train_end: NaiveDate,
    grid: &Grid,
    base: &ForestParams,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::Empty("hyperparameter grid"));
    }
    let mut reports: Vec<EvalReport> = cells
        .par_iter()
        .map(|&(n, d)| evaluate(train, test, train_end, &cell_params(base, seed, n, d)).map(|r| r.0))
        .collect::<Result<_>>()?;
    let best = reports
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.r2 > reports[b].r2 { i } else { b });
    reports[best].best = true;
    Ok(reports)
}

/// `n_trees,max_depth,r2,r2_smoothed,best` per grid cell.
pub fn sweep_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("n_trees,max_depth,r2,r2_smoothed,best\n");
    for r in reports {
        let depth = r.params.max_depth.map_or("unlimited".to_string(), |d| d.to_string());
        let smoothed = r.r2_smoothed.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{depth},{},{smoothed},{}", r.params.n_trees, r.r2, r.best);
    }
    out
}
