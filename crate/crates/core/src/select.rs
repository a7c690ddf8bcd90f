//! Significant-dimension selection: stationarity transforms, CCF screening,
//! Boruta, and set combination.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boruta::{self, BorutaParams, BorutaResult, Decision};
use crate::embedding::DayMatrix;
use crate::error::{Error, Result};
use crate::ingest::CountSeries;
use crate::series::{adf_test, ccf_with_bound, difference, leading_lags_by, rolling_variance, AdfResult, CcfResult, LeadCriterion, Series};
use crate::stats::normal_quantile;

/// Minimum number of count days for the CCF target.
pub const MIN_TARGET_DAYS: usize = 60;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ccf_lags: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boruta: Option<Decision>,
}

impl Provenance {
    fn merge(&self, other: &Provenance) -> Provenance {
        let ccf_lags = match (&self.ccf_lags, &other.ccf_lags) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect::<BTreeSet<_>>().into_iter().collect()),
            (a, b) => a.clone().or_else(|| b.clone()),
        };
        let boruta = match (self.boruta, other.boruta) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        Provenance { ccf_lags, boruta }
    }

    fn is_empty(&self) -> bool {
        self.ccf_lags.is_none() && self.boruta.is_none()
    }
}

/// A set of selected dimensions with the evidence behind each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdSet {
    /// Number of dimensions of the matrix the set was selected from.
    pub n_dims: usize,
    pub dims: Vec<usize>,
    pub provenance: BTreeMap<usize, Provenance>,
    pub transform_meta: String,
}

impl SdSet {
    pub fn new(n_dims: usize, provenance: BTreeMap<usize, Provenance>, transform_meta: impl Into<String>) -> Result<Self> {
        if let Some((&d, _)) = provenance.iter().find(|(&d, p)| d >= n_dims || p.is_empty()) {
            return Err(Error::InvalidParam(format!(
                "dimension {d} is out of range or has no provenance"
            )));
        }
        Ok(SdSet {
            n_dims,
            dims: provenance.keys().copied().collect(),
            provenance,
            transform_meta: transform_meta.into(),
        })
    }

    pub fn empty(n_dims: usize, transform_meta: impl Into<String>) -> Self {
        SdSet {
            n_dims,
            dims: Vec::new(),
            provenance: BTreeMap::new(),
            transform_meta: transform_meta.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn contains(&self, d: usize) -> bool {
        self.provenance.contains_key(&d)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_json(body: &str) -> Result<Self> {
        let s: SdSet = serde_json::from_str(body).map_err(|e| Error::Format {
            kind: "SD set",
            message: e.to_string(),
        })?;
        SdSet::new(s.n_dims, s.provenance, s.transform_meta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    Union,
    #[default]
    Intersection,
}

pub fn combine(a: &SdSet, b: &SdSet, mode: CombineMode) -> Result<SdSet> {
    if a.n_dims != b.n_dims {
        return Err(Error::DimensionMismatch {
            expected: a.n_dims,
            got: b.n_dims,
        });
    }
    let keys: BTreeSet<usize> = match mode {
        CombineMode::Union => a.provenance.keys().chain(b.provenance.keys()).copied().collect(),
        CombineMode::Intersection => a.provenance.keys().filter(|d| b.contains(**d)).copied().collect(),
    };
    let none = Provenance::default();
    let provenance = keys
        .into_iter()
        .map(|d| {
            let pa = a.provenance.get(&d).unwrap_or(&none);
            let pb = b.provenance.get(&d).unwrap_or(&none);
            (d, pa.merge(pb))
        })
        .collect();
    let metas: BTreeSet<&str> = [a.transform_meta.as_str(), b.transform_meta.as_str()]
        .into_iter()
        .filter(|m| !m.is_empty())
        .collect();
    SdSet::new(a.n_dims, provenance, metas.into_iter().collect::<Vec<_>>().join(" | "))
}

/// The stationary CCF target and the ADF check run on it.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTarget {
    pub series: Series,
    /// `None` when the test could not be computed (e.g. a constant series).
    pub adf: Option<AdfResult>,
    pub adf_note: Option<String>,
}

/// Second difference of the new-case series, checked with ADF. A
/// non-stationary or untestable result is logged and otherwise ignored.
pub fn prepare_target_ccf(counts: &CountSeries) -> Result<PreparedTarget> {
    if counts.cumulative.len() < MIN_TARGET_DAYS {
        return Err(Error::TooShort {
            needed: MIN_TARGET_DAYS,
            got: counts.cumulative.len(),
        });
    }
    let series = difference(&counts.new_case_series()?, 2)?;
    let (adf, adf_note) = match adf_test(&series, None) {
        Ok(r) => {
            if r.p_value >= 0.05 {
                log::warn!("CCF target may be non-stationary: {r}");
            } else {
                log::info!("CCF target: {r}");
            }
            (Some(r), None)
        }
        Err(e) => {
            log::warn!("ADF check on the CCF target failed: {e}");
            (None, Some(e.to_string()))
        }
    };
    Ok(PreparedTarget { series, adf, adf_note })
}

fn map_columns(m: &DayMatrix, f: impl Fn(&Series) -> Result<Series> + Sync) -> Result<DayMatrix> {
    let cols: Vec<Series> = (0..m.dim())
        .into_par_iter()
        .map(|d| f(&m.column(d)))
        .collect::<Result<_>>()?;
    let start = cols[0].start;
    let n = cols[0].len();
    let mut values = Array2::zeros((n, m.dim()));
    for (d, c) in cols.iter().enumerate() {
        for (t, v) in c.values.iter().enumerate() {
            values[(t, d)] = *v;
        }
    }
    let offset = m.calendar.offset_of(start).expect("transform stays inside the calendar");
    let dropped = offset;
    let fill_mask = (0..n)
        .map(|t| m.fill_mask[t..=t + dropped].iter().any(|&f| f))
        .collect();
    DayMatrix::new(crate::calendar::DateWindow::from_len(start, n)?, values, fill_mask)
}

/// Rolling variance of every column. A row is marked filled when any day in
/// its window was.
pub fn prepare_features_ccf(m: &DayMatrix, window: usize) -> Result<DayMatrix> {
    if m.n_days() < 10 {
        return Err(Error::TooShort {
            needed: 10,
            got: m.n_days(),
        });
    }
    map_columns(m, |s| rolling_variance(s, window))
}

/// First difference of every column.
pub fn difference_features(m: &DayMatrix) -> Result<DayMatrix> {
    map_columns(m, |s| difference(s, 1))
}

/// Restrict features and target to their shared dates.
pub fn align(features: &DayMatrix, target: &Series) -> Result<(DayMatrix, Series)> {
    let shared = features
        .calendar
        .intersect(&target.window())
        .ok_or(Error::Empty("shared range of features and target"))?;
    Ok((features.restrict(&shared)?, target.restrict(&shared)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundRule {
    /// `z = Φ⁻¹(1 − α/2)` at every lag.
    Nominal,
    /// `z = Φ⁻¹(1 − α/(2·max_lag))`, correcting for the positive lags scanned.
    #[default]
    Bonferroni,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcfSelectParams {
    pub max_lag: usize,
    pub alpha: f64,
    pub bound: BoundRule,
    #[serde(flatten)]
    pub criterion: LeadCriterion,
}

impl Default for CcfSelectParams {
    fn default() -> Self {
        CcfSelectParams {
            max_lag: 45,
            alpha: 0.05,
            bound: BoundRule::default(),
            criterion: LeadCriterion::default(),
        }
    }
}

impl CcfSelectParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_lag == 0 {
            return Err(Error::InvalidParam("max_lag must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParam(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn z(&self) -> f64 {
        match self.bound {
            BoundRule::Nominal => normal_quantile(1.0 - self.alpha / 2.0),
            BoundRule::Bonferroni => normal_quantile(1.0 - self.alpha / (2.0 * self.max_lag as f64)),
        }
    }
}

/// The CCF-selected set together with every per-dimension CCF.
#[derive(Debug, Clone)]
pub struct CcfScreen {
    pub set: SdSet,
    pub results: Vec<CcfResult>,
}

/// Keep each column that has a significant correlation at a positive lag,
/// i.e. that leads the target.
pub fn select_ccf(features: &DayMatrix, target: &Series, params: &CcfSelectParams) -> Result<CcfScreen> {
    params.validate()?;
    if features.calendar.start != target.start || features.n_days() != target.len() {
        return Err(Error::InvalidParam(format!(
            "features ({}) and target ({}) are not aligned",
            features.calendar,
            target.window()
        )));
    }
    let z = params.z();
    let results: Vec<CcfResult> = (0..features.dim())
        .into_par_iter()
        .map(|d| ccf_with_bound(&features.column(d), target, params.max_lag, z))
        .collect::<Result<_>>()?;
    let provenance = results
        .iter()
        .enumerate()
        .filter_map(|(d, r)| {
            let lags = leading_lags_by(r, &params.criterion);
            (!lags.is_empty()).then_some({
                (
                    d,
                    Provenance {
                        ccf_lags: Some(lags),
                        boruta: None,
                    },
                )
            })
        })
        .collect();
    let meta = format!(
        "ccf: max_lag={} z={z:.4} ({:?}, alpha={}) {:?}/{:?}",
        params.max_lag, params.bound, params.alpha, params.criterion.lag_rule, params.criterion.sided
    );
    Ok(CcfScreen {
        set: SdSet::new(features.dim(), provenance, meta)?,
        results,
    })
}

/// Confirmed dimensions, plus tentative ones when `keep_tentative` is set.
pub fn select_boruta(
    x: ArrayView2<f64>,
    y: &[f64],
    params: &BorutaParams,
    keep_tentative: bool,
    transform_meta: &str,
) -> Result<(SdSet, BorutaResult)> {
    let result = boruta::run(x, y, params)?;
    let provenance = result
        .decision
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == Decision::Confirmed || (keep_tentative && d == Decision::Tentative))
        .map(|(i, &d)| {
            (
                i,
                Provenance {
                    ccf_lags: None,
                    boruta: Some(d),
                },
            )
        })
        .collect();
    let set = SdSet::new(x.ncols(), provenance, format!("boruta: {transform_meta}"))?;
    Ok((set, result))
}
