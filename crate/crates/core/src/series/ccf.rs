use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Series;
use crate::error::{Error, Result};
use crate::stats::pearson;

/// Two-sided 95% normal quantile used for the nominal bound.
pub const NOMINAL_Z: f64 = 1.96;

/// Cross-correlation of `x` against `y` over lags `-max_lag..=max_lag`.
///
/// Convention: `correlations[k]` is the Pearson correlation of the pairs
/// `(x[t], y[t + lag])`, so a positive lag means x leads y by that many days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcfResult {
    pub lags: Vec<i64>,
    /// `None` where one side of the overlap is constant.
    pub correlations: Vec<Option<f64>>,
    pub conf_bounds: Vec<f64>,
    pub n: usize,
    /// Normal quantile behind `conf_bounds`.
    pub z: f64,
}

impl CcfResult {
    pub fn at(&self, lag: i64) -> Option<f64> {
        let i = self.lags.iter().position(|&l| l == lag)?;
        self.correlations[i]
    }

    /// Lags whose overlap was constant on one side.
    pub fn gaps(&self) -> Vec<i64> {
        self.lags
            .iter()
            .zip(&self.correlations)
            .filter(|(_, c)| c.is_none())
            .map(|(&l, _)| l)
            .collect()
    }

    /// Lag with the largest absolute correlation; ties go to the smaller lag.
    pub fn peak(&self) -> Option<(i64, f64)> {
        let mut best: Option<(i64, f64)> = None;
        for (&lag, c) in self.lags.iter().zip(&self.correlations) {
            if let Some(c) = *c {
                if best.is_none_or(|(_, b)| c.abs() > b.abs()) {
                    best = Some((lag, c));
                }
            }
        }
        best
    }

    /// `lag,correlation,conf_bound` rows; undefined correlations are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lag,correlation,conf_bound\n");
        for ((lag, c), b) in self.lags.iter().zip(&self.correlations).zip(&self.conf_bounds) {
            let c = c.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{lag},{c},{b}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub fn ccf(x: &Series, y: &Series, max_lag: usize) -> Result<CcfResult> {
    ccf_with_bound(x, y, max_lag, NOMINAL_Z)
}

/// As [`ccf`], with the significance bound `z / sqrt(n - |lag|)`.
pub fn ccf_with_bound(x: &Series, y: &Series, max_lag: usize, z: f64) -> Result<CcfResult> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n < max_lag + 10 {
        return Err(Error::TooShort {
            needed: max_lag + 10,
            got: n,
        });
    }
    let max_lag = max_lag as i64;
    let mut lags = Vec::with_capacity(2 * max_lag as usize + 1);
    let mut correlations = Vec::with_capacity(lags.capacity());
    let mut conf_bounds = Vec::with_capacity(lags.capacity());
    for lag in -max_lag..=max_lag {
        let m = n - lag.unsigned_abs() as usize;
        let (xs, ys) = if lag >= 0 {
            (&x.values[..m], &y.values[lag as usize..])
        } else {
            (&x.values[(-lag) as usize..], &y.values[..m])
        };
        lags.push(lag);
        correlations.push(pearson(xs, ys));
        conf_bounds.push(z / (m as f64).sqrt());
    }
    Ok(CcfResult {
        lags,
        correlations,
        conf_bounds,
        n,
        z,
    })
}

/// Positive lags whose correlation exceeds the bound in absolute value.
pub fn leading_lags(r: &CcfResult) -> Vec<i64> {
    leading_lags_by(r, &LeadCriterion::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagRule {
    /// Every significant positive lag counts.
    #[default]
    AnyLag,
    /// Only the overall peak |correlation| counts, and only when it sits at a
    /// positive lag.
    PeakLag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    TwoSided,
    /// Only correlations above `+bound`.
    PositiveOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LeadCriterion {
    pub lag_rule: LagRule,
    pub sided: Sidedness,
}

pub fn leading_lags_by(r: &CcfResult, criterion: &LeadCriterion) -> Vec<i64> {
    let significant = |c: f64, bound: f64| match criterion.sided {
        Sidedness::TwoSided => c.abs() > bound,
        Sidedness::PositiveOnly => c > bound,
    };
    match criterion.lag_rule {
        LagRule::AnyLag => r
            .lags
            .iter()
            .zip(&r.correlations)
            .zip(&r.conf_bounds)
            .filter_map(|((&lag, c), &b)| {
                let c = (*c)?;
                (lag > 0 && significant(c, b)).then_some(lag)
            })
            .collect(),
        LagRule::PeakLag => match r.peak() {
            Some((lag, c)) if lag > 0 => {
                let i = r.lags.iter().position(|&l| l == lag).expect("peak lag present");
                if significant(c, r.conf_bounds[i]) {
                    vec![lag]
                } else {
                    Vec::new()
                }
            }
            _ => Vec::new(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn day0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 8, 1).unwrap()
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn s(v: Vec<f64>) -> Series {
        Series::new(day0(), v).unwrap()
    }

    #[test]
    fn self_correlation_at_zero_is_one() {
        let x = s(noise(1, 100));
        let r = ccf(&x, &x, 20).unwrap();
        assert_eq!(r.at(0), Some(1.0));
        assert_eq!(r.lags.len(), 41);
        assert!((r.conf_bounds[20] - 1.96 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn shifted_copy_peaks_at_its_lead() {
        // y[t] = x[t - 5]: x leads y by 5 days.
        let raw = noise(2, 370);
        let x = s(raw[5..].to_vec());
        let y = s(raw[..365].to_vec());
        let r = ccf(&x, &y, 30).unwrap();
        let (lag, c) = r.peak().unwrap();
        assert_eq!(lag, 5);
        assert!(c >= 0.999);
        assert!(leading_lags(&r).contains(&5));
    }

    #[test]
    fn constant_overlap_is_a_flagged_gap() {
        let mut v = noise(3, 40);
        for x in v.iter_mut().skip(20) {
            *x = 1.0;
        }
        let x = s(v);
        let y = s(noise(4, 40));
        let r = ccf(&x, &y, 25).unwrap();
        // pairs (x[t], y[t-25]) with t >= 25 all have constant x
        assert_eq!(r.at(-25), None);
        assert!(r.gaps().contains(&-25));
        assert!(r.at(0).is_some());
    }

    #[test]
    fn zero_and_insignificant_correlations_yield_no_leads() {
        let r = CcfResult {
            lags: vec![-1, 0, 1, 2],
            correlations: vec![Some(0.0); 4],
            conf_bounds: vec![0.1; 4],
            n: 100,
            z: 1.96,
        };
        assert!(leading_lags(&r).is_empty());
        let r = CcfResult {
            correlations: vec![Some(0.5), Some(0.5), Some(0.1), Some(-0.2)],
            ..r
        };
        assert_eq!(leading_lags(&r), vec![2]);
        let positive = LeadCriterion {
            sided: Sidedness::PositiveOnly,
            ..Default::default()
        };
        assert!(leading_lags_by(&r, &positive).is_empty());
        let peak = LeadCriterion {
            lag_rule: LagRule::PeakLag,
            ..Default::default()
        };
        // the peak sits at a negative lag
        assert!(leading_lags_by(&r, &peak).is_empty());
    }

    #[test]
    fn too_short_or_mismatched() {
        assert!(matches!(
            ccf(&s(noise(1, 30)), &s(noise(2, 30)), 25),
            Err(Error::TooShort { .. })
        ));
        assert!(matches!(
            ccf(&s(noise(1, 30)), &s(noise(2, 31)), 5),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn csv_has_one_row_per_lag() {
        let x = s(noise(5, 50));
        let csv = ccf(&x, &x, 3).unwrap().to_csv();
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.starts_with("lag,correlation,conf_bound\n-3,"));
    }

    proptest! {
        #[test]
        fn swapping_arguments_mirrors_lags(seed in 0u64..1000) {
            let x = s(noise(seed, 80));
            let y = s(noise(seed + 7, 80));
            let a = ccf(&x, &y, 15).unwrap();
            let b = ccf(&y, &x, 15).unwrap();
            for lag in -15..=15 {
                let (p, q) = (a.at(lag).unwrap(), b.at(-lag).unwrap());
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn affine_maps_only_flip_sign(seed in 0u64..1000, a in -5.0f64..5.0, b in -10.0f64..10.0,
                                      c in -5.0f64..5.0, d in -10.0f64..10.0) {
            prop_assume!(a.abs() > 0.1 && c.abs() > 0.1);
            let xv = noise(seed, 60);
            let yv = noise(seed + 1, 60);
            let base = ccf(&s(xv.clone()), &s(yv.clone()), 10).unwrap();
            let xt = s(xv.iter().map(|v| a * v + b).collect());
            let yt = s(yv.iter().map(|v| c * v + d).collect());
            let moved = ccf(&xt, &yt, 10).unwrap();
            let sign = (a * c).signum();
            for (p, q) in base.correlations.iter().zip(&moved.correlations) {
                prop_assert!((sign * p.unwrap() - q.unwrap()).abs() < 1e-10);
            }
        }
    }
}
