use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Series;
use crate::error::{Error, Result};

/// Asymptotic quantiles of the Dickey-Fuller t-statistic with a constant
/// and no trend, as `(statistic, cumulative probability)`. Generated from
/// MacKinnon's (1994) response-surface approximation.
const TAU_C_TABLE: [(f64, f64); 31] = [
    (-4.0916, 0.001),
    (-3.8426, 0.0025),
    (-3.6424, 0.005),
    (-3.4293, 0.01),
    (-3.1215, 0.025),
    (-2.8616, 0.05),
    (-2.6945, 0.075),
    (-2.5671, 0.10),
    (-2.4620, 0.125),
    (-2.3713, 0.15),
    (-2.2174, 0.20),
    (-2.0864, 0.25),
    (-1.9697, 0.30),
    (-1.8623, 0.35),
    (-1.7610, 0.40),
    (-1.6635, 0.45),
    (-1.5673, 0.50),
    (-1.4665, 0.55),
    (-1.3627, 0.60),
    (-1.2539, 0.65),
    (-1.1372, 0.70),
    (-1.0089, 0.75),
    (-0.8627, 0.80),
    (-0.6873, 0.85),
    (-0.4578, 0.90),
    (-0.3036, 0.925),
    (-0.0943, 0.95),
    (0.2514, 0.975),
    (0.7082, 0.99),
    (1.0753, 0.995),
    (2.3788, 0.999),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub p_value: f64,
    pub lag_order: usize,
    pub n_effective: usize,
}

impl AdfResult {
    pub fn is_stationary(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

impl fmt::Display for AdfResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ADF statistic={:.4} p-value={:.4} lags={} nobs={}",
            self.statistic, self.p_value, self.lag_order, self.n_effective
        )
    }
}

/// Linear interpolation in the critical-value table, clamped to its outer
/// quantiles.
pub fn mackinnon_p_value(statistic: f64) -> f64 {
    let first = TAU_C_TABLE[0];
    let last = TAU_C_TABLE[TAU_C_TABLE.len() - 1];
    if statistic <= first.0 {
        return first.1;
    }
    if statistic >= last.0 {
        return last.1;
    }
    let i = TAU_C_TABLE.partition_point(|&(t, _)| t <= statistic);
    let (t0, p0) = TAU_C_TABLE[i - 1];
    let (t1, p1) = TAU_C_TABLE[i];
    p0 + (p1 - p0) * (statistic - t0) / (t1 - t0)
}

/// Schwert's rule `floor(12 (n/100)^(1/4))`.
pub fn default_max_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

struct Fit {
    ssr: f64,
    t_gamma: f64,
    nobs: usize,
    k: usize,
}

/// OLS of `dy[t] = a + g*y[t-1] + sum_i phi_i*dy[t-i]` over `t` in
/// `first..dy.len()` (indices into the differenced series).
fn fit(y: &[f64], dy: &[f64], lags: usize, first: usize) -> Result<Fit> {
    let nobs = dy.len() - first;
    let k = 2 + lags;
    if nobs <= k {
        return Err(Error::TooShort {
            needed: first + k + 1,
            got: dy.len(),
        });
    }
    let mut x = DMatrix::<f64>::zeros(nobs, k);
    let mut rhs = DVector::<f64>::zeros(nobs);
    for (row, t) in (first..dy.len()).enumerate() {
        rhs[row] = dy[t];
        x[(row, 0)] = 1.0;
        x[(row, 1)] = y[t];
        for i in 1..=lags {
            x[(row, 1 + i)] = dy[t - i];
        }
    }
    // Centre the slope regressors: the intercept absorbs the shift, so the
    // slopes and their standard errors are unchanged but conditioning improves.
    for c in 1..k {
        let m = x.column(c).mean();
        x.column_mut(c).add_scalar_mut(-m);
    }
    let xtx = x.transpose() * &x;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("ADF design with {lags} lags is rank deficient")))?;
    let beta = chol.solve(&(x.transpose() * &rhs));
    let resid = &rhs - &x * &beta;
    let ssr = resid.norm_squared();
    let dof = (nobs - k) as f64;
    let sigma2 = ssr / dof;
    let inv = chol.inverse();
    let se = (sigma2 * inv[(1, 1)]).sqrt();
    if !(se > 0.0 && se.is_finite()) {
        return Err(Error::Singular("zero standard error on the level term".into()));
    }
    Ok(Fit {
        ssr,
        t_gamma: beta[1] / se,
        nobs,
        k,
    })
}

/// Augmented Dickey-Fuller test with a constant and no trend. The lag order
/// is chosen by minimum AIC over `0..=max_lag` on a common sample, then the
/// chosen model is refit on all usable observations.
pub fn adf_test(s: &Series, max_lag: Option<usize>) -> Result<AdfResult> {
    let n = s.len();
    if n < 20 {
        return Err(Error::TooShort { needed: 20, got: n });
    }
    let y = &s.values;
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::Degenerate("constant series has no unit-root test".into()));
    }
    let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    // regressor y[t-1] for dy index t is y[t]
    let y_lag = &y[..n - 1];
    let max_lag = max_lag
        .unwrap_or_else(|| default_max_lag(n))
        .min((dy.len().saturating_sub(4)) / 2);

    let mut best: Option<(f64, usize)> = None;
    for p in 0..=max_lag {
        let f = match fit(y_lag, &dy, p, max_lag) {
            Ok(f) => f,
            Err(Error::Singular(_)) => continue,
            Err(e) => return Err(e),
        };
        let nobs = f.nobs as f64;
        let aic = nobs * (f.ssr / nobs).ln() + 2.0 * f.k as f64;
        if best.is_none_or(|(b, _)| aic < b) {
            best = Some((aic, p));
        }
    }
    let (_, lag_order) =
        best.ok_or_else(|| Error::Singular("no lag order gives a full-rank ADF design".into()))?;
    let f = fit(y_lag, &dy, lag_order, lag_order)?;
    Ok(AdfResult {
        statistic: f.t_gamma,
        p_value: mackinnon_p_value(f.t_gamma),
        lag_order,
        n_effective: f.nobs,
    })
}
