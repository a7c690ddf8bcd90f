//! All-relevant feature selection against permuted shadow attributes.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::forest::{fit, ForestParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Decision {
    Confirmed,
    Tentative,
    Rejected,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::Confirmed => "Confirmed",
            Decision::Tentative => "Tentative",
            Decision::Rejected => "Rejected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BorutaParams {
    pub max_runs: usize,
    pub alpha: f64,
    pub min_shadows: usize,
    pub forest: ForestParams,
    pub seed: u64,
}

impl Default for BorutaParams {
    fn default() -> Self {
        BorutaParams {
            max_runs: 100,
            alpha: 0.05,
            min_shadows: 5,
            forest: ForestParams {
                n_trees: 100,
                ..ForestParams::default()
            },
            seed: 1,
        }
    }
}

impl BorutaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParam(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.max_runs == 0 {
            return Err(Error::InvalidParam("max_runs must be >= 1".into()));
        }
        if self.min_shadows < 5 {
            return Err(Error::InvalidParam(format!(
                "min_shadows must be at least 5, got {}",
                self.min_shadows
            )));
        }
        if self.forest.n_trees < 2 {
            return Err(Error::InvalidParam("Boruta needs forests of at least 2 trees".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorutaResult {
    pub decision: Vec<Decision>,
    pub hits: Vec<u64>,
    pub runs_completed: usize,
    /// Per run, the Z-score of every original feature; `None` once rejected.
    pub z_history: Vec<Vec<Option<f64>>>,
    /// Maximum shadow Z-score per run.
    pub mzsa_history: Vec<f64>,
}

impl BorutaResult {
    pub fn with_decision(&self, d: Decision) -> Vec<usize> {
        (0..self.decision.len()).filter(|&i| self.decision[i] == d).collect()
    }

    /// `feature,decision,hits,runs`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,decision,hits,runs\n");
        for (i, (d, h)) in self.decision.iter().zip(&self.hits).enumerate() {
            let _ = writeln!(out, "{i},{d},{h},{}", self.runs_completed);
        }
        out
    }

    /// `run,mzsa,d0,d1,...`; rejected features leave empty cells.
    pub fn z_history_csv(&self) -> String {
        let d = self.decision.len();
        let mut out = String::from("run,mzsa");
        for j in 0..d {
            let _ = write!(out, ",d{j}");
        }
        out.push('\n');
        for (r, (row, m)) in self.z_history.iter().zip(&self.mzsa_history).enumerate() {
            let _ = write!(out, "{},{m}", r + 1);
            for z in row {
                out.push(',');
                if let Some(z) = z {
                    let _ = write!(out, "{z}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, decisions: &Path, z_history: &Path) -> Result<()> {
        std::fs::write(decisions, self.to_csv()).map_err(|e| Error::io(decisions, e))?;
        std::fs::write(z_history, self.z_history_csv()).map_err(|e| Error::io(z_history, e))
    }
}

/// Run Boruta on the columns of `x` against `y`.
pub fn run(x: ArrayView2<f64>, y: &[f64], params: &BorutaParams) -> Result<BorutaResult> {
    params.validate()?;
    let (n, d) = x.dim();
    if n < 20 {
        return Err(Error::TooShort { needed: 20, got: n });
    }
    if d == 0 {
        return Err(Error::Empty("feature matrix"));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    let threshold = params.alpha / d as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut decision = vec![Decision::Tentative; d];
    let mut hits = vec![0u64; d];
    let mut z_history = Vec::new();
    let mut mzsa_history = Vec::new();

    for run in 1..=params.max_runs {
        let surviving: Vec<usize> = (0..d).filter(|&j| decision[j] != Decision::Rejected).collect();
        let mut sources = surviving.clone();
        while sources.len() < params.min_shadows {
            sources.push(surviving[rng.random_range(0..surviving.len())]);
        }
        let s = surviving.len();
        let width = s + sources.len();
        // column k of the extended matrix holds slot[k]: originals first, then
        // shadows, placed at shuffled positions
        let mut slot: Vec<usize> = (0..width).collect();
        slot.shuffle(&mut rng);
        let mut ext = Array2::<f64>::zeros((n, width));
        for (pos, &k) in slot.iter().enumerate() {
            if k < s {
                ext.column_mut(pos).assign(&x.column(surviving[k]));
            } else {
                let mut col = x.column(sources[k - s]).to_vec();
                col.shuffle(&mut rng);
                ext.column_mut(pos).assign(&ndarray::ArrayView1::from(&col[..]));
            }
        }
        let forest_params = ForestParams {
            seed: params.seed.wrapping_mul(1_000_003).wrapping_add(run as u64),
            ..params.forest.clone()
        };
        let z_ext = fit(ext.view(), y, &forest_params)?.importance_z()?;
        let mut z = vec![0.0; width];
        for (pos, &k) in slot.iter().enumerate() {
            z[k] = z_ext[pos];
        }
        let mzsa = z[s..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut row = vec![None; d];
        for (k, &j) in surviving.iter().enumerate() {
            row[j] = Some(z[k]);
            if z[k] > mzsa {
                hits[j] += 1;
            }
        }
        z_history.push(row);
        mzsa_history.push(mzsa);

        let binom = Binomial::new(0.5, run as u64).expect("valid binomial");
        for &j in &surviving {
            if decision[j] != Decision::Tentative {
                continue;
            }
            let h = hits[j];
            let upper = if h == 0 { 1.0 } else { binom.sf(h - 1) };
            let lower = binom.cdf(h);
            if upper < threshold {
                decision[j] = Decision::Confirmed;
            } else if lower < threshold {
                decision[j] = Decision::Rejected;
            }
        }
        log::debug!(
            "boruta run {run}: mzsa={mzsa:.3} confirmed={} rejected={}",
            decision.iter().filter(|&&x| x == Decision::Confirmed).count(),
            decision.iter().filter(|&&x| x == Decision::Rejected).count()
        );
        if decision.iter().all(|&x| x != Decision::Tentative) {
            break;
        }
    }
    let runs_completed = mzsa_history.len();
    Ok(BorutaResult {
        decision,
        hits,
        runs_completed,
        z_history,
        mzsa_history,
    })
}
