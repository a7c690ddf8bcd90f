//! Synthetic case curves, day matrices and corpora with planted leading
//! structure, used as ground truth for the whole pipeline.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calendar::DateWindow;
use crate::embedding::DayMatrix;
use crate::error::{Error, Result};
use crate::ingest::{write_documents_jsonl, CountSeries, DatedDocument};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub peak_day: f64,
    pub height: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub start_date: NaiveDate,
    pub n_days: usize,
    pub waves: Vec<Wave>,
    pub lead_days: usize,
    pub n_signal_dims: usize,
    pub n_noise_dims: usize,
    /// Signal-to-noise variance ratio of the signal columns.
    pub snr: f64,
    /// Signal-column noise variance scales with `exp(coupling · future level)`,
    /// so the columns' local volatility also leads the cases. 0 disables it.
    pub volatility_coupling: f64,
    /// Scale of the exponential case noise relative to the tallest wave.
    pub case_noise: f64,
    pub vocab_groups: Vec<Vec<String>>,
    pub background_vocab: usize,
    pub docs_per_day: (usize, usize),
    pub doc_len: (usize, usize),
    /// Topic-token probability at peak future intensity.
    pub topic_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let group = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect();
        SynthSpec {
            start_date: NaiveDate::from_ymd_opt(2020, 8, 1).expect("valid date"),
            n_days: 365,
            waves: vec![
                Wave {
                    peak_day: 45.0,
                    height: 95_000.0,
                    width: 20.0,
                },
                Wave {
                    peak_day: 275.0,
                    height: 80_000.0,
                    width: 18.0,
                },
            ],
            lead_days: 15,
            n_signal_dims: 5,
            n_noise_dims: 95,
            snr: 10.0,
            volatility_coupling: 1.0,
            case_noise: 5e-4,
            vocab_groups: vec![
                group(&["oxygen", "ventilator", "icu", "bed", "hospital"]),
                group(&["fever", "cough", "test", "positive", "symptom"]),
            ],
            background_vocab: 300,
            docs_per_day: (40, 60),
            doc_len: (8, 16),
            topic_rate: 0.5,
            seed: 1,
        }
    }
}

const CASE_STREAM: u64 = 1;
const FEATURE_STREAM: u64 = 2;
const CORPUS_STREAM: u64 = 3;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.n_days < 2 {
            return bad(format!("n_days must be >= 2, got {}", self.n_days));
        }
        for w in &self.waves {
            if !(w.peak_day >= 0.0 && w.peak_day < self.n_days as f64) {
                return bad(format!("wave peak {} outside 0..{}", w.peak_day, self.n_days));
            }
            if !(w.height >= 0.0 && w.width > 0.0) {
                return bad(format!("wave needs height >= 0 and width > 0, got {w:?}"));
            }
        }
        if 4 * self.lead_days >= self.n_days {
            return bad(format!("lead_days {} must be below n_days / 4", self.lead_days));
        }
        if self.snr.is_nan() || self.snr < 0.0 {
            return bad(format!("snr must be >= 0, got {}", self.snr));
        }
        if !self.volatility_coupling.is_finite() || !(self.case_noise >= 0.0 && self.case_noise.is_finite()) {
            return bad("volatility_coupling and case_noise must be finite, case_noise >= 0".into());
        }
        if self.docs_per_day.0 > self.docs_per_day.1 || self.doc_len.0 == 0 || self.doc_len.0 > self.doc_len.1 {
            return bad("docs_per_day and doc_len must be ordered ranges, doc_len >= 1".into());
        }
        if self.vocab_groups.is_empty() || self.vocab_groups.iter().any(|g| g.is_empty()) || self.background_vocab == 0 {
            return bad("vocabulary groups and background vocabulary must be non-empty".into());
        }
        if !(0.0..=1.0).contains(&self.topic_rate) {
            return bad(format!("topic_rate must be in [0, 1], got {}", self.topic_rate));
        }
        Ok(())
    }

    /// Noise-free case intensity on day `t`.
    pub fn intensity(&self, t: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| w.height * (-(t - w.peak_day).powi(2) / (2.0 * w.width * w.width)).exp())
            .sum()
    }

    fn noise_scale(&self) -> f64 {
        self.case_noise * self.waves.iter().map(|w| w.height).fold(0.0, f64::max)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn calendar(&self) -> DateWindow {
        DateWindow::from_len(self.start_date, self.n_days).expect("n_days >= 2")
    }
}

/// Wave intensity plus exponential noise, rounded to whole cases and
/// accumulated.
pub fn gen_cases(spec: &SynthSpec) -> Result<CountSeries> {
    spec.validate()?;
    let mut rng = spec.rng(CASE_STREAM);
    let scale = spec.noise_scale();
    let mut total = 0u64;
    let cumulative = (0..spec.n_days)
        .map(|t| {
            let e: f64 = Exp1.sample(&mut rng);
            total += (spec.intensity(t as f64) + scale * e).round() as u64;
            total
        })
        .collect();
    CountSeries::from_cumulative(spec.start_date, cumulative, false)
}

/// New cases on calendar day `t`: observed where the counts cover it, the
/// expected value beyond.
fn future_cases(spec: &SynthSpec, cases: &CountSeries) -> Vec<f64> {
    let scale = spec.noise_scale();
    (0..spec.n_days)
        .map(|t| {
            let day = t + spec.lead_days;
            match day.checked_sub(1).and_then(|i| cases.new_cases.get(i)) {
                Some(&v) if day >= 1 => v as f64,
                _ => spec.intensity(day as f64) + scale,
            }
        })
        .collect()
}

/// A synthetic day matrix and the columns that carry the planted signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFeatures {
    pub matrix: DayMatrix,
    pub signal_dims: Vec<usize>,
}

/// Signal columns track the standardized new-case curve `lead_days` ahead,
/// plus noise at the given SNR; the rest are i.i.d. standard normal.
pub fn gen_feature_matrix(spec: &SynthSpec, cases: &CountSeries) -> Result<SynthFeatures> {
    spec.validate()?;
    if cases.start_date != spec.start_date || cases.cumulative.len() != spec.n_days {
        return Err(Error::InvalidParam("case series does not match the synth spec calendar".into()));
    }
    let d = spec.n_signal_dims + spec.n_noise_dims;
    if d == 0 {
        return Err(Error::Empty("synthetic dimensions"));
    }
    let mut rng = spec.rng(FEATURE_STREAM);
    let observed: Vec<f64> = cases.new_cases.iter().map(|&v| v as f64).collect();
    let mu = crate::stats::mean(&observed);
    let sd = {
        let var = observed.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / observed.len().max(1) as f64;
        var.sqrt()
    };
    let fut: Vec<f64> = future_cases(spec, cases)
        .into_iter()
        .map(|v| if sd > 0.0 { (v - mu) / sd } else { 0.0 })
        .collect();
    let raw_vol: Vec<f64> = fut.iter().map(|f| (spec.volatility_coupling * f).exp()).collect();
    let vol_mean = crate::stats::mean(&raw_vol);
    let vol: Vec<f64> = raw_vol.iter().map(|v| (v / vol_mean).sqrt()).collect();
    let (a, b) = if spec.snr.is_infinite() {
        (1.0, 0.0)
    } else {
        ((spec.snr / (1.0 + spec.snr)).sqrt(), (1.0 / (1.0 + spec.snr)).sqrt())
    };

    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng);
    let mut signal_dims = order[..spec.n_signal_dims].to_vec();
    signal_dims.sort_unstable();

    let n = spec.n_days;
    let mut values = Array2::zeros((n, d));
    for col in 0..d {
        let signal = signal_dims.binary_search(&col).is_ok();
        for t in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            values[(t, col)] = if signal { a * fut[t] + b * vol[t] * z } else { z };
        }
    }
    Ok(SynthFeatures {
        matrix: DayMatrix::new(spec.calendar(), values, vec![false; n])?,
        signal_dims,
    })
}

/// Pronounceable background words that the text pipeline leaves unchanged:
/// consonant–vowel syllables without `e` or a trailing `s`.
pub fn background_word(i: usize) -> String {
    const C: &[u8] = b"bdfgklmnprtvz";
    const V: &[u8] = b"aiou";
    let syllables = C.len() * V.len();
    let mut word = String::new();
    let mut k = i;
    for _ in 0..3 {
        let s = k % syllables;
        word.push(C[s / V.len()] as char);
        word.push(V[s % V.len()] as char);
        k /= syllables;
    }
    word
}

/// Each day emits documents whose tokens are topic words with probability
/// proportional to the case intensity `lead_days` ahead, and Zipf-distributed
/// background words otherwise.
pub fn gen_corpus(spec: &SynthSpec, cases: &CountSeries) -> Result<Vec<DatedDocument>> {
    spec.validate()?;
    let mut rng = spec.rng(CORPUS_STREAM);
    let fut = future_cases(spec, cases);
    let peak = fut.iter().copied().fold(0.0, f64::max);
    let background: Vec<String> = (0..spec.background_vocab).map(background_word).collect();
    let zipf = WeightedIndex::new((0..spec.background_vocab).map(|r| 1.0 / (r + 1) as f64))
        .map_err(|e| Error::InvalidParam(e.to_string()))?;
    let mut docs = Vec::new();
    for (t, &f) in fut.iter().enumerate() {
        let p = if peak > 0.0 { spec.topic_rate * (f.max(0.0) / peak) } else { 0.0 };
        let date = spec.start_date + Duration::days(t as i64);
        let n_docs = rng.random_range(spec.docs_per_day.0..=spec.docs_per_day.1);
        for i in 0..n_docs {
            let group = spec.vocab_groups.choose(&mut rng).expect("non-empty groups");
            let len = rng.random_range(spec.doc_len.0..=spec.doc_len.1);
            let words: Vec<&str> = (0..len)
                .map(|_| {
                    if p > 0.0 && rng.random_bool(p) {
                        group.choose(&mut rng).expect("non-empty group").as_str()
                    } else {
                        background[zipf.sample(&mut rng)].as_str()
                    }
                })
                .collect();
            docs.push(DatedDocument {
                id: format!("{date}-{i:04}"),
                date,
                text: words.join(" "),
            });
        }
    }
    Ok(docs)
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOutputs {
    pub documents: PathBuf,
    pub counts: PathBuf,
    pub day_matrix: PathBuf,
    pub truth: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    pub signal_dims: Vec<usize>,
}

/// Write `documents.jsonl`, `counts.csv`, `day_matrix.csv` and `truth.json`
/// into `dir`.
pub fn write_outputs(spec: &SynthSpec, dir: &Path) -> Result<SynthOutputs> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cases = gen_cases(spec)?;
    let features = gen_feature_matrix(spec, &cases)?;
    let docs = gen_corpus(spec, &cases)?;
    let out = SynthOutputs {
        documents: dir.join("documents.jsonl"),
        counts: dir.join("counts.csv"),
        day_matrix: dir.join("day_matrix.csv"),
        truth: dir.join("truth.json"),
    };
    write_documents_jsonl(&out.documents, &docs)?;
    cases.write_csv(&out.counts)?;
    features.matrix.write_csv(&out.day_matrix)?;
    let truth = SynthTruth {
        spec: spec.clone(),
        signal_dims: features.signal_dims,
    };
    let body = serde_json::to_string_pretty(&truth).expect("serializable");
    std::fs::write(&out.truth, body).map_err(|e| Error::io(&out.truth, e))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::ccf;
    use crate::stats::pearson;
    use crate::text::Preprocessor;

    fn local_maxima(v: &[i64]) -> Vec<usize> {
        (1..v.len() - 1).filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1]).collect()
    }

    #[test]
    fn single_wave_peaks_at_its_day() {
        let spec = SynthSpec {
            waves: vec![Wave {
                peak_day: 120.0,
                height: 5000.0,
                width: 15.0,
            }],
            ..Default::default()
        };
        let c = gen_cases(&spec).unwrap();
        let argmax = (0..c.new_cases.len()).max_by_key(|&i| c.new_cases[i]).unwrap() + 1;
        assert!((argmax as i64 - 120).abs() <= 1, "argmax {argmax}");
    }

    #[test]
    fn zero_waves_are_all_zero() {
        let spec = SynthSpec {
            waves: vec![],
            ..Default::default()
        };
        let c = gen_cases(&spec).unwrap();
        assert!(c.cumulative.iter().all(|&v| v == 0));
        let docs = gen_corpus(&spec, &c).unwrap();
        let topic: Vec<&String> = spec.vocab_groups.iter().flatten().collect();
        assert!(docs.iter().all(|d| d.text.split(' ').all(|w| !topic.iter().any(|t| *t == w))));
    }

    #[test]
    fn two_waves_have_two_smoothed_maxima() {
        let spec = SynthSpec::default();
        let c = gen_cases(&spec).unwrap();
        // ignore noise bumps in the flat tails
        let top = *c.new_cases.iter().max().unwrap();
        let peaks: Vec<usize> = local_maxima(&c.new_cases)
            .into_iter()
            .filter(|&i| c.new_cases[i] > top / 10)
            .collect();
        assert_eq!(peaks.len(), 2, "{peaks:?}");
    }

    #[test]
    fn same_seed_same_output() {
        let spec = SynthSpec::default();
        let a = gen_cases(&spec).unwrap();
        let b = gen_cases(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(gen_feature_matrix(&spec, &a).unwrap(), gen_feature_matrix(&spec, &b).unwrap());
        assert_eq!(gen_corpus(&spec, &a).unwrap(), gen_corpus(&spec, &b).unwrap());
    }

    #[test]
    fn signal_columns_track_the_future() {
        let spec = SynthSpec {
            snr: 10.0,
            volatility_coupling: 0.0,
            ..Default::default()
        };
        let c = gen_cases(&spec).unwrap();
        let f = gen_feature_matrix(&spec, &c).unwrap();
        assert_eq!(f.signal_dims.len(), 5);
        assert_eq!(f.matrix.dim(), 100);
        let n = spec.n_days - spec.lead_days;
        let target: Vec<f64> = c.new_cases[spec.lead_days - 1..spec.lead_days - 1 + n]
            .iter()
            .map(|&v| v as f64)
            .collect();
        for &d in &f.signal_dims {
            let col = f.matrix.column(d).values;
            assert!(pearson(&col[..n], &target).unwrap() >= 0.9);
        }
    }

    #[test]
    fn infinite_snr_peaks_at_the_lead() {
        let spec = SynthSpec {
            snr: f64::INFINITY,
            ..Default::default()
        };
        let c = gen_cases(&spec).unwrap();
        let f = gen_feature_matrix(&spec, &c).unwrap();
        let cases = c.new_case_series().unwrap();
        let col = f.matrix.column(f.signal_dims[0]);
        let shared = col.window().intersect(&cases.window()).unwrap();
        let r = ccf(&col.restrict(&shared).unwrap(), &cases.restrict(&shared).unwrap(), 45).unwrap();
        assert_eq!(r.peak().unwrap().0, spec.lead_days as i64);
    }

    #[test]
    fn corpus_respects_bounds_and_survives_preprocessing() {
        let spec = SynthSpec {
            n_days: 40,
            lead_days: 5,
            waves: vec![Wave {
                peak_day: 20.0,
                height: 100.0,
                width: 5.0,
            }],
            ..Default::default()
        };
        let c = gen_cases(&spec).unwrap();
        let docs = gen_corpus(&spec, &c).unwrap();
        for day in spec.calendar().days() {
            let n = docs.iter().filter(|d| d.date == day).count();
            assert!((spec.docs_per_day.0..=spec.docs_per_day.1).contains(&n));
        }
        let pre = Preprocessor::default();
        let words: std::collections::BTreeSet<String> = (0..spec.background_vocab)
            .map(background_word)
            .chain(spec.vocab_groups.iter().flatten().cloned())
            .collect();
        for w in &words {
            assert_eq!(pre.tokens(w), vec![w.clone()], "{w} altered by preprocessing");
        }
    }
}
