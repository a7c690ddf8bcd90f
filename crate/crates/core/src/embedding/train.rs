use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingModel, Vocabulary};
use crate::error::{Error, Result};
use crate::text::TokenizedDocument;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Cbow,
    SkipGram,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Cbow => "cbow",
            Architecture::SkipGram => "skip_gram",
        })
    }
}

/// Word2vec training parameters. Defaults follow the reference
/// implementation, with 100 dimensions and a window of 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negative: usize,
    /// Initial step size; decays linearly to `alpha * 1e-4`.
    pub alpha: f64,
    /// Frequent-word subsampling threshold; 0 disables subsampling.
    pub sample: f64,
    pub min_count: u64,
    pub seed: u64,
    pub architecture: Architecture,
    /// More than one worker trains lock-free and is not reproducible.
    pub workers: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            dim: 100,
            window: 5,
            epochs: 5,
            negative: 5,
            alpha: 0.025,
            sample: 1e-3,
            min_count: 5,
            seed: 1,
            architecture: Architecture::Cbow,
            workers: 1,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.to_owned()));
        if self.dim == 0 {
            return bad("embedding dim must be > 0");
        }
        if self.window == 0 {
            return bad("embedding window must be > 0");
        }
        if self.negative == 0 {
            return bad("negative must be > 0");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.sample >= 0.0 && self.sample.is_finite()) {
            return bad("sample must be >= 0");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub architecture: Architecture,
    pub epochs: usize,
    pub seed: u64,
    pub negative: usize,
    pub alpha: f64,
    pub sample: f64,
    pub workers: usize,
}

/// f32 matrix shared between workers without locks.
struct Shared(Vec<AtomicU32>);

impl Shared {
    fn from_f32(v: &[f32]) -> Self {
        Shared(v.iter().map(|x| AtomicU32::new(x.to_bits())).collect())
    }

    #[inline]
    fn get(&self, i: usize) -> f32 {
        f32::from_bits(self.0[i].load(Ordering::Relaxed))
    }

    #[inline]
    fn add(&self, i: usize, v: f32) {
        let cell = &self.0[i];
        cell.store((f32::from_bits(cell.load(Ordering::Relaxed)) + v).to_bits(), Ordering::Relaxed);
    }

    fn into_vec(self) -> Vec<f32> {
        self.0.into_iter().map(|a| f32::from_bits(a.into_inner())).collect()
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

struct Job<'a> {
    sentences: &'a [Vec<u32>],
    counts: &'a [u64],
    noise: &'a WeightedIndex<f64>,
    input: &'a Shared,
    output: &'a Shared,
    progress: &'a AtomicU64,
    total: u64,
    total_words: f64,
    params: &'a TrainParams,
}

impl Job<'_> {
    fn run(&self, mut rng: ChaCha8Rng) {
        let p = self.params;
        let dim = p.dim;
        let alpha0 = p.alpha as f32;
        let floor = alpha0 * 1e-4;
        let threshold = p.sample * self.total_words;
        let mut hidden = vec![0f32; dim];
        let mut grad = vec![0f32; dim];
        let mut kept: Vec<u32> = Vec::new();
        let mut pending = 0u64;
        for _ in 0..p.epochs {
            for sentence in self.sentences {
                if pending >= 1000 {
                    self.progress.fetch_add(pending, Ordering::Relaxed);
                    pending = 0;
                }
                let done = self.progress.load(Ordering::Relaxed) + pending;
                let alpha = (alpha0 * (1.0 - done as f32 / (self.total + 1) as f32)).max(floor);
                pending += sentence.len() as u64;

                kept.clear();
                for &w in sentence {
                    if threshold > 0.0 {
                        let f = self.counts[w as usize] as f64;
                        let keep = ((f / threshold).sqrt() + 1.0) * threshold / f;
                        if keep < rng.random::<f64>() {
                            continue;
                        }
                    }
                    kept.push(w);
                }

                for pos in 0..kept.len() {
                    let word = kept[pos] as usize;
                    let radius = rng.random_range(1..=p.window);
                    let lo = pos.saturating_sub(radius);
                    let hi = (pos + radius).min(kept.len() - 1);
                    match p.architecture {
                        Architecture::Cbow => {
                            hidden.fill(0.0);
                            let mut n = 0usize;
                            for (c, &ctx) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                                if c == pos {
                                    continue;
                                }
                                let row = ctx as usize * dim;
                                for (j, h) in hidden.iter_mut().enumerate() {
                                    *h += self.input.get(row + j);
                                }
                                n += 1;
                            }
                            if n == 0 {
                                continue;
                            }
                            let inv = 1.0 / n as f32;
                            hidden.iter_mut().for_each(|h| *h *= inv);
                            grad.fill(0.0);
                            self.negative_step(&mut rng, word, &hidden, &mut grad, alpha);
                            for (c, &ctx) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                                if c == pos {
                                    continue;
                                }
                                let row = ctx as usize * dim;
                                for (j, g) in grad.iter().enumerate() {
                                    self.input.add(row + j, *g);
                                }
                            }
                        }
                        Architecture::SkipGram => {
                            for (c, &ctx) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                                if c == pos {
                                    continue;
                                }
                                let row = ctx as usize * dim;
                                for (j, h) in hidden.iter_mut().enumerate() {
                                    *h = self.input.get(row + j);
                                }
                                grad.fill(0.0);
                                self.negative_step(&mut rng, word, &hidden, &mut grad, alpha);
                                for (j, g) in grad.iter().enumerate() {
                                    self.input.add(row + j, *g);
                                }
                            }
                        }
                    }
                }
            }
        }
        self.progress.fetch_add(pending, Ordering::Relaxed);
    }

    /// One positive and `negative` noise updates of the output layer;
    /// accumulates the input-side gradient into `grad`.
    fn negative_step(&self, rng: &mut ChaCha8Rng, word: usize, hidden: &[f32], grad: &mut [f32], alpha: f32) {
        let dim = hidden.len();
        for d in 0..=self.params.negative {
            let (target, label) = if d == 0 {
                (word, 1.0f32)
            } else {
                let t = self.noise.sample(rng);
                if t == word {
                    continue;
                }
                (t, 0.0)
            };
            let row = target * dim;
            let mut dot = 0f32;
            for (j, h) in hidden.iter().enumerate() {
                dot += h * self.output.get(row + j);
            }
            let g = (label - sigmoid(dot)) * alpha;
            for (j, h) in hidden.iter().enumerate() {
                grad[j] += g * self.output.get(row + j);
                self.output.add(row + j, g * h);
            }
        }
    }
}

fn encode(corpus: &[TokenizedDocument], vocab: &Vocabulary) -> Vec<Vec<u32>> {
    corpus
        .iter()
        .map(|d| d.tokens.iter().filter_map(|t| vocab.get(t).map(|i| i as u32)).collect())
        .collect()
}

fn noise_distribution(vocab: &Vocabulary) -> WeightedIndex<f64> {
    WeightedIndex::new(vocab.counts().iter().map(|&c| (c as f64).powf(0.75)))
        .expect("vocabulary counts are positive")
}

/// Train word vectors by negative sampling.
pub fn train(corpus: &[TokenizedDocument], params: &TrainParams) -> Result<EmbeddingModel> {
    params.validate()?;
    let vocab = Vocabulary::build(corpus, params.min_count)?;
    let dim = params.dim;
    let v = vocab.len();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init: Vec<f32> = (0..v * dim).map(|_| (rng.random::<f32>() - 0.5) / dim as f32).collect();
    let input = Shared::from_f32(&init);
    let output = Shared::from_f32(&vec![0f32; v * dim]);

    let sentences = encode(corpus, &vocab);
    let train_words: u64 = sentences.iter().map(|s| s.len() as u64).sum();
    let noise = noise_distribution(&vocab);
    let progress = AtomicU64::new(0);
    let workers = params.workers.min(sentences.len()).max(1);

    let job = |range: std::ops::Range<usize>| Job {
        sentences: &sentences[range],
        counts: vocab.counts(),
        noise: &noise,
        input: &input,
        output: &output,
        progress: &progress,
        total: params.epochs as u64 * train_words,
        total_words: train_words as f64,
        params,
    };
    let worker_rng = |w: usize| {
        let mut r = ChaCha8Rng::seed_from_u64(params.seed);
        r.set_stream(w as u64 + 1);
        r
    };
    if workers == 1 {
        job(0..sentences.len()).run(worker_rng(0));
    } else {
        let n = sentences.len();
        std::thread::scope(|scope| {
            for w in 0..workers {
                let j = job(w * n / workers..(w + 1) * n / workers);
                let r = worker_rng(w);
                scope.spawn(move || j.run(r));
            }
        });
    }
    log::debug!("trained {v} word vectors over {train_words} tokens x {} epochs", params.epochs);

    let input = Array2::from_shape_vec((v, dim), input.into_vec()).expect("shape");
    let output = Array2::from_shape_vec((v, dim), output.into_vec()).expect("shape");
    let model = EmbeddingModel {
        dim,
        window: params.window,
        vocab,
        input,
        output,
        meta: TrainingMeta {
            architecture: params.architecture,
            epochs: params.epochs,
            seed: params.seed,
            negative: params.negative,
            alpha: params.alpha,
            sample: params.sample,
            workers,
        },
    };
    if !model.is_finite() {
        return Err(Error::Degenerate("training diverged to non-finite vectors".into()));
    }
    Ok(model)
}

/// Mean negative-sampling loss of predicting each word from its full context
/// window, with noise words drawn from a generator seeded by `seed`.
pub fn probe_loss(model: &EmbeddingModel, probe: &[TokenizedDocument], seed: u64) -> f64 {
    let sentences = encode(probe, &model.vocab);
    let noise = noise_distribution(&model.vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negative = model.meta.negative.max(1);
    let ln_sigmoid = |x: f64| -(1.0 + (-x).exp()).ln();
    let (mut total, mut count) = (0.0f64, 0usize);
    let mut hidden = vec![0f64; model.dim];
    for s in &sentences {
        for pos in 0..s.len() {
            let lo = pos.saturating_sub(model.window);
            let hi = (pos + model.window).min(s.len() - 1);
            hidden.fill(0.0);
            let mut n = 0;
            for c in (lo..=hi).filter(|&c| c != pos) {
                for (h, x) in hidden.iter_mut().zip(model.input.row(s[c] as usize)) {
                    *h += *x as f64;
                }
                n += 1;
            }
            if n == 0 {
                continue;
            }
            hidden.iter_mut().for_each(|h| *h /= n as f64);
            let score = |t: usize| -> f64 {
                hidden.iter().zip(model.output.row(t)).map(|(h, o)| h * *o as f64).sum()
            };
            let mut loss = -ln_sigmoid(score(s[pos] as usize));
            for _ in 0..negative {
                loss -= ln_sigmoid(-score(noise.sample(&mut rng)));
            }
            total += loss;
            count += 1;
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        total / count as f64
    }
}
