//! Word2vec embeddings and their aggregation into per-document and per-day
//! vectors.

mod day;
mod io;
mod train;
mod vocab;

pub use day::{day_matrix, DayMatrix};
pub use io::{export_matrix_tsv, export_model_tsv, read_tsv_vectors};
pub use train::{probe_loss, train, Architecture, TrainParams, TrainingMeta};
pub use vocab::Vocabulary;

use ndarray::{Array2, ArrayView1};

use crate::stats::CompensatedSum;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub dim: usize,
    pub window: usize,
    pub vocab: Vocabulary,
    /// V x dim word vectors.
    pub input: Array2<f32>,
    /// V x dim negative-sampling context weights.
    pub output: Array2<f32>,
    pub meta: TrainingMeta,
}

impl EmbeddingModel {
    pub fn vector(&self, token: &str) -> Option<ArrayView1<'_, f32>> {
        self.vocab.get(token).map(|i| self.input.row(i))
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(self.output.iter()).all(|x| x.is_finite())
    }

    /// Cosine similarity of two in-vocabulary tokens.
    pub fn similarity(&self, a: &str, b: &str) -> Option<f64> {
        let (u, v) = (self.vector(a)?, self.vector(b)?);
        let dot: f64 = u.iter().zip(v.iter()).map(|(x, y)| *x as f64 * *y as f64).sum();
        let nu: f64 = u.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        (nu > 0.0 && nv > 0.0).then(|| dot / (nu * nv))
    }
}

/// Componentwise mean of the vectors of in-vocabulary tokens, counting
/// repeats. `None` when no token is in the vocabulary.
pub fn doc_vector<S: AsRef<str>>(model: &EmbeddingModel, tokens: &[S]) -> Option<Vec<f64>> {
    let rows: Vec<usize> = tokens.iter().filter_map(|t| model.vocab.get(t.as_ref())).collect();
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some(
        (0..model.dim)
            .map(|j| rows.iter().map(|&r| model.input[(r, j)] as f64).collect::<CompensatedSum>().value() / n)
            .collect(),
    )
}
