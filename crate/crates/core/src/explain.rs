//! Per-dimension themes: the documents that load most strongly on a selected
//! dimension and the words they share.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{doc_vector, EmbeddingModel};
use crate::error::{Error, Result};
use crate::select::SdSet;
use crate::text::TokenizedDocument;

/// Documents that have a vector, with their vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DocVectors {
    pub docs: Vec<TokenizedDocument>,
    pub vectors: Vec<Vec<f64>>,
    pub dim: usize,
}

impl DocVectors {
    /// Embed every document; those without an in-vocabulary token are dropped.
    pub fn build(model: &EmbeddingModel, docs: &[TokenizedDocument]) -> DocVectors {
        let pairs: Vec<(TokenizedDocument, Vec<f64>)> = docs
            .par_iter()
            .filter_map(|d| doc_vector(model, &d.tokens).map(|v| (d.clone(), v)))
            .collect();
        let (docs, vectors) = pairs.into_iter().unzip();
        DocVectors {
            docs,
            vectors,
            dim: model.dim,
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub id: String,
    pub date: NaiveDate,
    pub value: f64,
    pub tokens: Vec<String>,
}

fn rank_order(dv: &DocVectors, dim: usize, a: usize, b: usize) -> Ordering {
    let (va, vb) = (dv.vectors[a][dim].abs(), dv.vectors[b][dim].abs());
    vb.total_cmp(&va)
        .then_with(|| dv.docs[a].date.cmp(&dv.docs[b].date))
        .then_with(|| dv.docs[a].id.cmp(&dv.docs[b].id))
}

/// The `k` documents with the largest `|vector[dim]|`, ties broken by earlier
/// date then id.
pub fn top_tweets(dim: usize, dv: &DocVectors, k: usize) -> Result<Vec<RankedDoc>> {
    if dim >= dv.dim {
        return Err(Error::InvalidParam(format!("dimension {dim} out of range for {}", dv.dim)));
    }
    if dv.is_empty() {
        return Err(Error::Empty("representable documents"));
    }
    let mut idx: Vec<usize> = (0..dv.len()).collect();
    let k = k.min(idx.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_order(dv, dim, a, b));
        idx.truncate(k);
    }
    idx.sort_by(|&a, &b| rank_order(dv, dim, a, b));
    Ok(idx
        .into_iter()
        .map(|i| RankedDoc {
            id: dv.docs[i].id.clone(),
            date: dv.docs[i].date,
            value: dv.vectors[i][dim],
            tokens: dv.docs[i].tokens.clone(),
        })
        .collect())
}

/// How keywords of a dimension are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordRanking {
    /// Occurrences in the top documents.
    #[default]
    Frequency,
    /// Absolute value of the word vector's component on the dimension.
    Projection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub token: String,
    pub count: u64,
    /// The word vector's component on the dimension, when a model was given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

fn count_tokens(ranked: &[RankedDoc]) -> BTreeMap<&str, u64> {
    let mut counts = BTreeMap::new();
    for t in ranked.iter().flat_map(|d| &d.tokens) {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Tokens of the ranked documents counted with multiplicity, by descending
/// count then lexicographically.
pub fn keywords(ranked: &[RankedDoc], top_m: usize) -> Vec<Keyword> {
    let mut list: Vec<Keyword> = count_tokens(ranked)
        .into_iter()
        .map(|(token, count)| Keyword {
            token: token.to_owned(),
            count,
            weight: None,
        })
        .collect();
    list.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
    list.truncate(top_m);
    list
}

/// Tokens of the ranked documents by descending `|vector[dim]|`, then
/// lexicographically. Out-of-vocabulary tokens are skipped.
pub fn keywords_by_projection(ranked: &[RankedDoc], model: &EmbeddingModel, dim: usize, top_m: usize) -> Vec<Keyword> {
    let mut list: Vec<Keyword> = count_tokens(ranked)
        .into_iter()
        .filter_map(|(token, count)| {
            let w = model.vector(token)?[dim] as f64;
            Some(Keyword {
                token: token.to_owned(),
                count,
                weight: Some(w),
            })
        })
        .collect();
    list.sort_by(|a, b| {
        let (wa, wb) = (a.weight.unwrap_or(0.0).abs(), b.weight.unwrap_or(0.0).abs());
        wb.total_cmp(&wa).then_with(|| a.token.cmp(&b.token))
    });
    list.truncate(top_m);
    list
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeRow {
    pub dim: usize,
    pub keywords: Vec<Keyword>,
    pub top_tweets: Vec<RankedDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeReport {
    pub k: usize,
    pub top_m: usize,
    pub ranking: KeywordRanking,
    pub rows: Vec<ThemeRow>,
}

/// One row per selected dimension.
pub fn theme_report(
    sd: &SdSet,
    dv: &DocVectors,
    model: &EmbeddingModel,
    k: usize,
    top_m: usize,
    ranking: KeywordRanking,
) -> Result<ThemeReport> {
    let rows = sd
        .dims
        .par_iter()
        .map(|&dim| {
            let top = top_tweets(dim, dv, k)?;
            let kw = match ranking {
                KeywordRanking::Frequency => keywords(&top, top_m),
                KeywordRanking::Projection => keywords_by_projection(&top, model, dim, top_m),
            };
            Ok(ThemeRow {
                dim,
                keywords: kw,
                top_tweets: top,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThemeReport {
        k,
        top_m,
        ranking,
        rows,
    })
}

fn cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

impl ThemeReport {
    /// Markdown table `Dimension | Selected Keywords | Sample tweets`. Sample
    /// texts come from `texts` by document id, falling back to the tokens.
    pub fn to_markdown(&self, texts: &HashMap<String, String>, samples: usize) -> String {
        let mut out = String::from("| Dimension | Selected Keywords | Sample tweets |\n|---|---|---|\n");
        for row in &self.rows {
            let kw: Vec<&str> = row.keywords.iter().map(|k| k.token.as_str()).collect();
            let tweets: Vec<String> = row
                .top_tweets
                .iter()
                .take(samples)
                .map(|d| {
                    let text = texts.get(&d.id).cloned().unwrap_or_else(|| d.tokens.join(" "));
                    format!("{} ({:+.3})", cell(&text), d.value)
                })
                .collect();
            let _ = writeln!(out, "| {} | {} | {} |", row.dim, cell(&kw.join(", ")), tweets.join("<br>"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}
