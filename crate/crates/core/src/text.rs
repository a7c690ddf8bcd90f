//! Tweet cleaning: strip URLs, mentions, hashtags and emoji, tokenize,
//! lemmatize, then drop stopwords while keeping negations.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DatedDocument;

const BUNDLED_LEMMAS: &str = include_str!("../data/lemmas.tsv");
const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");

pub const DEFAULT_NEGATIONS: [&str; 8] =
    ["no", "not", "nor", "never", "none", "cannot", "n't", "without"];

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S*").expect("valid regex"));
static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@\w+").expect("valid regex"));
static HASHTAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#\w+").expect("valid regex"));

/// Emoji and pictograph code points removed by [`clean`].
pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F600..=0x1F64F   // emoticons
        | 0x1F300..=0x1F5FF // misc symbols and pictographs
        | 0x1F680..=0x1F6FF // transport and map
        | 0x1F900..=0x1F9FF // supplemental symbols and pictographs
        | 0x1FA70..=0x1FAFF // symbols and pictographs extended-A
        | 0x1F1E6..=0x1F1FF // regional indicators
        | 0x2600..=0x26FF   // misc symbols
        | 0x2700..=0x27BF   // dingbats
        | 0xFE0F | 0x200D | 0x20E3)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanOptions {
    /// Strip only the `#` of hashtags instead of dropping the whole tag.
    pub keep_hashtag_words: bool,
}

pub fn clean(raw: &str) -> String {
    clean_with(raw, CleanOptions::default())
}

/// Remove URLs, mentions, hashtags and emoji, lowercase, and collapse
/// whitespace.
pub fn clean_with(raw: &str, opts: CleanOptions) -> String {
    let s = URL.replace_all(raw, " ");
    let s = MENTION.replace_all(&s, " ");
    let s = if opts.keep_hashtag_words {
        HASHTAG.replace_all(&s, |caps: &regex::Captures| format!(" {}", &caps[0][1..]))
    } else {
        HASHTAG.replace_all(&s, " ")
    };
    let s: String = s
        .chars()
        .map(|c| if is_emoji(c) || c == '#' || c == '@' { ' ' } else { c })
        .collect();
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Split on whitespace and trim punctuation from both ends of each token.
pub fn tokenize(cleaned: &str) -> Vec<String> {
    cleaned
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Inflection → lemma lookup with an English suffix-rule fallback.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    table: HashMap<String, String>,
    lemmas: HashSet<String>,
}

impl Lexicon {
    pub fn bundled() -> Self {
        Self::from_tsv(BUNDLED_LEMMAS).expect("bundled lemma table is well formed")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&body).map_err(|e| match e {
            Error::Format { message, .. } => Error::Malformed {
                path: path.to_path_buf(),
                line: 0,
                message,
            },
            other => other,
        })
    }

    /// Parse `inflected<TAB>lemma` lines; blank lines and `#` comments are
    /// ignored.
    pub fn from_tsv(body: &str) -> Result<Self> {
        let mut table = HashMap::new();
        for (i, line) in body.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (form, lemma) = line.split_once('\t').ok_or_else(|| Error::Format {
                kind: "lemma table",
                message: format!("line {}: expected inflected<TAB>lemma", i + 1),
            })?;
            let (form, lemma) = (form.trim().to_lowercase(), lemma.trim().to_lowercase());
            if form.is_empty() || lemma.is_empty() || lemma.contains(char::is_whitespace) {
                return Err(Error::Format {
                    kind: "lemma table",
                    message: format!("line {}: bad entry", i + 1),
                });
            }
            table.insert(form, lemma);
        }
        let lemmas = table.values().cloned().collect();
        Ok(Lexicon { table, lemmas })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    fn step(&self, token: &str) -> Option<String> {
        if let Some(lemma) = self.table.get(token) {
            return Some(lemma.clone());
        }
        if self.lemmas.contains(token) {
            return None;
        }
        suffix_rule(token)
    }

    /// Lemma of a single lowercase token. Lookups and rules are applied until
    /// the token stops changing, so the result is itself a fixed point.
    pub fn lemma(&self, token: &str) -> String {
        let mut current = token.to_owned();
        for _ in 0..8 {
            match self.step(&current) {
                Some(next) if next != current => current = next,
                _ => break,
            }
        }
        current
    }
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

fn ends_alphabetic(s: &str) -> bool {
    s.chars().last().is_some_and(char::is_alphabetic)
}

fn undouble(stem: &str) -> String {
    let chars: Vec<char> = stem.chars().collect();
    let n = chars.len();
    if n >= 2 && chars[n - 1] == chars[n - 2] && !"aeiou".contains(chars[n - 1]) && chars[n - 1].is_alphabetic() {
        chars[..n - 1].iter().collect()
    } else {
        stem.to_owned()
    }
}

/// Deterministic English suffix stripping, first matching rule wins.
fn suffix_rule(w: &str) -> Option<String> {
    if let Some(stem) = w.strip_suffix("ies") {
        return (char_len(stem) >= 1 && ends_alphabetic(stem)).then(|| format!("{stem}y"));
    }
    if let Some(stem) = w.strip_suffix("sses") {
        return ends_alphabetic(stem).then(|| format!("{stem}ss"));
    }
    if let Some(stem) = w.strip_suffix("es") {
        if !ends_alphabetic(stem) {
            return None;
        }
        return Some(if char_len(stem) >= 3 { format!("{stem}e") } else { stem.to_owned() });
    }
    if w.ends_with('s') && !(w.ends_with("ss") || w.ends_with("us") || w.ends_with("is")) {
        let stem = &w[..w.len() - 1];
        return ends_alphabetic(stem).then(|| stem.to_owned());
    }
    for suffix in ["ing", "ed"] {
        if let Some(stem) = w.strip_suffix(suffix) {
            if char_len(stem) >= 3 && ends_alphabetic(stem) {
                return Some(undouble(stem));
            }
            return None;
        }
    }
    None
}

pub fn lemmatize(tokens: &[String], lexicon: &Lexicon) -> Vec<String> {
    tokens.iter().map(|t| lexicon.lemma(t)).collect()
}

/// Stopwords minus protected negations.
#[derive(Debug, Clone)]
pub struct StopwordPolicy {
    base: HashSet<String>,
    negations: HashSet<String>,
}

impl StopwordPolicy {
    pub fn new(
        base: impl IntoIterator<Item = String>,
        negations: impl IntoIterator<Item = String>,
    ) -> Self {
        StopwordPolicy {
            base: base.into_iter().map(|w| w.to_lowercase()).collect(),
            negations: negations.into_iter().map(|w| w.to_lowercase()).collect(),
        }
    }

    pub fn parse_list(body: &str) -> Vec<String> {
        body.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect()
    }

    pub fn bundled() -> Self {
        Self::with_base(Self::parse_list(BUNDLED_STOPWORDS))
    }

    /// `base` with the default negation exceptions.
    pub fn with_base(base: Vec<String>) -> Self {
        Self::new(base, DEFAULT_NEGATIONS.iter().map(|s| s.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::with_base(Self::parse_list(&body)))
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.base.contains(token) && !self.negations.contains(token)
    }

    pub fn effective(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .base
            .iter()
            .filter(|w| !self.negations.contains(*w))
            .map(String::as_str)
            .collect();
        v.sort_unstable();
        v
    }
}

pub fn remove_stopwords(tokens: &[String], policy: &StopwordPolicy) -> Vec<String> {
    tokens.iter().filter(|t| !policy.is_stopword(t)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub id: String,
    pub date: NaiveDate,
    pub tokens: Vec<String>,
}

/// The full clean → tokenize → lemmatize → stopword chain.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub policy: StopwordPolicy,
    pub lexicon: Lexicon,
    pub options: CleanOptions,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor {
            policy: StopwordPolicy::bundled(),
            lexicon: Lexicon::bundled(),
            options: CleanOptions::default(),
        }
    }
}

impl Preprocessor {
    pub fn tokens(&self, text: &str) -> Vec<String> {
        let cleaned = clean_with(text, self.options);
        let tokens = tokenize(&cleaned);
        let lemmas = lemmatize(&tokens, &self.lexicon);
        remove_stopwords(&lemmas, &self.policy)
    }

    pub fn preprocess(&self, doc: &DatedDocument) -> TokenizedDocument {
        TokenizedDocument {
            id: doc.id.clone(),
            date: doc.date,
            tokens: self.tokens(&doc.text),
        }
    }

    pub fn preprocess_all(&self, docs: &[DatedDocument]) -> Vec<TokenizedDocument> {
        use rayon::prelude::*;
        docs.par_iter().map(|d| self.preprocess(d)).collect()
    }
}
