//! Loading dated documents and daily cumulative counts, and aligning both
//! onto one gap-free daily calendar.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::calendar::{parse_day, DateWindow};
use crate::error::{Error, Result};
use crate::series::Series;

/// Minimum number of shared days between documents and counts.
pub const MIN_OVERLAP_DAYS: i64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatedDocument {
    pub id: String,
    pub date: NaiveDate,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocFormat {
    Jsonl,
    Csv,
}

impl DocFormat {
    /// Guess from the file extension; anything that is not `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DocFormat::Csv,
            _ => DocFormat::Jsonl,
        }
    }
}

impl FromStr for DocFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(DocFormat::Jsonl),
            "csv" => Ok(DocFormat::Csv),
            other => Err(Error::InvalidParam(format!("unknown document format {other:?}"))),
        }
    }
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn build_document(
    path: &Path,
    line: usize,
    id: Option<String>,
    date: Option<&str>,
    text: Option<String>,
) -> Result<DatedDocument> {
    let id = id.ok_or_else(|| malformed(path, line, "missing `id`"))?;
    let raw_date = date.ok_or_else(|| malformed(path, line, "missing `date`"))?;
    let date = parse_day(raw_date)
        .ok_or_else(|| malformed(path, line, format!("unparseable date {raw_date:?}")))?;
    let text = text.ok_or_else(|| malformed(path, line, "missing `text`"))?;
    if text.trim().is_empty() {
        return Err(malformed(path, line, "empty `text`"));
    }
    Ok(DatedDocument { id, date, text })
}

fn parse_json_line(path: &Path, line: usize, raw: &str) -> Result<DatedDocument> {
    let value: serde_json::Value = serde_json::from_str(raw)
        .map_err(|e| malformed(path, line, format!("invalid JSON: {e}")))?;
    let id = match value.get("id") {
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(serde_json::Value::Number(n)) => Some(n.to_string()),
        _ => None,
    };
    let date = value.get("date").and_then(|v| v.as_str());
    let text = value.get("text").and_then(|v| v.as_str()).map(str::to_owned);
    build_document(path, line, id, date, text)
}

/// Handle one parsed record: keep in-window documents, and either fail or
/// log-and-skip malformed ones depending on `strict`.
fn accept(
    record: Result<DatedDocument>,
    window: &DateWindow,
    strict: bool,
    out: &mut Vec<DatedDocument>,
) -> Result<()> {
    match record {
        Ok(doc) if window.contains(doc.date) => out.push(doc),
        Ok(_) => {}
        Err(e) if strict => return Err(e),
        Err(e) => warn!("skipping record: {e}"),
    }
    Ok(())
}

/// Read documents in file order, keeping those dated within `window`.
///
/// Malformed records abort the load when `strict` is set and are skipped
/// with a warning otherwise.
pub fn load_documents(
    path: &Path,
    format: DocFormat,
    window: &DateWindow,
    strict: bool,
) -> Result<Vec<DatedDocument>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    match format {
        DocFormat::Jsonl => {
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                accept(parse_json_line(path, idx + 1, &line), window, strict, &mut docs)?;
            }
        }
        DocFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
            let headers = reader
                .headers()
                .map_err(|e| malformed(path, 1, format!("invalid header: {e}")))?
                .clone();
            let col = |name: &str| headers.iter().position(|h| h.trim() == name);
            let (id_col, date_col, text_col) = (col("id"), col("date"), col("text"));
            if id_col.is_none() || date_col.is_none() || text_col.is_none() {
                return Err(malformed(path, 1, "header must contain id,date,text"));
            }
            for record in reader.records() {
                let record = match record {
                    Ok(r) => r,
                    Err(e) => {
                        let line = e.position().map_or(0, |p| p.line() as usize);
                        accept(Err(malformed(path, line, e.to_string())), window, strict, &mut docs)?;
                        continue;
                    }
                };
                let line = record.position().map_or(0, |p| p.line() as usize);
                let get = |c: Option<usize>| c.and_then(|c| record.get(c));
                let parsed = build_document(
                    path,
                    line,
                    get(id_col).map(str::to_owned),
                    get(date_col),
                    get(text_col).map(str::to_owned),
                );
                accept(parsed, window, strict, &mut docs)?;
            }
        }
    }
    Ok(docs)
}

pub fn write_documents_jsonl(path: &Path, docs: &[DatedDocument]) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for doc in docs {
        let line = serde_json::to_string(doc).expect("document serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Daily cumulative confirmed counts and the derived new-case series.
///
/// `new_cases[t]` belongs to the day after `cumulative[t]`'s day, so the
/// new-case series starts one day after `start_date`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSeries {
    pub start_date: NaiveDate,
    pub cumulative: Vec<u64>,
    pub new_cases: Vec<i64>,
}

impl CountSeries {
    /// Build from a gap-free cumulative series. A decrease is an error unless
    /// `allow_corrections` is set, in which case the new-case value clamps to 0.
    pub fn from_cumulative(
        start_date: NaiveDate,
        cumulative: Vec<u64>,
        allow_corrections: bool,
    ) -> Result<Self> {
        if cumulative.is_empty() {
            return Err(Error::Empty("count series"));
        }
        let mut new_cases = Vec::with_capacity(cumulative.len() - 1);
        for (t, pair) in cumulative.windows(2).enumerate() {
            let diff = pair[1] as i64 - pair[0] as i64;
            if diff < 0 && !allow_corrections {
                return Err(Error::NonMonotone {
                    day: t + 2,
                    date: start_date + Duration::days(t as i64 + 1),
                    from: pair[0],
                    to: pair[1],
                });
            }
            new_cases.push(diff.max(0));
        }
        Ok(CountSeries {
            start_date,
            cumulative,
            new_cases,
        })
    }

    pub fn window(&self) -> DateWindow {
        DateWindow::from_len(self.start_date, self.cumulative.len())
            .expect("count series is non-empty")
    }

    pub fn new_cases_start(&self) -> NaiveDate {
        self.start_date + Duration::days(1)
    }

    pub fn new_case_series(&self) -> Result<Series> {
        Series::new(
            self.new_cases_start(),
            self.new_cases.iter().map(|&v| v as f64).collect(),
        )
    }

    /// Restrict to a sub-window; new cases are re-derived so the first kept
    /// day has no new-case value.
    pub fn slice(&self, window: &DateWindow) -> Result<Self> {
        let own = self.window();
        let w = own
            .intersect(window)
            .ok_or(Error::Empty("count window intersection"))?;
        let from = own.offset_of(w.start).expect("inside");
        let to = own.offset_of(w.end).expect("inside");
        let cumulative = self.cumulative[from..=to].to_vec();
        let new_cases = self.new_cases[from..to].to_vec();
        Ok(CountSeries {
            start_date: w.start,
            cumulative,
            new_cases,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("date,confirmed\n");
        for (t, c) in self.cumulative.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.start_date + Duration::days(t as i64), c);
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Read a `date,confirmed` CSV and keep the rows inside `window`.
pub fn load_counts(path: &Path, window: &DateWindow, allow_corrections: bool) -> Result<CountSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| malformed(path, 1, format!("invalid header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(date_col), Some(count_col)) = (col("date"), col("confirmed")) else {
        return Err(malformed(path, 1, "header must contain date,confirmed"));
    };

    let mut rows: Vec<(NaiveDate, u64, usize)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            malformed(path, e.position().map_or(0, |p| p.line() as usize), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let raw_date = record.get(date_col).unwrap_or("");
        let date = parse_day(raw_date)
            .ok_or_else(|| malformed(path, line, format!("unparseable date {raw_date:?}")))?;
        if !window.contains(date) {
            continue;
        }
        let raw_count = record.get(count_col).unwrap_or("").trim();
        let count = raw_count
            .parse::<u64>()
            .or_else(|_| {
                // Accept integral floats such as "1234.0".
                raw_count
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                    .map(|v| v as u64)
                    .ok_or(())
            })
            .map_err(|_| malformed(path, line, format!("invalid count {raw_count:?}")))?;
        rows.push((date, count, line));
    }
    if rows.is_empty() {
        return Err(Error::Empty("count series"));
    }
    rows.sort_by_key(|r| r.0);
    for pair in rows.windows(2) {
        let (prev, next) = (pair[0].0, pair[1].0);
        if prev == next {
            return Err(malformed(path, pair[1].2, format!("duplicate date {next}")));
        }
        if (next - prev).num_days() != 1 {
            return Err(Error::MissingDay(prev + Duration::days(1)));
        }
    }
    let start = rows[0].0;
    CountSeries::from_cumulative(start, rows.into_iter().map(|r| r.1).collect(), allow_corrections)
}

/// Documents and counts on one shared daily calendar.
#[derive(Debug, Clone)]
pub struct AlignedCorpus {
    pub calendar: DateWindow,
    /// One (possibly empty) list per calendar day.
    pub docs_by_day: Vec<Vec<DatedDocument>>,
    pub counts: CountSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub calendar: DateWindow,
    pub total_docs: usize,
    pub docs_per_day_min: usize,
    pub docs_per_day_max: usize,
    pub docless_days: Vec<NaiveDate>,
}

impl QualityReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "calendar: {} ({} days)", self.calendar, self.calendar.len_days());
        let _ = writeln!(s, "documents: {}", self.total_docs);
        let _ = writeln!(s, "docs/day min: {}", self.docs_per_day_min);
        let _ = writeln!(s, "docs/day max: {}", self.docs_per_day_max);
        let _ = writeln!(s, "docless days: {}", self.docless_days.len());
        for d in &self.docless_days {
            let _ = writeln!(s, "  {d}");
        }
        s
    }
}

impl AlignedCorpus {
    pub fn quality(&self) -> QualityReport {
        let sizes: Vec<usize> = self.docs_by_day.iter().map(Vec::len).collect();
        QualityReport {
            calendar: self.calendar,
            total_docs: sizes.iter().sum(),
            docs_per_day_min: sizes.iter().copied().min().unwrap_or(0),
            docs_per_day_max: sizes.iter().copied().max().unwrap_or(0),
            docless_days: sizes
                .iter()
                .enumerate()
                .filter(|(_, &n)| n == 0)
                .map(|(i, _)| self.calendar.day(i))
                .collect(),
        }
    }

    pub fn documents(&self) -> impl Iterator<Item = &DatedDocument> {
        self.docs_by_day.iter().flatten()
    }
}

/// Intersect the documents' date extent with the count window.
pub fn align(docs: Vec<DatedDocument>, counts: &CountSeries) -> Result<AlignedCorpus> {
    let first = docs.iter().map(|d| d.date).min().ok_or(Error::Empty("document set"))?;
    let last = docs.iter().map(|d| d.date).max().expect("non-empty");
    let doc_window = DateWindow::new(first, last)?;
    let calendar = doc_window.intersect(&counts.window()).ok_or(Error::InsufficientOverlap {
        days: 0,
        needed: MIN_OVERLAP_DAYS,
    })?;
    let overlap = calendar.len_days() as i64;
    if overlap < MIN_OVERLAP_DAYS {
        return Err(Error::InsufficientOverlap {
            days: overlap,
            needed: MIN_OVERLAP_DAYS,
        });
    }
    let mut docs_by_day = vec![Vec::new(); calendar.len_days()];
    for doc in docs {
        if let Some(i) = calendar.offset_of(doc.date) {
            docs_by_day[i].push(doc);
        }
    }
    Ok(AlignedCorpus {
        calendar,
        docs_by_day,
        counts: counts.slice(&calendar)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn year() -> DateWindow {
        DateWindow::new(d("2020-08-01"), d("2021-07-31")).unwrap()
    }

    fn write(dir: &TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn jsonl_passes_through_in_file_order() {
        let dir = TempDir::new().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            r#"{"id":"b","date":"2020-09-01","text":"one"}
{"id":"a","date":"2020-09-02T10:00:00Z","text":"two"}
{"id":3,"date":"2020-09-03","text":"three"}
"#,
        );
        let docs = load_documents(&p, DocFormat::Jsonl, &year(), true).unwrap();
        assert_eq!(docs.len(), 3);
        assert_eq!(docs[0].id, "b");
        assert_eq!(docs[1].date, d("2020-09-02"));
        assert_eq!(docs[2].id, "3");
    }

    #[test]
    fn out_of_window_records_are_dropped() {
        let dir = TempDir::new().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            r#"{"id":"1","date":"2020-09-01","text":"x"}
{"id":"2","date":"2019-01-01","text":"y"}
{"id":"3","date":"2020-09-03","text":"z"}
"#,
        );
        assert_eq!(load_documents(&p, DocFormat::Jsonl, &year(), true).unwrap().len(), 2);
    }

    #[test]
    fn strict_mode_names_the_bad_line() {
        let dir = TempDir::new().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            r#"{"id":"1","date":"2020-09-01","text":"x"}
{"id":"2","date":"2020-09-02"}
"#,
        );
        let err = load_documents(&p, DocFormat::Jsonl, &year(), true).unwrap_err();
        match err {
            Error::Malformed { line, ref message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("text"));
            }
            other => panic!("unexpected {other:?}"),
        }
        // Lenient mode skips it.
        assert_eq!(load_documents(&p, DocFormat::Jsonl, &year(), false).unwrap().len(), 1);
    }

    #[test]
    fn csv_documents_with_quoting() {
        let dir = TempDir::new().unwrap();
        let p = write(
            &dir,
            "d.csv",
            "id,date,text\n1,2020-09-01,\"hello, \"\"world\"\"\"\n2,2020-09-02,   \n",
        );
        let docs = load_documents(&p, DocFormat::Csv, &year(), false).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].text, "hello, \"world\"");
        let err = load_documents(&p, DocFormat::Csv, &year(), true).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 3, .. }), "{err}");
    }

    #[test]
    fn first_difference_of_cumulative() {
        let c = CountSeries::from_cumulative(d("2020-08-01"), vec![100, 103, 110], false).unwrap();
        assert_eq!(c.new_cases, vec![3, 7]);
        let c = CountSeries::from_cumulative(d("2020-08-01"), vec![5, 5, 5], false).unwrap();
        assert_eq!(c.new_cases, vec![0, 0]);
    }

    #[test]
    fn decreasing_cumulative_fails_unless_corrections_allowed() {
        let err = CountSeries::from_cumulative(d("2020-08-01"), vec![10, 8], false).unwrap_err();
        assert!(err.to_string().contains("non-monotone at day 2"), "{err}");
        let c = CountSeries::from_cumulative(d("2020-08-01"), vec![10, 8, 9], true).unwrap();
        assert_eq!(c.new_cases, vec![0, 1]);
    }

    #[test]
    fn counts_csv_gap_is_an_error() {
        let dir = TempDir::new().unwrap();
        let p = write(
            &dir,
            "c.csv",
            "date,confirmed\n2020-08-01,1\n2020-08-02,2\n2020-08-04,3\n",
        );
        let err = load_counts(&p, &year(), false).unwrap_err();
        assert!(matches!(err, Error::MissingDay(day) if day == d("2020-08-03")));
    }

    #[test]
    fn counts_csv_round_trip() {
        let dir = TempDir::new().unwrap();
        let c = CountSeries::from_cumulative(d("2020-08-01"), vec![0, 4, 4, 9, 20], false).unwrap();
        let p = dir.path().join("c.csv");
        c.write_csv(&p).unwrap();
        assert_eq!(load_counts(&p, &year(), false).unwrap(), c);
    }

    fn docs_on(days: impl Iterator<Item = NaiveDate>) -> Vec<DatedDocument> {
        days.enumerate()
            .map(|(i, date)| DatedDocument {
                id: i.to_string(),
                date,
                text: "t".into(),
            })
            .collect()
    }

    fn counts_over(w: DateWindow) -> CountSeries {
        CountSeries::from_cumulative(w.start, (0..w.len_days() as u64).collect(), false).unwrap()
    }

    #[test]
    fn doc_window_inside_count_window() {
        let doc_w = DateWindow::new(d("2020-09-01"), d("2020-11-30")).unwrap();
        let corpus = align(docs_on(doc_w.days()), &counts_over(year())).unwrap();
        assert_eq!(corpus.calendar, doc_w);
        assert_eq!(corpus.counts.cumulative.len(), doc_w.len_days());
        assert!(corpus.quality().docless_days.is_empty());
    }

    #[test]
    fn disjoint_or_short_overlap_is_rejected() {
        let doc_w = DateWindow::new(d("2019-01-01"), d("2019-06-01")).unwrap();
        assert!(matches!(
            align(docs_on(doc_w.days()), &counts_over(year())),
            Err(Error::InsufficientOverlap { .. })
        ));
        let doc_w = DateWindow::new(d("2021-06-15"), d("2021-09-01")).unwrap();
        assert!(matches!(
            align(docs_on(doc_w.days()), &counts_over(year())),
            Err(Error::InsufficientOverlap { days: 47, .. })
        ));
    }

    #[test]
    fn docless_day_is_kept_and_flagged() {
        let doc_w = DateWindow::new(d("2020-09-01"), d("2020-11-30")).unwrap();
        let hole = d("2020-10-10");
        let corpus = align(docs_on(doc_w.days().filter(|&x| x != hole)), &counts_over(year())).unwrap();
        assert_eq!(corpus.calendar, doc_w);
        let i = corpus.calendar.offset_of(hole).unwrap();
        assert!(corpus.docs_by_day[i].is_empty());
        assert_eq!(corpus.quality().docless_days, vec![hole]);
        assert!(corpus.quality().render().contains("docless days: 1"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn new_cases_telescope(incs in proptest::collection::vec(0u64..10_000, 1..200)) {
                let mut cum = vec![7u64];
                for i in incs { cum.push(cum.last().unwrap() + i); }
                let c = CountSeries::from_cumulative(d("2020-08-01"), cum.clone(), false).unwrap();
                prop_assert_eq!(c.new_cases.len(), cum.len() - 1);
                prop_assert_eq!(c.new_cases.iter().sum::<i64>(), (cum[cum.len() - 1] - cum[0]) as i64);
            }

            #[test]
            fn aligned_calendar_matches_counts(offset in 0i64..100, len in 60usize..200) {
                let start = d("2020-08-01") + Duration::days(offset);
                let doc_w = DateWindow::from_len(start, len).unwrap();
                match align(docs_on(doc_w.days()), &counts_over(year())) {
                    Ok(corpus) => {
                        prop_assert_eq!(corpus.counts.cumulative.len(), corpus.calendar.len_days());
                        prop_assert!(corpus.documents().all(|doc| corpus.calendar.contains(doc.date)));
                    }
                    Err(Error::InsufficientOverlap { .. }) => {}
                    Err(e) => prop_assert!(false, "unexpected {}", e),
                }
            }
        }
    }
}
