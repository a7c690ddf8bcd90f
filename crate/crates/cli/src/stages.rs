//! Pipeline stages. Each reads its inputs from the run directory, writes its
//! artifacts there and records itself in the manifest.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Axis;
use serde_json::json;
use sigdim::calendar::DateWindow;
use sigdim::embedding::{self, export_matrix_tsv, export_model_tsv, DayMatrix, EmbeddingModel};
use sigdim::explain::{theme_report, DocVectors, ThemeReport};
use sigdim::ingest::{self, load_counts, load_documents, CountSeries, DatedDocument, DocFormat, MIN_OVERLAP_DAYS};
use sigdim::predict::{make_frame, split_by_date, sweep, sweep_csv, EvalReport, FeatureTransform, LeadFrame};
use sigdim::select::{self, combine, prepare_features_ccf, prepare_target_ccf, select_boruta, select_ccf, SdSet};
use sigdim::series::Series;
use sigdim::text::{CleanOptions, Lexicon, Preprocessor, StopwordPolicy, TokenizedDocument};

use crate::config::{BorutaFeatures, RunConfig, SetKind};
use crate::error::{CliError, CliResult};
use crate::run::Run;

pub const STAGES: [&str; 8] = ["ingest", "preprocess", "embed", "transform", "select", "train", "explain", "report"];

const COUNTS: &str = "corpus/counts.csv";
const DOCUMENTS: &str = "corpus/documents.jsonl";
const INPUT_MATRIX: &str = "corpus/day_matrix.csv";
const QUALITY: &str = "corpus/quality.txt";
const TOKENS: &str = "corpus/tokens.jsonl";
const MODEL: &str = "model/embedding.slem";
const DAY_MATRIX: &str = "model/day_matrix.csv";
const TARGET_CCF: &str = "series/target_ccf.csv";
const ADF: &str = "series/adf.json";
const FEATURES_CCF: &str = "series/features_ccf.csv";
const FEATURES_BORUTA: &str = "series/features_boruta.csv";
const FEATURES_REGRESSION: &str = "series/features_regression.csv";
const NEW_CASES: &str = "series/new_cases.csv";
const SD_CCF: &str = "selection/sd_ccf.json";
const CCF_SUMMARY: &str = "selection/ccf_summary.csv";
const EVAL_SUMMARY: &str = "eval/summary.csv";
const THEMES_MD: &str = "report/themes.md";
const THEMES_JSON: &str = "report/themes.json";
const REPORT: &str = "report/report.md";

fn sd_path(kind: SetKind, lead: usize) -> String {
    match kind {
        SetKind::Ccf => SD_CCF.to_string(),
        k => format!("selection/sd_{}_lead{lead}.json", k.name()),
    }
}

fn wide_window(cfg: &RunConfig) -> DateWindow {
    let lo = NaiveDate::from_ymd_opt(1900, 1, 1).expect("valid date");
    let hi = NaiveDate::from_ymd_opt(2200, 12, 31).expect("valid date");
    DateWindow {
        start: cfg.window.start.unwrap_or(lo),
        end: cfg.window.end.unwrap_or(hi),
    }
}

/// Days up to and including `train_end` when running prospectively.
fn selection_window(cfg: &RunConfig, calendar: &DateWindow) -> CliResult<DateWindow> {
    if !cfg.strict_prospective {
        return Ok(*calendar);
    }
    calendar
        .intersect(&DateWindow {
            start: calendar.start,
            end: cfg.predict.train_end,
        })
        .ok_or(CliError::Core(sigdim::Error::Empty("days up to predict.train_end")))
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, body).map_err(|e| CliError::io(path, e))
}

fn read_counts(run: &Run) -> CliResult<CountSeries> {
    let p = run.require(COUNTS, "ingest")?;
    let wide = DateWindow {
        start: NaiveDate::MIN,
        end: NaiveDate::MAX,
    };
    Ok(load_counts(&p, &wide, false)?)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(|e| CliError::io(path, e))?);
    for it in items {
        serde_json::to_writer(&mut w, it).expect("serializable");
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_tokens(path: &Path) -> CliResult<Vec<TokenizedDocument>> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            CliError::Core(sigdim::Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })?);
    }
    Ok(out)
}

pub fn ingest(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg.clone();
    let mut g = run.begin("ingest", json!({ "window": cfg.window, "ingest": cfg.ingest }));
    let counts_path = cfg.paths.counts.clone().expect("validated");
    g.input(&counts_path);
    let window = wide_window(&cfg);
    let counts = load_counts(&counts_path, &window, cfg.ingest.allow_corrections)?;
    if let Some(mpath) = &cfg.paths.day_matrix {
        g.input(mpath);
        let m = DayMatrix::read_csv(mpath)?;
        let calendar = m
            .calendar
            .intersect(&counts.window())
            .and_then(|w| w.intersect(&window))
            .filter(|w| w.len_days() as i64 >= MIN_OVERLAP_DAYS)
            .ok_or_else(|| {
                CliError::Core(sigdim::Error::InsufficientOverlap {
                    days: m.calendar.intersect(&counts.window()).map_or(0, |w| w.len_days() as i64),
                    needed: MIN_OVERLAP_DAYS,
                })
            })?;
        let m = m.restrict(&calendar)?;
        m.write_csv(&run.path(INPUT_MATRIX))?;
        counts.slice(&calendar)?.write_csv(&run.path(COUNTS))?;
        let note = format!(
            "calendar: {calendar} ({} days)\nsource: precomputed day matrix with {} dimensions\n",
            calendar.len_days(),
            m.dim()
        );
        write(&run.path(QUALITY), note)?;
        for o in [INPUT_MATRIX, COUNTS, QUALITY] {
            g.output(o);
        }
        return run.finish(g, None);
    }
    let docs_path = cfg.paths.documents.clone().expect("validated");
    g.input(&docs_path);
    let format = cfg.ingest.format.unwrap_or_else(|| DocFormat::from_path(&docs_path));
    let docs = load_documents(&docs_path, format, &window, cfg.ingest.strict)?;
    let aligned = ingest::align(docs, &counts)?;
    let quality = aligned.quality();
    log::info!("ingested {} documents over {}", quality.total_docs, quality.calendar);
    let all: Vec<DatedDocument> = aligned.documents().cloned().collect();
    ingest::write_documents_jsonl(&run.path(DOCUMENTS), &all)?;
    aligned.counts.write_csv(&run.path(COUNTS))?;
    write(&run.path(QUALITY), quality.render())?;
    for o in [DOCUMENTS, COUNTS, QUALITY] {
        g.output(o);
    }
    run.finish(g, None)
}

const SKIP_TEXT: &str = "precomputed day matrix; no text to process";

pub fn preprocess(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg.clone();
    let mut g = run.begin("preprocess", json!({ "preprocess": cfg.preprocess }));
    if cfg.uses_day_matrix() {
        return run.finish(g, Some(SKIP_TEXT.into()));
    }
    let docs_path = run.require(DOCUMENTS, "ingest")?;
    let lexicon = match &cfg.paths.lemma_table {
        Some(p) => {
            g.input(p);
            Lexicon::from_file(p)?
        }
        None => Lexicon::bundled(),
    };
    let policy = match &cfg.paths.stopwords {
        Some(p) => {
            g.input(p);
            StopwordPolicy::from_file(p)?
        }
        None => StopwordPolicy::bundled(),
    };
    let pre = Preprocessor {
        policy,
        lexicon,
        options: CleanOptions {
            keep_hashtag_words: cfg.preprocess.keep_hashtag_words,
        },
    };
    let wide = wide_window(&cfg);
    let docs = load_documents(&docs_path, DocFormat::Jsonl, &wide, true)?;
    let tokens = pre.preprocess_all(&docs);
    write_jsonl(&run.path(TOKENS), &tokens)?;
    g.output(TOKENS);
    run.finish(g, None)
}

pub fn embed(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg.clone();
    let mut g = run.begin(
        "embed",
        json!({ "embedding": cfg.embedding, "strict_prospective": cfg.strict_prospective, "train_end": cfg.predict.train_end }),
    );
    if cfg.uses_day_matrix() {
        let src = run.require(INPUT_MATRIX, "ingest")?;
        std::fs::copy(&src, run.path(DAY_MATRIX)).map_err(|e| CliError::io(&src, e))?;
        let m = DayMatrix::read_csv(&run.path(DAY_MATRIX))?;
        export_matrix_tsv(&m, &run.path("model/day_vectors.tsv"), &run.path("model/day_labels.tsv"))?;
        for o in [DAY_MATRIX, "model/day_vectors.tsv", "model/day_labels.tsv"] {
            g.output(o);
        }
        return run.finish(g, Some("precomputed day matrix; embedding training skipped".into()));
    }
    let tokens = read_tokens(&run.require(TOKENS, "preprocess")?)?;
    let counts = read_counts(run)?;
    let calendar = counts.window();
    let training: Vec<TokenizedDocument> = if cfg.strict_prospective {
        tokens.iter().filter(|d| d.date <= cfg.predict.train_end).cloned().collect()
    } else {
        tokens.clone()
    };
    log::info!("training embeddings on {} of {} documents", training.len(), tokens.len());
    let model = embedding::train(&training, &cfg.embedding)?;
    let mut by_day = vec![Vec::new(); calendar.len_days()];
    for d in tokens {
        if let Some(i) = calendar.offset_of(d.date) {
            by_day[i].push(d);
        }
    }
    let m = embedding::day_matrix(&model, calendar, &by_day)?;
    model.save(&run.path(MODEL))?;
    m.write_csv(&run.path(DAY_MATRIX))?;
    export_matrix_tsv(&m, &run.path("model/day_vectors.tsv"), &run.path("model/day_labels.tsv"))?;
    export_model_tsv(&model, &run.path("model/word_vectors.tsv"), &run.path("model/word_labels.tsv"))?;
    for o in [
        MODEL,
        DAY_MATRIX,
        "model/day_vectors.tsv",
        "model/day_labels.tsv",
        "model/word_vectors.tsv",
        "model/word_labels.tsv",
    ] {
        g.output(o);
    }
    run.finish(g, None)
}

pub fn transform(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg.clone();
    let mut g = run.begin(
        "transform",
        json!({
            "transform": cfg.transform,
            "boruta_features": cfg.selection.boruta_features,
            "strict_prospective": cfg.strict_prospective,
            "train_end": cfg.predict.train_end,
        }),
    );
    let m = DayMatrix::read_csv(&run.require(DAY_MATRIX, "embed")?)?;
    let counts = read_counts(run)?;
    let w = cfg.transform.rolling_window;
    counts.new_case_series()?.write_csv(&run.path(NEW_CASES))?;

    let sel = selection_window(&cfg, &counts.window())?;
    let target = prepare_target_ccf(&counts.slice(&sel)?)?;
    let features = prepare_features_ccf(&m.restrict(&sel)?, w)?;
    let (features, target_series) = select::align(&features, &target.series)?;
    target_series.write_csv(&run.path(TARGET_CCF))?;
    features.write_csv(&run.path(FEATURES_CCF))?;
    let adf = match (&target.adf, &target.adf_note) {
        (Some(r), _) => json!({ "statistic": r.statistic, "p_value": r.p_value, "lag_order": r.lag_order, "n_effective": r.n_effective, "stationary_at_0_05": r.is_stationary(0.05) }),
        (None, note) => json!({ "error": note }),
    };
    write(&run.path(ADF), serde_json::to_string_pretty(&adf).expect("json"))?;

    let boruta_features = match cfg.selection.boruta_features {
        BorutaFeatures::RollingVariance => prepare_features_ccf(&m, w)?,
        BorutaFeatures::Diff1 => select::difference_features(&m)?,
    };
    boruta_features.write_csv(&run.path(FEATURES_BORUTA))?;
    let regression = match cfg.transform.features {
        FeatureTransform::Raw => m.clone(),
        FeatureTransform::RollingVariance => prepare_features_ccf(&m, w)?,
    };
    regression.write_csv(&run.path(FEATURES_REGRESSION))?;
    for o in [NEW_CASES, TARGET_CCF, FEATURES_CCF, ADF, FEATURES_BORUTA, FEATURES_REGRESSION] {
        g.output(o);
    }
    run.finish(g, None)
}

/// Rows usable for selection: inside the training period, and with the
/// target also inside it when running prospectively.
fn training_rows(frame: &LeadFrame, cfg: &RunConfig) -> Vec<usize> {
    (0..frame.len())
        .filter(|&i| {
            frame.dates[i] <= cfg.predict.train_end
                && (!cfg.strict_prospective || frame.target_date(i) <= cfg.predict.train_end)
        })
        .collect()
}

pub fn select(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg.clone();
    let mut g = run.begin(
        "select",
        json!({ "selection": cfg.selection, "leads": cfg.predict.leads, "strict_prospective": cfg.strict_prospective, "train_end": cfg.predict.train_end }),
    );
    let features = DayMatrix::read_csv(&run.require(FEATURES_CCF, "transform")?)?;
    let target = Series::read_csv(&run.require(TARGET_CCF, "transform")?)?;
    let screen = select_ccf(&features, &target, &cfg.selection.ccf_params())?;
    std::fs::create_dir_all(run.path("selection/ccf")).map_err(|e| CliError::io(run.path("selection/ccf"), e))?;
    let mut summary = String::from("dim,selected,leading_lags,peak_lag,peak_correlation\n");
    for (d, r) in screen.results.iter().enumerate() {
        let rel = format!("selection/ccf/dim_{d:03}.csv");
        r.write_csv(&run.path(&rel))?;
        g.output(rel);
        let lags = screen.set.provenance.get(&d).and_then(|p| p.ccf_lags.clone()).unwrap_or_default();
        let (pl, pc) = r.peak().map_or((String::new(), String::new()), |(l, c)| (l.to_string(), c.to_string()));
        let lags: Vec<String> = lags.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(summary, "{d},{},{},{pl},{pc}", screen.set.contains(d), lags.join(" "));
    }
    write(&run.path(CCF_SUMMARY), summary)?;
    write(&run.path(SD_CCF), screen.set.to_json())?;
    g.output(CCF_SUMMARY);
    g.output(SD_CCF);
    log::info!("CCF selected {} of {} dimensions", screen.set.len(), features.dim());

    if cfg.selection.run_boruta {
        let bf = DayMatrix::read_csv(&run.require(FEATURES_BORUTA, "transform")?)?;
        let counts = read_counts(run)?;
        let new_cases = counts.new_case_series()?;
        let all: Vec<usize> = (0..bf.dim()).collect();
        let meta = format!("{:?} features, raw new cases as target", cfg.selection.boruta_features);
        for &lead in &cfg.predict.leads {
            let frame = make_frame(&bf, &all, &new_cases, lead)?;
            let rows = training_rows(&frame, &cfg);
            let x = frame.x.select(Axis(0), &rows);
            let y: Vec<f64> = rows.iter().map(|&i| frame.y[i]).collect();
            let (set, result) = select_boruta(
                x.view(),
                &y,
                &cfg.selection.boruta,
                cfg.selection.keep_tentative,
                &format!("{meta}, lead {lead}"),
            )?;
            log::info!(
                "Boruta lead {lead}: {} confirmed, {} tentative after {} runs",
                result.with_decision(sigdim::boruta::Decision::Confirmed).len(),
                result.with_decision(sigdim::boruta::Decision::Tentative).len(),
                result.runs_completed
            );
            let dec = format!("selection/boruta_lead{lead}.csv");
            let hist = format!("selection/boruta_lead{lead}_z.csv");
            result.write_csv(&run.path(&dec), &run.path(&hist))?;
            let combined = combine(&screen.set, &set, cfg.selection.combine)?;
            let bp = sd_path(SetKind::Boruta, lead);
            let cp = sd_path(SetKind::Combined, lead);
            write(&run.path(&bp), set.to_json())?;
            write(&run.path(&cp), combined.to_json())?;
            for o in [dec, hist, bp, cp] {
                g.output(o);
            }
        }
    }
    run.finish(g, None)
}

fn read_set(run: &Run, kind: SetKind, lead: usize) -> CliResult<SdSet> {
    let p = run.require(&sd_path(kind, lead), "select")?;
    let body = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
    Ok(SdSet::from_json(&body)?)
}

#[derive(Debug, Clone, serde::Serialize)]
struct SummaryRow {
    lead: usize,
    set: &'static str,
    n_dims: usize,
    n_trees: Option<usize>,
    max_depth: Option<String>,
    r2: Option<f64>,
    r2_smoothed: Option<f64>,
    note: Option<String>,
}

pub fn train(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg.clone();
    let mut g = run.begin(
        "train",
        json!({ "predict": cfg.predict, "transform": cfg.transform, "seed": cfg.seed }),
    );
    let sets: Vec<(usize, SetKind, SdSet)> = cfg
        .predict
        .leads
        .iter()
        .flat_map(|&lead| cfg.predict.sets.iter().map(move |&k| (lead, k)))
        .map(|(lead, k)| read_set(run, k, lead).map(|s| (lead, k, s)))
        .collect::<CliResult<_>>()?;
    let reg = DayMatrix::read_csv(&run.require(FEATURES_REGRESSION, "transform")?)?;
    let counts = read_counts(run)?;
    let target = cfg.transform.target.apply(&counts)?;
    let grid = cfg.predict.grid();
    let base = cfg.predict.forest_base();
    let mut rows = Vec::new();
    for (lead, kind, set) in sets {
        let stem = format!("eval/lead{lead}_{}", kind.name());
        if set.is_empty() {
            log::warn!("lead {lead}, {} set: no dimensions selected; no model trained", kind.name());
            rows.push(SummaryRow {
                lead,
                set: kind.name(),
                n_dims: 0,
                n_trees: None,
                max_depth: None,
                r2: None,
                r2_smoothed: None,
                note: Some("no dimensions selected".into()),
            });
            continue;
        }
        let frame = make_frame(&reg, &set.dims, &target, lead)?;
        let (tr, te) = split_by_date(&frame, cfg.predict.train_end)?;
        let reports = sweep(&tr, &te, cfg.predict.train_end, &grid, &base, cfg.seed)?;
        let best: &EvalReport = reports.iter().find(|r| r.best).expect("one best report");
        write(&run.path(&format!("{stem}_sweep.csv")), sweep_csv(&reports))?;
        best.write(&run.path(&format!("{stem}.json")), &run.path(&format!("{stem}.csv")))?;
        let model = sigdim::forest::fit(tr.x.view(), &tr.y, &best.params)?;
        let mpath = format!("model/forest_lead{lead}_{}.slrf", kind.name());
        model.save(&run.path(&mpath))?;
        log::info!(
            "lead {lead}, {} set ({} dims): best R2 {:.4} (n_trees {}, depth {:?})",
            kind.name(),
            set.len(),
            best.r2,
            best.params.n_trees,
            best.params.max_depth
        );
        rows.push(SummaryRow {
            lead,
            set: kind.name(),
            n_dims: set.len(),
            n_trees: Some(best.params.n_trees),
            max_depth: Some(best.params.max_depth.map_or("unlimited".into(), |d| d.to_string())),
            r2: Some(best.r2),
            r2_smoothed: best.r2_smoothed,
            note: None,
        });
        for o in [format!("{stem}_sweep.csv"), format!("{stem}.json"), format!("{stem}.csv"), mpath] {
            g.output(o);
        }
    }
    let mut csv = String::from("lead,set,n_dims,n_trees,max_depth,r2,r2_smoothed,note\n");
    let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.lead,
            r.set,
            r.n_dims,
            r.n_trees.map(|n| n.to_string()).unwrap_or_default(),
            r.max_depth.clone().unwrap_or_default(),
            opt(&r.r2),
            opt(&r.r2_smoothed),
            r.note.clone().unwrap_or_default()
        );
    }
    write(&run.path(EVAL_SUMMARY), csv)?;
    g.output(EVAL_SUMMARY);
    run.finish(g, None)
}

pub fn explain(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg.clone();
    let lead = cfg.predict.leads[0];
    let mut g = run.begin("explain", json!({ "explain": cfg.explain, "lead": lead }));
    if cfg.uses_day_matrix() {
        return run.finish(g, Some(SKIP_TEXT.into()));
    }
    let model = EmbeddingModel::load(&run.require(MODEL, "embed")?)?;
    let tokens = read_tokens(&run.require(TOKENS, "preprocess")?)?;
    let docs = load_documents(&run.require(DOCUMENTS, "ingest")?, DocFormat::Jsonl, &wide_window(&cfg), true)?;
    let set = read_set(run, cfg.explain.set, lead)?;
    let texts: HashMap<String, String> = docs.into_iter().map(|d| (d.id, d.text)).collect();
    let dv = DocVectors::build(&model, &tokens);
    let report: ThemeReport = if set.is_empty() {
        ThemeReport {
            k: cfg.explain.k,
            top_m: cfg.explain.top_m,
            ranking: cfg.explain.ranking,
            rows: Vec::new(),
        }
    } else {
        theme_report(&set, &dv, &model, cfg.explain.k, cfg.explain.top_m, cfg.explain.ranking)?
    };
    write(&run.path(THEMES_MD), report.to_markdown(&texts, cfg.explain.samples))?;
    write(&run.path(THEMES_JSON), report.to_json())?;
    g.output(THEMES_MD);
    g.output(THEMES_JSON);
    run.finish(g, None)
}

pub fn report(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg.clone();
    let mut g = run.begin("report", json!({}));
    let ccf = read_set(run, SetKind::Ccf, 0)?;
    let mut md = String::from("# Significant dimensions report\n\n");
    if let Ok(q) = std::fs::read_to_string(run.path(QUALITY)) {
        let _ = writeln!(md, "## Data\n\n```\n{}```\n", q);
    }
    if let Ok(a) = std::fs::read_to_string(run.path(ADF)) {
        let _ = writeln!(md, "## Stationarity of the CCF target (ADF)\n\n```json\n{a}\n```\n");
    }
    let _ = writeln!(md, "## Selected dimensions\n");
    let _ = writeln!(md, "CCF ({}): {} dimensions: {:?}\n", ccf.transform_meta, ccf.len(), ccf.dims);
    if !ccf.is_empty() {
        let _ = writeln!(md, "| Dimension | Leading lags (days) |\n|---|---|");
        for (d, p) in &ccf.provenance {
            let lags: Vec<String> = p.ccf_lags.iter().flatten().map(|l| l.to_string()).collect();
            let _ = writeln!(md, "| {d} | {} |", lags.join(", "));
        }
        md.push('\n');
    }
    if cfg.selection.run_boruta {
        for &lead in &cfg.predict.leads {
            for kind in [SetKind::Boruta, SetKind::Combined] {
                if let Ok(s) = read_set(run, kind, lead) {
                    let _ = writeln!(md, "{} (lead {lead}): {} dimensions: {:?}\n", kind.name(), s.len(), s.dims);
                }
            }
        }
    }
    md.push_str(&format!("Per-dimension CCF tables: `{CCF_SUMMARY}` and `selection/ccf/`.\n\n"));
    let _ = writeln!(md, "## Forecast evaluation (holdout after {})\n", cfg.predict.train_end);
    match std::fs::read_to_string(run.path(EVAL_SUMMARY)) {
        Ok(body) => {
            let _ = writeln!(md, "| Lead | Set | Dims | Trees | Depth | R2 | R2 (3-day MA) | Note |\n|---|---|---|---|---|---|---|---|");
            for line in body.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                let r2 = |s: &str| s.parse::<f64>().map(|v| format!("{v:.4}")).unwrap_or_default();
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} | {} | {} |",
                    f[0],
                    f[1],
                    f[2],
                    f[3],
                    f[4],
                    r2(f[5]),
                    r2(f[6]),
                    f[7]
                );
            }
            md.push('\n');
        }
        Err(_) => md.push_str("Not trained yet.\n\n"),
    }
    match std::fs::read_to_string(run.path(THEMES_MD)) {
        Ok(t) => {
            let _ = writeln!(md, "## Themes\n\n{t}");
        }
        Err(_) => md.push_str("## Themes\n\nNo theme report (no text corpus or `explain` not run).\n"),
    }
    write(&run.path(REPORT), md)?;
    g.output(REPORT);
    run.finish(g, None)
}

pub fn run_stage(run: &mut Run, name: &str) -> CliResult<()> {
    match name {
        "ingest" => ingest(run),
        "preprocess" => preprocess(run),
        "embed" => embed(run),
        "transform" => transform(run),
        "select" => select(run),
        "train" => train(run),
        "explain" => explain(run),
        "report" => report(run),
        other => unreachable!("unknown stage {other}"),
    }
}

pub fn pipeline(run: &mut Run) -> CliResult<()> {
    for s in STAGES {
        run_stage(run, s)?;
    }
    Ok(())
}
