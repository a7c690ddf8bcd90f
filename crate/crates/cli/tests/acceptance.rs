//! Acceptance suite: one pass/fail line per criterion.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use chrono::NaiveDate;
use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use sigdim::boruta::{self, BorutaParams, BorutaResult, Decision};
use sigdim::embedding::{self, doc_vector, export_model_tsv, read_tsv_vectors, DayMatrix, EmbeddingModel, TrainParams};
use sigdim::forest::{self, ForestModel, ForestParams};
use sigdim::ingest::{load_counts, load_documents, DocFormat};
use sigdim::predict::r2;
use sigdim::series::{adf_test, ccf, difference, moving_average, rolling_variance, Series};
use sigdim::synth::{gen_cases, gen_corpus, gen_feature_matrix, write_outputs, SynthSpec};
use sigdim::text::TokenizedDocument;
use sigdim_cli::config::RunConfig;

type Verdict = (bool, String);
type Criterion = (&'static str, fn() -> Verdict);

fn day0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 8, 1).unwrap()
}

fn series(v: Vec<f64>) -> Series {
    Series::new(day0(), v).unwrap()
}

fn normals(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    (0..n).map(|_| sd * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn transform_oracles() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(4..400);
        let v = normals(&mut rng, n, 10.0);
        let s = series(v.clone());
        let d1: Vec<f64> = (1..n).map(|i| v[i] - v[i - 1]).collect();
        let d2: Vec<f64> = (2..n).map(|i| v[i] - 2.0 * v[i - 1] + v[i - 2]).collect();
        let rv: Vec<f64> = (2..n)
            .map(|i| {
                let w = &v[i - 2..=i];
                let m = w.iter().sum::<f64>() / 3.0;
                w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 2.0
            })
            .collect();
        let ma: Vec<f64> = (2..n).map(|i| (v[i - 2] + v[i - 1] + v[i]) / 3.0).collect();
        worst = worst
            .max(max_abs_diff(&difference(&s, 1).unwrap().values, &d1))
            .max(max_abs_diff(&difference(&s, 2).unwrap().values, &d2))
            .max(max_abs_diff(&rolling_variance(&s, 3).unwrap().values, &rv))
            .max(max_abs_diff(&moving_average(&s, 3).unwrap().values, &ma));
    }
    let secs = clock.elapsed().as_secs_f64();
    (
        worst <= 1e-10 && secs < 5.0,
        format!("max deviation {worst:.2e} over 1000 series, {secs:.2} s"),
    )
}

fn ccf_lag_recovery() -> Verdict {
    let mut rows = Vec::new();
    let mut pass = true;
    let mut worst = 0.0f64;
    for lag in [5usize, 15, 30] {
        let mut hits = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + lag as u64);
            let full = normals(&mut rng, 365 + lag, 1.0);
            let noise = normals(&mut rng, 365, (0.1f64).sqrt());
            let x = full[lag..].to_vec();
            let y: Vec<f64> = (0..365).map(|t| full[t] + noise[t]).collect();
            let r = ccf(&series(x.clone()), &series(y.clone()), 45).unwrap();
            hits += (r.peak().unwrap().0 == lag as i64) as usize;
            if seed < 5 {
                for (&k, c) in r.lags.iter().zip(&r.correlations) {
                    let m = 365 - k.unsigned_abs() as usize;
                    let b = if k >= 0 {
                        brute_pearson(&x[..m], &y[k as usize..])
                    } else {
                        brute_pearson(&x[(-k) as usize..], &y[..m])
                    };
                    worst = worst.max((c.unwrap() - b).abs());
                }
            }
        }
        pass &= hits >= 95;
        rows.push(format!("L={lag}: {hits}/100"));
    }
    pass &= worst <= 1e-10;
    (pass, format!("{}; brute-force deviation {worst:.2e}", rows.join(", ")))
}

fn adf_calibration() -> Verdict {
    let clock = Instant::now();
    let (mut wn, mut rw) = (0, 0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = normals(&mut rng, 365, 1.0);
        wn += (adf_test(&series(e.clone()), None).unwrap().p_value < 0.05) as usize;
        let walk: Vec<f64> = e
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        rw += (adf_test(&series(walk), None).unwrap().p_value > 0.10) as usize;
    }
    let secs = clock.elapsed().as_secs_f64();
    (
        wn >= 90 && rw >= 90 && secs < 30.0,
        format!("white noise rejects {wn}/100, random walk retains {rw}/100, {secs:.2} s"),
    )
}

fn forest_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Array2::from_shape_fn((120, 3), |_| StandardNormal.sample(&mut rng));
    let y: Vec<f64> = (0..120).map(|_| rng.random::<f64>() * 100.0).collect();
    let exact = ForestParams {
        n_trees: 3,
        bootstrap: false,
        max_depth: None,
        mtry: None,
        ..ForestParams::default()
    };
    let m = forest::fit(x.view(), &y, &exact).unwrap();
    let train_r2 = r2(&y, &m.predict(x.view()).unwrap()).unwrap();

    let mut wins = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((200, 2), |_| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = x.column(0).iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let m = forest::fit(x.view(), &y, &ForestParams { n_trees: 50, seed, ..Default::default() }).unwrap();
        let imp = m.mean_importance();
        wins += (imp[0] > imp[1]) as usize;
    }

    let p = ForestParams { n_trees: 40, seed: 99, ..Default::default() };
    let xs = x.mapv(f64::sin);
    let a = forest::fit(xs.view(), &y, &p).unwrap();
    let b = forest::fit(xs.view(), &y, &p).unwrap();
    let bitwise = a == b
        && a.predict(xs.view())
            .unwrap()
            .iter()
            .zip(b.predict(xs.view()).unwrap())
            .all(|(u, v)| u.to_bits() == v.to_bits());
    (
        train_r2 == 1.0 && wins >= 19 && bitwise,
        format!("interpolation R2 {train_r2}, step importance {wins}/20, bitwise refit {bitwise}"),
    )
}

fn linear_fixture(seed: u64) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((300, 21), |_| StandardNormal.sample(&mut rng));
    let eps = Normal::new(0.0, 0.1).unwrap();
    let y = x.column(0).iter().map(|v| 3.0 * v + eps.sample(&mut rng)).collect();
    (x, y)
}

/// Result cardinality, hit replay from the Z history and no hits after
/// rejection.
fn bookkeeping_holds(r: &BorutaResult, d: usize) -> bool {
    if r.decision.len() != d || r.hits.len() != d || r.z_history.len() != r.runs_completed {
        return false;
    }
    (0..d).all(|j| {
        let mut rejected = false;
        let mut replayed = 0u64;
        for (row, m) in r.z_history.iter().zip(&r.mzsa_history) {
            if row.len() != d {
                return false;
            }
            match row[j] {
                None => rejected = true,
                Some(_) if rejected => return false,
                Some(z) => replayed += (z > *m) as u64,
            }
        }
        replayed == r.hits[j] && r.hits[j] as usize <= r.runs_completed && (!rejected || r.decision[j] == Decision::Rejected)
    })
}

fn boruta_oracle() -> Verdict {
    let params = |seed| BorutaParams { seed, ..BorutaParams::default() };
    let (mut single, mut noise, mut dup) = (0, 0, 0);
    let mut invariants = true;
    let mut slowest = 0.0f64;
    for seed in 0..20u64 {
        let (x, y) = linear_fixture(seed);
        let clock = Instant::now();
        let r = boruta::run(x.view(), &y, &params(seed)).unwrap();
        slowest = slowest.max(clock.elapsed().as_secs_f64());
        invariants &= bookkeeping_holds(&r, 21);
        let rejected = (1..21).filter(|&j| r.decision[j] == Decision::Rejected).count();
        let confirmed = (1..21).filter(|&j| r.decision[j] == Decision::Confirmed).count();
        single += (r.decision[0] == Decision::Confirmed && rejected >= 18 && confirmed == 0) as usize;

        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let xn = Array2::from_shape_fn((300, 20), |_| StandardNormal.sample(&mut rng));
        let yn = normals(&mut rng, 300, 1.0);
        let r = boruta::run(xn.view(), &yn, &params(seed)).unwrap();
        invariants &= bookkeeping_holds(&r, 20);
        noise += r.with_decision(Decision::Confirmed).is_empty() as usize;

        let (mut xd, yd) = linear_fixture(500 + seed);
        let c0 = xd.column(0).to_owned();
        xd.column_mut(1).assign(&c0);
        let r = boruta::run(xd.view(), &yd, &params(seed)).unwrap();
        invariants &= bookkeeping_holds(&r, 21);
        dup += (r.decision[0] == Decision::Confirmed && r.decision[1] == Decision::Confirmed) as usize;
    }
    (
        single >= 18 && noise >= 19 && dup >= 18 && invariants && slowest < 180.0,
        format!(
            "single relevant {single}/20, pure noise {noise}/20, duplicate {dup}/20, bookkeeping {invariants}, slowest run {slowest:.1} s"
        ),
    )
}

fn two_cluster_corpus(seed: u64) -> Vec<TokenizedDocument> {
    let a: Vec<String> = (1..=5).map(|i| format!("a{i}")).collect();
    let b: Vec<String> = (1..=5).map(|i| format!("b{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2000)
        .map(|i| {
            let cluster = if i % 2 == 0 { &a } else { &b };
            let len = rng.random_range(4..=8);
            TokenizedDocument {
                id: i.to_string(),
                date: day0(),
                tokens: (0..len).map(|_| cluster.choose(&mut rng).unwrap().clone()).collect(),
            }
        })
        .collect()
}

fn small_params(seed: u64) -> TrainParams {
    TrainParams {
        dim: 20,
        min_count: 1,
        seed,
        ..TrainParams::default()
    }
}

fn embedding_sanity() -> Verdict {
    let mut separated = 0;
    for seed in 0..5u64 {
        let m = embedding::train(&two_cluster_corpus(100 + seed), &small_params(seed)).unwrap();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for i in 1..=5 {
            for j in 1..=5 {
                inter.push(m.similarity(&format!("a{i}"), &format!("b{j}")).unwrap());
                if i < j {
                    intra.push(m.similarity(&format!("a{i}"), &format!("a{j}")).unwrap());
                    intra.push(m.similarity(&format!("b{i}"), &format!("b{j}")).unwrap());
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        separated += (mean(&intra) > mean(&inter)) as usize;
    }
    let corpus = two_cluster_corpus(5);
    let a = embedding::train(&corpus, &small_params(42)).unwrap();
    let b = embedding::train(&corpus, &small_params(42)).unwrap();
    let reproducible = a == b;

    let identity = a.vocab.tokens().iter().all(|t| {
        let v: Vec<f64> = a.vector(t).unwrap().iter().map(|&x| x as f64).collect();
        doc_vector(&a, &[t.as_str()]).unwrap() == v
    });
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let permutation = corpus.iter().take(500).all(|d| {
        let mut shuffled = d.tokens.clone();
        shuffled.shuffle(&mut rng);
        doc_vector(&a, &shuffled) == doc_vector(&a, &d.tokens)
    });
    (
        separated >= 4 && reproducible && identity && permutation,
        format!(
            "separated {separated}/5, bit-reproducible {reproducible}, identity {identity}, permutation invariant {permutation}"
        ),
    )
}

fn sigdim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sigdim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn dims_of(v: &serde_json::Value, key: &str) -> BTreeSet<usize> {
    v[key].as_array().unwrap().iter().map(|d| d.as_u64().unwrap() as usize).collect()
}

/// Best holdout R2 for `lead` and `set` from `eval/summary.csv`.
fn summary_r2(run: &Path, lead: usize, set: &str) -> Option<f64> {
    let body = std::fs::read_to_string(run.join("eval/summary.csv")).ok()?;
    body.lines().skip(1).find_map(|l| {
        let f: Vec<&str> = l.split(',').collect();
        (f[0] == lead.to_string() && f[1] == set).then(|| f[5].parse().ok()).flatten()
    })
}

fn end_to_end() -> Verdict {
    let clock = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let (mut tp, mut fp, mut planted, mut noise) = (0usize, 0usize, 0usize, 0usize);
    let mut min_r2 = f64::INFINITY;
    let mut failures = Vec::new();
    for seed in 1..=20u64 {
        let dir = root.path().join(format!("s{seed}"));
        let data = dir.join("data");
        let run = dir.join("run");
        let s = seed.to_string();
        let out = sigdim(&["--seed", &s, "synth", "--out", data.to_str().unwrap()]);
        if !out.status.success() {
            failures.push(format!("synth seed {seed}"));
            continue;
        }
        let cfg = dir.join("run.toml");
        std::fs::write(
            &cfg,
            format!(
                "seed = {seed}\n[paths]\nday_matrix = {:?}\ncounts = {:?}\nrun_dir = {:?}\n[selection]\nrun_boruta = false\n[predict]\nleads = [15]\nsets = [\"ccf\"]\n",
                data.join("day_matrix.csv"),
                data.join("counts.csv"),
                run
            ),
        )
        .unwrap();
        let out = sigdim(&["--config", cfg.to_str().unwrap(), "pipeline"]);
        if !out.status.success() {
            failures.push(format!("pipeline seed {seed}: {}", String::from_utf8_lossy(&out.stderr)));
            continue;
        }
        let truth = dims_of(&read_json(&data.join("truth.json")), "signal_dims");
        let selected = dims_of(&read_json(&run.join("selection/sd_ccf.json")), "dims");
        let n_dims = read_json(&run.join("selection/sd_ccf.json"))["n_dims"].as_u64().unwrap() as usize;
        tp += selected.intersection(&truth).count();
        fp += selected.difference(&truth).count();
        planted += truth.len();
        noise += n_dims - truth.len();
        min_r2 = min_r2.min(summary_r2(&run, 15, "ccf").unwrap_or(f64::NEG_INFINITY));
    }
    let recall = tp as f64 / planted.max(1) as f64;
    let fp_rate = fp as f64 / noise.max(1) as f64;

    // One run along the text path with every stage, Boruta included.
    let dir = root.path().join("text");
    let data = dir.join("data");
    let run = dir.join("run");
    let mut text_ok = sigdim(&["--seed", "1", "synth", "--out", data.to_str().unwrap()]).status.success();
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "[paths]\ndocuments = {:?}\ncounts = {:?}\nrun_dir = {:?}\n",
            data.join("documents.jsonl"),
            data.join("counts.csv"),
            run
        ),
    )
    .unwrap();
    text_ok &= sigdim(&["--config", cfg.to_str().unwrap(), "pipeline"]).status.success();
    let text_sds = std::fs::read_to_string(run.join("selection/sd_ccf.json"))
        .map(|b| dims_of(&serde_json::from_str(&b).unwrap(), "dims").len())
        .unwrap_or(0);
    let text_r2 = summary_r2(&run, 15, "ccf").unwrap_or(f64::NEG_INFINITY);
    let report = std::fs::read_to_string(run.join("report/report.md")).unwrap_or_default();
    text_ok &= text_sds >= 1 && text_r2 >= 0.5 && report.contains("R2");

    let secs = clock.elapsed().as_secs_f64();
    (
        failures.is_empty() && recall >= 0.8 && fp_rate <= 0.10 && min_r2 >= 0.5 && text_ok && secs < 600.0,
        format!(
            "feature-matrix path over 20 seeds: recall {recall:.3}, false positives {fp_rate:.3}, min lead-15 R2 {min_r2:.3}; \
             text path: {text_sds} SDs, lead-15 R2 {text_r2:.3}, ok {text_ok}; {secs:.1} s{}",
            if failures.is_empty() { String::new() } else { format!("; failures: {failures:?}") }
        ),
    )
}

fn default_constants() -> Verdict {
    let cfg = RunConfig::default();
    let checks = [
        ("embedding dim 100", cfg.embedding.dim == 100 && TrainParams::default().dim == 100),
        ("context window 5", cfg.embedding.window == 5),
        ("rolling window 3", cfg.transform.rolling_window == 3),
        ("leads 15 and 30", cfg.predict.leads == [15, 30]),
        ("top-k 30", cfg.explain.k == 30),
        ("min shadows 5", cfg.selection.boruta.min_shadows == 5 && BorutaParams::default().min_shadows == 5),
        ("train end 2021-04-15", cfg.predict.train_end == NaiveDate::from_ymd_opt(2021, 4, 15).unwrap()),
    ];
    let bad: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    (bad.is_empty(), if bad.is_empty() { "7/7 defaults".into() } else { format!("wrong: {bad:?}") })
}

fn r2_fixture() -> Verdict {
    let half = r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap();
    let perfect = r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
    let mean = r2(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
    (
        half == 0.5 && perfect == 1.0 && mean == 0.0,
        format!("{half}, {perfect}, {mean}"),
    )
}

fn round_trips() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::default();
    let out = write_outputs(&spec, dir.path()).unwrap();
    let cases = gen_cases(&spec).unwrap();
    let features = gen_feature_matrix(&spec, &cases).unwrap();
    let docs = gen_corpus(&spec, &cases).unwrap();
    let window = spec.calendar();
    let docs_back = load_documents(&out.documents, DocFormat::Jsonl, &window, true).unwrap();
    let counts_back = load_counts(&out.counts, &window, false).unwrap();
    let matrix_back = DayMatrix::read_csv(&out.day_matrix).unwrap();
    let synth_ok = docs_back == docs && counts_back == cases && matrix_back == features.matrix;

    let model = embedding::train(&two_cluster_corpus(3), &small_params(3)).unwrap();
    let mp = dir.path().join("m.slem");
    model.save(&mp).unwrap();
    let model_ok = EmbeddingModel::load(&mp).unwrap() == model;
    let (vp, lp) = (dir.path().join("v.tsv"), dir.path().join("l.tsv"));
    export_model_tsv(&model, &vp, &lp).unwrap();
    let rows = read_tsv_vectors(&vp).unwrap();
    let labels = std::fs::read_to_string(&lp).unwrap();
    let mut tsv_dev = 0.0f64;
    for (row, token) in rows.iter().zip(labels.lines()) {
        for (a, b) in row.iter().zip(model.vector(token).unwrap()) {
            tsv_dev = tsv_dev.max((a - *b as f64).abs());
        }
    }
    let tsv_ok = rows.len() == model.vocab.len() && tsv_dev <= 1e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Array2::from_shape_fn((80, 3), |_| StandardNormal.sample(&mut rng));
    let y: Vec<f64> = x.column(0).iter().map(|v| v * 2.0).collect();
    let f = forest::fit(x.view(), &y, &ForestParams { n_trees: 10, ..Default::default() }).unwrap();
    let fp = dir.path().join("f.slrf");
    f.save(&fp).unwrap();
    let forest_ok = ForestModel::load(&fp).unwrap() == f;
    (
        synth_ok && model_ok && tsv_ok && forest_ok,
        format!(
            "synth files {synth_ok}, embedding binary {model_ok}, TSV {tsv_ok} (max deviation {tsv_dev:.1e}), forest binary {forest_ok}"
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("transform oracles", transform_oracles),
        ("CCF lag recovery", ccf_lag_recovery),
        ("ADF calibration", adf_calibration),
        ("forest correctness", forest_correctness),
        ("Boruta oracle", boruta_oracle),
        ("embedding sanity", embedding_sanity),
        ("end-to-end synthetic run", end_to_end),
        ("default constants", default_constants),
        ("R2 fixture", r2_fixture),
        ("round trips", round_trips),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let (pass, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {:>2} {} {name}: {detail} [{:.1} s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            clock.elapsed().as_secs_f64()
        );
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
