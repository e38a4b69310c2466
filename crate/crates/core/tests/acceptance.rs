//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails. Runs without network access.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use factcheck::corpus::{Claim, Dataset};
use factcheck::eval::{macro_metrics, ConfusionMatrix};
use factcheck::evidence::{filter_evidence, parse_provider_response, FilterPolicy, RawSearchResult};
use factcheck::inference::{parse_verdict, ParseStatus};
use factcheck::lora::demo::{run_demo, DemoConfig};
use factcheck::lora::gradcheck::{check_gradients, DEFAULT_STEP};
use factcheck::lora::{
    one_hot, train, Activation, DenseLayer, LoraAdapter, Loss, ModelLayer, ToyModel, TrainConfig,
};
use factcheck::pipeline::{manifest_without_timestamps, run_pipeline, PipelineConfig, RunOptions};
use factcheck::promptgen::verbalize_label;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed < Duration::from_secs(limit_s), || format!("took {elapsed:.2?}, limit {limit_s} s"))
}

fn claim(id: &str, date: Option<NaiveDate>) -> Claim {
    Claim {
        id: id.into(),
        text: "claim text".into(),
        label: Dataset::Rawfc.taxonomy().label_at(0).unwrap(),
        claim_date: date,
        speaker: None,
        dataset: Dataset::Rawfc,
        extra: Default::default(),
    }
}

// 1

fn golden_run() -> Outcome {
    let started = Instant::now();
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for ds in ["rawfc", "liar"] {
        let golden = fixtures().join("golden");
        let mut cfg = PipelineConfig::load(&golden.join(format!("{ds}.toml"))).map_err(|e| format!("{e:?}"))?;
        cfg.output_dir = scratch.path().join(ds);
        cfg.cache_dir = Some(scratch.path().join("cache"));
        let outcome = run_pipeline(&cfg, RunOptions::default()).map_err(|e| e.to_string())?;

        let expected_grid = std::fs::read(golden.join(format!("expected_{ds}_confusion.txt"))).map_err(|e| e.to_string())?;
        let grid = std::fs::read(cfg.output_dir.join("confusion.txt")).map_err(|e| e.to_string())?;
        ensure(grid == expected_grid, || format!("{ds}: confusion.txt differs from the stored fixture"))?;

        let expected: Value = serde_json::from_str(
            &std::fs::read_to_string(golden.join(format!("expected_{ds}_metrics.json"))).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let report = &outcome.report;
        ensure(json!(report.confusion.counts) == expected["confusion"], || format!("{ds}: confusion counts differ"))?;
        let m = &report.metrics;
        let close = |a: f64, b: &Value| (a - b.as_f64().unwrap()).abs() <= 1e-12;
        ensure(
            close(m.macro_precision, &expected["macro"]["precision"])
                && close(m.macro_recall, &expected["macro"]["recall"])
                && close(m.macro_f1, &expected["macro"]["f1"]),
            || format!("{ds}: macro metrics {:?}", (m.macro_precision, m.macro_recall, m.macro_f1)),
        )?;
        for c in &m.per_class {
            let e = &expected["per_class"][&c.label];
            ensure(
                close(c.precision, &e["precision"]) && close(c.recall, &e["recall"]) && close(c.f1, &e["f1"])
                    && json!(c.support) == e["support"],
                || format!("{ds}: class {} differs", c.label),
            )?;
        }
        ensure(json!(m.zero_division) == expected["zero_division"], || format!("{ds}: zero-division count"))?;
        let p = &report.parse_counts;
        ensure(json!({"exact": p.exact, "fuzzy": p.fuzzy, "unparsed": p.unparsed}) == expected["parse"], || {
            format!("{ds}: parse counts {p:?}")
        })?;
        let ev = serde_json::to_value(outcome.manifest.counts.evidence).unwrap();
        ensure(ev == expected["evidence"], || format!("{ds}: evidence counts {ev}"))?;
        ensure(outcome.manifest.counts.verdicts.total == 6, || format!("{ds}: verdict count"))?;
        notes.push(format!("{ds} F1 {:.4}", m.macro_f1));
    }
    within(started.elapsed(), 5)?;
    Ok(format!("12 claims, {} ({:.2?})", notes.join(", "), started.elapsed()))
}

// 2

const CLAIM_DAY: (i32, u32, u32) = (2020, 6, 15);

#[derive(Clone, Copy, PartialEq, Debug)]
enum Kind {
    Clean,
    Blocked,
    PostDated,
    SameDay,
    Undated,
}

/// 50 provider items, ten of each kind, interleaved. Dates are carried in
/// different places (metatags, the `date` field, a leading snippet date).
fn fifty_item_fixture() -> (String, Vec<Kind>) {
    let blocked = [
        "https://www.snopes.com/fact-check/a",
        "https://politifact.com/factchecks/b",
        "https://WWW.FactCheck.org/2020/c",
        "https://fullfact.org/d",
        "https://leadstories.com/e",
        "https://checkyourfact.com/f",
        "https://amp.snopes.com/g",
        "https://www.politifact.com/h",
        "https://www.factcheck.org/i",
        "https://archive.fullfact.org/j",
    ];
    let lookalikes = ["https://notsnopes.com/x", "https://snopes.com.mirror.example/y", "https://politifact.example.net/z"];
    let mut items = Vec::new();
    let mut kinds = Vec::new();
    for i in 0..50usize {
        let kind = [Kind::Clean, Kind::Blocked, Kind::PostDated, Kind::SameDay, Kind::Undated][i % 5];
        let n = i / 5;
        let item = match kind {
            Kind::Clean => {
                let link = if n < lookalikes.len() { lookalikes[n].to_string() } else { format!("https://site{n}.example.com/p") };
                json!({"title": format!("r{i}"), "link": link, "snippet": "before",
                       "pagemap": {"metatags": [{"article:published_time": format!("2020-05-{:02}T10:00:00Z", n + 1)}]}})
            }
            // one of these is also post-dated; blocking takes precedence
            Kind::Blocked => {
                let day = if n == 3 { "2021-01-01" } else { "2020-01-01" };
                json!({"title": format!("r{i}"), "link": blocked[n], "snippet": "checked", "date": day})
            }
            Kind::PostDated => {
                if n % 2 == 0 {
                    json!({"title": format!("r{i}"), "link": format!("https://later{n}.example.org/p"), "snippet": "after",
                           "pagemap": {"metatags": [{"og:published_time": format!("2020-06-{:02}", 16 + n)}]}})
                } else {
                    json!({"title": format!("r{i}"), "link": format!("https://later{n}.example.org/p"),
                           "snippet": format!("Jul {}, 2020 ... reported later", n + 1)})
                }
            }
            Kind::SameDay => json!({"title": format!("r{i}"), "link": format!("https://today{n}.example.net/p"),
                                     "snippet": "same day", "date": "2020-06-15"}),
            Kind::Undated => json!({"title": format!("r{i}"), "link": format!("https://nodate{n}.example.edu/p"),
                                     "snippet": "no date here"}),
        };
        items.push(item);
        kinds.push(kind);
    }
    (json!({"items": items}).to_string(), kinds)
}

fn random_results(rng: &mut ChaCha8Rng) -> Vec<RawSearchResult> {
    const DOMAINS: [&str; 6] = ["example.com", "snopes.com", "news.org", "politifact.com", "gov.example", "factcheck.org"];
    let n = rng.gen_range(0..20);
    (0..n)
        .map(|i| {
            let d = DOMAINS[rng.gen_range(0..DOMAINS.len())];
            RawSearchResult {
                title: format!("t{i}"),
                snippet: "s".into(),
                url: format!("https://{d}/{i}"),
                source_domain: d.into(),
                publish_date: rng
                    .gen_bool(0.7)
                    .then(|| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(rng.gen_range(0..400))),
                rank: i as u32 + 1,
            }
        })
        .collect()
}

fn is_subsequence(sub: &[RawSearchResult], all: &[RawSearchResult]) -> bool {
    let mut it = all.iter();
    sub.iter().all(|s| it.any(|a| a == s))
}

fn evidence_filter() -> Outcome {
    let (body, kinds) = fifty_item_fixture();
    let results = parse_provider_response(&body, 50).map_err(|e| e.to_string())?;
    ensure(results.len() == 50, || format!("parsed {} of 50 items", results.len()))?;
    let day = NaiveDate::from_ymd_opt(CLAIM_DAY.0, CLAIM_DAY.1, CLAIM_DAY.2).unwrap();
    let c = claim("fifty", Some(day));

    let strict = FilterPolicy { drop_undated: true, ..FilterPolicy::default() };
    let cases: [(&str, FilterPolicy, &[Kind]); 3] = [
        ("default", FilterPolicy::default(), &[Kind::Clean, Kind::SameDay, Kind::Undated]),
        ("drop-undated", strict, &[Kind::Clean, Kind::SameDay]),
        ("permissive", FilterPolicy::permissive(), &[Kind::Clean, Kind::Blocked, Kind::PostDated, Kind::SameDay, Kind::Undated]),
    ];
    for (name, policy, keep) in cases {
        let bundle = filter_evidence(&results, &c, &policy);
        let kept: Vec<u32> = bundle.snippets.iter().map(|r| r.rank).collect();
        let expected: Vec<u32> =
            kinds.iter().enumerate().filter(|(_, k)| keep.contains(k)).map(|(i, _)| i as u32 + 1).collect();
        ensure(kept == expected, || format!("{name}: kept ranks {kept:?}, expected {expected:?}"))?;
        let count = |k: Kind| if keep.contains(&k) { 0 } else { 10 };
        let s = bundle.stats;
        ensure(
            s.dropped_blocked == count(Kind::Blocked)
                && s.dropped_post_dated == count(Kind::PostDated)
                && s.dropped_undated == count(Kind::Undated)
                && s.retrieved == 50,
            || format!("{name}: stats {s:?}"),
        )?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..1000 {
        let rs = random_results(&mut rng);
        let date = rng.gen_bool(0.8).then(|| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(rng.gen_range(0..400)));
        let mut policy = if rng.gen_bool(0.5) { FilterPolicy::default() } else { FilterPolicy::permissive() };
        policy.enforce_date_ceiling = rng.gen_bool(0.7);
        policy.drop_undated = rng.gen_bool(0.3);
        let c = claim("r", date);
        let once = filter_evidence(&rs, &c, &policy);
        let twice = filter_evidence(&once.snippets, &c, &policy);
        ensure(twice.snippets == once.snippets, || format!("trial {trial}: not idempotent"))?;
        ensure(is_subsequence(&once.snippets, &rs), || format!("trial {trial}: order changed"))?;
    }
    Ok("50-item fixture matches under 3 policies; 1000 random fixtures idempotent and order-stable".into())
}

// 3

fn parser_round_trip() -> Outcome {
    let mut labels = 0;
    for ds in [Dataset::Rawfc, Dataset::Liar] {
        let tax = ds.taxonomy();
        for l in tax.labels() {
            let text = verbalize_label(l, tax).map_err(|e| e.to_string())?;
            let p = parse_verdict(text, tax);
            ensure(p.label == Some(l) && p.status == ParseStatus::Exact, || format!("{} did not round-trip", l.canonical_name()))?;
            labels += 1;
        }
    }
    ensure(labels == 9, || format!("{labels} labels"))?;

    use ParseStatus::{Exact, Fuzzy, Unparsed};
    let cases: [(Dataset, &str, Option<&str>, ParseStatus); 32] = [
        (Dataset::Liar, "mostly true", Some("mostly-true"), Exact),
        (Dataset::Liar, "Mostly True.", Some("mostly-true"), Exact),
        (Dataset::Liar, "the claim is mostly true", Some("mostly-true"), Fuzzy),
        (Dataset::Liar, "barely true but", Some("barely-true"), Fuzzy),
        (Dataset::Liar, "barely-true", Some("barely-true"), Exact),
        (Dataset::Liar, "it is true that it is barely true", Some("barely-true"), Fuzzy),
        (Dataset::Liar, "half true", Some("half-true"), Exact),
        (Dataset::Liar, "HALF-TRUE!!!", Some("half-true"), Exact),
        (Dataset::Liar, "half", Some("half-true"), Exact),
        (Dataset::Liar, "pants on fire", Some("pants-fire"), Exact),
        (Dataset::Liar, "Pants-on-fire", Some("pants-fire"), Exact),
        (Dataset::Liar, "liar, pants on fire!", Some("pants-fire"), Fuzzy),
        (Dataset::Liar, "false", Some("false"), Exact),
        (Dataset::Liar, "untrue", Some("false"), Exact),
        (Dataset::Liar, "this is false, not true", Some("false"), Fuzzy),
        (Dataset::Liar, "true", Some("true"), Exact),
        (Dataset::Liar, "not true", Some("true"), Fuzzy),
        (Dataset::Liar, "true or mostly true", Some("mostly-true"), Fuzzy),
        (Dataset::Liar, "mostly true and barely true", Some("mostly-true"), Fuzzy),
        (Dataset::Liar, "barely true and mostly true", Some("barely-true"), Fuzzy),
        (Dataset::Liar, "truest", None, Unparsed),
        (Dataset::Liar, "", None, Unparsed),
        (Dataset::Liar, "I cannot determine this", None, Unparsed),
        (Dataset::Rawfc, "untrue", Some("false"), Exact),
        (Dataset::Rawfc, "Untrue.", Some("false"), Exact),
        (Dataset::Rawfc, "half-true", Some("half-true"), Exact),
        (Dataset::Rawfc, "mostly true", Some("true"), Fuzzy),
        (Dataset::Rawfc, "false or half true", Some("half-true"), Fuzzy),
        (Dataset::Rawfc, "TRUE", Some("true"), Exact),
        (Dataset::Rawfc, "The answer: false.", Some("false"), Fuzzy),
        (Dataset::Rawfc, "true, false", Some("false"), Fuzzy),
        (Dataset::Rawfc, "half truths abound", Some("half-true"), Fuzzy),
    ];
    for (ds, text, label, status) in cases {
        let p = parse_verdict(text, ds.taxonomy());
        let got = p.label.map(|l| l.canonical_name());
        ensure(got == label && p.status == status, || format!("{text:?} on {}: got {got:?}/{:?}", ds.name(), p.status))?;
    }
    Ok(format!("9 labels round-trip exactly; {} adversarial cases match", cases.len()))
}

// 4

fn brute_force(counts: &[Vec<u64>]) -> (f64, f64, f64) {
    let n = counts.len();
    let mut pairs = Vec::new();
    for (g, row) in counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((g, p), c as usize));
        }
    }
    let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
        for &(g, p) in &pairs {
            match (g == k, p == k) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
                _ => {}
            }
        }
        let prec = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let rec = if tp + fnn == 0 { 0.0 } else { tp as f64 / (tp + fnn) as f64 };
        let f1 = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
        ps += prec;
        rs += rec;
        fs += f1;
    }
    (ps / n as f64, rs / n as f64, fs / n as f64)
}

fn metrics_oracle() -> Outcome {
    let cm = |counts: Vec<Vec<u64>>| {
        let labels = (0..counts.len()).map(|i| format!("c{i}")).collect();
        ConfusionMatrix::from_counts(labels, counts).map_err(|e| e.to_string())
    };
    let worked = macro_metrics(&cm(vec![vec![1, 1, 0], vec![0, 2, 0]])?);
    ensure((worked.macro_f1 - 11.0 / 15.0).abs() <= 1e-12, || format!("worked example F1 {}", worked.macro_f1))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let n = rng.gen_range(1..=7);
        let sparse = rng.gen_bool(0.3);
        let counts: Vec<Vec<u64>> = (0..n)
            .map(|_| (0..=n).map(|_| if sparse && rng.gen_bool(0.6) { 0 } else { rng.gen_range(0..25) }).collect())
            .collect();
        let m = macro_metrics(&cm(counts.clone())?);
        let (p, r, f) = brute_force(&counts);
        let err = (m.macro_precision - p).abs().max((m.macro_recall - r).abs()).max((m.macro_f1 - f).abs());
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("trial {trial}: |diff| {err:e} on {counts:?}"))?;
    }
    Ok(format!("worked example F1 = {:.6} (11/15); 1000 random matrices up to 7x8, max |diff| {worst:.1e}", worked.macro_f1))
}

// 5

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-0.8..0.8))
}

fn random_model(rng: &mut ChaCha8Rng, depth: usize, relu: bool) -> ToyModel {
    let mut dims = vec![rng.gen_range(2..7)];
    for _ in 0..depth {
        dims.push(rng.gen_range(2..7));
    }
    let layers = (0..depth)
        .map(|i| {
            let (d_in, d_out) = (dims[i], dims[i + 1]);
            let dense = DenseLayer::random(d_in, d_out, rng.gen_bool(0.7), rng.gen_bool(0.6), rng);
            let rank = rng.gen_range(1..=d_in.min(d_out));
            let adapter = rng.gen_bool(0.85).then(|| {
                let alpha = rng.gen_range(0.5..4.0);
                let dropout = if rng.gen_bool(0.5) { rng.gen_range(0.05..0.4) } else { 0.0 };
                LoraAdapter::from_parts(random_matrix(rank, d_in, rng), random_matrix(d_out, rank, rng), alpha, dropout).unwrap()
            });
            let activation = if i + 1 == depth {
                Activation::Identity
            } else if relu {
                Activation::Relu
            } else {
                Activation::Tanh
            };
            ModelLayer { dense, adapter, activation }
        })
        .collect();
    ToyModel::new(layers).unwrap()
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut configs, mut entries, mut worst) = (0, 0, 0.0f64);
    for i in 0..8 {
        let model = random_model(&mut rng, 1 + i % 3, i == 5);
        if model.trainable_params().is_empty() {
            continue;
        }
        let loss = if i % 2 == 0 { Loss::Squared } else { Loss::CrossEntropy };
        let batch = rng.gen_range(1..5);
        let xs: Vec<DVector<f64>> = (0..batch).map(|_| DVector::from_fn(model.d_in(), |_, _| rng.gen_range(-1.0..1.0))).collect();
        let ys: Vec<DVector<f64>> = (0..batch).map(|_| one_hot(rng.gen_range(0..model.d_out()), model.d_out())).collect();
        let masks: Vec<_> = xs.iter().map(|_| model.sample_masks(&mut rng)).collect();
        let report = check_gradients(&model, &xs, &ys, Some(&masks), loss, DEFAULT_STEP).map_err(|e| e.to_string())?;
        for t in &report.tensors {
            ensure(t.max_relative_error <= 1e-4, || format!("config {i} {}: rel err {:e}", t.param, t.max_relative_error))?;
        }
        configs += 1;
        entries += report.entries();
        worst = worst.max(report.max_relative_error());
    }
    ensure(configs >= 5, || format!("only {configs} configurations"))?;
    within(started.elapsed(), 10)?;
    Ok(format!("{configs} configurations, {entries} entries, max relative error {worst:.2e} (h = {DEFAULT_STEP:e})"))
}

// 6

fn lora_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    // B = 0 at init: adapted forward equals the bare forward bit for bit
    let d1 = DenseLayer::random(6, 5, true, true, &mut rng);
    let d2 = DenseLayer::random(5, 3, true, true, &mut rng);
    let bare = ToyModel::new(vec![
        ModelLayer { dense: d1.clone(), adapter: None, activation: Activation::Tanh },
        ModelLayer { dense: d2.clone(), adapter: None, activation: Activation::Identity },
    ])
    .unwrap();
    let adapted = ToyModel::new(vec![
        ModelLayer { dense: d1, adapter: Some(LoraAdapter::init(6, 5, 2, None, 0.2, &mut rng).unwrap()), activation: Activation::Tanh },
        ModelLayer { dense: d2, adapter: Some(LoraAdapter::init(5, 3, 2, Some(4.0), 0.2, &mut rng).unwrap()), activation: Activation::Identity },
    ])
    .unwrap();
    for _ in 0..100 {
        let x = DVector::from_fn(6, |_, _| rng.gen_range(-2.0..2.0));
        let masks = adapted.sample_masks(&mut rng);
        let a = bare.predict(&x).unwrap();
        let b = adapted.predict(&x).unwrap();
        let c = adapted.forward_masked(&x, Some(&masks)).unwrap();
        let bits = |v: &DVector<f64>| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        ensure(bits(&a) == bits(&b) && bits(&a) == bits(&c), || "zero-B forward is not the identity".into())?;
    }

    // trained adapters: merge equivalence and rank of the update
    let data: Vec<_> = (0..40)
        .map(|_| {
            let x = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let y = one_hot(usize::from(x[0] + x[1] > 0.0) + usize::from(x[2] > 0.5), 3);
            (x, y)
        })
        .collect();
    let mut model = adapted.clone();
    let cfg = TrainConfig { epochs: 4, batch_size: 8, lr0: 5e-2, seed: 6, ..TrainConfig::default() };
    train(&mut model, &data, &cfg).map_err(|e| e.to_string())?;

    let same_bits = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    for (now, then) in model.layers.iter().zip(&adapted.layers) {
        ensure(same_bits(&now.dense.weight, &then.dense.weight), || "frozen weight changed".into())?;
        let bias_same = match (&now.dense.bias, &then.dense.bias) {
            (Some(a), Some(b)) => a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()),
            (None, None) => true,
            _ => false,
        };
        ensure(bias_same, || "frozen bias changed".into())?;
        ensure(now.adapter.as_ref().unwrap().b.amax() > 0.0, || "adapter did not train".into())?;
    }

    let merged = model.merged().map_err(|e| e.to_string())?;
    let mut max_diff: f64 = 0.0;
    for _ in 0..100 {
        let x = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        max_diff = max_diff.max((model.predict(&x).unwrap() - merged.predict(&x).unwrap()).amax());
    }
    ensure(max_diff <= 1e-6, || format!("merge differs by {max_diff:e}"))?;

    let mut ranks = Vec::new();
    for (m, base) in merged.layers.iter().zip(&model.layers) {
        let r = base.adapter.as_ref().unwrap().rank;
        let update = &m.dense.weight - &base.dense.weight;
        let sv = update.clone().svd(false, false).singular_values;
        let tol = sv.max() * 1e-9;
        let numeric_rank = sv.iter().filter(|&&s| s > tol).count();
        ensure(numeric_rank <= r, || format!("update rank {numeric_rank} exceeds r = {r}"))?;
        ranks.push(format!("{numeric_rank}<={r}"));
    }

    // parameter accounting for one 8x8 layer at r = 2
    let layer = ModelLayer {
        dense: DenseLayer::random(8, 8, false, true, &mut rng),
        adapter: Some(LoraAdapter::init(8, 8, 2, None, 0.0, &mut rng).unwrap()),
        activation: Activation::Identity,
    };
    let counts = ToyModel::new(vec![layer]).unwrap().param_count();
    ensure(counts.lora == 32 && counts.weights == 64 && counts.base() == 64, || format!("{counts:?}"))?;

    Ok(format!(
        "zero-B exact over 100 inputs; merge max diff {max_diff:.1e}; update ranks [{}]; frozen bits kept; 8x8 r=2 -> {} trainable vs {} base",
        ranks.join(", "),
        counts.lora,
        counts.weights
    ))
}

// 7

fn demo_training() -> Outcome {
    let started = Instant::now();
    let cfg = DemoConfig::default();
    ensure(
        cfg.samples == 200 && cfg.features == 8 && cfg.epochs == 3 && cfg.batch_size == 32 && cfg.lr == 1e-4 && cfg.dropout_p == 0.05,
        || format!("demo defaults drifted: {cfg:?}"),
    )?;
    let a = run_demo(&cfg).map_err(|e| e.to_string())?;
    let b = run_demo(&cfg).map_err(|e| e.to_string())?;
    let (first, last) = (a.log.first_epoch(), a.log.final_epoch());
    ensure(last.eval_loss < first.eval_loss, || format!("eval loss {} -> {}", first.eval_loss, last.eval_loss))?;
    ensure(last.train_loss < first.train_loss, || format!("train loss {} -> {}", first.train_loss, last.train_loss))?;
    let log_a = serde_json::to_string(&a.log).unwrap();
    let log_b = serde_json::to_string(&b.log).unwrap();
    ensure(log_a == log_b, || "logs differ between identical runs".into())?;
    within(started.elapsed(), 30)?;
    Ok(format!(
        "loss {:.6} -> {:.6} (train {:.6} -> {:.6}); logs bit-identical",
        first.eval_loss, last.eval_loss, first.train_loss, last.train_loss
    ))
}

// 8

const RAWFC_ROWS: [(&str, &str); 13] = [
    ("SVM", "0.3233  0.3251  0.3171"),
    ("CNN", "0.3880  0.3850  0.3859"),
    ("RNN", "0.4135  0.4209  0.4039"),
    ("DeClarE", "0.4339  0.4352  0.4218"),
    ("dEFEND", "0.4493  0.4326  0.4407"),
    ("sentHAN", "0.4566  0.4554  0.4425"),
    ("SBERT-FC", "0.5106  0.4592  0.4551"),
    ("GenFE", "0.4429  0.4474  0.4443"),
    ("GenFE-MT", "0.4564  0.4527  0.4508"),
    ("CofCED", "0.5299  0.5099  0.5107"),
    ("LLaMA (w/o tuning)", "0.3350  0.3255  0.2643"),
    ("FactLLaMA (Instruct-tuning w/o external knowledge)", "0.5376  0.5400  0.5376"),
    ("FactLLaMA (Instruct-tuning with external knowledge)", "0.5611  0.5550  0.5565"),
];

const LIAR_ROWS: [(&str, &str); 13] = [
    ("SVM", "0.1578  0.1592  0.1534"),
    ("CNN", "0.2258  0.2239  0.2136"),
    ("RNN", "0.2436  0.2120  0.2079"),
    ("DeClarE", "0.2286  0.2055  0.1843"),
    ("dEFEND", "0.2309  0.1856  0.1751"),
    ("sentHAN", "0.2264  0.1996  0.1846"),
    ("SBERT-FC", "0.2409  0.2207  0.2219"),
    ("GenFE", "0.2801  0.2616  0.2649"),
    ("GenFE-MT", "0.1855  0.1990  0.1515"),
    ("CofCED", "0.2948  0.2955  0.2893"),
    ("LLaMA (w/o tuning)", "0.1587  0.2069  0.1224"),
    ("FactLLaMA (Instruct-tuning w/o external knowledge)", "0.3232  0.3157  0.2998"),
    ("FactLLaMA (Instruct-tuning with external knowledge)", "0.3246  0.3205  0.3044"),
];

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_factcheck")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn reference_rows() -> Outcome {
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (ds, rows, caption) in [("rawfc", &RAWFC_ROWS, "RAWFC"), ("liar", &LIAR_ROWS, "LIAR")] {
        let dir = scratch.path().join(ds);
        let golden = fixtures().join("golden");
        cli(&["run", "--config", p(&golden.join(format!("{ds}.toml"))), "--output-dir", p(&dir), "--cache-dir", p(&scratch.path().join("cache"))])?;
        let shown = cli(&[
            "evaluate", "--verdicts", p(&dir.join("verdicts.jsonl")), "--golds", p(&dir.join("normalized.jsonl")),
            "--taxonomy", ds, "--out", p(&dir.join("eval.json")), "--with-reference",
        ])?;
        ensure(shown.lines().any(|l| l.contains(caption)), || format!("{ds}: no caption"))?;
        for (method, numbers) in rows.iter() {
            let found = shown.lines().any(|l| {
                let l = l.trim_end();
                l.starts_with(method) && l.ends_with(numbers) && l[method.len()..l.len() - numbers.len()].trim().is_empty()
            });
            ensure(found, || format!("{ds}: row `{method}  {numbers}` missing"))?;
        }
        let plain = cli(&[
            "evaluate", "--verdicts", p(&dir.join("verdicts.jsonl")), "--golds", p(&dir.join("normalized.jsonl")),
            "--taxonomy", ds, "--out", p(&dir.join("eval.json")),
        ])?;
        ensure(!plain.contains("FactLLaMA"), || format!("{ds}: reference rows printed without the flag"))?;
    }
    Ok("26 rows verbatim, including 0.5611/0.5550/0.5565 and 0.3246/0.3205/0.3044".into())
}

// 9

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.is_file() && path.file_name().unwrap() != "manifest.json" {
            files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).map_err(|e| e.to_string())?);
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = fixtures().join("golden/rawfc.toml");
    let cache = scratch.path().join("cache");
    let out = scratch.path().join("out");
    let base = ["run", "--config", p(&config), "--cache-dir", p(&cache)];
    cli(&[&base[..], &["--output-dir", p(&scratch.path().join("warmup"))]].concat())?;

    let mut runs = Vec::new();
    for _ in 0..2 {
        cli(&[&base[..], &["--output-dir", p(&out), "--offline", "--force"]].concat())?;
        let manifest: Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        runs.push((snapshot(&out)?, manifest));
        std::thread::sleep(Duration::from_millis(1100));
    }
    let (files_a, manifest_a) = &runs[0];
    let (files_b, manifest_b) = &runs[1];
    ensure(files_a.len() >= 7, || format!("only {} output files", files_a.len()))?;
    ensure(files_a == files_b, || {
        let differing: Vec<_> = files_a.keys().filter(|k| files_a.get(*k) != files_b.get(*k)).collect();
        format!("stage outputs differ: {differing:?}")
    })?;
    let strip = |m: &Value| {
        let mut m = m.clone();
        m.as_object_mut().unwrap().remove("timestamps");
        m
    };
    ensure(strip(manifest_a) == strip(manifest_b), || "manifests differ outside timestamps".into())?;
    ensure(manifest_a["timestamps"] != manifest_b["timestamps"], || "timestamps unexpectedly equal".into())?;

    // the library helper agrees with the ad-hoc strip
    let mut cfg = PipelineConfig::load(&config).map_err(|e| format!("{e:?}"))?;
    cfg.output_dir = out.clone();
    cfg.cache_dir = Some(cache);
    let reused = run_pipeline(&cfg, RunOptions::default()).map_err(|e| e.to_string())?;
    ensure(reused.manifest.stages.iter().all(|s| s.reused), || "unchanged inputs were re-executed".into())?;
    ensure(snapshot(&out)? == *files_a, || "reuse changed outputs".into())?;
    let helper = manifest_without_timestamps(&reused.manifest);
    ensure(helper.get("timestamps").is_none() && helper["counts"] == manifest_a["counts"], || "manifest helper".into())?;
    Ok(format!("{} stage files byte-identical across forced reruns; manifests differ only in timestamps", files_a.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "golden end-to-end run", golden_run),
        (2, "evidence filter", evidence_filter),
        (3, "verdict parser round trip", parser_round_trip),
        (4, "metrics oracle", metrics_oracle),
        (5, "adapter gradient check", gradient_check),
        (6, "adapter identities", lora_identities),
        (7, "demo training", demo_training),
        (8, "reference table fidelity", reference_rows),
        (9, "run determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS  {id}  {name}: {detail} [{:.2?}]", started.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {id}  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
