use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use numevent::formats::{write_jsonl, EventRecord};
use numevent::hawkes::{self, HawkesParams};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn numevent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_numevent"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const EVENT: &str = r#"{"t":0,"type":0,"actor":"opec","action":"cut","object":"oil","direction":"down"}"#;

fn sample_line(id: usize, month: &str, gold: &[&str]) -> String {
    format!(
        r#"{{"id":{id},"window_end":0,"month":"{month}","window":[1.0],"gold":[{}]}}"#,
        gold.join(",")
    )
}

fn with_sample(event: &str, id: usize) -> String {
    format!("{},\"sample_id\":{id}}}", &event[..event.len() - 1])
}

#[test]
fn extract_on_fixture_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ex");
    let o = numevent(&[
        "extract",
        "--corpus",
        s(&fixture("corpus.jsonl")),
        "--vocab",
        s(&fixture("vocab.json")),
        "--rules",
        s(&fixture("rules.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let events = fs::read_to_string(out.join("events.jsonl")).unwrap();
    assert_eq!(events.lines().count(), 6);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("rounds.json")).unwrap()).unwrap();
    assert_eq!(report["fixed_point"], true);
    assert_eq!(report["final_version"], 2);
    assert!(fs::read_to_string(out.join("vocab.json")).unwrap().contains("gasoline"));
}

#[test]
fn extract_missing_corpus_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = numevent(&[
        "extract",
        "--corpus",
        s(&dir.path().join("nope.jsonl")),
        "--vocab",
        s(&fixture("vocab.json")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn extract_unknown_backend_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = numevent(&[
        "extract",
        "--corpus",
        s(&fixture("corpus.jsonl")),
        "--vocab",
        s(&fixture("vocab.json")),
        "--backend",
        "oracle-9000",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("oracle-9000"));
}

#[test]
fn malformed_vocabulary_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("v.json");
    fs::write(&bad, r#"{"actor":[""],"action":[],"object":[],"direction":[],"version":1}"#).unwrap();
    assert_eq!(numevent(&["vocab-validate", "--vocab", s(&bad)]).status.code(), Some(1));
    let ok = numevent(&["vocab-validate", "--vocab", s(&fixture("vocab.json"))]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("version 1"));
}

fn write_arrivals(path: &Path, params: &HawkesParams, horizon: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = hawkes::simulate(params, horizon, &mut rng).unwrap();
    let records: Vec<EventRecord> = seq.events().iter().map(EventRecord::from).collect();
    fs::write(path, write_jsonl(&records)).unwrap();
}

#[test]
fn fit_hawkes_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("ev.jsonl");
    let truth = HawkesParams::new(vec![0.5], vec![vec![0.4]], 1.0).unwrap();
    write_arrivals(&events, &truth, 20_000.0, 3);
    let out = dir.path().join("params.json");
    let o = numevent(&[
        "fit-hawkes",
        "--events",
        s(&events),
        "--k",
        "1",
        "--horizon",
        "20000",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("log-likelihood "));
    let fit = HawkesParams::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!((fit.mu()[0] - 0.5).abs() / 0.5 < 0.1, "{fit:?}");
    assert!((fit.alpha(0, 0) - 0.4).abs() / 0.4 < 0.1, "{fit:?}");
    assert!((fit.beta() - 1.0).abs() < 0.1, "{fit:?}");
}

#[test]
fn fit_hawkes_rejects_type_out_of_range() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("ev.jsonl");
    fs::write(&events, "{\"t\":1.0,\"type\":0}\n{\"t\":2.0,\"type\":2}\n").unwrap();
    let o = numevent(&["fit-hawkes", "--events", s(&events), "--k", "2", "--out", s(&dir.path().join("p.json"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fit_ar_needs_twenty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("s.csv");
    let rows: String = (0..10).map(|i| format!("{i},{}\n", i * i)).collect();
    fs::write(&series, format!("t,y\n{rows}")).unwrap();
    let o = numevent(&["fit-ar", "--series", s(&series), "--out", s(&dir.path().join("ar.json"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn collinear_treatments_are_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("s.csv");
    let rows: String = (0..200).map(|i| format!("{i},{}\n", (i as f64 * 0.7).sin())).collect();
    fs::write(&series, format!("t,y\n{rows}")).unwrap();
    // both types always together: their columns coincide
    let events: String = (10..190)
        .step_by(7)
        .flat_map(|t| [format!("{{\"t\":{t},\"type\":0}}\n"), format!("{{\"t\":{t},\"type\":1}}\n")])
        .collect();
    let ev = dir.path().join("ev.jsonl");
    fs::write(&ev, events).unwrap();
    let o = numevent(&[
        "estimate-irf",
        "--series",
        s(&series),
        "--events",
        s(&ev),
        "--horizon",
        "2",
        "--out",
        s(&dir.path().join("irf.json")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("rank deficient"));
}

#[test]
fn generate_then_estimate_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let o = numevent(&["generate", "--config", s(&fixture("generator.json")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["dataset.jsonl", "provenance.json", "series.csv", "events.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let irf = numevent(&[
        "estimate-irf",
        "--series",
        s(&out.join("series.csv")),
        "--events",
        s(&out.join("events.jsonl")),
        "--horizon",
        "4",
        "--out",
        s(&dir.path().join("irf.json")),
    ]);
    assert_eq!(irf.status.code(), Some(0), "{}", stderr(&irf));

    // gold events re-emitted as predictions score perfectly
    let dataset = fs::read_to_string(out.join("dataset.jsonl")).unwrap();
    let mut preds = String::new();
    for line in dataset.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for g in v["gold"].as_array().unwrap() {
            let mut g = g.clone();
            g["sample_id"] = v["id"].clone();
            preds.push_str(&format!("{g}\n"));
        }
    }
    let pred = dir.path().join("pred.jsonl");
    fs::write(&pred, preds).unwrap();
    let report = dir.path().join("report.json");
    let o = numevent(&[
        "evaluate",
        "--pred",
        s(&pred),
        "--gold",
        s(&out.join("dataset.jsonl")),
        "--out",
        s(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("precision 1.00 recall 1.00\n"));
    assert!(fs::read_to_string(&report).unwrap().contains("per_month"));
}

#[test]
fn generate_seed_flag_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = numevent(&["generate", "--config", s(&fixture("generator.json")), "--seed", seed, "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(0));
        fs::read_to_string(out.join("provenance.json")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "2");
    assert_ne!(a, b);
    assert!(a.contains("\"seed\": 1"));
}

#[test]
fn evaluate_hand_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let golds = [
        r#"{"t":0,"type":0,"actor":"opec","action":"cut","object":"oil","direction":"up"}"#,
        r#"{"t":0,"type":0,"actor":"iea","action":"warn","object":"demand","direction":"down"}"#,
        r#"{"t":0,"type":0,"actor":"saudi","action":"raise","object":"price","direction":"up"}"#,
    ];
    let gold = dir.path().join("gold.jsonl");
    fs::write(&gold, sample_line(0, "2024-03", &golds) + "\n").unwrap();
    let preds = [
        with_sample(EVENT, 0),
        with_sample(r#"{"t":0,"type":0,"actor":"fed","action":"raise","object":"rates","direction":"up"}"#, 0),
    ];
    let pred = dir.path().join("pred.jsonl");
    fs::write(&pred, preds.join("\n")).unwrap();
    let o = numevent(&["evaluate", "--pred", s(&pred), "--gold", s(&gold)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "precision 0.50 recall 0.33\n");
}

#[test]
fn evaluate_rejects_unknown_sample() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    fs::write(&gold, sample_line(0, "2024-03", &[EVENT])).unwrap();
    let pred = dir.path().join("pred.jsonl");
    fs::write(&pred, with_sample(EVENT, 5)).unwrap();
    let o = numevent(&["evaluate", "--pred", s(&pred), "--gold", s(&gold)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown sample 5"));
    let o = numevent(&["evaluate", "--pred", s(&gold), "--gold", s(&gold), "--min-slots", "5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn quiet_suppresses_output() {
    let o = numevent(&["vocab-validate", "--quiet", "--vocab", s(&fixture("vocab.json"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
}

#[test]
fn usage_errors_are_validation_errors() {
    assert_eq!(numevent(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(numevent(&["--help"]).status.code(), Some(0));
}
