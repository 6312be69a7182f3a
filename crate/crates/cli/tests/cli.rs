use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use xtalkgst_core::circuits::{circuits_from_text, Circuit};
use xtalkgst_core::simulate::Dataset;

fn xtalkgst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xtalkgst")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = xtalkgst(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    xtalkgst(args).status.code().expect("exit code")
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn svg_is_well_formed(path: &Path) -> roxmltree::Document<'static> {
    let text: &'static str = Box::leak(fs::read_to_string(path).unwrap().into_boxed_str());
    let doc = roxmltree::Document::parse(text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    doc
}

/// Every number in the report sits in a `{value, halfwidth}` pair unless it is a
/// count, an index or a version.
fn check_estimates(v: &Value, key: &str) {
    const COUNTS: [&str; 6] = ["version", "n_params", "n_free_params", "k", "qubit", "halfwidth"];
    match v {
        Value::Number(_) => assert!(COUNTS.contains(&key), "bare number under `{key}`"),
        Value::Array(items) => items.iter().for_each(|i| check_estimates(i, key)),
        Value::Object(map) => {
            if map.contains_key("value") {
                assert!(map.contains_key("halfwidth"), "estimate without halfwidth under `{key}`");
                return;
            }
            if key == "selections" {
                return;
            }
            for (k, item) in map {
                check_estimates(item, k);
            }
        }
        _ => {}
    }
}

#[test]
fn design_counts_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["design", "--lmax", "8", "--out", &p(dir.path(), "d8.txt")]);
    let text = fs::read_to_string(dir.path().join("d8.txt")).unwrap();
    let circuits = circuits_from_text(&text).unwrap();
    assert_eq!(circuits.len(), 11_813);
    assert!(circuits.iter().all(|c| Circuit::parse(&c.serialize()).unwrap() == *c));
    ok(&["design", "--lmax", "1", "--out", &p(dir.path(), "d1.txt")]);
    let small = circuits_from_text(&fs::read_to_string(dir.path().join("d1.txt")).unwrap()).unwrap();
    assert!(!small.is_empty() && small.len() < circuits.len());
    let big: std::collections::HashSet<_> = circuits.iter().map(|c| c.serialize()).collect();
    assert!(small.iter().all(|c| big.contains(&c.serialize())));
}

#[test]
fn validation_and_io_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let design = p(dir.path(), "d.txt");
    ok(&["design", "--lmax", "1", "--out", &design]);
    assert_eq!(code(&["design", "--lmax", "3", "--out", &p(dir.path(), "x.txt")]), 2);
    assert_eq!(code(&["simulate", "--design", &design, "--zz", "0", "--out", &p(dir.path(), "ds.jsonl")]), 2, "seed is mandatory");
    assert_eq!(code(&["simulate", "--design", &p(dir.path(), "missing.txt"), "--zz", "0", "--seed", "1", "--out", &p(dir.path(), "ds.jsonl")]), 4);
    assert_eq!(code(&["design", "--lmax", "1", "--out", &p(dir.path(), "no/such/dir/d.txt")]), 4);
    assert_eq!(code(&["report", "--out", &p(dir.path(), "rep")]), 2);
    fs::write(dir.path().join("bad.json"), "{\"kind\": \"fit\"}").unwrap();
    assert_eq!(code(&["report", "--fragment", &p(dir.path(), "bad.json"), "--out", &p(dir.path(), "rep")]), 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, format!("{{\"lmax\": 1, \"out\": {:?}}}", p(dir.path(), "from_file.txt"))).unwrap();
    ok(&["--config", cfg.to_str().unwrap(), "design"]);
    let from_file = fs::read_to_string(dir.path().join("from_file.txt")).unwrap();
    ok(&["--config", cfg.to_str().unwrap(), "design", "--lmax", "2", "--out", &p(dir.path(), "flag.txt")]);
    let from_flag = fs::read_to_string(dir.path().join("flag.txt")).unwrap();
    assert!(from_flag.lines().count() > from_file.lines().count());
    fs::write(&cfg, "{\"lmaxx\": 1}").unwrap();
    assert_eq!(code(&["--config", cfg.to_str().unwrap(), "design", "--out", &p(dir.path(), "y.txt")]), 2);
}

#[test]
fn simulate_is_seed_deterministic_and_ideal_counts_concentrate() {
    let dir = tempfile::tempdir().unwrap();
    let design = p(dir.path(), "d.txt");
    ok(&["design", "--lmax", "1", "--out", &design]);
    for name in ["a.jsonl", "b.jsonl"] {
        ok(&["simulate", "--design", &design, "--zz", "0", "--shots", "100", "--seed", "5", "--out", &p(dir.path(), name)]);
    }
    ok(&["simulate", "--design", &design, "--zz", "0", "--shots", "100", "--seed", "6", "--out", &p(dir.path(), "c.jsonl")]);
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_ne!(a, fs::read(dir.path().join("c.jsonl")).unwrap());
    let ds = Dataset::from_jsonl(&String::from_utf8(a).unwrap()).unwrap();
    let empty = ds.get(&Circuit::new(Vec::new())).expect("empty circuit present");
    assert_eq!(empty.as_array(), [100, 0, 0, 0]);

    ok(&["simulate", "--design", &design, "--zz-sweep", "--sweep-points", "3", "--shots", "10", "--seed", "1", "--out", &p(dir.path(), "sweep")]);
    let index: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("sweep/sweep.json")).unwrap()).unwrap();
    let eps: Vec<f64> = index.as_array().unwrap().iter().map(|e| e["eps"].as_f64().unwrap()).collect();
    assert_eq!(eps.len(), 3);
    assert!((eps[0] - 1e-3).abs() < 1e-15 && (eps[2] - 3e-2).abs() < 1e-15);
    assert!(dir.path().join("sweep/zz_02.jsonl").is_file());
}

fn fit_pipeline(dir: &Path, families: &str, bootstrap: &str) -> PathBuf {
    let design = p(dir, "d.txt");
    ok(&["design", "--lmax", "1", "--out", &design]);
    let noise = dir.join("noise.json");
    let spec = xtalkgst_core::noise::NoiseSpec::depolarizing(2e-3).with_gate_term(
        xtalkgst_core::circuits::GateLabel::Gxpi2,
        0,
        Some(xtalkgst_core::circuits::GateLabel::Gypi2),
        "X",
        0.02,
    );
    fs::write(&noise, spec.to_json()).unwrap();
    ok(&["simulate", "--design", &design, "--noise", noise.to_str().unwrap(), "--shots", "1000", "--seed", "3", "--out", &p(dir, "ds.jsonl")]);
    let fit = dir.join("fit.json");
    let out = xtalkgst(&[
        "fit", "--data", &p(dir, "ds.jsonl"), "--family", families, "--bootstrap", bootstrap, "--seed", "2", "--max-iter", "400", "--out",
        fit.to_str().unwrap(),
    ]);
    let c = out.status.code().unwrap();
    assert!(c == 0 || c == 3, "fit exited {c}: {}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&fit).unwrap()).unwrap();
    assert_eq!(v["converged"].as_bool().unwrap(), c == 0, "exit code mirrors the converged flag");
    fit
}

#[test]
fn fit_select_wildcard_report() {
    let dir = tempfile::tempdir().unwrap();
    let fit = fit_pipeline(dir.path(), "crosstalk-free,context-dependent", "0");
    let v: Value = serde_json::from_str(&fs::read_to_string(&fit).unwrap()).unwrap();
    assert_eq!(v["kind"], "fit");
    assert_eq!(v["fits"].as_array().unwrap().len(), 2);
    for m in v["comparison"]["models"].as_array().unwrap() {
        for key in ["lambda", "n_sigma", "wildcard", "avg_diamond"] {
            assert!(m[key].is_number(), "{key}");
        }
    }
    assert_eq!(v["comparison"]["gamma"].as_array().unwrap().len(), 1);

    ok(&["select", "--fit", fit.to_str().unwrap(), "--gamma-threshold", "1e9", "--out", &p(dir.path(), "sel.json")]);
    let sel: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("sel.json")).unwrap()).unwrap();
    assert_eq!(sel["selection"]["selected"], "crosstalk-free");
    ok(&["wildcard", "--fit", fit.to_str().unwrap(), "--data", &p(dir.path(), "ds.jsonl"), "--family", "crosstalk-free", "--out", &p(dir.path(), "w.json")]);
    let w: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("w.json")).unwrap()).unwrap();
    assert!(w["results"][0]["wildcard"]["w"].as_f64().unwrap() >= 0.0);

    let frags = ["fit.json", "sel.json", "w.json"].map(|n| p(dir.path(), n));
    let mut args = vec!["report"];
    for f in &frags {
        args.extend(["--fragment", f.as_str()]);
    }
    let rep1 = p(dir.path(), "rep1");
    let rep2 = p(dir.path(), "rep2");
    let mut a1 = args.clone();
    a1.extend(["--out", &rep1]);
    ok(&a1);
    let mut a2 = args.clone();
    a2.extend(["--out", &rep2]);
    ok(&a2);
    let report: Value = serde_json::from_str(&fs::read_to_string(Path::new(&rep1).join("report.json")).unwrap()).unwrap();
    assert_eq!(report["format"], "xtalk-gst-report");
    check_estimates(&report, "");
    for name in report["figures"].as_array().unwrap() {
        let name = name.as_str().unwrap();
        svg_is_well_formed(&Path::new(&rep1).join(name));
        assert_eq!(fs::read(Path::new(&rep1).join(name)).unwrap(), fs::read(Path::new(&rep2).join(name)).unwrap());
    }
    assert_eq!(fs::read(Path::new(&rep1).join("report.json")).unwrap(), fs::read(Path::new(&rep2).join("report.json")).unwrap());
}

#[test]
fn hamiltonian_figure_has_a_line_and_ellipse_per_context() {
    let dir = tempfile::tempdir().unwrap();
    let fit = fit_pipeline(dir.path(), "context-dependent", "20");
    let rep = p(dir.path(), "rep");
    ok(&["report", "--fragment", fit.to_str().unwrap(), "--out", &rep]);
    let v: Value = serde_json::from_str(&fs::read_to_string(Path::new(&rep).join("report.json")).unwrap()).unwrap();
    check_estimates(&v, "");
    let term = &v["fits"][0]["gates"][0]["terms"][0]["hamiltonian_mrad"];
    assert!(term["halfwidth"].as_f64().unwrap() >= 0.0);
    let doc = svg_is_well_formed(&Path::new(&rep).join("hamiltonian_context_dependent_gxpi2_0.svg"));
    let count = |class: &str| doc.descendants().filter(|n| n.attribute("class") == Some(class)).count();
    assert_eq!(count("context"), 3);
    assert_eq!(count("uncertainty"), 3);
}

#[test]
fn rb_pipeline_and_decay_figures() {
    let dir = tempfile::tempdir().unwrap();
    let design = p(dir.path(), "rb.txt");
    ok(&["design", "--rb", "--rb-depths", "0,2,4,8,16", "--rb-per-depth", "6", "--seed", "4", "--out", &design]);
    let meta = format!("{design}.meta.json");
    assert!(Path::new(&meta).is_file());
    assert_eq!(code(&["design", "--rb", "--out", &p(dir.path(), "x.txt")]), 2, "RB sampling needs a seed");
    let noise = dir.path().join("noise.json");
    fs::write(&noise, xtalkgst_core::noise::NoiseSpec::depolarizing(5e-3).to_json()).unwrap();
    ok(&["simulate", "--design", &design, "--noise", noise.to_str().unwrap(), "--shots", "200", "--seed", "9", "--out", &p(dir.path(), "rb.jsonl")]);
    ok(&["rb", "--data", &p(dir.path(), "rb.jsonl"), "--meta", &meta, "--replicates", "30", "--seed", "1", "--out", &p(dir.path(), "rb.json")]);
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rb.json")).unwrap()).unwrap();
    assert_eq!(v["result"]["cells"].as_array().unwrap().len(), 4);
    assert_eq!(v["variation"].as_array().unwrap().len(), 2);
    let rep = p(dir.path(), "rep");
    ok(&["report", "--fragment", &p(dir.path(), "rb.json"), "--out", &rep]);
    for q in 0..2 {
        for ctx in ["idle", "driven"] {
            let doc = svg_is_well_formed(&Path::new(&rep).join(format!("rb_q{q}_{ctx}.svg")));
            assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 1);
        }
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(Path::new(&rep).join("report.json")).unwrap()).unwrap();
    check_estimates(&report, "");
}
