use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use capeval_cli::simulated_references;
use capeval_core::agreement::{model_curve, ModelParams};
use capeval_core::engine::{human_split, HeldOut};
use proptest::prelude::*;
use serde_json::Value;

fn capeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capeval")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const REFS: &str = r#"[
    {"image_id": 1, "captions": ["a man rides a brown horse", "a person on a horse"]},
    {"image_id": 2, "captions": ["two dogs play in the snow", "dogs running through snow"]}
]"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn tokenize_prints_one_line_per_argument() {
    let out = capeval(&["tokenize", "A Man, riding a HORSE.", "two  dogs!"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "a man riding a horse\ntwo dogs\n");
}

#[test]
fn score_identity_submission() {
    let dir = tempfile::tempdir().unwrap();
    let refs = write(dir.path(), "refs.json", REFS);
    let sub = write(
        dir.path(),
        "sub.json",
        r#"[{"image_id": 1, "caption": "A man rides a brown horse."}, {"image_id": 2, "caption": "two dogs play in the snow"}]"#,
    );
    let out = capeval(&["score", "--refs", s(&refs), "--submission", s(&sub), "--rouge-s", "--rouge-n", "1,2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["split"], "val");
    for key in ["BLEU-1", "BLEU-4", "ROUGE-L", "ROUGE-S"] {
        assert_eq!(v["scores"][key], 1.0, "{key}");
    }
    assert!(v["scores"]["ROUGE-1"].as_f64().unwrap() < 1.0);
    assert_eq!(v["per_image"].as_array().unwrap().len(), 2);

    let table = capeval(&["score", "--refs", s(&refs), "--submission", s(&sub), "--format", "table", "--per-image"]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.contains("BLEU-4") && text.contains("image_id"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let refs = write(dir.path(), "refs.json", REFS);

    let partial = write(dir.path(), "partial.json", r#"[{"image_id": 1, "caption": "a horse"}]"#);
    let out = capeval(&["score", "--refs", s(&refs), "--submission", s(&partial)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing image id 2"));

    let broken = write(dir.path(), "broken.json", "{not json");
    assert_eq!(capeval(&["score", "--refs", s(&refs), "--submission", s(&broken)]).status.code(), Some(1));
    assert_eq!(capeval(&["score", "--refs", "/nonexistent.json", "--submission", s(&broken)]).status.code(), Some(1));
    assert_eq!(capeval(&["simulate", "--p", "1.5", "--q", "0.5", "--k", "4", "--n", "10"]).status.code(), Some(1));

    let out_path = dir.path().join("missing_dir").join("x.json");
    let out = capeval(&["simulate", "--p", "0.5", "--q", "0.5", "--k", "4", "--n", "10", "--out", s(&out_path)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulated_agreement_matches_model() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("sim.json");
    for (p, k) in [(0.3, 4), (0.6, 2)] {
        let k_arg = k.to_string();
        let p_arg = p.to_string();
        let out = capeval(&["simulate", "--p", &p_arg, "--q", "0.4", "--k", &k_arg, "--n", "40000", "--seed", "11", "--out", s(&refs)]);
        assert!(out.status.success());
        let out = capeval(&[
            "agreement", "--refs", s(&refs), "--k", &k_arg, "--words", "object", "--words-only", "--format", "json",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        let row = &v["words"][0];
        let (mp, mr) = model_curve(p, k).unwrap();
        assert!((row["precision"].as_f64().unwrap() - mp).abs() < 0.01);
        assert!((row["recall"].as_f64().unwrap() - mr).abs() < 0.01);
        assert!((row["p_hat"].as_f64().unwrap() - p).abs() < 0.01);
    }
}

#[test]
fn single_reference_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let refs = write(dir.path(), "refs.json", REFS);
    let out = capeval(&["agreement", "--refs", s(&refs), "--k", "1", "--vocab-size", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("images: 2  k: 1"));
    assert!(text.contains("CIDEr-D"));

    let out = capeval(&["agreement", "--refs", s(&refs), "--k", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simulated_files_split_back_into_the_model(p in 0.0f64..=1.0, q in 0.0f64..=1.0, k in 1usize..6, n in 1usize..40, seed: u64) {
        let params = ModelParams::new(p, q, k).unwrap();
        let refs = simulated_references(&params, n, seed).unwrap();
        prop_assert_eq!(refs.len(), n);
        let split = human_split(&refs, k, HeldOut::Last).unwrap();
        prop_assert_eq!(split.agreement.k(), k);
        prop_assert_eq!(split.held_out.len(), n);
        prop_assert!(split.references.iter().all(|(_, caps)| caps.len() == k));
    }
}
