use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use weightprov::tensor_store::write_container;
use weightprov::trainer::{init_model, prune_depth};
use weightprov::{ArchManifest, Family, ModelBundle};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_weightprov"))
}

fn arch(d_mlp: usize, n_blocks: usize) -> ArchManifest {
    ArchManifest::with_default_roles(Family::GluTransformer, n_blocks, 16, d_mlp, 64, 2)
}

/// Writes `<name>.bin` and `<name>.json`, returning both paths.
fn save(dir: &Path, name: &str, model: &ModelBundle) -> (PathBuf, PathBuf) {
    let (bin, manifest) = (dir.join(format!("{name}.bin")), dir.join(format!("{name}.json")));
    write_container(model.tensors(), &bin).unwrap();
    model.manifest().write(&manifest).unwrap();
    (bin, manifest)
}

fn pair_args(a: &(PathBuf, PathBuf), b: &(PathBuf, PathBuf)) -> Vec<String> {
    [
        "--model-a",
        a.0.to_str().unwrap(),
        "--manifest-a",
        a.1.to_str().unwrap(),
        "--model-b",
        b.0.to_str().unwrap(),
        "--manifest-b",
        b.1.to_str().unwrap(),
    ]
    .map(String::from)
    .to_vec()
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn schema_checked(path: &Path) -> Value {
    let schema: Value =
        serde_json::from_str(include_str!("../../../docs/report.schema.json")).unwrap();
    let doc: Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    if let Err(errors) = compiled.validate(&doc) {
        let errors: Vec<String> = errors.map(|e| e.to_string()).collect();
        panic!("schema violations: {errors:?}");
    }
    doc
}

fn test_report(dir: &Path, a: &(PathBuf, PathBuf), b: &(PathBuf, PathBuf), stat: &str, name: &str) -> Value {
    let out = dir.join(name);
    run_ok(bin().arg("test").args(pair_args(a, b)).args(["--stat", stat, "--tokens", "4,16", "--T", "9", "--out"]).arg(&out));
    schema_checked(&out)
}

fn aggregate_log10(doc: &Value) -> f64 {
    doc["results"][0]["aggregate"]["log10_p"].as_f64().unwrap()
}

#[test]
fn self_comparison_is_maximally_significant() {
    let dir = TempDir::new().unwrap();
    let a = save(dir.path(), "a", &init_model(&arch(32, 2), 1).unwrap());
    let doc = test_report(dir.path(), &a, &a, "u", "u.json");
    assert!(aggregate_log10(&doc) <= 2.2e-308f64.log10());
    assert_eq!(doc["verdict"][0]["statistic"], "u");
}

#[test]
fn independent_models_give_valid_p_values_for_every_statistic() {
    let dir = TempDir::new().unwrap();
    let a = save(dir.path(), "a", &init_model(&arch(32, 2), 1).unwrap());
    let b = save(dir.path(), "b", &init_model(&arch(32, 2), 2).unwrap());
    for stat in ["match", "u", "h", "l2"] {
        let doc = test_report(dir.path(), &a, &b, stat, &format!("{stat}.json"));
        let p = doc["results"][0]["aggregate"]["display_p"].as_f64().unwrap();
        assert!(p > 0.0 && p <= 1.0, "{stat}: {p}");
    }
    let jsd = test_report(dir.path(), &a, &b, "jsd", "jsd.json");
    assert!(jsd["results"][0]["value"].as_f64().unwrap() >= 0.0);
    let huref = test_report(dir.path(), &a, &b, "huref", "huref.json");
    assert_eq!(huref["results"][0]["values"].as_array().unwrap().len(), 6);
}

#[test]
fn reports_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = save(dir.path(), "a", &init_model(&arch(32, 2), 1).unwrap());
    let b = save(dir.path(), "b", &init_model(&arch(32, 2), 2).unwrap());
    let strip = |mut v: Value| {
        v["timing"] = Value::Null;
        v
    };
    let first = strip(test_report(dir.path(), &a, &b, "l2", "1.json"));
    let second = strip(test_report(dir.path(), &a, &b, "l2", "2.json"));
    assert_eq!(first, second);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = TempDir::new().unwrap();
    let a = save(dir.path(), "a", &init_model(&arch(32, 2), 1).unwrap());
    let wide = save(dir.path(), "wide", &init_model(&arch(48, 2), 2).unwrap());
    let code = |args: Vec<String>| bin().args(args).output().unwrap().status.code();

    let mut args = vec!["test".to_string()];
    args.extend(pair_args(&a, &wide));
    args.extend(["--stat", "u"].map(String::from));
    assert_eq!(code(args), Some(3));

    let missing = (dir.path().join("missing.bin"), a.1.clone());
    let mut args = vec!["test".to_string()];
    args.extend(pair_args(&a, &missing));
    args.extend(["--stat", "u"].map(String::from));
    assert_eq!(code(args), Some(2));

    let corrupt = dir.path().join("corrupt.bin");
    std::fs::write(&corrupt, b"\xff\xff\xff\xff\xff\xff\xff\x7fjunk").unwrap();
    let mut args = vec!["test".to_string()];
    args.extend(pair_args(&a, &(corrupt, a.1.clone())));
    args.extend(["--stat", "match"].map(String::from));
    assert_eq!(code(args), Some(2));

    assert_eq!(code(vec!["test".into(), "--stat".into(), "nope".into()]), Some(2));
}

#[test]
fn localize_recovers_depth_pruning() {
    let dir = TempDir::new().unwrap();
    let full = init_model(&arch(32, 4), 5).unwrap();
    let a = save(dir.path(), "full", &full);
    let b = save(dir.path(), "pruned", &prune_depth(&full, &[0, 2, 3]).unwrap());
    let pairs = |threshold: &str| -> Vec<(u64, u64)> {
        let out = dir.path().join(format!("loc{threshold}.json"));
        run_ok(bin().arg("localize").args(pair_args(&a, &b)).args(["--tokens", "4,16", "--threshold", threshold, "--out"]).arg(&out));
        let doc = schema_checked(&out);
        doc["results"][0]["per_block"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| (m["i"].as_u64().unwrap(), m["j"].as_u64().unwrap()))
            .collect()
    };
    assert_eq!(pairs("1e-4"), vec![(0, 0), (2, 1), (3, 2)]);
    assert_eq!(pairs("1").len(), 12);
}

#[test]
fn transform_preserves_outputs_and_defeats_only_the_weight_statistic() {
    let dir = TempDir::new().unwrap();
    let a = save(dir.path(), "a", &init_model(&arch(32, 2), 3).unwrap());
    let transform = |kind: &str, name: &str| -> (PathBuf, PathBuf) {
        let out = dir.path().join(name);
        run_ok(bin().args(["transform", "--model"]).arg(&a.0).arg("--manifest").arg(&a.1).args(["--kind", kind, "--seed", "7", "--out"]).arg(&out));
        let report = schema_checked(&PathBuf::from(format!("{}.report.json", out.display())));
        assert!(report["transform"]["max_logit_diff"].as_f64().unwrap() <= 1e-8);
        (out.clone(), PathBuf::from(format!("{}.manifest.json", out.display())))
    };

    let permuted = transform("permute", "perm.bin");
    assert!(aggregate_log10(&test_report(dir.path(), &a, &permuted, "u", "u.json")) > -6.0);
    assert!(aggregate_log10(&test_report(dir.path(), &a, &permuted, "match", "m.json")) <= 2.2e-308f64.log10());

    let r1 = transform("rotate", "rot1.bin");
    let r2 = transform("rotate", "rot2.bin");
    assert_eq!(std::fs::read(r1.0).unwrap(), std::fs::read(r2.0).unwrap());
}

#[test]
fn simulate_single_trial_reports_validate() {
    let dir = TempDir::new().unwrap();
    for suite in ["null-uniformity", "power"] {
        let out = dir.path().join(format!("{suite}.json"));
        run_ok(bin().args(["simulate", "--suite", suite, "--trials", "1", "--out"]).arg(&out));
        let doc = schema_checked(&out);
        assert_eq!(doc["simulation"]["suite"], suite);
    }
}
