use std::path::Path;
use std::process::{Command, Output};

fn motorkpi(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motorkpi"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    let stdout = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(o.status.success(), "stdout: {stdout}\nstderr: {}", String::from_utf8_lossy(&o.stderr));
    stdout
}

fn write_config(dir: &Path, name: &str, json: serde_json::Value) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(&json).unwrap()).unwrap();
    p
}

fn base() -> serde_json::Value {
    serde_json::json!({
        "template": "full_pole_vc",
        "n_samples": 200,
        "resolutions": ["64x64"],
        "seeds": [5],
        "model": {"kind": "dnn", "train": {"max_epochs": 100}},
        "optimize": {"population": 8, "generations": 2, "evaluator": "surrogate"}
    })
}

fn with(mut v: serde_json::Value, key: &str, val: serde_json::Value) -> serde_json::Value {
    v[key] = val;
    v
}

#[test]
fn workflow_from_data_to_optimization() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "dnn.json", base());

    let text = ok(&motorkpi(&["gen-data"], &cfg, &out));
    assert!(text.contains("generated 200 samples"), "{text}");
    assert!(text.contains("split 180/10/10"), "{text}");
    let manifest = std::fs::read(out.join("dataset/manifest.json")).unwrap();
    let table = std::fs::read(out.join("dataset/dataset.csv")).unwrap();
    ok(&motorkpi(&["gen-data"], &cfg, &out));
    assert_eq!(std::fs::read(out.join("dataset/manifest.json")).unwrap(), manifest);
    assert_eq!(std::fs::read(out.join("dataset/dataset.csv")).unwrap(), table);

    let text = ok(&motorkpi(&["train"], &cfg, &out));
    assert!(text.contains("trained dnn"), "{text}");
    for f in ["dnn.bin", "dnn-curve.csv", "dnn-curve.svg", "dnn-report.json"] {
        assert!(out.join("models").join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("models/dnn-report.json")).unwrap()).unwrap();
    assert!(report["val_mse"].as_array().unwrap().len() <= 100);

    let gpr = write_config(tmp.path(), "gpr.json", with(base(), "model", serde_json::json!({"kind": "gpr"})));
    let text = ok(&motorkpi(&["train"], &gpr, &out));
    assert!(text.contains("fitted gpr"), "{text}");
    assert!(out.join("models/gpr-fit.json").exists());
    assert!(!out.join("models/gpr-report.json").exists());

    let text = ok(&motorkpi(&["eval"], &cfg, &out));
    assert!(text.contains("average MRE over KPIs"), "{text}");
    let csv = std::fs::read_to_string(out.join("eval/dnn-table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6 + 1);
    assert!(csv.lines().last().unwrap().starts_with("average,"));
    assert!(out.join("eval/dnn-cumulative.svg").exists());

    ok(&motorkpi(&["compare"], &cfg, &out));
    let svg = std::fs::read_to_string(out.join("compare/comparison.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("GPR") && svg.contains("DNN"));

    let text = ok(&motorkpi(&["optimize"], &cfg, &out));
    // infeasible candidates are never sent to the evaluator
    let n: usize = text.split("surrogate run: ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!((1..=24).contains(&n), "{text}");
    for f in ["surrogate-archive.csv", "surrogate-history.csv", "surrogate-verified-archive.csv"] {
        assert!(out.join("optimize").join(f).exists(), "{f}");
    }
    let hist = std::fs::read_to_string(out.join("optimize/surrogate-history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 1 + 3);

    let dcnn = write_config(
        tmp.path(),
        "dcnn.json",
        with(
            base(),
            "model",
            serde_json::json!({"kind": "dcnn", "max_train": 40, "train": {"max_epochs": 2}}),
        ),
    );
    let text = ok(&motorkpi(&["resolution-study"], &dcnn, &out));
    assert!(text.contains("64x64: average MRE over KPIs"), "{text}");
    assert!(out.join("resolution/summary.csv").exists());
    let produced: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("produced-resolution-study.json")).unwrap()).unwrap();
    assert_eq!(produced["files"].as_array().unwrap().len(), 3);

    // lr far too high for this net: validation loss stalls and patience triggers
    let wild = write_config(
        tmp.path(),
        "wild.json",
        with(
            base(),
            "model",
            serde_json::json!({"kind": "dnn", "train": {"max_epochs": 100, "learning_rate": 0.05, "patience": 3}}),
        ),
    );
    ok(&motorkpi(&["train"], &wild, &out));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("models/dnn-report.json")).unwrap()).unwrap();
    let epochs = report["val_mse"].as_array().unwrap().len();
    assert_eq!(report["stopped_early"], true);
    assert_eq!(report["best_epoch"].as_u64().unwrap() as usize, epochs - 3);
}

#[test]
fn invalid_resolution_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", with(base(), "resolutions", serde_json::json!(["0"])));
    let o = motorkpi(&["gen-data"], &cfg, &tmp.path().join("out"));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("resolution"));
}

#[test]
fn missing_artifacts_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", base());
    let o = motorkpi(&["eval"], &cfg, &tmp.path().join("out"));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("run gen-data first"));
    let o = motorkpi(&["train"], &tmp.path().join("missing.json"), &tmp.path().join("out"));
    assert!(!o.status.success());
}

#[test]
fn empty_seed_list_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", with(base(), "seeds", serde_json::json!([])));
    let o = motorkpi(&["gen-data"], &cfg, &tmp.path().join("out"));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}
