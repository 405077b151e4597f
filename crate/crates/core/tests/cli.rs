use std::fs;
use std::path::Path;

use crowdpair::cli::run_with;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("crowdpair").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path) {
    let (code, out, err) = run(&[
        "simulate", "--n", "600", "--m", "6", "--k", "3", "--p", "0.8", "--regime", "case2", "--seed", "3",
        "--out-dir", p(dir),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("wrote"));
}

#[test]
fn simulate_fit_predict_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    for f in ["dataset.csv", "truth_model.json", "truth_labels.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let data = dir.join("dataset.csv");
    let model = dir.join("model.json");
    let (code, _, err) = run(&["fit", "--method", "multispa-kl", "--data", p(&data), "--k", "3", "--out", p(&model)]);
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("crowdpair: "), "resolved config is logged: {err}");

    let (code, out, err) = run(&["eval", "--model", p(&model), "--truth-model", p(&dir.join("truth_model.json"))]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert!(v["mse"].as_f64().unwrap() < 0.05, "{out}");
    assert_eq!(v["per_annotator_mse"].as_array().unwrap().len(), 6);

    let pred = dir.join("pred.csv");
    let (code, _, err) = run(&["predict", "--model", p(&model), "--data", p(&data), "--out", p(&pred)]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(&pred).unwrap();
    assert!(text.starts_with("item,label,posterior_1,posterior_2,posterior_3"));
    assert_eq!(text.lines().count(), 601);

    let (code, out, err) = run(&["eval", "--pred", p(&pred), "--truth", p(&dir.join("truth_labels.csv"))]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["items"].as_u64(), Some(600));
    let e = v["classification_error_pct"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&e));
}

#[test]
fn every_method_fits() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path());
    let data = tmp.path().join("dataset.csv");
    for method in ["multispa", "multispa-kl", "multispa-ds", "mv-ds", "mv"] {
        let model = tmp.path().join(format!("{method}.json"));
        let (code, _, err) = run(&["fit", "--method", method, "--data", p(&data), "--k", "3", "--out", p(&model)]);
        assert_eq!(code, 0, "{method}: {err}");
        assert!(model.exists());
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    simulate(&a);
    simulate(&b);
    for f in ["dataset.csv", "truth_model.json", "truth_labels.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let data = a.join("dataset.csv");
    let fit = |out: &Path| {
        let (code, _, err) = run(&["fit", "--method", "multispa-kl", "--data", p(&data), "--k", "3", "--out", p(out)]);
        assert_eq!(code, 0, "{err}");
        fs::read(out).unwrap()
    };
    assert_eq!(fit(&a.join("m1.json")), fit(&a.join("m2.json")));
}

#[test]
fn isolated_annotator_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("iso.csv");
    // Annotator 3 labels only item 5, which nobody else labeled.
    fs::write(&data, "item,annotator,label\n1,1,1\n1,2,1\n2,1,2\n2,2,2\n3,1,1\n3,2,2\n4,1,2\n4,2,1\n5,3,1\n").unwrap();
    let (code, _, err) = run(&["fit", "--method", "multispa", "--data", p(&data), "--k", "2", "--out", p(&tmp.path().join("m.json"))]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("annotator 3"), "{err}");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&["fit"]).0, 1);
    assert_eq!(run(&["bench", "--table", "7", "--seed", "1"]).0, 1);
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path());
    let data = tmp.path().join("dataset.csv");
    let (code, _, err) = run(&[
        "fit", "--method", "multispa", "--data", p(&data), "--k", "3", "--eta", "0", "--out",
        p(&tmp.path().join("m.json")),
    ]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn missing_file_exits_2() {
    let (code, _, err) = run(&["predict", "--model", "/nonexistent/m.json", "--data", "/nonexistent/d.csv", "--out", "/tmp/x.csv"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error: "));
}
