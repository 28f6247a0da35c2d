use std::path::Path;
use std::process::{Command, Output};

fn langpaint(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_langpaint"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn stepwise_commands_compose() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("data");
    ok(&langpaint(&["gen-data", "--preset", "three-lang", "--seed", "2"], &d));
    let s = t.path().join("split");
    ok(&langpaint(&["split", "--data", p(&d.join("train.csv")), "--fractions", "0.8,0.2", "--seed", "2"], &s));
    let (train, val) = (s.join("part_0.csv"), s.join("part_1.csv"));
    let ml = t.path().join("ml");
    ok(&langpaint(&["train-ml", "--train", p(&train), "--val", p(&val), "--seed", "2"], &ml));
    let ft = t.path().join("ft");
    ok(&langpaint(
        &["finetune", "--ml", p(&ml.join("ml.ckpt")), "--language", "hin", "--train", p(&train), "--val", p(&val)],
        &ft,
    ));
    let sw = t.path().join("sweep");
    let out = ok(&langpaint(
        &["sweep", "--ls", p(&ft.join("hin.ls.ckpt")), "--ml", p(&ml.join("ml.ckpt")), "--val", p(&val)],
        &sw,
    ));
    assert!(out.starts_with("hin\talpha="));
    let csv = std::fs::read_to_string(sw.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
    assert_eq!(csv.lines().next(), Some("alpha,val_f1"));
    assert!(sw.join("merged.ckpt").exists());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(sw.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["checkpoint_format_version"], 1);
}

#[test]
fn run_predict_eval_report() {
    let t = tempfile::tempdir().unwrap();
    let run = t.path().join("run");
    let out = ok(&langpaint(&["run", "--preset", "three-lang", "--seed", "3"], &run));
    assert_eq!(out.lines().count(), 3);
    let pred = ok(&langpaint(&["predict", "--model", p(&run), "--text", "sig1w2 sig1w5", "--language", "eng"], &run));
    let line = pred.trim_end();
    let (label, probs) = line.split_once('\t').unwrap();
    assert!(label == "none" || label == "hope");
    let probs: Vec<f64> = probs.split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(probs.len(), 2);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);

    let d = t.path().join("data");
    ok(&langpaint(&["gen-data", "--preset", "three-lang", "--seed", "3"], &d));
    let batch = t.path().join("batch.csv");
    std::fs::write(&batch, "text,language\nsig0w1,eng\nsig1w1 x,tam\n").unwrap();
    let lines = ok(&langpaint(&["predict", "--model", p(&run), "--batch", p(&batch)], &run));
    assert_eq!(lines.lines().count(), 2);

    let ev = t.path().join("eval");
    ok(&langpaint(&["eval", "--model", p(&run), "--data", p(&d.join("test.csv"))], &ev));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(ev.join("eval.json")).unwrap()).unwrap();
    assert_eq!(rep["overall"]["n"], 900);

    let rp = t.path().join("report");
    let e = ev.join("eval.json");
    ok(&langpaint(&["report", "--evals", p(&e), p(&e)], &rp));
    assert!(rp.join("aggregate.json").exists());
}

#[test]
fn experiment_then_report_reproduces_alpha_summary() {
    let t = tempfile::tempdir().unwrap();
    let ex = t.path().join("exp");
    ok(&langpaint(&["exp1", "--preset", "three-lang", "--runs", "2", "--seed", "1", "--save-models"], &ex));
    assert!(ex.join("runs/run_1/manifest.json").exists());
    let rp = t.path().join("rep");
    ok(&langpaint(&["report", "--curves", p(&ex.join("sweep_curves.csv"))], &rp));
    let a = std::fs::read_to_string(ex.join("alpha_summary.csv")).unwrap();
    let b = std::fs::read_to_string(rp.join("alpha_summary.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn clean_reports_removals() {
    let t = tempfile::tempdir().unwrap();
    let train = t.path().join("train.csv");
    let dev = t.path().join("dev.csv");
    std::fs::write(&train, "text,label,language\na,x,eng\nb,y,eng\n").unwrap();
    std::fs::write(&dev, "text,label,language\nb,y,eng\n").unwrap();
    let out = ok(&langpaint(&["clean", "--train", p(&train), "--dev", p(&dev)], t.path()));
    assert_eq!(out.trim(), "removed 1");
}

#[test]
fn ensemble_directory_predicts() {
    let t = tempfile::tempdir().unwrap();
    let ens = t.path().join("ens");
    ok(&langpaint(&["ensemble", "--preset", "three-lang", "--k", "3", "--seed", "4"], &ens));
    assert!(ens.join("ensemble_manifest.json").exists() && ens.join("fold_2/ml.ckpt").exists());
    let pred = ok(&langpaint(&["predict", "--model", p(&ens), "--text", "sig0w0", "--language", "mal"], &ens));
    let probs: Vec<f64> = pred.trim_end().split_once('\t').unwrap().1.split(',').map(|x| x.parse().unwrap()).collect();
    assert!((probs.iter().sum::<f64>() - 3.0).abs() < 1e-5);
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let o = langpaint(&["frobnicate"], t.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = langpaint(&["sweep", "--ls", "a.ckpt"], t.path());
    assert_eq!(o.status.code(), Some(1));
    let o = langpaint(&["train-ml", "--train", "/nonexistent.csv", "--val", "/nonexistent.csv"], t.path());
    assert_eq!(o.status.code(), Some(2));
    let bad = t.path().join("bad.ckpt");
    std::fs::write(&bad, b"NOPE").unwrap();
    let o = langpaint(&["sweep", "--ls", p(&bad), "--ml", p(&bad), "--val", p(&bad)], t.path());
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_langpaint")).arg("--version").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("checkpoint format 1"));
}
