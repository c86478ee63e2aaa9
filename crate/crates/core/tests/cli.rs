use std::path::Path;
use std::process::{Command, Output};

fn cwgan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cwgan"))
        .args(args)
        .current_dir(cwd)
        .env("CWGAN_REPORT_DIR", cwd.join("reports"))
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY: &[&str] = &[
    "--set", "data.n=64",
    "--set", "train.epochs=1",
    "--set", "arch.gen.widths=8,8",
    "--set", "arch.critic.widths=8,8",
    "--set", "eval.N_test=200",
    "--set", "eval.truths=100",
    "--set", "eval.ot_batch=32",
];

#[test]
fn simulate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let path = dir.path().join(name);
        let args = ["simulate", "--kind", "conditional", "--n", "50", "--seed", seed, "--out", path.to_str().unwrap()];
        ok(&cwgan(&args, dir.path()));
        std::fs::read_to_string(path).unwrap()
    };
    let a = run("a.csv", "4");
    assert_eq!(a, run("b.csv", "4"));
    assert_ne!(a, run("c.csv", "5"));
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 51);
    assert!(lines.iter().all(|l| l.split(',').count() == 13));
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train", "--seed", "3", "--progress", "0", "--out", run.to_str().unwrap()];
    args.extend_from_slice(TINY);
    let out = cwgan(&args, dir.path());
    ok(&out);
    for f in ["model/generator.net", "model/critic.net", "model/model.json", "history.csv", "config.txt", "report.jsonl", "summary.txt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
    let report = std::fs::read_to_string(run.join("report.jsonl")).unwrap();
    for line in report.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("record").is_some());
    }

    // the saved config reproduces the run
    let again = dir.path().join("again");
    let saved = run.join("config.txt");
    let args = ["train", "--config", saved.to_str().unwrap(), "--progress", "0", "--out", again.to_str().unwrap()];
    ok(&cwgan(&args, dir.path()));
    assert_eq!(
        std::fs::read(run.join("model/generator.net")).unwrap(),
        std::fs::read(again.join("model/generator.net")).unwrap()
    );

    let eval = dir.path().join("eval");
    let mut args = vec!["evaluate", "--model", run.to_str().unwrap(), "--out", eval.to_str().unwrap()];
    args.extend_from_slice(&TINY[2..]);
    ok(&cwgan(&args, dir.path()));
    assert!(eval.join("report.jsonl").is_file());
}

#[test]
fn series_forecast_has_one_row_per_embedded_day() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("temps.csv");
    let mut text = String::from("date,berlin,hamburg\n");
    let day0 = chrono::NaiveDate::from_ymd_opt(2015, 3, 1).unwrap();
    for i in 0..60u64 {
        let t = 10.0 + 6.0 * (i as f64 / 7.0).cos();
        text += &format!("{},{t:.2},{:.2}\n", day0 + chrono::Days::new(i), t - 0.4);
    }
    std::fs::write(&csv, text).unwrap();
    let run = dir.path().join("run");
    let common = [
        "--set", "data.kind=series",
        "--set", "data.n_train=45",
        "--set", "data.statistic=component:0",
        "--set", "train.epochs=2",
        "--set", "train.batch=8",
        "--set", "arch.gen.widths=6",
        "--set", "arch.critic.widths=6",
        "--set", "eval.N_train=100",
        "--set", "eval.N_test=100",
        "--set", "eval.ot_batch=10",
    ];
    let data = format!("data.path={}", csv.display());
    let mut args = vec!["train", "--progress", "0", "--out", run.to_str().unwrap(), "--set", &data];
    args.extend_from_slice(&common);
    ok(&cwgan(&args, dir.path()));
    let intervals = std::fs::read_to_string(run.join("intervals.csv")).unwrap();
    assert_eq!(intervals.lines().count(), 1 + 44 + 14);

    let forecast = dir.path().join("forecast.csv");
    let mut args = vec![
        "forecast", "--model", run.to_str().unwrap(), "--series", csv.to_str().unwrap(), "--out", forecast.to_str().unwrap(),
    ];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--set", "eval.sigma_band=3"]);
    ok(&cwgan(&args, dir.path()));
    let rows = std::fs::read_to_string(forecast).unwrap();
    assert_eq!(rows.lines().count(), 1 + 59);
    let first: Vec<&str> = rows.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "2015-03-02");
    let num = |k: usize| first[k].parse::<f64>().unwrap();
    assert!(num(5) < num(6), "band {first:?}");
    // without a band the columns stay empty
    assert!(intervals.lines().nth(1).unwrap().ends_with(",,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| cwgan(args, dir.path()).status.code();
    assert_eq!(code(&["train", "--set", "no.such.key=1"]), Some(2));
    assert_eq!(code(&["train", "--set", "train.lr=fast"]), Some(2));
    assert_eq!(code(&["evaluate", "--model", "missing"]), Some(5));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x1,x2\n1,oops\n").unwrap();
    let data = format!("data.path={}", bad.display());
    assert_eq!(code(&["train", "--set", "data.kind=paired", "--set", &data]), Some(3));
    assert_eq!(code(&["keys"]), Some(0));
}
