use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn iris() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/iris.csv")
        .display()
        .to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn run_smoke_writes_a_ten_row_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = scb(&[
        "run",
        "--dataset",
        &iris(),
        "--agent",
        "SCBTSAgent_Ratio",
        "--runs",
        "1",
        "--horizon",
        "10",
        "--batch-size",
        "5",
        "--seed",
        "3",
        "--out",
        &s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(out.join("SCBTSAgent_Ratio/run_0000.csv")).unwrap();
    assert_eq!(trace.lines().count(), 11);
    assert!(trace.starts_with("t,arm,reward,regret,delta\n"));
    let decisions =
        fs::read_to_string(out.join("SCBTSAgent_Ratio/run_0000_decisions.csv")).unwrap();
    assert_eq!(decisions.lines().count(), 11);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 3);
    assert!(summary["agents"][0]["noncontextual_fraction_mean"].is_number());
    assert!(out.join("dataset_manifest.json").exists());
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn repeated_runs_are_byte_identical_and_comparison_has_two_horizons() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |dir: &Path| {
        vec![
            "run".to_string(),
            "--dataset".into(),
            iris(),
            "--agent".into(),
            "LogisticRegressionTSAgent,meanSCBUCBAgent".into(),
            "--runs".into(),
            "2".into(),
            "--horizon".into(),
            "60".into(),
            "--batch-size".into(),
            "20".into(),
            "--out".into(),
            s(dir),
        ]
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let args = args(d);
        let o = scb(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(tree(&a), tree(&b));
    let cmp = fs::read_to_string(a.join("comparison.csv")).unwrap();
    assert_eq!(cmp.lines().count(), 1 + 2 * 60);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    let out = tmp.path().join("out");
    fs::write(
        &cfg,
        format!(
            "dataset = {:?}\nagent = [\"SCBEGAgent_Diff\"]\nruns = 3\nhorizon = 40\nbatch_size = 10\ndelta = 0.3\nanneal_rate = 0.5\nanneal_epochs = [20]\nseed = 9\nout = {:?}\n",
            iris(),
            s(&out)
        ),
    )
    .unwrap();
    let o = scb(&["run", "--config", &s(&cfg), "--runs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["runs"], 1);
    assert_eq!(summary["config"]["horizon"], 40);
    let trace = fs::read_to_string(out.join("SCBEGAgent_Diff/run_0000.csv")).unwrap();
    let deltas: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(deltas[18], 0.3);
    assert_eq!(deltas[19], 0.15);
}

#[test]
fn errors_map_to_category_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = scb(&["run", "--dataset", &iris(), "--agent", "NoSuchAgent"]);
    assert_eq!(o.status.code(), Some(2));
    let o = scb(&[
        "run",
        "--dataset",
        &iris(),
        "--horizon",
        "10",
        "--batch-size",
        "20",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = scb(&["run", "--dataset", &s(&tmp.path().join("missing.csv"))]);
    assert_eq!(o.status.code(), Some(5));
    let single = tmp.path().join("single.csv");
    fs::write(&single, "x,y\n1,a\n2,a\n").unwrap();
    let o = scb(&["run", "--dataset", &s(&single)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gen_log_then_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("log.csv");
    let o = scb(&[
        "gen-log",
        "--events",
        "3000",
        "--arms",
        "4",
        "--dim",
        "3",
        "--groups",
        "2",
        "--seed",
        "5",
        "--out",
        &s(&log),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let truth = tmp.path().join("log.truth.csv");
    assert!(tmp.path().join("log.manifest.json").exists() && truth.exists());

    let o = scb(&["replay", "--log", &s(&log), "--policy", "fixed:1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["total_count"], 3000);
    assert!(rep["matched_count"].as_u64().unwrap() > 600);

    let greedy = scb(&[
        "replay",
        "--log",
        &s(&log),
        "--policy",
        &format!("greedy:{}", s(&truth)),
    ]);
    assert!(
        greedy.status.success(),
        "{}",
        String::from_utf8_lossy(&greedy.stderr)
    );

    let sweep = tmp.path().join("sweep.csv");
    let o = scb(&[
        "replay",
        "--log",
        &s(&log),
        "--policy",
        &format!("scb:{}", s(&truth)),
        "--fallback",
        "majority:group",
        "--delta-sweep",
        "1,1.5,3",
        "--out",
        &s(&sweep),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&sweep).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text
        .starts_with("delta,matched,total,estimated_rate,standard_error,noncontextual_fraction"));

    let o = scb(&[
        "replay",
        "--log",
        &s(&log),
        "--policy",
        "fixed:0",
        "--delta-sweep",
        "1,2",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn context_free_log_matches_arm_means() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("cf.csv");
    let o = scb(&[
        "gen-log",
        "--events",
        "20000",
        "--arm-means",
        "0.1,0.5,0.9",
        "--dim",
        "2",
        "--seed",
        "1",
        "--out",
        &s(&log),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = scb(&["replay", "--log", &s(&log), "--policy", "fixed:2"]);
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let (est, se) = (
        rep["estimated_rate"].as_f64().unwrap(),
        rep["standard_error"].as_f64().unwrap(),
    );
    assert!((est - 0.9).abs() < 4.0 * se, "{est} ± {se}");
}
