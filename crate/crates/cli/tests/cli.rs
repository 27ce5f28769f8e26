use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ckl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ckl"))
        .args(args)
        .output()
        .expect("run ckl")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&ckl(&["--help"])), 0);
    assert_eq!(code(&ckl(&["frobnicate"])), 1);
    assert_eq!(code(&ckl(&["bounds", "--samples", "many"])), 1);
    assert_eq!(code(&ckl(&["bounds", "--samples", "0"])), 1);
    assert_eq!(code(&ckl(&["train", "--warmup-loss", "kl"])), 1);
    assert_eq!(code(&ckl(&["compare", "--losses", "kl"])), 1);
}

#[test]
fn small_gradcheck_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.json");
    let run = ckl(&[
        "gradcheck",
        "--draws",
        "20",
        "--seed",
        "3",
        "--out",
        path_arg(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["draws"], 20);
    assert_eq!(v["passed"], true);
}

#[test]
fn weights_demo_table() {
    let run = ckl(&["weights", "--gamma", "5", "--alpha", "1"]);
    assert_eq!(code(&run), 0);
    let text = String::from_utf8(run.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("doc_index,kind,q,weight"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows.iter().filter(|r| r[1] == "positive").count(), 3);
    // alpha = 0 and gamma = 1 reduce negative weights to q itself.
    let run = ckl(&["weights", "--gamma", "1", "--alpha", "0"]);
    let text = String::from_utf8(run.stdout).unwrap();
    for line in text.lines().skip(1).filter(|l| l.contains("negative")) {
        let f: Vec<f64> = line
            .split(',')
            .skip(2)
            .map(|x| x.parse().unwrap())
            .collect();
        assert!((f[0] - f[1]).abs() < 1e-12, "{line}");
    }
}

#[test]
fn weights_from_instances_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.jsonl");
    fs::write(
        &path,
        concat!(
            r#"{"query_id":"a","positives":[{"doc_id":"d1","teacher_score":1.0,"student_score":0.5}],"#,
            r#""negatives":[{"doc_id":"d2","teacher_score":0.0,"student_score":0.9},"#,
            r#"{"doc_id":"d3","teacher_score":-1.0,"student_score":-0.2}]}"#,
            "\n"
        ),
    )
    .unwrap();
    let run = ckl(&["weights", "--instances", path_arg(&path), "--query", "a"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8(run.stdout).unwrap().lines().count(), 4);
    assert_eq!(
        code(&ckl(&[
            "weights",
            "--instances",
            path_arg(&path),
            "--query",
            "zz"
        ])),
        1
    );
    fs::write(&path, "{not json\n").unwrap();
    assert_eq!(code(&ckl(&["weights", "--instances", path_arg(&path)])), 1);
}

#[test]
fn curves_output_is_monotone_csv() {
    let run = ckl(&["curves", "--gamma", "5", "--beta", "0", "--lambda", "0.1"]);
    assert_eq!(code(&run), 0);
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.starts_with("branch,pq_ratio,q,g_ckl,g_bkl\n"));
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|x| x.parse().unwrap()).collect())
        .collect();
    assert!(rows.len() > 19 * 30);
    assert!(rows.iter().all(|r| r[0] * r[1] <= 1.0 + 1e-12));
    assert_eq!(code(&ckl(&["curves", "--gamma", "0.5"])), 1);
}

#[test]
fn config_file_overrides_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"bounds": {"samples": 500, "seed": 3}}"#).unwrap();
    let out = dir.path().join("b.json");
    let run = ckl(&[
        "bounds",
        "--config",
        path_arg(&cfg),
        "--out",
        path_arg(&out),
    ]);
    assert_eq!(code(&run), 0);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["samples_tested"], 500);
    assert_eq!(v["seed"], 3);

    // Flags win over the file.
    ckl(&[
        "bounds",
        "--config",
        path_arg(&cfg),
        "--samples",
        "200",
        "--out",
        path_arg(&out),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["samples_tested"], 200);

    fs::write(&cfg, r#"{"bounds": {"sample": 500}}"#).unwrap();
    let run = ckl(&["bounds", "--config", path_arg(&cfg)]);
    assert_eq!(code(&run), 1);
    assert!(String::from_utf8_lossy(&run.stderr).contains("sample"));

    assert_eq!(
        code(&ckl(&[
            "bounds",
            "--config",
            path_arg(&dir.path().join("missing.json"))
        ])),
        1
    );
}

#[test]
fn train_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = |name: &str| {
        let csv = dir.path().join(format!("{name}.csv"));
        let json = dir.path().join(format!("{name}.json"));
        (csv, json)
    };
    let (c1, j1) = args("a");
    let (c2, j2) = args("b");
    for (c, j) in [(&c1, &j1), (&c2, &j2)] {
        let run = ckl(&[
            "train",
            "--loss",
            "ckl",
            "--queries",
            "40",
            "--epochs",
            "3",
            "--seed",
            "4",
            "--out",
            path_arg(c),
            "--summary",
            path_arg(j),
        ]);
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    }
    assert_eq!(fs::read(&c1).unwrap(), fs::read(&c2).unwrap());
    assert_eq!(fs::read(&j1).unwrap(), fs::read(&j2).unwrap());
    let text = fs::read_to_string(&c1).unwrap();
    assert!(text.starts_with("step,loss,margin,entropy,mrr10,ndcg10\n"));
    // 30 training queries at batch 32 give one step per epoch.
    assert_eq!(text.lines().count(), 1 + 3);
    // Only the requested outputs remain; no temporaries are left behind.
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 4);
}

#[test]
fn failed_write_leaves_no_partial_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nope").join("g.json");
    let run = ckl(&["gradcheck", "--draws", "2", "--out", path_arg(&out)]);
    assert_eq!(code(&run), 1);
    assert!(!out.exists());
}

#[test]
fn compare_writes_table_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    let json = dir.path().join("c.json");
    let run = ckl(&[
        "compare",
        "--losses",
        "kl,ckl,nll",
        "--seeds",
        "0,1",
        "--queries",
        "40",
        "--epochs",
        "2",
        "--out",
        path_arg(&csv),
        "--summary",
        path_arg(&json),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text
        .lines()
        .nth(2)
        .unwrap()
        .starts_with("ckl(gamma=5,alpha=1),ckl,5,1,2,"));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert_eq!(v["cells"][0]["per_seed"].as_array().unwrap().len(), 2);
}
