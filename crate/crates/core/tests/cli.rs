use std::path::Path;
use std::process::{Command, Output};

fn kscale(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kscale"))
        .args(args)
        .current_dir(dir)
        .env_remove("KSCALE_CACHE")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_curve(dir: &Path, name: &str, scale: f64, offset: f64) {
    let mut text = String::from("bitrate,psnr\n");
    for (r, d) in [
        (500.0, 32.0),
        (1000.0, 35.0),
        (2000.0, 37.5),
        (4000.0, 39.5),
        (8000.0, 41.0),
    ] {
        text.push_str(&format!("{},{}\n", r * scale, d + offset));
    }
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn bdrate_command() {
    let dir = tempfile::tempdir().unwrap();
    write_curve(dir.path(), "a.csv", 1.0, 0.0);
    write_curve(dir.path(), "b.csv", 0.9, 0.0);
    write_curve(dir.path(), "far.csv", 1.0, 30.0);

    let same = kscale(dir.path(), &["bdrate", "a.csv", "a.csv"]);
    assert!(same.status.success());
    assert!(stdout(&same).contains(" 0.00%"), "{}", stdout(&same));

    let scaled = kscale(dir.path(), &["bdrate", "a.csv", "b.csv"]);
    assert!(stdout(&scaled).contains("-10.00%"), "{}", stdout(&scaled));

    let disjoint = kscale(dir.path(), &["bdrate", "a.csv", "far.csv"]);
    assert_eq!(disjoint.status.code(), Some(2));

    let missing = kscale(dir.path(), &["bdrate", "a.csv", "nope.csv"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn optimize_is_deterministic_and_cached() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "optimize",
        "--backend",
        "synthetic",
        "--mode",
        "cbr",
        "--metric",
        "psnr",
        "--synth-clips",
        "10",
        "--seed",
        "7",
        "--cache",
        "cache.jsonl",
        "--parallelism",
        "3",
    ];
    let first = kscale(dir.path(), &args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let results = std::fs::read(dir.path().join("results.jsonl")).unwrap();
    assert_eq!(results.iter().filter(|&&b| b == b'\n').count(), 10);

    let second = kscale(dir.path(), &args);
    assert!(stdout(&second).contains(" 0 fresh encodes"), "{}", stdout(&second));
    assert_eq!(std::fs::read(dir.path().join("results.jsonl")).unwrap(), results);

    // Same run without a cache file still produces the same bytes.
    let other = tempfile::tempdir().unwrap();
    kscale(other.path(), &args[..args.len() - 4]);
    assert_eq!(std::fs::read(other.path().join("results.jsonl")).unwrap(), results);
}

#[test]
fn cache_path_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kscale"))
        .args(["optimize", "--synth-clips", "1", "--no-direct"])
        .env("KSCALE_CACHE", dir.path().join("env-cache.jsonl"))
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("env-cache.jsonl").exists());
}

#[test]
fn empty_manifest_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.csv"), "id,source_path,frame_count,width,height\n").unwrap();
    let out = kscale(dir.path(), &["optimize", "--manifest", "m.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no clips"));

    let bad = kscale(dir.path(), &["optimize", "--k-lo", "3"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn manifest_clips_run_on_the_synthetic_backend() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("m.csv"),
        "id,source_path,frame_count,width,height\nfirst,a.y4m,150,1920,1080\nsecond,b.y4m,150,1920,1080\n",
    )
    .unwrap();
    let out = kscale(
        dir.path(),
        &[
            "optimize",
            "--manifest",
            "m.csv",
            "--mode",
            "crf",
            "--results",
            "r.jsonl",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("r.jsonl")).unwrap();
    let ids: Vec<String> = text
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["clip_id"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(ids, ["first", "second"]);
}

fn result_line(id: &str, pareto_bd: f64, direct_bd: Option<f64>) -> String {
    serde_json::json!({
        "clip_id": id,
        "mode": "CBR",
        "metric": "PSNR",
        "range_results": [],
        "pareto_bd_rate": pareto_bd,
        "direct_fullspan_bd_rate": direct_bd,
        "direct_fullspan_k": direct_bd.map(|_| 0.9),
        "final_gain": (-pareto_bd).max(0.0),
        "encode_count": 0,
        "partial": false
    })
    .to_string()
}

#[test]
fn report_command() {
    let dir = tempfile::tempdir().unwrap();
    let lines = [
        result_line("a", -2.5, Some(-1.5)),
        result_line("b", -0.5, Some(0.2)),
        result_line("c", 0.3, Some(-0.1)),
    ];
    std::fs::write(dir.path().join("r.jsonl"), lines.join("\n") + "\n").unwrap();
    let out = kscale(dir.path(), &["report", "r.jsonl", "--out-dir", "rep"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    assert!(table.contains("CBR PSNR Direct 67% 33% 0.53%"), "{table}");
    assert!(table.contains("CBR PSNR Pareto 67% 33% 1.00%"), "{table}");

    let summary = std::fs::read_to_string(dir.path().join("rep/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let cdf = std::fs::read_to_string(dir.path().join("rep/cdf.csv")).unwrap();
    assert!(cdf.contains("CBR,PSNR,Pareto,0.5,0.666667"), "{cdf}");
    assert!(cdf.contains("CBR,PSNR,Pareto,0.6,0.333333"), "{cdf}");

    // Pareto only: one row per cell.
    let only = [result_line("a", -2.5, None), result_line("b", -0.5, None)];
    std::fs::write(dir.path().join("p.jsonl"), only.join("\n")).unwrap();
    let out = kscale(dir.path(), &["report", "p.jsonl", "--out-dir", "rep2"]);
    assert_eq!(stdout(&out).lines().count(), 2);

    let missing = kscale(dir.path(), &["report", "missing.jsonl"]);
    assert_eq!(missing.status.code(), Some(1));
}
