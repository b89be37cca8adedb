use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn vecomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vecomp"))
        .args(args)
        .env("VECOMP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec![
        "synth",
        "--speakers",
        "6",
        "--utts",
        "5",
        "--dim",
        "12",
        "--seed",
        "7",
        "-o",
        p(&out),
    ];
    args.extend_from_slice(extra);
    let o = vecomp(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn synth_record_count_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    let args = [
        "synth",
        "--speakers",
        "22",
        "--utts",
        "24",
        "--dim",
        "64",
        "--seed",
        "7",
        "--mode",
        "shouted",
        "-o",
        p(&out),
    ];
    assert_eq!(code(&vecomp(&args)), 0);
    let first = fs::read(&out).unwrap();
    assert_eq!(lines(&out).len(), 1056);
    assert_eq!(code(&vecomp(&args)), 0);
    assert_eq!(fs::read(&out).unwrap(), first);

    let manifest: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("c.jsonl.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["subcommand"], "synth");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["params"]["generator"]["n_speakers"], 22);
    assert!(manifest["duration_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn synth_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.conf");
    fs::write(
        &cfg,
        "# zero transfer\ntransfer_mean = 0\ntransfer_noise = 0\ntransfer_speaker_scale = 0\n",
    )
    .unwrap();
    let out = synth(dir.path(), "z.jsonl", &["--config", p(&cfg)]);
    let recs: Vec<Value> = lines(&out)
        .iter()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for pair in recs.chunks(2) {
        assert_eq!(pair[0]["vector"], pair[1]["vector"]);
    }
    let o = vecomp(&[
        "synth",
        "--set",
        "nonsense=1",
        "-o",
        p(&dir.path().join("x.jsonl")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_errors_exit_2() {
    let o = vecomp(&["synth", "--speakers", "3"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(
        code(&vecomp(&["train", "--kind", "mmse", "-o", "m.json"])),
        2
    );
    assert_eq!(code(&vecomp(&["frobnicate"])), 2);
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let o = vecomp(&[
        "train",
        "--corpus",
        p(&missing),
        "-o",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(code(&o), 3);
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{not json}\n").unwrap();
    let o = vecomp(&[
        "train",
        "--corpus",
        p(&bad),
        "-o",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains(":1:"));
}

#[test]
fn train_variants() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.jsonl", &[]);
    let model = dir.path().join("m.json");
    let o = vecomp(&[
        "train",
        "--kind",
        "mmse_v",
        "--corpus",
        p(&corpus),
        "--mode",
        "shouted",
        "-K",
        "2",
        "-L",
        "4",
        "-o",
        p(&model),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(m["kind"], "mmse_v");
    assert_eq!(m["joint"]["K"], 2);
    assert_eq!(m["joint"]["L"], 4);
    assert!(dir.path().join("m.json.manifest.json").exists());

    let ident = dir.path().join("id.json");
    assert_eq!(
        code(&vecomp(&["train", "--kind", "identity", "-o", p(&ident)])),
        0
    );
    let m: Value = serde_json::from_str(&fs::read_to_string(&ident).unwrap()).unwrap();
    assert_eq!(m["kind"], "identity");

    let o = vecomp(&[
        "train",
        "--kind",
        "mmse_v",
        "--corpus",
        p(&corpus),
        "-L",
        "300",
        "-o",
        p(&model),
    ]);
    assert_eq!(code(&o), 2);
    let o = vecomp(&["train", "--kind", "mmse_v", "-o", p(&model)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn compensate_semantics() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.jsonl", &[]);
    let ident = dir.path().join("id.json");
    assert_eq!(
        code(&vecomp(&["train", "--kind", "identity", "-o", p(&ident)])),
        0
    );
    let out = dir.path().join("out.jsonl");
    assert_eq!(
        code(&vecomp(&[
            "compensate",
            "--model",
            p(&ident),
            "--corpus",
            p(&corpus),
            "-o",
            p(&out)
        ])),
        0
    );
    assert_eq!(fs::read(&out).unwrap(), fs::read(&corpus).unwrap());

    let model = dir.path().join("m.json");
    let o = vecomp(&[
        "train",
        "--kind",
        "memlin_pca",
        "--corpus",
        p(&corpus),
        "-K",
        "2",
        "-L",
        "3",
        "-o",
        p(&model),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        code(&vecomp(&[
            "compensate",
            "--model",
            p(&model),
            "--corpus",
            p(&corpus),
            "-o",
            p(&out)
        ])),
        0
    );
    let before = lines(&corpus);
    let after = lines(&out);
    for (b, a) in before.iter().zip(&after) {
        let bv: Value = serde_json::from_str(b).unwrap();
        if bv["mode"] == "normal" {
            assert_eq!(b, a);
        } else {
            assert_ne!(b, a);
        }
    }

    // a normal-only corpus passes through any model
    let normal_only = dir.path().join("n.jsonl");
    let kept: Vec<&String> = before.iter().filter(|l| l.contains("\"normal\"")).collect();
    fs::write(
        &normal_only,
        kept.iter().map(|l| format!("{l}\n")).collect::<String>(),
    )
    .unwrap();
    assert_eq!(
        code(&vecomp(&[
            "compensate",
            "--model",
            p(&model),
            "--corpus",
            p(&normal_only),
            "-o",
            p(&out)
        ])),
        0
    );
    assert_eq!(fs::read(&out).unwrap(), fs::read(&normal_only).unwrap());

    let other = dir.path().join("d.jsonl");
    assert_eq!(
        code(&vecomp(&[
            "synth",
            "--speakers",
            "3",
            "--utts",
            "2",
            "--dim",
            "10",
            "-o",
            p(&other)
        ])),
        0
    );
    let o = vecomp(&[
        "compensate",
        "--model",
        p(&model),
        "--corpus",
        p(&other),
        "-o",
        p(&out),
    ]);
    assert_eq!(code(&o), 4);
}

#[test]
fn evaluate_rows() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.jsonl", &[]);
    let report = dir.path().join("r.csv");
    let o = vecomp(&[
        "evaluate",
        "--corpus",
        p(&corpus),
        "--mode",
        "shouted",
        "--kinds",
        "identity,mmse_v",
        "-K",
        "2",
        "-L",
        "4",
        "-o",
        p(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&report);
    assert_eq!(
        rows[0],
        "scenario,condition,estimator,L,K,n_trials,n_target,eer_percent,threshold"
    );
    assert_eq!(rows.len(), 1 + 8);
    assert!(dir.path().join("r.csv.manifest.json").exists());

    let o = vecomp(&[
        "evaluate",
        "--corpus",
        p(&corpus),
        "--kinds",
        "identity,mmse_v,memlin",
        "-K",
        "2",
        "--sweep-L",
        "2,3,4,6,8",
        "-o",
        p(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&report);
    assert_eq!(rows.len(), 1 + 60);
    let nn: Vec<&str> = rows
        .iter()
        .filter(|r| r.contains(",normal_normal,"))
        .map(|r| r.rsplit(',').nth(1).unwrap())
        .collect();
    assert_eq!(nn.len(), 15);
    assert!(nn.iter().all(|e| *e == nn[0]));

    let o = vecomp(&[
        "evaluate",
        "--corpus",
        p(&corpus),
        "--sweep-L",
        "2,99",
        "-o",
        p(&report),
    ]);
    assert_eq!(code(&o), 2);
    let o = vecomp(&[
        "evaluate",
        "--corpus",
        p(&corpus),
        "-K",
        "500",
        "--kinds",
        "mmse_v",
        "-L",
        "2",
        "-o",
        p(&report),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn evaluate_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.jsonl", &[]);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        let o = vecomp(&[
            "evaluate",
            "--threads",
            threads,
            "--corpus",
            p(&corpus),
            "--kinds",
            "mmse_v,memlin",
            "-K",
            "3",
            "-L",
            "4",
            "-o",
            p(out),
        ]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn trials_and_eer() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.jsonl", &[]);
    let trials = dir.path().join("t.csv");
    let o = vecomp(&[
        "trials",
        "--corpus",
        p(&corpus),
        "--condition",
        "normal_nonneutral",
        "--score",
        "-o",
        p(&trials),
    ]);
    assert_eq!(code(&o), 0);
    let rows = lines(&trials);
    assert_eq!(rows.len(), 1 + 30 * 30);
    assert!(rows[0].ends_with(",target,score"));

    let o = vecomp(&["eer", "--scores", p(&trials)]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["n_trials"], 900);
    assert_eq!(v["n_target"], 6 * 25);
    let eer = v["eer"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&eer));

    let scores = dir.path().join("s.csv");
    fs::write(
        &scores,
        "score,target\n0.8,1\n0.6,1\n0.4,1\n0.7,0\n0.5,0\n0.3,0\n",
    )
    .unwrap();
    let o = vecomp(&["eer", "--scores", p(&scores)]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["eer"].as_f64().unwrap(), 1.0 / 3.0);

    fs::write(&scores, "score,target\n0.8,1\n0.6,1\n").unwrap();
    assert_eq!(code(&vecomp(&["eer", "--scores", p(&scores)])), 4);
    let o = vecomp(&[
        "trials",
        "--corpus",
        p(&corpus),
        "--condition",
        "all_all",
        "--mode",
        "whispered",
        "-o",
        p(&trials),
    ]);
    assert_eq!(code(&o), 2);
}
