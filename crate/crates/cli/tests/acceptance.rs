//! Acceptance criterion 7: every CLI command, repeated with an identical
//! config and seed, produces byte-identical output CSVs. Also checks the
//! documented CLI conventions (usage text on bad invocations, run.log
//! echo, collect's segment shape).

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_softkoop")
}

fn run(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

/// All .csv files under a directory, relative path -> bytes.
fn collect_csvs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path
                    .strip_prefix(dir)
                    .expect("under root")
                    .display()
                    .to_string();
                out.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    out
}

fn assert_identical_csvs(a: &Path, b: &Path, label: &str) {
    let left = collect_csvs(a);
    let right = collect_csvs(b);
    assert!(!left.is_empty(), "{label}: no CSV outputs found");
    assert_eq!(
        left.keys().collect::<Vec<_>>(),
        right.keys().collect::<Vec<_>>(),
        "{label}: different CSV sets"
    );
    for (name, bytes) in &left {
        assert_eq!(
            bytes, &right[name],
            "{label}: {name} differs between identical runs"
        );
    }
    println!("[acceptance] criterion 7 {label}: {} CSVs byte-identical", left.len());
}

#[test]
fn criterion_7_cli_determinism() {
    let root = tempfile::tempdir().expect("tempdir");
    let dir = root.path();

    // a small config keeps the double runs quick; overrides are arbitrary
    let cfg = dir.join("small.cfg");
    std::fs::write(
        &cfg,
        "T=16\nbench_reps=2\ncampaign_reps=2\noffline_segments=6\nseed=9\n",
    )
    .expect("config written");
    let cfgs = cfg.display().to_string();

    // collect twice
    for out in ["c1", "c2"] {
        let st = run(&["collect", "--config", &cfgs, "--out", out], dir);
        assert!(st.status.success(), "collect failed: {:?}", st);
    }
    assert_identical_csvs(&dir.join("c1"), &dir.join("c2"), "collect");

    // fit twice (model.txt is checked too: only fit_time may differ, so
    // compare the sindy coefficient CSV instead)
    for out in ["f1", "f2"] {
        let st = run(
            &[
                "fit",
                "--config",
                &cfgs,
                "--data",
                "c1/unloaded/segment_00.csv",
                "--estimator",
                "sindy",
                "--out",
                out,
            ],
            dir,
        );
        assert!(st.status.success(), "fit failed: {:?}", st);
    }
    assert_identical_csvs(&dir.join("f1"), &dir.join("f2"), "fit");

    // predict twice (sliding window)
    for out in ["p1", "p2"] {
        let st = run(
            &[
                "predict",
                "--config",
                &cfgs,
                "--data",
                "c1/loaded/trial_0.csv",
                "--nt",
                "3",
                "--out",
                out,
            ],
            dir,
        );
        assert!(st.status.success(), "predict failed: {:?}", st);
    }
    assert_identical_csvs(&dir.join("p1"), &dir.join("p2"), "predict");

    // control twice
    for out in ["t1", "t2"] {
        let st = run(&["control", "--config", &cfgs, "--out", out], dir);
        assert!(st.status.success(), "control failed: {:?}", st);
    }
    assert_identical_csvs(&dir.join("t1"), &dir.join("t2"), "control");

    // plot twice from the same trial log
    for out in ["g1", "g2"] {
        let st = run(
            &["plot", "--config", &cfgs, "--data", "t1/trial.csv", "--out", out],
            dir,
        );
        assert!(st.status.success(), "plot failed: {:?}", st);
    }
    assert_identical_csvs(&dir.join("g1"), &dir.join("g2"), "plot");

    // bench twice (single window size so the double run stays modest)
    for out in ["b1", "b2"] {
        let st = run(&["bench", "--config", &cfgs, "--nt", "3", "--out", out], dir);
        assert!(st.status.success(), "bench failed: {:?}", st);
    }
    assert_identical_csvs(&dir.join("b1"), &dir.join("b2"), "bench");

    // campaign twice (one cell)
    for out in ["k1", "k2"] {
        let st = run(
            &[
                "campaign",
                "--config",
                &cfgs,
                "--layout",
                "symmetric",
                "--object",
                "6",
                "--out",
                out,
            ],
            dir,
        );
        assert!(st.status.success(), "campaign failed: {:?}", st);
    }
    assert_identical_csvs(&dir.join("k1"), &dir.join("k2"), "campaign");

    println!("[acceptance] criterion 7 PASS: all commands byte-identical per (config, seed)");
}

#[test]
fn cli_conventions() {
    let root = tempfile::tempdir().expect("tempdir");
    let dir = root.path();

    // no arguments: usage text, nonzero exit
    let out = run(&[], dir);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "expected usage text, got {text}");

    // unknown flag rejected
    let out = run(&["control", "--frobnicate"], dir);
    assert!(!out.status.success());

    // config errors name the key and exit nonzero
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "H_p=zero\n").expect("config written");
    let out = run(&["control", "--config", &cfg.display().to_string()], dir);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("H_p"), "error should name the key: {text}");

    // collect writes 16 s constant-input segments at 2 Hz and a run.log
    // echoing the resolved config
    let st = run(&["collect", "--seed", "4", "--out", "od"], dir);
    assert!(st.status.success());
    let seg = std::fs::read_to_string(dir.join("od/unloaded/segment_00.csv")).expect("segment");
    let rows: Vec<&str> = seg.lines().skip(1).collect();
    assert_eq!(rows.len(), 32, "16 s at 2 Hz is 32 samples");
    let first: Vec<&str> = rows[0].split(',').collect();
    let last: Vec<&str> = rows[31].split(',').collect();
    assert_eq!(first[0], "0");
    assert_eq!(last[0], "15.5");
    // constant input per segment
    assert_eq!(first[10], last[10]);
    assert_eq!(first[11], last[11]);

    let log = std::fs::read_to_string(dir.join("od/run.log")).expect("run.log");
    assert!(log.contains("command=collect"));
    assert!(log.contains("seed=4"));
    assert!(log.contains("N_T=5"));
    assert!(log.contains("H_p=3"));
    println!("[acceptance] cli conventions PASS");
}
