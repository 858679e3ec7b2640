//! End-to-end tests that drive the compiled binary the way a user would.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_synchrony"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn binary");
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        stdout(&out),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn gridinfo_reports_ieee39_shape() {
    let out = run_ok(bin().arg("gridinfo").arg(fixture("ieee39.grid")));
    let text = stdout(&out);
    assert!(text.contains("N=39 E=46 connected"), "got: {text}");
    assert!(text.contains("fingerprint="));
}

#[test]
fn gridinfo_missing_file_exits_with_input_error() {
    let out = bin()
        .arg("gridinfo")
        .arg(fixture("no_such.grid"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gridinfo_malformed_file_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.grid");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = bin().arg("gridinfo").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_rejects_unknown_mode() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("generate")
        .arg(fixture("two_node.grid"))
        .args(["--out"])
        .arg(dir.path().join("d.ds"))
        .args(["--mode", "sideways"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ds");
    let b = dir.path().join("b.ds");
    for (path, threads) in [(&a, "1"), (&b, "4")] {
        run_ok(
            bin()
                .arg("generate")
                .arg(fixture("ten_node.grid"))
                .args(["--threads", threads])
                .args(["--out"])
                .arg(path)
                .args(["--mode", "single", "--per-node", "5", "--window", "21"])
                .args(["--seed", "11"]),
        );
    }
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    assert_eq!(bytes_a, bytes_b);
    assert!(a.with_extension("ds.manifest.json").exists() || {
        let mut os = a.as_os_str().to_owned();
        os.push(".manifest.json");
        PathBuf::from(os).exists()
    });
}

#[test]
fn seed_env_var_matches_explicit_flag() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("flag.ds");
    let b = dir.path().join("env.ds");
    run_ok(
        bin()
            .arg("generate")
            .arg(fixture("two_node.grid"))
            .args(["--out"])
            .arg(&a)
            .args(["--mode", "single", "--per-node", "4", "--window", "11"])
            .args(["--seed", "23"]),
    );
    run_ok(
        bin()
            .env("SYNCHRONY_SEED", "23")
            .arg("generate")
            .arg(fixture("two_node.grid"))
            .args(["--out"])
            .arg(&b)
            .args(["--mode", "single", "--per-node", "4", "--window", "11"]),
    );
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("two.ds");
    let ckpt = dir.path().join("two.ck");
    let hist = dir.path().join("hist.csv");
    run_ok(
        bin()
            .arg("generate")
            .arg(fixture("two_node.grid"))
            .args(["--out"])
            .arg(&ds)
            .args(["--mode", "single", "--per-node", "20", "--window", "33"])
            .args(["--seed", "3"]),
    );
    let out = run_ok(
        bin()
            .arg("train")
            .args(["--grid"])
            .arg(fixture("two_node.grid"))
            .args(["--dataset"])
            .arg(&ds)
            .args(["--out"])
            .arg(&ckpt)
            .args(["--history"])
            .arg(&hist)
            .args(["--epochs", "2", "--batch", "16", "--tc-blocks", "2"])
            .args(["--seed", "3"]),
    );
    assert!(stdout(&out).contains("checkpoint written"));
    let hist_text = std::fs::read_to_string(&hist).unwrap();
    assert!(hist_text.starts_with("epoch,train_loss,train_acc,val_loss,val_acc"));
    assert_eq!(hist_text.lines().count(), 3);

    let eval_out = run_ok(
        bin()
            .arg("eval")
            .args(["--checkpoint"])
            .arg(&ckpt)
            .args(["--dataset"])
            .arg(&ds),
    );
    assert!(stdout(&eval_out).contains("acc="), "got: {}", stdout(&eval_out));

    // Predict on a flat trajectory with enough rows for the model window.
    let traj = dir.path().join("traj.csv");
    let mut csv = String::from("t,delta_0,delta_1,omega_0,omega_1\n");
    for k in 0..33 {
        csv.push_str(&format!("{:.4},0.0,0.5,0.01,-0.01\n", k as f64 * 0.0125));
    }
    std::fs::write(&traj, &csv).unwrap();
    let pred = run_ok(
        bin()
            .arg("predict")
            .args(["--checkpoint"])
            .arg(&ckpt)
            .args(["--trajectory"])
            .arg(&traj),
    );
    assert!(stdout(&pred).contains("verdict="), "got: {}", stdout(&pred));

    // A trajectory shorter than the model window is an input error.
    let short = dir.path().join("short.csv");
    std::fs::write(&short, csv.lines().take(5).collect::<Vec<_>>().join("\n")).unwrap();
    let out = bin()
        .arg("predict")
        .args(["--checkpoint"])
        .arg(&ckpt)
        .args(["--trajectory"])
        .arg(&short)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // A dataset generated from a different grid fails the fingerprint check.
    let other = dir.path().join("other.ds");
    run_ok(
        bin()
            .arg("generate")
            .arg(fixture("ten_node.grid"))
            .args(["--out"])
            .arg(&other)
            .args(["--mode", "single", "--per-node", "2", "--window", "33"])
            .args(["--seed", "3"]),
    );
    let out = bin()
        .arg("eval")
        .args(["--checkpoint"])
        .arg(&ckpt)
        .args(["--dataset"])
        .arg(&other)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn train_with_zero_epochs_still_writes_a_usable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.ds");
    let ckpt = dir.path().join("d.ck");
    run_ok(
        bin()
            .arg("generate")
            .arg(fixture("two_node.grid"))
            .args(["--out"])
            .arg(&ds)
            .args(["--mode", "single", "--per-node", "10", "--window", "17"])
            .args(["--seed", "5"]),
    );
    run_ok(
        bin()
            .arg("train")
            .args(["--grid"])
            .arg(fixture("two_node.grid"))
            .args(["--dataset"])
            .arg(&ds)
            .args(["--out"])
            .arg(&ckpt)
            .args(["--epochs", "0", "--tc-blocks", "1"])
            .args(["--seed", "5"]),
    );
    run_ok(
        bin()
            .arg("eval")
            .args(["--checkpoint"])
            .arg(&ckpt)
            .args(["--dataset"])
            .arg(&ds),
    );
}
