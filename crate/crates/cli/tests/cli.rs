//! End-to-end tests of the `fgsa` binary: commands, file outputs, exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn fgsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgsa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let out_dir = dir.join("run");
    let text = format!(
        "[backbone]\nimage_size = 32\npatch_size = 8\nembed_dim = 16\ndepth = 2\nheads = 2\n\
         group_count = 2\nlayers_per_group = 1\n\
         [adapter]\ndim = 16\nheads = 2\nffn_mult = 2\n\
         [train]\nepochs = 1\nmax_steps = 2\nbatch = 2\nseed = 5\n\
         [data]\nsize = 32\nn_train = 4\nn_test = 2\nseed = 5\n\
         [out]\ndir = {}\n",
        out_dir.display()
    );
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

fn count_pngs(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.path().extension().map(|x| x == "png").unwrap_or(false))
                .count()
        })
        .unwrap_or(0)
}

#[test]
fn gen_data_writes_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let result = fgsa(&[
        "gen-data",
        "--out",
        out.to_str().unwrap(),
        "--n",
        "6",
        "--n-test",
        "3",
        "--size",
        "32",
        "--seed",
        "3",
        "--contrast",
        "0.0",
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert_eq!(count_pngs(&out.join("train/images")), 6);
    assert_eq!(count_pngs(&out.join("train/masks")), 6);
    assert_eq!(count_pngs(&out.join("test/images")), 3);
    assert_eq!(count_pngs(&out.join("test/masks")), 3);
}

#[test]
fn gen_data_deterministic_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for tag in ["a", "b"] {
        let out = dir.path().join(tag);
        let result = fgsa(&[
            "gen-data",
            "--out",
            out.to_str().unwrap(),
            "--n",
            "2",
            "--n-test",
            "1",
            "--size",
            "32",
            "--seed",
            "11",
        ]);
        assert!(result.status.success());
    }
    let a = std::fs::read(dir.path().join("a/train/images/train_0000.png")).unwrap();
    let b = std::fs::read(dir.path().join("b/train/images/train_0000.png")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn train_eval_dump_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let cfg_s = cfg.to_str().unwrap();

    let train = fgsa(&["train", "--config", cfg_s]);
    assert!(
        train.status.success(),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    let stdout = String::from_utf8_lossy(&train.stdout);
    assert!(stdout.contains("loss"), "missing loss log:\n{stdout}");
    let ckpt = dir.path().join("run/adapter.ckpt");
    assert!(ckpt.exists());
    assert!(dir.path().join("run/backbone.ckpt").exists());
    assert!(dir.path().join("run/train.log").exists());

    let report_path = dir.path().join("run/eval.json");
    let eval = fgsa(&[
        "eval",
        "--config",
        cfg_s,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--split",
        "test",
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert!(
        eval.status.success(),
        "{}",
        String::from_utf8_lossy(&eval.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    for key in ["s_alpha", "e_phi", "f_w_beta", "mae", "n_samples"] {
        assert!(report.get(key).is_some(), "report missing {key}");
    }
    assert_eq!(report["n_samples"], 2);

    let dump_dir = dir.path().join("run/dumps");
    let dump = fgsa(&[
        "dump",
        "--config",
        cfg_s,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--split",
        "test",
        "--index",
        "0",
        "--out",
        dump_dir.to_str().unwrap(),
    ]);
    assert!(
        dump.status.success(),
        "{}",
        String::from_utf8_lossy(&dump.stderr)
    );
    // 32x32 config: 2 FBNM attention maps + 2 FBFE maps + prediction + 3 energies
    assert_eq!(count_pngs(&dump_dir), 8);
}

#[test]
fn eval_oracle_mode_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let eval = fgsa(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--split",
        "test",
        "--oracle",
    ]);
    assert!(eval.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&eval.stdout).expect("stdout is the JSON report");
    assert!((report["s_alpha"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(report["mae"].as_f64().unwrap() < 1e-9);
}

#[test]
fn eval_direct_scoring_of_mask_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    assert!(fgsa(&[
        "gen-data",
        "--out",
        out.to_str().unwrap(),
        "--n",
        "2",
        "--n-test",
        "1",
        "--size",
        "32",
    ])
    .status
    .success());
    // score the masks against themselves: perfect by construction
    let masks = out.join("train/masks");
    let eval = fgsa(&[
        "eval",
        "--pred",
        masks.to_str().unwrap(),
        "--gt",
        masks.to_str().unwrap(),
    ]);
    assert!(
        eval.status.success(),
        "{}",
        String::from_utf8_lossy(&eval.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!((report["f_w_beta"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn sweep_emits_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let csv_path = dir.path().join("sweep.csv");
    let sweep = fgsa(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        "d",
        "--values",
        "1,2",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(
        sweep.status.success(),
        "{}",
        String::from_utf8_lossy(&sweep.stderr)
    );
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("param_value,s_alpha,e_phi,f_w_beta,mae"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn gradcheck_command_passes() {
    let result = fgsa(&["gradcheck", "--seeds", "1"]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("fgsattn_forward"));
    assert!(stdout.contains("pass"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn exit_codes_follow_contract() {
    // validation failure: malformed config value
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[backbone]\ndepth = banana\n").unwrap();
    let result = fgsa(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));

    // validation failure: invalid sweep parameter
    let cfg = write_tiny_config(dir.path());
    let result = fgsa(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        "nope",
        "--values",
        "1",
    ]);
    assert_eq!(result.status.code(), Some(1));

    // validation failure: unknown CLI flags
    let result = fgsa(&["train", "--no-such-flag"]);
    assert_eq!(result.status.code(), Some(1));

    // runtime error: checkpoint file does not exist
    let result = fgsa(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        dir.path().join("missing.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));

    // incompatible checkpoint (different frozen backbone) is a runtime error
    let cfg_s = cfg.to_str().unwrap();
    assert!(fgsa(&["train", "--config", cfg_s]).status.success());
    let other_cfg = dir.path().join("other.cfg");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("seed = 5", "seed = 6");
    std::fs::write(&other_cfg, text).unwrap();
    let result = fgsa(&[
        "eval",
        "--config",
        other_cfg.to_str().unwrap(),
        "--checkpoint",
        dir.path().join("run/adapter.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}
