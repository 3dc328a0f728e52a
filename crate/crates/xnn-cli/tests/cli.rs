//! Contract tests for the `xnn` binary: exit codes, output files,
//! determinism, and the key=value metric lines.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn xnn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xnn"))
}

fn run(args: &[&str]) -> Output {
    xnn().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, data: &Path, out_dir: &Path, epochs: usize) -> PathBuf {
    let path = dir.join("config.json");
    let config = serde_json::json!({
        "data_csv": data,
        "label_column": "label",
        "output_dir": out_dir,
        "train_fraction": 0.8,
        "split_seed": 3,
        "model": {"k": 2, "base_width": 8, "d_model": 4, "heads": 2, "seed": 3},
        "train": {"epochs": epochs, "batch_size": 16, "seed": 3}
    });
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn synth(dir: &Path, kind: &str, n: usize, seed: u64) -> PathBuf {
    let path = dir.join(format!("{kind}_{n}_{seed}.csv"));
    let out = run(&[
        "synth",
        kind,
        "--n",
        &n.to_string(),
        "--dim",
        "6",
        "--seed",
        &seed.to_string(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "synth failed: {}", stderr(&out));
    path
}

#[test]
fn synth_writes_header_plus_n_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = run(&[
            "synth", "shallow", "--n", "1000", "--dim", "32", "--seed", "1", "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 1001);
    assert!(text.starts_with("f0,"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn synth_below_minimum_exits_2_naming_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "shallow",
        "--n",
        "2",
        "--dim",
        "6",
        "--seed",
        "1",
        "--out",
        dir.path().join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n >= 4"), "stderr: {}", stderr(&out));
}

#[test]
fn train_produces_four_artifacts_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "shallow", 120, 9);
    let out_a = dir.path().join("run_a");
    let out_b = dir.path().join("run_b");

    let cfg_a = write_config(dir.path(), &data, &out_a, 2);
    let out = run(&["train", "--config", cfg_a.to_str().unwrap()]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    for file in [
        "xnn.ckpt",
        "control.ckpt",
        "history_xnn.csv",
        "history_control.csv",
    ] {
        assert!(out_a.join(file).exists(), "missing {file}");
    }
    assert!(stdout(&out).contains("xnn_val_loss="));
    assert!(stdout(&out).contains("loss_delta_abs="));

    let cfg_b = write_config(dir.path(), &data, &out_b, 2);
    let out = run(&["train", "--config", cfg_b.to_str().unwrap()]);
    assert!(out.status.success());
    for file in [
        "xnn.ckpt",
        "control.ckpt",
        "history_xnn.csv",
        "history_control.csv",
    ] {
        assert_eq!(
            std::fs::read(out_a.join(file)).unwrap(),
            std::fs::read(out_b.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
}

#[test]
fn invalid_head_split_exits_2_naming_both_fields() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "shallow", 40, 2);
    let path = dir.path().join("bad.json");
    let config = serde_json::json!({
        "data_csv": data,
        "label_column": "label",
        "output_dir": dir.path().join("out"),
        "model": {"k": 2, "base_width": 8, "d_model": 5, "heads": 2, "seed": 1},
        "train": {"epochs": 1, "seed": 1}
    });
    std::fs::write(&path, config.to_string()).unwrap();
    let out = run(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("d_model") && msg.contains("heads"), "stderr: {msg}");
}

#[test]
fn eval_prints_auc_for_binary_and_fails_cleanly_on_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "deep", 120, 4);
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &data, &out_dir, 2);
    assert!(run(&["train", "--config", cfg.to_str().unwrap()]).status.success());
    let ckpt = out_dir.join("xnn.ckpt");

    // binary task prints an auc= line
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("loss=") && text.contains("macro_f1=") && text.contains("auc="));

    // width mismatch: data with a different feature count -> exit 3
    let narrow = dir.path().join("narrow.csv");
    let out = run(&[
        "synth", "shallow", "--n", "40", "--dim", "4", "--seed", "1", "--out",
        narrow.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        narrow.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));

    // truncated checkpoint -> exit 4
    let broken = dir.path().join("broken.ckpt");
    let bytes = std::fs::read(&ckpt).unwrap();
    std::fs::write(&broken, &bytes[..bytes.len() / 2]).unwrap();
    let out = run(&[
        "eval",
        "--checkpoint",
        broken.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
}

#[test]
fn eval_omits_auc_for_three_class_tasks() {
    let dir = tempfile::tempdir().unwrap();
    // Hand-rolled 3-class file.
    let data = dir.path().join("three.csv");
    let mut text = String::from("f0,f1,f2,f3,f4,f5,label\n");
    for i in 0..60 {
        let cls = i % 3;
        for j in 0..6 {
            let v = (i * 7 + j * 3) % 11;
            text.push_str(&format!("{}.{},", v, (i + j) % 10));
        }
        text.push_str(&format!("c{cls}\n"));
    }
    std::fs::write(&data, text).unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &data, &out_dir, 1);
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&[
        "eval",
        "--checkpoint",
        out_dir.join("xnn.ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("loss=") && !text.contains("auc="), "{text}");
}

#[test]
fn attn_exports_heads_and_stress_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "deep", 100, 6);
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &data, &out_dir, 2);
    assert!(run(&["train", "--config", cfg.to_str().unwrap()]).status.success());

    let attn_a = dir.path().join("attn_a");
    let attn_b = dir.path().join("attn_b");
    let mut sums = Vec::new();
    for attn_dir in [&attn_a, &attn_b] {
        let out = run(&[
            "attn",
            "--checkpoint",
            out_dir.join("xnn.ckpt").to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            attn_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let text = stdout(&out);
        let stress_line = text
            .lines()
            .find(|l| l.starts_with("stress="))
            .expect("stress line");
        let sum: f64 = stress_line["stress=".len()..]
            .split(',')
            .map(|v| v.parse::<f64>().unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-6);
        sums.push(text);
    }
    assert_eq!(sums[0], sums[1]);

    // 2 heads in this config -> head_0, head_1, stress.csv
    let mut files: Vec<String> = std::fs::read_dir(&attn_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, vec!["head_0.csv", "head_1.csv", "stress.csv"]);
    for file in files {
        assert_eq!(
            std::fs::read(attn_a.join(&file)).unwrap(),
            std::fs::read(attn_b.join(&file)).unwrap()
        );
    }

    // attention export from a control checkpoint is a usage error
    let out = run(&[
        "attn",
        "--checkpoint",
        out_dir.join("control.ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("attn_c").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn xnn_seed_env_var_matches_seed_flag() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "shallow", 80, 8);
    let out_env = dir.path().join("via_env");
    let out_flag = dir.path().join("via_flag");

    let cfg = write_config(dir.path(), &data, &out_env, 2);
    let out = xnn()
        .args(["train", "--config", cfg.to_str().unwrap()])
        .env("XNN_SEED", "77")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    let cfg = write_config(dir.path(), &data, &out_flag, 2);
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "77",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    assert_eq!(
        std::fs::read(out_env.join("history_xnn.csv")).unwrap(),
        std::fs::read(out_flag.join("history_xnn.csv")).unwrap()
    );

    // An unparseable env seed is a config error.
    let out = xnn()
        .args(["train", "--config", cfg.to_str().unwrap()])
        .env("XNN_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plot_script_is_emitted_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "shallow", 60, 3);
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &data, &out_dir, 1);
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--emit-plot-script",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let script = std::fs::read_to_string(out_dir.join("plot_history.py")).unwrap();
    assert!(script.contains("history_xnn.csv"));
}

#[test]
fn commands_do_not_mutate_input_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "shallow", 60, 12);
    let before = std::fs::read(&data).unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &data, &out_dir, 1);
    let cfg_bytes = std::fs::read(&cfg).unwrap();
    assert!(run(&["train", "--config", cfg.to_str().unwrap()]).status.success());
    assert!(run(&[
        "eval",
        "--checkpoint",
        out_dir.join("xnn.ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ])
    .status
    .success());
    assert_eq!(std::fs::read(&data).unwrap(), before);
    assert_eq!(std::fs::read(&cfg).unwrap(), cfg_bytes);
}
