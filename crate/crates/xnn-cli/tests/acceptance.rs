//! Acceptance suite.
//!
//! One test per criterion; each prints a `[acceptance] criterion N (...):
//! PASS` line with its own wall time (run with `--nocapture` to see them).
//! The expensive criteria serialize on a shared lock so their timing and
//! memory stay meaningful, and the deep-task training runs are shared
//! between criteria 3 and 4.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use rayon::prelude::*;

use xnn_core::autodiff::{grad_check, primitive_grad_battery, Tape, Tensor, ValueId};
use xnn_core::baseline::Logistic;
use xnn_core::checkpoint;
use xnn_core::data::{
    load_csv, save_csv, split, standardize, synth_deep, synth_shallow, Dataset, LabelColumn,
};
use xnn_core::introspect::attention_report;
use xnn_core::model::{predict, ControlModel, Model, XnnConfig, XnnModel};
use xnn_core::train::{accuracy, auc, evaluate, macro_f1, train, TrainConfig};

static HEAVY: Mutex<()> = Mutex::new(());

fn report(criterion: usize, name: &str, started: Instant) {
    println!(
        "[acceptance] criterion {criterion} ({name}): PASS ({:.1}s)",
        started.elapsed().as_secs_f64()
    );
}

fn seeded_input(rows: usize, cols: usize, seed: u64) -> Tensor {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x5eed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

// ── criterion 1 ──────────────────────────────────────────────────────

#[test]
fn criterion_1_gradient_correctness() {
    let _guard = HEAVY.lock().unwrap();
    let started = Instant::now();
    let eps = 1e-5;

    // Every autodiff primitive across 20 seeds.
    let mut worst_primitive = 0.0f64;
    for seed in 0..20 {
        worst_primitive = worst_primitive.max(primitive_grad_battery(seed, eps).unwrap());
    }
    assert!(
        worst_primitive < 1e-6,
        "primitive gradients off by {worst_primitive}"
    );

    // Full forward + loss on the tiny model, differentiating every
    // parameter and the input, across 20 seeds. The 0.3 slope keeps the
    // doubly-attenuated trunk gradients above the central-difference noise
    // floor; the backward code paths are identical to the default slope.
    let mut worst_model = 0.0f64;
    for seed in 0..20u64 {
        let mut cfg = XnnConfig::new(10, 3, 16, 8, 3, seed).with_heads(2);
        cfg.leaky_alpha = 0.3;
        let model = XnnModel::new(cfg).unwrap();
        let mut inputs: Vec<Tensor> = model
            .named_params()
            .iter()
            .map(|(_, t)| (*t).clone())
            .collect();
        let n_params = inputs.len();
        inputs.push(seeded_input(2, 10, seed));
        let labels = vec![(seed % 3) as usize, ((seed + 1) % 3) as usize];

        let err = grad_check(
            move |tape: &mut Tape, ids: &[ValueId]| {
                let fwd = model.forward_from(tape, &ids[..n_params], ids[n_params])?;
                tape.cross_entropy(fwd.logits, &labels)
            },
            &inputs,
            eps,
        )
        .unwrap();
        worst_model = worst_model.max(err);
    }
    assert!(
        worst_model < 1e-4,
        "full-model gradient off by {worst_model}"
    );
    assert!(
        started.elapsed().as_secs_f64() < 30.0,
        "criterion 1 took {:.1}s, budget 30s",
        started.elapsed().as_secs_f64()
    );
    report(1, "gradient correctness", started);
}

// ── criterion 2 ──────────────────────────────────────────────────────

#[test]
fn criterion_2_attention_normalization() {
    let started = Instant::now();
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(2024);
    for trial in 0..100u64 {
        let k = rng.random_range(1..=4);
        let heads = [1usize, 2, 4][rng.random_range(0..3)];
        let dh = rng.random_range(1..=3);
        let input_dim = rng.random_range(2..=12);
        let base_width = rng.random_range(8..=32usize).next_power_of_two();
        let classes = rng.random_range(2..=4);
        let cfg = XnnConfig::new(input_dim, k, base_width, heads * dh, classes, trial)
            .with_heads(heads);
        let model = XnnModel::new(cfg).unwrap();

        let batch = rng.random_range(1..=3);
        let x = seeded_input(batch, input_dim, trial);
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &x).unwrap();
        for head in &fwd.attention {
            for &w in head {
                let t = tape.value(w);
                for r in 0..t.rows() {
                    let sum: f64 = t.row(r).iter().sum();
                    assert!(
                        (sum - 1.0).abs() < 1e-10,
                        "attention row sums to {sum} (trial {trial})"
                    );
                }
            }
        }

        let labels = (0..batch).map(|i| i % classes).collect::<Vec<_>>();
        let ds = Dataset::new(
            x.data().to_vec(),
            batch,
            input_dim,
            labels,
            (0..classes).map(|c| c.to_string()).collect(),
        )
        .unwrap();
        let rep = attention_report(&model, &ds).unwrap();
        let sum: f64 = rep.stress.iter().sum();
        assert!((sum - 1.0).abs() < 1e-8, "stress sums to {sum} (trial {trial})");
    }
    assert!(started.elapsed().as_secs_f64() < 10.0);
    report(2, "attention normalization", started);
}

// ── criteria 3 and 4: shared experiment runs ─────────────────────────

const TASK_SAMPLES: usize = 2000;
const TASK_DIM: usize = 32;
const TASK_EPOCHS: usize = 200;
const TASK_SEEDS: u64 = 5;

fn task_model_config(seed: u64) -> XnnConfig {
    XnnConfig::new(TASK_DIM, 3, 32, 16, 2, seed).with_heads(8)
}

struct TaskRun {
    stress: Vec<f64>,
    xnn_f1: f64,
    control_f1: f64,
    xnn_acc: f64,
    logistic_acc: f64,
}

fn run_task(deep: bool, seed: u64, with_control: bool) -> TaskRun {
    let raw = if deep {
        synth_deep(TASK_SAMPLES, TASK_DIM, seed).unwrap()
    } else {
        synth_shallow(TASK_SAMPLES, TASK_DIM, seed).unwrap()
    };
    let (raw_train, raw_val) = split(&raw, 0.8, seed).unwrap();
    let logistic_acc = Logistic::fit(&raw_train, 400, 0.5).unwrap().accuracy(&raw_val);
    let (train_set, val_set, _) = standardize(raw_train, raw_val).unwrap();

    let tcfg = TrainConfig::new(TASK_EPOCHS, seed);
    let mut model = XnnModel::new(task_model_config(seed)).unwrap();
    train(&mut model, &train_set, &val_set, &tcfg).unwrap();
    let metrics = evaluate(&model, &val_set).unwrap();
    let stress = attention_report(&model, &val_set).unwrap().stress;
    let prediction = predict(&model, &val_set.features_tensor()).unwrap();
    let xnn_acc = accuracy(&prediction.classes, val_set.labels());

    let control_f1 = if with_control {
        let mut control = ControlModel::new(task_model_config(seed)).unwrap();
        train(&mut control, &train_set, &val_set, &tcfg).unwrap();
        evaluate(&control, &val_set).unwrap().macro_f1
    } else {
        f64::NAN
    };

    TaskRun {
        stress,
        xnn_f1: metrics.macro_f1,
        control_f1,
        xnn_acc,
        logistic_acc,
    }
}

fn deep_runs() -> &'static Vec<TaskRun> {
    static RUNS: OnceLock<Vec<TaskRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let _guard = HEAVY.lock().unwrap();
        (0..TASK_SEEDS)
            .into_par_iter()
            .map(|seed| run_task(true, seed, true))
            .collect()
    })
}

fn shallow_runs() -> &'static Vec<TaskRun> {
    static RUNS: OnceLock<Vec<TaskRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let _guard = HEAVY.lock().unwrap();
        (0..TASK_SEEDS)
            .into_par_iter()
            .map(|seed| run_task(false, seed, false))
            .collect()
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_3_attention_allocation_follows_task_depth() {
    let started = Instant::now();
    let shallow = shallow_runs();
    let deep = deep_runs();

    let shallow_s0 = mean(shallow.iter().map(|r| r.stress[0]));
    let deep_s0 = mean(deep.iter().map(|r| r.stress[0]));
    let shallow_s2 = mean(shallow.iter().map(|r| r.stress[2]));
    let deep_s2 = mean(deep.iter().map(|r| r.stress[2]));
    println!(
        "  stress[0]: shallow {shallow_s0:.4} vs deep {deep_s0:.4}; \
         stress[2]: deep {deep_s2:.4} vs shallow {shallow_s2:.4}"
    );
    assert!(
        shallow_s0 > deep_s0,
        "shallow-task first-layer stress {shallow_s0} does not exceed deep-task {deep_s0}"
    );
    assert!(
        deep_s2 > shallow_s2,
        "deep-task last-layer stress {deep_s2} does not exceed shallow-task {shallow_s2}"
    );
    assert!(started.elapsed().as_secs_f64() < 600.0);
    report(3, "attention allocation hypothesis", started);
}

#[test]
fn criterion_4_xnn_beats_control_and_shallow_baseline() {
    let started = Instant::now();
    let deep = deep_runs();
    let xnn_f1 = mean(deep.iter().map(|r| r.xnn_f1));
    let control_f1 = mean(deep.iter().map(|r| r.control_f1));
    let acc_margin = mean(deep.iter().map(|r| r.xnn_acc - r.logistic_acc));
    println!("  macro F1: xnn {xnn_f1:.4} vs control {control_f1:.4}; accuracy margin over logistic {acc_margin:+.4}");
    assert!(
        xnn_f1 >= control_f1,
        "x-NN macro F1 {xnn_f1} below control {control_f1}"
    );
    assert!(
        acc_margin >= 0.2,
        "accuracy margin over the logistic baseline is only {acc_margin}"
    );
    assert!(started.elapsed().as_secs_f64() < 600.0);
    report(4, "x-NN vs control", started);
}

// ── criterion 5 ──────────────────────────────────────────────────────

#[test]
fn criterion_5_overfits_random_labels() {
    let started = Instant::now();
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(55);
    let n = 16;
    let dim = 8;
    let features: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let ds = Dataset::new(
        features,
        n,
        dim,
        labels,
        vec!["a".into(), "b".into(), "c".into()],
    )
    .unwrap();

    let cfg = XnnConfig::new(dim, 3, 32, 16, 3, 55).with_heads(4);
    let mut model = XnnModel::new(cfg).unwrap();
    let mut tcfg = TrainConfig::new(2000, 55);
    tcfg.batch_size = 16;
    // adam at lr 1e-3 are the TrainConfig defaults
    let history = train(&mut model, &ds, &ds, &tcfg).unwrap();
    let best = history
        .records
        .iter()
        .map(|r| r.train_loss)
        .fold(f64::INFINITY, f64::min);
    assert!(
        best < 0.01,
        "train loss only reached {best} within 2000 epochs"
    );
    assert!(started.elapsed().as_secs_f64() < 60.0);
    report(5, "overfit capability", started);
}

// ── criterion 6 ──────────────────────────────────────────────────────

// Independent exhaustive oracles, deliberately re-derived here.
fn auc_pairwise(scores: &[f64], truth: &[usize]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if truth[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if truth[j] != 0 {
                continue;
            }
            pairs += 1.0;
            wins += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

fn macro_f1_confusion(pred: &[usize], truth: &[usize], c: usize) -> f64 {
    let mut confusion = vec![vec![0usize; c]; c];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let mut total = 0.0;
    for class in 0..c {
        let tp = confusion[class][class];
        let fp: usize = (0..c).filter(|&t| t != class).map(|t| confusion[t][class]).sum();
        let fn_: usize = (0..c).filter(|&p| p != class).map(|p| confusion[class][p]).sum();
        if 2 * tp + fp + fn_ > 0 {
            total += 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        }
    }
    total / c as f64
}

#[test]
fn criterion_6_metric_oracles() {
    let started = Instant::now();
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(66);

    for _ in 0..1000 {
        let n = rng.random_range(2..40);
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..20)) / 20.0)
            .collect();
        let mut truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        truth[0] = 0;
        truth[n - 1] = 1;
        let fast = auc(&scores, &truth).unwrap();
        let slow = auc_pairwise(&scores, &truth);
        assert!((fast - slow).abs() < 1e-12, "auc {fast} vs oracle {slow}");
    }

    for _ in 0..1000 {
        let c = rng.random_range(2..6);
        let n = rng.random_range(1..50);
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let fast = macro_f1(&pred, &truth, c).unwrap();
        let slow = macro_f1_confusion(&pred, &truth, c);
        assert!((fast - slow).abs() < 1e-12, "f1 {fast} vs oracle {slow}");
    }

    // the worked examples hold exactly
    let f1 = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
    assert!((f1 - 1.0 / 3.0).abs() < 1e-15);
    let a = auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
    assert!((a - 0.75).abs() < 1e-15);

    report(6, "metric oracles", started);
}

// ── criterion 7 ──────────────────────────────────────────────────────

fn xnn_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xnn"))
}

fn run_train(config: &Path) {
    let out = xnn_bin()
        .args(["train", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn criterion_7_determinism_and_roundtrips() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    // data file via the library; CSV load/save/load must be a fixed point
    let data_path = dir.path().join("task.csv");
    save_csv(&synth_deep(300, 8, 11).unwrap(), &data_path).unwrap();
    let label = LabelColumn::Name("label".into());
    let loaded = load_csv(&data_path, &label, true).unwrap();
    let resaved = dir.path().join("resaved.csv");
    save_csv(&loaded, &resaved).unwrap();
    let reloaded = load_csv(&resaved, &label, true).unwrap();
    assert_eq!(loaded.labels(), reloaded.labels());
    assert_eq!(loaded.class_names(), reloaded.class_names());
    for i in 0..loaded.len() {
        assert_eq!(loaded.row(i), reloaded.row(i));
    }

    // identical train runs -> byte-identical artifacts
    let make_config = |out_dir: &Path| -> PathBuf {
        let path = dir.path().join(format!(
            "cfg_{}.json",
            out_dir.file_name().unwrap().to_str().unwrap()
        ));
        let config = serde_json::json!({
            "data_csv": data_path,
            "label_column": "label",
            "output_dir": out_dir,
            "split_seed": 11,
            "model": {"k": 3, "base_width": 16, "d_model": 8, "heads": 2, "seed": 11},
            "train": {"epochs": 5, "batch_size": 32, "seed": 11}
        });
        std::fs::write(&path, config.to_string()).unwrap();
        path
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_train(&make_config(&out_a));
    run_train(&make_config(&out_b));
    for file in [
        "history_xnn.csv",
        "history_control.csv",
        "xnn.ckpt",
        "control.ckpt",
    ] {
        assert_eq!(
            std::fs::read(out_a.join(file)).unwrap(),
            std::fs::read(out_b.join(file)).unwrap(),
            "{file} differs across identical runs"
        );
    }

    // checkpoint save -> load -> save byte identity
    let ckpt_path = out_a.join("xnn.ckpt");
    let ckpt = checkpoint::load(&ckpt_path).unwrap();
    let resaved_ckpt = dir.path().join("resaved.ckpt");
    checkpoint::save(
        ckpt.model.as_model(),
        ckpt.standardization.as_ref(),
        &ckpt.class_names,
        &resaved_ckpt,
    )
    .unwrap();
    assert_eq!(
        std::fs::read(&ckpt_path).unwrap(),
        std::fs::read(&resaved_ckpt).unwrap()
    );

    // heatmap export round-trips through decimal within 1e-15
    let attn_dir = dir.path().join("attn");
    let out = xnn_bin()
        .args([
            "attn",
            "--checkpoint",
            ckpt_path.to_str().unwrap(),
            "--data",
            data_path.to_str().unwrap(),
            "--out",
            attn_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    {
        let checkpoint::AnyModel::Xnn(model) = &ckpt.model else {
            panic!("expected xnn checkpoint")
        };
        let eval_ds = {
            let ds = loaded.remap_classes(&ckpt.class_names).unwrap();
            xnn_core::data::apply_standardization(ds, ckpt.standardization.as_ref().unwrap())
        };
        let rep = attention_report(model, &eval_ds).unwrap();
        for (h, map) in rep.per_head.iter().enumerate() {
            let text =
                std::fs::read_to_string(attn_dir.join(format!("head_{h}.csv"))).unwrap();
            let parsed: Vec<f64> = text
                .lines()
                .flat_map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()))
                .collect();
            for (a, b) in parsed.iter().zip(map.data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    // eval on the run's own validation split reproduces the final history row
    let (_, raw_val) = split(&loaded, 0.8, 11).unwrap();
    let val_path = dir.path().join("val.csv");
    save_csv(&raw_val, &val_path).unwrap();
    let out = xnn_bin()
        .args([
            "eval",
            "--checkpoint",
            ckpt_path.to_str().unwrap(),
            "--data",
            val_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let metric = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .unwrap_or_else(|| panic!("missing {key} in {text}"))
            .parse()
            .unwrap()
    };
    let history = std::fs::read_to_string(out_a.join("history_xnn.csv")).unwrap();
    let last: Vec<&str> = history.lines().last().unwrap().split(',').collect();
    let (val_loss, val_f1, val_auc): (f64, f64, f64) = (
        last[2].parse().unwrap(),
        last[3].parse().unwrap(),
        last[4].parse().unwrap(),
    );
    assert!((metric("loss") - val_loss).abs() < 1e-12);
    assert!((metric("macro_f1") - val_f1).abs() < 1e-12);
    assert!((metric("auc") - val_auc).abs() < 1e-12);

    assert!(started.elapsed().as_secs_f64() < 120.0);
    report(7, "determinism and round-trips", started);
}

// ── criterion 8 ──────────────────────────────────────────────────────

fn current_rss_gib() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kib: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib / (1024.0 * 1024.0))
}

/// Samples VmRSS until dropped; this kernel has no VmHWM field.
struct RssWatch {
    peak: std::sync::Arc<Mutex<f64>>,
    stop: std::sync::Arc<std::sync::atomic::AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl RssWatch {
    fn start() -> RssWatch {
        let peak = std::sync::Arc::new(Mutex::new(0.0f64));
        let stop = std::sync::Arc::new(std::sync::atomic::AtomicBool::new(false));
        let (peak2, stop2) = (peak.clone(), stop.clone());
        let handle = std::thread::spawn(move || {
            while !stop2.load(std::sync::atomic::Ordering::Relaxed) {
                if let Some(now) = current_rss_gib() {
                    let mut p = peak2.lock().unwrap();
                    if now > *p {
                        *p = now;
                    }
                }
                std::thread::sleep(std::time::Duration::from_millis(25));
            }
        });
        RssWatch {
            peak,
            stop,
            handle: Some(handle),
        }
    }

    fn finish(mut self) -> f64 {
        self.stop.store(true, std::sync::atomic::Ordering::Relaxed);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
        *self.peak.lock().unwrap()
    }
}

#[test]
fn criterion_8_prcv_scale_shape_handling() {
    let _guard = HEAVY.lock().unwrap();
    let started = Instant::now();
    let watch = RssWatch::start();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prcv_scale.csv");

    {
        let ds = synth_shallow(2600, 28169, 0).unwrap();
        save_csv(&ds, &path).unwrap();
    }

    let ds = load_csv(&path, &LabelColumn::Name("label".into()), true).unwrap();
    assert_eq!(ds.len(), 2600);
    assert_eq!(ds.feature_dim(), 28169);
    let (train_set, val_set) = split(&ds, 0.8, 0).unwrap();
    assert_eq!(train_set.len(), 2080);
    assert_eq!(val_set.len(), 520);
    drop(ds);

    let cfg = XnnConfig::new(28169, 3, 64, 16, 2, 0).with_heads(8);
    let mut model = XnnModel::new(cfg).unwrap();
    let tcfg = TrainConfig::new(1, 0);
    let history = train(&mut model, &train_set, &val_set, &tcfg).unwrap();
    assert_eq!(history.records.len(), 1);
    assert!(history.records[0].train_loss.is_finite());

    let elapsed = started.elapsed().as_secs_f64();
    let peak = watch.finish();
    if peak > 0.0 {
        println!("  peak RSS {peak:.2} GiB, elapsed {elapsed:.1}s");
        assert!(peak < 4.0, "peak RSS {peak:.2} GiB exceeds the 4 GB budget");
    }
    assert!(elapsed < 300.0, "criterion 8 took {elapsed:.1}s, budget 300s");
    report(8, "PRCV-scale dataset handling", started);
}
