//! The four subcommands: dataset synthesis, training (with the matched
//! control), evaluation, and attention export.

use std::path::Path;

use xnn_core::checkpoint::{self, AnyModel, Checkpoint};
use xnn_core::data::{
    apply_standardization, load_csv, save_csv, split, standardize, synth_deep, synth_shallow,
    Dataset, LabelColumn, Standardization,
};
use xnn_core::introspect::{attention_report, export_heatmaps};
use xnn_core::model::{ControlModel, XnnModel};
use xnn_core::train::{evaluate, train, EvalMetrics, History};
use xnn_core::{Error, Result};

use crate::config::ExperimentConfig;

pub enum SynthKind {
    Shallow,
    Deep,
}

pub fn cmd_synth(kind: SynthKind, n: usize, dim: usize, seed: u64, out: &Path) -> Result<()> {
    let ds = match kind {
        SynthKind::Shallow => synth_shallow(n, dim, seed)?,
        SynthKind::Deep => synth_deep(n, dim, seed)?,
    };
    save_csv(&ds, out)?;
    println!("wrote {} rows x {} features to {}", n, dim, out.display());
    Ok(())
}

struct PreparedData {
    train_set: Dataset,
    val_set: Dataset,
    standardization: Option<Standardization>,
    class_names: Vec<String>,
}

fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let label = LabelColumn::Name(cfg.label_column.clone());
    let ds = load_csv(&cfg.data_csv, &label, cfg.has_header)?;
    let class_names = ds.class_names().to_vec();
    let (train_set, val_set) = split(&ds, cfg.train_fraction, cfg.split_seed)?;
    drop(ds);
    if cfg.standardize {
        let (train_set, val_set, stats) = standardize(train_set, val_set)?;
        Ok(PreparedData {
            train_set,
            val_set,
            standardization: Some(stats),
            class_names,
        })
    } else {
        Ok(PreparedData {
            train_set,
            val_set,
            standardization: None,
            class_names,
        })
    }
}

fn print_metrics(prefix: &str, metrics: &EvalMetrics) {
    println!("{prefix}_val_loss={}", metrics.loss);
    println!("{prefix}_macro_f1={}", metrics.macro_f1);
    if let Some(auc) = metrics.auc {
        println!("{prefix}_auc={auc}");
    }
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    cfg.train.validate()?;
    let data = prepare_data(cfg)?;
    let model_cfg = cfg.resolve_model(&data.train_set)?;
    std::fs::create_dir_all(&cfg.output_dir)?;

    let mut xnn = XnnModel::new(model_cfg.clone())?;
    let history = train(&mut xnn, &data.train_set, &data.val_set, &cfg.train)?;
    history.save_csv(&cfg.output_dir.join("history_xnn.csv"))?;
    checkpoint::save(
        &xnn,
        data.standardization.as_ref(),
        &data.class_names,
        &cfg.output_dir.join("xnn.ckpt"),
    )?;
    let xnn_metrics = evaluate(&xnn, &data.val_set)?;
    print_metrics("xnn", &xnn_metrics);

    if cfg.with_control {
        let mut control = ControlModel::new(model_cfg)?;
        let control_history = train(&mut control, &data.train_set, &data.val_set, &cfg.train)?;
        control_history.save_csv(&cfg.output_dir.join("history_control.csv"))?;
        checkpoint::save(
            &control,
            data.standardization.as_ref(),
            &data.class_names,
            &cfg.output_dir.join("control.ckpt"),
        )?;
        let control_metrics = evaluate(&control, &data.val_set)?;
        print_metrics("control", &control_metrics);
        // Loss improvement of the x-NN over the control, reported both ways
        // because "decreased by N%" is ambiguous between the two readings.
        let abs = control_metrics.loss - xnn_metrics.loss;
        println!("loss_delta_abs={abs}");
        if control_metrics.loss != 0.0 {
            println!("loss_delta_rel={}", abs / control_metrics.loss);
        }
        let _ = write_epoch_summary(&cfg.output_dir, &history, &control_history);
    }

    if cfg.emit_plot_script {
        emit_plot_script(&cfg.output_dir)?;
    }
    Ok(())
}

fn write_epoch_summary(dir: &Path, xnn: &History, control: &History) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("summary.txt"))?);
    if let (Some(x), Some(c)) = (xnn.final_record(), control.final_record()) {
        writeln!(out, "final epoch {}", x.epoch)?;
        writeln!(out, "xnn:     val_loss={} macro_f1={}", x.val_loss, x.macro_f1)?;
        writeln!(out, "control: val_loss={} macro_f1={}", c.val_loss, c.macro_f1)?;
    }
    Ok(())
}

fn load_eval_dataset(
    checkpoint: &Checkpoint,
    data_csv: &Path,
    label_column: &str,
    has_header: bool,
) -> Result<Dataset> {
    let ds = load_csv(data_csv, &LabelColumn::Name(label_column.to_string()), has_header)?;
    let ds = if checkpoint.class_names.is_empty() {
        ds
    } else {
        ds.remap_classes(&checkpoint.class_names)?
    };
    Ok(match &checkpoint.standardization {
        Some(stats) => apply_standardization(ds, stats),
        None => ds,
    })
}

pub fn cmd_eval(ckpt_path: &Path, data_csv: &Path, label_column: &str, has_header: bool) -> Result<()> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let ds = load_eval_dataset(&ckpt, data_csv, label_column, has_header)?;
    let metrics = evaluate(ckpt.model.as_model(), &ds)?;
    println!("loss={}", metrics.loss);
    println!("macro_f1={}", metrics.macro_f1);
    if let Some(auc) = metrics.auc {
        println!("auc={auc}");
    }
    Ok(())
}

pub fn cmd_attn(
    ckpt_path: &Path,
    data_csv: &Path,
    label_column: &str,
    has_header: bool,
    out_dir: &Path,
) -> Result<()> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let AnyModel::Xnn(model) = &ckpt.model else {
        return Err(Error::InvalidArgument {
            op: "attn",
            message: "attention export needs an x-NN checkpoint, got a control model".into(),
        });
    };
    let ds = load_eval_dataset(&ckpt, data_csv, label_column, has_header)?;
    let report = attention_report(model, &ds)?;
    export_heatmaps(&report, out_dir)?;
    let stress: Vec<String> = report.stress.iter().map(|v| v.to_string()).collect();
    println!("stress={}", stress.join(","));
    println!("stress_sum={}", report.stress.iter().sum::<f64>());
    println!("n_samples={}", report.n_samples);
    Ok(())
}

/// A self-contained matplotlib script dropped beside the CSVs; keeps the
/// binary free of plotting dependencies.
fn emit_plot_script(dir: &Path) -> Result<()> {
    let script = r#"#!/usr/bin/env python3
"""Plot training curves (and stress scores, if exported) from this directory."""
import csv
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))

def read_history(name):
    path = os.path.join(here, name)
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {
        "epoch": [int(r["epoch"]) for r in rows],
        "train_loss": [float(r["train_loss"]) for r in rows],
        "val_loss": [float(r["val_loss"]) for r in rows],
        "macro_f1": [float(r["macro_f1"]) for r in rows],
        "auc": [float(r["auc"]) if r["auc"] else None for r in rows],
    }

xnn = read_history("history_xnn.csv")
control = read_history("history_control.csv")
if xnn is None:
    sys.exit("history_xnn.csv not found next to this script")

panels = [("val_loss", "validation loss"), ("macro_f1", "macro F1")]
if any(a is not None for a in xnn["auc"]):
    panels.append(("auc", "AUC"))

fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 4))
if len(panels) == 1:
    axes = [axes]
for ax, (key, title) in zip(axes, panels):
    ax.plot(xnn["epoch"], xnn[key], label="x-NN")
    if control is not None:
        ax.plot(control["epoch"], control[key], label="control")
    ax.set_xlabel("epoch")
    ax.set_title(title)
    ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "curves.png"), dpi=120)
print("wrote curves.png")

stress_path = os.path.join(here, "stress.csv")
if os.path.exists(stress_path):
    with open(stress_path) as fh:
        rows = list(csv.reader(fh))
    values = [float(v) for v in rows[1]]
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(range(len(values)), values)
    ax.set_xlabel("donor layer")
    ax.set_ylabel("stress")
    fig.tight_layout()
    fig.savefig(os.path.join(here, "stress.png"), dpi=120)
    print("wrote stress.png")
"#;
    std::fs::write(dir.join("plot_history.py"), script)?;
    Ok(())
}
