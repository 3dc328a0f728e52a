//! Attention extraction and export: per-head donor/receptor maps averaged
//! over a dataset, plus the per-layer stress scores derived from them.

use std::io::Write;
use std::path::Path;

use crate::autodiff::{Tape, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::XnnModel;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Samples per forward pass while scanning a dataset.
const REPORT_CHUNK: usize = 256;

/// Aggregated attention over a dataset.
///
/// `per_head[h]` is the elementwise mean of head h's k x k row-stochastic
/// weight matrices across samples: rows are receptors (queries), columns are
/// donors (keys). `stress[j]` is the mean attention mass donor layer j
/// receives, averaged over heads, receptor rows and samples; the stress
/// vector sums to 1.
#[derive(Debug, Clone)]
pub struct AttentionReport {
    pub per_head: Vec<Tensor>,
    pub stress: Vec<f64>,
    pub n_samples: usize,
}

impl AttentionReport {
    pub fn heads(&self) -> usize {
        self.per_head.len()
    }

    pub fn depth(&self) -> usize {
        self.stress.len()
    }
}

fn stress_from_means(per_head: &[Tensor], k: usize) -> Vec<f64> {
    let h = per_head.len();
    let mut stress = vec![0.0; k];
    for head in per_head {
        for r in 0..k {
            for (j, s) in stress.iter_mut().enumerate() {
                *s += head.get(r, j);
            }
        }
    }
    for s in stress.iter_mut() {
        *s /= (h * k) as f64;
    }
    stress
}

/// Run the model over the whole dataset and average each head's attention
/// weights elementwise across samples. Chunks reduce in a fixed order, so
/// the result is identical with and without the parallel feature.
pub fn attention_report(model: &XnnModel, ds: &Dataset) -> Result<AttentionReport> {
    if ds.is_empty() {
        return Err(Error::Data(
            "cannot build an attention report from an empty dataset".into(),
        ));
    }
    let k = model.config.k;
    let heads = model.config.heads;

    let indices: Vec<usize> = (0..ds.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(REPORT_CHUNK).collect();
    let sum_chunk = |chunk: &&[usize]| -> Result<Vec<Vec<f64>>> {
        let (x, _) = ds.batch(chunk);
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &x)?;
        let mut sums = vec![vec![0.0; k * k]; heads];
        for (h, head) in fwd.attention.iter().enumerate() {
            for &w in head {
                for (acc, v) in sums[h].iter_mut().zip(tape.value(w).data()) {
                    *acc += v;
                }
            }
        }
        Ok(sums)
    };

    #[cfg(feature = "parallel")]
    let partials: Result<Vec<Vec<Vec<f64>>>> = chunks.par_iter().map(sum_chunk).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Result<Vec<Vec<Vec<f64>>>> = chunks.iter().map(sum_chunk).collect();
    let partials = partials?;

    let mut sums = vec![vec![0.0; k * k]; heads];
    for partial in partials {
        for (acc, head) in sums.iter_mut().zip(partial) {
            for (a, v) in acc.iter_mut().zip(head) {
                *a += v;
            }
        }
    }
    let n = ds.len() as f64;
    let per_head: Vec<Tensor> = sums
        .into_iter()
        .map(|mut s| {
            for v in s.iter_mut() {
                *v /= n;
            }
            Tensor::new(k, k, s).expect("k x k map")
        })
        .collect();
    let stress = stress_from_means(&per_head, k);
    Ok(AttentionReport {
        per_head,
        stress,
        n_samples: ds.len(),
    })
}

/// Pairwise Frobenius distances between the per-head mean maps.
pub fn head_similarity(report: &AttentionReport) -> Tensor {
    let h = report.heads();
    let mut out = Tensor::zeros(h, h);
    for a in 0..h {
        for b in (a + 1)..h {
            let d = report.per_head[a]
                .data()
                .iter()
                .zip(report.per_head[b].data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            out.set(a, b, d);
            out.set(b, a, d);
        }
    }
    out
}

/// Write `head_<i>.csv` (k rows x k columns, receptors as rows, donors as
/// columns) per head plus `stress.csv` under `dir`. Values print in shortest
/// round-trip decimal form.
pub fn export_heatmaps(report: &AttentionReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let k = report.depth();
    for (h, map) in report.per_head.iter().enumerate() {
        let mut file = std::io::BufWriter::new(std::fs::File::create(
            dir.join(format!("head_{h}.csv")),
        )?);
        for r in 0..k {
            let row: Vec<String> = map.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(file, "{}", row.join(","))?;
        }
        file.flush()?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(dir.join("stress.csv"))?);
    let header: Vec<String> = (0..k).map(|j| format!("layer_{j}")).collect();
    writeln!(file, "{}", header.join(","))?;
    let row: Vec<String> = report.stress.iter().map(|v| v.to_string()).collect();
    writeln!(file, "{}", row.join(","))?;
    file.flush()?;
    Ok(())
}
