//! Tabular datasets: CSV ingestion, seeded splitting, standardization, and
//! synthetic generators for the shallow-vs-deep depth-allocation experiments.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-column statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Columns with (population) std below this pass through centered but
/// unscaled.
const DEGENERATE_STD: f64 = 1e-12;

impl Standardization {
    /// Fit from a feature matrix (row-major, n x d).
    fn fit(features: &[f64], n: usize, d: usize) -> Standardization {
        let mut mean = vec![0.0; d];
        for row in features.chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for row in features.chunks(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
        let std = var.iter().map(|s| (s / n as f64).sqrt()).collect();
        Standardization { mean, std }
    }

    /// Transform one row in place.
    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v -= m;
            if *s >= DEGENERATE_STD {
                *v /= s;
            }
        }
    }
}

/// Feature matrix with integer class labels and class names. Immutable after
/// construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>,
    n_samples: usize,
    n_features: usize,
    labels: Vec<usize>,
    class_names: Vec<String>,
    /// Stats the features were transformed with, when standardized.
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        n_samples: usize,
        n_features: usize,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Dataset> {
        if features.len() != n_samples * n_features {
            return Err(Error::Data(format!(
                "feature matrix length {} does not match {} x {}",
                features.len(),
                n_samples,
                n_features
            )));
        }
        if labels.len() != n_samples {
            return Err(Error::Data(format!(
                "{} labels for {} samples",
                labels.len(),
                n_samples
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Dataset {
            features,
            n_samples,
            n_features,
            labels,
            class_names,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.n_features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// All features as a B x L tensor.
    pub fn features_tensor(&self) -> Tensor {
        Tensor::new(self.n_samples, self.n_features, self.features.clone())
            .expect("consistent dataset shape")
    }

    /// Copy the given rows into a batch tensor with their labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        (
            Tensor::new(indices.len(), self.n_features, data).expect("consistent batch shape"),
            labels,
        )
    }

    /// Re-express labels in another class-name order (e.g. the order a model
    /// was trained with). Every class name present here must appear in
    /// `names`; `names` may list extra classes.
    pub fn remap_classes(&self, names: &[String]) -> Result<Dataset> {
        let mapping: Vec<usize> = self
            .class_names
            .iter()
            .map(|c| {
                names.iter().position(|n| n == c).ok_or_else(|| {
                    Error::Data(format!("class `{c}` is not among the target classes {names:?}"))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            features: self.features.clone(),
            n_samples: self.n_samples,
            n_features: self.n_features,
            labels: self.labels.iter().map(|&l| mapping[l]).collect(),
            class_names: names.to_vec(),
            standardization: self.standardization.clone(),
        })
    }

    fn take_rows(&self, indices: &[usize]) -> Dataset {
        let (tensor, labels) = self.batch(indices);
        let (n, d) = tensor.shape();
        Dataset {
            features: tensor.data().to_vec(),
            n_samples: n,
            n_features: d,
            labels,
            class_names: self.class_names.clone(),
            standardization: self.standardization.clone(),
        }
    }
}

/// Seeded Fisher-Yates split: the first floor(n * train_fraction) entries of
/// the permutation become the training set, the rest the validation set.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument {
            op: "split",
            message: format!("train_fraction must be in (0, 1), got {train_fraction}"),
        });
    }
    let n = ds.len();
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument {
            op: "split",
            message: format!("fraction {train_fraction} yields an empty split for {n} samples"),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok((ds.take_rows(&order[..n_train]), ds.take_rows(&order[n_train..])))
}

/// Z-score both splits using statistics fitted on the training split only.
/// Degenerate columns (std < 1e-12) are centered but not scaled.
pub fn standardize(train: Dataset, val: Dataset) -> Result<(Dataset, Dataset, Standardization)> {
    if train.is_empty() {
        return Err(Error::Data("cannot standardize an empty training set".into()));
    }
    let stats = Standardization::fit(&train.features, train.n_samples, train.n_features);
    let train = apply_standardization(train, &stats);
    let val = apply_standardization(val, &stats);
    Ok((train, val, stats.clone()))
}

/// Transform a dataset with already-fitted statistics.
pub fn apply_standardization(mut ds: Dataset, stats: &Standardization) -> Dataset {
    for row in ds.features.chunks_mut(ds.n_features) {
        stats.apply_row(row);
    }
    ds.standardization = Some(stats.clone());
    ds
}

/// How the label column is identified in a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    /// Header name; requires `has_header`.
    Name(String),
    /// Zero-based column index.
    Index(usize),
}

/// Load a numeric CSV with one label column. Feature cells must parse as
/// floats; label cells are treated as class names and mapped to indices in
/// first-appearance order.
pub fn load_csv(path: &Path, label: &LabelColumn, has_header: bool) -> Result<Dataset> {
    let err = |message: String| Error::Csv {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;

    let mut label_idx: Option<usize> = None;
    let mut width: Option<usize> = None;
    if has_header {
        let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
        width = Some(headers.len());
        label_idx = Some(match label {
            LabelColumn::Name(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| err(format!("label column `{name}` not found in header")))?,
            LabelColumn::Index(i) => {
                if *i >= headers.len() {
                    return Err(err(format!(
                        "label column index {i} out of range for {} columns",
                        headers.len()
                    )));
                }
                *i
            }
        });
    } else if let LabelColumn::Name(name) = label {
        return Err(err(format!(
            "label column `{name}` given by name but the file has no header"
        )));
    }

    let mut features = Vec::new();
    let mut labels_raw: Vec<String> = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut row_no = 0usize;
    while reader
        .read_record(&mut record)
        .map_err(|e| err(e.to_string()))?
    {
        row_no += 1;
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(err(format!(
                "ragged row: data row {row_no} has {} fields, expected {w}",
                record.len()
            )));
        }
        let li = *label_idx.get_or_insert_with(|| match label {
            LabelColumn::Index(i) => *i,
            LabelColumn::Name(_) => unreachable!("name requires header"),
        });
        if li >= w {
            return Err(err(format!(
                "label column index {li} out of range for {w} columns"
            )));
        }
        for (col, cell) in record.iter().enumerate() {
            if col == li {
                labels_raw.push(cell.to_string());
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    err(format!(
                        "unparseable feature cell at data row {row_no}, column {col}: `{cell}`"
                    ))
                })?;
                features.push(v);
            }
        }
    }
    if row_no == 0 {
        return Err(err("file contains no data rows".into()));
    }

    let mut class_names: Vec<String> = Vec::new();
    let mut labels = Vec::with_capacity(labels_raw.len());
    for raw in labels_raw {
        let idx = match class_names.iter().position(|c| *c == raw) {
            Some(i) => i,
            None => {
                class_names.push(raw);
                class_names.len() - 1
            }
        };
        labels.push(idx);
    }
    let n_features = width.expect("at least one row") - 1;
    Dataset::new(features, row_no, n_features, labels, class_names)
}

/// Write a dataset as CSV with header `f0,...,f{d-1},label`; label cells are
/// the class names. Floats print in shortest round-trip form.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    for j in 0..ds.n_features {
        write!(out, "f{j},")?;
    }
    writeln!(out, "label")?;
    let mut line = String::new();
    for i in 0..ds.len() {
        line.clear();
        for v in ds.row(i) {
            line.push_str(&format!("{v},"));
        }
        line.push_str(&ds.class_names[ds.labels[i]]);
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Uniform grid value in [-1, 1] with 3 decimal places; keeps CSV output
/// compact at the 28169-feature scale without losing randomness that matters.
fn grid_value(rng: &mut Xoshiro256PlusPlus) -> f64 {
    f64::from(rng.random_range(-1000i32..=1000)) / 1000.0
}

/// Number of informative dimensions used by the generators.
fn signal_dims(dim: usize) -> usize {
    (dim / 2).clamp(1, 8)
}

/// Binary task solvable from shallow representations: the label is the sign
/// of a fixed seeded linear form over the first few features; the remaining
/// features are label-independent noise. Samples too close to the decision
/// boundary are resampled so the classes are cleanly separable.
pub fn synth_shallow(n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    if n < 4 || dim < 2 {
        return Err(Error::InvalidArgument {
            op: "synth_shallow",
            message: format!("need n >= 4 and dim >= 2, got n={n}, dim={dim}"),
        });
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let s = signal_dims(dim);
    let weights: Vec<f64> = (0..s)
        .map(|_| {
            let mut w = 0.0f64;
            while w.abs() < 0.3 {
                w = grid_value(&mut rng);
            }
            w
        })
        .collect();
    let margin = 0.1 * weights.iter().map(|w| w * w).sum::<f64>().sqrt();

    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let mut row = vec![0.0; dim];
    for _ in 0..n {
        let dot = loop {
            for v in row.iter_mut() {
                *v = grid_value(&mut rng);
            }
            let dot: f64 = weights.iter().zip(&row).map(|(w, x)| w * x).sum();
            if dot.abs() >= margin {
                break dot;
            }
        };
        features.extend_from_slice(&row);
        labels.push(usize::from(dot > 0.0));
    }
    Dataset::new(
        features,
        n,
        dim,
        labels,
        vec!["0".to_string(), "1".to_string()],
    )
}

/// Binary task a linear model cannot separate: the label is the XOR of the
/// signs of two seeded feature coordinates (equivalently, the thresholded
/// sign of their product). Coordinates too close to zero are resampled.
pub fn synth_deep(n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    if n < 4 || dim < 4 {
        return Err(Error::InvalidArgument {
            op: "synth_deep",
            message: format!("need n >= 4 and dim >= 4, got n={n}, dim={dim}"),
        });
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let a = rng.random_range(0..dim);
    let b = loop {
        let b = rng.random_range(0..dim);
        if b != a {
            break b;
        }
    };

    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let mut row = vec![0.0; dim];
    for _ in 0..n {
        loop {
            for v in row.iter_mut() {
                *v = grid_value(&mut rng);
            }
            if row[a].abs() >= 0.1 && row[b].abs() >= 0.1 {
                break;
            }
        }
        features.extend_from_slice(&row);
        labels.push(usize::from(row[a] * row[b] < 0.0));
    }
    Dataset::new(
        features,
        n,
        dim,
        labels,
        vec!["0".to_string(), "1".to_string()],
    )
}
