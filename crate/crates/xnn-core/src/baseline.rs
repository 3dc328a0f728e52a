//! Plain logistic-regression baseline.
//!
//! Deliberately independent of the autodiff stack: hand-written full-batch
//! gradient descent on internally standardized features. Used as the "simple
//! shallow model" yardstick in tests and the acceptance suite.

use crate::data::{Dataset, Standardization};
use crate::error::{Error, Result};

pub struct Logistic {
    weights: Vec<f64>,
    bias: f64,
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    /// Fit on a binary dataset (labels 0/1) with `iters` full-batch steps.
    pub fn fit(ds: &Dataset, iters: usize, learning_rate: f64) -> Result<Logistic> {
        if ds.num_classes() != 2 {
            return Err(Error::InvalidArgument {
                op: "Logistic::fit",
                message: format!("binary baseline needs 2 classes, got {}", ds.num_classes()),
            });
        }
        let n = ds.len();
        let d = ds.feature_dim();
        // Internal standardization keeps plain GD well conditioned.
        let mut features: Vec<f64> = (0..n).flat_map(|i| ds.row(i).to_vec()).collect();
        let stats = {
            let tmp = Dataset::new(
                features.clone(),
                n,
                d,
                ds.labels().to_vec(),
                ds.class_names().to_vec(),
            )?;
            let (std_ds, _, stats) = crate::data::standardize(tmp.clone(), tmp)?;
            features = (0..n).flat_map(|i| std_ds.row(i).to_vec()).collect();
            stats
        };

        let mut weights = vec![0.0; d];
        let mut bias = 0.0;
        let mut grad_w = vec![0.0; d];
        for _ in 0..iters {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for (row, &label) in features.chunks(d).zip(ds.labels()) {
                let z = bias
                    + weights
                        .iter()
                        .zip(row)
                        .map(|(w, x)| w * x)
                        .sum::<f64>();
                let err = sigmoid(z) - label as f64;
                for (g, x) in grad_w.iter_mut().zip(row) {
                    *g += err * x;
                }
                grad_b += err;
            }
            let scale = learning_rate / n as f64;
            for (w, g) in weights.iter_mut().zip(&grad_w) {
                *w -= scale * g;
            }
            bias -= scale * grad_b;
        }
        let Standardization { mean, std } = stats;
        Ok(Logistic {
            weights,
            bias,
            mean,
            std,
        })
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let mut z = self.bias;
        for (((w, x), m), s) in self.weights.iter().zip(row).zip(&self.mean).zip(&self.std) {
            let v = if *s >= 1e-12 { (x - m) / s } else { x - m };
            z += w * v;
        }
        usize::from(sigmoid(z) > 0.5)
    }

    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        let correct = (0..ds.len())
            .filter(|&i| self.predict(ds.row(i)) == ds.labels()[i])
            .count();
        correct as f64 / ds.len() as f64
    }
}
