use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters for the x-NN model and its matched control.
///
/// The control model reads only the trunk fields (`input_dim`, `k`,
/// `base_width`, `sublayers_per_block`, head widths, classes); the attention
/// fields are used by the x-NN head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XnnConfig {
    /// Input feature width L.
    pub input_dim: usize,
    /// Number of Basic Layers in the trunk.
    pub k: usize,
    /// First block width N; later blocks follow the halving schedule.
    pub base_width: usize,
    /// Fully connected sublayers per Basic Layer.
    #[serde(default = "default_sublayers")]
    pub sublayers_per_block: usize,
    /// Common width every depth tap is projected to before fusion.
    pub d_model: usize,
    /// Attention head count; must divide `d_model`.
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Hidden width of the classification head.
    #[serde(default)]
    pub head_hidden: Option<usize>,
    /// Output classes c.
    pub num_classes: usize,
    #[serde(default = "default_leaky_alpha")]
    pub leaky_alpha: f64,
    /// Master seed for parameter initialization.
    pub seed: u64,
}

fn default_sublayers() -> usize {
    3
}

fn default_heads() -> usize {
    8
}

fn default_leaky_alpha() -> f64 {
    0.01
}

impl XnnConfig {
    /// Config with the documented defaults: 3 sublayers per block, 8 heads,
    /// head hidden width equal to `d_model`, leaky slope 0.01.
    pub fn new(
        input_dim: usize,
        k: usize,
        base_width: usize,
        d_model: usize,
        num_classes: usize,
        seed: u64,
    ) -> Self {
        XnnConfig {
            input_dim,
            k,
            base_width,
            sublayers_per_block: default_sublayers(),
            d_model,
            heads: default_heads(),
            head_hidden: None,
            num_classes,
            leaky_alpha: default_leaky_alpha(),
            seed,
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn head_hidden(&self) -> usize {
        self.head_hidden.unwrap_or(self.d_model)
    }

    /// Per-head width.
    pub fn head_width(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let field = |field: &str, message: String| Error::Config {
            field: field.to_string(),
            message,
        };
        if self.input_dim == 0 {
            return Err(field("input_dim", "must be >= 1".into()));
        }
        if self.k == 0 {
            return Err(field("k", "must be >= 1".into()));
        }
        if self.sublayers_per_block == 0 {
            return Err(field("sublayers_per_block", "must be >= 1".into()));
        }
        if self.num_classes == 0 {
            return Err(field("num_classes", "must be >= 1".into()));
        }
        if self.heads == 0 {
            return Err(field("heads", "must be >= 1".into()));
        }
        if self.d_model == 0 {
            return Err(field("d_model", "must be >= 1".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(field(
                "d_model",
                format!(
                    "d_model ({}) must be divisible by heads ({})",
                    self.d_model, self.heads
                ),
            ));
        }
        if self.head_hidden() == 0 {
            return Err(field("head_hidden", "must be >= 1".into()));
        }
        if !self.leaky_alpha.is_finite() || self.leaky_alpha < 0.0 {
            return Err(field(
                "leaky_alpha",
                format!("must be finite and >= 0, got {}", self.leaky_alpha),
            ));
        }
        width_schedule(self.base_width, self.k)?;
        Ok(())
    }

    pub fn schedule(&self) -> Vec<usize> {
        width_schedule(self.base_width, self.k).expect("validated config")
    }
}

/// Block widths N, N/2, N/4, ... with integer floor division, k entries.
pub fn width_schedule(base_width: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config {
            field: "k".into(),
            message: "must be >= 1".into(),
        });
    }
    let mut widths = Vec::with_capacity(k);
    let mut w = base_width;
    for i in 0..k {
        if w == 0 {
            return Err(Error::Config {
                field: "base_width".into(),
                message: format!(
                    "width schedule reaches 0 at block {i} (base_width {base_width}, k {k})"
                ),
            });
        }
        widths.push(w);
        w /= 2;
    }
    Ok(widths)
}
