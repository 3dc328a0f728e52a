//! The x-NN layer-stress model and its matched control.
//!
//! Both models share the same trunk: `k` Basic Layers, each a group of
//! affine+LeakyReLU sublayers at a width from the halving schedule. The x-NN
//! head taps every block's output, projects each tap to `d_model`, applies a
//! sigmoid, stacks the taps into k depth tokens, fuses them with multi-head
//! self-attention and classifies from the flattened fusion. The control
//! classifies from the last block's output alone.

mod config;
mod control;
mod init;
mod xnn;

pub use config::{width_schedule, XnnConfig};
pub use control::ControlModel;
pub use xnn::{XnnForward, XnnModel};

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::{Error, Result};

/// One fully connected layer: weight (in x out) and bias (1 x out).
#[derive(Debug, Clone)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Affine {
    fn init(seed: u64, name: &str, rows: usize, cols: usize) -> Affine {
        Affine {
            weight: init::init_weight(seed, &format!("{name}.weight"), rows, cols),
            bias: init::zero_bias(cols),
        }
    }

    fn named<'a>(&'a self, name: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{name}.weight"), &self.weight));
        out.push((format!("{name}.bias"), &self.bias));
    }
}

/// Parameters of one Basic Layer: `sublayers_per_block` affine maps, each
/// followed by LeakyReLU in the forward pass.
#[derive(Debug, Clone)]
pub struct BasicLayerParams {
    pub sublayers: Vec<Affine>,
}

/// Which architecture a parameter set realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Xnn,
    Control,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Xnn => "xnn",
            ModelKind::Control => "control",
        }
    }
}

/// Logits plus the tape handles of the parameters that produced them, in
/// canonical order. The training loop reads parameter gradients through the
/// handles after backward.
pub struct LogitsForward {
    pub logits: ValueId,
    pub param_ids: Vec<ValueId>,
}

/// Common surface of the x-NN and control models used by training,
/// evaluation and checkpointing. `Sync` so frozen models can serve
/// concurrent evaluation forwards.
pub trait Model: Sync {
    fn config(&self) -> &XnnConfig;
    fn kind(&self) -> ModelKind;
    /// Parameters with canonical names, in canonical order.
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    /// Mutable parameter references in the same canonical order.
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn forward_logits(&self, tape: &mut Tape, x: &Tensor) -> Result<LogitsForward>;
}

/// Class predictions with the activated probabilities.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub classes: Vec<usize>,
    /// Softmax rows for multi-class heads; sigmoid column for a single-logit
    /// binary head.
    pub probabilities: Tensor,
}

/// Run the model and convert logits to class probabilities and indices.
/// Ties break toward the lower class index; a single-logit head thresholds
/// its sigmoid at 0.5 (probability exactly 0.5 predicts class 0).
pub fn predict(model: &dyn Model, x: &Tensor) -> Result<Prediction> {
    let mut tape = Tape::new();
    let fwd = model.forward_logits(&mut tape, x)?;
    let logits = tape.value(fwd.logits).clone();
    Ok(predict_logits(&logits))
}

/// Activate raw logits: softmax rows for multi-class, sigmoid for a
/// single-logit binary head, with the same tie/threshold conventions as
/// [`predict`].
pub fn predict_logits(logits: &Tensor) -> Prediction {
    let mut tape = Tape::new();
    let c = logits.cols();
    let id = tape.leaf(logits.clone());
    if c == 1 {
        let probs = tape.sigmoid(id);
        let probabilities = tape.value(probs).clone();
        let classes = probabilities
            .data()
            .iter()
            .map(|&p| usize::from(p > 0.5))
            .collect();
        return Prediction {
            classes,
            probabilities,
        };
    }
    let probs = tape.softmax_rows(id);
    let probabilities = tape.value(probs).clone();
    let classes = probabilities
        .data()
        .chunks(c)
        .map(|row| argmax(row))
        .collect();
    Prediction {
        classes,
        probabilities,
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

pub(crate) fn check_input_width(x: &Tensor, input_dim: usize, op: &'static str) -> Result<()> {
    if x.cols() != input_dim {
        return Err(Error::ShapeMismatch {
            op,
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: 1,
            right_cols: input_dim,
        });
    }
    Ok(())
}

/// Hands out parameter tape handles in canonical order during graph
/// construction, and verifies the walk consumed exactly what was bound.
pub(crate) struct ParamCursor<'a> {
    ids: &'a [ValueId],
    pos: usize,
}

impl<'a> ParamCursor<'a> {
    pub(crate) fn new(ids: &'a [ValueId]) -> Self {
        ParamCursor { ids, pos: 0 }
    }

    pub(crate) fn next(&mut self) -> ValueId {
        let id = self.ids[self.pos];
        self.pos += 1;
        id
    }

    pub(crate) fn finish(self) {
        debug_assert_eq!(self.pos, self.ids.len(), "parameter walk out of sync");
    }
}

pub(crate) fn build_blocks(cfg: &XnnConfig) -> Vec<BasicLayerParams> {
    let widths = cfg.schedule();
    let mut blocks = Vec::with_capacity(cfg.k);
    let mut in_width = cfg.input_dim;
    for (i, &width) in widths.iter().enumerate() {
        let mut sublayers = Vec::with_capacity(cfg.sublayers_per_block);
        for j in 0..cfg.sublayers_per_block {
            let rows = if j == 0 { in_width } else { width };
            let name = format!("blocks.{i}.sublayers.{j}");
            sublayers.push(Affine::init(cfg.seed, &name, rows, width));
        }
        blocks.push(BasicLayerParams { sublayers });
        in_width = width;
    }
    blocks
}

pub(crate) fn named_block_params<'a>(
    blocks: &'a [BasicLayerParams],
    out: &mut Vec<(String, &'a Tensor)>,
) {
    for (i, block) in blocks.iter().enumerate() {
        for (j, sub) in block.sublayers.iter().enumerate() {
            sub.named(&format!("blocks.{i}.sublayers.{j}"), out);
        }
    }
}

/// Run the shared trunk, returning each block's output (the taps V1..Vk).
pub(crate) fn trunk_forward(
    tape: &mut Tape,
    cursor: &mut ParamCursor,
    cfg: &XnnConfig,
    x: ValueId,
) -> Result<Vec<ValueId>> {
    let mut taps = Vec::with_capacity(cfg.k);
    let mut h = x;
    for _ in 0..cfg.k {
        for _ in 0..cfg.sublayers_per_block {
            let w = cursor.next();
            let b = cursor.next();
            h = tape.affine(h, w, b)?;
            h = tape.leaky_relu(h, cfg.leaky_alpha)?;
        }
        taps.push(h);
    }
    Ok(taps)
}
