use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::Result;
use crate::model::{
    build_blocks, check_input_width, named_block_params, trunk_forward, Affine, BasicLayerParams,
    LogitsForward, Model, ModelKind, ParamCursor, XnnConfig,
};

/// Matched baseline: the exact same trunk as [`crate::model::XnnModel`], but
/// the classification head consumes only the final block's output, the
/// conventional last-layer arrangement.
#[derive(Debug, Clone)]
pub struct ControlModel {
    pub config: XnnConfig,
    pub blocks: Vec<BasicLayerParams>,
    pub head_fc1: Affine,
    pub head_fc2: Affine,
}

/// Tape handles from one control forward pass.
pub struct ControlForward {
    pub logits: ValueId,
    /// Raw trunk taps, exposed for trunk-equality checks against the x-NN.
    pub trunk_taps: Vec<ValueId>,
    pub param_ids: Vec<ValueId>,
}

impl ControlModel {
    /// Build with the same trunk initialization as an `XnnModel` constructed
    /// from the same config (trunk parameter names and seeds coincide).
    pub fn new(config: XnnConfig) -> Result<ControlModel> {
        config.validate()?;
        let blocks = build_blocks(&config);
        let last_width = *config.schedule().last().expect("k >= 1");
        let head_fc1 = Affine::init(config.seed, "head_fc1", last_width, config.head_hidden());
        let head_fc2 = Affine::init(
            config.seed,
            "head_fc2",
            config.head_hidden(),
            config.num_classes,
        );
        Ok(ControlModel {
            config,
            blocks,
            head_fc1,
            head_fc2,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<ControlForward> {
        check_input_width(x, self.config.input_dim, "forward_control")?;
        let x_id = tape.leaf(x.clone());
        let param_ids: Vec<ValueId> = self
            .named_params()
            .into_iter()
            .map(|(_, t)| tape.param(t))
            .collect();
        self.forward_from(tape, &param_ids, x_id)
    }

    pub fn forward_from(
        &self,
        tape: &mut Tape,
        param_ids: &[ValueId],
        x: ValueId,
    ) -> Result<ControlForward> {
        let cfg = &self.config;
        let mut cursor = ParamCursor::new(param_ids);
        let trunk_taps = trunk_forward(tape, &mut cursor, cfg, x)?;
        let fc1_w = cursor.next();
        let fc1_b = cursor.next();
        let fc2_w = cursor.next();
        let fc2_b = cursor.next();
        cursor.finish();

        let last = *trunk_taps.last().expect("k >= 1");
        let hidden = tape.affine(last, fc1_w, fc1_b)?;
        let hidden = tape.leaky_relu(hidden, cfg.leaky_alpha)?;
        let logits = tape.affine(hidden, fc2_w, fc2_b)?;
        Ok(ControlForward {
            logits,
            trunk_taps,
            param_ids: param_ids.to_vec(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

impl Model for ControlModel {
    fn config(&self) -> &XnnConfig {
        &self.config
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Control
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        named_block_params(&self.blocks, &mut out);
        self.head_fc1.named("head_fc1", &mut out);
        self.head_fc2.named("head_fc2", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            for sub in &mut block.sublayers {
                out.push(&mut sub.weight);
                out.push(&mut sub.bias);
            }
        }
        out.push(&mut self.head_fc1.weight);
        out.push(&mut self.head_fc1.bias);
        out.push(&mut self.head_fc2.weight);
        out.push(&mut self.head_fc2.bias);
        out
    }

    fn forward_logits(&self, tape: &mut Tape, x: &Tensor) -> Result<LogitsForward> {
        let fwd = self.forward(tape, x)?;
        Ok(LogitsForward {
            logits: fwd.logits,
            param_ids: fwd.param_ids,
        })
    }
}
