use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::Result;
use crate::model::{
    build_blocks, check_input_width, init, named_block_params, trunk_forward, Affine,
    BasicLayerParams, LogitsForward, Model, ModelKind, ParamCursor, XnnConfig,
};

/// Per-head query/key/value projections (d_model x d_model/heads each).
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
}

/// Multi-head attention parameters: per-head projections plus the output
/// projection applied to the concatenated heads.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    /// d_model x d_model.
    pub output: Tensor,
}

/// The layer-stress model of the critical formula:
/// logits = FC(LeakyReLU(FC(Flatten(MHA(Q, K, V))))) with
/// Q = K = V = stack(sigmoid(FC(Vi)) for each depth tap Vi).
#[derive(Debug, Clone)]
pub struct XnnModel {
    pub config: XnnConfig,
    pub blocks: Vec<BasicLayerParams>,
    pub branch: Vec<Affine>,
    pub attention: AttentionParams,
    pub head_fc1: Affine,
    pub head_fc2: Affine,
}

/// Tape handles produced by one x-NN forward pass.
pub struct XnnForward {
    /// B x num_classes.
    pub logits: ValueId,
    /// attention[head][sample] is a k x k row-stochastic weight matrix.
    pub attention: Vec<Vec<ValueId>>,
    /// Raw trunk taps V1..Vk (B x width_i), before branch projection.
    pub trunk_taps: Vec<ValueId>,
    /// Branch outputs sigmoid(FC(Vi)) (B x d_model).
    pub branch_taps: Vec<ValueId>,
    /// Parameter handles in canonical order.
    pub param_ids: Vec<ValueId>,
}

impl XnnModel {
    /// Build and deterministically initialize a model; two builds from the
    /// same config are bitwise identical.
    pub fn new(config: XnnConfig) -> Result<XnnModel> {
        config.validate()?;
        let seed = config.seed;
        let widths = config.schedule();
        let blocks = build_blocks(&config);
        let branch = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| Affine::init(seed, &format!("branch.{i}"), w, config.d_model))
            .collect();
        let dh = config.head_width();
        let heads = (0..config.heads)
            .map(|j| HeadParams {
                query: init::init_weight(
                    seed,
                    &format!("attention.heads.{j}.query"),
                    config.d_model,
                    dh,
                ),
                key: init::init_weight(
                    seed,
                    &format!("attention.heads.{j}.key"),
                    config.d_model,
                    dh,
                ),
                value: init::init_weight(
                    seed,
                    &format!("attention.heads.{j}.value"),
                    config.d_model,
                    dh,
                ),
            })
            .collect();
        let attention = AttentionParams {
            heads,
            output: init::init_weight(seed, "attention.output", config.d_model, config.d_model),
        };
        let head_fc1 = Affine::init(
            seed,
            "head_fc1",
            config.k * config.d_model,
            config.head_hidden(),
        );
        let head_fc2 = Affine::init(seed, "head_fc2", config.head_hidden(), config.num_classes);
        Ok(XnnModel {
            config,
            blocks,
            branch,
            attention,
            head_fc1,
            head_fc2,
        })
    }

    /// Forward pass over a B x L batch. Records the whole computation on the
    /// tape and returns handles to logits, attention maps and parameters.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<XnnForward> {
        check_input_width(x, self.config.input_dim, "forward_xnn")?;
        let x_id = tape.leaf(x.clone());
        let param_ids: Vec<ValueId> = self
            .named_params()
            .into_iter()
            .map(|(_, t)| tape.param(t))
            .collect();
        self.forward_from(tape, &param_ids, x_id)
    }

    /// Forward pass from already-bound parameter handles (canonical order).
    /// Used by the gradient checker to differentiate with respect to the
    /// parameters themselves.
    pub fn forward_from(
        &self,
        tape: &mut Tape,
        param_ids: &[ValueId],
        x: ValueId,
    ) -> Result<XnnForward> {
        let cfg = &self.config;
        let batch = tape.value(x).rows();
        let mut cursor = ParamCursor::new(param_ids);

        let trunk_taps = trunk_forward(tape, &mut cursor, cfg, x)?;

        // Branch projections to the common width, denoised by sigmoid.
        let mut branch_taps = Vec::with_capacity(cfg.k);
        for &tap in &trunk_taps {
            let w = cursor.next();
            let b = cursor.next();
            let projected = tape.affine(tap, w, b)?;
            branch_taps.push(tape.sigmoid(projected));
        }

        let head_ids: Vec<(ValueId, ValueId, ValueId)> = (0..cfg.heads)
            .map(|_| (cursor.next(), cursor.next(), cursor.next()))
            .collect();
        let out_proj = cursor.next();
        let fc1_w = cursor.next();
        let fc1_b = cursor.next();
        let fc2_w = cursor.next();
        let fc2_b = cursor.next();
        cursor.finish();

        // Per-sample fusion: stack the k depth tokens, attend, flatten.
        let mut attention = vec![Vec::with_capacity(batch); cfg.heads];
        let mut flat_rows = Vec::with_capacity(batch);
        for s in 0..batch {
            let parts: Vec<(ValueId, usize)> = branch_taps.iter().map(|&t| (t, s)).collect();
            let tokens = tape.gather_rows(&parts)?; // k x d_model
            let mut head_outs = Vec::with_capacity(cfg.heads);
            for (h, &(wq, wk, wv)) in head_ids.iter().enumerate() {
                let q = tape.matmul(tokens, wq)?;
                let k = tape.matmul(tokens, wk)?;
                let v = tape.matmul(tokens, wv)?;
                let (out, weights) = tape.scaled_dot_attention(q, k, v)?;
                head_outs.push(out);
                attention[h].push(weights);
            }
            let fused = tape.concat_cols(&head_outs)?; // k x d_model
            let projected = tape.matmul(fused, out_proj)?;
            flat_rows.push(tape.flatten(projected)); // 1 x k*d_model
        }
        let gather: Vec<(ValueId, usize)> = flat_rows.iter().map(|&id| (id, 0)).collect();
        let features = tape.gather_rows(&gather)?; // B x k*d_model

        let hidden = tape.affine(features, fc1_w, fc1_b)?;
        let hidden = tape.leaky_relu(hidden, cfg.leaky_alpha)?;
        let logits = tape.affine(hidden, fc2_w, fc2_b)?;

        Ok(XnnForward {
            logits,
            attention,
            trunk_taps,
            branch_taps,
            param_ids: param_ids.to_vec(),
        })
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

impl Model for XnnModel {
    fn config(&self) -> &XnnConfig {
        &self.config
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Xnn
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        named_block_params(&self.blocks, &mut out);
        for (i, aff) in self.branch.iter().enumerate() {
            aff.named(&format!("branch.{i}"), &mut out);
        }
        for (j, head) in self.attention.heads.iter().enumerate() {
            out.push((format!("attention.heads.{j}.query"), &head.query));
            out.push((format!("attention.heads.{j}.key"), &head.key));
            out.push((format!("attention.heads.{j}.value"), &head.value));
        }
        out.push(("attention.output".to_string(), &self.attention.output));
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
        for aff in &mut self.branch {
            out.push(&mut aff.weight);
            out.push(&mut aff.bias);
        }
        for head in &mut self.attention.heads {
            out.push(&mut head.query);
            out.push(&mut head.key);
            out.push(&mut head.value);
        }
        out.push(&mut self.attention.output);
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
