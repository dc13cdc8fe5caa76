//! Forward passes: encoding, attention decode steps, greedy decoding with
//! trace capture, and teacher-forced unrolls.
//!
//! Every path here runs on a [`Tape`], so the same code serves plain
//! evaluation (leaf without gradients), training (parameter gradients), and
//! attacks (input gradients); identical inputs give bit-identical outputs in
//! all three modes.

use crate::autodiff::{argmax, softmax_lane, NodeId, Tape, Tensor};
use crate::error::{Error, Result};

use super::model::{CaptionModel, ParamIds};
use super::trace::{DecodeTrace, Termination};

/// A model bound to a tape: parameter tensors inserted as leaves, ready for
/// forward passes.
pub struct TapedModel<'m> {
    model: &'m CaptionModel,
    ids: ParamIds,
}

impl<'m> TapedModel<'m> {
    /// Bind `model` to `tape`. With `params_require_grad` the backward pass
    /// accumulates parameter gradients (training); without it gradients only
    /// flow to non-parameter leaves such as the input image (attacks).
    pub fn new(tape: &mut Tape, model: &'m CaptionModel, params_require_grad: bool) -> Self {
        let ids = model.params.on_tape(tape, params_require_grad);
        TapedModel { model, ids }
    }

    pub fn model(&self) -> &CaptionModel {
        self.model
    }

    /// Accumulated parameter gradients in canonical order; zero where
    /// backward never reached a parameter.
    pub fn param_grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.ids
            .list()
            .into_iter()
            .map(|id| match tape.grad(id) {
                Some(g) => g.to_vec(),
                None => vec![0.0; tape.value(id).len()],
            })
            .collect()
    }

    /// Encode an image into the feature grid H [K × d_h]. Pixels must lie in
    /// [0, 1].
    pub fn encode(&self, tape: &mut Tape, image: NodeId) -> Result<NodeId> {
        let h = &self.model.hyper;
        let t = tape.value(image);
        if t.shape() != h.image_shape().as_slice() {
            return Err(Error::shape(format!(
                "image shape {:?}, expected {:?}",
                t.shape(),
                h.image_shape()
            )));
        }
        if let Some(bad) = t.data().iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::domain(format!("pixel value {bad} outside [0, 1]")));
        }
        let flat = tape.gather(image, self.model.patch_index())?;
        let patches = tape.reshape(flat, vec![h.patch_count(), h.patch_dim()])?;
        let e = tape.matmul(patches, self.ids.enc_embed_w)?;
        let e = tape.add_row(e, self.ids.enc_embed_b)?;
        let e = tape.relu(e);
        let f = tape.matmul(e, self.ids.enc_fc1_w)?;
        let f = tape.add_row(f, self.ids.enc_fc1_b)?;
        let f = tape.relu(f);
        let g = tape.matmul(f, self.ids.enc_fc2_w)?;
        tape.add_row(g, self.ids.enc_fc2_b)
    }

    /// Attention keys W₂·H_k for a fixed feature grid; computing them once
    /// per decode saves a matrix product per step.
    fn attention_keys(&self, tape: &mut Tape, features: NodeId) -> Result<NodeId> {
        tape.matmul(features, self.ids.att_w2)
    }

    /// One decoder call: embed the previous token, attend over the feature
    /// grid, advance the recurrent state, and produce raw logits (softmax is
    /// the caller's business).
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        prev_token: usize,
        state: NodeId,
        features: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let keys = self.attention_keys(tape, features)?;
        self.decode_step_with_keys(tape, prev_token, state, features, keys)
    }

    fn decode_step_with_keys(
        &self,
        tape: &mut Tape,
        prev_token: usize,
        state: NodeId,
        features: NodeId,
        keys: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let v = self.model.vocab.size();
        if prev_token >= v {
            return Err(Error::contract(format!(
                "token {prev_token} out of range for vocabulary of {v}"
            )));
        }

        // additive attention: score_k = v · tanh(W₁·state + W₂·H_k)
        let query = tape.vecmat(state, self.ids.att_w1)?;
        let pre = tape.add_row(keys, query)?;
        let act = tape.tanh(pre);
        let scores = tape.matvec(act, self.ids.att_v)?;
        let alpha = tape.softmax(scores, 0)?;
        let context = tape.vecmat(alpha, features)?;

        // gated recurrent cell over [embedding; context]
        let emb = tape.select_row(self.ids.tok_embed, prev_token)?;
        let input = tape.concat(emb, context)?;

        let z = self.gate(
            tape,
            input,
            state,
            self.ids.gru_wz,
            self.ids.gru_uz,
            self.ids.gru_bz,
        )?;
        let z = tape.sigmoid(z);
        let r = self.gate(
            tape,
            input,
            state,
            self.ids.gru_wr,
            self.ids.gru_ur,
            self.ids.gru_br,
        )?;
        let r = tape.sigmoid(r);

        let gated_state = tape.mul(r, state)?;
        let cand = self.gate(
            tape,
            input,
            gated_state,
            self.ids.gru_wc,
            self.ids.gru_uc,
            self.ids.gru_bc,
        )?;
        let cand = tape.tanh(cand);

        let neg_z = tape.neg(z);
        let keep = tape.add_scalar(neg_z, 1.0);
        let kept = tape.mul(keep, state)?;
        let new_part = tape.mul(z, cand)?;
        let new_state = tape.add(kept, new_part)?;

        let proj = tape.vecmat(new_state, self.ids.out_w)?;
        let logits = tape.add(proj, self.ids.out_b)?;
        Ok((logits, new_state))
    }

    fn gate(
        &self,
        tape: &mut Tape,
        input: NodeId,
        state: NodeId,
        w: NodeId,
        u: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        let wi = tape.vecmat(input, w)?;
        let us = tape.vecmat(state, u)?;
        let s = tape.add(wi, us)?;
        tape.add(s, b)
    }

    /// Zeroed initial decoder state.
    pub fn init_state(&self, tape: &mut Tape) -> NodeId {
        tape.leaf(Tensor::zeros(vec![self.model.hyper.d_h]))
    }

    /// Greedy decode with full trace capture. Returns the trace and the tape
    /// handle for each step's logits, so losses can differentiate through the
    /// unrolled loop. Argmax ties resolve to the lowest index. The loop count
    /// tallies decoder calls only: SOS is consumed as the first input and
    /// never emitted, while the terminating EOS (when reached) is counted as
    /// an output step.
    pub fn greedy_decode(
        &self,
        tape: &mut Tape,
        image: NodeId,
    ) -> Result<(DecodeTrace, Vec<NodeId>)> {
        let features = self.encode(tape, image)?;
        let keys = self.attention_keys(tape, features)?;
        let eos = self.model.vocab.eos();
        let max_len = self.model.hyper.max_len;

        let mut state = self.init_state(tape);
        let mut prev = self.model.vocab.sos();
        let mut logit_ids = Vec::new();
        let mut tokens = Vec::new();
        let mut logits = Vec::new();
        let mut probs = Vec::new();
        let mut terminated_by = Termination::MaxLen;

        for _ in 0..max_len {
            let (step_logits, new_state) =
                self.decode_step_with_keys(tape, prev, state, features, keys)?;
            state = new_state;
            let lv = tape.value(step_logits).data().to_vec();
            let mut pv = vec![0.0; lv.len()];
            softmax_lane(&lv, &mut pv);
            let token = argmax(&pv);
            logit_ids.push(step_logits);
            logits.push(lv);
            probs.push(pv);
            tokens.push(token);
            if token == eos {
                terminated_by = Termination::Eos;
                break;
            }
            prev = token;
        }

        let trace = DecodeTrace {
            steps: tokens.len(),
            tokens,
            logits,
            probs,
            terminated_by,
        };
        Ok((trace, logit_ids))
    }

    /// Teacher-forced unroll: feed each of `inputs` in turn (the first must
    /// be SOS) and return each step's logits handle.
    pub fn teacher_forced(
        &self,
        tape: &mut Tape,
        image: NodeId,
        inputs: &[usize],
    ) -> Result<Vec<NodeId>> {
        if inputs.first() != Some(&self.model.vocab.sos()) {
            return Err(Error::contract("teacher-forced input must begin with sos"));
        }
        if inputs.len() > self.model.hyper.max_len {
            return Err(Error::contract(format!(
                "caption of {} steps exceeds max_len {}",
                inputs.len(),
                self.model.hyper.max_len
            )));
        }
        let features = self.encode(tape, image)?;
        let keys = self.attention_keys(tape, features)?;
        let mut state = self.init_state(tape);
        let mut logit_ids = Vec::with_capacity(inputs.len());
        for &tok in inputs {
            let (step_logits, new_state) =
                self.decode_step_with_keys(tape, tok, state, features, keys)?;
            state = new_state;
            logit_ids.push(step_logits);
        }
        Ok(logit_ids)
    }

    /// Mean negative log-likelihood of a full caption `[sos, t₁.., (eos)]`
    /// under teacher forcing; the EOS position participates in the loss.
    pub fn caption_nll(&self, tape: &mut Tape, image: NodeId, caption: &[usize]) -> Result<NodeId> {
        if caption.len() < 2 {
            return Err(Error::contract("caption must contain sos and a target"));
        }
        let inputs = &caption[..caption.len() - 1];
        let targets = &caption[1..];
        let logit_ids = self.teacher_forced(tape, image, inputs)?;
        let mut total: Option<NodeId> = None;
        for (logits, &target) in logit_ids.iter().zip(targets) {
            let ls = tape.log_softmax(*logits, 0)?;
            let picked = tape.select(ls, target)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, picked)?,
                None => picked,
            });
        }
        let total = total.expect("at least one step");
        Ok(tape.mul_scalar(total, -1.0 / targets.len() as f64))
    }
}

/// Greedy decode on a private tape; the plain-evaluation entry point.
pub fn greedy_decode(model: &CaptionModel, image: &Tensor) -> Result<DecodeTrace> {
    let mut tape = Tape::new();
    let taped = TapedModel::new(&mut tape, model, false);
    let image_id = tape.leaf(image.clone());
    let (trace, _) = taped.greedy_decode(&mut tape, image_id)?;
    Ok(trace)
}

/// Logits at each teacher-forced step, as an [n × V] tensor.
pub fn teacher_forced_logits(
    model: &CaptionModel,
    image: &Tensor,
    caption: &[usize],
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let taped = TapedModel::new(&mut tape, model, false);
    let image_id = tape.leaf(image.clone());
    let ids = taped.teacher_forced(&mut tape, image_id, caption)?;
    let v = model.vocab.size();
    let mut data = Vec::with_capacity(ids.len() * v);
    for id in &ids {
        data.extend_from_slice(tape.value(*id).data());
    }
    Tensor::new(vec![ids.len(), v], data)
}
