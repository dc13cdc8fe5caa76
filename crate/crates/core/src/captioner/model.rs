//! Model hyperparameters, parameter set, and initialization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

use super::vocab::Vocabulary;

/// Architecture hyperparameters. The desk-scale defaults are 32×32×3 images
/// split into 8×8 patches (16 patch vectors), hidden and embedding width 64,
/// and a decode cap of 60 steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub d_h: usize,
    pub d_e: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Hyper {
    /// Desk-scale defaults for a given vocabulary size.
    pub fn desk_default(vocab_size: usize) -> Self {
        Hyper {
            channels: 3,
            height: 32,
            width: 32,
            patch: 8,
            d_h: 64,
            d_e: 64,
            vocab_size,
            max_len: 60,
        }
    }

    pub fn image_shape(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Number of patch vectors K.
    pub fn patch_count(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Length of one flattened patch.
    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(Error::config(format!(
                "patch {} must divide image {}x{}",
                self.patch, self.height, self.width
            )));
        }
        if self.channels == 0 || self.d_h == 0 || self.d_e == 0 || self.max_len == 0 {
            return Err(Error::config("zero-sized hyperparameter"));
        }
        if self.vocab_size <= Vocabulary::UNK {
            return Err(Error::config("vocabulary smaller than reserved set"));
        }
        Ok(())
    }
}

macro_rules! define_params {
    ($(($field:ident, $doc:literal)),* $(,)?) => {
        /// Named parameter tensors in their canonical order; checkpoints,
        /// gradients, and optimizer state all follow this order.
        #[derive(Debug, Clone, PartialEq)]
        pub struct Params {
            $(#[doc = $doc] pub $field: Tensor,)*
        }

        /// Tape handles for one forward pass over the parameters.
        #[derive(Debug, Clone, Copy)]
        pub(crate) struct ParamIds {
            $(pub $field: NodeId,)*
        }

        impl Params {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn tensors(&self) -> Vec<&Tensor> {
                vec![$(&self.$field),*]
            }

            pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
                vec![$(&mut self.$field),*]
            }

            pub(crate) fn on_tape(&self, tape: &mut Tape, requires_grad: bool) -> ParamIds {
                ParamIds {
                    $($field: tape.leaf(self.$field.clone().requires_grad(requires_grad)),)*
                }
            }
        }

        impl ParamIds {
            /// Handles in canonical parameter order.
            pub(crate) fn list(&self) -> Vec<NodeId> {
                vec![$(self.$field),*]
            }
        }
    };
}

define_params!(
    (enc_embed_w, "patch embedding `[patch_dim × d_h]`"),
    (enc_embed_b, "patch embedding bias `[d_h]`"),
    (enc_fc1_w, "encoder MLP layer 1 `[d_h × d_h]`"),
    (enc_fc1_b, "encoder MLP layer 1 bias `[d_h]`"),
    (enc_fc2_w, "encoder MLP layer 2 `[d_h × d_h]`"),
    (enc_fc2_b, "encoder MLP layer 2 bias `[d_h]`"),
    (tok_embed, "token embedding `[V × d_e]`"),
    (gru_wz, "update gate input weights `[(d_e+d_h) × d_h]`"),
    (gru_uz, "update gate state weights `[d_h × d_h]`"),
    (gru_bz, "update gate bias `[d_h]`"),
    (gru_wr, "reset gate input weights `[(d_e+d_h) × d_h]`"),
    (gru_ur, "reset gate state weights `[d_h × d_h]`"),
    (gru_br, "reset gate bias `[d_h]`"),
    (gru_wc, "candidate input weights `[(d_e+d_h) × d_h]`"),
    (gru_uc, "candidate state weights `[d_h × d_h]`"),
    (gru_bc, "candidate bias `[d_h]`"),
    (att_w1, "attention query weights `[d_h × d_h]`"),
    (att_w2, "attention key weights `[d_h × d_h]`"),
    (att_v, "attention score vector `[d_h]`"),
    (out_w, "output projection `[d_h × V]`"),
    (out_b, "output projection bias `[V]`"),
);

/// The victim model: encoder and decoder parameters plus vocabulary and
/// decode cap. Immutable once built; concurrent decodes over a shared model
/// are safe.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionModel {
    pub hyper: Hyper,
    pub vocab: Vocabulary,
    pub params: Params,
    patch_index: Vec<usize>,
}

impl CaptionModel {
    /// Assemble a model from parts, validating shapes.
    pub fn from_parts(hyper: Hyper, vocab: Vocabulary, params: Params) -> Result<Self> {
        hyper.validate()?;
        vocab.validate()?;
        if vocab.size() != hyper.vocab_size {
            return Err(Error::config(format!(
                "vocabulary size {} does not match hyper {}",
                vocab.size(),
                hyper.vocab_size
            )));
        }
        let expect = expected_shapes(&hyper);
        for ((name, shape), tensor) in Params::NAMES.iter().zip(&expect).zip(params.tensors()) {
            let _ = name;
            if tensor.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    tensor.shape()
                )));
            }
        }
        let patch_index = build_patch_index(&hyper);
        Ok(CaptionModel {
            hyper,
            vocab,
            params,
            patch_index,
        })
    }

    /// Fresh model with Xavier-uniform weights and zero biases, deterministic
    /// in the seed.
    pub fn init(hyper: Hyper, vocab: Vocabulary, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = rng_from_seed(seed);
        let shapes = expected_shapes(&hyper);
        let mut tensors = Vec::with_capacity(shapes.len());
        for shape in &shapes {
            let t = if shape.len() == 2 {
                let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let data: Vec<f64> = (0..shape[0] * shape[1])
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Tensor::new(shape.clone(), data)?
            } else {
                Tensor::zeros(shape.clone())
            };
            tensors.push(t);
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("shape table covers every parameter");
        let params = Params {
            enc_embed_w: next(),
            enc_embed_b: next(),
            enc_fc1_w: next(),
            enc_fc1_b: next(),
            enc_fc2_w: next(),
            enc_fc2_b: next(),
            tok_embed: next(),
            gru_wz: next(),
            gru_uz: next(),
            gru_bz: next(),
            gru_wr: next(),
            gru_ur: next(),
            gru_br: next(),
            gru_wc: next(),
            gru_uc: next(),
            gru_bc: next(),
            att_w1: next(),
            att_w2: next(),
            att_v: next(),
            out_w: next(),
            out_b: next(),
        };
        Self::from_parts(hyper, vocab, params)
    }

    pub(crate) fn patch_index(&self) -> &[usize] {
        &self.patch_index
    }

    /// Replace the parameter set (used when restoring the best-validation
    /// snapshot); shapes must be unchanged.
    pub fn with_params(&self, params: Params) -> Result<Self> {
        Self::from_parts(self.hyper.clone(), self.vocab.clone(), params)
    }
}

/// Canonical parameter shapes, in `Params::NAMES` order.
pub(crate) fn expected_shapes(h: &Hyper) -> Vec<Vec<usize>> {
    let u = h.d_e + h.d_h;
    vec![
        vec![h.patch_dim(), h.d_h], // enc_embed_w
        vec![h.d_h],                // enc_embed_b
        vec![h.d_h, h.d_h],         // enc_fc1_w
        vec![h.d_h],                // enc_fc1_b
        vec![h.d_h, h.d_h],         // enc_fc2_w
        vec![h.d_h],                // enc_fc2_b
        vec![h.vocab_size, h.d_e],  // tok_embed
        vec![u, h.d_h],             // gru_wz
        vec![h.d_h, h.d_h],         // gru_uz
        vec![h.d_h],                // gru_bz
        vec![u, h.d_h],             // gru_wr
        vec![h.d_h, h.d_h],         // gru_ur
        vec![h.d_h],                // gru_br
        vec![u, h.d_h],             // gru_wc
        vec![h.d_h, h.d_h],         // gru_uc
        vec![h.d_h],                // gru_bc
        vec![h.d_h, h.d_h],         // att_w1
        vec![h.d_h, h.d_h],         // att_w2
        vec![h.d_h],                // att_v
        vec![h.d_h, h.vocab_size],  // out_w
        vec![h.vocab_size],         // out_b
    ]
}

/// Flat pixel indices that rearrange a [C×H×W] image into K rows of
/// channel-major patch data.
fn build_patch_index(h: &Hyper) -> Vec<usize> {
    let mut index = Vec::with_capacity(h.patch_count() * h.patch_dim());
    let per_side_y = h.height / h.patch;
    let per_side_x = h.width / h.patch;
    for py in 0..per_side_y {
        for px in 0..per_side_x {
            for c in 0..h.channels {
                for dy in 0..h.patch {
                    for dx in 0..h.patch {
                        let y = py * h.patch + dy;
                        let x = px * h.patch + dx;
                        index.push(c * h.height * h.width + y * h.width + x);
                    }
                }
            }
        }
    }
    index
}
