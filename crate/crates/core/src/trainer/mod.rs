//! Teacher-forcing maximum-likelihood training producing the victim model.

mod adam;

pub use adam::{adaptive_update, MomentState};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::captioner::{greedy_decode, CaptionModel, Hyper, TapedModel, Vocabulary};
use crate::datagen::{CaptionedExample, Dataset};
use crate::error::{Error, Result};
use crate::metrics::bleu;
use crate::rng::{derive_seed, rng_from_seed};

/// Training hyperparameters. The defaults are standard captioning practice:
/// lr 1e-3, β₁ 0.9, β₂ 0.999, global-norm clip 5.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub seed: u64,
    pub clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 16,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            seed: 7,
            clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if self.lr <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < b && b < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if self.clip <= 0.0 || self.eps_opt <= 0.0 {
            return Err(Error::config("clip and eps_opt must be positive"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_bleu: f64,
}

// Stream offset separating the shuffle RNG from per-example data streams.
const SHUFFLE_STREAM: u64 = 1 << 32;

/// Train a fresh model on the dataset. Deterministic in `config.seed` (which
/// also seeds the parameter init); returns the best-validation model and the
/// per-epoch log.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(CaptionModel, Vec<EpochStats>)> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::config("training split is empty"));
    }

    let hyper = Hyper::desk_default(dataset.vocab.size());
    let longest = dataset
        .train
        .iter()
        .flat_map(|ex| ex.captions.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    // stored captions end with EOS, so words + 2 == len + 1
    if longest + 1 > hyper.max_len {
        return Err(Error::config(format!(
            "caption of {longest} tokens cannot fit under max_len {}",
            hyper.max_len
        )));
    }

    let mut model = CaptionModel::init(hyper, dataset.vocab.clone(), config.seed)?;
    let mut moments = MomentState::new(&model.params);

    let mut pairs: Vec<(usize, usize)> = dataset
        .train
        .iter()
        .enumerate()
        .flat_map(|(i, ex)| (0..ex.captions.len()).map(move |j| (i, j)))
        .collect();

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, crate::captioner::Params)> = None;

    for epoch in 1..=config.epochs {
        let mut rng = rng_from_seed(derive_seed(config.seed, SHUFFLE_STREAM + epoch as u64));
        pairs.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (batch_idx, batch) in pairs.chunks(config.batch_size).enumerate() {
            let results: Result<Vec<(f64, Vec<Vec<f64>>)>> = batch
                .par_iter()
                .map(|&(ei, ci)| pair_loss_and_grads(&model, &dataset.train[ei], ci))
                .collect();
            let results = results
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {batch_idx}: {e}")))?;

            let mut grads: Vec<Vec<f64>> = model
                .params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect();
            let scale = 1.0 / results.len() as f64;
            for (loss, pair_grads) in &results {
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss diverged to {loss} at epoch {epoch}, batch {batch_idx}"
                    )));
                }
                epoch_loss += loss;
                seen += 1;
                for (acc, g) in grads.iter_mut().zip(pair_grads) {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v * scale;
                    }
                }
            }
            adaptive_update(&mut model.params, &grads, &mut moments, config);
        }

        let train_loss = epoch_loss / seen as f64;
        let val_loss = evaluate_nll(&model, &dataset.val)?;
        let val_bleu = evaluate_bleu(&model, &dataset.val)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "validation loss diverged to {val_loss} after epoch {epoch}"
            )));
        }
        log.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_bleu,
        });

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.params.clone()));
        }
    }

    let (_, best_params) = best.expect("at least one epoch ran");
    let model = model.with_params(best_params)?;
    Ok((model, log))
}

fn pair_loss_and_grads(
    model: &CaptionModel,
    example: &CaptionedExample,
    caption_idx: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let taped = TapedModel::new(&mut tape, model, true);
    let image = tape.leaf(example.image.clone());
    let caption = full_caption(model.vocab.sos(), &example.captions[caption_idx]);
    let loss = taped.caption_nll(&mut tape, image, &caption)?;
    let value = tape.value(loss).item()?;
    tape.backward(loss)?;
    Ok((value, taped.param_grads(&tape)))
}

fn full_caption(sos: usize, stored: &[usize]) -> Vec<usize> {
    let mut caption = Vec::with_capacity(stored.len() + 1);
    caption.push(sos);
    caption.extend_from_slice(stored);
    caption
}

/// Mean teacher-forced negative log-likelihood over every (image, reference)
/// pair of a split.
pub fn evaluate_nll(model: &CaptionModel, examples: &[CaptionedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::config("empty evaluation split"));
    }
    let losses: Result<Vec<f64>> = examples
        .par_iter()
        .map(|ex| {
            let mut total = 0.0;
            for caption in &ex.captions {
                let mut tape = Tape::new();
                let taped = TapedModel::new(&mut tape, model, false);
                let image = tape.leaf(ex.image.clone());
                let full = full_caption(model.vocab.sos(), caption);
                let loss = taped.caption_nll(&mut tape, image, &full)?;
                total += tape.value(loss).item()?;
            }
            Ok(total / ex.captions.len() as f64)
        })
        .collect();
    let losses = losses?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean sentence BLEU of greedy captions against the stored references.
pub fn evaluate_bleu(model: &CaptionModel, examples: &[CaptionedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::config("empty evaluation split"));
    }
    let scores: Result<Vec<f64>> = examples
        .par_iter()
        .map(|ex| {
            let trace = greedy_decode(model, &ex.image)?;
            Ok(bleu(trace.caption_tokens(), &strip_eos(&ex.captions)))
        })
        .collect();
    let scores = scores?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// References without their terminating EOS, for BLEU scoring.
pub fn strip_eos(captions: &[Vec<usize>]) -> Vec<Vec<usize>> {
    captions
        .iter()
        .map(|c| match c.last() {
            Some(&t) if t == Vocabulary::EOS => c[..c.len() - 1].to_vec(),
            _ => c.clone(),
        })
        .collect()
}
