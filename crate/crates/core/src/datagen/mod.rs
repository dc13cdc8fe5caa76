//! Deterministic synthetic dataset: scenes of colored shapes on a 32×32
//! canvas, each captioned by a terse and a verbose template (plus an optional
//! counting caption), so caption length varies strongly with scene
//! complexity and across references for the same image.

mod files;
mod grammar;
mod render;
mod scene;

pub use files::{load_dataset, save_dataset, DatasetManifest, DATASET_FILES};
pub use grammar::caption_grammar;
pub use render::render;
pub use scene::{sample_scene, ColorName, SceneSpec, ShapeKind, ShapeSpec, CANVAS};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::captioner::Vocabulary;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Vocabulary frequency threshold: tokens rarer than this in the training
/// captions map to `<unk>`.
pub const MIN_TOKEN_FREQUENCY: usize = 5;

/// One image with its encoded reference captions. Every reference ends with
/// EOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionedExample {
    pub image: Tensor,
    pub captions: Vec<Vec<usize>>,
}

/// Generated corpus with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub vocab: Vocabulary,
    pub train: Vec<CaptionedExample>,
    pub val: Vec<CaptionedExample>,
    pub test: Vec<CaptionedExample>,
}

/// Generate train/val/test splits plus the vocabulary, deterministically in
/// the seed. The vocabulary is built from the training captions only.
pub fn generate_dataset(seed: u64, n_train: usize, n_val: usize, n_test: usize) -> Result<Dataset> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::config("split sizes must be positive"));
    }

    let mut stream = 0u64;
    let mut raw_split = |count: usize| -> Vec<(Tensor, Vec<Vec<String>>)> {
        (0..count)
            .map(|_| {
                let example_seed = derive_seed(seed, stream);
                stream += 1;
                let mut rng = crate::rng::rng_from_seed(example_seed);
                let scene = sample_scene(example_seed, &mut rng);
                let image = render(&scene);
                let captions = caption_grammar(&scene, &mut rng);
                (image, captions)
            })
            .collect()
    };

    let train_raw = raw_split(n_train);
    let val_raw = raw_split(n_val);
    let test_raw = raw_split(n_test);

    let train_captions: Vec<Vec<String>> = train_raw
        .iter()
        .flat_map(|(_, caps)| caps.iter().cloned())
        .collect();
    let vocab = Vocabulary::build(&train_captions, MIN_TOKEN_FREQUENCY);

    let encode_split = |raw: Vec<(Tensor, Vec<Vec<String>>)>, vocab: &Vocabulary| {
        raw.into_iter()
            .map(|(image, caps)| CaptionedExample {
                image,
                captions: caps.iter().map(|c| vocab.encode_terminated(c)).collect(),
            })
            .collect::<Vec<_>>()
    };

    let train = encode_split(train_raw, &vocab);
    let val = encode_split(val_raw, &vocab);
    let test = encode_split(test_raw, &vocab);
    Ok(Dataset {
        seed,
        vocab,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_bit_identical_datasets() {
        let a = generate_dataset(5, 20, 4, 4).unwrap();
        let b = generate_dataset(5, 20, 4, 4).unwrap();
        assert_eq!(a.vocab, b.vocab);
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
        let c = generate_dataset(6, 20, 4, 4).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn zero_split_is_a_config_error() {
        assert!(generate_dataset(1, 0, 1, 1).is_err());
        assert!(generate_dataset(1, 1, 1, 0).is_err());
    }

    #[test]
    fn every_reference_ends_with_eos() {
        let ds = generate_dataset(3, 25, 5, 5).unwrap();
        for ex in ds.train.iter().chain(&ds.val).chain(&ds.test) {
            assert!(ex.captions.len() >= 2 && ex.captions.len() <= 3);
            for cap in &ex.captions {
                assert_eq!(*cap.last().unwrap(), ds.vocab.eos());
            }
        }
    }

    #[test]
    fn references_for_one_image_have_different_lengths() {
        let ds = generate_dataset(9, 30, 5, 5).unwrap();
        for ex in &ds.train {
            let lens: Vec<usize> = ex.captions.iter().map(Vec::len).collect();
            assert!(
                lens.windows(2).any(|w| w[0] != w[1]) || lens.len() == 1,
                "caption lengths {lens:?} show no variety"
            );
        }
    }

    #[test]
    fn corpus_caption_lengths_span_and_spread() {
        // Lengths (in words, pre-EOS) must reach down to 4, up past 30, and
        // have a standard deviation above 4 tokens; measured on a generated
        // corpus.
        let ds = generate_dataset(1, 400, 10, 10).unwrap();
        let lens: Vec<f64> = ds
            .train
            .iter()
            .flat_map(|ex| ex.captions.iter().map(|c| (c.len() - 1) as f64))
            .collect();
        let min = lens.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = lens.iter().cloned().fold(0.0, f64::max);
        assert!(min <= 4.0, "shortest caption {min} > 4 words");
        assert!(max >= 30.0, "longest caption {max} < 30 words");
        let mean = lens.iter().sum::<f64>() / lens.len() as f64;
        let var = lens.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / lens.len() as f64;
        assert!(
            var.sqrt() > 4.0,
            "caption length std dev {} <= 4",
            var.sqrt()
        );
    }

    #[test]
    fn vocabulary_is_stable_across_reruns() {
        let a = generate_dataset(7, 120, 10, 10).unwrap();
        let b = generate_dataset(7, 120, 10, 10).unwrap();
        assert_eq!(a.vocab.size(), b.vocab.size());
        assert_eq!(a.vocab, b.vocab);
    }

    #[test]
    fn all_caption_tokens_are_in_vocabulary_or_unk() {
        let ds = generate_dataset(11, 40, 6, 6).unwrap();
        let v = ds.vocab.size();
        for ex in ds.train.iter().chain(&ds.val).chain(&ds.test) {
            for cap in &ex.captions {
                assert!(cap.iter().all(|&t| t < v));
            }
        }
    }
}
