//! Projected sign-gradient baseline: an accuracy attack that maximizes the
//! teacher-forced cross-entropy of the benign caption.

use crate::autodiff::{Tape, Tensor};
use crate::captioner::{greedy_decode, CaptionModel, TapedModel};
use crate::error::{Error, Result};

use super::{AttackConfig, AttackMethod, AttackResult, LossSample, NormKind};

/// Iterative sign-gradient ascent on the caption NLL, projected onto the
/// ε-ball and the [0, 1] box after every step. The caption must be the
/// model's benign greedy output (with SOS prepended); zero iterations
/// return the input unchanged.
pub fn pgd_baseline(
    model: &CaptionModel,
    image: &Tensor,
    caption: &[usize],
    config: &AttackConfig,
) -> Result<AttackResult> {
    let benign = check_benign_caption(model, image, caption)?;
    let mut adv = image.data().to_vec();
    let mut curve = Vec::with_capacity(config.iters);

    for iter in 0..config.iters {
        let mut tape = Tape::new();
        let taped = TapedModel::new(&mut tape, model, false);
        let leaf = tape.leaf(Tensor::new(image.shape().to_vec(), adv.clone())?.requires_grad(true));
        let nll = taped.caption_nll(&mut tape, leaf, caption)?;
        let value = tape.value(nll).item()?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "pgd objective became non-finite at iteration {iter}"
            )));
        }
        curve.push(LossSample {
            eos: None,
            dep: None,
            per: None,
            total: value,
        });
        tape.backward(nll)?;
        let grad = tape
            .grad(leaf)
            .ok_or_else(|| Error::Numeric(format!("no input gradient at iteration {iter}")))?;

        for (v, g) in adv.iter_mut().zip(grad) {
            *v += config.lr * sign(*g);
        }
        project(&mut adv, image.data(), config);
    }

    let adv_image = Tensor::new(image.shape().to_vec(), adv)?;
    let adversarial = greedy_decode(model, &adv_image)?;
    AttackResult::assemble(
        AttackMethod::Pgd,
        image,
        benign,
        adv_image,
        adversarial,
        curve,
        config.iters,
    )
}

/// The accuracy baselines attack the model's own benign caption; verify the
/// caller passed exactly that.
pub(crate) fn check_benign_caption(
    model: &CaptionModel,
    image: &Tensor,
    caption: &[usize],
) -> Result<crate::captioner::DecodeTrace> {
    let benign = greedy_decode(model, image)?;
    let mut expected = vec![model.vocab.sos()];
    expected.extend_from_slice(&benign.tokens);
    if caption != expected {
        return Err(Error::contract(
            "caption is not the model's benign greedy output",
        ));
    }
    Ok(benign)
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Exact projection onto the ε-ball around the original, then onto the box.
fn project(adv: &mut [f64], original: &[f64], config: &AttackConfig) {
    match config.norm {
        NormKind::Linf => {
            for (v, &o) in adv.iter_mut().zip(original) {
                let d = (*v - o).clamp(-config.eps, config.eps);
                *v = (o + d).clamp(0.0, 1.0);
            }
        }
        NormKind::L2 => {
            let norm: f64 = adv
                .iter()
                .zip(original)
                .map(|(v, o)| (v - o) * (v - o))
                .sum::<f64>()
                .sqrt();
            let scale = if norm > config.eps {
                config.eps / norm
            } else {
                1.0
            };
            for (v, &o) in adv.iter_mut().zip(original) {
                *v = (o + (*v - o) * scale).clamp(0.0, 1.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::small_trained;
    use super::*;

    fn caption_for(model: &CaptionModel, image: &Tensor) -> Vec<usize> {
        let trace = crate::captioner::greedy_decode(model, image).unwrap();
        let mut caption = vec![model.vocab.sos()];
        caption.extend_from_slice(&trace.tokens);
        caption
    }

    #[test]
    fn zero_iterations_return_the_input() {
        let (model, images) = small_trained().clone();
        let caption = caption_for(&model, &images[0]);
        let config = AttackConfig {
            iters: 1,
            ..AttackConfig::default_for(NormKind::Linf)
        };
        // call the core directly with a zero-iteration budget
        let zero = AttackConfig { iters: 0, ..config };
        let result = pgd_baseline(&model, &images[0], &caption, &zero).unwrap();
        assert_eq!(result.adv_image, images[0]);
        assert!(result.loss_curve.is_empty());
        assert_eq!(result.iterations, 0);
        assert_eq!(result.benign.tokens, result.adversarial.tokens);
    }

    #[test]
    fn every_iterate_respects_the_linf_projection_exactly() {
        let (model, images) = small_trained().clone();
        let caption = caption_for(&model, &images[1]);
        let config = AttackConfig {
            iters: 12,
            lr: 0.02,
            ..AttackConfig::default_for(NormKind::Linf)
        };
        let result = pgd_baseline(&model, &images[1], &caption, &config).unwrap();
        let linf = result
            .adv_image
            .data()
            .iter()
            .zip(images[1].data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(
            linf <= config.eps + 1e-15,
            "L∞ {linf} exceeds ε {}",
            config.eps
        );
        assert!(result
            .adv_image
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
        assert!((result.linf - linf).abs() < 1e-15);
    }

    #[test]
    fn l2_projection_keeps_the_ball() {
        let (model, images) = small_trained().clone();
        let caption = caption_for(&model, &images[2]);
        let config = AttackConfig {
            iters: 8,
            lr: 0.05,
            ..AttackConfig::default_for(NormKind::L2)
        };
        let result = pgd_baseline(&model, &images[2], &caption, &config).unwrap();
        let l2 = result
            .adv_image
            .data()
            .iter()
            .zip(images[2].data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(l2 <= config.eps * (1.0 + 1e-9));
    }

    #[test]
    fn wrong_caption_violates_the_precondition() {
        let (model, images) = small_trained().clone();
        let mut caption = caption_for(&model, &images[0]);
        caption.push(model.vocab.unk());
        let config = AttackConfig {
            iters: 1,
            ..AttackConfig::default_for(NormKind::Linf)
        };
        assert!(pgd_baseline(&model, &images[0], &caption, &config).is_err());
    }

    #[test]
    fn objective_rises_under_the_attack() {
        let (model, images) = small_trained().clone();
        let caption = caption_for(&model, &images[3]);
        let config = AttackConfig {
            iters: 10,
            lr: 0.01,
            ..AttackConfig::default_for(NormKind::Linf)
        };
        let result = pgd_baseline(&model, &images[3], &caption, &config).unwrap();
        let curve = &result.loss_curve;
        assert!(
            curve.last().unwrap().total > curve[0].total,
            "cross-entropy did not increase: {} -> {}",
            curve[0].total,
            curve.last().unwrap().total
        );
    }
}
