//! The decode-loop slowdown attack.
//!
//! Each iteration re-runs the greedy decode on the current adversarial image
//! (so the token path is always the argmax path of the current iterate),
//! builds L_total = L_eos + λ_dep·L_dep + λ_per·max(0, ‖δ‖ − ε), and takes a
//! constant-length gradient-descent step on the latent w. Descending L_eos
//! pushes the EOS logit below the expected logit, which is what delays
//! termination.

use crate::autodiff::{Tape, Tensor};
use crate::captioner::{greedy_decode, CaptionModel, DecodeTrace, TapedModel};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

use super::latent::init_latent;
use super::losses::reduction_loss_nodes;
use super::{AttackConfig, AttackMethod, AttackResult, LossSample, NormKind};

/// Run the attack on one image. Returns the best iterate by (max loop count,
/// then min ‖δ‖) among in-budget iterates; iteration zero evaluates the
/// (numerically) unperturbed image, so a no-op is always available.
pub fn slowdown_attack(
    model: &CaptionModel,
    image: &Tensor,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let benign = greedy_decode(model, image)?;
    let eos = model.vocab.eos();
    let mut w = init_latent(image)?.data().to_vec();
    let mut rng = rng_from_seed(config.seed);
    let mut loss_curve = Vec::with_capacity(config.iters);
    let mut best: Option<(usize, f64, Tensor, DecodeTrace)> = None;

    for iter in 0..config.iters {
        let mut tape = Tape::new();
        let taped = TapedModel::new(&mut tape, model, false);
        let w_leaf = tape.leaf(Tensor::new(image.shape().to_vec(), w.clone())?.requires_grad(true));
        let x_adv = tape.to_image(w_leaf);

        let (trace, logit_ids) = taped.greedy_decode(&mut tape, x_adv)?;
        let (l_eos, l_dep) = reduction_loss_nodes(
            &mut tape,
            &logit_ids,
            &trace,
            eos,
            config.expectation,
            &mut rng,
        )?;
        let weighted_dep = tape.mul_scalar(l_dep, config.lambda_dep);
        let l_deg = tape.add(l_eos, weighted_dep)?;

        let x_orig = tape.leaf(image.clone());
        let delta = tape.sub(x_adv, x_orig)?;
        let norm_node = match config.norm {
            NormKind::L2 => {
                let sq = tape.mul(delta, delta)?;
                let sum = tape.sum(sq);
                tape.sqrt(sum)?
            }
            NormKind::Linf => {
                let mag = tape.abs(delta);
                tape.max_all(mag)
            }
        };
        let norm_val = tape.value(norm_node).item()?;
        let per_val = (norm_val - config.eps).max(0.0);

        // hinge: the penalty node exists only when the budget is exceeded
        let total = if norm_val > config.eps {
            let overshoot = tape.add_scalar(norm_node, -config.eps);
            let weighted = tape.mul_scalar(overshoot, config.lambda_per);
            tape.add(l_deg, weighted)?
        } else {
            l_deg
        };

        let eos_val = tape.value(l_eos).item()?;
        let dep_val = tape.value(l_dep).item()?;
        let total_val = tape.value(total).item()?;
        if !total_val.is_finite() {
            return Err(Error::Numeric(format!(
                "slowdown loss became non-finite at iteration {iter}"
            )));
        }
        loss_curve.push(LossSample {
            eos: Some(eos_val),
            dep: Some(dep_val),
            per: Some(per_val),
            total: total_val,
        });

        if norm_val <= config.budget_cap() {
            let better = match &best {
                None => true,
                Some((steps, norm, _, _)) => {
                    trace.steps > *steps || (trace.steps == *steps && norm_val < *norm)
                }
            };
            if better {
                best = Some((
                    trace.steps,
                    norm_val,
                    tape.value(x_adv).clone(),
                    trace.clone(),
                ));
            }
        }

        tape.backward(total)?;
        let grad = tape
            .grad(w_leaf)
            .ok_or_else(|| Error::Numeric(format!("no latent gradient at iteration {iter}")))?;
        // Constant-length descent step: the raw gradient magnitude swings
        // over orders of magnitude between the reduction losses and an
        // active penalty hinge, so an unnormalized step either stalls or
        // detonates depending on the weights. Normalizing keeps the update
        // a fixed-size move along the descent direction.
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-12);
        let scale = config.lr / norm;
        for (wi, gi) in w.iter_mut().zip(grad) {
            *wi -= scale * gi;
        }
    }

    let (_, _, adv_image, adversarial) = best.ok_or_else(|| {
        Error::Numeric("no in-budget iterate found (unreachable for sane budgets)".into())
    })?;
    AttackResult::assemble(
        AttackMethod::Slowdown,
        image,
        benign,
        adv_image,
        adversarial,
        loss_curve,
        config.iters,
    )
}
