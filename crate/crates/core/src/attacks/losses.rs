//! Efficiency-reduction losses and the perturbation penalty.
//!
//! Both reduction losses subtract the per-step expectation of the logits
//! under the step's own output distribution, E_{k∼pᵢ}[lᵢᵏ]. The expectation
//! treats pᵢ as a sampling distribution, not a function of the logits — on
//! the tape the probabilities enter as constants — which is exactly what
//! makes ∂L_eos/∂x equal the gradient of the mean log EOS-probability.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::captioner::DecodeTrace;
use crate::error::Result;

use super::{Expectation, NormKind};

/// L_eos = (1/n)·Σᵢ [lᵢ^eos − Σₖ pᵢᵏ·lᵢᵏ]: drive the EOS logit below the
/// expected logit to delay EOS.
pub fn eos_loss(trace: &DecodeTrace, eos: usize) -> f64 {
    let n = trace.steps as f64;
    trace
        .logits
        .iter()
        .zip(&trace.probs)
        .map(|(l, p)| l[eos] - expectation(l, p))
        .sum::<f64>()
        / n
}

/// L_dep = (1/n)·Σᵢ [lᵢ^{oᵢ} − Σₖ pᵢᵏ·lᵢᵏ]: push the currently chosen token
/// down toward the expected logit to break the output dependency. Always
/// non-negative, since the argmax logit dominates the expectation.
pub fn dep_loss(trace: &DecodeTrace) -> f64 {
    let n = trace.steps as f64;
    trace
        .logits
        .iter()
        .zip(&trace.probs)
        .zip(&trace.tokens)
        .map(|((l, p), &o)| l[o] - expectation(l, p))
        .sum::<f64>()
        / n
}

fn expectation(logits: &[f64], probs: &[f64]) -> f64 {
    logits.iter().zip(probs).map(|(l, p)| l * p).sum()
}

/// Hinge penalty on the budget: zero inside ‖δ‖ ≤ ε, then ‖δ‖ − ε, growing
/// linearly and continuous at the hinge.
pub fn perturbation_penalty(delta: &Tensor, eps: f64, norm: NormKind) -> f64 {
    (norm.measure(delta) - eps).max(0.0)
}

/// Tape nodes for (L_eos, L_dep) over a traced greedy decode, sharing the
/// per-step expectation terms. With `Expectation::Sampled`, each step's
/// expectation is the mean of `m` logits drawn from pᵢ.
pub fn reduction_loss_nodes(
    tape: &mut Tape,
    logit_ids: &[NodeId],
    trace: &DecodeTrace,
    eos: usize,
    expectation: Expectation,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeId, NodeId)> {
    debug_assert_eq!(logit_ids.len(), trace.steps);
    let mut eos_sum: Option<NodeId> = None;
    let mut dep_sum: Option<NodeId> = None;

    for (i, &logits) in logit_ids.iter().enumerate() {
        let expect = match expectation {
            Expectation::Exact => {
                // probabilities enter as constants: detached expectation
                let probs = tape.leaf(Tensor::new(
                    vec![trace.probs[i].len()],
                    trace.probs[i].clone(),
                )?);
                let weighted = tape.mul(probs, logits)?;
                tape.sum(weighted)
            }
            Expectation::Sampled { m } => {
                let mut acc: Option<NodeId> = None;
                for _ in 0..m {
                    let k = sample_index(&trace.probs[i], rng);
                    let picked = tape.select(logits, k)?;
                    acc = Some(match acc {
                        Some(a) => tape.add(a, picked)?,
                        None => picked,
                    });
                }
                let total = acc.expect("m >= 1 checked by config validation");
                tape.mul_scalar(total, 1.0 / m as f64)
            }
        };

        let eos_logit = tape.select(logits, eos)?;
        let eos_term = tape.sub(eos_logit, expect)?;
        eos_sum = Some(match eos_sum {
            Some(a) => tape.add(a, eos_term)?,
            None => eos_term,
        });

        let chosen_logit = tape.select(logits, trace.tokens[i])?;
        let dep_term = tape.sub(chosen_logit, expect)?;
        dep_sum = Some(match dep_sum {
            Some(a) => tape.add(a, dep_term)?,
            None => dep_term,
        });
    }

    let scale = 1.0 / trace.steps as f64;
    let l_eos = tape.mul_scalar(eos_sum.expect("trace is nonempty"), scale);
    let l_dep = tape.mul_scalar(dep_sum.expect("trace is nonempty"), scale);
    Ok((l_eos, l_dep))
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captioner::Termination;

    fn one_step_trace(logits: Vec<f64>) -> DecodeTrace {
        let mut probs = vec![0.0; logits.len()];
        crate::autodiff::softmax_lane(&logits, &mut probs);
        let token = crate::autodiff::argmax(&probs);
        DecodeTrace {
            steps: 1,
            tokens: vec![token],
            logits: vec![logits],
            probs: vec![probs],
            terminated_by: Termination::MaxLen,
        }
    }

    #[test]
    fn uniform_logits_zero_both_losses() {
        let trace = one_step_trace(vec![0.0, 0.0]);
        assert!(eos_loss(&trace, 0).abs() < 1e-12);
        assert!(dep_loss(&trace).abs() < 1e-12);
    }

    #[test]
    fn eos_loss_two_token_hand_value() {
        // V=2 {eos, A}, logits [2, 0]: p_eos = e²/(e²+1) ≈ 0.8808,
        // L = 2 − (0.8808·2 + 0.1192·0) = 0.2384
        let trace = one_step_trace(vec![2.0, 0.0]);
        let l = eos_loss(&trace, 0);
        assert!((l - 0.2384).abs() < 1e-3, "L_eos = {l}");
        let p = 2f64.exp() / (2f64.exp() + 1.0);
        assert!((l - (2.0 - 2.0 * p)).abs() < 1e-12);
    }

    #[test]
    fn dep_loss_three_token_hand_value() {
        // V=3, logits [3,0,0], o = argmax = 0: L = 3 − Σ p_k·l_k
        let trace = one_step_trace(vec![3.0, 0.0, 0.0]);
        let z = 3f64.exp() + 2.0;
        let p0 = 3f64.exp() / z;
        let expected = 3.0 - 3.0 * p0;
        assert!((dep_loss(&trace) - expected).abs() < 1e-12);
    }

    #[test]
    fn losses_are_invariant_under_per_step_logit_shifts() {
        let base = one_step_trace(vec![1.0, -0.5, 2.5, 0.0]);
        for c in [-3.0, 0.7, 11.0] {
            let shifted_logits: Vec<f64> = base.logits[0].iter().map(|l| l + c).collect();
            let shifted = one_step_trace(shifted_logits);
            assert!((eos_loss(&base, 2) - eos_loss(&shifted, 2)).abs() < 1e-9);
            assert!((dep_loss(&base) - dep_loss(&shifted)).abs() < 1e-9);
        }
    }

    #[test]
    fn dep_loss_is_never_negative() {
        let mut rng = crate::rng::rng_from_seed(77);
        use rand::Rng;
        for _ in 0..50 {
            let v = rng.random_range(2..8);
            let logits: Vec<f64> = (0..v).map(|_| rng.random_range(-4.0..4.0)).collect();
            let trace = one_step_trace(logits);
            assert!(dep_loss(&trace) >= -1e-12);
        }
    }

    #[test]
    fn penalty_is_a_continuous_hinge() {
        let delta = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap(); // L2 = 5
        assert_eq!(perturbation_penalty(&delta, 10.0, NormKind::L2), 0.0);
        assert_eq!(perturbation_penalty(&delta, 5.0, NormKind::L2), 0.0);
        assert!((perturbation_penalty(&delta, 1.0, NormKind::L2) - 4.0).abs() < 1e-12);
        // near the hinge: values converge to zero from the right
        let just_over = perturbation_penalty(&delta, 5.0 - 1e-9, NormKind::L2);
        assert!(just_over > 0.0 && just_over < 1e-8);
        // inside the budget at half the radius
        assert_eq!(perturbation_penalty(&delta, 10.0, NormKind::Linf), 0.0);
    }

    #[test]
    fn node_losses_match_the_pure_functions() {
        // build a trace on a tape via leaf logits and compare node values
        let logits_steps = vec![vec![1.0, 0.2, -0.3], vec![0.0, 2.0, 0.5]];
        let mut probs_steps = Vec::new();
        let mut tokens = Vec::new();
        for l in &logits_steps {
            let mut p = vec![0.0; l.len()];
            crate::autodiff::softmax_lane(l, &mut p);
            tokens.push(crate::autodiff::argmax(&p));
            probs_steps.push(p);
        }
        let trace = DecodeTrace {
            steps: 2,
            tokens,
            logits: logits_steps.clone(),
            probs: probs_steps,
            terminated_by: Termination::MaxLen,
        };

        let mut tape = Tape::new();
        let ids: Vec<NodeId> = logits_steps
            .iter()
            .map(|l| tape.leaf(Tensor::new(vec![l.len()], l.clone()).unwrap()))
            .collect();
        let mut rng = crate::rng::rng_from_seed(0);
        let (le, ld) =
            reduction_loss_nodes(&mut tape, &ids, &trace, 0, Expectation::Exact, &mut rng).unwrap();
        assert!((tape.value(le).item().unwrap() - eos_loss(&trace, 0)).abs() < 1e-12);
        assert!((tape.value(ld).item().unwrap() - dep_loss(&trace)).abs() < 1e-12);
    }

    #[test]
    fn sampled_expectation_converges_to_exact() {
        let logits = vec![1.5, -0.5, 0.8, 0.0];
        let trace = one_step_trace(logits.clone());
        let exact = eos_loss(&trace, 1);

        let sampled_value = |m: usize, seed: u64| -> f64 {
            let mut tape = Tape::new();
            let id = tape.leaf(Tensor::new(vec![4], logits.clone()).unwrap());
            let mut rng = crate::rng::rng_from_seed(seed);
            let (le, _) = reduction_loss_nodes(
                &mut tape,
                &[id],
                &trace,
                1,
                Expectation::Sampled { m },
                &mut rng,
            )
            .unwrap();
            tape.value(le).item().unwrap()
        };

        let err = |m: usize| -> f64 {
            (0..20)
                .map(|s| (sampled_value(m, s) - exact).abs())
                .sum::<f64>()
                / 20.0
        };
        assert!(
            err(256) < err(4),
            "m=256 error {} vs m=4 error {}",
            err(256),
            err(4)
        );
    }
}
