//! Decode trace: the per-step record of one greedy decode.

use serde::{Deserialize, Serialize};

use crate::captioner::Vocabulary;
use crate::error::{Error, Result};

/// Why a decode stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLen,
}

/// Record of one greedy decode: `steps` is the number of decoder calls (the
/// loop count), and `tokens[i] == argmax(probs[i])` at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub steps: usize,
    pub tokens: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    pub terminated_by: Termination,
}

impl DecodeTrace {
    /// Caption tokens without the trailing EOS (if any); the sequence BLEU
    /// and the grammar care about.
    pub fn caption_tokens(&self) -> &[usize] {
        match self.terminated_by {
            Termination::Eos => &self.tokens[..self.tokens.len() - 1],
            Termination::MaxLen => &self.tokens,
        }
    }

    /// Check the structural invariants of a trace.
    pub fn validate(&self, eos: usize, max_len: usize) -> Result<()> {
        if self.steps == 0 || self.steps > max_len {
            return Err(Error::contract(format!(
                "trace steps {} outside [1, {max_len}]",
                self.steps
            )));
        }
        if self.tokens.len() != self.steps
            || self.logits.len() != self.steps
            || self.probs.len() != self.steps
        {
            return Err(Error::contract("trace field lengths disagree"));
        }
        let mut scratch = Vec::new();
        for (i, (p, &tok)) in self.probs.iter().zip(&self.tokens).enumerate() {
            let argmax = crate::autodiff::argmax(p);
            if argmax != tok {
                return Err(Error::contract(format!(
                    "token at step {i} is {tok}, argmax is {argmax}"
                )));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::contract(format!(
                    "probabilities at step {i} sum to {sum}"
                )));
            }
            scratch.resize(p.len(), 0.0);
            crate::autodiff::softmax_lane(&self.logits[i], &mut scratch);
            if p.iter().zip(&scratch).any(|(a, b)| (a - b).abs() > 1e-6) {
                return Err(Error::contract(format!(
                    "probabilities at step {i} are not the softmax of the logits"
                )));
            }
        }
        match self.terminated_by {
            Termination::Eos => {
                if *self.tokens.last().unwrap() != eos {
                    return Err(Error::contract("eos-terminated trace does not end in eos"));
                }
            }
            Termination::MaxLen => {
                if self.steps != max_len {
                    return Err(Error::contract(format!(
                        "max-len trace has {} steps, cap is {max_len}",
                        self.steps
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            steps: self.steps,
            tokens: self.tokens.clone(),
            terminated_by: self.terminated_by,
        }
    }

    /// Render the caption as words.
    pub fn caption_words(&self, vocab: &Vocabulary) -> Vec<String> {
        vocab.decode(self.caption_tokens())
    }
}

/// Compact, serializable view of a trace (the full logits are large and only
/// needed in memory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub tokens: Vec<usize>,
    pub terminated_by: Termination,
}
