//! Wall-clock latency measurement and the deterministic proxy.

use std::time::Instant;

use crate::autodiff::Tensor;
use crate::captioner::{greedy_decode, CaptionModel};
use crate::error::{Error, Result};

/// Nominal cost of one decoder call for the deterministic latency proxy.
pub const COST_PER_STEP_NS: u64 = 1_000_000;

/// Deterministic latency proxy: exactly linear in the loop count, so
/// proxy-derived inflation percentages equal loop inflation and stay
/// noise-free in CI.
pub fn latency_proxy_ns(steps: usize) -> u64 {
    steps as u64 * COST_PER_STEP_NS
}

/// One latency measurement: steady-state wall-clock trials around a full
/// greedy decode, summarized by the median.
#[derive(Debug, Clone)]
pub struct LatencySample {
    pub durations_ns: Vec<u64>,
    pub warmups: usize,
    pub median_ns: u64,
    pub proxy_ns: u64,
    pub steps: usize,
}

/// Time `trials` greedy decodes after `warmups` discarded runs. Requires at
/// least 10 trials and 3 warmups; the caller is responsible for quiescing
/// other work (timing is strictly single-threaded).
pub fn measure_latency(
    model: &CaptionModel,
    image: &Tensor,
    trials: usize,
    warmups: usize,
) -> Result<LatencySample> {
    if trials < 10 {
        return Err(Error::config(format!("trials {trials} < 10")));
    }
    if warmups < 3 {
        return Err(Error::config(format!("warmups {warmups} < 3")));
    }
    check_timer_resolution()?;

    let mut steps = 0usize;
    for _ in 0..warmups {
        steps = greedy_decode(model, image)?.steps;
    }

    let mut durations_ns = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        let trace = greedy_decode(model, image)?;
        let elapsed = start.elapsed().as_nanos() as u64;
        durations_ns.push(elapsed.max(1));
        debug_assert_eq!(trace.steps, steps, "decode is deterministic");
        steps = trace.steps;
    }

    let mut sorted = durations_ns.clone();
    sorted.sort_unstable();
    let median_ns = sorted[sorted.len() / 2];

    Ok(LatencySample {
        durations_ns,
        warmups,
        median_ns,
        proxy_ns: latency_proxy_ns(steps),
        steps,
    })
}

/// The monotonic clock must resolve better than 1µs for decode timing to
/// mean anything.
fn check_timer_resolution() -> Result<()> {
    let mut min_delta = u128::MAX;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        min_delta = min_delta.min((b - a).as_nanos());
    }
    if min_delta > 1_000 {
        return Err(Error::Measurement(format!(
            "timer resolution {min_delta} ns is coarser than 1µs"
        )));
    }
    Ok(())
}
