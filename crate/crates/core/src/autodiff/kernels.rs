//! Shared numeric kernels.
//!
//! Every forward value in the crate flows through these functions, whether it
//! is computed on a tape or by plain evaluation, so identical inputs produce
//! bit-identical outputs everywhere.

/// C[m×n] = A[m×k] · B[k×n], row-major, ikj loop order.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// C[m×k] = A[m×n] · B[k×n]ᵀ (dot products of rows).
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * k + p] = acc;
        }
    }
    out
}

/// C[k×n] = A[m×k]ᵀ · B[m×n] (accumulated outer products).
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let o_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Index of the largest value; ties resolve to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    debug_assert!(!values.is_empty());
    let mut best = 0usize;
    let mut best_v = values[0];
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Numerically stable softmax of one lane, written into `out`.
pub(crate) fn softmax_lane(lane: &[f64], out: &mut [f64]) {
    let max = lane.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(lane) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Stable log-softmax of one lane: `x - max - ln(Σ exp(x - max))`.
pub(crate) fn log_softmax_lane(lane: &[f64], out: &mut [f64]) {
    let max = lane.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for &v in lane {
        sum += (v - max).exp();
    }
    let log_z = max + sum.ln();
    for (o, &v) in out.iter_mut().zip(lane) {
        *o = v - log_z;
    }
}

/// x' = ½(tanh(w) + 1), nudged into the strict interior of (0, 1) so that
/// tanh saturation in `f64` (|w| ≳ 19 rounds tanh to ±1 exactly) cannot
/// land on the box boundary.
pub(crate) const BOX_INTERIOR_EPS: f64 = 1e-12;

pub(crate) fn to_image_scalar(w: f64) -> f64 {
    (0.5 * (w.tanh() + 1.0)).clamp(BOX_INTERIOR_EPS, 1.0 - BOX_INTERIOR_EPS)
}
