//! Natural-corruption baselines: bit-depth quantization, Gaussian noise,
//! blockwise-DCT compression, and total-variation minimization.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

use super::{AttackConfig, CorruptionKind::*, LossSample, NormKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Quantize,
    Gaussian,
    JpegLike,
    Tvm,
}

/// Corruption knobs. A `sigma` of `None` asks the driver to match the noise
/// scale to the attack budget via [`CorruptionParams::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionParams {
    pub quant_bits: u32,
    pub sigma: Option<f64>,
    pub jpeg_quality: u32,
    pub tvm_tau: f64,
    pub tvm_iters: usize,
    pub tvm_step: f64,
}

impl Default for CorruptionParams {
    fn default() -> Self {
        CorruptionParams {
            quant_bits: 3,
            sigma: None,
            jpeg_quality: 75,
            tvm_tau: 0.1,
            tvm_iters: 30,
            tvm_step: 0.02,
        }
    }
}

impl CorruptionParams {
    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.quant_bits) {
            return Err(Error::config(format!(
                "quant_bits {} outside 1..=16",
                self.quant_bits
            )));
        }
        if !(1..=100).contains(&self.jpeg_quality) {
            return Err(Error::config(format!(
                "jpeg_quality {} outside 1..=100",
                self.jpeg_quality
            )));
        }
        if let Some(s) = self.sigma {
            if s < 0.0 {
                return Err(Error::config("sigma must be non-negative"));
            }
        }
        if self.tvm_tau < 0.0 || self.tvm_step <= 0.0 {
            return Err(Error::config("tvm parameters must be positive"));
        }
        Ok(())
    }

    /// Fill in `sigma` so the expected noise norm (before clamping) matches
    /// the attack budget: ε/√n for L2, ε/√(2·ln n) for L∞.
    pub fn resolved(&self, config: &AttackConfig, n_pixels: usize) -> CorruptionParams {
        let mut out = self.clone();
        if out.sigma.is_none() {
            let n = n_pixels as f64;
            out.sigma = Some(match config.norm {
                NormKind::L2 => config.eps / n.sqrt(),
                NormKind::Linf => config.eps / (2.0 * n.ln()).sqrt(),
            });
        }
        out
    }
}

/// Apply one corruption. `seed` only matters for Gaussian noise.
pub fn corrupt(
    x: &Tensor,
    kind: CorruptionKind,
    params: &CorruptionParams,
    seed: u64,
) -> Result<Tensor> {
    params.validate()?;
    match kind {
        Quantize => quantize(x, params.quant_bits),
        Gaussian => {
            let sigma = params.sigma.ok_or_else(|| {
                Error::config("gaussian corruption needs sigma (or a budget to match)")
            })?;
            gaussian(x, sigma, seed)
        }
        JpegLike => jpeg_like(x, params.jpeg_quality),
        Tvm => tv_minimize(x, params.tvm_tau, params.tvm_iters, params.tvm_step),
    }
}

/// A nominal loss curve for the single-shot corruptions: their objective is
/// not iterative, so only the final squared distortion is recorded.
pub(crate) fn loss_curve_for(x: &Tensor, adv: &Tensor) -> Vec<LossSample> {
    let dist: f64 = x
        .data()
        .iter()
        .zip(adv.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    vec![LossSample {
        eos: None,
        dep: None,
        per: None,
        total: dist,
    }]
}

/// Round each channel value to `bits` of depth: 2^bits − 1 uniform levels.
fn quantize(x: &Tensor, bits: u32) -> Result<Tensor> {
    let levels = ((1u64 << bits) - 1) as f64;
    let data: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| (v * levels).round() / levels)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Additive zero-mean Gaussian noise, clamped back to the box.
fn gaussian(x: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    let mut rng = rng_from_seed(seed);
    let data: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (v + sigma * z).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

// ---- blockwise DCT compression ------------------------------------------

const BLOCK: usize = 8;

/// Standard luminance quantization table, applied to every channel.
const QUANT_BASE: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

fn quant_table(quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100) as f64;
    let scale = if q < 50.0 {
        5000.0 / q
    } else {
        200.0 - 2.0 * q
    };
    let mut table = [0.0; 64];
    for (t, b) in table.iter_mut().zip(QUANT_BASE) {
        *t = ((b * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    table
}

/// Orthonormal DCT-II basis matrix for an 8-sample lane.
fn dct_matrix() -> [f64; 64] {
    let mut m = [0.0; 64];
    let n = BLOCK as f64;
    for u in 0..BLOCK {
        let alpha = if u == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        };
        for x in 0..BLOCK {
            m[u * BLOCK + x] =
                alpha * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / (2.0 * n)).cos();
        }
    }
    m
}

fn mat8(a: &[f64; 64], b: &[f64; 64], transpose_b: bool) -> [f64; 64] {
    let mut out = [0.0; 64];
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            let mut acc = 0.0;
            for k in 0..BLOCK {
                let bv = if transpose_b {
                    b[j * BLOCK + k]
                } else {
                    b[k * BLOCK + j]
                };
                acc += a[i * BLOCK + k] * bv;
            }
            out[i * BLOCK + j] = acc;
        }
    }
    out
}

/// Per-channel 8×8 blockwise DCT, coefficient quantization with the
/// quality-scaled table, inverse DCT, clamp. Image sides must be multiples
/// of 8.
fn jpeg_like(x: &Tensor, quality: u32) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    if shape.len() != 3 || shape[1] % BLOCK != 0 || shape[2] % BLOCK != 0 {
        return Err(Error::config(format!(
            "blockwise compression needs [C×H×W] with H, W multiples of {BLOCK}, got {shape:?}"
        )));
    }
    let (channels, height, width) = (shape[0], shape[1], shape[2]);
    let m = dct_matrix();
    let table = quant_table(quality);
    let mut data = x.data().to_vec();

    for c in 0..channels {
        let plane = &mut data[c * height * width..(c + 1) * height * width];
        for by in (0..height).step_by(BLOCK) {
            for bx in (0..width).step_by(BLOCK) {
                let mut block = [0.0f64; 64];
                for dy in 0..BLOCK {
                    for dx in 0..BLOCK {
                        block[dy * BLOCK + dx] = plane[(by + dy) * width + bx + dx] * 255.0 - 128.0;
                    }
                }
                // Y = M · X · Mᵀ
                let coeffs = mat8(&mat8(&m, &block, false), &m, true);
                let mut quantized = [0.0f64; 64];
                for i in 0..64 {
                    quantized[i] = (coeffs[i] / table[i]).round() * table[i];
                }
                // X = Mᵀ · Y · M
                let mt = transpose8(&m);
                let restored = mat8(&mat8(&mt, &quantized, false), &mt, true);
                for dy in 0..BLOCK {
                    for dx in 0..BLOCK {
                        let v = (restored[dy * BLOCK + dx] + 128.0) / 255.0;
                        plane[(by + dy) * width + bx + dx] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Tensor::new(shape, data)
}

fn transpose8(m: &[f64; 64]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            out[j * BLOCK + i] = m[i * BLOCK + j];
        }
    }
    out
}

// ---- total-variation minimization ----------------------------------------

// Smoothing floor for the TV magnitude; also caps the curvature of the
// smoothed objective (∝ 1/√κ), which bounds the stable step size.
const TV_SMOOTH: f64 = 1e-3;

/// Gradient descent on ‖x' − x‖₂² + τ·TV(x') with a smoothed isotropic TV,
/// clamped to the box at the end.
fn tv_minimize(x: &Tensor, tau: f64, iters: usize, step: f64) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::config(format!(
            "tvm needs a [C×H×W] image, got {shape:?}"
        )));
    }
    let (channels, height, width) = (shape[0], shape[1], shape[2]);
    let orig = x.data();
    let mut cur = orig.to_vec();
    let mut grad = vec![0.0f64; cur.len()];

    for _ in 0..iters {
        for g in grad.iter_mut() {
            *g = 0.0;
        }
        for c in 0..channels {
            let base = c * height * width;
            for y in 0..height {
                for xx in 0..width {
                    let i = base + y * width + xx;
                    let v = cur[i];
                    let dh = if xx + 1 < width { cur[i + 1] - v } else { 0.0 };
                    let dv = if y + 1 < height {
                        cur[i + width] - v
                    } else {
                        0.0
                    };
                    let s = (dh * dh + dv * dv + TV_SMOOTH).sqrt();
                    // ∂s/∂(this pixel) and the two forward neighbors
                    grad[i] += tau * (-(dh + dv)) / s;
                    if xx + 1 < width {
                        grad[i + 1] += tau * dh / s;
                    }
                    if y + 1 < height {
                        grad[i + width] += tau * dv / s;
                    }
                }
            }
        }
        for (i, g) in grad.iter().enumerate() {
            let fidelity = 2.0 * (cur[i] - orig[i]);
            cur[i] -= step * (fidelity + g);
        }
    }
    for v in cur.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new(shape, cur)
}
