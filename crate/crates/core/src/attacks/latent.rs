//! The box-constraint change of variables between pixel space and the
//! unconstrained latent the attack optimizes.

use crate::autodiff::{to_image_scalar, Tensor};
use crate::error::Result;

/// Pixel clamp applied before arctanh so the latent stays finite at exact 0
/// or 1 pixels.
pub const LATENT_CLAMP: f64 = 1e-6;

/// x' = ½(tanh(w) + 1): every component lands strictly inside (0, 1) for any
/// real latent (saturation is nudged off the boundary by 1e-12).
pub fn to_image(w: &Tensor) -> Tensor {
    let data: Vec<f64> = w.data().iter().map(|&v| to_image_scalar(v)).collect();
    Tensor::new(w.shape().to_vec(), data).expect("tanh output is finite")
}

/// w = arctanh(2·clamp(x, η, 1−η) − 1) with η = 1e-6, so the perturbation at
/// iteration zero is (numerically) zero.
pub fn init_latent(x: &Tensor) -> Result<Tensor> {
    let data: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| {
            let clamped = v.clamp(LATENT_CLAMP, 1.0 - LATENT_CLAMP);
            (2.0 * clamped - 1.0).atanh()
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_latent_maps_to_mid_gray() {
        let w = Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        assert!(to_image(&w).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn saturated_latents_approach_the_box_corners() {
        let w = Tensor::new(vec![2], vec![10.0, -10.0]).unwrap();
        let x = to_image(&w);
        assert!((x.data()[0] - 1.0).abs() < 1e-8);
        assert!(x.data()[1] < 1e-8);
        assert!(x.data()[0] < 1.0 && x.data()[1] > 0.0);
    }

    #[test]
    fn mid_gray_initializes_to_zero_latent() {
        let x = Tensor::full(vec![4], 0.5).unwrap();
        assert!(init_latent(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_pixels_stay_finite() {
        let x = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        let w = init_latent(&x).unwrap();
        assert!(w.data().iter().all(|v| v.is_finite()));
        let expected = (2.0 * LATENT_CLAMP - 1.0f64).atanh();
        assert_eq!(w.data()[0], expected);
    }

    #[test]
    fn interior_round_trip_is_tight() {
        // x → arctanh(2x−1) → to_image recovers x within 1e-9 on [0.01, 0.99]
        let mut rng = crate::rng::rng_from_seed(8);
        for _ in 0..200 {
            let v: f64 = rng.random_range(0.01..0.99);
            let x = Tensor::new(vec![1], vec![v]).unwrap();
            let back = to_image(&init_latent(&x).unwrap());
            assert!((back.data()[0] - v).abs() < 1e-9);
        }
    }

    #[test]
    fn full_image_round_trip_linf_under_1e5() {
        let mut rng = crate::rng::rng_from_seed(9);
        let data: Vec<f64> = (0..3072).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = Tensor::new(vec![3, 32, 32], data).unwrap();
        let back = to_image(&init_latent(&x).unwrap());
        let linf = x
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(linf < 1e-5, "round-trip L∞ error {linf}");
    }
}
