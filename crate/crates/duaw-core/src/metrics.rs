//! Differentiable image-quality metrics: SSIM, MS-SSIM and MSE.
//!
//! All three are composed from tape primitives, so gradients w.r.t.
//! either input come out of [`Tape::backward`] for free.

use crate::error::{DuawError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Standard SSIM settings (window 11, sigma 1.5, K1/K2 from the original
/// SSIM formulation, dynamic range 1.0 for unit-interval pixels).
#[derive(Clone, Copy, Debug)]
pub struct SsimParams {
    pub window_size: usize,
    pub sigma: f32,
    pub k1: f32,
    pub k2: f32,
    pub l: f32,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window_size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            l: 1.0,
        }
    }
}

/// Per-scale SSIM floor applied before exponentiation in MS-SSIM.
pub const MS_SSIM_FLOOR: f32 = 1e-6;

/// First N weights of the standard 5-scale MS-SSIM setting, renormalized
/// to sum to 1.
pub fn default_msssim_alpha(scales: usize) -> Vec<f32> {
    const STD: [f32; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    assert!(scales >= 1 && scales <= 5, "1..=5 scales supported");
    let head = &STD[..scales];
    let sum: f32 = head.iter().sum();
    head.iter().map(|w| w / sum).collect()
}

/// Normalized 1-D Gaussian window (the separable factor of the 2-D
/// window; both sum to 1).
pub fn gaussian_window(window_size: usize, sigma: f32) -> Vec<f32> {
    assert!(window_size % 2 == 1, "window size must be odd");
    assert!(sigma > 0.0, "sigma must be positive");
    let half = (window_size / 2) as i64;
    let mut win: Vec<f32> = (-half..=half)
        .map(|i| (-(i as f32).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= sum);
    win
}

/// Per-channel Gaussian window convolution, "valid" boundary handling.
pub fn gaussian_window_conv(tape: &mut Tape, input: Var, window_size: usize, sigma: f32) -> Result<Var> {
    if window_size % 2 == 0 {
        return Err(DuawError::InvalidArg(format!(
            "gaussian window size {} must be odd",
            window_size
        )));
    }
    if sigma <= 0.0 {
        return Err(DuawError::InvalidArg("gaussian sigma must be positive".into()));
    }
    let win = gaussian_window(window_size, sigma);
    tape.window_conv(input, &win)
}

/// SSIM between two same-shape images on the tape; returns a scalar Var.
pub fn ssim(tape: &mut Tape, x: Var, y: Var, params: &SsimParams) -> Result<Var> {
    if tape.value(x).shape() != tape.value(y).shape() {
        return Err(DuawError::shape(
            "ssim inputs",
            tape.value(x).shape(),
            tape.value(y).shape(),
        ));
    }
    let c1 = (params.k1 * params.l).powi(2);
    let c2 = (params.k2 * params.l).powi(2);

    let mu_x = gaussian_window_conv(tape, x, params.window_size, params.sigma)?;
    let mu_y = gaussian_window_conv(tape, y, params.window_size, params.sigma)?;
    let xx = tape.mul(x, x)?;
    let yy = tape.mul(y, y)?;
    let xy = tape.mul(x, y)?;
    let e_xx = gaussian_window_conv(tape, xx, params.window_size, params.sigma)?;
    let e_yy = gaussian_window_conv(tape, yy, params.window_size, params.sigma)?;
    let e_xy = gaussian_window_conv(tape, xy, params.window_size, params.sigma)?;

    let mu_x2 = tape.mul(mu_x, mu_x)?;
    let mu_y2 = tape.mul(mu_y, mu_y)?;
    let mu_xy = tape.mul(mu_x, mu_y)?;
    let var_x = tape.sub(e_xx, mu_x2)?;
    let var_y = tape.sub(e_yy, mu_y2)?;
    let cov_xy = tape.sub(e_xy, mu_xy)?;

    // ((2 mu_x mu_y + C1)(2 cov + C2)) / ((mu_x^2 + mu_y^2 + C1)(var_x + var_y + C2))
    let two_mu = tape.mul_scalar(mu_xy, 2.0);
    let num1 = tape.add_scalar(two_mu, c1);
    let two_cov = tape.mul_scalar(cov_xy, 2.0);
    let num2 = tape.add_scalar(two_cov, c2);
    let num = tape.mul(num1, num2)?;

    let mu_sum = tape.add(mu_x2, mu_y2)?;
    let den1 = tape.add_scalar(mu_sum, c1);
    let var_sum = tape.add(var_x, var_y)?;
    let den2 = tape.add_scalar(var_sum, c2);
    let den = tape.mul(den1, den2)?;

    let map = tape.div(num, den)?;
    Ok(tape.mean(map))
}

/// The largest scale count MS-SSIM supports for an image, given the
/// window size (each scale halves H and W, which must stay even and at
/// least window-sized).
pub fn max_feasible_scales(shape: &[usize], window_size: usize) -> usize {
    let (mut h, mut w) = (shape[1], shape[2]);
    if h < window_size || w < window_size {
        return 0;
    }
    let mut scales = 1;
    while h % 2 == 0 && w % 2 == 0 && h / 2 >= window_size && w / 2 >= window_size {
        h /= 2;
        w /= 2;
        scales += 1;
    }
    scales
}

/// MS-SSIM: product over scales of per-scale SSIM raised to alpha[i];
/// scale i+1 is the 2x average-pool of scale i. Per-scale SSIM is floored
/// at 1e-6 before exponentiation.
pub fn ms_ssim(
    tape: &mut Tape,
    x: Var,
    y: Var,
    scales: usize,
    alpha: &[f32],
    params: &SsimParams,
) -> Result<Var> {
    if alpha.len() != scales {
        return Err(DuawError::InvalidArg(format!(
            "alpha length {} != scales {}",
            alpha.len(),
            scales
        )));
    }
    let asum: f32 = alpha.iter().sum();
    if (asum - 1.0).abs() > 1e-4 {
        return Err(DuawError::InvalidArg(format!(
            "alpha must sum to 1, got {}",
            asum
        )));
    }
    if tape.value(x).shape() != tape.value(y).shape() {
        return Err(DuawError::shape(
            "ms_ssim inputs",
            tape.value(x).shape(),
            tape.value(y).shape(),
        ));
    }
    let feasible = max_feasible_scales(tape.value(x).shape(), params.window_size);
    if scales > feasible {
        return Err(DuawError::InvalidArg(format!(
            "image {:?} too small for {} scales; maximum feasible scale count is {}",
            tape.value(x).shape(),
            scales,
            feasible
        )));
    }

    let (mut cur_x, mut cur_y) = (x, y);
    let mut product: Option<Var> = None;
    for (i, &a) in alpha.iter().enumerate() {
        if i > 0 {
            cur_x = tape.avg_pool2(cur_x)?;
            cur_y = tape.avg_pool2(cur_y)?;
        }
        let s = ssim(tape, cur_x, cur_y, params)?;
        let floored = tape.clamp(s, MS_SSIM_FLOOR, f32::INFINITY);
        let powered = tape.powf(floored, a);
        product = Some(match product {
            None => powered,
            Some(p) => tape.mul(p, powered)?,
        });
    }
    Ok(product.expect("scales >= 1"))
}

/// Mean squared error as a scalar Var.
pub fn mse(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    if tape.value(x).shape() != tape.value(y).shape() {
        return Err(DuawError::shape(
            "mse inputs",
            tape.value(x).shape(),
            tape.value(y).shape(),
        ));
    }
    let d = tape.sub(x, y)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

// ── non-taped convenience evaluation ─────────────────────────────────

pub fn ssim_value(x: &Tensor, y: &Tensor, params: &SsimParams) -> Result<f32> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let s = ssim(&mut tape, xv, yv, params)?;
    Ok(tape.value(s).item())
}

pub fn ms_ssim_value(x: &Tensor, y: &Tensor, scales: usize) -> Result<f32> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let alpha = default_msssim_alpha(scales);
    let s = ms_ssim(&mut tape, xv, yv, scales, &alpha, &SsimParams::default())?;
    Ok(tape.value(s).item())
}

pub fn mse_value(x: &Tensor, y: &Tensor) -> Result<f32> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let s = mse(&mut tape, xv, yv)?;
    Ok(tape.value(s).item())
}

/// PSNR in dB for unit-interval images.
pub fn psnr(x: &Tensor, y: &Tensor) -> Result<f32> {
    let m = mse_value(x, y)?;
    Ok(if m <= 0.0 {
        f32::INFINITY
    } else {
        -10.0 * m.log10()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, uniform_tensor};

    #[test]
    fn ssim_self_is_one() {
        let x = uniform_tensor(&[3, 32, 32], 0.0, 1.0, &mut rng_from(11));
        let s = ssim_value(&x, &x, &SsimParams::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "ssim(x,x) = {}", s);
    }

    #[test]
    fn ssim_constant_images_match_closed_form() {
        // zero-variance images: only the luminance term differs from 1
        let x = Tensor::filled(&[1, 16, 16], 0.2);
        let y = Tensor::filled(&[1, 16, 16], 0.4);
        let s = ssim_value(&x, &y, &SsimParams::default()).unwrap();
        let c1 = 0.01f32.powi(2);
        let expected = (2.0 * 0.2 * 0.4 + c1) / (0.2f32.powi(2) + 0.4f32.powi(2) + c1);
        assert!((s - expected).abs() < 1e-3, "got {}, want {}", s, expected);
        assert!((s - 0.8).abs() < 1e-3);
    }

    #[test]
    fn ssim_is_symmetric() {
        let x = uniform_tensor(&[3, 24, 24], 0.0, 1.0, &mut rng_from(12));
        let y = uniform_tensor(&[3, 24, 24], 0.0, 1.0, &mut rng_from(13));
        let a = ssim_value(&x, &y, &SsimParams::default()).unwrap();
        let b = ssim_value(&y, &x, &SsimParams::default()).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn ssim_rejects_shape_mismatch() {
        let x = Tensor::zeros(&[1, 16, 16]);
        let y = Tensor::zeros(&[1, 16, 17]);
        assert!(ssim_value(&x, &y, &SsimParams::default()).is_err());
    }

    #[test]
    fn ms_ssim_self_is_one() {
        let x = uniform_tensor(&[3, 64, 64], 0.0, 1.0, &mut rng_from(14));
        let s = ms_ssim_value(&x, &x, 3).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ms_ssim_single_scale_equals_ssim() {
        let x = uniform_tensor(&[3, 32, 32], 0.0, 1.0, &mut rng_from(15));
        let y = uniform_tensor(&[3, 32, 32], 0.0, 1.0, &mut rng_from(16));
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let m = ms_ssim(&mut tape, xv, yv, 1, &[1.0], &SsimParams::default()).unwrap();
        let s = ssim_value(&x, &y, &SsimParams::default()).unwrap();
        assert!((tape.value(m).item() - s).abs() < 1e-6);
    }

    #[test]
    fn ms_ssim_too_many_scales_reports_feasible_count() {
        let x = Tensor::zeros(&[3, 32, 32]);
        let y = Tensor::zeros(&[3, 32, 32]);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let yv = tape.constant(y);
        let alpha = default_msssim_alpha(4);
        let err = ms_ssim(&mut tape, xv, yv, 4, &alpha, &SsimParams::default()).unwrap_err();
        let msg = format!("{}", err);
        assert!(msg.contains("maximum feasible scale count is 2"), "{}", msg);
    }

    #[test]
    fn mse_basics() {
        let x = Tensor::zeros(&[2, 8, 8]);
        let y = Tensor::filled(&[2, 8, 8], 0.5);
        assert_eq!(mse_value(&x, &x).unwrap(), 0.0);
        assert!((mse_value(&x, &y).unwrap() - 0.25).abs() < 1e-7);
    }

    #[test]
    fn mse_gradient_is_analytic() {
        let x = uniform_tensor(&[2, 4, 4], 0.0, 1.0, &mut rng_from(17));
        let y = uniform_tensor(&[2, 4, 4], 0.0, 1.0, &mut rng_from(18));
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let yv = tape.constant(y.clone());
        let m = mse(&mut tape, xv, yv).unwrap();
        let grads = tape.backward(m).unwrap();
        let g = grads.wrt(xv).unwrap();
        let n = x.numel() as f32;
        for i in 0..x.numel() {
            let want = 2.0 * (x.data()[i] - y.data()[i]) / n;
            assert!((g.data()[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn delta_impulse_recovers_gaussian_kernel() {
        // valid conv of a centered delta reproduces the (separable) kernel
        let n = 21;
        let mut x = Tensor::zeros(&[1, n, n]);
        x.data_mut()[(n / 2) * n + n / 2] = 1.0;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = gaussian_window_conv(&mut tape, xv, 11, 1.5).unwrap();
        let win = gaussian_window(11, 1.5);
        let wo = n - 10;
        // center of output corresponds to kernel center alignment
        for ky in 0..11 {
            for kx in 0..11 {
                let oy = n / 2 - ky;
                let ox = n / 2 - kx;
                if oy < wo && ox < wo {
                    let got = tape.value(out).data()[oy * wo + ox];
                    let want = win[ky] * win[kx];
                    assert!((got - want).abs() < 1e-6, "({},{}) {} vs {}", ky, kx, got, want);
                }
            }
        }
    }

    #[test]
    fn gaussian_window_is_normalized() {
        let w = gaussian_window(11, 1.5);
        let s: f32 = w.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}
