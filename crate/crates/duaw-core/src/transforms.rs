//! Robustness transforms: uniform noise, Gaussian blur with reflected
//! boundaries, and a JPEG quality-degradation simulator (8x8 block DCT
//! with standard quantization tables — not a bit-exact codec).

use std::f32::consts::PI;

use rand::Rng;

use crate::error::{DuawError, Result};
use crate::rng::rng_from;
use crate::tensor::Tensor;

fn expect_image(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(DuawError::InvalidArg(format!(
            "{} expects (C,H,W), got {:?}",
            what, s
        )));
    }
    Ok((s[0], s[1], s[2]))
}

/// Add uniform noise in [-amplitude, amplitude], then clamp to [0,1].
pub fn add_noise(x: &Tensor, amplitude: f32, seed: u64) -> Result<Tensor> {
    expect_image(x, "add_noise")?;
    if !(0.0..=1.0).contains(&amplitude) {
        return Err(DuawError::InvalidArg(format!(
            "noise amplitude must be in [0,1], got {}",
            amplitude
        )));
    }
    if amplitude == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = rng_from(seed);
    let data: Vec<f32> = x
        .data()
        .iter()
        .map(|&v| (v + rng.gen_range(-amplitude..amplitude)).clamp(0.0, 1.0))
        .collect();
    Tensor::from_vec(x.shape().to_vec(), data)
}

/// Gaussian blur with kernel radius ceil(3*sigma) and reflected
/// boundaries, applied separably per channel.
pub fn gaussian_blur(x: &Tensor, sigma: f32) -> Result<Tensor> {
    let (c, h, w) = expect_image(x, "gaussian_blur")?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(DuawError::InvalidArg(format!(
            "blur sigma must be positive, got {}",
            sigma
        )));
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i as f32).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    // reflect index into [0, n)
    let reflect = |i: i64, n: i64| -> usize {
        let mut i = i;
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - 1 - i;
        }
        i.clamp(0, n - 1) as usize
    };

    let src = x.data();
    let mut mid = vec![0.0f32; src.len()];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let out = &mut mid[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0f32;
                for (k, kv) in kernel.iter().enumerate() {
                    let sx = reflect(xx as i64 + k as i64 - radius, w as i64);
                    acc += kv * plane[y * w + sx];
                }
                out[y * w + xx] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for ch in 0..c {
        let plane = &mid[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0f32;
                for (k, kv) in kernel.iter().enumerate() {
                    let sy = reflect(y as i64 + k as i64 - radius, h as i64);
                    acc += kv * plane[sy * w + xx];
                }
                dst[y * w + xx] = acc.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_vec(x.shape().to_vec(), out)
}

// Standard JPEG annex-K quantization tables.
#[rustfmt::skip]
const LUMA_Q: [f32; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0,
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0,
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0,
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0,
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0,
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0,
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0,
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];
#[rustfmt::skip]
const CHROMA_Q: [f32; 64] = [
    17.0, 18.0, 24.0, 47.0, 99.0, 99.0, 99.0, 99.0,
    18.0, 21.0, 26.0, 66.0, 99.0, 99.0, 99.0, 99.0,
    24.0, 26.0, 56.0, 99.0, 99.0, 99.0, 99.0, 99.0,
    47.0, 66.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
];

/// Scale a base table for `quality` using the libjpeg convention.
fn scaled_table(base: &[f32; 64], quality: u32) -> [f32; 64] {
    let s = if quality < 50 {
        5000.0 / quality as f32
    } else {
        200.0 - 2.0 * quality as f32
    };
    let mut out = [0.0f32; 64];
    for (o, b) in out.iter_mut().zip(base) {
        *o = ((b * s + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    out
}

fn dct8(block: &[f32; 64]) -> [f32; 64] {
    let mut out = [0.0f32; 64];
    for u in 0..8 {
        for v in 0..8 {
            let cu = if u == 0 { 1.0 / 2f32.sqrt() } else { 1.0 };
            let cv = if v == 0 { 1.0 / 2f32.sqrt() } else { 1.0 };
            let mut acc = 0.0f64;
            for y in 0..8 {
                for x in 0..8 {
                    acc += block[y * 8 + x] as f64
                        * (((2 * y + 1) as f32 * u as f32 * PI / 16.0).cos() as f64)
                        * (((2 * x + 1) as f32 * v as f32 * PI / 16.0).cos() as f64);
                }
            }
            out[u * 8 + v] = 0.25 * cu * cv * acc as f32;
        }
    }
    out
}

fn idct8(block: &[f32; 64]) -> [f32; 64] {
    let mut out = [0.0f32; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0f64;
            for u in 0..8 {
                for v in 0..8 {
                    let cu = if u == 0 { 1.0 / 2f32.sqrt() } else { 1.0 };
                    let cv = if v == 0 { 1.0 / 2f32.sqrt() } else { 1.0 };
                    acc += (cu * cv * block[u * 8 + v]) as f64
                        * (((2 * y + 1) as f32 * u as f32 * PI / 16.0).cos() as f64)
                        * (((2 * x + 1) as f32 * v as f32 * PI / 16.0).cos() as f64);
                }
            }
            out[y * 8 + x] = 0.25 * acc as f32;
        }
    }
    out
}

/// Quantize one padded plane in place (values centered around 0, 0..255 scale).
fn quantize_plane(plane: &mut [f32], ph: usize, pw: usize, table: &[f32; 64]) {
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            let mut block = [0.0f32; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * pw + bx + x] - 128.0;
                }
            }
            let mut coeffs = dct8(&block);
            for (c, q) in coeffs.iter_mut().zip(table) {
                *c = (*c / q).round() * q;
            }
            let rec = idct8(&coeffs);
            for y in 0..8 {
                for x in 0..8 {
                    plane[(by + y) * pw + bx + x] = rec[y * 8 + x] + 128.0;
                }
            }
        }
    }
}

/// JPEG quality-degradation simulator: RGB -> YCbCr, per-plane 8x8 DCT
/// quantization with quality-scaled standard tables, inverse, -> RGB.
pub fn jpeg_compress(x: &Tensor, quality: u32) -> Result<Tensor> {
    let (c, h, w) = expect_image(x, "jpeg_compress")?;
    if c != 3 {
        return Err(DuawError::InvalidArg(format!(
            "jpeg_compress expects 3 channels, got {}",
            c
        )));
    }
    if !(1..=100).contains(&quality) {
        return Err(DuawError::InvalidArg(format!(
            "jpeg quality must be in [1,100], got {}",
            quality
        )));
    }
    let (ph, pw) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
    let src = x.data();
    // full-range YCbCr on a 0..255 scale, edge-padded to block multiples
    let mut planes = vec![vec![0.0f32; ph * pw]; 3];
    for y in 0..ph {
        for xx in 0..pw {
            let (sy, sx) = (y.min(h - 1), xx.min(w - 1));
            let r = src[sy * w + sx] * 255.0;
            let g = src[h * w + sy * w + sx] * 255.0;
            let b = src[2 * h * w + sy * w + sx] * 255.0;
            planes[0][y * pw + xx] = 0.299 * r + 0.587 * g + 0.114 * b;
            planes[1][y * pw + xx] = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
            planes[2][y * pw + xx] = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
        }
    }
    let luma = scaled_table(&LUMA_Q, quality);
    let chroma = scaled_table(&CHROMA_Q, quality);
    quantize_plane(&mut planes[0], ph, pw, &luma);
    quantize_plane(&mut planes[1], ph, pw, &chroma);
    quantize_plane(&mut planes[2], ph, pw, &chroma);

    let mut out = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for xx in 0..w {
            let yv = planes[0][y * pw + xx];
            let cb = planes[1][y * pw + xx] - 128.0;
            let cr = planes[2][y * pw + xx] - 128.0;
            let r = yv + 1.402 * cr;
            let g = yv - 0.344136 * cb - 0.714136 * cr;
            let b = yv + 1.772 * cb;
            out[y * w + xx] = (r / 255.0).clamp(0.0, 1.0);
            out[h * w + y * w + xx] = (g / 255.0).clamp(0.0, 1.0);
            out[2 * h * w + y * w + xx] = (b / 255.0).clamp(0.0, 1.0);
        }
    }
    Tensor::from_vec(vec![3, h, w], out)
}
