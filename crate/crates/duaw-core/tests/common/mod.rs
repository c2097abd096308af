//! Independent f64 reference implementations used as finite-difference
//! oracles. These deliberately re-derive every forward computation from
//! the definitions (no shared code with the library) so that agreement
//! is meaningful.

#![allow(dead_code)]

use std::collections::HashMap;

use duaw_core::vae::{VaeArch, VaeParams, LOGVAR_MAX, LOGVAR_MIN};

pub struct Plane {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Plane { shape, data }
    }
}

/// Cross-correlation with zero padding, kernel (O,I,KH,KW).
pub fn conv2d_ref(input: &Plane, kernel: &Plane, stride: usize, padding: usize) -> Plane {
    let (ic, ih, iw) = (input.shape[0], input.shape[1], input.shape[2]);
    let (oc, kc, kh, kw) = (
        kernel.shape[0],
        kernel.shape[1],
        kernel.shape[2],
        kernel.shape[3],
    );
    assert_eq!(ic, kc);
    let oh = (ih + 2 * padding - kh) / stride + 1;
    let ow = (iw + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0f64; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for c in 0..ic {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let sy = oy * stride + ky;
                            let sx = ox * stride + kx;
                            if sy < padding || sx < padding {
                                continue;
                            }
                            let (sy, sx) = (sy - padding, sx - padding);
                            if sy >= ih || sx >= iw {
                                continue;
                            }
                            acc += input.data[c * ih * iw + sy * iw + sx]
                                * kernel.data[o * ic * kh * kw + c * kh * kw + ky * kw + kx];
                        }
                    }
                }
                out[o * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
    Plane::new(vec![oc, oh, ow], out)
}

pub fn add_channel_bias(x: &Plane, bias: &[f64]) -> Plane {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let mut data = x.data.clone();
    for ch in 0..c {
        for v in &mut data[ch * h * w..(ch + 1) * h * w] {
            *v += bias[ch];
        }
    }
    Plane::new(x.shape.clone(), data)
}

pub fn relu_ref(x: &Plane) -> Plane {
    Plane::new(x.shape.clone(), x.data.iter().map(|&v| v.max(0.0)).collect())
}

pub fn sigmoid_ref(x: &Plane) -> Plane {
    Plane::new(
        x.shape.clone(),
        x.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
    )
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2_ref(x: &Plane) -> Plane {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f64; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out[ch * oh * ow + y * ow + xx] = x.data[ch * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    Plane::new(vec![c, oh, ow], out)
}

pub fn avg_pool2_ref(x: &Plane) -> Plane {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f64; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += x.data[ch * h * w + (2 * y + dy) * w + 2 * xx + dx];
                    }
                }
                out[ch * oh * ow + y * ow + xx] = acc / 4.0;
            }
        }
    }
    Plane::new(vec![c, oh, ow], out)
}

pub fn gaussian_window_ref(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as i64;
    let mut win: Vec<f64> = (-half..=half)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    win
}

/// Depthwise separable valid convolution with a 1-D window applied along
/// both axes.
pub fn window_conv_ref(x: &Plane, win: &[f64]) -> Plane {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let k = win.len();
    let ow = w - k + 1;
    // horizontal pass
    let mut mid = vec![0.0f64; c * h * ow];
    for ch in 0..c {
        for y in 0..h {
            for ox in 0..ow {
                let mut acc = 0.0;
                for (i, &kv) in win.iter().enumerate() {
                    acc += kv * x.data[ch * h * w + y * w + ox + i];
                }
                mid[ch * h * ow + y * ow + ox] = acc;
            }
        }
    }
    let oh = h - k + 1;
    let mut out = vec![0.0f64; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for (i, &kv) in win.iter().enumerate() {
                    acc += kv * mid[ch * h * ow + (oy + i) * ow + ox];
                }
                out[ch * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
    Plane::new(vec![c, oh, ow], out)
}

pub fn mse_ref(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / x.len() as f64
}

pub fn ssim_ref(x: &Plane, y: &Plane, window: usize, sigma: f64, k1: f64, k2: f64) -> f64 {
    let c1 = k1 * k1;
    let c2 = k2 * k2;
    let win = gaussian_window_ref(window, sigma);
    let mul = |a: &Plane, b: &Plane| {
        Plane::new(
            a.shape.clone(),
            a.data.iter().zip(&b.data).map(|(u, v)| u * v).collect(),
        )
    };
    let mu_x = window_conv_ref(x, &win);
    let mu_y = window_conv_ref(y, &win);
    let e_xx = window_conv_ref(&mul(x, x), &win);
    let e_yy = window_conv_ref(&mul(y, y), &win);
    let e_xy = window_conv_ref(&mul(x, y), &win);
    let n = mu_x.data.len();
    let mut sum = 0.0f64;
    for i in 0..n {
        let (mx, my) = (mu_x.data[i], mu_y.data[i]);
        let vx = e_xx.data[i] - mx * mx;
        let vy = e_yy.data[i] - my * my;
        let cxy = e_xy.data[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        sum += num / den;
    }
    sum / n as f64
}

pub fn ms_ssim_ref(x: &Plane, y: &Plane, scales: usize, alpha: &[f64]) -> f64 {
    let mut cx = Plane::new(x.shape.clone(), x.data.clone());
    let mut cy = Plane::new(y.shape.clone(), y.data.clone());
    let mut product = 1.0f64;
    for (i, &a) in alpha.iter().enumerate().take(scales) {
        if i > 0 {
            cx = avg_pool2_ref(&cx);
            cy = avg_pool2_ref(&cy);
        }
        let s = ssim_ref(&cx, &cy, 11, 1.5, 0.01, 0.03).max(1e-6);
        product *= s.powf(a);
    }
    product
}

// ── f64 VAE forward ──────────────────────────────────────────────────

pub struct VaeRef {
    pub arch: VaeArch,
    pub weights: HashMap<String, Plane>,
}

impl VaeRef {
    pub fn from_params(vae: &VaeParams) -> Self {
        let c = vae.to_container();
        let mut weights = HashMap::new();
        for (name, t) in c.arrays() {
            weights.insert(
                name.clone(),
                Plane::new(
                    t.shape().to_vec(),
                    t.data().iter().map(|&v| v as f64).collect(),
                ),
            );
        }
        VaeRef {
            arch: vae.arch().clone(),
            weights,
        }
    }

    fn conv_block(&self, x: &Plane, name: &str, stride: usize) -> Plane {
        let w = &self.weights[&format!("{}.w", name)];
        let b = &self.weights[&format!("{}.b", name)];
        let y = conv2d_ref(x, w, stride, 1);
        add_channel_bias(&y, &b.data)
    }

    pub fn encode(&self, x: &Plane) -> (Plane, Plane) {
        let mut h = Plane::new(x.shape.clone(), x.data.clone());
        for (i, stride) in [2usize, 2, 1].iter().enumerate() {
            h = relu_ref(&self.conv_block(&h, &format!("enc{}", i), *stride));
        }
        let mu = self.conv_block(&h, "mu", 1);
        let lv = self.conv_block(&h, "lv", 1);
        let sigma = Plane::new(
            lv.shape.clone(),
            lv.data
                .iter()
                .map(|&v| (0.5 * v.clamp(LOGVAR_MIN as f64, LOGVAR_MAX as f64)).exp())
                .collect(),
        );
        (mu, sigma)
    }

    pub fn decode(&self, z: &Plane) -> Plane {
        let h0 = relu_ref(&self.conv_block(z, "dec0", 1));
        let u1 = upsample2_ref(&h0);
        let h1 = relu_ref(&self.conv_block(&u1, "dec1", 1));
        let u2 = upsample2_ref(&h1);
        let h2 = relu_ref(&self.conv_block(&u2, "dec2", 1));
        sigmoid_ref(&self.conv_block(&h2, "dec3", 1))
    }

    /// mu + sigma * zeta -> decode.
    pub fn reconstruct(&self, x: &Plane, zeta: &[f64]) -> Plane {
        let (mu, sigma) = self.encode(x);
        let z = Plane::new(
            mu.shape.clone(),
            mu.data
                .iter()
                .zip(&sigma.data)
                .zip(zeta)
                .map(|((m, s), e)| m + s * e)
                .collect(),
        );
        self.decode(&z)
    }
}

/// Adversarial objective in f64: MS-SSIM(x, reconstruct(clamp(x + w))).
pub fn duaw_loss_ref(
    vae: &VaeRef,
    x: &Plane,
    w: &[f64],
    zeta: &[f64],
    scales: usize,
    alpha: &[f64],
) -> f64 {
    let xw = Plane::new(
        x.shape.clone(),
        x.data
            .iter()
            .zip(w)
            .map(|(a, d)| (a + d).clamp(0.0, 1.0))
            .collect(),
    );
    let recon = vae.reconstruct(&xw, zeta);
    ms_ssim_ref(x, &recon, scales, alpha)
}

// ── helpers shared by oracle tests ───────────────────────────────────

pub fn to_plane(t: &duaw_core::Tensor) -> Plane {
    Plane::new(
        t.shape().to_vec(),
        t.data().iter().map(|&v| v as f64).collect(),
    )
}

/// Fraction of sampled coordinates whose analytic gradient matches the
/// central finite difference of `f` within `tol` relative error.
pub fn fd_agreement(
    analytic: &[f32],
    coords: &[usize],
    mut f: impl FnMut(usize, f64) -> f64,
    h: f64,
    tol: f64,
) -> f64 {
    // gradcheck-style criterion: |a - fd| <= atol + tol * |fd|, with the
    // absolute term scaled to the mean gradient magnitude so coordinates
    // whose true gradient sits far below the field's scale are judged
    // against f32 noise rather than an ill-posed pointwise ratio.
    let scale: f64 = coords
        .iter()
        .map(|&j| analytic[j].abs() as f64)
        .sum::<f64>()
        / coords.len() as f64;
    let atol = (scale * tol).max(1e-12);
    let mut ok = 0usize;
    for &j in coords {
        let fd = (f(j, h) - f(j, -h)) / (2.0 * h);
        let a = analytic[j] as f64;
        if (a - fd).abs() <= atol + tol * fd.abs() {
            ok += 1;
        }
    }
    ok as f64 / coords.len() as f64
}

/// Deterministic coordinate sample without replacement.
pub fn sample_coords(n: usize, count: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut all: Vec<usize> = (0..n).collect();
    let mut rng = duaw_core::rng::rng_from(seed);
    all.shuffle(&mut rng);
    all.truncate(count.min(n));
    all
}
