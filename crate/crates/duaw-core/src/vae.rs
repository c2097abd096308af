//! Small convolutional VAE: Gaussian posterior encoder, mirrored decoder
//! with nearest-neighbor upsampling, from-scratch training, and a frozen
//! flag that locks the weights for the attack and customization phases.

use crate::error::{DuawError, Result};
use crate::metrics::{self, SsimParams};
use crate::paramset::{ParamOptimizer, ParamSet, VarMap};
use crate::rng::{kaiming_tensor, normal_tensor, rng_stream, Prng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Log-variance clamp bounds (prevents exp overflow).
pub const LOGVAR_MIN: f32 = -10.0;
pub const LOGVAR_MAX: f32 = 4.0;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VaeArch {
    pub resolution: usize,
    /// Encoder channel plan; strides are (2, 2, 1) so the latent sits at
    /// 1/4 of the input resolution.
    pub channels: [usize; 3],
    pub latent_channels: usize,
}

impl Default for VaeArch {
    fn default() -> Self {
        VaeArch {
            resolution: 64,
            channels: [32, 64, 128],
            latent_channels: 4,
        }
    }
}

impl VaeArch {
    /// Smaller plan for fast single-core runs; same latent contract.
    pub fn desk_small(resolution: usize) -> Self {
        VaeArch {
            resolution,
            channels: [16, 32, 64],
            latent_channels: 4,
        }
    }

    /// Widened variant used as an independently trained transfer target.
    pub fn widened(&self) -> Self {
        VaeArch {
            resolution: self.resolution,
            channels: [
                self.channels[0] + self.channels[0] / 2,
                self.channels[1] + self.channels[1] / 2,
                self.channels[2] + self.channels[2] / 2,
            ],
            latent_channels: self.latent_channels,
        }
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [3, self.resolution, self.resolution]
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [self.latent_channels, self.resolution / 4, self.resolution / 4]
    }

    fn layer_plan(&self) -> Vec<(String, Vec<usize>)> {
        let [c0, c1, c2] = self.channels;
        let lc = self.latent_channels;
        let conv = |name: &str, o: usize, i: usize| -> Vec<(String, Vec<usize>)> {
            vec![
                (format!("{}.w", name), vec![o, i, 3, 3]),
                (format!("{}.b", name), vec![o]),
            ]
        };
        [
            conv("enc0", c0, 3),
            conv("enc1", c1, c0),
            conv("enc2", c2, c1),
            conv("mu", lc, c2),
            conv("lv", lc, c2),
            conv("dec0", c2, lc),
            conv("dec1", c1, c2),
            conv("dec2", c0, c1),
            conv("dec3", 3, c0),
        ]
        .concat()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams {
    arch: VaeArch,
    params: ParamSet,
    frozen: bool,
}

impl VaeParams {
    /// Random initialization (Kaiming weights, zero biases).
    pub fn init(arch: &VaeArch, seed: u64) -> Self {
        let mut rng = rng_stream(seed, 0x7641_);
        let mut params = ParamSet::new();
        for (name, shape) in arch.layer_plan() {
            if name.ends_with(".w") {
                let fan_in = shape[1] * shape[2] * shape[3];
                params.push(name, kaiming_tensor(&shape, fan_in, &mut rng));
            } else {
                params.push(name, Tensor::zeros(&shape));
            }
        }
        VaeParams {
            arch: arch.clone(),
            params,
            frozen: false,
        }
    }

    pub fn arch(&self) -> &VaeArch {
        &self.arch
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Serialized weight bytes, for byte-identity assertions.
    pub fn digest_bytes(&self) -> Vec<u8> {
        self.params.digest_bytes()
    }

    pub fn to_container(&self) -> crate::container::Container {
        let mut c = crate::container::Container::new(crate::container::MAGIC_VAE);
        c.metadata = format!(
            "resolution={}\nchannels={},{},{}\nlatent_channels={}\nfrozen={}\n",
            self.arch.resolution,
            self.arch.channels[0],
            self.arch.channels[1],
            self.arch.channels[2],
            self.arch.latent_channels,
            self.frozen
        );
        self.params.write_into(&mut c);
        c
    }

    pub fn from_container(c: &crate::container::Container) -> Result<Self> {
        let meta = |k: &str| {
            c.meta_value(k)
                .ok_or_else(|| DuawError::Container(format!("missing metadata key '{}'", k)))
        };
        let resolution: usize = meta("resolution")?
            .parse()
            .map_err(|_| DuawError::Container("bad resolution".into()))?;
        let ch: Vec<usize> = meta("channels")?
            .split(',')
            .map(|s| s.parse().map_err(|_| DuawError::Container("bad channels".into())))
            .collect::<Result<_>>()?;
        if ch.len() != 3 {
            return Err(DuawError::Container("channels must have 3 entries".into()));
        }
        let latent_channels: usize = meta("latent_channels")?
            .parse()
            .map_err(|_| DuawError::Container("bad latent_channels".into()))?;
        let frozen = meta("frozen")? == "true";
        let arch = VaeArch {
            resolution,
            channels: [ch[0], ch[1], ch[2]],
            latent_channels,
        };
        let names: Vec<String> = arch.layer_plan().into_iter().map(|(n, _)| n).collect();
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let params = ParamSet::read_from(c, &name_refs)?;
        Ok(VaeParams { arch, params, frozen })
    }

    /// Record weights on a tape. Training access is rejected once frozen.
    pub fn record(&self, tape: &mut Tape, trainable: bool) -> Result<VarMap> {
        if trainable && self.frozen {
            return Err(DuawError::InvalidArg(
                "VAE weights are frozen; trainable access rejected".into(),
            ));
        }
        Ok(VarMap::record(tape, &self.params, trainable))
    }
}

fn conv_block(tape: &mut Tape, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
    let y = tape.conv2d(x, w, stride, 1)?;
    let c = tape.value(y).shape()[0];
    let zero = tape.constant(Tensor::zeros(&[c]));
    tape.channel_affine(y, zero, b)
}

/// Encoder forward on a tape: image -> (mu, sigma). sigma is strictly
/// positive by construction (exp of clamped half log-variance).
pub fn encode_vars(tape: &mut Tape, x: Var, arch: &VaeArch, vars: &VarMap) -> Result<(Var, Var)> {
    let expect = arch.image_shape();
    if tape.value(x).shape() != expect {
        return Err(DuawError::shape("encode input", &expect, tape.value(x).shape()));
    }
    let mut h = x;
    for (i, stride) in [2usize, 2, 1].iter().enumerate() {
        let y = conv_block(tape, h, vars.get(&format!("enc{}.w", i)), vars.get(&format!("enc{}.b", i)), *stride)?;
        h = tape.relu(y);
    }
    let mu = conv_block(tape, h, vars.get("mu.w"), vars.get("mu.b"), 1)?;
    let lv_raw = conv_block(tape, h, vars.get("lv.w"), vars.get("lv.b"), 1)?;
    let lv = tape.clamp(lv_raw, LOGVAR_MIN, LOGVAR_MAX);
    let half_lv = tape.mul_scalar(lv, 0.5);
    let sigma = tape.exp(half_lv);
    Ok((mu, sigma))
}

/// Decoder forward on a tape: latent -> image in [0,1].
pub fn decode_vars(tape: &mut Tape, z: Var, arch: &VaeArch, vars: &VarMap) -> Result<Var> {
    let expect = arch.latent_shape();
    if tape.value(z).shape() != expect {
        return Err(DuawError::shape("decode latent", &expect, tape.value(z).shape()));
    }
    let y0 = conv_block(tape, z, vars.get("dec0.w"), vars.get("dec0.b"), 1)?;
    let h0 = tape.relu(y0);
    let u1 = tape.upsample2(h0)?;
    let y1 = conv_block(tape, u1, vars.get("dec1.w"), vars.get("dec1.b"), 1)?;
    let h1 = tape.relu(y1);
    let u2 = tape.upsample2(h1)?;
    let y2 = conv_block(tape, u2, vars.get("dec2.w"), vars.get("dec2.b"), 1)?;
    let h2 = tape.relu(y2);
    let y3 = conv_block(tape, h2, vars.get("dec3.w"), vars.get("dec3.b"), 1)?;
    Ok(tape.sigmoid(y3))
}

/// Reparametrized sample on a tape: z = mu + sigma * zeta, zeta constant.
pub fn sample_latent_vars(tape: &mut Tape, mu: Var, sigma: Var, zeta: Var) -> Result<Var> {
    let scaled = tape.mul(sigma, zeta)?;
    tape.add(mu, scaled)
}

// ── plain (non-taped) operations ─────────────────────────────────────

pub fn encode(x: &Tensor, params: &VaeParams) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let vars = VarMap::record(&mut tape, &params.params, false);
    let xv = tape.constant(x.clone());
    let (mu, sigma) = encode_vars(&mut tape, xv, &params.arch, &vars)?;
    Ok((tape.value(mu).clone(), tape.value(sigma).clone()))
}

pub fn decode(z: &Tensor, params: &VaeParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = VarMap::record(&mut tape, &params.params, false);
    let zv = tape.constant(z.clone());
    let out = decode_vars(&mut tape, zv, &params.arch, &vars)?;
    Ok(tape.value(out).clone())
}

/// z = mu + sigma (.) zeta
pub fn sample_latent(mu: &Tensor, sigma: &Tensor, zeta: &Tensor) -> Result<Tensor> {
    if !mu.same_shape(sigma) || !mu.same_shape(zeta) {
        return Err(DuawError::shape("sample_latent", mu.shape(), sigma.shape()));
    }
    let data: Vec<f32> = mu
        .data()
        .iter()
        .zip(sigma.data())
        .zip(zeta.data())
        .map(|((m, s), e)| m + s * e)
        .collect();
    Tensor::from_vec(mu.shape().to_vec(), data)
}

/// encode -> sample with a fresh zeta from `rng` -> decode.
pub fn reconstruct(x: &Tensor, params: &VaeParams, rng: &mut Prng) -> Result<Tensor> {
    let (mu, sigma) = encode(x, params)?;
    let zeta = normal_tensor(mu.shape(), rng);
    let z = sample_latent(&mu, &sigma, &zeta)?;
    decode(&z, params)
}

/// Analytic KL(N(mu, sigma) || N(0, 1)), summed over elements.
pub fn kl_divergence(mu: &Tensor, sigma: &Tensor) -> f32 {
    mu.data()
        .iter()
        .zip(sigma.data())
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()) as f64)
        .sum::<f64>() as f32
}

/// KL term on a tape, as a mean over latent elements.
fn kl_mean_vars(tape: &mut Tape, mu: Var, sigma: Var) -> Result<Var> {
    let mu2 = tape.mul(mu, mu)?;
    let s2 = tape.mul(sigma, sigma)?;
    let lns = tape.ln(sigma);
    let two_lns = tape.mul_scalar(lns, 2.0);
    let a = tape.add(mu2, s2)?;
    let b = tape.sub(a, two_lns)?;
    let c = tape.add_scalar(b, -1.0);
    let m = tape.mean(c);
    Ok(tape.mul_scalar(m, 0.5))
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct VaeTrainConfig {
    pub arch: VaeArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// KL weight (beta); small so reconstructions stay sharp.
    pub kl_weight: f32,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            arch: VaeArch::default(),
            epochs: 60,
            batch_size: 8,
            lr: 1e-3,
            kl_weight: 1e-3,
        }
    }
}

pub struct VaeTrainResult {
    pub params: VaeParams,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f32>,
}

/// One of the 8 symmetries of the square (flips + rotations), used as
/// training augmentation. `k` in 0..8: bit 0 transposes, bit 1 flips
/// horizontally, bit 2 flips vertically.
pub(crate) fn dihedral(x: &Tensor, k: u8) -> Tensor {
    if k == 0 {
        return x.clone();
    }
    let shape = x.shape().to_vec();
    let (c, n) = (shape[0], shape[1]);
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    for ch in 0..c {
        for y in 0..n {
            for xx in 0..n {
                let (mut sy, mut sx) = (y, xx);
                if k & 1 != 0 {
                    std::mem::swap(&mut sy, &mut sx);
                }
                if k & 2 != 0 {
                    sx = n - 1 - sx;
                }
                if k & 4 != 0 {
                    sy = n - 1 - sy;
                }
                out[ch * n * n + y * n + xx] = src[ch * n * n + sy * n + sx];
            }
        }
    }
    Tensor::from_vec(shape, out).expect("dihedral shape")
}

/// Train the VAE on `dataset` (MSE reconstruction + beta * KL), freeze
/// the weights and return them with the loss curve. Each sample is
/// augmented with a random square symmetry per visit; the surrogate set
/// is small enough that the encoder otherwise memorizes it outright.
pub fn train_vae(dataset: &[Tensor], config: &VaeTrainConfig, seed: u64) -> Result<VaeTrainResult> {
    if dataset.is_empty() {
        return Err(DuawError::InvalidArg("train_vae: empty dataset".into()));
    }
    let expect = config.arch.image_shape();
    for (i, x) in dataset.iter().enumerate() {
        if x.shape() != expect {
            return Err(DuawError::shape(format!("train_vae image {}", i), &expect, x.shape()));
        }
    }
    let mut model = VaeParams::init(&config.arch, seed);
    let mut opt = ParamOptimizer::new(&model.params);
    let mut shuffle_rng = rng_stream(seed, 0x5a5a);
    let mut zeta_rng = rng_stream(seed, 0x2e7a);
    let mut aug_rng = rng_stream(seed, 0x6175);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0usize;

    for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        shuffle(&mut order, &mut shuffle_rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut tape = Tape::new();
            let vars = model.record(&mut tape, true)?;
            let mut total: Option<Var> = None;
            for &idx in batch {
                let k = {
                    use rand::Rng;
                    aug_rng.gen_range(0u8..8)
                };
                let x = tape.constant(dihedral(&dataset[idx], k));
                let (mu, sigma) = encode_vars(&mut tape, x, &config.arch, &vars)?;
                let zeta = tape.constant(normal_tensor(tape.value(mu).shape(), &mut zeta_rng));
                let z = sample_latent_vars(&mut tape, mu, sigma, zeta)?;
                let recon = decode_vars(&mut tape, z, &config.arch, &vars)?;
                let rec_loss = metrics::mse(&mut tape, x, recon)?;
                let kl = kl_mean_vars(&mut tape, mu, sigma)?;
                let klw = tape.mul_scalar(kl, config.kl_weight);
                let li = tape.add(rec_loss, klw)?;
                total = Some(match total {
                    None => li,
                    Some(t) => tape.add(t, li)?,
                });
            }
            let sum = total.expect("non-empty batch");
            let loss = tape.mul_scalar(sum, 1.0 / batch.len() as f32);
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(DuawError::NonFinite {
                    step,
                    context: "vae training loss".into(),
                });
            }
            let grads = tape.backward(loss)?;
            opt.step(&mut model.params, &vars, &grads, config.lr)?;
            epoch_loss += loss_val as f64;
            batches += 1;
            step += 1;
        }
        epoch_losses.push((epoch_loss / batches as f64) as f32);
    }
    model.freeze();
    Ok(VaeTrainResult {
        params: model,
        epoch_losses,
    })
}

fn shuffle(order: &mut [usize], rng: &mut Prng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Mean MS-SSIM between images and their (sampled) reconstructions.
pub fn mean_reconstruction_msssim(
    images: &[Tensor],
    params: &VaeParams,
    scales: usize,
    seed: u64,
) -> Result<f32> {
    let mut rng = rng_stream(seed, 0x4d53);
    let mut sum = 0.0f64;
    for x in images {
        let r = reconstruct(x, params, &mut rng)?;
        sum += metrics::ms_ssim_value(x, &r, scales)? as f64;
    }
    Ok((sum / images.len() as f64) as f32)
}

/// Mean SSIM between images and their reconstructions (used by reports).
pub fn mean_reconstruction_ssim(images: &[Tensor], params: &VaeParams, seed: u64) -> Result<f32> {
    let mut rng = rng_stream(seed, 0x5353);
    let p = SsimParams::default();
    let mut sum = 0.0f64;
    for x in images {
        let r = reconstruct(x, params, &mut rng)?;
        sum += metrics::ssim_value(x, &r, &p)? as f64;
    }
    Ok((sum / images.len() as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, uniform_tensor};

    fn tiny_arch() -> VaeArch {
        VaeArch {
            resolution: 16,
            channels: [4, 6, 8],
            latent_channels: 4,
        }
    }

    #[test]
    fn encode_shape_contract() {
        let arch = VaeArch::desk_small(64);
        let params = VaeParams::init(&arch, 3);
        let x = uniform_tensor(&[3, 64, 64], 0.0, 1.0, &mut rng_from(4));
        let (mu, sigma) = encode(&x, &params).unwrap();
        assert_eq!(mu.shape(), &[4, 16, 16]);
        assert_eq!(sigma.shape(), &[4, 16, 16]);
    }

    #[test]
    fn encode_rejects_wrong_resolution() {
        let params = VaeParams::init(&tiny_arch(), 3);
        let x = Tensor::zeros(&[3, 32, 32]);
        assert!(encode(&x, &params).is_err());
    }

    #[test]
    fn sigma_is_strictly_positive() {
        let params = VaeParams::init(&tiny_arch(), 5);
        let mut rng = rng_from(6);
        for _ in 0..50 {
            let x = uniform_tensor(&[3, 16, 16], 0.0, 1.0, &mut rng);
            let (_, sigma) = encode(&x, &params).unwrap();
            assert!(sigma.data().iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let params = VaeParams::init(&tiny_arch(), 7);
        let x = uniform_tensor(&[3, 16, 16], 0.0, 1.0, &mut rng_from(8));
        let (m1, s1) = encode(&x, &params).unwrap();
        let (m2, s2) = encode(&x, &params).unwrap();
        assert_eq!(m1.data(), m2.data());
        assert_eq!(s1.data(), s2.data());
    }

    #[test]
    fn decode_shape_and_range() {
        let params = VaeParams::init(&tiny_arch(), 9);
        let mut rng = rng_from(10);
        for _ in 0..20 {
            let z = normal_tensor(&[4, 4, 4], &mut rng);
            let out = decode(&z, &params).unwrap();
            assert_eq!(out.shape(), &[3, 16, 16]);
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn decode_rejects_wrong_latent_shape() {
        let params = VaeParams::init(&tiny_arch(), 9);
        assert!(decode(&Tensor::zeros(&[4, 8, 8]), &params).is_err());
    }

    #[test]
    fn sample_latent_edge_cases() {
        let mu = Tensor::filled(&[4], 0.3);
        let sigma = Tensor::filled(&[4], 0.5);
        let zero = Tensor::zeros(&[4]);
        // zeta = 0 -> z = mu
        assert_eq!(sample_latent(&mu, &sigma, &zero).unwrap().data(), mu.data());
        // sigma = 0 -> z = mu regardless of zeta
        let zeta = Tensor::filled(&[4], 2.0);
        assert_eq!(sample_latent(&mu, &zero, &zeta).unwrap().data(), mu.data());
    }

    #[test]
    fn sample_latent_monte_carlo_statistics() {
        let mu = Tensor::filled(&[1], 0.7);
        let sigma = Tensor::filled(&[1], 0.4);
        let mut rng = rng_from(11);
        let n = 10_000;
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let zeta = normal_tensor(&[1], &mut rng);
            vals.push(sample_latent(&mu, &sigma, &zeta).unwrap().item() as f64);
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.7).abs() < 3.0 * 0.4 / 100.0, "mean {}", mean);
        assert!((var.sqrt() - 0.4).abs() < 0.05 * 0.4, "std {}", var.sqrt());
    }

    #[test]
    fn reconstruct_is_seed_deterministic_and_composes() {
        let params = VaeParams::init(&tiny_arch(), 12);
        let x = uniform_tensor(&[3, 16, 16], 0.0, 1.0, &mut rng_from(13));
        let r1 = reconstruct(&x, &params, &mut rng_from(14)).unwrap();
        let r2 = reconstruct(&x, &params, &mut rng_from(14)).unwrap();
        assert_eq!(r1.data(), r2.data());

        // zeta forced to zero equals decode(encode(x).mu)
        let (mu, sigma) = encode(&x, &params).unwrap();
        let z = sample_latent(&mu, &sigma, &Tensor::zeros(mu.shape())).unwrap();
        let direct = decode(&z, &params).unwrap();
        let dmu = decode(&mu, &params).unwrap();
        assert_eq!(direct.data(), dmu.data());
    }

    #[test]
    fn kl_is_nonnegative_and_zero_at_standard_normal() {
        let mu0 = Tensor::zeros(&[8]);
        let sig1 = Tensor::filled(&[8], 1.0);
        assert!(kl_divergence(&mu0, &sig1).abs() < 1e-6);
        let mut rng = rng_from(15);
        for _ in 0..100 {
            let mu = normal_tensor(&[8], &mut rng);
            let sigma = uniform_tensor(&[8], 0.1, 3.0, &mut rng);
            assert!(kl_divergence(&mu, &sigma) >= 0.0);
        }
        // perturbing either parameter away from (0,1) makes KL positive
        assert!(kl_divergence(&Tensor::filled(&[8], 0.1), &sig1) > 0.0);
        assert!(kl_divergence(&mu0, &Tensor::filled(&[8], 1.1)) > 0.0);
    }

    #[test]
    fn training_makes_progress_and_is_deterministic() {
        let mut rng = rng_from(16);
        let dataset: Vec<Tensor> = (0..6)
            .map(|_| uniform_tensor(&[3, 16, 16], 0.0, 1.0, &mut rng))
            .collect();
        let config = VaeTrainConfig {
            arch: tiny_arch(),
            epochs: 4,
            batch_size: 3,
            lr: 1e-3,
            kl_weight: 1e-3,
        };
        let r1 = train_vae(&dataset, &config, 42).unwrap();
        let r2 = train_vae(&dataset, &config, 42).unwrap();
        assert!(r1.epoch_losses.last().unwrap() < r1.epoch_losses.first().unwrap());
        assert!(r1.params.is_frozen());
        assert_eq!(r1.params.digest_bytes(), r2.params.digest_bytes());
    }

    #[test]
    fn frozen_params_reject_trainable_access() {
        let mut params = VaeParams::init(&tiny_arch(), 17);
        params.freeze();
        let mut tape = Tape::new();
        assert!(params.record(&mut tape, true).is_err());
        assert!(params.record(&mut tape, false).is_ok());
    }

    #[test]
    fn container_roundtrip() {
        let mut params = VaeParams::init(&tiny_arch(), 18);
        params.freeze();
        let c = params.to_container();
        let back = VaeParams::from_container(&c).unwrap();
        assert_eq!(params, back);
    }
}
