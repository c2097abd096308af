//! Toy conditional latent denoiser: a small DDPM over the frozen VAE's
//! latent space with FiLM conditioning on (timestep, token). Supports
//! full fine-tuning with prior preservation and low-rank (LoRA)
//! fine-tuning of the condition-interaction layers and conv trunk.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::container::{Container, MAGIC_GEN, MAGIC_LORA};
use crate::error::{DuawError, Result};
use crate::metrics::mse;
use crate::paramset::{ParamOptimizer, ParamSet, VarMap};
use crate::rng::{derive_seed, kaiming_tensor, normal_tensor, rng_stream, Prng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::transforms::gaussian_blur;
use crate::vae::{decode, encode, VaeParams};

/// Reserved fine-tuning tokens, always present in the vocabulary.
pub const INSTANCE_TOKEN: &str = "<instance>";
pub const CLASS_TOKEN: &str = "<class>";

/// Layers whose weights LoRA adapts: the condition MLP, the FiLM
/// projection heads, and the first two trunk convolutions. Conv layers
/// are factored as a rank-r 3x3 "down" conv followed by a 1x1 "up"
/// conv (the up factor starts at zero, like the linear B factor). The
/// output projection conv2 stays frozen.
const LORA_LAYERS: [&str; 8] = [
    "cond0.w",
    "cond1.w",
    "film0.scale.w",
    "film0.shift.w",
    "film1.scale.w",
    "film1.shift.w",
    "conv0.w",
    "conv1.w",
];

#[derive(Clone, Debug, PartialEq)]
pub struct GenArch {
    pub latent_channels: usize,
    pub latent_res: usize,
    /// Conv trunk width.
    pub hidden: usize,
    /// Condition embedding width.
    pub embed_dim: usize,
    pub t_steps: usize,
    pub vocab: Vec<String>,
}

impl GenArch {
    pub fn latent_shape(&self) -> [usize; 3] {
        [self.latent_channels, self.latent_res, self.latent_res]
    }

    fn layer_plan(&self) -> Vec<(String, Vec<usize>)> {
        let (lc, c, e) = (self.latent_channels, self.hidden, self.embed_dim);
        vec![
            ("conv0.w".into(), vec![c, lc, 3, 3]),
            ("conv0.b".into(), vec![c]),
            ("conv1.w".into(), vec![c, c, 3, 3]),
            ("conv1.b".into(), vec![c]),
            ("conv2.w".into(), vec![lc, c, 3, 3]),
            ("conv2.b".into(), vec![lc]),
            ("time_emb".into(), vec![self.t_steps, e]),
            ("token_emb".into(), vec![self.vocab.len(), e]),
            ("cond0.w".into(), vec![e, e]),
            ("cond0.b".into(), vec![e]),
            ("cond1.w".into(), vec![e, e]),
            ("cond1.b".into(), vec![e]),
            ("film0.scale.w".into(), vec![c, e]),
            ("film0.scale.b".into(), vec![c]),
            ("film0.shift.w".into(), vec![c, e]),
            ("film0.shift.b".into(), vec![c]),
            ("film1.scale.w".into(), vec![c, e]),
            ("film1.scale.b".into(), vec![c]),
            ("film1.shift.w".into(), vec![c, e]),
            ("film1.shift.b".into(), vec![c]),
        ]
    }
}

/// Linear noise schedule beta_1..beta_T. The terminal beta scales with
/// 1/T so that alpha-bar at t=T stays near zero for any step count:
/// ancestral sampling starts from N(0,1), which is only the correct
/// prior when the forward process destroys essentially all signal.
pub fn linear_betas(t_steps: usize) -> Vec<f32> {
    let lo = 1e-4f32;
    let hi = (8.0 / t_steps as f32).clamp(0.02, 0.2);
    (0..t_steps)
        .map(|t| lo + (hi - lo) * t as f32 / (t_steps - 1).max(1) as f32)
        .collect()
}

fn alpha_bars(betas: &[f32]) -> Vec<f32> {
    let mut acc = 1.0f64;
    betas
        .iter()
        .map(|b| {
            acc *= 1.0 - *b as f64;
            acc as f32
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct GeneratorParams {
    arch: GenArch,
    params: ParamSet,
    betas: Vec<f32>,
    /// Per-channel latent normalization (computed at pretraining time);
    /// the denoiser always operates in normalized latent space.
    norm_mean: Vec<f32>,
    norm_std: Vec<f32>,
}

impl GeneratorParams {
    pub fn init(arch: GenArch, seed: u64) -> Result<Self> {
        let betas = linear_betas(arch.t_steps);
        for w in betas.windows(2) {
            if !(w[0] < w[1] && w[0] > 0.0 && w[1] < 1.0) {
                return Err(DuawError::InvalidArg(
                    "beta schedule must be strictly increasing in (0,1)".into(),
                ));
            }
        }
        let mut rng = rng_stream(seed, 0x6e47);
        let mut params = ParamSet::new();
        for (name, shape) in arch.layer_plan() {
            let t = if name.ends_with(".w") && shape.len() == 4 {
                let fan_in: usize = shape[1..].iter().product();
                kaiming_tensor(&shape, fan_in, &mut rng)
            } else if name.ends_with("_emb") {
                normal_tensor(&shape, &mut rng).map(|v| v * 0.1)
            } else if name.ends_with(".w") {
                let fan_in = shape[1];
                kaiming_tensor(&shape, fan_in, &mut rng).map(|v| v * 0.1)
            } else {
                Tensor::zeros(&shape)
            };
            params.push(name, t);
        }
        let lc = arch.latent_channels;
        Ok(GeneratorParams {
            arch,
            params,
            betas,
            norm_mean: vec![0.0; lc],
            norm_std: vec![1.0; lc],
        })
    }

    pub fn arch(&self) -> &GenArch {
        &self.arch
    }

    pub fn betas(&self) -> &[f32] {
        &self.betas
    }

    pub fn token_index(&self, token: &str) -> Result<usize> {
        self.arch
            .vocab
            .iter()
            .position(|t| t == token)
            .ok_or_else(|| DuawError::InvalidArg(format!("unknown token '{}'", token)))
    }

    pub fn digest_bytes(&self) -> Vec<u8> {
        self.params.digest_bytes()
    }

    /// (latent - mean) / std per channel.
    pub fn normalize_latent(&self, z: &Tensor) -> Tensor {
        self.channel_map(z, |v, m, s| (v - m) / s)
    }

    /// latent * std + mean per channel.
    pub fn denormalize_latent(&self, z: &Tensor) -> Tensor {
        self.channel_map(z, |v, m, s| v * s + m)
    }

    fn channel_map(&self, z: &Tensor, f: impl Fn(f32, f32, f32) -> f32) -> Tensor {
        let shape = z.shape().to_vec();
        let (c, hw) = (shape[0], shape[1] * shape[2]);
        let mut data = z.data().to_vec();
        for ch in 0..c {
            let (m, s) = (self.norm_mean[ch], self.norm_std[ch]);
            for v in &mut data[ch * hw..(ch + 1) * hw] {
                *v = f(*v, m, s);
            }
        }
        Tensor::from_vec(shape, data).expect("channel_map shape")
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(MAGIC_GEN);
        c.metadata = format!(
            "latent_channels={}\nlatent_res={}\nhidden={}\nembed_dim={}\nt_steps={}\nvocab={}\n",
            self.arch.latent_channels,
            self.arch.latent_res,
            self.arch.hidden,
            self.arch.embed_dim,
            self.arch.t_steps,
            self.arch.vocab.join(",")
        );
        self.params.write_into(&mut c);
        c.push("betas", Tensor::from_vec(vec![self.betas.len()], self.betas.clone()).unwrap());
        c.push(
            "norm_mean",
            Tensor::from_vec(vec![self.norm_mean.len()], self.norm_mean.clone()).unwrap(),
        );
        c.push(
            "norm_std",
            Tensor::from_vec(vec![self.norm_std.len()], self.norm_std.clone()).unwrap(),
        );
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = |k: &str| -> Result<&str> {
            c.meta_value(k)
                .ok_or_else(|| DuawError::Container(format!("missing metadata key '{}'", k)))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            meta(k)?
                .parse()
                .map_err(|_| DuawError::Container(format!("bad metadata value for '{}'", k)))
        };
        let arch = GenArch {
            latent_channels: parse_usize("latent_channels")?,
            latent_res: parse_usize("latent_res")?,
            hidden: parse_usize("hidden")?,
            embed_dim: parse_usize("embed_dim")?,
            t_steps: parse_usize("t_steps")?,
            vocab: meta("vocab")?.split(',').map(str::to_string).collect(),
        };
        let names: Vec<String> = arch.layer_plan().into_iter().map(|(n, _)| n).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        Ok(GeneratorParams {
            params: ParamSet::read_from(c, &name_refs)?,
            betas: c.get("betas")?.data().to_vec(),
            norm_mean: c.get("norm_mean")?.data().to_vec(),
            norm_std: c.get("norm_std")?.data().to_vec(),
            arch,
        })
    }
}

// ── LoRA ─────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct LoraAdapter {
    /// (layer name, B: (d,r), A: (r,k)) per adapted layer.
    pub layers: Vec<(String, Tensor, Tensor)>,
    pub rank: usize,
    pub scaling: f32,
}

impl LoraAdapter {
    /// Zero-initialized B (up factor), small random A (down factor),
    /// for every adapted layer. Linear layers factor as (d,r)x(r,k);
    /// conv layers as a 1x1 up conv (d,r,1,1) over a 3x3 down conv
    /// (r,k,3,3). Treating a conv weight (d,k,3,3) as a (d, 9k) matrix,
    /// both cases share the rank bound min(rows, cols)/4, which keeps
    /// the adapter strictly smaller than the layer it adapts.
    pub fn init(gen: &GeneratorParams, rank: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_stream(seed, 0x10ad);
        let mut layers = Vec::new();
        for name in LORA_LAYERS {
            let w = gen.params.get(name);
            let shape = w.shape();
            let (d, k) = (shape[0], shape[1..].iter().product::<usize>());
            let max_rank = d.min(k) / 4;
            if rank == 0 || rank > max_rank {
                return Err(DuawError::InvalidArg(format!(
                    "LoRA rank {} out of bounds for layer {} ({}x{}): must be in [1, {}]",
                    rank, name, d, k, max_rank
                )));
            }
            let (b, a) = if shape.len() == 4 {
                let (kh, kw) = (shape[2], shape[3]);
                (
                    Tensor::zeros(&[d, rank, 1, 1]),
                    normal_tensor(&[rank, shape[1], kh, kw], &mut rng).map(|v| v * 0.05),
                )
            } else {
                (
                    Tensor::zeros(&[d, rank]),
                    normal_tensor(&[rank, k], &mut rng).map(|v| v * 0.05),
                )
            };
            layers.push((name.to_string(), b, a));
        }
        Ok(LoraAdapter {
            layers,
            rank,
            scaling: 1.0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|(_, b, a)| b.numel() + a.numel())
            .sum()
    }

    /// Parameter count of the base layers this adapter covers.
    pub fn adapted_param_count(&self, gen: &GeneratorParams) -> usize {
        self.layers
            .iter()
            .map(|(name, _, _)| gen.params.get(name).numel())
            .sum()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(MAGIC_LORA);
        c.metadata = format!("rank={}\nscaling={}\n", self.rank, self.scaling);
        for (name, b, a) in &self.layers {
            c.push(format!("{}.B", name), b.clone());
            c.push(format!("{}.A", name), a.clone());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let rank: usize = c
            .meta_value("rank")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| DuawError::Container("missing metadata key 'rank'".into()))?;
        let scaling: f32 = c
            .meta_value("scaling")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| DuawError::Container("missing metadata key 'scaling'".into()))?;
        let mut layers = Vec::new();
        for name in LORA_LAYERS {
            layers.push((
                name.to_string(),
                c.get(&format!("{}.B", name))?.clone(),
                c.get(&format!("{}.A", name))?.clone(),
            ));
        }
        Ok(LoraAdapter {
            layers,
            rank,
            scaling,
        })
    }
}

/// Tape handles for an adapter's factors.
struct LoraVars {
    vars: Vec<(String, Var, Var)>,
    scaling: f32,
}

impl LoraVars {
    fn record(tape: &mut Tape, adapter: &LoraAdapter, trainable: bool) -> Self {
        let vars = adapter
            .layers
            .iter()
            .map(|(n, b, a)| {
                let (bv, av) = if trainable {
                    (tape.leaf(b.clone()), tape.leaf(a.clone()))
                } else {
                    (tape.constant(b.clone()), tape.constant(a.clone()))
                };
                (n.clone(), bv, av)
            })
            .collect();
        LoraVars {
            vars,
            scaling: adapter.scaling,
        }
    }

    fn get(&self, name: &str) -> Option<(Var, Var)> {
        self.vars
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, b, a)| (*b, *a))
    }
}

// ── denoiser forward ─────────────────────────────────────────────────

/// Linear layer with optional LoRA contribution: y = W0 x + b + s * B(Ax).
fn adapted_linear(
    tape: &mut Tape,
    input: Var,
    layer: &str,
    vars: &VarMap,
    lora: Option<&LoraVars>,
) -> Result<Var> {
    let base = tape.linear(input, vars.get(&format!("{}.w", layer)), vars.get(&format!("{}.b", layer)))?;
    if let Some(lv) = lora {
        if let Some((b, a)) = lv.get(&format!("{}.w", layer)) {
            let r = tape.value(a).shape()[0];
            let d = tape.value(b).shape()[0];
            let zero_r = tape.constant(Tensor::zeros(&[r]));
            let zero_d = tape.constant(Tensor::zeros(&[d]));
            let mid = tape.linear(input, a, zero_r)?;
            let up = tape.linear(mid, b, zero_d)?;
            let scaled = tape.mul_scalar(up, lv.scaling);
            return tape.add(base, scaled);
        }
    }
    Ok(base)
}

fn conv_bias(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let c = tape.value(b).numel();
    let zero = tape.constant(Tensor::zeros(&[c]));
    let y = tape.conv2d(x, w, 1, 1)?;
    tape.channel_affine(y, zero, b)
}

/// Trunk conv with optional LoRA contribution:
/// y = conv(x, W0) + b + s * conv1x1(conv3x3(x, A), B).
fn adapted_conv(
    tape: &mut Tape,
    x: Var,
    layer: &str,
    vars: &VarMap,
    lora: Option<&LoraVars>,
) -> Result<Var> {
    let base = conv_bias(
        tape,
        x,
        vars.get(&format!("{}.w", layer)),
        vars.get(&format!("{}.b", layer)),
    )?;
    if let Some(lv) = lora {
        if let Some((b, a)) = lv.get(&format!("{}.w", layer)) {
            let mid = tape.conv2d(x, a, 1, 1)?;
            let up = tape.conv2d(mid, b, 1, 0)?;
            let scaled = tape.mul_scalar(up, lv.scaling);
            return tape.add(base, scaled);
        }
    }
    Ok(base)
}

/// Predicted noise for a (possibly taped) normalized latent `z_t`.
fn denoise_vars(
    tape: &mut Tape,
    z_t: Var,
    t: usize,
    token_idx: usize,
    vars: &VarMap,
    lora: Option<&LoraVars>,
) -> Result<Var> {
    let t_emb = tape.gather(vars.get("time_emb"), t)?;
    let tok_emb = tape.gather(vars.get("token_emb"), token_idx)?;
    let mixed = tape.add(t_emb, tok_emb)?;
    let c0 = adapted_linear(tape, mixed, "cond0", vars, lora)?;
    let c0 = tape.relu(c0);
    let cond = adapted_linear(tape, c0, "cond1", vars, lora)?;
    let cond = tape.relu(cond);

    let mut h = adapted_conv(tape, z_t, "conv0", vars, lora)?;
    h = tape.relu(h);
    let s0 = adapted_linear(tape, cond, "film0.scale", vars, lora)?;
    let b0 = adapted_linear(tape, cond, "film0.shift", vars, lora)?;
    h = tape.channel_affine(h, s0, b0)?;
    h = adapted_conv(tape, h, "conv1", vars, lora)?;
    h = tape.relu(h);
    let s1 = adapted_linear(tape, cond, "film1.scale", vars, lora)?;
    let b1 = adapted_linear(tape, cond, "film1.shift", vars, lora)?;
    h = tape.channel_affine(h, s1, b1)?;
    conv_bias(tape, h, vars.get("conv2.w"), vars.get("conv2.b"))
}

/// Non-taped denoiser evaluation.
fn denoise_value(
    gen: &GeneratorParams,
    adapter: Option<&LoraAdapter>,
    z_t: &Tensor,
    t: usize,
    token_idx: usize,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = VarMap::record(&mut tape, &gen.params, false);
    let lora = adapter.map(|a| LoraVars::record(&mut tape, a, false));
    let z = tape.constant(z_t.clone());
    let out = denoise_vars(&mut tape, z, t, token_idx, &vars, lora.as_ref())?;
    Ok(tape.value(out).clone())
}

/// Forward-noised latent: sqrt(abar_t) z0 + sqrt(1-abar_t) eps.
pub fn q_sample(z0: &Tensor, eps: &Tensor, abar_t: f32) -> Tensor {
    let (sa, se) = (abar_t.sqrt(), (1.0 - abar_t).sqrt());
    let data: Vec<f32> = z0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(z, e)| sa * z + se * e)
        .collect();
    Tensor::from_vec(z0.shape().to_vec(), data).expect("q_sample shape")
}

// ── pretraining ──────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub hidden: usize,
    pub embed_dim: usize,
    pub t_steps: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 60,
            lr: 1e-3,
            hidden: 32,
            embed_dim: 128,
            t_steps: 100,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainResult {
    pub params: GeneratorParams,
    pub epoch_losses: Vec<f32>,
}

/// Encode an image to its (deterministic) posterior-mean latent.
fn image_latent(x: &Tensor, vae: &VaeParams) -> Result<Tensor> {
    Ok(encode(x, vae)?.0)
}

/// Train the base denoiser on (image, token) pairs over the frozen
/// VAE's latent space. The vocabulary is the distinct tokens of the
/// dataset plus the reserved fine-tuning tokens.
pub fn pretrain_generator(
    dataset: &[(Tensor, String)],
    vae: &VaeParams,
    config: &PretrainConfig,
    seed: u64,
) -> Result<PretrainResult> {
    if dataset.is_empty() {
        return Err(DuawError::InvalidArg("pretrain_generator: empty dataset".into()));
    }
    if !vae.is_frozen() {
        return Err(DuawError::InvalidArg(
            "pretrain_generator requires a frozen VAE".into(),
        ));
    }
    let mut vocab: Vec<String> = Vec::new();
    for (_, tok) in dataset {
        if !vocab.contains(tok) {
            vocab.push(tok.clone());
        }
    }
    vocab.sort();
    for reserved in [INSTANCE_TOKEN, CLASS_TOKEN] {
        if !vocab.iter().any(|t| t == reserved) {
            vocab.push(reserved.to_string());
        }
    }
    let latent_shape = vae.arch().latent_shape();
    let arch = GenArch {
        latent_channels: latent_shape[0],
        latent_res: latent_shape[1],
        hidden: config.hidden,
        embed_dim: config.embed_dim,
        t_steps: config.t_steps,
        vocab,
    };
    let mut gen = GeneratorParams::init(arch, seed)?;

    // raw latents, then per-channel normalization statistics
    let mut latents = Vec::with_capacity(dataset.len());
    let mut tokens = Vec::with_capacity(dataset.len());
    for (x, tok) in dataset {
        latents.push(image_latent(x, vae)?);
        tokens.push(gen.token_index(tok)?);
    }
    let (lc, hw) = (latent_shape[0], latent_shape[1] * latent_shape[2]);
    for ch in 0..lc {
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        let n = (latents.len() * hw) as f64;
        for z in &latents {
            for &v in &z.data()[ch * hw..(ch + 1) * hw] {
                sum += v as f64;
                sq += (v as f64) * (v as f64);
            }
        }
        let mean = sum / n;
        let var = (sq / n - mean * mean).max(1e-12);
        gen.norm_mean[ch] = mean as f32;
        gen.norm_std[ch] = var.sqrt() as f32;
    }
    let norm_latents: Vec<Tensor> = latents.iter().map(|z| gen.normalize_latent(z)).collect();

    let abars = alpha_bars(&gen.betas);
    let mut opt = ParamOptimizer::new(&gen.params);
    let mut rng = rng_stream(seed, 0x7072);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for &idx in &order {
            let t = rng.gen_range(0..gen.arch.t_steps);
            let eps = normal_tensor(&latent_shape, &mut rng);
            let z_t = q_sample(&norm_latents[idx], &eps, abars[t]);
            let mut tape = Tape::new();
            let vars = VarMap::record(&mut tape, &gen.params, true);
            let zv = tape.constant(z_t);
            let pred = denoise_vars(&mut tape, zv, t, tokens[idx], &vars, None)?;
            let target = tape.constant(eps);
            let loss = mse(&mut tape, pred, target)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(DuawError::NonFinite {
                    step,
                    context: "pretrain loss".into(),
                });
            }
            epoch_loss += lv as f64;
            let grads = tape.backward(loss)?;
            opt.step(&mut gen.params, &vars, &grads, config.lr)?;
            step += 1;
        }
        epoch_losses.push((epoch_loss / order.len() as f64) as f32);
    }
    Ok(PretrainResult {
        params: gen,
        epoch_losses,
    })
}

// ── sampling ─────────────────────────────────────────────────────────

/// Ancestral sampling in normalized latent space.
fn sample_normalized_latent(
    gen: &GeneratorParams,
    adapter: Option<&LoraAdapter>,
    token_idx: usize,
    rng: &mut Prng,
) -> Result<Tensor> {
    let shape = gen.arch.latent_shape();
    let abars = alpha_bars(&gen.betas);
    let mut z = normal_tensor(&shape, rng);
    for t in (0..gen.arch.t_steps).rev() {
        let eps_hat = denoise_value(gen, adapter, &z, t, token_idx)?;
        let beta = gen.betas[t];
        let alpha = 1.0 - beta;
        let coef = beta / (1.0 - abars[t]).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let mut data: Vec<f32> = z
            .data()
            .iter()
            .zip(eps_hat.data())
            .map(|(zv, ev)| inv_sqrt_alpha * (zv - coef * ev))
            .collect();
        if t > 0 {
            let noise = normal_tensor(&shape, rng);
            let sigma = beta.sqrt();
            for (d, n) in data.iter_mut().zip(noise.data()) {
                *d += sigma * n;
            }
        }
        z = Tensor::from_vec(shape.to_vec(), data)?;
        z.check_finite(t, "ancestral sampling")?;
    }
    Ok(z)
}

/// Generate `n` images for `token` by reverse diffusion + VAE decode.
/// Per-sample RNG streams derive from (seed, index), so results are
/// independent of generation order.
pub fn generate(
    gen: &GeneratorParams,
    adapter: Option<&LoraAdapter>,
    token: &str,
    n: usize,
    vae: &VaeParams,
    seed: u64,
) -> Result<Vec<Tensor>> {
    let latents = generate_latents(gen, adapter, token, n, seed)?;
    latents.iter().map(|z| decode(z, vae)).collect()
}

/// Generate denormalized latents without decoding.
pub fn generate_latents(
    gen: &GeneratorParams,
    adapter: Option<&LoraAdapter>,
    token: &str,
    n: usize,
    seed: u64,
) -> Result<Vec<Tensor>> {
    let token_idx = gen.token_index(token)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_stream(derive_seed(seed, 0x73_616d70), i as u64);
        let z = sample_normalized_latent(gen, adapter, token_idx, &mut rng)?;
        out.push(gen.denormalize_latent(&z));
    }
    Ok(out)
}

// ── fine-tuning ──────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinetuneMode {
    Full,
    Lora,
}

#[derive(Clone, Debug)]
pub struct FinetuneConfig {
    pub mode: FinetuneMode,
    pub epochs: usize,
    pub lr: f32,
    /// Prior-preservation weight.
    pub lambda: f32,
    pub num_prior: usize,
    pub instance_token: String,
    pub class_token: String,
    pub seed: u64,
}

impl FinetuneConfig {
    pub fn full() -> Self {
        FinetuneConfig {
            mode: FinetuneMode::Full,
            epochs: 800,
            lr: 5e-4,
            lambda: 1.0,
            num_prior: 20,
            instance_token: INSTANCE_TOKEN.to_string(),
            class_token: CLASS_TOKEN.to_string(),
            seed: 0,
        }
    }

    pub fn lora() -> Self {
        FinetuneConfig {
            mode: FinetuneMode::Lora,
            epochs: 1500,
            lr: 2e-3,
            ..FinetuneConfig::full()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(DuawError::InvalidArg("lambda must be >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(DuawError::InvalidArg("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

fn prepare_finetune(
    gen: &GeneratorParams,
    instance_images: &[Tensor],
    vae: &VaeParams,
    config: &FinetuneConfig,
) -> Result<(Vec<Tensor>, Vec<Tensor>, usize, usize)> {
    config.validate()?;
    if instance_images.is_empty() {
        return Err(DuawError::InvalidArg("no instance images given".into()));
    }
    if instance_images.len() > 5 {
        return Err(DuawError::InvalidArg(format!(
            "at most 5 instance images supported, got {}",
            instance_images.len()
        )));
    }
    if !vae.is_frozen() {
        return Err(DuawError::InvalidArg("fine-tuning requires a frozen VAE".into()));
    }
    let inst_idx = gen.token_index(&config.instance_token)?;
    let class_idx = gen.token_index(&config.class_token)?;
    let mut inst_latents = Vec::with_capacity(instance_images.len());
    for x in instance_images {
        inst_latents.push(gen.normalize_latent(&image_latent(x, vae)?));
    }
    // prior-preservation targets: base-model generations for the class
    // token, already in normalized latent space
    let mut prior_latents = Vec::new();
    if config.lambda > 0.0 && config.num_prior > 0 {
        for i in 0..config.num_prior {
            let mut rng = rng_stream(derive_seed(config.seed, 0x7072_696f), i as u64);
            prior_latents.push(sample_normalized_latent(gen, None, class_idx, &mut rng)?);
        }
    }
    Ok((inst_latents, prior_latents, inst_idx, class_idx))
}

/// One noise-prediction loss term on the tape.
fn noise_loss_term(
    tape: &mut Tape,
    z0: &Tensor,
    token_idx: usize,
    abars: &[f32],
    t_steps: usize,
    vars: &VarMap,
    lora: Option<&LoraVars>,
    rng: &mut Prng,
) -> Result<Var> {
    let t = rng.gen_range(0..t_steps);
    let eps = normal_tensor(z0.shape(), rng);
    let z_t = q_sample(z0, &eps, abars[t]);
    let zv = tape.constant(z_t);
    let pred = denoise_vars(tape, zv, t, token_idx, vars, lora)?;
    let target = tape.constant(eps);
    mse(tape, pred, target)
}

/// DreamBooth-style full fine-tuning: instance reconstruction plus
/// lambda-weighted prior preservation. The base is copied; its weights
/// are untouched.
pub fn finetune_full(
    base: &GeneratorParams,
    instance_images: &[Tensor],
    vae: &VaeParams,
    config: &FinetuneConfig,
) -> Result<GeneratorParams> {
    let (inst_latents, prior_latents, inst_idx, class_idx) =
        prepare_finetune(base, instance_images, vae, config)?;
    let mut gen = base.clone();
    let abars = alpha_bars(&gen.betas);
    let mut opt = ParamOptimizer::new(&gen.params);
    let mut rng = rng_stream(config.seed, 0x6675_6c6c);
    let mut order: Vec<usize> = (0..inst_latents.len()).collect();
    let mut prior_cursor = 0usize;
    let mut step = 0usize;
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let mut tape = Tape::new();
            let vars = VarMap::record(&mut tape, &gen.params, true);
            let inst_loss = noise_loss_term(
                &mut tape,
                &inst_latents[idx],
                inst_idx,
                &abars,
                gen.arch.t_steps,
                &vars,
                None,
                &mut rng,
            )?;
            // with lambda = 0 the prior term is exactly absent
            let loss = if !prior_latents.is_empty() {
                let prior = &prior_latents[prior_cursor % prior_latents.len()];
                prior_cursor += 1;
                let prior_loss = noise_loss_term(
                    &mut tape,
                    prior,
                    class_idx,
                    &abars,
                    gen.arch.t_steps,
                    &vars,
                    None,
                    &mut rng,
                )?;
                let weighted = tape.mul_scalar(prior_loss, config.lambda);
                tape.add(inst_loss, weighted)?
            } else {
                inst_loss
            };
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(DuawError::NonFinite {
                    step,
                    context: "full fine-tune loss".into(),
                });
            }
            let grads = tape.backward(loss)?;
            opt.step(&mut gen.params, &vars, &grads, config.lr)?;
            step += 1;
        }
    }
    Ok(gen)
}

/// LoRA fine-tuning: base weights are bit-identical before and after;
/// only the adapter factors train.
pub fn finetune_lora(
    base: &GeneratorParams,
    instance_images: &[Tensor],
    vae: &VaeParams,
    rank: usize,
    config: &FinetuneConfig,
) -> Result<LoraAdapter> {
    let (inst_latents, prior_latents, inst_idx, class_idx) =
        prepare_finetune(base, instance_images, vae, config)?;
    let mut adapter = LoraAdapter::init(base, rank, config.seed)?;
    let abars = alpha_bars(&base.betas);
    // Adam states for (B, A) per layer, in layer order.
    let mut states: Vec<(crate::adam::AdamState, crate::adam::AdamState)> = adapter
        .layers
        .iter()
        .map(|(_, b, a)| {
            (
                crate::adam::AdamState::new(b.shape()),
                crate::adam::AdamState::new(a.shape()),
            )
        })
        .collect();
    let mut rng = rng_stream(config.seed, 0x6c6f_7261);
    let mut order: Vec<usize> = (0..inst_latents.len()).collect();
    let mut prior_cursor = 0usize;
    let mut step = 0usize;
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let mut tape = Tape::new();
            let vars = VarMap::record(&mut tape, &base.params, false);
            let lora = LoraVars::record(&mut tape, &adapter, true);
            let inst_loss = noise_loss_term(
                &mut tape,
                &inst_latents[idx],
                inst_idx,
                &abars,
                base.arch.t_steps,
                &vars,
                Some(&lora),
                &mut rng,
            )?;
            let loss = if !prior_latents.is_empty() {
                let prior = &prior_latents[prior_cursor % prior_latents.len()];
                prior_cursor += 1;
                let prior_loss = noise_loss_term(
                    &mut tape,
                    prior,
                    class_idx,
                    &abars,
                    base.arch.t_steps,
                    &vars,
                    Some(&lora),
                    &mut rng,
                )?;
                let weighted = tape.mul_scalar(prior_loss, config.lambda);
                tape.add(inst_loss, weighted)?
            } else {
                inst_loss
            };
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(DuawError::NonFinite {
                    step,
                    context: "lora fine-tune loss".into(),
                });
            }
            let grads = tape.backward(loss)?;
            for (i, (name, bv, av)) in lora.vars.iter().enumerate() {
                let (b_slot, a_slot) = {
                    let layer = adapter
                        .layers
                        .iter_mut()
                        .find(|(n, _, _)| n == name)
                        .expect("adapter layer");
                    (&mut layer.1, &mut layer.2)
                };
                if let Some(g) = grads.wrt(*bv) {
                    crate::adam::adam_step(b_slot, g, &mut states[i].0, config.lr)?;
                }
                if let Some(g) = grads.wrt(*av) {
                    crate::adam::adam_step(a_slot, g, &mut states[i].1, config.lr)?;
                }
            }
            step += 1;
        }
    }
    Ok(adapter)
}

// ── perturbation preservation ────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerturbPattern {
    Checkerboard,
    Stripes,
}

/// Cell size of the preservation patterns; coarse enough to survive the
/// VAE's 4x spatial compression.
pub const PATTERN_CELL: usize = 8;

/// Signed pattern field in {-amplitude, +amplitude}, shape (3,res,res).
pub fn pattern_tensor(pattern: PerturbPattern, resolution: usize, amplitude: f32) -> Tensor {
    let mut data = vec![0.0f32; 3 * resolution * resolution];
    for y in 0..resolution {
        for x in 0..resolution {
            let cell = match pattern {
                PerturbPattern::Checkerboard => (y / PATTERN_CELL + x / PATTERN_CELL) % 2,
                PerturbPattern::Stripes => (y / PATTERN_CELL) % 2,
            };
            let v = if cell == 0 { amplitude } else { -amplitude };
            for ch in 0..3 {
                data[ch * resolution * resolution + y * resolution + x] = v;
            }
        }
    }
    Tensor::from_vec(vec![3, resolution, resolution], data).expect("pattern shape")
}

/// Mean normalized cross-correlation between high-pass-filtered images
/// and the pattern field.
pub fn preservation_score(images: &[Tensor], pattern: &Tensor) -> Result<f32> {
    if images.is_empty() {
        return Err(DuawError::InvalidArg("preservation_score: empty set".into()));
    }
    let pnorm: f64 = pattern.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    let mut sum = 0.0f64;
    for img in images {
        let low = gaussian_blur(img, 1.5)?;
        let hp: Vec<f64> = img
            .data()
            .iter()
            .zip(low.data())
            .map(|(a, b)| (a - b) as f64)
            .collect();
        let hnorm: f64 = hp.iter().map(|v| v * v).sum::<f64>().sqrt();
        if hnorm == 0.0 || pnorm == 0.0 {
            continue;
        }
        let dot: f64 = hp
            .iter()
            .zip(pattern.data())
            .map(|(h, &p)| h * p as f64)
            .sum();
        sum += dot / (hnorm * pnorm);
    }
    Ok((sum / images.len() as f64) as f32)
}

/// Fine-tune on pattern-perturbed instances, generate, and measure how
/// strongly the pattern survives into the generations. `amplitude = 0`
/// gives the clean-trained null score.
pub fn perturbation_preservation_check(
    base: &GeneratorParams,
    instances: &[Tensor],
    vae: &VaeParams,
    pattern: PerturbPattern,
    amplitude: f32,
    config: &FinetuneConfig,
) -> Result<f32> {
    if !(0.0..=1.0).contains(&amplitude) {
        return Err(DuawError::InvalidArg(format!(
            "pattern amplitude must be in [0,1], got {}",
            amplitude
        )));
    }
    let resolution = vae.arch().resolution;
    let field = pattern_tensor(pattern, resolution, amplitude);
    let perturbed: Vec<Tensor> = instances
        .iter()
        .map(|x| {
            let data: Vec<f32> = x
                .data()
                .iter()
                .zip(field.data())
                .map(|(a, p)| (a + p).clamp(0.0, 1.0))
                .collect();
            Tensor::from_vec(x.shape().to_vec(), data)
        })
        .collect::<Result<_>>()?;
    let n_gen = 8;
    let images = match config.mode {
        FinetuneMode::Full => {
            let tuned = finetune_full(base, &perturbed, vae, config)?;
            generate(&tuned, None, &config.instance_token, n_gen, vae, config.seed)?
        }
        FinetuneMode::Lora => {
            let adapter = finetune_lora(base, &perturbed, vae, 4, config)?;
            generate(base, Some(&adapter), &config.instance_token, n_gen, vae, config.seed)?
        }
    };
    let unit = pattern_tensor(pattern, resolution, 1.0);
    preservation_score(&images, &unit)
}
