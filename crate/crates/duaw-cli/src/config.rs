//! Pipeline configuration: a TOML file with one section per module,
//! every field optional (library defaults apply), CLI flags overriding
//! file values. Validation collects every violated constraint at once.

use std::path::Path;

use duaw_core::classifier::ClassifierConfig;
use duaw_core::generator::{FinetuneConfig, FinetuneMode, PretrainConfig};
use duaw_core::vae::{VaeArch, VaeTrainConfig};
use duaw_core::watermark::{DuawConfig, DuawLoss};
use duaw_core::{DuawError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub resolution: usize,
    pub vae: VaeSection,
    pub duaw: DuawSection,
    pub generator: GeneratorSection,
    pub finetune: FinetuneSection,
    pub classifier: ClassifierSection,
    pub evaluate: EvaluateSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeSection {
    pub channels: [usize; 3],
    pub latent_channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub kl_weight: f32,
}

impl Default for VaeSection {
    fn default() -> Self {
        let arch = VaeArch::default();
        let cfg = VaeTrainConfig::default();
        VaeSection {
            channels: arch.channels,
            latent_channels: arch.latent_channels,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            kl_weight: cfg.kl_weight,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuawSection {
    pub epsilon: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// "ms-ssim" or "mse".
    pub loss: String,
    pub scales: usize,
}

impl Default for DuawSection {
    fn default() -> Self {
        let cfg = DuawConfig::default();
        DuawSection {
            epsilon: cfg.epsilon,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            loss: "ms-ssim".into(),
            scales: cfg.scales,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub epochs: usize,
    pub lr: f32,
    pub hidden: usize,
    pub embed_dim: usize,
    pub t_steps: usize,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let cfg = PretrainConfig::default();
        GeneratorSection {
            epochs: cfg.epochs,
            lr: cfg.lr,
            hidden: cfg.hidden,
            embed_dim: cfg.embed_dim,
            t_steps: cfg.t_steps,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub full_epochs: usize,
    pub lora_epochs: usize,
    pub full_lr: f32,
    pub lora_lr: f32,
    pub lambda: f32,
    pub num_prior: usize,
    pub rank: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let full = FinetuneConfig::full();
        let lora = FinetuneConfig::lora();
        FinetuneSection {
            full_epochs: full.epochs,
            lora_epochs: lora.epochs,
            full_lr: full.lr,
            lora_lr: lora.lr,
            lambda: full.lambda,
            num_prior: full.num_prior,
            rank: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let cfg = ClassifierConfig::default();
        ClassifierSection {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Generated images per customization arm.
    pub n_generate: usize,
    /// MS-SSIM scale count for reconstruction-quality metrics.
    pub scales: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            n_generate: 16,
            scales: 3,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            resolution: VaeArch::default().resolution,
            vae: VaeSection::default(),
            duaw: DuawSection::default(),
            generator: GeneratorSection::default(),
            finetune: FinetuneSection::default(),
            classifier: ClassifierSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            DuawError::Config(format!("cannot read config {}: {}", path.display(), e))
        })?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| DuawError::Config(format!("{}: {}", path.display(), e)))?;
        Ok(cfg)
    }

    /// Every violated constraint at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.resolution < 16 || self.resolution % 4 != 0 {
            problems.push(format!(
                "resolution must be a multiple of 4 and >= 16, got {}",
                self.resolution
            ));
        }
        if self.vae.channels.iter().any(|&c| c == 0) || self.vae.latent_channels == 0 {
            problems.push("vae channel counts must be positive".into());
        }
        if self.vae.epochs == 0 || self.vae.batch_size == 0 {
            problems.push("vae.epochs and vae.batch_size must be >= 1".into());
        }
        if !(self.vae.lr > 0.0) {
            problems.push(format!("vae.lr must be positive, got {}", self.vae.lr));
        }
        if !(self.duaw.epsilon > 0.0 && self.duaw.epsilon < 1.0) {
            problems.push(format!(
                "duaw.epsilon must be in (0, 1), got {}",
                self.duaw.epsilon
            ));
        }
        if self.duaw.epochs == 0 || self.duaw.batch_size == 0 {
            problems.push("duaw.epochs and duaw.batch_size must be >= 1".into());
        }
        if !(self.duaw.lr > 0.0) {
            problems.push(format!("duaw.lr must be positive, got {}", self.duaw.lr));
        }
        if parse_loss(&self.duaw.loss).is_none() {
            problems.push(format!(
                "duaw.loss must be \"ms-ssim\" or \"mse\", got \"{}\"",
                self.duaw.loss
            ));
        }
        if !(1..=5).contains(&self.duaw.scales) {
            problems.push(format!("duaw.scales must be in 1..=5, got {}", self.duaw.scales));
        }
        if !(1..=5).contains(&self.evaluate.scales) {
            problems.push(format!(
                "evaluate.scales must be in 1..=5, got {}",
                self.evaluate.scales
            ));
        }
        if self.generator.epochs == 0 || self.generator.t_steps == 0 {
            problems.push("generator.epochs and generator.t_steps must be >= 1".into());
        }
        if self.generator.hidden == 0 || self.generator.embed_dim == 0 {
            problems.push("generator.hidden and generator.embed_dim must be >= 1".into());
        }
        if !(self.generator.lr > 0.0) {
            problems.push(format!("generator.lr must be positive, got {}", self.generator.lr));
        }
        if self.finetune.full_epochs == 0 || self.finetune.lora_epochs == 0 {
            problems.push("finetune epochs must be >= 1".into());
        }
        if !(self.finetune.full_lr > 0.0 && self.finetune.lora_lr > 0.0) {
            problems.push("finetune learning rates must be positive".into());
        }
        if self.finetune.lambda < 0.0 {
            problems.push(format!(
                "finetune.lambda must be >= 0, got {}",
                self.finetune.lambda
            ));
        }
        if self.finetune.rank == 0 {
            problems.push("finetune.rank must be >= 1".into());
        }
        if self.classifier.epochs == 0 || self.classifier.batch_size == 0 {
            problems.push("classifier.epochs and classifier.batch_size must be >= 1".into());
        }
        if !(self.classifier.lr > 0.0) {
            problems.push(format!(
                "classifier.lr must be positive, got {}",
                self.classifier.lr
            ));
        }
        if self.evaluate.n_generate == 0 {
            problems.push("evaluate.n_generate must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DuawError::Config(format!(
                "{} constraint(s) violated:\n  - {}",
                problems.len(),
                problems.join("\n  - ")
            )))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    // ── conversions to module configs ────────────────────────────────

    pub fn vae_arch(&self) -> VaeArch {
        VaeArch {
            resolution: self.resolution,
            channels: self.vae.channels,
            latent_channels: self.vae.latent_channels,
        }
    }

    pub fn vae_train_config(&self) -> VaeTrainConfig {
        VaeTrainConfig {
            arch: self.vae_arch(),
            epochs: self.vae.epochs,
            batch_size: self.vae.batch_size,
            lr: self.vae.lr,
            kl_weight: self.vae.kl_weight,
        }
    }

    pub fn duaw_config(&self) -> Result<DuawConfig> {
        let loss = parse_loss(&self.duaw.loss).ok_or_else(|| {
            DuawError::Config(format!("unknown duaw loss \"{}\"", self.duaw.loss))
        })?;
        Ok(DuawConfig {
            epsilon: self.duaw.epsilon,
            epochs: self.duaw.epochs,
            batch_size: self.duaw.batch_size,
            lr: self.duaw.lr,
            loss,
            scales: self.duaw.scales,
        })
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.generator.epochs,
            lr: self.generator.lr,
            hidden: self.generator.hidden,
            embed_dim: self.generator.embed_dim,
            t_steps: self.generator.t_steps,
        }
    }

    pub fn finetune_config(&self, mode: FinetuneMode) -> FinetuneConfig {
        let base = match mode {
            FinetuneMode::Full => FinetuneConfig {
                epochs: self.finetune.full_epochs,
                lr: self.finetune.full_lr,
                ..FinetuneConfig::full()
            },
            FinetuneMode::Lora => FinetuneConfig {
                epochs: self.finetune.lora_epochs,
                lr: self.finetune.lora_lr,
                ..FinetuneConfig::lora()
            },
        };
        FinetuneConfig {
            lambda: self.finetune.lambda,
            num_prior: self.finetune.num_prior,
            seed: self.seed,
            ..base
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            epochs: self.classifier.epochs,
            batch_size: self.classifier.batch_size,
            lr: self.classifier.lr,
        }
    }
}

pub fn parse_loss(label: &str) -> Option<DuawLoss> {
    match label {
        "ms-ssim" => Some(DuawLoss::MsSsim),
        "mse" => Some(DuawLoss::NegMse),
        _ => None,
    }
}
