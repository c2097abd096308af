//! Subcommand implementations. Every command loads its upstream
//! artifacts (with a precise diagnostic when one is missing), does the
//! work through duaw-core, writes its artifact plus a log carrying the
//! resolved configuration, and never mutates its inputs.

use std::path::{Path, PathBuf};

use duaw_core::classifier::predict;
use duaw_core::container::{Container, MAGIC_GEN, MAGIC_VAE, MAGIC_WATERMARK};
use duaw_core::experiments::{
    contact_sheet, cross_vae_transfer, default_epsilon_grid, epsilon_ablation, loss_comparison,
    mean_reconstruction_quality, robustness_experiment, run_protection_arms,
    ExperimentContext, ExperimentReport, RobustnessTransform,
};
use duaw_core::generator::{
    finetune_full, finetune_lora, perturbation_preservation_check, pretrain_generator,
    FinetuneMode, GeneratorParams, PerturbPattern,
};
use duaw_core::imgio::{load_png, save_png};
use duaw_core::rng::derive_seed;
use duaw_core::surrogate::{holdout_dataset, load_dataset, training_dataset, write_dataset};
use duaw_core::vae::{train_vae, VaeParams};
use duaw_core::watermark::{apply_watermark, train_duaw, Watermark};
use duaw_core::{DuawError, Result, Tensor};

use crate::config::PipelineConfig;
use crate::workspace::Workspace;

// ── artifact loading ─────────────────────────────────────────────────

fn load_vae(ws: &Workspace, cfg: &PipelineConfig, variant: &str) -> Result<VaeParams> {
    let path = ws.vae_path(variant);
    ws.require(&path, "train-vae")?;
    let vae = VaeParams::from_container(&Container::read_from(&path, Some(MAGIC_VAE))?)?;
    if vae.arch().resolution != cfg.resolution {
        return Err(DuawError::Config(format!(
            "VAE artifact {} has resolution {}, config says {}",
            path.display(),
            vae.arch().resolution,
            cfg.resolution
        )));
    }
    Ok(vae)
}

fn load_generator(ws: &Workspace, variant: &str) -> Result<GeneratorParams> {
    let path = ws.generator_path(variant);
    ws.require(&path, "pretrain-gen")?;
    GeneratorParams::from_container(&Container::read_from(&path, Some(MAGIC_GEN))?)
}

fn load_watermark(ws: &Workspace) -> Result<Watermark> {
    let path = ws.watermark_path();
    ws.require(&path, "train-duaw")?;
    Watermark::from_container(&Container::read_from(&path, Some(MAGIC_WATERMARK))?)
}

fn load_training_images(ws: &Workspace) -> Result<Vec<Tensor>> {
    let dir = ws.train_data_dir();
    ws.require(&dir.join("manifest.tsv"), "gen-data")?;
    Ok(load_dataset(&dir)?.0)
}

/// PNG images of a directory in name order.
pub fn load_instances(dir: &Path) -> Result<Vec<Tensor>> {
    if !dir.is_dir() {
        return Err(DuawError::MissingArtifact(format!(
            "instance directory {} not found",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e == "png"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DuawError::MissingArtifact(format!(
            "no PNG instance images in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_png(p)).collect()
}

fn experiment_context(cfg: &PipelineConfig, mode: FinetuneMode) -> ExperimentContext {
    ExperimentContext {
        finetune: cfg.finetune_config(mode),
        lora_rank: cfg.finetune.rank,
        n_generate: cfg.evaluate.n_generate,
        classifier: cfg.classifier_config(),
        scales: cfg.evaluate.scales,
        seed: cfg.seed,
    }
}

fn mode_label(mode: FinetuneMode) -> &'static str {
    match mode {
        FinetuneMode::Full => "full",
        FinetuneMode::Lora => "lora",
    }
}

fn write_report(ws: &Workspace, name: &str, report: &ExperimentReport) -> Result<()> {
    let json = ws.report_path(name, "json");
    let table = ws.report_path(name, "txt");
    ws.guard_output(&json)?;
    ws.guard_output(&table)?;
    std::fs::write(&json, report.to_json())?;
    std::fs::write(&table, report.to_table())?;
    println!("{}", report.to_table());
    println!("report written to {}", json.display());
    Ok(())
}

// ── subcommands ──────────────────────────────────────────────────────

pub fn gen_data(
    ws: &Workspace,
    cfg: &PipelineConfig,
    out: Option<PathBuf>,
    holdout: bool,
) -> Result<()> {
    let dir = out.unwrap_or_else(|| {
        if holdout {
            ws.holdout_data_dir()
        } else {
            ws.train_data_dir()
        }
    });
    ws.guard_output(&dir.join("manifest.tsv"))?;
    let (images, manifest) = if holdout {
        holdout_dataset(cfg.resolution, cfg.seed)?
    } else {
        training_dataset(cfg.resolution, cfg.seed)?
    };
    std::fs::create_dir_all(&dir)?;
    write_dataset(&images, &manifest, &dir)?;
    let which = if holdout { "holdout" } else { "training" };
    println!("wrote {} {} images to {}", images.len(), which, dir.display());
    ws.write_log(
        "gen-data",
        &cfg.to_toml(),
        &[format!("images={} set={} out={}", images.len(), which, dir.display())],
    )
}

pub fn cmd_train_vae(ws: &Workspace, cfg: &PipelineConfig, variant: &str) -> Result<()> {
    let out = ws.vae_path(variant);
    ws.guard_output(&out)?;
    let images = load_training_images(ws)?;
    let mut train_cfg = cfg.vae_train_config();
    let seed = match variant {
        "base" => cfg.seed,
        "reseeded" => derive_seed(cfg.seed, 0x7265_7365),
        "widened" => {
            train_cfg.arch = train_cfg.arch.widened();
            derive_seed(cfg.seed, 0x7769_6465)
        }
        other => {
            return Err(DuawError::InvalidArg(format!(
                "unknown VAE variant \"{}\" (expected base, reseeded or widened)",
                other
            )))
        }
    };
    let result = train_vae(&images, &train_cfg, seed)?;
    result.params.to_container().write_to(&out)?;
    let first = result.epoch_losses.first().copied().unwrap_or(f32::NAN);
    let last = result.epoch_losses.last().copied().unwrap_or(f32::NAN);
    println!(
        "trained VAE ({}) on {} images: loss {:.5} -> {:.5}; wrote {}",
        variant,
        images.len(),
        first,
        last,
        out.display()
    );
    ws.write_log(
        "train-vae",
        &cfg.to_toml(),
        &[format!(
            "variant={} seed={} images={} first_loss={} last_loss={}",
            variant,
            seed,
            images.len(),
            first,
            last
        )],
    )
}

pub fn cmd_train_duaw(ws: &Workspace, cfg: &PipelineConfig) -> Result<()> {
    let out = ws.watermark_path();
    ws.guard_output(&out)?;
    let images = load_training_images(ws)?;
    let vae = load_vae(ws, cfg, "base")?;
    let duaw_cfg = cfg.duaw_config()?;
    let result = train_duaw(&images, &vae, &duaw_cfg, cfg.seed)?;
    result.watermark.to_container().write_to(&out)?;
    let viz = ws.watermark_viz_path();
    save_png(&result.watermark.visualization(), &viz)?;
    let first = result.epoch_losses.first().copied().unwrap_or(f32::NAN);
    let last = result.epoch_losses.last().copied().unwrap_or(f32::NAN);
    println!(
        "trained watermark (epsilon={}, loss {:.5} -> {:.5}); wrote {}",
        duaw_cfg.epsilon,
        first,
        last,
        out.display()
    );
    ws.write_log(
        "train-duaw",
        &cfg.to_toml(),
        &[format!(
            "seed={} epsilon={} first_loss={} last_loss={}",
            cfg.seed, duaw_cfg.epsilon, first, last
        )],
    )
}

pub fn cmd_pretrain_gen(ws: &Workspace, cfg: &PipelineConfig, variant: &str) -> Result<()> {
    let out = ws.generator_path(variant);
    ws.guard_output(&out)?;
    let dir = ws.train_data_dir();
    ws.require(&dir.join("manifest.tsv"), "gen-data")?;
    let (images, manifest) = load_dataset(&dir)?;
    let pairs: Vec<(Tensor, String)> = images
        .into_iter()
        .zip(&manifest.entries)
        .map(|(img, e)| (img, e.style_id.clone()))
        .collect();
    let vae = load_vae(ws, cfg, variant)?;
    let seed = derive_seed(cfg.seed, match variant {
        "base" => 0,
        "reseeded" => 0x7265_7365,
        "widened" => 0x7769_6465,
        other => {
            return Err(DuawError::InvalidArg(format!(
                "unknown generator variant \"{}\"",
                other
            )))
        }
    });
    let result = pretrain_generator(&pairs, &vae, &cfg.pretrain_config(), seed)?;
    result.params.to_container().write_to(&out)?;
    let first = result.epoch_losses.first().copied().unwrap_or(f32::NAN);
    let last = result.epoch_losses.last().copied().unwrap_or(f32::NAN);
    println!(
        "pretrained generator ({}) on {} pairs: loss {:.5} -> {:.5}; wrote {}",
        variant,
        pairs.len(),
        first,
        last,
        out.display()
    );
    ws.write_log(
        "pretrain-gen",
        &cfg.to_toml(),
        &[format!(
            "variant={} seed={} pairs={} first_loss={} last_loss={}",
            variant,
            seed,
            pairs.len(),
            first,
            last
        )],
    )
}

pub fn cmd_customize(
    ws: &Workspace,
    cfg: &PipelineConfig,
    mode: FinetuneMode,
    instances_dir: &Path,
    watermarked: bool,
) -> Result<()> {
    let arm = if watermarked { "wm" } else { "clean" };
    let out = ws.custom_path(mode_label(mode), arm);
    ws.guard_output(&out)?;
    let vae = load_vae(ws, cfg, "base")?;
    let base = load_generator(ws, "base")?;
    let mut instances = load_instances(instances_dir)?;
    if watermarked {
        let wm = load_watermark(ws)?;
        instances = instances
            .iter()
            .map(|x| apply_watermark(x, &wm))
            .collect::<Result<_>>()?;
    }
    let ft = cfg.finetune_config(mode);
    match mode {
        FinetuneMode::Full => {
            let tuned = finetune_full(&base, &instances, &vae, &ft)?;
            tuned.to_container().write_to(&out)?;
        }
        FinetuneMode::Lora => {
            let adapter = finetune_lora(&base, &instances, &vae, cfg.finetune.rank, &ft)?;
            adapter.to_container().write_to(&out)?;
        }
    }
    println!(
        "customized generator (mode={}, arm={}, {} instances); wrote {}",
        mode_label(mode),
        arm,
        instances.len(),
        out.display()
    );
    ws.write_log(
        "customize",
        &cfg.to_toml(),
        &[format!(
            "mode={} arm={} instances={} rank={}",
            mode_label(mode),
            arm,
            instances.len(),
            cfg.finetune.rank
        )],
    )
}

pub fn cmd_evaluate(
    ws: &Workspace,
    cfg: &PipelineConfig,
    mode: FinetuneMode,
    instances_dir: &Path,
) -> Result<()> {
    let vae = load_vae(ws, cfg, "base")?;
    let base = load_generator(ws, "base")?;
    let wm = load_watermark(ws)?;
    let instances = load_instances(instances_dir)?;
    let ctx = experiment_context(cfg, mode);
    let arms = run_protection_arms(&base, &instances, &wm, &vae, &ctx)?;

    let clean_quality =
        mean_reconstruction_quality(&instances, &vae, None, ctx.scales, ctx.seed)?;
    let wm_quality =
        mean_reconstruction_quality(&instances, &vae, Some(&wm), ctx.scales, ctx.seed)?;

    let name = format!("evaluate-{}", mode_label(mode));
    let mut report = ExperimentReport::new(
        name.clone(),
        duaw_core::experiments::Environment::new(cfg.seed, cfg.resolution),
    );
    report.environment.notes.push(("config".into(), cfg.to_toml()));
    report.push_row(
        mode_label(mode),
        vec![
            ("sr_wm".into(), arms.sr_wm),
            ("sr_clean".into(), arms.sr_clean),
            ("msssim_clean".into(), clean_quality),
            ("msssim_watermarked".into(), wm_quality),
            ("degradation".into(), clean_quality - wm_quality),
            ("classifier_accuracy".into(), arms.classifier.validation.accuracy),
            (
                "mean_p_wm".into(),
                mean_prediction(&arms.classifier, &arms.wm_outputs)?,
            ),
        ],
    );

    let cols = (ctx.n_generate as f64).sqrt().ceil() as usize;
    for (label, images) in [("clean", &arms.clean_outputs), ("wm", &arms.wm_outputs)] {
        let sheet = contact_sheet(images, cols.max(1))?;
        let path = ws.report_path(&format!("{}-contact-{}", name, label), "png");
        ws.guard_output(&path)?;
        save_png(&sheet, &path)?;
    }
    write_report(ws, &name, &report)?;
    ws.write_log(
        "evaluate",
        &cfg.to_toml(),
        &[format!(
            "mode={} sr_wm={} sr_clean={}",
            mode_label(mode),
            arms.sr_wm,
            arms.sr_clean
        )],
    )
}

fn mean_prediction(
    clf: &duaw_core::classifier::ClassifierParams,
    images: &[Tensor],
) -> Result<f32> {
    let mut sum = 0.0f64;
    for img in images {
        sum += predict(clf, img)? as f64;
    }
    Ok((sum / images.len().max(1) as f64) as f32)
}

pub fn cmd_robustness(
    ws: &Workspace,
    cfg: &PipelineConfig,
    mode: FinetuneMode,
    instances_dir: &Path,
    noise: f32,
    blur: f32,
    jpeg: u32,
) -> Result<()> {
    let vae = load_vae(ws, cfg, "base")?;
    let base = load_generator(ws, "base")?;
    let wm = load_watermark(ws)?;
    let instances = load_instances(instances_dir)?;
    let ctx = experiment_context(cfg, mode);
    let grid = vec![
        RobustnessTransform::Identity,
        RobustnessTransform::Noise { amplitude: noise },
        RobustnessTransform::Blur { sigma: blur },
        RobustnessTransform::Jpeg { quality: jpeg },
    ];
    let mut report = robustness_experiment(&wm, &vae, &base, &instances, &grid, &ctx)?;
    report.environment.notes.push(("config".into(), cfg.to_toml()));
    write_report(ws, "robustness", &report)?;
    ws.write_log("robustness", &cfg.to_toml(), &[format!("mode={}", mode_label(mode))])
}

pub fn cmd_ablate_eps(
    ws: &Workspace,
    cfg: &PipelineConfig,
    mode: FinetuneMode,
    instances_dir: &Path,
    grid: Option<Vec<f32>>,
) -> Result<()> {
    let vae = load_vae(ws, cfg, "base")?;
    let base = load_generator(ws, "base")?;
    let dataset = load_training_images(ws)?;
    let instances = load_instances(instances_dir)?;
    let ctx = experiment_context(cfg, mode);
    let eps_grid = grid.unwrap_or_else(default_epsilon_grid);
    let duaw_cfg = cfg.duaw_config()?;
    let mut report =
        epsilon_ablation(&eps_grid, &dataset, &vae, &base, &instances, &duaw_cfg, &ctx)?;
    report.environment.notes.push(("config".into(), cfg.to_toml()));
    write_report(ws, "ablate-eps", &report)?;
    ws.write_log(
        "ablate-eps",
        &cfg.to_toml(),
        &[format!("mode={} grid={:?}", mode_label(mode), eps_grid)],
    )
}

pub fn cmd_compare_loss(
    ws: &Workspace,
    cfg: &PipelineConfig,
    mode: FinetuneMode,
    instances_dir: &Path,
) -> Result<()> {
    let vae = load_vae(ws, cfg, "base")?;
    let base = load_generator(ws, "base")?;
    let dataset = load_training_images(ws)?;
    let instances = load_instances(instances_dir)?;
    let ctx = experiment_context(cfg, mode);
    let duaw_cfg = cfg.duaw_config()?;
    let mut report = loss_comparison(&dataset, &vae, &base, &instances, &duaw_cfg, &ctx)?;
    report.environment.notes.push(("config".into(), cfg.to_toml()));
    write_report(ws, "compare-loss", &report)?;
    ws.write_log("compare-loss", &cfg.to_toml(), &[format!("mode={}", mode_label(mode))])
}

pub fn cmd_transfer_vae(
    ws: &Workspace,
    cfg: &PipelineConfig,
    mode: FinetuneMode,
    instances_dir: &Path,
) -> Result<()> {
    let wm = load_watermark(ws)?;
    let dataset = load_training_images(ws)?;
    let instances = load_instances(instances_dir)?;

    // train any missing variant VAE/generator pairs, then compare
    let mut variants = Vec::new();
    for variant in ["base", "reseeded", "widened"] {
        if !ws.vae_path(variant).exists() {
            println!("variant {}: training VAE", variant);
            cmd_train_vae(ws, cfg, variant)?;
        }
        if !ws.generator_path(variant).exists() {
            println!("variant {}: pretraining generator", variant);
            cmd_pretrain_gen(ws, cfg, variant)?;
        }
        let vae = load_vae_any_arch(ws, variant)?;
        let gen = load_generator(ws, variant)?;
        variants.push((variant.to_string(), vae, gen));
    }
    let ctx = experiment_context(cfg, mode);
    let mut report = cross_vae_transfer(&wm, &variants, &dataset, &instances, &ctx)?;
    report.environment.notes.push(("config".into(), cfg.to_toml()));
    write_report(ws, "transfer-vae", &report)?;
    ws.write_log("transfer-vae", &cfg.to_toml(), &[format!("mode={}", mode_label(mode))])
}

/// Variant VAEs may have widened channel plans; only the resolution is
/// pinned by the pipeline config.
fn load_vae_any_arch(ws: &Workspace, variant: &str) -> Result<VaeParams> {
    let path = ws.vae_path(variant);
    ws.require(&path, "train-vae")?;
    VaeParams::from_container(&Container::read_from(&path, Some(MAGIC_VAE))?)
}

pub fn cmd_preserve_check(
    ws: &Workspace,
    cfg: &PipelineConfig,
    instances_dir: &Path,
    pattern: PerturbPattern,
    amplitude: f32,
) -> Result<()> {
    let vae = load_vae(ws, cfg, "base")?;
    let base = load_generator(ws, "base")?;
    let instances = load_instances(instances_dir)?;
    let mut report = ExperimentReport::new(
        "preserve-check",
        duaw_core::experiments::Environment::new(cfg.seed, cfg.resolution),
    );
    report.environment.notes.push(("config".into(), cfg.to_toml()));
    for mode in [FinetuneMode::Full, FinetuneMode::Lora] {
        let ft = cfg.finetune_config(mode);
        let score =
            perturbation_preservation_check(&base, &instances, &vae, pattern, amplitude, &ft)?;
        let null =
            perturbation_preservation_check(&base, &instances, &vae, pattern, 0.0, &ft)?;
        let ratio = if null.abs() > 0.0 { score / null.abs() } else { f32::INFINITY };
        report.push_row(
            mode_label(mode),
            vec![
                ("amplitude".into(), amplitude),
                ("score".into(), score),
                ("null_score".into(), null),
                ("ratio_vs_null".into(), ratio),
            ],
        );
    }
    write_report(ws, "preserve-check", &report)?;
    ws.write_log(
        "preserve-check",
        &cfg.to_toml(),
        &[format!("pattern={:?} amplitude={}", pattern, amplitude)],
    )
}

pub fn cmd_apply(
    ws: &Workspace,
    cfg: &PipelineConfig,
    watermark: Option<PathBuf>,
    input: &Path,
    out: &Path,
    resize: bool,
) -> Result<()> {
    let wm = match watermark {
        Some(path) => {
            ws.require(&path, "train-duaw")?;
            Watermark::from_container(&Container::read_from(&path, Some(MAGIC_WATERMARK))?)?
        }
        None => load_watermark(ws)?,
    };
    let images = load_instances(input)?;
    for img in &images {
        let res = img.shape()[1];
        if (res != wm.resolution() || img.shape()[2] != wm.resolution()) && !resize {
            return Err(DuawError::InvalidArg(format!(
                "image resolution {}x{} does not match watermark resolution {}; pass --resize to \
                 bilinearly rescale the watermark",
                img.shape()[1],
                img.shape()[2],
                wm.resolution()
            )));
        }
    }
    std::fs::create_dir_all(out)?;
    let mut names: Vec<PathBuf> = std::fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e == "png"))
        .collect();
    names.sort();
    for (img, src) in images.iter().zip(&names) {
        let dst = out.join(src.file_name().expect("png file name"));
        ws.guard_output(&dst)?;
        let watermarked = apply_watermark(img, &wm)?;
        save_png(&watermarked, &dst)?;
    }
    println!("wrote {} watermarked images to {}", images.len(), out.display());
    ws.write_log(
        "apply",
        &cfg.to_toml(),
        &[format!("images={} out={} resize={}", images.len(), out.display(), resize)],
    )
}
