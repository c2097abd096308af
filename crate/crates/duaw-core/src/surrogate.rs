//! Data-free training-set synthesis: a deterministic procedural
//! generator of content x style images. Contents are parametric scene
//! recipes (background gradient plus a few soft-edged primitives),
//! styles are palette + texture + contrast transforms applied as a pure
//! function of the rendered image.

use std::f32::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{DuawError, Result};
use crate::imgio::save_png;
use crate::metrics::mse_value;
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;

pub const GENERATOR_VERSION: &str = "v1";

/// Internal seed fixing the default zoos (bump together with the version).
const ZOO_SEED: u64 = 0xd0a7_0001;

#[derive(Clone, Debug)]
pub enum Primitive {
    Circle { cx: f32, cy: f32, r: f32, color: [f32; 3] },
    Rect { cx: f32, cy: f32, w: f32, h: f32, color: [f32; 3] },
    Triangle { cx: f32, cy: f32, size: f32, color: [f32; 3] },
    Stripe { y: f32, thickness: f32, color: [f32; 3] },
    Ellipse { cx: f32, cy: f32, rx: f32, ry: f32, color: [f32; 3] },
    // holdout families
    Ring { cx: f32, cy: f32, r: f32, width: f32, color: [f32; 3] },
    Cross { cx: f32, cy: f32, size: f32, thickness: f32, color: [f32; 3] },
    Diamond { cx: f32, cy: f32, size: f32, color: [f32; 3] },
}

#[derive(Clone, Debug)]
pub struct ContentSpec {
    pub id: String,
    pub bg_top: [f32; 3],
    pub bg_bottom: [f32; 3],
    /// Gradient direction in radians (0 = vertical).
    pub bg_angle: f32,
    pub primitives: Vec<Primitive>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    Flat,
    Brushstroke,
    Halftone,
    CrossHatch,
    Posterize,
}

#[derive(Clone, Debug)]
pub struct StyleSpec {
    pub id: String,
    pub palette: Vec<[f32; 3]>,
    pub texture: Texture,
    /// Gamma applied before the contrast gain around mid-gray.
    pub gamma: f32,
    pub gain: f32,
    /// Seed for texture noise; part of the style so styling stays a pure
    /// function of (image, StyleSpec).
    pub texture_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub content_id: String,
    pub style_id: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub resolution: usize,
    pub version: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("#duaw-manifest {} res={}\n", self.version, self.resolution);
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.path, e.content_id, e.style_id, e.seed
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| DuawError::InvalidArg("empty manifest".into()))?;
        let rest = header
            .strip_prefix("#duaw-manifest ")
            .ok_or_else(|| DuawError::InvalidArg("bad manifest header".into()))?;
        let mut parts = rest.split_whitespace();
        let version = parts
            .next()
            .ok_or_else(|| DuawError::InvalidArg("manifest missing version".into()))?
            .to_string();
        let resolution: usize = parts
            .next()
            .and_then(|p| p.strip_prefix("res="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| DuawError::InvalidArg("manifest missing res=".into()))?;
        let mut entries = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(DuawError::InvalidArg(format!("bad manifest line: {}", line)));
            }
            entries.push(ManifestEntry {
                path: cols[0].to_string(),
                content_id: cols[1].to_string(),
                style_id: cols[2].to_string(),
                seed: cols[3]
                    .parse()
                    .map_err(|_| DuawError::InvalidArg(format!("bad seed in: {}", line)))?,
            });
        }
        Ok(DatasetManifest {
            resolution,
            version,
            entries,
        })
    }
}

// ── zoos ─────────────────────────────────────────────────────────────

fn color(rng: &mut crate::rng::Prng) -> [f32; 3] {
    [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]
}

fn training_content(idx: usize, id: &str) -> ContentSpec {
    let mut rng = rng_from(derive_seed(ZOO_SEED, idx as u64));
    let n = 2 + (idx % 4); // 2..=5 primitives
    let mut primitives = Vec::new();
    for k in 0..n {
        let c = color(&mut rng);
        let p = match (idx + k) % 5 {
            0 => Primitive::Circle {
                cx: rng.gen_range(0.2..0.8),
                cy: rng.gen_range(0.2..0.8),
                r: rng.gen_range(0.1..0.3),
                color: c,
            },
            1 => Primitive::Rect {
                cx: rng.gen_range(0.2..0.8),
                cy: rng.gen_range(0.2..0.8),
                w: rng.gen_range(0.15..0.45),
                h: rng.gen_range(0.1..0.35),
                color: c,
            },
            2 => Primitive::Triangle {
                cx: rng.gen_range(0.25..0.75),
                cy: rng.gen_range(0.3..0.8),
                size: rng.gen_range(0.15..0.35),
                color: c,
            },
            3 => Primitive::Stripe {
                y: rng.gen_range(0.1..0.9),
                thickness: rng.gen_range(0.04..0.14),
                color: c,
            },
            _ => Primitive::Ellipse {
                cx: rng.gen_range(0.2..0.8),
                cy: rng.gen_range(0.2..0.8),
                rx: rng.gen_range(0.12..0.3),
                ry: rng.gen_range(0.07..0.2),
                color: c,
            },
        };
        primitives.push(p);
    }
    ContentSpec {
        id: id.to_string(),
        bg_top: color(&mut rng),
        bg_bottom: color(&mut rng),
        bg_angle: rng.gen_range(-0.5..0.5),
        primitives,
    }
}

fn holdout_content(idx: usize, id: &str) -> ContentSpec {
    let mut rng = rng_from(derive_seed(ZOO_SEED ^ 0x601d, idx as u64));
    let n = 2 + (idx % 3);
    let mut primitives = Vec::new();
    for k in 0..n {
        let c = color(&mut rng);
        let p = match (idx + k) % 3 {
            0 => Primitive::Ring {
                cx: rng.gen_range(0.25..0.75),
                cy: rng.gen_range(0.25..0.75),
                r: rng.gen_range(0.12..0.3),
                width: rng.gen_range(0.03..0.09),
                color: c,
            },
            1 => Primitive::Cross {
                cx: rng.gen_range(0.25..0.75),
                cy: rng.gen_range(0.25..0.75),
                size: rng.gen_range(0.15..0.35),
                thickness: rng.gen_range(0.04..0.1),
                color: c,
            },
            _ => Primitive::Diamond {
                cx: rng.gen_range(0.25..0.75),
                cy: rng.gen_range(0.25..0.75),
                size: rng.gen_range(0.12..0.3),
                color: c,
            },
        };
        primitives.push(p);
    }
    ContentSpec {
        id: id.to_string(),
        bg_top: color(&mut rng),
        bg_bottom: color(&mut rng),
        bg_angle: rng.gen_range(-0.5..0.5),
        primitives,
    }
}

/// Ten fixed content recipes (versioned with [`GENERATOR_VERSION`]).
pub fn default_content_zoo() -> Vec<ContentSpec> {
    const IDS: [&str; 10] = [
        "forest-brook",
        "dune-lion",
        "dim-room",
        "beach-sunset",
        "fish-tank",
        "floating-isles",
        "woodland-cabin",
        "church-wedding",
        "craft-room",
        "garden-fountain",
    ];
    IDS.iter()
        .enumerate()
        .map(|(i, id)| training_content(i, id))
        .collect()
}

fn style(idx: usize, id: &str, texture: Texture, gamma: f32, gain: f32) -> StyleSpec {
    let mut rng = rng_from(derive_seed(ZOO_SEED ^ 0x57a1e, idx as u64));
    let n = 3 + idx % 3;
    let palette = (0..n).map(|_| color(&mut rng)).collect();
    StyleSpec {
        id: id.to_string(),
        palette,
        texture,
        gamma,
        gain,
        texture_seed: derive_seed(ZOO_SEED ^ 0x7e47, idx as u64),
    }
}

/// Ten fixed style recipes (palette names are homage only).
pub fn default_style_zoo() -> Vec<StyleSpec> {
    vec![
        style(0, "baroque", Texture::Flat, 1.4, 1.3),
        style(1, "impressionism", Texture::Brushstroke, 1.0, 1.0),
        style(2, "surrealism", Texture::Posterize, 0.8, 1.1),
        style(3, "art-nouveau", Texture::CrossHatch, 1.0, 1.0),
        style(4, "post-impressionism", Texture::Brushstroke, 0.9, 1.2),
        style(5, "expressionism", Texture::Posterize, 1.1, 1.4),
        style(6, "realism", Texture::Flat, 1.0, 1.0),
        style(7, "renaissance", Texture::Halftone, 1.3, 1.1),
        style(8, "romanticism", Texture::Flat, 1.2, 0.9),
        style(9, "ukiyo-e", Texture::Posterize, 1.0, 1.25),
    ]
}

/// Six holdout contents (ring/cross/diamond families, disjoint from the
/// training families).
pub fn holdout_content_zoo() -> Vec<ContentSpec> {
    const IDS: [&str; 6] = [
        "orbit-rings",
        "signal-cross",
        "gem-field",
        "twin-halos",
        "mark-lattice",
        "kite-sky",
    ];
    IDS.iter()
        .enumerate()
        .map(|(i, id)| holdout_content(i + 100, id))
        .collect()
}

/// Five holdout styles with fresh palettes and texture seeds.
pub fn holdout_style_zoo() -> Vec<StyleSpec> {
    vec![
        style(100, "fauvism", Texture::Brushstroke, 1.1, 1.2),
        style(101, "cubism", Texture::Posterize, 1.0, 1.1),
        style(102, "minimalism", Texture::Flat, 1.0, 0.95),
        style(103, "pointillism", Texture::Halftone, 0.95, 1.05),
        style(104, "ink-wash", Texture::CrossHatch, 1.25, 1.0),
    ]
}

// ── rendering ────────────────────────────────────────────────────────

fn smoothstep(edge0: f32, edge1: f32, x: f32) -> f32 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Soft coverage in [0,1] for a primitive at normalized point (x, y).
fn coverage(p: &Primitive, x: f32, y: f32, soft: f32) -> f32 {
    match *p {
        Primitive::Circle { cx, cy, r, .. } => {
            let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            1.0 - smoothstep(r - soft, r + soft, d)
        }
        Primitive::Rect { cx, cy, w, h, .. } => {
            let dx = (x - cx).abs() - w / 2.0;
            let dy = (y - cy).abs() - h / 2.0;
            let d = dx.max(dy);
            1.0 - smoothstep(-soft, soft, d)
        }
        Primitive::Triangle { cx, cy, size, .. } => {
            // upward triangle: apex at cy - size/2, base at cy + size/2
            let lx = (x - cx) / size;
            let ly = (y - cy) / size;
            let d = (ly - 0.5).max(lx.abs() - (ly + 0.5) * 0.6) * size;
            1.0 - smoothstep(-soft, soft, d)
        }
        Primitive::Stripe { y: sy, thickness, .. } => {
            let d = (y - sy).abs() - thickness / 2.0;
            1.0 - smoothstep(-soft, soft, d)
        }
        Primitive::Ellipse { cx, cy, rx, ry, .. } => {
            let d = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt() - 1.0;
            1.0 - smoothstep(-soft / rx.min(ry), soft / rx.min(ry), d)
        }
        Primitive::Ring { cx, cy, r, width, .. } => {
            let d = (((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - r).abs() - width / 2.0;
            1.0 - smoothstep(-soft, soft, d)
        }
        Primitive::Cross { cx, cy, size, thickness, .. } => {
            let dx = (x - cx).abs();
            let dy = (y - cy).abs();
            let arm_h = (dy - thickness / 2.0).max(dx - size / 2.0);
            let arm_v = (dx - thickness / 2.0).max(dy - size / 2.0);
            let d = arm_h.min(arm_v);
            1.0 - smoothstep(-soft, soft, d)
        }
        Primitive::Diamond { cx, cy, size, .. } => {
            let d = (x - cx).abs() + (y - cy).abs() - size / 2.0;
            1.0 - smoothstep(-soft, soft, d)
        }
    }
}

fn primitive_color(p: &Primitive) -> [f32; 3] {
    match *p {
        Primitive::Circle { color, .. }
        | Primitive::Rect { color, .. }
        | Primitive::Triangle { color, .. }
        | Primitive::Stripe { color, .. }
        | Primitive::Ellipse { color, .. }
        | Primitive::Ring { color, .. }
        | Primitive::Cross { color, .. }
        | Primitive::Diamond { color, .. } => color,
    }
}

fn render_content(spec: &ContentSpec, resolution: usize, dither_seed: u64) -> Tensor {
    let n = resolution;
    let soft = 1.5 / n as f32;
    let mut data = vec![0.0f32; 3 * n * n];
    let (sin_a, cos_a) = spec.bg_angle.sin_cos();
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = ((x as f32 + 0.5) / n as f32, (y as f32 + 0.5) / n as f32);
            // background gradient along the tilted axis
            let t = ((fy - 0.5) * cos_a + (fx - 0.5) * sin_a + 0.5).clamp(0.0, 1.0);
            let mut px = [
                spec.bg_top[0] * (1.0 - t) + spec.bg_bottom[0] * t,
                spec.bg_top[1] * (1.0 - t) + spec.bg_bottom[1] * t,
                spec.bg_top[2] * (1.0 - t) + spec.bg_bottom[2] * t,
            ];
            for p in &spec.primitives {
                let a = coverage(p, fx, fy, soft);
                if a > 0.0 {
                    let c = primitive_color(p);
                    for ch in 0..3 {
                        px[ch] = px[ch] * (1.0 - a) + c[ch] * a;
                    }
                }
            }
            for ch in 0..3 {
                data[ch * n * n + y * n + x] = px[ch];
            }
        }
    }
    // tiny deterministic dither so no two renders are bit-equal
    let mut rng = rng_from(dither_seed);
    for v in data.iter_mut() {
        *v = (*v + rng.gen_range(-0.004..0.004)).clamp(0.0, 1.0);
    }
    Tensor::from_vec(vec![3, n, n], data).expect("render shape")
}

/// Hash-based smooth value noise in [-1,1].
fn value_noise(seed: u64, x: f32, y: f32) -> f32 {
    let lattice = |ix: i64, iy: i64| -> f32 {
        let h = derive_seed(seed, (ix as u64).wrapping_mul(0x9e3779b1) ^ (iy as u64).wrapping_mul(0x85ebca77));
        (h as f64 / u64::MAX as f64) as f32 * 2.0 - 1.0
    };
    let (x0, y0) = (x.floor() as i64, y.floor() as i64);
    let (tx, ty) = (x - x0 as f32, y - y0 as f32);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let top = lattice(x0, y0) * (1.0 - sx) + lattice(x0 + 1, y0) * sx;
    let bot = lattice(x0, y0 + 1) * (1.0 - sx) + lattice(x0 + 1, y0 + 1) * sx;
    top * (1.0 - sy) + bot * sy
}

fn luminance(px: &[f32; 3]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

/// Apply a style to a rendered image; pure in (image, style).
pub fn apply_style(img: &Tensor, style: &StyleSpec) -> Tensor {
    let shape = img.shape();
    let (n_h, n_w) = (shape[1], shape[2]);
    let src = img.data();
    let mut out = vec![0.0f32; src.len()];
    for y in 0..n_h {
        for x in 0..n_w {
            let idx = y * n_w + x;
            let mut px = [
                src[idx],
                src[n_h * n_w + idx],
                src[2 * n_h * n_w + idx],
            ];
            // soft palette remap
            let nearest = style
                .palette
                .iter()
                .min_by(|a, b| {
                    let da: f32 = (0..3).map(|c| (a[c] - px[c]).powi(2)).sum();
                    let db: f32 = (0..3).map(|c| (b[c] - px[c]).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .copied()
                .unwrap_or(px);
            for c in 0..3 {
                px[c] = 0.45 * px[c] + 0.55 * nearest[c];
            }
            // texture
            let (fx, fy) = (x as f32, y as f32);
            match style.texture {
                Texture::Flat => {}
                Texture::Brushstroke => {
                    // horizontally stretched noise reads as strokes
                    let v = 0.06 * value_noise(style.texture_seed, fx / 9.0, fy / 2.5);
                    for c in 0..3 {
                        px[c] += v;
                    }
                }
                Texture::Halftone => {
                    let period = 4.0;
                    let dots =
                        0.5 + 0.5 * ((2.0 * PI * fx / period).sin() * (2.0 * PI * fy / period).sin());
                    let lum = luminance(&px);
                    if dots > 0.5 + lum * 0.5 {
                        for c in 0..3 {
                            px[c] *= 0.75;
                        }
                    }
                }
                Texture::CrossHatch => {
                    let lum = luminance(&px);
                    let period = 5.0;
                    let d1 = ((fx + fy) % period) < 1.0;
                    let d2 = ((fx - fy).rem_euclid(period)) < 1.0;
                    if lum < 0.55 && d1 {
                        for c in 0..3 {
                            px[c] *= 0.8;
                        }
                    }
                    if lum < 0.3 && d2 {
                        for c in 0..3 {
                            px[c] *= 0.8;
                        }
                    }
                }
                Texture::Posterize => {
                    for c in 0..3 {
                        px[c] = (px[c] * 5.0).round() / 5.0;
                    }
                }
            }
            // contrast curve
            for c in 0..3 {
                let v = px[c].clamp(0.0, 1.0).powf(style.gamma);
                px[c] = (0.5 + style.gain * (v - 0.5)).clamp(0.0, 1.0);
            }
            out[idx] = px[0];
            out[n_h * n_w + idx] = px[1];
            out[2 * n_h * n_w + idx] = px[2];
        }
    }
    Tensor::from_vec(shape.to_vec(), out).expect("style shape")
}

/// Render one (content, style) pair.
pub fn render_pair(content: &ContentSpec, style: &StyleSpec, resolution: usize, seed: u64) -> Tensor {
    let base = render_content(content, resolution, seed);
    apply_style(&base, style)
}

fn pair_seed(dataset_seed: u64, content_id: &str, style_id: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in content_id.bytes().chain([0u8]).chain(style_id.bytes()) {
        h = (h ^ b as u64).wrapping_mul(0x1000_0000_01b3);
    }
    derive_seed(dataset_seed, h)
}

/// Generate the full Cartesian product of contents x styles.
pub fn generate_dataset(
    contents: &[ContentSpec],
    styles: &[StyleSpec],
    resolution: usize,
    seed: u64,
) -> Result<(Vec<Tensor>, DatasetManifest)> {
    if contents.is_empty() || styles.is_empty() {
        return Err(DuawError::InvalidArg(
            "generate_dataset: contents and styles must be non-empty".into(),
        ));
    }
    let mut contents = contents.to_vec();
    contents.sort_by(|a, b| a.id.cmp(&b.id));
    let mut styles = styles.to_vec();
    styles.sort_by(|a, b| a.id.cmp(&b.id));

    let mut images = Vec::with_capacity(contents.len() * styles.len());
    let mut entries = Vec::with_capacity(images.capacity());
    for c in &contents {
        for s in &styles {
            let ps = pair_seed(seed, &c.id, &s.id);
            images.push(render_pair(c, s, resolution, ps));
            entries.push(ManifestEntry {
                path: format!("{}__{}.png", c.id, s.id),
                content_id: c.id.clone(),
                style_id: s.id.clone(),
                seed: ps,
            });
        }
    }
    // every pair must render distinctly
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            let m = mse_value(&images[i], &images[j])?;
            if m <= 1e-4 {
                return Err(DuawError::InvalidArg(format!(
                    "near-duplicate renders: {} vs {} (mse {})",
                    entries[i].path, entries[j].path, m
                )));
            }
        }
    }
    Ok((
        images,
        DatasetManifest {
            resolution,
            version: GENERATOR_VERSION.to_string(),
            entries,
        },
    ))
}

/// Default 10x10 training set.
pub fn training_dataset(resolution: usize, seed: u64) -> Result<(Vec<Tensor>, DatasetManifest)> {
    generate_dataset(&default_content_zoo(), &default_style_zoo(), resolution, seed)
}

/// Default 6x5 held-out set; disjoint content families and a disjoint
/// seed stream from the training set.
pub fn holdout_dataset(resolution: usize, seed: u64) -> Result<(Vec<Tensor>, DatasetManifest)> {
    generate_dataset(
        &holdout_content_zoo(),
        &holdout_style_zoo(),
        resolution,
        derive_seed(seed, 0x4f5f_4f55_5421),
    )
}

/// Write PNGs plus `manifest.tsv` into `dir`.
pub fn write_dataset(images: &[Tensor], manifest: &DatasetManifest, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (img, entry) in images.iter().zip(&manifest.entries) {
        save_png(img, &dir.join(&entry.path))?;
    }
    std::fs::write(dir.join("manifest.tsv"), manifest.to_text())?;
    Ok(())
}

/// Load a dataset written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(Vec<Tensor>, DatasetManifest)> {
    let text = std::fs::read_to_string(dir.join("manifest.tsv"))
        .map_err(|_| DuawError::MissingArtifact(dir.join("manifest.tsv").display().to_string()))?;
    let manifest = DatasetManifest::from_text(&text)?;
    let mut images = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        images.push(crate::imgio::load_png(&dir.join(&e.path))?);
    }
    Ok((images, manifest))
}

pub fn manifest_paths(m: &DatasetManifest) -> Vec<PathBuf> {
    m.entries.iter().map(|e| PathBuf::from(&e.path)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn zoos_have_expected_sizes_and_unique_ids() {
        let c = default_content_zoo();
        let s = default_style_zoo();
        assert_eq!(c.len(), 10);
        assert_eq!(s.len(), 10);
        let cids: BTreeSet<_> = c.iter().map(|x| x.id.clone()).collect();
        let sids: BTreeSet<_> = s.iter().map(|x| x.id.clone()).collect();
        assert_eq!(cids.len(), 10);
        assert_eq!(sids.len(), 10);
    }

    #[test]
    fn training_set_is_hundred_images_and_deterministic() {
        let (imgs1, m1) = training_dataset(32, 42).unwrap();
        let (imgs2, m2) = training_dataset(32, 42).unwrap();
        assert_eq!(imgs1.len(), 100);
        assert_eq!(m1.entries.len(), 100);
        assert_eq!(m1, m2);
        for (a, b) in imgs1.iter().zip(&imgs2) {
            assert_eq!(a.data(), b.data());
        }
        for img in &imgs1 {
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn manifest_is_full_cartesian_product_without_duplicates() {
        let (_, m) = training_dataset(16, 1).unwrap();
        let pairs: BTreeSet<_> = m
            .entries
            .iter()
            .map(|e| (e.content_id.clone(), e.style_id.clone()))
            .collect();
        assert_eq!(pairs.len(), 100);
    }

    #[test]
    fn holdout_is_thirty_images_disjoint_from_training() {
        let (imgs, m) = holdout_dataset(16, 7).unwrap();
        assert_eq!(imgs.len(), 30);
        let (_, train) = training_dataset(16, 7).unwrap();
        let train_paths: BTreeSet<_> = train.entries.iter().map(|e| e.path.clone()).collect();
        assert!(m.entries.iter().all(|e| !train_paths.contains(&e.path)));
    }

    #[test]
    fn generation_rejects_empty_zoos() {
        assert!(generate_dataset(&[], &default_style_zoo(), 16, 0).is_err());
        assert!(generate_dataset(&default_content_zoo(), &[], 16, 0).is_err());
    }

    #[test]
    fn style_application_is_pure() {
        let c = &default_content_zoo()[0];
        let s = &default_style_zoo()[1];
        let base = render_content(c, 32, 5);
        let a = apply_style(&base, s);
        let b = apply_style(&base, s);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn manifest_text_roundtrip() {
        let (_, m) = holdout_dataset(16, 3).unwrap();
        let back = DatasetManifest::from_text(&m.to_text()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn write_and_reload_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, m) = generate_dataset(
            &default_content_zoo()[..2],
            &default_style_zoo()[..2],
            16,
            9,
        )
        .unwrap();
        write_dataset(&imgs, &m, dir.path()).unwrap();
        let first = std::fs::read(dir.path().join(&m.entries[0].path)).unwrap();
        // regenerate over the same paths
        write_dataset(&imgs, &m, dir.path()).unwrap();
        let second = std::fs::read(dir.path().join(&m.entries[0].path)).unwrap();
        assert_eq!(first, second);
        let (loaded, lm) = load_dataset(dir.path()).unwrap();
        assert_eq!(lm, m);
        assert_eq!(loaded.len(), 4);
    }
}
