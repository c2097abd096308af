//! Binary "protected output" detector: a small CNN (two strided conv
//! blocks, global average pool, sigmoid head) trained with binary
//! cross-entropy on clean-vs-distorted generated images.

use rand::seq::SliceRandom;

use crate::container::{Container, MAGIC_CLS};
use crate::error::{DuawError, Result};
use crate::paramset::{ParamOptimizer, ParamSet, VarMap};
use crate::rng::{kaiming_tensor, rng_stream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const CHANNELS: [usize; 2] = [8, 16];

#[derive(Clone, Debug)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 40,
            batch_size: 8,
            lr: 2e-3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationMetrics {
    pub accuracy: f32,
    pub recall: f32,
    pub precision: f32,
}

#[derive(Clone, Debug)]
pub struct ClassifierParams {
    resolution: usize,
    params: ParamSet,
    pub validation: ValidationMetrics,
}

fn layer_plan(resolution: usize) -> Vec<(String, Vec<usize>)> {
    let _ = resolution;
    vec![
        ("conv0.w".into(), vec![CHANNELS[0], 3, 3, 3]),
        ("conv0.b".into(), vec![CHANNELS[0]]),
        ("conv1.w".into(), vec![CHANNELS[1], CHANNELS[0], 3, 3]),
        ("conv1.b".into(), vec![CHANNELS[1]]),
        ("head.w".into(), vec![1, CHANNELS[1]]),
        ("head.b".into(), vec![1]),
    ]
}

impl ClassifierParams {
    pub fn init(resolution: usize, seed: u64) -> Self {
        let mut rng = rng_stream(seed, 0xc15f);
        let mut params = ParamSet::new();
        for (name, shape) in layer_plan(resolution) {
            if name.ends_with(".w") {
                let fan_in: usize = shape[1..].iter().product();
                params.push(name, kaiming_tensor(&shape, fan_in, &mut rng));
            } else {
                params.push(name, Tensor::zeros(&shape));
            }
        }
        ClassifierParams {
            resolution,
            params,
            validation: ValidationMetrics::default(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(MAGIC_CLS);
        c.metadata = format!(
            "resolution={}\naccuracy={}\nrecall={}\nprecision={}\n",
            self.resolution,
            self.validation.accuracy,
            self.validation.recall,
            self.validation.precision
        );
        self.params.write_into(&mut c);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta_f = |k: &str| -> Result<f32> {
            c.meta_value(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| DuawError::Container(format!("missing metadata key '{}'", k)))
        };
        let resolution: usize = c
            .meta_value("resolution")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| DuawError::Container("missing metadata key 'resolution'".into()))?;
        let names: Vec<String> = layer_plan(resolution).into_iter().map(|(n, _)| n).collect();
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        Ok(ClassifierParams {
            resolution,
            params: ParamSet::read_from(c, &name_refs)?,
            validation: ValidationMetrics {
                accuracy: meta_f("accuracy")?,
                recall: meta_f("recall")?,
                precision: meta_f("precision")?,
            },
        })
    }
}

/// Taped forward pass: image -> probability of "distorted/protected".
fn forward(tape: &mut Tape, x: Var, vars: &VarMap) -> Result<Var> {
    let zeros0 = tape.constant(Tensor::zeros(&[CHANNELS[0]]));
    let zeros1 = tape.constant(Tensor::zeros(&[CHANNELS[1]]));
    let c0 = tape.conv2d(x, vars.get("conv0.w"), 2, 1)?;
    let c0 = tape.channel_affine(c0, zeros0, vars.get("conv0.b"))?;
    let h0 = tape.relu(c0);
    let c1 = tape.conv2d(h0, vars.get("conv1.w"), 2, 1)?;
    let c1 = tape.channel_affine(c1, zeros1, vars.get("conv1.b"))?;
    let h1 = tape.relu(c1);
    let pooled = tape.spatial_mean(h1)?;
    let logit = tape.linear(pooled, vars.get("head.w"), vars.get("head.b"))?;
    Ok(tape.sigmoid(logit))
}

/// Probability that `image` belongs to the distorted/protected class.
pub fn predict(clf: &ClassifierParams, image: &Tensor) -> Result<f32> {
    let expect = [3, clf.resolution, clf.resolution];
    if image.shape() != expect {
        return Err(DuawError::shape("classifier input", &expect, image.shape()));
    }
    let mut tape = Tape::new();
    let vars = VarMap::record(&mut tape, &clf.params, false);
    let x = tape.constant(image.clone());
    let p = forward(&mut tape, x, &vars)?;
    Ok(tape.value(p).item())
}

/// Train the binary classifier (label 0 = clean outputs, 1 = distorted
/// outputs) with an 80/20 per-class train/validation split.
pub fn train_classifier(
    clean_outputs: &[Tensor],
    adv_outputs: &[Tensor],
    config: &ClassifierConfig,
    seed: u64,
) -> Result<ClassifierParams> {
    if clean_outputs.is_empty() || adv_outputs.is_empty() {
        return Err(DuawError::InvalidArg(
            "train_classifier: both classes must be non-empty".into(),
        ));
    }
    let (n0, n1) = (clean_outputs.len(), adv_outputs.len());
    if n0 > 10 * n1 || n1 > 10 * n0 {
        return Err(DuawError::InvalidArg(format!(
            "class imbalance {}:{} exceeds 10:1",
            n0, n1
        )));
    }
    let shape = clean_outputs[0].shape().to_vec();
    if shape.len() != 3 || shape[0] != 3 || shape[1] != shape[2] {
        return Err(DuawError::InvalidArg(format!(
            "classifier expects square (3,H,H) images, got {:?}",
            shape
        )));
    }
    for x in clean_outputs.iter().chain(adv_outputs) {
        if x.shape() != shape {
            return Err(DuawError::shape("classifier dataset", &shape, x.shape()));
        }
    }
    let resolution = shape[1];

    // 80/20 split per class, deterministic in seed
    let mut split_rng = rng_stream(seed, 0x5370);
    let split = |set: &[Tensor], rng: &mut crate::rng::Prng| -> (Vec<usize>, Vec<usize>) {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(rng);
        let n_val = (set.len() / 5).max(1).min(set.len().saturating_sub(1)).max(0);
        let val = order[..n_val.min(order.len())].to_vec();
        let train = order[n_val.min(order.len())..].to_vec();
        (train, val)
    };
    let (train0, val0) = split(clean_outputs, &mut split_rng);
    let (train1, val1) = split(adv_outputs, &mut split_rng);

    // (image index into joint list, label)
    let mut train_items: Vec<(usize, f32)> = train0.iter().map(|&i| (i, 0.0)).collect();
    train_items.extend(train1.iter().map(|&i| (i + n0, 1.0)));
    let image_at = |i: usize| -> &Tensor {
        if i < n0 {
            &clean_outputs[i]
        } else {
            &adv_outputs[i - n0]
        }
    };

    let mut clf = ClassifierParams::init(resolution, seed);
    let mut opt = ParamOptimizer::new(&clf.params);
    let mut epoch_rng = rng_stream(seed, 0x4550);
    let mut step = 0usize;
    for _epoch in 0..config.epochs {
        train_items.shuffle(&mut epoch_rng);
        for batch in train_items.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let vars = VarMap::record(&mut tape, &clf.params, true);
            let mut batch_loss = None;
            for &(idx, label) in batch {
                let x = tape.constant(image_at(idx).clone());
                let p = forward(&mut tape, x, &vars)?;
                let p = tape.clamp(p, 1e-6, 1.0 - 1e-6);
                // BCE: -(y ln p + (1-y) ln(1-p))
                let lnp = tape.ln(p);
                let one_minus = tape.mul_scalar(p, -1.0);
                let one_minus = tape.add_scalar(one_minus, 1.0);
                let ln1p = tape.ln(one_minus);
                let a = tape.mul_scalar(lnp, -label);
                let b = tape.mul_scalar(ln1p, -(1.0 - label));
                let li = tape.add(a, b)?;
                batch_loss = Some(match batch_loss {
                    None => li,
                    Some(acc) => tape.add(acc, li)?,
                });
            }
            let total = batch_loss.expect("non-empty batch");
            let loss = tape.mul_scalar(total, 1.0 / batch.len() as f32);
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(DuawError::NonFinite {
                    step,
                    context: "classifier batch loss".into(),
                });
            }
            let grads = tape.backward(loss)?;
            opt.step(&mut clf.params, &vars, &grads, config.lr)?;
            step += 1;
        }
    }

    // validation metrics
    let (mut tp, mut tn, mut fp, mut fnn) = (0usize, 0usize, 0usize, 0usize);
    for &i in &val0 {
        if predict(&clf, &clean_outputs[i])? >= 0.5 {
            fp += 1;
        } else {
            tn += 1;
        }
    }
    for &i in &val1 {
        if predict(&clf, &adv_outputs[i])? >= 0.5 {
            tp += 1;
        } else {
            fnn += 1;
        }
    }
    let total = (tp + tn + fp + fnn) as f32;
    clf.validation = ValidationMetrics {
        accuracy: (tp + tn) as f32 / total,
        recall: if tp + fnn > 0 {
            tp as f32 / (tp + fnn) as f32
        } else {
            0.0
        },
        precision: if tp + fp > 0 {
            tp as f32 / (tp + fp) as f32
        } else {
            0.0
        },
    };
    Ok(clf)
}

/// Fraction of `images` classified as distorted/protected (p >= 0.5).
pub fn success_rate(clf: &ClassifierParams, images: &[Tensor]) -> Result<f32> {
    if images.is_empty() {
        return Err(DuawError::InvalidArg(
            "success_rate over an empty set is undefined".into(),
        ));
    }
    let mut hits = 0usize;
    for x in images {
        if predict(clf, x)? >= 0.5 {
            hits += 1;
        }
    }
    Ok(hits as f32 / images.len() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, uniform_tensor};

    fn gray_set(n: usize, res: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|_| uniform_tensor(&[3, res, res], 0.45, 0.55, &mut rng))
            .collect()
    }

    fn checker_set(n: usize, res: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|_| {
                let base = uniform_tensor(&[3, res, res], 0.4, 0.6, &mut rng);
                let mut data = base.into_data();
                for ch in 0..3 {
                    for y in 0..res {
                        for x in 0..res {
                            let s = if (x + y) % 2 == 0 { 0.4 } else { -0.4 };
                            data[ch * res * res + y * res + x] =
                                (data[ch * res * res + y * res + x] + s).clamp(0.0, 1.0);
                        }
                    }
                }
                Tensor::from_vec(vec![3, res, res], data).unwrap()
            })
            .collect()
    }

    #[test]
    fn separable_classes_reach_perfect_validation() {
        let clean = gray_set(15, 16, 1);
        let adv = checker_set(15, 16, 2);
        let clf = train_classifier(&clean, &adv, &ClassifierConfig::default(), 3).unwrap();
        assert_eq!(clf.validation.accuracy, 1.0);
        assert_eq!(clf.validation.recall, 1.0);
        assert_eq!(clf.validation.precision, 1.0);
        assert!(success_rate(&clf, &adv).unwrap() >= 0.9);
        assert!(success_rate(&clf, &clean).unwrap() <= 0.1);
    }

    #[test]
    fn training_is_deterministic_in_seed() {
        let clean = gray_set(8, 16, 4);
        let adv = checker_set(8, 16, 5);
        let cfg = ClassifierConfig {
            epochs: 5,
            ..ClassifierConfig::default()
        };
        let a = train_classifier(&clean, &adv, &cfg, 9).unwrap();
        let b = train_classifier(&clean, &adv, &cfg, 9).unwrap();
        assert_eq!(a.params.digest_bytes(), b.params.digest_bytes());
        assert_eq!(a.validation, b.validation);
    }

    #[test]
    fn imbalance_and_empty_sets_are_rejected() {
        let few = gray_set(1, 16, 1);
        let many = gray_set(12, 16, 2);
        assert!(train_classifier(&few, &many, &ClassifierConfig::default(), 0).is_err());
        assert!(train_classifier(&[], &many, &ClassifierConfig::default(), 0).is_err());
        assert!(train_classifier(&many, &[], &ClassifierConfig::default(), 0).is_err());
    }

    #[test]
    fn prediction_is_a_probability_and_deterministic() {
        let clf = ClassifierParams::init(16, 7);
        let x = gray_set(1, 16, 3).pop().unwrap();
        let p1 = predict(&clf, &x).unwrap();
        let p2 = predict(&clf, &x).unwrap();
        assert_eq!(p1, p2);
        assert!((0.0..=1.0).contains(&p1));
    }

    #[test]
    fn success_rate_rejects_empty_and_is_weighted_mean_over_unions() {
        let clean = gray_set(10, 16, 1);
        let adv = checker_set(10, 16, 2);
        let clf = train_classifier(&clean, &adv, &ClassifierConfig::default(), 3).unwrap();
        assert!(success_rate(&clf, &[]).is_err());
        let sr_a = success_rate(&clf, &clean).unwrap();
        let sr_b = success_rate(&clf, &adv).unwrap();
        let mut both = clean.clone();
        both.extend(adv.clone());
        let sr_union = success_rate(&clf, &both).unwrap();
        let expected = (sr_a * clean.len() as f32 + sr_b * adv.len() as f32)
            / (clean.len() + adv.len()) as f32;
        assert!((sr_union - expected).abs() < 1e-6);
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let clf = ClassifierParams::init(16, 0);
        let x = Tensor::filled(&[3, 32, 32], 0.5);
        assert!(predict(&clf, &x).is_err());
    }

    #[test]
    fn container_roundtrip() {
        let clean = gray_set(6, 16, 1);
        let adv = checker_set(6, 16, 2);
        let cfg = ClassifierConfig {
            epochs: 3,
            ..ClassifierConfig::default()
        };
        let clf = train_classifier(&clean, &adv, &cfg, 5).unwrap();
        let bytes = clf.to_container().to_bytes();
        let back = ClassifierParams::from_container(
            &Container::from_bytes(&bytes, Some(MAGIC_CLS)).unwrap(),
        )
        .unwrap();
        assert_eq!(back.params.digest_bytes(), clf.params.digest_bytes());
        assert_eq!(back.validation, clf.validation);
        let x = &clean[0];
        assert_eq!(predict(&clf, x).unwrap(), predict(&back, x).unwrap());
    }
}
