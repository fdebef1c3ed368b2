//! Mini-batch SGD with momentum and weight decay.
//!
//! Each batch draws `images_per_batch` distinct images, then
//! `batch_size / images_per_batch` RoIs from each. At least a quarter of each
//! image's draws come from RoIs with an assigned overlap pattern when the
//! image has any.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::labels::ScNetLabels;
use super::loss::{loss, LossWeights};
use super::model::ScNetModel;
use crate::error::{Error, Result};
use crate::geometry::PatternIndex;

#[derive(Clone, Debug, PartialEq)]
pub struct ScNetConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub patterns: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub images_per_batch: usize,
    pub iterations: usize,
    pub loss_weights: LossWeights,
    /// Minimum share of each image's draws taken from pattern-labeled RoIs.
    pub positive_fraction: f64,
    pub seed: u64,
}

impl Default for ScNetConfig {
    fn default() -> Self {
        ScNetConfig {
            input_dim: 16 * 4 * 4,
            hidden_dim: 64,
            patterns: PatternIndex::COUNT,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            images_per_batch: 2,
            iterations: 2000,
            loss_weights: LossWeights::default(),
            positive_fraction: 0.25,
            seed: 0,
        }
    }
}

impl ScNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.patterns == 0 {
            return bad("network dimensions must be positive".into());
        }
        if self.images_per_batch == 0 || !self.batch_size.is_multiple_of(self.images_per_batch) {
            return bad(format!(
                "batch size {} must be a positive multiple of images per batch {}",
                self.batch_size, self.images_per_batch
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        let finite = [self.learning_rate, self.momentum, self.weight_decay]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !finite || !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad("learning rate, momentum, weight decay must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub pooled: Vec<f32>,
    pub labels: ScNetLabels,
}

/// Pooled RoIs of one image.
#[derive(Clone, Debug, Default)]
pub struct TrainingImage {
    pub samples: Vec<TrainingSample>,
}

impl TrainingImage {
    fn positives(&self) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.labels.assigned_pattern().is_some())
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ScNetModel,
    /// Mean batch loss before each update.
    pub loss_history: Vec<f64>,
}

fn draw(rng: &mut ChaCha8Rng, pool: usize, n: usize, out: &mut Vec<usize>) {
    if pool >= n {
        out.extend(sample(rng, pool, n));
    } else {
        out.extend((0..n).map(|_| rng.random_range(0..pool)));
    }
}

/// Sample indices for one batch as `(image, sample)` pairs.
fn draw_batch(
    rng: &mut ChaCha8Rng,
    data: &[TrainingImage],
    positives: &[Vec<usize>],
    cfg: &ScNetConfig,
) -> Vec<(usize, usize)> {
    let per_image = cfg.batch_size / cfg.images_per_batch;
    let quota = ((cfg.positive_fraction * per_image as f64).ceil() as usize).min(per_image);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut picks = Vec::with_capacity(per_image);
    for img in sample(rng, data.len(), cfg.images_per_batch) {
        picks.clear();
        let pos = &positives[img];
        let n_pos = if pos.is_empty() { 0 } else { quota };
        let start = picks.len();
        draw(rng, pos.len(), n_pos, &mut picks);
        for p in &mut picks[start..] {
            *p = pos[*p];
        }
        draw(rng, data[img].samples.len(), per_image - n_pos, &mut picks);
        batch.extend(picks.iter().map(|&s| (img, s)));
    }
    batch
}

pub fn train(data: &[TrainingImage], cfg: &ScNetConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = ScNetModel::init(cfg.input_dim, cfg.hidden_dim, cfg.patterns, cfg.seed);
    train_from(model, data, cfg)
}

/// Continues training `model`.
pub fn train_from(
    mut model: ScNetModel,
    data: &[TrainingImage],
    cfg: &ScNetConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.iterations == 0 {
        return Ok(TrainOutcome {
            model,
            loss_history: Vec::new(),
        });
    }
    let usable = data.iter().filter(|d| !d.samples.is_empty()).count();
    if usable < cfg.images_per_batch || usable != data.len() {
        return Err(Error::InsufficientData(format!(
            "need at least {} images with RoIs, got {} of {}",
            cfg.images_per_batch,
            usable,
            data.len()
        )));
    }
    if let Some(s) = data.iter().flat_map(|d| &d.samples).find(|s| s.pooled.len() != model.input_dim()) {
        return Err(Error::DimensionMismatch {
            what: "training pooled vector",
            expected: model.input_dim(),
            actual: s.pooled.len(),
        });
    }

    let positives: Vec<Vec<usize>> = data.iter().map(TrainingImage::positives).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let zero = ScNetModel::zeros(model.input_dim(), model.hidden_dim(), model.patterns());
    let mut velocity = zero.clone();
    let mut history = Vec::with_capacity(cfg.iterations);
    const CHUNK: usize = 16;

    for _ in 0..cfg.iterations {
        let batch = draw_batch(&mut rng, data, &positives, cfg);
        // fixed chunking keeps the summation order independent of thread count
        let partials: Vec<Result<(f64, ScNetModel)>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = zero.clone();
                let mut total = 0.0;
                for &(img, idx) in chunk {
                    let s = &data[img].samples[idx];
                    let trace = model.forward_trace(&s.pooled)?;
                    let (l, g) = loss(&trace.output, &s.labels, cfg.loss_weights)?;
                    total += l;
                    model.backward(&trace, &g, &mut grads);
                }
                Ok((total, grads))
            })
            .collect();
        let mut grads = zero.clone();
        let mut batch_loss = 0.0;
        for part in partials {
            let (l, g) = part?;
            batch_loss += l;
            for (acc, layer) in grads.layers_mut().into_iter().zip(g.layers()) {
                for (a, b) in acc.params_mut().zip(layer.params()) {
                    *a += b;
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        history.push(batch_loss * scale);

        for ((layer, grad), vel) in model
            .layers_mut()
            .into_iter()
            .zip(grads.layers())
            .zip(velocity.layers_mut())
        {
            for ((w, g), v) in layer
                .weights
                .iter_mut()
                .zip(&grad.weights)
                .zip(vel.weights.iter_mut())
            {
                *v = cfg.momentum * *v - cfg.learning_rate * (g * scale + cfg.weight_decay * *w);
                *w += *v;
            }
            for ((b, g), v) in layer.bias.iter_mut().zip(&grad.bias).zip(vel.bias.iter_mut()) {
                *v = cfg.momentum * *v - cfg.learning_rate * g * scale;
                *b += *v;
            }
        }
        if !model.all_finite() {
            return Err(Error::NonFinite("model parameters after update"));
        }
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

/// Mean of a window of consecutive losses.
pub fn moving_average(history: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || history.len() < window {
        return Vec::new();
    }
    history
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CornerDeltas;

    fn toy_data(images: usize, per: usize, dim: usize) -> Vec<TrainingImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        (0..images)
            .map(|_| TrainingImage {
                samples: (0..per)
                    .map(|_| {
                        let pooled: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                        let mut labels = ScNetLabels::empty(13);
                        // learnable: zoom follows the sign of the first input
                        labels.zoom_label = pooled[0] > 0.0;
                        if pooled[1] > 0.3 {
                            let k = (pooled[2].abs() * 12.0) as usize;
                            labels.conf_labels[k] = true;
                            labels.delta_weights[k] = 1.0;
                            labels.delta_targets[k] =
                                CornerDeltas::new(pooled[3] as f64, 0.1, -0.2, pooled[4] as f64);
                        }
                        TrainingSample { pooled, labels }
                    })
                    .collect(),
            })
            .collect()
    }

    fn small_cfg() -> ScNetConfig {
        ScNetConfig {
            input_dim: 8,
            hidden_dim: 16,
            batch_size: 32,
            images_per_batch: 2,
            iterations: 300,
            learning_rate: 0.05,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_iterations_is_init() {
        let cfg = ScNetConfig {
            iterations: 0,
            ..small_cfg()
        };
        let out = train(&toy_data(3, 10, 8), &cfg).unwrap();
        assert_eq!(out.model, ScNetModel::init(8, 16, 13, 3));
        assert!(out.loss_history.is_empty());
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let cfg = ScNetConfig {
            learning_rate: 0.0,
            iterations: 5,
            ..small_cfg()
        };
        let out = train(&toy_data(3, 10, 8), &cfg).unwrap();
        let init = ScNetModel::init(8, 16, 13, 3);
        assert!(out.model.params().zip(init.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn same_seed_same_model() {
        let data = toy_data(4, 40, 8);
        let a = train(&data, &small_cfg()).unwrap();
        let b = train(&data, &small_cfg()).unwrap();
        assert!(a.model.params().zip(b.model.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn loss_descends_on_toy_problem() {
        let data = toy_data(4, 200, 8);
        let out = train(&data, &small_cfg()).unwrap();
        let ma = moving_average(&out.loss_history, 50);
        assert!(ma.last().unwrap() < &ma[0], "{} vs {}", ma.last().unwrap(), ma[0]);
    }

    #[test]
    fn insufficient_data() {
        let data = toy_data(1, 10, 8);
        assert!(matches!(train(&data, &small_cfg()), Err(Error::InsufficientData(_))));
        let mut data = toy_data(3, 10, 8);
        data[1].samples.clear();
        assert!(matches!(train(&data, &small_cfg()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn batch_composition() {
        let data = toy_data(5, 30, 8);
        let positives: Vec<_> = data.iter().map(TrainingImage::positives).collect();
        let cfg = ScNetConfig {
            batch_size: 128,
            ..small_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let batch = draw_batch(&mut rng, &data, &positives, &cfg);
            assert_eq!(batch.len(), 128);
            let mut imgs: Vec<_> = batch.iter().map(|b| b.0).collect();
            imgs.dedup();
            assert_eq!(imgs.len(), 2);
            for img in imgs {
                let mine: Vec<_> = batch.iter().filter(|b| b.0 == img).collect();
                assert_eq!(mine.len(), 64);
                let pos = mine
                    .iter()
                    .filter(|b| data[img].samples[b.1].labels.assigned_pattern().is_some())
                    .count();
                assert!(pos >= 16);
            }
        }
    }

    #[test]
    fn bad_batch_split() {
        let cfg = ScNetConfig {
            batch_size: 30,
            images_per_batch: 4,
            ..small_cfg()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
