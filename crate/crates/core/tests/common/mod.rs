#![allow(dead_code)]

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zoomprop::features::FeatureImage;
use zoomprop::geometry::{BBox, OverlapThresholds};
use zoomprop::scnet::{loss, make_labels, LossWeights, ScNetLabels, ScNetModel};
use zoomprop::windows::{Frame, WindowSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(rng: &mut ChaCha8Rng, extent: f64) -> BBox {
    let x = rng.random_range(0.0..extent * 0.9);
    let y = rng.random_range(0.0..extent * 0.9);
    let w = rng.random_range(1.0..extent - x);
    let h = rng.random_range(1.0..extent - y);
    BBox::new(x, y, x + w, y + h).unwrap()
}

pub fn random_features(rng: &mut ChaCha8Rng) -> FeatureImage {
    let c = rng.random_range(1..5);
    let h = rng.random_range(1..24);
    let w = rng.random_range(1..24);
    let stride = [1.0f32, 4.0, 8.0, 16.0][rng.random_range(0..4)];
    let data = (0..c * h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    FeatureImage::new(c, h, w, stride, data).unwrap()
}

/// A box overlapping the feature extent of `feat`.
pub fn random_roi(rng: &mut ChaCha8Rng, feat: &FeatureImage) -> BBox {
    let s = feat.stride();
    let (fw, fh) = (feat.width() as f64 * s, feat.height() as f64 * s);
    loop {
        let x1 = rng.random_range(-0.2 * fw..fw);
        let y1 = rng.random_range(-0.2 * fh..fh);
        let x2 = x1 + rng.random_range(0.05..fw * 1.2);
        let y2 = y1 + rng.random_range(0.05..fh * 1.2);
        if x2 > 0.0 && y2 > 0.0 {
            return BBox::new(x1, y1, x2, y2).unwrap();
        }
    }
}

/// Max pooling by membership test over every cell of the feature image.
pub fn oracle_pool(feat: &FeatureImage, roi: &BBox, g: usize) -> Vec<f32> {
    let s = feat.stride();
    let clamp = |v: f64, n: usize| v.max(0.0).min(n as f64) as usize;
    let x0 = clamp((roi.x1() / s).floor(), feat.width() - 1);
    let x1 = clamp((roi.x2() / s).ceil(), feat.width()).max(x0 + 1);
    let y0 = clamp((roi.y1() / s).floor(), feat.height() - 1);
    let y1 = clamp((roi.y2() / s).ceil(), feat.height()).max(y0 + 1);
    let member = |cell: usize, start: usize, n: usize, bin: usize| {
        if cell < start || cell >= start + n {
            return false;
        }
        let k = (cell - start) as f64;
        let lo = ((bin * n) as f64 / g as f64).floor();
        let hi = (((bin + 1) * n) as f64 / g as f64).floor();
        if lo == hi {
            return k == lo.min((n - 1) as f64);
        }
        k >= lo && k < hi
    };
    let (nx, ny) = (x1 - x0, y1 - y0);
    let mut out = vec![f32::NEG_INFINITY; feat.channels() * g * g];
    for c in 0..feat.channels() {
        for bi in 0..g {
            for bj in 0..g {
                let slot = &mut out[c * g * g + bi * g + bj];
                for y in 0..feat.height() {
                    for x in 0..feat.width() {
                        if member(y, y0, ny, bi) && member(x, x0, nx, bj) {
                            *slot = slot.max(feat.get(c, y, x));
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn box_key(b: &BBox) -> [i64; 4] {
    b.corners().map(|v| v.round() as i64)
}

/// Every window of `spec` in an origin-anchored integer frame, found by
/// scanning all integer offsets.
pub fn enumerate_windows(frame: &Frame, spec: &WindowSpec) -> HashSet<[i64; 4]> {
    let shorter = frame.shorter_side();
    let mut out = HashSet::new();
    for r in &spec.side_ratios {
        let s = (r * shorter).round();
        if s < 8.0 {
            continue;
        }
        let stride = spec.step_fraction * s;
        let on_axis = |len: f64, off: i64| {
            let off = off as f64;
            off == len - s
                || (0..)
                    .map(|i| i as f64 * stride)
                    .take_while(|p| *p <= len - s)
                    .any(|p| p.round() == off)
        };
        for oy in 0..=(frame.height - s) as i64 {
            if !on_axis(frame.height, oy) {
                continue;
            }
            for ox in 0..=(frame.width - s) as i64 {
                if on_axis(frame.width, ox) {
                    out.insert([ox, oy, ox + s as i64, oy + s as i64]);
                }
            }
        }
    }
    out
}

pub fn random_labels(rng: &mut ChaCha8Rng, patterns: usize) -> ScNetLabels {
    // start from a real overlap so targets look like training data
    let roi = random_box(rng, 100.0);
    let gt = random_box(rng, 100.0);
    let mut labels = make_labels(&roi, &[gt], OverlapThresholds::default());
    labels.zoom_label = rng.random_bool(0.5);
    assert_eq!(labels.conf_labels.len(), patterns);
    for c in labels.conf_labels.iter_mut() {
        if rng.random_bool(0.2) {
            *c = true;
        }
    }
    let k = rng.random_range(0..patterns);
    labels.delta_weights.iter_mut().for_each(|w| *w = 0.0);
    labels.delta_weights[k] = 1.0;
    labels.conf_labels[k] = true;
    let mut t = labels.delta_targets[k].to_array();
    for v in &mut t {
        *v = rng.random_range(-2.0..2.0);
    }
    labels.delta_targets[k] = zoomprop::geometry::CornerDeltas::from_slice(&t);
    labels
}

fn loss_at(model: &ScNetModel, x: &[f32], labels: &ScNetLabels, w: LossWeights) -> f64 {
    loss(&model.forward(x).unwrap(), labels, w).unwrap().0
}

/// Largest relative error between analytic and central-difference gradients
/// over all parameters with |grad| above `floor`, and how many were checked.
pub fn gradient_check(seed: u64, eps: f64, floor: f64) -> (f64, usize) {
    let mut rng = rng(seed);
    let input = rng.random_range(3..10);
    let hidden = rng.random_range(3..9);
    let patterns = 13;
    let mut model = ScNetModel::init(input, hidden, patterns, seed);
    // non-zero biases so every term of the backward pass is exercised
    for layer in model.layers_mut() {
        for b in layer.bias.iter_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    let x: Vec<f32> = (0..input).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let labels = random_labels(&mut rng, patterns);
    let weights = LossWeights {
        regression: rng.random_range(0.5..2.0),
    };

    let trace = model.forward_trace(&x).unwrap();
    let (_, g) = loss(&trace.output, &labels, weights).unwrap();
    let mut grads = ScNetModel::zeros(input, hidden, patterns);
    model.backward(&trace, &g, &mut grads);
    let analytic: Vec<f64> = grads.params().copied().collect();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let n = analytic.len();
    for i in 0..n {
        let orig = param_mut(&mut model, i).to_owned();
        *param_mut(&mut model, i) = orig + eps;
        let plus = loss_at(&model, &x, &labels, weights);
        *param_mut(&mut model, i) = orig - eps;
        let minus = loss_at(&model, &x, &labels, weights);
        *param_mut(&mut model, i) = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        if analytic[i].abs() > floor {
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs());
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

fn param_mut(model: &mut ScNetModel, mut i: usize) -> &mut f64 {
    for layer in model.layers_mut() {
        let nw = layer.weights.len();
        if i < nw {
            return &mut layer.weights[i];
        }
        i -= nw;
        if i < layer.bias.len() {
            return &mut layer.bias[i];
        }
        i -= layer.bias.len();
    }
    panic!("parameter index out of range")
}
