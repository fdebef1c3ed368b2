//! Multi-task loss: sigmoid cross-entropy on the zoom indicator and on every
//! pattern confidence, plus weighted smooth-L1 on the assigned pattern's deltas.

use super::labels::ScNetLabels;
use super::model::{sigmoid, OutputGrad, ScNetOutput};
use crate::error::{Error, Result};

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Cross-entropy of probability `p` against label `y`, with `p` clamped to
/// `[1e-7, 1 - 1e-7]`. Used for reporting only; training uses the logit form.
pub fn xent(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

/// `xent(sigmoid(z), y)` evaluated without forming the probability.
pub fn xent_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Weight of the box-regression term relative to the classification terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub regression: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { regression: 1.0 }
    }
}

pub fn loss(out: &ScNetOutput, labels: &ScNetLabels, weights: LossWeights) -> Result<(f64, OutputGrad)> {
    let k = out.patterns();
    if labels.conf_labels.len() != k || out.deltas.len() != 4 * k {
        return Err(Error::DimensionMismatch {
            what: "labels vs outputs",
            expected: k,
            actual: labels.conf_labels.len(),
        });
    }
    let finite = out.zoom_logit.is_finite()
        && out.conf_logits.iter().all(|v| v.is_finite())
        && out.deltas.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::NonFinite("network output"));
    }

    let zoom_y = labels.zoom_label as u8 as f64;
    let mut total = xent_logit(out.zoom_logit, zoom_y);
    let mut grad = OutputGrad {
        zoom_logit: sigmoid(out.zoom_logit) - zoom_y,
        conf_logits: vec![0.0; k],
        deltas: vec![0.0; 4 * k],
    };
    for (i, (&z, &y)) in out.conf_logits.iter().zip(&labels.conf_labels).enumerate() {
        let y = y as u8 as f64;
        total += xent_logit(z, y);
        grad.conf_logits[i] = sigmoid(z) - y;
    }
    for (i, &w) in labels.delta_weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let target = labels.delta_targets[i].to_array();
        for c in 0..4 {
            let diff = out.deltas[4 * i + c] - target[c];
            total += weights.regression * w * smooth_l1(diff);
            grad.deltas[4 * i + c] = weights.regression * w * smooth_l1_grad(diff);
        }
    }
    Ok((total, grad))
}
