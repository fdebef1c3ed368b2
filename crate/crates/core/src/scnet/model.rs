use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{CornerDeltas, PatternIndex};

/// Fully connected layer, `weights` is `outputs x inputs` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Dense::zeros(inputs, outputs);
        for w in &mut layer.weights {
            *w = rng.random_range(-a..=a);
        }
        layer
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates `grad_out x input` into `grad` and, when requested, writes
    /// `W^T grad_out` into `grad_in`.
    pub fn backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        grad: &mut Dense,
        grad_in: Option<&mut [f64]>,
    ) {
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for (r, v) in row.iter_mut().zip(x) {
                *r += g * v;
            }
        }
        if let Some(grad_in) = grad_in {
            grad_in.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in grad_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                for (gi, w) in grad_in.iter_mut().zip(row) {
                    *gi += g * w;
                }
            }
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Two hidden ReLU layers shared by three heads: zoom (1, sigmoid),
/// per-pattern confidence (K, sigmoid) and per-pattern corner deltas (4K).
#[derive(Clone, Debug, PartialEq)]
pub struct ScNetModel {
    pub hidden1: Dense,
    pub hidden2: Dense,
    pub zoom: Dense,
    pub conf: Dense,
    pub delta: Dense,
}

impl ScNetModel {
    pub fn zeros(input_dim: usize, hidden_dim: usize, patterns: usize) -> Self {
        ScNetModel {
            hidden1: Dense::zeros(input_dim, hidden_dim),
            hidden2: Dense::zeros(hidden_dim, hidden_dim),
            zoom: Dense::zeros(hidden_dim, 1),
            conf: Dense::zeros(hidden_dim, patterns),
            delta: Dense::zeros(hidden_dim, 4 * patterns),
        }
    }

    pub fn init(input_dim: usize, hidden_dim: usize, patterns: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScNetModel {
            hidden1: Dense::glorot(input_dim, hidden_dim, &mut rng),
            hidden2: Dense::glorot(hidden_dim, hidden_dim, &mut rng),
            zoom: Dense::glorot(hidden_dim, 1, &mut rng),
            conf: Dense::glorot(hidden_dim, patterns, &mut rng),
            delta: Dense::glorot(hidden_dim, 4 * patterns, &mut rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden1.inputs
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden1.outputs
    }

    pub fn patterns(&self) -> usize {
        self.conf.outputs
    }

    /// Layers in file order.
    pub fn layers(&self) -> [&Dense; 5] {
        [&self.hidden1, &self.hidden2, &self.zoom, &self.conf, &self.delta]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense; 5] {
        [
            &mut self.hidden1,
            &mut self.hidden2,
            &mut self.zoom,
            &mut self.conf,
            &mut self.delta,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        let [a, b, c, d, e] = self.layers();
        a.params()
            .chain(b.params())
            .chain(c.params())
            .chain(d.params())
            .chain(e.params())
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "pooled vector length",
                expected: self.input_dim(),
                actual: len,
            });
        }
        Ok(())
    }

    pub fn forward(&self, pooled: &[f32]) -> Result<ScNetOutput> {
        Ok(self.forward_trace(pooled)?.output)
    }

    /// Forward pass keeping the activations needed for backpropagation.
    pub fn forward_trace(&self, pooled: &[f32]) -> Result<Trace> {
        self.check_input(pooled.len())?;
        let input: Vec<f64> = pooled.iter().map(|&v| v as f64).collect();
        let hd = self.hidden_dim();
        let mut h1 = vec![0.0; hd];
        self.hidden1.forward(&input, &mut h1);
        relu(&mut h1);
        let mut h2 = vec![0.0; hd];
        self.hidden2.forward(&h1, &mut h2);
        relu(&mut h2);

        let mut zoom = [0.0];
        self.zoom.forward(&h2, &mut zoom);
        let mut conf = vec![0.0; self.patterns()];
        self.conf.forward(&h2, &mut conf);
        let mut deltas = vec![0.0; 4 * self.patterns()];
        self.delta.forward(&h2, &mut deltas);
        Ok(Trace {
            input,
            h1,
            h2,
            output: ScNetOutput {
                zoom_logit: zoom[0],
                conf_logits: conf,
                deltas,
            },
        })
    }

    /// Accumulates parameter gradients for one sample into `grads`.
    pub fn backward(&self, trace: &Trace, grad_out: &OutputGrad, grads: &mut ScNetModel) {
        let hd = self.hidden_dim();
        let h2 = &trace.h2;
        let mut g_h2 = vec![0.0; hd];
        let mut tmp = vec![0.0; hd];

        self.zoom
            .backward(h2, &[grad_out.zoom_logit], &mut grads.zoom, Some(&mut tmp));
        add_into(&mut g_h2, &tmp);
        self.conf
            .backward(h2, &grad_out.conf_logits, &mut grads.conf, Some(&mut tmp));
        add_into(&mut g_h2, &tmp);
        self.delta
            .backward(h2, &grad_out.deltas, &mut grads.delta, Some(&mut tmp));
        add_into(&mut g_h2, &tmp);
        relu_mask(&mut g_h2, h2);

        let mut g_h1 = vec![0.0; hd];
        self.hidden2
            .backward(&trace.h1, &g_h2, &mut grads.hidden2, Some(&mut g_h1));
        relu_mask(&mut g_h1, &trace.h1);
        self.hidden1
            .backward(&trace.input, &g_h1, &mut grads.hidden1, None);
    }
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Head outputs before the sigmoid; deltas are `[k * 4 + coord]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScNetOutput {
    pub zoom_logit: f64,
    pub conf_logits: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl ScNetOutput {
    /// Zoom indicator in (0, 1).
    pub fn zoom(&self) -> f64 {
        sigmoid(self.zoom_logit)
    }

    pub fn confidence(&self, k: usize) -> f64 {
        sigmoid(self.conf_logits[k])
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.conf_logits.iter().map(|&z| sigmoid(z)).collect()
    }

    pub fn corner_deltas(&self, k: usize) -> CornerDeltas {
        CornerDeltas::from_slice(&self.deltas[4 * k..4 * k + 4])
    }

    pub fn patterns(&self) -> usize {
        self.conf_logits.len()
    }

    pub fn pattern_of_max_confidence(&self) -> Option<PatternIndex> {
        let (k, _) = self
            .conf_logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))?;
        PatternIndex::new(k)
    }
}

/// Loss gradient with respect to the head outputs (logits and raw deltas).
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrad {
    pub zoom_logit: f64,
    pub conf_logits: Vec<f64>,
    pub deltas: Vec<f64>,
}

pub struct Trace {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub output: ScNetOutput,
}
