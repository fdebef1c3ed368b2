//! `SCNT` model files and loss-history CSV.
//!
//! ```text
//! "SCNT"  u32 version=1  u32 input_dim  u32 hidden_dim  u32 K
//! then per tensor: u32 rows  u32 cols  rows*cols f32 (row-major)
//! ```
//!
//! Tensors in order: hidden1 W, b; hidden2 W, b; zoom W, b; conf W, b;
//! delta W, b. Weights are `outputs x inputs`, biases `outputs x 1`.

use std::path::Path;

use super::model::{Dense, ScNetModel};
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_csv};

pub const MODEL_MAGIC: &[u8; 4] = b"SCNT";
pub const MODEL_VERSION: u32 = 1;

fn push_tensor(buf: &mut Vec<u8>, rows: usize, cols: usize, values: &[f64]) {
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_model(model: &ScNetModel) -> Vec<u8> {
    let mut buf = Vec::with_capacity(20 + 4 * model.param_count() + 80);
    buf.extend_from_slice(MODEL_MAGIC);
    for v in [
        MODEL_VERSION,
        model.input_dim() as u32,
        model.hidden_dim() as u32,
        model.patterns() as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for layer in model.layers() {
        push_tensor(&mut buf, layer.outputs, layer.inputs, &layer.weights);
        push_tensor(&mut buf, layer.outputs, 1, &layer.bias);
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, "truncated model file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let (r, c) = (self.u32()? as usize, self.u32()? as usize);
        if (r, c) != (rows, cols) {
            return Err(Error::format(
                self.path,
                format!("tensor shape {r}x{c}, expected {rows}x{cols}"),
            ));
        }
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(self.path, "dimension overflow"))?;
        let values: Vec<f64> = self
            .take(n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(self.path, "non-finite parameter"));
        }
        Ok(values)
    }
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<ScNetModel> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::format(path, "bad magic, expected SCNT"));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let input = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let k = r.u32()? as usize;
    if input == 0 || hidden == 0 || k == 0 {
        return Err(Error::format(path, "zero dimension"));
    }
    let mut model = ScNetModel::zeros(0, 0, 0);
    let shapes = [(input, hidden), (hidden, hidden), (hidden, 1), (hidden, k), (hidden, 4 * k)];
    for (layer, (inputs, outputs)) in model.layers_mut().into_iter().zip(shapes) {
        *layer = Dense {
            inputs,
            outputs,
            weights: r.tensor(outputs, inputs)?,
            bias: r.tensor(outputs, 1)?,
        };
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok(model)
}

pub fn save_model(model: &ScNetModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ScNetModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

/// `iteration,loss` rows.
pub fn write_loss_history(history: &[f64], path: impl AsRef<Path>) -> Result<()> {
    write_csv(path.as_ref(), |w| {
        w.write_record(["iteration", "loss"])?;
        for (i, l) in history.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        Ok(())
    })
}
