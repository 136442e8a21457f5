//! Single-layer gated recurrent classifier (input/forget/output gates plus a
//! candidate path and cell state) with a sigmoid head and exact analytic
//! gradients via backpropagation through time.
//!
//! Parameters live in one flat vector so optimizers and finite-difference
//! diagnostics can address every weight by index. Layout, in order: the four
//! gate weight matrices (input, forget, candidate, output; each `h x (d+h)`
//! row-major), the four gate bias vectors (each `h`), the head weights (`h`),
//! and the head bias.

use crate::error::{Error, Result};
use crate::loss::DEFAULT_EPSILON;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const GATE_INPUT: usize = 0;
const GATE_FORGET: usize = 1;
const GATE_CANDIDATE: usize = 2;
const GATE_OUTPUT: usize = 3;
const GATE_NAMES: [&str; 4] = ["input", "forget", "candidate", "output"];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentModel {
    input_dim: usize,
    hidden_dim: usize,
    seq_len: usize,
    params: Vec<f64>,
}

/// Activations retained from one forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Concatenated `[x_t, h_{t-1}]` per step, `T x (d+h)`.
    inputs: Vec<f64>,
    input_gate: Vec<f64>,
    forget_gate: Vec<f64>,
    candidate: Vec<f64>,
    output_gate: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hiddens: Vec<f64>,
    /// Final probability, clamped into `[eps, 1-eps]`.
    pub p: f64,
}

impl RecurrentModel {
    /// Xavier-uniform weights (`s = sqrt(6 / (fan_in + fan_out))` per matrix),
    /// forget-gate bias 1, all other biases 0.
    pub fn init(input_dim: usize, hidden_dim: usize, seq_len: usize, seed: u64) -> Result<Self> {
        if input_dim < 1 || hidden_dim < 1 || seq_len < 1 {
            return Err(Error::DimensionMismatch(format!(
                "model dims must be at least 1, got d={input_dim}, h={hidden_dim}, T={seq_len}"
            )));
        }
        let mut model = Self {
            input_dim,
            hidden_dim,
            seq_len,
            params: vec![0.0; param_count(input_dim, hidden_dim)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (input_dim, hidden_dim);
        let gate_scale = (6.0 / (d + 2 * h) as f64).sqrt();
        for gate in 0..4 {
            let offset = model.w_offset(gate);
            for w in &mut model.params[offset..offset + h * (d + h)] {
                *w = rng.random_range(-gate_scale..gate_scale);
            }
        }
        let head_scale = (6.0 / (h + 1) as f64).sqrt();
        let offset = model.head_w_offset();
        for w in &mut model.params[offset..offset + h] {
            *w = rng.random_range(-head_scale..head_scale);
        }
        let forget_off = model.b_offset(GATE_FORGET);
        for b in &mut model.params[forget_off..forget_off + h] {
            *b = 1.0;
        }
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Flat parameter vector; see the module doc for the layout.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn w_offset(&self, gate: usize) -> usize {
        gate * self.hidden_dim * (self.input_dim + self.hidden_dim)
    }

    fn b_offset(&self, gate: usize) -> usize {
        4 * self.hidden_dim * (self.input_dim + self.hidden_dim) + gate * self.hidden_dim
    }

    fn head_w_offset(&self) -> usize {
        4 * self.hidden_dim * (self.input_dim + self.hidden_dim) + 4 * self.hidden_dim
    }

    fn head_b_offset(&self) -> usize {
        self.head_w_offset() + self.hidden_dim
    }

    /// Gated recurrence over `T` steps from zero initial state; `sequence` is
    /// row-major `T x d`.
    pub fn forward(&self, sequence: &[f64]) -> Result<ForwardTrace> {
        let (d, h, t_len) = (self.input_dim, self.hidden_dim, self.seq_len);
        if sequence.len() != t_len * d {
            return Err(Error::DimensionMismatch(format!(
                "sequence has {} values, model expects {} (T={t_len} x d={d})",
                sequence.len(),
                t_len * d
            )));
        }
        let z_width = d + h;
        let mut trace = ForwardTrace {
            inputs: vec![0.0; t_len * z_width],
            input_gate: vec![0.0; t_len * h],
            forget_gate: vec![0.0; t_len * h],
            candidate: vec![0.0; t_len * h],
            output_gate: vec![0.0; t_len * h],
            cells: vec![0.0; t_len * h],
            tanh_cells: vec![0.0; t_len * h],
            hiddens: vec![0.0; t_len * h],
            p: 0.0,
        };
        let mut hidden = vec![0.0; h];
        let mut cell = vec![0.0; h];
        for t in 0..t_len {
            let z = &mut trace.inputs[t * z_width..(t + 1) * z_width];
            z[..d].copy_from_slice(&sequence[t * d..(t + 1) * d]);
            z[d..].copy_from_slice(&hidden);
            let z = &trace.inputs[t * z_width..(t + 1) * z_width];
            for j in 0..h {
                let mut pre = [0.0f64; 4];
                for (gate, slot) in pre.iter_mut().enumerate() {
                    let row = &self.params
                        [self.w_offset(gate) + j * z_width..self.w_offset(gate) + (j + 1) * z_width];
                    let mut acc = self.params[self.b_offset(gate) + j];
                    for (w, x) in row.iter().zip(z.iter()) {
                        acc += w * x;
                    }
                    *slot = acc;
                }
                let i_g = sigmoid(pre[GATE_INPUT]);
                let f_g = sigmoid(pre[GATE_FORGET]);
                let g_c = pre[GATE_CANDIDATE].tanh();
                let o_g = sigmoid(pre[GATE_OUTPUT]);
                let c_new = f_g * cell[j] + i_g * g_c;
                let tanh_c = c_new.tanh();
                trace.input_gate[t * h + j] = i_g;
                trace.forget_gate[t * h + j] = f_g;
                trace.candidate[t * h + j] = g_c;
                trace.output_gate[t * h + j] = o_g;
                trace.cells[t * h + j] = c_new;
                trace.tanh_cells[t * h + j] = tanh_c;
                cell[j] = c_new;
                hidden[j] = o_g * tanh_c;
                trace.hiddens[t * h + j] = hidden[j];
            }
        }
        let mut logit = self.params[self.head_b_offset()];
        let head_w = &self.params[self.head_w_offset()..self.head_w_offset() + h];
        for (w, x) in head_w.iter().zip(hidden.iter()) {
            logit += w * x;
        }
        trace.p = sigmoid(logit).clamp(DEFAULT_EPSILON, 1.0 - DEFAULT_EPSILON);
        Ok(trace)
    }

    /// Probability for a single tabular row; requires a `T = 1` model.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        assert_eq!(self.seq_len, 1, "predict_row requires seq_len 1");
        assert_eq!(row.len(), self.input_dim, "row width mismatch");
        self.forward(row).expect("dims validated").p
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// upstream `dL/dp`. Returned flat vector matches the parameter layout.
    pub fn backward(&self, trace: &ForwardTrace, dl_dp: f64) -> Vec<f64> {
        let (d, h, t_len) = (self.input_dim, self.hidden_dim, self.seq_len);
        let z_width = d + h;
        let mut grads = vec![0.0; self.params.len()];

        let p = trace.p;
        let dlogit = dl_dp * p * (1.0 - p);
        let last_hidden = &trace.hiddens[(t_len - 1) * h..t_len * h];
        let head_w_off = self.head_w_offset();
        for j in 0..h {
            grads[head_w_off + j] = dlogit * last_hidden[j];
        }
        grads[self.head_b_offset()] = dlogit;

        let mut d_hidden: Vec<f64> = self.params[head_w_off..head_w_off + h]
            .iter()
            .map(|w| w * dlogit)
            .collect();
        let mut d_cell = vec![0.0; h];
        let mut d_z = vec![0.0; z_width];

        for t in (0..t_len).rev() {
            let i_g = &trace.input_gate[t * h..(t + 1) * h];
            let f_g = &trace.forget_gate[t * h..(t + 1) * h];
            let g_c = &trace.candidate[t * h..(t + 1) * h];
            let o_g = &trace.output_gate[t * h..(t + 1) * h];
            let tanh_c = &trace.tanh_cells[t * h..(t + 1) * h];
            let z = &trace.inputs[t * z_width..(t + 1) * z_width];
            d_z.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..h {
                let c_prev = if t == 0 {
                    0.0
                } else {
                    trace.cells[(t - 1) * h + j]
                };
                let dc_total = d_cell[j] + d_hidden[j] * o_g[j] * (1.0 - tanh_c[j] * tanh_c[j]);
                let dz_o = d_hidden[j] * tanh_c[j] * o_g[j] * (1.0 - o_g[j]);
                let dz_i = dc_total * g_c[j] * i_g[j] * (1.0 - i_g[j]);
                let dz_f = dc_total * c_prev * f_g[j] * (1.0 - f_g[j]);
                let dz_g = dc_total * i_g[j] * (1.0 - g_c[j] * g_c[j]);
                let gate_deltas = [
                    (GATE_INPUT, dz_i),
                    (GATE_FORGET, dz_f),
                    (GATE_CANDIDATE, dz_g),
                    (GATE_OUTPUT, dz_o),
                ];
                for &(gate, dz) in &gate_deltas {
                    let w_row = self.w_offset(gate) + j * z_width;
                    for c in 0..z_width {
                        grads[w_row + c] += dz * z[c];
                        d_z[c] += self.params[w_row + c] * dz;
                    }
                    grads[self.b_offset(gate) + j] += dz;
                }
                d_cell[j] = dc_total * f_g[j];
            }
            d_hidden.copy_from_slice(&d_z[d..]);
        }
        grads
    }

    /// Named parameter views used for checkpoint serialization.
    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let mut out = Vec::with_capacity(10);
        for (gate, name) in GATE_NAMES.iter().enumerate() {
            let off = self.w_offset(gate);
            out.push((
                format!("w_{name}"),
                vec![h, d + h],
                &self.params[off..off + h * (d + h)],
            ));
        }
        for (gate, name) in GATE_NAMES.iter().enumerate() {
            let off = self.b_offset(gate);
            out.push((
                format!("b_{name}"),
                vec![h],
                &self.params[off..off + h],
            ));
        }
        let off = self.head_w_offset();
        out.push(("head_weights".into(), vec![h], &self.params[off..off + h]));
        let off = self.head_b_offset();
        out.push(("head_bias".into(), vec![1], &self.params[off..off + 1]));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = CheckpointDoc {
            format_version: CHECKPOINT_FORMAT_VERSION,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            seq_len: self.seq_len,
            arrays: self
                .named_arrays()
                .into_iter()
                .map(|(name, shape, values)| ArrayDoc {
                    name,
                    shape,
                    values: values.to_vec(),
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::InvalidCheckpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let doc: CheckpointDoc =
            serde_json::from_str(&text).map_err(|e| Error::InvalidCheckpoint {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let invalid = |message: String| Error::InvalidCheckpoint {
            path: path.to_path_buf(),
            message,
        };
        if doc.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(invalid(format!(
                "unsupported format version {}",
                doc.format_version
            )));
        }
        let mut model = Self {
            input_dim: doc.input_dim,
            hidden_dim: doc.hidden_dim,
            seq_len: doc.seq_len,
            params: vec![0.0; param_count(doc.input_dim, doc.hidden_dim)],
        };
        let expected: Vec<(String, Vec<usize>, usize, usize)> = model
            .named_arrays()
            .into_iter()
            .map(|(name, shape, values)| (name, shape, 0usize, values.len()))
            .collect();
        let mut offset = 0usize;
        for (idx, (name, shape, _, len)) in expected.iter().enumerate() {
            let array = doc
                .arrays
                .get(idx)
                .ok_or_else(|| invalid(format!("missing array '{name}'")))?;
            if &array.name != name || &array.shape != shape || array.values.len() != *len {
                return Err(invalid(format!(
                    "array {idx} expected '{name}' with shape {shape:?}, got '{}' with shape {:?} ({} values)",
                    array.name,
                    array.shape,
                    array.values.len()
                )));
            }
            model.params[offset..offset + len].copy_from_slice(&array.values);
            offset += len;
        }
        Ok(model)
    }
}

fn param_count(d: usize, h: usize) -> usize {
    4 * h * (d + h) + 4 * h + h + 1
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    input_dim: usize,
    hidden_dim: usize,
    seq_len: usize,
    arrays: Vec<ArrayDoc>,
}

#[derive(Serialize, Deserialize)]
struct ArrayDoc {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}
