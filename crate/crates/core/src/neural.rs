//! Minimal reverse-mode numerical core.
//!
//! Parameters live in a [`ParamStore`]; layers only hold [`ParamId`]s into it.
//! Forward passes return explicit traces and backward passes consume them, so
//! gradients accumulate into the store until [`ParamStore::zero_grad`].
//! Everything is `f64`.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    /// Number of optimizer steps taken so far.
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arrays: BTreeMap<String, ArrayRecord>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<f64>) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name `{name}`")));
        }
        let len: usize = shape.iter().product();
        if value.len() != len {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {shape:?} but {} values",
                value.len()
            )));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("initial value of `{name}`")));
        }
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            grad: vec![0.0; len],
            m: vec![0.0; len],
            v: vec![0.0; len],
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// One bias-corrected Adam update from the accumulated gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(p) = self
            .params
            .iter()
            .find(|p| p.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            for ((w, &g), (m, v)) in p
                .value
                .iter_mut()
                .zip(&p.grad)
                .zip(p.m.iter_mut().zip(p.v.iter_mut()))
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        if !self.all_finite() {
            return Err(Error::NonFinite("parameters after optimizer step".into()));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            arrays: self
                .params
                .iter()
                .map(|p| {
                    (
                        p.name.clone(),
                        ArrayRecord {
                            shape: p.shape.clone(),
                            values: p.value.clone(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Overwrites every parameter from `ckpt`; names and shapes must match exactly.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::FormatVersion {
                found: ckpt.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if ckpt.arrays.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} arrays, model has {}",
                ckpt.arrays.len(),
                self.params.len()
            )));
        }
        for p in &mut self.params {
            let rec = ckpt
                .arrays
                .get(&p.name)
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks `{}`", p.name)))?;
            if rec.shape != p.shape || rec.values.len() != p.value.len() {
                return Err(Error::Shape(format!(
                    "`{}`: checkpoint shape {:?}, model shape {:?}",
                    p.name, rec.shape, p.shape
                )));
            }
            if rec.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint array `{}`", p.name)));
            }
            p.value.copy_from_slice(&rec.values);
        }
        Ok(())
    }
}

fn uniform(rng: &mut Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Four interleaved partial sums, so the additions do not form one serial chain.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().min(b.len());
    let (a, b) = (&a[..len], &b[..len]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Affine layer `y = b + x W` with `W` stored input-major (`[input, output]`).
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let w = store.add(&format!("{name}.w"), &[input, output], uniform(rng, input * output, bound))?;
        let b = store.add(&format!("{name}.b"), &[output], uniform(rng, output, bound))?;
        Ok(Self { w, b, input, output })
    }

    /// Rebinds to existing `{name}.w` / `{name}.b` parameters.
    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let w = store
            .find(&format!("{name}.w"))
            .ok_or_else(|| Error::Shape(format!("missing `{name}.w`")))?;
        let b = store
            .find(&format!("{name}.b"))
            .ok_or_else(|| Error::Shape(format!("missing `{name}.b`")))?;
        let shape = &store.param(w).shape;
        if shape.len() != 2 || store.param(b).shape != [shape[1]] {
            return Err(Error::Shape(format!("bad dense shapes for `{name}`")));
        }
        Ok(Self {
            w,
            b,
            input: shape[0],
            output: shape[1],
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input);
        debug_assert_eq!(out.len(), self.output);
        let w = store.value(self.w);
        out.copy_from_slice(store.value(self.b));
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(out, xi, &w[i * self.output..(i + 1) * self.output]);
            }
        }
    }

    /// Accumulates parameter gradients; writes `dL/dx` into `dx` when given.
    /// A shorter `dx` receives only the leading input gradients.
    pub fn backward(&self, store: &mut ParamStore, x: &[f64], dout: &[f64], dx: Option<&mut [f64]>) {
        {
            let gb = &mut store.param_mut(self.b).grad;
            axpy(gb, 1.0, dout);
        }
        let p = store.param_mut(self.w);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(&mut p.grad[i * self.output..(i + 1) * self.output], xi, dout);
            }
        }
        if let Some(dx) = dx {
            for (i, d) in dx.iter_mut().enumerate() {
                *d = dot(&p.value[i * self.output..(i + 1) * self.output], dout);
            }
        }
    }
}

/// Gated recurrent cell with input, forget and output gates and a cell state.
/// Gate pre-activations are laid out `[input | forget | candidate | output]`.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything the backward pass needs for one step.
#[derive(Debug, Clone)]
struct CellTrace {
    /// Post-activation gates `[i | f | g | o]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmTrace {
    inputs: Vec<Vec<f64>>,
    /// `hs[t]` is the state after step `t`; the zero initial state is implicit.
    pub hs: Vec<Vec<f64>>,
    cells: Vec<CellTrace>,
}

impl LstmTrace {
    pub fn len(&self) -> usize {
        self.hs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hs.is_empty()
    }
}

pub const FORGET_BIAS: f64 = 1.0;

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let wx = store.add(
            &format!("{name}.wx"),
            &[input, 4 * hidden],
            uniform(rng, input * 4 * hidden, 1.0 / (input as f64).sqrt()),
        )?;
        let wh = store.add(
            &format!("{name}.wh"),
            &[hidden, 4 * hidden],
            uniform(rng, hidden * 4 * hidden, 1.0 / (hidden as f64).sqrt()),
        )?;
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = FORGET_BIAS);
        let b = store.add(&format!("{name}.b"), &[4 * hidden], bias)?;
        Ok(Self {
            wx,
            wh,
            b,
            input,
            hidden,
        })
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let find = |suffix: &str| {
            store
                .find(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Shape(format!("missing `{name}.{suffix}`")))
        };
        let (wx, wh, b) = (find("wx")?, find("wh")?, find("b")?);
        let sx = &store.param(wx).shape;
        if sx.len() != 2 || !sx[1].is_multiple_of(4) {
            return Err(Error::Shape(format!("bad `{name}.wx` shape {sx:?}")));
        }
        let hidden = sx[1] / 4;
        if store.param(wh).shape != [hidden, 4 * hidden] || store.param(b).shape != [4 * hidden] {
            return Err(Error::Shape(format!("inconsistent recurrent shapes for `{name}`")));
        }
        Ok(Self {
            wx,
            wh,
            b,
            input: sx[0],
            hidden,
        })
    }

    fn cell(&self, store: &ParamStore, state: &RecurrentState, x: &[f64]) -> (RecurrentState, CellTrace) {
        let h4 = 4 * self.hidden;
        let hd = self.hidden;
        let wx = store.value(self.wx);
        let wh = store.value(self.wh);
        let mut z = store.value(self.b).to_vec();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                axpy(&mut z, xj, &wx[j * h4..(j + 1) * h4]);
            }
        }
        for (j, &hj) in state.h.iter().enumerate() {
            if hj != 0.0 {
                axpy(&mut z, hj, &wh[j * h4..(j + 1) * h4]);
            }
        }
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = if (2 * hd..3 * hd).contains(&k) {
                zk.tanh()
            } else {
                sigmoid(*zk)
            };
        }
        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for u in 0..hd {
            c[u] = z[hd + u] * state.c[u] + z[u] * z[2 * hd + u];
            tanh_c[u] = c[u].tanh();
            h[u] = z[3 * hd + u] * tanh_c[u];
        }
        (
            RecurrentState { h, c: c.clone() },
            CellTrace {
                gates: z,
                c,
                tanh_c,
            },
        )
    }

    /// One step from `state`, for incremental evaluation.
    pub fn step(&self, store: &ParamStore, state: &RecurrentState, x: &[f64]) -> Result<RecurrentState> {
        if x.len() != self.input {
            return Err(Error::Shape(format!(
                "recurrent input width {} (expected {})",
                x.len(),
                self.input
            )));
        }
        Ok(self.cell(store, state, x).0)
    }

    /// Runs the whole sequence from the zero state.
    pub fn forward(&self, store: &ParamStore, inputs: &[Vec<f64>]) -> Result<LstmTrace> {
        if let Some(bad) = inputs.iter().find(|x| x.len() != self.input) {
            return Err(Error::Shape(format!(
                "recurrent input width {} (expected {})",
                bad.len(),
                self.input
            )));
        }
        let mut state = RecurrentState::zeros(self.hidden);
        let mut hs = Vec::with_capacity(inputs.len());
        let mut cells = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (next, trace) = self.cell(store, &state, x);
            hs.push(next.h.clone());
            cells.push(trace);
            state = next;
        }
        Ok(LstmTrace {
            inputs: inputs.to_vec(),
            hs,
            cells,
        })
    }

    /// Backpropagation through time. `dhs[t]` is `dL/dh_t` from outside the cell.
    pub fn backward(&self, store: &mut ParamStore, trace: &LstmTrace, dhs: &[Vec<f64>]) -> Result<()> {
        let steps = trace.len();
        if dhs.len() != steps {
            return Err(Error::Shape(format!("{} hidden gradients for {} steps", dhs.len(), steps)));
        }
        let hd = self.hidden;
        let h4 = 4 * hd;
        let zeros = vec![0.0; hd];
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dz = vec![0.0; h4];
        for t in (0..steps).rev() {
            let cell = &trace.cells[t];
            let c_prev = if t > 0 { &trace.cells[t - 1].c } else { &zeros };
            let h_prev = if t > 0 { &trace.hs[t - 1] } else { &zeros };
            let g = &cell.gates;
            for u in 0..hd {
                let dh = dhs[t][u] + dh_next[u];
                let (gi, gf, gg, go) = (g[u], g[hd + u], g[2 * hd + u], g[3 * hd + u]);
                let tc = cell.tanh_c[u];
                let dc = dc_next[u] + dh * go * (1.0 - tc * tc);
                dz[u] = dc * gg * gi * (1.0 - gi);
                dz[hd + u] = dc * c_prev[u] * gf * (1.0 - gf);
                dz[2 * hd + u] = dc * gi * (1.0 - gg * gg);
                dz[3 * hd + u] = dh * tc * go * (1.0 - go);
                dc_next[u] = dc * gf;
            }
            axpy(&mut store.param_mut(self.b).grad, 1.0, &dz);
            let x = &trace.inputs[t];
            {
                let p = store.param_mut(self.wx);
                for (j, &xj) in x.iter().enumerate() {
                    if xj != 0.0 {
                        axpy(&mut p.grad[j * h4..(j + 1) * h4], xj, &dz);
                    }
                }
            }
            let p = store.param_mut(self.wh);
            for (j, &hj) in h_prev.iter().enumerate() {
                if hj != 0.0 {
                    axpy(&mut p.grad[j * h4..(j + 1) * h4], hj, &dz);
                }
                dh_next[j] = dot(&p.value[j * h4..(j + 1) * h4], &dz);
            }
        }
        Ok(())
    }
}

/// `softmax(logits)`, computed stably.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of class `target` and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[target];
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - log_z).exp()).collect();
    grad[target] -= 1.0;
    (loss, grad)
}

/// `(target - prediction)^2` and its derivative with respect to the prediction.
pub fn squared_error(prediction: f64, target: f64) -> (f64, f64) {
    let diff = prediction - target;
    (diff * diff, 2.0 * diff)
}

/// Lowest index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Shapes of a recurrent → dense(relu) → dense network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub recurrent: usize,
    pub hidden: usize,
    /// Width of the per-query auxiliary vector concatenated to the recurrent feature.
    pub aux: usize,
    pub output: usize,
}

/// One T x D episode, optionally with a per-step auxiliary vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub inputs: Vec<Vec<f64>>,
    pub aux: Option<Vec<Vec<f64>>>,
}

/// A head evaluation at recurrent step `step` with auxiliary input `aux`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadQuery {
    pub step: usize,
    pub aux: Vec<f64>,
}

#[derive(Debug, Clone)]
struct HeadTrace {
    step: usize,
    input: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    recurrent: LstmTrace,
    heads: Vec<HeadTrace>,
}

/// Recurrent layer, then `dense(relu)`, then a linear output layer.
#[derive(Debug, Clone)]
pub struct SequenceNet {
    pub store: ParamStore,
    pub arch: Architecture,
    lstm: Lstm,
    hidden: Dense,
    out: Dense,
    cache: Option<ForwardCache>,
}

impl SequenceNet {
    pub fn new(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "lstm", arch.input, arch.recurrent, rng)?;
        let hidden = Dense::new(&mut store, "hidden", arch.recurrent + arch.aux, arch.hidden, rng)?;
        let out = Dense::new(&mut store, "out", arch.hidden, arch.output, rng)?;
        Ok(Self {
            store,
            arch,
            lstm,
            hidden,
            out,
            cache: None,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut store = ParamStore::new();
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::FormatVersion {
                found: ckpt.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        // Recreate parameters in construction order so ids line up.
        for name in ["lstm.wx", "lstm.wh", "lstm.b", "hidden.w", "hidden.b", "out.w", "out.b"] {
            let rec = ckpt
                .arrays
                .get(name)
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks `{name}`")))?;
            store.add(name, &rec.shape, rec.values.clone())?;
        }
        if ckpt.arrays.len() != 7 {
            return Err(Error::Shape(format!("checkpoint has {} arrays, expected 7", ckpt.arrays.len())));
        }
        let lstm = Lstm::bind(&store, "lstm")?;
        let hidden = Dense::bind(&store, "hidden")?;
        let out = Dense::bind(&store, "out")?;
        if hidden.input < lstm.hidden || out.input != hidden.output {
            return Err(Error::Shape("inconsistent head shapes".into()));
        }
        let arch = Architecture {
            input: lstm.input,
            recurrent: lstm.hidden,
            hidden: hidden.output,
            aux: hidden.input - lstm.hidden,
            output: out.output,
        };
        Ok(Self {
            store,
            arch,
            lstm,
            hidden,
            out,
            cache: None,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.store.to_checkpoint()
    }

    /// Hidden states for every step, from a zero initial state.
    pub fn forward_recurrent(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.lstm.forward(&self.store, inputs)?.hs)
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState::zeros(self.arch.recurrent)
    }

    pub fn recurrent_step(&self, state: &RecurrentState, x: &[f64]) -> Result<RecurrentState> {
        self.lstm.step(&self.store, state, x)
    }

    fn head_input(&self, feature: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.arch.recurrent || aux.len() != self.arch.aux {
            return Err(Error::Shape(format!(
                "head expects feature {} + aux {}, got {} + {}",
                self.arch.recurrent,
                self.arch.aux,
                feature.len(),
                aux.len()
            )));
        }
        let mut input = Vec::with_capacity(feature.len() + aux.len());
        input.extend_from_slice(feature);
        input.extend_from_slice(aux);
        Ok(input)
    }

    fn head_trace(&self, step: usize, input: Vec<f64>) -> (HeadTrace, Vec<f64>) {
        let mut pre = vec![0.0; self.arch.hidden];
        self.hidden.forward(&self.store, &input, &mut pre);
        let act: Vec<f64> = pre.iter().map(|&v| relu(v)).collect();
        let mut out = vec![0.0; self.arch.output];
        self.out.forward(&self.store, &act, &mut out);
        (HeadTrace { step, input, pre, act }, out)
    }

    /// Input of the rectifier for `[feature, aux]`.
    pub fn hidden_preactivation(&self, feature: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
        let input = self.head_input(feature, aux)?;
        Ok(self.head_trace(0, input).0.pre)
    }

    /// affine → relu → affine on `[feature, aux]`.
    pub fn forward_head(&self, feature: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
        let input = self.head_input(feature, aux)?;
        Ok(self.head_trace(0, input).1)
    }

    /// Runs the sequence and evaluates the head once per query, caching
    /// everything for [`SequenceNet::backward`].
    pub fn forward(&mut self, inputs: &[Vec<f64>], queries: &[HeadQuery]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Err(Error::Shape("empty sequence".into()));
        }
        let recurrent = self.lstm.forward(&self.store, inputs)?;
        let mut heads = Vec::with_capacity(queries.len());
        let mut outputs = Vec::with_capacity(queries.len());
        for q in queries {
            let feature = recurrent
                .hs
                .get(q.step)
                .ok_or_else(|| Error::Shape(format!("query step {} beyond {} steps", q.step, inputs.len())))?;
            let input = self.head_input(feature, &q.aux)?;
            let (trace, out) = self.head_trace(q.step, input);
            heads.push(trace);
            outputs.push(out);
        }
        self.cache = Some(ForwardCache { recurrent, heads });
        Ok(outputs)
    }

    /// One head evaluation per step, using `batch.aux` when present.
    pub fn forward_batch(&mut self, batch: &SequenceBatch) -> Result<Vec<Vec<f64>>> {
        let queries: Vec<HeadQuery> = match &batch.aux {
            Some(aux) => {
                if aux.len() != batch.inputs.len() {
                    return Err(Error::Shape("aux length differs from sequence length".into()));
                }
                aux.iter()
                    .enumerate()
                    .map(|(step, a)| HeadQuery { step, aux: a.clone() })
                    .collect()
            }
            None => (0..batch.inputs.len())
                .map(|step| HeadQuery { step, aux: Vec::new() })
                .collect(),
        };
        self.forward(&batch.inputs, &queries)
    }

    /// Accumulates gradients for `dL/d(output)` of every cached query and
    /// releases the cache.
    pub fn backward(&mut self, d_outputs: &[Vec<f64>]) -> Result<()> {
        let cache = self.cache.take().ok_or(Error::NoForwardCache)?;
        if d_outputs.len() != cache.heads.len() {
            return Err(Error::Shape(format!(
                "{} output gradients for {} queries",
                d_outputs.len(),
                cache.heads.len()
            )));
        }
        let hd = self.arch.recurrent;
        let mut dhs = vec![vec![0.0; hd]; cache.recurrent.len()];
        let mut d_act = vec![0.0; self.arch.hidden];
        let mut d_input = vec![0.0; hd];
        for (trace, dout) in cache.heads.iter().zip(d_outputs) {
            if dout.len() != self.arch.output {
                return Err(Error::Shape(format!("output gradient width {}", dout.len())));
            }
            if dout.iter().all(|&d| d == 0.0) {
                continue;
            }
            self.out.backward(&mut self.store, &trace.act, dout, Some(&mut d_act));
            for (d, &p) in d_act.iter_mut().zip(&trace.pre) {
                if p <= 0.0 {
                    *d = 0.0;
                }
            }
            self.hidden
                .backward(&mut self.store, &trace.input, &d_act, Some(&mut d_input));
            axpy(&mut dhs[trace.step], 1.0, &d_input);
        }
        self.lstm.backward(&mut self.store, &cache.recurrent, &dhs)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.store.zero_grad();
    }

    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        self.store.adam_step(cfg)
    }
}
