//! Parameter storage and the hand-written MLP used by the mask estimator
//! and the acoustic-model surrogate.
//!
//! Gradients are computed analytically by the layer backward passes and
//! accumulated (`+=`) into the store's paired gradient buffers. A frozen
//! store rejects gradient accumulation and updates, which is how the
//! adaptation stage guarantees that only the mask estimator moves.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::RealMatrix;
use crate::rng::Rng;

/// A named real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Tensor {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: Tensor,
    grad: Tensor,
}

/// Flat named collection of parameter tensors with paired gradient buffers.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
    frozen: bool,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            entries: BTreeMap::new(),
            frozen: false,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let grad = Tensor::zeros(&value.dims);
        self.entries.insert(name.to_string(), Entry { value, grad });
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        if self.frozen {
            return Err(Error::FreezeViolation(format!(
                "attempted to mutate {name} in a frozen store"
            )));
        }
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.grad)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    /// Accumulate `delta` into the gradient buffer of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        if self.frozen {
            return Err(Error::FreezeViolation(format!(
                "attempted to accumulate gradient for {name} in a frozen store"
            )));
        }
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))?;
        if entry.grad.data.len() != delta.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient for {name}: {} values against buffer of {}",
                delta.len(),
                entry.grad.data.len()
            )));
        }
        for (g, d) in entry.grad.data.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            for g in e.grad.data.iter_mut() {
                *g = 0.0;
            }
        }
    }

    /// All gradient buffers exactly zero?
    pub fn grads_are_zero(&self) -> bool {
        self.entries
            .values()
            .all(|e| e.grad.data.iter().all(|&g| g == 0.0))
    }

    /// Plain gradient-descent step: value -= lr * grad.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if self.frozen {
            return Err(Error::FreezeViolation("sgd_step on a frozen store".into()));
        }
        for e in self.entries.values_mut() {
            for (v, g) in e.value.data.iter_mut().zip(&e.grad.data) {
                *v -= lr * g;
            }
        }
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.data.len()).sum()
    }

    /// Copy all parameter values into one flat vector (name-sorted order).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        for e in self.entries.values() {
            out.extend_from_slice(&e.value.data);
        }
        out
    }

    /// Overwrite all parameter values from a flat vector (name-sorted order).
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if self.frozen {
            return Err(Error::FreezeViolation("unflatten on a frozen store".into()));
        }
        if flat.len() != self.n_scalars() {
            return Err(Error::ShapeMismatch(format!(
                "unflatten: {} values for {} parameters",
                flat.len(),
                self.n_scalars()
            )));
        }
        let mut off = 0;
        for e in self.entries.values_mut() {
            let n = e.value.data.len();
            e.value.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Copy all gradient buffers into one flat vector (name-sorted order).
    pub fn flatten_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        for e in self.entries.values() {
            out.extend_from_slice(&e.grad.data);
        }
        out
    }

    /// FNV-1a digest over names, dims and value bits. Used to assert that
    /// frozen stores are bit-identical across an adaptation run.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, e) in &self.entries {
            eat(name.as_bytes());
            for &d in &e.value.dims {
                eat(&(d as u64).to_le_bytes());
            }
            for &v in &e.value.data {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}

/// Activation applied after a linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

fn apply_activation(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Relu => z.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        Activation::Identity => z,
    }
}

/// Derivative of the activation expressed through pre-activation `z` and
/// output `a`.
fn activation_deriv(act: Activation, z: f64, a: f64) -> f64 {
    match act {
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sigmoid => a * (1.0 - a),
        Activation::Identity => 1.0,
    }
}

/// Feed-forward network topology: sizes and activations per layer.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub layer_dims: Vec<(usize, usize)>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    /// input -> hidden... -> output with ReLU on hidden layers and the
    /// given output activation.
    pub fn feedforward(
        input_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
        output_act: Activation,
    ) -> Result<MlpSpec> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidConfig("mlp dims must be >= 1".into()));
        }
        if hidden_dims.is_empty() {
            return Err(Error::InvalidConfig(
                "mlp needs at least one hidden layer".into(),
            ));
        }
        if hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        let mut layer_dims = Vec::new();
        let mut activations = Vec::new();
        let mut prev = input_dim;
        for &h in hidden_dims {
            layer_dims.push((prev, h));
            activations.push(Activation::Relu);
            prev = h;
        }
        layer_dims.push((prev, output_dim));
        activations.push(output_act);
        Ok(MlpSpec {
            layer_dims,
            activations,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0].0
    }

    pub fn output_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 1].1
    }

    fn weight_name(l: usize) -> String {
        format!("layer{l}.weight")
    }

    fn bias_name(l: usize) -> String {
        format!("layer{l}.bias")
    }

    /// Deterministic fan-in-scaled uniform initialization, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        for (l, &(fan_in, fan_out)) in self.layer_dims.iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut w = Tensor::zeros(&[fan_out, fan_in]);
            for v in w.data.iter_mut() {
                *v = rng.range(-bound, bound);
            }
            store.insert(&Self::weight_name(l), w);
            store.insert(&Self::bias_name(l), Tensor::zeros(&[fan_out]));
        }
        store
    }

    /// Check that `store` holds every tensor this topology needs, with the
    /// right shapes. The store may hold additional tensors (e.g. a
    /// recurrent front layer sharing the same store).
    pub fn validate_store(&self, store: &ParamStore) -> Result<()> {
        for (l, &(fan_in, fan_out)) in self.layer_dims.iter().enumerate() {
            let w = store.value(&Self::weight_name(l))?;
            if w.dims != [fan_out, fan_in] {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} weight dims {:?}, topology wants [{fan_out}, {fan_in}]",
                    w.dims
                )));
            }
            let b = store.value(&Self::bias_name(l))?;
            if b.dims != [fan_out] {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} bias dims {:?}, topology wants [{fan_out}]",
                    b.dims
                )));
            }
        }
        Ok(())
    }
}

/// Forward activations retained for the backward pass. `acts[0]` is the
/// input batch; `acts[l+1]` / `pre[l]` belong to layer `l`.
#[derive(Debug, Clone)]
pub struct MlpRecord {
    pub acts: Vec<RealMatrix>,
    pub pre: Vec<RealMatrix>,
}

impl MlpRecord {
    pub fn output(&self) -> &RealMatrix {
        self.acts.last().expect("record has at least the input")
    }
}

/// Run the network over a `[batch, input_dim]` matrix, recording
/// intermediates.
pub fn mlp_forward(spec: &MlpSpec, store: &ParamStore, input: &RealMatrix) -> Result<MlpRecord> {
    if input.cols() != spec.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "mlp input dim {} but topology wants {}",
            input.cols(),
            spec.input_dim()
        )));
    }
    spec.validate_store(store)?;
    let batch = input.rows();
    let mut acts = vec![input.clone()];
    let mut pre = Vec::with_capacity(spec.n_layers());
    for l in 0..spec.n_layers() {
        let (fan_in, fan_out) = spec.layer_dims[l];
        let w = store.value(&MlpSpec::weight_name(l))?;
        let b = store.value(&MlpSpec::bias_name(l))?;
        let prev = &acts[l];
        let mut z = RealMatrix::zeros(batch, fan_out);
        for t in 0..batch {
            let row = prev.row(t);
            let zrow = z.row_mut(t);
            for o in 0..fan_out {
                let wrow = &w.data[o * fan_in..(o + 1) * fan_in];
                let mut acc = b.data[o];
                for (x, wv) in row.iter().zip(wrow) {
                    acc += x * wv;
                }
                zrow[o] = acc;
            }
        }
        let act = spec.activations[l];
        let a = RealMatrix::from_fn(batch, fan_out, |t, o| apply_activation(act, z[(t, o)]));
        pre.push(z);
        acts.push(a);
    }
    Ok(MlpRecord { acts, pre })
}

/// Reverse pass from a cotangent on the network output (post-activation).
///
/// Parameter gradients are accumulated into `store` unless
/// `accumulate_params` is false (used when a frozen model only needs to
/// pass gradients through to its input). Returns the cotangent on the
/// input batch.
pub fn mlp_backward(
    spec: &MlpSpec,
    store: &mut ParamStore,
    record: &MlpRecord,
    out_cotangent: &RealMatrix,
    accumulate_params: bool,
) -> Result<RealMatrix> {
    let batch = record.acts[0].rows();
    if out_cotangent.rows() != batch || out_cotangent.cols() != spec.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "mlp cotangent is {}x{}, expected {}x{}",
            out_cotangent.rows(),
            out_cotangent.cols(),
            batch,
            spec.output_dim()
        )));
    }
    let mut delta = out_cotangent.clone();
    for l in (0..spec.n_layers()).rev() {
        let (fan_in, fan_out) = spec.layer_dims[l];
        let act = spec.activations[l];
        // through the activation: delta_z = delta_a * act'(z)
        let z = &record.pre[l];
        let a = &record.acts[l + 1];
        let mut dz = RealMatrix::zeros(batch, fan_out);
        for t in 0..batch {
            for o in 0..fan_out {
                dz[(t, o)] = delta[(t, o)] * activation_deriv(act, z[(t, o)], a[(t, o)]);
            }
        }
        delta = propagate_linear(spec, store, l, record, &dz, accumulate_params, fan_in, fan_out)?;
    }
    Ok(delta)
}

/// Reverse pass that starts from a cotangent on the PRE-activation of the
/// final layer. Callers use this to fold a loss derivative and the output
/// nonlinearity into one numerically stable expression (e.g. sigmoid +
/// binary cross-entropy).
pub fn mlp_backward_from_last_preact(
    spec: &MlpSpec,
    store: &mut ParamStore,
    record: &MlpRecord,
    last_dz: &RealMatrix,
    accumulate_params: bool,
) -> Result<RealMatrix> {
    let batch = record.acts[0].rows();
    let last = spec.n_layers() - 1;
    let (fan_in, fan_out) = spec.layer_dims[last];
    if last_dz.rows() != batch || last_dz.cols() != fan_out {
        return Err(Error::ShapeMismatch("mlp preact cotangent shape".into()));
    }
    let mut delta = propagate_linear(
        spec,
        store,
        last,
        record,
        last_dz,
        accumulate_params,
        fan_in,
        fan_out,
    )?;
    for l in (0..last).rev() {
        let (fi, fo) = spec.layer_dims[l];
        let act = spec.activations[l];
        let z = &record.pre[l];
        let a = &record.acts[l + 1];
        let mut dz = RealMatrix::zeros(batch, fo);
        for t in 0..batch {
            for o in 0..fo {
                dz[(t, o)] = delta[(t, o)] * activation_deriv(act, z[(t, o)], a[(t, o)]);
            }
        }
        delta = propagate_linear(spec, store, l, record, &dz, accumulate_params, fi, fo)?;
    }
    Ok(delta)
}

/// Input-cotangent-only reverse pass: propagates through activations and
/// weights without touching any gradient buffer. Used when a frozen model
/// only has to pass gradients through to its input.
pub fn mlp_backward_input_grad(
    spec: &MlpSpec,
    store: &ParamStore,
    record: &MlpRecord,
    out_cotangent: &RealMatrix,
) -> Result<RealMatrix> {
    let batch = record.acts[0].rows();
    if out_cotangent.rows() != batch || out_cotangent.cols() != spec.output_dim() {
        return Err(Error::ShapeMismatch("mlp cotangent shape".into()));
    }
    let mut delta = out_cotangent.clone();
    for l in (0..spec.n_layers()).rev() {
        let (fan_in, fan_out) = spec.layer_dims[l];
        let act = spec.activations[l];
        let z = &record.pre[l];
        let a = &record.acts[l + 1];
        let w = store.value(&MlpSpec::weight_name(l))?;
        let mut dx = RealMatrix::zeros(batch, fan_in);
        for t in 0..batch {
            let xrow = dx.row_mut(t);
            for o in 0..fan_out {
                let g = delta[(t, o)] * activation_deriv(act, z[(t, o)], a[(t, o)]);
                if g == 0.0 {
                    continue;
                }
                let wrow = &w.data[o * fan_in..(o + 1) * fan_in];
                for (dst, wv) in xrow.iter_mut().zip(wrow) {
                    *dst += g * wv;
                }
            }
        }
        delta = dx;
    }
    Ok(delta)
}

#[allow(clippy::too_many_arguments)]
fn propagate_linear(
    _spec: &MlpSpec,
    store: &mut ParamStore,
    l: usize,
    record: &MlpRecord,
    dz: &RealMatrix,
    accumulate_params: bool,
    fan_in: usize,
    fan_out: usize,
) -> Result<RealMatrix> {
    let batch = dz.rows();
    let prev = &record.acts[l];
    if accumulate_params {
        let mut dw = vec![0.0; fan_out * fan_in];
        let mut db = vec![0.0; fan_out];
        for t in 0..batch {
            let x = prev.row(t);
            let d = dz.row(t);
            for o in 0..fan_out {
                let g = d[o];
                if g == 0.0 {
                    continue;
                }
                db[o] += g;
                let wrow = &mut dw[o * fan_in..(o + 1) * fan_in];
                for (dst, xv) in wrow.iter_mut().zip(x) {
                    *dst += g * xv;
                }
            }
        }
        store.accumulate_grad(&MlpSpec::weight_name(l), &dw)?;
        store.accumulate_grad(&MlpSpec::bias_name(l), &db)?;
    }
    // input cotangent: dx = dz . W
    let w = store.value(&MlpSpec::weight_name(l))?;
    let mut dx = RealMatrix::zeros(batch, fan_in);
    for t in 0..batch {
        let d = dz.row(t);
        let xrow = dx.row_mut(t);
        for o in 0..fan_out {
            let g = d[o];
            if g == 0.0 {
                continue;
            }
            let wrow = &w.data[o * fan_in..(o + 1) * fan_in];
            for (dst, wv) in xrow.iter_mut().zip(wrow) {
                *dst += g * wv;
            }
        }
    }
    Ok(dx)
}
