//! Trainable speech/noise mask estimation with median pooling across
//! channels.
//!
//! The network sees the magnitude spectrum of a single channel (after
//! per-utterance log-magnitude standardization, which the raw magnitudes
//! need to be trainable at this scale) and emits the concatenation of a
//! noise mask and a speech mask, both sigmoid-bounded per cell. The
//! desk-scale default is a per-frame feed-forward network; an optional
//! bidirectional recurrent first layer is available for topology fidelity,
//! with its backward pass likewise hand-derived.

use crate::error::{Error, Result};
use crate::linalg::RealMatrix;
use crate::nn::{
    mlp_backward_from_last_preact, mlp_forward, Activation, MlpRecord, MlpSpec, ParamStore, Tensor,
};
use crate::rng::Rng;
use crate::sim::Scene;

/// Mask-network topology.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskNetConfig {
    /// Frequency bins F of the input magnitude spectrum.
    pub input_dim: usize,
    /// Hidden widths. With a recurrent first layer, the first entry is the
    /// per-direction state width.
    pub hidden_dims: Vec<usize>,
    /// Replace the first dense layer by a bidirectional recurrent layer.
    pub recurrent_first_layer: bool,
    pub seed: u64,
}

impl MaskNetConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, seed: u64) -> MaskNetConfig {
        MaskNetConfig {
            input_dim,
            hidden_dims,
            recurrent_first_layer: false,
            seed,
        }
    }

    /// Desk-scale default topology for a given bin count.
    pub fn desk_default(input_dim: usize, seed: u64) -> MaskNetConfig {
        MaskNetConfig::new(input_dim, vec![64, 128, 128], seed)
    }

    /// Output width: concatenated noise and speech masks.
    pub fn output_dim(&self) -> usize {
        2 * self.input_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("mask net needs input_dim >= 1".into()));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::InvalidConfig(
                "mask net needs at least one hidden layer".into(),
            ));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Dense part of the topology (everything after the optional recurrent
    /// layer).
    fn dense_spec(&self) -> Result<MlpSpec> {
        self.validate()?;
        if self.recurrent_first_layer {
            let mut dims = vec![2 * self.hidden_dims[0]];
            dims.extend_from_slice(&self.hidden_dims[1..]);
            dims.push(self.output_dim());
            chain_spec(&dims)
        } else {
            let mut dims = vec![self.input_dim];
            dims.extend_from_slice(&self.hidden_dims);
            dims.push(self.output_dim());
            chain_spec(&dims)
        }
    }
}

fn chain_spec(dims: &[usize]) -> Result<MlpSpec> {
    let mut layer_dims = Vec::new();
    let mut activations = Vec::new();
    for w in dims.windows(2) {
        layer_dims.push((w[0], w[1]));
        activations.push(Activation::Relu);
    }
    let last = activations.len() - 1;
    activations[last] = Activation::Sigmoid;
    Ok(MlpSpec {
        layer_dims,
        activations,
    })
}

/// Per-utterance speech and noise masks in [0, 1], indexed [frame, bin].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub speech: RealMatrix,
    pub noise: RealMatrix,
}

impl MaskPair {
    pub fn frames(&self) -> usize {
        self.speech.rows()
    }

    pub fn bins(&self) -> usize {
        self.speech.cols()
    }
}

/// Deterministic parameter initialization from the config seed:
/// fan-in-scaled uniform weights, zero biases.
pub fn init_params(cfg: &MaskNetConfig) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = cfg.dense_spec()?.init_params(cfg.seed);
    if cfg.recurrent_first_layer {
        let h = cfg.hidden_dims[0];
        let f = cfg.input_dim;
        let mut rng = Rng::new(cfg.seed ^ 0x5eed_ba5e);
        for dir in ["fwd", "bwd"] {
            let bound_in = 1.0 / (f as f64).sqrt();
            let mut w_in = Tensor::zeros(&[h, f]);
            for v in w_in.data.iter_mut() {
                *v = rng.range(-bound_in, bound_in);
            }
            store.insert(&format!("rnn.{dir}.w_in"), w_in);
            let bound_rec = 1.0 / (h as f64).sqrt();
            let mut w_rec = Tensor::zeros(&[h, h]);
            for v in w_rec.data.iter_mut() {
                *v = rng.range(-bound_rec, bound_rec);
            }
            store.insert(&format!("rnn.{dir}.w_rec"), w_rec);
            store.insert(&format!("rnn.{dir}.bias"), Tensor::zeros(&[h]));
        }
    }
    Ok(store)
}

/// Forward intermediates retained for [`backward`].
#[derive(Debug, Clone)]
pub struct MaskNetRecord {
    cfg: MaskNetConfig,
    normalized: RealMatrix,
    rnn: Option<RnnRecord>,
    mlp: MlpRecord,
}

#[derive(Debug, Clone)]
struct RnnRecord {
    /// Hidden states per direction, [T, H] each.
    h_fwd: RealMatrix,
    h_bwd: RealMatrix,
}

/// Per-utterance log-magnitude standardization.
fn normalize_input(magnitude: &RealMatrix) -> RealMatrix {
    let n = (magnitude.rows() * magnitude.cols()) as f64;
    let logs: Vec<f64> = magnitude.data().iter().map(|&m| (m + 1e-10).ln()).collect();
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    let mut out = RealMatrix::zeros(magnitude.rows(), magnitude.cols());
    for (dst, l) in out.data_mut().iter_mut().zip(&logs) {
        *dst = (l - mean) / std;
    }
    out
}

fn rnn_direction_forward(
    input: &RealMatrix,
    store: &ParamStore,
    dir: &str,
    reverse: bool,
) -> Result<RealMatrix> {
    let w_in = store.value(&format!("rnn.{dir}.w_in"))?;
    let w_rec = store.value(&format!("rnn.{dir}.w_rec"))?;
    let bias = store.value(&format!("rnn.{dir}.bias"))?;
    let h_dim = bias.data.len();
    let f_dim = input.cols();
    let t_len = input.rows();
    let mut h = RealMatrix::zeros(t_len, h_dim);
    let mut prev = vec![0.0; h_dim];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    };
    for t in order {
        let x = input.row(t);
        for o in 0..h_dim {
            let mut z = bias.data[o];
            let wrow = &w_in.data[o * f_dim..(o + 1) * f_dim];
            for (xv, wv) in x.iter().zip(wrow) {
                z += xv * wv;
            }
            let urow = &w_rec.data[o * h_dim..(o + 1) * h_dim];
            for (hv, uv) in prev.iter().zip(urow) {
                z += hv * uv;
            }
            h[(t, o)] = z.tanh();
        }
        prev.copy_from_slice(h.row(t));
    }
    Ok(h)
}

fn rnn_direction_backward(
    input: &RealMatrix,
    h: &RealMatrix,
    store: &mut ParamStore,
    dir: &str,
    reverse: bool,
    out_cot: &RealMatrix,
) -> Result<()> {
    let h_dim = h.cols();
    let f_dim = input.cols();
    let t_len = input.rows();
    let w_rec = store.value(&format!("rnn.{dir}.w_rec"))?.clone();
    let mut dw_in = vec![0.0; h_dim * f_dim];
    let mut dw_rec = vec![0.0; h_dim * h_dim];
    let mut db = vec![0.0; h_dim];
    let mut carry = vec![0.0; h_dim];
    // Walk time in the direction opposite to the forward recursion.
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new(0..t_len)
    } else {
        Box::new((0..t_len).rev())
    };
    for t in order {
        let prev_t: Option<usize> = if reverse {
            if t + 1 < t_len {
                Some(t + 1)
            } else {
                None
            }
        } else {
            t.checked_sub(1)
        };
        let x = input.row(t);
        let mut dz = vec![0.0; h_dim];
        for o in 0..h_dim {
            let dh = out_cot[(t, o)] + carry[o];
            let hv = h[(t, o)];
            dz[o] = dh * (1.0 - hv * hv);
        }
        for o in 0..h_dim {
            let g = dz[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wrow = &mut dw_in[o * f_dim..(o + 1) * f_dim];
            for (dst, xv) in wrow.iter_mut().zip(x) {
                *dst += g * xv;
            }
            if let Some(pt) = prev_t {
                let urow = &mut dw_rec[o * h_dim..(o + 1) * h_dim];
                for (dst, hv) in urow.iter_mut().zip(h.row(pt)) {
                    *dst += g * hv;
                }
            }
        }
        // carry to the previous state: dh_prev = W_rec^T dz
        for c in carry.iter_mut() {
            *c = 0.0;
        }
        if prev_t.is_some() {
            for o in 0..h_dim {
                let g = dz[o];
                if g == 0.0 {
                    continue;
                }
                let urow = &w_rec.data[o * h_dim..(o + 1) * h_dim];
                for (dst, uv) in carry.iter_mut().zip(urow) {
                    *dst += g * uv;
                }
            }
        }
    }
    store.accumulate_grad(&format!("rnn.{dir}.w_in"), &dw_in)?;
    store.accumulate_grad(&format!("rnn.{dir}.w_rec"), &dw_rec)?;
    store.accumulate_grad(&format!("rnn.{dir}.bias"), &db)?;
    Ok(())
}

/// Estimate masks for one channel's magnitude spectrum, keeping the
/// forward record.
pub fn forward_recorded(
    magnitude: &RealMatrix,
    params: &ParamStore,
    cfg: &MaskNetConfig,
) -> Result<(MaskPair, MaskNetRecord)> {
    cfg.validate()?;
    if magnitude.cols() != cfg.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "magnitude has {} bins, mask net expects {}",
            magnitude.cols(),
            cfg.input_dim
        )));
    }
    if magnitude
        .data()
        .iter()
        .any(|&m| !m.is_finite() || m < 0.0)
    {
        return Err(Error::InvalidInput(
            "magnitudes must be finite and nonnegative".into(),
        ));
    }
    let normalized = normalize_input(magnitude);
    let spec = cfg.dense_spec()?;
    let (rnn, mlp_input) = if cfg.recurrent_first_layer {
        let h_fwd = rnn_direction_forward(&normalized, params, "fwd", false)?;
        let h_bwd = rnn_direction_forward(&normalized, params, "bwd", true)?;
        let h = cfg.hidden_dims[0];
        let concat = RealMatrix::from_fn(normalized.rows(), 2 * h, |t, j| {
            if j < h {
                h_fwd[(t, j)]
            } else {
                h_bwd[(t, j - h)]
            }
        });
        (Some(RnnRecord { h_fwd, h_bwd }), concat)
    } else {
        (None, normalized.clone())
    };
    let mlp = mlp_forward(&spec, params, &mlp_input)?;
    let pair = split_masks(mlp.output(), cfg.input_dim);
    Ok((
        pair,
        MaskNetRecord {
            cfg: cfg.clone(),
            normalized,
            rnn,
            mlp,
        },
    ))
}

/// Estimate masks for one channel's magnitude spectrum.
pub fn forward(
    magnitude: &RealMatrix,
    params: &ParamStore,
    cfg: &MaskNetConfig,
) -> Result<MaskPair> {
    forward_recorded(magnitude, params, cfg).map(|(pair, _)| pair)
}

/// Network output layout: `[0..F)` noise mask, `[F..2F)` speech mask.
fn split_masks(output: &RealMatrix, bins: usize) -> MaskPair {
    let frames = output.rows();
    let noise = RealMatrix::from_fn(frames, bins, |t, f| output[(t, f)]);
    let speech = RealMatrix::from_fn(frames, bins, |t, f| output[(t, bins + f)]);
    MaskPair { speech, noise }
}

/// Pack mask-pair cotangents back into network-output layout.
fn merge_mask_cotangents(speech: &RealMatrix, noise: &RealMatrix) -> RealMatrix {
    let frames = speech.rows();
    let bins = speech.cols();
    RealMatrix::from_fn(frames, 2 * bins, |t, j| {
        if j < bins {
            noise[(t, j)]
        } else {
            speech[(t, j - bins)]
        }
    })
}

/// Exact analytic gradients for one channel, accumulated (`+=`) into the
/// store. `speech_cot`/`noise_cot` are cotangents on the post-sigmoid
/// masks.
pub fn backward(
    record: &MaskNetRecord,
    speech_cot: &RealMatrix,
    noise_cot: &RealMatrix,
    store: &mut ParamStore,
) -> Result<()> {
    if store.is_frozen() {
        return Err(Error::FreezeViolation(
            "mask estimator backward on a frozen store".into(),
        ));
    }
    let out_cot = merge_mask_cotangents(speech_cot, noise_cot);
    let output = record.mlp.output();
    if out_cot.rows() != output.rows() || out_cot.cols() != output.cols() {
        return Err(Error::ShapeMismatch(format!(
            "mask cotangent {}x{} vs output {}x{}",
            out_cot.rows(),
            out_cot.cols(),
            output.rows(),
            output.cols()
        )));
    }
    // Fold the sigmoid into the last pre-activation: dz = cot * p(1-p).
    let dz = RealMatrix::from_fn(out_cot.rows(), out_cot.cols(), |t, j| {
        let p = output[(t, j)];
        out_cot[(t, j)] * p * (1.0 - p)
    });
    backward_from_preact(record, &dz, store)
}

/// Backward entry point taking the cotangent on the final pre-activation;
/// used by BCE pretraining where sigmoid and loss fold into `p - y`.
pub fn backward_from_preact(
    record: &MaskNetRecord,
    last_dz: &RealMatrix,
    store: &mut ParamStore,
) -> Result<()> {
    if store.is_frozen() {
        return Err(Error::FreezeViolation(
            "mask estimator backward on a frozen store".into(),
        ));
    }
    let spec = record.cfg.dense_spec()?;
    let input_cot = mlp_backward_from_last_preact(&spec, store, &record.mlp, last_dz, true)?;
    if let Some(rnn) = &record.rnn {
        let h = record.cfg.hidden_dims[0];
        let t_len = input_cot.rows();
        let cot_fwd = RealMatrix::from_fn(t_len, h, |t, j| input_cot[(t, j)]);
        let cot_bwd = RealMatrix::from_fn(t_len, h, |t, j| input_cot[(t, h + j)]);
        rnn_direction_backward(&record.normalized, &rnn.h_fwd, store, "fwd", false, &cot_fwd)?;
        rnn_direction_backward(&record.normalized, &rnn.h_bwd, store, "bwd", true, &cot_bwd)?;
    }
    Ok(())
}

/// Record of which channel(s) supplied each pooled cell, for routing
/// cotangents back through the median.
#[derive(Debug, Clone)]
pub struct MedianRecord {
    /// Per cell: up to two (channel, weight) sources.
    sources: Vec<[(usize, f64); 2]>,
    frames: usize,
    bins: usize,
}

/// Element-wise median across channels. Even channel counts average the
/// two central values.
pub fn median_mask(per_channel: &[RealMatrix]) -> Result<RealMatrix> {
    median_mask_recorded(per_channel).map(|(m, _)| m)
}

/// Median with the routing record needed for the backward pass.
pub fn median_mask_recorded(per_channel: &[RealMatrix]) -> Result<(RealMatrix, MedianRecord)> {
    let m = per_channel.len();
    if m == 0 {
        return Err(Error::InvalidInput("median of zero channels".into()));
    }
    let frames = per_channel[0].rows();
    let bins = per_channel[0].cols();
    for (i, ch) in per_channel.iter().enumerate() {
        if ch.rows() != frames || ch.cols() != bins {
            return Err(Error::ShapeMismatch(format!(
                "channel {i} mask is {}x{}, expected {frames}x{bins}",
                ch.rows(),
                ch.cols()
            )));
        }
    }
    let mut out = RealMatrix::zeros(frames, bins);
    let mut sources = vec![[(0usize, 0.0f64); 2]; frames * bins];
    let mut order: Vec<usize> = (0..m).collect();
    for t in 0..frames {
        for f in 0..bins {
            order.sort_by(|&a, &b| {
                per_channel[a][(t, f)]
                    .partial_cmp(&per_channel[b][(t, f)])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let cell = t * bins + f;
            if m % 2 == 1 {
                let c = order[m / 2];
                out[(t, f)] = per_channel[c][(t, f)];
                sources[cell] = [(c, 1.0), (0, 0.0)];
            } else {
                let c1 = order[m / 2 - 1];
                let c2 = order[m / 2];
                out[(t, f)] =
                    0.5 * (per_channel[c1][(t, f)] + per_channel[c2][(t, f)]);
                sources[cell] = [(c1, 0.5), (c2, 0.5)];
            }
            order.sort_unstable();
        }
    }
    Ok((
        out,
        MedianRecord {
            sources,
            frames,
            bins,
        },
    ))
}

/// Route a pooled-mask cotangent back to the per-channel masks. The sum of
/// routed cotangents equals the incoming cotangent at every cell, exactly.
pub fn median_backward(
    record: &MedianRecord,
    pooled_cot: &RealMatrix,
    n_channels: usize,
) -> Result<Vec<RealMatrix>> {
    if pooled_cot.rows() != record.frames || pooled_cot.cols() != record.bins {
        return Err(Error::ShapeMismatch("median cotangent shape".into()));
    }
    let mut out = vec![RealMatrix::zeros(record.frames, record.bins); n_channels];
    for t in 0..record.frames {
        for f in 0..record.bins {
            let cot = pooled_cot[(t, f)];
            for &(ch, wgt) in &record.sources[t * record.bins + f] {
                if wgt != 0.0 {
                    out[ch][(t, f)] += wgt * cot;
                }
            }
        }
    }
    Ok(out)
}

/// Binary cross-entropy between a predicted mask pair and targets, summed
/// over speech and noise heads, averaged per cell. Computed from the final
/// pre-activations for stability.
pub fn mask_bce(pred: &MaskPair, target: &MaskPair) -> f64 {
    let cells = (pred.speech.rows() * pred.speech.cols()) as f64;
    let term = |p: &RealMatrix, y: &RealMatrix| -> f64 {
        p.data()
            .iter()
            .zip(y.data())
            .map(|(&p, &y)| {
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
    };
    (term(&pred.speech, &target.speech) + term(&pred.noise, &target.noise)) / (2.0 * cells)
}

/// Loss trajectory of a pretraining run.
#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub epoch_loss: Vec<f64>,
}

/// Pretraining target type. The thresholded variant binarizes the ideal
/// ratio mask, which pushes the network toward confident cell selections
/// and measurably cleaner mask-weighted covariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PretrainTarget {
    Ratio,
    Thresholded(f64),
}

impl Default for PretrainTarget {
    fn default() -> Self {
        PretrainTarget::Thresholded(0.5)
    }
}

fn target_masks(scene: &Scene, target: PretrainTarget) -> MaskPair {
    match target {
        PretrainTarget::Ratio => scene.ideal_masks.clone(),
        PretrainTarget::Thresholded(thr) => {
            let irm = &scene.ideal_masks.speech;
            let speech = RealMatrix::from_fn(irm.rows(), irm.cols(), |t, f| {
                if irm[(t, f)] > thr {
                    1.0
                } else {
                    0.0
                }
            });
            let noise =
                RealMatrix::from_fn(irm.rows(), irm.cols(), |t, f| 1.0 - speech[(t, f)]);
            MaskPair { speech, noise }
        }
    }
}

/// Supervised pretraining on simulated scenes against their ideal masks.
///
/// Per channel, the predicted pair is regressed onto the scene's ideal
/// masks (ratio or thresholded) with binary cross-entropy; one gradient
/// step per scene.
pub fn pretrain_supervised(
    scenes: &[Scene],
    params: &mut ParamStore,
    cfg: &MaskNetConfig,
    epochs: usize,
    lr: f64,
) -> Result<PretrainReport> {
    pretrain_supervised_with(scenes, params, cfg, epochs, lr, PretrainTarget::default())
}

/// [`pretrain_supervised`] with an explicit target type.
pub fn pretrain_supervised_with(
    scenes: &[Scene],
    params: &mut ParamStore,
    cfg: &MaskNetConfig,
    epochs: usize,
    lr: f64,
    target_kind: PretrainTarget,
) -> Result<PretrainReport> {
    if scenes.is_empty() {
        return Err(Error::InvalidInput("pretrain on an empty dataset".into()));
    }
    cfg.validate()?;
    let targets: Vec<MaskPair> = scenes.iter().map(|s| target_masks(s, target_kind)).collect();
    let mut epoch_loss = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for (scene, target) in scenes.iter().zip(&targets) {
            params.zero_grads();
            let channels = scene.y.channels();
            let mut scene_loss = 0.0;
            for m in 0..channels {
                let magnitude = scene.y.magnitude(m);
                let (pred, record) = forward_recorded(&magnitude, params, cfg)?;
                scene_loss += mask_bce(&pred, target);
                // d(BCE)/dz = (p - y) / n_cells, averaged over both heads.
                let cells = (pred.speech.rows() * pred.speech.cols()) as f64;
                let scale = 1.0 / (2.0 * cells * channels as f64);
                let bins = cfg.input_dim;
                let dz = RealMatrix::from_fn(pred.speech.rows(), 2 * bins, |t, j| {
                    if j < bins {
                        (pred.noise[(t, j)] - target.noise[(t, j)]) * scale
                    } else {
                        (pred.speech[(t, j - bins)] - target.speech[(t, j - bins)]) * scale
                    }
                });
                backward_from_preact(&record, &dz, params)?;
            }
            params.sgd_step(lr)?;
            total += scene_loss / channels as f64;
            count += 1;
        }
        epoch_loss.push(total / count as f64);
    }
    Ok(PretrainReport { epoch_loss })
}
