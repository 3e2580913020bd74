//! Acoustic-model surrogate: a frame classifier over log-mel features.
//!
//! Stands in for the full recurrent hybrid model: a context-stacked MLP
//! emitting per-frame state posteriors, trained with cross-entropy and
//! frozen during adaptation. The adaptation mechanism only needs a
//! differentiable frozen loss, which this provides at desk scale.

use crate::error::{Error, Result};
use crate::linalg::RealMatrix;
use crate::nn::{mlp_backward, mlp_forward, Activation, MlpRecord, MlpSpec, ParamStore};

/// Posterior floor applied before the log in the loss.
pub const POSTERIOR_FLOOR: f64 = 1e-12;

/// Surrogate acoustic-model topology.
#[derive(Debug, Clone, PartialEq)]
pub struct AmConfig {
    /// Number of frame classes.
    pub n_states: usize,
    /// Context frames stacked on each side.
    pub context: usize,
    pub hidden_dims: Vec<usize>,
    /// Input feature dimension per frame (log-mel bins).
    pub feat_dim: usize,
    pub seed: u64,
}

impl AmConfig {
    pub fn new(n_states: usize, feat_dim: usize, seed: u64) -> AmConfig {
        AmConfig {
            n_states,
            context: 2,
            hidden_dims: vec![128, 128],
            feat_dim,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::InvalidConfig("am needs n_states >= 2".into()));
        }
        if self.feat_dim == 0 {
            return Err(Error::InvalidConfig("am needs feat_dim >= 1".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("am hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn stacked_dim(&self) -> usize {
        self.feat_dim * (2 * self.context + 1)
    }

    pub fn spec(&self) -> Result<MlpSpec> {
        self.validate()?;
        MlpSpec::feedforward(
            self.stacked_dim(),
            &self.hidden_dims,
            self.n_states,
            Activation::Identity,
        )
    }

    pub fn init_params(&self) -> Result<ParamStore> {
        Ok(self.spec()?.init_params(self.seed))
    }
}

/// Per-frame class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSequence {
    pub states: Vec<usize>,
}

impl StateSequence {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self, n_states: usize, frames: usize) -> Result<()> {
        if self.states.len() != frames {
            return Err(Error::ShapeMismatch(format!(
                "state sequence has {} frames, expected {frames}",
                self.states.len()
            )));
        }
        if let Some(&s) = self.states.iter().find(|&&s| s >= n_states) {
            return Err(Error::InvalidInput(format!(
                "state {s} out of range 0..{n_states}"
            )));
        }
        Ok(())
    }
}

/// Stack +-context frames around each frame, clamping at the edges.
pub fn stack_context(features: &RealMatrix, context: usize) -> RealMatrix {
    let frames = features.rows();
    let dim = features.cols();
    let width = 2 * context + 1;
    RealMatrix::from_fn(frames, dim * width, |t, j| {
        let offset = (j / dim) as isize - context as isize;
        let src = (t as isize + offset).clamp(0, frames as isize - 1) as usize;
        features[(src, j % dim)]
    })
}

/// Forward intermediates for the backward pass.
#[derive(Debug, Clone)]
pub struct AmRecord {
    pub stacked: RealMatrix,
    pub mlp: MlpRecord,
    pub posteriors: RealMatrix,
    context: usize,
    feat_dim: usize,
}

fn softmax_rows(logits: &RealMatrix) -> RealMatrix {
    let mut out = RealMatrix::zeros(logits.rows(), logits.cols());
    for t in 0..logits.rows() {
        let row = logits.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &z) in out.row_mut(t).iter_mut().zip(row) {
            *o = (z - max).exp();
            sum += *o;
        }
        for o in out.row_mut(t) {
            *o /= sum;
        }
    }
    out
}

/// Posteriors for a feature matrix `[T, feat_dim]`, with record.
pub fn am_forward_recorded(
    features: &RealMatrix,
    params: &ParamStore,
    cfg: &AmConfig,
) -> Result<(RealMatrix, AmRecord)> {
    cfg.validate()?;
    if features.cols() != cfg.feat_dim {
        return Err(Error::ShapeMismatch(format!(
            "features have {} dims, am expects {}",
            features.cols(),
            cfg.feat_dim
        )));
    }
    if !features.is_finite() {
        return Err(Error::InvalidInput("am features must be finite".into()));
    }
    let stacked = stack_context(features, cfg.context);
    let spec = cfg.spec()?;
    let mlp = mlp_forward(&spec, params, &stacked)?;
    let posteriors = softmax_rows(mlp.output());
    Ok((
        posteriors.clone(),
        AmRecord {
            stacked,
            mlp,
            posteriors,
            context: cfg.context,
            feat_dim: cfg.feat_dim,
        },
    ))
}

/// Posteriors for a feature matrix `[T, feat_dim]`; rows sum to one.
pub fn am_forward(
    features: &RealMatrix,
    params: &ParamStore,
    cfg: &AmConfig,
) -> Result<RealMatrix> {
    am_forward_recorded(features, params, cfg).map(|(p, _)| p)
}

/// Mean frame cross-entropy `-(1/T) sum_t ln max(p[t, s_t], floor)`.
pub fn ce_loss(posteriors: &RealMatrix, targets: &StateSequence) -> Result<f64> {
    if targets.len() != posteriors.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} posterior frames",
            targets.len(),
            posteriors.rows()
        )));
    }
    let mut acc = 0.0;
    for (t, &s) in targets.states.iter().enumerate() {
        if s >= posteriors.cols() {
            return Err(Error::InvalidInput(format!(
                "target state {s} out of range 0..{}",
                posteriors.cols()
            )));
        }
        acc -= posteriors[(t, s)].max(POSTERIOR_FLOOR).ln();
    }
    Ok(acc / targets.len() as f64)
}

/// Exact cotangent on the logits for the floored mean cross-entropy,
/// scaled by `loss_cot`.
pub fn ce_softmax_backward(
    record: &AmRecord,
    targets: &StateSequence,
    loss_cot: f64,
) -> Result<RealMatrix> {
    let p = &record.posteriors;
    if targets.len() != p.rows() {
        return Err(Error::ShapeMismatch("target length".into()));
    }
    let frames = p.rows();
    let states = p.cols();
    let inv_t = 1.0 / frames as f64;
    let mut dlogits = RealMatrix::zeros(frames, states);
    for (t, &s) in targets.states.iter().enumerate() {
        let pt = p[(t, s)];
        // d loss / d p_s = -1/(T * p_s) while above the floor, else 0.
        if pt > POSTERIOR_FLOOR {
            let dp_s = -loss_cot * inv_t / pt;
            // softmax VJP with a one-hot upstream: dz_k = p_k (dp_s [k==s] - dp_s p_s)
            for k in 0..states {
                let indicator = if k == s { 1.0 } else { 0.0 };
                dlogits[(t, k)] = p[(t, k)] * dp_s * (indicator - pt);
            }
        }
    }
    Ok(dlogits)
}

/// Backward through the AM into parameter gradients (optional) and the
/// feature cotangent (context-unstacked).
pub fn am_backward(
    record: &AmRecord,
    dlogits: &RealMatrix,
    params: &mut ParamStore,
    cfg: &AmConfig,
    accumulate_params: bool,
) -> Result<RealMatrix> {
    let spec = cfg.spec()?;
    let stacked_cot = mlp_backward(&spec, params, &record.mlp, dlogits, accumulate_params)?;
    Ok(unstack_cotangent(record, &stacked_cot))
}

/// Backward through a frozen AM: gradients flow to the features only, the
/// parameter store is never touched.
pub fn am_backward_input_only(
    record: &AmRecord,
    dlogits: &RealMatrix,
    params: &ParamStore,
    cfg: &AmConfig,
) -> Result<RealMatrix> {
    let spec = cfg.spec()?;
    let stacked_cot =
        crate::nn::mlp_backward_input_grad(&spec, params, &record.mlp, dlogits)?;
    Ok(unstack_cotangent(record, &stacked_cot))
}

/// Unstack: each stacked column (offset, dim) accumulates into the clamped
/// source frame.
fn unstack_cotangent(record: &AmRecord, stacked_cot: &RealMatrix) -> RealMatrix {
    let frames = record.stacked.rows();
    let dim = record.feat_dim;
    let context = record.context;
    let mut feat_cot = RealMatrix::zeros(frames, dim);
    for t in 0..frames {
        for j in 0..stacked_cot.cols() {
            let offset = (j / dim) as isize - context as isize;
            let src = (t as isize + offset).clamp(0, frames as isize - 1) as usize;
            feat_cot[(src, j % dim)] += stacked_cot[(t, j)];
        }
    }
    feat_cot
}

/// One training utterance: features plus aligned frame labels.
#[derive(Debug, Clone)]
pub struct AmExample {
    pub features: RealMatrix,
    pub targets: StateSequence,
}

/// Train the surrogate from a fresh initialization with per-utterance
/// gradient steps. The caller freezes the returned store before
/// adaptation.
pub fn am_train(
    dataset: &[AmExample],
    cfg: &AmConfig,
    epochs: usize,
    lr: f64,
) -> Result<(ParamStore, Vec<f64>)> {
    let mut params = cfg.init_params()?;
    let epoch_loss = am_train_from(&mut params, dataset, cfg, epochs, lr)?;
    Ok((params, epoch_loss))
}

/// Continue training an existing parameter store (e.g. adapting the
/// classifier to the front-end's output feature distribution).
pub fn am_train_from(
    params: &mut ParamStore,
    dataset: &[AmExample],
    cfg: &AmConfig,
    epochs: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("am_train on an empty dataset".into()));
    }
    for ex in dataset {
        ex.targets.validate(cfg.n_states, ex.features.rows())?;
    }
    let mut epoch_loss = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut total = 0.0;
        for ex in dataset {
            let (posteriors, record) = am_forward_recorded(&ex.features, params, cfg)?;
            total += ce_loss(&posteriors, &ex.targets)?;
            let dlogits = ce_softmax_backward(&record, &ex.targets, 1.0)?;
            params.zero_grads();
            am_backward(&record, &dlogits, params, cfg, true)?;
            params.sgd_step(lr)?;
        }
        epoch_loss.push(total / dataset.len() as f64);
    }
    Ok(epoch_loss)
}

/// Fraction of frames whose argmax posterior matches the target.
pub fn frame_accuracy(posteriors: &RealMatrix, targets: &StateSequence) -> Result<f64> {
    if targets.len() != posteriors.rows() {
        return Err(Error::ShapeMismatch("target length".into()));
    }
    let mut hits = 0usize;
    for (t, &s) in targets.states.iter().enumerate() {
        let row = posteriors.row(t);
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (k, &v) in row.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = k;
            }
        }
        if best == s {
            hits += 1;
        }
    }
    Ok(hits as f64 / targets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn tiny_cfg() -> AmConfig {
        AmConfig {
            n_states: 3,
            context: 1,
            hidden_dims: vec![8],
            feat_dim: 4,
            seed: 5,
        }
    }

    #[test]
    fn posterior_rows_are_distributions() {
        let cfg = tiny_cfg();
        let params = cfg.init_params().unwrap();
        let mut rng = Rng::new(1);
        let feats = RealMatrix::from_fn(6, 4, |_, _| rng.normal());
        let p = am_forward(&feats, &params, &cfg).unwrap();
        for t in 0..6 {
            let sum: f64 = p.row(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(p.row(t).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_output_layer_gives_uniform_posteriors() {
        let cfg = tiny_cfg();
        let mut params = cfg.init_params().unwrap();
        for v in params.value_mut("layer1.weight").unwrap().data.iter_mut() {
            *v = 0.0;
        }
        for v in params.value_mut("layer1.bias").unwrap().data.iter_mut() {
            *v = 0.0;
        }
        let mut rng = Rng::new(2);
        let feats = RealMatrix::from_fn(4, 4, |_, _| rng.normal());
        let p = am_forward(&feats, &params, &cfg).unwrap();
        for t in 0..4 {
            for k in 0..3 {
                assert!((p[(t, k)] - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ce_loss_uniform_is_log_n() {
        let p = RealMatrix::from_fn(5, 4, |_, _| 0.25);
        let targets = StateSequence {
            states: vec![0, 1, 2, 3, 0],
        };
        let loss = ce_loss(&p, &targets).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_loss_one_hot_correct_is_zero() {
        let targets = StateSequence {
            states: vec![1, 0, 2],
        };
        let p = RealMatrix::from_fn(3, 3, |t, k| {
            if k == targets.states[t] {
                1.0
            } else {
                0.0
            }
        });
        let loss = ce_loss(&p, &targets).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn ce_loss_matches_direct_sum() {
        let mut rng = Rng::new(3);
        let logits = RealMatrix::from_fn(7, 4, |_, _| rng.normal());
        let p = softmax_rows(&logits);
        let targets = StateSequence {
            states: (0..7).map(|_| rng.below(4)).collect(),
        };
        let loss = ce_loss(&p, &targets).unwrap();
        let mut direct = 0.0;
        for (t, &s) in targets.states.iter().enumerate() {
            direct -= p[(t, s)].max(POSTERIOR_FLOOR).ln();
        }
        direct /= 7.0;
        assert!((loss - direct).abs() < 1e-15);
    }

    #[test]
    fn ce_loss_rejects_length_mismatch() {
        let p = RealMatrix::from_fn(3, 2, |_, _| 0.5);
        let targets = StateSequence { states: vec![0, 1] };
        assert!(matches!(
            ce_loss(&p, &targets),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let mut params = cfg.init_params().unwrap();
        let mut rng = Rng::new(4);
        let feats = RealMatrix::from_fn(5, 4, |_, _| rng.normal());
        let targets = StateSequence {
            states: (0..5).map(|_| rng.below(3)).collect(),
        };

        let (_, record) = am_forward_recorded(&feats, &params, &cfg).unwrap();
        let dlogits = ce_softmax_backward(&record, &targets, 1.0).unwrap();
        params.zero_grads();
        am_backward(&record, &dlogits, &mut params, &cfg, true).unwrap();
        let analytic = params.flatten_grads();

        let loss_of = |s: &ParamStore| -> f64 {
            let p = am_forward(&feats, s, &cfg).unwrap();
            ce_loss(&p, &targets).unwrap()
        };
        let theta = params.flatten();
        let eps = 1e-6;
        let mut max_rel = 0.0f64;
        for i in 0..theta.len() {
            let mut sp = params.clone();
            let mut plus = theta.clone();
            plus[i] += eps;
            sp.unflatten(&plus).unwrap();
            let mut sm = params.clone();
            let mut minus = theta.clone();
            minus[i] -= eps;
            sm.unflatten(&minus).unwrap();
            let numeric = (loss_of(&sp) - loss_of(&sm)) / (2.0 * eps);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-12);
            max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
        }
        assert!(max_rel < 1e-5, "max rel err {max_rel:.3e}");
    }

    #[test]
    fn training_reduces_loss_and_freeze_holds() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(6);
        // three separable classes: mean shifts in feature space
        let mut dataset = Vec::new();
        for _ in 0..6 {
            let states: Vec<usize> = (0..10).map(|_| rng.below(3)).collect();
            let features = RealMatrix::from_fn(10, 4, |t, j| {
                states[t] as f64 * 2.0 - 2.0 + 0.3 * rng.normal() + j as f64 * 0.01
            });
            dataset.push(AmExample {
                features,
                targets: StateSequence { states },
            });
        }
        let (mut params, losses) = am_train(&dataset, &cfg, 30, 0.3).unwrap();
        assert!(
            losses.last().unwrap() < &losses[0],
            "loss did not decrease: {losses:?}"
        );
        params.freeze();
        assert!(matches!(
            params.sgd_step(0.1),
            Err(Error::FreezeViolation(_))
        ));
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(7);
        let states: Vec<usize> = (0..8).map(|_| rng.below(3)).collect();
        let features = RealMatrix::from_fn(8, 4, |_, _| rng.normal());
        let dataset = vec![AmExample {
            features,
            targets: StateSequence { states },
        }];
        let (params, _) = am_train(&dataset, &cfg, 3, 0.0).unwrap();
        let fresh = cfg.init_params().unwrap();
        assert_eq!(params.flatten(), fresh.flatten());
    }

    #[test]
    fn empty_dataset_rejected() {
        let cfg = tiny_cfg();
        assert!(matches!(
            am_train(&[], &cfg, 1, 0.1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn context_stacking_clamps_edges() {
        let feats = RealMatrix::from_fn(3, 2, |t, j| (t * 2 + j) as f64);
        let stacked = stack_context(&feats, 1);
        assert_eq!(stacked.cols(), 6);
        // frame 0: left context clamps to frame 0
        assert_eq!(stacked.row(0)[..2], [0.0, 1.0]);
        assert_eq!(stacked.row(0)[2..4], [0.0, 1.0]);
        assert_eq!(stacked.row(0)[4..6], [2.0, 3.0]);
        // frame 2: right context clamps to frame 2
        assert_eq!(stacked.row(2)[2..4], [4.0, 5.0]);
        assert_eq!(stacked.row(2)[4..6], [4.0, 5.0]);
    }
}
