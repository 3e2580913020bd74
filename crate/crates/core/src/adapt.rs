//! Two-pass speaker adaptation: generate first-pass frame targets, then
//! retrain only the mask estimator through the frozen integrated pipeline.
//!
//! The update is plain gradient descent with a fixed learning rate; each
//! epoch accumulates gradients over all of the speaker's utterances and
//! applies a single step (batch = speaker). Everything except the mask
//! estimator is bit-identical before and after, which the caller can audit
//! through parameter digests.

use crate::am::{frame_accuracy, StateSequence};
use crate::beamform::{BeamformerVariant, BeamformerWeights};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::pipeline::{pipeline_forward, pipeline_vjp, PipelineConfig, PipelineRecord};
use crate::sim::{snr_gain, Scene};

/// Where adaptation targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// The simulator's true frame classes.
    Oracle,
    /// Per-frame argmax of the current system's posteriors.
    FirstPassArgmax,
}

/// Adaptation hyper-parameters.
#[derive(Debug, Clone)]
pub struct AdaptConfig {
    pub lr: f64,
    pub epochs: usize,
    pub k_iters: usize,
    pub loading: f64,
    pub target_mode: TargetMode,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            lr: 2.0,
            epochs: 12,
            k_iters: 5,
            loading: 1e-6,
            target_mode: TargetMode::Oracle,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("adapt needs lr > 0".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("adapt needs epochs >= 1".into()));
        }
        if self.k_iters < 1 {
            return Err(Error::InvalidConfig("adapt needs k_iters >= 1".into()));
        }
        Ok(())
    }
}

/// The full integrated system: mask estimator parameters, frozen AM
/// parameters, and the pipeline wiring.
#[derive(Debug, Clone)]
pub struct System {
    pub mask_params: ParamStore,
    pub am_params: ParamStore,
    pub pipeline: PipelineConfig,
}

impl System {
    fn check_initialized(&self) -> Result<()> {
        if self.mask_params.is_empty() || self.am_params.is_empty() {
            return Err(Error::StateError(
                "system is not initialized: missing parameters".into(),
            ));
        }
        Ok(())
    }

    /// Run the pipeline on one scene against the given targets.
    pub fn forward(&self, scene: &Scene, targets: &StateSequence) -> Result<(f64, PipelineRecord)> {
        pipeline_forward(
            &scene.y,
            targets,
            &self.mask_params,
            &self.am_params,
            &self.pipeline,
        )
    }
}

/// Beamformer weights carried by a pipeline record, packaged for the
/// oracle SNR metric.
pub fn record_weights(record: &PipelineRecord) -> BeamformerWeights {
    let w = record.beamformer_weights().to_vec();
    let degenerate = w
        .iter()
        .map(|bin| bin.iter().all(|z| z.re == 0.0 && z.im == 0.0))
        .collect();
    BeamformerWeights {
        w,
        variant: BeamformerVariant::Opt,
        ban_scale: None,
        degenerate,
    }
}

/// First-pass targets for each utterance: oracle classes or the argmax of
/// the current system's posteriors on its own beamformed features.
pub fn first_pass_targets(
    utterances: &[Scene],
    system: &System,
    mode: TargetMode,
) -> Result<Vec<StateSequence>> {
    system.check_initialized()?;
    match mode {
        TargetMode::Oracle => Ok(utterances.iter().map(|s| s.classes.clone()).collect()),
        TargetMode::FirstPassArgmax => {
            let mut out = Vec::with_capacity(utterances.len());
            for scene in utterances {
                // the loss target is irrelevant for decoding; reuse oracle
                // shapes to drive the forward pass
                let (_, record) = system.forward(scene, &scene.classes)?;
                let posteriors = record.posteriors();
                let states = (0..posteriors.rows())
                    .map(|t| {
                        let row = posteriors.row(t);
                        let mut best = 0;
                        let mut best_v = f64::NEG_INFINITY;
                        for (k, &v) in row.iter().enumerate() {
                            if v > best_v {
                                best_v = v;
                                best = k;
                            }
                        }
                        best
                    })
                    .collect();
                out.push(StateSequence { states });
            }
            Ok(out)
        }
    }
}

/// Metrics slice over a scene set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub frame_accuracy: f64,
    pub mean_snr_gain_db: f64,
    pub mean_ce: f64,
    pub utterances: usize,
}

/// Per-epoch loss trajectory plus before/after metrics of an adaptation
/// run.
#[derive(Debug, Clone)]
pub struct AdaptReport {
    pub epoch_loss: Vec<f64>,
    pub pre: EvalMetrics,
    pub post: EvalMetrics,
    pub utterances: usize,
}

/// Frame accuracy, oracle SNR gain and cross-entropy of the system over a
/// scene set, judged against the simulator's ground truth.
pub fn evaluate(system: &System, scenes: &[Scene]) -> Result<EvalMetrics> {
    if scenes.is_empty() {
        return Err(Error::InvalidInput("evaluate on an empty scene set".into()));
    }
    system.check_initialized()?;
    let mut acc = 0.0;
    let mut gain = 0.0;
    let mut ce = 0.0;
    for scene in scenes {
        let (loss, record) = system.forward(scene, &scene.classes)?;
        ce += loss;
        acc += frame_accuracy(record.posteriors(), &scene.classes)?;
        let weights = record_weights(&record);
        gain += snr_gain(record.enhanced(), scene, &weights)?;
    }
    let n = scenes.len() as f64;
    Ok(EvalMetrics {
        frame_accuracy: acc / n,
        mean_snr_gain_db: gain / n,
        mean_ce: ce / n,
        utterances: scenes.len(),
    })
}

/// Retrain only the mask estimator through the frozen pipeline toward the
/// given targets. Returns the adapted parameters and a report; the input
/// system is untouched.
pub fn adapt_mask_estimator(
    utterances: &[Scene],
    targets: &[StateSequence],
    cfg: &AdaptConfig,
    system: &System,
) -> Result<(ParamStore, AdaptReport)> {
    cfg.validate()?;
    system.check_initialized()?;
    if utterances.is_empty() {
        return Err(Error::InvalidInput("adapt on an empty utterance set".into()));
    }
    if targets.len() != utterances.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} target sequences for {} utterances",
            targets.len(),
            utterances.len()
        )));
    }
    if !system.am_params.is_frozen() {
        return Err(Error::FreezeViolation(
            "adaptation requires a frozen acoustic model".into(),
        ));
    }

    let mut pipeline = system.pipeline.clone();
    pipeline.k_iters = cfg.k_iters;
    pipeline.loading = cfg.loading;
    let adapted_system = System {
        mask_params: system.mask_params.clone(),
        am_params: system.am_params.clone(),
        pipeline: pipeline.clone(),
    };

    let pre = evaluate(&adapted_system, utterances)?;

    let mut mask_params = adapted_system.mask_params;
    mask_params.unfreeze();
    let per_utt = 1.0 / utterances.len() as f64;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        mask_params.zero_grads();
        let mut total = 0.0;
        for (scene, target) in utterances.iter().zip(targets) {
            let (loss, record) = pipeline_forward(
                &scene.y,
                target,
                &mask_params,
                &system.am_params,
                &pipeline,
            )?;
            total += loss;
            pipeline_vjp(
                &record,
                per_utt,
                &mut mask_params,
                &system.am_params,
                &pipeline,
            )?;
        }
        mask_params.sgd_step(cfg.lr)?;
        epoch_loss.push(total * per_utt);
    }

    let adapted = System {
        mask_params: mask_params.clone(),
        am_params: system.am_params.clone(),
        pipeline,
    };
    let post = evaluate(&adapted, utterances)?;

    Ok((
        mask_params,
        AdaptReport {
            epoch_loss,
            pre,
            post,
            utterances: utterances.len(),
        },
    ))
}
