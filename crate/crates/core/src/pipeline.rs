//! The integrated utterance pipeline and its end-to-end reverse pass.
//!
//! Forward: per-channel mask estimation, median pooling, mask-weighted
//! covariances, the noise-covariance solve, the unrolled QR eigensolver,
//! BAN, beamformer application, log-mel features, the frozen acoustic
//! model and the frame cross-entropy. Every stage leaves an immutable
//! snapshot in the [`PipelineRecord`], so the reverse pass is pure and
//! utterances can run in parallel; accumulating the resulting gradients
//! into a parameter store is the caller's single synchronization point.

use num_complex::Complex64;

use crate::am::{
    am_backward_input_only, am_forward_recorded, ce_loss, ce_softmax_backward, AmConfig, AmRecord,
    StateSequence,
};
use crate::beamform::{ban_gain, spatial_covariance, CovarianceKind, SpatialCovariance};
use crate::error::{Error, Result};
use crate::grad::{apply_vjp, ban_vjp, cov_vjp, eig_chain_forward, eig_chain_vjp, EigChainRecord};
use crate::linalg::{ComplexMatrix, RealMatrix};
use crate::maskestim::{
    self, forward_recorded, median_backward, median_mask_recorded, MaskNetConfig, MaskNetRecord,
    MedianRecord,
};
use crate::nn::ParamStore;
use crate::signal::{log_mel, log_mel_vjp, ComplexSpectrogram, MelBank};

/// Everything the integrated pipeline needs besides data and parameters.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mel: MelBank,
    pub masknet: MaskNetConfig,
    pub am: AmConfig,
    pub k_iters: usize,
    pub loading: f64,
}

impl PipelineConfig {
    pub fn validate_for(&self, y: &ComplexSpectrogram) -> Result<()> {
        if self.masknet.input_dim != y.bins() {
            return Err(Error::ShapeMismatch(format!(
                "mask net expects {} bins, spectrogram has {}",
                self.masknet.input_dim,
                y.bins()
            )));
        }
        if self.mel.n_bins() != y.bins() {
            return Err(Error::ShapeMismatch(format!(
                "mel bank expects {} bins, spectrogram has {}",
                self.mel.n_bins(),
                y.bins()
            )));
        }
        if self.am.feat_dim != self.mel.n_mels() {
            return Err(Error::ShapeMismatch(format!(
                "am expects {} features, mel bank yields {}",
                self.am.feat_dim,
                self.mel.n_mels()
            )));
        }
        if self.k_iters < 1 {
            return Err(Error::InvalidConfig("pipeline needs k_iters >= 1".into()));
        }
        Ok(())
    }
}

/// Immutable forward record of one utterance.
#[derive(Debug, Clone)]
pub struct PipelineRecord {
    y: ComplexSpectrogram,
    mask_records: Vec<MaskNetRecord>,
    pooled_speech: RealMatrix,
    pooled_noise: RealMatrix,
    median_speech: MedianRecord,
    median_noise: MedianRecord,
    cov_xx: SpatialCovariance,
    cov_nn: SpatialCovariance,
    /// Per-bin eigensolver chain; `None` where the bin is degenerate.
    eig: Vec<Option<EigChainRecord>>,
    /// Per-bin BAN-scaled weights.
    w_opt: Vec<Vec<Complex64>>,
    enhanced: ComplexSpectrogram,
    power: RealMatrix,
    feats: RealMatrix,
    am_record: AmRecord,
    targets: StateSequence,
    pub loss: f64,
}

impl PipelineRecord {
    pub fn enhanced(&self) -> &ComplexSpectrogram {
        &self.enhanced
    }

    pub fn beamformer_weights(&self) -> &[Vec<Complex64>] {
        &self.w_opt
    }

    pub fn pooled_masks(&self) -> (&RealMatrix, &RealMatrix) {
        (&self.pooled_speech, &self.pooled_noise)
    }

    pub fn posteriors(&self) -> &RealMatrix {
        &self.am_record.posteriors
    }

    pub fn covariances(&self) -> (&SpatialCovariance, &SpatialCovariance) {
        (&self.cov_xx, &self.cov_nn)
    }

    pub fn features(&self) -> &RealMatrix {
        &self.feats
    }
}

/// Run the full integrated pipeline on one utterance, producing the frame
/// cross-entropy and the forward record needed for [`pipeline_vjp`].
pub fn pipeline_forward(
    y: &ComplexSpectrogram,
    targets: &StateSequence,
    mask_params: &ParamStore,
    am_params: &ParamStore,
    cfg: &PipelineConfig,
) -> Result<(f64, PipelineRecord)> {
    cfg.validate_for(y)?;
    targets.validate(cfg.am.n_states, y.frames())?;
    let channels = y.channels();
    let frames = y.frames();
    let bins = y.bins();

    // per-channel mask estimation
    let mut mask_records = Vec::with_capacity(channels);
    let mut speech_masks = Vec::with_capacity(channels);
    let mut noise_masks = Vec::with_capacity(channels);
    for m in 0..channels {
        let magnitude = y.magnitude(m);
        let (pair, record) = forward_recorded(&magnitude, mask_params, &cfg.masknet)?;
        speech_masks.push(pair.speech);
        noise_masks.push(pair.noise);
        mask_records.push(record);
    }
    let (pooled_speech, median_speech) = median_mask_recorded(&speech_masks)?;
    let (pooled_noise, median_noise) = median_mask_recorded(&noise_masks)?;

    // mask-weighted covariances
    let cov_xx = spatial_covariance(y, &pooled_speech, CovarianceKind::Speech)?;
    let cov_nn = spatial_covariance(y, &pooled_noise, CovarianceKind::Noise)?;

    // per-bin eigensolver chain and BAN
    let mut eig = Vec::with_capacity(bins);
    let mut w_opt = Vec::with_capacity(bins);
    for f in 0..bins {
        match eig_chain_forward(&cov_xx.phi[f], &cov_nn.phi[f], cfg.k_iters, cfg.loading) {
            Ok(record) => {
                let g = ban_gain(&record.v, &cov_nn.phi[f]);
                w_opt.push(record.v.iter().map(|z| z * g).collect());
                eig.push(Some(record));
            }
            Err(Error::SingularCovariance(_)) | Err(Error::Degenerate(_)) => {
                w_opt.push(vec![Complex64::new(0.0, 0.0); channels]);
                eig.push(None);
            }
            Err(e) => return Err(e),
        }
    }

    // beamformer application and features
    let mut enhanced = ComplexSpectrogram::zeros(1, frames, bins, y.config);
    for t in 0..frames {
        for f in 0..bins {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..channels {
                acc += w_opt[f][m].conj() * y.at(m, t, f);
            }
            *enhanced.at_mut(0, t, f) = acc;
        }
    }
    let power = enhanced.power(0);
    let mut feats = RealMatrix::zeros(frames, cfg.mel.n_mels());
    for t in 0..frames {
        let row = log_mel(power.row(t), &cfg.mel)?;
        feats.row_mut(t).copy_from_slice(&row);
    }

    let (posteriors, am_record) = am_forward_recorded(&feats, am_params, &cfg.am)?;
    let loss = ce_loss(&posteriors, targets)?;

    Ok((
        loss,
        PipelineRecord {
            y: y.clone(),
            mask_records,
            pooled_speech,
            pooled_noise,
            median_speech,
            median_noise,
            cov_xx,
            cov_nn,
            eig,
            w_opt,
            enhanced,
            power,
            feats,
            am_record,
            targets: targets.clone(),
            loss,
        },
    ))
}

/// Reverse pass of the full pipeline from the scalar loss cotangent into
/// the mask estimator's gradient buffers. The acoustic model is read-only
/// here: gradients flow through it to the features but its parameters are
/// untouched by construction.
pub fn pipeline_vjp(
    record: &PipelineRecord,
    loss_cot: f64,
    mask_params: &mut ParamStore,
    am_params: &ParamStore,
    cfg: &PipelineConfig,
) -> Result<()> {
    let (xx_bars, nn_bars) = backward_to_covariances(record, loss_cot, am_params, cfg)?;
    backward_from_covariances(record, &xx_bars, &nn_bars, mask_params)
}

/// Variant that also accumulates acoustic-model gradients, exposing joint
/// front-end/back-end training. Fails with a freeze violation if the AM
/// store is frozen.
pub fn pipeline_vjp_joint(
    record: &PipelineRecord,
    loss_cot: f64,
    mask_params: &mut ParamStore,
    am_params: &mut ParamStore,
    cfg: &PipelineConfig,
) -> Result<()> {
    let dlogits = ce_softmax_backward(&record.am_record, &record.targets, loss_cot)?;
    let feat_cot = crate::am::am_backward(&record.am_record, &dlogits, am_params, &cfg.am, true)?;
    let (xx_bars, nn_bars) = covariance_cotangents(record, &feat_cot, cfg)?;
    backward_from_covariances(record, &xx_bars, &nn_bars, mask_params)
}

fn backward_to_covariances(
    record: &PipelineRecord,
    loss_cot: f64,
    am_params: &ParamStore,
    cfg: &PipelineConfig,
) -> Result<(Vec<ComplexMatrix>, Vec<ComplexMatrix>)> {
    let dlogits = ce_softmax_backward(&record.am_record, &record.targets, loss_cot)?;
    let feat_cot = am_backward_input_only(&record.am_record, &dlogits, am_params, &cfg.am)?;
    covariance_cotangents(record, &feat_cot, cfg)
}

/// From the feature cotangent down to per-bin covariance cotangents.
fn covariance_cotangents(
    record: &PipelineRecord,
    feat_cot: &RealMatrix,
    cfg: &PipelineConfig,
) -> Result<(Vec<ComplexMatrix>, Vec<ComplexMatrix>)> {
    let frames = record.y.frames();
    let bins = record.y.bins();
    let channels = record.y.channels();

    // log-mel and |.|^2
    let mut s_bar = ComplexSpectrogram::zeros(1, frames, bins, record.y.config);
    for t in 0..frames {
        let p_bar = log_mel_vjp(record.power.row(t), &cfg.mel, feat_cot.row(t))?;
        for f in 0..bins {
            *s_bar.at_mut(0, t, f) = 2.0 * p_bar[f] * record.enhanced.at(0, t, f);
        }
    }

    // beamformer application
    let w_opt_bar = apply_vjp(&record.y, &s_bar);

    // BAN and eigensolver chain per bin
    let mut xx_bars = Vec::with_capacity(bins);
    let mut nn_bars = Vec::with_capacity(bins);
    for f in 0..bins {
        match &record.eig[f] {
            Some(eig_rec) => {
                let (v_bar, nn_ban_bar) = ban_vjp(&eig_rec.v, &record.cov_nn.phi[f], &w_opt_bar[f])?;
                let (xx_bar, nn_chain_bar) = eig_chain_vjp(eig_rec, &v_bar, 0.0)?;
                xx_bars.push(xx_bar);
                nn_bars.push(nn_chain_bar.add(&nn_ban_bar));
            }
            None => {
                xx_bars.push(ComplexMatrix::zeros(channels, channels));
                nn_bars.push(ComplexMatrix::zeros(channels, channels));
            }
        }
    }
    Ok((xx_bars, nn_bars))
}

/// From covariance cotangents through the masks into the mask estimator.
fn backward_from_covariances(
    record: &PipelineRecord,
    xx_bars: &[ComplexMatrix],
    nn_bars: &[ComplexMatrix],
    mask_params: &mut ParamStore,
) -> Result<()> {
    let channels = record.y.channels();
    let speech_mask_bar = cov_vjp(&record.y, &record.pooled_speech, xx_bars)?;
    let noise_mask_bar = cov_vjp(&record.y, &record.pooled_noise, nn_bars)?;
    let speech_cots = median_backward(&record.median_speech, &speech_mask_bar, channels)?;
    let noise_cots = median_backward(&record.median_noise, &noise_mask_bar, channels)?;
    for m in 0..channels {
        maskestim::backward(
            &record.mask_records[m],
            &speech_cots[m],
            &noise_cots[m],
            mask_params,
        )?;
    }
    Ok(())
}

/// Tiny fixed-shape pipeline instance for the finite-difference registry:
/// a 2-channel, 6-frame, 5-bin scene with a 2-layer mask net, probed as a
/// function of the mask estimator's parameters.
pub(crate) fn build_pipeline_check_op(
    rng: &mut crate::rng::Rng,
) -> Result<crate::grad::CheckableOpParts> {
    use crate::signal::{StftConfig, WindowKind};
    let stft = StftConfig {
        sample_rate: 1000,
        win_len: 8,
        hop: 4,
        dft_size: 8,
        window_kind: WindowKind::Blackman,
    };
    let (channels, frames, bins) = (2usize, 6usize, stft.n_bins());
    let mel = MelBank::new(3, &stft)?;
    let masknet = MaskNetConfig::new(bins, vec![6], rng.next_u64());
    let am = AmConfig {
        n_states: 3,
        context: 1,
        hidden_dims: vec![6],
        feat_dim: 3,
        seed: rng.next_u64(),
    };
    let cfg = PipelineConfig {
        mel,
        masknet,
        am: am.clone(),
        k_iters: 5,
        loading: 1e-4,
    };
    let mut y = ComplexSpectrogram::zeros(channels, frames, bins, stft);
    for m in 0..channels {
        for t in 0..frames {
            for f in 0..bins {
                *y.at_mut(m, t, f) = Complex64::new(rng.normal(), rng.normal());
            }
        }
    }
    let targets = StateSequence {
        states: (0..frames).map(|_| rng.below(am.n_states)).collect(),
    };
    let mut am_params = am.init_params()?;
    am_params.freeze();
    let mut mask_params = maskestim::init_params(&cfg.masknet)?;

    let (_, record) = pipeline_forward(&y, &targets, &mask_params, &am_params, &cfg)?;
    mask_params.zero_grads();
    pipeline_vjp(&record, 1.0, &mut mask_params, &am_params, &cfg)?;
    assert!(am_params.grads_are_zero());
    let analytic = mask_params.flatten_grads();
    let point = mask_params.flatten();
    let base = mask_params.clone();
    let cfg_cl = cfg;
    Ok(crate::grad::CheckableOpParts {
        point,
        scalar: Box::new(move |x: &[f64]| {
            let mut s = base.clone();
            s.unflatten(x).unwrap();
            let (loss, _) = pipeline_forward(&y, &targets, &s, &am_params, &cfg_cl).unwrap();
            loss
        }),
        analytic,
    })
}
