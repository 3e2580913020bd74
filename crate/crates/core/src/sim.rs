//! Deterministic synthetic multi-channel scene generation.
//!
//! A scene is a far-field mixture: a harmonic "speaker" rendered as a
//! sequence of per-class templates, delayed by an integer sample count per
//! channel (anechoic steering), plus a noise field, mixed at a prescribed
//! SNR. Because the speech and noise components are synthesized separately
//! and summed, every scene carries its exact oracle decomposition, ideal
//! ratio masks and frame class labels.
//!
//! Speaker identity is the (f0, rolloff, brightness) tuple; frame classes
//! are indexed by a speaker-independent formant-like envelope center, so a
//! frame classifier can generalize across speakers while mask estimation
//! still depends on the speaker's harmonic spacing.

use num_complex::Complex64;

use crate::am::StateSequence;
use crate::beamform::BeamformerWeights;
use crate::error::{Error, Result};
use crate::linalg::RealMatrix;
use crate::maskestim::MaskPair;
use crate::rng::Rng;
use crate::signal::{stft, ComplexSpectrogram, StftConfig};

/// Speaker identity tuple: pitch, per-harmonic rolloff and a spectral
/// tilt ("brightness") in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerProfile {
    pub f0_hz: f64,
    pub rolloff: f64,
    pub brightness_hz: f64,
}

impl SpeakerProfile {
    pub fn new(f0_hz: f64, rolloff: f64, brightness_hz: f64) -> SpeakerProfile {
        SpeakerProfile {
            f0_hz,
            rolloff,
            brightness_hz,
        }
    }
}

/// One harmonic stack: the rendering template of a frame class for a
/// given speaker.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicStack {
    pub pitch_hz: f64,
    pub rolloff: f64,
    /// Formant-like envelope center (speaker independent, class specific).
    pub formant_hz: f64,
    pub formant_width_hz: f64,
    pub brightness_hz: f64,
}

/// Noise field flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Independent white noise per channel.
    DiffuseWhite,
    /// A single delayed point interferer plus a faint diffuse floor.
    CoherentPoint,
    /// Several competing harmonic sources plus a faint diffuse floor.
    BabbleMix,
}

/// Scene recipe. Identical configs produce bit-identical scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub n_channels: usize,
    pub duration_s: f64,
    pub snr_db: f64,
    pub speaker: SpeakerProfile,
    pub noise_kind: NoiseKind,
    /// Number of frame classes including the silence class 0.
    pub n_classes: usize,
    pub seed: u64,
    pub stft: StftConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_channels: 6,
            duration_s: 1.0,
            snr_db: 0.0,
            speaker: SpeakerProfile::new(185.0, 0.85, 3000.0),
            noise_kind: NoiseKind::CoherentPoint,
            n_classes: 5,
            seed: 0,
            stft: StftConfig::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.n_channels < 2 {
            return Err(Error::InvalidConfig("scene needs n_channels >= 2".into()));
        }
        if !(self.duration_s >= 0.5) {
            return Err(Error::InvalidConfig(
                "scene needs duration >= 0.5 s".into(),
            ));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidConfig("snr_db must be finite".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig(
                "scene needs n_classes >= 2 (silence plus one template)".into(),
            ));
        }
        if !(self.speaker.f0_hz > 0.0)
            || !(self.speaker.rolloff > 0.0 && self.speaker.rolloff <= 1.0)
            || !(self.speaker.brightness_hz > 0.0)
        {
            return Err(Error::InvalidConfig("speaker profile out of range".into()));
        }
        Ok(())
    }

    /// The per-class harmonic stacks this speaker renders: class 0 is
    /// silence, classes 1.. are formant positions shared across speakers.
    pub fn class_stacks(&self) -> Vec<HarmonicStack> {
        let nyquist = self.stft.sample_rate as f64 / 2.0;
        let voiced = self.n_classes - 1;
        let lo = 0.05 * nyquist;
        let hi = 0.7 * nyquist;
        (0..voiced)
            .map(|i| {
                let frac = if voiced == 1 {
                    0.5
                } else {
                    i as f64 / (voiced - 1) as f64
                };
                HarmonicStack {
                    pitch_hz: self.speaker.f0_hz,
                    rolloff: self.speaker.rolloff,
                    formant_hz: lo + frac * (hi - lo),
                    formant_width_hz: 0.12 * nyquist,
                    brightness_hz: self.speaker.brightness_hz,
                }
            })
            .collect()
    }
}

/// A generated scene with its oracle decomposition.
#[derive(Debug, Clone)]
pub struct Scene {
    /// Mixture spectrogram, exactly `x + n`.
    pub y: ComplexSpectrogram,
    /// Oracle speech component.
    pub x: ComplexSpectrogram,
    /// Oracle noise component.
    pub n: ComplexSpectrogram,
    pub ideal_masks: MaskPair,
    pub classes: StateSequence,
    pub meta: SceneConfig,
    /// Time-domain mixture `[M, samples]` for WAV export.
    pub y_wave: RealMatrix,
    /// Time-domain oracle components.
    pub x_wave: RealMatrix,
    pub n_wave: RealMatrix,
}

fn raised_cosine_fade(n: usize, fade: usize, i: usize) -> f64 {
    if i < fade {
        0.5 - 0.5 * (std::f64::consts::PI * i as f64 / fade as f64).cos()
    } else if i + fade >= n {
        let j = n - 1 - i;
        0.5 - 0.5 * (std::f64::consts::PI * j as f64 / fade as f64).cos()
    } else {
        1.0
    }
}

/// Render one harmonic stack into `dst[start..start+len]`.
fn render_stack(
    dst: &mut [f64],
    start: usize,
    len: usize,
    stack: &HarmonicStack,
    sr: f64,
    amp: f64,
    rng: &mut Rng,
) {
    let max_h = ((0.45 * sr) / stack.pitch_hz).floor() as usize;
    let n_harm = max_h.clamp(1, 40);
    let fade = (0.005 * sr) as usize;
    let mut weights = Vec::with_capacity(n_harm);
    let mut phases = Vec::with_capacity(n_harm);
    for h in 1..=n_harm {
        let freq = stack.pitch_hz * h as f64;
        let formant = {
            let d = (freq - stack.formant_hz) / stack.formant_width_hz;
            (-d * d).exp() + 0.25
        };
        let tilt = (-freq / stack.brightness_hz).exp();
        weights.push(stack.rolloff.powi(h as i32 - 1) * formant * tilt);
        phases.push(rng.range(0.0, 2.0 * std::f64::consts::PI));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    for i in 0..len {
        let t = (start + i) as f64 / sr;
        let mut v = 0.0;
        for (h, (&w, &ph)) in weights.iter().zip(&phases).enumerate() {
            v += w * (two_pi * stack.pitch_hz * (h + 1) as f64 * t + ph).sin();
        }
        dst[start + i] += amp * raised_cosine_fade(len, fade.max(1), i) * v;
    }
}

/// Speech timeline on the reference channel plus the per-sample class id.
fn synthesize_speech(
    cfg: &SceneConfig,
    n_samples: usize,
    rng: &mut Rng,
) -> (Vec<f64>, Vec<usize>) {
    let sr = cfg.stft.sample_rate as f64;
    let stacks = cfg.class_stacks();
    let mut wave = vec![0.0; n_samples];
    let mut class_of_sample = vec![0usize; n_samples];
    let mut pos = 0usize;
    let mut force_voiced = true;
    while pos < n_samples {
        let seg_len = ((rng.range(0.08, 0.16)) * sr) as usize;
        let seg_len = seg_len.min(n_samples - pos).max(1);
        let silent = !force_voiced && rng.uniform() < 0.25;
        if silent {
            force_voiced = true;
        } else {
            let class = 1 + rng.below(stacks.len());
            let amp = rng.range(0.5, 1.0);
            render_stack(&mut wave, pos, seg_len, &stacks[class - 1], sr, amp, rng);
            for c in class_of_sample.iter_mut().skip(pos).take(seg_len) {
                *c = class;
            }
            force_voiced = false;
        }
        pos += seg_len;
    }
    (wave, class_of_sample)
}

/// Delay a mono source into `n_channels` far-field copies.
fn steer(source: &[f64], delays: &[usize]) -> RealMatrix {
    let n = source.len();
    RealMatrix::from_fn(delays.len(), n, |m, t| {
        if t >= delays[m] {
            source[t - delays[m]]
        } else {
            0.0
        }
    })
}

fn random_delays(rng: &mut Rng, channels: usize, max_delay: usize, zero_first: bool) -> Vec<usize> {
    (0..channels)
        .map(|m| {
            if m == 0 && zero_first {
                0
            } else {
                rng.below(max_delay + 1)
            }
        })
        .collect()
}

fn synthesize_noise(cfg: &SceneConfig, n_samples: usize, rng: &mut Rng) -> RealMatrix {
    let channels = cfg.n_channels;
    let sr = cfg.stft.sample_rate as f64;
    match cfg.noise_kind {
        NoiseKind::DiffuseWhite => {
            RealMatrix::from_fn(channels, n_samples, |_, _| rng.normal())
        }
        NoiseKind::CoherentPoint => {
            // Spectrally tilted point interferer: white noise through a
            // leaky integrator, roughly tracking the speech spectral tilt
            // so no frequency band is hopelessly buried for either source.
            let mut source = Vec::with_capacity(n_samples);
            let mut state = 0.0;
            for _ in 0..n_samples {
                state = 0.85 * state + 0.15 * rng.normal();
                source.push(state + 0.05 * rng.normal());
            }
            let delays = random_delays(rng, channels, 12, false);
            let mut out = steer(&source, &delays);
            // faint diffuse floor keeps the noise covariance full rank
            let floor = 0.45 * (source.iter().map(|v| v * v).sum::<f64>() / n_samples as f64).sqrt();
            for v in out.data_mut().iter_mut() {
                *v += floor * rng.normal();
            }
            out
        }
        NoiseKind::BabbleMix => {
            let mut mixed = RealMatrix::zeros(channels, n_samples);
            for _ in 0..3 {
                let stack = HarmonicStack {
                    pitch_hz: rng.range(90.0, 280.0),
                    rolloff: rng.range(0.75, 0.9),
                    formant_hz: rng.range(0.05 * sr / 2.0, 0.6 * sr / 2.0),
                    formant_width_hz: 0.2 * sr / 2.0,
                    brightness_hz: rng.range(1500.0, 4000.0),
                };
                let mut source = vec![0.0; n_samples];
                render_stack(&mut source, 0, n_samples, &stack, sr, 1.0, rng);
                let delays = random_delays(rng, channels, 12, false);
                let steered = steer(&source, &delays);
                for (dst, src) in mixed.data_mut().iter_mut().zip(steered.data()) {
                    *dst += src;
                }
            }
            for v in mixed.data_mut().iter_mut() {
                *v += 0.02 * rng.normal();
            }
            mixed
        }
    }
}

/// Generate a scene. Deterministic given the config (including its seed).
pub fn make_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let sr = cfg.stft.sample_rate as f64;
    let n_samples = (cfg.duration_s * sr) as usize;
    if n_samples < cfg.stft.win_len {
        return Err(Error::InvalidConfig(
            "duration shorter than one analysis window".into(),
        ));
    }

    let (speech_ref, class_of_sample) = synthesize_speech(cfg, n_samples, &mut rng);
    let speech_delays = random_delays(&mut rng, cfg.n_channels, 8, true);
    let x_wave = steer(&speech_ref, &speech_delays);

    let noise_raw = synthesize_noise(cfg, n_samples, &mut rng);

    // Scale noise so the whole-utterance, all-channel energy ratio hits
    // snr_db exactly.
    let ex: f64 = x_wave.data().iter().map(|v| v * v).sum();
    let en_raw: f64 = noise_raw.data().iter().map(|v| v * v).sum();
    if ex <= 0.0 {
        return Err(Error::Degenerate("scene rendered zero speech energy".into()));
    }
    if en_raw <= 0.0 {
        return Err(Error::Degenerate("scene rendered zero noise energy".into()));
    }
    let alpha = (ex / (en_raw * 10f64.powf(cfg.snr_db / 10.0))).sqrt();
    let mut n_wave = noise_raw;
    for v in n_wave.data_mut().iter_mut() {
        *v *= alpha;
    }

    let mut y_wave = RealMatrix::zeros(cfg.n_channels, n_samples);
    for (dst, (a, b)) in y_wave
        .data_mut()
        .iter_mut()
        .zip(x_wave.data().iter().zip(n_wave.data()))
    {
        *dst = a + b;
    }

    let x = stft(&x_wave, &cfg.stft)?;
    let n = stft(&n_wave, &cfg.stft)?;
    let y = x.add(&n);

    let ideal_masks = ideal_masks(&x, &n)?;

    // Frame label: class of the sample at the analysis-window center on
    // the reference timeline. Silent segments carry class 0.
    let frames = y.frames();
    let states: Vec<usize> = (0..frames)
        .map(|t| {
            let center = t * cfg.stft.hop + cfg.stft.win_len / 2;
            class_of_sample[center.min(n_samples - 1)]
        })
        .collect();

    Ok(Scene {
        y,
        x,
        n,
        ideal_masks,
        classes: StateSequence { states },
        meta: cfg.clone(),
        y_wave,
        x_wave,
        n_wave,
    })
}

/// Ideal ratio masks from the oracle components on reference channel 0:
/// speech = |X|^2 / (|X|^2 + |N|^2), noise = 1 - speech. Cells where both
/// components vanish get the uninformative value 0.5.
pub fn ideal_masks(x: &ComplexSpectrogram, n: &ComplexSpectrogram) -> Result<MaskPair> {
    if x.channels() != n.channels() || x.frames() != n.frames() || x.bins() != n.bins() {
        return Err(Error::ShapeMismatch(format!(
            "oracle components disagree: {}x{}x{} vs {}x{}x{}",
            x.channels(),
            x.frames(),
            x.bins(),
            n.channels(),
            n.frames(),
            n.bins()
        )));
    }
    let frames = x.frames();
    let bins = x.bins();
    let speech = RealMatrix::from_fn(frames, bins, |t, f| {
        let px = x.at(0, t, f).norm_sqr();
        let pn = n.at(0, t, f).norm_sqr();
        let denom = px + pn;
        if denom > 0.0 {
            px / denom
        } else {
            0.5
        }
    });
    let noise = RealMatrix::from_fn(frames, bins, |t, f| 1.0 - speech[(t, f)]);
    Ok(MaskPair { speech, noise })
}

/// Binary variant of the ideal masks: speech mask is one where the ratio
/// exceeds `threshold`. Available as an alternative pretraining target;
/// the plain ratio masks are the default.
pub fn ideal_masks_thresholded(
    x: &ComplexSpectrogram,
    n: &ComplexSpectrogram,
    threshold: f64,
) -> Result<MaskPair> {
    let ratio = ideal_masks(x, n)?;
    let frames = ratio.speech.rows();
    let bins = ratio.speech.cols();
    let speech = RealMatrix::from_fn(frames, bins, |t, f| {
        if ratio.speech[(t, f)] > threshold {
            1.0
        } else {
            0.0
        }
    });
    let noise = RealMatrix::from_fn(frames, bins, |t, f| 1.0 - speech[(t, f)]);
    Ok(MaskPair { speech, noise })
}

/// STFT-domain SNR of one channel of a component pair, in dB.
fn channel_snr_db(x: &ComplexSpectrogram, n: &ComplexSpectrogram, m: usize) -> f64 {
    let ex: f64 = (0..x.frames())
        .flat_map(|t| (0..x.bins()).map(move |f| (t, f)))
        .map(|(t, f)| x.at(m, t, f).norm_sqr())
        .sum();
    let en: f64 = (0..n.frames())
        .flat_map(|t| (0..n.bins()).map(move |f| (t, f)))
        .map(|(t, f)| n.at(m, t, f).norm_sqr())
        .sum();
    if en <= 0.0 {
        return f64::INFINITY;
    }
    10.0 * (ex / en).log10()
}

/// Best single-channel input SNR (STFT domain) of a scene, in dB.
pub fn best_input_snr_db(scene: &Scene) -> f64 {
    (0..scene.y.channels())
        .map(|m| channel_snr_db(&scene.x, &scene.n, m))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Oracle output-SNR gain of a beamformer on a scene, in dB:
/// `10 log10(sum |w^H X|^2 / sum |w^H N|^2)` minus the best input SNR.
/// Zero noise energy at the output yields the +inf sentinel.
pub fn snr_gain(
    enhanced: &ComplexSpectrogram,
    scene: &Scene,
    w: &BeamformerWeights,
) -> Result<f64> {
    if w.bins() != scene.y.bins() || w.channels() != scene.y.channels() {
        return Err(Error::ShapeMismatch(
            "weights do not match the scene geometry".into(),
        ));
    }
    if enhanced.frames() != scene.y.frames() || enhanced.bins() != scene.y.bins() {
        return Err(Error::ShapeMismatch(
            "enhanced spectrogram does not match the scene".into(),
        ));
    }
    let mut ex = 0.0;
    let mut en = 0.0;
    for t in 0..scene.y.frames() {
        for f in 0..scene.y.bins() {
            let mut sx = Complex64::new(0.0, 0.0);
            let mut sn = Complex64::new(0.0, 0.0);
            for m in 0..scene.y.channels() {
                let wc = w.w[f][m].conj();
                sx += wc * scene.x.at(m, t, f);
                sn += wc * scene.n.at(m, t, f);
            }
            ex += sx.norm_sqr();
            en += sn.norm_sqr();
        }
    }
    if en <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let out_db = 10.0 * (ex / en).log10();
    Ok(out_db - best_input_snr_db(scene))
}

/// Whole-utterance, all-channel time-domain SNR of the scene in dB. By
/// construction this equals the configured snr_db up to rounding.
pub fn measured_snr_db(scene: &Scene) -> f64 {
    let ex: f64 = scene.x_wave.data().iter().map(|v| v * v).sum();
    let en: f64 = scene.n_wave.data().iter().map(|v| v * v).sum();
    10.0 * (ex / en).log10()
}
