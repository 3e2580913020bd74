//! Browser demo: explore synthetic scenes, GEV+BAN beamforming and the
//! QR eigensolver interactively.
//!
//! The heavy lifting lives in the core crate; this module renders
//! spectrograms and masks as RGBA buffers for a canvas and exposes a few
//! scalar metrics. Everything is deterministic in the seed.

use num_complex::Complex64;
use wasm_bindgen::prelude::*;

use maskbeam::beamform::{self, CovarianceKind};
use maskbeam::linalg::{self, ComplexMatrix, RealMatrix};
use maskbeam::rng::Rng;
use maskbeam::signal::{ComplexSpectrogram, StftConfig};
use maskbeam::sim::{self, make_scene, NoiseKind, Scene, SceneConfig, SpeakerProfile};

fn demo_stft() -> StftConfig {
    StftConfig {
        win_len: 256,
        hop: 128,
        dft_size: 256,
        ..StftConfig::default()
    }
}

/// Compact approximation of the viridis colormap.
fn viridis(x: f64) -> [u8; 3] {
    const STOPS: [(f64, [f64; 3]); 6] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.2, [59.0, 82.0, 139.0]),
        (0.4, [33.0, 145.0, 140.0]),
        (0.6, [94.0, 201.0, 98.0]),
        (0.8, [192.0, 223.0, 37.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let x = x.clamp(0.0, 1.0);
    let mut lo = STOPS[0];
    let mut hi = STOPS[STOPS.len() - 1];
    for w in STOPS.windows(2) {
        if x >= w[0].0 && x <= w[1].0 {
            lo = w[0];
            hi = w[1];
            break;
        }
    }
    let t = if hi.0 > lo.0 { (x - lo.0) / (hi.0 - lo.0) } else { 0.0 };
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (lo.1[c] + t * (hi.1[c] - lo.1[c])).round() as u8;
    }
    out
}

/// Render a [T, F] matrix as RGBA with time on x and frequency on y
/// (low bins at the bottom), normalizing values to [lo, hi].
fn render_rgba(m: &RealMatrix, lo: f64, hi: f64) -> Vec<u8> {
    let (t_len, f_len) = (m.rows(), m.cols());
    let mut out = vec![0u8; t_len * f_len * 4];
    for y in 0..f_len {
        let f = f_len - 1 - y;
        for x in 0..t_len {
            let v = (m[(x, f)] - lo) / (hi - lo);
            let [r, g, b] = viridis(v);
            let idx = 4 * (y * t_len + x);
            out[idx] = r;
            out[idx + 1] = g;
            out[idx + 2] = b;
            out[idx + 3] = 255;
        }
    }
    out
}

fn log_magnitude(spec: &ComplexSpectrogram, channel: usize) -> RealMatrix {
    RealMatrix::from_fn(spec.frames(), spec.bins(), |t, f| {
        (spec.at(channel, t, f).norm_sqr() + 1e-12).ln()
    })
}

fn noise_kind(id: u32) -> NoiseKind {
    match id {
        0 => NoiseKind::DiffuseWhite,
        1 => NoiseKind::CoherentPoint,
        _ => NoiseKind::BabbleMix,
    }
}

/// One synthetic multi-channel scene plus cached rendering state.
#[wasm_bindgen]
pub struct DemoScene {
    scene: Scene,
}

#[wasm_bindgen]
impl DemoScene {
    /// Build a scene from the interactive parameters.
    /// `noise`: 0 diffuse white, 1 coherent point, 2 babble mix.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, snr_db: f64, noise: u32, f0_hz: f64) -> Result<DemoScene, JsValue> {
        let cfg = SceneConfig {
            n_channels: 4,
            duration_s: 1.0,
            snr_db,
            speaker: SpeakerProfile::new(f0_hz.clamp(60.0, 500.0), 0.85, 3000.0),
            noise_kind: noise_kind(noise),
            n_classes: 5,
            seed: seed as u64,
            stft: demo_stft(),
        };
        let scene = make_scene(&cfg).map_err(|e| JsValue::from_str(&e.to_string()))?;
        Ok(DemoScene { scene })
    }

    pub fn width(&self) -> u32 {
        self.scene.y.frames() as u32
    }

    pub fn height(&self) -> u32 {
        self.scene.y.bins() as u32
    }

    /// Log-magnitude spectrogram of the noisy reference channel.
    pub fn mixture_rgba(&self) -> Vec<u8> {
        let m = log_magnitude(&self.scene.y, 0);
        let hi = m.data().iter().cloned().fold(f64::MIN, f64::max);
        render_rgba(&m, hi - 12.0, hi)
    }

    /// Log-magnitude spectrogram of the clean speech component.
    pub fn clean_rgba(&self) -> Vec<u8> {
        let m = log_magnitude(&self.scene.x, 0);
        let hi = m.data().iter().cloned().fold(f64::MIN, f64::max);
        render_rgba(&m, hi - 12.0, hi)
    }

    /// Ideal speech mask heat map.
    pub fn ideal_mask_rgba(&self) -> Vec<u8> {
        render_rgba(&self.scene.ideal_masks.speech, 0.0, 1.0)
    }

    /// Best single-channel input SNR in dB.
    pub fn best_input_snr_db(&self) -> f64 {
        sim::best_input_snr_db(&self.scene)
    }

    /// Run ideal-mask GEV+BAN beamforming with `k_iters` QR iterations;
    /// returns the enhanced log-magnitude spectrogram.
    pub fn enhanced_rgba(&self, k_iters: u32) -> Result<Vec<u8>, JsValue> {
        let (enhanced, _) = self.run_beamformer(k_iters)?;
        let m = log_magnitude(&enhanced, 0);
        let hi = m.data().iter().cloned().fold(f64::MIN, f64::max);
        Ok(render_rgba(&m, hi - 12.0, hi))
    }

    /// Oracle output-SNR gain (dB) of ideal-mask GEV+BAN at `k_iters`.
    pub fn snr_gain_db(&self, k_iters: u32) -> Result<f64, JsValue> {
        let (enhanced, weights) = self.run_beamformer(k_iters)?;
        sim::snr_gain(&enhanced, &self.scene, &weights)
            .map_err(|e| JsValue::from_str(&e.to_string()))
    }

    fn run_beamformer(
        &self,
        k_iters: u32,
    ) -> Result<(ComplexSpectrogram, beamform::BeamformerWeights), JsValue> {
        let to_js = |e: maskbeam::Error| JsValue::from_str(&e.to_string());
        let masks = &self.scene.ideal_masks;
        let cov_xx =
            beamform::spatial_covariance(&self.scene.y, &masks.speech, CovarianceKind::Speech)
                .map_err(to_js)?;
        let cov_nn =
            beamform::spatial_covariance(&self.scene.y, &masks.noise, CovarianceKind::Noise)
                .map_err(to_js)?;
        let w_gev = beamform::gev_vector(&cov_xx, &cov_nn, k_iters.max(1) as usize, 1e-6)
            .map_err(to_js)?;
        let w_opt = beamform::ban_scale(&w_gev, &cov_nn).map_err(to_js)?;
        let enhanced = beamform::apply_beamformer(&w_opt, &self.scene.y).map_err(to_js)?;
        Ok((enhanced, w_opt))
    }
}

/// Convergence curve of the unrolled QR eigensolver on a random Hermitian
/// PSD pencil: cosine similarity between the K-iteration principal
/// eigenvector and a converged (K = 60) reference, for K = 1..=k_max.
#[wasm_bindgen]
pub fn qr_convergence_curve(seed: u32, size: u32, k_max: u32) -> Result<Vec<f64>, JsValue> {
    let n = size.clamp(2, 8) as usize;
    let mut rng = Rng::new(seed as u64);
    let mut random_hpd = |n: usize| {
        let g = ComplexMatrix::from_fn(n, n, |_, _| Complex64::new(rng.normal(), rng.normal()));
        let mut m = g.mul(&g.adjoint()).symmetrize();
        for i in 0..n {
            m[(i, i)] += Complex64::new(0.1, 0.0);
        }
        m
    };
    let phi_xx = random_hpd(n);
    let phi_nn = random_hpd(n);
    let to_js = |e: maskbeam::Error| JsValue::from_str(&e.to_string());
    let phi = linalg::herm_solve(&phi_nn, &phi_xx, 0.0).map_err(to_js)?;
    let (_, reference) = linalg::principal_pair(&phi, 60).map_err(to_js)?;
    let mut curve = Vec::with_capacity(k_max.max(1) as usize);
    for k in 1..=k_max.max(1) {
        let (_, v) = linalg::principal_pair(&phi, k as usize).map_err(to_js)?;
        let cos = v
            .iter()
            .zip(&reference)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            .norm();
        curve.push(cos);
    }
    Ok(curve)
}
