//! Mask-weighted spatial covariance estimation, GEV beamforming via the
//! QR eigensolver, the BAN post-filter and beamformer application.
//!
//! Each frequency bin is an independent M x M problem: bins never share
//! state, so a degenerate bin yields a flagged zero weight instead of
//! failing the whole utterance, and callers may dispatch bins in parallel.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, ComplexMatrix, RealMatrix};
use crate::signal::ComplexSpectrogram;

/// Which source a covariance set describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    Speech,
    Noise,
}

/// Per-frequency-bin M x M Hermitian PSD matrices.
#[derive(Debug, Clone)]
pub struct SpatialCovariance {
    pub phi: Vec<ComplexMatrix>,
    pub kind: CovarianceKind,
}

impl SpatialCovariance {
    pub fn bins(&self) -> usize {
        self.phi.len()
    }

    pub fn channels(&self) -> usize {
        if self.phi.is_empty() {
            0
        } else {
            self.phi[0].rows()
        }
    }
}

/// Beamformer flavor carried by [`BeamformerWeights`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamformerVariant {
    /// Unit-norm principal generalized eigenvector per bin.
    Gev,
    /// GEV rescaled per bin by the BAN post-filter.
    Opt,
    /// Placeholder for the mask-based MVDR initialization mentioned by the
    /// adaptation method; intentionally not implemented.
    Mvdr,
}

/// Per-bin complex beamforming vectors.
#[derive(Debug, Clone)]
pub struct BeamformerWeights {
    pub w: Vec<Vec<Complex64>>,
    pub variant: BeamformerVariant,
    /// BAN gains, present for the `Opt` variant.
    pub ban_scale: Option<Vec<f64>>,
    /// Bins whose covariance solve or normalization failed; their weight is
    /// a flagged zero vector.
    pub degenerate: Vec<bool>,
}

impl BeamformerWeights {
    pub fn bins(&self) -> usize {
        self.w.len()
    }

    pub fn channels(&self) -> usize {
        if self.w.is_empty() {
            0
        } else {
            self.w[0].len()
        }
    }
}

/// Mask-weighted spatial covariance:
/// `Phi_f = sum_t mask[t,f] * Y_{t,f} Y_{t,f}^H / sum_t mask[t,f]`,
/// symmetrized to exact Hermitian form.
pub fn spatial_covariance(
    y: &ComplexSpectrogram,
    mask: &RealMatrix,
    kind: CovarianceKind,
) -> Result<SpatialCovariance> {
    let (channels, frames, bins) = (y.channels(), y.frames(), y.bins());
    if mask.rows() != frames || mask.cols() != bins {
        return Err(Error::ShapeMismatch(format!(
            "mask is {}x{}, spectrogram has {frames} frames x {bins} bins",
            mask.rows(),
            mask.cols()
        )));
    }
    if mask.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidInput(
            "mask entries must lie in [0, 1]".into(),
        ));
    }
    let mut phi = Vec::with_capacity(bins);
    for f in 0..bins {
        let mut acc = ComplexMatrix::zeros(channels, channels);
        let mut weight_sum = 0.0;
        for t in 0..frames {
            let lambda = mask[(t, f)];
            if lambda == 0.0 {
                continue;
            }
            weight_sum += lambda;
            let snap = y.snapshot(t, f);
            for i in 0..channels {
                let yi = snap[i] * lambda;
                for j in 0..channels {
                    acc[(i, j)] += yi * snap[j].conj();
                }
            }
        }
        if weight_sum <= 0.0 {
            return Err(Error::DegenerateMask { bin: f });
        }
        let inv = Complex64::new(1.0 / weight_sum, 0.0);
        phi.push(acc.scale(inv).symmetrize());
    }
    Ok(SpatialCovariance { phi, kind })
}

/// GEV beamforming vectors: per bin, the principal eigenvector of
/// `Phi_NN^{-1} Phi_XX` approximated with `k_iters` QR steps.
pub fn gev_vector(
    phi_xx: &SpatialCovariance,
    phi_nn: &SpatialCovariance,
    k_iters: usize,
    loading: f64,
) -> Result<BeamformerWeights> {
    if phi_xx.bins() != phi_nn.bins() || phi_xx.channels() != phi_nn.channels() {
        return Err(Error::ShapeMismatch(format!(
            "covariance sets disagree: {}x{} bins/channels vs {}x{}",
            phi_xx.bins(),
            phi_xx.channels(),
            phi_nn.bins(),
            phi_nn.channels()
        )));
    }
    if k_iters < 1 {
        return Err(Error::InvalidConfig("gev_vector: k_iters must be >= 1".into()));
    }
    let channels = phi_xx.channels();
    let bins = phi_xx.bins();
    let mut w = Vec::with_capacity(bins);
    let mut degenerate = vec![false; bins];
    for f in 0..bins {
        match linalg::herm_solve(&phi_nn.phi[f], &phi_xx.phi[f], loading)
            .and_then(|phi| linalg::principal_pair(&phi, k_iters))
        {
            Ok((_, vec)) => w.push(vec),
            Err(Error::SingularCovariance(_)) => {
                degenerate[f] = true;
                w.push(vec![Complex64::new(0.0, 0.0); channels]);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(BeamformerWeights {
        w,
        variant: BeamformerVariant::Gev,
        ban_scale: None,
        degenerate,
    })
}

/// Blind analytic normalization gain for one bin:
/// `g = sqrt(w^H Phi_NN Phi_NN w / M) / (w^H Phi_NN w)`.
pub fn ban_gain(w: &[Complex64], phi_nn: &ComplexMatrix) -> f64 {
    let m = w.len() as f64;
    let v1 = phi_nn.mul_vec(w);
    let q1: f64 = w
        .iter()
        .zip(&v1)
        .map(|(wi, vi)| (wi.conj() * vi).re)
        .sum();
    let v2 = phi_nn.mul_vec(&v1);
    let q2: f64 = w
        .iter()
        .zip(&v2)
        .map(|(wi, vi)| (wi.conj() * vi).re)
        .sum();
    if q1 <= 1e-300 {
        return 0.0;
    }
    (q2.max(0.0) / m).sqrt() / q1
}

/// Apply the BAN post-filter to a GEV weight set, producing the `Opt`
/// variant. Bins where `w^H Phi_NN w` vanishes are flagged degenerate with
/// a zero gain.
pub fn ban_scale(w: &BeamformerWeights, phi_nn: &SpatialCovariance) -> Result<BeamformerWeights> {
    if w.bins() != phi_nn.bins() || w.channels() != phi_nn.channels() {
        return Err(Error::ShapeMismatch(format!(
            "weights {}x{} vs covariance {}x{}",
            w.bins(),
            w.channels(),
            phi_nn.bins(),
            phi_nn.channels()
        )));
    }
    let bins = w.bins();
    let mut out_w = Vec::with_capacity(bins);
    let mut gains = Vec::with_capacity(bins);
    let mut degenerate = w.degenerate.clone();
    for f in 0..bins {
        if degenerate[f] {
            gains.push(0.0);
            out_w.push(w.w[f].clone());
            continue;
        }
        let g = ban_gain(&w.w[f], &phi_nn.phi[f]);
        if g == 0.0 {
            degenerate[f] = true;
        }
        gains.push(g);
        out_w.push(w.w[f].iter().map(|wi| wi * g).collect());
    }
    Ok(BeamformerWeights {
        w: out_w,
        variant: BeamformerVariant::Opt,
        ban_scale: Some(gains),
        degenerate,
    })
}

/// Enhanced single-channel spectrogram: `S_hat[t,f] = w_f^H Y[:,t,f]`.
pub fn apply_beamformer(
    w: &BeamformerWeights,
    y: &ComplexSpectrogram,
) -> Result<ComplexSpectrogram> {
    if w.bins() != y.bins() || w.channels() != y.channels() {
        return Err(Error::ShapeMismatch(format!(
            "weights {}x{} vs spectrogram {} channels x {} bins",
            w.bins(),
            w.channels(),
            y.channels(),
            y.bins()
        )));
    }
    let mut out = ComplexSpectrogram::zeros(1, y.frames(), y.bins(), y.config);
    for t in 0..y.frames() {
        for f in 0..y.bins() {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..y.channels() {
                acc += w.w[f][m].conj() * y.at(m, t, f);
            }
            *out.at_mut(0, t, f) = acc;
        }
    }
    Ok(out)
}

/// Posterior SNR of one bin: the Rayleigh quotient
/// `w^H Phi_XX w / w^H Phi_NN w`.
pub fn posterior_snr(
    w: &[Complex64],
    phi_xx: &ComplexMatrix,
    phi_nn: &ComplexMatrix,
) -> Result<f64> {
    let quad = |phi: &ComplexMatrix| -> Result<f64> {
        let pv = phi.mul_vec(w);
        let q: Complex64 = w.iter().zip(&pv).map(|(a, b)| a.conj() * b).sum();
        if q.im.abs() > 1e-10 * q.norm().max(1e-300) {
            return Err(Error::InvalidInput(format!(
                "quadratic form has imaginary residue {:.3e}",
                q.im
            )));
        }
        Ok(q.re)
    };
    let num = quad(phi_xx)?;
    let den = quad(phi_nn)?;
    if den <= 0.0 {
        return Err(Error::Degenerate(
            "posterior_snr: noise quadratic form is not positive".into(),
        ));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::signal::StftConfig;

    fn random_spectrogram(rng: &mut Rng, m: usize, t: usize, f: usize) -> ComplexSpectrogram {
        let mut spec = ComplexSpectrogram::zeros(m, t, f, StftConfig::default());
        for mi in 0..m {
            for ti in 0..t {
                for fi in 0..f {
                    *spec.at_mut(mi, ti, fi) = Complex64::new(rng.normal(), rng.normal());
                }
            }
        }
        spec
    }

    fn random_hpd(rng: &mut Rng, n: usize) -> ComplexMatrix {
        let g = ComplexMatrix::from_fn(n, n, |_, _| Complex64::new(rng.normal(), rng.normal()));
        let mut m = g.mul(&g.adjoint()).symmetrize();
        for i in 0..n {
            m[(i, i)] += Complex64::new(0.1, 0.0);
        }
        m
    }

    #[test]
    fn single_frame_unit_mask_is_outer_product() {
        let mut rng = Rng::new(2);
        let y = random_spectrogram(&mut rng, 3, 1, 4);
        let mask = RealMatrix::from_fn(1, 4, |_, _| 1.0);
        let cov = spatial_covariance(&y, &mask, CovarianceKind::Speech).unwrap();
        for f in 0..4 {
            let snap = y.snapshot(0, f);
            for i in 0..3 {
                for j in 0..3 {
                    let expect = snap[i] * snap[j].conj();
                    let got = cov.phi[f][(i, j)];
                    assert!((expect - got).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn unit_mask_is_unweighted_average() {
        let mut rng = Rng::new(3);
        let (m, t, f) = (2, 5, 3);
        let y = random_spectrogram(&mut rng, m, t, f);
        let mask = RealMatrix::from_fn(t, f, |_, _| 1.0);
        let cov = spatial_covariance(&y, &mask, CovarianceKind::Noise).unwrap();
        for fi in 0..f {
            let mut acc = ComplexMatrix::zeros(m, m);
            for ti in 0..t {
                let snap = y.snapshot(ti, fi);
                for i in 0..m {
                    for j in 0..m {
                        acc[(i, j)] += snap[i] * snap[j].conj();
                    }
                }
            }
            let avg = acc.scale(Complex64::new(1.0 / t as f64, 0.0)).symmetrize();
            let diff = avg.sub(&cov.phi[fi]).frobenius_norm();
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn covariance_mask_scale_invariance() {
        let mut rng = Rng::new(4);
        let y = random_spectrogram(&mut rng, 3, 6, 2);
        let mask = RealMatrix::from_fn(6, 2, |_, _| 0.2 + 0.6 * rng.uniform());
        let scaled = RealMatrix::from_fn(6, 2, |t, f| mask[(t, f)] * 0.5);
        let a = spatial_covariance(&y, &mask, CovarianceKind::Speech).unwrap();
        let b = spatial_covariance(&y, &scaled, CovarianceKind::Speech).unwrap();
        for f in 0..2 {
            let diff = a.phi[f].sub(&b.phi[f]).frobenius_norm();
            assert!(diff < 1e-12 * a.phi[f].frobenius_norm());
        }
    }

    #[test]
    fn covariance_rejects_zero_mask_column() {
        let mut rng = Rng::new(5);
        let y = random_spectrogram(&mut rng, 2, 3, 2);
        let mask = RealMatrix::from_fn(3, 2, |_, f| if f == 1 { 0.0 } else { 1.0 });
        assert!(matches!(
            spatial_covariance(&y, &mask, CovarianceKind::Speech),
            Err(Error::DegenerateMask { bin: 1 })
        ));
    }

    #[test]
    fn covariance_is_hermitian_psd() {
        let mut rng = Rng::new(6);
        let y = random_spectrogram(&mut rng, 4, 12, 3);
        let mask = RealMatrix::from_fn(12, 3, |_, _| rng.uniform().max(1e-3));
        let cov = spatial_covariance(&y, &mask, CovarianceKind::Speech).unwrap();
        for f in 0..3 {
            assert!(cov.phi[f].hermitian_deviation() < 1e-10);
            // PSD check: eigenvalues of the Hermitian matrix via QR iterations.
            let eig = linalg::qr_algorithm(&cov.phi[f], 60).unwrap();
            let tr = cov.phi[f].trace().re;
            for i in 0..4 {
                assert!(eig.a_final[(i, i)].re >= -1e-10 * tr);
            }
        }
    }

    #[test]
    fn gev_recovers_rank1_steering_in_white_noise() {
        let mut rng = Rng::new(7);
        let m = 4;
        let d: Vec<Complex64> = (0..m)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        let mut phi_xx = ComplexMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                phi_xx[(i, j)] = d[i] * d[j].conj();
            }
        }
        let cov_xx = SpatialCovariance {
            phi: vec![phi_xx.symmetrize()],
            kind: CovarianceKind::Speech,
        };
        let cov_nn = SpatialCovariance {
            phi: vec![ComplexMatrix::identity(m)],
            kind: CovarianceKind::Noise,
        };
        let w = gev_vector(&cov_xx, &cov_nn, 5, 0.0).unwrap();
        let dn: f64 = d.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let cos = d
            .iter()
            .zip(&w.w[0])
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            .norm()
            / dn;
        assert!(cos >= 0.999, "cosine {cos}");
        assert!(!w.degenerate[0]);
    }

    #[test]
    fn gev_isotropic_tie_keeps_unit_norm_and_snr_one() {
        let m = 3;
        let eye = || ComplexMatrix::identity(m);
        let cov_xx = SpatialCovariance {
            phi: vec![eye()],
            kind: CovarianceKind::Speech,
        };
        let cov_nn = SpatialCovariance {
            phi: vec![eye()],
            kind: CovarianceKind::Noise,
        };
        let w = gev_vector(&cov_xx, &cov_nn, 5, 0.0).unwrap();
        let norm: f64 = w.w[0].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let snr = posterior_snr(&w.w[0], &cov_xx.phi[0], &cov_nn.phi[0]).unwrap();
        assert!((snr - 1.0).abs() < 1e-12);
    }

    /// Closed-form generalized eigenvector for 2x2 pencils, used as an
    /// independent oracle: roots of det(Phi_xx - lambda Phi_nn) = 0.
    fn gev_2x2_oracle(a: &ComplexMatrix, b: &ComplexMatrix) -> (f64, Vec<Complex64>) {
        let det2 = |m: &ComplexMatrix| m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let c2 = det2(b);
        let c1 = -(a[(0, 0)] * b[(1, 1)] + a[(1, 1)] * b[(0, 0)]
            - a[(0, 1)] * b[(1, 0)]
            - a[(1, 0)] * b[(0, 1)]);
        let c0 = det2(a);
        let disc = (c1 * c1 - 4.0 * c2 * c0).sqrt();
        let l1 = (-c1 + disc) / (2.0 * c2);
        let l2 = (-c1 - disc) / (2.0 * c2);
        let lambda = if l1.re >= l2.re { l1 } else { l2 };
        // (A - lambda B) v = 0; take the row with the larger leading entry.
        let m00 = a[(0, 0)] - lambda * b[(0, 0)];
        let m01 = a[(0, 1)] - lambda * b[(0, 1)];
        let m10 = a[(1, 0)] - lambda * b[(1, 0)];
        let m11 = a[(1, 1)] - lambda * b[(1, 1)];
        let v = if m00.norm() + m01.norm() >= m10.norm() + m11.norm() {
            vec![-m01, m00]
        } else {
            vec![-m11, m10]
        };
        (lambda.re, linalg::normalize_phase_fix(&v))
    }

    #[test]
    fn gev_matches_2x2_closed_form_when_gap_is_wide() {
        let mut rng = Rng::new(8);
        let mut tested = 0;
        while tested < 15 {
            let phi_xx = random_hpd(&mut rng, 2);
            let phi_nn = random_hpd(&mut rng, 2);
            let (l_max, v_exact) = gev_2x2_oracle(&phi_xx, &phi_nn);
            // second eigenvalue for the gap ratio
            let phi = linalg::herm_solve(&phi_nn, &phi_xx, 0.0).unwrap();
            let tr = phi.trace().re;
            let l_min = tr - l_max;
            if l_min <= 0.0 || l_max / l_min < 10.0 {
                continue;
            }
            tested += 1;
            let cov_xx = SpatialCovariance {
                phi: vec![phi_xx],
                kind: CovarianceKind::Speech,
            };
            let cov_nn = SpatialCovariance {
                phi: vec![phi_nn],
                kind: CovarianceKind::Noise,
            };
            let w = gev_vector(&cov_xx, &cov_nn, 5, 0.0).unwrap();
            let cos = v_exact
                .iter()
                .zip(&w.w[0])
                .map(|(a, b)| a.conj() * b)
                .sum::<Complex64>()
                .norm();
            assert!(cos >= 0.999, "cosine {cos}");
        }
    }

    #[test]
    fn ban_gain_identity_noise_is_inverse_sqrt_m() {
        for m in [1usize, 2, 4, 6] {
            let mut rng = Rng::new(m as u64);
            let raw: Vec<Complex64> = (0..m)
                .map(|_| Complex64::new(rng.normal(), rng.normal()))
                .collect();
            let w = linalg::normalize_phase_fix(&raw);
            let g = ban_gain(&w, &ComplexMatrix::identity(m));
            assert!(
                (g - 1.0 / (m as f64).sqrt()).abs() < 1e-12,
                "m={m} gain {g}"
            );
        }
    }

    #[test]
    fn ban_output_invariant_to_input_scaling() {
        let mut rng = Rng::new(9);
        let m = 3;
        let phi_nn = random_hpd(&mut rng, m);
        let raw: Vec<Complex64> = (0..m)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        let w = linalg::normalize_phase_fix(&raw);
        let g = ban_gain(&w, &phi_nn);
        let alpha = 3.7;
        let scaled: Vec<Complex64> = w.iter().map(|z| z * alpha).collect();
        let g_scaled = ban_gain(&scaled, &phi_nn);
        for i in 0..m {
            let a = w[i] * g;
            let b = scaled[i] * g_scaled;
            assert!((a - b).norm() < 1e-12, "entry {i}");
        }
    }

    #[test]
    fn ban_preserves_posterior_snr() {
        let mut rng = Rng::new(10);
        let m = 4;
        let phi_xx = random_hpd(&mut rng, m);
        let phi_nn = random_hpd(&mut rng, m);
        let cov_xx = SpatialCovariance {
            phi: vec![phi_xx.clone()],
            kind: CovarianceKind::Speech,
        };
        let cov_nn = SpatialCovariance {
            phi: vec![phi_nn.clone()],
            kind: CovarianceKind::Noise,
        };
        let w_gev = gev_vector(&cov_xx, &cov_nn, 5, 0.0).unwrap();
        let w_opt = ban_scale(&w_gev, &cov_nn).unwrap();
        let snr_gev = posterior_snr(&w_gev.w[0], &phi_xx, &phi_nn).unwrap();
        let snr_opt = posterior_snr(&w_opt.w[0], &phi_xx, &phi_nn).unwrap();
        assert!((snr_gev - snr_opt).abs() <= 1e-12 * snr_gev.abs());
    }

    #[test]
    fn apply_beamformer_single_channel_identity() {
        let mut rng = Rng::new(11);
        let y = random_spectrogram(&mut rng, 1, 4, 3);
        let w = BeamformerWeights {
            w: vec![vec![Complex64::new(1.0, 0.0)]; 3],
            variant: BeamformerVariant::Gev,
            ban_scale: None,
            degenerate: vec![false; 3],
        };
        let s = apply_beamformer(&w, &y).unwrap();
        for t in 0..4 {
            for f in 0..3 {
                assert_eq!(s.at(0, t, f), y.at(0, t, f));
            }
        }
    }

    #[test]
    fn apply_beamformer_selector_picks_channel() {
        let mut rng = Rng::new(12);
        let y = random_spectrogram(&mut rng, 3, 4, 2);
        let mut e1 = vec![Complex64::new(0.0, 0.0); 3];
        e1[1] = Complex64::new(1.0, 0.0);
        let w = BeamformerWeights {
            w: vec![e1.clone(), e1],
            variant: BeamformerVariant::Gev,
            ban_scale: None,
            degenerate: vec![false; 2],
        };
        let s = apply_beamformer(&w, &y).unwrap();
        for t in 0..4 {
            for f in 0..2 {
                assert_eq!(s.at(0, t, f), y.at(1, t, f));
            }
        }
    }

    #[test]
    fn apply_beamformer_matches_direct_loop() {
        let mut rng = Rng::new(13);
        let y = random_spectrogram(&mut rng, 3, 5, 4);
        let w_vecs: Vec<Vec<Complex64>> = (0..4)
            .map(|_| {
                (0..3)
                    .map(|_| Complex64::new(rng.normal(), rng.normal()))
                    .collect()
            })
            .collect();
        let w = BeamformerWeights {
            w: w_vecs.clone(),
            variant: BeamformerVariant::Gev,
            ban_scale: None,
            degenerate: vec![false; 4],
        };
        let s = apply_beamformer(&w, &y).unwrap();
        for t in 0..5 {
            for f in 0..4 {
                let mut expect = Complex64::new(0.0, 0.0);
                for m in 0..3 {
                    expect += w_vecs[f][m].conj() * y.at(m, t, f);
                }
                assert!((s.at(0, t, f) - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_snr_basics() {
        let m = 3;
        let two_eye = ComplexMatrix::identity(m).scale(Complex64::new(2.0, 0.0));
        let eye = ComplexMatrix::identity(m);
        let mut rng = Rng::new(14);
        let raw: Vec<Complex64> = (0..m)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        let w = linalg::normalize_phase_fix(&raw);
        let snr = posterior_snr(&w, &two_eye, &eye).unwrap();
        assert!((snr - 2.0).abs() < 1e-12);
        // homogeneity
        let scaled: Vec<Complex64> = w.iter().map(|z| z * Complex64::new(0.0, -2.5)).collect();
        let snr2 = posterior_snr(&scaled, &two_eye, &eye).unwrap();
        assert!((snr - snr2).abs() < 1e-12);
    }

    #[test]
    fn gev_beats_random_vectors() {
        let mut rng = Rng::new(15);
        for &m in &[2usize, 4, 6] {
            let phi_xx = random_hpd(&mut rng, m);
            let phi_nn = random_hpd(&mut rng, m);
            let cov_xx = SpatialCovariance {
                phi: vec![phi_xx.clone()],
                kind: CovarianceKind::Speech,
            };
            let cov_nn = SpatialCovariance {
                phi: vec![phi_nn.clone()],
                kind: CovarianceKind::Noise,
            };
            let w = gev_vector(&cov_xx, &cov_nn, 50, 0.0).unwrap();
            let best = posterior_snr(&w.w[0], &phi_xx, &phi_nn).unwrap();
            for _ in 0..1000 {
                let raw: Vec<Complex64> = (0..m)
                    .map(|_| Complex64::new(rng.normal(), rng.normal()))
                    .collect();
                let v = linalg::normalize_phase_fix(&raw);
                let snr = posterior_snr(&v, &phi_xx, &phi_nn).unwrap();
                assert!(
                    snr <= best * (1.0 + 1e-9),
                    "random vector beats GEV: {snr} vs {best}"
                );
            }
        }
    }

    #[test]
    fn gev_argmax_invariant_to_speech_scaling() {
        let mut rng = Rng::new(16);
        let m = 3;
        let phi_xx = random_hpd(&mut rng, m);
        let phi_nn = random_hpd(&mut rng, m);
        let alpha = 7.5;
        let scaled_xx = phi_xx.scale(Complex64::new(alpha, 0.0));
        let mk = |p: &ComplexMatrix, kind| SpatialCovariance {
            phi: vec![p.clone()],
            kind,
        };
        let w1 = gev_vector(
            &mk(&phi_xx, CovarianceKind::Speech),
            &mk(&phi_nn, CovarianceKind::Noise),
            25,
            0.0,
        )
        .unwrap();
        let w2 = gev_vector(
            &mk(&scaled_xx, CovarianceKind::Speech),
            &mk(&phi_nn, CovarianceKind::Noise),
            25,
            0.0,
        )
        .unwrap();
        let cos = w1.w[0]
            .iter()
            .zip(&w2.w[0])
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            .norm();
        assert!(cos >= 1.0 - 1e-10, "cosine {cos}");
        let s1 = posterior_snr(&w1.w[0], &phi_xx, &phi_nn).unwrap();
        let s2 = posterior_snr(&w2.w[0], &scaled_xx, &phi_nn).unwrap();
        assert!((s2 / s1 - alpha).abs() < 1e-9);
    }
}
