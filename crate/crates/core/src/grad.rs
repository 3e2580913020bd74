//! Reverse-mode differentiation for every stage between the scalar loss
//! and the mask tensors, plus the finite-difference verification harness.
//!
//! Complex gradients follow the real-pair convention: a cotangent for a
//! complex value z packs dL/d(Re z) + i dL/d(Im z), where L is the real
//! loss. Under this convention the pullback of a product `Y = A X B` is
//! `X_bar = A^H Y_bar B^H`, and every nonholomorphic spot (normalization,
//! phase fix, magnitudes, the BAN square root) carries its explicitly
//! derived rule. Forward passes record immutable snapshots; VJP evaluation
//! is pure given a record.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    self, cholesky, cholesky_solve, dominant_index, ComplexMatrix, QrIterRecord, RealMatrix,
};
use crate::signal::ComplexSpectrogram;

/// Outcome of one finite-difference verification run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_err: f64,
    pub tested_entries: usize,
    pub eps: f64,
}

// ---------------------------------------------------------------------------
// QR decomposition VJP
// ---------------------------------------------------------------------------

/// Reverse-mode derivative of the phase-fixed QR decomposition.
///
/// With `G = Q^H Q_bar` and `H = R R_bar^H`, the cotangent is
/// `A_bar = Q W R^{-H}` where `W` has strict lower part `G - G^H + H`,
/// strict upper part `H^H`, and diagonal `Re(H_ii) + i Im(G_ii)`. The
/// imaginary diagonal term is what the phase convention diag(R) real >= 0
/// contributes relative to the real-valued formula.
pub fn qr_vjp(
    a: &ComplexMatrix,
    q: &ComplexMatrix,
    r: &ComplexMatrix,
    q_bar: &ComplexMatrix,
    r_bar: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    let n = a.rows();
    for (m, name) in [(q, "q"), (r, "r"), (q_bar, "q_bar"), (r_bar, "r_bar")] {
        if m.rows() != n || m.cols() != n {
            return Err(Error::ShapeMismatch(format!(
                "qr_vjp: {name} is {}x{}, expected {n}x{n}",
                m.rows(),
                m.cols()
            )));
        }
    }
    for j in 0..n {
        if r[(j, j)].norm() < 1e-300 {
            return Err(Error::InvalidInput(
                "qr_vjp: R is singular, derivative undefined".into(),
            ));
        }
    }
    let g = q.adjoint().mul(q_bar);
    let h = r.mul(&r_bar.adjoint());
    let mut w = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] = match i.cmp(&j) {
                std::cmp::Ordering::Greater => g[(i, j)] - g[(j, i)].conj() + h[(i, j)],
                std::cmp::Ordering::Less => h[(j, i)].conj(),
                std::cmp::Ordering::Equal => Complex64::new(h[(i, i)].re, g[(i, i)].im),
            };
        }
    }
    // A_bar = Q * (W R^{-H}); solve X R^H = W row-wise. R^H is lower
    // triangular with real diagonal, so back-substitute from the last
    // column.
    let mut x = w;
    for i in 0..n {
        for j in (0..n).rev() {
            let mut s = x[(i, j)];
            for k in (j + 1)..n {
                s -= x[(i, k)] * r[(j, k)].conj();
            }
            x[(i, j)] = s / r[(j, j)].re;
        }
    }
    Ok(q.mul(&x))
}

// ---------------------------------------------------------------------------
// Eigensolver chain: solve -> QR iterations -> normalize/phase fix
// ---------------------------------------------------------------------------

/// Immutable forward record of the per-bin eigensolver chain.
#[derive(Debug, Clone)]
pub struct EigChainRecord {
    /// Cholesky factor of the loaded, symmetrized noise covariance.
    chol: ComplexMatrix,
    /// Phi = B^{-1} Phi_XX.
    phi: ComplexMatrix,
    /// All QR iterates.
    qr: QrIterRecord,
    /// Raw first column of the accumulated Q.
    v_raw: Vec<Complex64>,
    /// Normalized vector before the phase fix.
    u: Vec<Complex64>,
    /// Index of the dominant entry and the phase factor applied.
    dom: usize,
    /// Final eigenvector estimate.
    pub v: Vec<Complex64>,
    /// Leading diagonal entry of A_K (eigenvalue estimate).
    pub eigval: f64,
    loading: f64,
    k_iters: usize,
}

/// Forward pass of the chain `Phi = (sym(Phi_NN) + loading tr/n I)^{-1}
/// Phi_XX`, `k_iters` QR steps, then first-column normalization and phase
/// fix. The symmetrization makes the map total and smooth near Hermitian
/// inputs, and is the identity on the Hermitian matrices the pipeline
/// produces.
pub fn eig_chain_forward(
    phi_xx: &ComplexMatrix,
    phi_nn: &ComplexMatrix,
    k_iters: usize,
    loading: f64,
) -> Result<EigChainRecord> {
    if phi_xx.rows() != phi_nn.rows() || !phi_xx.is_square() || !phi_nn.is_square() {
        return Err(Error::ShapeMismatch(
            "eig_chain: covariance pair must be square and same size".into(),
        ));
    }
    let b = linalg::load_hermitian(phi_nn, loading);
    let chol = cholesky(&b)?;
    let phi = cholesky_solve(&chol, phi_xx);
    let (eig, qr) = linalg::qr_algorithm_recorded(&phi, k_iters)?;
    let n = phi.rows();
    let v_raw: Vec<Complex64> = (0..n).map(|i| eig.accum_q[(i, 0)]).collect();
    let norm: f64 = v_raw.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(Error::Degenerate("eig_chain: zero eigenvector".into()));
    }
    let u: Vec<Complex64> = v_raw.iter().map(|z| z / norm).collect();
    let dom = dominant_index(&u);
    let zj = u[dom];
    if zj.norm() <= 0.0 {
        return Err(Error::Degenerate("eig_chain: zero dominant entry".into()));
    }
    let c = zj.conj() / Complex64::new(zj.norm(), 0.0);
    let v: Vec<Complex64> = u.iter().map(|z| z * c).collect();
    Ok(EigChainRecord {
        chol,
        phi,
        qr,
        v_raw,
        u,
        dom,
        v,
        eigval: eig.a_final[(0, 0)].re,
        loading,
        k_iters,
    })
}

/// VJP of the phase fix `v = u * conj(u_j)/|u_j|` with `j` the dominant
/// index.
fn phase_fix_vjp(u: &[Complex64], dom: usize, v_bar: &[Complex64]) -> Vec<Complex64> {
    let z = u[dom];
    let mag = z.norm();
    let c = z.conj() / Complex64::new(mag, 0.0);
    // dv_i = c du_i + u_i dc with dc = A dz + B dz_conj,
    //   A = -conj(z)^2 / (2|z|^3), B = 1/(2|z|).
    let a_c = -(z.conj() * z.conj()) / Complex64::new(2.0 * mag * mag * mag, 0.0);
    let b_c = 1.0 / (2.0 * mag);
    let mut u_bar: Vec<Complex64> = v_bar.iter().map(|vb| c.conj() * vb).collect();
    let s: Complex64 = u.iter().zip(v_bar).map(|(ui, vb)| ui.conj() * vb).sum();
    u_bar[dom] += a_c.conj() * s + b_c * s.conj();
    u_bar
}

/// VJP of `u = w / ||w||`.
fn normalize_vjp(w: &[Complex64], u_bar: &[Complex64]) -> Vec<Complex64> {
    let norm: f64 = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let rho: f64 = u_bar
        .iter()
        .zip(w)
        .map(|(ub, wi)| (ub.conj() * wi).re)
        .sum();
    w.iter()
        .zip(u_bar)
        .map(|(wi, ub)| ub / norm - wi * (rho / (norm * norm * norm)))
        .collect()
}

/// Reverse pass of the eigensolver chain from cotangents on the
/// eigenvector (and optionally the eigenvalue estimate). Returns
/// `(phi_xx_bar, phi_nn_bar)`.
pub fn eig_chain_vjp(
    record: &EigChainRecord,
    v_bar: &[Complex64],
    eigval_bar: f64,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let n = record.phi.rows();
    if v_bar.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "eig_chain_vjp: cotangent has {} entries, expected {n}",
            v_bar.len()
        )));
    }
    if record.qr.q.len() != record.k_iters {
        return Err(Error::StateError(
            "eig_chain_vjp: forward record is incomplete".into(),
        ));
    }
    // phase fix and normalization
    let u_bar = phase_fix_vjp(&record.u, record.dom, v_bar);
    let v_raw_bar = normalize_vjp(&record.v_raw, &u_bar);

    // v_raw = first column of the accumulated Q product
    let k = record.k_iters;
    let mut p_bar = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        p_bar[(i, 0)] = v_raw_bar[i];
    }
    let mut a_bar = ComplexMatrix::zeros(n, n);
    a_bar[(0, 0)] = Complex64::new(eigval_bar, 0.0);

    // unwind the iterations: A_{k+1} = R_k Q_k, P_{k+1} = P_k Q_k
    for step in (0..k).rev() {
        let q = &record.qr.q[step];
        let r = &record.qr.r[step];
        let prefix = &record.qr.prefix[step];
        let mut q_bar = prefix.adjoint().mul(&p_bar);
        p_bar = p_bar.mul(&q.adjoint());
        let r_bar = a_bar.mul(&q.adjoint());
        q_bar = q_bar.add(&r.adjoint().mul(&a_bar));
        a_bar = qr_vjp(&record.qr.a[step], q, r, &q_bar, &r_bar)?;
    }
    let phi_bar = a_bar;

    // solve Phi = B^{-1} Phi_XX: C_bar = B^{-1} Phi_bar (B Hermitian),
    // B_bar = -C_bar Phi^H
    let c_bar = cholesky_solve(&record.chol, &phi_bar);
    let b_bar = c_bar.mul(&record.phi.adjoint()).scale(Complex64::new(-1.0, 0.0));

    // loading: B = S + loading*Re(tr S)/n * I
    let tr_b_bar = b_bar.trace();
    let shift = record.loading / n as f64 * tr_b_bar.re;
    let mut s_bar = b_bar;
    for i in 0..n {
        s_bar[(i, i)] += Complex64::new(shift, 0.0);
    }
    // symmetrization projection is self-adjoint
    let phi_nn_bar = s_bar.symmetrize();
    Ok((c_bar, phi_nn_bar))
}

// ---------------------------------------------------------------------------
// Covariance VJP
// ---------------------------------------------------------------------------

/// VJP of the mask-normalized covariance (including its symmetrization)
/// with respect to the mask, one cotangent matrix per bin:
/// `mask_bar[t,f] = Re tr(sym(phi_bar_f)^H (Y Y^H - Phi_raw_f)) / D_f`.
pub fn cov_vjp(
    y: &ComplexSpectrogram,
    mask: &RealMatrix,
    phi_bar: &[ComplexMatrix],
) -> Result<RealMatrix> {
    let (channels, frames, bins) = (y.channels(), y.frames(), y.bins());
    if mask.rows() != frames || mask.cols() != bins {
        return Err(Error::ShapeMismatch("cov_vjp: mask shape".into()));
    }
    if phi_bar.len() != bins {
        return Err(Error::ShapeMismatch(format!(
            "cov_vjp: {} cotangent matrices for {bins} bins",
            phi_bar.len()
        )));
    }
    let mut mask_bar = RealMatrix::zeros(frames, bins);
    for f in 0..bins {
        // recompute the unnormalized forward pieces for this bin
        let mut acc = ComplexMatrix::zeros(channels, channels);
        let mut weight_sum = 0.0;
        for t in 0..frames {
            let lambda = mask[(t, f)];
            if lambda != 0.0 {
                weight_sum += lambda;
                let snap = y.snapshot(t, f);
                for i in 0..channels {
                    let yi = snap[i] * lambda;
                    for j in 0..channels {
                        acc[(i, j)] += yi * snap[j].conj();
                    }
                }
            }
        }
        if weight_sum <= 0.0 {
            return Err(Error::DegenerateMask { bin: f });
        }
        let phi_raw = acc.scale(Complex64::new(1.0 / weight_sum, 0.0));
        // through the symmetrization: its adjoint is itself
        let pb = phi_bar[f].symmetrize();
        // tr(pb^H phi_raw)
        let mut tr_pp = 0.0;
        for i in 0..channels {
            for j in 0..channels {
                tr_pp += (pb[(i, j)].conj() * phi_raw[(i, j)]).re;
            }
        }
        for t in 0..frames {
            let snap = y.snapshot(t, f);
            // y^H pb^H y = conj(y^H pb y) -> take real part directly
            let mut quad = 0.0;
            for i in 0..channels {
                let mut row = Complex64::new(0.0, 0.0);
                for j in 0..channels {
                    row += pb[(i, j)].conj() * snap[j].conj();
                }
                quad += (snap[i] * row).re;
            }
            mask_bar[(t, f)] = (quad - tr_pp) / weight_sum;
        }
    }
    Ok(mask_bar)
}

// ---------------------------------------------------------------------------
// BAN and beamformer application VJPs
// ---------------------------------------------------------------------------

/// VJP of the BAN stage `w_opt = g(w, B) * w` for one bin. Returns
/// `(w_bar, phi_nn_bar)`. The square root's gradient is clamped to zero at
/// a non-positive radicand, matching the forward clamp.
pub fn ban_vjp(
    w: &[Complex64],
    phi_nn: &ComplexMatrix,
    w_opt_bar: &[Complex64],
) -> Result<(Vec<Complex64>, ComplexMatrix)> {
    let m = w.len();
    if phi_nn.rows() != m || phi_nn.cols() != m || w_opt_bar.len() != m {
        return Err(Error::ShapeMismatch("ban_vjp: dimensions".into()));
    }
    let mf = m as f64;
    let v1 = phi_nn.mul_vec(w);
    let q1: f64 = w.iter().zip(&v1).map(|(a, b)| (a.conj() * b).re).sum();
    let v2 = phi_nn.mul_vec(&v1);
    let q2: f64 = w.iter().zip(&v2).map(|(a, b)| (a.conj() * b).re).sum();
    if q1 <= 1e-300 {
        // forward flagged this bin degenerate with g = 0; nothing flows
        return Ok((
            vec![Complex64::new(0.0, 0.0); m],
            ComplexMatrix::zeros(m, m),
        ));
    }
    let s = (q2.max(0.0) / mf).sqrt();
    let g = s / q1;

    // w_opt = g w
    let g_bar: f64 = w_opt_bar
        .iter()
        .zip(w)
        .map(|(ob, wi)| (ob.conj() * wi).re)
        .sum();
    let mut w_bar: Vec<Complex64> = w_opt_bar.iter().map(|ob| ob * g).collect();

    let dq1 = -g_bar * s / (q1 * q1);
    let dq2 = if q2 > 0.0 && s > 0.0 {
        g_bar / (2.0 * s * mf * q1)
    } else {
        0.0
    };

    let mut phi_bar = ComplexMatrix::zeros(m, m);
    // q2 = Re(w^H v2)
    let v2_bar: Vec<Complex64> = w.iter().map(|wi| wi * dq2).collect();
    for (wb, v2i) in w_bar.iter_mut().zip(&v2) {
        *wb += v2i * dq2;
    }
    // v2 = B v1
    for i in 0..m {
        for j in 0..m {
            phi_bar[(i, j)] += v2_bar[i] * v1[j].conj();
        }
    }
    let mut v1_bar = phi_nn.adjoint().mul_vec(&v2_bar);
    // q1 = Re(w^H v1)
    for (wb, v1i) in w_bar.iter_mut().zip(&v1) {
        *wb += v1i * dq1;
    }
    for (vb, wi) in v1_bar.iter_mut().zip(w) {
        *vb += wi * dq1;
    }
    // v1 = B w
    for i in 0..m {
        for j in 0..m {
            phi_bar[(i, j)] += v1_bar[i] * w[j].conj();
        }
    }
    let bw = phi_nn.adjoint().mul_vec(&v1_bar);
    for (wb, b) in w_bar.iter_mut().zip(&bw) {
        *wb += b;
    }
    Ok((w_bar, phi_bar))
}

/// VJP of the beamformer application `S[t,f] = w_f^H Y[:,t,f]` with
/// respect to the weights: `w_bar_f = sum_t Y[:,t,f] conj(S_bar[t,f])`.
pub fn apply_vjp(y: &ComplexSpectrogram, s_bar: &ComplexSpectrogram) -> Vec<Vec<Complex64>> {
    let bins = y.bins();
    let channels = y.channels();
    let mut w_bar = vec![vec![Complex64::new(0.0, 0.0); channels]; bins];
    for f in 0..bins {
        for t in 0..y.frames() {
            let sb = s_bar.at(0, t, f).conj();
            for m in 0..channels {
                w_bar[f][m] += y.at(m, t, f) * sb;
            }
        }
    }
    w_bar
}

// ---------------------------------------------------------------------------
// Finite-difference verification harness
// ---------------------------------------------------------------------------

/// A differentiable operation registered for verification: a scalar probe
/// around the op contracted with a fixed cotangent, and its analytic
/// gradient from the VJP under test.
pub(crate) struct CheckableOpParts {
    /// Base point as a flat vector of real degrees of freedom.
    pub(crate) point: Vec<f64>,
    pub(crate) scalar: Box<dyn Fn(&[f64]) -> f64>,
    pub(crate) analytic: Vec<f64>,
}

fn pack_complex(ms: &[&ComplexMatrix]) -> Vec<f64> {
    let mut out = Vec::new();
    for m in ms {
        for z in m.data() {
            out.push(z.re);
            out.push(z.im);
        }
    }
    out
}

fn unpack_complex(flat: &[f64], rows: usize, cols: usize, offset: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(rows, cols);
    for i in 0..rows * cols {
        let idx = offset + 2 * i;
        m.data_mut()[i] = Complex64::new(flat[idx], flat[idx + 1]);
    }
    m
}

fn pack_cot_complex(ms: &[&ComplexMatrix]) -> Vec<f64> {
    // cotangent packing matches pack_complex under the real-pair convention
    pack_complex(ms)
}

/// The ops the `gradcheck` surface can verify.
pub const CHECKABLE_OPS: &[&str] = &[
    "log_mel",
    "qr",
    "cov",
    "eig_chain",
    "ban",
    "beamform_apply",
    "masknet_backward",
    "pipeline",
];

fn build_op(op_id: &str, seed: u64) -> Result<CheckableOpParts> {
    let mut rng = crate::rng::Rng::new(seed ^ 0x9e3779b97f4a7c15);
    match op_id {
        "log_mel" => build_log_mel_op(&mut rng),
        "qr" => build_qr_op(&mut rng),
        "cov" => build_cov_op(&mut rng),
        "eig_chain" => build_eig_chain_op(&mut rng),
        "ban" => build_ban_op(&mut rng),
        "beamform_apply" => build_apply_op(&mut rng),
        "masknet_backward" => build_masknet_op(&mut rng),
        "pipeline" => crate::pipeline::build_pipeline_check_op(&mut rng),
        other => Err(Error::NotFound(format!("checkable op {other}"))),
    }
}

/// Central differences on every real degree of freedom of a registered
/// op, compared against the analytic gradient. The relative error uses
/// `max(|analytic|, |numeric|, 1e-12)` as denominator.
pub fn finite_diff_check(op_id: &str, seed: u64, eps: f64) -> Result<GradCheckReport> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "finite_diff_check: eps must be positive and finite, got {eps}"
        )));
    }
    let op = build_op(op_id, seed)?;
    let mut max_rel = 0.0f64;
    let mut point = op.point.clone();
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let fp = (op.scalar)(&point);
        point[i] = orig - eps;
        let fm = (op.scalar)(&point);
        point[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let analytic = op.analytic[i];
        let denom = analytic.abs().max(numeric.abs()).max(1e-12);
        max_rel = max_rel.max((analytic - numeric).abs() / denom);
    }
    Ok(GradCheckReport {
        op_name: op_id.to_string(),
        max_rel_err: max_rel,
        tested_entries: op.point.len(),
        eps,
    })
}

fn build_log_mel_op(rng: &mut crate::rng::Rng) -> Result<CheckableOpParts> {
    use crate::signal::{log_mel, log_mel_vjp, MelBank, StftConfig, WindowKind};
    let cfg = StftConfig {
        sample_rate: 1000,
        win_len: 8,
        hop: 4,
        dft_size: 8,
        window_kind: WindowKind::Blackman,
    };
    let bank = MelBank::new(3, &cfg)?;
    let frame: Vec<f64> = (0..cfg.n_bins()).map(|_| 0.2 + rng.uniform()).collect();
    let cot: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let analytic = log_mel_vjp(&frame, &bank, &cot)?;
    let cot_cl = cot.clone();
    let bank_cl = bank.clone();
    Ok(CheckableOpParts {
        point: frame,
        scalar: Box::new(move |x: &[f64]| {
            log_mel(x, &bank_cl)
                .unwrap()
                .iter()
                .zip(&cot_cl)
                .map(|(o, g)| o * g)
                .sum()
        }),
        analytic,
    })
}

fn build_qr_op(rng: &mut crate::rng::Rng) -> Result<CheckableOpParts> {
    let n = 4;
    let a = ComplexMatrix::from_fn(n, n, |_, _| Complex64::new(rng.normal(), rng.normal()));
    let q_bar = ComplexMatrix::from_fn(n, n, |_, _| Complex64::new(rng.normal(), rng.normal()));
    let r_bar = ComplexMatrix::from_fn(n, n, |_, _| Complex64::new(rng.normal(), rng.normal()));
    let factors = linalg::qr_decompose(&a)?;
    let a_bar = qr_vjp(&a, &factors.q, &factors.r, &q_bar, &r_bar)?;
    let point = pack_complex(&[&a]);
    let analytic = pack_cot_complex(&[&a_bar]);
    let (qb, rb) = (q_bar, r_bar);
    Ok(CheckableOpParts {
        point,
        scalar: Box::new(move |x: &[f64]| {
            let a = unpack_complex(x, n, n, 0);
            let f = linalg::qr_decompose(&a).unwrap();
            let mut acc = 0.0;
            for (z, zb) in f.q.data().iter().zip(qb.data()) {
                acc += z.re * zb.re + z.im * zb.im;
            }
            for (z, zb) in f.r.data().iter().zip(rb.data()) {
                acc += z.re * zb.re + z.im * zb.im;
            }
            acc
        }),
        analytic,
    })
}

fn random_spectrogram(
    rng: &mut crate::rng::Rng,
    m: usize,
    t: usize,
    f: usize,
) -> ComplexSpectrogram {
    let mut spec = ComplexSpectrogram::zeros(m, t, f, crate::signal::StftConfig::default());
    for mi in 0..m {
        for ti in 0..t {
            for fi in 0..f {
                *spec.at_mut(mi, ti, fi) = Complex64::new(rng.normal(), rng.normal());
            }
        }
    }
    spec
}

fn build_cov_op(rng: &mut crate::rng::Rng) -> Result<CheckableOpParts> {
    use crate::beamform::{spatial_covariance, CovarianceKind};
    let (m, t, f) = (2, 3, 2);
    let y = random_spectrogram(rng, m, t, f);
    let mask = RealMatrix::from_fn(t, f, |_, _| 0.2 + 0.6 * rng.uniform());
    let phi_bar: Vec<ComplexMatrix> = (0..f)
        .map(|_| ComplexMatrix::from_fn(m, m, |_, _| Complex64::new(rng.normal(), rng.normal())))
        .collect();
    let analytic_mat = cov_vjp(&y, &mask, &phi_bar)?;
    let analytic = analytic_mat.data().to_vec();
    let point = mask.data().to_vec();
    Ok(CheckableOpParts {
        point,
        scalar: Box::new(move |x: &[f64]| {
            let mut mk = RealMatrix::zeros(t, f);
            mk.data_mut().copy_from_slice(x);
            let cov = spatial_covariance(&y, &mk, CovarianceKind::Speech).unwrap();
            let mut acc = 0.0;
            for (fi, pb) in phi_bar.iter().enumerate() {
                for (z, zb) in cov.phi[fi].data().iter().zip(pb.data()) {
                    acc += z.re * zb.re + z.im * zb.im;
                }
            }
            acc
        }),
        analytic,
    })
}

fn random_hpd(rng: &mut crate::rng::Rng, n: usize) -> ComplexMatrix {
    let g = ComplexMatrix::from_fn(n, n, |_, _| Complex64::new(rng.normal(), rng.normal()));
    let mut m = g.mul(&g.adjoint()).symmetrize();
    for i in 0..n {
        m[(i, i)] += Complex64::new(0.3, 0.0);
    }
    m
}

fn build_eig_chain_op(rng: &mut crate::rng::Rng) -> Result<CheckableOpParts> {
    let n = 2;
    let k = 5;
    let loading = 1e-6;
    let phi_xx = random_hpd(rng, n);
    let phi_nn = random_hpd(rng, n);
    let v_bar: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.normal(), rng.normal()))
        .collect();
    let record = eig_chain_forward(&phi_xx, &phi_nn, k, loading)?;
    let (xx_bar, nn_bar) = eig_chain_vjp(&record, &v_bar, 0.0)?;
    let point = pack_complex(&[&phi_xx, &phi_nn]);
    let analytic = pack_cot_complex(&[&xx_bar, &nn_bar]);
    let vb = v_bar;
    Ok(CheckableOpParts {
        point,
        scalar: Box::new(move |x: &[f64]| {
            let xx = unpack_complex(x, n, n, 0);
            let nn = unpack_complex(x, n, n, 2 * n * n);
            let rec = eig_chain_forward(&xx, &nn, k, loading).unwrap();
            rec.v
                .iter()
                .zip(&vb)
                .map(|(z, zb)| z.re * zb.re + z.im * zb.im)
                .sum()
        }),
        analytic,
    })
}

fn build_ban_op(rng: &mut crate::rng::Rng) -> Result<CheckableOpParts> {
    let m = 3;
    // Probe at a generic point slightly off the Hermitian manifold: on it,
    // the imaginary diagonal of B has an exactly-zero derivative that
    // finite differences can only see as rounding noise. The VJP formula
    // is derived for arbitrary B, so the generic point is the stronger
    // check and subsumes the Hermitian case.
    let mut phi_nn = random_hpd(rng, m);
    for i in 0..m {
        for j in 0..m {
            phi_nn[(i, j)] += Complex64::new(0.05 * rng.normal(), 0.05 * rng.normal());
        }
    }
    let raw: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(rng.normal(), rng.normal()))
        .collect();
    let w = linalg::normalize_phase_fix(&raw);
    let w_opt_bar: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(rng.normal(), rng.normal()))
        .collect();
    let (w_bar, phi_bar) = ban_vjp(&w, &phi_nn, &w_opt_bar)?;
    let w_mat = ComplexMatrix::from_fn(1, m, |_, j| w[j]);
    let w_bar_mat = ComplexMatrix::from_fn(1, m, |_, j| w_bar[j]);
    let point = {
        let mut p = pack_complex(&[&w_mat]);
        p.extend(pack_complex(&[&phi_nn]));
        p
    };
    let analytic = {
        let mut a = pack_cot_complex(&[&w_bar_mat]);
        a.extend(pack_cot_complex(&[&phi_bar]));
        a
    };
    let ob = w_opt_bar;
    Ok(CheckableOpParts {
        point,
        scalar: Box::new(move |x: &[f64]| {
            let wv: Vec<Complex64> = (0..m)
                .map(|i| Complex64::new(x[2 * i], x[2 * i + 1]))
                .collect();
            let b = unpack_complex(x, m, m, 2 * m);
            let g = crate::beamform::ban_gain(&wv, &b);
            wv.iter()
                .zip(&ob)
                .map(|(wi, o)| {
                    let w_opt = wi * g;
                    w_opt.re * o.re + w_opt.im * o.im
                })
                .sum()
        }),
        analytic,
    })
}

fn build_apply_op(rng: &mut crate::rng::Rng) -> Result<CheckableOpParts> {
    use crate::beamform::{apply_beamformer, BeamformerVariant, BeamformerWeights};
    let (m, t, f) = (2, 3, 2);
    let y = random_spectrogram(rng, m, t, f);
    let mut s_bar = ComplexSpectrogram::zeros(1, t, f, crate::signal::StftConfig::default());
    for ti in 0..t {
        for fi in 0..f {
            *s_bar.at_mut(0, ti, fi) = Complex64::new(rng.normal(), rng.normal());
        }
    }
    let w: Vec<Vec<Complex64>> = (0..f)
        .map(|_| {
            (0..m)
                .map(|_| Complex64::new(rng.normal(), rng.normal()))
                .collect()
        })
        .collect();
    let w_bar = apply_vjp(&y, &s_bar);
    let mut point = Vec::new();
    let mut analytic = Vec::new();
    for fi in 0..f {
        for mi in 0..m {
            point.push(w[fi][mi].re);
            point.push(w[fi][mi].im);
            analytic.push(w_bar[fi][mi].re);
            analytic.push(w_bar[fi][mi].im);
        }
    }
    Ok(CheckableOpParts {
        point,
        scalar: Box::new(move |x: &[f64]| {
            let mut wv = vec![vec![Complex64::new(0.0, 0.0); m]; f];
            for fi in 0..f {
                for mi in 0..m {
                    let idx = 2 * (fi * m + mi);
                    wv[fi][mi] = Complex64::new(x[idx], x[idx + 1]);
                }
            }
            let weights = BeamformerWeights {
                w: wv,
                variant: BeamformerVariant::Gev,
                ban_scale: None,
                degenerate: vec![false; f],
            };
            let s = apply_beamformer(&weights, &y).unwrap();
            let mut acc = 0.0;
            for ti in 0..t {
                for fi in 0..f {
                    let z = s.at(0, ti, fi);
                    let zb = s_bar.at(0, ti, fi);
                    acc += z.re * zb.re + z.im * zb.im;
                }
            }
            acc
        }),
        analytic,
    })
}

fn build_masknet_op(rng: &mut crate::rng::Rng) -> Result<CheckableOpParts> {
    use crate::maskestim::{backward, forward, forward_recorded, MaskNetConfig};
    let cfg = MaskNetConfig::new(4, vec![5], rng.next_u64());
    let mut store = crate::maskestim::init_params(&cfg)?;
    let t = 3;
    let mag = RealMatrix::from_fn(t, 4, |_, _| 0.1 + rng.uniform());
    let speech_cot = RealMatrix::from_fn(t, 4, |_, _| rng.normal());
    let noise_cot = RealMatrix::from_fn(t, 4, |_, _| rng.normal());
    let (_, record) = forward_recorded(&mag, &store, &cfg)?;
    store.zero_grads();
    backward(&record, &speech_cot, &noise_cot, &mut store)?;
    let analytic = store.flatten_grads();
    let point = store.flatten();
    let base = store.clone();
    Ok(CheckableOpParts {
        point,
        scalar: Box::new(move |x: &[f64]| {
            let mut s = base.clone();
            s.unflatten(x).unwrap();
            let pair = forward(&mag, &s, &cfg).unwrap();
            let mut acc = 0.0;
            for ti in 0..t {
                for fi in 0..4 {
                    acc += pair.speech[(ti, fi)] * speech_cot[(ti, fi)]
                        + pair.noise[(ti, fi)] * noise_cot[(ti, fi)];
                }
            }
            acc
        }),
        analytic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn qr_vjp_zero_cotangents_give_zero() {
        let mut rng = Rng::new(1);
        let a = ComplexMatrix::from_fn(3, 3, |_, _| Complex64::new(rng.normal(), rng.normal()));
        let f = linalg::qr_decompose(&a).unwrap();
        let zero = ComplexMatrix::zeros(3, 3);
        let a_bar = qr_vjp(&a, &f.q, &f.r, &zero, &zero).unwrap();
        assert!(a_bar.frobenius_norm() == 0.0);
    }

    #[test]
    fn qr_vjp_matches_finite_differences() {
        for seed in 0..5u64 {
            let report = finite_diff_check("qr", seed, 1e-6).unwrap();
            assert!(
                report.max_rel_err < 1e-5,
                "seed {seed}: {:.3e}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn qr_vjp_at_identity_with_r_cotangent() {
        // a = I, r_bar = I, q_bar = 0: compare against finite differences.
        let n = 3;
        let a = ComplexMatrix::identity(n);
        let f = linalg::qr_decompose(&a).unwrap();
        let r_bar = ComplexMatrix::identity(n);
        let q_bar = ComplexMatrix::zeros(n, n);
        let a_bar = qr_vjp(&a, &f.q, &f.r, &q_bar, &r_bar).unwrap();
        let eps = 1e-6;
        for i in 0..n {
            for j in 0..n {
                for part in 0..2 {
                    let perturb = |sign: f64| {
                        let mut ap = a.clone();
                        let delta = if part == 0 {
                            Complex64::new(sign * eps, 0.0)
                        } else {
                            Complex64::new(0.0, sign * eps)
                        };
                        ap[(i, j)] += delta;
                        let fp = linalg::qr_decompose(&ap).unwrap();
                        let mut acc = 0.0;
                        for d in 0..n {
                            acc += fp.r[(d, d)].re;
                        }
                        acc
                    };
                    let numeric = (perturb(1.0) - perturb(-1.0)) / (2.0 * eps);
                    let analytic = if part == 0 {
                        a_bar[(i, j)].re
                    } else {
                        a_bar[(i, j)].im
                    };
                    assert!(
                        (analytic - numeric).abs() < 1e-6,
                        "entry ({i},{j}) part {part}: analytic {analytic}, numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn eig_chain_zero_cotangent_gives_zero() {
        let mut rng = Rng::new(3);
        let phi_xx = random_hpd(&mut rng, 2);
        let phi_nn = random_hpd(&mut rng, 2);
        let record = eig_chain_forward(&phi_xx, &phi_nn, 5, 1e-6).unwrap();
        let zero = vec![Complex64::new(0.0, 0.0); 2];
        let (xx_bar, nn_bar) = eig_chain_vjp(&record, &zero, 0.0).unwrap();
        assert_eq!(xx_bar.frobenius_norm(), 0.0);
        assert_eq!(nn_bar.frobenius_norm(), 0.0);
    }

    #[test]
    fn eig_chain_matches_finite_differences() {
        for seed in 0..5u64 {
            let report = finite_diff_check("eig_chain", seed, 1e-6).unwrap();
            assert!(
                report.max_rel_err < 1e-4,
                "seed {seed}: {:.3e}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn eig_chain_gradient_vanishes_along_speech_scaling_ray() {
        // v(alpha Phi_xx) = v(Phi_xx): the directional derivative of any
        // eigenvector functional along d(Phi_xx) = Phi_xx must vanish.
        let mut rng = Rng::new(4);
        let phi_xx = random_hpd(&mut rng, 3);
        let phi_nn = random_hpd(&mut rng, 3);
        let v_bar: Vec<Complex64> = (0..3)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        let record = eig_chain_forward(&phi_xx, &phi_nn, 5, 0.0).unwrap();
        let (xx_bar, _) = eig_chain_vjp(&record, &v_bar, 0.0).unwrap();
        // projection of the gradient on the scaling direction
        let mut proj = 0.0;
        for (g, p) in xx_bar.data().iter().zip(phi_xx.data()) {
            proj += g.re * p.re + g.im * p.im;
        }
        assert!(proj.abs() < 1e-8, "projection {proj:.3e}");
        // corroborate with a finite difference along the ray
        let eps = 1e-6;
        let eval = |scale: f64| -> f64 {
            let rec =
                eig_chain_forward(&phi_xx.scale(Complex64::new(scale, 0.0)), &phi_nn, 5, 0.0)
                    .unwrap();
            rec.v
                .iter()
                .zip(&v_bar)
                .map(|(z, zb)| z.re * zb.re + z.im * zb.im)
                .sum()
        };
        let numeric = (eval(1.0 + eps) - eval(1.0 - eps)) / (2.0 * eps);
        assert!(numeric.abs() < 1e-7, "numeric directional {numeric:.3e}");
    }

    #[test]
    fn cov_vjp_zero_cotangent_gives_zero() {
        let mut rng = Rng::new(5);
        let y = random_spectrogram(&mut rng, 2, 3, 2);
        let mask = RealMatrix::from_fn(3, 2, |_, _| 0.5);
        let zeros = vec![ComplexMatrix::zeros(2, 2); 2];
        let mask_bar = cov_vjp(&y, &mask, &zeros).unwrap();
        assert!(mask_bar.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cov_vjp_matches_finite_differences() {
        for seed in 0..5u64 {
            let report = finite_diff_check("cov", seed, 1e-6).unwrap();
            assert!(
                report.max_rel_err < 1e-6,
                "seed {seed}: {:.3e}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn cov_vjp_uniform_mask_t2_matches_hand_expansion() {
        // T = 2, uniform mask lambda, identity cotangent:
        // d/d lambda_1 = (||Y1||^2 - ||Y2||^2) / (4 lambda).
        let mut rng = Rng::new(6);
        let m = 2;
        let y = random_spectrogram(&mut rng, m, 2, 1);
        let lambda = 0.4;
        let mask = RealMatrix::from_fn(2, 1, |_, _| lambda);
        let phi_bar = vec![ComplexMatrix::identity(m)];
        let mask_bar = cov_vjp(&y, &mask, &phi_bar).unwrap();
        let e1: f64 = y.snapshot(0, 0).iter().map(|z| z.norm_sqr()).sum();
        let e2: f64 = y.snapshot(1, 0).iter().map(|z| z.norm_sqr()).sum();
        let expect_1 = (e1 - e2) / (4.0 * lambda);
        let expect_2 = (e2 - e1) / (4.0 * lambda);
        assert!((mask_bar[(0, 0)] - expect_1).abs() < 1e-12);
        assert!((mask_bar[(1, 0)] - expect_2).abs() < 1e-12);
    }

    #[test]
    fn ban_vjp_matches_finite_differences() {
        for seed in 0..5u64 {
            let report = finite_diff_check("ban", seed, 1e-6).unwrap();
            assert!(
                report.max_rel_err < 1e-4,
                "seed {seed}: {:.3e}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn apply_vjp_matches_finite_differences() {
        for seed in 0..5u64 {
            let report = finite_diff_check("beamform_apply", seed, 1e-6).unwrap();
            assert!(
                report.max_rel_err < 1e-6,
                "seed {seed}: {:.3e}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn masknet_check_passes() {
        for seed in 0..3u64 {
            let report = finite_diff_check("masknet_backward", seed, 1e-6).unwrap();
            assert!(
                report.max_rel_err < 1e-5,
                "seed {seed}: {:.3e}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn zero_eps_is_invalid() {
        assert!(matches!(
            finite_diff_check("qr", 0, 0.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn unknown_op_is_not_found() {
        assert!(matches!(
            finite_diff_check("nope", 0, 1e-6),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn gradcheck_is_deterministic() {
        let a = finite_diff_check("eig_chain", 7, 1e-6).unwrap();
        let b = finite_diff_check("eig_chain", 7, 1e-6).unwrap();
        assert_eq!(a.max_rel_err.to_bits(), b.max_rel_err.to_bits());
    }
}

/// Test-support diagnostic: print the worst DOFs of a checkable op.
#[doc(hidden)]
pub fn finite_diff_check_debug(op_id: &str, seed: u64, eps: f64) {
    let op = build_op(op_id, seed).unwrap();
    let mut point = op.point.clone();
    let mut worst: Vec<(f64, usize, f64, f64)> = Vec::new();
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let fp = (op.scalar)(&point);
        point[i] = orig - eps;
        let fm = (op.scalar)(&point);
        point[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let analytic = op.analytic[i];
        let denom = analytic.abs().max(numeric.abs()).max(1e-12);
        worst.push(((analytic - numeric).abs() / denom, i, analytic, numeric));
    }
    worst.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (rel, i, a, n) in worst.iter().take(5) {
        println!("dof {i}: rel {rel:.3e} analytic {a:.6e} numeric {n:.6e}");
    }
}
