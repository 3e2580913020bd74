//! Complex dense matrix kernels.
//!
//! Provides the QR decomposition (Householder reflections with a fixed
//! phase convention), the unrolled QR-algorithm eigensolver, and Hermitian
//! linear solves used to turn a covariance pair into the matrix whose
//! principal eigenvector is the beamforming direction.
//!
//! All routines are pure and deterministic: identical inputs produce
//! bit-identical outputs on one platform.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

/// Dense real matrix, row-major. Used for masks, filterbanks and features.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = RealMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        RealMatrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for RealMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for RealMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> Complex64,
    ) -> Self {
        let mut m = ComplexMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Build from a row-major slice of (re, im) pairs.
    pub fn from_pairs(rows: usize, cols: usize, entries: &[(f64, f64)]) -> Self {
        assert_eq!(entries.len(), rows * cols);
        ComplexMatrix {
            rows,
            cols,
            data: entries.iter().map(|&(re, im)| Complex64::new(re, im)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn mul(&self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.cols, rhs.rows, "matmul shape");
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    /// self * v for a column vector v.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..self.cols {
                    acc += self[(i, j)] * v[j];
                }
                acc
            })
            .collect()
    }

    pub fn add(&self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> ComplexMatrix {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= s;
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        assert!(self.is_square());
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Frobenius norm of (self - self^H).
    pub fn hermitian_deviation(&self) -> f64 {
        assert!(self.is_square());
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let d = self[(i, j)] - self[(j, i)].conj();
                acc += d.norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// (self + self^H) / 2, exactly Hermitian by construction.
    pub fn symmetrize(&self) -> ComplexMatrix {
        assert!(self.is_square());
        let n = self.rows;
        let mut out = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = Complex64::new(self[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let v = 0.5 * (self[(i, j)] + self[(j, i)].conj());
                out[(i, j)] = v;
                out[(j, i)] = v.conj();
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Result of [`qr_decompose`]: `a = q * r` with unitary `q`, upper
/// triangular `r` and the phase convention diag(r) real and nonnegative.
#[derive(Debug, Clone)]
pub struct QrFactors {
    pub q: ComplexMatrix,
    pub r: ComplexMatrix,
}

/// Result of the unrolled QR algorithm.
#[derive(Debug, Clone)]
pub struct EigResult {
    /// A_K after `k_iters` similarity steps.
    pub a_final: ComplexMatrix,
    /// Accumulated product of the per-iteration Q factors.
    pub accum_q: ComplexMatrix,
    pub k_iters: usize,
}

/// Per-iteration record of the QR algorithm, retained for reverse-mode
/// differentiation. `a[k]`, `q[k]`, `r[k]` are the iterates, `prefix[k]`
/// is the product Q_0 ... Q_{k-1} (so `prefix[0] = I`).
#[derive(Debug, Clone)]
pub struct QrIterRecord {
    pub a: Vec<ComplexMatrix>,
    pub q: Vec<ComplexMatrix>,
    pub r: Vec<ComplexMatrix>,
    pub prefix: Vec<ComplexMatrix>,
}

fn check_square_finite(a: &ComplexMatrix, op: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "{op}: expected square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::InvalidInput(format!("{op}: non-finite entries")));
    }
    Ok(())
}

/// Householder QR with the column-phase convention diag(R) real >= 0.
///
/// The convention removes the per-column U(1) gauge freedom, so the map
/// from `a` to `(q, r)` is a function and its reverse-mode derivative is
/// well defined.
pub fn qr_decompose(a: &ComplexMatrix) -> Result<QrFactors> {
    check_square_finite(a, "qr_decompose")?;
    let n = a.rows();
    let mut r = a.clone();
    let mut q = ComplexMatrix::identity(n);

    for k in 0..n.saturating_sub(1) {
        // Householder vector for column k below the diagonal.
        let mut norm_sq = 0.0;
        for i in k..n {
            norm_sq += r[(i, k)].norm_sqr();
        }
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = r[(k, k)];
        let phase = if x0.norm() > 0.0 {
            x0 / Complex64::new(x0.norm(), 0.0)
        } else {
            Complex64::new(1.0, 0.0)
        };
        // v = x + phase * ||x|| * e1 avoids cancellation.
        let mut v: Vec<Complex64> = (k..n).map(|i| r[(i, k)]).collect();
        v[0] += phase * norm;
        let vnorm_sq: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vnorm_sq == 0.0 {
            continue;
        }
        let tau = 2.0 / vnorm_sq;

        // R[k.., j] -= tau * (v^H R[k.., j]) v
        for j in k..n {
            let mut c = Complex64::new(0.0, 0.0);
            for (idx, i) in (k..n).enumerate() {
                c += v[idx].conj() * r[(i, j)];
            }
            c *= tau;
            for (idx, i) in (k..n).enumerate() {
                let upd = c * v[idx];
                r[(i, j)] -= upd;
            }
        }
        // Q <- Q * H: Q[i, k..] -= tau * (Q[i, k..] . v) v^H
        for i in 0..n {
            let mut c = Complex64::new(0.0, 0.0);
            for (idx, j) in (k..n).enumerate() {
                c += q[(i, j)] * v[idx];
            }
            c *= tau;
            for (idx, j) in (k..n).enumerate() {
                let upd = c * v[idx].conj();
                q[(i, j)] -= upd;
            }
        }
    }

    // Phase fix: rotate each column of Q / row of R so diag(R) is real >= 0,
    // and zero out the strictly lower triangle of R exactly.
    for j in 0..n {
        let d = r[(j, j)];
        let mag = d.norm();
        if mag > 0.0 {
            let ph = d / Complex64::new(mag, 0.0);
            let ph_conj = ph.conj();
            for c in j..n {
                r[(j, c)] *= ph_conj;
            }
            r[(j, j)] = Complex64::new(mag, 0.0);
            for i in 0..n {
                q[(i, j)] *= ph;
            }
        }
        for i in (j + 1)..n {
            r[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }

    Ok(QrFactors { q, r })
}

/// Unshifted QR algorithm: A_{k+1} = R_k Q_k, accumulating the Q factors.
pub fn qr_algorithm(a0: &ComplexMatrix, k_iters: usize) -> Result<EigResult> {
    let (result, _) = qr_algorithm_recorded(a0, k_iters)?;
    Ok(result)
}

/// Same as [`qr_algorithm`] but also returns the per-iteration record
/// needed by the reverse pass.
pub fn qr_algorithm_recorded(
    a0: &ComplexMatrix,
    k_iters: usize,
) -> Result<(EigResult, QrIterRecord)> {
    if k_iters < 1 {
        return Err(Error::InvalidConfig(
            "qr_algorithm: k_iters must be >= 1".into(),
        ));
    }
    check_square_finite(a0, "qr_algorithm")?;
    let n = a0.rows();

    let mut record = QrIterRecord {
        a: Vec::with_capacity(k_iters + 1),
        q: Vec::with_capacity(k_iters),
        r: Vec::with_capacity(k_iters),
        prefix: Vec::with_capacity(k_iters + 1),
    };
    record.a.push(a0.clone());
    record.prefix.push(ComplexMatrix::identity(n));

    let mut a = a0.clone();
    let mut accum = ComplexMatrix::identity(n);
    for _ in 0..k_iters {
        let QrFactors { q, r } = qr_decompose(&a)?;
        a = r.mul(&q);
        accum = accum.mul(&q);
        record.q.push(q);
        record.r.push(r);
        record.a.push(a.clone());
        record.prefix.push(accum.clone());
    }

    Ok((
        EigResult {
            a_final: a,
            accum_q: accum,
            k_iters,
        },
        record,
    ))
}

/// Normalize a complex vector to unit length and rotate it so its
/// largest-magnitude entry is real and nonnegative.
pub fn normalize_phase_fix(v: &[Complex64]) -> Vec<Complex64> {
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut out: Vec<Complex64> = if norm > 0.0 {
        v.iter().map(|z| z / norm).collect()
    } else {
        v.to_vec()
    };
    let j = dominant_index(&out);
    let zj = out[j];
    let mag = zj.norm();
    if mag > 0.0 {
        let c = zj.conj() / Complex64::new(mag, 0.0);
        for z in out.iter_mut() {
            *z *= c;
        }
        out[j] = Complex64::new(mag, 0.0);
    }
    out
}

/// Index of the largest-magnitude entry; ties resolved toward the lower index.
pub fn dominant_index(v: &[Complex64]) -> usize {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let m = z.norm_sqr();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    best
}

/// Principal eigenpair of `phi` via `k_iters` unshifted QR steps.
///
/// For the covariance-quotient matrices this crate feeds in, the spectrum
/// is real and positive and the unshifted iteration orders eigenvalues by
/// descending magnitude, so the first diagonal entry / first accumulated
/// column approximate the principal pair. The approximation error at small
/// `k_iters` is quantified by the acceptance suite, not assumed zero.
pub fn principal_pair(phi: &ComplexMatrix, k_iters: usize) -> Result<(f64, Vec<Complex64>)> {
    if k_iters < 1 {
        return Err(Error::InvalidConfig(
            "principal_pair: k_iters must be >= 1".into(),
        ));
    }
    let eig = qr_algorithm(phi, k_iters)?;
    let eigval = eig.a_final[(0, 0)].re;
    let col: Vec<Complex64> = (0..phi.rows()).map(|i| eig.accum_q[(i, 0)]).collect();
    Ok((eigval, normalize_phase_fix(&col)))
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_square_finite(a, "cholesky")?;
    let n = a.rows();
    let mut l = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::SingularCovariance(format!(
                "cholesky: non-positive pivot {d:.3e} at index {j}"
            )));
        }
        let ljj = d.sqrt();
        l[(j, j)] = Complex64::new(ljj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solve (L L^H) X = B column by column given the Cholesky factor L.
pub fn cholesky_solve(l: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let n = l.rows();
    assert_eq!(b.rows(), n);
    let m = b.cols();
    let mut x = b.clone();
    // Forward: L y = b
    for col in 0..m {
        for i in 0..n {
            let mut s = x[(i, col)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)].re;
        }
    }
    // Backward: L^H x = y
    for col in 0..m {
        for i in (0..n).rev() {
            let mut s = x[(i, col)];
            for k in (i + 1)..n {
                s -= l[(k, i)].conj() * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)].re;
        }
    }
    x
}

/// Apply diagonal loading relative to the mean eigenvalue:
/// `phi + loading * tr(phi)/n * I` on the symmetrized input.
pub fn load_hermitian(phi: &ComplexMatrix, loading: f64) -> ComplexMatrix {
    let n = phi.rows();
    let sym = phi.symmetrize();
    let shift = loading * sym.trace().re / n as f64;
    let mut out = sym;
    for i in 0..n {
        out[(i, i)] += Complex64::new(shift, 0.0);
    }
    out
}

/// Solve (phi + loading*tr(phi)/n * I) X = b for Hermitian PSD `phi`.
///
/// The loaded matrix is factorized with a Cholesky decomposition and the
/// solve runs against the factors directly; no explicit inverse is formed.
pub fn herm_solve(phi: &ComplexMatrix, b: &ComplexMatrix, loading: f64) -> Result<ComplexMatrix> {
    check_square_finite(phi, "herm_solve")?;
    if b.rows() != phi.rows() {
        return Err(Error::ShapeMismatch(format!(
            "herm_solve: phi is {}x{} but b has {} rows",
            phi.rows(),
            phi.cols(),
            b.rows()
        )));
    }
    if loading < 0.0 {
        return Err(Error::InvalidConfig("herm_solve: loading must be >= 0".into()));
    }
    let dev = phi.hermitian_deviation();
    let scale = phi.frobenius_norm().max(1.0);
    if dev > 1e-8 * scale {
        return Err(Error::InvalidInput(format!(
            "herm_solve: matrix deviates from Hermitian by {dev:.3e}"
        )));
    }
    let loaded = load_hermitian(phi, loading);
    let l = cholesky(&loaded)?;
    Ok(cholesky_solve(&l, b))
}
