//! Dense linear-algebra helpers shared by every module.
//!
//! All decompositions return factors sorted by non-increasing eigenvalue or
//! singular value, with the sign of each vector fixed so that its
//! largest-magnitude entry is positive.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Non-increasing.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, matching `values`.
    pub vectors: Mat,
}

#[derive(Debug, Clone)]
pub struct Svd {
    /// Left singular vectors as columns (m × k).
    pub u: Mat,
    /// Non-increasing, length k = min(m, n).
    pub singular: Vec<f64>,
    /// Right singular vectors as columns (n × k).
    pub v: Mat,
}

fn largest_magnitude_index(col: nalgebra::DVectorView<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_abs = -1.0;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > best_abs + 1e-14 {
            best_abs = x.abs();
            best = i;
        }
    }
    best
}

/// Flips column signs so the largest-magnitude entry of each column is
/// positive, applying the same flip to `partner` when present.
pub fn fix_column_signs(vectors: &mut Mat, mut partner: Option<&mut Mat>) {
    for c in 0..vectors.ncols() {
        let idx = largest_magnitude_index(vectors.column(c).as_view());
        if vectors[(idx, c)] < 0.0 {
            vectors.column_mut(c).neg_mut();
            if let Some(p) = partner.as_deref_mut() {
                p.column_mut(c).neg_mut();
            }
        }
    }
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of the symmetric part of `m`.
pub fn sym_eigen(m: &Mat) -> Result<SymEigen> {
    if !m.is_square() {
        return Err(Error::shape(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(SymEigen {
            values: Vec::new(),
            vectors: Mat::zeros(0, 0),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("non-finite entry in symmetric eigenproblem"));
    }
    let eig = nalgebra_lapack::SymmetricEigen::try_new(symmetrize(m))
        .ok_or_else(|| Error::numeric("symmetric eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_column_signs(&mut vectors, None);
    Ok(SymEigen { values, vectors })
}

/// Thin SVD `m = U diag(S) Vᵀ`.
pub fn svd(m: &Mat) -> Result<Svd> {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(Svd {
            u: Mat::zeros(rows, 0),
            singular: Vec::new(),
            v: Mat::zeros(cols, 0),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("non-finite entry in SVD input"));
    }
    let dec = nalgebra_lapack::SVD::new(m.clone()).ok_or_else(|| Error::numeric("SVD did not converge"))?;
    let (u_raw, vt_raw) = (dec.u, dec.vt);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let mut u = Mat::zeros(rows, k);
    let mut v = Mat::zeros(cols, k);
    let mut singular = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u_raw.column(src));
        v.set_column(dst, &vt_raw.row(src).transpose());
        singular.push(dec.singular_values[src].max(0.0));
    }
    fix_column_signs(&mut u, Some(&mut v));
    let mut scaled = u.clone();
    for (c, &sv) in singular.iter().enumerate() {
        scaled.column_mut(c).scale_mut(sv);
    }
    let residual = (scaled * v.transpose() - m).abs().max();
    if residual > 1e-10 * singular[0].max(f64::MIN_POSITIVE) * k as f64 {
        return Err(Error::numeric(format!("SVD reconstruction residual {residual:e}")));
    }
    Ok(Svd { u, singular, v })
}

/// Applies `f` to the clamped eigenvalues of a symmetric matrix.
pub fn sym_apply(m: &Mat, f: impl Fn(f64) -> f64) -> Result<Mat> {
    let eig = sym_eigen(m)?;
    Ok(reconstruct(&eig, |x| f(x.max(0.0))))
}

fn reconstruct(eig: &SymEigen, f: impl Fn(f64) -> f64) -> Mat {
    let n = eig.vectors.nrows();
    let mut scaled = eig.vectors.clone();
    for (c, &val) in eig.values.iter().enumerate() {
        let s = f(val);
        scaled.column_mut(c).scale_mut(s);
    }
    let out = scaled * eig.vectors.transpose();
    debug_assert_eq!(out.nrows(), n);
    symmetrize(&out)
}

/// Principal square root of a PSD matrix, negative eigenvalues clamped to 0.
pub fn psd_sqrt(m: &Mat) -> Result<Mat> {
    sym_apply(m, f64::sqrt)
}

/// Pseudo-inverse square root: eigenvalues below `rel_cutoff · λ_max` are
/// treated as zero. Returns the matrix and the number of retained eigenvalues.
pub fn psd_pinv_sqrt(m: &Mat, rel_cutoff: f64) -> Result<(Mat, usize)> {
    let eig = sym_eigen(m)?;
    let lmax = eig.values.first().copied().unwrap_or(0.0);
    if lmax <= 0.0 {
        return Ok((Mat::zeros(m.nrows(), m.ncols()), 0));
    }
    let threshold = rel_cutoff * lmax;
    let rank = eig.values.iter().filter(|&&v| v > threshold).count();
    let out = reconstruct(&eig, |v| if v > threshold { 1.0 / v.sqrt() } else { 0.0 });
    Ok((out, rank))
}

pub fn frobenius(m: &Mat) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular value.
pub fn operator_norm(m: &Mat) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.is_square() && (m - m.transpose()).abs().max() <= 1e-12 * (1.0 + m.abs().max()) {
        let eig = sym_eigen(m)?;
        return Ok(eig.values.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
    }
    Ok(svd(m)?.singular.first().copied().unwrap_or(0.0))
}

pub fn trace(m: &Mat) -> f64 {
    m.diagonal().sum()
}

/// Uncentered second moment `(1/n) XᵀX` of the rows of `x`.
pub fn second_moment(x: &Mat) -> Mat {
    let n = x.nrows().max(1) as f64;
    x.tr_mul(x) / n
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    // Column-major fill order is part of the determinism contract.
    Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-distributed orthogonal matrix from the QR factorization of a
/// Gaussian matrix, with `diag(R) > 0`.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat {
    let g = gaussian_matrix(n, n, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..n {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

/// `n × k` matrix with orthonormal columns (k ≤ n).
pub fn random_orthonormal_columns<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Mat {
    random_orthogonal(n, rng).columns(0, k).into_owned()
}

/// Largest absolute entry of `AᵀA − I`.
pub fn orthonormality_defect(a: &Mat) -> f64 {
    let gram = a.tr_mul(a);
    let n = gram.nrows();
    (gram - Mat::identity(n, n)).abs().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn eigen_sorted_and_sign_fixed() {
        let m = Mat::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let e = sym_eigen(&m).unwrap();
        assert!((e.values[0] - 5.0).abs() < 1e-12);
        assert!((e.values[1] - 3.0).abs() < 1e-12);
        assert!((e.values[2] - 1.0).abs() < 1e-12);
        for c in 0..3 {
            let col = e.vectors.column(c);
            let idx = largest_magnitude_index(col.as_view());
            assert!(col[idx] > 0.0);
        }
    }

    #[test]
    fn svd_reconstructs() {
        let mut r = rng::stream(1, "linalg", "svd", 0);
        let m = gaussian_matrix(7, 4, &mut r);
        let s = svd(&m).unwrap();
        let rec = &s.u * Mat::from_diagonal(&Vector::from_vec(s.singular.clone())) * s.v.transpose();
        assert!((rec - &m).abs().max() < 1e-12);
        assert!(s.singular.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sqrt_and_pinv_sqrt() {
        let mut r = rng::stream(2, "linalg", "sqrt", 0);
        let g = gaussian_matrix(6, 6, &mut r);
        let c = g.tr_mul(&g);
        let s = psd_sqrt(&c).unwrap();
        assert!((&s * &s - &c).abs().max() < 1e-9);
        let (p, rank) = psd_pinv_sqrt(&c, 1e-12).unwrap();
        assert_eq!(rank, 6);
        let id = &p * &c * &p;
        assert!((id - Mat::identity(6, 6)).abs().max() < 1e-8);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut r = rng::stream(3, "linalg", "orth", 0);
        let q = random_orthogonal(9, &mut r);
        assert!(orthonormality_defect(&q) < 1e-12);
    }
}
