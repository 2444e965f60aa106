//! Kernels, Gram operators and spectral diagnostics.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Relative tolerance below which negative eigenvalues count as roundoff.
const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GramSource {
    Empirical { layer: usize },
    Analytic,
}

/// `(1/n)·[k(xᵢ, xᵢ′)]` on a fixed sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct GramOperator {
    pub matrix: Mat,
    pub source: GramSource,
}

impl GramOperator {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Kernel values `k(xᵢ, xᵢ′)`, i.e. the matrix without the `1/n` factor.
    pub fn kernel_values(&self) -> Mat {
        &self.matrix * self.n() as f64
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.matrix)
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(linalg::sym_eigen(&self.matrix)?.values)
    }
}

/// `(1/n) ΦΦᵀ`.
pub fn empirical_gram(activations: &Mat, layer: usize) -> GramOperator {
    let n = activations.nrows().max(1) as f64;
    let g = activations * activations.transpose() / n;
    GramOperator {
        matrix: linalg::symmetrize(&g),
        source: GramSource::Empirical { layer },
    }
}

/// Arc-cosine kernel from the Gaussian inner products `xᵀCx`, `x′ᵀCx′`,
/// `xᵀCx′`.
pub fn arccos_from_products(kxx: f64, kyy: f64, kxy: f64) -> f64 {
    let a = kxx.max(0.0).sqrt();
    let b = kyy.max(0.0).sqrt();
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let cos = (kxy / (a * b)).clamp(-1.0, 1.0);
    let theta = cos.acos();
    a * b * (theta.sin() + (PI - theta) * cos) / (2.0 * PI)
}

/// `𝔼_{w∼N(0,C)}[ReLU⟨x,w⟩ ReLU⟨x′,w⟩]`.
pub fn arccos_kernel(x: &[f64], y: &[f64], c: &Mat) -> Result<f64> {
    let d = x.len();
    if y.len() != d || c.shape() != (d, d) {
        return Err(Error::shape(format!(
            "arccos kernel needs two length-{d} vectors and a {d}x{d} covariance"
        )));
    }
    let xv = linalg::Vector::from_column_slice(x);
    let yv = linalg::Vector::from_column_slice(y);
    let cx = c * &xv;
    let cy = c * &yv;
    Ok(arccos_from_products(xv.dot(&cx), yv.dot(&cy), xv.dot(&cy)))
}

/// Applies the arc-cosine map entrywise to a matrix of inner products.
pub fn arccos_map(products: &Mat) -> Mat {
    let n = products.nrows();
    Mat::from_fn(n, n, |i, j| {
        arccos_from_products(products[(i, i)], products[(j, j)], products[(i, j)])
    })
}

/// Gram operator of the arc-cosine kernel with weight covariance `c`.
pub fn analytic_gram(inputs: &Mat, c: &Mat) -> Result<GramOperator> {
    let d = inputs.ncols();
    if c.shape() != (d, d) {
        return Err(Error::shape(format!(
            "covariance is {:?}, inputs have dim {d}",
            c.shape()
        )));
    }
    let products = inputs * c * inputs.transpose();
    let n = inputs.nrows().max(1) as f64;
    Ok(GramOperator {
        matrix: linalg::symmetrize(&arccos_map(&products)) / n,
        source: GramSource::Analytic,
    })
}

/// Mean squared difference of kernel values over all sample pairs.
pub fn kernel_mse(gram_hat: &GramOperator, gram_ref: &GramOperator) -> Result<f64> {
    if gram_hat.matrix.shape() != gram_ref.matrix.shape() {
        return Err(Error::shape("Gram operators on different sample sets"));
    }
    let n = gram_hat.n();
    if n == 0 {
        return Ok(0.0);
    }
    let diff = (&gram_hat.matrix - &gram_ref.matrix) * n as f64;
    Ok(diff.norm_squared() / (n * n) as f64)
}

fn check_psd(m: &Mat, what: &str) -> Result<()> {
    let eig = linalg::sym_eigen(m)?;
    let scale = eig.values.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    if let Some(&min) = eig.values.last() {
        if min < -PSD_TOL * scale {
            return Err(Error::numeric(format!(
                "{what} is not positive semi-definite (eigenvalue {min:e})"
            )));
        }
    }
    Ok(())
}

fn check_same(a: &GramOperator, b: &GramOperator) -> Result<()> {
    if a.matrix.shape() != b.matrix.shape() || !a.matrix.is_square() {
        return Err(Error::shape("Gram operators must be square and of equal size"));
    }
    Ok(())
}

/// Squared Bures-Wasserstein distance
/// `tr T̂ + tr T − 2 tr (T^{1/2} T̂ T^{1/2})^{1/2}`.
pub fn bures_wasserstein(gram_hat: &GramOperator, gram_ref: &GramOperator) -> Result<f64> {
    check_same(gram_hat, gram_ref)?;
    check_psd(&gram_hat.matrix, "T̂")?;
    check_psd(&gram_ref.matrix, "T")?;
    // Eigenvalues at round-off level are zeroed before square roots, where
    // they would otherwise contribute O(√ε).
    let n = gram_ref.n() as f64;
    let floor = |values: &[f64]| n * f64::EPSILON * values.first().copied().unwrap_or(0.0).max(0.0);
    let eig = linalg::sym_eigen(&gram_ref.matrix)?;
    let cut = floor(&eig.values);
    let mut s = eig.vectors.clone();
    for (c, &v) in eig.values.iter().enumerate() {
        s.column_mut(c).scale_mut(if v > cut { v.sqrt() } else { 0.0 });
    }
    let inner = linalg::symmetrize(&(s.transpose() * &gram_hat.matrix * &s));
    let values = linalg::sym_eigen(&inner)?.values;
    let cut = floor(&values);
    let fidelity: f64 = values.iter().filter(|&&v| v > cut).map(|v| v.sqrt()).sum();
    Ok((gram_hat.trace() + gram_ref.trace() - 2.0 * fidelity).max(0.0))
}

/// `‖T‖₂‖T̂−T‖₂/λ + tr(T̂−T) + 2 tr(T + λI − (T² + λ²I)^{1/2})` with
/// Hilbert-Schmidt norms.
pub fn entropic_bw_bound(gram_hat: &GramOperator, gram_ref: &GramOperator, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::param(format!("lambda must be > 0, got {lambda}")));
    }
    check_same(gram_hat, gram_ref)?;
    let diff = &gram_hat.matrix - &gram_ref.matrix;
    let first = linalg::frobenius(&gram_ref.matrix) * linalg::frobenius(&diff) / lambda;
    let second = linalg::trace(&diff);
    let third: f64 = linalg::sym_eigen(&gram_ref.matrix)?
        .values
        .iter()
        .map(|&l| entropic_term(l, lambda))
        .sum();
    Ok(first + second + 2.0 * third)
}

/// `λᵢ + λ − √(λᵢ² + λ²)`, evaluated without cancellation.
pub fn entropic_term(eigenvalue: f64, lambda: f64) -> f64 {
    let l = eigenvalue;
    let root = l.hypot(lambda);
    // (l + λ)² − (l² + λ²) = 2lλ
    if l + lambda > 0.0 {
        2.0 * l * lambda / (l + lambda + root)
    } else {
        l + lambda - root
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Whether every `λ_m ≤ c·m^{−α}`.
    pub premise_holds: bool,
}

pub fn spectral_tail_bound_check(eigenvalues: &[f64], alpha: f64, c: f64, lambda: f64) -> Result<TailBoundCheck> {
    if !(alpha > 1.0) || !(c > 0.0) || !(lambda > 0.0) {
        return Err(Error::param("tail bound needs alpha > 1, c > 0, lambda > 0"));
    }
    let premise_holds = eigenvalues
        .iter()
        .enumerate()
        .all(|(i, &l)| l <= c * ((i + 1) as f64).powf(-alpha) * (1.0 + 1e-12));
    let lhs: f64 = eigenvalues.iter().map(|&l| entropic_term(l, lambda)).sum();
    let inv = 1.0 / alpha;
    let rhs = c.powf(inv) / (1.0 - inv) * lambda.powf(1.0 - inv);
    Ok(TailBoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs,
        premise_holds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kpca {
    /// `d × r` orthonormal columns, principal directions of the uncentered
    /// covariance.
    pub basis: Mat,
    /// All `d` eigenvalues, non-increasing.
    pub spectrum: Vec<f64>,
    /// `n × r` coordinates in the basis.
    pub projected: Mat,
}

/// Eigendecomposition of `(1/n) ΦᵀΦ` and projection on the leading `rank`
/// directions.
pub fn kpca(activations: &Mat, rank: Option<usize>) -> Result<Kpca> {
    if activations.nrows() < 2 {
        return Err(Error::param("KPCA needs at least two samples"));
    }
    let d = activations.ncols();
    let r = rank.unwrap_or(d);
    if r > d {
        return Err(Error::param(format!("rank {r} exceeds dimension {d}")));
    }
    let eig = linalg::sym_eigen(&linalg::second_moment(activations))?;
    let basis = eig.vectors.columns(0, r).into_owned();
    let projected = activations * &basis;
    Ok(Kpca {
        basis,
        spectrum: eig.values,
        projected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    /// Decay exponent: `λ_m ≈ e^{intercept} m^{−α}`.
    pub alpha: f64,
    pub intercept: f64,
    /// Inclusive 1-based rank range.
    pub fit_range: (usize, usize),
    /// Root-mean-square residual of the log-log fit.
    pub fit_residual: f64,
}

/// Ranks `[max(6, 0.02 n), 0.5 n]`.
pub fn default_fit_range(n: usize) -> (usize, usize) {
    let low = 6usize.max((0.02 * n as f64).round() as usize);
    let high = (0.5 * n as f64).floor() as usize;
    (low, high)
}

/// Least-squares fit of `log λ_m` against `log m` over an inclusive rank range.
pub fn powerlaw_fit(spectrum: &[f64], fit_range: Option<(usize, usize)>) -> Result<SpectrumReport> {
    let (low, high) = fit_range.unwrap_or_else(|| default_fit_range(spectrum.len()));
    if low < 1 || high > spectrum.len() || high < low || high - low + 1 < 5 {
        return Err(Error::param(format!(
            "fit range [{low}, {high}] needs at least 5 ranks within 1..={}",
            spectrum.len()
        )));
    }
    let mut xs = Vec::with_capacity(high - low + 1);
    let mut ys = Vec::with_capacity(high - low + 1);
    for m in low..=high {
        let l = spectrum[m - 1];
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::param(format!(
                "range error: eigenvalue {l:e} at rank {m} is not positive"
            )));
        }
        xs.push((m as f64).ln());
        ys.push(l.ln());
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(SpectrumReport {
        eigenvalues: spectrum.to_vec(),
        alpha: -slope,
        intercept,
        fit_range: (low, high),
        fit_residual: (rss / k).sqrt(),
    })
}

/// Writes `rank,eigenvalue` rows with 1-based ranks.
pub fn write_spectrum_csv(path: &Path, eigenvalues: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Report(e.to_string()))?;
    w.write_record(["rank", "eigenvalue"]).map_err(|e| Error::Report(e.to_string()))?;
    for (i, v) in eigenvalues.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{v:e}")])
            .map_err(|e| Error::Report(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arccos_special_cases() {
        let id = Mat::identity(3, 3);
        let x = [1.0, 2.0, 2.0];
        assert!((arccos_kernel(&x, &x, &id).unwrap() - 4.5).abs() < 1e-12);
        let neg = [-1.0, -2.0, -2.0];
        assert!(arccos_kernel(&x, &neg, &id).unwrap().abs() < 1e-12);
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        assert!((arccos_kernel(&e1, &e2, &id).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-12);
        assert_eq!(arccos_kernel(&[0.0; 3], &x, &id).unwrap(), 0.0);
    }

    #[test]
    fn commuting_bw() {
        let n = 5;
        let a = GramOperator {
            matrix: Mat::identity(n, n) * 4.0,
            source: GramSource::Analytic,
        };
        let b = GramOperator {
            matrix: Mat::identity(n, n) * 1.0,
            source: GramSource::Analytic,
        };
        assert!((bures_wasserstein(&a, &b).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn non_psd_is_rejected() {
        let bad = GramOperator {
            matrix: Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            source: GramSource::Analytic,
        };
        assert!(bures_wasserstein(&bad, &bad).is_err());
    }

    #[test]
    fn fit_range_errors() {
        let s: Vec<f64> = (1..=20).map(|m| 1.0 / m as f64).collect();
        assert!(powerlaw_fit(&s, Some((1, 4))).is_err());
        let mut z = s.clone();
        z[10] = 0.0;
        assert!(powerlaw_fit(&z, Some((5, 15))).is_err());
    }

    #[test]
    fn default_range() {
        assert_eq!(default_fit_range(1000), (20, 500));
        assert_eq!(default_fit_range(100), (6, 50));
    }
}
