//! Finite orthogonal groups, group-invariant covariances and kernel
//! invariance tests.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel;
use crate::linalg::{self, Mat};
use crate::rng;

/// Entry tolerance for identifying two group elements.
const ELEMENT_TOL: f64 = 1e-8;
const ORTHOGONAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGroup {
    pub generators: Vec<Mat>,
    /// All elements; the first is the identity.
    pub elements: Vec<Mat>,
}

impl FiniteGroup {
    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn dim(&self) -> usize {
        self.elements[0].nrows()
    }

    pub fn trivial(d: usize) -> Self {
        Self {
            generators: Vec::new(),
            elements: vec![Mat::identity(d, d)],
        }
    }
}

fn position(elements: &[Mat], m: &Mat) -> Option<usize> {
    elements.iter().position(|e| (e - m).abs().max() <= ELEMENT_TOL)
}

/// Breadth-first closure of the generators under multiplication.
pub fn close_group(generators: &[Mat], max_order: usize) -> Result<FiniteGroup> {
    let d = generators
        .first()
        .map(|g| g.nrows())
        .ok_or_else(|| Error::Group("no generators".into()))?;
    for g in generators {
        if g.shape() != (d, d) {
            return Err(Error::Group("generators of different dimensions".into()));
        }
        if linalg::orthonormality_defect(g) > ORTHOGONAL_TOL {
            return Err(Error::Group("generator is not orthogonal".into()));
        }
    }
    let mut elements = vec![Mat::identity(d, d)];
    let mut frontier = 0;
    while frontier < elements.len() {
        let current = elements[frontier].clone();
        frontier += 1;
        for g in generators {
            let p = g * &current;
            if position(&elements, &p).is_none() {
                if elements.len() >= max_order {
                    return Err(Error::Group(format!("group order exceeds cap {max_order}")));
                }
                elements.push(p);
            }
        }
    }
    Ok(FiniteGroup {
        generators: generators.to_vec(),
        elements,
    })
}

/// Cyclic shift `e_i ↦ e_{i+1 mod d}`.
pub fn cyclic_shift(d: usize) -> Mat {
    Mat::from_fn(d, d, |i, j| if i == (j + 1) % d { 1.0 } else { 0.0 })
}

/// Sign flip of coordinate `k`.
pub fn sign_flip(d: usize, k: usize) -> Mat {
    let mut m = Mat::identity(d, d);
    m[(k, k)] = -1.0;
    m
}

/// `|G|⁻¹ Σ_g gᵀ C g`.
pub fn symmetrize_covariance(c: &Mat, group: &FiniteGroup) -> Result<Mat> {
    let d = group.dim();
    if c.shape() != (d, d) {
        return Err(Error::shape(format!("covariance {:?} on a group acting on ℝ^{d}", c.shape())));
    }
    let mut sum = Mat::zeros(d, d);
    for g in &group.elements {
        sum += g.transpose() * c * g;
    }
    Ok(linalg::symmetrize(&(sum / group.order() as f64)))
}

/// Layer kernels evaluated on the rows of a point set.
pub trait LayerKernels {
    fn depth(&self) -> usize;
    /// Kernel value matrices `k_j(xᵢ, xₖ)` for `j = 1..=depth`.
    fn kernels(&self, points: &Mat) -> Result<Vec<Mat>>;
}

/// Infinite-width Gaussian rainbow kernels with covariance `C₁` on the input
/// and white covariances above.
#[derive(Debug, Clone)]
pub struct AnalyticRainbowKernel {
    pub c1: Mat,
    pub depth: usize,
}

impl LayerKernels for AnalyticRainbowKernel {
    fn depth(&self) -> usize {
        self.depth
    }

    fn kernels(&self, points: &Mat) -> Result<Vec<Mat>> {
        let mut k = points * &self.c1 * points.transpose();
        let mut out = Vec::with_capacity(self.depth);
        for _ in 0..self.depth {
            k = kernel::arccos_map(&linalg::symmetrize(&k));
            out.push(k.clone());
        }
        Ok(out)
    }
}

/// Finite-width Gaussian rainbow network with `W₁ = G₁ C₁^{1/2}` and white
/// `Wⱼ` above, without standardization; kernels are activation inner
/// products.
#[derive(Debug, Clone)]
pub struct SampledRainbowKernel {
    pub weights: Vec<Mat>,
}

impl SampledRainbowKernel {
    pub fn sample(c1: &Mat, width: usize, depth: usize, seed: u64) -> Result<Self> {
        let root = linalg::psd_sqrt(c1)?;
        let mut weights = Vec::with_capacity(depth);
        let mut fan_in = c1.nrows();
        for j in 0..depth {
            let mut r = rng::stream(seed, "equivariance", "weights", j as u64);
            let g = linalg::gaussian_matrix(width, fan_in, &mut r);
            weights.push(if j == 0 { g * &root } else { g });
            fan_in = width;
        }
        Ok(Self { weights })
    }
}

impl LayerKernels for SampledRainbowKernel {
    fn depth(&self) -> usize {
        self.weights.len()
    }

    fn kernels(&self, points: &Mat) -> Result<Vec<Mat>> {
        let mut a = points.clone();
        let mut out = Vec::with_capacity(self.weights.len());
        for w in &self.weights {
            let scale = 1.0 / (w.nrows() as f64).sqrt();
            a = (&a * w.transpose()).map(|v| v.max(0.0) * scale);
            out.push(&a * a.transpose());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    /// Maximum relative deviation per layer.
    pub max_deviation: Vec<f64>,
    /// `(layer, element index, deviation)` with the deviation maximized over
    /// pairs.
    pub table: Vec<(usize, usize, f64)>,
}

/// `max |k̂ⱼ(gx, gx′) − k̂ⱼ(x, x′)| / scaleⱼ` over `n_pairs` random Gaussian
/// pairs and every group element, where `scaleⱼ` is the mean of `k̂ⱼ(x, x)`.
pub fn test_kernel_invariance<K: LayerKernels>(
    model: &K,
    group: &FiniteGroup,
    n_pairs: usize,
    seed: u64,
) -> Result<InvarianceReport> {
    let d = group.dim();
    let mut r = rng::stream(seed, "equivariance", "pairs", 0);
    let points = linalg::gaussian_matrix(2 * n_pairs, d, &mut r);
    let base = model.kernels(&points)?;
    let scales: Vec<f64> = base
        .iter()
        .map(|k| k.diagonal().mean().abs().max(f64::MIN_POSITIVE))
        .collect();
    let depth = model.depth();
    let mut max_deviation = vec![0.0_f64; depth];
    let mut table = Vec::with_capacity(depth * group.order());
    let mut per_element = vec![vec![0.0_f64; group.order()]; depth];
    for (gi, g) in group.elements.iter().enumerate() {
        let moved = model.kernels(&(&points * g.transpose()))?;
        for j in 0..depth {
            let mut worst = 0.0_f64;
            for i in 0..n_pairs {
                let a = moved[j][(i, n_pairs + i)];
                let b = base[j][(i, n_pairs + i)];
                worst = worst.max((a - b).abs() / scales[j]);
            }
            per_element[j][gi] = worst;
            max_deviation[j] = max_deviation[j].max(worst);
        }
    }
    for (j, row) in per_element.iter().enumerate() {
        for (gi, &v) in row.iter().enumerate() {
            table.push((j + 1, gi, v));
        }
    }
    Ok(InvarianceReport {
        max_deviation,
        table,
    })
}

/// CSV with columns `layer,element,deviation`.
pub fn write_csv(path: &Path, report: &InvarianceReport) -> Result<()> {
    let map = |e: csv::Error| Error::Report(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(map)?;
    w.write_record(["layer", "element", "deviation"]).map_err(map)?;
    for (layer, element, dev) in &report.table {
        w.write_record([layer.to_string(), element.to_string(), format!("{dev:e}")])
            .map_err(map)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_groups() {
        let rot = Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_eq!(close_group(&[rot], 10).unwrap().order(), 4);
        let swap = Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(close_group(&[swap], 10).unwrap().order(), 2);
    }

    #[test]
    fn order_cap_and_orthogonality() {
        assert!(close_group(&[cyclic_shift(5)], 4).is_err());
        let bad = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!(matches!(close_group(&[bad], 10), Err(Error::Group(_))));
    }

    #[test]
    fn identity_is_fixed() {
        let g = close_group(&[cyclic_shift(4)], 10).unwrap();
        let s = symmetrize_covariance(&Mat::identity(4, 4), &g).unwrap();
        assert!((s - Mat::identity(4, 4)).abs().max() < 1e-15);
    }

    #[test]
    fn trivial_group_has_zero_deviation() {
        let k = AnalyticRainbowKernel {
            c1: Mat::identity(3, 3),
            depth: 2,
        };
        let rep = test_kernel_invariance(&k, &FiniteGroup::trivial(3), 10, 0).unwrap();
        assert!(rep.max_deviation.iter().all(|&v| v == 0.0));
    }
}
