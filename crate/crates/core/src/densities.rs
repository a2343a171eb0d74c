//! Analytic Gaussian-mixture densities and composite Simpson quadrature.
//!
//! These are the ground-truth side of every divergence check: the densities
//! have closed-form pdfs, and the quadrature integrates any smooth functional
//! of them over a truncation box in one or two dimensions.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Number of standard deviations each side of a mean covered by the default
/// truncation box.
pub const DEFAULT_BOX_SDS: f64 = 10.0;

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    Gaussian,
    Mixture,
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * (1.0 + cov.amax()) {
            return Err(Error::InvalidInput("covariance is not symmetric".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?
            .l();
        let log_det: f64 = chol.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_norm = -0.5 * (d as f64 * (2.0 * PI).ln() + log_det);
        Ok(Self {
            weight,
            mean: DVector::from_vec(mean),
            cov,
            chol,
            log_norm,
        })
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        // Solve L y = x - mean; the quadratic form is |y|^2.
        let y = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * y.norm_squared()
    }
}

/// A Gaussian mixture with full covariances.
#[derive(Debug, Clone)]
pub struct Density {
    dim: usize,
    components: Vec<Component>,
}

impl Density {
    pub fn gaussian(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::mixture(vec![1.0], vec![mean], vec![cov])
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::gaussian(vec![0.0; dim], DMatrix::identity(dim, dim))
    }

    /// One-dimensional normal with the given mean and standard deviation.
    pub fn normal_1d(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) {
            return Err(Error::InvalidInput(format!("standard deviation {sd} must be positive")));
        }
        Self::gaussian(vec![mean], DMatrix::from_element(1, 1, sd * sd))
    }

    pub fn mixture(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<DMatrix<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("a density needs at least one component".into()));
        }
        if means.len() != weights.len() || covs.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} weights but {} means and {} covariances",
                weights.len(),
                means.len(),
                covs.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("mixture weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!("mixture weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("zero-dimensional density".into()));
        }
        let components = weights
            .into_iter()
            .zip(means)
            .zip(covs)
            .map(|((w, m), c)| {
                if m.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: m.len(),
                    });
                }
                Component::new(w, m, c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, components })
    }

    /// Builds a mixture from the flat lists used in config files: `means`
    /// holds `k*d` values and `covs` holds `k*d*d` row-major values.
    pub fn from_flat(weights: &[f64], means: &[f64], covs: &[f64]) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.is_empty() || means.len() % k != 0 {
            return Err(Error::InvalidInput(format!(
                "{} means cannot be split across {} components",
                means.len(),
                k
            )));
        }
        let d = means.len() / k;
        if covs.len() != k * d * d {
            return Err(Error::InvalidInput(format!(
                "expected {} covariance entries for {k} components in {d} dimensions, got {}",
                k * d * d,
                covs.len()
            )));
        }
        let means = means.chunks(d).map(<[f64]>::to_vec).collect();
        let covs = covs
            .chunks(d * d)
            .map(|c| DMatrix::from_row_slice(d, d, c))
            .collect();
        Self::mixture(weights.to_vec(), means, covs)
    }

    pub fn kind(&self) -> DensityKind {
        if self.components.len() == 1 {
            DensityKind::Gaussian
        } else {
            DensityKind::Mixture
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.iter().copied().collect()).collect()
    }

    pub fn covariances(&self) -> Vec<DMatrix<f64>> {
        self.components.iter().map(|c| c.cov.clone()).collect()
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.density(x))
    }

    /// Unchecked pdf for hot loops where the dimension is already known.
    pub(crate) fn density(&self, x: &[f64]) -> f64 {
        self.components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight * c.log_pdf(x).exp())
            .sum()
    }

    /// Cumulative distribution function of a one-dimensional mixture.
    pub fn cdf_1d(&self, x: f64) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.dim,
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                let normal = Normal::new(c.mean[0], c.cov[(0, 0)].sqrt()).expect("validated variance");
                c.weight * normal.cdf(x)
            })
            .sum())
    }

    /// Draws `n` i.i.d. points: a component by weight, then a Gaussian draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::InvalidInput("sample count must be at least 1".into()));
        }
        let picker = WeightedIndex::new(self.components.iter().map(|c| c.weight))
            .map_err(|e| Error::InvalidInput(format!("mixture weights: {e}")))?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let c = &self.components[picker.sample(rng)];
            let z = DVector::from_iterator(self.dim, (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let x = &c.mean + &c.chol * z;
            out.push(x.iter().copied().collect());
        }
        Ok(out)
    }

    /// Axis-aligned box covering every component to `sds` standard deviations.
    pub fn truncation_box(&self, sds: f64) -> Vec<(f64, f64)> {
        (0..self.dim)
            .map(|axis| {
                self.components.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    let sd = c.cov[(axis, axis)].sqrt();
                    (lo.min(c.mean[axis] - sds * sd), hi.max(c.mean[axis] + sds * sd))
                })
            })
            .collect()
    }

    /// Default Simpson grid over this density's truncation box.
    pub fn default_grid(&self, nodes_per_axis: usize) -> Result<QuadratureGrid> {
        QuadratureGrid::new(self.truncation_box(DEFAULT_BOX_SDS), nodes_per_axis)
    }
}

/// Grid whose box covers the supports of both densities.
pub fn covering_grid(a: &Density, b: &Density, nodes_per_axis: usize) -> Result<QuadratureGrid> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let bounds = a
        .truncation_box(DEFAULT_BOX_SDS)
        .into_iter()
        .zip(b.truncation_box(DEFAULT_BOX_SDS))
        .map(|((l1, h1), (l2, h2))| (l1.min(l2), h1.max(h2)))
        .collect();
    QuadratureGrid::new(bounds, nodes_per_axis)
}

/// Tensor-product composite Simpson grid in one or two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    bounds: Vec<(f64, f64)>,
    nodes: usize,
}

impl QuadratureGrid {
    pub fn new(bounds: Vec<(f64, f64)>, nodes_per_axis: usize) -> Result<Self> {
        if bounds.is_empty() || bounds.len() > 2 {
            return Err(Error::InvalidInput(format!(
                "quadrature supports 1 or 2 dimensions, got {}",
                bounds.len()
            )));
        }
        if nodes_per_axis < 3 || nodes_per_axis % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "Simpson's rule needs an odd node count of at least 3, got {nodes_per_axis}"
            )));
        }
        for &(lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!("bad quadrature interval [{lo}, {hi}]")));
            }
        }
        Ok(Self {
            bounds,
            nodes: nodes_per_axis,
        })
    }

    pub fn uniform_1d(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        Self::new(vec![(lo, hi)], nodes)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Same box with a different node count.
    pub fn with_nodes(&self, nodes_per_axis: usize) -> Result<Self> {
        Self::new(self.bounds.clone(), nodes_per_axis)
    }

    fn axis(&self, axis: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = self.bounds[axis];
        let n = self.nodes;
        let h = (hi - lo) / (n - 1) as f64;
        (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let x = if i == n - 1 { hi } else { lo + i as f64 * h };
                (x, w * h / 3.0)
            })
            .collect()
    }
}

/// Composite Simpson estimate of the integral of `g` over `grid`.
pub fn integrate<F>(g: F, grid: &QuadratureGrid) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let xs = grid.axis(0);
    let mut total = 0.0;
    match grid.dim() {
        1 => {
            for &(x, w) in &xs {
                let node = [x];
                let v = g(&node);
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        node: node.to_vec(),
                        value: v,
                    });
                }
                total += w * v;
            }
        }
        _ => {
            let ys = grid.axis(1);
            for &(x, wx) in &xs {
                let mut row = 0.0;
                for &(y, wy) in &ys {
                    let node = [x, y];
                    let v = g(&node);
                    if !v.is_finite() {
                        return Err(Error::NonFinite {
                            node: node.to_vec(),
                            value: v,
                        });
                    }
                    row += wy * v;
                }
                total += wx * row;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn n01() -> Density {
        Density::standard_normal(1).unwrap()
    }

    #[test]
    fn standard_normal_pdf_values() {
        let v = n01().pdf(&[0.0]).unwrap();
        assert!((v - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        let v2 = Density::standard_normal(2).unwrap().pdf(&[0.0, 0.0]).unwrap();
        assert!((v2 - 1.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn symmetric_mixture_at_origin() {
        let m = Density::from_flat(&[0.5, 0.5], &[-1.0, 1.0], &[1.0, 1.0]).unwrap();
        let single = Density::normal_1d(1.0, 1.0).unwrap();
        let a = m.pdf(&[0.0]).unwrap();
        let b = single.pdf(&[0.0]).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!((a - 0.2419707245191433).abs() < 1e-12);
    }

    #[test]
    fn pdf_rejects_wrong_dimension() {
        assert!(matches!(
            n01().pdf(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn construction_validates() {
        assert!(Density::from_flat(&[0.6, 0.6], &[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(Density::from_flat(&[1.0], &[0.0], &[-1.0]).is_err());
        // asymmetric covariance
        assert!(Density::from_flat(&[1.0], &[0.0, 0.0], &[1.0, 0.5, 0.0, 1.0]).is_err());
        assert!(Density::from_flat(&[1.0], &[0.0, 0.0], &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn sample_mean_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs = n01().sample(&mut rng, 100_000).unwrap();
        let mean: f64 = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn degenerate_variance_and_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spike = Density::from_flat(&[1.0], &[5.0], &[1e-12]).unwrap();
        for x in spike.sample(&mut rng, 3).unwrap() {
            assert!((x[0] - 5.0).abs() < 1e-5);
        }
        let lopsided = Density::from_flat(&[1.0, 0.0], &[-50.0, 50.0], &[1.0, 1.0]).unwrap();
        for x in lopsided.sample(&mut rng, 200).unwrap() {
            assert!(x[0] < 0.0);
        }
        assert!(n01().sample(&mut rng, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_under_seed() {
        let m = Density::from_flat(&[0.3, 0.7], &[-2.0, 2.0], &[0.5, 0.25]).unwrap();
        let a = m.sample(&mut ChaCha8Rng::seed_from_u64(42), 50).unwrap();
        let b = m.sample(&mut ChaCha8Rng::seed_from_u64(42), 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normalization_and_odd_moment() {
        let d = n01();
        let grid = QuadratureGrid::uniform_1d(-10.0, 10.0, 2001).unwrap();
        let z = integrate(|x| d.density(x), &grid).unwrap();
        assert!((z - 1.0).abs() < 1e-9);
        let m1 = integrate(|x| x[0] * d.density(x), &grid).unwrap();
        assert!(m1.abs() < 1e-12);
    }

    #[test]
    fn two_dimensional_normalization() {
        let d = Density::from_flat(&[0.4, 0.6], &[0.0, 0.0, 1.0, -1.0], &[1.0, 0.3, 0.3, 0.5, 0.8, 0.0, 0.0, 1.2])
            .unwrap();
        let grid = d.default_grid(401).unwrap();
        let z = integrate(|x| d.density(x), &grid).unwrap();
        assert!((z - 1.0).abs() < 1e-8, "{z}");
    }

    #[test]
    fn simpson_convergence_order() {
        let d = n01();
        let errs: Vec<f64> = [11, 21, 41, 81]
            .iter()
            .map(|&n| {
                let grid = QuadratureGrid::uniform_1d(-10.0, 10.0, n).unwrap();
                (integrate(|x| d.density(x), &grid).unwrap() - 1.0).abs()
            })
            .collect();
        for pair in errs.windows(2) {
            if pair[0] > 1e-14 {
                assert!(pair[0] / pair[1].max(1e-300) >= 8.0, "{errs:?}");
            }
        }
    }

    #[test]
    fn non_finite_integrand_reports_node() {
        let grid = QuadratureGrid::uniform_1d(-1.0, 1.0, 5).unwrap();
        match integrate(|x| 1.0 / x[0], &grid) {
            Err(Error::NonFinite { node, .. }) => assert_eq!(node, vec![0.0]),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn grid_validation() {
        assert!(QuadratureGrid::uniform_1d(0.0, 1.0, 4).is_err());
        assert!(QuadratureGrid::uniform_1d(0.0, f64::INFINITY, 5).is_err());
        assert!(QuadratureGrid::new(vec![(0.0, 1.0); 3], 5).is_err());
    }

    #[test]
    fn cdf_matches_quadrature() {
        let m = Density::from_flat(&[0.5, 0.5], &[-2.0, 2.0], &[0.25, 0.25]).unwrap();
        let grid = QuadratureGrid::uniform_1d(-12.0, 0.7, 4001).unwrap();
        let q = integrate(|x| m.density(x), &grid).unwrap();
        assert!((m.cdf_1d(0.7).unwrap() - q).abs() < 1e-10);
    }
}
