//! Random Fourier features for the Gaussian kernel `k(u) = exp(-½ uᵀ Σ u)`.
//!
//! A map draws `e_i ~ N(0, I)` and uses frequencies `ω_i = Sᵀ e_i`, where
//! `S` is a square root with `Σ = SᵀS`, so that `ω_iᵀ x = e_iᵀ S x`. The
//! feature vector is all `D` cosines followed by all `D` sines, each scaled by
//! `1/√D`, which makes `Φ(x)·Φ(x')` a Monte-Carlo estimate of `k(x - x')`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::optim::{dot, norm};

/// Relative singular-value threshold used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// A fixed draw of random Fourier features.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    sigma_half: DMatrix<f64>,
    base_draws: Vec<Vec<f64>>,
    frequencies: Vec<Vec<f64>>,
    scale: f64,
}

impl FeatureMap {
    /// Draws `feature_count` frequencies for inputs of dimension `input_dim`.
    pub fn build<R: Rng + ?Sized>(
        input_dim: usize,
        feature_count: usize,
        sigma_half: DMatrix<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || feature_count == 0 {
            return Err(Error::InvalidInput(
                "feature maps need a positive input dimension and feature count".into(),
            ));
        }
        if sigma_half.nrows() != input_dim || sigma_half.ncols() != input_dim {
            return Err(Error::InvalidInput(format!(
                "Σ^½ must be {input_dim}x{input_dim}, got {}x{}",
                sigma_half.nrows(),
                sigma_half.ncols()
            )));
        }
        let draws = (0..feature_count)
            .map(|_| (0..input_dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Self::from_base_draws(sigma_half, draws)
    }

    /// Isotropic map with `Σ^½ = sigma · I`.
    pub fn isotropic<R: Rng + ?Sized>(input_dim: usize, feature_count: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("kernel scale {sigma} must be positive")));
        }
        Self::build(
            input_dim,
            feature_count,
            DMatrix::identity(input_dim, input_dim) * sigma,
            rng,
        )
    }

    /// Map with explicitly chosen standard-normal draws `e_i`.
    pub fn from_base_draws(sigma_half: DMatrix<f64>, base_draws: Vec<Vec<f64>>) -> Result<Self> {
        let d = sigma_half.nrows();
        if sigma_half.ncols() != d || d == 0 {
            return Err(Error::InvalidInput(format!(
                "Σ^½ must be square, got {}x{}",
                sigma_half.nrows(),
                sigma_half.ncols()
            )));
        }
        if base_draws.is_empty() {
            return Err(Error::InvalidInput("at least one frequency is required".into()));
        }
        let frequencies = base_draws
            .iter()
            .map(|e| {
                if e.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: e.len(),
                    });
                }
                let w = sigma_half.transpose() * DVector::from_column_slice(e);
                Ok(w.iter().copied().collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let scale = 1.0 / (base_draws.len() as f64).sqrt();
        Ok(Self {
            sigma_half,
            base_draws,
            frequencies,
            scale,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sigma_half.nrows()
    }

    pub fn feature_count(&self) -> usize {
        self.frequencies.len()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.feature_count()
    }

    pub fn sigma_half(&self) -> &DMatrix<f64> {
        &self.sigma_half
    }

    pub fn base_draws(&self) -> &[Vec<f64>] {
        &self.base_draws
    }

    pub fn frequencies(&self) -> &[Vec<f64>] {
        &self.frequencies
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.output_dim()];
        self.features_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn features_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.feature_count();
        for (i, w) in self.frequencies.iter().enumerate() {
            let (s, c) = dot(w, x).sin_cos();
            out[i] = self.scale * c;
            out[d + i] = self.scale * s;
        }
    }

    /// Gradient with respect to `x` of `a · Φ(x)`.
    pub fn pullback(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        if a.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: a.len(),
            });
        }
        Ok(self.pullback_unchecked(x, a))
    }

    pub(crate) fn pullback_unchecked(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        let d = self.feature_count();
        let mut grad = vec![0.0; x.len()];
        for (i, w) in self.frequencies.iter().enumerate() {
            let (s, c) = dot(w, x).sin_cos();
            let coef = self.scale * (a[d + i] * c - a[i] * s);
            for (g, wk) in grad.iter_mut().zip(w) {
                *g += coef * wk;
            }
        }
        grad
    }

    /// [`Self::pullback`] from precomputed features `Φ(x)`, avoiding the
    /// trigonometric evaluations.
    pub(crate) fn pullback_from_features(&self, phi: &[f64], a: &[f64]) -> Vec<f64> {
        let d = self.feature_count();
        let mut grad = vec![0.0; self.input_dim()];
        for (i, w) in self.frequencies.iter().enumerate() {
            let coef = a[d + i] * phi[i] - a[i] * phi[d + i];
            for (g, wk) in grad.iter_mut().zip(w) {
                *g += coef * wk;
            }
        }
        grad
    }

    /// `Φ(x) · Φ(x')`.
    pub fn approx_kernel(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(dot(&self.features(x)?, &self.features(y)?))
    }
}

/// Exact Gaussian kernel with `Σ = SᵀS`.
pub fn exact_kernel(sigma_half: &DMatrix<f64>, x: &[f64], y: &[f64]) -> Result<f64> {
    let d = sigma_half.nrows();
    if x.len() != d || y.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if x.len() != d { x.len() } else { y.len() },
        });
    }
    let u = DVector::from_iterator(d, x.iter().zip(y).map(|(a, b)| a - b));
    Ok((-0.5 * (sigma_half * u).norm_squared()).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxError {
    pub max_abs: f64,
    pub mean_abs: f64,
}

/// `count` pairs of points drawn independently and uniformly from the
/// centred ball of the given radius.
pub fn ball_pairs<R: Rng + ?Sized>(dim: usize, count: usize, radius: f64, rng: &mut R) -> Vec<(Vec<f64>, Vec<f64>)> {
    let point = |rng: &mut R| -> Vec<f64> {
        let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&dir).max(f64::MIN_POSITIVE);
        let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
        dir.into_iter().map(|x| r * x / n).collect()
    };
    (0..count).map(|_| (point(rng), point(rng))).collect()
}

/// Statistics of `|Φ(x)·Φ(x') - k(x - x')|` over the given pairs.
pub fn approx_error(map: &FeatureMap, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<ApproxError> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no pairs to compare".into()));
    }
    let mut max_abs: f64 = 0.0;
    let mut total = 0.0;
    for (x, y) in pairs {
        let err = (map.approx_kernel(x, y)? - exact_kernel(map.sigma_half(), x, y)?).abs();
        max_abs = max_abs.max(err);
        total += err;
    }
    Ok(ApproxError {
        max_abs,
        mean_abs: total / pairs.len() as f64,
    })
}

/// Sufficient condition for the feature map to be one-to-one on a set of the
/// given diameter: full-rank draws and `‖Σ^½‖_F · diam · max‖e_i‖ < 2π`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectivityCertificate {
    pub rank_ok: bool,
    pub norm_product: f64,
    pub threshold: f64,
    pub certified: bool,
}

/// Numerical rank of the matrix whose rows are `rows` (each of length `cols`).
fn row_rank(rows: &[Vec<f64>], cols: usize) -> usize {
    singular_values(rows, cols).1
}

/// Singular values (descending) of the row matrix padded to at least `cols`
/// rows, the numerical rank, and the right singular vectors as rows.
fn singular_values(rows: &[Vec<f64>], cols: usize) -> (Vec<f64>, usize, DMatrix<f64>) {
    let m = rows.len().max(cols);
    let mut a = DMatrix::zeros(m, cols);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let v_t = svd.v_t.expect("requested right singular vectors");
    let v_sorted = DMatrix::from_fn(cols, cols, |r, c| v_t[(order[r], c)]);
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&s| smax > 0.0 && s > RANK_TOL * smax).count();
    (sv, rank, v_sorted)
}

pub fn certify_injectivity(map: &FeatureMap, diameter: f64) -> Result<InjectivityCertificate> {
    if !(diameter > 0.0 && diameter.is_finite()) {
        return Err(Error::InvalidInput(format!("diameter {diameter} must be positive")));
    }
    let d = map.input_dim();
    let s_rows: Vec<Vec<f64>> = map
        .sigma_half()
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    let rank_ok = row_rank(map.base_draws(), d) == d && row_rank(&s_rows, d) == d;
    let max_draw = map.base_draws().iter().map(|e| norm(e)).fold(0.0, f64::max);
    let norm_product = map.sigma_half().norm() * diameter * max_draw;
    let threshold = 2.0 * PI;
    Ok(InjectivityCertificate {
        rank_ok,
        norm_product,
        threshold,
        certified: rank_ok && norm_product < threshold,
    })
}

/// Largest tolerated feature distance for a reported collision.
pub const COLLISION_TOL: f64 = 1e-9;

fn feature_distance(map: &FeatureMap, x: &[f64], y: &[f64]) -> f64 {
    let fx = map.features(x).expect("dimension checked");
    let fy = map.features(y).expect("dimension checked");
    fx.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Searches for distinct `x, x'` with identical features, unrestricted in
/// separation. See [`construct_collision_within`].
pub fn construct_collision(map: &FeatureMap) -> Option<(Vec<f64>, Vec<f64>)> {
    construct_collision_within(map, f64::INFINITY)
}

/// Searches for distinct `x, x'` with `‖x - x'‖ <= max_separation` and
/// `‖Φ(x) - Φ(x')‖ <= COLLISION_TOL`.
///
/// Two kinds of direction are tried: a null direction of the frequency matrix
/// (always present when `D < d`), then lattice directions `δ` solving
/// `ω_iᵀ δ = 2π k_i` on a square subsystem, kept only when every remaining
/// frequency also lands on a multiple of `2π`.
pub fn construct_collision_within(map: &FeatureMap, max_separation: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let d = map.input_dim();
    let freqs = map.frequencies();
    let origin = vec![0.0; d];
    let (_, rank, v) = singular_values(freqs, d);

    if rank < d {
        let mut delta: Vec<f64> = v.row(d - 1).iter().copied().collect();
        let len = if max_separation.is_finite() {
            (0.5 * max_separation).min(1.0)
        } else {
            1.0
        };
        delta.iter_mut().for_each(|x| *x *= len);
        if feature_distance(map, &origin, &delta) <= COLLISION_TOL {
            return Some((origin, delta));
        }
    }

    let mut best: Option<Vec<f64>> = None;
    for subset in row_subsets(freqs.len(), d) {
        let sub = DMatrix::from_fn(d, d, |r, c| freqs[subset[r]][c]);
        let Some(inv) = sub.clone().try_inverse() else {
            continue;
        };
        for k in lattice_vectors(d) {
            let rhs = DVector::from_iterator(d, k.iter().map(|&ki| 2.0 * PI * ki as f64));
            let delta: Vec<f64> = (&inv * rhs).iter().copied().collect();
            let len = norm(&delta);
            if len > max_separation || best.as_ref().is_some_and(|b| norm(b) <= len) {
                continue;
            }
            let on_lattice = freqs.iter().all(|w| {
                let turns = dot(w, &delta) / (2.0 * PI);
                (turns - turns.round()).abs() <= 1e-9 * turns.abs().max(1.0)
            });
            if on_lattice && feature_distance(map, &origin, &delta) <= COLLISION_TOL {
                best = Some(delta);
            }
        }
    }
    best.map(|delta| (origin, delta))
}

/// Index subsets of size `d` to try as square subsystems: all of them when
/// there are few, otherwise a sliding window.
fn row_subsets(n: usize, d: usize) -> Vec<Vec<usize>> {
    if n < d {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..d).collect();
    loop {
        out.push(idx.clone());
        if out.len() >= 256 {
            break;
        }
        let mut i = d;
        while i > 0 && idx[i - 1] == n - d + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..d {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out
}

/// Nonzero integer vectors in `{-2..=2}^d` for small `d`, unit vectors otherwise.
fn lattice_vectors(d: usize) -> Vec<Vec<i64>> {
    if d > 4 {
        return (0..d)
            .flat_map(|j| {
                [1, -1].map(|s| {
                    let mut k = vec![0; d];
                    k[j] = s;
                    k
                })
            })
            .collect();
    }
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<i64>| {
                (-2..=2).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out.retain(|k| k.iter().any(|&v| v != 0));
    out
}
