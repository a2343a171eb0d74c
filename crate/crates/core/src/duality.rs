//! The discriminator problem for a frozen generator, in primal and dual form.
//!
//! Primal, over discriminator weights `w` in feature space:
//!
//! ```text
//! g(w) = Ω(w) + mean_i l(w·Φ(x_i)) + Σ_j π_j l(-w·Φ(G(z_j)))
//! ```
//!
//! Dual, over one variable per real point (`u`) and per noise atom (`v`):
//!
//! ```text
//! θ      = mean_i u_i Φ(x_i) - Σ_j π_j v_j Φ(G(z_j))
//! h(u,v) = -Ω*(-θ) - mean_i l*(u_i) - Σ_j π_j l*(v_j)
//! ```
//!
//! `g(w) >= h(u, v)` for every `w` and every feasible `(u, v)`, and the
//! inner minimiser `argmin_w Ω(w) + wᵀθ` turns a dual point into a primal one.

use crate::error::{Error, Result};
use crate::generator::{GeneratorParams, Gradients, Tape};
use crate::losses::{Interval, Loss};
use crate::optim::{axpy, dot, norm};
use crate::rff::FeatureMap;
use std::sync::Arc;

/// Relative slack allowed when checking norm-ball feasibility.
const BALL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    /// Indicator of the Euclidean ball of the given radius.
    NormBall { radius: f64 },
    /// `(λ/2)‖w‖²`.
    L2 { lambda: f64 },
}

impl Regularizer {
    pub fn norm_ball(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidInput(format!("ball radius {radius} must be positive")));
        }
        Ok(Regularizer::NormBall { radius })
    }

    pub fn l2(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("l2 strength {lambda} must be positive")));
        }
        Ok(Regularizer::L2 { lambda })
    }

    /// `Ω(w)`; an infeasible point under the ball is an error rather than `+inf`.
    pub fn value(&self, w: &[f64]) -> Result<f64> {
        match *self {
            Regularizer::L2 { lambda } => Ok(0.5 * lambda * dot(w, w)),
            Regularizer::NormBall { radius } => {
                let n = norm(w);
                if n > radius * (1.0 + BALL_SLACK) {
                    Err(Error::Infeasible(format!("‖w‖ = {n} exceeds the ball radius {radius}")))
                } else {
                    Ok(0.0)
                }
            }
        }
    }

    /// `Ω*(θ)`: `‖θ‖²/(2λ)` or `C‖θ‖`.
    pub fn conjugate(&self, theta: &[f64]) -> f64 {
        match *self {
            Regularizer::L2 { lambda } => dot(theta, theta) / (2.0 * lambda),
            Regularizer::NormBall { radius } => radius * norm(theta),
        }
    }

    /// `∇Ω*(θ)`, with the subgradient 0 chosen at `θ = 0` for the ball.
    pub fn conjugate_gradient(&self, theta: &[f64]) -> Vec<f64> {
        match *self {
            Regularizer::L2 { lambda } => theta.iter().map(|t| t / lambda).collect(),
            Regularizer::NormBall { radius } => {
                let n = norm(theta);
                if n > 0.0 {
                    theta.iter().map(|t| radius * t / n).collect()
                } else {
                    vec![0.0; theta.len()]
                }
            }
        }
    }

    /// Euclidean projection onto the feasible set (identity for l2).
    pub fn project(&self, w: &mut [f64]) {
        if let Regularizer::NormBall { radius } = *self {
            let n = norm(w);
            if n > radius {
                w.iter_mut().for_each(|x| *x *= radius / n);
            }
        }
    }
}

/// Feature vectors of the real points and of the generated points, with the
/// noise weights, loss, and regulariser.
#[derive(Debug, Clone)]
pub struct DualProblem {
    real: Arc<Vec<Vec<f64>>>,
    fake: Vec<Vec<f64>>,
    fake_weights: Vec<f64>,
    loss: Loss,
    reg: Regularizer,
    dual_box: Interval,
}

impl DualProblem {
    /// `real` may be shared between problems built for successive steps.
    pub fn new(
        real: impl Into<Arc<Vec<Vec<f64>>>>,
        fake: Vec<Vec<f64>>,
        fake_weights: Vec<f64>,
        loss: Loss,
        reg: Regularizer,
    ) -> Result<Self> {
        let real = real.into();
        let dual_box = loss.dual_box()?;
        if real.is_empty() || fake.is_empty() {
            return Err(Error::InvalidInput("need at least one real and one generated point".into()));
        }
        if fake_weights.len() != fake.len() {
            return Err(Error::DimensionMismatch {
                expected: fake.len(),
                got: fake_weights.len(),
            });
        }
        if fake_weights.iter().any(|p| !(*p > 0.0)) || (fake_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("noise weights must be positive and sum to 1".into()));
        }
        let dim = real[0].len();
        if let Some(bad) = real.iter().chain(&fake).find(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self {
            real,
            fake,
            fake_weights,
            loss,
            reg,
            dual_box,
        })
    }

    /// Problem for the generator `gen` evaluated on the noise points `noise`.
    pub fn from_generator(
        map: &FeatureMap,
        data: &[Vec<f64>],
        gen: &GeneratorParams,
        noise: &[Vec<f64>],
        noise_weights: Vec<f64>,
        loss: Loss,
        reg: Regularizer,
    ) -> Result<Self> {
        let real = data.iter().map(|x| map.features(x)).collect::<Result<Vec<_>>>()?;
        let fake = noise
            .iter()
            .map(|z| map.features(&gen.output(z)?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(real, fake, noise_weights, loss, reg)
    }

    pub fn real_features(&self) -> &[Vec<f64>] {
        &self.real
    }

    pub fn fake_features(&self) -> &[Vec<f64>] {
        &self.fake
    }

    pub fn fake_weights(&self) -> &[f64] {
        &self.fake_weights
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn regularizer(&self) -> Regularizer {
        self.reg
    }

    pub fn feature_dim(&self) -> usize {
        self.real[0].len()
    }

    pub fn n_real(&self) -> usize {
        self.real.len()
    }

    pub fn n_fake(&self) -> usize {
        self.fake.len()
    }

    /// Box every dual coordinate is kept in.
    pub fn dual_box(&self) -> Interval {
        self.dual_box
    }

    fn real_weight(&self) -> f64 {
        1.0 / self.real.len() as f64
    }

    fn check_w(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                got: w.len(),
            });
        }
        Ok(())
    }

    /// Classification part of `g`, without the regulariser.
    pub fn empirical_loss(&self, w: &[f64]) -> Result<f64> {
        self.check_w(w)?;
        let real: f64 = self.real.iter().map(|f| self.loss.value(dot(w, f))).sum::<f64>() * self.real_weight();
        let fake: f64 = self
            .fake
            .iter()
            .zip(&self.fake_weights)
            .map(|(f, p)| p * self.loss.value(-dot(w, f)))
            .sum();
        Ok(real + fake)
    }

    /// `g(w)`.
    pub fn primal_objective(&self, w: &[f64]) -> Result<f64> {
        Ok(self.reg.value(w)? + self.empirical_loss(w)?)
    }

    /// Gradient of the classification part of `g`.
    pub fn empirical_loss_gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; w.len()];
        let rw = self.real_weight();
        for f in self.real.iter() {
            axpy(rw * self.loss.derivative(dot(w, f)), f, &mut grad);
        }
        for (f, p) in self.fake.iter().zip(&self.fake_weights) {
            axpy(-p * self.loss.derivative(-dot(w, f)), f, &mut grad);
        }
        grad
    }

    /// Gradient of `g` (the ball contributes nothing inside the ball).
    pub fn primal_gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_w(w)?;
        let mut grad = self.empirical_loss_gradient(w);
        if let Regularizer::L2 { lambda } = self.reg {
            axpy(lambda, w, &mut grad);
        }
        Ok(grad)
    }

    fn check_dual(&self, u: &[f64], v: &[f64]) -> Result<()> {
        if u.len() != self.n_real() {
            return Err(Error::DimensionMismatch {
                expected: self.n_real(),
                got: u.len(),
            });
        }
        if v.len() != self.n_fake() {
            return Err(Error::DimensionMismatch {
                expected: self.n_fake(),
                got: v.len(),
            });
        }
        let dom = self.loss.conjugate_domain().expect("convex loss");
        for (which, values) in [("u", u), ("v", v)] {
            if let Some((index, &value)) = values.iter().enumerate().find(|(_, x)| !dom.contains(**x)) {
                return Err(Error::OutOfDomain { which, index, value });
            }
        }
        Ok(())
    }

    /// `θ = mean_i u_i Φ(x_i) - Σ_j π_j v_j Φ(G(z_j))`.
    pub fn theta(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; self.feature_dim()];
        let rw = self.real_weight();
        for (f, ui) in self.real.iter().zip(u) {
            axpy(rw * ui, f, &mut theta);
        }
        for ((f, p), vj) in self.fake.iter().zip(&self.fake_weights).zip(v) {
            axpy(-p * vj, f, &mut theta);
        }
        theta
    }

    fn conjugate_penalty(&self, u: &[f64], v: &[f64]) -> f64 {
        let l = self.loss;
        let real: f64 = u.iter().map(|&t| l.conjugate(t).expect("convex")).sum::<f64>() * self.real_weight();
        let fake: f64 = v
            .iter()
            .zip(&self.fake_weights)
            .map(|(&t, p)| p * l.conjugate(t).expect("convex"))
            .sum();
        real + fake
    }

    /// `h(u, v)`.
    pub fn dual_objective(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_dual(u, v)?;
        Ok(self.dual_value_unchecked(u, v))
    }

    pub(crate) fn dual_value_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        let neg_theta: Vec<f64> = self.theta(u, v).iter().map(|t| -t).collect();
        -self.reg.conjugate(&neg_theta) - self.conjugate_penalty(u, v)
    }

    /// The discriminator implied by a dual point, `∇Ω*(-θ)`. Defined for both
    /// regularisers (the ball uses the zero subgradient at `θ = 0`).
    pub fn implied_discriminator(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let neg_theta: Vec<f64> = self.theta(u, v).iter().map(|t| -t).collect();
        self.reg.conjugate_gradient(&neg_theta)
    }

    /// Primal point from a dual point: `-θ/λ` for l2. Under the ball the
    /// maximiser is unique only when `θ ≠ 0`, where it is `-Cθ/‖θ‖`.
    pub fn recover_primal(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_dual(u, v)?;
        let theta = self.theta(u, v);
        match self.reg {
            Regularizer::L2 { lambda } => Ok(theta.iter().map(|t| -t / lambda).collect()),
            Regularizer::NormBall { radius } => {
                let n = norm(&theta);
                if n > 0.0 {
                    Ok(theta.iter().map(|t| -radius * t / n).collect())
                } else {
                    Err(Error::Unsupported(
                        "the ball maximiser is not unique when θ = 0".into(),
                    ))
                }
            }
        }
    }

    /// Dual gradient in per-sample units: the true partial derivative of `h`
    /// with respect to `u_i` is `grad_u[i] / N`, and with respect to `v_j` it
    /// is `π_j grad_v[j]`.
    pub fn dual_gradient(&self, u: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.dual_gradient_with(&self.implied_discriminator(u, v), u, v)
    }

    /// [`Self::dual_gradient`] with the implied discriminator `w` supplied.
    pub(crate) fn dual_gradient_with(&self, w: &[f64], u: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let l = self.loss;
        let gu = self
            .real
            .iter()
            .zip(u)
            .map(|(f, &t)| Ok(dot(w, f) - l.conjugate_derivative(t)?))
            .collect::<Result<Vec<_>>>()?;
        let gv = self
            .fake
            .iter()
            .zip(v)
            .map(|(f, &t)| Ok(-dot(w, f) - l.conjugate_derivative(t)?))
            .collect::<Result<Vec<_>>>()?;
        Ok((gu, gv))
    }

    /// Per-coordinate weights that turn [`Self::dual_gradient`] into the true
    /// gradient.
    pub fn dual_weights(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![self.real_weight(); self.n_real()], self.fake_weights.clone())
    }

    /// Best dual point for a fixed `w`: `u_i = l'(w·Φ_i)`, `v_j = l'(-w·Ψ_j)`,
    /// kept inside the dual box.
    pub fn dual_from_primal(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let b = self.dual_box;
        let u = self.real.iter().map(|f| b.clamp(self.loss.derivative(dot(w, f)))).collect();
        let v = self.fake.iter().map(|f| b.clamp(self.loss.derivative(-dot(w, f)))).collect();
        (u, v)
    }
}

/// Generated points with their forward tapes.
pub struct GeneratedBatch {
    pub outputs: Vec<Vec<f64>>,
    pub tapes: Vec<Tape>,
    pub features: Vec<Vec<f64>>,
}

impl GeneratedBatch {
    pub fn new(map: &FeatureMap, gen: &GeneratorParams, noise: &[Vec<f64>]) -> Result<Self> {
        let mut outputs = Vec::with_capacity(noise.len());
        let mut tapes = Vec::with_capacity(noise.len());
        let mut features = Vec::with_capacity(noise.len());
        for z in noise {
            let (x, tape) = gen.forward(z)?;
            features.push(map.features(&x)?);
            outputs.push(x);
            tapes.push(tape);
        }
        Ok(Self {
            outputs,
            tapes,
            features,
        })
    }
}

/// Gradient with respect to the generator of `Σ_j c_j (w · Φ(G(z_j)))`.
pub fn generator_gradient(
    map: &FeatureMap,
    gen: &GeneratorParams,
    batch: &GeneratedBatch,
    coefs: &[f64],
    w: &[f64],
) -> Result<Gradients> {
    let mut total = Gradients::zeros_like(gen);
    let mut a = vec![0.0; w.len()];
    for ((phi, tape), &c) in batch.features.iter().zip(&batch.tapes).zip(coefs) {
        if c == 0.0 {
            continue;
        }
        a.iter_mut().zip(w).for_each(|(ai, wi)| *ai = c * wi);
        let og = map.pullback_from_features(phi, &a);
        gen.backward_add(tape, &og, &mut total)?;
    }
    Ok(total)
}

/// `∇_ψ h(u, v)`: only the generated features depend on the generator, and
/// `∂h/∂Φ(G(z_j)) = -π_j v_j ∇Ω*(-θ)`.
pub fn dual_generator_gradient(
    problem: &DualProblem,
    map: &FeatureMap,
    gen: &GeneratorParams,
    batch: &GeneratedBatch,
    u: &[f64],
    v: &[f64],
) -> Result<Gradients> {
    let w = problem.implied_discriminator(u, v);
    let coefs: Vec<f64> = problem.fake_weights().iter().zip(v).map(|(p, vj)| -p * vj).collect();
    generator_gradient(map, gen, batch, &coefs, &w)
}

/// `∇_ψ g(w)` for a fixed discriminator `w`.
pub fn primal_generator_gradient(
    problem: &DualProblem,
    map: &FeatureMap,
    gen: &GeneratorParams,
    batch: &GeneratedBatch,
    w: &[f64],
) -> Result<Gradients> {
    let l = problem.loss();
    let coefs: Vec<f64> = problem
        .fake_features()
        .iter()
        .zip(problem.fake_weights())
        .map(|(f, p)| -p * l.derivative(-dot(w, f)))
        .collect();
    generator_gradient(map, gen, batch, &coefs, w)
}
