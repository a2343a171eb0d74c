//! High-precision solvers for the frozen-generator problem and the duality
//! gap audit built on them.

use nalgebra::{DMatrix, DVector};

use crate::duality::{DualProblem, Regularizer};
use crate::error::{Error, Result};
use crate::losses::Loss;
use crate::optim::{axpy, dot, norm};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_BUDGET: usize = 20_000;

const NEWTON_ITERATIONS: usize = 200;
const ARMIJO: f64 = 1e-4;
const HINGE_SMOOTHING: [f64; 10] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9];
const RIDGE_FLOOR: f64 = 1e-12;
const BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone)]
pub struct PrimalSolution {
    pub w: Vec<f64>,
    /// `g(w)` with the unsmoothed loss.
    pub value: f64,
    /// Stationarity residual of the last subproblem solved.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub value: f64,
    /// Infinity norm of the projected scaled gradient.
    pub residual: f64,
    pub sweeps: usize,
    /// `h` after every sweep, starting with the initial point.
    pub history: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct GapAudit {
    pub primal_opt: f64,
    pub dual_opt: f64,
    pub gap: f64,
    pub primal: PrimalSolution,
    pub dual: DualSolution,
}

/// Loss value and first two derivatives, with the hinge replaced by its
/// Huber smoothing of width `mu` when `mu > 0`.
fn loss_terms(loss: Loss, mu: f64, a: f64) -> (f64, f64, f64) {
    if loss == Loss::Hinge && mu > 0.0 {
        let r = 1.0 - a;
        return if r >= mu {
            (r - 0.5 * mu, -1.0, 0.0)
        } else if r <= 0.0 {
            (0.0, 0.0, 0.0)
        } else {
            (0.5 * r * r / mu, -r / mu, 1.0 / mu)
        };
    }
    (loss.value(a), loss.derivative(a), loss.second_derivative(a))
}

/// Signed, weighted view of every sample: real points enter `g` through
/// `l(w·Φ)` and generated points through `l(-w·Φ)`.
struct Terms<'a> {
    feats: Vec<&'a [f64]>,
    weights: Vec<f64>,
    signs: Vec<f64>,
}

impl<'a> Terms<'a> {
    fn new(p: &'a DualProblem) -> Self {
        let n = p.n_real() as f64;
        let mut feats = Vec::new();
        let mut weights = Vec::new();
        let mut signs = Vec::new();
        for f in p.real_features() {
            feats.push(f.as_slice());
            weights.push(1.0 / n);
            signs.push(1.0);
        }
        for (f, &pi) in p.fake_features().iter().zip(p.fake_weights()) {
            feats.push(f.as_slice());
            weights.push(pi);
            signs.push(-1.0);
        }
        Self { feats, weights, signs }
    }

    /// `Σ c_k l_mu(s_k w·φ_k) + (nu/2)‖w‖²`.
    fn value(&self, loss: Loss, mu: f64, nu: f64, w: &[f64]) -> f64 {
        let data: f64 = (0..self.feats.len())
            .map(|k| self.weights[k] * loss_terms(loss, mu, self.signs[k] * dot(w, self.feats[k])).0)
            .sum();
        data + 0.5 * nu * dot(w, w)
    }

    fn gradient(&self, loss: Loss, mu: f64, nu: f64, w: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = w.iter().map(|x| nu * x).collect();
        for k in 0..self.feats.len() {
            let s = self.signs[k];
            let d1 = loss_terms(loss, mu, s * dot(w, self.feats[k])).1;
            axpy(self.weights[k] * s * d1, self.feats[k], &mut g);
        }
        g
    }

    fn hessian(&self, loss: Loss, mu: f64, nu: f64, w: &[f64]) -> DMatrix<f64> {
        let dim = w.len();
        let mut h = DMatrix::<f64>::identity(dim, dim) * nu;
        for k in 0..self.feats.len() {
            let d2 = loss_terms(loss, mu, self.signs[k] * dot(w, self.feats[k])).2;
            let c = self.weights[k] * d2;
            if c == 0.0 {
                continue;
            }
            let f = DVector::from_column_slice(self.feats[k]);
            h.ger(c, &f, &f, 1.0);
        }
        h
    }
}

struct NewtonResult {
    w: Vec<f64>,
    gradient_norm: f64,
    iterations: usize,
}

/// Solve `H x = g`, adding the smallest diagonal shift that lets the
/// Cholesky factorisation through when `H` is numerically singular.
fn solve_shifted(hess: DMatrix<f64>, grad: &[f64]) -> Result<DVector<f64>> {
    let rhs = DVector::from_column_slice(grad);
    if let Some(chol) = hess.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    let scale = hess.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut shift = 1e-14 * scale;
    while shift <= scale {
        let mut shifted = hess.clone();
        shifted.iter_mut().step_by(hess.nrows() + 1).for_each(|d| *d += shift);
        if let Some(chol) = shifted.cholesky() {
            return Ok(chol.solve(&rhs));
        }
        shift *= 10.0;
    }
    Err(Error::InvalidState("primal Hessian is not positive definite".into()))
}

/// Damped Newton on the strongly convex `Σ c_k l_mu(...) + (nu/2)‖w‖²`.
fn newton(terms: &Terms, loss: Loss, mu: f64, nu: f64, mut w: Vec<f64>, tol: f64) -> Result<NewtonResult> {
    let mut f = terms.value(loss, mu, nu, &w);
    let mut grad = terms.gradient(loss, mu, nu, &w);
    let mut gnorm = norm(&grad);
    let mut iterations = 0;
    while iterations < NEWTON_ITERATIONS && gnorm > tol {
        iterations += 1;
        let step = solve_shifted(terms.hessian(loss, mu, nu, &w), &grad)?;
        let dir: Vec<f64> = step.iter().map(|s| -s).collect();
        let slope = dot(&grad, &dir);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-20 {
            let mut cand = w.clone();
            axpy(t, &dir, &mut cand);
            let fc = terms.value(loss, mu, nu, &cand);
            if fc <= f + ARMIJO * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            break;
        };
        let g_new = terms.gradient(loss, mu, nu, &cand);
        let moved = cand.iter().zip(&w).any(|(a, b)| a != b);
        w = cand;
        f = fc;
        grad = g_new;
        gnorm = norm(&grad);
        if !moved {
            break;
        }
    }
    Ok(NewtonResult {
        w,
        gradient_norm: gnorm,
        iterations,
    })
}

/// Stationarity tolerance for one smoothing level: the requested tolerance,
/// floored by the roundoff level of a gradient whose curvature is `1/mu`.
fn stage_tolerance(tol: f64, mu: f64) -> f64 {
    if mu > 0.0 {
        tol.max(64.0 * f64::EPSILON / mu)
    } else {
        tol
    }
}

/// Minimiser of the ridge problem `L(w) + (nu/2)‖w‖²`, with continuation in
/// the hinge smoothing when needed.
fn ridge_minimiser(terms: &Terms, loss: Loss, nu: f64, w0: Vec<f64>, tol: f64) -> Result<NewtonResult> {
    if loss != Loss::Hinge {
        return newton(terms, loss, 0.0, nu, w0, tol);
    }
    let mut w = w0;
    let mut total = 0;
    let mut last = None;
    for &mu in &HINGE_SMOOTHING {
        let r = newton(terms, loss, mu, nu, w, stage_tolerance(tol, mu))?;
        total += r.iterations;
        w = r.w.clone();
        last = Some(r);
    }
    let mut r = last.expect("at least one smoothing level");
    r.iterations = total;
    Ok(r)
}

/// `min_w g(w)` to stationarity tolerance `tol`.
pub fn minimize_primal(problem: &DualProblem, tol: f64) -> Result<PrimalSolution> {
    let terms = Terms::new(problem);
    let loss = problem.loss();
    let dim = problem.feature_dim();
    let final_tol = if loss == Loss::Hinge {
        stage_tolerance(tol, *HINGE_SMOOTHING.last().unwrap())
    } else {
        tol
    };
    let (w, gradient_norm, iterations) = match problem.regularizer() {
        Regularizer::L2 { lambda } => {
            let r = ridge_minimiser(&terms, loss, lambda, vec![0.0; dim], tol)?;
            (r.w, r.gradient_norm, r.iterations)
        }
        Regularizer::NormBall { radius } => ball_minimiser(&terms, loss, radius, dim, tol)?,
    };
    let value = problem.primal_objective(&w)?;
    Ok(PrimalSolution {
        w,
        value,
        gradient_norm,
        iterations,
        converged: gradient_norm <= final_tol,
    })
}

/// Ball constraint through its multiplier: `‖w(nu)‖` decreases in `nu`, so
/// bisect (in log scale) for `‖w(nu)‖ = C`.
fn ball_minimiser(terms: &Terms, loss: Loss, radius: f64, dim: usize, tol: f64) -> Result<(Vec<f64>, f64, usize)> {
    let mut iterations = 0;
    let mut solve = |nu: f64, w0: Vec<f64>| -> Result<NewtonResult> {
        let r = ridge_minimiser(terms, loss, nu, w0, tol)?;
        iterations += r.iterations;
        Ok(r)
    };
    let inner = solve(RIDGE_FLOOR, vec![0.0; dim])?;
    if norm(&inner.w) <= radius {
        let g = inner.gradient_norm;
        return Ok((inner.w, g, iterations));
    }
    let (mut lo, mut hi) = (RIDGE_FLOOR, 1.0);
    let mut best = solve(hi, vec![0.0; dim])?;
    while norm(&best.w) > radius {
        lo = hi;
        hi *= 10.0;
        best = solve(hi, best.w)?;
    }
    for _ in 0..BISECTION_STEPS {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        let r = solve(mid, best.w.clone())?;
        if norm(&r.w) > radius {
            lo = mid;
        } else {
            hi = mid;
            best = r;
        }
        if (norm(&best.w) - radius).abs() <= 1e-13 * radius {
            break;
        }
    }
    let mut w = best.w;
    let n = norm(&w);
    if n > radius {
        w.iter_mut().for_each(|x| *x *= radius / n);
    }
    Ok((w, best.gradient_norm, iterations))
}

/// Coordinate view used by the dual solver: coordinate `k` moves `θ` along
/// `c_k s_k φ_k`.
struct DualCoords<'a> {
    terms: Terms<'a>,
    sq_norms: Vec<f64>,
}

/// Maximiser of a concave scalar function on `[lo, hi]` from its first two
/// derivatives, by Newton safeguarded with bisection.
fn maximise_1d<D, H>(d1: D, d2: H, x0: f64, lo: f64, hi: f64) -> f64
where
    D: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    let g0 = d1(x0);
    if g0 == 0.0 {
        return x0;
    }
    let (mut a, mut b);
    if g0 > 0.0 {
        a = x0;
        if hi.is_finite() {
            if d1(hi) >= 0.0 {
                return hi;
            }
            b = hi;
        } else {
            let mut step = 1.0f64.max(x0.abs());
            loop {
                b = x0 + step;
                if d1(b) <= 0.0 {
                    break;
                }
                a = b;
                step *= 2.0;
            }
        }
    } else {
        b = x0;
        if lo.is_finite() {
            if d1(lo) <= 0.0 {
                return lo;
            }
            a = lo;
        } else {
            let mut step = 1.0f64.max(x0.abs());
            loop {
                a = x0 - step;
                if d1(a) >= 0.0 {
                    break;
                }
                b = a;
                step *= 2.0;
            }
        }
    }
    let mut t = x0;
    for _ in 0..200 {
        let g = d1(t);
        if g > 0.0 {
            a = t;
        } else if g < 0.0 {
            b = t;
        } else {
            return t;
        }
        let curv = d2(t);
        let mut next = t - g / curv;
        if !(curv < 0.0 && next > a && next < b) {
            next = 0.5 * (a + b);
        }
        if (next - t).abs() <= 4.0 * f64::EPSILON * (1.0 + t.abs()) || b - a <= 4.0 * f64::EPSILON * (1.0 + t.abs()) {
            return next;
        }
        t = next;
    }
    t
}

impl<'a> DualCoords<'a> {
    fn new(p: &'a DualProblem) -> Self {
        let terms = Terms::new(p);
        let sq_norms = terms.feats.iter().map(|f| dot(f, f)).collect();
        Self { terms, sq_norms }
    }

    fn len(&self) -> usize {
        self.terms.feats.len()
    }

    /// Exact maximisation of `h` along coordinate `k`; updates `x[k]` and `θ`.
    fn update(&self, p: &DualProblem, k: usize, x: &mut [f64], theta: &mut [f64]) -> Result<()> {
        let loss = p.loss();
        let c = self.terms.weights[k];
        let s = self.terms.signs[k];
        let phi = self.terms.feats[k];
        let ta = c * s * dot(theta, phi);
        let aa = c * c * self.sq_norms[k];
        let tt = dot(theta, theta);
        let x0 = x[k];
        let reg = p.regularizer();
        let bx = p.dual_box();
        let (d1, d2): (Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>) = match reg {
            Regularizer::L2 { lambda } => (
                Box::new(move |t| {
                    -(ta + (t - x0) * aa) / lambda - c * loss.conjugate_derivative(t).unwrap_or(f64::NAN)
                }),
                Box::new(move |t| -aa / lambda - c * loss.conjugate_second_derivative(t).unwrap_or(f64::NAN)),
            ),
            Regularizer::NormBall { radius } => {
                let nrm = move |t: f64| {
                    let d = t - x0;
                    (tt + 2.0 * d * ta + d * d * aa).max(0.0).sqrt()
                };
                (
                    Box::new(move |t| {
                        let n = nrm(t);
                        let ra = if n > 0.0 { radius * (ta + (t - x0) * aa) / n } else { 0.0 };
                        -ra - c * loss.conjugate_derivative(t).unwrap_or(f64::NAN)
                    }),
                    Box::new(move |t| {
                        let n = nrm(t);
                        let proj = ta + (t - x0) * aa;
                        let curv = if n > 0.0 {
                            radius * (aa * n * n - proj * proj).max(0.0) / (n * n * n)
                        } else {
                            f64::INFINITY
                        };
                        -curv - c * loss.conjugate_second_derivative(t).unwrap_or(f64::NAN)
                    }),
                )
            }
        };
        let t = bx.clamp(maximise_1d(&*d1, &*d2, bx.clamp(x0), bx.lo, bx.hi));
        if t != x0 {
            axpy(c * s * (t - x0), phi, theta);
            x[k] = t;
        }
        Ok(())
    }
}

fn split(p: &DualProblem, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (x[..p.n_real()].to_vec(), x[p.n_real()..].to_vec())
}

/// Infinity norm of `P(x + g) - x`, with `g` the per-sample dual gradient
/// and `P` the clamp onto the dual box.
pub fn projected_residual(p: &DualProblem, u: &[f64], v: &[f64]) -> Result<f64> {
    let (gu, gv) = p.dual_gradient(u, v)?;
    let b = p.dual_box();
    Ok(u.iter()
        .chain(v)
        .zip(gu.iter().chain(&gv))
        .map(|(x, g)| (b.clamp(x + g) - x).abs())
        .fold(0.0, f64::max))
}

/// `max_{u,v} h(u, v)` by cyclic exact coordinate ascent inside the dual box.
/// Each coordinate step solves its one-dimensional concave problem exactly,
/// so `h` never decreases.
pub fn maximize_dual(
    problem: &DualProblem,
    u0: &[f64],
    v0: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<DualSolution> {
    problem.dual_objective(u0, v0)?;
    let coords = DualCoords::new(problem);
    let b = problem.dual_box();
    let mut x: Vec<f64> = u0.iter().chain(v0).map(|t| b.clamp(*t)).collect();
    let (u, v) = split(problem, &x);
    let mut theta = problem.theta(&u, &v);
    let mut history = vec![problem.dual_value_unchecked(&u, &v)];
    let mut residual = projected_residual(problem, &u, &v)?;
    let mut sweeps = 0;
    while residual > tol && sweeps < max_sweeps {
        for k in 0..coords.len() {
            coords.update(problem, k, &mut x, &mut theta)?;
        }
        sweeps += 1;
        let (u, v) = split(problem, &x);
        // Refresh θ to keep incremental drift out of the residual.
        theta = problem.theta(&u, &v);
        history.push(problem.dual_value_unchecked(&u, &v));
        residual = projected_residual(problem, &u, &v)?;
        if !residual.is_finite() {
            return Err(Error::Diverged {
                iteration: sweeps,
                what: "dual residual is not finite".into(),
            });
        }
    }
    let (u, v) = split(problem, &x);
    Ok(DualSolution {
        value: *history.last().unwrap(),
        u,
        v,
        residual,
        sweeps,
        history,
        converged: residual <= tol,
    })
}

/// Solve both problems for a frozen generator and report the gap.
pub fn duality_gap_audit(problem: &DualProblem, tol: f64, budget: usize) -> Result<GapAudit> {
    let primal = minimize_primal(problem, tol)?;
    if !primal.converged {
        return Err(Error::BudgetExceeded {
            budget: NEWTON_ITERATIONS,
            residual: primal.gradient_norm,
        });
    }
    let (u0, v0) = problem.dual_from_primal(&vec![0.0; problem.feature_dim()]);
    let dual = maximize_dual(problem, &u0, &v0, tol, budget)?;
    if !dual.converged {
        return Err(Error::BudgetExceeded {
            budget,
            residual: dual.residual,
        });
    }
    Ok(GapAudit {
        primal_opt: primal.value,
        dual_opt: dual.value,
        gap: primal.value - dual.value,
        primal,
        dual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(loss: Loss, reg: Regularizer, n: usize, m: usize, dim: usize, seed: u64) -> DualProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feat = || {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = norm(&v);
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let real: Vec<Vec<f64>> = (0..n).map(|_| feat()).collect();
        let fake = (0..m).map(|_| feat()).collect();
        DualProblem::new(real, fake, vec![1.0 / m as f64; m], loss, reg).unwrap()
    }

    #[test]
    fn maximise_1d_quadratic() {
        let t = maximise_1d(|t| -2.0 * (t - 0.3), |_| -2.0, 0.0, -1.0, 1.0);
        assert!((t - 0.3).abs() < 1e-15);
        assert_eq!(maximise_1d(|t| -(t - 5.0), |_| -1.0, 0.0, -1.0, 1.0), 1.0);
        let t = maximise_1d(|t| -(t + 7.0), |_| -1.0, 0.0, f64::NEG_INFINITY, 0.0);
        assert!((t + 7.0).abs() < 1e-12);
    }

    #[test]
    fn primal_stationary_for_smooth_losses() {
        for loss in [Loss::Logistic, Loss::Exponential, Loss::LeastSquare] {
            let p = random_problem(loss, Regularizer::l2(0.5).unwrap(), 10, 8, 6, 1);
            let s = minimize_primal(&p, 1e-10).unwrap();
            assert!(s.converged);
            assert!(norm(&p.primal_gradient(&s.w).unwrap()) <= 1e-10);
        }
    }

    #[test]
    fn gap_closes_on_small_instances() {
        for loss in Loss::CONVEX {
            for reg in [Regularizer::l2(1.0).unwrap(), Regularizer::norm_ball(0.8).unwrap()] {
                let p = random_problem(loss, reg, 12, 9, 8, 7);
                let a = duality_gap_audit(&p, 1e-8, 50_000).unwrap();
                assert!(a.gap >= -1e-8, "{loss} {reg:?}: {}", a.gap);
                assert!(a.gap <= 1e-6 * (1.0 + a.primal_opt.abs()), "{loss} {reg:?}: gap {}", a.gap);
            }
        }
    }

    #[test]
    fn dual_ascent_is_monotone() {
        let p = random_problem(Loss::Hinge, Regularizer::l2(1.0).unwrap(), 10, 10, 5, 3);
        let (u, v) = p.dual_from_primal(&[0.0; 5]);
        let s = maximize_dual(&p, &u, &v, 1e-9, 10_000).unwrap();
        for pair in s.history.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12);
        }
    }

    #[test]
    fn budget_exceeded_is_reported() {
        let p = random_problem(Loss::Logistic, Regularizer::l2(1.0).unwrap(), 10, 10, 5, 3);
        match duality_gap_audit(&p, 1e-12, 0) {
            Err(Error::BudgetExceeded { budget: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
