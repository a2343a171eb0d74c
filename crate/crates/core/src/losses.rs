//! Margin losses, their derivatives, and their Fenchel conjugates.
//!
//! Conjugates follow the supremum convention `l*(t) = sup_a (t a - l(a))`.
//! Because every loss here is non-increasing, each conjugate is finite only
//! on a subset of `(-inf, 0]`, so the logistic and hinge conjugates live on
//! `[-1, 0]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::golden_section_max;

/// Default half-width of the search interval used by [`conjugate_numeric`].
pub const DEFAULT_SEARCH_BOUND: f64 = 50.0;

/// Default node count for the coarse grid of [`conjugate_numeric`].
pub const DEFAULT_GRID_SIZE: usize = 2001;

/// Distance kept from a conjugate-domain endpoint where the conjugate's slope
/// is infinite (logistic at both ends, exponential at zero).
pub const EDGE_MARGIN: f64 = 1e-12;

/// Closed interval, possibly unbounded on either side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }

    pub fn clamp(&self, t: f64) -> f64 {
        t.max(self.lo).min(self.hi)
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

/// The five margin losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loss {
    Logistic,
    Hinge,
    Exponential,
    LeastSquare,
    ZeroOne,
}

impl Loss {
    pub const ALL: [Loss; 5] = [
        Loss::Logistic,
        Loss::Hinge,
        Loss::Exponential,
        Loss::LeastSquare,
        Loss::ZeroOne,
    ];

    /// The convex losses, for which conjugate duality applies.
    pub const CONVEX: [Loss; 4] = [Loss::Logistic, Loss::Hinge, Loss::Exponential, Loss::LeastSquare];

    /// Name used on the command line and in config files.
    pub fn name(self) -> &'static str {
        match self {
            Loss::Logistic => "logistic",
            Loss::Hinge => "hinge",
            Loss::Exponential => "exp",
            Loss::LeastSquare => "lsq",
            Loss::ZeroOne => "zeroone",
        }
    }

    pub fn is_convex(self) -> bool {
        self != Loss::ZeroOne
    }

    pub fn is_strictly_convex(self) -> bool {
        matches!(self, Loss::Logistic | Loss::Exponential | Loss::LeastSquare)
    }

    pub fn value(self, a: f64) -> f64 {
        match self {
            Loss::Logistic => {
                if a >= 0.0 {
                    (-a).exp().ln_1p()
                } else {
                    -a + a.exp().ln_1p()
                }
            }
            Loss::Hinge => (1.0 - a).max(0.0),
            Loss::Exponential => (-a).exp(),
            Loss::LeastSquare => (1.0 - a) * (1.0 - a),
            Loss::ZeroOne => {
                if a <= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative, with subgradient 0 for the hinge at its kink and 0 for the
    /// zero-one loss everywhere it is differentiable.
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Loss::Logistic => -1.0 / (1.0 + a.exp()),
            Loss::Hinge => {
                if a < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Loss::Exponential => -(-a).exp(),
            Loss::LeastSquare => -2.0 * (1.0 - a),
            Loss::ZeroOne => 0.0,
        }
    }

    /// Second derivative; zero wherever the loss is piecewise linear.
    pub fn second_derivative(self, a: f64) -> f64 {
        match self {
            Loss::Logistic => {
                let e = (-a.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            Loss::Exponential => (-a).exp(),
            Loss::LeastSquare => 2.0,
            Loss::Hinge | Loss::ZeroOne => 0.0,
        }
    }

    /// Where the conjugate is finite. `None` for the zero-one loss.
    pub fn conjugate_domain(self) -> Option<Interval> {
        match self {
            Loss::Logistic | Loss::Hinge => Some(Interval::new(-1.0, 0.0)),
            Loss::Exponential => Some(Interval::new(f64::NEG_INFINITY, 0.0)),
            Loss::LeastSquare => Some(Interval::new(f64::NEG_INFINITY, f64::INFINITY)),
            Loss::ZeroOne => None,
        }
    }

    /// The box dual iterates are projected onto: the conjugate domain, pulled
    /// in by [`EDGE_MARGIN`] at endpoints where the conjugate slope blows up.
    pub fn dual_box(self) -> Result<Interval> {
        let dom = self.conjugate_domain().ok_or_else(|| self.no_conjugate())?;
        Ok(match self {
            Loss::Logistic => Interval::new(dom.lo + EDGE_MARGIN, dom.hi - EDGE_MARGIN),
            Loss::Exponential => Interval::new(dom.lo, dom.hi - EDGE_MARGIN),
            _ => dom,
        })
    }

    /// Closed-form conjugate; `+inf` outside the conjugate domain.
    pub fn conjugate(self, t: f64) -> Result<f64> {
        let dom = self.conjugate_domain().ok_or_else(|| self.no_conjugate())?;
        if !dom.contains(t) {
            return Ok(f64::INFINITY);
        }
        Ok(match self {
            Loss::Logistic => xlogx(-t) + xlogx(1.0 + t),
            Loss::Hinge => t,
            Loss::Exponential => xlogx(-t) + t,
            Loss::LeastSquare => 0.25 * t * t + t,
            Loss::ZeroOne => unreachable!(),
        })
    }

    /// Derivative of the conjugate. Infinite at the logistic endpoints and at
    /// zero for the exponential loss.
    pub fn conjugate_derivative(self, t: f64) -> Result<f64> {
        let dom = self.conjugate_domain().ok_or_else(|| self.no_conjugate())?;
        if !dom.contains(t) {
            return Err(Error::InvalidInput(format!(
                "{t} is outside the {} conjugate domain [{}, {}]",
                self.name(),
                dom.lo,
                dom.hi
            )));
        }
        Ok(match self {
            Loss::Logistic => (1.0 + t).ln() - (-t).ln(),
            Loss::Hinge => 1.0,
            Loss::Exponential => -(-t).ln(),
            Loss::LeastSquare => 0.5 * t + 1.0,
            Loss::ZeroOne => unreachable!(),
        })
    }

    /// Second derivative of the conjugate inside its domain.
    pub fn conjugate_second_derivative(self, t: f64) -> Result<f64> {
        self.conjugate_derivative(t)?;
        Ok(match self {
            Loss::Logistic => 1.0 / (1.0 + t) - 1.0 / t,
            Loss::Hinge => 0.0,
            Loss::Exponential => -1.0 / t,
            Loss::LeastSquare => 0.5,
            Loss::ZeroOne => unreachable!(),
        })
    }

    fn no_conjugate(self) -> Error {
        Error::Unsupported(format!("the {} loss is not convex and has no conjugate", self.name()))
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logistic" => Ok(Loss::Logistic),
            "hinge" => Ok(Loss::Hinge),
            "exp" | "exponential" => Ok(Loss::Exponential),
            "lsq" | "least-square" | "leastsquare" => Ok(Loss::LeastSquare),
            "zeroone" | "zero-one" | "0-1" => Ok(Loss::ZeroOne),
            other => Err(Error::InvalidInput(format!("unknown loss `{other}`"))),
        }
    }
}

/// `x log x` with the convention `0 log 0 = 0`.
fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Result of a numeric conjugate evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericConjugate {
    pub value: f64,
    pub argmax: f64,
    /// The coarse-grid maximum sat on the edge of the search interval, so the
    /// supremum is probably not attained (t outside the effective domain).
    pub at_boundary: bool,
}

/// `sup_a (t a - f(a))` over `[-bound, bound]` for a convex `f`: a uniform grid
/// locates the best node, then golden-section refines between its neighbours.
pub fn conjugate_of<F>(f: F, t: f64, bound: f64, grid_size: usize) -> Result<NumericConjugate>
where
    F: Fn(f64) -> f64,
{
    if grid_size < 1001 {
        return Err(Error::InvalidInput(format!("grid size {grid_size} is below 1001")));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::InvalidInput(format!("search bound {bound} must be positive")));
    }
    let h = 2.0 * bound / (grid_size - 1) as f64;
    let node = |i: usize| -bound + i as f64 * h;
    let objective = |a: f64| t * a - f(a);
    let (best, best_val) = (0..grid_size)
        .map(|i| (i, objective(node(i))))
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if best == 0 || best == grid_size - 1 {
        return Ok(NumericConjugate {
            value: best_val,
            argmax: node(best),
            at_boundary: true,
        });
    }
    let (argmax, value) = golden_section_max(objective, node(best - 1), node(best + 1), 200);
    let (argmax, value) = if value >= best_val {
        (argmax, value)
    } else {
        (node(best), best_val)
    };
    Ok(NumericConjugate {
        value,
        argmax,
        at_boundary: false,
    })
}

/// Numeric conjugate of a loss; the oracle for [`Loss::conjugate`].
pub fn conjugate_numeric(loss: Loss, t: f64, search_bound: f64, grid_size: usize) -> Result<NumericConjugate> {
    if !loss.is_convex() {
        return Err(loss.no_conjugate());
    }
    conjugate_of(|a| loss.value(a), t, search_bound, grid_size)
}

/// Young gap `l(s) + l*(t) - s t`, nonnegative for every `s` and in-domain `t`.
pub fn young_gap(loss: Loss, s: f64, t: f64) -> Result<f64> {
    let dom = loss.conjugate_domain().ok_or_else(|| loss.no_conjugate())?;
    if !dom.contains(t) {
        return Err(Error::InvalidInput(format!(
            "{t} is outside the {} conjugate domain",
            loss.name()
        )));
    }
    Ok(loss.value(s) + loss.conjugate(t)? - s * t)
}

/// `|(l*)'(l'(s)) - s|`, which vanishes for differentiable strictly convex losses.
pub fn legendre_residual(loss: Loss, s: f64) -> Result<f64> {
    if !loss.is_strictly_convex() {
        return Err(Error::Unsupported(format!(
            "the Legendre identity needs a strictly convex differentiable loss, not {}",
            loss.name()
        )));
    }
    Ok((loss.conjugate_derivative(loss.derivative(s))? - s).abs())
}
