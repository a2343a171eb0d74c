//! Loss / f-divergence pairs.
//!
//! For a margin loss `l`, the best achievable classification risk between two
//! densities is `R = ½ ∫ inf_a [l(a) p_d + l(-a) p_g] dx`, and it equals
//! `-½ I_f(P_d‖P_g)` for the generator `f(t) = -inf_a [l(a) t + l(-a)]`.
//! This module computes both sides through separate code paths, plus the named
//! divergence each pair reduces to.

use std::f64::consts::LN_2;
use std::fmt;

use crate::densities::{covering_grid, integrate, Density, QuadratureGrid};
use crate::error::{Error, Result};
use crate::losses::Loss;
use crate::optim::golden_section_min;

/// Bracket for the pointwise infimum over the discriminator value.
pub const ALPHA_BRACKET: f64 = 60.0;
/// Golden-section iteration cap for the pointwise infimum.
pub const ALPHA_ITERATIONS: usize = 200;
/// Density ratios are clamped into `[RATIO_MIN, RATIO_MAX]` before `f` sees them.
pub const RATIO_MIN: f64 = 1e-300;
pub const RATIO_MAX: f64 = 1e300;

/// Quadrature nodes used by the verification sweeps.
pub const VERIFY_NODES: usize = 4001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DivergenceName {
    TotalVariation,
    HellingerSquared,
    Triangular,
    JensenShannon,
    ZeroOneTv,
}

impl DivergenceName {
    pub fn as_str(self) -> &'static str {
        match self {
            DivergenceName::TotalVariation => "total-variation",
            DivergenceName::HellingerSquared => "hellinger-squared",
            DivergenceName::Triangular => "triangular",
            DivergenceName::JensenShannon => "jensen-shannon",
            DivergenceName::ZeroOneTv => "zero-one-tv",
        }
    }
}

impl fmt::Display for DivergenceName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A loss together with the divergence its optimal risk measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivergencePair {
    loss: Loss,
}

impl DivergencePair {
    pub fn for_loss(loss: Loss) -> Self {
        Self { loss }
    }

    pub fn all() -> [DivergencePair; 5] {
        Loss::ALL.map(Self::for_loss)
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn divergence_name(&self) -> DivergenceName {
        match self.loss {
            Loss::Logistic => DivergenceName::JensenShannon,
            Loss::Hinge => DivergenceName::TotalVariation,
            Loss::Exponential => DivergenceName::HellingerSquared,
            Loss::LeastSquare => DivergenceName::Triangular,
            Loss::ZeroOne => DivergenceName::ZeroOneTv,
        }
    }

    /// Closed-form generator `f(t)`, `t >= 0`.
    pub fn f(&self, t: f64) -> f64 {
        match self.loss {
            Loss::Logistic => {
                if t == 0.0 {
                    0.0
                } else {
                    -t * ((t + 1.0) / t).ln() - t.ln_1p()
                }
            }
            Loss::Hinge => -2.0 * t.min(1.0),
            Loss::Exponential => -2.0 * t.sqrt(),
            Loss::LeastSquare => -4.0 * t / (t + 1.0),
            Loss::ZeroOne => -t.min(1.0),
        }
    }

    /// The table's optimal discriminator at a point with density values
    /// `pd` (real) and `pg` (generated).
    pub fn optimal_discriminator(&self, pd: f64, pg: f64) -> Result<f64> {
        if !(pd > 0.0 && pg > 0.0) {
            return Err(Error::InvalidInput(format!(
                "density values must be positive, got ({pd}, {pg})"
            )));
        }
        Ok(match self.loss {
            Loss::Logistic => (pd / pg).ln(),
            Loss::Exponential => 0.5 * (pd / pg).ln(),
            Loss::LeastSquare => (pd - pg) / (pd + pg),
            Loss::Hinge | Loss::ZeroOne => sign(pg - pd),
        })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `inf_a [l(a) p + l(-a) q]` for `p, q >= 0`.
pub fn pointwise_risk(loss: Loss, p: f64, q: f64) -> f64 {
    if loss == Loss::ZeroOne {
        // a > 0 costs q, a < 0 costs p, a = 0 costs p + q.
        return p.min(q);
    }
    golden_section_min(
        |a| loss.value(a) * p + loss.value(-a) * q,
        -ALPHA_BRACKET,
        ALPHA_BRACKET,
        ALPHA_ITERATIONS,
    )
    .1
}

/// Minimiser of `l(a) t + l(-a)`, i.e. the pointwise optimal discriminator.
pub fn pointwise_argmin(loss: Loss, t: f64) -> Result<f64> {
    if !loss.is_convex() {
        return Err(Error::Unsupported("the zero-one objective is not unimodal".into()));
    }
    Ok(golden_section_min(
        |a| loss.value(a) * t + loss.value(-a),
        -ALPHA_BRACKET,
        ALPHA_BRACKET,
        ALPHA_ITERATIONS,
    )
    .0)
}

/// `f(t) = -inf_a [l(a) t + l(-a)]` evaluated numerically.
pub fn f_from_loss(loss: Loss, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("f is defined for t >= 0, got {t}")));
    }
    Ok(-pointwise_risk(loss, t, 1.0))
}

fn check_dims(pd: &Density, pg: &Density, grid: &QuadratureGrid) -> Result<()> {
    if pd.dim() != pg.dim() {
        return Err(Error::DimensionMismatch {
            expected: pd.dim(),
            got: pg.dim(),
        });
    }
    if grid.dim() != pd.dim() {
        return Err(Error::DimensionMismatch {
            expected: pd.dim(),
            got: grid.dim(),
        });
    }
    Ok(())
}

fn clamped_ratio(p: f64, q: f64) -> f64 {
    let r = if q > 0.0 {
        p / q
    } else if p > 0.0 {
        RATIO_MAX
    } else {
        1.0
    };
    r.clamp(RATIO_MIN, RATIO_MAX)
}

/// `I_f(P_d‖P_g) = ∫ f(p_d/p_g) p_g dx` with the pair's closed-form `f`.
pub fn f_divergence(pair: &DivergencePair, pd: &Density, pg: &Density, grid: &QuadratureGrid) -> Result<f64> {
    check_dims(pd, pg, grid)?;
    integrate(
        |x| {
            let q = pg.density(x);
            pair.f(clamped_ratio(pd.density(x), q)) * q
        },
        grid,
    )
}

/// `R_l = ½ ∫ inf_a [l(a) p_d + l(-a) p_g] dx`, with the infimum taken
/// numerically at every node.
pub fn general_loss_infimum(loss: Loss, pd: &Density, pg: &Density, grid: &QuadratureGrid) -> Result<f64> {
    check_dims(pd, pg, grid)?;
    Ok(0.5 * integrate(|x| pointwise_risk(loss, pd.density(x), pg.density(x)), grid)?)
}

/// The named divergence from its own defining integral.
pub fn divergence(name: DivergenceName, pd: &Density, pg: &Density, grid: &QuadratureGrid) -> Result<f64> {
    check_dims(pd, pg, grid)?;
    let integrand: Box<dyn Fn(f64, f64) -> f64> = match name {
        DivergenceName::TotalVariation | DivergenceName::ZeroOneTv => Box::new(|p, q| 0.5 * (p - q).abs()),
        DivergenceName::HellingerSquared => Box::new(|p, q| (p * q).sqrt()),
        DivergenceName::Triangular => Box::new(|p, q| {
            let s = p + q;
            if s > 0.0 {
                (p - q) * (p - q) / s
            } else {
                0.0
            }
        }),
        DivergenceName::JensenShannon => Box::new(|p, q| {
            let m = 0.5 * (p + q);
            let term = |a: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
            0.5 * (term(p) + term(q))
        }),
    };
    let value = integrate(|x| integrand(pd.density(x), pg.density(x)), grid)?;
    Ok(match name {
        DivergenceName::HellingerSquared => 1.0 - value,
        _ => value,
    })
}

/// The pair's risk expressed through its named divergence.
pub fn closed_form_risk(pair: &DivergencePair, pd: &Density, pg: &Density, grid: &QuadratureGrid) -> Result<f64> {
    let div = divergence(pair.divergence_name(), pd, pg, grid)?;
    Ok(match pair.loss() {
        Loss::ZeroOne => 0.5 * (1.0 - div),
        Loss::Hinge => 1.0 - div,
        Loss::Exponential => 1.0 - div,
        Loss::LeastSquare => 1.0 - 0.5 * div,
        Loss::Logistic => LN_2 - div,
    })
}

/// One row of the loss/divergence identity sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCheck {
    pub loss: Loss,
    pub mu: f64,
    pub general_loss: f64,
    pub closed_form: f64,
}

impl PairCheck {
    pub fn abs_diff(&self) -> f64 {
        (self.general_loss - self.closed_form).abs()
    }
}

/// Mean separations swept by [`verify_pairs`].
pub const VERIFY_SEPARATIONS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

/// Compares the general-loss infimum with the closed-form risk for every
/// pair on `N(0,1)` against `N(mu,1)`.
pub fn verify_pairs(separations: &[f64], nodes: usize) -> Result<Vec<PairCheck>> {
    let pd = Density::normal_1d(0.0, 1.0)?;
    let mut rows = Vec::new();
    for pair in DivergencePair::all() {
        for &mu in separations {
            let pg = Density::normal_1d(mu, 1.0)?;
            let grid = covering_grid(&pd, &pg, nodes)?;
            rows.push(PairCheck {
                loss: pair.loss(),
                mu,
                general_loss: general_loss_infimum(pair.loss(), &pd, &pg, &grid)?,
                closed_form: closed_form_risk(&pair, &pd, &pg, &grid)?,
            });
        }
    }
    Ok(rows)
}
