//! Verification report: loss/divergence identities and kernel approximation.

use std::fmt::Write as _;

use crate::divergences::{verify_pairs, PairCheck, VERIFY_NODES, VERIFY_SEPARATIONS};
use crate::error::Result;
use crate::rff::{approx_error, ball_pairs, ApproxError, FeatureMap};

pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_HEADER: &str = "check,lhs,rhs,tolerance,pass";
pub const PAIR_TOLERANCE: f64 = 1e-4;

/// Kernel check: inputs in `R^2`, identity covariance, 2048 features, 1000
/// pairs in the radius-3 ball.
pub const KERNEL_DIM: usize = 2;
pub const KERNEL_FEATURES: usize = 2048;
pub const KERNEL_PAIRS: usize = 1000;
pub const KERNEL_RADIUS: f64 = 3.0;
pub const KERNEL_SEED: u64 = 2;
pub const KERNEL_MEAN_TOLERANCE: f64 = 0.02;
pub const KERNEL_MAX_TOLERANCE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
}

impl ReportRow {
    pub fn pass(&self) -> bool {
        (self.lhs - self.rhs).abs() <= self.tolerance
    }
}

/// Mean and max kernel error of a seeded isotropic map on seeded ball pairs.
pub fn kernel_test(dim: usize, features: usize, sigma: f64, seed: u64) -> Result<ApproxError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let map = FeatureMap::isotropic(dim, features, sigma, &mut rng)?;
    let pairs = ball_pairs(dim, KERNEL_PAIRS, KERNEL_RADIUS, &mut rng);
    approx_error(&map, &pairs)
}

pub fn pair_rows(checks: &[PairCheck], tolerance: f64) -> Vec<ReportRow> {
    checks
        .iter()
        .map(|c| ReportRow {
            check: format!("pair_{}_mu{}", c.loss, c.mu),
            lhs: c.general_loss,
            rhs: c.closed_form,
            tolerance,
        })
        .collect()
}

/// All rows: one per loss and separation, then the two kernel rows. A
/// `tolerance` override replaces every row's tolerance.
pub fn verify_report(tolerance: Option<f64>) -> Result<Vec<ReportRow>> {
    let checks = verify_pairs(&VERIFY_SEPARATIONS, VERIFY_NODES)?;
    let mut rows = pair_rows(&checks, tolerance.unwrap_or(PAIR_TOLERANCE));
    let k = kernel_test(KERNEL_DIM, KERNEL_FEATURES, 1.0, KERNEL_SEED)?;
    rows.push(ReportRow {
        check: "kernel_mean_abs".into(),
        lhs: k.mean_abs,
        rhs: 0.0,
        tolerance: tolerance.unwrap_or(KERNEL_MEAN_TOLERANCE),
    });
    rows.push(ReportRow {
        check: "kernel_max_abs".into(),
        lhs: k.max_abs,
        rhs: 0.0,
        tolerance: tolerance.unwrap_or(KERNEL_MAX_TOLERANCE),
    });
    Ok(rows)
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.check, r.lhs, r.rhs, r.tolerance, r.pass()).unwrap();
    }
    s
}
