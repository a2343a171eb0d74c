//! Generator training: simultaneous ascent on the dual objective, and the
//! alternating primal baseline.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::densities::Density;
use crate::duality::{generator_gradient, primal_generator_gradient, DualProblem, GeneratedBatch, Regularizer};
use crate::error::{Error, Result};
use crate::generator::{GeneratorParams, NoiseSource};
use crate::losses::Loss;
use crate::optim::{axpy, dot};
use crate::rff::FeatureMap;

pub const DEFAULT_DUAL_STEP: f64 = 0.05;
pub const DEFAULT_GENERATOR_STEP: f64 = 0.01;
pub const DEFAULT_PRIMAL_STEP: f64 = 0.5;
pub const DEFAULT_INNER_STEPS: usize = 5;

pub const METRICS_HEADER: &str = "iter,h,g_recovered,gap,div_estimate,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Dual,
    Primal,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(Mode::Dual),
            "primal" => Ok(Mode::Primal),
            other => Err(Error::InvalidInput(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: Loss,
    pub reg: Regularizer,
    pub iterations: usize,
    pub log_interval: usize,
    /// Step for `(u, v)`.
    pub dual_step: f64,
    /// Step for the generator.
    pub generator_step: f64,
    /// Step for `w` in the primal baseline.
    pub primal_step: f64,
    /// Inner descent steps on `w` per generator step in the primal baseline.
    pub inner_steps: usize,
    /// Generated points per step when the noise is continuous.
    pub batch_size: usize,
    pub record_time: bool,
}

impl TrainConfig {
    pub fn new(loss: Loss, reg: Regularizer) -> Self {
        Self {
            loss,
            reg,
            iterations: 1000,
            log_interval: 100,
            dual_step: DEFAULT_DUAL_STEP,
            generator_step: DEFAULT_GENERATOR_STEP,
            primal_step: DEFAULT_PRIMAL_STEP,
            inner_steps: DEFAULT_INNER_STEPS,
            batch_size: 128,
            record_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, step) in [
            ("dual_step", self.dual_step),
            ("generator_step", self.generator_step),
            ("primal_step", self.primal_step),
        ] {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {step}")));
            }
        }
        if self.log_interval == 0 {
            return Err(Error::InvalidConfig("log_interval must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !self.loss.is_convex() {
            return Err(Error::InvalidConfig(format!("training needs a convex loss, got {}", self.loss)));
        }
        Ok(())
    }
}

/// One row of metrics.csv.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    /// Dual objective at the current dual point.
    pub h: f64,
    /// Primal objective at the discriminator implied by the current state.
    pub g_recovered: f64,
    pub gap: f64,
    /// `l(0) - L(w)/2` with `L` the classification loss: estimates the
    /// divergence paired with the loss (total variation, Jensen-Shannon, ...).
    pub div_estimate: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iter, self.h, self.g_recovered, self.gap, self.div_estimate, self.wall_ms
        )
    }
}

/// Inputs that stay fixed during a run.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub data: Vec<Vec<f64>>,
    pub noise: NoiseSource,
    pub map: FeatureMap,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub generator: GeneratorParams,
    /// Final `(u, v)` for the dual trainer.
    pub dual: Option<(Vec<f64>, Vec<f64>)>,
    /// Final discriminator: recovered from the dual, or the primal iterate.
    pub w: Vec<f64>,
    pub metrics: Vec<MetricsRow>,
}

fn check_setup(setup: &TrainSetup, gen: &GeneratorParams) -> Result<()> {
    if setup.data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if gen.noise_dim() != setup.noise.dim() {
        return Err(Error::DimensionMismatch {
            expected: gen.noise_dim(),
            got: setup.noise.dim(),
        });
    }
    if gen.output_dim() != setup.map.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: setup.map.input_dim(),
            got: gen.output_dim(),
        });
    }
    Ok(())
}

/// Noise for one step with its weights.
fn noise_batch<R: Rng + ?Sized>(noise: &NoiseSource, batch: usize, rng: &mut R) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    match noise {
        NoiseSource::Atoms { atoms, probs } => Ok((atoms.clone(), probs.clone())),
        NoiseSource::Gaussian { .. } => Ok((noise.draw(rng, batch)?, vec![1.0 / batch as f64; batch])),
    }
}

struct Logger {
    start: Instant,
    record_time: bool,
}

impl Logger {
    fn row(&self, iter: usize, problem: &DualProblem, h: f64, w: &[f64]) -> Result<MetricsRow> {
        let empirical = problem.empirical_loss(w)?;
        let g = problem.regularizer().value(w)? + empirical;
        if !(h.is_finite() && g.is_finite()) {
            return Err(Error::Diverged {
                iteration: iter,
                what: format!("objective is not finite (h = {h}, g = {g})"),
            });
        }
        Ok(MetricsRow {
            iter,
            h,
            g_recovered: g,
            gap: g - h,
            div_estimate: problem.loss().value(0.0) - 0.5 * empirical,
            wall_ms: if self.record_time {
                self.start.elapsed().as_millis() as u64
            } else {
                0
            },
        })
    }
}

/// Rows are logged after every `log_interval` steps and after the last step.
fn should_log(iter: usize, cfg: &TrainConfig) -> bool {
    iter > 0 && (iter % cfg.log_interval == 0 || iter == cfg.iterations)
}

fn diverged(iteration: usize, what: &str) -> Error {
    Error::Diverged {
        iteration,
        what: what.into(),
    }
}

/// Simultaneous projected ascent on `h` in `(u, v)` and the generator.
///
/// `u` has one coordinate per training point. With atom noise `v` has one
/// coordinate per atom and persists across steps; with Gaussian noise every
/// step draws a fresh batch and starts its `v` at `l'(-w·Ψ)` for the current
/// discriminator `w`. `on_log` sees every logged row with the generator at
/// that point.
pub fn train_dual<R, F>(
    setup: &TrainSetup,
    init: GeneratorParams,
    cfg: &TrainConfig,
    rng: &mut R,
    mut on_log: F,
) -> Result<TrainOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(&MetricsRow, &GeneratorParams) -> Result<()>,
{
    cfg.validate()?;
    check_setup(setup, &init)?;
    let logger = Logger {
        start: Instant::now(),
        record_time: cfg.record_time,
    };
    let map = &setup.map;
    let real: Arc<Vec<Vec<f64>>> = Arc::new(setup.data.iter().map(|x| map.features(x)).collect::<Result<_>>()?);
    let bx = cfg.loss.dual_box()?;
    let start = bx.clamp(cfg.loss.derivative(0.0));
    let mut gen = init;
    let mut u = vec![start; real.len()];
    let mut v: Vec<f64> = Vec::new();
    let mut w = vec![0.0; map.output_dim()];
    let mut metrics = Vec::new();

    for iter in 0..=cfg.iterations {
        let (z, pi) = noise_batch(&setup.noise, cfg.batch_size, rng)?;
        let batch = GeneratedBatch::new(map, &gen, &z)?;
        if v.len() != z.len() || !setup.noise.is_discrete() {
            v = batch.features.iter().map(|f| bx.clamp(cfg.loss.derivative(-dot(&w, f)))).collect();
        }
        let problem = DualProblem::new(real.clone(), batch.features.clone(), pi, cfg.loss, cfg.reg)?;
        w = problem.implied_discriminator(&u, &v);

        if should_log(iter, cfg) {
            let h = problem.dual_objective(&u, &v)?;
            let row = logger.row(iter, &problem, h, &w)?;
            on_log(&row, &gen)?;
            metrics.push(row);
        }
        if iter == cfg.iterations {
            break;
        }

        // ∂h/∂Ψ_j = -π_j v_j w, evaluated before (u, v) move.
        let coefs: Vec<f64> = problem.fake_weights().iter().zip(&v).map(|(p, vj)| -p * vj).collect();
        let grads = generator_gradient(map, &gen, &batch, &coefs, &w)?;
        let (gu, gv) = problem.dual_gradient_with(&w, &u, &v)?;
        for (x, g) in u.iter_mut().zip(&gu) {
            *x = bx.clamp(*x + cfg.dual_step * g);
        }
        for (x, g) in v.iter_mut().zip(&gv) {
            *x = bx.clamp(*x + cfg.dual_step * g);
        }
        gen.apply(cfg.generator_step, &grads);
        if !gen.is_finite() || u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(diverged(iter + 1, "parameters are not finite"));
        }
    }

    Ok(TrainOutcome {
        generator: gen,
        dual: Some((u, v)),
        w,
        metrics,
    })
}

/// `steps` projected gradient steps on `g` starting from `w`.
pub fn inner_descent(problem: &DualProblem, w: &mut [f64], step: f64, steps: usize) -> Result<()> {
    for _ in 0..steps {
        let g = problem.primal_gradient(w)?;
        axpy(-step, &g, w);
        problem.regularizer().project(w);
    }
    Ok(())
}

/// Alternating baseline: `inner_steps` projected gradient steps on `w`
/// (descent on `g`), then one ascent step on the generator against that `w`.
/// `h` is logged at the dual point that is optimal for the current `w`.
pub fn train_primal<R, F>(
    setup: &TrainSetup,
    init: GeneratorParams,
    cfg: &TrainConfig,
    rng: &mut R,
    mut on_log: F,
) -> Result<TrainOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(&MetricsRow, &GeneratorParams) -> Result<()>,
{
    cfg.validate()?;
    check_setup(setup, &init)?;
    let logger = Logger {
        start: Instant::now(),
        record_time: cfg.record_time,
    };
    let map = &setup.map;
    let real: Arc<Vec<Vec<f64>>> = Arc::new(setup.data.iter().map(|x| map.features(x)).collect::<Result<_>>()?);
    let scale = 0.1 / (map.output_dim() as f64).sqrt();
    let mut w: Vec<f64> = (0..map.output_dim())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    cfg.reg.project(&mut w);
    let mut gen = init;
    let mut metrics = Vec::new();

    for iter in 0..=cfg.iterations {
        let (z, pi) = noise_batch(&setup.noise, cfg.batch_size, rng)?;
        let batch = GeneratedBatch::new(map, &gen, &z)?;
        let problem = DualProblem::new(real.clone(), batch.features.clone(), pi, cfg.loss, cfg.reg)?;
        if iter < cfg.iterations {
            inner_descent(&problem, &mut w, cfg.primal_step, cfg.inner_steps)?;
            if w.iter().any(|x| !x.is_finite()) {
                return Err(diverged(iter, "discriminator is not finite"));
            }
        }

        if should_log(iter, cfg) {
            let (u, v) = problem.dual_from_primal(&w);
            let h = problem.dual_objective(&u, &v)?;
            let row = logger.row(iter, &problem, h, &w)?;
            on_log(&row, &gen)?;
            metrics.push(row);
        }
        if iter == cfg.iterations {
            break;
        }

        let grads = primal_generator_gradient(&problem, map, &gen, &batch, &w)?;
        gen.apply(cfg.generator_step, &grads);
        if !gen.is_finite() {
            return Err(diverged(iter + 1, "generator is not finite"));
        }
    }

    Ok(TrainOutcome {
        generator: gen,
        dual: None,
        w,
        metrics,
    })
}

/// Total variation between the histogram of 1-D `samples` and `target`,
/// over `bins` equal bins on `[lo, hi]`. Mass outside the range on either
/// side counts as one extra cell.
pub fn histogram_tv(samples: &[f64], target: &Density, bins: usize, lo: f64, hi: f64) -> Result<f64> {
    if samples.is_empty() || bins == 0 || !(hi > lo) {
        return Err(Error::InvalidInput("histogram needs samples, bins, and lo < hi".into()));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut outside = 0usize;
    for &x in samples {
        if x >= lo && x <= hi {
            counts[(((x - lo) / width) as usize).min(bins - 1)] += 1;
        } else {
            outside += 1;
        }
    }
    let n = samples.len() as f64;
    let mut tv = 0.0;
    let mut prev = target.cdf_1d(lo)?;
    let below = prev;
    for (b, &c) in counts.iter().enumerate() {
        let next = target.cdf_1d(lo + (b + 1) as f64 * width)?;
        tv += (c as f64 / n - (next - prev)).abs();
        prev = next;
    }
    let target_outside = below + (1.0 - prev);
    tv += (outside as f64 / n - target_outside).abs();
    Ok(0.5 * tv)
}
