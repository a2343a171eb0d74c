//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line.
//!
//! The criteria run one after another inside a single test so that their
//! wall-clock budgets are not shared with concurrently running tests.

use std::f64::consts::LN_2;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgan::audit::{duality_gap_audit, DEFAULT_BUDGET, DEFAULT_TOLERANCE};
use kgan::cli::report::{kernel_test, KERNEL_DIM, KERNEL_FEATURES, KERNEL_SEED};
use kgan::cli::run::generate;
use kgan::cli::{audit_instance, parse_config, run_experiment, ExperimentConfig};
use kgan::densities::{Density, QuadratureGrid};
use kgan::divergences::{f_divergence, verify_pairs, DivergencePair, VERIFY_NODES, VERIFY_SEPARATIONS};
use kgan::duality::{dual_generator_gradient, DualProblem, GeneratedBatch, Regularizer};
use kgan::generator::GeneratorParams;
use kgan::losses::{conjugate_numeric, conjugate_of, legendre_residual, young_gap, Interval, Loss, DEFAULT_GRID_SIZE};
use kgan::rff::{ball_pairs, certify_injectivity, construct_collision, FeatureMap};
use kgan::trainer::{histogram_tv, Mode};

const CONVEX: [Loss; 4] = [Loss::Logistic, Loss::Hinge, Loss::Exponential, Loss::LeastSquare];
const SMOOTH: [Loss; 3] = [Loss::Logistic, Loss::Exponential, Loss::LeastSquare];

// Criterion 1.
const PAIR_TOL: f64 = 1e-4;
const SPOT_TOL: f64 = 1e-6;
const TV_UNIT_SHIFT: f64 = 0.382_924_922_548_026_2;
const EXP_UNIT_SHIFT: f64 = 0.882_496_902_584_595_4;
const PAIRS_BUDGET: Duration = Duration::from_secs(5);

// Criterion 2.
const F_AT_ONE_TOL: f64 = 1e-9;
const SELF_DIVERGENCE_TOL: f64 = 1e-8;

// Criterion 3.
const BICONJUGATE_TOL: f64 = 1e-3;
const YOUNG_TOL: f64 = -1e-10;
const LEGENDRE_TOL: f64 = 1e-6;
const CONJUGATE_TOL: f64 = 1e-5;

// Criterion 4.
const KERNEL_MEAN_TOL: f64 = 0.02;
const KERNEL_MAX_TOL: f64 = 0.08;
const DOUBLING_SEEDS: u64 = 8;
const DOUBLING_SLACK: f64 = 0.3;
const KERNEL_BUDGET: Duration = Duration::from_secs(2);

// Criterion 5.
const INJECTIVITY_PAIRS: usize = 10_000;
const MIN_SEPARATION: f64 = 1e-8;
const MIN_FEATURE_DISTANCE: f64 = 1e-12;
const COLLISION_DISTANCE: f64 = 1e-9;

// Criterion 6.
const WEAK_DUALITY_TOL: f64 = -1e-8;
const GAP_REL_TOL: f64 = 1e-5;
const DUALITY_PROBES: usize = 200;
const DUALITY_BUDGET: Duration = Duration::from_secs(30);

// Criterion 7.
const GRADIENT_PROBES: u64 = 50;
const GRADIENT_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

// Criterion 8.
const TV_TOL: f64 = 0.15;
const TV_SAMPLES: usize = 10_000;
const TV_BINS: usize = 64;
const TV_RANGE: (f64, f64) = (-6.0, 6.0);
const BASELINE_INNER_STEPS: usize = 2;
const SMOKE_BUDGET: Duration = Duration::from_secs(60);

struct Outcome {
    pass: bool,
    detail: String,
    /// A failure that cannot be fixed, with the reason.
    known_failure: Option<&'static str>,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self {
            pass,
            detail,
            known_failure: None,
        }
    }
}

/// Written to the process's stdout handle rather than through `println!`, so
/// the lines show without `--nocapture`.
fn report(id: u32, name: &str, o: &Outcome) {
    let status = if o.pass { "PASS" } else { "FAIL" };
    let mut line = format!("criterion {id} {name}: {status} ({})", o.detail);
    if let (false, Some(why)) = (o.pass, o.known_failure) {
        line.push_str(&format!(" [known: {why}]"));
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let checks = verify_pairs(&VERIFY_SEPARATIONS, VERIFY_NODES).unwrap();
    let elapsed = start.elapsed();
    let worst = checks.iter().map(|c| c.abs_diff()).fold(0.0, f64::max);
    let find = |loss: Loss, mu: f64| checks.iter().find(|c| c.loss == loss && c.mu == mu).unwrap();
    let logistic = find(Loss::Logistic, 0.0);
    let hinge = find(Loss::Hinge, 1.0);
    let exp = find(Loss::Exponential, 1.0);
    let spots = [
        (logistic.general_loss, LN_2),
        (logistic.closed_form, LN_2),
        (hinge.general_loss, 1.0 - TV_UNIT_SHIFT),
        (hinge.closed_form, 1.0 - TV_UNIT_SHIFT),
        (exp.general_loss, EXP_UNIT_SHIFT),
        (exp.closed_form, EXP_UNIT_SHIFT),
    ];
    let spot_err = spots.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Outcome::new(
        checks.len() == 20 && worst <= PAIR_TOL && spot_err <= SPOT_TOL && elapsed < PAIRS_BUDGET,
        format!(
            "{} rows, max diff {worst:.2e} <= {PAIR_TOL:.0e}, spot err {spot_err:.2e} <= {SPOT_TOL:.0e}, {:.2}s < {}s",
            checks.len(),
            elapsed.as_secs_f64(),
            PAIRS_BUDGET.as_secs()
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut convex_err: f64 = 0.0;
    let mut self_err: f64 = 0.0;
    let p = Density::mixture(
        vec![0.3, 0.7],
        vec![vec![-1.0], vec![1.5]],
        vec![nalgebra::DMatrix::from_element(1, 1, 0.5), nalgebra::DMatrix::from_element(1, 1, 1.2)],
    )
    .unwrap();
    let grid = QuadratureGrid::uniform_1d(-12.0, 12.0, 4001).unwrap();
    for pair in DivergencePair::all() {
        let f1 = pair.f(1.0);
        if pair.loss().is_convex() {
            convex_err = convex_err.max((f1 + 2.0 * pair.loss().value(0.0)).abs());
        }
        self_err = self_err.max((f_divergence(&pair, &p, &p, &grid).unwrap() - f1).abs());
    }
    let zero_one = DivergencePair::for_loss(Loss::ZeroOne);
    let zo_f1 = zero_one.f(1.0);
    let zo_target = -2.0 * Loss::ZeroOne.value(0.0);
    let convex_ok = convex_err <= F_AT_ONE_TOL;
    let self_ok = self_err <= SELF_DIVERGENCE_TOL;
    let zero_one_ok = (zo_f1 - zo_target).abs() <= F_AT_ONE_TOL;
    let reachable = convex_ok && self_ok && (zo_f1 + 1.0).abs() <= F_AT_ONE_TOL;
    Outcome {
        pass: convex_ok && self_ok && zero_one_ok,
        detail: format!(
            "convex losses |f(1)+2l(0)| {convex_err:.1e} <= {F_AT_ONE_TOL:.0e}; zero-one f(1) = {zo_f1}, -2l(0) = {zo_target}; \
             |I_f(P||P) - f(1)| {self_err:.1e} <= {SELF_DIVERGENCE_TOL:.0e}"
        ),
        known_failure: reachable.then_some("zero-one has l(0) = 1 and f(1) = -min(1, 1) = -1, so f(1) = -2l(0) cannot hold"),
    }
}

fn criterion_3() -> Outcome {
    let mut bi: f64 = 0.0;
    let mut young = f64::INFINITY;
    let mut legendre: f64 = 0.0;
    let mut closed: f64 = 0.0;
    for loss in CONVEX {
        let dom = loss.conjugate_domain().unwrap();
        let bound = match loss {
            Loss::Logistic | Loss::Hinge => 1.0,
            Loss::Exponential => 200.0,
            _ => 50.0,
        };
        let conj = |t: f64| if dom.contains(t) { loss.conjugate(t).unwrap() } else { f64::INFINITY };
        for a in linspace(-5.0, 5.0, 101) {
            let c = conjugate_of(conj, a, bound, DEFAULT_GRID_SIZE).unwrap();
            bi = bi.max((c.value - loss.value(a)).abs());
        }
        let probe = match loss {
            Loss::Logistic | Loss::Hinge => Interval::new(-1.0, 0.0),
            Loss::Exponential => Interval::new(-5.0, 0.0),
            _ => Interval::new(-5.0, 5.0),
        };
        for s in linspace(-5.0, 5.0, 101) {
            for t in linspace(probe.lo, probe.hi, 101) {
                young = young.min(young_gap(loss, s, t).unwrap());
            }
        }
        for t in linspace(probe.lo, probe.hi, 51).skip(1).take(49) {
            let numeric = conjugate_numeric(loss, t, 50.0, DEFAULT_GRID_SIZE).unwrap();
            closed = closed.max((numeric.value - loss.conjugate(t).unwrap()).abs());
        }
    }
    for loss in SMOOTH {
        for s in linspace(-5.0, 5.0, 101) {
            legendre = legendre.max(legendre_residual(loss, s).unwrap());
        }
    }
    Outcome::new(
        bi <= BICONJUGATE_TOL && young >= YOUNG_TOL && legendre <= LEGENDRE_TOL && closed <= CONJUGATE_TOL,
        format!(
            "biconjugate {bi:.1e} <= {BICONJUGATE_TOL:.0e}, min Young gap {young:.1e} >= {YOUNG_TOL:.0e}, \
             Legendre {legendre:.1e} <= {LEGENDRE_TOL:.0e}, closed vs numeric {closed:.1e} <= {CONJUGATE_TOL:.0e}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let e = kernel_test(KERNEL_DIM, KERNEL_FEATURES, 1.0, KERNEL_SEED).unwrap();
    let elapsed = start.elapsed();
    let (mut base, mut doubled) = (0.0, 0.0);
    for seed in 0..DOUBLING_SEEDS {
        base += kernel_test(KERNEL_DIM, KERNEL_FEATURES, 1.0, seed).unwrap().mean_abs;
        doubled += kernel_test(KERNEL_DIM, 2 * KERNEL_FEATURES, 1.0, seed).unwrap().mean_abs;
    }
    let ratio = doubled / base;
    let expected = std::f64::consts::FRAC_1_SQRT_2;
    let ratio_ok = (ratio - expected).abs() <= DOUBLING_SLACK * expected;
    Outcome::new(
        e.mean_abs <= KERNEL_MEAN_TOL && e.max_abs <= KERNEL_MAX_TOL && ratio_ok && elapsed < KERNEL_BUDGET,
        format!(
            "meanAbs {:.4} <= {KERNEL_MEAN_TOL}, maxAbs {:.4} <= {KERNEL_MAX_TOL}, doubling ratio {ratio:.3} vs {expected:.3} +/- {:.0}%, {:.2}s < {}s",
            e.mean_abs,
            e.max_abs,
            DOUBLING_SLACK * 100.0,
            elapsed.as_secs_f64(),
            KERNEL_BUDGET.as_secs()
        ),
    )
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let map = FeatureMap::isotropic(2, 16, 0.1, &mut rng).unwrap();
    let cert = certify_injectivity(&map, 2.0).unwrap();
    // Half the pairs are spread over the unit disc, half are nearly coincident.
    let mut pairs = ball_pairs(2, INJECTIVITY_PAIRS / 2, 1.0, &mut rng);
    for _ in 0..INJECTIVITY_PAIRS / 2 {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-0.5..0.5)).collect();
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let r = MIN_SEPARATION * (1.0 + rng.random::<f64>());
        let y = vec![x[0] + r * angle.cos(), x[1] + r * angle.sin()];
        pairs.push((x, y));
    }
    let mut min_feature = f64::INFINITY;
    for (x, y) in &pairs {
        if distance(x, y) >= MIN_SEPARATION {
            min_feature = min_feature.min(distance(&map.features(x).unwrap(), &map.features(y).unwrap()));
        }
    }

    let narrow = FeatureMap::isotropic(3, 2, 1.0, &mut rng).unwrap();
    let narrow_cert = certify_injectivity(&narrow, 2.0).unwrap();
    let collision = construct_collision(&narrow).map(|(x, y)| {
        (
            distance(&x, &y),
            distance(&narrow.features(&x).unwrap(), &narrow.features(&y).unwrap()),
        )
    });
    let collision_ok = matches!(collision, Some((sep, feat)) if sep > 0.0 && feat <= COLLISION_DISTANCE);
    Outcome::new(
        cert.certified && min_feature > MIN_FEATURE_DISTANCE && !narrow_cert.certified && collision_ok,
        format!(
            "certified {} (product {:.3} < 2pi), min feature distance {min_feature:.2e} > {MIN_FEATURE_DISTANCE:.0e} over {} pairs; \
             D < d collision {:?} <= {COLLISION_DISTANCE:.0e}",
            cert.certified,
            cert.norm_product,
            pairs.len(),
            collision.map(|c| c.1)
        ),
    )
}

fn uniform_in(rng: &mut ChaCha8Rng, bx: Interval, n: usize) -> Vec<f64> {
    let lo = if bx.lo.is_finite() { bx.lo } else { -3.0 };
    let hi = if bx.hi.is_finite() { bx.hi } else { 3.0 };
    (0..n).map(|_| bx.clamp(rng.random_range(lo..hi))).collect()
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for loss in [Loss::Logistic, Loss::Hinge] {
        let mut cfg = ExperimentConfig::with_loss(loss);
        cfg.reg = Regularizer::l2(1.0).unwrap();
        let p = audit_instance(&cfg, 64, 64, 32).unwrap();
        let mut weak = f64::INFINITY;
        for _ in 0..DUALITY_PROBES {
            let w: Vec<f64> = (0..p.feature_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u = uniform_in(&mut rng, p.dual_box(), p.n_real());
            let v = uniform_in(&mut rng, p.dual_box(), p.n_fake());
            weak = weak.min(p.primal_objective(&w).unwrap() - p.dual_objective(&u, &v).unwrap());
        }
        let a = duality_gap_audit(&p, DEFAULT_TOLERANCE, DEFAULT_BUDGET).unwrap();
        weak = weak
            .min(p.primal_objective(&a.primal.w).unwrap() - p.dual_objective(&a.dual.u, &a.dual.v).unwrap());
        let bound = GAP_REL_TOL * (1.0 + a.primal_opt.abs());
        ok &= weak >= WEAK_DUALITY_TOL && a.gap <= bound;
        detail.push(format!(
            "{loss}: min g-h {weak:.1e} >= {WEAK_DUALITY_TOL:.0e}, gap {:.1e} <= {bound:.1e}",
            a.gap
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < DUALITY_BUDGET;
    detail.push(format!("{:.2}s < {}s", elapsed.as_secs_f64(), DUALITY_BUDGET.as_secs()));
    Outcome::new(ok, detail.join("; "))
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn shifted(gen: &GeneratorParams, d: &[f64], eps: f64) -> GeneratorParams {
    let mut g = gen.clone();
    let flat: Vec<f64> = gen.to_flat().iter().zip(d).map(|(p, di)| p + eps * di).collect();
    g.set_flat(&flat).unwrap();
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Directional derivative of `g · G(z)` against a central difference.
fn backward_probe(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = GeneratorParams::init(&[2, 16, 16, 1], &mut rng).unwrap();
    let z = random_direction(&mut rng, 2);
    let og = random_direction(&mut rng, 1);
    let d = random_direction(&mut rng, gen.param_count());
    let (_, tape) = gen.forward(&z).unwrap();
    let analytic = dot(&gen.backward(&tape, &og).unwrap().to_flat(), &d);
    let at = |eps: f64| dot(&shifted(&gen, &d, eps).output(&z).unwrap(), &og);
    let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
    rel_err(analytic, numeric)
}

/// Directional derivative of `h(u, v)` in the generator parameters.
fn dual_probe(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loss = CONVEX[seed as usize % 4];
    let reg = if seed % 2 == 0 {
        Regularizer::l2(0.5).unwrap()
    } else {
        Regularizer::norm_ball(2.0).unwrap()
    };
    let map = FeatureMap::isotropic(1, 8, 1.0, &mut rng).unwrap();
    let gen = GeneratorParams::init(&[2, 8, 1], &mut rng).unwrap();
    let data: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
    let noise: Vec<Vec<f64>> = (0..6).map(|_| random_direction(&mut rng, 2)).collect();
    let pi = vec![1.0 / 6.0; 6];
    let build = |g: &GeneratorParams| DualProblem::from_generator(&map, &data, g, &noise, pi.clone(), loss, reg).unwrap();
    let p = build(&gen);
    let bx = Interval::new(p.dual_box().lo.max(-3.0) + 0.05, p.dual_box().hi - 0.05);
    let u = uniform_in(&mut rng, bx, 12);
    let v = uniform_in(&mut rng, bx, 6);
    let d = random_direction(&mut rng, gen.param_count());
    let batch = GeneratedBatch::new(&map, &gen, &noise).unwrap();
    let grads = dual_generator_gradient(&p, &map, &gen, &batch, &u, &v).unwrap();
    let analytic = dot(&grads.to_flat(), &d);
    let at = |eps: f64| build(&shifted(&gen, &d, eps)).dual_objective(&u, &v).unwrap();
    let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
    rel_err(analytic, numeric)
}

fn criterion_7() -> Outcome {
    let half = GRADIENT_PROBES / 2;
    let backward = (0..half).map(backward_probe).fold(0.0, f64::max);
    let dual = (half..GRADIENT_PROBES).map(dual_probe).fold(0.0, f64::max);
    Outcome::new(
        backward <= GRADIENT_REL_TOL && dual <= GRADIENT_REL_TOL,
        format!(
            "{GRADIENT_PROBES} probes, generator backward {backward:.1e}, grad_psi h {dual:.1e} <= {GRADIENT_REL_TOL:.0e}"
        ),
    )
}

fn bundled_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/two_modes.conf")
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = parse_config(&bundled_config()).unwrap();
    cfg.snapshots = false;
    cfg.out = dir.path().join("dual");
    let start = Instant::now();
    let dual = run_experiment(&cfg).unwrap();
    let samples: Vec<f64> = generate(&dual.outcome.generator, &dual.noise, TV_SAMPLES, cfg.seed)
        .unwrap()
        .into_iter()
        .map(|x| x[0])
        .collect();
    let target = dual.target.as_ref().unwrap();
    let tv = histogram_tv(&samples, target, TV_BINS, TV_RANGE.0, TV_RANGE.1).unwrap();

    cfg.mode = Mode::Primal;
    cfg.inner_steps = BASELINE_INNER_STEPS;
    cfg.out = dir.path().join("primal");
    let primal = run_experiment(&cfg).map(|s| s.last_row().map(|r| r.div_estimate));
    let elapsed = start.elapsed();
    let primal_div = match primal {
        Ok(Some(d)) if d.is_finite() => Some(d),
        _ => None,
    };
    Outcome::new(
        tv <= TV_TOL && primal_div.is_some() && elapsed < SMOKE_BUDGET,
        format!(
            "dual TV {tv:.4} <= {TV_TOL}, primal final divergence {primal_div:?}, {:.1}s < {}s",
            elapsed.as_secs_f64(),
            SMOKE_BUDGET.as_secs()
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "loss/divergence identities", criterion_1),
        (2, "f(1) and self-divergence", criterion_2),
        (3, "Fenchel conjugates", criterion_3),
        (4, "kernel approximation", criterion_4),
        (5, "injectivity", criterion_5),
        (6, "duality", criterion_6),
        (7, "gradient checks", criterion_7),
        (8, "end-to-end smoke", criterion_8),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let o = run();
        report(id, name, &o);
        if !o.pass && o.known_failure.is_none() {
            unexpected.push(id);
        }
    }
    assert!(unexpected.is_empty(), "failed criteria: {unexpected:?}");
}
