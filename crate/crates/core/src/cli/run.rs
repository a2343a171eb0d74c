//! Wiring a config into a training run and its artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DataSource, ExperimentConfig, NoiseKind};
use super::svg;
use crate::checkpoint::Checkpoint;
use crate::densities::Density;
use crate::duality::DualProblem;
use crate::error::{Error, Result};
use crate::generator::{GeneratorParams, NoiseSource};
use crate::rff::FeatureMap;
use crate::trainer::{train_dual, train_primal, MetricsRow, Mode, TrainOutcome, TrainSetup, METRICS_HEADER};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SAMPLES_HEADER_PREFIX: &str = "label";

/// Points drawn for each snapshot.
const SNAPSHOT_POINTS: usize = 500;

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Data = 0,
    FeatureMap = 1,
    GeneratorInit = 2,
    NoiseAtoms = 3,
    Training = 4,
    Output = 5,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Everything a run needs, built deterministically from the config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub setup: TrainSetup,
    pub generator: GeneratorParams,
    /// The data density when the data is synthetic.
    pub target: Option<Density>,
}

/// Reads comma-separated points, skipping a non-numeric header row.
pub fn load_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match parsed {
            Ok(p) if p.iter().all(|x| x.is_finite()) => points.push(p),
            Err(_) if idx == 0 => continue,
            _ => {
                return Err(Error::ConfigLine {
                    line: idx + 1,
                    message: format!("{}: cannot parse `{line}` as a point", path.display()),
                })
            }
        }
    }
    let Some(first) = points.first() else {
        return Err(Error::InvalidInput(format!("{} holds no points", path.display())));
    };
    let dim = first.len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    Ok(points)
}

fn noise_source(cfg: &ExperimentConfig, count: Option<usize>) -> Result<NoiseSource> {
    match (cfg.noise, count) {
        (_, Some(m)) | (NoiseKind::Atoms { count: m }, None) => {
            NoiseSource::random_atoms(cfg.noise_dim, m, &mut stream(cfg.seed, Stream::NoiseAtoms))
        }
        (NoiseKind::Gaussian, None) => NoiseSource::gaussian(cfg.noise_dim),
    }
}

fn build(cfg: &ExperimentConfig, samples: usize, atoms: Option<usize>, features: usize) -> Result<Prepared> {
    let (data, target) = match &cfg.data {
        DataSource::Mixture { weights, means, covs } => {
            let d = Density::from_flat(weights, means, covs)?;
            (d.sample(&mut stream(cfg.seed, Stream::Data), samples)?, Some(d))
        }
        DataSource::Csv { path } => (load_csv(path)?, None),
    };
    let dim = data[0].len();
    let map = FeatureMap::isotropic(dim, features, cfg.sigma, &mut stream(cfg.seed, Stream::FeatureMap))?;
    let mut sizes = vec![cfg.noise_dim];
    sizes.extend(&cfg.hidden);
    sizes.push(dim);
    let generator = GeneratorParams::init(&sizes, &mut stream(cfg.seed, Stream::GeneratorInit))?;
    Ok(Prepared {
        setup: TrainSetup {
            data,
            noise: noise_source(cfg, atoms)?,
            map,
        },
        generator,
        target,
    })
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    build(cfg, cfg.samples, None, cfg.features)
}

/// A frozen-generator instance for the duality audit: `n` data points,
/// `m` equally weighted noise atoms, `features` random features, with the
/// loss and regulariser from the config.
pub fn audit_instance(cfg: &ExperimentConfig, n: usize, m: usize, features: usize) -> Result<DualProblem> {
    let p = build(cfg, n, Some(m), features)?;
    let NoiseSource::Atoms { atoms, probs } = &p.setup.noise else {
        unreachable!("audit instances use atoms")
    };
    DualProblem::from_generator(
        &p.setup.map,
        &p.setup.data,
        &p.generator,
        atoms,
        probs.clone(),
        cfg.loss,
        cfg.reg,
    )
}

/// Generator outputs for `n` noise draws from the output stream.
pub fn generate(gen: &GeneratorParams, noise: &NoiseSource, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let z = noise.draw(&mut stream(seed, Stream::Output), n)?;
    z.iter().map(|z| gen.output(z)).collect()
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub outcome: TrainOutcome,
    pub target: Option<Density>,
    pub noise: NoiseSource,
}

impl RunSummary {
    pub fn last_row(&self) -> Option<&MetricsRow> {
        self.outcome.metrics.last()
    }
}

fn write_points(out: &mut impl Write, label: &str, points: &[Vec<f64>]) -> std::io::Result<()> {
    for p in points {
        write!(out, "{label}")?;
        for x in p {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Trains per the config and writes into `cfg.out` only: metrics.csv (rows
/// flushed as they are logged, so a diverged run keeps its partial trace),
/// checkpoint.txt, samples.csv, and `snapshot_<iter>.svg` files when enabled.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let prepared = prepare(cfg)?;
    let out_dir = cfg.out.clone();
    std::fs::create_dir_all(&out_dir)?;
    let mut metrics = BufWriter::new(File::create(out_dir.join(METRICS_FILE))?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    metrics.flush()?;

    let setup = &prepared.setup;
    let snapshot_real: Vec<Vec<f64>> = setup.data.iter().take(SNAPSHOT_POINTS).cloned().collect();
    let on_log = |row: &MetricsRow, gen: &GeneratorParams| -> Result<()> {
        writeln!(metrics, "{}", row.to_csv())?;
        metrics.flush()?;
        if cfg.snapshots {
            let fake = generate(gen, &setup.noise, SNAPSHOT_POINTS, cfg.seed)?;
            let title = format!("iteration {}", row.iter);
            std::fs::write(
                out_dir.join(format!("snapshot_{:07}.svg", row.iter)),
                svg::scatter(&snapshot_real, &fake, &title),
            )?;
        }
        Ok(())
    };
    let mut rng = stream(cfg.seed, Stream::Training);
    let tc = cfg.train_config();
    let outcome = match cfg.mode {
        Mode::Dual => train_dual(setup, prepared.generator.clone(), &tc, &mut rng, on_log)?,
        Mode::Primal => train_primal(setup, prepared.generator.clone(), &tc, &mut rng, on_log)?,
    };

    Checkpoint {
        generator: outcome.generator.clone(),
        dual: outcome.dual.clone(),
    }
    .save(&out_dir.join(CHECKPOINT_FILE))?;

    let generated = generate(&outcome.generator, &setup.noise, setup.data.len(), cfg.seed)?;
    let mut samples = BufWriter::new(File::create(out_dir.join(SAMPLES_FILE))?);
    let dim = setup.data[0].len();
    let cols: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    writeln!(samples, "{SAMPLES_HEADER_PREFIX},{}", cols.join(","))?;
    write_points(&mut samples, "real", &setup.data)?;
    write_points(&mut samples, "generated", &generated)?;
    samples.flush()?;

    Ok(RunSummary {
        out_dir,
        outcome,
        target: prepared.target,
        noise: prepared.setup.noise,
    })
}
