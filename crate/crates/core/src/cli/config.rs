//! Experiment configuration files.
//!
//! ```text
//! # comment
//! [data]
//! source = mixture          # mixture | csv
//! weights = 0.5, 0.5
//! means = -2, 2             # k*d values
//! covs = 0.25, 0.25         # k*d*d values, row-major per component
//! samples = 1024
//! path = data.csv           # only for source = csv
//!
//! [noise]
//! kind = gaussian           # gaussian | atoms
//! dim = 2
//! atoms = 64                # only for kind = atoms
//!
//! [model]
//! loss = logistic           # required
//! regularizer = l2          # l2 | ball
//! lambda = 0.3
//! radius = 1
//! features = 64
//! sigma = 3
//! hidden = 16, 16
//!
//! [train]
//! seed = 0
//! mode = dual               # dual | primal
//! iterations = 20000
//! log_interval = 1000
//! dual_step = 0.1
//! generator_step = 0.3
//! primal_step = 0.5
//! inner_steps = 5
//! batch_size = 128
//! snapshots = false
//! record_time = false
//! out = out
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::duality::Regularizer;
use crate::error::{Error, Result};
use crate::losses::Loss;
use crate::trainer::{Mode, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Gaussian mixture in the flat layout of [`crate::densities::Density::from_flat`].
    Mixture {
        weights: Vec<f64>,
        means: Vec<f64>,
        covs: Vec<f64>,
    },
    /// One point per row, comma separated; a non-numeric first row is a header.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    Atoms { count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub samples: usize,
    pub noise: NoiseKind,
    pub noise_dim: usize,
    pub loss: Loss,
    pub reg: Regularizer,
    pub features: usize,
    pub sigma: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub mode: Mode,
    pub iterations: usize,
    pub log_interval: usize,
    pub dual_step: f64,
    pub generator_step: f64,
    pub primal_step: f64,
    pub inner_steps: usize,
    pub batch_size: usize,
    pub snapshots: bool,
    pub record_time: bool,
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Defaults for everything but the loss.
    pub fn with_loss(loss: Loss) -> Self {
        Self {
            data: DataSource::Mixture {
                weights: vec![0.5, 0.5],
                means: vec![-2.0, 2.0],
                covs: vec![0.25, 0.25],
            },
            samples: 1024,
            noise: NoiseKind::Gaussian,
            noise_dim: 2,
            loss,
            reg: Regularizer::L2 { lambda: 0.3 },
            features: 64,
            sigma: 3.0,
            hidden: vec![16, 16],
            seed: 0,
            mode: Mode::Dual,
            iterations: 20_000,
            log_interval: 1000,
            dual_step: 0.1,
            generator_step: 0.3,
            primal_step: 0.5,
            inner_steps: 5,
            batch_size: 128,
            snapshots: false,
            record_time: false,
            out: PathBuf::from("out"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            reg: self.reg,
            iterations: self.iterations,
            log_interval: self.log_interval,
            dual_step: self.dual_step,
            generator_step: self.generator_step,
            primal_step: self.primal_step,
            inner_steps: self.inner_steps,
            batch_size: self.batch_size,
            record_time: self.record_time,
        }
    }

    /// Canonical text form; [`parse_config`] reads it back unchanged.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        s.push_str("[data]\n");
        match &self.data {
            DataSource::Mixture { weights, means, covs } => {
                s.push_str("source = mixture\n");
                writeln!(s, "weights = {}", join(weights)).unwrap();
                writeln!(s, "means = {}", join(means)).unwrap();
                writeln!(s, "covs = {}", join(covs)).unwrap();
            }
            DataSource::Csv { path } => {
                s.push_str("source = csv\n");
                writeln!(s, "path = {}", path.display()).unwrap();
            }
        }
        writeln!(s, "samples = {}", self.samples).unwrap();
        s.push_str("\n[noise]\n");
        match self.noise {
            NoiseKind::Gaussian => s.push_str("kind = gaussian\n"),
            NoiseKind::Atoms { count } => writeln!(s, "kind = atoms\natoms = {count}").unwrap(),
        }
        writeln!(s, "dim = {}", self.noise_dim).unwrap();
        s.push_str("\n[model]\n");
        writeln!(s, "loss = {}", self.loss).unwrap();
        match self.reg {
            Regularizer::L2 { lambda } => writeln!(s, "regularizer = l2\nlambda = {lambda}").unwrap(),
            Regularizer::NormBall { radius } => writeln!(s, "regularizer = ball\nradius = {radius}").unwrap(),
        }
        writeln!(s, "features = {}", self.features).unwrap();
        writeln!(s, "sigma = {}", self.sigma).unwrap();
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        writeln!(s, "hidden = {}", hidden.join(", ")).unwrap();
        s.push_str("\n[train]\n");
        writeln!(s, "seed = {}", self.seed).unwrap();
        let mode = match self.mode {
            Mode::Dual => "dual",
            Mode::Primal => "primal",
        };
        writeln!(s, "mode = {mode}").unwrap();
        writeln!(s, "iterations = {}", self.iterations).unwrap();
        writeln!(s, "log_interval = {}", self.log_interval).unwrap();
        writeln!(s, "dual_step = {}", self.dual_step).unwrap();
        writeln!(s, "generator_step = {}", self.generator_step).unwrap();
        writeln!(s, "primal_step = {}", self.primal_step).unwrap();
        writeln!(s, "inner_steps = {}", self.inner_steps).unwrap();
        writeln!(s, "batch_size = {}", self.batch_size).unwrap();
        writeln!(s, "snapshots = {}", self.snapshots).unwrap();
        writeln!(s, "record_time = {}", self.record_time).unwrap();
        writeln!(s, "out = {}", self.out.display()).unwrap();
        s
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

const SECTIONS: [(&str, &[&str]); 4] = [
    ("data", &["source", "weights", "means", "covs", "samples", "path"]),
    ("noise", &["kind", "dim", "atoms"]),
    (
        "model",
        &["loss", "regularizer", "lambda", "radius", "features", "sigma", "hidden"],
    ),
    (
        "train",
        &[
            "seed",
            "mode",
            "iterations",
            "log_interval",
            "dual_step",
            "generator_step",
            "primal_step",
            "inner_steps",
            "batch_size",
            "snapshots",
            "record_time",
            "out",
        ],
    ),
];

/// Raw `key = value` entries with their line numbers, keyed by `section.key`.
struct Entries {
    values: BTreeMap<String, (usize, String)>,
    sections: BTreeMap<&'static str, usize>,
    last_line: usize,
}

fn line_error(line: usize, message: impl Into<String>) -> Error {
    Error::ConfigLine {
        line,
        message: message.into(),
    }
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut sections = BTreeMap::new();
        let mut current: Option<(&'static str, &'static [&'static str])> = None;
        let mut last_line = 0;
        for (idx, raw) in text.lines().enumerate() {
            let n = idx + 1;
            last_line = n;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                let (sec, keys) = SECTIONS
                    .iter()
                    .find(|(s, _)| *s == name)
                    .ok_or_else(|| line_error(n, format!("unknown section [{name}]")))?;
                if sections.insert(*sec, n).is_some() {
                    return Err(line_error(n, format!("section [{name}] appears twice")));
                }
                current = Some((sec, keys));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| line_error(n, format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let (sec, keys) = current.ok_or_else(|| line_error(n, format!("key `{key}` outside any section")))?;
            if !keys.contains(&key) {
                return Err(line_error(n, format!("unknown key `{key}` in [{sec}]")));
            }
            if values.insert(format!("{sec}.{key}"), (n, value.to_string())).is_some() {
                return Err(line_error(n, format!("duplicate key `{key}` in [{sec}]")));
            }
        }
        Ok(Self {
            values,
            sections,
            last_line,
        })
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.values.get(key)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((n, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| line_error(*n, format!("cannot parse `{v}` for `{key}`"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((_, v)) if v.is_empty() => Ok(Some(Vec::new())),
            Some((n, v)) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<T>()
                        .map_err(|_| line_error(*n, format!("cannot parse `{}` in `{key}`", p.trim())))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Line to blame for a missing key: its section header, or the end of file.
    fn missing(&self, key: &str) -> Error {
        let sec = key.split('.').next().unwrap_or("");
        let line = self.sections.get(sec).copied().unwrap_or(self.last_line.max(1));
        line_error(line, format!("missing required key `{key}`"))
    }

    fn line_of(&self, key: &str) -> usize {
        self.raw(key)
            .map(|(n, _)| *n)
            .unwrap_or_else(|| self.sections.get(key.split('.').next().unwrap_or("")).copied().unwrap_or(0))
    }
}

fn parse_bool(entries: &Entries, key: &str) -> Result<Option<bool>> {
    match entries.raw(key) {
        None => Ok(None),
        Some((_, v)) if v == "true" => Ok(Some(true)),
        Some((_, v)) if v == "false" => Ok(Some(false)),
        Some((n, v)) => Err(line_error(*n, format!("`{key}` must be true or false, got `{v}`"))),
    }
}

/// Parses configuration text; defaults fill every key except `model.loss`.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let e = Entries::parse(text)?;
    let loss: Loss = e
        .get::<String>("model.loss")?
        .ok_or_else(|| e.missing("model.loss"))?
        .parse()
        .map_err(|_| line_error(e.line_of("model.loss"), "unknown loss name"))?;
    let mut cfg = ExperimentConfig::with_loss(loss);

    let source = e.get::<String>("data.source")?.unwrap_or_else(|| "mixture".into());
    cfg.data = match source.as_str() {
        "mixture" => {
            let DataSource::Mixture { weights, means, covs } = cfg.data.clone() else {
                unreachable!()
            };
            let given = ["data.weights", "data.means", "data.covs"].map(|k| e.raw(k).is_some());
            if given.iter().any(|g| *g) && !given.iter().all(|g| *g) {
                let absent = ["data.weights", "data.means", "data.covs"][given.iter().position(|g| !g).unwrap()];
                return Err(e.missing(absent));
            }
            DataSource::Mixture {
                weights: e.list("data.weights")?.unwrap_or(weights),
                means: e.list("data.means")?.unwrap_or(means),
                covs: e.list("data.covs")?.unwrap_or(covs),
            }
        }
        "csv" => DataSource::Csv {
            path: PathBuf::from(e.get::<String>("data.path")?.ok_or_else(|| e.missing("data.path"))?),
        },
        other => {
            return Err(line_error(
                e.line_of("data.source"),
                format!("unknown data source `{other}`"),
            ))
        }
    };
    if let Some(v) = e.get("data.samples")? {
        cfg.samples = v;
    }

    cfg.noise = match e.get::<String>("noise.kind")?.as_deref().unwrap_or("gaussian") {
        "gaussian" => NoiseKind::Gaussian,
        "atoms" => NoiseKind::Atoms {
            count: e.get("noise.atoms")?.ok_or_else(|| e.missing("noise.atoms"))?,
        },
        other => return Err(line_error(e.line_of("noise.kind"), format!("unknown noise kind `{other}`"))),
    };
    if let Some(v) = e.get("noise.dim")? {
        cfg.noise_dim = v;
    }

    let reg_line = e.line_of("model.regularizer");
    cfg.reg = match e.get::<String>("model.regularizer")?.as_deref().unwrap_or("l2") {
        "l2" => {
            let lambda = e.get("model.lambda")?.unwrap_or(0.3);
            Regularizer::l2(lambda).map_err(|err| line_error(e.line_of("model.lambda"), err.to_string()))?
        }
        "ball" => {
            let radius = e.get("model.radius")?.ok_or_else(|| e.missing("model.radius"))?;
            Regularizer::norm_ball(radius).map_err(|err| line_error(e.line_of("model.radius"), err.to_string()))?
        }
        other => return Err(line_error(reg_line, format!("unknown regularizer `{other}`"))),
    };
    if let Some(v) = e.get("model.features")? {
        cfg.features = v;
    }
    if let Some(v) = e.get("model.sigma")? {
        cfg.sigma = v;
    }
    if let Some(v) = e.list("model.hidden")? {
        cfg.hidden = v;
    }

    if let Some(v) = e.get("train.seed")? {
        cfg.seed = v;
    }
    if let Some(v) = e.get::<String>("train.mode")? {
        cfg.mode = v
            .parse()
            .map_err(|_| line_error(e.line_of("train.mode"), format!("unknown mode `{v}`")))?;
    }
    macro_rules! take {
        ($field:ident, $key:literal) => {
            if let Some(v) = e.get($key)? {
                cfg.$field = v;
            }
        };
    }
    take!(iterations, "train.iterations");
    take!(log_interval, "train.log_interval");
    take!(dual_step, "train.dual_step");
    take!(generator_step, "train.generator_step");
    take!(primal_step, "train.primal_step");
    take!(inner_steps, "train.inner_steps");
    take!(batch_size, "train.batch_size");
    if let Some(v) = parse_bool(&e, "train.snapshots")? {
        cfg.snapshots = v;
    }
    if let Some(v) = parse_bool(&e, "train.record_time")? {
        cfg.record_time = v;
    }
    if let Some(v) = e.get::<String>("train.out")? {
        cfg.out = PathBuf::from(v);
    }

    validate(&cfg, &e)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig, e: &Entries) -> Result<()> {
    let check = |ok: bool, key: &str, msg: &str| -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(line_error(e.line_of(key), format!("`{key}` {msg}")))
        }
    };
    check(cfg.samples >= 1, "data.samples", "must be at least 1")?;
    check(cfg.noise_dim >= 1, "noise.dim", "must be at least 1")?;
    if let NoiseKind::Atoms { count } = cfg.noise {
        check(count >= 1, "noise.atoms", "must be at least 1")?;
    }
    check(cfg.features >= 1, "model.features", "must be at least 1")?;
    check(cfg.sigma > 0.0 && cfg.sigma.is_finite(), "model.sigma", "must be positive")?;
    check(cfg.hidden.iter().all(|h| *h >= 1), "model.hidden", "sizes must be at least 1")?;
    check(cfg.loss.is_convex(), "model.loss", "must be a convex loss for training")?;
    for (key, step) in [
        ("train.dual_step", cfg.dual_step),
        ("train.generator_step", cfg.generator_step),
        ("train.primal_step", cfg.primal_step),
    ] {
        check(step > 0.0 && step.is_finite(), key, "must be positive")?;
    }
    check(cfg.log_interval >= 1, "train.log_interval", "must be at least 1")?;
    check(cfg.batch_size >= 1, "train.batch_size", "must be at least 1")?;
    Ok(())
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}
