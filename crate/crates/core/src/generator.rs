//! Small feedforward generator with hand-written forward and backward passes.
//!
//! Hidden layers use `tanh`, the output layer is affine. Weights are stored
//! row-major as `outputs x inputs`.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Default hidden widths for experiments.
pub const DEFAULT_HIDDEN: [usize; 2] = [16, 16];

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
            .collect()
    }
}

/// Generator weights. `version` changes on every mutation so that stale
/// tapes can be detected.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    layers: Vec<Layer>,
    version: u64,
}

/// Activations recorded by [`GeneratorParams::forward`]: the input followed by
/// the output of every layer.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    activations: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("tape holds at least the input")
    }
}

/// Gradients of `g · G(z)` with respect to every parameter and to `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &GeneratorParams) -> Self {
        Self {
            weights: params.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            input: vec![0.0; params.noise_dim()],
        }
    }

    /// Parameter gradients flattened in the order of [`GeneratorParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.input.iter_mut().zip(&other.input).for_each(|(x, y)| *x += y);
    }
}

impl GeneratorParams {
    /// Glorot-uniform weights and zero biases for the layer `sizes`
    /// (noise dimension first, output dimension last).
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(sizes)?;
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(params)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "layer sizes {sizes:?} need at least two positive entries"
            )));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            version: 0,
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("a generator needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::InvalidInput(format!("layer {i} has inconsistent shapes")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("layer {i} has non-finite parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::InvalidInput(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn noise_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| {
                *p = it.next().expect("length checked");
            });
        }
        self.version += 1;
        Ok(())
    }

    /// `params += step * grads`.
    pub fn apply(&mut self, step: f64, grads: &Gradients) {
        for ((l, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            l.weights.iter_mut().zip(gw).for_each(|(p, g)| *p += step * g);
            l.bias.iter_mut().zip(gb).for_each(|(p, g)| *p += step * g);
        }
        self.version += 1;
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.noise_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.noise_dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(z)?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(z.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut a = layer.affine(activations.last().expect("nonempty"));
            if i != last {
                a.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(a);
        }
        let out = activations.last().expect("nonempty").clone();
        Ok((
            out,
            Tape {
                version: self.version,
                activations,
            },
        ))
    }

    /// Forward pass without keeping a tape.
    pub fn output(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(z)?.0)
    }

    pub fn backward(&self, tape: &Tape, output_gradient: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_add(tape, output_gradient, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradients of `output_gradient · G(z)` into `grads`.
    pub fn backward_add(&self, tape: &Tape, output_gradient: &[f64], grads: &mut Gradients) -> Result<()> {
        if tape.version != self.version || tape.activations.len() != self.layers.len() + 1 {
            return Err(Error::InvalidState(
                "tape was recorded with different generator parameters".into(),
            ));
        }
        if output_gradient.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: output_gradient.len(),
            });
        }
        let last = self.layers.len() - 1;
        // gradient with respect to the current layer's output (post-activation)
        let mut upstream = output_gradient.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let out = &tape.activations[i + 1];
            let input = &tape.activations[i];
            if i != last {
                upstream.iter_mut().zip(out).for_each(|(g, a)| *g *= 1.0 - a * a);
            }
            let delta = upstream;
            for (r, d) in delta.iter().enumerate() {
                let row = &mut grads.weights[i][r * layer.inputs..(r + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(gw, x)| *gw += d * x);
            }
            grads.biases[i].iter_mut().zip(&delta).for_each(|(gb, d)| *gb += d);
            let mut down = vec![0.0; layer.inputs];
            for (r, d) in delta.iter().enumerate() {
                let row = &layer.weights[r * layer.inputs..(r + 1) * layer.inputs];
                down.iter_mut().zip(row).for_each(|(g, w)| *g += d * w);
            }
            upstream = down;
        }
        grads.input.iter_mut().zip(&upstream).for_each(|(g, u)| *g += u);
        Ok(())
    }
}

/// Noise distribution fed to the generator.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    Gaussian { dim: usize },
    Atoms { atoms: Vec<Vec<f64>>, probs: Vec<f64> },
}

impl NoiseSource {
    pub fn gaussian(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("noise dimension must be positive".into()));
        }
        Ok(NoiseSource::Gaussian { dim })
    }

    pub fn atoms(atoms: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(Error::InvalidInput(format!(
                "{} atoms with {} probabilities",
                atoms.len(),
                probs.len()
            )));
        }
        let dim = atoms[0].len();
        if dim == 0 || atoms.iter().any(|a| a.len() != dim) {
            return Err(Error::InvalidInput("atoms must share a positive dimension".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("atom probabilities must be nonnegative and sum to 1".into()));
        }
        Ok(NoiseSource::Atoms { atoms, probs })
    }

    /// `m` atoms drawn once from a standard normal, equally weighted.
    pub fn random_atoms<R: Rng + ?Sized>(dim: usize, m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("need at least one atom".into()));
        }
        let atoms = (0..m)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Self::atoms(atoms, vec![1.0 / m as f64; m])
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseSource::Gaussian { dim } => *dim,
            NoiseSource::Atoms { atoms, .. } => atoms[0].len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, NoiseSource::Atoms { .. })
    }

    /// Gaussian: `n` i.i.d. standard normal vectors. Atoms: the full atom
    /// list when `n` equals the atom count, otherwise `n` draws by probability.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::InvalidInput("noise draw count must be at least 1".into()));
        }
        Ok(match self {
            NoiseSource::Gaussian { dim } => (0..n)
                .map(|_| (0..*dim).map(|_| rng.sample(StandardNormal)).collect())
                .collect(),
            NoiseSource::Atoms { atoms, probs } => {
                if n == atoms.len() {
                    atoms.clone()
                } else {
                    let pick = WeightedIndex::new(probs)
                        .map_err(|e| Error::InvalidInput(format!("atom probabilities: {e}")))?;
                    (0..n).map(|_| atoms[pick.sample(rng)].clone()).collect()
                }
            }
        })
    }
}
