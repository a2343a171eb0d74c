//! Plain-text checkpoints.
//!
//! ```text
//! KGANCKPT1
//! sizes <n0> <n1> ... <nL>
//! layer <index> <inputs> <outputs>
//! w <inputs*outputs values, row-major>
//! b <outputs values>
//! ...one layer block per layer...
//! [dual]            optional section
//! u <N> <values>
//! v <M> <values>
//! end
//! ```
//!
//! Tokens are separated by single spaces and numbers use Rust's shortest
//! round-trip float formatting, so a load after a save is exact.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::generator::{GeneratorParams, Layer};

pub const MAGIC: &str = "KGANCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub generator: GeneratorParams,
    /// `(u, v)` when saved from the dual trainer.
    pub dual: Option<(Vec<f64>, Vec<f64>)>,
}

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").expect("writing to a string");
    }
    s
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let g = &self.generator;
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        let sizes: Vec<String> = g.sizes().iter().map(usize::to_string).collect();
        writeln!(out, "sizes {}", sizes.join(" ")).unwrap();
        for (i, l) in g.layers().iter().enumerate() {
            writeln!(out, "layer {i} {} {}", l.inputs, l.outputs).unwrap();
            writeln!(out, "w {}", join(&l.weights)).unwrap();
            writeln!(out, "b {}", join(&l.bias)).unwrap();
        }
        if let Some((u, v)) = &self.dual {
            out.push_str("[dual]\n");
            writeln!(out, "u {} {}", u.len(), join(u)).unwrap();
            writeln!(out, "v {} {}", v.len(), join(v)).unwrap();
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let bad = |line: usize, message: String| Error::ConfigLine { line, message };

        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((n, other)) => return Err(bad(n, format!("expected {MAGIC}, found `{other}`"))),
            None => return Err(bad(1, "empty checkpoint".into())),
        }
        let (n, sizes_line) = lines.next().ok_or_else(|| bad(2, "missing sizes".into()))?;
        let sizes = parse_tagged::<usize>(sizes_line, "sizes").map_err(|m| bad(n, m))?;
        if sizes.len() < 2 {
            return Err(bad(n, "need at least two layer sizes".into()));
        }

        let mut layers = Vec::new();
        for (idx, pair) in sizes.windows(2).enumerate() {
            let (n, header) = lines.next().ok_or_else(|| bad(0, format!("missing layer {idx}")))?;
            let h = parse_tagged::<usize>(header, "layer").map_err(|m| bad(n, m))?;
            if h != [idx, pair[0], pair[1]] {
                return Err(bad(n, format!("layer header {h:?} does not match sizes")));
            }
            let (n, wl) = lines.next().ok_or_else(|| bad(0, "missing weights".into()))?;
            let weights = parse_tagged::<f64>(wl, "w").map_err(|m| bad(n, m))?;
            let (n2, bl) = lines.next().ok_or_else(|| bad(0, "missing bias".into()))?;
            let bias = parse_tagged::<f64>(bl, "b").map_err(|m| bad(n2, m))?;
            if weights.len() != pair[0] * pair[1] || bias.len() != pair[1] {
                return Err(bad(n, format!("layer {idx} has the wrong number of values")));
            }
            layers.push(Layer {
                inputs: pair[0],
                outputs: pair[1],
                weights,
                bias,
            });
        }
        let generator = GeneratorParams::from_layers(layers)?;

        let mut dual = None;
        let (n, next) = lines.next().ok_or_else(|| bad(0, "missing end marker".into()))?;
        let end_line = if next == "[dual]" {
            let (nu, ul) = lines.next().ok_or_else(|| bad(n, "missing u".into()))?;
            let u = parse_counted(ul, "u").map_err(|m| bad(nu, m))?;
            let (nv, vl) = lines.next().ok_or_else(|| bad(n, "missing v".into()))?;
            let v = parse_counted(vl, "v").map_err(|m| bad(nv, m))?;
            dual = Some((u, v));
            lines.next().ok_or_else(|| bad(nv, "missing end marker".into()))?
        } else {
            (n, next)
        };
        if end_line.1 != "end" {
            return Err(bad(end_line.0, format!("expected `end`, found `{}`", end_line.1)));
        }
        Ok(Self { generator, dual })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_tagged<T: std::str::FromStr>(line: &str, tag: &str) -> std::result::Result<Vec<T>, String> {
    let mut parts = line.split(' ');
    if parts.next() != Some(tag) {
        return Err(format!("expected a `{tag}` line"));
    }
    parts
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|_| format!("cannot parse `{p}`")))
        .collect()
}

fn parse_counted(line: &str, tag: &str) -> std::result::Result<Vec<f64>, String> {
    let values = parse_tagged::<f64>(line, tag)?;
    let (count, rest) = values.split_first().ok_or_else(|| format!("`{tag}` line has no count"))?;
    if *count as usize != rest.len() || count.fract() != 0.0 {
        return Err(format!("`{tag}` declares {count} values but has {}", rest.len()));
    }
    Ok(rest.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_and_layout() {
        let g = GeneratorParams::zeros(&[2, 1]).unwrap();
        let text = Checkpoint { generator: g, dual: None }.to_text();
        assert_eq!(text, "KGANCKPT1\nsizes 2 1\nlayer 0 2 1\nw 0 0\nb 0\nend\n");
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Checkpoint::from_text("KGANCKPT0\n").is_err());
        assert!(Checkpoint::from_text("KGANCKPT1\nsizes 2 1\nlayer 0 2 1\nw 0 0\n").is_err());
        assert!(Checkpoint::from_text("KGANCKPT1\nsizes 2 1\nlayer 0 2 1\nw 0\nb 0\nend\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(seed in 0u64..10_000, hidden in 1usize..6, with_dual in any::<bool>(), n in 1usize..5) {
            let g = GeneratorParams::init(&[2, hidden, 1], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let dual = with_dual.then(|| ((0..n).map(|i| -1.0 / (i as f64 + 3.0)).collect(), vec![-0.1 * seed as f64]));
            let ck = Checkpoint { generator: g, dual };
            let back = Checkpoint::from_text(&ck.to_text()).unwrap();
            prop_assert_eq!(back.generator.to_flat(), ck.generator.to_flat());
            prop_assert_eq!(back.generator.sizes(), ck.generator.sizes());
            prop_assert_eq!(back.dual, ck.dual);
        }
    }
}
