//! Versioned text checkpoint.
//!
//! ```text
//! IDMNE1
//! seed 42
//! config_hash 9f86d081884c7d65
//! activation relu
//! temperature 0.05
//! tensor layer0.weight 2 8 64
//! <row-major values, space separated, one line>
//! ...
//! tensor prototypes 2 64 5
//! <values>
//! state 1250 50                  (optional: iteration, epoch)
//! rng <stream> <word position>   (zero or more)
//! tensor momentum.0 2 8 64       (one per trainable tensor)
//! <values>
//! end
//! ```
//!
//! Values are written in shortest round-trip form, so reading back yields
//! bit-identical parameters.

use std::fmt::Write as _;
use std::path::Path;

use super::{Activation, Layer, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &str = "IDMNE1";

/// Optimizer and sampling state needed to resume training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerSnapshot<S: Real = f64> {
    pub iteration: u64,
    pub epoch: usize,
    pub momentum: Vec<Tensor<S>>,
    pub rng_positions: Vec<(String, u128)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S: Real = f64> {
    pub params: ModelParams<S>,
    pub seed: u64,
    pub config_hash: String,
    pub state: Option<TrainerSnapshot<S>>,
}

fn write_tensor<S: Real>(out: &mut String, name: &str, t: &Tensor<S>) {
    let _ = write!(out, "tensor {name} {}", t.rank());
    for d in t.shape() {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    let mut first = true;
    for v in t.data() {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{:?}", v.as_f64());
    }
    out.push('\n');
}

impl<S: Real> Checkpoint<S> {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "config_hash {}", self.config_hash);
        let _ = writeln!(out, "activation {}", self.params.activation.name());
        let _ = writeln!(out, "temperature {:?}", self.params.temperature.as_f64());
        for (name, t) in self
            .params
            .tensor_names()
            .iter()
            .zip(self.params.tensors())
        {
            write_tensor(&mut out, name, t);
        }
        if let Some(state) = &self.state {
            let _ = writeln!(out, "state {} {}", state.iteration, state.epoch);
            for (name, pos) in &state.rng_positions {
                let _ = writeln!(out, "rng {name} {pos}");
            }
            for (i, m) in state.momentum.iter().enumerate() {
                write_tensor(&mut out, &format!("momentum.{i}"), m);
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let bad = |line: usize, msg: &str| Error::Checkpoint(format!("line {line}: {msg}"));

        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((_, other)) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported format header `{other}`, expected `{MAGIC}`"
                )))
            }
            None => return Err(Error::Checkpoint("empty file".into())),
        }

        let mut field = |key: &str| -> Result<(usize, String)> {
            let (n, l) = lines
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?;
            let rest = l
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| bad(n, &format!("expected `{key}`")))?;
            Ok((n, rest.to_string()))
        };
        let (n, seed) = field("seed")?;
        let seed = seed.parse().map_err(|_| bad(n, "bad seed"))?;
        let (_, config_hash) = field("config_hash")?;
        let (_, act) = field("activation")?;
        let activation = Activation::parse(&act).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let (n, temp) = field("temperature")?;
        let temperature: f64 = temp.parse().map_err(|_| bad(n, "bad temperature"))?;

        let mut tensors: Vec<(String, Tensor<S>)> = Vec::new();
        let mut state_header: Option<(u64, usize)> = None;
        let mut rng_positions = Vec::new();
        let mut ended = false;
        while let Some((n, line)) = lines.next() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("tensor") => {
                    let name = parts.next().ok_or_else(|| bad(n, "tensor name"))?.to_string();
                    let rank: usize = parts
                        .next()
                        .and_then(|r| r.parse().ok())
                        .ok_or_else(|| bad(n, "tensor rank"))?;
                    let shape: Vec<usize> = parts
                        .map(|d| d.parse().map_err(|_| bad(n, "tensor dim")))
                        .collect::<Result<_>>()?;
                    if shape.len() != rank {
                        return Err(bad(n, "rank does not match dims"));
                    }
                    let (vn, values) = lines.next().ok_or_else(|| bad(n, "missing values"))?;
                    let data: Vec<S> = values
                        .split_whitespace()
                        .map(|v| {
                            v.parse::<f64>()
                                .map(S::cast)
                                .map_err(|_| bad(vn, &format!("bad value `{v}`")))
                        })
                        .collect::<Result<_>>()?;
                    let t = Tensor::new(shape, data).map_err(|e| bad(vn, &e.to_string()))?;
                    tensors.push((name, t));
                }
                Some("state") => {
                    let it = parts.next().and_then(|v| v.parse().ok());
                    let ep = parts.next().and_then(|v| v.parse().ok());
                    match (it, ep) {
                        (Some(it), Some(ep)) => state_header = Some((it, ep)),
                        _ => return Err(bad(n, "bad state line")),
                    }
                }
                Some("rng") => {
                    let name = parts.next().ok_or_else(|| bad(n, "rng name"))?;
                    let pos = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(n, "rng position"))?;
                    rng_positions.push((name.to_string(), pos));
                }
                Some("end") => {
                    ended = true;
                    break;
                }
                _ => return Err(bad(n, &format!("unexpected line `{line}`"))),
            }
        }
        if !ended {
            return Err(Error::Checkpoint("truncated file (no `end`)".into()));
        }

        fn take<S: Real>(tensors: &mut Vec<(String, Tensor<S>)>, name: &str) -> Result<Tensor<S>> {
            let idx = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            Ok(tensors.remove(idx).1)
        }
        let mut layers = Vec::new();
        let mut i = 0;
        loop {
            let wname = format!("layer{i}.weight");
            if !tensors.iter().any(|(n, _)| *n == wname) {
                break;
            }
            layers.push(Layer {
                weight: take(&mut tensors, &wname)?,
                bias: take(&mut tensors, &format!("layer{i}.bias"))?,
            });
            i += 1;
        }
        let prototypes = take(&mut tensors, "prototypes")?;
        let params = ModelParams {
            layers,
            activation,
            prototypes,
            temperature: S::cast(temperature),
        };
        params
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;

        let state = match state_header {
            Some((iteration, epoch)) => {
                let count = params.tensors().len();
                let momentum = (0..count)
                    .map(|i| take(&mut tensors, &format!("momentum.{i}")))
                    .collect::<Result<Vec<_>>>()?;
                for (m, p) in momentum.iter().zip(params.tensors()) {
                    if m.shape() != p.shape() {
                        return Err(Error::Checkpoint("momentum shape mismatch".into()));
                    }
                }
                Some(TrainerSnapshot {
                    iteration,
                    epoch,
                    momentum,
                    rng_positions,
                })
            }
            None => None,
        };
        if let Some((name, _)) = tensors.first() {
            return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
        }
        Ok(Checkpoint {
            params,
            seed,
            config_hash,
            state,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelSpec};

    fn sample() -> Checkpoint {
        let params = init_params(&ModelSpec::new(3, vec![4], 5, 3), 9).unwrap();
        let momentum = params.tensors().iter().map(|t| t.map(|v| v * 0.5)).collect();
        Checkpoint {
            params,
            seed: 9,
            config_hash: "abc123".into(),
            state: Some(TrainerSnapshot {
                iteration: 77,
                epoch: 3,
                momentum,
                rng_positions: vec![("mixup".into(), 12345678901234567890u128)],
            }),
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::<f64>::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn wrong_version_rejected() {
        let text = sample().to_text().replacen(MAGIC, "IDMNE0", 1);
        let err = Checkpoint::<f64>::parse(&text).unwrap_err();
        assert!(err.to_string().contains("IDMNE0"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn truncated_rejected() {
        let text = sample().to_text();
        let cut = &text[..text.len() / 2];
        assert!(Checkpoint::<f64>::parse(cut).is_err());
    }

    #[test]
    fn corrupt_value_rejected() {
        let text = sample().to_text();
        let lines: Vec<&str> = text.lines().collect();
        let mut bad = lines.clone();
        let broken = lines[6].replacen(' ', " x", 1);
        bad[6] = &broken;
        assert!(Checkpoint::<f64>::parse(&bad.join("\n")).is_err());
    }
}
