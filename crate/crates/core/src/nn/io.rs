//! Plain-text model files.
//!
//! ```text
//! mlp-model v1
//! layers 15 10 20 4
//! activations tanh tanh softmax
//! scaling mean <F values>
//! scaling std <F values>
//! layer 0 15 10
//! w <n_out values>        (one line per input)
//! b <n_out values>
//! ...
//! end
//! ```
//!
//! The `scaling` lines are omitted when no statistics are embedded. Floats are
//! written in shortest round-trip form, so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Dense, MlpModel, NnError};
use crate::features::ScalingStats;

pub const MODEL_VERSION: u32 = 1;
const MAGIC: &str = "mlp-model";

fn join(values: impl Iterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:e}");
    }
    s
}

pub fn model_to_string(model: &MlpModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} v{MODEL_VERSION}");
    let sizes: Vec<String> = model.layer_sizes().iter().map(|v| v.to_string()).collect();
    let _ = writeln!(s, "layers {}", sizes.join(" "));
    let acts: Vec<&str> = model.activations().iter().map(|a| a.as_str()).collect();
    let _ = writeln!(s, "activations {}", acts.join(" "));
    if let Some(stats) = &model.scaling {
        let _ = writeln!(s, "scaling mean {}", join(stats.mean.iter().copied()));
        let _ = writeln!(s, "scaling std {}", join(stats.std.iter().copied()));
    }
    for (i, layer) in model.layers.iter().enumerate() {
        let _ = writeln!(s, "layer {i} {} {}", layer.n_in(), layer.n_out());
        for row in layer.weights.rows() {
            let _ = writeln!(s, "w {}", join(row.iter().copied()));
        }
        let _ = writeln!(s, "b {}", join(layer.bias.iter().copied()));
    }
    s.push_str("end\n");
    s
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<(), NnError> {
    std::fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel, NnError> {
    model_from_str(&std::fs::read_to_string(path)?)
}

fn corrupt(msg: impl Into<String>) -> NnError {
    NnError::Corrupt(msg.into())
}

fn parse_floats(rest: &str, expected: usize, what: &str) -> Result<Vec<f64>, NnError> {
    let values = rest
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| corrupt(format!("bad number in {what}")))?;
    if values.len() != expected {
        return Err(corrupt(format!(
            "{what}: {} values, expected {expected}",
            values.len()
        )));
    }
    Ok(values)
}

pub fn model_from_str(text: &str) -> Result<MlpModel, NnError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| corrupt(format!("truncated before {what}")));

    let header = next("header")?;
    let version = header
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| corrupt("not a model file"))?;
    if version != format!("v{MODEL_VERSION}") {
        return Err(NnError::Version {
            found: version.to_string(),
            expected: MODEL_VERSION,
        });
    }

    let sizes: Vec<usize> = next("layers")?
        .strip_prefix("layers ")
        .ok_or_else(|| corrupt("missing layers line"))?
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<Result<_, _>>()
        .map_err(|_| corrupt("bad layer size"))?;
    if sizes.len() < 2 {
        return Err(corrupt("need at least two layer sizes"));
    }
    let activations: Vec<Activation> = next("activations")?
        .strip_prefix("activations ")
        .ok_or_else(|| corrupt("missing activations line"))?
        .split_whitespace()
        .map(|t| Activation::parse(t).ok_or_else(|| corrupt(format!("unknown activation {t}"))))
        .collect::<Result<_, _>>()?;
    if activations.len() != sizes.len() - 1 {
        return Err(corrupt("activation count does not match layers"));
    }

    let mut line = next("layer 0")?;
    let mut scaling = None;
    if let Some(rest) = line.strip_prefix("scaling mean ") {
        let mean = parse_floats(rest, sizes[0], "scaling mean")?;
        let std_line = next("scaling std")?;
        let std = parse_floats(
            std_line
                .strip_prefix("scaling std ")
                .ok_or_else(|| corrupt("missing scaling std"))?,
            sizes[0],
            "scaling std",
        )?;
        scaling = Some(ScalingStats { mean, std });
        line = next("layer 0")?;
    }

    let mut layers = Vec::with_capacity(activations.len());
    for (i, &activation) in activations.iter().enumerate() {
        let (n_in, n_out) = (sizes[i], sizes[i + 1]);
        if line != format!("layer {i} {n_in} {n_out}") {
            return Err(corrupt(format!("expected layer {i} header, found {line:?}")));
        }
        let mut weights = Array2::zeros((n_in, n_out));
        for r in 0..n_in {
            let l = next("weights")?;
            let rest = l.strip_prefix("w ").ok_or_else(|| corrupt("expected weight row"))?;
            let row = parse_floats(rest, n_out, "weight row")?;
            weights.row_mut(r).assign(&Array1::from(row));
        }
        let l = next("bias")?;
        let rest = l.strip_prefix("b ").ok_or_else(|| corrupt("expected bias row"))?;
        let bias = Array1::from(parse_floats(rest, n_out, "bias")?);
        layers.push(Dense {
            weights,
            bias,
            activation,
        });
        line = next(if i + 1 < activations.len() { "next layer" } else { "end" })?;
    }
    if line != "end" {
        return Err(corrupt("missing end marker"));
    }
    MlpModel::from_layers(layers, scaling).map_err(|e| corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation::*;

    fn model() -> MlpModel {
        let mut m = MlpModel::init(&[3, 4, 2], &[Tanh, Softmax], 11).unwrap();
        m.layers[0].bias[1] = 1.0 / 3.0;
        m.scaling = Some(ScalingStats {
            mean: vec![0.1, 0.2, -1e-300],
            std: vec![1.0, 0.0, 2.5],
        });
        m
    }

    #[test]
    fn bit_exact_round_trip() {
        let m = model();
        let back = model_from_str(&model_to_string(&m)).unwrap();
        assert_eq!(back, m);
        let x = [0.3, -0.7, 1.1];
        assert_eq!(back.forward(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn future_version_rejected() {
        let text = model_to_string(&model()).replacen("mlp-model v1", "mlp-model v2", 1);
        assert!(matches!(model_from_str(&text), Err(NnError::Version { .. })));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let text = model_to_string(&model());
        for cut in [20, text.len() / 2, text.len() - 5] {
            assert!(
                matches!(model_from_str(&text[..cut]), Err(NnError::Corrupt(_))),
                "cut at {cut}"
            );
        }
    }
}
