//! Dense feed-forward classifier with softmax output and categorical
//! cross-entropy loss, trained by backpropagation.

mod io;
mod train;

pub use io::{load_model, save_model, MODEL_VERSION};
pub use train::{
    lr_at, train, Budget, EarlyStopper, EarlyStopping, Optimizer, StopReason, TraceEntry,
    TrainConfig, TrainTrace,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use thiserror::Error;

use crate::features::{Dataset, ScalingStats};
use crate::seed;
use crate::tsr::FeatureImage;
use crate::LabelMap;

/// Probabilities below this are floored before taking the log.
pub const PROB_FLOOR: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input has {found} features, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("model contains non-finite parameters")]
    NonFinite,
    #[error("non-finite loss at step {step}: training diverged")]
    Diverged { step: u64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("model file version {found:?} is not supported (expected {expected})")]
    Version { found: String, expected: u32 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Softmax,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "softmax" => Some(Activation::Softmax),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
            }
        }
    }
}

/// Fully connected layer: `out = act(x W + b)`, `W` is `n_in x n_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn n_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// Gradients (or optimizer moments) shaped like a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }

    /// Flattened in layer order, weights (row-major) before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
    /// Feature scaling baked in at training time, applied by the `*_unscaled` helpers.
    pub scaling: Option<ScalingStats>,
}

/// Result of a batched forward/backward pass.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub gradients: Gradients,
    pub loss_sum: f64,
    pub correct: usize,
}

impl MlpModel {
    fn check_architecture(sizes: &[usize], activations: &[Activation]) -> Result<(), NnError> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(NnError::Architecture(format!(
                "{} layer sizes need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(NnError::Architecture("zero-width layer".into()));
        }
        let last = activations.len() - 1;
        for (i, a) in activations.iter().enumerate() {
            if (*a == Activation::Softmax) != (i == last) {
                return Err(NnError::Architecture(
                    "softmax must be the output activation and only there".into(),
                ));
            }
        }
        if sizes[sizes.len() - 1] < 2 {
            return Err(NnError::Architecture("need at least two output classes".into()));
        }
        Ok(())
    }

    /// All-zero parameters.
    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self, NnError> {
        Self::check_architecture(sizes, activations)?;
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
                activation,
            })
            .collect();
        Ok(Self {
            layers,
            scaling: None,
        })
    }

    /// Weights uniform in `±sqrt(6 / (n_in + n_out))`, biases zero.
    pub fn init(sizes: &[usize], activations: &[Activation], seed_value: u64) -> Result<Self, NnError> {
        let mut model = Self::zeros(sizes, activations)?;
        for (i, layer) in model.layers.iter_mut().enumerate() {
            let limit = (6.0 / (layer.n_in() + layer.n_out()) as f64).sqrt();
            let mut rng = seed::rng(seed_value, &[i as u64]);
            layer
                .weights
                .mapv_inplace(|_| rng.gen_range(-limit..=limit));
        }
        Ok(model)
    }

    pub fn from_layers(layers: Vec<Dense>, scaling: Option<ScalingStats>) -> Result<Self, NnError> {
        let mut sizes = vec![layers.first().map_or(0, Dense::n_in)];
        for (i, l) in layers.iter().enumerate() {
            if l.n_in() != sizes[i] || l.bias.len() != l.n_out() {
                return Err(NnError::Architecture(format!("layer {i} dimensions do not chain")));
            }
            sizes.push(l.n_out());
        }
        let acts: Vec<Activation> = layers.iter().map(|l| l.activation).collect();
        Self::check_architecture(&sizes, &acts)?;
        if let Some(s) = &scaling {
            if s.n_features() != sizes[0] {
                return Err(NnError::Architecture("scaling stats width".into()));
            }
        }
        Ok(Self { layers, scaling })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].n_in()];
        sizes.extend(self.layers.iter().map(Dense::n_out));
        sizes
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// Class probabilities for one (already scaled) feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.n_inputs() {
            return Err(NnError::Dimension {
                expected: self.n_inputs(),
                found: x.len(),
            });
        }
        if !self.is_finite() {
            return Err(NnError::NonFinite);
        }
        let input = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward_batch(input).into_raw_vec())
    }

    /// Probabilities for a `B x F` batch. Dimensions are the caller's responsibility.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            layer.activation.apply(&mut z);
            a = z;
        }
        a
    }

    /// Pre-activations of every layer for one input.
    pub fn preactivations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut a = ArrayView2::from_shape((1, x.len()), x).unwrap().to_owned();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            out.push(z.iter().copied().collect());
            layer.activation.apply(&mut z);
            a = z;
        }
        out
    }

    /// Mean cross-entropy gradients over a `B x F` batch.
    pub fn backward(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<BatchResult, NnError> {
        let b = x.nrows();
        if b == 0 {
            return Err(NnError::EmptyBatch);
        }
        if x.ncols() != self.n_inputs() {
            return Err(NnError::Dimension {
                expected: self.n_inputs(),
                found: x.ncols(),
            });
        }
        let k = self.n_classes();
        if let Some(&l) = labels.iter().find(|&&l| l >= k) {
            return Err(NnError::Dimension {
                expected: k,
                found: l + 1,
            });
        }

        // activations[0] = input, activations[i+1] = output of layer i
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.layers {
            let mut z = activations.last().unwrap().dot(&layer.weights);
            z += &layer.bias;
            layer.activation.apply(&mut z);
            activations.push(z);
        }
        let probs = activations.last().unwrap();

        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (row, &label) in probs.rows().into_iter().zip(labels) {
            loss_sum += -row[label].max(PROB_FLOOR).ln();
            if argmax(row.as_slice().unwrap()) == label {
                correct += 1;
            }
        }
        if !loss_sum.is_finite() {
            return Err(NnError::Diverged { step: 0 });
        }

        // softmax + cross-entropy: dL/dz = (p - y) / B
        let mut delta = probs.clone();
        for (mut row, &label) in delta.rows_mut().into_iter().zip(labels) {
            row[label] -= 1.0;
        }
        delta /= b as f64;

        let n = self.layers.len();
        let mut grads = Gradients {
            weights: Vec::with_capacity(n),
            biases: Vec::with_capacity(n),
        };
        for i in (0..n).rev() {
            let input = &activations[i];
            grads.weights.push(input.t().dot(&delta));
            grads.biases.push(delta.sum_axis(Axis(0)));
            if i > 0 {
                let mut upstream = delta.dot(&self.layers[i].weights.t());
                match self.layers[i - 1].activation {
                    Activation::Tanh => upstream.zip_mut_with(input, |d, &a| *d *= 1.0 - a * a),
                    Activation::Relu => upstream.zip_mut_with(input, |d, &a| {
                        if a <= 0.0 {
                            *d = 0.0
                        }
                    }),
                    Activation::Softmax => unreachable!("softmax only at the output"),
                }
                delta = upstream;
            }
        }
        grads.weights.reverse();
        grads.biases.reverse();
        if grads
            .weights
            .iter()
            .any(|w| w.iter().any(|v| !v.is_finite()))
        {
            return Err(NnError::NonFinite);
        }
        Ok(BatchResult {
            gradients: grads,
            loss_sum,
            correct,
        })
    }

    /// Applies the embedded scaling (if any) and classifies one raw vector.
    pub fn classify_unscaled(&self, raw: &[f64]) -> Result<usize, NnError> {
        let mut x = raw.to_vec();
        if let Some(s) = &self.scaling {
            s.scale_in_place(&mut x);
        }
        Ok(argmax(&self.forward(&x)?))
    }

    /// Loss and accuracy over a dataset whose rows are already scaled.
    pub fn evaluate(&self, ds: &Dataset) -> Result<(f64, f64), NnError> {
        if ds.n_features != self.n_inputs() {
            return Err(NnError::Dimension {
                expected: self.n_inputs(),
                found: ds.n_features,
            });
        }
        let preds = self.predict_scaled(ds)?;
        let mut loss = 0.0;
        let mut correct = 0;
        for (i, p) in preds.rows().into_iter().enumerate() {
            let l = ds.labels[i];
            loss += -p[l].max(PROB_FLOOR).ln();
            if argmax(p.as_slice().unwrap()) == l {
                correct += 1;
            }
        }
        let n = ds.len().max(1) as f64;
        Ok((loss / n, correct as f64 / n))
    }

    /// Probabilities for every row of an already-scaled dataset.
    pub fn predict_scaled(&self, ds: &Dataset) -> Result<Array2<f64>, NnError> {
        if !self.is_finite() {
            return Err(NnError::NonFinite);
        }
        let x = ArrayView2::from_shape((ds.len(), ds.n_features), &ds.vectors)
            .map_err(|e| NnError::Architecture(e.to_string()))?;
        let mut out = Array2::zeros((ds.len(), self.n_classes()));
        for (start, chunk) in x.axis_chunks_iter(Axis(0), 4096).enumerate() {
            let p = self.forward_batch(chunk);
            let s = start * 4096;
            out.slice_mut(ndarray::s![s..s + p.nrows(), ..]).assign(&p);
        }
        Ok(out)
    }

    /// Argmax classes for an already-scaled dataset.
    pub fn predict_classes(&self, ds: &Dataset) -> Result<Vec<usize>, NnError> {
        let p = self.predict_scaled(ds)?;
        Ok(p.rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().unwrap()))
            .collect())
    }
}

/// First index of the maximum; ties go to the lowest class.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// `-ln p_true` with `p` floored at [`PROB_FLOOR`].
pub fn loss(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// Per-pixel argmax over a feature image. Raw features are scaled with the
/// model's embedded statistics when the image is marked scaling-pending.
pub fn predict_map(model: &MlpModel, features: &FeatureImage) -> Result<LabelMap, NnError> {
    if features.n_features != model.n_inputs() {
        return Err(NnError::Dimension {
            expected: model.n_inputs(),
            found: features.n_features,
        });
    }
    if !model.is_finite() {
        return Err(NnError::NonFinite);
    }
    let f = features.n_features;
    let valid_idx: Vec<usize> = (0..features.pixel_count())
        .filter(|&p| features.valid[p])
        .collect();
    let mut labels = vec![None; features.pixel_count()];
    for chunk in valid_idx.chunks(4096) {
        let mut x = Vec::with_capacity(chunk.len() * f);
        for &p in chunk {
            let start = x.len();
            x.extend_from_slice(&features.values[p * f..(p + 1) * f]);
            if features.scaling_pending {
                if let Some(s) = &model.scaling {
                    s.scale_in_place(&mut x[start..]);
                }
            }
        }
        let view = ArrayView2::from_shape((chunk.len(), f), &x).unwrap();
        let probs = model.forward_batch(view);
        for (&p, row) in chunk.iter().zip(probs.rows()) {
            labels[p] = Some(argmax(row.as_slice().unwrap()) as u8);
        }
    }
    Ok(LabelMap {
        width: features.width,
        height: features.height,
        labels,
    })
}
