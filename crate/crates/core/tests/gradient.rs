//! Backpropagation against central finite differences of the mean batch loss.

use aitsr_core::nn::{loss, Activation, MlpModel};
use aitsr_core::seed;
use ndarray::Array2;
use rand::Rng;

const H: f64 = 1e-5;
/// Gradient magnitudes below this count as zero in the relative error.
const FLOOR: f64 = 1e-7;

fn mean_loss(model: &MlpModel, x: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &l) in x.rows().into_iter().zip(labels) {
        total += loss(&model.forward(row.as_slice().unwrap()).unwrap(), l);
    }
    total / labels.len() as f64
}

fn param_mut(model: &mut MlpModel, mut index: usize) -> &mut f64 {
    for layer in &mut model.layers {
        let nw = layer.weights.len();
        if index < nw {
            return layer.weights.as_slice_mut().unwrap().get_mut(index).unwrap();
        }
        index -= nw;
        let nb = layer.bias.len();
        if index < nb {
            return &mut layer.bias[index];
        }
        index -= nb;
    }
    panic!("parameter index out of range");
}

fn kink_pattern(model: &MlpModel, x: &Array2<f64>) -> Vec<bool> {
    let mut signs = Vec::new();
    for row in x.rows() {
        let pre = model.preactivations(row.as_slice().unwrap());
        for (layer, z) in model.layers.iter().zip(pre) {
            if layer.activation == Activation::Relu {
                signs.extend(z.iter().map(|v| *v > 0.0));
            }
        }
    }
    signs
}

/// Max relative error over all parameters, plus the number skipped because
/// the difference stencil straddled a ReLU kink.
fn check(model: &MlpModel, x: &Array2<f64>, labels: &[usize]) -> (f64, usize) {
    let analytic = model.backward(x.view(), labels).unwrap().gradients.flatten();
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut probe = model.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *param_mut(&mut probe, i);
        *param_mut(&mut probe, i) = orig + H;
        let (plus, kp) = (mean_loss(&probe, x, labels), kink_pattern(&probe, x));
        *param_mut(&mut probe, i) = orig - H;
        let (minus, km) = (mean_loss(&probe, x, labels), kink_pattern(&probe, x));
        *param_mut(&mut probe, i) = orig;
        if kp != km {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * H);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    (worst, skipped)
}

fn run(sizes: &[usize], acts: &[Activation], tag: u64) {
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut total = 0;
    for trial in 0..100u64 {
        let model = MlpModel::init(sizes, acts, seed::derive(tag, &[trial])).unwrap();
        let mut rng = seed::rng(tag, &[trial, 1]);
        let b = rng.gen_range(1..=6);
        let x = Array2::from_shape_fn((b, sizes[0]), |_| rng.gen_range(-2.0..2.0));
        let k = sizes[sizes.len() - 1];
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
        let (w, s) = check(&model, &x, &labels);
        worst = worst.max(w);
        skipped += s;
        total += model.param_count();
    }
    println!("{sizes:?}: max relative error {worst:.3e}, {skipped}/{total} kink skips");
    assert!(worst < 1e-4, "max relative error {worst}");
    assert!(skipped * 100 < total, "too many kink skips: {skipped}/{total}");
}

#[test]
fn relu_16_32_16() {
    use Activation::*;
    run(&[27, 16, 32, 16, 2], &[Relu, Relu, Relu, Softmax], 0x5eed_0001);
}

#[test]
fn tanh_10_20_4() {
    use Activation::*;
    run(&[15, 10, 20, 4], &[Tanh, Tanh, Softmax], 0x5eed_0002);
}

#[test]
fn duplicated_batch_has_same_gradient() {
    use Activation::*;
    let model = MlpModel::init(&[5, 7, 3], &[Tanh, Softmax], 9).unwrap();
    let mut rng = seed::rng(9, &[]);
    let x = Array2::from_shape_fn((4, 5), |_| rng.gen_range(-1.0..1.0));
    let labels = [0, 2, 1, 2];
    let mut doubled = Array2::zeros((8, 5));
    doubled.slice_mut(ndarray::s![..4, ..]).assign(&x);
    doubled.slice_mut(ndarray::s![4.., ..]).assign(&x);
    let once = model.backward(x.view(), &labels).unwrap().gradients.flatten();
    let twice = model
        .backward(doubled.view(), &[labels, labels].concat())
        .unwrap()
        .gradients
        .flatten();
    for (a, b) in once.iter().zip(&twice) {
        assert!((a - b).abs() <= 1e-15 * (1.0 + a.abs()));
    }
}
