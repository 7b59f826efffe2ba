//! Self-checks recorded alongside every reproduction run: TSR exactness,
//! backpropagation against finite differences, and the schedule and
//! early-stopping rules.

use aitsr_core::ingest::timestamps_from_fps;
use aitsr_core::nn::{loss, lr_at, Activation, Budget, EarlyStopper, MlpModel, Optimizer, TrainConfig};
use aitsr_core::seed;
use aitsr_core::tsr::{derivatives, fit_pixel, LogBase};
use anyhow::{ensure, Result};
use ndarray::Array2;
use rand::Rng;
use serde_json::{json, Value};

/// Finite-difference step.
const H: f64 = 1e-5;
/// Gradient magnitudes below this count as zero in the relative error.
const FLOOR: f64 = 1e-7;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const TSR_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub max_relative_error: f64,
    /// parameters whose stencil straddled a ReLU kink
    pub skipped: usize,
    pub parameters: usize,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADIENT_TOLERANCE && self.skipped * 100 < self.parameters
    }
}

fn mean_loss(model: &MlpModel, x: &Array2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = x
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &l)| loss(&model.forward(row.as_slice().expect("standard layout")).expect("width"), l))
        .sum();
    total / labels.len() as f64
}

fn param_mut(model: &mut MlpModel, mut index: usize) -> &mut f64 {
    for layer in &mut model.layers {
        let nw = layer.weights.len();
        if index < nw {
            return &mut layer.weights.as_slice_mut().expect("standard layout")[index];
        }
        index -= nw;
        let nb = layer.bias.len();
        if index < nb {
            return &mut layer.bias[index];
        }
        index -= nb;
    }
    unreachable!("parameter index past the last layer")
}

fn kink_pattern(model: &MlpModel, x: &Array2<f64>) -> Vec<bool> {
    let mut signs = Vec::new();
    for row in x.rows() {
        let pre = model.preactivations(row.as_slice().expect("standard layout"));
        for (layer, z) in model.layers.iter().zip(pre) {
            if layer.activation == Activation::Relu {
                signs.extend(z.iter().map(|v| *v > 0.0));
            }
        }
    }
    signs
}

/// `trials` random (model, batch) pairs compared parameter by parameter.
pub fn gradient_check(sizes: &[usize], activations: &[Activation], trials: usize, tag: u64) -> Result<GradientCheck> {
    let mut out = GradientCheck {
        sizes: sizes.to_vec(),
        trials,
        max_relative_error: 0.0,
        skipped: 0,
        parameters: 0,
    };
    let k = *sizes.last().expect("at least two sizes");
    for trial in 0..trials as u64 {
        let model = MlpModel::init(sizes, activations, seed::derive(tag, &[trial]))?;
        let mut rng = seed::rng(tag, &[trial, 1]);
        let b = rng.gen_range(1..=6);
        let x = Array2::from_shape_fn((b, sizes[0]), |_| rng.gen_range(-2.0..2.0));
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();

        let analytic = model.backward(x.view(), &labels)?.gradients.flatten();
        let mut probe = model.clone();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = *param_mut(&mut probe, i);
            *param_mut(&mut probe, i) = orig + H;
            let (plus, kp) = (mean_loss(&probe, &x, &labels), kink_pattern(&probe, &x));
            *param_mut(&mut probe, i) = orig - H;
            let (minus, km) = (mean_loss(&probe, &x, &labels), kink_pattern(&probe, &x));
            *param_mut(&mut probe, i) = orig;
            if kp != km {
                out.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * H);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            out.max_relative_error = out.max_relative_error.max(rel);
        }
        out.parameters += analytic.len();
    }
    Ok(out)
}

/// Both architectures used by the experiments.
pub fn gradient_checks(trials: usize) -> Result<Vec<GradientCheck>> {
    use Activation::*;
    Ok(vec![
        gradient_check(&[27, 16, 32, 16, 2], &[Relu, Relu, Relu, Softmax], trials, 0x5eed_0001)?,
        gradient_check(&[15, 10, 20, 4], &[Tanh, Tanh, Softmax], trials, 0x5eed_0002)?,
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsrExactness {
    pub slope_error: f64,
    pub first_derivative_error: f64,
    pub second_derivative_error: f64,
    pub polynomial_recovery_error: f64,
}

impl TsrExactness {
    pub fn passed(&self) -> bool {
        [
            self.slope_error,
            self.first_derivative_error,
            self.second_derivative_error,
            self.polynomial_recovery_error,
        ]
        .iter()
        .all(|e| *e <= TSR_TOLERANCE)
    }
}

/// Noiseless `t^-1/2` pixel plus random log-polynomials up to the fit degree.
pub fn tsr_exactness(degree: usize, polynomials: usize, tag: u64) -> Result<TsrExactness> {
    let ts = timestamps_from_fps(300, 15.0);
    let series: Vec<f64> = ts.iter().map(|t| 100.0 * t.powf(-0.5)).collect();
    let fit = fit_pixel(&series, &ts, degree, 0, LogBase::Ten)?;
    let (first, second) = derivatives(&fit)?;
    let grid: Vec<f64> = (0..=20)
        .map(|i| fit.fit_domain.0 + (fit.fit_domain.1 - fit.fit_domain.0) * i as f64 / 20.0)
        .collect();
    let max_dev = |f: &dyn Fn(f64) -> f64| grid.iter().map(|&x| f(x).abs()).fold(0.0, f64::max);
    let mut report = TsrExactness {
        slope_error: (fit.coefficients[1] + 0.5).abs(),
        first_derivative_error: max_dev(&|x| first.eval(x) + 0.5),
        second_derivative_error: max_dev(&|x| second.eval(x)),
        polynomial_recovery_error: 0.0,
    };

    let mut rng = seed::rng(tag, &[]);
    for _ in 0..polynomials {
        let d = rng.gen_range(0..=degree);
        let coeffs: Vec<f64> = (0..=d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let series: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let x = t.log10();
                10f64.powf(coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c))
            })
            .collect();
        let fit = fit_pixel(&series, &ts, degree, 0, LogBase::Ten)?;
        for (i, &c) in fit.coefficients.iter().enumerate() {
            let truth = coeffs.get(i).copied().unwrap_or(0.0);
            report.polynomial_recovery_error = report.polynomial_recovery_error.max((c - truth).abs());
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleChecks {
    pub lr_at_2500: f64,
    pub halted: bool,
    pub halt_check: usize,
    pub restored_check: Option<usize>,
}

impl ScheduleChecks {
    pub fn passed(&self) -> bool {
        (self.lr_at_2500 - 8.1e-8).abs() <= 1e-20
            && self.halted
            && self.halt_check == 3
            && self.restored_check == Some(0)
    }
}

/// Staircase value at step 2500 and the halt on losses rising three times
/// in a row at 100-step checks.
pub fn schedule_checks() -> Result<ScheduleChecks> {
    let config = TrainConfig {
        optimizer: Optimizer::SgdDecay,
        learning_rate: 1e-7,
        decay_step: 1000,
        decay_rate: 0.9,
        batch_size: 1,
        budget: Budget::Steps(10_000),
        early_stopping: None,
        check_every_epochs: 1,
        seed: 0,
    };
    ensure!(config.validate().is_ok(), "schedule config rejected");
    let lr = lr_at(&config, 2500);

    let mut stopper = EarlyStopper::<u64>::new(3);
    let mut halted = false;
    let mut halt_check = 0;
    for (i, loss) in [0.50, 0.52, 0.55, 0.58].into_iter().enumerate() {
        let step = 100 * (i as u64 + 1);
        if stopper.observe(loss, || step) {
            halted = true;
            halt_check = i;
            break;
        }
    }
    Ok(ScheduleChecks {
        lr_at_2500: lr,
        halted,
        halt_check,
        restored_check: stopper.snapshot_check(),
    })
}

pub fn gradient_json(checks: &[GradientCheck]) -> Value {
    json!({
        "tolerance": GRADIENT_TOLERANCE,
        "passed": checks.iter().all(GradientCheck::passed),
        "architectures": checks.iter().map(|c| json!({
            "sizes": c.sizes,
            "trials": c.trials,
            "max_relative_error": c.max_relative_error,
            "kink_skips": c.skipped,
            "parameters": c.parameters,
        })).collect::<Vec<_>>(),
    })
}

pub fn tsr_json(t: &TsrExactness) -> Value {
    json!({
        "tolerance": TSR_TOLERANCE,
        "passed": t.passed(),
        "slope_error": t.slope_error,
        "first_derivative_error": t.first_derivative_error,
        "second_derivative_error": t.second_derivative_error,
        "polynomial_recovery_error": t.polynomial_recovery_error,
    })
}

pub fn schedule_json(s: &ScheduleChecks) -> Value {
    json!({
        "passed": s.passed(),
        "lr_at_2500": s.lr_at_2500,
        "halted": s.halted,
        "halt_check": s.halt_check,
        "restored_check": s.restored_check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_and_stopping() {
        let s = schedule_checks().unwrap();
        assert!(s.passed(), "{s:?}");
    }

    #[test]
    fn tsr_checks_pass() {
        let t = tsr_exactness(4, 20, 1).unwrap();
        assert!(t.passed(), "{t:?}");
    }

    #[test]
    fn few_gradient_trials_pass() {
        for c in gradient_checks(3).unwrap() {
            assert!(c.passed(), "{c:?}");
        }
    }
}
