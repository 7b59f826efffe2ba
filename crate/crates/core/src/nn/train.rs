//! Mini-batch training: SGD with staircase decay or Adam, periodic validation
//! checks and early stopping with snapshot restore.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;

use super::{Gradients, MlpModel, NnError};
use crate::features::Dataset;
use crate::seed;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    SgdDecay,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Steps(u64),
    Epochs(u64),
}

/// Stop after `consecutive_increases` successive validation-loss increases,
/// checked every `checks_apart` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStopping {
    pub checks_apart: u64,
    pub consecutive_increases: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub decay_step: u64,
    pub decay_rate: f64,
    pub batch_size: usize,
    pub budget: Budget,
    pub early_stopping: Option<EarlyStopping>,
    /// Without early stopping, validate every this many epochs.
    pub check_every_epochs: u64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch size must be >= 1".into()));
        }
        if self.optimizer == Optimizer::SgdDecay
            && (self.decay_step == 0 || !(self.decay_rate > 0.0 && self.decay_rate <= 1.0))
        {
            return Err(NnError::Config("decay step must be >= 1, rate in (0, 1]".into()));
        }
        if let Some(es) = self.early_stopping {
            if es.checks_apart == 0 || es.consecutive_increases == 0 {
                return Err(NnError::Config("early stopping needs positive parameters".into()));
            }
        }
        if self.check_every_epochs == 0 {
            return Err(NnError::Config("check interval must be >= 1 epoch".into()));
        }
        Ok(())
    }
}

/// Learning rate at `step`: `lr0 * rate^floor(step / decay_step)` for
/// SGD, constant for Adam.
pub fn lr_at(config: &TrainConfig, step: u64) -> f64 {
    match config.optimizer {
        Optimizer::Adam => config.learning_rate,
        Optimizer::SgdDecay => {
            let stairs = (step / config.decay_step.max(1)) as i32;
            config.learning_rate * config.decay_rate.powi(stairs)
        }
    }
}

/// Tracks validation losses and keeps the snapshot taken just before the
/// current run of increases.
#[derive(Debug, Clone)]
pub struct EarlyStopper<S> {
    consecutive: usize,
    increases: usize,
    previous: Option<f64>,
    checks: usize,
    snapshot: Option<(usize, S)>,
}

impl<S> EarlyStopper<S> {
    pub fn new(consecutive_increases: usize) -> Self {
        Self {
            consecutive: consecutive_increases,
            increases: 0,
            previous: None,
            checks: 0,
            snapshot: None,
        }
    }

    /// Records one check; returns `true` when training should halt.
    pub fn observe(&mut self, loss: f64, take_snapshot: impl FnOnce() -> S) -> bool {
        let increased = self.previous.is_some_and(|p| loss > p);
        if increased {
            self.increases += 1;
        } else {
            self.increases = 0;
            self.snapshot = Some((self.checks, take_snapshot()));
        }
        self.previous = Some(loss);
        self.checks += 1;
        self.increases >= self.consecutive
    }

    /// Zero-based index of the check the snapshot was taken at.
    pub fn snapshot_check(&self) -> Option<usize> {
        self.snapshot.as_ref().map(|(i, _)| *i)
    }

    pub fn into_snapshot(self) -> Option<S> {
        self.snapshot.map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub step: u64,
    pub epoch: u64,
    /// mean batch loss since the previous check
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    BudgetExhausted,
    EarlyStopped { restored_check: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub entries: Vec<TraceEntry>,
    pub stop_reason: StopReason,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,train_loss,val_loss,train_acc,val_acc\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.step, e.epoch, e.train_loss, e.val_loss, e.train_accuracy, e.val_accuracy
            );
        }
        s
    }
}

struct AdamState {
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    fn new(model: &MlpModel) -> Self {
        Self {
            t: 0,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
        }
    }

    fn step(&mut self, model: &mut MlpModel, g: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (i, layer) in model.layers.iter_mut().enumerate() {
            adam_update2(&mut layer.weights, &mut self.m.weights[i], &mut self.v.weights[i], &g.weights[i], lr, c1, c2);
            adam_update1(&mut layer.bias, &mut self.m.biases[i], &mut self.v.biases[i], &g.biases[i], lr, c1, c2);
        }
    }
}

#[inline]
fn adam_scalar(p: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64, c1: f64, c2: f64) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    let m_hat = *m / c1;
    let v_hat = *v / c2;
    *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
}

fn adam_update2(
    p: &mut Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    g: &Array2<f64>,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    Zip::from(p)
        .and(m)
        .and(v)
        .and(g)
        .for_each(|p, m, v, &g| adam_scalar(p, m, v, g, lr, c1, c2));
}

fn adam_update1(
    p: &mut Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    g: &Array1<f64>,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    Zip::from(p)
        .and(m)
        .and(v)
        .and(g)
        .for_each(|p, m, v, &g| adam_scalar(p, m, v, g, lr, c1, c2));
}

fn sgd_step(model: &mut MlpModel, g: &Gradients, lr: f64) {
    for (i, layer) in model.layers.iter_mut().enumerate() {
        layer.weights.scaled_add(-lr, &g.weights[i]);
        layer.bias.scaled_add(-lr, &g.biases[i]);
    }
}

/// One parameter update from a precomputed gradient; exposed for tests of the
/// optimizer arithmetic.
pub struct Updater {
    optimizer: Optimizer,
    adam: Option<AdamState>,
}

impl Updater {
    pub fn new(optimizer: Optimizer, model: &MlpModel) -> Self {
        Self {
            optimizer,
            adam: (optimizer == Optimizer::Adam).then(|| AdamState::new(model)),
        }
    }

    pub fn apply(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64) {
        match self.optimizer {
            Optimizer::SgdDecay => sgd_step(model, grads, lr),
            Optimizer::Adam => self.adam.as_mut().unwrap().step(model, grads, lr),
        }
    }
}

/// Trains `model` on scaled data. Rows are reshuffled every epoch from a
/// stream keyed by `(seed, epoch)`, so a fixed seed reproduces the run.
pub fn train(
    model: &MlpModel,
    train_set: &Dataset,
    validation: &Dataset,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainTrace), NnError> {
    config.validate()?;
    for ds in [train_set, validation] {
        if ds.n_features != model.n_inputs() {
            return Err(NnError::Dimension {
                expected: model.n_inputs(),
                found: ds.n_features,
            });
        }
        if ds.class_count != model.n_classes() {
            return Err(NnError::Config(format!(
                "dataset has {} classes, model outputs {}",
                ds.class_count,
                model.n_classes()
            )));
        }
    }
    if train_set.is_empty() || validation.is_empty() {
        return Err(NnError::EmptyBatch);
    }

    let mut model = model.clone();
    let mut updater = Updater::new(config.optimizer, &model);
    let mut stopper = config
        .early_stopping
        .map(|es| EarlyStopper::<MlpModel>::new(es.consecutive_increases));
    let mut entries = Vec::new();

    let f = train_set.n_features;
    let n = train_set.len();
    let batch = config.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut xbuf: Vec<f64> = Vec::with_capacity(batch * f);
    let mut ybuf: Vec<usize> = Vec::with_capacity(batch);

    let mut step: u64 = 0;
    let mut epoch: u64 = 0;
    let (mut run_loss, mut run_correct, mut run_rows) = (0.0, 0usize, 0usize);
    let mut last_check_step = None;

    let check = |model: &MlpModel,
                     step: u64,
                     epoch: u64,
                     run_loss: &mut f64,
                     run_correct: &mut usize,
                     run_rows: &mut usize|
     -> Result<TraceEntry, NnError> {
        let (val_loss, val_accuracy) = model.evaluate(validation)?;
        let rows = (*run_rows).max(1) as f64;
        let entry = TraceEntry {
            step,
            epoch,
            train_loss: *run_loss / rows,
            val_loss,
            train_accuracy: *run_correct as f64 / rows,
            val_accuracy,
        };
        *run_loss = 0.0;
        *run_correct = 0;
        *run_rows = 0;
        Ok(entry)
    };

    'outer: loop {
        if let Budget::Epochs(max) = config.budget {
            if epoch >= max {
                break;
            }
        }
        order
            .iter_mut()
            .enumerate()
            .for_each(|(i, o)| *o = i);
        order.shuffle(&mut seed::rng(config.seed, &[epoch]));

        for idx in order.chunks(batch) {
            if let Budget::Steps(max) = config.budget {
                if step >= max {
                    break 'outer;
                }
            }
            xbuf.clear();
            ybuf.clear();
            for &i in idx {
                xbuf.extend_from_slice(train_set.row(i));
                ybuf.push(train_set.labels[i]);
            }
            let x = ArrayView2::from_shape((idx.len(), f), &xbuf).unwrap();
            let result = model.backward(x, &ybuf).map_err(|e| match e {
                NnError::Diverged { .. } | NnError::NonFinite => NnError::Diverged { step },
                other => other,
            })?;
            updater.apply(&mut model, &result.gradients, lr_at(config, step));
            step += 1;
            run_loss += result.loss_sum;
            run_correct += result.correct;
            run_rows += idx.len();

            let mut halt = false;
            if let (Some(es), Some(st)) = (config.early_stopping, stopper.as_mut()) {
                if step % es.checks_apart == 0 {
                    let entry = check(&model, step, epoch, &mut run_loss, &mut run_correct, &mut run_rows)?;
                    if !entry.val_loss.is_finite() {
                        return Err(NnError::Diverged { step });
                    }
                    halt = st.observe(entry.val_loss, || model.clone());
                    entries.push(entry);
                    last_check_step = Some(step);
                }
            }
            if halt {
                let st = stopper.take().unwrap();
                let restored_check = st.snapshot_check().unwrap_or(0);
                let snapshot = st.into_snapshot().unwrap_or(model);
                log::info!("early stop at step {step}, restoring check {restored_check}");
                return Ok((
                    snapshot,
                    TrainTrace {
                        entries,
                        stop_reason: StopReason::EarlyStopped { restored_check },
                    },
                ));
            }
        }
        epoch += 1;
        if config.early_stopping.is_none() && epoch % config.check_every_epochs == 0 {
            let entry = check(&model, step, epoch, &mut run_loss, &mut run_correct, &mut run_rows)?;
            if !entry.val_loss.is_finite() {
                return Err(NnError::Diverged { step });
            }
            log::debug!(
                "epoch {epoch}: train loss {:.5} val loss {:.5} val acc {:.4}",
                entry.train_loss,
                entry.val_loss,
                entry.val_accuracy
            );
            entries.push(entry);
            last_check_step = Some(step);
        }
    }
    if last_check_step != Some(step) {
        let entry = check(&model, step, epoch, &mut run_loss, &mut run_correct, &mut run_rows)?;
        entries.push(entry);
    }
    Ok((
        model,
        TrainTrace {
            entries,
            stop_reason: StopReason::BudgetExhausted,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn config(optimizer: Optimizer, lr: f64) -> TrainConfig {
        TrainConfig {
            optimizer,
            learning_rate: lr,
            decay_step: 1000,
            decay_rate: 0.9,
            batch_size: 512,
            budget: Budget::Steps(100_000),
            early_stopping: Some(EarlyStopping {
                checks_apart: 100,
                consecutive_increases: 3,
            }),
            check_every_epochs: 1,
            seed: 0,
        }
    }

    #[test]
    fn staircase_schedule() {
        let c = config(Optimizer::SgdDecay, 1e-7);
        assert_eq!(lr_at(&c, 0), 1e-7);
        assert!((lr_at(&c, 2500) - 8.1e-8).abs() < 1e-20);
        assert_eq!(lr_at(&c, 999), 1e-7);
        let a = config(Optimizer::Adam, 1e-5);
        assert_eq!(lr_at(&a, 0), 1e-5);
        assert_eq!(lr_at(&a, 123_456), 1e-5);
    }

    #[test]
    fn early_stopper_restores_pre_degradation_check() {
        let mut s = EarlyStopper::new(3);
        let losses = [0.50, 0.52, 0.55, 0.58];
        let mut halted_at = None;
        for (i, &l) in losses.iter().enumerate() {
            if s.observe(l, || i) {
                halted_at = Some(i);
                break;
            }
        }
        assert_eq!(halted_at, Some(3));
        assert_eq!(s.snapshot_check(), Some(0));
        assert_eq!(s.into_snapshot(), Some(0));
    }

    #[test]
    fn early_stopper_resets_on_improvement() {
        let mut s = EarlyStopper::new(3);
        for (i, l) in [0.5, 0.6, 0.7, 0.4, 0.45, 0.5].into_iter().enumerate() {
            assert!(!s.observe(l, || i), "check {i}");
        }
        assert_eq!(s.snapshot_check(), Some(3));
        assert!(s.observe(0.55, || 6));
        assert_eq!(s.into_snapshot(), Some(3));
    }

    #[test]
    fn adam_first_step_is_unit_scaled() {
        let mut m = MlpModel::zeros(&[1, 2], &[Activation::Softmax]).unwrap();
        let mut g = Gradients::zeros_like(&m);
        g.weights[0].fill(1.0);
        g.biases[0].fill(1.0);
        let mut up = Updater::new(Optimizer::Adam, &m);
        up.apply(&mut m, &g, 1e-5);
        let expected = -1e-5 / (1.0 + 1e-8);
        assert!((m.layers[0].weights[[0, 0]] - expected).abs() < 1e-20);
        assert!((m.layers[0].bias[1] - expected).abs() < 1e-20);
    }

    #[test]
    fn config_validation() {
        let mut c = config(Optimizer::Adam, 0.0);
        assert!(c.validate().is_err());
        c.learning_rate = 1e-3;
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }
}
