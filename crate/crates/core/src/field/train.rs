//! Minibatch trainers for the MLP fields and the toy classifier.
//!
//! All trainers use Adam with a constant step size and draw minibatches with
//! replacement from a seeded stream, so a given `(dataset, hyper)` pair
//! always produces the same weights.

use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FieldKind, Mlp, MlpField, ToyClassifier};
use crate::error::{invalid, Error};
use crate::math::{ln, softmax, sqrt};
use crate::rng::{normal_vec, seeded, SeededRng};
use crate::schedule::DiffusionSchedule;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            hidden: alloc::vec![64, 64],
            epochs: 60,
            steps_per_epoch: 100,
            batch_size: 128,
            learning_rate: 2e-3,
            seed: 0,
        }
    }
}

/// Loss trace of a training run. Losses are mean squared errors per
/// coordinate (regression) or mean cross-entropy (classification).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    /// Loss on a fixed held-out probe batch after training.
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub log: TrainLog,
    pub train_accuracy: f64,
    /// Fewer than two distinct labels were present, so the logits carry no
    /// class contrast.
    pub degenerate: bool,
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: alloc::vec![0.0; n],
            v: alloc::vec![0.0; n],
            step: 0,
        }
    }

    fn apply<'a>(&mut self, params: impl Iterator<Item = &'a mut f64>, grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - crate::math::powi(Self::BETA1, self.step);
        let c2 = 1.0 - crate::math::powi(Self::BETA2, self.step);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= self.lr * (*m / c1) / (sqrt(*v / c2) + Self::EPS);
        }
    }
}

fn check_hyper(hyper: &TrainHyper) -> Result<()> {
    if hyper.batch_size == 0 {
        return Err(invalid("batch_size must be positive"));
    }
    if !(hyper.learning_rate > 0.0) {
        return Err(invalid("learning_rate must be positive"));
    }
    Ok(())
}

fn check_dataset(dataset: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = dataset.first() else {
        return Err(invalid("dataset is empty"));
    };
    let d = first.len();
    if d == 0 || dataset.iter().any(|x| x.len() != d) {
        return Err(invalid("dataset points must share a positive dimension"));
    }
    if dataset.iter().any(|x| !x.iter().all(|v| v.is_finite())) {
        return Err(invalid("dataset contains non-finite values"));
    }
    Ok(d)
}

/// Regression of an MLP field onto `target` for pairs produced by `draw`.
fn fit_field(
    field: &mut MlpField,
    hyper: &TrainHyper,
    rng: &mut SeededRng,
    mut draw: impl FnMut(&mut SeededRng) -> (Vec<f64>, f64, Vec<f64>),
) -> Result<TrainLog> {
    let d = crate::field::Field::dim(&*field);
    let n_params = field.net().param_count();
    let mut adam = Adam::new(n_params, hyper.learning_rate);
    let mut grads = alloc::vec![0.0; n_params];
    let mut log = TrainLog::default();
    let norm = 1.0 / (hyper.batch_size * d) as f64;

    for epoch in 0..hyper.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..hyper.steps_per_epoch {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for _ in 0..hyper.batch_size {
                let (x, t, target) = draw(rng);
                let input = field.input(&x, t);
                let trace = field.net().trace(&input);
                let out = Mlp::trace_output(&trace);
                let resid: Vec<f64> = out.iter().zip(&target).map(|(o, y)| o - y).collect();
                loss += resid.iter().map(|r| r * r).sum::<f64>() * norm;
                let g: Vec<f64> = resid.iter().map(|r| 2.0 * r * norm).collect();
                field.net().backward(&trace, &g, Some(&mut grads));
            }
            adam.apply(field.net_mut().params_mut(), &grads);
            epoch_loss += loss;
        }
        let mean = epoch_loss / hyper.steps_per_epoch.max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log.epoch_losses.push(mean);
    }

    // fixed probe stream, independent of the training draws
    let mut probe_rng = seeded(crate::rng::mix_seed(hyper.seed, 0x70b3));
    let mut probe = 0.0;
    for _ in 0..hyper.batch_size {
        let (x, t, target) = draw(&mut probe_rng);
        let out = crate::field::Field::eval(&*field, &x, t);
        probe += out
            .iter()
            .zip(&target)
            .map(|(o, y)| (o - y) * (o - y))
            .sum::<f64>()
            * norm;
    }
    if !probe.is_finite() {
        return Err(Error::Diverged {
            epoch: hyper.epochs,
        });
    }
    log.final_loss = probe;
    Ok(log)
}

/// Denoising score matching: fits `ε_θ(sqrt(ᾱ_t) x_1 + sqrt(1 − ᾱ_t) ε, t) ≈ ε`
/// with `t ~ U[0, 1)`.
pub fn train_dsm(
    dataset: &[Vec<f64>],
    schedule: &DiffusionSchedule,
    hyper: &TrainHyper,
) -> Result<(MlpField, TrainLog)> {
    let d = check_dataset(dataset)?;
    check_hyper(hyper)?;
    let mut rng = seeded(hyper.seed);
    let mut field = MlpField::random(FieldKind::DiffusionEps, d, &hyper.hidden, &mut rng)?;
    let schedule = *schedule;
    let log = fit_field(&mut field, hyper, &mut rng, |rng| {
        let x1 = &dataset[rng.random_range(0..dataset.len())];
        let t: f64 = rng.random();
        let ab = schedule.alpha_bar(t);
        let eps = normal_vec(rng, d);
        let xt = x1
            .iter()
            .zip(&eps)
            .map(|(a, e)| sqrt(ab) * a + sqrt(1.0 - ab) * e)
            .collect();
        (xt, t, eps)
    })?;
    Ok((field, log))
}

/// Flow matching on `x_t = (1 − t) x_0 + t x_1`, `x_0 ~ N(0, I)`, regressing
/// onto `x_1 − x_0`.
pub fn train_flow(dataset: &[Vec<f64>], hyper: &TrainHyper) -> Result<(MlpField, TrainLog)> {
    let d = check_dataset(dataset)?;
    check_hyper(hyper)?;
    let mut rng = seeded(hyper.seed);
    let mut field = MlpField::random(FieldKind::FlowVelocity, d, &hyper.hidden, &mut rng)?;
    let log = fit_field(&mut field, hyper, &mut rng, |rng| {
        let x1 = &dataset[rng.random_range(0..dataset.len())];
        let t: f64 = rng.random();
        let x0 = normal_vec(rng, d);
        let xt = x0
            .iter()
            .zip(x1)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        let target = x0.iter().zip(x1).map(|(a, b)| b - a).collect();
        (xt, t, target)
    })?;
    Ok((field, log))
}

/// Softmax cross-entropy classifier. `classes` defaults to `max(label) + 1`.
pub fn train_classifier(
    dataset: &[Vec<f64>],
    labels: &[usize],
    classes: Option<usize>,
    hyper: &TrainHyper,
) -> Result<(ToyClassifier, ClassifierReport)> {
    let d = check_dataset(dataset)?;
    check_hyper(hyper)?;
    if labels.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: dataset.len(),
            got: labels.len(),
        });
    }
    let k = classes.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0) + 1);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }

    let mut rng = seeded(hyper.seed);
    let mut widths = alloc::vec![d];
    widths.extend_from_slice(&hyper.hidden);
    widths.push(k);
    let mut clf = ToyClassifier::new(Mlp::random(&widths, &mut rng)?)?;
    let n_params = clf.net().param_count();
    let mut adam = Adam::new(n_params, hyper.learning_rate);
    let mut grads = alloc::vec![0.0; n_params];
    let mut log = TrainLog::default();
    let norm = 1.0 / hyper.batch_size as f64;

    for epoch in 0..hyper.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..hyper.steps_per_epoch {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for _ in 0..hyper.batch_size {
                let i = rng.random_range(0..dataset.len());
                let trace = clf.net().trace(&dataset[i]);
                let p = softmax(Mlp::trace_output(&trace));
                epoch_loss -= ln(p[labels[i]].max(1e-300)) * norm;
                let mut g: Vec<f64> = p.iter().map(|v| v * norm).collect();
                g[labels[i]] -= norm;
                clf.net().backward(&trace, &g, Some(&mut grads));
            }
            adam.apply(clf.net_mut().params_mut(), &grads);
        }
        let mean = epoch_loss / hyper.steps_per_epoch.max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log.epoch_losses.push(mean);
    }

    let mut correct = 0usize;
    let mut loss = 0.0;
    for (x, &y) in dataset.iter().zip(labels) {
        let logits = clf.logits(x);
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged {
                epoch: hyper.epochs,
            });
        }
        loss -= ln(softmax(&logits)[y].max(1e-300));
        if clf.predict(x) == y {
            correct += 1;
        }
    }
    log.final_loss = loss / dataset.len() as f64;
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let report = ClassifierReport {
        log,
        train_accuracy: correct as f64 / dataset.len() as f64,
        degenerate: distinct.len() < 2,
    };
    Ok((clf, report))
}
