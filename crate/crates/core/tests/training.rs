use trajedit_core::data::{blobs, two_moons};
use trajedit_core::field::{train_classifier, train_dsm, train_flow, TrainHyper};
use trajedit_core::rewards::Reward;
use trajedit_core::schedule::DiffusionSchedule;
use trajedit_core::Error;

/// Rosenblatt perceptron; returns true once a full pass makes no mistakes.
fn perceptron_separates(points: &[Vec<f64>], labels: &[usize]) -> bool {
    let mut w = [0.0; 3];
    for _ in 0..1000 {
        let mut mistakes = 0;
        for (p, &l) in points.iter().zip(labels) {
            let y = if l == 1 { 1.0 } else { -1.0 };
            let s = w[0] * p[0] + w[1] * p[1] + w[2];
            if y * s <= 0.0 {
                w[0] += y * p[0];
                w[1] += y * p[1];
                w[2] += y;
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

fn quick() -> TrainHyper {
    TrainHyper {
        hidden: vec![16, 16],
        epochs: 10,
        steps_per_epoch: 30,
        batch_size: 64,
        learning_rate: 1e-2,
        seed: 2,
    }
}

#[test]
fn classifier_separates_blobs() {
    let data = blobs(&[vec![-2.0, -1.0], vec![2.0, 1.0]], 0.4, 100, 8).unwrap();
    assert!(perceptron_separates(&data.points, &data.labels));
    let (clf, report) = train_classifier(&data.points, &data.labels, None, &quick()).unwrap();
    assert!(report.train_accuracy >= 0.99, "{}", report.train_accuracy);
    assert!(!report.degenerate);

    let r = Reward::ClassifierLogit {
        classifier: clf.clone(),
        target_class: 1,
    };
    let i = data.labels.iter().position(|&l| l == 1).unwrap();
    let logits = clf.logits(&data.points[i]);
    assert!(r.value(&data.points[i]) > logits[0]);
}

#[test]
fn classifier_edge_cases() {
    let pts = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let (_, report) = train_classifier(&pts, &[0, 0], None, &quick()).unwrap();
    assert_eq!(report.train_accuracy, 1.0);
    assert!(report.degenerate);
    assert!(matches!(
        train_classifier(&pts, &[0], None, &quick()),
        Err(Error::LengthMismatch { .. })
    ));
    assert!(matches!(
        train_classifier(&pts, &[0, 2], Some(2), &quick()),
        Err(Error::LabelOutOfRange {
            label: 2,
            classes: 2
        })
    ));
}

#[test]
fn moons_training_beats_the_noise_variance() {
    let data = two_moons(2000, 0.05, 0).points;
    let hyper = TrainHyper::default();
    let (_, dsm) = train_dsm(&data, &DiffusionSchedule::default(), &hyper).unwrap();
    assert!(dsm.final_loss < 1.0, "dsm loss {}", dsm.final_loss);
    assert_eq!(dsm.epoch_losses.len(), hyper.epochs);
    let (_, flow) = train_flow(&data, &hyper).unwrap();
    // the flow target x_1 − x_0 has per-coordinate variance 1 + Var(x_1), so
    // that is the analogous no-skill bound
    let n = data.len() as f64;
    let var: f64 = (0..2)
        .map(|i| {
            let m = data.iter().map(|x| x[i]).sum::<f64>() / n;
            data.iter().map(|x| (x[i] - m) * (x[i] - m)).sum::<f64>() / n
        })
        .sum::<f64>()
        / 2.0;
    assert!(
        flow.final_loss < 1.0 + var,
        "flow loss {} vs {}",
        flow.final_loss,
        1.0 + var
    );
}

#[test]
fn training_is_deterministic() {
    let data = two_moons(200, 0.05, 1).points;
    let a = train_flow(&data, &quick()).unwrap();
    let b = train_flow(&data, &quick()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn divergent_training_is_reported() {
    let data = vec![vec![1e200, -1e200]];
    let hyper = TrainHyper {
        epochs: 2,
        steps_per_epoch: 2,
        batch_size: 4,
        ..quick()
    };
    assert!(matches!(
        train_flow(&data, &hyper),
        Err(Error::Diverged { .. })
    ));
}
