mod common;

use common::{primal, projected_gradient_svm, rng, separable_2d};
use dapolicy::linsvm::{
    accuracy, argmax, primal_objective, softmax, train_binary, train_binary_with_report,
    train_multiclass, SvmParams,
};
use proptest::prelude::*;
use rand::Rng;

fn tight() -> SvmParams {
    SvmParams {
        tol: 1e-10,
        max_epochs: 100_000,
        ..SvmParams::default()
    }
}

#[test]
fn matches_projected_gradient_reference() {
    let (xs, ys) = separable_2d(50, 7);
    let rows: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let model = train_binary(&rows, &ys, &tight()).unwrap();
    let ours = primal(&model.weights, model.bias, &xs, &ys, 1.0);
    let (w, b) = projected_gradient_svm(&xs, &ys, 1.0, 200_000);
    let reference = primal(&w, b, &xs, &ys, 1.0);
    assert!(
        (ours - reference).abs() / reference < 1e-6,
        "ours {ours} reference {reference}"
    );
    assert!((primal_objective(&model, &rows, &ys, 1.0) - ours).abs() < 1e-12);
}

#[test]
fn dual_objective_never_decreases() {
    for seed in 0..5 {
        let (xs, ys) = separable_2d(50, seed);
        let rows: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (_, report) = train_binary_with_report(&rows, &ys, &tight()).unwrap();
        assert!(report.converged);
        for pair in report.dual_objective.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12, "{pair:?}");
        }
        assert!(report.kkt_residual <= 1e-10);
    }
}

#[test]
fn duplicating_the_set_matches_doubled_cost() {
    // Two copies at C equal one copy at 2C.
    let (xs, ys) = separable_2d(30, 3);
    let mut xs2 = xs.clone();
    xs2.extend(xs.iter().cloned());
    let mut ys2 = ys.clone();
    ys2.extend(ys.iter().copied());
    let rows: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let rows2: Vec<&[f64]> = xs2.iter().map(|x| x.as_slice()).collect();
    let p = SvmParams { c: 0.05, ..tight() };
    let once = train_binary(&rows, &ys, &SvmParams { c: 0.1, ..p }).unwrap();
    let twice = train_binary(&rows2, &ys2, &p).unwrap();
    for (a, b) in once.weights.iter().zip(&twice.weights) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    assert!((once.bias - twice.bias).abs() < 1e-6);
}

fn clusters(n_classes: usize, per_class: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for c in 0..n_classes {
        let angle = std::f64::consts::TAU * c as f64 / n_classes as f64;
        for _ in 0..per_class {
            xs.push(vec![
                4.0 * angle.cos() + r.random_range(-1.0..1.0),
                4.0 * angle.sin() + r.random_range(-1.0..1.0),
            ]);
            ys.push(c);
        }
    }
    (xs, ys)
}

#[test]
fn three_clusters_are_learned() {
    let (xs, ys) = clusters(3, 40, 11);
    let rows: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let model = train_multiclass(&rows, &ys, 3, &SvmParams::default()).unwrap();
    assert!(accuracy(&model, &rows, &ys).unwrap() >= 0.98);
}

#[test]
fn two_class_one_vs_all_agrees_with_binary() {
    let (xs, ys) = clusters(2, 100, 5);
    let rows: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let multi = train_multiclass(&rows, &ys, 2, &SvmParams::default()).unwrap();
    let signs: Vec<i8> = ys.iter().map(|&y| if y == 1 { 1 } else { -1 }).collect();
    let binary = train_binary(&rows, &signs, &SvmParams::default()).unwrap();
    let mut r = rng(9);
    let trials = 1000;
    let agree = (0..trials)
        .filter(|_| {
            let x = [r.random_range(-6.0..6.0), r.random_range(-6.0..6.0)];
            let b = usize::from(binary.decision(&x) > 0.0);
            multi.predict(&x).unwrap() == b
        })
        .count();
    assert!(
        agree as f64 / trials as f64 >= 0.95,
        "agreement {agree}/{trials}"
    );
}

proptest! {
    #[test]
    fn softmax_sums_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn softmax_is_shift_invariant(
        v in prop::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        for (a, b) in softmax(&v).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_is_scale_invariant(
        v in prop::collection::vec(-50.0f64..50.0, 1..12),
        scale in 0.01f64..100.0,
    ) {
        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
        prop_assert_eq!(argmax(&v), argmax(&scaled));
        prop_assert_eq!(argmax(&softmax(&v)), argmax(&v));
    }
}
