use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::evaluation::{auc, ScoredLabel};

fn engine(workers: usize) -> Engine {
    Engine::with_workers(workers).unwrap()
}

fn dense(v: &[f64]) -> SparseVector {
    let (idx, vals): (Vec<u32>, Vec<f64>) = v
        .iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, x)| (i as u32, *x))
        .unzip();
    SparseVector::new(v.len(), idx, vals).unwrap()
}

fn pt(v: &[f64], label: Label) -> LabeledPoint {
    LabeledPoint::new(dense(v), label)
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<LabeledPoint> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim)
                .map(|_| if rng.gen_bool(0.6) { rng.gen_range(-2.0..2.0) } else { 0.0 })
                .collect();
            let label = if rng.gen_bool(0.5) { Label::Attack } else { Label::Normal };
            pt(&v, label)
        })
        .collect()
}

fn toy_separable() -> Vec<LabeledPoint> {
    vec![
        pt(&[1.0, 0.2, 0.0], Label::Attack),
        pt(&[0.8, 0.0, 0.1], Label::Attack),
        pt(&[1.2, 0.1, 0.3], Label::Attack),
        pt(&[0.0, 1.0, 0.2], Label::Normal),
        pt(&[0.1, 0.9, 0.0], Label::Normal),
        pt(&[0.2, 1.1, 0.4], Label::Normal),
    ]
}

fn training_auc(model: &LinearModel, data: &[LabeledPoint]) -> f64 {
    let scored: Vec<ScoredLabel> = data
        .iter()
        .map(|p| ScoredLabel::new(model.predict_score(&p.features).unwrap(), p.label))
        .collect();
    auc(&scored).unwrap()
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn zero_weights_give_closed_form_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = random_points(&mut rng, 25, 4);
    let (v, _) = objective(&[0.0; 4], &data, Loss::Logistic, 0.0).unwrap();
    assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    let (v, _) = objective(&[0.0; 4], &data, Loss::Hinge, 0.0).unwrap();
    assert_eq!(v, 1.0);
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let data = random_points(&mut rng, 20, 5);
        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let lambda = rng.gen_range(0.0..0.5);
        let (_, g) = objective(&w, &data, Loss::Logistic, lambda).unwrap();
        for j in 0..5 {
            let h = 1e-6;
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (objective(&wp, &data, Loss::Logistic, lambda).unwrap().0
                - objective(&wm, &data, Loss::Logistic, lambda).unwrap().0)
                / (2.0 * h);
            assert!(relative_gap(g[j], fd) < 1e-5, "coord {j}: {} vs {fd}", g[j]);
        }
    }
}

#[test]
fn hinge_gradient_matches_finite_differences_away_from_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 20 {
        let data = random_points(&mut rng, 20, 5);
        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let near_kink = data
            .iter()
            .any(|p| (p.label.sign() * p.features.dot(&w) - 1.0).abs() < 1e-3);
        if near_kink {
            continue;
        }
        checked += 1;
        let (_, g) = objective(&w, &data, Loss::Hinge, 0.01).unwrap();
        for j in 0..5 {
            let h = 1e-7;
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (objective(&wp, &data, Loss::Hinge, 0.01).unwrap().0
                - objective(&wm, &data, Loss::Hinge, 0.01).unwrap().0)
                / (2.0 * h);
            assert!(relative_gap(g[j], fd) < 1e-5, "coord {j}: {} vs {fd}", g[j]);
        }
    }
}

#[test]
fn hinge_subgradient_is_zero_at_kink() {
    let data = vec![pt(&[1.0], Label::Attack)];
    let (v, g) = objective(&[1.0], &data, Loss::Hinge, 0.0).unwrap();
    assert_eq!((v, g[0]), (0.0, 0.0));
}

#[test]
fn parallel_objective_independent_of_partitioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let points = random_points(&mut rng, 203, 12);
    let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let one = vec![points.clone()];
    let eight: Vec<Vec<LabeledPoint>> = points.chunks(26).map(<[_]>::to_vec).collect();
    assert_eq!(eight.len(), 8);
    let eng = engine(4);
    for loss in [Loss::Logistic, Loss::Hinge] {
        let a = Objective::new(loss, 0.1, 12, false, &one).unwrap().evaluate_on(&eng, &w).unwrap();
        let b = Objective::new(loss, 0.1, 12, false, &eight).unwrap().evaluate_on(&eng, &w).unwrap();
        assert!((a.0 - b.0).abs() < 1e-12);
        for (x, y) in a.1.iter().zip(&b.1) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn dimension_mismatch_is_rejected() {
    let data = vec![pt(&[1.0, 2.0], Label::Attack)];
    assert!(matches!(
        objective(&[0.0; 3], &data, Loss::Logistic, 0.0),
        Err(TrainError::DimMismatch { .. })
    ));
}

#[test]
fn predict_score_closed_forms() {
    let x = dense(&[1.0]);
    let mut m = LinearModel::zeros(ModelKind::Logistic, 1);
    assert_eq!(m.predict_score(&x).unwrap(), 0.5);
    m.weights[0] = 3f64.ln();
    assert!((m.predict_score(&x).unwrap() - 0.75).abs() < 1e-15);
    let svm = LinearModel::zeros(ModelKind::Svm, 1);
    assert_eq!(svm.predict_score(&x).unwrap(), 0.0);
    assert!(svm.predict_score(&dense(&[1.0, 2.0])).is_err());
}

#[test]
fn zero_weight_logistic_sits_on_default_threshold() {
    let m = LinearModel::zeros(ModelKind::Logistic, 2);
    assert_eq!(m.predict(&dense(&[1.0, 1.0])).unwrap(), Label::Attack);
    let mut strict = m.clone();
    strict.threshold = Some(0.6);
    assert_eq!(strict.predict(&dense(&[1.0, 1.0])).unwrap(), Label::Normal);
}

#[test]
fn lbfgs_two_point_matches_gradient_descent() {
    let data = vec![pt(&[1.0], Label::Attack), pt(&[-1.0], Label::Normal)];
    let f = |w: &[f64]| objective(w, &data, Loss::Logistic, 0.1);
    let cfg = LbfgsConfig {
        tol: 1e-10,
        ..Default::default()
    };
    let r = lbfgs_minimize(f, vec![0.0], &cfg).unwrap();

    let mut w = 0.0;
    for _ in 0..100_000 {
        let (_, g) = f(&[w]).unwrap();
        w -= 0.5 * g[0];
    }
    assert!(r.x[0] > 0.0);
    assert!((r.x[0] - w).abs() < 1e-4, "{} vs {w}", r.x[0]);
}

#[test]
fn lbfgs_quadratic_matches_linear_solve() {
    let n = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    // A = M^T M + I is symmetric positive definite
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();

    let f = |x: &[f64]| {
        let ax: Vec<f64> = a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect();
        let v = 0.5 * x.iter().zip(&ax).map(|(p, q)| p * q).sum::<f64>() - x.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>();
        let g = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
        Ok((v, g))
    };
    let cfg = LbfgsConfig {
        tol: 1e-12,
        max_iters: 1000,
        ..Default::default()
    };
    let r = lbfgs_minimize(f, vec![0.0; n], &cfg).unwrap();

    // Gaussian elimination with partial pivoting
    let mut aug: Vec<Vec<f64>> = a.iter().zip(&b).map(|(row, bi)| row.iter().copied().chain([*bi]).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs())).unwrap();
        aug.swap(col, piv);
        for row in col + 1..n {
            let factor = aug[row][col] / aug[col][col];
            for k in col..=n {
                aug[row][k] -= factor * aug[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| aug[i][k] * x[k]).sum();
        x[i] = (aug[i][n] - s) / aug[i][i];
    }
    for (got, want) in r.x.iter().zip(&x) {
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
}

#[test]
fn lr_separates_toy_set() {
    let data = toy_separable();
    let ds = PDataset::from_vec(data.clone(), 2);
    let model = train_lr_lbfgs(&engine(2), &ds, &TrainConfig::logistic()).unwrap();
    assert_eq!(model.threshold, None);
    assert_eq!(training_auc(&model, &data), 1.0);
}

#[test]
fn svm_separates_toy_sets() {
    let eng = engine(2);
    let two = vec![pt(&[1.0, 0.0], Label::Attack), pt(&[0.0, 1.0], Label::Normal)];
    let model = train_svm(&eng, &PDataset::from_vec(two.clone(), 1), &TrainConfig::svm()).unwrap();
    for p in &two {
        assert_eq!(model.predict(&p.features).unwrap(), p.label);
    }
    let toy = toy_separable();
    let model = train_svm(&eng, &PDataset::from_vec(toy.clone(), 3), &TrainConfig::svm()).unwrap();
    assert_eq!(training_auc(&model, &toy), 1.0);
}

#[test]
fn single_class_and_empty_training_rejected() {
    let eng = engine(1);
    let one = PDataset::from_vec(vec![pt(&[1.0], Label::Normal), pt(&[2.0], Label::Normal)], 1);
    assert!(matches!(
        train_lr_lbfgs(&eng, &one, &TrainConfig::logistic()),
        Err(TrainError::SingleClass(Label::Normal))
    ));
    let empty: PDataset<LabeledPoint> = PDataset::from_vec(vec![], 2);
    assert!(matches!(train_svm(&eng, &empty, &TrainConfig::svm()), Err(TrainError::EmptyTraining)));
}

#[test]
fn label_flip_negates_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data = random_points(&mut rng, 60, 4);
    let flipped: Vec<LabeledPoint> = data
        .iter()
        .map(|p| LabeledPoint::new(p.features.clone(), p.label.flipped()))
        .collect();
    let cfg = TrainConfig {
        lbfgs_tol: 1e-10,
        max_iters: 500,
        ..TrainConfig::logistic()
    };
    let eng = engine(2);
    let a = train_lr_lbfgs(&eng, &PDataset::from_vec(data, 3), &cfg).unwrap();
    let b = train_lr_lbfgs(&eng, &PDataset::from_vec(flipped, 3), &cfg).unwrap();
    for (x, y) in a.weights.iter().zip(&b.weights) {
        assert!((x + y).abs() < 1e-5, "{x} vs {y}");
    }
}

#[test]
fn scaling_weights_preserves_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = random_points(&mut rng, 80, 6);
    let model = train_lr_lbfgs(&engine(2), &PDataset::from_vec(data.clone(), 4), &TrainConfig::logistic()).unwrap();
    let mut scaled = model.clone();
    scaled.weights.iter_mut().for_each(|w| *w *= 3.0);
    assert_eq!(training_auc(&model, &data), training_auc(&scaled, &data));
    let x = &data.iter().find(|p| model.margin(&p.features).unwrap().abs() > 1e-3).unwrap().features;
    assert_ne!(model.predict_score(x).unwrap(), scaled.predict_score(x).unwrap());
}

#[test]
fn training_is_deterministic_across_workers() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = random_points(&mut rng, 120, 8);
    let ds = PDataset::from_vec(data, 6);
    let reference = train_lr_lbfgs(&engine(1), &ds, &TrainConfig::logistic()).unwrap();
    let svm_reference = train_svm(&engine(1), &ds, &TrainConfig::svm()).unwrap();
    for workers in [1, 2, 4] {
        let eng = engine(workers);
        assert_eq!(train_lr_lbfgs(&eng, &ds, &TrainConfig::logistic()).unwrap(), reference);
        assert_eq!(train_svm(&eng, &ds, &TrainConfig::svm()).unwrap(), svm_reference);
    }
}

#[test]
fn zero_iterations_leave_zero_weights() {
    let balanced = vec![
        pt(&[1.0, 0.0], Label::Attack),
        pt(&[0.0, 1.0], Label::Attack),
        pt(&[1.0, 1.0], Label::Normal),
        pt(&[0.5, 0.0], Label::Normal),
    ];
    let cfg = TrainConfig {
        max_iters: 0,
        ..TrainConfig::svm()
    };
    let model = train_svm(&engine(1), &PDataset::from_vec(balanced.clone(), 2), &cfg).unwrap();
    assert!(model.weights.iter().all(|w| *w == 0.0));
    assert_eq!(training_auc(&model, &balanced), 0.5);
}

#[test]
fn intercept_is_learned_when_enabled() {
    // only the bias can separate these
    let data = vec![
        pt(&[1.0], Label::Attack),
        pt(&[1.0], Label::Attack),
        pt(&[1.0], Label::Attack),
        pt(&[1.0], Label::Normal),
    ];
    let cfg = TrainConfig {
        intercept: true,
        reg_lambda: 0.1,
        ..TrainConfig::logistic()
    };
    let model = train_lr_lbfgs(&engine(1), &PDataset::from_vec(data, 1), &cfg).unwrap();
    assert!(model.intercept > 0.0);
}

#[test]
fn model_file_round_trips_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = LinearModel {
        kind: ModelKind::Svm,
        weights: (0..50).map(|_| rng.gen_range(-1e3..1e3) * rng.gen::<f64>().powi(7)).collect(),
        intercept: 0.1 + 0.2,
        threshold: Some(1.0 / 3.0),
    };
    let file = model.to_file(serde_json::to_value(TrainConfig::svm()).unwrap());
    let back = ModelFile::from_json(&file.to_json().unwrap()).unwrap();
    assert_eq!(back, file);
    let restored = back.model().unwrap();
    for (a, b) in restored.weights.iter().zip(&model.weights) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(restored, model);
}

#[test]
fn model_file_rejects_inconsistent_dim() {
    let file = ModelFile {
        kind: ModelKind::Logistic,
        dim: 3,
        weights: vec![0.0; 2],
        intercept: 0.0,
        threshold: None,
        config: serde_json::Value::Null,
    };
    assert!(file.model().is_err());
}

#[test]
fn config_validation_and_kind_parsing() {
    assert!(TrainConfig { reg_lambda: -1.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { lbfgs_memory: 0, ..Default::default() }.validate().is_err());
    assert_eq!("lr".parse::<ModelKind>().unwrap(), ModelKind::Logistic);
    assert_eq!("svm".parse::<ModelKind>().unwrap(), ModelKind::Svm);
    assert!("tree".parse::<ModelKind>().is_err());
    assert_eq!(TrainConfig::svm().reg_lambda, 0.01);
    assert_eq!(TrainConfig::logistic().reg_lambda, 0.0);
}
