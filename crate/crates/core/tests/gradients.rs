//! Analytic gradients against central finite differences.

use fedhpn_core::data::DataSet;
use fedhpn_core::model::{ModelKind, ModelSpec, ParamVector};
use fedhpn_core::policy::{log_prob_and_grad, sample_assignment, PolicyArch, PolicyParams};
use fedhpn_core::rng::{rng_for, SimRng};
use fedhpn_core::space::{Dimension, Scale, SearchSpace};
use rand::Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + EPS;
            let hi = f(&p);
            p[i] = orig - EPS;
            let lo = f(&p);
            p[i] = orig;
            (hi - lo) / (2.0 * EPS)
        })
        .collect()
}

fn random_batch(rng: &mut SimRng, features: usize, classes: usize) -> DataSet {
    let n = rng.random_range(1..=12);
    let x = (0..n * features).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
    DataSet::new(x, y, features, classes).unwrap()
}

fn model_worst_error(kind: ModelKind, instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = rng_for(i, "grad-model", &[]);
        let features = rng.random_range(1..=6);
        let classes = rng.random_range(2..=4);
        let spec = ModelSpec::new(kind.clone(), features, classes).unwrap();
        let batch = random_batch(&mut rng, features, classes);
        let wd = rng.random_range(0.0..0.1);
        let mut w = spec.init(i);
        for v in &mut w.values {
            *v += rng.random_range(-0.5..0.5);
        }
        let (_, g) = spec.loss_and_grad(&w, &batch, wd, 0.0, &mut rng).unwrap();
        let layout = w.layout.clone();
        let numeric = central_diff(&w.values, |p| {
            let pv = ParamVector {
                values: p.to_vec(),
                layout: layout.clone(),
            };
            spec.loss_and_grad(&pv, &batch, wd, 0.0, &mut rng_for(0, "unused", &[]))
                .unwrap()
                .0
        });
        worst = worst.max(rel_error(&g.values, &numeric));
    }
    worst
}

#[test]
fn logistic_loss_gradient() {
    let e = model_worst_error(ModelKind::LogisticRegression, 100);
    assert!(e <= TOL, "max relative error {e}");
}

#[test]
fn feedforward_loss_gradient() {
    let e = model_worst_error(ModelKind::Feedforward { hidden: vec![5, 4] }, 100);
    assert!(e <= TOL, "max relative error {e}");
}

#[test]
fn policy_log_prob_gradient() {
    let space = SearchSpace::new(vec![
        Dimension::discrete("learning_rate", &[0.001, 0.01, 0.1, 1.0]).unwrap(),
        Dimension::continuous("weight_decay", 1e-5, 1e-1, Scale::Log).unwrap(),
        Dimension::discrete("local_steps", &[1.0, 5.0, 20.0]).unwrap(),
    ])
    .unwrap();
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let mut rng = rng_for(i, "grad-policy", &[]);
        let dim = rng.random_range(2..=8);
        let arch = PolicyArch::for_space(&space, dim, &[6, 5]).unwrap();
        let values = (0..arch.param_count()).map(|_| rng.random_range(-0.4..0.4)).collect();
        let theta = PolicyParams::from_values(arch.clone(), values).unwrap();
        let clients = rng.random_range(1..=4);
        let encodings: Vec<Vec<f64>> = (0..clients)
            .map(|_| (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect())
            .collect();
        let assignment = sample_assignment(&theta, &space, &encodings, &mut rng).unwrap();
        let (lp, g) = log_prob_and_grad(&theta, &encodings, &assignment).unwrap();
        assert!((lp - assignment.log_prob()).abs() < 1e-9);
        let numeric = central_diff(&theta.values, |p| {
            let t = PolicyParams::from_values(arch.clone(), p.to_vec()).unwrap();
            log_prob_and_grad(&t, &encodings, &assignment).unwrap().0
        });
        worst = worst.max(rel_error(&g, &numeric));
    }
    assert!(worst <= TOL, "max relative error {worst}");
}
