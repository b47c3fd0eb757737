use fedhpn_core::policy::{
    deploy_assignment, hpn_forward, reinforce_update, sample_assignment, HeadDist, PolicyArch, PolicyParams,
    RewardBaseline, TrainerConfig,
};
use fedhpn_core::rng::rng_for;
use fedhpn_core::space::{Dimension, PersonalizedAssignment, SearchSpace};
use rand::Rng;

fn lr_space(k: usize) -> SearchSpace {
    let c: Vec<f64> = (0..k).map(|i| 10f64.powi(i as i32 - 3)).collect();
    SearchSpace::new(vec![Dimension::discrete("learning_rate", &c).unwrap()]).unwrap()
}

/// Two clusters of four clients with well-separated encodings.
fn cluster_encodings(seed: u64, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, "bandit-enc", &[]);
    let centres: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..dim).map(|_| rng.random_range(-0.2..0.2)).collect())
        .collect();
    (0..8)
        .map(|i| {
            centres[i / 4]
                .iter()
                .map(|c| c + rng.random_range(-0.01..0.01))
                .collect()
        })
        .collect()
}

fn bandit_converges(seed: u64) -> bool {
    let space = lr_space(4);
    let encodings = cluster_encodings(seed, 16);
    let target = |client: usize| if client < 4 { 3 } else { 0 };
    let cfg = TrainerConfig {
        seed,
        ..Default::default()
    };
    let arch = PolicyArch::for_space(&space, 16, &cfg.hidden).unwrap();
    let mut theta = PolicyParams::init(arch, seed);
    let mut baseline = RewardBaseline::new(cfg.baseline);
    let mut rng = rng_for(seed, "bandit", &[]);
    for _ in 0..500 {
        let trials: Vec<(PersonalizedAssignment, f64)> = (0..cfg.trials_per_update)
            .map(|_| {
                let a = sample_assignment(&theta, &space, &encodings, &mut rng).unwrap();
                let hits = a
                    .per_client
                    .iter()
                    .enumerate()
                    .filter(|(i, c)| c.index(0) == Some(target(*i)))
                    .count();
                (a, hits as f64 / 8.0)
            })
            .collect();
        theta = reinforce_update(&theta, &encodings, &trials, &cfg, &mut baseline)
            .unwrap()
            .params;
    }
    let modes = deploy_assignment(&theta, &space, &encodings).unwrap();
    modes
        .per_client
        .iter()
        .enumerate()
        .all(|(i, c)| c.index(0) == Some(target(i)))
}

#[test]
fn bandit_argmax_finds_rewarded_candidates() {
    let wins = (0..5).filter(|&s| bandit_converges(s)).count();
    assert!(wins >= 4, "{wins}/5 seeds converged");
}

#[test]
fn bandit_converges_under_plain_reinforce() {
    let space = lr_space(2);
    let encodings = cluster_encodings(0, 8);
    let cfg = TrainerConfig {
        trials_per_update: 1,
        policy_lr: 0.5,
        ..TrainerConfig::default().paper_faithful()
    };
    let arch = PolicyArch::for_space(&space, 8, &[8]).unwrap();
    let mut theta = PolicyParams::init(arch, 0);
    let mut baseline = RewardBaseline::new(cfg.baseline);
    let mut rng = rng_for(0, "plain", &[]);
    for _ in 0..500 {
        let a = sample_assignment(&theta, &space, &encodings, &mut rng).unwrap();
        let r = a.per_client.iter().filter(|c| c.index(0) == Some(1)).count() as f64 / 8.0;
        theta = reinforce_update(&theta, &encodings, &[(a, r)], &cfg, &mut baseline)
            .unwrap()
            .params;
    }
    let modes = deploy_assignment(&theta, &space, &encodings).unwrap();
    assert!(modes.per_client.iter().all(|c| c.index(0) == Some(1)));
}

/// Zero trunk and head weights with the head bias set to `logits`.
fn biased_policy(space: &SearchSpace, dim: usize, logits: &[f64]) -> PolicyParams {
    let arch = PolicyArch::for_space(space, dim, &[4]).unwrap();
    let mlp = arch.mlp();
    let mut theta = PolicyParams::zeros(arch);
    let (_, b) = mlp.layer_offsets(mlp.num_layers() - 1);
    theta.values[b..b + logits.len()].copy_from_slice(logits);
    theta
}

#[test]
fn sampling_frequencies_match_head_probabilities() {
    let space = lr_space(2);
    let theta = biased_policy(&space, 3, &[0.0, 3f64.ln()]);
    match &hpn_forward(&theta, &[0.3, -0.1, 0.7]).unwrap().heads[0] {
        HeadDist::Categorical(p) => {
            assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12)
        }
        other => panic!("{other:?}"),
    }
    let encodings = vec![vec![0.3, -0.1, 0.7]; 10];
    let mut rng = rng_for(0, "freq", &[]);
    let mut ones = 0usize;
    for _ in 0..10_000 {
        let a = sample_assignment(&theta, &space, &encodings, &mut rng).unwrap();
        ones += a.per_client.iter().filter(|c| c.index(0) == Some(1)).count();
    }
    let f = ones as f64 / 1e5;
    assert!((f - 0.75).abs() <= 0.01, "{f}");
}

#[test]
fn assignment_masses_are_products_of_head_masses() {
    let space = SearchSpace::new(vec![
        Dimension::discrete("learning_rate", &[0.01, 0.1, 1.0]).unwrap(),
        Dimension::discrete("local_steps", &[1.0, 5.0]).unwrap(),
    ])
    .unwrap();
    let mut rng = rng_for(3, "enum", &[]);
    let arch = PolicyArch::for_space(&space, 4, &[5]).unwrap();
    let values = (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let theta = PolicyParams::from_values(arch, values).unwrap();
    let encodings = vec![vec![0.1, 0.2, -0.3, 0.4], vec![-0.5, 0.0, 0.2, 0.1]];
    let heads: Vec<Vec<Vec<f64>>> = encodings
        .iter()
        .map(|z| {
            hpn_forward(&theta, z)
                .unwrap()
                .heads
                .into_iter()
                .map(|h| match h {
                    HeadDist::Categorical(p) => p,
                    other => panic!("{other:?}"),
                })
                .collect()
        })
        .collect();
    let configs = space.enumerate().unwrap();
    let mut total = 0.0;
    for c0 in &configs {
        for c1 in &configs {
            let a = PersonalizedAssignment {
                per_client: vec![c0.clone(), c1.clone()],
            };
            let (lp, _) = fedhpn_core::policy::log_prob_and_grad(&theta, &encodings, &a).unwrap();
            assert!(lp <= 0.0);
            let product: f64 = [c0, c1]
                .iter()
                .zip(&heads)
                .map(|(c, hs)| (0..2).map(|d| hs[d][c.index(d).unwrap()]).product::<f64>())
                .product();
            assert!((lp.exp() - product).abs() < 1e-12);
            total += product;
        }
    }
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn identical_encodings_get_identical_distributions() {
    let space = lr_space(4);
    let arch = PolicyArch::for_space(&space, 6, &[8, 8]).unwrap();
    let theta = PolicyParams::init(arch, 1);
    let mut rng = rng_for(1, "z", &[]);
    for _ in 0..20 {
        let z: Vec<f64> = (0..6).map(|_| rng.random_range(-0.3..0.3)).collect();
        assert_eq!(
            hpn_forward(&theta, &z).unwrap(),
            hpn_forward(&theta, &z.clone()).unwrap()
        );
    }
}
