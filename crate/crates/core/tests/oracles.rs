//! Checks against independently computed reference values.

use fedcontrib::data::{contiguous_groups, Dataset, VerticalPartition};
use fedcontrib::federation::{
    assemble_federation, federated_party_shapley, unit_shapley_exact, ReducedSpace,
};
use fedcontrib::horizontal::influence_single;
use fedcontrib::model::{make_linear_oracle, train, ModelConfig, Predictor};
use fedcontrib::shapley::{shapley_exact, shapley_group_sum, shapley_mc, BackgroundSpec};

/// Retrain-per-instance loop written against `train` directly.
fn exhaustive_influences(ds: &Dataset, cfg: &ModelConfig) -> Vec<f64> {
    let all = ds.all_indices();
    let full = train(ds, &all, cfg).unwrap();
    (0..ds.n())
        .map(|i| {
            let rest: Vec<usize> = all.iter().copied().filter(|&j| j != i).collect();
            let m = train(ds, &rest, cfg).unwrap();
            all.iter()
                .map(|&j| (full.predict(ds.row(j)).unwrap() - m.predict(ds.row(j)).unwrap()).abs())
                .sum::<f64>()
                / ds.n() as f64
        })
        .collect()
}

#[test]
fn planted_outlier_is_most_influential() {
    let rows = vec![
        vec![0.10, 0.20],
        vec![0.20, 0.10],
        vec![0.15, 0.25],
        vec![0.80, 0.70],
        vec![0.75, 0.90],
        vec![0.00, 0.00], // labelled positive at the far edge of the negative cluster
    ];
    let ds = Dataset::from_unnamed(&rows, &[0, 0, 0, 1, 1, 1]).unwrap();
    let cfg = ModelConfig::logistic();
    let oracle = exhaustive_influences(&ds, &cfg);
    for i in 0..5 {
        assert!(oracle[5] > oracle[i], "{oracle:?}");
    }
    for (i, want) in oracle.iter().enumerate() {
        let got = influence_single(&cfg, &ds, i, &ds.all_indices()).unwrap();
        assert!((got - want).abs() < 1e-12);
    }
}

fn kernel_toy_4() -> (Dataset, fedcontrib::model::TrainedModel) {
    let rows: Vec<Vec<f64>> = (0..24)
        .map(|i| {
            (0..4)
                .map(|j| ((i * (2 * j + 3) + 5 * j) % 11) as f64 / 10.0)
                .collect()
        })
        .collect();
    let labels: Vec<u8> = rows
        .iter()
        .map(|r| u8::from(r[0] * r[1] + 0.5 * r[2] - 0.3 * r[3] > 0.35))
        .collect();
    let ds = Dataset::from_unnamed(&rows, &labels).unwrap();
    let cfg = ModelConfig {
        rbf_gamma: Some(3.0),
        l2_strength: 0.05,
        ..ModelConfig::kernel_rbf()
    };
    let m = train(&ds, &ds.all_indices(), &cfg).unwrap();
    (ds, m)
}

#[test]
fn mc_error_shrinks_with_iterations() {
    let (ds, m) = kernel_toy_4();
    let bg = BackgroundSpec::sampled_all(&ds).unwrap();
    let x = ds.row(7);
    let exact = shapley_exact(&m, x, &bg).unwrap().per_feature();
    let mut wins = 0;
    for s in 0..10u64 {
        let small = shapley_mc(&m, x, 0, 100, &bg, 1000 + s).unwrap();
        let large = shapley_mc(&m, x, 0, 10_000, &bg, 1000 + s).unwrap();
        if (large - exact[0]).abs() < (small - exact[0]).abs() {
            wins += 1;
        }
    }
    assert!(wins >= 8, "only {wins}/10 seeds improved");
}

#[test]
fn federated_feature_equals_member_sum_for_additive_model() {
    // weights 1..6, x = ones, zero reference: member sums are 3, 7, 11
    let rows: Vec<Vec<f64>> = vec![vec![1.0; 6], vec![0.0; 6], vec![0.0; 6]];
    let ds = Dataset::from_unnamed(&rows, &[1, 0, 0]).unwrap();
    assert_eq!(ds.medians(), &[0.0; 6]);
    let model = make_linear_oracle((1..=6).map(f64::from).collect(), 0.0);
    let partition = VerticalPartition::new(vec![vec![0, 1], vec![2, 3], vec![4, 5]], 6).unwrap();
    let mut fed = assemble_federation(&ds, &partition, 4).unwrap();
    fed.register_model(model.clone()).unwrap();
    let token = fed.token(0).unwrap().to_string();

    let individual = shapley_exact(&model, ds.row(0), &BackgroundSpec::medians(&ds)).unwrap();
    for (g, want) in [3.0, 7.0, 11.0].into_iter().enumerate() {
        let member_sum = shapley_group_sum(&individual, &partition.groups[g]).unwrap();
        assert!((member_sum - want).abs() < 1e-9);

        let space = ReducedSpace::for_party(&fed, g).unwrap();
        let mut s = fed.session(false);
        let exact = unit_shapley_exact(&mut s, &space, &token).unwrap();
        assert!((exact[space.target.unwrap()] - want).abs() < 1e-9);

        let mc = federated_party_shapley(&mut s, &token, g, 5000, 77 + g as u64).unwrap();
        assert!((mc - want).abs() < 0.05, "{mc}");
    }
}

#[test]
fn grouped_linear_parties_match_member_sums_on_spread_data() {
    let rows: Vec<Vec<f64>> = (0..15)
        .map(|i| {
            (0..7)
                .map(|j| ((i * 4 + j * 3) % 13) as f64 / 12.0)
                .collect()
        })
        .collect();
    let labels: Vec<u8> = (0..15).map(|i| (i % 3 == 0) as u8).collect();
    let ds = Dataset::from_unnamed(&rows, &labels).unwrap();
    let w = vec![0.5, -1.2, 2.0, 0.3, 1.7, -0.8, 0.9];
    let model = make_linear_oracle(w, 0.2);
    let partition = contiguous_groups(7, 3).unwrap();
    let mut fed = assemble_federation(&ds, &partition, 9).unwrap();
    fed.register_model(model.clone()).unwrap();
    let exact = shapley_exact(&model, ds.row(4), &BackgroundSpec::medians(&ds)).unwrap();
    let token = fed.token(4).unwrap().to_string();
    for (g, group) in partition.groups.iter().enumerate() {
        let want = shapley_group_sum(&exact, group).unwrap();
        let mut s = fed.session(false);
        let got = federated_party_shapley(&mut s, &token, g, 2000, g as u64).unwrap();
        assert!((got - want).abs() < 0.05, "party {g}: {got} vs {want}");
    }
}
