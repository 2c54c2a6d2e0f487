//! Invariants over randomly generated inputs.

use fedcontrib::data::{
    contiguous_groups, horizontal_split, parse_csv, prepare, Dataset, HorizontalPartition,
};
use fedcontrib::federation::{assemble_federation, privacy_audit, ReducedSpace};
use fedcontrib::horizontal::{influence_group_batch, DeletionContext};
use fedcontrib::model::{make_linear_oracle, FnPredictor, ModelConfig, Predictor};
use fedcontrib::shapley::{shapley_exact, BackgroundSpec};
use proptest::prelude::*;

fn csv_strategy() -> impl Strategy<Value = String> {
    (2usize..5, 3usize..12).prop_flat_map(|(d, n)| {
        let cell = prop_oneof![
            1 => Just("?".to_string()),
            4 => (-50i32..50).prop_map(|v| v.to_string()),
        ];
        let row = (proptest::collection::vec(cell, d), any::<bool>());
        proptest::collection::vec(row, n).prop_map(move |rows| {
            let mut s: String = (0..d).map(|j| format!("c{j},")).collect();
            s.push_str("y\n");
            for (i, (cells, label)) in rows.iter().enumerate() {
                // first two rows pin both classes and observe every column
                let cells: Vec<String> = if i < 2 {
                    cells
                        .iter()
                        .map(|c| if c == "?" { "0".into() } else { c.clone() })
                        .collect()
                } else {
                    cells.clone()
                };
                let label = if i < 2 { i == 0 } else { *label };
                s.push_str(&cells.join(","));
                s.push_str(if label { ",1\n" } else { ",0\n" });
            }
            s
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prepared_data_is_normalized_and_stable(csv in csv_strategy()) {
        let table = parse_csv(&csv, "y", None).unwrap();
        let ds = prepare(&table).unwrap();
        for j in 0..ds.d() {
            prop_assert!(ds.column(j).all(|v| (0.0..=1.0).contains(&v)));
            prop_assert!((0.0..=1.0).contains(&ds.medians()[j]));
        }
        let again = prepare(&ds.to_raw_table("y")).unwrap();
        for j in 0..ds.d() {
            let a: Vec<f64> = ds.column(j).collect();
            let b: Vec<f64> = again.column(j).collect();
            prop_assert_eq!(a, b);
        }
        prop_assert_eq!(ds.medians(), again.medians());
        prop_assert_eq!(ds.labels(), again.labels());
    }

    #[test]
    fn splits_cover_every_index(n in 1usize..200, k in 1usize..12, seed in any::<u64>()) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let ds = Dataset::from_unnamed(&rows, &labels).unwrap();
        let k = k.min(n);
        let p = horizontal_split(&ds, k, seed).unwrap();
        let mut all: Vec<usize> = p.parts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = p.parts.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

        let g = contiguous_groups(n, k).unwrap();
        prop_assert_eq!(g.groups.concat(), (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn exact_shapley_efficiency(
        d in 1usize..7,
        coef in proptest::collection::vec(-2.0f64..2.0, 12),
        x in proptest::collection::vec(0.0f64..1.0, 6),
        r in proptest::collection::vec(0.0f64..1.0, 6),
    ) {
        let c = coef.clone();
        let f = FnPredictor::new(d, move |v: &[f64]| {
            let lin: f64 = v.iter().zip(&c).map(|(a, b)| a * b).sum();
            let inter: f64 = v.windows(2).zip(&c[6..]).map(|(w, b)| b * w[0] * w[1]).sum();
            (lin + inter).tanh()
        });
        let bg = BackgroundSpec::ReferenceVector(r[..d].to_vec());
        let res = shapley_exact(&f, &x[..d], &bg).unwrap();
        let sum: f64 = res.per_feature().iter().sum();
        let want = f.predict(&x[..d]).unwrap() - f.predict(&r[..d]).unwrap();
        prop_assert!((sum - want).abs() < 1e-9);
        prop_assert!((res.prediction - res.baseline - want).abs() < 1e-12);
    }

    #[test]
    fn dummy_symmetry_and_linearity(
        w in proptest::collection::vec(-3.0f64..3.0, 5),
        zero_at in 0usize..5,
        x in proptest::collection::vec(0.0f64..1.0, 5),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let mut w = w;
        w[zero_at] = 0.0;
        let lin = make_linear_oracle(w.clone(), 0.3);
        let bg = BackgroundSpec::ReferenceVector(vec![0.2; 5]);
        let phi = shapley_exact(&lin, &x, &bg).unwrap().per_feature();
        prop_assert!(phi[zero_at].abs() < 1e-12);

        // features 0 and 1 enter symmetrically and share a value
        let mut xs = x.clone();
        xs[1] = xs[0];
        let sym = FnPredictor::new(5, |v: &[f64]| (v[0] + v[1]).powi(2) * v[2] + v[3] * v[0] * v[1] - v[4]);
        let phi = shapley_exact(&sym, &xs, &bg).unwrap().per_feature();
        prop_assert!((phi[0] - phi[1]).abs() < 1e-9);

        let g = FnPredictor::new(5, |v: &[f64]| (v[0] * v[4]).sin() + v[2] * v[3]);
        let combo = FnPredictor::new(5, |v: &[f64]| {
            a * lin.predict_unchecked(v) + b * g.predict_unchecked(v)
        });
        let pf = shapley_exact(&lin, &x, &bg).unwrap().per_feature();
        let pg = shapley_exact(&g, &x, &bg).unwrap().per_feature();
        let pc = shapley_exact(&combo, &x, &bg).unwrap().per_feature();
        for j in 0..5 {
            prop_assert!((pc[j] - (a * pf[j] + b * pg[j])).abs() < 1e-9);
        }
    }

    #[test]
    fn protocol_matches_monolithic_masking(mask_bits in 0u32..64, instance in 0usize..9, groups in 1usize..7) {
        let rows: Vec<Vec<f64>> = (0..9)
            .map(|i| (0..6).map(|j| ((i * 3 + j * 5) % 7) as f64 / 6.0).collect())
            .collect();
        let labels: Vec<u8> = (0..9).map(|i| (i % 2) as u8).collect();
        let ds = Dataset::from_unnamed(&rows, &labels).unwrap();
        let model = make_linear_oracle(vec![0.3, -1.0, 2.0, 0.7, -0.2, 1.1], 0.1);
        let mut fed = assemble_federation(&ds, &contiguous_groups(6, groups).unwrap(), 3).unwrap();
        fed.register_model(model.clone()).unwrap();
        let mask: Vec<bool> = (0..6).map(|j| mask_bits >> j & 1 == 1).collect();
        let mut s = fed.session(true);
        let got = s.federated_predict(fed.token(instance).unwrap(), &mask).unwrap();
        let direct: Vec<f64> = (0..6)
            .map(|j| if mask[j] { ds.row(instance)[j] } else { ds.medians()[j] })
            .collect();
        prop_assert_eq!(got.to_bits(), model.predict(&direct).unwrap().to_bits());
        prop_assert!(privacy_audit(s.transcript()).pass);
        let space = ReducedSpace::all_parties(&fed);
        prop_assert_eq!(space.expand(&vec![true; space.len()]), vec![true; 6]);
    }
}

fn small_dataset() -> Dataset {
    let rows: Vec<Vec<f64>> = (0..14)
        .map(|i| vec![(i % 7) as f64 / 6.0, ((i * 3) % 5) as f64 / 4.0])
        .collect();
    let labels: Vec<u8> = rows
        .iter()
        .map(|r| u8::from(r[0] + 0.3 * r[1] > 0.55))
        .collect();
    Dataset::from_unnamed(&rows, &labels).unwrap()
}

#[test]
fn batch_influence_is_nonnegative_and_deterministic() {
    let ds = small_dataset();
    for cfg in [ModelConfig::logistic(), ModelConfig::kernel_rbf()] {
        let p = horizontal_split(&ds, 3, 8).unwrap();
        let a = influence_group_batch(&cfg, &ds, &p, &ds.all_indices(), 8).unwrap();
        let b = influence_group_batch(&cfg, &ds, &p, &ds.all_indices(), 8).unwrap();
        assert_eq!(a, b);
        assert!(a.parties.iter().all(|q| q.influence >= 0.0));
    }
}

#[test]
fn duplicated_parties_get_equal_influence() {
    // party 0 and party 1 hold element-wise identical rows
    let base = small_dataset();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..2 {
        for i in 0..5 {
            rows.push(base.row(i).to_vec());
            labels.push(base.label(i));
        }
    }
    for i in 5..base.n() {
        rows.push(base.row(i).to_vec());
        labels.push(base.label(i));
    }
    let ds = Dataset::from_unnamed(&rows, &labels).unwrap();
    let p = HorizontalPartition::new(
        vec![(0..5).collect(), (5..10).collect(), (10..ds.n()).collect()],
        ds.n(),
    )
    .unwrap();
    for cfg in [ModelConfig::logistic(), ModelConfig::kernel_rbf()] {
        let r = influence_group_batch(&cfg, &ds, &p, &ds.all_indices(), 0).unwrap();
        let (a, b) = (r.parties[0].influence, r.parties[1].influence);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn singleton_partition_equals_single_deletions() {
    let ds = small_dataset();
    let cfg = ModelConfig::kernel_rbf();
    let p = HorizontalPartition::new((0..ds.n()).map(|i| vec![i]).collect(), ds.n()).unwrap();
    let r = influence_group_batch(&cfg, &ds, &p, &ds.all_indices(), 0).unwrap();
    let ctx = DeletionContext::new(&cfg, &ds, &ds.all_indices()).unwrap();
    for (i, party) in r.parties.iter().enumerate() {
        let single = ctx.influence_single(i).unwrap();
        assert!((party.influence - single).abs() < 1e-12);
    }
}
