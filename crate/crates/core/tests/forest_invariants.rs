use covrf::forest::split_value;
use covrf::{
    estimate_new, grow_forest, oob_estimates, Covariates, Dataset, ForestParams, Matrix,
    SplitSearch,
};
use proptest::prelude::*;

fn dataset(n: usize, p: usize, q: usize, xs: &[f64], ys: &[f64]) -> Dataset {
    let names = (0..p).map(|j| format!("x{j}")).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| xs[i * p..(i + 1) * p].to_vec()).collect();
    let x = Covariates::from_rows(names, &rows).unwrap();
    let y = Matrix::new(n, q, ys[..n * q].to_vec()).unwrap();
    Dataset::with_default_names(x, y).unwrap()
}

fn arb_data() -> impl Strategy<Value = Dataset> {
    (10usize..40, 1usize..4, 1usize..4).prop_flat_map(|(n, p, q)| {
        (
            prop::collection::vec(-3.0f64..3.0, n * p),
            prop::collection::vec(-3.0f64..3.0, n * q),
        )
            .prop_map(move |(xs, ys)| dataset(n, p, q, &xs, &ys))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trees_partition_their_subsample(data in arb_data(), seed in 0u64..1000, nodesize in 2usize..8) {
        let params = ForestParams::default().with_ntree(4).with_nodesize(nodesize).with_seed(seed);
        let forest = grow_forest(&data, &params).unwrap();
        let sampsize = (params.sampfrac * data.n() as f64).round() as usize;
        for tree in forest.trees() {
            prop_assert!(tree.validate().is_ok());
            prop_assert_eq!(tree.inbag().len(), sampsize);
            prop_assert_eq!(tree.inbag().len() + tree.oob().len(), data.n());
            let mut covered = 0;
            for leaf in tree.terminal_nodes() {
                covered += tree.node_rows(leaf).len();
            }
            prop_assert_eq!(covered, sampsize);
        }
    }

    #[test]
    fn split_value_ignores_response_shifts(
        data in arb_data(),
        cut in 2usize..8,
        shift in prop::collection::vec(-100.0f64..100.0, 3),
    ) {
        let n = data.n();
        let rows: Vec<usize> = (0..n).collect();
        let (left, right) = rows.split_at(cut.min(n - 2));
        let q = data.q();
        let shifted: Vec<f64> = (0..n * q).map(|i| data.y().get(i / q, i % q) + shift[i % q]).collect();
        let y2 = Matrix::new(n, q, shifted).unwrap();
        let a = split_value(left, right, data.y()).unwrap();
        let b = split_value(left, right, &y2).unwrap();
        prop_assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn estimates_are_symmetric(data in arb_data(), seed in 0u64..100) {
        let params = ForestParams::default().with_ntree(6).with_nodesize(3).with_seed(seed);
        let forest = grow_forest(&data, &params).unwrap();
        let est = oob_estimates(&forest).unwrap();
        prop_assert_eq!(est.len(), data.n());
        for s in &est.estimates {
            for j in 0..s.dim() {
                prop_assert!(s.get(j, j) >= 0.0);
                for k in 0..s.dim() {
                    prop_assert_eq!(s.get(j, k), s.get(k, j));
                }
            }
        }
    }
}

#[test]
fn growing_is_deterministic_for_a_seed() {
    let xs: Vec<f64> = (0..120).map(|i| ((i * 7919) % 97) as f64 / 97.0).collect();
    let ys: Vec<f64> = (0..120)
        .map(|i| ((i * 104729) % 89) as f64 / 89.0 - 0.5)
        .collect();
    let data = dataset(60, 2, 2, &xs, &ys);
    for nsplit in [
        SplitSearch::Auto,
        SplitSearch::Exhaustive,
        SplitSearch::Random(3),
    ] {
        let params = ForestParams {
            nsplit,
            ..ForestParams::default().with_ntree(20).with_seed(5)
        };
        let a = grow_forest(&data, &params).unwrap();
        let b = grow_forest(&data, &params).unwrap();
        assert_eq!(a.trees(), b.trees());
        let c = grow_forest(&data, &params.clone().with_seed(6)).unwrap();
        assert_ne!(a.trees(), c.trees());
        assert_eq!(
            estimate_new(&a, data.x()).unwrap(),
            estimate_new(&b, data.x()).unwrap()
        );
    }
}

#[test]
fn rebuilt_forest_matches_original() {
    let xs: Vec<f64> = (0..80).map(|i| (i as f64 * 0.37).sin()).collect();
    let ys: Vec<f64> = (0..120).map(|i| (i as f64 * 1.3).cos()).collect();
    let data = dataset(40, 2, 3, &xs, &ys);
    let forest = grow_forest(&data, &ForestParams::default().with_ntree(8).with_seed(1)).unwrap();
    let rebuilt = covrf::Forest::from_parts(
        forest.params().clone(),
        forest.trees().to_vec(),
        forest.data().clone(),
    )
    .unwrap();
    assert_eq!(
        oob_estimates(&forest).unwrap(),
        oob_estimates(&rebuilt).unwrap()
    );

    let short = covrf::Forest::from_parts(
        forest.params().clone(),
        forest.trees()[..3].to_vec(),
        forest.data().clone(),
    );
    assert!(short.is_err());
}
