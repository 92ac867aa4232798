use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::InteractionGraph;
use crate::model::{forward, ModelParams, VariantFlags};
use crate::train::{LossSwitches, Objective, RegScope};

#[test]
fn topk_examples() {
    assert_eq!(topk(&[3, 1, 2], 2, &[]), [0, 2]);
    assert_eq!(topk(&[3, 1, 2], 2, &[0]), [2, 1]);
    assert_eq!(topk(&[1, 1, 1], 2, &[]), [0, 1]);
    assert_eq!(topk(&[1.0, 5.0], 5, &[]), [1, 0]);
    assert_eq!(topk(&[0.0f64, -0.0, 0.0], 3, &[]), [0, 1, 2]);
    assert!(topk(&[1, 2], 0, &[]).is_empty());
    assert!(topk(&[1, 2], 3, &[0, 1]).is_empty());
}

proptest! {
    #[test]
    fn topk_matches_full_sort(
        scores in proptest::collection::vec(-5i32..5, 1..60),
        k in 1usize..70,
        mask in any::<u64>(),
    ) {
        let exclude: Vec<u32> = (0..scores.len() as u32).filter(|i| mask >> (i % 64) & 1 == 1).collect();
        let mut all: Vec<u32> = (0..scores.len() as u32).filter(|i| !exclude.contains(i)).collect();
        all.sort_by(|&a, &b| scores[b as usize].cmp(&scores[a as usize]).then(a.cmp(&b)));
        all.truncate(k);
        let got = topk(&scores, k, &exclude);
        prop_assert!(got.iter().all(|i| !exclude.contains(i)));
        prop_assert_eq!(got, all);
    }

    #[test]
    fn topk_ignores_positive_affine_maps(
        scores in proptest::collection::vec(-100.0f64..100.0, 1..50),
        a in 0.01f64..10.0,
        b in -10.0f64..10.0,
    ) {
        // Integer-valued scores keep the affine image exact.
        let s: Vec<f64> = scores.iter().map(|x| x.round()).collect();
        let t: Vec<f64> = s.iter().map(|x| a.round().max(1.0) * x + b.round()).collect();
        prop_assert_eq!(topk(&s, 10, &[]), topk(&t, 10, &[]));
    }
}

#[test]
fn metric_examples() {
    let (a, b, c) = (0u32, 1u32, 2u32);
    assert_eq!(recall_at_k(&[a, c], &[a, b], 2).unwrap(), 0.5);
    assert_eq!(recall_at_k(&[b, a], &[a, b], 2).unwrap(), 1.0);
    assert_eq!(recall_at_k(&[c], &[a, b], 2).unwrap(), 0.0);
    let g = ndcg_at_k(&[a, c], &[a, b], 2).unwrap();
    assert!((g - 0.6131).abs() < 1e-4, "{g}");
    assert_eq!(ndcg_at_k(&[b, a, c], &[a, b], 3).unwrap(), 1.0);
    assert_eq!(ndcg_at_k(&[c], &[a, b], 1).unwrap(), 0.0);
    assert!(recall_at_k(&[a], &[], 1).is_err());
    assert!(ndcg_at_k(&[a], &[], 1).is_err());
}

fn random_table(
    rng: &mut impl Rng,
    users: usize,
    items: usize,
    layers: usize,
    d: usize,
    anl: bool,
) -> QuantizedTable {
    let n = users + items;
    let mut packed = Vec::new();
    for _ in 0..n * layers {
        let code: Vec<i8> = (0..d)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        packed.extend(crate::store::pack_codes(&code).unwrap());
    }
    let alphas = anl.then(|| {
        (0..n * layers)
            .map(|_| rng.random_range(0.0f32..2.0))
            .collect()
    });
    QuantizedTable::from_parts(users, items, layers, d, packed, alphas).unwrap()
}

#[test]
fn int_aggregate_examples() {
    let mut packed = Vec::new();
    for code in [[1i8, 1], [1, -1], [-1, -1]] {
        packed.extend(crate::store::pack_codes(&code).unwrap());
    }
    let table = QuantizedTable::from_parts(1, 0, 3, 2, packed, None).unwrap();
    assert_eq!(
        int_aggregate(&table, 0).unwrap(),
        Aggregate::Int(vec![1, -1])
    );
    assert!(int_aggregate(&table, 1).is_err());

    let mut packed = Vec::new();
    for _ in 0..2 * 3 {
        packed.extend(crate::store::pack_codes(&[1, -1, 1]).unwrap());
    }
    let table = QuantizedTable::from_parts(1, 1, 3, 3, packed, None).unwrap();
    assert_eq!(
        int_aggregate(&table, 1).unwrap(),
        Aggregate::Int(vec![3, -3, 3])
    );
    // Identical codes everywhere give the maximum score (L+1)^2 d.
    assert_eq!(score_all_items(&table, 0).unwrap(), Scores::Int(vec![27]));
}

#[test]
fn integer_scores_equal_float_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for d in [1, 7, 64, 128] {
        let table = random_table(&mut rng, 6, 9, 3, d, false);
        let int = IntScorer::from_table(&table).unwrap();
        let float = FloatScorer::from_table(&table).unwrap();
        let mut is = Vec::new();
        let mut fs = Vec::new();
        for u in 0..6 {
            int.score_into(u, &mut is).unwrap();
            float.score_into(u, &mut fs).unwrap();
            let oracle: Vec<f64> = (0..9)
                .map(|i| {
                    (0..d)
                        .map(|j| {
                            let s = |x: usize| {
                                (0..3)
                                    .map(|l| f64::from(table.code(x, l).unwrap()[j]))
                                    .sum::<f64>()
                            };
                            s(u) * s(6 + i)
                        })
                        .sum()
                })
                .collect();
            assert_eq!(is.iter().map(|&x| f64::from(x)).collect::<Vec<_>>(), oracle);
            assert_eq!(fs.iter().map(|&x| f64::from(x)).collect::<Vec<_>>(), oracle);
            assert_eq!(score_all_items(&table, u).unwrap(), Scores::Int(is.clone()));
            assert!(is.iter().all(|s| s.unsigned_abs() as usize <= 9 * d));
        }
    }
}

#[test]
fn anl_table_scores_use_factors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let table = random_table(&mut rng, 3, 4, 3, 16, true);
    assert!(IntScorer::from_table(&table).is_err());
    let float = FloatScorer::from_table(&table).unwrap();
    let mut fs = Vec::new();
    float.score_into(1, &mut fs).unwrap();
    assert_eq!(score_all_items(&table, 1).unwrap(), Scores::Float(fs));
    let Aggregate::Float(agg) = int_aggregate(&table, 0).unwrap() else {
        panic!()
    };
    let manual: f32 = (0..3)
        .map(|l| table.alpha(0, l).unwrap().unwrap() * f32::from(table.code(0, l).unwrap()[0]))
        .sum();
    assert_eq!(agg[0], manual);
}

/// Brute force: full sort of every item, then set arithmetic.
fn oracle(scores: &Array2<f64>, split: &SplitDataset, k: usize) -> (f64, f64) {
    let mut users = 0;
    let (mut recall, mut ndcg) = (0.0, 0.0);
    for u in 0..scores.nrows() {
        let pos = &split.test_positives[u];
        if pos.is_empty() {
            continue;
        }
        users += 1;
        let train = split.train.user_items(u);
        let mut items: Vec<u32> = (0..scores.ncols() as u32)
            .filter(|i| !train.contains(i))
            .collect();
        items.sort_by(|&a, &b| {
            scores[[u, b as usize]]
                .partial_cmp(&scores[[u, a as usize]])
                .unwrap()
                .then(a.cmp(&b))
        });
        let top = &items[..k.min(items.len())];
        let hit = top.iter().filter(|i| pos.contains(i)).count();
        recall += hit as f64 / pos.len() as f64;
        let dcg: f64 = top
            .iter()
            .enumerate()
            .filter(|(_, i)| pos.contains(i))
            .map(|(r, _)| 1.0 / (r as f64 + 2.0).log2())
            .sum();
        let idcg: f64 = (0..k.min(pos.len()))
            .map(|r| 1.0 / (r as f64 + 2.0).log2())
            .sum();
        ndcg += dcg / idcg;
    }
    (recall / users as f64, ndcg / users as f64)
}

#[test]
fn evaluate_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let users = rng.random_range(1..=10usize);
        let items = rng.random_range(2..=10usize);
        let mut train = Vec::new();
        let mut test = vec![Vec::new(); users];
        for (u, held_out) in test.iter_mut().enumerate() {
            for i in 0..items as u32 {
                match rng.random_range(0..4) {
                    0 => train.push((u as u32, i)),
                    1 => held_out.push(i),
                    _ => {}
                }
            }
        }
        let graph = InteractionGraph::from_edges(users, items, train).unwrap();
        let split = SplitDataset {
            train: graph,
            test_positives: test,
        };
        if split.evaluable_users().next().is_none() {
            continue;
        }
        let d = 3;
        let rows = Array2::from_shape_fn((users + items, d), |_| {
            f64::from(rng.random_range(-2i32..=2))
        });
        let scorer = DenseScorer::from_rows(rows.clone(), users).unwrap();
        let scores = Array2::from_shape_fn((users, items), |(u, i)| {
            rows.row(u).dot(&rows.row(users + i))
        });
        let report = evaluate(&scorer, &split, &[1, 3, 5]).unwrap();
        for row in &report.rows {
            let (r, g) = oracle(&scores, &split, row.k);
            assert_eq!((row.recall, row.ndcg), (r, g));
        }
        assert_eq!(report, evaluate(&scorer, &split, &[1, 3, 5]).unwrap());
    }
}

#[test]
fn evaluate_rejects_bad_inputs() {
    let graph = InteractionGraph::from_edges(2, 3, [(0, 0), (1, 1)]).unwrap();
    let scorer = DenseScorer::from_rows(Array2::zeros((5, 2)), 2).unwrap();
    let empty = SplitDataset {
        train: graph.clone(),
        test_positives: vec![vec![], vec![]],
    };
    assert!(matches!(
        evaluate(&scorer, &empty, &[20]),
        Err(Error::NoEvaluableUsers(_))
    ));
    let split = SplitDataset {
        train: graph,
        test_positives: vec![vec![2], vec![]],
    };
    assert!(evaluate(&scorer, &split, &[]).is_err());
    let wrong = DenseScorer::from_rows(Array2::zeros((6, 2)), 2).unwrap();
    assert!(matches!(
        evaluate(&wrong, &split, &[20]),
        Err(Error::Shape(_))
    ));
    let report = evaluate(&scorer, &split, &DEFAULT_KS).unwrap();
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .starts_with("K,recall,ndcg,users\n20,"));
}

#[test]
fn bench_reports_identical_rankings_for_plain_codes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let table = random_table(&mut rng, 20, 300, 3, 64, false);
    let float = FloatScorer::from_table(&table).unwrap();
    let workload: Vec<usize> = (0..20).collect();
    let report = bench_inference(&table, &float, &workload, 10, 3).unwrap();
    assert!(report.identical_rankings);
    assert!(report.int_path_seconds > 0.0 && report.float_path_seconds > 0.0);
    assert!(bench_inference(&table, &float, &[], 10, 3).is_err());
    assert!(bench_inference(&table, &float, &workload, 10, 2).is_err());
}

fn landscape_setup() -> (InteractionGraph, ModelParams) {
    let graph = InteractionGraph::from_edges(
        4,
        5,
        [
            (0, 0),
            (0, 1),
            (1, 1),
            (1, 2),
            (2, 3),
            (2, 4),
            (3, 0),
            (3, 4),
        ],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let e = Array2::from_shape_fn((9, 4), |_| rng.random_range(-1.0..1.0));
    let w = Array2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0));
    (graph, ModelParams::new(e, w, 2, None).unwrap())
}

#[test]
fn landscape_origin_is_the_unperturbed_loss() {
    let (graph, params) = landscape_setup();
    let batch = landscape_batch(&graph, 6, 1, 1, 9).unwrap();
    let grid = signed_grid(0.05, 0.01).unwrap();
    assert_eq!(grid.len(), 11);
    for flags in [
        VariantFlags::end(),
        VariantFlags::anl(),
        VariantFlags::end().with_quantization(false),
    ] {
        for reg_scope in [RegScope::All, RegScope::Batch] {
            let objective = Objective {
                graph: &graph,
                flags,
                l2_coeff: 1e-2,
                switches: LossSwitches::default(),
                reg_scope,
            };
            let out = perturb_landscape(&objective, &params, &batch, &grid).unwrap();
            assert_eq!(out.losses.dim(), (11, 11));
            assert_eq!(
                out.at(0.0, 0.0).unwrap(),
                objective.loss(&params, &batch).unwrap().total
            );
        }
    }
}

#[test]
fn landscape_matches_explicit_perturbation() {
    let (graph, params) = landscape_setup();
    let batch = landscape_batch(&graph, 6, 1, 1, 9).unwrap();
    let grid = [-0.3, 0.2];
    let cases = [
        (VariantFlags::anl(), RegScope::All),
        (VariantFlags::anl(), RegScope::Batch),
        (
            VariantFlags::end().with_quantization(false),
            RegScope::Batch,
        ),
    ];
    for (flags, reg_scope) in cases {
        let objective = Objective {
            graph: &graph,
            flags,
            l2_coeff: 1e-2,
            switches: LossSwitches::default(),
            reg_scope,
        };
        let out = perturb_landscape(&objective, &params, &batch, &grid).unwrap();
        for &pu in &grid {
            for &pi in &grid {
                let mut shifted = params.clone();
                for (x, mut row) in shifted.embeddings.rows_mut().into_iter().enumerate() {
                    let m = row.iter().map(|v| v.abs()).sum::<f64>() / 4.0;
                    let p = if x < 4 { pu } else { pi };
                    row.mapv_inplace(|v| v + p * m);
                }
                let direct = objective.loss(&shifted, &batch).unwrap().total;
                // Codes could flip on rounding at exactly zero; not with this seed.
                assert!(
                    (out.at(pu, pi).unwrap() - direct).abs() < 1e-10,
                    "{pu},{pi}"
                );
            }
        }
        let _ = forward(&params, &graph, &flags).unwrap();
    }
    let mut csv = Vec::new();
    let objective = Objective {
        graph: &graph,
        flags: VariantFlags::end(),
        l2_coeff: 0.0,
        switches: LossSwitches::default(),
        reg_scope: RegScope::All,
    };
    perturb_landscape(&objective, &params, &batch, &grid)
        .unwrap()
        .write_csv(&mut csv)
        .unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
}
