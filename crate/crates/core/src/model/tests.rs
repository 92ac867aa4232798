use super::*;
use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// A one-node cache holding the given codes and alphas.
fn single_node_cache(codes: &[&[i8]], alphas: &[f64]) -> ForwardCache {
    let d = codes[0].len();
    ForwardCache {
        continuous: codes.iter().map(|_| Array2::zeros((1, d))).collect(),
        preactivation: codes.iter().map(|_| Array2::zeros((1, d))).collect(),
        codes: codes
            .iter()
            .map(|c| Array2::from_shape_vec((1, d), c.to_vec()).unwrap())
            .collect(),
        alphas: alphas.iter().map(|&a| array![a]).collect(),
        learned_factors: None,
    }
}

#[test]
fn sign_tie_rule() {
    assert_eq!(sign(&[0.3, -0.2, 0.0]).unwrap(), vec![1, -1, 1]);
    assert_eq!(sign(&[-1.0, -2.0, -1e-300]).unwrap(), vec![-1, -1, -1]);
    assert!(sign(&[f64::NAN]).is_err());
    assert!(sign(&[f64::INFINITY]).is_err());
}

proptest! {
    #[test]
    fn sign_is_idempotent(x in proptest::collection::vec(-10.0f64..10.0, 1..32)) {
        let once = sign(&x).unwrap();
        let as_real: Vec<f64> = once.iter().map(|&q| f64::from(q)).collect();
        prop_assert_eq!(sign(&as_real).unwrap(), once);
    }
}

#[test]
fn quantize_layer_small_example() {
    let v = array![[1.0, 2.0]];
    let w = array![[1.0, -1.0], [0.0, 1.0]];
    let (pre, codes) = quantize_layer(v.view(), w.view()).unwrap();
    assert_eq!(pre, array![[1.0, 1.0]]);
    assert_eq!(codes, array![[1i8, 1]]);
}

#[test]
fn quantize_layer_identity_and_shape() {
    let v = array![[0.5, -0.1, 0.0]];
    let (_, codes) = quantize_layer(v.view(), Array2::eye(3).view()).unwrap();
    assert_eq!(codes, array![[1i8, -1, 1]]);
    assert!(matches!(
        quantize_layer(v.view(), Array2::eye(2).view()),
        Err(Error::Shape(_))
    ));
}

#[test]
fn quantize_layer_matches_naive_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = random_matrix(&mut rng, 3, 4);
    let w = random_matrix(&mut rng, 4, 2);
    let (pre, _) = quantize_layer(v.view(), w.view()).unwrap();
    for r in 0..3 {
        for c in 0..2 {
            let naive: f64 = (0..4).map(|k| v[[r, k]] * w[[k, c]]).sum();
            assert_abs_diff_eq!(pre[[r, c]], naive, epsilon = 1e-14);
        }
    }
}

#[test]
fn rescale_factor_examples() {
    assert_eq!(rescale_factor(&[2.0, -2.0, 2.0, -2.0], 4), 2.0);
    assert_eq!(rescale_factor(&[0.0; 4], 4), 0.0);
    assert_eq!(rescale_factor(&[1.0, -3.0, 0.0, 2.0], 4), 1.5);
    let v = [2.0, -2.0, 2.0, -2.0];
    let codes = sign(&v).unwrap();
    let recon: Vec<f64> = codes.iter().map(|&q| 2.0 * f64::from(q)).collect();
    assert_eq!(recon, v);
}

proptest! {
    #[test]
    fn rescaled_reconstruction_bound(v in proptest::collection::vec(-5.0f64..5.0, 1..16)) {
        let alpha = rescale_factor(&v, v.len());
        let codes = sign(&v).unwrap();
        let err: f64 = v.iter().zip(&codes).map(|(x, &q)| (x - alpha * f64::from(q)).abs()).sum();
        let norm: f64 = v.iter().map(|x| x.abs()).sum();
        prop_assert!(err <= norm + 1e-12);
        if norm > 0.0 {
            prop_assert!(err < norm);
        }
    }
}

#[test]
fn forward_two_node_trace() {
    let g = InteractionGraph::from_edges(1, 1, [(0, 0)]).unwrap();
    let params =
        ModelParams::new(array![[0.5, -0.25], [-1.0, 2.0]], Array2::eye(2), 1, None).unwrap();
    let cache = forward(&params, &g, &VariantFlags::anl()).unwrap();
    // A single edge with unit degrees swaps the two rows.
    assert_eq!(cache.continuous[1], array![[-1.0, 2.0], [0.5, -0.25]]);
    assert_eq!(cache.codes[0], array![[1i8, -1], [-1, 1]]);
    assert_eq!(cache.codes[1], array![[-1i8, 1], [1, -1]]);
    assert_eq!(cache.alphas[0], array![0.375, 1.5]);
    assert_eq!(cache.alphas[1], array![1.5, 0.375]);

    let f = aggregate(&cache, &VariantFlags::anl(), false);
    assert_eq!(
        f,
        array![[0.375 - 1.5, -0.375 + 1.5], [-1.5 + 0.375, 1.5 - 0.375]]
    );
}

#[test]
fn masked_quantization_is_full_precision_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = InteractionGraph::from_edges(3, 4, [(0, 0), (0, 1), (1, 1), (2, 3), (1, 2)]).unwrap();
    let params = ModelParams::init(7, 4, 3, 2, false, &mut rng).unwrap();
    let flags = VariantFlags::end().with_quantization(false);
    let cache = forward(&params, &g, &flags).unwrap();
    let f = aggregate(&cache, &flags, false);

    let v1 = g.propagate(params.embeddings.view()).unwrap();
    let v2 = g.propagate(v1.view()).unwrap();
    let expected = (&params.embeddings + &v1 + &v2).dot(&params.transform);
    for (a, b) in f.iter().zip(expected.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
    }
}

#[test]
fn zero_layers_rejected() {
    let r = ModelParams::new(Array2::zeros((2, 2)), Array2::eye(2), 0, None);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn forward_checks_node_count_and_flags() {
    let g = InteractionGraph::from_edges(1, 1, [(0, 0)]).unwrap();
    let params = ModelParams::new(Array2::zeros((3, 2)), Array2::eye(2), 1, None).unwrap();
    assert!(matches!(
        forward(&params, &g, &VariantFlags::end()),
        Err(Error::Shape(_))
    ));

    let params = ModelParams::new(Array2::zeros((2, 2)), Array2::eye(2), 1, None).unwrap();
    let bad = VariantFlags {
        rescaling: Rescaling::Deterministic,
        ..VariantFlags::end()
    };
    assert!(forward(&params, &g, &bad).is_err());
    let learnable = VariantFlags {
        rescaling: Rescaling::Learnable,
        ..VariantFlags::anl()
    };
    assert!(forward(&params, &g, &learnable).is_err());
}

#[test]
fn aggregate_sum_and_shrink() {
    let cache = single_node_cache(&[&[1, 1], &[1, -1]], &[0.5, 2.0]);
    let end = VariantFlags::end();
    assert_eq!(aggregate(&cache, &end, false), array![[2.0, 0.0]]);
    assert_eq!(aggregate(&cache, &end, true), array![[1.0, 0.0]]);
    assert_eq!(
        aggregate(&cache, &VariantFlags::anl(), false),
        array![[2.5, -1.5]]
    );
}

#[test]
fn final_layer_only_ignores_earlier_codes() {
    let flags = VariantFlags {
        topology_aware: false,
        ..VariantFlags::end()
    };
    let a = single_node_cache(&[&[1, 1], &[1, -1]], &[1.0, 1.0]);
    let mut b = a.clone();
    b.codes[0] = array![[-1i8, -1]];
    assert_eq!(aggregate(&a, &flags, false), aggregate(&b, &flags, false));
    assert_eq!(aggregate(&a, &flags, false), array![[1.0, -1.0]]);
}

#[test]
fn served_representation_drops_continuous_layers() {
    let mut cache = single_node_cache(&[&[1, 1], &[1, -1]], &[1.0, 1.0]);
    cache.preactivation[0] = array![[0.25, -0.5]];
    let wo_tq = VariantFlags {
        topology_aware: false,
        ..VariantFlags::end()
    };
    assert_eq!(aggregate(&cache, &wo_tq, false), array![[1.25, -1.5]]);
    assert_eq!(served_representation(&cache, &wo_tq), array![[1.0, -1.0]]);
    let end = VariantFlags::end();
    assert_eq!(
        served_representation(&cache, &end),
        aggregate(&cache, &end, false)
    );
    let masked = end.with_quantization(false);
    assert_eq!(
        served_representation(&cache, &masked),
        aggregate(&cache, &masked, false)
    );
}

#[test]
fn learnable_factors_scale_codes() {
    let mut cache = single_node_cache(&[&[1, -1], &[1, 1]], &[9.0, 9.0]);
    cache.learned_factors = Some(array![[0.5, 3.0]]);
    let flags = VariantFlags {
        rescaling: Rescaling::Learnable,
        ..VariantFlags::anl()
    };
    assert_eq!(aggregate(&cache, &flags, false), array![[3.5, 2.5]]);
}

fn argsort_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

proptest! {
    #[test]
    fn shrink_preserves_rankings(seed in any::<u64>(), layers in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (users, items, d) = (3, 6, 5);
        let n = users + items;
        let codes: Vec<Array2<i8>> = (0..=layers)
            .map(|_| Array2::from_shape_simple_fn((n, d), || if rng.random::<bool>() { 1 } else { -1 }))
            .collect();
        let cache = ForwardCache {
            continuous: (0..=layers).map(|_| Array2::zeros((n, 1))).collect(),
            preactivation: (0..=layers).map(|_| Array2::zeros((n, d))).collect(),
            codes,
            alphas: (0..=layers)
                .map(|_| Array1::from_shape_simple_fn(n, || rng.random_range(0.01..2.0)))
                .collect(),
            learned_factors: None,
        };
        for flags in [VariantFlags::end(), VariantFlags::anl()] {
            let full = aggregate(&cache, &flags, false);
            let shrunk = aggregate(&cache, &flags, true);
            let items_idx: Vec<usize> = (0..items).collect();
            for u in 0..users {
                let a = predict_scores(full.slice(ndarray::s![..users, ..]), full.slice(ndarray::s![users.., ..]), u, &items_idx).unwrap();
                let b = predict_scores(shrunk.slice(ndarray::s![..users, ..]), shrunk.slice(ndarray::s![users.., ..]), u, &items_idx).unwrap();
                let (ra, rb) = (argsort_desc(&a), argsort_desc(&b));
                if flags.mode == Mode::Anl {
                    prop_assert_eq!(ra, rb);
                } else {
                    // Plain code sums tie exactly; dividing by L+1 rounds, so
                    // only the order within a tie may change.
                    let seq = |r: &[usize]| r.iter().map(|&i| a[i]).collect::<Vec<_>>();
                    prop_assert_eq!(seq(&ra), seq(&rb));
                }
            }
        }
    }
}

#[test]
fn predict_scores_examples() {
    let fu = array![[2.0, 0.0], [1.0, 1.0]];
    let fi = array![[0.0, -2.0], [1.0, 1.0]];
    assert_eq!(
        predict_scores(fu.view(), fi.view(), 0, &[0]).unwrap(),
        vec![0.0]
    );
    assert_eq!(
        predict_scores(fu.view(), fi.view(), 1, &[1]).unwrap(),
        vec![2.0]
    );
    assert!(predict_scores(fu.view(), fi.view(), 2, &[0]).is_err());
    assert!(predict_scores(fu.view(), fi.view(), 0, &[2]).is_err());
}

#[test]
fn predict_scores_match_gram_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fu = random_matrix(&mut rng, 5, 3);
    let fi = random_matrix(&mut rng, 7, 3);
    let gram = fu.dot(&fi.t());
    let all: Vec<usize> = (0..7).collect();
    for u in 0..5 {
        let s = predict_scores(fu.view(), fi.view(), u, &all).unwrap();
        for (i, v) in s.iter().enumerate() {
            assert_abs_diff_eq!(*v, gram[[u, i]], epsilon = 1e-14);
        }
    }
}
