#![allow(clippy::needless_range_loop)]

use grasp_nas::predictor::{
    embed_batch, loss_and_grad, objective, probabilities, ranking_loss, train, EncodedGraph,
    EncoderConfig, HeadKind, Hyper, ModelConfig, PairLabel, Params, PredictorModel, RankTarget,
    Readout, TrainConfig, FEATURES,
};
use grasp_nas::search_space::{sample_unique, ArchSpec, LayerType, MAX_NODES};
use grasp_nas::shapes::{infer_shapes, ShapeNormalizer, TensorShape};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cifar() -> TensorShape {
    TensorShape::new(3, 32, 32).unwrap()
}

fn encoder_for(specs: &[ArchSpec]) -> EncoderConfig {
    let shapes: Vec<_> = specs.iter().map(|s| infer_shapes(s, cifar()).unwrap()).collect();
    EncoderConfig {
        normalizer: ShapeNormalizer::default().covering(&shapes),
        ..EncoderConfig::default()
    }
}

fn graphs(count: usize, seed: u64) -> (Vec<ArchSpec>, Vec<EncodedGraph>) {
    let specs = sample_unique(count, seed, 0.5).unwrap();
    let enc = encoder_for(&specs);
    let gs = specs.iter().map(|s| enc.encode_spec(s, cifar()).unwrap()).collect();
    (specs, gs)
}

/// Straightforward dense re-implementation over all 18 padded rows.
fn naive_embedding(g: &EncodedGraph, params: &Params, readout: Readout) -> Vec<f64> {
    let n_real = g.mask.iter().filter(|&&m| m).count() as f64;
    let mut h: Vec<Vec<f64>> = (0..MAX_NODES).map(|i| g.x.row(i).to_vec()).collect();
    let mut pooled = Vec::new();
    for w in &params.gcn {
        let (rows, cols) = w.dim();
        let mut hw = vec![vec![0.0; cols]; MAX_NODES];
        for i in 0..MAX_NODES {
            for k in 0..rows {
                for j in 0..cols {
                    hw[i][j] += h[i][k] * w[[k, j]];
                }
            }
        }
        let mut next = vec![vec![0.0; cols]; MAX_NODES];
        for i in 0..MAX_NODES {
            for k in 0..MAX_NODES {
                for j in 0..cols {
                    next[i][j] += g.a_norm[[i, k]] * hw[k][j];
                }
            }
            for v in next[i].iter_mut() {
                *v = v.max(0.0);
            }
        }
        h = next;
        let mut mean = vec![0.0; cols];
        for i in 0..MAX_NODES {
            if g.mask[i] {
                for j in 0..cols {
                    mean[j] += h[i][j] / n_real;
                }
            }
        }
        pooled.push(mean);
    }
    match readout {
        Readout::Final => pooled.pop().unwrap(),
        Readout::DenseSkip => pooled.concat(),
    }
}

fn random_params(config: &ModelConfig, rng: &mut ChaCha8Rng, scale: f64) -> Params {
    let mut p = Params::zeros(config);
    for w in p.gcn.iter_mut() {
        w.mapv_inplace(|_| rng.random_range(-scale..scale));
    }
    p.head_w.mapv_inplace(|_| rng.random_range(-scale..scale));
    p.head_b = rng.random_range(-scale..scale);
    p
}

#[test]
fn forward_matches_dense_reimplementation() {
    let (_, gs) = graphs(12, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for readout in [Readout::Final, Readout::DenseSkip] {
        let config = ModelConfig {
            units: 17,
            readout,
            ..ModelConfig::default()
        };
        let params = random_params(&config, &mut rng, 0.5);
        let refs: Vec<&EncodedGraph> = gs.iter().collect();
        let fwd = embed_batch(&config, &params, &refs);
        for (i, g) in gs.iter().enumerate() {
            let expected = naive_embedding(g, &params, readout);
            for (a, b) in fwd.embeddings.row(i).iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn full_size_forward_matches_dense_reimplementation() {
    let (_, gs) = graphs(2, 8);
    let model = PredictorModel::new(ModelConfig::default(), Hyper::default(), EncoderConfig::default(), 3);
    for g in &gs {
        let fast = model.embed(g);
        let slow = naive_embedding(g, &model.params, Readout::Final);
        assert_eq!(fast.len(), 265);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_weights_give_zero_embedding() {
    let (_, gs) = graphs(3, 2);
    let config = ModelConfig::default();
    let model = PredictorModel::from_parts(
        config,
        Hyper::default(),
        EncoderConfig::default(),
        Params::zeros(&config),
        Params::zeros(&config),
    )
    .unwrap();
    for g in &gs {
        assert!(model.embed(g).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn nonnegative_single_node_is_linear() {
    let g = grasp_nas::predictor::encode::encode_parts(
        &grasp_nas::search_space::Adjacency::zeros(1),
        &[LayerType::Conv3x3Double],
        &[[0.25, 0.5, 0.75]],
        Default::default(),
    )
    .unwrap();
    let config = ModelConfig {
        units: 6,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = random_params(&config, &mut rng, 1.0);
    for w in params.gcn.iter_mut() {
        w.mapv_inplace(f64::abs);
    }
    let model = PredictorModel::from_parts(
        config,
        Hyper::default(),
        EncoderConfig::default(),
        params.clone(),
        Params::zeros(&config),
    )
    .unwrap();
    let x0: Array1<f64> = g.x.row(0).to_owned();
    let expected = x0.dot(&params.gcn[0]).dot(&params.gcn[1]).dot(&params.gcn[2]);
    let got = model.embed(&g);
    for (a, b) in got.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn padding_rows_do_not_change_the_embedding() {
    let (_, gs) = graphs(5, 6);
    let model = PredictorModel::new(
        ModelConfig {
            units: 9,
            ..ModelConfig::default()
        },
        Hyper::default(),
        EncoderConfig::default(),
        1,
    );
    for g in &gs {
        // Stray values in padded rows are masked out of both propagation and pooling.
        let mut noisy = g.clone();
        let n = g.nodes();
        for i in n..MAX_NODES {
            for j in 0..FEATURES {
                noisy.x[[i, j]] = 0.7;
            }
        }
        assert_eq!(model.embed(g), model.embed(&noisy));
        let reference = naive_embedding(g, &model.params, Readout::Final);
        for (a, b) in model.embed(g).iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn pair_head_contracts() {
    let (_, gs) = graphs(40, 9);
    let model = PredictorModel::new(ModelConfig::default(), Hyper::default(), EncoderConfig::default(), 2);
    for i in 0..gs.len() {
        let (p, q) = model.rank_pair(&gs[i], &gs[i]);
        assert_eq!((p, q), (0.5, 0.5));
        let j = (i * 7 + 3) % gs.len();
        let (p12, p21) = model.rank_pair(&gs[i], &gs[j]);
        let (r12, r21) = model.rank_pair(&gs[j], &gs[i]);
        assert_eq!(p12 + p21, 1.0);
        assert_eq!((p12, p21), (r21, r12));
        assert_eq!(p12 + r12, 1.0);
    }
}

#[test]
fn probabilities_sum_exactly_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100_000 {
        let d: f64 = rng.random_range(-60.0..60.0);
        let (a, b) = probabilities(d);
        assert_eq!(a + b, 1.0);
        assert_eq!(probabilities(-d), (b, a));
    }
}

#[test]
fn loss_examples() {
    let ln2 = std::f64::consts::LN_2;
    assert!((ranking_loss((0.5, 0.5), RankTarget::FirstBetter) - ln2).abs() < 1e-15);
    assert!((ranking_loss((0.5, 0.5), RankTarget::SecondBetter) - ln2).abs() < 1e-15);
    assert!(ranking_loss((1.0 - 1e-12, 1e-12), RankTarget::FirstBetter) < 1e-11);
    assert!((ranking_loss((0.8, 0.2), RankTarget::SecondBetter) - 1.6094379124341003).abs() < 1e-12);
    // Clamped at the extremes.
    assert!(ranking_loss((1.0, 0.0), RankTarget::SecondBetter).is_finite());
}

fn fd_check(config: ModelConfig, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, gs) = graphs(4, 100 + seed);
    let params = random_params(&config, &mut rng, 0.6);
    let batch = vec![
        PairLabel { first: 0, second: 1, target: RankTarget::FirstBetter },
        PairLabel { first: 2, second: 3, target: RankTarget::SecondBetter },
        PairLabel { first: 1, second: 2, target: RankTarget::SecondBetter },
    ];
    let wd = Hyper::default().weight_decay;
    let (_, grad) = loss_and_grad(&config, &params, wd, &gs, &batch);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = params.clone();
        *plus.flat_mut(i) += h;
        let mut minus = params.clone();
        *minus.flat_mut(i) -= h;
        let numeric = (objective(&config, &plus, wd, &gs, &batch)
            - objective(&config, &minus, wd, &gs, &batch))
            / (2.0 * h);
        let analytic = grad.get_flat(i);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        assert!(rel <= 1e-4, "component {i}: analytic {analytic} numeric {numeric}");
    }
    assert!(worst <= 1e-4);
}

#[test]
fn gradients_match_finite_differences() {
    fd_check(ModelConfig { units: 6, ..ModelConfig::default() }, 1);
    fd_check(
        ModelConfig {
            units: 5,
            readout: Readout::DenseSkip,
            ..ModelConfig::default()
        },
        2,
    );
    fd_check(
        ModelConfig {
            units: 5,
            head: HeadKind::Concat,
            ..ModelConfig::default()
        },
        3,
    );
}

#[test]
fn saturated_batch_leaves_only_weight_decay() {
    let (_, gs) = graphs(2, 12);
    let config = ModelConfig { units: 4, ..ModelConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = random_params(&config, &mut rng, 0.5);
    let refs: Vec<&EncodedGraph> = gs.iter().collect();
    let emb = embed_batch(&config, &params, &refs).embeddings;
    // Point the head along the embedding difference with a huge gain.
    let diff = &emb.row(0) - &emb.row(1);
    params.head_w.slice_mut(ndarray::s![..4]).assign(&(&diff * 1e6));
    params.head_w.slice_mut(ndarray::s![4..]).fill(0.0);
    let batch = [PairLabel { first: 0, second: 1, target: RankTarget::FirstBetter }];
    let wd = 0.001126;
    let (_, grad) = loss_and_grad(&config, &params, wd, &gs, &batch);
    for i in 0..params.len() {
        assert!((grad.get_flat(i) - wd * params.get_flat(i)).abs() < 1e-15);
    }
}

#[test]
fn duplicated_pair_matches_single_pair() {
    let (_, gs) = graphs(2, 13);
    let config = ModelConfig { units: 8, ..ModelConfig::default() };
    let params = Params::glorot(&config, 5);
    let pair = PairLabel { first: 0, second: 1, target: RankTarget::SecondBetter };
    let (l1, g1) = loss_and_grad(&config, &params, 0.001, &gs, &[pair]);
    let (l2, g2) = loss_and_grad(&config, &params, 0.001, &gs, &[pair, pair]);
    assert!((l1 - l2).abs() < 1e-15);
    for i in 0..params.len() {
        assert!((g1.get_flat(i) - g2.get_flat(i)).abs() < 1e-15);
    }
}

fn separable_setup(count: usize) -> (Vec<EncodedGraph>, Vec<f64>) {
    let (_, gs) = graphs(count, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let direction: Vec<f64> = (0..FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect();
    let scores = gs
        .iter()
        .map(|g| {
            let x = g.x_real();
            let mean = x.sum_axis(ndarray::Axis(0)) / x.nrows() as f64;
            mean.iter().zip(&direction).map(|(a, b)| a * b).sum()
        })
        .collect();
    (gs, scores)
}

fn all_pairs(idx: &[usize], scores: &[f64]) -> Vec<PairLabel> {
    let mut out = Vec::new();
    for &i in idx {
        for &j in idx {
            if i != j {
                if let Some(t) = RankTarget::from_scores(scores[i], scores[j]) {
                    out.push(PairLabel { first: i, second: j, target: t });
                }
            }
        }
    }
    out
}

fn pairwise_accuracy(model: &PredictorModel, gs: &[EncodedGraph], pairs: &[PairLabel]) -> f64 {
    let refs: Vec<&EncodedGraph> = gs.iter().collect();
    let emb = model.embed_all(&refs);
    let correct = pairs
        .iter()
        .filter(|p| {
            let (p12, _) = model.pair_probabilities(emb.row(p.first), emb.row(p.second));
            (p12 > 0.5) == (p.target == RankTarget::FirstBetter)
        })
        .count();
    correct as f64 / pairs.len() as f64
}

#[test]
fn learns_a_linearly_separable_score() {
    let (gs, scores) = separable_setup(150);
    let train_idx: Vec<usize> = (0..100).collect();
    let val_idx: Vec<usize> = (100..150).collect();
    let train_pairs = all_pairs(&train_idx, &scores);
    let val_pairs = all_pairs(&val_idx, &scores);
    let config = ModelConfig { units: 32, ..ModelConfig::default() };
    let mut model = PredictorModel::new(config, Hyper::default(), EncoderConfig::default(), 0);
    let before = pairwise_accuracy(&model, &gs, &val_pairs);
    let log = train(
        &mut model,
        &gs,
        &train_pairs,
        &TrainConfig { epochs: 50, batch_size: 128, seed: 1 },
    );
    let acc = pairwise_accuracy(&model, &gs, &val_pairs);
    assert!(log.epoch_loss.last().unwrap() < log.epoch_loss.first().unwrap());
    assert!(acc >= 0.95, "validation pairwise accuracy {acc} (was {before})");
}

#[test]
fn training_is_deterministic_and_zero_epochs_is_identity() {
    let (gs, scores) = separable_setup(20);
    let idx: Vec<usize> = (0..20).collect();
    let pairs = all_pairs(&idx, &scores);
    let config = ModelConfig { units: 16, ..ModelConfig::default() };
    let init = PredictorModel::new(config, Hyper::default(), EncoderConfig::default(), 4);

    let mut untouched = init.clone();
    train(&mut untouched, &gs, &pairs, &TrainConfig { epochs: 0, batch_size: 128, seed: 1 });
    assert_eq!(untouched, init);

    let cfg = TrainConfig { epochs: 3, batch_size: 32, seed: 9 };
    let mut a = init.clone();
    let mut b = init.clone();
    train(&mut a, &gs, &pairs, &cfg);
    train(&mut b, &gs, &pairs, &cfg);
    assert_eq!(
        grasp_nas::predictor::checkpoint::to_bytes(&a),
        grasp_nas::predictor::checkpoint::to_bytes(&b)
    );
    assert_ne!(a.params, init.params);
    assert!(a.accumulators.gcn.iter().all(|m| m.iter().all(|&v| v >= 0.0)));
}

#[test]
fn initial_loss_is_near_ln2() {
    let (_, gs) = graphs(100, 31);
    let model = PredictorModel::new(ModelConfig::default(), Hyper::default(), EncoderConfig::default(), 11);
    let refs: Vec<&EncodedGraph> = gs.iter().collect();
    let emb = model.embed_all(&refs);
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..gs.len() {
        for j in (i + 1)..gs.len().min(i + 12) {
            let p = model.pair_probabilities(emb.row(i), emb.row(j));
            total += ranking_loss(p, RankTarget::FirstBetter);
            count += 1;
        }
    }
    let mean = total / count as f64;
    assert!((mean - std::f64::consts::LN_2).abs() < 0.05, "{mean}");
}

#[test]
fn score_against_best_contracts() {
    let (_, gs) = graphs(10, 41);
    let model = PredictorModel::new(ModelConfig::default(), Hyper::default(), EncoderConfig::default(), 5);
    let refs: Vec<&EncodedGraph> = gs.iter().collect();
    let scores = model.score_against_best(&refs, &gs[3]);
    assert_eq!(scores[3], 0.5);
    let mut rev = refs.clone();
    rev.reverse();
    let rev_scores = model.score_against_best(&rev, &gs[3]);
    let mut back = rev_scores.clone();
    back.reverse();
    assert_eq!(back, scores);
    let _: Array2<f64> = model.embed_all(&refs);
}
