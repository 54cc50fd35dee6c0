use emoc_core::rng::seeded;
use emoc_core::select::{emoc_score, generate_candidate_sets, map_label, select_batch};
use emoc_core::training::train;
use emoc_core::{
    CandidateSet, LayerSpec, LossKind, Network, OptimizerState, PoolEntry, RegularizerConfig, SampleStore,
    SelectionConfig, Strategy, Tensor, TrainingConfig,
};
use emoc_oracle::fixtures::softmax_regression;
use emoc_oracle::{applied_output_change, brute_force_emoc, fd_gradient, naive_objective, spearman, uniform_vec, SoftmaxRegression};
use rand::Rng;

/// Gaussian-ish blobs around random centers in `dim` dimensions.
fn blob_store(seed: u64, classes: usize, per_class: usize, dim: usize, spread: f64) -> SampleStore<f64> {
    let mut rng = seeded(seed);
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| uniform_vec(&mut rng, dim, 3.0)).collect();
    let mut parts = Vec::new();
    for (c, m) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let x = m.iter().map(|v| v + rng.random_range(-spread..spread)).collect();
            parts.push((Tensor::from_vec(x), Some(c)));
        }
    }
    SampleStore::from_parts(parts).unwrap()
}

fn pool_from(store: &SampleStore<f64>, ids: impl IntoIterator<Item = usize>) -> Vec<PoolEntry> {
    ids.into_iter()
        .map(|id| PoolEntry { id, group: store.get(id).unwrap().oracle_label.unwrap() })
        .collect()
}

#[test]
fn emoc_matches_brute_force_loops_on_tiny_models() {
    for case in 0..100u64 {
        let inputs = 2 + (case % 3) as usize; // P = 2·D + 2 ≤ 10
        let net = softmax_regression(inputs, 2, 1.5, case);
        assert!(net.num_params() <= 10);
        let mut rng = seeded(500 + case);
        let parts = (0..5).map(|_| (Tensor::from_vec(uniform_vec(&mut rng, inputs, 2.0)), None));
        let store = SampleStore::from_parts(parts).unwrap();
        let eval_ids = [0, 1, 2];
        let mut set = CandidateSet::new(vec![3, 4], 0);
        set.label = Some(map_label(&net, &set, &store).unwrap());
        let reg = RegularizerConfig { l2: 0.01 * (case % 3) as f64, l1: 0.002 * (case % 2) as f64 };
        let cfg = SelectionConfig { gamma: 0.5 + case as f64 / 10.0, ..Default::default() };
        let got = emoc_score(&net, &set, &eval_ids, &store, LossKind::SoftmaxCrossEntropy, &reg, &cfg).unwrap();

        let oracle = SoftmaxRegression::from_network(&net);
        let jacobians: Vec<_> = eval_ids.iter().map(|&i| oracle.jacobian(store.features(i).unwrap().values())).collect();
        let grads: Vec<_> = set
            .sample_ids
            .iter()
            .map(|&i| oracle.cross_entropy_gradient(store.features(i).unwrap().values(), set.label.unwrap(), reg.l2, reg.l1))
            .collect();
        let want = brute_force_emoc(&jacobians, &grads, cfg.gamma);
        assert!((got - want).abs() <= 1e-12 * want.abs(), "case {case}: {got} vs {want}");
    }
}

#[test]
fn perfectly_fit_candidates_score_zero() {
    // Biases (1000, 0) saturate the posterior at exactly (1, 0).
    let mut net = Network::<f64>::new(
        vec![2],
        vec![LayerSpec::FullyConnected { inputs: 2, outputs: 2 }, LayerSpec::Softmax],
    )
    .unwrap();
    net.params_mut().as_mut_slice().copy_from_slice(&[0.0, 0.0, 0.0, 0.0, 1000.0, 0.0]);
    let store = blob_store(1, 1, 6, 2, 0.5);
    let pool = pool_from(&store, 0..6);
    let cfg = SelectionConfig { num_sets: 4, set_size: 3, eval_subset_size: 3, ..Default::default() };
    let round = select_batch(&net, &store, &pool, LossKind::SoftmaxCrossEntropy, &RegularizerConfig::NONE, &cfg).unwrap();
    assert!(round.sets.iter().all(|s| s.score == 0.0));
}

fn trained_blob_model(seed: u64, known: usize, classes: usize) -> (Network<f64>, SampleStore<f64>, Vec<PoolEntry>) {
    let per_class = 30;
    let mut store = blob_store(seed, classes, per_class, 4, 0.8);
    let mut labeled = Vec::new();
    for id in 0..store.len() {
        let c = id / per_class;
        if c < known && id % per_class < 10 {
            store.get_mut(id).unwrap().assign_label(c).unwrap();
            labeled.push(id);
        }
    }
    let pool_ids = (0..store.len()).filter(|id| !labeled.contains(id));
    let pool = pool_from(&store, pool_ids);
    let mut net = Network::seeded(
        vec![4],
        vec![
            LayerSpec::FullyConnected { inputs: 4, outputs: 8 },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { inputs: 8, outputs: classes },
            LayerSpec::Softmax,
        ],
        seed,
    )
    .unwrap();
    let mut state = OptimizerState::new(&net);
    let cfg = TrainingConfig { learning_rate: 0.05, mini_batch_size: 16, ..Default::default() };
    let data = store.labeled(&labeled).unwrap();
    train(&mut net, &mut state, &data, 300, &cfg, &mut seeded(seed)).unwrap();
    (net, store, pool)
}

#[test]
fn gamma_scaling_scales_scores_and_keeps_selection() {
    let (net, store, pool) = trained_blob_model(3, 2, 4);
    let base = SelectionConfig { num_sets: 30, set_size: 5, eval_subset_size: 20, seed: 11, ..Default::default() };
    let reg = RegularizerConfig::default();
    let r1 = select_batch(&net, &store, &pool, LossKind::SoftmaxCrossEntropy, &reg, &base).unwrap();
    let doubled = SelectionConfig { gamma: 2.0, ..base.clone() };
    let r2 = select_batch(&net, &store, &pool, LossKind::SoftmaxCrossEntropy, &reg, &doubled).unwrap();
    assert_eq!(r1.selected, r2.selected);
    for (a, b) in r1.sets.iter().zip(&r2.sets) {
        assert_eq!(b.score, 2.0 * a.score);
    }
}

#[test]
fn single_candidate_is_always_selected() {
    let (net, store, pool) = trained_blob_model(4, 2, 4);
    for strategy in Strategy::ALL {
        let cfg = SelectionConfig { num_sets: 1, set_size: 5, eval_subset_size: 10, strategy, ..Default::default() };
        let round = select_batch(&net, &store, &pool, LossKind::SoftmaxCrossEntropy, &RegularizerConfig::default(), &cfg).unwrap();
        assert_eq!(round.selected, 0);
        assert_eq!(round.sets.len(), 1);
    }
}

#[test]
fn selection_is_reproducible() {
    let (net, store, pool) = trained_blob_model(5, 2, 4);
    for strategy in Strategy::ALL {
        let cfg = SelectionConfig { num_sets: 25, set_size: 5, eval_subset_size: 10, strategy, seed: 99, ..Default::default() };
        let reg = RegularizerConfig::default();
        let a = select_batch(&net, &store, &pool, LossKind::SoftmaxCrossEntropy, &reg, &cfg).unwrap();
        let b = select_batch(&net, &store, &pool, LossKind::SoftmaxCrossEntropy, &reg, &cfg).unwrap();
        assert_eq!(a, b);
        let sets = generate_candidate_sets(&pool, &cfg).unwrap();
        assert_eq!(sets.iter().map(|s| &s.sample_ids).collect::<Vec<_>>(), a.sets.iter().map(|s| &s.sample_ids).collect::<Vec<_>>());
    }
}

#[test]
fn emoc_prefers_novel_class_sets_over_random() {
    let (net, store, pool) = trained_blob_model(6, 2, 4);
    let novel = |round: &emoc_core::ScoredRound| round.selected_set().group >= 2;
    let mut emoc_hits = 0;
    let mut random_hits = 0;
    for r in 0..50 {
        let base = SelectionConfig { num_sets: 12, set_size: 5, eval_subset_size: 20, seed: r, ..Default::default() };
        let reg = RegularizerConfig::default();
        let e = select_batch(&net, &store, &pool, LossKind::SoftmaxCrossEntropy, &reg, &base).unwrap();
        let rnd = SelectionConfig { strategy: Strategy::Random, ..base };
        let q = select_batch(&net, &store, &pool, LossKind::SoftmaxCrossEntropy, &reg, &rnd).unwrap();
        emoc_hits += novel(&e) as usize;
        random_hits += novel(&q) as usize;
    }
    assert!(emoc_hits > random_hits, "emoc {emoc_hits} vs random {random_hits}");
}

#[test]
fn emoc_ranks_sets_like_the_applied_output_change() {
    let (net, store, pool) = trained_blob_model(8, 2, 4);
    let cfg = SelectionConfig { num_sets: 20, set_size: 3, eval_subset_size: 15, seed: 1, ..Default::default() };
    let reg = RegularizerConfig::default();
    let round = select_batch(&net, &store, &pool, LossKind::SoftmaxCrossEntropy, &reg, &cfg).unwrap();
    let eval: Vec<_> = round.eval_ids.iter().map(|&i| store.features(i).unwrap()).collect();
    let step = 1e-4;
    let truth: Vec<f64> = round
        .sets
        .iter()
        .map(|s| {
            let y = s.label.unwrap();
            s.sample_ids
                .iter()
                .map(|&id| {
                    let x = store.features(id).unwrap();
                    let g = fd_gradient(&net, 1e-6, |n| naive_objective(n, x, y, true, reg.l2, reg.l1));
                    applied_output_change(&net, &eval, &g, step)
                })
                .sum()
        })
        .collect();
    let scores: Vec<f64> = round.sets.iter().map(|s| s.score).collect();
    let rho = spearman(&scores, &truth);
    assert!(rho >= 0.8, "spearman {rho}");
}
