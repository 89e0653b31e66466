use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::ResolutionInput;
use crate::graphs::{build_topological, shortest_hop_matrix, RoadNetwork};
use crate::numcore::grad_check;
use crate::Parallelism;

fn random_network(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> RoadNetwork {
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.random_range(0..i), i));
    }
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((a, b));
        }
    }
    let lengths = (0..n).map(|_| rng.random_range(0.3..2.0)).collect();
    RoadNetwork::new((0..n).map(|i| format!("r{i}")).collect(), lengths, edges).unwrap()
}

fn symmetric_weights(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut w = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(0.05..1.0);
            w.set(i, j, v);
            w.set(j, i, v);
        }
    }
    w
}

pub(super) fn toy_graphs(n: usize, seed: u64) -> GraphSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = random_network(n, n / 2, &mut rng);
    GraphSet::from_raw([
        build_topological(&net),
        crate::graphs::build_weighted_topological(&net),
        symmetric_weights(n, &mut rng),
        symmetric_weights(n, &mut rng),
    ])
    .unwrap()
}

pub(super) fn toy_sample(cfg: &ModelConfig, seed: u64) -> ResolutionSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.roads;
    let mut input = |len: usize| ResolutionInput {
        speed: Tensor::from_fn(n, len, |_, _| rng.random_range(0.0..1.0)),
        flow: Tensor::from_fn(n, len, |_, _| rng.random_range(0.0..1.0)),
    };
    let hourly = input(cfg.windows.hourly);
    let daily = input(cfg.windows.daily);
    let weekly = input(cfg.windows.weekly);
    let target = (0..n).map(|_| rng.random_range(1..=cfg.classes)).collect();
    ResolutionSample {
        hourly,
        daily,
        weekly,
        target,
        anchor: 0,
        horizon: 1,
    }
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        hidden: [4, 4],
        ..ModelConfig::new(6, 3, 2)
    }
}

fn flat_grads(grads: &[Tensor]) -> Tensor {
    let data: Vec<f64> = grads
        .iter()
        .flat_map(|g| g.data().iter().copied())
        .collect();
    Tensor::new(vec![data.len()], data).unwrap()
}

#[test]
fn configuration_checks() {
    let cfg = ModelConfig::new(12, 5, 3);
    assert!(cfg.validate().is_ok());
    assert!(ModelConfig::new(12, 5, 5).validate().is_err());
    let labels: Vec<String> = cfg.combinations().iter().map(Combination::label).collect();
    assert_eq!(labels[0], "r_h");
    assert_eq!(labels[3], "s_h");
    assert_eq!(labels[4], "r_d");
    assert_eq!(labels[11], "s_w");
    assert_eq!(
        cfg.single_resolution(Resolution::Daily).combination_count(),
        4
    );
    let bad = ModelConfig {
        resolutions: vec![Resolution::Weekly, Resolution::Hourly],
        ..cfg
    };
    assert!(bad.validate().is_err());
}

#[test]
fn forward_shapes_and_normalization() {
    let cfg = toy_config();
    let model = Model::new(cfg.clone(), 1).unwrap();
    let graphs = toy_graphs(6, 2);
    let trace = model.forward(&toy_sample(&cfg, 3), &graphs).unwrap();
    assert_eq!(trace.combinations.len(), 12);
    assert!(trace.combinations.iter().all(|c| c.shape() == [6, 4]));
    assert_eq!(trace.attention.shape(), &[2, 12, 12, 4]);
    let a = trace.attention.data();
    for block in a.chunks(12 * 4) {
        for k in 0..4 {
            let s: f64 = (0..12).map(|u| block[u * 4 + k]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
    assert!(a.iter().all(|&v| v >= 0.0));
    assert_eq!(trace.logits.shape(), &[6, 3]);
}

#[test]
fn full_gradient_matches_central_differences() {
    let cfg = toy_config();
    let model = Model::new(cfg.clone(), 4).unwrap();
    let graphs = toy_graphs(6, 5);
    let sample = toy_sample(&cfg, 6);
    let (_, grads) = model.loss_and_grads(&sample, &graphs).unwrap();
    let f = |flat: &Tensor| {
        let mut m = model.clone();
        m.params_mut().set_from_flat(flat).unwrap();
        m.loss(&sample, &graphs).unwrap()
    };
    let err = grad_check(f, &model.params().flatten(), &flat_grads(&grads), 1e-6).unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn zero_head_predicts_lowest_grade() {
    let cfg = toy_config();
    let mut model = Model::new(cfg.clone(), 1).unwrap();
    let idx = model.shared_index(FC_W);
    *model.params_mut().get_mut(idx) = Tensor::zeros(model.params().get(idx).shape());
    let (grades, _) = model
        .predict(&toy_sample(&cfg, 1), &toy_graphs(6, 1))
        .unwrap();
    assert_eq!(grades, vec![1; 6]);
}

#[test]
fn argmax_ignores_constant_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits = Tensor::from_fn(5, 4, |_, _| rng.random_range(-2.0..2.0));
    let shifted = Tensor::from_fn(5, 4, |r, c| logits.at(r, c) + 10.0 * r as f64 - 3.0);
    assert_eq!(argmax_grades(&logits), argmax_grades(&shifted));
    assert_eq!(
        argmax_grades(&Tensor::matrix(1, 3, vec![1.0, 2.0, 2.0]).unwrap()),
        vec![2]
    );
}

#[test]
fn zeroing_pattern_graph_touches_only_its_combinations() {
    let cfg = toy_config();
    let model = Model::new(cfg.clone(), 7).unwrap();
    let graphs = toy_graphs(6, 8);
    let sample = toy_sample(&cfg, 9);
    let base = model.combination_embeddings(&sample, &graphs).unwrap();
    let zeroed = GraphSet::from_raw([
        graphs.raw(GraphKind::Topological).clone(),
        graphs.raw(GraphKind::WeightedTopological).clone(),
        Tensor::zeros(&[6, 6]),
        graphs.raw(GraphKind::Attribute).clone(),
    ])
    .unwrap();
    let changed = model.combination_embeddings(&sample, &zeroed).unwrap();
    let differing: Vec<usize> = (0..12).filter(|&c| base[c] != changed[c]).collect();
    assert_eq!(differing, vec![2, 6, 10]);
}

#[test]
fn zero_daily_and_weekly_inputs_silence_their_combinations() {
    let cfg = toy_config();
    let model = Model::new(cfg.clone(), 2).unwrap();
    let mut sample = toy_sample(&cfg, 2);
    sample.daily = sample.daily.zeros_like();
    sample.weekly = sample.weekly.zeros_like();
    let emb = model
        .combination_embeddings(&sample, &toy_graphs(6, 3))
        .unwrap();
    assert!(emb[..4].iter().all(|e| e.max_abs() > 0.0));
    assert!(emb[4..].iter().all(|e| e.max_abs() == 0.0));
}

#[test]
fn gcn_receptive_field_is_two_hops() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..10 {
        let n = rng.random_range(4..=12);
        let net = random_network(n, 1, &mut rng);
        let hops = shortest_hop_matrix(&net);
        let mut adj = Tensor::zeros(&[n, n]);
        for &(a, b) in net.edges() {
            adj.set(a, b, 1.0);
            adj.set(b, a, 1.0);
        }
        let a_norm = crate::graphs::normalize_adjacency(&adj).unwrap();
        let cfg = ModelConfig {
            hidden: [3, 3],
            ..ModelConfig::new(n, 3, 1)
        };
        let mut model = Model::new(cfg.clone(), trial).unwrap();
        for which in [GCN1, GCN2] {
            let w = model.params_mut().get_mut(which);
            *w = w.map(f64::abs);
        }
        let x = Tensor::from_fn(n, cfg.windows.hourly, |_, _| rng.random_range(0.1..1.0));
        let base = model.gcn_stack(0, &x, &a_norm).unwrap();
        for u in 0..n {
            let mut xp = x.clone();
            for c in 0..xp.cols() {
                let v = xp.at(u, c);
                xp.set(u, c, v + 0.5);
            }
            let out = model.gcn_stack(0, &xp, &a_norm).unwrap();
            for v in 0..n {
                let changed = out.row(v) != base.row(v);
                let near = hops.get(u, v).is_some_and(|h| h <= 2);
                assert_eq!(changed, near, "u={u} v={v}");
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let dir = std::env::temp_dir().join(format!("tg-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    let cfg = toy_config();
    let model = Model::new(cfg.clone(), 3).unwrap();
    model.save(&path, 3).unwrap();
    let (loaded, seed) = Model::load(&path, Some(&cfg)).unwrap();
    assert_eq!(seed, 3);
    assert_eq!(loaded, model);
    let other = ModelConfig { classes: 4, ..cfg };
    assert!(matches!(
        Model::load(&path, Some(&other)),
        Err(Error::ConfigMismatch(_))
    ));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn single_sample_is_memorized() {
    let cfg = toy_config();
    let mut model = Model::new(cfg.clone(), 11).unwrap();
    let graphs = toy_graphs(6, 12);
    let sample = toy_sample(&cfg, 13);
    let tc = TrainConfig {
        adam: crate::numcore::AdamConfig {
            lr: 1e-2,
            ..Default::default()
        },
        epochs: 500,
        ..TrainConfig::default()
    };
    let log = train(&mut model, std::slice::from_ref(&sample), &[], &graphs, &tc).unwrap();
    let last = log.epochs.last().unwrap().train_loss;
    assert!(
        model.loss(&sample, &graphs).unwrap() < 0.01,
        "final loss {last}"
    );
}

#[test]
fn training_is_deterministic_and_descends() {
    let cfg = toy_config();
    let graphs = toy_graphs(6, 14);
    let samples: Vec<ResolutionSample> = (0..12).map(|s| toy_sample(&cfg, 100 + s)).collect();
    let tc = TrainConfig {
        epochs: 10,
        batch_size: 4,
        adam: crate::numcore::AdamConfig {
            lr: 1e-2,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let run = |mode| {
        let mut m = Model::new(cfg.clone(), 15).unwrap();
        let log = train(
            &mut m,
            &samples,
            &samples[..4],
            &graphs,
            &TrainConfig { mode, ..tc },
        )
        .unwrap();
        (m, log)
    };
    let (m1, l1) = run(Parallelism::Parallel);
    let (m2, l2) = run(Parallelism::Sequential);
    assert_eq!(l1, l2);
    assert_eq!(m1, m2);
    let first = l1.epochs[0].train_loss;
    let last = l1.epochs[9].train_loss;
    assert!(last < first, "{first} -> {last}");
}
