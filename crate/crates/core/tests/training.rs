use sensorgraph::checkpoint::Checkpoint;
use sensorgraph::metrics::MetricsReport;
use sensorgraph::model::{mse_loss, Phase};
use sensorgraph::synth::{generate, SynthSpec};
use sensorgraph::training::{
    backward, evaluate, fit, predict, prepare, read_predictions, write_predictions, PreparedData,
    TrainConfig,
};
use sensorgraph::{Error, SoftSensor};

fn small_data(seed: u64) -> (sensorgraph::ProcessDataset, TrainConfig) {
    let spec = SynthSpec {
        sensors: 4,
        length: 160,
        drivers: vec![0, 2],
        lag: 1,
        noise: 0.05,
        nonlinear: false,
        coupling: 1.0,
        seed,
    };
    let (ds, _) = generate(&spec).unwrap();
    let cfg = TrainConfig {
        embed_dim: 4,
        window: 5,
        hidden: 8,
        batch_size: 16,
        max_epochs: 12,
        patience: 3,
        seed,
        ..TrainConfig::default()
    };
    (ds, cfg)
}

fn prepared(seed: u64) -> (PreparedData, TrainConfig) {
    let (ds, cfg) = small_data(seed);
    let data = prepare(&ds, &cfg, 4).unwrap();
    (data, cfg)
}

#[test]
fn same_seed_same_result() {
    let (data, cfg) = prepared(1);
    let a = fit(&data, &cfg).unwrap();
    let b = fit(&data, &cfg).unwrap();
    assert_eq!(a.checkpoint.to_json().unwrap(), b.checkpoint.to_json().unwrap());
    let strip = |h: &[sensorgraph::training::EpochRecord]| {
        h.iter().map(|r| (r.epoch, r.train_mse, r.val_mse)).collect::<Vec<_>>()
    };
    assert_eq!(strip(&a.history), strip(&b.history));

    let other = fit(&data, &TrainConfig { seed: 2, ..cfg }).unwrap();
    assert_ne!(a.checkpoint.to_json().unwrap(), other.checkpoint.to_json().unwrap());
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let (data, cfg) = prepared(3);
    let cfg = TrainConfig {
        max_epochs: 40,
        patience: 2,
        learning_rate: 0.02,
        ..cfg
    };
    let out = fit(&data, &cfg).unwrap();
    let best = out
        .history
        .iter()
        .min_by(|a, b| a.val_mse.total_cmp(&b.val_mse))
        .unwrap();
    assert_eq!(out.checkpoint.best_epoch, best.epoch);
    assert_eq!(out.checkpoint.best_val_mse, best.val_mse);

    let model = &out.checkpoint.model;
    let adj = model.graph().unwrap().adjacency;
    let y: Vec<f64> = data.val.iter().map(|s| s.y).collect();
    let y_hat: Vec<f64> = data.val.iter().map(|s| model.predict_one(&s.x, &adj).unwrap()).collect();
    assert_eq!(mse_loss(&y, &y_hat).unwrap(), best.val_mse);

    if out.stopped_early {
        assert_eq!(out.history.len(), best.epoch + cfg.patience);
    }
}

#[test]
fn readout_only_descent_is_monotone() {
    let (data, cfg) = prepared(5);
    let model_cfg = TrainConfig { dropout: 0.0, ..cfg }.model_config(data.num_nodes()).unwrap();
    let mut model = SoftSensor::init(model_cfg, 5).unwrap();
    let adj = model.graph().unwrap().adjacency;
    let samples = &data.train;
    let loss = |m: &SoftSensor| {
        let y: Vec<f64> = samples.iter().map(|s| s.y).collect();
        let p: Vec<f64> = samples.iter().map(|s| m.predict_one(&s.x, &adj).unwrap()).collect();
        mse_loss(&y, &p).unwrap()
    };
    let lr = 1e-4;
    let mut previous = loss(&model);
    for _ in 0..50 {
        let mut grad_r = ndarray::Array1::<f64>::zeros(model.params.readout_weight.len());
        let mut grad_c = 0.0;
        for s in samples {
            let trace = model.forward(&s.x, &adj, Phase::Eval).unwrap();
            let g = backward(&trace, &s.x, s.y, &model, &adj).unwrap();
            grad_r += &g.readout_weight;
            grad_c += g.readout_bias;
        }
        let scale = lr / samples.len() as f64;
        model.params.readout_weight.scaled_add(-scale, &grad_r);
        model.params.readout_bias -= scale * grad_c;
        let current = loss(&model);
        assert!(current <= previous + 1e-15, "loss rose from {previous} to {current}");
        previous = current;
    }
}

#[test]
fn evaluation_matches_dumped_predictions() {
    let (ds, cfg) = small_data(7);
    let data = prepare(&ds, &cfg, 4).unwrap();
    let out = fit(&data, &cfg).unwrap();
    let eval = evaluate(&out.checkpoint, &data.test).unwrap();
    assert_eq!(eval, evaluate(&out.checkpoint, &data.test).unwrap());

    let mut buf = Vec::new();
    write_predictions(&mut buf, &eval.predictions).unwrap();
    let reread = read_predictions(buf.as_slice()).unwrap();
    assert_eq!(reread, eval.predictions);
    let y: Vec<f64> = reread.iter().map(|p| p.y_true).collect();
    let y_hat: Vec<f64> = reread.iter().map(|p| p.y_hat).collect();
    assert_eq!(MetricsReport::compute(&y, &y_hat).unwrap(), eval.report);

    // ground truth in the dump is the raw column
    for p in &reread {
        let raw = ds.values[[p.t_index, 4]];
        assert!((p.y_true - raw).abs() <= 1e-12 * raw.abs().max(1.0));
    }
    // denormalized output equals normalized output mapped through the stats
    let adj = out.checkpoint.model.graph().unwrap().adjacency;
    for (s, p) in data.test.iter().zip(predict(&out.checkpoint, &data.test).unwrap()) {
        let normalized = out.checkpoint.model.predict_one(&s.x, &adj).unwrap();
        assert_eq!(p.y_hat, data.stats.denormalize(4, normalized));
    }
}

#[test]
fn checkpoint_round_trip_and_reuse() {
    let (ds, cfg) = small_data(9);
    let data = prepare(&ds, &cfg, 4).unwrap();
    let out = fit(&data, &TrainConfig { max_epochs: 3, ..cfg }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    out.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, out.checkpoint);
    assert_eq!(loaded.id().unwrap(), out.checkpoint.id().unwrap());

    let windows = loaded.prepare(&ds).unwrap();
    assert_eq!(windows.len(), data.train.len() + data.val.len() + data.test.len());
    assert_eq!(windows[windows.len() - 1].x, data.test[data.test.len() - 1].x);

    let wrong = sensorgraph::ProcessDataset::from_tags(ds.values.slice(ndarray::s![.., ..4]).to_owned(), &["a", "b", "c", "d"]).unwrap();
    assert!(matches!(loaded.prepare(&wrong), Err(Error::Shape { .. })));

    let text = std::fs::read_to_string(&path).unwrap().replace("sensorgraph-checkpoint/1", "other/9");
    assert!(matches!(Checkpoint::from_json(&text), Err(Error::Format(_))));
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    match TrainConfig::from_json(r#"{"embed_dim": 8, "learning_rte": 0.1}"#) {
        Err(Error::Config(msg)) => assert!(msg.contains("learning_rte"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(TrainConfig::from_json(r#"{"dropout": 1.0}"#), Err(Error::Config(_))));
    let cfg = TrainConfig::from_json(r#"{"embed_dim": 8, "graph_refresh": "per-batch"}"#).unwrap();
    assert_eq!(cfg.embed_dim, 8);
    assert_eq!(cfg.hidden, 128);
}

#[test]
fn per_batch_refresh_and_clipping_train() {
    let (data, cfg) = prepared(11);
    let cfg = TrainConfig {
        graph_refresh: sensorgraph::training::GraphRefresh::PerBatch,
        clip_norm: Some(0.5),
        symmetric_graph: true,
        max_epochs: 4,
        ..cfg
    };
    let out = fit(&data, &cfg).unwrap();
    assert_eq!(out.history.len(), 4);
    assert!(out.history.iter().all(|h| h.train_mse.is_finite() && h.val_mse.is_finite()));
    assert!(out.checkpoint.model.params.all_finite());
}
