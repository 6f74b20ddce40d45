mod common;

use common::setup;
use isochrony::model::{evaluate_loss, train, DecoderRow, FactorRole, Model, TrainConfig};
use isochrony::numerics::Graph;
use isochrony::rng::RngStream;

fn logits_of(model: &Model, src: &[usize], rows: &[DecoderRow]) -> (Vec<f64>, Vec<Option<Vec<f64>>>) {
    let mut g = Graph::new(model.params(), false);
    let l = model.forward(&mut g, src, rows, &mut RngStream::new(0)).unwrap();
    let factors = l.factors.iter().map(|f| f.map(|v| g.value(v).to_vec())).collect();
    (g.value(l.main).to_vec(), factors)
}

#[test]
fn head_shapes_follow_config() {
    let (_, _, model, pairs) = setup("counter_heads = true");
    let p = &pairs[0];
    let cfg = model.config();
    let mut g = Graph::new(model.params(), false);
    let l = model
        .forward(&mut g, &p.source, &p.rows, &mut RngStream::new(0))
        .unwrap();
    let t = p.rows.len();
    assert_eq!(g.shape(l.main), &[t, cfg.main_vocab]);
    assert_eq!(l.factors.len(), 4);
    for (f, v) in cfg.factors.iter().zip(&l.factors) {
        assert_eq!(g.shape(v.unwrap()), &[t, f.vocab_size], "{}", f.name());
    }
}

#[test]
fn counters_without_heads_leave_main_and_dur() {
    let (_, _, model, pairs) = setup("counter_heads = false");
    let cfg = model.config();
    let (_, factors) = logits_of(&model, &pairs[0].source, &pairs[0].rows);
    for (f, v) in cfg.factors.iter().zip(&factors) {
        assert_eq!(v.is_some(), f.role == FactorRole::Duration, "{}", f.name());
    }
    assert!(model.params().get("head.total.w").is_none());
    assert!(model.params().get("head.dur.w").is_some());
}

#[test]
fn future_inputs_do_not_change_past_logits() {
    let (_, _, model, pairs) = setup("counter_heads = true\ndecoder_layers = 2");
    let p = pairs.iter().max_by_key(|p| p.rows.len()).unwrap();
    let v = model.config().main_vocab;
    let (base, base_f) = logits_of(&model, &p.source, &p.rows);
    for k in 1..p.rows.len() {
        let mut rows = p.rows.clone();
        rows[k].main = (rows[k].main + 3) % v;
        for (x, f) in rows[k].factors.iter_mut().zip(&model.config().factors) {
            *x = (*x + 1) % f.vocab_size;
        }
        let (probe, probe_f) = logits_of(&model, &p.source, &rows);
        assert_eq!(&probe[..k * v], &base[..k * v], "main logits before {k} moved");
        for (a, b) in base_f.iter().zip(&probe_f) {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            let w = a.len() / p.rows.len();
            assert_eq!(&a[..k * w], &b[..k * w]);
        }
        assert_ne!(&probe[k * v..], &base[k * v..]);
    }
}

#[test]
fn embedding_is_row_wise() {
    let (_, _, model, pairs) = setup("");
    let rows = &pairs[0].rows;
    let mut perm: Vec<usize> = (0..rows.len()).collect();
    RngStream::new(5).shuffle(&mut perm);
    let permuted: Vec<DecoderRow> = perm.iter().map(|&i| rows[i].clone()).collect();
    let embed = |r: &[DecoderRow]| {
        let mut g = Graph::new(model.params(), false);
        let v = model.embed_decoder_inputs(&mut g, r).unwrap();
        (g.value(v).to_vec(), g.shape(v)[1])
    };
    let (a, w) = embed(rows);
    let (b, _) = embed(&permuted);
    for (j, &i) in perm.iter().enumerate() {
        assert_eq!(&b[j * w..(j + 1) * w], &a[i * w..(i + 1) * w]);
    }
    let (null_a, _) = embed(&rows[..1]);
    let (null_b, _) = embed(&rows[..1]);
    assert_eq!(null_a, null_b);
    assert!(null_a.iter().all(|x| x.is_finite()));
}

#[test]
fn out_of_range_factor_id_is_rejected() {
    let (_, _, model, pairs) = setup("");
    let mut rows = pairs[0].rows.clone();
    rows[0].factors[0] = model.config().factors[0].vocab_size;
    let mut g = Graph::new(model.params(), false);
    assert!(model.embed_decoder_inputs(&mut g, &rows).is_err());
}

fn bias_grad(model: &Model, pairs: &[isochrony::model::TrainingPair], name: &str) -> Vec<f64> {
    let idx = model.params().index_of(name).unwrap();
    let mut acc = vec![0.0; model.params().by_index(idx).len()];
    for p in pairs {
        let mut g = Graph::new(model.params(), false);
        let l = model
            .forward(&mut g, &p.source, &p.rows, &mut RngStream::new(0))
            .unwrap();
        let loss = model.loss(&mut g, &l, &p.targets).unwrap();
        let grads = g.backward(loss).unwrap();
        for (a, x) in acc.iter_mut().zip(grads.param(idx).unwrap()) {
            *a += x;
        }
    }
    acc
}

#[test]
fn doubling_a_head_weight_doubles_its_gradient() {
    let (_, _, base, pairs) = setup("counter_heads = true");
    let mut cfg = base.config().clone();
    let i = cfg.factor_index(FactorRole::Total).unwrap();
    cfg.factors[i].loss_weight = 2.0;
    let doubled = Model::new(cfg).unwrap();
    let a = bias_grad(&base, &pairs[..3], "head.total.b");
    let b = bias_grad(&doubled, &pairs[..3], "head.total.b");
    assert!(a.iter().any(|x| x.abs() > 1e-6));
    for (x, y) in a.iter().zip(&b) {
        assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
    }
}

fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_tokens: 64,
        learning_rate: 3e-3,
        warmup_updates: 10,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let (_, _, model, pairs) = setup("dropout = 0.1");
    let run = || {
        let mut m = model.clone();
        let out = train(&mut m, &pairs, &quick_train(3), None, None).unwrap();
        (out.history, m)
    };
    let (h1, m1) = run();
    let (h2, m2) = run();
    assert_eq!(h1, h2);
    for ((n, a), (_, b)) in m1.params().iter().zip(m2.params().iter()) {
        assert_eq!(a.data(), b.data(), "{n}");
    }
}

#[test]
fn checkpoint_reload_keeps_loss() {
    let (_, _, mut model, pairs) = setup("");
    train(&mut model, &pairs, &quick_train(2), None, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(
        evaluate_loss(&back, &pairs).unwrap(),
        evaluate_loss(&model, &pairs).unwrap()
    );
}

#[test]
fn toy_corpus_loss_falls_below_a_tenth() {
    let (_, _, mut model, pairs) =
        setup("n_sentences = 50\nlabel_smoothing = 0.0\nd_model = 32\nd_ff = 64\nmain_embedding_dim = 32");
    let initial = evaluate_loss(&model, &pairs).unwrap();
    let cfg = TrainConfig {
        target_loss: 0.1 * initial,
        ..quick_train(600)
    };
    let out = train(&mut model, &pairs, &cfg, None, None).unwrap();
    let last = out.history.last().unwrap();
    assert!(
        last.loss < 0.1 * initial,
        "loss {} after {} epochs, initial {initial}",
        last.loss,
        last.epoch
    );
}
