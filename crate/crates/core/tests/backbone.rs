use draft_core::backbone::{
    causal_accessibility_check, lm_pretrain_step, pretrain, terminal_hidden, AdapterSet, AttentionMask, Backbone,
    BackboneConfig, PretrainConfig, Role,
};
use draft_core::numerics::Tape;
use draft_core::optim::{Adam, AdamConfig};
use draft_core::params::{Group, ParamStore};
use draft_core::{rng_from_seed, Tensor};
use proptest::prelude::*;

fn cfg(d: usize, heads: usize, layers: usize, vocab: usize) -> BackboneConfig {
    BackboneConfig {
        vocab_size: vocab,
        d_model: d,
        n_layers: layers,
        n_heads: heads,
        max_seq_len: 160,
        d_ff: 2 * d,
    }
}

fn model(c: &BackboneConfig, seed: u64) -> (Backbone, ParamStore) {
    let bb = Backbone::new(c.clone(), "bb", Group::ReasonerBase);
    let mut store = ParamStore::new();
    bb.init(&mut store, &mut rng_from_seed(seed)).unwrap();
    (bb, store)
}

fn forward_rows(bb: &Backbone, store: &ParamStore, input: &Tensor, adapters: Option<&AdapterSet>) -> Tensor {
    let tape = Tape::new();
    let bound = store.bind(&tape, |_| false);
    let x = tape.constant(input.clone());
    let h = bb.forward(&bound, x, adapters, &AttentionMask::causal(input.rows())).unwrap();
    let out = h.value().clone();
    out
}

#[test]
fn embed_is_table_lookup_plus_position() {
    let c = cfg(6, 2, 1, 12);
    let (bb, mut store) = model(&c, 3);
    let tape = Tape::new();
    let bound = store.bind(&tape, |_| false);
    let e = bb.embed(&bound, &[5, 7]).unwrap().value().clone();
    let tok = store.get("bb.tok_emb").unwrap().clone();
    let pos = store.get("bb.pos_emb").unwrap().clone();
    for (row, (t, p)) in [(5usize, 0usize), (7, 1)].into_iter().enumerate() {
        for j in 0..6 {
            assert_eq!(e.at(row, j), tok.at(t, j) + pos.at(p, j));
        }
    }
    let empty = bb.embed(&bound, &[]).unwrap();
    assert_eq!(empty.shape(), vec![0, 6]);
    drop(bound);

    store.set("bb.pos_emb", Tensor::zeros(&[c.max_seq_len, 6])).unwrap();
    let tape = Tape::new();
    let bound = store.bind(&tape, |_| false);
    let e = bb.embed(&bound, &[0]).unwrap().value().clone();
    assert_eq!(e.row(0), tok.row(0));
    assert!(bb.embed(&bound, &[12]).is_err());
}

#[test]
fn zero_query_key_attention_averages_the_visible_prefix() {
    let c = cfg(4, 1, 1, 8);
    let (bb, mut store) = model(&c, 1);
    store.set("bb.l0.wq", Tensor::zeros(&[4, 4])).unwrap();
    store.set("bb.l0.wk", Tensor::zeros(&[4, 4])).unwrap();
    store.set("bb.l0.wv", Tensor::eye(4)).unwrap();
    store.set("bb.l0.wo", Tensor::eye(4)).unwrap();
    let x = Tensor::randn(&[5, 4], 1.0, &mut rng_from_seed(8));
    let tape = Tape::new();
    let bound = store.bind(&tape, |_| false);
    let out = bb
        .attention_sublayer(&bound, 0, tape.constant(x.clone()), None, &AttentionMask::causal(5))
        .unwrap()
        .value()
        .clone();
    for i in 0..5 {
        for j in 0..4 {
            let mean: f64 = (0..=i).map(|k| x.at(k, j)).sum::<f64>() / (i + 1) as f64;
            assert!((out.at(i, j) - mean).abs() < 1e-12, "row {i} col {j}");
        }
    }
}

#[test]
fn single_row_attention_is_the_value_projection() {
    let c = cfg(4, 2, 1, 8);
    let (bb, store) = model(&c, 2);
    let x = Tensor::randn(&[1, 4], 1.0, &mut rng_from_seed(4));
    let tape = Tape::new();
    let bound = store.bind(&tape, |_| false);
    let out = bb
        .attention_sublayer(&bound, 0, tape.constant(x.clone()), None, &AttentionMask::causal(1))
        .unwrap()
        .value()
        .clone();
    let (wv, wo) = (store.get("bb.l0.wv").unwrap(), store.get("bb.l0.wo").unwrap());
    for j in 0..4 {
        let mut want = 0.0;
        for m in 0..4 {
            let v: f64 = (0..4).map(|k| x.at(0, k) * wv.at(k, m)).sum();
            want += v * wo.at(m, j);
        }
        assert!((out.at(0, j) - want).abs() < 1e-12);
    }
}

#[test]
fn zero_up_adapters_are_bitwise_identity() {
    let c = cfg(8, 2, 2, 16);
    let (bb, mut store) = model(&c, 5);
    let adapters = AdapterSet::new(Role::Reasoner, "ad", &c, 2, 4.0);
    adapters.init(&c, &mut store, &mut rng_from_seed(6)).unwrap();
    let x = Tensor::randn(&[7, 8], 1.0, &mut rng_from_seed(7));
    let plain = forward_rows(&bb, &store, &x, None);
    let adapted = forward_rows(&bb, &store, &x, Some(&adapters));
    assert_eq!(plain.data(), adapted.data());
    // and a nonzero up-matrix does change the output
    let up = adapters.up_name(0, draft_core::backbone::TargetMatrix::Value);
    store.set(&up, Tensor::filled(&[2, 8], 0.3)).unwrap();
    assert_ne!(forward_rows(&bb, &store, &x, Some(&adapters)).data(), plain.data());
}

#[test]
fn terminal_hidden_is_the_last_row() {
    let tape = Tape::new();
    let one = Tensor::randn(&[1, 4], 1.0, &mut rng_from_seed(1));
    let h = terminal_hidden(tape.constant(one.clone())).unwrap();
    assert_eq!(h.value().data(), one.data());

    // a 128-token trajectory with a 16-row draft
    let rows = Tensor::randn(&[144, 4], 1.0, &mut rng_from_seed(2));
    let h = terminal_hidden(tape.constant(rows.clone())).unwrap();
    assert_eq!(h.value().data(), rows.row(143));

    let mut grown: Vec<Vec<f64>> = (0..144).map(|i| rows.row(i).to_vec()).collect();
    grown.push(vec![9.0; 4]);
    let h = terminal_hidden(tape.constant(Tensor::from_rows(&grown).unwrap())).unwrap();
    assert_eq!(h.value().data(), &[9.0; 4]);

    assert!(terminal_hidden(tape.constant(Tensor::zeros(&[0, 4]))).is_err());
}

#[test]
fn initial_lm_loss_is_near_uniform_entropy() {
    let c = cfg(16, 2, 2, 40);
    let (bb, mut store) = model(&c, 11);
    let mut rng = rng_from_seed(12);
    let batch: Vec<Vec<usize>> = (0..4)
        .map(|_| (0..30).map(|_| rand::Rng::random_range(&mut rng, 0..40)).collect())
        .collect();
    let mut adam = Adam::new(AdamConfig::default(), &store);
    let loss = lm_pretrain_step(&mut store, &bb, &batch, &mut adam).unwrap();
    let uniform = (40f64).ln();
    assert!((loss - uniform).abs() / uniform < 0.1, "loss {loss} vs ln V {uniform}");
}

#[test]
fn repeating_corpus_is_memorized() {
    let c = cfg(16, 2, 1, 8);
    let (bb, mut store) = model(&c, 13);
    let corpus: Vec<Vec<usize>> = vec![(0..24).map(|i| if i % 2 == 0 { 3 } else { 5 }).collect()];
    let curve = pretrain(
        &mut store,
        &bb,
        &corpus,
        &PretrainConfig {
            steps: 200,
            batch_size: 2,
            lr: 1e-2,
            seed: 1,
        },
    )
    .unwrap();
    assert_eq!(curve.len(), 200);
    assert!(curve[199] < 0.1, "final loss {}", curve[199]);
    assert!(curve[199] < curve[0]);
}

#[test]
fn identical_batch_has_single_sequence_loss() {
    let c = cfg(8, 2, 1, 16);
    let (bb, store) = model(&c, 14);
    let seq: Vec<usize> = (0..20).map(|i| (i * 7) % 16).collect();
    let run = |batch: Vec<Vec<usize>>| {
        let mut s = store.clone();
        let mut adam = Adam::new(AdamConfig::default(), &s);
        lm_pretrain_step(&mut s, &bb, &batch, &mut adam).unwrap()
    };
    let single = run(vec![seq.clone()]);
    let triple = run(vec![seq.clone(), seq.clone(), seq]);
    assert!((single - triple).abs() < 1e-12);
}

#[test]
fn frozen_backbone_refuses_pretraining() {
    let c = cfg(8, 2, 1, 16);
    let (bb, mut store) = model(&c, 15);
    let bb = bb.frozen();
    let mut adam = Adam::new(AdamConfig::default(), &store);
    assert!(lm_pretrain_step(&mut store, &bb, &[vec![1, 2, 3]], &mut adam).is_err());
}

#[test]
fn accessibility_examples() {
    let tail = causal_accessibility_check(&AttentionMask::causal(12), 8, 4, false).unwrap();
    assert!(tail.pass);
    let broken = AttentionMask::causal(12).with_blocked(11, 0).unwrap();
    let r = causal_accessibility_check(&broken, 8, 4, false).unwrap();
    assert!(!r.pass);
    assert_eq!(r.first_violation, Some((11, 0)));
    let prefix = causal_accessibility_check(&AttentionMask::causal(13), 8, 4, true).unwrap();
    assert!(prefix.pass);
    assert_eq!(prefix.readout_position, 12);
}

#[test]
fn config_validation() {
    assert!(cfg(8, 3, 1, 16).validate().is_err());
    assert!(cfg(0, 1, 1, 16).validate().is_err());
    assert!(BackboneConfig::default().validate().is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn later_rows_never_affect_earlier_outputs(seed in any::<u64>(), n in 2usize..10, pick in any::<prop::sample::Index>()) {
        let c = cfg(8, 2, 2, 16);
        let (bb, store) = model(&c, seed);
        let x = Tensor::randn(&[n, 8], 1.0, &mut rng_from_seed(seed ^ 1));
        let j = 1 + pick.index(n - 1);
        let mut y = x.clone();
        for v in &mut y.data_mut()[j * 8..(j + 1) * 8] {
            *v += 1.5;
        }
        let a = forward_rows(&bb, &store, &x, None);
        let b = forward_rows(&bb, &store, &y, None);
        for i in 0..j {
            prop_assert_eq!(a.row(i), b.row(i));
        }
        prop_assert_ne!(a.row(j), b.row(j));
    }

    #[test]
    fn zero_delta_identity_holds_for_any_input(seed in any::<u64>(), n in 1usize..8, rank in 1usize..4) {
        let c = cfg(8, 2, 2, 16);
        let (bb, mut store) = model(&c, seed);
        let adapters = AdapterSet::new(Role::Extractor, "ad", &c, rank, 2.0 * rank as f64);
        adapters.init(&c, &mut store, &mut rng_from_seed(seed ^ 2)).unwrap();
        let x = Tensor::randn(&[n, 8], 1.0, &mut rng_from_seed(seed ^ 3));
        let plain = forward_rows(&bb, &store, &x, None);
        let adapted = forward_rows(&bb, &store, &x, Some(&adapters));
        prop_assert_eq!(plain.data(), adapted.data());
    }
}
