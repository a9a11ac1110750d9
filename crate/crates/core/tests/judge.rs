use draft_core::backbone::BackboneConfig;
use draft_core::checkpoint;
use draft_core::judge::{
    bce_loss, build_bases, classify, decoupled_step, new_optimizer, one_stage_step, readout_logit, train, train_step,
    DraftModel, Mode, TrainConfig, HEAD_B, HEAD_W,
};
use draft_core::latent::{assemble, Insertion, DEC_EMBEDDING};
use draft_core::numerics::Tape;
use draft_core::params::{Group, ParamStore};
use draft_core::trajgen::TrajectoryExample;
use draft_core::{rng_from_seed, Error, Tensor};
use proptest::prelude::*;

fn tiny_cfg() -> BackboneConfig {
    BackboneConfig {
        vocab_size: 16,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        max_seq_len: 32,
        d_ff: 16,
    }
}

fn random_bases(cfg: &BackboneConfig, seed: u64) -> ParamStore {
    let corpus: Vec<Vec<usize>> = (0..4).map(|i| (0..12).map(|j| (i * 5 + j * 3) % 8).collect()).collect();
    let pcfg = draft_core::backbone::PretrainConfig {
        steps: 2,
        batch_size: 2,
        lr: 1e-2,
        seed,
    };
    build_bases(cfg, cfg, &corpus, &pcfg).unwrap().0
}

/// Replaces every non-base parameter with Gaussian noise so that no
/// gradient path is trivially zero.
fn scramble(model: &mut DraftModel, seed: u64) {
    let mut rng = rng_from_seed(seed);
    for p in model.store.entries_mut() {
        if !matches!(p.group, Group::ReasonerBase | Group::ExtractorBase) {
            p.value = Tensor::randn(p.value.shape(), 0.3, &mut rng);
        }
    }
}

fn fd_check(model: &DraftModel, tokens: &[usize], label: u8, groups: &[Group]) {
    let (_, grads) = model.loss_and_grads(tokens, label).unwrap();
    for &g in groups {
        let idx = model
            .store
            .entries()
            .iter()
            .position(|p| p.group == g)
            .unwrap_or_else(|| panic!("no parameter in {g}"));
        let analytic = grads[idx].as_ref().unwrap_or_else(|| panic!("no gradient for {g}"));
        let n = analytic.len();
        for k in [0, n / 2, n - 1] {
            let h = 1e-5;
            let mut plus = model.clone();
            plus.store.entries_mut()[idx].value.data_mut()[k] += h;
            let mut minus = model.clone();
            minus.store.entries_mut()[idx].value.data_mut()[k] -= h;
            let fd = (plus.loss(tokens, label).unwrap() - minus.loss(tokens, label).unwrap()) / (2.0 * h);
            let a = analytic.data()[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "{g} entry {k}: analytic {a} vs fd {fd} (rel {rel})");
        }
    }
}

#[test]
fn decoupled_gradients_match_finite_differences() {
    let cfg = tiny_cfg();
    let bases = random_bases(&cfg, 1);
    let tc = TrainConfig {
        mode: Mode::Decoupled,
        l_s: 3,
        ..TrainConfig::default()
    };
    let mut model = DraftModel::new(&bases, cfg.clone(), cfg, tc).unwrap();
    scramble(&mut model, 9);
    let tokens: Vec<usize> = (0..12).map(|i| (i * 7 + 3) % 16).collect();
    fd_check(
        &model,
        &tokens,
        1,
        &[
            Group::ReasonerAdapter,
            Group::ExtractorAdapter,
            Group::ProjectorToExtractor,
            Group::ProjectorToReasoner,
            Group::Queries,
            Group::Head,
        ],
    );
}

fn model(mode: Mode, seed: u64) -> DraftModel {
    let cfg = tiny_cfg();
    let bases = random_bases(&cfg, 1);
    let tc = TrainConfig {
        mode,
        l_s: 3,
        seed,
        lr: 1e-2,
        steps: 6,
        batch_size: 4,
        ..TrainConfig::default()
    };
    DraftModel::new(&bases, cfg.clone(), cfg, tc).unwrap()
}

/// Label 1 sequences use tokens 0..4 only, label 0 sequences 4..8 only.
fn separable(n: usize, offset: usize) -> Vec<TrajectoryExample> {
    let mut rng = rng_from_seed(offset as u64 + 40);
    (0..n)
        .map(|i| {
            let label = u8::from(i % 2 == 0);
            let base = if label == 1 { 0 } else { 4 };
            let tokens = (0..10).map(|_| base + rand::Rng::random_range(&mut rng, 0..4)).collect();
            TrajectoryExample::new(format!("s{}", i + offset), tokens, label)
        })
        .collect()
}

#[test]
fn classify_examples() {
    assert_eq!(classify(0.5, 0.5), 1);
    assert_eq!(classify(0.49, 0.5), 0);
    assert_eq!(classify(0.91, 0.5), 1);
}

#[test]
fn bce_examples() {
    assert!(bce_loss(1.0 - 1e-12, 1) < 1e-9);
    assert!((bce_loss(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((bce_loss(0.9, 0) - (-(0.1f64).ln())).abs() < 1e-9);
    assert!(bce_loss(0.0, 1).is_finite());
}

#[test]
fn readout_examples() {
    let mut m = model(Mode::OneStage, 0);
    let tokens: Vec<usize> = (0..10).collect();
    // fresh head is zero
    assert_eq!(m.prob(&tokens).unwrap(), 0.5);

    m.store.set(HEAD_B, Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
    let want = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((m.prob(&tokens).unwrap() - 0.7310585786).abs() < 1e-9);
    assert!((m.prob(&tokens).unwrap() - want).abs() < 1e-15);

    m.store.set(HEAD_B, Tensor::zeros(&[1, 1])).unwrap();
    let w = Tensor::randn(&[8, 1], 1.0, &mut rng_from_seed(3));
    m.store.set(HEAD_W, w.clone()).unwrap();
    let p = m.prob(&tokens).unwrap();
    let neg = Tensor::new(vec![8, 1], w.data().iter().map(|v| -v).collect()).unwrap();
    m.store.set(HEAD_W, neg).unwrap();
    let q = m.prob(&tokens).unwrap();
    assert!((p + q - 1.0).abs() < 1e-12);
    assert!(p > 0.0 && p < 1.0 && p != 0.5);
}

#[test]
fn one_stage_leaves_extractor_side_untouched() {
    let mut m = model(Mode::OneStage, 1);
    let data = separable(8, 0);
    let batch: Vec<&TrajectoryExample> = data.iter().collect();
    let before: Vec<(Group, String)> = m.store.checksums();
    let mut adam = new_optimizer(&m);
    one_stage_step(&mut m, &mut adam, &batch).unwrap();
    for (g, sum) in before {
        let now = m.store.checksum(g);
        if g.is_extractor_side() || matches!(g, Group::ReasonerBase | Group::ExtractorBase) {
            assert_eq!(now, sum, "{g} changed");
        }
        // with a zero head only the head itself sees gradient on step one
        if g == Group::Head {
            assert_ne!(now, sum, "{g} did not train");
        }
    }
    assert!(matches!(decoupled_step(&mut m, &mut adam, &batch), Err(Error::Usage(_))));
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let data = separable(8, 0);
    let batch: Vec<&TrajectoryExample> = data.iter().collect();
    for mode in [Mode::OneStage, Mode::Decoupled] {
        let mut m = model(mode, 2);
        m.config.lr = 0.0;
        let before = checkpoint::to_bytes(&m.store, &serde_json::Value::Null);
        let mut adam = new_optimizer(&m);
        train_step(&mut m, &mut adam, &batch).unwrap();
        assert_eq!(checkpoint::to_bytes(&m.store, &serde_json::Value::Null), before, "{mode}");
    }
}

#[test]
fn separable_loss_falls_steadily() {
    let cfg = tiny_cfg();
    let bases = random_bases(&cfg, 1);
    let tc = TrainConfig {
        mode: Mode::OneStage,
        lr: 1e-2,
        steps: 50,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut m = DraftModel::new(&bases, cfg.clone(), cfg, tc).unwrap();
    let history = train(&mut m, &separable(64, 0), &separable(16, 100)).unwrap();
    let blocks: Vec<f64> = history
        .chunks(10)
        .map(|c| c.iter().map(|h| h.loss).sum::<f64>() / c.len() as f64)
        .collect();
    assert_eq!(blocks.len(), 5);
    for w in blocks.windows(2) {
        assert!(w[1] < w[0], "smoothed loss rose: {blocks:?}");
    }
    assert_eq!(history.last().unwrap().val_accuracy, Some(1.0));
}

#[test]
fn training_is_seed_deterministic() {
    let data = separable(16, 0);
    let val = separable(8, 50);
    let run = |seed| {
        let mut m = model(Mode::Decoupled, seed);
        let h = train(&mut m, &data, &val).unwrap();
        (h, checkpoint::to_bytes(&m.store, &m.metadata()))
    };
    let (h1, b1) = run(4);
    let (h2, b2) = run(4);
    assert_eq!(h1, h2);
    assert_eq!(b1, b2);
    assert_ne!(run(5).1, b1);
}

#[test]
fn no_extractor_is_one_stage() {
    let data = separable(16, 0);
    let val = separable(8, 50);
    let mut a = model(Mode::OneStage, 6);
    let mut b = model(Mode::NoExtractor, 6);
    assert_eq!(train(&mut a, &data, &val).unwrap(), train(&mut b, &data, &val).unwrap());
    assert_eq!(
        checkpoint::to_bytes(&a.store, &serde_json::Value::Null),
        checkpoint::to_bytes(&b.store, &serde_json::Value::Null)
    );
}

#[test]
fn every_mode_respects_its_freeze_contract() {
    let data = separable(8, 0);
    for mode in Mode::ALL {
        for insertion in [Insertion::Tail, Insertion::PrefixDec] {
            let mut m = model(mode, 7);
            m.config.insertion = insertion;
            let trainable = m.trainable_groups();
            let before = m.store.checksums();
            train(&mut m, &data, &[]).unwrap();
            for (g, sum) in before {
                if !trainable.contains(&g) {
                    assert_eq!(m.store.checksum(g), sum, "{mode}/{insertion:?}: {g} changed");
                }
            }
            assert!(!trainable.contains(&Group::ReasonerBase) && !trainable.contains(&Group::ExtractorBase));
            match mode {
                Mode::OneStage | Mode::NoExtractor | Mode::ExplicitBaseline => {
                    assert!(trainable.iter().all(|g| !g.is_extractor_side()))
                }
                Mode::NoReasoner => assert!(!trainable.contains(&Group::ReasonerAdapter)),
                Mode::Decoupled => assert!(trainable.contains(&Group::Queries)),
            }
        }
    }
}

#[test]
fn decoupled_readout_nests_one_stage_over_a_frozen_draft() {
    // fresh extractor adapters have zero up-matrices and the queries are
    // taken as fixed, so the draft is a constant of the inputs
    let mut m = model(Mode::Decoupled, 8);
    m.store.set(HEAD_W, Tensor::randn(&[8, 1], 1.0, &mut rng_from_seed(9))).unwrap();
    let tokens: Vec<usize> = (0..12).map(|i| (i * 3) % 16).collect();
    let tape = Tape::new();
    let bound = m.bind(&tape, false);
    let full = m.logit(&bound, &tokens).unwrap().item();

    let p = m.reasoner.embed(&bound, &tokens).unwrap();
    let draft = m.draft(&bound, p).unwrap().value().clone();
    let frozen_draft = tape.constant(draft);
    let y = tape.concat_rows(&[p, frozen_draft]).unwrap();
    let nested = readout_logit(&bound, &m.reasoner, y, &m.reasoner_adapters).unwrap().item();
    assert_eq!(full, nested);
}

#[test]
fn decision_readout_depends_on_every_trajectory_and_draft_row() {
    let mut m = model(Mode::Decoupled, 10);
    scramble(&mut m, 11);
    let (l, l_s, d) = (6, 3, 8);
    let p0 = Tensor::randn(&[l, d], 1.0, &mut rng_from_seed(12));
    let s0 = Tensor::randn(&[l_s, d], 1.0, &mut rng_from_seed(13));
    let logit = |p: &Tensor, s: &Tensor, insertion: Insertion| {
        let tape = Tape::new();
        let bound = m.bind(&tape, false);
        let dec = bound.var(DEC_EMBEDDING).unwrap();
        let y = assemble(&tape, tape.constant(p.clone()), tape.constant(s.clone()), insertion, Some(dec)).unwrap();
        readout_logit(&bound, &m.reasoner, y, &m.reasoner_adapters).unwrap().item()
    };
    for insertion in [Insertion::Tail, Insertion::PrefixDec] {
        let base = logit(&p0, &s0, insertion);
        assert_eq!(base, logit(&p0.clone(), &s0.clone(), insertion));
        for r in 0..l {
            let mut p = p0.clone();
            p.data_mut()[r * d] += 0.5;
            assert_ne!(logit(&p, &s0, insertion), base, "{insertion:?}: P row {r}");
        }
        for r in 0..l_s {
            let mut s = s0.clone();
            s.data_mut()[r * d] += 0.5;
            assert_ne!(logit(&p0, &s, insertion), base, "{insertion:?}: S row {r}");
        }
    }
}

#[test]
fn checkpoint_round_trip_is_value_exact() {
    let mut m = model(Mode::Decoupled, 14);
    scramble(&mut m, 15);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    m.save(&path).unwrap();
    let back = DraftModel::load(&path).unwrap();
    assert_eq!(back.store, m.store);
    assert_eq!(back.config, m.config);
    let tokens: Vec<usize> = (0..9).collect();
    assert_eq!(back.prob(&tokens).unwrap(), m.prob(&tokens).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(checkpoint::from_bytes(b"NOTACKPT\x01\0\0\0").is_err());
}

#[test]
fn training_rejects_overlapping_splits() {
    let data = separable(8, 0);
    let mut m = model(Mode::OneStage, 0);
    assert!(matches!(train(&mut m, &data, &data[..2]), Err(Error::Usage(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_threshold_never_adds_unsafe_predictions(
        probs in prop::collection::vec(0.0f64..=1.0, 1..50),
        t1 in 0.01f64..0.99,
        dt in 0.0f64..0.5,
    ) {
        let t2 = (t1 + dt).min(0.99);
        let count = |t: f64| probs.iter().filter(|&&p| classify(p, t) == 1).count();
        prop_assert!(count(t2) <= count(t1));
    }

    #[test]
    fn bce_is_finite_and_nonnegative(p in 0.0f64..=1.0, y in 0u8..=1) {
        let l = bce_loss(p, y);
        prop_assert!(l.is_finite() && l >= 0.0);
    }
}
