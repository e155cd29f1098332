use std::io::BufReader;

use codemix::corpus::io::{read_corpus, write_corpus};
use codemix::corpus::*;
use codemix::nn::Checkpoint;
use codemix::posenc::PeVariant;
use codemix::tasks::*;

fn corpus(n: usize, seed: u64) -> Vec<Utterance> {
    let mut spec = SynthSpec::with_vocab_sizes(n, 15, 15).with_post_switch(3, 3);
    spec.min_len = 10;
    spec.max_len = 12;
    spec.label_rule = Some(LabelRule::FirstSwitchParity);
    spec.translate = true;
    generate_synthetic_corpus(&spec, seed).unwrap()
}

fn tiny(variant: PeVariant) -> ModelConfig {
    ModelConfig::new(variant, 1, 2, 8, 16)
}

#[test]
fn jsonl_round_trip_preserves_utterances() {
    let c = corpus(40, 1);
    let mut buf = Vec::new();
    write_corpus(&mut buf, &c).unwrap();
    let back = read_corpus(BufReader::new(&buf[..]), None, &CmiWeights::default()).unwrap();
    assert!(back.fully_tagged);
    assert_eq!(back.utterances, c);
}

#[test]
fn checkpoint_file_round_trip_scores_identically() {
    let c = corpus(60, 2);
    let split = split_corpus(&c, SplitRatio::default(), 2).unwrap();
    let out = train_lm(&split.train, &tiny(PeVariant::SpRotary), &TrainConfig::new(8, 4, 4), 2, None, &mut |_| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    out.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, out.checkpoint);

    let a = perplexity(&LmScorer::from_checkpoint(&out.checkpoint).unwrap(), &split.test).unwrap();
    let b = perplexity(&LmScorer::from_checkpoint(&loaded).unwrap(), &split.test).unwrap();
    assert_eq!(a, b);
    assert_eq!(checkpoint_task(&loaded).unwrap(), LM_TASK);
}

#[test]
fn intermediate_checkpoints_are_emitted() {
    let c = corpus(40, 3);
    let mut train = TrainConfig::new(6, 4, 3);
    train.checkpoint_every = 2;
    let mut seen = 0;
    train_lm(&c, &tiny(PeVariant::Rotary), &train, 3, None, &mut |_| seen += 1).unwrap();
    assert_eq!(seen, 2);
}

#[test]
fn every_variant_trains_a_language_model() {
    let c = corpus(40, 4);
    for v in [
        PeVariant::Sinusoidal,
        PeVariant::Dynamic,
        PeVariant::Relative,
        PeVariant::Spdrpe,
        PeVariant::Rotary,
        PeVariant::SpRotary,
    ] {
        let out = train_lm(&c, &tiny(v), &TrainConfig::new(3, 4, 2), 4, None, &mut |_| {}).unwrap();
        let r = perplexity(&LmScorer::from_checkpoint(&out.checkpoint).unwrap(), &c).unwrap();
        assert!(r.overall.is_finite() && r.overall > 1.0, "{v:?}");
    }
}

#[test]
fn classifier_and_translator_pipelines() {
    let c = corpus(80, 5);
    let split = split_corpus(&c, SplitRatio::default(), 5).unwrap();
    let run = train_classifier(
        &split.train,
        &ClassifierConfig::default(),
        &tiny(PeVariant::SpRotary),
        &TrainConfig::new(6, 4, 3),
        None,
        None,
        5,
    )
    .unwrap();
    let clf = Classifier::from_checkpoint(&run.trained.checkpoint).unwrap();
    let score = evaluate_classifier(&clf, &split.test).unwrap();
    assert_eq!(score.averaging, "macro");
    assert!((0.0..=1.0).contains(&score.f1.score));

    let pairs = translation_pairs(&split.train).unwrap();
    let mt = train_mt(&pairs, &tiny(PeVariant::Rotary), &TrainConfig::new(4, 4, 2), 5, None, &mut |_| {}).unwrap();
    let tr = Translator::from_checkpoint(&mt.checkpoint).unwrap();
    let test_pairs = translation_pairs(&split.test).unwrap();
    let cfg = DecodeConfig { max_len: 5, ..DecodeConfig::default() };
    let s = evaluate_mt(&tr, &test_pairs, &cfg).unwrap();
    assert!(s.hypotheses.iter().all(|h| h.len() <= 5));
    assert!((0.0..=100.0).contains(&s.bleu.score));

    // Checkpoints of one task are refused by another.
    assert!(Translator::from_checkpoint(&run.trained.checkpoint).is_err());
    assert!(Classifier::from_checkpoint(&mt.checkpoint).is_err());
}

#[test]
fn classifier_can_start_from_a_language_model() {
    let c = corpus(60, 6);
    let lm = train_lm(&c, &tiny(PeVariant::SpRotary), &TrainConfig::new(4, 4, 2), 6, None, &mut |_| {}).unwrap();
    let run = train_classifier(
        &c,
        &ClassifierConfig::default(),
        &tiny(PeVariant::SpRotary),
        &TrainConfig::new(2, 4, 2),
        Some(&lm.checkpoint),
        None,
        6,
    )
    .unwrap();
    assert!(run.initialized.iter().any(|n| n == "tok_emb"), "{:?}", run.initialized);
}
