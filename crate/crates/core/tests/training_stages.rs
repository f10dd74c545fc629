//! Stage-level behaviour: preference training against a frozen reference,
//! and determinism of whole runs.

use desklm_core::adapters::{attach_lora, AdaptedModel, LoraConfig};
use desklm_core::model::{init_model, loglikelihood, ModelConfig, ModelWeights};
use desklm_core::numerics::RngState;
use desklm_core::tokenizer::{train_bpe, SpecialTokens, Vocabulary};
use desklm_core::training::{
    preference_logps, run_dpo, DpoConfig, PreferencePrompt, PreferenceRecord, TrainConfig,
};

fn setup(seed: u64) -> (Vocabulary, ModelWeights) {
    let corpus = vec![
        "la risposta giusta è il sole".to_string(),
        "la risposta sbagliata è la notte".to_string(),
        "scegli sempre la parola migliore".to_string(),
    ];
    let vocab = train_bpe(&corpus, 256 + 4 + 32, &SpecialTokens::default()).unwrap();
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        vocab_size: vocab.size(),
        max_seq_len: 64,
        ..Default::default()
    };
    let w = init_model(&cfg, &RngState::new(seed)).unwrap();
    (vocab, w)
}

fn pairs() -> Vec<PreferenceRecord> {
    (0..6)
        .map(|i| PreferenceRecord {
            prompt: PreferencePrompt::Text(format!("la domanda numero {i} chiede: ")),
            chosen: "il sole".into(),
            rejected: "la notte".into(),
            source: "toy".into(),
            score: Some(10.0),
        })
        .collect()
}

fn fresh_policy(w: &ModelWeights, seed: u64) -> AdaptedModel {
    attach_lora(w.clone(), &LoraConfig::default(), true, 64, &RngState::new(seed)).unwrap()
}

#[test]
fn policy_copy_of_reference_starts_at_ln2() {
    let (vocab, w) = setup(3);
    let mut policy = fresh_policy(&w, 4);
    // The reference is exactly the frozen (quantized-reconstructed) base the
    // adapters sit on, so logps agree bit for bit before the first step.
    let reference = policy.frozen_base().clone();
    let metrics = run_dpo(
        &mut policy,
        &reference,
        &vocab,
        &pairs(),
        &TrainConfig {
            max_seq_len: 64,
            ..TrainConfig::dpo_defaults()
        },
        &DpoConfig::default(),
    )
    .unwrap();
    assert!(
        (metrics[0].loss - 2.0f64.ln()).abs() < 1e-5,
        "first-batch loss {}",
        metrics[0].loss
    );
    assert!((metrics[0].margin.unwrap()).abs() < 1e-9);
}

#[test]
fn single_pair_margin_strictly_increases() {
    for seed in [11u64, 12, 13] {
        let (vocab, w) = setup(seed);
        let mut policy = fresh_policy(&w, seed + 100);
        let reference = policy.frozen_base().clone();
        let record = &pairs()[0];

        let before = preference_logps(&policy, &reference, &vocab, record)
            .unwrap()
            .margin();
        let cfg = TrainConfig {
            batch_size: 1,
            epochs: 1,
            max_seq_len: 64,
            seed,
            ..TrainConfig::dpo_defaults()
        };
        run_dpo(
            &mut policy,
            &reference,
            &vocab,
            std::slice::from_ref(record),
            &cfg,
            &DpoConfig::default(),
        )
        .unwrap();
        let after = preference_logps(&policy, &reference, &vocab, record)
            .unwrap()
            .margin();
        assert!(
            after > before,
            "seed {seed}: margin {before} -> {after} did not increase"
        );
    }
}

#[test]
fn reference_outputs_never_change() {
    let (vocab, w) = setup(21);
    let mut policy = fresh_policy(&w, 22);
    let reference = policy.frozen_base().clone();
    let prompt = vocab.encode("la domanda", true);
    let cont = vocab.encode(" il sole", true);
    let before = loglikelihood(&reference, &prompt, &cont).unwrap();

    run_dpo(
        &mut policy,
        &reference,
        &vocab,
        &pairs(),
        &TrainConfig {
            epochs: 2,
            max_seq_len: 64,
            ..TrainConfig::dpo_defaults()
        },
        &DpoConfig::default(),
    )
    .unwrap();

    let after = loglikelihood(&reference, &prompt, &cont).unwrap();
    assert_eq!(before, after);
}

#[test]
fn dpo_runs_are_bit_reproducible() {
    let (vocab, w) = setup(31);
    let cfg = TrainConfig {
        epochs: 2,
        max_seq_len: 64,
        seed: 9,
        ..TrainConfig::dpo_defaults()
    };
    let run = |seed: u64| {
        let mut policy = fresh_policy(&w, seed);
        let reference = policy.frozen_base().clone();
        let metrics = run_dpo(
            &mut policy,
            &reference,
            &vocab,
            &pairs(),
            &cfg,
            &DpoConfig::default(),
        )
        .unwrap();
        let losses: Vec<f64> = metrics.iter().map(|m| m.loss).collect();
        let adapters: Vec<Vec<f32>> = policy
            .adapter_entries()
            .map(|(_, ad)| ad.b.data().to_vec())
            .collect();
        (losses, adapters)
    };
    let (l1, a1) = run(77);
    let (l2, a2) = run(77);
    assert_eq!(l1, l2);
    assert_eq!(a1, a2);
}

#[test]
fn structural_mismatch_is_a_config_error() {
    let (vocab, w) = setup(41);
    let mut policy = fresh_policy(&w, 42);
    let other_cfg = ModelConfig {
        n_layers: 1,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        vocab_size: w.cfg.vocab_size,
        max_seq_len: 64,
        ..Default::default()
    };
    let mismatched = init_model(&other_cfg, &RngState::new(43)).unwrap();
    assert!(run_dpo(
        &mut policy,
        &mismatched,
        &vocab,
        &pairs(),
        &TrainConfig::dpo_defaults(),
        &DpoConfig::default(),
    )
    .is_err());
}
