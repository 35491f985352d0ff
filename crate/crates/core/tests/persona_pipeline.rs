use psykit_core::models::{perplexity, LoraConfig};
use psykit_core::persona::{
    build_instruction_pairs, finetune_lora, load_lm_bundle, save_lm_bundle, synthetic_instruction_records, train_base,
    GenerateConfig, InstructionPair, LmData, LmVocab, Level, PersonaProfile, TinyLm, TinyLmConfig,
};
use psykit_core::trainer::{evaluate, Trainable, TrainerConfig};

fn corpus() -> (Vec<InstructionPair>, Vec<InstructionPair>) {
    let recs = synthetic_instruction_records(250, 17);
    let (_, pairs) = build_instruction_pairs(&recs, None).unwrap();
    let (train, val) = pairs.split_at(200);
    (train.to_vec(), val.to_vec())
}

fn base_model(train: &[InstructionPair]) -> TinyLm {
    let mut texts: Vec<String> = train.iter().map(|p| p.response.clone()).collect();
    let mut vocab_src = texts.clone();
    vocab_src.extend(train.iter().map(|p| p.prompt.clone()));
    let vocab = LmVocab::build(&vocab_src, 2000).unwrap();
    let mut m = TinyLm::new(vocab, TinyLmConfig::default()).unwrap();
    // Base training sees only unconditioned responses.
    texts.truncate(100);
    let cfg = TrainerConfig {
        max_steps: 300,
        learning_rate: 0.5,
        save_steps: 300,
        eval_steps: 0,
        ..Default::default()
    };
    train_base(&mut m, &texts, &cfg, None).unwrap();
    m
}

#[test]
fn lora_finetune_lowers_validation_perplexity_and_keeps_base() {
    let (train, val) = corpus();
    let base = base_model(&train);
    let k = base.config.context;
    let val_data = LmData::from_pairs(base.vocab(), &val, k);
    let base_loss = evaluate(&base, &val_data).unwrap();

    let mut adapted_init = base.clone();
    adapted_init.attach_lora(&LoraConfig::default()).unwrap();
    assert_eq!(evaluate(&adapted_init, &val_data).unwrap(), base_loss);

    let cfg = TrainerConfig {
        max_steps: 500,
        learning_rate: 0.1,
        save_steps: 500,
        eval_steps: 100,
        ..Default::default()
    };
    let (tuned, report) = finetune_lora(&base, &train, Some(&val), &LoraConfig::default(), &cfg, None).unwrap();
    let tuned_loss = evaluate(&tuned, &val_data).unwrap();
    assert!(perplexity(tuned_loss) < perplexity(base_loss), "{tuned_loss} vs {base_loss}");
    assert_eq!(report.val_losses.len(), 5);

    for name in ["embedding", "hidden", "output"] {
        let a = base.params().find(name).unwrap();
        let b = tuned.params().find(name).unwrap();
        let (ta, tb) = (base.params().tensor(a), tuned.params().tensor(b));
        let bytes = |t: &psykit_core::autodiff::Tensor| t.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>();
        assert_eq!(bytes(ta), bytes(tb), "{name} changed");
    }
    assert_eq!(tuned.params().count(true), 4 * (256 + 64) + 4 * (64 + tuned.vocab_size()));

    assert!(finetune_lora(&base, &[], None, &LoraConfig::default(), &cfg, None).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm");
    save_lm_bundle(&path, "persona", &tuned, false).unwrap();
    let (manifest, loaded) = load_lm_bundle(&path).unwrap();
    assert_eq!(manifest.name, "persona");
    let merged_loss = evaluate(&loaded, &val_data).unwrap();
    assert!((merged_loss - tuned_loss).abs() < 1e-9);
    let p = PersonaProfile::uniform(Level::High);
    let g = GenerateConfig { seed: 4, ..Default::default() };
    let reply = loaded.generate(&p, "hello there", &g).unwrap();
    assert!(!reply.is_empty());
    assert_eq!(reply, loaded.generate(&p, "hello there", &g).unwrap());
}
