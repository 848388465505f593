//! Pre-train the encoder on masked items and next-basket pairs, then
//! resume from a mid-run checkpoint and check the loss log continues
//! exactly.
//!
//! `cargo run --release --example pretrain_basket_pairs [steps]`

use iert::corpus::{generate_synthetic, SyntheticSpec};
use iert::encoder::EncoderConfig;
use iert::pretrain::{
    evaluate_pretraining, heldout_mask_cases, heldout_pair_cases, pairs_to_vocab, PretrainConfig, Pretrainer,
};

fn main() -> iert::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let mut spec = SyntheticSpec::planted(60, 30, 6, 4, 4, 0.05, 3);
    spec.phases = 4;
    let corpus = generate_synthetic(&spec)?;

    let mut ec = EncoderConfig::new(corpus.vocabulary.size());
    ec.hidden_size = 32;
    ec.feed_forward_size = 64;
    ec.max_sequence_length = 32;
    let config = PretrainConfig {
        batch_size: 16,
        steps,
        learning_rate: 1e-3,
        seed: 11,
        ..Default::default()
    };

    let mut full = Pretrainer::new(&corpus, ec.clone(), config.clone())?;
    let mut log = Vec::new();
    full.run(&mut log, None)?;
    let log = String::from_utf8(log).unwrap();
    for line in log.lines().step_by((steps / 6).max(1)) {
        println!("{line}");
    }

    let mask_cases = heldout_mask_cases(&corpus, &pairs_to_vocab(&spec.co_occur_pairs), 32, false)?;
    let pair_cases = heldout_pair_cases(&corpus, 32, false, 5)?;
    let eval = evaluate_pretraining(&full.encoder, &full.store, &mask_cases, &pair_cases)?;
    println!("{eval:?}");

    // Stop halfway, save, resume in a fresh trainer.
    let dir = std::env::temp_dir().join("iert-example-pretrain");
    let half = PretrainConfig { steps: steps / 2, ..config.clone() };
    let mut first = Pretrainer::new(&corpus, ec, half)?;
    let mut resumed_log = Vec::new();
    first.run(&mut resumed_log, None)?;
    first.save(&dir)?;
    let mut second = Pretrainer::resume(&corpus, &dir, config)?;
    second.run(&mut resumed_log, None)?;
    assert_eq!(String::from_utf8(resumed_log).unwrap(), log);
    println!("resumed run reproduces the uninterrupted loss log ({} lines)", steps);
    Ok(())
}
