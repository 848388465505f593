//! Fine-tune a recommender (with and without a pre-trained encoder), then
//! produce top-5 lists and compare against the popularity baseline.
//!
//! `cargo run --release --example finetune_recommend`

use iert::corpus::{generate_synthetic, SyntheticSpec};
use iert::encoder::EncoderConfig;
use iert::eval::{evaluate, metrics_table, top_baseline};
use iert::finetune::{FineTuneConfig, FineTuner, Initialization};
use iert::pretrain::{PretrainConfig, Pretrainer};

fn main() -> iert::Result<()> {
    let spec = SyntheticSpec::planted(80, 40, 6, 0, 8, 0.1, 9);
    let corpus = generate_synthetic(&spec)?;
    let mut ec = EncoderConfig::new(corpus.vocabulary.size());
    ec.hidden_size = 32;
    ec.feed_forward_size = 64;
    ec.max_sequence_length = 48;

    let mut pre = Pretrainer::new(
        &corpus,
        ec.clone(),
        PretrainConfig {
            steps: 100,
            learning_rate: 1e-3,
            ..Default::default()
        },
    )?;
    pre.run(&mut std::io::sink(), None)?;
    let checkpoint = pre.checkpoint();

    let config = FineTuneConfig {
        epochs: 2,
        learning_rate: 1e-3,
        seed: 1,
        ..Default::default()
    };
    let mut results = Vec::new();
    for (name, init) in [
        ("IERT (pre-trained)", Initialization::Pretrained(&checkpoint)),
        ("IERT (scratch)", Initialization::Random(ec.clone())),
    ] {
        let mut tuner = FineTuner::new(&corpus, init, config.clone())?;
        tuner.run(&mut std::io::sink())?;
        let recs = tuner.model.recommend_all(&corpus, 5, false)?;
        let r = &recs[0];
        println!("{name}: user {} → items {:?}", r.user_index, r.items);
        results.push((name, evaluate(&recs, &corpus, 5)?.0));
    }
    results.push(("TOP", evaluate(&top_baseline(&corpus, 5)?, &corpus, 5)?.0));

    let rows: Vec<(&str, &_)> = results.iter().map(|(n, m)| (*n, m)).collect();
    print!("{}", metrics_table(&rows));
    Ok(())
}
