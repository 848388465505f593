//! Central finite differences against the tape's analytic gradients for
//! the fine-tuning loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iert::corpus::{generate_synthetic, SyntheticSpec};
use iert::encoder::{Encoder, EncoderConfig};
use iert::finetune::{finetune_loss, init_head, RecommendationInstance};
use iert::gradcheck::{finite_difference_check, sample_coordinates};
use iert::params::ParameterStore;

fn main() -> iert::Result<()> {
    let corpus = generate_synthetic(&SyntheticSpec::planted(4, 16, 4, 1, 1, 0.0, 2))?;
    let mut config = EncoderConfig::new(corpus.vocabulary.size());
    config.hidden_size = 8;
    config.num_layers = 1;
    config.feed_forward_size = 16;
    config.max_sequence_length = 24;
    config.dropout_rate = 0.0;
    config.init_std = 0.3;
    let encoder = Encoder::new(config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParameterStore::new();
    encoder.init_params(&mut store, &mut rng)?;
    init_head(&mut store, 8, corpus.num_users(), 0.3, &mut rng)?;

    let split = &corpus.split[1];
    let batch: Vec<_> = [(split.validation.items[0], true), (split.validation.items[0] + 1, false)]
        .into_iter()
        .map(|(candidate, label)| RecommendationInstance {
            user_index: 1,
            history: split.train.clone(),
            candidate,
            label: label || split.validation.contains(candidate),
        })
        .collect();

    let loss = |s: &ParameterStore| finetune_loss(&encoder, s, &batch, 4.0, 1.0, 0.0, None);
    let coords = sample_coordinates(&store, 300, &mut rng);
    let report = finite_difference_check(loss, &store, 1e-4, &coords)?;
    println!("checked {} coordinates, max relative error {:.2e}", report.checked, report.max_relative_error);
    if let Some((c, exact, numeric)) = report.worst {
        println!("worst: {}[{}] analytic {exact:e} numeric {numeric:e}", store.name(c.param), c.offset);
    }
    Ok(())
}
