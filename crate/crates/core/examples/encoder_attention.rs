//! Encode one packed basket pair and print the first layer's attention
//! map for head 0.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iert::autograd::Tape;
use iert::encoder::{AttentionScope, Encoder, EncoderConfig, NoDropout};
use iert::params::ParameterStore;
use iert::pretrain::pack_pair;

fn main() -> iert::Result<()> {
    let mut config = EncoderConfig::new(20);
    config.hidden_size = 16;
    config.feed_forward_size = 32;
    config.max_sequence_length = 16;
    let encoder = Encoder::new(config)?;
    let mut store = ParameterStore::new();
    encoder.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(1))?;
    println!("{} parameters", store.num_scalars());

    let input = pack_pair(&[5, 9, 12], &[7, 5], 16, false)?;
    println!("tokens   {:?}", input.token_ids);
    println!("segments {:?}", input.segment_ids);

    for scope in [AttentionScope::Full, AttentionScope::SameSegment] {
        let mut tape = Tape::new(&store);
        let out = encoder.encode::<NoDropout>(&mut tape, &input, scope, None)?;
        println!("\n{scope:?}: hidden {:?}", tape.shape(out.hidden));
        let attn = tape.value(out.attention[0][0]);
        for r in 0..input.len() {
            let row: Vec<String> = attn.row(r).iter().map(|p| format!("{p:.2}")).collect();
            println!("  {}", row.join(" "));
        }
    }
    Ok(())
}
