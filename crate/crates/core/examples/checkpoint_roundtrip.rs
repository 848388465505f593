//! Save a parameter store as manifest + blob, reload it, and show the
//! manifest header.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iert::checkpoint::{checkpoint_roundtrip, Checkpoint, MANIFEST_FILE};
use iert::encoder::{Encoder, EncoderConfig};
use iert::params::ParameterStore;

fn main() -> iert::Result<()> {
    let mut config = EncoderConfig::new(30);
    config.hidden_size = 16;
    config.feed_forward_size = 32;
    let encoder = Encoder::new(config)?;
    let mut store = ParameterStore::new();
    encoder.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(8))?;

    let dir = std::env::temp_dir().join("iert-example-checkpoint");
    let diff = checkpoint_roundtrip(&store, &dir)?;
    println!("{} tensors identical after reload, {} changed", diff.identical.len(), diff.changed.len());

    let mut checkpoint = Checkpoint::from_store(&store);
    checkpoint.header = encoder.config.to_header();
    checkpoint.save(&dir)?;
    let manifest = std::fs::read_to_string(dir.join(MANIFEST_FILE)).expect("manifest written");
    for line in manifest.lines().take(12) {
        println!("  {line}");
    }
    let loaded = Checkpoint::load(&dir)?;
    let restored = EncoderConfig::from_header(&loaded.header)?;
    assert_eq!(&restored, &encoder.config);
    println!("encoder config restored from header: D={} L={} A={}", restored.hidden_size, restored.num_layers, restored.num_heads);
    Ok(())
}
