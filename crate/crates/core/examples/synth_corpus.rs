//! Writes a synthetic corpus with a manifest to a directory.
//!
//! cargo run --example synth_corpus -- OUT_DIR

use casa_sid::dataset::{synth_dataset, write_dataset, SynthDatasetConfig};

fn main() -> casa_sid::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic-corpus".to_string());
    let clips = synth_dataset(&SynthDatasetConfig {
        test_noise_ratio: Some(2.0),
        ..SynthDatasetConfig::default()
    })?;
    let manifest = write_dataset(&clips, &out)?;
    println!("{} clips, manifest at {}", clips.len(), manifest.display());
    Ok(())
}
