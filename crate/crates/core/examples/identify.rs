//! Trains a small system, saves it, reloads it and identifies held-out
//! utterances.

use casa_sid::audio::Split;
use casa_sid::cascade::{identify, load_system, save_system, train_system, SystemConfig};
use casa_sid::dataset::{synth_dataset, SynthDatasetConfig};

fn main() -> casa_sid::Result<()> {
    let clips = synth_dataset(&SynthDatasetConfig {
        speakers: 4,
        emotions: 2,
        utterances: 4,
        duration_s: 0.8,
        seed: 9,
        ..SynthDatasetConfig::default()
    })?;
    let model = train_system(&clips, &SystemConfig::default())?;
    let dir = std::env::temp_dir().join("casa-sid-identify-example");
    save_system(&model, &dir)?;
    let model = load_system(&dir)?;
    for c in clips.iter().filter(|c| c.split == Split::Test) {
        let r = identify(&c.clip, &model, true)?;
        println!(
            "{:<18} -> {} / {:<8} confidence {:.2}",
            c.id, r.speaker, r.emotion, r.confidence
        );
    }
    Ok(())
}
