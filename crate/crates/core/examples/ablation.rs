//! Compares decision rules and segregation on a noisy synthetic corpus.
//!
//! cargo run --release --example ablation -- [speakers] [utterances] [seed]

use casa_sid::cascade::{ablate, compare_rows, AblationMode, SystemConfig};
use casa_sid::dataset::{synth_dataset, SynthDatasetConfig};
use casa_sid::eval::DEFAULT_ALPHA;

fn main() -> casa_sid::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let speakers = args.first().copied().unwrap_or(4) as usize;
    let utterances = args.get(1).copied().unwrap_or(6) as usize;
    let seed = args.get(2).copied().unwrap_or(0);

    let clips = synth_dataset(&SynthDatasetConfig {
        speakers,
        emotions: 2,
        utterances,
        train_noise_ratio: Some(2.0),
        test_noise_ratio: Some(2.0),
        seed,
        ..SynthDatasetConfig::default()
    })?;
    let config = SystemConfig { seed, ..SystemConfig::default() };
    let report = ablate(
        &clips,
        &config,
        &[
            AblationMode::GmmOnly,
            AblationMode::CnnOnly,
            AblationMode::GmmCnn,
            AblationMode::CasaOff,
        ],
    )?;
    print!("{}", report.render_table());
    let on = report.row(AblationMode::GmmCnn).expect("requested");
    let off = report.row(AblationMode::CasaOff).expect("requested");
    match compare_rows(on, off, DEFAULT_ALPHA) {
        Ok(w) => println!("casa on vs off over {} cells: p = {:.3}, sign {:+}", w.n, w.p_value, w.direction),
        Err(e) => println!("casa on vs off: {e}"),
    }
    Ok(())
}
