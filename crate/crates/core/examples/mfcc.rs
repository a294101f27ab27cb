//! Extracts MFCC + delta features from a synthetic clip and prints a summary.

use casa_sid::mfcc::{mfcc_features, MfccConfig};
use casa_sid::synth::synth_speaker;

fn main() -> casa_sid::Result<()> {
    let clip = synth_speaker(140.0, &[(700.0, 80.0), (1200.0, 90.0), (2600.0, 120.0)], 2.0, 16000, 7)?;
    let config = MfccConfig::default();
    let feats = mfcc_features(&clip, &config)?;
    println!("{} frames x {} dims, hop {} samples", feats.n_frames(), feats.dim(), feats.hop);
    let mean: Vec<f64> = (0..feats.dim())
        .map(|j| feats.rows.iter().map(|r| r[j]).sum::<f64>() / feats.n_frames() as f64)
        .collect();
    println!("static means  {:?}", mean[..4].iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    println!("delta means   {:?}", mean[16..20].iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());
    Ok(())
}
