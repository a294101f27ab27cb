//! Mixes a synthetic voice with white noise, segregates it, and reports the
//! segmental SNR before and after.

use casa_sid::audio::{mix_noise, MixSpec};
use casa_sid::casa::{filter_with_mask, segmental_snr, segregate, CasaConfig};
use casa_sid::dataset::speaker_profiles;
use casa_sid::synth::{emotion_palette, synth_utterance, voice_for, white_noise};

fn main() -> casa_sid::Result<()> {
    let sr = 8000;
    let speaker = &speaker_profiles(1, 3)[0];
    let voice = voice_for(speaker, &emotion_palette(1)[0], sr);
    let clean = synth_utterance(&voice, 1.5, sr, 1)?;
    let noise = white_noise(clean.len(), sr, 2)?;
    let mix = mix_noise(&clean, &noise, MixSpec::new(2.0, 3)?)?;

    let config = CasaConfig::default();
    let (_, diag) = segregate(&mix.mixture, &config)?;
    // Filter each stem with the mask estimated from the mixture.
    let t = filter_with_mask(&mix.target, &diag.frequency_mask, &config)?;
    let i = filter_with_mask(&mix.interference, &diag.frequency_mask, &config)?;
    let frame = (0.02 * sr as f64) as usize;
    println!("speaker pitch {:.0} Hz, voiced frames {:.0}%", speaker.pitch_hz, 100.0 * diag.pitch.voiced_fraction());
    println!("IBM ones: {} of {}", diag.ibm.count_ones(), diag.ibm.bits.len() * diag.spectrogram.n_bins());
    println!("segmental SNR before {:6.2} dB", segmental_snr(mix.target.samples(), mix.interference.samples(), frame));
    println!("segmental SNR after  {:6.2} dB", segmental_snr(t.samples(), i.samples(), frame));
    Ok(())
}
