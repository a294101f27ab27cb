//! Source-filter voice synthesis for desk-scale experiments.
//!
//! A voice is a band-limited glottal pulse train with seeded jitter, a
//! one-pole spectral tilt, and a cascade of two-pole formant resonators.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

pub const MIN_PITCH_HZ: f64 = 50.0;
pub const MAX_PITCH_HZ: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub freq_hz: f64,
    pub bandwidth_hz: f64,
}

impl Formant {
    pub const fn new(freq_hz: f64, bandwidth_hz: f64) -> Self {
        Self {
            freq_hz,
            bandwidth_hz,
        }
    }
}

/// Parameters of one synthetic talker in one talking condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voice {
    pub pitch_hz: f64,
    /// One formant set per vowel; syllables draw from these.
    pub vowels: Vec<Vec<Formant>>,
    /// One-pole source tilt coefficient in [0, 1); larger is darker.
    pub tilt: f64,
    /// Relative per-period pitch jitter (standard deviation).
    pub jitter: f64,
    /// Syllables per second; `None` means one continuous voiced stretch.
    pub syllable_rate: Option<f64>,
    /// Level of the broadband floor relative to the voiced RMS.
    pub noise_floor: f64,
}

impl Voice {
    fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(MIN_PITCH_HZ..=MAX_PITCH_HZ).contains(&self.pitch_hz) {
            return Err(Error::Param(format!(
                "pitch {} Hz outside [{MIN_PITCH_HZ}, {MAX_PITCH_HZ}]",
                self.pitch_hz
            )));
        }
        if self.vowels.is_empty() {
            return Err(Error::Param("voice needs at least one formant set".into()));
        }
        let nyquist = sample_rate as f64 / 2.0;
        for f in self.vowels.iter().flatten() {
            if !(f.freq_hz > 0.0 && f.freq_hz < nyquist && f.bandwidth_hz > 0.0) {
                return Err(Error::Param(format!(
                    "formant {} Hz / {} Hz bandwidth invalid below Nyquist {nyquist}",
                    f.freq_hz, f.bandwidth_hz
                )));
            }
        }
        if !(0.0..1.0).contains(&self.tilt) {
            return Err(Error::Param(format!("tilt {} outside [0, 1)", self.tilt)));
        }
        Ok(())
    }
}

/// Continuous vowel from a glottal pulse train at `pitch_hz` shaped by
/// `formants` (frequency, bandwidth in Hz). Deterministic in all arguments.
pub fn synth_speaker(
    pitch_hz: f64,
    formants: &[(f64, f64)],
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<AudioClip> {
    let voice = Voice {
        pitch_hz,
        vowels: vec![formants.iter().map(|&(f, b)| Formant::new(f, b)).collect()],
        tilt: 0.9,
        jitter: 0.003,
        syllable_rate: None,
        noise_floor: 0.0,
    };
    synth_utterance(&voice, duration_s, sample_rate, seed)
}

const PULSE_HALF_WIDTH: isize = 8;
const TARGET_RMS: f64 = 0.1;

/// Renders `duration_s` seconds of `voice`.
///
/// With a syllable rate, the clip alternates voiced syllables (random vowel,
/// slight falling intonation) with short pauses.
pub fn synth_utterance(voice: &Voice, duration_s: f64, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    voice.validate(sample_rate)?;
    if !(duration_s > 0.0) {
        return Err(Error::Param(format!("duration must be positive, got {duration_s}")));
    }
    let sr = sample_rate as f64;
    let n = (duration_s * sr).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // (start, end, vowel index, intonation slope) per voiced stretch
    let mut segments = Vec::new();
    match voice.syllable_rate {
        None => segments.push((0usize, n, 0usize, 0.0)),
        Some(rate) => {
            let mut t = (rng.gen_range(0.02..0.06) * sr) as usize;
            while t < n {
                let syl = ((rng.gen_range(0.7..1.3) / rate) * sr) as usize;
                let voiced = (syl as f64 * rng.gen_range(0.65..0.85)) as usize;
                let vowel = rng.gen_range(0..voice.vowels.len());
                let slope = rng.gen_range(-0.12..0.04);
                segments.push((t, (t + voiced).min(n), vowel, slope));
                t += syl;
            }
        }
    }

    let mut out = vec![0.0; n];
    for &(start, end, vowel, slope) in &segments {
        if end <= start + 1 {
            continue;
        }
        let len = end - start;
        let mut source = vec![0.0; len];
        let mut t = rng.gen_range(0.0..1.0);
        while t < len as f64 {
            let progress = t / len as f64;
            let f0 = voice.pitch_hz * (1.0 + slope * progress);
            let amp = 1.0 + 0.05 * rng.gen_range(-1.0..1.0);
            add_bandlimited_pulse(&mut source, t, amp);
            let jitter = 1.0 + voice.jitter * gaussianish(&mut rng);
            t += sr / f0 * jitter;
        }
        // source tilt
        let mut prev = 0.0;
        for s in source.iter_mut() {
            prev = *s + voice.tilt * prev;
            *s = prev;
        }
        let mut shaped = source;
        for f in &voice.vowels[vowel] {
            resonate(&mut shaped, f, sr);
        }
        // raised-cosine onset and offset, 10 ms
        let ramp = ((0.01 * sr) as usize).min(len / 2).max(1);
        for i in 0..ramp {
            let g = 0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos();
            shaped[i] *= g;
            shaped[len - 1 - i] *= g;
        }
        out[start..end].copy_from_slice(&shaped);
    }

    let voiced_ms = {
        let (sum, count) = segments
            .iter()
            .flat_map(|&(s, e, _, _)| out[s..e].iter())
            .fold((0.0, 0usize), |(a, c), v| (a + v * v, c + 1));
        if count > 0 {
            sum / count as f64
        } else {
            0.0
        }
    };
    let scale = if voiced_ms > 0.0 {
        TARGET_RMS / voiced_ms.sqrt()
    } else {
        1.0
    };
    for v in out.iter_mut() {
        *v *= scale;
        if voice.noise_floor > 0.0 {
            *v += TARGET_RMS * voice.noise_floor * gaussianish(&mut rng);
        }
    }
    AudioClip::new(out, sample_rate)
}

/// Hann-windowed sinc impulse centred at fractional sample position `t`.
fn add_bandlimited_pulse(buf: &mut [f64], t: f64, amp: f64) {
    let centre = t.floor() as isize;
    for j in centre - PULSE_HALF_WIDTH..=centre + PULSE_HALF_WIDTH + 1 {
        if j < 0 || j as usize >= buf.len() {
            continue;
        }
        let d = j as f64 - t;
        let w = 0.5 + 0.5 * (PI * d / (PULSE_HALF_WIDTH as f64 + 1.0)).cos();
        let s = if d.abs() < 1e-12 { 1.0 } else { (PI * d).sin() / (PI * d) };
        buf[j as usize] += amp * s * w;
    }
}

/// Two-pole resonator with unit gain at DC, applied in place.
fn resonate(x: &mut [f64], f: &Formant, sr: f64) {
    let r = (-PI * f.bandwidth_hz / sr).exp();
    let theta = 2.0 * PI * f.freq_hz / sr;
    let a1 = -2.0 * r * theta.cos();
    let a2 = r * r;
    let g = 1.0 + a1 + a2;
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y = g * *v - a1 * y1 - a2 * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Approximately standard normal draw (sum of 12 uniforms).
fn gaussianish(rng: &mut ChaCha8Rng) -> f64 {
    (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0
}

/// Seeded white noise with unit-ish RMS.
pub fn white_noise(n: usize, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..n).map(|_| 0.3 * gaussianish(&mut rng)).collect();
    AudioClip::new(x, sample_rate)
}

/// Reference vowel formant sets for an adult talker (Hz).
pub const VOWEL_TEMPLATES: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];

/// Talker identity: base pitch and vocal-tract scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: String,
    pub pitch_hz: f64,
    /// Formant frequencies are multiplied by this factor.
    pub tract_scale: f64,
    pub bandwidth_scale: f64,
}

impl SpeakerProfile {
    pub fn random(id: impl Into<String>, rng: &mut impl Rng) -> Self {
        Self {
            id: id.into(),
            pitch_hz: (rng.gen_range(85f64.ln()..230f64.ln())).exp(),
            tract_scale: rng.gen_range(0.85..1.18),
            bandwidth_scale: rng.gen_range(0.8..1.3),
        }
    }
}

/// Talking condition realized as pitch scaling, source tilt and speaking
/// rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionProfile {
    pub name: String,
    pub pitch_scale: f64,
    pub tilt: f64,
    pub syllable_rate: f64,
}

/// The first `n` talking conditions of a fixed palette.
pub fn emotion_palette(n: usize) -> Vec<EmotionProfile> {
    const BASE: [(&str, f64, f64, f64); 6] = [
        ("neutral", 1.0, 0.88, 4.0),
        ("angry", 1.3, 0.55, 5.0),
        ("sad", 0.88, 0.97, 3.0),
        ("happy", 1.2, 0.7, 5.5),
        ("fear", 1.4, 0.8, 6.0),
        ("disgust", 0.95, 0.93, 3.5),
    ];
    (0..n)
        .map(|i| {
            let (name, pitch_scale, tilt, rate) = BASE[i % BASE.len()];
            let round = i / BASE.len();
            EmotionProfile {
                name: if round == 0 {
                    name.to_string()
                } else {
                    format!("{name}{round}")
                },
                pitch_scale: pitch_scale * (1.0 + 0.07 * round as f64),
                tilt,
                syllable_rate: rate,
            }
        })
        .collect()
}

/// Combines a talker and a talking condition into a renderable voice.
pub fn voice_for(speaker: &SpeakerProfile, emotion: &EmotionProfile, sample_rate: u32) -> Voice {
    let nyquist = sample_rate as f64 / 2.0;
    let vowels = VOWEL_TEMPLATES
        .iter()
        .map(|tpl| {
            tpl.iter()
                .enumerate()
                .map(|(i, &f)| {
                    let freq = (f * speaker.tract_scale).min(0.92 * nyquist);
                    Formant::new(freq, (60.0 + 40.0 * i as f64) * speaker.bandwidth_scale)
                })
                .collect()
        })
        .collect();
    Voice {
        pitch_hz: (speaker.pitch_hz * emotion.pitch_scale).clamp(MIN_PITCH_HZ, MAX_PITCH_HZ),
        vowels,
        tilt: emotion.tilt,
        jitter: 0.004,
        syllable_rate: Some(emotion.syllable_rate),
        noise_floor: 0.003,
    }
}
