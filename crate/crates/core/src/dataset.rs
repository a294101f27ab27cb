//! Labelled utterance collections: seeded synthetic corpora and manifest
//! backed corpora on disk.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_manifest, mix_noise, read_wav, write_manifest, write_wav, AudioClip, ManifestEntry, MixSpec, Split};
use crate::error::{Error, Result};
use crate::synth::{emotion_palette, synth_utterance, voice_for, white_noise, SpeakerProfile};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub id: String,
    pub speaker: String,
    pub emotion: String,
    pub split: Split,
    pub clip: AudioClip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDatasetConfig {
    pub speakers: usize,
    pub emotions: usize,
    /// Utterances per (speaker, emotion) cell.
    pub utterances: usize,
    /// Training utterances per cell; `None` means half, rounded up.
    pub train_per_cell: Option<usize>,
    pub sample_rate: u32,
    pub duration_s: f64,
    /// When set, test utterances are mixed with white noise at this
    /// target-to-noise energy ratio.
    pub test_noise_ratio: Option<f64>,
    /// As `test_noise_ratio`, for training utterances.
    pub train_noise_ratio: Option<f64>,
    pub seed: u64,
}

impl Default for SynthDatasetConfig {
    fn default() -> Self {
        Self {
            speakers: 4,
            emotions: 2,
            utterances: 6,
            train_per_cell: None,
            sample_rate: 8000,
            duration_s: 1.0,
            test_noise_ratio: None,
            train_noise_ratio: None,
            seed: 0,
        }
    }
}

impl SynthDatasetConfig {
    pub fn n_train(&self) -> usize {
        self.train_per_cell
            .unwrap_or_else(|| self.utterances.div_ceil(2))
            .min(self.utterances)
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 || self.emotions == 0 || self.utterances == 0 {
            return Err(Error::Config("speakers, emotions and utterances must be positive".into()));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("duration must be positive".into()));
        }
        for r in [self.test_noise_ratio, self.train_noise_ratio].into_iter().flatten() {
            MixSpec::new(r, 0).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Mixes two seeds into a well-spread stream seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn speaker_id(i: usize) -> String {
    format!("spk{:02}", i + 1)
}

/// Seeded speaker profiles for a synthetic corpus.
pub fn speaker_profiles(n: usize, seed: u64) -> Vec<SpeakerProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| SpeakerProfile::random(speaker_id(i), &mut rng)).collect()
}

/// Renders every (speaker, emotion, utterance) cell. Output order is speaker,
/// then emotion, then utterance index.
pub fn synth_dataset(cfg: &SynthDatasetConfig) -> Result<Vec<LabeledClip>> {
    cfg.validate()?;
    let speakers = speaker_profiles(cfg.speakers, cfg.seed);
    let emotions = emotion_palette(cfg.emotions);
    let n_train = cfg.n_train();
    let cells: Vec<(usize, usize, usize)> = (0..cfg.speakers)
        .flat_map(|s| (0..cfg.emotions).flat_map(move |e| (0..cfg.utterances).map(move |u| (s, e, u))))
        .collect();
    cells
        .par_iter()
        .enumerate()
        .map(|(idx, &(s, e, u))| {
            let speaker = &speakers[s];
            let emotion = &emotions[e];
            let voice = voice_for(speaker, emotion, cfg.sample_rate);
            let utt_seed = derive_seed(cfg.seed, idx as u64);
            let mut clip = synth_utterance(&voice, cfg.duration_s, cfg.sample_rate, utt_seed)?;
            let split = if u < n_train { Split::Train } else { Split::Test };
            let ratio = match split {
                Split::Train => cfg.train_noise_ratio,
                Split::Test => cfg.test_noise_ratio,
            };
            if let Some(r) = ratio {
                let noise = white_noise(clip.len(), cfg.sample_rate, derive_seed(utt_seed, 1))?;
                clip = mix_noise(&clip, &noise, MixSpec::new(r, derive_seed(utt_seed, 2))?)?.mixture;
            }
            Ok(LabeledClip {
                id: format!("{}_{}_{:02}", speaker.id, emotion.name, u),
                speaker: speaker.id.clone(),
                emotion: emotion.name.clone(),
                split,
                clip,
            })
        })
        .collect()
}

/// Writes one WAV per clip and a manifest with paths relative to `dir`.
pub fn write_dataset(clips: &[LabeledClip], dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries = clips
        .iter()
        .map(|c| {
            let name = format!("{}.wav", c.id);
            write_wav(&c.clip, dir.join(&name))?;
            Ok(ManifestEntry {
                path: PathBuf::from(name),
                speaker_id: c.speaker.clone(),
                emotion: c.emotion.clone(),
                split: c.split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = dir.join(MANIFEST_FILE);
    write_manifest(&entries, &manifest)?;
    Ok(manifest)
}

/// Loads every clip listed in a manifest; relative paths resolve against the
/// manifest's directory.
pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<Vec<LabeledClip>> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let entries = load_manifest(manifest)?;
    entries
        .par_iter()
        .map(|e| {
            let path = if e.path.is_absolute() {
                e.path.clone()
            } else {
                base.join(&e.path)
            };
            Ok(LabeledClip {
                id: e.path.file_stem().map_or_else(
                    || e.path.display().to_string(),
                    |s| s.to_string_lossy().into_owned(),
                ),
                speaker: e.speaker_id.clone(),
                emotion: e.emotion.clone(),
                split: e.split,
                clip: read_wav(&path)?,
            })
        })
        .collect()
}

pub fn split_of(clips: &[LabeledClip], split: Split) -> Vec<&LabeledClip> {
    clips.iter().filter(|c| c.split == split).collect()
}
