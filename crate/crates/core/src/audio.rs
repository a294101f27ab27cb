//! Audio ingestion and dataset plumbing: WAV I/O, resampling, target and
//! interference mixing, and JSON-lines manifests.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A mono signal with its sampling rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Param("audio clip must contain at least one sample".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Param("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Param(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean of the squared samples.
    pub fn mean_square(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        self.mean_square().sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate)
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64
}

/// Reads a 16-bit PCM RIFF/WAVE file. Multi-channel input is averaged to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Unsupported(format!(
            "{:?} {}-bit samples; only 16-bit PCM is supported",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| map_hound(path, e))?;
    if raw.is_empty() {
        return Err(Error::Format(format!("{}: empty data chunk", path.display())));
    }
    let samples: Vec<f64> = raw
        .chunks(channels)
        .map(|frame| frame.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / frame.len() as f64)
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono; samples are clamped to [-1, 1] and rounded.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        writer
            .write_sample(quantize(s))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

pub(crate) fn quantize(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::Unsupported(format!("{}: unsupported WAV encoding", path.display())),
        hound::Error::FormatError(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Half-width of the interpolation kernel, in zero crossings of the
/// lower-rate sinc.
const SINC_ZERO_CROSSINGS: f64 = 24.0;

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// The cutoff sits at half the lower of the two rates. Each output sample is
/// normalized by its kernel mass so constant signals pass unchanged, even at
/// the edges.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Param("target sample rate must be positive".into()));
    }
    let src_rate = clip.sample_rate;
    if target_rate == src_rate {
        return Ok(clip.clone());
    }
    let x = &clip.samples;
    let step = src_rate as f64 / target_rate as f64;
    // cutoff relative to the input Nyquist
    let cutoff = (target_rate as f64 / src_rate as f64).min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let out_len = ((x.len() as f64) * target_rate as f64 / src_rate as f64).round().max(1.0) as usize;

    let out: Vec<f64> = (0..out_len)
        .map(|n| {
            let centre = n as f64 * step;
            let lo = (centre - half_width).ceil().max(0.0) as usize;
            let hi = ((centre + half_width).floor() as usize).min(x.len() - 1);
            let mut acc = 0.0;
            let mut mass = 0.0;
            for (j, &xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let t = centre - j as f64;
                let w = cutoff * sinc(cutoff * t) * blackman(t / half_width);
                acc += w * xj;
                mass += w;
            }
            if mass.abs() > 1e-12 {
                acc / mass
            } else {
                0.0
            }
        })
        .collect();
    AudioClip::new(out, target_rate)
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        (PI * t).sin() / (PI * t)
    }
}

/// Blackman window on u in [-1, 1].
fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let a = PI * (u + 1.0);
    0.42 - 0.5 * a.cos() + 0.08 * (2.0 * a).cos()
}

/// Target-to-interference mixing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    /// Mean-square energy of the target divided by that of the scaled
    /// interference. 2.0 means "2:1".
    pub ratio_target_to_interference: f64,
    /// Selects the cyclic offset at which the interference is aligned.
    pub seed: u64,
}

impl MixSpec {
    pub fn new(ratio: f64, seed: u64) -> Result<Self> {
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(Error::Param(format!("mixing ratio must be positive and finite, got {ratio}")));
        }
        Ok(Self {
            ratio_target_to_interference: ratio,
            seed,
        })
    }
}

/// Output of [`mix_noise`]: the mixture together with both stems as they
/// appear inside it.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixture: AudioClip,
    /// Target stem, after any peak rescale.
    pub target: AudioClip,
    /// Gain-adjusted interference stem, after any peak rescale.
    pub interference: AudioClip,
    /// Gain applied to the raw interference to reach the requested ratio.
    pub interference_gain: f64,
    /// Uniform factor applied to everything when the mixture peak exceeded
    /// 1.0; 1.0 when no rescale happened.
    pub peak_rescale: f64,
}

/// Adds `interference` to `target` at the requested energy ratio.
///
/// The interference is tiled or truncated to the target length starting at a
/// seed-dependent offset.
pub fn mix_noise(target: &AudioClip, interference: &AudioClip, spec: MixSpec) -> Result<Mixture> {
    if target.sample_rate != interference.sample_rate {
        return Err(Error::Param(format!(
            "sample rates differ: target {} Hz, interference {} Hz",
            target.sample_rate, interference.sample_rate
        )));
    }
    MixSpec::new(spec.ratio_target_to_interference, spec.seed)?;
    let ms_target = target.mean_square();
    if ms_target == 0.0 {
        return Err(Error::DegenerateSignal("target is silent".into()));
    }
    let src = interference.samples();
    let offset = ChaCha8Rng::seed_from_u64(spec.seed).gen_range(0..src.len());
    let aligned: Vec<f64> = (0..target.len()).map(|n| src[(offset + n) % src.len()]).collect();
    let ms_interf = mean_square(&aligned);
    if ms_interf == 0.0 {
        return Err(Error::DegenerateSignal("interference is silent".into()));
    }
    let gain = (ms_target / (spec.ratio_target_to_interference * ms_interf)).sqrt();
    let scaled: Vec<f64> = aligned.iter().map(|s| s * gain).collect();
    let mut mixed: Vec<f64> = target.samples.iter().zip(&scaled).map(|(a, b)| a + b).collect();
    let peak = mixed.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let rescale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    let mut target_stem = target.samples.clone();
    let mut interf_stem = scaled;
    if rescale != 1.0 {
        for v in mixed.iter_mut().chain(target_stem.iter_mut()).chain(interf_stem.iter_mut()) {
            *v *= rescale;
        }
    }
    Ok(Mixture {
        mixture: AudioClip::new(mixed, target.sample_rate)?,
        target: AudioClip::new(target_stem, target.sample_rate)?,
        interference: AudioClip::new(interf_stem, target.sample_rate)?,
        interference_gain: gain,
        peak_rescale: rescale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub speaker_id: String,
    pub emotion: String,
    pub split: Split,
}

const MANIFEST_KEYS: [&str; 4] = ["path", "speaker_id", "emotion", "split"];

/// Loads a JSON-lines manifest. Blank lines are skipped; relative paths are
/// kept as written.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema {
            line: line_no,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| schema(format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| schema("expected a JSON object".into()))?;
        for key in obj.keys() {
            if !MANIFEST_KEYS.contains(&key.as_str()) {
                return Err(schema(format!("unexpected key \"{key}\"")));
            }
        }
        let field = |key: &str| -> Result<&str> {
            let v = obj
                .get(key)
                .ok_or_else(|| schema(format!("missing key \"{key}\"")))?;
            v.as_str()
                .ok_or_else(|| schema(format!("key \"{key}\" must be a string")))
        };
        let path = field("path")?;
        let speaker_id = field("speaker_id")?;
        let emotion = field("emotion")?;
        let split = match field("split")? {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(schema(format!("unknown split \"{other}\""))),
        };
        if path.is_empty() || speaker_id.is_empty() || emotion.is_empty() {
            return Err(schema("path, speaker_id and emotion must be non-empty".into()));
        }
        if !seen.insert(path.to_string()) {
            return Err(schema(format!("duplicate path \"{path}\"")));
        }
        entries.push(ManifestEntry {
            path: PathBuf::from(path),
            speaker_id: speaker_id.to_string(),
            emotion: emotion.to_string(),
            split,
        });
    }
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>, sr: u32) -> AudioClip {
        AudioClip::new(samples, sr).unwrap()
    }

    #[test]
    fn clip_invariants() {
        assert!(AudioClip::new(vec![], 8000).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
        assert!(AudioClip::new(vec![f64::NAN], 8000).is_err());
    }

    #[test]
    fn reads_known_pcm_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("known.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for s in [0i16, 16384, -32768] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let c = read_wav(&path).unwrap();
        assert_eq!(c.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(c.sample_rate(), 8000);
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for s in [16384i16, 0, -16384, -16384] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let c = read_wav(&path).unwrap();
        assert_eq!(c.samples(), &[0.25, -0.5]);
    }

    #[test]
    fn empty_data_chunk_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        hound::WavWriter::create(&path, spec).unwrap().finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Format(_))));
    }

    #[test]
    fn garbage_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.wav");
        fs::write(&path, b"this is not a riff file at all").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Format(_))));
    }

    #[test]
    fn float_wav_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("float.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0.5f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Unsupported(_))));
    }

    #[test]
    fn write_clamps_and_rounds() {
        assert_eq!(quantize(1.5), 32767);
        assert_eq!(quantize(-2.0), -32768);
        assert_eq!(quantize(0.0), 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clamp.wav");
        write_wav(&clip(vec![1.5, -2.0, 0.0], 8000), &path).unwrap();
        let raw: Vec<i16> = hound::WavReader::open(&path)
            .unwrap()
            .into_samples::<i16>()
            .map(|s| s.unwrap())
            .collect();
        assert_eq!(raw, vec![32767, -32768, 0]);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let c = clip(vec![0.0], 8000);
        let err = write_wav(&c, "/nonexistent-dir/x/y.wav").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn resample_identity_and_dc() {
        let c = clip(vec![0.1, 0.2, -0.3, 0.4], 8000);
        assert_eq!(resample(&c, 8000).unwrap(), c);
        let dc = clip(vec![0.5; 4460], 44600);
        for rate in [12000, 8000, 16000, 44100, 96000] {
            let out = resample(&dc, rate).unwrap();
            assert!(out.samples().iter().all(|s| (s - 0.5).abs() < 1e-3), "rate {rate}");
        }
    }

    #[test]
    fn resample_preserves_duration() {
        let c = clip(vec![0.0; 44600], 44600);
        let out = resample(&c, 12000).unwrap();
        let period = 1.0 / 12000.0;
        assert!((out.duration_s() - c.duration_s()).abs() <= period);
    }

    #[test]
    fn mix_rejects_silence() {
        let t = clip(vec![0.1, -0.1, 0.2], 8000);
        let z = clip(vec![0.0; 3], 8000);
        let spec = MixSpec::new(2.0, 0).unwrap();
        assert!(matches!(mix_noise(&t, &z, spec), Err(Error::DegenerateSignal(_))));
        assert!(matches!(mix_noise(&z, &t, spec), Err(Error::DegenerateSignal(_))));
        assert!(MixSpec::new(0.0, 0).is_err());
    }

    #[test]
    fn mix_hits_energy_ratio_and_rescales_uniformly() {
        let n = 4000;
        let t: Vec<f64> = (0..n).map(|i| 0.9 * (i as f64 * 0.05).sin()).collect();
        let noise: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.8 } else { -0.8 }).collect();
        let spec = MixSpec::new(0.5, 3).unwrap();
        let m = mix_noise(&clip(t, 8000), &clip(noise, 8000), spec).unwrap();
        assert!(m.peak_rescale < 1.0);
        assert!(m.mixture.peak() <= 1.0 + 1e-12);
        let r = m.target.mean_square() / m.interference.mean_square();
        assert!((r - 0.5).abs() < 1e-9);
        for i in 0..n {
            let sum = m.target.samples()[i] + m.interference.samples()[i];
            assert!((sum - m.mixture.samples()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_ratio_leaves_target() {
        let t: Vec<f64> = (0..800).map(|i| 0.3 * (i as f64 * 0.1).cos()).collect();
        let noise: Vec<f64> = (0..800).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let target = clip(t, 8000);
        let m = mix_noise(&target, &clip(noise, 8000), MixSpec::new(1e9, 1).unwrap()).unwrap();
        for (a, b) in m.mixture.samples().iter().zip(target.samples()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn manifest_parsing() {
        let text = concat!(
            r#"{"path":"a.wav","speaker_id":"s1","emotion":"neutral","split":"train"}"#,
            "\n",
            r#"{"path":"b.wav","speaker_id":"s2","emotion":"angry","split":"test"}"#,
            "\n"
        );
        let entries = parse_manifest(text).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[1].split, Split::Test);
        assert!(parse_manifest("").unwrap().is_empty());
    }

    #[test]
    fn manifest_schema_errors() {
        let missing = concat!(
            r#"{"path":"a.wav","speaker_id":"s1","emotion":"neutral","split":"train"}"#,
            "\n",
            r#"{"path":"b.wav","speaker_id":"s2","split":"test"}"#
        );
        match parse_manifest(missing) {
            Err(Error::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("emotion"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
        let bad_split = r#"{"path":"a.wav","speaker_id":"s1","emotion":"n","split":"dev"}"#;
        assert!(matches!(parse_manifest(bad_split), Err(Error::Schema { line: 1, .. })));
        let dup = concat!(
            r#"{"path":"a.wav","speaker_id":"s1","emotion":"n","split":"train"}"#,
            "\n",
            r#"{"path":"a.wav","speaker_id":"s2","emotion":"n","split":"test"}"#
        );
        assert!(matches!(parse_manifest(dup), Err(Error::Schema { line: 2, .. })));
        let empty_label = r#"{"path":"a.wav","speaker_id":"","emotion":"n","split":"train"}"#;
        assert!(parse_manifest(empty_label).is_err());
    }
}
