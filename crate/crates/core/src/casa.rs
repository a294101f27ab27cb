//! Modulation-domain segregation of a pitched target from co-channel
//! interference.
//!
//! The chain is: STFT, envelope detection, modulation transform along the
//! frame axis, smoothing with onset/offset detection, a pitch-driven ideal
//! binary mask, target and interference modulation energies, and a per-channel
//! ratio mask applied before overlap-add resynthesis.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp::{
    estimate_pitch, istft_overlap_add, stft, FrameParams, PitchTrack, Spectrogram, Window,
};
use crate::error::{Error, Result};

/// Sub-band magnitudes M(m, k), indexed `[frame][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeMatrix {
    pub values: Vec<Vec<f64>>,
    pub params: FrameParams,
}

impl EnvelopeMatrix {
    pub fn n_frames(&self) -> usize {
        self.values.len()
    }

    pub fn n_channels(&self) -> usize {
        self.params.n_bins()
    }
}

/// DFT of each channel's envelope along the frame axis, indexed
/// `[channel][modulation bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationSpectrum {
    pub values: Vec<Vec<Complex64>>,
    pub len: usize,
}

/// Per channel, sorted non-overlapping (onset, offset) pairs of modulation
/// bin indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OnsetOffsetMap {
    pub channels: Vec<Vec<(usize, usize)>>,
}

impl OnsetOffsetMap {
    pub fn is_empty(&self) -> bool {
        self.channels.iter().all(Vec::is_empty)
    }

    pub fn segment_count(&self) -> usize {
        self.channels.iter().map(Vec::len).sum()
    }
}

/// Time-frequency selection with the shape of its spectrogram, `[frame][bin]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub bits: Vec<Vec<bool>>,
}

impl BinaryMask {
    pub fn filled(n_frames: usize, n_bins: usize, value: bool) -> Self {
        Self {
            bits: vec![vec![value; n_bins]; n_frames],
        }
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self
                .bits
                .iter()
                .map(|row| row.iter().map(|b| !b).collect())
                .collect(),
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().flatten().filter(|b| **b).count()
    }

    fn check_shape(&self, spec: &Spectrogram) -> Result<()> {
        if self.bits.len() != spec.n_frames() || self.bits.iter().any(|r| r.len() != spec.n_bins()) {
            return Err(Error::Shape(format!(
                "mask has {} frames, spectrogram {} frames x {} bins",
                self.bits.len(),
                spec.n_frames(),
                spec.n_bins()
            )));
        }
        Ok(())
    }
}

/// Mean modulation energies per channel for the target (X_T) and the
/// interference (X_I).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEnergies {
    pub target: Vec<f64>,
    pub interference: Vec<f64>,
}

/// Per-channel gains in [0, 1], broadcast over frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyMask {
    pub gains: Vec<f64>,
}

impl FrequencyMask {
    pub fn pass_through(n_bins: usize) -> Self {
        Self {
            gains: vec![1.0; n_bins],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CasaConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// FFT length; `None` picks the next power of two above the frame.
    pub fft_size: Option<usize>,
    /// Modulation DFT length; `None` picks the next power of two at or above
    /// the frame count.
    pub modulation_len: Option<usize>,
    pub rho_min: i32,
    pub rho_max: i32,
    pub smoothing_radius: usize,
    pub threshold_k: f64,
    pub pitch_band_low: f64,
    pub pitch_band_high: f64,
    pub voicing_threshold: f64,
}

impl Default for CasaConfig {
    fn default() -> Self {
        Self {
            frame_ms: 30.0,
            hop_ms: 5.0,
            fft_size: None,
            modulation_len: None,
            rho_min: -10,
            rho_max: 10,
            smoothing_radius: 2,
            threshold_k: 1.0,
            pitch_band_low: crate::dsp::DEFAULT_PITCH_BAND.0,
            pitch_band_high: crate::dsp::DEFAULT_PITCH_BAND.1,
            voicing_threshold: crate::dsp::DEFAULT_VOICING_THRESHOLD,
        }
    }
}

impl CasaConfig {
    pub fn frame_params(&self, sample_rate: u32) -> Result<FrameParams> {
        FrameParams::from_ms(sample_rate, self.frame_ms, self.hop_ms, Window::Hamming, self.fft_size)
            .map_err(|e| Error::Config(format!("CASA framing: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho_min > self.rho_max {
            return Err(Error::Config(format!(
                "rho_min {} exceeds rho_max {}",
                self.rho_min, self.rho_max
            )));
        }
        if !(self.threshold_k.is_finite()) {
            return Err(Error::Config("threshold_k must be finite".into()));
        }
        if let Some(0) = self.modulation_len {
            return Err(Error::Config("modulation_len must be at least 1".into()));
        }
        if !(self.pitch_band_low > 0.0 && self.pitch_band_low < self.pitch_band_high) {
            return Err(Error::Config("pitch band must satisfy 0 < low < high".into()));
        }
        Ok(())
    }

    fn modulation_len_for(&self, n_frames: usize) -> usize {
        self.modulation_len
            .unwrap_or_else(|| n_frames.max(1).next_power_of_two())
    }
}

/// Every intermediate product of [`segregate`].
#[derive(Debug, Clone)]
pub struct CasaDiagnostics {
    pub spectrogram: Spectrogram,
    pub envelopes: EnvelopeMatrix,
    pub modulation: ModulationSpectrum,
    pub onsets_offsets: OnsetOffsetMap,
    pub pitch: PitchTrack,
    pub ibm: BinaryMask,
    pub energies: BandEnergies,
    pub frequency_mask: FrequencyMask,
    /// True when no voiced frame was found and the frequency mask fell back
    /// to pass-through.
    pub pass_through: bool,
}

/// M(m, k) = |X(m, k)|.
pub fn envelope_detect(spec: &Spectrogram) -> EnvelopeMatrix {
    EnvelopeMatrix {
        values: spec
            .bins
            .iter()
            .map(|row| row.iter().map(|c| c.norm()).collect())
            .collect(),
        params: spec.params,
    }
}

/// Per channel, the `len`-point DFT of the envelope over frames.
///
/// Shorter envelopes are zero-padded; longer ones contribute only their first
/// `len` frames.
pub fn modulation_transform(env: &EnvelopeMatrix, len: usize) -> Result<ModulationSpectrum> {
    if len < 1 {
        return Err(Error::Param("modulation DFT length must be at least 1".into()));
    }
    let fft = FftPlanner::new().plan_fft_forward(len);
    let values = (0..env.n_channels())
        .map(|k| {
            let mut buf: Vec<Complex64> = env
                .values
                .iter()
                .take(len)
                .map(|row| Complex64::new(row[k], 0.0))
                .collect();
            buf.resize(len, Complex64::new(0.0, 0.0));
            fft.process(&mut buf);
            buf
        })
        .collect();
    Ok(ModulationSpectrum { values, len })
}

fn moving_average(x: &[f64], radius: usize) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(x.len() - 1);
            x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

fn central_difference(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| match (i, n) {
            (_, 1) => 0.0,
            (0, _) => x[1] - x[0],
            (i, n) if i == n - 1 => x[n - 1] - x[n - 2],
            (i, _) => 0.5 * (x[i + 1] - x[i - 1]),
        })
        .collect()
}

/// Finds rises and falls of the smoothed modulation magnitude per channel.
///
/// The threshold is mean + `threshold_k` * stddev of the derivative along the
/// modulation axis. An onset is an upward crossing of +threshold, an offset a
/// downward crossing of -threshold. Channels with a non-positive threshold
/// (flat spectra) yield no segments.
pub fn detect_onsets_offsets(
    modulation: &ModulationSpectrum,
    smoothing_radius: usize,
    threshold_k: f64,
) -> OnsetOffsetMap {
    let channels = modulation
        .values
        .iter()
        .map(|row| {
            let mags: Vec<f64> = row.iter().map(|c| c.norm()).collect();
            channel_segments(&mags, smoothing_radius, threshold_k)
        })
        .collect();
    OnsetOffsetMap { channels }
}

fn channel_segments(mags: &[f64], radius: usize, threshold_k: f64) -> Vec<(usize, usize)> {
    let n = mags.len();
    if n < 2 {
        return Vec::new();
    }
    let d = central_difference(&moving_average(mags, radius));
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let theta = mean + threshold_k * var.sqrt();
    let scale = mags.iter().cloned().fold(0.0, f64::max);
    if !(theta > 1e-12 * scale) {
        return Vec::new();
    }
    let mut pairs = Vec::new();
    let mut open: Option<usize> = None;
    for i in 1..n {
        let rises = d[i - 1] < theta && d[i] >= theta;
        let falls = d[i - 1] > -theta && d[i] <= -theta;
        match open {
            None if rises => open = Some(i),
            Some(on) if falls && i > on => {
                pairs.push((on, i));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(on) = open {
        if on < n - 1 {
            pairs.push((on, n - 1));
        }
    }
    pairs
}

/// Pitch-driven ideal binary mask.
///
/// For each voiced frame with pitch f_d, every harmonic h * f_d below Nyquist
/// is shifted by rho * fs / N for each rho in `rho_range` and snapped to the
/// nearest bin; those bins are set. Unvoiced frames stay all zero.
pub fn build_ideal_binary_mask(
    spec: &Spectrogram,
    pitch: &PitchTrack,
    rho_range: (i32, i32),
) -> Result<BinaryMask> {
    if pitch.frames.len() != spec.n_frames() {
        return Err(Error::Shape(format!(
            "pitch track has {} frames, spectrogram {}",
            pitch.frames.len(),
            spec.n_frames()
        )));
    }
    let n = spec.params.fft_size as f64;
    let fs = spec.sample_rate as f64;
    let spacing = fs / n;
    let nyquist = fs / 2.0;
    let n_bins = spec.n_bins();
    let bits = pitch
        .frames
        .iter()
        .map(|f| {
            let mut row = vec![false; n_bins];
            if let Some(fd) = *f {
                let mut h = 1.0;
                while h * fd < nyquist {
                    for rho in rho_range.0..=rho_range.1 {
                        let f_on = h * fd - rho as f64 * spacing;
                        let k = (f_on / spacing).round();
                        if k >= 0.0 && (k as usize) < n_bins {
                            row[k as usize] = true;
                        }
                    }
                    h += 1.0;
                }
            }
            row
        })
        .collect();
    Ok(BinaryMask { bits })
}

/// Keeps bins where the mask is set and zeroes the rest.
pub fn apply_binary_mask(spec: &Spectrogram, mask: &BinaryMask) -> Result<Spectrogram> {
    mask.check_shape(spec)?;
    let zero = Complex64::new(0.0, 0.0);
    let bins = spec
        .bins
        .iter()
        .zip(&mask.bits)
        .map(|(row, bits)| row.iter().zip(bits).map(|(c, &b)| if b { *c } else { zero }).collect())
        .collect();
    Ok(Spectrogram {
        bins,
        ..spec.clone()
    })
}

/// Mean |X(k, i)|^2 per channel over the detected segments of that channel,
/// or over all modulation bins where the channel has no segment.
///
/// This is the single place that decides which modulation bins count toward
/// a source's energy.
fn segment_mean_energy(modulation: &ModulationSpectrum, segments: &OnsetOffsetMap) -> Vec<f64> {
    modulation
        .values
        .iter()
        .zip(&segments.channels)
        .map(|(row, segs)| {
            if segs.is_empty() {
                row.iter().map(|c| c.norm_sqr()).sum::<f64>() / row.len() as f64
            } else {
                let (sum, count) = segs
                    .iter()
                    .flat_map(|&(on, off)| row[on..=off].iter())
                    .fold((0.0, 0usize), |(s, c), v| (s + v.norm_sqr(), c + 1));
                sum / count as f64
            }
        })
        .collect()
}

/// Target energies from the mask-selected spectrogram, interference energies
/// from its complement.
pub fn estimate_band_energies(
    spec: &Spectrogram,
    mask: &BinaryMask,
    modulation_len: usize,
    smoothing_radius: usize,
    threshold_k: f64,
) -> Result<BandEnergies> {
    let measure = |m: &BinaryMask| -> Result<Vec<f64>> {
        let masked = apply_binary_mask(spec, m)?;
        let modulation = modulation_transform(&envelope_detect(&masked), modulation_len)?;
        let segments = detect_onsets_offsets(&modulation, smoothing_radius, threshold_k);
        Ok(segment_mean_energy(&modulation, &segments))
    };
    Ok(BandEnergies {
        target: measure(mask)?,
        interference: measure(&mask.complement())?,
    })
}

/// gain(k) = X_T / (X_T + X_I), zero where both vanish.
pub fn build_frequency_mask(e: &BandEnergies) -> FrequencyMask {
    FrequencyMask {
        gains: e
            .target
            .iter()
            .zip(&e.interference)
            .map(|(&t, &i)| if t + i > 0.0 { t / (t + i) } else { 0.0 })
            .collect(),
    }
}

/// Scales every frame of `spec` by the per-channel gains.
pub fn apply_frequency_mask(spec: &Spectrogram, mask: &FrequencyMask) -> Result<Spectrogram> {
    if mask.gains.len() != spec.n_bins() {
        return Err(Error::Shape(format!(
            "frequency mask has {} channels, spectrogram {}",
            mask.gains.len(),
            spec.n_bins()
        )));
    }
    let bins = spec
        .bins
        .iter()
        .map(|row| row.iter().zip(&mask.gains).map(|(c, g)| c * g).collect())
        .collect();
    Ok(Spectrogram {
        bins,
        ..spec.clone()
    })
}

/// Zero-pads so the frame grid covers every sample.
fn pad_to_frame_grid(clip: &AudioClip, params: &FrameParams) -> Result<AudioClip> {
    let len = clip.len();
    let padded = if len <= params.frame_len {
        params.frame_len
    } else {
        let steps = (len - params.frame_len).div_ceil(params.hop);
        params.frame_len + steps * params.hop
    };
    let mut x = clip.samples().to_vec();
    x.resize(padded, 0.0);
    clip.with_samples(x)
}

/// Filters `clip` with an already computed frequency mask, for instance to
/// measure what segregation did to separately known stems.
pub fn filter_with_mask(clip: &AudioClip, mask: &FrequencyMask, config: &CasaConfig) -> Result<AudioClip> {
    let params = config.frame_params(clip.sample_rate())?;
    let padded = pad_to_frame_grid(clip, &params)?;
    let spec = stft(&padded, &params)?;
    let out = istft_overlap_add(&apply_frequency_mask(&spec, mask)?)?;
    let mut y = out.into_samples();
    y.truncate(clip.len());
    clip.with_samples(y)
}

/// Runs the full segregation chain. The output has the input's length.
pub fn segregate(clip: &AudioClip, config: &CasaConfig) -> Result<(AudioClip, CasaDiagnostics)> {
    config.validate()?;
    let params = config.frame_params(clip.sample_rate())?;
    let padded = pad_to_frame_grid(clip, &params)?;
    let spectrogram = stft(&padded, &params)?;
    let envelopes = envelope_detect(&spectrogram);
    let modulation_len = config.modulation_len_for(spectrogram.n_frames());
    let modulation = modulation_transform(&envelopes, modulation_len)?;
    let onsets_offsets = detect_onsets_offsets(&modulation, config.smoothing_radius, config.threshold_k);
    let pitch = estimate_pitch(
        &padded,
        &params,
        (config.pitch_band_low, config.pitch_band_high),
        config.voicing_threshold,
    )?;
    let ibm = build_ideal_binary_mask(&spectrogram, &pitch, (config.rho_min, config.rho_max))?;
    let energies = estimate_band_energies(
        &spectrogram,
        &ibm,
        modulation_len,
        config.smoothing_radius,
        config.threshold_k,
    )?;
    let pass_through = pitch.voiced().next().is_none();
    let frequency_mask = if pass_through {
        FrequencyMask::pass_through(spectrogram.n_bins())
    } else {
        build_frequency_mask(&energies)
    };
    let out = istft_overlap_add(&apply_frequency_mask(&spectrogram, &frequency_mask)?)?;
    let mut y = out.into_samples();
    y.truncate(clip.len());
    let out = clip.with_samples(y)?;
    Ok((
        out,
        CasaDiagnostics {
            spectrogram,
            envelopes,
            modulation,
            onsets_offsets,
            pitch,
            ibm,
            energies,
            frequency_mask,
            pass_through,
        },
    ))
}

pub const SEGMENTAL_SNR_FLOOR_DB: f64 = -10.0;
pub const SEGMENTAL_SNR_CEIL_DB: f64 = 35.0;

/// Frame-averaged SNR of a target stem against an interference stem, each
/// frame clamped to [-10, 35] dB. Frames where both stems are silent are
/// skipped.
pub fn segmental_snr(target: &[f64], interference: &[f64], frame_len: usize) -> f64 {
    let n = target.len().min(interference.len());
    let mut total = 0.0;
    let mut count = 0usize;
    for start in (0..n.saturating_sub(frame_len - 1)).step_by(frame_len) {
        let s: f64 = target[start..start + frame_len].iter().map(|v| v * v).sum();
        let e: f64 = interference[start..start + frame_len].iter().map(|v| v * v).sum();
        if s == 0.0 && e == 0.0 {
            continue;
        }
        let db = if e == 0.0 {
            SEGMENTAL_SNR_CEIL_DB
        } else if s == 0.0 {
            SEGMENTAL_SNR_FLOOR_DB
        } else {
            10.0 * (s / e).log10()
        };
        total += db.clamp(SEGMENTAL_SNR_FLOOR_DB, SEGMENTAL_SNR_CEIL_DB);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn spec_from(bins: Vec<Vec<Complex64>>, fft_size: usize, sr: u32) -> Spectrogram {
        let params = FrameParams::new(fft_size, fft_size / 2, Window::Rectangular, fft_size).unwrap();
        Spectrogram {
            bins,
            params,
            sample_rate: sr,
            signal_len: fft_size,
        }
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn env_from(values: Vec<Vec<f64>>, fft_size: usize) -> EnvelopeMatrix {
        EnvelopeMatrix {
            values,
            params: FrameParams::new(fft_size, fft_size, Window::Rectangular, fft_size).unwrap(),
        }
    }

    #[test]
    fn envelope_is_magnitude() {
        let s = spec_from(vec![vec![c(3.0, 4.0), c(0.0, 0.0), c(2.0, 0.0)]], 4, 8000);
        let e = envelope_detect(&s);
        assert_eq!(e.values, vec![vec![5.0, 0.0, 2.0]]);
    }

    #[test]
    fn modulation_of_constant_cosine_and_zero() {
        let frames = 16;
        let e = env_from(vec![vec![2.0, 0.0, 0.0]; frames], 4);
        let m = modulation_transform(&e, frames).unwrap();
        assert!((m.values[0][0].re - 32.0).abs() < 1e-9);
        assert!(m.values[0][1..].iter().all(|v| v.norm() < 1e-9));
        assert!(m.values[1].iter().all(|v| v.norm() == 0.0));

        let cosine: Vec<Vec<f64>> = (0..frames)
            .map(|mi| vec![(2.0 * PI * 2.0 * mi as f64 / frames as f64).cos(); 3])
            .collect();
        let m = modulation_transform(&env_from(cosine, 4), frames).unwrap();
        for (i, v) in m.values[0].iter().enumerate() {
            if i == 2 || i == frames - 2 {
                assert!((v.norm() - 8.0).abs() < 1e-9);
            } else {
                assert!(v.norm() < 1e-9, "bin {i}");
            }
        }
        assert!(modulation_transform(&e, 0).is_err());
    }

    fn modulation_from_rows(rows: Vec<Vec<f64>>) -> ModulationSpectrum {
        let len = rows[0].len();
        ModulationSpectrum {
            values: rows
                .into_iter()
                .map(|r| r.into_iter().map(|v| c(v, 0.0)).collect())
                .collect(),
            len,
        }
    }

    #[test]
    fn flat_spectrum_has_no_onsets() {
        let m = modulation_from_rows(vec![vec![3.0; 64]; 4]);
        assert!(detect_onsets_offsets(&m, 2, 1.0).is_empty());
    }

    #[test]
    fn rectangular_bump_is_bracketed() {
        // central differencing widens each edge by one bin beyond the radius
        let (a, b) = (20usize, 35usize);
        let row: Vec<f64> = (0..64).map(|i| if (a..=b).contains(&i) { 1.0 } else { 0.0 }).collect();
        for r in 0..=3 {
            let map = detect_onsets_offsets(&modulation_from_rows(vec![row.clone()]), r, 1.0);
            assert_eq!(map.channels[0].len(), 1, "radius {r}");
            let (on, off) = map.channels[0][0];
            assert!(on <= a && a - on <= r + 1, "radius {r}: onset {on}");
            assert!(off.abs_diff(b) <= r + 1, "radius {r}: offset {off}");
        }
    }

    #[test]
    fn two_bumps_give_two_sorted_pairs() {
        let row: Vec<f64> = (0..96)
            .map(|i| if (10..=20).contains(&i) || (50..=70).contains(&i) { 2.0 } else { 0.1 })
            .collect();
        let map = detect_onsets_offsets(&modulation_from_rows(vec![row]), 2, 1.0);
        let pairs = &map.channels[0];
        assert_eq!(pairs.len(), 2);
        assert!(pairs[0].0 < pairs[0].1 && pairs[0].1 < pairs[1].0 && pairs[1].0 < pairs[1].1);
        assert!(pairs[0].0 <= 10 && pairs[1].0 <= 50 && pairs[1].0 > 20);
    }

    fn track(frames: Vec<Option<f64>>, params: FrameParams, sr: u32) -> PitchTrack {
        PitchTrack {
            frames,
            params,
            sample_rate: sr,
        }
    }

    #[test]
    fn ibm_marks_rho_neighbourhood_of_harmonics() {
        let params = FrameParams::new(256, 128, Window::Hamming, 256).unwrap();
        let s = Spectrogram {
            bins: vec![vec![c(0.0, 0.0); 129]; 2],
            params,
            sample_rate: 8000,
            signal_len: 384,
        };
        // 31.25 Hz bins, f_d = 100 Hz
        let t = track(vec![Some(100.0), None], params, 8000);
        let m = build_ideal_binary_mask(&s, &t, (0, 0)).unwrap();
        let expected: Vec<usize> = (1..40).map(|h| (h as f64 * 100.0 / 31.25).round() as usize).collect();
        for k in 0..129 {
            assert_eq!(m.bits[0][k], expected.contains(&k), "bin {k}");
        }
        assert!(m.bits[1].iter().all(|b| !b));
        let m = build_ideal_binary_mask(&s, &t, (-10, 10)).unwrap();
        // 100 +- 312.5 Hz around the fundamental spans bins 0..=13
        assert!(m.bits[0][..=13].iter().all(|b| *b));
        let m = build_ideal_binary_mask(&s, &track(vec![None, None], params, 8000), (-10, 10)).unwrap();
        assert_eq!(m.count_ones(), 0);
        assert!(matches!(
            build_ideal_binary_mask(&s, &track(vec![None], params, 8000), (-10, 10)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn binary_mask_application() {
        let s = spec_from(vec![vec![c(1.0, 2.0), c(-3.0, 0.5), c(0.0, 1.0)]; 2], 4, 8000);
        assert_eq!(apply_binary_mask(&s, &BinaryMask::filled(2, 3, true)).unwrap(), s);
        let z = apply_binary_mask(&s, &BinaryMask::filled(2, 3, false)).unwrap();
        assert_eq!(z.energy(), 0.0);
        assert!(matches!(
            apply_binary_mask(&s, &BinaryMask::filled(3, 3, true)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn frequency_mask_limits() {
        let e = BandEnergies {
            target: vec![2.0, 1.5, 0.0, 0.0],
            interference: vec![0.0, 1.5, 3.0, 0.0],
        };
        assert_eq!(build_frequency_mask(&e).gains, vec![1.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn band_energies_degenerate_cases() {
        let params = FrameParams::analysis_default(8000);
        let clip = AudioClip::new(
            (0..4000).map(|n| (2.0 * PI * 500.0 * n as f64 / 8000.0).sin()).collect(),
            8000,
        )
        .unwrap();
        let s = stft(&clip, &params).unwrap();
        let ones = BinaryMask::filled(s.n_frames(), s.n_bins(), true);
        let e = estimate_band_energies(&s, &ones, 128, 2, 1.0).unwrap();
        assert!(e.interference.iter().all(|v| *v == 0.0));
        assert!(e.target.iter().any(|v| *v > 0.0));
        let z = s.zeros_like();
        let e = estimate_band_energies(&z, &ones, 128, 2, 1.0).unwrap();
        assert!(e.target.iter().chain(&e.interference).all(|v| *v == 0.0));
    }

    #[test]
    fn band_energies_follow_the_mask() {
        let params = FrameParams::analysis_default(8000);
        let (fa, fb) = (500.0, 1500.0);
        let x: Vec<f64> = (0..8000)
            .map(|n| {
                let t = n as f64 / 8000.0;
                (2.0 * PI * fa * t).sin() + 0.8 * (2.0 * PI * fb * t).sin()
            })
            .collect();
        let s = stft(&AudioClip::new(x, 8000).unwrap(), &params).unwrap();
        let ka = (fa / s.bin_hz(1)).round() as usize;
        let kb = (fb / s.bin_hz(1)).round() as usize;
        let mut mask = BinaryMask::filled(s.n_frames(), s.n_bins(), false);
        for row in mask.bits.iter_mut() {
            for b in row.iter_mut().take(ka + 8).skip(ka.saturating_sub(8)) {
                *b = true;
            }
        }
        let e = estimate_band_energies(&s, &mask, 256, 2, 1.0).unwrap();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&e.target), ka);
        assert_eq!(argmax(&e.interference), kb);
    }

    #[test]
    fn silence_in_silence_out() {
        let clip = AudioClip::new(vec![0.0; 3000], 8000).unwrap();
        let (out, diag) = segregate(&clip, &CasaConfig::default()).unwrap();
        assert_eq!(out.len(), 3000);
        assert!(out.samples().iter().all(|v| *v == 0.0));
        assert!(diag.pass_through);
    }

    #[test]
    fn segmental_snr_basics() {
        let s = vec![1.0; 100];
        let n = vec![0.1; 100];
        assert!((segmental_snr(&s, &n, 10) - 20.0).abs() < 1e-9);
        assert_eq!(segmental_snr(&s, &vec![0.0; 100], 10), SEGMENTAL_SNR_CEIL_DB);
    }

    proptest! {
        #[test]
        fn gains_bounded_and_monotone(
            t in prop::collection::vec(0.0f64..1e3, 1..32),
            i in prop::collection::vec(0.0f64..1e3, 32),
            bump in 0.0f64..10.0,
        ) {
            let interference = i[..t.len()].to_vec();
            let e = BandEnergies { target: t.clone(), interference: interference.clone() };
            let g = build_frequency_mask(&e).gains;
            prop_assert!(g.iter().all(|v| (0.0..=1.0).contains(v)));
            let raised = BandEnergies { target: t.iter().map(|v| v + bump).collect(), interference };
            let g2 = build_frequency_mask(&raised).gains;
            for (a, b) in g.iter().zip(&g2) {
                prop_assert!(b + 1e-15 >= *a);
            }
        }

        #[test]
        fn binary_mask_idempotent_and_partitions_energy(
            seed in 0u64..1000,
            density in 0.0f64..1.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let bins: Vec<Vec<Complex64>> = (0..6)
                .map(|_| (0..9).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
                .collect();
            let s = spec_from(bins, 16, 8000);
            let mask = BinaryMask {
                bits: (0..6).map(|_| (0..9).map(|_| rng.gen_bool(density)).collect()).collect(),
            };
            let once = apply_binary_mask(&s, &mask).unwrap();
            let twice = apply_binary_mask(&once, &mask).unwrap();
            prop_assert_eq!(&once, &twice);
            let rest = apply_binary_mask(&s, &mask.complement()).unwrap();
            let total = s.energy();
            prop_assert!((once.energy() + rest.energy() - total).abs() <= 1e-9 * total.max(1.0));
        }
    }
}
