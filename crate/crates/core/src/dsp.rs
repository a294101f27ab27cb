//! Time-frequency primitives: pre-emphasis, framing, STFT / overlap-add
//! resynthesis and autocorrelation pitch tracking.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Rectangular,
}

impl Window {
    /// Symmetric window coefficients of the given length.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hamming if len == 1 => vec![1.0],
            Window::Hamming => (0..len)
                .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameParams {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
    pub fft_size: usize,
}

impl FrameParams {
    pub fn new(frame_len: usize, hop: usize, window: Window, fft_size: usize) -> Result<Self> {
        let p = Self {
            frame_len,
            hop,
            window,
            fft_size,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.frame_len || self.frame_len > self.fft_size {
            return Err(Error::Param(format!(
                "frame parameters need 0 < hop <= frame_len <= fft_size, got hop {} frame {} fft {}",
                self.hop, self.frame_len, self.fft_size
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::Param(format!("fft size {} is not a power of two", self.fft_size)));
        }
        Ok(())
    }

    /// Frame and hop given in milliseconds; the FFT size is the next power of
    /// two at or above the frame length unless `fft_size` is given.
    pub fn from_ms(
        sample_rate: u32,
        frame_ms: f64,
        hop_ms: f64,
        window: Window,
        fft_size: Option<usize>,
    ) -> Result<Self> {
        let frame_len = ms_to_samples(sample_rate, frame_ms);
        let hop = ms_to_samples(sample_rate, hop_ms);
        let fft_size = fft_size.unwrap_or_else(|| frame_len.max(1).next_power_of_two());
        Self::new(frame_len, hop, window, fft_size)
    }

    /// Frame length in milliseconds with a fractional overlap between
    /// consecutive frames (0.3125 means 31.25 %).
    pub fn from_overlap(
        sample_rate: u32,
        frame_ms: f64,
        overlap: f64,
        window: Window,
        fft_size: Option<usize>,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::Param(format!("overlap must lie in [0, 1), got {overlap}")));
        }
        let frame_len = ms_to_samples(sample_rate, frame_ms);
        let hop = (frame_len as f64 * (1.0 - overlap)).round() as usize;
        let fft_size = fft_size.unwrap_or_else(|| frame_len.max(1).next_power_of_two());
        Self::new(frame_len, hop, window, fft_size)
    }

    /// 30 ms Hamming frames every 5 ms.
    pub fn analysis_default(sample_rate: u32) -> Self {
        Self::from_ms(sample_rate, 30.0, 5.0, Window::Hamming, None).expect("valid default framing")
    }

    /// 20 ms Hamming frames with 31.25 % overlap.
    pub fn feature_default(sample_rate: u32) -> Self {
        Self::from_overlap(sample_rate, 20.0, 0.3125, Window::Hamming, None)
            .expect("valid default framing")
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

fn ms_to_samples(sample_rate: u32, ms: f64) -> usize {
    (sample_rate as f64 * ms / 1000.0).round() as usize
}

/// y(n) = x(n) - coeff * x(n - 1), with y(0) = x(0).
pub fn pre_emphasize(clip: &AudioClip, coeff: f64) -> Result<AudioClip> {
    if !(0.0..1.0).contains(&coeff) {
        return Err(Error::Param(format!("pre-emphasis coefficient must lie in [0, 1), got {coeff}")));
    }
    let x = clip.samples();
    let mut y = Vec::with_capacity(x.len());
    y.push(x[0]);
    y.extend(x.windows(2).map(|w| w[1] - coeff * w[0]));
    clip.with_samples(y)
}

/// Splits a signal into windowed frames. Trailing samples that do not fill a
/// whole frame are dropped.
pub fn frame_signal(samples: &[f64], params: &FrameParams) -> Vec<Vec<f64>> {
    let window = params.window.coefficients(params.frame_len);
    (0..params.frame_count(samples.len()))
        .map(|m| {
            let start = m * params.hop;
            samples[start..start + params.frame_len]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect()
}

/// Complex STFT, bins 0..=N/2 per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Vec<Vec<Complex64>>,
    pub params: FrameParams,
    pub sample_rate: u32,
    /// Length of the analysed signal; resynthesis reproduces this length.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.bins.len()
    }

    pub fn n_bins(&self) -> usize {
        self.params.n_bins()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            bins: vec![vec![Complex64::new(0.0, 0.0); self.n_bins()]; self.n_frames()],
            ..self.clone()
        }
    }

    /// Centre frequency of bin k in Hz.
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.params.fft_size as f64
    }

    pub fn energy(&self) -> f64 {
        self.bins.iter().flatten().map(|c| c.norm_sqr()).sum()
    }
}

pub fn stft(clip: &AudioClip, params: &FrameParams) -> Result<Spectrogram> {
    params.validate()?;
    let n = params.fft_size;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let bins = frame_signal(clip.samples(), params)
        .into_iter()
        .map(|frame| {
            let mut buf: Vec<Complex64> = frame.iter().map(|&s| Complex64::new(s, 0.0)).collect();
            buf.resize(n, Complex64::new(0.0, 0.0));
            fft.process(&mut buf);
            buf.truncate(n / 2 + 1);
            buf
        })
        .collect();
    Ok(Spectrogram {
        bins,
        params: *params,
        sample_rate: clip.sample_rate(),
        signal_len: clip.len(),
    })
}

/// Maximum relative ripple of the summed analysis windows over one hop period
/// for a configuration to count as constant-overlap-add.
pub const COLA_TOLERANCE: f64 = 0.05;

/// Relative ripple (max - min) / mean of the steady-state overlap-added
/// window, or `None` when some position is never covered.
pub fn cola_ripple(params: &FrameParams) -> Option<f64> {
    let w = params.window.coefficients(params.frame_len);
    let sums: Vec<f64> = (0..params.hop)
        .map(|j| w.iter().skip(j).step_by(params.hop).sum())
        .collect();
    let min = sums.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = sums.iter().cloned().fold(0.0, f64::max);
    if min <= 0.0 {
        return None;
    }
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    Some((max - min) / mean)
}

/// Inverse STFT by overlap-add, normalised by the summed analysis window.
///
/// Samples not covered by any frame come back as zero.
pub fn istft_overlap_add(spec: &Spectrogram) -> Result<AudioClip> {
    let params = &spec.params;
    params.validate()?;
    match cola_ripple(params) {
        Some(r) if r <= COLA_TOLERANCE => {}
        Some(r) => {
            return Err(Error::Config(format!(
                "{:?} window with frame {} / hop {} is not constant-overlap-add (ripple {r:.3})",
                params.window, params.frame_len, params.hop
            )))
        }
        None => {
            return Err(Error::Config(format!(
                "hop {} leaves gaps between frames of length {}",
                params.hop, params.frame_len
            )))
        }
    }
    let n = params.fft_size;
    let half = n / 2 + 1;
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let window = params.window.coefficients(params.frame_len);
    let covered = if spec.n_frames() == 0 {
        0
    } else {
        (spec.n_frames() - 1) * params.hop + params.frame_len
    };
    let out_len = spec.signal_len.max(covered).max(1);
    let mut acc = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (m, frame) in spec.bins.iter().enumerate() {
        if frame.len() != half {
            return Err(Error::Shape(format!("frame {m} has {} bins, expected {half}", frame.len())));
        }
        buf[..half].copy_from_slice(frame);
        for k in half..n {
            buf[k] = frame[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = m * params.hop;
        for i in 0..params.frame_len {
            acc[start + i] += buf[i].re / n as f64;
            norm[start + i] += window[i];
        }
    }
    let samples: Vec<f64> = acc
        .iter()
        .zip(&norm)
        .take(spec.signal_len.max(1))
        .map(|(a, w)| if *w > 1e-12 { a / w } else { 0.0 })
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

/// Per-frame fundamental frequency; `None` marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchTrack {
    pub frames: Vec<Option<f64>>,
    pub params: FrameParams,
    pub sample_rate: u32,
}

impl PitchTrack {
    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().filter_map(|f| *f)
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.voiced().count() as f64 / self.frames.len() as f64
    }
}

pub const DEFAULT_PITCH_BAND: (f64, f64) = (50.0, 400.0);
pub const DEFAULT_VOICING_THRESHOLD: f64 = 0.45;
/// A shorter-lag peak wins if it reaches this fraction of the global peak.
const OCTAVE_PEAK_FRACTION: f64 = 0.9;

/// Autocorrelation pitch tracker.
///
/// The signal is first low-passed at 1 kHz so that sub-sample period offsets
/// do not decorrelate the upper harmonics. Each frame is scored by the normalised autocorrelation over lags in
/// `band`. The correlation segment is centred on the frame and widened to at
/// least two periods of the lowest band frequency, so a frame always sees
/// repeated cycles. The period is the smallest-lag local maximum reaching
/// 90 % of the strongest one, refined by parabolic interpolation. Frames whose
/// strongest peak falls below `voicing_threshold` are unvoiced.
pub fn estimate_pitch(
    clip: &AudioClip,
    params: &FrameParams,
    band: (f64, f64),
    voicing_threshold: f64,
) -> Result<PitchTrack> {
    let sr = clip.sample_rate() as f64;
    let (lo, hi) = band;
    if !(lo > 0.0 && lo < hi && hi < sr / 2.0) {
        return Err(Error::Param(format!(
            "pitch band ({lo}, {hi}) Hz must satisfy 0 < low < high < {}",
            sr / 2.0
        )));
    }
    let lowpassed = lowpass(clip.samples(), (PITCH_LOWPASS_HZ / sr).min(0.45));
    let x = &lowpassed[..];
    let longest_period = (sr / lo).ceil() as usize;
    let seg_len = params.frame_len.max(2 * longest_period).min(x.len());
    let min_lag = ((sr / hi).floor() as usize).max(2);
    let max_lag = longest_period.min(seg_len - seg_len / 4);
    let frames = (0..params.frame_count(x.len()))
        .map(|m| {
            if min_lag + 1 >= max_lag {
                return None;
            }
            let centre = m * params.hop + params.frame_len / 2;
            let start = centre.saturating_sub(seg_len / 2).min(x.len() - seg_len);
            frame_pitch(&x[start..start + seg_len], min_lag, max_lag, voicing_threshold)
                .map(|lag| (sr / lag).clamp(lo, hi))
        })
        .collect();
    Ok(PitchTrack {
        frames,
        params: *params,
        sample_rate: clip.sample_rate(),
    })
}

const PITCH_LOWPASS_HZ: f64 = 1000.0;
const LOWPASS_HALF_TAPS: usize = 32;

/// Zero-phase Hamming-windowed sinc low-pass; `cutoff` is in cycles per sample.
fn lowpass(x: &[f64], cutoff: f64) -> Vec<f64> {
    let taps: Vec<f64> = (0..=2 * LOWPASS_HALF_TAPS)
        .map(|i| {
            let t = i as f64 - LOWPASS_HALF_TAPS as f64;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * t).sin() / (PI * t)
            };
            let w = 0.54 + 0.46 * (PI * t / LOWPASS_HALF_TAPS as f64).cos();
            sinc * w
        })
        .collect();
    let gain: f64 = taps.iter().sum();
    (0..x.len())
        .map(|n| {
            let mut acc = 0.0;
            for (i, h) in taps.iter().enumerate() {
                let j = n as isize + i as isize - LOWPASS_HALF_TAPS as isize;
                if j >= 0 && (j as usize) < x.len() {
                    acc += h * x[j as usize];
                }
            }
            acc / gain
        })
        .collect()
}

/// Returns the fractional period in samples, or `None` when unvoiced.
fn frame_pitch(frame: &[f64], min_lag: usize, max_lag: usize, threshold: f64) -> Option<f64> {
    let energy: f64 = frame.iter().map(|s| s * s).sum();
    if energy <= 1e-12 * frame.len() as f64 {
        return None;
    }
    // one lag either side so interpolation and peak tests have neighbours
    let lo = min_lag - 1;
    let hi = max_lag + 1;
    let r: Vec<f64> = (lo..=hi).map(|lag| nccf(frame, lag)).collect();
    let at = |lag: usize| r[lag - lo];
    let peaks: Vec<usize> = (min_lag..=max_lag)
        .filter(|&lag| at(lag) > at(lag - 1) && at(lag) >= at(lag + 1))
        .collect();
    let best = peaks.iter().map(|&l| at(l)).fold(f64::NEG_INFINITY, f64::max);
    if !(best >= threshold) {
        return None;
    }
    let lag = *peaks.iter().find(|&&l| at(l) >= OCTAVE_PEAK_FRACTION * best)?;
    let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Some(lag as f64 + shift)
}

/// Normalised autocorrelation at `lag`: the lagged inner product divided by
/// the geometric mean of the two overlapping segments' energies.
fn nccf(frame: &[f64], lag: usize) -> f64 {
    if lag >= frame.len() {
        return 0.0;
    }
    let a = &frame[..frame.len() - lag];
    let b = &frame[lag..];
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (p, q) in a.iter().zip(b) {
        xy += p * q;
        xx += p * p;
        yy += q * q;
    }
    let d = (xx * yy).sqrt();
    if d > 0.0 {
        xy / d
    } else {
        0.0
    }
}
