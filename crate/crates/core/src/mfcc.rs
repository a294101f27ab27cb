//! MFCC observation vectors: periodogram, triangular mel filterbank, log,
//! DCT and regression deltas.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp::{frame_signal, pre_emphasize, FrameParams, Window};
use crate::error::{Error, Result};

pub const DEFAULT_N_FILTERS: usize = 26;
pub const DEFAULT_N_CEPSTRA: usize = 16;
pub const DEFAULT_DELTA_WINDOW: usize = 2;
pub const DEFAULT_ENERGY_FLOOR: f64 = 1e-12;
pub const DEFAULT_PRE_EMPHASIS: f64 = 0.97;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// P(k) = |DFT_N(frame)(k)|^2 / N for k = 0..=N/2. The frame is zero-padded
/// to N.
pub fn periodogram(frame: &[f64], n: usize) -> Result<Vec<f64>> {
    if frame.len() > n {
        return Err(Error::Param(format!(
            "frame of {} samples exceeds FFT size {n}",
            frame.len()
        )));
    }
    let mut buf: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    Ok(buf[..=n / 2].iter().map(|c| c.norm_sqr() / n as f64).collect())
}

/// One triangle: weights over the contiguous bins starting at `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub start: usize,
    pub center: usize,
    pub weights: Vec<f64>,
}

impl Triangle {
    pub fn end(&self) -> usize {
        self.start + self.weights.len()
    }

    fn apply(&self, power: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&power[self.start..self.end()])
            .map(|(w, p)| w * p)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelFilterbank {
    pub band: (f64, f64),
    pub fft_size: usize,
    pub sample_rate: u32,
    pub filters: Vec<Triangle>,
}

impl MelFilterbank {
    pub fn n_filters(&self) -> usize {
        self.filters.len()
    }

    /// Dense row of filter `j` over all N/2+1 bins.
    pub fn dense_row(&self, j: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.fft_size / 2 + 1];
        let t = &self.filters[j];
        row[t.start..t.end()].copy_from_slice(&t.weights);
        row
    }

    pub fn center_hz(&self, j: usize) -> f64 {
        self.filters[j].center as f64 * self.sample_rate as f64 / self.fft_size as f64
    }
}

/// Triangles with centres equally spaced in mel between the band edges.
///
/// Edge frequencies are snapped to FFT bins, so each triangle peaks at exactly
/// 1 on its centre bin. With `normalize_area` every row is scaled to unit sum.
pub fn mel_filterbank(
    n_filters: usize,
    fft_size: usize,
    sample_rate: u32,
    band: (f64, f64),
    normalize_area: bool,
) -> Result<MelFilterbank> {
    if n_filters < 1 {
        return Err(Error::Param("filterbank needs at least one filter".into()));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let (low, high) = band;
    if !(low >= 0.0 && low < high && high <= nyquist) {
        return Err(Error::Param(format!(
            "mel band ({low}, {high}) must satisfy 0 <= low < high <= {nyquist}"
        )));
    }
    let hz_per_bin = sample_rate as f64 / fft_size as f64;
    let lo_bin = (low / hz_per_bin).ceil() as usize;
    let hi_bin = (high / hz_per_bin).floor() as usize;
    let (m_lo, m_hi) = (hz_to_mel(low), hz_to_mel(high));
    let edges: Vec<usize> = (0..n_filters + 2)
        .map(|i| {
            let f = mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_filters + 1) as f64);
            ((f / hz_per_bin).round() as usize).clamp(lo_bin, hi_bin)
        })
        .collect();
    let filters = edges
        .windows(3)
        .map(|w| {
            let (l, c, r) = (w[0], w[1], w[2]);
            let mut weights: Vec<f64> = (l..=r)
                .map(|k| {
                    if k == c {
                        1.0
                    } else if k < c {
                        (k - l) as f64 / (c - l) as f64
                    } else {
                        (r - k) as f64 / (r - c) as f64
                    }
                })
                .collect();
            if normalize_area {
                let s: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|v| *v /= s);
            }
            Triangle {
                start: l,
                center: c,
                weights,
            }
        })
        .collect();
    Ok(MelFilterbank {
        band,
        fft_size,
        sample_rate,
        filters,
    })
}

/// e_j = ln(max(sum_k bank[j][k] * P(k), floor)).
pub fn log_mel_energies(power: &[f64], bank: &MelFilterbank, floor: f64) -> Result<Vec<f64>> {
    if power.len() != bank.fft_size / 2 + 1 {
        return Err(Error::Shape(format!(
            "power spectrum has {} bins, filterbank expects {}",
            power.len(),
            bank.fft_size / 2 + 1
        )));
    }
    Ok(bank
        .filters
        .iter()
        .map(|t| t.apply(power).max(floor).ln())
        .collect())
}

/// Orthonormal DCT-II, first `n_keep` coefficients.
pub fn dct_cepstra(x: &[f64], n_keep: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n_keep > n {
        return Err(Error::Param(format!("cannot keep {n_keep} of {n} coefficients")));
    }
    let nf = n as f64;
    Ok((0..n_keep)
        .map(|q| {
            let scale = if q == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(j, v)| v * (std::f64::consts::PI * q as f64 * (j as f64 + 0.5) / nf).cos())
                    .sum::<f64>()
        })
        .collect())
}

/// Inverse of the full orthonormal DCT-II.
pub fn inverse_dct(c: &[f64]) -> Vec<f64> {
    let nf = c.len() as f64;
    (0..c.len())
        .map(|j| {
            c.iter()
                .enumerate()
                .map(|(q, v)| {
                    let scale = if q == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                    scale * v * (std::f64::consts::PI * q as f64 * (j as f64 + 0.5) / nf).cos()
                })
                .sum()
        })
        .collect()
}

/// Regression deltas with edge frames replicated.
pub fn delta(coeffs: &[Vec<f64>], window: usize) -> Result<Vec<Vec<f64>>> {
    if window < 1 {
        return Err(Error::Param("delta window must be at least 1".into()));
    }
    let t_len = coeffs.len();
    let denom = 2.0 * (1..=window).map(|w| (w * w) as f64).sum::<f64>();
    let at = |t: isize| &coeffs[t.clamp(0, t_len as isize - 1) as usize];
    Ok((0..t_len as isize)
        .map(|t| {
            let mut d = vec![0.0; coeffs[t as usize].len()];
            for w in 1..=window as isize {
                for ((di, a), b) in d.iter_mut().zip(at(t + w)).zip(at(t - w)) {
                    *di += w as f64 * (a - b);
                }
            }
            d.iter_mut().for_each(|v| *v /= denom);
            d
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub frame_ms: f64,
    pub overlap: f64,
    pub window: Window,
    pub fft_size: Option<usize>,
    pub pre_emphasis: f64,
    pub n_filters: usize,
    pub band_low_hz: f64,
    /// Upper band edge; `None` means Nyquist.
    pub band_high_hz: Option<f64>,
    pub n_cepstra: usize,
    pub delta_window: usize,
    pub energy_floor: f64,
    pub normalize_area: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_ms: 20.0,
            overlap: 0.3125,
            window: Window::Hamming,
            fft_size: None,
            pre_emphasis: DEFAULT_PRE_EMPHASIS,
            n_filters: DEFAULT_N_FILTERS,
            band_low_hz: 0.0,
            band_high_hz: None,
            n_cepstra: DEFAULT_N_CEPSTRA,
            delta_window: DEFAULT_DELTA_WINDOW,
            energy_floor: DEFAULT_ENERGY_FLOOR,
            normalize_area: false,
        }
    }
}

impl MfccConfig {
    pub fn frame_params(&self, sample_rate: u32) -> Result<FrameParams> {
        FrameParams::from_overlap(sample_rate, self.frame_ms, self.overlap, self.window, self.fft_size)
            .map_err(|e| Error::Config(format!("MFCC framing: {e}")))
    }

    pub fn filterbank(&self, params: &FrameParams, sample_rate: u32) -> Result<MelFilterbank> {
        let high = self.band_high_hz.unwrap_or(sample_rate as f64 / 2.0);
        mel_filterbank(
            self.n_filters,
            params.fft_size,
            sample_rate,
            (self.band_low_hz, high),
            self.normalize_area,
        )
    }

    /// Width of one output row.
    pub fn dim(&self) -> usize {
        2 * self.n_cepstra
    }
}

/// Per-frame observation vectors: static cepstra followed by their deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Start time of frame `t` in seconds.
    pub fn frame_time_s(&self, t: usize) -> f64 {
        (t * self.hop) as f64 / self.sample_rate as f64
    }
}

/// Full extraction chain on a clip.
pub fn mfcc_features(clip: &AudioClip, config: &MfccConfig) -> Result<FeatureMatrix> {
    let params = config.frame_params(clip.sample_rate())?;
    let bank = config.filterbank(&params, clip.sample_rate())?;
    mfcc_with(clip, &params, &bank, config)
}

/// Extraction with explicit framing and filterbank.
pub fn mfcc_with(
    clip: &AudioClip,
    params: &FrameParams,
    bank: &MelFilterbank,
    config: &MfccConfig,
) -> Result<FeatureMatrix> {
    if clip.len() < params.frame_len {
        return Err(Error::EmptyFeature);
    }
    if config.n_cepstra > bank.n_filters() {
        return Err(Error::Config(format!(
            "n_cepstra {} exceeds n_filters {}",
            config.n_cepstra,
            bank.n_filters()
        )));
    }
    let emphasized = pre_emphasize(clip, config.pre_emphasis)?;
    let statics = frame_signal(emphasized.samples(), params)
        .into_iter()
        .map(|frame| {
            let p = periodogram(&frame, params.fft_size)?;
            dct_cepstra(&log_mel_energies(&p, bank, config.energy_floor)?, config.n_cepstra)
        })
        .collect::<Result<Vec<_>>>()?;
    let deltas = delta(&statics, config.delta_window)?;
    let rows = statics
        .into_iter()
        .zip(deltas)
        .map(|(mut s, d)| {
            s.extend(d);
            s
        })
        .collect();
    Ok(FeatureMatrix {
        rows,
        sample_rate: clip.sample_rate(),
        frame_len: params.frame_len,
        hop: params.hop,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpFormat {
    /// JSON header line followed by comma-separated rows.
    Text,
    /// Little-endian f64 matrix plus a `<path>.json` sidecar.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DumpHeader {
    rows: usize,
    cols: usize,
    sample_rate: u32,
    frame_len: usize,
    hop: usize,
}

impl DumpHeader {
    fn of(m: &FeatureMatrix) -> Self {
        Self {
            rows: m.n_frames(),
            cols: m.dim(),
            sample_rate: m.sample_rate,
            frame_len: m.frame_len,
            hop: m.hop,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_features(m: &FeatureMatrix, path: impl AsRef<Path>, format: DumpFormat) -> Result<()> {
    let path = path.as_ref();
    let header = DumpHeader::of(m);
    match format {
        DumpFormat::Text => {
            let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(f);
            let mut body = serde_json::to_string(&header)?;
            body.push('\n');
            for row in &m.rows {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                body.push_str(&line.join(","));
                body.push('\n');
            }
            w.write_all(body.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path, e))
        }
        DumpFormat::Binary => {
            let bytes: Vec<u8> = m.rows.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
            let side = sidecar_path(path);
            fs::write(&side, serde_json::to_vec(&header)?).map_err(|e| Error::io(&side, e))
        }
    }
}

pub fn read_features(path: impl AsRef<Path>, format: DumpFormat) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let (header, values) = match format {
        DumpFormat::Text => {
            let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let mut lines = BufReader::new(f).lines();
            let first = lines
                .next()
                .ok_or_else(|| Error::Format("empty feature file".into()))?
                .map_err(|e| Error::io(path, e))?;
            let header: DumpHeader = serde_json::from_str(&first)
                .map_err(|e| Error::Format(format!("feature header: {e}")))?;
            let mut values = Vec::with_capacity(header.rows * header.cols);
            for line in lines {
                let line = line.map_err(|e| Error::io(path, e))?;
                for tok in line.split(',').filter(|t| !t.is_empty()) {
                    values.push(
                        tok.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Format(format!("feature value {tok:?}: {e}")))?,
                    );
                }
            }
            (header, values)
        }
        DumpFormat::Binary => {
            let side = sidecar_path(path);
            let header: DumpHeader = serde_json::from_slice(&fs::read(&side).map_err(|e| Error::io(&side, e))?)
                .map_err(|e| Error::Format(format!("feature sidecar: {e}")))?;
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            if bytes.len() % 8 != 0 {
                return Err(Error::Format("feature blob is not a whole number of f64".into()));
            }
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            (header, values)
        }
    };
    if values.len() != header.rows * header.cols {
        return Err(Error::Format(format!(
            "expected {}x{} values, found {}",
            header.rows,
            header.cols,
            values.len()
        )));
    }
    let rows = if header.cols == 0 {
        vec![Vec::new(); header.rows]
    } else {
        values.chunks(header.cols).map(<[f64]>::to_vec).collect()
    };
    Ok(FeatureMatrix {
        rows,
        sample_rate: header.sample_rate,
        frame_len: header.frame_len,
        hop: header.hop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::white_noise;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn periodogram_fixtures() {
        let mut imp = vec![0.0; 16];
        imp[0] = 1.0;
        assert!(periodogram(&imp, 16).unwrap().iter().all(|p| (p - 1.0 / 16.0).abs() < 1e-15));
        assert!(periodogram(&[0.0; 8], 16).unwrap().iter().all(|p| *p == 0.0));
        let n = 64;
        let cosine: Vec<f64> = (0..n).map(|i| (2.0 * PI * 4.0 * i as f64 / n as f64).cos()).collect();
        let p = periodogram(&cosine, n).unwrap();
        // direct DFT at the peak: |sum cos * e^{-j..}| = N/2, squared over N
        let direct: f64 = {
            let (re, im) = cosine.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, x)| {
                let a = 2.0 * PI * 4.0 * i as f64 / n as f64;
                (re + x * a.cos(), im - x * a.sin())
            });
            (re * re + im * im) / n as f64
        };
        assert!((p[4] - direct).abs() < 1e-9 && (p[4] - n as f64 / 4.0).abs() < 1e-9);
        assert!(p.iter().enumerate().all(|(k, v)| k == 4 || *v < 1e-9));
        assert!(periodogram(&[0.0; 17], 16).is_err());
    }

    #[test]
    fn filterbank_shape() {
        let b = mel_filterbank(26, 256, 8000, (0.0, 4000.0), false).unwrap();
        assert_eq!(b.n_filters(), 26);
        for (j, t) in b.filters.iter().enumerate() {
            let row = b.dense_row(j);
            assert_eq!(row[t.center], 1.0);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            if j > 0 {
                assert!(b.center_hz(j) >= b.center_hz(j - 1));
                // adjacent triangles share endpoints
                assert_eq!(b.filters[j - 1].center, t.start);
                assert_eq!(b.filters[j - 1].end() - 1, t.center);
            }
        }
        assert!(b.center_hz(25) > b.center_hz(0));
        assert!(mel_filterbank(0, 256, 8000, (0.0, 4000.0), false).is_err());
        assert!(mel_filterbank(26, 256, 8000, (0.0, 4500.0), false).is_err());
        let area = mel_filterbank(26, 512, 8000, (0.0, 4000.0), true).unwrap();
        for j in 0..26 {
            assert!((area.dense_row(j).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn filterbank_respects_band() {
        let b = mel_filterbank(20, 512, 16000, (300.0, 3400.0), false).unwrap();
        let hz = 16000.0 / 512.0;
        for j in 0..20 {
            let row = b.dense_row(j);
            for (k, w) in row.iter().enumerate() {
                if *w > 0.0 {
                    assert!(k as f64 * hz >= 300.0 && k as f64 * hz <= 3400.0);
                }
            }
        }
    }

    #[test]
    fn log_energies_fixtures() {
        let b = mel_filterbank(26, 256, 8000, (0.0, 4000.0), false).unwrap();
        let e = log_mel_energies(&vec![0.0; 129], &b, 1e-12).unwrap();
        assert!(e.iter().all(|v| (v - 1e-12f64.ln()).abs() < 1e-12));

        let p: Vec<f64> = (0..129).map(|k| 1.0 + k as f64 * 0.01).collect();
        let base = log_mel_energies(&p, &b, 1e-12).unwrap();
        let scaled: Vec<f64> = p.iter().map(|v| v * 7.5).collect();
        let e = log_mel_energies(&scaled, &b, 1e-12).unwrap();
        for (a, c) in base.iter().zip(&e) {
            assert!((c - a - 7.5f64.ln()).abs() < 1e-12);
        }

        let j = 10;
        let mut imp = vec![0.0; 129];
        imp[b.filters[j].center] = 3.25;
        let e = log_mel_energies(&imp, &b, 1e-12).unwrap();
        assert!((e[j] - 3.25f64.ln()).abs() < 1e-12);
        assert!(log_mel_energies(&[0.0; 10], &b, 1e-12).is_err());
    }

    #[test]
    fn dct_fixtures() {
        let c = dct_cepstra(&[2.5; 26], 16).unwrap();
        assert!((c[0] - 2.5 * 26f64.sqrt()).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));

        let x: Vec<f64> = (0..26).map(|j| (j as f64 * 0.37).sin() + 0.1 * j as f64).collect();
        let back = inverse_dct(&dct_cepstra(&x, 26).unwrap());
        assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));

        let alt: Vec<f64> = (0..26).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let c = dct_cepstra(&alt, 26).unwrap();
        let argmax = c
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 25);
        assert!(dct_cepstra(&alt, 27).is_err());
    }

    #[test]
    fn delta_fixtures() {
        let flat = vec![vec![1.0, -2.0]; 7];
        assert!(delta(&flat, 2).unwrap().iter().flatten().all(|v| *v == 0.0));
        let line: Vec<Vec<f64>> = (0..10).map(|t| vec![0.5 * t as f64 + 1.0]).collect();
        let d = delta(&line, 2).unwrap();
        for row in &d[2..8] {
            assert!((row[0] - 0.5).abs() < 1e-12);
        }
        assert_eq!(delta(&[vec![3.0, 4.0]], 2).unwrap(), vec![vec![0.0, 0.0]]);
        assert!(delta(&flat, 0).is_err());
    }

    #[test]
    fn features_have_32_columns_and_expected_frames() {
        let clip = white_noise(8000, 8000, 3).unwrap();
        let cfg = MfccConfig::default();
        let m = mfcc_features(&clip, &cfg).unwrap();
        assert_eq!(m.dim(), 32);
        let params = cfg.frame_params(8000).unwrap();
        assert_eq!(m.n_frames(), params.frame_count(8000));
        assert_eq!(m, mfcc_features(&clip, &cfg).unwrap());
        let short = AudioClip::new(vec![0.1; 100], 8000).unwrap();
        assert!(matches!(mfcc_features(&short, &cfg), Err(Error::EmptyFeature)));
    }

    #[test]
    fn dump_round_trips() {
        let clip = white_noise(2000, 8000, 1).unwrap();
        let m = mfcc_features(&clip, &MfccConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for fmt in [DumpFormat::Text, DumpFormat::Binary] {
            let p = dir.path().join("f.feat");
            write_features(&m, &p, fmt).unwrap();
            assert_eq!(read_features(&p, fmt).unwrap(), m);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scaling_shifts_only_c0(seed in 0u64..500, c in 0.05f64..20.0) {
            let clip = white_noise(1600, 8000, seed).unwrap();
            let scaled = AudioClip::new(clip.samples().iter().map(|v| v * c).collect(), 8000).unwrap();
            let cfg = MfccConfig::default();
            let a = mfcc_features(&clip, &cfg).unwrap();
            let b = mfcc_features(&scaled, &cfg).unwrap();
            let shift = 2.0 * c.ln() * 26f64.sqrt();
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                prop_assert!((rb[0] - ra[0] - shift).abs() < 1e-8);
                for q in 1..32 {
                    prop_assert!((rb[q] - ra[q]).abs() < 1e-8, "coef {}", q);
                }
            }
        }

        #[test]
        fn finite_for_any_finite_input(
            samples in prop::collection::vec(-1.0f64..1.0, 160..800),
            zeros in any::<bool>(),
        ) {
            let x = if zeros { vec![0.0; samples.len()] } else { samples };
            let m = mfcc_features(&AudioClip::new(x, 8000).unwrap(), &MfccConfig::default()).unwrap();
            prop_assert!(m.rows.iter().flatten().all(|v| v.is_finite()));
        }

        #[test]
        fn filterbank_rows_contiguous_nonnegative(n in 1usize..40, log_n in 8u32..11) {
            let fft = 1usize << log_n;
            let b = mel_filterbank(n, fft, 8000, (0.0, 4000.0), false).unwrap();
            for j in 0..n {
                let row = b.dense_row(j);
                prop_assert!(row.iter().all(|v| *v >= 0.0));
                let nz: Vec<usize> = row.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(k, _)| k).collect();
                prop_assert!(!nz.is_empty());
                prop_assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len());
            }
        }
    }
}
