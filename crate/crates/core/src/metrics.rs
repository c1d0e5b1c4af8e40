//! Log-mel spectrogram and objective metrics (MCD, F0 RMSE/correlation,
//! voicing error, MSE).

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
    pub log_floor: f32,
}

impl MelConfig {
    pub fn new(sample_rate: u32, hop: usize) -> Self {
        Self {
            sample_rate,
            n_fft: 2048,
            hop,
            win_length: 2048,
            n_mels: 80,
            fmin: 0.0,
            fmax: sample_rate as f32 / 2.0,
            log_floor: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.hop == 0 || self.n_mels == 0 || self.sample_rate == 0 {
            return Err(Error::config("mel n_fft, hop, n_mels and sample_rate must be positive"));
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return Err(Error::config("mel win_length must be in 1..=n_fft"));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f32 / 2.0) {
            return Err(Error::config(
                "mel band edges must satisfy 0 ≤ fmin < fmax ≤ sample_rate/2",
            ));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("mel log_floor must be positive"));
        }
        Ok(())
    }

    /// Frames produced for `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.win_length {
            1
        } else {
            len / self.hop + 1
        }
    }
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(f: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= MIN_LOG_HZ {
        min_log_mel + (f / MIN_LOG_HZ).ln() / logstep
    } else {
        f / F_SP
    }
}

pub fn mel_to_hz(m: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        MIN_LOG_HZ * ((m - min_log_mel) * logstep).exp()
    } else {
        m * F_SP
    }
}

/// Area-normalized triangular filterbank, `[n_mels × (n_fft/2 + 1)]`.
pub fn mel_filterbank(cfg: &MelConfig) -> Tensor {
    let bins = cfg.n_fft / 2 + 1;
    let sr = cfg.sample_rate as f64;
    let lo = hz_to_mel(cfg.fmin as f64);
    let hi = hz_to_mel(cfg.fmax as f64);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = Tensor::zeros(&[cfg.n_mels, bins]);
    for m in 0..cfg.n_mels {
        let (l, c, u) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (u - l);
        let row = fb.row_mut(m);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * sr / cfg.n_fft as f64;
            let rise = (f - l) / (c - l);
            let fall = (u - f) / (u - c);
            *w = (rise.min(fall).max(0.0) * norm) as f32;
        }
    }
    fb
}

fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()) as f32)
        .collect()
}

fn reflect(x: &[f32], i: isize) -> f32 {
    let n = x.len() as isize;
    let mut i = i;
    // Repeated reflection keeps very short inputs in range.
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return x[i as usize];
        }
    }
}

/// Natural-log mel magnitude spectrogram, `[frames × n_mels]`.
///
/// Frames are centered with reflect padding, giving `len / hop + 1` frames.
/// Inputs shorter than one window yield a single frame of the zero-padded
/// signal.
pub fn mel_spectrogram(wav: &[f32], cfg: &MelConfig) -> Result<Tensor> {
    cfg.validate()?;
    if wav.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("waveform contains non-finite samples".into()));
    }
    let n_fft = cfg.n_fft;
    let bins = n_fft / 2 + 1;
    let win_off = (n_fft - cfg.win_length) / 2;
    let window = hann(cfg.win_length);
    let fb = mel_filterbank(cfg);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(n_fft);

    let frames = cfg.num_frames(wav.len());
    let short = wav.len() < cfg.win_length;
    let half = (n_fft / 2) as isize;
    let mut out = Tensor::zeros(&[frames, cfg.n_mels]);
    let mut buf = vec![Complex::new(0.0f32, 0.0); n_fft];
    let mut mag = vec![0f32; bins];
    for t in 0..frames {
        for (j, b) in buf.iter_mut().enumerate() {
            let sample = if short {
                wav.get(j).copied().unwrap_or(0.0)
            } else {
                reflect(wav, (t * cfg.hop) as isize - half + j as isize)
            };
            let w = if j >= win_off && j < win_off + cfg.win_length {
                window[j - win_off]
            } else {
                0.0
            };
            *b = Complex::new(sample * w, 0.0);
        }
        fft.process(&mut buf);
        for (m, b) in mag.iter_mut().zip(&buf) {
            *m = b.norm();
        }
        let row = out.row_mut(t);
        for (m, r) in row.iter_mut().enumerate() {
            let e: f32 = fb.row(m).iter().zip(&mag).map(|(w, v)| w * v).sum();
            *r = e.max(cfg.log_floor).ln();
        }
    }
    Ok(out)
}

fn same_dims(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mel-cepstral distortion in dB, excluding coefficient 0, averaged over frames.
pub fn mcd(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_dims(a, b, "mcd")?;
    a.expect_rank(2, "mcd input")?;
    let frames = a.rows();
    if frames == 0 {
        return Err(Error::shape("mcd of zero frames"));
    }
    let k = 10.0 / std::f64::consts::LN_10;
    let total: f64 = (0..frames)
        .map(|t| {
            let s: f64 = a.row(t)[1..]
                .iter()
                .zip(&b.row(t)[1..])
                .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
                .sum();
            k * (2.0 * s).sqrt()
        })
        .sum();
    Ok(total / frames as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F0Metrics {
    /// Hz, over frames voiced in both tracks.
    pub rmse: f64,
    /// Pearson correlation over the same frames; NaN when either track is
    /// constant there.
    pub corr: f64,
    /// Fraction of frames whose voicing flags disagree.
    pub uv_err: f64,
}

pub fn f0_metrics(a: &[f32], b: &[f32]) -> Result<F0Metrics> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "f0 tracks differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::shape("empty f0 tracks"));
    }
    let mismatched = a.iter().zip(b).filter(|(x, y)| (**x > 0.0) != (**y > 0.0)).count();
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (*x as f64, *y as f64))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Domain("no frames are voiced in both tracks".into()));
    }
    let n = pairs.len() as f64;
    let rmse = (pairs.iter().map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt();
    let (ma, mb) = (
        pairs.iter().map(|p| p.0).sum::<f64>() / n,
        pairs.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    let denom = (saa * sbb).sqrt();
    let corr = if denom > 0.0 { sab / denom } else { f64::NAN };
    Ok(F0Metrics {
        rmse,
        corr,
        uv_err: mismatched as f64 / a.len() as f64,
    })
}

/// Mean squared difference over all elements.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_dims(a, b, "mse")?;
    if a.is_empty() {
        return Err(Error::shape("mse of empty tensors"));
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}
