//! Log-Mel front end: framing, power spectrum, Mel filterbank, log,
//! context splicing and frame subsampling.
//!
//! Defaults produce 23 log-Mel bins spliced over ±7 frames (345 values per
//! frame) from 25 ms / 10 ms frames at 8 kHz, subsampled by 10 to a
//! 100 ms frame period.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::ConfigInvalid("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::ConfigInvalid("waveform contains non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate_hz: u32,
    /// Analysis window in samples (25 ms at 8 kHz).
    pub win_length: usize,
    /// Frame shift in samples (10 ms at 8 kHz).
    pub hop_length: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    /// Upper edge of the Mel bank; `None` means Nyquist.
    pub fmax_hz: Option<f64>,
    /// Added to the Mel power before the log.
    pub floor: f64,
    pub context: usize,
    pub subsample: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            win_length: 200,
            hop_length: 80,
            n_fft: 256,
            n_mels: 23,
            fmin_hz: 0.0,
            fmax_hz: None,
            floor: 1e-10,
            context: 7,
            subsample: 10,
        }
    }
}

impl FrontendConfig {
    /// Width of a spliced feature frame.
    pub fn feature_dim(&self) -> usize {
        self.n_mels * (2 * self.context + 1)
    }

    pub fn base_frame_period_s(&self) -> f64 {
        self.hop_length as f64 / self.sample_rate_hz as f64
    }

    pub fn frame_period_s(&self) -> f64 {
        self.base_frame_period_s() * self.subsample as f64
    }

    /// Number of base frames for `n_samples` samples.
    pub fn n_base_frames(&self, n_samples: usize) -> usize {
        if n_samples <= self.win_length {
            1
        } else {
            1 + (n_samples - self.win_length) / self.hop_length
        }
    }

    /// Sample index at the centre of base frame `t`.
    pub fn base_frame_center(&self, t: usize) -> usize {
        t * self.hop_length + self.win_length / 2
    }

    fn fmax(&self) -> f64 {
        self.fmax_hz.unwrap_or(self.sample_rate_hz as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.hop_length == 0 {
            return bad("hop length must be positive");
        }
        if self.win_length < self.hop_length {
            return bad("window must be at least the hop length");
        }
        if self.n_fft < self.win_length {
            return bad("n_fft must cover the window");
        }
        if self.n_mels == 0 || self.subsample == 0 {
            return bad("n_mels and subsample must be positive");
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax() && self.fmax() <= self.sample_rate_hz as f64 / 2.0) {
            return bad("mel bank must lie within (0, sample_rate/2]");
        }
        if !(self.floor > 0.0) {
            return bad("log floor must be positive");
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequency of each Mel filter.
pub fn mel_centers_hz(cfg: &FrontendConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax()));
    let step = (hi - lo) / (cfg.n_mels + 1) as f64;
    (1..=cfg.n_mels).map(|k| mel_to_hz(lo + step * k as f64)).collect()
}

/// Triangular filter weights, `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(cfg: &FrontendConfig) -> Vec<Vec<f64>> {
    let (lo, hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax()));
    let step = (hi - lo) / (cfg.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_mels + 2).map(|k| mel_to_hz(lo + step * k as f64)).collect();
    let n_bins = cfg.n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate_hz as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|k| {
            let (l, c, r) = (edges[k], edges[k + 1], edges[k + 2]);
            (0..n_bins)
                .map(|j| {
                    let f = j as f64 * bin_hz;
                    ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Reusable log-Mel extractor holding the FFT plan, window and filterbank.
pub struct LogMel {
    cfg: FrontendConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bank: Vec<Vec<f64>>,
}

impl LogMel {
    pub fn new(cfg: FrontendConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        let window = hann(cfg.win_length);
        let bank = mel_filterbank(&cfg);
        Ok(Self { cfg, fft, window, bank })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    /// Base log-Mel matrix, `T₀ × n_mels`. Short inputs are zero-padded to
    /// one frame.
    pub fn compute(&self, wave: &Waveform) -> Result<Tensor<f64>> {
        if wave.samples.is_empty() {
            return Err(Error::InputEmpty("waveform"));
        }
        if wave.sample_rate_hz != self.cfg.sample_rate_hz {
            return Err(Error::ConfigInvalid(format!(
                "waveform is {} Hz, front end expects {} Hz",
                wave.sample_rate_hz, self.cfg.sample_rate_hz
            )));
        }
        let cfg = &self.cfg;
        let n_frames = cfg.n_base_frames(wave.samples.len());
        let n_bins = cfg.n_fft / 2 + 1;
        let mut out = Vec::with_capacity(n_frames * cfg.n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        for t in 0..n_frames {
            let start = t * cfg.hop_length;
            for (i, b) in buf.iter_mut().enumerate() {
                let s = if i < cfg.win_length { wave.samples.get(start + i).copied().unwrap_or(0.0) as f64 } else { 0.0 };
                let w = if i < cfg.win_length { self.window[i] } else { 0.0 };
                *b = Complex::new(s * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for filt in &self.bank {
                let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                out.push((e + cfg.floor).ln());
            }
        }
        Tensor::from_rows(n_frames, cfg.n_mels, out)
    }
}

/// One-shot log-Mel extraction.
pub fn log_mel(wave: &Waveform, cfg: &FrontendConfig) -> Result<Tensor<f64>> {
    LogMel::new(cfg.clone())?.compute(wave)
}

/// Network input: spliced, subsampled feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T> {
    /// `T × F` with `F = base_dim · (2·context + 1)`.
    pub frames: Tensor<T>,
    pub frame_period_s: f64,
    pub base_dim: usize,
    pub context: usize,
    pub subsample: usize,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn to_container(&self) -> Container<f32> {
        let mut c = Container::new()
            .with_meta("kind", "features")
            .with_meta("frame_period_s", self.frame_period_s)
            .with_meta("base_dim", self.base_dim)
            .with_meta("context", self.context)
            .with_meta("subsample", self.subsample);
        c.push("features", self.frames.cast());
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::<T>::load(path)?;
        let bad = |msg: &str| Error::Container { path: path.to_path_buf(), msg: msg.to_string() };
        let frames = c.tensor("features").ok_or_else(|| bad("missing `features` tensor"))?.clone();
        let seq = Self {
            frames,
            frame_period_s: c.meta_parse("frame_period_s").ok_or_else(|| bad("missing frame_period_s"))?,
            base_dim: c.meta_parse("base_dim").ok_or_else(|| bad("missing base_dim"))?,
            context: c.meta_parse("context").ok_or_else(|| bad("missing context"))?,
            subsample: c.meta_parse("subsample").ok_or_else(|| bad("missing subsample"))?,
        };
        if seq.dim() != seq.base_dim * (2 * seq.context + 1) {
            return Err(bad("feature width disagrees with base_dim and context"));
        }
        Ok(seq)
    }
}

/// Splices `±context` neighbouring rows (edge-clamped) onto each row, then
/// keeps every `subsample`-th row. Output has `ceil(T₀ / subsample)` rows.
pub fn splice_subsample<T: Scalar>(
    base: &Tensor<T>,
    context: usize,
    subsample: usize,
    base_frame_period_s: f64,
) -> Result<FeatureSequence<T>> {
    if subsample == 0 {
        return Err(Error::ConfigInvalid("subsample must be at least 1".into()));
    }
    let (t0, d) = (base.rows(), base.cols());
    if t0 == 0 || base.is_empty() {
        return Err(Error::InputEmpty("base feature matrix"));
    }
    let t_out = t0.div_ceil(subsample);
    let width = d * (2 * context + 1);
    let mut data = Vec::with_capacity(t_out * width);
    for t in 0..t_out {
        let center = (t * subsample) as isize;
        for off in -(context as isize)..=(context as isize) {
            let src = (center + off).clamp(0, t0 as isize - 1) as usize;
            data.extend_from_slice(base.row(src));
        }
    }
    Ok(FeatureSequence {
        frames: Tensor::from_rows(t_out, width, data)?,
        frame_period_s: base_frame_period_s * subsample as f64,
        base_dim: d,
        context,
        subsample,
    })
}

/// Full front end: waveform to network-ready features.
pub fn featurize<T: Scalar>(wave: &Waveform, cfg: &FrontendConfig) -> Result<FeatureSequence<T>> {
    let base = log_mel(wave, cfg)?;
    splice_subsample(&base.cast(), cfg.context, cfg.subsample, cfg.base_frame_period_s())
}
