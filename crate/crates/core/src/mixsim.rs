//! Synthetic multi-speaker mixtures with controllable overlap.
//!
//! Each speaker is white noise shaped by a fixed random spectral envelope,
//! gated on and off by a turn-taking timeline. Turn lengths are lognormal,
//! pauses exponential; overlaps come from negative gaps. A scalar overlap
//! knob blends every gap between its pause draw and its overlap draw, and
//! bisection on that knob (with the random draws held fixed) lands the
//! measured overlap ratio on the requested target.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::featfront::{featurize, mel_centers_hz, FeatureSequence, FrontendConfig, Waveform};
use crate::scalar::Scalar;
use crate::score::{emit_rttm, RttmSegment};
use crate::tensor::Tensor;
use crate::wav::write_wav;

/// Overlap-ratio targets of the 1-, 2-, 3- and 4-speaker training sets.
pub const OVERLAP_TARGETS: [f64; 4] = [0.0, 0.341, 0.342, 0.315];

/// Overlap preset for `n` speakers; counts above four reuse the 4-speaker value.
pub fn overlap_preset(n_speakers: usize) -> f64 {
    OVERLAP_TARGETS[n_speakers.clamp(1, 4) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: String,
    /// Linear amplitude per Mel band.
    pub spectral_envelope: Vec<f64>,
    pub gain_db: f64,
}

impl SpeakerProfile {
    /// Random formant-like envelope: a spectral tilt plus three bumps.
    pub fn random<R: Rng>(id: impl Into<String>, n_bands: usize, rng: &mut R) -> Self {
        let tilt_db = rng.random_range(-12.0..6.0);
        let mut log_env = vec![0.0f64; n_bands];
        for (b, v) in log_env.iter_mut().enumerate() {
            *v = tilt_db * b as f64 / n_bands as f64;
        }
        for _ in 0..3 {
            let center = rng.random_range(0.0..n_bands as f64);
            let width = rng.random_range(0.8..3.0);
            let height = rng.random_range(10.0..30.0);
            for (b, v) in log_env.iter_mut().enumerate() {
                let d = (b as f64 - center) / width;
                *v += height * (-0.5 * d * d).exp();
            }
        }
        let mx = log_env.iter().copied().fold(f64::MIN, f64::max);
        let spectral_envelope = log_env.iter().map(|v| 10f64.powf((v - mx) / 20.0)).collect();
        Self { id: id.into(), spectral_envelope, gain_db: rng.random_range(-3.0..3.0) }
    }

    /// RMS distance between two envelopes in dB.
    pub fn distance_db(&self, other: &Self) -> f64 {
        let n = self.spectral_envelope.len() as f64;
        let s: f64 = self
            .spectral_envelope
            .iter()
            .zip(&other.spectral_envelope)
            .map(|(a, b)| (20.0 * (a / b).log10()).powi(2))
            .sum();
        (s / n).sqrt()
    }

    fn validate(&self) -> Result<()> {
        if self.spectral_envelope.iter().any(|&v| !(v >= 0.0) || !v.is_finite())
            || self.spectral_envelope.iter().all(|&v| v == 0.0)
        {
            return Err(Error::SpecInfeasible(format!("speaker {}: envelope must be nonnegative and nonzero", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub n_speakers: usize,
    pub target_overlap_ratio: f64,
    pub duration_s: f64,
    pub silence_gap_mean_s: f64,
    /// Median turn length (lognormal).
    pub utterance_median_s: f64,
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            n_speakers: 2,
            target_overlap_ratio: overlap_preset(2),
            duration_s: 60.0,
            silence_gap_mean_s: 1.0,
            utterance_median_s: 2.5,
            noise_snr_db: Some(20.0),
            seed: 0,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInfeasible(m));
        if self.n_speakers == 0 {
            return bad("n_speakers must be at least 1".into());
        }
        if !(self.duration_s > 0.0) || !(self.silence_gap_mean_s > 0.0) || !(self.utterance_median_s > 0.0) {
            return bad("durations must be positive".into());
        }
        if !(0.0..1.0).contains(&self.target_overlap_ratio) {
            return bad(format!("overlap ratio {} outside [0, 1)", self.target_overlap_ratio));
        }
        if self.n_speakers == 1 && self.target_overlap_ratio > 0.0 {
            return bad("a single speaker cannot overlap".into());
        }
        Ok(())
    }
}

/// Frame-level speech activity, `T × S`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    activity: Vec<u8>,
    n_frames: usize,
    pub speaker_ids: Vec<String>,
    pub frame_period_s: f64,
}

impl LabelMatrix {
    pub fn new(activity: Vec<u8>, n_frames: usize, speaker_ids: Vec<String>, frame_period_s: f64) -> Result<Self> {
        if activity.len() != n_frames * speaker_ids.len() {
            return Err(Error::Shape(format!(
                "label matrix: {} cells for {n_frames}x{}",
                activity.len(),
                speaker_ids.len()
            )));
        }
        if activity.iter().any(|&v| v > 1) {
            return Err(Error::Shape("labels must be 0 or 1".into()));
        }
        Ok(Self { activity, n_frames, speaker_ids, frame_period_s })
    }

    pub fn from_rows(rows: &[Vec<u8>], frame_period_s: f64) -> Result<Self> {
        let s = rows.first().map_or(0, Vec::len);
        let ids = (0..s).map(|i| format!("spk{i}")).collect();
        Self::new(rows.concat(), rows.len(), ids, frame_period_s)
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_speakers(&self) -> usize {
        self.speaker_ids.len()
    }

    pub fn get(&self, t: usize, s: usize) -> bool {
        self.activity[t * self.n_speakers() + s] == 1
    }

    pub fn row(&self, t: usize) -> &[u8] {
        let s = self.n_speakers();
        &self.activity[t * s..(t + 1) * s]
    }

    pub fn speaker_frames(&self, s: usize) -> usize {
        (0..self.n_frames).filter(|&t| self.get(t, s)).count()
    }

    /// Labels as a `T × S` tensor of zeros and ones.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.activity.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect();
        Tensor::from_rows(self.n_frames, self.n_speakers(), data).expect("label shape")
    }

    /// Frames `start..start+len`, keeping only speakers active inside the window.
    pub fn window(&self, start: usize, len: usize) -> LabelMatrix {
        let end = (start + len).min(self.n_frames);
        let keep: Vec<usize> =
            (0..self.n_speakers()).filter(|&s| (start..end).any(|t| self.get(t, s))).collect();
        let mut act = Vec::with_capacity((end - start) * keep.len());
        for t in start..end {
            for &s in &keep {
                act.push(self.activity[t * self.n_speakers() + s]);
            }
        }
        LabelMatrix {
            activity: act,
            n_frames: end - start,
            speaker_ids: keep.iter().map(|&s| self.speaker_ids[s].clone()).collect(),
            frame_period_s: self.frame_period_s,
        }
    }

    /// Column-permuted copy: output column `j` is input column `perm[j]`.
    pub fn permute_speakers(&self, perm: &[usize]) -> LabelMatrix {
        let s = self.n_speakers();
        let mut act = vec![0u8; self.activity.len()];
        for t in 0..self.n_frames {
            for (j, &src) in perm.iter().enumerate() {
                act[t * s + j] = self.activity[t * s + src];
            }
        }
        LabelMatrix {
            activity: act,
            n_frames: self.n_frames,
            speaker_ids: perm.iter().map(|&p| self.speaker_ids[p].clone()).collect(),
            frame_period_s: self.frame_period_s,
        }
    }
}

/// Overlapped-speech frames over speech frames; 0 when there is no speech.
pub fn measure_overlap_ratio(labels: &LabelMatrix) -> f64 {
    let (mut speech, mut overlap) = (0usize, 0usize);
    for t in 0..labels.n_frames() {
        let active = labels.row(t).iter().filter(|&&v| v == 1).count();
        if active >= 1 {
            speech += 1;
        }
        if active >= 2 {
            overlap += 1;
        }
    }
    if speech == 0 {
        0.0
    } else {
        overlap as f64 / speech as f64
    }
}

/// One speaker turn in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Turn {
    pub speaker: usize,
    pub start_s: f64,
    pub end_s: f64,
}

/// Random draws that fix a timeline up to the overlap knob.
struct TurnDraws {
    speakers: Vec<usize>,
    lengths: Vec<f64>,
    pauses: Vec<f64>,
    overlaps: Vec<f64>,
    lead_in: f64,
}

impl TurnDraws {
    fn draw(spec: &MixtureSpec, rng: &mut ChaCha8Rng) -> Self {
        // Generous upper bound on turns that can fit.
        let max_turns = (spec.duration_s / (0.1 * spec.utterance_median_s)).ceil() as usize + 4 * spec.n_speakers;
        let len_dist = LogNormal::new(spec.utterance_median_s.ln(), 0.5).expect("lognormal");
        let pause_dist = Exp::new(1.0 / spec.silence_gap_mean_s).expect("exp");
        let mut speakers = Vec::with_capacity(max_turns);
        let mut first: Vec<usize> = (0..spec.n_speakers).collect();
        for i in (1..first.len()).rev() {
            let j = rng.random_range(0..=i);
            first.swap(i, j);
        }
        speakers.extend(first);
        while speakers.len() < max_turns {
            let prev = *speakers.last().unwrap();
            let s = if spec.n_speakers == 1 {
                0
            } else {
                let r = rng.random_range(0..spec.n_speakers - 1);
                if r >= prev {
                    r + 1
                } else {
                    r
                }
            };
            speakers.push(s);
        }
        let lengths: Vec<f64> = (0..max_turns).map(|_| len_dist.sample(rng).clamp(0.3, 4.0 * spec.utterance_median_s)).collect();
        let pauses = (0..max_turns).map(|_| pause_dist.sample(rng)).collect();
        let overlaps = (0..max_turns).map(|_| rng.random::<f64>()).collect();
        let lead_in = rng.random::<f64>() * spec.silence_gap_mean_s;
        Self { speakers, lengths, pauses, overlaps, lead_in }
    }

    /// Timeline for overlap knob `theta ∈ [0, 1]`.
    fn timeline(&self, theta: f64, duration: f64) -> Vec<Turn> {
        let mut turns = Vec::new();
        let mut start = self.lead_in;
        for i in 0..self.speakers.len() {
            if i > 0 {
                let prev_len = self.lengths[i - 1];
                let overlap = 0.9 * self.overlaps[i] * prev_len.min(self.lengths[i]);
                let gap = (1.0 - theta) * self.pauses[i] - theta * overlap;
                start = turns.last().map_or(start, |t: &Turn| t.end_s) + gap;
            }
            if start >= duration {
                break;
            }
            let end = (start + self.lengths[i]).min(duration);
            turns.push(Turn { speaker: self.speakers[i], start_s: start, end_s: end });
        }
        turns
    }
}

/// Frame labels of a timeline: frame `t` is active for a speaker when its
/// centre sample falls inside one of that speaker's turns.
pub fn timeline_labels(turns: &[Turn], n_speakers: usize, n_samples: usize, fe: &FrontendConfig) -> LabelMatrix {
    let n_frames = fe.n_base_frames(n_samples).div_ceil(fe.subsample);
    let sr = fe.sample_rate_hz as f64;
    let mut act = vec![0u8; n_frames * n_speakers];
    for turn in turns {
        let (a, b) = ((turn.start_s * sr).round() as usize, (turn.end_s * sr).round() as usize);
        for t in 0..n_frames {
            let c = fe.base_frame_center(t * fe.subsample);
            if c >= a && c < b {
                act[t * n_speakers + turn.speaker] = 1;
            }
        }
    }
    let ids = (0..n_speakers).map(|s| format!("spk{s}")).collect();
    LabelMatrix::new(act, n_frames, ids, fe.frame_period_s()).expect("label shape")
}

/// A rendered mixture with its ground truth.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub wave: Waveform,
    pub labels: LabelMatrix,
    pub turns: Vec<Turn>,
    pub speakers: Vec<SpeakerProfile>,
    pub measured_overlap_ratio: f64,
}

impl Mixture {
    /// Reference segments (per-speaker unions of turns) as RTTM records.
    pub fn rttm(&self, recording_id: &str) -> Vec<RttmSegment> {
        let mut segs = Vec::new();
        for (s, prof) in self.speakers.iter().enumerate() {
            let mut iv: Vec<(f64, f64)> =
                self.turns.iter().filter(|t| t.speaker == s).map(|t| (t.start_s, t.end_s)).collect();
            iv.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut merged: Vec<(f64, f64)> = Vec::new();
            for (a, b) in iv {
                match merged.last_mut() {
                    Some(last) if a <= last.1 => last.1 = last.1.max(b),
                    _ => merged.push((a, b)),
                }
            }
            for (a, b) in merged {
                if let Some(seg) = RttmSegment::from_seconds(recording_id, a, b - a, &prof.id) {
                    segs.push(seg);
                }
            }
        }
        segs.sort();
        segs
    }
}

const MIN_SPEAKER_DISTANCE_DB: f64 = 6.0;
const SPEECH_RMS: f64 = 0.1;

/// Draws `n` mutually distinct speaker profiles.
pub fn draw_speakers<R: Rng>(n: usize, n_bands: usize, rng: &mut R) -> Vec<SpeakerProfile> {
    let mut out: Vec<SpeakerProfile> = Vec::with_capacity(n);
    while out.len() < n {
        let cand = SpeakerProfile::random(format!("spk{}", out.len()), n_bands, rng);
        if out.iter().all(|p| p.distance_db(&cand) >= MIN_SPEAKER_DISTANCE_DB) {
            out.push(cand);
        }
    }
    out
}

/// Simulates one mixture with freshly drawn speakers.
pub fn simulate(spec: &MixtureSpec, fe: &FrontendConfig) -> Result<Mixture> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let speakers = draw_speakers(spec.n_speakers, fe.n_mels, &mut rng);
    simulate_with_speakers(spec, fe, speakers)
}

/// Simulates one mixture with the given speakers (`speakers.len()` must be
/// `spec.n_speakers`).
pub fn simulate_with_speakers(spec: &MixtureSpec, fe: &FrontendConfig, speakers: Vec<SpeakerProfile>) -> Result<Mixture> {
    spec.validate()?;
    fe.validate()?;
    if speakers.len() != spec.n_speakers {
        return Err(Error::SpecInfeasible(format!("{} profiles for {} speakers", speakers.len(), spec.n_speakers)));
    }
    for p in &speakers {
        p.validate()?;
    }
    let n_samples = (spec.duration_s * fe.sample_rate_hz as f64).round() as usize;
    if n_samples == 0 {
        return Err(Error::SpecInfeasible("duration shorter than one sample".into()));
    }
    let duration = n_samples as f64 / fe.sample_rate_hz as f64;

    let mut timeline_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_71e1_1eaf_0001);
    let mut attempt = 0;
    let (turns, labels) = loop {
        let draws = TurnDraws::draw(spec, &mut timeline_rng);
        let (turns, labels) = fit_overlap(&draws, spec, duration, n_samples, fe);
        if (0..spec.n_speakers).all(|s| labels.speaker_frames(s) > 0) {
            break (turns, labels);
        }
        attempt += 1;
        if attempt > 100 {
            return Err(Error::SpecInfeasible(format!(
                "could not fit {} speakers into {:.1} s",
                spec.n_speakers, spec.duration_s
            )));
        }
    };
    let labels = LabelMatrix { speaker_ids: speakers.iter().map(|p| p.id.clone()).collect(), ..labels };

    let mut render_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x0e1d_e4a0_0000_0002);
    let sources = render_sources(&turns, &speakers, n_samples, fe, &mut render_rng);
    let mut mix = vec![0.0f64; n_samples];
    for src in &sources {
        for (m, &v) in mix.iter_mut().zip(src) {
            *m += v;
        }
    }
    if let Some(snr) = spec.noise_snr_db {
        let amp = SPEECH_RMS * 10f64.powf(-snr / 20.0);
        for m in mix.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut render_rng);
            *m += amp * z;
        }
    }
    let samples = mix.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect();
    let measured = measure_overlap_ratio(&labels);
    Ok(Mixture {
        wave: Waveform::new(samples, fe.sample_rate_hz)?,
        labels,
        turns,
        speakers,
        measured_overlap_ratio: measured,
    })
}

fn fit_overlap(
    draws: &TurnDraws,
    spec: &MixtureSpec,
    duration: f64,
    n_samples: usize,
    fe: &FrontendConfig,
) -> (Vec<Turn>, LabelMatrix) {
    let eval = |theta: f64| {
        let turns = draws.timeline(theta, duration);
        let labels = timeline_labels(&turns, spec.n_speakers, n_samples, fe);
        let rho = measure_overlap_ratio(&labels);
        (turns, labels, rho)
    };
    let target = spec.target_overlap_ratio;
    let mut best = eval(0.0);
    if spec.n_speakers == 1 || target == 0.0 {
        return (best.0, best.1);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let cand = eval(mid);
        if cand.2 < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (cand.2 - target).abs() < (best.2 - target).abs() {
            best = cand;
        }
    }
    (best.0, best.1)
}

/// Renders each speaker's gated source signal separately.
pub fn render_sources<R: Rng>(
    turns: &[Turn],
    speakers: &[SpeakerProfile],
    n_samples: usize,
    fe: &FrontendConfig,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let sr = fe.sample_rate_hz as f64;
    let centers = mel_centers_hz(fe);
    speakers
        .iter()
        .enumerate()
        .map(|(s, prof)| {
            let mut sig = shaped_noise(&prof.spectral_envelope, &centers, n_samples, sr, rng);
            let rms = (sig.iter().map(|v| v * v).sum::<f64>() / n_samples as f64).sqrt().max(1e-12);
            let scale = SPEECH_RMS * 10f64.powf(prof.gain_db / 20.0) / rms;
            let mut gate = vec![0.0f64; n_samples];
            let ramp = (0.005 * sr) as usize;
            for t in turns.iter().filter(|t| t.speaker == s) {
                let (a, b) = ((t.start_s * sr).round() as usize, ((t.end_s * sr).round() as usize).min(n_samples));
                for (i, g) in gate[a..b].iter_mut().enumerate() {
                    let edge = i.min(b - a - 1 - i);
                    let w = if edge < ramp { 0.5 - 0.5 * (std::f64::consts::PI * (edge + 1) as f64 / (ramp + 1) as f64).cos() } else { 1.0 };
                    *g = g.max(w);
                }
            }
            for (v, g) in sig.iter_mut().zip(&gate) {
                *v *= scale * g;
            }
            sig
        })
        .collect()
}

/// Gaussian noise shaped by a band envelope, by overlap-add of random-phase
/// spectra through a square-root Hann window (50% overlap).
fn shaped_noise<R: Rng>(envelope: &[f64], centers_hz: &[f64], n_samples: usize, sr: f64, rng: &mut R) -> Vec<f64> {
    const N: usize = 256;
    const HOP: usize = N / 2;
    let bins = N / 2 + 1;
    let mag: Vec<f64> = (0..bins)
        .map(|k| {
            let f = k as f64 * sr / N as f64;
            interp(centers_hz, envelope, f)
        })
        .collect();
    let win: Vec<f64> =
        (0..N).map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / N as f64).cos()).sqrt()).collect();
    let ifft = FftPlanner::new().plan_fft_inverse(N);
    let mut out = vec![0.0f64; n_samples + N];
    let mut buf = vec![Complex::new(0.0, 0.0); N];
    let mut pos = 0;
    while pos < n_samples + HOP {
        for k in 0..bins {
            let (re, im): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
            let v = if k == 0 || k == N / 2 { Complex::new(re * mag[k], 0.0) } else { Complex::new(re, im) * mag[k] };
            buf[k] = v;
            if k != 0 && k != N / 2 {
                buf[N - k] = v.conj();
            }
        }
        ifft.process(&mut buf);
        for i in 0..N {
            if pos + i < out.len() {
                out[pos + i] += buf[i].re * win[i];
            }
        }
        pos += HOP;
    }
    out.truncate(n_samples);
    out
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] * (1.0 - w) + ys[i + 1] * w
}

/// Corpus generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_mixtures: usize,
    pub min_speakers: usize,
    pub max_speakers: usize,
    /// Template for every mixture; `n_speakers`, `target_overlap_ratio` and
    /// `seed` are filled per mixture.
    pub template: MixtureSpec,
    /// Overlap target for speaker counts 1, 2, 3, 4 (last entry reused above).
    pub overlap_targets: Vec<f64>,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_mixtures: 10,
            min_speakers: 1,
            max_speakers: 4,
            template: MixtureSpec::default(),
            overlap_targets: OVERLAP_TARGETS.to_vec(),
            seed: 0,
        }
    }
}

impl CorpusSpec {
    fn target_for(&self, n: usize) -> f64 {
        if n <= 1 {
            return 0.0;
        }
        let i = (n - 1).min(self.overlap_targets.len().saturating_sub(1));
        self.overlap_targets.get(i).copied().unwrap_or(0.0)
    }

    /// Per-mixture specs. Speaker counts and seeds come from one ChaCha8
    /// stream seeded by `seed`: for each mixture, a uniform count in
    /// `min..=max` then a `u64` seed.
    pub fn mixture_specs(&self) -> Result<Vec<MixtureSpec>> {
        if self.min_speakers == 0 || self.min_speakers > self.max_speakers {
            return Err(Error::ConfigInvalid(format!(
                "speaker range {}..={} invalid",
                self.min_speakers, self.max_speakers
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..self.n_mixtures)
            .map(|_| {
                let n = rng.random_range(self.min_speakers..=self.max_speakers);
                let seed = rng.next_u64();
                MixtureSpec { n_speakers: n, target_overlap_ratio: self.target_for(n), seed, ..self.template.clone() }
            })
            .collect())
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Feature container (features plus a `labels` tensor).
    pub path: PathBuf,
    pub wav: Option<PathBuf>,
    pub rttm: PathBuf,
    pub n_speakers: usize,
    pub measured_overlap_ratio: f64,
    pub seed: u64,
}

/// A mixture ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub id: String,
    pub features: FeatureSequence<T>,
    pub labels: LabelMatrix,
    pub reference: Vec<RttmSegment>,
}

/// Simulates and featurizes a corpus in memory, in mixture order.
pub fn generate_corpus<T: Scalar>(spec: &CorpusSpec, fe: &FrontendConfig) -> Result<Vec<(Sample<T>, Mixture)>> {
    let specs = spec.mixture_specs()?;
    specs
        .par_iter()
        .enumerate()
        .map(|(i, ms)| {
            let id = format!("mix{i:05}");
            let mix = simulate(ms, fe)?;
            let features = featurize::<T>(&mix.wave, fe)?;
            if features.n_frames() != mix.labels.n_frames() {
                return Err(Error::Shape("feature and label frame counts differ".into()));
            }
            let reference = mix.rttm(&id);
            Ok((Sample { id, features, labels: mix.labels.clone(), reference }, mix))
        })
        .collect()
}

/// Writes a corpus to `out_dir` and returns the manifest path.
pub fn make_corpus(spec: &CorpusSpec, fe: &FrontendConfig, out_dir: &Path, write_wav_files: bool) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let corpus = generate_corpus::<f32>(spec, fe)?;
    let specs = spec.mixture_specs()?;
    let manifest_path = out_dir.join("manifest.jsonl");
    let mut manifest = BufWriter::new(File::create(&manifest_path)?);
    for ((sample, mix), ms) in corpus.iter().zip(&specs) {
        let feat = PathBuf::from(format!("{}.edat", sample.id));
        save_sample(sample, &out_dir.join(&feat))?;
        let rttm = PathBuf::from(format!("{}.rttm", sample.id));
        fs::write(out_dir.join(&rttm), emit_rttm(&sample.reference))?;
        let wav = if write_wav_files {
            let p = PathBuf::from(format!("{}.wav", sample.id));
            write_wav(&out_dir.join(&p), &mix.wave)?;
            Some(p)
        } else {
            None
        };
        let rec = ManifestRecord {
            id: sample.id.clone(),
            path: feat,
            wav,
            rttm,
            n_speakers: ms.n_speakers,
            measured_overlap_ratio: mix.measured_overlap_ratio,
            seed: ms.seed,
        };
        serde_json::to_writer(&mut manifest, &rec)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    Ok(manifest_path)
}

pub fn save_sample<T: Scalar>(sample: &Sample<T>, path: &Path) -> Result<()> {
    let mut c = sample.features.to_container();
    c.meta.insert("speakers".into(), sample.labels.speaker_ids.join(","));
    c.push("labels", sample.labels.to_tensor::<f32>());
    c.save(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?,
        );
    }
    Ok(out)
}

/// Loads every sample listed in a manifest; relative paths resolve against
/// the manifest's directory.
pub fn load_corpus<T: Scalar>(manifest: &Path) -> Result<Vec<Sample<T>>> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|rec| {
            let path = dir.join(&rec.path);
            let features = FeatureSequence::<T>::load(&path)?;
            let c = Container::<f32>::load(&path)?;
            let bad = |m: &str| Error::Container { path: path.clone(), msg: m.to_string() };
            let lt = c.tensor("labels").ok_or_else(|| bad("missing labels"))?;
            let ids: Vec<String> = c.meta.get("speakers").map(|s| s.split(',').map(String::from).collect()).unwrap_or_default();
            let act = lt.data().iter().map(|&v| u8::from(v > 0.5)).collect();
            let labels = LabelMatrix::new(act, lt.rows(), ids, features.frame_period_s)?;
            let text = fs::read_to_string(dir.join(&rec.rttm))?;
            let reference = crate::score::parse_rttm(&text)?;
            Ok(Sample { id: rec.id, features, labels, reference })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, rho: f64, dur: f64, seed: u64) -> MixtureSpec {
        MixtureSpec { n_speakers: n, target_overlap_ratio: rho, duration_s: dur, seed, ..Default::default() }
    }

    #[test]
    fn single_speaker_never_overlaps() {
        let m = simulate(&spec(1, 0.0, 30.0, 3), &FrontendConfig::default()).unwrap();
        assert_eq!(m.measured_overlap_ratio, 0.0);
        assert!(m.labels.speaker_frames(0) > 0);
    }

    #[test]
    fn infeasible_single_speaker_overlap() {
        let r = simulate(&spec(1, 0.2, 30.0, 3), &FrontendConfig::default());
        assert!(matches!(r, Err(Error::SpecInfeasible(_))));
    }

    #[test]
    fn two_speakers_hit_table_target() {
        let m = simulate(&spec(2, 0.341, 60.0, 11), &FrontendConfig::default()).unwrap();
        assert!((0.291..=0.391).contains(&m.measured_overlap_ratio), "{}", m.measured_overlap_ratio);
    }

    #[test]
    fn simulation_is_deterministic() {
        let fe = FrontendConfig::default();
        let a = simulate(&spec(3, 0.342, 20.0, 5), &fe).unwrap();
        let b = simulate(&spec(3, 0.342, 20.0, 5), &fe).unwrap();
        assert_eq!(a.wave, b.wave);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn overlap_ratio_edge_cases() {
        let one = LabelMatrix::from_rows(&[vec![1], vec![1], vec![1]], 0.1).unwrap();
        assert_eq!(measure_overlap_ratio(&one), 0.0);
        let same = LabelMatrix::from_rows(&[vec![1, 1], vec![0, 0], vec![1, 1]], 0.1).unwrap();
        assert_eq!(measure_overlap_ratio(&same), 1.0);
        let silent = LabelMatrix::from_rows(&[vec![0, 0]], 0.1).unwrap();
        assert_eq!(measure_overlap_ratio(&silent), 0.0);
    }

    #[test]
    fn active_frames_carry_source_energy() {
        let fe = FrontendConfig::default();
        let ms = spec(3, 0.3, 20.0, 9);
        let m = simulate(&ms, &fe).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sources = render_sources(&m.turns, &m.speakers, m.wave.samples.len(), &fe, &mut rng);
        for t in 0..m.labels.n_frames() {
            let c = fe.base_frame_center(t * fe.subsample);
            let lo = c.saturating_sub(fe.win_length / 2);
            let hi = (c + fe.win_length / 2).min(m.wave.samples.len());
            for (s, src) in sources.iter().enumerate() {
                let e: f64 = src[lo..hi].iter().map(|v| v * v).sum();
                if m.labels.get(t, s) {
                    assert!(e > 1e-8, "frame {t} speaker {s} active but silent");
                }
            }
        }
    }

    #[test]
    fn window_drops_inactive_speakers() {
        let l = LabelMatrix::from_rows(&[vec![1, 0], vec![1, 0], vec![0, 1]], 0.1).unwrap();
        let w = l.window(0, 2);
        assert_eq!(w.n_speakers(), 1);
        assert_eq!(w.n_frames(), 2);
        assert_eq!(w.speaker_ids, vec!["spk0".to_string()]);
    }
}
