//! Inference: embeddings, attractors, speaker counting, posteriors and
//! segments. Also the input-order and subsampling probes and a 2-D PCA
//! projection of embeddings and attractors.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::featfront::FeatureSequence;
use crate::mixsim::LabelMatrix;
use crate::model::{open_sigmoid, AttractorSet, EendEda, EmbeddingSequence, DEFAULT_MAX_ATTRACTORS};
use crate::scalar::Scalar;
use crate::score::RttmSegment;
use crate::tensor::Tensor;
use crate::train::OrderMode;

/// Restriction of the attractor-encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Probe {
    #[default]
    None,
    /// Rows `0, N, 2N, …`.
    Subsample(usize),
    /// The final `ceil(T/N)` rows.
    Last(usize),
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Probe::None => f.write_str("none"),
            Probe::Subsample(n) => write!(f, "subsample:{n}"),
            Probe::Last(n) => write!(f, "last:{n}"),
        }
    }
}

impl FromStr for Probe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ConfigInvalid(format!("probe must be none, subsample:N or last:N, got `{s}`"));
        if s == "none" {
            return Ok(Probe::None);
        }
        let (kind, n) = s.split_once(':').ok_or_else(bad)?;
        let n: usize = n.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        match kind {
            "subsample" => Ok(Probe::Subsample(n)),
            "last" => Ok(Probe::Last(n)),
            _ => Err(bad()),
        }
    }
}

/// Row indices kept by `probe` out of `t` frames.
pub fn probe_rows(t: usize, probe: Probe) -> Result<Vec<usize>> {
    let rows: Vec<usize> = match probe {
        Probe::None => (0..t).collect(),
        Probe::Subsample(n) | Probe::Last(n) if n == 0 => {
            return Err(Error::ConfigInvalid("probe factor must be at least 1".into()))
        }
        Probe::Subsample(n) => (0..t).step_by(n).collect(),
        Probe::Last(n) => (t - t.div_ceil(n)..t).collect(),
    };
    if rows.is_empty() {
        return Err(Error::InputEmpty("probe output"));
    }
    Ok(rows)
}

/// The rows of `e` kept by `probe`.
pub fn probe_transform<T: Scalar>(e: &Tensor<T>, probe: Probe) -> Result<Tensor<T>> {
    let rows = probe_rows(e.rows(), probe)?;
    let mut data = Vec::with_capacity(rows.len() * e.cols());
    for &r in &rows {
        data.extend_from_slice(e.row(r));
    }
    Tensor::from_rows(rows.len(), e.cols(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferConfig {
    pub tau: f64,
    pub activity_threshold: f64,
    /// Odd window length of the median filter; 1 disables it.
    pub median_filter_frames: usize,
    pub order_mode: OrderMode,
    /// Seed of the shuffled order, one shuffle per recording.
    pub seed: u64,
    pub oracle_speaker_count: Option<usize>,
    pub probe: Probe,
    pub max_attractors: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            activity_threshold: 0.5,
            median_filter_frames: 11,
            order_mode: OrderMode::Shuffled,
            seed: 0,
            oracle_speaker_count: None,
            probe: Probe::None,
            max_attractors: DEFAULT_MAX_ATTRACTORS,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie strictly between 0 and 1");
        }
        if self.median_filter_frames % 2 == 0 {
            return bad("median filter length must be odd");
        }
        if self.max_attractors == 0 {
            return bad("max_attractors must be at least 1");
        }
        Ok(())
    }
}

/// `max{s : p_s ≥ τ}` with 1-based `s`, or 0 when no entry qualifies.
pub fn estimate_speaker_count(p: &[f64], tau: f64) -> usize {
    p.iter().rposition(|&v| v >= tau).map_or(0, |i| i + 1)
}

/// Per-speaker activity probabilities, `S×T`, strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    pub probs: Tensor<f64>,
    pub frame_period_s: f64,
}

impl PosteriorMatrix {
    pub fn n_speakers(&self) -> usize {
        self.probs.rows()
    }

    pub fn n_frames(&self) -> usize {
        self.probs.cols()
    }
}

/// `σ(A·Eᵀ)` for the given attractors.
pub fn posteriors<T: Scalar>(a: &AttractorSet<T>, e: &EmbeddingSequence<T>) -> Result<PosteriorMatrix> {
    if a.is_empty() {
        return Err(Error::EmptyDiarization);
    }
    if a.attractors.cols() != e.dim() {
        return Err(Error::Shape(format!("attractor width {} vs embedding width {}", a.attractors.cols(), e.dim())));
    }
    let (s, t) = (a.len(), e.n_frames());
    let mut probs = Tensor::zeros(&[s, t]);
    for i in 0..s {
        let ai = a.attractors.row(i);
        for k in 0..t {
            let z: f64 = ai.iter().zip(e.e.row(k)).map(|(&x, &y)| x.as_f64() * y.as_f64()).sum();
            probs.set(i, k, open_sigmoid(z));
        }
    }
    Ok(PosteriorMatrix { probs, frame_period_s: e.frame_period_s })
}

/// A maximal run of active frames, `[start_frame, end_frame)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiarSegment {
    pub speaker: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl DiarSegment {
    pub fn onset_s(&self, frame_period_s: f64) -> f64 {
        self.start_frame as f64 * frame_period_s
    }

    pub fn duration_s(&self, frame_period_s: f64) -> f64 {
        (self.end_frame - self.start_frame) as f64 * frame_period_s
    }
}

/// Running median with edge replication; `k` odd.
pub fn median_filter(x: &[f64], k: usize) -> Vec<f64> {
    if k <= 1 || x.is_empty() {
        return x.to_vec();
    }
    let h = (k / 2) as isize;
    let n = x.len() as isize;
    let mut win = Vec::with_capacity(k);
    (0..n)
        .map(|i| {
            win.clear();
            win.extend((i - h..=i + h).map(|j| x[j.clamp(0, n - 1) as usize]));
            win.sort_by(f64::total_cmp);
            win[k / 2]
        })
        .collect()
}

/// Median filtering, thresholding and run extraction.
pub fn binarize(y: &PosteriorMatrix, cfg: &InferConfig) -> (LabelMatrix, Vec<DiarSegment>) {
    let (s, t) = (y.n_speakers(), y.n_frames());
    let mut act = vec![0u8; s * t];
    let mut segs = Vec::new();
    for i in 0..s {
        let f = median_filter(y.probs.row(i), cfg.median_filter_frames);
        let mut start = None;
        for (k, &v) in f.iter().enumerate() {
            let on = v >= cfg.activity_threshold;
            act[k * s + i] = u8::from(on);
            match (on, start) {
                (true, None) => start = Some(k),
                (false, Some(st)) => {
                    segs.push(DiarSegment { speaker: i, start_frame: st, end_frame: k });
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(st) = start {
            segs.push(DiarSegment { speaker: i, start_frame: st, end_frame: t });
        }
    }
    let ids = (0..s).map(|i| format!("spk{i}")).collect();
    let labels = LabelMatrix::new(act, t, ids, y.frame_period_s).expect("label shape");
    (labels, segs)
}

/// Everything produced for one recording.
#[derive(Debug, Clone)]
pub struct Diarization<T> {
    pub embeddings: EmbeddingSequence<T>,
    /// Decoded attractors up to the first one below `tau` (at least the
    /// oracle count when given).
    pub attractors: AttractorSet<T>,
    pub estimated_count: usize,
    /// Count used: the oracle count when given, else the estimate.
    pub count: usize,
    pub posteriors: Option<PosteriorMatrix>,
    pub labels: LabelMatrix,
    pub segments: Vec<DiarSegment>,
}

impl<T: Scalar> Diarization<T> {
    pub fn rttm(&self, recording_id: &str) -> Vec<RttmSegment> {
        let fp = self.embeddings.frame_period_s;
        self.segments
            .iter()
            .filter_map(|s| {
                RttmSegment::from_seconds(recording_id, s.onset_s(fp), s.duration_s(fp), &format!("spk{}", s.speaker))
            })
            .collect()
    }
}

/// Attractors decoded from embeddings under `cfg`'s probe and order.
pub fn attractors_for<T: Scalar>(model: &EendEda<T>, e: &EmbeddingSequence<T>, cfg: &InferConfig) -> Result<AttractorSet<T>> {
    let rows = probe_rows(e.n_frames(), cfg.probe)?;
    let order = cfg.order_mode.with_seed(cfg.seed);
    let perm = order.indices(rows.len());
    let ordered: Vec<usize> = perm.iter().map(|&i| rows[i]).collect();
    let n = cfg.max_attractors.max(cfg.oracle_speaker_count.unwrap_or(0));
    model.eda_forward_rows(&e.e, &ordered, order, n)
}

/// Full pipeline for one recording.
pub fn diarize<T: Scalar>(features: &FeatureSequence<T>, model: &EendEda<T>, cfg: &InferConfig) -> Result<Diarization<T>> {
    cfg.validate()?;
    let embeddings = model.encode(features)?;
    diarize_embeddings(embeddings, model, cfg)
}

/// Pipeline from precomputed embeddings.
pub fn diarize_embeddings<T: Scalar>(
    embeddings: EmbeddingSequence<T>,
    model: &EendEda<T>,
    cfg: &InferConfig,
) -> Result<Diarization<T>> {
    let all = attractors_for(model, &embeddings, cfg)?;
    // Decoding stops at the first attractor below tau. Later steps are
    // never trained, so only that prefix is counted.
    let stop = all.existence.iter().position(|&p| p < cfg.tau).map_or(all.len(), |i| i + 1);
    let attractors = all.truncate(stop.max(cfg.oracle_speaker_count.unwrap_or(0)))?;
    let estimated_count = estimate_speaker_count(&attractors.existence[..stop], cfg.tau);
    let count = cfg.oracle_speaker_count.unwrap_or(estimated_count);
    let t = embeddings.n_frames();
    if count == 0 {
        let labels = LabelMatrix::new(Vec::new(), t, Vec::new(), embeddings.frame_period_s)?;
        return Ok(Diarization {
            embeddings,
            attractors,
            estimated_count,
            count,
            posteriors: None,
            labels,
            segments: Vec::new(),
        });
    }
    let y = posteriors(&attractors.truncate(count)?, &embeddings)?;
    let (labels, segments) = binarize(&y, cfg);
    Ok(Diarization { embeddings, attractors, estimated_count, count, posteriors: Some(y), labels, segments })
}

/// Principal-component projection of embeddings and attractors.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// Unit principal axes, by decreasing explained variance.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    pub embeddings: Vec<[f64; 2]>,
    pub attractors: Vec<[f64; 2]>,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in decreasing order and eigenvectors as rows.
pub fn symmetric_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let scale: f64 = m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off.sqrt() <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let vals = idx.iter().map(|&i| m[i][i]).collect();
    let vecs = idx
        .iter()
        .map(|&i| {
            let mut col: Vec<f64> = (0..n).map(|k| v[k][i]).collect();
            let big = col.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            if big < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            col
        })
        .collect();
    (vals, vecs)
}

/// Projects embedding rows onto their top two principal axes; attractors
/// use the same mean and axes.
pub fn project2d<T: Scalar>(e: &Tensor<T>, a: &Tensor<T>) -> Result<Projection> {
    let (t, d) = (e.rows(), e.cols());
    if t < 2 {
        return Err(Error::InputEmpty("projection needs at least two embeddings"));
    }
    if a.rows() > 0 && a.cols() != d {
        return Err(Error::Shape(format!("attractor width {} vs embedding width {d}", a.cols())));
    }
    let mean: Vec<f64> = (0..d).map(|j| (0..t).map(|i| e.get(i, j).as_f64()).sum::<f64>() / t as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..t {
        let r: Vec<f64> = (0..d).map(|j| e.get(i, j).as_f64() - mean[j]).collect();
        for p in 0..d {
            for q in p..d {
                cov[p][q] += r[p] * r[q];
            }
        }
    }
    for p in 0..d {
        for q in p..d {
            cov[p][q] /= (t - 1) as f64;
            cov[q][p] = cov[p][q];
        }
    }
    let (vals, vecs) = symmetric_eigen(&cov);
    let get = |k: usize| vecs.get(k).cloned().unwrap_or_else(|| vec![0.0; d]);
    let components = [get(0), get(1)];
    let explained_variance = [vals.first().copied().unwrap_or(0.0).max(0.0), vals.get(1).copied().unwrap_or(0.0).max(0.0)];
    let proj = |row: &[T]| -> [f64; 2] {
        let mut out = [0.0; 2];
        for (k, comp) in components.iter().enumerate() {
            out[k] = row.iter().zip(&mean).zip(comp).map(|((&x, &m), &c)| (x.as_f64() - m) * c).sum();
        }
        out
    };
    Ok(Projection {
        embeddings: (0..t).map(|i| proj(e.row(i))).collect(),
        attractors: (0..a.rows()).map(|i| proj(a.row(i))).collect(),
        mean,
        components,
        explained_variance,
    })
}

/// CSV with columns `x,y,kind,index`. Embedding rows whose frame is
/// inactive in `speech` are labelled `silence-frame`.
pub fn projection_csv(p: &Projection, speech: Option<&[bool]>) -> String {
    let mut s = String::from("x,y,kind,index\n");
    for (i, [x, y]) in p.embeddings.iter().enumerate() {
        let kind = match speech {
            Some(act) if !act.get(i).copied().unwrap_or(true) => "silence-frame",
            _ => "embedding",
        };
        let _ = writeln!(s, "{x:.6},{y:.6},{kind},{i}");
    }
    for (i, [x, y]) in p.attractors.iter().enumerate() {
        let _ = writeln!(s, "{x:.6},{y:.6},attractor,{i}");
    }
    s
}

/// Per-frame "any speaker active" flags.
pub fn speech_frames(labels: &LabelMatrix) -> Vec<bool> {
    (0..labels.n_frames()).map(|t| labels.row(t).contains(&1)).collect()
}
