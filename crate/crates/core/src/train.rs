//! Mini-batch training with permutation-invariant losses, checkpoints and
//! flexible-speaker finetuning.
//!
//! Recordings are cut into fixed-length chunks. Each step averages the
//! gradients of one batch of chunks, clips the global norm and applies
//! Adam. Chunk order and per-chunk shuffle seeds are pure functions of
//! `(seed, epoch, position)`, so a run resumed from any checkpoint follows
//! the same trajectory as an uninterrupted one. Per-chunk gradients may be
//! computed on several threads; they are always summed in chunk order.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::{clip_grad_norm, Adam, AdamConfig, Graph, TOY_WARMUP_STEPS};
use crate::error::{Error, Result};
use crate::mixsim::{LabelMatrix, Sample};
use crate::model::{Checkpoint, EdaOrder, EendEda, EncoderConfig};
use crate::objective::{graph_total_loss, LossReport, PitConfig, ALPHA_SIMULATED};
use crate::tensor::Tensor;

/// Attractor-encoder input order used during training or inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrderMode {
    Chronological,
    Shuffled,
}

impl OrderMode {
    pub fn with_seed(self, seed: u64) -> EdaOrder {
        match self {
            OrderMode::Chronological => EdaOrder::Chronological,
            OrderMode::Shuffled => EdaOrder::Shuffled(seed),
        }
    }
}

impl fmt::Display for OrderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderMode::Chronological => "chronological",
            OrderMode::Shuffled => "shuffled",
        })
    }
}

impl FromStr for OrderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chronological" => Ok(OrderMode::Chronological),
            "shuffled" => Ok(OrderMode::Shuffled),
            _ => Err(Error::ConfigInvalid(format!("order must be chronological or shuffled, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub chunk_len_frames: usize,
    pub alpha: f64,
    pub order_mode: OrderMode,
    pub seed: u64,
    pub warmup_steps: u64,
    pub base_lr: f64,
    /// Chunks with more active speakers keep only the most active ones.
    pub max_speakers: usize,
    pub clip_norm: f64,
    /// Worker threads for per-chunk gradients. Results do not depend on it.
    pub jobs: usize,
    pub finetune_from: Option<PathBuf>,
    pub pit: PitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            chunk_len_frames: 500,
            alpha: ALPHA_SIMULATED,
            order_mode: OrderMode::Shuffled,
            seed: 0,
            warmup_steps: TOY_WARMUP_STEPS,
            base_lr: 1.0,
            max_speakers: 8,
            clip_norm: 5.0,
            jobs: 1,
            finetune_from: None,
            pit: PitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.chunk_len_frames == 0 {
            return bad("chunk_len_frames must be at least 1");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be nonnegative");
        }
        if self.max_speakers == 0 {
            return bad("max_speakers must be at least 1");
        }
        if !(self.base_lr > 0.0) || !(self.clip_norm > 0.0) {
            return bad("base_lr and clip_norm must be positive");
        }
        Ok(())
    }

    pub fn adam(&self, d_model: usize) -> AdamConfig {
        AdamConfig { base_lr: self.base_lr, warmup_steps: self.warmup_steps, d_model, ..AdamConfig::default() }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    pub l_d: f64,
    pub l_a: f64,
    pub total: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint<f32>,
    pub metrics: Vec<MetricsRecord>,
    /// Path of the final checkpoint when an output directory was given.
    pub checkpoint_path: Option<PathBuf>,
}

/// A training example: a chunk of one recording.
#[derive(Debug, Clone)]
pub struct Chunk {
    pub features: Tensor<f32>,
    /// `T×S` zeros and ones.
    pub labels: Tensor<f32>,
}

/// Keeps the `cap` most active speakers (ties to the lower index), in
/// their original column order.
pub fn cap_speakers(labels: &LabelMatrix, cap: usize) -> LabelMatrix {
    let s = labels.n_speakers();
    if s <= cap {
        return labels.clone();
    }
    let mut idx: Vec<usize> = (0..s).collect();
    idx.sort_by_key(|&i| (std::cmp::Reverse(labels.speaker_frames(i)), i));
    let mut keep: Vec<usize> = idx[..cap].to_vec();
    keep.sort_unstable();
    let mut act = Vec::with_capacity(labels.n_frames() * cap);
    for t in 0..labels.n_frames() {
        act.extend(keep.iter().map(|&k| u8::from(labels.get(t, k))));
    }
    let ids = keep.iter().map(|&k| labels.speaker_ids[k].clone()).collect();
    LabelMatrix::new(act, labels.n_frames(), ids, labels.frame_period_s).expect("label shape")
}

/// Splits samples into consecutive chunks of at most `len` frames.
pub fn make_chunks(samples: &[Sample<f32>], len: usize, max_speakers: usize) -> Result<Vec<Chunk>> {
    let mut out = Vec::new();
    for s in samples {
        let t = s.features.n_frames();
        if s.labels.n_frames() != t {
            return Err(Error::Shape(format!("{}: {} feature frames vs {} label frames", s.id, t, s.labels.n_frames())));
        }
        let mut start = 0;
        while start < t {
            let n = len.min(t - start);
            let d = s.features.dim();
            let features = Tensor::from_rows(n, d, s.features.frames.data()[start * d..(start + n) * d].to_vec())?;
            let labels = cap_speakers(&s.labels.window(start, n), max_speakers).to_tensor();
            out.push(Chunk { features, labels });
            start += n;
        }
    }
    Ok(out)
}

fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64)));
    idx
}

fn chunk_order_seed(seed: u64, epoch: usize, chunk: usize) -> u64 {
    mix_seed(mix_seed(seed ^ 0x5555, epoch as u64), chunk as u64)
}

/// Loss report and parameter gradients of one chunk.
pub fn chunk_gradients(
    model: &EendEda<f32>,
    chunk: &Chunk,
    order: EdaOrder,
    alpha: f64,
    pit: &PitConfig,
) -> Result<(Vec<Tensor<f32>>, LossReport)> {
    let s = chunk.labels.cols();
    let mut g = Graph::new();
    let mv = model.vars(&mut g);
    let x = g.constant(chunk.features.clone());
    let emb = model.encode_graph(&mut g, &mv, x)?;
    let (a, z) = model.eda_graph(&mut g, &mv, emb, &order.indices(chunk.features.rows()), s + 1)?;
    let a_s = if s > 0 { g.slice_rows(a, 0, s)? } else { a };
    let logits = g.matmul_nt(emb, a_s)?;
    let (loss, report) = graph_total_loss(&mut g, logits, z, &chunk.labels, alpha, pit)?;
    if let Some(node) = g.first_non_finite() {
        return Err(Error::Divergence { step: 0, detail: format!("non-finite value at {node}") });
    }
    if !report.total.is_finite() {
        return Err(Error::Divergence { step: 0, detail: format!("loss is {}", report.total) });
    }
    let grads = g.backward(loss)?;
    let mut acc = model.params().zeros_like();
    grads.accumulate_params(&mut acc, 1.0);
    Ok((acc, report))
}

struct MetricsLog {
    file: Option<BufWriter<File>>,
}

impl MetricsLog {
    fn open(dir: Option<&Path>, append: bool) -> Result<Self> {
        let file = match dir {
            Some(d) => {
                let f = OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(append)
                    .truncate(!append)
                    .open(d.join("metrics.jsonl"))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        Ok(Self { file })
    }

    fn write(&mut self, rec: &MetricsRecord) -> Result<()> {
        if let Some(f) = &mut self.file {
            serde_json::to_writer(&mut *f, rec)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(f) = &mut self.file {
            f.flush()?;
        }
        Ok(())
    }
}

/// Steps per epoch for `n_chunks` chunks.
pub fn steps_per_epoch(n_chunks: usize, batch_size: usize) -> u64 {
    n_chunks.div_ceil(batch_size) as u64
}

/// Trains `start` on `chunks` until `cfg.epochs` epochs are complete,
/// continuing from the optimizer's step counter. With `out_dir`, writes
/// `metrics.jsonl`, `epochNNN.edat` after every epoch and `last.edat`.
pub fn train_chunks(
    chunks: &[Chunk],
    start: Checkpoint<f32>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if chunks.is_empty() {
        return Err(Error::InputEmpty("training corpus"));
    }
    let Checkpoint { mut model, optimizer } = start;
    let input_dim = model.config().input_dim;
    if let Some(bad) = chunks.iter().find(|c| c.features.cols() != input_dim) {
        return Err(Error::CheckpointIncompatible(format!(
            "model expects {input_dim}-dimensional features, corpus has {}",
            bad.features.cols()
        )));
    }
    let mut opt = optimizer.unwrap_or_else(|| Adam::new(cfg.adam(model.config().d_model), model.params()));
    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
    }
    let mut log = MetricsLog::open(out_dir, opt.step > 0)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs.max(1)).build().map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let spe = steps_per_epoch(chunks.len(), cfg.batch_size);
    let total_steps = spe * cfg.epochs as u64;
    let mut metrics = Vec::new();
    let mut order_cache: Option<(usize, Vec<usize>)> = None;
    let mut checkpoint_path = None;
    while opt.step < total_steps {
        let step = opt.step;
        let epoch = (step / spe) as usize;
        let b = (step % spe) as usize;
        if order_cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
            order_cache = Some((epoch, epoch_order(cfg.seed, epoch, chunks.len())));
        }
        let order = &order_cache.as_ref().expect("order").1;
        let batch: Vec<usize> = order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(order.len())].to_vec();
        let model_ref = &model;
        let results: Vec<Result<(Vec<Tensor<f32>>, LossReport)>> = pool.install(|| {
            batch
                .par_iter()
                .map(|&ci| {
                    let eo = cfg.order_mode.with_seed(chunk_order_seed(cfg.seed, epoch, ci));
                    chunk_gradients(model_ref, &chunks[ci], eo, cfg.alpha, &cfg.pit)
                })
                .collect()
        });
        let scale = 1.0 / batch.len() as f32;
        let mut grads = model.params().zeros_like();
        let (mut l_d, mut l_a, mut total) = (0.0, 0.0, 0.0);
        for r in results {
            let (g, rep) = r.map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence { step: step + 1, detail },
                other => other,
            })?;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                for (a, &v) in acc.data_mut().iter_mut().zip(gi.data()) {
                    *a += scale * v;
                }
            }
            l_d += rep.l_d;
            l_a += rep.l_a;
            total += rep.total;
        }
        let n = batch.len() as f64;
        let norm = clip_grad_norm(&mut grads, cfg.clip_norm as f32);
        if !norm.is_finite() {
            return Err(Error::Divergence { step: step + 1, detail: format!("gradient norm is {norm}") });
        }
        let lr = opt.step(model.params_mut(), &grads)?;
        if let Some((name, _)) = model.params().iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::Divergence { step: step + 1, detail: format!("parameter {name} became non-finite") });
        }
        let rec = MetricsRecord {
            step: opt.step,
            epoch: epoch + 1,
            l_d: l_d / n,
            l_a: l_a / n,
            total: total / n,
            lr,
            grad_norm: norm as f64,
        };
        log.write(&rec)?;
        metrics.push(rec);
        if opt.step % spe == 0 {
            log.flush()?;
            if let Some(d) = out_dir {
                let ck = Checkpoint { model: model.clone(), optimizer: Some(opt.clone()) };
                ck.save(&d.join(format!("epoch{:03}.edat", opt.step / spe)))?;
                let last = d.join("last.edat");
                ck.save(&last)?;
                checkpoint_path = Some(last);
            }
        }
    }
    log.flush()?;
    let checkpoint = Checkpoint { model, optimizer: Some(opt) };
    if let (Some(d), None) = (out_dir, &checkpoint_path) {
        let last = d.join("last.edat");
        checkpoint.save(&last)?;
        checkpoint_path = Some(last);
    }
    Ok(TrainOutcome { checkpoint, metrics, checkpoint_path })
}

/// Trains a fresh model (or resumes `out_dir/last.edat` when `resume`).
pub fn train(
    samples: &[Sample<f32>],
    model_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    resume: bool,
) -> Result<TrainOutcome> {
    if let Some(path) = &cfg.finetune_from {
        return finetune(path, samples, Some(model_cfg), cfg, out_dir);
    }
    let start = match out_dir.map(|d| d.join("last.edat")) {
        Some(last) if resume && last.exists() => {
            let ck = Checkpoint::<f32>::load(&last)?;
            if ck.model.config() != model_cfg {
                return Err(Error::CheckpointIncompatible("model configuration differs from the checkpoint".into()));
            }
            ck
        }
        _ => Checkpoint { model: EendEda::new(model_cfg.clone(), cfg.seed)?, optimizer: None },
    };
    let chunks = make_chunks(samples, cfg.chunk_len_frames, cfg.max_speakers)?;
    train_chunks(&chunks, start, cfg, out_dir)
}

/// Continues training from the checkpoint at `from` with a fresh
/// optimizer and schedule. When `expected` is given, the checkpoint's
/// model configuration must equal it. Zero epochs return the input
/// checkpoint unchanged.
pub fn finetune(
    from: &Path,
    samples: &[Sample<f32>],
    expected: Option<&EncoderConfig>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let ck = Checkpoint::<f32>::load(from)?;
    if let Some(e) = expected {
        if ck.model.config() != e {
            return Err(Error::CheckpointIncompatible(format!(
                "checkpoint model `{}` differs from configured `{}`",
                ck.model.config().to_text().trim().replace('\n', ","),
                e.to_text().trim().replace('\n', ",")
            )));
        }
    }
    if cfg.epochs == 0 {
        let mut checkpoint_path = None;
        if let Some(d) = out_dir {
            fs::create_dir_all(d)?;
            let last = d.join("last.edat");
            ck.save(&last)?;
            checkpoint_path = Some(last);
        }
        return Ok(TrainOutcome { checkpoint: ck, metrics: Vec::new(), checkpoint_path });
    }
    let chunks = make_chunks(samples, cfg.chunk_len_frames, cfg.max_speakers)?;
    let start = Checkpoint { model: ck.model, optimizer: None };
    train_chunks(&chunks, start, cfg, out_dir)
}

/// Reads a metrics log.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() }))
        .collect()
}
