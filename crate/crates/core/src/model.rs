//! Self-attention embedding stack plus encoder-decoder attractors.
//!
//! The encoder is a stack of pre-norm Transformer blocks over the input
//! projection, followed by a final layer norm whose output is the
//! embedding sequence `E` (`T×D`). The attractor module runs an LSTM over
//! the rows of `E` (in chronological or shuffled order), then a second
//! LSTM fed with zero vectors, starting from the first one's final state.
//! Each decoder output is an attractor `a_s`; `p_s = σ(w·a_s + b)` is its
//! existence probability.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::container::Container;
use crate::diff::nn::{linear, lstm_cell_projected, LstmVars};
use crate::diff::{Adam, AdamConfig, Graph, ParamStore, Var};
use crate::error::{shape_err, Error, Result};
use crate::featfront::FeatureSequence;
use crate::scalar::{c, Scalar};
use crate::tensor::Tensor;

/// Attractor cap during inference.
pub const DEFAULT_MAX_ATTRACTORS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub n_blocks: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub input_dim: usize,
    /// Adds sinusoidal position codes after the input projection. Off by
    /// default, which makes the stack equivariant to frame permutations.
    pub positional_encoding: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl EncoderConfig {
    /// Four blocks, 256-dimensional embeddings.
    pub fn full() -> Self {
        Self { n_blocks: 4, d_model: 256, n_heads: 4, d_ff: 1024, input_dim: 345, positional_encoding: false }
    }

    /// Two blocks, 64-dimensional embeddings.
    pub fn toy() -> Self {
        Self { n_blocks: 2, d_model: 64, n_heads: 4, d_ff: 256, input_dim: 345, positional_encoding: false }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.n_blocks == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.input_dim == 0 {
            return bad("model dimensions must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        Ok(())
    }

    /// Canonical `key=value` text, also the input of [`Self::hash`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_blocks", self.n_blocks.to_string()),
            ("d_model", self.d_model.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("input_dim", self.input_dim.to_string()),
            ("positional_encoding", self.positional_encoding.to_string()),
        ]
    }

    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.to_text().as_bytes());
        d.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn from_meta<T: Scalar>(c: &Container<T>) -> Option<Self> {
        Some(Self {
            n_blocks: c.meta_parse("n_blocks")?,
            d_model: c.meta_parse("d_model")?,
            n_heads: c.meta_parse("n_heads")?,
            d_ff: c.meta_parse("d_ff")?,
            input_dim: c.meta_parse("input_dim")?,
            positional_encoding: c.meta_parse("positional_encoding")?,
        })
    }
}

/// Row order in which the attractor encoder reads the embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdaOrder {
    Chronological,
    Shuffled(u64),
}

impl EdaOrder {
    /// The row order for a sequence of `t` frames.
    pub fn indices(&self, t: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..t).collect();
        if let EdaOrder::Shuffled(seed) = *self {
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        idx
    }
}

/// Frame embeddings `E`, `T×D`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence<T> {
    pub e: Tensor<T>,
    pub frame_period_s: f64,
}

impl<T: Scalar> EmbeddingSequence<T> {
    pub fn n_frames(&self) -> usize {
        self.e.rows()
    }

    pub fn dim(&self) -> usize {
        self.e.cols()
    }
}

/// Decoded attractors with their existence probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractorSet<T> {
    /// `n×D`
    pub attractors: Tensor<T>,
    pub existence_logits: Vec<f64>,
    /// Strictly inside `(0, 1)`.
    pub existence: Vec<f64>,
    pub order: EdaOrder,
}

impl<T: Scalar> AttractorSet<T> {
    pub fn len(&self) -> usize {
        self.attractors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The first `n` attractors.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            return shape_err(format!("cannot keep {n} of {} attractors", self.len()));
        }
        let d = self.attractors.cols();
        Ok(Self {
            attractors: Tensor::from_rows(n, d, self.attractors.data()[..n * d].to_vec())?,
            existence_logits: self.existence_logits[..n].to_vec(),
            existence: self.existence[..n].to_vec(),
            order: self.order,
        })
    }
}

/// Logistic function evaluated in `f64` and kept strictly inside `(0, 1)`.
pub fn open_sigmoid(x: f64) -> f64 {
    crate::diff::sigmoid(x).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone, Copy)]
struct BlockIds {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    w_ih: usize,
    w_hh: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    in_w: usize,
    in_b: usize,
    blocks: Vec<BlockIds>,
    out_g: usize,
    out_b: usize,
    eda_enc: LstmIds,
    eda_dec: LstmIds,
    exist_w: usize,
    exist_b: usize,
}

/// Parameter handles on one graph.
#[derive(Debug, Clone)]
pub struct ModelVars {
    vars: Vec<Var>,
}

impl ModelVars {
    pub fn get(&self, id: usize) -> Var {
        self.vars[id]
    }
}

/// The full diarization network.
#[derive(Debug, Clone, PartialEq)]
pub struct EendEda<T> {
    config: EncoderConfig,
    params: ParamStore<T>,
}

impl<T: Scalar> EendEda<T> {
    /// Fresh model with uniform `±1/√fan_in` weights, zero biases and unit
    /// layer-norm gains.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (d, f) = (config.d_model, config.d_ff);
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let zeros = |n: usize| Tensor::<T>::zeros(&[1, n]);
        let ones = |n: usize| Tensor::<T>::full(&[1, n], T::one());
        p.add_uniform("enc.in.w", &[config.input_dim, d], fan(config.input_dim), &mut rng);
        p.add("enc.in.b", zeros(d));
        for i in 0..config.n_blocks {
            p.add(format!("enc.{i}.ln1.g"), ones(d));
            p.add(format!("enc.{i}.ln1.b"), zeros(d));
            for w in ["q", "k", "v", "o"] {
                p.add_uniform(format!("enc.{i}.att.w{w}"), &[d, d], fan(d), &mut rng);
                p.add(format!("enc.{i}.att.b{w}"), zeros(d));
            }
            p.add(format!("enc.{i}.ln2.g"), ones(d));
            p.add(format!("enc.{i}.ln2.b"), zeros(d));
            p.add_uniform(format!("enc.{i}.ff.w1"), &[d, f], fan(d), &mut rng);
            p.add(format!("enc.{i}.ff.b1"), zeros(f));
            p.add_uniform(format!("enc.{i}.ff.w2"), &[f, d], fan(f), &mut rng);
            p.add(format!("enc.{i}.ff.b2"), zeros(d));
        }
        p.add("enc.out.g", ones(d));
        p.add("enc.out.b", zeros(d));
        for part in ["enc", "dec"] {
            p.add_uniform(format!("eda.{part}.w_ih"), &[d, 4 * d], fan(d), &mut rng);
            p.add_uniform(format!("eda.{part}.w_hh"), &[d, 4 * d], fan(d), &mut rng);
            p.add_uniform(format!("eda.{part}.bias"), &[1, 4 * d], fan(d), &mut rng);
        }
        p.add_uniform("eda.exist.w", &[d, 1], fan(d), &mut rng);
        p.add("eda.exist.b", Tensor::zeros(&[1, 1]));
        Ok(Self { config, params: p })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> EendEda<U> {
        EendEda { config: self.config.clone(), params: self.params.cast() }
    }

    fn layout(&self) -> Layout {
        let id = |n: String| self.params.id(&n).unwrap_or_else(|| panic!("missing parameter {n}"));
        let blocks = (0..self.config.n_blocks)
            .map(|i| {
                let b = |s: &str| id(format!("enc.{i}.{s}"));
                BlockIds {
                    ln1_g: b("ln1.g"),
                    ln1_b: b("ln1.b"),
                    wq: b("att.wq"),
                    bq: b("att.bq"),
                    wk: b("att.wk"),
                    bk: b("att.bk"),
                    wv: b("att.wv"),
                    bv: b("att.bv"),
                    wo: b("att.wo"),
                    bo: b("att.bo"),
                    ln2_g: b("ln2.g"),
                    ln2_b: b("ln2.b"),
                    w1: b("ff.w1"),
                    b1: b("ff.b1"),
                    w2: b("ff.w2"),
                    b2: b("ff.b2"),
                }
            })
            .collect();
        let lstm = |part: &str| LstmIds {
            w_ih: id(format!("eda.{part}.w_ih")),
            w_hh: id(format!("eda.{part}.w_hh")),
            bias: id(format!("eda.{part}.bias")),
        };
        Layout {
            in_w: id("enc.in.w".into()),
            in_b: id("enc.in.b".into()),
            blocks,
            out_g: id("enc.out.g".into()),
            out_b: id("enc.out.b".into()),
            eda_enc: lstm("enc"),
            eda_dec: lstm("dec"),
            exist_w: id("eda.exist.w".into()),
            exist_b: id("eda.exist.b".into()),
        }
    }

    /// Places every parameter on `g` as a trainable leaf.
    pub fn vars(&self, g: &mut Graph<T>) -> ModelVars {
        ModelVars { vars: (0..self.params.len()).map(|i| g.param(i, self.params.get(i).clone())).collect() }
    }

    /// Embeddings `T×D` of input `x` (`T×input_dim`).
    pub fn encode_graph(&self, g: &mut Graph<T>, mv: &ModelVars, x: Var) -> Result<Var> {
        let cfg = &self.config;
        if g.value(x).cols() != cfg.input_dim {
            return shape_err(format!("input width {} vs {}", g.value(x).cols(), cfg.input_dim));
        }
        let l = self.layout();
        let v = |i: usize| mv.get(i);
        let mut h = linear(g, x, v(l.in_w), v(l.in_b))?;
        if cfg.positional_encoding {
            let pe = g.constant(positional_table(g.value(h).rows(), cfg.d_model));
            h = g.add(h, pe)?;
        }
        let (d, nh) = (cfg.d_model, cfg.n_heads);
        let dh = d / nh;
        let scale = c::<T>(1.0 / (dh as f64).sqrt());
        for b in &l.blocks {
            let z = g.layer_norm(h, v(b.ln1_g), v(b.ln1_b))?;
            let q = linear(g, z, v(b.wq), v(b.bq))?;
            let k = linear(g, z, v(b.wk), v(b.bk))?;
            let val = linear(g, z, v(b.wv), v(b.bv))?;
            let mut heads = Vec::with_capacity(nh);
            for hd in 0..nh {
                let qh = g.slice_cols(q, hd * dh, dh)?;
                let kh = g.slice_cols(k, hd * dh, dh)?;
                let vh = g.slice_cols(val, hd * dh, dh)?;
                let s = g.matmul_nt(qh, kh)?;
                let s = g.scale(s, scale);
                let a = g.softmax_rows(s);
                heads.push(g.matmul(a, vh)?);
            }
            let cat = if nh == 1 { heads[0] } else { g.concat_cols(&heads)? };
            let att = linear(g, cat, v(b.wo), v(b.bo))?;
            h = g.add(h, att)?;
            let z = g.layer_norm(h, v(b.ln2_g), v(b.ln2_b))?;
            let f = linear(g, z, v(b.w1), v(b.b1))?;
            let f = g.relu(f);
            let f = linear(g, f, v(b.w2), v(b.b2))?;
            h = g.add(h, f)?;
        }
        g.layer_norm(h, v(l.out_g), v(l.out_b))
    }

    /// Attractors (`n×D`) and existence logits (`n×1`) from embeddings
    /// `emb`, read in the row order `order`.
    pub fn eda_graph(
        &self,
        g: &mut Graph<T>,
        mv: &ModelVars,
        emb: Var,
        order: &[usize],
        n_attractors: usize,
    ) -> Result<(Var, Var)> {
        let (t, d) = (g.value(emb).rows(), g.value(emb).cols());
        if t == 0 || order.is_empty() {
            return Err(Error::InputEmpty("embedding sequence"));
        }
        if n_attractors == 0 {
            return Err(Error::ConfigInvalid("at least one attractor must be decoded".into()));
        }
        if d != self.config.d_model {
            return shape_err(format!("embedding width {d} vs {}", self.config.d_model));
        }
        let l = self.layout();
        let lv = |ids: LstmIds| LstmVars { w_ih: mv.get(ids.w_ih), w_hh: mv.get(ids.w_hh), bias: mv.get(ids.bias) };
        let (enc, dec) = (lv(l.eda_enc), lv(l.eda_dec));
        let is_identity = order.len() == t && order.iter().enumerate().all(|(i, &o)| i == o);
        let seq = if is_identity { emb } else { g.gather_rows(emb, order)? };
        let proj = g.matmul(seq, enc.w_ih)?;
        let mut h = g.constant(Tensor::zeros(&[1, d]));
        let mut cst = g.constant(Tensor::zeros(&[1, d]));
        for i in 0..order.len() {
            let xi = g.slice_rows(proj, i, 1)?;
            (h, cst) = lstm_cell_projected(g, xi, h, cst, &enc)?;
        }
        // The decoder input is always zero, so its input projection is too.
        let zero = g.constant(Tensor::zeros(&[1, 4 * d]));
        let mut outs = Vec::with_capacity(n_attractors);
        for _ in 0..n_attractors {
            (h, cst) = lstm_cell_projected(g, zero, h, cst, &dec)?;
            outs.push(h);
        }
        let a = if outs.len() == 1 { outs[0] } else { g.concat_rows(&outs)? };
        let z = g.matmul(a, mv.get(l.exist_w))?;
        let z = g.add_row(z, mv.get(l.exist_b))?;
        Ok((a, z))
    }

    pub fn encode(&self, x: &FeatureSequence<T>) -> Result<EmbeddingSequence<T>> {
        let e = self.encode_tensor(&x.frames)?;
        Ok(EmbeddingSequence { e, frame_period_s: x.frame_period_s })
    }

    pub fn encode_tensor(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rows() == 0 {
            return Err(Error::InputEmpty("feature sequence"));
        }
        let mut g = Graph::new();
        let mv = self.vars(&mut g);
        let xv = g.constant(x.clone());
        let e = self.encode_graph(&mut g, &mv, xv)?;
        Ok(g.value(e).clone())
    }

    /// Decodes `max_attractors` attractors from `e`.
    pub fn eda_forward(&self, e: &EmbeddingSequence<T>, order: EdaOrder, max_attractors: usize) -> Result<AttractorSet<T>> {
        self.eda_forward_rows(&e.e, &order.indices(e.n_frames()), order, max_attractors)
    }

    /// As [`Self::eda_forward`] with an explicit row order.
    pub fn eda_forward_rows(
        &self,
        e: &Tensor<T>,
        rows: &[usize],
        order: EdaOrder,
        max_attractors: usize,
    ) -> Result<AttractorSet<T>> {
        let mut g = Graph::new();
        let mv = self.vars(&mut g);
        let ev = g.constant(e.clone());
        let (a, z) = self.eda_graph(&mut g, &mv, ev, rows, max_attractors)?;
        let existence_logits: Vec<f64> = g.value(z).data().iter().map(|v| v.as_f64()).collect();
        Ok(AttractorSet {
            attractors: g.value(a).clone(),
            existence: existence_logits.iter().map(|&v| open_sigmoid(v)).collect(),
            existence_logits,
            order,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint { model: self.clone(), optimizer: None }.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Checkpoint::load(path)?.model)
    }
}

/// Sinusoidal position codes, `t×d`.
pub fn positional_table<T: Scalar>(t: usize, d: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(&[t, d]);
    for pos in 0..t {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 / rate;
            out.set(pos, i, c(if i % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    out
}

/// A model plus optional optimizer state, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: EendEda<T>,
    pub optimizer: Option<Adam<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn step(&self) -> u64 {
        self.optimizer.as_ref().map_or(0, |o| o.step)
    }

    pub fn to_container(&self) -> Container<T> {
        let cfg = &self.model.config;
        let mut c = Container::new().with_meta("kind", "eend-eda").with_meta("config_hash", cfg.hash());
        for (k, v) in cfg.entries() {
            c = c.with_meta(k, v);
        }
        c = c.with_meta("step", self.step());
        for (name, t) in self.model.params.iter() {
            c.push(format!("param/{name}"), t.clone());
        }
        if let Some(opt) = &self.optimizer {
            let a = &opt.config;
            c = c
                .with_meta("adam.base_lr", a.base_lr)
                .with_meta("adam.warmup_steps", a.warmup_steps)
                .with_meta("adam.d_model", a.d_model)
                .with_meta("adam.beta1", a.beta1)
                .with_meta("adam.beta2", a.beta2)
                .with_meta("adam.eps", a.eps);
            for (i, (name, _)) in self.model.params.iter().enumerate() {
                c.push(format!("adam.m/{name}"), opt.m[i].clone());
                c.push(format!("adam.v/{name}"), opt.v[i].clone());
            }
        }
        c
    }

    pub fn from_container(c: &Container<T>) -> std::result::Result<Self, String> {
        if c.meta.get("kind").map(String::as_str) != Some("eend-eda") {
            return Err("not a model checkpoint".into());
        }
        let cfg = EncoderConfig::from_meta(c).ok_or("incomplete model configuration")?;
        if c.meta.get("config_hash") != Some(&cfg.hash()) {
            return Err("configuration hash mismatch".into());
        }
        let mut model = EendEda::<T>::new(cfg, 0).map_err(|e| e.to_string())?;
        let mut loaded = ParamStore::new();
        for (name, t) in model.params.iter() {
            let v = c.tensor(&format!("param/{name}")).ok_or_else(|| format!("missing parameter {name}"))?;
            if v.dims() != t.dims() {
                return Err(format!("parameter {name} has shape {:?}, expected {:?}", v.dims(), t.dims()));
            }
            loaded.add(name, v.clone());
        }
        model.params.load_from(&loaded).map_err(|e| e.to_string())?;
        let optimizer = if c.meta.contains_key("adam.base_lr") {
            let get = |k: &str| c.meta_parse::<f64>(k).ok_or_else(|| format!("missing {k}"));
            let config = AdamConfig {
                base_lr: get("adam.base_lr")?,
                warmup_steps: c.meta_parse("adam.warmup_steps").ok_or("missing adam.warmup_steps")?,
                d_model: c.meta_parse("adam.d_model").ok_or("missing adam.d_model")?,
                beta1: get("adam.beta1")?,
                beta2: get("adam.beta2")?,
                eps: get("adam.eps")?,
            };
            let mut opt = Adam::new(config, &model.params);
            opt.step = c.meta_parse("step").ok_or("missing step")?;
            for (i, (name, _)) in model.params.iter().enumerate() {
                opt.m[i] = c.tensor(&format!("adam.m/{name}")).ok_or_else(|| format!("missing adam.m/{name}"))?.clone();
                opt.v[i] = c.tensor(&format!("adam.v/{name}")).ok_or_else(|| format!("missing adam.v/{name}"))?.clone();
            }
            Some(opt)
        } else {
            None
        };
        Ok(Self { model, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::<T>::load(path)?;
        Self::from_container(&c).map_err(|msg| Error::Container { path: path.to_path_buf(), msg })
    }
}
