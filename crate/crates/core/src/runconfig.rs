//! Plain-text `key = value` run configuration with a fixed schema.
//!
//! Values are layered: schema defaults, then a config file, then command
//! line flags. Every value remembers which layer set it. Unknown keys and
//! values that do not parse as the key's kind are rejected. A snapshot is
//! itself a valid config file.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::featfront::FrontendConfig;
use crate::infer::{InferConfig, Probe};
use crate::mixsim::{CorpusSpec, MixtureSpec};
use crate::model::EncoderConfig;
use crate::objective::{PitConfig, PitSolver, DEFAULT_PIT_CAP};
use crate::score::ScoreConfig;
use crate::train::{OrderMode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Default,
    File,
    Flag,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Default => "default",
            Provenance::File => "file",
            Provenance::Flag => "flag",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    U32,
    Usize,
    U64,
    F64,
    Bool,
    /// A number or `none`.
    OptF64,
    /// An integer or `none`.
    OptUsize,
    /// Comma-separated numbers.
    F64List,
    Order,
    Probe,
    Solver,
}

impl Kind {
    fn check(self, v: &str) -> std::result::Result<(), String> {
        let num = |v: &str| v.parse::<f64>().ok().filter(|x| x.is_finite()).map(|_| ()).ok_or("expected a number");
        let r = match self {
            Kind::U32 => v.parse::<u32>().map(|_| ()).map_err(|_| "expected a nonnegative integer"),
            Kind::Usize => v.parse::<usize>().map(|_| ()).map_err(|_| "expected a nonnegative integer"),
            Kind::U64 => v.parse::<u64>().map(|_| ()).map_err(|_| "expected a nonnegative integer"),
            Kind::F64 => num(v),
            Kind::Bool => v.parse::<bool>().map(|_| ()).map_err(|_| "expected true or false"),
            Kind::OptF64 if v == "none" => Ok(()),
            Kind::OptF64 => num(v),
            Kind::OptUsize if v == "none" => Ok(()),
            Kind::OptUsize => v.parse::<usize>().map(|_| ()).map_err(|_| "expected an integer or none"),
            Kind::F64List => v.split(',').try_for_each(|x| num(x.trim())),
            Kind::Order => v.parse::<OrderMode>().map(|_| ()).map_err(|_| "expected chronological or shuffled"),
            Kind::Probe => v.parse::<Probe>().map(|_| ()).map_err(|_| "expected none, subsample:N or last:N"),
            Kind::Solver => match v {
                "exhaustive" | "hungarian" => Ok(()),
                _ => Err("expected exhaustive or hungarian"),
            },
        };
        r.map_err(String::from)
    }
}

/// One schema entry: key, kind, default, description.
pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub help: &'static str,
}

const fn k(key: &'static str, kind: Kind, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, kind, default, help }
}

pub const SCHEMA: &[KeySpec] = &[
    k("seed", Kind::U64, "0", "seed for simulation, initialization, data order and shuffles"),
    k("jobs", Kind::Usize, "1", "worker threads"),
    k("fe.sample_rate_hz", Kind::U32, "8000", "audio sample rate"),
    k("fe.win_length", Kind::Usize, "200", "analysis window in samples"),
    k("fe.hop_length", Kind::Usize, "80", "hop in samples"),
    k("fe.n_fft", Kind::Usize, "256", "FFT size"),
    k("fe.n_mels", Kind::Usize, "23", "mel bands"),
    k("fe.fmin_hz", Kind::F64, "0", "lowest mel edge"),
    k("fe.fmax_hz", Kind::OptF64, "none", "highest mel edge (none = Nyquist)"),
    k("fe.floor", Kind::F64, "1e-10", "power floor before the log"),
    k("fe.context", Kind::Usize, "7", "spliced frames on each side"),
    k("fe.subsample", Kind::Usize, "10", "frame subsampling factor"),
    k("sim.n_mixtures", Kind::Usize, "100", "mixtures to simulate"),
    k("sim.min_speakers", Kind::Usize, "1", "fewest speakers per mixture"),
    k("sim.max_speakers", Kind::Usize, "3", "most speakers per mixture"),
    k("sim.duration_s", Kind::F64, "60", "mixture length"),
    k("sim.silence_gap_mean_s", Kind::F64, "1", "mean pause between turns"),
    k("sim.utterance_median_s", Kind::F64, "2.5", "median turn length"),
    k("sim.noise_snr_db", Kind::OptF64, "20", "background noise SNR (none = no noise)"),
    k("sim.overlap_targets", Kind::F64List, "0,0.341,0.342,0.315", "overlap ratio for 1,2,3,4+ speakers"),
    k("sim.write_wav", Kind::Bool, "false", "also write waveforms"),
    k("model.n_blocks", Kind::Usize, "2", "self-attention blocks"),
    k("model.d_model", Kind::Usize, "64", "embedding width"),
    k("model.n_heads", Kind::Usize, "4", "attention heads"),
    k("model.d_ff", Kind::Usize, "256", "feed-forward width"),
    k("model.input_dim", Kind::Usize, "345", "feature width"),
    k("model.positional_encoding", Kind::Bool, "false", "add sinusoidal position codes"),
    k("train.epochs", Kind::Usize, "10", "training epochs"),
    k("train.batch_size", Kind::Usize, "8", "chunks per step"),
    k("train.chunk_len_frames", Kind::Usize, "500", "chunk length in frames"),
    k("train.alpha", Kind::F64, "1.0", "existence loss weight"),
    k("train.order", Kind::Order, "shuffled", "attractor encoder input order"),
    k("train.warmup_steps", Kind::U64, "4000", "learning-rate warm-up steps"),
    k("train.base_lr", Kind::F64, "1.0", "learning-rate multiplier"),
    k("train.max_speakers", Kind::Usize, "8", "speakers kept per chunk"),
    k("train.clip_norm", Kind::F64, "5.0", "gradient norm clip"),
    k("train.pit_solver", Kind::Solver, "exhaustive", "permutation search"),
    k("infer.tau", Kind::F64, "0.5", "existence threshold"),
    k("infer.activity_threshold", Kind::F64, "0.5", "speech activity threshold"),
    k("infer.median_filter_frames", Kind::Usize, "11", "median filter length (odd)"),
    k("infer.order", Kind::Order, "shuffled", "attractor encoder input order"),
    k("infer.oracle_speakers", Kind::OptUsize, "none", "fixed speaker count"),
    k("infer.probe", Kind::Probe, "none", "attractor input probe"),
    k("infer.max_attractors", Kind::Usize, "20", "attractor cap"),
    k("score.collar_s", Kind::F64, "0.25", "no-score collar around reference boundaries"),
    k("score.score_overlap", Kind::Bool, "true", "score overlapped regions"),
    k("score.jer", Kind::Bool, "false", "also compute JER"),
];

fn spec_of(key: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|s| s.key == key)
}

/// Resolved configuration with per-key provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, (String, Provenance)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: SCHEMA.iter().map(|s| (s.key, (s.default.to_string(), Provenance::Default))).collect() }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str, from: Provenance) -> Result<()> {
        let spec = spec_of(key).ok_or_else(|| Error::ConfigInvalid(format!("unknown key `{key}`")))?;
        let value = value.trim();
        spec.kind.check(value).map_err(|m| Error::ConfigInvalid(format!("{key} = {value}: {m}")))?;
        self.values.insert(spec.key, (value.to_string(), from));
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, from: Provenance) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected key = value".into() })?;
            self.set(k.trim(), v, from).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        self.merge_text(&fs::read_to_string(path)?, Provenance::File)
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values.get(key).unwrap_or_else(|| panic!("key `{key}` not in schema")).0
    }

    pub fn provenance(&self, key: &str) -> Provenance {
        self.values.get(key).unwrap_or_else(|| panic!("key `{key}` not in schema")).1
    }

    fn parse<V: std::str::FromStr>(&self, key: &str) -> V {
        self.get(key).parse().unwrap_or_else(|_| panic!("value of `{key}` was validated"))
    }

    fn opt<V: std::str::FromStr>(&self, key: &str) -> Option<V> {
        match self.get(key) {
            "none" => None,
            _ => Some(self.parse(key)),
        }
    }

    pub fn seed(&self) -> u64 {
        self.parse("seed")
    }

    pub fn jobs(&self) -> usize {
        self.parse("jobs")
    }

    pub fn frontend(&self) -> FrontendConfig {
        FrontendConfig {
            sample_rate_hz: self.parse("fe.sample_rate_hz"),
            win_length: self.parse("fe.win_length"),
            hop_length: self.parse("fe.hop_length"),
            n_fft: self.parse("fe.n_fft"),
            n_mels: self.parse("fe.n_mels"),
            fmin_hz: self.parse("fe.fmin_hz"),
            fmax_hz: self.opt("fe.fmax_hz"),
            floor: self.parse("fe.floor"),
            context: self.parse("fe.context"),
            subsample: self.parse("fe.subsample"),
        }
    }

    pub fn corpus(&self) -> CorpusSpec {
        CorpusSpec {
            n_mixtures: self.parse("sim.n_mixtures"),
            min_speakers: self.parse("sim.min_speakers"),
            max_speakers: self.parse("sim.max_speakers"),
            template: MixtureSpec {
                duration_s: self.parse("sim.duration_s"),
                silence_gap_mean_s: self.parse("sim.silence_gap_mean_s"),
                utterance_median_s: self.parse("sim.utterance_median_s"),
                noise_snr_db: self.opt("sim.noise_snr_db"),
                ..MixtureSpec::default()
            },
            overlap_targets: self.get("sim.overlap_targets").split(',').map(|x| x.trim().parse().expect("validated")).collect(),
            seed: self.seed(),
        }
    }

    pub fn write_wav(&self) -> bool {
        self.parse("sim.write_wav")
    }

    pub fn model(&self) -> EncoderConfig {
        EncoderConfig {
            n_blocks: self.parse("model.n_blocks"),
            d_model: self.parse("model.d_model"),
            n_heads: self.parse("model.n_heads"),
            d_ff: self.parse("model.d_ff"),
            input_dim: self.parse("model.input_dim"),
            positional_encoding: self.parse("model.positional_encoding"),
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.parse("train.epochs"),
            batch_size: self.parse("train.batch_size"),
            chunk_len_frames: self.parse("train.chunk_len_frames"),
            alpha: self.parse("train.alpha"),
            order_mode: self.parse("train.order"),
            seed: self.seed(),
            warmup_steps: self.parse("train.warmup_steps"),
            base_lr: self.parse("train.base_lr"),
            max_speakers: self.parse("train.max_speakers"),
            clip_norm: self.parse("train.clip_norm"),
            jobs: self.jobs(),
            finetune_from: None,
            pit: PitConfig {
                solver: match self.get("train.pit_solver") {
                    "hungarian" => PitSolver::Hungarian,
                    _ => PitSolver::Exhaustive,
                },
                exhaustive_cap: DEFAULT_PIT_CAP,
            },
        }
    }

    pub fn infer(&self) -> InferConfig {
        InferConfig {
            tau: self.parse("infer.tau"),
            activity_threshold: self.parse("infer.activity_threshold"),
            median_filter_frames: self.parse("infer.median_filter_frames"),
            order_mode: self.parse("infer.order"),
            seed: self.seed(),
            oracle_speaker_count: self.opt("infer.oracle_speakers"),
            probe: self.parse("infer.probe"),
            max_attractors: self.parse("infer.max_attractors"),
        }
    }

    pub fn score(&self) -> ScoreConfig {
        ScoreConfig { collar_s: self.parse("score.collar_s"), score_overlap: self.parse("score.score_overlap") }
    }

    pub fn jer(&self) -> bool {
        self.parse("score.jer")
    }

    /// Every key in schema order with its provenance as a trailing comment.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        for spec in SCHEMA {
            let (v, p) = &self.values[spec.key];
            let _ = writeln!(s, "{} = {v}  # {p}", spec.key);
        }
        s
    }
}

/// Schema listing for help output.
pub fn schema_help() -> String {
    let mut s = String::from("Config keys (key = value, one per line; `#` comments):\n");
    for spec in SCHEMA {
        let _ = writeln!(s, "  {:<28} {:<22} {}", spec.key, format!("[{}]", spec.default), spec.help);
    }
    s
}
