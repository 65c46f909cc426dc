//! `eda-diar`: simulate, featurize, train, finetune, infer, score, viz.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eda_core::featfront::{featurize, FeatureSequence};
use eda_core::infer::{diarize, project2d, projection_csv, speech_frames};
use eda_core::mixsim::{load_corpus, make_corpus};
use eda_core::model::EendEda;
use eda_core::runconfig::{schema_help, Provenance, RunConfig};
use eda_core::score::{emit_rttm, parse_rttm, score, ScoreReport};
use eda_core::train::{finetune, read_metrics, train};
use eda_core::wav::read_wav;
use eda_core::{Error, Result};

const RUNDIR_ENV: &str = "EDA_DIAR_RUNDIR";

#[derive(Parser, Debug)]
#[command(name = "eda-diar", version, about = "Neural speaker diarization with encoder-decoder attractors", after_help = schema_help())]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override any config key, `KEY=VALUE`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run directory; defaults to `$EDA_DIAR_RUNDIR/<subcommand>` (root `runs`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct InferFlags {
    /// Existence threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Attractor encoder input order: chronological or shuffled.
    #[arg(long)]
    order: Option<String>,
    /// none, subsample:N or last:N.
    #[arg(long)]
    probe: Option<String>,
    /// Use this many speakers instead of the estimate.
    #[arg(long = "oracle-speakers")]
    oracle_speakers: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    alpha: Option<f64>,
    /// Attractor encoder input order: chronological or shuffled.
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a labelled corpus (features, RTTM, manifest).
    Simulate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        wav: bool,
    },
    /// Compute features for one WAV file.
    Featurize {
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a model on a corpus manifest.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Continue from `<run dir>/last.edat` when present.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Continue training a checkpoint on another corpus.
    Finetune {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Diarize feature files or a corpus manifest.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "features", required_unless_present = "features")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        features: Vec<PathBuf>,
        #[command(flatten)]
        flags: InferFlags,
    },
    /// Score a hypothesis RTTM against a reference RTTM.
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        collar: Option<f64>,
        #[arg(long)]
        jer: bool,
    },
    /// Export a 2-D projection of embeddings and attractors as CSV.
    Viz {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        flags: InferFlags,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Featurize { .. } => "featurize",
            Command::Train { .. } => "train",
            Command::Finetune { .. } => "finetune",
            Command::Infer { .. } => "infer",
            Command::Score { .. } => "score",
            Command::Viz { .. } => "viz",
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut rc = RunConfig::default();
    if let Some(p) = &cli.config {
        rc.merge_file(p)?;
    }
    let mut flag = |k: &str, v: String| rc.set(k, &v, Provenance::Flag);
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::ConfigInvalid(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        flag(k.trim(), v.to_string())?;
    }
    if let Some(s) = cli.seed {
        flag("seed", s.to_string())?;
    }
    if let Some(j) = cli.jobs {
        flag("jobs", j.to_string())?;
    }
    let infer_flags = |f: &InferFlags, flag: &mut dyn FnMut(&str, String) -> Result<()>| -> Result<()> {
        if let Some(t) = f.tau {
            flag("infer.tau", t.to_string())?;
        }
        if let Some(o) = &f.order {
            flag("infer.order", o.clone())?;
        }
        if let Some(p) = &f.probe {
            flag("infer.probe", p.clone())?;
        }
        if let Some(n) = f.oracle_speakers {
            flag("infer.oracle_speakers", n.to_string())?;
        }
        Ok(())
    };
    let train_flags = |f: &TrainFlags, flag: &mut dyn FnMut(&str, String) -> Result<()>| -> Result<()> {
        if let Some(a) = f.alpha {
            flag("train.alpha", a.to_string())?;
        }
        if let Some(o) = &f.order {
            flag("train.order", o.clone())?;
        }
        if let Some(e) = f.epochs {
            flag("train.epochs", e.to_string())?;
        }
        Ok(())
    };
    match &cli.command {
        Command::Simulate { n, wav } => {
            if let Some(n) = n {
                flag("sim.n_mixtures", n.to_string())?;
            }
            if *wav {
                flag("sim.write_wav", "true".into())?;
            }
        }
        Command::Train { flags, .. } | Command::Finetune { flags, .. } => train_flags(flags, &mut flag)?,
        Command::Infer { flags, .. } | Command::Viz { flags, .. } => infer_flags(flags, &mut flag)?,
        Command::Score { collar, jer, .. } => {
            if let Some(c) = collar {
                flag("score.collar_s", c.to_string())?;
            }
            if *jer {
                flag("score.jer", "true".into())?;
            }
        }
        Command::Featurize { .. } => {}
    }
    Ok(rc)
}

fn run_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(RUNDIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(cli.command.name())
    })
}

fn write_snapshot(dir: &Path, rc: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let args: Vec<String> = std::env::args().collect();
    let text = format!("# eda-diar {}\n{}", args[1..].join(" "), rc.snapshot());
    fs::write(dir.join("config.txt"), text)?;
    Ok(())
}

fn print_report(rep: &ScoreReport, dir: &Path) -> Result<()> {
    println!("{rep}");
    fs::write(dir.join("report.txt"), format!("{rep}\n"))?;
    fs::write(dir.join("score.csv"), format!("{}\n{}\n", ScoreReport::CSV_HEADER, rep.csv_row()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let rc = resolve_config(&cli)?;
    let dir = run_dir(&cli);
    write_snapshot(&dir, &rc)?;
    let fe = rc.frontend();
    match &cli.command {
        Command::Simulate { .. } => {
            let manifest = make_corpus(&rc.corpus(), &fe, &dir, rc.write_wav())?;
            println!("{}", manifest.display());
        }
        Command::Featurize { input } => {
            let wave = read_wav(input)?;
            if wave.sample_rate_hz != fe.sample_rate_hz {
                return Err(Error::ConfigInvalid(format!(
                    "{} is sampled at {} Hz, the front end expects {} Hz",
                    input.display(),
                    wave.sample_rate_hz,
                    fe.sample_rate_hz
                )));
            }
            let feats = featurize::<f32>(&wave, &fe)?;
            let out = dir.join("features.edat");
            feats.save(&out)?;
            println!("{} ({} frames x {})", out.display(), feats.n_frames(), feats.dim());
        }
        Command::Train { corpus, resume, .. } => {
            let samples = load_corpus::<f32>(corpus)?;
            let out = train(&samples, &rc.model(), &rc.train(), Some(&dir), *resume)?;
            summarize_training(&dir, out.checkpoint_path.as_deref())?;
        }
        Command::Finetune { from, corpus, .. } => {
            let samples = load_corpus::<f32>(corpus)?;
            let out = finetune(from, &samples, Some(&rc.model()), &rc.train(), Some(&dir))?;
            summarize_training(&dir, out.checkpoint_path.as_deref())?;
        }
        Command::Infer { model, corpus, features, .. } => {
            let model = EendEda::<f32>::load(model)?;
            let mut inputs: Vec<(String, FeatureSequence<f32>)> = Vec::new();
            if let Some(m) = corpus {
                inputs.extend(load_corpus::<f32>(m)?.into_iter().map(|s| (s.id, s.features)));
            }
            for p in features {
                let id = p.file_stem().map_or_else(|| "rec".to_string(), |s| s.to_string_lossy().into_owned());
                inputs.push((id, FeatureSequence::load(p)?));
            }
            let cfg = rc.infer();
            let mut segs = Vec::new();
            let mut counts = String::from("recording\testimated\tused\n");
            for (id, feats) in &inputs {
                let d = diarize(feats, &model, &cfg)?;
                counts.push_str(&format!("{id}\t{}\t{}\n", d.estimated_count, d.count));
                segs.extend(d.rttm(id));
            }
            let out = dir.join("hyp.rttm");
            fs::write(&out, emit_rttm(&segs))?;
            fs::write(dir.join("counts.tsv"), &counts)?;
            print!("{counts}");
            println!("{}", out.display());
        }
        Command::Score { reference, hyp, .. } => {
            let r = parse_rttm(&fs::read_to_string(reference)?)?;
            let h = parse_rttm(&fs::read_to_string(hyp)?)?;
            let rep = score(&r, &h, &rc.score(), rc.jer())?;
            print_report(&rep, &dir)?;
        }
        Command::Viz { model, features, .. } => {
            let model = EendEda::<f32>::load(model)?;
            let feats = FeatureSequence::<f32>::load(features)?;
            let d = diarize(&feats, &model, &rc.infer())?;
            let a = d.attractors.truncate(d.count)?;
            let proj = project2d(&d.embeddings.e, &a.attractors)?;
            let speech = speech_frames(&d.labels);
            let out = dir.join("projection.csv");
            fs::write(&out, projection_csv(&proj, (d.count > 0).then_some(speech.as_slice())))?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn summarize_training(dir: &Path, ckpt: Option<&Path>) -> Result<()> {
    let metrics = dir.join("metrics.jsonl");
    if metrics.exists() {
        if let Some(last) = read_metrics(&metrics)?.last() {
            println!("step {} epoch {} total {:.5} l_d {:.5} l_a {:.5}", last.step, last.epoch, last.total, last.l_d, last.l_a);
        }
    }
    if let Some(p) = ckpt {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
