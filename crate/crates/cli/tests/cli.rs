use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use eda_core::runconfig::SCHEMA;

fn eda(args: &[&str], rundir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eda-diar")).args(args).env("EDA_DIAR_RUNDIR", rundir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const RTTM: &str = "SPEAKER rec 1 0.00 4.00 <NA> <NA> A <NA> <NA>\n\
                    SPEAKER rec 1 3.50 2.50 <NA> <NA> B <NA> <NA>\n";

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn scoring_a_file_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("r.rttm");
    fs::write(&r, RTTM).unwrap();
    let o = eda(&["score", "--ref", p(&r), "--hyp", p(&r), "--jer"], dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("DER = 0.00%"), "{}", stdout(&o));
    assert!(stdout(&o).contains("JER = 0.00%"));
    // Without --out the run directory sits under EDA_DIAR_RUNDIR.
    let run = dir.path().join("score");
    for f in ["config.txt", "report.txt", "score.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
}

#[test]
fn undefined_der_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (r, h) = (dir.path().join("r.rttm"), dir.path().join("h.rttm"));
    fs::write(&r, "").unwrap();
    fs::write(&h, RTTM).unwrap();
    let o = eda(&["score", "--ref", p(&r), "--hyp", p(&h)], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(eda(&["score", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(eda(&["nonsense"], dir.path()).status.code(), Some(2));
    // Values are checked against the schema at run time.
    let o = eda(&["simulate", "--set", "sim.no_such_key=1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = eda(&["simulate", "--set", "sim.n_mixtures=abc"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_lists_every_schema_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = eda(&["--help"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    for spec in SCHEMA {
        assert!(text.contains(spec.key), "missing {}", spec.key);
    }
}

#[test]
fn snapshot_reproduces_a_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = eda(&["simulate", "--n", "3", "--seed", "5", "--set", "sim.duration_s=6", "--out", p(&a)], dir.path());
    assert!(o.status.success(), "{o:?}");
    let snapshot = a.join("config.txt");
    let text = fs::read_to_string(&snapshot).unwrap();
    assert!(text.contains("sim.n_mixtures = 3"), "{text}");
    let b = dir.path().join("b");
    let o = eda(&["simulate", "--config", p(&snapshot), "--out", p(&b)], dir.path());
    assert!(o.status.success(), "{o:?}");
    let manifest = fs::read(a.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest, fs::read(b.join("manifest.jsonl")).unwrap());
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name != "config.txt" {
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
        }
    }
}

#[test]
fn pipeline_with_oracle_speaker_count() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let small = ["--set", "model.d_model=16", "--set", "model.n_heads=2", "--set", "model.d_ff=32", "--set", "model.n_blocks=1"];
    let o = eda(&["simulate", "--n", "4", "--set", "sim.duration_s=8", "--out", p(&sim)], dir.path());
    assert!(o.status.success(), "{o:?}");
    let manifest = sim.join("manifest.jsonl");
    let tr = dir.path().join("train");
    let mut args = vec!["train", "--corpus", p(&manifest), "--epochs", "1", "--out", p(&tr)];
    args.extend(small);
    let o = eda(&args, dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(tr.join("metrics.jsonl").exists() && tr.join("last.edat").exists());

    let inf = dir.path().join("infer");
    let last = tr.join("last.edat");
    let o = eda(&["infer", "--model", p(&last), "--corpus", p(&manifest), "--oracle-speakers", "2", "--out", p(&inf)], dir.path());
    assert!(o.status.success(), "{o:?}");
    let counts = fs::read_to_string(inf.join("counts.tsv")).unwrap();
    let rows: Vec<&str> = counts.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|l| l.ends_with("\t2")), "{counts}");
    let hyp = eda_core::score::parse_rttm(&fs::read_to_string(inf.join("hyp.rttm")).unwrap()).unwrap();
    let mut speakers: Vec<(&str, &str)> = hyp.iter().map(|s| (s.recording_id.as_str(), s.speaker_id.as_str())).collect();
    speakers.sort_unstable();
    speakers.dedup();
    for rec in rows.iter().map(|l| l.split('\t').next().unwrap()) {
        assert!(speakers.iter().filter(|(r, _)| *r == rec).count() <= 2);
    }
    assert!(fs::read_to_string(inf.join("config.txt")).unwrap().contains("infer.oracle_speakers = 2"));

    let ft = dir.path().join("ft");
    let mut args = vec!["finetune", "--from", p(&last), "--corpus", p(&manifest), "--epochs", "1", "--alpha", "0.01", "--out", p(&ft)];
    args.extend(small);
    let o = eda(&args, dir.path());
    assert!(o.status.success(), "{o:?}");

    let feat = sim.join(format!("{}.edat", rows[0].split('\t').next().unwrap()));
    let viz = dir.path().join("viz");
    let o = eda(&["viz", "--model", p(&last), "--features", p(&feat), "--oracle-speakers", "2", "--out", p(&viz)], dir.path());
    assert!(o.status.success(), "{o:?}");
    let csv = fs::read_to_string(viz.join("projection.csv")).unwrap();
    assert!(csv.starts_with("x,y,kind,index\n"));
    assert_eq!(csv.lines().filter(|l| l.contains(",attractor,")).count(), 2);
}

#[test]
fn featurize_a_wav_file() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = eda(&["simulate", "--n", "1", "--wav", "--set", "sim.duration_s=3", "--out", p(&sim)], dir.path());
    assert!(o.status.success(), "{o:?}");
    let wav = fs::read_dir(&sim).unwrap().map(|e| e.unwrap().path()).find(|q| q.extension().is_some_and(|x| x == "wav")).unwrap();
    let o = eda(&["featurize", "--input", p(&wav)], dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("x 345"), "{}", stdout(&o));
    assert!(dir.path().join("featurize").join("features.edat").exists());
}
