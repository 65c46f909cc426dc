//! RTTM interchange and diarization scoring (DER with collar, JER).
//!
//! All time arithmetic is done on integer milliseconds. DER follows the
//! md-eval conventions: an optimal one-to-one speaker mapping, a no-score
//! zone of `±collar` around every reference boundary, and overlapped
//! speech scored with per-speaker counting.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::assign::max_weight_matching;
use crate::error::{Error, Result};

/// Speaker counts up to this size are mapped by exhaustive search.
pub const EXHAUSTIVE_MAPPING_CAP: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RttmSegment {
    pub recording_id: String,
    pub onset_ms: i64,
    pub duration_ms: i64,
    pub speaker_id: String,
}

impl Ord for RttmSegment {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.recording_id, self.onset_ms, &self.speaker_id, self.duration_ms).cmp(&(
            &other.recording_id,
            other.onset_ms,
            &other.speaker_id,
            other.duration_ms,
        ))
    }
}

impl PartialOrd for RttmSegment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl RttmSegment {
    /// Builds a segment from seconds, rounded to the 10 ms grid RTTM files
    /// are written on. Returns `None` when the rounded duration is empty.
    pub fn from_seconds(recording_id: &str, onset_s: f64, duration_s: f64, speaker_id: &str) -> Option<Self> {
        let on = (onset_s * 100.0).round() as i64 * 10;
        let off = ((onset_s + duration_s) * 100.0).round() as i64 * 10;
        (off > on && on >= 0).then(|| Self {
            recording_id: recording_id.to_string(),
            onset_ms: on,
            duration_ms: off - on,
            speaker_id: speaker_id.to_string(),
        })
    }

    pub fn onset_s(&self) -> f64 {
        self.onset_ms as f64 / 1000.0
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ms as f64 / 1000.0
    }

    pub fn end_ms(&self) -> i64 {
        self.onset_ms + self.duration_ms
    }
}

/// Parses a decimal seconds string into integer milliseconds, rounding
/// half away from zero past the third decimal.
fn parse_ms(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if (int.is_empty() && frac.is_empty())
        || !int.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let whole: i64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let mut digits = frac.bytes().map(|b| (b - b'0') as i64);
    let mut ms = 0;
    for _ in 0..3 {
        ms = ms * 10 + digits.next().unwrap_or(0);
    }
    if digits.next().is_some_and(|d| d >= 5) {
        ms += 1;
    }
    let v = whole.checked_mul(1000)?.checked_add(ms)?;
    Some(if neg { -v } else { v })
}

fn fmt_seconds(ms: i64) -> String {
    let cs = (ms + 5).div_euclid(10);
    format!("{}.{:02}", cs.div_euclid(100), cs.rem_euclid(100))
}

/// Parses `SPEAKER <rec> <chan> <onset> <dur> <NA> <NA> <spk> <NA> <NA>`
/// lines. Blank lines and `#` comments are skipped. Output is sorted.
pub fn parse_rttm(text: &str) -> Result<Vec<RttmSegment>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 8 {
            return Err(err("expected at least 8 fields"));
        }
        if f[0] != "SPEAKER" {
            return Err(err("record type must be SPEAKER"));
        }
        let onset = parse_ms(f[3]).ok_or_else(|| err("bad onset"))?;
        let dur = parse_ms(f[4]).ok_or_else(|| err("bad duration"))?;
        if onset < 0 {
            return Err(err("negative onset"));
        }
        if dur <= 0 {
            return Err(err("duration must be positive"));
        }
        out.push(RttmSegment {
            recording_id: f[1].to_string(),
            onset_ms: onset,
            duration_ms: dur,
            speaker_id: f[7].to_string(),
        });
    }
    out.sort();
    Ok(out)
}

pub fn emit_rttm(segments: &[RttmSegment]) -> String {
    let mut sorted = segments.to_vec();
    sorted.sort();
    let mut s = String::new();
    for seg in &sorted {
        s.push_str(&format!(
            "SPEAKER {} 1 {} {} <NA> <NA> {} <NA> <NA>\n",
            seg.recording_id,
            fmt_seconds(seg.onset_ms),
            fmt_seconds(seg.duration_ms),
            seg.speaker_id
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreConfig {
    pub collar_s: f64,
    /// When false, regions with two or more reference speakers are not scored.
    pub score_overlap: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { collar_s: 0.25, score_overlap: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub miss_ms: i64,
    pub falarm_ms: i64,
    pub confusion_ms: i64,
    pub scored_speech_ms: i64,
    pub der: f64,
    pub jer: Option<f64>,
    /// `(recording, reference speaker, hypothesis speaker)`.
    pub mapping: Vec<(String, String, String)>,
}

impl ScoreReport {
    pub fn miss_s(&self) -> f64 {
        self.miss_ms as f64 / 1000.0
    }

    pub fn falarm_s(&self) -> f64 {
        self.falarm_ms as f64 / 1000.0
    }

    pub fn confusion_s(&self) -> f64 {
        self.confusion_ms as f64 / 1000.0
    }

    pub fn scored_speech_s(&self) -> f64 {
        self.scored_speech_ms as f64 / 1000.0
    }

    pub const CSV_HEADER: &'static str = "scored_speech_s,miss_s,falarm_s,confusion_s,der,jer";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.3},{:.3},{:.3},{:.3},{:.6},{}",
            self.scored_speech_s(),
            self.miss_s(),
            self.falarm_s(),
            self.confusion_s(),
            self.der,
            self.jer.map(|j| format!("{j:.6}")).unwrap_or_default()
        )
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SCORED SPEECH = {:.2} s", self.scored_speech_s())?;
        writeln!(f, "MISSED SPEECH = {:.2} s ({:.2}%)", self.miss_s(), pct(self.miss_ms, self.scored_speech_ms))?;
        writeln!(f, "FALARM SPEECH = {:.2} s ({:.2}%)", self.falarm_s(), pct(self.falarm_ms, self.scored_speech_ms))?;
        writeln!(
            f,
            "SPEAKER ERROR = {:.2} s ({:.2}%)",
            self.confusion_s(),
            pct(self.confusion_ms, self.scored_speech_ms)
        )?;
        write!(f, "DER = {:.2}%", 100.0 * self.der)?;
        if let Some(j) = self.jer {
            write!(f, "\nJER = {:.2}%", 100.0 * j)?;
        }
        Ok(())
    }
}

fn pct(a: i64, b: i64) -> f64 {
    if b == 0 {
        0.0
    } else {
        100.0 * a as f64 / b as f64
    }
}

type Intervals = Vec<(i64, i64)>;

/// Per-speaker merged intervals of one recording.
fn speaker_intervals<'a>(segs: impl Iterator<Item = &'a RttmSegment>) -> BTreeMap<String, Intervals> {
    let mut m: BTreeMap<String, Intervals> = BTreeMap::new();
    for s in segs {
        m.entry(s.speaker_id.clone()).or_default().push((s.onset_ms, s.end_ms()));
    }
    for iv in m.values_mut() {
        *iv = merge(std::mem::take(iv));
    }
    m
}

fn merge(mut iv: Intervals) -> Intervals {
    iv.sort();
    let mut out: Intervals = Vec::new();
    for (a, b) in iv {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn contains(iv: &Intervals, t: i64) -> bool {
    let i = iv.partition_point(|&(a, _)| a <= t);
    i > 0 && t < iv[i - 1].1
}

fn total(iv: &Intervals) -> i64 {
    iv.iter().map(|(a, b)| b - a).sum()
}

fn intersection(a: &Intervals, b: &Intervals) -> i64 {
    let (mut i, mut j, mut s) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            s += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    s
}

/// A homogeneous scored region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub start_ms: i64,
    pub end_ms: i64,
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
}

struct Recording {
    ref_names: Vec<String>,
    hyp_names: Vec<String>,
    regions: Vec<Region>,
}

fn collar_ms(cfg: &ScoreConfig) -> i64 {
    (cfg.collar_s.max(0.0) * 1000.0).round() as i64
}

fn build_recording(refs: &[&RttmSegment], hyps: &[&RttmSegment], cfg: &ScoreConfig) -> Recording {
    let r = speaker_intervals(refs.iter().copied());
    let h = speaker_intervals(hyps.iter().copied());
    let collar = collar_ms(cfg);
    let mut noscore: Intervals = Vec::new();
    if collar > 0 {
        for iv in r.values() {
            for &(a, b) in iv {
                noscore.push((a - collar, a + collar));
                noscore.push((b - collar, b + collar));
            }
        }
    }
    let noscore = merge(noscore);
    let mut cuts = BTreeSet::new();
    for iv in r.values().chain(h.values()).chain(std::iter::once(&noscore)) {
        for &(a, b) in iv {
            cuts.insert(a);
            cuts.insert(b);
        }
    }
    let cuts: Vec<i64> = cuts.into_iter().collect();
    let rv: Vec<&Intervals> = r.values().collect();
    let hv: Vec<&Intervals> = h.values().collect();
    let mut regions = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if contains(&noscore, a) {
            continue;
        }
        let reference: Vec<usize> = (0..rv.len()).filter(|&i| contains(rv[i], a)).collect();
        if !cfg.score_overlap && reference.len() >= 2 {
            continue;
        }
        let hypothesis: Vec<usize> = (0..hv.len()).filter(|&i| contains(hv[i], a)).collect();
        if reference.is_empty() && hypothesis.is_empty() {
            continue;
        }
        regions.push(Region { start_ms: a, end_ms: b, reference, hypothesis });
    }
    Recording { ref_names: r.into_keys().collect(), hyp_names: h.into_keys().collect(), regions }
}

fn group<'a>(segs: &'a [RttmSegment]) -> BTreeMap<&'a str, Vec<&'a RttmSegment>> {
    let mut m: BTreeMap<&str, Vec<&RttmSegment>> = BTreeMap::new();
    for s in segs {
        m.entry(s.recording_id.as_str()).or_default().push(s);
    }
    m
}

fn recordings<'a>(reference: &'a [RttmSegment], hypothesis: &'a [RttmSegment]) -> Vec<(&'a str, Vec<&'a RttmSegment>, Vec<&'a RttmSegment>)> {
    let (mut r, mut h) = (group(reference), group(hypothesis));
    let ids: BTreeSet<&str> = r.keys().chain(h.keys()).copied().collect();
    ids.into_iter()
        .map(|id| (id, r.remove(id).unwrap_or_default(), h.remove(id).unwrap_or_default()))
        .collect()
}

/// Scored regions of a single recording (all segments are assumed to
/// belong to it).
pub fn scored_regions(reference: &[RttmSegment], hypothesis: &[RttmSegment], cfg: &ScoreConfig) -> Vec<Region> {
    let r: Vec<&RttmSegment> = reference.iter().collect();
    let h: Vec<&RttmSegment> = hypothesis.iter().collect();
    build_recording(&r, &h, cfg).regions
}

/// Diarization error rate over all recordings.
pub fn der(reference: &[RttmSegment], hypothesis: &[RttmSegment], cfg: &ScoreConfig) -> Result<ScoreReport> {
    let (mut miss, mut fa, mut conf, mut scored) = (0i64, 0i64, 0i64, 0i64);
    let mut mapping = Vec::new();
    for (id, r, h) in recordings(reference, hypothesis) {
        let rec = build_recording(&r, &h, cfg);
        let mut co = vec![vec![0.0f64; rec.hyp_names.len()]; rec.ref_names.len()];
        for reg in &rec.regions {
            let d = (reg.end_ms - reg.start_ms) as f64;
            for &i in &reg.reference {
                for &j in &reg.hypothesis {
                    co[i][j] += d;
                }
            }
        }
        let mut map = vec![None; rec.ref_names.len()];
        for (i, j) in max_weight_matching(&co, EXHAUSTIVE_MAPPING_CAP) {
            if co[i][j] > 0.0 {
                map[i] = Some(j);
                mapping.push((id.to_string(), rec.ref_names[i].clone(), rec.hyp_names[j].clone()));
            }
        }
        for reg in &rec.regions {
            let d = reg.end_ms - reg.start_ms;
            let (nr, nh) = (reg.reference.len() as i64, reg.hypothesis.len() as i64);
            let correct =
                reg.reference.iter().filter(|&&i| map[i].is_some_and(|j| reg.hypothesis.contains(&j))).count() as i64;
            miss += d * (nr - nh).max(0);
            fa += d * (nh - nr).max(0);
            conf += d * (nr.min(nh) - correct);
            scored += d * nr;
        }
    }
    if scored == 0 {
        return Err(Error::UndefinedDer);
    }
    Ok(ScoreReport {
        miss_ms: miss,
        falarm_ms: fa,
        confusion_ms: conf,
        scored_speech_ms: scored,
        der: (miss + fa + conf) as f64 / scored as f64,
        jer: None,
        mapping,
    })
}

/// Jaccard error rate: per reference speaker, one minus the Jaccard index
/// of speaking time against its mapped hypothesis speaker (1 when
/// unmapped), averaged over all reference speakers. The mapping maximizes
/// the summed Jaccard index per recording. No collar is applied.
pub fn jer(reference: &[RttmSegment], hypothesis: &[RttmSegment]) -> Result<f64> {
    let mut errors = Vec::new();
    for (_, r, h) in recordings(reference, hypothesis) {
        let rs = speaker_intervals(r.into_iter());
        let hs = speaker_intervals(h.into_iter());
        if rs.is_empty() {
            continue;
        }
        let rv: Vec<&Intervals> = rs.values().collect();
        let hv: Vec<&Intervals> = hs.values().collect();
        let jac: Vec<Vec<f64>> = rv
            .iter()
            .map(|a| {
                hv.iter()
                    .map(|b| {
                        let inter = intersection(a, b);
                        let union = total(a) + total(b) - inter;
                        if union == 0 {
                            0.0
                        } else {
                            inter as f64 / union as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let mut best = vec![0.0; rv.len()];
        for (i, j) in max_weight_matching(&jac, EXHAUSTIVE_MAPPING_CAP) {
            best[i] = jac[i][j];
        }
        errors.extend(best.into_iter().map(|b| 1.0 - b));
    }
    if errors.is_empty() {
        return Err(Error::UndefinedDer);
    }
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// DER plus, when `with_jer`, JER.
pub fn score(reference: &[RttmSegment], hypothesis: &[RttmSegment], cfg: &ScoreConfig, with_jer: bool) -> Result<ScoreReport> {
    let mut rep = der(reference, hypothesis, cfg)?;
    if with_jer {
        rep.jer = Some(jer(reference, hypothesis)?);
    }
    Ok(rep)
}
