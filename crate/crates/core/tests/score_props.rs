mod common;

use common::{random_rttm, relabel, rng};
use eda_core::score::{der, emit_rttm, jer, parse_rttm, scored_regions, ScoreConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;

const REF: [&str; 3] = ["A", "B", "C"];
const HYP: [&str; 4] = ["w", "x", "y", "z"];

/// Union of `[start, end)` intervals as sorted disjoint pairs.
fn union(mut iv: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    iv.sort_unstable();
    let mut out: Vec<(i64, i64)> = Vec::new();
    for (a, b) in iv {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

proptest! {
    #[test]
    fn der_ignores_hypothesis_names(seed in any::<u64>(), collar in prop_oneof![Just(0.0), Just(0.25)]) {
        let mut r = rng(seed);
        let reference = random_rttm(&mut r, 2, &REF, 8, 20_000);
        let hyp = random_rttm(&mut r, 2, &HYP, 10, 20_000);
        let cfg = ScoreConfig { collar_s: collar, score_overlap: true };
        let (Ok(a), Ok(b)) = (der(&reference, &hyp, &cfg), der(&reference, &relabel(&mut r, &hyp), &cfg)) else {
            return Ok(());
        };
        prop_assert_eq!((a.miss_ms, a.falarm_ms, a.confusion_ms, a.scored_speech_ms), (b.miss_ms, b.falarm_ms, b.confusion_ms, b.scored_speech_ms));
        prop_assert_eq!(jer(&reference, &hyp).unwrap(), jer(&reference, &relabel(&mut r, &hyp)).unwrap());
    }

    #[test]
    fn der_ignores_input_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let reference = random_rttm(&mut r, 3, &REF, 9, 15_000);
        let hyp = random_rttm(&mut r, 3, &HYP, 9, 15_000);
        let (mut ref2, mut hyp2) = (reference.clone(), hyp.clone());
        ref2.shuffle(&mut r);
        hyp2.shuffle(&mut r);
        let cfg = ScoreConfig::default();
        match (der(&reference, &hyp, &cfg), der(&ref2, &hyp2, &cfg)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn components_are_consistent(seed in any::<u64>()) {
        let mut r = rng(seed);
        let reference = random_rttm(&mut r, 1, &REF, 6, 20_000);
        let hyp = random_rttm(&mut r, 1, &HYP, 6, 20_000);
        if let Ok(rep) = der(&reference, &hyp, &ScoreConfig::default()) {
            prop_assert!(rep.miss_ms >= 0 && rep.falarm_ms >= 0 && rep.confusion_ms >= 0);
            let sum = (rep.miss_ms + rep.falarm_ms + rep.confusion_ms) as f64;
            prop_assert!((rep.der - sum / rep.scored_speech_ms as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn wider_collar_scores_a_subset(seed in any::<u64>(), c1 in 0u32..50, extra in 1u32..50) {
        let mut r = rng(seed);
        let reference = random_rttm(&mut r, 1, &REF, 6, 20_000);
        let hyp = random_rttm(&mut r, 1, &HYP, 6, 20_000);
        let cfg = |c: u32| ScoreConfig { collar_s: f64::from(c) / 100.0, score_overlap: true };
        let spans = |c: u32| union(scored_regions(&reference, &hyp, &cfg(c)).iter().map(|g| (g.start_ms, g.end_ms)).collect());
        let (narrow, wide) = (spans(c1), spans(c1 + extra));
        for (a, b) in &wide {
            prop_assert!(narrow.iter().any(|(x, y)| x <= a && b <= y), "[{a}, {b}) not inside the narrower timeline");
        }
        let speech = |c: u32| der(&reference, &hyp, &cfg(c)).map_or(0, |rep| rep.scored_speech_ms);
        prop_assert!(speech(c1 + extra) <= speech(c1));
    }

    #[test]
    fn canonical_files_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let segs = random_rttm(&mut r, 2, &REF, 12, 100_000);
        let text = emit_rttm(&segs);
        prop_assert_eq!(emit_rttm(&parse_rttm(&text).unwrap()), text.clone());
        prop_assert_eq!(parse_rttm(&text).unwrap(), segs);
    }
}
