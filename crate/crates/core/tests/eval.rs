mod common;

use common::oracles;
use isochrony::eval::{
    corpus_bleu, overlap_summary, speech_overlap, speech_overlap_with, wrong_pause_count, OverlapAveraging,
    SegmentTiming,
};
use proptest::prelude::*;

const WORDS: &[&str] = &["a", "b", "c", "d", "The", "the", "x"];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 0..9).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn bleu_matches_oracle(pairs in prop::collection::vec((sentence(), sentence()), 1..8)) {
        let hyps: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
        let refs: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
        let got = corpus_bleu(&hyps, &refs).unwrap();
        let want = oracles::bleu(&hyps, &refs);
        prop_assert!((got - want).abs() <= 1e-6, "{} vs {}", got, want);
    }

    #[test]
    fn bleu_identity_is_100(s in prop::collection::vec(sentence(), 1..6)) {
        let s: Vec<String> = s.into_iter().map(|x| format!("{x} w x y z")).collect();
        prop_assert!((corpus_bleu(&s, &s).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn overlap_matches_oracle(
        sents in prop::collection::vec(prop::collection::vec((1i64..200, 0i64..300), 1..4), 1..6),
        drop in prop::collection::vec(0usize..2, 6)
    ) {
        let reference: Vec<Vec<i64>> = sents.iter().map(|s| s.iter().map(|p| p.0).collect()).collect();
        let mut hypothesis: Vec<Vec<i64>> = sents.iter().map(|s| s.iter().map(|p| p.1).collect()).collect();
        for (h, &d) in hypothesis.iter_mut().zip(&drop) {
            if h.len() > 1 {
                h.truncate(h.len() - d);
            }
        }
        let t = SegmentTiming { reference: reference.clone(), hypothesis: hypothesis.clone() };
        let s = overlap_summary(&t).unwrap();
        prop_assert!((s.overlap - oracles::overlap(&reference, &hypothesis)).abs() < 1e-12);
        prop_assert!(s.clamped >= s.overlap - 1e-12 && s.clamped <= 1.0);
        prop_assert_eq!(s.sentences.len(), reference.len());
    }

    #[test]
    fn overlap_of_identity_is_one(r in prop::collection::vec(prop::collection::vec(1i64..500, 1..5), 1..6)) {
        let t = SegmentTiming { reference: r.clone(), hypothesis: r };
        prop_assert_eq!(speech_overlap(&t).unwrap(), 1.0);
        prop_assert_eq!(speech_overlap_with(&t, OverlapAveraging::PerSentence).unwrap(), 1.0);
    }
}

#[test]
fn single_segment_cases() {
    let t = |r: i64, h: i64| SegmentTiming {
        reference: vec![vec![r]],
        hypothesis: vec![vec![h]],
    };
    assert_eq!(speech_overlap(&t(100, 80)).unwrap(), 0.8);
    assert_eq!(speech_overlap(&t(100, 150)).unwrap(), 0.5);
    assert_eq!(speech_overlap(&t(100, 250)).unwrap(), -0.5);
    assert_eq!(overlap_summary(&t(100, 250)).unwrap().clamped, 0.0);
    assert!(speech_overlap(&t(0, 3)).is_err());
}

#[test]
fn global_and_per_sentence_means_differ() {
    let t = SegmentTiming {
        reference: vec![vec![100], vec![100, 100, 100]],
        hypothesis: vec![vec![50], vec![100, 100, 100]],
    };
    assert!((speech_overlap(&t).unwrap() - 3.5 / 4.0).abs() < 1e-12);
    assert!((speech_overlap_with(&t, OverlapAveraging::PerSentence).unwrap() - 0.75).abs() < 1e-12);
}

#[test]
fn wrong_pauses_count_sentences() {
    assert_eq!(wrong_pause_count(&[1, 0, 2], &[1, 1, 0]).unwrap(), 2);
    assert!(wrong_pause_count(&[1], &[]).is_err());
}

#[test]
fn bleu_edge_cases() {
    assert_eq!(corpus_bleu(&[""], &["a b c"]).unwrap(), 0.0);
    assert!(corpus_bleu::<&str, &str>(&["a"], &[]).is_err());
    let short = corpus_bleu(&["the cat"], &["the cat sat on the mat"]).unwrap();
    assert!((short - oracles::bleu(&["the cat"], &["the cat sat on the mat"])).abs() < 1e-9);
}
