use std::path::Path;

use ndarray::Array2;
use proptest::prelude::*;

use ttsfront::data::{hd_to_tsv, parse_hd, parse_pos, parse_tn, pos_to_jsonl, synth_corpus, tn_to_jsonl, SynthSpec};
use ttsfront::decoder::{beam_search, brute_force_decode, mask_logits, render, RuleLogits};
use ttsfront::nn::optim::StepDecay;
use ttsfront::rules::Ruleset;
use ttsfront::tokenizer::tokenize;

fn logits_for(n: usize, r: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-5.0f64..5.0, n * r).prop_map(move |v| Array2::from_shape_vec((n, r), v).unwrap())
}

fn text_and_logits() -> impl Strategy<Value = (String, Array2<f64>)> {
    let r = Ruleset::builtin().len();
    "(St\\.|Dr\\.|7/8|3:30|pm|\\$5\\.25|12|kg|the|Mary's|,|2nd|10%)( (St\\.|Dr\\.|7/8|3:30|pm|12|kg|the|,|1990)){0,4}"
        .prop_filter("short", |s| tokenize(s).len() <= 10)
        .prop_flat_map(move |s| {
            let n = tokenize(&s).len();
            (Just(s), logits_for(n, r))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beam_matches_exhaustive_search((text, logits) in text_and_logits(), width in 1usize..6) {
        let rules = Ruleset::builtin();
        let seq = tokenize(&text);
        let mask = rules.applicability_mask(&seq);
        let masked = mask_logits(&RuleLogits::new(logits), &mask).unwrap();
        let exact = brute_force_decode(&masked, &seq, &rules).unwrap();
        let beam = beam_search(&masked, &seq, &rules, width).unwrap();
        beam.validate(&seq, &rules).unwrap();
        // Any width keeps the best hypothesis per position, so it is exact.
        prop_assert!((beam.score - exact.score).abs() <= 1e-9);
        if beam.applications == exact.applications {
            prop_assert_eq!(render(&beam, &rules, &seq), render(&exact, &rules, &seq));
        }
    }

    #[test]
    fn masking_only_touches_inapplicable_entries((text, logits) in text_and_logits()) {
        let rules = Ruleset::builtin();
        let mask = rules.applicability_mask(&tokenize(&text));
        let masked = mask_logits(&RuleLogits::new(logits.clone()), &mask).unwrap();
        for ((i, j), &v) in masked.values.indexed_iter() {
            if mask[[i, j]] {
                prop_assert_eq!(v, logits[[i, j]]);
            } else {
                prop_assert_eq!(v, f64::NEG_INFINITY);
            }
        }
    }

    #[test]
    fn step_decay_is_piecewise_constant_and_non_increasing(a in 0usize..100_000, b in 0usize..100_000) {
        let s = StepDecay { base: 5e-4, factor: 0.2, every: 16_000 };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(s.lr(hi) <= s.lr(lo));
        if lo / 16_000 == hi / 16_000 {
            prop_assert_eq!(s.lr(lo), s.lr(hi));
        }
    }

    #[test]
    fn synthetic_records_round_trip_through_their_formats(seed in 0u64..1000) {
        let rules = Ruleset::builtin();
        let spec = SynthSpec { tn: 5, pos: 5, hd_homographs: 2, hd_per_label: 2 };
        let c = synth_corpus(&spec, seed, &rules).unwrap();
        let p = Path::new("mem");
        prop_assert_eq!(parse_tn(&tn_to_jsonl(&c.tn), p, &rules).unwrap(), c.tn);
        prop_assert_eq!(parse_pos(&pos_to_jsonl(&c.pos), p).unwrap(), c.pos);
        prop_assert_eq!(parse_hd(&hd_to_tsv(&c.hd).unwrap(), p).unwrap().examples, c.hd);
    }
}
