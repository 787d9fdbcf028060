//! Rule-logit masking, beam search over rule-application covers, and
//! rendering of the chosen cover to normalized text.
//!
//! An application of rule `r` starting at token `i` is scored by the
//! log-probability in row `i` only; rows under the tail of a multi-token
//! span do not contribute. The search state is just the next uncovered
//! position, so keeping the best hypotheses per position is admissible.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{RuleApplication, Ruleset, Verbalizer};
use crate::tokenizer::TokenSequence;

pub const DEFAULT_BEAM_WIDTH: usize = 8;
pub const BRUTE_FORCE_MAX_TOKENS: usize = 12;

/// Sentinel for masked-out logits.
pub const MASKED: f64 = f64::NEG_INFINITY;

/// Per-token scores over the rule inventory (`n x R`).
#[derive(Debug, Clone, PartialEq)]
pub struct RuleLogits {
    pub values: Array2<f64>,
}

impl RuleLogits {
    pub fn new(values: Array2<f64>) -> RuleLogits {
        RuleLogits { values }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_rules(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationPlan {
    pub applications: Vec<RuleApplication>,
    pub score: f64,
}

impl NormalizationPlan {
    pub fn empty() -> NormalizationPlan {
        NormalizationPlan {
            applications: Vec::new(),
            score: 0.0,
        }
    }

    pub fn rule_ids(&self) -> Vec<usize> {
        self.applications.iter().map(|a| a.rule_id).collect()
    }

    /// `(start, rule_id)` pairs.
    pub fn starts_and_rules(&self) -> Vec<(usize, usize)> {
        self.applications.iter().map(|a| (a.start, a.rule_id)).collect()
    }

    /// Builds a plan from explicit `(start, rule_id)` pairs, checking that
    /// every rule applies and that the spans tile the sequence exactly. The
    /// score is left at zero.
    pub fn from_rules(
        seq: &TokenSequence,
        rules: &Ruleset,
        pairs: &[(usize, usize)],
    ) -> Result<NormalizationPlan> {
        let mut next = 0usize;
        let mut applications = Vec::with_capacity(pairs.len());
        for &(start, rule_id) in pairs {
            if start != next {
                return Err(Error::Data(format!(
                    "rule applications do not tile the sequence: expected start {next}, found {start}"
                )));
            }
            let app = rules
                .apply(rule_id, seq, start)
                .map_err(|e| Error::Data(e.to_string()))?;
            next = start + app.span;
            applications.push(app);
        }
        if next != seq.len() {
            return Err(Error::Data(format!(
                "rule applications cover {next} of {} tokens",
                seq.len()
            )));
        }
        Ok(NormalizationPlan {
            applications,
            score: 0.0,
        })
    }

    /// Checks exact tiling of `[0, n)` and rule applicability.
    pub fn validate(&self, seq: &TokenSequence, rules: &Ruleset) -> Result<()> {
        let mut next = 0;
        for app in &self.applications {
            if app.start != next {
                return Err(Error::Contract(format!(
                    "application at {} does not continue cover at {next}",
                    app.start
                )));
            }
            if rules.can_parse(app.rule_id, seq, app.start) != Some(app.span) {
                return Err(Error::Contract(format!(
                    "rule {} does not parse span {} at {}",
                    app.rule_id, app.span, app.start
                )));
            }
            next += app.span;
        }
        if next != seq.len() {
            return Err(Error::Contract(format!("plan covers {next} of {} tokens", seq.len())));
        }
        Ok(())
    }
}

fn check_shape(rows: usize, cols: usize, seq: &TokenSequence, rules: &Ruleset) -> Result<()> {
    if rows != seq.len() || cols != rules.len() {
        return Err(Error::Shape(format!(
            "logits are {rows}x{cols}, expected {}x{}",
            seq.len(),
            rules.len()
        )));
    }
    Ok(())
}

/// Sets masked-out entries to [`MASKED`]. Every row must keep at least one
/// entry; an all-false row means the mask and the ruleset disagree.
pub fn mask_logits(logits: &RuleLogits, mask: &Array2<bool>) -> Result<RuleLogits> {
    if logits.values.dim() != mask.dim() {
        return Err(Error::Shape(format!(
            "logits {:?} vs mask {:?}",
            logits.values.dim(),
            mask.dim()
        )));
    }
    for (i, row) in mask.axis_iter(Axis(0)).enumerate() {
        if !row.iter().any(|&m| m) {
            return Err(Error::Contract(format!("mask row {i} has no applicable rule")));
        }
    }
    let mut out = logits.values.clone();
    out.zip_mut_with(mask, |v, &m| {
        if !m {
            *v = MASKED;
        }
    });
    Ok(RuleLogits::new(out))
}

fn log_softmax_row(row: ArrayView1<f64>) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![f64::NEG_INFINITY; row.len()];
    }
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - lse).collect()
}

/// Row-wise log-softmax; masked entries stay at negative infinity.
pub fn log_softmax_rows(logits: &RuleLogits) -> Array2<f64> {
    let mut out = Array2::zeros(logits.values.dim());
    for (i, row) in logits.values.axis_iter(Axis(0)).enumerate() {
        for (j, v) in log_softmax_row(row).into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Hyp {
    score: f64,
    steps: Vec<(usize, usize, usize)>,
}

fn rule_seq_cmp(a: &[(usize, usize, usize)], b: &[(usize, usize, usize)]) -> Ordering {
    a.iter().map(|s| s.1).cmp(b.iter().map(|s| s.1))
}

/// Best first: higher score, then fewer applications, then the
/// lexicographically smaller rule-id sequence.
fn hyp_order(a: &Hyp, b: &Hyp) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.steps.len().cmp(&b.steps.len()))
        .then_with(|| rule_seq_cmp(&a.steps, &b.steps))
}

fn to_plan(h: &Hyp, seq: &TokenSequence, rules: &Ruleset) -> Result<NormalizationPlan> {
    let applications = h
        .steps
        .iter()
        .map(|&(start, rule_id, span)| {
            Ok(RuleApplication {
                rule_id,
                start,
                span,
                words: rules.verbalize(rule_id, seq, start, span)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NormalizationPlan {
        applications,
        score: h.score,
    })
}

/// Returns up to `beam_width` complete plans, best first.
pub fn beam_search_nbest(
    masked: &RuleLogits,
    seq: &TokenSequence,
    rules: &Ruleset,
    beam_width: usize,
) -> Result<Vec<NormalizationPlan>> {
    check_shape(masked.n(), masked.num_rules(), seq, rules)?;
    if beam_width == 0 {
        return Err(Error::Config("beam width must be positive".into()));
    }
    let n = seq.len();
    if n == 0 {
        return Ok(vec![NormalizationPlan::empty()]);
    }
    let logp = log_softmax_rows(masked);
    let spans = rules.span_table(seq);

    let mut frontier: Vec<Vec<Hyp>> = vec![Vec::new(); n + 1];
    frontier[0].push(Hyp {
        score: 0.0,
        steps: Vec::new(),
    });
    for pos in 0..n {
        let mut beam = std::mem::take(&mut frontier[pos]);
        beam.sort_by(hyp_order);
        beam.truncate(beam_width);
        for hyp in &beam {
            for (rule_id, span) in spans[pos].iter().enumerate() {
                let (Some(span), lp) = (*span, logp[[pos, rule_id]]) else {
                    continue;
                };
                if !lp.is_finite() {
                    continue;
                }
                let mut steps = hyp.steps.clone();
                steps.push((pos, rule_id, span));
                frontier[pos + span].push(Hyp {
                    score: hyp.score + lp,
                    steps,
                });
            }
        }
    }
    let mut done = std::mem::take(&mut frontier[n]);
    if done.is_empty() {
        return Err(Error::Contract(
            "no complete cover survives the mask; is PLAIN masked out?".into(),
        ));
    }
    done.sort_by(hyp_order);
    done.truncate(beam_width);
    done.iter().map(|h| to_plan(h, seq, rules)).collect()
}

pub fn beam_search(
    masked: &RuleLogits,
    seq: &TokenSequence,
    rules: &Ruleset,
    beam_width: usize,
) -> Result<NormalizationPlan> {
    let mut plans = beam_search_nbest(masked, seq, rules, beam_width)?;
    Ok(plans.swap_remove(0))
}

/// Exact optimum by enumerating every cover. Test oracle; `n <= 12`.
pub fn brute_force_decode(
    masked: &RuleLogits,
    seq: &TokenSequence,
    rules: &Ruleset,
) -> Result<NormalizationPlan> {
    check_shape(masked.n(), masked.num_rules(), seq, rules)?;
    if seq.len() > BRUTE_FORCE_MAX_TOKENS {
        return Err(Error::Config(format!(
            "brute-force decoding is limited to {BRUTE_FORCE_MAX_TOKENS} tokens, got {}",
            seq.len()
        )));
    }
    let logp = log_softmax_rows(masked);
    let n = seq.len();

    fn enumerate(
        pos: usize,
        n: usize,
        seq: &TokenSequence,
        rules: &Ruleset,
        logp: &Array2<f64>,
        current: &mut Hyp,
        best: &mut Option<Hyp>,
    ) {
        if pos == n {
            let better = match best {
                None => true,
                Some(b) => hyp_order(current, b) == Ordering::Less,
            };
            if better {
                *best = Some(current.clone());
            }
            return;
        }
        for rule_id in 0..rules.len() {
            let lp = logp[[pos, rule_id]];
            if !lp.is_finite() {
                continue;
            }
            if let Some(span) = rules.can_parse(rule_id, seq, pos) {
                let saved = current.score;
                current.score += lp;
                current.steps.push((pos, rule_id, span));
                enumerate(pos + span, n, seq, rules, logp, current, best);
                current.steps.pop();
                current.score = saved;
            }
        }
    }

    let mut best = None;
    let mut current = Hyp {
        score: 0.0,
        steps: Vec::new(),
    };
    enumerate(0, n, seq, rules, &logp, &mut current, &mut best);
    let best = best.ok_or_else(|| Error::Contract("no cover exists under the mask".into()))?;
    to_plan(&best, seq, rules)
}

/// Joins application words with single spaces. Consecutive PLAIN tokens
/// from the same source word are glued back together, so `Mary's` stays
/// one word.
pub fn render(plan: &NormalizationPlan, rules: &Ruleset, seq: &TokenSequence) -> String {
    let mut words: Vec<String> = Vec::new();
    let mut last_plain_word: Option<usize> = None;
    for app in &plan.applications {
        let plain = rules
            .get(app.rule_id)
            .is_some_and(|r| r.verbalizer == Verbalizer::Plain);
        let word_index = seq.get(app.start).map(|t| t.word_index);
        if plain {
            let text: String = app.words.concat();
            match (last_plain_word, words.last_mut()) {
                (Some(w), Some(last)) if Some(w) == word_index => last.push_str(&text),
                _ => words.push(text),
            }
            last_plain_word = word_index;
        } else {
            words.extend(app.words.iter().cloned());
            last_plain_word = None;
        }
    }
    words.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::PLAIN_RULE;
    use crate::tokenizer::tokenize;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_true(n: usize, r: usize) -> Array2<bool> {
        Array2::from_elem((n, r), true)
    }

    #[test]
    fn masking_examples() {
        let l = RuleLogits::new(array![[2.0, 1.0]]);
        let m = mask_logits(&l, &array![[true, false]]).unwrap();
        assert_eq!(m.values[[0, 0]], 2.0);
        assert_eq!(m.values[[0, 1]], MASKED);
        assert_eq!(mask_logits(&l, &all_true(1, 2)).unwrap(), l);

        let m = mask_logits(&RuleLogits::new(array![[0.0, 0.0]]), &array![[false, true]]).unwrap();
        let lp = log_softmax_rows(&m);
        assert_eq!(lp[[0, 1]].exp(), 1.0);
        assert_eq!(lp[[0, 0]].exp(), 0.0);

        assert!(matches!(
            mask_logits(&l, &array![[false, false]]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(mask_logits(&l, &all_true(2, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn empty_sequence() {
        let rs = Ruleset::builtin();
        let seq = tokenize("");
        let plan = beam_search(&RuleLogits::new(Array2::zeros((0, rs.len()))), &seq, &rs, 4)
            .unwrap();
        assert!(plan.applications.is_empty());
        assert_eq!(plan.score, 0.0);
        assert_eq!(render(&plan, &rs, &seq), "");
    }

    #[test]
    fn single_token_argmax() {
        let rs = Ruleset::builtin();
        let seq = tokenize("42");
        let card = rs.id_of("CARDINAL_1TOK").unwrap();
        let mut logits = Array2::zeros((1, rs.len()));
        logits[[0, card]] = 3.0;
        let masked = mask_logits(&RuleLogits::new(logits), &rs.applicability_mask(&seq)).unwrap();
        let plan = beam_search(&masked, &seq, &rs, 8).unwrap();
        assert_eq!(plan.rule_ids(), vec![card]);
        assert_eq!(brute_force_decode(&masked, &seq, &rs).unwrap().rule_ids(), vec![card]);
    }

    #[test]
    fn span_rule_beats_plains() {
        let rs = Ruleset::builtin();
        let seq = tokenize("7/8");
        let frac = rs.id_of("FRACTION_3TOK").unwrap();
        // Row 0 prefers PLAIN; the uncertain tail rows make three PLAINs
        // cost more than a single FRACTION.
        let mut logits = Array2::zeros((3, rs.len()));
        logits[[0, PLAIN_RULE]] = 1.0;
        logits[[0, frac]] = 0.9;
        let masked = mask_logits(&RuleLogits::new(logits), &rs.applicability_mask(&seq)).unwrap();
        let plan = brute_force_decode(&masked, &seq, &rs).unwrap();
        assert_eq!(plan.rule_ids(), vec![frac]);
        assert_eq!(beam_search(&masked, &seq, &rs, 1).unwrap().rule_ids(), vec![frac]);
        assert_eq!(render(&plan, &rs, &seq), "seven eighths");
    }

    #[test]
    fn render_policies() {
        let rs = Ruleset::builtin();
        let seq = tokenize("St. Mary's St.");
        let saint = rs.id_of("ST_AS_SAINT").unwrap();
        let street = rs.id_of("ST_AS_STREET").unwrap();
        let plan = NormalizationPlan::from_rules(
            &seq,
            &rs,
            &[(0, saint), (2, 0), (3, 0), (4, 0), (5, street)],
        )
        .unwrap();
        let flat: Vec<String> = plan.applications.iter().flat_map(|a| a.words.clone()).collect();
        assert_eq!(flat.join(" "), "saint mary ' s street");
        assert_eq!(render(&plan, &rs, &seq), "saint mary's street");

        let seq = tokenize("7/8 inches");
        let frac = rs.id_of("FRACTION_3TOK").unwrap();
        let plan = NormalizationPlan::from_rules(&seq, &rs, &[(0, frac), (3, 0)]).unwrap();
        assert_eq!(render(&plan, &rs, &seq), "seven eighths inches");

        let seq = tokenize("Stop. Go");
        let silent = rs.id_of("PUNCT_SILENT").unwrap();
        let plan = NormalizationPlan::from_rules(&seq, &rs, &[(0, 0), (1, silent), (2, 0)]).unwrap();
        assert_eq!(render(&plan, &rs, &seq), "stop go");
    }

    #[test]
    fn from_rules_rejects_bad_covers() {
        let rs = Ruleset::builtin();
        let seq = tokenize("7/8 inches");
        let frac = rs.id_of("FRACTION_3TOK").unwrap();
        assert!(NormalizationPlan::from_rules(&seq, &rs, &[(0, frac), (2, 0)]).is_err());
        assert!(NormalizationPlan::from_rules(&seq, &rs, &[(0, frac)]).is_err());
        assert!(NormalizationPlan::from_rules(&seq, &rs, &[(0, 0), (1, frac)]).is_err());
    }

    #[test]
    fn brute_force_guard() {
        let rs = Ruleset::builtin();
        let seq = tokenize("a b c d e f g h i j k l m");
        let l = RuleLogits::new(Array2::zeros((seq.len(), rs.len())));
        assert!(matches!(brute_force_decode(&l, &seq, &rs), Err(Error::Config(_))));
        let bad = RuleLogits::new(Array2::zeros((2, rs.len())));
        assert!(matches!(beam_search(&bad, &seq, &rs, 4), Err(Error::Shape(_))));
    }

    #[test]
    fn beam_matches_oracle_on_random_instances() {
        let rs = Ruleset::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pieces = ["7/8", "St.", "Dr", "42", "1/5/2023", "$3.50", "hi", ",", "5kg", "FBI"];
        for _ in 0..100 {
            let k = rng.random_range(1..=4);
            let text: Vec<&str> = (0..k).map(|_| pieces[rng.random_range(0..pieces.len())]).collect();
            let seq = tokenize(&text.join(" "));
            if seq.len() > 8 {
                continue;
            }
            let mut mask = rs.applicability_mask(&seq);
            // randomly drop some non-PLAIN options; PLAIN keeps every row valid
            for v in mask.iter_mut() {
                if rng.random_bool(0.2) {
                    *v = false;
                }
            }
            mask.column_mut(PLAIN_RULE).fill(true);
            let logits = Array2::from_shape_fn((seq.len(), rs.len()), |_| rng.random_range(-3.0..3.0));
            let masked = mask_logits(&RuleLogits::new(logits), &mask).unwrap();
            let beam = beam_search(&masked, &seq, &rs, 16).unwrap();
            let exact = brute_force_decode(&masked, &seq, &rs).unwrap();
            assert!((beam.score - exact.score).abs() <= 1e-9);
            beam.validate(&seq, &rs).unwrap();
            for app in &beam.applications {
                assert!(mask[[app.start, app.rule_id]]);
            }
        }
    }
}
