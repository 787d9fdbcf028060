//! Line accuracy, word error rate, POS accuracy and homograph micro/macro
//! accuracy, plus a flat key-value report.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn line_accuracy(predictions: &[String], references: &[String]) -> Result<f64> {
    if predictions.len() != references.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} references",
            predictions.len(),
            references.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::Data("line accuracy of an empty corpus".into()));
    }
    let hits = predictions
        .iter()
        .zip(references)
        .filter(|(p, r)| normalize_whitespace(p) == normalize_whitespace(r))
        .count();
    Ok(hits as f64 / references.len() as f64)
}

/// Unit-cost Levenshtein distance over word sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `(edit distance, reference length)` in words.
pub fn wer_counts(prediction: &str, reference: &str) -> Result<(usize, usize)> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    if r.is_empty() {
        return Err(Error::Data("word error rate needs a non-empty reference".into()));
    }
    let p: Vec<&str> = prediction.split_whitespace().collect();
    Ok((edit_distance(&p, &r), r.len()))
}

pub fn wer(prediction: &str, reference: &str) -> Result<f64> {
    let (d, n) = wer_counts(prediction, reference)?;
    Ok(d as f64 / n as f64)
}

/// Total edits over total reference words.
pub fn corpus_wer(predictions: &[String], references: &[String]) -> Result<f64> {
    if predictions.len() != references.len() {
        return Err(Error::Data("prediction and reference counts differ".into()));
    }
    let mut dist = 0;
    let mut words = 0;
    for (p, r) in predictions.iter().zip(references) {
        let (d, n) = wer_counts(p, r)?;
        dist += d;
        words += n;
    }
    if words == 0 {
        return Err(Error::Data("word error rate of an empty corpus".into()));
    }
    Ok(dist as f64 / words as f64)
}

pub fn pos_accuracy<T: PartialEq>(pred: &[T], gold: &[T]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Data(format!("{} predicted tags for {} words", pred.len(), gold.len())));
    }
    if gold.is_empty() {
        return Err(Error::Data("POS accuracy of an empty corpus".into()));
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HdPrediction {
    pub homograph: String,
    pub gold: String,
    pub predicted: String,
}

/// `(micro, macro)` accuracy. Classes are (homograph, gold label) pairs;
/// macro averages only classes present in the input.
pub fn hd_accuracy(examples: &[HdPrediction]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::Data("homograph accuracy of an empty set".into()));
    }
    let mut per_class: BTreeMap<(&str, &str), (usize, usize)> = BTreeMap::new();
    for e in examples {
        let c = per_class.entry((&e.homograph, &e.gold)).or_default();
        c.0 += usize::from(e.gold == e.predicted);
        c.1 += 1;
    }
    let correct: usize = per_class.values().map(|c| c.0).sum();
    let micro = correct as f64 / examples.len() as f64;
    Ok((micro, macro_average(per_class.values().copied())))
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Mean of `hits / total` over classes, rounded once from the exact
/// rational so that equal class sizes give exactly the micro value.
fn macro_average(classes: impl Iterator<Item = (usize, usize)> + Clone) -> f64 {
    let k = classes.clone().count() as u128;
    let exact = classes
        .clone()
        .try_fold(1u128, |l, (_, n)| {
            let n = n as u128;
            (l / gcd(l, n)).checked_mul(n)
        })
        .and_then(|lcm| {
            classes
                .clone()
                .try_fold(0u128, |acc, (c, n)| acc.checked_add((c as u128).checked_mul(lcm / n as u128)?))
                .zip(lcm.checked_mul(k))
        });
    match exact {
        Some((num, den)) => num as f64 / den as f64,
        None => classes.map(|(c, n)| c as f64 / n as f64).sum::<f64>() / k as f64,
    }
}

pub const KEY_TN_LINE_ACC: &str = "tn.line_acc";
pub const KEY_TN_WER: &str = "tn.wer";
pub const KEY_TN_TOKEN_ACC: &str = "tn.token_acc";
pub const KEY_POS_ACC: &str = "pos.acc";
pub const KEY_HD_MICRO: &str = "hd.micro";
pub const KEY_HD_MACRO: &str = "hd.macro";

/// Metric values and counts keyed by stable names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
}

impl EvalReport {
    pub fn set(&mut self, key: &str, v: f64) {
        self.metrics.insert(key.to_string(), v);
    }

    pub fn count(&mut self, key: &str, n: usize) {
        self.counts.insert(key.to_string(), n);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.metrics.extend(other.metrics);
        self.counts.extend(other.counts);
    }

    /// Equal-weight mean of line accuracy, POS accuracy and HD micro
    /// accuracy over whichever are present. Used for checkpoint selection.
    pub fn selection_score(&self) -> Option<f64> {
        let mut parts = Vec::new();
        if let Some(v) = self.get(KEY_TN_LINE_ACC) {
            parts.push(v);
        }
        if let Some(v) = self.get(KEY_POS_ACC) {
            parts.push(v);
        }
        if let Some(v) = self.get(KEY_HD_MICRO) {
            parts.push(v);
        }
        (!parts.is_empty()).then(|| parts.iter().sum::<f64>() / parts.len() as f64)
    }

    pub fn parse(text: &str) -> Result<EvalReport> {
        let mut r = EvalReport::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("report line {}: expected key<TAB>value", i + 1)))?;
            if let Some(k) = k.strip_prefix("count.") {
                let n = v.parse().map_err(|_| Error::Data(format!("report line {}: bad count", i + 1)))?;
                r.counts.insert(k.to_string(), n);
            } else {
                let x = v.parse().map_err(|_| Error::Data(format!("report line {}: bad value", i + 1)))?;
                r.metrics.insert(k.to_string(), x);
            }
        }
        Ok(r)
    }
}

impl fmt::Display for EvalReport {
    /// One `key<TAB>value` line per metric, then `count.<key>` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.metrics {
            writeln!(f, "{k}\t{v}")?;
        }
        for (k, v) in &self.counts {
            writeln!(f, "count.{k}\t{v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(h: &str, g: &str, pr: &str) -> HdPrediction {
        HdPrediction {
            homograph: h.into(),
            gold: g.into(),
            predicted: pr.into(),
        }
    }

    #[test]
    fn line_accuracy_examples() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(line_accuracy(&s(&["a", "b"]), &s(&["a", "b"])).unwrap(), 1.0);
        assert_eq!(line_accuracy(&s(&["a b"]), &s(&["a  b"])).unwrap(), 1.0);
        assert_eq!(line_accuracy(&s(&["a", "b", "c", "x"]), &s(&["a", "b", "c", "d"])).unwrap(), 0.75);
        assert!(line_accuracy(&s(&["a"]), &s(&[])).is_err());
        assert_eq!(line_accuracy(&s(&["A"]), &s(&["a"])).unwrap(), 0.0);
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer("one two", "one two").unwrap(), 0.0);
        assert!((wer("one three", "one two three").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wer("x", "a b").unwrap(), 1.0);
        assert_eq!(wer("", "a b c").unwrap(), 1.0);
        assert!(wer("a", "  ").is_err());
        let preds = vec!["a b".to_string(), "".to_string()];
        let refs = vec!["a c".to_string(), "x y z".to_string()];
        assert!((corpus_wer(&preds, &refs).unwrap() - 4.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn hd_micro_macro_gap() {
        let mut ex = Vec::new();
        for i in 0..10 {
            ex.push(p("abstract", "A", if i < 9 { "A" } else { "B" }));
        }
        ex.push(p("abstract", "B", "A"));
        let (micro, macro_) = hd_accuracy(&ex).unwrap();
        assert!((micro - 9.0 / 11.0).abs() < 1e-15);
        assert!((macro_ - 0.45).abs() < 1e-15);
        assert_eq!(hd_accuracy(&[p("x", "a", "a")]).unwrap(), (1.0, 1.0));
        assert!(hd_accuracy(&[]).is_err());
    }

    #[test]
    fn pos_accuracy_examples() {
        assert_eq!(pos_accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(pos_accuracy(&[1, 3], &[1, 2]).unwrap(), 0.5);
        assert!(pos_accuracy::<u8>(&[], &[]).is_err());
        assert!(pos_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn report_round_trip() {
        let mut r = EvalReport::default();
        r.set(KEY_TN_LINE_ACC, 0.5);
        r.set(KEY_HD_MICRO, 0.25);
        r.count("tn.examples", 4);
        let text = r.to_string();
        assert_eq!(text, "hd.micro\t0.25\ntn.line_acc\t0.5\ncount.tn.examples\t4\n");
        assert_eq!(EvalReport::parse(&text).unwrap(), r);
        assert_eq!(r.selection_score(), Some(0.375));
    }

    fn words() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[abc]", 0..7)
    }

    proptest! {
        #[test]
        fn edit_distance_triangle(a in words(), b in words(), c in words()) {
            prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
            prop_assert_eq!(edit_distance(&a, &a), 0);
            prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        }

        #[test]
        fn empty_prediction_is_full_error(r in prop::collection::vec("[a-z]{1,4}", 1..8)) {
            prop_assert_eq!(wer("", &r.join(" ")).unwrap(), 1.0);
        }

        #[test]
        fn corpus_wer_is_length_weighted(
            pairs in prop::collection::vec((words(), prop::collection::vec("[abc]", 1..6)), 1..6)
        ) {
            let preds: Vec<String> = pairs.iter().map(|(p, _)| p.join(" ")).collect();
            let refs: Vec<String> = pairs.iter().map(|(_, r)| r.join(" ")).collect();
            let total: usize = pairs.iter().map(|(_, r)| r.len()).sum();
            let weighted: f64 = preds.iter().zip(&refs)
                .map(|(p, r)| wer(p, r).unwrap() * r.split_whitespace().count() as f64)
                .sum::<f64>() / total as f64;
            prop_assert!((corpus_wer(&preds, &refs).unwrap() - weighted).abs() < 1e-12);
        }

        #[test]
        fn balanced_classes_make_micro_equal_macro(
            per_class in 1usize..6,
            hits in prop::collection::vec(0usize..6, 1..8)
        ) {
            let mut ex = Vec::new();
            for (c, h) in hits.iter().enumerate() {
                for i in 0..per_class {
                    let gold = format!("l{c}");
                    let pred = if i < (*h).min(per_class) { gold.clone() } else { "wrong".into() };
                    ex.push(p("w", &gold, &pred));
                }
            }
            let (micro, macro_) = hd_accuracy(&ex).unwrap();
            prop_assert!((0.0..=1.0).contains(&micro));
            prop_assert_eq!(micro, macro_);
        }
    }
}
