use ttsfront::decoder::{render, NormalizationPlan};
use ttsfront::rules::Ruleset;
use ttsfront::tokenizer::tokenize;

const GOLDEN: &str = include_str!("data/tn_golden.tsv");

/// Walks the named rules left to right and returns `(start, rule)` pairs,
/// or a description of where the chain breaks.
fn chain(rules: &Ruleset, text: &str, names: &str) -> Result<Vec<(usize, usize)>, String> {
    let seq = tokenize(text);
    let mut pos = 0;
    let mut pairs = Vec::new();
    for name in names.split_whitespace() {
        let id = rules.id_of(name).ok_or_else(|| format!("unknown rule {name}"))?;
        let span = rules
            .can_parse(id, &seq, pos)
            .ok_or_else(|| format!("{name} does not parse at token {pos}"))?;
        pairs.push((pos, id));
        pos += span;
    }
    if pos != seq.len() {
        return Err(format!("rules cover {pos} of {} tokens", seq.len()));
    }
    Ok(pairs)
}

#[test]
fn golden_corpus_passes_exactly() {
    let rules = Ruleset::builtin();
    let mut failures = Vec::new();
    let mut count = 0;
    for (i, line) in GOLDEN.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        count += 1;
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 3, "line {}: expected three columns", i + 1);
        let (text, expected, names) = (cols[0], cols[1], cols[2]);
        let seq = tokenize(text);
        match chain(&rules, text, names) {
            Err(e) => failures.push(format!("line {}: {text:?}: {e}", i + 1)),
            Ok(pairs) => {
                let plan = NormalizationPlan::from_rules(&seq, &rules, &pairs).expect("valid chain");
                let got = render(&plan, &rules, &seq);
                if got != expected {
                    failures.push(format!("line {}: {text:?}: got {got:?}, expected {expected:?}", i + 1));
                }
                let mask = rules.applicability_mask(&seq);
                assert!(pairs.iter().all(|&(p, r)| mask[[p, r]]));
            }
        }
    }
    assert!(count >= 100, "golden corpus has only {count} entries");
    assert!(failures.is_empty(), "{} failures:\n{}", failures.len(), failures.join("\n"));
}

#[test]
fn golden_corpus_exercises_every_rule() {
    let rules = Ruleset::builtin();
    let used: std::collections::BTreeSet<&str> = GOLDEN
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split('\t').nth(2))
        .flat_map(str::split_whitespace)
        .collect();
    let missing: Vec<&str> = rules.rules().iter().map(|r| r.name.as_str()).filter(|n| !used.contains(n)).collect();
    assert!(missing.is_empty(), "rules without a golden example: {missing:?}");
}
