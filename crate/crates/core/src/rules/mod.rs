//! Semiotic rules: applicability tests and deterministic verbalizers.
//!
//! The inventory lives in a declarative manifest (`rules/ruleset.toml`); this
//! module interprets it. A rule consumes one or more consecutive tokens and
//! only ever inspects tokens inside its own `max_span` window, so all context
//! sensitivity is left to the classifier that picks between applicable rules.

pub mod numbers;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tokenizer::{Token, TokenSequence, UClass};

pub const BUILTIN_MANIFEST: &str = include_str!("../../rules/ruleset.toml");

pub const PLAIN_RULE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SemioticClass {
    Plain,
    Punct,
    Cardinal,
    Ordinal,
    Decimal,
    Fraction,
    Date,
    Time,
    Currency,
    Measure,
    Abbreviation,
    Letters,
    Telephone,
    Url,
}

impl SemioticClass {
    pub const ALL: [SemioticClass; 14] = [
        SemioticClass::Plain,
        SemioticClass::Punct,
        SemioticClass::Cardinal,
        SemioticClass::Ordinal,
        SemioticClass::Decimal,
        SemioticClass::Fraction,
        SemioticClass::Date,
        SemioticClass::Time,
        SemioticClass::Currency,
        SemioticClass::Measure,
        SemioticClass::Abbreviation,
        SemioticClass::Letters,
        SemioticClass::Telephone,
        SemioticClass::Url,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SemioticClass::Plain => "PLAIN",
            SemioticClass::Punct => "PUNCT",
            SemioticClass::Cardinal => "CARDINAL",
            SemioticClass::Ordinal => "ORDINAL",
            SemioticClass::Decimal => "DECIMAL",
            SemioticClass::Fraction => "FRACTION",
            SemioticClass::Date => "DATE",
            SemioticClass::Time => "TIME",
            SemioticClass::Currency => "CURRENCY",
            SemioticClass::Measure => "MEASURE",
            SemioticClass::Abbreviation => "ABBREVIATION",
            SemioticClass::Letters => "LETTERS",
            SemioticClass::Telephone => "TELEPHONE",
            SemioticClass::Url => "URL",
        }
    }
}

impl fmt::Display for SemioticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Token-pattern test of a rule, with its parameters from the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Matcher {
    Any,
    Punct,
    SymbolWord { table: BTreeMap<String, String> },
    Digits { min_len: usize, max_len: usize },
    DigitGroups,
    OrdinalSuffix,
    Decimal,
    Fraction,
    DateMdy,
    DateMy,
    MonthYear,
    MonthDay,
    Year { min: u64, max: u64 },
    Time,
    TimeAmpm,
    Currency {
        symbol: String,
        unit: [String; 2],
        subunit: [String; 2],
    },
    Measure { units: BTreeMap<String, [String; 2]> },
    Percent,
    Abbreviation { table: BTreeMap<String, String> },
    Letters { min_len: usize, max_len: usize },
    Telephone,
    Url { tlds: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verbalizer {
    Plain,
    Silent,
    Expand,
    Cardinal,
    Digits,
    Ordinal,
    Decimal,
    Fraction,
    Date,
    Year,
    Time,
    Currency,
    Measure,
    Percent,
    Letters,
    Telephone,
    Url,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub id: usize,
    pub name: String,
    pub class: SemioticClass,
    pub max_span: usize,
    pub verbalizer: Verbalizer,
    pub matcher: Matcher,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleApplication {
    pub rule_id: usize,
    pub start: usize,
    pub span: usize,
    pub words: Vec<String>,
}

fn digits_value(t: &Token) -> Option<u64> {
    if t.is_digits() && t.text.len() <= 9 {
        t.text.parse().ok()
    } else {
        None
    }
}

fn in_range(t: &Token, lo: u64, hi: u64, max_len: usize) -> Option<u64> {
    if t.text.len() > max_len {
        return None;
    }
    digits_value(t).filter(|v| (lo..=hi).contains(v))
}

fn same_word(w: &[Token], k: usize) -> bool {
    w.len() >= k && w[..k].iter().all(|t| t.word_index == w[0].word_index)
}

fn is_text(t: Option<&Token>, s: &str) -> bool {
    t.is_some_and(|t| t.text == s)
}

fn year_token(t: &Token) -> Option<u64> {
    if t.text.len() == 4 {
        in_range(t, 1000, 2099, 4)
    } else {
        None
    }
}

fn time_prefix(w: &[Token]) -> Option<(u64, u64)> {
    if w.len() < 3 || !same_word(w, 3) || w[1].text != ":" || w[2].text.len() != 2 {
        return None;
    }
    Some((in_range(&w[0], 0, 23, 2)?, in_range(&w[2], 0, 59, 2)?))
}

fn url_punct_word(c: char) -> Option<&'static str> {
    match c {
        '.' => Some("dot"),
        '/' => Some("slash"),
        ':' => Some("colon"),
        '-' => Some("dash"),
        '_' => Some("underscore"),
        _ => None,
    }
}

impl Matcher {
    /// Span consumed when applied to the start of `w`; `w` is already
    /// clipped to the rule's window.
    fn match_window(&self, w: &[Token]) -> Option<usize> {
        let first = w.first()?;
        match self {
            Matcher::Any => Some(1),
            Matcher::Punct => (first.uclass == UClass::Punct).then_some(1),
            Matcher::SymbolWord { table } => table.contains_key(&first.text).then_some(1),
            Matcher::Digits { min_len, max_len } => {
                let len = first.text.chars().count();
                (first.is_digits() && (*min_len..=*max_len).contains(&len)).then_some(1)
            }
            Matcher::DigitGroups => {
                if !first.is_digits() || first.text.len() > 3 || first.text.starts_with('0') {
                    return None;
                }
                let mut span = 1;
                while is_text(w.get(span), ",")
                    && w.get(span + 1).is_some_and(|t| t.is_digits() && t.text.len() == 3)
                    && same_word(w, span + 2)
                {
                    span += 2;
                }
                (span > 1).then_some(span)
            }
            Matcher::OrdinalSuffix => {
                let n = digits_value(first)?;
                let suffix = w.get(1)?;
                (same_word(w, 2)
                    && suffix.uclass == UClass::Letter
                    && suffix.text.to_lowercase() == numbers::ordinal_suffix(n))
                .then_some(2)
            }
            Matcher::Decimal => {
                (same_word(w, 3)
                    && digits_value(first).is_some()
                    && is_text(w.get(1), ".")
                    && w[2].is_digits())
                .then_some(3)
            }
            Matcher::Fraction => {
                if !same_word(w, 3) || !is_text(w.get(1), "/") {
                    return None;
                }
                digits_value(first)?;
                let den = digits_value(&w[2])?;
                (den >= 2).then_some(3)
            }
            Matcher::DateMdy => {
                if !same_word(w, 5) || !is_text(w.get(1), "/") || !is_text(w.get(3), "/") {
                    return None;
                }
                in_range(first, 1, 12, 2)?;
                in_range(&w[2], 1, 31, 2)?;
                year_token(&w[4]).map(|_| 5)
            }
            Matcher::DateMy => {
                if !same_word(w, 3) || !is_text(w.get(1), "/") {
                    return None;
                }
                in_range(first, 1, 12, 2)?;
                year_token(&w[2]).map(|_| 3)
            }
            Matcher::MonthYear => {
                numbers::month_index(&first.text).filter(|_| first.is_alpha())?;
                year_token(w.get(1)?).map(|_| 2)
            }
            Matcher::MonthDay => {
                numbers::month_index(&first.text).filter(|_| first.is_alpha())?;
                in_range(w.get(1)?, 1, 31, 2).map(|_| 2)
            }
            Matcher::Year { min, max } => {
                (first.text.len() == 4 && in_range(first, *min, *max, 4).is_some()).then_some(1)
            }
            Matcher::Time => time_prefix(w).map(|_| 3),
            Matcher::TimeAmpm => {
                time_prefix(w)?;
                let marker = w.get(3)?.text.to_lowercase();
                (marker == "am" || marker == "pm").then_some(4)
            }
            Matcher::Currency { symbol, .. } => {
                if first.text != *symbol || !same_word(w, 2) {
                    return None;
                }
                digits_value(&w[1])?;
                if same_word(w, 4)
                    && is_text(w.get(2), ".")
                    && w[3].is_digits()
                    && w[3].text.len() == 2
                {
                    Some(4)
                } else {
                    Some(2)
                }
            }
            Matcher::Measure { units } => {
                digits_value(first)?;
                units.contains_key(&w.get(1)?.text).then_some(2)
            }
            Matcher::Percent => {
                (digits_value(first).is_some() && same_word(w, 2) && is_text(w.get(1), "%"))
                    .then_some(2)
            }
            Matcher::Abbreviation { table } => {
                if !first.is_alpha() || !table.contains_key(&first.text.to_lowercase()) {
                    return None;
                }
                if same_word(w, 2) && is_text(w.get(1), ".") {
                    Some(2)
                } else {
                    Some(1)
                }
            }
            Matcher::Letters { min_len, max_len } => {
                let len = first.text.chars().count();
                (first.is_alpha()
                    && first.text.chars().all(char::is_uppercase)
                    && (*min_len..=*max_len).contains(&len))
                .then_some(1)
            }
            Matcher::Telephone => {
                let group = |i: usize, len: usize| {
                    w.get(i).is_some_and(|t| t.is_digits() && t.text.len() == len)
                };
                if same_word(w, 5)
                    && group(0, 3)
                    && is_text(w.get(1), "-")
                    && group(2, 3)
                    && is_text(w.get(3), "-")
                    && group(4, 4)
                {
                    Some(5)
                } else if same_word(w, 3) && group(0, 3) && is_text(w.get(1), "-") && group(2, 4)
                {
                    Some(3)
                } else {
                    None
                }
            }
            Matcher::Url { tlds } => {
                if !matches!(first.uclass, UClass::Letter | UClass::Digit) {
                    return None;
                }
                let mut end = None;
                for (k, t) in w.iter().enumerate() {
                    if t.word_index != first.word_index {
                        break;
                    }
                    let ok = match t.uclass {
                        UClass::Letter | UClass::Digit => true,
                        UClass::Punct => t.text.chars().all(|c| url_punct_word(c).is_some()),
                        _ => false,
                    };
                    if !ok {
                        break;
                    }
                    if k >= 2
                        && t.is_alpha()
                        && w[k - 1].text == "."
                        && tlds.iter().any(|tld| *tld == t.text.to_lowercase())
                    {
                        end = Some(k + 1);
                    }
                }
                end
            }
        }
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

impl RuleSpec {
    pub fn can_parse(&self, seq: &TokenSequence, pos: usize) -> Option<usize> {
        if pos >= seq.len() {
            return None;
        }
        let end = (pos + self.max_span).min(seq.len());
        self.matcher
            .match_window(&seq.tokens[pos..end])
            .filter(|&s| s >= 1 && s <= self.max_span && pos + s <= seq.len())
    }

    /// Words for the tokens `seq[pos..pos + span]`. The span must be exactly
    /// the one [`RuleSpec::can_parse`] reports.
    pub fn verbalize(&self, seq: &TokenSequence, pos: usize, span: usize) -> Result<Vec<String>> {
        match self.can_parse(seq, pos) {
            Some(s) if s == span => {}
            other => {
                return Err(Error::Contract(format!(
                    "rule {} cannot verbalize span {span} at token {pos} (parses {other:?})",
                    self.name
                )))
            }
        }
        let w = &seq.tokens[pos..pos + span];
        self.render_words(w).ok_or_else(|| {
            Error::Contract(format!(
                "verbalizer {:?} of rule {} rejected tokens {:?}",
                self.verbalizer,
                self.name,
                w.iter().map(|t| t.text.as_str()).collect::<Vec<_>>()
            ))
        })
    }

    fn render_words(&self, w: &[Token]) -> Option<Vec<String>> {
        let first = &w[0];
        let out = match self.verbalizer {
            Verbalizer::Plain => vec![first.text.to_lowercase()],
            Verbalizer::Silent => Vec::new(),
            Verbalizer::Expand => match &self.matcher {
                Matcher::Abbreviation { table } => words(table.get(&first.text.to_lowercase())?),
                Matcher::SymbolWord { table } => words(table.get(&first.text)?),
                _ => return None,
            },
            Verbalizer::Cardinal => {
                let digits: String = w
                    .iter()
                    .filter(|t| t.is_digits())
                    .map(|t| t.text.as_str())
                    .collect();
                if digits.is_empty() {
                    return None;
                }
                numbers::cardinal_or_digits(&digits)
            }
            Verbalizer::Digits | Verbalizer::Telephone => {
                let digits: String = w
                    .iter()
                    .filter(|t| t.is_digits())
                    .map(|t| t.text.as_str())
                    .collect();
                numbers::digit_words(&digits)
            }
            Verbalizer::Ordinal => numbers::ordinal(digits_value(first)?)?,
            Verbalizer::Decimal => {
                let mut out = numbers::cardinal_or_digits(&first.text);
                out.push("point".to_string());
                out.extend(numbers::digit_words(&w.get(2)?.text));
                out
            }
            Verbalizer::Fraction => {
                numbers::fraction(digits_value(first)?, digits_value(w.get(2)?)?)?
            }
            Verbalizer::Date => {
                let month_name = |t: &Token| -> Option<String> {
                    let idx = match digits_value(t) {
                        Some(m) => (m as usize).checked_sub(1)?,
                        None => numbers::month_index(&t.text)?,
                    };
                    numbers::MONTHS.get(idx).map(|m| m.to_string())
                };
                let mut out = vec![month_name(first)?];
                match self.matcher {
                    Matcher::DateMdy => {
                        out.extend(numbers::ordinal(digits_value(&w[2])?)?);
                        out.extend(numbers::year(digits_value(&w[4])?)?);
                    }
                    Matcher::DateMy => out.extend(numbers::year(digits_value(&w[2])?)?),
                    Matcher::MonthYear => out.extend(numbers::year(digits_value(&w[1])?)?),
                    Matcher::MonthDay => out.extend(numbers::ordinal(digits_value(&w[1])?)?),
                    _ => return None,
                }
                out
            }
            Verbalizer::Year => numbers::year(digits_value(first)?)?,
            Verbalizer::Time => {
                let (h, m) = time_prefix(w)?;
                let mut out = numbers::clock(h, m)?;
                if let Some(marker) = w.get(3) {
                    out.extend(marker.text.to_lowercase().chars().map(|c| c.to_string()));
                }
                out
            }
            Verbalizer::Currency => {
                let Matcher::Currency { unit, subunit, .. } = &self.matcher else {
                    return None;
                };
                let dollars = digits_value(w.get(1)?)?;
                let cents = match w.get(3) {
                    Some(t) => digits_value(t)?,
                    None => 0,
                };
                let mut out = Vec::new();
                if dollars > 0 || cents == 0 {
                    out.extend(numbers::cardinal(dollars)?);
                    out.extend(words(&unit[usize::from(dollars != 1)]));
                }
                if cents > 0 {
                    out.extend(numbers::cardinal(cents)?);
                    out.extend(words(&subunit[usize::from(cents != 1)]));
                }
                out
            }
            Verbalizer::Measure => {
                let Matcher::Measure { units } = &self.matcher else {
                    return None;
                };
                let names = units.get(&w.get(1)?.text)?;
                let mut out = numbers::cardinal_or_digits(&first.text);
                out.extend(words(&names[usize::from(first.text != "1")]));
                out
            }
            Verbalizer::Percent => {
                let mut out = numbers::cardinal_or_digits(&first.text);
                out.push("percent".to_string());
                out
            }
            Verbalizer::Letters => first
                .text
                .chars()
                .flat_map(char::to_lowercase)
                .map(|c| c.to_string())
                .collect(),
            Verbalizer::Url => {
                let mut out = Vec::new();
                for t in w {
                    match t.uclass {
                        UClass::Digit => out.extend(numbers::digit_words(&t.text)),
                        UClass::Letter if t.text.eq_ignore_ascii_case("www") => {
                            out.extend(["w", "w", "w"].map(String::from))
                        }
                        UClass::Letter => out.push(t.text.to_lowercase()),
                        _ => {
                            for c in t.text.chars() {
                                out.push(url_punct_word(c)?.to_string());
                            }
                        }
                    }
                }
                out
            }
        };
        if self.verbalizer != Verbalizer::Silent && out.is_empty() {
            return None;
        }
        Some(out)
    }
}

#[derive(Debug, Deserialize)]
struct ManifestFile {
    version: u32,
    rule: Vec<RuleSpec>,
}

/// Immutable rule inventory loaded from a manifest.
#[derive(Debug, Clone)]
pub struct Ruleset {
    rules: Vec<RuleSpec>,
    by_name: HashMap<String, usize>,
    version: u32,
    hash: String,
}

impl Ruleset {
    pub fn builtin() -> Ruleset {
        Ruleset::from_manifest_str(BUILTIN_MANIFEST).expect("builtin ruleset manifest is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Ruleset> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ruleset::from_manifest_str(&text)
    }

    pub fn from_manifest_str(text: &str) -> Result<Ruleset> {
        let file: ManifestFile = toml::from_str(text)
            .map_err(|e| Error::Config(format!("ruleset manifest: {e}")))?;
        if file.rule.is_empty() {
            return Err(Error::Config("ruleset manifest has no rules".into()));
        }
        let mut by_name = HashMap::new();
        for (i, rule) in file.rule.iter().enumerate() {
            if rule.id != i {
                return Err(Error::Config(format!(
                    "rule ids must be dense and ordered: expected {i}, found {} ({})",
                    rule.id, rule.name
                )));
            }
            if rule.max_span == 0 {
                return Err(Error::Config(format!("rule {} has max_span 0", rule.name)));
            }
            if by_name.insert(rule.name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate rule name {}", rule.name)));
            }
        }
        let plain = &file.rule[PLAIN_RULE];
        if plain.matcher != Matcher::Any
            || plain.max_span != 1
            || plain.verbalizer != Verbalizer::Plain
        {
            return Err(Error::Config(
                "rule 0 must be the PLAIN fallback (matcher any, max_span 1)".into(),
            ));
        }
        let hash = format!("{:x}", Sha256::digest(text.as_bytes()));
        Ok(Ruleset {
            rules: file.rule,
            by_name,
            version: file.version,
            hash,
        })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Hex SHA-256 of the manifest text.
    pub fn manifest_hash(&self) -> &str {
        &self.hash
    }

    pub fn rules(&self) -> &[RuleSpec] {
        &self.rules
    }

    pub fn get(&self, id: usize) -> Option<&RuleSpec> {
        self.rules.get(id)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    fn rule(&self, id: usize) -> Result<&RuleSpec> {
        self.get(id)
            .ok_or_else(|| Error::Contract(format!("unknown rule id {id}")))
    }

    pub fn can_parse(&self, rule_id: usize, seq: &TokenSequence, pos: usize) -> Option<usize> {
        self.get(rule_id)?.can_parse(seq, pos)
    }

    pub fn verbalize(
        &self,
        rule_id: usize,
        seq: &TokenSequence,
        pos: usize,
        span: usize,
    ) -> Result<Vec<String>> {
        self.rule(rule_id)?.verbalize(seq, pos, span)
    }

    /// Builds the application of `rule_id` at `pos`, or fails if inapplicable.
    pub fn apply(&self, rule_id: usize, seq: &TokenSequence, pos: usize) -> Result<RuleApplication> {
        let rule = self.rule(rule_id)?;
        let span = rule.can_parse(seq, pos).ok_or_else(|| {
            Error::Contract(format!("rule {} is not applicable at token {pos}", rule.name))
        })?;
        Ok(RuleApplication {
            rule_id,
            start: pos,
            span,
            words: rule.verbalize(seq, pos, span)?,
        })
    }

    /// `n x R` matrix; entry `(i, r)` is true iff rule `r` parses at token `i`.
    pub fn applicability_mask(&self, seq: &TokenSequence) -> Array2<bool> {
        Array2::from_shape_fn((seq.len(), self.rules.len()), |(i, r)| {
            self.rules[r].can_parse(seq, i).is_some()
        })
    }

    /// Span table matching [`Ruleset::applicability_mask`]: `spans[i][r]`.
    pub fn span_table(&self, seq: &TokenSequence) -> Vec<Vec<Option<usize>>> {
        (0..seq.len())
            .map(|i| self.rules.iter().map(|r| r.can_parse(seq, i)).collect())
            .collect()
    }
}
