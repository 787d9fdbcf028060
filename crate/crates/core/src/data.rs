//! Dataset records, loaders and writers, the homograph balance validator,
//! stratified splitting and the synthetic fixture generator.
//!
//! Formats:
//!
//! * TN: one JSON object per line,
//!   `{"schema":"tn/v1","text":…,"normalization":…,"rules":[[start,rule_id],…]}`.
//!   `rules` tiles the token sequence; each pair names the rule applied at
//!   that start token.
//! * POS: `{"schema":"pos/v1","words":[…],"tags":[…]}`; a tag may be `null`
//!   for an untagged word.
//! * HD: tab-separated, header `homograph	wordid	sentence	start	end`,
//!   offsets in unicode scalar values, end exclusive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{render, NormalizationPlan};
use crate::error::{Error, Result};
use crate::heads::{HomographLexicon, PosTag};
use crate::rules::{Ruleset, PLAIN_RULE};
use crate::tokenizer::{char_range_to_bytes, char_slice, tokenize, UClass};

pub const TN_SCHEMA: &str = "tn/v1";
pub const POS_SCHEMA: &str = "pos/v1";
pub const HD_HEADER: &str = "homograph\twordid\tsentence\tstart\tend";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TnExample {
    pub text: String,
    pub normalization: String,
    /// `(start token, rule id)` for every application, in order.
    pub rules: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosExample {
    pub words: Vec<String>,
    pub tags: Vec<Option<PosTag>>,
}

impl PosExample {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HdExample {
    pub homograph: String,
    pub label: String,
    pub sentence: String,
    /// Char offsets of the occurrence.
    pub span: Range<usize>,
}

#[derive(Serialize, Deserialize)]
struct TnRecord {
    schema: String,
    text: String,
    normalization: String,
    rules: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct PosRecord {
    schema: String,
    words: Vec<String>,
    tags: Vec<Option<PosTag>>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Checks a TN example against the ruleset: the rules must apply, tile the
/// tokens and render to the stated normalization.
pub fn check_tn(ex: &TnExample, rules: &Ruleset) -> Result<NormalizationPlan> {
    let seq = tokenize(&ex.text);
    let plan = NormalizationPlan::from_rules(&seq, rules, &ex.rules)?;
    let rendered = render(&plan, rules, &seq);
    if rendered != ex.normalization {
        return Err(Error::Data(format!(
            "rules render {rendered:?}, record says {:?}",
            ex.normalization
        )));
    }
    Ok(plan)
}

pub fn parse_tn(text: &str, path: &Path, rules: &Ruleset) -> Result<Vec<TnExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::data_line(path, i + 1, m);
        let rec: TnRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if rec.schema != TN_SCHEMA {
            return Err(bad(format!("schema {:?}, expected {TN_SCHEMA:?}", rec.schema)));
        }
        let ex = TnExample {
            text: rec.text,
            normalization: rec.normalization,
            rules: rec.rules,
        };
        check_tn(&ex, rules).map_err(|e| bad(e.to_string()))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn load_tn(path: &Path, rules: &Ruleset) -> Result<Vec<TnExample>> {
    parse_tn(&read(path)?, path, rules)
}

pub fn tn_to_jsonl(examples: &[TnExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        let rec = TnRecord {
            schema: TN_SCHEMA.into(),
            text: ex.text.clone(),
            normalization: ex.normalization.clone(),
            rules: ex.rules.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn write_tn(path: &Path, examples: &[TnExample]) -> Result<()> {
    write(path, &tn_to_jsonl(examples))
}

pub fn parse_pos(text: &str, path: &Path) -> Result<Vec<PosExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::data_line(path, i + 1, m);
        let rec: PosRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if rec.schema != POS_SCHEMA {
            return Err(bad(format!("schema {:?}, expected {POS_SCHEMA:?}", rec.schema)));
        }
        if rec.words.len() != rec.tags.len() {
            return Err(bad(format!("{} words but {} tags", rec.words.len(), rec.tags.len())));
        }
        if rec.words.is_empty() {
            return Err(bad("empty sentence".into()));
        }
        if let Some(w) = rec.words.iter().find(|w| w.is_empty() || w.chars().any(char::is_whitespace)) {
            return Err(bad(format!("word {w:?} is empty or contains whitespace")));
        }
        out.push(PosExample {
            words: rec.words,
            tags: rec.tags,
        });
    }
    Ok(out)
}

pub fn load_pos(path: &Path) -> Result<Vec<PosExample>> {
    parse_pos(&read(path)?, path)
}

pub fn pos_to_jsonl(examples: &[PosExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        let rec = PosRecord {
            schema: POS_SCHEMA.into(),
            words: ex.words.clone(),
            tags: ex.tags.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn write_pos(path: &Path, examples: &[PosExample]) -> Result<()> {
    write(path, &pos_to_jsonl(examples))
}

/// How HD offsets were interpreted when loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetUnit {
    Chars,
    Bytes,
}

#[derive(Debug, Clone)]
pub struct HdFile {
    pub examples: Vec<HdExample>,
    /// Rows whose offsets only made sense as byte offsets.
    pub byte_offset_rows: usize,
    pub unit: OffsetUnit,
}

fn byte_to_char(text: &str, byte: usize) -> Option<usize> {
    text.is_char_boundary(byte).then(|| text[..byte].chars().count())
}

/// Parses HD rows. Offsets are read as chars; rows where that fails but a
/// byte reading matches are converted and counted.
pub fn parse_hd(text: &str, path: &Path) -> Result<HdFile> {
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == HD_HEADER => {}
        _ => return Err(Error::data_line(path, 1, format!("expected header {HD_HEADER:?}"))),
    }
    let mut examples = Vec::new();
    let mut byte_rows = 0;
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| Error::data_line(path, i + 1, m);
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated columns, found {}", cols.len())));
        }
        let num = |s: &str, what: &str| s.trim().parse::<usize>().map_err(|_| bad(format!("bad {what} offset {s:?}")));
        let (start, end) = (num(cols[3], "start")?, num(cols[4], "end")?);
        let (homograph, label, sentence) = (cols[0].to_lowercase(), cols[1].to_string(), cols[2].to_string());
        if homograph.is_empty() || label.is_empty() {
            return Err(bad("empty homograph or wordid".into()));
        }
        let matches = |span: &Range<usize>| {
            char_slice(&sentence, span).is_some_and(|s| s.to_lowercase() == homograph)
        };
        let span = if start < end && matches(&(start..end)) {
            start..end
        } else {
            let converted = byte_to_char(&sentence, start)
                .zip(byte_to_char(&sentence, end))
                .map(|(s, e)| s..e)
                .filter(|r| r.start < r.end && matches(r));
            match converted {
                Some(r) => {
                    byte_rows += 1;
                    r
                }
                None => {
                    return Err(bad(format!(
                        "span {start}..{end} of {sentence:?} does not spell {homograph:?}"
                    )))
                }
            }
        };
        examples.push(HdExample {
            homograph,
            label,
            sentence,
            span,
        });
    }
    let unit = if byte_rows > 0 { OffsetUnit::Bytes } else { OffsetUnit::Chars };
    Ok(HdFile {
        examples,
        byte_offset_rows: byte_rows,
        unit,
    })
}

pub fn load_hd_file(path: &Path) -> Result<HdFile> {
    parse_hd(&read(path)?, path)
}

pub fn load_hd(path: &Path) -> Result<Vec<HdExample>> {
    Ok(load_hd_file(path)?.examples)
}

pub fn hd_to_tsv(examples: &[HdExample]) -> Result<String> {
    let mut out = String::from(HD_HEADER);
    out.push('\n');
    for ex in examples {
        if [&ex.homograph, &ex.label, &ex.sentence].iter().any(|s| s.contains(['\t', '\n', '\r'])) {
            return Err(Error::Data(format!("HD field contains a tab or newline: {:?}", ex.sentence)));
        }
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            ex.homograph, ex.label, ex.sentence, ex.span.start, ex.span.end
        )
        .expect("writing to a string");
    }
    Ok(out)
}

pub fn write_hd(path: &Path, examples: &[HdExample]) -> Result<()> {
    write(path, &hd_to_tsv(examples)?)
}

/// Lexicon with every (homograph, label) seen, labels sorted.
pub fn lexicon_from_examples(examples: &[HdExample]) -> Result<HomographLexicon> {
    let mut labels: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for ex in examples {
        labels.entry(&ex.homograph).or_default().insert(&ex.label);
    }
    let mut lex = HomographLexicon::new();
    for (h, ls) in labels {
        lex.insert(h, ls.into_iter().map(str::to_string).collect())?;
    }
    Ok(lex)
}

/// Checks every example against a lexicon.
pub fn check_hd_lexicon(examples: &[HdExample], lexicon: &HomographLexicon) -> Result<()> {
    for ex in examples {
        if lexicon.label_index(&ex.homograph, &ex.label).is_none() {
            return Err(Error::Data(format!(
                "({}, {}) is not in the lexicon",
                ex.homograph, ex.label
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalanceReport {
    /// Sentence count per (homograph, pronunciation).
    pub counts: BTreeMap<(String, String), usize>,
    pub total: usize,
    pub is_balanced: bool,
    pub violations: Vec<String>,
}

impl BalanceReport {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn num_homographs(&self) -> usize {
        self.counts.keys().map(|(h, _)| h).collect::<BTreeSet<_>>().len()
    }

    /// The common per-class count when every class has the same size.
    pub fn uniform_count(&self) -> Option<usize> {
        let mut it = self.counts.values();
        let first = *it.next()?;
        it.all(|&c| c == first).then_some(first)
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "sentences\t{}\nhomographs\t{}\nclasses\t{}\nbalanced\t{}\n",
            self.total,
            self.num_homographs(),
            self.num_classes(),
            self.is_balanced
        );
        if let Some(c) = self.uniform_count() {
            let _ = writeln!(out, "per_class\t{c}");
        }
        for v in &self.violations {
            let _ = writeln!(out, "violation\t{v}");
        }
        out
    }
}

/// Balanced means every pronunciation of a homograph has the same count.
pub fn validate_balance(examples: &[HdExample]) -> BalanceReport {
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for ex in examples {
        *counts.entry((ex.homograph.clone(), ex.label.clone())).or_default() += 1;
    }
    let mut per_word: BTreeMap<&str, Vec<(&str, usize)>> = BTreeMap::new();
    for ((h, l), c) in &counts {
        per_word.entry(h).or_default().push((l, *c));
    }
    let violations: Vec<String> = per_word
        .iter()
        .filter(|(_, ls)| ls.iter().any(|(_, c)| *c != ls[0].1))
        .map(|(h, ls)| {
            let detail: Vec<String> = ls.iter().map(|(l, c)| format!("{l}={c}")).collect();
            format!("{h}: {}", detail.join(" "))
        })
        .collect();
    BalanceReport {
        total: examples.len(),
        is_balanced: violations.is_empty(),
        violations,
        counts,
    }
}

/// Splits each (homograph, pronunciation) class so that
/// `round(fraction * count)` examples go to train. Order within each side
/// follows the input.
pub fn stratified_split(
    examples: &[HdExample],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<HdExample>, Vec<HdExample>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} not in (0, 1)")));
    }
    let mut classes: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        classes.entry((&ex.homograph, &ex.label)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut to_train = vec![false; examples.len()];
    for ((h, l), mut idx) in classes {
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class ({h}, {l}) has {} example(s); both splits need one",
                idx.len()
            )));
        }
        let k = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        idx.shuffle(&mut rng);
        for &i in &idx[..k] {
            to_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = examples.iter().cloned().zip(to_train).partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(e, _)| e).collect(),
        test.into_iter().map(|(e, _)| e).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub tn: usize,
    pub pos: usize,
    pub hd_homographs: usize,
    pub hd_per_label: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            tn: 50,
            pos: 50,
            hd_homographs: 4,
            hd_per_label: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub tn: Vec<TnExample>,
    pub pos: Vec<PosExample>,
    pub hd: Vec<HdExample>,
    pub lexicon: HomographLexicon,
}

impl SynthCorpus {
    pub const TN_FILE: &'static str = "tn.jsonl";
    pub const POS_FILE: &'static str = "pos.jsonl";
    pub const HD_FILE: &'static str = "hd.tsv";
    pub const LEXICON_FILE: &'static str = "lexicon.txt";

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_tn(&dir.join(Self::TN_FILE), &self.tn)?;
        write_pos(&dir.join(Self::POS_FILE), &self.pos)?;
        write_hd(&dir.join(Self::HD_FILE), &self.hd)?;
        self.lexicon.save(&dir.join(Self::LEXICON_FILE))
    }
}

/// Sentences that always open the synthetic TN set.
pub const TN_ANCHORS: [&str; 2] = ["[ST_AS_SAINT|St.] Mary's [ST_AS_STREET|St.]", "[FRACTION_3TOK|7/8] inches"];

const SAINTS: &[&str] = &["Mary's", "Paul", "John", "Louis", "Peter", "Anne", "James", "Clair"];
const STREETS: &[&str] = &["Elm", "Oak", "Main", "Market", "Pine", "Maple", "Cedar", "Union"];
const SURNAMES: &[&str] = &["Smith", "Jones", "Lee", "Brown", "Garcia", "Patel", "Nguyen", "Khan"];
const THINGS: &[&str] = &["report", "meeting", "package", "lecture", "concert", "train"];
const SITES: &[&str] = &["example", "weather", "library", "museum", "garden"];
const TLDS: &[&str] = &["com", "org", "net", "edu"];
const ACRONYMS: &[&str] = &["FBI", "NASA", "BBC", "UN", "IBM", "CIA"];
const MONTHS: &[&str] = &["January", "March", "April", "June", "July", "October", "December"];
const UNITS: &[&str] = &["km", "kg", "lb", "mi", "cm", "oz"];

fn tn_template(rng: &mut ChaCha8Rng) -> String {
    let pick = |rng: &mut ChaCha8Rng, xs: &[&str]| xs.choose(rng).expect("non-empty").to_string();
    match rng.random_range(0..16) {
        0 => format!("[ST_AS_SAINT|St.] {} lives on {} [ST_AS_STREET|St.]", pick(rng, SAINTS), pick(rng, STREETS)),
        1 => format!("[DR_AS_DOCTOR|Dr.] {} moved to {} [DR_AS_DRIVE|Dr.]", pick(rng, SURNAMES), pick(rng, STREETS)),
        2 => format!("The church of [ST_AS_SAINT|St.] {} is on {} [ST_AS_STREET|St.]", pick(rng, SAINTS), pick(rng, STREETS)),
        3 => format!("Ask [DR_AS_DOCTOR|Dr.] {} about the {}.", pick(rng, SURNAMES), pick(rng, THINGS)),
        4 => format!("Add [FRACTION_3TOK|{}/{}] cup of sugar.", rng.random_range(1..8), rng.random_range(2..10)),
        5 => format!(
            "The {} starts at [TIME_COLON_AMPM|{}:{:02} {}]",
            pick(rng, THINGS),
            rng.random_range(1..13),
            rng.random_range(0..60),
            if rng.random_bool(0.5) { "pm" } else { "am" }
        ),
        6 => format!("Tickets cost [CURRENCY_DOLLAR_PREFIX|${}.{:02}] each.", rng.random_range(2..99), rng.random_range(1..100)),
        7 => format!(
            "She was born on [DATE_SLASH_MDY|{}/{}/{}].",
            rng.random_range(1..13),
            rng.random_range(1..29),
            rng.random_range(1950..2020)
        ),
        8 => {
            let n: u64 = rng.random_range(1..40);
            format!("He lives on the [ORDINAL_SUFFIX|{n}{}] floor.", crate::rules::numbers::ordinal_suffix(n))
        }
        9 => format!("We walked [MEASURE_UNIT_SUFFIX|{} {}] today.", rng.random_range(2..90), pick(rng, UNITS)),
        10 => format!("About [MEASURE_PERCENT|{}%] of people agree.", rng.random_range(2..100)),
        11 => format!(
            "Call [TELEPHONE_DIGITS|{}-{}-{}] now.",
            rng.random_range(200..999),
            rng.random_range(200..999),
            rng.random_range(1000..9999)
        ),
        12 => format!("Visit [URL_SPELL|{}.{}] for the {}.", pick(rng, SITES), pick(rng, TLDS), pick(rng, THINGS)),
        13 => format!("The [LETTERS_SPELL|{}] released a {}.", pick(rng, ACRONYMS), pick(rng, THINGS)),
        14 => format!("In [YEAR_4DIGIT|{}] we moved to {} [DR_AS_DRIVE|Dr.]", rng.random_range(1950..2020), pick(rng, STREETS)),
        _ => format!(
            "We counted [CARDINAL_COMMA|{},{:03}] birds in [DATE_MONTH_DAY|{} {}].",
            rng.random_range(1..99),
            rng.random_range(0..1000),
            pick(rng, MONTHS),
            rng.random_range(1..29)
        ),
    }
}

/// Strips `[RULE|text]` markup, returning the text and the char offsets
/// where each marked rule starts.
fn parse_markup(src: &str) -> Result<(String, Vec<(usize, String)>)> {
    let mut text = String::new();
    let mut marks = Vec::new();
    let mut chars = 0;
    let mut rest = src;
    while let Some(open) = rest.find('[') {
        let head = &rest[..open];
        text.push_str(head);
        chars += head.chars().count();
        let close = rest[open..].find(']').ok_or_else(|| Error::Data(format!("unclosed markup in {src:?}")))? + open;
        let inner = &rest[open + 1..close];
        let (rule, body) = inner
            .split_once('|')
            .ok_or_else(|| Error::Data(format!("markup without rule in {src:?}")))?;
        marks.push((chars, rule.to_string()));
        text.push_str(body);
        chars += body.chars().count();
        rest = &rest[close + 1..];
    }
    text.push_str(rest);
    Ok((text, marks))
}

/// Labels a marked-up sentence. Marked positions take their rule; other
/// tokens are PLAIN, except punctuation that is not word-internal, which
/// is silent.
pub fn label_markup(src: &str, rules: &Ruleset) -> Result<TnExample> {
    let (text, marks) = parse_markup(src)?;
    let seq = tokenize(&text);
    let silent = rules
        .id_of("PUNCT_SILENT")
        .ok_or_else(|| Error::Config("ruleset has no PUNCT_SILENT rule".into()))?;
    let mut pairs = Vec::new();
    let mut pos = 0;
    while pos < seq.len() {
        let tok = &seq.tokens[pos];
        let rule = match marks.iter().find(|(c, _)| *c == tok.span.start) {
            Some((_, name)) => rules
                .id_of(name)
                .ok_or_else(|| Error::Data(format!("unknown rule {name}")))?,
            None if tok.uclass == UClass::Punct => {
                let inner = |j: Option<usize>| {
                    j.and_then(|j| seq.get(j))
                        .is_some_and(|t| t.word_index == tok.word_index && t.uclass != UClass::Punct)
                };
                if inner(pos.checked_sub(1)) && inner(Some(pos + 1)) {
                    PLAIN_RULE
                } else {
                    silent
                }
            }
            None if tok.uclass == UClass::Digit => {
                return Err(Error::Data(format!("unmarked digits {:?} in {text:?}", tok.text)))
            }
            None => PLAIN_RULE,
        };
        let span = rules
            .can_parse(rule, &seq, pos)
            .ok_or_else(|| Error::Data(format!("rule {rule} does not apply at {pos} in {text:?}")))?;
        pairs.push((pos, rule));
        pos += span;
    }
    let plan = NormalizationPlan::from_rules(&seq, rules, &pairs)?;
    Ok(TnExample {
        normalization: render(&plan, rules, &seq),
        text,
        rules: pairs,
    })
}

pub fn synth_tn(count: usize, seed: u64, rules: &Ruleset) -> Result<Vec<TnExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        let src = match out.len() {
            i if i < TN_ANCHORS.len() => TN_ANCHORS[i].to_string(),
            _ => tn_template(&mut rng),
        };
        attempts += 1;
        if !seen.insert(src.clone()) && attempts < count * 100 {
            continue;
        }
        out.push(label_markup(&src, rules)?);
    }
    Ok(out)
}

type TaggedWords = &'static [(&'static str, PosTag)];

const DETS: TaggedWords = &[("the", PosTag::Article), ("a", PosTag::Article)];
const ADJS: TaggedWords = &[("small", PosTag::Adjective), ("red", PosTag::Adjective), ("quiet", PosTag::Adjective), ("old", PosTag::Adjective)];
const NOUNS: TaggedWords = &[("dog", PosTag::Noun), ("house", PosTag::Noun), ("teacher", PosTag::Noun), ("river", PosTag::Noun), ("car", PosTag::Noun)];
const VERBS: TaggedWords = &[("sees", PosTag::Verb), ("likes", PosTag::Verb), ("finds", PosTag::Verb), ("paints", PosTag::Verb)];
const ADVS: TaggedWords = &[("quickly", PosTag::Adverb), ("often", PosTag::Adverb), ("slowly", PosTag::Adverb)];
const PREPS: TaggedWords = &[("near", PosTag::Preposition), ("under", PosTag::Preposition), ("with", PosTag::Preposition)];
const PRONS: TaggedWords = &[("she", PosTag::Pronoun), ("they", PosTag::Pronoun), ("we", PosTag::Pronoun)];
const NAMES: TaggedWords = &[("Alice", PosTag::Name), ("Boston", PosTag::Name), ("Omar", PosTag::Name)];
const AUXS: TaggedWords = &[("will", PosTag::Auxiliary), ("can", PosTag::Auxiliary), ("must", PosTag::Auxiliary)];
const BASE_VERBS: TaggedWords = &[("see", PosTag::Verb), ("find", PosTag::Verb), ("paint", PosTag::Verb)];
const CONJS: TaggedWords = &[("and", PosTag::Conjunction), ("but", PosTag::Conjunction)];
const INTJS: TaggedWords = &[("oh", PosTag::Interjection), ("wow", PosTag::Interjection)];
const PARTS: TaggedWords = &[("broken", PosTag::Participle), ("painted", PosTag::Participle)];
const SPELLS: TaggedWords = &[("B", PosTag::Spelling), ("Q", PosTag::Spelling)];
const PUNCT: TaggedWords = &[(".", PosTag::Punctuation), ("!", PosTag::Punctuation)];
const TO: TaggedWords = &[("to", PosTag::Particle)];
const WANT: TaggedWords = &[("want", PosTag::Verb), ("need", PosTag::Verb)];

const POS_TEMPLATES: &[&[TaggedWords]] = &[
    &[DETS, ADJS, NOUNS, VERBS, DETS, NOUNS, PUNCT],
    &[PRONS, AUXS, BASE_VERBS, DETS, NOUNS, ADVS, PUNCT],
    &[NAMES, VERBS, DETS, PARTS, NOUNS, PREPS, DETS, NOUNS, PUNCT],
    &[INTJS, PRONS, WANT, TO, BASE_VERBS, NAMES, PUNCT],
    &[DETS, NOUNS, CONJS, DETS, NOUNS, VERBS, ADVS, PUNCT],
    &[PRONS, VERBS, DETS, NOUNS, SPELLS, PREPS, NAMES, PUNCT],
];

pub fn synth_pos(count: usize, seed: u64) -> Vec<PosExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let tpl = POS_TEMPLATES[i % POS_TEMPLATES.len()];
            let (words, tags) = tpl
                .iter()
                .map(|slot| {
                    let (w, t) = slot.choose(&mut rng).expect("non-empty slot");
                    (w.to_string(), Some(*t))
                })
                .unzip();
            PosExample { words, tags }
        })
        .collect()
}

struct HomographTemplates {
    word: &'static str,
    labels: [(&'static str, &'static [&'static str]); 2],
}

/// `{}` marks the homograph; each label has cue phrases that fix it.
const HD_TEMPLATES: &[HomographTemplates] = &[
    HomographTemplates {
        word: "read",
        labels: [
            ("read_past", &["Yesterday I {} the {} twice.", "Last week she {} the {} aloud.", "He already {} the {} in {}."]),
            ("read_present", &["Tomorrow I will {} the {} again.", "Please {} the {} before class.", "They like to {} the {} in {}."]),
        ],
    },
    HomographTemplates {
        word: "lead",
        labels: [
            ("lead_metal", &["The old pipes contain {} and the {} is unsafe.", "Paint with {} ruined the {}.", "A heavy {} weight sank the {} in {}."]),
            ("lead_verb", &["She will {} the team and the {}.", "Guides {} the visitors to the {}.", "Please {} the group past the {} in {}."]),
        ],
    },
    HomographTemplates {
        word: "bass",
        labels: [
            ("bass_fish", &["He caught a large {} near the {}.", "We grilled the {} by the {}.", "The {} swam under the {} in {}."]),
            ("bass_music", &["She plays {} guitar in the {}.", "Turn the {} down on the {}.", "The {} line shook the {} in {}."]),
        ],
    },
    HomographTemplates {
        word: "wind",
        labels: [
            ("wind_air", &["The cold {} blew across the {}.", "Strong {} knocked over the {}.", "A gentle {} moved the {} in {}."]),
            ("wind_verb", &["Remember to {} the clock near the {}.", "You must {} the rope around the {}.", "Please {} the cable by the {} in {}."]),
        ],
    },
    HomographTemplates {
        word: "tear",
        labels: [
            ("tear_cry", &["A {} rolled down her face at the {}.", "He wiped a {} away at the {}.", "One {} fell on the {} in {}."]),
            ("tear_rip", &["Do not {} the paper on the {}.", "Kids {} the wrapping off the {}.", "Careful, you will {} the {} in {}."]),
        ],
    },
    HomographTemplates {
        word: "bow",
        labels: [
            ("bow_ribbon", &["She tied a red {} on the {}.", "A silk {} decorated the {}.", "The {} on the {} came loose in {}."]),
            ("bow_bend", &["The actors {} before the {}.", "We {} our heads near the {}.", "They {} politely to the {} in {}."]),
        ],
    },
];

const HD_FILLERS: &[&str] = &["book", "letter", "garden", "station", "window", "table", "bridge", "harbor", "lake", "hall", "stage", "market"];
const HD_PLACES: &[&str] = &["Paris", "Denver", "Lagos", "Oslo", "Lima", "Cairo", "Perth"];

pub fn synth_hd(homographs: usize, per_label: usize, seed: u64) -> Result<Vec<HdExample>> {
    if homographs > HD_TEMPLATES.len() {
        return Err(Error::Config(format!(
            "at most {} synthetic homographs are available",
            HD_TEMPLATES.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for tpl in &HD_TEMPLATES[..homographs] {
        for (label, patterns) in &tpl.labels {
            let mut seen = BTreeSet::new();
            let mut made = 0;
            let mut attempts = 0;
            while made < per_label {
                let pat = patterns[made % patterns.len()];
                let filler = HD_FILLERS.choose(&mut rng).expect("non-empty");
                let place = HD_PLACES.choose(&mut rng).expect("non-empty");
                let mut parts = pat.split("{}");
                let mut sentence = parts.next().unwrap_or("").to_string();
                let mut span = 0..0;
                for (k, part) in parts.enumerate() {
                    let fill = match k {
                        0 => tpl.word,
                        1 => filler,
                        _ => place,
                    };
                    let start = sentence.chars().count();
                    if k == 0 {
                        span = start..start + fill.chars().count();
                    }
                    sentence.push_str(fill);
                    sentence.push_str(part);
                }
                attempts += 1;
                if !seen.insert(sentence.clone()) && attempts < per_label * 50 {
                    continue;
                }
                out.push(HdExample {
                    homograph: tpl.word.to_string(),
                    label: label.to_string(),
                    sentence,
                    span,
                });
                made += 1;
            }
        }
    }
    Ok(out)
}

pub fn synth_corpus(spec: &SynthSpec, seed: u64, rules: &Ruleset) -> Result<SynthCorpus> {
    let tn = synth_tn(spec.tn, seed, rules)?;
    let pos = synth_pos(spec.pos, seed.wrapping_add(1));
    let hd = synth_hd(spec.hd_homographs, spec.hd_per_label, seed.wrapping_add(2))?;
    let lexicon = lexicon_from_examples(&hd)?;
    Ok(SynthCorpus { tn, pos, hd, lexicon })
}

/// Loads the three fixture files and lexicon written by [`SynthCorpus::write_dir`].
pub fn load_corpus_dir(dir: &Path, rules: &Ruleset) -> Result<SynthCorpus> {
    let tn = load_tn(&dir.join(SynthCorpus::TN_FILE), rules)?;
    let pos = load_pos(&dir.join(SynthCorpus::POS_FILE))?;
    let hd = load_hd(&dir.join(SynthCorpus::HD_FILE))?;
    let lexicon = HomographLexicon::load(&dir.join(SynthCorpus::LEXICON_FILE))?;
    check_hd_lexicon(&hd, &lexicon)?;
    Ok(SynthCorpus { tn, pos, hd, lexicon })
}

/// Byte span of an HD example, for callers working on `&str` slices.
pub fn hd_byte_span(ex: &HdExample) -> Option<Range<usize>> {
    char_range_to_bytes(&ex.sentence, &ex.span)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hd(h: &str, l: &str, s: &str, span: Range<usize>) -> HdExample {
        HdExample {
            homograph: h.into(),
            label: l.into(),
            sentence: s.into(),
            span,
        }
    }

    #[test]
    fn anchors_render_as_expected() {
        let rules = Ruleset::builtin();
        let a = label_markup(TN_ANCHORS[0], &rules).unwrap();
        assert_eq!(a.text, "St. Mary's St.");
        assert_eq!(a.normalization, "saint mary's street");
        let b = label_markup(TN_ANCHORS[1], &rules).unwrap();
        assert_eq!(b.normalization, "seven eighths inches");
    }

    #[test]
    fn synthetic_tn_round_trips() {
        let rules = Ruleset::builtin();
        let tn = synth_tn(50, 7, &rules).unwrap();
        assert_eq!(tn.len(), 50);
        let text = tn_to_jsonl(&tn);
        let back = parse_tn(&text, Path::new("tn.jsonl"), &rules).unwrap();
        assert_eq!(back, tn);
        assert_eq!(tn_to_jsonl(&back), text);
        let other = synth_tn(50, 8, &rules).unwrap();
        assert_ne!(other, tn);
    }

    #[test]
    fn tn_loader_rejects_bad_records() {
        let rules = Ruleset::builtin();
        let overlap = r#"{"schema":"tn/v1","text":"7/8 inches","normalization":"seven eighths inches","rules":[[0,8],[2,0],[3,0]]}"#;
        let err = parse_tn(overlap, Path::new("t"), &rules).unwrap_err();
        assert!(err.to_string().starts_with("t:1:"), "{err}");
        let wrong_text = r#"{"schema":"tn/v1","text":"7/8 inches","normalization":"seven eighth inches","rules":[[0,8],[3,0]]}"#;
        assert!(parse_tn(wrong_text, Path::new("t"), &rules).is_err());
        let inapplicable = r#"{"schema":"tn/v1","text":"hello","normalization":"hello","rules":[[0,8]]}"#;
        assert!(parse_tn(inapplicable, Path::new("t"), &rules).is_err());
        let schema = r#"{"schema":"tn/v2","text":"hello","normalization":"hello","rules":[[0,0]]}"#;
        assert!(parse_tn(schema, Path::new("t"), &rules).is_err());
    }

    #[test]
    fn pos_round_trip_and_rejections() {
        let pos = synth_pos(50, 3);
        assert_eq!(pos.len(), 50);
        let text = pos_to_jsonl(&pos);
        assert_eq!(parse_pos(&text, Path::new("p")).unwrap(), pos);
        let bad = r#"{"schema":"pos/v1","words":["a","b","c"],"tags":["noun","verb"]}"#;
        let err = parse_pos(bad, Path::new("p")).unwrap_err();
        assert!(err.to_string().contains("3 words but 2 tags"));
        let untagged = r#"{"schema":"pos/v1","words":["hi","!"],"tags":["interjection",null]}"#;
        assert_eq!(parse_pos(untagged, Path::new("p")).unwrap()[0].tags[1], None);
        let unknown = r#"{"schema":"pos/v1","words":["hi"],"tags":["thing"]}"#;
        assert!(parse_pos(unknown, Path::new("p")).is_err());
        // every synthetic sentence tokenizes into exactly its words
        for ex in &pos {
            assert_eq!(tokenize(&ex.text()).word_count(), ex.words.len());
        }
    }

    #[test]
    fn hd_fixture_shape_and_round_trip() {
        let ex = synth_hd(4, 10, 1).unwrap();
        assert_eq!(ex.len(), 80);
        let report = validate_balance(&ex);
        assert!(report.is_balanced);
        assert_eq!(report.num_classes(), 8);
        assert_eq!(report.uniform_count(), Some(10));
        let tsv = hd_to_tsv(&ex).unwrap();
        let back = parse_hd(&tsv, Path::new("h")).unwrap();
        assert_eq!(back.examples, ex);
        assert_eq!(back.unit, OffsetUnit::Chars);
        assert_eq!(hd_to_tsv(&back.examples).unwrap(), tsv);
        let lex = lexicon_from_examples(&ex).unwrap();
        assert_eq!(lex.len(), 4);
        check_hd_lexicon(&ex, &lex).unwrap();
    }

    #[test]
    fn hd_offsets_bytes_are_detected() {
        let tsv = format!("{HD_HEADER}\nread\tread_past\tCafé: I read it\t9\t13\n");
        let f = parse_hd(&tsv, Path::new("h")).unwrap();
        assert_eq!(f.examples[0].span, 8..12);
        assert_eq!(f.unit, OffsetUnit::Bytes);
        let chars = format!("{HD_HEADER}\nread\tread_past\tCafé: I read it\t8\t12\n");
        assert_eq!(parse_hd(&chars, Path::new("h")).unwrap().unit, OffsetUnit::Chars);
        let wrong = format!("{HD_HEADER}\nread\tread_past\tI read it\t0\t4\n");
        let err = parse_hd(&wrong, Path::new("h")).unwrap_err();
        assert!(err.to_string().starts_with("h:2:"), "{err}");
        assert!(parse_hd("bad header\n", Path::new("h")).is_err());
    }

    #[test]
    fn balance_violation_is_reported() {
        let mut ex = Vec::new();
        for _ in 0..89 {
            ex.push(hd("abstract", "abstract_adj", "an abstract idea", 3..11));
        }
        ex.push(hd("abstract", "abstract_verb", "to abstract it", 3..11));
        let r = validate_balance(&ex);
        assert!(!r.is_balanced);
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].starts_with("abstract:"));
        let empty = validate_balance(&[]);
        assert!(empty.is_balanced);
        assert_eq!(empty.num_classes(), 0);
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let ex = synth_hd(4, 10, 2).unwrap();
        let (train, test) = stratified_split(&ex, 0.5, 9).unwrap();
        assert_eq!((train.len(), test.len()), (40, 40));
        for c in validate_balance(&train).counts.values() {
            assert_eq!(*c, 5);
        }
        let (train9, test9) = stratified_split(&ex, 0.9, 9).unwrap();
        assert_eq!((train9.len(), test9.len()), (72, 8));
        assert_eq!(stratified_split(&ex, 0.5, 9).unwrap().0, train);
        assert!(stratified_split(&ex, 1.0, 9).is_err());
        assert!(stratified_split(&ex[..1], 0.5, 9).is_err());
        let _ = test;
    }

    #[test]
    fn corpus_directory_round_trip() {
        let rules = Ruleset::builtin();
        let corpus = synth_corpus(&SynthSpec::default(), 5, &rules).unwrap();
        assert_eq!((corpus.tn.len(), corpus.pos.len(), corpus.hd.len()), (50, 50, 80));
        let dir = tempfile::tempdir().unwrap();
        corpus.write_dir(dir.path()).unwrap();
        let back = load_corpus_dir(dir.path(), &rules).unwrap();
        assert_eq!(back.tn, corpus.tn);
        assert_eq!(back.pos, corpus.pos);
        assert_eq!(back.hd, corpus.hd);
        assert_eq!(back.lexicon, corpus.lexicon);
    }
}
