//! Task heads over the shared sequence: TN rule logits per token, POS
//! logits per word and one small classifier per homograph.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{PreparedText, Subword};
use crate::error::{Error, Result};
use crate::nn::layers::Linear;
use crate::nn::{Graph, Mat, ParamId, ParamStore, Var};
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosTag {
    Adjective,
    Adverb,
    Article,
    Auxiliary,
    Conjunction,
    Interjection,
    Name,
    Noun,
    Participle,
    Particle,
    Preposition,
    Pronoun,
    Punctuation,
    Spelling,
    Verb,
}

impl PosTag {
    pub const ALL: [PosTag; 15] = [
        PosTag::Adjective,
        PosTag::Adverb,
        PosTag::Article,
        PosTag::Auxiliary,
        PosTag::Conjunction,
        PosTag::Interjection,
        PosTag::Name,
        PosTag::Noun,
        PosTag::Participle,
        PosTag::Particle,
        PosTag::Preposition,
        PosTag::Pronoun,
        PosTag::Punctuation,
        PosTag::Spelling,
        PosTag::Verb,
    ];
    pub const COUNT: usize = 15;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<PosTag> {
        PosTag::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Adjective => "adjective",
            PosTag::Adverb => "adverb",
            PosTag::Article => "article",
            PosTag::Auxiliary => "auxiliary",
            PosTag::Conjunction => "conjunction",
            PosTag::Interjection => "interjection",
            PosTag::Name => "name",
            PosTag::Noun => "noun",
            PosTag::Participle => "participle",
            PosTag::Particle => "particle",
            PosTag::Preposition => "preposition",
            PosTag::Pronoun => "pronoun",
            PosTag::Punctuation => "punctuation",
            PosTag::Spelling => "spelling",
            PosTag::Verb => "verb",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<PosTag> {
        PosTag::ALL
            .iter()
            .find(|t| t.as_str() == s)
            .copied()
            .ok_or_else(|| Error::Data(format!("unknown POS tag {s:?}")))
    }
}

pub const LEXICON_HEADER: &str = "#ttsfront-lexicon\tv1";

/// Homograph -> ordered pronunciation labels. Label order is logit order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomographLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl HomographLexicon {
    pub fn new() -> HomographLexicon {
        HomographLexicon::default()
    }

    pub fn insert(&mut self, homograph: &str, labels: Vec<String>) -> Result<()> {
        let key = homograph.to_lowercase();
        if key.is_empty() || key.contains(['\t', '\n']) {
            return Err(Error::Data(format!("invalid homograph key {homograph:?}")));
        }
        if labels.len() < 2 {
            return Err(Error::Data(format!("homograph {key:?} needs at least two pronunciations")));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.contains([',', '\t', '\n']) || labels[..i].contains(l) {
                return Err(Error::Data(format!("homograph {key:?}: bad or repeated label {l:?}")));
            }
        }
        if self.entries.insert(key.clone(), labels).is_some() {
            return Err(Error::Data(format!("duplicate homograph {key:?}")));
        }
        Ok(())
    }

    /// Appends `label` to `homograph`, creating the entry if needed. Used
    /// when deriving a lexicon from data; entries may briefly hold one label.
    pub fn observe(&mut self, homograph: &str, label: &str) {
        let labels = self.entries.entry(homograph.to_lowercase()).or_default();
        if !labels.iter().any(|l| l == label) {
            labels.push(label.to_string());
        }
    }

    pub fn labels(&self, homograph: &str) -> Option<&[String]> {
        self.entries.get(homograph).map(Vec::as_slice)
    }

    pub fn label_index(&self, homograph: &str, label: &str) -> Option<usize> {
        self.labels(homograph)?.iter().position(|l| l == label)
    }

    pub fn contains(&self, homograph: &str) -> bool {
        self.entries.contains_key(homograph)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn num_labels(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Every entry has at least two labels.
    pub fn validate(&self) -> Result<()> {
        match self.entries.iter().find(|(_, v)| v.len() < 2) {
            Some((k, _)) => Err(Error::Data(format!("homograph {k:?} has fewer than two pronunciations"))),
            None => Ok(()),
        }
    }

    /// The released inventory: 162 entries, 160 with two labels and two
    /// with three.
    pub fn check_full_scale(&self) -> Result<()> {
        let twos = self.entries.values().filter(|v| v.len() == 2).count();
        let threes = self.entries.values().filter(|v| v.len() == 3).count();
        if self.len() != 162 || twos != 160 || threes != 2 {
            return Err(Error::Data(format!(
                "expected 162 homographs (160 x2, 2 x3), found {} ({twos} x2, {threes} x3)",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(LEXICON_HEADER);
        out.push('\n');
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('\t');
            out.push_str(&v.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<HomographLexicon> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == LEXICON_HEADER => {}
            _ => return Err(Error::data_line(path, 1, format!("expected header {LEXICON_HEADER:?}"))),
        }
        let mut lex = HomographLexicon::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (key, labels) = line
                .split_once('\t')
                .ok_or_else(|| Error::data_line(path, i + 1, "expected key<TAB>labels"))?;
            if key != key.to_lowercase() {
                return Err(Error::data_line(path, i + 1, "homograph keys must be lowercase"));
            }
            let labels = labels.split(',').map(str::to_string).collect();
            lex.insert(key, labels)
                .map_err(|e| Error::data_line(path, i + 1, e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<HomographLexicon> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        HomographLexicon::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub ff_dim: usize,
    /// Skip connection from the encoder's last tapped layer into the
    /// homograph heads.
    pub hd_residual: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            ff_dim: 256,
            hd_residual: true,
        }
    }
}

/// Linear + ReLU followed by a linear classifier.
#[derive(Debug, Clone)]
pub struct TnHead {
    pub ff: Linear,
    pub out: Linear,
}

impl TnHead {
    pub fn new(store: &mut ParamStore, d: usize, cfg: &HeadConfig, rules: usize, rng: &mut ChaCha8Rng) -> TnHead {
        TnHead {
            ff: Linear::new(store, "heads.tn.ff", d, cfg.ff_dim, rng),
            out: Linear::new(store, "heads.tn.out", cfg.ff_dim, rules, rng),
        }
    }

    /// Unmasked rule logits, one row per token.
    pub fn forward(&self, g: &mut Graph<'_>, e: Var) -> Var {
        let h = self.ff.forward(g, e);
        let h = g.relu(h);
        self.out.forward(g, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.ff.params(), self.out.params()].concat()
    }
}

/// Word segments (packed row indices) for the sentences at `tokens`.
pub fn word_segments(texts: &[&PreparedText], tokens: &[Range<usize>]) -> Vec<Vec<usize>> {
    texts
        .iter()
        .zip(tokens)
        .flat_map(|(p, r)| {
            p.seq
                .word_groups()
                .into_iter()
                .map(move |grp| grp.into_iter().map(|i| r.start + i).collect())
        })
        .collect()
}

/// Checks that `words` partitions `0..n` into ordered contiguous groups.
pub fn check_alignment(words: &[Vec<usize>], n: usize) -> Result<()> {
    let mut next = 0;
    for w in words {
        if w.is_empty() || w.iter().enumerate().any(|(k, &i)| i != next + k) {
            return Err(Error::Contract("word alignment must partition the tokens in order".into()));
        }
        next += w.len();
    }
    if next != n {
        return Err(Error::Contract(format!("word alignment covers {next} of {n} tokens")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PosHead {
    pub ff: Linear,
    pub out: Linear,
}

impl PosHead {
    pub fn new(store: &mut ParamStore, d: usize, cfg: &HeadConfig, rng: &mut ChaCha8Rng) -> PosHead {
        PosHead {
            ff: Linear::new(store, "heads.pos.ff", d, cfg.ff_dim, rng),
            out: Linear::new(store, "heads.pos.out", cfg.ff_dim, PosTag::COUNT, rng),
        }
    }

    /// One row of tag logits per word; a word's embedding is the mean of
    /// its token rows.
    pub fn forward(&self, g: &mut Graph<'_>, e: Var, words: Vec<Vec<usize>>) -> Var {
        let w = g.segment_mean(e, words);
        let h = self.ff.forward(g, w);
        let h = g.relu(h);
        self.out.forward(g, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.ff.params(), self.out.params()].concat()
    }
}

/// Where a homograph sits in both token streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HomographSite {
    pub tokens: Vec<usize>,
    pub subwords: Vec<usize>,
}

/// All TN tokens and subwords overlapping the char span.
pub fn locate_homograph(seq: &TokenSequence, subwords: &[Subword], span: Range<usize>) -> Result<HomographSite> {
    if span.is_empty() {
        return Err(Error::Data(format!("empty homograph span {span:?}")));
    }
    let overlaps = |r: &Range<usize>| r.start < span.end && span.start < r.end;
    let tokens: Vec<usize> = seq
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| overlaps(&t.span))
        .map(|(i, _)| i)
        .collect();
    let subs: Vec<usize> = subwords
        .iter()
        .enumerate()
        .filter(|(_, s)| overlaps(&s.span))
        .map(|(i, _)| i)
        .collect();
    if tokens.is_empty() || subs.is_empty() {
        return Err(Error::Data(format!("span {span:?} overlaps no token")));
    }
    Ok(HomographSite {
        tokens,
        subwords: subs,
    })
}

/// Mean of `rows` of `m` as a single row.
pub fn mean_rows(m: &Mat, rows: &[usize]) -> Mat {
    let mut out = Array2::zeros((1, m.ncols()));
    for &r in rows {
        let mut o = out.row_mut(0);
        o += &m.row(r);
    }
    out / rows.len().max(1) as f64
}

#[derive(Debug, Clone)]
pub struct HdHead {
    pub ff: Linear,
    pub residual: Option<Linear>,
    pub heads: BTreeMap<String, Linear>,
}

/// One homograph occurrence inside a packed batch.
#[derive(Debug, Clone)]
pub struct HdQuery {
    pub homograph: String,
    /// Packed token rows of `e`.
    pub tokens: Vec<usize>,
    /// Mean of the encoder's last-layer rows at the homograph subwords.
    pub lm_mean: Mat,
}

impl HdHead {
    pub fn new(
        store: &mut ParamStore,
        d: usize,
        lm_dim: usize,
        cfg: &HeadConfig,
        lexicon: &HomographLexicon,
        rng: &mut ChaCha8Rng,
    ) -> HdHead {
        let ff = Linear::new(store, "heads.hd.ff", d, cfg.ff_dim, rng);
        let residual = cfg
            .hd_residual
            .then(|| Linear::new(store, "heads.hd.residual", lm_dim, cfg.ff_dim, rng));
        let heads = lexicon
            .iter()
            .map(|(k, labels)| {
                let lin = Linear::new(store, &format!("heads.hd.word.{k}"), cfg.ff_dim, labels.len(), rng);
                (k.to_string(), lin)
            })
            .collect();
        HdHead { ff, residual, heads }
    }

    /// Logits per query, each as a `1 x K` variable for its homograph.
    pub fn forward(&self, g: &mut Graph<'_>, e: Var, queries: &[HdQuery]) -> Result<Vec<Var>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        for q in queries {
            if !self.heads.contains_key(&q.homograph) {
                return Err(Error::Model(format!("no head for homograph {:?}", q.homograph)));
            }
            if q.tokens.is_empty() {
                return Err(Error::Data(format!("empty token set for {:?}", q.homograph)));
            }
        }
        let pooled = g.segment_mean(e, queries.iter().map(|q| q.tokens.clone()).collect());
        let h = self.ff.forward(g, pooled);
        let mut h = g.relu(h);
        if let Some(res) = &self.residual {
            let views: Vec<_> = queries.iter().map(|q| q.lm_mean.view()).collect();
            let lm = g.constant(ndarray::concatenate(ndarray::Axis(0), &views).expect("lm widths agree"));
            let r = res.forward(g, lm);
            h = g.add(h, r);
        }
        Ok(queries
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let row = g.slice_rows(h, i, i + 1);
                self.heads[&q.homograph].forward(g, row)
            })
            .collect())
    }

    pub fn shared_params(&self) -> Vec<ParamId> {
        let mut p = self.ff.params();
        if let Some(r) = &self.residual {
            p.extend(r.params());
        }
        p
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.shared_params();
        for h in self.heads.values() {
            p.extend(h.params());
        }
        p
    }
}
