//! The multi-task model: shared trunk, optional task heads, inference
//! entry points and the checkpoint archive.
//!
//! Checkpoint layout: the 8-byte magic `TTSFCKP1`, a little-endian `u64`
//! header length, a JSON header (config, ruleset manifest hash, lexicon,
//! encoder description and checksum, tensor index), then every tensor as
//! row-major little-endian `f64` in index order.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{beam_search, mask_logits, render, NormalizationPlan, RuleLogits};
use crate::encoder::{ContextualEncoder, DeskEncoder, DeskEncoderConfig, PreparedText, Trunk, TrunkConfig};
use crate::error::{Error, Result};
use crate::heads::{
    locate_homograph, mean_rows, word_segments, HdHead, HdQuery, HeadConfig, HomographLexicon, HomographSite,
    PosHead, PosTag, TnHead,
};
use crate::nn::{Graph, Mat, ParamId, ParamStore};
use crate::rules::Ruleset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Tn,
    Pos,
    Hd,
}

impl Task {
    /// The fixed training cycle order.
    pub const ALL: [Task; 3] = [Task::Tn, Task::Pos, Task::Hd];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Tn => "tn",
            Task::Pos => "pos",
            Task::Hd => "hd",
        }
    }

    /// Parameter-name prefix of this task's head.
    pub fn head_prefix(self) -> &'static str {
        match self {
            Task::Tn => "heads.tn.",
            Task::Pos => "heads.pos.",
            Task::Hd => "heads.hd.",
        }
    }

    /// Parses a comma-separated list such as `tn,hd`, returned in cycle order.
    pub fn parse_list(s: &str) -> Result<Vec<Task>> {
        let set: BTreeSet<Task> = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if set.is_empty() {
            return Err(Error::Config("empty task list".into()));
        }
        Ok(set.into_iter().collect())
    }

    pub fn list_name(tasks: &[Task]) -> String {
        tasks.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Task> {
        match s.to_ascii_lowercase().as_str() {
            "tn" => Ok(Task::Tn),
            "pos" => Ok(Task::Pos),
            "hd" => Ok(Task::Hd),
            other => Err(Error::Config(format!("unknown task {other:?} (expected tn, pos or hd)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub trunk: TrunkConfig,
    pub heads: HeadConfig,
    pub encoder: DeskEncoderConfig,
    /// Tasks that get a head; the others are absent entirely.
    pub tasks: Vec<Task>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            trunk: TrunkConfig::default(),
            heads: HeadConfig::default(),
            encoder: DeskEncoderConfig::default(),
            tasks: Task::ALL.to_vec(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.trunk.validate()?;
        if self.heads.ff_dim == 0 {
            return Err(Error::Config("heads.ff_dim must be positive".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("a model needs at least one task".into()));
        }
        let layers = self.encoder.layers;
        for l in [self.trunk.lm_first_layer, self.trunk.lm_last_layer] {
            if l == 0 || l > layers {
                return Err(Error::Config(format!("encoder tap {l} outside 1..={layers}")));
            }
        }
        Ok(())
    }
}

/// Rows of a prepared sentence's homograph in both streams.
pub fn homograph_site(p: &PreparedText, span: Range<usize>) -> Result<HomographSite> {
    locate_homograph(&p.seq, &p.subwords, span)
}

pub struct MultiTaskModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub trunk: Trunk,
    pub tn: Option<TnHead>,
    pub pos: Option<PosHead>,
    pub hd: Option<HdHead>,
    pub rules: Ruleset,
    pub lexicon: HomographLexicon,
    pub encoder: Box<dyn ContextualEncoder>,
}

impl fmt::Debug for MultiTaskModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiTaskModel")
            .field("tasks", &self.config.tasks)
            .field("params", &self.store.num_scalars())
            .field("rules", &self.rules.len())
            .field("homographs", &self.lexicon.len())
            .finish()
    }
}

impl MultiTaskModel {
    pub fn new(config: ModelConfig, rules: Ruleset, lexicon: HomographLexicon) -> Result<MultiTaskModel> {
        let encoder = DeskEncoder::new(config.encoder.clone())?;
        MultiTaskModel::with_encoder(config, rules, lexicon, Box::new(encoder))
    }

    /// Builds a model around any contextual encoder.
    pub fn with_encoder(
        config: ModelConfig,
        rules: Ruleset,
        lexicon: HomographLexicon,
        encoder: Box<dyn ContextualEncoder>,
    ) -> Result<MultiTaskModel> {
        config.validate()?;
        if !encoder.is_frozen() {
            return Err(Error::Config("the contextual encoder must be frozen".into()));
        }
        if config.tasks.contains(&Task::Hd) {
            lexicon.validate()?;
            if lexicon.is_empty() {
                return Err(Error::Config("homograph task needs a non-empty lexicon".into()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.trunk.seed);
        let mut store = ParamStore::new();
        let d = config.trunk.xformer_hidden;
        let trunk = Trunk::new(&mut store, config.trunk.clone(), encoder.dim(), &mut rng)?;
        let has = |t| config.tasks.contains(&t);
        let tn = has(Task::Tn).then(|| TnHead::new(&mut store, d, &config.heads, rules.len(), &mut rng));
        let pos = has(Task::Pos).then(|| PosHead::new(&mut store, d, &config.heads, &mut rng));
        let hd = has(Task::Hd)
            .then(|| HdHead::new(&mut store, d, encoder.dim(), &config.heads, &lexicon, &mut rng));
        Ok(MultiTaskModel {
            config,
            store,
            trunk,
            tn,
            pos,
            hd,
            rules,
            lexicon,
            encoder,
        })
    }

    pub fn has_task(&self, t: Task) -> bool {
        self.config.tasks.contains(&t)
    }

    fn need(&self, t: Task) -> Result<()> {
        if self.has_task(t) {
            Ok(())
        } else {
            Err(Error::Model(format!("model was built without the {t} head")))
        }
    }

    pub fn prepare(&self, text: &str) -> Result<PreparedText> {
        PreparedText::new(text, self.encoder.as_ref(), &self.config.trunk)
    }

    /// Checksum of the parameters under a name prefix.
    pub fn checksum(&self, prefix: &str) -> u64 {
        self.store.checksum(prefix)
    }

    pub fn encoder_checksum(&self) -> u64 {
        self.encoder.checksum()
    }

    pub fn trainable_params(&self) -> Vec<ParamId> {
        self.store.ids().filter(|&id| self.store.is_trainable(id)).collect()
    }

    /// Unmasked rule logits per sentence.
    pub fn rule_logits(&self, texts: &[&PreparedText]) -> Result<Vec<Mat>> {
        self.need(Task::Tn)?;
        let head = self.tn.as_ref().expect("tn head");
        let mut g = Graph::new(&self.store, false, 0);
        let (e, layout) = self.trunk.forward(&mut g, texts);
        let logits = head.forward(&mut g, e);
        let all = g.value(logits);
        Ok(layout
            .tokens
            .iter()
            .map(|r| all.slice(ndarray::s![r.clone(), ..]).to_owned())
            .collect())
    }

    /// Decodes one sentence from its logits.
    pub fn decode(&self, p: &PreparedText, logits: Mat, beam_width: usize) -> Result<(String, NormalizationPlan)> {
        let mask = self.rules.applicability_mask(&p.seq);
        let masked = mask_logits(&RuleLogits::new(logits), &mask)?;
        let plan = beam_search(&masked, &p.seq, &self.rules, beam_width)?;
        Ok((render(&plan, &self.rules, &p.seq), plan))
    }

    pub fn normalize_prepared(&self, texts: &[&PreparedText], beam_width: usize) -> Result<Vec<String>> {
        let logits = self.rule_logits(texts)?;
        texts
            .iter()
            .zip(logits)
            .map(|(p, l)| self.decode(p, l, beam_width).map(|(s, _)| s))
            .collect()
    }

    /// Normalizes each line; blank lines stay empty.
    pub fn normalize_lines(&self, lines: &[&str], beam_width: usize) -> Result<Vec<String>> {
        self.need(Task::Tn)?;
        let mut out = vec![String::new(); lines.len()];
        let idx: Vec<usize> = (0..lines.len()).filter(|&i| !lines[i].trim().is_empty()).collect();
        for chunk in idx.chunks(32) {
            let prepared = chunk.iter().map(|&i| self.prepare(lines[i])).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&PreparedText> = prepared.iter().collect();
            for (&i, s) in chunk.iter().zip(self.normalize_prepared(&refs, beam_width)?) {
                out[i] = s;
            }
        }
        Ok(out)
    }

    pub fn normalize(&self, text: &str, beam_width: usize) -> Result<String> {
        Ok(self.normalize_lines(&[text], beam_width)?.remove(0))
    }

    /// Predicted tag per word for each sentence.
    pub fn tag_prepared(&self, texts: &[&PreparedText]) -> Result<Vec<Vec<PosTag>>> {
        self.need(Task::Pos)?;
        let head = self.pos.as_ref().expect("pos head");
        let mut g = Graph::new(&self.store, false, 0);
        let (e, layout) = self.trunk.forward(&mut g, texts);
        let words = word_segments(texts, &layout.tokens);
        let logits = head.forward(&mut g, e, words);
        let v = g.value(logits);
        let mut row = 0;
        Ok(texts
            .iter()
            .map(|p| {
                let w = p.seq.word_count();
                let tags = (row..row + w).map(|r| PosTag::ALL[argmax(v.row(r).iter().copied())]).collect();
                row += w;
                tags
            })
            .collect())
    }

    /// `(word, tag)` pairs per line; blank lines give no pairs.
    pub fn tag_lines(&self, lines: &[&str]) -> Result<Vec<Vec<(String, PosTag)>>> {
        self.need(Task::Pos)?;
        let mut out = vec![Vec::new(); lines.len()];
        let idx: Vec<usize> = (0..lines.len()).filter(|&i| !lines[i].trim().is_empty()).collect();
        for chunk in idx.chunks(32) {
            let prepared = chunk.iter().map(|&i| self.prepare(lines[i])).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&PreparedText> = prepared.iter().collect();
            for ((&i, p), tags) in chunk.iter().zip(&prepared).zip(self.tag_prepared(&refs)?) {
                out[i] = p.seq.words().into_iter().zip(tags).collect();
            }
        }
        Ok(out)
    }

    /// Builds head queries for a batch of `(sentence, site, homograph)`.
    pub fn hd_queries(&self, items: &[(&PreparedText, &HomographSite, &str)], token_offsets: &[usize]) -> Vec<HdQuery> {
        items
            .iter()
            .zip(token_offsets)
            .map(|((p, site, h), off)| HdQuery {
                homograph: h.to_string(),
                tokens: site.tokens.iter().map(|t| t + off).collect(),
                lm_mean: mean_rows(&p.lm_final, &site.subwords),
            })
            .collect()
    }

    /// Pronunciation logits per item.
    pub fn hd_logits(&self, items: &[(&PreparedText, &HomographSite, &str)]) -> Result<Vec<Vec<f64>>> {
        self.need(Task::Hd)?;
        let head = self.hd.as_ref().expect("hd head");
        let texts: Vec<&PreparedText> = items.iter().map(|i| i.0).collect();
        let mut g = Graph::new(&self.store, false, 0);
        let (e, layout) = self.trunk.forward(&mut g, &texts);
        let offsets: Vec<usize> = layout.tokens.iter().map(|r| r.start).collect();
        let queries = self.hd_queries(items, &offsets);
        let out = head.forward(&mut g, e, &queries)?;
        Ok(out.into_iter().map(|v| g.value(v).iter().copied().collect()).collect())
    }

    /// Chosen pronunciation label for the homograph at `span` (char offsets).
    pub fn homograph(&self, text: &str, span: Range<usize>) -> Result<String> {
        self.need(Task::Hd)?;
        let key = crate::tokenizer::char_slice(text, &span)
            .ok_or_else(|| Error::Data(format!("span {span:?} outside the sentence")))?
            .to_lowercase();
        let labels = self
            .lexicon
            .labels(&key)
            .ok_or_else(|| Error::Data(format!("unknown homograph {key:?}")))?;
        let p = self.prepare(text)?;
        let site = homograph_site(&p, span)?;
        let logits = self.hd_logits(&[(&p, &site, &key)])?;
        Ok(labels[argmax(logits[0].iter().copied())].clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: Vec<TensorEntry> = self
            .store
            .iter()
            .map(|(_, name, v)| TensorEntry {
                name: name.to_string(),
                rows: v.nrows(),
                cols: v.ncols(),
            })
            .collect();
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            manifest_hash: self.rules.manifest_hash().to_string(),
            lexicon: self.lexicon.to_text(),
            encoder: self.encoder.describe(),
            encoder_checksum: format!("{:016x}", self.encoder.checksum()),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Model(e.to_string()))?;
        let mut buf = Vec::with_capacity(16 + json.len() + self.store.num_scalars() * 8);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, _, v) in self.store.iter() {
            for x in v.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint trained against `rules`; a different ruleset
    /// manifest is rejected.
    pub fn load(path: &Path, rules: Ruleset) -> Result<MultiTaskModel> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let corrupt = |m: &str| Error::Model(format!("{}: {m}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| corrupt(&e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(corrupt(&format!("unsupported format {:?}", header.format)));
        }
        if header.manifest_hash != rules.manifest_hash() {
            return Err(Error::Config(format!(
                "checkpoint was trained against ruleset {} but the active manifest hashes to {}",
                header.manifest_hash,
                rules.manifest_hash()
            )));
        }
        let lexicon = HomographLexicon::parse(&header.lexicon, path)?;
        let mut model = MultiTaskModel::new(header.config, rules, lexicon)?;
        let checksum = format!("{:016x}", model.encoder.checksum());
        if checksum != header.encoder_checksum {
            return Err(corrupt("contextual encoder weights differ from the ones used in training"));
        }
        if header.tensors.len() != model.store.len() {
            return Err(corrupt("tensor inventory does not match the configuration"));
        }
        let mut off = 16 + hlen;
        for t in &header.tensors {
            let n = t.rows * t.cols;
            let raw = bytes.get(off..off + n * 8).ok_or_else(|| corrupt("truncated tensor data"))?;
            let vals: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Array2::from_shape_vec((t.rows, t.cols), vals).map_err(|e| corrupt(&e.to_string()))?;
            model.store.set(&t.name, m)?;
            off += n * 8;
        }
        if off != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TTSFCKP1";
const CHECKPOINT_FORMAT: &str = "ttsfront-checkpoint/v1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: ModelConfig,
    manifest_hash: String,
    lexicon: String,
    encoder: serde_json::Value,
    encoder_checksum: String,
    tensors: Vec<TensorEntry>,
}

/// Index of the largest value; the first one on ties.
pub fn argmax(it: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in it.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// A small configuration for tests and quick experiments.
pub fn toy_config(seed: u64) -> ModelConfig {
    ModelConfig {
        trunk: TrunkConfig::toy(seed),
        heads: HeadConfig {
            ff_dim: 8,
            hd_residual: true,
        },
        encoder: DeskEncoderConfig {
            layers: 2,
            dim: 8,
            heads: 2,
            ff_dim: 8,
            vocab: 256,
            max_piece: 6,
            seed: seed ^ 0x9e37,
        },
        tasks: Task::ALL.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexicon() -> HomographLexicon {
        let mut lex = HomographLexicon::new();
        lex.insert("read", vec!["read_past".into(), "read_present".into()]).unwrap();
        lex
    }

    #[test]
    fn task_lists() {
        assert_eq!(Task::parse_list("hd, tn").unwrap(), vec![Task::Tn, Task::Hd]);
        assert!(Task::parse_list("tn,xx").is_err());
        assert!(Task::parse_list("").is_err());
        assert_eq!(Task::list_name(&Task::ALL), "tn,pos,hd");
    }

    #[test]
    fn inference_shapes() {
        let model = MultiTaskModel::new(toy_config(1), Ruleset::builtin(), lexicon()).unwrap();
        let out = model.normalize_lines(&["St. Mary's St.", "", "7/8 inches"], 4).unwrap();
        assert_eq!(out[1], "");
        assert!(!out[0].is_empty());
        let tags = model.tag_lines(&["the dog barks ."]).unwrap();
        assert_eq!(tags[0].len(), 4);
        let label = model.homograph("I read it", 2..6).unwrap();
        assert!(label == "read_past" || label == "read_present");
        assert!(model.homograph("I lead it", 2..6).is_err());
    }

    #[test]
    fn ablated_model_has_no_head() {
        let mut cfg = toy_config(1);
        cfg.tasks = vec![Task::Pos];
        let model = MultiTaskModel::new(cfg, Ruleset::builtin(), HomographLexicon::new()).unwrap();
        assert!(model.normalize("hi", 4).is_err());
        assert!(model.store.iter().all(|(_, n, _)| !n.starts_with("heads.tn")));
    }

    #[test]
    fn checkpoint_round_trip_and_hash_check() {
        let model = MultiTaskModel::new(toy_config(3), Ruleset::builtin(), lexicon()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let back = MultiTaskModel::load(&path, Ruleset::builtin()).unwrap();
        assert_eq!(back.checksum(""), model.checksum(""));
        assert_eq!(back.config, model.config);
        assert_eq!(back.lexicon, model.lexicon);
        let a = model.normalize("Dr. Lee lives on 12th St.", 4).unwrap();
        assert_eq!(back.normalize("Dr. Lee lives on 12th St.", 4).unwrap(), a);

        let other = crate::rules::BUILTIN_MANIFEST.replace("version = 1", "version = 2");
        let rules = Ruleset::from_manifest_str(&other).unwrap();
        let err = MultiTaskModel::load(&path, rules).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        std::fs::write(&path, b"nonsense").unwrap();
        assert!(MultiTaskModel::load(&path, Ruleset::builtin()).is_err());
    }
}
