//! The shared trunk: a character-level token stream (conv, mean pool,
//! Bi-LSTM, transformer layer) fused by cross-attention with embeddings
//! from a frozen contextual encoder.

use std::ops::Range;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{
    segment_positions, sinusoid_rows, AttnBlock, BatchNorm, BiLstm, Embedding, Linear,
    TransformerBlock,
};
use crate::nn::{Graph, Mat, ParamId, ParamStore, Var};
use crate::tokenizer::{tokenize, TokenSequence};

/// Characters below this codepoint get their own embedding row.
pub const CHAR_BUCKETS: usize = 512;
/// Row shared by every other scalar value.
pub const CHAR_OUT_OF_RANGE: usize = CHAR_BUCKETS;
pub const CHAR_VOCAB: usize = CHAR_BUCKETS + 1;

pub fn char_id(c: char) -> usize {
    let cp = c as usize;
    if cp < CHAR_BUCKETS {
        cp
    } else {
        CHAR_OUT_OF_RANGE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrunkConfig {
    pub char_emb_dim: usize,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub conv_dropout: f64,
    pub lstm_hidden: usize,
    pub xformer_hidden: usize,
    pub xformer_ff_dim: usize,
    pub attn_heads: usize,
    pub xformer_dropout: f64,
    pub lm_first_layer: usize,
    pub lm_last_layer: usize,
    pub seed: u64,
}

impl Default for TrunkConfig {
    fn default() -> Self {
        TrunkConfig {
            char_emb_dim: 32,
            conv_layers: 1,
            conv_channels: 64,
            conv_kernel: 5,
            conv_dropout: 0.2,
            lstm_hidden: 128,
            xformer_hidden: 256,
            xformer_ff_dim: 1024,
            attn_heads: 4,
            xformer_dropout: 0.1,
            lm_first_layer: 1,
            lm_last_layer: 12,
            seed: 0,
        }
    }
}

impl TrunkConfig {
    /// A tiny configuration for gradient checks and fast tests.
    pub fn toy(seed: u64) -> TrunkConfig {
        TrunkConfig {
            char_emb_dim: 4,
            conv_layers: 1,
            conv_channels: 4,
            conv_kernel: 3,
            conv_dropout: 0.2,
            lstm_hidden: 4,
            xformer_hidden: 8,
            xformer_ff_dim: 8,
            attn_heads: 2,
            xformer_dropout: 0.1,
            lm_first_layer: 1,
            lm_last_layer: 2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("trunk: {m}")));
        if self.xformer_hidden == 0 || self.attn_heads == 0 || self.xformer_hidden % self.attn_heads != 0 {
            return bad("xformer_hidden must be a positive multiple of attn_heads");
        }
        if 2 * self.lstm_hidden != self.xformer_hidden {
            return bad("xformer_hidden must equal 2 * lstm_hidden");
        }
        for (name, p) in [("conv_dropout", self.conv_dropout), ("xformer_dropout", self.xformer_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1)"));
            }
        }
        if self.conv_kernel % 2 == 0 {
            return bad("conv_kernel must be odd for same padding");
        }
        if [self.char_emb_dim, self.conv_layers, self.conv_channels, self.lstm_hidden, self.xformer_ff_dim]
            .contains(&0)
        {
            return bad("dimensions must be positive");
        }
        if self.lm_first_layer == 0 || self.lm_last_layer == 0 {
            return bad("encoder layers are 1-based");
        }
        Ok(())
    }
}

/// A `length x dim` matrix of finite embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub values: Mat,
}

impl EmbeddingSequence {
    pub fn new(values: Mat) -> Result<EmbeddingSequence> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite embedding".into()));
        }
        Ok(EmbeddingSequence { values })
    }

    pub fn length(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subword {
    pub text: String,
    /// Char offsets into the source text.
    pub span: Range<usize>,
}

pub trait ContextualEncoder: Send + Sync {
    /// Ordered, non-overlapping pieces covering every non-whitespace char.
    fn subword_tokenize(&self, text: &str) -> Vec<Subword>;

    /// Hidden states after `layer` (1-based), one row per subword.
    fn layer_embeddings(&self, text: &str, layer: usize) -> Result<Mat>;

    /// Several layers at once; implementations may share the forward pass.
    fn layers(&self, text: &str, layers: &[usize]) -> Result<Vec<Mat>> {
        layers.iter().map(|&l| self.layer_embeddings(text, l)).collect()
    }

    fn num_layers(&self) -> usize;

    fn dim(&self) -> usize;

    fn is_frozen(&self) -> bool;

    /// Fingerprint of the encoder weights.
    fn checksum(&self) -> u64;

    fn describe(&self) -> serde_json::Value;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskEncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub vocab: usize,
    /// Longest alphanumeric piece before splitting.
    pub max_piece: usize,
    pub seed: u64,
}

impl Default for DeskEncoderConfig {
    fn default() -> Self {
        DeskEncoderConfig {
            layers: 12,
            dim: 64,
            heads: 4,
            ff_dim: 128,
            vocab: 8192,
            max_piece: 8,
            seed: 1234,
        }
    }
}

/// Randomly initialized transformer standing in for a pre-trained LM.
/// Its weights live in a private store that nothing outside can mutate.
pub struct DeskEncoder {
    config: DeskEncoderConfig,
    store: ParamStore,
    embed: Embedding,
    blocks: Vec<TransformerBlock>,
}

impl DeskEncoder {
    pub fn new(config: DeskEncoderConfig) -> Result<DeskEncoder> {
        if config.layers == 0 || config.dim == 0 || config.heads == 0 || config.dim % config.heads != 0 {
            return Err(Error::Config("desk encoder: dim must be a positive multiple of heads".into()));
        }
        if config.vocab == 0 || config.max_piece == 0 {
            return Err(Error::Config("desk encoder: vocab and max_piece must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let embed = Embedding::new(&mut store, "lm.embed", config.vocab, config.dim, &mut rng);
        let blocks = (0..config.layers)
            .map(|i| {
                TransformerBlock::new(
                    &mut store,
                    &format!("lm.layer{}", i + 1),
                    config.dim,
                    config.heads,
                    config.ff_dim,
                    0.0,
                    false,
                    &mut rng,
                )
            })
            .collect();
        Ok(DeskEncoder {
            config,
            store,
            embed,
            blocks,
        })
    }

    pub fn config(&self) -> &DeskEncoderConfig {
        &self.config
    }

    fn piece_id(&self, piece: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in piece.bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
        }
        (h % self.config.vocab as u64) as usize
    }

    fn run(&self, text: &str, wanted: &[usize]) -> Result<Vec<Mat>> {
        for &l in wanted {
            if l == 0 || l > self.config.layers {
                return Err(Error::Config(format!(
                    "encoder layer {l} out of range 1..={}",
                    self.config.layers
                )));
            }
        }
        let pieces = self.subword_tokenize(text);
        let m = pieces.len();
        if m == 0 {
            return Ok(wanted.iter().map(|_| Array2::zeros((0, self.config.dim))).collect());
        }
        let ids = pieces.iter().map(|p| self.piece_id(&p.text)).collect();
        let mut g = Graph::new(&self.store, false, 0);
        let x = self.embed.forward(&mut g, ids);
        let pe = g.constant(sinusoid_rows(0..m, self.config.dim));
        let mut h = g.add(x, pe);
        let blocks = [AttnBlock { q: 0..m, k: 0..m }];
        let last = wanted.iter().copied().max().unwrap_or(0);
        let mut per_layer = Vec::with_capacity(last);
        for block in &self.blocks[..last] {
            h = block.forward(&mut g, h, None, &blocks);
            per_layer.push(h);
        }
        Ok(wanted.iter().map(|&l| g.value(per_layer[l - 1]).clone()).collect())
    }
}

impl ContextualEncoder for DeskEncoder {
    fn subword_tokenize(&self, text: &str) -> Vec<Subword> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            if c.is_alphanumeric() {
                while i < chars.len() && chars[i].is_alphanumeric() && i - start < self.config.max_piece {
                    i += 1;
                }
            } else {
                i += 1;
            }
            out.push(Subword {
                text: chars[start..i].iter().collect(),
                span: start..i,
            });
        }
        out
    }

    fn layer_embeddings(&self, text: &str, layer: usize) -> Result<Mat> {
        Ok(self.run(text, &[layer])?.remove(0))
    }

    fn layers(&self, text: &str, layers: &[usize]) -> Result<Vec<Mat>> {
        self.run(text, layers)
    }

    fn num_layers(&self) -> usize {
        self.config.layers
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn is_frozen(&self) -> bool {
        true
    }

    fn checksum(&self) -> u64 {
        self.store.checksum("")
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "desk", "config": self.config })
    }
}

/// `encode_lm_stream`: the encoder's hidden states at a 1-based layer.
pub fn encode_lm_stream(text: &str, lm: &dyn ContextualEncoder, layer: usize) -> Result<EmbeddingSequence> {
    if layer == 0 || layer > lm.num_layers() {
        return Err(Error::Config(format!(
            "encoder layer {layer} out of range 1..={}",
            lm.num_layers()
        )));
    }
    EmbeddingSequence::new(lm.layer_embeddings(text, layer)?)
}

/// A sentence with everything the trunk and heads need, computed once.
/// Encoder outputs are cached here since the encoder never changes.
#[derive(Debug, Clone)]
pub struct PreparedText {
    pub text: String,
    pub seq: TokenSequence,
    pub char_ids: Vec<Vec<usize>>,
    pub subwords: Vec<Subword>,
    /// First tapped layer, feeding cross-attention.
    pub lm_first: Mat,
    /// Last tapped layer, feeding the homograph residual.
    pub lm_final: Mat,
}

impl PreparedText {
    pub fn new(text: &str, lm: &dyn ContextualEncoder, cfg: &TrunkConfig) -> Result<PreparedText> {
        let seq = tokenize(text);
        if seq.is_empty() {
            return Err(Error::Data("cannot encode an empty sentence".into()));
        }
        let subwords = lm.subword_tokenize(text);
        if subwords.is_empty() {
            return Err(Error::Model("contextual encoder produced no subwords".into()));
        }
        let mut layers = lm.layers(text, &[cfg.lm_first_layer, cfg.lm_last_layer])?;
        let lm_final = layers.pop().expect("two layers");
        let lm_first = layers.pop().expect("two layers");
        if lm_first.nrows() != subwords.len() || lm_final.nrows() != subwords.len() {
            return Err(Error::Model("encoder rows do not match its subwords".into()));
        }
        let char_ids = seq
            .tokens
            .iter()
            .map(|t| t.text.chars().map(char_id).collect())
            .collect();
        Ok(PreparedText {
            text: text.to_string(),
            seq,
            char_ids,
            subwords,
            lm_first,
            lm_final,
        })
    }

    pub fn n(&self) -> usize {
        self.seq.len()
    }

    pub fn m(&self) -> usize {
        self.subwords.len()
    }
}

/// Row layout of a packed batch of sentences.
#[derive(Debug, Clone)]
pub struct BatchLayout {
    /// Token rows per sentence.
    pub tokens: Vec<Range<usize>>,
    /// Subword rows per sentence.
    pub subwords: Vec<Range<usize>>,
}

impl BatchLayout {
    pub fn of(texts: &[&PreparedText]) -> BatchLayout {
        let (mut t, mut s) = (0, 0);
        let mut tokens = Vec::with_capacity(texts.len());
        let mut subwords = Vec::with_capacity(texts.len());
        for p in texts {
            tokens.push(t..t + p.n());
            subwords.push(s..s + p.m());
            t += p.n();
            s += p.m();
        }
        BatchLayout { tokens, subwords }
    }

    pub fn self_blocks(&self) -> Vec<AttnBlock> {
        self.tokens.iter().map(|r| AttnBlock { q: r.clone(), k: r.clone() }).collect()
    }

    pub fn cross_blocks(&self) -> Vec<AttnBlock> {
        self.tokens
            .iter()
            .zip(&self.subwords)
            .map(|(q, k)| AttnBlock { q: q.clone(), k: k.clone() })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Trunk {
    pub config: TrunkConfig,
    pub char_embed: Embedding,
    pub convs: Vec<(Linear, BatchNorm)>,
    pub lstm: BiLstm,
    pub xformer: TransformerBlock,
    pub kv_proj: Linear,
    pub cross: TransformerBlock,
}

impl Trunk {
    pub fn new(store: &mut ParamStore, config: TrunkConfig, lm_dim: usize, rng: &mut ChaCha8Rng) -> Result<Trunk> {
        config.validate()?;
        let c = &config;
        let char_embed = Embedding::new(store, "trunk.char_embed", CHAR_VOCAB, c.char_emb_dim, rng);
        let convs = (0..c.conv_layers)
            .map(|i| {
                let d_in = if i == 0 { c.char_emb_dim } else { c.conv_channels };
                (
                    Linear::new(store, &format!("trunk.conv{i}"), d_in * c.conv_kernel, c.conv_channels, rng),
                    BatchNorm::new(store, &format!("trunk.conv{i}.bn"), c.conv_channels),
                )
            })
            .collect();
        let d = c.xformer_hidden;
        let lstm = BiLstm::new(store, "trunk.lstm", c.conv_channels, c.lstm_hidden, rng);
        let xformer = TransformerBlock::new(store, "trunk.xformer", d, c.attn_heads, c.xformer_ff_dim, c.xformer_dropout, false, rng);
        let kv_proj = Linear::new(store, "trunk.kv_proj", lm_dim, d, rng);
        let cross = TransformerBlock::new(store, "trunk.cross", d, c.attn_heads, c.xformer_ff_dim, c.xformer_dropout, true, rng);
        Ok(Trunk {
            config,
            char_embed,
            convs,
            lstm,
            xformer,
            kv_proj,
            cross,
        })
    }

    /// Character conv stack and per-token mean pooling: one
    /// `conv_channels`-wide row per token.
    pub fn pooled_tokens(&self, g: &mut Graph<'_>, texts: &[&PreparedText]) -> Var {
        let k = self.config.conv_kernel;
        let half = k / 2;
        let mut ids = Vec::new();
        let mut table = Vec::new();
        let mut segments = Vec::new();
        for p in texts {
            for tok in &p.char_ids {
                let base = ids.len();
                let len = tok.len();
                ids.extend_from_slice(tok);
                for r in 0..len {
                    for j in 0..k {
                        let src = (r + j).checked_sub(half).filter(|&s| s < len);
                        table.push(src.map(|s| base + s));
                    }
                }
                segments.push((base..base + len).collect());
            }
        }
        let mut h = self.char_embed.forward(g, ids);
        for (conv, bn) in &self.convs {
            let u = g.unfold(h, table.clone(), k);
            h = conv.forward(g, u);
            h = bn.forward(g, h);
            h = g.relu(h);
            h = g.dropout(h, self.config.conv_dropout);
        }
        g.segment_mean(h, segments)
    }

    /// `encode_tn_stream` over a packed batch: `e_t`, one row per token.
    pub fn tn_stream(&self, g: &mut Graph<'_>, texts: &[&PreparedText], layout: &BatchLayout) -> Var {
        let pooled = self.pooled_tokens(g, texts);
        let h = self.lstm.forward(g, pooled, &layout.tokens);
        let pe = g.constant(sinusoid_rows(segment_positions(&layout.tokens), self.config.xformer_hidden));
        let h = g.add(h, pe);
        self.xformer.forward(g, h, None, &layout.self_blocks())
    }

    /// Fuses `e_t` (queries) with projected encoder states (keys and
    /// values). Output has the row count of `e_t`.
    pub fn cross_attend(&self, g: &mut Graph<'_>, e_t: Var, e_a: Var, layout: &BatchLayout) -> Var {
        let pe = g.constant(sinusoid_rows(segment_positions(&layout.tokens), self.config.xformer_hidden));
        let q = g.add(e_t, pe);
        let kv = self.kv_proj.forward(g, e_a);
        self.cross.forward(g, q, Some(kv), &layout.cross_blocks())
    }

    /// Full trunk over a batch: the shared sequence `e` for every token.
    pub fn forward(&self, g: &mut Graph<'_>, texts: &[&PreparedText]) -> (Var, BatchLayout) {
        let layout = BatchLayout::of(texts);
        let e_t = self.tn_stream(g, texts, &layout);
        let views: Vec<_> = texts.iter().map(|p| p.lm_first.view()).collect();
        let lm = ndarray::concatenate(ndarray::Axis(0), &views).expect("encoder widths agree");
        let e_a = g.constant(lm);
        (self.cross_attend(g, e_t, e_a, &layout), layout)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.char_embed.table];
        for (conv, bn) in &self.convs {
            p.extend(conv.params());
            p.extend(bn.params());
        }
        p.extend(self.lstm.params());
        p.extend(self.xformer.params());
        p.extend(self.kv_proj.params());
        p.extend(self.cross.params());
        p
    }
}

/// Single-sentence `encode_tn_stream` in evaluation mode.
pub fn encode_tn_stream(store: &ParamStore, trunk: &Trunk, text: &PreparedText) -> Result<EmbeddingSequence> {
    let mut g = Graph::new(store, false, 0);
    let layout = BatchLayout::of(&[text]);
    let e = trunk.tn_stream(&mut g, &[text], &layout);
    EmbeddingSequence::new(g.value(e).clone())
}

/// Single-sentence `cross_attend` in evaluation mode.
pub fn cross_attend(
    store: &ParamStore,
    trunk: &Trunk,
    e_t: &EmbeddingSequence,
    e_a: &EmbeddingSequence,
) -> Result<EmbeddingSequence> {
    let (n, m) = (e_t.length(), e_a.length());
    if n == 0 || m == 0 {
        return Err(Error::Shape(format!("cross_attend needs n, m >= 1 (got n={n}, m={m})")));
    }
    if e_t.dim() != trunk.config.xformer_hidden || e_a.dim() != trunk.kv_proj_in(store) {
        return Err(Error::Shape("cross_attend input widths do not match the trunk".into()));
    }
    let mut g = Graph::new(store, false, 0);
    let q = g.constant(e_t.values.clone());
    let kv = g.constant(e_a.values.clone());
    let layout = BatchLayout {
        tokens: vec![0..n],
        subwords: vec![0..m],
    };
    let out = trunk.cross_attend(&mut g, q, kv, &layout);
    EmbeddingSequence::new(g.value(out).clone())
}

impl Trunk {
    fn kv_proj_in(&self, store: &ParamStore) -> usize {
        store.get(self.kv_proj.w).nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;

    fn toy_lm() -> DeskEncoder {
        DeskEncoder::new(DeskEncoderConfig {
            layers: 2,
            dim: 8,
            heads: 2,
            ff_dim: 8,
            vocab: 64,
            max_piece: 4,
            seed: 1,
        })
        .unwrap()
    }

    fn toy_trunk(store: &mut ParamStore) -> Trunk {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        Trunk::new(store, TrunkConfig::toy(2), 8, &mut rng).unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        TrunkConfig::default().validate().unwrap();
        let mut c = TrunkConfig::default();
        c.attn_heads = 3;
        assert!(c.validate().is_err());
        c = TrunkConfig::default();
        c.conv_dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn char_ids_bucket() {
        assert_eq!(char_id('a'), 97);
        assert_eq!(char_id('é'), 233);
        assert_eq!(char_id('€'), CHAR_OUT_OF_RANGE);
        assert_eq!(char_id('日'), CHAR_OUT_OF_RANGE);
    }

    #[test]
    fn subwords_cover_non_whitespace() {
        let lm = DeskEncoder::new(DeskEncoderConfig::default()).unwrap();
        let text = "St. Mary's internationalization, $7.50!";
        let pieces = lm.subword_tokenize(text);
        let chars: Vec<char> = text.chars().collect();
        let mut covered = vec![false; chars.len()];
        let mut last = 0;
        for p in &pieces {
            assert!(p.span.start >= last);
            last = p.span.end;
            let s: String = chars[p.span.clone()].iter().collect();
            assert_eq!(s, p.text);
            for i in p.span.clone() {
                covered[i] = true;
            }
        }
        for (c, cov) in chars.iter().zip(covered) {
            assert_eq!(!c.is_whitespace(), cov);
        }
        assert!(pieces.iter().any(|p| p.text == "internat"));
    }

    #[test]
    fn lm_stream_shapes_and_layers() {
        let lm = DeskEncoder::new(DeskEncoderConfig::default()).unwrap();
        let e = encode_lm_stream("hello world", &lm, 1).unwrap();
        assert_eq!((e.length(), e.dim()), (2, 64));
        let again = encode_lm_stream("hello world", &lm, 1).unwrap();
        assert_eq!(e, again);
        assert!(encode_lm_stream("hello world", &lm, 0).is_err());
        assert!(encode_lm_stream("hello world", &lm, 13).is_err());
        let both = lm.layers("hello world", &[1, 12]).unwrap();
        assert_eq!(both[0], e.values);
        assert_eq!(both[1], lm.layer_embeddings("hello world", 12).unwrap());
        assert_ne!(both[0], both[1]);
    }

    #[test]
    fn tn_stream_shape_and_eval_determinism() {
        let lm = toy_lm();
        let mut store = ParamStore::new();
        let trunk = toy_trunk(&mut store);
        let p = PreparedText::new("I paid $5 on 1/2", &lm, &trunk.config).unwrap();
        assert_eq!(p.n(), 8);
        let a = encode_tn_stream(&store, &trunk, &p).unwrap();
        let b = encode_tn_stream(&store, &trunk, &p).unwrap();
        assert_eq!((a.length(), a.dim()), (8, 8));
        assert_eq!(a, b);
    }

    #[test]
    fn repeated_characters_pool_like_one() {
        let lm = toy_lm();
        let mut store = ParamStore::new();
        let trunk = toy_trunk(&mut store);
        let p = PreparedText::new("a aaa", &lm, &trunk.config).unwrap();
        let mut g = Graph::new(&store, false, 0);
        let pooled = trunk.pooled_tokens(&mut g, &[&p]);
        let v = g.value(pooled);
        // same padding means edge characters differ; with kernel 1 they would not
        assert_eq!(v.nrows(), 2);
        let mut cfg = TrunkConfig::toy(2);
        cfg.conv_kernel = 1;
        let mut store1 = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trunk1 = Trunk::new(&mut store1, cfg, 8, &mut rng).unwrap();
        let mut g = Graph::new(&store1, false, 0);
        let pooled = trunk1.pooled_tokens(&mut g, &[&p]);
        let v = g.value(pooled);
        for j in 0..v.ncols() {
            assert!((v[[0, j]] - v[[1, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_attend_length_follows_queries() {
        let mut store = ParamStore::new();
        let trunk = toy_trunk(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, m) in [(3, 7), (3, 50), (1, 1), (4, 1)] {
            let mut s = ParamStore::new();
            let q = s.add_normal("q", n, 8, 1.0, &mut rng);
            let k = s.add_normal("k", m, 8, 1.0, &mut rng);
            let e_t = EmbeddingSequence::new(s.get(q).clone()).unwrap();
            let e_a = EmbeddingSequence::new(s.get(k).clone()).unwrap();
            let out = cross_attend(&store, &trunk, &e_t, &e_a).unwrap();
            assert_eq!((out.length(), out.dim()), (n, 8));
        }
        let e_t = EmbeddingSequence::new(Array2::zeros((0, 8))).unwrap();
        let e_a = EmbeddingSequence::new(Array2::zeros((2, 8))).unwrap();
        assert!(cross_attend(&store, &trunk, &e_t, &e_a).is_err());
    }

    #[test]
    fn packed_batch_matches_single_sentences() {
        let lm = toy_lm();
        let mut store = ParamStore::new();
        let trunk = toy_trunk(&mut store);
        let a = PreparedText::new("Dr. Smith lives on Elm Dr.", &lm, &trunk.config).unwrap();
        let b = PreparedText::new("7/8 inches", &lm, &trunk.config).unwrap();
        let mut g = Graph::new(&store, false, 0);
        let (e, layout) = trunk.forward(&mut g, &[&a, &b]);
        let joint = g.value(e).clone();
        let mut g = Graph::new(&store, false, 0);
        let (eb, _) = trunk.forward(&mut g, &[&b]);
        let diff = (&joint.slice(ndarray::s![layout.tokens[1].clone(), ..]) - g.value(eb))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn trunk_gradients() {
        let lm = toy_lm();
        let mut store = ParamStore::new();
        let trunk = toy_trunk(&mut store);
        let a = PreparedText::new("Go 12 km", &lm, &trunk.config).unwrap();
        let b = PreparedText::new("Hi!", &lm, &trunk.config).unwrap();
        let ids = trunk.params();
        let report = check_gradients(&mut store, &ids, 1e-5, |g| {
            let (e, _) = trunk.forward(g, &[&a, &b]);
            let y = g.tanh(e);
            g.sum_all(y)
        });
        assert!(report.passed(1e-4), "{report:?}");
    }
}
