use std::ops::Range;

use ndarray::Array2;
use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Mat, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Linear {
        Linear {
            w: store.add_glorot(&format!("{name}.w"), d_in, d_out, rng),
            b: store.add_const(&format!("{name}.b"), 1, d_out, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gain: store.add_const(&format!("{name}.gain"), 1, d, 1.0),
            bias: store.add_const(&format!("{name}.bias"), 1, d, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> BatchNorm {
        BatchNorm {
            gain: store.add_const(&format!("{name}.gain"), 1, d, 1.0),
            bias: store.add_const(&format!("{name}.bias"), 1, d, 0.0),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Array2::zeros((1, d))),
            running_var: store.add_buffer(&format!("{name}.running_var"), Array2::ones((1, d))),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.batch_norm(x, gain, bias, self.running_mean, self.running_var)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

/// Folds recorded batch statistics into running buffers.
pub fn update_running_stats(store: &mut ParamStore, stats: &[super::graph::BatchStats]) {
    let m = BatchNorm::MOMENTUM;
    for s in stats {
        let rm = store.get_mut(s.running_mean);
        for (r, v) in rm.iter_mut().zip(&s.mean) {
            *r = (1.0 - m) * *r + m * v;
        }
        let rv = store.get_mut(s.running_var);
        for (r, v) in rv.iter_mut().zip(&s.var) {
            *r = (1.0 - m) * *r + m * v;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Embedding {
        Embedding {
            table: store.add_normal(&format!("{name}.table"), vocab, dim, 1.0 / (dim as f64).sqrt(), rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, ids: Vec<usize>) -> Var {
        let t = g.param(self.table);
        g.gather(t, ids)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut impl Rng) -> FeedForward {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.inner"), d, hidden, rng),
            outer: Linear::new(store, &format!("{name}.outer"), hidden, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, dropout: f64) -> Var {
        let h = self.inner.forward(g, x);
        let h = g.relu(h);
        let h = g.dropout(h, dropout);
        self.outer.forward(g, h)
    }
}

/// One direction of an LSTM with gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut impl Rng) -> LstmCell {
        let mut bias = Array2::zeros((1, 4 * hidden));
        bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        LstmCell {
            w_ih: store.add_glorot(&format!("{name}.w_ih"), d_in, 4 * hidden, rng),
            w_hh: store.add_glorot(&format!("{name}.w_hh"), hidden, 4 * hidden, rng),
            b: store.add(&format!("{name}.b"), bias),
            hidden,
        }
    }

    /// Runs over packed sequences. `segments` are contiguous row ranges of
    /// `x`, one per sequence; the result has one row per row of `x`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, segments: &[Range<usize>], reverse: bool) -> Var {
        let h_dim = self.hidden;
        let mut order: Vec<usize> = (0..segments.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(segments[i].len()));
        let max_len = segments.iter().map(|s| s.len()).max().unwrap_or(0);
        let total_rows = segments.iter().map(|s| s.len()).sum::<usize>();

        let w_ih = g.param(self.w_ih);
        let w_hh = g.param(self.w_hh);
        let b = g.param(self.b);
        let xw = g.matmul(x, w_ih);
        let xw = g.add_row(xw, b);

        let mut steps = Vec::with_capacity(max_len);
        // output slot of each source row in the concatenation of `steps`
        let mut slot = vec![usize::MAX; g.shape(x).0];
        let mut emitted = 0;
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        for t in 0..max_len {
            let active = order.iter().take_while(|&&i| segments[i].len() > t).count();
            let rows: Vec<usize> = order[..active]
                .iter()
                .map(|&i| {
                    let s = &segments[i];
                    if reverse { s.end - 1 - t } else { s.start + t }
                })
                .collect();
            for (k, &r) in rows.iter().enumerate() {
                slot[r] = emitted + k;
            }
            emitted += active;
            let mut gates = g.gather(xw, rows);
            if let Some(hp) = h {
                let hp = g.slice_rows(hp, 0, active);
                let rec = g.matmul(hp, w_hh);
                gates = g.add(gates, rec);
            }
            let i_f = g.slice_cols(gates, 0, 2 * h_dim);
            let i_f = g.sigmoid(i_f);
            let i_gate = g.slice_cols(i_f, 0, h_dim);
            let f_gate = g.slice_cols(i_f, h_dim, 2 * h_dim);
            let cand = g.slice_cols(gates, 2 * h_dim, 3 * h_dim);
            let cand = g.tanh(cand);
            let o_gate = g.slice_cols(gates, 3 * h_dim, 4 * h_dim);
            let o_gate = g.sigmoid(o_gate);
            let mut c_new = g.mul(i_gate, cand);
            if let Some(cp) = c {
                let cp = g.slice_rows(cp, 0, active);
                let keep = g.mul(f_gate, cp);
                c_new = g.add(c_new, keep);
            }
            let tc = g.tanh(c_new);
            let h_new = g.mul(o_gate, tc);
            steps.push(h_new);
            h = Some(h_new);
            c = Some(c_new);
        }
        debug_assert_eq!(emitted, total_rows);
        let all = g.concat_rows(steps);
        let idx = segments.iter().flat_map(|s| s.clone()).map(|r| slot[r]).collect();
        g.gather(all, idx)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w_ih, self.w_hh, self.b]
    }
}

#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut impl Rng) -> BiLstm {
        BiLstm {
            fwd: LstmCell::new(store, &format!("{name}.fwd"), d_in, hidden, rng),
            bwd: LstmCell::new(store, &format!("{name}.bwd"), d_in, hidden, rng),
        }
    }

    /// Output rows follow the concatenated segment order, `2 * hidden` wide.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, segments: &[Range<usize>]) -> Var {
        let f = self.fwd.forward(g, x, segments, false);
        let b = self.bwd.forward(g, x, segments, true);
        g.concat_cols(vec![f, b])
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.fwd.params();
        p.extend(self.bwd.params());
        p
    }
}

/// Query rows `q` may attend only to key rows `k` of the same pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnBlock {
    pub q: Range<usize>,
    pub k: Range<usize>,
}

/// Upper bound on rows per attention chunk; keeps score matrices small.
const CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> MultiHeadAttention {
        assert_eq!(dim % heads, 0, "dim must be divisible by heads");
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        }
    }

    /// `blocks` must tile the rows of `q_in` and `kv_in` in order, and every
    /// block needs at least one key.
    pub fn forward(&self, g: &mut Graph<'_>, q_in: Var, kv_in: Var, blocks: &[AttnBlock]) -> Var {
        let q = self.q.forward(g, q_in);
        let k = self.k.forward(g, kv_in);
        let v = self.v.forward(g, kv_in);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut outs = Vec::new();
        for chunk in chunk_blocks(blocks) {
            let (q0, q1) = (chunk[0].q.start, chunk[chunk.len() - 1].q.end);
            let (k0, k1) = (chunk[0].k.start, chunk[chunk.len() - 1].k.end);
            if q0 == q1 {
                continue;
            }
            let qc = g.slice_rows(q, q0, q1);
            let kc = g.slice_rows(k, k0, k1);
            let vc = g.slice_rows(v, k0, k1);
            let mask = if chunk.len() > 1 {
                let mut m = Array2::from_elem((q1 - q0, k1 - k0), f64::NEG_INFINITY);
                for b in chunk {
                    m.slice_mut(ndarray::s![b.q.start - q0..b.q.end - q0, b.k.start - k0..b.k.end - k0])
                        .fill(0.0);
                }
                Some(g.constant(m))
            } else {
                None
            };
            let mut head_outs = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = g.slice_cols(qc, h * dh, (h + 1) * dh);
                let kh = g.slice_cols(kc, h * dh, (h + 1) * dh);
                let vh = g.slice_cols(vc, h * dh, (h + 1) * dh);
                let s = g.matmul_t(qh, kh);
                let mut s = g.scale(s, scale);
                if let Some(m) = mask {
                    s = g.add(s, m);
                }
                let a = g.softmax_rows(s);
                head_outs.push(g.matmul(a, vh));
            }
            outs.push(if head_outs.len() == 1 { head_outs[0] } else { g.concat_cols(head_outs) });
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_rows(outs) };
        self.o.forward(g, cat)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.o].iter().flat_map(|l| l.params()).collect()
    }
}

fn chunk_blocks(blocks: &[AttnBlock]) -> Vec<&[AttnBlock]> {
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut rows = 0;
    for (i, b) in blocks.iter().enumerate() {
        let r = b.q.len().max(b.k.len());
        if i > start && rows + r > CHUNK_ROWS {
            chunks.push(&blocks[start..i]);
            start = i;
            rows = 0;
        }
        rows += r;
    }
    if start < blocks.len() {
        chunks.push(&blocks[start..]);
    }
    chunks
}

/// Pre-norm transformer layer: `x + attn(ln(x))`, then `x + ff(ln(x))`.
/// With a separate key/value source it becomes a cross-attention block.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln_attn: LayerNorm,
    pub ln_kv: Option<LayerNorm>,
    pub attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
    pub dropout: f64,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        cross: bool,
        rng: &mut impl Rng,
    ) -> TransformerBlock {
        TransformerBlock {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), dim),
            ln_kv: cross.then(|| LayerNorm::new(store, &format!("{name}.ln_kv"), dim)),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, ff_dim, rng),
            dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, kv: Option<Var>, blocks: &[AttnBlock]) -> Var {
        let xn = self.ln_attn.forward(g, x);
        let kvn = match (kv, &self.ln_kv) {
            (Some(kv), Some(ln)) => ln.forward(g, kv),
            (Some(kv), None) => kv,
            (None, _) => xn,
        };
        let a = self.attn.forward(g, xn, kvn, blocks);
        let a = g.dropout(a, self.dropout);
        let x = g.add(x, a);
        let xn = self.ln_ff.forward(g, x);
        let f = self.ff.forward(g, xn, self.dropout);
        let f = g.dropout(f, self.dropout);
        g.add(x, f)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.ln_attn.params();
        if let Some(ln) = &self.ln_kv {
            p.extend(ln.params());
        }
        p.extend(self.attn.params());
        p.extend(self.ln_ff.params());
        p.extend(self.ff.inner.params());
        p.extend(self.ff.outer.params());
        p
    }
}

/// Sinusoidal position encodings, one row per position.
pub fn sinusoid_rows(positions: impl IntoIterator<Item = usize>, dim: usize) -> Mat {
    let pos: Vec<usize> = positions.into_iter().collect();
    Array2::from_shape_fn((pos.len(), dim), |(r, j)| {
        let freq = 10_000f64.powf(-((j / 2 * 2) as f64) / dim as f64);
        let a = pos[r] as f64 * freq;
        if j % 2 == 0 { a.sin() } else { a.cos() }
    })
}

/// Positions restarting at zero at the start of every segment.
pub fn segment_positions(segments: &[Range<usize>]) -> Vec<usize> {
    segments.iter().flat_map(|s| 0..s.len()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn input(store: &mut ParamStore, rows: usize, cols: usize, seed: u64) -> ParamId {
        let mut r = rng(seed);
        store.add_normal("input", rows, cols, 1.0, &mut r)
    }

    #[test]
    fn lstm_packed_matches_one_by_one() {
        let mut store = ParamStore::new();
        let mut r = rng(3);
        let lstm = BiLstm::new(&mut store, "lstm", 3, 4, &mut r);
        let x = input(&mut store, 9, 3, 4);
        let segs = vec![0..2, 2..7, 7..9];
        let mut g = Graph::new(&store, false, 0);
        let xv = g.param(x);
        let packed = lstm.forward(&mut g, xv, &segs);
        let packed = g.value(packed).clone();
        for s in &segs {
            let mut g = Graph::new(&store, false, 0);
            let xv = g.param(x);
            let part = g.slice_rows(xv, s.start, s.end);
            let alone = lstm.forward(&mut g, part, &[0..s.len()]);
            let diff = (&packed.slice(ndarray::s![s.clone(), ..]) - g.value(alone))
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-12, "segment {s:?} differs by {diff}");
        }
    }

    #[test]
    fn lstm_gradients() {
        let mut store = ParamStore::new();
        let mut r = rng(5);
        let lstm = BiLstm::new(&mut store, "lstm", 3, 2, &mut r);
        let x = input(&mut store, 6, 3, 6);
        let mut ids = lstm.params();
        ids.push(x);
        let report = check_gradients(&mut store, &ids, 1e-5, |g| {
            let xv = g.param(x);
            let y = lstm.forward(g, xv, &[0..4, 4..6]);
            let y = g.tanh(y);
            let y2 = g.mul(y, y);
            g.sum_all(y2)
        });
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn attention_is_block_diagonal() {
        let mut store = ParamStore::new();
        let mut r = rng(7);
        let mha = MultiHeadAttention::new(&mut store, "mha", 8, 2, &mut r);
        let x = input(&mut store, 5, 8, 8);
        let blocks = vec![AttnBlock { q: 0..2, k: 0..2 }, AttnBlock { q: 2..5, k: 2..5 }];
        let mut g = Graph::new(&store, false, 0);
        let xv = g.param(x);
        let y = mha.forward(&mut g, xv, xv, &blocks);
        let joint = g.value(y).clone();
        let first = g.slice_rows(xv, 0, 2);
        let y0 = mha.forward(&mut g, first, first, &[AttnBlock { q: 0..2, k: 0..2 }]);
        let diff = (&joint.slice(ndarray::s![0..2, ..]) - g.value(y0))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12);
    }

    #[test]
    fn single_key_attention_broadcasts_value() {
        let mut store = ParamStore::new();
        let mut r = rng(9);
        let mha = MultiHeadAttention::new(&mut store, "mha", 8, 4, &mut r);
        let q = input(&mut store, 3, 8, 10);
        let mut r2 = rng(11);
        let kv = store.add_normal("kv", 1, 8, 1.0, &mut r2);
        let mut g = Graph::new(&store, false, 0);
        let qv = g.param(q);
        let kvv = g.param(kv);
        let y = mha.forward(&mut g, qv, kvv, &[AttnBlock { q: 0..3, k: 0..1 }]);
        let v = mha.v.forward(&mut g, kvv);
        let expect = mha.o.forward(&mut g, v);
        for row in g.value(y).rows() {
            for (a, b) in row.iter().zip(g.value(expect).row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transformer_and_cross_block_gradients() {
        let mut store = ParamStore::new();
        let mut r = rng(12);
        let block = TransformerBlock::new(&mut store, "self", 8, 2, 6, 0.1, false, &mut r);
        let cross = TransformerBlock::new(&mut store, "cross", 8, 2, 6, 0.1, true, &mut r);
        let x = input(&mut store, 5, 8, 13);
        let mut r2 = rng(14);
        let kv = store.add_normal("kv", 4, 8, 1.0, &mut r2);
        let mut ids = block.params();
        ids.extend(cross.params());
        ids.extend([x, kv]);
        let self_blocks = vec![AttnBlock { q: 0..2, k: 0..2 }, AttnBlock { q: 2..5, k: 2..5 }];
        let cross_blocks = vec![AttnBlock { q: 0..2, k: 0..1 }, AttnBlock { q: 2..5, k: 1..4 }];
        let report = check_gradients(&mut store, &ids, 1e-5, |g| {
            let xv = g.param(x);
            let kvv = g.param(kv);
            let y = block.forward(g, xv, None, &self_blocks);
            let y = cross.forward(g, y, Some(kvv), &cross_blocks);
            let y = g.tanh(y);
            g.sum_all(y)
        });
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn chunking_respects_limit_and_covers_blocks() {
        let blocks: Vec<AttnBlock> = (0..100)
            .map(|i| AttnBlock { q: i * 30..(i + 1) * 30, k: i * 10..(i + 1) * 10 })
            .collect();
        let chunks = chunk_blocks(&blocks);
        assert_eq!(chunks.iter().map(|c| c.len()).sum::<usize>(), 100);
        assert!(chunks.iter().all(|c| c.iter().map(|b| b.q.len()).sum::<usize>() <= CHUNK_ROWS));
    }

    #[test]
    fn sinusoid_first_rows() {
        let pe = sinusoid_rows(0..2, 4);
        assert_eq!(pe.row(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0]);
        assert!((pe[[1, 0]] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[[1, 2]] - 0.01f64.sin()).abs() < 1e-15);
        assert_eq!(segment_positions(&[0..2, 2..5]), vec![0, 1, 0, 1, 2]);
    }
}
