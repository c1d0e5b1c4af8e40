//! Chunkwise streaming attention decoder.
//!
//! The input frame sequence is cut into fixed-size chunks. Each chunk `C` of
//! layer `n` attends over the concatenation
//!
//! ```text
//! K = [W_k·M, K_L, W_k·C, W_k·R]      V = [W_v·M, V_L, W_v·C, W_v·R]
//! ```
//!
//! where `M` is the memory bank fed by the layer below during earlier chunks,
//! `K_L`/`V_L` are the cached key/value projections of the last
//! `left_context` frames of earlier chunks, and `R` is the right-context
//! lookahead taken from the frames that follow the chunk. Queries come from
//! the layer-normalized `[C, R]`. The chunk's mean (summary vector) queries the
//! same keys to produce the memory vector handed to the next layer for the
//! next chunk. An FFN block and an optional causal smooth layer follow.
//!
//! [`full_attention_oracle`] is the plain whole-sequence stack with the same
//! weights; it serves as the parallel decoder and as the reference the
//! streaming decoder must reproduce in the degenerate configuration.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::conv::{ConvLayer, ConvState};
use crate::error::{Error, Result};
use crate::tensor::{layer_norm, linear, matmul, softmax_in_place, Activation, Tensor, LN_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkConfig {
    pub chunk_size: usize,
    pub left_context: usize,
    pub right_context: usize,
    pub num_layers: usize,
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub num_heads: usize,
    pub memory_slots: usize,
    /// Kernel size of both convolutions in each causal smooth layer.
    pub smooth_kernel: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunk_size: 20,
            left_context: 10,
            right_context: 4,
            num_layers: 4,
            hidden: 192,
            ffn_hidden: 768,
            num_heads: 2,
            memory_slots: 4,
            smooth_kernel: 3,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::config("chunk_size must be at least 1"));
        }
        if self.num_heads == 0 || !self.hidden.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "hidden {} is not divisible by num_heads {}",
                self.hidden, self.num_heads
            )));
        }
        if self.num_layers == 0 || self.ffn_hidden == 0 || self.smooth_kernel == 0 {
            return Err(Error::config(
                "num_layers, ffn_hidden and smooth_kernel must be positive",
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.num_heads
    }

    /// Number of chunks a `frames`-long sequence is cut into.
    pub fn num_chunks(&self, frames: usize) -> usize {
        frames.div_ceil(self.chunk_size)
    }

    /// `(start, end, right_end)` of chunk `i`: body `start..end`, lookahead
    /// `end..right_end`.
    pub fn chunk_bounds(&self, frames: usize, i: usize) -> (usize, usize, usize) {
        let start = i * self.chunk_size;
        let end = (start + self.chunk_size).min(frames);
        let right_end = (end + self.right_context).min(frames);
        (start, end, right_end)
    }
}

/// Two causal conv + layer-norm stages.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothWeights {
    pub conv1: ConvLayer,
    pub norm1: (Tensor, Tensor),
    pub conv2: ConvLayer,
    pub norm2: (Tensor, Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayerWeights {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_out: Tensor,
    /// Layer norm over `[C, R]` before the query projection.
    pub attn_norm: (Tensor, Tensor),
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    /// Post-residual layer norm of the FFN block.
    pub ffn_norm: (Tensor, Tensor),
    pub smooth: Option<SmoothWeights>,
}

impl AttentionLayerWeights {
    pub fn validate(&self, cfg: &ChunkConfig) -> Result<()> {
        let (d, f) = (cfg.hidden, cfg.ffn_hidden);
        let checks: [(&str, &Tensor, &[usize]); 12] = [
            ("w_q", &self.w_q, &[d, d]),
            ("w_k", &self.w_k, &[d, d]),
            ("w_v", &self.w_v, &[d, d]),
            ("w_out", &self.w_out, &[d, d]),
            ("attn_norm.gamma", &self.attn_norm.0, &[d]),
            ("attn_norm.beta", &self.attn_norm.1, &[d]),
            ("ffn_w1", &self.ffn_w1, &[d, f]),
            ("ffn_b1", &self.ffn_b1, &[f]),
            ("ffn_w2", &self.ffn_w2, &[f, d]),
            ("ffn_b2", &self.ffn_b2, &[d]),
            ("ffn_norm.gamma", &self.ffn_norm.0, &[d]),
            ("ffn_norm.beta", &self.ffn_norm.1, &[d]),
        ];
        for (name, t, dims) in checks {
            if t.dims() != dims {
                return Err(Error::shape(format!(
                    "attention weight {name}: {:?}, expected {dims:?}",
                    t.dims()
                )));
            }
        }
        if let Some(s) = &self.smooth {
            for conv in [&s.conv1, &s.conv2] {
                let sp = &conv.spec;
                if sp.transposed || sp.in_channels != d || sp.out_channels != d {
                    return Err(Error::shape("smooth conv must be a d→d causal conv"));
                }
            }
        }
        Ok(())
    }

    fn ffn(&self, h: &Tensor) -> Result<Tensor> {
        let hidden = linear(h, &self.ffn_w1, Some(&self.ffn_b1))?.map(|v| Activation::Relu.apply_scalar(v));
        let y = linear(&hidden, &self.ffn_w2, Some(&self.ffn_b2))?.add(h)?;
        layer_norm(&y, &self.ffn_norm.0, &self.ffn_norm.1, LN_EPS)
    }
}

/// Per-stream state of the causal smooth layer: one conv state per conv.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SmoothState {
    convs: [ConvState; 2],
}

/// Applies the smooth layer to time-major `chunk[n × d]`, carrying the conv
/// tails in `state`.
pub fn causal_smooth_layer(chunk: &Tensor, state: &mut SmoothState, w: &SmoothWeights) -> Result<Tensor> {
    let x = chunk.transpose();
    let h = w.conv1.step(&mut state.convs[0], &x)?.transpose();
    let h = layer_norm(&h, &w.norm1.0, &w.norm1.1, LN_EPS)?;
    let h = w.conv2.step(&mut state.convs[1], &h.transpose())?.transpose();
    layer_norm(&h, &w.norm2.0, &w.norm2.1, LN_EPS)
}

/// Whole-sequence smooth layer with ordinary causal padding.
pub fn smooth_offline(x: &Tensor, w: &SmoothWeights) -> Result<Tensor> {
    let h = w.conv1.forward(&x.transpose())?.transpose();
    let h = layer_norm(&h, &w.norm1.0, &w.norm1.1, LN_EPS)?;
    let h = w.conv2.forward(&h.transpose())?.transpose();
    layer_norm(&h, &w.norm2.0, &w.norm2.1, LN_EPS)
}

/// Mean over the frame axis.
pub fn summary_vector(chunk: &Tensor) -> Result<Tensor> {
    chunk.expect_rank(2, "summary_vector input")?;
    let n = chunk.rows();
    if n == 0 {
        return Err(Error::shape("summary of an empty chunk"));
    }
    let d = chunk.cols();
    let mut acc = vec![0.0f32; d];
    for i in 0..n {
        for (a, v) in acc.iter_mut().zip(chunk.row(i)) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= n as f32;
    }
    Tensor::new(vec![1, d], acc)
}

/// Multi-head scaled dot-product attention of already projected queries,
/// keys and values. Returns the concatenated head contexts and, per head, the
/// `[queries × keys]` weight matrix.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor, num_heads: usize) -> Result<(Tensor, Vec<Tensor>)> {
    let d = q.cols();
    if k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(Error::shape("attention q/k/v widths disagree"));
    }
    let nq = q.rows();
    let nk = k.rows();
    let dh = d / num_heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut ctx = Tensor::zeros(&[nq, d]);
    let mut probs = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let cols = h * dh..(h + 1) * dh;
        let mut p = Tensor::zeros(&[nq, nk]);
        for i in 0..nq {
            let qi = &q.row(i)[cols.clone()];
            let row = p.row_mut(i);
            for (j, s) in row.iter_mut().enumerate() {
                let kj = &k.row(j)[cols.clone()];
                *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
            }
            softmax_in_place(row).map_err(|_| Error::FullyMasked { row: i })?;
        }
        for i in 0..nq {
            let out = &mut ctx.row_mut(i)[cols.clone()];
            for j in 0..nk {
                let pj = p.row(i)[j];
                for (o, vv) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += pj * vv;
                }
            }
        }
        probs.push(p);
    }
    Ok((ctx, probs))
}

/// Carried state of one decoder layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerState {
    /// Cached key/value projections of the most recent `left_context` frames.
    pub k_left: Option<Tensor>,
    pub v_left: Option<Tensor>,
    /// Memory vectors produced by the layer below for earlier chunks, oldest first.
    pub memory: VecDeque<Vec<f32>>,
    pub smooth: SmoothState,
    pub next_chunk: usize,
}

impl LayerState {
    fn memory_tensor(&self, d: usize) -> Tensor {
        let data: Vec<f32> = self.memory.iter().flatten().copied().collect();
        Tensor::new(vec![self.memory.len(), d], data).expect("memory rows have width d")
    }

    /// Appends a memory vector, evicting the oldest past `slots`.
    pub fn push_memory(&mut self, m: Vec<f32>, slots: usize) {
        if slots == 0 {
            return;
        }
        self.memory.push_back(m);
        while self.memory.len() > slots {
            self.memory.pop_front();
        }
    }
}

/// Keys and values of one chunk, assembled as `[mem, left, C, R]`.
#[derive(Debug, Clone)]
pub struct AssembledKv {
    pub keys: Tensor,
    pub values: Tensor,
    /// Fresh projections of the chunk body, cached for the next chunk.
    pub body_keys: Tensor,
    pub body_values: Tensor,
}

pub fn assemble_kv(
    c: &Tensor,
    r: &Tensor,
    state: &LayerState,
    w: &AttentionLayerWeights,
    d: usize,
) -> Result<AssembledKv> {
    let mem = state.memory_tensor(d);
    let empty = Tensor::zeros(&[0, d]);
    let k_left = state.k_left.as_ref().unwrap_or(&empty);
    let v_left = state.v_left.as_ref().unwrap_or(&empty);
    let kc = matmul(c, &w.w_k)?;
    let vc = matmul(c, &w.w_v)?;
    let keys = Tensor::concat_rows(&[&matmul(&mem, &w.w_k)?, k_left, &kc, &matmul(r, &w.w_k)?])?;
    let values = Tensor::concat_rows(&[&matmul(&mem, &w.w_v)?, v_left, &vc, &matmul(r, &w.w_v)?])?;
    Ok(AssembledKv {
        keys,
        values,
        body_keys: kc,
        body_values: vc,
    })
}

/// Output of one layer on one chunk.
#[derive(Debug, Clone)]
pub struct LayerOutput {
    pub c: Tensor,
    pub r: Tensor,
    /// Memory vector for the layer above, consumed at the next chunk.
    pub memory: Vec<f32>,
}

/// One streaming attention layer applied to chunk `chunk_index`.
///
/// `c` is the chunk body `[n × d]` and `r` its right context `[m × d]` (may be
/// empty). Advances `state` to the next chunk.
pub fn chunk_attention_layer(
    c: &Tensor,
    r: &Tensor,
    chunk_index: usize,
    state: &mut LayerState,
    w: &AttentionLayerWeights,
    cfg: &ChunkConfig,
) -> Result<LayerOutput> {
    if chunk_index != state.next_chunk {
        return Err(Error::Sequencing {
            expected: state.next_chunk,
            got: chunk_index,
        });
    }
    let d = cfg.hidden;
    if c.rows() == 0 {
        return Err(Error::shape("empty chunk"));
    }
    let cr = Tensor::concat_rows(&[c, r])?;
    let cr_hat = layer_norm(&cr, &w.attn_norm.0, &w.attn_norm.1, LN_EPS)?;
    let kv = assemble_kv(c, r, state, w, d)?;

    let q = matmul(&cr_hat, &w.w_q)?;
    let (ctx, _) = scaled_dot_attention(&q, &kv.keys, &kv.values, cfg.num_heads)?;
    let h = matmul(&ctx, &w.w_out)?.add(&cr)?;

    let s = summary_vector(c)?;
    let (m_ctx, _) = scaled_dot_attention(&matmul(&s, &w.w_q)?, &kv.keys, &kv.values, cfg.num_heads)?;
    let memory = matmul(&m_ctx, &w.w_out)?.into_data();

    let y = w.ffn(&h)?;
    let n = c.rows();
    let (mut c_out, mut r_out) = (y.slice_rows(0, n), y.slice_rows(n, y.rows()));
    if let Some(sw) = &w.smooth {
        c_out = causal_smooth_layer(&c_out, &mut state.smooth, sw)?;
        if r_out.rows() > 0 {
            // Lookahead rows see the body's tail but must not advance the state.
            let mut scratch = state.smooth.clone();
            r_out = causal_smooth_layer(&r_out, &mut scratch, sw)?;
        }
    }

    state.k_left = Some(keep_last(state.k_left.take(), kv.body_keys, cfg.left_context)?);
    state.v_left = Some(keep_last(state.v_left.take(), kv.body_values, cfg.left_context)?);
    state.next_chunk += 1;

    Ok(LayerOutput {
        c: c_out,
        r: r_out,
        memory,
    })
}

fn keep_last(old: Option<Tensor>, new: Tensor, n: usize) -> Result<Tensor> {
    let all = match old {
        Some(o) => Tensor::concat_rows(&[&o, &new])?,
        None => new,
    };
    let rows = all.rows();
    Ok(all.slice_rows(rows - n.min(rows), rows))
}

/// Streaming decoder state for all layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub layers: Vec<LayerState>,
    pub next_chunk: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkStreamDecoder {
    pub cfg: ChunkConfig,
    pub layers: Vec<AttentionLayerWeights>,
}

impl ChunkStreamDecoder {
    pub fn new(cfg: ChunkConfig, layers: Vec<AttentionLayerWeights>) -> Result<Self> {
        cfg.validate()?;
        if layers.len() != cfg.num_layers {
            return Err(Error::config(format!(
                "{} layer weight sets for num_layers = {}",
                layers.len(),
                cfg.num_layers
            )));
        }
        for l in &layers {
            l.validate(&cfg)?;
        }
        Ok(Self { cfg, layers })
    }

    pub fn init_state(&self) -> DecoderState {
        DecoderState {
            layers: vec![LayerState::default(); self.layers.len()],
            next_chunk: 0,
        }
    }

    /// Runs all layers on chunk `chunk_index` and returns its body output.
    pub fn decode_chunk(&self, state: &mut DecoderState, chunk_index: usize, c: &Tensor, r: &Tensor) -> Result<Tensor> {
        if chunk_index != state.next_chunk {
            return Err(Error::Sequencing {
                expected: state.next_chunk,
                got: chunk_index,
            });
        }
        let (mut c, mut r) = (c.clone(), r.clone());
        for n in 0..self.layers.len() {
            let out = chunk_attention_layer(&c, &r, chunk_index, &mut state.layers[n], &self.layers[n], &self.cfg)?;
            if n + 1 < self.layers.len() {
                state.layers[n + 1].push_memory(out.memory, self.cfg.memory_slots);
            }
            c = out.c;
            r = out.r;
        }
        state.next_chunk += 1;
        Ok(c)
    }

    /// Chunk `i` of a fully available frame sequence: `(body, lookahead)`.
    pub fn chunk_inputs(&self, frames: &Tensor, i: usize) -> (Tensor, Tensor) {
        let (start, end, right_end) = self.cfg.chunk_bounds(frames.rows(), i);
        (frames.slice_rows(start, end), frames.slice_rows(end, right_end))
    }

    /// Decodes `frames[T × d]` chunk by chunk, returning one output per chunk.
    pub fn decode(&self, frames: &Tensor) -> Result<Vec<Tensor>> {
        frames.expect_rank(2, "decoder input")?;
        if frames.cols() != self.cfg.hidden {
            return Err(Error::shape(format!(
                "decoder input width {}, expected {}",
                frames.cols(),
                self.cfg.hidden
            )));
        }
        let mut state = self.init_state();
        (0..self.cfg.num_chunks(frames.rows()))
            .map(|i| {
                let (c, r) = self.chunk_inputs(frames, i);
                self.decode_chunk(&mut state, i, &c, &r)
            })
            .collect()
    }

    /// [`decode`](Self::decode) with the chunks joined back into `[T × d]`.
    pub fn decode_all(&self, frames: &Tensor) -> Result<Tensor> {
        let chunks = self.decode(frames)?;
        if chunks.is_empty() {
            return Ok(Tensor::zeros(&[0, self.cfg.hidden]));
        }
        Tensor::concat_rows(&chunks.iter().collect::<Vec<_>>())
    }
}

/// Whole-sequence attention stack: every frame attends to every frame.
///
/// Uses the same weights and block structure as the streaming layers
/// (normalized queries, raw keys/values, output projection plus residual,
/// FFN block, optional smooth layer) with no chunking.
pub fn full_attention_oracle(frames: &Tensor, layers: &[AttentionLayerWeights], num_heads: usize) -> Result<Tensor> {
    let mut x = frames.clone();
    for w in layers {
        let t = x.rows();
        let d = x.cols();
        let dh = d / num_heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let xn = layer_norm(&x, &w.attn_norm.0, &w.attn_norm.1, LN_EPS)?;
        let q = matmul(&xn, &w.w_q)?;
        let k = matmul(&x, &w.w_k)?;
        let v = matmul(&x, &w.w_v)?;
        let mut ctx = vec![0.0f32; t * d];
        let mut scores = vec![0.0f32; t];
        for h in 0..num_heads {
            let off = h * dh;
            for i in 0..t {
                let qi = &q.data()[i * d + off..i * d + off + dh];
                let mut max = f32::NEG_INFINITY;
                for (j, s) in scores.iter_mut().enumerate() {
                    let kj = &k.data()[j * d + off..j * d + off + dh];
                    *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
                    max = max.max(*s);
                }
                let mut z = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                for (j, s) in scores.iter().enumerate() {
                    let p = s / z;
                    for c in 0..dh {
                        ctx[i * d + off + c] += p * v.data()[j * d + off + c];
                    }
                }
            }
        }
        let ctx = Tensor::new(vec![t, d], ctx)?;
        let h = matmul(&ctx, &w.w_out)?.add(&x)?;
        x = w.ffn(&h)?;
        if let Some(sw) = &w.smooth {
            x = smooth_offline(&x, sw)?;
        }
    }
    Ok(x)
}
