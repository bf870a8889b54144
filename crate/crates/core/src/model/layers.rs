//! The network's building blocks as free functions over explicit weights.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::RngStream;
use crate::tensor::{Activation, Tensor};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Affine {
    /// `[in, out]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Affine {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.linear(&self.weight, Some(&self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl Norm {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gamma, &self.beta, LN_EPS)
    }
}

#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub q: Affine,
    pub k: Affine,
    pub v: Affine,
    pub out: Affine,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerWeights {
    pub ln1: Norm,
    pub attn: AttentionWeights,
    pub ln2: Norm,
    pub fc1: Affine,
    pub fc2: Affine,
}

#[derive(Debug, Clone)]
pub struct ConvWeights {
    /// `[out, in, kh, kw]`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct PatchWeights {
    pub conv: ConvWeights,
    /// `[N, d]`
    pub pos: Tensor,
}

#[derive(Debug, Clone)]
pub struct CrossWeights {
    /// CNN channels to token width.
    pub kv: Affine,
    pub attn: AttentionWeights,
    /// `[2d, d]` over `enc ‖ attended`.
    pub fuse: Affine,
}

#[derive(Debug, Clone)]
pub struct GatWeights {
    /// `[d, d]`, applied without bias.
    pub weight: Tensor,
    /// `[d, 1]` halves of the additive scoring vector.
    pub a_src: Tensor,
    pub a_dst: Tensor,
}

#[derive(Debug, Clone)]
pub struct HeadWeights {
    pub norm: Norm,
    pub out: Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    SelfAttention,
    Cross,
    Graph,
}

/// Softmax weights captured during a traced forward, shaped `[rows, keys]`
/// after flattening batch and heads.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub kind: AttentionKind,
    pub shape: Vec<usize>,
    pub weights: Vec<f64>,
}

impl AttentionMap {
    pub fn row_len(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn rows(&self) -> core::slice::Chunks<'_, f64> {
        self.weights.chunks(self.row_len())
    }
}

/// Mode, dropout stream and optional attention trace for one forward pass.
pub struct ForwardCtx {
    training: bool,
    rng: RngStream,
    draws: u64,
    trace: Option<Vec<AttentionMap>>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            training: false,
            rng: RngStream::new(0, 0),
            draws: 0,
            trace: None,
        }
    }

    /// Training mode; every dropout site draws from its own child of `rng`.
    pub fn train(rng: RngStream) -> Self {
        Self {
            training: true,
            rng,
            draws: 0,
            trace: None,
        }
    }

    pub fn traced(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn take_trace(&mut self) -> Vec<AttentionMap> {
        self.trace.as_mut().map(core::mem::take).unwrap_or_default()
    }

    pub fn dropout(&mut self, x: &Tensor, p: f64) -> Result<Tensor> {
        if !self.training {
            return x.dropout(p, false, &self.rng);
        }
        let site = self.rng.derive(self.draws);
        self.draws += 1;
        x.dropout(p, true, &site)
    }

    fn record(&mut self, kind: AttentionKind, t: &Tensor) {
        if let Some(trace) = &mut self.trace {
            trace.push(AttentionMap {
                kind,
                shape: t.shape().to_vec(),
                weights: t.data().to_vec(),
            });
        }
    }
}

/// Patch tokens and the grid they came from.
#[derive(Debug, Clone)]
pub struct TokenGrid {
    /// `[B, N, d]`
    pub tokens: Tensor,
    pub grid_h: usize,
    pub grid_w: usize,
}

#[derive(Debug, Clone)]
pub struct FeatureGraph {
    /// `[B, N, d]`
    pub nodes: Tensor,
    /// Row-major `N × N`.
    pub adjacency: Rc<[bool]>,
}

fn expect_rank(what: &str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::Dimension(format!(
            "{what}: rank-{rank} input expected, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Strided convolution with kernel = stride = `patch`, flattened to tokens,
/// plus the positional table.
pub fn patch_embed(x: &Tensor, w: &PatchWeights, patch: usize) -> Result<TokenGrid> {
    expect_rank("patch_embed", x, 4)?;
    let (h, wd) = (x.shape()[2], x.shape()[3]);
    if patch == 0 || h % patch != 0 || wd % patch != 0 {
        return Err(Error::Geometry(format!(
            "image {h}x{wd} is not a whole number of {patch}px patches"
        )));
    }
    let fmap = x.conv2d(&w.conv.weight, &w.conv.bias, patch, 0)?;
    let (b, d, gh, gw) = (fmap.shape()[0], fmap.shape()[1], fmap.shape()[2], fmap.shape()[3]);
    let tokens = fmap
        .permute(&[0, 2, 3, 1])?
        .reshape(&[b, gh * gw, d])?
        .add_broadcast(&w.pos)?;
    Ok(TokenGrid {
        tokens,
        grid_h: gh,
        grid_w: gw,
    })
}

fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    x.reshape(&[b, n, heads, d / heads])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b * heads, n, d / heads])
}

fn merge_heads(x: &Tensor, batch: usize, heads: usize) -> Result<Tensor> {
    let (n, dh) = (x.shape()[1], x.shape()[2]);
    x.reshape(&[batch, heads, n, dh])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[batch, n, heads * dh])
}

/// Scaled dot-product attention with `heads` heads. Queries come from
/// `queries`, keys and values from `context`; both are `[B, ·, d]`.
pub fn attention(
    queries: &Tensor,
    context: &Tensor,
    heads: usize,
    w: &AttentionWeights,
    kind: AttentionKind,
    ctx: &mut ForwardCtx,
) -> Result<Tensor> {
    expect_rank("attention queries", queries, 3)?;
    expect_rank("attention context", context, 3)?;
    let b = queries.shape()[0];
    let d = w.q.weight.shape()[1];
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "width {d} is not divisible into {heads} heads"
        )));
    }
    let q = split_heads(&w.q.apply(queries)?, heads)?;
    let k = split_heads(&w.k.apply(context)?, heads)?;
    let v = split_heads(&w.v.apply(context)?, heads)?;
    let scale = 1.0 / math::sqrt((d / heads) as f64);
    let weights = q.bmm(&k.transpose_last2()?)?.scale(scale).softmax();
    ctx.record(kind, &weights);
    let mixed = merge_heads(&weights.bmm(&v)?, b, heads)?;
    w.out.apply(&mixed)
}

pub fn multi_head_self_attention(
    tokens: &Tensor,
    heads: usize,
    w: &AttentionWeights,
    ctx: &mut ForwardCtx,
) -> Result<Tensor> {
    attention(tokens, tokens, heads, w, AttentionKind::SelfAttention, ctx)
}

/// One pre-norm block: attention and a GELU MLP, each with a residual add.
pub fn encoder_layer(
    x: &Tensor,
    w: &EncoderLayerWeights,
    heads: usize,
    dropout_p: f64,
    ctx: &mut ForwardCtx,
) -> Result<Tensor> {
    let a = multi_head_self_attention(&w.ln1.apply(x)?, heads, &w.attn, ctx)?;
    let x = x.add(&ctx.dropout(&a, dropout_p)?)?;
    let m = w.fc2.apply(&w.fc1.apply(&w.ln2.apply(&x)?)?.gelu())?;
    x.add(&ctx.dropout(&m, dropout_p)?)
}

pub fn transformer_encoder(
    tokens: &Tensor,
    layers: &[EncoderLayerWeights],
    heads: usize,
    dropout_p: f64,
    ctx: &mut ForwardCtx,
) -> Result<Tensor> {
    let mut x = tokens.clone();
    for w in layers {
        x = encoder_layer(&x, w, heads, dropout_p, ctx)?;
    }
    Ok(x)
}

/// `conv3x3 → relu → maxpool 2 → dropout` per block.
pub fn cnn_branch(x: &Tensor, blocks: &[ConvWeights], dropout_p: f64, ctx: &mut ForwardCtx) -> Result<Tensor> {
    expect_rank("cnn_branch", x, 4)?;
    let mut h = x.clone();
    for w in blocks {
        let side = h.shape()[2].min(h.shape()[3]);
        if side < 2 {
            return Err(Error::Geometry(format!(
                "{}x{} map is too small for another 2x2 pool",
                h.shape()[2],
                h.shape()[3]
            )));
        }
        h = h.conv2d(&w.weight, &w.bias, 1, 1)?.relu().max_pool2d(2, 2)?;
        h = ctx.dropout(&h, dropout_p)?;
    }
    Ok(h)
}

/// Encoder tokens attend over the flattened, projected CNN map; the result is
/// concatenated with the encoder tokens and mapped back to width `d`.
pub fn cross_attention_fuse(
    cnn_feat: &Tensor,
    enc_tokens: &Tensor,
    w: &CrossWeights,
    heads: usize,
    ctx: &mut ForwardCtx,
) -> Result<Tensor> {
    expect_rank("cross_attention_fuse", cnn_feat, 4)?;
    let (b, c, h, wd) = (cnn_feat.shape()[0], cnn_feat.shape()[1], cnn_feat.shape()[2], cnn_feat.shape()[3]);
    let cnn_tokens = w.kv.apply(&cnn_feat.permute(&[0, 2, 3, 1])?.reshape(&[b, h * wd, c])?)?;
    let attended = attention(enc_tokens, &cnn_tokens, heads, &w.attn, AttentionKind::Cross, ctx)?;
    w.fuse.apply(&Tensor::concat_last(&[enc_tokens, &attended])?)
}

/// 8-neighbourhood adjacency with self-loops on a `gh × gw` grid.
pub fn grid8_adjacency(gh: usize, gw: usize) -> Vec<bool> {
    let n = gh * gw;
    let mut adj = vec![false; n * n];
    for i in 0..n {
        let (ri, ci) = (i / gw, i % gw);
        for j in 0..n {
            let (rj, cj) = (j / gw, j % gw);
            adj[i * n + j] = ri.abs_diff(rj) <= 1 && ci.abs_diff(cj) <= 1;
        }
    }
    adj
}

pub fn build_graph(grid: &TokenGrid) -> FeatureGraph {
    FeatureGraph {
        nodes: grid.tokens.clone(),
        adjacency: grid8_adjacency(grid.grid_h, grid.grid_w).into(),
    }
}

/// Single-head additive graph attention restricted to the adjacency.
pub fn graph_attention(
    graph: &FeatureGraph,
    w: &GatWeights,
    slope: f64,
    activation: Activation,
    ctx: &mut ForwardCtx,
) -> Result<Tensor> {
    let nodes = &graph.nodes;
    expect_rank("graph_attention", nodes, 3)?;
    let (b, n) = (nodes.shape()[0], nodes.shape()[1]);
    let adj = &graph.adjacency;
    if adj.len() != n * n {
        return Err(Error::Contract(format!(
            "adjacency of {} entries for {n} nodes",
            adj.len()
        )));
    }
    for i in 0..n {
        if !adj[i * n + i] {
            return Err(Error::Contract(format!("node {i} has no self-loop")));
        }
        for j in 0..i {
            if adj[i * n + j] != adj[j * n + i] {
                return Err(Error::Contract(format!("adjacency is not symmetric at ({i}, {j})")));
            }
        }
    }
    let wh = nodes.linear(&w.weight, None)?;
    let src = wh.linear(&w.a_src, None)?.reshape(&[b, n])?;
    let dst = wh.linear(&w.a_dst, None)?.reshape(&[b, n])?;
    let alpha = src
        .outer_add(&dst)?
        .activation(Activation::LeakyRelu(slope))
        .masked_softmax(adj.clone())?;
    ctx.record(AttentionKind::Graph, &alpha);
    Ok(alpha.bmm(&wh)?.activation(activation))
}

/// Mean over the token axis of `[B, N, d]`.
pub fn global_average_pool(nodes: &Tensor) -> Result<Tensor> {
    expect_rank("global_average_pool", nodes, 3)?;
    nodes.mean_axis(1)
}

/// `layer_norm → dropout → affine`; raw logits.
pub fn classify_head(pooled: &Tensor, w: &HeadWeights, dropout_p: f64, ctx: &mut ForwardCtx) -> Result<Tensor> {
    let h = ctx.dropout(&w.norm.apply(pooled)?, dropout_p)?;
    w.out.apply(&h)
}

pub fn rotation_head(pooled: &Tensor, w: &Affine) -> Result<Tensor> {
    w.apply(pooled)
}
