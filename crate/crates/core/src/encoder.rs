//! Feature extraction for both model branches.
//!
//! Graph branch: hashed token embeddings plus a kind embedding per node, four
//! graph-attention layers over role-masked edge subsets whose outputs are
//! concatenated, one global attention layer over all edges, and mean
//! pooling. Sequence branch: hashed token embeddings plus a marker embedding
//! for the changed lines, attention pooling and a two-layer feed-forward map.
//!
//! Everything is `f64` with hand-written backward passes.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cfrontend::tokenize;
use crate::error::{Error, Result};
use crate::graph::{CpgEdge, EdgeType, Graph, NodeKind, Version};
use crate::ingest::ChangeSet;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const SUBGRAPHS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Token embedding width `d`.
    pub dim: usize,
    pub vocab: usize,
    pub heads: usize,
    /// Width of both branch feature vectors.
    pub graph_dim: usize,
    /// Hidden width of the sequence feed-forward map.
    pub ff_dim: usize,
    pub max_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            vocab: 4096,
            heads: 2,
            graph_dim: 64,
            ff_dim: 64,
            max_tokens: 512,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dim > 0
            && self.vocab > 0
            && self.heads > 0
            && self.ff_dim > 0
            && self.dim.is_multiple_of(self.heads)
            && self.graph_dim.is_multiple_of(self.heads)
            && self.graph_dim > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "model dims must be positive and divisible by heads: {self:?}"
            )))
        }
    }
}

/// FNV-1a, 64-bit. Stable across runs and platforms.
pub fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn token_row(text: &str, vocab: usize) -> usize {
    (fnv1a(text) % vocab as u64) as usize
}

// ---- sequence input -----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Marker {
    Pre,
    Post,
}

impl Marker {
    pub fn index(self) -> usize {
        match self {
            Marker::Pre => 0,
            Marker::Post => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarkedToken {
    pub marker: Marker,
    pub text: String,
}

/// Deleted lines marked `PRE` and added lines marked `POST`, file by file in
/// line order, tokenized and cut to the first `max_tokens` tokens. Paths and
/// line numbers are not included.
pub fn extract_change_lines(cs: &ChangeSet<'_>, max_tokens: usize) -> Vec<MarkedToken> {
    let mut out = Vec::new();
    for change in &cs.changes {
        let mut lines: Vec<(u32, Marker, &str)> = change
            .deleted()
            .iter()
            .map(|(l, t)| (*l, Marker::Pre, t.as_str()))
            .chain(change.added().iter().map(|(l, t)| (*l, Marker::Post, t.as_str())))
            .collect();
        // deleted lines first within the file, each group in line order
        lines.sort_by_key(|&(l, m, _)| (m.index(), l));
        for (_, marker, text) in lines {
            for tok in tokenize(text) {
                if out.len() == max_tokens {
                    return out;
                }
                out.push(MarkedToken {
                    marker,
                    text: tok.text,
                });
            }
        }
    }
    out
}

/// Sequence tokens as (embedding row, marker index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqInput {
    pub tokens: Vec<(usize, usize)>,
}

impl SeqInput {
    pub fn new(seq: &[MarkedToken], cfg: &ModelConfig) -> Self {
        Self {
            tokens: seq
                .iter()
                .take(cfg.max_tokens)
                .map(|t| (token_row(&t.text, cfg.vocab), t.marker.index()))
                .collect(),
        }
    }
}

// ---- graph input --------------------------------------------------------

/// The four role bits of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRoles {
    pub pre_side: bool,
    pub post_side: bool,
    pub structural: bool,
    pub semantic: bool,
}

impl EdgeRoles {
    pub fn of(e: &CpgEdge) -> Self {
        let v = e.version.unwrap_or(Version::Common);
        Self {
            pre_side: v.pre_side(),
            post_side: v.post_side(),
            structural: e.etype == EdgeType::Ast,
            semantic: e.etype != EdgeType::Ast,
        }
    }

    pub fn bit(&self, k: usize) -> bool {
        [self.pre_side, self.post_side, self.structural, self.semantic][k]
    }
}

/// Indices of the edges in subgraph `k` (0-based): pre side, post side,
/// structural (AST), semantic (CFG/CDG/DDG/CALL).
pub fn subgraph_mask(g: &Graph, k: usize) -> Vec<usize> {
    g.edges
        .iter()
        .enumerate()
        .filter(|(_, e)| EdgeRoles::of(e).bit(k))
        .map(|(i, _)| i)
        .collect()
}

/// Undirected neighbourhoods including the node itself, sorted.
pub fn neighbourhoods(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut nb: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for (a, b) in edges {
        nb[a].push(b);
        nb[b].push(a);
    }
    for l in &mut nb {
        l.sort_unstable();
        l.dedup();
    }
    nb
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub n: usize,
    pub node_tokens: Vec<Vec<usize>>,
    pub node_kind: Vec<usize>,
    pub masks: [Vec<Vec<usize>>; SUBGRAPHS],
    pub all: Vec<Vec<usize>>,
    /// Precomputed first-layer embeddings, replacing the learned ones.
    pub external: Option<Array2<f64>>,
}

impl GraphInput {
    pub fn new(g: &Graph, cfg: &ModelConfig) -> Self {
        let n = g.nodes.len();
        let node_tokens = g
            .nodes
            .iter()
            .map(|v| {
                v.code
                    .split_whitespace()
                    .map(|t| token_row(t, cfg.vocab))
                    .collect()
            })
            .collect();
        let node_kind = g.nodes.iter().map(|v| v.kind.index()).collect();
        let masks = std::array::from_fn(|k| {
            neighbourhoods(
                n,
                subgraph_mask(g, k)
                    .into_iter()
                    .map(|i| (g.edges[i].src, g.edges[i].dst)),
            )
        });
        let all = neighbourhoods(n, g.edges.iter().map(|e| (e.src, e.dst)));
        Self {
            n,
            node_tokens,
            node_kind,
            masks,
            all,
            external: None,
        }
    }

    /// Uses `first + last` sidecar vectors as the initial embeddings.
    pub fn with_sidecar(mut self, sidecar: &Sidecar, cfg: &ModelConfig) -> Result<Self> {
        let mut h = Array2::zeros((self.n, cfg.dim));
        for i in 0..self.n {
            let (first, last) = sidecar.get(&i).ok_or(Error::MissingSidecarNode(i))?;
            if first.len() != cfg.dim || last.len() != cfg.dim {
                return Err(Error::Dimension(format!(
                    "sidecar vectors for node {i} must have length {}",
                    cfg.dim
                )));
            }
            for c in 0..cfg.dim {
                h[[i, c]] = first[c] + last[c];
            }
        }
        self.external = Some(h);
        Ok(self)
    }
}

/// Node id → (first-layer vector, last-layer vector).
pub type Sidecar = BTreeMap<usize, (Vec<f64>, Vec<f64>)>;

pub fn parse_sidecar(text: &str) -> Result<Sidecar> {
    let raw: BTreeMap<String, (Vec<f64>, Vec<f64>)> = serde_json::from_str(text)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<usize>()
                .map(|id| (id, v))
                .map_err(|_| Error::Malformed(format!("sidecar key `{k}` is not a node id")))
        })
        .collect()
}

// ---- parameters ---------------------------------------------------------

pub type Tensors = BTreeMap<String, Array2<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Graph,
    Sequence,
}

impl Branch {
    pub fn of(name: &str) -> Branch {
        if name.starts_with("graph.") {
            Branch::Graph
        } else {
            Branch::Sequence
        }
    }
}

pub fn sub_w(k: usize, h: usize) -> String {
    format!("graph.sub{k}.w{h}")
}

pub fn sub_a(k: usize, h: usize) -> String {
    format!("graph.sub{k}.a{h}")
}

pub fn glob_w(h: usize) -> String {
    format!("graph.global.w{h}")
}

pub fn glob_a(h: usize) -> String {
    format!("graph.global.a{h}")
}

/// Tensor names and shapes in initialization order, with the scale of the
/// uniform initializer (0 for zero-initialized tensors).
pub fn tensor_specs(cfg: &ModelConfig) -> Vec<(String, (usize, usize), f64)> {
    let d = cfg.dim;
    let dh = d / cfg.heads;
    let gh = cfg.graph_dim / cfg.heads;
    let glorot = |i: usize, o: usize| (6.0 / (i + o) as f64).sqrt();
    let mut v = vec![
        ("graph.tok".to_string(), (cfg.vocab, d), 0.5),
        ("graph.kind".to_string(), (NodeKind::COUNT, d), 0.5),
    ];
    for k in 0..SUBGRAPHS {
        for h in 0..cfg.heads {
            v.push((sub_w(k, h), (d, dh), glorot(d, dh)));
            v.push((sub_a(k, h), (2 * dh, 1), glorot(2 * dh, 1)));
        }
    }
    for h in 0..cfg.heads {
        v.push((glob_w(h), (SUBGRAPHS * d, gh), glorot(SUBGRAPHS * d, gh)));
        v.push((glob_a(h), (2 * gh, 1), glorot(2 * gh, 1)));
    }
    v.push(("graph.head".to_string(), (cfg.graph_dim, 2), 0.0));
    v.extend([
        ("seq.tok".to_string(), (cfg.vocab, d), 0.5),
        ("seq.marker".to_string(), (2, d), 0.5),
        ("seq.u".to_string(), (d, 1), glorot(d, 1)),
        ("seq.w1".to_string(), (d, cfg.ff_dim), glorot(d, cfg.ff_dim)),
        ("seq.b1".to_string(), (1, cfg.ff_dim), 0.0),
        (
            "seq.w2".to_string(),
            (cfg.ff_dim, cfg.graph_dim),
            glorot(cfg.ff_dim, cfg.graph_dim),
        ),
        ("seq.b2".to_string(), (1, cfg.graph_dim), 0.0),
        ("seq.head".to_string(), (cfg.graph_dim, 2), 0.0),
    ]);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub config: ModelConfig,
    pub tensors: Tensors,
}

impl Params {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Tensors::new();
        for (name, shape, scale) in tensor_specs(&config) {
            let t = if scale == 0.0 {
                Array2::zeros(shape)
            } else {
                Array2::from_shape_simple_fn(shape, || rng.random_range(-scale..scale))
            };
            tensors.insert(name, t);
        }
        Ok(Self { config, tensors })
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        &self.tensors[name]
    }

    pub fn zeros_like(&self) -> Tensors {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), Array2::zeros(v.raw_dim())))
            .collect()
    }

    /// Checks names, shapes and finiteness against the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let specs = tensor_specs(&self.config);
        if specs.len() != self.tensors.len() {
            return Err(Error::Malformed("unexpected tensor set".into()));
        }
        for (name, shape, _) in specs {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Malformed(format!("missing tensor `{name}`")))?;
            if t.dim() != shape {
                return Err(Error::Dimension(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    t.dim()
                )));
            }
            if !t.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }
}

// ---- graph attention ----------------------------------------------------

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.into_iter().map(|e| e / z).collect()
}

/// Per-head intermediate values of one attention layer.
#[derive(Debug, Clone)]
pub struct GatHead {
    pub z: Array2<f64>,
    /// Attention weights per node, aligned with its neighbourhood.
    pub alpha: Vec<Vec<f64>>,
    /// LeakyReLU inputs, aligned like `alpha`.
    pub logit_in: Vec<Vec<f64>>,
    pub pre: Array2<f64>,
}

/// One multi-head attention layer; heads are concatenated after ReLU.
pub fn gat_forward(
    h: &Array2<f64>,
    nbrs: &[Vec<usize>],
    ws: &[&Array2<f64>],
    attn: &[&Array2<f64>],
) -> Result<(Array2<f64>, Vec<GatHead>)> {
    if !h.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("attention layer input".into()));
    }
    let n = h.nrows();
    let dh = ws[0].ncols();
    let mut out = Array2::zeros((n, dh * ws.len()));
    let mut heads = Vec::with_capacity(ws.len());
    for (hd, (w, a)) in ws.iter().zip(attn).enumerate() {
        let z = h.dot(*w);
        let a1 = a.slice(s![..dh, 0]);
        let a2 = a.slice(s![dh.., 0]);
        let src: Array1<f64> = z.dot(&a1);
        let dst: Array1<f64> = z.dot(&a2);
        let mut alpha = Vec::with_capacity(n);
        let mut logit_in = Vec::with_capacity(n);
        let mut pre = Array2::zeros((n, dh));
        for i in 0..n {
            let xs: Vec<f64> = nbrs[i].iter().map(|&j| src[i] + dst[j]).collect();
            let al = softmax(&xs.iter().map(|&x| leaky(x)).collect::<Vec<_>>());
            let mut row = pre.row_mut(i);
            for (&j, &a) in nbrs[i].iter().zip(&al) {
                row.scaled_add(a, &z.row(j));
            }
            alpha.push(al);
            logit_in.push(xs);
        }
        out.slice_mut(s![.., hd * dh..(hd + 1) * dh])
            .assign(&pre.mapv(|x| x.max(0.0)));
        heads.push(GatHead {
            z,
            alpha,
            logit_in,
            pre,
        });
    }
    Ok((out, heads))
}

/// Gradients of one attention layer: (dH, dW per head, da per head).
pub fn gat_backward(
    h: &Array2<f64>,
    nbrs: &[Vec<usize>],
    ws: &[&Array2<f64>],
    attn: &[&Array2<f64>],
    cache: &[GatHead],
    dout: &Array2<f64>,
) -> (Array2<f64>, Vec<Array2<f64>>, Vec<Array2<f64>>) {
    let n = h.nrows();
    let dh = ws[0].ncols();
    let mut dh_total = Array2::zeros(h.raw_dim());
    let mut dws = Vec::new();
    let mut das = Vec::new();
    for (hd, ((w, a), c)) in ws.iter().zip(attn).zip(cache).enumerate() {
        let a1 = a.slice(s![..dh, 0]);
        let a2 = a.slice(s![dh.., 0]);
        let dblock = dout.slice(s![.., hd * dh..(hd + 1) * dh]);
        let dpre = &dblock * &c.pre.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
        let mut dz = Array2::<f64>::zeros((n, dh));
        let mut dsrc = Array1::<f64>::zeros(n);
        let mut ddst = Array1::<f64>::zeros(n);
        for i in 0..n {
            let dp = dpre.row(i);
            let dalpha: Vec<f64> = nbrs[i].iter().map(|&j| dp.dot(&c.z.row(j))).collect();
            let weighted: f64 = c.alpha[i].iter().zip(&dalpha).map(|(a, d)| a * d).sum();
            for (k, &j) in nbrs[i].iter().enumerate() {
                let al = c.alpha[i][k];
                dz.row_mut(j).scaled_add(al, &dp);
                let de = al * (dalpha[k] - weighted);
                let dx = de * leaky_grad(c.logit_in[i][k]);
                dsrc[i] += dx;
                ddst[j] += dx;
            }
        }
        let mut da = Array2::zeros((2 * dh, 1));
        da.slice_mut(s![..dh, 0]).assign(&c.z.t().dot(&dsrc));
        da.slice_mut(s![dh.., 0]).assign(&c.z.t().dot(&ddst));
        for i in 0..n {
            dz.row_mut(i).scaled_add(dsrc[i], &a1);
            dz.row_mut(i).scaled_add(ddst[i], &a2);
        }
        dws.push(h.t().dot(&dz));
        das.push(da);
        dh_total += &dz.dot(&w.t());
    }
    (dh_total, dws, das)
}

// ---- graph branch -------------------------------------------------------

/// Initial node embeddings: mean of token rows plus the kind row, or the
/// external embeddings when present.
pub fn init_node_embeddings(p: &Params, x: &GraphInput) -> Array2<f64> {
    if let Some(h) = &x.external {
        return h.clone();
    }
    let tok = p.get("graph.tok");
    let kind = p.get("graph.kind");
    let mut h = Array2::zeros((x.n, p.config.dim));
    for i in 0..x.n {
        let mut row = h.row_mut(i);
        let toks = &x.node_tokens[i];
        if !toks.is_empty() {
            let w = 1.0 / toks.len() as f64;
            for &t in toks {
                row.scaled_add(w, &tok.row(t));
            }
        }
        row += &kind.row(x.node_kind[i]);
    }
    h
}

#[derive(Debug, Clone)]
pub struct GraphForward {
    pub h0: Array2<f64>,
    pub subs: Vec<Vec<GatHead>>,
    pub hcat: Array2<f64>,
    pub global: Vec<GatHead>,
    pub f_g: Array1<f64>,
}

fn layer_refs(
    p: &Params,
    w: impl Fn(usize) -> String,
    a: impl Fn(usize) -> String,
) -> (Vec<&Array2<f64>>, Vec<&Array2<f64>>) {
    let heads = p.config.heads;
    (
        (0..heads).map(|h| p.get(&w(h))).collect(),
        (0..heads).map(|h| p.get(&a(h))).collect(),
    )
}

/// Graph feature vector. An empty graph yields zeros.
pub fn encode_graph(p: &Params, x: &GraphInput) -> Result<GraphForward> {
    let d = p.config.dim;
    let h0 = init_node_embeddings(p, x);
    if x.n == 0 {
        log::warn!("empty graph: graph features are zero");
        return Ok(GraphForward {
            h0,
            subs: Vec::new(),
            hcat: Array2::zeros((0, SUBGRAPHS * d)),
            global: Vec::new(),
            f_g: Array1::zeros(p.config.graph_dim),
        });
    }
    let mut hcat = Array2::zeros((x.n, SUBGRAPHS * d));
    let mut subs = Vec::with_capacity(SUBGRAPHS);
    for k in 0..SUBGRAPHS {
        let (ws, attn) = layer_refs(p, |h| sub_w(k, h), |h| sub_a(k, h));
        let (out, cache) = gat_forward(&h0, &x.masks[k], &ws, &attn)?;
        hcat.slice_mut(s![.., k * d..(k + 1) * d]).assign(&out);
        subs.push(cache);
    }
    let (ws, attn) = layer_refs(p, glob_w, glob_a);
    let (g, global) = gat_forward(&hcat, &x.all, &ws, &attn)?;
    let f_g = g.mean_axis(Axis(0)).expect("non-empty");
    Ok(GraphForward {
        h0,
        subs,
        hcat,
        global,
        f_g,
    })
}

/// Accumulates graph-branch gradients for `df_g` into `grads`.
pub fn graph_backward(
    p: &Params,
    x: &GraphInput,
    fw: &GraphForward,
    df_g: ArrayView1<f64>,
    grads: &mut Tensors,
) {
    if x.n == 0 {
        return;
    }
    let d = p.config.dim;
    let mut dg = Array2::zeros((x.n, p.config.graph_dim));
    let scale = 1.0 / x.n as f64;
    for mut row in dg.rows_mut() {
        row.scaled_add(scale, &df_g);
    }
    let (ws, attn) = layer_refs(p, glob_w, glob_a);
    let (dhcat, dws, das) = gat_backward(&fw.hcat, &x.all, &ws, &attn, &fw.global, &dg);
    for h in 0..p.config.heads {
        *grads.get_mut(&glob_w(h)).expect("tensor") += &dws[h];
        *grads.get_mut(&glob_a(h)).expect("tensor") += &das[h];
    }
    let mut dh0 = Array2::zeros((x.n, d));
    for k in 0..SUBGRAPHS {
        let (ws, attn) = layer_refs(p, |h| sub_w(k, h), |h| sub_a(k, h));
        let dout = dhcat.slice(s![.., k * d..(k + 1) * d]).to_owned();
        let (dh, dws, das) = gat_backward(&fw.h0, &x.masks[k], &ws, &attn, &fw.subs[k], &dout);
        dh0 += &dh;
        for h in 0..p.config.heads {
            *grads.get_mut(&sub_w(k, h)).expect("tensor") += &dws[h];
            *grads.get_mut(&sub_a(k, h)).expect("tensor") += &das[h];
        }
    }
    if x.external.is_some() {
        return;
    }
    let dtok = grads.get_mut("graph.tok").expect("tensor");
    for i in 0..x.n {
        let toks = &x.node_tokens[i];
        if toks.is_empty() {
            continue;
        }
        let w = 1.0 / toks.len() as f64;
        for &t in toks {
            dtok.row_mut(t).scaled_add(w, &dh0.row(i));
        }
    }
    let dkind = grads.get_mut("graph.kind").expect("tensor");
    for i in 0..x.n {
        dkind.row_mut(x.node_kind[i]).scaled_add(1.0, &dh0.row(i));
    }
}

// ---- sequence branch ----------------------------------------------------

#[derive(Debug, Clone)]
pub struct SeqForward {
    pub x: Array2<f64>,
    pub beta: Vec<f64>,
    pub pooled: Array1<f64>,
    pub hidden_pre: Array1<f64>,
    pub hidden: Array1<f64>,
    pub f_s: Array1<f64>,
}

/// Sequence feature vector. An empty sequence yields zeros.
pub fn encode_sequence(p: &Params, seq: &SeqInput) -> SeqForward {
    let cfg = &p.config;
    let t = seq.tokens.len();
    let mut x = Array2::zeros((t, cfg.dim));
    let tok = p.get("seq.tok");
    let marker = p.get("seq.marker");
    for (i, &(row, m)) in seq.tokens.iter().enumerate() {
        let mut r = x.row_mut(i);
        r += &tok.row(row);
        r += &marker.row(m);
    }
    if t == 0 {
        return SeqForward {
            x,
            beta: Vec::new(),
            pooled: Array1::zeros(cfg.dim),
            hidden_pre: Array1::zeros(cfg.ff_dim),
            hidden: Array1::zeros(cfg.ff_dim),
            f_s: Array1::zeros(cfg.graph_dim),
        };
    }
    let u = p.get("seq.u").column(0).to_owned();
    let scores: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&u)).collect();
    let beta = softmax(&scores);
    let mut pooled = Array1::zeros(cfg.dim);
    for (i, b) in beta.iter().enumerate() {
        pooled.scaled_add(*b, &x.row(i));
    }
    let hidden_pre = pooled.dot(p.get("seq.w1")) + p.get("seq.b1").row(0);
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let f_s = hidden.dot(p.get("seq.w2")) + p.get("seq.b2").row(0);
    SeqForward {
        x,
        beta,
        pooled,
        hidden_pre,
        hidden,
        f_s,
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Accumulates sequence-branch gradients for `df_s` into `grads`.
pub fn seq_backward(p: &Params, seq: &SeqInput, fw: &SeqForward, df_s: ArrayView1<f64>, grads: &mut Tensors) {
    if seq.tokens.is_empty() {
        return;
    }
    *grads.get_mut("seq.b2").expect("tensor") += &df_s.insert_axis(Axis(0));
    *grads.get_mut("seq.w2").expect("tensor") += &outer(fw.hidden.view(), df_s);
    let dhidden = p.get("seq.w2").dot(&df_s);
    let dpre = &dhidden * &fw.hidden_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    *grads.get_mut("seq.b1").expect("tensor") += &dpre.view().insert_axis(Axis(0));
    *grads.get_mut("seq.w1").expect("tensor") += &outer(fw.pooled.view(), dpre.view());
    let dpooled = p.get("seq.w1").dot(&dpre);

    let dbeta: Vec<f64> = fw.x.rows().into_iter().map(|r| r.dot(&dpooled)).collect();
    let weighted: f64 = fw.beta.iter().zip(&dbeta).map(|(b, d)| b * d).sum();
    let u = p.get("seq.u").column(0).to_owned();
    let mut du = Array1::<f64>::zeros(p.config.dim);
    let mut dx = Array2::<f64>::zeros(fw.x.raw_dim());
    for (i, (&b, &d)) in fw.beta.iter().zip(&dbeta).enumerate() {
        let dscore = b * (d - weighted);
        du.scaled_add(dscore, &fw.x.row(i));
        let mut r = dx.row_mut(i);
        r.scaled_add(b, &dpooled);
        r.scaled_add(dscore, &u);
    }
    *grads.get_mut("seq.u").expect("tensor") += &du.insert_axis(Axis(1));
    let dtok = grads.get_mut("seq.tok").expect("tensor");
    for (i, &(row, _)) in seq.tokens.iter().enumerate() {
        dtok.row_mut(row).scaled_add(1.0, &dx.row(i));
    }
    let dmarker = grads.get_mut("seq.marker").expect("tensor");
    for (i, &(_, m)) in seq.tokens.iter().enumerate() {
        dmarker.row_mut(m).scaled_add(1.0, &dx.row(i));
    }
}

/// `fᵀ W` for a `dim × 2` head.
pub fn head_logits(f: &Array1<f64>, head: &Array2<f64>) -> [f64; 2] {
    let l = f.dot(head);
    [l[0], l[1]]
}
