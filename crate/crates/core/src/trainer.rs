//! Fused prediction, two-phase training with branch freezing, and metrics.

use std::collections::BTreeMap;

use log::info;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    encode_graph, encode_sequence, graph_backward, head_logits, seq_backward, Branch, GraphInput,
    MarkedToken, ModelConfig, Params, SeqInput, Tensors,
};
use crate::error::{Error, Result};
use crate::repodep::RepoCpg;
use crate::slice::SliceConfig;

pub const CHECKPOINT_FORMAT: &str = "repospd-ckpt-1";

/// Which branch trains first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Sequence branch first, then graph branch.
    #[default]
    SequenceFirst,
    /// Graph branch first, then sequence branch.
    GraphFirst,
}

impl Schedule {
    pub fn active(self, epoch: usize, epochs: usize) -> Branch {
        let first_half = epoch < epochs / 2;
        match (self, first_half) {
            (Schedule::SequenceFirst, true) | (Schedule::GraphFirst, false) => Branch::Sequence,
            _ => Branch::Graph,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMetric {
    Accuracy,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Even and at least 2; the phases switch at `epochs / 2`.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_graph: f64,
    pub lr_seq: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub schedule: Schedule,
    pub model: ModelConfig,
    pub slice: SliceConfig,
    /// Keep the parameters of the best validation epoch under this metric;
    /// `None`, or an empty validation set, keeps the final parameters.
    pub select: Option<SelectMetric>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            lr_graph: 5e-5,
            lr_seq: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            schedule: Schedule::SequenceFirst,
            model: ModelConfig::default(),
            slice: SliceConfig::default(),
            select: Some(SelectMetric::Accuracy),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs < 2 || !self.epochs.is_multiple_of(2) {
            return bad("epochs must be even and at least 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.lr_graph) || !positive(self.lr_seq) || !positive(self.eps) {
            return bad("learning rates and eps must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.slice.hops == 0 {
            return bad("slice hops must be at least 1");
        }
        self.model.validate()
    }

    pub fn lr(&self, b: Branch) -> f64 {
        match b {
            Branch::Graph => self.lr_graph,
            Branch::Sequence => self.lr_seq,
        }
    }
}

/// One labelled patch: its sliced graph and its marked change tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub graph: RepoCpg,
    pub seq: Vec<MarkedToken>,
    pub label: i64,
    pub tag: Option<String>,
}

/// A sample turned into model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub graph: GraphInput,
    pub seq: SeqInput,
    pub label: usize,
    pub tag: Option<String>,
}

pub fn check_label(y: i64) -> Result<usize> {
    match y {
        0 | 1 => Ok(y as usize),
        _ => Err(Error::InvalidLabel(y)),
    }
}

impl Sample {
    pub fn prepare(&self, cfg: &ModelConfig) -> Result<Prepared> {
        Ok(Prepared {
            id: self.id.clone(),
            graph: GraphInput::new(&self.graph.graph, cfg),
            seq: SeqInput::new(&self.seq, cfg),
            label: check_label(self.label)?,
            tag: self.tag.clone(),
        })
    }
}

// ---- prediction and loss ------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p: [f64; 2],
    pub class: usize,
}

/// Mean of the two branch logits; ties go to class 0.
pub fn fuse(logits_g: [f64; 2], logits_s: [f64; 2]) -> Prediction {
    let p = [
        (logits_g[0] + logits_s[0]) / 2.0,
        (logits_g[1] + logits_s[1]) / 2.0,
    ];
    Prediction {
        p,
        class: usize::from(p[1] > p[0]),
    }
}

pub fn predict(
    f_g: &Array1<f64>,
    f_s: &Array1<f64>,
    w_g: &Array2<f64>,
    w_s: &Array2<f64>,
) -> Result<Prediction> {
    let shape_ok = |f: &Array1<f64>, w: &Array2<f64>| w.nrows() == f.len() && w.ncols() == 2;
    if !shape_ok(f_g, w_g) || !shape_ok(f_s, w_s) {
        return Err(Error::Dimension(format!(
            "features {} / {} against heads {:?} / {:?}",
            f_g.len(),
            f_s.len(),
            w_g.dim(),
            w_s.dim()
        )));
    }
    Ok(fuse(head_logits(f_g, w_g), head_logits(f_s, w_s)))
}

pub fn classify(p: &Params, x: &Prepared) -> Result<Prediction> {
    let g = encode_graph(p, &x.graph)?;
    let s = encode_sequence(p, &x.seq);
    predict(&g.f_g, &s.f_s, p.get("graph.head"), p.get("seq.head"))
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: [f64; 2], y: usize) -> (f64, [f64; 2]) {
    let m = logits[0].max(logits[1]);
    let z = (logits[0] - m).exp() + (logits[1] - m).exp();
    let lse = m + z.ln();
    let prob = [(logits[0] - lse).exp(), (logits[1] - lse).exp()];
    let mut grad = prob;
    grad[y] -= 1.0;
    (lse - logits[y], grad)
}

pub fn progressive_loss(
    logits_g: [f64; 2],
    logits_s: [f64; 2],
    y: i64,
    epoch: usize,
    epochs: usize,
    schedule: Schedule,
) -> Result<(f64, Branch)> {
    let y = check_label(y)?;
    let branch = schedule.active(epoch, epochs);
    let logits = match branch {
        Branch::Graph => logits_g,
        Branch::Sequence => logits_s,
    };
    if !logits.iter().all(|l| l.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok((cross_entropy(logits, y).0, branch))
}

/// Loss of the active branch on one sample.
pub fn sample_loss(p: &Params, x: &Prepared, branch: Branch) -> Result<f64> {
    let logits = match branch {
        Branch::Graph => head_logits(&encode_graph(p, &x.graph)?.f_g, p.get("graph.head")),
        Branch::Sequence => head_logits(&encode_sequence(p, &x.seq).f_s, p.get("seq.head")),
    };
    Ok(cross_entropy(logits, x.label).0)
}

/// Adds `scale` times the active branch's loss gradient to `grads` and
/// returns the loss. Tensors of the other branch are left untouched.
pub fn accumulate_grad(
    p: &Params,
    x: &Prepared,
    branch: Branch,
    scale: f64,
    grads: &mut Tensors,
) -> Result<f64> {
    match branch {
        Branch::Graph => {
            let fw = encode_graph(p, &x.graph)?;
            let head = p.get("graph.head");
            let (loss, dl) = cross_entropy(head_logits(&fw.f_g, head), x.label);
            let dl = Array1::from(vec![dl[0] * scale, dl[1] * scale]);
            *grads.get_mut("graph.head").expect("tensor") += &fw
                .f_g
                .view()
                .insert_axis(Axis(1))
                .dot(&dl.view().insert_axis(Axis(0)));
            let df = head.dot(&dl);
            graph_backward(p, &x.graph, &fw, df.view(), grads);
            Ok(loss)
        }
        Branch::Sequence => {
            let fw = encode_sequence(p, &x.seq);
            let head = p.get("seq.head");
            let (loss, dl) = cross_entropy(head_logits(&fw.f_s, head), x.label);
            let dl = Array1::from(vec![dl[0] * scale, dl[1] * scale]);
            *grads.get_mut("seq.head").expect("tensor") += &fw
                .f_s
                .view()
                .insert_axis(Axis(1))
                .dot(&dl.view().insert_axis(Axis(0)));
            let df = head.dot(&dl);
            seq_backward(p, &x.seq, &fw, df.view(), grads);
            Ok(loss)
        }
    }
}

// ---- optimizer ----------------------------------------------------------

/// Adaptive-moment optimizer with a separate step count per branch.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Tensors,
    v: Tensors,
    steps_graph: i32,
    steps_seq: i32,
}

impl Adam {
    pub fn new(p: &Params) -> Self {
        Self {
            m: p.zeros_like(),
            v: p.zeros_like(),
            steps_graph: 0,
            steps_seq: 0,
        }
    }

    /// Updates only the tensors of `branch`.
    pub fn step(&mut self, p: &mut Params, grads: &Tensors, branch: Branch, cfg: &TrainConfig) {
        let t = match branch {
            Branch::Graph => {
                self.steps_graph += 1;
                self.steps_graph
            }
            Branch::Sequence => {
                self.steps_seq += 1;
                self.steps_seq
            }
        };
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = cfg.lr(branch);
        for (name, w) in p.tensors.iter_mut() {
            if Branch::of(name) != branch {
                continue;
            }
            let g = &grads[name];
            let m = self.m.get_mut(name).expect("tensor");
            let v = self.v.get_mut(name).expect("tensor");
            ndarray::Zip::from(w)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
                });
        }
    }
}

// ---- training -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub branch: Branch,
    pub loss: f64,
    pub train_accuracy: f64,
    pub valid_score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Params,
    pub history: Vec<EpochRecord>,
    /// The epoch whose parameters were kept, when selecting on validation.
    pub selected_epoch: Option<usize>,
}

fn fused_predictions(p: &Params, xs: &[Prepared]) -> Result<Vec<usize>> {
    xs.par_iter().map(|x| classify(p, x).map(|pr| pr.class)).collect()
}

fn score(p: &Params, xs: &[Prepared], metric: SelectMetric) -> Result<f64> {
    let preds = fused_predictions(p, xs)?;
    let m = Metrics::from_counts(Confusion::count(xs.iter().map(|x| x.label).zip(preds)));
    Ok(match metric {
        SelectMetric::Accuracy => m.accuracy,
        SelectMetric::F1 => m.f1,
    })
}

pub fn train(train: &[Prepared], valid: &[Prepared], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(train, valid, cfg, |_, _| {})
}

/// Like [`train`], calling `observer(epoch, params)` after every epoch.
pub fn train_observed(
    train: &[Prepared],
    valid: &[Prepared],
    cfg: &TrainConfig,
    mut observer: impl FnMut(usize, &Params),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut params = Params::init(cfg.model, cfg.seed)?;
    let mut adam = Adam::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Params)> = None;

    for epoch in 0..cfg.epochs {
        let branch = cfg.schedule.active(epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let loss = accumulate_grad(&params, &train[i], branch, scale, &mut grads)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss on sample `{}` in epoch {epoch}",
                        train[i].id
                    )));
                }
                total += loss;
            }
            adam.step(&mut params, &grads, branch, cfg);
        }
        let preds = fused_predictions(&params, train)?;
        let correct = preds.iter().zip(train).filter(|(p, x)| **p == x.label).count();
        let valid_score = match cfg.select {
            Some(metric) if !valid.is_empty() => Some(score(&params, valid, metric)?),
            _ => None,
        };
        let rec = EpochRecord {
            epoch,
            branch,
            loss: total / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            valid_score,
        };
        info!(
            "epoch {epoch} ({:?}): loss {:.6} train acc {:.3}",
            branch, rec.loss, rec.train_accuracy
        );
        if let Some(s) = valid_score {
            // ties go to the later epoch, which has seen both phases
            if best.as_ref().is_none_or(|(b, _, _)| s >= *b) {
                best = Some((s, epoch, params.clone()));
            }
        }
        history.push(rec);
        observer(epoch, &params);
    }
    let (params, selected_epoch) = match best {
        Some((_, e, p)) => (p, Some(e)),
        None => (params, None),
    };
    Ok(TrainOutcome {
        params,
        history,
        selected_epoch,
    })
}

// ---- metrics ------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// Counts from `(label, predicted)` pairs; class 1 is positive.
    pub fn count(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut c = Confusion::default();
        for (y, p) in pairs {
            match (y, p) {
                (1, 1) => c.tp += 1,
                (0, 0) => c.tn += 1,
                (0, _) => c.fp += 1,
                _ => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub counts: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
}

impl Metrics {
    /// Undefined ratios are 0.
    pub fn from_counts(c: Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            counts: c,
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            fpr: ratio(c.fp, c.fp + c.tn),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub overall: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_tag: Option<BTreeMap<String, Metrics>>,
}

impl MetricsReport {
    /// `rows` are `(label, predicted, tag)`.
    pub fn from_rows(rows: &[(usize, usize, Option<String>)], by_tag: bool) -> Self {
        let overall = Metrics::from_counts(Confusion::count(rows.iter().map(|r| (r.0, r.1))));
        let per_tag = by_tag.then(|| {
            let mut groups: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
            for (y, p, t) in rows {
                if let Some(t) = t {
                    groups.entry(t.clone()).or_default().push((*y, *p));
                }
            }
            groups
                .into_iter()
                .map(|(t, v)| (t, Metrics::from_counts(Confusion::count(v))))
                .collect()
        });
        Self { overall, per_tag }
    }
}

pub fn evaluate(p: &Params, corpus: &[Prepared], by_tag: bool) -> Result<MetricsReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let preds = fused_predictions(p, corpus)?;
    let rows: Vec<_> = corpus
        .iter()
        .zip(preds)
        .map(|(x, c)| (x.label, c, x.tag.clone()))
        .collect();
    Ok(MetricsReport::from_rows(&rows, by_tag))
}

// ---- gradient check -----------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(active branch, tensor, ‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖))`.
    pub per_tensor: Vec<(Branch, String, f64)>,
}

/// Rows of the lookup tables a sample reads; every other row has no
/// influence on its loss, so its numeric gradient is exactly zero.
fn support_rows(x: &Prepared, name: &str) -> Option<Vec<usize>> {
    let mut rows: Vec<usize> = match name {
        "graph.tok" if x.graph.external.is_none() => x.graph.node_tokens.concat(),
        "graph.tok" => Vec::new(),
        "graph.kind" if x.graph.external.is_none() => x.graph.node_kind.clone(),
        "graph.kind" => Vec::new(),
        "seq.tok" => x.seq.tokens.iter().map(|t| t.0).collect(),
        _ => return None,
    };
    rows.sort_unstable();
    rows.dedup();
    Some(rows)
}

/// Compares the analytic loss gradient of both phases against central
/// differences, for every tensor of both branches.
pub fn grad_check(p: &Params, x: &Prepared, step: f64) -> Result<GradCheckReport> {
    let mut per_tensor = Vec::new();
    let mut work = p.clone();
    for branch in [Branch::Sequence, Branch::Graph] {
        let mut analytic = p.zeros_like();
        accumulate_grad(p, x, branch, 1.0, &mut analytic)?;
        for (name, a) in &analytic {
            let shape = a.dim();
            let rows: Vec<usize> = support_rows(x, name).unwrap_or_else(|| (0..shape.0).collect());
            let mut numeric = Array2::<f64>::zeros(shape);
            for &r in &rows {
                for c in 0..shape.1 {
                    let orig = p.get(name)[[r, c]];
                    work.tensors.get_mut(name).expect("tensor")[[r, c]] = orig + step;
                    let up = sample_loss(&work, x, branch)?;
                    work.tensors.get_mut(name).expect("tensor")[[r, c]] = orig - step;
                    let down = sample_loss(&work, x, branch)?;
                    work.tensors.get_mut(name).expect("tensor")[[r, c]] = orig;
                    numeric[[r, c]] = (up - down) / (2.0 * step);
                }
            }
            let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (na, nn) = (norm(a), norm(&numeric));
            let diff = norm(&(a - &numeric));
            let rel = if na + nn == 0.0 { 0.0 } else { diff / (na + nn) };
            if !rel.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
            per_tensor.push((branch, name.clone(), rel));
        }
    }
    let max_rel_error = per_tensor.iter().map(|t| t.2).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_tensor,
    })
}

// ---- data splits and checkpoints ----------------------------------------

/// Seeded 8:1:1 train/valid/test split, stratified by label. Each class
/// gives a tenth (rounded) to valid and to test; indices come back sorted.
pub fn split_811(labels: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for class in 0..2 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 / 10.0).round() as usize;
        va.extend_from_slice(&idx[..k]);
        te.extend_from_slice(&idx[k..2 * k]);
        tr.extend_from_slice(&idx[2 * k..]);
    }
    tr.sort_unstable();
    va.sort_unstable();
    te.sort_unstable();
    (tr, va, te)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    format_version: String,
    config: TrainConfig,
    tensors: BTreeMap<String, Vec<Vec<f64>>>,
}

pub fn checkpoint_to_json(p: &Params, cfg: &TrainConfig) -> String {
    let tensors = p
        .tensors
        .iter()
        .map(|(k, t)| (k.clone(), t.outer_iter().map(|r| r.to_vec()).collect()))
        .collect();
    let ck = Checkpoint {
        format_version: CHECKPOINT_FORMAT.into(),
        config: TrainConfig {
            model: p.config,
            ..cfg.clone()
        },
        tensors,
    };
    serde_json::to_string(&ck).expect("checkpoint serializes")
}

pub fn checkpoint_from_json(text: &str) -> Result<(Params, TrainConfig)> {
    let probe: serde_json::Value = serde_json::from_str(text)?;
    let found = probe.get("format_version").and_then(|v| v.as_str()).unwrap_or("");
    if found != CHECKPOINT_FORMAT {
        return Err(Error::FormatVersion {
            expected: CHECKPOINT_FORMAT.into(),
            found: found.into(),
        });
    }
    let ck: Checkpoint = serde_json::from_value(probe)?;
    let mut tensors = Tensors::new();
    for (name, rows) in ck.tensors {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::Dimension(format!("ragged tensor `{name}`")));
        }
        let flat: Vec<f64> = rows.concat();
        let t =
            Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| Error::Dimension(e.to_string()))?;
        tensors.insert(name, t);
    }
    let params = Params {
        config: ck.config.model,
        tensors,
    };
    params.validate()?;
    Ok((params, ck.config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfrontend::AstKind;
    use crate::encoder::Marker;
    use crate::graph::{CpgEdge, CpgNode, EdgeType, Graph, NodeKind, Version};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            dim: 6,
            vocab: 16,
            heads: 2,
            graph_dim: 4,
            ff_dim: 5,
            max_tokens: 32,
        }
    }

    fn sample(label: i64, seed: u64) -> Sample {
        let node = |code: &str, v| CpgNode {
            kind: NodeKind::Ast(AstKind::ExprStmt),
            code: code.into(),
            line: Some(1),
            file: "a.c".into(),
            function: "f".into(),
            version: Some(v),
            stmt: true,
        };
        let mut g = Graph::default();
        g.add_node(node("x = n ;", Version::Common));
        g.add_node(node(&format!("use ( x , {seed} ) ;"), Version::Pre));
        g.add_node(node("if ( x > n )", Version::Post));
        for (s, d, t, v) in [
            (0, 1, EdgeType::Ddg, Version::Pre),
            (0, 2, EdgeType::Ddg, Version::Post),
            (0, 2, EdgeType::Cfg, Version::Common),
        ] {
            g.edges.push(CpgEdge {
                src: s,
                dst: d,
                etype: t,
                label: None,
                version: Some(v),
            });
        }
        let seq = ["if", "(", "x", ">", "n", ")"]
            .iter()
            .map(|t| MarkedToken {
                marker: Marker::Post,
                text: t.to_string(),
            })
            .chain(std::iter::once(MarkedToken {
                marker: Marker::Pre,
                text: seed.to_string(),
            }))
            .collect();
        Sample {
            id: format!("s{seed}"),
            graph: RepoCpg::from_graph(g),
            seq,
            label,
            tag: None,
        }
    }

    #[test]
    fn fusion_examples() {
        assert_eq!(fuse([1.0, 3.0], [1.0, 3.0]).p, [1.0, 3.0]);
        let z = fuse([0.0, 0.0], [0.0, 0.0]);
        assert_eq!((z.p, z.class), ([0.0, 0.0], 0));
        let t = fuse([2.0, 0.0], [0.0, 2.0]);
        assert_eq!((t.p, t.class), ([1.0, 1.0], 0));
        let f = Array1::zeros(4);
        assert!(predict(&f, &f, &Array2::zeros((3, 2)), &Array2::zeros((4, 2))).is_err());
    }

    #[test]
    fn fusion_is_linear() {
        let (g, s) = ([0.3, -1.2], [2.0, 0.7]);
        let base = fuse(g, s);
        for c in [0.5, 2.0, 7.0] {
            let scaled = fuse([g[0] * c, g[1] * c], [s[0] * c, s[1] * c]);
            assert!((scaled.p[0] - c * base.p[0]).abs() < 1e-12);
            assert!((scaled.p[1] - c * base.p[1]).abs() < 1e-12);
            assert_eq!(scaled.class, base.class);
        }
    }

    #[test]
    fn schedule_and_loss() {
        let (l, b) = progressive_loss([9.0, 1.0], [0.0, 0.0], 1, 0, 10, Schedule::SequenceFirst).unwrap();
        assert_eq!(b, Branch::Sequence);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(Schedule::SequenceFirst.active(5, 10), Branch::Graph);
        assert_eq!(Schedule::SequenceFirst.active(4, 10), Branch::Sequence);
        assert_eq!(Schedule::GraphFirst.active(0, 10), Branch::Graph);
        assert_eq!(Schedule::GraphFirst.active(9, 10), Branch::Sequence);
        assert!(matches!(
            progressive_loss([0.0; 2], [0.0; 2], 2, 0, 10, Schedule::SequenceFirst),
            Err(Error::InvalidLabel(2))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for epochs in [0, 1, 3] {
            let c = TrainConfig {
                epochs,
                ..TrainConfig::default()
            };
            assert!(c.validate().is_err());
        }
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 4, "seed": 9}"#).unwrap();
        assert_eq!((c.epochs, c.seed, c.batch_size), (4, 9, 4));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 4}"#).is_err());
    }

    #[test]
    fn metric_examples() {
        let m = Metrics::from_counts(Confusion {
            tp: 3,
            tn: 5,
            fp: 1,
            fn_: 1,
        });
        assert_eq!(m.accuracy, 0.8);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.75);
        assert_eq!(m.f1, 0.75);
        assert_eq!(m.fpr, 1.0 / 6.0);
        let neg = Metrics::from_counts(Confusion {
            tn: 4,
            ..Confusion::default()
        });
        assert_eq!(
            (neg.precision, neg.recall, neg.f1, neg.fpr, neg.accuracy),
            (0.0, 0.0, 0.0, 0.0, 1.0)
        );
        let json = serde_json::to_string(&MetricsReport::from_rows(
            &[(1, 1, Some("a".into())), (0, 1, Some("b".into()))],
            true,
        ))
        .unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.per_tag.as_ref().unwrap().len(), 2);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
        assert!(json.contains("\"fn\":0"));
    }

    #[test]
    fn frozen_branch_gets_no_gradient() {
        let p = Params::init(tiny_model(), 4).unwrap();
        let x = sample(1, 2).prepare(&p.config).unwrap();
        for branch in [Branch::Graph, Branch::Sequence] {
            let mut g = p.zeros_like();
            accumulate_grad(&p, &x, branch, 1.0, &mut g).unwrap();
            for (name, t) in &g {
                if Branch::of(name) != branch {
                    assert!(t.iter().all(|&v| v == 0.0), "{name}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut p = Params::init(tiny_model(), 11).unwrap();
        // zero heads would block every gradient below them
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for name in ["graph.head", "seq.head", "seq.b1"] {
            let t = p.tensors.get_mut(name).unwrap();
            t.mapv_inplace(|_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        }
        let x = sample(1, 3).prepare(&p.config).unwrap();
        let r = grad_check(&p, &x, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{:?}", r.per_tensor);
        assert_eq!(r.per_tensor.len(), 2 * p.tensors.len());
    }

    #[test]
    fn degenerate_sample_is_finite() {
        let p = Params::init(tiny_model(), 1).unwrap();
        let empty = Sample {
            id: "e".into(),
            graph: RepoCpg::from_graph(Graph::default()),
            seq: vec![],
            label: 0,
            tag: None,
        };
        let x = empty.prepare(&p.config).unwrap();
        let r = grad_check(&p, &x, 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn training_is_deterministic_and_freezes() {
        let cfg = TrainConfig {
            epochs: 2,
            model: tiny_model(),
            seed: 3,
            lr_graph: 1e-2,
            lr_seq: 1e-2,
            ..TrainConfig::default()
        };
        let xs: Vec<_> = [sample(1, 1)]
            .iter()
            .map(|s| s.prepare(&cfg.model).unwrap())
            .collect();
        let init = Params::init(cfg.model, cfg.seed).unwrap();
        let mut snaps = Vec::new();
        let a = train_observed(&xs, &[], &cfg, |_, p| snaps.push(p.clone())).unwrap();
        let changed = |a: &Params, b: &Params, br: Branch| {
            a.tensors
                .iter()
                .any(|(k, t)| Branch::of(k) == br && t != b.get(k))
        };
        assert!(changed(&snaps[0], &init, Branch::Sequence));
        assert!(!changed(&snaps[0], &init, Branch::Graph));
        assert!(changed(&snaps[1], &snaps[0], Branch::Graph));
        assert!(!changed(&snaps[1], &snaps[0], Branch::Sequence));
        let b = train(&xs, &[], &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = TrainConfig {
            model: tiny_model(),
            ..TrainConfig::default()
        };
        let p = Params::init(cfg.model, 8).unwrap();
        let json = checkpoint_to_json(&p, &cfg);
        let (q, c) = checkpoint_from_json(&json).unwrap();
        assert_eq!(q, p);
        assert_eq!(c, cfg);
        assert_eq!(checkpoint_to_json(&q, &c), json);
        let bad = json.replace(CHECKPOINT_FORMAT, "repospd-ckpt-0");
        assert!(matches!(
            checkpoint_from_json(&bad),
            Err(Error::FormatVersion { .. })
        ));
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let (tr, va, te) = split_811(&labels, 1);
        assert_eq!((tr.len(), va.len(), te.len()), (32, 4, 4));
        assert_eq!(va.iter().filter(|&&i| labels[i] == 1).count(), 2);
        let mut all: Vec<usize> = [tr.clone(), va.clone(), te.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        assert_eq!(split_811(&labels, 1), (tr, va, te));
    }

    #[test]
    fn evaluate_rejects_empty_corpus() {
        let p = Params::init(tiny_model(), 0).unwrap();
        assert!(matches!(evaluate(&p, &[], false), Err(Error::EmptyCorpus)));
    }
}
