//! Downstream fine-tuning and evaluation.
//!
//! The chosen pre-trained encoder is copied under the `ft.` prefix and
//! trained together with a fresh task head: a linear classifier for node
//! classification, or a trainable cosine scorer for link prediction. No
//! parameter is frozen. Model selection uses the validation metric and the
//! test metric is computed once, on the selected snapshot.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::{Backbone, Task, TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::gnn::{cosine_score, feature_matrix, CosineHead, Gnn};
use crate::graph::{Edge, Graph, NodeId, NodeSplit};
use crate::mask::{sample_negatives, CandidateSet};
use crate::pretrain::generate_edges;
use crate::rng::{self, Stream};
use crate::tensor::{adamw_step, Checkpoint, Csr, ParamStore, Tape, Tensor};

pub const CLASSIFIER_WEIGHT: &str = "cls.W";
pub const CLASSIFIER_BIAS: &str = "cls.b";
const PREFIX: &str = "ft";

/// Share of predictions equal to the label. For single-label multi-class
/// prediction this is the micro-averaged F1.
pub fn eval_micro_f1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("evaluation nodes"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `1 / rank` of the true candidate. Every negative scoring at least as high
/// as the truth (or incomparably, e.g. NaN) is ranked ahead of it.
pub fn reciprocal_rank(truth: f64, negatives: impl IntoIterator<Item = f64>) -> f64 {
    let ahead = negatives.into_iter().filter(|&s| !(s < truth)).count();
    1.0 / (ahead + 1) as f64
}

/// Anything that scores a `(candidate, fixed)` node pair.
pub trait LinkScorer {
    fn score(&self, candidate: NodeId, fixed: NodeId) -> f64;
}

impl<F: Fn(NodeId, NodeId) -> f64> LinkScorer for F {
    fn score(&self, candidate: NodeId, fixed: NodeId) -> f64 {
        self(candidate, fixed)
    }
}

/// Cosine scorer over fixed embeddings.
#[derive(Clone, Debug)]
pub struct EmbeddingScorer {
    pub embeddings: Tensor,
    pub weight: Tensor,
}

impl LinkScorer for EmbeddingScorer {
    fn score(&self, candidate: NodeId, fixed: NodeId) -> f64 {
        cosine_score(self.embeddings.row(candidate), self.embeddings.row(fixed), &self.weight)
            .unwrap_or(f64::NAN)
    }
}

/// Mean reciprocal rank over prepared candidate sets.
pub fn mrr_of_candidates<S: LinkScorer + ?Sized>(scorer: &S, sets: &[CandidateSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::Empty("evaluation edges"));
    }
    let total: f64 = sets
        .iter()
        .map(|c| {
            let truth = scorer.score(c.truth, c.fixed);
            reciprocal_rank(truth, c.negatives.iter().map(|&u| scorer.score(u, c.fixed)))
        })
        .sum();
    Ok(total / sets.len() as f64)
}

/// Candidate sets for `edges`: the first endpoint is the one to find, the
/// second stays fixed, and `n_neg` non-neighbours of the fixed node of
/// `graph` compete with it.
pub fn link_candidates<R: rand::Rng + ?Sized>(
    graph: &Graph,
    edges: &[Edge],
    n_neg: usize,
    rng: &mut R,
) -> Result<Vec<CandidateSet>> {
    edges
        .iter()
        .map(|&e| sample_negatives(graph, e, n_neg, rng))
        .collect()
}

/// MRR of `scorer` on `eval_edges`, each ranked against `n_neg` negatives.
pub fn eval_link_mrr<S: LinkScorer + ?Sized, R: rand::Rng + ?Sized>(
    scorer: &S,
    graph: &Graph,
    eval_edges: &[Edge],
    n_neg: usize,
    rng: &mut R,
) -> Result<f64> {
    mrr_of_candidates(scorer, &link_candidates(graph, eval_edges, n_neg, rng)?)
}

/// Which encoder a fine-tuning run starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Disc,
    Gen,
    Scratch,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Disc => "disc",
            Source::Gen => "gen",
            Source::Scratch => "scratch",
        }
    }
}

/// Resolves `auto`: a checkpoint whose discriminator never trained
/// (`lambda = 0` or the generator-only variant) hands over its generator.
pub fn resolve_backbone(checkpoint: &Checkpoint, choice: Backbone) -> Result<Source> {
    match choice {
        Backbone::Disc => Ok(Source::Disc),
        Backbone::Gen => Ok(Source::Gen),
        Backbone::Auto => {
            let lambda: f64 = checkpoint
                .meta("lambda")
                .ok_or_else(|| Error::Checkpoint("missing meta key 'lambda'".into()))?
                .parse()
                .map_err(|e| Error::Checkpoint(format!("meta 'lambda': {e}")))?;
            let variant = checkpoint.meta("variant").map(Variant::parse).transpose()?;
            if lambda == 0.0 || variant == Some(Variant::GeneratorOnly) {
                Ok(Source::Gen)
            } else {
                Ok(Source::Disc)
            }
        }
    }
}

fn meta_usize(ck: &Checkpoint, key: &str) -> Result<usize> {
    ck.meta(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing meta key '{key}'")))?
        .parse()
        .map_err(|e| Error::Checkpoint(format!("meta '{key}': {e}")))
}

/// Encoder and its starting parameters (under `ft.`), including the cosine
/// head `ft.cos.W` of the source model.
fn starting_backbone(
    cfg: &TrainConfig,
    checkpoint: Option<&Checkpoint>,
    feature_dim: usize,
) -> Result<(Gnn, ParamStore, Source)> {
    let dropout = cfg.finetune.dropout;
    match checkpoint {
        None => {
            let gnn = Gnn::new(PREFIX, feature_dim, cfg.model.hidden, cfg.model.layers, dropout)?;
            let mut store = ParamStore::new();
            let mut r = rng::stream(cfg.run.seed, 2, Stream::Finetune);
            gnn.init(&mut store, &mut r)?;
            CosineHead::new(PREFIX, gnn.hidden).init(&mut store, cfg.model.cos_init_noise, &mut r)?;
            Ok((gnn, store, Source::Scratch))
        }
        Some(ck) => {
            let source = resolve_backbone(ck, cfg.finetune.backbone)?;
            let ck_dim = meta_usize(ck, "feature_dim")?;
            if ck_dim != feature_dim {
                return Err(Error::Checkpoint(format!(
                    "checkpoint expects {ck_dim} input features, graph has {feature_dim}"
                )));
            }
            let gnn = Gnn::new(
                PREFIX,
                feature_dim,
                meta_usize(ck, "hidden")?,
                meta_usize(ck, "layers")?,
                dropout,
            )?;
            let from = source.as_str();
            let mut store = ck.params.renamed(&format!("{from}.gnn."), &format!("{PREFIX}.gnn."));
            store.merge(ck.params.renamed(&format!("{from}.cos."), &format!("{PREFIX}.cos.")))?;
            let expected = 3 + 3 * gnn.layers;
            if store.len() != expected {
                return Err(Error::Checkpoint(format!(
                    "found {} '{from}' encoder parameters, expected {expected}",
                    store.len()
                )));
            }
            Ok((gnn, store, source))
        }
    }
}

/// Local train/valid/test node ids of a fine-tuning graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalSplit {
    pub train: Vec<NodeId>,
    pub valid: Vec<NodeId>,
    pub test: Vec<NodeId>,
}

impl LocalSplit {
    /// The layout produced by the node-transfer split.
    pub fn from_split(split: &NodeSplit) -> Self {
        let (a, b, c) = split.finetune_ranges();
        Self {
            train: a.collect(),
            valid: b.collect(),
            test: c.collect(),
        }
    }
}

/// Outcome of one fine-tuning run.
#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub source: Source,
    /// Parameters of the selected snapshot.
    pub params: ParamStore,
    pub best_step: usize,
    pub best_valid: f64,
    pub test: f64,
    /// Training-set metric of the selected snapshot (node task only).
    pub train: Option<f64>,
    /// `(step, validation metric)` at every evaluation.
    pub history: Vec<(usize, f64)>,
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn train_subset(cfg: &TrainConfig, train: &[NodeId]) -> Vec<NodeId> {
    let frac = cfg.finetune.train_frac;
    if frac >= 1.0 {
        return train.to_vec();
    }
    let k = ((frac * train.len() as f64).round() as usize).clamp(1, train.len());
    let mut picked = index::sample(&mut rng::stream(cfg.run.seed, 0, Stream::Finetune), train.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| train[i]).collect()
}

/// Node classification: softmax cross-entropy on the training nodes, model
/// selection by validation micro-F1. `checkpoint = None` trains from scratch.
pub fn finetune_node(
    cfg: &TrainConfig,
    checkpoint: Option<&Checkpoint>,
    graph: &Graph,
    split: &LocalSplit,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let labels = graph
        .labels()
        .ok_or_else(|| Error::MissingLabels("node classification needs a label per node".into()))?;
    let n = graph.num_nodes();
    for &v in split.train.iter().chain(&split.valid).chain(&split.test) {
        if v >= n {
            return Err(Error::NodeOutOfRange { node: v, num_nodes: n });
        }
    }
    for (name, nodes) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        if nodes.is_empty() {
            return Err(Error::MissingLabels(format!("the {name} split has no nodes")));
        }
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);

    let (gnn, mut params, source) = starting_backbone(cfg, checkpoint, graph.feature_dim())?;
    let mut head_rng = rng::stream(cfg.run.seed, 1, Stream::Finetune);
    params.insert(CLASSIFIER_WEIGHT, Tensor::glorot(gnn.hidden, n_classes, &mut head_rng))?;
    params.insert(CLASSIFIER_BIAS, Tensor::zeros(&[n_classes]))?;

    let x = feature_matrix(graph)?;
    let csr = Csr::from_edges(n, graph.edges(), graph.is_directed())?;
    let train = train_subset(cfg, &split.train);
    let train_labels: Vec<usize> = train.iter().map(|&v| labels[v]).collect();
    let opt = cfg.finetune_optimizer();
    let ft = &cfg.finetune;

    let predict = |params: &ParamStore| -> Result<Vec<usize>> {
        let tape = Tape::new();
        let b = tape.bind(params);
        let h = gnn.forward::<rng::Rng>(&b, tape.constant(x.clone()), &csr, None)?;
        let logits = h.matmul(&b.get(CLASSIFIER_WEIGHT)?)?.add_row(&b.get(CLASSIFIER_BIAS)?)?;
        let out = argmax_rows(&logits.value());
        Ok(out)
    };
    let f1_on = |pred: &[usize], nodes: &[NodeId]| -> Result<f64> {
        let p: Vec<usize> = nodes.iter().map(|&v| pred[v]).collect();
        let l: Vec<usize> = nodes.iter().map(|&v| labels[v]).collect();
        eval_micro_f1(&p, &l)
    };

    let mut best = (f64::NEG_INFINITY, 0, params.clone());
    let mut history = Vec::new();
    for step in 0..=ft.steps {
        if step % ft.eval_every == 0 || step == ft.steps {
            let valid = f1_on(&predict(&params)?, &split.valid)?;
            history.push((step, valid));
            if valid > best.0 {
                best = (valid, step, params.clone());
            }
        }
        if step == ft.steps {
            break;
        }
        let tape = Tape::new();
        let b = tape.bind(&params);
        let mut drop = rng::stream(cfg.run.seed, step as u64, Stream::FinetuneDropout);
        let h = gnn.forward(&b, tape.constant(x.clone()), &csr, Some(&mut drop))?;
        let loss = h
            .gather_rows(&train)?
            .matmul(&b.get(CLASSIFIER_WEIGHT)?)?
            .add_row(&b.get(CLASSIFIER_BIAS)?)?
            .softmax_cross_entropy(&train_labels)?
            .scale(1.0 / train.len() as f64)?;
        if !loss.item().is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let grads = tape.backward(loss)?.named(&b);
        adamw_step(&mut params, &grads, &opt)?;
    }

    let (best_valid, best_step, params) = best;
    let pred = predict(&params)?;
    Ok(FinetuneOutcome {
        source,
        best_step,
        best_valid,
        test: f1_on(&pred, &split.test)?,
        train: Some(f1_on(&pred, &train)?),
        params,
        history,
    })
}

/// Held-out edges for link prediction.
#[derive(Clone, Debug)]
pub struct LinkSplit {
    /// The fine-tuning graph without the held-out edges.
    pub train_graph: Graph,
    pub valid: Vec<Edge>,
    pub test: Vec<Edge>,
}

/// Holds out `round(holdout * |E|)` uniformly chosen edges, half for
/// validation and half for testing. Undirected edges get a random
/// orientation; the first endpoint is the one to be found.
pub fn split_links(graph: &Graph, holdout: f64, seed: u64) -> Result<LinkSplit> {
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(Error::InvalidArgument(format!("link holdout {holdout} must lie in (0, 1)")));
    }
    let mut r = rng::stream(seed, 0, Stream::LinkEval);
    let mut edges = graph.edges().to_vec();
    edges.shuffle(&mut r);
    let k = (holdout * edges.len() as f64).round() as usize;
    if k < 2 {
        return Err(Error::EmptySplit("link evaluation"));
    }
    let rest = edges.split_off(k);
    if !graph.is_directed() {
        for e in &mut edges {
            if r.random_bool(0.5) {
                *e = (e.1, e.0);
            }
        }
    }
    let test = edges.split_off(k / 2);
    Ok(LinkSplit {
        train_graph: graph.with_edges(rest)?,
        valid: edges,
        test,
    })
}

/// Link prediction: each training step ranks the true endpoint of a batch
/// of training edges against `link_n_neg` negatives with softmax
/// cross-entropy; selection by validation MRR.
pub fn finetune_link(
    cfg: &TrainConfig,
    checkpoint: Option<&Checkpoint>,
    graph: &Graph,
    links: &LinkSplit,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let ft = &cfg.finetune;
    let seed = cfg.run.seed;
    let train_graph = &links.train_graph;
    let n = train_graph.num_nodes();
    if train_graph.num_edges() == 0 {
        return Err(Error::EmptySplit("link training"));
    }
    let (gnn, mut params, source) = starting_backbone(cfg, checkpoint, graph.feature_dim())?;
    let head = CosineHead::new(PREFIX, gnn.hidden);

    let x = feature_matrix(train_graph)?;
    let csr = Csr::from_edges(n, train_graph.edges(), train_graph.is_directed())?;
    let valid_sets = link_candidates(graph, &links.valid, ft.link_n_neg, &mut rng::stream(seed, 1, Stream::LinkEval))?;
    let test_sets = link_candidates(graph, &links.test, ft.link_n_neg, &mut rng::stream(seed, 2, Stream::LinkEval))?;
    let opt = cfg.finetune_optimizer();

    let scorer = |params: &ParamStore| -> Result<EmbeddingScorer> {
        let tape = Tape::new();
        let b = tape.bind(params);
        let h = gnn.forward::<rng::Rng>(&b, tape.constant(x.clone()), &csr, None)?;
        let embeddings = h.value().clone();
        Ok(EmbeddingScorer {
            embeddings,
            weight: params.value(&head.name)?.clone(),
        })
    };

    let mut best = (f64::NEG_INFINITY, 0, params.clone());
    let mut history = Vec::new();
    let batch = cfg.sampler.batch_size.min(train_graph.num_edges());
    for step in 0..=ft.steps {
        if step % ft.eval_every == 0 || step == ft.steps {
            let valid = mrr_of_candidates(&scorer(&params)?, &valid_sets)?;
            history.push((step, valid));
            if valid > best.0 {
                best = (valid, step, params.clone());
            }
        }
        if step == ft.steps {
            break;
        }
        let mut r = rng::stream(seed, step as u64 + 3, Stream::Finetune);
        let edges = train_graph.edges();
        let mut picked: Vec<Edge> = index::sample(&mut r, edges.len(), batch)
            .into_iter()
            .map(|i| edges[i])
            .collect();
        if !train_graph.is_directed() {
            for e in &mut picked {
                if r.random_bool(0.5) {
                    *e = (e.1, e.0);
                }
            }
        }
        let sets = link_candidates(train_graph, &picked, ft.link_n_neg, &mut r)?;
        let tape = Tape::new();
        let b = tape.bind(&params);
        let mut drop = rng::stream(seed, step as u64, Stream::FinetuneDropout);
        let h = gnn.forward(&b, tape.constant(x.clone()), &csr, Some(&mut drop))?;
        let loss = generate_edges(&b, &head, h, &sets)?
            .loss
            .scale(1.0 / sets.len() as f64)?;
        if !loss.item().is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let grads = tape.backward(loss)?.named(&b);
        adamw_step(&mut params, &grads, &opt)?;
    }

    let (best_valid, best_step, params) = best;
    let test = mrr_of_candidates(&scorer(&params)?, &test_sets)?;
    Ok(FinetuneOutcome {
        source,
        params,
        best_step,
        best_valid,
        test,
        train: None,
        history,
    })
}

/// Results file contents of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_digest: String,
    pub task: Task,
    /// `micro_f1` or `mrr`.
    pub metric: String,
    pub backbone: Source,
    /// Variant of the pre-training run, absent when training from scratch.
    pub pretrain_variant: Option<String>,
    pub test: f64,
    pub best_valid: f64,
    pub best_step: usize,
}

impl RunRecord {
    pub fn new(cfg: &TrainConfig, checkpoint: Option<&Checkpoint>, outcome: &FinetuneOutcome) -> Self {
        Self {
            seed: cfg.run.seed,
            config_digest: cfg.digest(),
            task: cfg.finetune.task,
            metric: match cfg.finetune.task {
                Task::Node => "micro_f1",
                Task::Link => "mrr",
            }
            .to_string(),
            backbone: outcome.source,
            pretrain_variant: checkpoint.and_then(|c| c.meta("variant")).map(str::to_string),
            test: outcome.test,
            best_valid: outcome.best_valid,
            best_step: outcome.best_step,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serialises")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Fine-tunes on `graph` for the configured task.
pub fn finetune(
    cfg: &TrainConfig,
    checkpoint: Option<&Checkpoint>,
    graph: &Graph,
    split: &LocalSplit,
) -> Result<FinetuneOutcome> {
    match cfg.finetune.task {
        Task::Node => finetune_node(cfg, checkpoint, graph, split),
        Task::Link => {
            let links = split_links(graph, cfg.finetune.link_holdout, cfg.run.seed)?;
            finetune_link(cfg, checkpoint, graph, &links)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, GraphOptions, SbmParams};
    use crate::pretrain::{make_checkpoint, pretrain};
    use proptest::prelude::*;

    #[test]
    fn micro_f1_examples() {
        assert_eq!(eval_micro_f1(&[1, 2, 0], &[1, 2, 0]).unwrap(), 1.0);
        assert_eq!(eval_micro_f1(&[1, 1, 1], &[0, 2, 0]).unwrap(), 0.0);
        assert_eq!(eval_micro_f1(&[0, 1, 2, 3], &[0, 1, 2, 0]).unwrap(), 0.75);
        assert!(eval_micro_f1(&[0], &[0, 1]).is_err());
        assert!(eval_micro_f1(&[], &[]).is_err());
    }

    #[test]
    fn reciprocal_rank_examples() {
        assert_eq!(reciprocal_rank(0.9, [0.1, 0.2, 0.3]), 1.0);
        assert_eq!(reciprocal_rank(0.5, [0.9, 0.8, 0.7, 0.1]), 0.25);
        // ties go against the truth
        assert_eq!(reciprocal_rank(0.5, [0.5, 0.5, 0.1]), 1.0 / 3.0);
        assert_eq!(reciprocal_rank(f64::NAN, [0.0]), 0.5);
    }

    #[test]
    fn oracle_and_fixed_rank_scorers() {
        let sets: Vec<CandidateSet> = (0..5)
            .map(|i| CandidateSet {
                fixed: 100 + i,
                truth: i,
                negatives: (10..20).collect(),
            })
            .collect();
        let oracle = |u: NodeId, _: NodeId| if u < 10 { 1.0 } else { 0.0 };
        assert_eq!(mrr_of_candidates(&oracle, &sets).unwrap(), 1.0);
        let rank4 = |u: NodeId, _: NodeId| if u < 10 { 0.5 } else if u < 13 { 0.9 } else { 0.1 };
        assert_eq!(mrr_of_candidates(&rank4, &sets).unwrap(), 0.25);
        assert!(mrr_of_candidates(&oracle, &[]).is_err());
    }

    proptest! {
        #[test]
        fn micro_f1_ignores_relabelling(
            pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..40),
            shift in 1usize..5,
        ) {
            let (p, l): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let relabel = |v: &Vec<usize>| v.iter().map(|c| (c + shift) % 5).collect::<Vec<_>>();
            prop_assert_eq!(eval_micro_f1(&p, &l).unwrap(), eval_micro_f1(&relabel(&p), &relabel(&l)).unwrap());
        }

        #[test]
        fn raising_the_truth_never_lowers_mrr(
            scores in proptest::collection::vec(0.0f64..1.0, 2..30),
            bump in 0.0f64..1.0,
        ) {
            let before = reciprocal_rank(scores[0], scores[1..].iter().copied());
            let after = reciprocal_rank(scores[0] + bump, scores[1..].iter().copied());
            prop_assert!(after >= before);
            prop_assert!(before > 0.0 && before <= 1.0);
        }

        #[test]
        fn breaking_ties_never_goes_below_the_tied_value(
            k in 1usize..20,
            noise in proptest::collection::vec(-1e-9f64..1e-9, 21),
        ) {
            let tied = reciprocal_rank(0.5, std::iter::repeat(0.5).take(k));
            let jittered = reciprocal_rank(0.5 + noise[0], noise[1..=k].iter().map(|e| 0.5 + e));
            prop_assert!(jittered >= tied);
        }
    }

    fn sbm() -> Graph {
        generate_sbm(
            &SbmParams {
                n_nodes: 240,
                n_blocks: 3,
                p_in: 0.12,
                p_out: 0.01,
                feature_dim: 3,
                noise_scale: 1.0,
            },
            5,
        )
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.model.hidden = 8;
        cfg.model.layers = 2;
        cfg.sampler.batch_size = 40;
        cfg.sampler.width = 16;
        cfg.sampler.depth = 2;
        cfg.gen.n_neg = 15;
        cfg.pretrain.steps = 3;
        cfg.finetune.steps = 20;
        cfg.finetune.link_n_neg = 20;
        cfg
    }

    // interleaved, since SBM blocks are contiguous id ranges
    fn thirds(n: usize) -> LocalSplit {
        let part = |r: usize| (0..n).filter(|v| v % 3 == r).collect();
        LocalSplit {
            train: part(0),
            valid: part(1),
            test: part(2),
        }
    }

    #[test]
    fn zero_steps_scores_the_initial_head() {
        let g = sbm();
        let mut cfg = small_cfg();
        cfg.finetune.steps = 0;
        let split = thirds(g.num_nodes());
        let out = finetune_node(&cfg, None, &g, &split).unwrap();
        assert_eq!(out.best_step, 0);
        assert_eq!(out.history.len(), 1);

        // recompute the untouched model's predictions by hand
        let (gnn, mut params, _) = starting_backbone(&cfg, None, g.feature_dim()).unwrap();
        let mut r = rng::stream(cfg.run.seed, 1, Stream::Finetune);
        params.insert(CLASSIFIER_WEIGHT, Tensor::glorot(gnn.hidden, 3, &mut r)).unwrap();
        params.insert(CLASSIFIER_BIAS, Tensor::zeros(&[3])).unwrap();
        assert_eq!(params, out.params);
    }

    #[test]
    fn separable_features_are_learned() {
        // one-hot class features, no edges
        let n = 60;
        let labels: Vec<usize> = (0..n).map(|i| (i / 3) % 3).collect();
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&c| (0..3).map(|k| if k == c { 1.0 } else { 0.0 }).collect())
            .collect();
        let g = Graph::new(
            n,
            vec![],
            Some(crate::graph::Features::from_rows(&rows).unwrap()),
            Some(labels),
            GraphOptions::default(),
        )
        .unwrap();
        let mut cfg = small_cfg();
        cfg.finetune.steps = 150;
        cfg.finetune.lr = 0.01;
        cfg.finetune.dropout = 0.0;
        let out = finetune_node(&cfg, None, &g, &thirds(n)).unwrap();
        assert_eq!(out.train, Some(1.0));
        assert_eq!(out.test, 1.0);
    }

    #[test]
    fn labels_are_required() {
        let g = Graph::new(6, vec![(0, 1)], None, None, GraphOptions::default()).unwrap();
        let err = finetune_node(&small_cfg(), None, &g, &thirds(6)).unwrap_err();
        assert!(matches!(err, Error::MissingLabels(_)));
    }

    #[test]
    fn checkpoint_backbones() {
        let g = sbm();
        let mut cfg = small_cfg();
        let pre = pretrain(&cfg, &g).unwrap();
        let ck = make_checkpoint(&cfg, g.feature_dim(), pre.params.clone());
        assert_eq!(resolve_backbone(&ck, Backbone::Auto).unwrap(), Source::Disc);

        let (_, store, _) = starting_backbone(&cfg, Some(&ck), 3).unwrap();
        assert_eq!(
            store.value("ft.gnn.layer1.W_self").unwrap(),
            pre.params.value("disc.gnn.layer1.W_self").unwrap()
        );
        assert_eq!(store.value("ft.cos.W").unwrap(), pre.params.value("disc.cos.W").unwrap());

        cfg.pretrain.lambda = 0.0;
        let ck0 = make_checkpoint(&cfg, g.feature_dim(), pre.params.clone());
        assert_eq!(resolve_backbone(&ck0, Backbone::Auto).unwrap(), Source::Gen);
        assert_eq!(resolve_backbone(&ck0, Backbone::Disc).unwrap(), Source::Disc);
        let out = finetune_node(&cfg, Some(&ck0), &g, &thirds(g.num_nodes())).unwrap();
        assert_eq!(out.source, Source::Gen);

        assert!(starting_backbone(&cfg, Some(&ck), 4).is_err());
    }

    #[test]
    fn training_improves_on_chance() {
        let g = sbm();
        let mut cfg = small_cfg();
        cfg.finetune.steps = 60;
        cfg.finetune.lr = 0.01;
        let out = finetune_node(&cfg, None, &g, &thirds(g.num_nodes())).unwrap();
        assert!(out.best_valid > 0.5, "{:?}", out.history);
        assert!(out.history.iter().all(|&(_, v)| v <= out.best_valid));
    }

    #[test]
    fn link_split_and_training() {
        let g = sbm();
        let links = split_links(&g, 0.2, 0).unwrap();
        let held = links.valid.len() + links.test.len();
        assert_eq!(held, (0.2 * g.num_edges() as f64).round() as usize);
        assert_eq!(links.train_graph.num_edges() + held, g.num_edges());
        for &(a, b) in links.valid.iter().chain(&links.test) {
            assert!(g.adjacent(a, b) && !links.train_graph.adjacent(a, b));
        }

        let mut cfg = small_cfg();
        cfg.finetune.task = Task::Link;
        cfg.finetune.steps = 10;
        let out = finetune(&cfg, None, &g, &thirds(g.num_nodes())).unwrap();
        assert!(out.test > 0.0 && out.test <= 1.0);
        let again = finetune(&cfg, None, &g, &thirds(g.num_nodes())).unwrap();
        assert_eq!(out.test, again.test);
    }

    #[test]
    fn record_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let rec = RunRecord {
            seed: 3,
            config_digest: cfg.digest(),
            task: Task::Node,
            metric: "micro_f1".into(),
            backbone: Source::Scratch,
            pretrain_variant: None,
            test: 0.8125,
            best_valid: 0.75,
            best_step: 15,
        };
        let path = dir.path().join("r.json");
        rec.write(&path).unwrap();
        assert_eq!(RunRecord::read(&path).unwrap(), rec);
        assert!(rec.to_json().contains("\"backbone\": \"scratch\""));
    }
}
