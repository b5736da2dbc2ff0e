//! The pre-training loop.
//!
//! Each step samples a dense subgraph, masks some of its edges, lets the
//! generator propose a source for every masked edge and a vector for every
//! selected feature node, and trains the discriminator to tell the proposals
//! from the originals on the repaired graph. Both models share one optimiser
//! step on `(L_ge + L_gf) + lambda (L_de + L_df)`.

pub mod coverage;
pub mod metrics;
pub mod objective;

use std::sync::mpsc;

use rand::seq::index;
use rand::Rng as _;

pub use coverage::{coverage_stats, true_edge_fraction, CoverageRow, CoverageStats};
pub use metrics::{metrics_from_csv, metrics_to_csv, read_metrics, write_metrics, StepMetrics};
pub use objective::{
    discriminate_edges, discriminate_features, generate_edges, generate_features, total_loss,
    Discrimination, FeatureGeneration, GenerationOutcome, DISC_FEATURE_HEAD, GEN_FEATURE_HEAD,
};

use crate::config::{TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::gnn::{feature_matrix, CosineHead, Gnn};
use crate::graph::{Edge, Graph, NodeId};
use crate::mask::{
    mask_edges, sample_negatives, sample_positive_edges, select_feature_nodes, CandidateSet, MaskedView,
};
use crate::rng::{self, Stream};
use crate::sampler::sample_subgraph;
use crate::tensor::{
    adamw_step, check_gradients, AdamW, Bound, Checkpoint, Csr, GradCheckReport, ParamStore, Tape, Tensor, Var,
};

/// Generator and discriminator architecture for one run.
#[derive(Clone, Debug)]
pub struct Models {
    pub gen: Gnn,
    pub disc: Gnn,
    pub gen_cos: CosineHead,
    pub disc_cos: CosineHead,
    pub feature_dim: usize,
    cos_init_noise: f64,
}

impl Models {
    pub fn new(cfg: &TrainConfig, feature_dim: usize) -> Result<Self> {
        let m = &cfg.model;
        Ok(Self {
            gen: Gnn::new("gen", feature_dim, m.hidden, m.layers, m.dropout)?,
            disc: Gnn::new("disc", feature_dim, m.hidden, m.layers, m.dropout)?,
            gen_cos: CosineHead::new("gen", m.hidden),
            disc_cos: CosineHead::new("disc", m.hidden),
            feature_dim,
            cos_init_noise: m.cos_init_noise,
        })
    }

    /// Fresh parameters for both models, drawn from one stream in a fixed
    /// order so every variant starts from the same point.
    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut r = rng::stream(seed, 0, Stream::Init);
        let mut store = ParamStore::new();
        self.gen.init(&mut store, &mut r)?;
        self.gen_cos.init(&mut store, self.cos_init_noise, &mut r)?;
        store.insert(GEN_FEATURE_HEAD, Tensor::glorot(self.gen.hidden, self.feature_dim, &mut r))?;
        self.disc.init(&mut store, &mut r)?;
        self.disc_cos.init(&mut store, self.cos_init_noise, &mut r)?;
        store.insert(DISC_FEATURE_HEAD, Tensor::glorot(self.disc.hidden, 1, &mut r))?;
        Ok(store)
    }
}

/// Everything random about one step, fixed before any parameter is read.
#[derive(Clone, Debug)]
pub struct Batch {
    pub step: usize,
    /// Parent id of each local node.
    pub node_ids: Vec<NodeId>,
    /// Induced subgraph in local ids.
    pub graph: Graph,
    pub view: MaskedView,
    pub candidates: Vec<CandidateSet>,
    /// Uniform picks from each candidate set, used by the random-edges variant.
    pub random_sources: Vec<NodeId>,
    /// Original edges scored by the discriminator.
    pub positives: Vec<Edge>,
    pub feature_nodes: Vec<NodeId>,
    /// Nodes with original features scored by the feature discriminator.
    pub feature_originals: Vec<NodeId>,
}

/// Draws all random choices of step `step` from streams keyed by
/// `(cfg.run.seed, step)`.
pub fn prepare_batch(cfg: &TrainConfig, graph: &Graph, step: usize) -> Result<Batch> {
    let seed = cfg.run.seed;
    let s = step as u64;
    let variant = cfg.pretrain.variant;
    let n = graph.num_nodes();
    if n == 0 {
        return Err(Error::Empty("pre-training graph"));
    }

    let mut seeds = index::sample(
        &mut rng::stream(seed, s, Stream::Seeds),
        n,
        cfg.sampler.batch_size.min(n),
    )
    .into_vec();
    seeds.sort_unstable();
    let sub = sample_subgraph(
        graph,
        &seeds,
        cfg.sampler.depth,
        cfg.sampler.width,
        &mut rng::stream(seed, s, Stream::Subgraph),
    )?;
    let node_ids = sub.node_ids().to_vec();
    let local = sub.into_graph();

    let ratio = if variant.uses_edges() { cfg.mask.edge_ratio } else { 0.0 };
    let view = mask_edges(&local, ratio, &mut rng::stream(seed, s, Stream::EdgeMask))?;

    let mut neg_rng = rng::stream(seed, s, Stream::Negatives);
    let candidates = view
        .masked()
        .iter()
        .map(|&e| sample_negatives(&local, e, cfg.gen.n_neg, &mut neg_rng))
        .collect::<Result<Vec<_>>>()?;

    let mut pick = rng::stream(seed, s, Stream::RandomEdges);
    let random_sources = if variant == Variant::RandomEdges {
        candidates
            .iter()
            .map(|c| {
                let k = pick.random_range(0..c.len());
                if k == 0 {
                    c.truth
                } else {
                    c.negatives[k - 1]
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let positives = sample_positive_edges(
        view.unmasked(),
        view.masked().len(),
        cfg.disc.alpha,
        &mut rng::stream(seed, s, Stream::Positives),
    )?;

    let feature_ratio = if variant.uses_features() { cfg.mask.feature_ratio } else { 0.0 };
    let feature_nodes =
        select_feature_nodes(local.num_nodes(), feature_ratio, &mut rng::stream(seed, s, Stream::FeatureMask))?;
    let mut in_ng = vec![false; local.num_nodes()];
    for &v in &feature_nodes {
        in_ng[v] = true;
    }
    let rest: Vec<NodeId> = (0..local.num_nodes()).filter(|&v| !in_ng[v]).collect();
    let feature_originals = if cfg.disc.all_nodes {
        rest
    } else {
        let k = ((cfg.disc.beta * feature_nodes.len() as f64).round() as usize).min(rest.len());
        let mut picked = index::sample(&mut rng::stream(seed, s, Stream::FeatureBalance), rest.len(), k).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| rest[i]).collect()
    };

    Ok(Batch {
        step,
        node_ids,
        graph: local,
        view,
        candidates,
        random_sources,
        positives,
        feature_nodes,
        feature_originals,
    })
}

/// Loss terms and bookkeeping of one forward pass.
#[derive(Clone, Debug)]
pub struct StepForward<'t> {
    pub gen_edge: Var<'t>,
    pub gen_feat: Var<'t>,
    pub disc_edge: Var<'t>,
    pub disc_feat: Var<'t>,
    pub total: Var<'t>,
    pub generated: Vec<Edge>,
    /// Features fed to the discriminator.
    pub corrupted: Tensor,
    pub gen_correct: usize,
    pub disc_acc: f64,
}

/// What the discriminator receives from the generator, as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorOutput {
    pub generated: Vec<Edge>,
    /// Feature matrix with the selected rows replaced by generated vectors.
    pub corrupted: Tensor,
}

/// Runs both models on `batch` and assembles the joint loss.
pub fn forward_step<'t>(
    cfg: &TrainConfig,
    models: &Models,
    params: &Bound<'t>,
    batch: &Batch,
) -> Result<StepForward<'t>> {
    forward_step_with(cfg, models, params, batch, None)
}

/// [`forward_step`], optionally feeding the discriminator `frozen` instead
/// of the generator's current output. Holding it fixed makes the joint loss
/// a smooth function whose gradient is exactly the one training uses.
pub fn forward_step_with<'t>(
    cfg: &TrainConfig,
    models: &Models,
    params: &Bound<'t>,
    batch: &Batch,
    frozen: Option<&GeneratorOutput>,
) -> Result<StepForward<'t>> {
    let tape = params.get(GEN_FEATURE_HEAD)?.tape();
    let zero = || tape.constant(Tensor::scalar(0.0));
    let variant = cfg.pretrain.variant;
    let (seed, s) = (cfg.run.seed, batch.step as u64);
    let g = &batch.graph;
    let n = g.num_nodes();
    let x = feature_matrix(g)?;
    let d = x.cols();

    // generator: unmasked edges, selected feature rows hidden
    let mut x_gen = x.clone();
    for &v in &batch.feature_nodes {
        x_gen.data_mut()[v * d..(v + 1) * d].fill(0.0);
    }
    let csr_u = Csr::from_edges(n, batch.view.unmasked(), g.is_directed())?;
    let mut gen_drop = rng::stream(seed, s, Stream::GenDropout);
    let h_g = models
        .gen
        .forward(params, tape.constant(x_gen), &csr_u, Some(&mut gen_drop))?;

    let (gen_edge, generated, gen_correct) = if batch.candidates.is_empty() {
        (zero(), Vec::new(), 0)
    } else if variant == Variant::RandomEdges {
        let generated: Vec<Edge> = batch
            .random_sources
            .iter()
            .zip(&batch.candidates)
            .map(|(&u, c)| (u, c.fixed))
            .collect();
        let correct = batch
            .random_sources
            .iter()
            .zip(&batch.candidates)
            .filter(|(&u, c)| u == c.truth)
            .count();
        (zero(), generated, correct)
    } else {
        let out = generate_edges(params, &models.gen_cos, h_g, &batch.candidates)?;
        let correct = out.correct.iter().filter(|&&c| c).count();
        (out.loss, out.generated, correct)
    };

    let feat = generate_features(params, h_g, &batch.feature_nodes, &x)?;
    let (generated, corrupted) = match frozen {
        Some(f) => (f.generated.clone(), f.corrupted.clone()),
        None => (generated, feat.corrupted.clone()),
    };

    let (disc_edge, disc_feat, disc_acc) = if variant.uses_discriminator() {
        let mut edges_d: Vec<Edge> = batch.view.unmasked().to_vec();
        edges_d.extend_from_slice(&generated);
        let csr_d = Csr::from_edges(n, &edges_d, g.is_directed())?;
        let mut disc_drop = rng::stream(seed, s, Stream::DiscDropout);
        let h_d = models
            .disc
            .forward(params, tape.constant(corrupted.clone()), &csr_d, Some(&mut disc_drop))?;
        let edge = if generated.is_empty() && batch.positives.is_empty() {
            None
        } else {
            Some(discriminate_edges(
                params,
                &models.disc_cos,
                h_d,
                &generated,
                &batch.positives,
                cfg.disc.flip_labels,
            )?)
        };
        let fd = discriminate_features(params, h_d, &batch.feature_nodes, &batch.feature_originals)?;
        let acc = match &edge {
            Some(e) => e.accuracy,
            None => fd.accuracy,
        };
        (edge.map_or_else(zero, |e| e.loss), fd.loss, acc)
    } else {
        (zero(), zero(), 0.0)
    };

    let total = total_loss(gen_edge, feat.loss, disc_edge, disc_feat, cfg.pretrain.lambda)?;
    Ok(StepForward {
        gen_edge,
        gen_feat: feat.loss,
        disc_edge,
        disc_feat,
        total,
        generated,
        corrupted,
        gen_correct,
        disc_acc,
    })
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: ParamStore,
    pub metrics: Vec<StepMetrics>,
}

/// Holds the models, parameters and optimiser of one pre-training run.
pub struct Pretrainer<'c> {
    cfg: &'c TrainConfig,
    models: Models,
    params: ParamStore,
    opt: AdamW,
}

impl<'c> Pretrainer<'c> {
    pub fn new(cfg: &'c TrainConfig, feature_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let models = Models::new(cfg, feature_dim)?;
        let params = models.init(cfg.run.seed)?;
        Ok(Self {
            cfg,
            models,
            params,
            opt: cfg.pretrain_optimizer(),
        })
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// One optimiser step on `batch`.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let tape = Tape::new();
        let bound = tape.bind(&self.params);
        let f = forward_step(self.cfg, &self.models, &bound, batch)?;
        let total = f.total.item();
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { step: batch.step });
        }
        let grads = if f.total.requires_grad() {
            tape.backward(f.total)?.named(&bound)
        } else {
            Default::default()
        };
        adamw_step(&mut self.params, &grads, &self.opt)?;

        let g = &batch.graph;
        let m_edges = g.num_edges();
        let n_masked = batch.view.masked().len();
        let mask_ratio = if m_edges == 0 { 0.0 } else { n_masked as f64 / m_edges as f64 };
        let gen_acc = if n_masked == 0 { 0.0 } else { f.gen_correct as f64 / n_masked as f64 };
        let mut touched = vec![false; g.num_nodes()];
        for &(a, b) in batch.view.unmasked() {
            touched[a] = true;
            touched[b] = true;
        }
        Ok(StepMetrics {
            step: batch.step,
            loss_gen_edge: f.gen_edge.item(),
            loss_gen_feat: f.gen_feat.item(),
            loss_disc_edge: f.disc_edge.item(),
            loss_disc_feat: f.disc_feat.item(),
            total,
            gen_acc,
            disc_acc: f.disc_acc,
            mask_ratio,
            cov_gen: true_edge_fraction(g, &[batch.view.unmasked()]),
            cov_dis: true_edge_fraction(g, &[batch.view.unmasked(), &f.generated]),
            sub_nodes: g.num_nodes(),
            sub_edges: m_edges,
            isolated_after_mask: touched.iter().filter(|&&t| !t).count(),
        })
    }

    /// Runs `cfg.pretrain.steps` steps on `graph`.
    pub fn run(mut self, graph: &Graph) -> Result<PretrainOutcome> {
        let cfg = self.cfg;
        let steps = cfg.pretrain.steps;
        let mut metrics = Vec::with_capacity(steps);
        if cfg.pretrain.prefetch && steps > 1 {
            std::thread::scope(|scope| -> Result<()> {
                let (tx, rx) = mpsc::sync_channel::<Result<Batch>>(1);
                scope.spawn(move || {
                    for step in 0..steps {
                        if tx.send(prepare_batch(cfg, graph, step)).is_err() {
                            break;
                        }
                    }
                });
                for _ in 0..steps {
                    let batch = rx
                        .recv()
                        .map_err(|_| Error::InvalidArgument("batch producer stopped".into()))??;
                    metrics.push(self.train_step(&batch)?);
                }
                Ok(())
            })?;
        } else {
            for step in 0..steps {
                let batch = prepare_batch(cfg, graph, step)?;
                metrics.push(self.train_step(&batch)?);
            }
        }
        Ok(PretrainOutcome {
            params: self.params,
            metrics,
        })
    }
}

/// Pre-trains on `graph` (the pre-training side of a node split).
pub fn pretrain(cfg: &TrainConfig, graph: &Graph) -> Result<PretrainOutcome> {
    Pretrainer::new(cfg, graph.feature_dim())?.run(graph)
}

/// Finite-difference check of the joint loss of step `step` against its
/// recorded gradient, over every parameter of both models. The generated
/// edges and features reaching the discriminator are held at their values
/// for the unperturbed parameters.
pub fn check_loss_gradients(cfg: &TrainConfig, graph: &Graph, step: usize, eps: f64) -> Result<GradCheckReport> {
    cfg.validate()?;
    let models = Models::new(cfg, graph.feature_dim())?;
    let store = models.init(cfg.run.seed)?;
    let batch = prepare_batch(cfg, graph, step)?;
    let frozen = {
        let tape = Tape::new();
        let f = forward_step(cfg, &models, &tape.bind(&store), &batch)?;
        GeneratorOutput {
            generated: f.generated,
            corrupted: f.corrupted,
        }
    };
    check_gradients(&store, eps, |_, bound| {
        Ok(forward_step_with(cfg, &models, bound, &batch, Some(&frozen))?.total)
    })
}

/// Checkpoint with enough metadata to rebuild the models.
pub fn make_checkpoint(cfg: &TrainConfig, feature_dim: usize, params: ParamStore) -> Checkpoint {
    let mut ck = Checkpoint::new(params);
    let meta = [
        ("config", cfg.to_toml()),
        ("digest", cfg.digest()),
        ("lambda", cfg.pretrain.lambda.to_string()),
        ("variant", cfg.pretrain.variant.as_str().to_string()),
        ("feature_dim", feature_dim.to_string()),
        ("hidden", cfg.model.hidden.to_string()),
        ("layers", cfg.model.layers.to_string()),
        ("seed", cfg.run.seed.to_string()),
    ];
    for (k, v) in meta {
        ck.meta.insert(k.to_string(), v);
    }
    ck
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmParams};

    fn small_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.sampler = crate::config::SamplerSection {
            depth: 2,
            width: 16,
            batch_size: 40,
        };
        cfg.model.hidden = 8;
        cfg.model.layers = 2;
        cfg.gen.n_neg = 15;
        cfg.pretrain.steps = 4;
        cfg
    }

    fn graph() -> Graph {
        generate_sbm(
            &SbmParams {
                n_nodes: 200,
                n_blocks: 4,
                p_in: 0.1,
                p_out: 0.01,
                feature_dim: 4,
                noise_scale: 0.5,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn zero_steps_returns_initial_parameters() {
        let mut cfg = small_cfg();
        cfg.pretrain.steps = 0;
        let g = graph();
        let out = pretrain(&cfg, &g).unwrap();
        assert!(out.metrics.is_empty());
        let init = Models::new(&cfg, 4).unwrap().init(cfg.run.seed).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn batch_invariants() {
        let cfg = small_cfg();
        let g = graph();
        for step in 0..5 {
            let b = prepare_batch(&cfg, &g, step).unwrap();
            assert_eq!(b.candidates.len(), b.view.masked().len());
            assert!(b.positives.len() <= b.view.masked().len());
            assert_eq!(b.feature_originals.len(), b.feature_nodes.len());
            for c in &b.candidates {
                assert_eq!(c.len(), 16);
                assert!(c.negatives.iter().all(|&u| !b.graph.adjacent(u, c.fixed)));
            }
        }
    }

    #[test]
    fn prefetch_gives_the_same_run() {
        let mut cfg = small_cfg();
        let g = graph();
        let a = pretrain(&cfg, &g).unwrap();
        cfg.pretrain.prefetch = true;
        let b = pretrain(&cfg, &g).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn coverage_identity_each_step() {
        let cfg = small_cfg();
        let out = pretrain(&cfg, &graph()).unwrap();
        for m in &out.metrics {
            let want = (1.0 - m.mask_ratio) + m.mask_ratio * m.gen_acc;
            assert!((m.cov_dis - want).abs() < 1e-9, "{m:?}");
            assert!((m.cov_gen - (1.0 - m.mask_ratio)).abs() < 1e-9);
        }
    }

    #[test]
    fn every_variant_runs() {
        let g = graph();
        for v in Variant::ALL {
            let mut cfg = small_cfg();
            cfg.pretrain.variant = v;
            let out = pretrain(&cfg, &g).unwrap();
            let m = &out.metrics[0];
            match v {
                Variant::Edges => assert_eq!(m.loss_gen_feat, 0.0),
                Variant::Features => {
                    assert_eq!(m.loss_gen_edge, 0.0);
                    assert_eq!(m.mask_ratio, 0.0);
                }
                Variant::RandomEdges => assert_eq!(m.loss_gen_edge, 0.0),
                Variant::GeneratorOnly => assert_eq!(m.loss_disc_edge, 0.0),
                Variant::EdgesFeatures => assert!(m.loss_disc_edge > 0.0 && m.loss_gen_feat > 0.0),
            }
        }
    }

    #[test]
    fn discriminator_loss_never_reaches_the_generator() {
        let cfg = small_cfg();
        let g = graph();
        let models = Models::new(&cfg, 4).unwrap();
        let store = models.init(cfg.run.seed).unwrap();
        for step in 0..5 {
            let batch = prepare_batch(&cfg, &g, step).unwrap();
            let tape = Tape::new();
            let bound = tape.bind(&store);
            let f = forward_step(&cfg, &models, &bound, &batch).unwrap();
            let l_d = f.disc_edge.add(&f.disc_feat).unwrap();
            let grads = tape.backward(l_d).unwrap().named(&bound);
            let mut disc_reached = false;
            for (name, gr) in &grads {
                if name.starts_with("gen.") {
                    assert!(gr.data().iter().all(|&x| x == 0.0), "{name}");
                } else {
                    disc_reached |= gr.data().iter().any(|&x| x != 0.0);
                }
            }
            assert!(disc_reached);
        }
    }

    #[test]
    fn zero_lambda_trains_the_generator_like_generator_only() {
        let g = graph();
        let mut a = small_cfg();
        a.pretrain.lambda = 0.0;
        let mut b = small_cfg();
        b.pretrain.variant = Variant::GeneratorOnly;
        let (ra, rb) = (pretrain(&a, &g).unwrap(), pretrain(&b, &g).unwrap());
        let mut gen_params = 0;
        for (name, p) in ra.params.iter().filter(|(n, _)| n.starts_with("gen.")) {
            assert_eq!(&p.value, rb.params.value(name).unwrap(), "{name}");
            gen_params += 1;
        }
        assert!(gen_params > 0);
        for (x, y) in ra.metrics.iter().zip(&rb.metrics) {
            assert_eq!((x.loss_gen_edge, x.gen_acc), (y.loss_gen_edge, y.gen_acc));
        }
    }
}
