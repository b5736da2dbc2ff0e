//! End-to-end runs and the ablation sweeps built on them.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{GraphSource, TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::finetune::{finetune, FinetuneOutcome, LocalSplit, RunRecord};
use crate::graph::{generate_sbm, load_graph, split_nodes, Graph, NodeTransfer};
use crate::mask::corrupt_edges_random;
use crate::pretrain::{check_loss_gradients, coverage_stats, make_checkpoint, pretrain, StepMetrics};
use crate::rng::{self, Stream};
use crate::tensor::{Checkpoint, GradCheckReport};

/// The configured graph and its node-transfer split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: Graph,
    pub transfer: NodeTransfer,
}

impl Dataset {
    pub fn local_split(&self) -> LocalSplit {
        LocalSplit::from_split(&self.transfer.split)
    }
}

/// Builds or loads the graph and splits it with `cfg.run.seed`.
pub fn prepare_data(cfg: &TrainConfig) -> Result<Dataset> {
    let graph = match cfg.graph.source {
        GraphSource::Sbm => generate_sbm(&cfg.sbm_params(), cfg.run.seed)?,
        GraphSource::Files => load_graph(&cfg.graph_files(), cfg.graph_options())?,
    };
    let transfer = split_nodes(&graph, cfg.graph.pretrain_frac, cfg.run.seed)?;
    Ok(Dataset { graph, transfer })
}

/// One pre-training run (if any) followed by fine-tuning.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub checkpoint: Option<Checkpoint>,
    pub metrics: Vec<StepMetrics>,
    pub finetune: FinetuneOutcome,
    pub record: RunRecord,
}

impl PipelineRun {
    pub fn test(&self) -> f64 {
        self.finetune.test
    }

    /// Mean generator accuracy over the last quarter of pre-training.
    pub fn final_gen_acc(&self) -> f64 {
        tail_mean(&self.metrics, |m| m.gen_acc)
    }

    pub fn final_disc_acc(&self) -> f64 {
        tail_mean(&self.metrics, |m| m.disc_acc)
    }
}

fn tail_mean(rows: &[StepMetrics], f: impl Fn(&StepMetrics) -> f64) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let tail = &rows[rows.len() - rows.len().div_ceil(4)..];
    tail.iter().map(f).sum::<f64>() / tail.len() as f64
}

/// Pre-trains on the pre-training side (unless `scratch`) and fine-tunes on
/// `finetune_graph`, which defaults to the fine-tuning side of the split.
pub fn run_pipeline(
    cfg: &TrainConfig,
    data: &Dataset,
    scratch: bool,
    finetune_graph: Option<&Graph>,
) -> Result<PipelineRun> {
    let (checkpoint, metrics) = if scratch {
        (None, Vec::new())
    } else {
        let pre = pretrain(cfg, &data.transfer.pretrain)?;
        let ck = make_checkpoint(cfg, data.graph.feature_dim(), pre.params);
        (Some(ck), pre.metrics)
    };
    let graph = finetune_graph.unwrap_or(&data.transfer.finetune);
    let outcome = finetune(cfg, checkpoint.as_ref(), graph, &data.local_split())?;
    let record = RunRecord::new(cfg, checkpoint.as_ref(), &outcome);
    Ok(PipelineRun {
        checkpoint,
        metrics,
        finetune: outcome,
        record,
    })
}

/// Copy of `cfg` pre-training the given variant.
pub fn with_variant(cfg: &TrainConfig, variant: Variant) -> TrainConfig {
    let mut c = cfg.clone();
    c.pretrain.variant = variant;
    c
}

/// Copy of `cfg` with `lambda = 0`, so that only the generator learns.
pub fn generator_only(cfg: &TrainConfig) -> TrainConfig {
    let mut c = cfg.clone();
    c.pretrain.lambda = 0.0;
    c
}

/// Nodes in the graph used by [`grad_check`].
pub const GRAD_CHECK_NODES: usize = 30;

/// Checks the joint loss gradient on a 30-node SBM with a small model. The
/// loss terms, ratios, lambda and variant come from `cfg`; sizes are shrunk
/// so every parameter entry can be perturbed.
pub fn grad_check(cfg: &TrainConfig, eps: f64) -> Result<GradCheckReport> {
    let mut c = cfg.clone();
    c.graph.source = GraphSource::Sbm;
    c.sbm.n_nodes = GRAD_CHECK_NODES;
    c.sbm.n_blocks = 3;
    c.sbm.feature_dim = 3;
    c.sbm.p_in = 0.4;
    c.sbm.p_out = 0.05;
    c.model.hidden = 6;
    c.model.layers = 2;
    c.sampler.batch_size = GRAD_CHECK_NODES;
    c.sampler.depth = 1;
    c.sampler.width = GRAD_CHECK_NODES;
    c.gen.n_neg = 8;
    let graph = generate_sbm(&c.sbm_params(), c.run.seed)?;
    check_loss_gradients(&c, &graph, 0, eps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSweepRow {
    pub ratio: f64,
    pub dip_metric: f64,
    pub gen_only_metric: f64,
    /// Mean generator accuracy over the final quarter of the full run.
    pub gen_acc: f64,
    pub cov_gen: f64,
    pub cov_dis: f64,
    pub cov_ratio: f64,
}

pub const MASK_SWEEP_SCHEMA: &str = "dipgnn-mask-sweep v1";
const MASK_SWEEP_COLUMNS: [&str; 7] = [
    "ratio",
    "dip_metric",
    "gen_only_metric",
    "gen_acc",
    "cov_gen",
    "cov_dis",
    "cov_ratio",
];

/// For every edge mask ratio: the full model and the `lambda = 0` baseline
/// on the same data and random streams, plus coverage from the realised
/// generator accuracy.
pub fn mask_sweep(cfg: &TrainConfig, ratios: &[f64]) -> Result<Vec<MaskSweepRow>> {
    if ratios.is_empty() {
        return Err(Error::Empty("mask ratios"));
    }
    let data = prepare_data(cfg)?;
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let mut c = cfg.clone();
        c.mask.edge_ratio = ratio;
        c.validate()?;
        let dip = run_pipeline(&c, &data, false, None)?;
        let gen = run_pipeline(&generator_only(&c), &data, false, None)?;
        let acc = dip.final_gen_acc();
        let cov = coverage_stats(ratio, acc)?;
        rows.push(MaskSweepRow {
            ratio,
            dip_metric: dip.test(),
            gen_only_metric: gen.test(),
            gen_acc: acc,
            cov_gen: cov.cov_gen,
            cov_dis: cov.cov_dis,
            cov_ratio: cov.ratio,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionRow {
    pub frac: f64,
    /// Metric after dropping `frac` of the edges.
    pub drop_metric: f64,
    /// Metric after adding `frac * |E|` wrong edges.
    pub add_metric: f64,
}

pub const CORRUPTION_SCHEMA: &str = "dipgnn-corruption v1";
const CORRUPTION_COLUMNS: [&str; 3] = ["frac", "drop_metric", "add_metric"];

/// Fine-tunes a freshly initialised model on the fine-tuning graph with
/// `frac` of its edges removed, and again with `frac * |E|` uniformly random
/// non-edges inserted. The split, initialisation and training streams are
/// shared, so only the edge set differs.
pub fn corruption_sweep(cfg: &TrainConfig, fracs: &[f64]) -> Result<Vec<CorruptionRow>> {
    if fracs.is_empty() {
        return Err(Error::Empty("corruption fractions"));
    }
    let data = prepare_data(cfg)?;
    let clean = &data.transfer.finetune;
    let mut rows = Vec::with_capacity(fracs.len());
    for &frac in fracs {
        let dropped = corrupt_edges_random(clean, frac, 0.0, &mut rng::stream(cfg.run.seed, 0, Stream::Corruption))?;
        let added = corrupt_edges_random(clean, 0.0, frac, &mut rng::stream(cfg.run.seed, 1, Stream::Corruption))?;
        rows.push(CorruptionRow {
            frac,
            drop_metric: run_pipeline(cfg, &data, true, Some(&dropped))?.test(),
            add_metric: run_pipeline(cfg, &data, true, Some(&added))?.test(),
        });
    }
    Ok(rows)
}

fn table_to_csv(schema: &str, digest: &str, columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = format!("# {schema} config={digest}\n{}\n", columns.join(","));
    for r in rows {
        let cells: Vec<String> = r.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

fn table_from_csv(text: &str, schema: &str, columns: &[&str]) -> Result<(String, Vec<Vec<f64>>)> {
    let bad = |line: usize, message: String| Error::Parse {
        path: format!("<{schema}>").into(),
        line,
        message,
    };
    let mut lines = text.lines();
    let digest = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .and_then(|l| l.strip_prefix(schema))
        .ok_or_else(|| bad(1, format!("expected \"# {schema} ...\"")))?
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("config="))
        .unwrap_or_default()
        .to_string();
    if lines.next() != Some(columns.join(",").as_str()) {
        return Err(bad(2, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let cells = line
            .split(',')
            .map(|c| c.parse::<f64>().map_err(|e| bad(i + 3, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if cells.len() != columns.len() {
            return Err(bad(i + 3, format!("{} fields, expected {}", cells.len(), columns.len())));
        }
        rows.push(cells);
    }
    Ok((digest, rows))
}

pub fn mask_sweep_to_csv(digest: &str, rows: &[MaskSweepRow]) -> String {
    let cells: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r.ratio, r.dip_metric, r.gen_only_metric, r.gen_acc, r.cov_gen, r.cov_dis, r.cov_ratio])
        .collect();
    table_to_csv(MASK_SWEEP_SCHEMA, digest, &MASK_SWEEP_COLUMNS, &cells)
}

pub fn mask_sweep_from_csv(text: &str) -> Result<(String, Vec<MaskSweepRow>)> {
    let (digest, rows) = table_from_csv(text, MASK_SWEEP_SCHEMA, &MASK_SWEEP_COLUMNS)?;
    let rows = rows
        .into_iter()
        .map(|c| MaskSweepRow {
            ratio: c[0],
            dip_metric: c[1],
            gen_only_metric: c[2],
            gen_acc: c[3],
            cov_gen: c[4],
            cov_dis: c[5],
            cov_ratio: c[6],
        })
        .collect();
    Ok((digest, rows))
}

pub fn corruption_to_csv(digest: &str, rows: &[CorruptionRow]) -> String {
    let cells: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.frac, r.drop_metric, r.add_metric]).collect();
    table_to_csv(CORRUPTION_SCHEMA, digest, &CORRUPTION_COLUMNS, &cells)
}

pub fn corruption_from_csv(text: &str) -> Result<(String, Vec<CorruptionRow>)> {
    let (digest, rows) = table_from_csv(text, CORRUPTION_SCHEMA, &CORRUPTION_COLUMNS)?;
    let rows = rows
        .into_iter()
        .map(|c| CorruptionRow {
            frac: c[0],
            drop_metric: c[1],
            add_metric: c[2],
        })
        .collect();
    Ok((digest, rows))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
