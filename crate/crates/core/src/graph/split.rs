//! Node-transfer split: pre-train and fine-tune on disjoint node-induced
//! subgraphs of one graph. Edges crossing the split are dropped.

use std::ops::Range;

use rand::seq::SliceRandom;

use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng;

/// Disjoint node sets covering every node. Ids refer to the parent graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSplit {
    pub pretrain: Vec<NodeId>,
    pub train: Vec<NodeId>,
    pub valid: Vec<NodeId>,
    pub test: Vec<NodeId>,
}

impl NodeSplit {
    /// Fine-tune nodes in local order: train, then valid, then test.
    pub fn finetune_nodes(&self) -> Vec<NodeId> {
        let mut v = Vec::with_capacity(self.train.len() + self.valid.len() + self.test.len());
        v.extend(&self.train);
        v.extend(&self.valid);
        v.extend(&self.test);
        v
    }

    /// Local-id ranges of train/valid/test inside the fine-tune graph.
    pub fn finetune_ranges(&self) -> (Range<usize>, Range<usize>, Range<usize>) {
        let a = self.train.len();
        let b = a + self.valid.len();
        let c = b + self.test.len();
        (0..a, a..b, b..c)
    }
}

#[derive(Clone, Debug)]
pub struct NodeTransfer {
    pub pretrain: Graph,
    pub finetune: Graph,
    pub split: NodeSplit,
    pub dropped_cross_edges: usize,
}

/// Random node-transfer split. `pretrain_frac` of the nodes go to
/// pre-training; the rest is divided equally into train/valid/test.
pub fn split_nodes(graph: &Graph, pretrain_frac: f64, seed: u64) -> Result<NodeTransfer> {
    if !(pretrain_frac > 0.0 && pretrain_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "pretrain_frac = {pretrain_frac} must lie in (0, 1)"
        )));
    }
    let n = graph.num_nodes();
    let mut order: Vec<NodeId> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0, rng::Stream::Split));

    let n_pre = ((pretrain_frac * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
    let rest = n - n_pre;
    let n_train = rest / 3 + usize::from(rest % 3 > 0);
    let n_valid = rest / 3 + usize::from(rest % 3 > 1);

    let sorted = |s: &[NodeId]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let split = NodeSplit {
        pretrain: sorted(&order[..n_pre]),
        train: sorted(&order[n_pre..n_pre + n_train]),
        valid: sorted(&order[n_pre + n_train..n_pre + n_train + n_valid]),
        test: sorted(&order[n_pre + n_train + n_valid..]),
    };
    apply_split(graph, split)
}

/// Builds the two node-induced graphs for a given split.
pub fn apply_split(graph: &Graph, split: NodeSplit) -> Result<NodeTransfer> {
    let n = graph.num_nodes();
    let mut side = vec![None; n];
    for (set, tag) in [
        (&split.pretrain, 0u8),
        (&split.train, 1),
        (&split.valid, 1),
        (&split.test, 1),
    ] {
        for &v in set {
            if v >= n {
                return Err(Error::NodeOutOfRange { node: v, num_nodes: n });
            }
            if side[v].replace(tag).is_some() {
                return Err(Error::InvalidArgument(format!("node {v} assigned twice")));
            }
        }
    }
    if let Some(v) = side.iter().position(Option::is_none) {
        return Err(Error::InvalidArgument(format!("node {v} not assigned")));
    }

    let pretrain = graph.induced(&split.pretrain)?;
    let finetune = graph.induced(&split.finetune_nodes())?;
    let dropped_cross_edges = graph
        .edges()
        .iter()
        .filter(|&&(a, b)| side[a] != side[b])
        .count();
    if pretrain.num_edges() == 0 {
        return Err(Error::EmptySplit("pre-training"));
    }
    if finetune.num_edges() == 0 {
        return Err(Error::EmptySplit("fine-tuning"));
    }
    Ok(NodeTransfer {
        pretrain,
        finetune,
        split,
        dropped_cross_edges,
    })
}
