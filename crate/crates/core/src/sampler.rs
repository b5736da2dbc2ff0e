//! Layer-wise importance subsampling of a dense training subgraph.
//!
//! Each round looks at the neighbours of the current frontier that have not
//! been picked yet and draws up to `width` of them without replacement. A
//! candidate `u` is weighted by its squared column norm in the frontier rows
//! of the symmetrically normalised adjacency `D^-1/2 A D^-1/2`, i.e.
//! `sum over frontier v adjacent to u of 1 / (deg v * deg u)`. Candidates
//! that share many frontier neighbours are preferred, which is what keeps the
//! union of layers well connected.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{canonical, Edge, Graph, NodeId};
use crate::mask::MaskedView;

#[derive(Clone, Debug)]
pub struct Subgraph {
    node_ids: Vec<NodeId>,
    layer_sizes: Vec<usize>,
    local_of: HashMap<NodeId, usize>,
    graph: Graph,
}

impl Subgraph {
    /// Original id of every local node, layer by layer (seeds first).
    pub fn node_ids(&self) -> &[NodeId] {
        &self.node_ids
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn original(&self, local: usize) -> NodeId {
        self.node_ids[local]
    }

    pub fn local(&self, original: NodeId) -> Option<usize> {
        self.local_of.get(&original).copied()
    }

    /// Induced edges in local ids.
    pub fn induced_edges(&self) -> &[Edge] {
        self.graph.edges()
    }

    /// The induced subgraph itself, with features and labels carried over.
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }
}

/// Samples `depth` layers of at most `width` nodes around `seeds` and returns
/// the union with all induced edges. Seeds are deduplicated, order kept.
pub fn sample_subgraph<R: Rng + ?Sized>(
    graph: &Graph,
    seeds: &[NodeId],
    depth: usize,
    width: usize,
    rng: &mut R,
) -> Result<Subgraph> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("seed node set is empty".into()));
    }
    if width == 0 {
        return Err(Error::InvalidArgument("sampler width must be >= 1".into()));
    }
    let n = graph.num_nodes();
    let mut selected = vec![false; n];
    let mut node_ids = Vec::new();
    for &s in seeds {
        if s >= n {
            return Err(Error::NodeOutOfRange { node: s, num_nodes: n });
        }
        if !std::mem::replace(&mut selected[s], true) {
            node_ids.push(s);
        }
    }
    let mut layer_sizes = vec![node_ids.len()];
    let mut frontier = node_ids.clone();

    let mut weight = vec![0.0f64; n];
    for _ in 0..depth {
        let mut candidates: Vec<NodeId> = Vec::new();
        for &v in &frontier {
            let dv = graph.degree(v) as f64;
            for &u in graph.neighbors(v) {
                if selected[u] {
                    continue;
                }
                if weight[u] == 0.0 {
                    candidates.push(u);
                }
                weight[u] += 1.0 / (dv * graph.degree(u) as f64);
            }
        }
        if candidates.is_empty() {
            break;
        }
        let mut layer: Vec<NodeId> = if candidates.len() <= width {
            candidates.clone()
        } else {
            candidates
                .choose_multiple_weighted(rng, width, |&u| weight[u])
                .map_err(|e| Error::InvalidArgument(format!("importance sampling: {e}")))?
                .copied()
                .collect()
        };
        for &u in &candidates {
            weight[u] = 0.0;
        }
        layer.sort_unstable();
        for &u in &layer {
            selected[u] = true;
        }
        node_ids.extend_from_slice(&layer);
        layer_sizes.push(layer.len());
        frontier = layer;
    }

    let local_of = node_ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let graph = graph.induced(&node_ids)?;
    Ok(Subgraph {
        node_ids,
        layer_sizes,
        local_of,
        graph,
    })
}

/// Splits the subgraph's induced edges (local ids) by the mask status their
/// parent edge has in `view`. Returns `(unmasked, masked)`.
pub fn induced_edge_partition(subgraph: &Subgraph, view: &MaskedView) -> (Vec<Edge>, Vec<Edge>) {
    let mut unmasked = Vec::new();
    let mut masked = Vec::new();
    for &(a, b) in subgraph.induced_edges() {
        let parent = (subgraph.original(a), subgraph.original(b));
        let parent = if view.is_directed() {
            parent
        } else {
            canonical(parent)
        };
        if view.is_masked(parent) {
            masked.push((a, b));
        } else {
            unmasked.push((a, b));
        }
    }
    (unmasked, masked)
}
