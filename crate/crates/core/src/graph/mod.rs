//! Immutable graph store.
//!
//! Undirected edges are stored once, as `(min, max)`. Adjacency lists are
//! derived at construction time and kept sorted so membership checks are a
//! binary search.

mod io;
mod sbm;
mod split;

use std::collections::HashSet;

pub use io::{load_graph, save_graph, GraphFiles};
pub use sbm::{generate_sbm, SbmParams};
pub use split::{apply_split, split_nodes, NodeSplit, NodeTransfer};

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type Edge = (NodeId, NodeId);

/// Canonical form of an undirected edge.
#[inline]
pub fn canonical((a, b): Edge) -> Edge {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GraphOptions {
    pub directed: bool,
    pub allow_self_loops: bool,
}

/// Dense row-major node feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (row, values) in rows.iter().enumerate() {
            if values.len() != dim {
                return Err(Error::FeatureDimMismatch {
                    row,
                    got: values.len(),
                    expected: dim,
                });
            }
            data.extend_from_slice(values);
        }
        Ok(Self { dim, data })
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::shape(
                "features",
                format!("{} values do not form rows of width {dim}", data.len()),
            ));
        }
        Ok(Self { dim, data })
    }

    /// One constant column; used when a graph comes without features.
    pub fn constant(num_nodes: usize) -> Self {
        Self {
            dim: 1,
            data: vec![1.0; num_nodes],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows `ids` in order, as a new matrix.
    pub fn select(&self, ids: &[NodeId]) -> Features {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        Features {
            dim: self.dim,
            data,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<Edge>,
    node_types: Option<Vec<u8>>,
    features: Features,
    labels: Option<Vec<usize>>,
    options: GraphOptions,
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
}

impl Graph {
    /// Validates and builds a graph. Undirected edges are canonicalised;
    /// duplicates are an error, not silently merged.
    pub fn new(
        num_nodes: usize,
        edges: Vec<Edge>,
        features: Option<Features>,
        labels: Option<Vec<usize>>,
        options: GraphOptions,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(edges.len());
        let mut stored = Vec::with_capacity(edges.len());
        for (src, dst) in edges {
            for node in [src, dst] {
                if node >= num_nodes {
                    return Err(Error::EndpointOutOfRange {
                        src,
                        dst,
                        node,
                        num_nodes,
                    });
                }
            }
            if src == dst && !options.allow_self_loops {
                return Err(Error::SelfLoop(src));
            }
            let e = if options.directed {
                (src, dst)
            } else {
                canonical((src, dst))
            };
            if !seen.insert(e) {
                return Err(Error::DuplicateEdge(e.0, e.1));
            }
            stored.push(e);
        }

        let features = features.unwrap_or_else(|| Features::constant(num_nodes));
        if features.rows() != num_nodes {
            return Err(Error::FeatureRowMismatch {
                rows: features.rows(),
                num_nodes,
            });
        }
        if let Some(labels) = &labels {
            if labels.len() != num_nodes {
                return Err(Error::LabelRowMismatch {
                    rows: labels.len(),
                    num_nodes,
                });
            }
        }

        let (offsets, neighbors) = build_adjacency(num_nodes, &stored);
        Ok(Self {
            num_nodes,
            edges: stored,
            node_types: None,
            features,
            labels,
            options,
            offsets,
            neighbors,
        })
    }

    /// Attaches per-node type tags.
    pub fn with_node_types(mut self, types: Vec<u8>) -> Result<Self> {
        if types.len() != self.num_nodes {
            return Err(Error::InvalidArgument(format!(
                "{} node types for {} nodes",
                types.len(),
                self.num_nodes
            )));
        }
        self.node_types = Some(types);
        Ok(self)
    }

    /// Same nodes, features and labels, different edge set.
    pub fn with_edges(&self, edges: Vec<Edge>) -> Result<Self> {
        let mut g = Graph::new(
            self.num_nodes,
            edges,
            Some(self.features.clone()),
            self.labels.clone(),
            self.options,
        )?;
        g.node_types = self.node_types.clone();
        Ok(g)
    }

    /// Node-induced subgraph; local id `i` is `nodes[i]`.
    pub fn induced(&self, nodes: &[NodeId]) -> Result<Self> {
        let mut local = vec![usize::MAX; self.num_nodes];
        for (i, &n) in nodes.iter().enumerate() {
            if n >= self.num_nodes {
                return Err(Error::NodeOutOfRange {
                    node: n,
                    num_nodes: self.num_nodes,
                });
            }
            local[n] = i;
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(a, b)| local[a] != usize::MAX && local[b] != usize::MAX)
            .map(|&(a, b)| (local[a], local[b]))
            .collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| nodes.iter().map(|&n| l[n]).collect());
        let mut g = Graph::new(
            nodes.len(),
            edges,
            Some(self.features.select(nodes)),
            labels,
            self.options,
        )?;
        g.node_types = self
            .node_types
            .as_ref()
            .map(|t| nodes.iter().map(|&n| t[n]).collect());
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dim()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn node_types(&self) -> Option<&[u8]> {
        self.node_types.as_deref()
    }

    pub fn options(&self) -> GraphOptions {
        self.options
    }

    pub fn is_directed(&self) -> bool {
        self.options.directed
    }

    /// Neighbours in the undirected sense (either edge direction), sorted.
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// True if `a` and `b` are joined by an edge in either direction.
    pub fn adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Number of nodes with no incident edge.
    pub fn isolated_count(&self) -> usize {
        (0..self.num_nodes).filter(|&v| self.degree(v) == 0).count()
    }

    /// Number of unordered node pairs `{a, b}`, `a != b`, with no edge.
    pub fn absent_pair_count(&self) -> usize {
        let n = self.num_nodes;
        let pairs = n * n.saturating_sub(1) / 2;
        let undirected_present: HashSet<Edge> = self
            .edges
            .iter()
            .filter(|(a, b)| a != b)
            .map(|&e| canonical(e))
            .collect();
        pairs - undirected_present.len()
    }
}

fn build_adjacency(num_nodes: usize, edges: &[Edge]) -> (Vec<usize>, Vec<NodeId>) {
    let mut lists: Vec<Vec<NodeId>> = vec![Vec::new(); num_nodes];
    for &(a, b) in edges {
        lists[a].push(b);
        if a != b {
            lists[b].push(a);
        }
    }
    let mut offsets = Vec::with_capacity(num_nodes + 1);
    let mut neighbors = Vec::with_capacity(edges.len() * 2);
    offsets.push(0);
    for mut list in lists {
        list.sort_unstable();
        // a directed graph may hold both (a, b) and (b, a)
        list.dedup();
        neighbors.extend(list);
        offsets.push(neighbors.len());
    }
    (offsets, neighbors)
}
