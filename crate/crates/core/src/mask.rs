//! Random corruption and sampling procedures: edge masking, candidate sets
//! for edge generation, positive edges for discrimination, feature-node
//! selection, and the drop/add corruptions used by the ablations.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{canonical, Edge, Graph, NodeId};

/// Attempts per requested negative before `sample_negatives` gives up.
pub const NEGATIVE_ATTEMPTS_PER_SAMPLE: usize = 50;

/// Partition of a graph's edges into unmasked and masked sets, plus the
/// generated set filled in by the edge generator.
///
/// Masked edges are stored oriented as `(n1, n2)`: `n2` is the endpoint the
/// generator is given, `n1` the one it has to recover.
#[derive(Clone, Debug)]
pub struct MaskedView {
    unmasked: Vec<Edge>,
    masked: Vec<Edge>,
    generated: Vec<Edge>,
    mask_ratio: f64,
    directed: bool,
    masked_keys: HashSet<Edge>,
}

impl MaskedView {
    pub fn unmasked(&self) -> &[Edge] {
        &self.unmasked
    }

    pub fn masked(&self) -> &[Edge] {
        &self.masked
    }

    pub fn generated(&self) -> &[Edge] {
        &self.generated
    }

    pub fn mask_ratio(&self) -> f64 {
        self.mask_ratio
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    fn key(&self, e: Edge) -> Edge {
        if self.directed {
            e
        } else {
            canonical(e)
        }
    }

    /// Whether the parent edge `e` (either orientation if undirected) is masked.
    pub fn is_masked(&self, e: Edge) -> bool {
        self.masked_keys.contains(&self.key(e))
    }

    /// Records the generator output. There must be one generated edge per
    /// masked edge, sharing its fixed endpoint.
    pub fn set_generated(&mut self, generated: Vec<Edge>) -> Result<()> {
        if generated.len() != self.masked.len() {
            return Err(Error::InvalidArgument(format!(
                "{} generated edges for {} masked edges",
                generated.len(),
                self.masked.len()
            )));
        }
        for (g, m) in generated.iter().zip(&self.masked) {
            if g.1 != m.1 {
                return Err(Error::InvalidArgument(format!(
                    "generated edge {g:?} does not keep the fixed endpoint of {m:?}"
                )));
            }
        }
        self.generated = generated;
        Ok(())
    }
}

/// Masks `round(ratio * |E|)` edges chosen uniformly without replacement.
/// For undirected graphs a fair coin decides which endpoint stays fixed.
pub fn mask_edges<R: Rng + ?Sized>(graph: &Graph, ratio: f64, rng: &mut R) -> Result<MaskedView> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "edge mask ratio {ratio} must lie in [0, 1)"
        )));
    }
    let edges = graph.edges();
    let k = (ratio * edges.len() as f64).round() as usize;
    let mut picked = index::sample(rng, edges.len(), k).into_vec();
    picked.sort_unstable();

    let mut is_masked = vec![false; edges.len()];
    for &i in &picked {
        is_masked[i] = true;
    }
    let directed = graph.is_directed();
    let mut masked = Vec::with_capacity(k);
    let mut masked_keys = HashSet::with_capacity(k);
    for &i in &picked {
        let (a, b) = edges[i];
        masked_keys.insert((a, b));
        let flip = !directed && rng.random::<bool>();
        masked.push(if flip { (b, a) } else { (a, b) });
    }
    let unmasked = edges
        .iter()
        .zip(&is_masked)
        .filter(|(_, &m)| !m)
        .map(|(&e, _)| e)
        .collect();
    Ok(MaskedView {
        unmasked,
        masked,
        generated: Vec::new(),
        mask_ratio: ratio,
        directed,
        masked_keys,
    })
}

/// Candidate set for recovering `truth` given `fixed`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSet {
    pub fixed: NodeId,
    pub truth: NodeId,
    pub negatives: Vec<NodeId>,
}

impl CandidateSet {
    /// Truth first, then the negatives in draw order.
    pub fn candidates(&self) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::once(self.truth).chain(self.negatives.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.negatives.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Draws `n_neg` distinct nodes that are not adjacent to the fixed endpoint
/// `n2` (and are neither endpoint) by rejection sampling, with a cap of
/// `50 * n_neg` draws.
pub fn sample_negatives<R: Rng + ?Sized>(
    graph: &Graph,
    (n1, n2): Edge,
    n_neg: usize,
    rng: &mut R,
) -> Result<CandidateSet> {
    let n = graph.num_nodes();
    for v in [n1, n2] {
        if v >= n {
            return Err(Error::NodeOutOfRange { node: v, num_nodes: n });
        }
    }
    let eligible = |u: NodeId| u != n1 && u != n2 && !graph.adjacent(u, n2);
    let excluded = {
        let mut s: HashSet<NodeId> = graph.neighbors(n2).iter().copied().collect();
        s.insert(n1);
        s.insert(n2);
        s.len()
    };
    let available = n - excluded;
    let insufficient = || Error::InsufficientNegatives {
        fixed: n2,
        needed: n_neg,
        available,
    };
    if available < n_neg {
        return Err(insufficient());
    }

    let mut chosen = HashSet::with_capacity(n_neg);
    let mut negatives = Vec::with_capacity(n_neg);
    let cap = NEGATIVE_ATTEMPTS_PER_SAMPLE * n_neg;
    let mut attempts = 0;
    while negatives.len() < n_neg {
        if attempts == cap {
            return Err(insufficient());
        }
        attempts += 1;
        let u = rng.random_range(0..n);
        if eligible(u) && chosen.insert(u) {
            negatives.push(u);
        }
    }
    Ok(CandidateSet {
        fixed: n2,
        truth: n1,
        negatives,
    })
}

/// Uniform subset of the unmasked edges of size `round(alpha * n_generated)`,
/// clamped to `|unmasked|`.
pub fn sample_positive_edges<R: Rng + ?Sized>(
    unmasked: &[Edge],
    n_generated: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Edge>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must be > 0")));
    }
    let k = ((alpha * n_generated as f64).round() as usize).min(unmasked.len());
    let mut picked = index::sample(rng, unmasked.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| unmasked[i]).collect())
}

/// Uniform node subset of size `round(ratio * num_nodes)`, sorted.
pub fn select_feature_nodes<R: Rng + ?Sized>(
    num_nodes: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<Vec<NodeId>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "feature mask ratio {ratio} must lie in [0, 1]"
        )));
    }
    let k = (ratio * num_nodes as f64).round() as usize;
    let mut picked = index::sample(rng, num_nodes, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Drops `round(drop_frac * |E|)` uniform edges and adds
/// `round(add_frac * |E|)` uniform node pairs that are not edges of `graph`.
pub fn corrupt_edges_random<R: Rng + ?Sized>(
    graph: &Graph,
    drop_frac: f64,
    add_frac: f64,
    rng: &mut R,
) -> Result<Graph> {
    if !(0.0..1.0).contains(&drop_frac) || !(add_frac >= 0.0 && add_frac.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= drop < 1 and add >= 0, got drop = {drop_frac}, add = {add_frac}"
        )));
    }
    let edges = graph.edges();
    let m = edges.len();
    let n_drop = (drop_frac * m as f64).round() as usize;
    let n_add = (add_frac * m as f64).round() as usize;

    let directed = graph.is_directed();
    let n = graph.num_nodes();
    let present: HashSet<Edge> = edges.iter().copied().collect();
    let absent = if directed {
        n * n.saturating_sub(1) - edges.iter().filter(|(a, b)| a != b).count()
    } else {
        graph.absent_pair_count()
    };
    if n_add > absent {
        return Err(Error::InsufficientAbsentPairs {
            requested: n_add,
            available: absent,
        });
    }

    let mut dropped = vec![false; m];
    for i in index::sample(rng, m, n_drop) {
        dropped[i] = true;
    }
    let mut out: Vec<Edge> = edges
        .iter()
        .zip(&dropped)
        .filter(|(_, &d)| !d)
        .map(|(&e, _)| e)
        .collect();

    let key = |a: NodeId, b: NodeId| if directed { (a, b) } else { canonical((a, b)) };
    if n_add * 2 > absent {
        // dense regime: enumerate the absent pairs and pick directly
        let mut pool = Vec::with_capacity(absent);
        for a in 0..n {
            let start = if directed { 0 } else { a + 1 };
            for b in start..n {
                if a != b && !present.contains(&key(a, b)) {
                    pool.push((a, b));
                }
            }
        }
        let mut picked = index::sample(rng, pool.len(), n_add).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| pool[i]));
    } else {
        let mut added = HashSet::with_capacity(n_add);
        while added.len() < n_add {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let e = key(a, b);
            if !present.contains(&e) && added.insert(e) {
                out.push(e);
            }
        }
    }
    graph.with_edges(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmParams};
    use crate::rng::seeded;

    fn path(n: usize) -> Graph {
        Graph::new(n, (0..n - 1).map(|i| (i, i + 1)).collect(), None, None, Default::default())
            .unwrap()
    }

    fn random_graph(seed: u64) -> Graph {
        generate_sbm(
            &SbmParams {
                n_nodes: 60,
                n_blocks: 2,
                p_in: 0.2,
                p_out: 0.05,
                feature_dim: 2,
                noise_scale: 0.1,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_ratio_masks_nothing() {
        let g = path(11);
        let v = mask_edges(&g, 0.0, &mut seeded(0)).unwrap();
        assert!(v.masked().is_empty());
        assert_eq!(v.unmasked(), g.edges());
    }

    #[test]
    fn mask_count_rounds() {
        let g = path(11);
        let v = mask_edges(&g, 0.2, &mut seeded(0)).unwrap();
        assert_eq!(v.masked().len(), 2);
        assert_eq!(v.unmasked().len(), 8);
        assert!(mask_edges(&g, 1.0, &mut seeded(0)).is_err());
    }

    #[test]
    fn partition_is_exact_over_random_graphs() {
        for seed in 0..100 {
            let g = random_graph(seed);
            let v = mask_edges(&g, 0.35, &mut seeded(seed)).unwrap();
            let u: HashSet<Edge> = v.unmasked().iter().copied().collect();
            let m: HashSet<Edge> = v.masked().iter().map(|&e| canonical(e)).collect();
            let all: HashSet<Edge> = g.edges().iter().copied().collect();
            assert!(u.is_disjoint(&m));
            assert_eq!(&u | &m, all);
        }
    }

    #[test]
    fn generated_edges_must_keep_fixed_endpoint() {
        let g = path(6);
        let mut v = mask_edges(&g, 0.4, &mut seeded(2)).unwrap();
        let good: Vec<Edge> = v.masked().iter().map(|&(_, b)| (0, b)).collect();
        let bad: Vec<Edge> = v.masked().iter().map(|&(a, _)| (a, 0)).collect();
        assert!(v.set_generated(bad).is_err());
        assert!(v.set_generated(good[..1].to_vec()).is_err());
        v.set_generated(good).unwrap();
    }

    #[test]
    fn zero_negatives_is_just_the_truth() {
        let g = path(5);
        let c = sample_negatives(&g, (1, 2), 0, &mut seeded(0)).unwrap();
        assert_eq!(c.candidates().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn complete_graph_has_no_negatives() {
        let mut edges = Vec::new();
        for a in 0..10 {
            for b in a + 1..10 {
                edges.push((a, b));
            }
        }
        let g = Graph::new(10, edges, None, None, Default::default()).unwrap();
        assert!(matches!(
            sample_negatives(&g, (0, 1), 5, &mut seeded(0)),
            Err(Error::InsufficientNegatives { available: 0, .. })
        ));
    }

    #[test]
    fn star_negatives_come_from_isolated_nodes() {
        // centre 0, leaves 1..=5, isolated 6..106
        let g = Graph::new(106, (1..=5).map(|l| (0, l)).collect(), None, None, Default::default())
            .unwrap();
        for seed in 0..50 {
            let c = sample_negatives(&g, (3, 0), 20, &mut seeded(seed)).unwrap();
            assert_eq!(c.len(), 21);
            let distinct: HashSet<_> = c.negatives.iter().collect();
            assert_eq!(distinct.len(), 20);
            for &u in &c.negatives {
                assert!(!g.adjacent(u, 0) && u != 3 && u != 0);
                assert!(u >= 6);
            }
        }
    }

    #[test]
    fn positive_edges_are_a_clamped_subset() {
        let unmasked: Vec<Edge> = (0..100).map(|i| (i, i + 1)).collect();
        let p = sample_positive_edges(&unmasked, 5, 1.0, &mut seeded(0)).unwrap();
        assert_eq!(p.len(), 5);
        let small = &unmasked[..10];
        let p = sample_positive_edges(small, 50, 1.0, &mut seeded(0)).unwrap();
        assert_eq!(p.len(), 10);
        let set: HashSet<_> = unmasked.iter().collect();
        for t in 0..100 {
            let p = sample_positive_edges(&unmasked, 30, 0.7, &mut seeded(t)).unwrap();
            assert_eq!(p.len(), 21);
            assert!(p.iter().all(|e| set.contains(e)));
        }
        assert!(sample_positive_edges(&unmasked, 5, 0.0, &mut seeded(0)).is_err());
    }

    #[test]
    fn feature_node_counts() {
        assert!(select_feature_nodes(10, 0.0, &mut seeded(0)).unwrap().is_empty());
        assert_eq!(
            select_feature_nodes(10, 1.0, &mut seeded(0)).unwrap(),
            (0..10).collect::<Vec<_>>()
        );
        let mut rng = seeded(3);
        for t in 0..200 {
            let n = 1 + t % 37;
            let ratio = rng.random::<f64>();
            let s = select_feature_nodes(n, ratio, &mut rng).unwrap();
            assert_eq!(s.len(), (ratio * n as f64).round() as usize);
            assert!(s.windows(2).all(|w| w[0] < w[1]) && s.iter().all(|&v| v < n));
        }
    }

    #[test]
    fn corruption_counts_and_membership() {
        let mut edges = Vec::new();
        for i in 0..100 {
            edges.push((i, i + 1));
        }
        let g = Graph::new(150, edges, None, None, Default::default()).unwrap();
        let same = corrupt_edges_random(&g, 0.0, 0.0, &mut seeded(0)).unwrap();
        assert_eq!(same, g);
        let dropped = corrupt_edges_random(&g, 0.5, 0.0, &mut seeded(0)).unwrap();
        assert_eq!(dropped.num_edges(), 50);
        let added = corrupt_edges_random(&g, 0.0, 0.5, &mut seeded(0)).unwrap();
        assert_eq!(added.num_edges(), 150);
        let original: HashSet<_> = g.edges().iter().collect();
        let new: Vec<_> = added.edges().iter().filter(|e| !original.contains(e)).collect();
        assert_eq!(new.len(), 50);
        assert!(new.iter().all(|(a, b)| a != b));
    }

    #[test]
    fn corruption_dense_regime_and_overflow() {
        let g = path(5); // 4 edges, 6 absent pairs
        let full = corrupt_edges_random(&g, 0.0, 1.5, &mut seeded(1)).unwrap();
        assert_eq!(full.num_edges(), 10);
        assert!(matches!(
            corrupt_edges_random(&g, 0.0, 2.0, &mut seeded(1)),
            Err(Error::InsufficientAbsentPairs { requested: 8, available: 6 })
        ));
    }
}
