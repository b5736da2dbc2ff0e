//! Stochastic block model generator used as the desk-scale benchmark graph.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{Features, Graph, GraphOptions};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SbmParams {
    pub n_nodes: usize,
    pub n_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub noise_scale: f64,
}

impl SbmParams {
    /// Block of node `i`: contiguous, near-equal blocks.
    pub fn block_of(&self, i: usize) -> usize {
        i * self.n_blocks / self.n_nodes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_blocks == 0 || self.n_blocks > self.n_nodes {
            return bad(format!(
                "n_blocks = {} must be in 1..={}",
                self.n_blocks, self.n_nodes
            ));
        }
        if !(0.0..=1.0).contains(&self.p_out)
            || !(0.0..=1.0).contains(&self.p_in)
            || self.p_out > self.p_in
        {
            return bad(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in = {}, p_out = {}",
                self.p_in, self.p_out
            ));
        }
        if self.feature_dim < self.n_blocks {
            return bad(format!(
                "feature_dim = {} cannot hold a one-hot of {} blocks",
                self.feature_dim, self.n_blocks
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise_scale = {}", self.noise_scale));
        }
        Ok(())
    }
}

/// Samples an SBM graph. Labels are block ids; features are the one-hot block
/// indicator plus isotropic Gaussian noise. Same seed, same graph.
pub fn generate_sbm(params: &SbmParams, seed: u64) -> Result<Graph> {
    params.validate()?;
    let mut rng = rng::stream(seed, 0, rng::Stream::Graph);
    let n = params.n_nodes;
    let blocks: Vec<usize> = (0..n).map(|i| params.block_of(i)).collect();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if blocks[i] == blocks[j] {
                params.p_in
            } else {
                params.p_out
            };
            // always draw, so the stream layout does not depend on p
            let u: f64 = rng.random();
            if u < p {
                edges.push((i, j));
            }
        }
    }

    let mut data = Vec::with_capacity(n * params.feature_dim);
    for &b in &blocks {
        for k in 0..params.feature_dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            let hot = if k == b { 1.0 } else { 0.0 };
            data.push(hot + params.noise_scale * z);
        }
    }
    let features = Features::from_flat(params.feature_dim, data)?;
    Graph::new(n, edges, Some(features), Some(blocks), GraphOptions::default())
}
