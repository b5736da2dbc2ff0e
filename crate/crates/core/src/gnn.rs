//! Mean-aggregation message-passing encoder and the trainable cosine scorer.
//!
//! Layer `k` computes `h <- relu(h W_self + mean_nbr(h) W_neigh + bias)` after a
//! linear input projection. Everything works on row vectors, so a weight
//! stored as `[d_in, d_out]` maps a row `h` to `h W`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::{Bound, Csr, ParamStore, Tensor, Var};

/// Norm guard in the cosine denominators.
pub const COSINE_EPS: f64 = 1e-8;

/// The graph's feature rows as a `[num_nodes, dim]` matrix.
pub fn feature_matrix(graph: &Graph) -> Result<Tensor> {
    let f = graph.features();
    Tensor::matrix(graph.num_nodes(), f.dim(), f.as_slice().to_vec())
}

/// Shape of one encoder. Parameter names are `{prefix}.gnn.input.{W,b}` and
/// `{prefix}.gnn.layer{k}.{W_self,W_neigh,bias}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gnn {
    pub prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Applied to hidden states between layers while training.
    pub dropout: f64,
}

impl Gnn {
    pub fn new(prefix: &str, in_dim: usize, hidden: usize, layers: usize, dropout: f64) -> Result<Self> {
        if layers == 0 || hidden == 0 || in_dim == 0 {
            return Err(Error::Config(format!(
                "{prefix}: encoder needs in_dim, hidden and layers >= 1"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("{prefix}: dropout {dropout} not in [0, 1)")));
        }
        Ok(Self {
            prefix: prefix.to_string(),
            in_dim,
            hidden,
            layers,
            dropout,
        })
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.gnn.{part}", self.prefix)
    }

    /// Registers freshly initialised parameters in `store`.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let h = self.hidden;
        store.insert(self.name("input.W"), Tensor::glorot(self.in_dim, h, rng))?;
        store.insert(self.name("input.b"), Tensor::zeros(&[h]))?;
        for k in 0..self.layers {
            store.insert(self.name(&format!("layer{k}.W_self")), Tensor::glorot(h, h, rng))?;
            store.insert(self.name(&format!("layer{k}.W_neigh")), Tensor::glorot(h, h, rng))?;
            store.insert(self.name(&format!("layer{k}.bias")), Tensor::zeros(&[h]))?;
        }
        Ok(())
    }

    /// Node embeddings for feature rows `x` over the message lists `csr`.
    /// `rng = None` is inference mode (no dropout).
    pub fn forward<'t, R: Rng + ?Sized>(
        &self,
        params: &Bound<'t>,
        x: Var<'t>,
        csr: &Csr,
        mut rng: Option<&mut R>,
    ) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::shape(
                "gnn",
                format!("{}: features {shape:?}, expected [_, {}]", self.prefix, self.in_dim),
            ));
        }
        let mut h = x
            .matmul(&params.get(&self.name("input.W"))?)?
            .add_row(&params.get(&self.name("input.b"))?)?;
        for k in 0..self.layers {
            if k > 0 && self.dropout > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    h = h.dropout(self.dropout, r)?;
                }
            }
            let agg = h.segment_mean(csr)?;
            let own = h.matmul(&params.get(&self.name(&format!("layer{k}.W_self")))?)?;
            let nbr = agg.matmul(&params.get(&self.name(&format!("layer{k}.W_neigh")))?)?;
            h = own
                .add(&nbr)?
                .add_row(&params.get(&self.name(&format!("layer{k}.bias")))?)?
                .relu()?;
        }
        Ok(h)
    }
}

/// `d(u, v) = (u W) . v / (||u W|| ||v||)`, one matrix per model.
#[derive(Clone, Debug, PartialEq)]
pub struct CosineHead {
    pub name: String,
    pub dim: usize,
}

impl CosineHead {
    pub fn new(prefix: &str, dim: usize) -> Self {
        Self {
            name: format!("{prefix}.cos.W"),
            dim,
        }
    }

    /// Identity plus uniform noise of half-width `noise`.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, noise: f64, rng: &mut R) -> Result<()> {
        let mut w = Tensor::identity(self.dim);
        for v in w.data_mut() {
            *v += rng.random_range(-noise..=noise);
        }
        store.insert(self.name.clone(), w)
    }

    /// Scores for `(u, v)` row pairs of `h`: `u` is the candidate/source node,
    /// `v` the fixed node.
    pub fn scores<'t>(&self, params: &Bound<'t>, h: Var<'t>, pairs: &[(usize, usize)]) -> Result<Var<'t>> {
        let w = params.get(&self.name)?;
        let u = h.matmul(&w)?.row_normalize(COSINE_EPS)?;
        let v = h.row_normalize(COSINE_EPS)?;
        u.pair_dot(&v, pairs)
    }
}

/// Plain-value cosine score of one pair; zero vectors score 0.
pub fn cosine_score(u: &[f64], v: &[f64], w: &Tensor) -> Result<f64> {
    let d = u.len();
    if v.len() != d || w.shape() != [d, d] {
        return Err(Error::shape(
            "cosine_score",
            format!("u {}, v {}, W {:?}", d, v.len(), w.shape()),
        ));
    }
    let mut wu = vec![0.0; d];
    for (i, ui) in u.iter().enumerate() {
        for (o, wij) in wu.iter_mut().zip(w.row(i)) {
            *o += ui * wij;
        }
    }
    let dot: f64 = wu.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = wu.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(dot / ((nu + COSINE_EPS) * (nv + COSINE_EPS)))
}
