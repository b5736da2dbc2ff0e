//! Loss terms of the joint objective.
//!
//! Generated edges and generated features reach the discriminator as plain
//! values (edge lists and detached feature rows), so no gradient of a
//! discriminator loss can flow into generator parameters.

use crate::error::{Error, Result};
use crate::gnn::CosineHead;
use crate::graph::{Edge, NodeId};
use crate::mask::CandidateSet;
use crate::tensor::{sigmoid, Bound, Tensor, Var};

/// Linear map from generator embeddings to feature vectors.
pub const GEN_FEATURE_HEAD: &str = "gen.feat.W";
/// Linear map from discriminator embeddings to one "was generated" logit.
pub const DISC_FEATURE_HEAD: &str = "disc.feat.w";

#[derive(Clone, Debug)]
pub struct GenerationOutcome<'t> {
    /// `(n1_hat, n2)` per masked edge, in input order.
    pub generated: Vec<Edge>,
    pub correct: Vec<bool>,
    pub loss: Var<'t>,
    pub accuracy: f64,
}

/// Scores every candidate of every masked edge and picks the argmax source.
pub fn generate_edges<'t>(
    params: &Bound<'t>,
    head: &CosineHead,
    h_g: Var<'t>,
    candidates: &[CandidateSet],
) -> Result<GenerationOutcome<'t>> {
    let width = candidate_width(candidates)?;
    let pairs: Vec<(usize, usize)> = candidates
        .iter()
        .flat_map(|c| c.candidates().map(move |u| (u, c.fixed)))
        .collect();
    let logits = head
        .scores(params, h_g, &pairs)?
        .reshape(vec![candidates.len(), width])?;
    generation_from_logits(logits, candidates)
}

fn candidate_width(candidates: &[CandidateSet]) -> Result<usize> {
    let Some(first) = candidates.first() else {
        return Err(Error::Empty("candidate sets"));
    };
    let width = first.len();
    if candidates.iter().any(|c| c.len() != width) {
        return Err(Error::InvalidArgument(
            "candidate sets must all have the same size".into(),
        ));
    }
    Ok(width)
}

/// Softmax cross-entropy over `[truth, negatives...]` rows of `logits`.
/// Ties in the argmax go to the lowest node id.
pub fn generation_from_logits<'t>(
    logits: Var<'t>,
    candidates: &[CandidateSet],
) -> Result<GenerationOutcome<'t>> {
    let width = candidate_width(candidates)?;
    if logits.shape() != [candidates.len(), width] {
        return Err(Error::shape(
            "generate_edges",
            format!("logits {:?} for {} x {width} candidates", logits.shape(), candidates.len()),
        ));
    }
    let mut generated = Vec::with_capacity(candidates.len());
    let mut correct = Vec::with_capacity(candidates.len());
    {
        let values = logits.value();
        for (r, c) in candidates.iter().enumerate() {
            let row = values.row(r);
            let mut best = (f64::NEG_INFINITY, NodeId::MAX);
            for (score, node) in row.iter().zip(c.candidates()) {
                if *score > best.0 || (*score == best.0 && node < best.1) {
                    best = (*score, node);
                }
            }
            generated.push((best.1, c.fixed));
            correct.push(best.1 == c.truth);
        }
    }
    let loss = logits.softmax_cross_entropy(&vec![0; candidates.len()])?;
    let accuracy = correct.iter().filter(|&&b| b).count() as f64 / candidates.len() as f64;
    Ok(GenerationOutcome {
        generated,
        correct,
        loss,
        accuracy,
    })
}

#[derive(Clone, Debug)]
pub struct Discrimination<'t> {
    pub loss: Var<'t>,
    /// `sigmoid(score)` per edge: generated edges first, then originals.
    pub probabilities: Vec<f64>,
    pub accuracy: f64,
}

/// BCE over generated edges (label "generated") and sampled original edges.
/// With `flip = false` a high score means "generated".
pub fn discriminate_edges<'t>(
    params: &Bound<'t>,
    head: &CosineHead,
    h_d: Var<'t>,
    generated: &[Edge],
    originals: &[Edge],
    flip: bool,
) -> Result<Discrimination<'t>> {
    if generated.is_empty() && originals.is_empty() {
        return Err(Error::Empty("discriminator edge set"));
    }
    let pairs: Vec<(usize, usize)> = generated.iter().chain(originals).copied().collect();
    let logits = head.scores(params, h_d, &pairs)?;
    let labels = edge_labels(generated.len(), originals.len(), flip);
    binary_from_logits(logits, &labels)
}

/// 1 for generated, 0 for original (swapped when `flip`).
pub fn edge_labels(n_generated: usize, n_original: usize, flip: bool) -> Vec<f64> {
    let (g, o) = if flip { (0.0, 1.0) } else { (1.0, 0.0) };
    let mut labels = vec![g; n_generated];
    labels.resize(n_generated + n_original, o);
    labels
}

/// Summed BCE of `logits` against `labels`, with threshold-0.5 accuracy.
pub fn binary_from_logits<'t>(logits: Var<'t>, labels: &[f64]) -> Result<Discrimination<'t>> {
    let probabilities: Vec<f64> = logits.value().data().iter().map(|&x| sigmoid(x)).collect();
    let hits = probabilities
        .iter()
        .zip(labels)
        .filter(|(p, y)| (**p > 0.5) == (**y > 0.5))
        .count();
    let loss = logits.bce_with_logits(labels)?;
    Ok(Discrimination {
        loss,
        accuracy: if labels.is_empty() { 0.0 } else { hits as f64 / labels.len() as f64 },
        probabilities,
    })
}

#[derive(Clone, Debug)]
pub struct FeatureGeneration<'t> {
    /// Original features with the rows of `nodes` replaced by predictions.
    pub corrupted: Tensor,
    pub loss: Var<'t>,
}

/// Predicts `features[n]` from `h_g[n]` for each `n` in `nodes`; summed
/// squared error. Predictions enter `corrupted` as plain values.
pub fn generate_features<'t>(
    params: &Bound<'t>,
    h_g: Var<'t>,
    nodes: &[NodeId],
    features: &Tensor,
) -> Result<FeatureGeneration<'t>> {
    let tape = h_g.tape();
    if nodes.is_empty() {
        return Ok(FeatureGeneration {
            corrupted: features.clone(),
            loss: tape.constant(Tensor::scalar(0.0)),
        });
    }
    let pred = h_g.gather_rows(nodes)?.matmul(&params.get(GEN_FEATURE_HEAD)?)?;
    if pred.shape()[1] != features.cols() {
        return Err(Error::shape(
            "generate_features",
            format!("head produces {} columns, features have {}", pred.shape()[1], features.cols()),
        ));
    }
    let d = features.cols();
    let mut target = Vec::with_capacity(nodes.len() * d);
    for &n in nodes {
        target.extend_from_slice(features.row(n));
    }
    let target = tape.constant(Tensor::matrix(nodes.len(), d, target)?);
    let loss = pred.l2_loss(&target)?;
    let mut corrupted = features.clone();
    {
        let p = pred.value();
        for (r, &n) in nodes.iter().enumerate() {
            corrupted.data_mut()[n * d..(n + 1) * d].copy_from_slice(p.row(r));
        }
    }
    Ok(FeatureGeneration { corrupted, loss })
}

/// BCE of `sigmoid(h_d[n] w)` against "n was generated", over `generated`
/// (label 1) and `originals` (label 0).
pub fn discriminate_features<'t>(
    params: &Bound<'t>,
    h_d: Var<'t>,
    generated: &[NodeId],
    originals: &[NodeId],
) -> Result<Discrimination<'t>> {
    let tape = h_d.tape();
    let idx: Vec<NodeId> = generated.iter().chain(originals).copied().collect();
    if idx.is_empty() {
        return Ok(Discrimination {
            loss: tape.constant(Tensor::scalar(0.0)),
            probabilities: Vec::new(),
            accuracy: 0.0,
        });
    }
    let logits = h_d
        .gather_rows(&idx)?
        .matmul(&params.get(DISC_FEATURE_HEAD)?)?
        .reshape(vec![idx.len()])?;
    let labels = edge_labels(generated.len(), originals.len(), false);
    binary_from_logits(logits, &labels)
}

/// `(L_ge + L_gf) + lambda (L_de + L_df)`.
pub fn total_loss<'t>(
    gen_edge: Var<'t>,
    gen_feat: Var<'t>,
    disc_edge: Var<'t>,
    disc_feat: Var<'t>,
    lambda: f64,
) -> Result<Var<'t>> {
    let generator = gen_edge.add(&gen_feat)?;
    let discriminator = disc_edge.add(&disc_feat)?;
    generator.add(&discriminator.scale(lambda)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::{ParamStore, Tape};

    fn cands(k: usize, width: usize) -> Vec<CandidateSet> {
        (0..k)
            .map(|i| CandidateSet {
                fixed: 100 + i,
                truth: 10,
                negatives: (11..10 + width).collect(),
            })
            .collect()
    }

    #[test]
    fn hand_softmax_example() {
        let tape = Tape::new();
        let logits = tape.param(Tensor::matrix(1, 3, vec![2.0, 1.0, 0.0]).unwrap());
        let out = generation_from_logits(logits, &cands(1, 3)).unwrap();
        // p = (0.665, 0.245, 0.090)
        assert!((out.loss.item() - 0.4076).abs() < 1e-3);
        assert_eq!(out.accuracy, 1.0);
        assert_eq!(out.generated, vec![(10, 100)]);
    }

    #[test]
    fn identical_scores_give_ln_candidates_and_lowest_id() {
        let tape = Tape::new();
        let logits = tape.param(Tensor::matrix(2, 256, vec![0.3; 512]).unwrap());
        let mut c = cands(2, 256);
        c[1].truth = 400;
        let out = generation_from_logits(logits, &c).unwrap();
        assert!((out.loss.item() / 2.0 - 256f64.ln()).abs() < 1e-9);
        assert!((256f64.ln() - 5.545).abs() < 1e-3);
        assert_eq!(out.generated, vec![(10, 100), (11, 101)]);
        assert_eq!(out.correct, vec![true, false]);
    }

    #[test]
    fn single_candidate_is_forced_correct() {
        let tape = Tape::new();
        let logits = tape.param(Tensor::matrix(3, 1, vec![0.5, -0.2, 0.9]).unwrap());
        let out = generation_from_logits(logits, &cands(3, 1)).unwrap();
        assert_eq!(out.accuracy, 1.0);
        assert!(out.loss.item().abs() < 1e-15);
    }

    #[test]
    fn empty_or_ragged_candidates_error() {
        let tape = Tape::new();
        let logits = tape.param(Tensor::matrix(1, 2, vec![0.0; 2]).unwrap());
        assert!(generation_from_logits(logits, &[]).is_err());
        let mut c = cands(2, 2);
        c[1].negatives.push(99);
        assert!(generation_from_logits(logits, &c).is_err());
    }

    #[test]
    fn edge_bce_examples() {
        let tape = Tape::new();
        let zero = tape.param(Tensor::vector(vec![0.0; 4]));
        let d = binary_from_logits(zero, &edge_labels(2, 2, false)).unwrap();
        assert!((d.loss.item() / 4.0 - 2f64.ln()).abs() < 1e-12);
        assert!(d.probabilities.iter().all(|&p| p == 0.5));

        let mixed = tape.param(Tensor::vector(vec![2.0, 2.0, -2.0, -2.0]));
        let d = binary_from_logits(mixed, &edge_labels(2, 2, false)).unwrap();
        assert_eq!(d.accuracy, 1.0);
        assert!((d.loss.item() / 4.0 - 0.1269).abs() < 1e-3);

        let flipped = binary_from_logits(mixed, &edge_labels(2, 2, true)).unwrap();
        assert_eq!(flipped.accuracy, 0.0);

        let big = tape.param(Tensor::vector(vec![60.0, -60.0]));
        let d = binary_from_logits(big, &edge_labels(1, 1, false)).unwrap();
        assert!(d.loss.item() < 1e-20);
    }

    #[test]
    fn feature_bce_hand_logits() {
        // logits +1, -1 on a generated node and +1, -1 on original nodes
        let tape = Tape::new();
        let logits = tape.param(Tensor::vector(vec![1.0, -1.0, 1.0, -1.0]));
        let d = binary_from_logits(logits, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        let want = (0.3133 + 1.3133 + 1.3133 + 0.3133) / 4.0;
        assert!((d.loss.item() / 4.0 - want).abs() < 1e-3);
    }

    #[test]
    fn feature_generation_examples() {
        let mut store = ParamStore::new();
        store.insert(GEN_FEATURE_HEAD, Tensor::identity(2)).unwrap();
        let tape = Tape::new();
        let b = tape.bind(&store);
        let h = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 7.0, 7.0]).unwrap());
        let x = Tensor::zeros(&[2, 2]);
        let out = generate_features(&b, h, &[0], &x).unwrap();
        assert_eq!(out.loss.item(), 5.0);
        assert_eq!(out.corrupted.row(0), &[1.0, 2.0]);
        assert_eq!(out.corrupted.row(1), &[0.0, 0.0]);

        let exact = Tensor::matrix(2, 2, vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        assert_eq!(generate_features(&b, h, &[0], &exact).unwrap().loss.item(), 0.0);

        let none = generate_features(&b, h, &[], &x).unwrap();
        assert_eq!(none.loss.item(), 0.0);
        assert_eq!(none.corrupted, x);
    }

    #[test]
    fn total_loss_arithmetic() {
        let tape = Tape::new();
        let c = |v| tape.param(Tensor::scalar(v));
        let t = total_loss(c(1.0), c(2.0), c(3.0), c(4.0), 20.0).unwrap();
        assert_eq!(t.item(), 143.0);
        let t = total_loss(c(1.0), c(2.0), c(3.0), c(4.0), 0.0).unwrap();
        assert_eq!(t.item(), 3.0);
    }

    #[test]
    fn feature_discrimination_balanced_sets() {
        let mut store = ParamStore::new();
        store
            .insert(DISC_FEATURE_HEAD, Tensor::glorot(3, 1, &mut seeded(0)))
            .unwrap();
        let tape = Tape::new();
        let b = tape.bind(&store);
        let h = tape.constant(Tensor::glorot(5, 3, &mut seeded(1)));
        let d = discriminate_features(&b, h, &[0, 1], &[3, 4]).unwrap();
        assert_eq!(d.probabilities.len(), 4);
        let none = discriminate_features(&b, h, &[], &[]).unwrap();
        assert_eq!(none.loss.item(), 0.0);
    }
}
