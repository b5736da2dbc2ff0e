//! How much of the true graph each model sees.
//!
//! The generator's input keeps the unmasked edges only, a share `1 - m` of
//! the graph. The discriminator additionally sees every generated edge, and
//! a generated edge is a true edge exactly when the generator recovered the
//! masked one, so it sees `(1 - m) + m * acc`.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::graph::{canonical, Edge, Graph};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoverageStats {
    pub mask_ratio: f64,
    pub accuracy: f64,
    pub cov_gen: f64,
    pub cov_dis: f64,
    /// `cov_dis / cov_gen`; infinite when the generator sees nothing but the
    /// discriminator sees something.
    pub ratio: f64,
}

/// Coverage rounded for reporting: both coverages to hundredths, then the
/// ratio of the rounded values, also to hundredths. Halves round up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoverageRow {
    pub cov_gen_pct: u64,
    pub cov_dis_pct: u64,
    pub ratio_pct: Option<u64>,
}

impl CoverageRow {
    pub fn cov_gen(&self) -> f64 {
        self.cov_gen_pct as f64 / 100.0
    }

    pub fn cov_dis(&self) -> f64 {
        self.cov_dis_pct as f64 / 100.0
    }

    pub fn ratio(&self) -> Option<f64> {
        self.ratio_pct.map(|r| r as f64 / 100.0)
    }
}

pub fn coverage_stats(mask_ratio: f64, accuracy: f64) -> Result<CoverageStats> {
    for (name, v) in [("mask ratio", mask_ratio), ("generator accuracy", accuracy)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name} = {v} not in [0, 1]")));
        }
    }
    let cov_gen = 1.0 - mask_ratio;
    let cov_dis = cov_gen + mask_ratio * accuracy;
    let ratio = if cov_gen > 0.0 {
        cov_dis / cov_gen
    } else if cov_dis > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(CoverageStats {
        mask_ratio,
        accuracy,
        cov_gen,
        cov_dis,
        ratio,
    })
}

fn round_pct(x: f64) -> u64 {
    // the small offset absorbs representation error such as 0.29 * 100 = 28.999...
    (x * 100.0 + 0.5 + 1e-9).floor() as u64
}

impl CoverageStats {
    pub fn table_row(&self) -> CoverageRow {
        let g = round_pct(self.cov_gen);
        let d = round_pct(self.cov_dis);
        let ratio_pct = (g > 0).then(|| (200 * d + g) / (2 * g));
        CoverageRow {
            cov_gen_pct: g,
            cov_dis_pct: d,
            ratio_pct,
        }
    }
}

/// Share of `graph`'s edges present in the union of `edge_sets`, counting each
/// true edge once.
pub fn true_edge_fraction(graph: &Graph, edge_sets: &[&[Edge]]) -> f64 {
    if graph.num_edges() == 0 {
        return 1.0;
    }
    let key = |e: Edge| if graph.is_directed() { e } else { canonical(e) };
    let truth: HashSet<Edge> = graph.edges().iter().map(|&e| key(e)).collect();
    let mut seen: HashSet<Edge> = HashSet::new();
    for set in edge_sets {
        for &e in *set {
            let k = key(e);
            if truth.contains(&k) {
                seen.insert(k);
            }
        }
    }
    seen.len() as f64 / graph.num_edges() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_rows() {
        let rows = [
            (0.20, 0.50, (80, 90, 113)),
            (0.80, 0.33, (20, 46, 230)),
            (0.95, 0.20, (5, 24, 480)),
        ];
        for (m, acc, (g, d, r)) in rows {
            let row = coverage_stats(m, acc).unwrap().table_row();
            assert_eq!((row.cov_gen_pct, row.cov_dis_pct, row.ratio_pct), (g, d, Some(r)));
        }
    }

    #[test]
    fn exact_ratio_differs_from_table_rounding() {
        let s = coverage_stats(0.80, 0.33).unwrap();
        assert!((s.cov_dis - 0.464).abs() < 1e-12);
        assert!((s.ratio - 2.32).abs() < 1e-12);
    }

    #[test]
    fn no_masking_is_full_coverage() {
        for acc in [0.0, 0.4, 1.0] {
            let s = coverage_stats(0.0, acc).unwrap();
            assert_eq!((s.cov_gen, s.cov_dis, s.ratio), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn discriminator_never_sees_less() {
        for i in 0..=20 {
            for j in 0..=20 {
                let (m, acc) = (i as f64 / 20.0, j as f64 / 20.0);
                let s = coverage_stats(m, acc).unwrap();
                assert!(s.cov_dis >= s.cov_gen);
                assert_eq!(s.cov_dis == s.cov_gen, m == 0.0 || acc == 0.0);
            }
        }
        assert!(coverage_stats(1.2, 0.5).is_err());
        assert_eq!(coverage_stats(1.0, 0.5).unwrap().ratio, f64::INFINITY);
    }

    #[test]
    fn recount_on_a_square() {
        let g = Graph::new(4, vec![(0, 1), (1, 2), (2, 3), (0, 3)], None, None, Default::default()).unwrap();
        // unmasked: two edges; generated: one right (reversed), one wrong
        let unmasked = [(0, 1), (1, 2)];
        let generated = [(3, 2), (1, 3)];
        assert_eq!(true_edge_fraction(&g, &[&unmasked, &generated]), 0.75);
        assert_eq!(true_edge_fraction(&g, &[&unmasked, &unmasked]), 0.5);
    }
}
