//! Pixel graph induced by a segmentation: two pixels are adjacent exactly
//! when they share a superpixel, so every connected component is the clique
//! on one segment and a vertex's closed neighborhood is its whole segment.
//! The structure is stored implicitly (labels + member lists); dense
//! matrices are only materialized for tests and small-scale diagnostics.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::superpixel::Labeling;

/// Undirected graph on the pixels of one labeling.
#[derive(Debug, Clone)]
pub struct PixelGraph {
    labels: Vec<u32>,
    components: Vec<Vec<usize>>,
    edge_count: usize,
}

/// Build the clique-per-superpixel graph of `labeling`.
pub fn build_graph(labeling: &Labeling) -> PixelGraph {
    let components = labeling.segment_members();
    let edge_count = components.iter().map(|m| m.len() * (m.len() - 1) / 2).sum();
    PixelGraph {
        labels: labeling.labels().to_vec(),
        components,
        edge_count,
    }
}

impl PixelGraph {
    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Number of connected components (= number of superpixels).
    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    /// Component id (superpixel label) of vertex `n`.
    pub fn component_of(&self, n: usize) -> usize {
        self.labels[n] as usize
    }

    /// Members of component `c`, ascending.
    pub fn component(&self, c: usize) -> &[usize] {
        &self.components[c]
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    /// Degree of vertex `n`: segment size minus one.
    pub fn degree(&self, n: usize) -> usize {
        self.components[self.labels[n] as usize].len() - 1
    }

    pub fn are_adjacent(&self, i: usize, j: usize) -> bool {
        i != j && self.labels[i] == self.labels[j]
    }

    /// Sum of all vertex degrees (twice the edge count).
    pub fn degree_sum(&self) -> usize {
        2 * self.edge_count
    }

    /// Dense adjacency matrix; for tests and small instances only.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let n = self.vertex_count();
        let mut w = DMatrix::zeros(n, n);
        for members in &self.components {
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    w[(i, j)] = 1.0;
                    w[(j, i)] = 1.0;
                }
            }
        }
        w
    }

    /// Dense symmetric normalized Laplacian `I - D^{-1/2} W D^{-1/2}`, with
    /// zero rows for isolated vertices; for tests and small instances only.
    pub fn normalized_laplacian(&self) -> DMatrix<f64> {
        let n = self.vertex_count();
        let mut lap = DMatrix::zeros(n, n);
        for members in &self.components {
            let m = members.len();
            if m < 2 {
                continue;
            }
            let off = -1.0 / (m as f64 - 1.0);
            for &i in members {
                for &j in members {
                    lap[(i, j)] = if i == j { 1.0 } else { off };
                }
            }
        }
        lap
    }
}

/// Closed-neighborhood sums: `out[n] = sum of values over n's segment`
/// (vertex `n` included). Isolated vertices pass their own value through.
pub fn neighborhood_sums(graph: &PixelGraph, values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != graph.vertex_count() {
        return Err(Error::dims(format!(
            "value buffer holds {} entries, expected {}",
            values.len(),
            graph.vertex_count()
        )));
    }
    let mut out = vec![0.0; values.len()];
    for members in graph.components() {
        let sum: f64 = members.iter().map(|&p| values[p]).sum();
        for &p in members {
            out[p] = sum;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeling(w: usize, labels: &[u32]) -> Labeling {
        Labeling::new(1, w, labels.to_vec()).unwrap()
    }

    #[test]
    fn two_pair_labeling_gives_two_disjoint_edges() {
        let g = build_graph(&labeling(4, &[0, 0, 1, 1]));
        assert_eq!(g.vertex_count(), 4);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.component_count(), 2);
        assert!(g.are_adjacent(0, 1));
        assert!(g.are_adjacent(2, 3));
        assert!(!g.are_adjacent(1, 2));
        assert!(!g.are_adjacent(0, 3));
        for n in 0..4 {
            assert_eq!(g.degree(n), 1);
        }
    }

    #[test]
    fn single_segment_gives_complete_graph() {
        let g = build_graph(&labeling(5, &[0; 5]));
        assert_eq!(g.edge_count(), 10); // 5 choose 2
        for i in 0..5 {
            assert_eq!(g.degree(i), 4);
            for j in 0..5 {
                assert_eq!(g.are_adjacent(i, j), i != j);
            }
        }
    }

    #[test]
    fn all_singletons_give_edgeless_graph() {
        let g = build_graph(&labeling(4, &[0, 1, 2, 3]));
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.component_count(), 4);
        for n in 0..4 {
            assert_eq!(g.degree(n), 0);
        }
    }

    #[test]
    fn adjacency_matches_degrees() {
        let g = build_graph(&labeling(6, &[0, 1, 0, 2, 1, 0]));
        let w = g.adjacency();
        for i in 0..6 {
            let row_sum: f64 = (0..6).map(|j| w[(i, j)]).sum();
            assert_eq!(row_sum as usize, g.degree(i));
            assert_eq!(w[(i, i)], 0.0);
            for j in 0..6 {
                assert_eq!(w[(i, j)], w[(j, i)]);
            }
        }
        assert_eq!(g.degree_sum(), 2 * g.edge_count());
    }

    #[test]
    fn laplacian_rows_sum_against_kernel() {
        // L * D^{1/2} 1 = 0 on every component.
        let g = build_graph(&labeling(5, &[0, 0, 0, 1, 1]));
        let lap = g.normalized_laplacian();
        let d_sqrt: Vec<f64> = (0..5).map(|n| (g.degree(n) as f64).sqrt()).collect();
        for i in 0..5 {
            let v: f64 = (0..5).map(|j| lap[(i, j)] * d_sqrt[j]).sum();
            assert!(v.abs() < 1e-12, "row {i}: {v}");
        }
    }

    #[test]
    fn neighborhood_sums_examples() {
        // Edgeless: identity.
        let g = build_graph(&labeling(3, &[0, 1, 2]));
        let y = vec![1.0, 2.0, 7.0];
        assert_eq!(neighborhood_sums(&g, &y).unwrap(), y);

        // One pair and one singleton.
        let g = build_graph(&labeling(3, &[0, 0, 1]));
        assert_eq!(neighborhood_sums(&g, &y).unwrap(), vec![3.0, 3.0, 7.0]);

        // Single pair: both ends get the total.
        let g = build_graph(&labeling(2, &[0, 0]));
        assert_eq!(
            neighborhood_sums(&g, &[3.0, 5.0]).unwrap(),
            vec![8.0, 8.0]
        );
    }

    #[test]
    fn neighborhood_sums_constant_per_segment() {
        let g = build_graph(&labeling(7, &[0, 1, 0, 2, 1, 0, 2]));
        let y: Vec<f64> = (0..7).map(|i| (i * i) as f64 * 0.25 - 3.0).collect();
        let s = neighborhood_sums(&g, &y).unwrap();
        for members in g.components() {
            for &p in members {
                assert_eq!(s[p], s[members[0]], "vertex {p}");
            }
        }
    }

    #[test]
    fn neighborhood_sums_checks_length() {
        let g = build_graph(&labeling(3, &[0, 0, 1]));
        assert!(neighborhood_sums(&g, &[1.0, 2.0]).is_err());
    }
}
