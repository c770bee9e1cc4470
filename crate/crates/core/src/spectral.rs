//! Eigendecomposition of the normalized Laplacian of a superpixel graph.
//!
//! Because components are cliques, the spectrum decomposes per segment: a
//! clique on `m >= 2` vertices contributes the simple eigenvalue 0 and the
//! eigenvalue `m / (m - 1)` with multiplicity `m - 1`; singletons contribute
//! only 0. The kernel (one dimension per component) is handled analytically:
//! its first basis vector is pinned to the global direction
//! `u_1 = D^{1/2} 1 / ||D^{1/2} 1||` (uniform `1/sqrt(N)` on an edgeless
//! graph, where every degree vanishes), and the rest completes it by
//! Gram-Schmidt over the per-component kernel vectors. Nonzero eigenpairs
//! come from a dense symmetric solver run on each component block.
//!
//! Ordering: all kernel eigenvalues first (so `vector(0)` is `u_1`), then the
//! nonzero eigenvalues ascending with ties broken by component index.

use nalgebra::DMatrix;

use crate::graph::PixelGraph;

/// Near-zero eigenvalues are snapped to exactly 0 below this magnitude.
const ZERO_TOL: f64 = 1e-9;

/// Full orthonormal eigenbasis of the normalized Laplacian.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    kernel_dim: usize,
}

/// Decompose the normalized Laplacian of `graph` component by component.
pub fn spectral_decompose(graph: &PixelGraph) -> SpectralDecomposition {
    let n = graph.vertex_count();
    let comps = graph.components();
    let kernel_dim = comps.len();

    // Global direction u_1 = D^{1/2} 1, normalized; uniform when edgeless.
    let degree_sum = graph.degree_sum() as f64;
    let u1: Vec<f64> = if degree_sum > 0.0 {
        let norm = degree_sum.sqrt();
        (0..n).map(|v| (graph.degree(v) as f64).sqrt() / norm).collect()
    } else {
        vec![1.0 / (n as f64).sqrt(); n]
    };

    // Kernel completion: Gram-Schmidt of the per-component kernel vectors
    // (uniform on each segment) against u_1 and each other. Exactly
    // `kernel_dim - 1` of them survive.
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    vectors.push(u1);
    for members in comps {
        let m = members.len() as f64;
        let mut cand = vec![0.0; n];
        for &p in members {
            cand[p] = 1.0 / m.sqrt();
        }
        for _ in 0..2 {
            // two passes for numerical orthogonality
            for basis in &vectors {
                let dot: f64 = cand.iter().zip(basis).map(|(c, b)| c * b).sum();
                if dot != 0.0 {
                    for (c, b) in cand.iter_mut().zip(basis) {
                        *c -= dot * b;
                    }
                }
            }
        }
        let norm: f64 = cand.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > ZERO_TOL {
            for c in &mut cand {
                *c /= norm;
            }
            vectors.push(cand);
        }
    }
    assert_eq!(
        vectors.len(),
        kernel_dim,
        "kernel completion must span one direction per component"
    );

    // Nonzero eigenpairs from a dense solve of each component block.
    // (component index, within-component rank, eigenvalue, vector)
    let mut nonzero: Vec<(usize, usize, f64, Vec<f64>)> = Vec::with_capacity(n - kernel_dim);
    for (ci, members) in comps.iter().enumerate() {
        let m = members.len();
        if m < 2 {
            continue;
        }
        let off = -1.0 / (m as f64 - 1.0);
        let block = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { off });
        let eig = block.symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        // The smallest eigenvalue is the component's kernel direction,
        // already represented analytically above; drop it.
        debug_assert!(eig.eigenvalues[order[0]].abs() < 1e-6);
        for (rank, &col) in order[1..].iter().enumerate() {
            let mut mu = eig.eigenvalues[col];
            if mu.abs() < ZERO_TOL {
                mu = 0.0;
            }
            mu = mu.clamp(0.0, 2.0);
            let mut vec_full = vec![0.0; n];
            for (local, &p) in members.iter().enumerate() {
                vec_full[p] = eig.eigenvectors[(local, col)];
            }
            nonzero.push((ci, rank, mu, vec_full));
        }
    }
    nonzero.sort_by(|a, b| {
        a.2.partial_cmp(&b.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let mut eigenvalues = vec![0.0; kernel_dim];
    for (_, _, mu, vec_full) in nonzero {
        eigenvalues.push(mu);
        vectors.push(vec_full);
    }
    SpectralDecomposition {
        eigenvalues,
        vectors,
        kernel_dim,
    }
}

impl SpectralDecomposition {
    /// All `N` eigenvalues: `kernel_dim` zeros first, then ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvector `k` (aligned with `eigenvalues()[k]`).
    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k]
    }

    /// The pinned global direction `u_1`.
    pub fn global_direction(&self) -> &[f64] {
        &self.vectors[0]
    }

    /// Multiplicity of eigenvalue 0 (= number of components).
    pub fn kernel_dim(&self) -> usize {
        self.kernel_dim
    }

    /// Number of vertices / eigenpairs.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::superpixel::Labeling;

    fn decompose(labels: &[u32]) -> (PixelGraph, SpectralDecomposition) {
        let lab = Labeling::new(1, labels.len(), labels.to_vec()).unwrap();
        let g = build_graph(&lab);
        let d = spectral_decompose(&g);
        (g, d)
    }

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
    }

    #[test]
    fn triangle_spectrum() {
        // K3: {0, 3/2, 3/2}.
        let (_, d) = decompose(&[0, 0, 0]);
        let ev = d.eigenvalues();
        assert_eq!(d.kernel_dim(), 1);
        assert_eq!(ev.len(), 3);
        assert_eq!(ev[0], 0.0);
        assert_close(ev[1], 1.5, 1e-12, "mu_2");
        assert_close(ev[2], 1.5, 1e-12, "mu_3");
    }

    #[test]
    fn four_clique_spectrum() {
        // K4: {0, 4/3, 4/3, 4/3}.
        let (_, d) = decompose(&[0, 0, 0, 0]);
        let ev = d.eigenvalues();
        assert_eq!(ev[0], 0.0);
        for &mu in &ev[1..] {
            assert_close(mu, 4.0 / 3.0, 1e-12, "mu");
        }
    }

    #[test]
    fn two_pairs_spectrum_and_global_direction() {
        // Two K2 components: {0, 0, 2, 2}; u_1 = (1/2)(1,1,1,1).
        let (_, d) = decompose(&[0, 0, 1, 1]);
        let ev = d.eigenvalues();
        assert_eq!(d.kernel_dim(), 2);
        assert_eq!(&ev[..2], &[0.0, 0.0]);
        assert_close(ev[2], 2.0, 1e-12, "mu_3");
        assert_close(ev[3], 2.0, 1e-12, "mu_4");
        for &u in d.global_direction() {
            assert_close(u, 0.5, 1e-12, "u1 entry");
        }
    }

    #[test]
    fn edgeless_graph_has_uniform_global_direction() {
        let (_, d) = decompose(&[0, 1, 2, 3, 4]);
        assert_eq!(d.kernel_dim(), 5);
        assert!(d.eigenvalues().iter().all(|&mu| mu == 0.0));
        for &u in d.global_direction() {
            assert_close(u, 1.0 / 5.0f64.sqrt(), 1e-12, "u1 entry");
        }
    }

    #[test]
    fn eigenpairs_satisfy_the_laplacian_to_1e8() {
        let cases: [&[u32]; 4] = [
            &[0, 0, 0, 1, 1, 2],
            &[0, 1, 0, 1, 0, 1, 2, 2],
            &[0; 7],
            &[0, 1, 2, 3],
        ];
        for labels in cases {
            let (g, d) = decompose(labels);
            let lap = g.normalized_laplacian();
            let n = g.vertex_count();
            for k in 0..n {
                let u = d.vector(k);
                let mu = d.eigenvalues()[k];
                for i in 0..n {
                    let lu: f64 = (0..n).map(|j| lap[(i, j)] * u[j]).sum();
                    assert!(
                        (lu - mu * u[i]).abs() <= 1e-8,
                        "labels {labels:?}, pair {k}, row {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let (_, d) = decompose(&[0, 0, 1, 1, 1, 2, 3, 3]);
        let n = d.len();
        for a in 0..n {
            for b in a..n {
                let dot: f64 = d.vector(a).iter().zip(d.vector(b)).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10, "<u{a}, u{b}> = {dot}");
            }
        }
    }

    #[test]
    fn eigenvalues_lie_in_zero_two_and_count_kernel() {
        let (g, d) = decompose(&[0, 0, 0, 1, 1, 2, 3, 3, 3, 3]);
        let zeros = d.eigenvalues().iter().filter(|&&mu| mu == 0.0).count();
        assert_eq!(zeros, g.component_count());
        for &mu in d.eigenvalues() {
            assert!((0.0..=2.0).contains(&mu));
        }
        // Nonzero block is ascending.
        let nz: Vec<f64> = d.eigenvalues().iter().copied().filter(|&m| m > 0.0).collect();
        for w in nz.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn nonzero_ties_are_ordered_by_component() {
        // Two K2 components, both with mu = 2: the first listed eigenvector
        // must live on component 0, the second on component 1.
        let (_, d) = decompose(&[0, 0, 1, 1]);
        let v2 = d.vector(2);
        let v3 = d.vector(3);
        assert!(v2[0].abs() > 0.5 && v2[2].abs() < 1e-12);
        assert!(v3[2].abs() > 0.5 && v3[0].abs() < 1e-12);
    }
}
