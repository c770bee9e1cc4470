//! Shared helpers for the integration suites: random clique partitions and a
//! from-scratch dense filter oracle that bypasses the library's spectral
//! machinery entirely.

use graphcpd::{build_graph, Labeling};
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::Rng;

/// A random labeling of an `h x w` image with at most `max_segments`
/// segments, renumbered to first-occurrence order. Segments need not be
/// spatially connected; the graph construction only cares about membership.
pub fn random_labeling(rng: &mut StdRng, h: usize, w: usize, max_segments: usize) -> Labeling {
    let raw: Vec<u32> = (0..h * w)
        .map(|_| rng.random_range(0..max_segments as u32))
        .collect();
    renumber(h, w, raw)
}

/// Renumber arbitrary labels by first occurrence so they are contiguous.
pub fn renumber(h: usize, w: usize, raw: Vec<u32>) -> Labeling {
    let mut map = std::collections::HashMap::new();
    let mut next = 0u32;
    let labels: Vec<u32> = raw
        .iter()
        .map(|&r| {
            *map.entry(r).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect();
    Labeling::new(h, w, labels).expect("renumbered labels are contiguous")
}

/// Low-pass filter computed straight from a raw dense eigendecomposition of
/// the normalized Laplacian: gains `min(1, sqrt(gamma/mu))` on nonzero
/// eigenvalues and 1 on the kernel, then the global direction
/// `D^{1/2} 1 / ||D^{1/2} 1||` (uniform on an edgeless graph) removed.
pub fn oracle_filter(labeling: &Labeling, gamma: f64, x: &[f64]) -> Vec<f64> {
    let graph = build_graph(labeling);
    let n = graph.vertex_count();
    assert_eq!(x.len(), n);
    let lap = graph.normalized_laplacian();
    let eig = nalgebra::SymmetricEigen::new(lap);

    // Gain-weighted reconstruction sum_k h(mu_k) (u_k^T x) u_k.
    let xv = DMatrix::from_column_slice(n, 1, x);
    let mut out = vec![0.0; n];
    for k in 0..n {
        let mu = eig.eigenvalues[k];
        let gain = if mu.abs() < 1e-9 {
            1.0
        } else {
            (gamma / mu).sqrt().min(1.0)
        };
        let u = eig.eigenvectors.column(k);
        let coeff: f64 = u.dot(&xv.column(0));
        for i in 0..n {
            out[i] += gain * coeff * u[i];
        }
    }

    // Remove the global direction, which always lies in the kernel.
    let mut u1: Vec<f64> = (0..n).map(|i| (graph.degree(i) as f64).sqrt()).collect();
    let norm = u1.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut u1 {
            *v /= norm;
        }
    } else {
        let uniform = 1.0 / (n as f64).sqrt();
        u1 = vec![uniform; n];
    }
    let dot: f64 = u1.iter().zip(x).map(|(a, b)| a * b).sum();
    for i in 0..n {
        out[i] -= dot * u1[i];
    }
    out
}
