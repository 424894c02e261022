//! Taubin λ/μ mesh smoothing with uniform Laplacian weights.

use nalgebra::Vector3;

use super::TriMesh;

/// Alternating shrink (λ) / inflate (μ) Laplacian steps. Connectivity is
/// untouched. Expected parameter ranges: λ ∈ (0,1), μ ∈ (−1,0), |μ| > λ.
pub fn taubin_smooth(m: &TriMesh, iterations: usize, lambda: f64, mu: f64) -> TriMesh {
    assert!(lambda > 0.0 && lambda < 1.0, "lambda out of range");
    assert!(mu > -1.0 && mu < 0.0, "mu out of range");
    assert!(mu.abs() > lambda, "|mu| must exceed lambda");

    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); m.vertices.len()];
    for tri in &m.triangles {
        for e in 0..3 {
            let a = tri[e] as usize;
            let b = tri[(e + 1) % 3];
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
            }
            let b = b as usize;
            if !adjacency[b].contains(&tri[e]) {
                adjacency[b].push(tri[e]);
            }
        }
    }

    let mut verts = m.vertices.clone();
    let mut next = verts.clone();
    for _ in 0..iterations {
        for &factor in &[lambda, mu] {
            for (i, neigh) in adjacency.iter().enumerate() {
                if neigh.is_empty() {
                    next[i] = verts[i];
                    continue;
                }
                let mut lap = Vector3::zeros();
                for &j in neigh {
                    lap += verts[j as usize] - verts[i];
                }
                lap /= neigh.len() as f64;
                next[i] = verts[i] + factor * lap;
            }
            std::mem::swap(&mut verts, &mut next);
        }
    }
    TriMesh { vertices: verts, triangles: m.triangles.clone() }
}
