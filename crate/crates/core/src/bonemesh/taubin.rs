//! Taubin λ|μ smoothing with uniform neighbour weights.

use crate::mesh::TriMesh;

/// Vertex neighbourhoods in compressed rows: neighbours of `v` are
/// `adj[start[v]..start[v + 1]]`, sorted and deduplicated.
fn adjacency(mesh: &TriMesh) -> (Vec<usize>, Vec<u32>) {
    let n = mesh.vertices.len();
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); n];
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            lists[a as usize].push(b);
            lists[b as usize].push(a);
        }
    }
    let mut start = Vec::with_capacity(n + 1);
    let mut adj = Vec::new();
    start.push(0);
    for mut l in lists {
        l.sort_unstable();
        l.dedup();
        adj.extend(l);
        start.push(adj.len());
    }
    (start, adj)
}

fn laplacian_step(points: &mut [[f64; 3]], start: &[usize], adj: &[u32], factor: f64, scratch: &mut Vec<[f64; 3]>) {
    scratch.clear();
    scratch.extend_from_slice(points);
    for (v, p) in points.iter_mut().enumerate() {
        let nb = &adj[start[v]..start[v + 1]];
        if nb.is_empty() {
            continue;
        }
        let mut mean = [0.0; 3];
        for &u in nb {
            for a in 0..3 {
                mean[a] += scratch[u as usize][a];
            }
        }
        for a in 0..3 {
            p[a] += factor * (mean[a] / nb.len() as f64 - scratch[v][a]);
        }
    }
}

/// Moves vertices only; faces and boxes are carried over unchanged.
pub fn taubin_smooth(mesh: &TriMesh, lambda: f64, mu: f64, iterations: usize) -> TriMesh {
    let mut out = mesh.clone();
    if iterations == 0 {
        return out;
    }
    let (start, adj) = adjacency(mesh);
    let mut scratch = Vec::with_capacity(mesh.vertices.len());
    for _ in 0..iterations {
        laplacian_step(&mut out.vertices, &start, &adj, lambda, &mut scratch);
        laplacian_step(&mut out.vertices, &start, &adj, mu, &mut scratch);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_cube;

    #[test]
    fn zero_iterations_is_identity() {
        let m = unit_cube();
        assert_eq!(taubin_smooth(&m, 0.5, -0.53, 0), m);
    }

    #[test]
    fn counts_preserved() {
        let m = unit_cube();
        let s = taubin_smooth(&m, 0.5, -0.53, 10);
        assert_eq!(s.vertices.len(), m.vertices.len());
        assert_eq!(s.faces, m.faces);
        assert_eq!(s.edge_count(), m.edge_count());
    }

    #[test]
    fn isolated_vertex_stays_put() {
        let mut m = unit_cube();
        m.vertices.push([5.0, 5.0, 5.0]);
        let s = taubin_smooth(&m, 0.5, -0.53, 3);
        assert_eq!(*s.vertices.last().unwrap(), [5.0, 5.0, 5.0]);
    }
}
