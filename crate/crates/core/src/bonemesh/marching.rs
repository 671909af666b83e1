//! Marching cubes on a binary voxel field at level 0.5.
//!
//! Each cube face contributes oriented segments between crossing edges, with
//! the inside on a fixed side. On a face whose inside corners sit on a
//! diagonal the segments cut off the two outside corners, so the inside
//! stays connected across that face. The same rule is applied by both cubes
//! sharing a face, which keeps the surface watertight.
//!
//! Segments of one cube chain into closed loops. A triangle loop is emitted
//! as is; a longer loop is fanned from its first vertex, or from an added
//! centroid vertex when the cube has a diagonal face, since only there can a
//! fan diagonal coincide with an edge of the neighbouring cube.
//!
//! The mask is padded by one empty layer, so the output is always closed.
//! Vertices lie on voxel-edge midpoints with voxel `i` at `i * spacing`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::volume::{BinaryMask, Spacing};

/// Cube corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
/// Each face lists its corners counter-clockwise seen from outside the cube.
const FACES: [[usize; 4]; 6] = [[0, 4, 6, 2], [1, 3, 7, 5], [0, 1, 5, 4], [2, 6, 7, 3], [0, 2, 3, 1], [4, 5, 7, 6]];

/// The 12 cube edges as (lower corner, axis).
const EDGES: [(usize, usize); 12] =
    [(0, 0), (2, 0), (4, 0), (6, 0), (0, 1), (1, 1), (4, 1), (5, 1), (0, 2), (1, 2), (2, 2), (3, 2)];

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, axis) = (a.min(b), (a ^ b).trailing_zeros() as usize);
    EDGES.iter().position(|&e| e == (lo, axis)).expect("corners are adjacent")
}

fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// Oriented crossing segments on the faces of a cube with corner states
/// `inside`, as `next[start_edge] = end_edge`. Also reports whether any face
/// has diagonal inside corners.
fn cube_segments(inside: [bool; 8]) -> ([Option<usize>; 12], bool) {
    let mut next = [None; 12];
    let mut ambiguous = false;
    for face in FACES {
        let b = face.map(|c| inside[c]);
        let crossings = (0..4).filter(|&i| b[i] != b[(i + 1) % 4]).count();
        let edge = |i: usize| edge_between(face[i], face[(i + 1) % 4]);
        match crossings {
            0 => {}
            2 => {
                let start = (0..4).find(|&i| !b[i] && b[(i + 1) % 4]).unwrap();
                let end = (0..4).find(|&i| b[i] && !b[(i + 1) % 4]).unwrap();
                next[edge(start)] = Some(edge(end));
            }
            4 => {
                ambiguous = true;
                for i in (0..4).filter(|&i| !b[i]) {
                    next[edge(i)] = Some(edge((i + 3) % 4));
                }
            }
            _ => unreachable!("a closed 4-cycle crosses an even number of times"),
        }
    }
    (next, ambiguous)
}

fn cube_loops(next: &[Option<usize>; 12]) -> Vec<Vec<usize>> {
    let mut seen = [false; 12];
    let mut loops = Vec::new();
    for s in 0..12 {
        if next[s].is_none() || seen[s] {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = s;
        while !seen[e] {
            seen[e] = true;
            lp.push(e);
            e = next[e].expect("segments form closed loops");
        }
        loops.push(lp);
    }
    loops
}

/// Index of the vertex on cube edge `e` of the cube at padded position `cube`,
/// created on first use.
fn edge_vertex(
    cube: [usize; 3],
    e: usize,
    [px, py]: [usize; 2],
    spacing: Spacing,
    by_edge: &mut HashMap<usize, u32>,
    vertices: &mut Vec<[f64; 3]>,
) -> u32 {
    let (c, axis) = EDGES[e];
    let off = corner_offset(c);
    let p: [usize; 3] = std::array::from_fn(|a| cube[a] + off[a]);
    let key = ((p[2] * py + p[1]) * px + p[0]) * 3 + axis;
    *by_edge.entry(key).or_insert_with(|| {
        let v = std::array::from_fn(|a| (p[a] as f64 - 1.0 + if a == axis { 0.5 } else { 0.0 }) * spacing[a]);
        vertices.push(v);
        (vertices.len() - 1) as u32
    })
}

/// Surface of `mask` at level 0.5, scaled by `spacing`.
pub fn extract_isosurface(mask: &BinaryMask, spacing: Spacing) -> Result<TriMesh> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let [nx, ny, nz] = mask.dims();
    let (px, py) = (nx + 2, ny + 2);
    let inside = |x: usize, y: usize, z: usize| -> bool {
        x >= 1 && y >= 1 && z >= 1 && x <= nx && y <= ny && z <= nz && mask.get(x - 1, y - 1, z - 1)
    };
    let Some((lo, hi)) = mask.bounding_box() else {
        return Err(Error::EmptyMask);
    };

    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut by_edge: HashMap<usize, u32> = HashMap::new();

    // Cubes whose lower corner is within one voxel of the occupied box.
    for z in lo[2]..=hi[2] + 1 {
        for y in lo[1]..=hi[1] + 1 {
            for x in lo[0]..=hi[0] + 1 {
                let mut state = [false; 8];
                for (c, s) in state.iter_mut().enumerate() {
                    let [dx, dy, dz] = corner_offset(c);
                    *s = inside(x + dx, y + dy, z + dz);
                }
                if state.iter().all(|&s| s) || state.iter().all(|&s| !s) {
                    continue;
                }
                let (next, ambiguous) = cube_segments(state);
                for lp in cube_loops(&next) {
                    let ids: Vec<u32> =
                        lp.iter().map(|&e| edge_vertex([x, y, z], e, [px, py], spacing, &mut by_edge, &mut vertices)).collect();
                    if ids.len() == 3 {
                        faces.push([ids[0], ids[1], ids[2]]);
                    } else if ambiguous {
                        let mut c = [0.0; 3];
                        for &i in &ids {
                            for a in 0..3 {
                                c[a] += vertices[i as usize][a] / ids.len() as f64;
                            }
                        }
                        vertices.push(c);
                        let ci = (vertices.len() - 1) as u32;
                        for i in 0..ids.len() {
                            faces.push([ci, ids[i], ids[(i + 1) % ids.len()]]);
                        }
                    } else {
                        for i in 1..ids.len() - 1 {
                            faces.push([ids[0], ids[i], ids[i + 1]]);
                        }
                    }
                }
            }
        }
    }
    TriMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> bool) -> BinaryMask {
        let mut m = BinaryMask::empty(dims);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    m.set(x, y, z, f(x, y, z));
                }
            }
        }
        m
    }

    #[test]
    fn every_cube_configuration_closes_loops() {
        for bits in 0u32..256 {
            let state: [bool; 8] = std::array::from_fn(|c| bits >> c & 1 == 1);
            let (next, _) = cube_segments(state);
            let starts = next.iter().filter(|n| n.is_some()).count();
            let mut ends = [0; 12];
            for e in next.iter().flatten() {
                ends[*e] += 1;
            }
            assert!(ends.iter().all(|&n| n <= 1));
            assert_eq!(ends.iter().sum::<usize>(), starts);
            for (e, n) in next.iter().enumerate() {
                assert_eq!(n.is_some(), ends[e] == 1, "config {bits:08b}");
            }
        }
    }

    #[test]
    fn single_voxel_is_octahedron() {
        let m = mask_from([3, 3, 3], |x, y, z| (x, y, z) == (1, 1, 1));
        let mesh = extract_isosurface(&m, [1.0; 3]).unwrap();
        assert_eq!((mesh.vertices.len(), mesh.faces.len(), mesh.edge_count()), (6, 8, 12));
        assert_eq!(mesh.euler_characteristic(), 2);
        assert!(mesh.is_closed());
        // Octahedron with half-diagonal 0.5.
        assert!((mesh.signed_volume() - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_voxel_is_closed() {
        let m = mask_from([2, 2, 2], |x, y, z| x + y + z == 0);
        let mesh = extract_isosurface(&m, [1.0; 3]).unwrap();
        assert!(mesh.is_closed());
        assert_eq!(mesh.euler_characteristic(), 2);
    }

    #[test]
    fn solid_cube_volume() {
        let m = mask_from([14, 14, 14], |x, y, z| (2..12).contains(&x) && (2..12).contains(&y) && (2..12).contains(&z));
        let mesh = extract_isosurface(&m, [1.0; 3]).unwrap();
        assert!(mesh.is_closed());
        assert_eq!(mesh.euler_characteristic(), 2);
        let v = mesh.signed_volume();
        // 10^3 less the chamfered edges and corners.
        assert!(v > 950.0 && v < 1000.0, "{v}");
    }

    #[test]
    fn diagonal_voxels_are_closed_and_manifold() {
        let m = mask_from([4, 4, 4], |x, y, z| (x, y, z) == (1, 1, 1) || (x, y, z) == (2, 2, 1) || (x, y, z) == (2, 1, 2));
        let mesh = extract_isosurface(&m, [1.0; 3]).unwrap();
        assert!(mesh.is_closed());
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn spacing_scales_vertices() {
        let m = mask_from([3, 3, 3], |x, y, z| (x, y, z) == (1, 1, 1));
        let mesh = extract_isosurface(&m, [2.0, 3.0, 4.0]).unwrap();
        let b = mesh.bounds().unwrap();
        assert_eq!(b.min, [1.0, 1.5, 2.0]);
        assert_eq!(b.max, [3.0, 4.5, 6.0]);
    }

    #[test]
    fn empty_mask_is_error() {
        assert!(matches!(extract_isosurface(&BinaryMask::empty([3, 3, 3]), [1.0; 3]), Err(Error::EmptyMask)));
    }
}
