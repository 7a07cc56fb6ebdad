//! Random interior-node downsampling with Delaunay re-triangulation.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::delaunay::delaunay_filtered;
use crate::error::{Error, Result};
use crate::mesh::{MeshFrame, NodeType};
use crate::polygon::orient;

/// Keeps every boundary node and a uniformly random `keep_fraction` of the
/// interior nodes (rounded), in original order, and re-triangulates.
/// New triangles survive only if their centroid lies inside the original
/// mesh, so holes and concave boundaries are preserved.
pub fn downsample_frame(frame: &MeshFrame, keep_fraction: f64, seed: u64) -> Result<MeshFrame> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_fraction = {keep_fraction} must lie in (0, 1]"
        )));
    }
    let interior: Vec<usize> = (0..frame.num_nodes())
        .filter(|&i| frame.node_types[i] == NodeType::Interior)
        .collect();
    let m = (keep_fraction * interior.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<usize> = rand::seq::index::sample(&mut rng, interior.len(), m)
        .into_iter()
        .map(|k| interior[k])
        .collect();
    let kept: Vec<usize> = (0..frame.num_nodes())
        .filter(|i| frame.node_types[*i] != NodeType::Interior || chosen.contains(i))
        .collect();
    if kept.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "downsampling leaves {} nodes, need at least 3",
            kept.len()
        )));
    }

    let pts = frame.positions_f64();
    let faces = mesh_faces(frame);
    let new_pts: Vec<[f64; 2]> = kept.iter().map(|&i| pts[i]).collect();
    let tri = if faces.is_empty() {
        delaunay_filtered(&new_pts, |_| true)?
    } else {
        delaunay_filtered(&new_pts, |c| faces.iter().any(|t| inside_triangle(&pts, t, c)))?
    };
    let rows = |a: &ndarray::Array2<f32>| a.select(ndarray::Axis(0), &kept);
    Ok(MeshFrame {
        positions: rows(&frame.positions),
        node_types: kept.iter().map(|&i| frame.node_types[i]).collect(),
        velocity: rows(&frame.velocity),
        pressure: rows(&frame.pressure),
        edges: tri.edges,
    })
}

/// Triangles of a frame recovered as 3-cliques of its edge graph.
fn mesh_faces(frame: &MeshFrame) -> Vec<[usize; 3]> {
    let n = frame.num_nodes();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &frame.edges {
        let (a, b) = (e[0] as usize, e[1] as usize);
        adj[a].push(b);
        adj[b].push(a);
    }
    for l in &mut adj {
        l.sort_unstable();
        l.dedup();
    }
    let mut faces = Vec::new();
    for a in 0..n {
        for &b in adj[a].iter().filter(|&&b| b > a) {
            for &c in adj[b].iter().filter(|&&c| c > b) {
                if adj[a].binary_search(&c).is_ok() {
                    faces.push([a, b, c]);
                }
            }
        }
    }
    faces
}

fn inside_triangle(pts: &[[f64; 2]], t: &[usize; 3], p: [f64; 2]) -> bool {
    let [a, b, c] = t.map(|i| pts[i]);
    let s = orient(a, b, c).signum();
    let tol = -1e-12;
    s * orient(a, b, p) >= tol && s * orient(b, c, p) >= tol && s * orient(c, a, p) >= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delaunay::centroid;
    use crate::testutil::grid_frame;

    fn counts(f: &MeshFrame) -> (usize, usize) {
        let int = f.node_types.iter().filter(|t| **t == NodeType::Interior).count();
        (int, f.num_nodes() - int)
    }

    #[test]
    fn keeps_boundary_and_requested_interior_count() {
        // 12 × 12 grid: 100 interior, 44 boundary nodes
        let f = grid_frame(12, 12, 0);
        assert_eq!(counts(&f), (100, 44));
        let d = downsample_frame(&f, 0.6, 1).unwrap();
        assert_eq!(counts(&d), (60, 44));
        assert!(d.validate().is_empty());
        assert_eq!(d, downsample_frame(&f, 0.6, 1).unwrap());
        assert_ne!(d, downsample_frame(&f, 0.6, 2).unwrap());
        // carried fields belong to the same positions
        for i in 0..d.num_nodes() {
            let j = (0..f.num_nodes())
                .find(|&j| f.positions.row(j) == d.positions.row(i))
                .unwrap();
            assert_eq!(f.velocity.row(j), d.velocity.row(i));
            assert_eq!(f.pressure.row(j), d.pressure.row(i));
            assert_eq!(f.node_types[j], d.node_types[i]);
        }
    }

    #[test]
    fn full_fraction_keeps_nodes() {
        let f = grid_frame(6, 5, 3);
        let d = downsample_frame(&f, 1.0, 9).unwrap();
        assert_eq!(d.positions, f.positions);
        assert_eq!(d.velocity, f.velocity);
        assert!(d.validate().is_empty());
    }

    #[test]
    fn bad_fraction_is_rejected() {
        let f = grid_frame(4, 4, 0);
        for k in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(downsample_frame(&f, k, 0), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn concave_domain_stays_concave() {
        // L-shaped mesh: a 7 × 7 grid with its upper-right quadrant removed
        let f = grid_frame(7, 7, 0);
        let pts = f.positions_f64();
        let keep: Vec<usize> = (0..f.num_nodes())
            .filter(|&i| !(pts[i][0] > 0.55 && pts[i][1] > 0.55))
            .collect();
        let tri = delaunay_filtered(&keep.iter().map(|&i| pts[i]).collect::<Vec<_>>(), |c| {
            !(c[0] > 0.5 && c[1] > 0.5)
        })
        .unwrap();
        let l = MeshFrame {
            positions: f.positions.select(ndarray::Axis(0), &keep),
            node_types: keep.iter().map(|&i| f.node_types[i]).collect(),
            velocity: f.velocity.select(ndarray::Axis(0), &keep),
            pressure: f.pressure.select(ndarray::Axis(0), &keep),
            edges: tri.edges,
        };
        let d = downsample_frame(&l, 0.5, 4).unwrap();
        let dp = d.positions_f64();
        for t in mesh_faces(&d) {
            let c = centroid(&dp, &t);
            assert!(!(c[0] > 0.56 && c[1] > 0.56), "triangle in the notch at {c:?}");
        }
    }
}
