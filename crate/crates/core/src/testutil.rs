//! Small meshes and fields shared by unit tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{same_size_kmeans, FrameClusters};
use crate::delaunay::delaunay_triangulate;
use crate::mesh::{MeshFrame, NodeType, NormStats};
use crate::polygon::Polygon;

/// Jittered `nx × ny` grid over the unit square with wall nodes on the
/// border and random fields.
pub fn grid_frame(nx: usize, ny: usize, seed: u64) -> MeshFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    let mut types = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let border = i == 0 || j == 0 || i + 1 == nx || j + 1 == ny;
            let mut p = [i as f64 / (nx - 1) as f64, j as f64 / (ny - 1) as f64];
            if !border {
                let h = 0.2 / nx.max(ny) as f64;
                p[0] += rng.gen_range(-h..h);
                p[1] += rng.gen_range(-h..h);
            }
            pts.push(p);
            types.push(if border { NodeType::Wall } else { NodeType::Interior });
        }
    }
    let tri = delaunay_triangulate(&pts, &Polygon::unit_square()).expect("grid triangulates");
    let n = pts.len();
    MeshFrame {
        positions: Array2::from_shape_fn((n, 2), |(i, c)| pts[i][c] as f32),
        node_types: types,
        velocity: Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0)),
        pressure: Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0)),
        edges: tri.edges,
    }
}

pub fn clusters_for(frame: &MeshFrame, size: usize, seed: u64) -> FrameClusters {
    let a = same_size_kmeans(&frame.positions_f64(), size, seed).expect("clusters");
    FrameClusters::for_frame(frame, a)
}

pub fn unit_stats() -> NormStats {
    NormStats::identity(1)
}
