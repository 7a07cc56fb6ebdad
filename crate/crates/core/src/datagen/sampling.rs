//! Adaptive Poisson-disk point selection and random domain meshes.

use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::delaunay::delaunay_triangulate;
use crate::error::{Error, Result};
use crate::mesh::{FrameGeometry, NodeType};
use crate::polygon::{dist, Polygon};

/// Picks points in random order, keeping each surviving point and
/// deleting every remaining point closer than its radius. Retained
/// indices are returned sorted; any retained pair `p ≠ q` satisfies
/// `‖p − q‖ ≥ min(R(p), R(q))`.
pub fn poisson_disk_downsample(points: &[[f64; 2]], radius: &[f64], seed: u64) -> Result<Vec<usize>> {
    if points.len() != radius.len() {
        return Err(Error::InvalidArgument(format!(
            "{} radii for {} points",
            radius.len(),
            points.len()
        )));
    }
    if let Some(r) = radius.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidArgument(format!("radius {r} must be positive")));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let cell = radius.iter().copied().fold(0.0, f64::max);
    let key = |p: [f64; 2]| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(*p)).or_default().push(i);
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut alive = vec![true; points.len()];
    let mut kept = Vec::new();
    for p in order {
        if !alive[p] {
            continue;
        }
        alive[p] = false;
        kept.push(p);
        let (cx, cy) = key(points[p]);
        for gx in cx - 1..=cx + 1 {
            for gy in cy - 1..=cy + 1 {
                for &q in grid.get(&(gx, gy)).map_or(&[][..], |v| v.as_slice()) {
                    if alive[q] && dist(points[p], points[q]) < radius[p] {
                        alive[q] = false;
                    }
                }
            }
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

/// A sampled mesh and the disk radius scale that produced it.
#[derive(Debug, Clone)]
pub struct SampledMesh {
    pub geometry: FrameGeometry,
    /// `R₀`: the radius where the density equals its domain mean.
    pub radius: f64,
    pub boundary_nodes: usize,
}

/// Mesh of `domain` with about `n_points` nodes at uniform density.
pub fn sample_domain_mesh(domain: &Polygon, n_points: usize, seed: u64) -> Result<SampledMesh> {
    sample_domain_mesh_with_density(domain, n_points, seed, &|_| 1.0)
}

/// Mesh whose local spacing follows `R(p) = R₀ · (ρ(p)/ρ̄)^(−1/2)`, with
/// `ρ̄` the mean density over the domain and `R₀` tuned by bisection so
/// the node count is close to `n_points`. Boundary nodes are spaced by
/// `R` along every polygon edge and carry that edge's label; a vertex
/// takes the label of the edge starting at it.
pub fn sample_domain_mesh_with_density(
    domain: &Polygon,
    n_points: usize,
    seed: u64,
    density: &dyn Fn([f64; 2]) -> f64,
) -> Result<SampledMesh> {
    if n_points < 3 {
        return Err(Error::InvalidArgument(format!(
            "n_points = {n_points} must be at least 3"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = domain.bounds();
    let oversample = (20 * n_points).max(2000);
    let mut candidates = Vec::with_capacity(oversample);
    while candidates.len() < oversample {
        let p = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
        if domain.contains(p) {
            candidates.push(p);
        }
    }
    let mean_density = candidates.iter().map(|&p| density(p)).sum::<f64>() / candidates.len() as f64;
    if !(mean_density > 0.0) {
        return Err(Error::InvalidArgument("density must be positive".into()));
    }
    let scale = |p: [f64; 2]| (density(p) / mean_density).max(1e-12).powf(-0.5);
    let candidate_scale: Vec<f64> = candidates.iter().map(|&p| scale(p)).collect();
    let edge_dist: Vec<f64> = candidates.iter().map(|&p| domain.boundary_distance(p)).collect();
    let poisson_seed = rng.gen::<u64>();

    let build = |r0: f64| -> Result<(Vec<[f64; 2]>, Vec<NodeType>, usize)> {
        let (mut pts, mut types) = boundary_nodes(domain, &|p| r0 * scale(p));
        let nb = pts.len();
        let (idx, radii): (Vec<usize>, Vec<f64>) = (0..candidates.len())
            .filter(|&i| edge_dist[i] >= 0.5 * r0 * candidate_scale[i])
            .map(|i| (i, r0 * candidate_scale[i]))
            .unzip();
        let pool: Vec<[f64; 2]> = idx.iter().map(|&i| candidates[i]).collect();
        for k in poisson_disk_downsample(&pool, &radii, poisson_seed)? {
            pts.push(pool[k]);
            types.push(NodeType::Interior);
        }
        Ok((pts, types, nb))
    };

    let area = domain.area();
    let (mut a, mut b) = ((area / oversample as f64).sqrt() * 0.5, area.sqrt());
    let mut best: Option<(usize, f64)> = None;
    for _ in 0..40 {
        let r0 = 0.5 * (a + b);
        let count = build(r0)?.0.len();
        let miss = count.abs_diff(n_points);
        if best.is_none_or(|(m, _)| miss < m) {
            best = Some((miss, r0));
        }
        if count > n_points {
            a = r0;
        } else if count < n_points {
            b = r0;
        } else {
            break;
        }
    }
    let (miss, r0) = best.expect("at least one bisection step");
    let (pts, types, nb) = build(r0)?;
    if miss > (n_points / 10).max(3) {
        return Err(Error::Geometry(format!(
            "cannot reach {n_points} nodes in this domain (achieved {})",
            pts.len()
        )));
    }
    let tri = delaunay_triangulate(&pts, domain)?;
    Ok(SampledMesh {
        geometry: FrameGeometry {
            positions: Array2::from_shape_fn((pts.len(), 2), |(i, c)| pts[i][c] as f32),
            node_types: types,
            edges: tri.edges,
        },
        radius: r0,
        boundary_nodes: nb,
    })
}

/// Polygon vertices plus nodes walked along each edge at spacing `r(p)`.
fn boundary_nodes(domain: &Polygon, r: &dyn Fn([f64; 2]) -> f64) -> (Vec<[f64; 2]>, Vec<NodeType>) {
    let mut pts = Vec::new();
    let mut types = Vec::new();
    for i in 0..domain.len() {
        let (a, b) = domain.edge(i);
        let len = dist(a, b);
        let label = domain.edge_types[i];
        pts.push(a);
        types.push(label);
        let mut s = r(a);
        // stop before crowding the next vertex
        while s < len - 0.5 * r(b) {
            let t = s / len;
            let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            pts.push(p);
            types.push(label);
            s += r(p);
        }
    }
    (pts, types)
}
