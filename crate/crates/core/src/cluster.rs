//! Same-size k-means over node positions, cluster barycenters and
//! cluster adjacency, plus the per-trajectory cluster cache.
//!
//! `K = ceil(N / s)` clusters whose sizes are `floor(N / K)` or
//! `ceil(N / K)`. Centroids are seeded with k-means++, the initial
//! assignment is a greedy capacity-constrained pass ordered by how much a
//! point prefers its best centroid over its worst, and refinement swaps
//! pairs of points between clusters while the within-cluster squared
//! distance strictly drops.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{len_u32, put_u32, write_file, Reader};
use crate::mesh::{MeshFrame, Trajectory};
use crate::polygon::dist2;

pub const MAX_REFINE_ITERATIONS: usize = 100;
pub const CACHE_MAGIC: &[u8; 4] = b"EGLC";
pub const CACHE_VERSION: u32 = 1;

/// Node-to-cluster partition of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    /// Cluster index in `[0, k)` for every node.
    pub assignment: Vec<u32>,
    pub k: usize,
    pub target_size: usize,
    /// Member count per cluster.
    pub sizes: Vec<usize>,
}

impl ClusterAssignment {
    /// Builds an assignment from raw labels, checking the partition
    /// invariants.
    pub fn from_labels(assignment: Vec<u32>, k: usize, target_size: usize) -> Result<Self> {
        let mut sizes = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            let c = c as usize;
            if c >= k {
                return Err(Error::Format(format!("node {i} assigned to cluster {c} >= {k}")));
            }
            sizes[c] += 1;
        }
        if sizes.contains(&0) {
            return Err(Error::Format("empty cluster in assignment".into()));
        }
        Ok(ClusterAssignment {
            assignment,
            k,
            target_size,
            sizes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.assignment.len()
    }

    /// Members of every cluster in ascending node order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c as usize].push(i);
        }
        out
    }
}

/// Derived coarse-graph data of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterGeometry {
    pub barycenters: Vec<[f64; 2]>,
    /// K×K, symmetric and reflexive.
    pub adjacency: Array2<bool>,
}

impl ClusterGeometry {
    pub fn new(positions: &[[f64; 2]], assignment: &ClusterAssignment, edges: &[[u32; 2]]) -> Self {
        ClusterGeometry {
            barycenters: barycenters(positions, assignment),
            adjacency: cluster_adjacency(assignment, edges),
        }
    }
}

/// Assignment plus its derived geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameClusters {
    pub assignment: ClusterAssignment,
    pub geometry: ClusterGeometry,
}

impl FrameClusters {
    pub fn for_frame(frame: &MeshFrame, assignment: ClusterAssignment) -> Self {
        let geometry = ClusterGeometry::new(&frame.positions_f64(), &assignment, &frame.edges);
        FrameClusters { assignment, geometry }
    }

    pub fn k(&self) -> usize {
        self.assignment.k
    }
}

/// Cluster count and balanced sizes for `n` nodes at target size `s`.
pub fn balanced_sizes(n: usize, s: usize) -> (usize, usize, usize) {
    let k = n.div_ceil(s);
    let small = n / k;
    let big_count = n - small * k;
    (k, small, big_count)
}

pub fn same_size_kmeans(positions: &[[f64; 2]], target_size: usize, seed: u64) -> Result<ClusterAssignment> {
    Ok(same_size_kmeans_traced(positions, target_size, seed)?.0)
}

/// Same as [`same_size_kmeans`], also returning the within-cluster
/// squared distance after the initial assignment and after each
/// refinement iteration.
pub fn same_size_kmeans_traced(
    positions: &[[f64; 2]],
    target_size: usize,
    seed: u64,
) -> Result<(ClusterAssignment, Vec<f64>)> {
    let n = positions.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot cluster an empty point set".into()));
    }
    if target_size == 0 {
        return Err(Error::InvalidArgument("cluster size must be at least 1".into()));
    }
    let (k, small, big_count) = balanced_sizes(n, target_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(positions, k, &mut rng);
    let mut labels = initial_assignment(positions, &centroids, small, big_count);
    let mut members = group(&labels, k);
    update_centroids(positions, &members, &mut centroids);
    let mut history = vec![objective(positions, &labels, &centroids)];

    if k > 1 {
        let mut grid = CentroidGrid::new(&centroids);
        for _ in 0..MAX_REFINE_ITERATIONS {
            let swaps = swap_pass(positions, &centroids, &grid, &mut labels, &mut members);
            update_centroids(positions, &members, &mut centroids);
            grid = CentroidGrid::new(&centroids);
            history.push(objective(positions, &labels, &centroids));
            if swaps == 0 {
                break;
            }
        }
    }

    let assignment = ClusterAssignment::from_labels(labels, k, target_size)?;
    Ok((assignment, history))
}

/// Sum over nodes of the squared distance to their cluster mean.
pub fn within_cluster_sq_distance(positions: &[[f64; 2]], assignment: &ClusterAssignment) -> f64 {
    let bary = barycenters(positions, assignment);
    objective(positions, &assignment.assignment, &bary)
}

fn objective(positions: &[[f64; 2]], labels: &[u32], centroids: &[[f64; 2]]) -> f64 {
    positions
        .iter()
        .zip(labels)
        .map(|(&p, &c)| dist2(p, centroids[c as usize]))
        .sum()
}

fn kmeans_pp(positions: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let n = positions.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(positions[rng.gen_range(0..n)]);
    let mut d2: Vec<f64> = positions.iter().map(|&p| dist2(p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let c = positions[next];
        centroids.push(c);
        for (d, &p) in d2.iter_mut().zip(positions) {
            *d = d.min(dist2(p, c));
        }
    }
    centroids
}

fn initial_assignment(positions: &[[f64; 2]], centroids: &[[f64; 2]], small: usize, big_count: usize) -> Vec<u32> {
    let n = positions.len();
    let k = centroids.len();
    let mut order: Vec<(f64, usize)> = positions
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let (lo, hi) = centroids.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &c| {
                let d = dist2(p, c);
                (lo.min(d), hi.max(d))
            });
            (hi - lo, i)
        })
        .collect();
    order.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });

    let mut sizes = vec![0usize; k];
    let mut bigs = 0usize;
    let mut labels = vec![0u32; n];
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(k);
    for &(_, i) in &order {
        let p = positions[i];
        ranked.clear();
        ranked.extend(centroids.iter().enumerate().map(|(c, &q)| (dist2(p, q), c)));
        ranked.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        let cap = |size: usize, bigs: usize| size < small || (size == small && bigs < big_count);
        let &(_, c) = ranked
            .iter()
            .find(|&&(_, c)| cap(sizes[c], bigs))
            .expect("total capacity equals point count");
        if sizes[c] == small {
            bigs += 1;
        }
        sizes[c] += 1;
        labels[i] = c as u32;
    }
    labels
}

fn group(labels: &[u32], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (i, &c) in labels.iter().enumerate() {
        members[c as usize].push(i);
    }
    members
}

fn update_centroids(positions: &[[f64; 2]], members: &[Vec<usize>], centroids: &mut [[f64; 2]]) {
    for (c, m) in centroids.iter_mut().zip(members) {
        if m.is_empty() {
            continue;
        }
        let mut s = [0.0; 2];
        for &i in m {
            s[0] += positions[i][0];
            s[1] += positions[i][1];
        }
        *c = [s[0] / m.len() as f64, s[1] / m.len() as f64];
    }
}

/// One refinement pass with centroids held fixed. A point that is closer
/// to another centroid than to its own looks for a partner in that
/// cluster; the pair is swapped when the fixed-centroid cost strictly
/// drops. Every improving swap has at least one side that prefers the
/// other centroid, so scanning only preferred clusters loses none.
fn swap_pass(
    positions: &[[f64; 2]],
    centroids: &[[f64; 2]],
    grid: &CentroidGrid,
    labels: &mut [u32],
    members: &mut [Vec<usize>],
) -> usize {
    let mut swaps = 0;
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for a in 0..positions.len() {
        let p = positions[a];
        let own = labels[a] as usize;
        let d_own = dist2(p, centroids[own]);
        candidates.clear();
        grid.closer_than(p, d_own, centroids, &mut candidates);
        candidates.sort_by(|x, y| {
            x.0.partial_cmp(&y.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(x.1.cmp(&y.1))
        });
        for &(d_other, other) in candidates.iter() {
            if other == own {
                continue;
            }
            let gain_a = d_own - d_other;
            // best partner in `other` to send back to `own`
            let mut best: Option<(f64, usize)> = None;
            for (slot, &b) in members[other].iter().enumerate() {
                let q = positions[b];
                let gain_b = dist2(q, centroids[other]) - dist2(q, centroids[own]);
                if best.is_none_or(|(g, _)| gain_b > g) {
                    best = Some((gain_b, slot));
                }
            }
            if let Some((gain_b, slot)) = best {
                if gain_a + gain_b > 1e-12 * (d_own + d_other).max(f64::MIN_POSITIVE) {
                    let b = members[other][slot];
                    let a_slot = members[own].iter().position(|&x| x == a).expect("member");
                    members[other][slot] = a;
                    members[own][a_slot] = b;
                    labels[a] = other as u32;
                    labels[b] = own as u32;
                    swaps += 1;
                    break;
                }
            }
        }
    }
    swaps
}

/// Uniform bucket grid over centroids for range queries.
struct CentroidGrid {
    origin: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl CentroidGrid {
    fn new(centroids: &[[f64; 2]]) -> Self {
        let (lo, hi) = crate::polygon::bounds(centroids);
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        let per_axis = ((centroids.len() as f64).sqrt().ceil() as usize).clamp(1, 256);
        let cell = span / per_axis as f64 * (1.0 + 1e-9);
        let dims = [
            (((hi[0] - lo[0]) / cell) as usize + 1).max(1),
            (((hi[1] - lo[1]) / cell) as usize + 1).max(1),
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        let mut g = CentroidGrid {
            origin: lo,
            cell,
            dims,
            buckets: Vec::new(),
        };
        for (i, &c) in centroids.iter().enumerate() {
            let (x, y) = g.cell_of(c);
            buckets[y * dims[0] + x].push(i);
        }
        g.buckets = std::mem::take(&mut buckets);
        g
    }

    fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let fx = ((p[0] - self.origin[0]) / self.cell).floor();
        let fy = ((p[1] - self.origin[1]) / self.cell).floor();
        (
            (fx.max(0.0) as usize).min(self.dims[0] - 1),
            (fy.max(0.0) as usize).min(self.dims[1] - 1),
        )
    }

    /// Centroids strictly closer to `p` than `limit2` (squared distance).
    fn closer_than(&self, p: [f64; 2], limit2: f64, centroids: &[[f64; 2]], out: &mut Vec<(f64, usize)>) {
        let r = limit2.sqrt();
        let lo = self.cell_of([p[0] - r, p[1] - r]);
        let hi = self.cell_of([p[0] + r, p[1] + r]);
        for y in lo.1..=hi.1 {
            for x in lo.0..=hi.0 {
                for &c in &self.buckets[y * self.dims[0] + x] {
                    let d = dist2(p, centroids[c]);
                    if d < limit2 {
                        out.push((d, c));
                    }
                }
            }
        }
    }
}

/// Per-cluster mean of member positions.
pub fn barycenters(positions: &[[f64; 2]], assignment: &ClusterAssignment) -> Vec<[f64; 2]> {
    let mut sums = vec![[0.0f64; 2]; assignment.k];
    for (p, &c) in positions.iter().zip(&assignment.assignment) {
        sums[c as usize][0] += p[0];
        sums[c as usize][1] += p[1];
    }
    sums.iter()
        .zip(&assignment.sizes)
        .map(|(s, &n)| [s[0] / n as f64, s[1] / n as f64])
        .collect()
}

/// `adjacency[j][k]` is true iff `j == k` or a mesh edge joins the two
/// clusters.
pub fn cluster_adjacency(assignment: &ClusterAssignment, edges: &[[u32; 2]]) -> Array2<bool> {
    let k = assignment.k;
    let mut adj = Array2::from_elem((k, k), false);
    for c in 0..k {
        adj[[c, c]] = true;
    }
    for &[a, b] in edges {
        let ca = assignment.assignment[a as usize] as usize;
        let cb = assignment.assignment[b as usize] as usize;
        adj[[ca, cb]] = true;
        adj[[cb, ca]] = true;
    }
    adj
}

/// Clusters every frame of a trajectory with the same seed.
pub fn cluster_trajectory(traj: &Trajectory, target_size: usize, seed: u64) -> Result<Vec<ClusterAssignment>> {
    traj.frames
        .iter()
        .map(|f| same_size_kmeans(&f.positions_f64(), target_size, seed))
        .collect()
}

pub fn cache_file_name(target_size: usize, seed: u64) -> String {
    format!("clusters_s{target_size}_seed{seed}.bin")
}

pub fn cache_path(traj_dir: &Path, target_size: usize, seed: u64) -> PathBuf {
    traj_dir.join(cache_file_name(target_size, seed))
}

pub fn encode_cache(assignments: &[ClusterAssignment]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    put_u32(&mut buf, CACHE_VERSION);
    put_u32(&mut buf, len_u32(assignments.len(), "num_steps")?);
    for a in assignments {
        put_u32(&mut buf, len_u32(a.num_nodes(), "node count")?);
        put_u32(&mut buf, len_u32(a.k, "cluster count")?);
        for &c in &a.assignment {
            put_u32(&mut buf, c);
        }
    }
    Ok(buf)
}

pub fn decode_cache(bytes: &[u8], target_size: usize) -> Result<Vec<ClusterAssignment>> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "cluster cache header")?;
    if magic != CACHE_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CACHE_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u32("cluster cache header")?;
    if version != CACHE_VERSION {
        return Err(Error::Version {
            expected: CACHE_VERSION,
            found: version,
        });
    }
    let steps = r.u32("cluster cache header")? as usize;
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let what = format!("cluster frame {t}");
        let n = r.u32(&what)? as usize;
        let k = r.u32(&what)? as usize;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(r.u32(&what)?);
        }
        out.push(ClusterAssignment::from_labels(labels, k, target_size)?);
    }
    if r.remaining() != 0 {
        return Err(Error::Format("trailing bytes in cluster cache".into()));
    }
    Ok(out)
}

/// Clusters all frames and writes the cache next to the trajectory.
pub fn precompute_clusters(
    traj: &Trajectory,
    traj_dir: &Path,
    target_size: usize,
    seed: u64,
) -> Result<Vec<ClusterAssignment>> {
    let assignments = cluster_trajectory(traj, target_size, seed)?;
    write_file(&cache_path(traj_dir, target_size, seed), &encode_cache(&assignments)?)?;
    Ok(assignments)
}

pub fn load_clusters(traj_dir: &Path, target_size: usize, seed: u64) -> Result<Vec<ClusterAssignment>> {
    let path = cache_path(traj_dir, target_size, seed);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    decode_cache(&bytes, target_size)
}

/// Loads the cache when it matches `traj`, otherwise clusters afresh.
pub fn load_or_compute_clusters(
    traj: &Trajectory,
    traj_dir: Option<&Path>,
    target_size: usize,
    seed: u64,
) -> Result<Vec<ClusterAssignment>> {
    if let Some(dir) = traj_dir {
        if let Ok(cached) = load_clusters(dir, target_size, seed) {
            let matches = cached.len() == traj.len()
                && cached
                    .iter()
                    .zip(&traj.frames)
                    .all(|(c, f)| c.num_nodes() == f.num_nodes());
            if matches {
                return Ok(cached);
            }
            log::warn!(
                "cluster cache in {} does not match trajectory; recomputing",
                dir.display()
            );
        }
    }
    cluster_trajectory(traj, target_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn random_points(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()
    }

    #[test]
    fn divisible_sizes() {
        let a = same_size_kmeans(&random_points(30, 1), 10, 0).unwrap();
        assert_eq!(a.k, 3);
        assert_eq!(a.sizes, vec![10, 10, 10]);
    }

    #[test]
    fn non_divisible_sizes() {
        let a = same_size_kmeans(&random_points(25, 2), 10, 0).unwrap();
        assert_eq!(a.k, 3);
        let mut s = a.sizes.clone();
        s.sort_unstable();
        assert_eq!(s, vec![8, 8, 9]);
    }

    #[test]
    fn separated_blobs_become_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = Vec::new();
        for center in [[0.0, 0.0], [10.0, 0.0]] {
            for _ in 0..10 {
                pts.push([center[0] + rng.gen::<f64>(), center[1] + rng.gen::<f64>()]);
            }
        }
        for seed in 0..5 {
            let a = same_size_kmeans(&pts, 10, seed).unwrap();
            let first = a.assignment[0];
            assert!(a.assignment[..10].iter().all(|&c| c == first));
            assert!(a.assignment[10..].iter().all(|&c| c != first));
        }
    }

    #[test]
    fn blob_partition_is_the_brute_force_optimum() {
        // exhaustive over all balanced 2-partitions of 8 points
        let pts = vec![
            [0.0, 0.0],
            [0.3, 0.1],
            [0.1, 0.4],
            [0.2, 0.2],
            [5.0, 5.0],
            [5.2, 5.1],
            [4.9, 5.3],
            [5.1, 4.8],
        ];
        let mut best = f64::INFINITY;
        for mask in 0u32..256 {
            if mask.count_ones() != 4 {
                continue;
            }
            let labels: Vec<u32> = (0..8).map(|i| (mask >> i) & 1).collect();
            let a = ClusterAssignment::from_labels(labels, 2, 4).unwrap();
            best = best.min(within_cluster_sq_distance(&pts, &a));
        }
        let a = same_size_kmeans(&pts, 4, 11).unwrap();
        assert!((within_cluster_sq_distance(&pts, &a) - best).abs() < 1e-12);
    }

    #[test]
    fn single_point_and_singletons() {
        let a = same_size_kmeans(&[[1.0, 2.0]], 10, 0).unwrap();
        assert_eq!((a.k, a.sizes.clone()), (1, vec![1]));
        let pts = random_points(7, 3);
        let a = same_size_kmeans(&pts, 1, 0).unwrap();
        assert_eq!(a.k, 7);
        assert!(a.sizes.iter().all(|&s| s == 1));
    }

    #[test]
    fn precondition_errors() {
        assert!(same_size_kmeans(&[], 3, 0).is_err());
        assert!(same_size_kmeans(&[[0.0, 0.0]], 0, 0).is_err());
    }

    #[test]
    fn barycenter_cases() {
        let pts = [[0.0, 0.0], [2.0, 0.0], [5.0, -1.0]];
        let a = ClusterAssignment::from_labels(vec![0, 0, 1], 2, 2).unwrap();
        let b = barycenters(&pts, &a);
        assert_eq!(b, vec![[1.0, 0.0], [5.0, -1.0]]);
        let shifted: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] + 3.0, p[1] - 2.0]).collect();
        let bs = barycenters(&shifted, &a);
        for (x, y) in b.iter().zip(&bs) {
            assert!((y[0] - x[0] - 3.0).abs() < 1e-12 && (y[1] - x[1] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adjacency_cases() {
        let one = ClusterAssignment::from_labels(vec![0, 0, 0], 1, 3).unwrap();
        let adj = cluster_adjacency(&one, &[[0, 1], [1, 2]]);
        assert_eq!(adj, Array2::from_elem((1, 1), true));

        let two = ClusterAssignment::from_labels(vec![0, 0, 1, 1], 2, 2).unwrap();
        let adj = cluster_adjacency(&two, &[[0, 1], [2, 3]]);
        assert!(!adj[[0, 1]] && !adj[[1, 0]] && adj[[0, 0]] && adj[[1, 1]]);

        // path 0-1-2 with singleton clusters: true exactly when |j-k| <= 1
        let path = ClusterAssignment::from_labels(vec![0, 1, 2], 3, 1).unwrap();
        let adj = cluster_adjacency(&path, &[[0, 1], [1, 2]]);
        for j in 0..3i32 {
            for k in 0..3i32 {
                assert_eq!(adj[[j as usize, k as usize]], (j - k).abs() <= 1);
            }
        }
    }

    #[test]
    fn eagle_scale_cluster_count() {
        assert_eq!(balanced_sizes(3388, 10).0, 339);
    }

    #[test]
    fn cache_round_trip_and_errors() {
        let pts = random_points(23, 9);
        let a = same_size_kmeans(&pts, 5, 1).unwrap();
        let bytes = encode_cache(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(&bytes[..4], b"EGLC");
        assert_eq!(decode_cache(&bytes, 5).unwrap(), vec![a.clone(), a]);
        assert!(matches!(
            decode_cache(&bytes[..bytes.len() - 3], 5),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(matches!(decode_cache(&bad, 5), Err(Error::BadMagic { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn balance_partition_and_monotone_objective(n in 1usize..600, s in 1usize..64, seed in 0u64..1000) {
            let pts = random_points(n, seed ^ 0x9e37);
            let (a, history) = same_size_kmeans_traced(&pts, s, seed).unwrap();
            prop_assert_eq!(a.k, n.div_ceil(s));
            prop_assert_eq!(a.sizes.iter().sum::<usize>(), n);
            let lo = *a.sizes.iter().min().unwrap();
            let hi = *a.sizes.iter().max().unwrap();
            prop_assert!(hi - lo <= 1);
            for w in history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
            }
        }

        #[test]
        fn deterministic_per_seed(n in 1usize..200, s in 1usize..20, seed in 0u64..50) {
            let pts = random_points(n, seed);
            prop_assert_eq!(same_size_kmeans(&pts, s, seed).unwrap(), same_size_kmeans(&pts, s, seed).unwrap());
        }
    }
}
