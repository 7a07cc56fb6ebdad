//! Dynamic mesh data model: node types, frames, trajectories and
//! normalization statistics.

use std::collections::HashMap;
use std::fmt;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary-condition label of a mesh node, stored as one byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum NodeType {
    Interior = 0,
    Wall = 1,
    Inlet = 2,
    Outlet = 3,
}

impl NodeType {
    pub const COUNT: usize = 4;

    pub fn from_u8(code: u8) -> Option<Self> {
        match code {
            0 => Some(NodeType::Interior),
            1 => Some(NodeType::Wall),
            2 => Some(NodeType::Inlet),
            3 => Some(NodeType::Outlet),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn is_boundary(self) -> bool {
        self != NodeType::Interior
    }
}

/// Node set and connectivity of one frame, without fields.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGeometry {
    /// N×2 node coordinates in meters.
    pub positions: Array2<f32>,
    pub node_types: Vec<NodeType>,
    /// Undirected edges, smaller index first, each stored once.
    pub edges: Vec<[u32; 2]>,
}

impl FrameGeometry {
    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        [self.positions[[i, 0]] as f64, self.positions[[i, 1]] as f64]
    }

    pub fn positions_f64(&self) -> Vec<[f64; 2]> {
        (0..self.num_nodes()).map(|i| self.position(i)).collect()
    }

    /// Attaches fields to this geometry.
    pub fn with_fields(self, velocity: Array2<f32>, pressure: Array2<f32>) -> MeshFrame {
        MeshFrame {
            positions: self.positions,
            node_types: self.node_types,
            velocity,
            pressure,
            edges: self.edges,
        }
    }
}

/// One time step of a dynamic mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshFrame {
    /// N×2 node coordinates in meters.
    pub positions: Array2<f32>,
    pub node_types: Vec<NodeType>,
    /// N×2 velocity in m/s.
    pub velocity: Array2<f32>,
    /// N×Pc pressure channels in Pa.
    pub pressure: Array2<f32>,
    /// Undirected edges, smaller index first, each stored once.
    pub edges: Vec<[u32; 2]>,
}

impl MeshFrame {
    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn pressure_channels(&self) -> usize {
        self.pressure.ncols()
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        [self.positions[[i, 0]] as f64, self.positions[[i, 1]] as f64]
    }

    pub fn positions_f64(&self) -> Vec<[f64; 2]> {
        (0..self.num_nodes()).map(|i| self.position(i)).collect()
    }

    pub fn geometry(&self) -> FrameGeometry {
        FrameGeometry {
            positions: self.positions.clone(),
            node_types: self.node_types.clone(),
            edges: self.edges.clone(),
        }
    }

    /// True when node set, types and connectivity are identical.
    pub fn same_geometry(&self, other: &MeshFrame) -> bool {
        self.positions == other.positions && self.node_types == other.node_types && self.edges == other.edges
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_frame(self)
    }
}

/// A single broken frame invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EdgeOutOfRange {
        edge: usize,
        node: u32,
    },
    SelfLoop {
        edge: usize,
    },
    EdgeNotCanonical {
        edge: usize,
    },
    DuplicateEdge {
        edge: usize,
        first: usize,
    },
    FieldLength {
        field: &'static str,
        len: usize,
        expected: usize,
    },
    DuplicatePosition {
        node: usize,
        other: usize,
    },
    NonFinite {
        field: &'static str,
        node: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EdgeOutOfRange { edge, node } => {
                write!(f, "edge {edge}: endpoint {node} is not a valid node index")
            }
            Violation::SelfLoop { edge } => write!(f, "edge {edge}: self-loop"),
            Violation::EdgeNotCanonical { edge } => {
                write!(f, "edge {edge}: smaller index must come first")
            }
            Violation::DuplicateEdge { edge, first } => {
                write!(f, "edge {edge}: duplicates edge {first}")
            }
            Violation::FieldLength { field, len, expected } => write!(f, "{field}: length {len}, expected {expected}"),
            Violation::DuplicatePosition { node, other } => {
                write!(f, "node {node}: same position as node {other}")
            }
            Violation::NonFinite { field, node } => {
                write!(f, "{field}: non-finite value at node {node}")
            }
        }
    }
}

/// Checks every frame invariant and reports all violations found.
pub fn validate_frame(frame: &MeshFrame) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = frame.node_types.len();

    let lengths = [
        ("positions", frame.positions.nrows()),
        ("velocity", frame.velocity.nrows()),
        ("pressure", frame.pressure.nrows()),
    ];
    for (field, len) in lengths {
        if len != n {
            out.push(Violation::FieldLength {
                field,
                len,
                expected: n,
            });
        }
    }
    if frame.positions.ncols() != 2 {
        out.push(Violation::FieldLength {
            field: "positions.width",
            len: frame.positions.ncols(),
            expected: 2,
        });
    }
    if frame.velocity.ncols() != 2 {
        out.push(Violation::FieldLength {
            field: "velocity.width",
            len: frame.velocity.ncols(),
            expected: 2,
        });
    }
    if frame.pressure.ncols() == 0 {
        out.push(Violation::FieldLength {
            field: "pressure.width",
            len: 0,
            expected: 1,
        });
    }

    let mut seen: HashMap<(u32, u32), usize> = HashMap::with_capacity(frame.edges.len());
    for (e, &[a, b]) in frame.edges.iter().enumerate() {
        let mut broken = false;
        for node in [a, b] {
            if node as usize >= n {
                out.push(Violation::EdgeOutOfRange { edge: e, node });
                broken = true;
            }
        }
        if a == b {
            out.push(Violation::SelfLoop { edge: e });
            continue;
        }
        if a > b {
            out.push(Violation::EdgeNotCanonical { edge: e });
        }
        if broken {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if let Some(&first) = seen.get(&key) {
            out.push(Violation::DuplicateEdge { edge: e, first });
        } else {
            seen.insert(key, e);
        }
    }

    for (field, arr) in [
        ("positions", &frame.positions),
        ("velocity", &frame.velocity),
        ("pressure", &frame.pressure),
    ] {
        for (i, row) in arr.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite { field, node: i });
            }
        }
    }

    if frame.positions.nrows() == n && frame.positions.ncols() == 2 {
        let mut order: Vec<usize> = (0..n).collect();
        let key = |i: usize| (frame.positions[[i, 0]], frame.positions[[i, 1]]);
        order.sort_by(|&i, &j| {
            key(i)
                .partial_cmp(&key(j))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        for w in order.windows(2) {
            if key(w[0]) == key(w[1]) {
                out.push(Violation::DuplicatePosition {
                    node: w[1],
                    other: w[0],
                });
            }
        }
    }
    out
}

/// Ordered sequence of frames sampled at a fixed time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<MeshFrame>,
    /// Seconds between consecutive frames.
    pub dt: f64,
    pub geometry_tag: String,
    /// Generator seed, kept for provenance.
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pressure_channels(&self) -> usize {
        self.frames.first().map_or(0, |f| f.pressure_channels())
    }

    /// Validates the trajectory-level and per-frame invariants.
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Validation(format!(
                "trajectory has {} frames, at least 2 required",
                self.frames.len()
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Validation(format!("dt must be positive, got {}", self.dt)));
        }
        let pc = self.pressure_channels();
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.pressure_channels() != pc {
                return Err(Error::Validation(format!(
                    "frame {t}: {} pressure channels, expected {pc}",
                    frame.pressure_channels()
                )));
            }
            let report = validate_frame(frame);
            if let Some(v) = report.first() {
                return Err(Error::Validation(format!(
                    "frame {t}: {v} ({} violation(s))",
                    report.len()
                )));
            }
        }
        Ok(())
    }
}

/// Train-split field statistics used to normalize model inputs and
/// outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub v_mean: [f64; 2],
    pub v_std: f64,
    pub p_mean: Vec<f64>,
    pub p_std: f64,
}

impl NormStats {
    /// Statistics that leave fields unchanged.
    pub fn identity(pressure_channels: usize) -> Self {
        NormStats {
            v_mean: [0.0, 0.0],
            v_std: 1.0,
            p_mean: vec![0.0; pressure_channels],
            p_std: 1.0,
        }
    }

    pub fn pressure_channels(&self) -> usize {
        self.p_mean.len()
    }

    pub fn normalize_velocity(&self, v: &Array2<f32>) -> Array2<f64> {
        let mut out = v.mapv(|x| x as f64);
        for mut row in out.rows_mut() {
            row[0] = (row[0] - self.v_mean[0]) / self.v_std;
            row[1] = (row[1] - self.v_mean[1]) / self.v_std;
        }
        out
    }

    pub fn normalize_pressure(&self, p: &Array2<f32>) -> Array2<f64> {
        let mut out = p.mapv(|x| x as f64);
        let mean = Array1::from(self.p_mean.clone());
        for mut row in out.rows_mut() {
            row -= &mean;
            row /= self.p_std;
        }
        out
    }
}

/// A field whose spread fell below the configured floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClampedField {
    Velocity,
    Pressure,
}

/// Pooled per-split statistics.
///
/// Means are per component. Each std is the root-mean-square distance of
/// the per-node vector (velocity, or all pressure channels) from its
/// mean, i.e. `sqrt(E ||v - mean||^2)`. Fields whose spread is below
/// `floor` are clamped to `floor` and listed in the second return value.
pub fn compute_norm_stats(split: &[Trajectory], floor: f64) -> Result<(NormStats, Vec<ClampedField>)> {
    let pc = split
        .iter()
        .flat_map(|t| t.frames.first())
        .map(|f| f.pressure_channels())
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty dataset split".into()))?;

    // Per-trajectory partial sums, reduced in sorted order so the result
    // does not depend on the order of trajectories in the split.
    let mut partials: Vec<Moments> = Vec::with_capacity(split.len());
    for traj in split {
        let mut m = Moments::new(pc);
        for frame in &traj.frames {
            if frame.pressure_channels() != pc {
                return Err(Error::Validation(format!(
                    "pressure channel count {} differs from {pc}",
                    frame.pressure_channels()
                )));
            }
            m.count += frame.num_nodes() as f64;
            for row in frame.velocity.rows() {
                for c in 0..2 {
                    let x = row[c] as f64;
                    m.v_sum[c] += x;
                    m.v_sq[c] += x * x;
                }
            }
            for row in frame.pressure.rows() {
                for c in 0..pc {
                    let x = row[c] as f64;
                    m.p_sum[c] += x;
                    m.p_sq[c] += x * x;
                }
            }
        }
        partials.push(m);
    }
    partials.sort_by(|a, b| {
        a.sort_key()
            .partial_cmp(&b.sort_key())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut total = Moments::new(pc);
    for m in &partials {
        total.add(m);
    }
    if total.count == 0.0 {
        return Err(Error::InvalidArgument("dataset split has no nodes".into()));
    }

    let n = total.count;
    let v_mean = [total.v_sum[0] / n, total.v_sum[1] / n];
    let p_mean: Vec<f64> = total.p_sum.iter().map(|s| s / n).collect();
    let v_var: f64 = (0..2)
        .map(|c| (total.v_sq[c] / n - v_mean[c] * v_mean[c]).max(0.0))
        .sum();
    let p_var: f64 = (0..pc)
        .map(|c| (total.p_sq[c] / n - p_mean[c] * p_mean[c]).max(0.0))
        .sum();

    let mut clamped = Vec::new();
    let mut v_std = v_var.sqrt();
    if !(v_std > floor) {
        log::warn!("velocity field has zero variance; std clamped to {floor}");
        clamped.push(ClampedField::Velocity);
        v_std = floor;
    }
    let mut p_std = p_var.sqrt();
    if !(p_std > floor) {
        log::warn!("pressure field has zero variance; std clamped to {floor}");
        clamped.push(ClampedField::Pressure);
        p_std = floor;
    }
    Ok((
        NormStats {
            v_mean,
            v_std,
            p_mean,
            p_std,
        },
        clamped,
    ))
}

pub const DEFAULT_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Moments {
    count: f64,
    v_sum: [f64; 2],
    v_sq: [f64; 2],
    p_sum: Vec<f64>,
    p_sq: Vec<f64>,
}

impl Moments {
    fn new(pc: usize) -> Self {
        Moments {
            count: 0.0,
            v_sum: [0.0; 2],
            v_sq: [0.0; 2],
            p_sum: vec![0.0; pc],
            p_sq: vec![0.0; pc],
        }
    }

    fn add(&mut self, other: &Moments) {
        self.count += other.count;
        for c in 0..2 {
            self.v_sum[c] += other.v_sum[c];
            self.v_sq[c] += other.v_sq[c];
        }
        for c in 0..self.p_sum.len() {
            self.p_sum[c] += other.p_sum[c];
            self.p_sq[c] += other.p_sq[c];
        }
    }

    fn sort_key(&self) -> (f64, f64, f64, f64, f64) {
        (
            self.count,
            self.v_sum[0],
            self.v_sum[1],
            self.v_sq[0] + self.v_sq[1],
            self.p_sum.iter().sum(),
        )
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn triangle_frame() -> MeshFrame {
        MeshFrame {
            positions: array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            node_types: vec![NodeType::Wall, NodeType::Interior, NodeType::Outlet],
            velocity: array![[0.0, 0.0], [1.0, 0.5], [-1.0, 2.0]],
            pressure: array![[1.0], [2.0], [3.0]],
            edges: vec![[0, 1], [0, 2], [1, 2]],
        }
    }

    fn traj_of(frames: Vec<MeshFrame>) -> Trajectory {
        Trajectory {
            frames,
            dt: 0.1,
            geometry_tag: "test".into(),
            seed: 0,
        }
    }

    #[test]
    fn node_type_codes() {
        for code in 0..4u8 {
            assert_eq!(NodeType::from_u8(code).unwrap().code(), code);
        }
        assert!(NodeType::from_u8(4).is_none());
        assert!(NodeType::from_u8(255).is_none());
    }

    #[test]
    fn well_formed_frame_has_empty_report() {
        assert!(validate_frame(&triangle_frame()).is_empty());
    }

    #[test]
    fn self_loop_is_reported() {
        let mut f = triangle_frame();
        f.edges.push([2, 2]);
        let report = validate_frame(&f);
        assert_eq!(report, vec![Violation::SelfLoop { edge: 3 }]);
    }

    #[test]
    fn duplicate_position_is_reported() {
        let mut f = triangle_frame();
        f.positions[[2, 0]] = 1.0;
        f.positions[[2, 1]] = 0.0;
        let report = validate_frame(&f);
        assert_eq!(report.len(), 1);
        assert!(matches!(report[0], Violation::DuplicatePosition { .. }));
    }

    #[test]
    fn edge_problems_are_reported() {
        let mut f = triangle_frame();
        f.edges = vec![[1, 0], [0, 1], [0, 7]];
        let report = validate_frame(&f);
        assert!(report.contains(&Violation::EdgeNotCanonical { edge: 0 }));
        assert!(report.contains(&Violation::DuplicateEdge { edge: 1, first: 0 }));
        assert!(report.contains(&Violation::EdgeOutOfRange { edge: 2, node: 7 }));
    }

    #[test]
    fn field_length_mismatch_is_reported() {
        let mut f = triangle_frame();
        f.velocity = array![[0.0, 0.0], [1.0, 0.5]];
        let report = validate_frame(&f);
        assert!(report.iter().any(|v| matches!(
            v,
            Violation::FieldLength {
                field: "velocity",
                len: 2,
                expected: 3
            }
        )));
    }

    #[test]
    fn trajectory_validation() {
        let t = traj_of(vec![triangle_frame()]);
        assert!(t.validate().is_err());
        let mut t = traj_of(vec![triangle_frame(), triangle_frame()]);
        assert!(t.validate().is_ok());
        t.dt = 0.0;
        assert!(t.validate().is_err());
    }

    fn two_node_frame(v: [[f32; 2]; 2], p: [f32; 2]) -> MeshFrame {
        MeshFrame {
            positions: array![[0.0, 0.0], [1.0, 0.0]],
            node_types: vec![NodeType::Interior; 2],
            velocity: array![[v[0][0], v[0][1]], [v[1][0], v[1][1]]],
            pressure: array![[p[0]], [p[1]]],
            edges: vec![[0, 1]],
        }
    }

    #[test]
    fn constant_velocity_std_is_clamped() {
        let f = two_node_frame([[1.0, 0.0], [1.0, 0.0]], [1.0, 3.0]);
        let (stats, clamped) = compute_norm_stats(&[traj_of(vec![f.clone(), f])], 1e-8).unwrap();
        assert_eq!(stats.v_mean, [1.0, 0.0]);
        assert_eq!(stats.v_std, 1e-8);
        assert_eq!(clamped, vec![ClampedField::Velocity]);
    }

    #[test]
    fn pooled_velocity_and_pressure_stats() {
        let f = two_node_frame([[0.0, 0.0], [2.0, 0.0]], [1.0, 3.0]);
        let (stats, clamped) = compute_norm_stats(&[traj_of(vec![f.clone(), f])], 1e-8).unwrap();
        assert!(clamped.is_empty());
        assert_eq!(stats.v_mean, [1.0, 0.0]);
        assert!((stats.v_std - 1.0).abs() < 1e-12);
        assert_eq!(stats.p_mean, vec![2.0]);
        assert!((stats.p_std - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_split_is_an_error() {
        assert!(compute_norm_stats(&[], 1e-8).is_err());
    }

    #[test]
    fn stats_invariant_under_reordering() {
        let a = traj_of(vec![
            two_node_frame([[0.1, 0.3], [2.0, -0.7]], [1.0, 3.5]),
            two_node_frame([[0.4, 0.2], [1.0, 0.7]], [0.1, 3.0]),
        ]);
        let b = traj_of(vec![
            two_node_frame([[5.1, 0.3], [2.0, -9.7]], [11.0, 3.5]),
            two_node_frame([[0.4, 0.2], [1.3, 0.7]], [0.3, 3.0]),
        ]);
        let c = traj_of(vec![
            two_node_frame([[-3.0, 0.3], [2.0, 0.1]], [1.0, 1.5]),
            two_node_frame([[0.4, 0.25], [1.0, 0.7]], [0.1, 3.0]),
        ]);
        let (s1, _) = compute_norm_stats(&[a.clone(), b.clone(), c.clone()], 1e-8).unwrap();
        let (s2, _) = compute_norm_stats(&[c, a, b], 1e-8).unwrap();
        assert_eq!(s1, s2);
    }
}
