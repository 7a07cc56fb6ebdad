//! Synthetic flow datasets with exact ground truth.
//!
//! Taylor–Green and free vortex systems live on a static unit-square mesh.
//! The rotor wake family is a synthetic analog of a drone flying through a
//! channel: vortex pairs are shed under both rotors every frame and the
//! mesh is re-sampled around the drone, so node sets change over time.

pub mod drone;
pub mod flows;
pub mod sampling;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::delaunay::delaunay_triangulate;
use crate::error::{Error, Result};
use crate::io::{save_manifest, save_trajectory_with, trajectory_path, Manifest, Split, TRAJECTORY_VERSION};
use crate::mesh::{FrameGeometry, MeshFrame, NodeType, Trajectory};
use crate::polygon::{dist, Polygon};

pub use drone::{drone_step, track_trajectory, DroneParams, DroneState, TrackResult, TrackingConfig};
pub use flows::{taylor_green, vortex_field, vortex_system_step, Vortex};
pub use sampling::{poisson_disk_downsample, sample_domain_mesh, sample_domain_mesh_with_density, SampledMesh};

/// Which family a dataset draws its trajectories from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    TaylorGreen,
    Vortex,
    RotorWake,
    /// Alternates Taylor–Green (even index) and vortex (odd index).
    Mixed,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::TaylorGreen => "taylor-green",
            FamilyKind::Vortex => "vortex",
            FamilyKind::RotorWake => "rotor-wake",
            FamilyKind::Mixed => "mixed",
        }
    }

    fn for_index(self, index: usize) -> FamilyKind {
        match self {
            FamilyKind::Mixed if index.is_multiple_of(2) => FamilyKind::TaylorGreen,
            FamilyKind::Mixed => FamilyKind::Vortex,
            k => k,
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            FamilyKind::TaylorGreen,
            FamilyKind::Vortex,
            FamilyKind::RotorWake,
            FamilyKind::Mixed,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown flow family '{s}'")))
    }
}

/// Parameters drawn for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FlowFamily {
    TaylorGreen {
        u: f64,
        nu: f64,
        phase: [f64; 2],
    },
    VortexSystem {
        vortices: Vec<Vortex>,
    },
    RotorWake {
        start: [f64; 2],
        end: [f64; 2],
        freestream: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub family: FamilyKind,
    pub n_traj: usize,
    /// Frames per trajectory.
    pub steps: usize,
    /// Target node count of the base mesh.
    pub nodes: usize,
    pub dt: f64,
    pub seed: u64,
    /// Taylor–Green viscosity, shared by all trajectories.
    pub nu: f64,
    pub rotor: RotorWakeConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            family: FamilyKind::TaylorGreen,
            n_traj: 10,
            steps: 60,
            nodes: 300,
            dt: 0.1,
            seed: 0,
            nu: 0.02,
            rotor: RotorWakeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RotorWakeConfig {
    /// Half the rotor separation (m).
    pub arm: f64,
    /// Base nodes closer than this to the drone are replaced each frame.
    pub remesh_radius: f64,
    /// Circulation of each shed vortex at hover rotor speed.
    pub shed_gamma: f64,
    pub shed_core: f64,
    /// Per-frame circulation decay factor of shed vortices.
    pub decay: f64,
    pub freestream: [f64; 2],
    /// Controller steps per frame.
    pub substeps: usize,
    pub drone: DroneParams,
    pub tracking: TrackingConfig,
}

impl Default for RotorWakeConfig {
    fn default() -> Self {
        RotorWakeConfig {
            arm: 0.1,
            remesh_radius: 0.3,
            shed_gamma: 0.05,
            shed_core: 0.04,
            decay: 0.95,
            freestream: [0.1, 0.2],
            substeps: 4,
            drone: DroneParams::default(),
            tracking: TrackingConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.n_traj == 0 || self.steps == 0 {
            return bad("n_traj and steps must be positive");
        }
        if self.nodes < 3 {
            return bad("nodes must be at least 3");
        }
        if !(self.dt > 0.0) || !(self.nu >= 0.0) {
            return bad("need dt > 0 and nu >= 0");
        }
        let r = &self.rotor;
        if r.substeps == 0 || !(r.shed_core > 0.0) || !(r.remesh_radius > 2.0 * r.arm) {
            return bad("rotor wake needs substeps >= 1, shed_core > 0 and remesh_radius > 2 arm");
        }
        Ok(())
    }
}

const VORTEX_SUBSTEPS: usize = 8;
const WAKE_DOMAIN: ([f64; 2], [f64; 2]) = ([0.0, 0.0], [4.0, 2.0]);

/// Per-trajectory RNG: stream `index` of the dataset seed.
fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates trajectory `index` of the dataset described by `config`.
pub fn generate_trajectory(config: &GenConfig, index: usize) -> Result<(Trajectory, FlowFamily)> {
    config.validate()?;
    let mut rng = trajectory_rng(config.seed, index);
    let mesh_seed: u64 = rng.gen();
    match config.family.for_index(index) {
        FamilyKind::TaylorGreen => {
            let family = FlowFamily::TaylorGreen {
                u: rng.gen_range(0.5..1.5),
                nu: config.nu,
                phase: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
            };
            let mesh = sample_domain_mesh(&Polygon::unit_square(), config.nodes, mesh_seed)?;
            let frames = static_frames(&mesh.geometry, config, &family);
            Ok((
                trajectory(frames, config, "taylor-green/unit-square", mesh_seed),
                family,
            ))
        }
        FamilyKind::Vortex => {
            let j = rng.gen_range(2..=5);
            let vortices = (0..j)
                .map(|_| Vortex {
                    center: [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)],
                    gamma: rng.gen_range(0.05..0.2) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                    core: rng.gen_range(0.05..0.1),
                })
                .collect();
            let family = FlowFamily::VortexSystem { vortices };
            let mesh = sample_domain_mesh(&Polygon::unit_square(), config.nodes, mesh_seed)?;
            let frames = static_frames(&mesh.geometry, config, &family);
            Ok((trajectory(frames, config, "vortex/unit-square", mesh_seed), family))
        }
        FamilyKind::RotorWake => {
            let family = FlowFamily::RotorWake {
                start: [rng.gen_range(0.8..1.2), rng.gen_range(0.8..1.2)],
                end: [rng.gen_range(2.8..3.2), rng.gen_range(0.8..1.2)],
                freestream: config.rotor.freestream[0]
                    + rng.gen::<f64>() * (config.rotor.freestream[1] - config.rotor.freestream[0]),
            };
            let frames = rotor_wake_frames(config, &family, mesh_seed)?;
            Ok((trajectory(frames, config, "rotor-wake/channel", mesh_seed), family))
        }
        FamilyKind::Mixed => unreachable!("mixed resolves per index"),
    }
}

fn trajectory(frames: Vec<MeshFrame>, config: &GenConfig, tag: &str, seed: u64) -> Trajectory {
    Trajectory {
        frames,
        dt: config.dt,
        geometry_tag: tag.into(),
        seed,
    }
}

fn fields(points: &[[f64; 2]], f: impl Fn([f64; 2]) -> ([f64; 2], f64)) -> (Array2<f32>, Array2<f32>) {
    let mut v = Array2::zeros((points.len(), 2));
    let mut p = Array2::zeros((points.len(), 1));
    for (i, &x) in points.iter().enumerate() {
        let (vel, pr) = f(x);
        v[[i, 0]] = vel[0] as f32;
        v[[i, 1]] = vel[1] as f32;
        p[[i, 0]] = pr as f32;
    }
    (v, p)
}

/// Frames of an analytic family on a fixed mesh.
fn static_frames(geometry: &FrameGeometry, config: &GenConfig, family: &FlowFamily) -> Vec<MeshFrame> {
    let pts = geometry.positions_f64();
    let mut vortices = match family {
        FlowFamily::VortexSystem { vortices } => vortices.clone(),
        _ => Vec::new(),
    };
    (0..config.steps)
        .map(|k| {
            let (v, p) = match family {
                FlowFamily::TaylorGreen { u, nu, phase } => fields(&pts, |x| {
                    taylor_green([x[0] + phase[0], x[1] + phase[1]], k as f64 * config.dt, *u, *nu)
                }),
                FlowFamily::VortexSystem { .. } => {
                    let out = fields(&pts, |x| vortex_field(x, &vortices));
                    for _ in 0..VORTEX_SUBSTEPS {
                        vortices = vortex_system_step(&vortices, config.dt / VORTEX_SUBSTEPS as f64);
                    }
                    out
                }
                FlowFamily::RotorWake { .. } => unreachable!("rotor wake has a dynamic mesh"),
            };
            geometry.clone().with_fields(v, p)
        })
        .collect()
}

/// Smooth start-to-end path: cosine ease over the trajectory duration.
fn wake_reference(start: [f64; 2], end: [f64; 2], n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let s = 0.5 - 0.5 * (std::f64::consts::PI * k as f64 / (n - 1).max(1) as f64).cos();
            [start[0] + s * (end[0] - start[0]), start[1] + s * (end[1] - start[1])]
        })
        .collect()
}

fn rotor_positions(s: &DroneState, arm: f64) -> [[f64; 2]; 2] {
    let (c, n) = (s.theta.cos(), s.theta.sin());
    [[s.x - arm * c, s.y - arm * n], [s.x + arm * c, s.y + arm * n]]
}

/// Local nodes around the drone: the two rotor emitters plus two rings.
fn local_nodes(s: &DroneState, cfg: &RotorWakeConfig) -> Vec<([f64; 2], NodeType)> {
    let mut out: Vec<([f64; 2], NodeType)> = rotor_positions(s, cfg.arm)
        .into_iter()
        .map(|p| (p, NodeType::Inlet))
        .collect();
    let rings = [(0.45 * cfg.remesh_radius, 8), (0.75 * cfg.remesh_radius, 14)];
    for (r, m) in rings {
        for j in 0..m {
            let a = s.theta + (j as f64 + 0.5) * std::f64::consts::TAU / m as f64;
            out.push(([s.x + r * a.cos(), s.y + r * a.sin()], NodeType::Interior));
        }
    }
    out
}

fn rotor_wake_frames(config: &GenConfig, family: &FlowFamily, mesh_seed: u64) -> Result<Vec<MeshFrame>> {
    let FlowFamily::RotorWake { start, end, freestream } = *family else {
        unreachable!("called for rotor wake only");
    };
    let cfg = &config.rotor;
    let domain = Polygon::rectangle(
        WAKE_DOMAIN.0,
        WAKE_DOMAIN.1,
        [NodeType::Wall, NodeType::Outlet, NodeType::Wall, NodeType::Inlet],
    )?;
    let base = sample_domain_mesh(&domain, config.nodes, mesh_seed)?.geometry;
    let base_pts = base.positions_f64();

    let sub = cfg.substeps;
    let tracking = TrackingConfig {
        dt: config.dt / sub as f64,
        ..cfg.tracking.clone()
    };
    let reference = wake_reference(start, end, (config.steps - 1) * sub + 1);
    let trace = track_trajectory(
        &reference,
        DroneState::at_rest(start[0], start[1]),
        &cfg.drone,
        &tracking,
    )?;
    let hover = cfg.drone.hover_speed();
    let wind = [freestream, 0.0];

    let mut shed: Vec<Vortex> = Vec::new();
    let mut frames = Vec::with_capacity(config.steps);
    for k in 0..config.steps {
        let state = trace.states[k * sub];
        let rotors = trace.commands.get(k * sub).copied().unwrap_or(state.rotors);

        // base nodes far from the drone keep their index order and position
        let center = [state.x, state.y];
        let mut pts = Vec::new();
        let mut types = Vec::new();
        for (i, &p) in base_pts.iter().enumerate() {
            if base.node_types[i] != NodeType::Interior || dist(p, center) >= cfg.remesh_radius {
                pts.push(p);
                types.push(base.node_types[i]);
            }
        }
        for (p, t) in local_nodes(&state, cfg) {
            pts.push(p);
            types.push(t);
        }
        let tri = delaunay_triangulate(&pts, &domain)?;
        let field = |x: [f64; 2]| {
            let (v, _) = vortex_field(x, &shed);
            let v = [v[0] + wind[0], v[1] + wind[1]];
            (v, -0.5 * (v[0] * v[0] + v[1] * v[1]))
        };
        let (v, p) = fields(&pts, field);
        frames.push(MeshFrame {
            positions: Array2::from_shape_fn((pts.len(), 2), |(i, c)| pts[i][c] as f32),
            node_types: types,
            velocity: v,
            pressure: p,
            edges: tri.edges,
        });

        // shed a downward-moving pair under each rotor, then advance the wake
        let (c, n) = (state.theta.cos(), state.theta.sin());
        let half = 0.3 * cfg.arm;
        for (r, w) in rotor_positions(&state, cfg.arm).into_iter().zip(rotors) {
            let gamma = cfg.shed_gamma * (w / hover).powi(2);
            let below = [r[0] + 0.5 * half * n, r[1] - 0.5 * half * c];
            for side in [-1.0, 1.0] {
                shed.push(Vortex {
                    center: [below[0] + side * half * c, below[1] + side * half * n],
                    gamma: side * gamma,
                    core: cfg.shed_core,
                });
            }
        }
        for _ in 0..VORTEX_SUBSTEPS {
            shed = vortex_system_step(&shed, config.dt / VORTEX_SUBSTEPS as f64);
        }
        shed.retain_mut(|v| {
            v.center[0] += wind[0] * config.dt;
            v.center[1] += wind[1] * config.dt;
            v.gamma *= cfg.decay;
            v.gamma.abs() > 1e-3 * cfg.shed_gamma && domain.contains(v.center)
        });
    }
    Ok(frames)
}

/// Trajectory ids in split order: the last tenth is test, the tenth
/// before it validation, the rest training.
pub fn split_ids(n_traj: usize) -> Split {
    let ids: Vec<String> = (0..n_traj).map(trajectory_id).collect();
    let n_test = n_traj / 10;
    let n_train = n_traj - 2 * n_test;
    Split {
        train: ids[..n_train].to_vec(),
        valid: ids[n_train..n_train + n_test].to_vec(),
        test: ids[n_train + n_test..].to_vec(),
    }
}

pub fn trajectory_id(index: usize) -> String {
    format!("traj_{index:04}")
}

/// Writes every trajectory plus the manifest under `out_dir`. The
/// generator config and the drawn family parameters go into each
/// trajectory's metadata.
pub fn generate_dataset(config: &GenConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    for index in 0..config.n_traj {
        let (traj, family) = generate_trajectory(config, index)?;
        traj.validate()?;
        let echo = serde_json::json!({
            "config": config,
            "index": index,
            "parameters": family,
            "note": note(config.family.for_index(index)),
        });
        save_trajectory_with(&traj, &trajectory_path(out_dir, &trajectory_id(index)), Some(echo))?;
        log::debug!("generated {} ({} frames)", trajectory_id(index), traj.len());
    }
    let manifest = Manifest {
        version: TRAJECTORY_VERSION,
        split: split_ids(config.n_traj),
        pressure_channels: 1,
    };
    save_manifest(out_dir, &manifest)?;
    Ok(manifest)
}

fn note(kind: FamilyKind) -> &'static str {
    match kind {
        FamilyKind::TaylorGreen => "analytic Taylor-Green vortex with exact pressure",
        FamilyKind::Vortex => "Lamb-Oseen vortices under point-vortex dynamics; pressure is the synthetic -|v|^2/2",
        _ => "synthetic rotor wake: shed vortex pairs plus uniform inflow, not a Navier-Stokes solution; pressure is the synthetic -|v|^2/2",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{load_manifest, load_trajectory};
    use std::fs;

    fn small(family: FamilyKind) -> GenConfig {
        GenConfig {
            family,
            n_traj: 2,
            steps: 10,
            nodes: 50,
            ..GenConfig::default()
        }
    }

    fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((
                        p.strip_prefix(dir).unwrap().display().to_string(),
                        fs::read(&p).unwrap(),
                    ));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn taylor_green_dataset_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(&small(FamilyKind::TaylorGreen), dir.path()).unwrap();
        assert_eq!(manifest, load_manifest(dir.path()).unwrap());
        assert_eq!(manifest.split.train.len(), 2);
        for id in &manifest.split.train {
            let t = load_trajectory(&trajectory_path(dir.path(), id)).unwrap();
            assert_eq!(t.len(), 10);
            for f in &t.frames {
                assert!(f.validate().is_empty());
                assert!(f.node_types.iter().any(|t| t.is_boundary()));
            }
            // fields match the closed form at every node
            let g = serde_json::from_str::<serde_json::Value>(
                &fs::read_to_string(trajectory_path(dir.path(), id).with_file_name("meta.json")).unwrap(),
            )
            .unwrap();
            let fam: FlowFamily = serde_json::from_value(g["generator"]["parameters"].clone()).unwrap();
            let FlowFamily::TaylorGreen { u, nu, phase } = fam else {
                panic!()
            };
            let f = &t.frames[7];
            for i in 0..f.num_nodes() {
                let x = f.position(i);
                let (v, p) = taylor_green([x[0] + phase[0], x[1] + phase[1]], 0.7, u, nu);
                assert!((f.velocity[[i, 0]] as f64 - v[0]).abs() < 1e-6);
                assert!((f.pressure[[i, 0]] as f64 - p).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        for family in [FamilyKind::Mixed, FamilyKind::RotorWake] {
            let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
            generate_dataset(&small(family), a.path()).unwrap();
            generate_dataset(&small(family), b.path()).unwrap();
            assert_eq!(tree(a.path()), tree(b.path()));
            let c = tempfile::tempdir().unwrap();
            generate_dataset(
                &GenConfig {
                    seed: 1,
                    ..small(family)
                },
                c.path(),
            )
            .unwrap();
            assert_ne!(tree(a.path()), tree(c.path()));
        }
    }

    #[test]
    fn splits_are_disjoint_tenths() {
        let s = split_ids(50);
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (40, 5, 5));
        assert_eq!(s.test.last().unwrap(), "traj_0049");
        let s = split_ids(3);
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (3, 0, 0));
    }

    #[test]
    fn mixed_alternates_families() {
        let cfg = GenConfig {
            family: FamilyKind::Mixed,
            ..small(FamilyKind::Mixed)
        };
        let (a, fa) = generate_trajectory(&cfg, 0).unwrap();
        let (b, fb) = generate_trajectory(&cfg, 1).unwrap();
        assert!(matches!(fa, FlowFamily::TaylorGreen { .. }));
        assert!(matches!(fb, FlowFamily::VortexSystem { .. }));
        assert_eq!(a.geometry_tag, "taylor-green/unit-square");
        assert_eq!(b.geometry_tag, "vortex/unit-square");
        assert!("mixed".parse::<FamilyKind>().unwrap() == FamilyKind::Mixed);
        assert!("navier-stokes".parse::<FamilyKind>().is_err());
    }

    #[test]
    fn vortex_frames_follow_the_advected_vortices() {
        let cfg = small(FamilyKind::Vortex);
        let (t, fam) = generate_trajectory(&cfg, 0).unwrap();
        let FlowFamily::VortexSystem { mut vortices } = fam else {
            panic!()
        };
        for _ in 0..3 * VORTEX_SUBSTEPS {
            vortices = vortex_system_step(&vortices, cfg.dt / VORTEX_SUBSTEPS as f64);
        }
        let f = &t.frames[3];
        for i in 0..f.num_nodes() {
            let (v, p) = vortex_field(f.position(i), &vortices);
            assert!((f.velocity[[i, 1]] as f64 - v[1]).abs() < 1e-6);
            assert!((f.pressure[[i, 0]] as f64 - p).abs() < 1e-6);
        }
    }

    #[test]
    fn rotor_wake_mesh_moves_near_the_drone_only() {
        let cfg = GenConfig {
            family: FamilyKind::RotorWake,
            steps: 20,
            nodes: 300,
            ..GenConfig::default()
        };
        let (t, _) = generate_trajectory(&cfg, 0).unwrap();
        t.validate().unwrap();
        let key = |f: &MeshFrame| -> std::collections::HashSet<[u32; 2]> {
            (0..f.num_nodes())
                .map(|i| [f.positions[[i, 0]].to_bits(), f.positions[[i, 1]].to_bits()])
                .collect()
        };
        let (a, b) = (&t.frames[0], &t.frames[19]);
        let (ka, kb) = (key(a), key(b));
        assert!(ka != kb, "mesh must change near the drone");
        // nodes away from the whole flight corridor are shared verbatim
        let mut shared = 0;
        for i in 0..a.num_nodes() {
            let p = a.position(i);
            let corridor = p[0] > 0.4 && p[0] < 3.6 && p[1] > 0.4 && p[1] < 1.6;
            if !corridor {
                assert!(kb.contains(&[a.positions[[i, 0]].to_bits(), a.positions[[i, 1]].to_bits()]));
                shared += 1;
            }
        }
        assert!(shared > 50, "only {shared} nodes outside the corridor");
        // emitter nodes sit under the drone and move with it
        let emit = |f: &MeshFrame| -> Vec<[f64; 2]> {
            (0..f.num_nodes())
                .filter(|&i| f.node_types[i] == NodeType::Inlet && f.position(i)[0] > 0.01)
                .map(|i| f.position(i))
                .collect()
        };
        assert_eq!(emit(a).len(), 2);
        assert!(emit(b)[0][0] > emit(a)[0][0] + 1.0);
    }

    #[test]
    fn generated_meshes_respect_the_disk_radius() {
        let cfg = small(FamilyKind::TaylorGreen);
        let (t, _) = generate_trajectory(&cfg, 1).unwrap();
        let f = &t.frames[0];
        let mut rng = trajectory_rng(cfg.seed, 1);
        let mesh = sample_domain_mesh(&Polygon::unit_square(), cfg.nodes, rng.gen()).unwrap();
        assert_eq!(mesh.geometry.positions, f.positions);
        let interior: Vec<[f64; 2]> = (0..f.num_nodes())
            .filter(|&i| f.node_types[i] == NodeType::Interior)
            .map(|i| f.position(i))
            .collect();
        for (a, p) in interior.iter().enumerate() {
            for q in &interior[a + 1..] {
                assert!(dist(*p, *q) >= mesh.radius * (1.0 - 1e-6));
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            GenConfig {
                n_traj: 0,
                ..GenConfig::default()
            },
            GenConfig {
                nodes: 2,
                ..GenConfig::default()
            },
            GenConfig {
                dt: 0.0,
                ..GenConfig::default()
            },
            GenConfig {
                nu: -1.0,
                ..GenConfig::default()
            },
        ] {
            assert!(matches!(generate_trajectory(&cfg, 0), Err(Error::InvalidArgument(_))));
        }
    }
}
