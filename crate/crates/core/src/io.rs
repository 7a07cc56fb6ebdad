//! On-disk dataset layout.
//!
//! A dataset root holds `manifest.json` and one directory per trajectory
//! id. Each trajectory directory holds `trajectory.bin` (the binary frame
//! stream below), the `meta.json` sidecar, and any cluster caches.
//!
//! Binary layout, little-endian: magic `EGL1`, u32 version, u32
//! num_steps, u32 pressure_channels, then per step u32 N, u32 E,
//! f32 positions[N*2], u8 node_types[N], f32 velocity[N*2],
//! f32 pressure[N*Pc], u32 edges[E*2].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{MeshFrame, NodeType, Trajectory};

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"EGL1";
pub const TRAJECTORY_VERSION: u32 = 1;
pub const TRAJECTORY_FILE: &str = "trajectory.bin";
pub const META_FILE: &str = "meta.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Sidecar metadata of one trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub dt: f64,
    pub geometry_tag: String,
    pub seed: u64,
    /// Generation settings echoed for provenance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

/// Dataset-root manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub split: Split,
    pub pressure_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl Manifest {
    pub fn ids(&self, split: SplitName) -> &[String] {
        match split {
            SplitName::Train => &self.split.train,
            SplitName::Valid => &self.split.valid,
            SplitName::Test => &self.split.test,
        }
    }
}

/// Serializes a trajectory to the binary frame format.
pub fn encode_trajectory(traj: &Trajectory) -> Result<Vec<u8>> {
    traj.validate()?;
    let pc = traj.pressure_channels();
    let mut buf = Vec::new();
    buf.extend_from_slice(TRAJECTORY_MAGIC);
    put_u32(&mut buf, TRAJECTORY_VERSION);
    put_u32(&mut buf, len_u32(traj.frames.len(), "num_steps")?);
    put_u32(&mut buf, len_u32(pc, "pressure_channels")?);
    for frame in &traj.frames {
        let n = frame.num_nodes();
        put_u32(&mut buf, len_u32(n, "node count")?);
        put_u32(&mut buf, len_u32(frame.edges.len(), "edge count")?);
        for x in frame.positions.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend(frame.node_types.iter().map(|t| t.code()));
        for x in frame.velocity.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for x in frame.pressure.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for e in &frame.edges {
            put_u32(&mut buf, e[0]);
            put_u32(&mut buf, e[1]);
        }
    }
    Ok(buf)
}

/// Parses the binary frame format. `dt`, tag and seed come from the
/// sidecar and are filled from `meta`.
pub fn decode_trajectory(bytes: &[u8], meta: &TrajectoryMeta) -> Result<Trajectory> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "header")?;
    if magic != TRAJECTORY_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(TRAJECTORY_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u32("header")?;
    if version != TRAJECTORY_VERSION {
        return Err(Error::Version {
            expected: TRAJECTORY_VERSION,
            found: version,
        });
    }
    let steps = r.u32("header")? as usize;
    let pc = r.u32("header")? as usize;
    let mut frames = Vec::with_capacity(steps);
    for t in 0..steps {
        let what = format!("frame {t}");
        let n = r.u32(&what)? as usize;
        let e = r.u32(&what)? as usize;
        let positions = r.f32_array(n, 2, &what)?;
        let codes = r.take(n, &what)?;
        let node_types = codes
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                NodeType::from_u8(c)
                    .ok_or_else(|| Error::Format(format!("frame {t}: node {i} has invalid type code {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let velocity = r.f32_array(n, 2, &what)?;
        let pressure = r.f32_array(n, pc, &what)?;
        let mut edges = Vec::with_capacity(e);
        for _ in 0..e {
            edges.push([r.u32(&what)?, r.u32(&what)?]);
        }
        frames.push(MeshFrame {
            positions,
            node_types,
            velocity,
            pressure,
            edges,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last frame",
            r.remaining()
        )));
    }
    Ok(Trajectory {
        frames,
        dt: meta.dt,
        geometry_tag: meta.geometry_tag.clone(),
        seed: meta.seed,
    })
}

/// Writes `traj` to `path` and its `meta.json` sidecar next to it.
pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    save_trajectory_with(traj, path, None)
}

pub fn save_trajectory_with(traj: &Trajectory, path: &Path, generator: Option<serde_json::Value>) -> Result<()> {
    let bytes = encode_trajectory(traj)?;
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_file(path, &bytes)?;
    let meta = TrajectoryMeta {
        dt: traj.dt,
        geometry_tag: traj.geometry_tag.clone(),
        seed: traj.seed,
        generator,
    };
    write_json(&sidecar_path(path), &meta)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let meta: TrajectoryMeta = read_json(&sidecar_path(path))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_trajectory(&bytes, &meta)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_file_name(META_FILE)
}

pub fn trajectory_path(root: &Path, id: &str) -> PathBuf {
    root.join(id).join(TRAJECTORY_FILE)
}

pub fn load_manifest(root: &Path) -> Result<Manifest> {
    read_json(&root.join(MANIFEST_FILE))
}

pub fn save_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    write_json(&root.join(MANIFEST_FILE), manifest)
}

/// Loads every trajectory of a split, in manifest order.
pub fn load_split(root: &Path, split: SplitName) -> Result<Vec<(String, Trajectory)>> {
    let manifest = load_manifest(root)?;
    manifest
        .ids(split)
        .iter()
        .map(|id| Ok((id.clone(), load_trajectory(&trajectory_path(root, id))?)))
        .collect()
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} {n} exceeds u32")))
}

/// Little-endian cursor that reports truncation with context.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated { what: what.into() });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_array(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f32>> {
        let count = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("{what}: array size overflow")))?;
        let b = self.take(count, what)?;
        let data: Vec<f32> = b
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
    }
}
