//! Checkpoint file: magic `MTCK`, u32 version, u32 header length, a JSON
//! header (configs, statistics, counters, tensor directory) and raw
//! little-endian f64 tensor data holding parameters and Adam moments.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Adam, TrainConfig};
use crate::error::{Error, Result};
use crate::io::{len_u32, put_u32, write_file, Reader};
use crate::mesh::NormStats;
use crate::model::{Layout, ModelConfig, ModelParameters};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of the training sampler's ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub stats: NormStats,
    pub params: ModelParameters,
    pub adam: Adam,
    pub step: u64,
    pub rng: RngState,
}

impl Checkpoint {
    /// Errors unless `expected` has the same parameter structure.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        if self.model_config.same_structure(expected) {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(format!(
                "checkpoint model config {} differs from expected {}",
                serde_json::to_string(&self.model_config)?,
                serde_json::to_string(expected)?
            )))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    dtype: String,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamHeader {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RngHeader {
    seed: String,
    word_pos: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    train_config: TrainConfig,
    norm_stats: NormStats,
    step: u64,
    rng: RngHeader,
    adam: AdamHeader,
    tensors: Vec<TensorEntry>,
}

const GROUPS: [&str; 3] = ["param", "adam_m", "adam_v"];

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Format(format!("bad rng seed {s:?}"));
    if s.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let layout = Layout::new(&ckpt.model_config)?;
    ckpt.params.check(&layout)?;
    let groups = [&ckpt.params.tensors, &ckpt.adam.m, &ckpt.adam.v];
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for (group, list) in GROUPS.iter().zip(groups) {
        if list.len() != layout.specs.len() {
            return Err(Error::Shape(format!(
                "{group}: {} tensors for {}",
                list.len(),
                layout.specs.len()
            )));
        }
        for (t, spec) in list.iter().zip(&layout.specs) {
            if t.dim() != spec.shape {
                return Err(Error::Shape(format!("{group}/{} has shape {:?}", spec.name, t.dim())));
            }
            tensors.push(TensorEntry {
                name: format!("{group}/{}", spec.name),
                shape: [spec.shape.0, spec.shape.1],
                dtype: "f64".into(),
                offset,
            });
            offset += 8 * t.len() as u64;
        }
    }
    let header = Header {
        model_config: ckpt.model_config.clone(),
        train_config: ckpt.train_config.clone(),
        norm_stats: ckpt.stats.clone(),
        step: ckpt.step,
        rng: RngHeader {
            seed: hex(&ckpt.rng.seed),
            word_pos: ckpt.rng.word_pos.to_string(),
        },
        adam: AdamHeader {
            t: ckpt.adam.t,
            beta1: ckpt.adam.beta1,
            beta2: ckpt.adam.beta2,
            eps: ckpt.adam.eps,
        },
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + offset as usize);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u32(&mut buf, len_u32(json.len(), "checkpoint header")?);
    buf.extend_from_slice(&json);
    for list in groups {
        for t in list {
            for v in t.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into(),
            found: String::from_utf8_lossy(magic).into(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)?;
    let layout = Layout::new(&header.model_config)?;
    let expected = GROUPS.len() * layout.specs.len();
    if header.tensors.len() != expected {
        return Err(Error::ConfigMismatch(format!(
            "{} tensors stored, model config needs {expected}",
            header.tensors.len()
        )));
    }
    let data = &bytes[12 + len..];
    let mut lists: Vec<Vec<Array2<f64>>> = vec![Vec::new(), Vec::new(), Vec::new()];
    for (i, entry) in header.tensors.iter().enumerate() {
        let g = i / layout.specs.len();
        let spec = &layout.specs[i % layout.specs.len()];
        let name = format!("{}/{}", GROUPS[g], spec.name);
        if entry.name != name || entry.shape != [spec.shape.0, spec.shape.1] {
            return Err(Error::ConfigMismatch(format!(
                "tensor {} {:?} does not match {name} {:?}",
                entry.name, entry.shape, spec.shape
            )));
        }
        if entry.dtype != "f64" {
            return Err(Error::Format(format!(
                "tensor {} has dtype {}",
                entry.name, entry.dtype
            )));
        }
        let count = spec.shape.0 * spec.shape.1;
        let start = entry.offset as usize;
        let end = start + 8 * count;
        if end > data.len() {
            return Err(Error::Truncated {
                what: entry.name.clone(),
            });
        }
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        lists[g].push(Array2::from_shape_vec(spec.shape, values).map_err(|e| Error::Shape(e.to_string()))?);
    }
    let total: usize = 8 * GROUPS.len() * layout.parameter_count();
    if data.len() != total {
        return Err(Error::Format(format!("{} data bytes, expected {total}", data.len())));
    }
    let v = lists.pop().expect("three groups");
    let m = lists.pop().expect("three groups");
    let params = lists.pop().expect("three groups");
    let word_pos = header
        .rng
        .word_pos
        .parse::<u128>()
        .map_err(|_| Error::Format(format!("bad rng position {:?}", header.rng.word_pos)))?;
    Ok(Checkpoint {
        model_config: header.model_config,
        train_config: header.train_config,
        stats: header.norm_stats,
        params: ModelParameters { tensors: params },
        adam: Adam {
            beta1: header.adam.beta1,
            beta2: header.adam.beta2,
            eps: header.adam.eps,
            t: header.adam.t,
            m,
            v,
        },
        step: header.step,
        rng: RngState {
            seed: unhex(&header.rng.seed)?,
            word_pos,
        },
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_file(path, &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_parameters;
    use crate::training::Trainer;

    fn sample() -> Checkpoint {
        let mc = ModelConfig::tiny();
        let tc = TrainConfig {
            grad_clip: Some(1.5),
            ..TrainConfig::default()
        };
        let stats = NormStats {
            v_mean: [0.1, -0.2],
            v_std: 0.37,
            p_mean: vec![1.0 / 3.0],
            p_std: 2.5,
        };
        let mut t = Trainer::new(&mc, &tc, stats).unwrap();
        t.adam.t = 3;
        t.adam.m[0].fill(0.25);
        t.adam.v[1].fill(1e-7);
        t.step = 3;
        t.checkpoint()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let c = sample();
        let bytes = encode_checkpoint(&c).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&c, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(load_checkpoint(&path).unwrap(), c);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Version { found: 9, .. })));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 5]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn mismatched_config_is_reported() {
        let c = sample();
        let other = ModelConfig {
            hidden: 9,
            ..ModelConfig::tiny()
        };
        assert!(matches!(c.check_config(&other), Err(Error::ConfigMismatch(_))));
        let ablated = ModelConfig {
            attention_mode: crate::model::AttentionMode::Average,
            ..ModelConfig::tiny()
        };
        assert!(c.check_config(&ablated).is_ok());

        // header claims a config whose tensors differ from the stored ones
        let mut wrong = c.clone();
        wrong.model_config = other.clone();
        wrong.params = init_parameters(&other, 0).unwrap();
        wrong.adam = Adam::new(&wrong.params.tensors);
        let good = encode_checkpoint(&wrong).unwrap();
        let json_len = u32::from_le_bytes(good[8..12].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&good[12..12 + json_len]).unwrap();
        header["model_config"] = serde_json::to_value(ModelConfig::tiny()).unwrap();
        let json = serde_json::to_vec(&header).unwrap();
        let mut forged = good[..8].to_vec();
        forged.extend_from_slice(&(json.len() as u32).to_le_bytes());
        forged.extend_from_slice(&json);
        forged.extend_from_slice(&good[12 + json_len..]);
        assert!(matches!(decode_checkpoint(&forged), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        use crate::mesh::Trajectory;
        use crate::testutil::{clusters_for, grid_frame};
        use crate::training::{Precision, TrainData};

        let frames: Vec<_> = (0..5)
            .map(|t| {
                let mut f = grid_frame(4, 4, 3);
                f.velocity.mapv_inplace(|v| v * 0.8f32.powi(t));
                f
            })
            .collect();
        let cl = vec![vec![clusters_for(&frames[0], 4, 0); 5]];
        let trajs = vec![Trajectory {
            frames,
            dt: 0.1,
            geometry_tag: "grid".into(),
            seed: 0,
        }];
        let data = TrainData {
            trajectories: &trajs,
            clusters: &cl,
        };
        let tc = TrainConfig {
            steps: 4,
            horizon: 2,
            learning_rate: 1e-2,
            precision: Precision::F32,
            ..TrainConfig::default()
        };
        let mc = ModelConfig::tiny();
        let stats = NormStats::identity(1);

        let mut full = Trainer::new(&mc, &tc, stats.clone()).unwrap();
        full.run(&data, |_, _| Ok(())).unwrap();

        let mut first = Trainer::new(&mc, &TrainConfig { steps: 2, ..tc.clone() }, stats).unwrap();
        first.run(&data, |_, _| Ok(())).unwrap();
        let mut ckpt = decode_checkpoint(&encode_checkpoint(&first.checkpoint()).unwrap()).unwrap();
        ckpt.train_config.steps = 4;
        let mut resumed = Trainer::from_checkpoint(ckpt).unwrap();
        resumed.run(&data, |_, _| Ok(())).unwrap();

        assert_eq!(
            encode_checkpoint(&resumed.checkpoint()).unwrap(),
            encode_checkpoint(&full.checkpoint()).unwrap()
        );
    }
}
