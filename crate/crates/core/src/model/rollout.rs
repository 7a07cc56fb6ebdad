use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::forward::predict;
use super::{AttentionMode, Model};
use crate::cluster::FrameClusters;
use crate::error::{Error, Result};
use crate::mesh::{FrameGeometry, MeshFrame, NormStats};
use crate::tape::Real;

/// Attention matrices of one forward step, indexed by block then head.
/// Each matrix is K×K and row-stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub mode: AttentionMode,
    pub blocks: Vec<Vec<Array2<f64>>>,
}

impl AttentionRecord {
    pub fn num_clusters(&self) -> usize {
        self.blocks.first().and_then(|b| b.first()).map_or(0, |a| a.nrows())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpBlock {
    /// One K×K matrix per head, row-major.
    pub heads: Vec<Vec<f64>>,
}

/// JSON form of an attention record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub step: usize,
    pub mode: String,
    pub blocks: Vec<DumpBlock>,
    pub barycenters: Vec<[f64; 2]>,
}

pub fn attention_dump(record: &AttentionRecord, step: usize, barycenters: &[[f64; 2]]) -> AttentionDump {
    AttentionDump {
        step,
        mode: record.mode.name().to_string(),
        blocks: record
            .blocks
            .iter()
            .map(|heads| DumpBlock {
                heads: heads.iter().map(|a| a.iter().copied().collect()).collect(),
            })
            .collect(),
        barycenters: barycenters.to_vec(),
    }
}

/// For every target position, the index of the nearest source position
/// (lowest index on ties).
pub fn nearest_node_map(source: &Array2<f32>, target: &Array2<f32>) -> Vec<usize> {
    if source == target {
        return (0..source.nrows()).collect();
    }
    target
        .rows()
        .into_iter()
        .map(|t| {
            let (tx, ty) = (t[0] as f64, t[1] as f64);
            let mut best = (f64::INFINITY, 0);
            for (j, s) in source.rows().into_iter().enumerate() {
                let d = (s[0] as f64 - tx).powi(2) + (s[1] as f64 - ty).powi(2);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// Carries the fields of `frame` onto `target` by nearest-node lookup.
pub fn transfer_fields(frame: &MeshFrame, target: &FrameGeometry) -> MeshFrame {
    let map = nearest_node_map(&frame.positions, &target.positions);
    let velocity = frame.velocity.select(ndarray::Axis(0), &map);
    let pressure = frame.pressure.select(ndarray::Axis(0), &map);
    target.clone().with_fields(velocity, pressure)
}

/// One predicted frame and the attention that produced it.
#[derive(Debug, Clone)]
pub struct RolloutFrame {
    pub frame: MeshFrame,
    pub attention: Option<AttentionRecord>,
}

/// Autoregressive forecast of `h` frames. Prediction `k` is made on the
/// geometry of the previous frame and transferred onto `future[k]`;
/// `future_clusters[k]` clusters `future[k]` and is needed for `k < h−1`.
#[allow(clippy::too_many_arguments)]
pub fn rollout<F: Real>(
    model: &Model,
    initial: &MeshFrame,
    initial_clusters: &FrameClusters,
    future: &[FrameGeometry],
    future_clusters: &[FrameClusters],
    stats: &NormStats,
    h: usize,
    order_seed: u64,
) -> Result<Vec<RolloutFrame>> {
    if h == 0 {
        return Err(Error::InvalidArgument("rollout horizon must be at least 1".into()));
    }
    if future.len() < h {
        return Err(Error::InvalidArgument(format!(
            "{} future geometries for a horizon of {h}",
            future.len()
        )));
    }
    if future_clusters.len() + 1 < h {
        return Err(Error::InvalidArgument(format!(
            "{} clustered future geometries for a horizon of {h}",
            future_clusters.len()
        )));
    }
    let params = model.params.cast::<F>();
    let mut out = Vec::with_capacity(h);
    let mut current = initial.clone();
    let mut clusters = initial_clusters;
    for k in 0..h {
        let step = predict(model, &params, &current, clusters, stats, order_seed)?;
        let next = transfer_fields(&step.frame, &future[k]);
        out.push(RolloutFrame {
            frame: next.clone(),
            attention: step.attention,
        });
        current = next;
        if k + 1 < h {
            clusters = &future_clusters[k];
        }
    }
    Ok(out)
}
