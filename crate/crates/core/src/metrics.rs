//! Forecast metrics, the persistence baseline and attention statistics.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::{FrameGeometry, MeshFrame, NormStats};
use crate::model::{transfer_fields, AttentionRecord, ModelConfig};

/// Tolerance on the cumulative attention mass when counting entries.
const K_NUMBER_SLACK: f64 = 1e-12;

/// RMS error over nodes and components of one field pair.
fn rms(a: ndarray::ArrayView2<f32>, b: ndarray::ArrayView2<f32>) -> f64 {
    let n = a.len().max(1) as f64;
    let s: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    (s / n).sqrt()
}

/// Unnormalized velocity and pressure RMS errors of one step.
pub fn step_rmse(predicted: &MeshFrame, truth: &MeshFrame) -> Result<[f64; 2]> {
    if predicted.velocity.dim() != truth.velocity.dim() || predicted.pressure.dim() != truth.pressure.dim() {
        return Err(Error::Shape(format!(
            "prediction has {} nodes × {} pressure channels, truth {} × {}",
            predicted.num_nodes(),
            predicted.pressure_channels(),
            truth.num_nodes(),
            truth.pressure_channels()
        )));
    }
    Ok([
        rms(predicted.velocity.view(), truth.velocity.view()),
        rms(predicted.pressure.view(), truth.pressure.view()),
    ])
}

fn check_horizons(horizons: &[usize], available: usize) -> Result<()> {
    if horizons.is_empty() {
        return Err(Error::InvalidArgument("no horizons requested".into()));
    }
    if horizons[0] == 0 || horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "horizons {horizons:?} must be positive and strictly increasing"
        )));
    }
    let max = *horizons.last().expect("non-empty");
    if max > available {
        return Err(Error::InvalidArgument(format!(
            "horizon {max} exceeds the {available} available steps"
        )));
    }
    Ok(())
}

/// Per-step `[v, p]` RMS errors; `predicted[t]` forecasts `truth[t]`.
fn step_errors(predicted: &[MeshFrame], truth: &[MeshFrame]) -> Result<Vec<[f64; 2]>> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predicted frames for {} ground-truth frames",
            predicted.len(),
            truth.len()
        )));
    }
    predicted.iter().zip(truth).map(|(p, t)| step_rmse(p, t)).collect()
}

/// Mean of the first `h` entries of each horizon.
fn horizon_means(per_step: &[f64], horizons: &[usize]) -> Vec<f64> {
    horizons
        .iter()
        .map(|&h| per_step[..h].iter().sum::<f64>() / h as f64)
        .collect()
}

/// Normalized RMSE `‖v−v̂‖/ṽ + ‖p−p̂‖/p̃` (RMS over nodes and components)
/// averaged over steps `1..=H` for each requested horizon.
pub fn n_rmse(predicted: &[MeshFrame], truth: &[MeshFrame], stats: &NormStats, horizons: &[usize]) -> Result<Vec<f64>> {
    let errs = step_errors(predicted, truth)?;
    check_horizons(horizons, errs.len())?;
    let per_step: Vec<f64> = errs.iter().map(|e| e[0] / stats.v_std + e[1] / stats.p_std).collect();
    Ok(horizon_means(&per_step, horizons))
}

/// Unnormalized `[velocity, pressure]` RMSE averaged over steps `1..=H`.
pub fn rmse_fields(predicted: &[MeshFrame], truth: &[MeshFrame], horizons: &[usize]) -> Result<Vec<[f64; 2]>> {
    let errs = step_errors(predicted, truth)?;
    check_horizons(horizons, errs.len())?;
    let v: Vec<f64> = errs.iter().map(|e| e[0]).collect();
    let p: Vec<f64> = errs.iter().map(|e| e[1]).collect();
    Ok(horizon_means(&v, horizons)
        .into_iter()
        .zip(horizon_means(&p, horizons))
        .map(|(a, b)| [a, b])
        .collect())
}

/// Minimal number of largest entries whose sum reaches `threshold`.
pub fn k_number(row: &[f64], threshold: f64) -> Result<usize> {
    if row.is_empty() {
        return Err(Error::InvalidArgument("empty attention row".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1]")));
    }
    let total: f64 = row.iter().sum();
    if row.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "attention row is not a probability vector (sum {total})"
        )));
    }
    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    for (i, w) in sorted.iter().enumerate() {
        acc += w;
        if acc >= threshold - K_NUMBER_SLACK {
            return Ok(i + 1);
        }
    }
    Ok(row.len())
}

/// Repeats the fields of `frame` over `future`, transferring them by
/// nearest node whenever the geometry changes.
pub fn persistence_forecast(frame: &MeshFrame, future: &[FrameGeometry], h: usize) -> Result<Vec<MeshFrame>> {
    if future.len() < h {
        return Err(Error::InvalidArgument(format!(
            "{} future geometries for a horizon of {h}",
            future.len()
        )));
    }
    let mut out: Vec<MeshFrame> = Vec::with_capacity(h);
    for g in &future[..h] {
        let prev = out.last().unwrap_or(frame);
        let next = if prev.positions == g.positions {
            MeshFrame {
                edges: g.edges.clone(),
                node_types: g.node_types.clone(),
                ..prev.clone()
            }
        } else {
            transfer_fields(prev, g)
        };
        out.push(next);
    }
    Ok(out)
}

/// k-numbers of every attention row, indexed by block, head, cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub mode: String,
    pub threshold: f64,
    pub k_numbers: Vec<Vec<Vec<usize>>>,
}

pub fn attention_summary(record: &AttentionRecord, threshold: f64) -> Result<AttentionSummary> {
    let k_numbers = record
        .blocks
        .iter()
        .map(|heads| {
            heads
                .iter()
                .map(|a| {
                    a.rows()
                        .into_iter()
                        .map(|r| k_number(r.as_slice().expect("standard layout"), threshold))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttentionSummary {
        mode: record.mode.name().to_string(),
        threshold,
        k_numbers,
    })
}

/// Forecast quality at several horizons, averaged over trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub horizons: Vec<usize>,
    pub n_rmse: Vec<f64>,
    pub rmse_velocity: Vec<f64>,
    pub rmse_pressure: Vec<f64>,
    pub trajectories: usize,
    pub config_digest: String,
    /// Forecaster label, e.g. an attention mode or `persistence`.
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample: Option<f64>,
}

impl EvalReport {
    /// Averages per-trajectory rollouts into a report.
    pub fn from_rollouts(
        rollouts: &[(Vec<MeshFrame>, &[MeshFrame])],
        stats: &NormStats,
        horizons: &[usize],
        method: &str,
        config_digest: String,
    ) -> Result<Self> {
        if rollouts.is_empty() {
            return Err(Error::InvalidArgument("no trajectories to evaluate".into()));
        }
        let m = horizons.len();
        let (mut n, mut v, mut p) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for (pred, truth) in rollouts {
            let a = n_rmse(pred, truth, stats, horizons)?;
            let b = rmse_fields(pred, truth, horizons)?;
            for i in 0..m {
                n[i] += a[i];
                v[i] += b[i][0];
                p[i] += b[i][1];
            }
        }
        let d = rollouts.len() as f64;
        let avg = |x: Vec<f64>| x.into_iter().map(|s| s / d).collect();
        let report = EvalReport {
            horizons: horizons.to_vec(),
            n_rmse: avg(n),
            rmse_velocity: avg(v),
            rmse_pressure: avg(p),
            trajectories: rollouts.len(),
            config_digest,
            method: method.to_string(),
            downsample: None,
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.horizons.len();
        if self.n_rmse.len() != m || self.rmse_velocity.len() != m || self.rmse_pressure.len() != m {
            return Err(Error::Validation("report columns differ in length".into()));
        }
        check_horizons(&self.horizons, usize::MAX)?;
        let all = self.n_rmse.iter().chain(&self.rmse_velocity).chain(&self.rmse_pressure);
        if all.clone().any(|x| !(*x >= 0.0)) {
            return Err(Error::Validation("report holds negative or NaN errors".into()));
        }
        Ok(())
    }

    /// N-RMSE at horizon `h`, if reported.
    pub fn at(&self, h: usize) -> Option<f64> {
        self.horizons.iter().position(|&x| x == h).map(|i| self.n_rmse[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("horizon,n_rmse,rmse_velocity,rmse_pressure\n");
        for i in 0..self.horizons.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                self.horizons[i], self.n_rmse[i], self.rmse_velocity[i], self.rmse_pressure[i]
            ));
        }
        s
    }
}

/// Hex SHA-256 of the canonical JSON form of a model config.
pub fn config_digest(config: &ModelConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionMode;
    use crate::testutil::grid_frame;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats(v: f64, p: f64) -> NormStats {
        NormStats {
            v_std: v,
            p_std: p,
            ..NormStats::identity(1)
        }
    }

    fn one_node(v: [f32; 2], p: f32) -> MeshFrame {
        MeshFrame {
            positions: array![[0.0, 0.0]],
            node_types: vec![crate::mesh::NodeType::Interior],
            velocity: array![[v[0], v[1]]],
            pressure: array![[p]],
            edges: vec![],
        }
    }

    #[test]
    fn hand_evaluated_n_rmse() {
        // velocity RMS error 0.2 (components 0.2, 0.2), pressure error 0.03
        let pred = vec![one_node([0.2, -0.2], 0.03)];
        let truth = vec![one_node([0.0, 0.0], 0.0)];
        let e = n_rmse(&pred, &truth, &stats(0.4, 0.1), &[1]).unwrap();
        assert!((e[0] - 0.8).abs() < 1e-6, "{e:?}");
        assert_eq!(n_rmse(&truth, &truth, &stats(0.4, 0.1), &[1]).unwrap(), vec![0.0]);
    }

    #[test]
    fn constant_offset_rmse() {
        let f = grid_frame(5, 5, 0);
        let mut g = f.clone();
        g.velocity.mapv_inplace(|v| v + 0.25);
        let r = rmse_fields(&[g], &[f], &[1]).unwrap();
        assert!((r[0][0] - 0.25).abs() < 1e-6);
        assert_eq!(r[0][1], 0.0);
    }

    /// Independent accumulation: explicit loops over steps, nodes and
    /// components in f64.
    fn naive(pred: &[MeshFrame], truth: &[MeshFrame], s: &NormStats, h: usize) -> (f64, f64, f64) {
        let (mut n, mut v, mut p) = (0.0, 0.0, 0.0);
        for t in 0..h {
            let nodes = pred[t].num_nodes();
            let mut sv = 0.0;
            for i in 0..nodes {
                for c in 0..2 {
                    let d = pred[t].velocity[[i, c]] as f64 - truth[t].velocity[[i, c]] as f64;
                    sv += d * d;
                }
            }
            let mut sp = 0.0;
            let pc = pred[t].pressure_channels();
            for i in 0..nodes {
                for c in 0..pc {
                    let d = pred[t].pressure[[i, c]] as f64 - truth[t].pressure[[i, c]] as f64;
                    sp += d * d;
                }
            }
            let ev = (sv / (2 * nodes) as f64).sqrt();
            let ep = (sp / (pc * nodes) as f64).sqrt();
            v += ev;
            p += ep;
            n += ev / s.v_std + ep / s.p_std;
        }
        (n / h as f64, v / h as f64, p / h as f64)
    }

    #[test]
    fn metrics_match_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..20u64 {
            let steps: u64 = rng.gen_range(1..6);
            let truth: Vec<MeshFrame> = (0..steps)
                .map(|t| grid_frame(4, 3 + case as usize % 3, 100 * case + t))
                .collect();
            let pred: Vec<MeshFrame> = (0..steps)
                .map(|t| grid_frame(4, 3 + case as usize % 3, 7 + 100 * case + t))
                .collect();
            let s = stats(rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0));
            let horizons: Vec<usize> = (1..=steps as usize).collect();
            let n = n_rmse(&pred, &truth, &s, &horizons).unwrap();
            let r = rmse_fields(&pred, &truth, &horizons).unwrap();
            for (i, &h) in horizons.iter().enumerate() {
                let (a, b, c) = naive(&pred, &truth, &s, h);
                assert!((n[i] - a).abs() < 1e-12);
                assert!((r[i][0] - b).abs() < 1e-12);
                assert!((r[i][1] - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metrics_invariant_under_node_permutation() {
        let truth = grid_frame(5, 4, 1);
        let pred = grid_frame(5, 4, 2);
        let perm: Vec<usize> = (0..truth.num_nodes()).rev().collect();
        let shuffle = |f: &MeshFrame| MeshFrame {
            velocity: f.velocity.select(ndarray::Axis(0), &perm),
            pressure: f.pressure.select(ndarray::Axis(0), &perm),
            ..f.clone()
        };
        let s = stats(0.7, 1.3);
        let a = n_rmse(std::slice::from_ref(&pred), std::slice::from_ref(&truth), &s, &[1]).unwrap();
        let b = n_rmse(&[shuffle(&pred)], &[shuffle(&truth)], &s, &[1]).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn horizon_checks() {
        let f = vec![one_node([0.0, 0.0], 0.0); 3];
        let s = stats(1.0, 1.0);
        assert!(n_rmse(&f, &f, &s, &[4]).is_err());
        assert!(n_rmse(&f, &f, &s, &[2, 2]).is_err());
        assert!(n_rmse(&f, &f, &s, &[0]).is_err());
        assert!(n_rmse(&f, &f[..2], &s, &[1]).is_err());
    }

    #[test]
    fn k_number_cases() {
        assert_eq!(k_number(&[0.5, 0.3, 0.15, 0.05], 0.9).unwrap(), 3);
        assert_eq!(k_number(&[0.05; 20], 0.9).unwrap(), 18);
        let mut one_hot = [0.0; 7];
        one_hot[4] = 1.0;
        assert_eq!(k_number(&one_hot, 0.9).unwrap(), 1);
        assert!(k_number(&[0.5, 0.4], 0.9).is_err());
        assert!(k_number(&[1.5, -0.5], 0.9).is_err());
        // monotone in the threshold
        let row = [0.4, 0.25, 0.2, 0.1, 0.05];
        let ks: Vec<usize> = [0.1, 0.5, 0.7, 0.9, 1.0]
            .iter()
            .map(|&t| k_number(&row, t).unwrap())
            .collect();
        assert!(ks.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(ks, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn persistence_repeats_and_transfers() {
        let f = grid_frame(4, 4, 0);
        let same = vec![f.geometry(); 3];
        let out = persistence_forecast(&f, &same, 3).unwrap();
        assert!(out.iter().all(|o| *o == f));
        assert_eq!(
            n_rmse(&out, &vec![f.clone(); 3], &stats(1.0, 1.0), &[1, 3]).unwrap(),
            vec![0.0, 0.0]
        );

        let moved = grid_frame(4, 4, 9);
        let out = persistence_forecast(&f, &[moved.geometry()], 1).unwrap();
        assert_eq!(out[0].positions, moved.positions);
        let map = crate::model::nearest_node_map(&f.positions, &moved.positions);
        for (i, &j) in map.iter().enumerate() {
            assert_eq!(out[0].velocity.row(i), f.velocity.row(j));
        }
        assert!(persistence_forecast(&f, &same, 4).is_err());
    }

    #[test]
    fn summary_of_uniform_and_single_cluster_attention() {
        let k = 10;
        let record = AttentionRecord {
            mode: AttentionMode::Average,
            blocks: vec![vec![Array2::from_elem((k, k), 1.0 / k as f64); 2]],
        };
        let s = attention_summary(&record, 0.9).unwrap();
        assert!(s.k_numbers[0].iter().flatten().all(|&x| x == 9));
        let single = AttentionRecord {
            mode: AttentionMode::Full,
            blocks: vec![vec![Array2::ones((1, 1))]],
        };
        assert_eq!(attention_summary(&single, 0.9).unwrap().k_numbers, vec![vec![vec![1]]]);
    }

    #[test]
    fn report_csv_and_validation() {
        let f = vec![one_node([0.0, 0.0], 0.0), one_node([0.0, 0.0], 0.0)];
        let g = vec![one_node([0.1, 0.1], 0.0), one_node([0.3, 0.3], 0.2)];
        let r = EvalReport::from_rollouts(&[(g, &f)], &stats(1.0, 1.0), &[1, 2], "full", "abc".into()).unwrap();
        assert_eq!(r.trajectories, 1);
        assert!((r.n_rmse[1] - (0.1 + 0.3 + 0.2) / 2.0).abs() < 1e-6);
        assert_eq!(r.at(2), Some(r.n_rmse[1]));
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("horizon,n_rmse"));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
        assert_eq!(config_digest(&ModelConfig::tiny()).len(), 64);
        assert_ne!(
            config_digest(&ModelConfig::tiny()),
            config_digest(&ModelConfig::default())
        );
    }
}
