//! Evaluation of a trained model and of the persistence baseline over a
//! set of trajectories, each rolled out from its first frame.

use crate::cluster::{cluster_trajectory, FrameClusters};
use crate::downsample::downsample_frame;
use crate::error::{Error, Result};
use crate::mesh::{FrameGeometry, MeshFrame, NormStats, Trajectory};
use crate::metrics::{config_digest, persistence_forecast, EvalReport};
use crate::model::{rollout, Model};
use crate::training::Precision;

/// Clusters every frame of `traj` and derives the cluster geometry.
pub fn frame_clusters(traj: &Trajectory, target_size: usize, seed: u64) -> Result<Vec<FrameClusters>> {
    Ok(cluster_trajectory(traj, target_size, seed)?
        .into_iter()
        .zip(&traj.frames)
        .map(|(a, f)| FrameClusters::for_frame(f, a))
        .collect())
}

/// Downsamples every frame with the same seed, so frames that share a
/// geometry keep the same node subset.
pub fn downsample_trajectory(traj: &Trajectory, keep_fraction: f64, seed: u64) -> Result<Trajectory> {
    let frames = traj
        .frames
        .iter()
        .map(|f| downsample_frame(f, keep_fraction, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { frames, ..traj.clone() })
}

fn max_horizon(horizons: &[usize], traj: &Trajectory) -> Result<usize> {
    let h = horizons
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::InvalidArgument("no horizons requested".into()))?;
    if traj.len() <= h {
        return Err(Error::InvalidArgument(format!(
            "trajectory with {} frames is too short for horizon {h}",
            traj.len()
        )));
    }
    Ok(h)
}

fn future(traj: &Trajectory, h: usize) -> Vec<FrameGeometry> {
    traj.frames[1..=h].iter().map(MeshFrame::geometry).collect()
}

/// Rolls the model out from frame 0 of every trajectory. `clusters[i]`
/// clusters the frames of `trajectories[i]`.
pub fn evaluate_model(
    model: &Model,
    precision: Precision,
    trajectories: &[Trajectory],
    clusters: &[Vec<FrameClusters>],
    stats: &NormStats,
    horizons: &[usize],
    order_seed: u64,
) -> Result<EvalReport> {
    if trajectories.len() != clusters.len() {
        return Err(Error::InvalidArgument(format!(
            "{} trajectories but {} cluster sets",
            trajectories.len(),
            clusters.len()
        )));
    }
    let mut rollouts = Vec::with_capacity(trajectories.len());
    for (traj, cl) in trajectories.iter().zip(clusters) {
        let h = max_horizon(horizons, traj)?;
        let fut = future(traj, h);
        let run = match precision {
            Precision::F32 => rollout::<f32>(model, &traj.frames[0], &cl[0], &fut, &cl[1..h], stats, h, order_seed)?,
            Precision::F64 => rollout::<f64>(model, &traj.frames[0], &cl[0], &fut, &cl[1..h], stats, h, order_seed)?,
        };
        let pred: Vec<MeshFrame> = run.into_iter().map(|r| r.frame).collect();
        if let Some(bad) = pred
            .iter()
            .position(|f| f.velocity.iter().chain(&f.pressure).any(|x| !x.is_finite()))
        {
            return Err(Error::Numerical(format!(
                "non-finite prediction at rollout step {}",
                bad + 1
            )));
        }
        rollouts.push((pred, &traj.frames[1..=h]));
    }
    EvalReport::from_rollouts(
        &rollouts,
        stats,
        horizons,
        model.config().attention_mode.name(),
        config_digest(model.config()),
    )
}

/// Same report for the copy-the-last-frame forecast.
pub fn evaluate_persistence(trajectories: &[Trajectory], stats: &NormStats, horizons: &[usize]) -> Result<EvalReport> {
    let mut rollouts = Vec::with_capacity(trajectories.len());
    for traj in trajectories {
        let h = max_horizon(horizons, traj)?;
        let pred = persistence_forecast(&traj.frames[0], &future(traj, h), h)?;
        rollouts.push((pred, &traj.frames[1..=h]));
    }
    EvalReport::from_rollouts(&rollouts, stats, horizons, "persistence", String::new())
}
