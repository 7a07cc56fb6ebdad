use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use meshformer::cluster::{load_or_compute_clusters, precompute_clusters, FrameClusters};
use meshformer::datagen::{generate_dataset, GenConfig};
use meshformer::eval::{downsample_trajectory, evaluate_model, evaluate_persistence, frame_clusters};
use meshformer::io::{load_manifest, load_split, load_trajectory, save_trajectory, trajectory_path, SplitName};
use meshformer::mesh::{compute_norm_stats, NormStats, Trajectory};
use meshformer::metrics::{attention_summary, EvalReport};
use meshformer::model::{attention_dump, forward_step, rollout as model_rollout, Model, ModelConfig};
use meshformer::training::{
    finite_difference_check, gradcheck_example, load_checkpoint, save_checkpoint, Checkpoint, Precision, TrainConfig,
    TrainData, Trainer,
};
use meshformer::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{AttnArgs, ClusterArgs, DefaultsArgs, EvalArgs, GenArgs, GradcheckArgs, RolloutArgs, StatsArgs, TrainArgs};

/// Numerical failures exit with 3, bad arguments with 1, everything else
/// (missing, corrupt or inconsistent data) with 2.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<GradcheckFailed>().is_some() {
        return 3;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Numerical(_)) => 3,
        Some(Error::InvalidArgument(_)) => 1,
        _ => 2,
    }
}

#[derive(Debug)]
struct GradcheckFailed(f64, f64);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gradient check failed: max relative error {:.3e} >= {:.1e}",
            self.0, self.1
        )
    }
}

impl std::error::Error for GradcheckFailed {}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}

fn read_json_or_default<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), |p| read_json(p))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn split_name(s: &str) -> Result<SplitName> {
    Ok(match s {
        "train" => SplitName::Train,
        "valid" => SplitName::Valid,
        "test" => SplitName::Test,
        _ => return Err(Error::InvalidArgument(format!("unknown split {s:?} (train, valid or test)")).into()),
    })
}

pub fn gen(a: GenArgs) -> Result<()> {
    let mut cfg: GenConfig = read_json_or_default(a.config.as_ref())?;
    if let Some(v) = a.family {
        cfg.family = v;
    }
    if let Some(v) = a.n_traj {
        cfg.n_traj = v;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.nodes {
        cfg.nodes = v;
    }
    if let Some(v) = a.dt {
        cfg.dt = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.nu {
        cfg.nu = v;
    }
    let manifest = generate_dataset(&cfg, &a.out)?;
    println!(
        "wrote {} {} trajectories ({} train, {} valid, {} test) to {}",
        cfg.n_traj,
        cfg.family,
        manifest.split.train.len(),
        manifest.split.valid.len(),
        manifest.split.test.len(),
        a.out.display()
    );
    Ok(())
}

pub fn cluster(a: ClusterArgs) -> Result<()> {
    if a.size == 0 {
        return Err(Error::InvalidArgument("cluster size must be at least 1".into()).into());
    }
    let manifest = load_manifest(&a.data)?;
    let mut frames = 0;
    for split in [SplitName::Train, SplitName::Valid, SplitName::Test] {
        for id in manifest.ids(split) {
            let path = trajectory_path(&a.data, id);
            let traj = load_trajectory(&path)?;
            let dir = path.parent().expect("trajectory files live in a directory");
            frames += precompute_clusters(&traj, dir, a.size, a.seed)?.len();
        }
    }
    println!("clustered {frames} frames at size {} (seed {})", a.size, a.seed);
    Ok(())
}

pub fn stats(a: StatsArgs) -> Result<()> {
    let train: Vec<Trajectory> = load_split(&a.data, SplitName::Train)?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    let (stats, clamped) = compute_norm_stats(&train, a.floor)?;
    for c in clamped {
        log::warn!("zero-variance field clamped: {c:?}");
    }
    write_json(&a.out, &stats)
}

/// Trajectories of a split plus their per-frame clusters, using the
/// on-disk cache when it matches.
fn load_clustered(
    data: &Path,
    split: SplitName,
    size: usize,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Vec<FrameClusters>>)> {
    let mut trajs = Vec::new();
    let mut clusters = Vec::new();
    for (id, traj) in load_split(data, split)? {
        let path = trajectory_path(data, &id);
        let assignments = load_or_compute_clusters(&traj, path.parent(), size, seed)?;
        clusters.push(
            assignments
                .into_iter()
                .zip(&traj.frames)
                .map(|(c, f)| FrameClusters::for_frame(f, c))
                .collect(),
        );
        trajs.push(traj);
    }
    if trajs.is_empty() {
        return Err(Error::Validation(format!("split {split:?} of {} is empty", data.display())).into());
    }
    Ok((trajs, clusters))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut model_cfg: ModelConfig = read_json_or_default(a.model_config.as_ref())?;
    let mut train_cfg: TrainConfig = read_json_or_default(a.train_config.as_ref())?;
    if let Some(v) = a.attention_mode {
        model_cfg.attention_mode = v;
    }
    if let Some(v) = a.steps {
        train_cfg.steps = v;
    }
    if let Some(v) = a.lr {
        train_cfg.learning_rate = v;
    }
    if let Some(v) = a.seed {
        train_cfg.seed = v;
    }
    if let Some(v) = a.precision {
        train_cfg.precision = v;
    }
    model_cfg.validate()?;
    train_cfg.validate()?;

    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            ckpt.check_config(&model_cfg)?;
            let mut t = Trainer::from_checkpoint(ckpt)?;
            t.config.steps = train_cfg.steps;
            t
        }
        None => {
            let stats: NormStats = match &a.stats {
                Some(p) => read_json(p)?,
                None => {
                    let train: Vec<Trajectory> = load_split(&a.data, SplitName::Train)?
                        .into_iter()
                        .map(|(_, t)| t)
                        .collect();
                    compute_norm_stats(&train, 1e-8)?.0
                }
            };
            Trainer::new(&model_cfg, &train_cfg, stats)?
        }
    };
    let (trajs, clusters) = load_clustered(
        &a.data,
        SplitName::Train,
        trainer.model.config().cluster_size,
        trainer.config.cluster_seed,
    )?;
    let data = TrainData {
        trajectories: &trajs,
        clusters: &clusters,
    };

    let mut log: Box<dyn Write> = match &a.log {
        Some(p) => {
            create_parent(p)?;
            Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)
        }
        None => Box::new(std::io::stdout()),
    };
    let every = trainer.config.log_every.max(1);
    let total = trainer.config.steps;
    trainer.run(&data, |step, t| {
        if step.step % every == 0 || step.step == total {
            let mut line = serde_json::to_value(step).map_err(|e| Error::Format(e.to_string()))?;
            if a.deterministic {
                line.as_object_mut().expect("log lines are objects").remove("wall_ms");
            }
            writeln!(log, "{line}").map_err(|e| Error::Format(format!("writing log: {e}")))?;
        }
        if a.checkpoint_every.is_some_and(|n| n > 0 && step.step % n == 0) {
            save_checkpoint(&t.checkpoint(), &a.out)?;
        }
        Ok(())
    })?;
    log.flush()?;
    save_checkpoint(&trainer.checkpoint(), &a.out)?;
    eprintln!("trained to step {}; checkpoint {}", trainer.step, a.out.display());
    Ok(())
}

fn model_from(ckpt: &Checkpoint, ablation: Option<meshformer::model::AttentionMode>) -> Result<Model> {
    let model = Model::new(&ckpt.model_config, ckpt.params.clone())?;
    Ok(match ablation {
        Some(m) => model.with_mode(m),
        None => model,
    })
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let split = split_name(&a.split)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let model = model_from(&ckpt, a.ablation)?;
    let mut trajs: Vec<Trajectory> = load_split(&a.data, split)?.into_iter().map(|(_, t)| t).collect();
    if trajs.is_empty() {
        return Err(Error::Validation(format!("split {} of {} is empty", a.split, a.data.display())).into());
    }
    if let Some(k) = a.downsample {
        trajs = trajs
            .iter()
            .map(|t| downsample_trajectory(t, k, a.seed))
            .collect::<meshformer::Result<_>>()?;
    }
    let mut report: EvalReport = if a.persistence {
        evaluate_persistence(&trajs, &ckpt.stats, &a.horizons)?
    } else {
        let size = model.config().cluster_size;
        let clusters = trajs
            .iter()
            .map(|t| frame_clusters(t, size, ckpt.train_config.cluster_seed))
            .collect::<meshformer::Result<Vec<_>>>()?;
        evaluate_model(
            &model,
            ckpt.train_config.precision,
            &trajs,
            &clusters,
            &ckpt.stats,
            &a.horizons,
            a.seed,
        )?
    };
    report.downsample = a.downsample;
    if a.out.extension().is_some_and(|e| e == "csv") {
        create_parent(&a.out)?;
        fs::write(&a.out, report.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    } else {
        write_json(&a.out, &report)?;
    }
    for (h, n) in report.horizons.iter().zip(&report.n_rmse) {
        println!("{} +{h}: n_rmse {n:.6}", report.method);
    }
    Ok(())
}

pub fn rollout(a: RolloutArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let model = model_from(&ckpt, None)?;
    let traj = load_trajectory(&a.traj)?;
    if a.steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()).into());
    }
    if a.start + a.steps >= traj.len() {
        bail!(Error::InvalidArgument(format!(
            "trajectory has {} frames; cannot forecast {} steps from frame {}",
            traj.len(),
            a.steps,
            a.start
        )));
    }
    let frames = &traj.frames[a.start..=a.start + a.steps];
    let sub = Trajectory {
        frames: frames.to_vec(),
        ..traj.clone()
    };
    let clusters = frame_clusters(&sub, model.config().cluster_size, ckpt.train_config.cluster_seed)?;
    let future: Vec<_> = frames[1..].iter().map(|f| f.geometry()).collect();
    let run = match ckpt.train_config.precision {
        Precision::F32 => model_rollout::<f32>(
            &model,
            &frames[0],
            &clusters[0],
            &future,
            &clusters[1..a.steps],
            &ckpt.stats,
            a.steps,
            a.seed,
        )?,
        Precision::F64 => model_rollout::<f64>(
            &model,
            &frames[0],
            &clusters[0],
            &future,
            &clusters[1..a.steps],
            &ckpt.stats,
            a.steps,
            a.seed,
        )?,
    };
    let mut out = vec![frames[0].clone()];
    out.extend(run.into_iter().map(|r| r.frame));
    save_trajectory(&Trajectory { frames: out, ..traj }, &a.out)?;
    println!("wrote {} forecast frames to {}", a.steps, a.out.display());
    Ok(())
}

pub fn attn(a: AttnArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let model = model_from(&ckpt, a.ablation)?;
    let traj = load_trajectory(&a.traj)?;
    let frame = traj
        .frames
        .get(a.step)
        .ok_or_else(|| Error::InvalidArgument(format!("step {} out of range for {} frames", a.step, traj.len())))?;
    let assignment = meshformer::cluster::same_size_kmeans(
        &frame.positions_f64(),
        model.config().cluster_size,
        ckpt.train_config.cluster_seed,
    )?;
    let clusters = FrameClusters::for_frame(frame, assignment);
    let out = match ckpt.train_config.precision {
        Precision::F32 => forward_step::<f32>(&model, frame, &clusters, &ckpt.stats, a.seed)?,
        Precision::F64 => forward_step::<f64>(&model, frame, &clusters, &ckpt.stats, a.seed)?,
    };
    let record = out.attention.ok_or_else(|| {
        Error::InvalidArgument(format!("{} mode has no attention maps", model.config().attention_mode))
    })?;
    let dump = attention_dump(&record, a.step, &clusters.geometry.barycenters);
    let summary = attention_summary(&record, a.threshold)?;
    write_json(&a.out, &serde_json::json!({ "attention": dump, "k_numbers": summary }))?;
    if let Some(dir) = &a.images {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (b, heads) in record.blocks.iter().enumerate() {
            for (h, m) in heads.iter().enumerate() {
                let path = dir.join(format!("block{b}_head{h}.png"));
                heatmap(m)
                    .save(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    println!(
        "wrote attention of {} clusters to {}",
        record.num_clusters(),
        a.out.display()
    );
    Ok(())
}

/// Grayscale image of an attention matrix, scaled by its largest entry
/// and enlarged so each entry is at least a few pixels wide.
fn heatmap(m: &ndarray::Array2<f64>) -> image::GrayImage {
    let k = m.nrows().max(1) as u32;
    let cell = (256 / k).max(1);
    let max = m.iter().copied().fold(0.0f64, f64::max).max(1e-12);
    image::GrayImage::from_fn(k * cell, k * cell, |x, y| {
        let v = m[[(y / cell) as usize, (x / cell) as usize]] / max;
        image::Luma([(255.0 * v).round().clamp(0.0, 255.0) as u8])
    })
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let cfg = match &a.model_config {
        Some(p) => read_json(p)?,
        None => ModelConfig::tiny(),
    };
    let example = gradcheck_example(&cfg, a.seed)?;
    let report = finite_difference_check(&example, a.samples, a.epsilon, a.seed)?;
    println!("{}", serde_json::to_string(&report)?);
    println!(
        "max relative error {:.3e} over {} parameters",
        report.max_rel_error, report.checked
    );
    if report.max_rel_error.is_nan() || report.max_rel_error >= a.tolerance {
        bail!(GradcheckFailed(report.max_rel_error, a.tolerance));
    }
    Ok(())
}

pub fn defaults(a: DefaultsArgs) -> Result<()> {
    write_json(&a.out.join("model.json"), &ModelConfig::default())?;
    write_json(&a.out.join("train.json"), &TrainConfig::default())?;
    write_json(&a.out.join("gen.json"), &GenConfig::default())?;
    println!("wrote model.json, train.json and gen.json to {}", a.out.display());
    Ok(())
}
