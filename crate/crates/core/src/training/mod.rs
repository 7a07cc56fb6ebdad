//! Multi-step loss, Adam training loop, checkpoints and gradient checks.

mod checkpoint;
mod gradcheck;

use std::rc::Rc;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::FrameClusters;
use crate::error::{Error, Result};
use crate::mesh::{MeshFrame, NormStats, Trajectory};
use crate::model::{nearest_node_map, normalized_state, step_on_tape, Layout, Model, ModelConfig, PreparedFrame};
use crate::tape::{Real, Tape, Var};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{finite_difference_check, gradcheck_example, GradCheckReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::InvalidArgument(format!("unknown precision {s:?} (f32 or f64)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub learning_rate: f64,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub alpha: f64,
    /// Seeds parameter initialization, window sampling and pooling orders.
    pub seed: u64,
    pub precision: Precision,
    /// Global gradient-norm clip threshold.
    pub grad_clip: Option<f64>,
    pub log_every: u64,
    /// Seed of the cluster assignments used for training data.
    pub cluster_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            learning_rate: 1e-4,
            horizon: 8,
            alpha: 0.1,
            seed: 0,
            precision: Precision::F32,
            grad_clip: None,
            log_every: 100,
            cluster_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("H must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha = {} must be non-negative",
                self.alpha
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("grad_clip = {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Velocity, pressure and weighted total of the multi-step loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub loss: f64,
    pub loss_v: f64,
    pub loss_p: f64,
}

fn mean_sq(a: ndarray::ArrayView2<f64>, b: ndarray::ArrayView2<f64>) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n
}

/// `Σ_t MSE(v) + α Σ_t MSE(p)` over normalized `[v, p]` states, with MSE
/// the mean over nodes and components of each step.
pub fn loss(predicted: &[Array2<f64>], target: &[Array2<f64>], alpha: f64) -> Result<LossParts> {
    if predicted.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predicted steps for {} targets",
            predicted.len(),
            target.len()
        )));
    }
    let mut lv = 0.0;
    let mut lp = 0.0;
    for (t, (p, q)) in predicted.iter().zip(target).enumerate() {
        if p.dim() != q.dim() || p.ncols() < 3 {
            return Err(Error::Shape(format!(
                "step {t}: shapes {:?} and {:?}",
                p.dim(),
                q.dim()
            )));
        }
        lv += mean_sq(p.slice(s![.., 0..2]), q.slice(s![.., 0..2]));
        lp += mean_sq(p.slice(s![.., 2..]), q.slice(s![.., 2..]));
    }
    Ok(LossParts {
        loss: lv + alpha * lp,
        loss_v: lv,
        loss_p: lp,
    })
}

/// `H + 1` consecutive frames with the clusters of the first `H`.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub frames: &'a [MeshFrame],
    pub clusters: &'a [FrameClusters],
}

impl Window<'_> {
    pub fn horizon(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }
}

/// Loss nodes of one unrolled window.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub v: Var,
    pub p: Var,
}

/// Unrolls the model over the window autoregressively: each prediction
/// is moved onto the next frame's geometry by nearest-node transfer,
/// compared with that frame, and fed back as the next input.
pub fn window_loss<F: Real>(
    tape: &mut Tape<F>,
    layout: &Layout,
    window: &Window,
    stats: &NormStats,
    alpha: f64,
    order_seed: u64,
) -> Result<LossVars> {
    let h = window.horizon();
    if h == 0 || window.clusters.len() < h {
        return Err(Error::InvalidArgument(format!(
            "window of {} frames and {} cluster sets",
            window.frames.len(),
            window.clusters.len()
        )));
    }
    let pc = layout.config.pressure_channels;
    let first = &window.frames[0];
    let mut state = tape.constant(normalized_state(first, stats).mapv(F::of));
    let mut lv: Option<Var> = None;
    let mut lp: Option<Var> = None;
    for j in 0..h {
        let frame = &window.frames[j];
        let prep = PreparedFrame::from_frame(frame, &window.clusters[j], layout.config.pe_bands)?;
        let out = step_on_tape(tape, layout, &prep, state, order_seed.wrapping_add(j as u64));
        let target = &window.frames[j + 1];
        let mut next = out.next;
        if !frame.same_geometry(target) {
            let map = nearest_node_map(&frame.positions, &target.positions);
            next = tape.gather(next, Rc::new(map));
        }
        let truth = normalized_state(target, stats).mapv(F::of);
        let tv = Rc::new(truth.slice(s![.., 0..2]).to_owned());
        let tp = Rc::new(truth.slice(s![.., 2..2 + pc]).to_owned());
        let pv = tape.slice_cols(next, 0, 2);
        let pp = tape.slice_cols(next, 2, 2 + pc);
        let mv = tape.mse(pv, tv);
        let mp = tape.mse(pp, tp);
        lv = Some(match lv {
            Some(acc) => tape.add(acc, mv),
            None => mv,
        });
        lp = Some(match lp {
            Some(acc) => tape.add(acc, mp),
            None => mp,
        });
        state = next;
    }
    let (v, p) = (lv.expect("h ≥ 1"), lp.expect("h ≥ 1"));
    let weighted = tape.scale(p, F::of(alpha));
    let total = tape.add(v, weighted);
    Ok(LossVars { total, v, p })
}

/// Loss value and parameter gradients (zero where unused) of one window.
pub fn loss_and_gradients<F: Real>(
    model: &Model,
    params: &[Array2<F>],
    window: &Window,
    stats: &NormStats,
    alpha: f64,
    order_seed: u64,
) -> Result<(LossParts, Vec<Array2<f64>>)> {
    let mut tape = Tape::new(params);
    let vars = window_loss(&mut tape, &model.layout, window, stats, alpha, order_seed)?;
    let parts = LossParts {
        loss: tape.scalar(vars.total).as_f64(),
        loss_v: tape.scalar(vars.v).as_f64(),
        loss_p: tape.scalar(vars.p).as_f64(),
    };
    let grads = tape.backward(vars.total).into_params();
    let grads = grads
        .into_iter()
        .zip(&model.params.tensors)
        .map(|(g, p)| match g {
            Some(g) => g.mapv(F::as_f64),
            None => Array2::zeros(p.dim()),
        })
        .collect();
    Ok((parts, grads))
}

/// Adam with bias correction; moments kept in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &[Array2<f64>]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
        }
    }
}

/// Scales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_gradients(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}

/// Trajectories with per-frame clusters.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub trajectories: &'a [Trajectory],
    pub clusters: &'a [Vec<FrameClusters>],
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub loss_v: f64,
    pub loss_p: f64,
    pub wall_ms: f64,
}

/// Owns the parameters, optimizer and sampling state of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub stats: NormStats,
    pub config: TrainConfig,
    pub adam: Adam,
    pub step: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh run; parameters initialized from the training seed.
    pub fn new(model_config: &ModelConfig, config: &TrainConfig, stats: NormStats) -> Result<Self> {
        config.validate()?;
        let model = Model::init(model_config, config.seed)?;
        let adam = Adam::new(&model.params.tensors);
        Ok(Trainer {
            model,
            stats,
            config: config.clone(),
            adam,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed)),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.train_config.validate()?;
        let model = Model::new(&ckpt.model_config, ckpt.params)?;
        let mut rng = ChaCha8Rng::from_seed(ckpt.rng.seed);
        rng.set_word_pos(ckpt.rng.word_pos);
        Ok(Trainer {
            model,
            stats: ckpt.stats,
            config: ckpt.train_config,
            adam: ckpt.adam,
            step: ckpt.step,
            rng,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_config: self.model.config().clone(),
            train_config: self.config.clone(),
            stats: self.stats.clone(),
            params: self.model.params.clone(),
            adam: self.adam.clone(),
            step: self.step,
            rng: RngState {
                seed: self.rng.get_seed(),
                word_pos: self.rng.get_word_pos(),
            },
        }
    }

    fn eligible(&self, data: &TrainData) -> Result<Vec<usize>> {
        if data.trajectories.len() != data.clusters.len() {
            return Err(Error::InvalidArgument(format!(
                "{} trajectories but {} cluster sets",
                data.trajectories.len(),
                data.clusters.len()
            )));
        }
        let h = self.config.horizon;
        let ids: Vec<usize> = (0..data.trajectories.len())
            .filter(|&i| data.trajectories[i].len() > h)
            .collect();
        if ids.is_empty() {
            return Err(Error::Validation(format!(
                "no training trajectory has more than H = {h} frames"
            )));
        }
        Ok(ids)
    }

    /// Samples one window and applies one Adam update.
    pub fn train_step(&mut self, data: &TrainData) -> Result<StepLog> {
        let start = Instant::now();
        let ids = self.eligible(data)?;
        let h = self.config.horizon;
        let which = ids[self.rng.gen_range(0..ids.len())];
        let traj = &data.trajectories[which];
        let t0 = self.rng.gen_range(0..traj.len() - h);
        let order_seed: u64 = self.rng.gen();
        let window = Window {
            frames: &traj.frames[t0..=t0 + h],
            clusters: &data.clusters[which][t0..t0 + h],
        };
        let (parts, mut grads) = match self.config.precision {
            Precision::F32 => {
                let p = self.model.params.cast::<f32>();
                loss_and_gradients(&self.model, &p, &window, &self.stats, self.config.alpha, order_seed)?
            }
            Precision::F64 => {
                let p = self.model.params.tensors.clone();
                loss_and_gradients(&self.model, &p, &window, &self.stats, self.config.alpha, order_seed)?
            }
        };
        if !parts.loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss {} at step {} (trajectory {which}, start frame {t0})",
                parts.loss,
                self.step + 1
            )));
        }
        if let Some(c) = self.config.grad_clip {
            clip_gradients(&mut grads, c);
        }
        self.adam
            .step(&mut self.model.params.tensors, &grads, self.config.learning_rate);
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            loss: parts.loss,
            loss_v: parts.loss_v,
            loss_p: parts.loss_p,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Trains until `config.steps`, calling `on_step` after every update.
    pub fn run(&mut self, data: &TrainData, mut on_step: impl FnMut(&StepLog, &Trainer) -> Result<()>) -> Result<()> {
        while self.step < self.config.steps {
            let log = self.train_step(data)?;
            on_step(&log, self)?;
        }
        Ok(())
    }
}

/// Runs a full training job and returns the final checkpoint.
pub fn train(
    data: &TrainData,
    model_config: &ModelConfig,
    config: &TrainConfig,
    stats: NormStats,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(model_config, config, stats)?;
    trainer.run(data, |log, _| {
        on_step(log);
        Ok(())
    })?;
    Ok(trainer.checkpoint())
}
