//! Central finite-difference check of the analytic gradients.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{loss_and_gradients, Window};
use crate::cluster::{same_size_kmeans, FrameClusters};
use crate::delaunay::delaunay_triangulate;
use crate::error::{Error, Result};
use crate::mesh::{MeshFrame, NodeType, NormStats};
use crate::model::{forward_step, Model, ModelConfig};
use crate::polygon::Polygon;
use crate::tape::Tape;

const TARGET_NOISE: f32 = 0.05;

/// A small model and window on which gradients are checked in f64.
#[derive(Debug, Clone)]
pub struct GradCheckExample {
    pub model: Model,
    pub frames: Vec<MeshFrame>,
    pub clusters: Vec<FrameClusters>,
    pub stats: NormStats,
    pub alpha: f64,
    pub order_seed: u64,
}

impl GradCheckExample {
    pub fn window(&self) -> Window<'_> {
        Window {
            frames: &self.frames,
            clusters: &self.clusters,
        }
    }

    pub fn loss_at(&self, params: &[Array2<f64>]) -> Result<f64> {
        Ok(self.probe(params)?.0)
    }

    /// Loss and ReLU sign pattern.
    fn probe(&self, params: &[Array2<f64>]) -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new(params);
        let vars = super::window_loss(
            &mut tape,
            &self.model.layout,
            &self.window(),
            &self.stats,
            self.alpha,
            self.order_seed,
        )?;
        Ok((tape.scalar(vars.total), tape.relu_pattern()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Sampled parameters skipped because a perturbation flipped a ReLU.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    /// Parameter with the largest error as `name[flat index]`.
    pub worst: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// 12-node mesh (4 × 3 jittered grid), 3 clusters, `H = 2`, random initial
/// fields.
/// The zero-initialized output layer is randomized so every upstream
/// parameter receives a gradient.
pub fn gradcheck_example(config: &ModelConfig, seed: u64) -> Result<GradCheckExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nx, ny) = (4, 3);
    let mut pts = Vec::new();
    let mut types = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let border = i == 0 || j == 0 || i + 1 == nx || j + 1 == ny;
            let mut p = [i as f64 / (nx - 1) as f64, j as f64 / (ny - 1) as f64];
            if !border {
                p[0] += rng.gen_range(-0.05..0.05);
                p[1] += rng.gen_range(-0.05..0.05);
            }
            pts.push(p);
            types.push(match (border, i) {
                (false, _) => NodeType::Interior,
                (true, 0) => NodeType::Inlet,
                (true, i) if i + 1 == nx => NodeType::Outlet,
                _ => NodeType::Wall,
            });
        }
    }
    let tri = delaunay_triangulate(&pts, &Polygon::unit_square())?;
    let n = pts.len();
    let pc = config.pressure_channels;
    let first = MeshFrame {
        positions: Array2::from_shape_fn((n, 2), |(i, c)| pts[i][c] as f32),
        node_types: types,
        velocity: Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0)),
        pressure: Array2::from_shape_fn((n, pc), |_| rng.gen_range(-1.0..1.0)),
        edges: tri.edges,
    };
    let assignment = same_size_kmeans(&pts, 4, seed)?;
    let clusters = vec![FrameClusters::for_frame(&first, assignment); 2];

    let mut model = Model::init(config, seed)?;
    let last = model.layout.head.layers.last().expect("head has layers");
    for id in [last.w, last.b] {
        let fan_in = model.layout.specs[last.w].shape.0 as f64;
        let bound = 1.0 / fan_in.sqrt();
        model.params.tensors[id].mapv_inplace(|_| rng.gen_range(-bound..bound));
    }

    // Targets sit close to the model's own rollout. The finite-difference
    // roundoff floor scales with the loss value while the gradients scale
    // with the residual, so small residuals keep small gradients resolvable.
    let stats = NormStats::identity(pc);
    let mut frames = vec![first];
    for j in 0..2 {
        let mut next =
            forward_step::<f64>(&model, &frames[j], &clusters[j], &stats, seed.wrapping_add(j as u64))?.frame;
        next.velocity
            .mapv_inplace(|v| v + rng.gen_range(-TARGET_NOISE..TARGET_NOISE));
        next.pressure
            .mapv_inplace(|p| p + rng.gen_range(-TARGET_NOISE..TARGET_NOISE));
        frames.push(next);
    }
    Ok(GradCheckExample {
        model,
        frames,
        clusters,
        stats,
        alpha: 0.1,
        order_seed: seed,
    })
}

/// Compares analytic gradients with `(L(θ+ε) − L(θ−ε)) / 2ε` on `samples`
/// randomly chosen parameters used by the configured attention mode.
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
/// Central differences are meaningless across a ReLU kink, so a parameter
/// whose ±ε perturbation changes any ReLU sign is skipped and another one
/// drawn in its place.
pub fn finite_difference_check(
    example: &GradCheckExample,
    samples: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0) || samples == 0 {
        return Err(Error::InvalidArgument(format!(
            "need epsilon > 0 and samples > 0 (got {epsilon}, {samples})"
        )));
    }
    let model = &example.model;
    let params = model.params.tensors.clone();
    let (_, grads) = loss_and_gradients(
        model,
        &params,
        &example.window(),
        &example.stats,
        example.alpha,
        example.order_seed,
    )?;

    let unused = model.layout.unused_params(model.config().attention_mode);
    let mut candidates: Vec<(usize, usize)> = (0..params.len())
        .filter(|id| !unused.contains(id))
        .flat_map(|id| (0..params[id].len()).map(move |k| (id, k)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let (_, base_pattern) = example.probe(&params)?;

    let mut work = params;
    let mut report = GradCheckReport {
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        mean_rel_error: 0.0,
        worst: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut total = 0.0;
    for &(id, k) in &candidates {
        if report.checked == samples {
            break;
        }
        let cols = work[id].ncols();
        let idx = [k / cols, k % cols];
        let orig = work[id][idx];
        work[id][idx] = orig + epsilon;
        let (up, up_pattern) = example.probe(&work)?;
        work[id][idx] = orig - epsilon;
        let (down, down_pattern) = example.probe(&work)?;
        work[id][idx] = orig;
        if up_pattern != base_pattern || down_pattern != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = grads[id][idx];
        if !numeric.is_finite() || !analytic.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient for {}[{k}]: analytic {analytic}, numeric {numeric}",
                model.layout.specs[id].name
            )));
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        total += rel;
        report.checked += 1;
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = format!("{}[{k}]", model.layout.specs[id].name);
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    report.mean_rel_error = total / report.checked.max(1) as f64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionMode;

    #[test]
    fn example_shape() {
        let ex = gradcheck_example(&ModelConfig::tiny(), 0).unwrap();
        assert_eq!(ex.frames[0].num_nodes(), 12);
        assert_eq!(ex.clusters[0].k(), 3);
        assert_eq!(ex.window().horizon(), 2);
    }

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        let ex = gradcheck_example(&ModelConfig::tiny(), 7).unwrap();
        let r = finite_difference_check(&ex, 200, 1e-5, 1).unwrap();
        assert_eq!(r.checked, 200);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn unused_mode_parameters_leave_loss_unchanged() {
        let ex = gradcheck_example(&ModelConfig::tiny(), 3).unwrap();
        let base = ex.loss_at(&ex.model.params.tensors).unwrap();
        let ids = ex.model.layout.unused_params(AttentionMode::Full);
        assert!(!ids.is_empty());
        let eps = 1e-3;
        let mut p = ex.model.params.tensors.clone();
        for &id in &ids {
            p[id].mapv_inplace(|v| v + eps);
        }
        assert!((ex.loss_at(&p).unwrap() - base).abs() <= eps * eps);
    }
}
