use std::rc::Rc;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{positional_encoding_bands, AttentionMode, AttentionRecord, Layout, Model, COARSE_EDGE_DIM};
use crate::cluster::FrameClusters;
use crate::error::{Error, Result};
use crate::mesh::{MeshFrame, NodeType, NormStats};
use crate::nn::DirectedGraph;
use crate::tape::{FlopCounter, Real, Stage, Tape, Var};

/// Geometry-derived model inputs of one frame: graph connectivity, edge
/// and positional features, and cluster structure.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub num_nodes: usize,
    pub graph: DirectedGraph,
    /// Per directed edge: `x_recv − x_send` and its length.
    pub edge_features: Array2<f64>,
    /// Per node: `[F(x_i), F(x̄_k − x_i)]`.
    pub local_encoding: Array2<f64>,
    pub node_types: Array2<f64>,
    pub assignment: Rc<Vec<usize>>,
    pub members: Vec<Vec<usize>>,
    pub barycenter_encoding: Array2<f64>,
    pub adjacency: Array2<bool>,
    pub coarse_graph: DirectedGraph,
    pub coarse_edge_features: Array2<f64>,
}

impl PreparedFrame {
    pub fn new(
        positions: &[[f64; 2]],
        node_types: &[NodeType],
        edges: &[[u32; 2]],
        clusters: &FrameClusters,
        bands: [i32; 2],
    ) -> Result<Self> {
        let n = positions.len();
        if node_types.len() != n || clusters.assignment.num_nodes() != n {
            return Err(Error::Shape(format!(
                "{} positions, {} node types, {} clustered nodes",
                n,
                node_types.len(),
                clusters.assignment.num_nodes()
            )));
        }
        let graph = DirectedGraph::from_undirected(n, edges);
        let edge_features = relative_features(positions, &graph);

        let assignment: Vec<usize> = clusters.assignment.assignment.iter().map(|&a| a as usize).collect();
        let bary = &clusters.geometry.barycenters;
        let pe_dim = 4 * (bands[1] - bands[0] + 1) as usize;
        let mut local_encoding = Array2::zeros((n, 2 * pe_dim));
        for (i, p) in positions.iter().enumerate() {
            let c = bary[assignment[i]];
            let a = positional_encoding_bands(*p, bands);
            let b = positional_encoding_bands([c[0] - p[0], c[1] - p[1]], bands);
            for (j, v) in a.into_iter().chain(b).enumerate() {
                local_encoding[[i, j]] = v;
            }
        }

        let mut types = Array2::zeros((n, NodeType::COUNT));
        for (i, t) in node_types.iter().enumerate() {
            types[[i, t.code() as usize]] = 1.0;
        }

        let k = clusters.k();
        let mut barycenter_encoding = Array2::zeros((k, pe_dim));
        for (c, x) in bary.iter().enumerate() {
            for (j, v) in positional_encoding_bands(*x, bands).into_iter().enumerate() {
                barycenter_encoding[[c, j]] = v;
            }
        }

        let adjacency = clusters.geometry.adjacency.clone();
        let mut recv = Vec::new();
        let mut send = Vec::new();
        for a in 0..k {
            for b in 0..k {
                if a != b && adjacency[[a, b]] {
                    recv.push(a);
                    send.push(b);
                }
            }
        }
        let coarse_graph = DirectedGraph {
            nodes: k,
            recv: Rc::new(recv),
            send: Rc::new(send),
        };
        let coarse_edge_features = relative_features(bary, &coarse_graph);

        Ok(PreparedFrame {
            num_nodes: n,
            graph,
            edge_features,
            local_encoding,
            node_types: types,
            assignment: Rc::new(assignment),
            members: clusters.assignment.members(),
            barycenter_encoding,
            adjacency,
            coarse_graph,
            coarse_edge_features,
        })
    }

    pub fn from_frame(frame: &MeshFrame, clusters: &FrameClusters, bands: [i32; 2]) -> Result<Self> {
        PreparedFrame::new(&frame.positions_f64(), &frame.node_types, &frame.edges, clusters, bands)
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }
}

fn relative_features(points: &[[f64; 2]], graph: &DirectedGraph) -> Array2<f64> {
    let mut out = Array2::zeros((graph.num_edges(), COARSE_EDGE_DIM));
    for (e, (&r, &s)) in graph.recv.iter().zip(graph.send.iter()).enumerate() {
        let dx = points[r][0] - points[s][0];
        let dy = points[r][1] - points[s][1];
        out[[e, 0]] = dx;
        out[[e, 1]] = dy;
        out[[e, 2]] = (dx * dx + dy * dy).sqrt();
    }
    out
}

fn constant<F: Real>(tape: &mut Tape<F>, a: &Array2<f64>) -> Var {
    tape.constant(a.mapv(F::of))
}

/// Normalized `[v, p]` state of a frame, N×(2+Pc).
pub fn normalized_state(frame: &MeshFrame, stats: &NormStats) -> Array2<f64> {
    let v = stats.normalize_velocity(&frame.velocity);
    let p = stats.normalize_pressure(&frame.pressure);
    concatenate(Axis(1), &[v.view(), p.view()]).expect("row counts agree")
}

/// Node and edge embeddings after the encoder.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub eta: Var,
    pub edges: Var,
    pub local: Var,
}

/// Embeds the normalized state and runs the residual message-passing
/// layers.
pub fn encode<F: Real>(tape: &mut Tape<F>, layout: &Layout, prep: &PreparedFrame, state: Var) -> Encoded {
    let prev = tape.set_stage(Stage::Encoder);
    let types = constant(tape, &prep.node_types);
    let node_in = tape.concat(&[state, types]);
    let mut eta = layout.node_encoder.apply(tape, node_in);
    let edge_in = constant(tape, &prep.edge_features);
    let mut e = layout.edge_encoder.apply(tape, edge_in);
    let local = constant(tape, &prep.local_encoding);
    for layer in &layout.encoder_layers {
        let z = tape.concat(&[eta, local]);
        let msg = layer.messages(tape, z, e, &prep.graph);
        e = tape.add(e, msg);
        let agg = layer.aggregate(tape, e, &prep.graph);
        let upd = layer.update(tape, z, agg);
        eta = tape.add(eta, upd);
    }
    tape.set_stage(prev);
    Encoded { eta, edges: e, local }
}

/// One GRU time step over a subset of clusters.
#[derive(Debug, Clone)]
pub struct PoolStep {
    /// Node fed to each active cluster.
    pub nodes: Rc<Vec<usize>>,
    /// Active clusters, or `None` when all clusters take part.
    pub active: Option<Rc<Vec<usize>>>,
}

/// Visiting order of cluster members: each cluster's members are
/// shuffled with a generator seeded by `order_seed`, in cluster order.
pub fn pooling_schedule(members: &[Vec<usize>], order_seed: u64) -> Vec<PoolStep> {
    let mut rng = ChaCha8Rng::seed_from_u64(order_seed);
    let orders: Vec<Vec<usize>> = members
        .iter()
        .map(|m| {
            let mut m = m.clone();
            m.shuffle(&mut rng);
            m
        })
        .collect();
    let longest = orders.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .map(|t| {
            let active: Vec<usize> = (0..orders.len()).filter(|&k| orders[k].len() > t).collect();
            let nodes = Rc::new(active.iter().map(|&k| orders[k][t]).collect());
            let active = (active.len() < orders.len()).then(|| Rc::new(active));
            PoolStep { nodes, active }
        })
        .collect()
}

/// Sequential GRU pooling of `[η_i, f_i]` into one token per cluster.
pub fn pool<F: Real>(tape: &mut Tape<F>, layout: &Layout, enc: &Encoded, k: usize, schedule: &[PoolStep]) -> Var {
    let prev = tape.set_stage(Stage::Pooling);
    let w = layout.config.width;
    let x = tape.concat(&[enc.eta, enc.local]);
    let gi_all = layout.gru.input.apply(tape, x);
    let w_hh = tape.param(layout.gru.state.w);
    let b_hh = tape.param(layout.gru.state.b);
    let mut h = tape.constant(Array2::zeros((k, w)));
    for step in schedule {
        let gi = tape.gather(gi_all, step.nodes.clone());
        let h_act = match &step.active {
            Some(a) => tape.gather(h, a.clone()),
            None => h,
        };
        let gh = tape.matmul(h_act, w_hh);
        let gh = tape.add_bias(gh, b_hh);
        let gi_r = tape.slice_cols(gi, 0, w);
        let gh_r = tape.slice_cols(gh, 0, w);
        let r = tape.add(gi_r, gh_r);
        let r = tape.sigmoid(r);
        let gi_z = tape.slice_cols(gi, w, 2 * w);
        let gh_z = tape.slice_cols(gh, w, 2 * w);
        let z = tape.add(gi_z, gh_z);
        let z = tape.sigmoid(z);
        let gi_n = tape.slice_cols(gi, 2 * w, 3 * w);
        let gh_n = tape.slice_cols(gh, 2 * w, 3 * w);
        let n = tape.mul(r, gh_n);
        let n = tape.add(gi_n, n);
        let n = tape.tanh(n);
        // (1 − z)·n + z·h
        let d = tape.sub(h_act, n);
        let d = tape.mul(z, d);
        let h_new = tape.add(n, d);
        h = match &step.active {
            Some(a) => tape.replace_rows(h, h_new, a.clone()),
            None => h_new,
        };
    }
    let tokens = layout.cluster_mlp.apply(tape, h);
    tape.set_stage(prev);
    tokens
}

/// Runs the attention blocks under the layout's mode. Returns the final
/// tokens and, except for the coarse GNN mode, the attention matrices
/// indexed by block then head.
pub fn attend<F: Real>(
    tape: &mut Tape<F>,
    layout: &Layout,
    prep: &PreparedFrame,
    tokens: Var,
) -> (Var, Option<Vec<Vec<Var>>>) {
    let prev = tape.set_stage(Stage::AttentionDense);
    let mode = layout.config.attention_mode;
    let k = tape.shape(tokens).0;
    let heads = layout.config.heads;
    let dh = layout.config.width / heads;
    let scale = F::of(1.0 / (dh as f64).sqrt());
    let pe = constant(tape, &prep.barycenter_encoding);
    let uniform =
        (mode == AttentionMode::Average).then(|| tape.constant(Array2::from_elem((k, k), F::of(1.0 / k as f64))));
    let mask = (mode == AttentionMode::OneRing).then_some(&prep.adjacency);
    let coarse_edges = (mode == AttentionMode::GnnCoarse).then(|| constant(tape, &prep.coarse_edge_features));

    let mut record = Vec::new();
    let mut w = tokens;
    for block in &layout.blocks {
        let normed = block.ln_attn.apply(tape, w);
        let w1 = tape.concat(&[normed, pe]);
        let w2 = if let Some(e) = coarse_edges {
            let msg = block.coarse.messages(tape, w1, e, &prep.coarse_graph);
            let agg = block.coarse.aggregate(tape, msg, &prep.coarse_graph);
            block.coarse.update(tape, w1, agg)
        } else {
            let q = block.query.apply(tape, w1);
            let kk = block.key.apply(tape, w1);
            let v = block.value.apply(tape, w1);
            let mut outs = Vec::with_capacity(heads);
            let mut maps = Vec::with_capacity(heads);
            for head in 0..heads {
                let (lo, hi) = (head * dh, (head + 1) * dh);
                let qh = tape.slice_cols(q, lo, hi);
                let vh = tape.slice_cols(v, lo, hi);
                tape.set_stage(Stage::AttentionScores);
                let a = match uniform {
                    Some(u) => u,
                    None => {
                        let kh = tape.slice_cols(kk, lo, hi);
                        let s = tape.matmul_bt(qh, kh);
                        let s = tape.scale(s, scale);
                        tape.softmax(s, mask)
                    }
                };
                outs.push(tape.matmul(a, vh));
                tape.set_stage(Stage::AttentionDense);
                maps.push(a);
            }
            record.push(maps);
            if outs.len() == 1 {
                outs[0]
            } else {
                tape.concat(&outs)
            }
        };
        let projected = block.out.apply(tape, w2);
        let w3 = tape.add(w, projected);
        let w4 = block.ln_ff.apply(tape, w3);
        let w5 = block.ff.apply(tape, w4);
        w = tape.add(w3, w5);
    }
    let out = layout.final_norm.apply(tape, w);
    tape.set_stage(prev);
    (out, coarse_edges.is_none().then_some(record))
}

/// Decoder message passing over `[η_i, w_k, f_i]` and the increment head.
/// Returns the normalized increments and `state + increments`.
pub fn decode<F: Real>(
    tape: &mut Tape<F>,
    layout: &Layout,
    prep: &PreparedFrame,
    enc: &Encoded,
    tokens: Var,
    state: Var,
) -> (Var, Var) {
    let prev = tape.set_stage(Stage::Decoder);
    let wk = tape.gather(tokens, prep.assignment.clone());
    let z = tape.concat(&[enc.eta, wk, enc.local]);
    let dec = &layout.decoder;
    let msg = dec.messages(tape, z, enc.edges, &prep.graph);
    let e = tape.add(enc.edges, msg);
    let agg = dec.aggregate(tape, e, &prep.graph);
    let upd = dec.update(tape, z, agg);
    let u = tape.add(enc.eta, upd);
    let delta = layout.head.apply(tape, u);
    let next = tape.add(state, delta);
    tape.set_stage(prev);
    (delta, next)
}

/// Handles of one forward step recorded on a tape.
#[derive(Debug, Clone)]
pub struct StepTape {
    pub delta: Var,
    pub next: Var,
    pub tokens: Var,
    pub attention: Option<Vec<Vec<Var>>>,
}

/// encode → pool → attend → decode on normalized state `state`.
pub fn step_on_tape<F: Real>(
    tape: &mut Tape<F>,
    layout: &Layout,
    prep: &PreparedFrame,
    state: Var,
    order_seed: u64,
) -> StepTape {
    let enc = encode(tape, layout, prep, state);
    let schedule = pooling_schedule(&prep.members, order_seed);
    let pooled = pool(tape, layout, &enc, prep.num_clusters(), &schedule);
    let (tokens, attention) = attend(tape, layout, prep, pooled);
    let (delta, next) = decode(tape, layout, prep, &enc, tokens, state);
    StepTape {
        delta,
        next,
        tokens,
        attention,
    }
}

/// Result of [`forward_step`] in physical units.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub frame: MeshFrame,
    /// Normalized increments, N×(2+Pc).
    pub delta: Array2<f64>,
    pub attention: Option<AttentionRecord>,
    pub flops: FlopCounter,
}

pub(crate) fn check_channels(model: &Model, frame: &MeshFrame, stats: &NormStats) -> Result<()> {
    let pc = model.config().pressure_channels;
    if frame.pressure_channels() != pc || stats.pressure_channels() != pc {
        return Err(Error::Shape(format!(
            "model has {pc} pressure channels, frame {}, statistics {}",
            frame.pressure_channels(),
            stats.pressure_channels()
        )));
    }
    Ok(())
}

/// Adds de-normalized increments to the frame's fields.
pub(crate) fn apply_delta(frame: &MeshFrame, delta: &Array2<f64>, stats: &NormStats) -> MeshFrame {
    let mut out = frame.clone();
    for i in 0..frame.num_nodes() {
        for c in 0..2 {
            let v = frame.velocity[[i, c]] as f64 + stats.v_std * delta[[i, c]];
            out.velocity[[i, c]] = v as f32;
        }
        for c in 0..frame.pressure_channels() {
            let p = frame.pressure[[i, c]] as f64 + stats.p_std * delta[[i, 2 + c]];
            out.pressure[[i, c]] = p as f32;
        }
    }
    out
}

/// Predicts the fields at t+1 on the geometry of `frame`, computing in
/// precision `F`.
pub fn forward_step<F: Real>(
    model: &Model,
    frame: &MeshFrame,
    clusters: &FrameClusters,
    stats: &NormStats,
    order_seed: u64,
) -> Result<StepOutput> {
    let params = model.params.cast::<F>();
    predict(model, &params, frame, clusters, stats, order_seed)
}

/// [`forward_step`] with parameters already cast to `F`.
pub(crate) fn predict<F: Real>(
    model: &Model,
    params: &[Array2<F>],
    frame: &MeshFrame,
    clusters: &FrameClusters,
    stats: &NormStats,
    order_seed: u64,
) -> Result<StepOutput> {
    check_channels(model, frame, stats)?;
    let prep = PreparedFrame::from_frame(frame, clusters, model.config().pe_bands)?;
    let mut tape = Tape::new(params);
    let state = constant(&mut tape, &normalized_state(frame, stats));
    let out = step_on_tape(&mut tape, &model.layout, &prep, state, order_seed);
    let delta = tape.value(out.delta).mapv(F::as_f64);
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite model output".into()));
    }
    let attention = out.attention.as_ref().map(|blocks| AttentionRecord {
        mode: model.config().attention_mode,
        blocks: blocks
            .iter()
            .map(|heads| heads.iter().map(|&a| tape.value(a).mapv(F::as_f64)).collect())
            .collect(),
    });
    Ok(StepOutput {
        frame: apply_delta(frame, &delta, stats),
        delta,
        attention,
        flops: tape.flops(),
    })
}
