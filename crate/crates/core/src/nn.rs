//! Parameter registry and layer building blocks evaluated on a [`Tape`].

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{Real, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±sqrt(1/fan_in).
    Uniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub init: Init,
}

/// Collects parameter specs in registration order; ids are indices into
/// the resulting list.
#[derive(Debug, Default)]
pub struct ParamBuilder {
    specs: Vec<ParamSpec>,
}

impl ParamBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: (usize, usize), init: Init) -> usize {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape,
            init,
        });
        self.specs.len() - 1
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, zero: bool) -> Linear {
        let init = if zero { Init::Zeros } else { Init::Uniform { fan_in } };
        Linear {
            w: self.add(format!("{name}.w"), (fan_in, fan_out), init),
            b: self.add(format!("{name}.b"), (1, fan_out), Init::Zeros),
            fan_in,
            fan_out,
        }
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        LayerNorm {
            gamma: self.add(format!("{name}.gamma"), (1, dim), Init::Ones),
            beta: self.add(format!("{name}.beta"), (1, dim), Init::Zeros),
        }
    }

    /// MLP with the given layer widths `[in, hidden.., out]`.
    pub fn mlp(&mut self, name: &str, widths: &[usize], act: Activation, norm: bool, zero_last: bool) -> Mlp {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                self.linear(
                    &format!("{name}.{i}"),
                    widths[i],
                    widths[i + 1],
                    zero_last && i + 1 == n,
                )
            })
            .collect();
        let norm = norm.then(|| self.layer_norm(&format!("{name}.ln"), widths[n]));
        Mlp { layers, act, norm }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn into_specs(self) -> Vec<ParamSpec> {
        self.specs
    }
}

pub fn init_tensor(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Array2<f64> {
    match spec.init {
        Init::Zeros => Array2::zeros(spec.shape),
        Init::Ones => Array2::ones(spec.shape),
        Init::Uniform { fan_in } => {
            let bound = (1.0 / fan_in.max(1) as f64).sqrt();
            Array2::from_shape_fn(spec.shape, |_| rng.gen_range(-bound..=bound))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let h = tape.matmul(x, w);
        tape.add_bias(h, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, x: Var) -> Var {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply<F: Real>(self, tape: &mut Tape<F>, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Linear layers with an activation between consecutive layers and an
/// optional layer norm on the output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
    pub norm: Option<LayerNorm>,
}

impl Mlp {
    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, x: Var) -> Var {
        let h = self.layers[0].apply(tape, x);
        self.finish(tape, h)
    }

    /// Continues from the pre-activation output of the first layer.
    pub fn finish<F: Real>(&self, tape: &mut Tape<F>, first: Var) -> Var {
        let mut h = first;
        for layer in &self.layers[1..] {
            h = self.act.apply(tape, h);
            h = layer.apply(tape, h);
        }
        match self.norm {
            Some(ln) => ln.apply(tape, h),
            None => h,
        }
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }
}

/// Directed edge lists; messages flow from `send[e]` to `recv[e]`.
#[derive(Debug, Clone)]
pub struct DirectedGraph {
    pub nodes: usize,
    pub recv: Rc<Vec<usize>>,
    pub send: Rc<Vec<usize>>,
}

impl DirectedGraph {
    /// Both directions of every undirected edge.
    pub fn from_undirected(nodes: usize, edges: &[[u32; 2]]) -> Self {
        let mut recv = Vec::with_capacity(2 * edges.len());
        let mut send = Vec::with_capacity(2 * edges.len());
        for &[a, b] in edges {
            recv.push(a as usize);
            send.push(b as usize);
            recv.push(b as usize);
            send.push(a as usize);
        }
        DirectedGraph {
            nodes,
            recv: Rc::new(recv),
            send: Rc::new(send),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.recv.len()
    }
}

/// One message-passing layer: an edge MLP over `[z_recv, z_send, e]` and
/// a node MLP over `[z, Σ incoming messages]`. Residual connections are
/// left to the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GnnLayer {
    pub edge: Mlp,
    pub node: Mlp,
    pub node_in: usize,
    pub edge_in: usize,
}

impl GnnLayer {
    pub fn build(
        pb: &mut ParamBuilder,
        name: &str,
        node_in: usize,
        edge_in: usize,
        hidden: usize,
        edge_out: usize,
        node_out: usize,
    ) -> Self {
        let edge = pb.mlp(
            &format!("{name}.edge"),
            &[2 * node_in + edge_in, hidden, hidden, edge_out],
            Activation::Relu,
            true,
            false,
        );
        let node = pb.mlp(
            &format!("{name}.node"),
            &[node_in + edge_out, hidden, hidden, node_out],
            Activation::Relu,
            true,
            false,
        );
        GnnLayer {
            edge,
            node,
            node_in,
            edge_in,
        }
    }

    /// Edge MLP output for every directed edge. The first linear layer is
    /// split by input block so node terms are projected once per node.
    pub fn messages<F: Real>(&self, tape: &mut Tape<F>, z: Var, e: Var, graph: &DirectedGraph) -> Var {
        let first = self.edge.layers[0];
        let w = tape.param(first.w);
        let b = tape.param(first.b);
        let n = self.node_in;
        let w_recv = tape.slice_rows(w, 0, n);
        let w_send = tape.slice_rows(w, n, 2 * n);
        let w_edge = tape.slice_rows(w, 2 * n, 2 * n + self.edge_in);
        let pr = tape.matmul(z, w_recv);
        let ps = tape.matmul(z, w_send);
        let pr = tape.gather(pr, graph.recv.clone());
        let ps = tape.gather(ps, graph.send.clone());
        let pe = tape.matmul(e, w_edge);
        let h = tape.add(pr, ps);
        let h = tape.add(h, pe);
        let h = tape.add_bias(h, b);
        self.edge.finish(tape, h)
    }

    pub fn aggregate<F: Real>(&self, tape: &mut Tape<F>, messages: Var, graph: &DirectedGraph) -> Var {
        tape.scatter_add(messages, graph.recv.clone(), graph.nodes)
    }

    pub fn update<F: Real>(&self, tape: &mut Tape<F>, z: Var, aggregated: Var) -> Var {
        let x = tape.concat(&[z, aggregated]);
        self.node.apply(tape, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{concatenate, Axis};
    use rand::SeedableRng;

    fn params_for(specs: &[ParamSpec], seed: u64) -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        specs.iter().map(|s| init_tensor(s, &mut rng)).collect()
    }

    #[test]
    fn split_first_layer_matches_dense_edge_mlp() {
        let mut pb = ParamBuilder::new();
        let layer = GnnLayer::build(&mut pb, "g", 3, 2, 5, 4, 6);
        let params = params_for(pb.specs(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let graph = DirectedGraph::from_undirected(4, &[[0, 1], [1, 2], [2, 3], [0, 3]]);
        let e = Array2::from_shape_fn((graph.num_edges(), 2), |_| rng.gen_range(-1.0..1.0));

        let mut tape = Tape::new(&params);
        let zv = tape.constant(z.clone());
        let ev = tape.constant(e.clone());
        let fast = layer.messages(&mut tape, zv, ev, &graph);
        let fast = tape.value(fast).clone();

        let zr = z.select(Axis(0), &graph.recv);
        let zs = z.select(Axis(0), &graph.send);
        let dense_in = concatenate(Axis(1), &[zr.view(), zs.view(), e.view()]).unwrap();
        let mut tape = Tape::new(&params);
        let x = tape.constant(dense_in);
        let slow = layer.edge.apply(&mut tape, x);
        let diff = (&fast - tape.value(slow)).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-12, "max difference {diff}");
    }

    #[test]
    fn builder_registers_names_and_inits() {
        let mut pb = ParamBuilder::new();
        let m = pb.mlp("head", &[4, 3, 2], Activation::Tanh, false, true);
        let specs = pb.specs();
        assert_eq!(specs.len(), 4);
        assert_eq!(specs[0].name, "head.0.w");
        assert_eq!(specs[2].init, Init::Zeros);
        assert_eq!(m.output_width(), 2);
        let params = params_for(specs, 1);
        let bound = 0.5;
        assert!(params[0].iter().all(|v| v.abs() <= bound));
        assert!(params[2].iter().all(|&v| v == 0.0));
    }
}
