//! Static layer graph with reverse-mode differentiation.
//!
//! Nodes are stored in topological (construction) order. A forward pass
//! records every node output in a [`Trace`]; the backward pass walks the
//! nodes in reverse, accumulating gradients into their inputs.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::conv::{Conv2d, ConvGeometry};
use crate::nn::norm::{BatchNorm, BnCache};
use crate::nn::ops::{self, Activation, Linear, PoolGeometry};
use crate::nn::param::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalisation layers.
    Train,
    /// Running statistics; deterministic per item.
    Eval,
}

#[derive(Clone, Debug)]
pub enum Op<T> {
    Input,
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Act(Activation),
    Add,
    Concat,
    ChannelScale,
    MaxPool(PoolGeometry),
    AvgPool(PoolGeometry),
    GlobalAvgPool,
    Linear(Linear<T>),
}

#[derive(Clone, Debug)]
pub struct Node<T> {
    pub name: String,
    pub op: Op<T>,
    pub inputs: Vec<NodeId>,
    /// Public tap-layer label, if this node is exposed for CAM capture.
    pub tap: Option<String>,
    pub channels: usize,
}

#[derive(Clone, Debug)]
enum Cache<T> {
    None,
    Bn(BnCache<T>),
    MaxPool(Vec<usize>),
}

/// Node outputs of one forward pass.
#[derive(Debug)]
pub struct Trace<T> {
    values: Vec<Option<Tensor<T>>>,
    caches: Vec<Cache<T>>,
    output: NodeId,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.value(self.output)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        self.values[id].as_ref().expect("trace value was released before use")
    }
}

/// What a backward pass should produce.
#[derive(Clone, Debug, Default)]
pub struct GradRequest {
    /// Accumulate parameter gradients.
    pub params: bool,
    /// Node gradients to return.
    pub keep: Vec<NodeId>,
    /// Stop once this node's gradient is complete.
    pub stop_at: Option<NodeId>,
}

#[derive(Debug)]
pub struct Gradients<T> {
    /// Aligned with [`Network::params`]; empty unless requested.
    pub params: Vec<Vec<T>>,
    pub nodes: HashMap<NodeId, Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    nodes: Vec<Node<T>>,
    output: NodeId,
    last_use: Vec<usize>,
    param_offset: Vec<usize>,
}

fn param_slots<T>(op: &Op<T>) -> usize {
    match op {
        Op::Conv(c) => 1 + usize::from(c.bias.is_some()),
        Op::BatchNorm(_) | Op::Linear(_) => 2,
        _ => 0,
    }
}

impl<T: Scalar> Network<T> {
    fn new(nodes: Vec<Node<T>>, output: NodeId) -> Self {
        let mut last_use: Vec<usize> = (0..nodes.len()).collect();
        for (id, node) in nodes.iter().enumerate() {
            for &i in &node.inputs {
                last_use[i] = last_use[i].max(id);
            }
        }
        last_use[output] = usize::MAX;
        let mut param_offset = Vec::with_capacity(nodes.len());
        let mut off = 0;
        for node in &nodes {
            param_offset.push(off);
            off += param_slots(&node.op);
        }
        Self {
            nodes,
            output,
            last_use,
            param_offset,
        }
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    /// Mutable node access for hand-edited weights.
    pub fn node_mut(&mut self, id: NodeId) -> &mut Node<T> {
        &mut self.nodes[id]
    }

    pub fn output_id(&self) -> NodeId {
        self.output
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn tap_id(&self, tap: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.tap.as_deref() == Some(tap))
    }

    /// Tap-layer labels in forward order.
    pub fn tap_names(&self) -> Vec<String> {
        self.nodes.iter().filter_map(|n| n.tap.clone()).collect()
    }

    /// Trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Conv(c) => {
                    out.push(&c.weight);
                    out.extend(c.bias.as_ref());
                }
                Op::BatchNorm(bn) => {
                    out.push(&bn.gamma);
                    out.push(&bn.beta);
                }
                Op::Linear(l) => {
                    out.push(&l.weight);
                    out.push(&l.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            match &mut node.op {
                Op::Conv(c) => {
                    out.push(&mut c.weight);
                    out.extend(c.bias.as_mut());
                }
                Op::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                Op::Linear(l) => {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Non-trainable state (normalisation running statistics).
    pub fn buffers(&self) -> Vec<&Param<T>> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::BatchNorm(bn) => Some([&bn.running_mean, &bn.running_var]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            if let Op::BatchNorm(bn) = &mut node.op {
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out
    }

    /// Parameters and buffers together, for checkpointing.
    pub fn state(&self) -> Vec<&Param<T>> {
        let mut s = self.params();
        s.extend(self.buffers());
        s
    }

    pub fn state_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        let mut bufs = Vec::new();
        for node in &mut self.nodes {
            match &mut node.op {
                Op::Conv(c) => {
                    out.push(&mut c.weight);
                    out.extend(c.bias.as_mut());
                }
                Op::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                    bufs.push(&mut bn.running_mean);
                    bufs.push(&mut bn.running_var);
                }
                Op::Linear(l) => {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
                _ => {}
            }
        }
        out.extend(bufs);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Trace<T> {
        self.run(x, mode, None, false)
    }

    /// Forward pass in which node `id` emits `value` instead of its own
    /// result; downstream nodes see the substituted tensor.
    pub fn forward_with_override(&self, x: &Tensor<T>, mode: Mode, id: NodeId, value: &Tensor<T>) -> Trace<T> {
        self.run(x, mode, Some((id, value)), false)
    }

    /// Evaluation-mode output only; intermediates are released early.
    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut trace = self.run(x, Mode::Eval, None, true);
        trace.values[self.output].take().expect("network output")
    }

    fn run(&self, x: &Tensor<T>, mode: Mode, replace: Option<(NodeId, &Tensor<T>)>, release: bool) -> Trace<T> {
        let n = self.nodes.len();
        let mut values: Vec<Option<Tensor<T>>> = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        let train = mode == Mode::Train;
        for (id, node) in self.nodes.iter().enumerate() {
            let arg =
                |k: usize| -> &Tensor<T> { values[node.inputs[k]].as_ref().expect("input released before consumer") };
            let (out, cache) = match &node.op {
                Op::Input => (x.clone(), Cache::None),
                Op::Conv(c) => (c.forward(arg(0)), Cache::None),
                Op::BatchNorm(bn) => {
                    let (y, c) = bn.forward(arg(0), train);
                    (y, if release { Cache::None } else { Cache::Bn(c) })
                }
                Op::Act(a) => (a.forward(arg(0)), Cache::None),
                Op::Add => {
                    let mut y = arg(0).clone();
                    for k in 1..node.inputs.len() {
                        y.add_assign(arg(k));
                    }
                    (y, Cache::None)
                }
                Op::Concat => {
                    let parts: Vec<&Tensor<T>> = (0..node.inputs.len()).map(arg).collect();
                    (ops::concat_forward(&parts), Cache::None)
                }
                Op::ChannelScale => (ops::channel_scale_forward(arg(0), arg(1)), Cache::None),
                Op::MaxPool(g) => {
                    let (y, idx) = ops::max_pool_forward(g, arg(0));
                    (y, if release { Cache::None } else { Cache::MaxPool(idx) })
                }
                Op::AvgPool(g) => (ops::avg_pool_forward(g, arg(0)), Cache::None),
                Op::GlobalAvgPool => (ops::global_avg_pool_forward(arg(0)), Cache::None),
                Op::Linear(l) => (l.forward(arg(0)), Cache::None),
            };
            let out = match replace {
                Some((rid, v)) if rid == id => {
                    assert_eq!(v.shape(), out.shape(), "override shape for node {}", node.name);
                    v.clone()
                }
                _ => out,
            };
            values.push(Some(out));
            caches.push(cache);
            if release {
                for &i in &node.inputs {
                    if self.last_use[i] == id {
                        values[i] = None;
                    }
                }
            }
        }
        Trace {
            values,
            caches,
            output: self.output,
        }
    }

    /// Fold the batch statistics of a training-mode trace into the
    /// running statistics.
    pub fn commit_batch_stats(&mut self, trace: &Trace<T>) {
        for (node, cache) in self.nodes.iter_mut().zip(&trace.caches) {
            if let (Op::BatchNorm(bn), Cache::Bn(c)) = (&mut node.op, cache) {
                bn.update_running(c);
            }
        }
    }

    pub fn backward(&self, trace: &Trace<T>, out_grad: Tensor<T>, req: &GradRequest) -> Gradients<T> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[self.output] = Some(out_grad);
        let mut pgrads: Vec<Vec<T>> = if req.params {
            self.params().iter().map(|p| vec![T::zero(); p.len()]).collect()
        } else {
            Vec::new()
        };
        let mut kept = HashMap::new();

        fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for id in (0..n).rev() {
            let Some(dy) = grads[id].take() else {
                continue;
            };
            if req.keep.contains(&id) {
                kept.insert(id, dy.clone());
            }
            if req.stop_at == Some(id) {
                break;
            }
            let node = &self.nodes[id];
            let input = |k: usize| trace.value(node.inputs[k]);
            let off = self.param_offset[id];
            match &node.op {
                Op::Input => {}
                Op::Conv(c) => {
                    let dx = if req.params {
                        let (gw, rest) = pgrads[off..].split_first_mut().expect("conv weight slot");
                        let gb = if c.bias.is_some() {
                            Some(rest[0].as_mut_slice())
                        } else {
                            None
                        };
                        c.backward(input(0), &dy, Some(gw.as_mut_slice()), gb)
                    } else {
                        c.backward(input(0), &dy, None, None)
                    };
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                Op::BatchNorm(bn) => {
                    let Cache::Bn(cache) = &trace.caches[id] else {
                        panic!("batch-norm cache missing for {}", node.name);
                    };
                    let dx = if req.params {
                        let (a, b) = pgrads[off..off + 2].split_at_mut(1);
                        bn.backward(cache, &dy, Some((&mut a[0], &mut b[0])))
                    } else {
                        bn.backward(cache, &dy, None)
                    };
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                Op::Act(a) => {
                    let dx = a.backward(input(0), &dy);
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                Op::Add => {
                    for &i in &node.inputs {
                        accumulate(&mut grads[i], dy.clone());
                    }
                }
                Op::Concat => {
                    let chans: Vec<usize> = node.inputs.iter().map(|&i| trace.value(i).channels()).collect();
                    for (&i, g) in node.inputs.iter().zip(ops::concat_backward(&chans, &dy)) {
                        accumulate(&mut grads[i], g);
                    }
                }
                Op::ChannelScale => {
                    let (dx, ds) = ops::channel_scale_backward(input(0), input(1), &dy);
                    accumulate(&mut grads[node.inputs[0]], dx);
                    accumulate(&mut grads[node.inputs[1]], ds);
                }
                Op::MaxPool(_) => {
                    let Cache::MaxPool(idx) = &trace.caches[id] else {
                        panic!("max-pool cache missing for {}", node.name);
                    };
                    let dx = ops::max_pool_backward(input(0).shape(), idx, &dy);
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                Op::AvgPool(g) => {
                    let dx = ops::avg_pool_backward(g, input(0).shape(), &dy);
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                Op::GlobalAvgPool => {
                    let dx = ops::global_avg_pool_backward(input(0).shape(), &dy);
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                Op::Linear(l) => {
                    let dx = if req.params {
                        let (a, b) = pgrads[off..off + 2].split_at_mut(1);
                        l.backward(input(0), &dy, Some((&mut a[0], &mut b[0])))
                    } else {
                        l.backward(input(0), &dy, None)
                    };
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
            }
        }
        Gradients {
            params: pgrads,
            nodes: kept,
        }
    }
}

/// Incremental network construction with seeded initialisation.
pub struct NetworkBuilder<'r, T, R: Rng> {
    nodes: Vec<Node<T>>,
    rng: &'r mut R,
}

impl<'r, T: Scalar, R: Rng> NetworkBuilder<'r, T, R> {
    /// Starts a graph whose input has `channels` channels.
    pub fn new(rng: &'r mut R, channels: usize) -> Self {
        let input = Node {
            name: "input".into(),
            op: Op::Input,
            inputs: vec![],
            tap: None,
            channels,
        };
        Self {
            nodes: vec![input],
            rng,
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.nodes[id].channels
    }

    fn push(&mut self, name: &str, op: Op<T>, inputs: Vec<NodeId>, channels: usize) -> NodeId {
        debug_assert!(self.nodes.iter().all(|n| n.name != name), "duplicate node name {name}");
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs,
            tap: None,
            channels,
        });
        self.nodes.len() - 1
    }

    fn normal(&mut self, len: usize, std: f64) -> Vec<T> {
        let dist = Normal::new(0.0, std).expect("valid std");
        (0..len).map(|_| T::from_f64_lossy(dist.sample(self.rng))).collect()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        groups: usize,
        bias: bool,
    ) -> NodeId {
        let in_channels = self.channels(x);
        assert!(
            in_channels % groups == 0 && out_channels % groups == 0,
            "{name}: channels {in_channels}->{out_channels} not divisible by groups {groups}"
        );
        let geometry = ConvGeometry {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
        };
        let fan_in = in_channels / groups * kernel.0 * kernel.1;
        let shape = vec![out_channels, in_channels / groups, kernel.0, kernel.1];
        let n = shape.iter().product();
        let weight = Param::new(
            format!("{name}.weight"),
            shape,
            self.normal(n, (2.0 / fan_in as f64).sqrt()),
        );
        let bias = bias.then(|| Param::filled(format!("{name}.bias"), vec![out_channels], T::zero()));
        self.push(name, Op::Conv(Conv2d { geometry, weight, bias }), vec![x], out_channels)
    }

    /// Square-kernel convolution with "same" padding.
    pub fn conv_sq(&mut self, name: &str, x: NodeId, out: usize, k: usize, stride: usize) -> NodeId {
        self.conv(name, x, out, (k, k), stride, (k / 2, k / 2), 1, false)
    }

    pub fn batch_norm(&mut self, name: &str, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.push(name, Op::BatchNorm(BatchNorm::new(name, c)), vec![x], c)
    }

    pub fn act(&mut self, name: &str, x: NodeId, a: Activation) -> NodeId {
        let c = self.channels(x);
        self.push(name, Op::Act(a), vec![x], c)
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> NodeId {
        self.act(name, x, Activation::Relu)
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> NodeId {
        let c = self.channels(a);
        assert_eq!(c, self.channels(b), "{name}: add channel mismatch");
        self.push(name, Op::Add, vec![a, b], c)
    }

    pub fn concat(&mut self, name: &str, parts: &[NodeId]) -> NodeId {
        let c = parts.iter().map(|&p| self.channels(p)).sum();
        self.push(name, Op::Concat, parts.to_vec(), c)
    }

    pub fn channel_scale(&mut self, name: &str, x: NodeId, s: NodeId) -> NodeId {
        let c = self.channels(x);
        assert_eq!(c, self.channels(s), "{name}: gate channel mismatch");
        self.push(name, Op::ChannelScale, vec![x, s], c)
    }

    pub fn max_pool(&mut self, name: &str, x: NodeId, kernel: usize, stride: usize, padding: usize) -> NodeId {
        let c = self.channels(x);
        let g = PoolGeometry {
            kernel,
            stride,
            padding,
        };
        self.push(name, Op::MaxPool(g), vec![x], c)
    }

    pub fn avg_pool(&mut self, name: &str, x: NodeId, kernel: usize, stride: usize, padding: usize) -> NodeId {
        let c = self.channels(x);
        let g = PoolGeometry {
            kernel,
            stride,
            padding,
        };
        self.push(name, Op::AvgPool(g), vec![x], c)
    }

    pub fn global_avg_pool(&mut self, name: &str, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.push(name, Op::GlobalAvgPool, vec![x], c)
    }

    /// Fully connected layer with `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` init.
    pub fn linear(&mut self, name: &str, x: NodeId, out: usize) -> NodeId {
        let fin = self.channels(x);
        let bound = 1.0 / (fin as f64).sqrt();
        let mut uniform = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| T::from_f64_lossy(self.rng.random_range(-bound..bound)))
                .collect()
        };
        let weight = Param::new(format!("{name}.weight"), vec![out, fin], uniform(out * fin));
        let bias = Param::new(format!("{name}.bias"), vec![out], uniform(out));
        self.push(name, Op::Linear(Linear { weight, bias }), vec![x], out)
    }

    /// Expose `id` as a tap layer under `label`.
    pub fn tap(&mut self, id: NodeId, label: &str) -> NodeId {
        debug_assert!(self.nodes.iter().all(|n| n.tap.as_deref() != Some(label)));
        self.nodes[id].tap = Some(label.to_string());
        id
    }

    /// Zeroes the scale of batch-norm node `id` so a residual branch ending
    /// in it starts as the identity.
    pub fn zero_init_gamma(&mut self, id: NodeId) {
        match &mut self.nodes[id].op {
            Op::BatchNorm(bn) => bn.gamma.value.iter_mut().for_each(|g| *g = T::zero()),
            _ => panic!("{}: not a batch-norm node", self.nodes[id].name),
        }
    }

    /// Mutable access to a freshly built node (used by hand-built fixtures).
    pub fn node_mut(&mut self, id: NodeId) -> &mut Node<T> {
        &mut self.nodes[id]
    }

    pub fn finish(self, output: NodeId) -> Network<T> {
        Network::new(self.nodes, output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Small graph exercising every op kind.
    fn net(rng: &mut ChaCha8Rng) -> Network<f64> {
        let mut b = NetworkBuilder::new(rng, 2);
        let x = b.input();
        let c1 = b.conv_sq("c1", x, 4, 3, 1);
        let n1 = b.batch_norm("n1", c1);
        let a1 = b.act("a1", n1, Activation::HardSwish);
        let p1 = b.max_pool("p1", a1, 3, 2, 1);
        let c2 = b.conv("c2", p1, 4, (3, 3), 1, (1, 1), 4, true);
        let r2 = b.relu("r2", c2);
        let s = b.global_avg_pool("se.pool", r2);
        let s = b.conv("se.fc", s, 4, (1, 1), 1, (0, 0), 1, true);
        let s = b.act("se.gate", s, Activation::HardSigmoid);
        let g = b.channel_scale("se.scale", r2, s);
        let sum = b.add("sum", g, p1);
        let q = b.avg_pool("q", sum, 2, 1, 0);
        let c3 = b.conv("c3", q, 3, (1, 1), 1, (0, 0), 1, false);
        let cat = b.concat("cat", &[q, c3]);
        b.tap(cat, "features");
        let gp = b.global_avg_pool("gap", cat);
        let out = b.linear("fc", gp, 3);
        b.finish(out)
    }

    fn input() -> Tensor<f64> {
        Tensor::from_vec(
            [2, 2, 6, 6],
            (0..144).map(|i| ((i * 29 % 47) as f64) / 23.0 - 1.0).collect(),
        )
    }

    fn weighted_output(net: &Network<f64>, x: &Tensor<f64>, mode: Mode, r: &[f64]) -> f64 {
        let t = net.forward(x, mode);
        t.output().data().iter().zip(r).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net0 = net(&mut rng);
        let x = input();
        let r = vec![0.3, -1.0, 0.7, 1.1, 0.2, -0.4];
        for mode in [Mode::Train, Mode::Eval] {
            let trace = net0.forward(&x, mode);
            let grads = net0.backward(
                &trace,
                Tensor::from_vec([2, 3, 1, 1], r.clone()),
                &GradRequest {
                    params: true,
                    ..Default::default()
                },
            );
            let eps = 1e-6;
            let nparams = net0.params().len();
            for pi in 0..nparams {
                let len = net0.params()[pi].len();
                for idx in [0, len / 2, len - 1] {
                    let mut plus = net0.clone();
                    plus.params_mut()[pi].value[idx] += eps;
                    let mut minus = net0.clone();
                    minus.params_mut()[pi].value[idx] -= eps;
                    let fd =
                        (weighted_output(&plus, &x, mode, &r) - weighted_output(&minus, &x, mode, &r)) / (2.0 * eps);
                    let got = grads.params[pi][idx];
                    assert!(
                        (fd - got).abs() < 1e-5 * (1.0 + fd.abs()),
                        "{:?} {} [{idx}]: fd {fd} vs {got}",
                        mode,
                        net0.params()[pi].name
                    );
                }
            }
        }
    }

    #[test]
    fn tap_gradient_matches_override_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = net(&mut rng);
        let x = input().select(0);
        let tap = net.tap_id("features").unwrap();
        let trace = net.forward(&x, Mode::Eval);
        let mut seed = Tensor::zeros([1, 3, 1, 1]);
        seed.data_mut()[1] = 1.0;
        let g = net.backward(
            &trace,
            seed,
            &GradRequest {
                params: false,
                keep: vec![tap],
                stop_at: Some(tap),
            },
        );
        let ga = &g.nodes[&tap];
        let act = trace.value(tap).clone();
        let eps = 1e-5;
        for idx in 0..act.len() {
            let mut p = act.clone();
            p.data_mut()[idx] += eps;
            let mut m = act.clone();
            m.data_mut()[idx] -= eps;
            let lp = net.forward_with_override(&x, Mode::Eval, tap, &p).output().data()[1];
            let lm = net.forward_with_override(&x, Mode::Eval, tap, &m).output().data()[1];
            assert!(((lp - lm) / (2.0 * eps) - ga.data()[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn infer_matches_traced_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = net(&mut rng);
        let x = input();
        assert_eq!(net.infer(&x), *net.forward(&x, Mode::Eval).output());
        assert_eq!(net.tap_names(), vec!["features".to_string()]);
    }
}
