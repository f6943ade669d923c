//! Static computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in construction order, which is therefore a
//! topological order: every input id precedes its consumers. `forward`
//! executes the ancestor set of the requested outputs in id order;
//! `backward` walks the ancestor set of the loss in exact reverse id order,
//! accumulating gradients into each node's grad buffer. A node's gradient
//! is complete by the time the walk reaches it (all consumers come later in
//! id order), so non-parameter gradients are freed immediately after being
//! propagated — peak memory holds only the live frontier.
//!
//! The op set is exactly what the architecture needs: conv (1x1/3x3, zero
//! padding), relu, add, channel concat, and the scalar log-cosh loss. No
//! broadcasting. Activation tensors are reused across calls when shapes
//! repeat, so a training loop allocates only on its first step.

use super::conv::{self, ConvGeom};
use super::tensor::{Scalar, Tensor};
use crate::parallel;
use crate::{Error, Result};

/// Handle to a node; indices are stable for the graph's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    /// Externally bound activation (no gradient).
    Input,
    /// Trainable leaf tensor.
    Param,
    /// conv2d(x, w[, b]) with "same" zero padding.
    Conv { k: usize, bias: bool },
    Relu,
    Add,
    Concat,
    /// Mean log-cosh between the two inputs; value is a `[1]` scalar.
    LogCosh,
}

struct Node<T> {
    op: Op,
    inputs: Vec<NodeId>,
    /// Channel count this node produces (C of [N,C,H,W]); params use 0.
    channels: usize,
    name: Option<String>,
    needs_grad: bool,
    value: Option<Tensor<T>>,
    grad: Option<Tensor<T>>,
}

/// Elements per chunk for parallel elementwise kernels.
const EW_CHUNK: usize = 1 << 14;

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    /// Ancestor mask covered by the most recent forward pass.
    last_forward: Vec<bool>,
    col_scratch: Vec<T>,
    flip_scratch: Vec<T>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Graph<T> {
        Graph {
            nodes: Vec::new(),
            last_forward: Vec::new(),
            col_scratch: Vec::new(),
            flip_scratch: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, node: Node<T>) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node<T> {
        &self.nodes[id.0]
    }

    /// Declares an externally bound activation with `channels` planes.
    pub fn input(&mut self, channels: usize) -> NodeId {
        self.push(Node {
            op: Op::Input,
            inputs: vec![],
            channels,
            name: None,
            needs_grad: false,
            value: None,
            grad: None,
        })
    }

    /// Declares a named trainable tensor initialized to `init`. A 4-D init
    /// is treated as an `[N, C, H, W]` activation for channel bookkeeping,
    /// which lets parameters stand in as differentiable leaves of any op
    /// (the finite-difference suite leans on this).
    pub fn param(&mut self, name: &str, init: Tensor<T>) -> NodeId {
        let channels = if init.dims().len() == 4 { init.dims()[1] } else { 0 };
        self.push(Node {
            op: Op::Param,
            inputs: vec![],
            channels,
            name: Some(name.to_string()),
            needs_grad: true,
            value: Some(init),
            grad: None,
        })
    }

    /// conv2d with "same" zero padding. `w` must be a `[Cout, Cin, K, K]`
    /// parameter with K in {1, 3} and Cin matching `x`'s channels; `b`, if
    /// given, a `[Cout]` parameter.
    pub fn conv(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let wt = self.node(w).value.as_ref().ok_or(Error::UnboundInput(w.0))?;
        let (cout, cin, kh, kw) = wt.dims4()?;
        if kh != kw || !matches!(kh, 1 | 3) {
            return Err(Error::UnsupportedKernel(kh.max(kw)));
        }
        if self.node(w).op != Op::Param || b.is_some_and(|b| self.node(b).op != Op::Param) {
            return Err(Error::BadConfig("conv weights and bias must be parameters".into()));
        }
        if cin != self.node(x).channels {
            return Err(Error::ChannelMismatch { expected: cin, found: self.node(x).channels });
        }
        if let Some(b) = b {
            let bt = self.node(b).value.as_ref().ok_or(Error::UnboundInput(b.0))?;
            if bt.dims() != [cout] {
                return Err(Error::ShapeMismatch(format!(
                    "bias dims {:?} for {cout} output channels",
                    bt.dims()
                )));
            }
        }
        let needs = self.node(x).needs_grad || self.node(w).needs_grad;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(Node {
            op: Op::Conv { k: kh, bias: b.is_some() },
            inputs,
            channels: cout,
            name: None,
            needs_grad: needs,
            value: None,
            grad: None,
        }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let (channels, needs) = (self.node(x).channels, self.node(x).needs_grad);
        self.push(Node {
            op: Op::Relu,
            inputs: vec![x],
            channels,
            name: None,
            needs_grad: needs,
            value: None,
            grad: None,
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.node(a).channels != self.node(b).channels {
            return Err(Error::ChannelMismatch {
                expected: self.node(a).channels,
                found: self.node(b).channels,
            });
        }
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        let channels = self.node(a).channels;
        Ok(self.push(Node {
            op: Op::Add,
            inputs: vec![a, b],
            channels,
            name: None,
            needs_grad: needs,
            value: None,
            grad: None,
        }))
    }

    /// Channel-axis concatenation in argument order.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::BadConfig("concat of zero tensors".into()));
        }
        let channels = xs.iter().map(|&x| self.node(x).channels).sum();
        let needs = xs.iter().any(|&x| self.node(x).needs_grad);
        Ok(self.push(Node {
            op: Op::Concat,
            inputs: xs.to_vec(),
            channels,
            name: None,
            needs_grad: needs,
            value: None,
            grad: None,
        }))
    }

    /// Scalar loss: mean over all elements of log(cosh(pred - target)).
    pub fn logcosh(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        if self.node(pred).channels != self.node(target).channels {
            return Err(Error::ChannelMismatch {
                expected: self.node(pred).channels,
                found: self.node(target).channels,
            });
        }
        let needs = self.node(pred).needs_grad || self.node(target).needs_grad;
        Ok(self.push(Node {
            op: Op::LogCosh,
            inputs: vec![pred, target],
            channels: 1,
            name: None,
            needs_grad: needs,
            value: None,
            grad: None,
        }))
    }

    /// Binds the value of an `input` node. The binding persists across
    /// forward/backward calls until replaced.
    pub fn bind(&mut self, input: NodeId, value: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[input.0];
        if node.op != Op::Input {
            return Err(Error::BadConfig(format!("node {} is not an input", input.0)));
        }
        let (_, c, _, _) = value.dims4()?;
        if c != node.channels {
            return Err(Error::ChannelMismatch { expected: node.channels, found: c });
        }
        node.value = Some(value);
        Ok(())
    }

    /// Ancestor mask of `roots` (inclusive).
    fn ancestors(&self, roots: &[NodeId]) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = roots.iter().map(|r| r.0).collect();
        while let Some(id) = stack.pop() {
            if mask[id] {
                continue;
            }
            mask[id] = true;
            stack.extend(self.nodes[id].inputs.iter().map(|i| i.0));
        }
        mask
    }

    /// Executes every ancestor of `outputs` in topological (id) order.
    pub fn forward(&mut self, outputs: &[NodeId]) -> Result<()> {
        let mask = self.ancestors(outputs);
        let Graph { nodes, col_scratch, .. } = self;
        for (id, &live) in mask.iter().enumerate() {
            if !live {
                continue;
            }
            let (before, rest) = nodes.split_at_mut(id);
            let node = &mut rest[0];
            let value_of = |nid: NodeId| -> Result<&Tensor<T>> {
                before[nid.0].value.as_ref().ok_or(Error::UnboundInput(nid.0))
            };
            match node.op {
                Op::Input | Op::Param => {
                    if node.value.is_none() {
                        return Err(Error::UnboundInput(id));
                    }
                }
                Op::Conv { k, bias } => {
                    let x = value_of(node.inputs[0])?;
                    let w = value_of(node.inputs[1])?;
                    let b = if bias { Some(value_of(node.inputs[2])?) } else { None };
                    let (n, cin, h, w_) = x.dims4()?;
                    let cout = w.dims()[0];
                    let geom = ConvGeom { n, cin, cout, h, w: w_, k };
                    let out = ensure_value(&mut node.value, &[n, cout, h, w_]);
                    conv::forward(
                        x.data(),
                        w.data(),
                        b.map(|b| b.data()),
                        &geom,
                        T::zero(),
                        out.data_mut(),
                        col_scratch,
                    );
                }
                Op::Relu => {
                    let x = value_of(node.inputs[0])?;
                    let dims = x.dims().to_vec();
                    let xd = x.data();
                    let out = ensure_value(&mut node.value, &dims);
                    parallel::for_each_chunk_mut(out.data_mut(), EW_CHUNK, |i, chunk| {
                        let base = i * EW_CHUNK;
                        for (j, o) in chunk.iter_mut().enumerate() {
                            *o = xd[base + j].max(T::zero());
                        }
                    });
                }
                Op::Add => {
                    let a = value_of(node.inputs[0])?;
                    let b = value_of(node.inputs[1])?;
                    if a.dims() != b.dims() {
                        return Err(Error::ShapeMismatch(format!(
                            "add of {:?} and {:?}",
                            a.dims(),
                            b.dims()
                        )));
                    }
                    let dims = a.dims().to_vec();
                    let (ad, bd) = (a.data(), b.data());
                    let out = ensure_value(&mut node.value, &dims);
                    parallel::for_each_chunk_mut(out.data_mut(), EW_CHUNK, |i, chunk| {
                        let base = i * EW_CHUNK;
                        for (j, o) in chunk.iter_mut().enumerate() {
                            *o = ad[base + j] + bd[base + j];
                        }
                    });
                }
                Op::Concat => {
                    let first = value_of(node.inputs[0])?;
                    let (n, _, h, w) = first.dims4()?;
                    let mut ctotal = 0;
                    for &inp in &node.inputs {
                        let t = value_of(inp)?;
                        let (ni, ci, hi, wi) = t.dims4()?;
                        if (ni, hi, wi) != (n, h, w) {
                            return Err(Error::ShapeMismatch(format!(
                                "concat of {:?} with {:?}",
                                first.dims(),
                                t.dims()
                            )));
                        }
                        ctotal += ci;
                    }
                    // gather (input tensor, channel count) first to keep the
                    // borrow of `before` immutable while writing the output
                    let parts: Vec<(&[T], usize)> = node
                        .inputs
                        .iter()
                        .map(|&inp| {
                            let t = before[inp.0].value.as_ref().unwrap();
                            (t.data(), t.dims()[1])
                        })
                        .collect();
                    let out = ensure_value(&mut node.value, &[n, ctotal, h, w]);
                    let hw = h * w;
                    parallel::for_each_chunk_mut(out.data_mut(), ctotal * hw, |img, block| {
                        let mut off = 0;
                        for &(data, c) in &parts {
                            let chw = c * hw;
                            block[off..off + chw].copy_from_slice(&data[img * chw..(img + 1) * chw]);
                            off += chw;
                        }
                    });
                }
                Op::LogCosh => {
                    let p = value_of(node.inputs[0])?;
                    let t = value_of(node.inputs[1])?;
                    if p.dims() != t.dims() {
                        return Err(Error::ShapeMismatch(format!(
                            "loss of {:?} vs {:?}",
                            p.dims(),
                            t.dims()
                        )));
                    }
                    let mut acc = 0f64;
                    for (a, b) in p.data().iter().zip(t.data()) {
                        let d = (a.into_f64() - b.into_f64()).abs();
                        acc += d + (-2.0 * d).exp().ln_1p() - std::f64::consts::LN_2;
                    }
                    node.value = Some(Tensor::scalar(T::from_f64(acc / p.len() as f64)));
                }
            }
        }
        self.last_forward = mask;
        Ok(())
    }

    /// Value computed by the last forward pass (or bound/param value).
    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>> {
        self.node(id).value.as_ref().ok_or(Error::UnboundInput(id.0))
    }

    /// Gradient buffer of a node; `None` means untouched by the last
    /// backward (not on the differentiated path).
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.node(id).grad.as_ref()
    }

    /// Reverse-mode sweep from `loss` (which must be scalar-valued).
    /// Parameter grads in the loss's ancestor set are (re)computed from
    /// scratch; parameters outside it keep whatever they had. Intermediate
    /// grads are freed as soon as they have been propagated.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let mask = self.ancestors(&[loss]);
        let covered = (0..self.nodes.len())
            .all(|i| !mask[i] || self.last_forward.get(i).copied().unwrap_or(false));
        if !covered {
            return Err(Error::BackwardBeforeForward);
        }
        if self.node(loss).value.as_ref().is_none_or(|v| v.len() != 1) {
            return Err(Error::ShapeMismatch("backward needs a scalar loss".into()));
        }
        for (id, node) in self.nodes.iter_mut().enumerate() {
            if mask[id] && node.op == Op::Param {
                match node.grad.as_mut() {
                    Some(g) if g.dims() == node.value.as_ref().unwrap().dims() => g.fill(T::zero()),
                    _ => node.grad = Some(Tensor::zeros(node.value.as_ref().unwrap().dims())),
                }
            }
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(T::one()));

        let Graph { nodes, col_scratch, flip_scratch, .. } = self;
        for id in (0..nodes.len()).rev() {
            if !mask[id] {
                continue;
            }
            let (before, rest) = nodes.split_at_mut(id);
            let node = &rest[0];
            if matches!(node.op, Op::Input | Op::Param) {
                continue;
            }
            let Some(gout) = node.grad.as_ref() else { continue };

            match node.op {
                Op::Input | Op::Param => unreachable!(),
                Op::Conv { k, bias } => {
                    let (xid, wid) = (node.inputs[0], node.inputs[1]);
                    let x = before[xid.0].value.as_ref().unwrap();
                    let w = before[wid.0].value.as_ref().unwrap();
                    let (n, cin, h, w_) = x.dims4()?;
                    let geom = ConvGeom { n, cin, cout: w.dims()[0], h, w: w_, k };
                    if before[xid.0].needs_grad {
                        let mut gx = take_grad(&mut before[xid.0], &[n, cin, h, w_]);
                        let w = before[wid.0].value.as_ref().unwrap();
                        conv::backward_data(
                            gout.data(),
                            w.data(),
                            &geom,
                            gx.data_mut(),
                            col_scratch,
                            flip_scratch,
                        );
                        before[xid.0].grad = Some(gx);
                    }
                    {
                        let wdims = before[wid.0].value.as_ref().unwrap().dims().to_vec();
                        let mut gw = take_grad(&mut before[wid.0], &wdims);
                        let x = before[xid.0].value.as_ref().unwrap();
                        conv::backward_filter(gout.data(), x.data(), &geom, gw.data_mut(), col_scratch);
                        before[wid.0].grad = Some(gw);
                    }
                    if bias {
                        let bid = node.inputs[2];
                        let mut gb = take_grad(&mut before[bid.0], &[geom.cout]);
                        conv::backward_bias(gout.data(), &geom, gb.data_mut());
                        before[bid.0].grad = Some(gb);
                    }
                }
                Op::Relu => {
                    let xid = node.inputs[0];
                    if before[xid.0].needs_grad {
                        let dims = before[xid.0].value.as_ref().unwrap().dims().to_vec();
                        let mut gx = take_grad(&mut before[xid.0], &dims);
                        let xd = before[xid.0].value.as_ref().unwrap().data();
                        let gd = gout.data();
                        parallel::for_each_chunk_mut(gx.data_mut(), EW_CHUNK, |i, chunk| {
                            let base = i * EW_CHUNK;
                            for (j, o) in chunk.iter_mut().enumerate() {
                                if xd[base + j] > T::zero() {
                                    *o += gd[base + j];
                                }
                            }
                        });
                        before[xid.0].grad = Some(gx);
                    }
                }
                Op::Add => {
                    for slot in 0..2 {
                        let iid = node.inputs[slot];
                        if !before[iid.0].needs_grad {
                            continue;
                        }
                        let dims = before[iid.0].value.as_ref().unwrap().dims().to_vec();
                        let mut gx = take_grad(&mut before[iid.0], &dims);
                        let gd = gout.data();
                        parallel::for_each_chunk_mut(gx.data_mut(), EW_CHUNK, |i, chunk| {
                            let base = i * EW_CHUNK;
                            for (j, o) in chunk.iter_mut().enumerate() {
                                *o += gd[base + j];
                            }
                        });
                        before[iid.0].grad = Some(gx);
                    }
                }
                Op::Concat => {
                    let (n, ctotal, h, w) = node.value.as_ref().unwrap().dims4()?;
                    let hw = h * w;
                    let mut coff = 0;
                    for &iid in &node.inputs {
                        let ci = before[iid.0].value.as_ref().unwrap().dims()[1];
                        if before[iid.0].needs_grad {
                            let mut gx = take_grad(&mut before[iid.0], &[n, ci, h, w]);
                            let gd = gout.data();
                            let chw = ci * hw;
                            parallel::for_each_chunk_mut(gx.data_mut(), chw, |img, block| {
                                let src = &gd[(img * ctotal + coff) * hw..(img * ctotal + coff) * hw + chw];
                                for (o, &s) in block.iter_mut().zip(src) {
                                    *o += s;
                                }
                            });
                            before[iid.0].grad = Some(gx);
                        }
                        coff += ci;
                    }
                }
                Op::LogCosh => {
                    let (pid, tid) = (node.inputs[0], node.inputs[1]);
                    let count = before[pid.0].value.as_ref().unwrap().len();
                    let gscale = gout.data()[0].into_f64() / count as f64;
                    for (slot, sign) in [(pid, 1.0), (tid, -1.0)] {
                        if !before[slot.0].needs_grad {
                            continue;
                        }
                        let dims = before[slot.0].value.as_ref().unwrap().dims().to_vec();
                        let mut gx = take_grad(&mut before[slot.0], &dims);
                        let pd = before[pid.0].value.as_ref().unwrap().data();
                        let td = before[tid.0].value.as_ref().unwrap().data();
                        parallel::for_each_chunk_mut(gx.data_mut(), EW_CHUNK, |i, chunk| {
                            let base = i * EW_CHUNK;
                            for (j, o) in chunk.iter_mut().enumerate() {
                                let d = pd[base + j].into_f64() - td[base + j].into_f64();
                                *o += T::from_f64(sign * gscale * d.tanh());
                            }
                        });
                        before[slot.0].grad = Some(gx);
                    }
                }
            }
            // this node's grad has been fully propagated; free it
            rest[0].grad = None;
        }
        Ok(())
    }

    /// Ids of all parameters, in declaration order.
    pub fn param_ids(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].op == Op::Param)
            .map(NodeId)
            .collect()
    }

    pub fn param_name(&self, id: NodeId) -> Option<&str> {
        self.node(id).name.as_deref()
    }

    /// Mutable access to a parameter's value (optimizer updates, loading).
    pub fn param_value_mut(&mut self, id: NodeId) -> Result<&mut Tensor<T>> {
        let node = &mut self.nodes[id.0];
        if node.op != Op::Param {
            return Err(Error::BadConfig(format!("node {} is not a parameter", id.0)));
        }
        Ok(node.value.as_mut().expect("params always hold a value"))
    }

    /// Simultaneous value-mut / grad-ref access for in-place updates.
    pub fn param_value_and_grad(&mut self, id: NodeId) -> Result<(&mut Tensor<T>, Option<&Tensor<T>>)> {
        let node = &mut self.nodes[id.0];
        if node.op != Op::Param {
            return Err(Error::BadConfig(format!("node {} is not a parameter", id.0)));
        }
        Ok((node.value.as_mut().expect("params always hold a value"), node.grad.as_ref()))
    }

    /// Signs of every relu pre-activation after a forward pass. The
    /// finite-difference checker compares these between its two perturbed
    /// evaluations: a sign flip means the difference quotient straddled a
    /// relu kink and is not a valid derivative estimate there.
    pub(crate) fn relu_input_signs(&self) -> Vec<bool> {
        let mut signs = Vec::new();
        for node in &self.nodes {
            if node.op == Op::Relu {
                if let Some(v) = self.nodes[node.inputs[0].0].value.as_ref() {
                    signs.extend(v.data().iter().map(|x| *x > T::zero()));
                }
            }
        }
        signs
    }

    /// Total number of parameter elements.
    pub fn param_element_count(&self) -> u64 {
        self.nodes
            .iter()
            .filter(|n| n.op == Op::Param)
            .map(|n| n.value.as_ref().unwrap().len() as u64)
            .sum()
    }
}

/// Reuses the slot's tensor if the shape still matches, else reallocates.
fn ensure_value<'a, T: Scalar>(slot: &'a mut Option<Tensor<T>>, dims: &[usize]) -> &'a mut Tensor<T> {
    let fits = slot.as_ref().is_some_and(|t| t.dims() == dims);
    if !fits {
        *slot = Some(Tensor::zeros(dims));
    }
    slot.as_mut().unwrap()
}

/// Takes a node's grad buffer for accumulation, allocating zeros on first
/// touch. Caller puts it back once done.
fn take_grad<T: Scalar>(node: &mut Node<T>, dims: &[usize]) -> Tensor<T> {
    match node.grad.take() {
        Some(g) if g.dims() == dims => g,
        _ => Tensor::zeros(dims),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn rand_tensor(dims: &[usize], rng: &mut StdRng) -> Tensor<f64> {
        let data = (0..dims.iter().product::<usize>())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor::from_vec(dims, data).unwrap()
    }

    #[test]
    fn relu_and_add_forward() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.input(1);
        let y = g.relu(x);
        g.bind(x, Tensor::from_vec(&[1, 1, 1, 4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap()).unwrap();
        g.forward(&[y]).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[0.0, 0.0, 2.0, 0.0]);

        let z = g.add(x, y).unwrap();
        g.forward(&[z]).unwrap();
        assert_eq!(g.value(z).unwrap().data(), &[-1.0, 0.0, 4.0, -0.5]);
    }

    #[test]
    fn add_of_zeros_is_identity() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.input(2);
        let zeros = g.input(2);
        let s = g.add(x, zeros).unwrap();
        let xt = Tensor::from_vec(&[1, 2, 2, 2], (0..8).map(|i| i as f32).collect()).unwrap();
        g.bind(x, xt.clone()).unwrap();
        g.bind(zeros, Tensor::zeros(&[1, 2, 2, 2])).unwrap();
        g.forward(&[s]).unwrap();
        assert_eq!(g.value(s).unwrap().data(), xt.data());
    }

    #[test]
    fn concat_layout_and_backward_split() {
        let mut g: Graph<f64> = Graph::new();
        let mut rng = StdRng::seed_from_u64(5);
        let a = g.param("a", rand_tensor(&[2, 1, 2, 2], &mut rng));
        let b = g.param("b", rand_tensor(&[2, 3, 2, 2], &mut rng));
        let cat = g.concat(&[a, b]).unwrap();
        let target = g.input(4);
        g.bind(target, Tensor::zeros(&[2, 4, 2, 2])).unwrap();
        let loss = g.logcosh(cat, target).unwrap();
        g.forward(&[cat, loss]).unwrap();

        // channels (1, 3) concat to 4, in argument order
        let v = g.value(cat).unwrap();
        assert_eq!(v.dims(), &[2, 4, 2, 2]);
        let av = g.value(a).unwrap().clone();
        assert_eq!(&v.data()[0..4], &av.data()[0..4]);
        assert_eq!(&v.data()[16..20], &av.data()[4..8]); // second image block

        g.backward(loss).unwrap();
        // upstream grad of concat is tanh(v)/count; check the split halves
        let count = 32.0;
        let ga = g.grad(a).unwrap();
        for (gv, xv) in ga.data().iter().zip(av.data()) {
            assert!((gv - xv.tanh() / count).abs() < 1e-12);
        }
    }

    #[test]
    fn logcosh_scalar_values() {
        let mut g: Graph<f64> = Graph::new();
        let p = g.input(1);
        let t = g.input(1);
        let loss = g.logcosh(p, t).unwrap();
        // identical tensors -> 0
        g.bind(p, Tensor::from_vec(&[1, 1, 1, 2], vec![0.3, -0.7]).unwrap()).unwrap();
        g.bind(t, Tensor::from_vec(&[1, 1, 1, 2], vec![0.3, -0.7]).unwrap()).unwrap();
        g.forward(&[loss]).unwrap();
        assert_eq!(g.value(loss).unwrap().data()[0], 0.0);
        // d = 1 -> log(cosh 1); d = 50 -> 50 - ln 2 without overflow
        g.bind(p, Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap()).unwrap();
        g.bind(t, Tensor::from_vec(&[1, 1, 1, 1], vec![0.0]).unwrap()).unwrap();
        g.forward(&[loss]).unwrap();
        assert!((g.value(loss).unwrap().data()[0] - 1f64.cosh().ln()).abs() < 1e-15);
        assert!((g.value(loss).unwrap().data()[0] - 0.4337808304830271).abs() < 1e-12);
        g.bind(p, Tensor::from_vec(&[1, 1, 1, 1], vec![50.0]).unwrap()).unwrap();
        g.forward(&[loss]).unwrap();
        let v = g.value(loss).unwrap().data()[0];
        assert!(v.is_finite());
        assert!((v - (50.0 - std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut g: Graph<f32> = Graph::new();
        let p = g.param("p", Tensor::zeros(&[1, 1, 1, 1]));
        let t = g.input(1);
        let loss = g.logcosh(p, t).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::BackwardBeforeForward)));
    }

    #[test]
    fn disconnected_subgraph_grads_stay_untouched() {
        let mut g: Graph<f64> = Graph::new();
        let mut rng = StdRng::seed_from_u64(9);
        let p1 = g.param("p1", rand_tensor(&[1, 1, 2, 2], &mut rng));
        let p2 = g.param("p2", rand_tensor(&[1, 1, 2, 2], &mut rng));
        let t = g.input(1);
        g.bind(t, Tensor::zeros(&[1, 1, 2, 2])).unwrap();
        let l1 = g.logcosh(p1, t).unwrap();
        let l2 = g.logcosh(p2, t).unwrap();

        g.forward(&[l1]).unwrap();
        g.backward(l1).unwrap();
        assert!(g.grad(p1).is_some());
        assert!(g.grad(p2).is_none(), "p2 is not on l1's path");

        // after backward on l2, p1's grad from the first sweep is retained
        let g1 = g.grad(p1).unwrap().clone();
        g.forward(&[l2]).unwrap();
        g.backward(l2).unwrap();
        assert_eq!(g.grad(p1).unwrap().data(), g1.data());
        assert!(g.grad(p2).is_some());
    }

    #[test]
    fn zero_weight_conv_gives_zero_param_grad_upstream() {
        // loss depends on p only through a conv whose weight is zero, so
        // d(loss)/d(p) is exactly zero (but present, since p is on the path)
        let mut g: Graph<f64> = Graph::new();
        let mut rng = StdRng::seed_from_u64(10);
        let p = g.param("p", rand_tensor(&[1, 2, 3, 3], &mut rng));
        let w = g.param("w", Tensor::zeros(&[2, 2, 1, 1]));
        let y = g.conv(p, w, None).unwrap();
        let t = g.input(2);
        g.bind(t, rand_tensor(&[1, 2, 3, 3], &mut rng)).unwrap();
        let loss = g.logcosh(y, t).unwrap();
        g.forward(&[loss]).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(p).unwrap().data().iter().all(|&v| v == 0.0));
        // while dw is nonzero (x values flow into it)
        assert!(g.grad(w).unwrap().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn conv_validation_errors() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.input(3);
        let w5 = g.param("w5", Tensor::zeros(&[4, 3, 5, 5]));
        assert!(matches!(g.conv(x, w5, None), Err(Error::UnsupportedKernel(5))));
        let wbad = g.param("wbad", Tensor::zeros(&[4, 2, 3, 3]));
        assert!(matches!(g.conv(x, wbad, None), Err(Error::ChannelMismatch { .. })));
        let w = g.param("w", Tensor::zeros(&[4, 3, 3, 3]));
        let bbad = g.param("bbad", Tensor::zeros(&[5]));
        assert!(g.conv(x, w, Some(bbad)).is_err());
    }

    #[test]
    fn forward_is_deterministic_across_runs() {
        let run = || {
            let mut g: Graph<f32> = Graph::new();
            let mut rng = StdRng::seed_from_u64(77);
            let x = g.input(2);
            let wt = Tensor::from_vec(
                &[3, 2, 3, 3],
                (0..54).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            )
            .unwrap();
            let w = g.param("w", wt);
            let y0 = g.conv(x, w, None).unwrap();
            let y = g.relu(y0);
            let t = g.input(3);
            let xt = Tensor::from_vec(
                &[2, 2, 4, 4],
                (0..64).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            )
            .unwrap();
            g.bind(x, xt).unwrap();
            g.bind(t, Tensor::zeros(&[2, 3, 4, 4])).unwrap();
            let loss = g.logcosh(y, t).unwrap();
            g.forward(&[loss]).unwrap();
            g.backward(loss).unwrap();
            (
                g.value(loss).unwrap().data()[0].to_bits(),
                g.grad(w).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
