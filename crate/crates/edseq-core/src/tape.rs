//! Recording tape for reverse-mode differentiation. Forward ops append
//! nodes in topological order (parents always precede children); backward
//! walks the tape once in reverse, so the same tape always yields
//! bit-identical gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{GradMap, ParamId, ParamStore};
use crate::tensor::{self, Tensor, LOG_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

/// Operation kinds recordable on the tape. Metadata that gradients do not
/// flow through (lookup ids, scale factors) rides along in the variant.
#[derive(Debug, Clone)]
pub enum OpKind {
    /// Input with no gradient.
    Const,
    /// Leaf bound to a store parameter (value snapshotted at record time).
    Param(ParamId),
    MatMul,
    Add,
    ElementwiseMul,
    /// 1-D concatenation.
    Concat,
    /// Stack 1-D inputs as rows of a matrix.
    StackRows,
    /// Extract one row of a rank-2 input as a vector.
    Row(usize),
    Sigmoid,
    Tanh,
    Exp,
    Log,
    SoftmaxLastAxis,
    SumAxis(Option<usize>),
    /// Gather rows of the input table at the stored ids.
    EmbeddingLookup(Vec<usize>),
    /// Multiply by a constant.
    Scale(f64),
    /// Generalized KL(target || approx); differentiable in approx only.
    KlDiv,
    /// Identity forward; backward multiplies the gradient by -lambda.
    GradReverse(f64),
}

#[derive(Debug, Clone)]
struct Node {
    op: OpKind,
    inputs: Vec<NodeId>,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: BTreeMap<ParamId, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: OpKind, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value });
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(OpKind::Const, vec![], value)
    }

    /// Leaf for a store parameter. Snapshot per tape: repeated requests for
    /// the same parameter return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(OpKind::Param(id), vec![], store.value(id).clone());
        self.param_nodes.insert(id, n);
        n
    }

    /// Record one forward op. Inputs must already live on this tape.
    pub fn forward(&mut self, op: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor> = inputs.iter().map(|&i| &self.nodes[i.0].value).collect();
        let arity = |n: usize| -> Result<()> {
            if vals.len() != n {
                return Err(Error::shape("forward", format!("{op:?} expects {n} inputs, got {}", vals.len())));
            }
            Ok(())
        };
        let value = match &op {
            OpKind::Const | OpKind::Param(_) => {
                return Err(Error::invalid("leaves are created via constant()/param()".to_string()))
            }
            OpKind::MatMul => {
                arity(2)?;
                tensor::matmul(vals[0], vals[1])?
            }
            OpKind::Add => {
                arity(2)?;
                tensor::add(vals[0], vals[1])?
            }
            OpKind::ElementwiseMul => {
                arity(2)?;
                tensor::elementwise_mul(vals[0], vals[1])?
            }
            OpKind::Concat => tensor::concat(&vals)?,
            OpKind::StackRows => tensor::stack_rows(&vals)?,
            OpKind::Row(r) => {
                arity(1)?;
                if vals[0].rank() != 2 || *r >= vals[0].shape()[0] {
                    return Err(Error::shape(
                        "row",
                        format!("row {r} of shape {:?}", vals[0].shape()),
                    ));
                }
                Tensor::vector(vals[0].row(*r).to_vec())
            }
            OpKind::Sigmoid => {
                arity(1)?;
                tensor::sigmoid(vals[0])
            }
            OpKind::Tanh => {
                arity(1)?;
                tensor::tanh(vals[0])
            }
            OpKind::Exp => {
                arity(1)?;
                tensor::exp(vals[0])
            }
            OpKind::Log => {
                arity(1)?;
                tensor::log(vals[0])?
            }
            OpKind::SoftmaxLastAxis => {
                arity(1)?;
                tensor::softmax_lastaxis(vals[0])?
            }
            OpKind::SumAxis(axis) => {
                arity(1)?;
                tensor::sum_axis(vals[0], *axis)?
            }
            OpKind::EmbeddingLookup(ids) => {
                arity(1)?;
                tensor::embedding_lookup(vals[0], ids)?
            }
            OpKind::Scale(c) => {
                arity(1)?;
                tensor::scale(vals[0], *c)
            }
            OpKind::KlDiv => {
                arity(2)?;
                tensor::kl_div(vals[0], vals[1])?
            }
            OpKind::GradReverse(_) => {
                arity(1)?;
                vals[0].clone()
            }
        };
        Ok(self.push(op, inputs.to_vec(), value))
    }

    // Convenience wrappers.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Add, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::ElementwiseMul, &[a, b])
    }
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.forward(OpKind::Concat, parts)
    }
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        self.forward(OpKind::StackRows, rows)
    }
    pub fn row(&mut self, a: NodeId, r: usize) -> Result<NodeId> {
        self.forward(OpKind::Row(r), &[a])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Tanh, &[a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Exp, &[a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Log, &[a])
    }
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::SoftmaxLastAxis, &[a])
    }
    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::SumAxis(None), &[a])
    }
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.forward(OpKind::SumAxis(Some(axis)), &[a])
    }
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        self.forward(OpKind::EmbeddingLookup(ids.to_vec()), &[table])
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.forward(OpKind::Scale(c), &[a])
    }
    pub fn kl_div(&mut self, target: NodeId, approx: NodeId) -> Result<NodeId> {
        self.forward(OpKind::KlDiv, &[target, approx])
    }
    pub fn grad_reverse(&mut self, a: NodeId, lambda: f64) -> Result<NodeId> {
        self.forward(OpKind::GradReverse(lambda), &[a])
    }

    /// Reverse pass from a scalar loss node. Returns gradients keyed by
    /// parameter; parameters barred for `loss_name` receive no contribution.
    pub fn backward(&self, loss: NodeId, store: &ParamStore, loss_name: &str) -> Result<GradMap> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = GradMap::empty(store.len());

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                OpKind::Const => {}
                OpKind::Param(pid) => {
                    if !store.is_barred(*pid, loss_name) {
                        out.add_into(*pid, &gy);
                    }
                }
                OpKind::MatMul => {
                    let a = &self.nodes[node.inputs[0].0].value;
                    let b = &self.nodes[node.inputs[1].0].value;
                    let (ga, gb) = matmul_backward(a, b, &gy);
                    accumulate(&mut grads, node.inputs[0], ga);
                    accumulate(&mut grads, node.inputs[1], gb);
                }
                OpKind::Add => {
                    accumulate(&mut grads, node.inputs[0], gy.clone());
                    accumulate(&mut grads, node.inputs[1], gy);
                }
                OpKind::ElementwiseMul => {
                    let a = &self.nodes[node.inputs[0].0].value;
                    let b = &self.nodes[node.inputs[1].0].value;
                    accumulate(&mut grads, node.inputs[0], tensor::elementwise_mul(&gy, b)?);
                    accumulate(&mut grads, node.inputs[1], tensor::elementwise_mul(&gy, a)?);
                }
                OpKind::Concat => {
                    let mut offset = 0;
                    for &inp in &node.inputs {
                        let w = self.nodes[inp.0].value.numel();
                        let part = Tensor::vector(gy.data()[offset..offset + w].to_vec());
                        accumulate(&mut grads, inp, part);
                        offset += w;
                    }
                }
                OpKind::StackRows => {
                    let w = node.value.shape()[1];
                    for (r, &inp) in node.inputs.iter().enumerate() {
                        let part = Tensor::vector(gy.data()[r * w..(r + 1) * w].to_vec());
                        accumulate(&mut grads, inp, part);
                    }
                }
                OpKind::Row(r) => {
                    let x = &self.nodes[node.inputs[0].0].value;
                    let w = x.shape()[1];
                    let mut gx = Tensor::zeros(x.shape());
                    gx.data_mut()[r * w..(r + 1) * w].copy_from_slice(gy.data());
                    accumulate(&mut grads, node.inputs[0], gx);
                }
                OpKind::Sigmoid => {
                    let y = &node.value;
                    let gx = zip_map(&gy, y, |g, yv| g * yv * (1.0 - yv));
                    accumulate(&mut grads, node.inputs[0], gx);
                }
                OpKind::Tanh => {
                    let y = &node.value;
                    let gx = zip_map(&gy, y, |g, yv| g * (1.0 - yv * yv));
                    accumulate(&mut grads, node.inputs[0], gx);
                }
                OpKind::Exp => {
                    let y = &node.value;
                    let gx = zip_map(&gy, y, |g, yv| g * yv);
                    accumulate(&mut grads, node.inputs[0], gx);
                }
                OpKind::Log => {
                    let x = &self.nodes[node.inputs[0].0].value;
                    // Clamped region is flat: zero derivative below LOG_EPS.
                    let gx = zip_map(&gy, x, |g, xv| if xv >= LOG_EPS { g / xv } else { 0.0 });
                    accumulate(&mut grads, node.inputs[0], gx);
                }
                OpKind::SoftmaxLastAxis => {
                    let y = &node.value;
                    let w = *y.shape().last().unwrap();
                    let mut gx = vec![0.0; y.numel()];
                    for (row, (ychunk, gchunk)) in
                        y.data().chunks(w).zip(gy.data().chunks(w)).enumerate()
                    {
                        let dot: f64 = ychunk.iter().zip(gchunk).map(|(yv, gv)| yv * gv).sum();
                        for j in 0..w {
                            gx[row * w + j] = ychunk[j] * (gchunk[j] - dot);
                        }
                    }
                    accumulate(&mut grads, node.inputs[0], Tensor::new(y.shape().to_vec(), gx)?);
                }
                OpKind::SumAxis(axis) => {
                    let x = &self.nodes[node.inputs[0].0].value;
                    let gx = match axis {
                        None => {
                            let g = gy.item();
                            Tensor::new(x.shape().to_vec(), vec![g; x.numel()])?
                        }
                        Some(0) => {
                            let (r, c) = (x.shape()[0], x.shape()[1]);
                            let mut data = Vec::with_capacity(r * c);
                            for _ in 0..r {
                                data.extend_from_slice(gy.data());
                            }
                            Tensor::new(vec![r, c], data)?
                        }
                        Some(_) => {
                            let (r, c) = (x.shape()[0], x.shape()[1]);
                            let mut data = Vec::with_capacity(r * c);
                            for i in 0..r {
                                data.extend(std::iter::repeat_n(gy.data()[i], c));
                            }
                            Tensor::new(vec![r, c], data)?
                        }
                    };
                    accumulate(&mut grads, node.inputs[0], gx);
                }
                OpKind::EmbeddingLookup(ids) => {
                    let table = &self.nodes[node.inputs[0].0].value;
                    let d = table.shape()[1];
                    let mut gt = Tensor::zeros(table.shape());
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &gy.data()[r * d..(r + 1) * d];
                        let dst = &mut gt.data_mut()[id * d..(id + 1) * d];
                        for (a, &v) in dst.iter_mut().zip(src) {
                            *a += v;
                        }
                    }
                    accumulate(&mut grads, node.inputs[0], gt);
                }
                OpKind::Scale(c) => {
                    accumulate(&mut grads, node.inputs[0], tensor::scale(&gy, *c));
                }
                OpKind::KlDiv => {
                    // Gradient flows to approx only; targets are labels.
                    let t = &self.nodes[node.inputs[0].0].value;
                    let q = &self.nodes[node.inputs[1].0].value;
                    let g = gy.item();
                    let gq: Vec<f64> = t
                        .data()
                        .iter()
                        .zip(q.data())
                        .map(|(&tv, &qv)| {
                            if tv > 0.0 && qv >= LOG_EPS {
                                -g * tv / qv
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    accumulate(&mut grads, node.inputs[1], Tensor::new(q.shape().to_vec(), gq)?);
                }
                OpKind::GradReverse(lambda) => {
                    accumulate(&mut grads, node.inputs[0], tensor::scale(&gy, -lambda));
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn matmul_backward(a: &Tensor, b: &Tensor, gy: &Tensor) -> (Tensor, Tensor) {
    match (a.rank(), b.rank()) {
        (2, 2) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let mut ga = vec![0.0; m * k];
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                let grow = &gy.data()[i * n..(i + 1) * n];
                let arow = &a.data()[i * k..(i + 1) * k];
                for p in 0..k {
                    let brow = &b.data()[p * n..(p + 1) * n];
                    let mut s = 0.0;
                    for (gv, bv) in grow.iter().zip(brow) {
                        s += gv * bv;
                    }
                    ga[i * k + p] = s;
                    let av = arow[p];
                    let gbrow = &mut gb[p * n..(p + 1) * n];
                    for (gbv, gv) in gbrow.iter_mut().zip(grow) {
                        *gbv += av * gv;
                    }
                }
            }
            (
                Tensor::new(vec![m, k], ga).unwrap(),
                Tensor::new(vec![k, n], gb).unwrap(),
            )
        }
        (1, 2) => {
            let k = a.shape()[0];
            let n = b.shape()[1];
            let mut ga = vec![0.0; k];
            let mut gb = vec![0.0; k * n];
            for p in 0..k {
                let brow = &b.data()[p * n..(p + 1) * n];
                let mut s = 0.0;
                for (gv, bv) in gy.data().iter().zip(brow) {
                    s += gv * bv;
                }
                ga[p] = s;
                let av = a.data()[p];
                let gbrow = &mut gb[p * n..(p + 1) * n];
                for (gbv, gv) in gbrow.iter_mut().zip(gy.data()) {
                    *gbv += av * gv;
                }
            }
            (Tensor::vector(ga), Tensor::new(vec![k, n], gb).unwrap())
        }
        (2, 1) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let mut ga = vec![0.0; m * k];
            let mut gb = vec![0.0; k];
            for i in 0..m {
                let g = gy.data()[i];
                let arow = &a.data()[i * k..(i + 1) * k];
                for p in 0..k {
                    ga[i * k + p] = g * b.data()[p];
                    gb[p] += g * arow[p];
                }
            }
            (Tensor::new(vec![m, k], ga).unwrap(), Tensor::vector(gb))
        }
        _ => unreachable!("matmul forward validated ranks"),
    }
}
