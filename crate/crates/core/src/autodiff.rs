//! Reverse-mode automatic differentiation over a tape of tensor operations.
//!
//! Values are computed eagerly as the graph is built (the build is the
//! forward pass); `backward` walks the tape in reverse and accumulates
//! gradients by summing over all paths. The node list is append-only, so the
//! graph is acyclic by construction.

use crate::error::{Error, Result};
use crate::tensor::{self, Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// scale * x + shift, elementwise with scalar constants; only the scale
    /// matters for the backward pass.
    Affine {
        x: NodeId,
        scale: f64,
    },
    LeakyRelu {
        x: NodeId,
        slope: f64,
    },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Clamp {
        x: NodeId,
        lo: f64,
        hi: f64,
    },
    MeanAll(NodeId),
    Reshape(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Tensor,
}

pub struct Tape {
    precision: Precision,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Tape {
            precision,
            nodes: Vec::new(),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.nodes.push(Node { op, value, grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b), self.precision)?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = tensor::add_bias(self.value(x), self.value(bias), self.precision)?;
        Ok(self.push(Op::AddBias(x, bias), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::ew_add(self.value(a), self.value(b), self.precision)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::ew_mul(self.value(a), self.value(b), self.precision)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let p = self.precision;
        let v = tensor::map_unary(self.value(x), p, |t| scale * t + shift);
        self.push(Op::Affine { x, scale }, v)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let p = self.precision;
        let v = tensor::map_unary(self.value(x), p, |t| if t > 0.0 { t } else { slope * t });
        self.push(Op::LeakyRelu { x, slope }, v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let p = self.precision;
        let v = tensor::map_unary(self.value(x), p, f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let p = self.precision;
        let v = tensor::map_unary(self.value(x), p, |t| 1.0 / (1.0 + (-t).exp()));
        self.push(Op::Sigmoid(x), v)
    }

    /// Natural log; errors on non-positive input. Clamp upstream when the
    /// argument is a probability.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        if let Some(&bad) = self.value(x).data().iter().find(|v| **v <= 0.0) {
            return Err(Error::LogDomain(bad));
        }
        let p = self.precision;
        let v = tensor::map_unary(self.value(x), p, f64::ln);
        Ok(self.push(Op::Log(x), v))
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let p = self.precision;
        let v = tensor::map_unary(self.value(x), p, |t| t.max(lo).min(hi));
        self.push(Op::Clamp { x, lo, hi }, v)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let v = tensor::mean_all(self.value(x), self.precision);
        self.push(Op::MeanAll(x), v)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), v))
    }

    fn accumulate(&mut self, id: NodeId, delta: &Tensor) {
        let p = self.precision;
        let g = &mut self.nodes[id.0].grad;
        debug_assert_eq!(g.shape(), delta.shape());
        for (a, d) in g.data_mut().iter_mut().zip(delta.data()) {
            *a = p.round(*a + d);
        }
    }

    /// Reverse pass from a scalar root. Gradients are zeroed first, then
    /// accumulated as sums over all paths.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::NonScalarRoot(
                self.nodes[root.0].value.shape().to_vec(),
            ));
        }
        for node in &mut self.nodes {
            node.grad = Tensor::zeros(node.value.shape().to_vec());
        }
        self.nodes[root.0].grad = Tensor::scalar(1.0);

        let p = self.precision;
        for i in (0..=root.0).rev() {
            let op = self.nodes[i].op.clone();
            let g = self.nodes[i].grad.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = tensor::matmul_nt(&g, self.value(b), p)?;
                    let db = tensor::matmul_tn(self.value(a), &g, p)?;
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::AddBias(x, bias) => {
                    self.accumulate(x, &g);
                    let db = tensor::col_sum(&g, p)?;
                    self.accumulate(bias, &db);
                }
                Op::Add(a, b) => {
                    self.accumulate(a, &g);
                    self.accumulate(b, &g);
                }
                Op::Mul(a, b) => {
                    let da = tensor::ew_mul(&g, self.value(b), p)?;
                    let db = tensor::ew_mul(&g, self.value(a), p)?;
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Affine { x, scale } => {
                    let dx = tensor::map_unary(&g, p, |t| scale * t);
                    self.accumulate(x, &dx);
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(x).clone();
                    let mut dx = g.clone();
                    for (d, xi) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if *xi <= 0.0 {
                            *d = p.round(*d * slope);
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::Tanh(x) => {
                    let y = self.nodes[i].value.clone();
                    let mut dx = g.clone();
                    for (d, yi) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d = p.round(*d * (1.0 - yi * yi));
                    }
                    self.accumulate(x, &dx);
                }
                Op::Sigmoid(x) => {
                    let y = self.nodes[i].value.clone();
                    let mut dx = g.clone();
                    for (d, yi) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d = p.round(*d * yi * (1.0 - yi));
                    }
                    self.accumulate(x, &dx);
                }
                Op::Log(x) => {
                    let xv = self.value(x).clone();
                    let mut dx = g.clone();
                    for (d, xi) in dx.data_mut().iter_mut().zip(xv.data()) {
                        *d = p.round(*d / xi);
                    }
                    self.accumulate(x, &dx);
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = self.value(x).clone();
                    let mut dx = g.clone();
                    for (d, xi) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if *xi < lo || *xi > hi {
                            *d = 0.0;
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::MeanAll(x) => {
                    let n = self.value(x).numel() as f64;
                    let gs = g.scalar_value();
                    let shape = self.value(x).shape().to_vec();
                    let mut dx = Tensor::zeros(shape);
                    for d in dx.data_mut() {
                        *d = p.round(gs / n);
                    }
                    self.accumulate(x, &dx);
                }
                Op::Reshape(x) => {
                    let dx = g.reshape(self.value(x).shape().to_vec())?;
                    self.accumulate(x, &dx);
                }
            }
        }
        Ok(())
    }
}
