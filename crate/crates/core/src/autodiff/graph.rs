use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvSpec};
use crate::losses;
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

/// Operation recorded for a node.
#[derive(Debug, Clone)]
pub enum Op {
    Input,
    Param(String),
    Conv2d(ConvSpec),
    DepthwiseXcorr,
    ChannelSum,
    /// `x + b` with `b` a single-element tensor.
    AddScalar,
    Resize([usize; 3]),
    Add,
    Relu,
    ScaleShift,
    Scale(f64),
    Exp,
    Sum,
    /// Arithmetic mean of several single-element nodes.
    MeanOf,
    /// `Σ x·w` against a constant weight tensor.
    Dot(Tensor),
    LogisticLoss(Tensor),
    SoftmaxCrossEntropy {
        positive: Vec<bool>,
        balanced: bool,
    },
    IouLoss {
        target: Tensor,
        positive: Vec<bool>,
    },
    /// A value computed outside the graph; gradients cannot pass through it.
    Opaque(&'static str),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Conv2d(_) => "conv2d",
            Op::DepthwiseXcorr => "depthwise_xcorr",
            Op::ChannelSum => "channel_sum",
            Op::AddScalar => "add_scalar",
            Op::Resize(_) => "resize_trilinear",
            Op::Add => "add",
            Op::Relu => "relu",
            Op::ScaleShift => "scale_shift",
            Op::Scale(_) => "scale",
            Op::Exp => "exp",
            Op::Sum => "sum",
            Op::MeanOf => "mean_of",
            Op::Dot(_) => "dot",
            Op::LogisticLoss(_) => "logistic_loss",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::IouLoss { .. } => "iou_loss",
            Op::Opaque(name) => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only computation graph evaluated eagerly as nodes are added.
///
/// Inputs always precede the nodes that consume them, so the node list is a
/// topological order and the graph is acyclic by construction.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, NodeId>,
}

impl Graph {
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
        &self.nodes[id].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].inputs
    }

    /// Number of nodes whose op has the given name.
    pub fn count_op(&self, name: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.name() == name).count()
    }

    /// Parameter names referenced by the graph, with their node ids.
    pub fn param_nodes(&self) -> BTreeMap<&str, NodeId> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v)).collect()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let needs_grad = matches!(op, Op::Param(_)) || inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, vec![], value)
    }

    /// Registers a named parameter. Repeated registrations of the same name
    /// return the same node, so both siamese branches share one leaf.
    pub fn param(&mut self, name: &str, value: &Tensor) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.push(Op::Param(name.to_string()), vec![], value.clone());
        self.params.insert(name.to_string(), id);
        id
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, spec: ConvSpec) -> Result<NodeId> {
        let v = kernels::conv2d(self.value(x), self.value(w), self.value(b), &spec)?;
        Ok(self.push(Op::Conv2d(spec), vec![x, w, b], v))
    }

    pub fn depthwise_xcorr(&mut self, search: NodeId, template: NodeId) -> Result<NodeId> {
        let v = kernels::depthwise_xcorr(self.value(search), self.value(template))?;
        Ok(self.push(Op::DepthwiseXcorr, vec![search, template], v))
    }

    pub fn channel_sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = kernels::channel_sum(self.value(x))?;
        Ok(self.push(Op::ChannelSum, vec![x], v))
    }

    pub fn add_scalar(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let bv = self.value(b).item()?;
        let v = self.value(x).map(|e| e + bv);
        Ok(self.push(Op::AddScalar, vec![x, b], v))
    }

    pub fn resize(&mut self, x: NodeId, target: [usize; 3]) -> Result<NodeId> {
        let v = kernels::resize_trilinear(self.value(x), target)?;
        Ok(self.push(Op::Resize(target), vec![x], v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add, vec![a, b], v))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = kernels::relu(self.value(x));
        self.push(Op::Relu, vec![x], v)
    }

    pub fn scale_shift(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let v = kernels::scale_shift(self.value(x), self.value(gamma), self.value(beta))?;
        Ok(self.push(Op::ScaleShift, vec![x, gamma, beta], v))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let v = self.value(x).map(|e| e * factor);
        self.push(Op::Scale(factor), vec![x], v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::exp);
        self.push(Op::Exp, vec![x], v)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum, vec![x], v)
    }

    pub fn mean_of(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::Autodiff("mean_of needs at least one node".into()));
        }
        let mut acc = 0.0;
        for &x in xs {
            acc += self.value(x).item()?;
        }
        let v = Tensor::scalar(acc / xs.len() as f64);
        Ok(self.push(Op::MeanOf, xs.to_vec(), v))
    }

    pub fn dot(&mut self, x: NodeId, weights: Tensor) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape() != weights.shape() {
            return Err(Error::mismatch("dot", xv.shape(), weights.shape()));
        }
        let v = xv.data().iter().zip(weights.data()).fold(0.0, |a, (x, w)| a + x * w);
        Ok(self.push(Op::Dot(weights), vec![x], Tensor::scalar(v)))
    }

    pub fn logistic_loss(&mut self, response: NodeId, labels: Tensor) -> Result<NodeId> {
        let v = losses::logistic_loss(self.value(response), &labels)?;
        Ok(self.push(Op::LogisticLoss(labels), vec![response], Tensor::scalar(v)))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, positive: Vec<bool>, balanced: bool) -> Result<NodeId> {
        let v = losses::softmax_cross_entropy(self.value(logits), &positive, balanced)?;
        Ok(self.push(
            Op::SoftmaxCrossEntropy { positive, balanced },
            vec![logits],
            Tensor::scalar(v),
        ))
    }

    pub fn iou_loss(&mut self, pred: NodeId, target: Tensor, positive: Vec<bool>) -> Result<NodeId> {
        let v = losses::iou_loss(self.value(pred), &target, &positive)?.value;
        Ok(self.push(Op::IouLoss { target, positive }, vec![pred], Tensor::scalar(v)))
    }

    /// Records a value computed outside the graph from `inputs`.
    pub fn opaque(&mut self, name: &'static str, inputs: &[NodeId], value: Tensor) -> NodeId {
        self.push(Op::Opaque(name), inputs.to_vec(), value)
    }

    /// Reverse-mode sweep from a single-element `loss` node.
    ///
    /// Every parameter registered in the graph receives an entry; parameters
    /// the loss does not depend on get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be scalar-shaped, node {loss} has shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss + 1];
        grads[loss] = Some(Tensor::ones(lv.shape())?);

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Op::Param(_) = node.op {
                grads[id] = Some(g);
                continue;
            }
            if !node.needs_grad || node.inputs.is_empty() {
                continue;
            }
            let input_grads = self.local_backward(node, &g)?;
            for (&input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[input].needs_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&ig)?,
                    slot => *slot = Some(ig),
                }
            }
        }

        let mut out = Gradients::new();
        for (name, &id) in &self.params {
            let g = match grads.get_mut(id).and_then(Option::take) {
                Some(g) => g,
                None => Tensor::zeros_like(self.value(id)),
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn local_backward(&self, node: &Node, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let val = |i: usize| &self.nodes[node.inputs[i]].value;
        let wants = |i: usize| self.nodes[node.inputs[i]].needs_grad;
        Ok(match &node.op {
            Op::Input | Op::Param(_) => vec![],
            Op::Conv2d(spec) => {
                let (gx, gw, gb) = kernels::conv2d_backward_impl(val(0), val(1), val(2), spec, g, wants(0))?;
                vec![gx, Some(gw), Some(gb)]
            }
            Op::DepthwiseXcorr => {
                let (gs, gt) = kernels::depthwise_xcorr_backward(val(0), val(1), g)?;
                vec![Some(gs), Some(gt)]
            }
            Op::ChannelSum => {
                let (c, h, w) = val(0).dims3()?;
                let plane = g.data();
                let data = (0..c * h * w).map(|i| plane[i % (h * w)]).collect();
                vec![Some(Tensor::new(&[c, h, w], data)?)]
            }
            Op::AddScalar => vec![Some(g.clone()), Some(Tensor::scalar(g.sum()))],
            Op::Resize(_) => vec![Some(kernels::resize_trilinear_backward(val(0).shape(), g)?)],
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Relu => vec![Some(kernels::relu_backward(val(0), g)?)],
            Op::ScaleShift => {
                let (gx, gg, gb) = kernels::scale_shift_backward(val(0), val(1), val(2), g)?;
                vec![Some(gx), Some(gg), Some(gb)]
            }
            Op::Scale(f) => vec![Some(g.map(|e| e * f))],
            Op::Exp => vec![Some(node.value.zip_map(g, "exp_backward", |y, g| y * g)?)],
            Op::Sum => {
                let gv = g.item()?;
                vec![Some(Tensor::full(val(0).shape(), gv)?)]
            }
            Op::MeanOf => {
                let gv = g.item()? / node.inputs.len() as f64;
                node.inputs.iter().map(|_| Some(Tensor::scalar(gv))).collect()
            }
            Op::Dot(w) => {
                let gv = g.item()?;
                vec![Some(w.map(|e| e * gv))]
            }
            Op::LogisticLoss(labels) => {
                let gv = g.item()?;
                vec![Some(losses::logistic_loss_grad(val(0), labels)?.map(|e| e * gv))]
            }
            Op::SoftmaxCrossEntropy { positive, balanced } => {
                let gv = g.item()?;
                vec![Some(
                    losses::softmax_cross_entropy_grad(val(0), positive, *balanced)?.map(|e| e * gv),
                )]
            }
            Op::IouLoss { target, positive } => {
                let gv = g.item()?;
                vec![Some(losses::iou_loss_grad(val(0), target, positive)?.map(|e| e * gv))]
            }
            Op::Opaque(name) => {
                return Err(Error::Autodiff(format!("op `{name}` has no differentiable rule")));
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let w = g.param("w", &Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        assert!(grads["w"].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn xcorr_template_gradient_counts_windows() {
        let mut g = Graph::new();
        let s = g.input(Tensor::ones(&[1, 3, 3]).unwrap());
        let t = g.param("t", &Tensor::ones(&[1, 2, 2]).unwrap());
        let r = g.depthwise_xcorr(s, t).unwrap();
        let loss = g.sum(r);
        let grads = g.backward(loss).unwrap();
        assert!(grads["t"].data().iter().all(|&v| v == 4.0));
        assert_eq!(grads.len(), 1, "non-parameter leaves get no entry");
    }

    #[test]
    fn rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let w = g.param("w", &Tensor::ones(&[2]).unwrap());
        assert!(matches!(g.backward(w), Err(Error::Autodiff(_))));
    }

    #[test]
    fn opaque_op_is_named_in_error() {
        let mut g = Graph::new();
        let w = g.param("w", &Tensor::ones(&[2]).unwrap());
        let o = g.opaque("cosine_window", &[w], Tensor::ones(&[2]).unwrap());
        let loss = g.sum(o);
        let err = g.backward(loss).unwrap_err().to_string();
        assert!(err.contains("cosine_window"), "{err}");
    }

    #[test]
    fn shared_param_registers_once() {
        let mut g = Graph::new();
        let t = Tensor::ones(&[3]).unwrap();
        let a = g.param("w", &t);
        let b = g.param("w", &t);
        assert_eq!(a, b);
        let s = g.add(a, b).unwrap();
        let loss = g.sum(s);
        assert!(g.backward(loss).unwrap()["w"].data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn unreached_param_gets_zero_gradient() {
        let mut g = Graph::new();
        let a = g.param("a", &Tensor::ones(&[2]).unwrap());
        let _b = g.param("b", &Tensor::ones(&[3]).unwrap());
        let loss = g.sum(a);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads["b"], Tensor::zeros(&[3]).unwrap());
    }
}
