//! Recorded computation graph and the reverse pass.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef(pub(crate) usize);

impl NodeRef {
    pub fn id(self) -> usize {
        self.0
    }
}

/// A differentiable operation as recorded on the graph.
///
/// `backward` receives the input values, the forward output, the upstream
/// gradient, and a mask of which inputs need a gradient. It returns one entry
/// per input; entries for inputs that do not need a gradient may be `None`.
pub trait Operation: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Option<Box<dyn Operation>>,
    inputs: Vec<NodeRef>,
    requires_grad: bool,
}

/// Append-only record of a computation. Node ids are assigned in insertion
/// order, so every node's inputs have smaller ids than the node itself.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every node in insertion order.
    pub fn node_refs(&self) -> impl Iterator<Item = NodeRef> {
        (0..self.nodes.len()).map(NodeRef)
    }

    /// Trainable leaf: gradients are accumulated into it.
    pub fn leaf(&mut self, value: Tensor) -> NodeRef {
        self.push(value, None, vec![], true)
    }

    /// Constant leaf: no gradient flows into it or through ops fed only by constants.
    pub fn constant(&mut self, value: Tensor) -> NodeRef {
        self.push(value, None, vec![], false)
    }

    /// Records the result of `op` applied to `inputs`.
    pub fn record(&mut self, value: Tensor, op: Box<dyn Operation>, inputs: &[NodeRef]) -> Result<NodeRef> {
        for &i in inputs {
            self.check(i)?;
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push(value, Some(op), inputs.to_vec(), requires_grad))
    }

    fn push(&mut self, value: Tensor, op: Option<Box<dyn Operation>>, inputs: Vec<NodeRef>, requires_grad: bool) -> NodeRef {
        let id = self.nodes.len();
        self.nodes.push(Node { value, grad: None, op, inputs, requires_grad });
        NodeRef(id)
    }

    fn check(&self, n: NodeRef) -> Result<()> {
        if n.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(n.0))
        }
    }

    pub fn value(&self, n: NodeRef) -> &Tensor {
        &self.nodes[n.0].value
    }

    pub fn shape(&self, n: NodeRef) -> &[usize] {
        self.nodes[n.0].value.shape()
    }

    pub fn requires_grad(&self, n: NodeRef) -> bool {
        self.nodes[n.0].requires_grad
    }

    /// Accumulated gradient, if any backward pass has reached this node.
    pub fn grad(&self, n: NodeRef) -> Option<&Tensor> {
        self.nodes[n.0].grad.as_ref()
    }

    /// Accumulated gradient, or zeros of the node's shape.
    pub fn grad_or_zeros(&self, n: NodeRef) -> Tensor {
        match &self.nodes[n.0].grad {
            Some(g) => g.clone(),
            None => self.nodes[n.0].value.zeros_like(),
        }
    }

    pub fn op_name(&self, n: NodeRef) -> &'static str {
        self.nodes[n.0].op.as_ref().map_or("leaf", |op| op.name())
    }

    pub fn inputs(&self, n: NodeRef) -> &[NodeRef] {
        &self.nodes[n.0].inputs
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Reverse pass from a scalar `root`. Gradients are summed into whatever
    /// the nodes already hold; call [`Graph::zero_grad`] to reset.
    pub fn backward(&mut self, root: NodeRef) -> Result<()> {
        self.check(root)?;
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(Error::InvalidRoot(root_value.shape().to_vec()));
        }
        let mut pending: Vec<Option<Tensor>> = Vec::new();
        pending.resize_with(root.0 + 1, || None);
        pending[root.0] = Some(Tensor::scalar(1.0));

        for id in (0..=root.0).rev() {
            let Some(upstream) = pending[id].take() else { continue };
            let node = &self.nodes[id];
            if let Some(op) = &node.op {
                let needs: Vec<bool> = node.inputs.iter().map(|i| self.nodes[i.0].requires_grad).collect();
                if needs.iter().any(|&b| b) {
                    let inputs: Vec<&Tensor> = node.inputs.iter().map(|i| &self.nodes[i.0].value).collect();
                    let grads = op.backward(&inputs, &node.value, &upstream, &needs);
                    debug_assert_eq!(grads.len(), node.inputs.len(), "{}", op.name());
                    for ((input, grad), need) in node.inputs.iter().zip(grads).zip(needs) {
                        let (Some(grad), true) = (grad, need) else { continue };
                        debug_assert_eq!(grad.shape(), self.nodes[input.0].value.shape(), "{}", op.name());
                        match &mut pending[input.0] {
                            Some(acc) => acc.add_assign(&grad)?,
                            slot @ None => *slot = Some(grad),
                        }
                    }
                }
            }
            let node = &mut self.nodes[id];
            if node.requires_grad {
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&upstream)?,
                    slot @ None => *slot = Some(upstream),
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_precede_outputs() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(1.0));
        let b = g.leaf(Tensor::scalar(2.0));
        let c = g.add(a, b).unwrap();
        let d = g.mul(c, a).unwrap();
        for n in [c, d] {
            assert!(g.inputs(n).iter().all(|i| i.id() < n.id()));
        }
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(&[2], 1.0).unwrap());
        assert!(matches!(g.backward(a), Err(Error::InvalidRoot(_))));
    }

    #[test]
    fn unrelated_nodes_keep_zero_grad() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[3], 1.0).unwrap());
        let y = g.leaf(Tensor::new(&[3], 1.0).unwrap());
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad_or_zeros(y).data(), &[0.0; 3]);
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 3]);
    }

    #[test]
    fn constants_get_no_grad() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[2], 3.0).unwrap());
        let c = g.constant(Tensor::new(&[2], 2.0).unwrap());
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2], vec![2.0, -1.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[8.0, -4.0]);
        g.zero_grad();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0, -2.0]);
    }
}
