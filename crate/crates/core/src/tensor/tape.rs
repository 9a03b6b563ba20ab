use std::cell::RefCell;
use std::rc::Rc;

use super::{Real, Result, Tensor, TensorError};

/// Maps the gradient of a node's output to one gradient per parent
/// (`None` when that parent receives nothing).
pub type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Append-only record of executed operations.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a value that gradients are not tracked for.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            requires_grad: false,
            backward: None,
        })
    }

    /// Records a leaf whose gradient is wanted (copies the values).
    pub fn param(&self, value: &Tensor<T>) -> Var<'_, T> {
        let mut v = Tensor::from_vec(value.shape().to_vec(), value.data().to_vec()).expect("shape already validated");
        v.set_requires_grad(true);
        self.leaf(v)
    }

    /// Records a leaf, tracking gradients iff `value.requires_grad()`.
    pub fn leaf(&self, mut value: Tensor<T>) -> Var<'_, T> {
        let requires_grad = value.requires_grad();
        value.zero_grad();
        self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            requires_grad,
            backward: None,
        })
    }

    /// Records the output of a primitive. `backward` is dropped when no
    /// parent needs a gradient.
    pub fn record(&self, parents: &[Var<'_, T>], value: Tensor<T>, backward: BackwardFn<T>) -> Var<'_, T> {
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(Node {
            value: Rc::new(value),
            parents: ids,
            requires_grad,
            backward: requires_grad.then_some(backward),
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar loss with unit seed.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        self.backward_seeded(loss, T::one())
    }

    /// Reverse sweep from a scalar loss with an explicit seed (`dL/dloss`).
    pub fn backward_seeded(&self, loss: &Var<'_, T>, seed: T) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![seed]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(bw) = &node.backward {
                let contributions = bw(&g);
                debug_assert_eq!(contributions.len(), node.parents.len());
                for (&p, c) in node.parents.iter().zip(contributions) {
                    let Some(c) = c else { continue };
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(c.len(), nodes[p].value.len());
                    match &mut grads[p] {
                        Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, &b)| *a += b),
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            if node.parents.is_empty() && node.requires_grad {
                grads[id] = Some(g);
            }
        }
        // Only leaves keep their gradient; everything else was taken above.
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients of the loss w.r.t. every tracked leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, var: &Var<'_, T>) -> Option<Tensor<T>> {
        self.grads[var.id]
            .as_ref()
            .map(|g| Tensor::from_vec(self.shapes[var.id].clone(), g.clone()).unwrap())
    }

    pub fn raw(&self, var: &Var<'_, T>) -> Option<&[T]> {
        self.grads[var.id].as_deref()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        let v = (*self.value()).clone();
        self.tape.constant(v)
    }
}
