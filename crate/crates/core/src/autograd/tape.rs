use std::cell::RefCell;
use std::rc::Rc;

use super::{Scalar, Tensor};

/// What a backward closure sees when it is replayed.
pub(crate) struct BackwardArgs<'a, T> {
    /// Gradient flowing into the node's output.
    pub grad: &'a Tensor<T>,
    /// Forward values of the node's parents, in recording order.
    pub inputs: &'a [Rc<Tensor<T>>],
    /// Forward value of the node itself.
    pub output: &'a Tensor<T>,
    /// Which parents actually need a gradient.
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Records operations for reverse-mode differentiation.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// A tape that records backward closures.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that only evaluates; no backward closures are kept.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.leaf_shared(Rc::new(value), requires_grad)
    }

    pub fn leaf_shared(&self, value: Rc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub(crate) fn record(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: impl Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad =
            self.grad_enabled && parents.iter().any(|p| nodes[p.id].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Propagates the seed gradients back through the recorded graph.
    ///
    /// Gradients of intermediate nodes are released as soon as they have
    /// been pushed to their parents; only leaves keep theirs.
    pub fn backward(&self, seeds: &[(Var<'_, T>, Tensor<T>)]) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut top = 0;
        for (var, g) in seeds {
            assert_eq!(
                g.shape(),
                nodes[var.id].value.shape(),
                "seed gradient shape mismatch"
            );
            accumulate(&mut grads[var.id], g.clone());
            top = top.max(var.id + 1);
        }
        for id in (0..top).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<Rc<Tensor<T>>> =
                node.parents.iter().map(|&p| Rc::clone(&nodes[p].value)).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&BackwardArgs {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            });
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    if nodes[p].requires_grad {
                        accumulate(&mut grads[p], pg);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}
