use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{BatchStats, Gradients, Scalar, Tape, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers (batch-norm running statistics) are stored but not optimized.
    pub trainable: bool,
}

/// Named parameters and buffers of a network, in construction order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Trainable scalar counts grouped by the first `depth` components of
    /// the dotted parameter names, in first-seen order.
    pub fn counts_by_prefix(&self, depth: usize) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for e in self.entries.iter().filter(|e| e.trainable) {
            let prefix = e.name.split('.').take(depth).collect::<Vec<_>>().join(".");
            match out.iter_mut().find(|(p, _)| *p == prefix) {
                Some((_, n)) => *n += e.value.len(),
                None => out.push((prefix, e.value.len())),
            }
        }
        out
    }

    /// Converts every tensor to another element type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }
}

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform<T: Scalar>(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
    }
}

/// Whether a forward pass trains (batch statistics, dropout) or evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-pass state: parameter leaves on the tape, the dropout stream and
/// the batch statistics to be folded into running averages afterwards.
pub struct Forward<'t, 's, T> {
    tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    leaves: RefCell<HashMap<ParamId, Var<'t, T>>>,
    mode: Mode,
    rng: RefCell<ChaCha8Rng>,
    bn_updates: RefCell<Vec<(ParamId, ParamId, BatchStats<T>)>>,
}

impl<'t, 's, T: Scalar> Forward<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, mode: Mode, dropout_seed: u64) -> Self {
        Forward {
            tape,
            store,
            leaves: RefCell::new(HashMap::new()),
            mode,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(dropout_seed)),
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// The tape variable for a parameter, created on first use.
    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        if let Some(v) = self.leaves.borrow().get(&id) {
            return *v;
        }
        let entry = self.store.entry(id);
        let var = self.tape.leaf(entry.value.clone(), entry.trainable);
        self.leaves.borrow_mut().insert(id, var);
        var
    }

    /// Inverted-dropout mask with keep probability `1 - rate`.
    pub(crate) fn dropout_mask(&self, shape: &[usize], rate: f64) -> Tensor<T> {
        let keep = 1.0 - rate;
        let scale = T::lit(1.0 / keep);
        let mut rng = self.rng.borrow_mut();
        Tensor::from_fn(shape, |_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        })
    }

    pub(crate) fn push_bn_stats(&self, mean: ParamId, var: ParamId, stats: BatchStats<T>) {
        self.bn_updates.borrow_mut().push((mean, var, stats));
    }

    /// Gradients of every trainable parameter used in this pass.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        let leaves = self.leaves.borrow();
        let mut out: Vec<(ParamId, Tensor<T>)> = leaves
            .iter()
            .filter_map(|(&id, &var)| grads.take(var).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| id.0);
        out
    }

    /// Batch statistics recorded in training mode.
    pub fn take_bn_updates(&self) -> Vec<(ParamId, ParamId, BatchStats<T>)> {
        std::mem::take(&mut self.bn_updates.borrow_mut())
    }
}

/// Folds training batch statistics into the running buffers.
pub fn apply_bn_updates<T: Scalar>(
    store: &mut ParamStore<T>,
    updates: Vec<(ParamId, ParamId, BatchStats<T>)>,
    momentum: f64,
) {
    let m = T::lit(momentum);
    for (mean_id, var_id, stats) in updates {
        for (r, &b) in store.get_mut(mean_id).data_mut().iter_mut().zip(&stats.mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in store.get_mut(var_id).data_mut().iter_mut().zip(&stats.var) {
            *r = (T::one() - m) * *r + m * b;
        }
    }
}
