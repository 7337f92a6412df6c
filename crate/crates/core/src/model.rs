//! Named parameter storage and the glue that binds parameters onto a tape.

use std::collections::{HashMap, HashSet};

use crate::error::{HecoError, Result};
use crate::seeding::rng_for;
use crate::tensor::{glorot_init, AdamState, Gradients, Matrix, Tape, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Matrix,
}

/// All learnable tensors of a model, keyed by stable names. Each parameter is
/// initialized from an RNG stream derived from (master seed, name), so the
/// presence of extra parameters in one variant never shifts the
/// initialization of shared ones.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn register(&mut self, name: &str, value: Matrix) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(HecoError::Contract(format!(
                "parameter '{name}' registered twice"
            )));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.to_string(), id.0);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
        });
        Ok(id)
    }

    pub fn register_glorot(&mut self, name: &str, rows: usize, cols: usize, seed: u64) -> Result<ParamId> {
        let mut rng = rng_for(seed, &format!("init/{name}"));
        let value = glorot_init(rows, cols, &mut rng);
        self.register(name, value)
    }

    pub fn register_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.register(name, Matrix::zeros(rows, cols))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| HecoError::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn value_by_name(&self, name: &str) -> Result<&Matrix> {
        Ok(self.value(self.id(name)?))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }
}

/// Which parameters receive gradients in the current phase.
#[derive(Debug, Clone)]
pub enum Trainable {
    All,
    Only(HashSet<ParamId>),
}

impl Trainable {
    pub fn contains(&self, id: ParamId) -> bool {
        match self {
            Trainable::All => true,
            Trainable::Only(set) => set.contains(&id),
        }
    }

    pub fn subset<'a>(store: &ParamStore, names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut set = HashSet::new();
        for name in names {
            set.insert(store.id(name)?);
        }
        Ok(Trainable::Only(set))
    }
}

/// A tape plus the parameter bindings made while building one forward pass.
pub struct ModelGraph<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    trainable: Trainable,
    bound: HashMap<ParamId, TensorId>,
}

impl<'s> ModelGraph<'s> {
    pub fn new(store: &'s ParamStore, trainable: Trainable) -> Self {
        ModelGraph {
            tape: Tape::new(),
            store,
            trainable,
            bound: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Bind a parameter as a tape leaf (cached per graph).
    pub fn param(&mut self, name: &str) -> Result<TensorId> {
        let pid = self.store.id(name)?;
        if let Some(&tid) = self.bound.get(&pid) {
            return Ok(tid);
        }
        let requires_grad = self.trainable.contains(pid);
        let tid = self.tape.leaf(self.store.value(pid).clone(), requires_grad)?;
        self.bound.insert(pid, tid);
        Ok(tid)
    }

    pub fn constant(&mut self, value: Matrix) -> Result<TensorId> {
        self.tape.constant(value)
    }

    /// Run backward and collect per-parameter gradients for every trainable
    /// bound parameter; parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: TensorId) -> Result<StoreGradients> {
        let grads = self.tape.backward(loss)?;
        let mut by_param = HashMap::new();
        for (&pid, &tid) in &self.bound {
            if self.trainable.contains(pid) {
                let shape = self.store.value(pid).shape();
                by_param.insert(pid, grads.get_or_zeros(tid, shape));
            }
        }
        Ok(StoreGradients { by_param, raw: grads })
    }
}

/// Gradients keyed by parameter, plus the raw tape gradients for inspection.
pub struct StoreGradients {
    by_param: HashMap<ParamId, Matrix>,
    pub raw: Gradients,
}

impl StoreGradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.by_param.iter().map(|(&id, m)| (id, m))
    }

    /// Apply one Adam step to every parameter that has a gradient here.
    /// Parameter ids double as optimizer slots, so moments follow parameters
    /// across phases while frozen parameters stay untouched.
    pub fn apply_adam(&self, store: &mut ParamStore, adam: &mut AdamState) -> Result<()> {
        adam.begin_step();
        let mut ids: Vec<ParamId> = self.by_param.keys().copied().collect();
        ids.sort_by_key(|id| id.0);
        for id in ids {
            let grad = &self.by_param[&id];
            adam.update(id.0, store.value_mut(id), grad)?;
        }
        Ok(())
    }
}
