use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Element, Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Kernel,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Running statistics are updated by batch norm, never by an optimizer.
    pub fn is_statistic(self) -> bool {
        matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub kind: ParamKind,
    pub trainable: bool,
    pub tensor: Tensor<T>,
}

impl<T: Element> Parameter<T> {
    /// Receives gradients and optimizer updates.
    pub fn is_optimizable(&self) -> bool {
        self.trainable && !self.kind.is_statistic()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub total: usize,
    pub trainable: usize,
    pub frozen: usize,
}

/// Named parameter tensors, each flagged trainable or frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Element> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        kind: ParamKind,
        trainable: bool,
        tensor: Tensor<T>,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Spec(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            kind,
            trainable,
            tensor,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn counts(&self) -> ParamCounts {
        let mut c = ParamCounts {
            total: 0,
            trainable: 0,
            frozen: 0,
        };
        for p in &self.params {
            let n = p.tensor.len();
            c.total += n;
            if p.trainable {
                c.trainable += n;
            } else {
                c.frozen += n;
            }
        }
        c
    }

    /// Record every parameter as a tape leaf. Optimizable parameters require
    /// gradients; everything else enters as a constant.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|p| Some(self.leaf(tape, p)))
            .collect();
        Bindings { vars }
    }

    /// Record only the listed parameters.
    pub fn bind_only(&self, tape: &mut Tape<T>, ids: &[ParamId]) -> Bindings {
        let mut vars = vec![None; self.params.len()];
        for &id in ids {
            vars[id.0] = Some(self.leaf(tape, &self.params[id.0]));
        }
        Bindings { vars }
    }

    fn leaf(&self, tape: &mut Tape<T>, p: &Parameter<T>) -> Var {
        let mut t = p.tensor.clone();
        t.clear_grad();
        t.set_requires_grad(p.is_optimizable());
        tape.leaf(t)
    }

    /// Copy gradients from a backward sweep into the grad slots of every
    /// optimizable parameter. Parameters without a path to the loss get zeros.
    pub fn write_grads(
        &mut self,
        tape: &Tape<T>,
        bindings: &Bindings,
        grads: &Gradients<T>,
    ) -> Result<()> {
        for (i, p) in self.params.iter_mut().enumerate() {
            if !p.is_optimizable() {
                p.tensor.clear_grad();
                continue;
            }
            let g = match bindings.vars.get(i).copied().flatten() {
                Some(v) => grads.tensor(tape, v).into_data(),
                None => vec![T::zero(); p.tensor.len()],
            };
            p.tensor.set_grad(g)?;
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.clear_grad();
        }
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>], momentum: f64) {
        let m = T::cast(momentum);
        let one_m = T::cast(1.0 - momentum);
        for u in updates {
            for (id, batch) in [(u.mean, &u.stats.mean), (u.var, &u.stats.var)] {
                for (r, &b) in self.params[id.0].tensor.data_mut().iter_mut().zip(batch) {
                    *r = m * *r + one_m * b;
                }
            }
        }
    }

    pub fn cast<U: Element>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    kind: p.kind,
                    trainable: p.trainable,
                    tensor: p.tensor.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Parameter totals `(total, trainable, frozen)`.
pub fn count_params<T: Element>(store: &ParameterStore<T>) -> ParamCounts {
    store.counts()
}

/// Tape leaves for the parameters of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Option<Var>>,
}

impl Bindings {
    /// Bind parameter `i` to `vars[i]`, e.g. leaves created by a
    /// finite-difference check over every tensor of a store.
    pub fn from_vars(vars: &[Var]) -> Self {
        Bindings {
            vars: vars.iter().copied().map(Some).collect(),
        }
    }

    pub fn var(&self, id: ParamId) -> Result<Var> {
        self.vars
            .get(id.0)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Usage(format!("parameter #{} is not bound to the tape", id.0)))
    }
}

/// Batch statistics observed during a training-mode forward pass, to be folded
/// into the running averages.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats<T>,
}
