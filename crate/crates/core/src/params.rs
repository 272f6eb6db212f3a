//! Named parameter storage and its binding onto a tape.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DftError, Result};
use crate::tensor::{Adam, BatchStats, Gradients, Tape, Tensor, Var};

/// Which optimiser a parameter belongs to. `Buffer` holds non-trainable
/// state such as batch-norm running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Feat,
    Clf,
    Critic,
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// All tensors of a model, each in exactly one [`ParamGroup`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param { name, group, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids_in(&self, group: ParamGroup) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.group == group)
            .map(|(id, _)| id)
            .collect()
    }

    /// One Adam update of every parameter in `group`, with gradients taken
    /// from `grads` through `binding`.
    pub fn adam_step(
        &mut self,
        group: ParamGroup,
        binding: &Binding<'_>,
        grads: &Gradients,
        adam: &mut Adam,
        lr: f64,
    ) -> Result<()> {
        let ids = self.ids_in(group);
        let g: Vec<Option<&Tensor>> = ids
            .iter()
            .map(|&id| binding.try_var(id).and_then(|v| grads.get(v)))
            .collect();
        let mut values: Vec<&mut Tensor> = self
            .params
            .iter_mut()
            .filter(|p| p.group == group)
            .map(|p| &mut p.value)
            .collect();
        adam.step(&mut values, &g, lr)
    }

    /// Sum of all values in a group; cheap change detection.
    pub fn checksum(&self, group: ParamGroup) -> f64 {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .flat_map(|p| p.value.data())
            .enumerate()
            .map(|(i, v)| v * (1.0 + (i % 7) as f64))
            .sum()
    }

    /// Replaces every value from `other`, which must have the same names,
    /// groups and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(DftError::contract(format!(
                "parameter count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.name != theirs.name
                || mine.group != theirs.group
                || mine.value.shape() != theirs.value.shape()
            {
                return Err(DftError::contract(format!(
                    "parameter {} does not match {} {:?}",
                    mine.name,
                    theirs.name,
                    theirs.value.shape()
                )));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }

    /// Records parameters on `tape`: groups in `tracked` become leaves,
    /// the rest constants.
    pub fn bind<'t>(&self, tape: &'t Tape, tracked: &[ParamGroup]) -> Binding<'t> {
        let mut binding = Binding {
            vars: vec![None; self.len()],
        };
        let all = [
            ParamGroup::Feat,
            ParamGroup::Clf,
            ParamGroup::Critic,
            ParamGroup::Buffer,
        ];
        for g in all {
            self.bind_group(&mut binding, tape, g, tracked.contains(&g));
        }
        binding
    }

    /// Like [`ParamStore::bind`] but only the listed groups; the others stay
    /// unbound until [`ParamStore::bind_group`] is called.
    pub fn bind_groups<'t>(
        &self,
        tape: &'t Tape,
        groups: &[ParamGroup],
        tracked: &[ParamGroup],
    ) -> Binding<'t> {
        let mut binding = Binding {
            vars: vec![None; self.len()],
        };
        for &g in groups {
            self.bind_group(&mut binding, tape, g, tracked.contains(&g));
        }
        binding
    }

    pub fn bind_group<'t>(
        &self,
        binding: &mut Binding<'t>,
        tape: &'t Tape,
        group: ParamGroup,
        tracked: bool,
    ) {
        binding.vars.resize(self.len(), None);
        for (i, p) in self.params.iter().enumerate() {
            if p.group == group {
                let v = if tracked && group != ParamGroup::Buffer {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                };
                binding.vars[i] = Some(v);
            }
        }
    }
}

/// Tape handles for the parameters of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Binding<'t> {
    vars: Vec<Option<Var<'t>>>,
}

impl<'t> Binding<'t> {
    /// A binding from one variable per parameter, in store order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Binding<'t> {
        Binding {
            vars: vars.into_iter().map(Some).collect(),
        }
    }

    /// The bound variable. Panics if the parameter's group was never bound,
    /// which is a wiring error rather than a data error.
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0].unwrap_or_else(|| panic!("parameter {} is not bound", id.0))
    }

    pub fn try_var(&self, id: ParamId) -> Option<Var<'t>> {
        self.vars.get(id.0).copied().flatten()
    }
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub stats: BatchStats,
}

impl BnUpdate {
    /// `running ← (1-m)·running + m·batch`, with the unbiased batch variance.
    pub fn apply(&self, store: &mut ParamStore) {
        let n = self.stats.count as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let m = self.momentum;
        for (r, &b) in store
            .value_mut(self.running_mean)
            .data_mut()
            .iter_mut()
            .zip(&self.stats.mean)
        {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in store
            .value_mut(self.running_var)
            .data_mut()
            .iter_mut()
            .zip(&self.stats.var)
        {
            *r = (1.0 - m) * *r + m * b * unbias;
        }
    }
}
