use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Base,
    Adapter,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub group: ParamGroup,
    value: Arc<Matrix<T>>,
}

impl<T> ParamEntry<T> {
    pub fn value(&self) -> &Matrix<T> {
        &self.value
    }

    pub fn shared(&self) -> &Arc<Matrix<T>> {
        &self.value
    }
}

/// Named parameter arrays partitioned into base and adapter groups.
///
/// Arrays are reference counted: cloning a set is cheap and an array is only
/// duplicated when one of the clones mutates it. Adapted copies therefore
/// hold private storage for the arrays they actually train and share the
/// rest with their parent.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, group: ParamGroup, value: Matrix<T>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let idx = self.entries.len();
        self.index.insert(name.clone(), idx);
        self.entries.push(ParamEntry {
            name,
            group,
            value: Arc::new(value),
        });
        idx
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn get(&self, idx: usize) -> &Matrix<T> {
        &self.entries[idx].value
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].name
    }

    pub fn group(&self, idx: usize) -> ParamGroup {
        self.entries[idx].group
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix<T>> {
        self.index_of(name).map(|i| self.get(i))
    }

    /// Mutable access; detaches the array from any clones sharing it.
    pub fn get_mut(&mut self, idx: usize) -> &mut Matrix<T> {
        Arc::make_mut(&mut self.entries[idx].value)
    }

    pub fn replace(&mut self, idx: usize, value: Matrix<T>) -> Result<()> {
        if value.shape() != self.get(idx).shape() {
            return Err(Error::Shape(format!(
                "{}: expected {:?}, got {:?}",
                self.name(idx),
                self.get(idx).shape(),
                value.shape()
            )));
        }
        self.entries[idx].value = Arc::new(value);
        Ok(())
    }

    pub fn shares_storage(&self, other: &Self, idx: usize) -> bool {
        Arc::ptr_eq(&self.entries[idx].value, &other.entries[idx].value)
    }

    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn group_element_count(&self, group: ParamGroup) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }

    /// True when every array holds exactly the same bits as in `other`.
    pub fn bit_identical(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && arrays_bit_identical(&a.value, &b.value))
    }

    pub fn group_bit_identical(&self, other: &Self, group: ParamGroup) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .filter(|(a, _)| a.group == group)
                .all(|(a, b)| a.name == b.name && arrays_bit_identical(&a.value, &b.value))
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for e in &self.entries {
            out.push(e.name.clone(), e.group, e.value.cast());
        }
        out
    }
}

pub fn arrays_bit_identical<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_f64().map(f64::to_bits) == y.to_f64().map(f64::to_bits))
}

/// An ordered subset of parameter indices that receive gradients and updates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamView {
    indices: Vec<usize>,
}

impl ParamView {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn all<T: Scalar>(params: &ParamSet<T>) -> Self {
        Self::new((0..params.len()).collect())
    }

    pub fn group<T: Scalar>(params: &ParamSet<T>, group: ParamGroup) -> Self {
        Self::new(
            (0..params.len())
                .filter(|&i| params.group(i) == group)
                .collect(),
        )
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.indices.binary_search(&idx).is_ok()
    }

    pub fn element_count<T: Scalar>(&self, params: &ParamSet<T>) -> usize {
        self.indices.iter().map(|&i| params.get(i).len()).sum()
    }
}

/// Gradient arrays aligned 1:1 with a [`ParamView`].
#[derive(Debug, Clone)]
pub struct GradientBundle<T> {
    pub indices: Vec<usize>,
    pub grads: Vec<Matrix<T>>,
    pub loss: T,
    pub batch_id: Option<String>,
}

impl<T: Scalar> GradientBundle<T> {
    pub fn zeros(params: &ParamSet<T>, view: &ParamView) -> Self {
        Self {
            indices: view.indices().to_vec(),
            grads: view
                .indices()
                .iter()
                .map(|&i| {
                    let (r, c) = params.get(i).shape();
                    Matrix::zeros(r, c)
                })
                .collect(),
            loss: T::zero(),
            batch_id: None,
        }
    }

    pub fn check_aligned(&self, params: &ParamSet<T>, view: &ParamView) -> Result<()> {
        if self.indices != view.indices() {
            return Err(Error::Shape("gradient bundle does not match view".into()));
        }
        for (&i, g) in self.indices.iter().zip(&self.grads) {
            if params.get(i).shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "{}: parameter {:?} vs gradient {:?}",
                    params.name(i),
                    params.get(i).shape(),
                    g.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, param_idx: usize) -> Option<&Matrix<T>> {
        self.indices
            .iter()
            .position(|&i| i == param_idx)
            .map(|p| &self.grads[p])
    }

    pub fn scale(&mut self, k: T) {
        for g in &mut self.grads {
            *g = g.scale(k);
        }
    }

    /// `self += k·other`. Bundles must share indices.
    pub fn add_scaled(&mut self, other: &Self, k: T) -> Result<()> {
        if self.indices != other.indices {
            return Err(Error::Shape("gradient bundles cover different views".into()));
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_scaled(b, k);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Matrix::is_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.grads
            .iter()
            .all(|g| g.data().iter().all(|v| *v == T::zero()))
    }

    pub fn l2_norm(&self) -> T {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }
}
