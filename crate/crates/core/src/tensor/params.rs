use std::sync::atomic::{AtomicU64, Ordering};

use super::array::{Real, Tensor};
use super::TensorError;

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

/// Ordered, uniquely named collection of parameter arrays.
///
/// Every mutation bumps a version counter so graphs recorded against an older
/// state refuse to backpropagate.
#[derive(Debug)]
pub struct ParameterSet<T> {
    id: u64,
    version: u64,
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Clone for ParameterSet<T> {
    fn clone(&self) -> Self {
        Self {
            id: NEXT_SET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            entries: self.entries.clone(),
        }
    }
}

impl<T: Real> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_SET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            entries: Vec::new(),
        }
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
    ) -> Result<usize, TensorError> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(TensorError::DuplicateName(name));
        }
        self.version += 1;
        self.entries.push((name, value));
        Ok(self.entries.len() - 1)
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    pub(crate) fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        self.version += 1;
        &mut self.entries[i].1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParameterSet<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet {
            id: NEXT_SET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }
}

/// Gradients aligned index-for-index with a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &ParameterSet<T>) -> Self {
        Self {
            grads: params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.grads[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.grads.iter()
    }

    pub(crate) fn accumulate(&mut self, i: usize, g: &[T]) {
        for (d, &v) in self.grads[i].data_mut().iter_mut().zip(g) {
            *d = *d + v;
        }
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (i, g) in other.grads.iter().enumerate() {
            self.accumulate(i, g.data());
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }

    /// Flattened view in parameter order.
    pub fn flat(&self) -> Vec<T> {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter().copied())
            .collect()
    }

    pub(crate) fn check_finite(&self) -> Result<(), TensorError> {
        if self.grads.iter().all(Tensor::is_finite) {
            Ok(())
        } else {
            Err(TensorError::NonFinite("gradient"))
        }
    }
}

/// Runs `build` once per chunk in parallel, each on its own graph bound to
/// `params`, and sums the scalar losses and gradients in chunk order. The
/// result is independent of the thread count.
pub fn chunked_backward<T, E, F>(
    params: &ParameterSet<T>,
    chunks: usize,
    build: F,
) -> Result<(f64, Gradients<T>), E>
where
    T: Real,
    E: From<TensorError> + Send,
    F: Fn(&mut super::Graph<T>, &[super::NodeId], usize) -> Result<super::NodeId, E> + Sync,
{
    use rayon::prelude::*;
    let parts: Vec<Result<(f64, Gradients<T>), E>> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let mut g = super::Graph::new();
            let w = g.bind(params)?;
            let loss = build(&mut g, &w, i)?;
            let value = g.value(loss).data()[0].as_f64();
            Ok((value, g.backward(loss, params)?))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(params);
    for part in parts {
        let (v, g) = part?;
        total += v;
        grads.add_assign(&g);
    }
    Ok((total, grads))
}
