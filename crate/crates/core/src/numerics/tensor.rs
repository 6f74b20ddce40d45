use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Dense row-major array. Gradients, when present, have the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut RngStream) -> Self {
        let mut t = Tensor::zeros(shape);
        for v in t.data.iter_mut() {
            *v = rng.normal() * std;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Validation("ragged rows".into()));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (rows, cols) view; rank-1 tensors are a single row.
    pub fn dims2(&self) -> (usize, usize) {
        dims2(&self.shape)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => {
            let c = *shape.last().unwrap();
            (shape.iter().product::<usize>() / c.max(1), c)
        }
    }
}

/// Named parameters plus the Adam moments for each of them.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: IndexMap<String, Tensor>,
    pub(crate) moments: Vec<(Vec<f64>, Vec<f64>)>,
    pub(crate) step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let n = tensor.len();
        self.params.insert(name, tensor.with_grad());
        self.moments.push((vec![0.0; n], vec![0.0; n]));
        Ok(self.params.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn by_index(&self, idx: usize) -> &Tensor {
        &self.params[idx]
    }

    pub fn by_index_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx]
    }

    pub fn name_of(&self, idx: usize) -> &str {
        self.params.get_index(idx).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Number of optimizer updates applied so far.
    pub fn updates(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for t in self.params.values_mut() {
            t.grad = None;
        }
    }

    /// Adds `scale * grad` into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &super::Gradients, scale: f64) {
        for (idx, t) in self.params.values_mut().enumerate() {
            let n = t.len();
            let buf = t.grad.get_or_insert_with(|| vec![0.0; n]);
            if let Some(g) = grads.param(idx) {
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += scale * x;
                }
            }
        }
    }

    /// Replaces parameter values, keeping the same names and shapes.
    pub fn load_values(&mut self, other: &ParameterStore) -> Result<()> {
        for (name, t) in self.params.iter_mut() {
            let src = other
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::dim("load_values", t.shape(), src.shape()));
            }
            t.data.copy_from_slice(src.data());
        }
        Ok(())
    }
}
