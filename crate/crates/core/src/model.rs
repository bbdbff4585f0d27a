//! The interface the physics losses use to talk to either model family.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensorgrid::{DenseField, FactorGrid};

/// Which derivative of an output field is requested, in physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Deriv {
    Value,
    D1(usize),
    D2(usize),
}

impl Deriv {
    /// Per-axis derivative orders for a `dim`-dimensional input.
    pub fn orders(&self, dim: usize) -> Vec<u8> {
        let mut o = vec![0u8; dim];
        match *self {
            Deriv::Value => {}
            Deriv::D1(a) => o[a] = 1,
            Deriv::D2(a) => o[a] = 2,
        }
        o
    }

    pub fn axis(&self) -> Option<usize> {
        match *self {
            Deriv::Value => None,
            Deriv::D1(a) | Deriv::D2(a) => Some(a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldKey {
    pub channel: usize,
    pub deriv: Deriv,
}

impl FieldKey {
    pub fn new(channel: usize, deriv: Deriv) -> Self {
        Self { channel, deriv }
    }
}

/// Named fields over the points of one grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    shape: Vec<usize>,
    keys: Vec<FieldKey>,
    values: Vec<Vec<f64>>,
}

impl FieldSet {
    pub fn zeros(shape: &[usize], keys: &[FieldKey]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            keys: keys.to_vec(),
            values: vec![vec![0.0; n]; keys.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn num_points(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn keys(&self) -> &[FieldKey] {
        &self.keys
    }

    fn index(&self, key: FieldKey) -> Option<usize> {
        self.keys.iter().position(|k| *k == key)
    }

    pub fn get(&self, key: FieldKey) -> Result<&[f64]> {
        self.index(key)
            .map(|i| self.values[i].as_slice())
            .ok_or_else(|| Error::Unsupported(format!("field {key:?} was not evaluated")))
    }

    pub fn get_mut(&mut self, key: FieldKey) -> Result<&mut [f64]> {
        match self.index(key) {
            Some(i) => Ok(self.values[i].as_mut_slice()),
            None => Err(Error::Unsupported(format!("field {key:?} was not evaluated"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (FieldKey, &[f64])> {
        self.keys.iter().copied().zip(self.values.iter().map(Vec::as_slice))
    }

    pub(crate) fn set(&mut self, key: FieldKey, values: Vec<f64>) {
        match self.index(key) {
            Some(i) => self.values[i] = values,
            None => {
                self.keys.push(key);
                self.values.push(values);
            }
        }
    }

    pub fn to_dense(&self, key: FieldKey) -> Result<DenseField> {
        DenseField::new(self.shape.clone(), self.get(key)?.to_vec())
    }
}

/// Counts univariate (separable) or full-input (dense) network evaluations.
#[derive(Debug, Default)]
pub struct EvalCounter(AtomicU64);

impl EvalCounter {
    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

impl Clone for EvalCounter {
    fn clone(&self) -> Self {
        Self(AtomicU64::new(self.get()))
    }
}

/// A trainable approximation `u: R^d -> R^m` that can evaluate derivative
/// fields on a factor grid and pull field cotangents back to its parameters.
pub trait PinnModel {
    type Tape;

    fn dim(&self) -> usize;
    fn n_fields(&self) -> usize;
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    /// Evaluates the requested fields on every point of `grid`.
    fn eval_fields(&self, grid: &FactorGrid, keys: &[FieldKey]) -> Result<(FieldSet, Self::Tape)>;

    /// Adds `d(sum cot . fields)/d(params)` into `grad`.
    fn backward_fields(&self, tape: &Self::Tape, cot: &FieldSet, grad: &mut [f64]) -> Result<()>;

    /// Values of all output channels at arbitrary points, `[n_pts][m]`.
    fn eval_points(&self, pts: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;

    fn counter(&self) -> &EvalCounter;

    /// Output channels on the grid, one field each.
    fn eval_grid(&self, grid: &FactorGrid) -> Result<Vec<DenseField>> {
        let keys: Vec<FieldKey> = (0..self.n_fields()).map(|c| FieldKey::new(c, Deriv::Value)).collect();
        let (fs, _) = self.eval_fields(grid, &keys)?;
        keys.iter().map(|&k| fs.to_dense(k)).collect()
    }
}
