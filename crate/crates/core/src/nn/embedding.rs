use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::matrix::Matrix;
use crate::error::{Error, Result};

const NO_ROW: u32 = u32::MAX;

/// Trainable lookup table of `dim`-dimensional object embeddings.
///
/// Only the objects given at construction get a row. Rows are initialized
/// from `N(0, 1/dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    values: Matrix,
    row_of: Vec<u32>,
    objects: Vec<usize>,
    touched: Vec<bool>,
}

impl EmbeddingTable {
    /// `num_objects` is the size of the graph; `objects` are the ones that
    /// get a row, in row order.
    pub fn new<R: Rng + ?Sized>(
        num_objects: usize,
        objects: &[usize],
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("valid std");
        let data = (0..objects.len() * dim).map(|_| normal.sample(rng)).collect();
        Self::from_parts(num_objects, objects, Matrix::from_vec(objects.len(), dim, data)?)
    }

    pub fn from_parts(num_objects: usize, objects: &[usize], values: Matrix) -> Result<Self> {
        if values.rows() != objects.len() {
            return Err(Error::Shape(format!(
                "{} rows for {} objects",
                values.rows(),
                objects.len()
            )));
        }
        let mut row_of = vec![NO_ROW; num_objects];
        for (r, &v) in objects.iter().enumerate() {
            if v >= num_objects {
                return Err(Error::ObjectOutOfRange {
                    index: v,
                    len: num_objects,
                });
            }
            if row_of[v] != NO_ROW {
                return Err(Error::Shape(format!("object {v} listed twice")));
            }
            row_of[v] = r as u32;
        }
        Ok(EmbeddingTable {
            touched: vec![false; objects.len()],
            values,
            row_of,
            objects: objects.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn num_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn num_objects(&self) -> usize {
        self.row_of.len()
    }

    /// Objects with a row, in row order.
    pub fn objects(&self) -> &[usize] {
        &self.objects
    }

    pub fn row_of(&self, v: usize) -> Option<usize> {
        match self.row_of.get(v) {
            Some(&r) if r != NO_ROW => Some(r as usize),
            _ => None,
        }
    }

    pub fn has_row(&self, v: usize) -> bool {
        self.row_of(v).is_some()
    }

    /// The embedding of object `v`.
    pub fn embed(&self, v: usize) -> Result<&[f64]> {
        self.row_of(v)
            .map(|r| self.values.row(r))
            .ok_or(Error::MissingEmbedding(v))
    }

    pub fn embed_mut(&mut self, v: usize) -> Result<&mut [f64]> {
        let r = self.row_of(v).ok_or(Error::MissingEmbedding(v))?;
        Ok(self.values.row_mut(r))
    }

    /// Stacks the embeddings of `objects` into a `len x dim` matrix.
    pub fn gather(&self, objects: &[usize]) -> Result<Matrix> {
        let mut out = Matrix::zeros(objects.len(), self.dim());
        for (i, &v) in objects.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.embed(v)?);
        }
        Ok(out)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Whether the row of `v` has received an optimizer update.
    pub fn is_touched(&self, v: usize) -> bool {
        self.row_of(v).is_some_and(|r| self.touched[r])
    }

    pub(crate) fn mark_touched(&mut self, v: usize) {
        if let Some(r) = self.row_of(v) {
            self.touched[r] = true;
        }
    }

    pub(crate) fn set_touched(&mut self, touched: Vec<bool>) {
        debug_assert_eq!(touched.len(), self.touched.len());
        self.touched = touched;
    }

    pub fn touched_flags(&self) -> &[bool] {
        &self.touched
    }
}
