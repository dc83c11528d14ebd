//! Point sets: the n×d collections of real vectors used for data, prior
//! draws and generated samples.

use nalgebra::DMatrix;

use crate::error::{KpfError, Result};

/// An ordered set of `n` points in `R^d`.
///
/// Points are stored one per column so that each point is a contiguous
/// slice; [`PointSet::point`] is the hot accessor for kernel evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    data: DMatrix<f64>,
}

impl PointSet {
    /// Builds a point set from row vectors. All rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(KpfError::invalid(format!(
                    "row {i} has {} coordinates, expected {dim}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Ok(Self::from_flat(dim, flat))
    }

    /// Builds a point set from a row-major buffer of `n * dim` values.
    ///
    /// Panics if the buffer length is not a multiple of `dim`.
    pub fn from_flat(dim: usize, flat: Vec<f64>) -> Self {
        let n = flat.len().checked_div(dim).unwrap_or(0);
        assert_eq!(n * dim, flat.len(), "buffer is not a whole number of points");
        Self {
            data: DMatrix::from_vec(dim, n, flat),
        }
    }

    /// Wraps a `dim × n` matrix whose columns are points.
    pub fn from_columns(data: DMatrix<f64>) -> Self {
        Self { data }
    }

    /// Wraps an `n × dim` matrix whose rows are points.
    pub fn from_row_matrix(m: &DMatrix<f64>) -> Self {
        Self { data: m.transpose() }
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data.as_slice()[i * d..(i + 1) * d]
    }

    pub fn point_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.dim();
        &mut self.data.as_mut_slice()[i * d..(i + 1) * d]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        let d = self.dim().max(1);
        self.data.as_slice().chunks_exact(d).take(self.len())
    }

    /// Columns-are-points view (`dim × n`).
    pub fn as_columns(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Rows-are-points copy (`n × dim`).
    pub fn to_row_matrix(&self) -> DMatrix<f64> {
        self.data.transpose()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }

    /// The points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointSet {
        let mut flat = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            flat.extend_from_slice(self.point(i));
        }
        PointSet::from_flat(self.dim(), flat)
    }

    /// Contiguous sub-range of points.
    pub fn slice(&self, start: usize, end: usize) -> PointSet {
        let d = self.dim();
        PointSet::from_flat(d, self.data.as_slice()[start * d..end * d].to_vec())
    }

    /// Concatenates two point sets of equal dimension.
    pub fn concat(&self, other: &PointSet) -> Result<PointSet> {
        crate::error::check_dim(self.dim(), other.dim())?;
        let mut flat = self.data.as_slice().to_vec();
        flat.extend_from_slice(other.data.as_slice());
        Ok(PointSet::from_flat(self.dim(), flat))
    }

    /// Index of the first point that exactly duplicates an earlier one.
    pub fn first_duplicate(&self) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.point(a)
                .iter()
                .zip(self.point(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        order.windows(2).find_map(|w| {
            (self.point(w[0]) == self.point(w[1])).then(|| (w[0].min(w[1]), w[0].max(w[1])))
        })
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
