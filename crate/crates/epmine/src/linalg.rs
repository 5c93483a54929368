//! Dense row-matrix utilities: row normalization, pairwise cosine similarity,
//! and the similarity/distance conversion everything else is built on.

use crate::error::{Error, Result};

/// Plain row-major matrix of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }
}

/// B x D matrix whose rows are unit vectors on the hypersphere.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    inner: Matrix,
}

impl EmbeddingMatrix {
    pub fn rows(&self) -> usize {
        self.inner.rows
    }

    pub fn dim(&self) -> usize {
        self.inner.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.inner.row(i)
    }

    /// Wrap a matrix whose rows the caller already knows to be (near) unit
    /// norm, e.g. a normalized matrix with a finite-difference perturbation
    /// applied. Similarities stay plain dot products either way.
    pub fn from_unit_rows(m: Matrix) -> Self {
        EmbeddingMatrix { inner: m }
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix {
        self.inner
    }
}

/// Symmetric B x B cosine-similarity matrix with unit diagonal.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    size: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    /// Build directly from raw entries; used by tests constructing synthetic
    /// similarity structures without embeddings.
    pub fn from_raw(size: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), size * size);
        SimilarityMatrix { size, data }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalize every row of `m` to unit L2 norm.
pub fn l2_normalize_rows(m: &Matrix) -> Result<EmbeddingMatrix> {
    let mut out = m.clone();
    for i in 0..m.rows {
        let norm = dot(m.row(i), m.row(i)).sqrt();
        if norm <= 1e-12 {
            return Err(Error::ZeroRow(i));
        }
        for v in out.row_mut(i) {
            *v /= norm;
        }
    }
    Ok(EmbeddingMatrix { inner: out })
}

fn similarity_upper(e: &EmbeddingMatrix, i: usize, out: &mut [f64]) {
    let b = e.rows();
    out[i] = 1.0;
    let ri = e.row(i);
    for j in (i + 1)..b {
        out[j] = dot(ri, e.row(j));
    }
}

/// Sequential cosine-similarity matrix. Upper triangle is computed once and
/// mirrored, so the result is exactly symmetric.
pub fn cosine_similarity_matrix_seq(e: &EmbeddingMatrix) -> SimilarityMatrix {
    let b = e.rows();
    let mut data = vec![0.0; b * b];
    for (i, row) in data.chunks_mut(b).enumerate() {
        similarity_upper(e, i, row);
    }
    mirror_lower(b, &mut data);
    SimilarityMatrix { size: b, data }
}

#[cfg(feature = "parallel")]
pub fn cosine_similarity_matrix_par(e: &EmbeddingMatrix) -> SimilarityMatrix {
    use rayon::prelude::*;
    let b = e.rows();
    let mut data = vec![0.0; b * b];
    data.par_chunks_mut(b)
        .enumerate()
        .for_each(|(i, row)| similarity_upper(e, i, row));
    mirror_lower(b, &mut data);
    SimilarityMatrix { size: b, data }
}

fn mirror_lower(b: usize, data: &mut [f64]) {
    for i in 0..b {
        for j in (i + 1)..b {
            data[j * b + i] = data[i * b + j];
        }
    }
}

/// Pairwise cosine similarity of unit-norm rows. Each entry is computed once
/// regardless of the execution path, so the parallel build is bitwise
/// identical to the sequential one.
pub fn cosine_similarity_matrix(e: &EmbeddingMatrix) -> SimilarityMatrix {
    #[cfg(feature = "parallel")]
    {
        cosine_similarity_matrix_par(e)
    }
    #[cfg(not(feature = "parallel"))]
    {
        cosine_similarity_matrix_seq(e)
    }
}

/// For unit vectors, squared Euclidean distance is 2 - 2*similarity.
pub fn squared_distance_from_similarity(s: f64) -> Result<f64> {
    if s.abs() > 1.0 + 1e-6 {
        return Err(Error::DomainError(s));
    }
    Ok(2.0 - 2.0 * s)
}
