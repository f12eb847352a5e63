//! Row sources. Estimators only ever see data through [`Dataset`], which
//! hands out contiguous row-major chunks in row order.

use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const DEFAULT_CHUNK_ROWS: usize = 65_536;

/// A block of consecutive rows.
#[derive(Clone, Copy, Debug)]
pub struct Chunk<'a> {
    /// Global index of the first row in the chunk.
    pub first_row: usize,
    /// Number of covariates per row.
    pub p: usize,
    /// Row-major covariates, `len() == rows() * p`.
    pub x: &'a [f64],
    pub y: &'a [f64],
}

impl<'a> Chunk<'a> {
    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> (&'a [f64], f64) {
        (&self.x[i * self.p..(i + 1) * self.p], self.y[i])
    }
}

pub trait Dataset {
    /// Covariates per row (excluding the response).
    fn covariates(&self) -> usize;

    /// Streams every row once, in order. The visitor's error aborts the pass.
    fn for_each_chunk(&self, visit: &mut dyn FnMut(Chunk<'_>) -> Result<()>) -> Result<()>;

    /// Row count when it is known without a pass over the data.
    fn known_rows(&self) -> Option<usize> {
        None
    }

    fn count_rows(&self) -> Result<usize> {
        if let Some(n) = self.known_rows() {
            return Ok(n);
        }
        let mut n = 0;
        self.for_each_chunk(&mut |c| {
            n += c.rows();
            Ok(())
        })?;
        Ok(n)
    }
}

impl<D: Dataset + ?Sized> Dataset for &D {
    fn covariates(&self) -> usize {
        (**self).covariates()
    }

    fn for_each_chunk(&self, visit: &mut dyn FnMut(Chunk<'_>) -> Result<()>) -> Result<()> {
        (**self).for_each_chunk(visit)
    }

    fn known_rows(&self) -> Option<usize> {
        (**self).known_rows()
    }
}

/// In-memory table of observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    p: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    chunk_rows: usize,
}

impl Table {
    pub fn new(p: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != p * y.len() {
            return Err(Error::dimension("covariate block", p * y.len(), x.len()));
        }
        Ok(Table {
            p,
            x,
            y,
            chunk_rows: DEFAULT_CHUNK_ROWS,
        })
    }

    pub fn with_capacity(p: usize, rows: usize) -> Self {
        Table {
            p,
            x: Vec::with_capacity(rows * p),
            y: Vec::with_capacity(rows),
            chunk_rows: DEFAULT_CHUNK_ROWS,
        }
    }

    /// Same rows, streamed in chunks of `chunk_rows`.
    pub fn with_chunk_rows(mut self, chunk_rows: usize) -> Self {
        self.chunk_rows = chunk_rows.max(1);
        self
    }

    pub fn chunk_rows(&self) -> usize {
        self.chunk_rows
    }

    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.p {
            return Err(Error::dimension("row covariates", self.p, x.len()));
        }
        self.x.extend_from_slice(x);
        self.y.push(y);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (&self.x[i * self.p..(i + 1) * self.p], self.y[i])
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Chunk `k` under this table's chunking, if it exists.
    pub fn chunk(&self, k: usize) -> Option<Chunk<'_>> {
        let start = k.checked_mul(self.chunk_rows)?;
        if start >= self.rows() {
            return None;
        }
        let end = (start + self.chunk_rows).min(self.rows());
        Some(Chunk {
            first_row: start,
            p: self.p,
            x: &self.x[start * self.p..end * self.p],
            y: &self.y[start..end],
        })
    }

    pub fn chunk_count(&self) -> usize {
        self.rows().div_ceil(self.chunk_rows)
    }
}

impl Dataset for Table {
    fn covariates(&self) -> usize {
        self.p
    }

    fn for_each_chunk(&self, visit: &mut dyn FnMut(Chunk<'_>) -> Result<()>) -> Result<()> {
        (0..self.chunk_count()).try_for_each(|k| visit(self.chunk(k).unwrap()))
    }

    fn known_rows(&self) -> Option<usize> {
        Some(self.rows())
    }
}

/// Copies the rows at the given strictly increasing indices into a table.
pub fn collect_rows<D: Dataset + ?Sized>(data: &D, indices: &[usize]) -> Result<Table> {
    let mut out = Table::with_capacity(data.covariates(), indices.len());
    let mut next = 0;
    data.for_each_chunk(&mut |c| {
        let end = c.first_row + c.rows();
        while next < indices.len() && indices[next] < end {
            let (x, y) = c.row(indices[next] - c.first_row);
            out.push(x, y)?;
            next += 1;
        }
        Ok(())
    })?;
    if next != indices.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "row index {} is past the end of the data",
            indices[next]
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn table() -> Table {
        let x: Vec<f64> = (0..10).map(|v| v as f64).collect();
        let y: Vec<f64> = (0..5).map(|v| 10.0 * v as f64).collect();
        Table::new(2, x, y).unwrap()
    }

    #[test]
    fn chunks_cover_all_rows_in_order() {
        let t = table().with_chunk_rows(2);
        let mut seen = vec![];
        t.for_each_chunk(&mut |c| {
            for i in 0..c.rows() {
                seen.push((c.first_row + i, c.row(i).1));
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(0, 0.0), (1, 10.0), (2, 20.0), (3, 30.0), (4, 40.0)]);
        assert_eq!(t.chunk_count(), 3);
    }

    #[test]
    fn collect_rows_picks_indices() {
        let t = table().with_chunk_rows(2);
        let s = collect_rows(&t, &[1, 2, 4]).unwrap();
        assert_eq!(s.y(), &[10.0, 20.0, 40.0]);
        assert_eq!(s.row(0).0, &[2.0, 3.0]);
        assert!(collect_rows(&t, &[7]).is_err());
    }

    #[test]
    fn shape_is_validated() {
        assert!(Table::new(3, vec![0.0; 5], vec![0.0; 2]).is_err());
        let mut t = Table::with_capacity(2, 1);
        assert!(t.push(&[1.0], 0.0).is_err());
    }
}
