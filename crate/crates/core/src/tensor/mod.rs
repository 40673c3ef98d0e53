//! Sparse nonnegative count tensors and the family statistics of an allocation.

mod io;
mod stats;

use std::collections::{BTreeMap, BTreeSet};

pub use io::{format_tensor, parse_tensor, read_tensor, write_tensor};
pub use stats::{stats_from_tensor, CountMap, FamilyStats};

use crate::error::{Error, Result};

/// Count tensor stored as index tuple → positive count. Absent tuples are zero;
/// tuples in `mask` are unknown rather than zero.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SparseCountTensor {
    dims: Vec<usize>,
    entries: BTreeMap<Vec<usize>, u64>,
    mask: BTreeSet<Vec<usize>>,
}

impl SparseCountTensor {
    pub fn new(dims: Vec<usize>) -> Self {
        Self {
            dims,
            entries: BTreeMap::new(),
            mask: BTreeSet::new(),
        }
    }

    /// Dense row-major matrix helper.
    pub fn from_matrix<R: AsRef<[u64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut t = Self::new(vec![rows.len(), cols]);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.as_ref().iter().enumerate() {
                t.set(&[i, j], v).expect("in range");
            }
        }
        t
    }

    pub fn from_entries(
        dims: Vec<usize>,
        entries: impl IntoIterator<Item = (Vec<usize>, u64)>,
    ) -> Result<Self> {
        let mut t = Self::new(dims);
        for (idx, v) in entries {
            let cur = t.get(&idx);
            t.set(&idx, cur + v)?;
        }
        Ok(t)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    fn check_index(&self, idx: &[usize]) -> Result<()> {
        if idx.len() != self.dims.len() || idx.iter().zip(&self.dims).any(|(i, d)| i >= d) {
            return Err(Error::BadIndexSet(format!(
                "index {idx:?} outside dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn get(&self, idx: &[usize]) -> u64 {
        self.entries.get(idx).copied().unwrap_or(0)
    }

    /// Sets a count; zero removes the entry. Clears any mask on the cell.
    pub fn set(&mut self, idx: &[usize], count: u64) -> Result<()> {
        self.check_index(idx)?;
        self.mask.remove(idx);
        if count == 0 {
            self.entries.remove(idx);
        } else {
            self.entries.insert(idx.to_vec(), count);
        }
        Ok(())
    }

    pub fn add(&mut self, idx: &[usize], count: u64) -> Result<()> {
        let cur = self.get(idx);
        self.set(idx, cur + count)
    }

    /// Flags a cell as missing; any stored count is dropped.
    pub fn set_missing(&mut self, idx: &[usize]) -> Result<()> {
        self.check_index(idx)?;
        self.entries.remove(idx);
        self.mask.insert(idx.to_vec());
        Ok(())
    }

    pub fn is_missing(&self, idx: &[usize]) -> bool {
        self.mask.contains(idx)
    }

    pub fn mask(&self) -> &BTreeSet<Vec<usize>> {
        &self.mask
    }

    pub fn has_mask(&self) -> bool {
        !self.mask.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Entries in lexicographic index order.
    pub fn iter(&self) -> impl Iterator<Item = (&Vec<usize>, u64)> + '_ {
        self.entries.iter().map(|(k, &v)| (k, v))
    }

    /// Little-endian mixed-radix key of an index, matching
    /// [`crate::model::ModelSpec::visible_tuple_key`] when dims agree.
    pub fn packed_key(&self, idx: &[usize]) -> u64 {
        let mut key = 0u64;
        let mut stride = 1u64;
        for (&i, &d) in idx.iter().zip(&self.dims) {
            key += i as u64 * stride;
            stride *= d as u64;
        }
        key
    }

    pub fn add_tensor(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch {
                expected: self.dims.clone(),
                got: other.dims.clone(),
            });
        }
        let mut out = self.clone();
        for (k, v) in other.iter() {
            out.add(k, v)?;
        }
        Ok(out)
    }

    /// Sums out every axis not listed in `keep`; output axes follow `keep`'s order.
    pub fn contract(&self, keep: &[usize]) -> Result<Self> {
        if self.has_mask() {
            return Err(Error::MaskedTensor);
        }
        let mut seen = BTreeSet::new();
        for &k in keep {
            if k >= self.dims.len() || !seen.insert(k) {
                return Err(Error::BadIndexSet(format!(
                    "{keep:?} is not a set of axes of an order-{} tensor",
                    self.dims.len()
                )));
            }
        }
        let mut out = Self::new(keep.iter().map(|&k| self.dims[k]).collect());
        for (idx, v) in self.iter() {
            let sub: Vec<usize> = keep.iter().map(|&k| idx[k]).collect();
            *out.entries.entry(sub).or_insert(0) += v;
        }
        Ok(out)
    }
}

/// Free-function form of [`SparseCountTensor::contract`].
pub fn contract(t: &SparseCountTensor, keep: &[usize]) -> Result<SparseCountTensor> {
    t.contract(keep)
}
