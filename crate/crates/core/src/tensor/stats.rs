use rustc_hash::FxHashMap;

use super::SparseCountTensor;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::special::ln_gamma;

/// Packed key → positive count. Zero counts are removed.
pub type CountMap = FxHashMap<u64, u64>;

/// Sufficient statistics of an allocation tensor: every family contraction
/// `S_fa(n)`, every parent contraction `S_pa(n)`, the visible reconstruction
/// `S_V` and the token total. The full cell map is optional.
///
/// A root node's parent map has the single key `0`, holding `S₊`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FamilyStats {
    family: Vec<CountMap>,
    parent: Vec<CountMap>,
    visible: CountMap,
    cells: Option<CountMap>,
    total: u64,
}

fn bump(map: &mut CountMap, key: u64, by: u64) {
    *map.entry(key).or_insert(0) += by;
}

fn drop_one(map: &mut CountMap, key: u64) {
    if let Some(v) = map.get_mut(&key) {
        *v -= 1;
        if *v == 0 {
            map.remove(&key);
        }
    }
}

impl FamilyStats {
    pub fn new(spec: &ModelSpec, track_cells: bool) -> Self {
        let n = spec.num_nodes();
        Self {
            family: vec![CountMap::default(); n],
            parent: vec![CountMap::default(); n],
            visible: CountMap::default(),
            cells: track_cells.then(CountMap::default),
            total: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn tracks_cells(&self) -> bool {
        self.cells.is_some()
    }

    pub fn family(&self, n: usize) -> &CountMap {
        &self.family[n]
    }

    pub fn parent(&self, n: usize) -> &CountMap {
        &self.parent[n]
    }

    pub fn visible(&self) -> &CountMap {
        &self.visible
    }

    pub fn cells(&self) -> Option<&CountMap> {
        self.cells.as_ref()
    }

    #[inline]
    pub fn family_count(&self, n: usize, key: u64) -> u64 {
        self.family[n].get(&key).copied().unwrap_or(0)
    }

    #[inline]
    pub fn parent_count(&self, n: usize, key: u64) -> u64 {
        self.parent[n].get(&key).copied().unwrap_or(0)
    }

    #[inline]
    pub fn visible_count(&self, key: u64) -> u64 {
        self.visible.get(&key).copied().unwrap_or(0)
    }

    pub fn cell_count(&self, spec: &ModelSpec, cell: &[usize]) -> Result<u64> {
        let cells = self.cells.as_ref().ok_or(Error::CellsNotTracked)?;
        Ok(cells.get(&spec.cell_key(cell)).copied().unwrap_or(0))
    }

    /// Adds `count` tokens at a full cell.
    pub fn add(&mut self, spec: &ModelSpec, cell: &[usize], count: u64) {
        if count == 0 {
            return;
        }
        for n in 0..spec.num_nodes() {
            bump(&mut self.family[n], spec.family_key(n, cell), count);
            bump(&mut self.parent[n], spec.parent_key(n, cell), count);
        }
        bump(&mut self.visible, spec.visible_key(cell), count);
        if let Some(cells) = self.cells.as_mut() {
            bump(cells, spec.cell_key(cell), count);
        }
        self.total += count;
    }

    #[inline]
    pub fn increment(&mut self, spec: &ModelSpec, cell: &[usize]) {
        self.add(spec, cell, 1);
    }

    /// Removes one token; fails without modifying anything if a touched count is zero.
    pub fn decrement(&mut self, spec: &ModelSpec, cell: &[usize]) -> Result<()> {
        let underflow = || Error::Underflow(cell.to_vec());
        for n in 0..spec.num_nodes() {
            if self.family_count(n, spec.family_key(n, cell)) == 0 {
                return Err(underflow());
            }
        }
        if self.visible_count(spec.visible_key(cell)) == 0 {
            return Err(underflow());
        }
        if let Some(cells) = self.cells.as_ref() {
            if !cells.contains_key(&spec.cell_key(cell)) {
                return Err(underflow());
            }
        }
        for n in 0..spec.num_nodes() {
            drop_one(&mut self.family[n], spec.family_key(n, cell));
            drop_one(&mut self.parent[n], spec.parent_key(n, cell));
        }
        drop_one(&mut self.visible, spec.visible_key(cell));
        if let Some(cells) = self.cells.as_mut() {
            drop_one(cells, spec.cell_key(cell));
        }
        self.total -= 1;
        Ok(())
    }

    /// `Σ_i ln S(i)!` over the full cell map.
    pub fn log_factorial_term(&self) -> Result<f64> {
        let cells = self.cells.as_ref().ok_or(Error::CellsNotTracked)?;
        let mut values: Vec<u64> = cells.values().copied().collect();
        values.sort_unstable();
        Ok(values.into_iter().map(|v| ln_gamma(v as f64 + 1.0)).sum())
    }

    /// Verifies the family/parent/visible consistency invariants.
    pub fn check_consistency(&self, spec: &ModelSpec) -> std::result::Result<(), String> {
        for n in 0..spec.num_nodes() {
            let card = spec.card(n) as u64;
            let mut by_parent = CountMap::default();
            for (&k, &v) in &self.family[n] {
                if v == 0 {
                    return Err(format!("node {n}: stored zero"));
                }
                bump(&mut by_parent, k / card, v);
            }
            if by_parent != self.parent[n] {
                return Err(format!("node {n}: family sums disagree with parent counts"));
            }
            let sum: u64 = self.family[n].values().sum();
            if sum != self.total {
                return Err(format!("node {n}: family mass {sum} != total {}", self.total));
            }
        }
        if self.visible.values().sum::<u64>() != self.total {
            return Err("visible reconstruction mass differs from total".into());
        }
        if let Some(cells) = &self.cells {
            if cells.values().sum::<u64>() != self.total {
                return Err("cell map mass differs from total".into());
            }
        }
        Ok(())
    }
}

/// Builds statistics (with the full cell map) from a latent allocation tensor
/// over all nodes of `spec`.
pub fn stats_from_tensor(spec: &ModelSpec, s: &SparseCountTensor) -> Result<FamilyStats> {
    if s.dims() != spec.cards().as_slice() {
        return Err(Error::DimMismatch {
            expected: spec.cards(),
            got: s.dims().to_vec(),
        });
    }
    if s.has_mask() {
        return Err(Error::MaskedTensor);
    }
    let mut stats = FamilyStats::new(spec, true);
    for (idx, v) in s.iter() {
        stats.add(spec, idx, v);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_catalog_model, CatalogKind};
    use proptest::prelude::*;

    fn indep() -> ModelSpec {
        ModelSpec::from_edges(&[("i", 2), ("j", 2)], &[], &["i", "j"]).unwrap()
    }

    #[test]
    fn empty_tensor_gives_empty_stats() {
        let spec = indep();
        let st = stats_from_tensor(&spec, &SparseCountTensor::new(vec![2, 2])).unwrap();
        assert_eq!(st.total(), 0);
        assert!(st.family(0).is_empty() && st.family(1).is_empty() && st.visible().is_empty());
    }

    #[test]
    fn row_and_column_sums() {
        let spec = indep();
        let s = SparseCountTensor::from_matrix(&[[2u64, 1], [0, 1]]);
        let st = stats_from_tensor(&spec, &s).unwrap();
        assert_eq!(st.total(), 4);
        assert_eq!(st.family_count(0, 0), 3);
        assert_eq!(st.family_count(0, 1), 1);
        assert_eq!(st.family_count(1, 0), 2);
        assert_eq!(st.family_count(1, 1), 2);
        assert_eq!(st.parent_count(0, 0), 4);
    }

    #[test]
    fn single_token_and_inverse_pair() {
        let spec = build_catalog_model(CatalogKind::Klnmf, &[2, 3, 3]).unwrap();
        let empty = FamilyStats::new(&spec, true);
        let mut st = empty.clone();
        st.increment(&spec, &[1, 0, 2]);
        assert_eq!(st.total(), 1);
        for n in 0..3 {
            assert_eq!(st.family(n).len(), 1);
            assert_eq!(st.family_count(n, spec.family_key(n, &[1, 0, 2])), 1);
        }
        st.decrement(&spec, &[1, 0, 2]).unwrap();
        assert_eq!(st, empty);
    }

    #[test]
    fn shared_parent_configuration() {
        let spec = build_catalog_model(CatalogKind::Klnmf, &[2, 3, 3]).unwrap();
        let mut st = FamilyStats::new(&spec, false);
        st.increment(&spec, &[0, 2, 1]);
        st.increment(&spec, &[1, 2, 0]);
        // node i has parent k; both tokens share k = 2
        assert_eq!(st.parent_count(0, spec.parent_key(0, &[0, 2, 1])), 2);
    }

    #[test]
    fn underflow_leaves_state_untouched() {
        let spec = indep();
        let mut st = FamilyStats::new(&spec, true);
        st.increment(&spec, &[0, 0]);
        let before = st.clone();
        assert!(matches!(st.decrement(&spec, &[0, 1]), Err(Error::Underflow(_))));
        assert_eq!(st, before);
    }

    #[test]
    fn dim_mismatch() {
        let spec = indep();
        assert!(matches!(
            stats_from_tensor(&spec, &SparseCountTensor::new(vec![3, 2])),
            Err(Error::DimMismatch { .. })
        ));
    }

    fn tucker() -> ModelSpec {
        build_catalog_model(CatalogKind::Tucker, &[2, 2, 3, 2, 2, 2]).unwrap()
    }

    fn arb_cells() -> impl Strategy<Value = Vec<Vec<usize>>> {
        let cards = tucker().cards();
        let cell = cards.into_iter().map(|c| 0..c).collect::<Vec<_>>();
        proptest::collection::vec(cell, 0..20)
    }

    proptest! {
        #[test]
        fn incremental_matches_batch_in_any_order(cells in arb_cells(), seed in any::<u64>()) {
            let spec = tucker();
            let mut s = SparseCountTensor::new(spec.cards());
            for c in &cells {
                s.add(c, 1).unwrap();
            }
            let batch = stats_from_tensor(&spec, &s).unwrap();
            let mut order = cells.clone();
            // deterministic shuffle
            let mut state = seed | 1;
            for i in (1..order.len()).rev() {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                order.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let mut inc = FamilyStats::new(&spec, true);
            for c in &order {
                inc.increment(&spec, c);
            }
            prop_assert_eq!(&inc, &batch);
            prop_assert!(inc.check_consistency(&spec).is_ok());
        }

        #[test]
        fn consistency_survives_mixed_updates(cells in arb_cells(), drop_mask in proptest::collection::vec(any::<bool>(), 20)) {
            let spec = tucker();
            let mut st = FamilyStats::new(&spec, true);
            for c in &cells {
                st.increment(&spec, c);
            }
            for (c, d) in cells.iter().zip(&drop_mask) {
                if *d {
                    st.decrement(&spec, c).unwrap();
                }
                prop_assert!(st.check_consistency(&spec).is_ok());
            }
        }
    }
}
