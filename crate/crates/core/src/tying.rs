//! Symmetric CP / sNMF: one latent root `r` whose `N` children share a single
//! conditional table `θ_{i|r}`.
//!
//! Each token draws its `N` child indices from the same table, so the table's
//! sufficient statistic is the position-summed count `Σ_n S_n(i, r)` and the
//! predictive ratio telescopes into rising factorials within a token.

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::model::{BaseMeasure, ModelSpec, PriorSpec};
use crate::special::ln_gamma;
use crate::tensor::{CountMap, SparseCountTensor};
use crate::urn::Urn;

/// Tied sufficient statistics. `shared` is keyed by `r · I + i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TiedStats {
    root: CountMap,
    shared: CountMap,
    visible: CountMap,
    cells: Option<CountMap>,
    total: u64,
}

impl TiedStats {
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn root_count(&self, r: usize) -> u64 {
        self.root.get(&(r as u64)).copied().unwrap_or(0)
    }

    pub fn root(&self) -> &CountMap {
        &self.root
    }

    pub fn shared(&self) -> &CountMap {
        &self.shared
    }

    pub fn cells(&self) -> Option<&CountMap> {
        self.cells.as_ref()
    }
}

/// The tied allocation model; implements [`Urn`] so SMC and exact enumeration
/// run on it without change.
#[derive(Clone, Debug)]
pub struct TiedUrn {
    spec: ModelSpec,
    prior: PriorSpec,
    root: usize,
    children: Vec<usize>,
    rank: usize,
    card: usize,
    root_cell: f64,
    root_parent: f64,
    child_cell: f64,
    child_parent: f64,
}

impl TiedUrn {
    pub fn new(spec: ModelSpec, prior: PriorSpec) -> Result<Self> {
        let [group] = spec.tying() else {
            return Err(Error::UnsupportedTying("model declares no tying group".into()));
        };
        let roots: Vec<usize> = (0..spec.num_nodes()).filter(|&n| spec.parents(n).is_empty()).collect();
        let [root] = roots[..] else {
            return Err(Error::UnsupportedTying("expected exactly one root".into()));
        };
        let children: Vec<usize> = group.iter().map(|b| b.child).collect();
        if children.is_empty() || children.iter().any(|&c| spec.parents(c) != [root]) {
            return Err(Error::UnsupportedTying("every tied table must be `child | root`".into()));
        }
        let rank = spec.card(root);
        let card = spec.card(children[0]);
        let (root_cell, child_cell) = match prior.base {
            BaseMeasure::Bdeu => (prior.a / rank as f64, prior.a / (rank * card) as f64),
            BaseMeasure::FlatCell(c) => (c, c),
        };
        Ok(Self {
            root,
            children,
            rank,
            card,
            root_cell,
            root_parent: root_cell * rank as f64,
            child_cell,
            child_parent: child_cell * card as f64,
            spec,
            prior,
        })
    }

    pub fn num_tied(&self) -> usize {
        self.children.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    fn shared_key(&self, r: usize, i: usize) -> u64 {
        (r * self.card + i) as u64
    }

    fn shared_count(&self, stats: &TiedStats, r: usize, i: usize) -> u64 {
        stats.shared.get(&self.shared_key(r, i)).copied().unwrap_or(0)
    }

    pub fn stats_from_tensor(&self, s: &SparseCountTensor, track_cells: bool) -> Result<TiedStats> {
        if s.dims() != self.spec.cards().as_slice() {
            return Err(Error::DimMismatch {
                expected: self.spec.cards(),
                got: s.dims().to_vec(),
            });
        }
        let mut st = self.empty_stats(track_cells);
        for (idx, v) in s.iter() {
            for _ in 0..v {
                self.increment(&mut st, idx);
            }
        }
        Ok(st)
    }
}

fn bump(map: &mut CountMap, key: u64, by: u64) {
    *map.entry(key).or_insert(0) += by;
}

fn drop_by(map: &mut CountMap, key: u64, by: u64) {
    if let Some(v) = map.get_mut(&key) {
        *v -= by;
        if *v == 0 {
            map.remove(&key);
        }
    }
}

impl Urn for TiedUrn {
    type Stats = TiedStats;

    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    fn empty_stats(&self, track_cells: bool) -> TiedStats {
        TiedStats {
            root: CountMap::default(),
            shared: CountMap::default(),
            visible: CountMap::default(),
            cells: track_cells.then(CountMap::default),
            total: 0,
        }
    }

    fn total(&self, stats: &TiedStats) -> u64 {
        stats.total
    }

    fn visible_count(&self, stats: &TiedStats, visible_key: u64) -> u64 {
        stats.visible.get(&visible_key).copied().unwrap_or(0)
    }

    fn transition_logprob(&self, stats: &TiedStats, cell: &[usize]) -> f64 {
        let r = cell[self.root];
        let s0 = stats.root_count(r) as f64;
        let mut acc = ((self.root_cell + s0) / (self.root_parent + stats.total as f64)).ln();
        let n = self.children.len() as f64;
        let parent = self.child_parent + n * s0;
        for (m, &c) in self.children.iter().enumerate() {
            let i = cell[c];
            let earlier = self.children[..m].iter().filter(|&&p| cell[p] == i).count() as f64;
            let num = self.child_cell + self.shared_count(stats, r, i) as f64 + earlier;
            acc += (num / (parent + m as f64)).ln();
        }
        acc
    }

    fn increment(&self, stats: &mut TiedStats, cell: &[usize]) {
        let r = cell[self.root];
        bump(&mut stats.root, r as u64, 1);
        for &c in &self.children {
            bump(&mut stats.shared, self.shared_key(r, cell[c]), 1);
        }
        bump(&mut stats.visible, self.spec.visible_key(cell), 1);
        if let Some(cells) = stats.cells.as_mut() {
            bump(cells, self.spec.cell_key(cell), 1);
        }
        stats.total += 1;
    }

    fn decrement(&self, stats: &mut TiedStats, cell: &[usize]) -> Result<()> {
        let r = cell[self.root];
        let underflow = || Error::Underflow(cell.to_vec());
        if stats.root_count(r) == 0 || self.visible_count(stats, self.spec.visible_key(cell)) == 0 {
            return Err(underflow());
        }
        let mut need: FxHashMap<u64, u64> = FxHashMap::default();
        for &c in &self.children {
            *need.entry(self.shared_key(r, cell[c])).or_insert(0) += 1;
        }
        if need.iter().any(|(k, &v)| stats.shared.get(k).copied().unwrap_or(0) < v) {
            return Err(underflow());
        }
        if let Some(cells) = stats.cells.as_ref() {
            if !cells.contains_key(&self.spec.cell_key(cell)) {
                return Err(underflow());
            }
        }
        drop_by(&mut stats.root, r as u64, 1);
        for (k, v) in need {
            drop_by(&mut stats.shared, k, v);
        }
        drop_by(&mut stats.visible, self.spec.visible_key(cell), 1);
        if let Some(cells) = stats.cells.as_mut() {
            drop_by(cells, self.spec.cell_key(cell), 1);
        }
        stats.total -= 1;
        Ok(())
    }

    fn log_events(&self, stats: &TiedStats) -> f64 {
        let n = self.children.len() as u64;
        let mut acc = 0.0;
        for &v in stats.root.values() {
            acc += ln_gamma(self.root_cell + v as f64) - ln_gamma(self.root_cell);
        }
        acc -= ln_gamma(self.root_parent + stats.total as f64) - ln_gamma(self.root_parent);
        for &v in stats.shared.values() {
            acc += ln_gamma(self.child_cell + v as f64) - ln_gamma(self.child_cell);
        }
        for &v in stats.root.values() {
            acc -= ln_gamma(self.child_parent + (n * v) as f64) - ln_gamma(self.child_parent);
        }
        acc
    }
}

/// `ln π(s^{1:T})` for the tied model: any event sequence with these counts.
pub fn tied_log_marginal_events(spec: &ModelSpec, prior: &PriorSpec, stats: &TiedStats) -> Result<f64> {
    Ok(TiedUrn::new(spec.clone(), *prior)?.log_events(stats))
}

/// One-step predictive `π(s^τ | S^{τ−1})` of the event `cell = (r, i_1, .., i_N)` in node order.
pub fn tied_transition_logprob(
    spec: &ModelSpec,
    prior: &PriorSpec,
    stats: &TiedStats,
    cell: &[usize],
) -> Result<f64> {
    Ok(TiedUrn::new(spec.clone(), *prior)?.transition_logprob(stats, cell))
}

/// Proposal and weight functions for SMC on the tied model: the returned
/// [`TiedUrn`] plugs into [`crate::smc::run_sis_r`] directly.
pub fn tied_smc_adapters(spec: &ModelSpec, prior: &PriorSpec) -> Result<TiedUrn> {
    TiedUrn::new(spec.clone(), *prior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{odometer, symmetric_cp};
    use crate::special::log_sum_exp;
    use crate::urn::Bam;

    fn prior(a: f64) -> PriorSpec {
        PriorSpec::new(a, 1.0).unwrap()
    }

    #[test]
    fn empty_stats_score_zero() {
        let spec = symmetric_cp(3, 2, 2).unwrap();
        let urn = TiedUrn::new(spec, prior(1.0)).unwrap();
        assert_eq!(urn.log_events(&urn.empty_stats(false)), 0.0);
    }

    #[test]
    fn single_token_by_hand() {
        // N = 2, I = 2, R = 1, token at (i1 = 0, i2 = 1)
        let a = 0.8;
        let spec = symmetric_cp(2, 1, 2).unwrap();
        let urn = TiedUrn::new(spec, prior(a)).unwrap();
        let mut st = urn.empty_stats(false);
        urn.increment(&mut st, &[0, 0, 1]);
        let alpha = a / 2.0;
        // root: α0 / α0 = 1; first draw α / a; second draw (α + 0) / (a + 1)
        let expected = (alpha / a).ln() + (alpha / (a + 1.0)).ln();
        assert!((urn.log_events(&st) - expected).abs() < 1e-14);
    }

    #[test]
    fn empty_transition_by_hand_and_normalized() {
        let spec = symmetric_cp(2, 2, 2).unwrap();
        let urn = TiedUrn::new(spec.clone(), prior(1.0)).unwrap();
        let st = urn.empty_stats(false);
        let cells = odometer(&spec.cards());
        // α = 1/4, α_pa = 1/2: the second draw sees the first one
        for c in &cells {
            let second = if c[1] == c[2] { 1.25 / 1.5 } else { 0.25 / 1.5 };
            let expected = (0.5f64 * 0.5 * second).ln();
            assert!((urn.transition_logprob(&st, c) - expected).abs() < 1e-12);
        }
        let mut st = st;
        for c in [[0, 1, 1], [1, 0, 1], [0, 1, 0]] {
            urn.increment(&mut st, &c);
            let lps: Vec<f64> = cells.iter().map(|c| urn.transition_logprob(&st, c)).collect();
            assert!(log_sum_exp(&lps).abs() < 1e-12);
        }
    }

    #[test]
    fn one_child_reduces_to_untied_cp() {
        let spec = symmetric_cp(3, 2, 1).unwrap();
        let tied = TiedUrn::new(spec.clone(), prior(1.7)).unwrap();
        let untied = Bam::new(spec.clone(), prior(1.7));
        let mut ts = tied.empty_stats(false);
        let mut us = untied.empty_stats(false);
        for c in [[0, 2], [1, 1], [0, 2], [1, 0], [0, 0]] {
            assert!((tied.transition_logprob(&ts, &c) - untied.transition_logprob(&us, &c)).abs() < 1e-13);
            tied.increment(&mut ts, &c);
            untied.increment(&mut us, &c);
        }
        assert!((tied.log_events(&ts) - untied.log_events(&us)).abs() < 1e-12);
    }

    #[test]
    fn decrement_restores() {
        let spec = symmetric_cp(2, 2, 3).unwrap();
        let urn = TiedUrn::new(spec, prior(1.0)).unwrap();
        let mut st = urn.empty_stats(true);
        urn.increment(&mut st, &[1, 0, 0, 1]);
        let snap = st.clone();
        urn.increment(&mut st, &[0, 1, 1, 1]);
        urn.decrement(&mut st, &[0, 1, 1, 1]).unwrap();
        assert_eq!(st, snap);
        assert!(urn.decrement(&mut st, &[0, 1, 1, 1]).is_err());
        assert_eq!(st, snap);
    }

    #[test]
    fn rejects_untied_models() {
        let spec = crate::model::build_catalog_model(crate::model::CatalogKind::Cp, &[2, 3, 3]).unwrap();
        assert!(matches!(TiedUrn::new(spec, prior(1.0)), Err(Error::UnsupportedTying(_))));
    }
}
