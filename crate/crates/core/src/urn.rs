//! The Pólya-Bayes urn: marginal allocation probabilities and token kernels.
//!
//! Integrating out the intensity and every conditional table turns token
//! placement into a self-reinforcing urn whose one-step law is a product of
//! family count ratios. The same counts give the closed-form marginal
//! allocation probability, so both are evaluated from [`FamilyStats`] alone.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{alpha_families, FamilyPrior, ModelSpec, PriorSpec};
use crate::special::{ln_gamma, log_prob_total as nb_log_prob};
use crate::tensor::{CountMap, FamilyStats};

/// An allocation process with exchangeable token sequences.
///
/// `log_events` is the log probability of any one ordered token sequence
/// having the counts in `stats`; `transition_logprob` is its one-step ratio.
/// SMC and exact enumeration only talk to models through this trait.
pub trait Urn: Sync {
    type Stats: Clone + Send + Sync + std::fmt::Debug;

    fn spec(&self) -> &ModelSpec;
    fn prior(&self) -> &PriorSpec;
    fn empty_stats(&self, track_cells: bool) -> Self::Stats;
    fn total(&self, stats: &Self::Stats) -> u64;
    fn visible_count(&self, stats: &Self::Stats, visible_key: u64) -> u64;
    fn transition_logprob(&self, stats: &Self::Stats, cell: &[usize]) -> f64;
    fn increment(&self, stats: &mut Self::Stats, cell: &[usize]);
    fn decrement(&self, stats: &mut Self::Stats, cell: &[usize]) -> Result<()>;
    fn log_events(&self, stats: &Self::Stats) -> f64;
}

/// Untied Bayesian allocation model with cached family pseudo-counts.
#[derive(Clone, Debug)]
pub struct Bam {
    spec: ModelSpec,
    prior: PriorSpec,
    alpha: Vec<FamilyPrior>,
}

impl Bam {
    pub fn new(spec: ModelSpec, prior: PriorSpec) -> Self {
        let alpha = alpha_families(&spec, &prior);
        Self { spec, prior, alpha }
    }

    pub fn alpha(&self) -> &[FamilyPrior] {
        &self.alpha
    }

    /// Samples the next token cell node by node in topological order.
    pub fn sample_transition<R: Rng + ?Sized>(&self, stats: &FamilyStats, rng: &mut R) -> Vec<usize> {
        let spec = &self.spec;
        let mut cell = vec![0usize; spec.num_nodes()];
        for &n in spec.topological_order() {
            let card = spec.card(n);
            if card == 1 {
                continue;
            }
            let base = spec.parent_key(n, &cell) * card as u64;
            let a = self.alpha[n].cell;
            let weights: Vec<f64> = (0..card as u64)
                .map(|v| a + stats.family_count(n, base + v) as f64)
                .collect();
            cell[n] = sample_index(&weights, rng);
        }
        cell
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // rounding fell past the end: return the last positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

fn family_log_ratio(alpha: FamilyPrior, family: &CountMap, parent: &CountMap) -> f64 {
    let mut acc = 0.0;
    for &v in family.values() {
        acc += ln_gamma(alpha.cell + v as f64) - ln_gamma(alpha.cell);
    }
    for &v in parent.values() {
        acc -= ln_gamma(alpha.parent + v as f64) - ln_gamma(alpha.parent);
    }
    acc
}

impl Urn for Bam {
    type Stats = FamilyStats;

    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    fn empty_stats(&self, track_cells: bool) -> FamilyStats {
        FamilyStats::new(&self.spec, track_cells)
    }

    fn total(&self, stats: &FamilyStats) -> u64 {
        stats.total()
    }

    fn visible_count(&self, stats: &FamilyStats, visible_key: u64) -> u64 {
        stats.visible_count(visible_key)
    }

    fn transition_logprob(&self, stats: &FamilyStats, cell: &[usize]) -> f64 {
        let spec = &self.spec;
        let mut acc = 0.0;
        for n in 0..spec.num_nodes() {
            let pk = spec.parent_key(n, cell);
            let fk = pk * spec.card(n) as u64 + cell[n] as u64;
            let a = self.alpha[n];
            acc += ((a.cell + stats.family_count(n, fk) as f64)
                / (a.parent + stats.parent_count(n, pk) as f64))
                .ln();
        }
        acc
    }

    fn increment(&self, stats: &mut FamilyStats, cell: &[usize]) {
        stats.increment(&self.spec, cell);
    }

    fn decrement(&self, stats: &mut FamilyStats, cell: &[usize]) -> Result<()> {
        stats.decrement(&self.spec, cell)
    }

    fn log_events(&self, stats: &FamilyStats) -> f64 {
        (0..self.spec.num_nodes())
            .map(|n| family_log_ratio(self.alpha[n], stats.family(n), stats.parent(n)))
            .sum()
    }
}

/// `ln Pr(T = t)` under the Gamma–Poisson token count (negative binomial).
pub fn log_prob_total(prior: &PriorSpec, t: u64) -> f64 {
    nb_log_prob(prior.a, prior.b, t)
}

/// `Σ_n [ln B_n(α_fa + S_fa) − ln B_n(α_fa)]`, the Bayesian-network score of complete allocations.
pub fn log_network_score(spec: &ModelSpec, prior: &PriorSpec, stats: &FamilyStats) -> f64 {
    let alpha = alpha_families(spec, prior);
    (0..spec.num_nodes())
        .map(|n| family_log_ratio(alpha[n], stats.family(n), stats.parent(n)))
        .sum()
}

/// `ln π(S)`. `log_factorial_term` is `Σ_i ln S(i)!` over the full cells.
pub fn log_marginal_allocation(
    spec: &ModelSpec,
    prior: &PriorSpec,
    stats: &FamilyStats,
    log_factorial_term: f64,
) -> f64 {
    let (a, b) = (prior.a, prior.b);
    let t = stats.total() as f64;
    a * b.ln() - (a + t) * (b + 1.0).ln() + ln_gamma(a + t) - ln_gamma(a)
        + log_network_score(spec, prior, stats)
        - log_factorial_term
}

/// `ln π_{S₊}(S)`: the allocation law conditioned on its total.
pub fn log_marginal_given_total(
    spec: &ModelSpec,
    prior: &PriorSpec,
    stats: &FamilyStats,
    log_factorial_term: f64,
) -> f64 {
    log_network_score(spec, prior, stats) + ln_gamma(stats.total() as f64 + 1.0) - log_factorial_term
}

/// `ln π(S)` when the stats carry the full cell map.
pub fn log_marginal_allocation_tracked(spec: &ModelSpec, prior: &PriorSpec, stats: &FamilyStats) -> Result<f64> {
    Ok(log_marginal_allocation(spec, prior, stats, stats.log_factorial_term()?))
}

pub fn transition_logprob(spec: &ModelSpec, prior: &PriorSpec, stats: &FamilyStats, cell: &[usize]) -> f64 {
    Bam::new(spec.clone(), *prior).transition_logprob(stats, cell)
}

pub fn sample_transition<R: Rng + ?Sized>(
    spec: &ModelSpec,
    prior: &PriorSpec,
    stats: &FamilyStats,
    rng: &mut R,
) -> Vec<usize> {
    Bam::new(spec.clone(), *prior).sample_transition(stats, rng)
}

/// Log probability that removing a uniformly chosen token empties one slot of `cell`.
pub fn reverse_transition_logprob(spec: &ModelSpec, stats: &FamilyStats, cell: &[usize]) -> Result<f64> {
    let count = stats.cell_count(spec, cell)?;
    if count == 0 {
        return Err(Error::CellEmpty(cell.to_vec()));
    }
    Ok((count as f64 / stats.total() as f64).ln())
}

/// Active family configurations minus active parent configurations, summed over nodes.
pub fn effective_parameters(spec: &ModelSpec, stats: &FamilyStats) -> i64 {
    (0..spec.num_nodes())
        .map(|n| stats.family(n).len() as i64 - stats.parent(n).len() as i64)
        .sum()
}

/// Dirichlet parameters of one conditional table after conditioning on `S`:
/// `base + counts[key]`, with `base` on every untouched cell.
#[derive(Clone, Debug)]
pub struct PosteriorFamily {
    pub base: f64,
    pub parent_base: f64,
    pub counts: CountMap,
    pub parent_counts: CountMap,
}

impl PosteriorFamily {
    pub fn param(&self, key: u64) -> f64 {
        self.base + self.counts.get(&key).copied().unwrap_or(0) as f64
    }

    pub fn parent_param(&self, key: u64) -> f64 {
        self.parent_base + self.parent_counts.get(&key).copied().unwrap_or(0) as f64
    }
}

/// Conditional posterior of `(λ, Θ)` given `S`: Gamma(a + S₊, b + 1) times Dirichlets.
#[derive(Clone, Debug)]
pub struct PosteriorFactors {
    pub lambda_shape: f64,
    pub lambda_rate: f64,
    pub families: Vec<PosteriorFamily>,
}

pub fn posterior_factors(spec: &ModelSpec, prior: &PriorSpec, stats: &FamilyStats) -> PosteriorFactors {
    let alpha = alpha_families(spec, prior);
    PosteriorFactors {
        lambda_shape: prior.a + stats.total() as f64,
        lambda_rate: prior.b + 1.0,
        families: (0..spec.num_nodes())
            .map(|n| PosteriorFamily {
                base: alpha[n].cell,
                parent_base: alpha[n].parent,
                counts: stats.family(n).clone(),
                parent_counts: stats.parent(n).clone(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_catalog_model, odometer, BaseMeasure, CatalogKind};
    use crate::special::log_sum_exp;
    use crate::tensor::{stats_from_tensor, SparseCountTensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prior(a: f64) -> PriorSpec {
        PriorSpec::new(a, 1.0).unwrap()
    }

    fn two_by_two(edges: &[(&str, &str)]) -> ModelSpec {
        ModelSpec::from_edges(&[("i", 2), ("j", 2)], edges, &["i", "j"]).unwrap()
    }

    fn golden_s() -> SparseCountTensor {
        SparseCountTensor::from_matrix(&[[2u64, 1], [0, 1]])
    }

    #[test]
    fn consistent_prior_goldens() {
        let p = prior(1.0);
        let s = golden_s();
        let indep = two_by_two(&[]);
        let st = stats_from_tensor(&indep, &s).unwrap();
        let v = log_marginal_allocation_tracked(&indep, &p, &st).unwrap();
        assert!((v - -7.977).abs() < 1e-3, "{v}");
        for edges in [[("j", "i")], [("i", "j")]] {
            let spec = two_by_two(&edges);
            let st = stats_from_tensor(&spec, &s).unwrap();
            let v = log_marginal_allocation_tracked(&spec, &p, &st).unwrap();
            assert!((v - -8.094).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn empty_allocation_is_negative_binomial_head() {
        let spec = build_catalog_model(CatalogKind::Klnmf, &[3, 2, 4]).unwrap();
        let p = PriorSpec::new(2.0, 3.0).unwrap();
        let st = FamilyStats::new(&spec, true);
        let v = log_marginal_allocation_tracked(&spec, &p, &st).unwrap();
        assert!((v - 2.0 * (3.0f64 / 4.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn decomposition_identity() {
        let spec = two_by_two(&[("j", "i")]);
        let p = prior(1.0);
        let st = stats_from_tensor(&spec, &golden_s()).unwrap();
        let lf = st.log_factorial_term().unwrap();
        let full = log_marginal_allocation(&spec, &p, &st, lf);
        let cond = log_marginal_given_total(&spec, &p, &st, lf);
        assert!((full - (log_prob_total(&p, 4) + cond)).abs() < 1e-12);
        // value recovered from the golden by subtracting ln Pr(T = 4) = ln(1/32)
        assert!((cond - (-8.094 - (1.0f64 / 32.0).ln())).abs() < 1e-3);
    }

    #[test]
    fn single_token_is_uniform() {
        let spec = build_catalog_model(CatalogKind::Cp, &[2, 3, 4]).unwrap();
        let p = prior(0.7);
        let mut st = FamilyStats::new(&spec, true);
        st.increment(&spec, &[1, 2, 3]);
        let v = log_marginal_given_total(&spec, &p, &st, 0.0);
        assert!((v + (24.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_transition_is_uniform() {
        let spec = build_catalog_model(CatalogKind::Klnmf, &[3, 2, 4]).unwrap();
        let bam = Bam::new(spec.clone(), prior(1.3));
        let st = FamilyStats::new(&spec, false);
        for cell in odometer(&spec.cards()) {
            assert!((bam.transition_logprob(&st, &cell) + (24.0f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn klnmf_three_ratio_form() {
        // θ_k = (α_{+kj} + S_{+kj})(α_{ik+} + S_{ik+}) / ((α_+ + S_+)(α_{+k+} + S_{+k+})) times the root ratio
        let spec = build_catalog_model(CatalogKind::Klnmf, &[3, 2, 4]).unwrap();
        let (a, i_card, k_card, j_card) = (1.5, 3.0, 2.0, 4.0);
        let bam = Bam::new(spec.clone(), prior(a));
        let mut st = FamilyStats::new(&spec, true);
        for c in [[0, 1, 2], [2, 1, 2], [0, 0, 3], [1, 1, 0]] {
            st.increment(&spec, &c);
        }
        let cell = [0usize, 1, 2];
        // counts by hand: S_{+kj}(1,2) = 2, S_{ik+}(0,1) = 1, S_{+k+}(1) = 3, S_{++j}(2) = 2, S_+ = 4
        let root = (a / j_card + 2.0) / (a + 4.0);
        let kj = (a / (k_card * j_card) + 2.0) / (a / j_card + 2.0);
        let ik = (a / (i_card * k_card) + 1.0) / (a / k_card + 3.0);
        let expected = (root * kj * ik).ln();
        assert!((bam.transition_logprob(&st, &cell) - expected).abs() < 1e-13);
    }

    #[test]
    fn sampling_degenerate_single_cell() {
        let spec = ModelSpec::from_edges(&[("x", 1)], &[], &["x"]).unwrap();
        let bam = Bam::new(spec.clone(), prior(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut st = FamilyStats::new(&spec, false);
        for _ in 0..10 {
            let c = bam.sample_transition(&st, &mut rng);
            assert_eq!(c, vec![0]);
            st.increment(&spec, &c);
        }
    }

    #[test]
    fn reverse_kernel() {
        let spec = two_by_two(&[]);
        let mut st = FamilyStats::new(&spec, true);
        st.increment(&spec, &[1, 0]);
        assert_eq!(reverse_transition_logprob(&spec, &st, &[1, 0]).unwrap(), 0.0);
        assert!(matches!(reverse_transition_logprob(&spec, &st, &[0, 0]), Err(Error::CellEmpty(_))));
        st.increment(&spec, &[0, 0]);
        st.increment(&spec, &[0, 0]);
        let v = reverse_transition_logprob(&spec, &st, &[0, 0]).unwrap();
        assert!((v - (2.0f64 / 3.0).ln()).abs() < 1e-15);
        let untracked = FamilyStats::new(&spec, false);
        assert!(matches!(
            reverse_transition_logprob(&spec, &untracked, &[0, 0]),
            Err(Error::CellsNotTracked)
        ));
    }

    #[test]
    fn effective_parameter_counts() {
        let spec = two_by_two(&[]);
        assert_eq!(effective_parameters(&spec, &FamilyStats::new(&spec, false)), 0);
        let st = stats_from_tensor(&spec, &SparseCountTensor::from_matrix(&[[1u64, 2], [3, 1]])).unwrap();
        assert_eq!(effective_parameters(&spec, &st), 2);
    }

    #[test]
    fn flat_cell_prior_matches_inconsistent_goldens() {
        let p = PriorSpec::with_base(1.0, 1.0, BaseMeasure::FlatCell(0.25)).unwrap();
        let s = golden_s();
        for (edges, golden) in [
            (vec![], -8.808),
            (vec![("i", "j")], -8.472),
            (vec![("j", "i")], -8.549),
        ] {
            let spec = two_by_two(&edges);
            let st = stats_from_tensor(&spec, &s).unwrap();
            let v = log_marginal_allocation_tracked(&spec, &p, &st).unwrap();
            assert!((v - golden).abs() < 1e-3, "{edges:?}: {v}");
        }
    }

    #[test]
    fn transition_normalizes_under_flat_cell_prior() {
        let spec = build_catalog_model(CatalogKind::Klnmf, &[2, 3, 2]).unwrap();
        let p = PriorSpec::with_base(1.0, 1.0, BaseMeasure::FlatCell(0.3)).unwrap();
        let bam = Bam::new(spec.clone(), p);
        let mut st = FamilyStats::new(&spec, false);
        st.increment(&spec, &[1, 2, 0]);
        st.increment(&spec, &[1, 0, 1]);
        let lps: Vec<f64> = odometer(&spec.cards()).iter().map(|c| bam.transition_logprob(&st, c)).collect();
        assert!(log_sum_exp(&lps).abs() < 1e-12);
    }

    #[test]
    fn posterior_factor_parameters() {
        let spec = two_by_two(&[("j", "i")]);
        let st = stats_from_tensor(&spec, &golden_s()).unwrap();
        let pf = posterior_factors(&spec, &prior(1.0), &st);
        assert_eq!(pf.lambda_shape, 5.0);
        assert_eq!(pf.lambda_rate, 2.0);
        // node i | j: cell (i=0, j=0) has count 2 over base 1/4
        assert_eq!(pf.families[0].param(spec.family_key(0, &[0, 0])), 2.25);
        assert_eq!(pf.families[0].param(spec.family_key(0, &[1, 0])), 0.25);
    }
}
