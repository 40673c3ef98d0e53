//! Sequential importance sampling for the marginal likelihood `𝓛_X`.
//!
//! Visible indices are proposed by drawing the remaining observed tokens
//! without replacement; latent indices are drawn from the exact urn
//! conditional. Every trajectory therefore ends at `S_V = X`, and its weight
//! is `T!/∏X! · ∏_τ p_{τ,V}`.

mod resample;

use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use resample::{effective_sample_size, normalize_log_weights, offspring_counts, resample_indices, Resampling};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, PriorSpec};
use crate::rng::{keyed_rng, PARTICLE_DOMAIN, RESAMPLE_DOMAIN};
use crate::special::{ln_gamma, log_mean_exp, log_sum_exp};
use crate::tensor::{FamilyStats, SparseCountTensor};
use crate::urn::{log_prob_total, posterior_factors, Urn};

pub const DEFAULT_LATENT_CAP: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "threshold")]
pub enum Schedule {
    Always,
    /// Resample when `ESS < ρ·M`.
    Adaptive(f64),
    Never,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Adaptive(0.5)
    }
}

impl Schedule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Schedule::Always => "always",
            Schedule::Adaptive(_) => "adaptive",
            Schedule::Never => "never",
        }
    }

    fn fires(&self, ess: f64, m: usize) -> bool {
        match *self {
            Schedule::Always => true,
            Schedule::Adaptive(rho) => ess < rho * m as f64,
            Schedule::Never => false,
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    /// `always`, `never`, `adaptive` (ρ = 0.5) or `adaptive:ρ`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "always" => Ok(Schedule::Always),
            None if s == "never" => Ok(Schedule::Never),
            None if s == "adaptive" => Ok(Schedule::default()),
            Some(("adaptive", rho)) => {
                let rho: f64 = rho
                    .parse()
                    .map_err(|_| Error::Config(format!("bad ESS threshold `{rho}`")))?;
                Ok(Schedule::Adaptive(rho))
            }
            _ => Err(Error::Config(format!("unknown schedule `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    pub particles: usize,
    pub seed: u64,
    pub resampling: Resampling,
    pub schedule: Schedule,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
    pub latent_cap: usize,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            particles: 1000,
            seed: 0,
            resampling: Resampling::Systematic,
            schedule: Schedule::default(),
            threads: None,
            latent_cap: DEFAULT_LATENT_CAP,
        }
    }
}

impl SmcConfig {
    pub fn new(particles: usize, seed: u64) -> Self {
        Self {
            particles,
            seed,
            ..Self::default()
        }
    }

    /// Resample at every step, keeping the estimator of `Z` unbiased.
    pub fn unbiased(mut self) -> Self {
        self.schedule = Schedule::Always;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::Config("need at least one particle".into()));
        }
        if let Schedule::Adaptive(rho) = self.schedule {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::Config(format!("ESS threshold {rho} outside (0, 1]")));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("thread count must be positive".into()));
        }
        Ok(())
    }
}

/// Runs `f` inside a pool of `threads` workers, or in the ambient pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// One trajectory. The random stream of the particle in slot `m` at step `τ`
/// is keyed by `(seed, m, τ)`.
#[derive(Clone, Debug)]
pub struct Particle<S> {
    pub stats: S,
    /// Log weight since the last resampling event.
    pub log_weight: f64,
    /// `Σ_τ log p_{τ,V}` along the trajectory, inherited through resampling.
    pub log_pv_sum: f64,
}

#[derive(Clone, Debug)]
pub struct SmcEstimate<S> {
    pub log_z: f64,
    pub log_z0: f64,
    pub ess_trace: Vec<f64>,
    pub resample_steps: Vec<usize>,
    pub particles: Vec<Particle<S>>,
}

impl<S> SmcEstimate<S> {
    /// Normalized final weights.
    pub fn weights(&self) -> Vec<f64> {
        let lw: Vec<f64> = self.particles.iter().map(|p| p.log_weight).collect();
        normalize_log_weights(&lw).unwrap_or_else(|_| vec![0.0; lw.len()])
    }

    pub fn best_particle(&self) -> Option<&Particle<S>> {
        self.particles
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.log_weight.total_cmp(&b.log_weight).then(j.cmp(i)))
            .map(|(_, p)| p)
    }
}

/// Observed tokens plus the enumerated latent block, bound to a model.
pub struct Proposal<'a, U: Urn> {
    urn: &'a U,
    cells: Vec<(Vec<usize>, u64, u64)>,
    total: u64,
    latent: Vec<Vec<usize>>,
    log_fact_x: f64,
}

impl<'a, U: Urn> Proposal<'a, U> {
    pub fn new(urn: &'a U, x: &SparseCountTensor, latent_cap: usize) -> Result<Self> {
        let spec = urn.spec();
        if x.has_mask() {
            return Err(Error::MaskedTensor);
        }
        if x.dims() != spec.visible_cards().as_slice() {
            return Err(Error::DimMismatch {
                expected: spec.visible_cards(),
                got: x.dims().to_vec(),
            });
        }
        let cells: Vec<_> = x
            .iter()
            .map(|(iv, c)| (iv.clone(), spec.visible_tuple_key(iv), c))
            .collect();
        let log_fact_x = cells.iter().map(|&(_, _, c)| ln_gamma(c as f64 + 1.0)).sum();
        Ok(Self {
            urn,
            total: x.total(),
            latent: spec.latent_configs(latent_cap)?,
            cells,
            log_fact_x,
        })
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Index of the observed cell holding a uniformly chosen remaining token,
    /// together with that cell's remaining count.
    pub fn propose_visible<R: Rng + ?Sized>(&self, stats: &U::Stats, rng: &mut R) -> Result<(usize, u64)> {
        let done = self.urn.total(stats);
        if done >= self.total {
            return Err(Error::Exhausted);
        }
        let mut pick = rng.random_range(0..self.total - done);
        for (idx, (_, key, count)) in self.cells.iter().enumerate() {
            let left = count - self.urn.visible_count(stats, *key);
            if pick < left {
                return Ok((idx, left));
            }
            pick -= left;
        }
        Err(Error::Exhausted)
    }

    pub fn visible_tuple(&self, idx: usize) -> &[usize] {
        &self.cells[idx].0
    }

    fn fill_cell(&self, iv: &[usize], latent: &[usize], cell: &mut [usize]) {
        let spec = self.urn.spec();
        for (&n, &i) in spec.visible().iter().zip(iv) {
            cell[n] = i;
        }
        for (&n, &i) in spec.latent().iter().zip(latent) {
            cell[n] = i;
        }
    }

    fn joint_logprobs(&self, stats: &U::Stats, iv: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut cell = vec![0usize; self.urn.spec().num_nodes()];
        let lps = self
            .latent
            .iter()
            .map(|l| {
                self.fill_cell(iv, l, &mut cell);
                self.urn.transition_logprob(stats, &cell)
            })
            .collect();
        (lps, cell)
    }

    /// `log p_{τ,V}(i_V | S)`: the transition marginalized over the latent block.
    pub fn log_visible_marginal(&self, stats: &U::Stats, iv: &[usize]) -> f64 {
        log_sum_exp(&self.joint_logprobs(stats, iv).0)
    }

    /// Draws the latent block given `i_V`; returns the full cell and `log p_{τ,V}`.
    pub fn propose_latent<R: Rng + ?Sized>(
        &self,
        stats: &U::Stats,
        iv: &[usize],
        rng: &mut R,
    ) -> (Vec<usize>, f64) {
        let (lps, mut cell) = self.joint_logprobs(stats, iv);
        let lpv = log_sum_exp(&lps);
        let mut u = rng.random::<f64>();
        let mut chosen = lps.len() - 1;
        for (k, &lp) in lps.iter().enumerate() {
            let p = (lp - lpv).exp();
            if u < p {
                chosen = k;
                break;
            }
            u -= p;
        }
        self.fill_cell(iv, &self.latent[chosen], &mut cell);
        (cell, lpv)
    }

    /// One step of the sampler; returns the allocated full cell.
    pub fn sis_step<R: Rng + ?Sized>(&self, particle: &mut Particle<U::Stats>, rng: &mut R) -> Result<Vec<usize>> {
        let remaining = self.total - self.urn.total(&particle.stats);
        let (idx, left) = self.propose_visible(&particle.stats, rng)?;
        let (cell, lpv) = self.propose_latent(&particle.stats, &self.cells[idx].0, rng);
        particle.log_weight += lpv + (remaining as f64).ln() - (left as f64).ln();
        particle.log_pv_sum += lpv;
        self.urn.increment(&mut particle.stats, &cell);
        Ok(cell)
    }

    pub fn fresh_particle(&self) -> Particle<U::Stats> {
        Particle {
            stats: self.urn.empty_stats(false),
            log_weight: 0.0,
            log_pv_sum: 0.0,
        }
    }

    /// `log(T!/∏X!) + Σ_τ log p_{τ,V}`, the closed form of a full trajectory's weight.
    pub fn closed_form_log_weight(&self, log_pv_sum: f64) -> f64 {
        ln_gamma(self.total as f64 + 1.0) - self.log_fact_x + log_pv_sum
    }

    /// True when the particle's visible reconstruction equals `X`.
    pub fn hit(&self, stats: &U::Stats) -> bool {
        self.urn.total(stats) == self.total
            && self
                .cells
                .iter()
                .all(|(_, key, count)| self.urn.visible_count(stats, *key) == *count)
    }
}

fn check_hits<U: Urn>(proposal: &Proposal<'_, U>, particles: &[Particle<U::Stats>]) {
    for p in particles {
        assert!(proposal.hit(&p.stats), "trajectory ended away from X");
    }
}

/// `M` independent trajectories; `log_z = log Z₀ + log mean w`.
pub fn run_sis<U: Urn>(urn: &U, x: &SparseCountTensor, config: &SmcConfig) -> Result<SmcEstimate<U::Stats>> {
    config.validate()?;
    let proposal = Proposal::new(urn, x, config.latent_cap)?;
    let t = proposal.total;
    let seed = config.seed;
    let runs: Vec<Result<(Particle<U::Stats>, Vec<f64>)>> = with_threads(config.threads, || {
        (0..config.particles)
            .into_par_iter()
            .map(|m| {
                let mut p = proposal.fresh_particle();
                let mut history = Vec::with_capacity(t as usize);
                for step in 1..=t {
                    let mut rng = keyed_rng(seed, &[PARTICLE_DOMAIN, m as u64, step]);
                    proposal.sis_step(&mut p, &mut rng)?;
                    history.push(p.log_weight);
                }
                Ok((p, history))
            })
            .collect()
    })?;
    let mut particles = Vec::with_capacity(runs.len());
    let mut histories = Vec::with_capacity(runs.len());
    for r in runs {
        let (p, h) = r?;
        particles.push(p);
        histories.push(h);
    }
    check_hits(&proposal, &particles);
    let ess_trace = (0..t as usize)
        .map(|s| effective_sample_size(&histories.iter().map(|h| h[s]).collect::<Vec<_>>()))
        .collect();
    let log_z0 = log_prob_total(urn.prior(), t);
    let lw: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
    if !log_sum_exp(&lw).is_finite() && !lw.is_empty() {
        return Err(Error::AllWeightsZero);
    }
    Ok(SmcEstimate {
        log_z: log_z0 + log_mean_exp(&lw),
        log_z0,
        ess_trace,
        resample_steps: Vec::new(),
        particles,
    })
}

/// Resamples particles in place by `scheme`; all log weights reset to zero.
pub fn resample<S: Clone, R: Rng + ?Sized>(
    particles: &mut Vec<Particle<S>>,
    scheme: Resampling,
    rng: &mut R,
) -> Result<()> {
    let lw: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
    let w = normalize_log_weights(&lw)?;
    let ancestors = resample_indices(&w, particles.len(), scheme, rng)?;
    *particles = ancestors
        .into_iter()
        .map(|a| Particle {
            log_weight: 0.0,
            ..particles[a].clone()
        })
        .collect();
    Ok(())
}

/// Step-major propagation of `M` particles with scheduled resampling.
///
/// The running `Z` absorbs the mean incremental weight at each resampling
/// event and once more at termination.
pub fn run_sis_r<U: Urn>(urn: &U, x: &SparseCountTensor, config: &SmcConfig) -> Result<SmcEstimate<U::Stats>> {
    config.validate()?;
    let proposal = Proposal::new(urn, x, config.latent_cap)?;
    let t = proposal.total;
    let m = config.particles;
    let seed = config.seed;
    let mut particles: Vec<Particle<U::Stats>> = (0..m).map(|_| proposal.fresh_particle()).collect();
    let mut ess_trace = Vec::with_capacity(t as usize);
    let mut resample_steps = Vec::new();
    let mut log_z_acc = 0.0;
    with_threads(config.threads, || -> Result<()> {
        for step in 1..=t {
            particles
                .par_iter_mut()
                .enumerate()
                .try_for_each(|(slot, p)| {
                    let mut rng = keyed_rng(seed, &[PARTICLE_DOMAIN, slot as u64, step]);
                    proposal.sis_step(p, &mut rng).map(|_| ())
                })?;
            let lw: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
            let ess = effective_sample_size(&lw);
            ess_trace.push(ess);
            if step < t && config.schedule.fires(ess, m) {
                let lme = log_mean_exp(&lw);
                if !lme.is_finite() {
                    return Err(Error::AllWeightsZero);
                }
                log_z_acc += lme;
                let mut rng = keyed_rng(seed, &[RESAMPLE_DOMAIN, step]);
                resample(&mut particles, config.resampling, &mut rng)?;
                resample_steps.push(step as usize);
            }
        }
        Ok(())
    })??;
    check_hits(&proposal, &particles);
    let lw: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
    let lme = log_mean_exp(&lw);
    if !lme.is_finite() {
        return Err(Error::AllWeightsZero);
    }
    let log_z0 = log_prob_total(urn.prior(), t);
    Ok(SmcEstimate {
        log_z: log_z0 + log_z_acc + lme,
        log_z0,
        ess_trace,
        resample_steps,
        particles,
    })
}

/// Posterior-mean conditional table `θ̂_{n | pa(n)}`; `rows[parent key][i_n]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CondTable {
    pub node: String,
    pub parents: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// `(α_fa + S_fa) / (α_pa + S_pa)` for every family, as dense tables.
pub fn posterior_mean_tables(spec: &ModelSpec, prior: &PriorSpec, stats: &FamilyStats) -> Vec<CondTable> {
    let post = posterior_factors(spec, prior, stats);
    (0..spec.num_nodes())
        .map(|n| {
            let fam = &post.families[n];
            let card = spec.card(n) as u64;
            let rows = (0..spec.parent_configs(n))
                .map(|pk| {
                    let denom = fam.parent_param(pk);
                    (0..card).map(|i| fam.param(pk * card + i) / denom).collect()
                })
                .collect();
            CondTable {
                node: spec.nodes()[n].name.clone(),
                parents: spec.parents(n).iter().map(|&p| spec.nodes()[p].name.clone()).collect(),
                rows,
            }
        })
        .collect()
}

/// Matrix factors `W = θ_{i|k}` and `H = T·θ_{j|k}·θ_k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NmfFactors {
    pub w: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub reconstruction: Vec<Vec<f64>>,
    pub sparsity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decomposition {
    pub tables: Vec<CondTable>,
    pub nmf: Option<NmfFactors>,
}

/// Weight-averaged posterior-mean tables over `(stats, weight)` pairs, plus
/// NMF factors when the model has two visible nodes and one latent node.
pub fn extract_decomposition(
    spec: &ModelSpec,
    prior: &PriorSpec,
    weighted: &[(&FamilyStats, f64)],
) -> Decomposition {
    let wsum: f64 = weighted.iter().map(|(_, w)| w).sum();
    let mut tables: Option<Vec<CondTable>> = None;
    let mut total = 0.0;
    for (stats, w) in weighted {
        let w = if wsum > 0.0 { w / wsum } else { 1.0 / weighted.len() as f64 };
        total += w * stats.total() as f64;
        let t = posterior_mean_tables(spec, prior, stats);
        match tables.as_mut() {
            None => {
                tables = Some(
                    t.into_iter()
                        .map(|mut c| {
                            c.rows.iter_mut().flatten().for_each(|v| *v *= w);
                            c
                        })
                        .collect(),
                )
            }
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(t) {
                    for (ra, rc) in a.rows.iter_mut().zip(c.rows) {
                        for (va, vc) in ra.iter_mut().zip(rc) {
                            *va += w * vc;
                        }
                    }
                }
            }
        }
    }
    let tables = tables.unwrap_or_else(|| posterior_mean_tables(spec, prior, &FamilyStats::new(spec, false)));
    let nmf = nmf_factors(spec, &tables, total);
    Decomposition { tables, nmf }
}

/// Dense joint `p(i_{1:N})` from conditional tables, indexed by cell key.
pub fn joint_from_tables(spec: &ModelSpec, tables: &[CondTable]) -> Vec<f64> {
    crate::model::odometer(&spec.cards())
        .iter()
        .map(|cell| {
            (0..spec.num_nodes())
                .map(|n| tables[n].rows[spec.parent_key(n, cell) as usize][cell[n]])
                .product()
        })
        .collect()
}

fn nmf_factors(spec: &ModelSpec, tables: &[CondTable], total: f64) -> Option<NmfFactors> {
    let ([r, c], [k]) = (spec.visible(), spec.latent()) else {
        return None;
    };
    let (ni, nj, nk) = (spec.card(*r), spec.card(*c), spec.card(*k));
    let joint = joint_from_tables(spec, tables);
    let mut pik = vec![vec![0.0; nk]; ni];
    let mut pjk = vec![vec![0.0; nj]; nk];
    let mut pk = vec![0.0; nk];
    for (key, p) in joint.iter().enumerate() {
        let cell = spec.decode_cell(key as u64);
        pik[cell[*r]][cell[*k]] += p;
        pjk[cell[*k]][cell[*c]] += p;
        pk[cell[*k]] += p;
    }
    let w: Vec<Vec<f64>> = pik
        .iter()
        .map(|row| row.iter().zip(&pk).map(|(v, z)| v / z).collect())
        .collect();
    let h: Vec<Vec<f64>> = pjk.iter().map(|row| row.iter().map(|v| total * v).collect()).collect();
    let reconstruction = (0..ni)
        .map(|i| (0..nj).map(|j| (0..nk).map(|kk| w[i][kk] * h[kk][j]).sum()).collect())
        .collect();
    let sparsity = 0.5 * (hoyer_sparsity(w.iter().flatten().copied()) + hoyer_sparsity(h.iter().flatten().copied()));
    Some(NmfFactors {
        w,
        h,
        reconstruction,
        sparsity,
    })
}

/// `(√n − ‖x‖₁/‖x‖₂) / (√n − 1)`; zero for a single element or an all-zero input.
pub fn hoyer_sparsity(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut n, mut l1, mut l2) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        l1 += v.abs();
        l2 += v * v;
    }
    if n < 2 || l2 == 0.0 {
        return 0.0;
    }
    let rn = (n as f64).sqrt();
    (rn - l1 / l2.sqrt()) / (rn - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_catalog_model, CatalogKind};
    use crate::urn::Bam;

    fn x1() -> SparseCountTensor {
        SparseCountTensor::from_matrix(&[[2u64, 1, 1, 0], [0, 0, 1, 2], [0, 0, 1, 1]])
    }

    fn klnmf(k: usize, a: f64) -> Bam {
        let spec = build_catalog_model(CatalogKind::Klnmf, &[3, k, 4]).unwrap();
        Bam::new(spec, PriorSpec::new(a, 1.0).unwrap())
    }

    #[test]
    fn first_visible_draw_frequency() {
        let bam = klnmf(2, 1.0);
        let prop = Proposal::new(&bam, &x1(), DEFAULT_LATENT_CAP).unwrap();
        let st = bam.empty_stats(false);
        let n = 20_000;
        let hits = (0..n)
            .filter(|&s| {
                let (idx, _) = prop.propose_visible(&st, &mut keyed_rng(1, &[s])).unwrap();
                prop.visible_tuple(idx) == [0, 0]
            })
            .count();
        let p = 2.0 / 9.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn last_token_is_forced() {
        let bam = klnmf(2, 1.0);
        let x = SparseCountTensor::from_matrix(&[[0u64, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 0]]);
        let prop = Proposal::new(&bam, &x, DEFAULT_LATENT_CAP).unwrap();
        let mut p = prop.fresh_particle();
        let (idx, left) = prop.propose_visible(&p.stats, &mut keyed_rng(0, &[])).unwrap();
        assert_eq!((prop.visible_tuple(idx), left), (&[1usize, 2][..], 1));
        prop.sis_step(&mut p, &mut keyed_rng(0, &[])).unwrap();
        assert!(matches!(prop.propose_visible(&p.stats, &mut keyed_rng(0, &[])), Err(Error::Exhausted)));
        // single token: weight is the visible marginal itself
        assert!((p.log_weight - p.log_pv_sum).abs() < 1e-15);
    }

    #[test]
    fn no_latent_nodes_give_plain_transition() {
        let spec = ModelSpec::from_edges(&[("i", 2), ("j", 3)], &[("i", "j")], &["i", "j"]).unwrap();
        let bam = Bam::new(spec, PriorSpec::new(1.0, 1.0).unwrap());
        let x = SparseCountTensor::from_matrix(&[[1u64, 0, 2], [0, 1, 0]]);
        let prop = Proposal::new(&bam, &x, 10).unwrap();
        let st = bam.empty_stats(false);
        let (cell, lpv) = prop.propose_latent(&st, &[0, 2], &mut keyed_rng(0, &[]));
        assert_eq!(cell, vec![0, 2]);
        assert!((lpv - bam.transition_logprob(&st, &[0, 2])).abs() < 1e-15);
    }

    #[test]
    fn never_schedule_matches_independent_runs_bitwise() {
        let bam = klnmf(2, 1.0);
        let mut cfg = SmcConfig::new(64, 9);
        cfg.schedule = Schedule::Never;
        let a = run_sis(&bam, &x1(), &cfg).unwrap();
        let b = run_sis_r(&bam, &x1(), &cfg).unwrap();
        assert_eq!(a.log_z.to_bits(), b.log_z.to_bits());
        assert_eq!(a.ess_trace, b.ess_trace);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let bam = klnmf(3, 0.5);
        let mut results = Vec::new();
        for threads in [1, 2, 8] {
            let cfg = SmcConfig {
                threads: Some(threads),
                ..SmcConfig::new(50, 4)
            };
            let e = run_sis_r(&bam, &x1(), &cfg).unwrap();
            results.push((e.log_z.to_bits(), e.resample_steps.clone(), e.ess_trace.clone()));
        }
        assert!(results.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn ess_trace_bounds() {
        let bam = klnmf(2, 1.0);
        let e = run_sis_r(&bam, &x1(), &SmcConfig::new(40, 1)).unwrap();
        assert_eq!(e.ess_trace.len(), 9);
        assert!(e.ess_trace.iter().all(|&v| (1.0..=40.0).contains(&v)));
        assert!((e.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_masked_and_misshapen_input() {
        let bam = klnmf(2, 1.0);
        let mut x = x1();
        x.set_missing(&[0, 3]).unwrap();
        assert!(matches!(run_sis(&bam, &x, &SmcConfig::new(2, 0)), Err(Error::MaskedTensor)));
        let y = SparseCountTensor::from_matrix(&[[1u64, 1]]);
        assert!(matches!(run_sis(&bam, &y, &SmcConfig::new(2, 0)), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn empty_stats_give_prior_means() {
        let bam = klnmf(2, 1.0);
        let st = FamilyStats::new(bam.spec(), false);
        for t in posterior_mean_tables(bam.spec(), bam.prior(), &st) {
            for row in &t.rows {
                let u = 1.0 / row.len() as f64;
                assert!(row.iter().all(|v| (v - u).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn reconstruction_sums_to_total() {
        let bam = klnmf(2, 1.0);
        let e = run_sis_r(&bam, &x1(), &SmcConfig::new(20, 2)).unwrap();
        let w = e.weights();
        let pairs: Vec<(&FamilyStats, f64)> = e.particles.iter().map(|p| &p.stats).zip(w).collect();
        let d = extract_decomposition(bam.spec(), bam.prior(), &pairs);
        let nmf = d.nmf.unwrap();
        let s: f64 = nmf.reconstruction.iter().flatten().sum();
        assert!((s - 9.0).abs() < 1e-9);
    }

    #[test]
    fn hoyer_limits() {
        assert!((hoyer_sparsity([1.0, 0.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!(hoyer_sparsity([2.0; 9]).abs() < 1e-15);
        assert_eq!(hoyer_sparsity([0.0; 3]), 0.0);
    }

    #[test]
    fn schedule_parsing() {
        assert_eq!("always".parse::<Schedule>().unwrap(), Schedule::Always);
        assert_eq!("adaptive:0.3".parse::<Schedule>().unwrap(), Schedule::Adaptive(0.3));
        assert!("sometimes".parse::<Schedule>().is_err());
        assert!(SmcConfig {
            schedule: Schedule::Adaptive(1.5),
            ..SmcConfig::default()
        }
        .validate()
        .is_err());
    }
}
