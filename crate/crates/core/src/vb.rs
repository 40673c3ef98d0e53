//! Mean-field variational Bayes over `q(λ) q(Θ) q(S)`.
//!
//! `q(S)` splits each observed count `X(i_V)` over the latent block with
//! responsibilities `Φ_V`. With `q(λ)` and `q(Θ)` at their optimum for given
//! `Φ_V`, the bound depends on `Φ_V` only through the expected counts.

use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{alpha_families, FamilyPrior, ModelSpec, PriorSpec};
use crate::rng::{keyed_rng, RESTART_DOMAIN};
use crate::smc::{with_threads, DEFAULT_LATENT_CAP};
use crate::special::{digamma, ln_gamma};
use crate::tensor::SparseCountTensor;

pub type RealMap = FxHashMap<u64, f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VbConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub threads: Option<usize>,
    pub latent_cap: usize,
}

impl Default for VbConfig {
    fn default() -> Self {
        Self {
            restarts: 1,
            max_iters: 2000,
            tol: 1e-8,
            seed: 0,
            threads: None,
            latent_cap: DEFAULT_LATENT_CAP,
        }
    }
}

/// Variational parameters and the expected sufficient statistics they imply.
#[derive(Clone, Debug)]
pub struct VbState {
    /// Shape of `q(λ)`; its rate is `b + 1`.
    pub a_hat: f64,
    /// `E_Q[S_fa(n)]` per node, over touched family configurations.
    pub expected_family: Vec<RealMap>,
    pub expected_parent: Vec<RealMap>,
    pub expected_total: f64,
    /// `Φ_V` per observed cell (lexicographic) over latent configurations.
    pub phi: Vec<Vec<f64>>,
    pub elbo: f64,
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub restart: usize,
}

impl VbState {
    /// `α̂_fa(n)` at a family key.
    pub fn alpha_hat(&self, alpha: &[FamilyPrior], n: usize, key: u64) -> f64 {
        alpha[n].cell + self.expected_family[n].get(&key).copied().unwrap_or(0.0)
    }
}

/// Observed cells with their per-latent-configuration family keys precomputed.
pub struct VbProblem {
    spec: ModelSpec,
    prior: PriorSpec,
    alpha: Vec<FamilyPrior>,
    counts: Vec<f64>,
    log_fact_x: f64,
    num_latent: usize,
    /// `[cell][latent][node] → (family key, parent key)`
    keys: Vec<Vec<Vec<(u64, u64)>>>,
}

impl VbProblem {
    pub fn new(spec: &ModelSpec, prior: &PriorSpec, x: &SparseCountTensor, latent_cap: usize) -> Result<Self> {
        if !spec.tying().is_empty() {
            return Err(Error::UnsupportedTying("variational updates cover untied models only".into()));
        }
        if x.has_mask() {
            return Err(Error::MaskedTensor);
        }
        if x.dims() != spec.visible_cards().as_slice() {
            return Err(Error::DimMismatch {
                expected: spec.visible_cards(),
                got: x.dims().to_vec(),
            });
        }
        let latent = spec.latent_configs(latent_cap)?;
        let mut cell = vec![0usize; spec.num_nodes()];
        let mut counts = Vec::with_capacity(x.nnz());
        let mut keys = Vec::with_capacity(x.nnz());
        for (iv, c) in x.iter() {
            for (&n, &i) in spec.visible().iter().zip(iv) {
                cell[n] = i;
            }
            let per_latent = latent
                .iter()
                .map(|l| {
                    for (&n, &i) in spec.latent().iter().zip(l) {
                        cell[n] = i;
                    }
                    (0..spec.num_nodes())
                        .map(|n| (spec.family_key(n, &cell), spec.parent_key(n, &cell)))
                        .collect()
                })
                .collect();
            counts.push(c as f64);
            keys.push(per_latent);
        }
        Ok(Self {
            alpha: alpha_families(spec, prior),
            spec: spec.clone(),
            prior: *prior,
            log_fact_x: counts.iter().map(|&c| ln_gamma(c + 1.0)).sum(),
            num_latent: latent.len(),
            counts,
            keys,
        })
    }

    pub fn alpha(&self) -> &[FamilyPrior] {
        &self.alpha
    }

    fn state_from_phi(&self, phi: Vec<Vec<f64>>, restart: usize) -> VbState {
        let n_nodes = self.spec.num_nodes();
        let mut fam = vec![RealMap::default(); n_nodes];
        let mut par = vec![RealMap::default(); n_nodes];
        for ((row, keys), &x) in phi.iter().zip(&self.keys).zip(&self.counts) {
            for (p, nk) in row.iter().zip(keys) {
                let e = x * p;
                if e == 0.0 {
                    continue;
                }
                for (n, &(fk, pk)) in nk.iter().enumerate() {
                    *fam[n].entry(fk).or_insert(0.0) += e;
                    *par[n].entry(pk).or_insert(0.0) += e;
                }
            }
        }
        let total: f64 = self.counts.iter().sum();
        let mut state = VbState {
            a_hat: self.prior.a + total,
            expected_family: fam,
            expected_parent: par,
            expected_total: total,
            phi,
            elbo: 0.0,
            elbo_trace: Vec::new(),
            iterations: 0,
            restart,
        };
        state.elbo = self.elbo(&state);
        state
    }

    /// Uniform responsibilities.
    pub fn uniform_state(&self) -> VbState {
        let u = 1.0 / self.num_latent as f64;
        self.state_from_phi(vec![vec![u; self.num_latent]; self.counts.len()], 0)
    }

    /// Responsibilities drawn from a symmetric Dirichlet(1) per observed cell.
    pub fn random_state(&self, seed: u64, restart: usize) -> VbState {
        let mut rng = keyed_rng(seed, &[RESTART_DOMAIN, restart as u64]);
        let phi = (0..self.counts.len())
            .map(|_| {
                let g: Vec<f64> = (0..self.num_latent).map(|_| Exp1.sample(&mut rng)).collect();
                let s: f64 = g.iter().sum();
                g.into_iter().map(|v: f64| v / s).collect()
            })
            .collect();
        self.state_from_phi(phi, restart)
    }

    /// One coordinate-ascent sweep: `Φ_V` from `ψ(α̂_fa) − ψ(α̂_pa)`, then the expected statistics.
    pub fn update(&self, state: &VbState) -> VbState {
        let mut logits = vec![0.0; self.num_latent];
        let phi = self
            .keys
            .iter()
            .map(|cell_keys| {
                for (lg, nk) in logits.iter_mut().zip(cell_keys) {
                    *lg = nk
                        .iter()
                        .enumerate()
                        .map(|(n, &(fk, pk))| {
                            let a = &self.alpha[n];
                            let ef = state.expected_family[n].get(&fk).copied().unwrap_or(0.0);
                            let ep = state.expected_parent[n].get(&pk).copied().unwrap_or(0.0);
                            digamma(a.cell + ef) - digamma(a.parent + ep)
                        })
                        .sum();
                }
                let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let mut next = self.state_from_phi(phi, state.restart);
        next.elbo_trace = state.elbo_trace.clone();
        next.elbo_trace.push(next.elbo);
        next.iterations = state.iterations + 1;
        next
    }

    /// The evidence lower bound at `state`.
    pub fn elbo(&self, state: &VbState) -> f64 {
        let (a, b) = (self.prior.a, self.prior.b);
        let t = state.expected_total;
        let mut acc = a * b.ln() - (a + t) * (b + 1.0).ln() + ln_gamma(a + t) - ln_gamma(a);
        for n in 0..self.spec.num_nodes() {
            let al = &self.alpha[n];
            let mut fam: Vec<f64> = state.expected_family[n].values().copied().collect();
            fam.sort_by(f64::total_cmp);
            for e in fam {
                acc += ln_gamma(al.cell + e) - ln_gamma(al.cell);
            }
            let mut par: Vec<f64> = state.expected_parent[n].values().copied().collect();
            par.sort_by(f64::total_cmp);
            for e in par {
                acc -= ln_gamma(al.parent + e) - ln_gamma(al.parent);
            }
        }
        acc -= self.log_fact_x;
        for (row, &x) in state.phi.iter().zip(&self.counts) {
            for &p in row {
                if p > 0.0 {
                    acc -= x * p * p.ln();
                }
            }
        }
        acc
    }

    /// Iterates from `init` until `|ΔELBO| < tol` or `max_iters` sweeps.
    pub fn iterate(&self, init: VbState, max_iters: usize, tol: f64) -> VbState {
        let mut state = init;
        state.elbo_trace = vec![state.elbo];
        for _ in 0..max_iters {
            let next = self.update(&state);
            let delta = (next.elbo - state.elbo).abs();
            state = next;
            if delta < tol {
                break;
            }
        }
        state
    }
}

pub fn vb_update(x: &SparseCountTensor, spec: &ModelSpec, prior: &PriorSpec, state: &VbState) -> Result<VbState> {
    Ok(VbProblem::new(spec, prior, x, DEFAULT_LATENT_CAP)?.update(state))
}

pub fn elbo(x: &SparseCountTensor, spec: &ModelSpec, prior: &PriorSpec, state: &VbState) -> Result<f64> {
    Ok(VbProblem::new(spec, prior, x, DEFAULT_LATENT_CAP)?.elbo(state))
}

/// Best of `config.restarts` Dirichlet-initialized runs by final ELBO.
pub fn run_vb(x: &SparseCountTensor, spec: &ModelSpec, prior: &PriorSpec, config: &VbConfig) -> Result<VbState> {
    if config.restarts == 0 {
        return Err(Error::Config("need at least one restart".into()));
    }
    let problem = VbProblem::new(spec, prior, x, config.latent_cap)?;
    let runs: Vec<VbState> = with_threads(config.threads, || {
        (0..config.restarts)
            .into_par_iter()
            .map(|r| problem.iterate(problem.random_state(config.seed, r), config.max_iters, config.tol))
            .collect()
    })?;
    Ok(runs
        .into_iter()
        .reduce(|best, s| if s.elbo > best.elbo { s } else { best })
        .expect("at least one restart"))
}
