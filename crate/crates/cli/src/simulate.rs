//! Forward sampling from the generative model: Θ from the BDeu Dirichlets,
//! the token count from a fixed `T` or from Poisson(λ) with λ ~ Gamma(a, b),
//! then each token's cell by ancestral sampling.

use bam::model::{alpha_family, ModelSpec, PriorSpec};
use bam::rng::keyed_rng;
use bam::tensor::SparseCountTensor;
use bam::Result;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

const THETA_DOMAIN: u64 = 11;
const LAMBDA_DOMAIN: u64 = 12;
const TOKEN_DOMAIN: u64 = 13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TokenCount {
    Fixed(u64),
    /// Draw λ ~ Gamma(a, b), then `T ~ Poisson(λ)`.
    Poisson,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub lambda: Option<f64>,
    /// Conditional tables as cumulative distributions: `cdf[n][parent key][i]`.
    pub cdf: Vec<Vec<Vec<f64>>>,
    pub latent: SparseCountTensor,
    pub observed: SparseCountTensor,
}

/// `ln G` for `G ~ Gamma(shape, 1)`, stable for tiny shapes via
/// `G = G' · U^{1/shape}` with `G' ~ Gamma(shape + 1, 1)`.
fn log_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    g.ln() + u.ln() / shape
}

/// A Dirichlet(α, .., α) draw of length `card`, as a cumulative distribution.
fn dirichlet_cdf<R: Rng + ?Sized>(alpha: f64, card: usize, rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = (0..card).map(|_| log_gamma_draw(alpha, rng)).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = w
        .iter()
        .map(|v| {
            acc += v / z;
            acc
        })
        .collect();
    *cdf.last_mut().expect("non-empty row") = 1.0;
    cdf
}

/// Draws every conditional table; children of a tying group share the
/// table of the group's first child.
pub fn draw_tables(spec: &ModelSpec, prior: &PriorSpec, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut shared_with: Vec<Option<usize>> = vec![None; spec.num_nodes()];
    for group in spec.tying() {
        let first = group[0].child;
        for binding in &group[1..] {
            shared_with[binding.child] = Some(first);
        }
    }
    let mut tables: Vec<Vec<Vec<f64>>> = vec![Vec::new(); spec.num_nodes()];
    for n in 0..spec.num_nodes() {
        if shared_with[n].is_some() {
            continue;
        }
        let alpha = alpha_family(spec, prior, n).cell;
        tables[n] = (0..spec.parent_configs(n))
            .map(|pk| dirichlet_cdf(alpha, spec.card(n), &mut keyed_rng(seed, &[THETA_DOMAIN, n as u64, pk])))
            .collect();
    }
    for n in 0..spec.num_nodes() {
        if let Some(src) = shared_with[n] {
            tables[n] = tables[src].clone();
        }
    }
    tables
}

fn draw_cell<R: Rng + ?Sized>(spec: &ModelSpec, cdf: &[Vec<Vec<f64>>], rng: &mut R) -> Vec<usize> {
    let mut cell = vec![0usize; spec.num_nodes()];
    for &n in spec.topological_order() {
        let row = &cdf[n][spec.parent_key(n, &cell) as usize];
        let u: f64 = rng.random();
        cell[n] = row.partition_point(|&c| c <= u).min(row.len() - 1);
    }
    cell
}

pub fn simulate(spec: &ModelSpec, prior: &PriorSpec, count: TokenCount, seed: u64) -> Result<Simulation> {
    let cdf = draw_tables(spec, prior, seed);
    let (lambda, tokens) = match count {
        TokenCount::Fixed(t) => (None, t),
        TokenCount::Poisson => {
            let mut rng = keyed_rng(seed, &[LAMBDA_DOMAIN]);
            let lambda = log_gamma_draw(prior.a, &mut rng).exp() / prior.b;
            let t = if lambda > 0.0 {
                Poisson::new(lambda).map(|p| p.sample(&mut rng) as u64).unwrap_or(0)
            } else {
                0
            };
            (Some(lambda), t)
        }
    };
    let mut rng = keyed_rng(seed, &[TOKEN_DOMAIN]);
    let mut latent = SparseCountTensor::new(spec.cards());
    for _ in 0..tokens {
        latent.add(&draw_cell(spec, &cdf, &mut rng), 1)?;
    }
    let observed = latent.contract(spec.visible())?;
    Ok(Simulation {
        lambda,
        cdf,
        latent,
        observed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use bam::model::{build_catalog_model, CatalogKind};

    #[test]
    fn fixed_token_count_is_exact() {
        let spec = build_catalog_model(CatalogKind::Klnmf, &[3, 2, 4]).unwrap();
        let prior = PriorSpec::new(1.0, 1.0).unwrap();
        for t in [0, 1, 37] {
            let sim = simulate(&spec, &prior, TokenCount::Fixed(t), 5).unwrap();
            assert_eq!(sim.observed.total(), t);
            assert_eq!(sim.latent.total(), t);
            assert_eq!(sim.observed.dims(), [3, 4]);
        }
    }

    #[test]
    fn tiny_concentration_gives_one_hot_rows() {
        let spec = build_catalog_model(CatalogKind::Cp, &[2, 3, 3]).unwrap();
        let prior = PriorSpec::new(1e-6, 1.0).unwrap();
        for row in draw_tables(&spec, &prior, 1).iter().flatten() {
            assert!(row.iter().all(|c| c.is_finite()));
            assert!(row.windows(2).any(|w| w[1] - w[0] > 0.999) || row[0] > 0.999);
        }
    }

    #[test]
    fn tied_children_share_a_table() {
        let spec = build_catalog_model(CatalogKind::Snmf, &[4, 2]).unwrap();
        let tables = draw_tables(&spec, &PriorSpec::new(1.0, 1.0).unwrap(), 3);
        assert_eq!(tables[1], tables[2]);
    }

    #[test]
    fn poisson_count_tracks_the_prior_mean() {
        // E[T] = a / b
        let spec = build_catalog_model(CatalogKind::Klnmf, &[2, 2, 2]).unwrap();
        let prior = PriorSpec::new(20.0, 0.5).unwrap();
        let n = 400;
        let mean = (0..n)
            .map(|s| simulate(&spec, &prior, TokenCount::Poisson, s).unwrap().observed.total() as f64)
            .sum::<f64>()
            / n as f64;
        // sd of T is sqrt(a/b + a/b²) ≈ 9.8, so the mean's sd is ≈ 0.5
        assert!((mean - 40.0).abs() < 2.5, "{mean}");
    }

    #[test]
    fn dirichlet_draws_have_the_right_mean() {
        let n = 4000;
        let mut first = 0.0;
        for s in 0..n {
            first += dirichlet_cdf(0.7, 3, &mut keyed_rng(s, &[]))[0];
        }
        assert!((first / n as f64 - 1.0 / 3.0).abs() < 0.02);
    }
}
