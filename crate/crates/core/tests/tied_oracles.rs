use bam::exact::{exact_log_marginal_urn, ExactConfig};
use bam::model::{symmetric_cp, PriorSpec};
use bam::smc::{run_sis_r, SmcConfig};
use bam::special::log_sum_exp;
use bam::tensor::SparseCountTensor;
use bam::tying::{tied_log_marginal_events, tied_transition_logprob, TiedUrn};
use bam::urn::Urn;

/// Sequential Pólya predictive over dense arrays: each token draws `r` from
/// the root table, then its `N` children one after another from the shared
/// table of `r`, every draw reinforcing its own table.
fn predictive_path(events: &[Vec<usize>], i: usize, r: usize, a: f64) -> f64 {
    let (root_a, child_a) = (a / r as f64, a / (i * r) as f64);
    let mut root = vec![0.0; r];
    let mut table = vec![vec![0.0; i]; r];
    let mut acc = 0.0;
    for (t, ev) in events.iter().enumerate() {
        let k = ev[0];
        acc += ((root_a + root[k]) / (a + t as f64)).ln();
        root[k] += 1.0;
        for &c in &ev[1..] {
            let used: f64 = table[k].iter().sum();
            acc += ((child_a + table[k][c]) / (i as f64 * child_a + used)).ln();
            table[k][c] += 1.0;
        }
    }
    acc
}

/// Visible token sequences of length `t` over an `I × I` grid.
fn visible_sequences(t: usize, i: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = vec![Vec::new()];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|seq| {
                (0..i * i).map(move |v| {
                    let mut s = seq.clone();
                    s.push((v % i, v / i));
                    s
                })
            })
            .collect();
    }
    out
}

#[test]
fn closed_form_matches_sequential_predictive_over_latent_sequences() {
    let (i, r, a) = (2, 2, 0.8);
    let spec = symmetric_cp(i, r, 2).unwrap();
    let prior = PriorSpec::new(a, 1.0).unwrap();
    let urn = TiedUrn::new(spec.clone(), prior).unwrap();
    for t in 1..=4 {
        for vis in visible_sequences(t, i).into_iter().step_by(3) {
            // sum over latent r-sequences, both ways
            let mut brute = Vec::new();
            let mut closed = Vec::new();
            for mut code in 0..r.pow(t as u32) {
                let events: Vec<Vec<usize>> = vis
                    .iter()
                    .map(|&(x, y)| {
                        let k = code % r;
                        code /= r;
                        vec![k, x, y]
                    })
                    .collect();
                brute.push(predictive_path(&events, i, r, a));
                let mut st = urn.empty_stats(false);
                for e in &events {
                    urn.increment(&mut st, e);
                }
                closed.push(tied_log_marginal_events(&spec, &prior, &st).unwrap());
                assert!((brute.last().unwrap() - closed.last().unwrap()).abs() < 1e-10);
            }
            assert!((log_sum_exp(&brute) - log_sum_exp(&closed)).abs() < 1e-10);
        }
    }
}

#[test]
fn transitions_telescope_and_are_exchangeable() {
    let spec = symmetric_cp(2, 2, 2).unwrap();
    let prior = PriorSpec::new(1.3, 1.0).unwrap();
    let urn = TiedUrn::new(spec.clone(), prior).unwrap();
    let events = [vec![0, 1, 1], vec![1, 0, 1], vec![0, 0, 1]];
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut values = Vec::new();
    for p in perms {
        let mut st = urn.empty_stats(false);
        let mut acc = 0.0;
        for &k in &p {
            acc += tied_transition_logprob(&spec, &prior, &st, &events[k]).unwrap();
            urn.increment(&mut st, &events[k]);
        }
        assert!((acc - urn.log_events(&st)).abs() < 1e-10);
        values.push(acc);
    }
    assert!(values.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
}

#[test]
fn tied_smc_agrees_with_tied_exact() {
    let spec = symmetric_cp(3, 2, 2).unwrap();
    let prior = PriorSpec::new(1.0, 1.0).unwrap();
    let urn = TiedUrn::new(spec, prior).unwrap();
    let x = SparseCountTensor::from_matrix(&[[2u64, 1, 0], [1, 2, 0], [0, 0, 2]]);
    let exact = exact_log_marginal_urn(&urn, &x, &ExactConfig::default()).unwrap();
    let runs: Vec<f64> = (0..60)
        .map(|s| run_sis_r(&urn, &x, &SmcConfig::new(200, s).unbiased()).unwrap().log_z)
        .collect();
    let z: Vec<f64> = runs.iter().map(|l| (l - exact).exp()).collect();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (z.len() - 1) as f64).sqrt();
    let se = sd / (z.len() as f64).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * se.max(1e-3), "mean ratio {mean}, se {se}");
}

#[test]
fn one_row_rank_one_coincides_with_untied() {
    // I = 1, R = 1: both models put every token in the single cell with probability one
    let spec = symmetric_cp(1, 1, 2).unwrap();
    let prior = PriorSpec::new(2.0, 1.0).unwrap();
    let tied = TiedUrn::new(spec.clone(), prior).unwrap();
    let untied = bam::model::build_catalog_model(bam::model::CatalogKind::Cp, &[1, 1, 1]).unwrap();
    let x = SparseCountTensor::from_matrix(&[[5u64]]);
    let a = exact_log_marginal_urn(&tied, &x, &ExactConfig::default()).unwrap();
    let b = bam::exact::exact_log_marginal(&x, &untied, &prior).unwrap();
    assert!((a - b).abs() < 1e-12);
    assert!((a - bam::urn::log_prob_total(&prior, 5)).abs() < 1e-12);
}
