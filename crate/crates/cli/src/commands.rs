use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use bam::exact::{exact_log_marginal_urn, exact_missing_posterior_urn, marginal_histogram_with, ExactConfig};
use bam::rng::derive_seed;
use bam::smc::{extract_decomposition, run_sis_r, SmcConfig, DEFAULT_LATENT_CAP};
use bam::special::log_sum_exp;
use bam::tensor::{read_tensor, write_tensor, SparseCountTensor};
use bam::vb::{run_vb, VbConfig};
use bam::{Error, Result, Urn};
use serde_json::{json, Value};

use crate::args::{DecomposeArgs, ExactArgs, Method, ScoreArgs, SimulateArgs, SmcArgs};
use crate::catalog::{build_from_dims, build_models, Model};
use crate::simulate::{simulate, TokenCount};
use crate::with_urn;

/// A command's JSON result plus an optional CSV side output.
#[derive(Debug)]
pub struct Outcome {
    pub result: Value,
    pub csv: Option<(PathBuf, String)>,
}

fn smc_config(args: &SmcArgs, seed: u64) -> Result<SmcConfig> {
    let cfg = SmcConfig {
        particles: args.particles,
        seed,
        resampling: args.resampling,
        schedule: args.schedule(),
        threads: None,
        latent_cap: DEFAULT_LATENT_CAP,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn score_smc<U: Urn>(urn: &U, x: &SparseCountTensor, args: &ScoreArgs, k: u64) -> Result<Value> {
    if args.runs == 0 {
        return Err(Error::Config("need at least one run".into()));
    }
    let mut log_z = Vec::with_capacity(args.runs);
    let mut ess = Vec::new();
    let mut resamples = 0usize;
    for run in 0..args.runs {
        let est = run_sis_r(urn, x, &smc_config(&args.smc, derive_seed(args.smc.seed, &[k, run as u64]))?)?;
        log_z.push(est.log_z);
        ess.extend(est.ess_trace);
        resamples += est.resample_steps.len();
    }
    let log_mean = log_sum_exp(&log_z) - (log_z.len() as f64).ln();
    let (mean_log, sd_log) = mean_sd(&log_z);
    let ratios: Vec<f64> = log_z.iter().map(|l| (l - log_mean).exp()).collect();
    let (_, sd_ratio) = mean_sd(&ratios);
    let root_n = (log_z.len() as f64).sqrt();
    Ok(json!({
        "log_marginal": log_mean,
        "mean_log_z": mean_log,
        "log_z_std_error": sd_log / root_n,
        "z_relative_std_error": sd_ratio / root_n,
        "runs": log_z,
        "ess": {
            "min": ess.iter().copied().fold(f64::INFINITY, f64::min),
            "mean": ess.iter().sum::<f64>() / ess.len().max(1) as f64,
        },
        "resampling_events_per_run": resamples as f64 / args.runs as f64,
    }))
}

fn score_vb(model: &Model, x: &SparseCountTensor, args: &ScoreArgs, k: u64) -> Result<Value> {
    let Model::Plain(bam) = model else {
        return Err(Error::Config("variational Bayes is not available for tied models".into()));
    };
    let state = run_vb(
        x,
        bam.spec(),
        bam.prior(),
        &VbConfig {
            restarts: args.restarts,
            max_iters: args.max_iters,
            tol: args.tol,
            seed: derive_seed(args.smc.seed, &[k]),
            threads: None,
            latent_cap: DEFAULT_LATENT_CAP,
        },
    )?;
    Ok(json!({
        "log_marginal": state.elbo,
        "elbo": state.elbo,
        "iterations": state.iterations,
        "best_restart": state.restart,
    }))
}

fn score_exact<U: Urn>(urn: &U, x: &SparseCountTensor, cap: f64) -> Result<Value> {
    let cfg = ExactConfig {
        cap,
        ..ExactConfig::default()
    };
    Ok(json!({
        "log_marginal": exact_log_marginal_urn(urn, x, &cfg)?,
        "allocations": bam::exact::search_space_size(urn.spec(), x),
    }))
}

pub fn score(args: &ScoreArgs) -> Result<Outcome> {
    let x = read_tensor(&args.tensor)?;
    let ks: Vec<usize> = (args.k_range.0..=args.k_range.1).map(|k| k as usize).collect();
    let models = build_models(&args.model, x.dims(), &ks)?;
    let mut entries = Vec::new();
    let mut logs = Vec::new();
    for (k, model) in &models {
        let kk = k.unwrap_or(0) as u64;
        let start = Instant::now();
        let mut entry = match args.method {
            Method::Smc => with_urn!(model, u => score_smc(u, &x, args, kk))?,
            Method::Vb => score_vb(model, &x, args, kk)?,
            Method::Exact => with_urn!(model, u => score_exact(u, &x, args.cap))?,
        };
        logs.push(entry["log_marginal"].as_f64().unwrap_or(f64::NEG_INFINITY));
        entry["k"] = json!(k);
        entry["wall_time_s"] = json!(start.elapsed().as_secs_f64());
        entries.push(entry);
    }
    let norm = log_sum_exp(&logs);
    for (e, l) in entries.iter_mut().zip(&logs) {
        e["log_odds"] = json!(l - norm);
    }
    let best = logs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| models[i].0);
    let csv = args.emit_csv.clone().map(|path| {
        let mut s = String::from("k,log_marginal,log_odds\n");
        for ((k, _), l) in models.iter().zip(&logs) {
            let k = k.map(|k| k.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{k},{l},{}", l - norm);
        }
        (path, s)
    });
    Ok(Outcome {
        result: json!({
            "method": args.method,
            "tokens": x.total(),
            "per_k": entries,
            "argmax_k": best,
        }),
        csv,
    })
}

pub fn decompose(args: &DecomposeArgs) -> Result<Outcome> {
    let x = read_tensor(&args.tensor)?;
    let (k, model) = build_models(&args.model, x.dims(), &[args.k])?.remove(0);
    let Model::Plain(bam) = &model else {
        return Err(Error::Config("decompose needs an untied model".into()));
    };
    let seed = derive_seed(args.smc.seed, &[k.unwrap_or(0) as u64, 0]);
    let est = run_sis_r(bam, &x, &smc_config(&args.smc, seed)?)?;
    let best = est.best_particle().ok_or(Error::AllWeightsZero)?;
    let (spec, prior) = (bam.spec(), bam.prior());
    let best_dec = extract_decomposition(spec, prior, &[(&best.stats, 1.0)]);
    let weights = est.weights();
    let weighted: Vec<_> = est.particles.iter().zip(&weights).map(|(p, &w)| (&p.stats, w)).collect();
    let avg_dec = extract_decomposition(spec, prior, &weighted);
    let reconstruction_total = avg_dec
        .nmf
        .as_ref()
        .map(|f| f.reconstruction.iter().flatten().sum::<f64>())
        .unwrap_or(x.total() as f64);
    Ok(Outcome {
        result: json!({
            "k": k,
            "log_marginal": est.log_z,
            "tokens": x.total(),
            "best_particle": best_dec,
            "weighted": avg_dec,
            "reconstruction_total": reconstruction_total,
        }),
        csv: None,
    })
}

pub fn simulate_cmd(args: &SimulateArgs) -> Result<Outcome> {
    let model = build_from_dims(&args.model, args.dims.as_deref())?;
    let (spec, prior) = with_urn!(&model, u => (u.spec().clone(), *u.prior()));
    let count = match args.tokens {
        Some(t) => TokenCount::Fixed(t),
        None => TokenCount::Poisson,
    };
    let sim = simulate(&spec, &prior, count, args.seed)?;
    let latent_out = args.latent_out.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".latent");
        p.into()
    });
    write_tensor(&sim.observed, &args.out)?;
    write_tensor(&sim.latent, &latent_out)?;
    Ok(Outcome {
        result: json!({
            "tokens": sim.observed.total(),
            "lambda": sim.lambda,
            "observed_dims": sim.observed.dims(),
            "latent_dims": sim.latent.dims(),
            "observed_nonzeros": sim.observed.nnz(),
        }),
        csv: None,
    })
}

pub fn exact(args: &ExactArgs) -> Result<Outcome> {
    let x = read_tensor(&args.tensor)?;
    let (k, model) = build_models(&args.model, x.dims(), &[args.k])?.remove(0);
    let cfg = ExactConfig {
        cap: args.cap,
        ..ExactConfig::default()
    };
    let mut result = json!({ "k": k, "tokens_observed": x.total() });
    let mut csv = None;
    if x.has_mask() {
        if args.missing_posterior.is_none() {
            return Err(Error::Config(
                "tensor has missing entries: pass --missing-posterior lo:hi".into(),
            ));
        }
    } else {
        let start = Instant::now();
        result["log_marginal"] = json!(with_urn!(&model, u => exact_log_marginal_urn(u, &x, &cfg))?);
        result["allocations"] = json!(with_urn!(&model, u => bam::exact::search_space_size(u.spec(), &x)));
        result["log_marginal_wall_time_s"] = json!(start.elapsed().as_secs_f64());
    }
    if let Some((lo, hi)) = args.missing_posterior {
        let post = with_urn!(&model, u => exact_missing_posterior_urn(u, &x, lo..=hi, &cfg))?;
        let logs: Vec<f64> = post.values().copied().collect();
        let norm = log_sum_exp(&logs);
        let seen = x.total();
        let rows: Vec<Value> = post
            .iter()
            .map(|(&t, &l)| {
                json!({ "total": t, "missing_sum": t.checked_sub(seen), "log_joint": l, "posterior": (l - norm).exp() })
            })
            .collect();
        let mode = post.iter().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0))).map(|(&t, _)| t);
        result["missing_posterior"] = json!({ "table": rows, "mode": mode, "log_evidence": norm });
        if args.histogram.is_none() {
            csv = args.emit_csv.clone().map(|path| {
                let mut s = String::from("total,log_joint\n");
                for (t, l) in &post {
                    let _ = writeln!(s, "{t},{l}");
                }
                (path, s)
            });
        }
    }
    if let Some(bins) = args.histogram {
        let Model::Plain(bam) = &model else {
            return Err(Error::Config("histograms need an untied model".into()));
        };
        let hist = marginal_histogram_with(&x, bam.spec(), bam.prior(), bins, &cfg)?;
        csv = args.emit_csv.clone().map(|path| {
            let mut s = String::from("lo,hi,count,log_mass\n");
            for b in &hist.bins {
                let _ = writeln!(s, "{},{},{},{}", b.lo, b.hi, b.count, b.log_mass);
            }
            (path, s)
        });
        result["histogram"] = json!(hist);
    }
    Ok(Outcome { result, csv })
}
