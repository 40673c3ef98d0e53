//! Turning model flags plus an observed tensor's shape into concrete urns.

use bam::model::{build_catalog_model, read_model, CatalogKind, ModelSpec, PriorSpec};
use bam::tying::TiedUrn;
use bam::urn::Bam;
use bam::{Error, Result};

use crate::args::ModelArgs;

/// An untied model or a symmetric (tied) one; both implement [`bam::Urn`].
#[derive(Clone, Debug)]
pub enum Model {
    Plain(Bam),
    Tied(TiedUrn),
}

impl Model {
    pub fn new(spec: ModelSpec, prior: PriorSpec) -> Result<Self> {
        if spec.tying().is_empty() {
            Ok(Model::Plain(Bam::new(spec, prior)))
        } else {
            Ok(Model::Tied(TiedUrn::new(spec, prior)?))
        }
    }
}

/// Calls `$body` with `$u` bound to the concrete urn.
#[macro_export]
macro_rules! with_urn {
    ($model:expr, $u:ident => $body:expr) => {
        match $model {
            $crate::catalog::Model::Plain($u) => $body,
            $crate::catalog::Model::Tied($u) => $body,
        }
    };
}

/// Full catalogue cardinalities for a latent size `k`, given the observed
/// tensor's dims in the model's visible order.
pub fn catalog_dims(kind: CatalogKind, x_dims: &[usize], k: usize, levels: usize) -> Result<Vec<usize>> {
    let shape = |expected: &str| Error::Config(format!("{kind} expects an observed tensor of shape {expected}, got {x_dims:?}"));
    Ok(match kind {
        CatalogKind::Klnmf => match x_dims {
            [i, j] => vec![*i, k, *j],
            _ => return Err(shape("I × J")),
        },
        CatalogKind::Cp => {
            if x_dims.is_empty() {
                return Err(shape("I_1 × .. × I_N"));
            }
            std::iter::once(k).chain(x_dims.iter().copied()).collect()
        }
        CatalogKind::Tucker => match x_dims {
            [i1, i2, i3] => vec![*i1, *i2, *i3, k, k, k],
            _ => return Err(shape("I_1 × I_2 × I_3")),
        },
        CatalogKind::Pachinko => match x_dims {
            [i, j] => {
                if levels == 0 {
                    return Err(Error::Config("pachinko needs at least one latent level".into()));
                }
                let mut d = vec![*j];
                d.extend(std::iter::repeat_n(k, levels));
                d.push(*i);
                d
            }
            _ => return Err(shape("I × J")),
        },
        CatalogKind::Mmb => match x_dims {
            [i1, i2, s] if i1 == i2 => vec![*i1, k, *s],
            _ => return Err(shape("I × I × S")),
        },
        CatalogKind::Snmf => match x_dims {
            [i1, i2] if i1 == i2 => vec![*i1, k],
            _ => return Err(shape("I × I")),
        },
    })
}

/// Prior from flags, falling back to the model file's prior, then `a = b = 1`.
pub fn resolve_prior(args: &ModelArgs, file_prior: Option<PriorSpec>) -> Result<PriorSpec> {
    let base = file_prior.unwrap_or(PriorSpec::new(1.0, 1.0)?);
    PriorSpec::with_base(args.a.unwrap_or(base.a), args.b.unwrap_or(base.b), base.base)
}

/// One model per latent size for catalogue models, or the single model of
/// `--model-file` (reported with `k = None`).
pub fn build_models(args: &ModelArgs, x_dims: &[usize], ks: &[usize]) -> Result<Vec<(Option<usize>, Model)>> {
    if let Some(path) = &args.model_file {
        let (spec, prior) = read_model(path)?;
        let prior = resolve_prior(args, prior)?;
        return Ok(vec![(None, Model::new(spec, prior)?)]);
    }
    let kind = args
        .model
        .ok_or_else(|| Error::Config("either --model or --model-file is required".into()))?;
    let prior = resolve_prior(args, None)?;
    ks.iter()
        .map(|&k| {
            let spec = build_catalog_model(kind, &catalog_dims(kind, x_dims, k, args.levels)?)?;
            Ok((Some(k), Model::new(spec, prior)?))
        })
        .collect()
}

/// The model for `simulate`, where there is no observed tensor to infer shapes from.
pub fn build_from_dims(args: &ModelArgs, dims: Option<&[usize]>) -> Result<Model> {
    if let Some(path) = &args.model_file {
        let (spec, prior) = read_model(path)?;
        return Model::new(spec, resolve_prior(args, prior)?);
    }
    let kind = args
        .model
        .ok_or_else(|| Error::Config("either --model or --model-file is required".into()))?;
    let dims = dims.ok_or_else(|| Error::Config("catalogue models need --dims".into()))?;
    Model::new(build_catalog_model(kind, dims)?, resolve_prior(args, None)?)
}
