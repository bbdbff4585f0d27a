//! Reference solutions used to score trained models: closed forms, a
//! high-resolution Allen-Cahn solve, and externally supplied cavity
//! centerline profiles.

mod allen_cahn;
mod profiles;


use std::path::Path;

pub use allen_cahn::{ac_convergence, ac_solve, AcOptions, AcSolution, BLOWUP};
pub use profiles::{load_external_profiles, write_profiles, Profile};

use crate::error::{Error, Result};
use crate::physics::{Problem, ProblemSpec};
use crate::tensorgrid::{pairwise_sum, tensor_points, DenseField, FactorGrid};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    Pseudospectral { nx: usize, nt: usize },
    External(String),
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Analytic => write!(f, "analytic"),
            Provenance::Pseudospectral { nx, nt } => write!(f, "pseudospectral nx={nx} nt={nt}"),
            Provenance::External(p) => write!(f, "external {p}"),
        }
    }
}

/// One or more channels sampled on a tensor grid.
#[derive(Debug, Clone)]
pub struct ReferenceField {
    pub grid: FactorGrid,
    pub fields: Vec<DenseField>,
    pub provenance: Provenance,
}

/// Samples the closed-form solution on `grid`.
pub fn analytic_reference(spec: &ProblemSpec, grid: &FactorGrid) -> Result<ReferenceField> {
    if grid.dim() != spec.dim() {
        return Err(Error::invalid(format!(
            "grid has {} axes, {} needs {}",
            grid.dim(),
            spec.name(),
            spec.dim()
        )));
    }
    let pts = tensor_points(grid);
    let mut chans = vec![Vec::with_capacity(pts.len()); spec.n_fields()];
    for p in &pts {
        let vals = spec
            .exact(p)
            .ok_or_else(|| Error::Unsupported(format!("{} has no closed-form solution", spec.name())))?;
        for (c, v) in chans.iter_mut().zip(vals) {
            c.push(v);
        }
    }
    let fields = chans
        .into_iter()
        .map(|c| DenseField::new(grid.shape(), c))
        .collect::<Result<_>>()?;
    Ok(ReferenceField {
        grid: grid.clone(),
        fields,
        provenance: Provenance::Analytic,
    })
}

/// Solves Allen-Cahn, reusing `cache` when it holds a solve for the same
/// options. Returns the solution and whether the cache was reused.
pub fn ac_reference_cached(opts: AcOptions, cache: Option<&Path>) -> Result<(AcSolution, bool)> {
    if let Some(path) = cache {
        if path.exists() {
            if let Some(sol) = AcSolution::read_cache(path, opts)? {
                return Ok((sol, true));
            }
        }
    }
    let sol = ac_solve(opts)?;
    if let Some(path) = cache {
        sol.write_cache(path)?;
    }
    Ok((sol, false))
}

/// Allen-Cahn reference sampled on `grid` (axes `x`, `t`).
pub fn ac_reference(sol: &AcSolution, grid: &FactorGrid) -> Result<ReferenceField> {
    Ok(ReferenceField {
        grid: grid.clone(),
        fields: vec![sol.sample(grid)?],
        provenance: Provenance::Pseudospectral {
            nx: sol.opts.nx,
            nt: sol.opts.nt,
        },
    })
}

/// Reference for problems with a closed form; other problems need a solver
/// or external data.
pub fn reference_for(spec: &ProblemSpec, grid: &FactorGrid) -> Result<ReferenceField> {
    match spec.problem {
        Problem::Helmholtz2d | Problem::KleinGordon2d1t => analytic_reference(spec, grid),
        Problem::AllenCahn1d1t => Err(Error::Unsupported(
            "the Allen-Cahn reference comes from the spectral solver".into(),
        )),
        Problem::Cavity2d => Err(Error::Unsupported(
            "the cavity has no reference field; use external centerline profiles".into(),
        )),
    }
}

/// `||pred - reference|| / ||reference||` over every grid point.
pub fn relative_l2(pred: &DenseField, reference: &DenseField) -> Result<f64> {
    relative_l2_masked(pred, reference, |_| true)
}

/// Relative L2 over the points whose flat index passes `keep`.
pub fn relative_l2_masked(pred: &DenseField, reference: &DenseField, keep: impl Fn(usize) -> bool) -> Result<f64> {
    if pred.shape() != reference.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: prediction {:?}, reference {:?}",
            pred.shape(),
            reference.shape()
        )));
    }
    let mut num = Vec::new();
    let mut den = Vec::new();
    for (i, (p, r)) in pred.values().iter().zip(reference.values()).enumerate() {
        if keep(i) {
            num.push((p - r) * (p - r));
            den.push(r * r);
        }
    }
    let den = pairwise_sum(&den);
    if den == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    Ok((pairwise_sum(&num) / den).sqrt())
}
