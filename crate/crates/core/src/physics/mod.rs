//! The four benchmark problems and the physics-informed loss.
//!
//! A problem is a box domain (time, when present, is the last axis), a PDE
//! residual, an optional initial condition and Dirichlet data on spatial
//! faces. Collocation grids are equidistant on the closed box; the faces go
//! to the boundary term, the `t = 0` slice to the initial term, and what is
//! left is interior.

mod residual;

pub use residual::{
    ac_initial, allen_cahn_residual, cavity_residuals, helmholtz_exact, helmholtz_forcing, helmholtz_residual,
    kg_exact, kg_forcing, kg_residual, AC_DIFFUSION, AC_REACTION, CAVITY_RE, HELMHOLTZ_A1, HELMHOLTZ_A2,
    HELMHOLTZ_KAPPA,
};

use crate::error::{Error, Result};
use crate::model::{Deriv, FieldKey, FieldSet, PinnModel};
use crate::tensorgrid::{linspace, pairwise_sum, tensor_points, DenseField, FactorGrid, Grid1D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Problem {
    Helmholtz2d,
    Cavity2d,
    AllenCahn1d1t,
    KleinGordon2d1t,
}

impl Problem {
    pub const ALL: [Problem; 4] = [
        Problem::Helmholtz2d,
        Problem::Cavity2d,
        Problem::AllenCahn1d1t,
        Problem::KleinGordon2d1t,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Problem::Helmholtz2d => "helmholtz2d",
            Problem::Cavity2d => "cavity2d",
            Problem::AllenCahn1d1t => "allencahn1d1t",
            Problem::KleinGordon2d1t => "kleingordon2d1t",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL.iter().copied().find(|p| p.name() == name).ok_or_else(|| {
            let valid: Vec<&str> = Self::ALL.iter().map(Problem::name).collect();
            Error::invalid(format!("unknown problem {name:?}; valid names: {}", valid.join(", ")))
        })
    }

    pub fn spec(&self) -> ProblemSpec {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        match self {
            Problem::Helmholtz2d => ProblemSpec {
                problem: *self,
                domain: vec![(-1.0, 1.0), (-1.0, 1.0)],
                axis_names: s(&["x", "y"]),
                field_names: s(&["u"]),
                time_axis: None,
            },
            Problem::Cavity2d => ProblemSpec {
                problem: *self,
                domain: vec![(0.0, 1.0), (0.0, 1.0)],
                axis_names: s(&["x", "y"]),
                field_names: s(&["u", "v", "p"]),
                time_axis: None,
            },
            Problem::AllenCahn1d1t => ProblemSpec {
                problem: *self,
                domain: vec![(-1.0, 1.0), (0.0, 1.0)],
                axis_names: s(&["x", "t"]),
                field_names: s(&["u"]),
                time_axis: Some(1),
            },
            Problem::KleinGordon2d1t => ProblemSpec {
                problem: *self,
                domain: vec![(0.0, 1.0), (0.0, 1.0), (0.0, 10.0)],
                axis_names: s(&["x", "y", "t"]),
                field_names: s(&["u"]),
                time_axis: Some(2),
            },
        }
    }
}

impl std::fmt::Display for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub problem: Problem,
    pub domain: Vec<(f64, f64)>,
    pub axis_names: Vec<String>,
    pub field_names: Vec<String>,
    pub time_axis: Option<usize>,
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        self.problem.name()
    }

    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    pub fn n_fields(&self) -> usize {
        self.field_names.len()
    }

    /// Fields the interior residual needs.
    pub fn pde_keys(&self) -> Vec<FieldKey> {
        match self.problem {
            Problem::Helmholtz2d => residual::helmholtz_keys(),
            Problem::Cavity2d => residual::cavity_keys(),
            Problem::AllenCahn1d1t => residual::ac_keys(),
            Problem::KleinGordon2d1t => residual::kg_keys(),
        }
    }

    /// Highest derivative order needed along each axis.
    pub fn required_orders(&self) -> Vec<u8> {
        let mut o = vec![0u8; self.dim()];
        for k in self.pde_keys() {
            match k.deriv {
                Deriv::Value => {}
                Deriv::D1(a) => o[a] = o[a].max(1),
                Deriv::D2(a) => o[a] = 2,
            }
        }
        o
    }

    /// Right-hand side of the residual at an interior point (zero when the
    /// problem has no source).
    pub fn forcing(&self, pt: &[f64]) -> f64 {
        match self.problem {
            Problem::Helmholtz2d => helmholtz_forcing(pt[0], pt[1]),
            Problem::KleinGordon2d1t => kg_forcing(pt[0], pt[1], pt[2]),
            _ => 0.0,
        }
    }

    /// Output channels constrained by the initial condition.
    pub fn ic_channels(&self) -> Vec<usize> {
        match self.time_axis {
            Some(_) => vec![0],
            None => vec![],
        }
    }

    pub fn ic_target(&self, pt: &[f64]) -> Vec<f64> {
        match self.problem {
            Problem::AllenCahn1d1t => vec![ac_initial(pt[0])],
            Problem::KleinGordon2d1t => vec![pt[0] + pt[1]],
            _ => vec![],
        }
    }

    /// Output channels constrained on the boundary faces.
    pub fn bc_channels(&self) -> Vec<usize> {
        match self.problem {
            Problem::Cavity2d => vec![0, 1],
            _ => vec![0],
        }
    }

    /// Dirichlet data on the face `axis = lo` (`at_hi = false`) or `hi`.
    pub fn bc_target(&self, axis: usize, at_hi: bool, pt: &[f64]) -> Vec<f64> {
        match self.problem {
            Problem::Helmholtz2d => vec![0.0],
            Problem::Cavity2d if axis == 1 && at_hi => vec![1.0, 0.0],
            Problem::Cavity2d => vec![0.0, 0.0],
            Problem::AllenCahn1d1t => vec![-1.0],
            Problem::KleinGordon2d1t => vec![kg_exact(pt[0], pt[1], pt[2])],
        }
    }

    /// Closed-form solution, where one exists.
    pub fn exact(&self, pt: &[f64]) -> Option<Vec<f64>> {
        match self.problem {
            Problem::Helmholtz2d => Some(vec![helmholtz_exact(pt[0], pt[1])]),
            Problem::KleinGordon2d1t => Some(vec![kg_exact(pt[0], pt[1], pt[2])]),
            _ => None,
        }
    }

    fn spatial_axes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim()).filter(move |&a| Some(a) != self.time_axis)
    }

    /// Whether `pt` lies on the boundary face `axis = lo/hi`.
    pub fn on_face(&self, pt: &[f64], axis: usize, at_hi: bool) -> bool {
        let inside = pt.iter().zip(&self.domain).all(|(&x, &(lo, hi))| x >= lo && x <= hi);
        let (lo, hi) = self.domain[axis];
        inside && pt[axis] == if at_hi { hi } else { lo }
    }

    /// Residual components of the PDE at each interior point.
    pub fn residuals(&self, fs: &FieldSet, forcing: &[f64]) -> Result<Vec<Vec<f64>>> {
        match self.problem {
            Problem::Helmholtz2d => Ok(vec![helmholtz_residual(fs, forcing)?]),
            Problem::KleinGordon2d1t => Ok(vec![kg_residual(fs, forcing)?]),
            Problem::AllenCahn1d1t => Ok(vec![allen_cahn_residual(fs)?]),
            Problem::Cavity2d => Ok(cavity_residuals(fs)?.into()),
        }
    }

    /// Field cotangents for residual cotangents `g` (transpose Jacobian of
    /// [`residuals`](Self::residuals) at `fs`).
    pub fn residual_cotangent(&self, fs: &FieldSet, g: &[Vec<f64>]) -> Result<FieldSet> {
        match self.problem {
            Problem::Helmholtz2d => Ok(residual::helmholtz_cotangent(&g[0], fs.shape())),
            Problem::KleinGordon2d1t => residual::kg_cotangent(fs, &g[0]),
            Problem::AllenCahn1d1t => residual::ac_cotangent(fs, &g[0]),
            Problem::Cavity2d => residual::cavity_cotangent(fs, g),
        }
    }
}

/// One boundary face: the closed grid with one spatial axis pinned.
#[derive(Debug, Clone)]
pub struct Face {
    pub name: String,
    pub axis: usize,
    pub at_hi: bool,
    pub grid: FactorGrid,
    /// `[constrained channel][point]`.
    pub targets: Vec<Vec<f64>>,
}

/// Collocation grids and precomputed targets for one problem.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    pub spec: ProblemSpec,
    pub closed: FactorGrid,
    pub interior: FactorGrid,
    pub forcing: Vec<f64>,
    pub ic: Option<(FactorGrid, Vec<Vec<f64>>)>,
    pub faces: Vec<Face>,
}

fn by_channel(rows: Vec<Vec<f64>>, n_channels: usize) -> Vec<Vec<f64>> {
    (0..n_channels).map(|c| rows.iter().map(|r| r[c]).collect()).collect()
}

fn fmt_coord(x: f64) -> String {
    format!("{x}")
}

/// Which points carry the PDE residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InteriorGrid {
    /// Closed grid minus the boundary faces and the initial slice.
    #[default]
    Open,
    /// The whole closed grid, faces included.
    Closed,
}

impl InteriorGrid {
    pub fn name(&self) -> &'static str {
        match self {
            InteriorGrid::Open => "open",
            InteriorGrid::Closed => "closed",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "open" => Ok(InteriorGrid::Open),
            "closed" => Ok(InteriorGrid::Closed),
            _ => Err(Error::invalid(format!(
                "interior grid must be \"open\" or \"closed\", got {s:?}"
            ))),
        }
    }
}

impl PreparedProblem {
    /// `n[i]` equidistant points per axis on the closed box (at least 3),
    /// open interior.
    pub fn new(spec: ProblemSpec, n: &[usize]) -> Result<Self> {
        Self::with_interior(spec, n, InteriorGrid::Open)
    }

    pub fn with_interior(spec: ProblemSpec, n: &[usize], mode: InteriorGrid) -> Result<Self> {
        if n.len() != spec.dim() {
            return Err(Error::invalid(format!(
                "{} needs {} per-axis point counts, got {}",
                spec.name(),
                spec.dim(),
                n.len()
            )));
        }
        if let Some(&bad) = n.iter().find(|&&k| k < 3) {
            return Err(Error::invalid(format!(
                "collocation axes need at least 3 points, got {bad}"
            )));
        }
        let closed_axes = spec
            .domain
            .iter()
            .zip(n)
            .map(|(&(lo, hi), &k)| linspace(lo, hi, k))
            .collect::<Result<Vec<_>>>()?;
        let closed = FactorGrid::new(closed_axes.clone(), spec.axis_names.clone())?;

        let interior_axes = closed_axes
            .iter()
            .enumerate()
            .map(|(a, g)| {
                if mode == InteriorGrid::Closed {
                    Ok(g.clone())
                } else if Some(a) == spec.time_axis {
                    g.slice(1..g.len())
                } else {
                    g.slice(1..g.len() - 1)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let interior = FactorGrid::new(interior_axes, spec.axis_names.clone())?;
        let forcing = tensor_points(&interior).iter().map(|p| spec.forcing(p)).collect();

        let ic = match spec.time_axis {
            Some(ta) => {
                let (lo, hi) = spec.domain[ta];
                let grid = closed.with_axis(ta, Grid1D::singleton(lo, lo, hi)?);
                let rows = tensor_points(&grid).iter().map(|p| spec.ic_target(p)).collect();
                let targets = by_channel(rows, spec.ic_channels().len());
                Some((grid, targets))
            }
            None => None,
        };

        let n_bc = spec.bc_channels().len();
        let mut faces = Vec::new();
        for a in spec.spatial_axes().collect::<Vec<_>>() {
            for at_hi in [false, true] {
                let (lo, hi) = spec.domain[a];
                let x = if at_hi { hi } else { lo };
                let mut grid = closed.with_axis(a, Grid1D::singleton(x, lo, hi)?);
                // the moving lid stops short of the corners, which belong to
                // the no-slip side walls
                if spec.problem == Problem::Cavity2d && a == 1 && at_hi {
                    let xs = grid.axis(0).slice(1..n[0] - 1)?;
                    grid = grid.with_axis(0, xs);
                }
                let rows = tensor_points(&grid)
                    .iter()
                    .map(|p| spec.bc_target(a, at_hi, p))
                    .collect();
                faces.push(Face {
                    name: format!("{}={}", spec.axis_names[a], fmt_coord(x)),
                    axis: a,
                    at_hi,
                    grid,
                    targets: by_channel(rows, n_bc),
                });
            }
        }
        Ok(Self {
            spec,
            closed,
            interior,
            forcing,
            ic,
            faces,
        })
    }

    pub fn num_interior(&self) -> usize {
        self.interior.num_points()
    }

    pub fn num_ic(&self) -> usize {
        self.ic.as_ref().map_or(0, |(g, _)| g.num_points())
    }

    pub fn num_bc(&self) -> usize {
        self.faces.iter().map(|f| f.grid.num_points()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub pde: f64,
    pub ic: f64,
    pub bc: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            pde: 1.0,
            ic: 1.0,
            bc: 1.0,
        }
    }
}

/// Network evaluations spent on each loss term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub interior: u64,
    pub ic: u64,
    pub bc: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_pde: f64,
    pub l_ic: f64,
    pub l_bc: f64,
    pub total: f64,
    pub weights: Weights,
    /// Mean squared boundary error per face, in face order.
    pub bc_faces: Vec<(String, f64)>,
    pub evals: EvalCounts,
}

impl LossBreakdown {
    /// First loss term that is not finite, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("pde", self.l_pde),
            ("ic", self.l_ic),
            ("bc", self.l_bc),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

fn check_model<M: PinnModel>(model: &M, spec: &ProblemSpec) -> Result<()> {
    if model.dim() != spec.dim() || model.n_fields() != spec.n_fields() {
        return Err(Error::invalid(format!(
            "{} needs a model R^{} -> R^{}, got R^{} -> R^{}",
            spec.name(),
            spec.dim(),
            spec.n_fields(),
            model.dim(),
            model.n_fields()
        )));
    }
    Ok(())
}

fn sum_squares(xs: &[f64]) -> f64 {
    let sq: Vec<f64> = xs.iter().map(|v| v * v).collect();
    pairwise_sum(&sq)
}

/// Mean squared residual over the interior grid. With `grad`, adds
/// `scale * dL/dtheta` into it.
pub fn loss_pde<M: PinnModel>(model: &M, prep: &PreparedProblem, grad: Option<&mut [f64]>, scale: f64) -> Result<f64> {
    check_model(model, &prep.spec)?;
    let keys = prep.spec.pde_keys();
    let (fs, tape) = model.eval_fields(&prep.interior, &keys)?;
    let res = prep.spec.residuals(&fs, &prep.forcing)?;
    let n = prep.num_interior() as f64;
    let loss = res.iter().map(|r| sum_squares(r)).sum::<f64>() / n;
    if let Some(grad) = grad {
        let g: Vec<Vec<f64>> = res
            .iter()
            .map(|r| r.iter().map(|v| scale * 2.0 * v / n).collect())
            .collect();
        let cot = prep.spec.residual_cotangent(&fs, &g)?;
        model.backward_fields(&tape, &cot, grad)?;
    }
    Ok(loss)
}

/// Squared-error term over one grid with per-channel targets. Returns the
/// sum (not the mean) and optionally backpropagates `scale * 2 * err`.
fn data_term<M: PinnModel>(
    model: &M,
    grid: &FactorGrid,
    channels: &[usize],
    targets: &[Vec<f64>],
    grad: Option<(&mut [f64], f64)>,
) -> Result<f64> {
    let keys: Vec<FieldKey> = channels.iter().map(|&c| FieldKey::new(c, Deriv::Value)).collect();
    let (fs, tape) = model.eval_fields(grid, &keys)?;
    let mut total = 0.0;
    let mut cot = FieldSet::zeros(&grid.shape(), &[]);
    for (k, t) in keys.iter().zip(targets) {
        let err: Vec<f64> = fs.get(*k)?.iter().zip(t).map(|(u, t)| u - t).collect();
        total += sum_squares(&err);
        if let Some((_, s)) = &grad {
            cot.set(*k, err.iter().map(|e| s * 2.0 * e).collect());
        }
    }
    if let Some((g, _)) = grad {
        model.backward_fields(&tape, &cot, g)?;
    }
    Ok(total)
}

/// Mean squared initial-condition error (zero for steady problems).
pub fn loss_ic<M: PinnModel>(model: &M, prep: &PreparedProblem, grad: Option<&mut [f64]>, scale: f64) -> Result<f64> {
    check_model(model, &prep.spec)?;
    let Some((grid, targets)) = &prep.ic else {
        return Ok(0.0);
    };
    let n = grid.num_points() as f64;
    let sum = data_term(
        model,
        grid,
        &prep.spec.ic_channels(),
        targets,
        grad.map(|g| (g, scale / n)),
    )?;
    Ok(sum / n)
}

/// Mean squared boundary error over all face points, plus the per-face means.
pub fn loss_bc<M: PinnModel>(
    model: &M,
    prep: &PreparedProblem,
    mut grad: Option<&mut [f64]>,
    scale: f64,
) -> Result<(f64, Vec<(String, f64)>)> {
    check_model(model, &prep.spec)?;
    let n = prep.num_bc() as f64;
    let channels = prep.spec.bc_channels();
    let mut total = 0.0;
    let mut per_face = Vec::with_capacity(prep.faces.len());
    for face in &prep.faces {
        let g = grad.as_deref_mut().map(|g| (g, scale / n));
        let sum = data_term(model, &face.grid, &channels, &face.targets, g)?;
        per_face.push((face.name.clone(), sum / face.grid.num_points() as f64));
        total += sum;
    }
    Ok((total / n, per_face))
}

/// Weighted total loss and its exact parameter gradient.
pub fn total_loss<M: PinnModel>(model: &M, prep: &PreparedProblem, w: Weights) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut grad = vec![0.0; model.num_params()];
    let c = model.counter();
    let before = c.get();
    let l_pde = loss_pde(model, prep, (w.pde != 0.0).then_some(grad.as_mut_slice()), w.pde)?;
    let after_pde = c.get();
    let l_ic = loss_ic(model, prep, (w.ic != 0.0).then_some(grad.as_mut_slice()), w.ic)?;
    let after_ic = c.get();
    let (l_bc, bc_faces) = loss_bc(model, prep, (w.bc != 0.0).then_some(grad.as_mut_slice()), w.bc)?;
    let after_bc = c.get();
    let total = w.pde * l_pde + w.ic * l_ic + w.bc * l_bc;
    Ok((
        LossBreakdown {
            l_pde,
            l_ic,
            l_bc,
            total,
            weights: w,
            bc_faces,
            evals: EvalCounts {
                interior: after_pde - before,
                ic: after_ic - after_pde,
                bc: after_bc - after_ic,
            },
        },
        grad,
    ))
}

/// Residual components on the interior grid as fields.
pub fn residual_fields<M: PinnModel>(model: &M, prep: &PreparedProblem) -> Result<Vec<DenseField>> {
    check_model(model, &prep.spec)?;
    let (fs, _) = model.eval_fields(&prep.interior, &prep.spec.pde_keys())?;
    prep.spec
        .residuals(&fs, &prep.forcing)?
        .into_iter()
        .map(|r| DenseField::new(prep.interior.shape(), r))
        .collect()
}

/// Root mean square of the continuity residual over the interior.
pub fn continuity_rms<M: PinnModel>(model: &M, prep: &PreparedProblem) -> Result<f64> {
    if prep.spec.problem != Problem::Cavity2d {
        return Err(Error::Unsupported(
            "continuity residual is defined for the cavity only".into(),
        ));
    }
    let r = residual_fields(model, prep)?;
    Ok((sum_squares(r[0].values()) / r[0].len() as f64).sqrt())
}

/// RMS of every residual component on an arbitrary grid, such as points
/// between the collocation nodes.
pub fn residual_rms_on<M: PinnModel>(model: &M, spec: &ProblemSpec, grid: &FactorGrid) -> Result<Vec<f64>> {
    check_model(model, spec)?;
    let forcing: Vec<f64> = tensor_points(grid).iter().map(|p| spec.forcing(p)).collect();
    let (fs, _) = model.eval_fields(grid, &spec.pde_keys())?;
    let n = grid.num_points() as f64;
    Ok(spec
        .residuals(&fs, &forcing)?
        .iter()
        .map(|r| (sum_squares(r) / n).sqrt())
        .collect())
}

/// Pressure fixed up to its gauge: mean removed, then scaled by the largest
/// absolute deviation.
pub fn normalize_pressure(p: &DenseField) -> DenseField {
    let mean = pairwise_sum(p.values()) / p.len() as f64;
    let max = p.values().iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if max == 0.0 {
        return p.map(|_| 0.0);
    }
    p.map(|v| (v - mean) / max)
}

#[cfg(test)]
mod tests;
