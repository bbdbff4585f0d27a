//! Run-level plumbing: train from a config into a run directory, evaluate a
//! run directory, time two configs against each other, and build reference
//! fields.
//!
//! A run directory holds `config.toml` (the resolved config), `trace.csv`,
//! `checkpoint.txt`, `report.toml` and a `fields/` directory of dense-field
//! containers. Evaluation reads nothing else, so re-running it reproduces
//! the report exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bspline::SplineSpec;
use crate::config::{Method, TrainConfig};
use crate::error::{Error, Result};
use crate::full_model::DenseModel;
use crate::kanet::{read_checkpoint, write_checkpoint, NamedNetwork};
use crate::metrics::{
    error_field, l2_over_time, midpoint_grid, relative_l2, speedup, time_mean_abs_error, version_stamp, Evals,
    FinalLoss, ParamCount, RunReport, Speedup, Timing,
};
use crate::model::PinnModel;
use crate::optim::{train, AdamConfig, TrainOptions, TrainTrace, WARMUP_ITERS};
use crate::physics::{
    continuity_rms, normalize_pressure, residual_rms_on, total_loss, PreparedProblem, Problem, ProblemSpec,
};
use crate::reference::{
    ac_reference, ac_reference_cached, analytic_reference, load_external_profiles, relative_l2_masked, AcOptions,
    Profile, ReferenceField,
};
use crate::sep_model::SeparableModel;
use crate::tensorgrid::{linspace, DenseField, FactorGrid, RngState};

pub const CONFIG_FILE: &str = "config.toml";
pub const TRACE_FILE: &str = "trace.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const REPORT_FILE: &str = "report.toml";
pub const FIELDS_DIR: &str = "fields";
pub const AC_CACHE_FILE: &str = "reference_ac.field";

/// Checkpoint conversion shared by both model kinds.
pub trait Checkpointed {
    fn to_checkpoint(&self) -> Vec<NamedNetwork>;
    fn load_checkpoint(&mut self, nets: &[NamedNetwork]) -> Result<()>;
}

impl Checkpointed for SeparableModel {
    fn to_checkpoint(&self) -> Vec<NamedNetwork> {
        SeparableModel::to_checkpoint(self)
    }

    fn load_checkpoint(&mut self, nets: &[NamedNetwork]) -> Result<()> {
        SeparableModel::load_checkpoint(self, nets)
    }
}

impl Checkpointed for DenseModel {
    fn to_checkpoint(&self) -> Vec<NamedNetwork> {
        DenseModel::to_checkpoint(self)
    }

    fn load_checkpoint(&mut self, nets: &[NamedNetwork]) -> Result<()> {
        DenseModel::load_checkpoint(self, nets)
    }
}

pub enum AnyModel {
    Separable(SeparableModel),
    Dense(DenseModel),
}

/// Freshly initialized model for `cfg`, seeded from `cfg.seed`.
pub fn build_model(cfg: &TrainConfig) -> Result<AnyModel> {
    let spec = cfg.spec();
    let spline = SplineSpec::new(cfg.g, cfg.k)?;
    let mut rng = RngState::new(cfg.seed);
    Ok(match cfg.method {
        Method::Separable => AnyModel::Separable(SeparableModel::new(
            &cfg.widths,
            cfg.r.unwrap_or(0),
            spec.n_fields(),
            &spline,
            &spec.domain,
            &spec.axis_names,
            &mut rng,
        )?),
        Method::Dense => AnyModel::Dense(DenseModel::new(
            &cfg.widths,
            &spline,
            &spec.domain,
            &spec.axis_names,
            &mut rng,
        )?),
    })
}

pub fn prepare(cfg: &TrainConfig) -> Result<PreparedProblem> {
    PreparedProblem::with_interior(cfg.spec(), &cfg.n_cp, cfg.interior_grid())
}

fn train_options(cfg: &TrainConfig, checkpoint_every: Option<usize>) -> TrainOptions {
    TrainOptions {
        epochs: cfg.epochs,
        weights: cfg.weights(),
        adam: AdamConfig {
            lr: cfg.lr,
            clip: cfg.clip,
            ..AdamConfig::default()
        },
        checkpoint_every,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Trains `cfg` into `cfg.out_dir`, then evaluates the run on the configured
/// evaluation grid.
pub fn cmd_train(cfg: &TrainConfig) -> Result<RunReport> {
    let dir = cfg.out_dir.clone();
    create_dir(&dir)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    let prep = prepare(cfg)?;
    match build_model(cfg)? {
        AnyModel::Separable(mut m) => train_into(&mut m, &prep, cfg, &dir)?,
        AnyModel::Dense(mut m) => train_into(&mut m, &prep, cfg, &dir)?,
    };
    cmd_eval(&dir, None)
}

fn train_into<M: PinnModel + Checkpointed>(
    model: &mut M,
    prep: &PreparedProblem,
    cfg: &TrainConfig,
    dir: &Path,
) -> Result<TrainTrace> {
    let ckpt = dir.join(CHECKPOINT_FILE);
    let opts = train_options(cfg, Some(cfg.checkpoint_every));
    let trace = train(model, prep, &opts, |_, m| {
        write_text(&ckpt, &write_checkpoint(&m.to_checkpoint()))
    })?;
    write_text(&dir.join(TRACE_FILE), &trace.to_csv())?;
    Ok(trace)
}

/// Config and trained model of an existing run directory.
pub fn load_run(dir: &Path) -> Result<(TrainConfig, AnyModel)> {
    let cfg = TrainConfig::from_file(&dir.join(CONFIG_FILE))?;
    let path = dir.join(CHECKPOINT_FILE);
    let nets = read_checkpoint(&read_text(&path)?, &path.display().to_string())?;
    let mut model = build_model(&cfg)?;
    match &mut model {
        AnyModel::Separable(m) => m.load_checkpoint(&nets)?,
        AnyModel::Dense(m) => m.load_checkpoint(&nets)?,
    }
    Ok((cfg, model))
}

/// Evenly spaced evaluation grid with `n[i]` points on each closed axis.
pub fn eval_grid(spec: &ProblemSpec, n: &[usize]) -> Result<FactorGrid> {
    if n.len() != spec.dim() {
        return Err(Error::invalid(format!(
            "{} needs {} grid sizes, got {}",
            spec.name(),
            spec.dim(),
            n.len()
        )));
    }
    let axes = spec
        .domain
        .iter()
        .zip(n)
        .map(|(&(lo, hi), &k)| linspace(lo, hi, k))
        .collect::<Result<Vec<_>>>()?;
    FactorGrid::new(axes, spec.axis_names.clone())
}

/// Evaluates a run directory. With `eval_n` the grid differs from the
/// configured one and results go to `eval-<shape>/` instead of the run root.
pub fn cmd_eval(dir: &Path, eval_n: Option<&[usize]>) -> Result<RunReport> {
    let (cfg, model) = load_run(dir)?;
    let n = eval_n.map(<[usize]>::to_vec).unwrap_or_else(|| cfg.eval_n.clone());
    let out = match eval_n {
        None => dir.to_path_buf(),
        Some(n) => dir.join(format!("eval-{}", shape_tag(n))),
    };
    let trace = TrainTrace {
        rows: TrainTrace::rows_from_csv(&read_text(&dir.join(TRACE_FILE))?, TRACE_FILE)?,
        warmup: WARMUP_ITERS,
        evals: Default::default(),
        final_loss: None,
    };
    let report = match &model {
        AnyModel::Separable(m) => evaluate(m, &cfg, dir, &out, &n, &trace)?,
        AnyModel::Dense(m) => evaluate(m, &cfg, dir, &out, &n, &trace)?,
    };
    report.write(&out.join(REPORT_FILE))?;
    Ok(report)
}

fn shape_tag(n: &[usize]) -> String {
    n.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

struct FieldWriter<'a> {
    dir: PathBuf,
    grid: &'a FactorGrid,
    problem: &'a str,
}

impl FieldWriter<'_> {
    fn write(&self, name: &str, field: &DenseField) -> Result<()> {
        let mut h = BTreeMap::new();
        h.insert("problem".to_string(), self.problem.to_string());
        h.insert("field".to_string(), name.to_string());
        let axes: Vec<&str> = self.grid.axis_names().iter().map(String::as_str).collect();
        let shape = field.shape();
        // Fields over the full grid get its bounds; reduced ones (e.g. time
        // averages) drop the trailing axis.
        let used = shape.len().min(axes.len());
        h.insert("axes".to_string(), axes[..used].join(" "));
        let bounds: Vec<String> = self.grid.axes()[..used]
            .iter()
            .map(|a| format!("{:?} {:?}", a.points()[0], a.points()[a.len() - 1]))
            .collect();
        h.insert("bounds".to_string(), bounds.join(" "));
        field.write_file(&self.dir.join(format!("{name}.field")), &h)
    }
}

fn evaluate<M: PinnModel>(
    model: &M,
    cfg: &TrainConfig,
    run_dir: &Path,
    out: &Path,
    n: &[usize],
    trace: &TrainTrace,
) -> Result<RunReport> {
    let spec = cfg.spec();
    let prep = prepare(cfg)?;
    let (lb, _) = total_loss(model, &prep, cfg.weights())?;
    let grid = eval_grid(&spec, n)?;
    let pred = model.eval_grid(&grid)?;
    let fields_dir = out.join(FIELDS_DIR);
    create_dir(&fields_dir)?;
    let fw = FieldWriter {
        dir: fields_dir,
        grid: &grid,
        problem: spec.name(),
    };
    for (name, f) in spec.field_names.iter().zip(&pred) {
        fw.write(&format!("pred_{name}"), f)?;
    }

    let mut l2 = BTreeMap::new();
    let mut diagnostics = BTreeMap::new();
    let reference_desc;
    match spec.problem {
        Problem::Helmholtz2d | Problem::KleinGordon2d1t | Problem::AllenCahn1d1t => {
            let reference = if spec.problem == Problem::AllenCahn1d1t {
                let opts = AcOptions {
                    dealias: cfg.ref_dealias.unwrap_or(false),
                    ..AcOptions::new(cfg.ref_nx.unwrap_or(320), cfg.ref_nt.unwrap_or(1000))
                };
                let (sol, _) = ac_reference_cached(opts, Some(&run_dir.join(AC_CACHE_FILE)))?;
                ac_reference(&sol, &grid)?
            } else {
                analytic_reference(&spec, &grid)?
            };
            reference_desc = reference.provenance.to_string();
            score_against(&spec, &grid, &pred, &reference, &fw, out, &mut l2, &mut diagnostics)?;
        }
        Problem::Cavity2d => {
            reference_desc = "none".to_string();
            let p = normalize_pressure(&pred[2]);
            fw.write("pred_p_normalized", &p)?;
            diagnostics.insert("continuity_rms".into(), continuity_rms(model, &prep)?);
            let mid = residual_rms_on(model, &spec, &midpoint_grid(&prep.closed)?)?;
            for (name, v) in ["continuity", "momentum_x", "momentum_y"].iter().zip(mid) {
                diagnostics.insert(format!("midpoint_{name}_rms"), v);
            }
            if let Some(path) = &cfg.external_profiles {
                let profiles = load_external_profiles(path)?;
                let cmp = compare_profiles(model, &profiles)?;
                write_text(&out.join("profiles_comparison.csv"), &cmp.to_csv())?;
                for (name, d) in cmp.max_abs_diff() {
                    diagnostics.insert(format!("profile_{name}_max_abs_diff"), d);
                }
            }
        }
    }

    let (ms_mean, ms_std) = trace.ms_stats();
    let per_iter = lb.evals;
    let evals = Evals {
        interior_per_iter: per_iter.interior,
        ic_per_iter: per_iter.ic,
        bc_per_iter: per_iter.bc,
        total: (per_iter.interior + per_iter.ic + per_iter.bc) * cfg.epochs as u64,
    };
    let speedup = match &cfg.baseline {
        Some(base) => {
            let b = RunReport::read(&base.join(REPORT_FILE))?;
            Some(Speedup {
                baseline: base.display().to_string(),
                wall_clock: speedup(b.timing.ms_mean, ms_mean)?,
                eval_ratio: b.evals.per_iter() as f64 / evals.per_iter() as f64,
            })
        }
        None => None,
    };
    Ok(RunReport {
        version: version_stamp(),
        problem: spec.name().into(),
        method: cfg.method.name().into(),
        threads: cfg.threads,
        eval_shape: n.to_vec(),
        reference: reference_desc,
        config: cfg.clone(),
        params: ParamCount::new(model.num_params(), cfg.reference_params),
        timing: Timing {
            ms_mean,
            ms_std,
            iterations: trace.len(),
            warmup: if trace.len() > trace.warmup { trace.warmup } else { 0 },
        },
        evals,
        loss: FinalLoss {
            l_pde: lb.l_pde,
            l_ic: lb.l_ic,
            l_bc: lb.l_bc,
            total: lb.total,
            bc_faces: lb.bc_faces.into_iter().collect(),
        },
        l2,
        diagnostics,
        speedup,
    })
}

#[allow(clippy::too_many_arguments)]
fn score_against(
    spec: &ProblemSpec,
    grid: &FactorGrid,
    pred: &[DenseField],
    reference: &ReferenceField,
    fw: &FieldWriter<'_>,
    out: &Path,
    l2: &mut BTreeMap<String, f64>,
    diagnostics: &mut BTreeMap<String, f64>,
) -> Result<()> {
    for (c, name) in spec.field_names.iter().enumerate() {
        let (p, r) = (&pred[c], &reference.fields[c]);
        fw.write(&format!("ref_{name}"), r)?;
        fw.write(&format!("error_{name}"), &error_field(p, r)?)?;
        if spec.problem == Problem::AllenCahn1d1t {
            // The periodic reference only stands in for the Dirichlet
            // problem away from x = +-1.
            let (nx, nt) = (grid.shape()[0], grid.shape()[1]);
            let interior = |i: usize| {
                let ix = i / nt;
                ix > 0 && ix + 1 < nx
            };
            l2.insert(name.clone(), relative_l2_masked(p, r, interior)?);
            diagnostics.insert(format!("l2_{name}_with_boundary"), relative_l2(p, r)?);
            let mut worst: f64 = 0.0;
            for it in 0..nt {
                for ix in [0, nx - 1] {
                    worst = worst.max((r.get(&[ix, it]) + 1.0).abs());
                }
            }
            diagnostics.insert("reference_boundary_discrepancy".into(), worst);
        } else {
            l2.insert(name.clone(), relative_l2(p, r)?);
        }
        if let Some(t) = spec.time_axis {
            let series = l2_over_time(p, r, t)?;
            let ts = grid.axis(t).points();
            let mut csv = String::from("t,l2\n");
            for (t, v) in ts.iter().zip(&series) {
                let _ = writeln!(csv, "{t:?},{v:?}");
            }
            write_text(&out.join(format!("l2_over_time_{name}.csv")), &csv)?;
            let mean = series.iter().sum::<f64>() / series.len() as f64;
            let max = series.iter().copied().fold(0.0, f64::max);
            diagnostics.insert(format!("l2_over_time_{name}_mean"), mean);
            diagnostics.insert(format!("l2_over_time_{name}_max"), max);
            fw.write(&format!("mean_abs_error_{name}"), &time_mean_abs_error(p, r, t)?)?;
        }
    }
    Ok(())
}

/// Model centerline values next to externally supplied profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileComparison {
    pub rows: Vec<(String, f64, f64, f64)>,
}

impl ProfileComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("profile,coord,reference,predicted\n");
        for (name, c, r, p) in &self.rows {
            let _ = writeln!(s, "{name},{c:?},{r:?},{p:?}");
        }
        s
    }

    pub fn max_abs_diff(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (name, _, r, p) in &self.rows {
            let e = m.entry(name.clone()).or_insert(0.0f64);
            *e = e.max((r - p).abs());
        }
        m
    }
}

/// A profile whose name starts with `v` is `v(x, 0.5)`; anything else is
/// `u(0.5, y)`. Unnamed profiles alternate u, v in file order.
pub fn compare_profiles<M: PinnModel>(model: &M, profiles: &[Profile]) -> Result<ProfileComparison> {
    let mut rows = Vec::new();
    for (i, p) in profiles.iter().enumerate() {
        let is_v = if p.name.starts_with("profile") {
            i % 2 == 1
        } else {
            p.name.starts_with('v')
        };
        let pts: Vec<Vec<f64>> = p
            .coords
            .iter()
            .map(|&c| if is_v { vec![c, 0.5] } else { vec![0.5, c] })
            .collect();
        let vals = model.eval_points(&pts)?;
        let ch = usize::from(is_v);
        for ((c, r), v) in p.coords.iter().zip(&p.values).zip(vals) {
            rows.push((p.name.clone(), *c, *r, v[ch]));
        }
    }
    Ok(ProfileComparison { rows })
}

/// Wall-clock comparison of two configurations over a short run each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub version: String,
    pub iterations: usize,
    pub warmup: usize,
    pub baseline: BenchSide,
    pub candidate: BenchSide,
    /// `baseline ms / candidate ms`.
    pub speedup: f64,
    /// Relative uncertainty of `speedup` from the two timing spreads.
    pub noise: f64,
    /// `baseline evaluations / candidate evaluations` per iteration.
    pub eval_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSide {
    pub label: String,
    pub method: String,
    pub params: usize,
    pub n_cp: Vec<usize>,
    pub ms_mean: f64,
    pub ms_std: f64,
    pub evals_per_iter: u64,
}

impl BenchReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("bench report is plain data")
    }
}

fn bench_one(cfg: &TrainConfig, label: &str, iterations: usize) -> Result<BenchSide> {
    let prep = prepare(cfg)?;
    let mut short = cfg.clone();
    short.epochs = iterations;
    let opts = train_options(&short, None);
    let (trace, params) = match build_model(cfg)? {
        AnyModel::Separable(mut m) => (train(&mut m, &prep, &opts, |_, _| Ok(()))?, m.num_params()),
        AnyModel::Dense(mut m) => (train(&mut m, &prep, &opts, |_, _| Ok(()))?, m.num_params()),
    };
    let (ms_mean, ms_std) = trace.ms_stats();
    Ok(BenchSide {
        label: label.into(),
        method: cfg.method.name().into(),
        params,
        n_cp: cfg.n_cp.clone(),
        ms_mean,
        ms_std,
        evals_per_iter: trace.evals.interior + trace.evals.ic + trace.evals.bc,
    })
}

/// Times `iterations` training steps of each config (the first
/// [`WARMUP_ITERS`] are excluded when there are more than that).
pub fn cmd_bench(baseline: &TrainConfig, candidate: &TrainConfig, iterations: usize) -> Result<BenchReport> {
    if iterations == 0 {
        return Err(Error::invalid("bench needs at least one iteration"));
    }
    let b = bench_one(baseline, "baseline", iterations)?;
    let c = bench_one(candidate, "candidate", iterations)?;
    let rel = |s: &BenchSide| s.ms_std / s.ms_mean;
    Ok(BenchReport {
        version: version_stamp(),
        iterations,
        warmup: if iterations > WARMUP_ITERS { WARMUP_ITERS } else { 0 },
        speedup: speedup(b.ms_mean, c.ms_mean)?,
        noise: (rel(&b).powi(2) + rel(&c).powi(2)).sqrt(),
        eval_ratio: b.evals_per_iter as f64 / c.evals_per_iter as f64,
        baseline: b,
        candidate: c,
    })
}

/// Where a reference was written and whether an existing cache was reused.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOutcome {
    pub path: PathBuf,
    pub reused: bool,
}

/// Builds the reference for `problem` at `resolution` inside `dir`: the
/// solver state history `[nx, nt]` for Allen-Cahn, the closed form sampled
/// on an evenly spaced grid otherwise.
pub fn cmd_reference(problem: Problem, resolution: &[usize], dir: &Path, dealias: bool) -> Result<ReferenceOutcome> {
    create_dir(dir)?;
    let spec = problem.spec();
    match problem {
        Problem::AllenCahn1d1t => {
            let [nx, nt] = resolution else {
                return Err(Error::invalid("Allen-Cahn reference resolution is [nx, nt]"));
            };
            let opts = AcOptions {
                dealias,
                ..AcOptions::new(*nx, *nt)
            };
            let path = dir.join(format!("{}_ref_{nx}x{nt}.field", problem.name()));
            let (_, reused) = ac_reference_cached(opts, Some(&path))?;
            Ok(ReferenceOutcome { path, reused })
        }
        Problem::Cavity2d => Err(Error::Unsupported(
            "no cavity reference solver is included; supply centerline profiles instead".into(),
        )),
        _ => {
            let grid = eval_grid(&spec, resolution)?;
            let r = analytic_reference(&spec, &grid)?;
            let path = dir.join(format!("{}_ref_{}.field", problem.name(), shape_tag(resolution)));
            let fw = FieldWriter {
                dir: dir.to_path_buf(),
                grid: &grid,
                problem: spec.name(),
            };
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            fw.write(&stem, &r.fields[0])?;
            Ok(ReferenceOutcome { path, reused: false })
        }
    }
}

#[cfg(test)]
mod tests;
