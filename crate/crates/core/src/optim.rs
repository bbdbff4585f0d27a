//! Adam and the full-batch training loop.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::PinnModel;
use crate::physics::{total_loss, EvalCounts, LossBreakdown, PreparedProblem, Weights};

/// Iterations dropped from timing statistics.
pub const WARMUP_ITERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient to at most this Euclidean norm.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            cfg,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam: {} parameters, {} gradient entries, {} moment entries",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            epoch: state.step as usize,
            term: "gradient".into(),
        });
    }
    let c = state.cfg;
    let scale = match c.clip {
        Some(max) => {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i] * scale;
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        let mh = state.m[i] / bc1;
        let vh = state.v[i] / bc2;
        params[i] -= c.lr * mh / (vh.sqrt() + c.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub weights: Weights,
    pub adam: AdamConfig,
    /// Call the checkpoint hook every this many epochs (and after the last).
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 1000,
            weights: Weights::default(),
            adam: AdamConfig::default(),
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub l_pde: f64,
    pub l_ic: f64,
    pub l_bc: f64,
    pub total: f64,
    pub ms: f64,
}

/// Loss history (evaluated before each update) and per-iteration wall time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub warmup: usize,
    /// Evaluations per iteration, split by loss term.
    pub evals: EvalCounts,
    /// Breakdown at the parameters returned by training.
    pub final_loss: Option<LossBreakdown>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean and sample standard deviation of ms/iter, skipping warmup
    /// iterations when there are enough of them to spare.
    pub fn ms_stats(&self) -> (f64, f64) {
        let skip = if self.rows.len() > self.warmup { self.warmup } else { 0 };
        let xs: Vec<f64> = self.rows[skip..].iter().map(|r| r.ms).collect();
        mean_std(&xs)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_pde,l_ic,l_bc,total,ms\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?}",
                r.epoch, r.l_pde, r.l_ic, r.l_bc, r.total, r.ms
            );
        }
        out
    }

    /// Parses the rows written by [`TrainTrace::to_csv`]. Counters and the
    /// final breakdown are not part of the CSV.
    pub fn rows_from_csv(text: &str, source: &str) -> Result<Vec<TraceRow>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "epoch,l_pde,l_ic,l_bc,total,ms" => {}
            _ => return Err(Error::parse(source, 1, "missing trace header")),
        }
        let mut rows = Vec::new();
        for (no, line) in lines {
            let bad = || Error::parse(source, no + 1, "malformed trace row");
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(bad());
            }
            let num = |i: usize| cols[i].parse::<f64>().map_err(|_| bad());
            rows.push(TraceRow {
                epoch: cols[0].parse().map_err(|_| bad())?,
                l_pde: num(1)?,
                l_ic: num(2)?,
                l_bc: num(3)?,
                total: num(4)?,
                ms: num(5)?,
            });
        }
        Ok(rows)
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Full-batch Adam on the weighted physics loss. `checkpoint` receives the
/// number of completed epochs and the current model.
pub fn train<M: PinnModel>(
    model: &mut M,
    prep: &PreparedProblem,
    opts: &TrainOptions,
    mut checkpoint: impl FnMut(usize, &M) -> Result<()>,
) -> Result<TrainTrace> {
    if opts.epochs == 0 {
        return Err(Error::invalid("epochs must be at least 1"));
    }
    let mut params = model.params();
    let mut state = AdamState::new(params.len(), opts.adam);
    let mut rows = Vec::with_capacity(opts.epochs);
    let mut evals = EvalCounts::default();
    for epoch in 0..opts.epochs {
        let start = Instant::now();
        let (lb, grad) = total_loss(model, prep, opts.weights)?;
        if let Some(term) = lb.non_finite_term() {
            return Err(Error::NonFinite {
                epoch,
                term: term.into(),
            });
        }
        adam_step(&mut params, &grad, &mut state).map_err(|e| match e {
            Error::NonFinite { term, .. } => Error::NonFinite { epoch, term },
            e => e,
        })?;
        model.set_params(&params)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        evals = lb.evals;
        rows.push(TraceRow {
            epoch,
            l_pde: lb.l_pde,
            l_ic: lb.l_ic,
            l_bc: lb.l_bc,
            total: lb.total,
            ms,
        });
        let done = epoch + 1;
        if let Some(every) = opts.checkpoint_every {
            if every > 0 && done % every == 0 && done != opts.epochs {
                checkpoint(done, model)?;
            }
        }
    }
    checkpoint(opts.epochs, model)?;
    let (final_loss, _) = total_loss(model, prep, opts.weights)?;
    Ok(TrainTrace {
        rows,
        warmup: WARMUP_ITERS,
        evals,
        final_loss: Some(final_loss),
    })
}
