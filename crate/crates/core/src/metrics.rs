//! Error fields, timing ratios and the per-run report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::tensorgrid::{DenseField, FactorGrid, Grid1D};

pub use crate::reference::relative_l2;

fn same_shape(a: &DenseField, b: &DenseField) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Pointwise `|pred - reference|`.
pub fn error_field(pred: &DenseField, reference: &DenseField) -> Result<DenseField> {
    same_shape(pred, reference)?;
    let v = pred
        .values()
        .iter()
        .zip(reference.values())
        .map(|(p, r)| (p - r).abs())
        .collect();
    DenseField::new(pred.shape().to_vec(), v)
}

/// Absolute error averaged along `time_axis`, leaving a field over space.
pub fn time_mean_abs_error(pred: &DenseField, reference: &DenseField, time_axis: usize) -> Result<DenseField> {
    let err = error_field(pred, reference)?;
    if time_axis >= err.shape().len() {
        return Err(Error::invalid(format!(
            "time axis {time_axis} out of range for {:?}",
            err.shape()
        )));
    }
    let nt = err.shape()[time_axis];
    let mut acc = err.slice_axis(time_axis, 0)?;
    for t in 1..nt {
        let s = err.slice_axis(time_axis, t)?;
        for (a, v) in acc.values_mut().iter_mut().zip(s.values()) {
            *a += v;
        }
    }
    Ok(acc.map(|v| v / nt as f64))
}

/// Relative L2 error of every time slice.
pub fn l2_over_time(pred: &DenseField, reference: &DenseField, time_axis: usize) -> Result<Vec<f64>> {
    same_shape(pred, reference)?;
    if time_axis >= pred.shape().len() {
        return Err(Error::invalid(format!(
            "time axis {time_axis} out of range for {:?}",
            pred.shape()
        )));
    }
    (0..pred.shape()[time_axis])
        .map(|t| relative_l2(&pred.slice_axis(time_axis, t)?, &reference.slice_axis(time_axis, t)?))
        .collect()
}

/// How many times faster the candidate is than the baseline.
pub fn speedup(baseline_ms: f64, candidate_ms: f64) -> Result<f64> {
    if !(baseline_ms.is_finite() && baseline_ms > 0.0 && candidate_ms.is_finite() && candidate_ms > 0.0) {
        return Err(Error::invalid(format!(
            "timings must be finite and positive, got {baseline_ms} and {candidate_ms}"
        )));
    }
    Ok(baseline_ms / candidate_ms)
}

/// Cell midpoints of every axis: points that no collocation node touches.
pub fn midpoint_grid(grid: &FactorGrid) -> Result<FactorGrid> {
    let axes = grid
        .axes()
        .iter()
        .map(|a| {
            let p = a.points();
            Grid1D::new(p.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect(), a.lo(), a.hi())
        })
        .collect::<Result<Vec<_>>>()?;
    FactorGrid::new(axes, grid.axis_names().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub count: usize,
    pub rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<usize>,
    /// `count - reference`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub difference: Option<i64>,
}

impl ParamCount {
    pub fn new(count: usize, reference: Option<usize>) -> Self {
        Self {
            count,
            rule: "per layer n_out*n_in*(g+k+1): g+k spline coefficients and one base weight per edge".into(),
            reference,
            difference: reference.map(|r| count as i64 - r as i64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub ms_mean: f64,
    pub ms_std: f64,
    pub iterations: usize,
    /// Leading iterations left out of the statistics.
    pub warmup: usize,
}

/// Network evaluations (one per point per input-direction pass for dense
/// models, one per 1-D point per axis for separable ones).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evals {
    pub interior_per_iter: u64,
    pub ic_per_iter: u64,
    pub bc_per_iter: u64,
    pub total: u64,
}

impl Evals {
    pub fn per_iter(&self) -> u64 {
        self.interior_per_iter + self.ic_per_iter + self.bc_per_iter
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalLoss {
    pub l_pde: f64,
    pub l_ic: f64,
    pub l_bc: f64,
    pub total: f64,
    pub bc_faces: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub baseline: String,
    pub wall_clock: f64,
    pub eval_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub problem: String,
    pub method: String,
    pub threads: usize,
    pub eval_shape: Vec<usize>,
    pub reference: String,
    pub config: TrainConfig,
    pub params: ParamCount,
    pub timing: Timing,
    pub evals: Evals,
    pub loss: FinalLoss,
    /// Relative L2 per output field.
    pub l2: BTreeMap<String, f64>,
    /// Problem-specific extras such as residual RMS values.
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<Speedup>,
}

pub fn version_stamp() -> String {
    format!("spikan {}", env!("CARGO_PKG_VERSION"))
}

impl RunReport {
    fn numbers(&self) -> Vec<(String, f64)> {
        let mut v = vec![
            ("timing.ms_mean".to_string(), self.timing.ms_mean),
            ("timing.ms_std".to_string(), self.timing.ms_std),
            ("loss.l_pde".to_string(), self.loss.l_pde),
            ("loss.l_ic".to_string(), self.loss.l_ic),
            ("loss.l_bc".to_string(), self.loss.l_bc),
            ("loss.total".to_string(), self.loss.total),
        ];
        v.extend(
            self.loss
                .bc_faces
                .iter()
                .map(|(k, x)| (format!("loss.bc_faces.{k}"), *x)),
        );
        v.extend(self.l2.iter().map(|(k, x)| (format!("l2.{k}"), *x)));
        v.extend(self.diagnostics.iter().map(|(k, x)| (format!("diagnostics.{k}"), *x)));
        if let Some(s) = &self.speedup {
            v.push(("speedup.wall_clock".into(), s.wall_clock));
            v.push(("speedup.eval_ratio".into(), s.eval_ratio));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let bad: Vec<String> = self
            .numbers()
            .into_iter()
            .filter(|(_, x)| !x.is_finite())
            .map(|(k, x)| format!("{k}: not finite ({x})"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        self.validate()?;
        toml::to_string(self).map_err(|e| Error::invalid(format!("report serialization: {e}")))
    }

    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(source, 0, e.message().to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }
}
