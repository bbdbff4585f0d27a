//! Run configuration: flat TOML, validated as a whole so a bad file reports
//! every violated field at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{InteriorGrid, Problem, ProblemSpec, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Separable,
    Dense,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Separable => "separable",
            Method::Dense => "dense",
        }
    }
}

/// Fully resolved configuration. Every default actually used is present, so
/// serializing it gives a complete echo of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub problem: String,
    pub method: Method,
    /// Full layer widths; separable nets map 1 -> `r * fields`, dense nets
    /// map `dim -> fields`.
    pub widths: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    pub k: usize,
    pub g: usize,
    /// Closed-grid points per axis.
    pub n_cp: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    pub seed: u64,
    pub lambda_pde: f64,
    pub lambda_ic: f64,
    pub lambda_bc: f64,
    pub interior: String,
    pub threads: usize,
    pub out_dir: PathBuf,
    pub checkpoint_every: usize,
    /// Points per axis of the evaluation grid.
    pub eval_n: Vec<usize>,
    /// Run directory whose timings and counters serve as the baseline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PathBuf>,
    /// Parameter count published for this architecture, if any, so the
    /// report can show the difference from the counting rule used here.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_params: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_nx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_nt: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_dealias: Option<bool>,
    /// Centerline profile CSV to compare a cavity run against.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external_profiles: Option<PathBuf>,
}

/// What the file may contain; everything optional so that missing and
/// malformed fields can be reported together.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: Option<String>,
    method: Option<String>,
    widths: Option<Vec<i64>>,
    r: Option<i64>,
    k: Option<i64>,
    g: Option<i64>,
    n_cp: Option<Vec<i64>>,
    epochs: Option<i64>,
    lr: Option<f64>,
    clip: Option<f64>,
    seed: Option<i64>,
    lambda_pde: Option<f64>,
    lambda_ic: Option<f64>,
    lambda_bc: Option<f64>,
    interior: Option<String>,
    threads: Option<i64>,
    out_dir: Option<PathBuf>,
    checkpoint_every: Option<i64>,
    eval_n: Option<Vec<i64>>,
    baseline: Option<PathBuf>,
    reference_params: Option<i64>,
    ref_nx: Option<i64>,
    ref_nt: Option<i64>,
    ref_dealias: Option<bool>,
    external_profiles: Option<PathBuf>,
}

pub const DEFAULT_G: usize = 3;
pub const DEFAULT_REF_NX: usize = 320;
pub const DEFAULT_REF_NT: usize = 1000;

fn default_eval_n(problem: Problem, ref_nx: usize) -> Vec<usize> {
    match problem {
        Problem::Helmholtz2d => vec![200, 200],
        Problem::Cavity2d => vec![101, 101],
        // x on the reference nodes (plus the right end), t every 0.01
        Problem::AllenCahn1d1t => vec![ref_nx + 1, 101],
        Problem::KleinGordon2d1t => vec![40, 40, 40],
    }
}

struct Checker {
    errors: Vec<String>,
}

impl Checker {
    fn fail(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    fn count(&mut self, name: &str, v: Option<i64>, min: i64) -> Option<usize> {
        match v {
            Some(x) if x >= min => Some(x as usize),
            Some(x) => {
                self.fail(format!("{name}: must be at least {min}, got {x}"));
                None
            }
            None => None,
        }
    }

    fn required<T>(&mut self, name: &str, v: Option<T>) -> Option<T> {
        if v.is_none() {
            self.fail(format!("{name}: required"));
        }
        v
    }

    fn list(&mut self, name: &str, v: &[i64], min: i64) -> Option<Vec<usize>> {
        if let Some(bad) = v.iter().find(|&&x| x < min) {
            self.fail(format!("{name}: entries must be at least {min}, got {bad}"));
            return None;
        }
        Some(v.iter().map(|&x| x as usize).collect())
    }

    fn nonneg(&mut self, name: &str, v: f64) -> f64 {
        if !(v.is_finite() && v >= 0.0) {
            self.fail(format!("{name}: must be finite and >= 0, got {v}"));
        }
        v
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(source, line, e.message().to_string())
        })?;
        Self::resolve(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are all representable in TOML")
    }

    fn resolve(raw: RawConfig) -> Result<Self> {
        let mut c = Checker { errors: Vec::new() };
        let problem = c
            .required("problem", raw.problem.clone())
            .and_then(|p| match Problem::from_name(&p) {
                Ok(p) => Some(p),
                Err(e) => {
                    c.fail(format!(
                        "problem: {}",
                        e.to_string().trim_start_matches("invalid argument: ")
                    ));
                    None
                }
            });
        let method = c.required("method", raw.method.clone()).and_then(|m| match m.as_str() {
            "separable" => Some(Method::Separable),
            "dense" => Some(Method::Dense),
            _ => {
                c.fail(format!("method: must be \"separable\" or \"dense\", got {m:?}"));
                None
            }
        });
        let spec = problem.map(|p| p.spec());
        let widths = c.required("widths", raw.widths.clone()).and_then(|w| {
            if w.len() < 2 {
                c.fail(format!("widths: need at least input and output widths, got {w:?}"));
                return None;
            }
            c.list("widths", &w, 1)
        });
        let r = c.count("r", raw.r, 1);
        let k = c.required("k", raw.k).and_then(|k| c.count("k", Some(k), 1));
        let g = c.count("g", raw.g, 1).unwrap_or(DEFAULT_G);
        let n_cp = c.required("n_cp", raw.n_cp.clone()).and_then(|n| c.list("n_cp", &n, 3));
        let epochs = c
            .required("epochs", raw.epochs)
            .and_then(|e| c.count("epochs", Some(e), 1));
        let lr = raw.lr.unwrap_or(1e-3);
        if !(lr.is_finite() && lr > 0.0) {
            c.fail(format!("lr: must be finite and > 0, got {lr}"));
        }
        if let Some(clip) = raw.clip {
            if !(clip.is_finite() && clip > 0.0) {
                c.fail(format!("clip: must be finite and > 0, got {clip}"));
            }
        }
        let seed = match raw.seed {
            Some(s) if s < 0 => {
                c.fail(format!("seed: must be >= 0, got {s}"));
                0
            }
            Some(s) => s as u64,
            None => 0,
        };
        let lambda_pde = c.nonneg("lambda_pde", raw.lambda_pde.unwrap_or(1.0));
        let lambda_ic = c.nonneg("lambda_ic", raw.lambda_ic.unwrap_or(1.0));
        let lambda_bc = c.nonneg("lambda_bc", raw.lambda_bc.unwrap_or(1.0));
        if lambda_pde + lambda_ic + lambda_bc == 0.0 {
            c.fail("lambda_*: at least one loss weight must be positive");
        }
        let interior = raw
            .interior
            .clone()
            .unwrap_or_else(|| InteriorGrid::default().name().into());
        if InteriorGrid::from_name(&interior).is_err() {
            c.fail(format!("interior: must be \"open\" or \"closed\", got {interior:?}"));
        }
        let threads = c.count("threads", raw.threads, 1).unwrap_or(1);
        if threads != 1 {
            c.fail(format!(
                "threads: only single-threaded runs are supported, got {threads}"
            ));
        }
        let checkpoint_every = c.count("checkpoint_every", raw.checkpoint_every, 1).unwrap_or(1000);
        let reference_params = c.count("reference_params", raw.reference_params, 1);

        let is_ac = problem == Some(Problem::AllenCahn1d1t);
        let (mut ref_nx, mut ref_nt, mut ref_dealias) = (None, None, None);
        if is_ac {
            let nx = c.count("ref_nx", raw.ref_nx, 64).unwrap_or(DEFAULT_REF_NX);
            if !nx.is_multiple_of(2) {
                c.fail(format!("ref_nx: must be even, got {nx}"));
            }
            ref_nx = Some(nx);
            ref_nt = Some(c.count("ref_nt", raw.ref_nt, 100).unwrap_or(DEFAULT_REF_NT));
            ref_dealias = Some(raw.ref_dealias.unwrap_or(false));
        } else if problem.is_some() {
            for (name, set) in [
                ("ref_nx", raw.ref_nx.is_some()),
                ("ref_nt", raw.ref_nt.is_some()),
                ("ref_dealias", raw.ref_dealias.is_some()),
            ] {
                if set {
                    c.fail(format!("{name}: only applies to {}", Problem::AllenCahn1d1t.name()));
                }
            }
        }
        if raw.external_profiles.is_some() && problem.is_some() && problem != Some(Problem::Cavity2d) {
            c.fail(format!(
                "external_profiles: only applies to {}",
                Problem::Cavity2d.name()
            ));
        }

        if let Some(spec) = &spec {
            check_shapes(&mut c, spec, method, widths.as_deref(), r, n_cp.as_deref());
        }
        let eval_n = match (&raw.eval_n, problem) {
            (Some(e), _) => c.list("eval_n", e, 2),
            (None, Some(p)) => Some(default_eval_n(p, ref_nx.unwrap_or(DEFAULT_REF_NX))),
            (None, None) => None,
        };
        if let (Some(e), Some(spec)) = (&eval_n, &spec) {
            if e.len() != spec.dim() {
                c.fail(format!(
                    "eval_n: {} needs {} entries, got {}",
                    spec.name(),
                    spec.dim(),
                    e.len()
                ));
            }
        }

        if !c.errors.is_empty() {
            return Err(Error::Validation(c.errors));
        }
        let problem = problem.unwrap();
        let out_dir = raw.out_dir.unwrap_or_else(|| {
            PathBuf::from("runs").join(format!("{}-{}-seed{seed}", problem.name(), method.unwrap().name()))
        });
        Ok(Self {
            problem: problem.name().into(),
            method: method.unwrap(),
            widths: widths.unwrap(),
            r,
            k: k.unwrap(),
            g,
            n_cp: n_cp.unwrap(),
            epochs: epochs.unwrap(),
            lr,
            clip: raw.clip,
            seed,
            lambda_pde,
            lambda_ic,
            lambda_bc,
            interior,
            threads,
            out_dir,
            checkpoint_every,
            eval_n: eval_n.unwrap(),
            baseline: raw.baseline,
            reference_params,
            ref_nx,
            ref_nt,
            ref_dealias,
            external_profiles: raw.external_profiles,
        })
    }

    pub fn problem(&self) -> Problem {
        Problem::from_name(&self.problem).expect("validated on load")
    }

    pub fn spec(&self) -> ProblemSpec {
        self.problem().spec()
    }

    pub fn interior_grid(&self) -> InteriorGrid {
        InteriorGrid::from_name(&self.interior).expect("validated on load")
    }

    pub fn weights(&self) -> Weights {
        Weights {
            pde: self.lambda_pde,
            ic: self.lambda_ic,
            bc: self.lambda_bc,
        }
    }
}

fn check_shapes(
    c: &mut Checker,
    spec: &ProblemSpec,
    method: Option<Method>,
    widths: Option<&[usize]>,
    r: Option<usize>,
    n_cp: Option<&[usize]>,
) {
    let (d, m) = (spec.dim(), spec.n_fields());
    if let Some(n) = n_cp {
        if n.len() != d {
            c.fail(format!("n_cp: {} needs {d} entries, got {}", spec.name(), n.len()));
        }
    }
    match method {
        Some(Method::Separable) => {
            if r.is_none() {
                c.fail("r: required for the separable method");
            }
            if let Some(w) = widths {
                if w[0] != 1 {
                    c.fail(format!(
                        "widths: separable networks take one input, got widths[0] = {}",
                        w[0]
                    ));
                }
                if let Some(r) = r {
                    let last = *w.last().unwrap();
                    if last != r * m {
                        c.fail(format!(
                            "widths: last width must be r * fields = {r} * {m} = {}, got {last}",
                            r * m
                        ));
                    }
                }
            }
        }
        Some(Method::Dense) => {
            if r.is_some() {
                c.fail("r: only applies to the separable method");
            }
            if let Some(w) = widths {
                if w[0] != d {
                    c.fail(format!(
                        "widths: dense networks take {d} inputs, got widths[0] = {}",
                        w[0]
                    ));
                }
                let last = *w.last().unwrap();
                if last != m {
                    c.fail(format!("widths: dense networks output {m} fields, got {last}"));
                }
            }
        }
        None => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HELMHOLTZ: &str = r#"
problem = "helmholtz2d"
method = "separable"
widths = [1, 3, 3, 5]
r = 5
k = 3
n_cp = [100, 100]
epochs = 20000
"#;

    #[test]
    fn defaults_are_filled_and_echoed() {
        let c = TrainConfig::from_toml(HELMHOLTZ, "t").unwrap();
        assert_eq!(c.g, 3);
        assert_eq!(c.lr, 1e-3);
        assert_eq!((c.lambda_pde, c.lambda_ic, c.lambda_bc), (1.0, 1.0, 1.0));
        assert_eq!(c.eval_n, vec![200, 200]);
        assert_eq!(c.interior, "open");
        assert_eq!(c.ref_nx, None);
        let echo = c.to_toml();
        for key in [
            "g = 3",
            "lr = 0.001",
            "threads = 1",
            "interior = \"open\"",
            "checkpoint_every = 1000",
            "seed = 0",
        ] {
            assert!(echo.contains(key), "{key} missing from\n{echo}");
        }
        assert_eq!(TrainConfig::from_toml(&echo, "echo").unwrap(), c);
    }

    #[test]
    fn every_violation_is_listed() {
        let text = r#"
problem = "helmholtz2d"
method = "separable"
widths = [2, 3, 3, 4]
r = 5
k = 0
n_cp = [100]
epochs = 0
lr = -1.0
threads = 4
ref_nx = 320
"#;
        let Err(Error::Validation(errs)) = TrainConfig::from_toml(text, "t") else {
            panic!("expected validation error");
        };
        for field in [
            "widths: separable",
            "widths: last",
            "k:",
            "n_cp:",
            "epochs:",
            "lr:",
            "threads:",
            "ref_nx:",
        ] {
            assert!(errs.iter().any(|e| e.starts_with(field)), "{field} not in {errs:#?}");
        }
    }

    #[test]
    fn unknown_problem_lists_valid_names() {
        let text = HELMHOLTZ.replace("helmholtz2d", "poisson");
        let Err(Error::Validation(errs)) = TrainConfig::from_toml(&text, "t") else {
            panic!("expected validation error");
        };
        assert!(
            errs[0].contains("poisson") && errs[0].contains("kleingordon2d1t"),
            "{errs:?}"
        );
    }

    #[test]
    fn missing_fields_are_reported() {
        let Err(Error::Validation(errs)) = TrainConfig::from_toml("", "t") else {
            panic!("expected validation error");
        };
        for f in ["problem", "method", "widths", "k", "n_cp", "epochs"] {
            assert!(errs.contains(&format!("{f}: required")), "{f}");
        }
    }

    #[test]
    fn dense_shapes() {
        let text = r#"
problem = "cavity2d"
method = "dense"
widths = [2, 9, 9, 3]
k = 3
n_cp = [50, 50]
epochs = 10
"#;
        let c = TrainConfig::from_toml(text, "t").unwrap();
        assert_eq!(c.r, None);
        let bad = text.replace("[2, 9, 9, 3]", "[2, 9, 9, 1]") + "r = 2\n";
        let Err(Error::Validation(errs)) = TrainConfig::from_toml(&bad, "t") else {
            panic!()
        };
        assert_eq!(errs.len(), 2, "{errs:?}");
    }

    #[test]
    fn allen_cahn_reference_defaults() {
        let text = r#"
problem = "allencahn1d1t"
method = "separable"
widths = [1, 5, 5, 10]
r = 10
k = 5
n_cp = [64, 32]
epochs = 10
"#;
        let c = TrainConfig::from_toml(text, "t").unwrap();
        assert_eq!(
            (c.ref_nx, c.ref_nt, c.ref_dealias),
            (Some(320), Some(1000), Some(false))
        );
        assert_eq!(c.eval_n, vec![321, 101]);
    }

    #[test]
    fn syntax_and_unknown_keys_are_parse_errors() {
        assert!(matches!(
            TrainConfig::from_toml("problem = \n", "t"),
            Err(Error::Parse { line: 1, .. })
        ));
        let text = format!("{HELMHOLTZ}colour = 1\n");
        assert!(matches!(TrainConfig::from_toml(&text, "t"), Err(Error::Parse { .. })));
    }
}
