//! Dense baseline: a single KAN taking all `d` coordinates at once.
//!
//! Every grid point is a separate network evaluation. Derivative fields need
//! one forward-mode pass per differentiated axis, so a request touching `k`
//! distinct axes plus the plain value costs `(1 + k) * prod n_i` evaluations.

use crate::bspline::SplineSpec;
use crate::error::{Error, Result};
use crate::kanet::{Jet, KanNetwork, NamedNetwork, Tape};
use crate::model::{Deriv, EvalCounter, FieldKey, FieldSet, PinnModel};
use crate::tensorgrid::{tensor_points, AxisMap, FactorGrid, RngState};

#[derive(Debug, Clone)]
pub struct DenseModel {
    net: KanNetwork,
    n_fields: usize,
    axis_maps: Vec<AxisMap>,
    axis_names: Vec<String>,
    counter: EvalCounter,
}

/// One recorded pass over the grid; `dir` is `None` for the value pass.
#[derive(Debug, Clone)]
struct Pass {
    dir: Option<usize>,
    tape: Tape,
}

#[derive(Debug, Clone)]
pub struct DenseTape {
    n_points: usize,
    passes: Vec<Pass>,
}

impl DenseModel {
    /// `widths` is `[d, hidden..., m]`.
    pub fn new(
        widths: &[usize],
        spec: &SplineSpec,
        bounds: &[(f64, f64)],
        axis_names: &[String],
        rng: &mut RngState,
    ) -> Result<Self> {
        let net = KanNetwork::random(widths, spec, rng)?;
        Self::from_net(net, bounds, axis_names)
    }

    pub fn from_net(net: KanNetwork, bounds: &[(f64, f64)], axis_names: &[String]) -> Result<Self> {
        if net.n_in() != bounds.len() || axis_names.len() != bounds.len() {
            return Err(Error::invalid(format!(
                "network takes {} inputs but {} axes were given",
                net.n_in(),
                bounds.len()
            )));
        }
        let axis_maps = bounds
            .iter()
            .map(|&(lo, hi)| AxisMap::from_bounds(lo, hi))
            .collect::<Result<_>>()?;
        Ok(Self {
            n_fields: net.n_out(),
            net,
            axis_maps,
            axis_names: axis_names.to_vec(),
            counter: EvalCounter::default(),
        })
    }

    pub fn net(&self) -> &KanNetwork {
        &self.net
    }

    pub fn axis_maps(&self) -> &[AxisMap] {
        &self.axis_maps
    }

    pub fn axis_names(&self) -> &[String] {
        &self.axis_names
    }

    fn reference_point(&self, pt: &[f64], out: &mut Vec<f64>) -> Result<()> {
        for (map, &x) in self.axis_maps.iter().zip(pt) {
            let xi = map.to_reference(x);
            if xi.is_nan() || xi.abs() > 1.0 + 1e-9 {
                return Err(Error::Domain {
                    value: x,
                    lo: map.to_physical(-1.0),
                    hi: map.to_physical(1.0),
                });
            }
            out.push(xi.clamp(-1.0, 1.0));
        }
        Ok(())
    }

    fn reference_inputs(&self, pts: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut xs = Vec::with_capacity(pts.len() * self.dim());
        for pt in pts {
            if pt.len() != self.dim() {
                return Err(Error::invalid(format!(
                    "point has {} coordinates, expected {}",
                    pt.len(),
                    self.dim()
                )));
            }
            self.reference_point(pt, &mut xs)?;
        }
        Ok(xs)
    }

    pub fn to_checkpoint(&self) -> Vec<NamedNetwork> {
        vec![NamedNetwork {
            name: "dense".into(),
            net: self.net.clone(),
        }]
    }

    pub fn load_checkpoint(&mut self, nets: &[NamedNetwork]) -> Result<()> {
        let found = nets
            .iter()
            .find(|n| n.name == "dense")
            .ok_or_else(|| Error::invalid("checkpoint has no `dense` network"))?;
        if found.net.widths() != self.net.widths() || found.net.spec() != self.net.spec() {
            return Err(Error::invalid("checkpoint network has a different shape"));
        }
        self.net = found.net.clone();
        Ok(())
    }
}

/// Passes needed for a set of keys: the value pass first, then one per axis
/// in increasing order.
fn plan_passes(keys: &[FieldKey]) -> Vec<Option<usize>> {
    let mut dirs: Vec<usize> = keys.iter().filter_map(|k| k.deriv.axis()).collect();
    dirs.sort_unstable();
    dirs.dedup();
    let mut passes = Vec::with_capacity(dirs.len() + 1);
    if keys.iter().any(|k| k.deriv == Deriv::Value) {
        passes.push(None);
    }
    passes.extend(dirs.into_iter().map(Some));
    passes
}

impl PinnModel for DenseModel {
    type Tape = DenseTape;

    fn dim(&self) -> usize {
        self.axis_maps.len()
    }

    fn n_fields(&self) -> usize {
        self.n_fields
    }

    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)
    }

    fn eval_fields(&self, grid: &FactorGrid, keys: &[FieldKey]) -> Result<(FieldSet, DenseTape)> {
        if grid.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "grid has {} axes, model has {}",
                grid.dim(),
                self.dim()
            )));
        }
        if let Some(k) = keys.iter().find(|k| k.channel >= self.n_fields) {
            return Err(Error::invalid(format!("channel {} out of range", k.channel)));
        }
        let xs = self.reference_inputs(&tensor_points(grid))?;
        let n = grid.num_points();
        let m = self.n_fields;
        let mut fs = FieldSet::zeros(&grid.shape(), &[]);
        let mut passes = Vec::new();
        for dir in plan_passes(keys) {
            let (out, tape) = self.net.record(&xs, n, dir)?;
            self.counter.add(n as u64);
            for &key in keys {
                let values: Option<Vec<f64>> = match (key.deriv, dir) {
                    (Deriv::Value, None) => Some((0..n).map(|p| out[p * m + key.channel].v).collect()),
                    (Deriv::D1(a), Some(b)) if a == b => {
                        let f = self.axis_maps[a].deriv_factor(1);
                        Some((0..n).map(|p| out[p * m + key.channel].d1 * f).collect())
                    }
                    (Deriv::D2(a), Some(b)) if a == b => {
                        let f = self.axis_maps[a].deriv_factor(2);
                        Some((0..n).map(|p| out[p * m + key.channel].d2 * f).collect())
                    }
                    _ => None,
                };
                if let Some(v) = values {
                    fs.set(key, v);
                }
            }
            passes.push(Pass { dir, tape });
        }
        Ok((fs, DenseTape { n_points: n, passes }))
    }

    fn backward_fields(&self, tape: &DenseTape, cot: &FieldSet, grad: &mut [f64]) -> Result<()> {
        let n = tape.n_points;
        if cot.num_points() != n {
            return Err(Error::invalid("cotangent does not match recorded grid"));
        }
        let m = self.n_fields;
        for pass in &tape.passes {
            let mut ups = vec![Jet::ZERO; n * m];
            let mut any = false;
            for (key, values) in cot.iter() {
                match (key.deriv, pass.dir) {
                    (Deriv::Value, None) => {
                        for p in 0..n {
                            ups[p * m + key.channel].v += values[p];
                        }
                    }
                    (Deriv::D1(a), Some(b)) if a == b => {
                        let f = self.axis_maps[a].deriv_factor(1);
                        for p in 0..n {
                            ups[p * m + key.channel].d1 += values[p] * f;
                        }
                    }
                    (Deriv::D2(a), Some(b)) if a == b => {
                        let f = self.axis_maps[a].deriv_factor(2);
                        for p in 0..n {
                            ups[p * m + key.channel].d2 += values[p] * f;
                        }
                    }
                    _ => continue,
                }
                any = true;
            }
            if any {
                self.net.accumulate_grad(&pass.tape, &ups, grad)?;
            }
        }
        for (key, _) in cot.iter() {
            let covered = tape.passes.iter().any(|p| match key.deriv {
                Deriv::Value => p.dir.is_none(),
                d => p.dir == d.axis(),
            });
            if !covered {
                return Err(Error::Unsupported(format!("field {key:?} was not recorded")));
            }
        }
        Ok(())
    }

    fn eval_points(&self, pts: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let xs = self.reference_inputs(pts)?;
        let d = self.dim();
        let out = xs.chunks(d).map(|x| self.net.forward(x)).collect::<Result<Vec<_>>>()?;
        self.counter.add(pts.len() as u64);
        Ok(out)
    }

    fn counter(&self) -> &EvalCounter {
        &self.counter
    }
}
