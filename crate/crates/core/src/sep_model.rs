//! Separable model: one univariate KAN per input axis, combined as a rank-`r`
//! sum of products.
//!
//! Each axis network maps a coordinate to `r * m` outputs, read as an `(r, m)`
//! matrix (`out[j * m + o]`). Output channel `o` is
//!
//! ```text
//! u_o(x_1, ..., x_d) = sum_j prod_i f_i[j, o](x_i)
//! ```
//!
//! Derivatives follow from the product rule: differentiating along axis `a`
//! only replaces the factor of that axis by its derivative. On an
//! `n_1 x ... x n_d` grid the networks therefore run `sum n_i` times, never
//! `prod n_i` times.

use crate::bspline::SplineSpec;
use crate::error::{Error, Result};
use crate::kanet::{Jet, KanNetwork, NamedNetwork, Tape};
use crate::model::{EvalCounter, FieldKey, FieldSet, PinnModel};
use crate::tensorgrid::{for_each_index, AxisMap, DenseField, FactorGrid, RngState};

#[derive(Debug, Clone)]
pub struct SeparableModel {
    nets: Vec<KanNetwork>,
    rank: usize,
    n_fields: usize,
    axis_maps: Vec<AxisMap>,
    axis_names: Vec<String>,
    counter: EvalCounter,
}

/// Factors of one axis, each `[n][r][m]` in physical-coordinate derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisFactors {
    pub n: usize,
    pub f: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl AxisFactors {
    fn zeros(n: usize, width: usize) -> Self {
        Self {
            n,
            f: vec![0.0; n * width],
            d1: vec![0.0; n * width],
            d2: vec![0.0; n * width],
        }
    }

    fn by_order(&self, order: u8) -> &[f64] {
        match order {
            0 => &self.f,
            1 => &self.d1,
            _ => &self.d2,
        }
    }

    fn by_order_mut(&mut self, order: u8) -> &mut [f64] {
        match order {
            0 => &mut self.f,
            1 => &mut self.d1,
            _ => &mut self.d2,
        }
    }
}

/// Per-axis factor matrices produced by [`SeparableModel::eval_axes`]. The
/// same shape also carries adjoints in the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisEval {
    pub rank: usize,
    pub n_fields: usize,
    pub axes: Vec<AxisFactors>,
}

impl AxisEval {
    pub fn zeros_like(&self) -> Self {
        Self {
            rank: self.rank,
            n_fields: self.n_fields,
            axes: self
                .axes
                .iter()
                .map(|a| AxisFactors::zeros(a.n, self.rank * self.n_fields))
                .collect(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n).collect()
    }

    fn check_orders(&self, orders: &[u8], channel: usize) -> Result<()> {
        if orders.len() != self.axes.len() {
            return Err(Error::invalid(format!(
                "{} derivative orders given for {} axes",
                orders.len(),
                self.axes.len()
            )));
        }
        if let Some(o) = orders.iter().find(|&&o| o > 2) {
            return Err(Error::Unsupported(format!("derivative order {o} (max 2)")));
        }
        if channel >= self.n_fields {
            return Err(Error::invalid(format!("channel {channel} out of range")));
        }
        Ok(())
    }

    /// `[n_i][r]` factor matrix of one axis for one channel.
    fn factor(&self, axis: usize, order: u8, channel: usize) -> Vec<f64> {
        let (r, m) = (self.rank, self.n_fields);
        let src = self.axes[axis].by_order(order);
        let mut out = Vec::with_capacity(self.axes[axis].n * r);
        for p in 0..self.axes[axis].n {
            for j in 0..r {
                out.push(src[p * r * m + j * m + channel]);
            }
        }
        out
    }

    /// `sum_j prod_i G_i[p_i, j]` with `G_i` the factor of order `orders[i]`.
    pub fn combine(&self, orders: &[u8], channel: usize) -> Result<DenseField> {
        self.check_orders(orders, channel)?;
        let d = self.axes.len();
        let r = self.rank;
        let g: Vec<Vec<f64>> = (0..d).map(|i| self.factor(i, orders[i], channel)).collect();
        let shape = self.shape();
        let n_last = shape[d - 1];
        let mut out = DenseField::zeros(shape.clone());
        let values = out.values_mut();
        let mut prefix = vec![0.0; r];
        let mut row = 0usize;
        for_each_index(&shape[..d - 1], |idx| {
            prefix.fill(1.0);
            for (i, &pi) in idx.iter().enumerate() {
                let gi = &g[i][pi * r..(pi + 1) * r];
                for j in 0..r {
                    prefix[j] *= gi[j];
                }
            }
            let dst = &mut values[row * n_last..(row + 1) * n_last];
            let g_last = &g[d - 1];
            for (s, v) in dst.iter_mut().enumerate() {
                let gl = &g_last[s * r..(s + 1) * r];
                let mut acc = 0.0;
                for j in 0..r {
                    acc += prefix[j] * gl[j];
                }
                *v = acc;
            }
            row += 1;
        });
        Ok(out)
    }

    /// All channels for one order combination.
    pub fn combine_fields(&self, orders: &[u8]) -> Result<Vec<DenseField>> {
        (0..self.n_fields).map(|c| self.combine(orders, c)).collect()
    }

    /// Adjoint of [`combine`](Self::combine): returns cotangents on every
    /// axis factor for the cotangent `cot` on the combined field.
    pub fn backward_combine(&self, orders: &[u8], channel: usize, cot: &DenseField) -> Result<AxisEval> {
        let mut adj = self.zeros_like();
        self.accumulate_backward_combine(orders, channel, cot, &mut adj)?;
        Ok(adj)
    }

    pub fn accumulate_backward_combine(
        &self,
        orders: &[u8],
        channel: usize,
        cot: &DenseField,
        adj: &mut AxisEval,
    ) -> Result<()> {
        self.check_orders(orders, channel)?;
        let shape = self.shape();
        if cot.shape() != shape.as_slice() {
            return Err(Error::invalid(format!(
                "cotangent shape {:?} does not match grid {:?}",
                cot.shape(),
                shape
            )));
        }
        if adj.shape() != shape || adj.rank != self.rank || adj.n_fields != self.n_fields {
            return Err(Error::invalid("adjoint buffer shape mismatch"));
        }
        let d = shape.len();
        let r = self.rank;
        let g: Vec<Vec<f64>> = (0..d).map(|i| self.factor(i, orders[i], channel)).collect();
        let mut gbar: Vec<Vec<f64>> = shape.iter().map(|&n| vec![0.0; n * r]).collect();
        let n_last = shape[d - 1];
        let c = cot.values();
        let mut prefix = vec![0.0; r];
        let mut t = vec![0.0; r];
        let mut row = 0usize;
        let (outer_bar, last_bar) = gbar.split_at_mut(d - 1);
        let last_bar = &mut last_bar[0];
        for_each_index(&shape[..d - 1], |idx| {
            prefix.fill(1.0);
            for (i, &pi) in idx.iter().enumerate() {
                let gi = &g[i][pi * r..(pi + 1) * r];
                for j in 0..r {
                    prefix[j] *= gi[j];
                }
            }
            t.fill(0.0);
            let crow = &c[row * n_last..(row + 1) * n_last];
            let g_last = &g[d - 1];
            for (s, &cv) in crow.iter().enumerate() {
                if cv == 0.0 {
                    continue;
                }
                let gl = &g_last[s * r..(s + 1) * r];
                let lb = &mut last_bar[s * r..(s + 1) * r];
                for j in 0..r {
                    lb[j] += cv * prefix[j];
                    t[j] += cv * gl[j];
                }
            }
            for (i, &pi) in idx.iter().enumerate() {
                for j in 0..r {
                    let mut others = t[j];
                    for (k, &pk) in idx.iter().enumerate() {
                        if k != i {
                            others *= g[k][pk * r + j];
                        }
                    }
                    outer_bar[i][pi * r + j] += others;
                }
            }
            row += 1;
        });
        let m = self.n_fields;
        for (i, gb) in gbar.iter().enumerate() {
            let dst = adj.axes[i].by_order_mut(orders[i]);
            for p in 0..shape[i] {
                for j in 0..r {
                    dst[p * r * m + j * m + channel] += gb[p * r + j];
                }
            }
        }
        Ok(())
    }
}

/// Recorded axis evaluations needed to pull factor cotangents back to the
/// network parameters.
#[derive(Debug, Clone)]
pub struct AxisTapes {
    tapes: Vec<Tape>,
    eval: AxisEval,
}

impl AxisTapes {
    pub fn eval(&self) -> &AxisEval {
        &self.eval
    }
}

impl SeparableModel {
    /// `widths` is the per-axis network shape `[1, hidden..., r * m]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        widths: &[usize],
        rank: usize,
        n_fields: usize,
        spec: &SplineSpec,
        bounds: &[(f64, f64)],
        axis_names: &[String],
        rng: &mut RngState,
    ) -> Result<Self> {
        Self::check_shape(widths, rank, n_fields, bounds.len())?;
        let nets = bounds
            .iter()
            .map(|_| KanNetwork::random(widths, spec, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_nets(nets, rank, n_fields, bounds, axis_names)
    }

    fn check_shape(widths: &[usize], rank: usize, n_fields: usize, d: usize) -> Result<()> {
        if d < 2 {
            return Err(Error::invalid("separable model needs at least two axes"));
        }
        if rank == 0 || n_fields == 0 {
            return Err(Error::invalid("rank and field count must be positive"));
        }
        if widths.first() != Some(&1) {
            return Err(Error::invalid("separable axis networks take exactly one input"));
        }
        if widths.last() != Some(&(rank * n_fields)) {
            return Err(Error::invalid(format!(
                "axis network output width must be r*m = {}",
                rank * n_fields
            )));
        }
        Ok(())
    }

    pub fn from_nets(
        nets: Vec<KanNetwork>,
        rank: usize,
        n_fields: usize,
        bounds: &[(f64, f64)],
        axis_names: &[String],
    ) -> Result<Self> {
        if nets.len() != bounds.len() || axis_names.len() != bounds.len() {
            return Err(Error::invalid("one network, bound and name per axis required"));
        }
        for net in &nets {
            Self::check_shape(net.widths(), rank, n_fields, bounds.len())?;
        }
        let axis_maps = bounds
            .iter()
            .map(|&(lo, hi)| AxisMap::from_bounds(lo, hi))
            .collect::<Result<_>>()?;
        Ok(Self {
            nets,
            rank,
            n_fields,
            axis_maps,
            axis_names: axis_names.to_vec(),
            counter: EvalCounter::default(),
        })
    }

    pub fn nets(&self) -> &[KanNetwork] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [KanNetwork] {
        &mut self.nets
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn axis_maps(&self) -> &[AxisMap] {
        &self.axis_maps
    }

    pub fn axis_names(&self) -> &[String] {
        &self.axis_names
    }

    /// Same function with `new_rank - r` extra latent channels whose output
    /// rows are zero.
    pub fn pad_rank(&self, new_rank: usize) -> Result<Self> {
        if new_rank < self.rank {
            return Err(Error::invalid("cannot shrink rank by padding"));
        }
        let extra = (new_rank - self.rank) * self.n_fields;
        let mut nets = Vec::with_capacity(self.nets.len());
        for net in &self.nets {
            let mut layers = net.layers().to_vec();
            let last = layers.pop().unwrap();
            let nb = last.spec().num_basis();
            let mut coeffs = last.coeffs().to_vec();
            coeffs.extend(std::iter::repeat_n(0.0, extra * last.n_in() * nb));
            let mut base = last.base().to_vec();
            base.extend(std::iter::repeat_n(0.0, extra * last.n_in()));
            layers.push(crate::kanet::KanLayer::from_parts(
                last.n_in(),
                last.n_out() + extra,
                last.spec().clone(),
                coeffs,
                base,
            )?);
            nets.push(KanNetwork::from_layers(layers)?);
        }
        let bounds: Vec<(f64, f64)> = self
            .axis_maps
            .iter()
            .map(|m| (m.to_physical(-1.0), m.to_physical(1.0)))
            .collect();
        Self::from_nets(nets, new_rank, self.n_fields, &bounds, &self.axis_names)
    }

    fn reference_coords(&self, axis: usize, points: &[f64]) -> Result<Vec<f64>> {
        let map = &self.axis_maps[axis];
        points
            .iter()
            .map(|&x| {
                let xi = map.to_reference(x);
                if xi.is_nan() || xi.abs() > 1.0 + 1e-9 {
                    Err(Error::Domain {
                        value: x,
                        lo: map.to_physical(-1.0),
                        hi: map.to_physical(1.0),
                    })
                } else {
                    Ok(xi.clamp(-1.0, 1.0))
                }
            })
            .collect()
    }

    fn check_grid(&self, grid: &FactorGrid) -> Result<()> {
        if grid.dim() != self.nets.len() {
            return Err(Error::invalid(format!(
                "grid has {} axes, model has {}",
                grid.dim(),
                self.nets.len()
            )));
        }
        Ok(())
    }

    /// Runs every axis network once per grid coordinate and records tapes.
    pub fn record_axes(&self, grid: &FactorGrid) -> Result<AxisTapes> {
        self.check_grid(grid)?;
        let width = self.rank * self.n_fields;
        let mut axes = Vec::with_capacity(grid.dim());
        let mut tapes = Vec::with_capacity(grid.dim());
        for (i, net) in self.nets.iter().enumerate() {
            let xs = self.reference_coords(i, grid.axis(i).points())?;
            let n = xs.len();
            let (out, tape) = net.record(&xs, n, Some(0))?;
            self.counter.add(n as u64);
            let (k1, k2) = (self.axis_maps[i].deriv_factor(1), self.axis_maps[i].deriv_factor(2));
            let mut fac = AxisFactors::zeros(n, width);
            for (q, jet) in out.iter().enumerate() {
                fac.f[q] = jet.v;
                fac.d1[q] = jet.d1 * k1;
                fac.d2[q] = jet.d2 * k2;
            }
            axes.push(fac);
            tapes.push(tape);
        }
        Ok(AxisTapes {
            tapes,
            eval: AxisEval {
                rank: self.rank,
                n_fields: self.n_fields,
                axes,
            },
        })
    }

    pub fn eval_axes(&self, grid: &FactorGrid) -> Result<AxisEval> {
        Ok(self.record_axes(grid)?.eval)
    }

    /// Pulls factor cotangents (`adj`, physical derivatives) back to the flat
    /// parameter gradient.
    pub fn backward_axes(&self, tapes: &AxisTapes, adj: &AxisEval, grad: &mut [f64]) -> Result<()> {
        if adj.shape() != tapes.eval.shape() {
            return Err(Error::invalid("adjoint does not match recorded axes"));
        }
        if grad.len() != self.num_params() {
            return Err(Error::invalid("gradient buffer has the wrong length"));
        }
        let mut off = 0;
        for (i, net) in self.nets.iter().enumerate() {
            let np = net.num_params();
            let (k1, k2) = (self.axis_maps[i].deriv_factor(1), self.axis_maps[i].deriv_factor(2));
            let a = &adj.axes[i];
            let ups: Vec<Jet> = (0..a.f.len())
                .map(|q| Jet::new(a.f[q], a.d1[q] * k1, a.d2[q] * k2))
                .collect();
            net.accumulate_grad(&tapes.tapes[i], &ups, &mut grad[off..off + np])?;
            off += np;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Vec<NamedNetwork> {
        self.nets
            .iter()
            .zip(&self.axis_names)
            .map(|(net, name)| NamedNetwork {
                name: name.clone(),
                net: net.clone(),
            })
            .collect()
    }

    /// Replaces the axis networks with checkpointed ones, matched by name.
    pub fn load_checkpoint(&mut self, nets: &[NamedNetwork]) -> Result<()> {
        for (i, name) in self.axis_names.clone().iter().enumerate() {
            let found = nets
                .iter()
                .find(|n| &n.name == name)
                .ok_or_else(|| Error::invalid(format!("checkpoint has no network for axis {name}")))?;
            if found.net.widths() != self.nets[i].widths() || found.net.spec() != self.nets[i].spec() {
                return Err(Error::invalid(format!(
                    "checkpoint network {name} has a different shape"
                )));
            }
            self.nets[i] = found.net.clone();
        }
        Ok(())
    }
}

impl PinnModel for SeparableModel {
    type Tape = AxisTapes;

    fn dim(&self) -> usize {
        self.nets.len()
    }

    fn n_fields(&self) -> usize {
        self.n_fields
    }

    fn num_params(&self) -> usize {
        self.nets.iter().map(KanNetwork::num_params).sum()
    }

    fn params(&self) -> Vec<f64> {
        self.nets.iter().flat_map(|n| n.params()).collect()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut off = 0;
        for net in &mut self.nets {
            let np = net.num_params();
            net.set_params(&params[off..off + np])?;
            off += np;
        }
        Ok(())
    }

    fn eval_fields(&self, grid: &FactorGrid, keys: &[FieldKey]) -> Result<(FieldSet, AxisTapes)> {
        let tapes = self.record_axes(grid)?;
        let mut fs = FieldSet::zeros(&grid.shape(), &[]);
        for &key in keys {
            let field = tapes.eval.combine(&key.deriv.orders(self.dim()), key.channel)?;
            fs.set(key, field.into_values());
        }
        Ok((fs, tapes))
    }

    fn backward_fields(&self, tapes: &AxisTapes, cot: &FieldSet, grad: &mut [f64]) -> Result<()> {
        let mut adj = tapes.eval.zeros_like();
        for (key, values) in cot.iter() {
            if values.iter().all(|&v| v == 0.0) {
                continue;
            }
            let field = DenseField::new(cot.shape().to_vec(), values.to_vec())?;
            tapes
                .eval
                .accumulate_backward_combine(&key.deriv.orders(self.dim()), key.channel, &field, &mut adj)?;
        }
        self.backward_axes(tapes, &adj, grad)
    }

    fn eval_points(&self, pts: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let (r, m) = (self.rank, self.n_fields);
        let d = self.dim();
        let mut out = Vec::with_capacity(pts.len());
        for pt in pts {
            if pt.len() != d {
                return Err(Error::invalid(format!(
                    "point has {} coordinates, expected {d}",
                    pt.len()
                )));
            }
            let factors = pt
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let xi = self.reference_coords(i, &[x])?[0];
                    self.nets[i].forward(&[xi])
                })
                .collect::<Result<Vec<_>>>()?;
            self.counter.add(d as u64);
            let mut vals = vec![0.0; m];
            for (o, v) in vals.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..r {
                    let mut prod = 1.0;
                    for f in &factors[..d - 1] {
                        prod *= f[j * m + o];
                    }
                    acc += prod * factors[d - 1][j * m + o];
                }
                *v = acc;
            }
            out.push(vals);
        }
        Ok(out)
    }

    fn counter(&self) -> &EvalCounter {
        &self.counter
    }
}

#[cfg(test)]
mod tests;
