//! Kolmogorov-Arnold layers and networks.
//!
//! Every edge `(i, j)` of a layer carries the activation
//!
//! ```text
//! phi_ij(x) = base_ij * silu(x) + sum_c coeff_ijc * B_c(x)
//! ```
//!
//! and node `i` of the next layer is `sum_j phi_ij(x_j)`. Between layers the
//! node values are squashed with `tanh` so they stay inside the spline domain.
//!
//! Input derivatives are propagated forward as second-order [`Jet`]s along one
//! input direction. The parameter gradient of any scalar built from output
//! values and their first and second directional derivatives is obtained by
//! replaying a recorded [`Tape`] backwards; this needs the third derivative of
//! each activation, which the spline basis provides analytically.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, NamedNetwork};

use crate::bspline::SplineSpec;
use crate::error::{Error, Result};
use crate::tensorgrid::RngState;

/// Value with first and second derivative along one scalar direction.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub const ZERO: Jet = Jet {
        v: 0.0,
        d1: 0.0,
        d2: 0.0,
    };

    pub fn new(v: f64, d1: f64, d2: f64) -> Self {
        Self { v, d1, d2 }
    }

    pub fn constant(v: f64) -> Self {
        Self { v, d1: 0.0, d2: 0.0 }
    }

    /// The independent variable itself.
    pub fn variable(v: f64) -> Self {
        Self { v, d1: 1.0, d2: 0.0 }
    }

    #[inline]
    pub fn is_zero(&self) -> bool {
        self.v == 0.0 && self.d1 == 0.0 && self.d2 == 0.0
    }

    #[inline]
    fn has_derivs(&self) -> bool {
        self.d1 != 0.0 || self.d2 != 0.0
    }

    /// `f(self)` given `f', f''` at `self.v` (value supplied separately).
    #[inline]
    pub fn compose(&self, f0: f64, f1: f64, f2: f64) -> Jet {
        Jet {
            v: f0,
            d1: f1 * self.d1,
            d2: f2 * self.d1 * self.d1 + f1 * self.d2,
        }
    }

    /// Cotangent on `self` produced by the cotangent `ybar` on `f(self)`,
    /// where `f1..f3` are the first three derivatives of `f` at `self.v`.
    #[inline]
    pub fn compose_adjoint(&self, f1: f64, f2: f64, f3: f64, ybar: Jet) -> Jet {
        let a = self.d1;
        Jet {
            v: f1 * ybar.v + f2 * a * ybar.d1 + (f3 * a * a + f2 * self.d2) * ybar.d2,
            d1: f1 * ybar.d1 + 2.0 * f2 * a * ybar.d2,
            d2: f1 * ybar.d2,
        }
    }

    #[inline]
    pub fn dot(&self, other: &Jet) -> f64 {
        self.v * other.v + self.d1 * other.d1 + self.d2 * other.d2
    }
}

impl std::ops::AddAssign for Jet {
    #[inline]
    fn add_assign(&mut self, rhs: Jet) {
        self.v += rhs.v;
        self.d1 += rhs.d1;
        self.d2 += rhs.d2;
    }
}

/// Output values of a network with their directional derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub v: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl Jet2 {
    pub fn from_jets(jets: &[Jet]) -> Self {
        Self {
            v: jets.iter().map(|j| j.v).collect(),
            d1: jets.iter().map(|j| j.d1).collect(),
            d2: jets.iter().map(|j| j.d2).collect(),
        }
    }

    pub fn to_jets(&self) -> Result<Vec<Jet>> {
        if self.v.len() != self.d1.len() || self.v.len() != self.d2.len() {
            return Err(Error::invalid("jet components differ in length"));
        }
        Ok((0..self.v.len())
            .map(|i| Jet::new(self.v[i], self.d1[i], self.d2[i]))
            .collect())
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// `silu(x) = x / (1 + e^-x)` and its first three derivatives.
#[inline]
pub fn silu_derivs(x: f64) -> [f64; 4] {
    let s = 1.0 / (1.0 + (-x).exp());
    let q = s * (1.0 - s);
    let c = 1.0 - 2.0 * s;
    [
        x * s,
        s * (1.0 + x * (1.0 - s)),
        q * (2.0 + x * c),
        q * (c * (3.0 + x * c) - 2.0 * x * q),
    ]
}

/// `tanh` derivatives expressed through `s = tanh(h)`.
#[inline]
fn tanh_derivs(s: f64) -> [f64; 3] {
    let t1 = 1.0 - s * s;
    [t1, -2.0 * s * t1, t1 * (4.0 * s * s - 2.0 * t1)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    n_in: usize,
    n_out: usize,
    spec: SplineSpec,
    /// `[n_out][n_in][g + k]`
    coeffs: Vec<f64>,
    /// `[n_out][n_in]`
    base: Vec<f64>,
}

impl KanLayer {
    pub fn zeros(n_in: usize, n_out: usize, spec: SplineSpec) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let nb = spec.num_basis();
        Ok(Self {
            n_in,
            n_out,
            coeffs: vec![0.0; n_out * n_in * nb],
            base: vec![0.0; n_out * n_in],
            spec,
        })
    }

    /// Spline coefficients ~ N(0, 0.1/sqrt(g+k)), base weights ~ N(0, 1/sqrt(n_in)).
    pub fn random(n_in: usize, n_out: usize, spec: SplineSpec, rng: &mut RngState) -> Result<Self> {
        let mut layer = Self::zeros(n_in, n_out, spec)?;
        let coeff_std = 0.1 / (layer.spec.num_basis() as f64).sqrt();
        let base_std = 1.0 / (n_in as f64).sqrt();
        for c in &mut layer.coeffs {
            *c = coeff_std * rng.normal();
        }
        for w in &mut layer.base {
            *w = base_std * rng.normal();
        }
        Ok(layer)
    }

    pub fn from_parts(n_in: usize, n_out: usize, spec: SplineSpec, coeffs: Vec<f64>, base: Vec<f64>) -> Result<Self> {
        let nb = spec.num_basis();
        if coeffs.len() != n_out * n_in * nb || base.len() != n_out * n_in {
            return Err(Error::invalid(format!(
                "layer {n_in}->{n_out} with {nb} bases: got {} coeffs and {} base weights",
                coeffs.len(),
                base.len()
            )));
        }
        if coeffs.iter().chain(&base).any(|v| !v.is_finite()) {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(Self {
            n_in,
            n_out,
            spec,
            coeffs,
            base,
        })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn base_mut(&mut self) -> &mut [f64] {
        &mut self.base
    }

    pub fn num_params(&self) -> usize {
        self.coeffs.len() + self.base.len()
    }

    /// `phi_ij(x)` for one edge.
    pub fn edge_activation(&self, i: usize, j: usize, x: f64) -> Result<f64> {
        if i >= self.n_out || j >= self.n_in {
            return Err(Error::invalid(format!("edge ({i}, {j}) out of range")));
        }
        let lb = self.spec.local(x)?;
        let nb = self.spec.num_basis();
        let p1 = self.spec.degree() + 1;
        let coeff = &self.coeffs[(i * self.n_in + j) * nb + lb.start..][..p1];
        let mut y = 0.0;
        for c in 0..p1 {
            y += coeff[c] * lb.derivs[0][c];
        }
        Ok(y + self.base[i * self.n_in + j] * silu_derivs(x)[0])
    }

    fn forward_values(&self, u: &[f64], h: &mut [f64]) {
        let nb = self.spec.num_basis();
        let p1 = self.spec.degree() + 1;
        h.fill(0.0);
        for (j, &x) in u.iter().enumerate() {
            let lb = self.spec.local_unchecked(x);
            let s0 = silu_derivs(x)[0];
            for (i, hi) in h.iter_mut().enumerate() {
                let e = i * self.n_in + j;
                let coeff = &self.coeffs[e * nb + lb.start..][..p1];
                let mut y = 0.0;
                for c in 0..p1 {
                    y += coeff[c] * lb.derivs[0][c];
                }
                *hi += y + self.base[e] * s0;
            }
        }
    }

    fn forward_jets(&self, u: &[Jet], h: &mut [Jet]) {
        let nb = self.spec.num_basis();
        let p1 = self.spec.degree() + 1;
        h.fill(Jet::ZERO);
        for (j, uj) in u.iter().enumerate() {
            let lb = self.spec.local_unchecked(uj.v);
            let sd = silu_derivs(uj.v);
            if !uj.has_derivs() {
                for (i, hi) in h.iter_mut().enumerate() {
                    let e = i * self.n_in + j;
                    let coeff = &self.coeffs[e * nb + lb.start..][..p1];
                    let mut y = 0.0;
                    for c in 0..p1 {
                        y += coeff[c] * lb.derivs[0][c];
                    }
                    hi.v += y + self.base[e] * sd[0];
                }
                continue;
            }
            let (a, a2, b) = (uj.d1, uj.d1 * uj.d1, uj.d2);
            let mut j1 = [0.0; crate::bspline::MAX_DEGREE + 1];
            let mut j2 = [0.0; crate::bspline::MAX_DEGREE + 1];
            for c in 0..p1 {
                j1[c] = lb.derivs[1][c] * a;
                j2[c] = lb.derivs[2][c] * a2 + lb.derivs[1][c] * b;
            }
            let s1 = sd[1] * a;
            let s2 = sd[2] * a2 + sd[1] * b;
            for (i, hi) in h.iter_mut().enumerate() {
                let e = i * self.n_in + j;
                let coeff = &self.coeffs[e * nb + lb.start..][..p1];
                let w = self.base[e];
                let (mut y0, mut y1, mut y2) = (0.0, 0.0, 0.0);
                for c in 0..p1 {
                    y0 += coeff[c] * lb.derivs[0][c];
                    y1 += coeff[c] * j1[c];
                    y2 += coeff[c] * j2[c];
                }
                hi.v += y0 + w * sd[0];
                hi.d1 += y1 + w * s1;
                hi.d2 += y2 + w * s2;
            }
        }
    }

    /// Accumulates parameter gradients (into `grad`, laid out as
    /// `[coeffs, base]`) and optionally input cotangents.
    fn backward_jets(&self, u: &[Jet], ybar: &[Jet], grad: &mut [f64], mut ubar: Option<&mut [Jet]>) {
        let nb = self.spec.num_basis();
        let p1 = self.spec.degree() + 1;
        let (gcoeff, gbase) = grad.split_at_mut(self.coeffs.len());
        for (j, uj) in u.iter().enumerate() {
            let lb = self.spec.local_unchecked(uj.v);
            let sd = silu_derivs(uj.v);
            let (a, a2, b) = (uj.d1, uj.d1 * uj.d1, uj.d2);
            let mut jb = [Jet::ZERO; crate::bspline::MAX_DEGREE + 1];
            for c in 0..p1 {
                jb[c] = uj.compose(lb.derivs[0][c], lb.derivs[1][c], lb.derivs[2][c]);
            }
            let js = Jet::new(sd[0], sd[1] * a, sd[2] * a2 + sd[1] * b);
            let mut acc = Jet::ZERO;
            for (i, yb) in ybar.iter().enumerate() {
                if yb.is_zero() {
                    continue;
                }
                let e = i * self.n_in + j;
                let off = e * nb + lb.start;
                for c in 0..p1 {
                    gcoeff[off + c] += jb[c].dot(yb);
                }
                gbase[e] += js.dot(yb);
                if ubar.is_some() {
                    let coeff = &self.coeffs[off..off + p1];
                    let w = self.base[e];
                    let (mut f1, mut f2, mut f3) = (w * sd[1], w * sd[2], w * sd[3]);
                    for c in 0..p1 {
                        f1 += coeff[c] * lb.derivs[1][c];
                        f2 += coeff[c] * lb.derivs[2][c];
                        f3 += coeff[c] * lb.derivs[3][c];
                    }
                    acc += uj.compose_adjoint(f1, f2, f3, *yb);
                }
            }
            if let Some(ub) = ubar.as_deref_mut() {
                ub[j] += acc;
            }
        }
    }
}

/// Flat gradient with the same layout as [`KanNetwork::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub values: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Activations recorded by a batched jet evaluation, consumed by
/// [`KanNetwork::accumulate_grad`].
///
/// Per point the layout is `[input, h_1, s_1, ..., h_{L-1}, s_{L-1}]` where
/// `h_l` are pre-squash node values and `s_l = tanh(h_l)`.
#[derive(Debug, Clone)]
pub struct Tape {
    widths: Vec<usize>,
    n_points: usize,
    stride: usize,
    data: Vec<Jet>,
}

impl Tape {
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    fn point(&self, p: usize) -> &[Jet] {
        &self.data[p * self.stride..(p + 1) * self.stride]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanNetwork {
    widths: Vec<usize>,
    layers: Vec<KanLayer>,
}

impl KanNetwork {
    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 {
            return Err(Error::invalid("network needs at least an input and an output width"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("network widths must be positive"));
        }
        Ok(())
    }

    pub fn zeros(widths: &[usize], spec: &SplineSpec) -> Result<Self> {
        Self::check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| KanLayer::zeros(w[0], w[1], spec.clone()))
            .collect::<Result<_>>()?;
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    pub fn random(widths: &[usize], spec: &SplineSpec, rng: &mut RngState) -> Result<Self> {
        Self::check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| KanLayer::random(w[0], w[1], spec.clone(), rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    pub fn from_layers(layers: Vec<KanLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        let mut widths = vec![layers[0].n_in];
        for l in &layers {
            if l.n_in != *widths.last().unwrap() {
                return Err(Error::invalid("adjacent layer widths do not match"));
            }
            widths.push(l.n_out);
        }
        Ok(Self { widths, layers })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [KanLayer] {
        &mut self.layers
    }

    pub fn n_in(&self) -> usize {
        self.widths[0]
    }

    pub fn n_out(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn spec(&self) -> &SplineSpec {
        self.layers[0].spec()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(KanLayer::num_params).sum()
    }

    /// Parameters flattened layer by layer as `[coeffs, base]`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.coeffs);
            out.extend_from_slice(&l.base);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nc = l.coeffs.len();
            l.coeffs.copy_from_slice(&params[off..off + nc]);
            off += nc;
            let nw = l.base.len();
            l.base.copy_from_slice(&params[off..off + nw]);
            off += nw;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_in() {
            return Err(Error::invalid(format!(
                "network expects {} inputs, got {}",
                self.n_in(),
                x.len()
            )));
        }
        for &v in x {
            if v.is_nan() || v.abs() > 1.0 + crate::bspline::DOMAIN_TOL {
                return Err(Error::Domain {
                    value: v,
                    lo: -1.0,
                    hi: 1.0,
                });
            }
        }
        Ok(())
    }

    fn tape_stride(&self) -> usize {
        self.widths[0] + 2 * self.widths[1..self.widths.len() - 1].iter().sum::<usize>()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut u: Vec<f64> = x.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let last = self.layers.len() - 1;
        let mut h = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            h.clear();
            h.resize(layer.n_out, 0.0);
            layer.forward_values(&u, &mut h);
            if l < last {
                u.clear();
                u.extend(h.iter().map(|v| v.tanh()));
            }
        }
        Ok(h)
    }

    /// Outputs with exact first and second derivatives w.r.t. input `dir`.
    pub fn forward_jet(&self, x: &[f64], dir: usize) -> Result<Jet2> {
        if dir >= self.n_in() {
            return Err(Error::invalid(format!("direction {dir} out of range")));
        }
        let (out, _) = self.record(x, 1, Some(dir))?;
        Ok(Jet2::from_jets(&out))
    }

    /// Batched jet evaluation of `n_points` inputs stored row by row in `xs`.
    /// With `dir = None` only values are propagated (derivative channels stay
    /// zero). Returns outputs `[n_points][n_out]` and the tape.
    pub fn record(&self, xs: &[f64], n_points: usize, dir: Option<usize>) -> Result<(Vec<Jet>, Tape)> {
        let w0 = self.n_in();
        if xs.len() != n_points * w0 {
            return Err(Error::invalid("input buffer does not match point count"));
        }
        if let Some(d) = dir {
            if d >= w0 {
                return Err(Error::invalid(format!("direction {d} out of range")));
            }
        }
        for x in xs.chunks(w0) {
            self.check_input(x)?;
        }
        let seeds: Vec<Jet> = xs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let v = v.clamp(-1.0, 1.0);
                if Some(i % w0) == dir {
                    Jet::variable(v)
                } else {
                    Jet::constant(v)
                }
            })
            .collect();
        Ok(self.record_seeded(&seeds, n_points))
    }

    /// As [`record`](Self::record) with explicit input jets already in `[-1, 1]`.
    pub(crate) fn record_seeded(&self, seeds: &[Jet], n_points: usize) -> (Vec<Jet>, Tape) {
        let w0 = self.n_in();
        let stride = self.tape_stride();
        let n_out = self.n_out();
        let mut data = vec![Jet::ZERO; stride * n_points];
        let mut out = vec![Jet::ZERO; n_points * n_out];
        let last = self.layers.len() - 1;
        for p in 0..n_points {
            let rec = &mut data[p * stride..(p + 1) * stride];
            rec[..w0].copy_from_slice(&seeds[p * w0..(p + 1) * w0]);
            let mut in_off = 0;
            let mut cursor = w0;
            for (l, layer) in self.layers.iter().enumerate() {
                if l < last {
                    let (before, after) = rec.split_at_mut(cursor);
                    let u = &before[in_off..in_off + layer.n_in];
                    let (h, s) = after.split_at_mut(layer.n_out);
                    layer.forward_jets(u, h);
                    for (sk, hk) in s[..layer.n_out].iter_mut().zip(h.iter()) {
                        let t = hk.v.tanh();
                        let [t1, t2, _] = tanh_derivs(t);
                        *sk = hk.compose(t, t1, t2);
                    }
                    in_off = cursor + layer.n_out;
                    cursor += 2 * layer.n_out;
                } else {
                    let u = &rec[in_off..in_off + layer.n_in];
                    layer.forward_jets(u, &mut out[p * n_out..(p + 1) * n_out]);
                }
            }
        }
        let tape = Tape {
            widths: self.widths.clone(),
            n_points,
            stride,
            data,
        };
        (out, tape)
    }

    /// Gradient w.r.t. all parameters of `sum_p upstream[p] . output_jet[p]`.
    pub fn backward_params(&self, tape: &Tape, upstream: &[Jet]) -> Result<ParamGrad> {
        let mut g = ParamGrad::zeros(self.num_params());
        self.accumulate_grad(tape, upstream, &mut g.values)?;
        Ok(g)
    }

    /// Adds the parameter gradient for `upstream` cotangents (one jet per
    /// output per point) into `grad`.
    pub fn accumulate_grad(&self, tape: &Tape, upstream: &[Jet], grad: &mut [f64]) -> Result<()> {
        if tape.widths != self.widths {
            return Err(Error::invalid("tape was recorded on a different network shape"));
        }
        let n_out = self.n_out();
        if upstream.len() != tape.n_points * n_out {
            return Err(Error::invalid("upstream cotangents do not match tape"));
        }
        if grad.len() != self.num_params() {
            return Err(Error::invalid("gradient buffer has the wrong length"));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.num_params();
        }
        // per layer: offset of its input inside a tape record
        let mut in_offsets = Vec::with_capacity(self.layers.len());
        let mut cursor = self.widths[0];
        in_offsets.push(0);
        for layer in &self.layers[..self.layers.len() - 1] {
            in_offsets.push(cursor + layer.n_out);
            cursor += 2 * layer.n_out;
        }
        let max_w = *self.widths.iter().max().unwrap();
        let mut ybar = vec![Jet::ZERO; max_w];
        let mut ubar = vec![Jet::ZERO; max_w];
        for p in 0..tape.n_points {
            let ups = &upstream[p * n_out..(p + 1) * n_out];
            if ups.iter().all(Jet::is_zero) {
                continue;
            }
            let rec = tape.point(p);
            ybar[..n_out].copy_from_slice(ups);
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let u = &rec[in_offsets[l]..in_offsets[l] + layer.n_in];
                let g = &mut grad[offsets[l]..offsets[l] + layer.num_params()];
                if l == 0 {
                    layer.backward_jets(u, &ybar[..layer.n_out], g, None);
                    break;
                }
                ubar[..layer.n_in].fill(Jet::ZERO);
                layer.backward_jets(u, &ybar[..layer.n_out], g, Some(&mut ubar[..layer.n_in]));
                // through the squash: u = tanh(h)
                let h = &rec[in_offsets[l] - layer.n_in..in_offsets[l]];
                for k in 0..layer.n_in {
                    let [t1, t2, t3] = tanh_derivs(u[k].v);
                    ybar[k] = h[k].compose_adjoint(t1, t2, t3, ubar[k]);
                }
            }
        }
        Ok(())
    }
}
