//! Closed-form solutions, forcing terms and PDE residual operators.
//!
//! Residuals act pointwise on already-assembled derivative fields, so the
//! nonlinear terms never see the model structure. Each operator comes with
//! its transpose-Jacobian, which turns residual cotangents into field
//! cotangents for the model's backward pass.

use std::f64::consts::PI;

use crate::error::Result;
use crate::model::{Deriv, FieldKey, FieldSet};

pub const HELMHOLTZ_KAPPA: f64 = 1.0;
pub const HELMHOLTZ_A1: f64 = 1.0;
pub const HELMHOLTZ_A2: f64 = 4.0;
pub const CAVITY_RE: f64 = 100.0;
pub const AC_DIFFUSION: f64 = 1e-4;
pub const AC_REACTION: f64 = 5.0;

pub fn helmholtz_exact(x: f64, y: f64) -> f64 {
    (HELMHOLTZ_A1 * PI * x).sin() * (HELMHOLTZ_A2 * PI * y).sin()
}

/// `u_xx + u_yy + kappa^2 u` applied to [`helmholtz_exact`], term by term.
pub fn helmholtz_forcing(x: f64, y: f64) -> f64 {
    let s = helmholtz_exact(x, y);
    let (a1, a2) = (HELMHOLTZ_A1 * PI, HELMHOLTZ_A2 * PI);
    -(a1 * a1) * s - (a2 * a2) * s + HELMHOLTZ_KAPPA * HELMHOLTZ_KAPPA * s
}

pub fn kg_exact(x: f64, y: f64, t: f64) -> f64 {
    (x + y) * t.cos() + x * y * t.sin()
}

pub fn kg_forcing(x: f64, y: f64, t: f64) -> f64 {
    let u = kg_exact(x, y, t);
    u * u - u
}

pub fn ac_initial(x: f64) -> f64 {
    x * x * (PI * x).cos()
}

fn key(channel: usize, deriv: Deriv) -> FieldKey {
    FieldKey::new(channel, deriv)
}

pub(crate) fn helmholtz_keys() -> Vec<FieldKey> {
    vec![key(0, Deriv::Value), key(0, Deriv::D2(0)), key(0, Deriv::D2(1))]
}

pub(crate) fn kg_keys() -> Vec<FieldKey> {
    vec![
        key(0, Deriv::Value),
        key(0, Deriv::D2(0)),
        key(0, Deriv::D2(1)),
        key(0, Deriv::D2(2)),
    ]
}

pub(crate) fn ac_keys() -> Vec<FieldKey> {
    vec![key(0, Deriv::Value), key(0, Deriv::D1(1)), key(0, Deriv::D2(0))]
}

pub(crate) fn cavity_keys() -> Vec<FieldKey> {
    let mut keys = Vec::new();
    for c in 0..2 {
        for d in [Deriv::Value, Deriv::D1(0), Deriv::D1(1), Deriv::D2(0), Deriv::D2(1)] {
            keys.push(key(c, d));
        }
    }
    keys.push(key(2, Deriv::D1(0)));
    keys.push(key(2, Deriv::D1(1)));
    keys
}

/// `u_xx + u_yy + kappa^2 u - q`.
pub fn helmholtz_residual(fs: &FieldSet, q: &[f64]) -> Result<Vec<f64>> {
    let u = fs.get(key(0, Deriv::Value))?;
    let uxx = fs.get(key(0, Deriv::D2(0)))?;
    let uyy = fs.get(key(0, Deriv::D2(1)))?;
    let k2 = HELMHOLTZ_KAPPA * HELMHOLTZ_KAPPA;
    Ok((0..u.len()).map(|p| uxx[p] + uyy[p] + k2 * u[p] - q[p]).collect())
}

pub(crate) fn helmholtz_cotangent(g: &[f64], shape: &[usize]) -> FieldSet {
    let k2 = HELMHOLTZ_KAPPA * HELMHOLTZ_KAPPA;
    let mut cot = FieldSet::zeros(shape, &[]);
    cot.set(key(0, Deriv::Value), g.iter().map(|v| k2 * v).collect());
    cot.set(key(0, Deriv::D2(0)), g.to_vec());
    cot.set(key(0, Deriv::D2(1)), g.to_vec());
    cot
}

/// `u_tt - (u_xx + u_yy) + u^2 - h`.
pub fn kg_residual(fs: &FieldSet, h: &[f64]) -> Result<Vec<f64>> {
    let u = fs.get(key(0, Deriv::Value))?;
    let uxx = fs.get(key(0, Deriv::D2(0)))?;
    let uyy = fs.get(key(0, Deriv::D2(1)))?;
    let utt = fs.get(key(0, Deriv::D2(2)))?;
    Ok((0..u.len())
        .map(|p| utt[p] - (uxx[p] + uyy[p]) + u[p] * u[p] - h[p])
        .collect())
}

pub(crate) fn kg_cotangent(fs: &FieldSet, g: &[f64]) -> Result<FieldSet> {
    let u = fs.get(key(0, Deriv::Value))?;
    let mut cot = FieldSet::zeros(fs.shape(), &[]);
    cot.set(
        key(0, Deriv::Value),
        g.iter().zip(u).map(|(g, u)| 2.0 * u * g).collect(),
    );
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    cot.set(key(0, Deriv::D2(0)), neg.clone());
    cot.set(key(0, Deriv::D2(1)), neg);
    cot.set(key(0, Deriv::D2(2)), g.to_vec());
    Ok(cot)
}

/// `u_t - D u_xx + 5 (u^3 - u)`.
pub fn allen_cahn_residual(fs: &FieldSet) -> Result<Vec<f64>> {
    let u = fs.get(key(0, Deriv::Value))?;
    let ut = fs.get(key(0, Deriv::D1(1)))?;
    let uxx = fs.get(key(0, Deriv::D2(0)))?;
    Ok((0..u.len())
        .map(|p| ut[p] - AC_DIFFUSION * uxx[p] + AC_REACTION * (u[p] * u[p] * u[p] - u[p]))
        .collect())
}

pub(crate) fn ac_cotangent(fs: &FieldSet, g: &[f64]) -> Result<FieldSet> {
    let u = fs.get(key(0, Deriv::Value))?;
    let mut cot = FieldSet::zeros(fs.shape(), &[]);
    cot.set(
        key(0, Deriv::Value),
        g.iter()
            .zip(u)
            .map(|(g, u)| AC_REACTION * (3.0 * u * u - 1.0) * g)
            .collect(),
    );
    cot.set(key(0, Deriv::D1(1)), g.to_vec());
    cot.set(key(0, Deriv::D2(0)), g.iter().map(|v| -AC_DIFFUSION * v).collect());
    Ok(cot)
}

struct CavityFields<'a> {
    u: &'a [f64],
    ux: &'a [f64],
    uy: &'a [f64],
    uxx: &'a [f64],
    uyy: &'a [f64],
    v: &'a [f64],
    vx: &'a [f64],
    vy: &'a [f64],
    vxx: &'a [f64],
    vyy: &'a [f64],
    px: &'a [f64],
    py: &'a [f64],
}

impl<'a> CavityFields<'a> {
    fn from(fs: &'a FieldSet) -> Result<Self> {
        Ok(Self {
            u: fs.get(key(0, Deriv::Value))?,
            ux: fs.get(key(0, Deriv::D1(0)))?,
            uy: fs.get(key(0, Deriv::D1(1)))?,
            uxx: fs.get(key(0, Deriv::D2(0)))?,
            uyy: fs.get(key(0, Deriv::D2(1)))?,
            v: fs.get(key(1, Deriv::Value))?,
            vx: fs.get(key(1, Deriv::D1(0)))?,
            vy: fs.get(key(1, Deriv::D1(1)))?,
            vxx: fs.get(key(1, Deriv::D2(0)))?,
            vyy: fs.get(key(1, Deriv::D2(1)))?,
            px: fs.get(key(2, Deriv::D1(0)))?,
            py: fs.get(key(2, Deriv::D1(1)))?,
        })
    }
}

/// Continuity and the two momentum residuals of steady incompressible
/// Navier-Stokes, channels `(u, v, p)`.
pub fn cavity_residuals(fs: &FieldSet) -> Result<[Vec<f64>; 3]> {
    let f = CavityFields::from(fs)?;
    let n = f.u.len();
    let nu = 1.0 / CAVITY_RE;
    let cont = (0..n).map(|p| f.ux[p] + f.vy[p]).collect();
    let mx = (0..n)
        .map(|p| f.u[p] * f.ux[p] + f.v[p] * f.uy[p] + f.px[p] - nu * (f.uxx[p] + f.uyy[p]))
        .collect();
    let my = (0..n)
        .map(|p| f.u[p] * f.vx[p] + f.v[p] * f.vy[p] + f.py[p] - nu * (f.vxx[p] + f.vyy[p]))
        .collect();
    Ok([cont, mx, my])
}

pub(crate) fn cavity_cotangent(fs: &FieldSet, g: &[Vec<f64>]) -> Result<FieldSet> {
    let f = CavityFields::from(fs)?;
    let (g1, g2, g3) = (&g[0], &g[1], &g[2]);
    let n = f.u.len();
    let nu = 1.0 / CAVITY_RE;
    let mut cot = FieldSet::zeros(fs.shape(), &[]);
    let mut put = |c: usize, d: Deriv, v: Vec<f64>| cot.set(key(c, d), v);
    put(
        0,
        Deriv::Value,
        (0..n).map(|p| g2[p] * f.ux[p] + g3[p] * f.vx[p]).collect(),
    );
    put(0, Deriv::D1(0), (0..n).map(|p| g1[p] + g2[p] * f.u[p]).collect());
    put(0, Deriv::D1(1), (0..n).map(|p| g2[p] * f.v[p]).collect());
    put(0, Deriv::D2(0), g2.iter().map(|v| -nu * v).collect());
    put(0, Deriv::D2(1), g2.iter().map(|v| -nu * v).collect());
    put(
        1,
        Deriv::Value,
        (0..n).map(|p| g2[p] * f.uy[p] + g3[p] * f.vy[p]).collect(),
    );
    put(1, Deriv::D1(0), (0..n).map(|p| g3[p] * f.u[p]).collect());
    put(1, Deriv::D1(1), (0..n).map(|p| g1[p] + g3[p] * f.v[p]).collect());
    put(1, Deriv::D2(0), g3.iter().map(|v| -nu * v).collect());
    put(1, Deriv::D2(1), g3.iter().map(|v| -nu * v).collect());
    put(2, Deriv::D1(0), g2.to_vec());
    put(2, Deriv::D1(1), g3.to_vec());
    Ok(cot)
}
