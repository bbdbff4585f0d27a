//! Fourier pseudospectral / RK4 solver for `u_t = D u_xx - 5 (u^3 - u)` on the
//! periodic interval `[-1, 1)`.
//!
//! All time levels are kept so the solution can be resampled anywhere in
//! `[0, 1]`: cubic Hermite interpolation in time (slopes from the right-hand
//! side) and trigonometric interpolation in space.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use sha2::{Digest, Sha256};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::physics::{ac_initial, AC_DIFFUSION, AC_REACTION};
use crate::tensorgrid::{DenseField, FactorGrid};

/// Solutions beyond this magnitude count as blown up.
pub const BLOWUP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcOptions {
    pub nx: usize,
    pub nt: usize,
    pub t_end: f64,
    pub diffusion: f64,
    /// Include the `-5 (u^3 - u)` reaction term (off only in tests).
    pub reaction: bool,
    /// Apply the 2/3-rule filter to the cubic term.
    pub dealias: bool,
}

impl AcOptions {
    pub fn new(nx: usize, nt: usize) -> Self {
        Self {
            nx,
            nt,
            t_end: 1.0,
            diffusion: AC_DIFFUSION,
            reaction: true,
            dealias: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.nx < 64 || !self.nx.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "nx must be even and at least 64, got {}",
                self.nx
            )));
        }
        if self.nt < 100 {
            return Err(Error::invalid(format!("nt must be at least 100, got {}", self.nt)));
        }
        if !(self.diffusion >= 0.0) || !(self.t_end > 0.0) {
            return Err(Error::invalid("diffusion must be >= 0 and t_end > 0"));
        }
        Ok(())
    }

    fn header(&self) -> BTreeMap<String, String> {
        let mut h = BTreeMap::new();
        h.insert("provenance".into(), "pseudospectral".into());
        h.insert("method".into(), "fourier-rk4".into());
        h.insert("nx".into(), self.nx.to_string());
        h.insert("nt".into(), self.nt.to_string());
        h.insert("t_end".into(), format!("{:?}", self.t_end));
        h.insert("diffusion".into(), format!("{:?}", self.diffusion));
        h.insert("reaction".into(), self.reaction.to_string());
        h.insert(
            "dealias".into(),
            if self.dealias { "2/3".into() } else { "none".into() },
        );
        h
    }
}

struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Angular wavenumbers for the period-2 interval.
    k: Vec<f64>,
    buf: Vec<Complex64>,
}

impl Spectral {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let k = (0..n)
            .map(|i| {
                let m = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
                PI * m
            })
            .collect();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            k,
            buf: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    fn forward(&mut self, u: &[f64]) -> Vec<Complex64> {
        for (b, &v) in self.buf.iter_mut().zip(u) {
            *b = Complex64::new(v, 0.0);
        }
        self.fwd.process(&mut self.buf);
        self.buf.clone()
    }

    fn inverse_into(&mut self, spec: &[Complex64], out: &mut [f64]) {
        self.buf.copy_from_slice(spec);
        self.inv.process(&mut self.buf);
        let s = 1.0 / self.n as f64;
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re * s;
        }
    }

    fn laplacian(&mut self, u: &[f64], out: &mut [f64]) {
        let mut uh = self.forward(u);
        for (c, k) in uh.iter_mut().zip(&self.k) {
            *c *= -k * k;
        }
        self.inverse_into(&uh, out);
    }

    fn dealias(&mut self, f: &mut [f64]) {
        let mut fh = self.forward(f);
        let cut = self.n / 3;
        for (i, c) in fh.iter_mut().enumerate() {
            let m = if i <= self.n / 2 { i } else { self.n - i };
            if m > cut {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        self.inverse_into(&fh, f);
    }
}

struct Rhs {
    sp: Spectral,
    opts: AcOptions,
}

impl Rhs {
    fn eval(&mut self, u: &[f64], out: &mut [f64]) {
        self.sp.laplacian(u, out);
        for v in out.iter_mut() {
            *v *= self.opts.diffusion;
        }
        if self.opts.reaction {
            let mut nl: Vec<f64> = u.iter().map(|&v| -AC_REACTION * (v * v * v - v)).collect();
            if self.opts.dealias {
                self.sp.dealias(&mut nl);
            }
            for (o, n) in out.iter_mut().zip(nl) {
                *o += n;
            }
        }
    }
}

/// All time levels of one solve; `states[n][j]` is `u(x_j, n dt)` with
/// `x_j = -1 + 2 j / nx`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcSolution {
    pub opts: AcOptions,
    pub states: Vec<Vec<f64>>,
}

pub fn ac_solve(opts: AcOptions) -> Result<AcSolution> {
    opts.validate()?;
    let n = opts.nx;
    let dt = opts.t_end / opts.nt as f64;
    let mut rhs = Rhs {
        sp: Spectral::new(n),
        opts,
    };
    let mut u: Vec<f64> = (0..n).map(|j| ac_initial(node(j, n))).collect();
    let mut states = Vec::with_capacity(opts.nt + 1);
    states.push(u.clone());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for step in 1..=opts.nt {
        rhs.eval(&u, &mut k1);
        for j in 0..n {
            tmp[j] = u[j] + 0.5 * dt * k1[j];
        }
        rhs.eval(&tmp, &mut k2);
        for j in 0..n {
            tmp[j] = u[j] + 0.5 * dt * k2[j];
        }
        rhs.eval(&tmp, &mut k3);
        for j in 0..n {
            tmp[j] = u[j] + dt * k3[j];
        }
        rhs.eval(&tmp, &mut k4);
        for j in 0..n {
            u[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let max_abs = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(max_abs <= BLOWUP) {
            return Err(Error::Unstable { step, max_abs });
        }
        states.push(u.clone());
    }
    Ok(AcSolution { opts, states })
}

fn node(j: usize, n: usize) -> f64 {
    -1.0 + 2.0 * j as f64 / n as f64
}

impl AcSolution {
    pub fn nx(&self) -> usize {
        self.opts.nx
    }

    pub fn dt(&self) -> f64 {
        self.opts.t_end / self.opts.nt as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nx()).map(|j| node(j, self.nx())).collect()
    }

    /// `integral (D/2) u_x^2 + (5/4) (u^2 - 1)^2 dx` at every time level, with
    /// the gradient term from the spectral coefficients.
    pub fn energy(&self) -> Vec<f64> {
        let n = self.nx();
        let mut sp = Spectral::new(n);
        let dx = 2.0 / n as f64;
        self.states
            .iter()
            .map(|u| {
                let uh = sp.forward(u);
                let grad: f64 = uh.iter().zip(&sp.k).map(|(c, k)| k * k * c.norm_sqr()).sum::<f64>() / n as f64;
                let pot: f64 = u.iter().map(|v| (v * v - 1.0).powi(2)).sum();
                dx * (0.5 * self.opts.diffusion * grad + 0.25 * AC_REACTION * pot)
            })
            .collect()
    }

    /// State at time `t`, Hermite-interpolated between stored levels.
    pub fn state_at(&self, t: f64) -> Result<Vec<f64>> {
        let t_end = self.opts.t_end;
        if !(t >= -1e-12 && t <= t_end + 1e-12) {
            return Err(Error::Domain {
                value: t,
                lo: 0.0,
                hi: t_end,
            });
        }
        let dt = self.dt();
        let pos = (t.clamp(0.0, t_end) / dt).min(self.opts.nt as f64);
        let i = (pos.floor() as usize).min(self.opts.nt - 1);
        let s = pos - i as f64;
        if s == 0.0 {
            return Ok(self.states[i].clone());
        }
        if s == 1.0 {
            return Ok(self.states[i + 1].clone());
        }
        let mut rhs = Rhs {
            sp: Spectral::new(self.nx()),
            opts: self.opts,
        };
        let (mut f0, mut f1) = (vec![0.0; self.nx()], vec![0.0; self.nx()]);
        rhs.eval(&self.states[i], &mut f0);
        rhs.eval(&self.states[i + 1], &mut f1);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok((0..self.nx())
            .map(|j| h00 * self.states[i][j] + h10 * dt * f0[j] + h01 * self.states[i + 1][j] + h11 * dt * f1[j])
            .collect())
    }

    /// Samples the solution on a grid with axes `(x, t)`.
    pub fn sample(&self, grid: &FactorGrid) -> Result<DenseField> {
        if grid.dim() != 2 {
            return Err(Error::invalid("Allen-Cahn reference grids have axes (x, t)"));
        }
        let xs = grid.axis(0).points();
        let ts = grid.axis(1).points();
        let n = self.nx();
        let mut sp = Spectral::new(n);
        let mut out = DenseField::zeros(vec![xs.len(), ts.len()]);
        for (ti, &t) in ts.iter().enumerate() {
            let u = self.state_at(t)?;
            let uh = sp.forward(&u);
            for (xi, &x) in xs.iter().enumerate() {
                let v = trig_interp(&u, &uh, x);
                out.values_mut()[xi * ts.len() + ti] = v;
            }
        }
        Ok(out)
    }

    /// Writes every time level as an `(nt + 1) x nx` container with a
    /// checksum over the data.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let field = DenseField::new(
            vec![self.states.len(), self.nx()],
            self.states.iter().flatten().copied().collect(),
        )?;
        let mut header = self.opts.header();
        header.insert("sha256".into(), checksum(&field));
        field.write_file(path, &header)
    }

    /// Loads a cache written for exactly these options, verifying its
    /// checksum. `Ok(None)` means the cache is for other options.
    pub fn read_cache(path: &Path, opts: AcOptions) -> Result<Option<Self>> {
        let (field, header) = DenseField::read_file(path)?;
        let want = opts.header();
        if want.iter().any(|(k, v)| header.get(k) != Some(v)) {
            return Ok(None);
        }
        let source = path.display().to_string();
        if header.get("sha256") != Some(&checksum(&field)) {
            return Err(Error::parse(source, 0, "reference cache checksum mismatch"));
        }
        if field.shape() != [opts.nt + 1, opts.nx] {
            return Err(Error::parse(source, 0, "reference cache has the wrong shape"));
        }
        let states = field.values().chunks(opts.nx).map(<[f64]>::to_vec).collect();
        Ok(Some(Self { opts, states }))
    }
}

fn checksum(field: &DenseField) -> String {
    let mut h = Sha256::new();
    for v in field.values() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Trigonometric interpolant through the nodal values, returning the node
/// value itself when `x` sits on a node (`x = 1` wraps onto `x = -1`).
fn trig_interp(u: &[f64], uh: &[Complex64], x: f64) -> f64 {
    let n = u.len();
    let pos = (x + 1.0) * n as f64 / 2.0;
    let r = pos.round();
    if (pos - r).abs() < 1e-9 {
        return u[(r as usize) % n];
    }
    let theta = PI * (x + 1.0);
    let mut acc = uh[0].re;
    for m in 1..n / 2 {
        let e = Complex64::from_polar(1.0, theta * m as f64);
        acc += 2.0 * (uh[m] * e).re;
    }
    acc += uh[n / 2].re * (theta * (n / 2) as f64).cos();
    acc / n as f64
}

/// Relative L2 change of the final state when both resolutions are doubled,
/// compared on the coarse nodes.
pub fn ac_convergence(opts: AcOptions) -> Result<f64> {
    let coarse = ac_solve(opts)?;
    let fine = ac_solve(AcOptions {
        nx: 2 * opts.nx,
        nt: 2 * opts.nt,
        ..opts
    })?;
    let a = coarse.states.last().unwrap();
    let b = fine.states.last().unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (j, &v) in a.iter().enumerate() {
        let w = b[2 * j];
        num += (w - v) * (w - v);
        den += w * w;
    }
    Ok((num / den).sqrt())
}
