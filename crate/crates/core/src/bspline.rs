//! Clamped uniform B-spline bases on `[-1, 1]` with analytic derivatives.
//!
//! A spline with `g` intervals and degree `k` has `g + k` basis functions over
//! the knot vector
//!
//! ```text
//! [-1 (k+1 times), interior knots at -1 + 2i/g for i = 1..g-1, 1 (k+1 times)]
//! ```
//!
//! At any `x` only `k + 1` consecutive functions are nonzero; [`LocalBasis`]
//! holds those values together with their first three derivatives, which is
//! what the KAN layers consume. Derivatives come from the standard recurrence
//! (difference of lower-degree bases scaled by `degree / knot span`), evaluated
//! with the Piegl-Tiller triangular scheme.

use crate::error::{Error, Result};

/// Largest supported spline degree.
pub const MAX_DEGREE: usize = 7;

/// Highest derivative order tracked by [`LocalBasis`].
pub const MAX_DERIV: usize = 3;

/// Inputs this far outside `[-1, 1]` are clamped instead of rejected.
pub const DOMAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineSpec {
    grid: usize,
    degree: usize,
    knots: Vec<f64>,
}

/// The `k + 1` nonzero basis functions at a point, `derivs[order][c]` being
/// the `order`-th derivative of basis function `start + c`.
#[derive(Debug, Clone, Copy)]
pub struct LocalBasis {
    pub start: usize,
    pub derivs: [[f64; MAX_DEGREE + 1]; MAX_DERIV + 1],
}

/// Dense basis values and derivatives at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisJet {
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl SplineSpec {
    pub fn new(grid: usize, degree: usize) -> Result<Self> {
        if grid < 1 {
            return Err(Error::invalid("spline grid size must be at least 1"));
        }
        if !(1..=MAX_DEGREE).contains(&degree) {
            return Err(Error::invalid(format!(
                "spline degree must be in 1..={MAX_DEGREE}, got {degree}"
            )));
        }
        let mut knots = Vec::with_capacity(grid + 2 * degree + 1);
        knots.extend(std::iter::repeat_n(-1.0, degree + 1));
        for i in 1..grid {
            knots.push(-1.0 + 2.0 * i as f64 / grid as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self { grid, degree, knots })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.grid + self.degree
    }

    fn check_domain(x: f64) -> Result<f64> {
        if x.is_nan() || !(-1.0 - DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&x) {
            return Err(Error::Domain {
                value: x,
                lo: -1.0,
                hi: 1.0,
            });
        }
        Ok(x.clamp(-1.0, 1.0))
    }

    /// Index `s` of the knot span `[t_s, t_{s+1})` containing `x`; the right
    /// end belongs to the last nonempty span.
    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let last = self.grid + p - 1;
        if x >= 1.0 {
            return last;
        }
        // uniform interior knots: locate directly
        let cell = ((x + 1.0) * 0.5 * self.grid as f64).floor() as isize;
        let mut s = (cell.clamp(0, self.grid as isize - 1) as usize) + p;
        // guard against rounding at knot values
        while s > p && x < self.knots[s] {
            s -= 1;
        }
        while s < last && x >= self.knots[s + 1] {
            s += 1;
        }
        s
    }

    /// Nonzero basis values and derivatives up to third order at `x`.
    pub fn local(&self, x: f64) -> Result<LocalBasis> {
        let x = Self::check_domain(x)?;
        Ok(self.local_unchecked(x))
    }

    /// As [`local`](Self::local) for `x` already known to be in `[-1, 1]`.
    pub fn local_unchecked(&self, x: f64) -> LocalBasis {
        let p = self.degree;
        let span = self.span(x);
        let u = &self.knots;
        let mut ndu = [[0.0f64; MAX_DEGREE + 1]; MAX_DEGREE + 1];
        let mut left = [0.0f64; MAX_DEGREE + 1];
        let mut right = [0.0f64; MAX_DEGREE + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut derivs = [[0.0f64; MAX_DEGREE + 1]; MAX_DERIV + 1];
        for j in 0..=p {
            derivs[0][j] = ndu[j][p];
        }
        let n = MAX_DERIV.min(p);
        let mut a = [[0.0f64; MAX_DEGREE + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    let rk = rk as usize;
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                    d = a[s2][0] * ndu[rk][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                derivs[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=n {
            for j in 0..=p {
                derivs[k][j] *= factor;
            }
            factor *= (p - k) as f64;
        }
        LocalBasis {
            start: span - p,
            derivs,
        }
    }

    /// All `g + k` basis values at `x`.
    pub fn basis_eval(&self, x: f64) -> Result<Vec<f64>> {
        let lb = self.local(x)?;
        let mut out = vec![0.0; self.num_basis()];
        out[lb.start..lb.start + self.degree + 1].copy_from_slice(&lb.derivs[0][..self.degree + 1]);
        Ok(out)
    }

    /// Basis values with exact first and second derivatives at `x`.
    pub fn basis_jet(&self, x: f64) -> Result<BasisJet> {
        let lb = self.local(x)?;
        let n = self.num_basis();
        let p1 = self.degree + 1;
        let dense = |order: usize| {
            let mut v = vec![0.0; n];
            v[lb.start..lb.start + p1].copy_from_slice(&lb.derivs[order][..p1]);
            v
        };
        Ok(BasisJet {
            value: dense(0),
            d1: dense(1),
            d2: dense(2),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorgrid::RngState;

    /// Textbook Cox-de Boor recursion, written independently of the
    /// triangular scheme above.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            let last_nonempty = knots.iter().rposition(|&t| t < 1.0).unwrap();
            let inside = knots[i] <= x && x < knots[i + 1];
            let right_end = x == 1.0 && i == last_nonempty;
            return if inside || right_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
        }
        v
    }

    #[test]
    fn knot_vector_shape() {
        let s = SplineSpec::new(3, 3).unwrap();
        assert_eq!(s.knots().len(), 3 + 2 * 3 + 1);
        assert_eq!(s.num_basis(), 6);
        assert!(s.knots().windows(2).all(|w| w[0] <= w[1]));
        let s = SplineSpec::new(3, 5).unwrap();
        assert_eq!(s.knots().len(), 3 + 10 + 1);
        assert_eq!(s.num_basis(), 8);
    }

    #[test]
    fn hat_function_at_knot() {
        let s = SplineSpec::new(2, 1).unwrap();
        let b = s.basis_eval(0.0).unwrap();
        assert_eq!(b, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn clamped_left_end_matches_recursion() {
        let s = SplineSpec::new(3, 3).unwrap();
        let b = s.basis_eval(-1.0).unwrap();
        for (i, &v) in b.iter().enumerate() {
            let oracle = cox_de_boor(s.knots(), i, 3, -1.0);
            assert!((v - oracle).abs() < 1e-12);
        }
        assert!((b[0] - 1.0).abs() < 1e-12);
        assert!(b[1..].iter().all(|v| v.abs() < 1e-12));
        let b = s.basis_eval(1.0).unwrap();
        assert!((b[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_cox_de_boor_everywhere() {
        let mut rng = RngState::new(11);
        for &(g, k) in &[(3, 1), (3, 2), (3, 3), (3, 5), (5, 4), (1, 3), (7, 7)] {
            let s = SplineSpec::new(g, k).unwrap();
            let mut xs: Vec<f64> = (0..200).map(|_| rng.uniform(-1.0, 1.0)).collect();
            xs.extend_from_slice(s.knots());
            for x in xs {
                let b = s.basis_eval(x).unwrap();
                for (i, &v) in b.iter().enumerate() {
                    let oracle = cox_de_boor(s.knots(), i, k, x);
                    assert!((v - oracle).abs() < 1e-12, "g={g} k={k} x={x} i={i}: {v} vs {oracle}");
                }
            }
        }
    }

    #[test]
    fn derivative_sums_vanish() {
        let mut rng = RngState::new(5);
        for k in [3, 5] {
            let s = SplineSpec::new(3, k).unwrap();
            for _ in 0..1000 {
                let j = s.basis_jet(rng.uniform(-1.0, 1.0)).unwrap();
                assert!((j.value.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(j.d1.iter().sum::<f64>().abs() < 1e-12);
                assert!(j.d2.iter().sum::<f64>().abs() < 1e-11);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let s = SplineSpec::new(3, 3).unwrap();
        let x = 0.37;
        let h = 1e-5;
        let j = s.basis_jet(x).unwrap();
        let bp = s.basis_eval(x + h).unwrap();
        let bm = s.basis_eval(x - h).unwrap();
        let b0 = s.basis_eval(x).unwrap();
        for i in 0..s.num_basis() {
            let fd1 = (bp[i] - bm[i]) / (2.0 * h);
            let fd2 = (bp[i] - 2.0 * b0[i] + bm[i]) / (h * h);
            assert!((j.d1[i] - fd1).abs() <= 1e-6 * fd1.abs().max(1e-3), "d1[{i}]");
            assert!((j.d2[i] - fd2).abs() <= 1e-4 * fd2.abs().max(1.0), "d2[{i}]");
        }
    }

    #[test]
    fn third_derivative_matches_fd_of_second() {
        let mut rng = RngState::new(9);
        for k in [3, 5] {
            let s = SplineSpec::new(3, k).unwrap();
            for _ in 0..50 {
                let x = rng.uniform(-0.99, 0.99);
                let h = 1e-6;
                let a = s.local_unchecked(x);
                let p = s.basis_jet(x + h).unwrap();
                let m = s.basis_jet(x - h).unwrap();
                for c in 0..=k {
                    let i = a.start + c;
                    let fd = (p.d2[i] - m.d2[i]) / (2.0 * h);
                    let tol = 1e-5 * fd.abs().max(1.0);
                    // skip the measure-zero case of straddling a knot
                    if s.knots().iter().any(|&t| (t - x).abs() < 2.0 * h) {
                        continue;
                    }
                    assert!((a.derivs[3][c] - fd).abs() < tol, "k={k} x={x} c={c}");
                }
            }
        }
    }

    #[test]
    fn local_support() {
        let mut rng = RngState::new(1);
        for k in [1, 3, 5] {
            let s = SplineSpec::new(3, k).unwrap();
            for _ in 0..100 {
                let b = s.basis_eval(rng.uniform(-1.0, 1.0)).unwrap();
                assert!(b.iter().filter(|v| **v != 0.0).count() <= k + 1);
            }
        }
    }

    #[test]
    fn domain_handling() {
        let s = SplineSpec::new(3, 3).unwrap();
        assert!(s.basis_eval(1.0 + 5e-13).is_ok());
        assert!(s.basis_eval(-1.0 - 5e-13).is_ok());
        assert!(matches!(s.basis_eval(1.0 + 1e-9), Err(Error::Domain { .. })));
        assert!(matches!(s.basis_eval(f64::NAN), Err(Error::Domain { .. })));
        assert!(SplineSpec::new(0, 3).is_err());
        assert!(SplineSpec::new(3, 0).is_err());
        assert!(SplineSpec::new(3, MAX_DEGREE + 1).is_err());
    }

    #[test]
    fn low_degree_higher_derivatives_are_zero() {
        let s = SplineSpec::new(3, 1).unwrap();
        let lb = s.local(0.3).unwrap();
        assert!(lb.derivs[2].iter().all(|&v| v == 0.0));
        assert!(lb.derivs[3].iter().all(|&v| v == 0.0));
    }
}
