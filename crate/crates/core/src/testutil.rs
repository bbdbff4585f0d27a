//! Helpers shared by unit tests.

use crate::bspline::SplineSpec;
use crate::kanet::{KanLayer, KanNetwork};

/// Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Least-squares fit of `f` on `[-1, 1]` by the spline branch of a single
/// 1 -> 1 layer (base weight zero).
pub fn fit_spline_net(spec: &SplineSpec, samples: usize, f: impl Fn(f64) -> f64) -> KanNetwork {
    let nb = spec.num_basis();
    let mut ata = vec![vec![0.0; nb]; nb];
    let mut atb = vec![0.0; nb];
    for i in 0..samples {
        let x = -1.0 + 2.0 * i as f64 / (samples - 1) as f64;
        let b = spec.basis_eval(x).unwrap();
        let y = f(x);
        for r in 0..nb {
            atb[r] += b[r] * y;
            for c in 0..nb {
                ata[r][c] += b[r] * b[c];
            }
        }
    }
    let coeffs = solve_dense(ata, atb);
    let layer = KanLayer::from_parts(1, 1, spec.clone(), coeffs, vec![0.0]).unwrap();
    KanNetwork::from_layers(vec![layer]).unwrap()
}
