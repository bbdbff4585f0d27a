use std::f64::consts::PI;

use super::*;
use crate::bspline::SplineSpec;
use crate::full_model::DenseModel;
use crate::kanet::KanNetwork;
use crate::sep_model::SeparableModel;
use crate::tensorgrid::RngState;
use crate::testutil::fit_spline_net;

fn zero_model(spec: &ProblemSpec, rank: usize) -> SeparableModel {
    let s = SplineSpec::new(3, 3).unwrap();
    let nets = (0..spec.dim())
        .map(|_| KanNetwork::zeros(&[1, 2, rank * spec.n_fields()], &s).unwrap())
        .collect();
    SeparableModel::from_nets(nets, rank, spec.n_fields(), &spec.domain, &spec.axis_names).unwrap()
}

fn random_sep(spec: &ProblemSpec, rank: usize, seed: u64) -> SeparableModel {
    let s = SplineSpec::new(3, 3).unwrap();
    let mut rng = RngState::new(seed);
    let w = [1, 3, 3, rank * spec.n_fields()];
    SeparableModel::new(&w, rank, spec.n_fields(), &s, &spec.domain, &spec.axis_names, &mut rng).unwrap()
}

fn random_points(spec: &ProblemSpec, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = RngState::new(seed);
    (0..n)
        .map(|_| spec.domain.iter().map(|&(lo, hi)| rng.uniform(lo, hi)).collect())
        .collect()
}

/// FieldSet over a flat list of points (shape `[n]`) from closures.
fn point_fields(keys: &[(FieldKey, Vec<f64>)]) -> FieldSet {
    let n = keys[0].1.len();
    let mut fs = FieldSet::zeros(&[n], &[]);
    for (k, v) in keys {
        fs.set(*k, v.clone());
    }
    fs
}

fn k(c: usize, d: Deriv) -> FieldKey {
    FieldKey::new(c, d)
}

#[test]
fn problem_names_round_trip() {
    for p in Problem::ALL {
        assert_eq!(Problem::from_name(p.name()).unwrap(), p);
    }
    let err = Problem::from_name("burgers").unwrap_err().to_string();
    for p in Problem::ALL {
        assert!(err.contains(p.name()), "{err}");
    }
}

#[test]
fn closed_form_examples() {
    assert!((helmholtz_exact(0.5, 0.125) - 1.0).abs() < 1e-15);
    assert_eq!(kg_exact(1.0, 1.0, 0.0), 2.0);
    assert_eq!(kg_forcing(1.0, 1.0, 0.0), 2.0);
    for t in [0.0, 1.3, 7.0] {
        assert_eq!(kg_exact(0.0, 0.0, t), 0.0);
    }
    let kg = Problem::KleinGordon2d1t.spec();
    assert_eq!(kg.ic_target(&[1.0, 1.0, 0.0]), vec![2.0]);
}

#[test]
fn helmholtz_forcing_collapses() {
    let spec = Problem::Helmholtz2d.spec();
    let c = HELMHOLTZ_KAPPA.powi(2) - (HELMHOLTZ_A1 * PI).powi(2) - (HELMHOLTZ_A2 * PI).powi(2);
    for p in random_points(&spec, 100, 1) {
        let (x, y) = (p[0], p[1]);
        let collapsed = c * (HELMHOLTZ_A1 * PI * x).sin() * (HELMHOLTZ_A2 * PI * y).sin();
        assert!((helmholtz_forcing(x, y) - collapsed).abs() < 1e-12);
    }
}

#[test]
fn manufactured_solutions_satisfy_their_pdes() {
    let spec = Problem::Helmholtz2d.spec();
    let pts = random_points(&spec, 1000, 2);
    let (a1, a2) = (HELMHOLTZ_A1 * PI, HELMHOLTZ_A2 * PI);
    let u: Vec<f64> = pts.iter().map(|p| (a1 * p[0]).sin() * (a2 * p[1]).sin()).collect();
    let fs = point_fields(&[
        (k(0, Deriv::Value), u.clone()),
        (k(0, Deriv::D2(0)), u.iter().map(|v| -a1 * a1 * v).collect()),
        (k(0, Deriv::D2(1)), u.iter().map(|v| -a2 * a2 * v).collect()),
    ]);
    let q: Vec<f64> = pts.iter().map(|p| spec.forcing(p)).collect();
    let r = helmholtz_residual(&fs, &q).unwrap();
    assert!(r.iter().all(|v| v.abs() < 1e-10));

    let spec = Problem::KleinGordon2d1t.spec();
    let pts = random_points(&spec, 1000, 3);
    let u: Vec<f64> = pts
        .iter()
        .map(|p| (p[0] + p[1]) * p[2].cos() + p[0] * p[1] * p[2].sin())
        .collect();
    let fs = point_fields(&[
        (k(0, Deriv::Value), u.clone()),
        (k(0, Deriv::D2(0)), vec![0.0; 1000]),
        (k(0, Deriv::D2(1)), vec![0.0; 1000]),
        (k(0, Deriv::D2(2)), u.iter().map(|v| -v).collect()),
    ]);
    let h: Vec<f64> = pts.iter().map(|p| spec.forcing(p)).collect();
    let r = kg_residual(&fs, &h).unwrap();
    assert!(r.iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn allen_cahn_fixed_points() {
    for c in [-1.0, 0.0, 1.0] {
        let fs = point_fields(&[
            (k(0, Deriv::Value), vec![c; 5]),
            (k(0, Deriv::D1(1)), vec![0.0; 5]),
            (k(0, Deriv::D2(0)), vec![0.0; 5]),
        ]);
        assert!(allen_cahn_residual(&fs).unwrap().iter().all(|&r| r == 0.0));
    }
}

fn cavity_set(vals: [Vec<f64>; 12]) -> FieldSet {
    let keys = residual::cavity_keys();
    point_fields(&keys.into_iter().zip(vals).collect::<Vec<_>>())
}

#[test]
fn cavity_simple_states() {
    // u = x, v = -y, p = const on a few points
    let xs = [0.1, 0.4, 0.9];
    let ys = [0.2, 0.5, 0.7];
    let z = vec![0.0; 3];
    let fs = cavity_set([
        xs.to_vec(),
        vec![1.0; 3],
        z.clone(),
        z.clone(),
        z.clone(),
        ys.iter().map(|y| -y).collect(),
        z.clone(),
        vec![-1.0; 3],
        z.clone(),
        z.clone(),
        z.clone(),
        z.clone(),
    ]);
    let r = cavity_residuals(&fs).unwrap();
    assert!(r[0].iter().all(|&v| v == 0.0));
    let rest = cavity_set(std::array::from_fn(|_| z.clone()));
    for comp in cavity_residuals(&rest).unwrap() {
        assert!(comp.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn cavity_residuals_match_pointwise_formula() {
    let mut rng = RngState::new(4);
    let n = 50;
    let vals: [Vec<f64>; 12] = std::array::from_fn(|_| (0..n).map(|_| rng.normal()).collect());
    let fs = cavity_set(vals.clone());
    let [u, ux, uy, uxx, uyy, v, vx, vy, vxx, vyy, px, py] = vals;
    let r = cavity_residuals(&fs).unwrap();
    for p in 0..n {
        let c = ux[p] + vy[p];
        let mx = u[p] * ux[p] + v[p] * uy[p] + px[p] - (uxx[p] + uyy[p]) / 100.0;
        let my = u[p] * vx[p] + v[p] * vy[p] + py[p] - (vxx[p] + vyy[p]) / 100.0;
        assert!((r[0][p] - c).abs() < 1e-14);
        assert!((r[1][p] - mx).abs() < 1e-13);
        assert!((r[2][p] - my).abs() < 1e-13);
    }
}

// <g, dR[fs; delta]> == <J^T g, delta> for every residual operator
#[test]
fn residual_cotangents_are_transposed_jacobians() {
    for problem in Problem::ALL {
        let spec = problem.spec();
        let keys = spec.pde_keys();
        let n = 7;
        let mut rng = RngState::new(10);
        let mut base = FieldSet::zeros(&[n], &keys);
        let mut delta = FieldSet::zeros(&[n], &keys);
        for &key in &keys {
            for v in base.get_mut(key).unwrap() {
                *v = rng.normal();
            }
            for v in delta.get_mut(key).unwrap() {
                *v = rng.normal();
            }
        }
        let forcing: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let n_res = spec.residuals(&base, &forcing).unwrap().len();
        let g: Vec<Vec<f64>> = (0..n_res).map(|_| (0..n).map(|_| rng.normal()).collect()).collect();
        let eps = 1e-6;
        let shifted = |s: f64| {
            let mut f = base.clone();
            for &key in &keys {
                let d = delta.get(key).unwrap().to_vec();
                for (v, dv) in f.get_mut(key).unwrap().iter_mut().zip(d) {
                    *v += s * dv;
                }
            }
            spec.residuals(&f, &forcing).unwrap()
        };
        let (rp, rm) = (shifted(eps), shifted(-eps));
        let mut lhs = 0.0;
        for c in 0..n_res {
            for p in 0..n {
                lhs += g[c][p] * (rp[c][p] - rm[c][p]) / (2.0 * eps);
            }
        }
        let cot = spec.residual_cotangent(&base, &g).unwrap();
        let mut rhs = 0.0;
        for (key, vals) in cot.iter() {
            rhs += vals
                .iter()
                .zip(delta.get(key).unwrap())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        assert!(
            (lhs - rhs).abs() < 1e-6 * (1.0 + lhs.abs()),
            "{problem}: {lhs} vs {rhs}"
        );
    }
}

#[test]
fn grids_partition_the_closed_box() {
    for (problem, n) in [
        (Problem::Helmholtz2d, vec![6, 5]),
        (Problem::Cavity2d, vec![5, 6]),
        (Problem::AllenCahn1d1t, vec![7, 4]),
        (Problem::KleinGordon2d1t, vec![4, 5, 3]),
    ] {
        let spec = problem.spec();
        let prep = PreparedProblem::new(spec.clone(), &n).unwrap();
        let mut want = 1;
        for (a, &k) in n.iter().enumerate() {
            want *= if Some(a) == spec.time_axis { k - 1 } else { k - 2 };
        }
        assert_eq!(prep.num_interior(), want, "{problem}");
        for p in tensor_points(&prep.interior) {
            for a in 0..spec.dim() {
                let (lo, hi) = spec.domain[a];
                if Some(a) == spec.time_axis {
                    assert!(p[a] > lo && p[a] <= hi);
                } else {
                    assert!(p[a] > lo && p[a] < hi);
                }
            }
        }
        for face in &prep.faces {
            for p in tensor_points(&face.grid) {
                assert!(spec.on_face(&p, face.axis, face.at_hi), "{problem} {}", face.name);
            }
        }
        if let Some((g, _)) = &prep.ic {
            let ta = spec.time_axis.unwrap();
            assert!(tensor_points(g).iter().all(|p| p[ta] == spec.domain[ta].0));
        }
        let spatial = spec.dim() - usize::from(spec.time_axis.is_some());
        assert_eq!(prep.faces.len(), 2 * spatial);
    }
}

#[test]
fn cavity_lid_skips_corners() {
    let prep = PreparedProblem::new(Problem::Cavity2d.spec(), &[6, 6]).unwrap();
    let lid = prep.faces.iter().find(|f| f.axis == 1 && f.at_hi).unwrap();
    assert_eq!(lid.name, "y=1");
    assert_eq!(lid.grid.num_points(), 4);
    assert!(lid.targets[0].iter().all(|&u| u == 1.0));
    assert!(lid.targets[1].iter().all(|&v| v == 0.0));
    let left = prep.faces.iter().find(|f| f.axis == 0 && !f.at_hi).unwrap();
    assert_eq!(left.grid.num_points(), 6);
}

#[test]
fn zero_model_boundary_and_initial_losses() {
    let spec = Problem::AllenCahn1d1t.spec();
    let prep = PreparedProblem::new(spec.clone(), &[9, 5]).unwrap();
    let m = zero_model(&spec, 2);
    let (bc, faces) = loss_bc(&m, &prep, None, 1.0).unwrap();
    assert_eq!(bc, 1.0);
    assert!(faces.iter().all(|(_, l)| *l == 1.0));
    let ic = loss_ic(&m, &prep, None, 1.0).unwrap();
    let xs = prep.closed.axis(0).points();
    let want = xs.iter().map(|&x| (x * x * (PI * x).cos()).powi(2)).sum::<f64>() / xs.len() as f64;
    assert!((ic - want).abs() < 1e-15);

    let spec = Problem::Cavity2d.spec();
    let prep = PreparedProblem::new(spec.clone(), &[6, 6]).unwrap();
    let m = zero_model(&spec, 2);
    let (_, faces) = loss_bc(&m, &prep, None, 1.0).unwrap();
    for (name, l) in faces {
        assert_eq!(l, if name == "y=1" { 1.0 } else { 0.0 }, "{name}");
    }
    assert_eq!(loss_ic(&m, &prep, None, 1.0).unwrap(), 0.0);

    let spec = Problem::Helmholtz2d.spec();
    let prep = PreparedProblem::new(spec.clone(), &[6, 6]).unwrap();
    let m = zero_model(&spec, 2);
    assert_eq!(loss_bc(&m, &prep, None, 1.0).unwrap().0, 0.0);
}

#[test]
fn weights_combine_exactly() {
    let spec = Problem::KleinGordon2d1t.spec();
    let prep = PreparedProblem::new(spec.clone(), &[4, 4, 5]).unwrap();
    let m = random_sep(&spec, 2, 1);
    let zero = Weights {
        pde: 0.0,
        ic: 0.0,
        bc: 0.0,
    };
    let (lb, g) = total_loss(&m, &prep, zero).unwrap();
    assert_eq!(lb.total, 0.0);
    assert!(g.iter().all(|&v| v == 0.0));
    let only_pde = Weights { pde: 1.0, ..zero };
    let (lb, _) = total_loss(&m, &prep, only_pde).unwrap();
    assert_eq!(lb.total, loss_pde(&m, &prep, None, 1.0).unwrap());
    for w in [
        Weights::default(),
        Weights {
            pde: 0.3,
            ic: 2.0,
            bc: 0.7,
        },
    ] {
        let (lb, _) = total_loss(&m, &prep, w).unwrap();
        assert_eq!(lb.total, w.pde * lb.l_pde + w.ic * lb.l_ic + w.bc * lb.l_bc);
        assert!(lb.l_pde >= 0.0 && lb.l_ic >= 0.0 && lb.l_bc >= 0.0);
    }
}

#[test]
fn eval_counts_are_split_by_term() {
    let spec = Problem::KleinGordon2d1t.spec();
    let prep = PreparedProblem::new(spec.clone(), &[4, 5, 6]).unwrap();
    let m = random_sep(&spec, 2, 1);
    let (lb, _) = total_loss(&m, &prep, Weights::default()).unwrap();
    assert_eq!(lb.evals.interior, 2 + 3 + 5);
    assert_eq!(lb.evals.ic, 4 + 5 + 1);
    // faces x=0, x=1 (1 + 5 + 6 each), y=0, y=1 (4 + 1 + 6 each)
    assert_eq!(lb.evals.bc, 2 * 12 + 2 * 11);
}

fn check_total_grad<M: PinnModel + Clone>(model: &M, prep: &PreparedProblem, label: &str) {
    let w = Weights {
        pde: 1.0,
        ic: 0.8,
        bc: 1.3,
    };
    let (_, grad) = total_loss(model, prep, w).unwrap();
    let p0 = model.params();
    let mut probe = model.clone();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] = p0[i] + h;
        probe.set_params(&p).unwrap();
        let lp = total_loss(&probe, prep, w).unwrap().0.total;
        p[i] = p0[i] - h;
        probe.set_params(&p).unwrap();
        let lm = total_loss(&probe, prep, w).unwrap().0.total;
        let fd = (lp - lm) / (2.0 * h);
        let err = (grad[i] - fd).abs() / (fd.abs() + 1e-3);
        worst = worst.max(err);
        assert!(
            (grad[i] - fd).abs() <= 1e-4 * fd.abs() + 1e-7,
            "{label} param {i}: analytic {} vs fd {fd}",
            grad[i]
        );
    }
    assert!(worst.is_finite());
}

#[test]
fn separable_total_gradient_matches_finite_differences() {
    for (problem, n) in [
        (Problem::Helmholtz2d, vec![6, 6]),
        (Problem::Cavity2d, vec![5, 5]),
        (Problem::AllenCahn1d1t, vec![6, 5]),
        (Problem::KleinGordon2d1t, vec![4, 4, 5]),
    ] {
        let spec = problem.spec();
        let prep = PreparedProblem::new(spec.clone(), &n).unwrap();
        let m = random_sep(&spec, 3, 17);
        check_total_grad(&m, &prep, problem.name());
    }
}

#[test]
fn dense_total_gradient_matches_finite_differences() {
    for (problem, n) in [
        (Problem::Cavity2d, vec![5, 4]),
        (Problem::KleinGordon2d1t, vec![4, 3, 4]),
    ] {
        let spec = problem.spec();
        let prep = PreparedProblem::new(spec.clone(), &n).unwrap();
        let s = SplineSpec::new(3, 3).unwrap();
        let mut rng = RngState::new(2);
        let m = DenseModel::new(
            &[spec.dim(), 3, spec.n_fields()],
            &s,
            &spec.domain,
            &spec.axis_names,
            &mut rng,
        )
        .unwrap();
        check_total_grad(&m, &prep, problem.name());
    }
}

/// The Helmholtz solution is rank one, so a separable model built from two
/// fitted splines reproduces it; the residual shrinks with refinement.
#[test]
fn fitted_exact_solution_has_small_residual() {
    let spec = Problem::Helmholtz2d.spec();
    let prep = PreparedProblem::new(spec.clone(), &[30, 30]).unwrap();
    let mut losses = Vec::new();
    for g in [16, 64] {
        let s = SplineSpec::new(g, 5).unwrap();
        let nets = vec![
            fit_spline_net(&s, 2001, |x| (HELMHOLTZ_A1 * PI * x).sin()),
            fit_spline_net(&s, 2001, |y| (HELMHOLTZ_A2 * PI * y).sin()),
        ];
        let m = SeparableModel::from_nets(nets, 1, 1, &spec.domain, &spec.axis_names).unwrap();
        losses.push(loss_pde(&m, &prep, None, 1.0).unwrap());
        if g == 64 {
            assert!(loss_bc(&m, &prep, None, 1.0).unwrap().0 < 1e-12);
        }
    }
    assert!(losses[1] < 1e-4, "{losses:?}");
    assert!(losses[1] < losses[0] / 100.0, "{losses:?}");
}

#[test]
fn pressure_normalization() {
    let p = DenseField::new(vec![4], vec![2.0, 4.0, 6.0, 8.0]).unwrap();
    let n = normalize_pressure(&p);
    for (a, b) in n.values().iter().zip([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0]) {
        assert!((a - b).abs() < 1e-15);
    }
    let shifted = normalize_pressure(&p.map(|v| 3.0 * v + 10.0));
    for (a, b) in n.values().iter().zip(shifted.values()) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(normalize_pressure(&DenseField::new(vec![2], vec![5.0, 5.0]).unwrap())
        .values()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn required_orders_per_problem() {
    assert_eq!(Problem::Helmholtz2d.spec().required_orders(), vec![2, 2]);
    assert_eq!(Problem::AllenCahn1d1t.spec().required_orders(), vec![2, 1]);
    assert_eq!(Problem::KleinGordon2d1t.spec().required_orders(), vec![2, 2, 2]);
    assert_eq!(Problem::Cavity2d.spec().required_orders(), vec![2, 2]);
}

#[test]
fn model_shape_mismatch_is_rejected() {
    let spec = Problem::Cavity2d.spec();
    let prep = PreparedProblem::new(spec, &[4, 4]).unwrap();
    let m = zero_model(&Problem::Helmholtz2d.spec(), 2);
    assert!(loss_pde(&m, &prep, None, 1.0).is_err());
}
