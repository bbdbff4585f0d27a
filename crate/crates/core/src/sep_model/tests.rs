use proptest::prelude::*;

use super::*;
use crate::kanet::KanLayer;
use crate::model::Deriv;
use crate::tensorgrid::{linspace, tensor_points, Grid1D};

fn names(d: usize) -> Vec<String> {
    ["x", "y", "z", "t"][..d].iter().map(|s| s.to_string()).collect()
}

/// Single-layer [1, 1] network that reproduces its (reference) input exactly:
/// B-splines have linear precision with Greville abscissae as coefficients.
fn identity_net(spec: &SplineSpec) -> KanNetwork {
    let k = spec.degree();
    let t = spec.knots();
    let coeffs: Vec<f64> = (0..spec.num_basis())
        .map(|c| t[c + 1..=c + k].iter().sum::<f64>() / k as f64)
        .collect();
    let layer = KanLayer::from_parts(1, 1, spec.clone(), coeffs, vec![0.0]).unwrap();
    KanNetwork::from_layers(vec![layer]).unwrap()
}

fn random_model(d: usize, rank: usize, m: usize, seed: u64) -> SeparableModel {
    let spec = SplineSpec::new(4, 3).unwrap();
    let bounds: Vec<(f64, f64)> = (0..d).map(|i| (-0.5 * i as f64, 1.0 + i as f64)).collect();
    let mut rng = RngState::new(seed);
    SeparableModel::new(&[1, 3, 3, rank * m], rank, m, &spec, &bounds, &names(d), &mut rng).unwrap()
}

fn grid_for(model: &SeparableModel, ns: &[usize]) -> FactorGrid {
    let axes = model
        .axis_maps()
        .iter()
        .zip(ns)
        .map(|(m, &n)| linspace(m.to_physical(-1.0), m.to_physical(1.0), n).unwrap())
        .collect();
    FactorGrid::unnamed(axes).unwrap()
}

#[test]
fn identity_net_is_exact() {
    let net = identity_net(&SplineSpec::new(5, 3).unwrap());
    for x in [-1.0, -0.3, 0.0, 0.77, 1.0] {
        assert!((net.forward(&[x]).unwrap()[0] - x).abs() < 1e-14);
    }
}

#[test]
fn axis_pass_counts_sum_of_lengths() {
    let model = random_model(3, 2, 1, 1);
    let grid = grid_for(&model, &[2, 2, 3]);
    model.eval_axes(&grid).unwrap();
    assert_eq!(model.counter().get(), 7);
    model.counter().reset();
    let keys = [
        FieldKey::new(0, Deriv::Value),
        FieldKey::new(0, Deriv::D1(0)),
        FieldKey::new(0, Deriv::D2(2)),
    ];
    model.eval_fields(&grid, &keys).unwrap();
    assert_eq!(model.counter().get(), 7);
}

#[test]
fn product_of_identities() {
    let spec = SplineSpec::new(3, 3).unwrap();
    let nets = vec![identity_net(&spec), identity_net(&spec)];
    let model = SeparableModel::from_nets(nets, 1, 1, &[(0.0, 4.0), (-1.0, 1.0)], &names(2)).unwrap();
    let grid = FactorGrid::unnamed(vec![linspace(0.0, 4.0, 5).unwrap(), linspace(-1.0, 1.0, 3).unwrap()]).unwrap();
    let ax = model.eval_axes(&grid).unwrap();
    let u = ax.combine(&[0, 0], 0).unwrap();
    let ux = ax.combine(&[1, 0], 0).unwrap();
    let uy = ax.combine(&[0, 1], 0).unwrap();
    let uxx = ax.combine(&[2, 0], 0).unwrap();
    let uxy = ax.combine(&[1, 1], 0).unwrap();
    for (a, &x) in grid.axis(0).points().iter().enumerate() {
        for (b, &y) in grid.axis(1).points().iter().enumerate() {
            let xi = (x - 2.0) / 2.0;
            assert!((u.get(&[a, b]) - xi * y).abs() < 1e-14);
            assert!((ux.get(&[a, b]) - y / 2.0).abs() < 1e-13);
            assert!((uy.get(&[a, b]) - xi).abs() < 1e-13);
            assert!(uxx.get(&[a, b]).abs() < 1e-12);
            assert!((uxy.get(&[a, b]) - 0.5).abs() < 1e-13);
        }
    }
}

#[test]
fn derivative_fields_match_point_differences() {
    let model = random_model(3, 3, 2, 7);
    let grid = grid_for(&model, &[4, 3, 5]);
    let ax = model.eval_axes(&grid).unwrap();
    let h = 1e-4;
    let pts = tensor_points(&grid);
    for c in 0..2 {
        for a in 0..3 {
            let mut o1 = vec![0u8; 3];
            o1[a] = 1;
            let mut o2 = vec![0u8; 3];
            o2[a] = 2;
            let f1 = ax.combine(&o1, c).unwrap();
            let f2 = ax.combine(&o2, c).unwrap();
            let (lo, hi) = (grid.axis(a).lo(), grid.axis(a).hi());
            for (p, pt) in pts.iter().enumerate() {
                // stay inside the domain so the stencil never leaves it
                if pt[a] - 2.0 * h < lo || pt[a] + 2.0 * h > hi {
                    continue;
                }
                let shifted: Vec<Vec<f64>> = [-2.0, -1.0, 0.0, 1.0, 2.0]
                    .iter()
                    .map(|s| {
                        let mut q = pt.clone();
                        q[a] += s * h;
                        q
                    })
                    .collect();
                let v = model.eval_points(&shifted).unwrap();
                let g = |i: usize| v[i][c];
                let d1 = (g(0) - 8.0 * g(1) + 8.0 * g(3) - g(4)) / (12.0 * h);
                let d2 = (-g(0) + 16.0 * g(1) - 30.0 * g(2) + 16.0 * g(3) - g(4)) / (12.0 * h * h);
                assert!((f1.values()[p] - d1).abs() < 1e-6 * (1.0 + d1.abs()), "d1 axis {a}");
                assert!((f2.values()[p] - d2).abs() < 1e-4 * (1.0 + d2.abs()), "d2 axis {a}");
            }
        }
    }
}

#[test]
fn eval_points_agrees_with_grid() {
    let model = random_model(3, 4, 2, 3);
    let grid = grid_for(&model, &[3, 4, 2]);
    let fields = model.eval_grid(&grid).unwrap();
    let pts = tensor_points(&grid);
    let vals = model.eval_points(&pts).unwrap();
    for (p, v) in vals.iter().enumerate() {
        for c in 0..2 {
            assert!((v[c] - fields[c].values()[p]).abs() < 1e-12);
        }
    }
}

#[test]
fn rank_padding_is_bitwise_neutral() {
    let model = random_model(2, 3, 2, 11);
    let padded = model.pad_rank(5).unwrap();
    assert_eq!(padded.rank(), 5);
    let grid = grid_for(&model, &[6, 7]);
    let a = model.eval_axes(&grid).unwrap();
    let b = padded.eval_axes(&grid).unwrap();
    for orders in [[0u8, 0], [1, 0], [0, 2], [1, 1]] {
        for c in 0..2 {
            let fa = a.combine(&orders, c).unwrap();
            let fb = b.combine(&orders, c).unwrap();
            for (x, y) in fa.values().iter().zip(fb.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}

#[test]
fn combine_rejects_bad_requests() {
    let model = random_model(2, 2, 1, 0);
    let ax = model.eval_axes(&grid_for(&model, &[3, 3])).unwrap();
    assert!(matches!(ax.combine(&[3, 0], 0), Err(Error::Unsupported(_))));
    assert!(ax.combine(&[0], 0).is_err());
    assert!(ax.combine(&[0, 0], 1).is_err());
    let wrong = DenseField::zeros(vec![3, 4]);
    assert!(ax.backward_combine(&[0, 0], 0, &wrong).is_err());
}

#[test]
fn out_of_domain_points_are_rejected() {
    let model = random_model(2, 2, 1, 0);
    assert!(matches!(
        model.eval_points(&[vec![5.0, 0.0]]),
        Err(Error::Domain { .. })
    ));
}

fn brute_combine(ax: &AxisEval, orders: &[u8], c: usize) -> Vec<f64> {
    let shape = ax.shape();
    let (r, m) = (ax.rank, ax.n_fields);
    let mut out = Vec::new();
    for_each_index(&shape, |idx| {
        let mut s = 0.0;
        for j in 0..r {
            let mut p = 1.0;
            for (i, &pi) in idx.iter().enumerate() {
                p *= ax.axes[i].by_order(orders[i])[pi * r * m + j * m + c];
            }
            s += p;
        }
        out.push(s);
    });
    out
}

fn random_axis_eval(shape: &[usize], r: usize, m: usize, rng: &mut RngState) -> AxisEval {
    let mut axes = Vec::new();
    for &n in shape {
        let mut a = AxisFactors::zeros(n, r * m);
        for v in a.f.iter_mut().chain(a.d1.iter_mut()).chain(a.d2.iter_mut()) {
            *v = rng.normal();
        }
        axes.push(a);
    }
    AxisEval {
        rank: r,
        n_fields: m,
        axes,
    }
}

fn dot_axes(a: &AxisEval, b: &AxisEval) -> f64 {
    a.axes
        .iter()
        .zip(&b.axes)
        .map(|(x, y)| {
            let f = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).sum::<f64>();
            f(&x.f, &y.f) + f(&x.d1, &y.d1) + f(&x.d2, &y.d2)
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn combine_matches_brute_force(
        shape in prop::collection::vec(1usize..5, 1..5),
        r in 1usize..4,
        m in 1usize..3,
        seed in any::<u64>(),
        order_seed in any::<u64>(),
    ) {
        let mut rng = RngState::new(seed);
        let ax = random_axis_eval(&shape, r, m, &mut rng);
        let orders: Vec<u8> = (0..shape.len()).map(|i| ((order_seed >> (2 * i)) % 3) as u8).collect();
        for c in 0..m {
            let fast = ax.combine(&orders, c).unwrap();
            let slow = brute_combine(&ax, &orders, c);
            for (a, b) in fast.values().iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    // <cot, J dG> == <J^T cot, dG> for the multilinear combine map
    #[test]
    fn backward_combine_is_the_adjoint(
        shape in prop::collection::vec(1usize..5, 1..5),
        r in 1usize..4,
        seed in any::<u64>(),
        order_seed in any::<u64>(),
    ) {
        let mut rng = RngState::new(seed);
        let m = 2;
        let ax = random_axis_eval(&shape, r, m, &mut rng);
        let dg = random_axis_eval(&shape, r, m, &mut rng);
        let n: usize = shape.iter().product();
        let cot = DenseField::new(shape.clone(), (0..n).map(|_| rng.normal()).collect()).unwrap();
        let orders: Vec<u8> = (0..shape.len()).map(|i| ((order_seed >> (2 * i)) % 3) as u8).collect();
        let c = 1;
        let adj = ax.backward_combine(&orders, c, &cot).unwrap();
        // directional derivative of the multilinear map: sum over axes with
        // one factor replaced by its perturbation
        let mut jdg = vec![0.0; n];
        for k in 0..shape.len() {
            let mut mixed = ax.clone();
            mixed.axes[k] = dg.axes[k].clone();
            for (acc, v) in jdg.iter_mut().zip(mixed.combine(&orders, c).unwrap().values()) {
                *acc += v;
            }
        }
        let lhs: f64 = cot.values().iter().zip(&jdg).map(|(a, b)| a * b).sum();
        let rhs = dot_axes(&adj, &dg);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }
}

fn field_loss(model: &SeparableModel, grid: &FactorGrid, keys: &[FieldKey], weights: &[f64]) -> f64 {
    let (fs, _) = model.eval_fields(grid, keys).unwrap();
    keys.iter()
        .zip(weights)
        .map(|(&k, w)| 0.5 * w * fs.get(k).unwrap().iter().map(|v| v * v).sum::<f64>())
        .sum()
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    let model = random_model(2, 3, 1, 5);
    let grid = grid_for(&model, &[5, 5]);
    let keys = [
        FieldKey::new(0, Deriv::Value),
        FieldKey::new(0, Deriv::D1(0)),
        FieldKey::new(0, Deriv::D2(1)),
    ];
    let weights = [1.0, 0.7, 0.3];
    let (fs, tape) = model.eval_fields(&grid, &keys).unwrap();
    let mut cot = FieldSet::zeros(&grid.shape(), &keys);
    for (&k, &w) in keys.iter().zip(&weights) {
        let src = fs.get(k).unwrap().to_vec();
        for (c, v) in cot.get_mut(k).unwrap().iter_mut().zip(src) {
            *c = w * v;
        }
    }
    let mut grad = vec![0.0; model.num_params()];
    model.backward_fields(&tape, &cot, &mut grad).unwrap();

    let p0 = model.params();
    let h = 1e-5;
    let mut probe = model.clone();
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] = p0[i] + h;
        probe.set_params(&p).unwrap();
        let lp = field_loss(&probe, &grid, &keys, &weights);
        p[i] = p0[i] - h;
        probe.set_params(&p).unwrap();
        let lm = field_loss(&probe, &grid, &keys, &weights);
        let fd = (lp - lm) / (2.0 * h);
        assert!(
            (grad[i] - fd).abs() <= 1e-4 * fd.abs() + 1e-7,
            "param {i}: analytic {} vs fd {fd}",
            grad[i]
        );
    }
}

#[test]
fn singleton_axis_grids_work() {
    let model = random_model(2, 2, 1, 9);
    let lo = model.axis_maps()[0].to_physical(-1.0);
    let hi = model.axis_maps()[0].to_physical(1.0);
    let grid = grid_for(&model, &[4, 4]).with_axis(0, Grid1D::singleton(lo, lo, hi).unwrap());
    let u = model.eval_grid(&grid).unwrap();
    assert_eq!(u[0].shape(), &[1, 4]);
    let pts = tensor_points(&grid);
    let v = model.eval_points(&pts).unwrap();
    for (p, row) in v.iter().enumerate() {
        assert!((row[0] - u[0].values()[p]).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_restores_model() {
    let model = random_model(3, 2, 2, 21);
    let text = crate::kanet::write_checkpoint(&model.to_checkpoint());
    let nets = crate::kanet::read_checkpoint(&text, "mem").unwrap();
    let mut other = random_model(3, 2, 2, 22);
    other.load_checkpoint(&nets).unwrap();
    assert_eq!(other.params(), model.params());
}
