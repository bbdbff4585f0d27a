use super::*;
use crate::physics::helmholtz_exact;
use crate::reference::write_profiles;
use crate::tensorgrid::tensor_points;

fn config(text: &str, dir: &Path) -> TrainConfig {
    let text = format!("{text}\nout_dir = {:?}\n", dir.display().to_string());
    TrainConfig::from_toml(&text, "test").unwrap()
}

const HELMHOLTZ: &str = r#"
problem = "helmholtz2d"
method = "separable"
widths = [1, 3, 3, 5]
r = 5
k = 3
n_cp = [8, 8]
epochs = 15
checkpoint_every = 10
eval_n = [12, 12]
reference_params = 454
"#;

#[test]
fn train_writes_a_self_describing_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = config(HELMHOLTZ, &dir);
    let report = cmd_train(&cfg).unwrap();
    for f in [
        CONFIG_FILE,
        TRACE_FILE,
        CHECKPOINT_FILE,
        REPORT_FILE,
        "fields/pred_u.field",
        "fields/error_u.field",
    ] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let first = read_text(&dir.join(REPORT_FILE)).unwrap();
    let again = cmd_eval(&dir, None).unwrap();
    assert_eq!(read_text(&dir.join(REPORT_FILE)).unwrap(), first);
    assert_eq!(again, report);

    assert_eq!(report.params.count, 2 * (3 + 9 + 15) * 7);
    assert_eq!(report.params.difference, Some(378 - 454));
    assert_eq!(report.timing.iterations, 15);
    assert_eq!(report.timing.warmup, 10);
    // Per iteration: 6 + 6 interior points, 8 points on each of two axes
    // for each of the four faces.
    assert_eq!(report.evals.interior_per_iter, 12);
    assert_eq!(report.evals.bc_per_iter, 4 * (8 + 1));
    assert_eq!(report.evals.total, 15 * (12 + 36));
    assert_eq!(report.loss.bc_faces.len(), 4);
    assert!(report.speedup.is_none());
    assert_eq!(report.config, cfg);
}

#[test]
fn reported_l2_matches_manual_composition() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    cmd_train(&config(HELMHOLTZ, &dir)).unwrap();
    let report = cmd_eval(&dir, Some(&[16, 9])).unwrap();
    assert!(dir.join("eval-16x9/report.toml").exists());
    assert_eq!(report.eval_shape, vec![16, 9]);

    let (_, model) = load_run(&dir).unwrap();
    let AnyModel::Separable(m) = model else { panic!() };
    let grid = eval_grid(&Problem::Helmholtz2d.spec(), &[16, 9]).unwrap();
    let pts = tensor_points(&grid);
    let pred: Vec<f64> = m.eval_points(&pts).unwrap().into_iter().map(|v| v[0]).collect();
    let exact: Vec<f64> = pts.iter().map(|p| helmholtz_exact(p[0], p[1])).collect();
    let l2 = relative_l2(
        &DenseField::new(vec![16, 9], pred).unwrap(),
        &DenseField::new(vec![16, 9], exact).unwrap(),
    )
    .unwrap();
    assert!((report.l2["u"] - l2).abs() <= 1e-12 * l2, "{} vs {l2}", report.l2["u"]);
}

#[test]
fn identical_configs_train_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        cmd_train(&config(HELMHOLTZ, &dir)).unwrap();
        let trace = TrainTrace::rows_from_csv(&read_text(&dir.join(TRACE_FILE)).unwrap(), "t").unwrap();
        let losses: Vec<[u64; 4]> = trace
            .iter()
            .map(|r| [r.l_pde.to_bits(), r.l_ic.to_bits(), r.l_bc.to_bits(), r.total.to_bits()])
            .collect();
        (losses, read_text(&dir.join(CHECKPOINT_FILE)).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn dense_run_with_baseline_speedup() {
    let tmp = tempfile::tempdir().unwrap();
    let base_dir = tmp.path().join("dense");
    let dense = HELMHOLTZ
        .replace("widths = [1, 3, 3, 5]", "widths = [2, 3, 1]")
        .replace("r = 5\n", "")
        .replace("separable", "dense");
    let base = cmd_train(&config(&dense, &base_dir)).unwrap();
    assert_eq!(base.method, "dense");
    // Value plus two directions over the 36 interior points; faces use values only.
    assert_eq!(base.evals.interior_per_iter, 3 * 36);

    let sep = format!("{HELMHOLTZ}baseline = {:?}\n", base_dir.display().to_string());
    let report = cmd_train(&config(&sep, &tmp.path().join("sep"))).unwrap();
    let s = report.speedup.unwrap();
    assert!(s.wall_clock > 0.0 && s.wall_clock.is_finite());
    assert_eq!(
        s.eval_ratio,
        base.evals.per_iter() as f64 / report.evals.per_iter() as f64
    );
}

#[test]
fn klein_gordon_time_series() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("kg");
    let text = r#"
problem = "kleingordon2d1t"
method = "separable"
widths = [1, 3, 3, 4]
r = 4
k = 3
n_cp = [4, 4, 5]
epochs = 3
eval_n = [5, 5, 6]
"#;
    let report = cmd_train(&config(text, &dir)).unwrap();
    assert_eq!(report.reference, "analytic");
    let csv = read_text(&dir.join("l2_over_time_u.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(report.diagnostics["l2_over_time_u_mean"].is_finite());
    let (f, h) = DenseField::read_file(&dir.join("fields/mean_abs_error_u.field")).unwrap();
    assert_eq!(f.shape(), &[5, 5]);
    assert_eq!(h["axes"], "x y");
    assert!(report.evals.ic_per_iter > 0);
}

#[test]
fn allen_cahn_scored_on_interior_with_cached_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ac");
    let text = r#"
problem = "allencahn1d1t"
method = "separable"
widths = [1, 3, 2]
r = 2
k = 3
n_cp = [9, 5]
epochs = 2
ref_nx = 64
ref_nt = 100
eval_n = [65, 11]
"#;
    let report = cmd_train(&config(text, &dir)).unwrap();
    assert!(dir.join(AC_CACHE_FILE).exists());
    assert!(report.reference.starts_with("pseudospectral"));
    assert!(report.diagnostics["reference_boundary_discrepancy"] < 1e-3);
    assert!(report.l2["u"].is_finite());
    assert!(report.diagnostics.contains_key("l2_u_with_boundary"));
    assert_eq!(cmd_eval(&dir, None).unwrap(), report);
}

#[test]
fn cavity_diagnostics_and_profiles() {
    let tmp = tempfile::tempdir().unwrap();
    let profiles = tmp.path().join("centerline.csv");
    write_profiles(
        &profiles,
        &[
            Profile {
                name: "u_vs_y".into(),
                coords: vec![0.0, 0.5, 1.0],
                values: vec![0.0, -0.2, 1.0],
            },
            Profile {
                name: "v_vs_x".into(),
                coords: vec![0.0, 0.5, 1.0],
                values: vec![0.0, 0.05, 0.0],
            },
        ],
    )
    .unwrap();
    let dir = tmp.path().join("cavity");
    let text = format!(
        r#"
problem = "cavity2d"
method = "separable"
widths = [1, 3, 6]
r = 2
k = 3
n_cp = [6, 6]
epochs = 2
eval_n = [7, 7]
external_profiles = {:?}
"#,
        profiles.display().to_string()
    );
    let report = cmd_train(&config(&text, &dir)).unwrap();
    assert_eq!(report.reference, "none");
    assert!(report.l2.is_empty());
    for k in [
        "continuity_rms",
        "midpoint_continuity_rms",
        "midpoint_momentum_x_rms",
        "profile_u_vs_y_max_abs_diff",
    ] {
        assert!(report.diagnostics[k].is_finite(), "{k}");
    }
    assert!(report.loss.bc_faces.contains_key("y=1"));
    let cmp = read_text(&dir.join("profiles_comparison.csv")).unwrap();
    assert_eq!(cmp.lines().count(), 7);
    let (p, _) = DenseField::read_file(&dir.join("fields/pred_p_normalized.field")).unwrap();
    let max = p.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((max - 1.0).abs() < 1e-12);
}

#[test]
fn bench_same_config_has_unit_eval_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(HELMHOLTZ, tmp.path());
    let b = cmd_bench(&cfg, &cfg, 12).unwrap();
    assert_eq!(b.eval_ratio, 1.0);
    assert!(b.speedup > 0.0 && b.speedup.is_finite() && b.noise.is_finite());
    assert_eq!(b.warmup, 10);
    assert!(b.to_toml().contains("[candidate]"));
    assert!(cmd_bench(&cfg, &cfg, 0).is_err());
}

#[test]
fn references_are_cached_or_sampled() {
    let tmp = tempfile::tempdir().unwrap();
    let a = cmd_reference(Problem::AllenCahn1d1t, &[64, 100], tmp.path(), false).unwrap();
    assert!(!a.reused);
    let b = cmd_reference(Problem::AllenCahn1d1t, &[64, 100], tmp.path(), false).unwrap();
    assert!(b.reused && b.path == a.path);

    let h = cmd_reference(Problem::Helmholtz2d, &[7, 5], tmp.path(), false).unwrap();
    let (f, header) = DenseField::read_file(&h.path).unwrap();
    assert_eq!(f.shape(), &[7, 5]);
    assert_eq!(header["bounds"], "-1.0 1.0 -1.0 1.0");
    assert_eq!(f.get(&[1, 1]), helmholtz_exact(-1.0 + 2.0 / 6.0, -0.5));

    let kg = cmd_reference(Problem::KleinGordon2d1t, &[5, 5, 5], tmp.path(), false).unwrap();
    assert!(kg.path.exists());
    assert!(matches!(
        cmd_reference(Problem::Cavity2d, &[5, 5], tmp.path(), false),
        Err(Error::Unsupported(_))
    ));
    assert!(cmd_reference(Problem::AllenCahn1d1t, &[64], tmp.path(), false).is_err());
}

#[test]
fn missing_run_files_are_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(cmd_eval(tmp.path(), None), Err(Error::Io { .. })));
}
