use motorkpi_core::dataset::*;
use motorkpi_core::fe::Oracle;
use motorkpi_core::geometry::{build_template, TemplateKind};
use motorkpi_core::Error;
use proptest::prelude::*;

fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn lhs_marginals_pass_ks(seed in any::<u64>()) {
        let t = build_template(TemplateKind::HalfPoleV);
        let specs = &t.params()[..2];
        let pts = lhs(100, specs, seed).unwrap();
        for (d, s) in specs.iter().enumerate() {
            let u: Vec<f64> = pts.iter().map(|p| (p[d] - s.min) / s.range()).collect();
            prop_assert!(ks_uniform(u) < 0.136);
        }
    }
}

#[test]
fn small_dataset_round_trip_and_determinism() {
    let t = build_template(TemplateKind::FullPoleVc);
    let oracle = Oracle::for_template(&t);
    let ds = generate(&t, 20, &[(64, 64)], &oracle, 17).unwrap();
    let m = &ds.manifest;
    assert_eq!((m.split.train.len(), m.split.val.len(), m.split.test.len()), (18, 1, 1));
    assert_eq!(ds.samples.len(), 20);
    assert_eq!(m.candidates_drawn, 20 + m.rejected_infeasible + m.rejected_oracle);
    for s in &ds.samples {
        assert!(t.is_feasible(&s.p).unwrap());
        let y = &s.kpis.values;
        assert!(y.iter().all(|v| v.is_finite()));
        assert!(y[0] > 0.0 && y[3] > 0.0 && y[4] > 0.0 && y[5] > 0.0 && y[2] >= 0.0);
        assert_eq!(s.kpis, oracle.evaluate(&t, &s.p).unwrap());
        let g = &s.grids[&(64, 64)];
        assert_eq!((g.width_px, g.height_px), (64, 64));
    }

    // statistics come from the training split only
    let train = &m.split.train;
    let expect = normalization_stats(&ds.params_matrix(train), &ds.kpi_matrix(train)).unwrap();
    assert_eq!(m.normalization, expect);

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ds.write(a.path()).unwrap();
    generate(&t, 20, &[(64, 64)], &oracle, 17).unwrap().write(b.path()).unwrap();
    for name in ["manifest.json", "dataset.csv", "samples/000007.rec", "grids/000007_64x64.pxg"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    assert_eq!(std::fs::read_dir(a.path().join("samples")).unwrap().count(), m.n_samples);
    let csv = std::fs::read_to_string(a.path().join("dataset.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    let back = Dataset::load(a.path()).unwrap();
    assert_eq!(back, ds);

    let ex = ds.examples(&m.split.train, ModelInput::Params).unwrap();
    assert_eq!(ex.len(), 18);
    assert!(ex.x.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(ds.examples(&m.split.train, ModelInput::Image { resolution: (32, 32), one_hot: false }).is_err());
    let img = ds.examples(&m.split.test, ModelInput::ImageParams { resolution: (64, 64), one_hot: true }).unwrap();
    assert_eq!(img.x.len(), 4 * 64 * 64);
    assert_eq!(img.aux.len(), 12);
}

#[test]
fn low_feasibility_aborts() {
    let t = build_template(TemplateKind::FullPoleVc);
    let opts = GenerateOptions { min_feasible_rate: 0.99, ..Default::default() };
    let r = generate_with(&t, 20, &[(32, 32)], &Oracle::for_template(&t), 1, &opts);
    assert!(matches!(r, Err(Error::Infeasible { .. })), "{r:?}");
    assert!(generate(&t, 19, &[(32, 32)], &Oracle::for_template(&t), 1).is_err());
    assert!(generate(&t, 20, &[(0, 32)], &Oracle::for_template(&t), 1).is_err());
}
