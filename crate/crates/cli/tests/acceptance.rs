//! Acceptance suite. Runs every criterion in sequence (timings are measured
//! on an otherwise idle process) and prints one PASS/FAIL line per criterion.
//! Lines go straight to stdout so they show without `--nocapture`.

use std::f64::consts::PI;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use motorkpi_core::dataset::{encode_grid, generate, Dataset};
use motorkpi_core::eval::{compare_parameter_models, mre, pcc};
use motorkpi_core::fe::{magnet_rhs, LinearSystem, MaterialPhysics, Oracle, SolverOptions};
use motorkpi_core::geometry::{build_template, Material, TemplateKind};
use motorkpi_core::gpr;
use motorkpi_core::moo::{self, Objective, OracleEvaluator, SurrogateEvaluator};
use motorkpi_core::raster::{feature_pixel_extent, precision, rasterize, PixelGrid};
use motorkpi_core::surrogate::{evaluate_model, fit_surrogate, resolution_study, ModelKind, ModelSpec, Surrogate};
use motorkpi_nn::gradcheck::check_layer;
use motorkpi_nn::train::{evaluate_mse, train_monitored};
use motorkpi_nn::{build_dcnn, build_dnn, predict_examples, train, Examples, InputKind, LayerSpec, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DATA_SEED: u64 = 2024;
const RESOLUTIONS: [(usize, usize); 3] = [(32, 32), (64, 64), (128, 128)];
/// Training budget shared by every network of the resolution study.
const STUDY_TRAIN: usize = 600;
const STUDY_EPOCHS: usize = 30;
const STUDY_SEEDS: [u64; 3] = [1, 2, 3];

struct Shared {
    dataset: Option<Dataset>,
    generation_s: f64,
    dnn: Option<Surrogate>,
    dnn_table: Option<motorkpi_core::eval::EvalTable>,
}

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn c1_metrics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..100);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..50.0) * if rng.gen_bool(0.3) { -1.0 } else { 1.0 }).collect();
        let p: Vec<f64> = y.iter().map(|v| v + rng.gen_range(-2.0..2.0)).collect();
        let nf = n as f64;
        let b_mre = 100.0 * y.iter().zip(&p).map(|(a, b)| ((a - b) / a).abs()).sum::<f64>() / nf;
        let (my, mp) = (y.iter().sum::<f64>() / nf, p.iter().sum::<f64>() / nf);
        let sxy: f64 = y.iter().zip(&p).map(|(a, b)| (a - my) * (b - mp)).sum();
        let sxx: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
        let syy: f64 = p.iter().map(|b| (b - mp).powi(2)).sum();
        let b_pcc = sxy / (sxx * syy).sqrt();
        worst = worst.max((mre(&y, &p).map_err(|e| e.to_string())? - b_mre).abs());
        worst = worst.max((pcc(&y, &p).map_err(|e| e.to_string())? - b_pcc).abs());
    }
    let hand = mre(&[2.0, 4.0], &[1.0, 5.0]).map_err(|e| e.to_string())?;
    let t = start.elapsed().as_secs_f64();
    check(worst < 1e-12, format!("max |delta| {worst:e}"))?;
    check(hand == 37.5, format!("hand case gave {hand}"))?;
    check(t < 1.0, format!("took {t:.2}s"))?;
    Ok(format!("max |delta| {worst:.1e}, hand case {hand}%, {t:.3}s"))
}

fn c2_raster() -> Outcome {
    let p = [precision(50.0, 136), precision(50.0, 272), precision(50.0, 544)];
    for (got, want) in p.iter().zip([0.3676, 0.1838, 0.0919]) {
        check((got - want).abs() <= 1e-4, format!("precision {got} vs {want}"))?;
    }
    let px = [
        feature_pixel_extent(9.4859 - 7.1938, 0.3676),
        feature_pixel_extent(155.3637 - 141.699, 0.3676),
        feature_pixel_extent(1.4895 - 0.8528, 0.0919),
    ];
    check(px == [7, 38, 7], format!("pixel extents {px:?}"))?;
    Ok(format!("precisions {:.4}/{:.4}/{:.4}, extents {px:?}", p[0], p[1], p[2]))
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for kind in 0..5 {
        for _ in 0..20 {
            let seed = rng.gen();
            let batch = rng.gen_range(1..4);
            let (c, h, w) = (rng.gen_range(1..3), rng.gen_range(4..9), rng.gen_range(4..9));
            let (spec, shape) = match kind {
                0 => {
                    let i = rng.gen_range(1..10);
                    (LayerSpec::Dense { inputs: i, outputs: rng.gen_range(1..10) }, vec![i])
                }
                1 => (
                    LayerSpec::Conv2d {
                        in_channels: c,
                        kernels: rng.gen_range(1..4),
                        ksize: rng.gen_range(1..4),
                        stride: rng.gen_range(1..3),
                    },
                    vec![c, h, w],
                ),
                2 => (LayerSpec::Elu, vec![c, h, w]),
                3 => (LayerSpec::Flatten, vec![c, h, w]),
                _ => (LayerSpec::ConcatAux { aux_dim: rng.gen_range(1..5) }, vec![rng.gen_range(1..8)]),
            };
            let g = check_layer(spec.clone(), &shape, batch, seed).map_err(|e| e.to_string())?;
            check(g.max_error() < 1e-5, format!("{spec:?} {shape:?}: {:e}", g.max_error()))?;
            worst = worst.max(g.max_error());
            cases += 1;
        }
    }
    let t = start.elapsed().as_secs_f64();
    check(t < 30.0, format!("took {t:.1}s"))?;
    Ok(format!("{cases} cases over 5 layer kinds, max rel. error {worst:.1e}, {t:.2}s"))
}

fn air_grid(n: usize, wmm: f64, hmm: f64) -> PixelGrid {
    let mut g = PixelGrid::uniform(n, n, wmm, hmm, Material::Air);
    g.magnet_dir = Some((vec![0.0; n * n], vec![0.0; n * n]));
    g
}

fn c4_solver() -> Outcome {
    let start = Instant::now();
    let (wmm, hmm) = (40.0, 30.0);
    let phys = MaterialPhysics::default();
    let mut errs = Vec::new();
    for n in [32usize, 64, 128] {
        let sys = LinearSystem::assemble(&air_grid(n, wmm, hmm), &phys, 0).map_err(|e| e.to_string())?;
        let (hx, hy) = sys.spacing_m();
        let (wm, hm) = (wmm * 1e-3, hmm * 1e-3);
        let exact = |i: usize, j: usize| (2.0 * PI * j as f64 * hx / wm).sin() * (PI * (hm - i as f64 * hy) / hm).sin();
        let k2 = (2.0 * PI / wm).powi(2) + (PI / hm).powi(2);
        let mut b = vec![0.0; sys.n_unknowns()];
        for i in 1..n {
            for j in 0..n {
                b[(i - 1) * n + j] = phys.nu_air * k2 * exact(i, j) * hx * hy;
            }
        }
        let sol = sys.solve(&b, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let mut e = 0.0f64;
        for i in 0..=n {
            for j in 0..=n {
                e = e.max((sol.at(i, j) - exact(i, j)).abs());
            }
        }
        errs.push(e);
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    check(orders.iter().all(|&o| o >= 1.9), format!("orders {orders:?}"))?;

    let t = build_template(TemplateKind::FullPoleVc);
    let g = rasterize(&t.build_cross_section(&t.midpoint()).map_err(|e| e.to_string())?, 64, 80).map_err(|e| e.to_string())?;
    let tp = MaterialPhysics::for_template(&t);
    let sys = LinearSystem::assemble(&g, &tp, 0).map_err(|e| e.to_string())?;
    let quiet = MaterialPhysics {
        remanence_t: 0.0,
        j_amp: 0.0,
        ..tp.clone()
    };
    let b0 = magnet_rhs(&g, &quiet, 0).map_err(|e| e.to_string())?;
    let z = sys.solve(&b0, &SolverOptions::default()).map_err(|e| e.to_string())?;
    check(z.is_zero(), "zero source gave a nonzero field")?;
    let b = magnet_rhs(&g, &tp, 0).map_err(|e| e.to_string())?;
    let neg: Vec<f64> = b.iter().map(|v| -v).collect();
    let tight = SolverOptions::default();
    let (a, an) = (sys.solve(&b, &tight).map_err(|e| e.to_string())?, sys.solve(&neg, &tight).map_err(|e| e.to_string())?);
    let dev = a.a.iter().zip(&an.a).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
    check(dev <= 1e-12, format!("negated source deviates by {dev:e}"))?;
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("orders {:.3}/{:.3}, zero source exact, negation dev {dev:.1e}, {secs:.2}s", orders[0], orders[1]))
}

fn c5_architecture() -> Outcome {
    let a = build_dnn(56, 11).map_err(|e| e.to_string())?.arch_string();
    let b = build_dnn(12, 10).map_err(|e| e.to_string())?.arch_string();
    check(a == "56-448-250-224-224-198-11", a.clone())?;
    check(b == "12-448-250-224-224-198-10", b.clone())?;
    Ok(format!("{a}, {b}"))
}

fn regression(n: usize, seed: u64) -> Examples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    let y: Vec<f64> = x.chunks(3).flat_map(|r| [r[0] * r[1] - r[2], (3.0 * r[0]).sin() + r[2]]).collect();
    Examples::new(InputKind::Scalar { features: 3 }, x, Vec::new(), y, 2).unwrap()
}

fn c6_early_stopping() -> Outcome {
    let (tr, va) = (regression(100, 1), regression(20, 2));
    let injected = [0.5, 0.4, 0.3, 0.31, 0.32, 0.33, 0.34, 0.35, 0.01, 0.01];
    let cfg = TrainConfig {
        batch_size: 25,
        seed: 3,
        ..Default::default()
    };
    let mut measured = Vec::new();
    let mut net = build_dnn(3, 2).map_err(|e| e.to_string())?.with_seed(1);
    let r = train_monitored(&mut net, &tr, &va, &cfg, |e, m| {
        measured.push(m);
        injected[e - 1]
    })
    .map_err(|e| e.to_string())?;
    check(r.stopped_early && r.epochs_run() == 8 && r.best_epoch == 3, format!("{} epochs, best {}", r.epochs_run(), r.best_epoch))?;
    let restored = evaluate_mse(&net, &va, 25).map_err(|e| e.to_string())?;
    let d1 = (restored - measured[2]).abs();
    check(d1 < 1e-12, format!("restored MSE off by {d1:e}"))?;

    let mut net = build_dnn(3, 2).map_err(|e| e.to_string())?.with_seed(7);
    let real = TrainConfig {
        max_epochs: 60,
        batch_size: 30,
        learning_rate: 1e-3,
        seed: 6,
        ..Default::default()
    };
    let r2 = train(&mut net, &regression(300, 4), &regression(30, 5), &real).map_err(|e| e.to_string())?;
    let min = r2.val_mse.iter().cloned().fold(f64::INFINITY, f64::min);
    let d2 = (evaluate_mse(&net, &regression(30, 5), 30).map_err(|e| e.to_string())? - min).abs();
    check(d2 < 1e-12, format!("restored MSE off curve minimum by {d2:e}"))?;
    Ok(format!("stopped after epoch 8 restoring epoch 3 (|dMSE| {d1:.1e}); trained run |dMSE| {d2:.1e}"))
}

fn c7_end_to_end(sh: &mut Shared) -> Outcome {
    let start = Instant::now();
    let t = build_template(TemplateKind::FullPoleVc);
    check(t.n_params() == 12, "template must have 12 parameters")?;
    let ds = generate(&t, 2000, &RESOLUTIONS, &Oracle::for_template(&t), DATA_SEED).map_err(|e| e.to_string())?;
    sh.generation_s = start.elapsed().as_secs_f64();
    let s = &ds.manifest.split;
    check((s.train.len(), s.val.len(), s.test.len()) == (1800, 100, 100), "split sizes")?;
    let spec = ModelSpec {
        kind: ModelKind::Dnn,
        train: TrainConfig { seed: 1, ..Default::default() },
        ..Default::default()
    };
    let trained = fit_surrogate(&ds, &spec).map_err(|e| e.to_string())?;
    let table = evaluate_model(&trained.surrogate, &ds, &s.test).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let avg = table.average_mre().ok_or("average MRE not computable")?;
    let per: Vec<String> = table.rows.iter().map(|r| format!("{} {:.2}", r.name, r.mre.unwrap_or(f64::NAN))).collect();
    let get = |k: &str| table.mre_of(k).unwrap_or(f64::INFINITY);
    let ripple = get("torque_ripple");
    sh.dataset = Some(ds);
    sh.dnn = Some(trained.surrogate);
    sh.dnn_table = Some(table.clone());
    check(avg < 5.0, format!("average MRE {avg:.3}%"))?;
    for k in ["cost", "mass_iron", "mass_copper", "mass_magnet"] {
        check(get(k) < 2.0, format!("{k} MRE {:.3}%", get(k)))?;
    }
    check(table.rows.iter().all(|r| r.mre.unwrap_or(f64::INFINITY) <= ripple), "torque ripple is not the worst KPI")?;
    check(secs < 1800.0, format!("took {secs:.0}s"))?;
    Ok(format!("avg MRE {avg:.2}% [{}], data {:.0}s, total {secs:.0}s", per.join(", "), sh.generation_s))
}

fn c8_resolution(sh: &Shared) -> Outcome {
    let ds = sh.dataset.as_ref().ok_or("dataset unavailable")?;
    let spec = ModelSpec {
        kind: ModelKind::Dcnn,
        max_train: Some(STUDY_TRAIN),
        train: TrainConfig {
            max_epochs: STUDY_EPOCHS,
            ..Default::default()
        },
        ..Default::default()
    };
    let r = resolution_study(ds, &RESOLUTIONS, &spec, &STUDY_SEEDS).map_err(|e| e.to_string())?;
    let per_seed: Vec<String> = STUDY_SEEDS
        .iter()
        .map(|&s| {
            let m: Vec<String> = RESOLUTIONS.iter().map(|&res| format!("{:.2}", r.run(res, s).unwrap().mean_mre())).collect();
            format!("seed {s}: {}", m.join("/"))
        })
        .collect();
    let wins = r.seeds_finest_beats_coarsest();
    check(wins >= 2, format!("128x128 beats 32x32 in {wins} of 3 seeds [{}]", per_seed.join("; ")))?;
    Ok(format!("128x128 beats 32x32 in {wins}/3 seeds, MRE 32/64/128 [{}]", per_seed.join("; ")))
}

fn c9_reparametrization() -> Outcome {
    let tm = build_template(TemplateKind::PlateMargin);
    let te = build_template(TemplateKind::PlateExtent);
    let (w, h) = (tm.domain_width_mm(), tm.domain_height_mm());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (side, n) = (64usize, 80usize);
    let mut margin = Vec::new();
    let mut extent = Vec::new();
    for _ in 0..n {
        let (a, b) = (rng.gen_range(5.0..20.0), rng.gen_range(5.0..30.0));
        let pm = tm.design(vec![a, b]).map_err(|e| e.to_string())?;
        let pe = te.design(vec![h - b, w - 2.0 * a]).map_err(|e| e.to_string())?;
        let gm = rasterize(&tm.build_cross_section(&pm).map_err(|e| e.to_string())?, side, side).map_err(|e| e.to_string())?;
        let ge = rasterize(&te.build_cross_section(&pe).map_err(|e| e.to_string())?, side, side).map_err(|e| e.to_string())?;
        check(gm.materials == ge.materials, format!("rasters differ for a={a}, b={b}"))?;
        margin.push((gm, (w - 2.0 * a) * (h - b) / (w * h)));
        extent.push(ge);
    }
    let enc = |grids: &[&PixelGrid]| -> Vec<f64> {
        let mut x = Vec::new();
        for g in grids {
            encode_grid(g, false, &mut x);
        }
        x
    };
    let kind = InputKind::Image {
        channels: 1,
        height: side,
        width: side,
    };
    let mg: Vec<&PixelGrid> = margin.iter().map(|(g, _)| g).collect();
    let eg: Vec<&PixelGrid> = extent.iter().collect();
    let y: Vec<f64> = margin.iter().map(|(_, f)| *f).collect();
    let tr = Examples::new(kind, enc(&mg[..60]), vec![], y[..60].to_vec(), 1).map_err(|e| e.to_string())?;
    let va = Examples::new(kind, enc(&mg[60..]), vec![], y[60..].to_vec(), 1).map_err(|e| e.to_string())?;
    let mut net = build_dcnn(side, side, 1, 0).map_err(|e| e.to_string())?.with_seed(4);
    let cfg = TrainConfig {
        max_epochs: 3,
        batch_size: 20,
        ..Default::default()
    };
    train(&mut net, &tr, &va, &cfg).map_err(|e| e.to_string())?;
    let pm = Examples::new(kind, enc(&mg), vec![], vec![0.0; n], 1).map_err(|e| e.to_string())?;
    let pe = Examples::new(kind, enc(&eg), vec![], vec![0.0; n], 1).map_err(|e| e.to_string())?;
    let a = predict_examples(&net, &pm, 16, None).map_err(|e| e.to_string())?;
    let b = predict_examples(&net, &pe, 16, None).map_err(|e| e.to_string())?;
    let same = a.values.data().iter().zip(b.values.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    check(same, "predictions differ")?;
    Ok(format!("{n} design pairs: identical {side}x{side} rasters and bit-identical DCNN predictions"))
}

fn c10_gpr(sh: &Shared) -> Outcome {
    let ds = sh.dataset.as_ref().ok_or("dataset unavailable")?;
    let norm = &ds.manifest.normalization;
    let ids = &ds.manifest.split.train[..400];
    let x: Vec<Vec<f64>> = ids.iter().map(|&i| norm.normalize_params(&ds.samples[i].p.values)).collect();
    let y: Vec<Vec<f64>> = ids.iter().map(|&i| norm.normalize_kpis(&ds.samples[i].kpis.values)).collect();
    let m = gpr::fit(&x, &y, 1.0, gpr::DEFAULT_JITTER).map_err(|e| e.to_string())?;
    let p = m.predict(&x).map_err(|e| e.to_string())?;
    let dev = p.iter().flatten().zip(y.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(dev < 1e-6, format!("interpolation error {dev:e}"))?;

    let spec = ModelSpec {
        kind: ModelKind::Gpr,
        ..Default::default()
    };
    let g = fit_surrogate(ds, &spec).map_err(|e| e.to_string())?;
    let gt = evaluate_model(&g.surrogate, ds, &ds.manifest.split.test).map_err(|e| e.to_string())?;
    let dt = sh.dnn_table.as_ref().ok_or("DNN table unavailable")?;
    let cmp = compare_parameter_models(dt, &gt).map_err(|e| e.to_string())?;
    check(cmp.rows.len() == ds.manifest.kpi_names.len(), "comparison table incomplete")?;
    let row = cmp.rows.iter().find(|r| r.name == "torque_ripple").ok_or("no ripple row")?;
    check(row.gpr_mre > row.dnn_mre, format!("ripple GPR {:.2}% vs DNN {:.2}%", row.gpr_mre, row.dnn_mre))?;
    Ok(format!(
        "interpolation error {dev:.1e}; ripple MRE GPR {:.2}% > DNN {:.2}% (length scale {})",
        row.gpr_mre,
        row.dnn_mre,
        g.length_scale.unwrap_or(f64::NAN)
    ))
}

fn c11_moo(sh: &Shared) -> Outcome {
    let start = Instant::now();
    let t = build_template(TemplateKind::FullPoleVc);
    let cfg = moo::MooConfig {
        population: 32,
        generations: 20,
        seed: 11,
        objectives: vec![Objective::minimize("cost"), Objective::maximize("max_torque")],
        ..Default::default()
    };
    let oracle = Oracle::for_template(&t);
    let orun = moo::run(&t, &OracleEvaluator { oracle: oracle.clone() }, &cfg).map_err(|e| e.to_string())?;
    let hv: Vec<f64> = orun.history.iter().map(|h| h.hypervolume.unwrap_or(f64::NAN)).collect();
    check(hv.len() == 21 && hv.windows(2).all(|w| w[1] >= w[0]), format!("hypervolume history {hv:?}"))?;
    check(orun.archive.is_mutually_non_dominated(), "oracle archive holds a dominated member")?;

    let ds = sh.dataset.as_ref().ok_or("dataset unavailable")?;
    let model = sh.dnn.clone().ok_or("DNN unavailable")?;
    let ev = SurrogateEvaluator {
        model,
        kpi_names: ds.manifest.kpi_names.clone(),
    };
    let srun = moo::run(&t, &ev, &cfg).map_err(|e| e.to_string())?;
    let verified = moo::reverify(&t, &srun.archive, &OracleEvaluator { oracle }).map_err(|e| e.to_string())?;
    let reference = orun.reference.clone().ok_or("no reference point")?;
    let rep = moo::surrogate_speedup_report(&orun, &srun, &verified, &reference).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(rep.speedup >= 10.0, format!("speedup {:.1}x", rep.speedup))?;
    check(rep.hypervolume_ratio >= 0.9, format!("verified hypervolume ratio {:.3}", rep.hypervolume_ratio))?;
    check(secs < 1200.0, format!("took {secs:.0}s"))?;
    Ok(format!(
        "HV {:.4e} -> {:.4e} non-decreasing, archive {} non-dominated; speedup {:.0}x, verified HV ratio {:.3}, {secs:.0}s",
        hv[0],
        hv[20],
        orun.archive.members.len(),
        rep.speedup,
        rep.hypervolume_ratio
    ))
}

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn run_criterion(n: usize, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let line = match &r {
        Ok(msg) => format!("criterion {n:>2}: PASS ({secs:.1}s) {msg}"),
        Err(msg) => format!("criterion {n:>2}: FAIL ({secs:.1}s) {msg}"),
    };
    say(&line);
    r.is_ok()
}

#[test]
fn acceptance_criteria() {
    let mut sh = Shared {
        dataset: None,
        generation_s: 0.0,
        dnn: None,
        dnn_table: None,
    };
    let results = [
        run_criterion(1, c1_metrics),
        run_criterion(2, c2_raster),
        run_criterion(3, c3_gradients),
        run_criterion(4, c4_solver),
        run_criterion(5, c5_architecture),
        run_criterion(6, c6_early_stopping),
        run_criterion(7, || c7_end_to_end(&mut sh)),
        run_criterion(8, || c8_resolution(&sh)),
        run_criterion(9, c9_reparametrization),
        run_criterion(10, || c10_gpr(&sh)),
        run_criterion(11, || c11_moo(&sh)),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    say(&format!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len()));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
