use motorkpi_core::gpr::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(0.0..scale)).collect()).collect()
}

fn targets(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| vec![r.iter().map(|v| v.sin()).sum::<f64>(), r.iter().map(|v| v * v).sum::<f64>() - 1.0])
        .collect()
}

/// Gaussian elimination with partial pivoting on a dense copy.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fit_interpolates_training_targets(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = cloud(&mut rng, 50, 12, 1.0);
        let y = targets(&x);
        let m = fit(&x, &y, 1.0, DEFAULT_JITTER).unwrap();
        let p = m.predict(&x).unwrap();
        for (a, b) in p.iter().flatten().zip(y.iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
        }
    }

    #[test]
    fn variance_is_non_negative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = cloud(&mut rng, 30, 3, 2.0);
        let m = fit(&x, &targets(&x), 0.7, DEFAULT_JITTER).unwrap();
        let mut q = cloud(&mut rng, 30, 3, 2.5);
        q.extend(x.iter().cloned());
        let (_, var) = m.predict_with_variance(&q).unwrap();
        prop_assert!(var.iter().all(|&v| v >= -1e-9 && v <= 1.0 + 1e-12));
    }
}

#[test]
fn matches_dense_linear_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = cloud(&mut rng, 20, 4, 2.0);
    let y = targets(&x);
    let (ls, jit) = (0.8, 1e-8);
    let m = fit(&x, &y, ls, jit).unwrap();
    let k: Vec<Vec<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, a)| x.iter().enumerate().map(|(j, b)| rbf(a, b, ls) + if i == j { jit } else { 0.0 }).collect())
        .collect();
    let q = cloud(&mut rng, 15, 4, 2.0);
    let pred = m.predict(&q).unwrap();
    for out in 0..2 {
        let alpha = dense_solve(k.clone(), y.iter().map(|r| r[out]).collect());
        for (qi, row) in q.iter().zip(&pred) {
            let want: f64 = x.iter().zip(&alpha).map(|(xi, a)| rbf(qi, xi, ls) * a).sum();
            assert!((row[out] - want).abs() < 1e-9, "{} vs {want}", row[out]);
        }
    }
}

#[test]
fn permuting_training_rows_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = cloud(&mut rng, 40, 5, 1.5);
    let y = targets(&x);
    let mut order: Vec<usize> = (0..x.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let xp: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let yp: Vec<Vec<f64>> = order.iter().map(|&i| y[i].clone()).collect();
    let q = cloud(&mut rng, 20, 5, 1.5);
    let a = fit(&x, &y, 0.9, DEFAULT_JITTER).unwrap().predict(&q).unwrap();
    let b = fit(&xp, &yp, 0.9, DEFAULT_JITTER).unwrap().predict(&q).unwrap();
    for (u, v) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!((u - v).abs() < 1e-10);
    }
}

#[test]
fn recovers_length_scale_of_a_gp_draw() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = cloud(&mut rng, 160, 2, 6.0);
    let n = x.len();
    let mut l = kernel_matrix(&x, 1.0, 1e-8);
    cholesky(&mut l, n).unwrap();
    let z: Vec<f64> = (0..n)
        .map(|_| {
            let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    let f: Vec<f64> = (0..n).map(|i| (0..=i).map(|k| l[i * n + k] * z[k]).sum()).collect();
    let y: Vec<Vec<f64>> = f.iter().map(|&v| vec![v]).collect();
    let (tr, va) = (120, n);
    let ls = select_length_scale(&x[..tr], &y[..tr], &x[tr..va], &y[tr..va], &[0.1, 1.0, 10.0]).unwrap();
    assert_eq!(ls, 1.0);
}

#[test]
fn ties_prefer_the_smaller_length_scale() {
    // Validation points far from the data: every candidate predicts the prior mean.
    let x = vec![vec![0.0], vec![0.5]];
    let y = vec![vec![1.0], vec![2.0]];
    let xv = vec![vec![1e3]];
    let yv = vec![vec![0.5]];
    assert_eq!(select_length_scale(&x, &y, &xv, &yv, &[2.0, 0.5, 1.0]).unwrap(), 0.5);
}

#[test]
fn chunked_fit_averages_two_half_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = cloud(&mut rng, 30, 3, 1.0);
    let y = targets(&x);
    let e = GprEnsemble::fit_chunked(&x, &y, 0.6, DEFAULT_JITTER, 20).unwrap();
    assert_eq!(e.parts.len(), 2);
    let q = cloud(&mut rng, 5, 3, 1.0);
    let a = fit(&x[..15], &y[..15], 0.6, DEFAULT_JITTER).unwrap().predict(&q).unwrap();
    let b = fit(&x[15..], &y[15..], 0.6, DEFAULT_JITTER).unwrap().predict(&q).unwrap();
    let got = e.predict(&q).unwrap();
    for i in 0..q.len() {
        for k in 0..2 {
            assert!((got[i][k] - 0.5 * (a[i][k] + b[i][k])).abs() < 1e-12);
        }
    }
    assert_eq!(GprEnsemble::fit(&x, &y, 0.6, DEFAULT_JITTER).unwrap().parts.len(), 1);
}

#[test]
fn persisted_model_predicts_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = cloud(&mut rng, 25, 4, 1.0);
    let e = GprEnsemble::fit(&x, &targets(&x), 0.5, DEFAULT_JITTER).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gpr.bin");
    e.save(&path).unwrap();
    let back = GprEnsemble::load(&path).unwrap();
    let q = cloud(&mut rng, 10, 4, 1.0);
    assert_eq!(e.predict(&q).unwrap(), back.predict(&q).unwrap());
    assert!(GprEnsemble::from_bytes(b"nope").is_err());
}
