//! Gaussian process regression with an RBF kernel, fitted by Cholesky.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_LENGTH_SCALE: f64 = 1.0;
pub const DEFAULT_JITTER: f64 = 1e-10;
pub const MAX_JITTER: f64 = 1e-6;
/// Training sets above this size are fitted as two halves.
pub const CHUNK_THRESHOLD: usize = 5000;

pub fn rbf(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * length_scale * length_scale)).exp()
}

/// In-place lower Cholesky factor of a row-major SPD matrix.
pub fn cholesky(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let (head, tail) = a.split_at_mut((j + 1) * n);
        let row_j = &mut head[j * n..];
        let mut d = row_j[j];
        for k in 0..j {
            d -= row_j[k] * row_j[k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Invalid(format!("matrix not positive definite at pivot {j}")));
        }
        let d = d.sqrt();
        row_j[j] = d;
        for v in &mut row_j[j + 1..] {
            *v = 0.0;
        }
        let lj = &row_j[..j];
        for row_i in tail.chunks_exact_mut(n) {
            let s: f64 = row_i[..j].iter().zip(lj).map(|(x, y)| x * y).sum();
            row_i[j] = (row_i[j] - s) / d;
        }
    }
    Ok(())
}

/// Solves `L L^T x = b` for a lower factor `l`.
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let s: f64 = l[i * n..i * n + i].iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
        b[i] = (b[i] - s) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

fn forward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let s: f64 = l[i * n..i * n + i].iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
        b[i] = (b[i] - s) / l[i * n + i];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprModel {
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<Vec<f64>>,
    pub length_scale: f64,
    pub jitter: f64,
    /// Row-major lower factor of `K + jitter I`.
    #[serde(skip)]
    pub cholesky_factor: Vec<f64>,
    /// `alpha[i][k]` solves `(K + jitter I) alpha = Y`, one column per output.
    #[serde(skip)]
    pub alpha: Vec<Vec<f64>>,
}

pub fn kernel_matrix(x: &[Vec<f64>], length_scale: f64, jitter: f64) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0 + jitter;
        for j in 0..i {
            let v = rbf(&x[i], &x[j], length_scale);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Exact GP fit; the jitter is raised tenfold up to 1e-6 if the factorization fails.
pub fn fit(x: &[Vec<f64>], y: &[Vec<f64>], length_scale: f64, jitter: f64) -> Result<GprModel> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::Invalid(format!("GPR fit needs >= 2 matching rows, got {n} inputs and {} targets", y.len())));
    }
    if !(length_scale > 0.0) || !(jitter >= 0.0) {
        return Err(Error::Invalid("length scale must be positive and jitter non-negative".into()));
    }
    let (np, ny) = (x[0].len(), y[0].len());
    if x.iter().any(|r| r.len() != np) || y.iter().any(|r| r.len() != ny) {
        return Err(Error::Invalid("ragged GPR training data".into()));
    }
    let mut jit = jitter;
    let l = loop {
        let mut k = kernel_matrix(x, length_scale, jit);
        match cholesky(&mut k, n) {
            Ok(()) => break k,
            Err(e) if jit >= MAX_JITTER => {
                return Err(Error::Invalid(format!("GPR Cholesky failed with jitter {jit:e}: {e}")));
            }
            Err(_) => jit = if jit == 0.0 { DEFAULT_JITTER } else { (jit * 10.0).min(MAX_JITTER) },
        }
    };
    let mut alpha = vec![vec![0.0; ny]; n];
    let mut col = vec![0.0; n];
    for k in 0..ny {
        for i in 0..n {
            col[i] = y[i][k];
        }
        cholesky_solve(&l, n, &mut col);
        for i in 0..n {
            alpha[i][k] = col[i];
        }
    }
    Ok(GprModel {
        x_train: x.to_vec(),
        y_train: y.to_vec(),
        length_scale,
        jitter: jit,
        cholesky_factor: l,
        alpha,
    })
}

impl GprModel {
    pub fn n_train(&self) -> usize {
        self.x_train.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.y_train.first().map_or(0, Vec::len)
    }

    fn check_dim(&self, xs: &[Vec<f64>]) -> Result<()> {
        let d = self.x_train[0].len();
        match xs.iter().find(|r| r.len() != d) {
            Some(r) => Err(Error::Invalid(format!("GPR input has {} features, model expects {d}", r.len()))),
            None => Ok(()),
        }
    }

    /// Posterior mean `K(X*, X) alpha`.
    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_dim(xs)?;
        let ny = self.n_outputs();
        Ok(xs
            .iter()
            .map(|x| {
                let mut out = vec![0.0; ny];
                for (xi, a) in self.x_train.iter().zip(&self.alpha) {
                    let k = rbf(x, xi, self.length_scale);
                    for (o, ak) in out.iter_mut().zip(a) {
                        *o += k * ak;
                    }
                }
                out
            })
            .collect())
    }

    /// Posterior mean and variance `1 - k^T (K + jitter I)^{-1} k`.
    pub fn predict_with_variance(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mean = self.predict(xs)?;
        let n = self.n_train();
        let var = xs
            .iter()
            .map(|x| {
                let mut v: Vec<f64> = self.x_train.iter().map(|xi| rbf(x, xi, self.length_scale)).collect();
                forward_substitute(&self.cholesky_factor, n, &mut v);
                1.0 - v.iter().map(|t| t * t).sum::<f64>()
            })
            .collect();
        Ok((mean, var))
    }

    /// Refactorizes after deserialization (factor and weights are not stored in JSON).
    fn refit(&mut self) -> Result<()> {
        let m = fit(&self.x_train, &self.y_train, self.length_scale, self.jitter)?;
        self.cholesky_factor = m.cholesky_factor;
        self.alpha = m.alpha;
        Ok(())
    }
}

/// Validation-MSE grid search; ties go to the smaller length scale.
pub fn select_length_scale(
    x_train: &[Vec<f64>],
    y_train: &[Vec<f64>],
    x_val: &[Vec<f64>],
    y_val: &[Vec<f64>],
    candidates: &[f64],
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Invalid("no length-scale candidates".into()));
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (f64::INFINITY, sorted[0]);
    for &ls in &sorted {
        let Ok(m) = fit(x_train, y_train, ls, DEFAULT_JITTER) else {
            continue;
        };
        let pred = m.predict(x_val)?;
        let n = (pred.len() * m.n_outputs()).max(1) as f64;
        let mse: f64 = pred
            .iter()
            .zip(y_val)
            .flat_map(|(p, y)| p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)))
            .sum::<f64>()
            / n;
        if mse < best.0 {
            best = (mse, ls);
        }
    }
    Ok(best.1)
}

pub const DEFAULT_CANDIDATES: [f64; 9] = [0.1, 0.2, 0.3, 0.5, 0.7, 1.0, 2.0, 5.0, 10.0];

/// One exact model, or two half-set models with averaged predictions when
/// the training set is too large for one factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct GprEnsemble {
    pub parts: Vec<GprModel>,
}

impl GprEnsemble {
    pub fn fit(x: &[Vec<f64>], y: &[Vec<f64>], length_scale: f64, jitter: f64) -> Result<Self> {
        Self::fit_chunked(x, y, length_scale, jitter, CHUNK_THRESHOLD)
    }

    pub fn fit_chunked(x: &[Vec<f64>], y: &[Vec<f64>], length_scale: f64, jitter: f64, threshold: usize) -> Result<Self> {
        if x.len() <= threshold {
            return Ok(GprEnsemble {
                parts: vec![fit(x, y, length_scale, jitter)?],
            });
        }
        let h = x.len() / 2;
        Ok(GprEnsemble {
            parts: vec![
                fit(&x[..h], &y[..h], length_scale, jitter)?,
                fit(&x[h..], &y[h..], length_scale, jitter)?,
            ],
        })
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut acc: Option<Vec<Vec<f64>>> = None;
        for m in &self.parts {
            let p = m.predict(xs)?;
            acc = Some(match acc {
                None => p,
                Some(mut a) => {
                    for (ra, rp) in a.iter_mut().zip(&p) {
                        for (u, v) in ra.iter_mut().zip(rp) {
                            *u += v;
                        }
                    }
                    a
                }
            });
        }
        let k = self.parts.len() as f64;
        Ok(acc
            .unwrap_or_default()
            .into_iter()
            .map(|r| r.into_iter().map(|v| v / k).collect())
            .collect())
    }

    pub fn length_scale(&self) -> f64 {
        self.parts[0].length_scale
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_bytes_with_meta(serde_json::Value::Null)
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        Ok(Self::from_bytes_with_meta(b)?.0)
    }

    /// JSON header (with free-form `meta`), then for each part X, Y and
    /// alpha as little-endian f64.
    pub fn to_bytes_with_meta(&self, meta: serde_json::Value) -> Result<Vec<u8>> {
        let parts: Vec<PartHeader> = self
            .parts
            .iter()
            .map(|m| PartHeader {
                n: m.n_train(),
                n_p: m.x_train[0].len(),
                n_y: m.n_outputs(),
                length_scale: m.length_scale,
                jitter: m.jitter,
            })
            .collect();
        let json = serde_json::to_vec(&GprHeader { parts, meta })?;
        let mut out = Vec::new();
        out.extend_from_slice(b"MKGP");
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for m in &self.parts {
            for v in m.x_train.iter().chain(&m.y_train).chain(&m.alpha).flatten() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes_with_meta(b: &[u8]) -> Result<(Self, serde_json::Value)> {
        if b.len() < 12 || &b[..4] != b"MKGP" {
            return Err(Error::Format("not a GPR model file".into()));
        }
        let hl = u64::from_le_bytes(b[4..12].try_into().expect("8 bytes")) as usize;
        let h: GprHeader = serde_json::from_slice(b.get(12..12 + hl).ok_or_else(|| Error::Format("truncated GPR header".into()))?)?;
        let vals: Vec<f64> = b[12 + hl..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let need: usize = h.parts.iter().map(|p| p.n * (p.n_p + 2 * p.n_y)).sum();
        if vals.len() != need || (b.len() - 12 - hl) % 8 != 0 {
            return Err(Error::Format("GPR blob length does not match header".into()));
        }
        let mut off = 0;
        let mut take = |rows: usize, cols: usize| {
            let m: Vec<Vec<f64>> = (0..rows).map(|i| vals[off + i * cols..off + (i + 1) * cols].to_vec()).collect();
            off += rows * cols;
            m
        };
        let mut parts = Vec::new();
        for p in &h.parts {
            let x = take(p.n, p.n_p);
            let y = take(p.n, p.n_y);
            let alpha = take(p.n, p.n_y);
            let mut m = GprModel {
                x_train: x,
                y_train: y,
                length_scale: p.length_scale,
                jitter: p.jitter,
                cholesky_factor: Vec::new(),
                alpha,
            };
            let stored = m.alpha.clone();
            m.refit()?;
            m.alpha = stored;
            parts.push(m);
        }
        Ok((GprEnsemble { parts }, h.meta))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct GprHeader {
    parts: Vec<PartHeader>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartHeader {
    n: usize,
    n_p: usize,
    n_y: usize,
    length_scale: f64,
    jitter: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_interpolates() {
        let m = fit(&[vec![0.0], vec![3.0]], &[vec![1.0], vec![-1.0]], 1.0, DEFAULT_JITTER).unwrap();
        assert!((m.predict(&[vec![0.0]]).unwrap()[0][0] - 1.0).abs() < 1e-9);
        assert!(m.predict(&[]).unwrap().is_empty());
        assert!(m.predict(&[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn kernel_diagonal() {
        let k = kernel_matrix(&[vec![0.0, 1.0], vec![2.0, 3.0]], 1.0, 1e-10);
        assert_eq!(k[0], 1.0 + 1e-10);
        assert_eq!(k[3], 1.0 + 1e-10);
        assert_eq!(k[1], k[2]);
    }

    #[test]
    fn far_points_revert_to_prior() {
        let m = fit(&[vec![0.0], vec![1.0]], &[vec![2.0], vec![3.0]], 0.5, DEFAULT_JITTER).unwrap();
        let p = m.predict(&[vec![100.0]]).unwrap();
        assert!(p[0][0].abs() < 1e-12);
        let (_, var) = m.predict_with_variance(&[vec![100.0], vec![0.0]]).unwrap();
        assert!((var[0] - 1.0).abs() < 1e-12);
        assert!(var[1] >= -1e-9 && var[1] < 1e-6);
    }

    #[test]
    fn duplicate_rows_raise_jitter() {
        let x = vec![vec![0.5], vec![0.5], vec![1.0]];
        let y = vec![vec![1.0], vec![1.0], vec![0.0]];
        let m = fit(&x, &y, 1.0, 0.0).unwrap();
        assert!(m.jitter > 0.0 && m.jitter <= MAX_JITTER);
    }

    #[test]
    fn single_candidate_returned() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![vec![0.0], vec![1.0]];
        assert_eq!(select_length_scale(&x, &y, &x, &y, &[3.7]).unwrap(), 3.7);
        assert!(select_length_scale(&x, &y, &x, &y, &[]).is_err());
    }

    #[test]
    fn ensemble_round_trip() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 0.3, (i * i) as f64 * 0.01]).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0].sin(), r[1]]).collect();
        let e = GprEnsemble::fit_chunked(&x, &y, 0.7, DEFAULT_JITTER, 8).unwrap();
        assert_eq!(e.parts.len(), 2);
        let back = GprEnsemble::from_bytes(&e.to_bytes().unwrap()).unwrap();
        let q = vec![vec![0.4, 0.2]];
        assert_eq!(e.predict(&q).unwrap(), back.predict(&q).unwrap());
    }
}
