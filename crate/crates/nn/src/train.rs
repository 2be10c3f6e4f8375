use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::network::{Gradients, Input, InputKind, Network};
use crate::tensor::Tensor;
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            batch_size: 50,
            learning_rate: 5e-4,
            patience: 5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_epochs > 0
            && self.batch_size > 0
            && self.patience >= 1
            && self.learning_rate > 0.0
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if ok {
            Ok(())
        } else {
            Err(NnError::Config(format!("invalid training config {self:?}")))
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.val_mse.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for (i, (t, v)) in self.train_mse.iter().zip(&self.val_mse).enumerate() {
            s.push_str(&format!("{},{t:e},{v:e}\n", i + 1));
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Patience rule: stop once `patience` consecutive epochs fail to beat the
/// best value recorded so far.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Records the loss of `epoch`; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            (true, false)
        } else {
            self.bad_epochs += 1;
            (false, self.bad_epochs >= self.patience)
        }
    }
}

/// In-memory inputs and targets, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Examples {
    pub kind: InputKind,
    pub x: Vec<f64>,
    pub aux: Vec<f64>,
    pub y: Vec<f64>,
    pub n_y: usize,
}

impl Examples {
    pub fn new(kind: InputKind, x: Vec<f64>, aux: Vec<f64>, y: Vec<f64>, n_y: usize) -> Result<Self> {
        let per: usize = kind.sample_shape().iter().product();
        if n_y == 0 || per == 0 || x.len() % per != 0 {
            return Err(NnError::Shape(format!("input length {} not a multiple of {per}", x.len())));
        }
        let n = x.len() / per;
        if y.len() != n * n_y || aux.len() != n * kind.aux_dim() {
            return Err(NnError::Shape(format!(
                "{n} samples need {} targets and {} auxiliary values, got {} and {}",
                n * n_y,
                n * kind.aux_dim(),
                y.len(),
                aux.len()
            )));
        }
        if x.iter().chain(&aux).chain(&y).any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("training examples".into()));
        }
        Ok(Examples { kind, x, aux, y, n_y })
    }

    pub fn len(&self) -> usize {
        self.y.len() / self.n_y
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn gather(src: &[f64], width: usize, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        out
    }

    pub fn input(&self, idx: &[usize]) -> Input {
        let shape = self.kind.sample_shape();
        let per: usize = shape.iter().product();
        let mut full = vec![idx.len()];
        full.extend(shape);
        let x = Tensor::from_raw(full, Self::gather(&self.x, per, idx));
        let d = self.kind.aux_dim();
        if d > 0 {
            Input::with_aux(x, Tensor::from_raw(vec![idx.len(), d], Self::gather(&self.aux, d, idx)))
        } else {
            Input::new(x)
        }
    }

    pub fn targets(&self, idx: &[usize]) -> Tensor {
        Tensor::from_raw(vec![idx.len(), self.n_y], Self::gather(&self.y, self.n_y, idx))
    }

    pub fn subset(&self, idx: &[usize]) -> Examples {
        let per: usize = self.kind.sample_shape().iter().product();
        Examples {
            kind: self.kind,
            x: Self::gather(&self.x, per, idx),
            aux: Self::gather(&self.aux, self.kind.aux_dim(), idx),
            y: Self::gather(&self.y, self.n_y, idx),
            n_y: self.n_y,
        }
    }
}

/// Mean over batch and outputs of the squared error.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(NnError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len().max(1) as f64;
    Ok(pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
}

pub fn mse_grad(pred: &Tensor, target: &Tensor) -> Tensor {
    let n = pred.len().max(1) as f64;
    let g = pred.data().iter().zip(target.data()).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Tensor::from_raw(pred.shape().to_vec(), g)
}

/// Loss and parameter gradient of one batch.
pub fn batch_gradient(net: &Network, input: &Input, target: &Tensor) -> Result<(f64, Gradients)> {
    let trace = net.forward_traced(input)?;
    let out = trace.acts.last().expect("non-empty");
    let loss = mse(out, target)?;
    let g = net.backward(&trace, &mse_grad(out, target), false)?;
    Ok((loss, g))
}

/// Gradient of the mean loss over all samples, accumulated in `order`
/// batches of `batch_size`.
pub fn full_gradient(net: &Network, ex: &Examples, order: &[usize], batch_size: usize) -> Result<Vec<f64>> {
    let n = order.len() as f64;
    let mut acc = vec![0.0; net.n_params()];
    for chunk in order.chunks(batch_size.max(1)) {
        let (_, g) = batch_gradient(net, &ex.input(chunk), &ex.targets(chunk))?;
        let w = chunk.len() as f64 / n;
        for (a, v) in acc.iter_mut().zip(g.flat()) {
            *a += w * v;
        }
    }
    Ok(acc)
}

/// Mean squared error over a whole example set.
pub fn evaluate_mse(net: &Network, ex: &Examples, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..ex.len()).collect();
    let mut sse = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let out = net.forward(&ex.input(chunk))?;
        sse += mse(&out, &ex.targets(chunk))? * out.len() as f64;
    }
    Ok(sse / (ex.len() * ex.n_y).max(1) as f64)
}

pub fn train(net: &mut Network, train: &Examples, val: &Examples, cfg: &TrainConfig) -> Result<TrainReport> {
    train_monitored(net, train, val, cfg, |_, measured| measured)
}

/// Training loop whose stopping decision uses `monitor(epoch, val_mse)`;
/// the returned value is what gets recorded as that epoch's validation loss.
pub fn train_monitored(
    net: &mut Network,
    train: &Examples,
    val: &Examples,
    cfg: &TrainConfig,
    mut monitor: impl FnMut(usize, f64) -> f64,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(NnError::Config("training and validation sets must be non-empty".into()));
    }
    if train.kind != net.input_kind() || val.kind != net.input_kind() || train.n_y != net.n_outputs() {
        return Err(NnError::InputKind("examples do not match the network input/output".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net, cfg.adam());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = net.params_flat();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        train_mse: Vec::new(),
        val_mse: Vec::new(),
        best_epoch: 0,
        best_val_mse: f64::INFINITY,
        stopped_early: false,
        wall_time_s: 0.0,
    };
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, g) = batch_gradient(net, &train.input(chunk), &train.targets(chunk))?;
            if !loss.is_finite() {
                return Err(NnError::NonFinite(format!("training loss at epoch {epoch}")));
            }
            adam.step(net, &g);
            sse += loss * chunk.len() as f64;
        }
        let train_mse = sse / train.len() as f64;
        let measured = evaluate_mse(net, val, cfg.batch_size)?;
        if !measured.is_finite() {
            return Err(NnError::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let val_mse = monitor(epoch, measured);
        report.train_mse.push(train_mse);
        report.val_mse.push(val_mse);
        let (improved, stop) = stopper.observe(epoch, val_mse);
        if improved {
            best = net.params_flat();
        }
        if stop {
            report.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    net.set_params_flat(&best)?;
    report.best_epoch = stopper.best_epoch;
    report.best_val_mse = stopper.best;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Per-output standardization `(y - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetScaling {
    pub fn identity(n: usize) -> Self {
        TargetScaling {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    pub fn normalize(&self, y: &[f64]) -> Vec<f64> {
        let n = self.mean.len();
        y.iter().enumerate().map(|(i, v)| (v - self.mean[i % n]) / self.std[i % n]).collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        let n = self.mean.len();
        z.iter().enumerate().map(|(i, v)| v * self.std[i % n] + self.mean[i % n]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `[batch, n_y]`, denormalized when a scaling was supplied.
    pub values: Tensor,
    pub latency_s_per_sample: f64,
}

pub fn predict(net: &Network, input: &Input, scaling: Option<&TargetScaling>) -> Result<Prediction> {
    let start = Instant::now();
    let out = net.forward(input)?;
    let latency = start.elapsed().as_secs_f64() / input.batch().max(1) as f64;
    let values = match scaling {
        Some(s) => {
            if s.mean.len() != net.n_outputs() {
                return Err(NnError::Shape("scaling width does not match network outputs".into()));
            }
            Tensor::from_raw(out.shape().to_vec(), s.denormalize(out.data()))
        }
        None => out,
    };
    Ok(Prediction {
        values,
        latency_s_per_sample: latency,
    })
}

/// Batched prediction over an example set.
pub fn predict_examples(net: &Network, ex: &Examples, batch_size: usize, scaling: Option<&TargetScaling>) -> Result<Prediction> {
    if ex.kind != net.input_kind() {
        return Err(NnError::InputKind(format!(
            "{} network given {} examples",
            net.input_kind().label(),
            ex.kind.label()
        )));
    }
    let idx: Vec<usize> = (0..ex.len()).collect();
    let mut values = Vec::with_capacity(ex.len() * net.n_outputs());
    let mut secs = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let p = predict(net, &ex.input(chunk), scaling)?;
        secs += p.latency_s_per_sample * chunk.len() as f64;
        values.extend_from_slice(p.values.data());
    }
    Ok(Prediction {
        values: Tensor::from_raw(vec![ex.len(), net.n_outputs()], values),
        latency_s_per_sample: secs / ex.len().max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_dnn;

    fn toy(n: usize, seed: u64) -> Examples {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.chunks(2).map(|r| r[0] * 2.0 - r[1]).collect();
        Examples::new(InputKind::Scalar { features: 2 }, x, Vec::new(), y, 1).unwrap()
    }

    #[test]
    fn patience_rule_on_injected_sequence() {
        let seq = [0.5, 0.4, 0.3, 0.31, 0.32, 0.33, 0.34, 0.35, 0.1];
        let mut es = EarlyStopping::new(5);
        let mut stopped = None;
        for (i, &v) in seq.iter().enumerate() {
            if es.observe(i + 1, v).1 {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(8));
        assert_eq!(es.best_epoch, 3);
    }

    #[test]
    fn mse_of_zero_net_is_mean_square() {
        let mut net = build_dnn(2, 1).unwrap();
        net.zero_params();
        let ex = toy(10, 1);
        let expect = ex.y.iter().map(|v| v * v).sum::<f64>() / 10.0;
        assert!((evaluate_mse(&net, &ex, 3).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (tr, va) = (toy(200, 2), toy(40, 3));
        let cfg = TrainConfig {
            max_epochs: 15,
            batch_size: 20,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let run = || {
            let mut net = build_dnn(2, 1).unwrap().with_seed(4);
            let r = train(&mut net, &tr, &va, &cfg).unwrap();
            (net.params_flat(), r)
        };
        let (p1, r1) = run();
        let (p2, r2) = run();
        assert_eq!(p1, p2);
        assert_eq!(r1.val_mse, r2.val_mse);
        assert!(r1.best_val_mse < r1.val_mse[0] || r1.best_epoch == 1);
        assert!(r1.best_val_mse < 0.05, "{}", r1.best_val_mse);
    }

    #[test]
    fn scaling_round_trip() {
        let s = TargetScaling {
            mean: vec![1.0, -2.0],
            std: vec![0.5, 3.0],
        };
        let y = [1.7, 4.0, -0.3, 9.0];
        let back = s.denormalize(&s.normalize(&y));
        for (a, b) in y.iter().zip(back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn report_csv() {
        let r = TrainReport {
            train_mse: vec![1.0, 0.5],
            val_mse: vec![1.1, 0.6],
            best_epoch: 2,
            best_val_mse: 0.6,
            stopped_early: false,
            wall_time_s: 0.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        r.write_csv(&p).unwrap();
        let s = std::fs::read_to_string(p).unwrap();
        assert_eq!(s.lines().count(), 3);
        assert!(s.starts_with("epoch,train_mse,val_mse"));
    }
}
