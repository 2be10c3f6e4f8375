use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{NnError, Result};

/// Layer description without parameters. Shapes are per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    /// Valid padding, square kernels.
    Conv2d {
        in_channels: usize,
        kernels: usize,
        ksize: usize,
        stride: usize,
    },
    Elu,
    Flatten,
    ConcatAux { aux_dim: usize },
    LinearOutput { inputs: usize, outputs: usize },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Elu => "elu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::ConcatAux { .. } => "concat_aux",
            LayerSpec::LinearOutput { .. } => "linear_output",
        }
    }

    /// Output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |why: String| NnError::Shape(format!("{}: {why}", self.name()));
        match *self {
            LayerSpec::Dense { inputs, outputs } | LayerSpec::LinearOutput { inputs, outputs } => {
                if input != [inputs] {
                    return Err(bad(format!("expects [{inputs}], got {input:?}")));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                kernels,
                ksize,
                stride,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(bad(format!("expects [{in_channels}, h, w], got {input:?}")));
                }
                if ksize == 0 || stride == 0 || kernels == 0 {
                    return Err(bad("kernel size, stride and kernel count must be positive".into()));
                }
                if input[1] < ksize || input[2] < ksize {
                    return Err(bad(format!("{}x{} input smaller than {ksize}x{ksize} kernel", input[1], input[2])));
                }
                Ok(vec![kernels, conv_out(input[1], ksize, stride), conv_out(input[2], ksize, stride)])
            }
            LayerSpec::Elu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::ConcatAux { aux_dim } => {
                if input.len() != 1 {
                    return Err(bad(format!("expects a flat input, got {input:?}")));
                }
                Ok(vec![input[0] + aux_dim])
            }
        }
    }

    pub fn weight_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } | LayerSpec::LinearOutput { inputs, outputs } => inputs * outputs,
            LayerSpec::Conv2d {
                in_channels,
                kernels,
                ksize,
                ..
            } => kernels * in_channels * ksize * ksize,
            _ => 0,
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } | LayerSpec::LinearOutput { outputs, .. } => outputs,
            LayerSpec::Conv2d { kernels, .. } => kernels,
            _ => 0,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } | LayerSpec::LinearOutput { inputs, .. } => inputs,
            LayerSpec::Conv2d { in_channels, ksize, .. } => in_channels * ksize * ksize,
            _ => 0,
        }
    }
}

/// `floor((n - k) / s) + 1`
pub fn conv_out(n: usize, k: usize, s: usize) -> usize {
    (n - k) / s + 1
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// A layer with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients flowing out of one layer's backward pass.
#[derive(Debug, Clone)]
pub struct LayerBackward {
    pub input: Option<Tensor>,
    pub aux: Option<Tensor>,
    pub params: LayerGrads,
}

impl Layer {
    /// Zero-initialized layer.
    pub fn new(spec: LayerSpec, in_shape: &[usize]) -> Result<Self> {
        let out_shape = spec.output_shape(in_shape)?;
        Ok(Layer {
            weights: vec![0.0; spec.weight_len()],
            bias: vec![0.0; spec.bias_len()],
            spec,
            in_shape: in_shape.to_vec(),
            out_shape,
        })
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        if x.shape().len() != self.in_shape.len() + 1 || x.shape()[1..] != self.in_shape[..] {
            return Err(NnError::Shape(format!(
                "{}: expects [batch, {:?}], got {:?}",
                self.spec.name(),
                self.in_shape,
                x.shape()
            )));
        }
        Ok(x.batch())
    }

    fn out_batch_shape(&self, b: usize) -> Vec<usize> {
        let mut s = vec![b];
        s.extend_from_slice(&self.out_shape);
        s
    }

    pub fn forward(&self, x: &Tensor, aux: Option<&Tensor>) -> Result<Tensor> {
        let b = self.check_input(x)?;
        let out = match self.spec {
            LayerSpec::Dense { inputs, outputs } | LayerSpec::LinearOutput { inputs, outputs } => {
                let mut y = vec![0.0; b * outputs];
                for row in y.chunks_mut(outputs) {
                    row.copy_from_slice(&self.bias);
                }
                gemm(b, inputs, outputs, x.data(), false, &self.weights, true, &mut y, 1.0);
                y
            }
            LayerSpec::Conv2d {
                in_channels,
                kernels,
                ksize,
                stride,
            } => {
                let (h, w) = (self.in_shape[1], self.in_shape[2]);
                let (ho, wo) = (self.out_shape[1], self.out_shape[2]);
                let p = ho * wo;
                let ckk = in_channels * ksize * ksize;
                let mut col = vec![0.0; ckk * p];
                let mut y = vec![0.0; b * kernels * p];
                for (s, ys) in y.chunks_mut(kernels * p).enumerate() {
                    im2col(x.row(s), in_channels, h, w, ksize, stride, ho, wo, &mut col);
                    for (oc, yr) in ys.chunks_mut(p).enumerate() {
                        yr.fill(self.bias[oc]);
                    }
                    gemm(kernels, ckk, p, &self.weights, false, &col, false, ys, 1.0);
                }
                y
            }
            LayerSpec::Elu => x.data().iter().map(|&v| elu(v)).collect(),
            LayerSpec::Flatten => x.data().to_vec(),
            LayerSpec::ConcatAux { aux_dim } => {
                let aux = aux.ok_or_else(|| NnError::Shape("concat_aux: auxiliary input missing".into()))?;
                if aux.shape() != [b, aux_dim] {
                    return Err(NnError::Shape(format!(
                        "concat_aux: expects auxiliary [{b}, {aux_dim}], got {:?}",
                        aux.shape()
                    )));
                }
                let f = self.in_shape[0];
                let mut y = Vec::with_capacity(b * (f + aux_dim));
                for s in 0..b {
                    y.extend_from_slice(x.row(s));
                    y.extend_from_slice(aux.row(s));
                }
                y
            }
        };
        Ok(Tensor::from_raw(self.out_batch_shape(b), out))
    }

    /// Backward pass given the layer input `x`, its output `y` and `dy`.
    /// The input gradient is skipped when `need_input` is false.
    pub fn backward(&self, x: &Tensor, y: &Tensor, dy: &Tensor, need_input: bool) -> Result<LayerBackward> {
        let b = self.check_input(x)?;
        if dy.shape() != y.shape() || dy.shape() != self.out_batch_shape(b) {
            return Err(NnError::Shape(format!(
                "{}: gradient shape {:?} does not match output {:?}",
                self.spec.name(),
                dy.shape(),
                y.shape()
            )));
        }
        let mut grads = LayerGrads {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        };
        let mut aux_grad = None;
        let dx = match self.spec {
            LayerSpec::Dense { inputs, outputs } | LayerSpec::LinearOutput { inputs, outputs } => {
                gemm(outputs, b, inputs, dy.data(), true, x.data(), false, &mut grads.weights, 0.0);
                for row in dy.data().chunks(outputs) {
                    for (g, d) in grads.bias.iter_mut().zip(row) {
                        *g += d;
                    }
                }
                need_input.then(|| {
                    let mut dx = vec![0.0; b * inputs];
                    gemm(b, outputs, inputs, dy.data(), false, &self.weights, false, &mut dx, 0.0);
                    dx
                })
            }
            LayerSpec::Conv2d {
                in_channels,
                kernels,
                ksize,
                stride,
            } => {
                let (h, w) = (self.in_shape[1], self.in_shape[2]);
                let (ho, wo) = (self.out_shape[1], self.out_shape[2]);
                let p = ho * wo;
                let ckk = in_channels * ksize * ksize;
                let mut col = vec![0.0; ckk * p];
                let mut dcol = vec![0.0; ckk * p];
                let mut dx = if need_input { vec![0.0; x.len()] } else { Vec::new() };
                let in_len = x.row_len();
                for s in 0..b {
                    let dys = dy.row(s);
                    im2col(x.row(s), in_channels, h, w, ksize, stride, ho, wo, &mut col);
                    gemm(kernels, p, ckk, dys, false, &col, true, &mut grads.weights, 1.0);
                    for (oc, r) in dys.chunks(p).enumerate() {
                        grads.bias[oc] += r.iter().sum::<f64>();
                    }
                    if need_input {
                        gemm(ckk, kernels, p, &self.weights, true, dys, false, &mut dcol, 0.0);
                        col2im_add(&dcol, in_channels, h, w, ksize, stride, ho, wo, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                need_input.then_some(dx)
            }
            LayerSpec::Elu => need_input.then(|| {
                x.data()
                    .iter()
                    .zip(y.data())
                    .zip(dy.data())
                    .map(|((&xi, &yi), &g)| if xi > 0.0 { g } else { g * (yi + 1.0) })
                    .collect()
            }),
            LayerSpec::Flatten => need_input.then(|| dy.data().to_vec()),
            LayerSpec::ConcatAux { aux_dim } => {
                let f = self.in_shape[0];
                let mut dx = Vec::with_capacity(b * f);
                let mut da = Vec::with_capacity(b * aux_dim);
                for s in 0..b {
                    let r = dy.row(s);
                    dx.extend_from_slice(&r[..f]);
                    da.extend_from_slice(&r[f..]);
                }
                aux_grad = Some(Tensor::from_raw(vec![b, aux_dim], da));
                need_input.then_some(dx)
            }
        };
        Ok(LayerBackward {
            input: dx.map(|d| Tensor::from_raw(x.shape().to_vec(), d)),
            aux: aux_grad,
            params: grads,
        })
    }
}

/// `C = A * B + beta * C` with optional transposition of the stored operands.
/// `A` is `m x k` and `B` is `k x n` after transposition; all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every index addressed by these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, ho: usize, wo: usize, col: &mut [f64]) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let dst = &mut col[((ci * k + ki) * k + kj) * p..][..p];
                for oy in 0..ho {
                    let src = &plane[(oy * s + ki) * w + kj..];
                    let d = &mut dst[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        d.copy_from_slice(&src[..wo]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src[ox * s];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_add(col: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, ho: usize, wo: usize, dx: &mut [f64]) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let src = &col[((ci * k + ki) * k + kj) * p..][..p];
                for oy in 0..ho {
                    let base = (oy * s + ki) * w + kj;
                    for ox in 0..wo {
                        plane[base + ox * s] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_closed_form() {
        assert_eq!(elu(0.0), 0.0);
        assert!((elu(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
        assert_eq!(elu(2.5), 2.5);
    }

    #[test]
    fn conv_output_arithmetic() {
        assert_eq!(conv_out(64, 8, 2), 29);
        assert_eq!(conv_out(128, 8, 2), 61);
        assert_eq!(conv_out(29, 5, 2), 13);
        let spec = LayerSpec::Conv2d {
            in_channels: 1,
            kernels: 4,
            ksize: 8,
            stride: 2,
        };
        assert_eq!(spec.output_shape(&[1, 64, 40]).unwrap(), vec![4, 29, 17]);
        assert!(spec.output_shape(&[1, 7, 40]).is_err());
        assert!(spec.output_shape(&[2, 64, 64]).is_err());
    }

    #[test]
    fn conv_matches_direct_loop() {
        let spec = LayerSpec::Conv2d {
            in_channels: 2,
            kernels: 3,
            ksize: 3,
            stride: 2,
        };
        let mut layer = Layer::new(spec, &[2, 7, 6]).unwrap();
        for (i, v) in layer.weights.iter_mut().enumerate() {
            *v = ((i * 7 % 11) as f64 - 5.0) * 0.1;
        }
        layer.bias = vec![0.1, -0.2, 0.3];
        let x: Vec<f64> = (0..2 * 2 * 7 * 6).map(|i| ((i * 13 % 17) as f64) * 0.05).collect();
        let xt = Tensor::new(vec![2, 2, 7, 6], x.clone()).unwrap();
        let y = layer.forward(&xt, None).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3, 2]);
        for s in 0..2 {
            for oc in 0..3 {
                for oy in 0..3 {
                    for ox in 0..2 {
                        let mut acc = layer.bias[oc];
                        for ci in 0..2 {
                            for ki in 0..3 {
                                for kj in 0..3 {
                                    acc += layer.weights[((oc * 2 + ci) * 3 + ki) * 3 + kj]
                                        * x[((s * 2 + ci) * 7 + oy * 2 + ki) * 6 + ox * 2 + kj];
                                }
                            }
                        }
                        let got = y.data()[((s * 3 + oc) * 3 + oy) * 2 + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn dense_shape_error_names_layer() {
        let l = Layer::new(LayerSpec::Dense { inputs: 3, outputs: 2 }, &[3]).unwrap();
        let x = Tensor::zeros(vec![4, 5]);
        let e = l.forward(&x, None).unwrap_err().to_string();
        assert!(e.contains("dense"), "{e}");
    }

    #[test]
    fn concat_adds_aux_width() {
        let l = Layer::new(LayerSpec::ConcatAux { aux_dim: 7 }, &[10]).unwrap();
        assert_eq!(l.out_shape, vec![17]);
        let x = Tensor::zeros(vec![2, 10]);
        assert!(l.forward(&x, None).is_err());
        let a = Tensor::new(vec![2, 7], vec![1.0; 14]).unwrap();
        let y = l.forward(&x, Some(&a)).unwrap();
        assert_eq!(y.shape(), &[2, 17]);
        assert_eq!(y.row(1)[10..], [1.0; 7]);
    }
}
