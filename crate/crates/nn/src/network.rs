use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layer::{conv_out, Layer, LayerGrads, LayerSpec};
use crate::tensor::Tensor;
use crate::{NnError, Result};

/// Hidden widths of the dense stack shared by all architectures.
pub const DENSE_WIDTHS: [usize; 5] = [448, 250, 224, 224, 198];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputKind {
    Scalar { features: usize },
    Image { channels: usize, height: usize, width: usize },
    ImageAux { channels: usize, height: usize, width: usize, aux_dim: usize },
}

impl InputKind {
    pub fn sample_shape(&self) -> Vec<usize> {
        match *self {
            InputKind::Scalar { features } => vec![features],
            InputKind::Image { channels, height, width } | InputKind::ImageAux { channels, height, width, .. } => {
                vec![channels, height, width]
            }
        }
    }

    pub fn aux_dim(&self) -> usize {
        match *self {
            InputKind::ImageAux { aux_dim, .. } => aux_dim,
            _ => 0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            InputKind::Scalar { .. } => "scalar",
            InputKind::Image { .. } => "image",
            InputKind::ImageAux { .. } => "image+scalar",
        }
    }
}

/// A network input batch: main tensor plus optional scalar side input.
#[derive(Debug, Clone, PartialEq)]
pub struct Input {
    pub x: Tensor,
    pub aux: Option<Tensor>,
}

impl Input {
    pub fn new(x: Tensor) -> Self {
        Input { x, aux: None }
    }

    pub fn with_aux(x: Tensor, aux: Tensor) -> Self {
        Input { x, aux: Some(aux) }
    }

    pub fn batch(&self) -> usize {
        self.x.batch()
    }
}

/// One conv stage of the image front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub kernels: usize,
    pub ksize: usize,
    pub stride: usize,
}

/// Image network layout. The default is five stride-2 stages
/// 64@8x8, 32@5x5, 16@3x3, 16@3x3, 16@3x3 followed by the dense stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcnnConfig {
    pub channels: usize,
    pub convs: Vec<ConvStage>,
    pub dense: Vec<usize>,
    /// Drop trailing conv stages that no longer fit instead of failing.
    pub truncate: bool,
    pub min_side: usize,
}

impl Default for DcnnConfig {
    fn default() -> Self {
        let st = |kernels, ksize| ConvStage { kernels, ksize, stride: 2 };
        DcnnConfig {
            channels: 1,
            convs: vec![st(64, 8), st(32, 5), st(16, 3), st(16, 3), st(16, 3)],
            dense: DENSE_WIDTHS.to_vec(),
            truncate: true,
            min_side: 32,
        }
    }
}

/// Spatial sizes after each conv stage that fits, starting with the input.
pub fn spatial_trace(height: usize, width: usize, convs: &[ConvStage]) -> (Vec<(usize, usize)>, usize) {
    let mut trace = vec![(height, width)];
    let (mut h, mut w) = (height, width);
    for (i, c) in convs.iter().enumerate() {
        if h < c.ksize || w < c.ksize {
            return (trace, i);
        }
        h = conv_out(h, c.ksize, c.stride);
        w = conv_out(w, c.ksize, c.stride);
        trace.push((h, w));
    }
    (trace, convs.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: InputKind,
    layers: Vec<Layer>,
    seed: u64,
}

/// Activations recorded by a forward pass, `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub input: Option<Tensor>,
    pub aux: Option<Tensor>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(&g.weights);
            out.extend_from_slice(&g.bias);
        }
        out
    }
}

impl Network {
    /// Shape-checks the layer list and draws He-uniform weights from `seed`.
    pub fn from_specs(input: InputKind, specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(NnError::Shape("network needs at least one layer".into()));
        }
        let mut shape = input.sample_shape();
        let mut layers = Vec::with_capacity(specs.len());
        let mut saw_concat = false;
        for spec in specs {
            if let LayerSpec::ConcatAux { aux_dim } = spec {
                if aux_dim != input.aux_dim() || saw_concat {
                    return Err(NnError::Shape(format!(
                        "concat_aux width {aux_dim} does not match input auxiliary width {}",
                        input.aux_dim()
                    )));
                }
                saw_concat = true;
            }
            let layer = Layer::new(spec, &shape)?;
            shape = layer.out_shape.clone();
            layers.push(layer);
        }
        if input.aux_dim() > 0 && !saw_concat {
            return Err(NnError::Shape("auxiliary input declared but no concat_aux layer".into()));
        }
        if shape.len() != 1 {
            return Err(NnError::Shape(format!("network output must be flat, got {shape:?}")));
        }
        let mut net = Network { input, layers, seed };
        net.reinitialize(seed);
        Ok(net)
    }

    /// Redraws all weights from `seed`; biases start at zero.
    pub fn reinitialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.layers {
            let fan_in = l.spec.fan_in();
            if fan_in > 0 {
                let limit = (6.0 / fan_in as f64).sqrt();
                for w in &mut l.weights {
                    *w = rng.gen_range(-limit..limit);
                }
            }
            l.bias.fill(0.0);
        }
        self.seed = seed;
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.reinitialize(seed);
        self
    }

    pub fn input_kind(&self) -> InputKind {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_shape[0])
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Widths along the dense part: its input width, then every dense output.
    pub fn dense_widths(&self) -> Vec<usize> {
        let mut widths = Vec::new();
        for l in &self.layers {
            if let LayerSpec::Dense { inputs, outputs } | LayerSpec::LinearOutput { inputs, outputs } = l.spec {
                if widths.is_empty() {
                    widths.push(inputs);
                }
                widths.push(outputs);
            }
        }
        widths
    }

    /// Hidden dense widths, excluding the output layer.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l.spec {
                LayerSpec::Dense { outputs, .. } => Some(outputs),
                _ => None,
            })
            .collect()
    }

    /// Dash-joined dense widths, e.g. `12-448-250-224-224-198-10`.
    pub fn arch_string(&self) -> String {
        self.dense_widths().iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-")
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(NnError::Shape(format!("expected {} parameters, got {}", self.n_params(), p.len())));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let (nw, nb) = (l.weights.len(), l.bias.len());
            l.weights.copy_from_slice(&p[off..off + nw]);
            l.bias.copy_from_slice(&p[off + nw..off + nw + nb]);
            off += nw + nb;
        }
        Ok(())
    }

    pub fn zero_params(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn check_input(&self, input: &Input) -> Result<()> {
        let shape = input.x.shape();
        let expect = self.input.sample_shape();
        if shape.len() != expect.len() + 1 || shape[1..] != expect[..] {
            return Err(NnError::InputKind(format!(
                "{} network expects [batch, {expect:?}], got {shape:?}",
                self.input.label()
            )));
        }
        match (&input.aux, self.input.aux_dim()) {
            (None, 0) => Ok(()),
            (Some(a), d) if d > 0 && a.shape() == [input.batch(), d] => Ok(()),
            (Some(a), d) => Err(NnError::InputKind(format!(
                "{} network expects auxiliary width {d}, got {:?}",
                self.input.label(),
                a.shape()
            ))),
            (None, d) => Err(NnError::InputKind(format!(
                "{} network needs an auxiliary input of width {d}",
                self.input.label()
            ))),
        }
    }

    pub fn forward(&self, input: &Input) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.x.clone();
        for l in &self.layers {
            x = l.forward(&x, input.aux.as_ref())?;
        }
        Ok(x)
    }

    pub fn forward_traced(&self, input: &Input) -> Result<Trace> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.x.clone());
        for l in &self.layers {
            let y = l.forward(acts.last().expect("non-empty"), input.aux.as_ref())?;
            acts.push(y);
        }
        Ok(Trace { acts })
    }

    /// Backpropagates `dy` (gradient w.r.t. the output) through a recorded trace.
    pub fn backward(&self, trace: &Trace, dy: &Tensor, want_input: bool) -> Result<Gradients> {
        if trace.acts.len() != self.layers.len() + 1 {
            return Err(NnError::Shape("trace does not belong to this network".into()));
        }
        let mut grad = dy.clone();
        let mut layer_grads = vec![None; self.layers.len()];
        let mut aux = None;
        let mut input = None;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let need = i > 0 || want_input;
            let back = l.backward(&trace.acts[i], &trace.acts[i + 1], &grad, need)?;
            layer_grads[i] = Some(back.params);
            if back.aux.is_some() {
                aux = back.aux;
            }
            match back.input {
                Some(g) if i > 0 => grad = g,
                Some(g) => input = Some(g),
                None => {}
            }
        }
        Ok(Gradients {
            layers: layer_grads.into_iter().map(|g| g.expect("filled")).collect(),
            input,
            aux,
        })
    }
}

fn dense_stack(n_in: usize, widths: &[usize], n_y: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut prev = n_in;
    for &w in widths {
        specs.push(LayerSpec::Dense { inputs: prev, outputs: w });
        specs.push(LayerSpec::Elu);
        prev = w;
    }
    specs.push(LayerSpec::LinearOutput { inputs: prev, outputs: n_y });
    specs
}

/// Parameter-input network `n_p-448-250-224-224-198-n_y` with ELU hidden layers.
pub fn build_dnn(n_p: usize, n_y: usize) -> Result<Network> {
    if n_p == 0 || n_y == 0 {
        return Err(NnError::Shape("n_p and n_y must be at least 1".into()));
    }
    Network::from_specs(InputKind::Scalar { features: n_p }, dense_stack(n_p, &DENSE_WIDTHS, n_y), 0)
}

/// Image network with the default layout; `aux_dim > 0` adds a scalar side
/// input concatenated after the flattened conv features.
pub fn build_dcnn(height: usize, width: usize, n_y: usize, aux_dim: usize) -> Result<Network> {
    build_dcnn_with(height, width, n_y, aux_dim, &DcnnConfig::default())
}

pub fn build_dcnn_with(height: usize, width: usize, n_y: usize, aux_dim: usize, cfg: &DcnnConfig) -> Result<Network> {
    if height < cfg.min_side || width < cfg.min_side {
        return Err(NnError::Shape(format!(
            "image {height}x{width} below the {0}x{0} minimum",
            cfg.min_side
        )));
    }
    if n_y == 0 || cfg.convs.is_empty() {
        return Err(NnError::Shape("n_y and the conv stage list must be non-empty".into()));
    }
    let (trace, fitted) = spatial_trace(height, width, &cfg.convs);
    if fitted < cfg.convs.len() && !cfg.truncate {
        return Err(NnError::Shape(format!(
            "spatial size collapses before conv layer {}: trace {trace:?}",
            fitted + 1
        )));
    }
    if fitted == 0 {
        return Err(NnError::Shape(format!("no conv stage fits a {height}x{width} image")));
    }
    let mut specs = Vec::new();
    let mut ch = cfg.channels;
    for c in &cfg.convs[..fitted] {
        specs.push(LayerSpec::Conv2d {
            in_channels: ch,
            kernels: c.kernels,
            ksize: c.ksize,
            stride: c.stride,
        });
        specs.push(LayerSpec::Elu);
        ch = c.kernels;
    }
    specs.push(LayerSpec::Flatten);
    let (h, w) = trace[fitted];
    let mut flat = ch * h * w;
    let input = if aux_dim > 0 {
        specs.push(LayerSpec::ConcatAux { aux_dim });
        flat += aux_dim;
        InputKind::ImageAux {
            channels: cfg.channels,
            height,
            width,
            aux_dim,
        }
    } else {
        InputKind::Image {
            channels: cfg.channels,
            height,
            width,
        }
    };
    specs.extend(dense_stack(flat, &cfg.dense, n_y));
    Network::from_specs(input, specs, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dnn_widths_and_count() {
        let net = build_dnn(12, 10).unwrap();
        assert_eq!(net.arch_string(), "12-448-250-224-224-198-10");
        let expected = 12 * 448 + 448 + 448 * 250 + 250 + 250 * 224 + 224 + 224 * 224 + 224 + 224 * 198 + 198 + 198 * 10 + 10;
        assert_eq!(net.n_params(), expected);
        assert_eq!(build_dnn(56, 11).unwrap().arch_string(), "56-448-250-224-224-198-11");
        assert!(build_dnn(0, 3).is_err());
    }

    #[test]
    fn dcnn_spatial_traces() {
        let convs = DcnnConfig::default().convs;
        let (t, n) = spatial_trace(128, 128, &convs);
        assert_eq!(n, 5);
        assert_eq!(t.iter().map(|s| s.0).collect::<Vec<_>>(), vec![128, 61, 29, 14, 6, 2]);
        let (t, n) = spatial_trace(64, 64, &convs);
        assert_eq!(n, 4);
        assert_eq!(t.iter().map(|s| s.0).collect::<Vec<_>>(), vec![64, 29, 13, 6, 2]);
        let strict = DcnnConfig {
            truncate: false,
            ..Default::default()
        };
        assert!(build_dcnn_with(64, 64, 6, 0, &strict).is_err());
        assert!(build_dcnn_with(128, 128, 6, 0, &strict).is_ok());
        assert!(build_dcnn(31, 64, 6, 0).is_err());
    }

    #[test]
    fn dcnn_hidden_widths_and_aux() {
        let a = build_dcnn(64, 64, 6, 0).unwrap();
        let b = build_dcnn(64, 64, 6, 7).unwrap();
        assert_eq!(a.hidden_widths(), DENSE_WIDTHS.to_vec());
        assert_eq!(b.dense_widths()[0], a.dense_widths()[0] + 7);
        assert_eq!(a.dense_widths()[0], 16 * 2 * 2);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut net = build_dnn(3, 2).unwrap();
        net.zero_params();
        let x = Tensor::new(vec![4, 3], (0..12).map(|i| i as f64).collect()).unwrap();
        let y = net.forward(&Input::new(x)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_kind_mismatch_rejected() {
        let net = build_dcnn(32, 32, 2, 3).unwrap();
        let img = Tensor::zeros(vec![2, 1, 32, 32]);
        assert!(matches!(net.forward(&Input::new(img.clone())), Err(NnError::InputKind(_))));
        assert!(net.forward(&Input::with_aux(img, Tensor::zeros(vec![2, 3]))).is_ok());
        assert!(build_dnn(3, 2).unwrap().forward(&Input::new(Tensor::zeros(vec![1, 1, 32, 32]))).is_err());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = build_dnn(4, 2).unwrap().with_seed(9);
        let b = build_dnn(4, 2).unwrap().with_seed(9);
        let c = build_dnn(4, 2).unwrap().with_seed(10);
        assert_eq!(a.params_flat(), b.params_flat());
        assert_ne!(a.params_flat(), c.params_flat());
        let limit = (6.0f64 / 4.0).sqrt();
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() < limit));
    }
}
