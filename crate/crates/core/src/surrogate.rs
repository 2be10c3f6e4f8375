//! Trained KPI predictors (networks or GPR) bundled with the normalization
//! they were trained under, plus the training and evaluation entry points.

use std::path::Path;
use std::time::Instant;

use motorkpi_nn::{
    build_dcnn_with, build_dnn, checkpoint, predict_examples, train, DcnnConfig, Examples, Network, TrainConfig, TrainReport,
};
use serde::{Deserialize, Serialize};

use crate::dataset::{encode_inputs, resolution_key, Dataset, ModelInput, Normalization, Resolution};
use crate::eval::{evaluate_predictions, EvalTable, ResolutionReport, ResolutionRun};
use crate::geometry::{DesignVector, MachineTemplate};
use crate::gpr::{select_length_scale, GprEnsemble, DEFAULT_CANDIDATES, DEFAULT_JITTER};
use crate::raster::{rasterize, PixelGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dnn,
    Dcnn,
    DcnnMulti,
    Gpr,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dnn" => Ok(ModelKind::Dnn),
            "dcnn" => Ok(ModelKind::Dcnn),
            "dcnn_multi" | "dcnn-multi" | "multi" => Ok(ModelKind::DcnnMulti),
            "gpr" => Ok(ModelKind::Gpr),
            _ => Err(Error::Invalid(format!("unknown model kind `{s}` (dnn, dcnn, dcnn_multi, gpr)"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Dnn => "dnn",
            ModelKind::Dcnn => "dcnn",
            ModelKind::DcnnMulti => "dcnn_multi",
            ModelKind::Gpr => "gpr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Image resolution for the convolutional kinds.
    pub resolution: Option<Resolution>,
    pub one_hot: bool,
    pub train: TrainConfig,
    pub dcnn: DcnnConfig,
    pub gpr_candidates: Vec<f64>,
    /// Use at most this many training samples (first ids of the train split).
    pub max_train: Option<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Dnn,
            resolution: None,
            one_hot: false,
            train: TrainConfig::default(),
            dcnn: DcnnConfig::default(),
            gpr_candidates: DEFAULT_CANDIDATES.to_vec(),
            max_train: None,
        }
    }
}

impl ModelSpec {
    pub fn input(&self, ds: &Dataset) -> Result<ModelInput> {
        let res = || -> Result<Resolution> {
            match self.resolution {
                Some(r) => Ok(r),
                None if ds.manifest.resolutions.len() == 1 => Ok(ds.manifest.resolutions[0]),
                None => Err(Error::Invalid(format!(
                    "{} needs a resolution; dataset has {:?}",
                    self.kind.as_str(),
                    ds.manifest.resolutions
                ))),
            }
        };
        Ok(match self.kind {
            ModelKind::Dnn | ModelKind::Gpr => ModelInput::Params,
            ModelKind::Dcnn => ModelInput::Image {
                resolution: res()?,
                one_hot: self.one_hot,
            },
            ModelKind::DcnnMulti => ModelInput::ImageParams {
                resolution: res()?,
                one_hot: self.one_hot,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Surrogate {
    Network {
        net: Network,
        input: ModelInput,
        norm: Normalization,
    },
    Gpr {
        model: GprEnsemble,
        norm: Normalization,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub surrogate: Surrogate,
    pub report: Option<TrainReport>,
    pub length_scale: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    input: ModelInput,
    normalization: Normalization,
}

fn train_ids(ds: &Dataset, max: Option<usize>) -> Vec<usize> {
    let t = &ds.manifest.split.train;
    t[..max.unwrap_or(t.len()).min(t.len())].to_vec()
}

fn build_network(ds: &Dataset, input: ModelInput, spec: &ModelSpec) -> Result<Network> {
    let (n_p, n_y) = (ds.n_params(), ds.n_kpis());
    let net = match input {
        ModelInput::Params => build_dnn(n_p, n_y)?,
        ModelInput::Image { resolution, one_hot } | ModelInput::ImageParams { resolution, one_hot } => {
            let cfg = DcnnConfig {
                channels: if one_hot { 4 } else { 1 },
                ..spec.dcnn.clone()
            };
            let aux = if matches!(input, ModelInput::ImageParams { .. }) { n_p } else { 0 };
            build_dcnn_with(resolution.1, resolution.0, n_y, aux, &cfg)?
        }
    };
    Ok(net.with_seed(spec.train.seed))
}

/// Trains a network on prepared examples.
pub fn train_network(
    ds: &Dataset,
    input: ModelInput,
    spec: &ModelSpec,
    train_set: &Examples,
    val_set: &Examples,
) -> Result<(Network, TrainReport)> {
    let mut net = build_network(ds, input, spec)?;
    let report = train(&mut net, train_set, val_set, &spec.train)?;
    Ok((net, report))
}

/// Trains the model described by `spec` on the dataset's train split,
/// validating on its validation split.
pub fn fit_surrogate(ds: &Dataset, spec: &ModelSpec) -> Result<Trained> {
    let start = Instant::now();
    let input = spec.input(ds)?;
    let tr_ids = train_ids(ds, spec.max_train);
    let va_ids = &ds.manifest.split.val;
    let norm = ds.manifest.normalization.clone();
    match spec.kind {
        ModelKind::Gpr => {
            let x = |ids: &[usize]| -> Vec<Vec<f64>> { ids.iter().map(|&i| norm.normalize_params(&ds.samples[i].p.values)).collect() };
            let y = |ids: &[usize]| -> Vec<Vec<f64>> { ids.iter().map(|&i| norm.normalize_kpis(&ds.samples[i].kpis.values)).collect() };
            let (xt, yt) = (x(&tr_ids), y(&tr_ids));
            let ls = if va_ids.is_empty() {
                spec.gpr_candidates.first().copied().ok_or_else(|| Error::Invalid("no length-scale candidates".into()))?
            } else {
                select_length_scale(&xt, &yt, &x(va_ids), &y(va_ids), &spec.gpr_candidates)?
            };
            let model = GprEnsemble::fit(&xt, &yt, ls, DEFAULT_JITTER)?;
            Ok(Trained {
                surrogate: Surrogate::Gpr { model, norm },
                report: None,
                length_scale: Some(ls),
                wall_time_s: start.elapsed().as_secs_f64(),
            })
        }
        _ => {
            let tr = ds.examples(&tr_ids, input)?;
            let va = ds.examples(va_ids, input)?;
            let (net, report) = train_network(ds, input, spec, &tr, &va)?;
            Ok(Trained {
                surrogate: Surrogate::Network { net, input, norm },
                report: Some(report),
                length_scale: None,
                wall_time_s: start.elapsed().as_secs_f64(),
            })
        }
    }
}

const PREDICT_BATCH: usize = 100;

impl Surrogate {
    pub fn kind(&self) -> ModelKind {
        match self {
            Surrogate::Gpr { .. } => ModelKind::Gpr,
            Surrogate::Network { input, .. } => match input {
                ModelInput::Params => ModelKind::Dnn,
                ModelInput::Image { .. } => ModelKind::Dcnn,
                ModelInput::ImageParams { .. } => ModelKind::DcnnMulti,
            },
        }
    }

    pub fn input(&self) -> ModelInput {
        match self {
            Surrogate::Network { input, .. } => *input,
            Surrogate::Gpr { .. } => ModelInput::Params,
        }
    }

    pub fn normalization(&self) -> &Normalization {
        match self {
            Surrogate::Network { norm, .. } | Surrogate::Gpr { norm, .. } => norm,
        }
    }

    pub fn label(&self) -> String {
        match self.input().resolution() {
            Some(r) => format!("{}@{}", self.kind().as_str(), resolution_key(r)),
            None => self.kind().as_str().to_string(),
        }
    }

    fn predict_encoded(&self, designs: &[&DesignVector], grids: &[Option<&PixelGrid>]) -> Result<Vec<Vec<f64>>> {
        match self {
            Surrogate::Gpr { model, norm } => {
                let x: Vec<Vec<f64>> = designs.iter().map(|p| norm.normalize_params(&p.values)).collect();
                Ok(model.predict(&x)?.iter().map(|z| norm.denormalize_kpis(z)).collect())
            }
            Surrogate::Network { net, input, norm } => {
                let (x, aux) = encode_inputs(*input, norm, designs, grids)?;
                let n_y = net.n_outputs();
                let dummy = vec![0.0; designs.len() * n_y];
                let ex = Examples::new(input.input_kind(norm.param_min.len()), x, aux, dummy, n_y)?;
                let p = predict_examples(net, &ex, PREDICT_BATCH, Some(&norm.scaling()))?;
                Ok(p.values.data().chunks(n_y).map(<[f64]>::to_vec).collect())
            }
        }
    }

    /// Denormalized predictions for dataset samples, using their stored grids.
    pub fn predict_ids(&self, ds: &Dataset, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        let input = self.input();
        let designs: Vec<&DesignVector> = ids.iter().map(|&i| &ds.samples[i].p).collect();
        let grids: Vec<Option<&PixelGrid>> = ids
            .iter()
            .map(|&i| input.resolution().and_then(|r| ds.samples[i].grids.get(&r)))
            .collect();
        self.predict_encoded(&designs, &grids)
    }

    /// Denormalized predictions for new designs, rasterizing when the model
    /// consumes images.
    pub fn predict_designs(&self, template: &MachineTemplate, designs: &[DesignVector]) -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&DesignVector> = designs.iter().collect();
        let grids: Vec<PixelGrid> = match self.input().resolution() {
            Some((w, h)) => designs
                .iter()
                .map(|p| rasterize(&template.build_cross_section(p)?, w, h))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let grid_refs: Vec<Option<&PixelGrid>> = if grids.is_empty() {
            vec![None; designs.len()]
        } else {
            grids.iter().map(Some).collect()
        };
        self.predict_encoded(&refs, &grid_refs)
    }

    pub fn predict_grids(&self, designs: &[DesignVector], grids: &[PixelGrid]) -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&DesignVector> = designs.iter().collect();
        let g: Vec<Option<&PixelGrid>> = grids.iter().map(Some).collect();
        self.predict_encoded(&refs, &g)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_value(Meta {
            input: self.input(),
            normalization: self.normalization().clone(),
        })?;
        match self {
            Surrogate::Network { net, norm, .. } => Ok(checkpoint::to_bytes(net, Some(&norm.scaling()), meta)?),
            Surrogate::Gpr { model, .. } => model.to_bytes_with_meta(meta),
        }
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.starts_with(b"MKGP") {
            let (model, meta) = GprEnsemble::from_bytes_with_meta(b)?;
            let m: Meta = serde_json::from_value(meta)?;
            Ok(Surrogate::Gpr {
                model,
                norm: m.normalization,
            })
        } else {
            let (net, header) = checkpoint::from_bytes(b)?;
            let m: Meta = serde_json::from_value(header.meta)?;
            Ok(Surrogate::Network {
                net,
                input: m.input,
                norm: m.normalization,
            })
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Per-KPI metrics of `model` on dataset samples `ids`.
pub fn evaluate_model(model: &Surrogate, ds: &Dataset, ids: &[usize]) -> Result<EvalTable> {
    let y_hat = model.predict_ids(ds, ids)?;
    let y = ds.kpi_matrix(ids);
    evaluate_predictions(&model.label(), &ds.manifest.template_id, &ds.manifest.kpi_names, &y, &y_hat)
}

/// One image network per (resolution, seed); everything else is held fixed.
pub fn resolution_study(ds: &Dataset, resolutions: &[Resolution], spec: &ModelSpec, seeds: &[u64]) -> Result<ResolutionReport> {
    if resolutions.is_empty() || seeds.is_empty() {
        return Err(Error::Invalid("resolution study needs resolutions and seeds".into()));
    }
    if spec.kind == ModelKind::Dnn || spec.kind == ModelKind::Gpr {
        return Err(Error::Invalid("resolution study needs an image model kind".into()));
    }
    for r in resolutions {
        if !ds.manifest.resolutions.contains(r) {
            return Err(Error::Invalid(format!("dataset has no {} grids", resolution_key(*r))));
        }
    }
    let tr_ids = train_ids(ds, spec.max_train);
    let mut runs = Vec::new();
    for &res in resolutions {
        let s = ModelSpec {
            resolution: Some(res),
            ..spec.clone()
        };
        let input = s.input(ds)?;
        let tr = ds.examples(&tr_ids, input)?;
        let va = ds.examples(&ds.manifest.split.val, input)?;
        for &seed in seeds {
            let start = Instant::now();
            let s = ModelSpec {
                train: TrainConfig { seed, ..s.train },
                ..s.clone()
            };
            let (net, report) = train_network(ds, input, &s, &tr, &va)?;
            let model = Surrogate::Network {
                net,
                input,
                norm: ds.manifest.normalization.clone(),
            };
            let table = evaluate_model(&model, ds, &ds.manifest.split.test)?;
            runs.push(ResolutionRun {
                resolution: res,
                seed,
                table,
                epochs: report.epochs_run(),
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(ResolutionReport::from_runs(runs))
}
