//! Design sampling, sample generation, splitting and normalization.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use motorkpi_nn::{Examples, InputKind, TargetScaling};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fe::{KpiRecord, Oracle};
use crate::geometry::{DesignVector, MachineTemplate, Material, ParamSpec};
use crate::raster::{rasterize, PixelGrid};
use crate::{Error, Result};

/// `(width_px, height_px)`
pub type Resolution = (usize, usize);

pub fn resolution_key(r: Resolution) -> String {
    format!("{}x{}", r.0, r.1)
}

/// Parses `"64x64"`, or `"64"` for a square grid.
pub fn parse_resolution(s: &str) -> Result<Resolution> {
    let bad = || Error::Invalid(format!("bad resolution `{s}`, expected WxH"));
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let r = match s.split_once(['x', 'X']) {
        Some((w, h)) => (parse(w)?, parse(h)?),
        None => {
            let n = parse(s)?;
            (n, n)
        }
    };
    if r.0 < 8 || r.1 < 8 {
        return Err(Error::Invalid(format!("resolution `{s}` below 8 pixels")));
    }
    Ok(r)
}

/// SplitMix64 finalizer, used to derive independent per-sample seeds.
pub fn mix_seed(seed: u64, id: u64) -> u64 {
    let mut z = seed ^ id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Latin hypercube in the unit cube: one point per stratum and dimension.
pub fn lhs_unit(n: usize, dims: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        perm.shuffle(rng);
        for (i, p) in pts.iter_mut().enumerate() {
            p[d] = (perm[i] as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    pts
}

/// Latin hypercube over parameter bounds.
pub fn lhs(n: usize, bounds: &[ParamSpec], seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::Invalid("LHS needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(lhs_unit(n, bounds.len(), &mut rng)
        .into_iter()
        .map(|u| {
            u.iter()
                .zip(bounds)
                .map(|(t, s)| (s.min + t * s.range()).clamp(s.min, s.max))
                .collect()
        })
        .collect())
}

pub fn lhs_designs(template: &MachineTemplate, n: usize, seed: u64) -> Result<Vec<DesignVector>> {
    lhs(n, template.params(), seed)?.into_iter().map(|v| template.design(v)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Sizes for `n` samples: train is rounded up, the rest is shared between
/// validation and test with validation taking the odd sample.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<(usize, usize, usize)> {
    if fractions.iter().any(|f| *f < 0.0 || !f.is_finite()) {
        return Err(Error::Invalid(format!("negative split fraction in {fractions:?}")));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split fractions {fractions:?} do not sum to 1")));
    }
    let train = ((fractions[0] * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n);
    let rest = n - train;
    let held = fractions[1] + fractions[2];
    let test = if held > 0.0 {
        (rest as f64 * fractions[2] / held + 1e-9).floor() as usize
    } else {
        0
    };
    Ok((train, rest - test, test))
}

pub fn split(n: usize, fractions: [f64; 3], seed: u64) -> Result<Split> {
    let (a, b, _) = split_sizes(n, fractions)?;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Split {
        train: ids[..a].to_vec(),
        val: ids[a..a + b].to_vec(),
        test: ids[a + b..].to_vec(),
    })
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.90, 0.05, 0.05];

/// Min-max parameter scaling and KPI standardization, fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub param_min: Vec<f64>,
    pub param_max: Vec<f64>,
    pub kpi_mean: Vec<f64>,
    pub kpi_std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-12;

pub fn normalization_stats(params: &[Vec<f64>], kpis: &[Vec<f64>]) -> Result<Normalization> {
    if params.len() < 2 || params.len() != kpis.len() {
        return Err(Error::Invalid("normalization needs at least 2 training samples".into()));
    }
    let np = params[0].len();
    let ny = kpis[0].len();
    let mut param_min = vec![f64::INFINITY; np];
    let mut param_max = vec![f64::NEG_INFINITY; np];
    for p in params {
        for j in 0..np {
            param_min[j] = param_min[j].min(p[j]);
            param_max[j] = param_max[j].max(p[j]);
        }
    }
    let n = kpis.len() as f64;
    let mut kpi_mean = vec![0.0; ny];
    for y in kpis {
        for j in 0..ny {
            kpi_mean[j] += y[j] / n;
        }
    }
    let mut kpi_std = vec![0.0; ny];
    for y in kpis {
        for j in 0..ny {
            kpi_std[j] += (y[j] - kpi_mean[j]).powi(2) / n;
        }
    }
    for s in &mut kpi_std {
        *s = s.sqrt().max(STD_FLOOR);
    }
    Ok(Normalization {
        param_min,
        param_max,
        kpi_mean,
        kpi_std,
    })
}

impl Normalization {
    pub fn normalize_params(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(j, v)| {
                let span = self.param_max[j] - self.param_min[j];
                if span > 0.0 {
                    (v - self.param_min[j]) / span
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn normalize_kpis(&self, y: &[f64]) -> Vec<f64> {
        self.scaling().normalize(y)
    }

    pub fn denormalize_kpis(&self, z: &[f64]) -> Vec<f64> {
        self.scaling().denormalize(z)
    }

    pub fn scaling(&self) -> TargetScaling {
        TargetScaling {
            mean: self.kpi_mean.clone(),
            std: self.kpi_std.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub p: DesignVector,
    pub grids: BTreeMap<Resolution, PixelGrid>,
    pub kpis: KpiRecord,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub template_id: String,
    pub n_samples: usize,
    pub resolutions: Vec<Resolution>,
    pub split: Split,
    pub normalization: Normalization,
    pub seed: u64,
    pub param_names: Vec<String>,
    pub kpi_names: Vec<String>,
    pub kpi_units: Vec<String>,
    pub candidates_drawn: usize,
    pub rejected_infeasible: usize,
    pub rejected_oracle: usize,
}

impl DatasetManifest {
    pub fn rejection_rate(&self) -> f64 {
        let rejected = self.rejected_infeasible + self.rejected_oracle;
        rejected as f64 / self.candidates_drawn.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateOptions {
    pub fractions: [f64; 3],
    /// Candidates screened before the feasibility rate is judged.
    pub probe: usize,
    pub min_feasible_rate: f64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            fractions: DEFAULT_FRACTIONS,
            probe: 200,
            min_feasible_rate: 0.01,
        }
    }
}

/// Draws LHS candidates, rejects infeasible ones, rasterizes each accepted
/// design at every resolution and evaluates the oracle once per design.
pub fn generate(template: &MachineTemplate, n: usize, resolutions: &[Resolution], oracle: &Oracle, seed: u64) -> Result<Dataset> {
    generate_with(template, n, resolutions, oracle, seed, &GenerateOptions::default())
}

pub fn generate_with(
    template: &MachineTemplate,
    n: usize,
    resolutions: &[Resolution],
    oracle: &Oracle,
    seed: u64,
    opts: &GenerateOptions,
) -> Result<Dataset> {
    if n < 20 {
        return Err(Error::Invalid(format!("dataset needs at least 20 samples, got {n}")));
    }
    check_resolutions(resolutions)?;
    split_sizes(n, opts.fractions)?;
    let batch = n.max(opts.probe);
    let mut accepted: Vec<Accepted> = Vec::with_capacity(n);
    let (mut drawn, mut infeasible, mut failed) = (0usize, 0usize, 0usize);
    let mut round = 0u64;
    while accepted.len() < n {
        let candidates = lhs_designs(template, batch, mix_seed(seed, u64::MAX - round))?;
        round += 1;
        let mut feasible = Vec::new();
        for p in candidates {
            if accepted.len() + feasible.len() >= n {
                break;
            }
            drawn += 1;
            if template.is_feasible(&p)? {
                feasible.push(p);
            } else {
                infeasible += 1;
            }
        }
        if round == 1 {
            // the first batch holds at least `probe` candidates unless n were found earlier
            let rate = feasible.len() as f64 / drawn.max(1) as f64;
            if rate < opts.min_feasible_rate {
                return Err(Error::Infeasible { rate, probe: drawn });
            }
        }
        if round > 1000 {
            return Err(Error::Infeasible {
                rate: accepted.len() as f64 / drawn.max(1) as f64,
                probe: drawn,
            });
        }
        failed += evaluate_into(template, feasible, resolutions, oracle, &mut accepted);
    }
    assemble(template, accepted, resolutions, seed, opts, [drawn, infeasible, failed])
}

type Accepted = (DesignVector, KpiRecord, BTreeMap<Resolution, PixelGrid>);

/// Builds a dataset from externally chosen designs, e.g. the points an
/// optimizer run visited. Infeasible designs and oracle failures are skipped.
pub fn generate_from_designs(
    template: &MachineTemplate,
    designs: &[DesignVector],
    resolutions: &[Resolution],
    oracle: &Oracle,
    seed: u64,
    opts: &GenerateOptions,
) -> Result<Dataset> {
    check_resolutions(resolutions)?;
    let mut feasible = Vec::new();
    let mut infeasible = 0;
    for p in designs {
        if template.is_feasible(p)? {
            feasible.push(p.clone());
        } else {
            infeasible += 1;
        }
    }
    let mut accepted = Vec::with_capacity(feasible.len());
    let failed = evaluate_into(template, feasible, resolutions, oracle, &mut accepted);
    if accepted.len() < 20 {
        return Err(Error::Invalid(format!("dataset needs at least 20 samples, only {} designs were usable", accepted.len())));
    }
    split_sizes(accepted.len(), opts.fractions)?;
    assemble(template, accepted, resolutions, seed, opts, [designs.len(), infeasible, failed])
}

fn check_resolutions(resolutions: &[Resolution]) -> Result<()> {
    if resolutions.is_empty() || resolutions.iter().any(|r| r.0 < 8 || r.1 < 8) {
        return Err(Error::Invalid(format!("invalid resolutions {resolutions:?}")));
    }
    Ok(())
}

/// Evaluates and rasterizes `feasible`, appending successes; returns the failure count.
fn evaluate_into(
    template: &MachineTemplate,
    feasible: Vec<DesignVector>,
    resolutions: &[Resolution],
    oracle: &Oracle,
    accepted: &mut Vec<Accepted>,
) -> usize {
    let results: Vec<Result<_>> = feasible
        .par_iter()
        .map(|p| {
            let kpis = oracle.evaluate(template, p)?;
            let cs = template.build_cross_section(p)?;
            let mut grids = BTreeMap::new();
            for &r in resolutions {
                grids.insert(r, rasterize(&cs, r.0, r.1)?.without_dir());
            }
            Ok((kpis, grids))
        })
        .collect();
    let mut failed = 0;
    for (p, r) in feasible.into_iter().zip(results) {
        match r {
            Ok((kpis, grids)) if kpis.values.iter().all(|v| v.is_finite()) => accepted.push((p, kpis, grids)),
            _ => failed += 1,
        }
    }
    failed
}

fn assemble(
    template: &MachineTemplate,
    accepted: Vec<Accepted>,
    resolutions: &[Resolution],
    seed: u64,
    opts: &GenerateOptions,
    [drawn, infeasible, failed]: [usize; 3],
) -> Result<Dataset> {
    let n = accepted.len();
    let samples: Vec<Sample> = accepted
        .into_iter()
        .enumerate()
        .map(|(id, (p, kpis, grids))| Sample {
            id,
            p,
            grids,
            kpis,
            seed: mix_seed(seed, id as u64),
        })
        .collect();
    let split = split(n, opts.fractions, seed)?;
    let normalization = stats_for(&samples, &split.train)?;
    let specs = template.kpis();
    Ok(Dataset {
        manifest: DatasetManifest {
            template_id: template.name().to_string(),
            n_samples: n,
            resolutions: resolutions.to_vec(),
            split,
            normalization,
            seed,
            param_names: template.params().iter().map(|s| s.name.clone()).collect(),
            kpi_names: specs.iter().map(|k| k.name.clone()).collect(),
            kpi_units: specs.iter().map(|k| k.unit.clone()).collect(),
            candidates_drawn: drawn,
            rejected_infeasible: infeasible,
            rejected_oracle: failed,
        },
        samples,
    })
}

fn stats_for(samples: &[Sample], ids: &[usize]) -> Result<Normalization> {
    let params: Vec<Vec<f64>> = ids.iter().map(|&i| samples[i].p.values.clone()).collect();
    let kpis: Vec<Vec<f64>> = ids.iter().map(|&i| samples[i].kpis.values.clone()).collect();
    normalization_stats(&params, &kpis)
}

/// Which representation of a design a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelInput {
    Params,
    Image { resolution: Resolution, one_hot: bool },
    ImageParams { resolution: Resolution, one_hot: bool },
}

impl ModelInput {
    pub fn resolution(&self) -> Option<Resolution> {
        match *self {
            ModelInput::Params => None,
            ModelInput::Image { resolution, .. } | ModelInput::ImageParams { resolution, .. } => Some(resolution),
        }
    }

    pub fn input_kind(&self, n_p: usize) -> InputKind {
        match *self {
            ModelInput::Params => InputKind::Scalar { features: n_p },
            ModelInput::Image { resolution, one_hot } => InputKind::Image {
                channels: if one_hot { 4 } else { 1 },
                height: resolution.1,
                width: resolution.0,
            },
            ModelInput::ImageParams { resolution, one_hot } => InputKind::ImageAux {
                channels: if one_hot { 4 } else { 1 },
                height: resolution.1,
                width: resolution.0,
                aux_dim: n_p,
            },
        }
    }
}

/// Image channels for a grid: raw material identifiers (0..3) as reals, or
/// one channel per material.
pub fn encode_grid(grid: &PixelGrid, one_hot: bool, out: &mut Vec<f64>) {
    if one_hot {
        for m in Material::ALL {
            out.extend(grid.materials.iter().map(|&v| if v == m.id() { 1.0 } else { 0.0 }));
        }
    } else {
        out.extend(grid.materials.iter().map(|&v| v as f64));
    }
}

/// Model inputs for designs and optional grids, parameters min-max scaled.
pub fn encode_inputs(
    input: ModelInput,
    norm: &Normalization,
    designs: &[&DesignVector],
    grids: &[Option<&PixelGrid>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x = Vec::new();
    let mut aux = Vec::new();
    for (i, p) in designs.iter().enumerate() {
        let scaled = norm.normalize_params(&p.values);
        match input {
            ModelInput::Params => x.extend(scaled),
            ModelInput::Image { resolution, one_hot } | ModelInput::ImageParams { resolution, one_hot } => {
                let g = grids
                    .get(i)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::Invalid(format!("missing {} grid", resolution_key(resolution))))?;
                if (g.width_px, g.height_px) != resolution {
                    return Err(Error::Invalid(format!(
                        "grid is {}x{}, model expects {}",
                        g.width_px,
                        g.height_px,
                        resolution_key(resolution)
                    )));
                }
                encode_grid(g, one_hot, &mut x);
                if matches!(input, ModelInput::ImageParams { .. }) {
                    aux.extend(scaled);
                }
            }
        }
    }
    Ok((x, aux))
}

impl Dataset {
    pub fn n_params(&self) -> usize {
        self.manifest.param_names.len()
    }

    pub fn n_kpis(&self) -> usize {
        self.manifest.kpi_names.len()
    }

    /// Network examples for `ids` with standardized targets.
    pub fn examples(&self, ids: &[usize], input: ModelInput) -> Result<Examples> {
        if let Some(r) = input.resolution() {
            if !self.manifest.resolutions.contains(&r) {
                return Err(Error::Invalid(format!(
                    "dataset has no {} grids (available: {:?})",
                    resolution_key(r),
                    self.manifest.resolutions
                )));
            }
        }
        let norm = &self.manifest.normalization;
        let designs: Vec<&DesignVector> = ids.iter().map(|&i| &self.samples[i].p).collect();
        let grids: Vec<Option<&PixelGrid>> = ids
            .iter()
            .map(|&i| input.resolution().and_then(|r| self.samples[i].grids.get(&r)))
            .collect();
        let (x, aux) = encode_inputs(input, norm, &designs, &grids)?;
        let mut y = Vec::with_capacity(ids.len() * self.n_kpis());
        for &i in ids {
            y.extend(norm.normalize_kpis(&self.samples[i].kpis.values));
        }
        Ok(Examples::new(input.input_kind(self.n_params()), x, aux, y, self.n_kpis())?)
    }

    pub fn params_matrix(&self, ids: &[usize]) -> Vec<Vec<f64>> {
        ids.iter().map(|&i| self.samples[i].p.values.clone()).collect()
    }

    pub fn kpi_matrix(&self, ids: &[usize]) -> Vec<Vec<f64>> {
        ids.iter().map(|&i| self.samples[i].kpis.values.clone()).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("samples"))?;
        std::fs::create_dir_all(dir.join("grids"))?;
        for s in &self.samples {
            std::fs::write(sample_path(dir, s.id), record_bytes(s))?;
            for (r, g) in &s.grids {
                g.write_file(&grid_path(dir, s.id, *r))?;
            }
        }
        let mut w = csv::Writer::from_path(dir.join("dataset.csv"))?;
        let mut header = vec!["id".to_string()];
        header.extend(self.manifest.param_names.iter().cloned());
        header.extend(self.manifest.kpi_names.iter().cloned());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.id.to_string()];
            row.extend(s.p.values.iter().chain(&s.kpis.values).map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let (np, ny) = (manifest.param_names.len(), manifest.kpi_names.len());
        let mut samples = Vec::with_capacity(manifest.n_samples);
        for id in 0..manifest.n_samples {
            let (rid, seed, p, y) = parse_record(&std::fs::read(sample_path(dir, id))?, np, ny)?;
            if rid != id {
                return Err(Error::Format(format!("record {id} carries id {rid}")));
            }
            let mut grids = BTreeMap::new();
            for &r in &manifest.resolutions {
                grids.insert(r, PixelGrid::read_file(&grid_path(dir, id, r))?);
            }
            samples.push(Sample {
                id,
                p: DesignVector {
                    values: p,
                    template_id: manifest.template_id.clone(),
                },
                grids,
                kpis: KpiRecord {
                    values: y,
                    names: manifest.kpi_names.clone(),
                    units: manifest.kpi_units.clone(),
                },
                seed,
            });
        }
        Ok(Dataset { manifest, samples })
    }
}

fn sample_path(dir: &Path, id: usize) -> PathBuf {
    dir.join("samples").join(format!("{id:06}.rec"))
}

fn grid_path(dir: &Path, id: usize, r: Resolution) -> PathBuf {
    dir.join("grids").join(format!("{id:06}_{}.pxg", resolution_key(r)))
}

const RECORD_MAGIC: &[u8; 4] = b"MKS1";

/// magic, u32 n_p, u32 n_y, u64 id, u64 seed, then p and y as LE f64.
fn record_bytes(s: &Sample) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(RECORD_MAGIC);
    b.extend_from_slice(&(s.p.values.len() as u32).to_le_bytes());
    b.extend_from_slice(&(s.kpis.values.len() as u32).to_le_bytes());
    b.extend_from_slice(&(s.id as u64).to_le_bytes());
    b.extend_from_slice(&s.seed.to_le_bytes());
    for v in s.p.values.iter().chain(&s.kpis.values) {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

fn parse_record(b: &[u8], np: usize, ny: usize) -> Result<(usize, u64, Vec<f64>, Vec<f64>)> {
    let bad = |why: &str| Error::Format(format!("sample record: {why}"));
    if b.len() < 28 || &b[..4] != RECORD_MAGIC {
        return Err(bad("bad header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().expect("4 bytes")) as usize;
    let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().expect("8 bytes"));
    if u32_at(4) != np || u32_at(8) != ny {
        return Err(bad("dimension mismatch with manifest"));
    }
    if b.len() != 28 + 8 * (np + ny) {
        return Err(bad("wrong length"));
    }
    let vals: Vec<f64> = b[28..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((u64_at(12) as usize, u64_at(20), vals[..np].to_vec(), vals[np..].to_vec()))
}
