//! Experiment configuration and the subcommand implementations behind the
//! `motorkpi` binary. Every command reads and writes only under `out`.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use motorkpi_core::dataset::{self, parse_resolution, resolution_key, Dataset, GenerateOptions, Resolution};
use motorkpi_core::eval::{
    compare_parameter_models, cumulative_curves, curves_csv, default_thresholds, svg_bar_chart, svg_line_chart, EvalTable,
};
use motorkpi_core::fe::{MaterialPhysics, Oracle};
use motorkpi_core::geometry::{build_template, MachineTemplate, TemplateKind};
use motorkpi_core::moo::{self, EvaluatorKind, MooConfig, OracleEvaluator, SurrogateEvaluator};
use motorkpi_core::surrogate::{evaluate_model, fit_surrogate, resolution_study, ModelKind, ModelSpec, Surrogate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Latin hypercube draws with infeasible designs rejected.
    #[default]
    Lhs,
    /// Designs visited by an oracle-driven optimizer run.
    Optimizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeSettings {
    #[serde(flatten)]
    pub moo: MooConfig,
    pub evaluator: EvaluatorKind,
    /// Re-evaluate a surrogate-driven archive with the oracle.
    pub reverify: bool,
}

impl Default for OptimizeSettings {
    fn default() -> Self {
        OptimizeSettings {
            moo: MooConfig::default(),
            evaluator: EvaluatorKind::Oracle,
            reverify: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub template: String,
    pub n_samples: usize,
    /// Grid sizes such as `"64x64"`.
    pub resolutions: Vec<String>,
    /// Optional JSON file overriding the template's material physics.
    pub physics: Option<PathBuf>,
    pub sampling: Sampling,
    pub generate: GenerateOptions,
    pub model: ModelSpec,
    /// Seeds for dataset generation (first), training and the resolution study.
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub optimize: OptimizeSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            template: TemplateKind::FullPoleVc.to_string(),
            n_samples: 200,
            resolutions: vec!["64x64".into()],
            physics: None,
            sampling: Sampling::Lhs,
            generate: GenerateOptions::default(),
            model: ModelSpec::default(),
            seeds: vec![1],
            out: PathBuf::from("out"),
            optimize: OptimizeSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.seeds.is_empty(), "config needs at least one seed");
        self.template_kind()?;
        self.parsed_resolutions()?;
        if let Some(p) = &self.physics {
            ensure!(p.exists(), "physics file {} does not exist", p.display());
        }
        self.optimize.moo.validate()?;
        Ok(())
    }

    fn template_kind(&self) -> Result<TemplateKind> {
        Ok(self.template.parse::<TemplateKind>()?)
    }

    pub fn template(&self) -> Result<MachineTemplate> {
        Ok(build_template(self.template_kind()?))
    }

    pub fn parsed_resolutions(&self) -> Result<Vec<Resolution>> {
        ensure!(!self.resolutions.is_empty(), "config needs at least one resolution");
        let mut r = self.resolutions.iter().map(|s| parse_resolution(s)).collect::<motorkpi_core::Result<Vec<_>>>()?;
        r.sort_by_key(|&(w, h)| (w * h, w));
        r.dedup();
        Ok(r)
    }

    pub fn oracle(&self, template: &MachineTemplate) -> Result<Oracle> {
        let mut o = Oracle::for_template(template);
        if let Some(p) = &self.physics {
            o.physics = MaterialPhysics::from_file(p)?;
        }
        Ok(o)
    }

    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }

    /// Model spec with the run seed applied to training.
    pub fn train_spec(&self) -> ModelSpec {
        let mut s = self.model.clone();
        s.train.seed = self.seed();
        s
    }

    /// Checkpoint label for `spec`, matching `Surrogate::label`.
    pub fn model_label(&self, spec: &ModelSpec, ds_resolutions: &[Resolution]) -> Result<String> {
        Ok(match spec.kind {
            ModelKind::Dnn | ModelKind::Gpr => spec.kind.as_str().to_string(),
            _ => {
                let r = match (spec.resolution, ds_resolutions) {
                    (Some(r), _) => r,
                    (None, [r]) => *r,
                    _ => bail!("model.resolution must be set when several resolutions exist"),
                };
                format!("{}@{}", spec.kind.as_str(), resolution_key(r))
            }
        })
    }

    pub fn checkpoint_path(&self, label: &str) -> PathBuf {
        self.models_dir().join(format!("{label}.bin"))
    }
}

/// Files written by one command, relative to the output directory.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
pub struct Produced {
    pub command: String,
    pub files: Vec<String>,
}

impl Produced {
    fn new(command: &str) -> Self {
        Produced {
            command: command.into(),
            files: Vec::new(),
        }
    }

    fn write(&mut self, out: &Path, rel: &str, content: impl AsRef<[u8]>) -> Result<()> {
        let path = out.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn record(&mut self, rel: &str) {
        self.files.push(rel.to_string());
    }

    fn finish(mut self, out: &Path) -> Result<Self> {
        self.files.sort();
        self.files.dedup();
        let rel = format!("produced-{}.json", self.command);
        std::fs::write(out.join(&rel), serde_json::to_string_pretty(&self)?)?;
        Ok(self)
    }
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = cfg.dataset_dir();
    ensure!(
        dir.join("manifest.json").exists(),
        "no dataset at {}; run gen-data first",
        dir.display()
    );
    Ok(Dataset::load(&dir)?)
}

fn load_model(cfg: &ExperimentConfig, label: &str) -> Result<Surrogate> {
    let path = cfg.checkpoint_path(label);
    ensure!(path.exists(), "no checkpoint at {}; run train first", path.display());
    Ok(Surrogate::load(&path)?)
}

pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Produced> {
    cfg.validate()?;
    let t = cfg.template()?;
    let oracle = cfg.oracle(&t)?;
    let res = cfg.parsed_resolutions()?;
    let mut produced = Produced::new("gen-data");
    let ds = match cfg.sampling {
        Sampling::Lhs => dataset::generate_with(&t, cfg.n_samples, &res, &oracle, cfg.seed(), &cfg.generate)?,
        Sampling::Optimizer => {
            let mc = MooConfig {
                seed: cfg.seed(),
                ..cfg.optimize.moo.clone()
            };
            let run = moo::run(&t, &OracleEvaluator { oracle: oracle.clone() }, &mc)?;
            let mut designs = moo::evaluated_designs(&run);
            designs.truncate(cfg.n_samples);
            dataset::generate_from_designs(&t, &designs, &res, &oracle, cfg.seed(), &cfg.generate)?
        }
    };
    let dir = cfg.dataset_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    ds.write(&dir)?;
    produced.record("dataset/manifest.json");
    produced.record("dataset/dataset.csv");
    let m = &ds.manifest;
    println!(
        "generated {} samples of {} (rejection rate {:.1}%, split {}/{}/{})",
        m.n_samples,
        m.template_id,
        100.0 * m.rejection_rate(),
        m.split.train.len(),
        m.split.val.len(),
        m.split.test.len()
    );
    produced.finish(&cfg.out)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Produced> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let spec = cfg.train_spec();
    let trained = fit_surrogate(&ds, &spec)?;
    let label = trained.surrogate.label();
    let mut produced = Produced::new("train");
    std::fs::create_dir_all(cfg.models_dir())?;
    trained.surrogate.save(&cfg.checkpoint_path(&label))?;
    produced.record(&format!("models/{label}.bin"));
    match &trained.report {
        Some(r) => {
            let mut csv = String::from("epoch,train_mse,val_mse\n");
            for (i, (a, b)) in r.train_mse.iter().zip(&r.val_mse).enumerate() {
                csv.push_str(&format!("{},{a:e},{b:e}\n", i + 1));
            }
            produced.write(&cfg.out, &format!("models/{label}-curve.csv"), csv)?;
            let epochs: Vec<f64> = (1..=r.epochs_run()).map(|e| e as f64).collect();
            let svg = svg_line_chart(
                &format!("Training curve {label}"),
                "epoch",
                "MSE (normalized)",
                &[("train".into(), epochs.clone(), r.train_mse.clone()), ("validation".into(), epochs, r.val_mse.clone())],
            );
            produced.write(&cfg.out, &format!("models/{label}-curve.svg"), svg)?;
            produced.write(&cfg.out, &format!("models/{label}-report.json"), serde_json::to_string_pretty(r)?)?;
            println!(
                "trained {label}: {} epochs, best epoch {}, best val MSE {:.4e}, stopped early: {}",
                r.epochs_run(),
                r.best_epoch,
                r.best_val_mse,
                r.stopped_early
            );
        }
        None => {
            let summary = serde_json::json!({
                "model": label,
                "length_scale": trained.length_scale,
                "n_train": spec.max_train.map_or(ds.manifest.split.train.len(), |m| m.min(ds.manifest.split.train.len())),
            });
            produced.write(&cfg.out, &format!("models/{label}-fit.json"), serde_json::to_string_pretty(&summary)?)?;
            println!("fitted {label}: length scale {}", trained.length_scale.unwrap_or(f64::NAN));
        }
    }
    produced.finish(&cfg.out)
}

fn write_table(produced: &mut Produced, out: &Path, stem: &str, table: &EvalTable) -> Result<()> {
    produced.write(out, &format!("{stem}.csv"), table.to_csv())?;
    let names: Vec<String> = table.rows.iter().map(|r| r.name.clone()).collect();
    let mre: Vec<f64> = table.rows.iter().map(|r| r.mre.unwrap_or(f64::NAN)).collect();
    let svg = svg_bar_chart(&format!("MRE per KPI, {}", table.model_id), &names, &[(table.model_id.clone(), mre)]);
    produced.write(out, &format!("{stem}.svg"), svg)
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Produced> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let label = cfg.model_label(&cfg.model, &ds.manifest.resolutions)?;
    let model = load_model(cfg, &label)?;
    let ids = &ds.manifest.split.test;
    let table = evaluate_model(&model, &ds, ids)?;
    let mut produced = Produced::new("eval");
    write_table(&mut produced, &cfg.out, &format!("eval/{label}-table"), &table)?;
    let y = ds.kpi_matrix(ids);
    let y_hat = model.predict_ids(&ds, ids)?;
    let curves = cumulative_curves(&ds.manifest.kpi_names, &y, &y_hat, &default_thresholds())?;
    produced.write(&cfg.out, &format!("eval/{label}-cumulative.csv"), curves_csv(&curves))?;
    let series: Vec<(String, Vec<f64>, Vec<f64>)> = curves
        .iter()
        .map(|(n, c)| (n.clone(), c.thresholds.clone(), c.fraction_below.iter().map(|f| 100.0 * f).collect()))
        .collect();
    let svg = svg_line_chart(&format!("Cumulative accuracy {label}"), "relative error (%)", "test samples below (%)", &series);
    produced.write(&cfg.out, &format!("eval/{label}-cumulative.svg"), svg)?;
    for r in &table.rows {
        match (r.mre, r.pcc) {
            (Some(m), Some(p)) => println!("  {:<14} MRE {m:7.3}%  PCC {p:.4}", r.name),
            _ => println!("  {:<14} {}", r.name, r.error.as_deref().unwrap_or("not computable")),
        }
    }
    match table.average_mre() {
        Some(a) => println!("{label}: average MRE over KPIs {a:.3}% on {} test samples", table.n_test),
        None => println!("{label}: average MRE not computable"),
    }
    produced.finish(&cfg.out)
}

pub fn cmd_resolution_study(cfg: &ExperimentConfig) -> Result<Produced> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let res = cfg.parsed_resolutions()?;
    let report = resolution_study(&ds, &res, &cfg.model, &cfg.seeds)?;
    let mut produced = Produced::new("resolution-study");
    produced.write(&cfg.out, "resolution/runs.csv", report.to_csv())?;
    produced.write(&cfg.out, "resolution/summary.csv", report.summary_csv())?;
    let kpis = ds.manifest.kpi_names.clone();
    let series: Vec<(String, Vec<f64>)> = report
        .summary
        .iter()
        .map(|s| {
            let runs: Vec<_> = report.runs.iter().filter(|r| r.resolution == s.resolution).collect();
            let per_kpi = kpis
                .iter()
                .map(|k| runs.iter().filter_map(|r| r.table.mre_of(k)).sum::<f64>() / runs.len() as f64)
                .collect();
            (resolution_key(s.resolution), per_kpi)
        })
        .collect();
    produced.write(&cfg.out, "resolution/mre.svg", svg_bar_chart("MRE per KPI by grid resolution", &kpis, &series))?;
    for s in &report.summary {
        let imp = s.finest_improvement_percent.map_or(String::new(), |p| format!(", finest grid improves by {p:.1}%"));
        println!("{}: average MRE over KPIs {:.3}%{imp}", resolution_key(s.resolution), s.mean_mre);
    }
    println!(
        "finest beats coarsest in {} of {} seeds",
        report.seeds_finest_beats_coarsest(),
        report.seeds().len()
    );
    produced.finish(&cfg.out)
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<Produced> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let ids = &ds.manifest.split.test;
    let dnn = evaluate_model(&load_model(cfg, "dnn")?, &ds, ids)?;
    let gpr = evaluate_model(&load_model(cfg, "gpr")?, &ds, ids)?;
    let cmp = compare_parameter_models(&dnn, &gpr)?;
    let mut produced = Produced::new("compare");
    produced.write(&cfg.out, "compare/comparison.csv", cmp.to_csv())?;
    let names: Vec<String> = cmp.rows.iter().map(|r| r.name.clone()).collect();
    let svg = svg_bar_chart(
        "MRE per KPI, GPR vs DNN",
        &names,
        &[
            ("GPR".into(), cmp.rows.iter().map(|r| r.gpr_mre).collect()),
            ("DNN".into(), cmp.rows.iter().map(|r| r.dnn_mre).collect()),
        ],
    );
    produced.write(&cfg.out, "compare/comparison.svg", svg)?;
    for r in &cmp.rows {
        println!("  {:<14} GPR {:7.3}%  DNN {:7.3}%", r.name, r.gpr_mre, r.dnn_mre);
    }
    println!(
        "average MRE over KPIs: GPR {:.3}%, DNN {:.3}%",
        gpr.average_mre().unwrap_or(f64::NAN),
        dnn.average_mre().unwrap_or(f64::NAN)
    );
    produced.finish(&cfg.out)
}

pub fn cmd_optimize(cfg: &ExperimentConfig) -> Result<Produced> {
    cfg.validate()?;
    let t = cfg.template()?;
    let oracle = cfg.oracle(&t)?;
    let mut mc = cfg.optimize.moo.clone();
    mc.seed = cfg.seed();
    let mut produced = Produced::new("optimize");
    let params: Vec<String> = t.params().iter().map(|s| s.name.clone()).collect();
    let kpis: Vec<String> = t.kpis().iter().map(|k| k.name.clone()).collect();
    let run = match cfg.optimize.evaluator {
        EvaluatorKind::Oracle => moo::run(&t, &OracleEvaluator { oracle: oracle.clone() }, &mc)?,
        EvaluatorKind::Surrogate => {
            let ds = load_dataset(cfg)?;
            ensure!(ds.manifest.template_id == t.name(), "dataset template {} differs from {}", ds.manifest.template_id, t.name());
            let label = cfg.model_label(&cfg.model, &ds.manifest.resolutions)?;
            let model = load_model(cfg, &label)?;
            moo::run(
                &t,
                &SurrogateEvaluator {
                    model,
                    kpi_names: ds.manifest.kpi_names.clone(),
                },
                &mc,
            )?
        }
    };
    let tag = match run.evaluator {
        EvaluatorKind::Oracle => "oracle",
        EvaluatorKind::Surrogate => "surrogate",
    };
    produced.write(&cfg.out, &format!("optimize/{tag}-archive.csv"), run.archive.to_csv(&params, &kpis))?;
    produced.write(&cfg.out, &format!("optimize/{tag}-history.csv"), run.history_csv())?;
    let gens: Vec<f64> = run.history.iter().map(|h| h.generation as f64).collect();
    if run.history.iter().all(|h| h.hypervolume.is_some()) {
        let hv: Vec<f64> = run.history.iter().filter_map(|h| h.hypervolume).collect();
        let svg = svg_line_chart("Archive hypervolume", "generation", "hypervolume", &[(tag.into(), gens, hv)]);
        produced.write(&cfg.out, &format!("optimize/{tag}-hypervolume.svg"), svg)?;
    }
    println!(
        "{tag} run: {} evaluations, archive of {}, {:.3e} s per evaluation",
        run.evaluations,
        run.archive.members.len(),
        run.time_per_evaluation()
    );
    if let Some(h) = run.history.last().and_then(|h| h.hypervolume) {
        println!("final hypervolume {h:.6e}");
    }
    if run.evaluator == EvaluatorKind::Surrogate && cfg.optimize.reverify {
        let verified = moo::reverify(&t, &run.archive, &OracleEvaluator { oracle })?;
        produced.write(&cfg.out, "optimize/surrogate-verified-archive.csv", verified.to_csv(&params, &kpis))?;
        if let Some(r) = &run.reference {
            println!("oracle-verified hypervolume {:.6e}", verified.hypervolume(r)?);
        }
    }
    produced.finish(&cfg.out)
}
