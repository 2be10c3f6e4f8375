//! NSGA-II style multi-objective optimization over a template's design
//! space with a pluggable KPI evaluator.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{lhs_unit, mix_seed};
use crate::fe::Oracle;
use crate::geometry::{DesignVector, MachineTemplate};
use crate::surrogate::Surrogate;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub kpi: String,
    pub direction: Direction,
}

impl Objective {
    pub fn minimize(kpi: &str) -> Self {
        Objective {
            kpi: kpi.into(),
            direction: Direction::Minimize,
        }
    }

    pub fn maximize(kpi: &str) -> Self {
        Objective {
            kpi: kpi.into(),
            direction: Direction::Maximize,
        }
    }

    /// Value in minimization form.
    pub fn score(&self, v: f64) -> f64 {
        match self.direction {
            Direction::Minimize => v,
            Direction::Maximize => -v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MooConfig {
    pub population: usize,
    pub generations: usize,
    pub seed: u64,
    pub objectives: Vec<Objective>,
    pub eta_crossover: f64,
    pub crossover_rate: f64,
    pub eta_mutation: f64,
    /// Per-variable mutation probability; `None` means `1 / n_p`.
    pub mutation_rate: Option<f64>,
    /// Hypervolume reference in minimization form (two objectives only).
    /// `None` derives it once from the initial population.
    pub reference: Option<Vec<f64>>,
}

impl Default for MooConfig {
    fn default() -> Self {
        MooConfig {
            population: 32,
            generations: 20,
            seed: 0,
            objectives: vec![Objective::minimize("cost"), Objective::maximize("max_torque")],
            eta_crossover: 15.0,
            crossover_rate: 0.9,
            eta_mutation: 20.0,
            mutation_rate: None,
            reference: None,
        }
    }
}

impl MooConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objectives.is_empty() {
            return Err(Error::Invalid("at least one objective is required".into()));
        }
        if self.population < 2 || self.population % 2 != 0 {
            return Err(Error::Invalid(format!("population must be even and >= 2, got {}", self.population)));
        }
        if let Some(r) = &self.reference {
            if r.len() != self.objectives.len() {
                return Err(Error::Invalid("reference point length must match the objectives".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    Oracle,
    Surrogate,
}

/// Maps designs to KPI vectors in the template's KPI order.
pub trait Evaluator: Sync {
    fn kind(&self) -> EvaluatorKind;
    fn kpi_names(&self) -> Vec<String>;
    fn evaluate(&self, template: &MachineTemplate, designs: &[DesignVector]) -> Vec<std::result::Result<Vec<f64>, String>>;
}

pub struct OracleEvaluator {
    pub oracle: Oracle,
}

impl Evaluator for OracleEvaluator {
    fn kind(&self) -> EvaluatorKind {
        EvaluatorKind::Oracle
    }

    fn kpi_names(&self) -> Vec<String> {
        crate::geometry::default_kpis().into_iter().map(|k| k.name).collect()
    }

    fn evaluate(&self, template: &MachineTemplate, designs: &[DesignVector]) -> Vec<std::result::Result<Vec<f64>, String>> {
        designs
            .par_iter()
            .map(|p| self.oracle.evaluate(template, p).map(|r| r.values).map_err(|e| e.to_string()))
            .collect()
    }
}

pub struct SurrogateEvaluator {
    pub model: Surrogate,
    pub kpi_names: Vec<String>,
}

impl Evaluator for SurrogateEvaluator {
    fn kind(&self) -> EvaluatorKind {
        EvaluatorKind::Surrogate
    }

    fn kpi_names(&self) -> Vec<String> {
        self.kpi_names.clone()
    }

    fn evaluate(&self, template: &MachineTemplate, designs: &[DesignVector]) -> Vec<std::result::Result<Vec<f64>, String>> {
        match self.model.predict_designs(template, designs) {
            Ok(rows) => rows.into_iter().map(Ok).collect(),
            Err(e) => vec![Err(e.to_string()); designs.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub p: DesignVector,
    /// Position in the unit hypercube the variation operators work in.
    pub u: Vec<f64>,
    pub y: Option<Vec<f64>>,
    /// Objectives in minimization form.
    pub f: Vec<f64>,
    pub violation: f64,
    pub feasible: bool,
    pub rank: usize,
    pub crowding: f64,
    pub diagnostic: Option<String>,
}

/// `a` dominates `b` under minimization.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Pareto rank of each point (0 = non-dominated), minimization.
pub fn non_dominated_sort(objectives: &[Vec<f64>]) -> Vec<usize> {
    let n = objectives.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&objectives[i], &objectives[j]) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(&objectives[j], &objectives[i]) {
                dominates_list[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut rank = vec![0usize; n];
    let mut front: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    let mut r = 0;
    while !front.is_empty() {
        let mut next = Vec::new();
        for &i in &front {
            rank[i] = r;
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        front = next;
        r += 1;
    }
    rank
}

/// Crowding distance of each member of one front; boundary points get infinity.
pub fn crowding_distance(objectives: &[Vec<f64>]) -> Vec<f64> {
    let n = objectives.len();
    let mut d = vec![0.0; n];
    if n == 0 {
        return d;
    }
    for m in 0..objectives[0].len() {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| objectives[a][m].total_cmp(&objectives[b][m]).then(a.cmp(&b)));
        let (lo, hi) = (objectives[idx[0]][m], objectives[idx[n - 1]][m]);
        d[idx[0]] = f64::INFINITY;
        d[idx[n - 1]] = f64::INFINITY;
        if hi > lo {
            for k in 1..n.saturating_sub(1) {
                d[idx[k]] += (objectives[idx[k + 1]][m] - objectives[idx[k - 1]][m]) / (hi - lo);
            }
        }
    }
    d
}

/// Area dominated by a two-objective front relative to `reference`.
pub fn hypervolume_2d(front: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    if reference.len() != 2 || front.iter().any(|p| p.len() != 2) {
        return Err(Error::Invalid("hypervolume_2d needs two objectives".into()));
    }
    if let Some(p) = front.iter().find(|p| !(p[0] < reference[0] && p[1] < reference[1])) {
        return Err(Error::Invalid(format!("point {p:?} does not dominate the reference {reference:?}")));
    }
    let mut pts: Vec<&Vec<f64>> = front.iter().collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut area = 0.0;
    let mut y_best = reference[1];
    for p in pts {
        if p[1] < y_best {
            area += (reference[0] - p[0]) * (y_best - p[1]);
            y_best = p[1];
        }
    }
    Ok(area)
}

/// Hypervolume counting only the points that dominate the reference.
pub fn hypervolume_within(front: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    let inside: Vec<Vec<f64>> = front
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(a, r)| a < r))
        .cloned()
        .collect();
    hypervolume_2d(&inside, reference)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    pub objectives: Vec<Objective>,
    pub members: Vec<Individual>,
}

impl ParetoArchive {
    pub fn new(objectives: Vec<Objective>) -> Self {
        ParetoArchive {
            objectives,
            members: Vec::new(),
        }
    }

    /// Merges feasible candidates, keeping only non-dominated, distinct points.
    pub fn update(&mut self, candidates: &[Individual]) {
        for c in candidates.iter().filter(|c| c.feasible) {
            if self.members.iter().any(|m| dominates(&m.f, &c.f) || m.f == c.f) {
                continue;
            }
            self.members.retain(|m| !dominates(&c.f, &m.f));
            let mut c = c.clone();
            c.rank = 0;
            self.members.push(c);
        }
        self.members.sort_by(|a, b| {
            a.f.iter()
                .zip(&b.f)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    }

    pub fn front(&self) -> Vec<Vec<f64>> {
        self.members.iter().map(|m| m.f.clone()).collect()
    }

    pub fn hypervolume(&self, reference: &[f64]) -> Result<f64> {
        hypervolume_within(&self.front(), reference)
    }

    /// Brute-force check that no member dominates another.
    pub fn is_mutually_non_dominated(&self) -> bool {
        self.members
            .iter()
            .enumerate()
            .all(|(i, a)| self.members.iter().enumerate().all(|(j, b)| i == j || !dominates(&a.f, &b.f)))
    }

    pub fn to_csv(&self, param_names: &[String], kpi_names: &[String]) -> String {
        let mut s = String::new();
        let head: Vec<String> = param_names.iter().chain(kpi_names).cloned().chain(["rank".to_string()]).collect();
        let _ = writeln!(s, "{}", head.join(","));
        for m in &self.members {
            let vals: Vec<String> = m
                .p
                .values
                .iter()
                .chain(m.y.as_deref().unwrap_or(&[]))
                .map(|v| format!("{v}"))
                .chain([m.rank.to_string()])
                .collect();
            let _ = writeln!(s, "{}", vals.join(","));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub hypervolume: Option<f64>,
    /// Best archive value per objective, minimization form.
    pub best: Vec<f64>,
    pub evaluations: usize,
    pub archive_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MooRun {
    pub config: MooConfig,
    pub template_id: String,
    pub evaluator: EvaluatorKind,
    pub archive: ParetoArchive,
    pub history: Vec<GenerationStats>,
    pub reference: Option<Vec<f64>>,
    /// Every evaluated individual in evaluation order.
    pub evaluated: Vec<Individual>,
    pub evaluations: usize,
    pub eval_time_s: f64,
    pub wall_time_s: f64,
}

impl MooRun {
    pub fn time_per_evaluation(&self) -> f64 {
        self.eval_time_s / self.evaluations.max(1) as f64
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("generation,hypervolume,evaluations,archive_size");
        for o in &self.config.objectives {
            let _ = write!(s, ",best_{}", o.kpi);
        }
        s.push('\n');
        for h in &self.history {
            let hv = h.hypervolume.map_or(String::new(), |v| format!("{v}"));
            let _ = write!(s, "{},{hv},{},{}", h.generation, h.evaluations, h.archive_size);
            for (b, o) in h.best.iter().zip(&self.config.objectives) {
                let _ = write!(s, ",{}", o.score(*b));
            }
            s.push('\n');
        }
        s
    }
}

struct Ctx<'a> {
    template: &'a MachineTemplate,
    evaluator: &'a dyn Evaluator,
    kpi_idx: Vec<usize>,
    objectives: &'a [Objective],
    evaluations: usize,
    eval_time: f64,
}

/// Violation assigned when the evaluator fails on a design.
const FAILED_VIOLATION: f64 = 1e30;

impl Ctx<'_> {
    fn evaluate(&mut self, units: Vec<Vec<f64>>) -> Result<Vec<Individual>> {
        let mut inds = Vec::with_capacity(units.len());
        let mut todo = Vec::new();
        for u in units {
            let p = self.template.design_from_unit(&u)?;
            let violation = self.template.violation(&p)?;
            if violation == 0.0 {
                todo.push(inds.len());
            }
            inds.push(Individual {
                p,
                u,
                y: None,
                f: vec![f64::INFINITY; self.objectives.len()],
                violation,
                feasible: false,
                rank: usize::MAX,
                crowding: 0.0,
                diagnostic: None,
            });
        }
        let designs: Vec<DesignVector> = todo.iter().map(|&i| inds[i].p.clone()).collect();
        let start = Instant::now();
        let out = self.evaluator.evaluate(self.template, &designs);
        self.eval_time += start.elapsed().as_secs_f64();
        self.evaluations += designs.len();
        for (&i, r) in todo.iter().zip(out) {
            let ind = &mut inds[i];
            match r {
                Ok(y) if y.len() > self.kpi_idx.iter().copied().max().unwrap_or(0) && y.iter().all(|v| v.is_finite()) => {
                    ind.f = self.kpi_idx.iter().zip(self.objectives).map(|(&k, o)| o.score(y[k])).collect();
                    ind.y = Some(y);
                    ind.feasible = true;
                }
                Ok(_) => {
                    ind.violation = FAILED_VIOLATION;
                    ind.diagnostic = Some("evaluator returned an invalid KPI vector".into());
                }
                Err(e) => {
                    ind.violation = FAILED_VIOLATION;
                    ind.diagnostic = Some(e);
                }
            }
        }
        Ok(inds)
    }
}

/// Constraint-dominated ranking: feasible points by Pareto rank, then
/// infeasible points ordered by total violation.
fn assign_rank_and_crowding(pop: &mut [Individual]) {
    let feas: Vec<usize> = (0..pop.len()).filter(|&i| pop[i].feasible).collect();
    let ranks = non_dominated_sort(&feas.iter().map(|&i| pop[i].f.clone()).collect::<Vec<_>>());
    let n_fronts = ranks.iter().map(|r| r + 1).max().unwrap_or(0);
    for (k, &i) in feas.iter().enumerate() {
        pop[i].rank = ranks[k];
    }
    for r in 0..n_fronts {
        let members: Vec<usize> = feas.iter().zip(&ranks).filter(|(_, &rk)| rk == r).map(|(&i, _)| i).collect();
        let d = crowding_distance(&members.iter().map(|&i| pop[i].f.clone()).collect::<Vec<_>>());
        for (&i, c) in members.iter().zip(d) {
            pop[i].crowding = c;
        }
    }
    let mut infeas: Vec<usize> = (0..pop.len()).filter(|&i| !pop[i].feasible).collect();
    infeas.sort_by(|&a, &b| pop[a].violation.total_cmp(&pop[b].violation).then(a.cmp(&b)));
    for (k, &i) in infeas.iter().enumerate() {
        pop[i].rank = n_fronts + k;
        pop[i].crowding = 0.0;
    }
}

fn better(a: &Individual, b: &Individual) -> bool {
    match (a.feasible, b.feasible) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.violation <= b.violation,
        (true, true) => a.rank < b.rank || (a.rank == b.rank && a.crowding >= b.crowding),
    }
}

fn tournament<'a>(pop: &'a [Individual], rng: &mut ChaCha8Rng) -> &'a Individual {
    let a = &pop[rng.gen_range(0..pop.len())];
    let b = &pop[rng.gen_range(0..pop.len())];
    if better(a, b) {
        a
    } else {
        b
    }
}

/// Simulated binary crossover on `[0, 1]` bounds.
fn sbx(a: &[f64], b: &[f64], eta: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = a.to_vec();
    let mut c2 = b.to_vec();
    for i in 0..a.len() {
        if !rng.gen_bool(0.5) || (a[i] - b[i]).abs() < 1e-14 {
            continue;
        }
        let (y1, y2) = if a[i] < b[i] { (a[i], b[i]) } else { (b[i], a[i]) };
        let r: f64 = rng.gen();
        let spread = |beta: f64| {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if r <= 1.0 / alpha {
                (r * alpha).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 - r * alpha)).powf(1.0 / (eta + 1.0))
            }
        };
        let bq1 = spread(1.0 + 2.0 * y1 / (y2 - y1));
        let bq2 = spread(1.0 + 2.0 * (1.0 - y2) / (y2 - y1));
        let v1 = (0.5 * ((y1 + y2) - bq1 * (y2 - y1))).clamp(0.0, 1.0);
        let v2 = (0.5 * ((y1 + y2) + bq2 * (y2 - y1))).clamp(0.0, 1.0);
        if rng.gen_bool(0.5) {
            c1[i] = v2;
            c2[i] = v1;
        } else {
            c1[i] = v1;
            c2[i] = v2;
        }
    }
    (c1, c2)
}

/// Bounded polynomial mutation on `[0, 1]`.
fn mutate(u: &mut [f64], eta: f64, rate: f64, rng: &mut ChaCha8Rng) {
    for x in u.iter_mut() {
        if !rng.gen_bool(rate.clamp(0.0, 1.0)) {
            continue;
        }
        let (d1, d2) = (*x, 1.0 - *x);
        let r: f64 = rng.gen();
        let pow = 1.0 / (eta + 1.0);
        let dq = if r < 0.5 {
            let v = 2.0 * r + (1.0 - 2.0 * r) * (1.0 - d1).powf(eta + 1.0);
            v.powf(pow) - 1.0
        } else {
            let v = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * (1.0 - d2).powf(eta + 1.0);
            1.0 - v.powf(pow)
        };
        *x = (*x + dq).clamp(0.0, 1.0);
    }
}

fn derive_reference(pop: &[Individual], m: usize) -> Option<Vec<f64>> {
    let feas: Vec<&Individual> = pop.iter().filter(|i| i.feasible).collect();
    if m != 2 || feas.is_empty() {
        return None;
    }
    Some(
        (0..m)
            .map(|k| {
                let lo = feas.iter().map(|i| i.f[k]).fold(f64::INFINITY, f64::min);
                let hi = feas.iter().map(|i| i.f[k]).fold(f64::NEG_INFINITY, f64::max);
                hi + 0.1 * (hi - lo).max(hi.abs() * 1e-3).max(1e-9)
            })
            .collect(),
    )
}

fn stats(generation: usize, archive: &ParetoArchive, reference: Option<&Vec<f64>>, evaluations: usize, m: usize) -> Result<GenerationStats> {
    let best = (0..m)
        .map(|k| archive.members.iter().map(|i| i.f[k]).fold(f64::INFINITY, f64::min))
        .collect();
    let hypervolume = match reference {
        Some(r) if m == 2 => Some(archive.hypervolume(r)?),
        _ => None,
    };
    Ok(GenerationStats {
        generation,
        hypervolume,
        best,
        evaluations,
        archive_size: archive.members.len(),
    })
}

/// Runs the optimizer. Generation 0 is the LHS population.
pub fn run(template: &MachineTemplate, evaluator: &dyn Evaluator, cfg: &MooConfig) -> Result<MooRun> {
    cfg.validate()?;
    let start = Instant::now();
    let names = evaluator.kpi_names();
    let kpi_idx = cfg
        .objectives
        .iter()
        .map(|o| {
            names
                .iter()
                .position(|n| *n == o.kpi)
                .ok_or_else(|| Error::Invalid(format!("unknown objective KPI `{}` (have {names:?})", o.kpi)))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = cfg.objectives.len();
    let n_p = template.n_params();
    let mut ctx = Ctx {
        template,
        evaluator,
        kpi_idx,
        objectives: &cfg.objectives,
        evaluations: 0,
        eval_time: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0));
    let mut pop = ctx.evaluate(lhs_unit(cfg.population, n_p, &mut rng))?;
    let mut evaluated = pop.clone();
    assign_rank_and_crowding(&mut pop);
    let reference = cfg.reference.clone().or_else(|| derive_reference(&pop, m));
    let mut archive = ParetoArchive::new(cfg.objectives.clone());
    archive.update(&pop);
    let mut history = vec![stats(0, &archive, reference.as_ref(), ctx.evaluations, m)?];
    let mutation_rate = cfg.mutation_rate.unwrap_or(1.0 / n_p as f64);

    for gen in 1..=cfg.generations {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, gen as u64));
        let mut children = Vec::with_capacity(cfg.population);
        while children.len() < cfg.population {
            let (a, b) = (tournament(&pop, &mut rng), tournament(&pop, &mut rng));
            let (mut c1, mut c2) = if rng.gen_bool(cfg.crossover_rate) {
                sbx(&a.u, &b.u, cfg.eta_crossover, &mut rng)
            } else {
                (a.u.clone(), b.u.clone())
            };
            mutate(&mut c1, cfg.eta_mutation, mutation_rate, &mut rng);
            mutate(&mut c2, cfg.eta_mutation, mutation_rate, &mut rng);
            children.push(c1);
            children.push(c2);
        }
        let offspring = ctx.evaluate(children)?;
        evaluated.extend(offspring.iter().cloned());
        archive.update(&offspring);
        let mut merged: Vec<Individual> = pop.into_iter().chain(offspring).collect();
        assign_rank_and_crowding(&mut merged);
        let mut order: Vec<usize> = (0..merged.len()).collect();
        order.sort_by(|&a, &b| {
            merged[a]
                .rank
                .cmp(&merged[b].rank)
                .then(merged[b].crowding.total_cmp(&merged[a].crowding))
                .then(a.cmp(&b))
        });
        let mut keep = vec![false; merged.len()];
        for &i in order.iter().take(cfg.population) {
            keep[i] = true;
        }
        pop = merged.into_iter().zip(keep).filter(|(_, k)| *k).map(|(i, _)| i).collect();
        // crowding must be recomputed on the survivors for the next tournament
        assign_rank_and_crowding(&mut pop);
        history.push(stats(gen, &archive, reference.as_ref(), ctx.evaluations, m)?);
    }
    Ok(MooRun {
        config: cfg.clone(),
        template_id: template.name().to_string(),
        evaluator: evaluator.kind(),
        archive,
        history,
        reference,
        evaluated,
        evaluations: ctx.evaluations,
        eval_time_s: ctx.eval_time,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Re-evaluates an archive with another evaluator (typically the oracle)
/// and keeps the members that stay feasible and non-dominated.
pub fn reverify(template: &MachineTemplate, archive: &ParetoArchive, evaluator: &dyn Evaluator) -> Result<ParetoArchive> {
    let names = evaluator.kpi_names();
    let idx = archive
        .objectives
        .iter()
        .map(|o| {
            names
                .iter()
                .position(|n| *n == o.kpi)
                .ok_or_else(|| Error::Invalid(format!("unknown objective KPI `{}`", o.kpi)))
        })
        .collect::<Result<Vec<_>>>()?;
    let designs: Vec<DesignVector> = archive.members.iter().map(|m| m.p.clone()).collect();
    let out = evaluator.evaluate(template, &designs);
    let checked: Vec<Individual> = archive
        .members
        .iter()
        .zip(out)
        .map(|(m, r)| {
            let mut ind = m.clone();
            match r {
                Ok(y) => {
                    ind.f = idx.iter().zip(&archive.objectives).map(|(&k, o)| o.score(y[k])).collect();
                    ind.y = Some(y);
                }
                Err(e) => {
                    ind.feasible = false;
                    ind.diagnostic = Some(e);
                }
            }
            ind
        })
        .collect();
    let mut fresh = ParetoArchive::new(archive.objectives.clone());
    fresh.update(&checked);
    Ok(fresh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub oracle_time_per_eval_s: f64,
    pub surrogate_time_per_eval_s: f64,
    /// Oracle over surrogate time per evaluation.
    pub speedup: f64,
    pub oracle_total_s: f64,
    pub surrogate_total_s: f64,
    pub oracle_hypervolume: f64,
    /// Hypervolume of the surrogate archive after oracle re-verification.
    pub surrogate_hypervolume: f64,
    pub hypervolume_ratio: f64,
}

pub fn surrogate_speedup_report(
    oracle_run: &MooRun,
    surrogate_run: &MooRun,
    verified: &ParetoArchive,
    reference: &[f64],
) -> Result<SpeedupReport> {
    let (a, b) = (&oracle_run.config, &surrogate_run.config);
    if oracle_run.template_id != surrogate_run.template_id
        || a.seed != b.seed
        || a.population != b.population
        || a.generations != b.generations
        || a.objectives != b.objectives
    {
        return Err(Error::Invalid("oracle and surrogate runs differ in template, seed, budget or objectives".into()));
    }
    let (to, ts) = (oracle_run.time_per_evaluation(), surrogate_run.time_per_evaluation());
    let hv_o = oracle_run.archive.hypervolume(reference)?;
    let hv_s = verified.hypervolume(reference)?;
    Ok(SpeedupReport {
        oracle_time_per_eval_s: to,
        surrogate_time_per_eval_s: ts,
        speedup: if ts > 0.0 { to / ts } else { f64::INFINITY },
        oracle_total_s: oracle_run.wall_time_s,
        surrogate_total_s: surrogate_run.wall_time_s,
        oracle_hypervolume: hv_o,
        surrogate_hypervolume: hv_s,
        hypervolume_ratio: if hv_o > 0.0 { hv_s / hv_o } else { f64::NAN },
    })
}

/// Feasible designs in the order an optimizer run evaluated them, without
/// duplicates; used to build optimizer-shaped datasets.
pub fn evaluated_designs(run: &MooRun) -> Vec<DesignVector> {
    let mut out: Vec<DesignVector> = Vec::new();
    for i in run.evaluated.iter().filter(|i| i.feasible) {
        if !out.iter().any(|p| p.values == i.p.values) {
            out.push(i.p.clone());
        }
    }
    out
}
