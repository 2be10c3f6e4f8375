//! Prediction metrics, evaluation tables, cumulative accuracy curves and
//! the comparative studies built on them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check_pair(metric: &'static str, y: &[f64], y_hat: &[f64], min_len: usize) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Metric {
            metric,
            reason: format!("{} targets vs {} predictions", y.len(), y_hat.len()),
        });
    }
    if y.len() < min_len {
        return Err(Error::Metric {
            metric,
            reason: format!("needs at least {min_len} samples, got {}", y.len()),
        });
    }
    if y.iter().chain(y_hat).any(|v| !v.is_finite()) {
        return Err(Error::Metric {
            metric,
            reason: "non-finite value".into(),
        });
    }
    Ok(())
}

fn relative_errors(metric: &'static str, y: &[f64], y_hat: &[f64]) -> Result<Vec<f64>> {
    check_pair(metric, y, y_hat, 1)?;
    y.iter()
        .zip(y_hat)
        .enumerate()
        .map(|(i, (&t, &p))| {
            if t == 0.0 {
                Err(Error::Metric {
                    metric,
                    reason: format!("zero target at index {i}"),
                })
            } else {
                Ok((t - p).abs() / t.abs() * 100.0)
            }
        })
        .collect()
}

/// Mean relative error in percent.
pub fn mre(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    let e = relative_errors("mre", y, y_hat)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Pearson correlation coefficient.
pub fn pcc(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair("pcc", y, y_hat, 2)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = y_hat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in y.iter().zip(y_hat) {
        let (da, db) = (a - my, b - mp);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric {
            metric: "pcc",
            reason: "zero variance".into(),
        });
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeCurve {
    /// Percent.
    pub thresholds: Vec<f64>,
    pub fraction_below: Vec<f64>,
}

/// 0 to 10 percent in steps of 0.5.
pub fn default_thresholds() -> Vec<f64> {
    (0..=20).map(|k| k as f64 * 0.5).collect()
}

/// Fraction of samples whose relative error is strictly below each threshold.
pub fn cumulative_accuracy(y: &[f64], y_hat: &[f64], thresholds: &[f64]) -> Result<CumulativeCurve> {
    let e = relative_errors("cumulative_accuracy", y, y_hat)?;
    let n = e.len() as f64;
    Ok(CumulativeCurve {
        thresholds: thresholds.to_vec(),
        fraction_below: thresholds
            .iter()
            .map(|&t| e.iter().filter(|&&v| v < t).count() as f64 / n)
            .collect(),
    })
}

impl CumulativeCurve {
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| t == threshold)
            .map(|i| self.fraction_below[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    pub mre: Option<f64>,
    pub pcc: Option<f64>,
    /// Why a metric is missing.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub model_id: String,
    pub dataset_id: String,
    pub n_test: usize,
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    /// Mean MRE over the KPIs that have one.
    pub fn average_mre(&self) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter_map(|r| r.mre).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn row(&self, name: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn mre_of(&self, name: &str) -> Option<f64> {
        self.row(name).and_then(|r| r.mre)
    }

    pub fn names(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        let mut s = String::from("kpi,mre_percent,pcc,error\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.name, fmt(r.mre), fmt(r.pcc), r.error.clone().unwrap_or_default().replace(',', ";"));
        }
        let _ = writeln!(s, "average,{},,", fmt(self.average_mre()));
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn column(m: &[Vec<f64>], k: usize) -> Vec<f64> {
    m.iter().map(|r| r[k]).collect()
}

/// Per-KPI table from row-major true and predicted values. Metric failures
/// are recorded on their row; the rest of the table is still filled.
pub fn evaluate_predictions(
    model_id: &str,
    dataset_id: &str,
    names: &[String],
    y: &[Vec<f64>],
    y_hat: &[Vec<f64>],
) -> Result<EvalTable> {
    if y.len() != y_hat.len() {
        return Err(Error::Invalid(format!("{} targets vs {} predictions", y.len(), y_hat.len())));
    }
    if y.iter().chain(y_hat).any(|r| r.len() != names.len()) {
        return Err(Error::Invalid(format!("rows must have {} KPI values", names.len())));
    }
    let rows = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let (t, p) = (column(y, k), column(y_hat, k));
            let (m, c) = (mre(&t, &p), pcc(&t, &p));
            let error = [m.as_ref().err(), c.as_ref().err()]
                .into_iter()
                .flatten()
                .map(|e| format!("{name}: {e}"))
                .reduce(|a, b| format!("{a}; {b}"));
            EvalRow {
                name: name.clone(),
                mre: m.ok(),
                pcc: c.ok(),
                error,
            }
        })
        .collect();
    Ok(EvalTable {
        model_id: model_id.into(),
        dataset_id: dataset_id.into(),
        n_test: y.len(),
        rows,
    })
}

/// One cumulative curve per KPI.
pub fn cumulative_curves(names: &[String], y: &[Vec<f64>], y_hat: &[Vec<f64>], thresholds: &[f64]) -> Result<Vec<(String, CumulativeCurve)>> {
    names
        .iter()
        .enumerate()
        .map(|(k, n)| {
            cumulative_accuracy(&column(y, k), &column(y_hat, k), thresholds)
                .map(|c| (n.clone(), c))
                .map_err(|e| Error::Kpi {
                    kpi: n.clone(),
                    source: Box::new(e),
                })
        })
        .collect()
}

pub fn curves_csv(curves: &[(String, CumulativeCurve)]) -> String {
    let mut s = String::from("kpi,threshold_percent,fraction_below\n");
    for (n, c) in curves {
        for (t, f) in c.thresholds.iter().zip(&c.fraction_below) {
            let _ = writeln!(s, "{n},{t},{f}");
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRun {
    pub resolution: (usize, usize),
    pub seed: u64,
    pub table: EvalTable,
    pub epochs: usize,
    pub wall_time_s: f64,
}

impl ResolutionRun {
    pub fn mean_mre(&self) -> f64 {
        self.table.average_mre().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionSummary {
    pub resolution: (usize, usize),
    /// Mean over seeds of the mean-over-KPIs MRE.
    pub mean_mre: f64,
    /// How much lower the finest resolution's MRE is, in percent of this
    /// row's MRE. Absent on the finest row.
    pub finest_improvement_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionReport {
    pub runs: Vec<ResolutionRun>,
    pub summary: Vec<ResolutionSummary>,
}

pub fn improvement_percent(coarse: f64, fine: f64) -> f64 {
    (coarse - fine) / coarse * 100.0
}

impl ResolutionReport {
    /// Builds the summary from runs; resolutions are ordered by pixel count.
    pub fn from_runs(mut runs: Vec<ResolutionRun>) -> Self {
        runs.sort_by_key(|r| (r.resolution.0 * r.resolution.1, r.resolution, r.seed));
        let mut res: Vec<(usize, usize)> = runs.iter().map(|r| r.resolution).collect();
        res.dedup();
        let means: Vec<f64> = res
            .iter()
            .map(|&q| {
                let v: Vec<f64> = runs.iter().filter(|r| r.resolution == q).map(|r| r.mean_mre()).collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        let finest = means.last().copied();
        let summary = res
            .iter()
            .zip(&means)
            .enumerate()
            .map(|(i, (&q, &m))| ResolutionSummary {
                resolution: q,
                mean_mre: m,
                finest_improvement_percent: (i + 1 < res.len()).then(|| improvement_percent(m, finest.unwrap_or(m))),
            })
            .collect();
        ResolutionReport { runs, summary }
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.runs.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn run(&self, resolution: (usize, usize), seed: u64) -> Option<&ResolutionRun> {
        self.runs.iter().find(|r| r.resolution == resolution && r.seed == seed)
    }

    /// Seeds for which the finest resolution beats the coarsest.
    pub fn seeds_finest_beats_coarsest(&self) -> usize {
        let (Some(lo), Some(hi)) = (self.summary.first(), self.summary.last()) else {
            return 0;
        };
        self.seeds()
            .into_iter()
            .filter(|&s| match (self.run(lo.resolution, s), self.run(hi.resolution, s)) {
                (Some(a), Some(b)) => b.mean_mre() < a.mean_mre(),
                _ => false,
            })
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("resolution,seed,mean_mre_percent,epochs,wall_time_s\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{}x{},{},{},{},{:.3}",
                r.resolution.0,
                r.resolution.1,
                r.seed,
                r.mean_mre(),
                r.epochs,
                r.wall_time_s
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("resolution,mean_mre_percent,finest_improvement_percent\n");
        for r in &self.summary {
            let imp = r.finest_improvement_percent.map_or(String::new(), |v| format!("{v}"));
            let _ = writeln!(s, "{}x{},{},{}", r.resolution.0, r.resolution.1, r.mean_mre, imp);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub gpr_mre: f64,
    pub dnn_mre: f64,
    /// `gpr_mre / dnn_mre`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub mean_ratio: f64,
    /// KPIs where the GPR error exceeds the DNN error.
    pub gpr_worse: Vec<String>,
}

pub fn compare_parameter_models(dnn: &EvalTable, gpr: &EvalTable) -> Result<Comparison> {
    if dnn.names() != gpr.names() {
        return Err(Error::Invalid(format!("KPI lists differ: {:?} vs {:?}", dnn.names(), gpr.names())));
    }
    if dnn.n_test != gpr.n_test {
        return Err(Error::Invalid(format!("test sizes differ: {} vs {}", dnn.n_test, gpr.n_test)));
    }
    let rows = dnn
        .rows
        .iter()
        .zip(&gpr.rows)
        .map(|(d, g)| {
            let need = |r: &EvalRow, who: &str| {
                r.mre
                    .ok_or_else(|| Error::Invalid(format!("{who} table has no MRE for `{}`", r.name)))
            };
            let (dm, gm) = (need(d, "DNN")?, need(g, "GPR")?);
            Ok(ComparisonRow {
                name: d.name.clone(),
                gpr_mre: gm,
                dnn_mre: dm,
                ratio: if dm == gm { 1.0 } else { gm / dm },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_ratio = rows.iter().map(|r| r.ratio).sum::<f64>() / rows.len().max(1) as f64;
    let gpr_worse = rows.iter().filter(|r| r.gpr_mre > r.dnn_mre).map(|r| r.name.clone()).collect();
    Ok(Comparison {
        rows,
        mean_ratio,
        gpr_worse,
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kpi,gpr_mre_percent,dnn_mre_percent,ratio\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.name, r.gpr_mre, r.dnn_mre, r.ratio);
        }
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Grouped bar chart: one group per category, one bar per series.
pub fn svg_bar_chart(title: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    let (w, h, left, bottom, top) = (640.0, 360.0, 50.0, 60.0, 30.0);
    let vmax = series
        .iter()
        .flat_map(|s| s.1.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let plot_w = w - left - 10.0;
    let plot_h = h - bottom - top;
    let group = plot_w / categories.len().max(1) as f64;
    let bar = group * 0.8 / series.len().max(1) as f64;
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n");
    let _ = writeln!(s, "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{}</text>", w / 2.0, escape(title));
    let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", h - bottom, w - 10.0, h - bottom);
    for (ci, cat) in categories.iter().enumerate() {
        let x0 = left + ci as f64 * group + group * 0.1;
        for (si, (_, vals)) in series.iter().enumerate() {
            let v = vals.get(ci).copied().unwrap_or(0.0).max(0.0);
            let bh = if v.is_finite() { v / vmax * plot_h } else { 0.0 };
            let x = x0 + si as f64 * bar;
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{bh:.1}\" fill=\"{}\"/>",
                h - bottom - bh,
                bar * 0.95,
                PALETTE[si % PALETTE.len()]
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"9\">{v:.2}</text>",
                x + bar / 2.0,
                h - bottom - bh - 2.0
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            x0 + group * 0.4,
            h - bottom + 14.0,
            escape(cat)
        );
    }
    for (si, (name, _)) in series.iter().enumerate() {
        let y = h - 20.0;
        let x = left + si as f64 * 120.0;
        let _ = writeln!(s, "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>", y - 9.0, PALETTE[si % PALETTE.len()]);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{y}\">{}</text>", x + 14.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Line chart of `(name, xs, ys)` series.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<f64>, Vec<f64>)]) -> String {
    let (w, h, left, bottom, top, right) = (640.0, 360.0, 60.0, 50.0, 30.0, 130.0);
    let pts = || series.iter().flat_map(|s| s.1.iter().zip(&s.2)).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts() {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - bottom - top);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n");
    let _ = writeln!(s, "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{}</text>", w / 2.0, escape(title));
    let _ = writeln!(
        s,
        "<polyline points=\"{left},{top} {left},{} {},{}\" fill=\"none\" stroke=\"black\"/>",
        h - bottom,
        w - right,
        h - bottom
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", (left + w - right) / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>",
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (v, y) in [(y0, py(y0)), (y1, py(y1))] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{v:.3}</text>", left - 4.0, y + 4.0);
    }
    for (v, x) in [(x0, px(x0)), (x1, px(x1))] {
        let _ = writeln!(s, "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{v:.3}</text>", h - bottom + 14.0);
    }
    for (si, (name, xs, ys)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let path: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>", path.join(" "));
        let ly = top + 14.0 * si as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            w - right + 10.0,
            w - right + 24.0
        );
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", w - right + 28.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        assert_eq!(mre(&[2.0, 4.0], &[1.0, 5.0]).unwrap(), 37.5);
        let c = cumulative_accuracy(&[2.0, 4.0], &[1.0, 5.0], &[30.0]).unwrap();
        assert_eq!(c.fraction_below, vec![0.5]);
    }

    #[test]
    fn metric_errors() {
        assert!(mre(&[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(mre(&[], &[]).is_err());
        assert!(mre(&[1.0], &[1.0, 2.0]).is_err());
        assert!(pcc(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(pcc(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn pcc_affine() {
        let y = [1.0, 2.0, 4.0, 7.0];
        let up: Vec<f64> = y.iter().map(|v| 2.0 * v + 3.0).collect();
        let down: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pcc(&y, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((pcc(&y, &down).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_curve_is_one() {
        let y = [1.0, 2.0, 3.0];
        let c = cumulative_accuracy(&y, &y, &default_thresholds()).unwrap();
        assert_eq!(c.fraction_below[0], 0.0);
        assert!(c.fraction_below[1..].iter().all(|&f| f == 1.0));
        assert_eq!(c.at(5.0), Some(1.0));
    }

    #[test]
    fn constant_predictor_records_row_error() {
        let names = vec!["a".to_string(), "b".to_string()];
        let y = vec![vec![1.0, 2.0], vec![2.0, 3.0], vec![3.0, 5.0]];
        let p = vec![vec![2.0, 2.0], vec![2.0, 3.0], vec![2.0, 5.0]];
        let t = evaluate_predictions("m", "d", &names, &y, &p).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows[0].pcc.is_none() && t.rows[0].mre.is_some());
        assert!(t.rows[0].error.as_deref().unwrap().starts_with("a:"));
        assert_eq!(t.rows[1].mre, Some(0.0));
        assert!((t.rows[1].pcc.unwrap() - 1.0).abs() < 1e-12);
        assert!(t.to_csv().lines().count() == 4);
    }

    #[test]
    fn single_resolution_has_no_deltas() {
        let t = EvalTable {
            model_id: "m".into(),
            dataset_id: "d".into(),
            n_test: 1,
            rows: vec![EvalRow {
                name: "a".into(),
                mre: Some(2.0),
                pcc: None,
                error: None,
            }],
        };
        let r = ResolutionReport::from_runs(vec![ResolutionRun {
            resolution: (32, 32),
            seed: 1,
            table: t,
            epochs: 1,
            wall_time_s: 0.0,
        }]);
        assert_eq!(r.summary.len(), 1);
        assert!(r.summary[0].finest_improvement_percent.is_none());
    }

    #[test]
    fn identical_tables_ratio_one() {
        let names = vec!["a".to_string(), "b".to_string()];
        let y = vec![vec![1.0, 2.0], vec![2.0, 3.0]];
        let p = vec![vec![1.1, 2.0], vec![2.0, 3.3]];
        let t = evaluate_predictions("m", "d", &names, &y, &p).unwrap();
        let c = compare_parameter_models(&t, &t).unwrap();
        assert_eq!(c.rows.len(), 2);
        assert!(c.rows.iter().all(|r| r.ratio == 1.0));
        let mut other = t.clone();
        other.rows.pop();
        assert!(compare_parameter_models(&t, &other).is_err());
    }

    #[test]
    fn svg_is_well_formed() {
        let s = svg_bar_chart("t", &["a".into()], &[("x".into(), vec![1.0]), ("y".into(), vec![f64::NAN])]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        let l = svg_line_chart("t", "x", "y", &[("s".into(), vec![0.0, 1.0], vec![1.0, 1.0])]);
        assert!(l.contains("polyline"));
    }
}
