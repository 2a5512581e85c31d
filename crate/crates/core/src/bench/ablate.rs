use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::baselines::{PAPER_TABLE3_N, PAPER_TABLE4_M, PAPER_TABLE5_T};
use super::dataset::EvalPair;
use super::eval::{evaluate, EvalConfig, EvalReport};
use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::search::MatchingScheme;

/// Values to sweep. An empty axis keeps the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub t: Vec<f64>,
    pub iterations: Vec<usize>,
    pub schemes: Vec<MatchingScheme>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub m: usize,
    pub t: f64,
    pub iterations: usize,
    pub scheme: MatchingScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub point: SweepPoint,
    pub report: EvalReport,
}

fn or_base<T: Copy>(axis: &[T], base: T) -> Vec<T> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

impl SweepGrid {
    /// Cartesian product, scheme-major.
    pub fn points(&self, base: &EvalConfig) -> Vec<SweepPoint> {
        let e = &base.estimate;
        let mut out = Vec::new();
        for scheme in or_base(&self.schemes, e.scheme) {
            for n in or_base(&self.n, e.score.n_intermediate) {
                for m in or_base(&self.m, e.score.m_samples) {
                    for t in or_base(&self.t, e.score.t_fraction) {
                        for iterations in or_base(&self.iterations, e.refine.iterations) {
                            out.push(SweepPoint { n, m, t, iterations, scheme });
                        }
                    }
                }
            }
        }
        out
    }

    /// The single axis with more than one value, if exactly one varies.
    fn varying_axis(&self) -> Option<&'static str> {
        let axes = [
            ("n", self.n.len()),
            ("m", self.m.len()),
            ("t", self.t.len()),
            ("iterations", self.iterations.len()),
            ("scheme", self.schemes.len()),
        ];
        let varying: Vec<&str> = axes.iter().filter(|(_, len)| *len > 1).map(|(n, _)| *n).collect();
        match varying.as_slice() {
            [one] => Some(one),
            _ => None,
        }
    }
}

impl SweepPoint {
    pub fn apply(&self, base: &EvalConfig) -> EvalConfig {
        let mut cfg = base.clone();
        cfg.estimate.score.n_intermediate = self.n;
        cfg.estimate.score.m_samples = self.m;
        cfg.estimate.score.t_fraction = self.t;
        cfg.estimate.refine.iterations = self.iterations;
        cfg.estimate.scheme = self.scheme;
        cfg
    }
}

/// One evaluation per grid point, in [`SweepGrid::points`] order.
pub fn ablate(
    pairs: &[EvalPair],
    grid: &SweepGrid,
    base: &EvalConfig,
    backend: &dyn Backend,
) -> Result<Vec<SweepResult>> {
    let points = grid.points(base);
    if points.is_empty() {
        return Err(Error::InvalidConfig("empty sweep".into()));
    }
    points
        .into_iter()
        .map(|point| {
            log::info!("sweep point {point:?}");
            let report = evaluate(pairs, &point.apply(base), backend)?;
            Ok(SweepResult { point, report })
        })
        .collect()
}

pub const ABLATION_HEADER: &str = "n,m,t,iterations,scheme,pairs,failed,racc15,racc30,d120_racc15,d120_racc30,d150_racc15,d150_racc30,median_err_deg";

pub fn ablation_csv(results: &[SweepResult]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in results {
        let (p, a) = (&r.point, &r.report.aggregates);
        let median = a.median_err_deg.map_or("nan".into(), |m| format!("{m:.4}"));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{}",
            p.n,
            p.m,
            p.t,
            p.iterations,
            p.scheme,
            a.n,
            a.n_failed,
            a.racc15,
            a.racc30,
            a.subsets[0].racc15,
            a.subsets[0].racc30,
            a.subsets[1].racc15,
            a.subsets[1].racc30,
            median
        );
    }
    out
}

fn axis_label(axis: &str, p: &SweepPoint) -> String {
    match axis {
        "n" => p.n.to_string(),
        "m" => p.m.to_string(),
        "t" => p.t.to_string(),
        "iterations" => p.iterations.to_string(),
        _ => p.scheme.to_string(),
    }
}

/// Text table: parameter values as columns, accuracies as rows, like the
/// published ablation tables. Falls back to one row per grid point when
/// several axes vary.
pub fn render_ablation_table(results: &[SweepResult], grid: &SweepGrid) -> String {
    let mut s = String::new();
    let Some(axis) = grid.varying_axis() else {
        let _ = writeln!(s, "{:>5} {:>3} {:>5} {:>5} {:<12} {:>9} {:>9}", "N", "M", "t", "iters", "scheme", "Racc@15", "Racc@30");
        for r in results {
            let (p, a) = (&r.point, &r.report.aggregates);
            let _ = writeln!(
                s,
                "{:>5} {:>3} {:>5} {:>5} {:<12} {:>9.2} {:>9.2}",
                p.n, p.m, p.t, p.iterations, p.scheme.to_string(), a.racc15, a.racc30
            );
        }
        return s;
    };
    let title = match axis {
        "n" => "#Intermediate viewpoint N",
        "m" => "#Monte-Carlo sampling M",
        "t" => "Time step t",
        "iterations" => "Refinement iterations",
        _ => "Matching scheme",
    };
    let cols: Vec<String> = results.iter().map(|r| axis_label(axis, &r.point)).collect();
    let _ = write!(s, "{title:<28}");
    for c in &cols {
        let _ = write!(s, " {c:>10}");
    }
    s.push('\n');
    for (label, pick) in [("Racc@15", 0), ("Racc@30", 1)] {
        let _ = write!(s, "{label:<28}");
        for r in results {
            let a = &r.report.aggregates;
            let _ = write!(s, " {:>10.2}", if pick == 0 { a.racc15 } else { a.racc30 });
        }
        s.push('\n');
    }
    let paper = match axis {
        "n" => Some(PAPER_TABLE3_N),
        "m" => Some(PAPER_TABLE4_M),
        "t" => Some(PAPER_TABLE5_T),
        _ => None,
    };
    if let Some((keys, r15, r30)) = paper {
        let value = |r: &SweepResult| match axis {
            "n" => r.point.n as f64,
            "m" => r.point.m as f64,
            _ => r.point.t,
        };
        for (label, row) in [("paper-reported Racc@15", r15), ("paper-reported Racc@30", r30)] {
            let _ = write!(s, "{label:<28}");
            for r in results {
                match keys.iter().position(|k| (*k - value(r)).abs() < 1e-9) {
                    Some(i) => {
                        let _ = write!(s, " {:>10.2}", row[i]);
                    }
                    None => {
                        let _ = write!(s, " {:>10}", "-");
                    }
                }
            }
            s.push('\n');
        }
    }
    s
}

/// Writes `ablation.csv`, `ablation.txt` and one report directory per point.
pub fn write_ablation(results: &[SweepResult], grid: &SweepGrid, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    fs::create_dir_all(out)?;
    fs::write(out.join("ablation.csv"), ablation_csv(results))?;
    fs::write(out.join("ablation.txt"), render_ablation_table(results, grid))?;
    for (i, r) in results.iter().enumerate() {
        super::write_report(&r.report, out.join(format!("point{i:02}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_grid_is_the_base_config() {
        let base = EvalConfig::default();
        let grid = SweepGrid { n: vec![64], m: vec![4], ..Default::default() };
        let pts = grid.points(&base);
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].apply(&base), base);
    }

    #[test]
    fn product_size_and_axis() {
        let base = EvalConfig::default();
        let grid = SweepGrid {
            n: vec![16, 64],
            schemes: vec![MatchingScheme::TwoSide, MatchingScheme::Naive],
            ..Default::default()
        };
        assert_eq!(grid.points(&base).len(), 4);
        assert_eq!(grid.varying_axis(), None);
        let grid = SweepGrid { m: vec![1, 2, 4, 8], ..Default::default() };
        assert_eq!(grid.varying_axis(), Some("m"));
    }
}
