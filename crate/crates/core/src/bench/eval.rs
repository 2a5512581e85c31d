use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{PAPER_LARGE_DELTA, PAPER_TABLE1};
use super::dataset::EvalPair;
use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::geometry::{viewpoint_error_deg, Viewpoint};
use crate::rng::StreamKey;
use crate::scoring::DEFAULT_SEED;
use crate::search::{clamp_elevation, estimate_pose, EstimateConfig, MatchingScheme, PoseEstimate};

const INIT_TAG: u64 = 0x696e6974; // "init"
pub const DELTA_SUBSETS: [f64; 2] = [120.0, 150.0];

/// Stand-in for a learned elevation predictor: truth plus Gaussian error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElevationInit {
    pub std_deg: f64,
    pub seed: u64,
}

impl Default for ElevationInit {
    fn default() -> Self {
        ElevationInit { std_deg: 10.0, seed: DEFAULT_SEED }
    }
}

impl ElevationInit {
    pub fn sample(&self, pair_id: usize, true_elevation_deg: f64) -> f64 {
        let n = StreamKey::new(self.seed).derive_all(&[INIT_TAG, pair_id as u64]).normal(0);
        clamp_elevation(true_elevation_deg + self.std_deg * n)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub estimate: EstimateConfig,
    pub init: ElevationInit,
    /// Write measured runtimes; when false every runtime is reported as 0.
    pub timing: bool,
}

impl EvalConfig {
    pub fn new(estimate: EstimateConfig) -> Self {
        EvalConfig { estimate, init: ElevationInit::default(), timing: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub pair_id: usize,
    pub object_id: String,
    pub delta_deg: f64,
    pub elevation_init: f64,
    pub estimate: Option<Viewpoint>,
    pub score: Option<f64>,
    /// `None` when estimation failed.
    pub err_deg: Option<f64>,
    pub runtime_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetAccuracy {
    pub min_delta_deg: f64,
    pub n: usize,
    pub racc15: f64,
    pub racc30: f64,
}

/// Accuracies in percent. Failed pairs count as misses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    pub n_failed: usize,
    pub racc15: f64,
    pub racc30: f64,
    pub median_err_deg: Option<f64>,
    pub subsets: Vec<SubsetAccuracy>,
}

fn racc(records: &[&EvalRecord], threshold: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = records.iter().filter(|r| r.err_deg.is_some_and(|e| e <= threshold)).count();
    100.0 * hits as f64 / records.len() as f64
}

impl Aggregates {
    pub fn from_records(records: &[EvalRecord]) -> Self {
        let all: Vec<&EvalRecord> = records.iter().collect();
        let mut errs: Vec<f64> = records.iter().filter_map(|r| r.err_deg).collect();
        errs.sort_by(f64::total_cmp);
        let median_err_deg = match errs.len() {
            0 => None,
            n if n % 2 == 1 => Some(errs[n / 2]),
            n => Some((errs[n / 2 - 1] + errs[n / 2]) / 2.0),
        };
        let subsets = DELTA_SUBSETS
            .iter()
            .map(|d| {
                let sub: Vec<&EvalRecord> = records.iter().filter(|r| r.delta_deg >= *d).collect();
                SubsetAccuracy { min_delta_deg: *d, n: sub.len(), racc15: racc(&sub, 15.0), racc30: racc(&sub, 30.0) }
            })
            .collect();
        Aggregates {
            n: records.len(),
            n_failed: records.iter().filter(|r| r.err_deg.is_none()).count(),
            racc15: racc(&all, 15.0),
            racc30: racc(&all, 30.0),
            median_err_deg,
            subsets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: MatchingScheme,
    pub backend: String,
    /// Effective configuration of the run.
    pub config: EvalConfig,
    pub aggregates: Aggregates,
    pub records: Vec<EvalRecord>,
}

/// Runs `estimate` on every pair with its elevation initializer. Ground
/// truth is never consulted here.
pub fn estimate_pairs<F>(pairs: &[EvalPair], inits: &[f64], estimate: F) -> Vec<(Result<PoseEstimate>, f64)>
where
    F: Fn(&EvalPair, f64) -> Result<PoseEstimate> + Sync,
{
    assert_eq!(pairs.len(), inits.len(), "one initializer per pair");
    pairs
        .par_iter()
        .zip(inits.par_iter())
        .map(|(p, init)| {
            let start = Instant::now();
            let out = estimate(p, *init);
            (out, start.elapsed().as_secs_f64() * 1e3)
        })
        .collect()
}

/// Elevation initializers for `pairs`, drawn from their ground truth.
pub fn elevation_inits(pairs: &[EvalPair], init: &ElevationInit) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| {
            let truth = p.query_truth.ok_or_else(|| {
                Error::Dataset(format!("pair {} has no ground-truth query viewpoint", p.pair_id))
            })?;
            Ok(init.sample(p.pair_id, truth.elevation_deg()))
        })
        .collect()
}

/// Scores pre-computed estimates against ground truth.
pub fn records_from_estimates(
    pairs: &[EvalPair],
    inits: &[f64],
    estimates: Vec<(Result<PoseEstimate>, f64)>,
    timing: bool,
) -> Result<Vec<EvalRecord>> {
    pairs
        .iter()
        .zip(inits)
        .zip(estimates)
        .map(|((p, init), (est, ms))| {
            let truth = p.query_truth.ok_or_else(|| {
                Error::Dataset(format!("pair {} has no ground-truth query viewpoint", p.pair_id))
            })?;
            let delta_deg = p.delta_deg().expect("truth present");
            let runtime_ms = if timing { ms } else { 0.0 };
            Ok(match est {
                Ok(e) => EvalRecord {
                    pair_id: p.pair_id,
                    object_id: p.object_id.clone(),
                    delta_deg,
                    elevation_init: *init,
                    estimate: Some(e.viewpoint),
                    score: Some(e.score),
                    err_deg: Some(viewpoint_error_deg(&truth, &e.viewpoint)?),
                    runtime_ms,
                    error: None,
                },
                Err(e) => {
                    log::warn!("pair {} failed: {e}", p.pair_id);
                    EvalRecord {
                        pair_id: p.pair_id,
                        object_id: p.object_id.clone(),
                        delta_deg,
                        elevation_init: *init,
                        estimate: None,
                        score: None,
                        err_deg: None,
                        runtime_ms,
                        error: Some(e.to_string()),
                    }
                }
            })
        })
        .collect()
}

/// Estimates every pair with `estimate_pose` and scores the results.
pub fn evaluate(pairs: &[EvalPair], cfg: &EvalConfig, backend: &dyn Backend) -> Result<EvalReport> {
    evaluate_with(pairs, cfg, backend.descriptor().name.clone(), |p, init| {
        estimate_pose(&p.reference_image, &p.reference_viewpoint, &p.query_image, init, &cfg.estimate, backend)
    })
}

/// [`evaluate`] with a custom estimator.
pub fn evaluate_with<F>(pairs: &[EvalPair], cfg: &EvalConfig, backend: String, estimate: F) -> Result<EvalReport>
where
    F: Fn(&EvalPair, f64) -> Result<PoseEstimate> + Sync,
{
    let inits = elevation_inits(pairs, &cfg.init)?;
    let estimates = estimate_pairs(pairs, &inits, estimate);
    let records = records_from_estimates(pairs, &inits, estimates, cfg.timing)?;
    Ok(EvalReport {
        scheme: cfg.estimate.scheme,
        backend,
        config: cfg.clone(),
        aggregates: Aggregates::from_records(&records),
        records,
    })
}

pub const REPORT_HEADER: &str = "pair_id,object_id,delta_deg,err_deg,runtime_ms";

pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in &report.records {
        let err = r.err_deg.map_or("nan".to_string(), |e| format!("{e:.6}"));
        writeln!(out, "{},{},{:.6},{},{:.3}", r.pair_id, r.object_id, r.delta_deg, err, r.runtime_ms)
            .expect("writing to a String");
    }
    out
}

/// Aligned-text summary with the published rows for comparison.
pub fn render_summary(report: &EvalReport) -> String {
    let a = &report.aggregates;
    let mut s = String::new();
    let _ = writeln!(s, "scheme: {}  backend: {}", report.scheme, report.backend);
    let _ = writeln!(s, "pairs: {} ({} failed)", a.n, a.n_failed);
    let _ = writeln!(s, "{:<12} {:>6} {:>9} {:>9}", "subset", "n", "Racc@15", "Racc@30");
    let _ = writeln!(s, "{:<12} {:>6} {:>9.2} {:>9.2}", "all", a.n, a.racc15, a.racc30);
    for sub in &a.subsets {
        let label = format!("delta>={}", sub.min_delta_deg);
        let _ = writeln!(s, "{:<12} {:>6} {:>9.2} {:>9.2}", label, sub.n, sub.racc15, sub.racc30);
    }
    match a.median_err_deg {
        Some(m) => {
            let _ = writeln!(s, "median error: {m:.2} deg");
        }
        None => {
            let _ = writeln!(s, "median error: n/a");
        }
    }
    let _ = writeln!(s, "\npaper-reported, real data (not recomputed)");
    let _ = writeln!(s, "{:<14} {:>9} {:>9} {:>9} {:>9}", "NAVI/GSO", "N@15", "N@30", "G@15", "G@30");
    for row in PAPER_TABLE1 {
        let v = row.values;
        let _ = writeln!(s, "{:<14} {:>9.2} {:>9.2} {:>9.2} {:>9.2}", row.label, v[0], v[1], v[2], v[3]);
    }
    let _ = writeln!(s, "{:<14} {:>9} {:>9} {:>9} {:>9}", "GSO large δ", "120@15", "120@30", "150@15", "150@30");
    for row in PAPER_LARGE_DELTA {
        let v = row.values;
        let _ = writeln!(s, "{:<14} {:>9.2} {:>9.2} {:>9.2} {:>9.2}", row.label, v[0], v[1], v[2], v[3]);
    }
    s
}

#[derive(Serialize)]
struct Summary<'a> {
    scheme: MatchingScheme,
    backend: &'a str,
    config: &'a EvalConfig,
    aggregates: &'a Aggregates,
    paper_reported: serde_json::Value,
}

fn paper_json() -> serde_json::Value {
    let rows = |rows: &[super::PaperRow]| {
        rows.iter()
            .map(|r| serde_json::json!({ "method": r.label, "values": r.values }))
            .collect::<Vec<_>>()
    };
    serde_json::json!({
        "note": "published results on real data; shown for reference, never recomputed",
        "overall": { "columns": ["navi_racc15", "navi_racc30", "gso_racc15", "gso_racc30"], "rows": rows(PAPER_TABLE1) },
        "large_delta": { "columns": ["d120_racc15", "d120_racc30", "d150_racc15", "d150_racc30"], "rows": rows(PAPER_LARGE_DELTA) },
    })
}

/// Writes `report.csv`, `summary.json` and `summary.txt` under `out`.
pub fn write_report(report: &EvalReport, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    fs::create_dir_all(out)?;
    fs::write(out.join("report.csv"), report_csv(report))?;
    let summary = Summary {
        scheme: report.scheme,
        backend: &report.backend,
        config: &report.config,
        aggregates: &report.aggregates,
        paper_reported: paper_json(),
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(out.join("summary.json"), json)?;
    fs::write(out.join("summary.txt"), render_summary(report))?;
    Ok(())
}
