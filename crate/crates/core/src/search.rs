//! Coarse grid search and finite-difference refinement over `(θ_q, φ_q)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::geometry::{wrap_360, Viewpoint};
use crate::imaging::ImageBuffer;
use crate::rng::StreamKey;
use crate::scoring::{
    build_reference_context, NaiveMetric, NaiveObjective, ScoreConfig, ScoreFunction,
    TwoSideObjective,
};

/// Candidates never come closer to a pole than this.
pub const ELEVATION_LIMIT_DEG: f64 = 85.0;

const REFINE_TAG: u64 = 0x726566696e65; // "refine"

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSchedule {
    pub azimuth_round0: Vec<f64>,
    pub round1_offsets: Vec<f64>,
    pub round2_offsets: Vec<f64>,
    pub elevation_offsets: Vec<f64>,
}

impl Default for SearchSchedule {
    fn default() -> Self {
        SearchSchedule {
            azimuth_round0: (0..8).map(|k| k as f64 * 45.0).collect(),
            round1_offsets: vec![-30.0, -15.0, 15.0, 30.0],
            round2_offsets: vec![-10.0, -5.0, 5.0, 10.0],
            elevation_offsets: vec![-20.0, -10.0, 10.0, 20.0],
        }
    }
}

impl SearchSchedule {
    /// Round 0 only.
    pub fn grid_only() -> Self {
        SearchSchedule {
            round1_offsets: vec![],
            round2_offsets: vec![],
            elevation_offsets: vec![],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.azimuth_round0.is_empty() {
            return Err(Error::InvalidConfig("empty round-0 azimuth grid".into()));
        }
        let all = [&self.azimuth_round0, &self.round1_offsets, &self.round2_offsets, &self.elevation_offsets];
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidConfig("non-finite schedule entry".into()));
        }
        for (name, offsets) in [
            ("round1_offsets", &self.round1_offsets),
            ("round2_offsets", &self.round2_offsets),
            ("elevation_offsets", &self.elevation_offsets),
        ] {
            let mut pos: Vec<f64> = offsets.iter().filter(|o| **o > 0.0).copied().collect();
            let mut neg: Vec<f64> = offsets.iter().filter(|o| **o < 0.0).map(|o| -o).collect();
            pos.sort_by(f64::total_cmp);
            neg.sort_by(f64::total_cmp);
            if pos != neg {
                return Err(Error::InvalidConfig(format!("{name} not symmetric around 0")));
            }
        }
        Ok(())
    }

    pub fn evaluations(&self) -> usize {
        self.azimuth_round0.len()
            + self.round1_offsets.len()
            + self.round2_offsets.len()
            + self.elevation_offsets.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub iterations: usize,
    pub steps_per_iteration: usize,
    /// Step length of the first step in each iteration.
    pub step_deg: f64,
    /// Step length of the last step; intermediate steps interpolate linearly.
    pub final_step_deg: f64,
    /// Central-difference half-step.
    pub fd_h_deg: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            iterations: 3,
            steps_per_iteration: 10,
            step_deg: 3.0,
            final_step_deg: 1.0,
            fd_h_deg: 2.0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_deg > 0.0 && self.final_step_deg > 0.0 && self.fd_h_deg > 0.0) {
            return Err(Error::InvalidConfig("refinement step lengths must be > 0".into()));
        }
        Ok(())
    }

    fn step_len(&self, k: usize) -> f64 {
        if self.steps_per_iteration <= 1 {
            return self.step_deg;
        }
        let f = k as f64 / (self.steps_per_iteration - 1) as f64;
        self.step_deg + (self.final_step_deg - self.step_deg) * f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Coarse,
    Refine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub viewpoint: Viewpoint,
    pub score: f64,
    pub stage: Stage,
}

/// Best candidate and every comparable evaluation that led to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub viewpoint: Viewpoint,
    pub score: f64,
    pub trace: Vec<TraceEntry>,
}

impl PoseEstimate {
    fn push(&mut self, viewpoint: Viewpoint, score: f64, stage: Stage) {
        self.trace.push(TraceEntry { viewpoint, score, stage });
        if better(score, &viewpoint, self.score, &self.viewpoint) {
            self.score = score;
            self.viewpoint = viewpoint;
        }
    }
}

/// Strict order on `(score, azimuth, elevation)` so argmins do not depend on
/// evaluation order.
fn better(s: f64, v: &Viewpoint, best_s: f64, best_v: &Viewpoint) -> bool {
    s.total_cmp(&best_s)
        .then(v.azimuth_deg().total_cmp(&best_v.azimuth_deg()))
        .then(v.elevation_deg().total_cmp(&best_v.elevation_deg()))
        .is_lt()
}

pub fn clamp_elevation(e: f64) -> f64 {
    e.clamp(-ELEVATION_LIMIT_DEG, ELEVATION_LIMIT_DEG)
}

fn candidate(elevation: f64, azimuth: f64) -> Result<Viewpoint> {
    Viewpoint::unit(clamp_elevation(elevation), azimuth)
}

fn score_all(f: &dyn ScoreFunction, cands: &[Viewpoint]) -> Result<Vec<f64>> {
    cands.par_iter().map(|v| f.score(v)).collect()
}

/// Grid rounds of the coarse search. Every candidate is scored under `f`
/// and the global best is tracked across rounds.
pub fn coarse_search(
    f: &dyn ScoreFunction,
    elevation_init: f64,
    schedule: &SearchSchedule,
) -> Result<PoseEstimate> {
    if !(elevation_init.abs() < 90.0) {
        return Err(Error::InvalidViewpoint(format!("elevation_init {elevation_init} not in (-90, 90)")));
    }
    schedule.validate()?;
    let e0 = clamp_elevation(elevation_init);
    let mut est: Option<PoseEstimate> = None;
    let run_round = |cands: Vec<Viewpoint>, est: &mut Option<PoseEstimate>| -> Result<()> {
        let scores = score_all(f, &cands)?;
        for (v, s) in cands.into_iter().zip(scores) {
            match est {
                None => {
                    *est = Some(PoseEstimate {
                        viewpoint: v,
                        score: s,
                        trace: vec![TraceEntry { viewpoint: v, score: s, stage: Stage::Coarse }],
                    })
                }
                Some(e) => e.push(v, s, Stage::Coarse),
            }
        }
        Ok(())
    };

    let round0 = schedule
        .azimuth_round0
        .iter()
        .map(|a| candidate(e0, *a))
        .collect::<Result<_>>()?;
    run_round(round0, &mut est)?;
    for offsets in [&schedule.round1_offsets, &schedule.round2_offsets] {
        let centre = est.as_ref().expect("round 0 is non-empty").viewpoint;
        let cands = offsets
            .iter()
            .map(|o| candidate(centre.elevation_deg(), wrap_360(centre.azimuth_deg() + o)))
            .collect::<Result<_>>()?;
        run_round(cands, &mut est)?;
    }
    let best_az = est.as_ref().expect("round 0 is non-empty").viewpoint.azimuth_deg();
    let cands = schedule
        .elevation_offsets
        .iter()
        .map(|o| candidate(e0 + o, best_az))
        .collect::<Result<_>>()?;
    run_round(cands, &mut est)?;
    Ok(est.expect("round 0 is non-empty"))
}

/// Central finite-difference gradient `(∂f/∂θ, ∂f/∂φ)` in score units per
/// degree. Elevation probes are clamped, and the divisor follows the clamp.
pub fn fd_gradient(f: &dyn ScoreFunction, at: &Viewpoint, h: f64) -> Result<[f64; 2]> {
    let (e, a) = (at.elevation_deg(), at.azimuth_deg());
    let (e_hi, e_lo) = (clamp_elevation(e + h), clamp_elevation(e - h));
    let probes = [
        Viewpoint::unit(e_hi, a)?,
        Viewpoint::unit(e_lo, a)?,
        Viewpoint::unit(e, a + h)?,
        Viewpoint::unit(e, a - h)?,
    ];
    let s = score_all(f, &probes)?;
    let d_e = if e_hi > e_lo { (s[0] - s[1]) / (e_hi - e_lo) } else { 0.0 };
    Ok([d_e, (s[2] - s[3]) / (2.0 * h)])
}

/// Normalized-gradient descent from `estimate`. Each iteration descends on a
/// freshly resampled objective; visited points are then re-scored under `f`
/// and the best one found so far seeds the next iteration.
pub fn refine(
    estimate: PoseEstimate,
    f: &dyn ScoreFunction,
    rcfg: &RefineConfig,
    seed: u64,
) -> Result<PoseEstimate> {
    rcfg.validate()?;
    let mut est = estimate;
    for it in 0..rcfg.iterations {
        let noisy_f = f.resampled(StreamKey::new(seed).derive_all(&[REFINE_TAG, it as u64]).0)?;
        let mut current = est.viewpoint;
        let mut visited = Vec::with_capacity(rcfg.steps_per_iteration);
        for k in 0..rcfg.steps_per_iteration {
            let g = fd_gradient(noisy_f.as_ref(), &current, rcfg.fd_h_deg)?;
            let norm = g[0].hypot(g[1]);
            if !(norm > 0.0) {
                break;
            }
            let step = rcfg.step_len(k) / norm;
            current = candidate(
                current.elevation_deg() - step * g[0],
                current.azimuth_deg() - step * g[1],
            )?;
            visited.push(current);
        }
        let scores = score_all(f, &visited)?;
        for (v, s) in visited.into_iter().zip(scores) {
            est.push(v, s, Stage::Refine);
        }
        log::debug!(
            "refine iteration {it}: best ({:.2}, {:.2}) score {:.6}",
            est.viewpoint.elevation_deg(),
            est.viewpoint.azimuth_deg(),
            est.score
        );
    }
    Ok(est)
}

/// Which score the search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchingScheme {
    #[default]
    TwoSide,
    /// One-side generate-and-match with the denoising residual.
    Naive,
    /// One-side generate-and-match with plain pixel distance.
    NaiveImage,
}

impl std::str::FromStr for MatchingScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-side" => Ok(MatchingScheme::TwoSide),
            "naive" => Ok(MatchingScheme::Naive),
            "naive-image" => Ok(MatchingScheme::NaiveImage),
            other => Err(Error::InvalidConfig(format!("unknown matching scheme {other:?}"))),
        }
    }
}

impl std::fmt::Display for MatchingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MatchingScheme::TwoSide => "two-side",
            MatchingScheme::Naive => "naive",
            MatchingScheme::NaiveImage => "naive-image",
        })
    }
}

/// Everything `estimate_pose` needs besides the images.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    pub score: ScoreConfig,
    pub schedule: SearchSchedule,
    pub refine: RefineConfig,
    pub scheme: MatchingScheme,
}

/// Full pipeline: reference context, coarse search, refinement.
pub fn estimate_pose(
    ref_image: &ImageBuffer,
    ref_viewpoint: &Viewpoint,
    query_image: &ImageBuffer,
    elevation_init: f64,
    cfg: &EstimateConfig,
    backend: &dyn Backend,
) -> Result<PoseEstimate> {
    cfg.score.validate()?;
    cfg.refine.validate()?;
    let run = |f: &dyn ScoreFunction| -> Result<PoseEstimate> {
        let coarse = coarse_search(f, elevation_init, &cfg.schedule)?;
        refine(coarse, f, &cfg.refine, cfg.score.seed)
    };
    match cfg.scheme {
        MatchingScheme::TwoSide => {
            let ctx = build_reference_context(ref_image, ref_viewpoint, &cfg.score, backend)?;
            run(&TwoSideObjective::new(&ctx, query_image, backend))
        }
        MatchingScheme::Naive | MatchingScheme::NaiveImage => run(&NaiveObjective {
            ref_image,
            ref_viewpoint: *ref_viewpoint,
            query: query_image,
            cfg: cfg.score,
            metric: if cfg.scheme == MatchingScheme::Naive {
                NaiveMetric::Denoise
            } else {
                NaiveMetric::ImageL2
            },
            backend,
        }),
    }
}
