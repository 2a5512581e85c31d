//! Score functions over candidate query viewpoints.
//!
//! The two-side score generates the reference object at `N` fixed
//! intermediate viewpoints, noises each generation `M` times at a fixed
//! timestep, and asks the denoiser to explain that noise when conditioned on
//! the query image and the change from the candidate to the intermediate
//! viewpoint:
//!
//! ```text
//! f(θ, φ) = 1/M Σ_j Σ_i ‖ε̂(x_{r→i,t}^{(j)} | I_q, θ_i − θ, φ_i − φ) − ε^{(j)}‖²
//! ```
//!
//! The naive score matches directly at the candidate viewpoint instead.

use std::borrow::Cow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, DenoiseRequest, GenerationRequest, GenerationResult};
use crate::error::{Error, Result};
use crate::geometry::{fibonacci_hemisphere, relative_change, ViewChange, Viewpoint, POLE_EPS_DEG};
use crate::imaging::{add_noise, sample_noise, ImageBuffer, NoiseSample, TensorBuffer};
use crate::rng::StreamKey;

pub const DEFAULT_SEED: u64 = 20_240_607;

const GEN_TAG: u64 = 0x67656e; // "gen"
const NOISE_TAG: u64 = 0x6e6f697365; // "noise"
const NAIVE_TAG: u64 = 0x6e61697665; // "naive"
const QUERY_SIDE_TAG: u64 = 0x7175657279; // "query"

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Number of intermediate viewpoints `N`.
    pub n_intermediate: usize,
    /// Monte-Carlo samples `M`.
    pub m_samples: usize,
    /// Fixed timestep as a fraction of the schedule length.
    pub t_fraction: f64,
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            n_intermediate: 64,
            m_samples: 4,
            t_fraction: 0.4,
            seed: DEFAULT_SEED,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_intermediate == 0 || self.m_samples == 0 {
            return Err(Error::InvalidConfig("N and M must be at least 1".into()));
        }
        if !(self.t_fraction > 0.0 && self.t_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("t = {} not in (0, 1)", self.t_fraction)));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        ScoreConfig { seed, ..self }
    }
}

/// Candidate-independent reference-side data: generations at the
/// intermediate viewpoints and their noised copies.
#[derive(Debug, Clone)]
pub struct ReferenceContext {
    pub ref_image: ImageBuffer,
    pub ref_viewpoint: Viewpoint,
    pub intermediates: Vec<Viewpoint>,
    pub generations: Arc<Vec<GenerationResult>>,
    /// `noises[i][j]` is `ε^{(j)}` for intermediate `i`.
    pub noises: Vec<Vec<NoiseSample>>,
    /// `noisy[i][j] = α_t · generations[i] + σ_t · noises[i][j]`.
    pub noisy: Vec<Vec<TensorBuffer>>,
    pub t_index: usize,
    pub noise_seed: u64,
}

impl ReferenceContext {
    pub fn n_intermediate(&self) -> usize {
        self.intermediates.len()
    }

    pub fn m_samples(&self) -> usize {
        self.noises.first().map_or(0, Vec::len)
    }

    /// Same generations, fresh noise drawn from `noise_seed`.
    pub fn resampled(&self, noise_seed: u64, backend: &dyn Backend) -> Result<ReferenceContext> {
        let (noises, noisy) = draw_noise(
            &self.generations,
            self.m_samples(),
            noise_seed,
            self.t_index,
            backend,
        )?;
        Ok(ReferenceContext {
            noises,
            noisy,
            noise_seed,
            ..self.clone_shallow()
        })
    }

    fn clone_shallow(&self) -> ReferenceContext {
        ReferenceContext {
            ref_image: self.ref_image.clone(),
            ref_viewpoint: self.ref_viewpoint,
            intermediates: self.intermediates.clone(),
            generations: self.generations.clone(),
            noises: Vec::new(),
            noisy: Vec::new(),
            t_index: self.t_index,
            noise_seed: self.noise_seed,
        }
    }
}

fn noise_seed(run_seed: u64, i: usize, j: usize) -> u64 {
    StreamKey::new(run_seed).derive_all(&[NOISE_TAG, i as u64, j as u64]).0
}

fn generation_seed(run_seed: u64, i: usize) -> u64 {
    StreamKey::new(run_seed).derive_all(&[GEN_TAG, i as u64]).0
}

type NoiseSets = (Vec<Vec<NoiseSample>>, Vec<Vec<TensorBuffer>>);

fn draw_noise(
    generations: &[GenerationResult],
    m: usize,
    run_seed: u64,
    t_index: usize,
    backend: &dyn Backend,
) -> Result<NoiseSets> {
    let schedule = &backend.descriptor().schedule;
    let mut noises = Vec::with_capacity(generations.len());
    let mut noisy = Vec::with_capacity(generations.len());
    for (i, g) in generations.iter().enumerate() {
        let eps: Vec<NoiseSample> = (0..m)
            .map(|j| sample_noise(noise_seed(run_seed, i, j), g.encoding.shape()))
            .collect::<Result<_>>()?;
        let xt = eps
            .iter()
            .map(|e| add_noise(&g.encoding, schedule, t_index, e))
            .collect::<Result<_>>()?;
        noises.push(eps);
        noisy.push(xt);
    }
    Ok((noises, noisy))
}

/// Generates the reference object at the `N` intermediate viewpoints and
/// prepares `N × M` noised copies.
pub fn build_reference_context(
    ref_image: &ImageBuffer,
    ref_viewpoint: &Viewpoint,
    cfg: &ScoreConfig,
    backend: &dyn Backend,
) -> Result<ReferenceContext> {
    cfg.validate()?;
    let t_index = backend.descriptor().schedule.t_index(cfg.t_fraction)?;
    let intermediates = fibonacci_hemisphere(cfg.n_intermediate)?;
    let generations = intermediates
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let change = relative_change(ref_viewpoint, v).angular();
            let g = backend.generate(&GenerationRequest {
                cond: ref_image,
                change,
                seed: generation_seed(cfg.seed, i),
            })?;
            g.encoding.ensure_shape(&backend.descriptor().working_shape)?;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    let (noises, noisy) = draw_noise(&generations, cfg.m_samples, cfg.seed, t_index, backend)?;
    Ok(ReferenceContext {
        ref_image: ref_image.clone(),
        ref_viewpoint: *ref_viewpoint,
        intermediates,
        generations: Arc::new(generations),
        noises,
        noisy,
        t_index,
        noise_seed: cfg.seed,
    })
}

/// A score and its per-viewpoint / per-sample decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreValue {
    pub value: f64,
    /// `1/M Σ_j r_ij` for each intermediate `i`; sums to `value`.
    pub per_viewpoint: Vec<f64>,
    /// `Σ_i r_ij` for each sample `j`; averages to `value`.
    pub per_sample: Vec<f64>,
    /// Elements per residual tensor.
    pub numel: usize,
}

impl ScoreValue {
    fn from_residuals(residuals: &[Vec<f64>], numel: usize) -> Self {
        let n = residuals.len();
        let m = residuals.first().map_or(0, Vec::len);
        let mut per_viewpoint = vec![0.0; n];
        let mut per_sample = vec![0.0; m];
        for (i, row) in residuals.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                per_viewpoint[i] += r;
                per_sample[j] += r;
            }
            per_viewpoint[i] /= m as f64;
        }
        let value = per_sample.iter().sum::<f64>() / m as f64;
        ScoreValue {
            value,
            per_viewpoint,
            per_sample,
            numel,
        }
    }

    /// Per-viewpoint residuals divided by the element count.
    pub fn per_viewpoint_normalized(&self) -> Vec<f64> {
        self.per_viewpoint.iter().map(|v| v / self.numel as f64).collect()
    }
}

fn check_candidate(candidate: &Viewpoint) -> Result<()> {
    if candidate.elevation_deg().abs() >= 90.0 - POLE_EPS_DEG {
        return Err(Error::PoleDegenerate(candidate.elevation_deg()));
    }
    Ok(())
}

/// Two-side matching score of `candidate` as the query viewpoint.
pub fn two_side_score(
    ctx: &ReferenceContext,
    query_image: &ImageBuffer,
    candidate: &Viewpoint,
    backend: &dyn Backend,
) -> Result<ScoreValue> {
    check_candidate(candidate)?;
    let m = ctx.m_samples();
    let changes: Vec<ViewChange> = ctx
        .intermediates
        .iter()
        .map(|v| relative_change(candidate, v).angular())
        .collect();
    let mut requests = Vec::with_capacity(ctx.n_intermediate() * m);
    for (i, change) in changes.iter().enumerate() {
        for j in 0..m {
            requests.push(DenoiseRequest {
                noisy: &ctx.noisy[i][j],
                t_index: ctx.t_index,
                cond: query_image,
                change: *change,
            });
        }
    }
    let predictions = backend.denoise_batch(&requests)?;
    if predictions.len() != requests.len() {
        return Err(Error::BackendUnavailable(format!(
            "backend answered {} of {} denoise requests",
            predictions.len(),
            requests.len()
        )));
    }
    // Fixed (i, j) accumulation order keeps sums bit-stable.
    let mut residuals = vec![vec![0.0; m]; ctx.n_intermediate()];
    for (k, pred) in predictions.iter().enumerate() {
        let (i, j) = (k / m, k % m);
        residuals[i][j] = pred.sq_dist(&ctx.noises[i][j].tensor)?;
    }
    let numel = ctx.noises[0][0].tensor.numel();
    Ok(ScoreValue::from_residuals(&residuals, numel))
}

/// How the one-side baseline compares a generation with the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NaiveMetric {
    /// Denoising residual of the noised generation, conditioned on the query
    /// with zero change.
    #[default]
    Denoise,
    /// Plain squared pixel distance between generation and query.
    ImageL2,
}

/// One-side baseline: generate the reference at the candidate viewpoint and
/// match it against the query image.
pub fn naive_score(
    ref_image: &ImageBuffer,
    ref_viewpoint: &Viewpoint,
    query_image: &ImageBuffer,
    candidate: &Viewpoint,
    cfg: &ScoreConfig,
    metric: NaiveMetric,
    backend: &dyn Backend,
) -> Result<ScoreValue> {
    cfg.validate()?;
    check_candidate(candidate)?;
    let key = StreamKey::new(cfg.seed).derive(NAIVE_TAG);
    let generated = backend.generate(&GenerationRequest {
        cond: ref_image,
        change: relative_change(ref_viewpoint, candidate).angular(),
        seed: key.derive(GEN_TAG).0,
    })?;
    match metric {
        NaiveMetric::ImageL2 => {
            let d = generated.image.to_tensor().sq_dist(&query_image.to_tensor())?;
            Ok(ScoreValue::from_residuals(&[vec![d]], generated.image.pixels().len()))
        }
        NaiveMetric::Denoise => {
            let schedule = &backend.descriptor().schedule;
            let t_index = schedule.t_index(cfg.t_fraction)?;
            let shape = generated.encoding.shape().to_vec();
            let eps: Vec<NoiseSample> = (0..cfg.m_samples)
                .map(|j| sample_noise(key.derive_all(&[NOISE_TAG, j as u64]).0, &shape))
                .collect::<Result<_>>()?;
            let noisy: Vec<TensorBuffer> = eps
                .iter()
                .map(|e| add_noise(&generated.encoding, schedule, t_index, e))
                .collect::<Result<_>>()?;
            let requests: Vec<DenoiseRequest> = noisy
                .iter()
                .map(|x| DenoiseRequest {
                    noisy: x,
                    t_index,
                    cond: query_image,
                    change: ViewChange::default(),
                })
                .collect();
            let predictions = backend.denoise_batch(&requests)?;
            let row = predictions
                .iter()
                .zip(&eps)
                .map(|(p, e)| p.sq_dist(&e.tensor))
                .collect::<Result<Vec<_>>>()?;
            Ok(ScoreValue::from_residuals(&[row], generated.encoding.numel()))
        }
    }
}

/// Both sides' generations at every intermediate viewpoint, for inspection:
/// `(from reference, from query posed at query_viewpoint)`. The reference
/// side reuses the context's generation seeds; the query side draws its own.
pub fn intermediate_views(
    ref_image: &ImageBuffer,
    ref_viewpoint: &Viewpoint,
    query_image: &ImageBuffer,
    query_viewpoint: &Viewpoint,
    cfg: &ScoreConfig,
    backend: &dyn Backend,
) -> Result<Vec<(GenerationResult, GenerationResult)>> {
    cfg.validate()?;
    let intermediates = fibonacci_hemisphere(cfg.n_intermediate)?;
    intermediates
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let from_ref = backend.generate(&GenerationRequest {
                cond: ref_image,
                change: relative_change(ref_viewpoint, v).angular(),
                seed: generation_seed(cfg.seed, i),
            })?;
            let from_query = backend.generate(&GenerationRequest {
                cond: query_image,
                change: relative_change(query_viewpoint, v).angular(),
                seed: StreamKey::new(cfg.seed).derive_all(&[QUERY_SIDE_TAG, i as u64]).0,
            })?;
            Ok((from_ref, from_query))
        })
        .collect()
}

/// Scalar objective over candidate viewpoints, as consumed by the search.
pub trait ScoreFunction: Sync {
    fn score(&self, candidate: &Viewpoint) -> Result<f64>;

    /// The same objective with its Monte-Carlo noise redrawn from `seed`.
    fn resampled(&self, seed: u64) -> Result<Box<dyn ScoreFunction + '_>>;
}

/// [`two_side_score`] bound to a reference context and query image.
pub struct TwoSideObjective<'a> {
    pub ctx: Cow<'a, ReferenceContext>,
    pub query: &'a ImageBuffer,
    pub backend: &'a dyn Backend,
}

impl<'a> TwoSideObjective<'a> {
    pub fn new(ctx: &'a ReferenceContext, query: &'a ImageBuffer, backend: &'a dyn Backend) -> Self {
        TwoSideObjective {
            ctx: Cow::Borrowed(ctx),
            query,
            backend,
        }
    }
}

impl ScoreFunction for TwoSideObjective<'_> {
    fn score(&self, candidate: &Viewpoint) -> Result<f64> {
        Ok(two_side_score(&self.ctx, self.query, candidate, self.backend)?.value)
    }

    fn resampled(&self, seed: u64) -> Result<Box<dyn ScoreFunction + '_>> {
        Ok(Box::new(TwoSideObjective {
            ctx: Cow::Owned(self.ctx.resampled(seed, self.backend)?),
            query: self.query,
            backend: self.backend,
        }))
    }
}

/// [`naive_score`] bound to a reference/query pair.
pub struct NaiveObjective<'a> {
    pub ref_image: &'a ImageBuffer,
    pub ref_viewpoint: Viewpoint,
    pub query: &'a ImageBuffer,
    pub cfg: ScoreConfig,
    pub metric: NaiveMetric,
    pub backend: &'a dyn Backend,
}

impl ScoreFunction for NaiveObjective<'_> {
    fn score(&self, candidate: &Viewpoint) -> Result<f64> {
        Ok(naive_score(
            self.ref_image,
            &self.ref_viewpoint,
            self.query,
            candidate,
            &self.cfg,
            self.metric,
            self.backend,
        )?
        .value)
    }

    fn resampled(&self, seed: u64) -> Result<Box<dyn ScoreFunction + '_>> {
        Ok(Box::new(NaiveObjective {
            cfg: self.cfg.with_seed(seed),
            ..*self
        }))
    }
}
