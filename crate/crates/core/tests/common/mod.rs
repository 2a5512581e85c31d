#![allow(dead_code)]

use posematch::backend::{DegradationModel, OracleBackend};
use posematch::scoring::ScoreConfig;
use posematch::search::EstimateConfig;
use posematch::{ImageBuffer, NoiseSchedule, Viewpoint};

pub fn oracle(gain: f64, size: usize) -> OracleBackend {
    OracleBackend::new(DegradationModel::new(gain, 1.0).unwrap(), NoiseSchedule::default(), size).unwrap()
}

pub fn perfect(size: usize) -> OracleBackend {
    oracle(0.0, size)
}

pub fn vp(e: f64, a: f64) -> Viewpoint {
    Viewpoint::unit(e, a).unwrap()
}

pub fn view(backend: &OracleBackend, object: u64, e: f64, a: f64) -> ImageBuffer {
    backend.render_view(object, &vp(e, a)).unwrap().image
}

/// N=16, M=1 at the default t and seed.
pub fn light_score() -> ScoreConfig {
    ScoreConfig { n_intermediate: 16, m_samples: 1, ..Default::default() }
}

pub fn light_estimate() -> EstimateConfig {
    EstimateConfig { score: light_score(), ..Default::default() }
}
