use serde::{Deserialize, Serialize};

use super::TensorBuffer;
use crate::error::{Error, Result};
use crate::rng::StreamKey;

pub const DEFAULT_T_TOTAL: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 8.5e-4;
pub const DEFAULT_BETA_END: f64 = 1.2e-2;

/// Cumulative signal fractions `ᾱ_t` of a variance-preserving forward process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Wraps an externally supplied `ᾱ` table (e.g. fetched from a server).
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(Error::InvalidScheduleParams("empty alpha_bar".into()));
        }
        if alpha_bar.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::InvalidScheduleParams("alpha_bar outside (0, 1]".into()));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidScheduleParams(
                "alpha_bar must be strictly decreasing".into(),
            ));
        }
        Ok(NoiseSchedule { alpha_bar })
    }

    pub fn t_total(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Signal coefficient `α_t = sqrt(ᾱ_t)`.
    pub fn alpha(&self, t_index: usize) -> f64 {
        self.alpha_bar[t_index].sqrt()
    }

    /// Noise coefficient `σ_t = sqrt(1 - ᾱ_t)`.
    pub fn sigma(&self, t_index: usize) -> f64 {
        (1.0 - self.alpha_bar[t_index]).sqrt()
    }

    /// Discrete index of a fractional timestep, `floor(t · T)`.
    pub fn t_index(&self, t_fraction: f64) -> Result<usize> {
        if !(t_fraction > 0.0 && t_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("timestep fraction {t_fraction} not in (0, 1)")));
        }
        // The epsilon keeps exact products such as 0.4 * 1000 from flooring down.
        let idx = (t_fraction * self.t_total() as f64 + 1e-9).floor() as usize;
        if idx >= self.t_total() {
            return Err(Error::InvalidConfig(format!(
                "timestep fraction {t_fraction} maps past T = {}",
                self.t_total()
            )));
        }
        Ok(idx)
    }

    fn check_index(&self, t_index: usize) -> Result<()> {
        if t_index >= self.t_total() {
            return Err(Error::InvalidConfig(format!(
                "t_index {t_index} >= T = {}",
                self.t_total()
            )));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_T_TOTAL, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }
}

/// Scaled-linear schedule: `β` linear in sqrt-space, `ᾱ_t = Π_{s≤t} (1 - β_s)`.
pub fn make_schedule(t_total: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_total == 0 {
        return Err(Error::InvalidScheduleParams("t_total must be >= 1".into()));
    }
    if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
        return Err(Error::InvalidScheduleParams(format!(
            "need 0 < beta_start ({beta_start}) < beta_end ({beta_end}) < 1"
        )));
    }
    let (lo, hi) = (beta_start.sqrt(), beta_end.sqrt());
    let denom = (t_total.max(2) - 1) as f64;
    let mut acc = 1.0;
    let alpha_bar = (0..t_total)
        .map(|s| {
            let b = lo + (hi - lo) * s as f64 / denom;
            acc *= 1.0 - b * b;
            acc
        })
        .collect();
    NoiseSchedule::from_alpha_bar(alpha_bar)
}

/// Seeded standard-normal tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    pub seed: u64,
    pub tensor: TensorBuffer,
}

/// Draws i.i.d. standard normals from the counter stream keyed by `seed`.
pub fn sample_noise(seed: u64, shape: &[usize]) -> Result<NoiseSample> {
    let mut data = vec![0f32; super::tensor::checked_numel(shape)?];
    StreamKey::new(seed).fill_normal(&mut data, 1.0);
    Ok(NoiseSample {
        seed,
        tensor: TensorBuffer::from_parts_unchecked(shape.to_vec(), data),
    })
}

/// Forward noising `x_t = α_t x + σ_t ε`.
pub fn add_noise(
    x: &TensorBuffer,
    schedule: &NoiseSchedule,
    t_index: usize,
    eps: &NoiseSample,
) -> Result<TensorBuffer> {
    schedule.check_index(t_index)?;
    eps.tensor.ensure_shape(x.shape())?;
    let (a, s) = (schedule.alpha(t_index), schedule.sigma(t_index));
    let data = x
        .data()
        .iter()
        .zip(eps.tensor.data())
        .map(|(xv, ev)| (a * *xv as f64 + s * *ev as f64) as f32)
        .collect();
    Ok(TensorBuffer::from_parts_unchecked(x.shape().to_vec(), data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_term_and_monotonicity() {
        let s = NoiseSchedule::default();
        assert_eq!(s.t_total(), 1000);
        assert!((s.alpha_bar()[0] - (1.0 - 8.5e-4)).abs() < 1e-15);
        assert!(s.alpha_bar().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn cumulative_product_reference() {
        // Independent float64 cumulative product of the same beta ramp.
        let s = NoiseSchedule::default();
        assert!((s.alpha_bar()[399] - 0.4260863636023319).abs() < 1e-12);
        assert!((s.alpha_bar()[400] - 0.4244830240309834).abs() < 1e-12);
    }

    #[test]
    fn variance_preserving() {
        let s = NoiseSchedule::default();
        for t in 0..s.t_total() {
            let (a, sg) = (s.alpha(t), s.sigma(t));
            assert!((a * a + sg * sg - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn t_index_mapping() {
        let s = NoiseSchedule::default();
        assert_eq!(s.t_index(0.4).unwrap(), 400);
        assert_eq!(s.t_index(0.2).unwrap(), 200);
        assert!(s.t_index(1.0).is_err());
        assert!(s.t_index(0.0).is_err());
    }

    #[test]
    fn invalid_params() {
        assert!(make_schedule(0, 1e-4, 1e-2).is_err());
        assert!(make_schedule(10, 1e-2, 1e-4).is_err());
        assert!(make_schedule(10, 0.0, 1e-2).is_err());
        assert!(make_schedule(10, 1e-4, 1.0).is_err());
        let one = make_schedule(1, 1e-4, 1e-2).unwrap();
        assert!((one.alpha_bar()[0] - (1.0 - 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn zero_signal_gives_scaled_noise() {
        let s = NoiseSchedule::default();
        let x = TensorBuffer::zeros(vec![4, 4, 3]).unwrap();
        let eps = sample_noise(5, &[4, 4, 3]).unwrap();
        let xt = add_noise(&x, &s, 400, &eps).unwrap();
        let sg = s.sigma(400);
        for (o, e) in xt.data().iter().zip(eps.tensor.data()) {
            assert_eq!(*o, (sg * *e as f64) as f32);
        }
    }

    #[test]
    fn near_identity_at_first_step() {
        let s = NoiseSchedule::default();
        let x = sample_noise(1, &[64]).unwrap().tensor;
        let eps = sample_noise(2, &[64]).unwrap();
        let xt = add_noise(&x, &s, 0, &eps).unwrap();
        let bound = s.sigma(0) * 6.0 + (1.0 - s.alpha(0)) * 6.0;
        for (o, v) in xt.data().iter().zip(x.data()) {
            assert!(((o - v) as f64).abs() < bound);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let s = NoiseSchedule::default();
        let x = TensorBuffer::zeros(vec![4]).unwrap();
        let eps = sample_noise(0, &[5]).unwrap();
        assert!(matches!(add_noise(&x, &s, 1, &eps), Err(Error::ShapeMismatch { .. })));
        let eps = sample_noise(0, &[4]).unwrap();
        assert!(add_noise(&x, &s, 1000, &eps).is_err());
    }

    #[test]
    fn noise_is_reproducible() {
        let a = sample_noise(77, &[3, 5]).unwrap();
        let b = sample_noise(77, &[3, 5]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_noise(78, &[3, 5]).unwrap());
    }

    #[test]
    fn noise_moments() {
        let n = 1_000_000;
        let a = sample_noise(2024, &[n]).unwrap();
        let b = sample_noise(2025, &[n]).unwrap();
        let mean = a.tensor.data().iter().map(|v| *v as f64).sum::<f64>() / n as f64;
        let var = a.tensor.data().iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
        let mb = b.tensor.data().iter().map(|v| *v as f64).sum::<f64>() / n as f64;
        let vb = b.tensor.data().iter().map(|v| (*v as f64 - mb).powi(2)).sum::<f64>() / n as f64;
        let cov = a
            .tensor
            .data()
            .iter()
            .zip(b.tensor.data())
            .map(|(x, y)| (*x as f64 - mean) * (*y as f64 - mb))
            .sum::<f64>()
            / n as f64;
        let corr = cov / (var * vb).sqrt();
        assert!(corr.abs() < 0.01, "corr {corr}");
    }

    proptest! {
        #[test]
        fn noise_is_recoverable(seed in any::<u64>(), t in 1usize..999) {
            let s = NoiseSchedule::default();
            let x = sample_noise(seed ^ 0xabc, &[32]).unwrap().tensor;
            let eps = sample_noise(seed, &[32]).unwrap();
            let xt = add_noise(&x, &s, t, &eps).unwrap();
            let (a, sg) = (s.alpha(t), s.sigma(t));
            for ((o, xv), e) in xt.data().iter().zip(x.data()).zip(eps.tensor.data()) {
                let rec = (*o as f64 - a * *xv as f64) / sg;
                prop_assert!((rec - *e as f64).abs() < 1e-5);
            }
        }

        #[test]
        fn add_noise_is_affine(seed in any::<u64>(), scale in -3.0f32..3.0, t in 1usize..999) {
            let s = NoiseSchedule::default();
            let x = sample_noise(seed ^ 0x55, &[16]).unwrap().tensor;
            let ax = TensorBuffer::new(vec![16], x.data().iter().map(|v| v * scale).collect()).unwrap();
            let eps = sample_noise(seed, &[16]).unwrap();
            let lhs = add_noise(&ax, &s, t, &eps).unwrap();
            let rhs = add_noise(&x, &s, t, &eps).unwrap();
            let sg = s.sigma(t);
            for ((l, r), e) in lhs.data().iter().zip(rhs.data()).zip(eps.tensor.data()) {
                let got = *l as f64 - scale as f64 * *r as f64;
                let want = (1.0 - scale as f64) * sg * *e as f64;
                prop_assert!((got - want).abs() < 1e-5);
            }
        }
    }
}
