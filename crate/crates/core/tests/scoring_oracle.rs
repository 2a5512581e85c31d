mod common;

use common::{light_score, oracle, perfect, view, vp};
use posematch::backend::{oracle_render, Backend, OracleObject};
use posematch::geometry::{relative_change, viewpoint_error_deg};
use posematch::scoring::{build_reference_context, naive_score, two_side_score, NaiveMetric, ScoreConfig};
use posematch::search::{estimate_pose, EstimateConfig, MatchingScheme, RefineConfig};

const OBJECT: u64 = 0xa11ce;

/// Azimuth (at the true elevation) minimizing `score` on a 1° grid.
fn grid_argmin(score: impl Fn(f64) -> f64) -> f64 {
    (0..360)
        .map(|a| (a as f64, score(a as f64)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap()
        .0
}

#[test]
fn two_side_grid_minimum_is_at_truth() {
    let b = perfect(32);
    let ref_image = view(&b, OBJECT, 25.0, 40.0);
    let query = view(&b, OBJECT, 35.0, 203.0);
    let ctx = build_reference_context(&ref_image, &vp(25.0, 40.0), &light_score(), &b).unwrap();
    let best = grid_argmin(|a| two_side_score(&ctx, &query, &vp(35.0, a), &b).unwrap().value);
    assert_eq!(best, 203.0);
}

#[test]
fn naive_grid_minimum_is_at_truth() {
    let b = perfect(32);
    let ref_image = view(&b, OBJECT, 25.0, 40.0);
    let query = view(&b, OBJECT, 35.0, 203.0);
    let cfg = light_score();
    let best = grid_argmin(|a| {
        naive_score(&ref_image, &vp(25.0, 40.0), &query, &vp(35.0, a), &cfg, NaiveMetric::Denoise, &b)
            .unwrap()
            .value
    });
    assert_eq!(best, 203.0);
}

#[test]
fn off_truth_score_is_the_scaled_generation_gap() {
    let size = 32;
    let b = perfect(size);
    let object = OracleObject::from_seed(OBJECT);
    let (ref_vp, truth) = (vp(25.0, 40.0), vp(35.0, 203.0));
    let query = view(&b, OBJECT, 35.0, 203.0);
    let ctx = build_reference_context(&view(&b, OBJECT, 25.0, 40.0), &ref_vp, &light_score(), &b).unwrap();
    let candidate = vp(35.0, 233.0);
    let got = two_side_score(&ctx, &query, &candidate, &b).unwrap().value;

    let schedule = &b.descriptor().schedule;
    let ratio = schedule.alpha(ctx.t_index) / schedule.sigma(ctx.t_index);
    let mut expected = 0.0;
    for (i, inter) in ctx.intermediates.iter().enumerate() {
        // The query side, posed at the candidate, generates this view.
        let target = truth.displaced(&relative_change(&candidate, inter)).unwrap();
        let gq = oracle_render(&object, &target, size).unwrap().encoding;
        expected += ctx.generations[i].encoding.sq_dist(&gq).unwrap();
    }
    expected *= ratio * ratio;
    assert!(expected > 1.0);
    assert!((got - expected).abs() <= 1e-4 * expected, "{got} vs {expected}");
}

#[test]
fn monte_carlo_variance_shrinks_with_m() {
    let b = oracle(1.0, 32);
    let ref_image = view(&b, OBJECT, 20.0, 10.0);
    let query = view(&b, OBJECT, 40.0, 100.0);
    let candidate = vp(40.0, 100.0);
    // Reference generations stay fixed; only the Monte-Carlo noise is redrawn.
    let variances: Vec<f64> = [1, 2, 4, 8]
        .iter()
        .map(|&m| {
            let cfg = ScoreConfig { n_intermediate: 8, m_samples: m, ..Default::default() };
            let ctx = build_reference_context(&ref_image, &vp(20.0, 10.0), &cfg, &b).unwrap();
            let values: Vec<f64> = (0..48u64)
                .map(|seed| {
                    let ctx = ctx.resampled(seed, &b).unwrap();
                    two_side_score(&ctx, &query, &candidate, &b).unwrap().value
                })
                .collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64
        })
        .collect();
    for w in variances.windows(2) {
        assert!(w[1] <= w[0], "variance by M: {variances:?}");
    }
}

#[test]
fn naive_loses_to_two_side_at_large_change() {
    let b = oracle(1.0, 32);
    let base = EstimateConfig {
        score: light_score(),
        refine: RefineConfig { iterations: 0, ..Default::default() },
        ..Default::default()
    };
    let naive = EstimateConfig { scheme: MatchingScheme::Naive, ..base.clone() };
    let mut wins = 0;
    let trials = 50;
    for k in 0..trials {
        let object = 1000 + k as u64;
        let e = 15.0 + (k % 7) as f64 * 5.0;
        let a_ref = (k * 37 % 360) as f64;
        let a_q = a_ref + if k % 2 == 0 { 150.0 } else { -150.0 };
        let (ref_vp, truth) = (vp(e, a_ref), vp(e, a_q));
        assert!((viewpoint_error_deg(&ref_vp, &truth).unwrap() - 150.0).abs() < 1e-6);
        let ref_image = view(&b, object, e, a_ref);
        let query = view(&b, object, e, a_q);
        let err = |cfg: &EstimateConfig| {
            let est = estimate_pose(&ref_image, &ref_vp, &query, e, cfg, &b).unwrap();
            viewpoint_error_deg(&truth, &est.viewpoint).unwrap()
        };
        if err(&naive) > err(&base) {
            wins += 1;
        }
    }
    assert!(wins * 10 >= trials * 7, "two-side better on {wins} of {trials}");
}
