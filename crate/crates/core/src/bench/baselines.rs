//! Published numbers, shown next to ours in emitted tables. Never recomputed.

/// One row of a published accuracy table (percentages).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperRow {
    pub label: &'static str,
    pub values: &'static [f64],
}

/// Overall Racc@15 / Racc@30 on NAVI, then on GSO.
pub const PAPER_TABLE1: &[PaperRow] = &[
    PaperRow { label: "E2VG (N=64)", values: &[42.69, 64.21, 39.30, 55.86] },
    PaperRow { label: "E2VG (N=128)", values: &[43.16, 66.47, 40.43, 57.61] },
    PaperRow { label: "two-side", values: &[55.32, 82.14, 58.26, 72.61] },
];

/// GSO Racc@15 / Racc@30 for δ ≥ 120°, then δ ≥ 150°.
pub const PAPER_LARGE_DELTA: &[PaperRow] = &[
    PaperRow { label: "E2VG", values: &[19.51, 34.14, 16.36, 32.73] },
    PaperRow { label: "two-side", values: &[31.71, 49.59, 21.82, 47.27] },
];

/// NAVI Racc@15 and Racc@30 at N = 16, 32, 64, 128.
pub const PAPER_TABLE3_N: (&[f64], &[f64], &[f64]) = (
    &[16.0, 32.0, 64.0, 128.0],
    &[38.67, 35.33, 45.58, 48.39],
    &[69.81, 73.14, 78.69, 79.37],
);

/// NAVI Racc@15 and Racc@30 at M = 1, 2, 4, 8.
pub const PAPER_TABLE4_M: (&[f64], &[f64], &[f64]) = (
    &[1.0, 2.0, 4.0, 8.0],
    &[44.16, 45.53, 45.58, 45.87],
    &[73.94, 78.64, 78.69, 79.93],
);

/// NAVI Racc@15 and Racc@30 at t = 0.2, 0.4, 0.6, 0.8.
pub const PAPER_TABLE5_T: (&[f64], &[f64], &[f64]) = (
    &[0.2, 0.4, 0.6, 0.8],
    &[39.78, 45.58, 38.67, 35.33],
    &[64.81, 78.69, 60.36, 45.64],
);
