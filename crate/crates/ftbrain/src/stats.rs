//! Mann-Kendall trend test for short accuracy series.
//!
//! Detects monotone trends without assuming a distribution: S counts
//! concordant minus discordant pairs, the tie-corrected variance scales it,
//! and a continuity-corrected normal approximation yields the two-sided p.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendResult {
    #[serde(rename = "S")]
    pub s: i64,
    pub variance: f64,
    pub z: f64,
    pub p_two_sided: f64,
    pub n: usize,
}

/// Mann-Kendall test over `series`, in input order.
///
/// S = Σ_{i<j} sign(x_j − x_i), computed by inversion counting.
/// var(S) = [n(n−1)(2n+5) − Σ_t t(t−1)(2t+5)] / 18 over tie groups t.
/// z applies the ±1 continuity correction; an all-tied series has zero
/// variance and reports p = 1.
pub fn mann_kendall(series: &[f64]) -> Result<TrendResult> {
    let n = series.len();
    if n < 3 {
        return Err(Error::Data(format!("mann_kendall needs n >= 3, got {n}")));
    }
    if let Some(bad) = series.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("mann_kendall input {bad}")));
    }

    // Tie groups from the sorted values.
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_pairs = 0i64;
    let mut tie_var = 0i64;
    let mut run = 1i64;
    for i in 1..=n {
        if i < n && sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            tie_pairs += run * (run - 1) / 2;
            tie_var += run * (run - 1) * (2 * run + 5);
            run = 1;
        }
    }

    let total_pairs = (n as i64) * (n as i64 - 1) / 2;
    let inversions = count_strict_inversions(series);
    // concordant = total − ties − inversions, discordant = inversions.
    let s = total_pairs - tie_pairs - 2 * inversions;

    let nf = n as f64;
    let variance = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_var as f64) / 18.0;
    let (z, p_two_sided) = if s == 0 || variance == 0.0 {
        (0.0, 1.0)
    } else {
        let shift = if s > 0 { -1.0 } else { 1.0 };
        let z = (s as f64 + shift) / variance.sqrt();
        (z, erfc(z.abs() / std::f64::consts::SQRT_2))
    };

    Ok(TrendResult { s, variance, z, p_two_sided, n })
}

/// Pairs (i < j) with x_i > x_j, by merge sort. Equal elements take the
/// left side first so ties never count.
fn count_strict_inversions(series: &[f64]) -> i64 {
    fn merge_count(buf: &mut Vec<f64>, half: &mut [f64]) -> i64 {
        let n = half.len();
        if n < 2 {
            return 0;
        }
        let mid = n / 2;
        let mut inv = merge_count(buf, &mut half[..mid]) + merge_count(buf, &mut half[mid..]);
        buf.clear();
        let (mut i, mut j) = (0, mid);
        while i < mid && j < n {
            if half[i] <= half[j] {
                buf.push(half[i]);
                i += 1;
            } else {
                // half[i..mid] all exceed half[j].
                inv += (mid - i) as i64;
                buf.push(half[j]);
                j += 1;
            }
        }
        buf.extend_from_slice(&half[i..mid]);
        buf.extend_from_slice(&half[j..n]);
        half.copy_from_slice(buf);
        inv
    }
    let mut work = series.to_vec();
    let mut buf = Vec::with_capacity(work.len());
    merge_count(&mut buf, &mut work)
}

/// Complementary error function, Abramowitz-Stegun 7.1.26 rational fit.
/// Absolute error below 1.5e-7, plenty for reporting trend p-values.
fn erfc(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    poly * (-x * x).exp()
}
