//! Empirical distribution helpers.

use serde::{Deserialize, Serialize};

/// Two-sample Kolmogorov–Smirnov comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleKs {
    /// `sup |F_a − F_b|`.
    pub distance: f64,
    /// Asymptotic p-value with the Stephens small-sample correction.
    pub p_value: f64,
}

/// `sup_x |F_a(x) − F_b(x)|` and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TwoSampleKs {
    assert!(!a.is_empty() && !b.is_empty(), "both samples must be non-empty");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let root = ne.sqrt();
    TwoSampleKs {
        distance: d,
        p_value: kolmogorov_tail((root + 0.12 + 0.11 / root) * d),
    }
}

/// `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} e^{−2 j² λ²}`, the Kolmogorov tail.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs().max(1e-300) {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Step points `(x_(i), i/n)` of the empirical cdf.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter()
        .enumerate()
        .map(|(i, x)| (x, (i + 1) as f64 / n))
        .collect()
}

/// Binomial standard deviation `sqrt(n a (1 − a))`.
pub fn binomial_sd(n: usize, a: f64) -> f64 {
    (n as f64 * a * (1.0 - a)).sqrt()
}

/// Median of a sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
