//! Legendre polynomials: the orthonormal system on `[0, 1]` used by the
//! target family, and Gauss–Legendre rules for the quadrature grid.

/// Values of the classical Legendre polynomials `P_0..P_{len-1}` at `y`
/// via Bonnet's recursion.
fn classical(y: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = y;
    }
    for k in 2..out.len() {
        let kf = k as f64;
        out[k] = ((2.0 * kf - 1.0) * y * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
    }
}

/// Orthonormal shifted Legendre functions on `[0, 1]`:
/// `p_k(s) = sqrt(2k - 1) P_{k-1}(2s - 1)` for `k = 1..=out.len()`.
///
/// `p_1 = 1`, `p_2 = sqrt(12)(s - 1/2)`, `p_3 = 6 sqrt(5)((s - 1/2)^2 - 1/12)`.
pub fn orthonormal(s: f64, out: &mut [f64]) {
    classical(2.0 * s - 1.0, out);
    for (k, v) in out.iter_mut().enumerate() {
        *v *= ((2 * k + 1) as f64).sqrt();
    }
}

/// Single orthonormal function `p_k(s)`, `k >= 1`.
pub fn orthonormal_k(k: usize, s: f64) -> f64 {
    let mut buf = vec![0.0; k];
    orthonormal(s, &mut buf);
    buf[k - 1]
}

/// Antiderivatives `∫_0^x p_k(u) du` for `k = 1..=out.len()`.
///
/// Uses `∫ P_j = (P_{j+1} - P_{j-1}) / (2j + 1)`, which vanishes at `y = -1`
/// for `j >= 1`.
pub fn orthonormal_integral(x: f64, out: &mut [f64]) {
    let m = out.len();
    if m == 0 {
        return;
    }
    let y = 2.0 * x - 1.0;
    let mut p = vec![0.0; m + 1];
    classical(y, &mut p);
    out[0] = x;
    for k in 2..=m {
        let j = k - 1;
        let integral_y = (p[j + 1] - p[j - 1]) / (2 * j + 1) as f64;
        // du = dy / 2
        out[k - 1] = ((2 * k - 1) as f64).sqrt() * integral_y / 2.0;
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "Gauss-Legendre order must be positive");
    if order == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}
