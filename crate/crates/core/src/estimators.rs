//! Maximum-likelihood fitting.
//!
//! Weibull, censored Weibull, Gompertz and Jelinski–Moranda fits profile out
//! one coordinate in closed form and bisect the remaining first-order
//! condition. Littlewood and the mixture cure model profile out the
//! susceptible count `x = n·p` exactly and run Nelder–Mead over the log of
//! the two hazard parameters. The Legendre target is fitted by damped Newton.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legendre;
use crate::models::{self, Family, ModelSpec, ParamVector};
use crate::path::ObservedPath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: ParamVector,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final bracket width (root solvers), simplex diameter (Nelder–Mead)
    /// or gradient norm (Newton).
    pub diagnostic: f64,
}

/// Rejects paths the family cannot have produced.
pub fn check_path(spec: &ModelSpec, path: &ObservedPath) -> Result<()> {
    if path.has_censoring() && !spec.counts_censored() {
        return Err(Error::Path(format!(
            "path has censored entries but the {} family has no censoring",
            spec.family()
        )));
    }
    Ok(())
}

/// `L(θ) = Σ log λ(T_i) − Λ(T)` over status-1 times; `−∞` if the intensity
/// vanishes at an observed event.
pub fn loglik(spec: &ModelSpec, theta: &ParamVector, path: &ObservedPath) -> Result<f64> {
    spec.check(theta)?;
    check_path(spec, path)?;
    Ok(loglik_raw(spec, theta.as_slice(), path))
}

pub(crate) fn loglik_raw(spec: &ModelSpec, th: &[f64], path: &ObservedPath) -> f64 {
    let horizon = path.horizon();
    if spec.family() == Family::PoissonLegendre {
        let n = path.n() as f64;
        let mut p = vec![0.0; th.len()];
        let mut sum = 0.0;
        for t in path.event_times() {
            legendre::orthonormal(t / horizon, &mut p);
            let mu: f64 = th.iter().zip(&p).map(|(a, b)| a * b).sum();
            if mu <= 0.0 {
                return f64::NEG_INFINITY;
            }
            sum += (n / horizon * mu).ln();
        }
        return sum - n * th[0];
    }
    let base = spec.risk_base(th, path.n());
    let mut sum = 0.0;
    let mut removed = 0usize;
    for (&t, &event) in path.times().iter().zip(path.status()) {
        if event {
            let lam = spec.hazard_raw(th, t) * (base - removed as f64);
            if !(lam > 0.0) {
                return f64::NEG_INFINITY;
            }
            sum += lam.ln();
            removed += 1;
        } else if spec.counts_censored() {
            removed += 1;
        }
    }
    sum - spec.compensator_on_grid(th, path, &[horizon])[0]
}

/// Bisection on a sign change of `f` over `[lo, hi]`, run until the bracket
/// collapses to adjacent floats or `|f| < tol`. Returns `(root, iterations,
/// final width)`.
pub fn bisect<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Option<(f64, usize, f64)> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if !(flo.is_finite() && fhi.is_finite()) || flo * fhi > 0.0 {
        return None;
    }
    if flo == 0.0 {
        return Some((lo, 0, 0.0));
    }
    if fhi == 0.0 {
        return Some((hi, 0, 0.0));
    }
    for it in 1..=2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Some((mid, it, hi - lo));
        }
        let fm = f(mid);
        if fm == 0.0 || fm.abs() < tol {
            return Some((mid, it, hi - lo));
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some((0.5 * (lo + hi), 2000, hi - lo))
}

/// Bisection on `[lo, hi]`, retried once on `[lo/10, hi·10]`.
fn bisect_widening<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    what: &str,
) -> Result<(f64, usize, f64)> {
    if let Some(r) = bisect(&mut f, lo, hi, tol) {
        return Ok(r);
    }
    bisect(&mut f, lo / 10.0, hi * 10.0, tol).ok_or_else(|| {
        Error::NonIdentifiable(format!(
            "no sign change of the {what} condition on [{}, {}]",
            lo / 10.0,
            hi * 10.0
        ))
    })
}

/// Result of [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct Simplex {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evaluations: usize,
    pub diameter: f64,
    pub converged: bool,
}

/// Nelder–Mead minimisation with standard coefficients
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    max_evals: usize,
    tol: f64,
) -> Simplex {
    let d = x0.len();
    let mut eval = |x: &[f64], count: &mut usize| {
        *count += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut evals = 0usize;
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..d {
        let mut p = x0.to_vec();
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p, &mut evals)).collect();
    let diameter = |pts: &[Vec<f64>]| {
        pts[1..]
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&pts[0])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    };
    loop {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let diam = diameter(&pts);
        if diam < tol || evals >= max_evals {
            return Simplex {
                x: pts[0].clone(),
                fx: vals[0],
                evaluations: evals,
                diameter: diam,
                converged: diam < tol,
            };
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| pts[..d].iter().map(|p| p[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[d])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
        } else {
            let (xc, fc) = if fr < vals[d] {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < vals[d].min(fr) {
                pts[d] = xc;
                vals[d] = fc;
            } else {
                for i in 1..=d {
                    let shrunk: Vec<f64> = pts[i]
                        .iter()
                        .zip(&pts[0])
                        .map(|(p, b)| b + 0.5 * (p - b))
                        .collect();
                    vals[i] = eval(&shrunk, &mut evals);
                    pts[i] = shrunk;
                }
            }
        }
    }
}

pub const SIMPLEX_RESTARTS: usize = 5;
pub const SIMPLEX_BUDGET: usize = 2000;
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Maximum-likelihood fit of `spec` to `path`.
pub fn fit(spec: &ModelSpec, path: &ObservedPath) -> Result<FitResult> {
    check_path(spec, path)?;
    if spec.family() == Family::PoissonLegendre {
        return fit_target(path, spec.m());
    }
    let events = path.n_events();
    let needed = spec.m().min(2);
    if events < needed {
        return Err(Error::NonIdentifiable(format!(
            "{events} events; the {} family needs at least {needed}",
            spec.family()
        )));
    }
    let fitted = match spec.family() {
        Family::AalenWeibull | Family::AalenWeibullCensored => fit_weibull(spec, path)?,
        Family::AalenGompertz => fit_gompertz(spec, path)?,
        Family::JelinskiMoranda => fit_jm(path)?,
        Family::Littlewood | Family::MixtureCure => fit_profiled_count(spec, path)?,
        Family::PoissonLegendre => unreachable!(),
    };
    let mut fitted = fitted;
    fitted.loglik = loglik_raw(spec, fitted.theta_hat.as_slice(), path);
    spec.check(&fitted.theta_hat)?;
    Ok(fitted)
}

/// Profiled Weibull shape condition, divided through by the scale
/// `c = t0 + T` so that every power is at most one:
/// `N/b + Σ δ_i log x_i + (N/S)(n x0^b log x0 − Σ x_i^b log x_i)` with
/// `x = (t0 + t)/c` and `S = Σ x_i^b + (n − Ñ) − n x0^b`.
struct WeibullProfile {
    logs: Vec<f64>,
    events: Vec<bool>,
    n: f64,
    n_events: f64,
    survivors: f64,
    log_x0: Option<f64>,
    scale: f64,
}

impl WeibullProfile {
    fn new(spec: &ModelSpec, path: &ObservedPath) -> Self {
        let scale = spec.t0() + path.horizon();
        let logs = path
            .times()
            .iter()
            .map(|t| ((spec.t0() + t) / scale).ln())
            .collect();
        let events = path.status().to_vec();
        let removed = path.len() as f64;
        let log_x0 = (spec.t0() > 0.0).then(|| (spec.t0() / scale).ln());
        Self {
            logs,
            events,
            n: path.n() as f64,
            n_events: path.n_events() as f64,
            survivors: path.n() as f64 - removed,
            log_x0,
            scale,
        }
    }

    fn s(&self, b: f64) -> f64 {
        let mut s: f64 = self.logs.iter().map(|l| (b * l).exp()).sum::<f64>() + self.survivors;
        if let Some(l0) = self.log_x0 {
            s -= self.n * (b * l0).exp();
        }
        s
    }

    fn residual(&self, b: f64) -> f64 {
        let s = self.s(b);
        let mut acc_log = 0.0;
        let mut acc_pow = 0.0;
        for (l, &e) in self.logs.iter().zip(&self.events) {
            if e {
                acc_log += l;
            }
            acc_pow += (b * l).exp() * l;
        }
        let mut inner = -acc_pow;
        if let Some(l0) = self.log_x0 {
            inner += self.n * (b * l0).exp() * l0;
        }
        self.n_events / b + acc_log + self.n_events / s * inner
    }

    fn theta1(&self, b: f64) -> f64 {
        self.scale * (self.s(b) / self.n_events).powf(1.0 / b)
    }
}

fn fit_weibull(spec: &ModelSpec, path: &ObservedPath) -> Result<FitResult> {
    let prof = WeibullProfile::new(spec, path);
    let (b, it, width) = bisect_widening(|b| prof.residual(b), 0.1, 50.0, 0.0, "Weibull shape")?;
    let a = prof.theta1(b);
    Ok(FitResult {
        theta_hat: ParamVector::new(vec![a, b]),
        loglik: f64::NAN,
        iterations: it,
        converged: true,
        diagnostic: width,
    })
}

/// Gompertz shape condition after dividing by `e^{b(t0+T)}`:
/// `N/b + Σ T_i − (N/D')(Σ T_i y_i + (n − N)T)`,
/// `y_i = e^{b(T_i − T)}`, `D' = Σ y_i + (n − N) − n e^{−bT}`.
fn gompertz_scaled(times: &[f64], n: f64, horizon: f64, b: f64) -> (f64, f64) {
    let events = times.len() as f64;
    let mut sum_y = 0.0;
    let mut sum_ty = 0.0;
    let mut sum_t = 0.0;
    for &t in times {
        let y = (b * (t - horizon)).exp();
        sum_y += y;
        sum_ty += t * y;
        sum_t += t;
    }
    let d = sum_y + (n - events) - n * (-b * horizon).exp();
    let res = events / b + sum_t - events / d * (sum_ty + (n - events) * horizon);
    (res, d)
}

fn fit_gompertz(spec: &ModelSpec, path: &ObservedPath) -> Result<FitResult> {
    let times: Vec<f64> = path.event_times().collect();
    let n = path.n() as f64;
    let horizon = path.horizon();
    let events = times.len() as f64;
    let (b, it, width) = bisect_widening(
        |b| gompertz_scaled(&times, n, horizon, b).0,
        1e-3 / horizon,
        50.0 / horizon,
        0.0,
        "Gompertz shape",
    )?;
    let (_, d) = gompertz_scaled(&times, n, horizon, b);
    // θ1 e^{b(t0+T)} = N / D'
    let a = events / d * (-b * (spec.t0() + horizon)).exp();
    Ok(FitResult {
        theta_hat: ParamVector::new(vec![a, b]),
        loglik: f64::NAN,
        iterations: it,
        converged: true,
        diagnostic: width,
    })
}

/// JM condition in the susceptible count `x = n p`:
/// `Σ_{i=1}^N 1/(x − i + 1) − N T / (Σ T_i + (x − N) T)`.
fn jm_residual(sum_t: f64, events: usize, horizon: f64, x: f64) -> f64 {
    let harmonic: f64 = (1..=events).map(|i| 1.0 / (x - i as f64 + 1.0)).sum();
    let theta = events as f64 / (sum_t + (x - events as f64) * horizon);
    harmonic - theta * horizon
}

fn jm_theta(sum_t: f64, events: usize, horizon: f64, x: f64) -> f64 {
    events as f64 / (sum_t + (x - events as f64) * horizon)
}

fn fit_jm(path: &ObservedPath) -> Result<FitResult> {
    let times: Vec<f64> = path.event_times().collect();
    let events = times.len();
    let sum_t: f64 = times.iter().sum();
    let n = path.n() as f64;
    let horizon = path.horizon();
    let lo = events as f64 + 1e-9 * n;
    let hi = n * (1.0 - 1e-12);
    if !(lo < hi) {
        return Err(Error::NonIdentifiable(format!(
            "{events} faults observed among n = {n}; no room for p < 1"
        )));
    }
    let (x, it, width) = bisect(|x| jm_residual(sum_t, events, horizon, x), lo, hi, 0.0)
        .ok_or_else(|| {
            Error::NonIdentifiable(format!(
                "JM condition has no sign change for n p in [{lo}, {hi}]; \
                 the failure rate does not decay enough"
            ))
        })?;
    Ok(FitResult {
        theta_hat: ParamVector::new(vec![jm_theta(sum_t, events, horizon, x), x / n]),
        loglik: f64::NAN,
        iterations: it,
        converged: true,
        diagnostic: width,
    })
}

/// The count `x ≥ N` maximising `Σ log(x − i + 1) − (x − N) H`: the root
/// of `Σ 1/(x − i + 1) = H`, clamped to `x = N`.
fn profile_count(events: usize, cum_hazard_at_t: f64) -> f64 {
    let nf = events as f64;
    let g = |x: f64| (1..=events).map(|i| 1.0 / (x - i as f64 + 1.0)).sum::<f64>() - cum_hazard_at_t;
    if g(nf) <= 0.0 {
        return nf;
    }
    // Σ 1/(x−i+1) lies between N/x and N/(x−N+1)
    let hi = nf / cum_hazard_at_t + nf;
    bisect(g, nf, hi.max(nf + 1.0), 0.0)
        .map(|r| r.0)
        .unwrap_or(nf)
}

/// Profile log-likelihood of the two hazard parameters (count maximised
/// out); independent of the nominal population size.
fn count_profile_loglik(spec: &ModelSpec, path: &ObservedPath, a: f64, b: f64) -> (f64, f64) {
    let th = [a, b, 0.5];
    let events: Vec<f64> = path.event_times().collect();
    let k = events.len();
    let h_t = spec.cum_hazard_raw(&th, path.horizon());
    if !(h_t > 0.0 && h_t.is_finite()) {
        return (f64::NEG_INFINITY, f64::NAN);
    }
    let x = profile_count(k, h_t);
    let mut ll = 0.0;
    for (i, &t) in events.iter().enumerate() {
        ll += spec.hazard_raw(&th, t).ln() + (x - i as f64).ln() - spec.cum_hazard_raw(&th, t);
    }
    ll -= (x - k as f64) * h_t;
    (ll, x)
}

fn fit_profiled_count(spec: &ModelSpec, path: &ObservedPath) -> Result<FitResult> {
    let events: Vec<f64> = path.event_times().collect();
    let horizon = path.horizon();
    let start = match spec.family() {
        Family::Littlewood => {
            let sum_t: f64 = events.iter().sum();
            let k = events.len();
            // JM solved on an n-free bracket seeds the Littlewood rate
            let lo = k as f64 * (1.0 + 1e-9);
            let theta = bisect(
                |x| jm_residual(sum_t, k, horizon, x),
                lo,
                k as f64 * 1e6 + 1.0,
                0.0,
            )
            .map(|(x, _, _)| jm_theta(sum_t, k, horizon, x))
            .unwrap_or(1.0 / horizon);
            [theta.ln(), (1.0 / horizon).ln()]
        }
        _ => {
            let mean = events.iter().sum::<f64>() / events.len() as f64;
            [(2.0 * mean).ln(), 0.0]
        }
    };
    let objective = |z: &[f64]| -> f64 {
        let (a, b) = (z[0].exp(), z[1].exp());
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
            return f64::INFINITY;
        }
        let (ll, _) = count_profile_loglik(spec, path, a, b);
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x1f2e_3d4c);
    let mut best: Option<Simplex> = None;
    let mut total = 0usize;
    for restart in 0..SIMPLEX_RESTARTS {
        let x0: Vec<f64> = if restart == 0 {
            start.to_vec()
        } else {
            start
                .iter()
                .map(|s| s + rng.random_range(-0.5..0.5))
                .collect()
        };
        let run = nelder_mead(objective, &x0, 0.25, SIMPLEX_BUDGET, SIMPLEX_TOL);
        total += run.evaluations;
        if best.as_ref().is_none_or(|b| run.fx < b.fx) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    if !best.fx.is_finite() {
        return Err(Error::NonIdentifiable(format!(
            "no finite likelihood found for the {} family",
            spec.family()
        )));
    }
    let (a, b) = (best.x[0].exp(), best.x[1].exp());
    let (_, x) = count_profile_loglik(spec, path, a, b);
    let p = x / path.n() as f64;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::NonIdentifiable(format!(
            "estimated susceptible count {x} is not below n = {}",
            path.n()
        )));
    }
    Ok(FitResult {
        theta_hat: ParamVector::new(vec![a, b, p]),
        loglik: f64::NAN,
        iterations: total,
        converged: best.converged,
        diagnostic: best.diameter,
    })
}

/// Fit of the `m`-dimensional Legendre target family.
///
/// Maximises `Σ_i log Σ_j τ_j p_j(T_i/T) − n τ_1` by Newton steps from
/// `τ₀`, halving each step until the intensity stays positive and the
/// objective does not decrease.
pub fn fit_target(path: &ObservedPath, m: usize) -> Result<FitResult> {
    if m == 0 {
        return Err(Error::Argument("target dimension must be >= 1".into()));
    }
    if path.has_censoring() {
        return Err(Error::Path("the target family has no censoring".into()));
    }
    let events: Vec<f64> = path.event_times().map(|t| t / path.horizon()).collect();
    if events.is_empty() {
        return Err(Error::NonIdentifiable("no events to fit the target family".into()));
    }
    let n = path.n() as f64;
    let k = events.len();
    let mut basis = DMatrix::<f64>::zeros(k, m);
    let mut row = vec![0.0; m];
    for (i, &s) in events.iter().enumerate() {
        legendre::orthonormal(s, &mut row);
        for j in 0..m {
            basis[(i, j)] = row[j];
        }
    }
    let objective = |tau: &DVector<f64>| -> f64 {
        let mu = &basis * tau;
        if mu.iter().any(|&v| v <= 0.0) {
            return f64::NEG_INFINITY;
        }
        mu.iter().map(|v| v.ln()).sum::<f64>() - n * tau[0]
    };
    let mut tau = DVector::<f64>::zeros(m);
    tau[0] = 1.0;
    let mut value = objective(&tau);
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=100 {
        iterations = it;
        let mu = &basis * &tau;
        let mut grad = DVector::<f64>::zeros(m);
        let mut info = DMatrix::<f64>::zeros(m, m);
        for i in 0..k {
            let r = basis.row(i);
            let inv = 1.0 / mu[i];
            for a in 0..m {
                grad[a] += r[a] * inv;
                for b in 0..m {
                    info[(a, b)] += r[a] * r[b] * inv * inv;
                }
            }
        }
        grad[0] -= n;
        let previous = grad_norm;
        grad_norm = grad.norm();
        // keep iterating past 1e-9 while Newton still improves, which pins
        // τ̂1 = N/n to rounding level
        if grad_norm < 1e-9 && (grad_norm >= 0.5 * previous || grad_norm < 1e-13 * k as f64) {
            break;
        }
        let step = match info.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                return Err(Error::NonIdentifiable(format!(
                    "target information matrix is singular at m = {m} with {k} events"
                )))
            }
        };
        let slack = 1e-12 * (1.0 + value.abs());
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &tau + &step * scale;
            let v = objective(&cand);
            if v.is_finite() && v >= value - slack && models::legendre_positive(cand.as_slice()) {
                tau = cand;
                value = v;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let converged = grad_norm < 1e-9;
    Ok(FitResult {
        theta_hat: ParamVector::new(tau.iter().copied().collect()),
        loglik: value + k as f64 * (n / path.horizon()).ln(),
        iterations,
        converged,
        diagnostic: grad_norm,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::simulate_path;

    fn th(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    fn weibull_path(seed: u64, n: usize) -> (ModelSpec, ObservedPath) {
        let spec = ModelSpec::aalen_weibull(50.0, 50.0).unwrap();
        let path = simulate_path(&spec, &th(&[86.0, 9.0]), n, 50.0, seed).unwrap();
        (spec, path)
    }

    #[test]
    fn empty_target_path_loglik_is_minus_n() {
        let spec = ModelSpec::poisson_legendre(2, 1.0).unwrap();
        let path = ObservedPath::from_events(vec![], 250, 1.0).unwrap();
        let ll = loglik(&spec, &spec.target_null(), &path).unwrap();
        assert!((ll + 250.0).abs() < 1e-12);
    }

    #[test]
    fn zero_intensity_at_event_is_minus_infinity() {
        let spec = ModelSpec::jelinski_moranda(1.0).unwrap();
        let path = ObservedPath::from_events(vec![0.1, 0.2, 0.3], 10, 1.0).unwrap();
        // n p = 2 < 3 observed faults
        let ll = loglik(&spec, &th(&[1.0, 0.2]), &path).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn bisect_finds_simple_root() {
        let (r, _, _) = bisect(|x| x * x - 2.0, 0.0, 2.0, 0.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 0.0).is_none());
    }

    #[test]
    fn nelder_mead_minimises_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], 0.5, 5000, 1e-10);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn weibull_fit_satisfies_closed_form_conditions() {
        let (spec, path) = weibull_path(1, 1000);
        let fit = fit(&spec, &path).unwrap();
        let (a, b) = (fit.theta_hat[0], fit.theta_hat[1]);
        let (t0, horizon, n) = (50.0f64, 50.0f64, 1000.0);
        let times: Vec<f64> = path.event_times().collect();
        let nn = times.len() as f64;
        let inner: f64 = times.iter().map(|t| (t0 + t).powf(b)).sum::<f64>()
            + (n - nn) * (t0 + horizon).powf(b)
            - n * t0.powf(b);
        let a_closed = (inner / nn).powf(1.0 / b);
        assert!((a - a_closed).abs() / a < 1e-12);
        let u = |t: f64| (t0 + t) / a;
        let second = nn / b + n * u(0.0).powf(b) * u(0.0).ln()
            + times
                .iter()
                .map(|&t| (1.0 - u(t).powf(b)) * u(t).ln())
                .sum::<f64>()
            - (n - nn) * u(horizon).powf(b) * u(horizon).ln();
        assert!(second.abs() < 1e-8 * n, "residual {second}");
    }

    #[test]
    fn weibull_fit_beats_grid_oracle() {
        let (spec, path) = weibull_path(4, 120);
        let fit = fit(&spec, &path).unwrap();
        let (a_hat, b_hat) = (fit.theta_hat[0], fit.theta_hat[1]);
        let (a_lo, a_hi, b_lo, b_hi) = (70.0, 100.0, 4.0, 16.0);
        let cells = 200;
        let (da, db) = ((a_hi - a_lo) / cells as f64, (b_hi - b_lo) / cells as f64);
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..=cells {
            for j in 0..=cells {
                let a = a_lo + da * i as f64;
                let b = b_lo + db * j as f64;
                let ll = loglik_raw(&spec, &[a, b], &path);
                if ll > best.0 {
                    best = (ll, a, b);
                }
            }
        }
        assert!((best.1 - a_hat).abs() <= da, "{} vs {a_hat}", best.1);
        assert!((best.2 - b_hat).abs() <= db, "{} vs {b_hat}", best.2);
        assert!(fit.loglik >= best.0 - 1e-9);
    }

    #[test]
    fn gompertz_fit_satisfies_closed_form_conditions() {
        let spec = ModelSpec::aalen_gompertz(50.0, 50.0).unwrap();
        let path = simulate_path(&spec, &th(&[0.003, 0.073]), 1788, 50.0, 2).unwrap();
        let fit = fit(&spec, &path).unwrap();
        let (a, b) = (fit.theta_hat[0], fit.theta_hat[1]);
        let (t0, horizon, n) = (50.0f64, 50.0f64, 1788.0);
        let times: Vec<f64> = path.event_times().collect();
        let nn = times.len() as f64;
        let d: f64 = times.iter().map(|t| (b * (t0 + t)).exp()).sum::<f64>()
            + (n - nn) * (b * (t0 + horizon)).exp()
            - n * (b * t0).exp();
        assert!((a - nn / d).abs() / a < 1e-10);
        let second = nn / b + a * t0 * (b * t0).exp() * nn + times.iter().map(|t| t0 + t).sum::<f64>()
            - a * times.iter().map(|t| (t0 + t) * (b * (t0 + t)).exp()).sum::<f64>()
            + (n - nn) * a * (b * t0).exp() * (t0 - (t0 + horizon) * (b * horizon).exp());
        assert!(second.abs() < 1e-8 * n, "residual {second}");
        assert!((b - 0.073).abs() < 0.01, "b = {b}");
    }

    #[test]
    fn censored_weibull_fit_satisfies_closed_form_conditions() {
        let cens = models::Censoring {
            probability: 0.4,
            rate: 1.0 / 15.0,
        };
        let spec = ModelSpec::aalen_weibull_censored(50.0, 50.0, cens).unwrap();
        let path = simulate_path(&spec, &th(&[86.0, 9.0]), 1000, 50.0, 3).unwrap();
        assert!(path.has_censoring());
        let fit = fit(&spec, &path).unwrap();
        let (a, b) = (fit.theta_hat[0], fit.theta_hat[1]);
        let (t0, horizon, n) = (50.0f64, 50.0f64, 1000.0);
        let nn = path.n_events() as f64;
        let all = path.times();
        let nt = all.len() as f64;
        let inner: f64 = all.iter().map(|t| (t0 + t).powf(b)).sum::<f64>()
            + (n - nt) * (t0 + horizon).powf(b)
            - n * t0.powf(b);
        assert!((a - (inner / nn).powf(1.0 / b)).abs() / a < 1e-12);
        let u = |t: f64| (t0 + t) / a;
        let second = nn / b + n * u(0.0).powf(b) * u(0.0).ln()
            + all
                .iter()
                .zip(path.status())
                .map(|(&t, &d)| (if d { 1.0 } else { 0.0 } - u(t).powf(b)) * u(t).ln())
                .sum::<f64>()
            - (n - nt) * u(horizon).powf(b) * u(horizon).ln();
        assert!(second.abs() < 1e-8 * n, "residual {second}");
    }

    #[test]
    fn jm_fit_satisfies_closed_form_conditions_and_scales_with_n() {
        let spec = ModelSpec::jelinski_moranda(1.0).unwrap();
        let path = simulate_path(&spec, &th(&[1.0, 0.1]), 10_000, 1.0, 9).unwrap();
        let fit1 = fit(&spec, &path).unwrap();
        let (theta, p) = (fit1.theta_hat[0], fit1.theta_hat[1]);
        let times: Vec<f64> = path.event_times().collect();
        let nn = times.len();
        let np = 10_000.0 * p;
        let theta_closed = nn as f64 / (times.iter().sum::<f64>() + (np - nn as f64));
        assert!((theta - theta_closed).abs() < 1e-10);
        let second: f64 = (1..=nn).map(|i| 1.0 / (np - i as f64 + 1.0)).sum::<f64>() - theta;
        assert!(second.abs() < 1e-8 * 10_000.0);
        let fit2 = fit(&spec, &path.with_population(100_000).unwrap()).unwrap();
        assert!((fit2.theta_hat[0] - theta).abs() < 1e-10);
        assert!((fit2.theta_hat[1] * 10.0 - p).abs() < 1e-10);
    }

    #[test]
    fn littlewood_fit_is_n_equivariant() {
        let spec = ModelSpec::littlewood(1.0).unwrap();
        let path = simulate_path(&spec, &th(&[4.0, 1.0, 0.1]), 10_000, 1.0, 12).unwrap();
        let f1 = fit(&spec, &path).unwrap();
        let f2 = fit(&spec, &path.with_population(100_000).unwrap()).unwrap();
        assert_eq!(f1.theta_hat[0], f2.theta_hat[0]);
        assert_eq!(f1.theta_hat[1], f2.theta_hat[1]);
        assert!((f1.theta_hat[2] - 10.0 * f2.theta_hat[2]).abs() < 1e-14);
        // profile maximiser beats random admissible probes
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let probe = [
                rng.random_range(0.5..10.0),
                rng.random_range(0.05..5.0),
                rng.random_range(0.05..0.3),
            ];
            assert!(f1.loglik >= loglik_raw(&spec, &probe, &path));
        }
    }

    #[test]
    fn cure_fit_recovers_parameters_roughly() {
        let spec = ModelSpec::mixture_cure(1.0).unwrap();
        let truth = th(&[0.8, 1.2, 0.75]);
        let path = simulate_path(&spec, &truth, 1000, 1.0, 21).unwrap();
        let f = fit(&spec, &path).unwrap();
        assert!(f.converged);
        let t = f.theta_hat.as_slice();
        assert!((t[0] - 0.8).abs() < 0.3 && (t[1] - 1.2).abs() < 0.3 && (t[2] - 0.75).abs() < 0.15, "{t:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let probe = [
                rng.random_range(0.2..3.0),
                rng.random_range(0.3..3.0),
                rng.random_range(0.5..0.99),
            ];
            assert!(f.loglik >= loglik_raw(&spec, &probe, &path));
        }
    }

    #[test]
    fn target_fit_on_symmetric_data() {
        let nn = 99;
        let times: Vec<f64> = (1..=nn).map(|j| j as f64 / (nn + 1) as f64).collect();
        let path = ObservedPath::from_events(times, 120, 1.0).unwrap();
        let f = fit_target(&path, 2).unwrap();
        assert!(f.converged);
        assert!(f.theta_hat[1].abs() < 1e-6);
        assert!((f.theta_hat[0] - nn as f64 / 120.0).abs() < 1e-12);
    }

    #[test]
    fn target_fit_first_coordinate_is_event_share() {
        let spec = ModelSpec::poisson_legendre(3, 2.0).unwrap();
        for seed in 0..5 {
            let path = simulate_path(&spec, &spec.target_null(), 1000, 2.0, seed).unwrap();
            let f = fit_target(&path, 3).unwrap();
            assert!(f.converged, "grad {}", f.diagnostic);
            assert!(f.diagnostic < 1e-9);
            let share = path.len() as f64 / 1000.0;
            assert!((f.theta_hat[0] - share).abs() < 1e-12);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let best = loglik_raw(&spec, f.theta_hat.as_slice(), &path);
            assert!((best - f.loglik).abs() < 1e-8 * best.abs());
            for _ in 0..100 {
                let probe: Vec<f64> = f
                    .theta_hat
                    .as_slice()
                    .iter()
                    .map(|v| v + rng.random_range(-0.1..0.1))
                    .collect();
                if models::legendre_positive(&probe) {
                    assert!(best >= loglik_raw(&spec, &probe, &path));
                }
            }
        }
    }

    #[test]
    fn weibull_estimates_are_consistent() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for seed in 0..50 {
            let (spec, path) = weibull_path(1000 + seed, 1000);
            let f = fit(&spec, &path).unwrap();
            a.push(f.theta_hat[0]);
            b.push(f.theta_hat[1]);
        }
        for (xs, truth) in [(a, 86.0), (b, 9.0)] {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 49.0).sqrt();
            assert!((m - truth).abs() < 3.0 * sd / 50f64.sqrt(), "mean {m} vs {truth}");
        }
    }

    #[test]
    fn too_few_events_is_not_identifiable() {
        let spec = ModelSpec::aalen_weibull(0.0, 1.0).unwrap();
        let path = ObservedPath::from_events(vec![0.5], 10, 1.0).unwrap();
        assert!(matches!(fit(&spec, &path), Err(Error::NonIdentifiable(_))));
    }

    #[test]
    fn censored_path_needs_censored_family() {
        let spec = ModelSpec::aalen_weibull(0.0, 1.0).unwrap();
        let path = ObservedPath::new(vec![0.2, 0.5], vec![true, false], 10, 1.0).unwrap();
        assert!(matches!(fit(&spec, &path), Err(Error::Path(_))));
    }
}
