//! Path simulation for every family and for piecewise-constant hazards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Family, ModelSpec, ParamVector};
use crate::path::ObservedPath;

/// How many susceptibles the cure and fault-count families start with.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Susceptibles {
    /// `⌊n p⌋`, fixed.
    #[default]
    Floor,
    /// `Binomial(n, p)`.
    Binomial,
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn simulate_path(
    spec: &ModelSpec,
    theta: &ParamVector,
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<ObservedPath> {
    simulate_path_with(spec, theta, n, horizon, seed, Susceptibles::Floor)
}

pub fn simulate_path_with(
    spec: &ModelSpec,
    theta: &ParamVector,
    n: usize,
    horizon: f64,
    seed: u64,
    susceptibles: Susceptibles,
) -> Result<ObservedPath> {
    spec.check(theta)?;
    if n == 0 {
        return Err(Error::Argument("population size must be at least 1".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Argument(format!("horizon must be > 0, got {horizon}")));
    }
    let th = theta.as_slice();
    let mut rng = rng_from_seed(seed);
    let mut draws: Vec<(f64, bool)> = Vec::new();
    match spec.family() {
        Family::PoissonLegendre => {
            if th[0] != 1.0 || th[1..].iter().any(|&v| v != 0.0) {
                return Err(Error::Argument(
                    "only the homogeneous target tau0 = (1, 0, ..) can be simulated".into(),
                ));
            }
            let count = Poisson::new(n as f64)
                .map_err(|e| Error::Argument(format!("poisson rate: {e}")))?
                .sample(&mut rng) as usize;
            draws.extend((0..count).map(|_| (horizon * (1.0 - rng.random::<f64>()), true)));
        }
        Family::AalenWeibullCensored => {
            let cens = spec
                .censoring()
                .ok_or_else(|| Error::Argument("censored family without censoring law".into()))?;
            for _ in 0..n {
                let e: f64 = Exp1.sample(&mut rng);
                let life = spec.inverse_cum_hazard_raw(th, e);
                let censor = if rng.random::<f64>() < cens.probability {
                    let c: f64 = Exp1.sample(&mut rng);
                    c / cens.rate
                } else {
                    f64::INFINITY
                };
                let (x, event) = if life <= censor {
                    (life, true)
                } else {
                    (censor, false)
                };
                if x <= horizon {
                    draws.push((x, event));
                }
            }
        }
        fam => {
            let count = if fam.has_proportion() {
                let p = th[th.len() - 1];
                match susceptibles {
                    Susceptibles::Floor => (n as f64 * p).floor() as usize,
                    Susceptibles::Binomial => Binomial::new(n as u64, p)
                        .map_err(|e| Error::Argument(format!("binomial: {e}")))?
                        .sample(&mut rng) as usize,
                }
            } else {
                n
            };
            for _ in 0..count {
                let e: f64 = Exp1.sample(&mut rng);
                let t = spec.inverse_cum_hazard_raw(th, e);
                if t <= horizon {
                    draws.push((t, true));
                }
            }
        }
    }
    let (times, status) = strictly_increasing(draws, horizon);
    let path = if spec.family() == Family::PoissonLegendre {
        ObservedPath::poisson(times, n, horizon)
    } else {
        ObservedPath::new(times, status, n, horizon)
    };
    path.map(|p| p.with_meta(format!("simulated {} seed={seed}", spec.family())))
}

/// Sorts draws and nudges exact ties (and zeros) up by one ulp; anything
/// pushed beyond `horizon` is discarded.
fn strictly_increasing(mut draws: Vec<(f64, bool)>, horizon: f64) -> (Vec<f64>, Vec<bool>) {
    draws.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut times = Vec::with_capacity(draws.len());
    let mut status = Vec::with_capacity(draws.len());
    let mut prev = 0.0f64;
    for (t, s) in draws {
        let t = if t <= prev { prev.next_up() } else { t };
        if t > horizon {
            break;
        }
        times.push(t);
        status.push(s);
        prev = t;
    }
    (times, status)
}

/// Piecewise-constant hazard: `rates[k]` applies on
/// `[breakpoints[k], breakpoints[k+1])`, with time measured from
/// `breakpoints[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseHazard {
    breakpoints: Vec<f64>,
    rates: Vec<f64>,
}

impl PiecewiseHazard {
    pub fn new(breakpoints: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != rates.len() + 1 || rates.is_empty() {
            return Err(Error::Argument(format!(
                "{} breakpoints for {} rates; need one more breakpoint than rates",
                breakpoints.len(),
                rates.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("breakpoints must increase strictly".into()));
        }
        if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::Argument("rates must be finite and nonnegative".into()));
        }
        Ok(Self { breakpoints, rates })
    }

    /// Unit-width intervals starting at `start` (e.g. annual death rates).
    pub fn annual(start: f64, rates: Vec<f64>) -> Result<Self> {
        let breakpoints = (0..=rates.len()).map(|k| start + k as f64).collect();
        Self::new(breakpoints, rates)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Length of the covered window, measured from the first breakpoint.
    pub fn span(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1] - self.breakpoints[0]
    }

    pub fn cumulative(&self, t: f64) -> f64 {
        let origin = self.breakpoints[0];
        let mut acc = 0.0;
        for (k, &r) in self.rates.iter().enumerate() {
            let (a, b) = (self.breakpoints[k] - origin, self.breakpoints[k + 1] - origin);
            if t <= a {
                break;
            }
            acc += r * (t.min(b) - a);
        }
        acc
    }

    /// `F(t) = 1 − exp(−∫_0^t ς)`, with `F = 1` past the last breakpoint.
    pub fn cdf(&self, t: f64) -> f64 {
        if t >= self.span() {
            1.0
        } else {
            -(-self.cumulative(t)).exp_m1()
        }
    }

    /// The `t` with cumulative hazard `h`, or the end of the table if `h`
    /// is never reached.
    pub fn invert(&self, h: f64) -> f64 {
        let origin = self.breakpoints[0];
        let mut acc = 0.0;
        for (k, &r) in self.rates.iter().enumerate() {
            let (a, b) = (self.breakpoints[k] - origin, self.breakpoints[k + 1] - origin);
            let piece = r * (b - a);
            if r > 0.0 && acc + piece >= h {
                return a + (h - acc) / r;
            }
            acc += piece;
        }
        self.span()
    }
}

pub fn simulate_piecewise(
    hazard: &PiecewiseHazard,
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<ObservedPath> {
    if hazard.span() < horizon {
        return Err(Error::Coverage {
            horizon,
            reason: format!("table ends {} after its first breakpoint", hazard.span()),
        });
    }
    let mut rng = rng_from_seed(seed);
    let draws: Vec<(f64, bool)> = (0..n)
        .map(|_| {
            let e: f64 = Exp1.sample(&mut rng);
            (hazard.invert(e), true)
        })
        .filter(|&(t, _)| t <= horizon)
        .collect();
    let (times, status) = strictly_increasing(draws, horizon);
    ObservedPath::new(times, status, n, horizon)
        .map(|p| p.with_meta(format!("piecewise hazard seed={seed}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Censoring;

    fn mean_sd(xs: &[f64]) -> (f64, f64) {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        (m, v.sqrt())
    }

    #[test]
    fn reproducible_bits() {
        let spec = ModelSpec::aalen_weibull(50.0, 50.0).unwrap();
        let th = ParamVector::new(vec![86.0, 9.0]);
        let a = simulate_path(&spec, &th, 500, 50.0, 99).unwrap();
        let b = simulate_path(&spec, &th, 500, 50.0, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&spec, &th, 500, 50.0, 100).unwrap();
        assert_ne!(a.times(), c.times());
    }

    #[test]
    fn poisson_target_count_has_mean_n() {
        let spec = ModelSpec::poisson_legendre(2, 1.0).unwrap();
        let counts: Vec<f64> = (0..200)
            .map(|s| simulate_path(&spec, &spec.target_null(), 1000, 1.0, s).unwrap().len() as f64)
            .collect();
        let (m, _) = mean_sd(&counts);
        // Poisson(1000): sd of the mean over 200 seeds is sqrt(1000/200)
        assert!((m - 1000.0).abs() < 3.0 * (1000.0f64 / 200.0).sqrt(), "mean {m}");
    }

    #[test]
    fn target_off_null_is_refused() {
        let spec = ModelSpec::poisson_legendre(2, 1.0).unwrap();
        let tau = ParamVector::new(vec![1.0, 0.1]);
        assert!(simulate_path(&spec, &tau, 100, 1.0, 0).is_err());
    }

    #[test]
    fn jm_event_count_mean() {
        let spec = ModelSpec::jelinski_moranda(1.0).unwrap();
        let th = ParamVector::new(vec![1.0, 0.1]);
        let counts: Vec<f64> = (0..200)
            .map(|s| simulate_path(&spec, &th, 10_000, 1.0, s).unwrap().len() as f64)
            .collect();
        let (m, _) = mean_sd(&counts);
        let q = 1.0 - (-1.0f64).exp();
        let expect = 1000.0 * q;
        let se = (1000.0 * q * (1.0 - q) / 200.0).sqrt();
        assert!((m - expect).abs() < 3.0 * se, "mean {m} vs {expect}");
    }

    #[test]
    fn binomial_susceptibles_option() {
        let spec = ModelSpec::jelinski_moranda(1.0).unwrap();
        let th = ParamVector::new(vec![50.0, 0.1]);
        // with θ = 50 essentially every susceptible fails by T = 1
        let fixed = simulate_path(&spec, &th, 10_000, 1.0, 5).unwrap();
        assert_eq!(fixed.len(), 1000);
        let counts: Vec<usize> = (0..20)
            .map(|s| {
                simulate_path_with(&spec, &th, 10_000, 1.0, s, Susceptibles::Binomial)
                    .unwrap()
                    .len()
            })
            .collect();
        assert!(counts.iter().any(|&c| c != 1000));
    }

    #[test]
    fn only_censored_family_emits_censoring() {
        let cens = Censoring {
            probability: 0.4,
            rate: 1.0 / 15.0,
        };
        let spec = ModelSpec::aalen_weibull_censored(50.0, 50.0, cens).unwrap();
        let th = ParamVector::new(vec![86.0, 9.0]);
        let p = simulate_path(&spec, &th, 1000, 50.0, 1).unwrap();
        assert!(p.has_censoring());
        let spec = ModelSpec::aalen_weibull(50.0, 50.0).unwrap();
        let p = simulate_path(&spec, &th, 1000, 50.0, 1).unwrap();
        assert!(!p.has_censoring());
        assert!(p.times().iter().all(|&t| t > 0.0 && t <= 50.0));
    }

    #[test]
    fn ties_are_broken_upward() {
        let (t, s) = strictly_increasing(vec![(0.5, true), (0.5, false), (0.0, true)], 1.0);
        assert_eq!(t.len(), 3);
        assert!(t[0] > 0.0 && t[1] == 0.5 && t[2] > 0.5);
        assert_eq!(s, vec![true, true, false]);
    }

    #[test]
    fn single_interval_is_exponential() {
        let h = PiecewiseHazard::new(vec![0.0, 1e6], vec![0.5]).unwrap();
        let p = simulate_piecewise(&h, 100_000, 1e6, 3).unwrap();
        let (m, sd) = mean_sd(p.times());
        assert_eq!(p.len(), 100_000);
        assert!((m - 2.0).abs() < 3.0 * sd / (1e5f64).sqrt(), "mean {m}");
    }

    #[test]
    fn zero_rate_interval_has_no_events() {
        let h = PiecewiseHazard::new(vec![0.0, 1.0, 10.0], vec![0.0, 2.0]).unwrap();
        let p = simulate_piecewise(&h, 5000, 10.0, 8).unwrap();
        assert!(p.times().iter().all(|&t| t >= 1.0));
    }

    #[test]
    fn coverage_is_enforced() {
        let h = PiecewiseHazard::annual(50.0, vec![0.01; 10]).unwrap();
        assert!(matches!(
            simulate_piecewise(&h, 10, 20.0, 0),
            Err(Error::Coverage { .. })
        ));
    }

    #[test]
    fn piecewise_cdf_and_inverse_agree() {
        let rates: Vec<f64> = (0..52).map(|x| 0.006 * (0.09 * x as f64).exp()).collect();
        let h = PiecewiseHazard::annual(50.0, rates).unwrap();
        for &t in &[0.0, 0.5, 3.2, 17.0, 51.99] {
            let back = h.invert(h.cumulative(t));
            assert!((back - t).abs() < 1e-10);
        }
        assert_eq!(h.cdf(52.0), 1.0);
    }
}
