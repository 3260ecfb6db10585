//! Parametric conditional-intensity families.
//!
//! Every family except the Legendre target is of the multiplicative form
//! `λ(t) = ς_θ(t) · (base − N(t−))`, where `ς_θ` is the hazard of an i.i.d.
//! waiting-time law and `base` is either the population size `n` (Aalen
//! families) or the susceptible count `n·p` (cure and fault-count families).
//! For the censored Aalen family the at-risk count also drops at censoring
//! times.
//!
//! The Legendre target family is `μ_τ(t) = (n/T) Σ_j τ_j p_j(t/T)`, with
//! `p_j` orthonormal on `[0, 1]` and `p_1 ≡ 1`; `τ₀ = (1, 0, …, 0)` is a
//! homogeneous Poisson process of rate `n/T`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legendre;
use crate::path::ObservedPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    AalenWeibull,
    AalenGompertz,
    AalenWeibullCensored,
    MixtureCure,
    JelinskiMoranda,
    Littlewood,
    PoissonLegendre,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::AalenWeibull,
        Family::AalenGompertz,
        Family::AalenWeibullCensored,
        Family::MixtureCure,
        Family::JelinskiMoranda,
        Family::Littlewood,
        Family::PoissonLegendre,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::AalenWeibull => "weibull",
            Family::AalenGompertz => "gompertz",
            Family::AalenWeibullCensored => "weibull-censored",
            Family::MixtureCure => "cure",
            Family::JelinskiMoranda => "jm",
            Family::Littlewood => "littlewood",
            Family::PoissonLegendre => "legendre",
        }
    }

    /// Fixed parameter dimension; `None` for the Legendre family.
    pub fn dimension(self) -> Option<usize> {
        match self {
            Family::AalenWeibull
            | Family::AalenGompertz
            | Family::AalenWeibullCensored
            | Family::JelinskiMoranda => Some(2),
            Family::MixtureCure | Family::Littlewood => Some(3),
            Family::PoissonLegendre => None,
        }
    }

    /// Whether the last parameter coordinate is the susceptible proportion `p`.
    pub fn has_proportion(self) -> bool {
        matches!(
            self,
            Family::MixtureCure | Family::JelinskiMoranda | Family::Littlewood
        )
    }

    pub fn param_names(self, m: usize) -> Vec<String> {
        let names: &[&str] = match self {
            Family::AalenWeibull | Family::AalenGompertz | Family::AalenWeibullCensored => {
                &["theta1", "theta2"]
            }
            Family::MixtureCure | Family::Littlewood => &["theta1", "theta2", "p"],
            Family::JelinskiMoranda => &["theta", "p"],
            Family::PoissonLegendre => {
                return (1..=m).map(|j| format!("tau{j}")).collect();
            }
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        let fam = match key.as_str() {
            "weibull" | "aalen-weibull" => Family::AalenWeibull,
            "gompertz" | "aalen-gompertz" => Family::AalenGompertz,
            "weibull-censored" | "aalen-weibull-censored" | "censored" => {
                Family::AalenWeibullCensored
            }
            "cure" | "mixture-cure" => Family::MixtureCure,
            "jm" | "jelinski-moranda" => Family::JelinskiMoranda,
            "littlewood" | "lw" => Family::Littlewood,
            "legendre" | "poisson-legendre" | "target" => Family::PoissonLegendre,
            _ => return Err(Error::Argument(format!("unknown model family '{s}'"))),
        };
        Ok(fam)
    }
}

/// Censoring law `C = I·Exp(rate) + (1 − I)·∞` with `P[I = 1] = probability`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Censoring {
    pub probability: f64,
    pub rate: f64,
}

impl Censoring {
    /// Censoring cdf `G(t) = p(1 − e^{−γt})`.
    pub fn cdf(&self, t: f64) -> f64 {
        -self.probability * (-self.rate * t).exp_m1()
    }
}

/// A member of the parametric family together with its fixed constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    family: Family,
    m: usize,
    t0: f64,
    horizon: f64,
    censoring: Option<Censoring>,
}

/// Point in a family's parameter space, coordinates in printing order
/// (`θ1, θ2[, p]` or `τ1..τm`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl ModelSpec {
    pub fn new(
        family: Family,
        m: usize,
        t0: f64,
        horizon: f64,
        censoring: Option<Censoring>,
    ) -> Result<Self> {
        if let Some(d) = family.dimension() {
            if m != d {
                return Err(Error::Argument(format!(
                    "family {family} has dimension {d}, got m = {m}"
                )));
            }
        } else if m == 0 {
            return Err(Error::Argument("the Legendre family needs m >= 1".into()));
        }
        if !(t0 >= 0.0 && t0.is_finite()) {
            return Err(Error::Argument(format!("t0 must be >= 0, got {t0}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Argument(format!("horizon must be > 0, got {horizon}")));
        }
        if let Some(c) = censoring {
            if !(0.0..=1.0).contains(&c.probability) || !(c.rate > 0.0) {
                return Err(Error::Argument(format!("invalid censoring law {c:?}")));
            }
        }
        Ok(Self {
            family,
            m,
            t0,
            horizon,
            censoring,
        })
    }

    pub fn aalen_weibull(t0: f64, horizon: f64) -> Result<Self> {
        Self::new(Family::AalenWeibull, 2, t0, horizon, None)
    }

    pub fn aalen_gompertz(t0: f64, horizon: f64) -> Result<Self> {
        Self::new(Family::AalenGompertz, 2, t0, horizon, None)
    }

    pub fn aalen_weibull_censored(t0: f64, horizon: f64, censoring: Censoring) -> Result<Self> {
        Self::new(Family::AalenWeibullCensored, 2, t0, horizon, Some(censoring))
    }

    pub fn mixture_cure(horizon: f64) -> Result<Self> {
        Self::new(Family::MixtureCure, 3, 0.0, horizon, None)
    }

    pub fn jelinski_moranda(horizon: f64) -> Result<Self> {
        Self::new(Family::JelinskiMoranda, 2, 0.0, horizon, None)
    }

    pub fn littlewood(horizon: f64) -> Result<Self> {
        Self::new(Family::Littlewood, 3, 0.0, horizon, None)
    }

    pub fn poisson_legendre(m: usize, horizon: f64) -> Result<Self> {
        Self::new(Family::PoissonLegendre, m, 0.0, horizon, None)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn censoring(&self) -> Option<Censoring> {
        self.censoring
    }

    /// Same family with a different observation horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.family, self.m, self.t0, horizon, self.censoring)
    }

    /// Whether at-risk counts drop at censoring times too.
    pub fn counts_censored(&self) -> bool {
        self.family == Family::AalenWeibullCensored
    }

    /// `τ₀ = (1, 0, …, 0)`.
    pub fn target_null(&self) -> ParamVector {
        let mut tau = vec![0.0; self.m];
        tau[0] = 1.0;
        ParamVector(tau)
    }

    /// Checks that `θ` lies in the family's open parameter region.
    pub fn check(&self, theta: &ParamVector) -> Result<()> {
        let th = theta.as_slice();
        if th.len() != self.m {
            return Err(Error::Domain(format!(
                "expected {} coordinates for {}, got {}",
                self.m,
                self.family,
                th.len()
            )));
        }
        if th.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite parameter {th:?}")));
        }
        match self.family {
            Family::PoissonLegendre => {
                if !legendre_positive(th) {
                    return Err(Error::Domain(format!(
                        "target intensity is not positive on the quadrature grid for tau = {th:?}"
                    )));
                }
            }
            fam => {
                let (scales, p) = if fam.has_proportion() {
                    (&th[..th.len() - 1], Some(th[th.len() - 1]))
                } else {
                    (th, None)
                };
                if scales.iter().any(|&v| v <= 0.0) {
                    return Err(Error::Domain(format!(
                        "{fam} needs positive scale/shape parameters, got {th:?}"
                    )));
                }
                if let Some(p) = p {
                    if !(p > 0.0 && p < 1.0) {
                        return Err(Error::Domain(format!("proportion p = {p} not in (0, 1)")));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_time(&self, t: f64, horizon: f64) -> Result<()> {
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::Range { t, horizon });
        }
        Ok(())
    }

    fn lifetime_law(&self) -> Result<()> {
        if self.family == Family::PoissonLegendre {
            Err(Error::UnsupportedFamily("legendre"))
        } else {
            Ok(())
        }
    }

    /// Hazard `ς_θ(t)` of the waiting-time law (no admissibility check).
    pub(crate) fn hazard_raw(&self, th: &[f64], t: f64) -> f64 {
        match self.family {
            Family::AalenWeibull | Family::AalenWeibullCensored => {
                let (a, b) = (th[0], th[1]);
                (b / a) * ((self.t0 + t) / a).powf(b - 1.0)
            }
            Family::MixtureCure => {
                let (a, b) = (th[0], th[1]);
                (b / a) * (t / a).powf(b - 1.0)
            }
            Family::AalenGompertz => th[0] * th[1] * (th[1] * (self.t0 + t)).exp(),
            Family::JelinskiMoranda => th[0],
            Family::Littlewood => th[0] / (1.0 + th[1] * t),
            Family::PoissonLegendre => f64::NAN,
        }
    }

    /// Cumulative hazard `H_θ(t) = −log(1 − F_θ(t))`.
    pub(crate) fn cum_hazard_raw(&self, th: &[f64], t: f64) -> f64 {
        match self.family {
            Family::AalenWeibull | Family::AalenWeibullCensored => {
                let (a, b) = (th[0], th[1]);
                ((self.t0 + t) / a).powf(b) - (self.t0 / a).powf(b)
            }
            Family::MixtureCure => (t / th[0]).powf(th[1]),
            Family::AalenGompertz => th[0] * (th[1] * self.t0).exp() * (th[1] * t).exp_m1(),
            Family::JelinskiMoranda => th[0] * t,
            Family::Littlewood => (th[0] / th[1]) * (th[1] * t).ln_1p(),
            Family::PoissonLegendre => f64::NAN,
        }
    }

    /// Inverse of the cumulative hazard: the `t` with `H_θ(t) = h`.
    pub(crate) fn inverse_cum_hazard_raw(&self, th: &[f64], h: f64) -> f64 {
        match self.family {
            Family::AalenWeibull | Family::AalenWeibullCensored => {
                let (a, b) = (th[0], th[1]);
                a * ((self.t0 / a).powf(b) + h).powf(1.0 / b) - self.t0
            }
            Family::MixtureCure => th[0] * h.powf(1.0 / th[1]),
            Family::AalenGompertz => (h / (th[0] * (th[1] * self.t0).exp())).ln_1p() / th[1],
            Family::JelinskiMoranda => h / th[0],
            Family::Littlewood => (h * th[1] / th[0]).exp_m1() / th[1],
            Family::PoissonLegendre => f64::NAN,
        }
    }

    pub fn hazard(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        self.lifetime_law()?;
        self.check(theta)?;
        Ok(self.hazard_raw(theta.as_slice(), t))
    }

    pub fn cumulative_hazard(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        self.lifetime_law()?;
        self.check(theta)?;
        Ok(self.cum_hazard_raw(theta.as_slice(), t))
    }

    pub fn cdf(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        Ok(-(-self.cumulative_hazard(theta, t)?).exp_m1())
    }

    pub fn density(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        let h = self.hazard(theta, t)?;
        Ok(h * (-self.cum_hazard_raw(theta.as_slice(), t)).exp())
    }

    /// `(ς_θ(t), F_θ(t))` of the waiting-time law.
    pub fn hazard_cdf(&self, theta: &ParamVector, t: f64) -> Result<(f64, f64)> {
        if !(t >= 0.0) {
            return Err(Error::Range {
                t,
                horizon: f64::INFINITY,
            });
        }
        Ok((self.hazard(theta, t)?, self.cdf(theta, t)?))
    }

    /// Initial at-risk count: `n` for Aalen families, `n·p` for cure/fault families.
    pub fn risk_base(&self, theta: &[f64], n: usize) -> f64 {
        if self.family.has_proportion() {
            n as f64 * theta[theta.len() - 1]
        } else {
            n as f64
        }
    }

    /// Number of path entries that have left the risk set strictly before `t`.
    pub(crate) fn removed_before(&self, path: &ObservedPath, t: f64) -> usize {
        if self.counts_censored() {
            path.count_before(t)
        } else {
            path.events_before(t)
        }
    }

    /// Target intensity `μ_τ(t)` for population `n` on `[0, horizon]`.
    pub(crate) fn legendre_intensity(&self, tau: &[f64], n: usize, t: f64) -> f64 {
        let mut p = vec![0.0; tau.len()];
        legendre::orthonormal(t / self.horizon, &mut p);
        let s: f64 = tau.iter().zip(&p).map(|(a, b)| a * b).sum();
        n as f64 / self.horizon * s
    }

    /// Conditional intensity `λ_{n,θ}(t)` using the strict past `N(t−)`.
    pub fn conditional_intensity(
        &self,
        theta: &ParamVector,
        path: &ObservedPath,
        t: f64,
    ) -> Result<f64> {
        self.check(theta)?;
        self.check_time(t, path.horizon())?;
        let th = theta.as_slice();
        if self.family == Family::PoissonLegendre {
            return Ok(self.legendre_intensity(th, path.n(), t));
        }
        let at_risk = self.risk_base(th, path.n()) - self.removed_before(path, t) as f64;
        Ok(self.hazard_raw(th, t) * at_risk.max(0.0))
    }

    /// Compensator `Λ(t) = ∫_0^t λ_{n,θ}(s) ds` in closed form.
    pub fn compensator(&self, theta: &ParamVector, path: &ObservedPath, t: f64) -> Result<f64> {
        self.check(theta)?;
        self.check_time(t, path.horizon())?;
        Ok(self.compensator_on_grid(theta.as_slice(), path, &[t])[0])
    }

    /// Closed-form compensator at each point of an ascending grid.
    pub(crate) fn compensator_on_grid(
        &self,
        th: &[f64],
        path: &ObservedPath,
        grid: &[f64],
    ) -> Vec<f64> {
        if self.family == Family::PoissonLegendre {
            let n = path.n() as f64;
            let mut prim = vec![0.0; th.len()];
            return grid
                .iter()
                .map(|&t| {
                    legendre::orthonormal_integral(t / self.horizon, &mut prim);
                    n * th.iter().zip(&prim).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
        }
        // Λ(t) = base·H(t) − Σ_{T_i < t} (H(t) − H(T_i)) over removed entries.
        let base = self.risk_base(th, path.n());
        let removed: Vec<f64> = if self.counts_censored() {
            path.times().to_vec()
        } else {
            path.event_times().collect()
        };
        let mut out = Vec::with_capacity(grid.len());
        let (mut k, mut sum_h) = (0usize, 0.0);
        for &t in grid {
            while k < removed.len() && removed[k] < t {
                sum_h += self.cum_hazard_raw(th, removed[k]);
                k += 1;
            }
            let h = self.cum_hazard_raw(th, t);
            out.push(base * h - (k as f64 * h - sum_h));
        }
        out
    }

    /// Score direction `α_θ(t)` in closed form for each family.
    pub fn alpha(&self, theta: &ParamVector, t: f64) -> Result<Vec<f64>> {
        self.check(theta)?;
        if !(t >= 0.0) {
            return Err(Error::Range {
                t,
                horizon: self.horizon,
            });
        }
        let mut out = vec![0.0; self.m];
        self.alpha_into(theta.as_slice(), t, &mut out);
        if out.iter().any(|v| v.is_infinite()) && self.family == Family::MixtureCure {
            return Err(Error::Overflow(format!(
                "1/(p(1-F(t))) diverges at t = {t}"
            )));
        }
        Ok(out)
    }

    pub(crate) fn alpha_into(&self, th: &[f64], t: f64, out: &mut [f64]) {
        match self.family {
            Family::AalenWeibull | Family::AalenWeibullCensored => {
                out[0] = -th[1] / th[0];
                out[1] = 1.0 / th[1] + ((self.t0 + t) / th[0]).ln();
            }
            Family::AalenGompertz => {
                out[0] = 1.0 / th[0];
                out[1] = 1.0 / th[1] + self.t0 + t;
            }
            Family::MixtureCure => {
                let (a, b, p) = (th[0], th[1], th[2]);
                out[0] = -b / a;
                out[1] = 1.0 / b + (t / a).ln();
                // 1 − F = exp(−H)
                out[2] = (self.cum_hazard_raw(th, t)).exp() / p;
            }
            Family::JelinskiMoranda => {
                out[0] = 1.0 / th[0];
                out[1] = (th[0] * t).exp() / th[1];
            }
            Family::Littlewood => {
                let (a, b, p) = (th[0], th[1], th[2]);
                out[0] = 1.0 / a;
                out[1] = -t / (1.0 + b * t);
                out[2] = ((a / b) * (b * t).ln_1p()).exp() / p;
            }
            Family::PoissonLegendre => {
                legendre::orthonormal(t / self.horizon, out);
                let mu: f64 = th.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                for v in out.iter_mut() {
                    *v /= mu;
                }
            }
        }
    }

    /// Limit density `β_θ(t)`; for the censored family, the empirical
    /// plug-in `λ_{n,θ}(t)/n` built from `path`.
    pub fn beta(&self, theta: &ParamVector, t: f64, path: Option<&ObservedPath>) -> Result<f64> {
        self.check(theta)?;
        if self.family == Family::AalenWeibullCensored && path.is_none() {
            return Err(Error::Argument(
                "the censored family uses the empirical density and needs the observed path"
                    .into(),
            ));
        }
        Ok(self.beta_raw(theta.as_slice(), t, path))
    }

    pub(crate) fn beta_raw(&self, th: &[f64], t: f64, path: Option<&ObservedPath>) -> f64 {
        match self.family {
            Family::AalenWeibullCensored => {
                let path = path.expect("censored beta requires a path");
                let at_risk = path.n() as f64 - path.count_before(t) as f64;
                self.hazard_raw(th, t) * at_risk / path.n() as f64
            }
            Family::PoissonLegendre => {
                let mut p = vec![0.0; th.len()];
                legendre::orthonormal(t / self.horizon, &mut p);
                th.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() / self.horizon
            }
            fam => {
                let f = self.hazard_raw(th, t) * (-self.cum_hazard_raw(th, t)).exp();
                if fam.has_proportion() {
                    th[th.len() - 1] * f
                } else {
                    f
                }
            }
        }
    }
}

/// Points on which positivity of the Legendre intensity is enforced: the
/// default quadrature nodes (256 panels × 8) plus both endpoints.
pub(crate) fn legendre_positive(tau: &[f64]) -> bool {
    use std::sync::OnceLock;
    static POINTS: OnceLock<Vec<f64>> = OnceLock::new();
    let points = POINTS.get_or_init(|| {
        let (x, _) = legendre::gauss_legendre(8);
        let panels = 256;
        let mut pts = vec![0.0, 1.0];
        for k in 0..panels {
            let (a, b) = (k as f64 / panels as f64, (k + 1) as f64 / panels as f64);
            pts.extend(x.iter().map(|xi| 0.5 * (a + b) + 0.5 * (b - a) * xi));
        }
        pts
    });
    let mut p = vec![0.0; tau.len()];
    points.iter().all(|&s| {
        legendre::orthonormal(s, &mut p);
        tau.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() > 0.0
    })
}
