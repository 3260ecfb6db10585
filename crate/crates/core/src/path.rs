use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single observed path of a counting process on `[0, horizon]`.
///
/// `times` holds every recorded time (events and, for censored data,
/// censoring times), strictly increasing in `(0, horizon]`. `status[i]` is
/// `true` for an event and `false` for a right-censored observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedPath {
    times: Vec<f64>,
    status: Vec<bool>,
    n: usize,
    horizon: f64,
    #[serde(default)]
    meta: String,
}

impl ObservedPath {
    pub fn new(times: Vec<f64>, status: Vec<bool>, n: usize, horizon: f64) -> Result<Self> {
        let path = Self::unchecked_population(times, status, n, horizon)?;
        if path.n_events() > n {
            return Err(Error::Path(format!("more events than the population size {n}")));
        }
        Ok(path)
    }

    /// Path of a Poisson-type process where `n` scales the intensity rather
    /// than bounding the number of events.
    pub fn poisson(times: Vec<f64>, n: usize, horizon: f64) -> Result<Self> {
        let status = vec![true; times.len()];
        Self::unchecked_population(times, status, n, horizon)
    }

    fn unchecked_population(
        times: Vec<f64>,
        status: Vec<bool>,
        n: usize,
        horizon: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Path(format!("horizon must be positive, got {horizon}")));
        }
        if times.len() != status.len() {
            return Err(Error::Path(format!(
                "{} times but {} status flags",
                times.len(),
                status.len()
            )));
        }
        if n == 0 {
            return Err(Error::Path("population size must be at least 1".into()));
        }
        let mut prev = 0.0;
        for (i, &t) in times.iter().enumerate() {
            if !(t > prev) || t > horizon || !t.is_finite() {
                return Err(Error::Path(format!(
                    "time #{} = {t} breaks strict increase inside (0, {horizon}]",
                    i + 1
                )));
            }
            prev = t;
        }
        Ok(Self {
            times,
            status,
            n,
            horizon,
            meta: String::new(),
        })
    }

    /// Path where every time is an event.
    pub fn from_events(times: Vec<f64>, n: usize, horizon: f64) -> Result<Self> {
        let status = vec![true; times.len()];
        Self::new(times, status, n, horizon)
    }

    pub fn with_meta(mut self, meta: impl Into<String>) -> Self {
        self.meta = meta.into();
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn meta(&self) -> &str {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn event_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.times
            .iter()
            .zip(&self.status)
            .filter_map(|(&t, &s)| s.then_some(t))
    }

    /// `N_n(T)`: number of status-1 entries.
    pub fn n_events(&self) -> usize {
        self.status.iter().filter(|&&s| s).count()
    }

    pub fn has_censoring(&self) -> bool {
        self.status.iter().any(|&s| !s)
    }

    /// Number of recorded times strictly before `t` (events and censorings).
    pub fn count_before(&self, t: f64) -> usize {
        self.times.partition_point(|&x| x < t)
    }

    /// `N_n(t-)`: events strictly before `t`.
    pub fn events_before(&self, t: f64) -> usize {
        let k = self.count_before(t);
        if self.has_censoring() {
            self.status[..k].iter().filter(|&&s| s).count()
        } else {
            k
        }
    }

    /// `N_n(t)`: events at or before `t`.
    pub fn events_up_to(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&x| x <= t);
        if self.has_censoring() {
            self.status[..k].iter().filter(|&&s| s).count()
        } else {
            k
        }
    }

    /// Same path observed with a different (nominal) population size.
    pub fn with_population(&self, n: usize) -> Result<Self> {
        Self::new(self.times.clone(), self.status.clone(), n, self.horizon)
            .map(|p| p.with_meta(self.meta.clone()))
    }

    /// Path rescaled in time by `factor` (times and horizon multiplied).
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        let times = self.times.iter().map(|t| t * factor).collect();
        Self::new(times, self.status.clone(), self.n, self.horizon * factor)
            .map(|p| p.with_meta(self.meta.clone()))
    }
}
