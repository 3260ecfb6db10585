//! Simulated null distribution of the target-process functionals.
//!
//! Each replication simulates a homogeneous Poisson path of intensity `n`
//! on `[0, 1]`, fits the `m`-dimensional Legendre family, and records the
//! statistics of the compensated process. The law depends on `m`, the grid
//! and the trim only, so calibration always runs at `T = 1`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::fit_target;
use crate::gof::{self, StatTriple, Statistic};
use crate::models::ModelSpec;
use crate::par::{self, Execution};
use crate::sampler::simulate_path;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_REPS: usize = 5000;
pub const DEFAULT_N_SIM: usize = 1000;
pub const MIN_REPS: usize = 100;
/// Fraction of failed replications that aborts a calibration.
pub const MAX_FAILURE_RATE: f64 = 0.01;
const MAX_ATTEMPTS: u64 = 16;
pub const CACHE_ENV: &str = "PPGOF_CACHE_DIR";

/// Sorted null samples of (KS, CvM, AD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullTable {
    pub schema_version: u32,
    pub m: usize,
    pub reps: usize,
    pub n_sim: usize,
    pub grid_size: usize,
    pub trim: f64,
    pub seed: u64,
    /// Replications that had to be redrawn.
    #[serde(default)]
    pub failures: usize,
    pub ks: Vec<f64>,
    pub cvm: Vec<f64>,
    pub ad: Vec<f64>,
}

/// Calibration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullParams {
    pub m: usize,
    pub n_sim: usize,
    pub reps: usize,
    pub grid_size: usize,
    pub trim: f64,
    pub seed: u64,
}

impl NullParams {
    pub fn new(m: usize, reps: usize, seed: u64) -> Self {
        Self {
            m,
            n_sim: DEFAULT_N_SIM,
            reps,
            grid_size: gof::DEFAULT_GRID,
            trim: 1.0,
            seed,
        }
    }

    /// Cache file name for these parameters.
    pub fn cache_key(&self) -> String {
        format!(
            "null_m{}_g{}_r{}_n{}_t{}_s{}.json",
            self.m, self.grid_size, self.reps, self.n_sim, self.trim, self.seed
        )
    }
}

/// Statistics of one target replication, `None` if the fit failed.
pub fn replicate(params: &NullParams, seed: u64) -> Option<StatTriple> {
    let spec = ModelSpec::poisson_legendre(params.m, 1.0).ok()?;
    let path = simulate_path(&spec, &spec.target_null(), params.n_sim, 1.0, seed).ok()?;
    let fit = fit_target(&path, params.m).ok()?;
    if !fit.converged {
        return None;
    }
    let w = gof::compensated_process(&spec, &fit.theta_hat, &path, params.grid_size, params.trim)
        .ok()?;
    let s = gof::statistics(&w);
    (s.ks.is_finite() && s.cvm.is_finite() && s.ad.is_finite()).then_some(s)
}

pub fn calibrate(m: usize, n_sim: usize, reps: usize, grid_size: usize, seed: u64) -> Result<NullTable> {
    calibrate_with(
        &NullParams {
            m,
            n_sim,
            reps,
            grid_size,
            trim: 1.0,
            seed,
        },
        Execution::default(),
    )
}

/// Replication `r` uses `derive_seed(seed, r)`; a failed draw is retried
/// with `derive_seed(seed, r + attempt·2³²)`.
pub fn calibrate_with(params: &NullParams, exec: Execution) -> Result<NullTable> {
    if params.m == 0 {
        return Err(Error::Argument("target dimension must be >= 1".into()));
    }
    if params.reps < MIN_REPS {
        return Err(Error::Argument(format!(
            "calibration needs at least {MIN_REPS} replications, got {}",
            params.reps
        )));
    }
    if params.n_sim == 0 {
        return Err(Error::Argument("simulation population must be >= 1".into()));
    }
    gof::evaluation_grid(1.0, params.grid_size, params.trim)?;
    let draws = par::map_indexed(exec, params.reps, |r| {
        for attempt in 0..MAX_ATTEMPTS {
            let seed = par::derive_seed(params.seed, r as u64 + (attempt << 32));
            if let Some(s) = replicate(params, seed) {
                return (Some(s), attempt as usize);
            }
        }
        (None, MAX_ATTEMPTS as usize)
    });
    let failures: usize = draws.iter().map(|d| d.1).sum();
    if failures as f64 > MAX_FAILURE_RATE * params.reps as f64 || draws.iter().any(|d| d.0.is_none()) {
        return Err(Error::Calibration(format!(
            "{failures} of {} target replications failed to fit (m = {})",
            params.reps, params.m
        )));
    }
    if failures > 0 {
        log::info!("{failures} target replications redrawn");
    }
    let stats: Vec<StatTriple> = draws.into_iter().filter_map(|d| d.0).collect();
    let sorted = |f: fn(&StatTriple) -> f64| {
        let mut v: Vec<f64> = stats.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    Ok(NullTable {
        schema_version: SCHEMA_VERSION,
        m: params.m,
        reps: params.reps,
        n_sim: params.n_sim,
        grid_size: params.grid_size,
        trim: params.trim,
        seed: params.seed,
        failures,
        ks: sorted(|s| s.ks),
        cvm: sorted(|s| s.cvm),
        ad: sorted(|s| s.ad),
    })
}

impl NullTable {
    pub fn params(&self) -> NullParams {
        NullParams {
            m: self.m,
            n_sim: self.n_sim,
            reps: self.reps,
            grid_size: self.grid_size,
            trim: self.trim,
            seed: self.seed,
        }
    }

    pub fn samples(&self, stat: Statistic) -> &[f64] {
        match stat {
            Statistic::Ks => &self.ks,
            Statistic::Cvm => &self.cvm,
            Statistic::Ad => &self.ad,
        }
    }

    /// Empirical quantile, ceiling-index convention: the `⌈level·reps⌉`-th
    /// order statistic (clamped to `1..=reps`).
    pub fn quantile(&self, stat: Statistic, level: f64) -> f64 {
        let s = self.samples(stat);
        let idx = ((level * self.reps as f64) - 1e-9).ceil().clamp(1.0, self.reps as f64) as usize;
        s[idx - 1]
    }

    /// [`quantile`](Self::quantile) with a statistic given by name.
    pub fn quantile_named(&self, stat: &str, level: f64) -> Result<f64> {
        let stat: Statistic = stat.parse()?;
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Argument(format!("quantile level must lie in (0, 1), got {level}")));
        }
        Ok(self.quantile(stat, level))
    }

    /// `(1 + #{null ≥ observed}) / (reps + 1)`.
    pub fn p_value(&self, stat: Statistic, observed: f64) -> f64 {
        let s = self.samples(stat);
        let below = s.partition_point(|&x| x < observed);
        (1 + s.len() - below) as f64 / (self.reps + 1) as f64
    }

    /// Errors unless the table was calibrated for this dimension, grid and trim.
    pub fn ensure_matches(&self, m: usize, grid_size: usize, trim: f64) -> Result<()> {
        if self.m != m {
            return Err(Error::TableMismatch(format!(
                "table calibrated for m = {} but the model has m = {m}",
                self.m
            )));
        }
        if self.grid_size != grid_size || self.trim != trim {
            return Err(Error::TableMismatch(format!(
                "table uses grid {} / trim {}, the test uses grid {grid_size} / trim {trim}",
                self.grid_size, self.trim
            )));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "null table schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.reps == 0 {
            return Err(Error::Format("null table has no replications".into()));
        }
        for stat in Statistic::ALL {
            let s = self.samples(stat);
            if s.len() != self.reps {
                return Err(Error::Format(format!(
                    "{stat} sample has {} entries, expected {}",
                    s.len(),
                    self.reps
                )));
            }
            if s.iter().any(|v| !v.is_finite()) || s.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Format(format!("{stat} sample is not sorted and finite")));
            }
        }
        Ok(())
    }

    /// Writes the table as one JSON document (via a temporary file, so a
    /// failed write never leaves a partial table behind).
    pub fn save(&self, location: &Path) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Argument("refusing to save a table with no replications".into()));
        }
        self.validate()?;
        let tmp = location.with_extension("json.partial");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, location)?;
        Ok(())
    }

    pub fn load(location: &Path) -> Result<Self> {
        let text = fs::read_to_string(location)?;
        let table: NullTable = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", location.display())))?;
        table.validate()?;
        Ok(table)
    }
}

/// Directory named by `PPGOF_CACHE_DIR`, if set.
pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

/// Loads the table for `params` from `dir` or calibrates and stores it.
pub fn cached_or_calibrate(params: &NullParams, dir: Option<&Path>, exec: Execution) -> Result<NullTable> {
    let Some(dir) = dir else {
        return calibrate_with(params, exec);
    };
    let file = dir.join(params.cache_key());
    if file.exists() {
        match NullTable::load(&file) {
            Ok(t) if t.params() == *params => return Ok(t),
            Ok(_) => log::warn!("{} does not match its key; recalibrating", file.display()),
            Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", file.display()),
        }
    }
    let table = calibrate_with(params, exec)?;
    fs::create_dir_all(dir)?;
    table.save(&file)?;
    Ok(table)
}
