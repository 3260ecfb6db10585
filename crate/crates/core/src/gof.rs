//! Testing processes and their functionals.
//!
//! `Ŵ(t) = n^{-1/2}[N(t) − Λ̂(t)]` is evaluated in closed form. The
//! transformed process `𝒯Ŵ(t) = ∫ U(ℓ𝟙_{[0,t]}) dŴ` is assembled from
//! `U(ℓ𝟙_{[0,t]}) = ℓ𝟙_{[0,t]} + Σ_k c_k(t) u_k`:
//!
//! ```text
//! 𝒯Ŵ(t) = A(t) + Σ_k c_k(t) ⟨u_k, Z⟩,
//! A(t)   = n^{-1/2}[Σ_{T_i ≤ t} ℓ(T_i) − ∫_0^t ℓ λ̂],
//! Z_a    = n^{-1/2}[Σ_i atom_a(T_i) − ∫_0^T atom_a λ̂],
//! ```
//!
//! so after the chain is built each grid point costs `O(m·K)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, FitResult};
use crate::hilbert::{self, Basis, FittedChain, ModelBasis};
use crate::models::{Family, ModelSpec, ParamVector};
use crate::nulldist::NullTable;
use crate::path::ObservedPath;

pub const DEFAULT_GRID: usize = 500;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Evaluation points `t_j = j ρT / G`, `j = 1..G`.
pub fn evaluation_grid(horizon: f64, grid_size: usize, trim: f64) -> Result<Vec<f64>> {
    if grid_size == 0 {
        return Err(Error::Argument("grid size must be at least 1".into()));
    }
    if !(trim > 0.0 && trim <= 1.0) {
        return Err(Error::Argument(format!("trim must lie in (0, 1], got {trim}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Argument(format!("horizon must be positive, got {horizon}")));
    }
    let window = trim * horizon;
    let mut grid: Vec<f64> = (1..=grid_size)
        .map(|j| window * j as f64 / grid_size as f64)
        .collect();
    grid[grid_size - 1] = window;
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessMeta {
    pub family: Family,
    pub theta: ParamVector,
    pub n: usize,
    pub transformed: bool,
}

/// A testing process sampled on an evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessPath {
    grid: Vec<f64>,
    values: Vec<f64>,
    window: f64,
    meta: ProcessMeta,
}

impl ProcessPath {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, meta: ProcessMeta) -> Result<Self> {
        if grid.is_empty() || grid.len() != values.len() {
            return Err(Error::Argument(format!(
                "{} grid points but {} values",
                grid.len(),
                values.len()
            )));
        }
        let mut prev = 0.0;
        for &t in &grid {
            if !(t > prev) || !t.is_finite() {
                return Err(Error::Argument("grid must be strictly increasing in (0, ∞)".into()));
            }
            prev = t;
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Overflow(format!("process value {v} is not finite")));
        }
        Ok(Self {
            window: prev,
            grid,
            values,
            meta,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Right end of the evaluation window, `ρT`.
    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn meta(&self) -> &ProcessMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Ks,
    Cvm,
    Ad,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [Statistic::Ks, Statistic::Cvm, Statistic::Ad];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Ks => "ks",
            Statistic::Cvm => "cvm",
            Statistic::Ad => "ad",
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ks" => Ok(Statistic::Ks),
            "cvm" => Ok(Statistic::Cvm),
            "ad" => Ok(Statistic::Ad),
            other => Err(Error::Argument(format!(
                "unknown statistic {other:?} (expected ks, cvm or ad)"
            ))),
        }
    }
}

/// Kolmogorov–Smirnov, Cramér–von Mises and Anderson–Darling functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTriple {
    pub ks: f64,
    pub cvm: f64,
    pub ad: f64,
}

impl StatTriple {
    pub fn get(&self, stat: Statistic) -> f64 {
        match stat {
            Statistic::Ks => self.ks,
            Statistic::Cvm => self.cvm,
            Statistic::Ad => self.ad,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Statistic) -> f64) -> Self {
        Self {
            ks: f(Statistic::Ks),
            cvm: f(Statistic::Cvm),
            ad: f(Statistic::Ad),
        }
    }
}

/// Rejection decisions per statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decisions {
    pub ks: bool,
    pub cvm: bool,
    pub ad: bool,
}

impl Decisions {
    pub fn get(&self, stat: Statistic) -> bool {
        match stat {
            Statistic::Ks => self.ks,
            Statistic::Cvm => self.cvm,
            Statistic::Ad => self.ad,
        }
    }

    pub fn any(&self) -> bool {
        self.ks || self.cvm || self.ad
    }
}

/// KS = max|v|, CvM = (1/ρT) Σ v_j² Δt_j, AD = Σ v_j²/t_j Δt_j.
pub fn statistics(proc: &ProcessPath) -> StatTriple {
    let mut ks: f64 = 0.0;
    let mut cvm = 0.0;
    let mut ad = 0.0;
    let mut prev = 0.0;
    for (&t, &v) in proc.grid.iter().zip(&proc.values) {
        let dt = t - prev;
        prev = t;
        let v2 = v * v;
        ks = ks.max(v.abs());
        cvm += v2 * dt;
        ad += v2 / t * dt;
    }
    StatTriple {
        ks,
        cvm: cvm / proc.window,
        ad,
    }
}

fn aligned(spec: &ModelSpec, path: &ObservedPath) -> Result<ModelSpec> {
    if spec.horizon() == path.horizon() {
        Ok(spec.clone())
    } else {
        spec.with_horizon(path.horizon())
    }
}

fn meta(spec: &ModelSpec, theta: &ParamVector, path: &ObservedPath, transformed: bool) -> ProcessMeta {
    ProcessMeta {
        family: spec.family(),
        theta: theta.clone(),
        n: path.n(),
        transformed,
    }
}

/// `Ŵ(t_j) = n^{-1/2}[N(t_j) − Λ̂(t_j)]` on the evaluation grid.
pub fn compensated_process(
    spec: &ModelSpec,
    theta: &ParamVector,
    path: &ObservedPath,
    grid_size: usize,
    trim: f64,
) -> Result<ProcessPath> {
    let grid = evaluation_grid(path.horizon(), grid_size, trim)?;
    compensated_process_on(spec, theta, path, grid)
}

/// [`compensated_process`] on an arbitrary ascending grid inside `(0, T]`.
pub fn compensated_process_on(
    spec: &ModelSpec,
    theta: &ParamVector,
    path: &ObservedPath,
    grid: Vec<f64>,
) -> Result<ProcessPath> {
    let spec = aligned(spec, path)?;
    spec.check(theta)?;
    estimators::check_path(&spec, path)?;
    let comp = spec.compensator_on_grid(theta.as_slice(), path, &grid);
    let scale = 1.0 / (path.n() as f64).sqrt();
    let events: Vec<f64> = path.event_times().collect();
    let mut k = 0;
    let values = grid
        .iter()
        .zip(&comp)
        .map(|(&t, &c)| {
            while k < events.len() && events[k] <= t {
                k += 1;
            }
            scale * (k as f64 - c)
        })
        .collect();
    ProcessPath::new(grid, values, meta(&spec, theta, path, false))
}

/// `λ̂` at ascending points, using the strict past `N(s−)`.
fn intensity_sweep(spec: &ModelSpec, th: &[f64], path: &ObservedPath, points: &[f64]) -> Vec<f64> {
    if spec.family() == Family::PoissonLegendre {
        return points
            .iter()
            .map(|&s| spec.legendre_intensity(th, path.n(), s))
            .collect();
    }
    let removed: Vec<f64> = if spec.counts_censored() {
        path.times().to_vec()
    } else {
        path.event_times().collect()
    };
    let base = spec.risk_base(th, path.n());
    let mut k = 0;
    points
        .iter()
        .map(|&s| {
            while k < removed.len() && removed[k] < s {
                k += 1;
            }
            spec.hazard_raw(th, s) * (base - k as f64).max(0.0)
        })
        .collect()
}

/// Chain of the fitted model with panel boundaries at the evaluation grid.
pub fn chain_for(
    spec: &ModelSpec,
    theta: &ParamVector,
    path: &ObservedPath,
    grid: &[f64],
) -> Result<FittedChain> {
    let spec = aligned(spec, path)?;
    spec.check(theta)?;
    hilbert::fitted_chain(&spec, theta.as_slice(), path, grid, hilbert::DEFAULT_PANELS)
}

/// `𝒯Ŵ` on the evaluation grid; builds the chain itself.
pub fn transform(
    spec: &ModelSpec,
    theta: &ParamVector,
    path: &ObservedPath,
    grid_size: usize,
    trim: f64,
) -> Result<ProcessPath> {
    let grid = evaluation_grid(path.horizon(), grid_size, trim)?;
    let fc = chain_for(spec, theta, path, &grid)?;
    transform_on(spec, theta, path, &fc, grid)
}

/// `𝒯Ŵ` on `grid` with a chain built from the same `(spec, θ̂, path)`; the
/// chain's quadrature grid should have a panel boundary at every point of
/// `grid`.
pub fn transform_on(
    spec: &ModelSpec,
    theta: &ParamVector,
    path: &ObservedPath,
    fc: &FittedChain,
    grid: Vec<f64>,
) -> Result<ProcessPath> {
    let spec = aligned(spec, path)?;
    spec.check(theta)?;
    estimators::check_path(&spec, path)?;
    let th = theta.as_slice();
    let space = &fc.space;
    let chain = &fc.chain;
    let k = space.n_atoms();
    let ell = ModelBasis::ELL;
    let scale = 1.0 / (path.n() as f64).sqrt();
    let quad = space.grid();
    let nodes = quad.nodes();
    let lam = intensity_sweep(&spec, th, path, nodes);

    // Z and the running ∫ ℓ λ̂ at every node
    let mut z = vec![0.0; k];
    let mut ell_int = Vec::with_capacity(nodes.len());
    let mut acc = 0.0;
    for (i, (&w, &l)) in quad.weights().iter().zip(&lam).enumerate() {
        let vals = space.node_values(i);
        let wl = w * l;
        for (za, &va) in z.iter_mut().zip(vals) {
            *za -= va * wl;
        }
        acc += vals[ell] * wl;
        ell_int.push(acc);
    }
    let events: Vec<f64> = path.event_times().collect();
    let mut ell_events = Vec::with_capacity(events.len());
    let mut row = vec![0.0; k];
    let mut acc = 0.0;
    for &t in &events {
        space.basis().eval(t, &mut row);
        for (za, &va) in z.iter_mut().zip(&row) {
            *za += va;
        }
        acc += row[ell];
        ell_events.push(acc);
    }
    let uz: Vec<f64> = chain
        .directions()
        .iter()
        .map(|u| u.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect();

    let mut values = Vec::with_capacity(grid.len());
    let (mut node_k, mut event_k) = (0usize, 0usize);
    for &t in &grid {
        while node_k < nodes.len() && nodes[node_k] < t {
            node_k += 1;
        }
        while event_k < events.len() && events[event_k] <= t {
            event_k += 1;
        }
        let integral = if node_k == 0 { 0.0 } else { ell_int[node_k - 1] };
        let jumps = if event_k == 0 { 0.0 } else { ell_events[event_k - 1] };
        let mut v = scale * (jumps - integral);
        let cum = space.cumulative(t);
        let c = chain.indicator_coefficients(&cum[ell * k..(ell + 1) * k]);
        for (ck, uzk) in c.iter().zip(&uz) {
            v += ck * uzk;
        }
        values.push(v);
    }
    ProcessPath::new(grid, values, meta(&spec, theta, path, true))
}

/// `p = (1 + #{null ≥ observed}) / (reps + 1)` per statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValues {
    pub ks: f64,
    pub cvm: f64,
    pub ad: f64,
}

impl PValues {
    pub fn get(&self, stat: Statistic) -> f64 {
        match stat {
            Statistic::Ks => self.ks,
            Statistic::Cvm => self.cvm,
            Statistic::Ad => self.ad,
        }
    }
}

/// Add-one Monte-Carlo p-values of `stats` under a null table of dimension `m`.
pub fn p_values(stats: &StatTriple, table: &NullTable, m: usize) -> Result<PValues> {
    if table.m != m {
        return Err(Error::TableMismatch(format!(
            "table calibrated for m = {} but the model has m = {m}",
            table.m
        )));
    }
    let p = |stat: Statistic| table.p_value(stat, stats.get(stat));
    Ok(PValues {
        ks: p(Statistic::Ks),
        cvm: p(Statistic::Cvm),
        ad: p(Statistic::Ad),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub grid_size: usize,
    pub trim: f64,
    pub alpha: f64,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID,
            trim: 1.0,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullInfo {
    pub m: usize,
    pub reps: usize,
    pub n_sim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `max_k sup |U ℓ q_{μ,k} − q̂_k|` over quadrature nodes.
    pub mapping_error: f64,
    pub gamma_eigenvalues: Vec<f64>,
    pub degenerate_stages: Vec<usize>,
    pub events: usize,
}

/// Everything one goodness-of-fit test produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub schema_version: u32,
    pub family: Family,
    pub n: usize,
    pub horizon: f64,
    pub trim: f64,
    pub grid_size: usize,
    pub param_names: Vec<String>,
    pub fit: FitResult,
    pub untransformed: StatTriple,
    pub transformed: StatTriple,
    pub alpha: f64,
    pub p_values: Option<PValues>,
    /// `(1 − alpha)` quantiles of the null table.
    pub critical_values: Option<StatTriple>,
    pub reject: Option<Decisions>,
    pub null: Option<NullInfo>,
    pub diagnostics: Diagnostics,
}

/// Report plus both processes.
#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub report: TestReport,
    pub untransformed: ProcessPath,
    pub transformed: ProcessPath,
}

/// Fit `spec` to `path`, build both processes and their statistics, and
/// compare the transformed statistics with `table` when given.
pub fn test_path(
    spec: &ModelSpec,
    path: &ObservedPath,
    options: &TestOptions,
    table: Option<&NullTable>,
) -> Result<TestOutcome> {
    let spec = aligned(spec, path)?;
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(Error::Argument(format!(
            "significance level must lie in (0, 1), got {}",
            options.alpha
        )));
    }
    if let Some(t) = table {
        t.ensure_matches(spec.m(), options.grid_size, options.trim)?;
    }
    let fit = estimators::fit(&spec, path)?;
    test_fitted(&spec, path, fit, options, table)
}

/// [`test_path`] with an already computed fit.
pub fn test_fitted(
    spec: &ModelSpec,
    path: &ObservedPath,
    fit: FitResult,
    options: &TestOptions,
    table: Option<&NullTable>,
) -> Result<TestOutcome> {
    let spec = aligned(spec, path)?;
    let theta = &fit.theta_hat;
    let grid = evaluation_grid(path.horizon(), options.grid_size, options.trim)?;
    let untransformed = compensated_process_on(&spec, theta, path, grid.clone())?;
    let fc = chain_for(&spec, theta, path, &grid)?;
    let transformed = transform_on(&spec, theta, path, &fc, grid)?;
    let raw = statistics(&untransformed);
    let stats = statistics(&transformed);
    let (p, critical, reject, null) = match table {
        Some(t) => {
            t.ensure_matches(spec.m(), options.grid_size, options.trim)?;
            let p = p_values(&stats, t, spec.m())?;
            let level = 1.0 - options.alpha;
            let crit = StatTriple::from_fn(|s| t.quantile(s, level));
            let reject = Decisions {
                ks: stats.ks > crit.ks,
                cvm: stats.cvm > crit.cvm,
                ad: stats.ad > crit.ad,
            };
            let info = NullInfo {
                m: t.m,
                reps: t.reps,
                n_sim: t.n_sim,
                seed: t.seed,
            };
            (Some(p), Some(crit), Some(reject), Some(info))
        }
        None => (None, None, None, None),
    };
    let diagnostics = Diagnostics {
        mapping_error: fc.mapping_error(),
        gamma_eigenvalues: fc.ortho.eigenvalues.clone(),
        degenerate_stages: fc
            .chain
            .degenerate()
            .iter()
            .enumerate()
            .filter_map(|(i, &d)| d.then_some(i + 1))
            .collect(),
        events: path.n_events(),
    };
    let report = TestReport {
        schema_version: REPORT_SCHEMA_VERSION,
        family: spec.family(),
        n: path.n(),
        horizon: path.horizon(),
        trim: options.trim,
        grid_size: options.grid_size,
        param_names: spec.family().param_names(spec.m()),
        fit,
        untransformed: raw,
        transformed: stats,
        alpha: options.alpha,
        p_values: p,
        critical_values: critical,
        reject,
        null,
        diagnostics,
    };
    Ok(TestOutcome {
        report,
        untransformed,
        transformed,
    })
}
