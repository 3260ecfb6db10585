//! Scripted Monte-Carlo studies: size under the null, power under
//! misspecification, and the simulated-cohort mortality analysis.
//!
//! A study repeats simulate → fit → chain → transform → statistics and
//! compares each transformed statistic with the null table's `(1 − a)`
//! quantile. Replication `r` draws its path from `derive_seed(seed, r)`, so
//! arms that share a truth and a seed see identical paths.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators;
use crate::gof::{self, Decisions, PValues, StatTriple, Statistic, TestOptions, TestReport};
use crate::io::{EventsFile, RatesFile};
use crate::models::{Censoring, Family, ModelSpec, ParamVector};
use crate::nulldist::{self, NullParams, NullTable};
use crate::par::{self, Execution};
use crate::path::ObservedPath;
use crate::sampler::{self, PiecewiseHazard};
use crate::stats;

/// Significance levels reported by every study.
pub const LEVELS: [f64; 3] = [0.10, 0.05, 0.01];
/// Fraction of excluded replications that aborts a study.
pub const MAX_EXCLUDED: f64 = 0.02;
pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// Synthetic annual death rates for ages 50–101 (see the fixture header).
pub const LUXEMBOURG_RATES: &str = include_str!("../fixtures/luxembourg_rates.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyId {
    Table1,
    Table2,
    TableCens,
    TableCure,
    PowerAalen,
    PowerJm,
    Luxembourg,
    Csr2,
}

impl StudyId {
    pub const ALL: [StudyId; 8] = [
        StudyId::Table1,
        StudyId::Table2,
        StudyId::TableCens,
        StudyId::TableCure,
        StudyId::PowerAalen,
        StudyId::PowerJm,
        StudyId::Luxembourg,
        StudyId::Csr2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StudyId::Table1 => "table1",
            StudyId::Table2 => "table2",
            StudyId::TableCens => "table_cens",
            StudyId::TableCure => "table_cure",
            StudyId::PowerAalen => "power_aalen",
            StudyId::PowerJm => "power_jm",
            StudyId::Luxembourg => "luxembourg",
            StudyId::Csr2 => "csr2",
        }
    }

    /// Whether the data come from a different law than the fitted family.
    pub fn is_power(self) -> bool {
        matches!(self, StudyId::PowerAalen | StudyId::PowerJm)
    }
}

impl fmt::Display for StudyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StudyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        let key = if key == "table3" { "power_aalen".to_string() } else { key };
        StudyId::ALL
            .into_iter()
            .find(|id| id.name() == key)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "unknown study {s:?}; expected one of {}",
                    StudyId::ALL.map(|i| i.name()).join(", ")
                ))
            })
    }
}

/// Data-generating law of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    Model { spec: ModelSpec, theta: ParamVector },
    /// Annual hazard table, time measured from its first age.
    Piecewise { hazard: PiecewiseHazard },
}

impl Truth {
    pub fn simulate(&self, n: usize, horizon: f64, seed: u64) -> Result<ObservedPath> {
        match self {
            Truth::Model { spec, theta } => sampler::simulate_path(spec, theta, n, horizon, seed),
            Truth::Piecewise { hazard } => sampler::simulate_piecewise(hazard, n, horizon, seed),
        }
    }
}

/// One arm of a study: a truth, a fitted family and the replication plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub id: StudyId,
    /// Arm label (e.g. `jm`, `littlewood`), used for output sub-directories.
    pub label: String,
    pub truth: Truth,
    pub fitted: ModelSpec,
    pub n: usize,
    pub horizon: f64,
    pub reps: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub trim: f64,
    pub null_reps: usize,
    pub null_n_sim: usize,
    pub null_seed: u64,
}

impl StudySpec {
    fn arm(id: StudyId, label: &str, truth: Truth, fitted: ModelSpec, n: usize, horizon: f64) -> Self {
        Self {
            id,
            label: label.to_string(),
            truth,
            fitted,
            n,
            horizon,
            reps: 1000,
            seed: 20_240_601,
            grid_size: gof::DEFAULT_GRID,
            trim: 1.0,
            null_reps: nulldist::DEFAULT_REPS,
            null_n_sim: nulldist::DEFAULT_N_SIM,
            null_seed: 7,
        }
    }

    /// Arms of `id` at the published settings (1000 replications, 5000-rep
    /// null tables; 20 cohorts for the mortality analysis).
    pub fn defaults(id: StudyId) -> Result<Vec<StudySpec>> {
        let model = |spec: &ModelSpec, theta: &[f64]| Truth::Model {
            spec: spec.clone(),
            theta: ParamVector::new(theta.to_vec()),
        };
        let weibull = ModelSpec::aalen_weibull(50.0, 50.0)?;
        let arms = match id {
            StudyId::Table1 => vec![Self::arm(
                id,
                "weibull",
                model(&weibull, &[86.0, 9.0]),
                weibull.clone(),
                1000,
                50.0,
            )],
            StudyId::Table2 => {
                let jm = ModelSpec::jelinski_moranda(1.0)?;
                let lw = ModelSpec::littlewood(1.0)?;
                vec![
                    Self::arm(id, "jm", model(&jm, &[1.0, 0.1]), jm.clone(), 10_000, 1.0),
                    Self::arm(id, "littlewood", model(&lw, &[4.0, 1.0, 0.1]), lw.clone(), 10_000, 1.0),
                ]
            }
            StudyId::TableCens => {
                let cens = ModelSpec::aalen_weibull_censored(
                    50.0,
                    50.0,
                    Censoring {
                        probability: 0.4,
                        rate: 1.0 / 15.0,
                    },
                )?;
                vec![Self::arm(id, "weibull_censored", model(&cens, &[86.0, 9.0]), cens.clone(), 1000, 50.0)]
            }
            StudyId::TableCure => {
                let cure = ModelSpec::mixture_cure(1.0)?;
                vec![Self::arm(id, "cure", model(&cure, &[0.8, 1.2, 0.75]), cure.clone(), 1000, 1.0)]
            }
            StudyId::PowerAalen => vec![Self::arm(
                id,
                "gompertz",
                model(&weibull, &[86.0, 9.0]),
                ModelSpec::aalen_gompertz(50.0, 50.0)?,
                1000,
                50.0,
            )],
            StudyId::PowerJm => {
                let lw = ModelSpec::littlewood(1.0)?;
                vec![Self::arm(
                    id,
                    "jm",
                    model(&lw, &[4.0, 1.0, 0.1]),
                    ModelSpec::jelinski_moranda(1.0)?,
                    10_000,
                    1.0,
                )]
            }
            StudyId::Luxembourg => {
                let hazard = RatesFile::parse(LUXEMBOURG_RATES)?.hazard()?;
                let truth = Truth::Piecewise { hazard };
                let mut arms = vec![
                    Self::arm(id, "weibull", truth.clone(), weibull.clone(), 1788, 50.0),
                    Self::arm(id, "gompertz", truth, ModelSpec::aalen_gompertz(50.0, 50.0)?, 1788, 50.0),
                ];
                for a in &mut arms {
                    a.reps = 20;
                }
                arms
            }
            StudyId::Csr2 => {
                return Err(Error::Argument(
                    "csr2 is a single-dataset analysis; use analyze_dataset on the data file".into(),
                ))
            }
        };
        Ok(arms)
    }

    pub fn null_params(&self) -> NullParams {
        NullParams {
            m: self.fitted.m(),
            n_sim: self.null_n_sim,
            reps: self.null_reps,
            grid_size: self.grid_size,
            trim: self.trim,
            seed: self.null_seed,
        }
    }

    fn options(&self, alpha: f64) -> TestOptions {
        TestOptions {
            grid_size: self.grid_size,
            trim: self.trim,
            alpha,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Argument("a study needs at least one replication".into()));
        }
        if let Truth::Model { spec, .. } = &self.truth {
            if spec.family() != self.fitted.family() && !self.id.is_power() {
                return Err(Error::Argument(format!(
                    "{} fits {} to {} data; only power studies may misspecify",
                    self.id,
                    self.fitted.family(),
                    spec.family()
                )));
            }
        }
        Ok(())
    }
}

/// Per-replication outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: usize,
    pub seed: u64,
    pub events: usize,
    pub theta_hat: ParamVector,
    pub untransformed: StatTriple,
    pub transformed: StatTriple,
    pub p_values: PValues,
    /// Decisions of the transformed statistics at each of [`LEVELS`].
    pub reject: [Decisions; 3],
    /// Same for the untransformed statistics against the target quantiles.
    pub reject_untransformed: [Decisions; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub level: f64,
    /// `reps_completed · level`.
    pub expected: f64,
    pub ks: usize,
    pub cvm: usize,
    pub ad: usize,
}

impl LevelCounts {
    pub fn get(&self, stat: Statistic) -> usize {
        match stat {
            Statistic::Ks => self.ks,
            Statistic::Cvm => self.cvm,
            Statistic::Ad => self.ad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub rep: usize,
    pub seed: u64,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub schema_version: u32,
    pub spec: StudySpec,
    pub completed: usize,
    pub excluded: Vec<Exclusion>,
    pub counts: Vec<LevelCounts>,
    pub counts_untransformed: Vec<LevelCounts>,
    pub critical_values: Vec<StatTriple>,
    pub median_p: PValues,
    pub replications: Vec<Replication>,
}

impl StudyResult {
    pub fn counts_at(&self, level: f64) -> Option<&LevelCounts> {
        self.counts.iter().find(|c| (c.level - level).abs() < 1e-12)
    }

    pub fn samples(&self, stat: Statistic, transformed: bool) -> Vec<f64> {
        self.replications
            .iter()
            .map(|r| {
                if transformed {
                    r.transformed.get(stat)
                } else {
                    r.untransformed.get(stat)
                }
            })
            .collect()
    }
}

fn decide(stats: &StatTriple, crit: &StatTriple) -> Decisions {
    Decisions {
        ks: stats.ks > crit.ks,
        cvm: stats.cvm > crit.cvm,
        ad: stats.ad > crit.ad,
    }
}

fn tally(reps: &[Replication], pick: impl Fn(&Replication) -> &[Decisions; 3]) -> Vec<LevelCounts> {
    LEVELS
        .iter()
        .enumerate()
        .map(|(i, &level)| {
            let count = |s: Statistic| reps.iter().filter(|r| pick(r)[i].get(s)).count();
            LevelCounts {
                level,
                expected: reps.len() as f64 * level,
                ks: count(Statistic::Ks),
                cvm: count(Statistic::Cvm),
                ad: count(Statistic::Ad),
            }
        })
        .collect()
}

/// Runs one arm against a null table calibrated for its fitted family.
pub fn run_study(spec: &StudySpec, null: &NullTable, exec: Execution) -> Result<StudyResult> {
    spec.validate()?;
    null.ensure_matches(spec.fitted.m(), spec.grid_size, spec.trim)?;
    let critical: Vec<StatTriple> = LEVELS
        .iter()
        .map(|a| StatTriple::from_fn(|s| null.quantile(s, 1.0 - a)))
        .collect();
    let options = spec.options(0.05);
    let outcomes = par::map_indexed(exec, spec.reps, |r| -> std::result::Result<Replication, Exclusion> {
        let seed = par::derive_seed(spec.seed, r as u64);
        let fail = |stage: &str, e: Error| Exclusion {
            rep: r,
            seed,
            stage: stage.to_string(),
            error: e.to_string(),
        };
        let path = spec
            .truth
            .simulate(spec.n, spec.horizon, seed)
            .map_err(|e| fail("simulate", e))?;
        let fit = estimators::fit(&spec.fitted, &path).map_err(|e| fail("fit", e))?;
        let theta_hat = fit.theta_hat.clone();
        let outcome = gof::test_fitted(&spec.fitted, &path, fit, &options, Some(null))
            .map_err(|e| fail("transform", e))?;
        let report = outcome.report;
        let raw = report.untransformed;
        let stats = report.transformed;
        let reject = [0, 1, 2].map(|i| decide(&stats, &critical[i]));
        let reject_untransformed = [0, 1, 2].map(|i| decide(&raw, &critical[i]));
        Ok(Replication {
            rep: r,
            seed,
            events: path.n_events(),
            theta_hat,
            untransformed: raw,
            transformed: stats,
            p_values: report.p_values.expect("table supplied"),
            reject,
            reject_untransformed,
        })
    });
    let mut replications = Vec::with_capacity(spec.reps);
    let mut excluded = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => replications.push(r),
            Err(e) => {
                log::warn!("{} rep {} excluded at {}: {}", spec.id, e.rep, e.stage, e.error);
                excluded.push(e);
            }
        }
    }
    if excluded.len() as f64 > MAX_EXCLUDED * spec.reps as f64 {
        return Err(Error::Study(format!(
            "{} of {} replications of {}/{} failed (first: rep {} at {}: {})",
            excluded.len(),
            spec.reps,
            spec.id,
            spec.label,
            excluded[0].rep,
            excluded[0].stage,
            excluded[0].error
        )));
    }
    if replications.is_empty() {
        return Err(Error::Study(format!("no replication of {} completed", spec.id)));
    }
    let median_p = PValues {
        ks: stats::median(&replications.iter().map(|r| r.p_values.ks).collect::<Vec<_>>()),
        cvm: stats::median(&replications.iter().map(|r| r.p_values.cvm).collect::<Vec<_>>()),
        ad: stats::median(&replications.iter().map(|r| r.p_values.ad).collect::<Vec<_>>()),
    };
    Ok(StudyResult {
        schema_version: RESULT_SCHEMA_VERSION,
        spec: spec.clone(),
        completed: replications.len(),
        counts: tally(&replications, |r| &r.reject),
        counts_untransformed: tally(&replications, |r| &r.reject_untransformed),
        excluded,
        critical_values: critical,
        median_p,
        replications,
    })
}

/// [`run_study`] with the null table taken from `cache` (or calibrated).
pub fn run_study_cached(spec: &StudySpec, cache: Option<&Path>, exec: Execution) -> Result<(StudyResult, NullTable)> {
    let null = nulldist::cached_or_calibrate(&spec.null_params(), cache, exec)?;
    let result = run_study(spec, &null, exec)?;
    Ok((result, null))
}

fn bits(d: &Decisions) -> String {
    [d.ks, d.cvm, d.ad]
        .iter()
        .map(|&b| if b { '1' } else { '0' })
        .collect()
}

fn write_replications(path: &Path, result: &StudyResult, transformed: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rep", "stat_ks", "stat_cvm", "stat_ad", "reject10", "reject05", "reject01"])?;
    for r in &result.replications {
        let (s, d) = if transformed {
            (&r.transformed, &r.reject)
        } else {
            (&r.untransformed, &r.reject_untransformed)
        };
        w.write_record([
            r.rep.to_string(),
            s.ks.to_string(),
            s.cvm.to_string(),
            s.ad.to_string(),
            bits(&d[0]),
            bits(&d[1]),
            bits(&d[2]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `value,ecdf,arm` rows for the tested and target arms.
pub fn write_ecdf(path: &Path, tested: &[f64], target: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["value", "ecdf", "arm"])?;
    for (arm, sample) in [("tested", tested), ("target", target)] {
        for (x, f) in stats::ecdf(sample) {
            w.write_record([x.to_string(), f.to_string(), arm.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `replications.csv` (transformed statistics),
/// `replications_untransformed.csv`, six `ecdf_{stat}_{arm}.csv` files and
/// `summary.json` into `dir`.
pub fn write_study_outputs(dir: &Path, result: &StudyResult, null: &NullTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_replications(&dir.join("replications.csv"), result, true)?;
    write_replications(&dir.join("replications_untransformed.csv"), result, false)?;
    for stat in Statistic::ALL {
        for (transformed, tag) in [(false, "untransformed"), (true, "transformed")] {
            write_ecdf(
                &dir.join(format!("ecdf_{}_{tag}.csv", stat.name())),
                &result.samples(stat, transformed),
                null.samples(stat),
            )?;
        }
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(result)?)?;
    Ok(())
}

/// Outcome for one family in a dataset analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyAnalysis {
    pub family: Family,
    pub report: Option<TestReport>,
    pub error: Option<String>,
    /// `(t_j, fitted limit)`: `n p̂ F_θ̂(t)/n` (or `Λ̂(t)/n` for the target family).
    pub fitted_curve: Vec<(f64, f64)>,
}

/// Observed `N(t_j)/n` on the evaluation grid.
pub fn observed_curve(path: &ObservedPath, grid_size: usize, trim: f64) -> Result<Vec<(f64, f64)>> {
    let n = path.n() as f64;
    Ok(gof::evaluation_grid(path.horizon(), grid_size, trim)?
        .into_iter()
        .map(|t| (t, path.events_up_to(t) as f64 / n))
        .collect())
}

/// Fitted limit of `N(t)/n` on `grid` (see [`FamilyAnalysis::fitted_curve`]).
pub fn fitted_curve(spec: &ModelSpec, theta: &ParamVector, path: &ObservedPath, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = path.n();
    if spec.family() == Family::PoissonLegendre {
        return grid
            .iter()
            .map(|&t| Ok((t, spec.compensator(theta, path, t)? / n as f64)))
            .collect();
    }
    let share = spec.risk_base(theta.as_slice(), n) / n as f64;
    grid.iter()
        .map(|&t| Ok((t, share * spec.cdf(theta, t)?)))
        .collect()
}

/// Tests every family on one path; a family that fails is reported with its
/// error and the others proceed.
pub fn analyze_dataset(
    path: &ObservedPath,
    families: &[ModelSpec],
    tables: &[NullTable],
    options: &TestOptions,
) -> Vec<FamilyAnalysis> {
    families
        .iter()
        .map(|spec| {
            let attempt = || -> Result<(TestReport, Vec<(f64, f64)>)> {
                let table = tables
                    .iter()
                    .find(|t| t.m == spec.m())
                    .ok_or_else(|| Error::TableMismatch(format!("no null table with m = {}", spec.m())))?;
                let outcome = gof::test_path(spec, path, options, Some(table))?;
                let grid = gof::evaluation_grid(path.horizon(), options.grid_size, options.trim)?;
                let spec = spec.with_horizon(path.horizon())?;
                let curve = fitted_curve(&spec, &outcome.report.fit.theta_hat, path, &grid)?;
                Ok((outcome.report, curve))
            };
            match attempt() {
                Ok((report, curve)) => FamilyAnalysis {
                    family: spec.family(),
                    report: Some(report),
                    error: None,
                    fitted_curve: curve,
                },
                Err(e) => {
                    log::warn!("{} failed: {e}", spec.family());
                    FamilyAnalysis {
                        family: spec.family(),
                        report: None,
                        error: Some(e.to_string()),
                        fitted_curve: Vec::new(),
                    }
                }
            }
        })
        .collect()
}

/// Software-failure families tested on failure data observed over `[0, T]`.
pub fn software_families(horizon: f64) -> Result<Vec<ModelSpec>> {
    Ok(vec![ModelSpec::jelinski_moranda(horizon)?, ModelSpec::littlewood(horizon)?])
}

/// Writes `observed.csv` (`t,value`), `fitted_{family}.csv` (`t,value`) and
/// `report_{family}.json` per analysed family.
pub fn write_analysis_outputs(
    dir: &Path,
    path: &ObservedPath,
    analyses: &[FamilyAnalysis],
    options: &TestOptions,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let curve = |file: &Path, rows: &[(f64, f64)]| -> Result<()> {
        let mut w = csv::Writer::from_path(file)?;
        w.write_record(["t", "value"])?;
        for (t, v) in rows {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    };
    curve(&dir.join("observed.csv"), &observed_curve(path, options.grid_size, options.trim)?)?;
    for a in analyses {
        curve(&dir.join(format!("fitted_{}.csv", a.family)), &a.fitted_curve)?;
        fs::write(dir.join(format!("report_{}.json", a.family)), serde_json::to_string_pretty(a)?)?;
    }
    Ok(())
}

/// Reads an events file into a path (helper for dataset analyses).
pub fn load_events(location: &Path, gaps: bool, time_scale: f64, n: usize, horizon: Option<f64>) -> Result<ObservedPath> {
    EventsFile::read(location, gaps, time_scale)?.into_path(n, horizon)
}
