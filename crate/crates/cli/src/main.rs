//! `ppgof` command-line driver.
//!
//! Exit codes: 0 on completion, 1 on error (the message names the failing
//! stage), 2 when `test --fail-on-reject` rejects at `--alpha`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ppgof::estimators;
use ppgof::gof::{self, Statistic, TestOptions, TestOutcome};
use ppgof::io::{EventsFile, RatesFile};
use ppgof::mcharness::{self, FamilyAnalysis, StudyId, StudySpec};
use ppgof::models::{Censoring, Family, ModelSpec, ParamVector};
use ppgof::nulldist::{self, NullParams, NullTable};
use ppgof::par::Execution;
use ppgof::sampler;
use ppgof::ObservedPath;

#[derive(Parser)]
#[command(name = "ppgof", version, about = "Distribution-free goodness-of-fit tests for point-process intensity models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a path from a model and write it as `time,status` CSV.
    Simulate(SimulateArgs),
    /// Fit a model by maximum likelihood.
    Fit(FitArgs),
    /// Fit, transform and test a path against a null table.
    Test(TestArgs),
    /// Calibrate a null table of the transformed statistics.
    Calibrate(CalibrateArgs),
    /// Run a Monte-Carlo size/power study.
    Study(StudyArgs),
    /// Simulate a cohort from an `age,rate` hazard table.
    IngestRates(IngestArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model family: weibull, gompertz, weibull-censored, cure, jm, littlewood, legendre.
    #[arg(long)]
    model: Family,
    /// Age at entry for the Aalen families (time is measured from it).
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    /// Dimension of the Legendre family.
    #[arg(long, default_value_t = 3)]
    legendre_m: usize,
    /// Censoring probability (weibull-censored).
    #[arg(long, default_value_t = 0.4)]
    censor_prob: f64,
    /// Censoring rate (weibull-censored).
    #[arg(long, default_value_t = 1.0 / 15.0)]
    censor_rate: f64,
}

impl ModelArgs {
    fn spec(&self, horizon: f64) -> Result<ModelSpec> {
        let censoring = (self.model == Family::AalenWeibullCensored).then_some(Censoring {
            probability: self.censor_prob,
            rate: self.censor_rate,
        });
        let m = self.model.dimension().unwrap_or(self.legendre_m);
        let t0 = if matches!(
            self.model,
            Family::AalenWeibull | Family::AalenGompertz | Family::AalenWeibullCensored
        ) {
            self.t0
        } else {
            0.0
        };
        ModelSpec::new(self.model, m, t0, horizon, censoring).context("model specification")
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Events file: `time,status` CSV, or one gap per line with --gaps.
    #[arg(long)]
    data: PathBuf,
    /// Read the data file as inter-event gaps.
    #[arg(long)]
    gaps: bool,
    /// Multiply every time by this factor.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    /// Observation horizon T (defaults to the last time).
    #[arg(long)]
    horizon: Option<f64>,
    /// Population size / scaling constant n.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
}

impl DataArgs {
    fn load(&self) -> Result<ObservedPath> {
        let events = EventsFile::read(&self.data, self.gaps, self.time_scale)
            .with_context(|| format!("reading data {}", self.data.display()))?;
        events
            .into_path(self.n, self.horizon)
            .with_context(|| format!("building path from {}", self.data.display()))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Parameter vector, comma separated (e.g. `86,9`).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    horizon: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Write the fit as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct NullArgs {
    /// Precomputed null table (JSON); calibrated on the fly otherwise.
    #[arg(long)]
    null_table: Option<PathBuf>,
    /// Replications for on-the-fly calibration.
    #[arg(long, default_value_t = nulldist::DEFAULT_REPS)]
    null_reps: usize,
    /// Target path size per calibration replication.
    #[arg(long, default_value_t = nulldist::DEFAULT_N_SIM)]
    null_n_sim: usize,
    #[arg(long, default_value_t = 7)]
    null_seed: u64,
    /// Run calibration sequentially.
    #[arg(long)]
    sequential: bool,
}

impl NullArgs {
    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }

    fn table(&self, m: usize, grid_size: usize, trim: f64) -> Result<NullTable> {
        let table = match &self.null_table {
            Some(p) => NullTable::load(p).with_context(|| format!("loading null table {}", p.display()))?,
            None => {
                let params = NullParams {
                    m,
                    n_sim: self.null_n_sim,
                    reps: self.null_reps,
                    grid_size,
                    trim,
                    seed: self.null_seed,
                };
                let cache = nulldist::cache_dir();
                eprintln!(
                    "calibrating null table m={m} reps={} (cache: {})",
                    params.reps,
                    cache.as_deref().map_or("off".into(), |d| d.display().to_string())
                );
                nulldist::cached_or_calibrate(&params, cache.as_deref(), self.execution())
                    .context("calibrating null table")?
            }
        };
        table.ensure_matches(m, grid_size, trim).context("checking null table")?;
        Ok(table)
    }
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    null: NullArgs,
    #[arg(long, default_value_t = gof::DEFAULT_ALPHA)]
    alpha: f64,
    /// Fraction ρ of [0, T] on which the statistics are evaluated.
    #[arg(long, default_value_t = 1.0)]
    trim: f64,
    #[arg(long, default_value_t = gof::DEFAULT_GRID)]
    grid: usize,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write `observed.csv`, `fitted_{family}.csv`, process CSVs and the
    /// report into this directory.
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Exit with status 2 if any statistic rejects at --alpha.
    #[arg(long)]
    fail_on_reject: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Dimension m of the fitted family.
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = nulldist::DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = nulldist::DEFAULT_N_SIM)]
    n_sim: usize,
    #[arg(long, default_value_t = gof::DEFAULT_GRID)]
    grid: usize,
    #[arg(long, default_value_t = 1.0)]
    trim: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    /// table1, table2, table_cens, table_cure, power_aalen (table3), power_jm, luxembourg.
    id: StudyId,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    null_reps: Option<usize>,
    /// Run only the arm with this label.
    #[arg(long)]
    arm: Option<String>,
    #[arg(long)]
    sequential: bool,
    /// Output directory (one sub-directory per arm).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// `age,rate` CSV.
    #[arg(long)]
    rates: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    horizon: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Status {
    Done,
    Rejected,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Test(a) => test(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Study(a) => study(a),
        Command::IngestRates(a) => ingest(a),
    };
    match result {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Rejected) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn write_events(path: &ObservedPath, out: Option<&Path>) -> Result<()> {
    let events = EventsFile::from_path(path);
    match out {
        Some(p) => {
            let file = fs::File::create(p).with_context(|| format!("writing {}", p.display()))?;
            events.write_csv(file).with_context(|| format!("writing {}", p.display()))?;
        }
        None => events.write_csv(std::io::stdout().lock()).context("writing events")?,
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(value: &T, out: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(out, text).with_context(|| format!("writing {}", out.display()))
}

fn simulate(a: SimulateArgs) -> Result<Status> {
    let spec = a.model.spec(a.horizon)?;
    let theta = ParamVector::new(a.theta);
    let path = sampler::simulate_path(&spec, &theta, a.n, a.horizon, a.seed).context("simulating path")?;
    write_events(&path, a.out.as_deref())?;
    Ok(Status::Done)
}

fn fit(a: FitArgs) -> Result<Status> {
    let path = a.data.load()?;
    let spec = a.model.spec(path.horizon())?;
    let result = estimators::fit(&spec, &path).context("fitting model")?;
    let names = spec.family().param_names(spec.m());
    println!("{} fit ({} events, n = {})", spec.family(), path.n_events(), path.n());
    for (name, v) in names.iter().zip(result.theta_hat.as_slice()) {
        println!("  {name:<8} {v:.6}");
    }
    if spec.family().has_proportion() {
        let p = *result.theta_hat.as_slice().last().unwrap();
        println!("  {:<8} {:.4}", "n*p", p * path.n() as f64);
    }
    println!("  loglik   {:.6}  (converged: {})", result.loglik, result.converged);
    if let Some(out) = &a.out {
        write_json(&result, out)?;
    }
    Ok(Status::Done)
}

fn print_report(outcome: &TestOutcome) {
    let r = &outcome.report;
    println!("{} test: n = {}, T = {}, {} events", r.family, r.n, r.horizon, r.diagnostics.events);
    println!("estimates:");
    for (name, v) in r.param_names.iter().zip(r.fit.theta_hat.as_slice()) {
        println!("  {name:<8} {v:.6}");
    }
    if r.family.has_proportion() {
        let p = *r.fit.theta_hat.as_slice().last().unwrap();
        println!("  {:<8} {:.4}", "n*p", p * r.n as f64);
    }
    println!(
        "{:<5} {:>12} {:>12} {:>10} {:>10}  decision (alpha = {})",
        "stat", "untransf.", "transformed", "p-value", "critical", r.alpha
    );
    for s in Statistic::ALL {
        let p = r.p_values.map(|p| format!("{:.4}", p.get(s))).unwrap_or_else(|| "-".into());
        let c = r.critical_values.map(|c| format!("{:.4}", c.get(s))).unwrap_or_else(|| "-".into());
        let d = match r.reject {
            Some(d) if d.get(s) => "reject",
            Some(_) => "accept",
            None => "-",
        };
        println!(
            "{:<5} {:>12.4} {:>12.4} {:>10} {:>10}  {d}",
            s.name(),
            r.untransformed.get(s),
            r.transformed.get(s),
            p,
            c
        );
    }
}

fn write_process(file: &Path, outcome: &TestOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(file).with_context(|| format!("writing {}", file.display()))?;
    w.write_record(["t", "untransformed", "transformed"])?;
    let u = &outcome.untransformed;
    for ((t, x), y) in u.grid().iter().zip(u.values()).zip(outcome.transformed.values()) {
        w.write_record([t.to_string(), x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn test(a: TestArgs) -> Result<Status> {
    let path = a.data.load()?;
    let spec = a.model.spec(path.horizon())?;
    let options = TestOptions {
        grid_size: a.grid,
        trim: a.trim,
        alpha: a.alpha,
    };
    let table = a.null.table(spec.m(), a.grid, a.trim)?;
    let fit = estimators::fit(&spec, &path).context("fitting model")?;
    let outcome = gof::test_fitted(&spec, &path, fit, &options, Some(&table)).context("testing fitted model")?;
    print_report(&outcome);
    if let Some(out) = &a.out {
        write_json(&outcome.report, out)?;
    }
    if let Some(dir) = &a.curves {
        let grid = gof::evaluation_grid(path.horizon(), a.grid, a.trim)?;
        let curve = mcharness::fitted_curve(&spec, &outcome.report.fit.theta_hat, &path, &grid)
            .context("evaluating fitted curve")?;
        let analysis = FamilyAnalysis {
            family: spec.family(),
            report: Some(outcome.report.clone()),
            error: None,
            fitted_curve: curve,
        };
        mcharness::write_analysis_outputs(dir, &path, &[analysis], &options)
            .with_context(|| format!("writing curves to {}", dir.display()))?;
        write_process(&dir.join(format!("process_{}.csv", spec.family())), &outcome)?;
    }
    let rejected = outcome.report.reject.is_some_and(|d| d.any());
    Ok(if rejected && a.fail_on_reject {
        Status::Rejected
    } else {
        Status::Done
    })
}

fn calibrate(a: CalibrateArgs) -> Result<Status> {
    let params = NullParams {
        m: a.m,
        n_sim: a.n_sim,
        reps: a.reps,
        grid_size: a.grid,
        trim: a.trim,
        seed: a.seed,
    };
    let exec = if a.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let table = nulldist::calibrate_with(&params, exec).context("calibrating null table")?;
    table.save(&a.out).with_context(|| format!("writing null table {}", a.out.display()))?;
    println!(
        "null table m={} reps={} ({} failed fits retried); 95% quantiles KS {:.4} CvM {:.4} AD {:.4}",
        table.m,
        table.reps,
        table.failures,
        table.quantile(Statistic::Ks, 0.95),
        table.quantile(Statistic::Cvm, 0.95),
        table.quantile(Statistic::Ad, 0.95)
    );
    Ok(Status::Done)
}

fn study(a: StudyArgs) -> Result<Status> {
    let mut arms = StudySpec::defaults(a.id).with_context(|| format!("setting up study {}", a.id))?;
    if let Some(label) = &a.arm {
        arms.retain(|s| &s.label == label);
        if arms.is_empty() {
            bail!("study {} has no arm '{label}'", a.id);
        }
    }
    let exec = if a.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let cache = nulldist::cache_dir();
    for mut spec in arms {
        if let Some(r) = a.reps {
            spec.reps = r;
        }
        if let Some(s) = a.seed {
            spec.seed = s;
        }
        if let Some(r) = a.null_reps {
            spec.null_reps = r;
        }
        let (result, null) = mcharness::run_study_cached(&spec, cache.as_deref(), exec)
            .with_context(|| format!("running study {}/{}", spec.id, spec.label))?;
        let dir = a.out.join(&spec.label);
        mcharness::write_study_outputs(&dir, &result, &null)
            .with_context(|| format!("writing study outputs to {}", dir.display()))?;
        let mut out = std::io::stdout().lock();
        writeln!(out, "{}/{}: {} completed, {} excluded", spec.id, spec.label, result.completed, result.excluded.len())?;
        for (tag, counts) in [("transformed", &result.counts), ("untransformed", &result.counts_untransformed)] {
            for c in counts {
                writeln!(
                    out,
                    "  {tag:<13} {:>4.0}%: KS {:>4} CvM {:>4} AD {:>4} (expected {:.1})",
                    c.level * 100.0,
                    c.ks,
                    c.cvm,
                    c.ad,
                    c.expected
                )?;
            }
        }
    }
    Ok(Status::Done)
}

fn ingest(a: IngestArgs) -> Result<Status> {
    let rates = RatesFile::read(&a.rates).with_context(|| format!("reading rates {}", a.rates.display()))?;
    let hazard = rates.hazard().context("building hazard")?;
    let path = sampler::simulate_piecewise(&hazard, a.n, a.horizon, a.seed).context("simulating cohort")?;
    write_events(&path, a.out.as_deref())?;
    Ok(Status::Done)
}
