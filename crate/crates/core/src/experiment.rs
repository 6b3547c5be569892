//! Repeated runs, JSON Lines records, aggregate reports and the FEM damage table.
//!
//! Repetition `r` uses seed `seed + r`, so any single repetition can be rerun
//! on its own. Records come out in repetition order whatever the worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{run_semis, RunStatus, SemisConfig};
use crate::error::{Error, Result};
use crate::estimators::{ks_statistic, PosteriorDraws};
use crate::fem::{make_case, FemCase};
use crate::model::{nlg_marginal_cdf, reference_log_evidence, Benchmark, BenchmarkCase, TargetModel};
use crate::sus::{run_sus, SusConfig};

/// Version tag carried by every record.
pub const RECORD_SCHEMA: &str = "semis.run/1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Semis,
    Sus,
}

impl Algorithm {
    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::Semis => "semis",
            Algorithm::Sus => "sus",
        }
    }

    /// Default samples per level: 1000 for SeMIS, 500 for SuS.
    pub fn default_n(&self) -> usize {
        match self {
            Algorithm::Semis => 1000,
            Algorithm::Sus => 500,
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semis" => Ok(Algorithm::Semis),
            "sus" => Ok(Algorithm::Sus),
            other => Err(Error::Config { field: "algorithm".into(), message: format!("unknown algorithm `{other}`") }),
        }
    }
}

/// One experiment, read from JSON and overridable from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Benchmark to run; ignored when `fem_pattern` is set.
    pub example: Option<Benchmark>,
    pub dim: Option<usize>,
    /// Run the shear-building demo with this damage pattern instead.
    pub fem_pattern: Option<u8>,
    pub noise_cov_scale: f64,
    pub algorithm: Algorithm,
    /// Samples per level; the algorithm's default when absent.
    pub n: Option<usize>,
    /// Target acceptance (SeMIS) or level probability (SuS).
    pub p: f64,
    pub reps: usize,
    pub seed: u64,
    pub max_levels: usize,
    /// Worker threads; all available cores when absent.
    pub workers: Option<usize>,
    /// Record wall-clock time per repetition. Off by default because it
    /// makes output files differ between invocations.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            example: None,
            dim: None,
            fem_pattern: None,
            noise_cov_scale: 1.0,
            algorithm: Algorithm::Semis,
            n: None,
            p: 0.1,
            reps: 1,
            seed: 0,
            max_levels: 100,
            workers: None,
            timing: false,
        }
    }
}

/// What a configuration runs on.
#[derive(Debug, Clone)]
pub enum Problem {
    Benchmark(BenchmarkCase),
    Fem(FemCase),
}

impl Problem {
    pub fn model(&self) -> TargetModel {
        match self {
            Problem::Benchmark(c) => c.model(),
            Problem::Fem(c) => c.model(),
        }
    }
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| config_error("config", e.to_string()))
    }

    pub fn n(&self) -> usize {
        self.n.unwrap_or_else(|| self.algorithm.default_n())
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(config_error("reps", "must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(config_error("workers", "must be at least 1"));
        }
        if self.fem_pattern.is_none() && self.example.is_none() {
            return Err(config_error("example", "choose a benchmark or a FEM pattern"));
        }
        self.problem()?;
        match self.algorithm {
            Algorithm::Semis => self.semis_config(0).validate(),
            Algorithm::Sus => self.sus_config(0).validate(),
        }
    }

    /// The problem instance. FEM data noise is drawn from `seed`, so every
    /// repetition sees the same data set.
    pub fn problem(&self) -> Result<Problem> {
        if let Some(pattern) = self.fem_pattern {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            return make_case(pattern, self.noise_cov_scale, &mut rng)
                .map(Problem::Fem)
                .map_err(|e| config_error("fem_pattern", e.to_string()));
        }
        let id = self.example.ok_or_else(|| config_error("example", "missing"))?;
        let dim = self.dim.unwrap_or(2);
        BenchmarkCase::new(id, dim).map(Problem::Benchmark).map_err(|e| config_error("dim", e.to_string()))
    }

    pub fn semis_config(&self, rep: usize) -> SemisConfig {
        SemisConfig {
            n: self.n(),
            p: self.p,
            max_levels: self.max_levels,
            seed: self.seed + rep as u64,
            ..SemisConfig::default()
        }
    }

    pub fn sus_config(&self, rep: usize) -> SusConfig {
        SusConfig {
            n: self.n(),
            p_c: self.p,
            max_levels: self.max_levels,
            seed: self.seed + rep as u64,
            ..SusConfig::default()
        }
    }

    fn example_id(&self) -> String {
        match (self.fem_pattern, self.example) {
            (Some(_), _) => "fem".into(),
            (None, Some(e)) => e.id().into(),
            (None, None) => String::new(),
        }
    }
}

/// Outcome of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub schema: String,
    pub algorithm: Algorithm,
    pub example: String,
    pub dim: usize,
    pub pattern: Option<u8>,
    pub rep: usize,
    pub seed: u64,
    /// `terminated`, `budget_exhausted`, `converged`, `quantile_stalled`,
    /// `max_levels` or `failed`.
    pub status: String,
    /// Primary evidence estimate: MIS for SeMIS, the segmented estimator for SuS.
    pub ln_z_mis: Option<f64>,
    pub ln_z_sis: Option<f64>,
    pub n_cal: u64,
    /// Effective sample size under the independence approximation.
    pub ess: Option<f64>,
    pub levels_used: usize,
    /// Per-coordinate K-S statistic of the resampled posterior (NLG only).
    pub ks: Option<Vec<f64>>,
    /// Posterior mean and standard deviation per parameter (FEM only).
    pub posterior_mean: Option<Vec<f64>>,
    pub posterior_std: Option<Vec<f64>>,
    pub error: Option<String>,
    pub wall_time_s: Option<f64>,
}

impl RunRecord {
    fn empty(config: &RunConfig, problem: &Problem, rep: usize) -> Self {
        let dim = match problem {
            Problem::Benchmark(c) => c.dim,
            Problem::Fem(c) => c.building.n_params(),
        };
        RunRecord {
            schema: RECORD_SCHEMA.into(),
            algorithm: config.algorithm,
            example: config.example_id(),
            dim,
            pattern: config.fem_pattern,
            rep,
            seed: config.seed + rep as u64,
            status: "failed".into(),
            ln_z_mis: None,
            ln_z_sis: None,
            n_cal: 0,
            ess: None,
            levels_used: 0,
            ks: None,
            posterior_mean: None,
            posterior_std: None,
            error: None,
            wall_time_s: None,
        }
    }
}

/// Per-coordinate K-S statistics of NLG draws against the exact marginals.
pub fn nlg_ks(draws: &[Vec<f64>], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let xs: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            ks_statistic(&xs, |x| nlg_marginal_cdf(j, x, dim))
        })
        .collect()
}

fn summarize(record: &mut RunRecord, problem: &Problem, posterior: &PosteriorDraws) {
    record.ess = Some(posterior.ess());
    match problem {
        Problem::Benchmark(c) if c.id == Benchmark::Nlg && !posterior.draws.is_empty() => {
            record.ks = Some(nlg_ks(&posterior.draws, c.dim));
        }
        Problem::Fem(c) if !posterior.draws.is_empty() => {
            let (m, s): (Vec<f64>, Vec<f64>) = (0..c.building.n_params()).map(|j| posterior.mean_std(j)).unzip();
            record.posterior_mean = Some(m);
            record.posterior_std = Some(s);
        }
        _ => {}
    }
}

/// Run one repetition. Failures are reported in the record, not returned.
pub fn run_one(config: &RunConfig, problem: &Problem, rep: usize) -> (RunRecord, Option<PosteriorDraws>) {
    let mut record = RunRecord::empty(config, problem, rep);
    let model = problem.model();
    let start = Instant::now();
    let posterior = match config.algorithm {
        Algorithm::Semis => match run_semis(&model, &config.semis_config(rep)) {
            Ok(res) => {
                record.status = match res.status {
                    RunStatus::Terminated => "terminated",
                    RunStatus::BudgetExhausted => "budget_exhausted",
                }
                .into();
                record.ln_z_mis = Some(res.evidence.ln_z_mis);
                record.ln_z_sis = res.evidence.ln_z_sis;
                record.n_cal = res.n_cal();
                record.levels_used = res.levels_used();
                Some(res.posterior)
            }
            Err(e) => {
                record.error = Some(e.to_string());
                None
            }
        },
        Algorithm::Sus => match run_sus(&model, &config.sus_config(rep)) {
            Ok(res) => {
                record.status = serde_json::to_value(res.trace.stop)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default();
                record.ln_z_mis = Some(res.ln_z);
                record.n_cal = res.n_cal;
                record.levels_used = res.trace.levels.len();
                Some(res.posterior)
            }
            Err(e) => {
                record.error = Some(e.to_string());
                None
            }
        },
    };
    if record.error.is_some() {
        record.n_cal = model.eval_count();
    }
    if let Some(p) = &posterior {
        summarize(&mut record, problem, p);
    }
    if config.timing {
        record.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    (record, posterior)
}

/// Run `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| config_error("workers", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// All repetitions of `config`, in repetition order, with their posteriors.
pub fn run_all(config: &RunConfig) -> Result<Vec<(RunRecord, Option<PosteriorDraws>)>> {
    config.validate()?;
    let problem = config.problem()?;
    with_workers(config.workers, || {
        (0..config.reps).into_par_iter().map(|rep| run_one(config, &problem, rep)).collect()
    })
}

/// Run `config`, write records as JSON Lines and optionally dump posterior draws.
pub fn run_command(config: &RunConfig, out: &mut dyn Write, dump: Option<&mut dyn Write>) -> Result<Vec<RunRecord>> {
    let results = run_all(config)?;
    let records: Vec<RunRecord> = results.iter().map(|(r, _)| r.clone()).collect();
    write_jsonl(&records, out)?;
    if let Some(w) = dump {
        write_posterior_dump(&results, w)?;
    }
    Ok(records)
}

pub fn write_jsonl(records: &[RunRecord], out: &mut dyn Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Resampled draws as CSV: `rep,theta_1,…,theta_d`.
pub fn write_posterior_dump(results: &[(RunRecord, Option<PosteriorDraws>)], out: &mut dyn Write) -> Result<()> {
    let dim = results.first().map_or(0, |(r, _)| r.dim);
    let mut header = String::from("rep");
    for j in 1..=dim {
        write!(header, ",theta_{j}").unwrap();
    }
    writeln!(out, "{header}")?;
    for (record, posterior) in results {
        for draw in posterior.iter().flat_map(|p| &p.draws) {
            let mut line = record.rep.to_string();
            for x in draw {
                write!(line, ",{x}").unwrap();
            }
            writeln!(out, "{line}")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Parse JSON Lines records, rejecting any line with a different schema.
pub fn read_jsonl(input: impl BufRead) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::Record { line: line_no, message: e.to_string() })?;
        match value.get("schema").and_then(|s| s.as_str()) {
            Some(RECORD_SCHEMA) => {}
            Some(other) => {
                return Err(Error::Record {
                    line: line_no,
                    message: format!("schema `{other}` does not match `{RECORD_SCHEMA}`"),
                })
            }
            None => return Err(Error::Record { line: line_no, message: "missing schema field".into() }),
        }
        let record =
            serde_json::from_value(value).map_err(|e| Error::Record { line: line_no, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}

/// Aggregate statistics of one (algorithm, example, dim, pattern) group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub algorithm: Algorithm,
    pub example: String,
    pub dim: usize,
    pub pattern: Option<u8>,
    pub reps: usize,
    pub failures: usize,
    pub mean_ln_z: f64,
    pub std_ln_z: f64,
    pub reference: Option<f64>,
    /// `mean(ln ẑ)/reference − 1`.
    pub rel_bias: Option<f64>,
    /// `std(ln ẑ)/|mean(ln ẑ)|`, on the log scale like the bias.
    pub cov: f64,
    pub mean_ln_z_sis: Option<f64>,
    pub std_ln_z_sis: Option<f64>,
    pub mean_n_cal: f64,
    /// Mean of `ESS/n_cal` over repetitions.
    pub mean_ess_ratio: f64,
    /// Mean per-coordinate K-S statistic, when recorded.
    pub mean_ks: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub rows: Vec<AggregateRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

type GroupKey = (Algorithm, String, usize, Option<u8>);

/// Group records and compute the aggregate statistics.
pub fn report_command(records: &[RunRecord]) -> Result<AggregateReport> {
    let mut groups: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.algorithm, r.example.clone(), r.dim, r.pattern)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((algorithm, example, dim, pattern), group) in groups {
        let ok: Vec<&RunRecord> = group.iter().copied().filter(|r| r.ln_z_mis.is_some()).collect();
        if ok.is_empty() {
            return Err(Error::Record { line: 0, message: format!("group {example}/{dim} has no successful runs") });
        }
        let ln_z: Vec<f64> = ok.iter().filter_map(|r| r.ln_z_mis).collect();
        let (mean_ln_z, std_ln_z) = mean_std(&ln_z);
        let reference = example.parse::<Benchmark>().ok().and_then(|b| reference_log_evidence(b, dim));
        let sis: Vec<f64> = ok.iter().filter_map(|r| r.ln_z_sis).collect();
        let (mean_ln_z_sis, std_ln_z_sis) = if sis.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&sis);
            (Some(m), Some(s))
        };
        let ratios: Vec<f64> = ok.iter().map(|r| r.ess.unwrap_or(0.0) / r.n_cal.max(1) as f64).collect();
        let n_cal: Vec<f64> = ok.iter().map(|r| r.n_cal as f64).collect();
        let ks: Vec<&Vec<f64>> = ok.iter().filter_map(|r| r.ks.as_ref()).collect();
        let mean_ks = (!ks.is_empty()).then(|| {
            (0..ks[0].len()).map(|j| ks.iter().map(|k| k[j]).sum::<f64>() / ks.len() as f64).collect()
        });
        rows.push(AggregateRow {
            algorithm,
            example,
            dim,
            pattern,
            reps: ok.len(),
            failures: group.len() - ok.len(),
            mean_ln_z,
            std_ln_z,
            reference,
            rel_bias: reference.map(|r| mean_ln_z / r - 1.0),
            cov: std_ln_z / mean_ln_z.abs(),
            mean_ln_z_sis,
            std_ln_z_sis,
            mean_n_cal: mean_std(&n_cal).0,
            mean_ess_ratio: mean_std(&ratios).0,
            mean_ks,
        });
    }
    Ok(AggregateReport { rows })
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), ToString::to_string)
}

impl AggregateReport {
    pub const CSV_HEADER: &'static str = "algorithm,example,dim,pattern,reps,failures,mean_ln_z,std_ln_z,reference,\
rel_bias,cov,mean_ln_z_sis,std_ln_z_sis,mean_n_cal,mean_ess_ratio,mean_ks";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let ks = r
                .mean_ks
                .as_ref()
                .map(|v| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.algorithm.id(),
                r.example,
                r.dim,
                opt(&r.pattern),
                r.reps,
                r.failures,
                r.mean_ln_z,
                r.std_ln_z,
                opt(&r.reference),
                opt(&r.rel_bias),
                r.cov,
                opt(&r.mean_ln_z_sis),
                opt(&r.std_ln_z_sis),
                r.mean_n_cal,
                r.mean_ess_ratio,
                ks
            )
            .unwrap();
        }
        s
    }

    /// Fixed-width summary with percentages.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<6} {:<7} {:>4} {:>5} {:>11} {:>9} {:>9} {:>8} {:>11} {:>10} {:>9}\n",
            "alg", "example", "dim", "reps", "mean ln z", "ref", "bias %", "c.o.v. %", "SIS ln z", "N_cal", "ESS/N %"
        );
        for r in &self.rows {
            let fmt_opt = |v: Option<f64>, scale: f64, prec: usize| {
                v.map_or("-".to_string(), |x| format!("{:.*}", prec, x * scale))
            };
            writeln!(
                s,
                "{:<6} {:<7} {:>4} {:>5} {:>11.3} {:>9} {:>9} {:>8.3} {:>11} {:>10.0} {:>9.3}",
                r.algorithm.id(),
                r.example,
                r.dim,
                r.reps,
                r.mean_ln_z,
                fmt_opt(r.reference, 1.0, 2),
                fmt_opt(r.rel_bias, 100.0, 3),
                100.0 * r.cov,
                fmt_opt(r.mean_ln_z_sis, 1.0, 3),
                r.mean_n_cal,
                100.0 * r.mean_ess_ratio
            )
            .unwrap();
        }
        s
    }
}

/// Per-parameter posterior summary of a damage pattern against pattern 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DamageRow {
    pub parameter: String,
    pub theta_true: f64,
    pub mean: f64,
    pub std: f64,
    pub baseline_mean: f64,
    /// `mean/baseline_mean − 1`.
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DamageReport {
    pub pattern: u8,
    pub ln_z: f64,
    pub baseline_ln_z: f64,
    pub rows: Vec<DamageRow>,
}

impl DamageReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pattern,parameter,theta_true,mean,std,baseline_mean,change\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.pattern, r.parameter, r.theta_true, r.mean, r.std, r.baseline_mean, r.change
            )
            .unwrap();
        }
        s
    }

    /// Stiffness rows only.
    pub fn stiffness(&self) -> impl Iterator<Item = &DamageRow> {
        self.rows.iter().filter(|r| r.parameter.starts_with('k'))
    }
}

/// Identify pattern 0 and `pattern` with the configured algorithm and compare.
/// Uses repetition 0 of each.
pub fn fem_command(config: &RunConfig, pattern: u8) -> Result<DamageReport> {
    let run = |p: u8| -> Result<(RunRecord, FemCase)> {
        let cfg = RunConfig { fem_pattern: Some(p), reps: 1, ..config.clone() };
        cfg.validate()?;
        let Problem::Fem(case) = cfg.problem()? else { unreachable!("FEM pattern set") };
        let (record, _) = with_workers(cfg.workers, || run_one(&cfg, &Problem::Fem(case.clone()), 0))?;
        match &record.error {
            Some(e) => Err(Error::Numerical(format!("pattern {p}: {e}"))),
            None => Ok((record, case)),
        }
    };
    let (base, _) = run(0)?;
    let (target, case) = run(pattern)?;
    let n = case.building.n_stories();
    let (bm, tm, ts) = (
        base.posterior_mean.unwrap_or_default(),
        target.posterior_mean.unwrap_or_default(),
        target.posterior_std.unwrap_or_default(),
    );
    if tm.len() != 2 * n || bm.len() != 2 * n {
        return Err(Error::Numerical("posterior summary is empty".into()));
    }
    let rows = (0..2 * n)
        .map(|j| DamageRow {
            parameter: if j < n { format!("k{}", j + 1) } else { format!("m{}", j - n + 1) },
            theta_true: case.theta_true[j],
            mean: tm[j],
            std: ts[j],
            baseline_mean: bm[j],
            change: tm[j] / bm[j] - 1.0,
        })
        .collect();
    Ok(DamageReport {
        pattern,
        ln_z: target.ln_z_mis.unwrap_or(f64::NAN),
        baseline_ln_z: base.ln_z_mis.unwrap_or(f64::NAN),
        rows,
    })
}
