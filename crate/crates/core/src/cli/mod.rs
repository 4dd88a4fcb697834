//! Command-line experiment runner: `run`, `verify` and `sweep`.
//!
//! Exit codes: 0 success, 1 failed certificate or I/O error, 2 bad
//! configuration or arguments, 3 noise-gain contract violation, 4 numeric
//! divergence.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diagnostics::{checkpoint_summary, doob_ratio, summary_csv, CheckpointSummary};
use crate::error::EngineError;
use crate::noise::{
    three_series_certificate, CertificateBounds, CertificateStatus, NoiseKind, NoiseModel,
    SeriesRegime,
};
use crate::operators::{default_radius, verify_r2, R2_SLACK};
use crate::rng::stream_rng;
use crate::sa::{
    constant_sequence, run_controlled, run_deterministic, summable_sequence, Trajectory,
};
use crate::schedule::robbins_monro_report;
use crate::series::Verdict;
use crate::space::{smoothness_residual, GridFunction, NormKind};

use config::{BoundsSpec, EngineSpec, GainSpec, RegimeSpec, SequenceSpec};
pub use config::{ConfigError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "banach-sa",
    version,
    about = "Stochastic approximation experiments on function spaces"
)]
pub struct Cli {
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true, env = "SA_OUT_DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for seeds and Monte Carlo replications.
    #[arg(long, global = true, env = "SA_JOBS")]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every seed of an experiment and write a run directory.
    Run { config: PathBuf },
    /// Check the convergence conditions of an experiment.
    Verify { config: PathBuf },
    /// Run an experiment once per value of one configuration key.
    Sweep {
        config: PathBuf,
        /// Dotted key path, e.g. `problem.gamma`.
        #[arg(long)]
        axis: String,
        /// Comma-separated TOML values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Contract(String),
    Divergence(String),
    Io(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Contract(_) => 3,
            Self::Divergence(_) => 4,
            Self::Io(_) | Self::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Contract(m) => write!(f, "contract violation: {m}"),
            Self::Divergence(m) => write!(f, "divergence: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
            Self::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.0)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::GainContract { .. } => Self::Contract(e.to_string()),
            EngineError::Divergence { .. } => Self::Divergence(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .is_test(cfg!(test))
        .try_init();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start worker pool: {e}");
            return 1;
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Run { config } => load(config).and_then(|c| {
            let out = output_dir(&c, cli.out.as_deref());
            cmd_run(&c, &out).map(|_| ())
        }),
        Command::Verify { config } => load(config).and_then(|c| {
            let report = cmd_verify(&c)?;
            print!("{}", report.table());
            if report.any_fail() {
                Err(CliError::Failed("at least one certificate FAILED".into()))
            } else {
                Ok(())
            }
        }),
        Command::Sweep {
            config,
            axis,
            values,
        } => read(config).and_then(|text| {
            let base: toml::Value =
                toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
            let cfg = ExperimentConfig::from_value(base.clone())?;
            let out = output_dir(&cfg, cli.out.as_deref());
            cmd_sweep(&base, axis, values, &out).map(|_| ())
        }),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    Ok(ExperimentConfig::from_toml(&read(path)?)?)
}

fn output_dir(cfg: &ExperimentConfig, over: Option<&Path>) -> PathBuf {
    over.map_or_else(|| PathBuf::from(&cfg.output.dir), Path::to_path_buf)
}

/// Result of `run`: one trajectory per seed plus the cross-seed summary.
#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub seeds: Vec<u64>,
    pub trajectories: Vec<Trajectory>,
    pub summary: Vec<CheckpointSummary>,
}

/// Runs all seeds into a temporary directory and renames it to `out`
/// only when every seed succeeded.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let space = cfg.build_space()?;
    let problem = cfg.build_problem(&space)?;
    let schedule = cfg.build_schedule()?;
    let x0 = cfg.run.x0.build(&space).map_err(CliError::Config)?;
    let n_steps = cfg.run.n_steps;
    let seeds = if cfg.run.engine == EngineSpec::Deterministic {
        vec![cfg.seeds()[0]]
    } else {
        cfg.seeds()
    };

    let trajectories: Vec<Trajectory> = match cfg.run.engine {
        EngineSpec::Deterministic => {
            let seq = cfg.run.sequence.expect("validated");
            let h = |f: config::FunctionSpec| f.build(&space).map_err(CliError::Config);
            let traj = match seq {
                SequenceSpec::Zero => {
                    let z = space.zeros();
                    run_deterministic(
                        &problem,
                        &move |_| z.clone(),
                        &schedule,
                        cfg.run.psi,
                        &x0,
                        n_steps,
                    )
                }
                SequenceSpec::Summable { h: f } => {
                    let z = summable_sequence(h(f)?, schedule.clone());
                    run_deterministic(&problem, &z, &schedule, cfg.run.psi, &x0, n_steps)
                }
                SequenceSpec::Constant { h: f } => {
                    let z = constant_sequence(h(f)?);
                    run_deterministic(&problem, &z, &schedule, cfg.run.psi, &x0, n_steps)
                }
            }?;
            vec![traj]
        }
        engine => {
            let noise = match cfg.build_noise(&space)? {
                Some(n) => n,
                None => {
                    NoiseModel::gaussian(0.0, space).map_err(|e| CliError::Config(e.to_string()))?
                }
            };
            let n0 = schedule
                .start_index(problem.theta(), n_steps.max(1_000_000))
                .unwrap_or(0);
            let noise = noise.with_scale_table(n0 + n_steps);
            let gain = match engine {
                EngineSpec::Controlled => cfg.run.gain.unwrap_or(GainSpec::Constant { value: 1.0 }),
                _ => GainSpec::Constant { value: 1.0 },
            };
            let c_bound = if engine == EngineSpec::Controlled {
                cfg.run.c_bound
            } else {
                1.0
            };
            let results: Vec<Result<Trajectory, EngineError>> = seeds
                .par_iter()
                .map(|&seed| {
                    let mut g = gain.build();
                    let t = run_controlled(
                        &problem,
                        &noise,
                        &schedule,
                        g.as_mut(),
                        c_bound,
                        &x0,
                        n_steps,
                        seed,
                    );
                    t.map(|mut t| {
                        if engine == EngineSpec::Stochastic {
                            t.metadata.engine = "stochastic";
                        }
                        t
                    })
                })
                .collect();
            results.into_iter().collect::<Result<_, _>>()?
        }
    };
    info!("{} runs finished", trajectories.len());

    let summary = checkpoint_summary(&trajectories);
    let tmp = temp_sibling(out)?;
    let written = write_run(&tmp, cfg, &seeds, &trajectories, &summary);
    if let Err(e) = written {
        let _ = std::fs::remove_dir_all(&tmp);
        return Err(e.into());
    }
    if out.exists() {
        std::fs::remove_dir_all(out)?;
    }
    std::fs::rename(&tmp, out)?;
    Ok(RunOutcome {
        dir: out.to_path_buf(),
        seeds,
        trajectories,
        summary,
    })
}

fn temp_sibling(out: &Path) -> Result<PathBuf, CliError> {
    let parent = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent)?;
    let name = out
        .file_name()
        .ok_or_else(|| CliError::Config(format!("invalid output directory {}", out.display())))?
        .to_string_lossy();
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    std::fs::create_dir_all(&tmp)?;
    Ok(tmp)
}

fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    seeds: &[u64],
    runs: &[Trajectory],
    summary: &[CheckpointSummary],
) -> std::io::Result<()> {
    let mut meta = String::new();
    let config_json = serde_json::json!({ "record": "config", "config": cfg });
    meta.push_str(&config_json.to_string());
    meta.push('\n');
    for (seed, t) in seeds.iter().zip(runs) {
        meta.push_str(&t.metadata_json());
        meta.push('\n');
        let tag = if cfg.run.engine == EngineSpec::Deterministic {
            "_deterministic".to_string()
        } else {
            format!("_seed{seed}")
        };
        if cfg.run.checkpoints {
            t.write_files(dir, &tag)?;
        } else {
            std::fs::write(dir.join(format!("errors{tag}.csv")), t.error_csv())?;
        }
    }
    std::fs::write(dir.join("metadata.jsonl"), meta)?;
    std::fs::write(dir.join("summary.csv"), summary_csv(summary))
}

/// One row of the verification table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub detail: String,
    pub status: CertificateStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub regime: RegimeSpec,
    pub rows: Vec<CheckRow>,
}

impl VerifyReport {
    pub fn any_fail(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.status == CertificateStatus::Fail)
    }

    pub fn status(&self, check: &str) -> Option<CertificateStatus> {
        self.rows
            .iter()
            .find(|r| r.check == check)
            .map(|r| r.status)
    }

    pub fn table(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.check.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!(
            "regime: {:?}\n{:<w$}  {:<12}  detail\n",
            self.regime, "check", "status"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<w$}  {:<12}  {}",
                r.check,
                r.status.to_string(),
                r.detail
            );
        }
        out
    }
}

fn status_when(cond: bool) -> CertificateStatus {
    if cond {
        CertificateStatus::Pass
    } else {
        CertificateStatus::Fail
    }
}

fn verdict_status(v: Verdict, want: Verdict) -> CertificateStatus {
    match v {
        Verdict::Inconclusive => CertificateStatus::Inconclusive,
        v => status_when(v == want),
    }
}

/// Runs every certificate that applies to the configured regime.
pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<VerifyReport, CliError> {
    let space = cfg.build_space()?;
    let problem = cfg.build_problem(&space)?;
    let schedule = cfg.build_schedule()?;
    let noise = cfg.build_noise(&space)?;
    let v = cfg.verify;
    let regime = v
        .regime
        .unwrap_or(match noise.as_ref().map(NoiseModel::kind) {
            Some(NoiseKind::IndependentMartingale { .. }) => RegimeSpec::Martingale,
            Some(NoiseKind::HeavyTailedGlobal { .. }) => RegimeSpec::SmoothSpace,
            Some(NoiseKind::HeavyTailedPointwise { .. }) => RegimeSpec::Lebesgue,
            _ => RegimeSpec::Gaussian,
        });
    let n_max = v.series_terms;
    let mut rows = Vec::new();

    let rm = robbins_monro_report(&schedule, n_max)
        .map_err(|e| CliError::Config(format!("verify.series_terms: {e}")))?;
    rows.push(CheckRow {
        check: "sum alpha_n diverges".into(),
        detail: format!(
            "partial sum {:.6e} after {n_max} terms",
            rm.sum_alpha.total()
        ),
        status: verdict_status(rm.sum_alpha.verdict, Verdict::Diverges),
    });

    match regime {
        RegimeSpec::Gaussian | RegimeSpec::Martingale => rows.push(CheckRow {
            check: "sum alpha_n^2 converges".into(),
            detail: format!("partial sum {:.6e}", rm.sum_alpha_sq.total()),
            status: verdict_status(rm.sum_alpha_sq.verdict, Verdict::Converges),
        }),
        RegimeSpec::SmoothSpace | RegimeSpec::Lebesgue => {
            let series_regime = if regime == RegimeSpec::Lebesgue {
                SeriesRegime::Lebesgue
            } else {
                let p = match (space.smoothness(), space.norm_kind()) {
                    (Some(s), _) => s.p,
                    (None, NormKind::Lp(p)) => p.min(2.0),
                    (None, NormKind::Sup) => {
                        return Err(CliError::Config(
                            "space: the sup norm is not uniformly smooth; use norm = \"lp\"".into(),
                        ))
                    }
                };
                SeriesRegime::UniformlySmooth { p }
            };
            let bounds = match v.bounds {
                BoundsSpec::Logarithmic => CertificateBounds::logarithmic(n_max),
                BoundsSpec::Model => noise
                    .as_ref()
                    .and_then(|n| n.certificate_bounds(&schedule, n_max))
                    .ok_or_else(|| {
                        CliError::Config("verify.bounds: \"model\" needs heavy-tailed noise".into())
                    })?,
            };
            let report = three_series_certificate(&bounds, &schedule, series_regime, n_max)
                .map_err(|e| CliError::Config(e.to_string()))?;
            for c in report.certificates {
                rows.push(CheckRow {
                    check: format!("{} converges", c.series),
                    detail: format!(
                        "partial sum {:.6e}, condensation exponent {}",
                        c.report.total(),
                        c.report
                            .condensation_exponent
                            .map_or("n/a".into(), |s| format!("{s:.3}"))
                    ),
                    status: c.status,
                });
            }
        }
    }

    let x0 = cfg.run.x0.build(&space).map_err(CliError::Config)?;
    let radius = v.r2_radius.unwrap_or_else(|| default_radius(&problem, &x0));
    let ratio = verify_r2(&problem, v.r2_samples, radius, v.seed);
    rows.push(CheckRow {
        check: "contraction toward the root".into(),
        detail: format!(
            "max ratio {ratio:.6} vs rho {:.6} (theta {}, {} samples)",
            problem.rho(),
            problem.theta(),
            v.r2_samples
        ),
        status: status_when(ratio <= problem.rho() + R2_SLACK),
    });

    if regime == RegimeSpec::Martingale {
        if let Some(model) = noise.as_ref() {
            let est = doob_ratio(model, v.doob_replications, v.seed)
                .map_err(|e| CliError::Config(format!("verify.doob_replications: {e}")))?;
            rows.push(CheckRow {
                check: "maximal inequality ratio <= 4".into(),
                detail: format!("{:.4} +- {:.4}", est.ratio, est.standard_error),
                status: status_when(est.ratio <= 4.0 + 3.0 * est.standard_error),
            });
        }
    }

    if let Some(s) = space.smoothness() {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..v.smoothness_pairs as u64 {
            let mut rng = stream_rng(v.seed ^ 0x534D_4F4F, i);
            let mut draw = || {
                GridFunction::from_fn(space.m(), space.d(), |_, out| {
                    out.iter_mut().for_each(|x| *x = rng.sample(StandardNormal))
                })
                .expect("finite samples")
            };
            let (x, y) = (draw(), draw());
            let scale = space.norm(&x).powf(s.p) + space.norm(&y).powf(s.p);
            let r =
                smoothness_residual(&x, &y, &space).map_err(|e| CliError::Config(e.to_string()))?;
            worst = worst.max(r / scale.max(1e-300));
        }
        rows.push(CheckRow {
            check: "smoothness inequality".into(),
            detail: format!(
                "p = {}, D = {}, worst relative residual {worst:.3e}",
                s.p, s.constant
            ),
            status: status_when(worst <= 1e-10),
        });
    }

    Ok(VerifyReport { regime, rows })
}

/// Sets `path` (dotted) in `value`; the key must already exist.
pub fn set_path(value: &mut toml::Value, path: &str, new: toml::Value) -> Result<(), CliError> {
    let unknown = || CliError::Config(format!("unknown parameter path `{path}`"));
    let mut cur = value;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(unknown)?;
        let slot = table.get_mut(*part).ok_or_else(unknown)?;
        if i + 1 == parts.len() {
            *slot = new;
            return Ok(());
        }
        cur = slot;
    }
    Err(unknown())
}

fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

/// Final-checkpoint summary of every sweep point.
#[derive(Debug)]
pub struct SweepOutcome {
    pub points: Vec<(String, CheckpointSummary)>,
    pub dirs: Vec<PathBuf>,
}

pub fn cmd_sweep(
    base: &toml::Value,
    axis: &str,
    values: &[String],
    out: &Path,
) -> Result<SweepOutcome, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("--values: need at least one value".into()));
    }
    let mut configs = Vec::new();
    for v in values {
        let mut cfg = base.clone();
        set_path(&mut cfg, axis, parse_value(v))?;
        configs.push((v.clone(), ExperimentConfig::from_value(cfg)?));
    }
    std::fs::create_dir_all(out)?;
    let runs: Vec<(String, PathBuf, Option<CheckpointSummary>)> = configs
        .par_iter()
        .map(|(v, cfg)| {
            let dir = out.join(format!("{axis}={v}"));
            let outcome = cmd_run(cfg, &dir)?;
            Ok((v.clone(), dir, outcome.summary.last().copied()))
        })
        .collect::<Result<_, CliError>>()?;
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    for (v, dir, last) in runs {
        if let Some(last) = last {
            points.push((v, last));
        }
        dirs.push(dir);
    }
    let mut csv = String::from("value,n,q25,median,q75\n");
    for (v, s) in &points {
        let _ = writeln!(
            csv,
            "{v},{},{},{},{}",
            s.n,
            crate::fmt_f64(s.q25),
            crate::fmt_f64(s.median),
            crate::fmt_f64(s.q75)
        );
    }
    std::fs::write(out.join("sweep_summary.csv"), csv)?;
    Ok(SweepOutcome { points, dirs })
}
