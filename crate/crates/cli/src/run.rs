//! Running a configuration: artifact layout, manifest and verdicts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use rbsde_estimates::{write_checks_csv, CheckRow, Verdict};

use crate::config::{self, RunConfig, SchemaError, SCHEMA_VERSION};
use crate::experiments::{prepare, Prepared};

/// Environment variable naming the root directory for artifacts.
pub const ARTIFACT_ENV: &str = "RBSDE_ARTIFACT_DIR";

/// A parsed configuration whose experiments have all been resolved.
pub struct Plan {
    pub name: String,
    pub source: String,
    pub config: RunConfig,
    pub experiments: Vec<Prepared>,
}

/// Parses `src` and resolves every experiment. `default_name` names the
/// run when the config does not.
pub fn plan(src: &str, default_name: &str) -> Result<Plan, Vec<SchemaError>> {
    let config = config::parse(src)?;
    let mut errs = Vec::new();
    let mut experiments = Vec::new();
    for (j, e) in config.experiment.iter().enumerate() {
        match prepare(j, e, config.seed) {
            Ok(p) => experiments.push(p),
            Err(e) => errs.push(e),
        }
    }
    if !errs.is_empty() {
        return Err(errs);
    }
    Ok(Plan {
        name: config.name.clone().unwrap_or_else(|| default_name.to_string()),
        source: src.to_string(),
        config,
        experiments,
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Thread cap; `None` uses every available core. Results do not depend on it.
    pub workers: Option<usize>,
    /// Artifact root, overriding the environment and the default `artifacts`.
    pub artifact_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRecord {
    pub id: String,
    pub kind: &'static str,
    pub fixture: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub workers: Option<usize>,
    pub git_describe: String,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    pub experiments: Vec<ExperimentRecord>,
    /// Failing checks as `<experiment>.<check>`.
    pub failed: Vec<String>,
    pub pass: bool,
    pub config: RunConfig,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    /// Every check, with ids prefixed by the experiment id.
    pub checks: Vec<CheckRow>,
    pub failed: Vec<String>,
    pub manifest: Manifest,
}

impl RunReport {
    pub fn pass(&self) -> bool {
        self.failed.is_empty()
    }
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Directory for a run called `name`: `<root>/<name>`, the root taken from
/// the options, then `RBSDE_ARTIFACT_DIR`, then `artifacts`.
pub fn artifact_dir(name: &str, opts: &RunOptions) -> PathBuf {
    let root = opts
        .artifact_root
        .clone()
        .or_else(|| std::env::var_os(ARTIFACT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("artifacts"));
    root.join(name)
}

/// Runs every experiment in order. Experiment failures (errors as well as
/// failing checks) are recorded and the run continues; only artifact I/O
/// errors abort.
pub fn execute(plan: &Plan, opts: &RunOptions) -> std::io::Result<RunReport> {
    let dir = artifact_dir(&plan.name, opts);
    fs::create_dir_all(&dir)?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let t0 = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .map_err(std::io::Error::other)?;
    let mut checks = Vec::new();
    let mut records = Vec::new();
    for ex in &plan.experiments {
        let edir = dir.join(&ex.id);
        fs::create_dir_all(&edir)?;
        let t = Instant::now();
        eprintln!("[{}] {} on {} ...", ex.id, ex.kind.name(), ex.fixture_id);
        let (rows, error) = match pool.install(|| ex.run(&edir)) {
            Ok(rows) => (rows, None),
            Err(rbsde_core::Error::Io(e)) => return Err(e),
            Err(e) => {
                let msg = e.to_string();
                eprintln!("[{}] error: {msg}", ex.id);
                fs::write(edir.join("error.txt"), format!("{msg}\n"))?;
                let row = CheckRow {
                    check_id: "error".into(),
                    lhs: f64::NAN,
                    rhs: f64::NAN,
                    stderr: f64::NAN,
                    verdict: Verdict::Fail,
                };
                (vec![row], Some(msg))
            }
        };
        write_checks_csv(&rows, fs::File::create(edir.join("checks.csv"))?).map_err(into_io)?;
        let pass = rows.iter().all(|r| r.verdict.passed());
        for r in &rows {
            eprintln!("[{}] {:<8} {}", ex.id, r.verdict.to_string(), r.check_id);
        }
        checks.extend(rows.into_iter().map(|mut r| {
            r.check_id = format!("{}.{}", ex.id, r.check_id);
            r
        }));
        records.push(ExperimentRecord {
            id: ex.id.clone(),
            kind: ex.kind.name(),
            fixture: ex.fixture_id.clone(),
            seed: ex.seed,
            wall_time_s: t.elapsed().as_secs_f64(),
            error,
            pass,
        });
    }
    write_checks_csv(&checks, fs::File::create(dir.join("checks.csv"))?).map_err(into_io)?;
    let failed: Vec<String> = checks.iter().filter(|r| !r.verdict.passed()).map(|r| r.check_id.clone()).collect();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        name: plan.name.clone(),
        seed: plan.config.seed,
        workers: opts.workers,
        git_describe: git_describe(),
        started_unix_s: started,
        wall_time_s: t0.elapsed().as_secs_f64(),
        experiments: records,
        pass: failed.is_empty(),
        failed: failed.clone(),
        config: plan.config.clone(),
    };
    let mut w = fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    Ok(RunReport {
        dir,
        checks,
        failed,
        manifest,
    })
}

fn into_io(e: rbsde_core::Error) -> std::io::Error {
    match e {
        rbsde_core::Error::Io(e) => e,
        other => std::io::Error::other(other.to_string()),
    }
}

/// Name used when a config has none: the file stem.
pub fn default_name(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string()
}
