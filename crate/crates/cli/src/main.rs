use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rbsde_cli::exit;
use rbsde_cli::run::{default_name, execute, plan, Plan, RunOptions};
use rbsde_core::fixtures::{build, catalogue, Params};

#[derive(Parser)]
#[command(name = "rbsde", version, about = "Monte Carlo experiments for BSDEs with stochastic monotone generators")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every experiment of a configuration file.
    Run {
        config: PathBuf,
        /// Cap on worker threads (results do not depend on it).
        #[arg(long)]
        workers: Option<usize>,
        /// Artifact root (default: $RBSDE_ARTIFACT_DIR, else ./artifacts).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the fixture catalogue.
    ListFixtures,
    /// Check a configuration file without running it.
    ValidateConfig { config: PathBuf },
}

fn load(path: &Path) -> Result<Plan, i32> {
    let src = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        exit::IO
    })?;
    plan(&src, &default_name(path)).map_err(|errs| {
        for e in errs {
            eprintln!("{}", e.render(&path.display().to_string(), &src));
        }
        exit::SCHEMA
    })
}

fn list_fixtures(out: &mut impl Write) -> std::io::Result<()> {
    for info in catalogue() {
        writeln!(out, "{}", info.id)?;
        writeln!(out, "  {}", info.summary)?;
        let params: Vec<String> = info.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(out, "  params:    {}", params.join(" "))?;
        if let Ok(fx) = build(info.id, &Params::new()) {
            writeln!(out, "  horizon:   {}", rbsde_cli::experiments::horizon_label(&fx.horizon))?;
        }
        writeln!(out, "  recipe:    {}", info.recipe)?;
        writeln!(out, "  exercises: {}", info.exercises)?;
    }
    out.flush()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::ListFixtures => {
            // a closed pipe (e.g. `| head`) is not an error
            let _ = list_fixtures(&mut std::io::stdout().lock());
            exit::PASS
        }
        Cmd::ValidateConfig { config } => match load(&config) {
            Ok(p) => {
                println!("{}: ok ({} experiments)", config.display(), p.experiments.len());
                exit::PASS
            }
            Err(code) => code,
        },
        Cmd::Run { config, workers, out } => match load(&config) {
            Err(code) => code,
            Ok(p) => {
                let opts = RunOptions {
                    workers,
                    artifact_root: out,
                };
                match execute(&p, &opts) {
                    Err(e) => {
                        eprintln!("writing artifacts: {e}");
                        exit::IO
                    }
                    Ok(report) => {
                        println!("artifacts: {}", report.dir.display());
                        if report.pass() {
                            println!("all {} checks passed", report.checks.len());
                            exit::PASS
                        } else {
                            for id in &report.failed {
                                println!("FAIL {id}");
                            }
                            println!("{} of {} checks failed", report.failed.len(), report.checks.len());
                            exit::CHECK_FAILED
                        }
                    }
                }
            }
        },
    };
    ExitCode::from(code as u8)
}
