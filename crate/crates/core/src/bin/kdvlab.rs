use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kdvlab::harness::{
    cmd_ep, cmd_kdv, cmd_profiles, cmd_report, cmd_sweep, exit, exit_code, parse_eps_list, ExperimentConfig,
    SweepChecks,
};
use kdvlab::LabError;

#[derive(Parser)]
#[command(name = "kdvlab", version, about = "KdV limit of the ion-acoustic Euler-Poisson system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the KdV equation and tabulate its invariants.
    Kdv(Common),
    /// Build the four-profile expansion and its residual cascade.
    Profiles(Common),
    /// Solve the Euler-Poisson system from well-prepared data, one run per ε.
    Ep(Common),
    /// ε-sweep of remainder norms, elliptic ratios and first-profile errors.
    Sweep(Common),
    /// Summarize an existing sweep directory.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exit with status 4 when an acceptance threshold is missed.
    #[arg(long)]
    check: bool,
    /// Output directory (overrides KDVLAB_OUT_DIR and the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated ε values replacing the configured list.
    #[arg(long)]
    eps: Option<String>,
}

fn load(c: &Common) -> Result<ExperimentConfig, LabError> {
    let path = c.config.as_ref().ok_or_else(|| LabError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(list) = &c.eps {
        cfg.eps = parse_eps_list(list)?;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn verdict(check: bool, failures: Vec<String>) -> i32 {
    for f in &failures {
        eprintln!("check failed: {f}");
    }
    if check && !failures.is_empty() {
        exit::CHECK
    } else {
        exit::OK
    }
}

fn run(cli: Cli) -> Result<i32, LabError> {
    match cli.command {
        Command::Kdv(c) => {
            let cfg = load(&c)?;
            let out = cfg.resolve_out_dir(c.out.as_deref());
            let s = cmd_kdv(&cfg, &out)?;
            if let Some(e) = s.shape_error {
                println!("shape error {e:.3e}");
            }
            println!("drift mass {:.3e} momentum {:.3e} energy {:.3e}", s.mass_drift, s.momentum_drift, s.energy_drift);
            Ok(verdict(c.check, s.failures(&cfg)))
        }
        Command::Profiles(c) => {
            let cfg = load(&c)?;
            let out = cfg.resolve_out_dir(c.out.as_deref());
            let s = cmd_profiles(&cfg, &out)?;
            println!("{}", s.sign_line);
            println!("max residual cascade {:.3e}", s.max_cascade);
            Ok(verdict(c.check, s.failures(&cfg)))
        }
        Command::Ep(c) => {
            let cfg = load(&c)?;
            let out = cfg.resolve_out_dir(c.out.as_deref());
            let runs = cmd_ep(&cfg, &out)?;
            let mut failures = Vec::new();
            for r in &runs {
                println!("eps {} dt {:.3e} newton {} poisson {:.3e} {}", r.eps, r.dt, r.newton_iterations, r.max_poisson_residual, r.status);
                if r.status != "ok" {
                    failures.push(format!("eps {}: {}", r.eps, r.status));
                }
            }
            if failures.len() == runs.len() {
                return Err(LabError::Numeric(failures.join("; ")));
            }
            Ok(verdict(c.check, failures))
        }
        Command::Sweep(c) => {
            let cfg = load(&c)?;
            let out = cfg.resolve_out_dir(c.out.as_deref());
            let report = cmd_sweep(&cfg, &out)?;
            print!("{}", std::fs::read_to_string(out.join("summary.txt"))?);
            if report.rows.iter().all(|r| !r.ok()) {
                return Err(LabError::Numeric("every sweep row failed".into()));
            }
            let checks = SweepChecks::evaluate(&report, cfg.tolerances.lemma_c1);
            let failed = checks.verdicts.iter().filter(|v| !v.pass).map(|v| v.name.clone()).collect();
            Ok(verdict(c.check, failed))
        }
        Command::Report(c) => {
            let (dir, c1) = match &c.config {
                Some(_) => {
                    let cfg = load(&c)?;
                    (cfg.resolve_out_dir(c.out.as_deref()), cfg.tolerances.lemma_c1)
                }
                None => {
                    let dir = c.out.clone().or_else(|| std::env::var_os(kdvlab::harness::OUT_DIR_ENV).map(PathBuf::from));
                    (dir.ok_or_else(|| LabError::Config("report needs --out, --config or KDVLAB_OUT_DIR".into()))?, 4.0)
                }
            };
            let (report, text) = cmd_report(&dir, c1)?;
            print!("{text}");
            let checks = SweepChecks::evaluate(&report, c1);
            let failed = checks.verdicts.iter().filter(|v| !v.pass).map(|v| v.name.clone()).collect();
            Ok(verdict(c.check, failed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
