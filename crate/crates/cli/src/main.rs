//! `quasisol`: runs counterexample, rate-study and single-solve configurations.
//!
//! Exit codes: 0 all assertions passed, 2 some assertion failed, 1 error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use quasisol_core::config::{self, CounterexampleConfig, SolveConfig, StudyConfig};
use quasisol_core::experiments::{
    emit_results, run_counterexample, run_solve, run_study_config, write_curves, write_json, Assertion,
    CounterexampleReport, OutputFormat,
};

#[derive(Parser)]
#[command(name = "quasisol", version, about = "Ivanov, Morozov and Tikhonov regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads for rate studies; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Ivanov/Morozov versus Tikhonov on the cubic counterexample.
    Counterexample(Io),
    /// Convergence-rate study over a list of noise levels.
    Rates(Io),
    /// One regularized solve at a single noise level.
    Solve(Io),
}

#[derive(clap::Args)]
struct Io {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

fn report(label: &str, assertions: &[Assertion]) -> bool {
    let mut ok = true;
    for a in assertions {
        let status = match (a.passed, a.asserted) {
            (true, true) => "pass",
            (false, true) => {
                ok = false;
                "FAIL"
            }
            (false, false) => "note",
            (true, false) => "info",
        };
        if !a.passed || !a.asserted {
            eprintln!("[{status}] {label}: {} ({})", a.name, a.detail);
        }
    }
    ok
}

fn prepare(io: &Io) -> Result<()> {
    fs::create_dir_all(&io.out).with_context(|| format!("creating {}", io.out.display()))
}

fn counterexample(cli: &Cli, io: &Io) -> Result<bool> {
    let mut cfg: CounterexampleConfig = config::load(&io.config)?;
    if let Some(seed) = cli.seed {
        cfg.counterexample.seed = seed;
    }
    let rep = run_counterexample(&cfg.counterexample, cfg.solver.as_ref())?;
    prepare(io)?;
    write_curves(&rep, &io.out.join("curves.csv"))?;
    match cli.format {
        Format::Json => write_json(&rep, &io.out.join("counterexample.json"))?,
        Format::Csv => write_counterexample_table(&rep, &io.out.join("counterexample.csv"))?,
    }
    for d in &rep.deltas {
        println!(
            "delta {:<8} ivanov {:.9} morozov {:.9} min tikhonov separation {:.4}",
            d.delta, d.ivanov_x, d.morozov_x, d.min_separation
        );
    }
    for k in &rep.kernel {
        println!("delta {:<8} kernel min margin {:.3e} |p(x0)| {:.1e}", k.delta, k.min_margin, k.p_at_x0);
    }
    Ok(report("counterexample", &rep.assertions))
}

fn write_counterexample_table(rep: &CounterexampleReport, path: &Path) -> Result<()> {
    let mut text = String::from("delta,alpha,tikhonov_oracle_x,tikhonov_solver_x,separation,ivanov_x,morozov_x\n");
    for d in &rep.deltas {
        for t in &d.tikhonov {
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                d.delta, t.alpha, t.oracle_x, t.solver_x, t.separation, d.ivanov_x, d.morozov_x
            ));
        }
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn rates(cli: &Cli, io: &Io) -> Result<bool> {
    let mut cfg: StudyConfig = config::load(&io.config)?;
    if let Some(seed) = cli.seed {
        cfg.study.seed = seed;
    }
    let reports = run_study_config(&cfg, cli.jobs)?;
    prepare(io)?;
    let ext = match cli.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    emit_results(&reports, &io.out.join(format!("results.{ext}")), cli.format.into())?;
    let mut ok = true;
    for r in &reports {
        let slope = r.slope.map_or("n/a".to_string(), |s| format!("{s:.4}"));
        println!("{} rule {}: slope {slope}, {}", r.study_id, r.rule, if r.all_passed { "passed" } else { "FAILED" });
        for s in &r.summaries {
            println!("  delta {:.3e}  mean {} {:.4e}  misfit {:.4e}  R {:.6}", s.delta, r.error_measure, s.mean_error, s.mean_misfit, s.mean_r);
        }
        ok &= report(&format!("{} {}", r.study_id, r.rule), &r.assertions);
    }
    Ok(ok)
}

fn solve(cli: &Cli, io: &Io) -> Result<bool> {
    let mut cfg: SolveConfig = config::load(&io.config)?;
    if let Some(seed) = cli.seed {
        cfg.solve.seed = seed;
    }
    let rep = run_solve(&cfg)?;
    prepare(io)?;
    match cli.format {
        Format::Json => write_json(&rep, &io.out.join("solve.json"))?,
        Format::Csv => {
            let mut text = String::from("index,x\n");
            for (i, v) in rep.x.iter().enumerate() {
                text.push_str(&format!("{i},{v}\n"));
            }
            let path = io.out.join("solve.csv");
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    println!(
        "{} rule {}: parameter {:.6e}, misfit {:.4e}, R {:.6} (exact {:.6}), L2 error {:.4e}",
        rep.problem, rep.rule, rep.rho_or_alpha, rep.misfit, rep.r_value, rep.r_true, rep.l2_error
    );
    Ok(report("solve", &rep.assertions))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Counterexample(io) => counterexample(&cli, io),
        Command::Rates(io) => rates(&cli, io),
        Command::Solve(io) => solve(&cli, io),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            // library errors already embed their source in the message
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
