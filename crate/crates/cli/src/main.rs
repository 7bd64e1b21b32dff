use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gbpc_core::behavior::GaussianBehavior;
use gbpc_core::trajectory::{self, excitation_rank};
use gbpc_harness::config::{ControllerKind, ExperimentConfig, Overrides};
use gbpc_harness::experiment::Experiment;
use gbpc_harness::verify::{self, Suite};
use gbpc_harness::{output, tools, HarnessError, Result};

const EXIT_HELP: &str = "Exit codes: 0 success, 1 other error, 2 infeasible control problem, \
3 config or input error, 4 verification failure.";

#[derive(Parser, Debug)]
#[command(name = "gbpc", version, about = "Gaussian-behavior predictive control experiments", after_help = EXIT_HELP)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(flatten)]
    overrides: OverrideArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct OverrideArgs {
    /// Relative singular-value cutoff for pseudoinverses.
    #[arg(long, global = true)]
    rank_tol: Option<f64>,
    /// Add δ·I to the estimated predictive covariance.
    #[arg(long, global = true)]
    jitter: Option<f64>,
    /// QP absolute tolerance.
    #[arg(long, global = true)]
    eps_abs: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the identification excitation run of a config as CSV (u_1.., y_1..).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Repetition index (offsets the data seed).
        #[arg(long, default_value_t = 0)]
        rep: usize,
    },
    /// Estimate a window behavior from data and save it as JSON.
    Identify {
        /// Trajectory CSV; defaults to the config's excitation run.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predictive mean and variance of future outputs.
    ///
    /// Prints CSV `step,channel,mean,var` with one row per future step and
    /// output channel.
    Predict {
        #[arg(long)]
        behavior: PathBuf,
        /// Past trajectory CSV (u_1.., y_1..), one row per step.
        #[arg(long)]
        wini: PathBuf,
        /// Future input CSV (u_1..), one row per step.
        #[arg(long)]
        uf: PathBuf,
    },
    /// Solve the configured control problem once and print the result as JSON.
    Control {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        controller: Option<ControllerKind>,
        /// Past trajectory CSV; defaults to the closed-loop warm-up.
        #[arg(long)]
        wini: Option<PathBuf>,
    },
    /// Receding-horizon closed-loop run.
    ///
    /// CSV columns: t, phase, u_1..u_m, y_1..y_p, wini_1..wini_{(m+p)·L_ini},
    /// stage_cost, iterations, lambda_effective. Warm-up rows leave the last
    /// fields empty. A JSON summary is written next to the CSV.
    ClosedLoop {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        controller: Option<ControllerKind>,
        /// Repetition index (offsets the data and noise seeds).
        #[arg(long, default_value_t = 0)]
        rep: usize,
    },
    /// Monte-Carlo realized cost over an ascending λ grid.
    ///
    /// CSV columns: lambda, mean, std, completed, failed.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated grid; defaults to control.lambda_grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        controller: Option<ControllerKind>,
    },
    /// Run the verification suites and print one line per check.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the predictive covariance in the DeePC equivalence check.
        #[arg(long)]
        inject_bug: bool,
        /// Print the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

fn load(path: &Path, o: &OverrideArgs, controller: Option<ControllerKind>) -> Result<Experiment> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(&Overrides {
        rank_tol: o.rank_tol,
        jitter: o.jitter,
        eps_abs: o.eps_abs,
        controller,
    });
    Experiment::from_config(cfg)
}

fn stdout_err(e: std::io::Error) -> HarnessError {
    HarnessError::io(Path::new("<stdout>"), e)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let o = &cli.overrides;
    match cli.command {
        Command::Simulate { config, out, rep } => {
            let exp = load(&config, o, None)?;
            let traj = exp.identification_data(rep)?;
            trajectory::write_csv(&traj, output::create(&out)?).map_err(|e| HarnessError::io(&out, e))?;
        }
        Command::Identify { data, config, out } => {
            let exp = load(&config, o, None)?;
            let traj = match &data {
                Some(path) => trajectory::load_csv(path, exp.dims()).map_err(|e| HarnessError::io(path, e))?,
                None => exp.identification_data(0)?,
            };
            let dm = exp.data_matrix(&traj)?;
            let gb = GaussianBehavior::estimate(&dm, exp.config.data.subtract_mean);
            let l = dm.l();
            let expected = exp.dims().m * l + exp.model.n();
            let rank = excitation_rank(&dm, expected, exp.config.rank_tol);
            println!(
                "data matrix {}x{}, rank {} (mL + n = {expected}{})",
                dm.w().nrows(),
                dm.cols(),
                rank.rank,
                if rank.satisfied {
                    ""
                } else {
                    ", not persistently exciting"
                }
            );
            let mut w = output::create(&out)?;
            writeln!(w, "{}", gb.to_json()).map_err(|e| HarnessError::io(&out, e))?;
        }
        Command::Predict { behavior, wini, uf } => {
            let text = std::fs::read_to_string(&behavior).map_err(|e| HarnessError::io(&behavior, e))?;
            let gb = GaussianBehavior::from_json(&text).map_err(|e| HarnessError::io(&behavior, e))?;
            let w_ini = trajectory::load_csv(&wini, gb.dims).map_err(|e| HarnessError::io(&wini, e))?;
            let u_f = tools::read_matrix_csv(&uf, gb.dims.m)?;
            let rank_tol = o.rank_tol.unwrap_or(gbpc_core::linalg::DEFAULT_RANK_TOL);
            let pred = tools::predict(&gb, &w_ini, &u_f, rank_tol)?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "step,channel,mean,var").map_err(stdout_err)?;
            for k in 0..pred.l_f * pred.p {
                let (step, ch) = (k / pred.p, k % pred.p + 1);
                writeln!(out, "{step},y_{ch},{},{}", pred.dist.mean[k], pred.dist.cov[(k, k)]).map_err(stdout_err)?;
            }
        }
        Command::Control {
            config,
            controller,
            wini,
        } => {
            let exp = load(&config, o, controller)?;
            let w_ini = match &wini {
                Some(path) => {
                    let t = trajectory::load_csv(path, exp.dims()).map_err(|e| HarnessError::io(path, e))?;
                    Some(t.window(0, t.len())?)
                }
                None => None,
            };
            let report = exp.control_once(w_ini)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::ClosedLoop {
            config,
            out,
            controller,
            rep,
        } => {
            let exp = load(&config, o, controller)?;
            let param = exp.require_parameter()?;
            let id = exp.identify(rep)?;
            let rec = exp.run_closed_loop(&id, rep, param)?;
            output::write_run_csv(&rec, output::create(&out)?)?;
            let summary = rec.summary(exp.config.run.steps);
            output::write_json(&summary, &output::summary_path(&out))?;
            println!(
                "{} steps, realized cost {}",
                summary.steps_completed, summary.realized_cost
            );
            if let Some(a) = &rec.abort {
                eprintln!("run aborted at t = {}: {}", a.t, a.message);
                return Ok(ExitCode::from(if a.infeasible { 2 } else { 1 }));
            }
        }
        Command::Sweep {
            config,
            grid,
            out,
            controller,
        } => {
            let exp = load(&config, o, controller)?;
            let grid = grid
                .or_else(|| exp.config.control.lambda_grid.clone())
                .ok_or_else(|| HarnessError::Config("no λ grid given (--grid or control.lambda_grid)".into()))?;
            let rows = exp.sweep(&grid)?;
            output::write_sweep_csv(&rows, output::create(&out)?)?;
            let mut stdout = std::io::stdout().lock();
            output::write_sweep_csv(&rows, &mut stdout)?;
        }
        Command::Verify {
            suite,
            seed,
            inject_bug,
            json,
        } => {
            let report = verify::run(suite, seed, inject_bug);
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                for c in &report.checks {
                    println!("{}", c.line());
                }
                let failed = report.checks.iter().filter(|c| !c.passed && !c.informational).count();
                println!("{} checks, {failed} failed", report.checks.len());
            }
            if !report.passed {
                return Ok(ExitCode::from(4));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // usage errors share the config-error exit code
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
