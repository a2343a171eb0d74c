use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kgan::audit::{duality_gap_audit, DEFAULT_BUDGET, DEFAULT_TOLERANCE};
use kgan::cli::report::{kernel_test, report_csv, REPORT_FILE, KERNEL_MAX_TOLERANCE, KERNEL_MEAN_TOLERANCE};
use kgan::cli::{audit_instance, parse_config, run_experiment, verify_report, ExperimentConfig};
use kgan::divergences::{verify_pairs, VERIFY_NODES, VERIFY_SEPARATIONS};
use kgan::duality::Regularizer;
use kgan::losses::Loss;
use kgan::trainer::Mode;
use kgan::Error;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "kgan", version, about = "Fenchel-dual generative training with random Fourier feature discriminators")]
struct Cli {
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator and write metrics, checkpoint, and samples.
    Train {
        #[arg(long, value_parser = ["dual", "primal"])]
        mode: Option<String>,
    },
    /// Compare each loss's optimal risk with its closed-form divergence expression.
    VerifyPairs {
        #[arg(long, default_value_t = kgan::cli::report::PAIR_TOLERANCE)]
        tol: f64,
    },
    /// Random Fourier feature approximation error on pairs in the radius-3 ball.
    KernelTest {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 2048)]
        features: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Solve the frozen-generator problem in primal and dual form and report the gap.
    DualityGap {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        m: usize,
        #[arg(long, default_value_t = 32)]
        features: usize,
        /// Loss when no config is given.
        #[arg(long, default_value = "logistic")]
        loss: String,
        /// l2 strength when no config is given.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
    },
    /// Run every verification check and write report.csv.
    Report {
        /// Replace every row's tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::BudgetExceeded { .. } => EXIT_CHECK_FAILED,
        _ => EXIT_INVALID,
    }
}

fn load_config(cli: &Cli) -> kgan::Result<Option<ExperimentConfig>> {
    let Some(path) = &cli.config else {
        return Ok(None);
    };
    let mut cfg = parse_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(Some(cfg))
}

fn run(cli: &Cli) -> kgan::Result<bool> {
    match &cli.command {
        Command::Train { mode } => {
            let mut cfg = load_config(cli)?
                .ok_or_else(|| Error::InvalidInput("train needs --config".into()))?;
            if let Some(mode) = mode {
                cfg.mode = mode.parse::<Mode>()?;
            }
            let summary = run_experiment(&cfg)?;
            if let Some(row) = summary.last_row() {
                println!(
                    "iter {} h {} g {} gap {} divergence {}",
                    row.iter, row.h, row.g_recovered, row.gap, row.div_estimate
                );
            }
            println!("artifacts in {}", summary.out_dir.display());
            Ok(true)
        }
        Command::VerifyPairs { tol } => {
            let checks = verify_pairs(&VERIFY_SEPARATIONS, VERIFY_NODES)?;
            println!("loss,mu,lhs_general_loss,rhs_closed_form,abs_diff");
            for c in &checks {
                println!("{},{},{},{},{}", c.loss, c.mu, c.general_loss, c.closed_form, c.abs_diff());
            }
            Ok(checks.iter().all(|c| c.abs_diff() <= *tol))
        }
        Command::KernelTest { dim, features, sigma } => {
            let seed = cli.seed.unwrap_or(kgan::cli::report::KERNEL_SEED);
            let e = kernel_test(*dim, *features, *sigma, seed)?;
            println!("dim,features,sigma,seed,mean_abs,max_abs");
            println!("{dim},{features},{sigma},{seed},{},{}", e.mean_abs, e.max_abs);
            Ok(e.mean_abs <= KERNEL_MEAN_TOLERANCE && e.max_abs <= KERNEL_MAX_TOLERANCE)
        }
        Command::DualityGap {
            n,
            m,
            features,
            loss,
            lambda,
            tol,
            budget,
        } => {
            let mut cfg = match load_config(cli)? {
                Some(cfg) => cfg,
                None => {
                    let mut cfg = ExperimentConfig::with_loss(loss.parse::<Loss>()?);
                    cfg.reg = Regularizer::l2(*lambda)?;
                    cfg
                }
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let problem = audit_instance(&cfg, *n, *m, *features)?;
            let a = duality_gap_audit(&problem, *tol, *budget)?;
            println!("loss,primal_opt,dual_opt,gap");
            println!("{},{},{},{}", cfg.loss, a.primal_opt, a.dual_opt, a.gap);
            Ok(a.gap >= -1e-8 && a.gap <= 1e-5 * (1.0 + a.primal_opt.abs()))
        }
        Command::Report { tol } => {
            let rows = verify_report(*tol)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join(REPORT_FILE), report_csv(&rows))?;
            let failed = rows.iter().filter(|r| !r.pass()).count();
            println!("{} checks, {} failed; wrote {}", rows.len(), failed, out.join(REPORT_FILE).display());
            Ok(failed == 0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
