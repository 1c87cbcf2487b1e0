use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use gcfest::baseline::estimate_baseline;
use gcfest::dgp::{simulate_panel, FirmPanel};
use gcfest::gcf::{
    build_lagged_frame, check_neyman_orthogonality, estimate, EstimateOptions, WeightingMode,
};
use gcfest::study::{self, StudyConfig, WeightingChoice};
use gcfest::Error;

#[derive(Parser)]
#[command(
    name = "gcfest",
    version,
    about = "CES production function and markup estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one panel from the `dgp.*` keys of a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write productivity, demand shocks and disturbances.
        #[arg(long)]
        keep_latents: bool,
    },
    /// Estimate on a panel table.
    Estimate {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Control-projection degree (GCF only).
        #[arg(long, default_value_t = 4)]
        degree: usize,
        /// Defaults to oracle when the panel has a metadata sidecar, two-step otherwise.
        #[arg(long, value_enum)]
        weighting: Option<Weighting>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte Carlo study.
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `study.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `study.jobs`.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print the table of a study summary.
    Report {
        #[arg(long)]
        summary: PathBuf,
    },
    /// Derivative check of the orthogonalized moments on one simulated panel.
    CheckOrthogonality {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the recognised config keys.
    Keys,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Gcf,
    Baseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weighting {
    Oracle,
    TwoStep,
    Identity,
}

fn write_out(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            keep_latents,
        } => {
            let cfg = StudyConfig::from_file(&config)?;
            let mut panel = simulate_panel(&cfg.dgp)?;
            if !keep_latents {
                panel = panel.without_latents();
            }
            std::fs::create_dir_all(&out)?;
            let path = out.join("panel.csv");
            panel.write_csv(&path)?;
            println!("wrote {} ({} rows)", path.display(), panel.len());
        }
        Command::Estimate {
            panel,
            method,
            degree,
            weighting,
            out,
        } => {
            let data = FirmPanel::read_csv(&panel)?;
            let weighting = match (weighting, &data.metadata) {
                (Some(Weighting::Oracle), None) => {
                    return Err(Error::Config(
                        "oracle weighting needs the panel's metadata sidecar".into(),
                    ))
                }
                (Some(Weighting::Oracle) | None, Some(meta)) => {
                    WeightingChoice::Oracle.mode(&meta.config)
                }
                (Some(Weighting::TwoStep) | None, _) => WeightingMode::TwoStep,
                (Some(Weighting::Identity), _) => WeightingMode::Identity,
            };
            let opts = EstimateOptions {
                weighting,
                ..EstimateOptions::default()
            };
            let mut res = match method {
                Method::Gcf => {
                    let plan = gcfest::gcf::InstrumentPlan::with_control_degree(degree);
                    plan.validate()?;
                    estimate(&data, &plan, &opts)?
                }
                Method::Baseline => estimate_baseline(&data, &Default::default(), &opts)?,
            };
            res.seed = data.metadata.as_ref().map(|m| m.config.seed);
            write_out(&out, &res.to_json()?)?;
            println!(
                "avg log markup {:.6}  alpha {:.6}  rho {:.6}  nu {:.6}  converged {}",
                res.avg_log_markup,
                res.theta_hat.alpha,
                res.theta_hat.rho,
                res.theta_hat.nu,
                res.converged
            );
        }
        Command::Montecarlo { config, out, jobs } => {
            let mut cfg = StudyConfig::from_file(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(jobs) = jobs {
                cfg.jobs = jobs;
            }
            let summary = study::run_study(&cfg)?;
            print!("{}", study::format_table(&summary));
            info!("outputs in {}", cfg.output_dir.display());
        }
        Command::Report { summary } => print!("{}", study::report(&summary)?),
        Command::CheckOrthogonality { config } => {
            let cfg = StudyConfig::from_file(&config)?;
            let panel = simulate_panel(&cfg.dgp)?;
            let table = build_lagged_frame(&panel)?;
            let report = check_neyman_orthogonality(
                &cfg.dgp.structural,
                &table,
                &cfg.plan(cfg.orthogonality_degree),
                &cfg.orthogonality,
            )?;
            println!(
                "{:>9} {:>16} {:>16}",
                "direction", "orthogonal", "fixed control"
            );
            for (i, d) in report.directions.iter().enumerate() {
                println!(
                    "{:>9} {:>16.3e} {:>16.3e}",
                    i, d.orthogonal_ratio, d.control_function_ratio
                );
            }
            println!(
                "tol {:e}: orthogonal pass rate {:.2}, fixed-control fail rate {:.2}",
                report.tol,
                report.orthogonal_pass_rate(),
                report.control_function_fail_rate()
            );
        }
        Command::Keys => {
            for (key, doc) in study::KEYS {
                println!("{key:<30} {doc}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
