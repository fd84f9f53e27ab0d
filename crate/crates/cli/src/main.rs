use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ratiometric::config::{ExperimentConfig, Mode};
use ratiometric::controllers::ControllerKind;
use ratiometric::harness::{self, RunManifest, RunReport};
use ratiometric::model::{find_equilibria, InducerInput};

#[derive(Parser)]
#[command(name = "ratioctl", version = harness::VERSION, about = "Ratiometric control of toggle-switch cell populations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop trial.
    Simulate(RunArgs),
    /// Run M trials per controller and write the performance table.
    Campaign(RunArgs),
    /// List the equilibria of one cell under a constant input.
    Equilibria {
        /// Environmental aTc.
        #[arg(long, default_value_t = 0.0)]
        u_a: f64,
        /// Environmental IPTG.
        #[arg(long, default_value_t = 0.0)]
        u_p: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write equilibria.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Controller to run; a campaign runs all three when omitted.
    #[arg(long)]
    controller: Option<ControllerKind>,
    #[arg(long, default_value = "fixed")]
    mode: Mode,
    /// Trials per controller (campaign only). Defaults to 30 in fixed mode, 1 in agent mode.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML experiment configuration; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(command: &str, args: &RunArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let (controllers, trials) = if command == "simulate" {
        if args.trials.is_some_and(|m| m != 1) {
            bail!("simulate runs exactly one trial; use campaign for --trials");
        }
        (vec![args.controller.unwrap_or(ControllerKind::Mpc)], 1)
    } else {
        let m = args.trials.unwrap_or(match args.mode {
            Mode::Fixed => 30,
            Mode::Agent => 1,
        });
        (args.controller.map_or(ControllerKind::ALL.to_vec(), |k| vec![k]), m)
    };

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    log::info!("{command}: {} trial(s) of {:?} in {} mode, seed {}", trials, controllers, args.mode, args.seed);
    let results = harness::run_campaign(&cfg, &controllers, trials, args.mode, args.seed)?;

    let mut reports = Vec::with_capacity(results.len());
    for res in results {
        for (j, rec) in res.records.iter().enumerate() {
            harness::write_trial_bundle(&args.out, &format!("{}_{j}", res.report.controller), rec)?;
        }
        let r = &res.report;
        println!(
            "{:<9} e_bar {:.4}  e_bar_f {:.4}  t_s_mean {}  settled {}/{}  failed {}",
            r.controller.to_string(),
            r.e_bar,
            r.e_bar_f,
            r.t_s_mean.map_or("-".to_string(), |t| format!("{t:.1}")),
            r.settled,
            r.trials,
            r.failed
        );
        reports.push(res.report);
    }

    let report = RunReport { manifest: RunManifest::new(command, &cfg, args.mode, args.seed, trials, &controllers), reports };
    harness::write_report_json(&args.out.join("report.json"), &report)?;
    harness::write_table_csv(BufWriter::new(File::create(args.out.join("table3.csv"))?), &report.reports)?;
    log::info!("wrote results to {}", args.out.display());
    Ok(())
}

fn equilibria(u_a: f64, u_p: f64, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let input = InducerInput::new(u_a, u_p);
    input.validate()?;
    let report = find_equilibria(&input, &cfg.params);
    if let Some(msg) = &report.diagnostic {
        log::warn!("{msg}");
    }
    println!("{:>12} {:>12} {:>10} {:>14} {:>10}", "lacI", "tetR", "stability", "max Re(eig)", "residual");
    for e in &report.equilibria {
        println!(
            "{:>12.4} {:>12.4} {:>10} {:>14.6} {:>10.2e}",
            e.state.laci,
            e.state.tetr,
            format!("{:?}", e.stability).to_lowercase(),
            e.leading_eigenvalue,
            e.residual
        );
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let w = BufWriter::new(File::create(dir.join("equilibria.json"))?);
        serde_json::to_writer_pretty(w, &report)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(args) => run("simulate", args),
        Command::Campaign(args) => run("campaign", args),
        Command::Equilibria { u_a, u_p, config, out } => equilibria(*u_a, *u_p, config.as_deref(), out.as_deref()),
    }
}
