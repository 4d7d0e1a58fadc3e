use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtchain::design::{CostInputs, ProfitInputs};
use dtchain_cli::{calc, sweep, CliError, RunOptions};

/// Simulate and size a delay-tolerant proof-of-work payment chain.
#[derive(Parser)]
#[command(name = "dtchain", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file (or bundled scenario name) and write its artifacts.
    Run {
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override a setting, e.g. --set disturbance.link_delay_ms=100.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run every point of a sweep spec in parallel (workers from DTCHAIN_WORKERS).
    Sweep {
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerun a manifest.txt and check that every artifact digest matches.
    Verify { manifest: PathBuf },
    /// List the bundled scenarios and sweeps.
    Scenarios,
    /// Closed-form design calculators.
    Calc {
        #[command(subcommand)]
        model: Model,
    },
}

#[derive(Args)]
struct Output {
    /// Emit machine-readable CSV rows.
    #[arg(long)]
    csv: bool,
}

#[derive(Subcommand)]
enum Model {
    /// Total operating cost over the system lifetime.
    Cost {
        #[arg(long)]
        miners: f64,
        #[arg(long)]
        device_cost: f64,
        #[arg(long)]
        device_life_years: f64,
        #[arg(long)]
        years: f64,
        #[arg(long)]
        reward: f64,
        #[arg(long)]
        blocks: f64,
        #[arg(long)]
        bw_cost_per_bit: f64,
        #[arg(long)]
        bandwidth_bps: f64,
        #[arg(long)]
        connected_s: f64,
        #[arg(long)]
        service_periods: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Distribution of online miners.
    Outage {
        /// Per-miner online probabilities, comma separated.
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["miners", "p_d"])]
        p: Option<Vec<f64>>,
        #[arg(long, requires = "p_d")]
        miners: Option<u64>,
        /// Offline probability shared by every miner.
        #[arg(long, requires = "miners")]
        p_d: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        out: Output,
    },
    /// Expected per-block profit of one miner.
    Profit {
        #[arg(long)]
        reward: f64,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        hashrate: f64,
        #[arg(long)]
        mean_t: f64,
        #[arg(long)]
        miners: u64,
        #[command(flatten)]
        out: Output,
    },
    /// Connections each miner needs to reach all others within k hops.
    Connectivity {
        #[arg(long, required_unless_present = "sweep")]
        miners: Option<u64>,
        #[arg(long, required_unless_present = "sweep")]
        hops: Option<u32>,
        /// Table over k = 1..4 and 4..=100 miners, as CSV.
        #[arg(long, conflicts_with_all = ["miners", "hops"])]
        sweep: bool,
        #[command(flatten)]
        out: Output,
    },
    /// Expected payload of one block.
    Blockbits {
        #[arg(long)]
        lambda_t: f64,
        #[arg(long)]
        tx_bits: f64,
        #[arg(long)]
        mean_t: f64,
        #[command(flatten)]
        out: Output,
    },
}

fn print(report: calc::Report, out: &Output) {
    if out.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_text());
    }
}

fn calc_cmd(model: Model) -> Result<(), CliError> {
    match model {
        Model::Cost {
            miners,
            device_cost,
            device_life_years,
            years,
            reward,
            blocks,
            bw_cost_per_bit,
            bandwidth_bps,
            connected_s,
            service_periods,
            out,
        } => {
            let c = CostInputs {
                l_m: miners,
                d_m: device_cost,
                x_m: device_life_years,
                x_y: years,
                r: reward,
                x_b: blocks,
                c_bw: bw_cost_per_bit,
                bw: bandwidth_bps,
                t_c: connected_s,
                x_s: service_periods,
            };
            print(calc::cost(&c)?, &out);
        }
        Model::Outage { p, miners, p_d, k, out } => print(calc::outage(p.as_deref(), miners, p_d, k)?, &out),
        Model::Profit { reward, eta, hashrate, mean_t, miners, out } => {
            print(calc::profit(&ProfitInputs { r: reward, eta, h: hashrate, mean_t, l_m: miners })?, &out)
        }
        Model::Connectivity { miners, hops, sweep, out } => {
            if sweep {
                print!("{}", calc::connectivity_sweep_csv(&[1, 2, 3, 4], 4..=100)?);
            } else {
                let (m, k) = miners.zip(hops).expect("clap enforces --miners and --hops");
                print(calc::connectivity(m, k)?, &out);
            }
        }
        Model::Blockbits { lambda_t, tx_bits, mean_t, out } => print(calc::blockbits(lambda_t, tx_bits, mean_t)?, &out),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { scenario, out, seed, overrides } => {
            let report = dtchain_cli::run_scenario(&RunOptions { scenario, out: out.clone(), seed, overrides })?;
            print!("{}", report.summary);
            println!("wrote {} files to {}", report.files.len(), out.display());
        }
        Command::Sweep { spec, out } => {
            let workers = sweep::workers_from_env()?;
            let report = dtchain_cli::run_sweep(&spec, &out, workers)?;
            println!(
                "{} runs ({} values x {} seeds) of {} written to {}",
                report.runs,
                report.spec.values.len(),
                report.spec.seeds.len(),
                report.spec.param,
                out.display()
            );
        }
        Command::Verify { manifest } => {
            let n = dtchain_cli::verify_manifest(&manifest)?;
            println!("{n} artifacts reproduced exactly");
        }
        Command::Scenarios => {
            for (name, _) in dtchain_cli::bundled::SCENARIOS {
                println!("scenario {name}");
            }
            for (name, _) in dtchain_cli::bundled::SWEEPS {
                println!("sweep    {name}");
            }
        }
        Command::Calc { model } => calc_cmd(model)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors, matching validation failures.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
