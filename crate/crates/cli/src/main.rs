//! `iconf`: invariant-confluence analysis, checking and simulation.
//!
//! Exit status: 0 when the run is clean, 1 when coordination is required, a
//! counterexample is found or an invariant is violated, 2 on errors.

mod commands;
mod report;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iconfluence::sim::{CommitProtocol, Partition, SimConfig, Strategy};
use report::Report;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "iconf", version, about = "Invariant-confluence analysis, checking and simulation")]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,
    /// Also write the report to this file (in the selected format).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Seed of every random choice.
    #[arg(long, env = "ICONF_SEED", default_value_t = 1, global = true)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    /// The primary result table only.
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Static classification of every transaction against every invariant.
    Analyze {
        /// Workload spec file.
        spec: PathBuf,
    },
    /// Randomized search for diamonds whose merge violates an invariant.
    Check(CheckArgs),
    /// Simulates a spec workload.
    Simulate {
        spec: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Runs the TPC-C workload and audits the consistency conditions.
    Tpcc(TpccArgs),
    /// Runs one simulation per parameter value and tabulates the results.
    Sweep {
        #[command(subcommand)]
        target: SweepTarget,
    },
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub spec: PathBuf,
    /// Diamonds to try per row.
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// Most transactions per branch.
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    /// One row per (transaction, invariant) instead of per invariant over
    /// the whole transaction set.
    #[arg(long)]
    pub each: bool,
}

/// Simulator settings; unset flags keep the configured values.
#[derive(Debug, Clone, Default, Args)]
pub struct SimArgs {
    /// TOML file with the full configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// coordination-free | coordinated-2pl | coordinated-2pc-model.
    #[arg(long, value_parser = |s: &str| s.parse::<Strategy>())]
    pub strategy: Option<Strategy>,
    /// Number of simulated servers (replicas).
    #[arg(long, visible_alias = "replicas")]
    pub servers: Option<usize>,
    #[arg(long)]
    pub clients: Option<usize>,
    /// Simulated run length.
    #[arg(long, visible_alias = "duration")]
    pub duration_ms: Option<f64>,
    /// Constant one-way network delay.
    #[arg(long)]
    pub delay_ms: Option<f64>,
    #[arg(long)]
    pub anti_entropy_ms: Option<f64>,
    #[arg(long)]
    pub exec_cost_us: Option<u64>,
    #[arg(long)]
    pub think_time_us: Option<u64>,
    /// Partition between two replicas, `A-B@START..END` in milliseconds.
    /// Repeatable.
    #[arg(long, value_parser = parse_partition)]
    pub partition: Vec<Partition>,
}

impl SimArgs {
    pub fn apply(&self, cfg: &mut SimConfig, seed: u64) {
        cfg.seed = seed;
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(n) = self.servers {
            cfg.replicas = n;
        }
        if let Some(n) = self.clients {
            cfg.clients = n;
        }
        if let Some(d) = self.duration_ms {
            cfg.duration_ms = d;
        }
        if let Some(d) = self.delay_ms {
            let partitions = std::mem::take(&mut cfg.network.partitions);
            cfg.network = iconfluence::sim::NetworkModel::constant(d);
            cfg.network.partitions = partitions;
        }
        if let Some(d) = self.anti_entropy_ms {
            cfg.anti_entropy_interval_ms = d;
        }
        if let Some(c) = self.exec_cost_us {
            cfg.exec_cost_us = c;
        }
        if let Some(t) = self.think_time_us {
            cfg.think_time_us = t;
        }
        cfg.network.partitions.extend(self.partition.iter().cloned());
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct TpccArgs {
    #[arg(long)]
    pub warehouses: Option<usize>,
    /// Fraction of New-Orders supplied by a remote warehouse, in [0, 1].
    #[arg(long)]
    pub distributed_fraction: Option<f64>,
    #[arg(long)]
    pub payment_fraction: Option<f64>,
    #[arg(long)]
    pub delivery_fraction: Option<f64>,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Subcommand)]
enum SweepTarget {
    /// Sweeps a TPC-C parameter. In a `servers` sweep, warehouses and
    /// clients are per server; `distributed-fraction` values are percents.
    Tpcc {
        #[arg(long, value_enum)]
        over: TpccParam,
        /// Values: `1,2,4`, `1..8` or `0..100:10`.
        #[arg(long, value_parser = parse_values)]
        values: Values,
        #[command(flatten)]
        tpcc: TpccArgs,
    },
    /// Sweeps a simulator parameter for a spec workload.
    Simulate {
        spec: PathBuf,
        #[arg(long, value_enum)]
        over: SimParam,
        #[arg(long, value_parser = parse_values)]
        values: Values,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Commit throughput of two-phase commit against the number of servers.
    Commit {
        #[arg(long, value_parser = |s: &str| s.parse::<CommitProtocol>(), default_value = "d2pc")]
        protocol: CommitProtocol,
        /// Constant round-trip time.
        #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
        rtt_ms: Option<f64>,
        /// File of round-trip time samples in milliseconds, one per line.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, value_parser = parse_values, default_value = "2..8")]
        servers: Values,
        #[arg(long, default_value_t = 10_000)]
        rounds: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TpccParam {
    Servers,
    Warehouses,
    Clients,
    DistributedFraction,
    DelayMs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimParam {
    Servers,
    Clients,
    DelayMs,
    DurationMs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Values(pub Vec<f64>);

fn parse_values(s: &str) -> Result<Values, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("not a number: `{t}`"));
    if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (num(hi)?, num(step)?),
            None => (num(rest)?, 1.0),
        };
        let lo = num(lo)?;
        if !(step > 0.0) || hi < lo {
            return Err(format!("empty range `{s}`"));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok(Values((0..=n).map(|i| lo + step * i as f64).collect()));
    }
    s.split(',').map(num).collect::<Result<_, _>>().map(Values)
}

fn parse_partition(s: &str) -> Result<Partition, String> {
    let bad = || format!("expected `A-B@START..END`, got `{s}`");
    let (pair, span) = s.split_once('@').ok_or_else(bad)?;
    let (a, b) = pair.split_once('-').ok_or_else(bad)?;
    let (start, end) = span.split_once("..").ok_or_else(bad)?;
    Ok(Partition {
        a: a.trim().parse().map_err(|_| bad())?,
        b: b.trim().parse().map_err(|_| bad())?,
        start_ms: start.trim().parse().map_err(|_| bad())?,
        end_ms: end.trim().parse().map_err(|_| bad())?,
    })
}

fn run(cli: &Cli, command: String) -> Result<Report, String> {
    let seed = cli.seed;
    match &cli.command {
        Command::Analyze { spec } => commands::analyze(command, seed, spec),
        Command::Check(args) => commands::check(command, seed, args),
        Command::Simulate { spec, sim } => commands::simulate(command, seed, spec, sim),
        Command::Tpcc(args) => commands::tpcc(command, seed, args),
        Command::Sweep { target } => match target {
            SweepTarget::Tpcc { over, values, tpcc } => commands::sweep_tpcc(command, seed, *over, &values.0, tpcc),
            SweepTarget::Simulate {
                spec,
                over,
                values,
                sim,
            } => commands::sweep_simulate(command, seed, spec, *over, &values.0, sim),
            SweepTarget::Commit {
                protocol,
                rtt_ms,
                samples,
                servers,
                rounds,
            } => commands::sweep_commit(command, seed, *protocol, *rtt_ms, samples.as_deref(), &servers.0, *rounds),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = std::iter::once("iconf".to_string())
        .chain(std::env::args().skip(1))
        .collect::<Vec<_>>()
        .join(" ");
    let report = match run(&cli, command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let rendered = match cli.format {
        Format::Text => report.render_text(),
        Format::Json => report.json(),
        Format::Csv => report.table.csv(),
    };
    print!("{rendered}");
    if let Some(path) = &cli.output {
        if let Err(e) = std::fs::write(path, &rendered) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    if report.flagged {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_lists_and_ranges_parse() {
        assert_eq!(parse_values("1,2,4").unwrap().0, vec![1.0, 2.0, 4.0]);
        assert_eq!(parse_values("1..4").unwrap().0, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(parse_values("0..100:25").unwrap().0, vec![0.0, 25.0, 50.0, 75.0, 100.0]);
        assert!(parse_values("5..1").is_err());
        assert!(parse_values("a,b").is_err());
    }

    #[test]
    fn partitions_parse() {
        let p = parse_partition("0-1@10..50.5").unwrap();
        assert_eq!((p.a, p.b, p.start_ms, p.end_ms), (0, 1, 10.0, 50.5));
        assert!(parse_partition("0-1").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
