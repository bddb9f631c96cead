use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use epictl::config::{self, CliResult, ConfigFile, ExperimentKind};
use epictl::experiments;

/// Stochastic SIR control toolkit: simulation ensembles, closed-form
/// lock-down/vaccination curves, immunity networks and total-variation
/// reports.
#[derive(Parser)]
#[command(name = "epictl", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetName {
    Table1,
    Uk2021,
}

impl PresetName {
    fn as_str(self) -> &'static str {
        match self {
            PresetName::Table1 => "table1",
            PresetName::Uk2021 => "uk2021",
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a config file (TOML, or the JSON
    /// manifest of a previous run).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured simulation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory (takes precedence over EPICTL_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect a built-in preset; `--print` emits it as a complete config
    /// file on stdout.
    Preset {
        name: PresetName,
        #[arg(long)]
        print: bool,
    },
    /// Generate an immunity network, rewire it, and export the trace.
    Network {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        prob: f64,
        #[arg(long)]
        updates: usize,
        #[arg(long)]
        homophily: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Activity scalar gating edge additions (1 = always add).
        #[arg(long, default_value_t = 1.0)]
        activity: f64,
    },
    /// Total variation distance between two sampled columns.
    Tv {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Number of shared histogram bins.
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Column name for headed CSV inputs (default "I").
        #[arg(long)]
        column: Option<String>,
    },
}

/// Output-directory precedence: `--out` flag, then `EPICTL_OUT`, then the
/// config's own `output_dir`.
fn effective_out(flag: Option<PathBuf>, configured: &std::path::Path) -> PathBuf {
    flag.or_else(|| std::env::var_os("EPICTL_OUT").map(PathBuf::from))
        .unwrap_or_else(|| configured.to_path_buf())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Run { config, seed, out } => {
            let mut cfg = config::load_config(&config)?;
            if let Some(seed) = seed {
                cfg.sim.seed = seed;
            }
            cfg.output_dir = effective_out(out, &cfg.output_dir);
            let manifest = experiments::run_experiment(&cfg)?;
            println!(
                "{}: wrote {} file(s) to {}",
                cfg.experiment_kind.as_str(),
                manifest.outputs.len(),
                cfg.output_dir.display()
            );
            Ok(())
        }
        Cmd::Preset { name, print } => {
            let cfg = match name {
                PresetName::Table1 => config::preset_table1()?,
                PresetName::Uk2021 => config::preset_uk2021()?,
            };
            if print {
                print!("{}", config::to_toml_string(&cfg)?);
            } else {
                println!(
                    "preset {}: kind {}, horizon {}, {} steps, {} replicates, seed {} \
                     (use --print for the full config)",
                    name.as_str(),
                    cfg.experiment_kind.as_str(),
                    cfg.sim.t_end,
                    cfg.sim.n_steps,
                    cfg.sim.n_replicates,
                    cfg.sim.seed
                );
            }
            Ok(())
        }
        Cmd::Network {
            nodes,
            prob,
            updates,
            homophily,
            seed,
            out,
            activity,
        } => {
            let file = ConfigFile {
                experiment_kind: Some(ExperimentKind::NetworkTrace),
                ..ConfigFile::default()
            };
            let mut cfg = config::resolve(file)?;
            cfg.network.nodes = nodes;
            cfg.network.prob = prob;
            cfg.network.updates = updates;
            cfg.network.homophily = homophily;
            cfg.network.activity = activity;
            cfg.network.seed = seed;
            cfg.network.level_counts = if nodes == 100 {
                [21, 24, 18, 20, 17]
            } else {
                config::default_level_counts(nodes)
            };
            cfg.output_dir = effective_out(out, &cfg.output_dir);
            let manifest = experiments::run_experiment(&cfg)?;
            let fmt = |v: Option<serde_json::Value>| {
                v.and_then(|v| v.as_f64().map(|x| format!("{x:.4}")))
                    .unwrap_or_else(|| "n/a".into())
            };
            println!(
                "network_trace: wrote {} file(s) to {} (modularity {} -> {})",
                manifest.outputs.len(),
                cfg.output_dir.display(),
                fmt(manifest.meta.get("initial_modularity").cloned()),
                fmt(manifest.meta.get("final_modularity").cloned()),
            );
            Ok(())
        }
        Cmd::Tv { a, b, bins, column } => {
            let col = column.as_deref();
            let sa = experiments::read_csv_column(&a, col)?;
            let sb = experiments::read_csv_column(&b, col)?;
            let (tv, lo, hi) = experiments::histogram_tv(&sa, &sb, bins)?;
            println!(
                "samples: {} vs {}, {} bins on [{lo}, {hi}]",
                sa.len(),
                sb.len(),
                bins
            );
            println!("tv_sup = {}", tv.sup);
            println!("tv_coupling = {}", tv.coupling);
            println!("tv_partition = {}", tv.partition);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("epictl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
