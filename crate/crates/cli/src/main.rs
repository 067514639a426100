use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sspo_core::harness::{
    compare_runs, evaluate, load_checkpoint, probe_queries, sidecar_files, train_to_dir, write_probe_outputs,
    write_report, TrainConfig,
};
use sspo_core::taskgen::{read_manifest, write_manifest, TaskGenerator, TaskSpec};
use sspo_core::Error;

#[derive(Parser)]
#[command(name = "sspo", version, about = "Step-wise value probing and group-relative RL on a toy policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics, config, summary and checkpoint to a directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Greedy accuracy and mean response length of a checkpoint on a task manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
    },
    /// Direct vs CoT classification and step-value profiles for a task manifest.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Side-by-side comparison of runs (directories or metrics files); the first is compared against the second.
    Compare {
        #[arg(long, num_args = 2.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Updates averaged for the final values.
        #[arg(long, default_value_t = 1)]
        tail: usize,
    },
    /// CSV and SVG trajectories of entropy and response length for a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Write a task manifest.
    Tasks {
        /// Task spec as JSON; defaults to the chain task.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        num_keys: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-token advantages and gradient masks from trace and step-value JSONL files.
    Advantages {
        #[arg(long)]
        traces: PathBuf,
        /// Step-value profiles, one per trace; required unless the config method is grpo.
        #[arg(long)]
        values: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_config(path: &PathBuf) -> anyhow::Result<TrainConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TrainConfig::from_json(&text)?)
}

fn config_of_checkpoint(value: Option<&serde_json::Value>) -> anyhow::Result<TrainConfig> {
    Ok(match value {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("checkpoint config: {e}")))?,
        None => TrainConfig::default(),
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, out, seed } => {
            let mut cfg = read_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let output = train_to_dir(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&output.summary)?);
        }
        Command::Eval { checkpoint, tasks } => {
            let ck = load_checkpoint(&checkpoint)?;
            let cfg = config_of_checkpoint(ck.config.as_ref())?;
            let queries = read_manifest(&tasks)?;
            let result = evaluate(&ck.params, &ck.vocab, &queries, &cfg.sampling)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Probe { checkpoint, tasks, out } => {
            let ck = load_checkpoint(&checkpoint)?;
            let cfg = config_of_checkpoint(ck.config.as_ref())?;
            let queries = read_manifest(&tasks)?;
            let grammar = cfg.sampling.grammar(&ck.vocab)?;
            let records = probe_queries(&ck.params, &ck.vocab, &queries, cfg.sampling.max_len, cfg.value_mode, &grammar)?;
            for s in write_probe_outputs(&records, &out)? {
                println!("{}", s.csv_row());
            }
        }
        Command::Compare { runs, out, tail } => {
            let cmp = compare_runs(&runs, &out, tail)?;
            println!("{}", serde_json::to_string_pretty(&cmp)?);
        }
        Command::Report { run } => {
            let (csv, svg) = write_report(&run)?;
            println!("{}\n{}", csv.display(), svg.display());
        }
        Command::Tasks { spec, count, seed, num_keys, out } => {
            let spec: TaskSpec = match spec {
                Some(s) => serde_json::from_str(&s).map_err(|e| Error::Config(format!("task spec: {e}")))?,
                None => TaskSpec::default(),
            };
            let generator = TaskGenerator::new(spec, sspo_core::Vocabulary::standard(num_keys))?;
            write_manifest(&out, &generator.generate_set(seed, count)?)?;
        }
        Command::Advantages { traces, values, config, out } => {
            let cfg = match config {
                Some(p) => read_config(&p)?,
                None => TrainConfig::default(),
            };
            let count = sidecar_files(&traces, values.as_deref(), cfg.n, &cfg, &out)?;
            println!("{count}");
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) => e.exit_code() as u8,
        None if err.downcast_ref::<std::io::Error>().is_some() => 4,
        None => 2,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
