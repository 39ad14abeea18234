use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dagsearch_core::engine::{self, ConfigOverrides, RunMode};
use dagsearch_core::eval::TabularEvaluator;
use dagsearch_core::graph::{encode_graph, space_size};
use dagsearch_core::space::{enumerate_space, SpaceSpec};

/// Probabilistic architecture search over attributed DAGs.
#[derive(Parser)]
#[command(name = "dagsearch", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search: learned generator + epsilon-greedy prior exploration.
    Search {
        /// JSON config file (merged over --preset, if any)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Named preset: nasbench101, nasbench201, enas-macro-style
        #[arg(long)]
        preset: Option<String>,
        /// Master seed override
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for trace, checkpoint, and summary
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in the output directory
        #[arg(long)]
        resume: bool,
    },
    /// Draw graphs from a checkpointed generator.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        num: usize,
        /// Output file (newline-delimited JSON graph records)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print statistics for graphs in a newline-delimited JSON file.
    Stats {
        #[arg(long)]
        graphs: PathBuf,
    },
    /// Enumerate every graph of a small space.
    Enumerate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// Space preset name instead of --n/--d
        #[arg(long)]
        space: Option<String>,
    },
    /// Prior-only sampling under the same budget and trace format as search.
    BaselineRandom {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a tabular evaluator file.
    EvalTable {
        #[arg(long)]
        check: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> dagsearch_core::Result<()> {
    match command {
        Command::Search {
            config,
            preset,
            seed,
            out,
            resume,
        } => {
            let cfg = engine::load_config(
                config.as_deref(),
                preset.as_deref(),
                &ConfigOverrides {
                    master_seed: seed,
                    out_dir: None,
                },
            )?;
            let arts = engine::run(&cfg, &out, RunMode::Search, resume)?;
            println!(
                "search done: {} evaluations, best reward {}",
                arts.summary.accepted_evaluations,
                arts.summary
                    .best_reward
                    .map_or("n/a".to_string(), |r| r.to_string())
            );
            println!("artifacts in {}", arts.paths.out_dir.display());
            Ok(())
        }
        Command::Sample {
            checkpoint,
            num,
            out,
            seed,
        } => {
            let samples = engine::sample_from_checkpoint(&checkpoint, num, seed)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
            for (g, _logp) in &samples {
                writeln!(f, "{}", encode_graph(g))?;
            }
            f.flush()?;
            println!("wrote {} graphs to {}", samples.len(), out.display());
            Ok(())
        }
        Command::Stats { graphs } => {
            let text = std::fs::read_to_string(&graphs)?;
            println!("n,edge_count,clustering_coefficient,avg_shortest_path,io_path_count,io_avg_path,io_longest_path");
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let g = dagsearch_core::graph::decode_graph(line)?;
                let s = g.stats();
                let (pc, ap, lp) = match s.io {
                    Some(io) => (
                        io.path_count.to_string(),
                        io.avg_path.to_string(),
                        io.longest_path.to_string(),
                    ),
                    None => (String::new(), String::new(), String::new()),
                };
                println!(
                    "{},{},{},{},{},{},{}",
                    g.n_nodes(),
                    s.edge_count,
                    s.clustering_coefficient,
                    s.avg_shortest_path,
                    pc,
                    ap,
                    lp
                );
            }
            Ok(())
        }
        Command::Enumerate { n, d, space } => {
            let spec = match (space, n, d) {
                (Some(name), None, None) => SpaceSpec::preset(&name)?,
                (None, Some(n), Some(d)) => SpaceSpec::free("enumerated", n, d),
                _ => {
                    return Err(dagsearch_core::Error::Config(
                        "pass either --space PRESET or both --n and --d".into(),
                    ))
                }
            };
            eprintln!(
                "space size (unconstrained): {}",
                space_size(spec.n_nodes as u64, spec.d_ops as u64)
            );
            let graphs = enumerate_space(&spec)?;
            let stdout = std::io::stdout();
            let mut lock = std::io::BufWriter::new(stdout.lock());
            for g in &graphs {
                writeln!(lock, "{}", encode_graph(g))?;
            }
            lock.flush()?;
            eprintln!("{} valid graphs", graphs.len());
            Ok(())
        }
        Command::BaselineRandom {
            config,
            preset,
            seed,
            out,
        } => {
            let cfg = engine::load_config(
                config.as_deref(),
                preset.as_deref(),
                &ConfigOverrides {
                    master_seed: seed,
                    out_dir: None,
                },
            )?;
            let arts = engine::run_baseline(&cfg, &out)?;
            println!(
                "baseline done: {} evaluations, best reward {}",
                arts.summary.accepted_evaluations,
                arts.summary
                    .best_reward
                    .map_or("n/a".to_string(), |r| r.to_string())
            );
            Ok(())
        }
        Command::EvalTable { check } => {
            let table = TabularEvaluator::load(&check)?;
            println!("ok: {} entries", table.len());
            Ok(())
        }
    }
}
