//! scanlab: synthesize primitive-generalization datasets, train seq2seq
//! models on them, and reproduce the distribution/capacity/transfer
//! experiments from declarative recipes.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use scanlab_core::dataset::{
    build_add_jump_split, build_injected_split, build_multi_isolated_split, build_random_split,
    build_remapped_split, colors_canonical_split, read_dataset, write_dataset, DatasetSpec,
    DistributionScheme, Exposure, Split,
};
use scanlab_core::eval::exact_match_accuracy;
use scanlab_core::grammar::GrammarFamily;
use scanlab_core::harness::{
    describe_recipe, emit_report, list_recipes, recipe, run_experiment, ExperimentConfig,
};
use scanlab_core::model::load_checkpoint;
use scanlab_core::train::{run_single, TrainConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "scanlab",
    about = "Grammar-synthesized SCAN/Colors variants and seq2seq generalization experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset variant and write it as train.txt/test.txt.
    Gen {
        /// Builder: add-jump | colors | remap | multi-isolated | random |
        /// injected
        #[arg(long)]
        dataset: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Example-primitive count for the injected builder.
        #[arg(long, default_value_t = 3)]
        n_primitives: usize,
        /// Training-size cap |T| for the injected builder.
        #[arg(long)]
        size_cap: Option<usize>,
        /// Allocation scheme: uniform | linear | quadratic | skewed.
        #[arg(long, default_value = "uniform")]
        scheme: String,
        /// Isolated primitive count (multi-isolated builder).
        #[arg(long, default_value_t = 10)]
        n_isolated: usize,
        /// Train fraction (random builder).
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one model on a dataset directory and save a checkpoint.
    Train {
        /// Dataset directory (as written by `gen`).
        #[arg(long)]
        dataset: PathBuf,
        /// Architecture: transformer | lstm.
        #[arg(long, default_value = "transformer")]
        arch: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint's exact-match accuracy on a dataset's test set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Emit embedding-distance and t-SNE reports for a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment from a recipe or a TOML config file.
    Run {
        /// Shipped recipe name (see `list`).
        #[arg(long, conflicts_with = "config")]
        recipe: Option<String>,
        /// Experiment config file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (defaults to out/<experiment-id>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reduced-scale profile: fewer seeds and epochs, trimmed axes.
        #[arg(long)]
        ci: bool,
    },
    /// Aggregate a results.csv into plot-ready mean/std tables.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the shipped experiment recipes.
    List,
    /// Print a recipe's fully resolved configuration.
    Describe { name: String },
}

fn parse_scheme(name: &str) -> Result<DistributionScheme> {
    Ok(match name {
        "uniform" => DistributionScheme::uniform_capped(),
        "linear" => DistributionScheme::Linear,
        "quadratic" => DistributionScheme::Quadratic,
        "skewed" => DistributionScheme::skewed(),
        other => bail!("unknown scheme '{other}'"),
    })
}

fn build_dataset(
    dataset: &str,
    n_primitives: usize,
    size_cap: Option<usize>,
    scheme: &str,
    n_isolated: usize,
    fraction: f64,
    seed: u64,
) -> Result<Split> {
    Ok(match dataset {
        "add-jump" => build_add_jump_split()?,
        "colors" => colors_canonical_split(),
        "remap" => build_remapped_split()?,
        "multi-isolated" => build_multi_isolated_split(n_isolated, seed)?,
        "random" => build_random_split(fraction, seed)?,
        "injected" => {
            if n_primitives < 3 {
                bail!("injected datasets keep the three original example primitives");
            }
            let spec = DatasetSpec {
                base: GrammarFamily::Scan,
                extra_primitives: n_primitives - 3,
                scheme: parse_scheme(scheme)?,
                size_cap,
                exposure: Exposure::Definition,
                isolated_count: 1,
                seed,
            };
            build_injected_split(&spec)?
        }
        other => bail!("unknown dataset builder '{other}'"),
    })
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gen {
            dataset,
            out,
            n_primitives,
            size_cap,
            scheme,
            n_isolated,
            fraction,
            seed,
        } => {
            let split = build_dataset(
                &dataset,
                n_primitives,
                size_cap,
                &scheme,
                n_isolated,
                fraction,
                seed,
            )?;
            write_dataset(&split, &out)?;
            println!(
                "wrote {}: train={} test={}",
                out.display(),
                split.train.len(),
                split.test.len()
            );
            Ok(0)
        }
        Command::Train {
            dataset,
            arch,
            epochs,
            seed,
            out,
        } => {
            let split = read_dataset(&dataset)?;
            let (model_template, mut train_cfg) = match arch.as_str() {
                "transformer" => (
                    scanlab_core::model::ModelConfig::scan_transformer(0, 0),
                    TrainConfig::new(5e-4, 128, 150, 0.1),
                ),
                "lstm" => (
                    scanlab_core::model::ModelConfig::scan_lstm(0, 0),
                    TrainConfig::new(8e-3, 256, 150, 0.1),
                ),
                other => bail!("unknown architecture '{other}'"),
            };
            if let Some(e) = epochs {
                train_cfg.epochs = e;
            }
            let seed = seed.unwrap_or(0);
            let (model, record) = run_single(&split, &model_template, &train_cfg, seed)?;
            scanlab_core::model::save_checkpoint(&model, &out)?;
            println!(
                "trained {} epochs, final loss {:.4}, test accuracy {:.4}; checkpoint at {}",
                record.per_epoch_loss.len(),
                record.per_epoch_loss.last().unwrap_or(&f64::NAN),
                record.final_test_accuracy.unwrap_or(f64::NAN),
                out.display()
            );
            Ok(0)
        }
        Command::Eval {
            checkpoint,
            dataset,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let split = read_dataset(&dataset)?;
            let max_len = scanlab_core::train::max_decode_len(&split);
            let acc = exact_match_accuracy(&model, &split.test, max_len);
            println!(
                "exact-match accuracy: {acc:.4} over {} examples",
                split.test.len()
            );
            Ok(0)
        }
        Command::Analyze {
            checkpoint,
            dataset,
            out,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let split = read_dataset(&dataset)?;
            let artifacts = scanlab_core::harness::analyze_model(&model, &split)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join("analysis.json"),
                serde_json::to_vec_pretty(&artifacts)?,
            )?;
            let mut csv = String::from("token,role,x,y\n");
            for (token, role, x, y) in &artifacts.tsne {
                csv.push_str(&format!("{token},{role},{x},{y}\n"));
            }
            std::fs::write(out.join("tsne.csv"), csv)?;
            println!(
                "isolated '{}': mean distances euclidean={:.4} manhattan={:.4} cosine={:.4} (over {} example primitives)",
                artifacts.all_examples.isolated,
                artifacts.all_examples.average.euclidean,
                artifacts.all_examples.average.manhattan,
                artifacts.all_examples.average.cosine_distance,
                artifacts.all_examples.n_example_primitives,
            );
            Ok(0)
        }
        Command::Run {
            recipe: recipe_name,
            config,
            out,
            ci,
        } => {
            let mut cfg: ExperimentConfig = match (recipe_name, config) {
                (Some(name), None) => recipe(&name)?,
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    ExperimentConfig::from_toml(&text)?
                }
                _ => bail!("pass exactly one of --recipe or --config"),
            };
            if ci {
                scanlab_core::harness::apply_ci_profile(&mut cfg);
            }
            let out_dir = out
                .or_else(|| std::env::var_os("SCANLAB_OUT").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out").join(&cfg.experiment_id));
            let outcome = run_experiment(&cfg, &out_dir)?;
            println!(
                "experiment {} ({} rows) -> {}",
                outcome.experiment_id,
                outcome.rows.len(),
                out_dir.display()
            );
            for (label, stats) in &outcome.aggregates {
                println!(
                    "  {label}: mean {:.4} +- {:.4} over {} seeds",
                    stats.mean, stats.std, stats.n
                );
            }
            if outcome.had_failures() {
                for (label, seed, err) in &outcome.failures {
                    eprintln!("  FAILED {label} seed {seed}: {err}");
                }
                return Ok(2);
            }
            Ok(0)
        }
        Command::Report { results, out } => {
            let aggregates = emit_report(&results, &out)?;
            println!(
                "wrote {} aggregate rows to {}",
                aggregates.len(),
                out.display()
            );
            Ok(0)
        }
        Command::List => {
            for name in list_recipes() {
                println!("{name}");
            }
            Ok(0)
        }
        Command::Describe { name } => {
            print!("{}", describe_recipe(&name)?);
            Ok(0)
        }
    }
}
