//! Command-line driver: simulate panels, corrupt them, run discovery, score
//! results, and orchestrate full multi-seed pipelines from one TOML config.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numeric failure during
//! training or simulation, 3 I/O or parse failure. Verbosity comes from the
//! `RUST_LOG` environment variable only; all science parameters live in the
//! config file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cutsplus::config::{load_config_file, load_valid_config, EvalSettings};
use cutsplus::data::{load_csv, load_matrix, save_matrix, save_panel_csv, ObservationMask, TimeSeriesPanel};
use cutsplus::pipeline::{
    build_panel, corrupt_panel, derive_seed, evaluate_files, run_pipeline, MISSING_TOKEN,
};
use cutsplus::sim::GroundTruthGraph;
use cutsplus::trainer::fit;
use cutsplus::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cutsplus",
    version,
    about = "Granger-causal discovery on irregular multivariate time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the run config (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct OutDirArg {
    /// Directory for artifacts; created if absent. Nothing is written
    /// outside it.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clean panel (and its ground-truth graph) from the
    /// config's simulator section.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        out: OutDirArg,
    },
    /// Draw an observation mask over a stored panel using the config's
    /// missing section.
    Corrupt {
        #[command(flatten)]
        config: ConfigArg,
        /// Panel CSV to corrupt (headerless matrix or headered panel).
        #[arg(long)]
        panel: PathBuf,
        #[command(flatten)]
        out: OutDirArg,
    },
    /// Train on a stored panel and write edge probabilities, imputations,
    /// and the training trace.
    Discover {
        #[command(flatten)]
        config: ConfigArg,
        /// Panel CSV; cells equal to "NaN" count as missing.
        #[arg(long)]
        panel: PathBuf,
        /// Optional 0/1 mask CSV combined with the panel's own gaps.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Optional ground-truth adjacency CSV; enables per-epoch AUROC in
        /// the training trace.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        out: OutDirArg,
    },
    /// Score stored edge probabilities against a stored truth graph.
    Evaluate {
        /// Matrix of edge scores (CSV).
        #[arg(long)]
        scores: PathBuf,
        /// Ground-truth adjacency matrix (CSV of 0/1).
        #[arg(long)]
        truth: PathBuf,
        /// Print the off-diagonal AUROC as the headline number.
        #[arg(long = "exclude-diagonal")]
        exclude_diagonal: bool,
        #[command(flatten)]
        out: OutDirArg,
    },
    /// Write the JSON report plus the side-by-side SVG heatmap.
    Report {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Skip the heatmap.
        #[arg(long = "no-heatmap")]
        no_heatmap: bool,
        #[command(flatten)]
        out: OutDirArg,
    },
    /// Run simulate, corrupt, discover, and evaluate for every configured
    /// seed and aggregate the results.
    Pipeline {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        out: OutDirArg,
    },
    /// Check a config file and print all diagnostics.
    Validate {
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads a panel for `corrupt`/`discover`: headered panels with missing
/// tokens and plain matrices both work; the mask records the file's gaps.
fn load_panel_file(path: &Path) -> Result<(TimeSeriesPanel, ObservationMask)> {
    load_csv(path, ',', MISSING_TOKEN)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = load_valid_config(&config.config)?;
            ensure_dir(&out.out_dir)?;
            let data = build_panel(&cfg.simulator, derive_seed(cfg.seed, 1))?;
            save_matrix(data.panel.values(), &out.out_dir.join("panel.csv"))?;
            if let Some(truth) = &data.truth {
                save_matrix(&truth.as_f64(), &out.out_dir.join("truth.csv"))?;
            }
            println!(
                "simulated {} series x {} steps ({}); truth: {}",
                data.panel.n_series(),
                data.panel.length(),
                cfg.simulator.kind_name(),
                if data.truth.is_some() { "yes" } else { "no" }
            );
            Ok(())
        }
        Command::Corrupt { config, panel, out } => {
            let cfg = load_valid_config(&config.config)?;
            ensure_dir(&out.out_dir)?;
            let (panel, base_mask) = load_panel_file(&panel)?;
            let base = if base_mask.is_fully_observed() {
                None
            } else {
                Some(base_mask)
            };
            let mask = corrupt_panel(&panel, base.as_ref(), &cfg.missing, derive_seed(cfg.seed, 2))?;
            save_matrix(&mask.as_f64(), &out.out_dir.join("mask.csv"))?;
            save_panel_csv(&panel, &mask, &out.out_dir.join("observed.csv"), MISSING_TOKEN)?;
            println!(
                "kept {:.1}% of {} cells observed",
                100.0 * mask.observed_fraction(),
                mask.n_series() * mask.length()
            );
            Ok(())
        }
        Command::Discover {
            config,
            panel,
            mask,
            truth,
            out,
        } => {
            let cfg = load_valid_config(&config.config)?;
            ensure_dir(&out.out_dir)?;
            let (panel, file_mask) = load_panel_file(&panel)?;
            let mask = match mask {
                None => file_mask,
                Some(path) => {
                    let external = ObservationMask::from_f64(&load_matrix(&path)?)?;
                    cutsplus::pipeline::intersect_masks(&file_mask, &external)?
                }
            };
            let truth = match truth {
                None => None,
                Some(path) => Some(GroundTruthGraph::from_f64(&load_matrix(&path)?)?),
            };
            let mut train = cfg.train.clone();
            train.seed = derive_seed(cfg.seed, 3);
            let result = fit(&panel, &mask, &cfg.model, &train, truth.as_ref(), Some(&out.out_dir))?;
            save_matrix(&result.edge_probabilities, &out.out_dir.join("cpg.csv"))?;
            save_matrix(result.imputed.values(), &out.out_dir.join("imputed.csv"))?;
            let trace = serde_json::to_string_pretty(&result.trace)
                .map_err(|e| Error::Other(format!("trace serialization failed: {e}")))?;
            std::fs::write(out.out_dir.join("trace.json"), trace)
                .map_err(|e| Error::io(out.out_dir.join("trace.json"), e))?;
            let last = result.trace.last().expect("at least one epoch");
            println!(
                "trained {} epochs; final losses: prediction {:.6}, discovery {:.6}; mean edge probability {:.4}",
                result.trace.len(),
                last.loss_prediction,
                last.loss_discovery,
                last.mean_edge_probability
            );
            Ok(())
        }
        Command::Evaluate {
            scores,
            truth,
            exclude_diagonal,
            out,
        } => {
            let settings = EvalSettings {
                exclude_diagonal,
                heatmap: false,
            };
            let report = evaluate_files(&scores, &truth, &out.out_dir, &settings)?;
            let headline = if exclude_diagonal {
                report
                    .exclude_diagonal
                    .as_ref()
                    .map(|r| r.auroc)
                    .ok_or_else(|| {
                        Error::Config(
                            "off-diagonal truth is degenerate; cannot report exclude-diagonal AUROC"
                                .into(),
                        )
                    })?
            } else {
                report.include_diagonal.auroc
            };
            println!(
                "auroc {headline:.6} ({}); auprc {:.6}",
                if exclude_diagonal {
                    "diagonal excluded"
                } else {
                    "diagonal included"
                },
                report.include_diagonal.auprc
            );
            Ok(())
        }
        Command::Report {
            scores,
            truth,
            no_heatmap,
            out,
        } => {
            let settings = EvalSettings {
                exclude_diagonal: false,
                heatmap: !no_heatmap,
            };
            let report = evaluate_files(&scores, &truth, &out.out_dir, &settings)?;
            println!(
                "report written; auroc {:.6} (diagonal included)",
                report.include_diagonal.auroc
            );
            Ok(())
        }
        Command::Pipeline { config, out } => {
            let cfg = load_valid_config(&config.config)?;
            let summary = run_pipeline(&cfg, &out.out_dir)?;
            println!("{} seed(s) complete", summary.outcomes.len());
            if let Some(stats) = &summary.aggregate.auroc_include_diagonal {
                println!(
                    "auroc (diagonal included): mean {:.6} +/- {:.6} over {:?}",
                    stats.mean, stats.std, summary.aggregate.seeds
                );
            } else {
                println!("no ground truth available; nothing to score");
            }
            Ok(())
        }
        Command::Validate { config } => {
            let (parsed, diagnostics) = load_config_file(&config.config)?;
            for d in &diagnostics {
                println!("{d}");
            }
            let errors = diagnostics.iter().filter(|d| d.is_error()).count();
            if errors == 0 && parsed.is_some() {
                println!("config ok");
                Ok(())
            } else {
                Err(Error::Config(format!("{errors} error(s) in config")))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are not failures
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
