//! End-to-end orchestration: simulate, corrupt, discover, evaluate, with a
//! self-describing artifact directory per seed and mean/std aggregation
//! across seeds.
//!
//! Every artifact is deterministic given its config (single-threaded, no
//! timestamps), so re-running a directory's embedded `config.toml`
//! reproduces the directory byte for byte.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{EvalSettings, RunConfig, SimulatorConfig};
use crate::data::{load_csv, load_matrix, save_matrix, save_panel_csv, ObservationMask, TimeSeriesPanel};
use crate::error::{Error, Result};
use crate::eval::{build_report, rmse_missing, save_heatmap, save_report, EvalReport};
use crate::sim::{apply_missing, gen_lorenz96, gen_var, GroundTruthGraph, MissingConfig};
use crate::trainer::{fit, zoh_fill, FitResult};

/// Current manifest schema tag.
pub const MANIFEST_SCHEMA: &str = "cuts-scope/manifest-v1";
/// Current aggregate schema tag.
pub const AGGREGATE_SCHEMA: &str = "cuts-scope/aggregate-v1";

/// Missing-value token used in all panel CSV artifacts.
pub const MISSING_TOKEN: &str = "NaN";

/// Deterministic per-stage seed derivation (splitmix64 mixing), so one
/// master seed drives simulator, corruption, and training independently.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix64(master ^ splitmix64(stream.wrapping_add(1)))
}

const STREAM_SIMULATOR: u64 = 1;
const STREAM_MISSING: u64 = 2;
const STREAM_TRAIN: u64 = 3;

/// Output of the simulate stage. `base_mask` carries gaps already present
/// in an external CSV; generated panels are fully observed here.
pub struct SimulatedData {
    pub panel: TimeSeriesPanel,
    pub truth: Option<GroundTruthGraph>,
    pub base_mask: Option<ObservationMask>,
}

/// Produces the panel from whichever source the config names. `seed`
/// overrides the seed inside the simulator section (external CSVs ignore
/// it).
pub fn build_panel(simulator: &SimulatorConfig, seed: u64) -> Result<SimulatedData> {
    match simulator {
        SimulatorConfig::Var(cfg) => {
            let mut cfg = *cfg;
            cfg.seed = seed;
            let (panel, truth) = gen_var(&cfg)?;
            Ok(SimulatedData {
                panel,
                truth: Some(truth),
                base_mask: None,
            })
        }
        SimulatorConfig::Lorenz96(cfg) => {
            let mut cfg = *cfg;
            cfg.seed = seed;
            let (panel, truth) = gen_lorenz96(&cfg)?;
            Ok(SimulatedData {
                panel,
                truth: Some(truth),
                base_mask: None,
            })
        }
        SimulatorConfig::Csv(src) => {
            let (panel, mask) = load_csv(&src.values, src.delimiter, &src.missing_token)?;
            let mask = match &src.mask {
                None => mask,
                Some(path) => {
                    let external = ObservationMask::from_f64(&load_matrix(path)?)?;
                    intersect_masks(&mask, &external)?
                }
            };
            let truth = match &src.truth {
                None => None,
                Some(path) => Some(GroundTruthGraph::from_f64(&load_matrix(path)?)?),
            };
            Ok(SimulatedData {
                panel,
                truth,
                base_mask: Some(mask),
            })
        }
    }
}

/// Applies synthetic corruption on top of whatever gaps the source already
/// had; a cell stays observed only if both masks keep it.
pub fn corrupt_panel(
    panel: &TimeSeriesPanel,
    base_mask: Option<&ObservationMask>,
    missing: &MissingConfig,
    seed: u64,
) -> Result<ObservationMask> {
    let mut cfg = *missing;
    cfg.seed = seed;
    let generated = apply_missing(panel, &cfg)?;
    match base_mask {
        None => Ok(generated),
        Some(base) => intersect_masks(base, &generated),
    }
}

/// A cell stays observed only when both masks keep it.
pub fn intersect_masks(a: &ObservationMask, b: &ObservationMask) -> Result<ObservationMask> {
    if a.n_series() != b.n_series() || a.length() != b.length() {
        return Err(Error::Shape(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            a.n_series(),
            a.length(),
            b.n_series(),
            b.length()
        )));
    }
    let combined = Array2::from_shape_fn((a.n_series(), a.length()), |(i, t)| {
        u8::from(a.is_observed(i, t) && b.is_observed(i, t))
    });
    ObservationMask::new(combined)
}

/// What one seed's run produced, for aggregation.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub report: Option<EvalReport>,
    pub imputation_rmse: Option<f64>,
}

/// Descriptor written beside the artifacts; everything needed to interpret
/// the directory without re-reading the config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub seed: u64,
    pub simulator: String,
    pub n_series: usize,
    pub length: usize,
    pub observed_fraction: f64,
    /// RMSE of the model imputation at missing cells against the clean
    /// simulated panel; absent for external data or when nothing is
    /// missing.
    pub imputation_rmse: Option<f64>,
    /// Same, for the zero-order-hold baseline.
    pub zoh_rmse: Option<f64>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FailureNote {
    stage: String,
    message: String,
}

/// Mean/std summary over per-seed values; `std` is the sample standard
/// deviation (zero for fewer than two values).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

pub fn summarize(values: &[f64]) -> Option<SummaryStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    };
    Some(SummaryStats {
        mean,
        std,
        values: values.to_vec(),
    })
}

/// Cross-seed summary written at the pipeline root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema: String,
    pub seeds: Vec<u64>,
    pub auroc_include_diagonal: Option<SummaryStats>,
    pub auroc_exclude_diagonal: Option<SummaryStats>,
    pub imputation_rmse: Option<SummaryStats>,
}

pub fn aggregate(outcomes: &[SeedOutcome]) -> AggregateReport {
    let include: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.report.as_ref().map(|r| r.include_diagonal.auroc))
        .collect();
    let exclude: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| {
            o.report
                .as_ref()
                .and_then(|r| r.exclude_diagonal.as_ref())
                .map(|r| r.auroc)
        })
        .collect();
    let rmse: Vec<f64> = outcomes.iter().filter_map(|o| o.imputation_rmse).collect();
    AggregateReport {
        schema: AGGREGATE_SCHEMA.to_string(),
        seeds: outcomes.iter().map(|o| o.seed).collect(),
        auroc_include_diagonal: summarize(&include),
        auroc_exclude_diagonal: summarize(&exclude),
        imputation_rmse: summarize(&rmse),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Other(format!("serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Runs one seed end to end into `dir`. On failure the stage name lands in
/// `failure.json`, partial artifacts stay behind, and the original error is
/// returned so exit codes stay faithful.
pub fn run_seed(config: &RunConfig, master_seed: u64, dir: &Path) -> Result<SeedOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut stage = "configure";
    let mut run = || -> Result<SeedOutcome> {
        let mut effective = config.clone();
        effective.seed = master_seed;
        effective.seeds = Vec::new();
        crate::config::save_config(&effective, &dir.join("config.toml"))?;

        stage = "simulate";
        log::info!("seed {master_seed}: simulating ({})", config.simulator.kind_name());
        let data = build_panel(&config.simulator, derive_seed(master_seed, STREAM_SIMULATOR))?;
        save_matrix(data.panel.values(), &dir.join("panel.csv"))?;
        if let Some(truth) = &data.truth {
            save_matrix(&truth.as_f64(), &dir.join("truth.csv"))?;
        }

        stage = "corrupt";
        let mask = corrupt_panel(
            &data.panel,
            data.base_mask.as_ref(),
            &config.missing,
            derive_seed(master_seed, STREAM_MISSING),
        )?;
        save_matrix(&mask.as_f64(), &dir.join("mask.csv"))?;
        save_panel_csv(&data.panel, &mask, &dir.join("observed.csv"), MISSING_TOKEN)?;

        stage = "discover";
        log::info!(
            "seed {master_seed}: training {} epochs on {} series",
            config.train.epochs,
            data.panel.n_series()
        );
        let mut train = config.train.clone();
        train.seed = derive_seed(master_seed, STREAM_TRAIN);
        let result: FitResult = fit(&data.panel, &mask, &config.model, &train, data.truth.as_ref(), Some(dir))?;
        save_matrix(&result.edge_probabilities, &dir.join("cpg.csv"))?;
        save_matrix(result.imputed.values(), &dir.join("imputed.csv"))?;
        write_json(&result.trace, &dir.join("trace.json"))?;

        stage = "evaluate";
        let report = match &data.truth {
            None => None,
            Some(truth) => {
                let report = build_report(
                    &result.edge_probabilities,
                    truth,
                    Some(Path::new("cpg.csv")),
                    Some(Path::new("truth.csv")),
                )?;
                save_report(&report, &dir.join("report.json"))?;
                if config.eval.heatmap {
                    save_heatmap(&result.edge_probabilities, truth, &dir.join("heatmap.svg"))?;
                }
                Some(report)
            }
        };

        // imputation quality against the clean panel, when we have one
        let (imputation_rmse, zoh_rmse) = if data.base_mask.is_none() {
            let zoh = zoh_fill(data.panel.values(), &mask);
            (
                rmse_missing(result.imputed.values(), data.panel.values(), &mask),
                rmse_missing(&zoh, data.panel.values(), &mask),
            )
        } else {
            (None, None)
        };

        stage = "manifest";
        let mut artifacts: Vec<String> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok())
            .map(|entry| entry.file_name().to_string_lossy().into_owned())
            .filter(|name| name != "manifest.json")
            .collect();
        artifacts.push("manifest.json".to_string());
        artifacts.sort();
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA.to_string(),
            seed: master_seed,
            simulator: config.simulator.kind_name().to_string(),
            n_series: data.panel.n_series(),
            length: data.panel.length(),
            observed_fraction: mask.observed_fraction(),
            imputation_rmse,
            zoh_rmse,
            artifacts,
        };
        write_json(&manifest, &dir.join("manifest.json"))?;

        Ok(SeedOutcome {
            seed: master_seed,
            dir: dir.to_path_buf(),
            report,
            imputation_rmse,
        })
    };
    match run() {
        Ok(outcome) => Ok(outcome),
        Err(err) => {
            log::error!("seed {master_seed}: stage `{stage}` failed: {err}");
            let note = FailureNote {
                stage: stage.to_string(),
                message: err.to_string(),
            };
            let _ = write_json(&note, &dir.join("failure.json"));
            Err(err)
        }
    }
}

/// Everything `run_pipeline` produced.
#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub outcomes: Vec<SeedOutcome>,
    pub aggregate: AggregateReport,
    pub out_dir: PathBuf,
}

/// Runs every configured seed into `out_dir/seed_NNNN` and writes the
/// cross-seed aggregate at the root. All writes stay inside `out_dir`.
pub fn run_pipeline(config: &RunConfig, out_dir: &Path) -> Result<PipelineSummary> {
    let problems: Vec<String> = crate::config::validate_config(config)
        .into_iter()
        .filter(|d| d.is_error())
        .map(|d| d.to_string())
        .collect();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    crate::config::save_config(config, &out_dir.join("config.toml"))?;

    let seeds: Vec<u64> = if config.seeds.is_empty() {
        vec![config.seed]
    } else {
        config.seeds.clone()
    };
    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let dir = out_dir.join(format!("seed_{seed:04}"));
        outcomes.push(run_seed(config, seed, &dir)?);
    }
    let aggregate_report = aggregate(&outcomes);
    write_json(&aggregate_report, &out_dir.join("aggregate.json"))?;
    Ok(PipelineSummary {
        outcomes,
        aggregate: aggregate_report,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Scores a stored matrix against a stored truth and writes the report
/// (and optionally the heatmap); the `evaluate` and `report` subcommands.
pub fn evaluate_files(
    scores_path: &Path,
    truth_path: &Path,
    out_dir: &Path,
    eval: &EvalSettings,
) -> Result<EvalReport> {
    let scores = load_matrix(scores_path)?;
    let truth = GroundTruthGraph::from_f64(&load_matrix(truth_path)?)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let report = build_report(&scores, &truth, Some(scores_path), Some(truth_path))?;
    save_report(&report, &out_dir.join("report.json"))?;
    if eval.heatmap {
        save_heatmap(&scores, &truth, &out_dir.join("heatmap.svg"))?;
    }
    Ok(report)
}
