//! Scratch tuning harness: runs one scenario with the given hyperparameters
//! and prints per-epoch AUROC against the ground truth.

use std::time::Instant;

use cutsplus::config::SimulatorConfig;
use cutsplus::eval::score_graph;
use cutsplus::graph::{expand_cpg, GumbelSchedule};
use cutsplus::pipeline::{build_panel, corrupt_panel, derive_seed};
use cutsplus::sim::{Lorenz96Config, MissingConfig, MissingKind, VarConfig};
use cutsplus::trainer::{zoh_fill, ModelSettings, TrainConfig, Trainer};
use cutsplus::eval::rmse_missing;

fn arg<T: std::str::FromStr>(name: &str, default: T) -> T
where
    T::Err: std::fmt::Debug,
{
    for a in std::env::args() {
        if let Some(rest) = a.strip_prefix(&format!("{name}=")) {
            return rest.parse().expect(name);
        }
    }
    default
}

fn main() {
    let scenario: String = arg("scenario", "var".to_string());
    let seed: u64 = arg("seed", 0);
    let epochs: usize = arg("epochs", 100);
    let split: usize = arg("split", 20);
    let groups: usize = arg("groups", 0);
    let lambda: f64 = arg("lambda", 0.05);
    let lr_theta: f64 = arg("lr_theta", 0.02);
    let lr_phi: f64 = arg("lr_phi", 0.001);
    let batch: usize = arg("batch", 32);
    let hidden: usize = arg("hidden", 32);
    let layers: usize = arg("layers", 1);
    let tau_max: usize = arg("tau_max", 0); // 0 = per-scenario default
    let tau_start: f64 = arg("tau_start", 1.0);
    let tau_end: f64 = arg("tau_end", 0.1);
    let decay: usize = arg("decay", 50);
    let n: usize = arg("n", 16);
    let t: usize = arg("t", 1000);
    let every: usize = arg("every", 5);

    let (sim, missing, default_tau): (SimulatorConfig, MissingConfig, usize) = match scenario.as_str() {
        "var" => (
            SimulatorConfig::Var(VarConfig { n_series: n, length: t, tau_max: 3, density: 0.2, ..VarConfig::default() }),
            MissingConfig::default(),
            3,
        ),
        "varrm3" => (
            SimulatorConfig::Var(VarConfig { n_series: n, length: t, tau_max: 3, density: 0.2, ..VarConfig::default() }),
            MissingConfig { kind: MissingKind::Rm, p: 0.3, ..MissingConfig::default() },
            3,
        ),
        "varrm6" => (
            SimulatorConfig::Var(VarConfig { n_series: n, length: t, tau_max: 3, density: 0.2, ..VarConfig::default() }),
            MissingConfig { kind: MissingKind::Rm, p: 0.6, ..MissingConfig::default() },
            3,
        ),
        "lorenz" => (
            SimulatorConfig::Lorenz96(Lorenz96Config { n_series: n, length: t, ..Lorenz96Config::default() }),
            MissingConfig::default(),
            2,
        ),
        "lorenzrbm" => (
            SimulatorConfig::Lorenz96(Lorenz96Config { n_series: n, length: t, ..Lorenz96Config::default() }),
            MissingConfig { kind: MissingKind::Rbm, p: 0.05, p_blk: 0.003, l_min: 5, l_max: 20, ..MissingConfig::default() },
            2,
        ),
        other => panic!("unknown scenario {other}"),
    };
    let tau_max = if tau_max == 0 { default_tau } else { tau_max };

    let data = build_panel(&sim, derive_seed(seed, 1)).unwrap();
    let mask = corrupt_panel(&data.panel, None, &missing, derive_seed(seed, 2)).unwrap();
    let truth = data.truth.unwrap();

    let model = ModelSettings { hidden_dim: hidden, layers, use_reset_gate: false };
    let cfg = TrainConfig {
        epochs,
        split_period: split,
        initial_groups: groups,
        lambda_sparsity: lambda,
        lr_theta,
        lr_phi,
        batch,
        tau_max,
        gumbel: GumbelSchedule { start: tau_start, end: tau_end, decay_epochs: decay },
        seed: derive_seed(seed, 3) ^ arg::<u64>("trainseed", 0),
        window_width: arg("width", 0),
        ..TrainConfig::default()
    };

    let mut tr = Trainer::new(&data.panel, &mask, &model, &cfg).unwrap();
    let start = Instant::now();
    let mut last_disc = f64::NAN;
    for e in 0..epochs {
        let t0 = Instant::now();
        let rec = tr.run_epoch().unwrap();
        last_disc = rec.loss_discovery;
        let dt = t0.elapsed().as_secs_f64();
        if e % every == 0 || e + 1 == epochs {
            let cpg = expand_cpg(tr.graph_params(), tr.assignment());
            let auroc = score_graph(&cpg, &truth, false).map(|r| r.auroc).unwrap_or(f64::NAN);
            println!(
                "epoch {e:3}  groups {:2}  temp {:.3}  pred {:.5}  disc {:.5}  meanp {:.3}  auroc {:.4}  ({dt:.2}s)",
                rec.n_groups, rec.temperature, rec.loss_prediction, rec.loss_discovery, rec.mean_edge_probability, auroc
            );
        }
    }
    let total = start.elapsed().as_secs_f64();
    let result = tr.finish(&data.panel).unwrap();
    let final_auroc = score_graph(&result.edge_probabilities, &truth, false).unwrap().auroc;
    let imp = rmse_missing(result.imputed.values(), data.panel.values(), &mask);
    let zoh = rmse_missing(&zoh_fill(data.panel.values(), &mask), data.panel.values(), &mask);
    println!(
        "FINAL scenario={scenario} seed={seed} auroc={final_auroc:.4} disc={last_disc:.5} imp_rmse={imp:?} zoh_rmse={zoh:?} total={total:.1}s"
    );
    let dump: String = arg("dump", String::new());
    if !dump.is_empty() {
        let m = &result.edge_probabilities;
        let t = truth.as_f64();
        let to_csv = |a: &ndarray::Array2<f64>| {
            let mut text = String::new();
            for i in 0..a.nrows() {
                let row: Vec<String> = (0..a.ncols()).map(|j| format!("{}", a[[i, j]])).collect();
                text.push_str(&row.join(","));
                text.push('\n');
            }
            text
        };
        std::fs::write(&dump, to_csv(m)).unwrap();
        std::fs::write(format!("{dump}.truth"), to_csv(&t)).unwrap();
        std::fs::write(format!("{dump}.panel"), to_csv(data.panel.values())).unwrap();
    }
}
