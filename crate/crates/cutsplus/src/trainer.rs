//! Alternating two-stage training of the forecaster and the edge logits.
//!
//! Each epoch runs a prediction stage (forecaster parameters update under
//! hard Bernoulli adjacency samples, one draw per window), refreshes the
//! imputed panel with a causal left-to-right sweep, then runs a discovery
//! stage (edge logits update through one relaxed Gumbel sample per batch).
//! Losses are masked mean squared errors over observed targets; the
//! discovery loss adds an L1 penalty on the edge probabilities. Groups are
//! split on a fixed schedule, moving the graph from coarse to fine.

use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::data::{windows_for_length, ObservationMask, TimeSeriesPanel, Window};
use crate::error::{Error, Result};
use crate::sim::GroundTruthGraph;
use crate::graph::{
    anneal_temperature, bernoulli_sample, expand_cpg, init_groups, split_groups, GraphParameters,
    GroupAssignment, GumbelSchedule,
};
use crate::predictor::{
    decode, encode, EdgeInput, PredictorParameters, PredictorSpec, TapedPredictor,
};
use crate::{autodiff::Tape, graph::sigmoid};

/// Shape of the forecaster, independent of the panel width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub hidden_dim: usize,
    pub layers: usize,
    pub use_reset_gate: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            hidden_dim: 64,
            layers: 1,
            use_reset_gate: false,
        }
    }
}

/// Training schedule and optimizer settings. `initial_groups == 0` selects
/// `max(1, n / 8)` starting groups; `window_width == 0` selects
/// `tau_max + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub split_period: usize,
    pub initial_groups: usize,
    pub lambda_sparsity: f64,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub batch: usize,
    pub window_width: usize,
    pub tau_max: usize,
    pub gumbel: GumbelSchedule,
    pub seed: u64,
    pub standardize: bool,
    /// Write a checkpoint every this many epochs when a checkpoint
    /// directory is given; 0 writes only the final state.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            split_period: 10,
            initial_groups: 0,
            lambda_sparsity: 5e-4,
            lr_theta: 2e-3,
            lr_phi: 1e-2,
            batch: 64,
            window_width: 0,
            tau_max: 3,
            // constant relaxation temperature: annealing toward a cold
            // τ re-freezes early mistakes before the forecaster is good
            // enough to correct them
            gumbel: GumbelSchedule {
                start: 1.0,
                end: 1.0,
                decay_epochs: 1,
            },
            seed: 0,
            standardize: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.split_period == 0 {
            return Err(Error::Config("split_period must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.tau_max == 0 {
            return Err(Error::Config("tau_max must be at least 1".into()));
        }
        if self.window_width != 0 && self.window_width < self.tau_max + 1 {
            return Err(Error::Config(format!(
                "window_width must be at least tau_max + 1 = {}, got {}",
                self.tau_max + 1,
                self.window_width
            )));
        }
        for (name, v) in [
            ("lambda_sparsity", self.lambda_sparsity),
            ("lr_theta", self.lr_theta),
            ("lr_phi", self.lr_phi),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        if self.lr_theta == 0.0 || self.lr_phi == 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        self.gumbel.validate()
    }

    pub fn effective_window_width(&self) -> usize {
        if self.window_width == 0 {
            self.tau_max + 1
        } else {
            self.window_width
        }
    }

    pub fn effective_initial_groups(&self, n_series: usize) -> usize {
        if self.initial_groups == 0 {
            (n_series / 8).max(1)
        } else {
            self.initial_groups.min(n_series)
        }
    }
}

/// Masked mean squared error: sum of squared residuals at `weight == 1`
/// cells over the number of such cells. `None` when nothing is observed.
pub fn loss_data(
    predictions: &Array2<f64>,
    targets: &Array2<f64>,
    weights: &Array2<f64>,
) -> Option<f64> {
    debug_assert_eq!(predictions.dim(), targets.dim());
    debug_assert_eq!(predictions.dim(), weights.dim());
    let total: f64 = weights.sum();
    if total == 0.0 {
        return None;
    }
    let sse: f64 = predictions
        .iter()
        .zip(targets.iter())
        .zip(weights.iter())
        .map(|((p, t), w)| w * (p - t) * (p - t))
        .sum();
    Some(sse / total)
}

/// Discovery objective: masked mean squared error plus
/// `lambda * sum(sigmoid(logits))`, the L1 norm of the edge probabilities.
pub fn loss_graph(
    predictions: &Array2<f64>,
    targets: &Array2<f64>,
    weights: &Array2<f64>,
    graph_params: &GraphParameters,
) -> Option<f64> {
    let base = loss_data(predictions, targets, weights)?;
    let penalty: f64 = graph_params.logits.iter().map(|&t| sigmoid(t)).sum();
    Some(base + graph_params.lambda_sparsity * penalty)
}

/// Zero-order hold: each missing cell takes the most recent observed value
/// of its series, or 0 when nothing earlier was observed.
pub fn zoh_fill(values: &Array2<f64>, mask: &ObservationMask) -> Array2<f64> {
    let mut filled = values.clone();
    for i in 0..filled.nrows() {
        let mut last = 0.0;
        for t in 0..filled.ncols() {
            if mask.is_observed(i, t) {
                last = filled[[i, t]];
            } else {
                filled[[i, t]] = last;
            }
        }
    }
    filled
}

/// Complete working copy of the panel: observed cells are pinned to their
/// true (standardized) values, missing cells hold current imputations.
#[derive(Debug, Clone)]
pub struct ImputationState {
    filled: Array2<f64>,
}

impl ImputationState {
    /// Seeds missing cells by zero-order hold.
    pub fn new(values: &Array2<f64>, mask: &ObservationMask) -> Self {
        ImputationState {
            filled: zoh_fill(values, mask),
        }
    }

    pub fn filled(&self) -> &Array2<f64> {
        &self.filled
    }
}

/// Adam with bias correction; one moment pair per parameter block.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&d| Array2::zeros(d)).collect(),
            v: shapes.iter().map(|&d| Array2::zeros(d)).collect(),
        }
    }

    /// One update over all blocks; `grads[i]` of `None` counts as zero.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Option<&Array2<f64>>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let zero;
            let g = match grad {
                Some(g) => *g,
                None => {
                    zero = Array2::zeros(param.dim());
                    &zero
                }
            };
            m.zip_mut_with(g, |mi, gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(g, |vi, gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            ndarray::Zip::from(&mut **param)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &mi, &vi| {
                    let m_hat = mi / bc1;
                    let v_hat = vi / bc2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
    }
}

/// Per-epoch metrics recorded in the training trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub temperature: f64,
    pub n_groups: usize,
    pub loss_prediction: f64,
    pub loss_discovery: f64,
    pub mean_edge_probability: f64,
    pub imputed_cells: usize,
    /// Number of window batches dropped this epoch because every target in
    /// the batch was unobserved.
    #[serde(default)]
    pub skipped_batches: usize,
    /// AUROC of the current edge probabilities against a reference graph;
    /// present only when one was supplied to the trainer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Expanded edge probabilities, `n x n`; entry `(i, j)` scores `i -> j`.
    pub edge_probabilities: Array2<f64>,
    /// Original panel with missing cells replaced by model imputations, on
    /// the original scale. Observed cells are byte-identical to the input.
    pub imputed: TimeSeriesPanel,
    pub params: PredictorParameters,
    pub graph_params: GraphParameters,
    pub assignment: GroupAssignment,
    pub trace: Vec<EpochRecord>,
}

/// Serialized training state; written during and after [`fit`] when a
/// checkpoint directory is provided.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: PredictorParameters,
    pub graph_params: GraphParameters,
    pub assignment: GroupAssignment,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(checkpoint)
        .map_err(|e| Error::Other(format!("checkpoint serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        row: e.line(),
        col: e.column(),
        reason: e.to_string(),
    })
}

/// In-progress training run. [`fit`] drives this; tests can step stages
/// individually.
pub struct Trainer {
    cfg: TrainConfig,
    values: Array2<f64>,
    mask: ObservationMask,
    mask_f: Array2<f64>,
    means: Array1<f64>,
    stds: Array1<f64>,
    state: ImputationState,
    windows: Vec<Window>,
    params: PredictorParameters,
    theta: GraphParameters,
    assignment: GroupAssignment,
    adam_phi: Adam,
    adam_theta: Adam,
    rng_predict: ChaCha8Rng,
    rng_discover: ChaCha8Rng,
    epoch: usize,
    skipped_batches: usize,
    trace: Vec<EpochRecord>,
    truth: Option<GroundTruthGraph>,
}

impl Trainer {
    pub fn new(
        panel: &TimeSeriesPanel,
        mask: &ObservationMask,
        model: &ModelSettings,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = panel.n_series();
        if mask.n_series() != n || mask.length() != panel.length() {
            return Err(Error::Shape(format!(
                "panel {}x{} vs mask {}x{}",
                n,
                panel.length(),
                mask.n_series(),
                mask.length()
            )));
        }
        if mask.count_observed() == 0 {
            return Err(Error::Config("mask leaves no observed cells".into()));
        }
        let width = cfg.effective_window_width();
        let windows = windows_for_length(panel.length(), width - 1, 1)?;

        let (values, means, stds) = if cfg.standardize {
            standardize(panel.values(), mask)
        } else {
            (
                panel.values().clone(),
                Array1::zeros(n),
                Array1::ones(n),
            )
        };

        let mut rng_init = ChaCha8Rng::seed_from_u64(cfg.seed);
        let spec = PredictorSpec {
            n_series: n,
            hidden_dim: model.hidden_dim,
            layers: model.layers,
            use_reset_gate: model.use_reset_gate,
        };
        let params = PredictorParameters::init(&spec, &mut rng_init)?;
        let n_groups = cfg.effective_initial_groups(n);
        let assignment = init_groups(n, n_groups)?;
        let theta = GraphParameters::init_random(
            n_groups,
            n,
            anneal_temperature(0, &cfg.gumbel),
            cfg.lambda_sparsity,
            &mut rng_init,
        );

        let mut rng_predict = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_predict.set_stream(1);
        let mut rng_discover = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_discover.set_stream(2);

        let adam_phi = Adam::new(cfg.lr_phi, &block_shapes(&params));
        let adam_theta = Adam::new(cfg.lr_theta, &[theta.logits.dim()]);
        let state = ImputationState::new(&values, mask);

        Ok(Trainer {
            cfg: cfg.clone(),
            mask_f: mask.as_f64(),
            mask: mask.clone(),
            values,
            means,
            stds,
            state,
            windows,
            params,
            theta,
            assignment,
            adam_phi,
            adam_theta,
            rng_predict,
            rng_discover,
            epoch: 0,
            skipped_batches: 0,
            trace: Vec::new(),
            truth: None,
        })
    }

    /// Supplies a reference graph; subsequent epoch records carry the AUROC
    /// of the current edge probabilities against it.
    pub fn set_truth(&mut self, truth: &GroundTruthGraph) -> Result<()> {
        if truth.n_series() != self.mask.n_series() {
            return Err(Error::Shape(format!(
                "reference graph is {}x{} but the panel has {} series",
                truth.n_series(),
                truth.n_series(),
                self.mask.n_series()
            )));
        }
        self.truth = Some(truth.clone());
        Ok(())
    }

    pub fn params(&self) -> &PredictorParameters {
        &self.params
    }

    pub fn graph_params(&self) -> &GraphParameters {
        &self.theta
    }

    pub fn assignment(&self) -> &GroupAssignment {
        &self.assignment
    }

    pub fn imputation(&self) -> &ImputationState {
        &self.state
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn trace(&self) -> &[EpochRecord] {
        &self.trace
    }

    fn shuffled_windows(rng: &mut ChaCha8Rng, n_windows: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n_windows).collect();
        order.shuffle(rng);
        order
    }

    /// Inputs of a window in the working panel: all columns before the
    /// target.
    fn window_inputs(&self, w: &Window) -> ndarray::ArrayView2<'_, f64> {
        self.state.filled.slice(s![.., w.start..w.target()])
    }

    fn target_row(&self, w: &Window) -> Array2<f64> {
        let n = self.values.nrows();
        self.values
            .column(w.target())
            .to_owned()
            .into_shape_with_order((1, n))
            .unwrap()
    }

    fn weight_row(&self, w: &Window) -> Array2<f64> {
        let n = self.values.nrows();
        self.mask_f
            .column(w.target())
            .to_owned()
            .into_shape_with_order((1, n))
            .unwrap()
    }

    /// One pass over all windows updating the forecaster only. Each window
    /// sees a fresh hard Bernoulli adjacency draw. Returns the mean masked
    /// MSE across batches.
    pub fn prediction_stage_epoch(&mut self) -> Result<f64> {
        let order = Self::shuffled_windows(&mut self.rng_predict, self.windows.len());
        let mut losses = Vec::new();
        for chunk in order.chunks(self.cfg.batch) {
            let mut rows = Vec::with_capacity(chunk.len());
            for &wi in chunk {
                let w = self.windows[wi];
                let graph = bernoulli_sample(&self.theta, &self.assignment, &mut self.rng_predict);
                rows.push((w, graph.edges));
            }
            let batch_weight: f64 = chunk
                .iter()
                .map(|&wi| self.mask_f.column(self.windows[wi].target()).sum())
                .sum();
            if batch_weight == 0.0 {
                self.skipped_batches += 1;
                continue;
            }

            let mut tape = Tape::new();
            let taped = TapedPredictor::register(&mut tape, &self.params);
            let mut acc = tape.leaf(Array2::zeros((1, 1)));
            for (w, edges) in &rows {
                let pred = taped.forward(&mut tape, self.window_inputs(w), EdgeInput::Hard(edges));
                let tgt = tape.leaf(self.target_row(w));
                let diff = tape.sub(pred, tgt);
                let sq = tape.mul(diff, diff);
                let masked = tape.mul_const(sq, self.weight_row(w));
                let term = tape.sum_all(masked);
                acc = tape.add(acc, term);
            }
            let loss = tape.affine(acc, 1.0 / batch_weight, 0.0);
            let loss_value = tape.value(loss)[[0, 0]];
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    stage: "prediction",
                });
            }
            losses.push(loss_value);

            let grads = tape.backward(loss);
            let leaf_ids = taped.leaf_ids();
            let names: Vec<String> = self.params.blocks().iter().map(|(n, _)| n.clone()).collect();
            let grad_refs: Vec<Option<&Array2<f64>>> =
                leaf_ids.iter().map(|id| grads.get(*id)).collect();
            for (name, g) in names.iter().zip(grad_refs.iter()) {
                if let Some(g) = g {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteGradient {
                            block: name.clone(),
                        });
                    }
                }
            }
            let mut blocks = self.params.blocks_mut();
            self.adam_phi.step(&mut blocks, &grad_refs);
        }
        Ok(mean(&losses))
    }

    /// One pass over all windows updating the edge logits only. Each batch
    /// shares a single relaxed Gumbel draw of the group adjacency. Returns
    /// the mean discovery loss (masked MSE plus sparsity penalty).
    pub fn discovery_stage_epoch(&mut self) -> Result<f64> {
        let tau = self.theta.temperature;
        let lambda = self.cfg.lambda_sparsity;
        let theta_clip = crate::graph::PROB_CLAMP;
        // clamp in logit space, matching the probability clamp band
        let logit_hi = ((1.0 - theta_clip) / theta_clip).ln();
        let gumbel = Gumbel::new(0.0, 1.0).expect("unit gumbel");
        let membership_t = self.assignment.membership_matrix().t().to_owned();

        let order = Self::shuffled_windows(&mut self.rng_discover, self.windows.len());
        let mut losses = Vec::new();
        for chunk in order.chunks(self.cfg.batch) {
            let batch_weight: f64 = chunk
                .iter()
                .map(|&wi| self.mask_f.column(self.windows[wi].target()).sum())
                .sum();
            if batch_weight == 0.0 {
                self.skipped_batches += 1;
                continue;
            }
            let noise = Array2::from_shape_fn(self.theta.logits.dim(), |_| {
                let g1: f64 = gumbel.sample(&mut self.rng_discover);
                let g2: f64 = gumbel.sample(&mut self.rng_discover);
                g1 - g2
            });

            let mut tape = Tape::new();
            let taped = TapedPredictor::register(&mut tape, &self.params);
            let theta_leaf = tape.leaf(self.theta.logits.clone());
            let theta_clamped = tape.clamp(theta_leaf, -logit_hi, logit_hi);
            let noise_leaf = tape.leaf(noise);
            let noisy = tape.add(theta_clamped, noise_leaf);
            let scaled = tape.affine(noisy, 1.0 / tau, 0.0);
            let soft_group = tape.sigmoid(scaled);
            let membership_leaf = tape.leaf(membership_t.clone());
            let soft_edges = tape.matmul(membership_leaf, soft_group);

            let mut acc = tape.leaf(Array2::zeros((1, 1)));
            for &wi in chunk {
                let w = self.windows[wi];
                let pred =
                    taped.forward(&mut tape, self.window_inputs(&w), EdgeInput::Soft(soft_edges));
                let tgt = tape.leaf(self.target_row(&w));
                let diff = tape.sub(pred, tgt);
                let sq = tape.mul(diff, diff);
                let masked = tape.mul_const(sq, self.weight_row(&w));
                let term = tape.sum_all(masked);
                acc = tape.add(acc, term);
            }
            let mse = tape.affine(acc, 1.0 / batch_weight, 0.0);
            let probs = tape.sigmoid(theta_leaf);
            let l1 = tape.sum_all(probs);
            let penalty = tape.affine(l1, lambda, 0.0);
            let loss = tape.add(mse, penalty);

            let loss_value = tape.value(loss)[[0, 0]];
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    stage: "discovery",
                });
            }
            losses.push(loss_value);

            let grads = tape.backward(loss);
            let theta_grad = grads.get(theta_leaf);
            if let Some(g) = theta_grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient {
                        block: "graph.logits".into(),
                    });
                }
            }
            self.adam_theta
                .step(&mut [&mut self.theta.logits], &[theta_grad]);
        }
        Ok(mean(&losses))
    }

    /// Causal left-to-right imputation sweep at stride 1. Only missing
    /// cells move; each is pulled toward the prediction made from the
    /// (partially imputed) window before it:
    /// `filled <- 0.9 * filled + 0.1 * prediction`. Returns the number of
    /// cells updated.
    pub fn impute_sliding(&mut self) -> usize {
        if self.mask.is_fully_observed() {
            return 0;
        }
        let m = expand_cpg(&self.theta, &self.assignment);
        let mut updated = 0;
        for wi in 0..self.windows.len() {
            let w = self.windows[wi];
            let t = w.target();
            let missing: Vec<usize> = (0..self.values.nrows())
                .filter(|&i| !self.mask.is_observed(i, t))
                .collect();
            if missing.is_empty() {
                continue;
            }
            let predictions: Vec<(usize, f64)> = {
                let inputs = self.state.filled.slice(s![.., w.start..t]);
                missing
                    .iter()
                    .map(|&j| {
                        let h = encode(inputs, m.column(j), &self.params.encoder);
                        (j, decode(&h, j, &self.params.decoder))
                    })
                    .collect()
            };
            for (j, pred) in predictions {
                let cell = &mut self.state.filled[[j, t]];
                *cell = 0.9 * *cell + 0.1 * pred;
                updated += 1;
            }
        }
        updated
    }

    /// Splits groups if the schedule says so, anneals the temperature, then
    /// runs prediction, imputation, and discovery for one epoch.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        if self.epoch > 0 && self.epoch % self.cfg.split_period == 0 {
            if let Some((assignment, theta)) = split_groups(&self.assignment, &self.theta) {
                self.assignment = assignment;
                self.theta = theta;
                // logits changed shape; restart the moment estimates
                self.adam_theta = Adam::new(self.cfg.lr_theta, &[self.theta.logits.dim()]);
            }
        }
        self.theta.temperature = anneal_temperature(self.epoch, &self.cfg.gumbel);
        self.skipped_batches = 0;

        let loss_prediction = self.prediction_stage_epoch()?;
        let imputed_cells = self.impute_sliding();
        let loss_discovery = self.discovery_stage_epoch()?;

        let cpg = expand_cpg(&self.theta, &self.assignment);
        let auroc = self
            .truth
            .as_ref()
            .and_then(|t| crate::eval::score_graph(&cpg, t, false).ok())
            .map(|r| r.auroc);
        let record = EpochRecord {
            epoch: self.epoch,
            temperature: self.theta.temperature,
            n_groups: self.assignment.n_groups(),
            loss_prediction,
            loss_discovery,
            mean_edge_probability: cpg.mean().unwrap_or(0.0),
            imputed_cells,
            skipped_batches: self.skipped_batches,
            auroc,
        };
        self.trace.push(record.clone());
        self.epoch += 1;
        Ok(record)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            epoch: self.epoch,
            params: self.params.clone(),
            graph_params: self.theta.clone(),
            assignment: self.assignment.clone(),
        }
    }

    /// Final artifacts. Observed cells of the imputed panel are restored
    /// from the raw input, so standardization cannot perturb them.
    pub fn finish(self, original: &TimeSeriesPanel) -> Result<FitResult> {
        let mut imputed = self.state.filled.clone();
        for ((i, t), v) in imputed.indexed_iter_mut() {
            if self.mask.is_observed(i, t) {
                *v = original.values()[[i, t]];
            } else {
                *v = *v * self.stds[i] + self.means[i];
            }
        }
        Ok(FitResult {
            edge_probabilities: expand_cpg(&self.theta, &self.assignment),
            imputed: TimeSeriesPanel::new(imputed)?,
            params: self.params,
            graph_params: self.theta,
            assignment: self.assignment,
            trace: self.trace,
        })
    }
}

/// Runs the full alternating schedule. Checkpoints go to `checkpoint_dir`
/// when given: periodic ones per `cfg.checkpoint_every`, a final one always,
/// and a last-known-good one if training aborts on a numeric error. When a
/// reference graph is supplied the trace carries per-epoch AUROC against it.
pub fn fit(
    panel: &TimeSeriesPanel,
    mask: &ObservationMask,
    model: &ModelSettings,
    cfg: &TrainConfig,
    truth: Option<&GroundTruthGraph>,
    checkpoint_dir: Option<&Path>,
) -> Result<FitResult> {
    let mut trainer = Trainer::new(panel, mask, model, cfg)?;
    if let Some(t) = truth {
        trainer.set_truth(t)?;
    }
    for epoch in 0..cfg.epochs {
        match trainer.run_epoch() {
            Ok(_) => {}
            Err(err) => {
                if let Some(dir) = checkpoint_dir {
                    let _ = save_checkpoint(&trainer.checkpoint(), &dir.join("checkpoint_failure.json"));
                }
                return Err(err);
            }
        }
        if let Some(dir) = checkpoint_dir {
            let every = cfg.checkpoint_every;
            if every > 0 && (epoch + 1) % every == 0 && epoch + 1 < cfg.epochs {
                save_checkpoint(
                    &trainer.checkpoint(),
                    &dir.join(format!("checkpoint_epoch_{:04}.json", epoch + 1)),
                )?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&trainer.checkpoint(), &dir.join("checkpoint_final.json"))?;
    }
    trainer.finish(panel)
}

fn block_shapes(params: &PredictorParameters) -> Vec<(usize, usize)> {
    params.blocks().iter().map(|(_, a)| a.dim()).collect()
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Per-series standardization over observed cells only. Returns the scaled
/// panel (missing cells zeroed) plus the means and stds used.
fn standardize(
    values: &Array2<f64>,
    mask: &ObservationMask,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = values.nrows();
    let mut means = Array1::zeros(n);
    let mut stds = Array1::ones(n);
    let mut out = values.clone();
    for i in 0..n {
        let row = values.index_axis(Axis(0), i);
        let mut count = 0.0;
        let mut sum = 0.0;
        for (t, &v) in row.iter().enumerate() {
            if mask.is_observed(i, t) {
                sum += v;
                count += 1.0;
            }
        }
        let mu = if count > 0.0 { sum / count } else { 0.0 };
        let mut ss = 0.0;
        for (t, &v) in row.iter().enumerate() {
            if mask.is_observed(i, t) {
                ss += (v - mu) * (v - mu);
            }
        }
        let sigma = if count > 1.0 {
            (ss / count).sqrt()
        } else {
            0.0
        };
        let sigma = if sigma > 1e-8 { sigma } else { 1.0 };
        means[i] = mu;
        stds[i] = sigma;
        for t in 0..values.ncols() {
            out[[i, t]] = if mask.is_observed(i, t) {
                (values[[i, t]] - mu) / sigma
            } else {
                0.0
            };
        }
    }
    (out, means, stds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{apply_missing, gen_var, MissingConfig, MissingKind, VarConfig};
    use ndarray::array;

    fn small_setup() -> (TimeSeriesPanel, ObservationMask) {
        let cfg = VarConfig {
            n_series: 4,
            length: 120,
            tau_max: 2,
            density: 0.3,
            seed: 7,
            ..VarConfig::default()
        };
        let (panel, _) = gen_var(&cfg).unwrap();
        let missing = MissingConfig {
            kind: MissingKind::Rm,
            p: 0.2,
            seed: 3,
            ..MissingConfig::default()
        };
        let mask = apply_missing(&panel, &missing).unwrap();
        (panel, mask)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            tau_max: 2,
            batch: 16,
            initial_groups: 2,
            ..TrainConfig::default()
        }
    }

    fn small_model() -> ModelSettings {
        ModelSettings {
            hidden_dim: 8,
            ..ModelSettings::default()
        }
    }

    #[test]
    fn loss_data_matches_scalar_arithmetic() {
        let pred = array![[1.0, 2.0, 3.0]];
        let tgt = array![[0.5, 2.0, 5.0]];
        let w = array![[1.0, 0.0, 1.0]];
        // (0.25 + 4.0) / 2
        let loss = loss_data(&pred, &tgt, &w).unwrap();
        assert!((loss - 2.125).abs() < 1e-15);
        let none = loss_data(&pred, &tgt, &Array2::zeros((1, 3)));
        assert!(none.is_none());
    }

    #[test]
    fn loss_graph_adds_the_sparsity_penalty() {
        let pred = array![[1.0]];
        let tgt = array![[0.0]];
        let w = array![[1.0]];
        let gp = GraphParameters::new(array![[0.0, 2.0]], 1.0, 0.5);
        let expected = 1.0 + 0.5 * (sigmoid(0.0) + sigmoid(2.0));
        let loss = loss_graph(&pred, &tgt, &w, &gp).unwrap();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn zoh_carries_last_observation_forward() {
        let values = array![[1.0, 0.0, 0.0, 4.0], [0.0, 2.0, 0.0, 0.0]];
        let mask = ObservationMask::new(array![[1u8, 0, 0, 1], [0, 1, 0, 0]]).unwrap();
        let filled = zoh_fill(&values, &mask);
        assert_eq!(filled, array![[1.0, 1.0, 1.0, 4.0], [0.0, 2.0, 2.0, 2.0]]);
    }

    #[test]
    fn adam_first_step_has_unit_scale_direction() {
        let mut p = array![[1.0, -2.0]];
        let g = array![[0.5, -3.0]];
        let mut adam = Adam::new(0.01, &[(1, 2)]);
        adam.step(&mut [&mut p], &[Some(&g)]);
        // after bias correction the first step is lr * g / (|g| + eps)
        assert!((p[[0, 0]] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((p[[0, 1]] - (-2.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        let mut p = array![[5.0]];
        let mut adam = Adam::new(0.1, &[(1, 1)]);
        for _ in 0..500 {
            let g = array![[2.0 * p[[0, 0]]]];
            adam.step(&mut [&mut p], &[Some(&g)]);
        }
        assert!(p[[0, 0]].abs() < 0.01, "ended at {}", p[[0, 0]]);
    }

    #[test]
    fn prediction_stage_leaves_theta_untouched() {
        let (panel, mask) = small_setup();
        let mut tr = Trainer::new(&panel, &mask, &small_model(), &small_cfg()).unwrap();
        let theta_before = tr.graph_params().logits.clone();
        let params_before = tr.params().clone();
        tr.prediction_stage_epoch().unwrap();
        assert_eq!(tr.graph_params().logits, theta_before);
        assert_ne!(tr.params(), &params_before, "forecaster should move");
    }

    #[test]
    fn discovery_stage_leaves_phi_untouched() {
        let (panel, mask) = small_setup();
        let mut tr = Trainer::new(&panel, &mask, &small_model(), &small_cfg()).unwrap();
        let theta_before = tr.graph_params().logits.clone();
        let params_before = tr.params().clone();
        tr.discovery_stage_epoch().unwrap();
        assert_eq!(tr.params(), &params_before, "forecaster must not move");
        assert_ne!(tr.graph_params().logits, theta_before, "logits should move");
    }

    #[test]
    fn imputation_touches_only_missing_cells() {
        let (panel, mask) = small_setup();
        let mut tr = Trainer::new(&panel, &mask, &small_model(), &small_cfg()).unwrap();
        let before = tr.imputation().filled().clone();
        let updated = tr.impute_sliding();
        assert!(updated > 0);
        let after = tr.imputation().filled();
        let mut changed = 0;
        for ((i, t), b) in before.indexed_iter() {
            if mask.is_observed(i, t) {
                assert_eq!(after[[i, t]].to_bits(), b.to_bits());
            } else if after[[i, t]] != *b {
                changed += 1;
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn imputation_is_an_ema_toward_window_predictions() {
        let (panel, mask) = small_setup();
        let mut tr = Trainer::new(&panel, &mask, &small_model(), &small_cfg()).unwrap();
        // replay the sweep by hand for the first missing target
        let width = tr.cfg.effective_window_width();
        let hist = width - 1;
        let n = panel.n_series();
        let mut expected = None;
        'outer: for t in hist..panel.length() {
            for j in 0..n {
                if !mask.is_observed(j, t) {
                    let inputs = tr.state.filled.slice(s![.., t - hist..t]);
                    let m = expand_cpg(&tr.theta, &tr.assignment);
                    let h = encode(inputs, m.column(j), &tr.params.encoder);
                    let pred = decode(&h, j, &tr.params.decoder);
                    expected = Some((j, t, 0.9 * tr.state.filled[[j, t]] + 0.1 * pred));
                    break 'outer;
                }
            }
        }
        let (j, t, value) = expected.expect("setup has missing cells");
        tr.impute_sliding();
        assert!((tr.imputation().filled()[[j, t]] - value).abs() < 1e-12);
    }

    #[test]
    fn fully_observed_panel_skips_imputation() {
        let (panel, _) = small_setup();
        let mask = ObservationMask::ones(panel.n_series(), panel.length());
        let mut tr = Trainer::new(&panel, &mask, &small_model(), &small_cfg()).unwrap();
        assert_eq!(tr.impute_sliding(), 0);
        assert_eq!(tr.imputation().filled(), &tr.values);
    }

    #[test]
    fn fit_produces_consistent_artifacts() {
        let (panel, mask) = small_setup();
        let cfg = small_cfg();
        let result = fit(&panel, &mask, &small_model(), &cfg, None, None).unwrap();
        assert_eq!(result.trace.len(), cfg.epochs);
        let n = panel.n_series();
        assert_eq!(result.edge_probabilities.dim(), (n, n));
        assert!(result
            .edge_probabilities
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
        // observed cells of the imputed panel are byte-identical to input
        for ((i, t), v) in panel.values().indexed_iter() {
            if mask.is_observed(i, t) {
                assert_eq!(result.imputed.values()[[i, t]].to_bits(), v.to_bits());
            }
        }
        for rec in &result.trace {
            assert!(rec.loss_prediction.is_finite());
            assert!(rec.loss_discovery.is_finite());
        }
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let (panel, mask) = small_setup();
        let cfg = small_cfg();
        let a = fit(&panel, &mask, &small_model(), &cfg, None, None).unwrap();
        let b = fit(&panel, &mask, &small_model(), &cfg, None, None).unwrap();
        for (x, y) in a
            .edge_probabilities
            .iter()
            .zip(b.edge_probabilities.iter())
        {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a
            .imputed
            .values()
            .iter()
            .zip(b.imputed.values().iter())
        {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn groups_split_on_schedule_during_fit() {
        let (panel, mask) = small_setup();
        let cfg = TrainConfig {
            epochs: 5,
            split_period: 2,
            initial_groups: 1,
            tau_max: 2,
            ..TrainConfig::default()
        };
        let result = fit(&panel, &mask, &small_model(), &cfg, None, None).unwrap();
        let by_epoch: Vec<usize> = result.trace.iter().map(|r| r.n_groups).collect();
        assert_eq!(by_epoch, vec![1, 1, 2, 2, 4]);
        assert!(result.assignment.is_all_singleton());
    }

    #[test]
    fn checkpoints_are_written_and_reload() {
        let (panel, mask) = small_setup();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            checkpoint_every: 1,
            ..small_cfg()
        };
        fit(&panel, &mask, &small_model(), &cfg, None, Some(dir.path())).unwrap();
        let final_path = dir.path().join("checkpoint_final.json");
        assert!(final_path.exists());
        assert!(dir.path().join("checkpoint_epoch_0001.json").exists());
        let ck = load_checkpoint(&final_path).unwrap();
        assert_eq!(ck.epoch, cfg.epochs);
        assert_eq!(ck.graph_params.logits.ncols(), panel.n_series());
    }

    #[test]
    fn discovery_gradient_matches_finite_differences_through_the_sampler() {
        // freeze everything random, then compare the taped theta gradient
        // of one batch against central differences of the same computation
        let (panel, mask) = small_setup();
        let cfg = small_cfg();
        let tr = Trainer::new(&panel, &mask, &small_model(), &cfg).unwrap();
        let tau = 0.7;
        let noise = Array2::from_shape_fn(tr.theta.logits.dim(), |(k, j)| {
            ((k * 7 + j * 3) as f64 * 0.37).sin()
        });
        let membership_t = tr.assignment.membership_matrix().t().to_owned();
        let windows: Vec<Window> = tr.windows[..4].to_vec();

        let eval = |logits: &Array2<f64>| -> (f64, Option<Array2<f64>>, bool) {
            let mut tape = Tape::new();
            let taped = TapedPredictor::register(&mut tape, &tr.params);
            let theta_leaf = tape.leaf(logits.clone());
            let clamped = tape.clamp(theta_leaf, -13.0, 13.0);
            let noise_leaf = tape.leaf(noise.clone());
            let noisy = tape.add(clamped, noise_leaf);
            let scaled = tape.affine(noisy, 1.0 / tau, 0.0);
            let soft = tape.sigmoid(scaled);
            let membership_leaf = tape.leaf(membership_t.clone());
            let edges = tape.matmul(membership_leaf, soft);
            let mut acc = tape.leaf(Array2::zeros((1, 1)));
            let mut total_w = 0.0;
            for w in &windows {
                let pred = taped.forward(&mut tape, tr.window_inputs(w), EdgeInput::Soft(edges));
                let tgt = tape.leaf(tr.target_row(w));
                let diff = tape.sub(pred, tgt);
                let sq = tape.mul(diff, diff);
                let masked = tape.mul_const(sq, tr.weight_row(w));
                let term = tape.sum_all(masked);
                acc = tape.add(acc, term);
                total_w += tr.weight_row(w).sum();
            }
            let mse = tape.affine(acc, 1.0 / total_w, 0.0);
            let probs = tape.sigmoid(theta_leaf);
            let l1 = tape.sum_all(probs);
            let pen = tape.affine(l1, cfg.lambda_sparsity, 0.0);
            let loss = tape.add(mse, pen);
            let value = tape.value(loss)[[0, 0]];
            let grads = tape.backward(loss);
            (value, grads.get(theta_leaf).cloned(), true)
        };

        let (_, analytic, _) = eval(&tr.theta.logits);
        let analytic = analytic.unwrap();
        let numeric = crate::autodiff::numeric_gradient(
            |x| eval(x).0,
            &tr.theta.logits,
            1e-4,
        );
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!(
                crate::autodiff::relative_error(*a, *n) < 1e-4,
                "theta gradient {a} vs {n}"
            );
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (panel, mask) = small_setup();
        let mut cfg = small_cfg();
        cfg.epochs = 0;
        assert!(Trainer::new(&panel, &mask, &small_model(), &cfg).is_err());
        let mut cfg = small_cfg();
        cfg.window_width = cfg.tau_max; // less than tau_max + 1
        assert!(Trainer::new(&panel, &mask, &small_model(), &cfg).is_err());
        let mut cfg = small_cfg();
        cfg.lr_phi = 0.0;
        assert!(Trainer::new(&panel, &mask, &small_model(), &cfg).is_err());
    }

    #[test]
    fn standardization_is_inverted_on_output() {
        // a panel with large offsets should come back on its own scale
        let values = Array2::from_shape_fn((3, 60), |(i, t)| {
            1000.0 * (i as f64 + 1.0) + (t as f64 * 0.35).sin() * (i as f64 + 1.0)
        });
        let panel = TimeSeriesPanel::new(values).unwrap();
        let missing = MissingConfig {
            kind: MissingKind::Rm,
            p: 0.2,
            seed: 5,
            ..MissingConfig::default()
        };
        let mask = apply_missing(&panel, &missing).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            tau_max: 2,
            initial_groups: 1,
            ..TrainConfig::default()
        };
        let result = fit(&panel, &mask, &small_model(), &cfg, None, None).unwrap();
        for ((i, t), v) in result.imputed.values().indexed_iter() {
            if !mask.is_observed(i, t) {
                let center = 1000.0 * (i as f64 + 1.0);
                assert!(
                    (v - center).abs() < 100.0,
                    "imputed ({i}, {t}) = {v} far from series scale {center}"
                );
            }
        }
    }

    #[test]
    fn huge_sparsity_weight_drives_all_probabilities_down() {
        // pure noise carries no predictive signal, so with an overwhelming
        // penalty every edge probability must sink well under 0.05
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let values = Array2::from_shape_fn((4, 150), |_| normal.sample(&mut rng));
        let panel = TimeSeriesPanel::new(values).unwrap();
        let mask = ObservationMask::ones(4, 150);
        let cfg = TrainConfig {
            epochs: 50,
            tau_max: 2,
            initial_groups: 4,
            lambda_sparsity: 1e3,
            lr_theta: 0.02,
            batch: 32,
            ..TrainConfig::default()
        };
        let result = fit(&panel, &mask, &small_model(), &cfg, None, None).unwrap();
        let max_prob = result
            .edge_probabilities
            .iter()
            .fold(0.0_f64, |a, &b| a.max(b));
        assert!(max_prob < 0.05, "max edge probability {max_prob}");
    }

    #[test]
    fn true_direction_outranks_reverse_on_two_series() {
        // series 0 drives series 1; nothing flows back
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let normal = rand_distr::Normal::new(0.0, 0.1).unwrap();
        let t_len = 500;
        let mut values = Array2::zeros((2, t_len));
        for t in 1..t_len {
            let e0: f64 = normal.sample(&mut rng);
            let e1: f64 = normal.sample(&mut rng);
            values[[0, t]] = 0.7 * values[[0, t - 1]] + e0;
            values[[1, t]] = 0.8 * values[[0, t - 1]] + 0.15 * values[[1, t - 1]] + e1;
        }
        let panel = TimeSeriesPanel::new(values).unwrap();
        let mask = ObservationMask::ones(2, t_len);
        let cfg = TrainConfig {
            epochs: 60,
            tau_max: 1,
            initial_groups: 2,
            lambda_sparsity: 0.001,
            lr_theta: 0.005,
            lr_phi: 0.01,
            batch: 64,
            ..TrainConfig::default()
        };
        let result = fit(&panel, &mask, &small_model(), &cfg, None, None).unwrap();
        let m = &result.edge_probabilities;
        assert!(
            m[[0, 1]] > m[[1, 0]],
            "forward edge {} should outrank reverse edge {}",
            m[[0, 1]],
            m[[1, 0]]
        );
    }

    #[test]
    fn predictor_with_true_graph_beats_mean_baseline() {
        use crate::predictor::{EdgeInput, PredictorParameters, PredictorSpec, TapedPredictor};
        use crate::sim::{gen_lorenz96, Lorenz96Config};

        let (panel, truth) = gen_lorenz96(&Lorenz96Config {
            n_series: 8,
            length: 300,
            seed: 5,
            ..Lorenz96Config::default()
        })
        .unwrap();
        let mask = ObservationMask::ones(8, 300);
        let (values, _, _) = standardize(panel.values(), &mask);
        let edges = truth.as_f64();
        let width = 3usize;
        let windows = windows_for_length(300, width - 1, 1).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = PredictorSpec {
            n_series: 8,
            hidden_dim: 16,
            layers: 1,
            use_reset_gate: false,
        };
        let mut params = PredictorParameters::init(&spec, &mut rng).unwrap();
        let mut adam = Adam::new(0.01, &block_shapes(&params));
        for _ in 0..60 {
            for chunk in windows.chunks(64) {
                let mut tape = Tape::new();
                let taped = TapedPredictor::register(&mut tape, &params);
                let mut acc = tape.leaf(Array2::zeros((1, 1)));
                for w in chunk {
                    let inputs = values.slice(s![.., w.start..w.target()]);
                    let pred = taped.forward(&mut tape, inputs, EdgeInput::Hard(&edges));
                    let tgt = tape.leaf(
                        values
                            .column(w.target())
                            .to_owned()
                            .into_shape_with_order((1, 8))
                            .unwrap(),
                    );
                    let diff = tape.sub(pred, tgt);
                    let sq = tape.mul(diff, diff);
                    let total = tape.sum_all(sq);
                    acc = tape.add(acc, total);
                }
                let loss = tape.affine(acc, 1.0 / (8.0 * chunk.len() as f64), 0.0);
                let grads = tape.backward(loss);
                let grad_refs: Vec<Option<&Array2<f64>>> =
                    taped.leaf_ids().iter().map(|id| grads.get(*id)).collect();
                adam.step(&mut params.blocks_mut(), &grad_refs);
            }
        }

        // one-step RMSE over all windows with the truth graph as mask
        let mut model_se = 0.0;
        let mut mean_se = 0.0;
        let mut count = 0.0;
        for w in &windows {
            let mut tape = Tape::new();
            let taped = TapedPredictor::register(&mut tape, &params);
            let inputs = values.slice(s![.., w.start..w.target()]);
            let pred = taped.forward(&mut tape, inputs, EdgeInput::Hard(&edges));
            let pred = tape.value(pred).to_owned();
            for j in 0..8 {
                let target = values[[j, w.target()]];
                model_se += (pred[[0, j]] - target).powi(2);
                // standardized series have mean zero, so the mean predictor
                // forecasts zero everywhere
                mean_se += target * target;
                count += 1.0;
            }
        }
        let model_rmse = (model_se / count).sqrt();
        let mean_rmse = (mean_se / count).sqrt();
        assert!(
            model_rmse < mean_rmse,
            "model {model_rmse} vs mean predictor {mean_rmse}"
        );
    }

    #[test]
    fn prediction_loss_trends_down_in_epoch_medians() {
        let median = |xs: &mut Vec<f64>| -> f64 {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            xs[xs.len() / 2]
        };
        let mut early_avg = 0.0;
        let mut late_avg = 0.0;
        for seed in [1u64, 2] {
            let (panel, _) = gen_var(&VarConfig {
                n_series: 4,
                length: 200,
                tau_max: 2,
                density: 0.3,
                seed,
                ..VarConfig::default()
            })
            .unwrap();
            let mask = ObservationMask::ones(4, 200);
            let cfg = TrainConfig {
                epochs: 40,
                tau_max: 2,
                initial_groups: 4,
                lambda_sparsity: 0.001,
                lr_phi: 0.01,
                seed,
                ..TrainConfig::default()
            };
            let result = fit(&panel, &mask, &small_model(), &cfg, None, None).unwrap();
            let losses: Vec<f64> = result.trace.iter().map(|r| r.loss_prediction).collect();
            early_avg += median(&mut losses[..20].to_vec());
            late_avg += median(&mut losses[20..].to_vec());
        }
        assert!(
            late_avg < early_avg,
            "median prediction loss should fall: early {early_avg} late {late_avg}"
        );
    }

    #[test]
    fn trace_reports_auroc_only_when_truth_is_given() {
        let (panel, truth) = gen_var(&VarConfig {
            n_series: 4,
            length: 120,
            tau_max: 2,
            density: 0.3,
            seed: 9,
            ..VarConfig::default()
        })
        .unwrap();
        let mask = ObservationMask::ones(4, 120);
        let cfg = small_cfg();
        let with = fit(&panel, &mask, &small_model(), &cfg, Some(&truth), None).unwrap();
        for rec in &with.trace {
            let a = rec.auroc.expect("auroc present when truth supplied");
            assert!((0.0..=1.0).contains(&a), "auroc {a}");
        }
        let without = fit(&panel, &mask, &small_model(), &cfg, None, None).unwrap();
        assert!(without.trace.iter().all(|r| r.auroc.is_none()));
    }
}
