//! Gated message-passing forecaster.
//!
//! Per target series `j`, the input at each step is the full cross-section
//! masked by `j`'s column of the (sampled) adjacency: `z (.) s[:, j]`. Each
//! gate of the recurrent cell feeds that masked vector through its own
//! two-layer MLP, so the hidden state of target `j` can only depend on
//! series with `s[[i, j]] != 0`. Component `j` of the network is therefore a
//! function of column `j` alone, which is what lets edge probabilities be
//! read as Granger-causal scores. Gates are computed from the input only;
//! an optional reset gate mixes the previous hidden state into the
//! candidate.
//!
//! Two implementations share the same parameters: a plain per-target forward
//! used for imputation and property tests, and a taped forward over all
//! targets at once (hidden states become `H x N` matrices) used for
//! training.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};

/// Shape of a forecaster; `n_series` is the panel width it reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub n_series: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub use_reset_gate: bool,
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_series == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::Config(format!(
                "predictor needs positive sizes, got n={}, hidden={}, layers={}",
                self.n_series, self.hidden_dim, self.layers
            )));
        }
        Ok(())
    }
}

/// Two-layer perceptron producing one gate's pre-activation:
/// `w_out . relu(w_in . z + b_in) + b_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateMlp {
    pub w_in: Array2<f64>,
    pub b_in: Array2<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array2<f64>,
}

impl GateMlp {
    fn init(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        GateMlp {
            w_in: glorot(hidden_dim, input_dim, rng),
            b_in: Array2::zeros((hidden_dim, 1)),
            w_out: glorot(hidden_dim, hidden_dim, rng),
            b_out: Array2::zeros((hidden_dim, 1)),
        }
    }

    /// Pre-activation for a single input vector.
    fn apply(&self, input: ArrayView1<'_, f64>) -> Array1<f64> {
        let hidden = (self.w_in.dot(&input) + self.b_in.column(0)).mapv(|v| v.max(0.0));
        self.w_out.dot(&hidden) + self.b_out.column(0)
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let scale = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// One recurrent layer: update and candidate gates, plus an optional reset
/// gate that feeds `r (.) h_prev` into the candidate pre-activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub update: GateMlp,
    pub candidate: GateMlp,
    pub reset: Option<GateMlp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParameters {
    pub layers: Vec<EncoderLayer>,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Shared `H -> H` relu layer followed by one linear head per series.
/// Column `j` of `head_w` together with `head_b[[0, j]]` is series `j`'s
/// head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParameters {
    pub shared_w: Array2<f64>,
    pub shared_b: Array2<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorParameters {
    pub encoder: EncoderParameters,
    pub decoder: DecoderParameters,
}

impl PredictorParameters {
    pub fn init(spec: &PredictorSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let (n, h) = (spec.n_series, spec.hidden_dim);
        let mut layers = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let input_dim = if l == 0 { n } else { h };
            layers.push(EncoderLayer {
                update: GateMlp::init(input_dim, h, rng),
                candidate: GateMlp::init(input_dim, h, rng),
                reset: spec
                    .use_reset_gate
                    .then(|| GateMlp::init(input_dim, h, rng)),
            });
        }
        Ok(PredictorParameters {
            encoder: EncoderParameters {
                layers,
                input_dim: n,
                hidden_dim: h,
            },
            decoder: DecoderParameters {
                shared_w: glorot(h, h, rng),
                shared_b: Array2::zeros((h, 1)),
                head_w: glorot(h, n, rng),
                head_b: Array2::zeros((1, n)),
            },
        })
    }

    pub fn n_series(&self) -> usize {
        self.encoder.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim
    }

    /// All trainable blocks with stable names, in a fixed order shared by
    /// [`TapedPredictor::leaf_ids`] and [`PredictorParameters::blocks_mut`].
    pub fn blocks(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.layers.iter().enumerate() {
            for (gate_name, gate) in named_gates(layer) {
                out.push((format!("encoder.l{l}.{gate_name}.w_in"), &gate.w_in));
                out.push((format!("encoder.l{l}.{gate_name}.b_in"), &gate.b_in));
                out.push((format!("encoder.l{l}.{gate_name}.w_out"), &gate.w_out));
                out.push((format!("encoder.l{l}.{gate_name}.b_out"), &gate.b_out));
            }
        }
        out.push(("decoder.shared_w".into(), &self.decoder.shared_w));
        out.push(("decoder.shared_b".into(), &self.decoder.shared_b));
        out.push(("decoder.head_w".into(), &self.decoder.head_w));
        out.push(("decoder.head_b".into(), &self.decoder.head_b));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        for layer in self.encoder.layers.iter_mut() {
            let mut gates: Vec<&mut GateMlp> = vec![&mut layer.update, &mut layer.candidate];
            if let Some(reset) = layer.reset.as_mut() {
                gates.push(reset);
            }
            for gate in gates {
                out.push(&mut gate.w_in);
                out.push(&mut gate.b_in);
                out.push(&mut gate.w_out);
                out.push(&mut gate.b_out);
            }
        }
        out.push(&mut self.decoder.shared_w);
        out.push(&mut self.decoder.shared_b);
        out.push(&mut self.decoder.head_w);
        out.push(&mut self.decoder.head_b);
        out
    }
}

fn named_gates(layer: &EncoderLayer) -> Vec<(&'static str, &GateMlp)> {
    let mut gates = vec![("update", &layer.update), ("candidate", &layer.candidate)];
    if let Some(reset) = layer.reset.as_ref() {
        gates.push(("reset", reset));
    }
    gates
}

/// Gate pre-activation on the input masked by the target's adjacency
/// column.
pub fn mpnn_forward(
    z: ArrayView1<'_, f64>,
    s_col: ArrayView1<'_, f64>,
    mlp: &GateMlp,
) -> Array1<f64> {
    let masked = &z.to_owned() * &s_col;
    mlp.apply(masked.view())
}

/// One recurrent step for a single target at the first (masked) layer.
pub fn gru_step(
    h_prev: &Array1<f64>,
    z: ArrayView1<'_, f64>,
    s_col: ArrayView1<'_, f64>,
    layer: &EncoderLayer,
) -> Array1<f64> {
    let masked = &z.to_owned() * &s_col;
    gru_step_inner(h_prev, masked.view(), layer)
}

fn gru_step_inner(
    h_prev: &Array1<f64>,
    input: ArrayView1<'_, f64>,
    layer: &EncoderLayer,
) -> Array1<f64> {
    let u = layer.update.apply(input).mapv(crate::graph::sigmoid);
    let mut c_pre = layer.candidate.apply(input);
    if let Some(reset) = &layer.reset {
        let r = reset.apply(input).mapv(crate::graph::sigmoid);
        c_pre = c_pre + &(&r * h_prev);
    }
    let c = c_pre.mapv(f64::tanh);
    &u * h_prev + &((1.0 - &u) * &c)
}

/// Unrolls the stacked cell over the columns of `inputs` (`N x W`, oldest
/// first) for one target and returns the top layer's final hidden state.
/// Hidden states start at zero.
pub fn encode(
    inputs: ArrayView2<'_, f64>,
    s_col: ArrayView1<'_, f64>,
    encoder: &EncoderParameters,
) -> Array1<f64> {
    let h_dim = encoder.hidden_dim;
    let mut hidden = vec![Array1::zeros(h_dim); encoder.layers.len()];
    for t in 0..inputs.ncols() {
        let z = inputs.column(t);
        let masked = &z.to_owned() * &s_col;
        let mut below = masked;
        for (l, layer) in encoder.layers.iter().enumerate() {
            hidden[l] = gru_step_inner(&hidden[l], below.view(), layer);
            below = hidden[l].clone();
        }
    }
    hidden.pop().expect("at least one layer")
}

/// Prediction for one target series from its final hidden state.
pub fn decode(h: &Array1<f64>, series: usize, decoder: &DecoderParameters) -> f64 {
    let d = (decoder.shared_w.dot(h) + decoder.shared_b.column(0)).mapv(|v| v.max(0.0));
    decoder.head_w.column(series).dot(&d) + decoder.head_b[[0, series]]
}

/// One-step-ahead predictions for every series: target `j` reads the inputs
/// through adjacency column `j`.
pub fn forward_all(
    inputs: ArrayView2<'_, f64>,
    edges: &Array2<f64>,
    params: &PredictorParameters,
) -> Array1<f64> {
    let n = params.n_series();
    debug_assert_eq!(inputs.nrows(), n);
    debug_assert_eq!(edges.dim(), (n, n));
    Array1::from_shape_fn(n, |j| {
        let h = encode(inputs, edges.column(j), &params.encoder);
        decode(&h, j, &params.decoder)
    })
}

/// Per-block shapes, for audits of how the parameter count scales with the
/// panel width.
pub fn block_audit(params: &PredictorParameters) -> Vec<(String, usize, usize)> {
    params
        .blocks()
        .into_iter()
        .map(|(name, a)| (name, a.nrows(), a.ncols()))
        .collect()
}

/// Adjacency input to the taped forward pass.
#[derive(Clone, Copy)]
pub enum EdgeInput<'a> {
    /// Tape node (`N x N`), e.g. a relaxed sample; gradients flow into it.
    Soft(NodeId),
    /// Fixed matrix treated as a constant.
    Hard(&'a Array2<f64>),
}

struct TapedGate {
    w_in: NodeId,
    b_in: NodeId,
    w_out: NodeId,
    b_out: NodeId,
}

struct TapedLayer {
    update: TapedGate,
    candidate: TapedGate,
    reset: Option<TapedGate>,
}

/// Parameter leaves registered on a tape, with a batched forward pass that
/// runs all `N` targets as one `H x N` recurrence.
pub struct TapedPredictor {
    layers: Vec<TapedLayer>,
    dec_shared_w: NodeId,
    dec_shared_b: NodeId,
    dec_head_w: NodeId,
    dec_head_b: NodeId,
    hidden_dim: usize,
    n_series: usize,
}

impl TapedPredictor {
    pub fn register(tape: &mut Tape, params: &PredictorParameters) -> Self {
        let register_gate = |tape: &mut Tape, gate: &GateMlp| TapedGate {
            w_in: tape.leaf(gate.w_in.clone()),
            b_in: tape.leaf(gate.b_in.clone()),
            w_out: tape.leaf(gate.w_out.clone()),
            b_out: tape.leaf(gate.b_out.clone()),
        };
        let layers = params
            .encoder
            .layers
            .iter()
            .map(|layer| TapedLayer {
                update: register_gate(tape, &layer.update),
                candidate: register_gate(tape, &layer.candidate),
                reset: layer.reset.as_ref().map(|r| register_gate(tape, r)),
            })
            .collect();
        TapedPredictor {
            layers,
            dec_shared_w: tape.leaf(params.decoder.shared_w.clone()),
            dec_shared_b: tape.leaf(params.decoder.shared_b.clone()),
            dec_head_w: tape.leaf(params.decoder.head_w.clone()),
            dec_head_b: tape.leaf(params.decoder.head_b.clone()),
            hidden_dim: params.hidden_dim(),
            n_series: params.n_series(),
        }
    }

    /// Leaf ids in the order of [`PredictorParameters::blocks`].
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for layer in &self.layers {
            let mut gates = vec![&layer.update, &layer.candidate];
            if let Some(reset) = layer.reset.as_ref() {
                gates.push(reset);
            }
            for g in gates {
                out.extend([g.w_in, g.b_in, g.w_out, g.b_out]);
            }
        }
        out.extend([
            self.dec_shared_w,
            self.dec_shared_b,
            self.dec_head_w,
            self.dec_head_b,
        ]);
        out
    }

    /// Batched forward over one window: `inputs` is `N x W` (oldest first,
    /// target column excluded); returns the `1 x N` prediction node.
    pub fn forward(
        &self,
        tape: &mut Tape,
        inputs: ArrayView2<'_, f64>,
        edges: EdgeInput<'_>,
    ) -> NodeId {
        let n = self.n_series;
        let h_dim = self.hidden_dim;
        assert_eq!(inputs.nrows(), n, "input row count");

        let mut hidden: Vec<NodeId> = (0..self.layers.len())
            .map(|_| tape.leaf(Array2::zeros((h_dim, n))))
            .collect();
        for t in 0..inputs.ncols() {
            let x_t = inputs.column(t);
            // column j of this matrix is the input cross-section, so the
            // elementwise product with the adjacency masks per target
            let x_bcast = Array2::from_shape_fn((n, n), |(i, _)| x_t[i]);
            let z = match edges {
                EdgeInput::Soft(s) => tape.mul_const(s, x_bcast),
                EdgeInput::Hard(s) => tape.leaf(s * &x_bcast),
            };
            let mut below = z;
            for (l, layer) in self.layers.iter().enumerate() {
                let u_pre = gate_forward(tape, &layer.update, below);
                let u = tape.sigmoid(u_pre);
                let mut c_pre = gate_forward(tape, &layer.candidate, below);
                if let Some(reset) = layer.reset.as_ref() {
                    let r_pre = gate_forward(tape, reset, below);
                    let r = tape.sigmoid(r_pre);
                    let gated = tape.mul(r, hidden[l]);
                    c_pre = tape.add(c_pre, gated);
                }
                let c = tape.tanh(c_pre);
                let keep = tape.mul(u, hidden[l]);
                let anti = tape.affine(u, -1.0, 1.0);
                let fresh = tape.mul(anti, c);
                hidden[l] = tape.add(keep, fresh);
                below = hidden[l];
            }
        }

        let top = *hidden.last().expect("at least one layer");
        let d_pre = tape.matmul(self.dec_shared_w, top);
        let d_pre = tape.add_col(d_pre, self.dec_shared_b);
        let d = tape.relu(d_pre);
        let weighted = tape.mul(self.dec_head_w, d);
        let sums = tape.column_sums(weighted);
        tape.add(sums, self.dec_head_b)
    }
}

fn gate_forward(tape: &mut Tape, gate: &TapedGate, input: NodeId) -> NodeId {
    let pre = tape.matmul(gate.w_in, input);
    let pre = tape.add_col(pre, gate.b_in);
    let hid = tape.relu(pre);
    let out = tape.matmul(gate.w_out, hid);
    tape.add_col(out, gate.b_out)
}
