//! Minimal reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Tape`] records a DAG of matrix operations as it computes values.
//! [`Tape::backward`] then walks the nodes in reverse creation order and
//! accumulates adjoints, yielding exact gradients of a scalar root with
//! respect to every node, in particular the parameter leaves. The op set is
//! exactly what the forecaster and losses need; shapes are validated when
//! ops are recorded, so backward can trust them.

use ndarray::{Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Elementwise product with a constant (no gradient into the constant).
    MulConst(NodeId),
    /// Add a column vector to every column.
    AddCol(NodeId, NodeId),
    /// Add a row vector to every row.
    AddRow(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    /// `scale * x + shift`; only `scale` matters for the backward pass.
    Affine(NodeId, f64),
    Clamp {
        input: NodeId,
        lo: f64,
        hi: f64,
    },
    SumAll(NodeId),
    /// Collapse rows: output is `1 x c` with entry `j` the sum of column `j`.
    ColumnSums(NodeId),
}

struct Node {
    value: Array2<f64>,
    /// Constant payload for [`Op::MulConst`].
    constant: Option<Array2<f64>>,
    op: Op,
}

/// Gradient of the root with respect to every node that influences it.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` when the node does not affect the root.
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.push_with_constant(value, None, op)
    }

    fn push_with_constant(
        &mut self,
        value: Array2<f64>,
        constant: Option<Array2<f64>>,
        op: Op,
    ) -> NodeId {
        self.nodes.push(Node {
            value,
            constant,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Input node: a parameter block or a constant.
    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ra, ca) = self.value(a).dim();
        let (rb, cb) = self.value(b).dim();
        assert_eq!(ca, rb, "matmul shape mismatch: {ra}x{ca} . {rb}x{cb}");
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape(a, b, "add");
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape(a, b, "sub");
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape(a, b, "mul");
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: NodeId, constant: Array2<f64>) -> NodeId {
        assert_eq!(
            self.value(a).dim(),
            constant.dim(),
            "mul_const shape mismatch"
        );
        let value = self.value(a) * &constant;
        self.push_with_constant(value, Some(constant), Op::MulConst(a))
    }

    pub fn add_col(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (r, _) = self.value(a).dim();
        assert_eq!(self.value(bias).dim(), (r, 1), "add_col bias shape");
        let value = self.value(a) + &self.value(bias).broadcast(self.value(a).dim()).unwrap();
        self.push(value, Op::AddCol(a, bias))
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (_, c) = self.value(a).dim();
        assert_eq!(self.value(bias).dim(), (1, c), "add_row bias shape");
        let value = self.value(a) + &self.value(bias).broadcast(self.value(a).dim()).unwrap();
        self.push(value, Op::AddRow(a, bias))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(crate::graph::sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> NodeId {
        let value = self.value(a).mapv(|v| scale * v + shift);
        self.push(value, Op::Affine(a, scale))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo < hi, "clamp bounds must be ordered");
        let value = self.value(a).mapv(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp { input: a, lo, hi })
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn column_sums(&mut self, a: NodeId) -> NodeId {
        let sums = self.value(a).sum_axis(Axis(0));
        let c = sums.len();
        let value = sums.into_shape_with_order((1, c)).unwrap();
        self.push(value, Op::ColumnSums(a))
    }

    fn assert_same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(
            self.value(a).dim(),
            self.value(b).dim(),
            "{what} shape mismatch"
        );
    }

    /// Accumulates the gradient of the scalar `root` (a `1 x 1` node) with
    /// respect to every node, in one reverse sweep.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be 1x1");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            // the adjoint of this node is final once we reach it, since all
            // consumers were created later and already visited

            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.mapv(|v| -v));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulConst(a) => {
                    let c = node.constant.as_ref().expect("mul_const payload");
                    accumulate(&mut grads, *a, &g * c);
                }
                Op::AddCol(a, bias) => {
                    let gb = g.sum_axis(Axis(1));
                    let r = gb.len();
                    accumulate(&mut grads, *bias, gb.into_shape_with_order((r, 1)).unwrap());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::AddRow(a, bias) => {
                    let gb = g.sum_axis(Axis(0));
                    let c = gb.len();
                    accumulate(&mut grads, *bias, gb.into_shape_with_order((1, c)).unwrap());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Sigmoid(a) => {
                    let ga = &g * &node.value.mapv(|y| y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = &g * &node.value.mapv(|y| 1.0 - y * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = &g * &node.value.mapv(|y| f64::from(y > 0.0));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Affine(a, scale) => {
                    accumulate(&mut grads, *a, g.mapv(|v| v * scale));
                }
                Op::Clamp { input, lo, hi } => {
                    let pass = self.value(*input).mapv(|v| f64::from(v > *lo && v < *hi));
                    accumulate(&mut grads, *input, &g * &pass);
                }
                Op::SumAll(a) => {
                    let scalar = g[[0, 0]];
                    let ga = Array2::from_elem(self.value(*a).dim(), scalar);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ColumnSums(a) => {
                    let dim = self.value(*a).dim();
                    let ga = g.broadcast(dim).unwrap().to_owned();
                    accumulate(&mut grads, *a, ga);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>) {
    match &mut grads[id.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

/// Central finite difference of a scalar function of a matrix argument.
pub fn numeric_gradient(
    mut f: impl FnMut(&Array2<f64>) -> f64,
    at: &Array2<f64>,
    step: f64,
) -> Array2<f64> {
    let mut grad = Array2::zeros(at.dim());
    let mut x = at.clone();
    for idx in ndarray::indices(at.dim()) {
        let orig = x[idx];
        x[idx] = orig + step;
        let up = f(&x);
        x[idx] = orig - step;
        let down = f(&x);
        x[idx] = orig;
        grad[idx] = (up - down) / (2.0 * step);
    }
    grad
}

/// `|a - b|` relative to `max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FD_STEP: f64 = 1e-4;
    const FD_TOL: f64 = 1e-4;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Checks the taped gradient for one input block of a scalar-valued
    /// computation against central differences.
    fn check_block(
        build: impl Fn(&mut Tape, &Array2<f64>) -> (NodeId, NodeId),
        at: &Array2<f64>,
    ) {
        let mut tape = Tape::new();
        let (leaf, root) = build(&mut tape, at);
        let grads = tape.backward(root);
        let analytic = grads.get(leaf).expect("leaf influences root");
        let numeric = numeric_gradient(
            |x| {
                let mut t = Tape::new();
                let (_, r) = build(&mut t, x);
                t.value(r)[[0, 0]]
            },
            at,
            FD_STEP,
        );
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!(
                relative_error(*a, *n) < FD_TOL,
                "analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn matmul_chain_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 4, 3);
        let w = random(&mut rng, 5, 4);
        // d/dW of sum(sigmoid(W . X))
        check_block(
            |tape, wv| {
                let xn = tape.leaf(x.clone());
                let wn = tape.leaf(wv.clone());
                let prod = tape.matmul(wn, xn);
                let act = tape.sigmoid(prod);
                (wn, tape.sum_all(act))
            },
            &w,
        );
        // and d/dX of the same map
        check_block(
            |tape, xv| {
                let xn = tape.leaf(xv.clone());
                let wn = tape.leaf(w.clone());
                let prod = tape.matmul(wn, xn);
                let act = tape.sigmoid(prod);
                (xn, tape.sum_all(act))
            },
            &x,
        );
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 3, 4);
        let c = random(&mut rng, 3, 4);
        check_block(
            |tape, av| {
                let an = tape.leaf(av.clone());
                let bn = tape.leaf(b.clone());
                let mixed = tape.mul(an, bn);
                let scaled = tape.mul_const(mixed, c.clone());
                let shifted = tape.affine(scaled, 1.7, -0.3);
                let diff = tape.sub(shifted, bn);
                let squashed = tape.tanh(diff);
                (an, tape.sum_all(squashed))
            },
            &a,
        );
    }

    #[test]
    fn broadcast_biases_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 4, 6);
        let col = random(&mut rng, 4, 1);
        let row = random(&mut rng, 1, 6);
        check_block(
            |tape, colv| {
                let an = tape.leaf(a.clone());
                let cb = tape.leaf(colv.clone());
                let rb = tape.leaf(row.clone());
                let x = tape.add_col(an, cb);
                let y = tape.add_row(x, rb);
                let z = tape.sigmoid(y);
                (cb, tape.sum_all(z))
            },
            &col,
        );
        check_block(
            |tape, rowv| {
                let an = tape.leaf(a.clone());
                let cb = tape.leaf(col.clone());
                let rb = tape.leaf(rowv.clone());
                let x = tape.add_col(an, cb);
                let y = tape.add_row(x, rb);
                let z = tape.tanh(y);
                (rb, tape.sum_all(z))
            },
            &row,
        );
    }

    #[test]
    fn relu_and_clamp_match_finite_differences_away_from_kinks() {
        // keep inputs away from 0 and the clamp bounds so central
        // differences are valid
        let a = array![[0.5, -0.7, 1.4], [-1.2, 0.9, 2.6]];
        check_block(
            |tape, av| {
                let an = tape.leaf(av.clone());
                let r = tape.relu(an);
                let cl = tape.clamp(r, 0.1, 2.0);
                (an, tape.sum_all(cl))
            },
            &a,
        );
    }

    #[test]
    fn clamped_entries_receive_zero_gradient() {
        let mut tape = Tape::new();
        let leaf = tape.leaf(array![[-5.0, 0.0, 5.0]]);
        let cl = tape.clamp(leaf, -1.0, 1.0);
        let root = tape.sum_all(cl);
        let grads = tape.backward(root);
        assert_eq!(grads.get(leaf).unwrap(), &array![[0.0, 1.0, 0.0]]);
    }

    #[test]
    fn column_sums_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, 5, 3);
        let w = random(&mut rng, 1, 3);
        check_block(
            |tape, av| {
                let an = tape.leaf(av.clone());
                let cs = tape.column_sums(an);
                let wn = tape.leaf(w.clone());
                let weighted = tape.mul(cs, wn);
                let sq = tape.mul(weighted, weighted);
                (an, tape.sum_all(sq))
            },
            &a,
        );
    }

    #[test]
    fn reused_node_accumulates_both_paths() {
        // f = sum(a * a) so df/da = 2a
        let a = array![[1.5, -2.0], [0.25, 3.0]];
        let mut tape = Tape::new();
        let an = tape.leaf(a.clone());
        let sq = tape.mul(an, an);
        let root = tape.sum_all(sq);
        let grads = tape.backward(root);
        let expected = a.mapv(|v| 2.0 * v);
        for (g, e) in grads.get(an).unwrap().iter().zip(expected.iter()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn fan_out_through_nonlinearity_accumulates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, 3, 3);
        check_block(
            |tape, av| {
                let an = tape.leaf(av.clone());
                let s = tape.sigmoid(an);
                let t = tape.tanh(an);
                let m = tape.mul(s, t);
                let u = tape.add(m, s);
                (an, tape.sum_all(u))
            },
            &a,
        );
    }

    #[test]
    fn nodes_off_the_root_path_have_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(array![[1.0]]);
        let b = tape.leaf(array![[2.0]]);
        let _unused = tape.sigmoid(b);
        let root = tape.sum_all(a);
        let grads = tape.backward(root);
        assert!(grads.get(b).is_none());
        assert!(grads.get(a).is_some());
    }

    #[test]
    fn gru_like_composite_matches_finite_differences() {
        // one full gated step: h = u (.) h0 + (1 - u) (.) c with
        // u = sigmoid(W2 relu(W1 Z + b1) + b2), c analogous
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (n, h) = (4, 3);
        let z = random(&mut rng, n, n);
        let w1u = random(&mut rng, h, n);
        let b1u = random(&mut rng, h, 1);
        let w2u = random(&mut rng, h, h);
        let w1c = random(&mut rng, h, n);
        let h0 = random(&mut rng, h, n);
        check_block(
            |tape, w1uv| {
                let zn = tape.leaf(z.clone());
                let w1un = tape.leaf(w1uv.clone());
                let b1un = tape.leaf(b1u.clone());
                let w2un = tape.leaf(w2u.clone());
                let w1cn = tape.leaf(w1c.clone());
                let h0n = tape.leaf(h0.clone());

                let pre_u = tape.matmul(w1un, zn);
                let pre_u = tape.add_col(pre_u, b1un);
                let hid_u = tape.relu(pre_u);
                let out_u = tape.matmul(w2un, hid_u);
                let u = tape.sigmoid(out_u);

                let pre_c = tape.matmul(w1cn, zn);
                let c = tape.tanh(pre_c);

                let keep = tape.mul(u, h0n);
                let anti = tape.affine(u, -1.0, 1.0);
                let new = tape.mul(anti, c);
                let hn = tape.add(keep, new);
                let sq = tape.mul(hn, hn);
                (w1un, tape.sum_all(sq))
            },
            &w1u,
        );
    }

    #[test]
    fn numeric_gradient_matches_analytic_quadratic() {
        let x = array![[1.0, -2.0], [0.5, 3.0]];
        let g = numeric_gradient(|m| m.iter().map(|v| v * v).sum(), &x, 1e-5);
        for (gi, xi) in g.iter().zip(x.iter()) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_mismatches_panic() {
        let result = std::panic::catch_unwind(|| {
            let mut tape = Tape::new();
            let a = tape.leaf(Array2::zeros((2, 3)));
            let b = tape.leaf(Array2::zeros((2, 3)));
            tape.matmul(a, b);
        });
        assert!(result.is_err());
    }
}
