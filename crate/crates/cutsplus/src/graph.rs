//! Group structure and edge-probability parameters for the learned graph.
//!
//! Series are partitioned into contiguous groups. Edge probabilities live at
//! group level: `logits` is `N_g x N`, entry `(k, j)` scoring the edge from
//! any member of group `k` into series `j`. Expanding copies each group row
//! to its members, giving the full `N x N` probability matrix. Splitting a
//! group hands each half a probability `q'` with `1 - (1 - q')^2 = q`, so
//! the chance that at least one child edge is on equals the parent's.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to this band before log/logit transforms.
pub const PROB_CLAMP: f64 = 1e-6;

/// Partition of `0..n_series` into contiguous groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    members: Vec<Vec<usize>>,
    group_of: Vec<usize>,
}

impl GroupAssignment {
    fn from_members(members: Vec<Vec<usize>>, n_series: usize) -> Self {
        let mut group_of = vec![usize::MAX; n_series];
        for (k, group) in members.iter().enumerate() {
            for &i in group {
                debug_assert_eq!(group_of[i], usize::MAX, "series {i} assigned twice");
                group_of[i] = k;
            }
        }
        debug_assert!(group_of.iter().all(|&k| k != usize::MAX));
        GroupAssignment { members, group_of }
    }

    pub fn n_groups(&self) -> usize {
        self.members.len()
    }

    pub fn n_series(&self) -> usize {
        self.group_of.len()
    }

    pub fn group_of(&self, series: usize) -> usize {
        self.group_of[series]
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    pub fn is_all_singleton(&self) -> bool {
        self.members.iter().all(|g| g.len() == 1)
    }

    pub fn largest_group(&self) -> usize {
        self.members.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// 0/1 membership matrix, `n_groups x n_series`, column sums 1.
    pub fn membership_matrix(&self) -> Array2<f64> {
        let mut g = Array2::zeros((self.n_groups(), self.n_series()));
        for (i, &k) in self.group_of.iter().enumerate() {
            g[[k, i]] = 1.0;
        }
        g
    }
}

/// Initial coarse partition: the first `n_groups - 1` groups take
/// `floor(n_series / n_groups)` consecutive series each and the last group
/// takes the remainder.
pub fn init_groups(n_series: usize, n_groups: usize) -> Result<GroupAssignment> {
    if n_groups == 0 || n_groups > n_series {
        return Err(Error::Config(format!(
            "need 1 <= n_groups <= n_series, got {n_groups} groups for {n_series} series"
        )));
    }
    let base = n_series / n_groups;
    let mut members = Vec::with_capacity(n_groups);
    let mut next = 0;
    for k in 0..n_groups {
        let size = if k + 1 == n_groups {
            n_series - next
        } else {
            base
        };
        members.push((next..next + size).collect());
        next += size;
    }
    Ok(GroupAssignment::from_members(members, n_series))
}

/// Group-level edge scores. `logits[[k, j]]` is the pre-sigmoid score of an
/// edge from group `k` into series `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphParameters {
    pub logits: Array2<f64>,
    pub temperature: f64,
    pub lambda_sparsity: f64,
}

impl GraphParameters {
    pub fn new(logits: Array2<f64>, temperature: f64, lambda_sparsity: f64) -> Self {
        GraphParameters {
            logits,
            temperature,
            lambda_sparsity,
        }
    }

    /// Small random logits centered on probability one half.
    pub fn init_random(
        n_groups: usize,
        n_series: usize,
        temperature: f64,
        lambda_sparsity: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let logits = Array2::from_shape_fn((n_groups, n_series), |_| {
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            0.1 * z
        });
        GraphParameters::new(logits, temperature, lambda_sparsity)
    }

    /// Group-level edge probabilities, the sigmoid of the logits.
    pub fn probabilities(&self) -> Array2<f64> {
        self.logits.mapv(sigmoid)
    }

    pub fn n_groups(&self) -> usize {
        self.logits.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.logits.ncols()
    }
}

/// One sampled (or relaxed) adjacency over all series; entries in `[0, 1]`,
/// exactly 0/1 when drawn by [`bernoulli_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryCausalGraph {
    pub edges: Array2<f64>,
}

/// Splits every group of two or more members into halves (first
/// `ceil(len / 2)`, then the rest) and maps each parent probability `q` to
/// the children's `q' = 1 - sqrt(1 - q)`. Returns `None` when every group is
/// already a singleton.
pub fn split_groups(
    assignment: &GroupAssignment,
    params: &GraphParameters,
) -> Option<(GroupAssignment, GraphParameters)> {
    if assignment.is_all_singleton() {
        return None;
    }
    let n_series = assignment.n_series();
    let mut members = Vec::new();
    let mut parent_of_child: Vec<usize> = Vec::new();
    for (k, group) in assignment.members.iter().enumerate() {
        if group.len() >= 2 {
            let mid = group.len().div_ceil(2);
            members.push(group[..mid].to_vec());
            parent_of_child.push(k);
            members.push(group[mid..].to_vec());
            parent_of_child.push(k);
        } else {
            members.push(group.clone());
            parent_of_child.push(k);
        }
    }

    let n_children = members.len();
    let n = params.n_series();
    let mut logits = Array2::zeros((n_children, n));
    for (child, &parent) in parent_of_child.iter().enumerate() {
        let grew = members[child].len() < assignment.members[parent].len();
        for j in 0..n {
            let theta = params.logits[[parent, j]];
            logits[[child, j]] = if grew { split_logit(theta) } else { theta };
        }
    }
    let assignment = GroupAssignment::from_members(members, n_series);
    let params = GraphParameters::new(logits, params.temperature, params.lambda_sparsity);
    Some((assignment, params))
}

/// Child probability under a group split: both halves inherit
/// `q' = 1 - sqrt(1 - q)`, so that two independent children recombine to
/// the parent, `1 - (1 - q')^2 = q`. Fixed points are exactly 0 and 1.
pub fn split_probability(q: f64) -> f64 {
    // stable form of 1 - sqrt(1 - q)
    q / (1.0 + (1.0 - q).sqrt())
}

/// Child logit whose probability satisfies `1 - (1 - q')^2 = q`.
fn split_logit(theta: f64) -> f64 {
    let q = sigmoid(theta).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    logit(split_probability(q))
}

/// Expands group-level probabilities to the full `n_series x n_series`
/// matrix: row `i` copies the row of series `i`'s group.
pub fn expand_cpg(params: &GraphParameters, assignment: &GroupAssignment) -> Array2<f64> {
    let q = params.probabilities();
    expand_rows(&q, assignment)
}

/// Copies each group row of `group_matrix` (`n_groups x n`) onto the rows of
/// the group's members.
pub fn expand_rows(group_matrix: &Array2<f64>, assignment: &GroupAssignment) -> Array2<f64> {
    let n = assignment.n_series();
    debug_assert_eq!(group_matrix.nrows(), assignment.n_groups());
    debug_assert_eq!(group_matrix.ncols(), n);
    Array2::from_shape_fn((n, n), |(i, j)| group_matrix[[assignment.group_of(i), j]])
}

/// Relaxed Bernoulli value for edge probability `prob` at `temperature`,
/// driven by two independent standard Gumbel draws.
pub fn gumbel_soft_value(prob: f64, g1: f64, g2: f64, temperature: f64) -> f64 {
    let m = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    sigmoid((logit(m) + g1 - g2) / temperature)
}

/// Draws one relaxed adjacency. Noise is drawn once per (group, target)
/// pair, in row-major order over the group matrix, and shared by all group
/// members so gradients aggregate at group level.
pub fn gumbel_soft_sample(
    params: &GraphParameters,
    assignment: &GroupAssignment,
    rng: &mut impl Rng,
) -> BinaryCausalGraph {
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit gumbel");
    let q = params.probabilities();
    let soft = Array2::from_shape_fn(q.dim(), |(k, j)| {
        let g1: f64 = gumbel.sample(rng);
        let g2: f64 = gumbel.sample(rng);
        gumbel_soft_value(q[[k, j]], g1, g2, params.temperature)
    });
    // from_shape_fn visits row-major for standard layout, but make the draw
    // order explicit: regenerate deterministically if that ever changes
    BinaryCausalGraph {
        edges: expand_rows(&soft, assignment),
    }
}

/// Draws one hard adjacency: each (group, target) edge is an independent
/// Bernoulli with the group's probability, shared by all members.
pub fn bernoulli_sample(
    params: &GraphParameters,
    assignment: &GroupAssignment,
    rng: &mut impl Rng,
) -> BinaryCausalGraph {
    let q = params.probabilities();
    let hard = Array2::from_shape_fn(q.dim(), |(k, j)| {
        f64::from(rng.random::<f64>() < q[[k, j]])
    });
    BinaryCausalGraph {
        edges: expand_rows(&hard, assignment),
    }
}

/// Geometric interpolation from `start` to `end` over `decay_epochs`, then
/// constant at `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GumbelSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_epochs: usize,
}

impl Default for GumbelSchedule {
    fn default() -> Self {
        GumbelSchedule {
            start: 1.0,
            end: 0.1,
            decay_epochs: 50,
        }
    }
}

impl GumbelSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.end > 0.0 && self.start.is_finite() && self.end.is_finite())
        {
            return Err(Error::Config(format!(
                "gumbel temperatures must be positive, got start {} end {}",
                self.start, self.end
            )));
        }
        if self.decay_epochs == 0 {
            return Err(Error::Config("gumbel decay_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Temperature for `epoch` under `schedule`.
pub fn anneal_temperature(epoch: usize, schedule: &GumbelSchedule) -> f64 {
    let frac = (epoch as f64 / schedule.decay_epochs as f64).min(1.0);
    schedule.start * (schedule.end / schedule.start).powf(frac)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
