//! Synthetic benchmarks: ground-truth graphs, VAR and Lorenz-96 generators,
//! and missing-data corruption.

mod lorenz;
mod var;

pub use lorenz::{gen_lorenz96, lorenz96_derivative, rk4_step, Lorenz96Config};
pub use var::{companion_spectral_radius, gen_var, simulate_var, VarConfig};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{ObservationMask, TimeSeriesPanel};
use crate::error::{Error, Result};

/// Directed adjacency over series: `adjacency[[i, j]] == 1` means series `i`
/// drives series `j`. Column `j` therefore lists the parents of `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthGraph {
    adjacency: Array2<u8>,
}

impl GroundTruthGraph {
    pub fn new(adjacency: Array2<u8>) -> Result<Self> {
        if adjacency.nrows() != adjacency.ncols() {
            return Err(Error::Shape(format!(
                "adjacency must be square, got {}x{}",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        if adjacency.iter().any(|&v| v > 1) {
            return Err(Error::Shape("adjacency entries must be 0 or 1".into()));
        }
        Ok(GroundTruthGraph { adjacency })
    }

    /// Converts a 0.0/1.0 matrix, e.g. one read back from CSV.
    pub fn from_f64(m: &Array2<f64>) -> Result<Self> {
        let mut adjacency = Array2::zeros(m.dim());
        for ((i, j), v) in m.indexed_iter() {
            adjacency[[i, j]] = if *v == 1.0 {
                1
            } else if *v == 0.0 {
                0
            } else {
                return Err(Error::Shape(format!(
                    "adjacency entry at ({i}, {j}) is {v}, expected 0.0 or 1.0"
                )));
            };
        }
        GroundTruthGraph::new(adjacency)
    }

    pub fn n_series(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Array2<u8> {
        &self.adjacency
    }

    pub fn as_f64(&self) -> Array2<f64> {
        self.adjacency.mapv(|v| v as f64)
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adjacency[[from, to]] == 1
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|&v| v as usize).sum()
    }
}

/// Missingness mechanism applied on top of a complete panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingKind {
    /// Keep everything observed.
    None,
    /// Random missing: each cell is dropped independently.
    Rm,
    /// Random block missing: independent drops plus contiguous per-series
    /// outage blocks.
    Rbm,
}

/// Parameters for [`apply_missing`]. `p` is the independent drop
/// probability; blocks are Poisson-many with expected count
/// `p_blk * N * T`, each spanning `l_min..=l_max` steps of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissingConfig {
    pub kind: MissingKind,
    pub p: f64,
    pub p_blk: f64,
    pub l_min: usize,
    pub l_max: usize,
    pub seed: u64,
}

impl Default for MissingConfig {
    fn default() -> Self {
        MissingConfig {
            kind: MissingKind::None,
            p: 0.0,
            p_blk: 0.0,
            l_min: 5,
            l_max: 20,
            seed: 0,
        }
    }
}

impl MissingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::Config(format!(
                "missing probability p must be in [0,1), got {}",
                self.p
            )));
        }
        if self.kind == MissingKind::Rbm {
            if !(self.p_blk >= 0.0 && self.p_blk.is_finite()) {
                return Err(Error::Config(format!(
                    "block rate p_blk must be a finite non-negative number, got {}",
                    self.p_blk
                )));
            }
            if self.l_min == 0 || self.l_min > self.l_max {
                return Err(Error::Config(format!(
                    "block lengths need 1 <= l_min <= l_max, got [{}, {}]",
                    self.l_min, self.l_max
                )));
            }
        }
        Ok(())
    }
}

/// Draws an observation mask for `panel` under `config`. The panel supplies
/// only the shape; values never influence which cells go missing.
pub fn apply_missing(panel: &TimeSeriesPanel, config: &MissingConfig) -> Result<ObservationMask> {
    config.validate()?;
    let (n, t) = (panel.n_series(), panel.length());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    match config.kind {
        MissingKind::None => Ok(ObservationMask::ones(n, t)),
        MissingKind::Rm => Ok(random_missing(n, t, config.p, &mut rng)),
        MissingKind::Rbm => {
            let mask = random_missing(n, t, config.p, &mut rng);
            let mut observed = mask.observed().clone();
            let expected_blocks = config.p_blk * (n * t) as f64;
            let n_blocks = if expected_blocks > 0.0 {
                let poisson = Poisson::new(expected_blocks)
                    .map_err(|e| Error::Config(format!("invalid block rate: {e}")))?;
                poisson.sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..n_blocks {
                let series = rng.random_range(0..n);
                let len = rng.random_range(config.l_min..=config.l_max).min(t);
                let start = rng.random_range(0..=t - len);
                for step in start..start + len {
                    observed[[series, step]] = 0;
                }
            }
            ObservationMask::new(observed)
        }
    }
}

fn random_missing(n: usize, t: usize, p: f64, rng: &mut ChaCha8Rng) -> ObservationMask {
    let observed = Array2::from_shape_fn((n, t), |_| u8::from(rng.random::<f64>() >= p));
    ObservationMask::new(observed).expect("entries constructed as 0/1")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank_panel(n: usize, t: usize) -> TimeSeriesPanel {
        TimeSeriesPanel::new(Array2::zeros((n, t))).unwrap()
    }

    #[test]
    fn none_kind_keeps_everything_observed() {
        let cfg = MissingConfig::default();
        let mask = apply_missing(&blank_panel(4, 50), &cfg).unwrap();
        assert!(mask.is_fully_observed());
    }

    #[test]
    fn same_seed_reproduces_the_mask() {
        let cfg = MissingConfig {
            kind: MissingKind::Rbm,
            p: 0.1,
            p_blk: 0.002,
            l_min: 3,
            l_max: 9,
            seed: 7,
        };
        let panel = blank_panel(10, 300);
        let a = apply_missing(&panel, &cfg).unwrap();
        let b = apply_missing(&panel, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rm_fraction_matches_probability() {
        let cfg = MissingConfig {
            kind: MissingKind::Rm,
            p: 0.3,
            seed: 11,
            ..MissingConfig::default()
        };
        let mask = apply_missing(&blank_panel(50, 2000), &cfg).unwrap();
        let missing = 1.0 - mask.observed_fraction();
        assert!(
            (missing - 0.3).abs() < 0.01,
            "missing fraction {missing} too far from 0.3"
        );
    }

    #[test]
    fn rbm_adds_expected_block_mass() {
        let base = MissingConfig {
            kind: MissingKind::Rm,
            p: 0.05,
            seed: 21,
            ..MissingConfig::default()
        };
        let blocks = MissingConfig {
            kind: MissingKind::Rbm,
            p: 0.05,
            p_blk: 0.003,
            l_min: 5,
            l_max: 5,
            seed: 21,
            ..MissingConfig::default()
        };
        let panel = blank_panel(50, 2000);
        let base_missing = 1.0 - apply_missing(&panel, &base).unwrap().observed_fraction();
        let total_missing = 1.0 - apply_missing(&panel, &blocks).unwrap().observed_fraction();
        // each block removes about l_min cells, so extra mass ~ p_blk * 5
        let extra = total_missing - base_missing;
        assert!(
            (extra - 0.015).abs() < 0.004,
            "block missing mass {extra} too far from 0.015"
        );
    }

    #[test]
    fn rbm_blocks_are_contiguous_runs() {
        let cfg = MissingConfig {
            kind: MissingKind::Rbm,
            p: 0.0,
            p_blk: 0.001,
            l_min: 4,
            l_max: 4,
            seed: 3,
            ..MissingConfig::default()
        };
        let mask = apply_missing(&blank_panel(8, 500), &cfg).unwrap();
        // with no independent drops, every missing run is a union of
        // length-4 blocks, so each run is at least 4 long
        for row in mask.observed().rows() {
            let mut run = 0usize;
            for &v in row.iter().chain(std::iter::once(&1u8)) {
                if v == 0 {
                    run += 1;
                } else {
                    assert!(run == 0 || run >= 4, "missing run of length {run}");
                    run = 0;
                }
            }
        }
        assert!(!mask.is_fully_observed(), "expected at least one block");
    }

    #[test]
    fn invalid_probability_is_rejected() {
        let cfg = MissingConfig {
            kind: MissingKind::Rm,
            p: 1.0,
            ..MissingConfig::default()
        };
        assert!(apply_missing(&blank_panel(2, 10), &cfg).is_err());
    }

    #[test]
    fn invalid_block_lengths_are_rejected() {
        let cfg = MissingConfig {
            kind: MissingKind::Rbm,
            p: 0.1,
            p_blk: 0.01,
            l_min: 9,
            l_max: 3,
            ..MissingConfig::default()
        };
        assert!(apply_missing(&blank_panel(2, 10), &cfg).is_err());
    }

    #[test]
    fn truth_graph_round_trips_through_f64() {
        let g = GroundTruthGraph::new(ndarray::array![[1u8, 0], [1, 1]]).unwrap();
        let g2 = GroundTruthGraph::from_f64(&g.as_f64()).unwrap();
        assert_eq!(g, g2);
        assert_eq!(g.edge_count(), 3);
        assert!(g.has_edge(1, 0) && !g.has_edge(0, 1));
    }
}
