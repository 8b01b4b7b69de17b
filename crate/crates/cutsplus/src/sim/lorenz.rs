//! Lorenz-96 chaotic benchmark integrated with fixed-step RK4.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesPanel;
use crate::error::{Error, Result};
use crate::sim::GroundTruthGraph;

/// Parameters for [`gen_lorenz96`]. The continuous system is integrated at
/// step `dt`, sampled every `subsample` steps, and observed with additive
/// Gaussian noise of scale `noise_sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lorenz96Config {
    pub n_series: usize,
    pub length: usize,
    pub forcing: f64,
    pub dt: f64,
    pub subsample: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for Lorenz96Config {
    fn default() -> Self {
        Lorenz96Config {
            n_series: 16,
            length: 1000,
            forcing: 10.0,
            dt: 0.01,
            subsample: 10,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl Lorenz96Config {
    pub fn validate(&self) -> Result<()> {
        if self.n_series < 4 {
            return Err(Error::Config(format!(
                "lorenz96 needs at least 4 series, got {}",
                self.n_series
            )));
        }
        if self.length == 0 {
            return Err(Error::Config("lorenz96 length must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "lorenz96 dt must be positive, got {}",
                self.dt
            )));
        }
        if self.subsample == 0 {
            return Err(Error::Config("lorenz96 subsample must be at least 1".into()));
        }
        if !self.forcing.is_finite() {
            return Err(Error::Config("lorenz96 forcing must be finite".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "lorenz96 noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Cyclic advection dynamics: `dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F`.
pub fn lorenz96_derivative(state: &Array1<f64>, forcing: f64) -> Array1<f64> {
    let n = state.len();
    Array1::from_shape_fn(n, |i| {
        let xm2 = state[(i + n - 2) % n];
        let xm1 = state[(i + n - 1) % n];
        let xp1 = state[(i + 1) % n];
        (xp1 - xm2) * xm1 - state[i] + forcing
    })
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step(state: &Array1<f64>, forcing: f64, dt: f64) -> Array1<f64> {
    let k1 = lorenz96_derivative(state, forcing);
    let k2 = lorenz96_derivative(&(state + &(&k1 * (dt / 2.0))), forcing);
    let k3 = lorenz96_derivative(&(state + &(&k2 * (dt / 2.0))), forcing);
    let k4 = lorenz96_derivative(&(state + &(&k3 * dt)), forcing);
    state + &((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Integrates Lorenz-96 from a randomly perturbed rest state, discards 1000
/// burn-in steps, and returns noisy subsampled observations with the cyclic
/// neighborhood graph as truth.
pub fn gen_lorenz96(config: &Lorenz96Config) -> Result<(TimeSeriesPanel, GroundTruthGraph)> {
    config.validate()?;
    let n = config.n_series;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    // the uniform state x == F is an exact fixed point, so start off it
    let mut state = Array1::from_shape_fn(n, |_| config.forcing + unit.sample(&mut rng));
    for step in 0..1000 {
        state = rk4_step(&state, config.forcing, config.dt);
        check_bounded(&state, step)?;
    }

    let mut values = Array2::<f64>::zeros((n, config.length));
    for k in 0..config.length {
        for i in 0..n {
            let noise = if config.noise_sigma > 0.0 {
                config.noise_sigma * unit.sample(&mut rng)
            } else {
                0.0
            };
            values[[i, k]] = state[i] + noise;
        }
        if k + 1 < config.length {
            for step in 0..config.subsample {
                state = rk4_step(&state, config.forcing, config.dt);
                check_bounded(&state, 1000 + k * config.subsample + step)?;
            }
        }
    }

    let panel = TimeSeriesPanel::new(values)?;
    let truth = lorenz96_truth(n);
    Ok((panel, truth))
}

fn check_bounded(state: &Array1<f64>, step: usize) -> Result<()> {
    if state.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
        return Err(Error::Simulation(format!(
            "lorenz96 trajectory blew up at step {step}; use a smaller dt"
        )));
    }
    Ok(())
}

/// Each derivative component `j` reads `x_{j-2}, x_{j-1}, x_j, x_{j+1}`
/// cyclically, so column `j` of the truth has exactly those four parents.
pub(crate) fn lorenz96_truth(n: usize) -> GroundTruthGraph {
    let mut a = Array2::<u8>::zeros((n, n));
    for j in 0..n {
        for offset in [n - 2, n - 1, 0, 1] {
            a[[(j + offset) % n, j]] = 1;
        }
    }
    GroundTruthGraph::new(a).expect("square 0/1 adjacency")
}
