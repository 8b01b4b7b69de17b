//! Linear vector-autoregressive benchmark with a known sparse graph.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesPanel;
use crate::error::{Error, Result};
use crate::sim::GroundTruthGraph;

/// Parameters for [`gen_var`]. Every lag shares one sparsity pattern: the
/// diagonal plus off-diagonal edges drawn with probability `density`.
/// Nonzero coefficients have magnitude uniform in `[0.1, coeff_scale]` with
/// random sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VarConfig {
    pub n_series: usize,
    pub length: usize,
    pub tau_max: usize,
    pub density: f64,
    pub coeff_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for VarConfig {
    fn default() -> Self {
        VarConfig {
            n_series: 16,
            length: 1000,
            tau_max: 3,
            density: 0.2,
            coeff_scale: 0.5,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl VarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_series < 2 {
            return Err(Error::Config("var needs at least 2 series".into()));
        }
        if self.length == 0 {
            return Err(Error::Config("var length must be positive".into()));
        }
        if self.tau_max == 0 {
            return Err(Error::Config("var tau_max must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::Config(format!(
                "var density must lie in [0, 1], got {}",
                self.density
            )));
        }
        if !(self.coeff_scale >= 0.1) {
            return Err(Error::Config(format!(
                "var coeff_scale must be at least 0.1, got {}",
                self.coeff_scale
            )));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "var noise_sigma must be positive, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Draws a sparse stable VAR process and returns the panel together with its
/// generating graph. Coefficient matrices use the convention
/// `coeffs[l][[i, j]]`: effect of series `i` at lag `l + 1` on series `j`.
pub fn gen_var(config: &VarConfig) -> Result<(TimeSeriesPanel, GroundTruthGraph)> {
    config.validate()?;
    let n = config.n_series;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let expected_off_diag = config.density * (n * (n - 1)) as f64;
    if expected_off_diag < 1.0 {
        log::warn!(
            "var density {} on {n} series expects under one off-diagonal edge",
            config.density
        );
    }

    let mut pattern = Array2::<u8>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j || rng.random::<f64>() < config.density {
                pattern[[i, j]] = 1;
            }
        }
    }

    let mut coeffs: Vec<Array2<f64>> = Vec::with_capacity(config.tau_max);
    for _ in 0..config.tau_max {
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if pattern[[i, j]] == 1 {
                    let magnitude = if config.coeff_scale > 0.1 {
                        rng.random_range(0.1..config.coeff_scale)
                    } else {
                        0.1
                    };
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    a[[i, j]] = sign * magnitude;
                }
            }
        }
        coeffs.push(a);
    }

    stabilize(&mut coeffs)?;
    let values = simulate_var(&coeffs, config.noise_sigma, config.length, &mut rng)?;
    let panel = TimeSeriesPanel::new(values)?;
    let truth = GroundTruthGraph::new(pattern)?;
    Ok((panel, truth))
}

/// Rescales all lags together until the companion spectral radius drops
/// below 1. Fails if repeated shrinking cannot stabilize the system.
fn stabilize(coeffs: &mut [Array2<f64>]) -> Result<()> {
    for _ in 0..32 {
        let rho = companion_spectral_radius(coeffs);
        if rho < 1.0 {
            return Ok(());
        }
        let shrink = 0.95 / rho;
        for a in coeffs.iter_mut() {
            a.mapv_inplace(|v| v * shrink);
        }
    }
    let rho = companion_spectral_radius(coeffs);
    if rho < 1.0 {
        Ok(())
    } else {
        Err(Error::Simulation(format!(
            "could not stabilize var coefficients, spectral radius {rho}"
        )))
    }
}

/// Spectral radius of the companion matrix of the lag polynomial.
pub fn companion_spectral_radius(coeffs: &[Array2<f64>]) -> f64 {
    let n = coeffs[0].nrows();
    let p = coeffs.len();
    let dim = n * p;
    let mut companion = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for (l, a) in coeffs.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                // x_t = sum_l A_l x_{t-l} with A_l = a^T under our convention
                companion[(j, l * n + i)] = a[[i, j]];
            }
        }
    }
    for k in n..dim {
        companion[(k, k - n)] = 1.0;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max)
}

/// Runs the recursion `x_j,t = sum_l sum_i coeffs[l][[i, j]] x_i,t-l-1 + e`
/// with Gaussian noise. The first `tau_max` steps are noise and a further
/// 200 steps are discarded as burn-in.
pub fn simulate_var(
    coeffs: &[Array2<f64>],
    noise_sigma: f64,
    length: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let n = coeffs[0].nrows();
    let tau_max = coeffs.len();
    let burn_in = 200;
    let total = tau_max + burn_in + length;
    let normal = Normal::new(0.0, noise_sigma)
        .map_err(|e| Error::Config(format!("invalid noise sigma: {e}")))?;

    let mut x = Array2::<f64>::zeros((n, total));
    for t in 0..tau_max {
        for i in 0..n {
            x[[i, t]] = normal.sample(rng);
        }
    }
    for t in tau_max..total {
        for j in 0..n {
            let mut v = normal.sample(rng);
            for (l, a) in coeffs.iter().enumerate() {
                for i in 0..n {
                    let c = a[[i, j]];
                    if c != 0.0 {
                        v += c * x[[i, t - l - 1]];
                    }
                }
            }
            if v.abs() > 1e6 {
                return Err(Error::Simulation(format!(
                    "var trajectory blew up at step {t}, series {j}"
                )));
            }
            x[[j, t]] = v;
        }
    }
    Ok(x.slice(ndarray::s![.., tau_max + burn_in..]).to_owned())
}
