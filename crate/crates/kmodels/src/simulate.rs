//! Simulation of ARMA sample paths with Gaussian innovations and a
//! reproducible, seed-addressed noise stream.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::series::TimeSeries;

/// Roots this close to the unit circle are treated as on it.
const UNIT_ROOT_SLACK: f64 = 1e-8;

/// Largest modulus among the roots of w^n - c1 w^(n-1) - ... - cn, found as
/// the eigenvalues of the companion matrix with first row `coeffs`.
pub(crate) fn max_root_modulus(coeffs: &[f64]) -> f64 {
    let n = coeffs.len();
    if n == 0 {
        return 0.0;
    }
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for (j, &c) in coeffs.iter().enumerate() {
        companion[(0, j)] = c;
    }
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max)
}

/// Checks that the autoregressive polynomial 1 - phi_1 z - ... - phi_p z^p
/// has all roots outside the unit circle.
pub fn check_stationary(phi: &[f64]) -> Result<(), Error> {
    let modulus = max_root_modulus(phi);
    if modulus >= 1.0 - UNIT_ROOT_SLACK {
        return Err(Error::NonStationary {
            coeffs: phi.to_vec(),
            modulus,
        });
    }
    Ok(())
}

/// Same root condition applied to the moving-average polynomial
/// 1 + theta_1 z + ... + theta_q z^q (invertibility).
pub fn check_invertible(theta: &[f64]) -> Result<(), Error> {
    let negated: Vec<f64> = theta.iter().map(|t| -t).collect();
    let modulus = max_root_modulus(&negated);
    if modulus >= 1.0 - UNIT_ROOT_SLACK {
        return Err(Error::NonStationary {
            coeffs: theta.to_vec(),
            modulus,
        });
    }
    Ok(())
}

/// Number of warm-up steps discarded before the retained sample.
pub fn burn_in(p: usize, q: usize) -> usize {
    200.max(10 * (p + q))
}

/// Draws one sample path of X_t = a_t + sum_i phi_i X_{t-i} + sum_j theta_j
/// a_{t-j} with a_t ~ N(0, sigma^2), consuming exactly one normal draw per
/// step (burn-in included) from `rng`.
pub fn simulate_arma_with<R: Rng + ?Sized>(
    phi: &[f64],
    theta: &[f64],
    len: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>, Error> {
    if len == 0 {
        return Err(Error::invalid("simulated length must be positive"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("noise standard deviation must be positive"));
    }
    check_stationary(phi)?;

    let total = len + burn_in(phi.len(), theta.len());
    let mut noise = vec![0.0; total];
    let mut x = vec![0.0; total];
    for t in 0..total {
        let z: f64 = rng.sample(StandardNormal);
        let a = sigma * z;
        noise[t] = a;
        let mut value = a;
        for (i, &coef) in phi.iter().enumerate() {
            if t > i {
                value += coef * x[t - i - 1];
            }
        }
        for (j, &coef) in theta.iter().enumerate() {
            if t > j {
                value += coef * noise[t - j - 1];
            }
        }
        x[t] = value;
    }
    Ok(x.split_off(total - len))
}

/// Seeded wrapper around [`simulate_arma_with`]; equal inputs give equal
/// output on every platform.
pub fn simulate_arma(
    phi: &[f64],
    theta: &[f64],
    len: usize,
    sigma: f64,
    seed: u64,
) -> Result<TimeSeries, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = simulate_arma_with(phi, theta, len, sigma, &mut rng)?;
    TimeSeries::new(format!("sim-{seed}"), values)
}
