//! Cluster-wide ARMA fitting by Gauss-Newton minimization of the
//! conditional sum of squared residuals.
//!
//! The model is X_t = a_t + sum_i phi_i X_{t-i} + sum_j theta_j a_{t-j}.
//! Residual recursions condition on zero start-up values, so every
//! sequence (residuals and the two derivative recursions) is zero for
//! t <= max(p, q) and the criterion sums only fully lagged terms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ar::{fit_ar, LossKind};
use crate::error::Error;
use crate::linalg;
use crate::series::{Dataset, TimeSeries};
use crate::simulate::{check_invertible, check_stationary};

/// Residuals beyond this magnitude abort the recursion as divergent.
const DIVERGENCE_LIMIT: f64 = 1e12;

/// A fitted ARMA(p, q) model. `theta` follows the simulation convention
/// (moving-average terms added); the internal recursions use its negation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaModel {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    /// Innovation variance estimate: conditional SSE over residual count.
    pub sigma2: f64,
}

impl ArmaModel {
    pub fn p(&self) -> usize {
        self.phi.len()
    }

    pub fn q(&self) -> usize {
        self.theta.len()
    }

    pub fn max_order(&self) -> usize {
        self.p().max(self.q())
    }

    /// Negated moving-average coefficients as used by the residual
    /// recursion.
    pub fn psi(&self) -> Vec<f64> {
        self.theta.iter().map(|t| -t).collect()
    }
}

/// How the Gauss-Newton iteration is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArmaInit {
    /// Autoregressive side from a least-squares AR(p) fit, moving-average
    /// side at zero.
    ArStart,
    /// All coefficients at zero.
    Zeros,
}

/// Tuning knobs for [`fit_arma`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaFitConfig {
    pub max_outer_iters: usize,
    /// Stop when the relative criterion improvement falls below this.
    pub loss_rel_tol: f64,
    pub init: ArmaInit,
    /// Weight each series' squared-residual sum by 1/length.
    pub weight_by_length: bool,
    /// How many times a rejected Gauss-Newton step is halved before the
    /// iteration stops.
    pub step_halving_max: usize,
}

impl Default for ArmaFitConfig {
    fn default() -> Self {
        ArmaFitConfig {
            max_outer_iters: 100,
            loss_rel_tol: 1e-8,
            init: ArmaInit::ArStart,
            weight_by_length: false,
            step_halving_max: 10,
        }
    }
}

/// Residual recursion state for one series under raw (phi, psi) vectors.
/// Output has the series' full length with zeros for t <= max(p, q).
fn residuals_raw(series: &TimeSeries, phi: &[f64], psi: &[f64]) -> Result<Vec<f64>, Error> {
    let m = phi.len().max(psi.len());
    let v = series.values();
    let mut eps = vec![0.0; v.len()];
    for t in m..v.len() {
        let mut e = v[t];
        for (i, &c) in phi.iter().enumerate() {
            e -= c * v[t - 1 - i];
        }
        for (j, &c) in psi.iter().enumerate() {
            e += c * eps[t - 1 - j];
        }
        if e.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                id: series.id().to_owned(),
                index: t,
            });
        }
        eps[t] = e;
    }
    Ok(eps)
}

/// Conditional residuals of `series` under `model`, zero for the first
/// max(p, q) entries.
pub fn conditional_residuals(series: &TimeSeries, model: &ArmaModel) -> Result<Vec<f64>, Error> {
    residuals_raw(series, &model.phi, &model.psi())
}

fn series_sse(series: &TimeSeries, phi: &[f64], psi: &[f64]) -> Result<f64, Error> {
    let eps = residuals_raw(series, phi, psi)?;
    Ok(eps.iter().map(|e| e * e).sum())
}

fn css_raw(
    cluster: &Dataset,
    phi: &[f64],
    psi: &[f64],
    weight_by_length: bool,
) -> Result<f64, Error> {
    let mut total = 0.0;
    for s in cluster.series() {
        let sse = series_sse(s, phi, psi)?;
        total += if weight_by_length {
            sse / s.len() as f64
        } else {
            sse
        };
    }
    Ok(total)
}

/// Conditional sum of squared residuals of `model` over the cluster,
/// optionally weighting each series by 1/length.
pub fn cluster_css(
    cluster: &Dataset,
    model: &ArmaModel,
    weight_by_length: bool,
) -> Result<f64, Error> {
    css_raw(cluster, &model.phi, &model.psi(), weight_by_length)
}

/// Squared-residual loss of `model` on one series.
pub fn arma_loss(series: &TimeSeries, model: &ArmaModel) -> Result<f64, Error> {
    series_sse(series, &model.phi, &model.psi())
}

/// Builds the Gauss-Newton update regression: residuals against the two
/// derivative recursions
///   u_t = X_t + sum_j psi_j u_{t-j}    (autoregressive directions)
///   v_t = -eps_t + sum_j psi_j v_{t-j} (moving-average directions)
/// stacked over all series, one row per retained residual
/// (t = max(p, q)+1 ..= T). The recursions run from the first
/// observation so that with q = 0 the rows coincide exactly with the
/// stacked autoregressive design; only true pre-sample terms are dropped.
fn update_design(
    cluster: &Dataset,
    phi: &[f64],
    psi: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>), Error> {
    let p = phi.len();
    let q = psi.len();
    let m = p.max(q);
    let nrows: usize = cluster.series().iter().map(|s| s.len() - m).sum();
    let mut y = DVector::<f64>::zeros(nrows);
    let mut x = DMatrix::<f64>::zeros(nrows, p + q);
    let mut row = 0;
    for s in cluster.series() {
        let v = s.values();
        let eps = residuals_raw(s, phi, psi)?;
        let mut u = vec![0.0; v.len()];
        let mut w = vec![0.0; v.len()];
        for t in 0..v.len() {
            let mut ut = v[t];
            let mut wt = -eps[t];
            for (j, &c) in psi.iter().enumerate() {
                if t > j {
                    ut += c * u[t - 1 - j];
                    wt += c * w[t - 1 - j];
                }
            }
            u[t] = ut;
            w[t] = wt;
        }
        for t in m..v.len() {
            y[row] = eps[t];
            for i in 0..p {
                x[(row, i)] = u[t - 1 - i];
            }
            for j in 0..q {
                x[(row, p + j)] = w[t - 1 - j];
            }
            row += 1;
        }
    }
    Ok((y, x))
}

/// Fits one ARMA(p, q) model to the whole cluster by Gauss-Newton descent
/// on the conditional sum of squares, with step halving so the criterion
/// never increases across outer iterations.
pub fn fit_arma(
    cluster: &Dataset,
    p: usize,
    q: usize,
    config: &ArmaFitConfig,
) -> Result<ArmaModel, Error> {
    fit_arma_impl(cluster, p, q, config).map(|(model, _)| model)
}

fn fit_arma_impl(
    cluster: &Dataset,
    p: usize,
    q: usize,
    config: &ArmaFitConfig,
) -> Result<(ArmaModel, Vec<f64>), Error> {
    if p + q == 0 {
        return Err(Error::invalid("fit_arma requires p + q >= 1"));
    }
    let m = p.max(q);
    for s in cluster.series() {
        if s.len() < 2 * m + 1 {
            return Err(Error::TooShort {
                id: s.id().to_owned(),
                len: s.len(),
                needed: 2 * m + 1,
                op: "fit_arma",
            });
        }
    }

    let mut phi = match config.init {
        ArmaInit::ArStart if p > 0 => match fit_ar(cluster, p, LossKind::L2) {
            Ok(model) => model.phi,
            Err(Error::DegenerateFit { .. }) => {
                log::warn!("autoregressive start is degenerate; starting from zeros");
                vec![0.0; p]
            }
            Err(e) => return Err(e),
        },
        _ => vec![0.0; p],
    };
    let mut psi = vec![0.0; q];

    let mut css = css_raw(cluster, &phi, &psi, config.weight_by_length)?;
    let mut trace = vec![css];

    for _ in 0..config.max_outer_iters {
        if css == 0.0 {
            break;
        }
        let (y, x) = update_design(cluster, &phi, &psi)?;
        let step = linalg::lstsq(&x, &y);
        if step.rank < p + q {
            return Err(Error::DegenerateFit {
                rank: step.rank,
                cols: p + q,
            });
        }

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=config.step_halving_max {
            let cand_phi: Vec<f64> = phi
                .iter()
                .enumerate()
                .map(|(i, &c)| c + scale * step.solution[i])
                .collect();
            let cand_psi: Vec<f64> = psi
                .iter()
                .enumerate()
                .map(|(j, &c)| c + scale * step.solution[p + j])
                .collect();
            match css_raw(cluster, &cand_phi, &cand_psi, config.weight_by_length) {
                Ok(c) if c <= css => {
                    accepted = Some((cand_phi, cand_psi, c));
                    break;
                }
                _ => scale *= 0.5,
            }
        }
        let Some((next_phi, next_psi, next_css)) = accepted else {
            break;
        };
        let improvement = (css - next_css) / css;
        phi = next_phi;
        psi = next_psi;
        css = next_css;
        trace.push(css);
        if improvement < config.loss_rel_tol {
            break;
        }
    }

    let sse = css_raw(cluster, &phi, &psi, false)?;
    let count: usize = cluster.series().iter().map(|s| s.len() - m).sum();
    let theta: Vec<f64> = psi.iter().map(|c| -c).collect();
    if check_stationary(&phi).is_err() {
        log::warn!("fitted autoregressive polynomial is not stationary: {phi:?}");
    }
    if check_invertible(&theta).is_err() {
        log::warn!("fitted moving-average polynomial is not invertible: {theta:?}");
    }
    Ok((
        ArmaModel {
            phi,
            theta,
            sigma2: sse / count as f64,
        },
        trace,
    ))
}
