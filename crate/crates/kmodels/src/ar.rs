//! Cluster-wide autoregressive fitting under squared or absolute loss.
//!
//! All series in a cluster share one coefficient vector. The responses and
//! lag rows of every member are stacked into a single regression, so a fit
//! over a cluster is the fit a single concatenated regression would give.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::linalg;
use crate::series::{Dataset, TimeSeries};

/// Which loss the fit (and assignment) uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Sum of squared one-step errors.
    L2,
    /// Sum of absolute one-step errors.
    L1,
}

/// Autoregressive model of order `phi.len() >= 1`, no intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub phi: Vec<f64>,
}

impl ArModel {
    pub fn order(&self) -> usize {
        self.phi.len()
    }
}

const IRLS_WEIGHT_FLOOR: f64 = 1e-8;
const IRLS_COEF_TOL: f64 = 1e-8;
const IRLS_MAX_ITERS: usize = 200;
const IRLS_MAX_HALVINGS: usize = 30;
const VERTEX_POLISH_ROUNDS: usize = 8;

/// Stacks every member of `cluster` into one response vector and lag-matrix
/// pair. Series `x` of length `T` contributes rows for `t = p+1 ..= T`:
/// response `x[t]`, regressors `[x[t-1], ..., x[t-p]]`.
pub fn build_design(cluster: &Dataset, p: usize) -> Result<(DVector<f64>, DMatrix<f64>), Error> {
    if p == 0 {
        return Err(Error::invalid("autoregressive order must be at least 1"));
    }
    let mut rows = 0;
    for s in cluster.series() {
        if s.len() < p + 1 {
            return Err(Error::TooShort {
                id: s.id().to_owned(),
                len: s.len(),
                needed: p + 1,
                op: "build_design",
            });
        }
        rows += s.len() - p;
    }
    let mut y = DVector::<f64>::zeros(rows);
    let mut x = DMatrix::<f64>::zeros(rows, p);
    let mut r = 0;
    for s in cluster.series() {
        let v = s.values();
        for t in p..v.len() {
            y[r] = v[t];
            for i in 0..p {
                x[(r, i)] = v[t - 1 - i];
            }
            r += 1;
        }
    }
    Ok((y, x))
}

/// Fits one AR(p) coefficient vector to the whole cluster.
///
/// `L2` solves the stacked least-squares problem exactly and errors with
/// [`Error::DegenerateFit`] when the design is rank deficient. `L1`
/// minimizes the stacked absolute-error objective by iteratively
/// reweighted least squares started from the `L2` solution.
pub fn fit_ar(cluster: &Dataset, p: usize, loss: LossKind) -> Result<ArModel, Error> {
    let (y, x) = build_design(cluster, p)?;
    if y.len() < p {
        return Err(Error::invalid(format!(
            "cluster provides {} stacked rows but the order-{p} fit needs at least {p}",
            y.len()
        )));
    }
    let base = linalg::lstsq(&x, &y);
    if base.rank < p {
        return Err(Error::DegenerateFit {
            rank: base.rank,
            cols: p,
        });
    }
    let phi = match loss {
        LossKind::L2 => base.solution,
        LossKind::L1 => irls_l1(&x, &y, base.solution),
    };
    Ok(ArModel {
        phi: phi.iter().cloned().collect(),
    })
}

fn l1_objective(x: &DMatrix<f64>, y: &DVector<f64>, phi: &DVector<f64>) -> f64 {
    (y - x * phi).iter().map(|r| r.abs()).sum()
}

/// Iteratively reweighted least squares for the absolute-error objective.
/// Weights are 1/max(|residual|, floor); stops when no coefficient moves
/// by more than the tolerance. A reweighted step that would increase the
/// objective is halved toward the current iterate (the optimum sits at a
/// non-smooth vertex, where full steps can cycle between active sets);
/// the best iterate seen is returned.
fn irls_l1(x: &DMatrix<f64>, y: &DVector<f64>, start: DVector<f64>) -> DVector<f64> {
    let mut phi = start;
    let mut objective = l1_objective(x, y, &phi);
    let mut best = phi.clone();
    let mut best_objective = objective;
    let mut weights = vec![0.0; y.len()];
    for _ in 0..IRLS_MAX_ITERS {
        let residuals = y - x * &phi;
        for (w, r) in weights.iter_mut().zip(residuals.iter()) {
            *w = 1.0 / r.abs().max(IRLS_WEIGHT_FLOOR);
        }
        let mut next = match linalg::weighted_normal_solve(x, y, &weights) {
            Some(sol) => sol,
            None => {
                log::warn!("reweighted normal equations not positive definite; using minimum-norm step");
                let mut xs = x.clone();
                let mut ys = y.clone();
                for r in 0..y.len() {
                    let s = weights[r].sqrt();
                    ys[r] *= s;
                    for c in 0..x.ncols() {
                        xs[(r, c)] *= s;
                    }
                }
                linalg::lstsq(&xs, &ys).solution
            }
        };
        let mut next_objective = l1_objective(x, y, &next);
        let mut halvings = 0;
        while next_objective > objective && halvings < IRLS_MAX_HALVINGS {
            next = (&next + &phi) * 0.5;
            next_objective = l1_objective(x, y, &next);
            halvings += 1;
        }
        if next_objective > objective {
            break;
        }
        let max_change = (&next - &phi).amax();
        phi = next;
        objective = next_objective;
        if objective < best_objective {
            best_objective = objective;
            best = phi.clone();
        }
        if max_change < IRLS_COEF_TOL {
            break;
        }
    }
    vertex_polish(x, y, best)
}

/// Finishes the reweighted iteration by interpolating the rows it has
/// driven closest to zero. An absolute-error optimum makes `p` residuals
/// exactly zero, but the weight floor lets the iterate stall a short
/// distance from that point; solving the identified rows exactly removes
/// the stall. Jumps are kept only while the objective strictly improves.
fn vertex_polish(x: &DMatrix<f64>, y: &DVector<f64>, mut best: DVector<f64>) -> DVector<f64> {
    let p = x.ncols();
    if y.len() < p {
        return best;
    }
    let mut best_objective = l1_objective(x, y, &best);
    for _ in 0..VERTEX_POLISH_ROUNDS {
        let residuals = y - x * &best;
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.sort_by(|&a, &b| residuals[a].abs().total_cmp(&residuals[b].abs()));
        let mut xa = DMatrix::<f64>::zeros(p, p);
        let mut ya = DVector::<f64>::zeros(p);
        for (i, &r) in order[..p].iter().enumerate() {
            ya[i] = y[r];
            for c in 0..p {
                xa[(i, c)] = x[(r, c)];
            }
        }
        let candidate = linalg::lstsq(&xa, &ya).solution;
        let objective = l1_objective(x, y, &candidate);
        if objective < best_objective {
            best = candidate;
            best_objective = objective;
        } else {
            break;
        }
    }
    best
}

/// One-step-ahead prediction loss of `model` on a single series, summed
/// over `t = p+1 ..= T`. Series no longer than `p` contribute nothing.
pub fn ar_loss(series: &TimeSeries, model: &ArModel, loss: LossKind) -> f64 {
    let p = model.order();
    let v = series.values();
    let mut total = 0.0;
    for t in p..v.len() {
        let mut pred = 0.0;
        for (i, &coef) in model.phi.iter().enumerate() {
            pred += coef * v[t - 1 - i];
        }
        let e = v[t] - pred;
        total += match loss {
            LossKind::L2 => e * e,
            LossKind::L1 => e.abs(),
        };
    }
    total
}
