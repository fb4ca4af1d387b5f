//! Shared helpers and independent numerical oracles for the acceptance
//! suite. The oracles deliberately avoid the library's linear-algebra
//! path: small dense Gaussian elimination and a primal simplex written
//! from scratch.

use kmodels::series::TimeSeries;
use rand::Rng;

/// Maps reflection coefficients (all inside the unit interval) to
/// autoregressive coefficients via the step-up recursion, guaranteeing a
/// stationary polynomial.
pub fn coeffs_from_partials(kappa: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::new();
    for (k, &kk) in kappa.iter().enumerate() {
        let prev = a.clone();
        a.push(0.0);
        for i in 0..k {
            a[i] = prev[i] - kk * prev[k - 1 - i];
        }
        a[k] = kk;
    }
    a
}

/// Draws a random stationary coefficient vector of length `p` with
/// reflection coefficients bounded away from the unit circle.
pub fn random_stable_coeffs<R: Rng + ?Sized>(rng: &mut R, p: usize, max_kappa: f64) -> Vec<f64> {
    let kappa: Vec<f64> = (0..p)
        .map(|_| rng.random_range(-max_kappa..max_kappa))
        .collect();
    coeffs_from_partials(&kappa)
}

/// Solves a small dense linear system by Gaussian elimination with
/// partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        assert!(d.abs() > 0.0, "singular system");
        for i in col + 1..n {
            let f = a[i][col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[i][j] -= f * a[col][j];
            }
            b[i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i][j] * x[j];
        }
        x[i] = s / a[i][i];
    }
    x
}

/// Lag-1..=m autocorrelations of `e` about zero, computed naively.
pub fn brute_acf(e: &[f64], m: usize) -> Vec<f64> {
    let ss: f64 = e.iter().map(|v| v * v).sum();
    (1..=m)
        .map(|l| e[l..].iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / ss)
        .collect()
}

/// Partial autocorrelations by solving the order-k Yule-Walker system for
/// each k and keeping the last coefficient.
pub fn yule_walker_pacf(acf: &[f64]) -> Vec<f64> {
    let rho = |d: usize| if d == 0 { 1.0 } else { acf[d - 1] };
    (1..=acf.len())
        .map(|k| {
            let a: Vec<Vec<f64>> = (0..k)
                .map(|i| (0..k).map(|j| rho(i.abs_diff(j))).collect())
                .collect();
            let b: Vec<f64> = (1..=k).map(|i| acf[i - 1]).collect();
            solve_dense(a, b)[k - 1]
        })
        .collect()
}

/// Builds the lagged regression rows of one series for order `p`:
/// target x_t against [x_{t-1}, ..., x_{t-p}] for t = p..len-1 (0-based).
pub fn lagged_rows(series: &TimeSeries, p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let v = series.values();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for t in p..v.len() {
        rows.push((1..=p).map(|i| v[t - i]).collect());
        y.push(v[t]);
    }
    (rows, y)
}

/// Exact least-absolute-deviations regression by linear programming:
/// minimize sum(u + v) subject to X(b+ - b-) + u - v = y with u, v >= 0,
/// solved with a dense primal simplex using Bland's rule. Returns the
/// coefficients and the optimal objective.
pub fn l1_regression_lp(x: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let n = y.len();
    let p = x[0].len();
    let ncols = 2 * p + 2 * n;
    let mut a = vec![vec![0.0; ncols]; n];
    let mut rhs = vec![0.0; n];
    let mut basis = vec![0usize; n];
    for t in 0..n {
        let sign = if y[t] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..p {
            a[t][j] = sign * x[t][j];
            a[t][p + j] = -sign * x[t][j];
        }
        a[t][2 * p + t] = sign;
        a[t][2 * p + n + t] = -sign;
        rhs[t] = sign * y[t];
        basis[t] = if y[t] < 0.0 { 2 * p + n + t } else { 2 * p + t };
    }
    let cost = |j: usize| if j >= 2 * p { 1.0 } else { 0.0 };
    loop {
        let mut entering = None;
        for j in 0..ncols {
            let mut r = cost(j);
            for i in 0..n {
                if cost(basis[i]) != 0.0 {
                    r -= a[i][j];
                }
            }
            if r < -1e-9 {
                entering = Some(j);
                break;
            }
        }
        let Some(e) = entering else { break };
        let mut leave: Option<usize> = None;
        for i in 0..n {
            if a[i][e] > 1e-9 {
                let better = match leave {
                    None => true,
                    Some(l) => {
                        let ri = rhs[i] / a[i][e];
                        let rl = rhs[l] / a[l][e];
                        ri < rl - 1e-12 || ((ri - rl).abs() <= 1e-12 && basis[i] < basis[l])
                    }
                };
                if better {
                    leave = Some(i);
                }
            }
        }
        let l = leave.expect("the absolute-deviation objective is bounded below");
        let pivot = a[l][e];
        for j in 0..ncols {
            a[l][j] /= pivot;
        }
        rhs[l] /= pivot;
        for i in 0..n {
            if i != l && a[i][e] != 0.0 {
                let f = a[i][e];
                for j in 0..ncols {
                    a[i][j] -= f * a[l][j];
                }
                rhs[i] -= f * rhs[l];
            }
        }
        basis[l] = e;
    }
    let mut b = vec![0.0; p];
    let mut objective = 0.0;
    for i in 0..n {
        let col = basis[i];
        if col < p {
            b[col] += rhs[i];
        } else if col < 2 * p {
            b[col - p] -= rhs[i];
        } else {
            objective += rhs[i];
        }
    }
    (b, objective)
}

/// Euclidean distance between coefficient vectors.
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
