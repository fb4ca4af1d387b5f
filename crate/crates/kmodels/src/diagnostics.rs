//! Residual autocorrelation diagnostics: per-series Ljung-Box tests and
//! grouped statistics that pool every series fitted by one shared model,
//! referred to a chi-squared law with pooled degrees of freedom.
//!
//! Autocorrelations here are *not* mean-centered: residuals of an
//! adequate fit already have mean zero, and a shifted model shows up as
//! a mean the test should see.

use serde::{Deserialize, Serialize};

use crate::arma::{conditional_residuals, ArmaModel};
use crate::chi2::chi2_sf;
use crate::engine::Clustering;
use crate::error::Error;
use crate::series::{Dataset, TimeSeries};

/// Pivots smaller than this abort the partial-autocorrelation recursion.
const PACF_PIVOT_FLOOR: f64 = 1e-12;

/// Retained residuals of one series under its cluster's model, with
/// their autocorrelations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub series_id: String,
    /// Residuals after the zero start-up prefix is dropped; statistics
    /// treat this length as the series length.
    pub residuals: Vec<f64>,
    pub acf: Vec<f64>,
    pub pacf: Vec<f64>,
}

/// A portmanteau statistic referred to chi-squared with `df` degrees of
/// freedom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortmanteauResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Un-centered sample autocorrelations at lags 1..=m:
/// r_l = sum_{t=l+1..T} a_t a_{t-l} / sum_{t=1..T} a_t^2.
pub fn residual_acf(residuals: &[f64], m: usize) -> Result<Vec<f64>, Error> {
    let t = residuals.len();
    if m == 0 {
        return Err(Error::invalid("autocorrelation needs at least one lag"));
    }
    if m >= t {
        return Err(Error::invalid(format!(
            "autocorrelation at {m} lags needs a series longer than {m}, got {t}"
        )));
    }
    let denom: f64 = residuals.iter().map(|a| a * a).sum();
    if denom == 0.0 {
        return Err(Error::UndefinedAcf);
    }
    Ok((1..=m)
        .map(|l| {
            let num: f64 = (l..t).map(|i| residuals[i] * residuals[i - l]).sum();
            num / denom
        })
        .collect())
}

/// Partial autocorrelations from autocorrelations via the
/// Durbin-Levinson recursion; output has the same number of lags.
pub fn residual_pacf(acf: &[f64]) -> Result<Vec<f64>, Error> {
    let m = acf.len();
    if m == 0 {
        return Err(Error::invalid("partial autocorrelation needs at least one lag"));
    }
    let mut pacf = Vec::with_capacity(m);
    // prev holds the order-(k-1) prediction coefficients.
    let mut prev: Vec<f64> = Vec::new();
    for k in 1..=m {
        let num = acf[k - 1]
            - prev
                .iter()
                .enumerate()
                .map(|(j, &c)| c * acf[k - 2 - j])
                .sum::<f64>();
        let den = 1.0
            - prev
                .iter()
                .enumerate()
                .map(|(j, &c)| c * acf[j])
                .sum::<f64>();
        if den.abs() < PACF_PIVOT_FLOOR {
            return Err(Error::DegeneratePacf {
                lag: k,
                pivot: den,
            });
        }
        let refl = num / den;
        let mut next = Vec::with_capacity(k);
        for j in 0..k - 1 {
            next.push(prev[j] - refl * prev[k - 2 - j]);
        }
        next.push(refl);
        pacf.push(refl);
        prev = next;
    }
    Ok(pacf)
}

/// Shared accumulation kernel: T (T + 2) sum_l coeffs_l^2 / (T - l).
fn lb_kernel(coeffs: &[f64], t: usize) -> f64 {
    let tf = t as f64;
    let mut sum = 0.0;
    for (i, &c) in coeffs.iter().enumerate() {
        let lag = (i + 1) as f64;
        sum += c * c / (tf - lag);
    }
    tf * (tf + 2.0) * sum
}

fn portmanteau(statistic: f64, df: usize) -> Result<PortmanteauResult, Error> {
    let p_value = chi2_sf(statistic, df)?;
    Ok(PortmanteauResult {
        statistic,
        df,
        p_value,
    })
}

/// Ljung-Box (or, fed partial autocorrelations, Monti) test for one
/// series of length `t` whose model spent p + q coefficients.
pub fn ljung_box(
    coeffs: &[f64],
    t: usize,
    p: usize,
    q: usize,
) -> Result<PortmanteauResult, Error> {
    let m = coeffs.len();
    if m == 0 {
        return Err(Error::invalid("portmanteau test needs at least one lag"));
    }
    if m <= p + q {
        return Err(Error::invalid(format!(
            "portmanteau test at {m} lags has no degrees of freedom left after p + q = {}",
            p + q
        )));
    }
    if m >= t {
        return Err(Error::invalid(format!(
            "portmanteau test at {m} lags needs series length > {m}, got {t}"
        )));
    }
    portmanteau(lb_kernel(coeffs, t), m - p - q)
}

fn coeffs_of(stats: &ResidualStats, use_pacf: bool) -> &[f64] {
    if use_pacf {
        &stats.pacf
    } else {
        &stats.acf
    }
}

fn q_group_impl(
    stats: &[ResidualStats],
    p: usize,
    q: usize,
    use_pacf: bool,
    require_equal_len: bool,
) -> Result<PortmanteauResult, Error> {
    if stats.is_empty() {
        return Err(Error::invalid("grouped statistic needs at least one series"));
    }
    let m = stats[0].acf.len();
    for s in stats {
        if s.acf.len() != m || s.pacf.len() != m {
            return Err(Error::invalid(
                "grouped statistic needs the same lag count for every series",
            ));
        }
        if s.residuals.len() <= m {
            return Err(Error::invalid(format!(
                "series '{}' has {} retained residuals, need more than {m} lags",
                s.series_id,
                s.residuals.len()
            )));
        }
        if require_equal_len && s.residuals.len() != stats[0].residuals.len() {
            return Err(Error::invalid(format!(
                "grouped statistic needs equal lengths, got {} and {} ('{}'); \
                 use the relaxed variant for mixed lengths",
                stats[0].residuals.len(),
                s.residuals.len(),
                s.series_id
            )));
        }
    }
    let n = stats.len();
    if n * m <= p + q {
        return Err(Error::invalid(format!(
            "grouped statistic has no degrees of freedom: n m = {} <= p + q = {}",
            n * m,
            p + q
        )));
    }
    let mut statistic = 0.0;
    for s in stats {
        statistic += lb_kernel(coeffs_of(s, use_pacf), s.residuals.len());
    }
    portmanteau(statistic, n * m - p - q)
}

/// Grouped portmanteau statistic over all series sharing one model:
/// the Ljung-Box accumulations of the members added together, referred
/// to chi-squared with n m - p - q degrees of freedom. Requires equal
/// retained lengths; with a single series this is exactly [`ljung_box`].
pub fn q_group(
    stats: &[ResidualStats],
    p: usize,
    q: usize,
    use_pacf: bool,
) -> Result<PortmanteauResult, Error> {
    q_group_impl(stats, p, q, use_pacf, true)
}

/// [`q_group`] without the equal-length requirement: each series uses
/// its own length factor. The pooled reference law is then approximate;
/// reports carry a flag when this variant was used.
pub fn q_group_relaxed(
    stats: &[ResidualStats],
    p: usize,
    q: usize,
    use_pacf: bool,
) -> Result<PortmanteauResult, Error> {
    q_group_impl(stats, p, q, use_pacf, false)
}

/// Combines per-cluster grouped statistics: statistics and degrees of
/// freedom both add, so the sum is again chi-squared under the joint
/// adequacy hypothesis.
pub fn q_total(parts: &[PortmanteauResult]) -> Result<PortmanteauResult, Error> {
    if parts.is_empty() {
        return Err(Error::invalid("total statistic needs at least one cluster"));
    }
    let mut statistic = 0.0;
    let mut df = 0;
    for part in parts {
        statistic += part.statistic;
        df += part.df;
    }
    portmanteau(statistic, df)
}

/// Computes retained residuals and both autocorrelation sequences for
/// one series under `model`.
pub fn residual_stats(
    series: &TimeSeries,
    model: &ArmaModel,
    m: usize,
) -> Result<ResidualStats, Error> {
    let eps = conditional_residuals(series, model)?;
    let retained: Vec<f64> = eps[model.max_order().min(eps.len())..].to_vec();
    let acf = residual_acf(&retained, m)?;
    let pacf = residual_pacf(&acf)?;
    Ok(ResidualStats {
        series_id: series.id().to_owned(),
        residuals: retained,
        acf,
        pacf,
    })
}

/// Controls for [`cluster_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Autocorrelation lags per series.
    pub lags: usize,
    /// Clusters whose grouped p-value falls below this are flagged.
    pub flag_threshold: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            lags: 20,
            flag_threshold: 0.01,
        }
    }
}

/// Per-series entry inside a cluster's diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostics {
    pub series_id: String,
    pub retained_len: usize,
    pub ljung_box: PortmanteauResult,
}

/// Goodness-of-fit summary for one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    pub cluster: usize,
    pub n_series: usize,
    /// True when members had unequal retained lengths and the relaxed
    /// grouped statistic was used.
    pub relaxed: bool,
    pub q_acf: PortmanteauResult,
    pub q_pacf: PortmanteauResult,
    /// True when `q_acf.p_value` is below the report threshold.
    pub flagged: bool,
    pub series: Vec<SeriesDiagnostics>,
}

/// Whole-clustering diagnostics: one entry per live cluster plus the
/// combined statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub lags: usize,
    pub flag_threshold: f64,
    pub clusters: Vec<ClusterDiagnostics>,
    pub total_acf: PortmanteauResult,
    pub total_pacf: PortmanteauResult,
}

/// Runs residual diagnostics for every live cluster of `clustering`
/// against the dataset it was fitted on (differencing from the family
/// is re-applied here).
pub fn cluster_report(
    dataset: &Dataset,
    clustering: &Clustering,
    config: &ReportConfig,
) -> Result<DiagnosticsReport, Error> {
    if !(config.flag_threshold > 0.0 && config.flag_threshold < 1.0) {
        return Err(Error::invalid("flag threshold must be inside (0, 1)"));
    }
    let working = clustering.family.apply_differencing(dataset)?;
    let (p, q) = clustering.family.orders();

    let mut clusters = Vec::new();
    for (c, model) in clustering.models.iter().enumerate() {
        let Some(model) = model else {
            continue;
        };
        let members = clustering.cluster_members(c);
        if members.is_empty() {
            continue;
        }
        let residual_model = model.residual_model();
        let mut stats = Vec::with_capacity(members.len());
        for &i in &members {
            // Report under the original id even though differencing
            // renames the working series.
            let mut s = residual_stats(
                working.get(i).expect("member index in range"),
                &residual_model,
                config.lags,
            )?;
            s.series_id = dataset.get(i).expect("member index in range").id().to_owned();
            stats.push(s);
        }
        let equal_len = stats
            .iter()
            .all(|s| s.residuals.len() == stats[0].residuals.len());
        let (q_acf, q_pacf) = if equal_len {
            (
                q_group(&stats, p, q, false)?,
                q_group(&stats, p, q, true)?,
            )
        } else {
            (
                q_group_relaxed(&stats, p, q, false)?,
                q_group_relaxed(&stats, p, q, true)?,
            )
        };
        let series = stats
            .iter()
            .map(|s| {
                Ok(SeriesDiagnostics {
                    series_id: s.series_id.clone(),
                    retained_len: s.residuals.len(),
                    ljung_box: ljung_box(&s.acf, s.residuals.len(), p, q)?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        clusters.push(ClusterDiagnostics {
            cluster: c,
            n_series: members.len(),
            relaxed: !equal_len,
            flagged: q_acf.p_value < config.flag_threshold,
            q_acf,
            q_pacf,
            series,
        });
    }
    if clusters.is_empty() {
        return Err(Error::ClusteringFailure {
            reason: "no live cluster with members to diagnose".into(),
        });
    }
    let total_acf = q_total(&clusters.iter().map(|c| c.q_acf.clone()).collect::<Vec<_>>())?;
    let total_pacf = q_total(&clusters.iter().map(|c| c.q_pacf.clone()).collect::<Vec<_>>())?;
    Ok(DiagnosticsReport {
        lags: config.lags,
        flag_threshold: config.flag_threshold,
        clusters,
        total_acf,
        total_pacf,
    })
}
