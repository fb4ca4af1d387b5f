//! Experiment harness: ground-truth dataset generators, the asymmetric
//! partition-similarity score, and the two batch studies (cluster
//! vanishing counts and grouped-statistic calibration).

use std::collections::BTreeSet;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ar::{fit_ar, LossKind};
use crate::diagnostics::{q_group, residual_stats};
use crate::engine::{
    run, Clustering, InitKind, InitMethod, KModelsConfig, ModelFamily, VanishPolicy,
};
use crate::error::Error;
use crate::series::{Dataset, TimeSeries};
use crate::simulate::{check_stationary, simulate_arma_with};

/// One generated cluster: shared coefficients, series count and length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub count: usize,
    pub len: usize,
}

/// A reproducible synthetic dataset: named clusters plus the seed that
/// fixes every sample path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSpec {
    pub name: String,
    pub clusters: Vec<ClusterSpec>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl GroundTruthSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if self.clusters.is_empty() {
            return Err(Error::invalid("spec needs at least one cluster"));
        }
        for c in &self.clusters {
            if c.count == 0 || c.len == 0 {
                return Err(Error::invalid("cluster counts and lengths must be positive"));
            }
            check_stationary(&c.phi)?;
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::invalid("noise standard deviation must be positive"));
        }
        Ok(())
    }

    /// Number of series across all clusters.
    pub fn total_count(&self) -> usize {
        self.clusters.iter().map(|c| c.count).sum()
    }

    /// Highest (p, q) orders across clusters; the orders a recovery run
    /// should fit.
    pub fn orders(&self) -> (usize, usize) {
        let p = self.clusters.iter().map(|c| c.phi.len()).max().unwrap_or(0);
        let q = self
            .clusters
            .iter()
            .map(|c| c.theta.len())
            .max()
            .unwrap_or(0);
        (p, q)
    }

    /// Draws the dataset: cluster by cluster, one continuous seeded
    /// stream, ids `c{cluster}s{index}`. Also returns the true label of
    /// every series.
    pub fn generate(&self) -> Result<(Dataset, Vec<usize>), Error> {
        self.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let mut series = Vec::with_capacity(self.total_count());
        let mut labels = Vec::with_capacity(self.total_count());
        for (ci, cluster) in self.clusters.iter().enumerate() {
            for j in 0..cluster.count {
                let values = simulate_arma_with(
                    &cluster.phi,
                    &cluster.theta,
                    cluster.len,
                    self.noise_sd,
                    &mut rng,
                )?;
                series.push(TimeSeries::new(format!("c{ci}s{j}"), values)?);
                labels.push(ci);
            }
        }
        Ok((Dataset::new(series)?, labels))
    }

    /// Same spec with a different seed (fresh draws, same design).
    pub fn with_seed(&self, seed: u64) -> Self {
        GroundTruthSpec {
            seed,
            ..self.clone()
        }
    }
}

fn spec(
    name: &str,
    params: &[(&[f64], &[f64])],
    count: usize,
    len: usize,
    seed: u64,
) -> GroundTruthSpec {
    GroundTruthSpec {
        name: name.to_owned(),
        clusters: params
            .iter()
            .map(|(phi, theta)| ClusterSpec {
                phi: phi.to_vec(),
                theta: theta.to_vec(),
                count,
                len,
            })
            .collect(),
        noise_sd: 1.0,
        seed,
    }
}

/// The built-in experiment designs: 2/4/10-cluster AR(2) sets and
/// 2/4-cluster ARMA(1,1) sets, 25 series per cluster.
pub fn builtin_specs() -> Vec<GroundTruthSpec> {
    vec![
        spec(
            "2-AR(2)",
            &[(&[0.7, 0.25], &[]), (&[-0.3, 0.2], &[])],
            25,
            100,
            101,
        ),
        spec(
            "4-AR(2)",
            &[
                (&[0.7, 0.2], &[]),
                (&[-0.3, 0.2], &[]),
                (&[0.4, -0.2], &[]),
                (&[-0.2, -0.5], &[]),
            ],
            25,
            100,
            102,
        ),
        spec(
            "10-AR(2)",
            &[
                (&[-0.097, -0.945], &[]),
                (&[-0.215, -0.463], &[]),
                (&[0.419, 0.206], &[]),
                (&[-0.237, 0.135], &[]),
                (&[0.273, 0.640], &[]),
                (&[0.403, -0.497], &[]),
                (&[0.281, 0.500], &[]),
                (&[0.144, 0.824], &[]),
                (&[0.105, -0.550], &[]),
                (&[0.861, -0.520], &[]),
            ],
            25,
            1000,
            103,
        ),
        spec(
            "2-ARMA(1,1)",
            &[(&[-0.4], &[0.2]), (&[-0.2], &[0.4])],
            25,
            1000,
            104,
        ),
        spec(
            "4-ARMA(1,1)",
            &[
                (&[-0.4], &[0.2]),
                (&[-0.2], &[0.4]),
                (&[0.2], &[0.4]),
                (&[-0.2], &[-0.4]),
            ],
            25,
            1000,
            105,
        ),
        spec(
            "2-ARMA(1,1)-T200",
            &[(&[-0.4], &[-0.2]), (&[0.4], &[0.4])],
            25,
            200,
            106,
        ),
    ]
}

/// Finds a built-in spec by name.
pub fn lookup(name: &str) -> Option<GroundTruthSpec> {
    builtin_specs().into_iter().find(|s| s.name == name)
}

/// A set partition of series ids, used as one side of a similarity
/// comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub name: String,
    pub cells: Vec<BTreeSet<String>>,
}

impl Partition {
    /// Builds a partition, rejecting empty cells and repeated ids.
    pub fn new(name: impl Into<String>, cells: Vec<Vec<String>>) -> Result<Self, Error> {
        let name = name.into();
        if cells.is_empty() {
            return Err(Error::invalid("partition needs at least one cell"));
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(cells.len());
        for cell in cells {
            if cell.is_empty() {
                return Err(Error::invalid("partition cells must be non-empty"));
            }
            let set: BTreeSet<String> = cell.into_iter().collect();
            for id in &set {
                if !seen.insert(id.clone()) {
                    return Err(Error::DuplicateId { id: id.clone() });
                }
            }
            out.push(set);
        }
        Ok(Partition { name, cells: out })
    }

    /// Cells from parallel id/label slices; one cell per distinct label,
    /// in ascending label order.
    pub fn from_labels(
        name: impl Into<String>,
        ids: &[String],
        labels: &[usize],
    ) -> Result<Self, Error> {
        if ids.len() != labels.len() {
            return Err(Error::invalid("ids and labels must have equal length"));
        }
        let distinct: BTreeSet<usize> = labels.iter().cloned().collect();
        let cells: Vec<Vec<String>> = distinct
            .into_iter()
            .map(|l| {
                ids.iter()
                    .zip(labels)
                    .filter_map(|(id, &li)| (li == l).then(|| id.clone()))
                    .collect()
            })
            .collect();
        Partition::new(name, cells)
    }

    /// Cells of a finished clustering (live clusters with members, in
    /// ascending cluster order), under the dataset's ids.
    pub fn from_clustering(
        name: impl Into<String>,
        clustering: &Clustering,
        dataset: &Dataset,
    ) -> Result<Self, Error> {
        let mut cells = Vec::new();
        for c in 0..clustering.models.len() {
            let members = clustering.cluster_members(c);
            if members.is_empty() {
                continue;
            }
            cells.push(
                members
                    .iter()
                    .map(|&i| dataset.get(i).expect("member index in range").id().to_owned())
                    .collect(),
            );
        }
        Partition::new(name, cells)
    }

    pub fn k(&self) -> usize {
        self.cells.len()
    }

    fn id_set(&self) -> BTreeSet<&String> {
        self.cells.iter().flatten().collect()
    }
}

/// Result of [`similarity`]; `value` is 1 exactly when the partitions
/// are identical with matching cell counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub reference: String,
    pub candidate: String,
}

/// Asymmetric partition similarity: each reference cell is matched to
/// its best-overlapping candidate cell by the Dice score
/// 2 |A ∩ B| / (|A| + |B|), and the matches are averaged over the
/// reference cells.
pub fn similarity(reference: &Partition, candidate: &Partition) -> Result<SimilarityScore, Error> {
    if reference.id_set() != candidate.id_set() {
        return Err(Error::invalid(
            "partitions must cover the same set of series ids",
        ));
    }
    let mut total = 0.0;
    for a in &reference.cells {
        let mut best = 0.0_f64;
        for b in &candidate.cells {
            let inter = a.intersection(b).count();
            let dice = 2.0 * inter as f64 / (a.len() + b.len()) as f64;
            best = best.max(dice);
        }
        total += best;
    }
    Ok(SimilarityScore {
        value: total / reference.k() as f64,
        reference: reference.name.clone(),
        candidate: candidate.name.clone(),
    })
}

/// Chooses the family that recovers `spec` under the requested loss.
/// Absolute loss is only defined for pure AR designs.
pub fn family_for(spec: &GroundTruthSpec, loss: LossKind) -> Result<ModelFamily, Error> {
    let (p, q) = spec.orders();
    if q == 0 {
        Ok(match loss {
            LossKind::L2 => ModelFamily::ar_l2(p),
            LossKind::L1 => ModelFamily::ar_l1(p),
        })
    } else {
        match loss {
            LossKind::L2 => Ok(ModelFamily::arma(p, q)),
            LossKind::L1 => Err(Error::invalid(
                "absolute loss is only available for autoregressive designs",
            )),
        }
    }
}

/// One k row of a vanishing study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishingRow {
    pub k: usize,
    /// Mean live-cluster count over successful replications.
    pub mean_live: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishingStudy {
    pub spec_name: String,
    pub init: InitKind,
    pub loss: LossKind,
    pub replications: usize,
    pub rows: Vec<VanishingRow>,
}

/// How many live clusters survive, on average, when the design's data
/// is clustered at each requested k under the Drop policy. Every
/// replication regenerates the dataset (seed + replication index) and
/// runs once with a fresh initialization seed.
pub fn vanishing_study(
    spec: &GroundTruthSpec,
    k_values: &[usize],
    init: InitMethod,
    loss: LossKind,
    replications: usize,
) -> Result<VanishingStudy, Error> {
    spec.validate()?;
    if replications == 0 {
        return Err(Error::invalid("study needs at least one replication"));
    }
    if k_values.is_empty() {
        return Err(Error::invalid("study needs at least one k"));
    }
    let family = family_for(spec, loss)?;
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let outcomes: Vec<Result<usize, Error>> = (0..replications)
            .into_par_iter()
            .map(|rep| {
                let (dataset, _) = spec.with_seed(spec.seed + rep as u64).generate()?;
                let config = KModelsConfig {
                    k,
                    family,
                    init: InitMethod {
                        kind: init.kind,
                        seed: init.seed.wrapping_add(rep as u64),
                    },
                    max_iters: 100,
                    restarts: 1,
                    vanish_policy: VanishPolicy::Drop,
                };
                run(&dataset, &config).map(|c| c.live_clusters())
            })
            .collect();
        let mut successes = 0;
        let mut failures = 0;
        let mut live_sum = 0usize;
        for outcome in outcomes {
            match outcome {
                Ok(live) => {
                    successes += 1;
                    live_sum += live;
                }
                Err(e) => {
                    log::warn!("replication failed at k = {k}: {e}");
                    failures += 1;
                }
            }
        }
        if successes == 0 {
            return Err(Error::ClusteringFailure {
                reason: format!("every replication failed at k = {k}"),
            });
        }
        rows.push(VanishingRow {
            k,
            mean_live: live_sum as f64 / successes as f64,
            successes,
            failures,
        });
    }
    Ok(VanishingStudy {
        spec_name: spec.name.clone(),
        init: init.kind,
        loss,
        replications,
        rows,
    })
}

/// Autoregressive coefficient used by [`calibration_study`]'s generated
/// series. The study design fixes only "AR(1)"; this is the convention.
pub const CALIBRATION_PHI: f64 = 0.5;

/// Summary of one statistic's empirical distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub mean: f64,
    pub variance: f64,
    /// (probability, empirical quantile) pairs at 5/25/50/75/95%.
    pub quantiles: Vec<(f64, f64)>,
    /// Fraction of replications with p-value below 0.05.
    pub rejection_rate: f64,
    pub samples: Vec<f64>,
}

/// Monte-Carlo null calibration of the grouped statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub n: usize,
    pub t: usize,
    pub m: usize,
    pub replications: usize,
    pub seed: u64,
    /// Reference degrees of freedom n m - 1.
    pub df: usize,
    pub acf: CalibrationStats,
    pub pacf: CalibrationStats,
}

fn summarize(samples: Vec<f64>, rejections: usize, replications: usize) -> CalibrationStats {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut sorted = samples.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("statistics are finite"));
    let quantiles = [0.05, 0.25, 0.5, 0.75, 0.95]
        .iter()
        .map(|&p| {
            let pos = p * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            (p, sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
        })
        .collect();
    CalibrationStats {
        mean,
        variance,
        quantiles,
        rejection_rate: rejections as f64 / replications as f64,
        samples,
    }
}

/// Simulates `replications` null datasets (n AR(1) series of length t,
/// coefficient [`CALIBRATION_PHI`]), fits a shared AR(1) by conditional
/// least squares each time, and summarizes both grouped statistics at m
/// lags against their chi-squared reference.
pub fn calibration_study(
    n: usize,
    t: usize,
    m: usize,
    replications: usize,
    seed: u64,
) -> Result<CalibrationSummary, Error> {
    if n == 0 || replications == 0 {
        return Err(Error::invalid("calibration needs n >= 1 and replications >= 1"));
    }
    if m == 0 || m + 1 >= t {
        return Err(Error::invalid("calibration needs 1 <= m and m < t - 1"));
    }
    let outcomes: Vec<Result<(f64, f64, bool, bool), Error>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + rep as u64);
            let series: Result<Vec<TimeSeries>, Error> = (0..n)
                .map(|i| {
                    let values =
                        simulate_arma_with(&[CALIBRATION_PHI], &[], t, 1.0, &mut rng)?;
                    TimeSeries::new(format!("r{rep}s{i}"), values)
                })
                .collect();
            let dataset = Dataset::new(series?)?;
            let model = fit_ar(&dataset, 1, LossKind::L2)?;
            let residual_model = crate::arma::ArmaModel {
                phi: model.phi.clone(),
                theta: Vec::new(),
                sigma2: 0.0,
            };
            let stats: Result<Vec<_>, Error> = dataset
                .series()
                .iter()
                .map(|s| residual_stats(s, &residual_model, m))
                .collect();
            let stats = stats?;
            let acf = q_group(&stats, 1, 0, false)?;
            let pacf = q_group(&stats, 1, 0, true)?;
            Ok((
                acf.statistic,
                pacf.statistic,
                acf.p_value < 0.05,
                pacf.p_value < 0.05,
            ))
        })
        .collect();

    let mut acf_samples = Vec::with_capacity(replications);
    let mut pacf_samples = Vec::with_capacity(replications);
    let mut acf_rej = 0;
    let mut pacf_rej = 0;
    for outcome in outcomes {
        let (a, p, ra, rp) = outcome?;
        acf_samples.push(a);
        pacf_samples.push(p);
        acf_rej += ra as usize;
        pacf_rej += rp as usize;
    }
    Ok(CalibrationSummary {
        n,
        t,
        m,
        replications,
        seed,
        df: n * m - 1,
        acf: summarize(acf_samples, acf_rej, replications),
        pacf: summarize(pacf_samples, pacf_rej, replications),
    })
}
