//! The K-Models loop: alternate loss-minimizing assignment of series to
//! cluster models with cluster-wide refits, under one shared loss so the
//! global objective never increases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ar::{ar_loss, fit_ar, ArModel, LossKind};
use crate::arma::{arma_loss, fit_arma, ArmaFitConfig, ArmaModel};
use crate::error::Error;
use crate::series::{difference, Dataset, TimeSeries};

/// Relative loss improvements below this stop the loop (guards against
/// limit cycles that never reach an assignment fixed point).
const LOSS_REL_TOL: f64 = 1e-9;

/// How many fresh draws a random partition gets before giving up on
/// producing no empty cell.
const PARTITION_REDRAW_CAP: usize = 10_000;

/// Model class fitted per cluster, and the loss shared by fitting and
/// assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyKind {
    /// AR(p) under squared loss.
    ArL2 { p: usize },
    /// AR(p) under absolute loss.
    ArL1 { p: usize },
    /// ARMA(p, q) under the conditional sum of squared residuals.
    ArmaCss { p: usize, q: usize },
}

/// A model family plus the differencing depth applied before any
/// fitting (depth d turns the family into an integrated model).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFamily {
    pub kind: FamilyKind,
    pub d: usize,
}

impl ModelFamily {
    pub fn ar_l2(p: usize) -> Self {
        ModelFamily {
            kind: FamilyKind::ArL2 { p },
            d: 0,
        }
    }

    pub fn ar_l1(p: usize) -> Self {
        ModelFamily {
            kind: FamilyKind::ArL1 { p },
            d: 0,
        }
    }

    pub fn arma(p: usize, q: usize) -> Self {
        ModelFamily {
            kind: FamilyKind::ArmaCss { p, q },
            d: 0,
        }
    }

    pub fn with_d(mut self, d: usize) -> Self {
        self.d = d;
        self
    }

    /// (p, q) orders of the family.
    pub fn orders(&self) -> (usize, usize) {
        match self.kind {
            FamilyKind::ArL2 { p } | FamilyKind::ArL1 { p } => (p, 0),
            FamilyKind::ArmaCss { p, q } => (p, q),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let (p, q) = self.orders();
        match self.kind {
            FamilyKind::ArL2 { .. } | FamilyKind::ArL1 { .. } if p == 0 => {
                Err(Error::invalid("autoregressive family needs p >= 1"))
            }
            FamilyKind::ArmaCss { .. } if p + q == 0 => {
                Err(Error::invalid("ARMA family needs p + q >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// Minimum series length after differencing for fits and losses to
    /// be defined.
    pub fn min_series_len(&self) -> usize {
        let (p, q) = self.orders();
        match self.kind {
            FamilyKind::ArL2 { .. } | FamilyKind::ArL1 { .. } => p + 1,
            FamilyKind::ArmaCss { .. } => 2 * p.max(q) + 1,
        }
    }

    /// Applies the family's differencing depth to every series.
    pub fn apply_differencing(&self, dataset: &Dataset) -> Result<Dataset, Error> {
        if self.d == 0 {
            return Ok(dataset.clone());
        }
        dataset.map(|s| difference(s, self.d))
    }

    /// Fits one model of this family to all series in `cluster` jointly.
    /// Expects already-differenced data; see [`ModelFamily::apply_differencing`].
    pub fn fit(&self, cluster: &Dataset) -> Result<FittedModel, Error> {
        match self.kind {
            FamilyKind::ArL2 { p } => Ok(FittedModel::Ar(fit_ar(cluster, p, LossKind::L2)?)),
            FamilyKind::ArL1 { p } => Ok(FittedModel::Ar(fit_ar(cluster, p, LossKind::L1)?)),
            FamilyKind::ArmaCss { p, q } => Ok(FittedModel::Arma(fit_arma(
                cluster,
                p,
                q,
                &ArmaFitConfig::default(),
            )?)),
        }
    }

    /// Loss of one series under one model; the same quantity the fit
    /// minimizes summed over a cluster.
    pub fn loss(&self, series: &TimeSeries, model: &FittedModel) -> Result<f64, Error> {
        match (self.kind, model) {
            (FamilyKind::ArL2 { .. }, FittedModel::Ar(m)) => Ok(ar_loss(series, m, LossKind::L2)),
            (FamilyKind::ArL1 { .. }, FittedModel::Ar(m)) => Ok(ar_loss(series, m, LossKind::L1)),
            (FamilyKind::ArmaCss { .. }, FittedModel::Arma(m)) => arma_loss(series, m),
            _ => Err(Error::invalid("model does not belong to this family")),
        }
    }
}

/// A model fitted to one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Ar(ArModel),
    Arma(ArmaModel),
}

impl FittedModel {
    pub fn phi(&self) -> &[f64] {
        match self {
            FittedModel::Ar(m) => &m.phi,
            FittedModel::Arma(m) => &m.phi,
        }
    }

    pub fn theta(&self) -> &[f64] {
        match self {
            FittedModel::Ar(_) => &[],
            FittedModel::Arma(m) => &m.theta,
        }
    }

    pub fn sigma2(&self) -> Option<f64> {
        match self {
            FittedModel::Ar(_) => None,
            FittedModel::Arma(m) => Some(m.sigma2),
        }
    }

    /// View of the model used by residual recursions (an AR fit is an
    /// ARMA with no moving-average part).
    pub fn residual_model(&self) -> ArmaModel {
        match self {
            FittedModel::Ar(m) => ArmaModel {
                phi: m.phi.clone(),
                theta: Vec::new(),
                sigma2: 0.0,
            },
            FittedModel::Arma(m) => m.clone(),
        }
    }
}

/// How cluster models are seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitKind {
    /// k distinct series sampled without replacement, each fitted as a
    /// singleton cluster.
    Prototype,
    /// Series assigned to cells uniformly at random (re-drawn until no
    /// cell is empty), then each cell fitted.
    RandomPartition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitMethod {
    pub kind: InitKind,
    pub seed: u64,
}

/// What to do when a cluster loses its model or all its members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VanishPolicy {
    /// Retire the cluster; the run continues with fewer live clusters.
    Drop,
    /// Refill an emptied cluster with the worst-fitting series taken
    /// from a cluster that can spare one.
    ReassignFarthest,
}

/// Full configuration of one clustering run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KModelsConfig {
    pub k: usize,
    pub family: ModelFamily,
    pub init: InitMethod,
    pub max_iters: usize,
    /// Restart count used by [`best_of`].
    pub restarts: usize,
    pub vanish_policy: VanishPolicy,
}

impl KModelsConfig {
    pub fn new(k: usize, family: ModelFamily) -> Self {
        KModelsConfig {
            k,
            family,
            init: InitMethod {
                kind: InitKind::Prototype,
                seed: 0,
            },
            max_iters: 100,
            restarts: 10,
            vanish_policy: VanishPolicy::Drop,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init.seed = seed;
        self
    }

    fn validate(&self, n: usize) -> Result<(), Error> {
        self.family.validate()?;
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.k > n {
            return Err(Error::invalid(format!(
                "k = {} exceeds the {} series available",
                self.k, n
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Result of a clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster index per series (dataset order); `None` only for series
    /// never assigned (possible in an initialization-only state).
    pub assignments: Vec<Option<usize>>,
    /// Model per cluster; `None` marks a vanished cluster.
    pub models: Vec<Option<FittedModel>>,
    pub family: ModelFamily,
    /// Global loss after each assignment and each update step, in order.
    pub loss_trace: Vec<f64>,
    /// Completed assign + update cycles.
    pub n_iterations: usize,
    /// Indices of vanished clusters, ascending.
    pub vanished: Vec<usize>,
    pub converged: bool,
}

impl Clustering {
    pub fn live_clusters(&self) -> usize {
        self.models.iter().filter(|m| m.is_some()).count()
    }

    pub fn final_loss(&self) -> f64 {
        *self
            .loss_trace
            .last()
            .expect("a finished run has at least one loss entry")
    }

    /// Member indices of cluster `c` in dataset order.
    pub fn cluster_members(&self, c: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(i, a)| (*a == Some(c)).then_some(i))
            .collect()
    }
}

fn check_min_lengths(dataset: &Dataset, family: &ModelFamily) -> Result<(), Error> {
    let needed = family.min_series_len();
    for s in dataset.series() {
        if s.len() < needed {
            return Err(Error::TooShort {
                id: s.id().to_owned(),
                len: s.len(),
                needed,
                op: "cluster",
            });
        }
    }
    Ok(())
}

fn singleton(series: &TimeSeries) -> Dataset {
    Dataset::new(vec![series.clone()]).expect("a single series is a valid dataset")
}

fn subset(dataset: &Dataset, members: &[usize]) -> Dataset {
    Dataset::new(
        members
            .iter()
            .map(|&i| dataset.get(i).expect("member index in range").clone())
            .collect(),
    )
    .expect("cluster members form a valid dataset")
}

/// Fits every requested cluster in parallel, keeping result order.
fn fit_clusters(
    dataset: &Dataset,
    family: &ModelFamily,
    member_sets: &[Vec<usize>],
) -> Vec<Result<FittedModel, Error>> {
    member_sets
        .par_iter()
        .map(|members| family.fit(&subset(dataset, members)))
        .collect()
}

/// Total loss of the current (assignments, models) state. Summation is
/// sequential in series order so reruns are bit-identical.
fn global_loss(
    dataset: &Dataset,
    family: &ModelFamily,
    assignments: &[Option<usize>],
    models: &[Option<FittedModel>],
) -> Result<f64, Error> {
    let per_series: Vec<f64> = dataset
        .series()
        .par_iter()
        .zip(assignments.par_iter())
        .map(|(s, a)| {
            let c = a.ok_or_else(|| Error::Unassignable {
                id: s.id().to_owned(),
            })?;
            let model = models[c].as_ref().ok_or_else(|| Error::ClusteringFailure {
                reason: format!("series '{}' assigned to vanished cluster {c}", s.id()),
            })?;
            family.loss(s, model)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(per_series.iter().sum())
}

fn assign_core(
    dataset: &Dataset,
    models: &[Option<FittedModel>],
    family: &ModelFamily,
) -> Result<Vec<usize>, Error> {
    dataset
        .series()
        .par_iter()
        .map(|s| {
            let mut best: Option<(usize, f64)> = None;
            for (c, model) in models.iter().enumerate() {
                let Some(model) = model else {
                    continue;
                };
                match family.loss(s, model) {
                    Ok(l) if l.is_finite() => {
                        if best.map_or(true, |(_, b)| l < b) {
                            best = Some((c, l));
                        }
                    }
                    // A model that cannot score this series just does
                    // not compete for it.
                    _ => {}
                }
            }
            best.map(|(c, _)| c).ok_or_else(|| Error::Unassignable {
                id: s.id().to_owned(),
            })
        })
        .collect()
}

/// Assigns every series to its lowest-loss live model (ties toward the
/// lower cluster index). Differencing from the family is applied first.
pub fn assign(
    dataset: &Dataset,
    models: &[Option<FittedModel>],
    family: &ModelFamily,
) -> Result<Vec<usize>, Error> {
    let working = family.apply_differencing(dataset)?;
    check_min_lengths(&working, family)?;
    assign_core(&working, models, family)
}

fn initialize_core(
    dataset: &Dataset,
    config: &KModelsConfig,
) -> Result<Clustering, Error> {
    use rand::Rng;
    use rand::SeedableRng;

    let n = dataset.len();
    let k = config.k;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.init.seed);

    let mut assignments: Vec<Option<usize>> = vec![None; n];
    let mut loss_trace = Vec::new();

    let fits: Vec<Result<FittedModel, Error>> = match config.init.kind {
        InitKind::Prototype => {
            let chosen = rand::seq::index::sample(&mut rng, n, k);
            let member_sets: Vec<Vec<usize>> = chosen.iter().map(|i| vec![i]).collect();
            for (c, i) in chosen.iter().enumerate() {
                assignments[i] = Some(c);
            }
            fit_clusters(dataset, &config.family, &member_sets)
        }
        InitKind::RandomPartition => {
            let mut cells: Vec<usize> = Vec::new();
            let mut ok = false;
            for _ in 0..PARTITION_REDRAW_CAP {
                cells = (0..n).map(|_| rng.random_range(0..k)).collect();
                let mut counts = vec![0usize; k];
                for &c in &cells {
                    counts[c] += 1;
                }
                if counts.iter().all(|&c| c > 0) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::ClusteringFailure {
                    reason: format!(
                        "could not draw a random partition of {n} series into {k} non-empty cells"
                    ),
                });
            }
            for (i, &c) in cells.iter().enumerate() {
                assignments[i] = Some(c);
            }
            let member_sets: Vec<Vec<usize>> = (0..k)
                .map(|c| {
                    cells
                        .iter()
                        .enumerate()
                        .filter_map(|(i, &ci)| (ci == c).then_some(i))
                        .collect()
                })
                .collect();
            fit_clusters(dataset, &config.family, &member_sets)
        }
    };

    let mut models: Vec<Option<FittedModel>> = Vec::with_capacity(k);
    let mut vanished = Vec::new();
    for (c, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(m) => models.push(Some(m)),
            Err(e) => {
                log::warn!("initial fit of cluster {c} failed ({e}); cluster vanishes");
                models.push(None);
                vanished.push(c);
            }
        }
    }
    if models.iter().all(|m| m.is_none()) {
        return Err(Error::ClusteringFailure {
            reason: "every initial cluster fit failed".into(),
        });
    }

    // A full random partition with all models live has a well-defined
    // starting loss; a prototype state does not (most series are not
    // yet assigned), and neither does a partition with a vanished cell.
    if config.init.kind == InitKind::RandomPartition && vanished.is_empty() {
        loss_trace.push(global_loss(dataset, &config.family, &assignments, &models)?);
    }

    Ok(Clustering {
        assignments,
        models,
        family: config.family,
        loss_trace,
        n_iterations: 0,
        vanished,
        converged: false,
    })
}

/// Builds the starting state for [`run`]: prototype singleton models or
/// a fitted random partition, per the configured method.
pub fn initialize(dataset: &Dataset, config: &KModelsConfig) -> Result<Clustering, Error> {
    let working = config.family.apply_differencing(dataset)?;
    config.validate(working.len())?;
    check_min_lengths(&working, &config.family)?;
    initialize_core(&working, config)
}

/// Handles clusters that ended an assignment step empty. Returns the
/// loss-relevant state mutated in place.
fn handle_empty_clusters(
    dataset: &Dataset,
    family: &ModelFamily,
    policy: VanishPolicy,
    assignments: &mut [Option<usize>],
    models: &mut [Option<FittedModel>],
    vanished: &mut Vec<usize>,
) {
    let k = models.len();
    let mut counts = vec![0usize; k];
    for a in assignments.iter().flatten() {
        counts[*a] += 1;
    }
    for c in 0..k {
        if models[c].is_none() || counts[c] > 0 {
            continue;
        }
        match policy {
            VanishPolicy::Drop => {
                models[c] = None;
                vanished.push(c);
            }
            VanishPolicy::ReassignFarthest => {
                // Donor candidates: series whose cluster keeps >= 2
                // members. Take the one fitting its own model worst.
                let mut worst: Option<(usize, f64)> = None;
                for (i, a) in assignments.iter().enumerate() {
                    let Some(ci) = *a else { continue };
                    if counts[ci] < 2 {
                        continue;
                    }
                    let Some(model) = models[ci].as_ref() else {
                        continue;
                    };
                    let Ok(loss) = family.loss(
                        dataset.get(i).expect("series index in range"),
                        model,
                    ) else {
                        continue;
                    };
                    if worst.map_or(true, |(_, w)| loss > w) {
                        worst = Some((i, loss));
                    }
                }
                let Some((donor_idx, donor_loss)) = worst else {
                    log::warn!(
                        "cluster {c} emptied and no cluster can spare a series; dropping it"
                    );
                    models[c] = None;
                    vanished.push(c);
                    continue;
                };
                let donor_cluster = assignments[donor_idx].expect("donor is assigned");
                let series = dataset.get(donor_idx).expect("series index in range");
                // Seed with the singleton fit when it scores the series
                // at least as well as its old model; otherwise reuse the
                // old model so the global loss cannot increase.
                let seeded = match family.fit(&singleton(series)) {
                    Ok(m) => match family.loss(series, &m) {
                        Ok(l) if l <= donor_loss => m,
                        _ => models[donor_cluster].clone().expect("donor model live"),
                    },
                    Err(_) => models[donor_cluster].clone().expect("donor model live"),
                };
                models[c] = Some(seeded);
                assignments[donor_idx] = Some(c);
                counts[donor_cluster] -= 1;
                counts[c] = 1;
            }
        }
    }
}

fn run_core(dataset: &Dataset, config: &KModelsConfig) -> Result<Clustering, Error> {
    let mut state = initialize_core(dataset, config)?;
    let mut prev_assignments: Option<Vec<Option<usize>>> = None;
    let mut prev_cycle_loss: Option<f64> = None;

    for iter in 1..=config.max_iters {
        // Assignment step.
        let assigned = assign_core(dataset, &state.models, &config.family)?;
        let mut assignments: Vec<Option<usize>> = assigned.into_iter().map(Some).collect();
        handle_empty_clusters(
            dataset,
            &config.family,
            config.vanish_policy,
            &mut assignments,
            &mut state.models,
            &mut state.vanished,
        );
        let assign_loss = global_loss(dataset, &config.family, &assignments, &state.models)?;
        state.loss_trace.push(assign_loss);

        if prev_assignments.as_ref() == Some(&assignments) {
            // Same members would be refit to the same models: a fixed
            // point.
            state.assignments = assignments;
            state.converged = true;
            state.n_iterations = iter;
            break;
        }

        // Update step: refit each live cluster, keeping the old model
        // when the refit fails or scores worse on the same members.
        let member_sets: Vec<(usize, Vec<usize>)> = (0..state.models.len())
            .filter(|&c| state.models[c].is_some())
            .map(|c| {
                (
                    c,
                    assignments
                        .iter()
                        .enumerate()
                        .filter_map(|(i, a)| (*a == Some(c)).then_some(i))
                        .collect::<Vec<usize>>(),
                )
            })
            .collect();
        let refits: Vec<Option<FittedModel>> = member_sets
            .par_iter()
            .map(|(c, members)| {
                let cluster = subset(dataset, members);
                let old = state.models[*c].as_ref().expect("live cluster has a model");
                let cluster_loss = |model: &FittedModel| -> f64 {
                    let mut total = 0.0;
                    for s in cluster.series() {
                        match config.family.loss(s, model) {
                            Ok(l) => total += l,
                            Err(_) => return f64::INFINITY,
                        }
                    }
                    total
                };
                match config.family.fit(&cluster) {
                    Ok(new) => {
                        let new_loss = cluster_loss(&new);
                        let old_loss = cluster_loss(old);
                        if new_loss <= old_loss {
                            Some(new)
                        } else {
                            None
                        }
                    }
                    Err(e) => {
                        log::warn!("refit of cluster {c} failed ({e}); keeping previous model");
                        None
                    }
                }
            })
            .collect();
        for ((c, _), refit) in member_sets.iter().zip(refits) {
            if let Some(new) = refit {
                state.models[*c] = Some(new);
            }
        }

        let update_loss = global_loss(dataset, &config.family, &assignments, &state.models)?;
        state.loss_trace.push(update_loss);
        state.assignments = assignments.clone();
        state.n_iterations = iter;
        prev_assignments = Some(assignments);

        if let Some(prev) = prev_cycle_loss {
            if prev <= f64::MIN_POSITIVE || (prev - update_loss) / prev < LOSS_REL_TOL {
                state.converged = true;
                break;
            }
        } else if update_loss == 0.0 {
            state.converged = true;
            break;
        }
        prev_cycle_loss = Some(update_loss);
    }

    state.vanished.sort_unstable();
    state.vanished.dedup();
    Ok(state)
}

/// Runs one full clustering: differencing, initialization, then the
/// assign/update loop until an assignment fixed point, a vanishing loss
/// improvement, or `max_iters`.
pub fn run(dataset: &Dataset, config: &KModelsConfig) -> Result<Clustering, Error> {
    let working = config.family.apply_differencing(dataset)?;
    config.validate(working.len())?;
    check_min_lengths(&working, &config.family)?;
    run_core(&working, config)
}

/// Runs `config.restarts` clusterings with seeds seed, seed+1, ... and
/// returns the one with the lowest final loss (earliest seed wins ties).
/// Errors only when every restart fails.
pub fn best_of(dataset: &Dataset, config: &KModelsConfig) -> Result<Clustering, Error> {
    if config.restarts == 0 {
        return Err(Error::invalid("best_of needs at least one restart"));
    }
    let working = config.family.apply_differencing(dataset)?;
    config.validate(working.len())?;
    check_min_lengths(&working, &config.family)?;

    let results: Vec<Result<Clustering, Error>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let cfg = config.with_seed(config.init.seed + r as u64);
            run_core(&working, &cfg)
        })
        .collect();

    let mut best: Option<Clustering> = None;
    let mut first_err: Option<Error> = None;
    for result in results {
        match result {
            Ok(c) => {
                if best.as_ref().map_or(true, |b| c.final_loss() < b.final_loss()) {
                    best = Some(c);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    best.ok_or_else(|| first_err.expect("no successes implies at least one error"))
}
