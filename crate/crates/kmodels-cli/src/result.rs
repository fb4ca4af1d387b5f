//! The JSON result document written by `cluster` and read back by
//! `diagnose` and `export`. Identical manifest and seed produce a
//! byte-identical document: every collection is ordered (vectors in
//! dataset or cluster order, maps sorted by key).

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use kmodels::diagnostics::{cluster_report, DiagnosticsReport, ReportConfig};
use kmodels::engine::Clustering;
use kmodels::evaluation::{similarity, Partition, SimilarityScore};
use kmodels::series::Dataset;
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;

pub const SCHEMA_VERSION: u32 = 1;

/// One live cluster in reader-friendly form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub index: usize,
    pub n_members: usize,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: Option<f64>,
    pub member_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub manifest: RunManifest,
    /// Dataset order; index i matches `clustering.assignments[i]`.
    pub series_ids: Vec<String>,
    pub assignments: BTreeMap<String, Option<usize>>,
    pub clusters: Vec<ClusterSummary>,
    pub final_loss: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub loss_trace: Vec<f64>,
    pub vanished: Vec<usize>,
    /// Fitted-vs-reference partition agreement, when labels were supplied.
    pub similarity: Option<SimilarityScore>,
    pub diagnostics: DiagnosticsReport,
    /// Full machine-readable state, enough to re-run diagnostics later.
    pub clustering: Clustering,
}

impl ResultDocument {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read result document {}", path.display()))?;
        let doc: ResultDocument = serde_json::from_str(&text)
            .with_context(|| format!("{} is not a clustering result document", path.display()))?;
        if doc.schema_version != SCHEMA_VERSION {
            bail!(
                "{}: unsupported schema_version {} (expected {SCHEMA_VERSION})",
                path.display(),
                doc.schema_version
            );
        }
        Ok(doc)
    }
}

/// Assembles the result document from a finished run. `dataset` is the
/// preprocessed data the clustering ran on (original ids, not yet
/// differenced); `labels` are reference labels in dataset order.
pub fn build_result(
    manifest: &RunManifest,
    dataset: &Dataset,
    clustering: Clustering,
    labels: Option<&[String]>,
) -> Result<ResultDocument> {
    let series_ids: Vec<String> = dataset.ids().map(str::to_owned).collect();

    let assignments: BTreeMap<String, Option<usize>> = series_ids
        .iter()
        .cloned()
        .zip(clustering.assignments.iter().copied())
        .collect();

    let mut clusters = Vec::new();
    for (index, model) in clustering.models.iter().enumerate() {
        let members = clustering.cluster_members(index);
        let model = match model {
            Some(m) if !members.is_empty() => m,
            _ => continue,
        };
        clusters.push(ClusterSummary {
            index,
            n_members: members.len(),
            phi: model.phi().to_vec(),
            theta: model.theta().to_vec(),
            sigma2: model.sigma2(),
            member_ids: members.iter().map(|&i| series_ids[i].clone()).collect(),
        });
    }

    let similarity = match labels {
        Some(labels) => Some(similarity_against_labels(dataset, &clustering, labels)?),
        None => None,
    };

    let report_config = ReportConfig {
        lags: manifest.lags,
        ..ReportConfig::default()
    };
    let diagnostics = cluster_report(dataset, &clustering, &report_config)
        .context("diagnostics failed; a smaller --lags may help on short series")?;

    Ok(ResultDocument {
        schema_version: SCHEMA_VERSION,
        manifest: manifest.clone(),
        series_ids,
        assignments,
        clusters,
        final_loss: clustering.final_loss(),
        n_iterations: clustering.n_iterations,
        converged: clustering.converged,
        loss_trace: clustering.loss_trace.clone(),
        vanished: clustering.vanished.clone(),
        similarity,
        diagnostics,
        clustering,
    })
}

/// Scores the fitted partition against reference labels (one label per
/// series, dataset order). The reference partition is the yardstick.
pub fn similarity_against_labels(
    dataset: &Dataset,
    clustering: &Clustering,
    labels: &[String],
) -> Result<SimilarityScore> {
    let ids: Vec<String> = dataset.ids().map(str::to_owned).collect();
    let mut seen: Vec<&String> = Vec::new();
    let codes: Vec<usize> = labels
        .iter()
        .map(|l| match seen.iter().position(|s| *s == l) {
            Some(i) => i,
            None => {
                seen.push(l);
                seen.len() - 1
            }
        })
        .collect();
    let reference = Partition::from_labels("reference", &ids, &codes)?;
    let candidate = Partition::from_clustering("fitted", clustering, dataset)?;
    Ok(similarity(&reference, &candidate)?)
}
