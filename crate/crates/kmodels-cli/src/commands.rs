//! Implementations of the CLI subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kmodels::diagnostics::ReportConfig;
use kmodels::engine::{best_of, InitMethod};
use kmodels::evaluation::{
    builtin_specs, calibration_study, lookup, vanishing_study, CalibrationSummary,
    GroundTruthSpec, VanishingStudy,
};
use kmodels::series::{center, log_transform, rolling_mean, Dataset, TimeSeries};
use serde::Serialize;

use crate::ingest;
use crate::manifest::{FormatChoice, InitChoice, LossChoice, RunManifest};
use crate::result::{build_result, ResultDocument};

/// Applies the manifest's preprocessing chain (rolling mean, then log,
/// then centering) to every series, keeping the original ids.
pub fn preprocess(dataset: &Dataset, manifest: &RunManifest) -> Result<Dataset> {
    let mut out = Vec::with_capacity(dataset.len());
    for s in dataset.series() {
        let mut cur = s.clone();
        if let Some(window) = manifest.rolling_mean {
            cur = rolling_mean(&cur, window)?;
        }
        if manifest.log {
            cur = log_transform(&cur)?;
        }
        if manifest.center {
            cur = center(&cur)?;
        }
        out.push(TimeSeries::new(s.id(), cur.values().to_vec())?);
    }
    Ok(Dataset::new(out)?)
}

fn emit_json<T: Serialize>(value: &T, output: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(&text, output)
}

fn write_text(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display())),
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .context("cannot write to stdout")
        }
    }
}

fn open_output(output: Option<&Path>) -> Result<Box<dyn Write>> {
    match output {
        Some(path) => {
            let file = fs::File::create(path)
                .with_context(|| format!("cannot write {}", path.display()))?;
            Ok(Box::new(file))
        }
        None => Ok(Box::new(std::io::stdout())),
    }
}

fn load_input(manifest: &RunManifest) -> Result<(Dataset, Option<Vec<String>>)> {
    let path = manifest
        .input
        .as_deref()
        .context("input path is required; pass --input or set it in the config file")?;
    ingest::read_dataset(path, manifest.format, manifest.labels.as_deref())
}

pub fn cluster(manifest: &RunManifest) -> Result<()> {
    let (raw, labels) = load_input(manifest)?;
    let data = preprocess(&raw, manifest)?;
    let config = manifest.to_config()?;
    let clustering = best_of(&data, &config)?;
    log::info!(
        "finished: loss {:.6}, {} live cluster(s), {} iteration(s), converged: {}",
        clustering.final_loss(),
        clustering.live_clusters(),
        clustering.n_iterations,
        clustering.converged
    );
    let document = build_result(manifest, &data, clustering, labels.as_deref())?;
    emit_json(&document, manifest.output.as_deref())
}

pub struct DiagnoseParams {
    pub result: PathBuf,
    pub input: Option<PathBuf>,
    pub lags: Option<usize>,
    pub flag_threshold: Option<f64>,
    pub output: Option<PathBuf>,
}

/// Recomputes the residual diagnostics of a finished run, optionally at a
/// different lag count or flag threshold, without re-running the clustering.
pub fn diagnose(params: &DiagnoseParams) -> Result<()> {
    let document = ResultDocument::read(&params.result)?;
    let mut manifest = document.manifest.clone();
    if let Some(input) = &params.input {
        manifest.input = Some(input.clone());
    }
    let (raw, _) = ingest::read_dataset(
        manifest
            .input
            .as_deref()
            .context("the result document has no input path; pass --input")?,
        manifest.format,
        None,
    )?;
    let data = preprocess(&raw, &manifest)?;
    check_ids_match(&data, &document)?;

    let defaults = ReportConfig::default();
    let config = ReportConfig {
        lags: params.lags.unwrap_or(manifest.lags),
        flag_threshold: params.flag_threshold.unwrap_or(defaults.flag_threshold),
    };
    let report = kmodels::diagnostics::cluster_report(&data, &document.clustering, &config)?;
    emit_json(&report, params.output.as_deref())
}

fn check_ids_match(data: &Dataset, document: &ResultDocument) -> Result<()> {
    let ids: Vec<&str> = data.ids().collect();
    let expected: Vec<&str> = document.series_ids.iter().map(String::as_str).collect();
    if ids != expected {
        bail!("input data does not match the result document (series ids differ)");
    }
    Ok(())
}

pub struct SimulateParams {
    pub spec: Option<String>,
    pub spec_file: Option<PathBuf>,
    pub list: bool,
    pub seed: Option<u64>,
    pub format: FormatChoice,
    pub label_column: String,
    pub no_labels: bool,
    pub output: Option<PathBuf>,
}

fn resolve_spec(name: Option<&str>, file: Option<&Path>) -> Result<GroundTruthSpec> {
    match (name, file) {
        (Some(name), None) => lookup(name).with_context(|| {
            let known: Vec<String> =
                builtin_specs().into_iter().map(|s| s.name).collect();
            format!(
                "unknown design {name:?}; built-ins: {}",
                known.join(", ")
            )
        }),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let spec: GroundTruthSpec = serde_json::from_str(&text)
                .with_context(|| format!("{} is not a design document", path.display()))?;
            spec.validate()?;
            Ok(spec)
        }
        _ => bail!("pass exactly one of --spec or --spec-file"),
    }
}

pub fn simulate(params: &SimulateParams) -> Result<()> {
    if params.list {
        let mut text = String::new();
        for spec in builtin_specs() {
            let (p, q) = spec.orders();
            text.push_str(&format!(
                "{:<18} clusters={} series={} len={} arma=({p},{q}) noise_sd={} seed={}\n",
                spec.name,
                spec.clusters.len(),
                spec.total_count(),
                spec.clusters.first().map_or(0, |c| c.len),
                spec.noise_sd,
                spec.seed,
            ));
        }
        return write_text(&text, params.output.as_deref());
    }

    let mut spec = resolve_spec(params.spec.as_deref(), params.spec_file.as_deref())?;
    if let Some(seed) = params.seed {
        spec = spec.with_seed(seed);
    }
    let (dataset, labels) = spec.generate()?;
    let labels: Vec<String> = labels.iter().map(usize::to_string).collect();

    let out = open_output(params.output.as_deref())?;
    match params.format {
        FormatChoice::Wide => {
            if !params.no_labels {
                log::warn!(
                    "the wide format cannot carry a label column; writing data only \
                     (use --format long to embed labels)"
                );
            }
            ingest::write_wide(&dataset, out)
        }
        FormatChoice::Long => {
            let labels = (!params.no_labels).then_some((params.label_column.as_str(), &labels[..]));
            ingest::write_long(&dataset, labels, out)
        }
    }
}

pub struct VanishParams {
    pub spec: Option<String>,
    pub spec_file: Option<PathBuf>,
    pub k_values: Vec<usize>,
    pub init: InitChoice,
    pub loss: LossChoice,
    pub replications: usize,
    pub seed: u64,
    pub data_seed: Option<u64>,
    pub csv: bool,
    pub output: Option<PathBuf>,
}

pub fn study_vanish(params: &VanishParams) -> Result<()> {
    let mut spec = resolve_spec(params.spec.as_deref(), params.spec_file.as_deref())?;
    if let Some(seed) = params.data_seed {
        spec = spec.with_seed(seed);
    }
    let init = InitMethod {
        kind: params.init.into(),
        seed: params.seed,
    };
    let study = vanishing_study(
        &spec,
        &params.k_values,
        init,
        params.loss.into(),
        params.replications,
    )?;
    if params.csv {
        write_text(&vanish_table(&study), params.output.as_deref())
    } else {
        emit_json(&study, params.output.as_deref())
    }
}

fn vanish_table(study: &VanishingStudy) -> String {
    let mut text = String::from("k,mean_live,successes,failures\n");
    for row in &study.rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.k, row.mean_live, row.successes, row.failures
        ));
    }
    text
}

pub struct CalibrateParams {
    pub n: usize,
    pub t: usize,
    pub lags: usize,
    pub replications: usize,
    pub seed: u64,
    pub csv: bool,
    pub output: Option<PathBuf>,
}

pub fn study_calibrate(params: &CalibrateParams) -> Result<()> {
    let summary = calibration_study(
        params.n,
        params.t,
        params.lags,
        params.replications,
        params.seed,
    )?;
    if params.csv {
        write_text(&calibration_table(&summary)?, params.output.as_deref())
    } else {
        emit_json(&summary, params.output.as_deref())
    }
}

fn calibration_table(summary: &CalibrationSummary) -> Result<String> {
    let acf = &summary.acf.samples;
    let pacf = &summary.pacf.samples;
    if acf.len() != pacf.len() {
        bail!("calibration samples are misaligned");
    }
    let mut text = String::from("replication,q_acf,q_pacf\n");
    for (i, (a, p)) in acf.iter().zip(pacf).enumerate() {
        text.push_str(&format!("{},{a},{p}\n", i + 1));
    }
    Ok(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportKind {
    /// Per-series singleton fits with the run's family, plus cluster labels.
    Scatter,
    /// Per-replication portmanteau statistics from a calibration summary.
    Hist,
}

pub struct ExportParams {
    pub kind: ExportKind,
    pub result: PathBuf,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

pub fn export(params: &ExportParams) -> Result<()> {
    match params.kind {
        ExportKind::Scatter => export_scatter(params),
        ExportKind::Hist => export_hist(params),
    }
}

/// One row per series: the coefficients of a model fitted to that series
/// alone, and the cluster the run assigned it to. The clustering itself
/// fits cluster-wide models; these per-series fits are for plotting.
fn export_scatter(params: &ExportParams) -> Result<()> {
    let document = ResultDocument::read(&params.result)?;
    let mut manifest = document.manifest.clone();
    if let Some(input) = &params.input {
        manifest.input = Some(input.clone());
    }
    let (raw, _) = ingest::read_dataset(
        manifest
            .input
            .as_deref()
            .context("the result document has no input path; pass --input")?,
        manifest.format,
        None,
    )?;
    let data = preprocess(&raw, &manifest)?;
    check_ids_match(&data, &document)?;

    let family = manifest.family()?;
    let differenced = family.apply_differencing(&data)?;
    let (p, q) = family.orders();

    let mut writer = csv::Writer::from_writer(open_output(params.output.as_deref())?);
    let mut header = vec!["id".to_string()];
    header.extend((1..=p).map(|i| format!("phi{i}")));
    header.extend((1..=q).map(|j| format!("theta{j}")));
    header.push("cluster".to_string());
    writer.write_record(&header)?;

    for (i, series) in differenced.series().iter().enumerate() {
        let id = &document.series_ids[i];
        let singleton = Dataset::new(vec![series.clone()])?;
        let model = match family.fit(&singleton) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("skipping {id}: singleton fit failed: {e}");
                continue;
            }
        };
        let mut row = vec![id.clone()];
        row.extend(model.phi().iter().map(f64::to_string));
        row.extend(model.theta().iter().map(f64::to_string));
        row.push(match document.assignments.get(id) {
            Some(Some(c)) => c.to_string(),
            _ => String::new(),
        });
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

fn export_hist(params: &ExportParams) -> Result<()> {
    let text = fs::read_to_string(&params.result)
        .with_context(|| format!("cannot read {}", params.result.display()))?;
    let summary: CalibrationSummary = serde_json::from_str(&text).with_context(|| {
        format!(
            "{} is not a calibration summary document",
            params.result.display()
        )
    })?;
    write_text(&calibration_table(&summary)?, params.output.as_deref())
}
