//! End-to-end enrichment: fit margins, standardize, extract, lift,
//! resample and back-transform.

mod config;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{ConfigError, Extraction, LowerLevel, PipelineConfig, KEYS};
pub use validate::{validate, ValidationReport, COVERAGE_CSV_HEADER, SUMMARY_CSV_HEADER};

use crate::directsampling::{ds_simulate, DsParams};
use crate::field::{load_grid_stack, save_grid_stack, FieldError, GridStack, StackFormat};
use crate::lifting::{events_from_stack, extract_events, extract_top_events, lift_batch, lifted_stack, write_manifest, LiftSpec};
use crate::marginal::{fit_per_cell, write_params_csv, MarginalError, MarginalModel};
use crate::risk::{clamp_uniform, estimate_theta, return_level_with, summary_series, SummarySeries};
use crate::rng::derive_seed;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Version of each stage's algorithm, recorded in the manifest.
pub const STAGE_VERSIONS: &[(&str, u32)] =
    &[("fit", 1), ("standardize", 1), ("extract", 1), ("lift", 1), ("resample", 1), ("back_transform", 1)];

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
pub const EVENTS_CSV_HEADER: &str = "rank,replicate,v,role";

const LIFT_STAGE: u64 = 1;
const DS_STAGE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Fit,
    Standardize,
    Extract,
    Lift,
    Resample,
    BackTransform,
    Validate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Fit => "fit",
            Stage::Standardize => "standardize",
            Stage::Extract => "extract",
            Stage::Lift => "lift",
            Stage::Resample => "resample",
            Stage::BackTransform => "back-transform",
            Stage::Validate => "validate",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError { stage, source: Box::new(e) })
    }
}

fn stage_error(stage: Stage, message: impl Into<String>) -> PipelineError {
    PipelineError { stage, source: message.into().into() }
}

/// Per-cell standardization `x_U = F(x) - 1`, kept strictly inside `(-1, 0)`.
pub fn standardize(stack: &GridStack, models: &[MarginalModel]) -> Result<GridStack, FieldError> {
    map_cells(stack, models, |m, x| Ok(clamp_uniform(m.to_uniform(x))))
}

/// Per-cell inverse `F^{-1}(1 + x_U)`, after clamping into the open interval.
pub fn back_transform(stack: &GridStack, models: &[MarginalModel]) -> Result<GridStack, MarginalError> {
    let cells = stack.grid().len();
    if models.len() != cells {
        return Err(MarginalError::ModelCount { expected: cells, found: models.len() });
    }
    let values: Vec<f64> = stack
        .values()
        .par_iter()
        .enumerate()
        .map(|(k, &x)| {
            models[k % cells].from_uniform(clamp_uniform(x)).map_err(|e| MarginalError::Cell { cell: k % cells, source: Box::new(e) })
        })
        .collect::<Result<_, _>>()?;
    Ok(GridStack::new(*stack.grid(), stack.m(), values).expect("same shape"))
}

fn map_cells(
    stack: &GridStack,
    models: &[MarginalModel],
    f: impl Fn(&MarginalModel, f64) -> Result<f64, FieldError> + Sync,
) -> Result<GridStack, FieldError> {
    let cells = stack.grid().len();
    if models.len() != cells {
        return Err(FieldError::LengthMismatch { expected: cells, found: models.len() });
    }
    let values: Vec<f64> =
        stack.values().par_iter().enumerate().map(|(k, &x)| f(&models[k % cells], x)).collect::<Result<_, _>>()?;
    GridStack::new(*stack.grid(), stack.m(), values)
}

/// Extracted events split into holdout (most extreme first) and training.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSplit {
    pub holdout: Vec<usize>,
    pub training: Vec<usize>,
}

pub fn split_events(config: &PipelineConfig, series: &SummarySeries) -> Result<EventSplit, PipelineError> {
    let idx = match config.extraction {
        Extraction::TopK(k) => extract_top_events(series, config.holdout + k, config.min_separation),
        Extraction::Threshold(t) => extract_events(series, t, config.min_separation, None),
    }
    .at(Stage::Extract)?;
    if idx.len() <= config.holdout {
        return Err(stage_error(
            Stage::Extract,
            format!("{} events extracted, none left for training after holding out {}", idx.len(), config.holdout),
        ));
    }
    let (holdout, training) = idx.split_at(config.holdout);
    Ok(EventSplit { holdout: holdout.to_vec(), training: training.to_vec() })
}

/// Lift interval `[v1, v2]` resolved against the data.
pub fn lift_interval(config: &PipelineConfig, series: &SummarySeries, holdout: &[usize]) -> Result<(f64, f64), PipelineError> {
    let v1 = match config.lift_v1 {
        LowerLevel::Value(v) => v,
        LowerLevel::Holdout => holdout
            .iter()
            .map(|&j| series.v[j])
            .reduce(f64::min)
            .ok_or_else(|| stage_error(Stage::Lift, "no holdout events"))?,
        LowerLevel::ReturnPeriod => {
            let t = config.return_period.ok_or_else(|| stage_error(Stage::Lift, "return_period not set"))?;
            let theta = estimate_theta(series, series.quantile(config.theta_quantile)).at(Stage::Lift)?;
            return_level_with(theta.theta, t, config.convention).at(Stage::Lift)?
        }
    };
    Ok((v1, config.lift_v2.max(v1)))
}

/// Everything a run produced, also written to `output_dir`.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub models: Vec<MarginalModel>,
    pub standardized: GridStack,
    pub series: SummarySeries,
    pub events: EventSplit,
    pub lift_spec: LiftSpec,
    pub lifted: GridStack,
    pub resampled_uniform: GridStack,
    pub simulations: GridStack,
    pub holdout: Option<GridStack>,
    pub report: Option<ValidationReport>,
    pub config_hash: String,
}

pub fn config_hash(config: &PipelineConfig) -> String {
    hex::encode(Sha256::digest(config.canonical().as_bytes()))
}

fn ext(format: StackFormat) -> &'static str {
    match format {
        StackFormat::Binary => "grds",
        StackFormat::CsvLong => "csv",
    }
}

struct Outputs {
    dir: PathBuf,
    format: StackFormat,
    written: Vec<String>,
}

impl Outputs {
    fn stack(&mut self, name: &str, stack: &GridStack) -> Result<(), PipelineError> {
        let file = format!("{name}.{}", ext(self.format));
        save_grid_stack(stack, self.dir.join(&file), self.format).at(Stage::Write)?;
        self.written.push(file);
        Ok(())
    }

    fn table(&mut self, file: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), PipelineError> {
        let mut w = BufWriter::new(File::create(self.dir.join(file)).at(Stage::Write)?);
        f(&mut w).and_then(|_| w.flush()).at(Stage::Write)?;
        self.written.push(file.to_string());
        Ok(())
    }
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    config.validate().at(Stage::Config)?;
    fs::create_dir_all(&config.output_dir).at(Stage::Write)?;
    let marker = config.output_dir.join(INCOMPLETE_MARKER);
    fs::write(&marker, "run in progress or failed\n").at(Stage::Write)?;
    let input = load_grid_stack(&config.input, config.input_format).at(Stage::Load)?;
    let out = run_on_stack(config, &input, &config.output_dir)?;
    fs::remove_file(&marker).at(Stage::Write)?;
    Ok(out)
}

/// Run every stage on an in-memory stack, writing outputs to `dir`.
pub fn run_on_stack(config: &PipelineConfig, input: &GridStack, dir: &Path) -> Result<PipelineOutput, PipelineError> {
    let hash = config_hash(config);
    let mut outputs = Outputs { dir: dir.to_path_buf(), format: config.output_format, written: vec![] };

    if input.has_missing() {
        return Err(stage_error(Stage::Load, "input contains missing values"));
    }
    let models = fit_per_cell(input, config.p_u, config.shape_estimator).at(Stage::Fit)?;
    outputs.table("margins.csv", |w| write_params_csv(input.grid(), &models, w))?;

    let standardized = standardize(input, &models).at(Stage::Standardize)?;
    outputs.stack("standardized", &standardized)?;

    let series = summary_series(&config.risk, &standardized).at(Stage::Extract)?;
    outputs.table("summary.csv", |w| series.write_csv(w))?;
    let events = split_events(config, &series)?;
    outputs.table("events.csv", |w| {
        writeln!(w, "{EVENTS_CSV_HEADER}")?;
        let roles = events.holdout.iter().map(|&j| (j, "holdout")).chain(events.training.iter().map(|&j| (j, "training")));
        for (rank, (j, role)) in roles.enumerate() {
            writeln!(w, "{rank},{j},{},{role}", series.v[j])?;
        }
        Ok(())
    })?;

    let (v1, v2) = lift_interval(config, &series, &events.holdout)?;
    let lift_spec = LiftSpec { v1, v2, u_marg: config.u_marg(), seed: derive_seed(config.seed, LIFT_STAGE) };
    let m_lifted = config.m_lifted.unwrap_or(events.training.len());
    let training_events = events_from_stack(&standardized, &events.training, &config.risk).at(Stage::Lift)?;
    let lifted_events = lift_batch(&training_events, &lift_spec, m_lifted).at(Stage::Lift)?;
    let lifted = lifted_stack(&lifted_events).at(Stage::Lift)?;
    outputs.stack("lifted", &lifted)?;
    outputs.table("lift_manifest.csv", |w| write_manifest(&lifted_events, w))?;

    let mut database = lifted.clone();
    if config.include_background {
        let extreme: Vec<usize> = events.holdout.iter().chain(&events.training).copied().collect();
        let background: Vec<usize> = (0..standardized.m()).filter(|j| !extreme.contains(j)).collect();
        if !background.is_empty() {
            let bg = standardized.select(&background).at(Stage::Resample)?;
            let mut values = database.into_values();
            values.extend_from_slice(bg.values());
            let m = values.len() / input.grid().len();
            database = GridStack::new(*input.grid(), m, values).at(Stage::Resample)?;
        }
    }
    if database.values().iter().any(|&x| !(-1.0..0.0).contains(&x)) {
        return Err(stage_error(Stage::Resample, "resampling database has values outside [-1, 0)"));
    }
    let ds_params = DsParams { seed: derive_seed(config.seed, DS_STAGE), ..config.ds };
    let m_sim = config.m_simulations.unwrap_or(m_lifted);
    let resampled = ds_simulate(&database, input.grid(), &ds_params, &BTreeMap::new(), m_sim).at(Stage::Resample)?;
    outputs.stack("resampled_uniform", &resampled)?;

    let simulations = back_transform(&resampled, &models).at(Stage::BackTransform)?;
    outputs.stack("simulations", &simulations)?;

    let (holdout, report) = if events.holdout.is_empty() {
        (None, None)
    } else {
        let holdout = input.select(&events.holdout).at(Stage::Validate)?;
        let report = validate(&simulations, &holdout).at(Stage::Validate)?;
        outputs.stack("holdout", &holdout)?;
        outputs.table("validation_simulations.csv", |w| ValidationReport::write_summaries_csv(&report.simulations, w))?;
        outputs.table("validation_holdout.csv", |w| ValidationReport::write_summaries_csv(&report.holdout, w))?;
        outputs.table("coverage.csv", |w| report.write_coverage_csv(w))?;
        (Some(holdout), Some(report))
    };

    let written = std::mem::take(&mut outputs.written);
    outputs.table("manifest.txt", |w| {
        writeln!(w, "version = {VERSION}")?;
        writeln!(w, "seed = {}", config.seed)?;
        writeln!(w, "config_sha256 = {hash}")?;
        for (stage, v) in STAGE_VERSIONS {
            writeln!(w, "stage.{stage} = {v}")?;
        }
        writeln!(w, "lift_seed = {}", lift_spec.seed)?;
        writeln!(w, "lift_interval = [{v1:?}, {v2:?}]")?;
        writeln!(w, "ds_seed = {}", ds_params.seed)?;
        writeln!(w, "realizations = {m_sim}")?;
        for f in &written {
            writeln!(w, "output = {f}")?;
        }
        writeln!(w, "[config]")?;
        w.write_all(config.canonical().as_bytes())
    })?;

    Ok(PipelineOutput {
        models,
        standardized,
        series,
        events,
        lift_spec,
        lifted,
        resampled_uniform: resampled,
        simulations,
        holdout,
        report,
        config_hash: hash,
    })
}
