//! Flat `key = value` pipeline configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::directsampling::DsParams;
use crate::field::StackFormat;
use crate::marginal::ShapeEstimator;
use crate::risk::{ReturnLevelConvention, RiskFunctional};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key '{key}' given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("missing required key '{0}'")]
    Missing(&'static str),
    #[error("invalid value for '{key}': {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

/// Every recognized key with a one-line description, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("input", "path of the replicated input stack (required)"),
    ("input_format", "binary | csv-long (default binary)"),
    ("output_dir", "directory for all outputs (required)"),
    ("output_format", "binary | csv-long for field outputs (default binary)"),
    ("seed", "master seed (default 0)"),
    ("p_u", "tail probability above the per-cell threshold (default 0.05)"),
    ("shape_estimator", "moment | hill | ml | ml-nonpositive (default moment)"),
    ("risk", "max | min | mean | median | site:<i> | order:<k> (default median)"),
    ("top_k", "number of declustered training events"),
    ("extraction_threshold", "keep events with summary above this negative level"),
    ("min_separation", "replicates within this index distance of a kept event are dropped (default 2)"),
    ("holdout", "most extreme extracted events kept for validation (default 0)"),
    ("lift_v1", "lower lift level: <number> | holdout | return-period (required)"),
    ("lift_v2", "upper lift level (default 0)"),
    ("return_period", "period in replicate steps, used when lift_v1 = return-period"),
    ("theta_quantile", "series quantile used as threshold for the extremal coefficient (default 0.95)"),
    ("return_level_convention", "extremal-coefficient | theta-over-period (default extremal-coefficient)"),
    ("u_marg", "post-processing threshold in (-1, 0) (default -p_u)"),
    ("m_lifted", "number of lifted events (default: number of training events)"),
    ("m_simulations", "number of resampled realizations (default m_lifted)"),
    ("ds_n_neighbors", "pattern size (default 20)"),
    ("ds_dist_threshold", "acceptance distance in [0, 1] (required)"),
    ("ds_scan_fraction", "scanned share of the training database in (0, 1] (required)"),
    ("ds_coord_weight", "weight of anchor coordinates in the distance (default 0.1)"),
    ("include_background", "add non-extreme standardized replicates to the resampling database (default false)"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum Extraction {
    TopK(usize),
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LowerLevel {
    Value(f64),
    /// Smallest summary among the holdout events.
    Holdout,
    /// Return level of `return_period` under the estimated extremal coefficient.
    ReturnPeriod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub input_format: StackFormat,
    pub output_dir: PathBuf,
    pub output_format: StackFormat,
    pub seed: u64,
    pub p_u: f64,
    pub shape_estimator: ShapeEstimator,
    pub risk: RiskFunctional,
    pub extraction: Extraction,
    pub min_separation: usize,
    pub holdout: usize,
    pub lift_v1: LowerLevel,
    pub lift_v2: f64,
    pub return_period: Option<f64>,
    pub theta_quantile: f64,
    pub convention: ReturnLevelConvention,
    pub u_marg: Option<f64>,
    pub m_lifted: Option<usize>,
    pub m_simulations: Option<usize>,
    pub ds: DsParams,
    pub include_background: bool,
}

impl PipelineConfig {
    /// Parse a config file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.input = dir.join(&cfg.input);
            cfg.output_dir = dir.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(ConfigError::UnknownKey { line: i + 1, key: key.into() });
            }
            if map.insert(key, value).is_some() {
                return Err(ConfigError::DuplicateKey { line: i + 1, key: key.into() });
            }
        }
        Self::from_map(&map)
    }

    fn from_map(map: &BTreeMap<&str, &str>) -> Result<Self, ConfigError> {
        let p_u = opt(map, "p_u")?.unwrap_or(0.05);
        let extraction = match (opt::<usize>(map, "top_k")?, opt::<f64>(map, "extraction_threshold")?) {
            (Some(k), None) => Extraction::TopK(k),
            (None, Some(t)) => Extraction::Threshold(t),
            (None, None) => return Err(ConfigError::Missing("top_k")),
            (Some(_), Some(_)) => return Err(invalid("top_k", "give either top_k or extraction_threshold, not both")),
        };
        let lift_v1 = match map.get("lift_v1").copied() {
            None => return Err(ConfigError::Missing("lift_v1")),
            Some("holdout") => LowerLevel::Holdout,
            Some("return-period") => LowerLevel::ReturnPeriod,
            Some(v) => LowerLevel::Value(v.parse().map_err(|_| invalid("lift_v1", format!("'{v}' is not a number")))?),
        };
        let defaults = DsParams::default();
        let cfg = PipelineConfig {
            input: PathBuf::from(required::<String>(map, "input")?),
            input_format: opt(map, "input_format")?.unwrap_or(StackFormat::Binary),
            output_dir: PathBuf::from(required::<String>(map, "output_dir")?),
            output_format: opt(map, "output_format")?.unwrap_or(StackFormat::Binary),
            seed: opt(map, "seed")?.unwrap_or(0),
            p_u,
            shape_estimator: opt(map, "shape_estimator")?.unwrap_or(ShapeEstimator::Moment),
            risk: opt(map, "risk")?.unwrap_or(RiskFunctional::Median),
            extraction,
            min_separation: opt(map, "min_separation")?.unwrap_or(2),
            holdout: opt(map, "holdout")?.unwrap_or(0),
            lift_v1,
            lift_v2: opt(map, "lift_v2")?.unwrap_or(0.0),
            return_period: opt(map, "return_period")?,
            theta_quantile: opt(map, "theta_quantile")?.unwrap_or(crate::risk::THETA_QUANTILE),
            convention: opt(map, "return_level_convention")?.unwrap_or_default(),
            u_marg: opt(map, "u_marg")?,
            m_lifted: opt(map, "m_lifted")?,
            m_simulations: opt(map, "m_simulations")?,
            ds: DsParams {
                n_neighbors: opt(map, "ds_n_neighbors")?.unwrap_or(defaults.n_neighbors),
                dist_threshold: required(map, "ds_dist_threshold")?,
                scan_fraction: required(map, "ds_scan_fraction")?,
                coord_weight: opt(map, "ds_coord_weight")?.unwrap_or(defaults.coord_weight),
                seed: 0,
            },
            include_background: opt(map, "include_background")?.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.p_u > 0.0 && self.p_u < 1.0) {
            return Err(invalid("p_u", "must lie in (0, 1)"));
        }
        match self.extraction {
            Extraction::TopK(0) => return Err(invalid("top_k", "must be positive")),
            Extraction::Threshold(t) if !(t < 0.0 && t > -1.0) => {
                return Err(invalid("extraction_threshold", "must lie in (-1, 0)"))
            }
            _ => {}
        }
        if self.lift_v1 == LowerLevel::ReturnPeriod && self.return_period.is_none() {
            return Err(ConfigError::Missing("return_period"));
        }
        if self.lift_v1 == LowerLevel::Holdout && self.holdout == 0 {
            return Err(invalid("lift_v1", "'holdout' needs holdout > 0"));
        }
        if let Some(t) = self.return_period {
            if !(t >= 1.0) {
                return Err(invalid("return_period", "must be at least 1"));
            }
        }
        if !(self.theta_quantile > 0.0 && self.theta_quantile < 1.0) {
            return Err(invalid("theta_quantile", "must lie in (0, 1)"));
        }
        if let Some(u) = self.u_marg {
            if !(u > -1.0 && u < 0.0) {
                return Err(invalid("u_marg", "must lie in (-1, 0)"));
            }
        }
        if !(self.lift_v2 <= 0.0) {
            return Err(invalid("lift_v2", "must be non-positive"));
        }
        if let LowerLevel::Value(v1) = self.lift_v1 {
            if !(v1 < 0.0 && v1 <= self.lift_v2) {
                return Err(invalid("lift_v1", "must be negative and not above lift_v2"));
            }
            if v1 == self.lift_v2 {
                if let (Some(m), Extraction::TopK(k)) = (self.m_lifted, &self.extraction) {
                    if m != *k {
                        return Err(invalid("m_lifted", "a fixed lift level lifts every training event once; m_lifted must equal top_k"));
                    }
                }
            }
        }
        for (key, v) in [("m_lifted", self.m_lifted), ("m_simulations", self.m_simulations)] {
            if v == Some(0) {
                return Err(invalid(key, "must be positive"));
            }
        }
        if self.ds.n_neighbors == 0 {
            return Err(invalid("ds_n_neighbors", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ds.dist_threshold) {
            return Err(invalid("ds_dist_threshold", "must lie in [0, 1]"));
        }
        if !(self.ds.scan_fraction > 0.0 && self.ds.scan_fraction <= 1.0) {
            return Err(invalid("ds_scan_fraction", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.ds.coord_weight) {
            return Err(invalid("ds_coord_weight", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Post-processing threshold, `-p_u` unless set.
    pub fn u_marg(&self) -> f64 {
        self.u_marg.unwrap_or(-self.p_u)
    }

    /// Resolved configuration, one sorted `key = value` line per key.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        let fmt_format = |f: StackFormat| match f {
            StackFormat::Binary => "binary",
            StackFormat::CsvLong => "csv-long",
        };
        let mut entries: Vec<(&str, String)> = vec![
            ("input", self.input.display().to_string()),
            ("input_format", fmt_format(self.input_format).into()),
            ("output_dir", self.output_dir.display().to_string()),
            ("output_format", fmt_format(self.output_format).into()),
            ("seed", self.seed.to_string()),
            ("p_u", format!("{:?}", self.p_u)),
            ("shape_estimator", self.shape_estimator.as_str().into()),
            ("risk", self.risk.to_string()),
            ("min_separation", self.min_separation.to_string()),
            ("holdout", self.holdout.to_string()),
            (
                "lift_v1",
                match self.lift_v1 {
                    LowerLevel::Value(v) => format!("{v:?}"),
                    LowerLevel::Holdout => "holdout".into(),
                    LowerLevel::ReturnPeriod => "return-period".into(),
                },
            ),
            ("lift_v2", format!("{:?}", self.lift_v2)),
            ("theta_quantile", format!("{:?}", self.theta_quantile)),
            ("return_level_convention", self.convention.to_string()),
            ("u_marg", format!("{:?}", self.u_marg())),
            ("ds_n_neighbors", self.ds.n_neighbors.to_string()),
            ("ds_dist_threshold", format!("{:?}", self.ds.dist_threshold)),
            ("ds_scan_fraction", format!("{:?}", self.ds.scan_fraction)),
            ("ds_coord_weight", format!("{:?}", self.ds.coord_weight)),
            ("include_background", self.include_background.to_string()),
        ];
        match self.extraction {
            Extraction::TopK(k) => entries.push(("top_k", k.to_string())),
            Extraction::Threshold(t) => entries.push(("extraction_threshold", format!("{t:?}"))),
        }
        if let Some(t) = self.return_period {
            entries.push(("return_period", format!("{t:?}")));
        }
        if let Some(m) = self.m_lifted {
            entries.push(("m_lifted", m.to_string()));
        }
        if let Some(m) = self.m_simulations {
            entries.push(("m_simulations", m.to_string()));
        }
        entries.sort();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), message: message.into() }
}

fn opt<T: FromStr>(map: &BTreeMap<&str, &str>, key: &'static str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    map.get(key).map(|v| v.parse::<T>().map_err(|e| invalid(key, format!("'{v}': {e}")))).transpose()
}

fn required<T: FromStr>(map: &BTreeMap<&str, &str>, key: &'static str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    opt(map, key)?.ok_or(ConfigError::Missing(key))
}
