//! Run configuration: a flat TOML file naming families, grids, and seeds.
//! Unknown keys are rejected so typos cannot silently disable a sweep.

use std::path::{Path, PathBuf};

use mclt_core::family::{FamilyError, FamilySpec};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("families list is empty")]
    NoFamilies,
    #[error("family #{0}: unknown id {1:?}")]
    UnknownFamily(usize, String),
    #[error("family #{0} ({1}): parameter {2:?} is not accepted by this family")]
    UnexpectedParam(usize, String, &'static str),
    #[error("family #{0} ({1}): parameter {2:?} is required")]
    MissingParam(usize, String, &'static str),
    #[error("family #{index} ({id}): {source}")]
    Family {
        index: usize,
        id: String,
        #[source]
        source: FamilyError,
    },
    #[error("families must be distinct; {0} appears more than once")]
    DuplicateFamily(String),
    #[error("n_grid must be non-empty, strictly increasing, and positive")]
    BadNGrid,
    #[error("m must be at least 1000 so batch standard errors are defined, got {0}")]
    TooFewReplications(u64),
    #[error("p must be a finite real at least 1, got {0}")]
    BadP(f64),
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("a_grid must be non-empty with finite nonnegative entries")]
    BadAGrid,
    #[error("workers must be at least 1")]
    BadWorkers,
    #[error("no output directory: pass --out or set out_dir in the config")]
    NoOutDir,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    families: Vec<RawFamily>,
    n_grid: Vec<usize>,
    m: u64,
    p: f64,
    epsilon: f64,
    a_grid: Vec<f64>,
    master_seed: u64,
    out_dir: Option<PathBuf>,
    workers: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFamily {
    id: String,
    delta: Option<f64>,
    a: Option<f64>,
    b: Option<f64>,
}

/// A family with everything fixed except the sequence length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyTemplate {
    Rademacher,
    SignModulated { delta: f64 },
    Uniform,
    TwoPoint { a: f64, b: f64 },
}

impl FamilyTemplate {
    pub fn spec(&self, n: usize) -> Result<FamilySpec, FamilyError> {
        match *self {
            FamilyTemplate::Rademacher => FamilySpec::rademacher(n),
            FamilyTemplate::SignModulated { delta } => FamilySpec::sign_modulated(n, delta),
            FamilyTemplate::Uniform => FamilySpec::uniform(n),
            FamilyTemplate::TwoPoint { a, b } => FamilySpec::two_point(n, a, b),
        }
    }
}

/// Validated experiment configuration.
#[derive(Debug, Clone)]
pub struct Config {
    pub families: Vec<FamilyTemplate>,
    pub n_grid: Vec<usize>,
    pub m: u64,
    pub p: f64,
    pub epsilon: f64,
    pub a_grid: Vec<f64>,
    pub master_seed: u64,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Config {
    /// Applies CLI overrides, which win over file values.
    pub fn apply_overrides(
        &mut self,
        out: Option<PathBuf>,
        seed: Option<u64>,
        workers: Option<usize>,
    ) {
        if let Some(out) = out {
            self.out_dir = Some(out);
        }
        if let Some(seed) = seed {
            self.master_seed = seed;
        }
        if let Some(workers) = workers {
            self.workers = Some(workers);
        }
    }
}

pub fn load(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: RawConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source: Box::new(source),
    })?;
    validate(raw)
}

fn family_template(index: usize, raw: &RawFamily) -> Result<FamilyTemplate, ConfigError> {
    let id = raw.id.as_str();
    let reject = |param: Option<f64>, name: &'static str| {
        if param.is_some() {
            Err(ConfigError::UnexpectedParam(index, id.to_string(), name))
        } else {
            Ok(())
        }
    };
    let require = |param: Option<f64>, name: &'static str| {
        param.ok_or_else(|| ConfigError::MissingParam(index, id.to_string(), name))
    };
    match id {
        "rademacher" => {
            reject(raw.delta, "delta")?;
            reject(raw.a, "a")?;
            reject(raw.b, "b")?;
            Ok(FamilyTemplate::Rademacher)
        }
        "sign_modulated" => {
            reject(raw.a, "a")?;
            reject(raw.b, "b")?;
            Ok(FamilyTemplate::SignModulated {
                delta: require(raw.delta, "delta")?,
            })
        }
        "uniform" => {
            reject(raw.delta, "delta")?;
            reject(raw.a, "a")?;
            reject(raw.b, "b")?;
            Ok(FamilyTemplate::Uniform)
        }
        "two_point" => {
            reject(raw.delta, "delta")?;
            Ok(FamilyTemplate::TwoPoint {
                a: require(raw.a, "a")?,
                b: require(raw.b, "b")?,
            })
        }
        other => Err(ConfigError::UnknownFamily(index, other.to_string())),
    }
}

fn validate(raw: RawConfig) -> Result<Config, ConfigError> {
    if raw.families.is_empty() {
        return Err(ConfigError::NoFamilies);
    }
    if raw.n_grid.is_empty()
        || raw.n_grid[0] == 0
        || raw.n_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(ConfigError::BadNGrid);
    }
    if raw.m < 1000 {
        return Err(ConfigError::TooFewReplications(raw.m));
    }
    if !(raw.p >= 1.0 && raw.p.is_finite()) {
        return Err(ConfigError::BadP(raw.p));
    }
    if !(raw.epsilon > 0.0 && raw.epsilon.is_finite()) {
        return Err(ConfigError::BadEpsilon(raw.epsilon));
    }
    if raw.a_grid.is_empty() || raw.a_grid.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
        return Err(ConfigError::BadAGrid);
    }
    if raw.workers == Some(0) {
        return Err(ConfigError::BadWorkers);
    }

    let mut families = Vec::with_capacity(raw.families.len());
    let mut labels: Vec<String> = Vec::new();
    let probe_n = raw.n_grid[0];
    for (index, raw_family) in raw.families.iter().enumerate() {
        let template = family_template(index, raw_family)?;
        // Building one probe spec surfaces range errors (delta, atoms) now
        // rather than mid-run.
        let spec = template.spec(probe_n).map_err(|source| ConfigError::Family {
            index,
            id: raw_family.id.clone(),
            source,
        })?;
        let label = spec.label();
        if labels.contains(&label) {
            return Err(ConfigError::DuplicateFamily(label));
        }
        labels.push(label);
        families.push(template);
    }

    Ok(Config {
        families,
        n_grid: raw.n_grid,
        m: raw.m,
        p: raw.p,
        epsilon: raw.epsilon,
        a_grid: raw.a_grid,
        master_seed: raw.master_seed,
        out_dir: raw.out_dir,
        workers: raw.workers,
    })
}
