//! Configuration resolution: command-line flags take precedence over a
//! flat `key=value` config file, which takes precedence over defaults.

use std::collections::BTreeMap;
use std::path::Path;

use gntk::kernel::{Backend, CombineForm, GntkConfig, Readout, Scaling};
use gntk::sketch::{BoundConstants, DEFAULT_BOUND_CONSTANTS};

/// A parsed flat config file: `key = value` lines, `#` comments.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| format!("config key '{key}': cannot parse '{raw}'")),
        }
    }
}

pub fn parse_backend(s: &str) -> Result<Backend, String> {
    match s {
        "naive-kron" => Ok(Backend::NaiveKron),
        "decoupled" => Ok(Backend::Decoupled),
        "sketched" => Ok(Backend::Sketched),
        other => Err(format!(
            "unknown backend '{other}' (expected naive-kron, decoupled or sketched)"
        )),
    }
}

pub fn parse_scaling(s: &str) -> Result<Scaling, String> {
    match s {
        "unit" => Ok(Scaling::Unit),
        "inverse-degree" => Ok(Scaling::InverseDegreePlusOne),
        "normalized" => Ok(Scaling::Normalized),
        other => Err(format!(
            "unknown scaling '{other}' (expected unit, inverse-degree or normalized)"
        )),
    }
}

pub fn parse_readout(s: &str) -> Result<Readout, String> {
    match s {
        "sum" => Ok(Readout::Sum),
        "jk" | "jumping-knowledge" => Ok(Readout::JumpingKnowledge),
        other => Err(format!("unknown readout '{other}' (expected sum or jk)")),
    }
}

pub fn parse_combine(s: &str) -> Result<CombineForm, String> {
    match s {
        "arc-cosine" => Ok(CombineForm::ArcCosine),
        "product-form" => Ok(CombineForm::ProductForm),
        other => Err(format!(
            "unknown combine form '{other}' (expected arc-cosine or product-form)"
        )),
    }
}

/// Kernel flags as they arrive from clap; `None` falls back to config
/// then defaults.
#[derive(Debug, Default, Clone)]
pub struct KernelFlags {
    pub levels: Option<usize>,
    pub fc_layers: Option<usize>,
    pub c_phi: Option<f64>,
    pub scaling: Option<String>,
    pub readout: Option<String>,
    pub backend: Option<String>,
    pub sketch_ratio: Option<f64>,
    pub seed: Option<u64>,
    pub clamp_eps: Option<f64>,
    pub combine: Option<String>,
}

/// Resolves flags > config file > defaults into a [`GntkConfig`].
pub fn resolve_kernel_config(
    flags: &KernelFlags,
    file: &ConfigFile,
) -> Result<GntkConfig, String> {
    let defaults = GntkConfig::default();
    let levels = flags
        .levels
        .or(file.get_parsed::<usize>("l")?)
        .unwrap_or(defaults.levels);
    let fc_layers = flags
        .fc_layers
        .or(file.get_parsed::<usize>("r")?)
        .unwrap_or(defaults.fc_layers);
    let c_phi = flags
        .c_phi
        .or(file.get_parsed::<f64>("c_phi")?)
        .unwrap_or(defaults.c_phi);
    let scaling = match flags.scaling.as_deref().or(file.get("scaling")) {
        Some(s) => parse_scaling(s)?,
        None => defaults.scaling,
    };
    let readout = match flags.readout.as_deref().or(file.get("readout")) {
        Some(s) => parse_readout(s)?,
        None => defaults.readout,
    };
    let backend = match flags.backend.as_deref().or(file.get("backend")) {
        Some(s) => parse_backend(s)?,
        None => defaults.backend,
    };
    let combine = match flags.combine.as_deref().or(file.get("combine")) {
        Some(s) => parse_combine(s)?,
        None => defaults.combine,
    };
    let sketch_ratio = flags
        .sketch_ratio
        .or(file.get_parsed::<f64>("sketch_ratio")?)
        .unwrap_or(defaults.sketch_ratio);
    let seed = flags
        .seed
        .or(file.get_parsed::<u64>("seed")?)
        .unwrap_or(defaults.seed);
    let clamp_eps = flags
        .clamp_eps
        .or(file.get_parsed::<f64>("clamp_eps")?)
        .unwrap_or(defaults.clamp_eps);
    Ok(GntkConfig {
        levels,
        fc_layers,
        c_phi,
        scaling,
        readout,
        backend,
        sketch_ratio,
        seed,
        clamp_eps,
        combine,
        kron_entry_cap: defaults.kron_entry_cap,
    })
}

/// Error-bound constants from flags > config > calibrated defaults.
pub fn resolve_bound_constants(
    flags: Option<(f64, f64, f64)>,
    file: &ConfigFile,
) -> Result<BoundConstants, String> {
    if let Some((left, right, cross)) = flags {
        return Ok(BoundConstants { left, right, cross });
    }
    Ok(BoundConstants {
        left: file
            .get_parsed::<f64>("bound_left")?
            .unwrap_or(DEFAULT_BOUND_CONSTANTS.left),
        right: file
            .get_parsed::<f64>("bound_right")?
            .unwrap_or(DEFAULT_BOUND_CONSTANTS.right),
        cross: file
            .get_parsed::<f64>("bound_cross")?
            .unwrap_or(DEFAULT_BOUND_CONSTANTS.cross),
    })
}

/// Worker-thread count: flag, then the `GNTK_THREADS` environment
/// variable, then available parallelism.
pub fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("GNTK_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}
