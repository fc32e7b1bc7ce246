//! Flat TOML configuration and its merge with flags and the environment.
//!
//! Precedence, highest first: command-line flag, `USTAR_SEED` (seed only),
//! config file, built-in default.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use ustar_core::discretize::{make_grid, BoundingBox, GridSpec, TimeBins};
use ustar_core::train::{GeoCache, NegativeDist, TrainConfig, Variant};

use crate::CliError;

pub const SEED_ENV: &str = "USTAR_SEED";

/// One configuration layer. Every key is optional so layers can be merged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub k: Option<usize>,
    pub eta: Option<f32>,
    pub epochs: Option<usize>,
    pub neg_k: Option<usize>,
    pub neg_dist: Option<NegativeDist>,
    pub tau: Option<f64>,
    pub c_u: Option<f64>,
    pub seed: Option<u64>,
    pub geo_cache: Option<GeoCache>,
    pub cache_z: Option<bool>,
    pub variant: Option<Variant>,
    #[serde(alias = "M")]
    pub m: Option<usize>,
    pub g: Option<f64>,
    pub windows: Option<usize>,
    pub step: Option<String>,
    pub bbox: Option<[f64; 4]>,
    pub cell_m: Option<f64>,
    pub tz_offset_min: Option<i32>,
    pub time_bins: Option<u16>,
    pub min_freq: Option<u64>,
}

impl Layer {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Keys set here win over keys set in `lower`.
    pub fn over(self, lower: Layer) -> Layer {
        Layer {
            k: self.k.or(lower.k),
            eta: self.eta.or(lower.eta),
            epochs: self.epochs.or(lower.epochs),
            neg_k: self.neg_k.or(lower.neg_k),
            neg_dist: self.neg_dist.or(lower.neg_dist),
            tau: self.tau.or(lower.tau),
            c_u: self.c_u.or(lower.c_u),
            seed: self.seed.or(lower.seed),
            geo_cache: self.geo_cache.or(lower.geo_cache),
            cache_z: self.cache_z.or(lower.cache_z),
            variant: self.variant.or(lower.variant),
            m: self.m.or(lower.m),
            g: self.g.or(lower.g),
            windows: self.windows.or(lower.windows),
            step: self.step.or(lower.step),
            bbox: self.bbox.or(lower.bbox),
            cell_m: self.cell_m.or(lower.cell_m),
            tz_offset_min: self.tz_offset_min.or(lower.tz_offset_min),
            time_bins: self.time_bins.or(lower.time_bins),
            min_freq: self.min_freq.or(lower.min_freq),
        }
    }
}

pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))
        }),
        Err(_) => Ok(None),
    }
}

/// Fully resolved settings shared by every subcommand.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Settings {
    pub train: TrainConfig,
    pub seed: u64,
    pub m: usize,
    pub g: f64,
    pub windows: usize,
    pub step_secs: i64,
    pub bbox: Option<[f64; 4]>,
    pub cell_m: f64,
    pub tz_offset_min: i32,
    pub time_bins: u16,
    pub min_freq: u64,
}

pub fn parse_duration_secs(s: &str) -> Result<i64, CliError> {
    let d: Duration = humantime::parse_duration(s)
        .map_err(|e| CliError::Usage(format!("bad duration {s:?}: {e}")))?;
    if d.as_secs() == 0 || d.subsec_nanos() != 0 {
        return Err(CliError::Usage(format!(
            "duration {s:?} must be a positive whole number of seconds"
        )));
    }
    Ok(d.as_secs() as i64)
}

impl Settings {
    pub fn resolve(flags: Layer, env_seed: Option<u64>, file: Layer) -> Result<Self, CliError> {
        let seed = flags.seed.or(env_seed).or(file.seed);
        let l = flags.over(file);
        let d = TrainConfig::default();
        let seed = seed.unwrap_or(d.seed);
        let train = TrainConfig {
            dim: l.k.unwrap_or(d.dim),
            eta: l.eta.unwrap_or(d.eta),
            epochs: l.epochs.unwrap_or(d.epochs),
            negatives: l.neg_k.unwrap_or(d.negatives),
            tau: l.tau.unwrap_or(d.tau),
            c_u: l.c_u.unwrap_or(d.c_u),
            seed,
            variant: l.variant.unwrap_or(d.variant),
            neg_dist: l.neg_dist.unwrap_or(d.neg_dist),
            geo_cache: l.geo_cache.unwrap_or(d.geo_cache),
            cache_z: l.cache_z.unwrap_or(d.cache_z),
        };
        train
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let s = Settings {
            train,
            seed,
            m: l.m.unwrap_or(10),
            g: l.g.unwrap_or(0.5),
            windows: l.windows.unwrap_or(20),
            step_secs: parse_duration_secs(l.step.as_deref().unwrap_or("1h"))?,
            bbox: l.bbox,
            cell_m: l.cell_m.unwrap_or(300.0),
            tz_offset_min: l.tz_offset_min.unwrap_or(0),
            time_bins: l.time_bins.unwrap_or(24),
            min_freq: l.min_freq.unwrap_or(100),
        };
        TimeBins::new(s.time_bins).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(s)
    }

    pub fn time_bins(&self) -> TimeBins {
        TimeBins::new(self.time_bins).expect("validated in resolve")
    }

    /// The grid from `bbox`, or from the data's extent when allowed.
    pub fn grid(
        &self,
        points: impl IntoIterator<Item = (f64, f64)>,
        from_data: bool,
    ) -> Result<GridSpec, CliError> {
        let bbox = match (self.bbox, from_data) {
            (Some([a, b, c, d]), _) => BoundingBox::new(a, b, c, d),
            (None, true) => BoundingBox::from_points(points, 0.01).ok_or_else(|| {
                CliError::Data("no geotagged records to derive a bounding box from".into())
            })?,
            (None, false) => {
                return Err(CliError::Usage(
                    "no bounding box: set `bbox` in the config file or pass --bbox-from-data"
                        .into(),
                ))
            }
        };
        make_grid(bbox, self.cell_m).map_err(|e| CliError::Usage(e.to_string()))
    }
}
