//! Flat `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use isolab_core::parameters::GrassmannSearchConfig;
use isolab_core::sampler::{ChainConfig, DEFAULT_MASTER_SEED};
use isolab_core::verify::Budget;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::usage;

/// Keys accepted in config files, each overriding the matching budget field.
pub const KEYS: &[&str] = &[
    "seed",
    "samples",
    "burnin",
    "thinning",
    "quick",
    "subspaces",
    "directions",
    "grid_directions",
    "volume_resolution",
    "volume_mc",
    "haar",
    "tilt_samples",
    "laplace_samples",
    "restarts",
    "local_steps",
    "search_haar",
    "chain_subspaces",
];

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(usage(format!(
                "config line {}: expected key = value, got {raw:?}",
                i + 1
            )));
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(usage(format!("config line {}: unknown key {k:?}", i + 1)));
        }
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("reading config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Everything that determines a run's numbers. Thread count and output paths are excluded.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub budget: Budget,
    pub chain: ChainConfig,
    pub command: serde_json::Value,
}

impl RunConfig {
    /// Hex SHA-256 of the canonical JSON rendering.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Command-line values that may also come from the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub burnin: Option<usize>,
    pub thinning: Option<usize>,
    pub quick: bool,
}

fn get<T: std::str::FromStr>(file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    file.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| usage(format!("config key {key}: {e}")))
        })
        .transpose()
}

pub fn resolve(
    file: &BTreeMap<String, String>,
    flags: &Overrides,
    command: serde_json::Value,
) -> Result<RunConfig> {
    let quick = flags.quick || get::<bool>(file, "quick")?.unwrap_or(false);
    let mut b = if quick {
        Budget::quick()
    } else {
        Budget::default()
    };
    let seed = flags
        .seed
        .or(get(file, "seed")?)
        .unwrap_or(DEFAULT_MASTER_SEED);
    if let Some(v) = flags.samples.or(get(file, "samples")?) {
        b.samples = v;
        b.tilt_samples = v;
    }
    let set = |slot: &mut usize, key: &str| -> Result<()> {
        if let Some(v) = get(file, key)? {
            *slot = v;
        }
        Ok(())
    };
    set(&mut b.subspaces, "subspaces")?;
    set(&mut b.directions, "directions")?;
    set(&mut b.grid_directions, "grid_directions")?;
    set(&mut b.volume_resolution, "volume_resolution")?;
    set(&mut b.volume_mc, "volume_mc")?;
    set(&mut b.haar, "haar")?;
    set(&mut b.tilt_samples, "tilt_samples")?;
    set(&mut b.laplace_samples, "laplace_samples")?;
    set(&mut b.chain_subspaces, "chain_subspaces")?;
    set(&mut b.search.restarts, "restarts")?;
    set(&mut b.search.local_steps, "local_steps")?;
    set(&mut b.search.haar_samples, "search_haar")?;
    let chain = ChainConfig {
        burnin: flags.burnin.or(get(file, "burnin")?),
        thinning: flags.thinning.or(get(file, "thinning")?),
    };
    b.chain = chain;
    Ok(RunConfig {
        seed,
        budget: b,
        chain,
        command,
    })
}

pub fn search_config(
    b: &Budget,
    restarts: Option<usize>,
    haar: Option<usize>,
) -> GrassmannSearchConfig {
    GrassmannSearchConfig {
        restarts: restarts.unwrap_or(b.search.restarts),
        haar_samples: haar.unwrap_or(b.search.haar_samples),
        ..b.search
    }
}
