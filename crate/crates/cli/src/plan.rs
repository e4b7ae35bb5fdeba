//! Config and sweep-plan files.
//!
//! A config file holds `RawConfig` keys at the top level or under `[base]`.
//! A plan file adds a `[sweep]` table:
//!
//! ```toml
//! [base]
//! ka = 20
//! m = 8
//! b_p = 12
//! b_c = 80
//! l_p = 200
//! l_c = 200
//! eb_n0_db = 18.0
//!
//! [sweep]
//! axis = "antennas"        # or "eb_n0_db"
//! grid = [4, 8, 16, 32]
//! trials_per_point = 500
//! decoder_variant = "ldpc-sic"
//! ```

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use sparc_ura::config::{build_config, RawConfig, SimConfig};
use sparc_ura::sim::{SweepAxis, SweepPlan, Variant};
use toml::{Table, Value};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    axis: SweepAxis,
    grid: Vec<Value>,
    #[serde(default = "default_trials")]
    trials_per_point: usize,
    #[serde(default = "default_variant")]
    decoder_variant: Variant,
}

fn default_trials() -> usize {
    100
}

fn default_variant() -> Variant {
    Variant::LdpcSic
}

fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse::<Table>()
        .with_context(|| format!("parsing {}", path.display()))
}

/// Parses `key=value`, reading the value as TOML and falling back to a string.
fn parse_override(item: &str) -> Result<RawConfig> {
    let (key, value) = item
        .split_once('=')
        .ok_or_else(|| anyhow!("override {item:?} is not key=value"))?;
    let (key, value) = (key.trim(), value.trim());
    let line = format!("{key} = {value}");
    let table = match line.parse::<Table>() {
        Ok(t) => t,
        Err(_) => format!("{key} = {:?}", value).parse::<Table>()?,
    };
    Value::Table(table)
        .try_into()
        .with_context(|| format!("override {item:?}"))
}

fn raw_config(base: Table, seed: Option<u64>, overrides: &[String]) -> Result<SimConfig> {
    let mut raw: RawConfig = Value::Table(base).try_into().context("config keys")?;
    for item in overrides {
        raw = raw.overlay(&parse_override(item)?);
    }
    if seed.is_some() {
        raw.master_seed = seed;
    }
    Ok(build_config(&raw)?)
}

fn split_base(mut table: Table) -> Result<(Table, Option<Value>)> {
    let sweep = table.remove("sweep");
    match table.remove("base") {
        Some(Value::Table(base)) => {
            if let Some(extra) = table.keys().next() {
                bail!("unexpected top-level key {extra:?} next to [base]");
            }
            Ok((base, sweep))
        }
        Some(_) => bail!("[base] must be a table"),
        None => Ok((table, sweep)),
    }
}

/// Config from a file, then `--set` overrides, then `--seed`.
pub fn load_config(path: &Path, seed: Option<u64>, overrides: &[String]) -> Result<SimConfig> {
    let (base, _) = split_base(read_table(path)?)?;
    raw_config(base, seed, overrides).with_context(|| format!("config {}", path.display()))
}

pub fn load_plan(path: &Path, seed: Option<u64>, overrides: &[String]) -> Result<SweepPlan> {
    let (base, sweep) = split_base(read_table(path)?)?;
    let base = raw_config(base, seed, overrides).with_context(|| format!("config {}", path.display()))?;
    let sweep: SweepSection = sweep
        .ok_or_else(|| anyhow!("{} has no [sweep] table", path.display()))?
        .try_into()
        .context("[sweep] table")?;
    let grid = sweep
        .grid
        .iter()
        .map(|v| match v {
            Value::Integer(i) => Ok(*i as f64),
            Value::Float(f) => Ok(*f),
            other => Err(anyhow!("grid value {other} is not a number")),
        })
        .collect::<Result<Vec<_>>>()?;
    let plan = SweepPlan {
        base,
        axis: sweep.axis,
        grid,
        trials_per_point: sweep.trials_per_point,
        decoder_variant: sweep.decoder_variant,
    };
    plan.validate()?;
    Ok(plan)
}
