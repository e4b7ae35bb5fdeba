//! Scenario parameters and derived energy quantities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported SPARC section size, in bits.
pub const MAX_BP: usize = 24;

/// How the per-symbol energy is obtained from the energy per bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnergyRule {
    /// `Es = R * Eb`: each user spends `B * Eb` over its `L` channel uses.
    #[default]
    RateTimesEb,
    /// `Es = Eb / R`.
    EbOverRate,
}

/// Update order of the joint BP decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BpSchedule {
    /// Every user's observation messages from the previous iteration's `P`.
    #[default]
    Flooding,
    /// Users in turn, each seeing the `P` already refreshed by earlier users
    /// of the same iteration.
    Serial,
}

/// Validated scenario parameters. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub ka: usize,
    pub m: usize,
    pub b_total: usize,
    pub b_p: usize,
    pub b_c: usize,
    pub l_p: usize,
    pub l_c: usize,
    pub eb_n0_db: f64,
    pub noise_var: f64,
    pub sparsity_prior: f64,
    pub activity_threshold: f64,
    pub amp_max_iter: usize,
    pub amp_tol: f64,
    pub bp_max_iter: usize,
    #[serde(default)]
    pub bp_schedule: BpSchedule,
    pub sic_max_rounds: usize,
    pub master_seed: u64,
    pub energy_rule: EnergyRule,
}

/// Unvalidated parameter map, as read from a config file or assembled from
/// CLI flags. Missing optional fields take their defaults in [`build_config`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub ka: Option<usize>,
    pub m: Option<usize>,
    pub b_total: Option<usize>,
    pub b_p: Option<usize>,
    pub b_c: Option<usize>,
    pub l_total: Option<usize>,
    pub l_p: Option<usize>,
    pub l_c: Option<usize>,
    pub eb_n0_db: Option<f64>,
    pub noise_var: Option<f64>,
    pub sparsity_prior: Option<f64>,
    pub activity_threshold: Option<f64>,
    pub amp_max_iter: Option<usize>,
    pub amp_tol: Option<f64>,
    pub bp_max_iter: Option<usize>,
    pub bp_schedule: Option<BpSchedule>,
    pub sic_max_rounds: Option<usize>,
    pub master_seed: Option<u64>,
    pub energy_rule: Option<EnergyRule>,
}

impl RawConfig {
    /// Parses a TOML table of `key = value` pairs.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(mut self, other: &RawConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            ka, m, b_total, b_p, b_c, l_total, l_p, l_c, eb_n0_db, noise_var, sparsity_prior,
            activity_threshold, amp_max_iter, amp_tol, bp_max_iter, bp_schedule, sic_max_rounds,
            master_seed, energy_rule
        );
        self
    }
}

impl From<&SimConfig> for RawConfig {
    fn from(c: &SimConfig) -> Self {
        RawConfig {
            ka: Some(c.ka),
            m: Some(c.m),
            b_total: Some(c.b_total),
            b_p: Some(c.b_p),
            b_c: Some(c.b_c),
            l_total: Some(c.l_total()),
            l_p: Some(c.l_p),
            l_c: Some(c.l_c),
            eb_n0_db: Some(c.eb_n0_db),
            noise_var: Some(c.noise_var),
            sparsity_prior: Some(c.sparsity_prior),
            activity_threshold: Some(c.activity_threshold),
            amp_max_iter: Some(c.amp_max_iter),
            amp_tol: Some(c.amp_tol),
            bp_max_iter: Some(c.bp_max_iter),
            bp_schedule: Some(c.bp_schedule),
            sic_max_rounds: Some(c.sic_max_rounds),
            master_seed: Some(c.master_seed),
            energy_rule: Some(c.energy_rule),
        }
    }
}

fn required<T: Copy>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(field, "missing required field"))
}

fn positive(v: usize, field: &str) -> Result<usize> {
    if v == 0 {
        Err(Error::config(field, "must be strictly positive"))
    } else {
        Ok(v)
    }
}

fn open_unit(v: f64, field: &str) -> Result<f64> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(Error::config(field, format!("{v} is outside (0, 1)")))
    }
}

/// Validates a raw parameter map and fills in defaults.
pub fn build_config(raw: &RawConfig) -> Result<SimConfig> {
    let ka = positive(required(raw.ka, "ka")?, "ka")?;
    let m = positive(required(raw.m, "m")?, "m")?;
    let b_p = positive(required(raw.b_p, "b_p")?, "b_p")?;
    let b_c = positive(required(raw.b_c, "b_c")?, "b_c")?;
    let l_p = positive(required(raw.l_p, "l_p")?, "l_p")?;
    let l_c = positive(required(raw.l_c, "l_c")?, "l_c")?;

    let b_total = raw.b_total.unwrap_or(b_p + b_c);
    if b_p + b_c != b_total {
        return Err(Error::config(
            "b_total",
            format!("bit split mismatch: b_p + b_c = {} but b_total = {b_total}", b_p + b_c),
        ));
    }
    if let Some(l_total) = raw.l_total {
        if l_p + l_c != l_total {
            return Err(Error::config(
                "l_total",
                format!(
                    "channel-use split mismatch: l_p + l_c = {} but l_total = {l_total}",
                    l_p + l_c
                ),
            ));
        }
    }
    if b_p > MAX_BP {
        return Err(Error::config("b_p", format!("{b_p} exceeds the cap of {MAX_BP}")));
    }
    if b_c >= l_c {
        return Err(Error::config(
            "b_c",
            format!("LDPC part needs b_c < l_c, got ({l_c}, {b_c})"),
        ));
    }

    let eb_n0_db = required(raw.eb_n0_db, "eb_n0_db")?;
    if !eb_n0_db.is_finite() {
        return Err(Error::config("eb_n0_db", "must be finite"));
    }
    let noise_var = raw.noise_var.unwrap_or(1.0);
    if !(noise_var.is_finite() && noise_var > 0.0) {
        return Err(Error::config("noise_var", "must be finite and > 0"));
    }
    let sparsity_prior = open_unit(raw.sparsity_prior.unwrap_or(0.1), "sparsity_prior")?;
    let activity_threshold =
        open_unit(raw.activity_threshold.unwrap_or(0.5), "activity_threshold")?;
    let amp_tol = raw.amp_tol.unwrap_or(1e-6);
    if !(amp_tol.is_finite() && amp_tol > 0.0) {
        return Err(Error::config("amp_tol", "must be finite and > 0"));
    }

    Ok(SimConfig {
        ka,
        m,
        b_total,
        b_p,
        b_c,
        l_p,
        l_c,
        eb_n0_db,
        noise_var,
        sparsity_prior,
        activity_threshold,
        amp_max_iter: positive(raw.amp_max_iter.unwrap_or(50), "amp_max_iter")?,
        amp_tol,
        bp_max_iter: positive(raw.bp_max_iter.unwrap_or(50), "bp_max_iter")?,
        bp_schedule: raw.bp_schedule.unwrap_or_default(),
        sic_max_rounds: positive(raw.sic_max_rounds.unwrap_or(8), "sic_max_rounds")?,
        master_seed: raw.master_seed.unwrap_or(0),
        energy_rule: raw.energy_rule.unwrap_or_default(),
    })
}

/// Rate, energy and efficiency figures that follow from a config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedEnergy {
    /// `B / L`.
    pub code_rate: f64,
    /// Energy per bit, `10^(Eb/N0 / 10) * N0`.
    pub bit_energy: f64,
    /// Energy per channel use.
    pub symbol_energy: f64,
    /// `B * Ka / (L * M)`, bits per channel use per receive antenna.
    pub spectral_efficiency: f64,
}

impl SimConfig {
    pub fn l_total(&self) -> usize {
        self.l_p + self.l_c
    }

    /// Number of SPARC codewords, `2^b_p`.
    pub fn codebook_size(&self) -> usize {
        1usize << self.b_p
    }

    pub fn derive_energy(&self) -> DerivedEnergy {
        derive_energy(self)
    }
}

pub fn derive_energy(cfg: &SimConfig) -> DerivedEnergy {
    let l = cfg.l_total() as f64;
    let b = cfg.b_total as f64;
    let code_rate = b / l;
    let bit_energy = 10f64.powf(cfg.eb_n0_db / 10.0) * cfg.noise_var;
    let symbol_energy = match cfg.energy_rule {
        EnergyRule::RateTimesEb => code_rate * bit_energy,
        EnergyRule::EbOverRate => bit_energy / code_rate,
    };
    DerivedEnergy {
        code_rate,
        bit_energy,
        symbol_energy,
        spectral_efficiency: b * cfg.ka as f64 / (l * cfg.m as f64),
    }
}
