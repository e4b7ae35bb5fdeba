//! Seeded end-to-end trials and parameter sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::s;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::{amp_iterate, detect_active, AmpIterStats, AmpParams, CsEstimate};
use crate::bp::BpIterStats;
use crate::channel::{assemble_frame, bpsk_modulate, make_interleaver, transmit, ChannelRealization, TxFrame};
use crate::codebook::{detect_collisions, encode_cs, Codebook};
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::ldpc::{build_ldpc, LdpcCode};
use crate::seed::{derive_seed, rng_from_seed, tag};
use crate::sic::{compute_metrics, run_sic, stitch, RecoveredMessage, SicParams, SicState};

/// Normal-approximation factor of a 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Decoder applied after the CS stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// One joint BP round, no cancellation.
    Ldpc,
    /// Joint BP with successive cancellation.
    LdpcSic,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ldpc" => Ok(Variant::Ldpc),
            "ldpc-sic" | "ldpc_sic" => Ok(Variant::LdpcSic),
            other => Err(Error::config("variant", format!("unknown decoder variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Ldpc => "ldpc",
            Variant::LdpcSic => "ldpc-sic",
        })
    }
}

/// A config together with its shared codebook and LDPC code.
///
/// The codebook is keyed by `derive_seed(master, "codebook", 0)` and the code by
/// `derive_seed(master, "ldpc", 0)`, so configs that differ only in Eb/N0 or
/// antenna count can share both.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: SimConfig,
    pub codebook: Arc<Codebook>,
    pub code: Arc<LdpcCode>,
}

impl Scenario {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        let codebook = Codebook::generate(derive_seed(cfg.master_seed, tag::CODEBOOK, 0), cfg.l_p, cfg.b_p)?;
        let code = build_ldpc(cfg.l_c, cfg.b_c, derive_seed(cfg.master_seed, tag::LDPC, 0))?;
        Ok(Scenario {
            cfg,
            codebook: Arc::new(codebook),
            code: Arc::new(code),
        })
    }

    /// Same codebook and code under a different Eb/N0 or antenna count.
    pub fn with_config(&self, cfg: SimConfig) -> Result<Self> {
        let c = &self.cfg;
        let same = (c.master_seed, c.l_p, c.b_p, c.l_c, c.b_c) == (cfg.master_seed, cfg.l_p, cfg.b_p, cfg.l_c, cfg.b_c);
        if !same {
            return Scenario::new(cfg);
        }
        Ok(Scenario {
            cfg,
            codebook: Arc::clone(&self.codebook),
            code: Arc::clone(&self.code),
        })
    }
}

/// Per-stage diagnostics of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDiagnostics {
    pub amp_history: Vec<AmpIterStats>,
    pub detected: usize,
    /// Detected indices that some user actually sent.
    pub detected_true: usize,
    pub bp_trace: Vec<BpIterStats>,
    /// Users decoded in each BP round.
    pub decoded_per_round: Vec<usize>,
}

/// Outcome of one seeded trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub variant: Variant,
    /// Transmitted `B`-bit messages, one per user.
    pub truth: Vec<Vec<u8>>,
    pub recovered: Vec<RecoveredMessage>,
    pub p_md: f64,
    pub p_fa: f64,
    pub amp_iterations: usize,
    pub amp_diverged: bool,
    pub bp_iterations: usize,
    pub sic_rounds: usize,
    /// Users sharing their CS index with another user.
    pub collision_count: usize,
    /// Seconds.
    pub wall_time: f64,
    pub diagnostics: TrialDiagnostics,
}

impl TrialResult {
    /// Copy with the wall-clock time zeroed, for exact comparisons.
    pub fn timeless(&self) -> TrialResult {
        TrialResult {
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

/// Everything a trial transmitted, kept for decoder-side experiments.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub messages: Vec<Vec<u8>>,
    pub frames: Vec<TxFrame>,
    pub channel: ChannelRealization,
    pub y: ndarray::Array2<num_complex::Complex64>,
}

/// Draws messages, channel and noise for `trial_seed` and forms `Y`.
pub fn simulate_transmission(scn: &Scenario, trial_seed: u64) -> Result<Transmission> {
    let cfg = &scn.cfg;
    let es = cfg.derive_energy().symbol_energy;
    let mut rng = rng_from_seed(derive_seed(trial_seed, tag::MESSAGES, 0));
    let messages: Vec<Vec<u8>> = (0..cfg.ka)
        .map(|_| (0..cfg.b_total).map(|_| rng.random_range(0..2u8)).collect())
        .collect();
    let frames = messages
        .iter()
        .enumerate()
        .map(|(k, bits)| {
            let idx = encode_cs(&bits[..cfg.b_p], cfg.b_p)?;
            let cw = scn.code.encode(&bits[cfg.b_p..])?;
            let pi = make_interleaver(idx, cfg.l_c, cfg.master_seed);
            assemble_frame(k, scn.codebook.codeword(idx), &bpsk_modulate(&cw)?, &pi, es)
        })
        .collect::<Result<Vec<_>>>()?;
    let channel = ChannelRealization::generate(
        cfg.ka,
        cfg.m,
        cfg.l_total(),
        cfg.noise_var,
        derive_seed(trial_seed, tag::CHANNEL, 0),
        derive_seed(trial_seed, tag::NOISE, 0),
    );
    let y = transmit(&frames, &channel)?;
    Ok(Transmission {
        messages,
        frames,
        channel,
        y,
    })
}

/// Runs a trial and returns its result for both decoder variants. The plain
/// variant is the first round of the cancellation loop.
pub fn run_trial_both(scn: &Scenario, trial_seed: u64) -> Result<(TrialResult, TrialResult)> {
    let start = Instant::now();
    let cfg = &scn.cfg;
    let es = cfg.derive_energy().symbol_energy;
    let tx = simulate_transmission(scn, trial_seed)?;
    let indices: Vec<_> = tx.frames.iter().map(|f| f.cs_index).collect();
    let collision_count = detect_collisions(&indices).iter().map(|g| g.len()).sum();

    let yp = tx.y.slice(s![..cfg.l_p, ..]);
    let yc = tx.y.slice(s![cfg.l_p.., ..]);
    let (cs_est, amp_history, amp_diverged) = match amp_iterate(&scn.codebook, es, yp, &AmpParams::from(cfg)) {
        Ok((state, hist)) => (detect_active(&state, cfg.activity_threshold), hist, false),
        Err(Error::AmpDiverged { .. }) => (CsEstimate::empty(cfg.m), Vec::new(), true),
        Err(e) => return Err(e),
    };
    let amp_iterations = amp_history.len();
    let detected_true = cs_est.detected.iter().filter(|i| indices.contains(i)).count();
    let sic = run_sic(yc, &cs_est, &scn.code, &SicParams::from(cfg))?;

    let build = |variant: Variant, sic: &SicState| -> Result<TrialResult> {
        let rounds = match variant {
            Variant::Ldpc => sic.round.min(1),
            Variant::LdpcSic => sic.round,
        };
        let recovered = stitch(sic.decoded_by_round(rounds), &scn.code, cfg.b_p)?;
        let (p_md, p_fa) = compute_metrics(&tx.messages, &recovered);
        let round_iters = &sic.round_iterations[..rounds];
        let trace_len: usize = round_iters.iter().sum();
        Ok(TrialResult {
            seed: trial_seed,
            variant,
            truth: tx.messages.clone(),
            recovered,
            p_md,
            p_fa,
            amp_iterations,
            amp_diverged,
            bp_iterations: trace_len,
            sic_rounds: rounds,
            collision_count,
            wall_time: start.elapsed().as_secs_f64(),
            diagnostics: TrialDiagnostics {
                amp_history: amp_history.clone(),
                detected: cs_est.k_detected(),
                detected_true,
                bp_trace: sic.bp_trace[..trace_len].to_vec(),
                decoded_per_round: (1..=rounds)
                    .map(|r| sic.decoded.iter().filter(|d| d.round == r).count())
                    .collect(),
            },
        })
    };
    Ok((build(Variant::Ldpc, &sic)?, build(Variant::LdpcSic, &sic)?))
}

/// One seeded trial of `variant`.
pub fn run_trial(scn: &Scenario, variant: Variant, trial_seed: u64) -> Result<TrialResult> {
    let (plain, sic) = if variant == Variant::Ldpc {
        let single = Scenario {
            cfg: SimConfig {
                sic_max_rounds: 1,
                ..scn.cfg.clone()
            },
            codebook: Arc::clone(&scn.codebook),
            code: Arc::clone(&scn.code),
        };
        run_trial_both(&single, trial_seed)?
    } else {
        run_trial_both(scn, trial_seed)?
    };
    Ok(match variant {
        Variant::Ldpc => plain,
        Variant::LdpcSic => sic,
    })
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    EbN0Db,
    Antennas,
}

/// A grid of scenarios sharing one base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub base: SimConfig,
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub trials_per_point: usize,
    pub decoder_variant: Variant,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::config("grid", "sweep grid is empty"));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("grid", "sweep grid must be strictly increasing"));
        }
        if self.trials_per_point == 0 {
            return Err(Error::config("trials_per_point", "must be at least 1"));
        }
        if self.axis == SweepAxis::Antennas
            && self.grid.iter().any(|&v| v < 1.0 || v.fract() != 0.0 || !v.is_finite())
        {
            return Err(Error::config("grid", "antenna counts must be positive integers"));
        }
        if self.grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("grid", "grid values must be finite"));
        }
        Ok(())
    }

    /// Base config with the axis set to `value`.
    pub fn point_config(&self, value: f64) -> SimConfig {
        let mut cfg = self.base.clone();
        match self.axis {
            SweepAxis::EbN0Db => cfg.eb_n0_db = value,
            SweepAxis::Antennas => cfg.m = value as usize,
        }
        cfg
    }

    /// Seed of trial `index` at grid value `value`.
    pub fn trial_seed(&self, value: f64, index: usize) -> u64 {
        let point = derive_seed(self.base.master_seed, tag::SWEEP_POINT, value.to_bits());
        derive_seed(point, tag::TRIAL, index as u64)
    }
}

/// Aggregated metrics of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub trials: usize,
    pub p_md: f64,
    pub p_fa: f64,
    pub pe: f64,
    /// 95% half-width of `pe`, from the two component half-widths in quadrature.
    pub ci_halfwidth: f64,
    #[serde(skip)]
    pub ci_md: f64,
    #[serde(skip)]
    pub ci_fa: f64,
}

fn binomial_halfwidth(p: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        Z95 * (p * (1.0 - p) / n as f64).sqrt()
    }
}

/// Aggregates trials of one grid point, in order.
pub fn aggregate(axis_value: f64, trials: &[TrialResult]) -> SweepRow {
    let n = trials.len();
    let p_md = trials.iter().map(|t| t.p_md).sum::<f64>() / n as f64;
    let p_fa = trials.iter().map(|t| t.p_fa).sum::<f64>() / n as f64;
    let users: usize = trials.iter().map(|t| t.truth.len()).sum();
    let claims: usize = trials.iter().map(|t| t.recovered.len()).sum();
    let ci_md = binomial_halfwidth(p_md, users);
    let ci_fa = binomial_halfwidth(p_fa, claims);
    SweepRow {
        axis_value,
        trials: n,
        p_md,
        p_fa,
        pe: p_md + p_fa,
        ci_halfwidth: (ci_md * ci_md + ci_fa * ci_fa).sqrt(),
        ci_md,
        ci_fa,
    }
}

/// Sweep output for one or both variants.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))
}

/// Runs every trial of the plan on both variants. The returned vectors hold
/// the trials of each grid point in seed order.
pub fn run_sweep_trials(plan: &SweepPlan, workers: usize) -> Result<Vec<Vec<(TrialResult, TrialResult)>>> {
    plan.validate()?;
    let base = Scenario::new(plan.base.clone())?;
    let pool = pool(workers)?;
    plan.grid
        .iter()
        .map(|&v| {
            let scn = base.with_config(plan.point_config(v))?;
            pool.install(|| {
                (0..plan.trials_per_point)
                    .into_par_iter()
                    .map(|i| run_trial_both(&scn, plan.trial_seed(v, i)))
                    .collect::<Result<Vec<_>>>()
            })
        })
        .collect()
}

/// Aggregated tables for the plain and the cancellation decoder.
pub fn run_sweep_both(plan: &SweepPlan, workers: usize) -> Result<(SweepTable, SweepTable)> {
    let points = run_sweep_trials(plan, workers)?;
    let mut plain = Vec::new();
    let mut sic = Vec::new();
    for (&v, trials) in plan.grid.iter().zip(&points) {
        let (a, b): (Vec<_>, Vec<_>) = trials.iter().cloned().unzip();
        plain.push(aggregate(v, &a));
        sic.push(aggregate(v, &b));
    }
    Ok((SweepTable { rows: plain }, SweepTable { rows: sic }))
}

/// Aggregated table for the plan's decoder variant.
pub fn run_sweep(plan: &SweepPlan, workers: usize) -> Result<SweepTable> {
    plan.validate()?;
    let base = Scenario::new(plan.base.clone())?;
    let pool = pool(workers)?;
    let rows = plan
        .grid
        .iter()
        .map(|&v| {
            let scn = base.with_config(plan.point_config(v))?;
            let trials = pool.install(|| {
                (0..plan.trials_per_point)
                    .into_par_iter()
                    .map(|i| run_trial(&scn, plan.decoder_variant, plan.trial_seed(v, i)))
                    .collect::<Result<Vec<_>>>()
            })?;
            Ok(aggregate(v, &trials))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { rows })
}

/// JSON sidecar stored next to a results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub plan: SweepPlan,
    pub code_version: String,
}

/// Renders the results CSV.
pub fn table_csv(table: &SweepTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if table.rows.is_empty() {
        w.write_record(["axis_value", "trials", "p_md", "p_fa", "pe", "ci_halfwidth"])
            .map_err(|e| Error::format("results CSV", e.to_string()))?;
    }
    for row in &table.rows {
        w.serialize(row).map_err(|e| Error::format("results CSV", e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("results CSV", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Parses a results CSV back into rows (the component half-widths are not stored).
pub fn parse_table_csv(text: &str) -> Result<SweepTable> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .map_err(|e| Error::format("results CSV", e.to_string()))?;
    Ok(SweepTable { rows })
}

/// Writes `<stem>.csv` and `<stem>.json` under `dir`; returns both paths.
pub fn emit_results(table: &SweepTable, plan: &SweepPlan, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&csv_path, table_csv(table)?).map_err(|e| Error::io(&csv_path, e))?;
    let sidecar = Sidecar {
        plan: plan.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::format("sidecar", e.to_string()))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}

/// Reads a sidecar written by [`emit_results`].
pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("sidecar", e.to_string()))
}
