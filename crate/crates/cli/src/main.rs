mod plan;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sparc_ura::codebook::Codebook;
use sparc_ura::ldpc::build_ldpc;
use sparc_ura::seed::{derive_seed, tag};
use sparc_ura::sim::{
    aggregate, emit_results, run_sweep, run_sweep_trials, run_trial, Scenario, SweepTable, TrialResult, Variant,
};

use plan::{load_config, load_plan};

#[derive(Parser)]
#[command(name = "ura-sim", version, about = "SPARC-LDPC MIMO unsourced random access simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded trials of one config and print the results as JSON.
    Run(RunArgs),
    /// Run a sweep plan and write `<out>/sweep_<variant>.csv` with a JSON sidecar.
    Sweep(SweepArgs),
    /// Write the config's parity-check matrix in alist format.
    LdpcExport(ExportArgs),
    /// Write the config's SPARC codebook as a binary matrix file.
    CodebookExport(ExportArgs),
}

#[derive(Args)]
struct Common {
    /// TOML file with config keys, either top level or under `[base]`.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Config override `key=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "ldpc-sic")]
    variant: Variant,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Also write `trials.json` here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-iteration AMP and BP traces as CSV into `--out` (default `.`).
    #[arg(long)]
    debug_csv: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Decoder variant, overriding the plan.
    #[arg(long)]
    variant: Option<Variant>,
    /// Trials per grid point, overriding the plan.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Also write the per-trial AMP and BP traces of every grid point.
    #[arg(long)]
    debug_csv: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory; the alist goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct AmpRow {
    trial: usize,
    iteration: usize,
    tau_sq: f64,
    mse_delta: f64,
    detected: usize,
}

#[derive(Serialize)]
struct BpRow {
    trial: usize,
    round: usize,
    iteration: usize,
    passing: usize,
    mean_abs_llr: f64,
}

fn write_debug_csv(dir: &Path, stem: &str, trials: &[TrialResult]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let amp_path = dir.join(format!("{stem}_amp.csv"));
    let mut amp = csv::Writer::from_path(&amp_path).with_context(|| format!("writing {}", amp_path.display()))?;
    let bp_path = dir.join(format!("{stem}_bp.csv"));
    let mut bp = csv::Writer::from_path(&bp_path).with_context(|| format!("writing {}", bp_path.display()))?;
    for (trial, t) in trials.iter().enumerate() {
        for s in &t.diagnostics.amp_history {
            amp.serialize(AmpRow {
                trial,
                iteration: s.iteration,
                tau_sq: s.tau_sq,
                mse_delta: s.mse_delta,
                detected: s.detected,
            })?;
        }
        let mut round = 0;
        for s in &t.diagnostics.bp_trace {
            if s.iteration == 1 {
                round += 1;
            }
            bp.serialize(BpRow {
                trial,
                round,
                iteration: s.iteration,
                passing: s.passing,
                mean_abs_llr: s.mean_abs_llr,
            })?;
        }
    }
    amp.flush()?;
    bp.flush()?;
    eprintln!("wrote {} and {}", amp_path.display(), bp_path.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let cfg = load_config(&args.common.config, args.common.seed, &args.common.set)?;
    let scn = Scenario::new(cfg)?;
    let results = (0..args.trials)
        .map(|i| run_trial(&scn, args.variant, derive_seed(scn.cfg.master_seed, tag::TRIAL, i as u64)))
        .collect::<sparc_ura::Result<Vec<_>>>()?;
    let json = if results.len() == 1 {
        serde_json::to_string(&results[0])?
    } else {
        serde_json::to_string(&results)?
    };
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("trials.json");
        fs::write(&path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    if args.debug_csv {
        let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
        write_debug_csv(&dir, "run", &results)?;
    }
    print_stdout(&json)
}

/// Writes to stdout; a closed pipe is not an error.
fn print_stdout(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut plan = load_plan(&args.common.config, args.common.seed, &args.common.set)?;
    if let Some(v) = args.variant {
        plan.decoder_variant = v;
    }
    if let Some(n) = args.trials {
        plan.trials_per_point = n;
    }
    plan.validate()?;
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let stem = format!("sweep_{}", plan.decoder_variant);
    let table = if args.debug_csv {
        let mut rows = Vec::new();
        for (&v, point) in plan.grid.iter().zip(run_sweep_trials(&plan, workers)?) {
            let trials: Vec<TrialResult> = point
                .into_iter()
                .map(|(plain, sic)| match plan.decoder_variant {
                    Variant::Ldpc => plain,
                    Variant::LdpcSic => sic,
                })
                .collect();
            write_debug_csv(&args.out, &format!("{stem}_{v}"), &trials)?;
            rows.push(aggregate(v, &trials));
        }
        SweepTable { rows }
    } else {
        run_sweep(&plan, workers)?
    };
    let (csv_path, json_path) = emit_results(&table, &plan, &args.out, &stem)?;
    eprintln!("wrote {} and {}", csv_path.display(), json_path.display());
    for row in &table.rows {
        eprintln!(
            "{:>8} trials {:>6} p_md {:.5} p_fa {:.5} pe {:.5} +- {:.5}",
            row.axis_value, row.trials, row.p_md, row.p_fa, row.pe, row.ci_halfwidth
        );
    }
    Ok(())
}

fn ldpc_export(args: ExportArgs) -> Result<()> {
    let cfg = load_config(&args.common.config, args.common.seed, &args.common.set)?;
    let code = build_ldpc(cfg.l_c, cfg.b_c, derive_seed(cfg.master_seed, tag::LDPC, 0))?;
    let text = code.to_alist();
    match args.out {
        Some(dir) => {
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("ldpc_{}_{}.alist", cfg.l_c, cfg.b_c));
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => print_stdout(text.trim_end())?,
    }
    Ok(())
}

fn codebook_export(args: ExportArgs) -> Result<()> {
    let cfg = load_config(&args.common.config, args.common.seed, &args.common.set)?;
    let cb = Codebook::generate(derive_seed(cfg.master_seed, tag::CODEBOOK, 0), cfg.l_p, cfg.b_p)?;
    let dir = args.out.unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("codebook_{}_{}.bin", cfg.l_p, cfg.b_p));
    cb.write_to(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::LdpcExport(a) => ldpc_export(a),
        Command::CodebookExport(a) => codebook_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
