//! Command-line driver for the rate engine: optimize surface coefficients,
//! verify the closed forms against simulation, probe gradients, and sweep
//! operating parameters. All artifacts are deterministic for a fixed seed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fdstars_core::io::{self, GradCheckRow, SweepRow};
use fdstars_core::optim::{self, OptimOptions, StopReason};
use fdstars_core::{evaluate, grad, mc, Mode, Model, Pbm, SystemConfig};

#[derive(Parser)]
#[command(
    name = "fdstars",
    version,
    about = "Surface-assisted full-duplex rate engine"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set m_t=64` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Master seed, overriding the configuration's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the simulation pool (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory receiving all artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run projected gradient ascent and write the trace, best coefficients,
    /// and rate report.
    Optimize {
        /// FD_STARS, HD_STARS, or FD_CRIS.
        #[arg(long, default_value = "FD_STARS")]
        mode: String,
        /// Independent restarts; the best result is kept.
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        /// Write a coefficient checkpoint every N iterations (0 disables).
        #[arg(long, default_value_t = 0, value_name = "N")]
        checkpoint_every: usize,
    },
    /// Simulate the full system and compare every closed-form term against
    /// it; exits nonzero when a gated comparison fails.
    Validate {
        /// Channel realizations to draw.
        #[arg(long, default_value_t = 1000)]
        realizations: usize,
        /// Relative tolerance of the comparison bars.
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        /// Verify stored surface coefficients instead of a random draw.
        #[arg(long)]
        pbm: Option<PathBuf>,
    },
    /// Compare the analytic gradient against central finite differences;
    /// exits nonzero when any point disagrees beyond 1e-4 relative.
    Gradcheck {
        #[arg(long, default_value = "FD_STARS")]
        mode: String,
        /// Random surface configurations to probe.
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
    },
    /// Print the effective configuration (defaults, file, and --set merged)
    /// in canonical `key=value` form.
    Config,
    /// Optimize (or evaluate the random baseline) across a parameter range
    /// and tabulate the resulting rates.
    Sweep {
        /// One of: N, K, M_R, M_T, p_b, p_u, p_train, elem_size_frac
        /// (powers in dBm).
        #[arg(long)]
        variable: String,
        /// Comma-separated values of the swept variable.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Comma-separated mode labels (RANDOM_PBM is evaluated, not
        /// optimized).
        #[arg(long, value_delimiter = ',', default_value = "FD_STARS")]
        modes: Vec<String>,
        /// Restarts per optimized point.
        #[arg(long, default_value_t = 1)]
        restarts: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("simulation pool")?;
    }
    let cfg = load_config(&cli.common)?;
    std::fs::create_dir_all(&cli.common.out)
        .with_context(|| format!("creating {}", cli.common.out.display()))?;
    let out = cli.common.out.as_path();
    match cli.command {
        Command::Optimize {
            mode,
            restarts,
            checkpoint_every,
        } => cmd_optimize(cfg, out, &mode, restarts, checkpoint_every),
        Command::Validate {
            realizations,
            tol,
            pbm,
        } => cmd_validate(cfg, out, realizations, tol, pbm.as_deref()),
        Command::Gradcheck { mode, points, step } => cmd_gradcheck(cfg, out, &mode, points, step),
        Command::Config => {
            print!("{}", cfg.canonical());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            variable,
            values,
            modes,
            restarts,
        } => cmd_sweep(cfg, out, &variable, &values, &modes, restarts),
    }
}

fn load_config(common: &Common) -> Result<SystemConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            SystemConfig::from_file(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => SystemConfig::default(),
    };
    for pair in &common.set {
        let (key, value) = pair
            .split_once('=')
            .with_context(|| format!("--set {pair}: expected KEY=VALUE"))?;
        cfg.apply_set(key.trim(), value.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_mode(label: &str) -> Result<Mode> {
    Mode::from_str(label).with_context(|| format!("mode {label}"))
}

fn stop_label(stop: StopReason) -> &'static str {
    match stop {
        StopReason::RelativeImprovement => "window stall",
        StopReason::MaxIter => "iteration cap",
        StopReason::ZeroGradient => "zero gradient",
    }
}

fn cmd_optimize(
    cfg: SystemConfig,
    out: &Path,
    mode_label: &str,
    restarts: usize,
    checkpoint_every: usize,
) -> Result<ExitCode> {
    if restarts == 0 {
        bail!("--restarts must be at least 1");
    }
    let mode = parse_mode(mode_label)?;
    let model = Model::new(cfg)?;
    let label = mode.label();
    let mut best: Option<optim::OptTrace> = None;
    for r in 0..restarts {
        let init = optim::random_init(&model, mode, model.cfg.seed, r as u64)?;
        let mut opts = OptimOptions::from_config(&model.cfg);
        if checkpoint_every > 0 {
            opts.checkpoint_every = checkpoint_every;
            opts.checkpoint_dir = Some(out.join(format!("checkpoints_{label}_r{r}")));
        }
        let trace = optim::prog_ram(&model, &init, mode, &opts)?;
        println!(
            "restart {r}: objective {:.6} after {} iterations ({})",
            trace.best_objective,
            trace.iterations,
            stop_label(trace.stop)
        );
        if best
            .as_ref()
            .is_none_or(|b| trace.best_objective > b.best_objective)
        {
            best = Some(trace);
        }
    }
    let best = best.expect("at least one restart ran");
    let report = evaluate(&model, &best.best, mode)?;
    io::write_trace_csv(&out.join(format!("trace_{label}.csv")), &best)?;
    std::fs::write(out.join(format!("pbm_{label}.json")), best.best.to_json()?)?;
    io::write_json(&out.join(format!("report_{label}.json")), &report)?;
    io::write_se_csv(
        &out.join(format!("report_{label}.csv")),
        &model.cfg.hash_hex(),
        std::slice::from_ref(&report),
    )?;
    println!(
        "{label}: sum SE {:.6} (uplink {:.6}, downlink {:.6}) after {} iterations",
        report.sum_se, report.ul_se, report.dl_se, best.iterations
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(
    cfg: SystemConfig,
    out: &Path,
    realizations: usize,
    tol: f64,
    pbm_path: Option<&Path>,
) -> Result<ExitCode> {
    let model = Model::new(cfg)?;
    let pbm = match pbm_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Pbm::from_json(&text)?
        }
        None => optim::random_init(&model, Mode::FdStars, model.cfg.seed, 0)?,
    };
    let report = mc::validate_closed_form(&model, &pbm, realizations, model.cfg.seed, tol)?;
    for row in &report.rows {
        let verdict = match (row.gated, row.pass) {
            (true, true) => "ok",
            (true, false) => "FAIL",
            (false, _) => "diag",
        };
        println!(
            "{verdict:5} {:10} closed={:+.6e} mc={:+.6e} se={:.2e}",
            row.name, row.closed, row.mc, row.mc_se
        );
    }
    io::write_validation_csv(&out.join("validation.csv"), &report)?;
    io::write_json(&out.join("validation.json"), &report)?;
    if report.passed {
        println!("validation PASSED ({realizations} realizations, tol {tol})");
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "validation FAILED ({realizations} realizations, tol {tol}); \
             see validation.csv — the closed_exact column separates simulation \
             error from the closed forms' statistical approximations"
        );
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_gradcheck(
    cfg: SystemConfig,
    out: &Path,
    mode_label: &str,
    points: usize,
    step: f64,
) -> Result<ExitCode> {
    if points == 0 {
        bail!("--points must be at least 1");
    }
    if !(step.is_finite() && step > 0.0) {
        bail!("--step must be positive");
    }
    let mode = parse_mode(mode_label)?;
    let model = Model::new(cfg)?;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for p in 0..points {
        let pbm = optim::random_init(&model, mode, model.cfg.seed, p as u64)?;
        let (ga_r, ga_t) = grad::objective_gradient(&model, &pbm, mode)?;
        let (gn_r, gn_t) = grad::fd_gradient(&model, &pbm, mode, step)?;
        let norm = (gn_r.norm_squared() + gn_t.norm_squared()).sqrt();
        let diff = ((&ga_r - &gn_r).norm_squared() + (&ga_t - &gn_t).norm_squared()).sqrt();
        let rel = diff / norm.max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        for (half, a, n) in [("r", &ga_r, &gn_r), ("t", &ga_t, &gn_t)] {
            for i in 0..a.len() {
                rows.push(GradCheckRow {
                    component: format!("p{p}.{half}[{i}]"),
                    analytic: a[i],
                    numeric: n[i],
                    rel_err: (a[i] - n[i]).norm() / norm.max(f64::MIN_POSITIVE),
                });
            }
        }
        println!("point {p}: relative error {rel:.3e}");
    }
    io::write_gradcheck_csv(&out.join("gradcheck.csv"), &rows)?;
    if worst <= 1e-4 {
        println!("gradient check PASSED (worst {worst:.3e} over {points} points)");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradient check FAILED (worst {worst:.3e} over {points} points)");
        Ok(ExitCode::FAILURE)
    }
}

fn as_count(value: f64, what: &str) -> Result<usize> {
    if value.fract() != 0.0 || value < 1.0 {
        bail!("{what} must be a positive integer, got {value}");
    }
    Ok(value as usize)
}

fn apply_sweep_value(cfg: &mut SystemConfig, variable: &str, value: f64) -> Result<()> {
    match variable {
        "N" => {
            let n = as_count(value, "N")?;
            let side = (n as f64).sqrt().round() as usize;
            if side * side != n {
                bail!("N = {n} is not a perfect square; the sweep keeps the grid n_h = n_v");
            }
            cfg.n_h = side;
            cfg.n_v = side;
        }
        "K" => {
            let k = as_count(value, "K")?;
            if k % 2 != 0 {
                bail!("K = {k} must be even; the sweep keeps k_r = k_t");
            }
            cfg.k_r = k / 2;
            cfg.k_t = k / 2;
        }
        "M_R" => cfg.m_r = as_count(value, "M_R")?,
        "M_T" => cfg.m_t = as_count(value, "M_T")?,
        "p_b" => cfg.p_b_dbm = value,
        "p_u" => cfg.p_u_dbm = value,
        "p_train" => cfg.p_train_dbm = value,
        "elem_size_frac" => cfg.elem_size_frac = value,
        other => bail!(
            "unknown sweep variable {other}; expected one of \
             N, K, M_R, M_T, p_b, p_u, p_train, elem_size_frac"
        ),
    }
    Ok(())
}

fn cmd_sweep(
    cfg: SystemConfig,
    out: &Path,
    variable: &str,
    values: &[f64],
    mode_labels: &[String],
    restarts: usize,
) -> Result<ExitCode> {
    if values.is_empty() {
        bail!("--values is empty");
    }
    if mode_labels.is_empty() {
        bail!("--modes is empty");
    }
    if restarts == 0 {
        bail!("--restarts must be at least 1");
    }
    let modes = mode_labels
        .iter()
        .map(|l| parse_mode(l))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &value in values {
        let mut point_cfg = cfg.clone();
        apply_sweep_value(&mut point_cfg, variable, value)?;
        point_cfg.validate()?;
        let model = Model::new(point_cfg)?;
        for &mode in &modes {
            let report = if mode == Mode::RandomPbm {
                let pbm = optim::random_init(&model, mode, model.cfg.seed, 0)?;
                evaluate(&model, &pbm, mode)?
            } else {
                let opts = OptimOptions::from_config(&model.cfg);
                let (traces, best_idx) =
                    optim::optimize_restarts(&model, mode, &opts, model.cfg.seed, restarts)?;
                evaluate(&model, &traces[best_idx].best, mode)?
            };
            println!(
                "{variable}={value} {}: sum SE {:.6} (ul {:.6}, dl {:.6})",
                mode.label(),
                report.sum_se,
                report.ul_se,
                report.dl_se
            );
            rows.push(SweepRow {
                variable: variable.to_string(),
                value,
                mode: mode.label().to_string(),
                ul_se: report.ul_se,
                dl_se: report.dl_se,
                sum_se: report.sum_se,
            });
        }
    }
    io::write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    Ok(ExitCode::SUCCESS)
}
