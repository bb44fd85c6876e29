//! Scenario-driven command line front end.
//!
//! Subcommands: `solve`, `regime-map`, `stability`, `list-scenarios`. Configs
//! are JSON files or builtin names; all outputs are CSV/JSON written
//! atomically into the output directory. Identical configs produce
//! bit-identical outputs.

use anyhow::Context;
use clap::{Parser, Subcommand};
use dcg_core::equilibrium::{
    solve_mne, solve_nne, solve_piecewise, verify_nne, EquilibriumResult, SolveOptions,
};
use dcg_core::scenario::{
    builtin_config, builtin_description, builtin_names, ScenarioConfig, ScenarioKind,
};
use dcg_core::stability::{stability_report, StabilityThresholds};
use dcg_core::vi_assembly::{assemble_mne, assemble_nne, cournot_regime, AssembledVI};
use dcg_core::{Error as CoreError, Mode};
use sha2::Digest;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "dcg", version, about = "Equilibrium solvers for density-constrained market games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario (single horizon, or piecewise when configured).
    Solve(RunArgs),
    /// Sweep the market parameters and classify the admissible regimes.
    RegimeMap(RunArgs),
    /// Run the perturbation (stability) experiment of a scenario.
    Stability(RunArgs),
    /// List the builtin scenarios.
    ListScenarios,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Builtin scenario name or path to a JSON config.
    config: String,
    /// Override the solve mode (nne|mne).
    #[arg(long)]
    mode: Option<String>,
    /// Output directory (default: $DCG_OUTPUT_DIR or ./out).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the iteration step size.
    #[arg(long)]
    eps0: Option<f64>,
    /// Override the stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Override the sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the demand trajectories under the solved equilibrium.
    #[arg(long)]
    dump_trajectory: bool,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("error: kind={kind} msg={:?}", format!("{e:#}"));
            code
        }
    };
    std::process::exit(code);
}

/// Distinct exit codes per failure class.
fn classify(e: &anyhow::Error) -> (&'static str, i32) {
    if let Some(core) = e.downcast_ref::<CoreError>() {
        match core {
            CoreError::Config(_) | CoreError::Domain(_) => ("config-error", 2),
            CoreError::Definiteness { .. } => ("definiteness-error", 3),
            CoreError::MaxIters { .. } => ("max-iters-error", 4),
            CoreError::Divergence { .. } => ("divergence-error", 5),
            CoreError::Segment { source, .. } => match source.as_ref() {
                CoreError::Definiteness { .. } => ("definiteness-error", 3),
                CoreError::MaxIters { .. } => ("max-iters-error", 4),
                CoreError::Divergence { .. } => ("divergence-error", 5),
                _ => ("internal-error", 1),
            },
            _ => ("internal-error", 1),
        }
    } else {
        ("config-error", 2)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::ListScenarios => {
            for name in builtin_names() {
                println!("{name:<16} {}", builtin_description(name).unwrap_or(""));
            }
            Ok(())
        }
        Command::Solve(args) => {
            let (cfg, out) = load(&args)?;
            cmd_solve(&cfg, &out, args.dump_trajectory)
        }
        Command::RegimeMap(args) => {
            let (cfg, out) = load(&args)?;
            cmd_regime_map(&cfg, &out)
        }
        Command::Stability(args) => {
            let (cfg, out) = load(&args)?;
            cmd_stability(&cfg, &out)
        }
    }
}

/// Resolves the config (builtin name or file path) and applies overrides.
fn load(args: &RunArgs) -> anyhow::Result<(ScenarioConfig, PathBuf)> {
    let mut cfg = if let Some(builtin) = builtin_config(&args.config) {
        builtin
    } else {
        let path = Path::new(&args.config);
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::Error::from(CoreError::Config(format!("{}: {e}", args.config))))?;
        serde_json::from_str(&text)
            .map_err(|e| anyhow::Error::from(CoreError::Config(format!("{}: {e}", args.config))))?
    };
    if let Some(mode) = &args.mode {
        cfg.mode = match mode.as_str() {
            "nne" => Mode::Nne,
            "mne" => Mode::Mne,
            other => {
                return Err(CoreError::Config(format!("unknown mode {other}")).into());
            }
        };
    }
    if let Some(eps0) = args.eps0 {
        cfg.solver.eps0 = Some(eps0);
    }
    if let Some(tol) = args.tol {
        cfg.solver.tol = tol;
    }
    if let Some(seed) = args.seed {
        cfg.solver.seed = seed;
    }
    cfg.validate().map_err(anyhow::Error::from)?;
    let out = args
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os("DCG_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((cfg, out))
}

fn atomic_write(path: &Path, contents: &str) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn config_sha256(cfg: &ScenarioConfig) -> anyhow::Result<String> {
    let canonical = serde_json::to_string(cfg)?;
    let mut hasher = sha2::Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}

fn solver_options(cfg: &ScenarioConfig) -> anyhow::Result<SolveOptions> {
    Ok(SolveOptions {
        tol: cfg.solver.tol,
        max_iters: cfg.solver.max_iters,
        seed: cfg.solver.seed,
        initial: {
            let grid = cfg.build_grid()?;
            let n = if cfg.scenario == ScenarioKind::Custom {
                cfg.markets.len()
            } else {
                1
            };
            cfg.initial_profile(&grid, n)?
        },
        ..Default::default()
    })
}

fn assemble_for(cfg: &ScenarioConfig, spec: &dcg_core::dynamics::GameSpec) -> anyhow::Result<AssembledVI> {
    let mut vi = match cfg.mode {
        Mode::Nne => assemble_nne(spec)?,
        Mode::Mne => assemble_mne(spec)?,
    };
    if let Some(eps0) = cfg.solver.eps0 {
        vi = vi.with_eps0(eps0)?;
    }
    Ok(vi)
}

fn results_csv(res: &EquilibriumResult) -> String {
    let n = res.u_hat.n();
    let mut out = String::from("x");
    for i in 1..=n {
        out.push_str(&format!(",u_{i}"));
    }
    for i in 1..=n {
        out.push_str(&format!(",V_{i}"));
    }
    out.push('\n');
    let grid = res.u_hat.grid();
    for (j, x) in grid.nodes().iter().enumerate() {
        out.push_str(&format!("{x}"));
        for i in 0..n {
            out.push_str(&format!(",{}", res.u_hat.component(i).values()[j]));
        }
        for v in &res.v_hat {
            out.push_str(&format!(",{}", v.values()[j]));
        }
        out.push('\n');
    }
    out
}

fn lambda_trace_csv(res: &EquilibriumResult) -> String {
    let n = res.u_hat.n();
    let mut out = String::from("m");
    for i in 1..=n {
        out.push_str(&format!(",lambda_{i}"));
    }
    out.push('\n');
    for (m, row) in res.lambda_trace.iter().enumerate() {
        out.push_str(&format!("{}", m + 1));
        for l in row {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
    }
    out
}

fn gap_trace_csv(res: &EquilibriumResult) -> String {
    let mut out = String::from("m,gap\n");
    for (m, g) in res.gap_trace.iter().enumerate() {
        out.push_str(&format!("{},{g}\n", m + 1));
    }
    out
}

fn summary_json(res: &EquilibriumResult, vi: &AssembledVI) -> serde_json::Value {
    serde_json::json!({
        "mode": res.mode,
        "lambda": res.lambda,
        "owap": res.owap,
        "iterations": res.iterations,
        "vi_residual": res.vi_residual,
        "certificate": {
            "eps_p": vi.eps_p,
            "p_norm": vi.p_norm,
            "eps0": vi.eps0,
            "rayleigh_bounds": [vi.bounds.0, vi.bounds.1],
        },
    })
}

fn write_manifest(
    cfg: &ScenarioConfig,
    out: &Path,
    outputs: &[&str],
    iterations: Option<usize>,
    certificate: Option<&AssembledVI>,
) -> anyhow::Result<()> {
    let manifest = serde_json::json!({
        "config_sha256": config_sha256(cfg)?,
        "effective_config": cfg,
        "tolerances": { "tol": cfg.solver.tol, "max_iters": cfg.solver.max_iters },
        "seed": cfg.solver.seed,
        "iterations": iterations,
        "certificate": certificate.map(|vi| serde_json::json!({
            "eps_p": vi.eps_p,
            "p_norm": vi.p_norm,
            "eps0": vi.eps0,
            "rayleigh_bounds": [vi.bounds.0, vi.bounds.1],
        })),
        "outputs": outputs,
    });
    atomic_write(
        &out.join("manifest.json"),
        &format!("{:#}\n", manifest),
    )
}

fn cmd_solve(cfg: &ScenarioConfig, out: &Path, dump_trajectory: bool) -> anyhow::Result<()> {
    if cfg.piecewise.is_some() {
        return cmd_solve_piecewise(cfg, out);
    }
    let spec = cfg.build_spec()?;
    let vi = assemble_for(cfg, &spec)?;
    let opts = solver_options(cfg)?;
    let res = match cfg.mode {
        Mode::Nne => solve_nne(&vi, &opts)?,
        Mode::Mne => solve_mne(&vi, &opts)?,
    };

    atomic_write(&out.join("results.csv"), &results_csv(&res))?;
    atomic_write(&out.join("lambda_trace.csv"), &lambda_trace_csv(&res))?;
    atomic_write(&out.join("gap_trace.csv"), &gap_trace_csv(&res))?;
    let mut summary = summary_json(&res, &vi);
    if cfg.mode == Mode::Nne {
        let floor = dcg_core::equilibrium::default_support_floor(spec.grid.span());
        summary["verification_residual"] =
            serde_json::json!(verify_nne(&res.u_hat, &res.v_hat, floor)?);
    }
    if cfg.scenario == ScenarioKind::Cournot {
        let params = cfg.cournot_params(&spec.grid)?;
        let report = cournot_regime(&params, cfg.mode, spec.timegrid.len() - 1)?;
        summary["regime"] = serde_json::to_value(&report)?;
    }
    atomic_write(&out.join("summary.json"), &format!("{summary:#}\n"))?;

    let mut outputs = vec![
        "results.csv",
        "lambda_trace.csv",
        "gap_trace.csv",
        "summary.json",
    ];
    if dump_trajectory {
        for (i, market) in spec.markets.iter().enumerate() {
            let traj =
                dcg_core::dynamics::solve_state_forward(market, &res.u_hat, &spec.timegrid)?;
            let mut csv = String::from("t,x,value\n");
            for (k, t) in traj.times.iter().enumerate() {
                for (j, x) in spec.grid.nodes().iter().enumerate() {
                    csv.push_str(&format!("{t},{x},{}\n", traj.states[k].values()[j]));
                }
            }
            atomic_write(&out.join(format!("trajectory_market_{}.csv", i + 1)), &csv)?;
        }
        outputs.push("trajectory_market_*.csv");
    }
    write_manifest(cfg, out, &outputs, Some(res.iterations), Some(&vi))?;
    println!(
        "solved {} mode={} iterations={} owap={:?}",
        out.display(),
        cfg.mode,
        res.iterations,
        res.owap
    );
    Ok(())
}

fn cmd_solve_piecewise(cfg: &ScenarioConfig, out: &Path) -> anyhow::Result<()> {
    let segments: Vec<_> = cfg
        .segment_bounds()
        .into_iter()
        .map(|(s, t)| cfg.build_spec_on(s, t))
        .collect::<dcg_core::Result<_>>()?;
    let opts = solver_options(cfg)?;
    let res = solve_piecewise(&segments, cfg.mode, &opts, cfg.solver.eps0)?;
    let mut outputs: Vec<String> = Vec::new();
    for (m, seg) in res.segments.iter().enumerate() {
        let name = format!("results_segment_{}.csv", m + 1);
        atomic_write(&out.join(&name), &results_csv(seg))?;
        outputs.push(name);
    }
    let summary = serde_json::json!({
        "mode": cfg.mode,
        "breakpoints": res.breakpoints,
        "total_wap": res.total_wap,
        "segments": res.segments.iter().map(|s| serde_json::json!({
            "lambda": s.lambda,
            "owap": s.owap,
            "iterations": s.iterations,
            "vi_residual": s.vi_residual,
        })).collect::<Vec<_>>(),
    });
    atomic_write(&out.join("summary.json"), &format!("{summary:#}\n"))?;
    outputs.push("summary.json".into());
    let refs: Vec<&str> = outputs.iter().map(|s| s.as_str()).collect();
    write_manifest(cfg, out, &refs, None, None)?;
    println!(
        "solved {} mode={} segments={} total_wap={:?}",
        out.display(),
        cfg.mode,
        res.segments.len(),
        res.total_wap
    );
    Ok(())
}

fn cmd_regime_map(cfg: &ScenarioConfig, out: &Path) -> anyhow::Result<()> {
    let map = cfg
        .regime_map
        .as_ref()
        .ok_or_else(|| CoreError::Config("config has no regime_map block".into()))?;
    let grid = dcg_core::function_space::make_grid(
        cfg.grid.a,
        cfg.grid.b,
        map.grid_nodes,
        dcg_core::function_space::QuadratureRule::CompositeTrapezoid,
    )?;
    let base = cfg
        .cournot
        .as_ref()
        .ok_or_else(|| CoreError::Config("regime map needs the cournot block".into()))?;
    let t_horizon = cfg.time.t_end - cfg.time.s;
    let mut csv = String::from("sigma2,sigma3,sigma4,label\n");
    for s2 in map.sigma2.values() {
        for s3 in map.sigma3.values() {
            for s4 in map.sigma4.values() {
                let params = dcg_core::vi_assembly::CournotParams {
                    a: cfg.grid.a,
                    b: cfg.grid.b,
                    t_horizon,
                    sigma0: base.sigma0.sample_on(&grid)?,
                    xi: base.xi.sample_on(&grid)?,
                    sigma1: base.sigma1,
                    sigma2: s2,
                    sigma3: s3,
                    sigma4: s4,
                    sigma5: map.sigma5,
                    sigma6: base.sigma6.sample_on(&grid)?,
                    sigma7: base.sigma7.sample_on(&grid)?,
                };
                let c_plus = params.criterion();
                let mut minus = params.clone();
                minus.sigma5 = -map.sigma5;
                let c_minus = minus.criterion();
                let label = match (c_plus > 0.0, c_minus < 0.0) {
                    (true, true) => "both",
                    (true, false) => "nne_only",
                    (false, true) => "mne_only",
                    (false, false) => "neither",
                };
                csv.push_str(&format!("{s2},{s3},{s4},{label}\n"));
            }
        }
    }
    atomic_write(&out.join("regime_map.csv"), &csv)?;
    write_manifest(cfg, out, &["regime_map.csv"], None, None)?;
    println!("regime map written to {}", out.display());
    Ok(())
}

fn cmd_stability(cfg: &ScenarioConfig, out: &Path) -> anyhow::Result<()> {
    let stab = cfg
        .stability
        .as_ref()
        .ok_or_else(|| CoreError::Config("config has no stability block".into()))?;
    let spec = cfg.build_spec()?;
    let schedule = cfg
        .perturbation_schedule(spec.n)
        .ok_or_else(|| CoreError::Config("missing perturbation schedule".into()))?;
    let opts = solver_options(cfg)?;
    let report = stability_report(
        &spec,
        &schedule,
        cfg.mode,
        &opts,
        cfg.solver.eps0,
        StabilityThresholds {
            final_gap: stab.final_gap,
        },
    )?;
    atomic_write(&out.join("stability.csv"), &report.to_csv())?;
    atomic_write(
        &out.join("lambda_trace.csv"),
        &lambda_trace_csv(&report.base),
    )?;
    atomic_write(&out.join("results.csv"), &results_csv(&report.base))?;
    let last = report.rows.last().unwrap();
    let summary = serde_json::json!({
        "mode": cfg.mode,
        "k_max": schedule.k_max,
        "final_gaps": {
            "u_gap": last.u_gap,
            "v_gap": last.v_gap,
            "owap_gap": last.owap_gap,
        },
        "base": {
            "lambda": report.base.lambda,
            "owap": report.base.owap,
            "iterations": report.base.iterations,
        },
    });
    atomic_write(&out.join("summary.json"), &format!("{summary:#}\n"))?;
    write_manifest(
        cfg,
        out,
        &["stability.csv", "lambda_trace.csv", "results.csv", "summary.json"],
        Some(report.base.iterations),
        None,
    )?;
    println!(
        "stability report written to {} (final u_gap {:.3e})",
        out.display(),
        last.u_gap
    );
    Ok(())
}
