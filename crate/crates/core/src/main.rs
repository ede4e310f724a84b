use std::error::Error;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use ringcut::circuit::{build_qaoa_ansatz, Circuit};
use ringcut::experiment::{emit_table, run_sweep, ExperimentConfig, Mitigation};
use ringcut::graph::make_ring;
use ringcut::noise::{preset, resolve_device, DeviceProfile, PRESET_NAMES};
use ringcut::qaoa::{
    analytic_ring_fstar, analytic_ring_ratio, grid_search_p1, grid_to_csv, history_to_csv, optimize_params,
    ramp_start, Backend, BackendMode, GridSpec,
};
use ringcut::transpile::{transpile, LayoutMethod, PassConfig, TranslationMethod};

type AnyResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(
    name = "ringcut",
    version,
    about = "QAOA max-cut on rings: noisy simulation, transpilation and sweeps"
)]
struct Cli {
    /// Seed for restarts and sampling (default 0, or the config's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Preset name, profile JSON path, or a name under $RINGCUT_DEVICE_DIR.
    #[arg(long, global = true)]
    device: Option<String>,
    /// Pass stack: `off` = level 0 + trivial layout, `on` = level 3 + ring embedding.
    #[arg(long, global = true)]
    mitigation: Option<Mitigation>,
    /// Desk-scale sweep preset (3 runs, 5000 shots, p <= 4 unless --p-range is given, exact noisy expectation).
    #[arg(long, global = true)]
    fast: bool,
    /// Experiment config (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bundled device profiles.
    Devices {
        #[command(subcommand)]
        action: DevicesAction,
    },
    /// Closed-form optimal ratio and expectation on even rings.
    Oracle {
        #[arg(long, num_args = 2, value_names = ["P_MIN", "P_MAX"], default_values_t = [1, 10])]
        p_range: Vec<usize>,
        /// Ring size for the expectation column.
        #[arg(long, default_value_t = 12)]
        n: usize,
    },
    /// p = 1 landscape over [0, pi] x [0, pi/2] as CSV.
    Grid {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = PI / 30.0)]
        resolution: f64,
        /// noiseless_exact, noisy_exact or shots (default: noisy_exact with a device).
        #[arg(long)]
        mode: Option<BackendMode>,
        #[arg(long, default_value_t = 50_000)]
        shots: usize,
    },
    /// Transpile a circuit and print the metrics for levels 0 to 3.
    Transpile {
        /// Circuit text file.
        #[arg(long = "in", conflicts_with = "ring")]
        input: Option<PathBuf>,
        /// Use the p = 1 ansatz of this ring instead of a file.
        #[arg(long)]
        ring: Option<usize>,
        /// Level of the circuit written to --out.
        #[arg(long, default_value_t = 3)]
        level: u8,
        #[arg(long, default_value = "embed")]
        layout: LayoutMethod,
        #[arg(long, default_value = "resynth1q")]
        translation: TranslationMethod,
    },
    /// Optimize the angles for one ring.
    Run {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long)]
        mode: Option<BackendMode>,
        #[arg(long, default_value_t = 50_000)]
        shots: usize,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        #[arg(long, default_value_t = 400)]
        max_evals: usize,
        /// Write the optimizer trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sweep ring sizes and depths; prints the aggregated table.
    Sweep {
        /// Comma-separated ring sizes.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long, num_args = 2, value_names = ["P_MIN", "P_MAX"])]
        p_range: Option<Vec<usize>>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        mode: Option<BackendMode>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        max_evals: Option<usize>,
        #[arg(long)]
        refine_evals: Option<usize>,
        /// Per-run JSON lines (default: next to --out with a .jsonl extension).
        #[arg(long)]
        records: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DevicesAction {
    /// Preset names and sizes.
    List,
    /// Print a profile as JSON.
    Show { name: Option<String> },
}

fn write_output(out: Option<&Path>, text: &str) -> AnyResult<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()).into()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn device_backend(
    profile: Option<DeviceProfile>,
    mitigation: Option<Mitigation>,
    mode: Option<BackendMode>,
    shots: usize,
    seed: u64,
) -> Backend {
    let cfg = mitigation.unwrap_or(Mitigation::On).pass_config();
    match (profile, mode) {
        (None, Some(BackendMode::Shots)) => Backend::shots(None, shots, seed),
        (None, _) => Backend::noiseless_exact().with_seed(seed),
        (Some(p), Some(BackendMode::Shots)) => Backend::shots(Some((p, cfg)), shots, seed),
        (Some(p), Some(BackendMode::NoiselessExact)) => Backend {
            mode: BackendMode::NoiselessExact,
            profile: Some(p),
            transpile_cfg: Some(cfg),
            shots: None,
            seed,
        },
        (Some(p), _) => Backend::noisy_exact(p, cfg).with_seed(seed),
    }
}

fn run(cli: Cli) -> AnyResult<()> {
    let out = cli.out.as_deref();
    let seed = cli.seed.unwrap_or(0);
    let profile = cli.device.as_deref().map(resolve_device).transpose()?;
    match cli.command {
        Command::Devices { action } => match action {
            DevicesAction::List => {
                let mut text = String::new();
                for name in PRESET_NAMES {
                    let p = preset(name).expect("preset");
                    text.push_str(&format!("{name}\t{} qubits\n", p.num_qubits()));
                }
                write_output(out, &text)
            }
            DevicesAction::Show { name } => {
                let p = match (name, profile) {
                    (Some(n), _) => resolve_device(&n)?,
                    (None, Some(p)) => p,
                    (None, None) => return Err("devices show needs a name or --device".into()),
                };
                write_output(out, &(p.to_json() + "\n"))
            }
        },
        Command::Oracle { p_range, n } => {
            let (lo, hi) = (p_range[0], p_range[1]);
            if lo == 0 || hi < lo {
                return Err(format!("p range {lo}..{hi} must satisfy 1 <= P_MIN <= P_MAX").into());
            }
            let mut text = String::new();
            for p in lo..=hi {
                text.push_str(&format!(
                    "p={p} ratio={:.4} fstar={:.4} n={n}\n",
                    analytic_ring_ratio(p)?,
                    analytic_ring_fstar(n, p)?
                ));
            }
            write_output(out, &text)
        }
        Command::Grid { n, resolution, mode, shots } => {
            let g = make_ring(n)?;
            let backend = device_backend(profile, cli.mitigation, mode, shots, seed);
            let spec = GridSpec {
                resolution,
                ..GridSpec::default()
            };
            let points = grid_search_p1(&g, &backend, &spec)?;
            write_output(out, &grid_to_csv(&points))
        }
        Command::Transpile {
            input,
            ring,
            level,
            layout,
            translation,
        } => {
            let circuit = match (input, ring) {
                (Some(path), _) => {
                    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                    Circuit::from_text(&text)?
                }
                (None, Some(n)) => build_qaoa_ansatz(&make_ring(n)?, &ramp_start(1), true, false),
                (None, None) => return Err("transpile needs --in FILE or --ring N".into()),
            };
            let profile = profile.ok_or("transpile needs --device")?;
            let target = PassConfig::new(level, layout, translation)?;
            let mut text = String::from("level,depth,ops,nonlocal,swaps\n");
            for l in 0..=3 {
                let cfg = PassConfig::new(l, layout, translation)?;
                let r = transpile(&circuit, &profile, &cfg)?;
                let m = r.metrics_after;
                text.push_str(&format!("{l},{},{},{},{}\n", m.depth, m.op_count, m.nonlocal_count, r.swap_count));
            }
            print!("{text}");
            let r = transpile(&circuit, &profile, &target)?;
            eprintln!("layout: {} {:?}", r.layout_method, r.layout.as_slice());
            if let Some(path) = out {
                write_output(Some(path), &r.circuit.to_text())?;
            }
            Ok(())
        }
        Command::Run {
            n,
            p,
            mode,
            shots,
            restarts,
            max_evals,
            trace,
        } => {
            let g = make_ring(n)?;
            let backend = device_backend(profile, cli.mitigation, mode, shots, seed);
            let r = optimize_params(&g, p, &backend, restarts, max_evals)?;
            if let Some(path) = trace {
                write_output(Some(&path), &history_to_csv(&r.history))?;
            }
            let summary = json!({
                "n": n,
                "p": p,
                "mode": backend.mode.to_string(),
                "f_star": r.f_star,
                "exact_f_star": r.exact_f_star,
                "c_max": r.c_max,
                "ratio": r.ratio,
                "success_prob": r.success_prob,
                "gammas": r.best_params.gammas(),
                "betas": r.best_params.betas(),
                "evals": r.evals,
                "budget_exhausted": r.budget_exhausted,
                "depth": r.metrics.map(|m| m.depth),
                "nonlocal": r.metrics.map(|m| m.nonlocal_count),
            });
            write_output(out, &(serde_json::to_string_pretty(&summary)? + "\n"))
        }
        Command::Sweep {
            n,
            p_range,
            runs,
            shots,
            mode,
            restarts,
            max_evals,
            refine_evals,
            records,
        } => {
            let mut cfg = match &cli.config {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                    ExperimentConfig::from_json(&text)?
                }
                None => {
                    let n = n.clone().ok_or("sweep needs --n or --config")?;
                    let device = cli.device.clone().ok_or("sweep needs --device or --config")?;
                    ExperimentConfig::new(n, (1, 1), &device, Mitigation::On)
                }
            };
            if cli.fast {
                cfg = cfg.fast();
            }
            if let Some(n) = n {
                cfg.ring_sizes = n;
            }
            if let Some(pr) = p_range {
                cfg.p_range = (pr[0], pr[1]);
            }
            if let Some(d) = &cli.device {
                cfg.device = d.clone();
            }
            if let Some(m) = cli.mitigation {
                cfg.mitigation = m;
            }
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cfg.runs = runs.unwrap_or(cfg.runs);
            cfg.shots = shots.unwrap_or(cfg.shots);
            cfg.backend_mode = mode.unwrap_or(cfg.backend_mode);
            cfg.restarts = restarts.unwrap_or(cfg.restarts);
            cfg.max_evals = max_evals.unwrap_or(cfg.max_evals);
            if refine_evals.is_some() {
                cfg.refine_evals = refine_evals;
            }
            let result = run_sweep(&cfg)?;
            for row in result.rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("cell n={} p={} failed: {}", row.n, row.p, row.error.as_deref().unwrap_or(""));
            }
            let records_path = records.or_else(|| out.map(|o| o.with_extension("jsonl")));
            if let Some(path) = records_path {
                write_output(Some(&path), &result.records_jsonl())?;
            }
            write_output(out, &emit_table(&result.rows)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

