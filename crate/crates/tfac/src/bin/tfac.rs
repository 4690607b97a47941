//! Command-line harness around the experiment drivers.
//!
//! Parameters come from flags, optionally overlaid on a flat `key=value`
//! config file (`--config FILE`); explicit flags win over file entries.
//! Every command writes CSV outputs into `--out` (default `out/<command>`).
//! Exit status is 0 on success; failures print one `error: <message>` line
//! on stderr and exit nonzero.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tfac::experiments::{self, CoarsenMesh, CoarsenParams, ConvergeParams, KernelVerifyParams, MaxBoundParams, SingularityParams};
use tfac::mesh::AdaptiveController;

#[derive(Parser)]
#[command(name = "tfac", version, about = "Time-fractional Allen-Cahn experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct Common {
    /// Flat key=value config file; flags override file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Steps N (converge: ignored in favour of --n-list; singularity: mesh size).
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    m1: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Uniform-error tolerance of the fast-history kernel compression.
    #[arg(long)]
    eps_soe: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Manufactured-solution convergence study over an N list.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list of step counts.
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
        /// Use the O(N^2) direct history instead of the fast path.
        #[arg(long)]
        direct: bool,
    },
    /// Max-norm histories from random initial data on uniform meshes.
    Maxbound {
        #[command(flatten)]
        common: Common,
        /// Comma-separated uniform step sizes.
        #[arg(long, value_delimiter = ',')]
        tau_list: Option<Vec<f64>>,
        #[arg(long)]
        t_final: Option<f64>,
        /// Amplitude of the random initial data.
        #[arg(long)]
        amp: Option<f64>,
    },
    /// Log-log decay of the discrete time derivative on a graded mesh.
    Singularity {
        #[command(flatten)]
        common: Common,
    },
    /// Long-time coarsening run (graded-uniform or graded-adaptive mesh).
    Coarsen {
        #[command(flatten)]
        common: Common,
        /// Mesh strategy: graded-uniform or graded-adaptive.
        #[arg(long, default_value = "graded-uniform")]
        mesh: String,
        /// Uniform tail step (graded-uniform mesh).
        #[arg(long)]
        tau: Option<f64>,
        /// Adaptivity level kappa (graded-adaptive mesh).
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        tau_min: Option<f64>,
        #[arg(long)]
        tau_max: Option<f64>,
        /// Clip adaptive steps by the maximum-bound restriction.
        #[arg(long)]
        enforce_restriction: bool,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        amp: Option<f64>,
        /// Comma-separated snapshot times.
        #[arg(long, value_delimiter = ',')]
        snapshot_times: Option<Vec<f64>>,
        /// Skip the energy monitors (incompatible with adaptive stepping).
        #[arg(long)]
        no_energy_monitor: bool,
    },
    /// Step-count and energy comparison of adaptive levels vs uniform steps.
    Adaptive {
        #[command(flatten)]
        common: Common,
        /// Comma-separated adaptivity levels.
        #[arg(long, value_delimiter = ',')]
        kappas: Option<Vec<f64>>,
        #[arg(long)]
        t_final: Option<f64>,
    },
    /// Kernel identity residuals on random nonuniform meshes.
    VerifyKernels {
        #[command(flatten)]
        common: Common,
        /// Number of random meshes.
        #[arg(long)]
        meshes: Option<usize>,
        /// Comma-separated fractional orders.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// Certification dump of the sum-of-exponentials kernel compression.
    VerifySoe {
        #[command(flatten)]
        common: Common,
        /// Cut-off time (smallest certified argument).
        #[arg(long)]
        cutoff: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
    },
}

/// Flat key=value file (one pair per line, `#` comments).
fn load_config(path: &PathBuf) -> Result<HashMap<String, String>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {} is not key=value: {line}", lineno + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

struct Settings {
    file: HashMap<String, String>,
}

impl Settings {
    fn new(common: &Common) -> Result<Self, String> {
        let file = match &common.config {
            Some(p) => load_config(p)?,
            None => HashMap::new(),
        };
        Ok(Settings { file })
    }

    fn get<T: std::str::FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| format!("config key {key}={raw}: {e}")),
            None => Ok(default),
        }
    }

    fn get_list_f64(
        &self,
        key: &str,
        flag: Option<Vec<f64>>,
        default: Vec<f64>,
    ) -> Result<Vec<f64>, String> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .split(',')
                .map(|s| s.trim().parse().map_err(|e| format!("config key {key}: {e}")))
                .collect(),
            None => Ok(default),
        }
    }

    fn get_list_usize(
        &self,
        key: &str,
        flag: Option<Vec<usize>>,
        default: Vec<usize>,
    ) -> Result<Vec<usize>, String> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .split(',')
                .map(|s| s.trim().parse().map_err(|e| format!("config key {key}: {e}")))
                .collect(),
            None => Ok(default),
        }
    }
}

fn out_dir(common: &Common, settings: &Settings, command: &str) -> Result<PathBuf, String> {
    settings.get(
        "out",
        common.out.clone(),
        PathBuf::from("out").join(command),
    )
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Converge {
            common,
            n_list,
            direct,
        } => {
            let s = Settings::new(&common)?;
            let params = ConvergeParams {
                alpha: s.get("alpha", common.alpha, 0.6)?,
                sigma: s.get("sigma", common.sigma, 0.4)?,
                gamma: s.get("gamma", common.gamma, 4.0)?,
                n_list: s.get_list_usize(
                    "n-list",
                    n_list,
                    experiments::DESK_N_LIST.to_vec(),
                )?,
                m1: s.get("m1", common.m1, experiments::DESK_M1)?,
                seed: s.get("seed", common.seed, 1)?,
                direct,
                eps_soe: s.get("eps-soe", common.eps_soe, experiments::DEFAULT_EPS_SOE)?,
            };
            let out = out_dir(&common, &s, "converge")?;
            let rows = experiments::run_converge(&params, Some(&out)).map_err(stringify)?;
            println!("N       tau_max      e(N)         order");
            for r in &rows {
                match r.order {
                    Some(o) => println!(
                        "{:<7} {:<12.4e} {:<12.4e} {:.2}",
                        r.n, r.tau_max, r.error, o
                    ),
                    None => println!("{:<7} {:<12.4e} {:<12.4e} -", r.n, r.tau_max, r.error),
                }
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Maxbound {
            common,
            tau_list,
            t_final,
            amp,
        } => {
            let s = Settings::new(&common)?;
            let params = MaxBoundParams {
                alpha: s.get("alpha", common.alpha, 0.7)?,
                tau_list: s.get_list_f64("tau-list", tau_list, vec![0.1, 0.8, 1.0])?,
                t_end: s.get("t-final", t_final, 40.0)?,
                m1: s.get("m1", common.m1, experiments::DESK_M1)?,
                domain: experiments::COARSEN_DOMAIN,
                eps_int: experiments::COARSEN_EPS_INT,
                seed: s.get("seed", common.seed, 1)?,
                amp: s.get("amp", amp, experiments::COARSEN_AMP)?,
                eps_soe: s.get("eps-soe", common.eps_soe, experiments::DEFAULT_EPS_SOE)?,
            };
            let out = out_dir(&common, &s, "maxbound")?;
            let runs = experiments::run_maxbound(&params, Some(&out)).map_err(stringify)?;
            println!("tau      bound    within_bound  max_norm      exceeded");
            for r in &runs {
                println!(
                    "{:<8.3} {:<8.4} {:<13} {:<13.6e} {}",
                    r.tau, r.bound, r.restriction_ok, r.max_norm_overall, r.exceeded
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Singularity { common } => {
            let s = Settings::new(&common)?;
            let params = SingularityParams {
                alpha: s.get("alpha", common.alpha, 0.7)?,
                gamma: s.get("gamma", common.gamma, 3.0)?,
                n_steps: s.get("n-steps", common.n_steps, 200)?,
                m1: s.get("m1", common.m1, experiments::DESK_M1)?,
                seed: s.get("seed", common.seed, 1)?,
                eps_soe: s.get("eps-soe", common.eps_soe, experiments::DEFAULT_EPS_SOE)?,
            };
            let out = out_dir(&common, &s, "singularity")?;
            let result = experiments::run_singularity(&params, Some(&out)).map_err(stringify)?;
            println!(
                "fitted slope {:.4} (alpha - 1 = {:.4})",
                result.slope,
                params.alpha - 1.0
            );
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Coarsen {
            common,
            mesh,
            tau,
            kappa,
            tau_min,
            tau_max,
            enforce_restriction,
            t_final,
            amp,
            snapshot_times,
            no_energy_monitor,
        } => {
            let s = Settings::new(&common)?;
            let mesh_kind = s.get("mesh", Some(mesh), "graded-uniform".to_string())?;
            let mesh = match mesh_kind.as_str() {
                "graded-uniform" => CoarsenMesh::GradedUniform {
                    tau: s.get("tau", tau, 0.01)?,
                },
                "graded-adaptive" => {
                    let mut controller = AdaptiveController::new(
                        s.get("kappa", kappa, 1e3)?,
                        s.get("tau-min", tau_min, 1e-3)?,
                        s.get("tau-max", tau_max, 1e-1)?,
                    )
                    .map_err(stringify)?;
                    controller.enforce_restriction = enforce_restriction;
                    CoarsenMesh::GradedAdaptive { controller }
                }
                other => return Err(format!("unknown mesh strategy {other}")),
            };
            let params = CoarsenParams {
                alpha: s.get("alpha", common.alpha, 0.7)?,
                mesh,
                t_end: s.get("t-final", t_final, 40.0)?,
                m1: s.get("m1", common.m1, experiments::DESK_M1)?,
                domain: experiments::COARSEN_DOMAIN,
                eps_int: experiments::COARSEN_EPS_INT,
                seed: s.get("seed", common.seed, 1)?,
                amp: s.get("amp", amp, experiments::COARSEN_AMP)?,
                snapshot_times: s.get_list_f64("snapshot-times", snapshot_times, vec![])?,
                track_energy: !no_energy_monitor,
                eps_soe: s.get("eps-soe", common.eps_soe, experiments::DEFAULT_EPS_SOE)?,
            };
            let out = out_dir(&common, &s, "coarsen")?;
            let r = experiments::run_coarsen(&params, Some(&out)).map_err(stringify)?;
            println!(
                "steps {}  E(T) {:.6e}  E_alpha(T) {:.6e}  max|u| {:.6}  dissipation_ok {:?}",
                r.steps,
                r.final_energy,
                r.final_energy_variational,
                r.max_norm_overall,
                r.dissipation_all_ok
            );
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Adaptive {
            common,
            kappas,
            t_final,
        } => {
            let s = Settings::new(&common)?;
            let alpha = s.get("alpha", common.alpha, 0.7)?;
            let kappas = s.get_list_f64("kappas", kappas, vec![10.0, 100.0, 1000.0])?;
            let t_end = s.get("t-final", t_final, 40.0)?;
            let m1 = s.get("m1", common.m1, experiments::DESK_M1)?;
            let seed = s.get("seed", common.seed, 1)?;
            let out = out_dir(&common, &s, "adaptive")?;
            let rows =
                experiments::run_adaptive_comparison(alpha, &kappas, t_end, m1, seed, Some(&out))
                    .map_err(stringify)?;
            println!("strategy                        steps   E(T)          E_alpha(T)");
            for r in &rows {
                println!(
                    "{:<30} {:<7} {:<13.6e} {:.6e}",
                    r.label, r.steps, r.final_energy, r.final_energy_variational
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::VerifyKernels {
            common,
            meshes,
            alphas,
        } => {
            let s = Settings::new(&common)?;
            let params = KernelVerifyParams {
                seed: s.get("seed", common.seed, 1)?,
                n_meshes: s.get("meshes", meshes, 20)?,
                n_steps: s.get("n-steps", common.n_steps, 50)?,
                alphas: s.get_list_f64("alphas", alphas, vec![0.3, 0.5, 0.7, 0.9])?,
            };
            let out = out_dir(&common, &s, "verify-kernels")?;
            let summary =
                experiments::run_verify_kernels(&params, Some(&out)).map_err(stringify)?;
            println!(
                "max identity residual {:.3e} (tolerance {:.3e}), min positive-definiteness slack {:.3e}",
                summary.max_identity_residual, summary.tolerance, summary.min_pd_slack
            );
            println!("wrote {}", out.display());
            if summary.all_ok {
                println!("kernel identities: PASS");
                Ok(())
            } else {
                Err("kernel identities FAILED".into())
            }
        }
        Command::VerifySoe {
            common,
            cutoff,
            t_final,
        } => {
            let s = Settings::new(&common)?;
            let alpha = s.get("alpha", common.alpha, 0.5)?;
            let eps = s.get("eps-soe", common.eps_soe, experiments::DEFAULT_EPS_SOE)?;
            let cutoff = s.get("cutoff", cutoff, 1e-12)?;
            let t_end = s.get("t-final", t_final, 40.0)?;
            let out = out_dir(&common, &s, "verify-soe")?;
            let summary = experiments::run_verify_soe(alpha, eps, cutoff, t_end, Some(&out))
                .map_err(stringify)?;
            println!(
                "modes {}  max sampled error {:.3e}  tolerance {:.3e}",
                summary.n_modes, summary.max_error, summary.tolerance
            );
            println!("wrote {}", out.display());
            if summary.max_error <= summary.tolerance {
                println!("certificate: PASS");
                Ok(())
            } else {
                Err("certificate FAILED".into())
            }
        }
    }
}

fn stringify(e: tfac::Error) -> String {
    e.to_string()
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
