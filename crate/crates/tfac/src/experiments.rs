//! Reproducible experiment drivers: manufactured-solution convergence,
//! maximum-bound sweeps, the initial-singularity study, coarsening dynamics
//! with adaptive stepping, and the kernel / sum-of-exponentials verification
//! dumps.
//!
//! Every driver is deterministic given its parameters and seed, returns its
//! results as plain data for tests, and optionally emits CSV files into an
//! output directory:
//!
//! * `errors.csv` — `N,tau_max,error,order`
//! * `records*.csv` — per-step solver records
//! * `maxbound.csv` — per-step-size summary of the bound sweep
//! * `singularity.csv` — `t_mid,ddt_max,probe1,probe2,probe3`
//! * `adaptive_summary.csv` — `label,kappa,steps,E_final,E_alpha_final`
//! * `kernels.csv` — `n,k,a,q,theta,p,residual`
//! * `soe.csv` — `t,omega,soe,error`
//! * `mesh*.csv` — `index,t`
//! * `snapshot_t<t>.bin` / `.csv` — field snapshots

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::kernels::{self, KernelTable};
use crate::manufactured::ManufacturedCase;
use crate::mesh::{self, AdaptiveController, TimeMesh};
use crate::rng::SplitMix64;
use crate::soe::{build_soe, certification_grid, SoeApprox};
use crate::stepper::{step_restriction_bound, ModelConfig, TfacSolver};

/// Desk-scale defaults mirroring the experiment setups.
pub const DESK_N_LIST: [usize; 4] = [100, 200, 400, 800];
pub const DESK_M1: usize = 128;
pub const COARSEN_DOMAIN: f64 = 2.0 * PI;
pub const COARSEN_EPS_INT: f64 = 0.05;
pub const COARSEN_AMP: f64 = 1e-3;
/// Graded starting cell of the long-time runs: `[0, 0.01]`, 30 steps, γ = 3.
pub const COARSEN_GRADED: (f64, usize, f64) = (0.01, 30, 3.0);
pub const DEFAULT_EPS_SOE: f64 = 1e-12;

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(out)?;
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn random_initial(spec: GridSpec, amp: f64, seed: u64) -> GridField {
    let mut rng = SplitMix64::new(seed);
    let values = (0..spec.num_points())
        .map(|_| rng.next_symmetric(amp))
        .collect();
    GridField::from_values(spec, values).expect("sized by spec")
}

fn build_soe_for_mesh(alpha: f64, eps: f64, min_step: f64, horizon: f64) -> Result<SoeApprox> {
    build_soe(alpha, eps, min_step * (1.0 - 1e-9), horizon)
}

// ---------------------------------------------------------------------------
// Convergence study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvergeParams {
    pub alpha: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub n_list: Vec<usize>,
    pub m1: usize,
    pub seed: u64,
    /// Use the O(N²) direct history instead of the fast path.
    pub direct: bool,
    pub eps_soe: f64,
}

impl ConvergeParams {
    pub fn desk(alpha: f64, sigma: f64, gamma: f64, seed: u64) -> Self {
        ConvergeParams {
            alpha,
            sigma,
            gamma,
            n_list: DESK_N_LIST.to_vec(),
            m1: DESK_M1,
            seed,
            direct: false,
            eps_soe: DEFAULT_EPS_SOE,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvergeRow {
    pub n: usize,
    pub tau_max: f64,
    pub error: f64,
    /// Empirical order against the previous row.
    pub order: Option<f64>,
}

/// Runs the manufactured problem on graded-random meshes over the `N` list
/// and reports max-norm errors `e(N) = max_n |u(t_n) − u^n|_∞` with
/// empirical orders `log(e/e') / log(τ/τ')`.
pub fn run_converge(params: &ConvergeParams, out: Option<&Path>) -> Result<Vec<ConvergeRow>> {
    let grid = GridSpec::new(params.m1, 1.0)?;
    let case = ManufacturedCase::new(params.alpha, params.sigma, grid)?;
    let config = ModelConfig::new(params.alpha, case.eps_int(), grid)?;

    let mut rows: Vec<ConvergeRow> = Vec::new();
    for &n in &params.n_list {
        let mesh = mesh::build_graded_random(params.gamma, 1.0, n, params.seed ^ n as u64)?;
        let mut solver = if params.direct {
            TfacSolver::direct(config, GridField::zeros(grid))?
        } else {
            let soe =
                build_soe_for_mesh(params.alpha, params.eps_soe, mesh.min_step(), 1.0)?;
            TfacSolver::fast(config, GridField::zeros(grid), soe)?
        }
        .with_forcing(Box::new(case.forcing()))
        .with_energy_tracking(false);

        let mut err = 0.0f64;
        for k in 1..=mesh.num_steps() {
            solver.step_to(mesh.time(k))?;
            let exact = case.exact(mesh.time(k));
            let e = solver
                .u()
                .values()
                .iter()
                .zip(exact.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            err = err.max(e);
        }

        let order = rows.last().map(|prev: &ConvergeRow| {
            (prev.error / err).ln() / (prev.tau_max / mesh.max_step()).ln()
        });
        rows.push(ConvergeRow {
            n,
            tau_max: mesh.max_step(),
            error: err,
            order,
        });

        if let Some(dir) = out {
            let mut w = create(dir, &format!("records_n{n}.csv"))?;
            solver.write_records_csv(&mut w)?;
            let mut w = create(dir, &format!("mesh_n{n}.csv"))?;
            mesh.write_csv(&mut w)?;
        }
    }

    if let Some(dir) = out {
        let mut w = create(dir, "errors.csv")?;
        writeln!(w, "N,tau_max,error,order")?;
        for r in &rows {
            match r.order {
                Some(o) => writeln!(w, "{},{:.17e},{:.17e},{:.4}", r.n, r.tau_max, r.error, o)?,
                None => writeln!(w, "{},{:.17e},{:.17e},", r.n, r.tau_max, r.error)?,
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Maximum-bound sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MaxBoundParams {
    pub alpha: f64,
    pub tau_list: Vec<f64>,
    pub t_end: f64,
    pub m1: usize,
    pub domain: f64,
    pub eps_int: f64,
    pub seed: u64,
    /// Amplitude of the uniform random initial data.
    pub amp: f64,
    pub eps_soe: f64,
}

impl MaxBoundParams {
    pub fn desk(alpha: f64, seed: u64) -> Self {
        MaxBoundParams {
            alpha,
            tau_list: vec![0.1, 0.8, 1.0],
            t_end: 40.0,
            m1: DESK_M1,
            domain: COARSEN_DOMAIN,
            eps_int: COARSEN_EPS_INT,
            seed,
            amp: COARSEN_AMP,
            eps_soe: DEFAULT_EPS_SOE,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaxBoundRun {
    pub tau: f64,
    pub steps: usize,
    /// Step-restriction bound for this uniform mesh (`r_n = 1`).
    pub bound: f64,
    pub restriction_ok: bool,
    pub max_norm_overall: f64,
    /// Whether the max norm ever exceeded `1 + 1e−10`.
    pub exceeded: bool,
}

/// Runs the unforced model from small random data on uniform meshes of the
/// given step sizes and reports the max-norm history.
pub fn run_maxbound(params: &MaxBoundParams, out: Option<&Path>) -> Result<Vec<MaxBoundRun>> {
    let grid = GridSpec::new(params.m1, params.domain)?;
    let config = ModelConfig::new(params.alpha, params.eps_int, grid)?;
    let u0 = random_initial(grid, params.amp, params.seed);

    let mut runs = Vec::new();
    for &tau in &params.tau_list {
        let n = (params.t_end / tau).round().max(1.0) as usize;
        let mesh = TimeMesh::uniform(params.t_end, n)?;
        let soe =
            build_soe_for_mesh(params.alpha, params.eps_soe, mesh.min_step(), params.t_end)?;
        let mut solver = TfacSolver::fast(config, u0.clone(), soe)?;
        solver.run(&mesh)?;

        let max_norm_overall = solver
            .records()
            .iter()
            .map(|r| r.max_norm)
            .fold(0.0, f64::max);
        let bound = step_restriction_bound(params.alpha, &grid, params.eps_int, 1.0);
        runs.push(MaxBoundRun {
            tau: mesh.max_step(),
            steps: n,
            bound,
            restriction_ok: mesh.max_step() <= bound * (1.0 + 1e-12),
            max_norm_overall,
            exceeded: max_norm_overall > 1.0 + 1e-10,
        });

        if let Some(dir) = out {
            let mut w = create(dir, &format!("records_tau{tau}.csv"))?;
            solver.write_records_csv(&mut w)?;
        }
    }

    if let Some(dir) = out {
        let mut w = create(dir, "maxbound.csv")?;
        writeln!(w, "tau,steps,bound,restriction_ok,max_norm,exceeded")?;
        for r in &runs {
            writeln!(
                w,
                "{:.17e},{},{:.17e},{},{:.17e},{}",
                r.tau, r.steps, r.bound, r.restriction_ok, r.max_norm_overall, r.exceeded
            )?;
        }
    }
    Ok(runs)
}

// ---------------------------------------------------------------------------
// Initial-singularity study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SingularityParams {
    pub alpha: f64,
    pub gamma: f64,
    pub n_steps: usize,
    pub m1: usize,
    pub seed: u64,
    pub eps_soe: f64,
}

impl SingularityParams {
    pub fn desk(alpha: f64, gamma: f64, seed: u64) -> Self {
        SingularityParams {
            alpha,
            gamma,
            n_steps: 200,
            m1: DESK_M1,
            seed,
            eps_soe: DEFAULT_EPS_SOE,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SingularityRow {
    pub t_mid: f64,
    /// `|∂_τ u^{n−1/2}|_∞`.
    pub ddt_max: f64,
    pub probes: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct SingularityResult {
    /// Least-squares slope of `log |∂_τ u|` against `log t` over the graded
    /// window; `α − 1` resolves the initial singularity.
    pub slope: f64,
    pub rows: Vec<SingularityRow>,
}

/// Runs the unforced model on the graded mesh `t_k = T (k/N)^γ` with
/// `T = 1/γ` and fits the log-log decay rate of the discrete time
/// derivative near `t = 0`.
pub fn run_singularity(
    params: &SingularityParams,
    out: Option<&Path>,
) -> Result<SingularityResult> {
    let horizon = 1.0 / params.gamma;
    let mesh = mesh::build_graded(horizon, params.n_steps, params.gamma)?;
    let grid = GridSpec::new(params.m1, COARSEN_DOMAIN)?;
    let config = ModelConfig::new(params.alpha, COARSEN_EPS_INT, grid)?;
    let u0 = random_initial(grid, COARSEN_AMP, params.seed);

    let soe = build_soe_for_mesh(params.alpha, params.eps_soe, mesh.min_step(), horizon)?;
    let mut solver = TfacSolver::fast(config, u0, soe)?.with_energy_tracking(false);

    let m = params.m1;
    let probe_idx = [
        (m / 8, m / 8),
        (m / 2, m / 4),
        (3 * m / 4, 5 * m / 8),
    ];
    let mut rows = Vec::with_capacity(params.n_steps);
    let mut prev = solver.u().clone();
    for k in 1..=mesh.num_steps() {
        solver.step_to(mesh.time(k))?;
        let tau = mesh.step(k);
        let mut ddt_max = 0.0f64;
        for (a, b) in solver.u().values().iter().zip(prev.values()) {
            ddt_max = ddt_max.max(((a - b) / tau).abs());
        }
        let probes = probe_idx
            .map(|(i, j)| ((solver.u().get(i, j) - prev.get(i, j)) / tau).abs());
        rows.push(SingularityRow {
            t_mid: 0.5 * (mesh.time(k) + mesh.time(k - 1)),
            ddt_max,
            probes,
        });
        prev = solver.u().clone();
    }

    // Least squares on the log-log series, graded window only (the whole
    // mesh here) and nonzero derivatives.
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.ddt_max > 0.0 && r.t_mid <= horizon)
        .map(|r| (r.t_mid.ln(), r.ddt_max.ln()))
        .collect();
    let slope = least_squares_slope(&pts);

    if let Some(dir) = out {
        let mut w = create(dir, "singularity.csv")?;
        writeln!(w, "t_mid,ddt_max,probe1,probe2,probe3")?;
        for r in &rows {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.t_mid, r.ddt_max, r.probes[0], r.probes[1], r.probes[2]
            )?;
        }
        let mut w = create(dir, "records.csv")?;
        solver.write_records_csv(&mut w)?;
        let mut w = create(dir, "mesh.csv")?;
        mesh.write_csv(&mut w)?;
    }
    Ok(SingularityResult { slope, rows })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

// ---------------------------------------------------------------------------
// Coarsening dynamics / adaptive stepping
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum CoarsenMesh {
    /// Graded cell followed by uniform steps of the given size.
    GradedUniform { tau: f64 },
    /// Graded cell followed by feed-forward adaptive steps.
    GradedAdaptive { controller: AdaptiveController },
}

#[derive(Debug, Clone)]
pub struct CoarsenParams {
    pub alpha: f64,
    pub mesh: CoarsenMesh,
    pub t_end: f64,
    pub m1: usize,
    pub domain: f64,
    pub eps_int: f64,
    pub seed: u64,
    pub amp: f64,
    pub snapshot_times: Vec<f64>,
    pub track_energy: bool,
    pub eps_soe: f64,
}

impl CoarsenParams {
    pub fn desk(alpha: f64, mesh: CoarsenMesh, t_end: f64, seed: u64) -> Self {
        CoarsenParams {
            alpha,
            mesh,
            t_end,
            m1: DESK_M1,
            domain: COARSEN_DOMAIN,
            eps_int: COARSEN_EPS_INT,
            seed,
            amp: COARSEN_AMP,
            snapshot_times: Vec::new(),
            track_energy: true,
            eps_soe: DEFAULT_EPS_SOE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoarsenResult {
    pub steps: usize,
    pub final_energy: f64,
    pub final_energy_variational: f64,
    pub max_norm_overall: f64,
    /// Per-step dissipation flags all pass (None when energy is untracked).
    pub dissipation_all_ok: Option<bool>,
    pub max_newton_iters: usize,
}

/// Long-time unforced run from small random data on the graded-uniform or
/// graded-adaptive mesh, with optional field snapshots.
pub fn run_coarsen(params: &CoarsenParams, out: Option<&Path>) -> Result<CoarsenResult> {
    let grid = GridSpec::new(params.m1, params.domain)?;
    let config = ModelConfig::new(params.alpha, params.eps_int, grid)?;
    let u0 = random_initial(grid, params.amp, params.seed);

    let (t0, n0, gamma) = COARSEN_GRADED;
    if params.t_end <= t0 {
        return Err(Error::invalid("horizon must exceed the graded cell"));
    }
    let graded = mesh::build_graded(t0, n0, gamma)?;
    let tail_min_step = match &params.mesh {
        CoarsenMesh::GradedUniform { tau } => *tau,
        CoarsenMesh::GradedAdaptive { controller } => controller.tau_min,
    };
    let min_step = graded.min_step().min(tail_min_step);
    let soe = build_soe_for_mesh(params.alpha, params.eps_soe, min_step, params.t_end)?;
    let mut solver = TfacSolver::fast(config, u0, soe)?
        .with_energy_tracking(params.track_energy);

    let mut snaps: Vec<f64> = params.snapshot_times.clone();
    snaps.sort_by(f64::total_cmp);
    snaps.retain(|&t| t > 0.0 && t <= params.t_end);
    let mut snap_iter = snaps.into_iter().peekable();
    let mut emit_snapshots = |solver: &TfacSolver, out: Option<&Path>| -> Result<()> {
        while let Some(&t_snap) = snap_iter.peek() {
            if solver.time() + 1e-12 < t_snap {
                break;
            }
            snap_iter.next();
            if let Some(dir) = out {
                let mut w = create(dir, &format!("snapshot_t{t_snap}.bin"))?;
                solver.u().write_binary(&mut w)?;
                let mut w = create(dir, &format!("snapshot_t{t_snap}.csv"))?;
                solver.u().write_csv(&mut w)?;
            }
        }
        Ok(())
    };

    for k in 1..=graded.num_steps() {
        solver.step_to(graded.time(k))?;
        emit_snapshots(&solver, out)?;
    }
    match &params.mesh {
        CoarsenMesh::GradedUniform { tau } => {
            let m = ((params.t_end - t0) / tau).round().max(1.0) as usize;
            for i in 1..=m {
                let target = if i == m {
                    params.t_end
                } else {
                    t0 + i as f64 * tau
                };
                solver.step_to(target)?;
                emit_snapshots(&solver, out)?;
            }
        }
        CoarsenMesh::GradedAdaptive { controller } => {
            if params.snapshot_times.is_empty() {
                solver.run_adaptive(controller, params.t_end)?;
            } else {
                // Step one at a time so snapshots land between steps.
                while solver.time() < params.t_end - 1e-12 {
                    let t_stop = snap_iter
                        .peek()
                        .copied()
                        .unwrap_or(params.t_end)
                        .min(params.t_end);
                    solver.run_adaptive(controller, t_stop)?;
                    emit_snapshots(&solver, out)?;
                }
            }
            emit_snapshots(&solver, out)?;
        }
    }

    let last = *solver.records().last().unwrap();
    let result = CoarsenResult {
        steps: solver.step_count(),
        final_energy: last.energy,
        final_energy_variational: last.energy_variational,
        max_norm_overall: solver
            .records()
            .iter()
            .map(|r| r.max_norm)
            .fold(0.0, f64::max),
        dissipation_all_ok: solver
            .check_dissipation()
            .map(|flags| flags.iter().all(|&f| f)),
        max_newton_iters: solver
            .records()
            .iter()
            .map(|r| r.newton_iters)
            .max()
            .unwrap_or(0),
    };

    if let Some(dir) = out {
        let mut w = create(dir, "records.csv")?;
        solver.write_records_csv(&mut w)?;
        let mut w = create(dir, "mesh.csv")?;
        writeln!(w, "index,t")?;
        for (k, t) in solver.times().iter().enumerate() {
            writeln!(w, "{},{:.17e}", k, t)?;
        }
    }
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct AdaptiveComparisonRow {
    pub label: String,
    pub kappa: Option<f64>,
    pub steps: usize,
    pub final_energy: f64,
    pub final_energy_variational: f64,
}

/// Compares the graded-uniform strategy (τ = 0.01) against graded-adaptive
/// runs over a list of adaptivity levels κ (τ within `[1e−3, 1e−1]`).
pub fn run_adaptive_comparison(
    alpha: f64,
    kappas: &[f64],
    t_end: f64,
    m1: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<Vec<AdaptiveComparisonRow>> {
    let mut rows = Vec::new();
    let base = CoarsenParams {
        m1,
        ..CoarsenParams::desk(alpha, CoarsenMesh::GradedUniform { tau: 0.01 }, t_end, seed)
    };

    let uniform = run_coarsen(&base, None)?;
    rows.push(AdaptiveComparisonRow {
        label: "graded-uniform".into(),
        kappa: None,
        steps: uniform.steps,
        final_energy: uniform.final_energy,
        final_energy_variational: uniform.final_energy_variational,
    });

    for &kappa in kappas {
        let controller = AdaptiveController::new(kappa, 1e-3, 1e-1)?;
        let params = CoarsenParams {
            mesh: CoarsenMesh::GradedAdaptive { controller },
            ..base.clone()
        };
        let sub = if let Some(dir) = out {
            Some(dir.join(format!("kappa{kappa}")))
        } else {
            None
        };
        let r = run_coarsen(&params, sub.as_deref())?;
        rows.push(AdaptiveComparisonRow {
            label: format!("graded-adaptive kappa={kappa}"),
            kappa: Some(kappa),
            steps: r.steps,
            final_energy: r.final_energy,
            final_energy_variational: r.final_energy_variational,
        });
    }

    if let Some(dir) = out {
        let mut w = create(dir, "adaptive_summary.csv")?;
        writeln!(w, "label,kappa,steps,E_final,E_alpha_final")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{:.17e},{:.17e}",
                r.label,
                r.kappa.map_or(String::new(), |k| format!("{k}")),
                r.steps,
                r.final_energy,
                r.final_energy_variational
            )?;
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Verification dumps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct KernelVerifyParams {
    pub seed: u64,
    pub n_meshes: usize,
    pub n_steps: usize,
    pub alphas: Vec<f64>,
}

impl Default for KernelVerifyParams {
    fn default() -> Self {
        KernelVerifyParams {
            seed: 1,
            n_meshes: 20,
            n_steps: 50,
            alphas: vec![0.3, 0.5, 0.7, 0.9],
        }
    }
}

#[derive(Debug, Clone)]
pub struct KernelVerifySummary {
    pub max_identity_residual: f64,
    pub min_pd_slack: f64,
    pub tolerance: f64,
    pub all_ok: bool,
}

/// Random nonuniform mesh with steps uniform in `[0.2, 1.2)`.
pub fn random_mesh(n: usize, seed: u64) -> TimeMesh {
    let mut rng = SplitMix64::new(seed);
    let mut points = vec![0.0];
    let mut t = 0.0;
    for _ in 0..n {
        t += 0.2 + rng.next_f64();
        points.push(t);
    }
    TimeMesh::from_points(points).expect("increasing by construction")
}

/// Verifies every kernel identity on a batch of random meshes and dumps the
/// rows of the first table as `kernels.csv`.
pub fn run_verify_kernels(
    params: &KernelVerifyParams,
    out: Option<&Path>,
) -> Result<KernelVerifySummary> {
    let tol = 1e-12 * params.n_steps as f64;
    let mut summary = KernelVerifySummary {
        max_identity_residual: 0.0,
        min_pd_slack: f64::INFINITY,
        tolerance: tol,
        all_ok: true,
    };
    let mut rng = SplitMix64::new(params.seed);
    for mesh_idx in 0..params.n_meshes {
        let mesh = Arc::new(random_mesh(params.n_steps, params.seed ^ (mesh_idx as u64) << 16));
        for &alpha in &params.alphas {
            let table = KernelTable::build(mesh.clone(), alpha)?;
            let v = table.verify();
            summary.max_identity_residual = summary.max_identity_residual.max(v.max_residual());
            summary.all_ok &= v.all_ok(tol);
            let w: Vec<f64> = (0..params.n_steps)
                .map(|_| rng.next_symmetric(2.0))
                .collect();
            let (summed, per_step) = table.positive_definiteness_slack(&w);
            summary.min_pd_slack = summary.min_pd_slack.min(summed).min(per_step);
            summary.all_ok &= summed >= -tol && per_step >= -tol;

            if mesh_idx == 0 && alpha == params.alphas[0] {
                if let Some(dir) = out {
                    write_kernel_csv(&table, dir)?;
                }
            }
        }
    }
    Ok(summary)
}

fn write_kernel_csv(table: &KernelTable, dir: &Path) -> Result<()> {
    let n = table.num_steps();
    let thetas = table.doc_rows(n);
    let ps = table.dcc_rows(n);
    let mut w = create(dir, "kernels.csv")?;
    writeln!(w, "n,k,a,q,theta,p,residual")?;
    for m in 1..=n {
        for k in 1..=m {
            let target = if k == m { 1.0 } else { 0.0 };
            let orth: f64 = (k..=m)
                .map(|j| thetas[m - 1][j - 1] * table.a(j)[k - 1])
                .sum();
            writeln!(
                w,
                "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.3e}",
                m,
                k,
                table.a(m)[k - 1],
                table.q(m)[k - 1],
                thetas[m - 1][k - 1],
                ps[m - 1][k - 1],
                (orth - target).abs()
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SoeVerifySummary {
    pub n_modes: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

/// Builds a certified kernel compression and dumps the sampled error grid.
pub fn run_verify_soe(
    alpha: f64,
    eps: f64,
    dt_cut: f64,
    horizon: f64,
    out: Option<&Path>,
) -> Result<SoeVerifySummary> {
    let soe = build_soe(alpha, eps, dt_cut, horizon)?;
    let grid = certification_grid(dt_cut, horizon, 10_000);
    let mut max_error = 0.0f64;
    let mut writer = match out {
        Some(dir) => Some(create(dir, "soe.csv")?),
        None => None,
    };
    if let Some(w) = writer.as_mut() {
        writeln!(w, "t,omega,soe,error")?;
    }
    for &t in &grid {
        let om = kernels::omega(alpha, t)?;
        let sv = soe.eval(t);
        let err = soe.certification_error(t);
        max_error = max_error.max(err);
        if let Some(w) = writer.as_mut() {
            writeln!(w, "{:.17e},{:.17e},{:.17e},{:.3e}", t, om, sv, err)?;
        }
    }
    Ok(SoeVerifySummary {
        n_modes: soe.num_modes(),
        max_error,
        tolerance: eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converge_small_scale_orders() {
        // Tiny grid and short N list: the observed order should be in the
        // right neighbourhood of min{1+alpha, gamma*sigma} already.
        let params = ConvergeParams {
            alpha: 0.6,
            sigma: 0.4,
            gamma: 4.0,
            n_list: vec![50, 100, 200],
            m1: 32,
            seed: 7,
            direct: false,
            eps_soe: 1e-12,
        };
        let rows = run_converge(&params, None).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].error > rows[2].error);
        let order = rows[2].order.unwrap();
        assert!(order > 1.0 && order < 2.2, "order {order}");
    }

    #[test]
    fn converge_direct_and_fast_agree() {
        let mut params = ConvergeParams {
            alpha: 0.6,
            sigma: 0.4,
            gamma: 2.0,
            n_list: vec![60],
            m1: 16,
            seed: 3,
            direct: false,
            eps_soe: 1e-12,
        };
        let fast = run_converge(&params, None).unwrap();
        params.direct = true;
        let direct = run_converge(&params, None).unwrap();
        let rel = (fast[0].error - direct[0].error).abs() / direct[0].error;
        assert!(rel < 1e-6, "rel deviation {rel}");
    }

    #[test]
    fn maxbound_zero_initial_stays_zero() {
        let params = MaxBoundParams {
            alpha: 0.7,
            tau_list: vec![0.5],
            t_end: 5.0,
            m1: 16,
            domain: COARSEN_DOMAIN,
            eps_int: COARSEN_EPS_INT,
            seed: 1,
            amp: 0.0,
            eps_soe: 1e-10,
        };
        let runs = run_maxbound(&params, None).unwrap();
        assert_eq!(runs[0].max_norm_overall, 0.0);
        assert!(!runs[0].exceeded);
    }

    #[test]
    fn singularity_mesh_is_cubically_graded() {
        // gamma = 3: the midpoint index sits at T0/8.
        let mesh = mesh::build_graded(1.0 / 3.0, 200, 3.0).unwrap();
        assert!((mesh.time(100) - (1.0 / 3.0) / 8.0).abs() < 1e-15);
    }

    #[test]
    fn singularity_slope_small_scale() {
        let params = SingularityParams {
            alpha: 0.7,
            gamma: 3.0,
            n_steps: 80,
            m1: 32,
            seed: 5,
            eps_soe: 1e-12,
        };
        let result = run_singularity(&params, None).unwrap();
        assert!(
            (result.slope - (0.7 - 1.0)).abs() <= 0.15,
            "slope {} vs -0.3",
            result.slope
        );
    }

    #[test]
    fn coarsen_short_run_dissipates() {
        let params = CoarsenParams {
            m1: 24,
            t_end: 1.0,
            ..CoarsenParams::desk(
                0.7,
                CoarsenMesh::GradedUniform { tau: 0.05 },
                1.0,
                11,
            )
        };
        let r = run_coarsen(&params, None).unwrap();
        assert_eq!(r.dissipation_all_ok, Some(true));
        assert!(r.max_norm_overall <= 1.0 + 1e-10);
    }

    #[test]
    fn adaptive_takes_fewer_steps_than_uniform() {
        let rows = run_adaptive_comparison(0.7, &[1e3], 2.0, 16, 9, None).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].steps < rows[0].steps);
    }

    #[test]
    fn kernel_verification_summary() {
        let params = KernelVerifyParams {
            seed: 2,
            n_meshes: 2,
            n_steps: 30,
            alphas: vec![0.5],
        };
        let s = run_verify_kernels(&params, None).unwrap();
        assert!(s.all_ok, "{s:?}");
        assert!(s.max_identity_residual <= s.tolerance);
    }

    #[test]
    fn soe_verification_summary() {
        let s = run_verify_soe(0.5, 1e-10, 1e-8, 1.0, None).unwrap();
        assert!(s.max_error <= 1e-10);
        assert!(s.n_modes > 50);
    }
}
