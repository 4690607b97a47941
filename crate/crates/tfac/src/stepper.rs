//! Variable-step Crank-Nicolson integrator for the time-fractional
//! Allen-Cahn equation in its Riemann-Liouville form.
//!
//! Each step solves the nonlinear system
//!
//! ```text
//! u^n + a₀ [H(u^n, u^{n−1}) − (ε²/2) D_h (u^n + u^{n−1})]
//!     = u^{n−1} + Σ_{k<n} a^{(n)}_{n−k} v^{k−1/2} + τ_n ḡ^{n−1/2}
//! ```
//!
//! for `u^n` (Newton with a matrix-free Jacobi-preconditioned conjugate
//! gradient inner solve; the Jacobian `I + a₀[diag(∂H) − (ε²/2)D_h]` is
//! symmetric), then records the energy variation
//! `v^{n−1/2} = ε² D_h u^{n−1/2} − H(u^n, u^{n−1})` into the history.
//!
//! The history sum is kept either directly (O(N) memory, O(N²) work) or
//! through sum-of-exponentials accumulators (`Fast`), which replace
//! `Σ_{k<n} a^{(n)}_{n−k} v^{k−1/2}` by `−Σ_ℓ ϖ^ℓ (1−e^{−θ^ℓ τ_n}) H^ℓ(t_{n−1})`
//! at O(N_q) memory and O(N·N_q) work.
//!
//! Monitors per step: the free energy `E`, the variational energy
//! `E_α = E + ½ h² ΣΣ q^{(n)}_{n−k} (v^{k−1/2})²`, the max norm, the Newton
//! iteration count and the maximum-bound step-restriction flag.

use crate::bulk;
use crate::error::{Error, Result};
use crate::grid::{neumaier_sum, GridField, GridSpec};
use crate::kernels;
use crate::mesh::{AdaptiveController, TimeMesh};
use crate::soe::SoeApprox;

/// Model parameters of a run.
#[derive(Debug, Clone, Copy)]
pub struct ModelConfig {
    pub alpha: f64,
    /// Interface width ε (the diffusion coefficient is ε²).
    pub eps_int: f64,
    pub grid: GridSpec,
}

impl ModelConfig {
    pub fn new(alpha: f64, eps_int: f64, grid: GridSpec) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!(
                "fractional order must lie in (0,1), got {alpha}"
            )));
        }
        if !(eps_int > 0.0) {
            return Err(Error::invalid("interface width must be positive"));
        }
        Ok(ModelConfig {
            alpha,
            eps_int,
            grid,
        })
    }

    /// Discrete free energy `E[u] = h² Σ F(u) − (ε²/2) ⟨u, D_h u⟩_h`.
    pub fn energy(&self, u: &GridField) -> f64 {
        let h2 = self.grid.spacing() * self.grid.spacing();
        let bulk_term = h2 * neumaier_sum(u.values().iter().map(|&x| bulk::potential(x)));
        let grad_term = u.inner_h(&u.laplacian()).expect("matching spec");
        bulk_term - 0.5 * self.eps_int * self.eps_int * grad_term
    }
}

/// Exterior forcing sampled as exact cell averages over each step.
pub trait Forcing {
    fn cell_average(&self, t_prev: f64, t_next: f64, grid: &GridSpec) -> GridField;
}

/// Newton/linear solver controls.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Nonlinear residual tolerance in the max norm.
    pub tol_inf: f64,
    pub max_iters: usize,
    /// Relative l2 residual target of the inner conjugate-gradient solve.
    pub linear_tol: f64,
    pub linear_max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol_inf: 1e-12,
            max_iters: 50,
            linear_tol: 1e-14,
            linear_max_iters: 500,
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct SolveRecord {
    pub n: usize,
    pub t: f64,
    pub tau: f64,
    /// Free energy `E[u^n]`; NaN when energy tracking is off.
    pub energy: f64,
    /// Variational energy `E_α[u^n]`; NaN when energy tracking is off.
    pub energy_variational: f64,
    pub max_norm: f64,
    pub newton_iters: usize,
    /// Whether `τ_n` obeys the maximum-bound step restriction.
    pub restriction_ok: bool,
}

/// Largest step for which the nonlinear system is provably uniquely
/// solvable: `(2 Γ(1+α))^{1/α}`.
pub fn solvable_step_limit(alpha: f64) -> f64 {
    (2.0 * kernels::gamma_fn(1.0 + alpha)).powf(1.0 / alpha)
}

/// Maximum-bound step restriction
/// `τ_n ≤ [min{1/2, h²/(2ε²)} · α Γ(1+α) / (1+r_n)^{1−α}]^{1/α}`
/// for the step ratio `r_n` (`r_1 := 1`).
pub fn step_restriction_bound(alpha: f64, grid: &GridSpec, eps_int: f64, r_n: f64) -> f64 {
    let h = grid.spacing();
    let cap = (h * h / (2.0 * eps_int * eps_int)).min(0.5);
    let inner = cap * alpha * kernels::gamma_fn(1.0 + alpha) / (1.0 + r_n).powf(1.0 - alpha);
    inner.powf(1.0 / alpha)
}

enum HistoryMode {
    /// Full v-history; exact O(N²) kernel sums.
    Direct { v_history: Vec<GridField> },
    /// Per-mode exponential accumulators, current through `t_{n−1}`.
    Fast {
        soe: SoeApprox,
        accumulators: Vec<GridField>,
    },
}

/// The time integrator. Construct with [`TfacSolver::direct`] or
/// [`TfacSolver::fast`], then drive it with [`TfacSolver::run`] over a fixed
/// mesh, [`TfacSolver::run_adaptive`], or step by step.
pub struct TfacSolver {
    config: ModelConfig,
    newton: NewtonOptions,
    mode: HistoryMode,
    times: Vec<f64>,
    u: GridField,
    /// `S_k = h² Σ_ij (v^{k−1/2}_ij)²` per step; powers the variational
    /// energy and the dissipation check.
    s_history: Vec<f64>,
    records: Vec<SolveRecord>,
    forcing: Option<Box<dyn Forcing>>,
    track_energy: bool,
    keep_u_history: bool,
    u_history: Vec<GridField>,
    /// Set when a step exceeded the provable-solvability step limit.
    solvability_warnings: Vec<usize>,
}

impl TfacSolver {
    /// Direct-history solver.
    pub fn direct(config: ModelConfig, u0: GridField) -> Result<Self> {
        Self::new(config, u0, None)
    }

    /// Fast solver backed by a certified sum-of-exponentials approximation.
    /// Every step must satisfy `τ ≥ soe.cutoff()`.
    pub fn fast(config: ModelConfig, u0: GridField, soe: SoeApprox) -> Result<Self> {
        if soe.alpha() != config.alpha {
            return Err(Error::Config(format!(
                "SOE order {} does not match the model order {}",
                soe.alpha(),
                config.alpha
            )));
        }
        Self::new(config, u0, Some(soe))
    }

    fn new(config: ModelConfig, u0: GridField, soe: Option<SoeApprox>) -> Result<Self> {
        if *u0.spec() != config.grid {
            return Err(Error::GridMismatch(
                "initial data does not match the configured grid".into(),
            ));
        }
        let mode = match soe {
            None => HistoryMode::Direct {
                v_history: Vec::new(),
            },
            Some(soe) => {
                let accumulators = (0..soe.num_modes())
                    .map(|_| GridField::zeros(config.grid))
                    .collect();
                HistoryMode::Fast { soe, accumulators }
            }
        };
        let mut solver = TfacSolver {
            config,
            newton: NewtonOptions::default(),
            mode,
            times: vec![0.0],
            u: u0,
            s_history: Vec::new(),
            records: Vec::new(),
            forcing: None,
            track_energy: true,
            keep_u_history: false,
            u_history: Vec::new(),
            solvability_warnings: Vec::new(),
        };
        solver.push_initial_record();
        Ok(solver)
    }

    pub fn with_newton_options(mut self, newton: NewtonOptions) -> Self {
        self.newton = newton;
        self
    }

    pub fn with_forcing(mut self, forcing: Box<dyn Forcing>) -> Self {
        self.forcing = Some(forcing);
        self
    }

    /// Disables the energy monitors (records carry NaN energies).
    pub fn with_energy_tracking(mut self, on: bool) -> Self {
        self.track_energy = on;
        self.records[0] = self.initial_record();
        self
    }

    /// Retains every solution snapshot, enabling the discrete-Caputo residual
    /// diagnostic.
    pub fn with_solution_history(mut self, on: bool) -> Self {
        self.keep_u_history = on;
        if on && self.u_history.is_empty() {
            self.u_history.push(self.u.clone());
        }
        self
    }

    fn initial_record(&self) -> SolveRecord {
        let (e, ea) = if self.track_energy {
            let e = self.config.energy(&self.u);
            (e, e)
        } else {
            (f64::NAN, f64::NAN)
        };
        SolveRecord {
            n: 0,
            t: 0.0,
            tau: 0.0,
            energy: e,
            energy_variational: ea,
            max_norm: self.u.norm_inf(),
            newton_iters: 0,
            restriction_ok: true,
        }
    }

    fn push_initial_record(&mut self) {
        let r = self.initial_record();
        self.records.push(r);
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn u(&self) -> &GridField {
        &self.u
    }

    pub fn time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn step_count(&self) -> usize {
        self.times.len() - 1
    }

    pub fn records(&self) -> &[SolveRecord] {
        &self.records
    }

    /// Steps that exceeded the provable-solvability limit
    /// `(2Γ(1+α))^{1/α}`; the solve is attempted regardless.
    pub fn solvability_warnings(&self) -> &[usize] {
        &self.solvability_warnings
    }

    /// Advances one step of size `tau`.
    pub fn step(&mut self, tau: f64) -> Result<&SolveRecord> {
        self.step_to(self.time() + tau)
    }

    /// Advances to the absolute time `t_next`.
    pub fn step_to(&mut self, t_next: f64) -> Result<&SolveRecord> {
        let t_prev = self.time();
        let tau = t_next - t_prev;
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("non-positive step {tau}")));
        }
        if let HistoryMode::Fast { ref soe, .. } = self.mode {
            if tau < soe.cutoff() {
                return Err(Error::Config(format!(
                    "step {tau:.3e} below the SOE cutoff {:.3e}",
                    soe.cutoff()
                )));
            }
            if t_next > soe.horizon() * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "time {t_next} beyond the SOE certification horizon {}",
                    soe.horizon()
                )));
            }
        }
        let n = self.times.len(); // index of the step being taken
        let alpha = self.config.alpha;
        let a0 = kernels::a_zero(alpha, tau);
        if tau >= solvable_step_limit(alpha) {
            self.solvability_warnings.push(n);
        }

        // Right-hand side: u^{n-1} + history + tau * forcing average.
        self.times.push(t_next);
        let mut rhs = self.u.clone();
        match &self.mode {
            HistoryMode::Direct { v_history } => {
                let a_row = kernels::a_row(&self.times, alpha, n);
                for (k, v) in v_history.iter().enumerate() {
                    rhs.add_scaled(v, a_row[k]);
                }
            }
            HistoryMode::Fast { soe, accumulators } => {
                for ((&th, &w), h) in soe
                    .nodes()
                    .iter()
                    .zip(soe.weights())
                    .zip(accumulators.iter())
                {
                    let weight = -w * (-(-th * tau).exp_m1());
                    rhs.add_scaled(h, weight);
                }
            }
        }
        if let Some(f) = &self.forcing {
            let g = f.cell_average(t_prev, t_next, &self.config.grid);
            rhs.add_scaled(&g, tau);
        }

        let (u_next, newton_iters) = match self.solve_step(a0, &rhs) {
            Ok(v) => v,
            Err(e) => {
                self.times.pop();
                return Err(e);
            }
        };

        // Energy variation at the midpoint: v = eps^2 D_h u^{n-1/2} - H.
        let mut mid = u_next.clone();
        mid.add_scaled(&self.u, 1.0);
        mid.scale(0.5);
        let mut v_half = mid.laplacian();
        v_half.scale(self.config.eps_int * self.config.eps_int);
        for (v, (&un, &up)) in v_half
            .values_mut()
            .iter_mut()
            .zip(u_next.values().iter().zip(self.u.values()))
        {
            *v -= bulk::two_point_force(un, up);
        }

        let s_n = v_half.inner_h(&v_half).expect("same spec");
        self.s_history.push(s_n);

        match &mut self.mode {
            HistoryMode::Direct { v_history } => v_history.push(v_half),
            HistoryMode::Fast { soe, accumulators } => {
                for (h, &th) in accumulators.iter_mut().zip(soe.nodes()) {
                    let decay = (-th * tau).exp();
                    let cell = -(-th * tau).exp_m1() / th;
                    for (hv, &vv) in h.values_mut().iter_mut().zip(v_half.values()) {
                        *hv = vv.mul_add(cell, decay * *hv);
                    }
                }
            }
        }

        self.u = u_next;
        if self.keep_u_history {
            self.u_history.push(self.u.clone());
        }

        let (energy, energy_variational) = if self.track_energy {
            let e = self.config.energy(&self.u);
            let q_row = kernels::q_row(&self.times, alpha, n);
            let hist = neumaier_sum(
                q_row
                    .iter()
                    .zip(&self.s_history)
                    .map(|(&q, &s)| q * s),
            );
            (e, e + 0.5 * hist)
        } else {
            (f64::NAN, f64::NAN)
        };

        let r_n = if n >= 2 {
            tau / (self.times[n - 1] - self.times[n - 2])
        } else {
            1.0
        };
        let bound = step_restriction_bound(alpha, &self.config.grid, self.config.eps_int, r_n);
        let record = SolveRecord {
            n,
            t: t_next,
            tau,
            energy,
            energy_variational,
            max_norm: self.u.norm_inf(),
            newton_iters,
            restriction_ok: tau <= bound * (1.0 + 1e-12),
        };
        self.records.push(record);
        Ok(self.records.last().unwrap())
    }

    /// Newton iteration on
    /// `G(u) = u + a₀[H(u, u_prev) − (ε²/2) D_h(u + u_prev)] − rhs`.
    fn solve_step(&self, a0: f64, rhs: &GridField) -> Result<(GridField, usize)> {
        let spec = self.config.grid;
        let eps2 = self.config.eps_int * self.config.eps_int;
        let u_prev = &self.u;
        let mut u = u_prev.clone();
        let mut lap = GridField::zeros(spec);
        let mut residual = GridField::zeros(spec);

        for iter in 0..=self.newton.max_iters {
            // G(u)
            let mut sum = u.clone();
            sum.add_scaled(u_prev, 1.0);
            sum.laplacian_into(&mut lap);
            for (g, (((&uu, &up), &lp), &rv)) in residual.values_mut().iter_mut().zip(
                u.values()
                    .iter()
                    .zip(u_prev.values())
                    .zip(lap.values())
                    .zip(rhs.values()),
            ) {
                *g = uu + a0 * (bulk::two_point_force(uu, up) - 0.5 * eps2 * lp) - rv;
            }
            let res_norm = residual.norm_inf();
            if res_norm <= self.newton.tol_inf {
                return Ok((u, iter));
            }
            if iter == self.newton.max_iters {
                return Err(Error::NewtonDiverged {
                    step: self.times.len() - 1,
                    iters: iter,
                    residual: res_norm,
                });
            }

            // Jacobian diagonal part: 1 + a0 * dH; apply is matrix-free.
            let dh: Vec<f64> = u
                .values()
                .iter()
                .zip(u_prev.values())
                .map(|(&uu, &up)| bulk::two_point_force_du(uu, up))
                .collect();
            let delta = self.conjugate_gradient(a0, eps2, &dh, &residual)?;
            u.add_scaled(&delta, -1.0);
        }
        unreachable!()
    }

    /// Jacobi-preconditioned CG for `J δ = r` with
    /// `J = I + a₀ diag(dh) − (a₀ ε²/2) D_h`.
    fn conjugate_gradient(
        &self,
        a0: f64,
        eps2: f64,
        dh: &[f64],
        b: &GridField,
    ) -> Result<GridField> {
        let spec = self.config.grid;
        let h = spec.spacing();
        let half_diff = 0.5 * a0 * eps2;
        let diag_shift = 2.0 * a0 * eps2 / (h * h);

        let apply = |x: &GridField, lap: &mut GridField, out: &mut GridField| {
            x.laplacian_into(lap);
            for (o, ((&xv, &dv), &lv)) in out
                .values_mut()
                .iter_mut()
                .zip(x.values().iter().zip(dh).zip(lap.values()))
            {
                *o = xv + a0 * dv * xv - half_diff * lv;
            }
        };
        let precond = |r: &GridField, z: &mut GridField| {
            for (zv, (&rv, &dv)) in z
                .values_mut()
                .iter_mut()
                .zip(r.values().iter().zip(dh))
            {
                *zv = rv / (1.0 + a0 * dv + diag_shift);
            }
        };
        let dot = |a: &GridField, b: &GridField| -> f64 {
            a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
        };

        let mut x = GridField::zeros(spec);
        let mut r = b.clone();
        let b_norm = dot(b, b).sqrt();
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut z = GridField::zeros(spec);
        let mut lap = GridField::zeros(spec);
        let mut ap = GridField::zeros(spec);
        precond(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..self.newton.linear_max_iters {
            apply(&p, &mut lap, &mut ap);
            let denom = dot(&p, &ap);
            if denom <= 0.0 {
                // Loss of positive definiteness; return the current iterate
                // and let the Newton loop assess the residual.
                break;
            }
            let alpha_cg = rz / denom;
            x.add_scaled(&p, alpha_cg);
            r.add_scaled(&ap, -alpha_cg);
            if dot(&r, &r).sqrt() <= self.newton.linear_tol * b_norm {
                break;
            }
            precond(&r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            let mut p_next = z.clone();
            p_next.add_scaled(&p, beta);
            p = p_next;
        }
        Ok(x)
    }

    /// Runs over a fixed mesh (the solver must be at `t = 0`).
    pub fn run(&mut self, mesh: &TimeMesh) -> Result<()> {
        if self.step_count() != 0 {
            return Err(Error::Config("run() requires a fresh solver".into()));
        }
        if let HistoryMode::Fast { ref soe, .. } = self.mode {
            if mesh.min_step() < soe.cutoff() {
                return Err(Error::Config(format!(
                    "mesh min step {:.3e} below the SOE cutoff {:.3e}",
                    mesh.min_step(),
                    soe.cutoff()
                )));
            }
        }
        for k in 1..=mesh.num_steps() {
            self.step_to(mesh.time(k))?;
        }
        Ok(())
    }

    /// Continues from the current time to `t_end` with the feed-forward
    /// adaptive controller; the energy rate is the backward difference of
    /// the variational energy. Requires energy tracking.
    pub fn run_adaptive(&mut self, ctrl: &AdaptiveController, t_end: f64) -> Result<()> {
        if !self.track_energy {
            return Err(Error::Config(
                "adaptive stepping needs the energy monitor".into(),
            ));
        }
        while self.time() < t_end - 1e-12 {
            let rate = match self.records.last() {
                Some(r) if r.n >= 1 => {
                    let prev = self.records[self.records.len() - 2].energy_variational;
                    (r.energy_variational - prev) / r.tau
                }
                _ => 0.0,
            };
            let mut tau = ctrl.next_step(rate);
            if ctrl.enforce_restriction {
                // The bound depends on the ratio to the previous step; a few
                // fixed-point sweeps settle it.
                let tau_prev = self.records.last().filter(|r| r.n >= 1).map(|r| r.tau);
                for _ in 0..8 {
                    let r_n = tau_prev.map_or(1.0, |tp| tau / tp);
                    let bound = step_restriction_bound(
                        self.config.alpha,
                        &self.config.grid,
                        self.config.eps_int,
                        r_n,
                    );
                    let clipped = tau.min(bound).max(ctrl.tau_min);
                    if (clipped - tau).abs() <= 1e-14 * tau {
                        break;
                    }
                    tau = clipped;
                }
            }
            let remaining = t_end - self.time();
            if tau >= remaining || remaining - tau < ctrl.tau_min {
                self.step_to(t_end)?;
            } else {
                self.step(tau)?;
            }
        }
        Ok(())
    }

    /// Per-step check of the variational energy dissipation inequality
    ///
    /// ```text
    /// ∂_τ E_α^{n−1/2} + (1/2τ_n) ∫_{t_{n−1}}^{t_n} ω_α ds · h²Σ(v^{n−1/2})² ≤ 0
    /// ```
    ///
    /// with slack `1e−10 (1 + |E_α^{n−1}|)`. Defined for unforced runs only
    /// (returns `None` when a forcing is attached) and requires the energy
    /// monitor.
    pub fn check_dissipation(&self) -> Option<Vec<bool>> {
        self.dissipation_lhs().map(|lhs| {
            lhs.iter()
                .enumerate()
                .map(|(i, &v)| {
                    v <= 1e-10 * (1.0 + self.records[i].energy_variational.abs())
                })
                .collect()
        })
    }

    /// Left-hand sides of the dissipation inequality, one per step.
    pub fn dissipation_lhs(&self) -> Option<Vec<f64>> {
        if self.forcing.is_some() || !self.track_energy {
            return None;
        }
        let alpha = self.config.alpha;
        let mut out = Vec::with_capacity(self.step_count());
        for n in 1..=self.step_count() {
            let r = &self.records[n];
            let prev = &self.records[n - 1];
            let a_sum = kernels::omega_unchecked(1.0 + alpha, self.times[n])
                - kernels::omega_unchecked(1.0 + alpha, self.times[n - 1]);
            let lhs = (r.energy_variational - prev.energy_variational) / r.tau
                + 0.5 / r.tau * a_sum * self.s_history[n - 1];
            out.push(lhs);
        }
        Some(out)
    }

    /// Residual of the equivalent discrete-Caputo form
    /// `Σ_j θ^{(n)}_{n−j} ∇_τ u^j = v^{n−1/2}` at every step, as
    /// `(raw max-norm, scaled)` pairs with the scale `1/(1 + Σ_j θ^{(n)}_{n−j})`.
    /// Needs the direct history mode and retained solution snapshots.
    pub fn caputo_residuals(&self) -> Result<Vec<(f64, f64)>> {
        let v_history = match &self.mode {
            HistoryMode::Direct { v_history } => v_history,
            HistoryMode::Fast { .. } => {
                return Err(Error::Config(
                    "the Caputo-form residual needs the direct history mode".into(),
                ))
            }
        };
        if !self.keep_u_history {
            return Err(Error::Config(
                "the Caputo-form residual needs retained solution history".into(),
            ));
        }
        let n_steps = self.step_count();
        let a_rows = kernels::a_rows(&self.times, self.config.alpha, n_steps);
        let mut out = Vec::with_capacity(n_steps);
        let mut lhs = GridField::zeros(self.config.grid);
        for n in 1..=n_steps {
            let theta = kernels::doc_row(&a_rows[..n]);
            lhs.values_mut().fill(0.0);
            for j in 1..=n {
                let w = theta[j - 1];
                for (l, (&uj, &ujm)) in lhs.values_mut().iter_mut().zip(
                    self.u_history[j]
                        .values()
                        .iter()
                        .zip(self.u_history[j - 1].values()),
                ) {
                    *l += w * (uj - ujm);
                }
            }
            lhs.add_scaled(&v_history[n - 1], -1.0);
            let raw = lhs.norm_inf();
            let theta_sum: f64 = theta.iter().sum();
            out.push((raw, raw / (1.0 + theta_sum)));
        }
        Ok(out)
    }

    /// Writes the per-step records CSV
    /// (`n,t,tau,E,E_alpha,max_norm,newton_iters,restriction_ok`).
    pub fn write_records_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,t,tau,E,E_alpha,max_norm,newton_iters,restriction_ok")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{}",
                r.n,
                r.t,
                r.tau,
                r.energy,
                r.energy_variational,
                r.max_norm,
                r.newton_iters,
                r.restriction_ok
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_graded_uniform, TimeMesh};
    use crate::rng::SplitMix64;
    use crate::soe::build_soe;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn random_initial(spec: GridSpec, amp: f64, seed: u64) -> GridField {
        let mut rng = SplitMix64::new(seed);
        GridField::from_values(
            spec,
            (0..spec.num_points())
                .map(|_| rng.next_symmetric(amp))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn stationary_at_well_minimum() {
        let spec = GridSpec::new(16, 1.0).unwrap();
        let config = ModelConfig::new(0.6, 0.1, spec).unwrap();
        let mut solver = TfacSolver::direct(config, GridField::constant(spec, 1.0)).unwrap();
        let mesh = TimeMesh::uniform(1.0, 10).unwrap();
        solver.run(&mesh).unwrap();
        for r in solver.records() {
            assert!((r.max_norm - 1.0).abs() <= 1e-12);
            assert!(r.energy.abs() <= 1e-12);
            assert!(r.energy_variational.abs() <= 1e-12);
        }
    }

    #[test]
    fn stationary_at_origin() {
        let spec = GridSpec::new(16, 1.0).unwrap();
        let config = ModelConfig::new(0.4, 0.1, spec).unwrap();
        let mut solver = TfacSolver::direct(config, GridField::zeros(spec)).unwrap();
        let mesh = TimeMesh::uniform(1.0, 8).unwrap();
        solver.run(&mesh).unwrap();
        for r in solver.records() {
            assert!(r.max_norm <= 1e-13);
        }
        // E[0] = L^2/4 for L=1.
        assert!((solver.records()[0].energy - 0.25).abs() < 1e-12);
    }

    #[test]
    fn energy_of_random_field_nonnegative() {
        let spec = GridSpec::new(12, 1.0).unwrap();
        let config = ModelConfig::new(0.5, 0.05, spec).unwrap();
        for seed in 0..5 {
            let u = random_initial(spec, 1.0, seed);
            assert!(config.energy(&u) >= 0.0);
        }
    }

    #[test]
    fn restriction_bound_values() {
        // L = 2pi, M1 = 128, eps = 0.05: alpha = 0.7 gives ~0.137 and
        // alpha = 0.9 gives ~0.35.
        let spec = GridSpec::new(128, 2.0 * PI).unwrap();
        let b07 = step_restriction_bound(0.7, &spec, 0.05, 1.0);
        assert!((b07 - 0.14).abs() <= 0.01, "{b07}");
        let b09 = step_restriction_bound(0.9, &spec, 0.05, 1.0);
        assert!((b09 - 0.36).abs() <= 0.02, "{b09}");
    }

    #[test]
    fn restriction_bound_coarse_grid_limit() {
        // With h²/(2ε²) ≥ 1/2 the bound tends to 1/2 as alpha -> 1.
        let spec = GridSpec::new(4, 4.0).unwrap();
        let b = step_restriction_bound(0.999, &spec, 0.5, 1.0);
        assert!((b - 0.5).abs() < 0.01, "{b}");
    }

    #[test]
    fn solvability_limit_value() {
        let lim = solvable_step_limit(0.9);
        assert!((lim - 2.068).abs() < 0.01, "{lim}");
        // A giant step gets flagged but still solves.
        let spec = GridSpec::new(8, 2.0 * PI).unwrap();
        let config = ModelConfig::new(0.9, 0.05, spec).unwrap();
        let mut solver =
            TfacSolver::direct(config, random_initial(spec, 1e-3, 3)).unwrap();
        solver.step(3.0).unwrap();
        assert_eq!(solver.solvability_warnings(), &[1]);
    }

    #[test]
    fn dissipation_on_short_coarsening_run() {
        let spec = GridSpec::new(32, 2.0 * PI).unwrap();
        let config = ModelConfig::new(0.7, 0.05, spec).unwrap();
        let mut solver =
            TfacSolver::direct(config, random_initial(spec, 1e-3, 11)).unwrap();
        let mesh = build_graded_uniform(0.01, 10, 3.0, 2.0, 0.05).unwrap();
        solver.run(&mesh).unwrap();
        let flags = solver.check_dissipation().unwrap();
        assert!(flags.iter().all(|&f| f));
        // E_alpha non-increasing.
        let ea: Vec<f64> = solver
            .records()
            .iter()
            .map(|r| r.energy_variational)
            .collect();
        for w in ea.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()));
        }
    }

    #[test]
    fn variational_energy_alpha_near_one_matches_tau_weighted_sum() {
        // For alpha ~ 1 the history weight collapses to tau_k.
        let spec = GridSpec::new(16, 2.0 * PI).unwrap();
        let config = ModelConfig::new(0.9995, 0.05, spec).unwrap();
        let mut solver =
            TfacSolver::direct(config, random_initial(spec, 0.5, 5)).unwrap();
        let mesh = TimeMesh::uniform(1.0, 30).unwrap();
        solver.run(&mesh).unwrap();
        let r = solver.records().last().unwrap();
        let e_plain = solver.config.energy(&solver.u);
        let tau_sum: f64 = solver
            .s_history
            .iter()
            .enumerate()
            .map(|(k, s)| mesh.step(k + 1) * s)
            .sum();
        let surrogate = e_plain + 0.5 * tau_sum;
        let rel = (r.energy_variational - surrogate).abs() / surrogate.abs();
        assert!(rel <= 1e-3, "rel {rel}");
    }

    #[test]
    fn caputo_residual_on_stationary_run_is_zero() {
        let spec = GridSpec::new(8, 1.0).unwrap();
        let config = ModelConfig::new(0.6, 0.1, spec).unwrap();
        let mut solver = TfacSolver::direct(config, GridField::constant(spec, 1.0))
            .unwrap()
            .with_solution_history(true);
        let mesh = TimeMesh::uniform(1.0, 6).unwrap();
        solver.run(&mesh).unwrap();
        for (raw, scaled) in solver.caputo_residuals().unwrap() {
            assert!(raw <= 1e-11, "{raw}");
            assert!(scaled <= 1e-11);
        }
    }

    #[test]
    fn caputo_residual_small_on_random_mesh_run() {
        let spec = GridSpec::new(16, 2.0 * PI).unwrap();
        let config = ModelConfig::new(0.55, 0.05, spec).unwrap();
        let mut solver = TfacSolver::direct(config, random_initial(spec, 0.8, 21))
            .unwrap()
            .with_solution_history(true);
        let mesh = crate::mesh::build_graded_random(2.0, 1.0, 50, 77).unwrap();
        solver.run(&mesh).unwrap();
        for (n, (raw, scaled)) in solver.caputo_residuals().unwrap().iter().enumerate() {
            assert!(*scaled <= 1e-9, "step {}: raw {raw} scaled {scaled}", n + 1);
        }
    }

    #[test]
    fn fast_first_step_matches_direct_exactly() {
        let spec = GridSpec::new(16, 2.0 * PI).unwrap();
        let config = ModelConfig::new(0.7, 0.05, spec).unwrap();
        let u0 = random_initial(spec, 1e-3, 9);
        let soe = build_soe(0.7, 1e-12, 1e-3, 1.0).unwrap();
        let mut direct = TfacSolver::direct(config, u0.clone()).unwrap();
        let mut fast = TfacSolver::fast(config, u0, soe).unwrap();
        direct.step(0.1).unwrap();
        fast.step(0.1).unwrap();
        assert_eq!(direct.u().values(), fast.u().values());
    }

    #[test]
    fn fast_agrees_with_direct_over_many_steps() {
        let spec = GridSpec::new(24, 2.0 * PI).unwrap();
        let config = ModelConfig::new(0.7, 0.05, spec).unwrap();
        let u0 = random_initial(spec, 1e-3, 13);
        let mesh = TimeMesh::uniform(4.0, 40).unwrap();
        let soe = build_soe(0.7, 1e-12, 0.09, 4.0).unwrap();
        let mut direct = TfacSolver::direct(config, u0.clone()).unwrap();
        let mut fast = TfacSolver::fast(config, u0, soe).unwrap();
        let mut worst = 0.0f64;
        for k in 1..=mesh.num_steps() {
            direct.step_to(mesh.time(k)).unwrap();
            fast.step_to(mesh.time(k)).unwrap();
            let diff: f64 = direct
                .u()
                .values()
                .iter()
                .zip(fast.u().values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(diff);
        }
        assert!(worst <= 1e-10, "max deviation {worst}");
    }

    #[test]
    fn fast_rejects_steps_below_cutoff() {
        let spec = GridSpec::new(8, 1.0).unwrap();
        let config = ModelConfig::new(0.5, 0.1, spec).unwrap();
        let soe = build_soe(0.5, 1e-10, 1e-2, 1.0).unwrap();
        let mut solver = TfacSolver::fast(config, GridField::zeros(spec), soe).unwrap();
        assert!(solver.step(1e-3).is_err());
        let mesh = TimeMesh::uniform(1.0, 500).unwrap();
        let soe = build_soe(0.5, 1e-10, 1e-2, 1.0).unwrap();
        let mut solver = TfacSolver::fast(config, GridField::zeros(spec), soe).unwrap();
        assert!(solver.run(&mesh).is_err());
    }

    #[test]
    fn adaptive_run_respects_controller_bounds() {
        let spec = GridSpec::new(16, 2.0 * PI).unwrap();
        let config = ModelConfig::new(0.7, 0.05, spec).unwrap();
        let mut solver =
            TfacSolver::direct(config, random_initial(spec, 1e-3, 31)).unwrap();
        let graded = crate::mesh::build_graded(0.01, 10, 3.0).unwrap();
        solver.run(&graded).unwrap();
        let ctrl = AdaptiveController::new(1e3, 1e-3, 0.1).unwrap();
        solver.run_adaptive(&ctrl, 2.0).unwrap();
        assert!((solver.time() - 2.0).abs() < 1e-12);
        for r in solver.records().iter().filter(|r| r.t > 0.011) {
            assert!(r.tau <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn records_csv_schema() {
        let spec = GridSpec::new(8, 1.0).unwrap();
        let config = ModelConfig::new(0.5, 0.1, spec).unwrap();
        let mut solver = TfacSolver::direct(config, GridField::zeros(spec)).unwrap();
        solver.step(0.5).unwrap();
        let mut buf = Vec::new();
        solver.write_records_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "n,t,tau,E,E_alpha,max_norm,newton_iters,restriction_ok"
        );
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn keeps_mesh_points_exactly() {
        let spec = GridSpec::new(8, 1.0).unwrap();
        let config = ModelConfig::new(0.5, 0.1, spec).unwrap();
        let mesh = Arc::new(crate::mesh::build_graded_random(3.0, 1.0, 40, 5).unwrap());
        let mut solver = TfacSolver::direct(config, GridField::zeros(spec)).unwrap();
        solver.run(&mesh).unwrap();
        assert_eq!(solver.times(), mesh.points());
    }
}
