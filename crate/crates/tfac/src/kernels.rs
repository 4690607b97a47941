//! Discrete convolution kernels of the L1-type Riemann-Liouville derivative
//! on nonuniform meshes.
//!
//! Four kernel families live here, all indexed chronologically (entry `k-1`
//! of a row belongs to cell `k`, the last entry to the current step):
//!
//! * `q^{(n)}_{n−k} = ∫_{t_{k−1}}^{t_k} ω_α(t_n − s) ds` — cell integrals of
//!   the power kernel; they define the discrete fractional integral and the
//!   history weight of the variational energy.
//! * `a^{(n)}_0 = q^{(n)}_0`, `a^{(n)}_{n−k} = q^{(n)}_{n−k} − q^{(n−1)}_{n−k−1}`
//!   — the derivative kernels: `(∂_τ^{1−α} v)^{n−1/2} = (1/τ_n) Σ a^{(n)}_{n−k} v^{k−1/2}`.
//! * `θ^{(n)}_{n−j}` — the orthogonal kernels inverting the `a` family,
//!   `Σ_{j=k}^n θ^{(n)}_{n−j} a^{(j)}_{j−k} = δ_{nk}`; they express the scheme
//!   as a discrete Caputo derivative of the solution.
//! * `p^{(n)}_{n−j}` — the complementary kernels, `Σ_{j=k}^n p^{(n)}_{n−j} a^{(j)}_{j−k} = 1`.
//!
//! Everything is evaluated in closed form from `ω_μ(t) = t^{μ−1}/Γ(μ)`; the
//! deep-history differences are computed through `expm1`/`ln_1p` to limit
//! cancellation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::TimeMesh;

pub(crate) fn gamma_fn(x: f64) -> f64 {
    libm::tgamma(x)
}

/// The power kernel `ω_μ(t) = t^{μ−1} / Γ(μ)`.
///
/// Errors for `t < 0`, and for `t = 0` when `μ < 1` (the kernel is singular
/// there); `ω_1(0) = 1` and `ω_μ(0) = 0` for `μ > 1` are fine.
pub fn omega(mu: f64, t: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::Domain(format!("omega needs mu > 0, got {mu}")));
    }
    if t < 0.0 || (t == 0.0 && mu < 1.0) {
        return Err(Error::Domain(format!(
            "omega_{mu} is undefined at t = {t}"
        )));
    }
    Ok(omega_unchecked(mu, t))
}

pub(crate) fn omega_unchecked(mu: f64, t: f64) -> f64 {
    t.powf(mu - 1.0) / gamma_fn(mu)
}

/// `ω_{1+α}(τ) = τ^α / Γ(1+α)`, the leading kernel `a^{(n)}_0` of step `τ`.
pub fn a_zero(alpha: f64, tau: f64) -> f64 {
    tau.powf(alpha) / gamma_fn(1.0 + alpha)
}

/// `(x + τ)^α − x^α` evaluated without cancellation for `x ≫ τ`.
fn pow_diff(alpha: f64, x: f64, tau: f64) -> f64 {
    if x <= 0.0 {
        tau.powf(alpha)
    } else {
        x.powf(alpha) * (alpha * (tau / x).ln_1p()).exp_m1()
    }
}

/// Row of integral kernels `q^{(n)}_{n−k}`, `k = 1..=n`, chronological.
pub fn q_row(times: &[f64], alpha: f64, n: usize) -> Vec<f64> {
    debug_assert!(n >= 1 && n < times.len());
    let g = gamma_fn(1.0 + alpha);
    let tn = times[n];
    (1..=n)
        .map(|k| pow_diff(alpha, tn - times[k], times[k] - times[k - 1]) / g)
        .collect()
}

/// Row of derivative kernels `a^{(n)}_{n−k}`, `k = 1..=n`, chronological.
/// The current-step entry is last and positive; all history entries are
/// negative.
pub fn a_row(times: &[f64], alpha: f64, n: usize) -> Vec<f64> {
    let mut row = q_row(times, alpha, n);
    if n >= 2 {
        let prev = q_row(times, alpha, n - 1);
        for k in 0..n - 1 {
            row[k] -= prev[k];
        }
    }
    row
}

/// All rows `a^{(1)} ..= a^{(n)}`, sharing the `q`-row recurrences.
pub fn a_rows(times: &[f64], alpha: f64, n: usize) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(n);
    let mut q_prev: Vec<f64> = Vec::new();
    for m in 1..=n {
        let q = q_row(times, alpha, m);
        let mut a = q.clone();
        for k in 0..m - 1 {
            a[k] -= q_prev[k];
        }
        rows.push(a);
        q_prev = q;
    }
    rows
}

/// Orthogonal kernel row `θ^{(n)}_{n−j}`, `j = 1..=n`, chronological, from the
/// derivative rows `a^{(1)} ..= a^{(n)}`.
///
/// Defined by `θ^{(n)}_0 = 1/a^{(n)}_0` and
/// `θ^{(n)}_{n−k} = −(1/a^{(k)}_0) Σ_{j=k+1}^n θ^{(n)}_{n−j} a^{(j)}_{j−k}`.
pub fn doc_row(a_rows: &[Vec<f64>]) -> Vec<f64> {
    let n = a_rows.len();
    assert!(n >= 1);
    let mut theta = vec![0.0; n];
    theta[n - 1] = 1.0 / a_rows[n - 1][n - 1];
    for k in (1..n).rev() {
        let mut s = 0.0;
        for j in k + 1..=n {
            // a^{(j)}_{j−k} is the cell-k entry of row j.
            s += theta[j - 1] * a_rows[j - 1][k - 1];
        }
        theta[k - 1] = -s / a_rows[k - 1][k - 1];
    }
    theta
}

/// All orthogonal rows `θ^{(1)} ..= θ^{(n)}`.
pub fn doc_rows(a_rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (1..=a_rows.len()).map(|m| doc_row(&a_rows[..m])).collect()
}

/// Complementary kernel row `p^{(n)}_{n−j}` satisfying
/// `Σ_{j=k}^n p^{(n)}_{n−j} a^{(j)}_{j−k} = 1` for every `k`.
pub fn dcc_row(a_rows: &[Vec<f64>]) -> Vec<f64> {
    let n = a_rows.len();
    assert!(n >= 1);
    let mut p = vec![0.0; n];
    p[n - 1] = 1.0 / a_rows[n - 1][n - 1];
    for k in (1..n).rev() {
        let mut s = 0.0;
        for j in k + 1..=n {
            s += p[j - 1] * a_rows[j - 1][k - 1];
        }
        p[k - 1] = (1.0 - s) / a_rows[k - 1][k - 1];
    }
    p
}

/// Discrete Riemann-Liouville derivative
/// `(∂_τ^{1−α} v)^{n−1/2} = (1/τ_n) Σ_{k=1}^n a^{(n)}_{n−k} v^{k−1/2}`
/// from the midpoint history `v^{1/2} … v^{n−1/2}`.
pub fn l1r_derivative(v_history: &[f64], times: &[f64], alpha: f64, n: usize) -> Result<f64> {
    if v_history.len() != n {
        return Err(Error::HistoryLength {
            expected: n,
            got: v_history.len(),
        });
    }
    let row = a_row(times, alpha, n);
    let tau_n = times[n] - times[n - 1];
    Ok(dot(&row, v_history) / tau_n)
}

/// Discrete fractional integral `(I_τ^α v)^n = Σ_{k=1}^n q^{(n)}_{n−k} v^{k−1/2}`;
/// zero for `n = 0`.
pub fn frac_integral(v_history: &[f64], times: &[f64], alpha: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    if v_history.len() != n {
        return Err(Error::HistoryLength {
            expected: n,
            got: v_history.len(),
        });
    }
    let row = q_row(times, alpha, n);
    Ok(dot(&row, v_history))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Materialized kernel rows for one mesh and order, used by the verification
/// surface. The stepping loop computes rows on the fly instead.
#[derive(Debug, Clone)]
pub struct KernelTable {
    alpha: f64,
    mesh: Arc<TimeMesh>,
    a_rows: Vec<Vec<f64>>,
    q_rows: Vec<Vec<f64>>,
}

impl KernelTable {
    pub fn build(mesh: Arc<TimeMesh>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!(
                "fractional order must lie in (0,1), got {alpha}"
            )));
        }
        let times = mesh.points();
        let n = mesh.num_steps();
        let q_rows: Vec<Vec<f64>> = (1..=n).map(|m| q_row(times, alpha, m)).collect();
        let mut a_rows = q_rows.clone();
        for m in 2..=n {
            for k in 0..m - 1 {
                a_rows[m - 1][k] -= q_rows[m - 2][k];
            }
        }
        Ok(KernelTable {
            alpha,
            mesh,
            a_rows,
            q_rows,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    pub fn num_steps(&self) -> usize {
        self.a_rows.len()
    }

    /// `a^{(n)}` row, chronological.
    pub fn a(&self, n: usize) -> &[f64] {
        &self.a_rows[n - 1]
    }

    /// `q^{(n)}` row, chronological.
    pub fn q(&self, n: usize) -> &[f64] {
        &self.q_rows[n - 1]
    }

    pub fn a_rows(&self) -> &[Vec<f64>] {
        &self.a_rows
    }

    /// All orthogonal rows up to `n`.
    pub fn doc_rows(&self, n: usize) -> Vec<Vec<f64>> {
        doc_rows(&self.a_rows[..n])
    }

    /// All complementary rows up to `n`.
    pub fn dcc_rows(&self, n: usize) -> Vec<Vec<f64>> {
        (1..=n).map(|m| dcc_row(&self.a_rows[..m])).collect()
    }

    /// Worst residuals of the four kernel identities over all `(n, k)` pairs,
    /// plus the sign/monotonicity checks. Used by `verify-kernels` and the
    /// acceptance suite.
    pub fn verify(&self) -> KernelVerification {
        let n = self.num_steps();
        let thetas = self.doc_rows(n);
        let ps = self.dcc_rows(n);

        let mut v = KernelVerification::default();

        for m in 1..=n {
            let a_m = &self.a_rows[m - 1];
            v.signs_ok &= a_m[m - 1] > 0.0 && a_m[..m - 1].iter().all(|&x| x < 0.0);
            v.q_positive_ok &= self.q_rows[m - 1].iter().all(|&x| x > 0.0);

            let th = &thetas[m - 1];
            v.doc_positive_ok &= th.iter().all(|&x| x > 0.0);
            // theta^{(m)}_0 > theta^{(m)}_1 > ... (chronologically increasing).
            v.doc_monotone_ok &= th.windows(2).all(|w| w[0] < w[1]);

            for k in 1..=m {
                let target = if k == m { 1.0 } else { 0.0 };
                // DOC orthogonality: sum_j theta^{(m)}_{m-j} a^{(j)}_{j-k}.
                let s: f64 = (k..=m).map(|j| th[j - 1] * self.a_rows[j - 1][k - 1]).sum();
                v.doc_orthogonality = v.doc_orthogonality.max((s - target).abs());

                // Mutual orthogonality: sum_j a^{(m)}_{m-j} theta^{(j)}_{j-k}.
                let s: f64 = (k..=m)
                    .map(|j| self.a_rows[m - 1][j - 1] * thetas[j - 1][k - 1])
                    .sum();
                v.mutual_orthogonality = v.mutual_orthogonality.max((s - target).abs());

                // DCC complementarity: sum_j p^{(m)}_{m-j} a^{(j)}_{j-k} = 1.
                let s: f64 = (k..=m)
                    .map(|j| ps[m - 1][j - 1] * self.a_rows[j - 1][k - 1])
                    .sum();
                v.dcc_complementarity = v.dcc_complementarity.max((s - 1.0).abs());

                // DCO complementarity: sum_j q^{(m)}_{m-j} theta^{(j)}_{j-k} = 1.
                let s: f64 = (k..=m)
                    .map(|j| self.q_rows[m - 1][j - 1] * thetas[j - 1][k - 1])
                    .sum();
                v.dco_complementarity = v.dco_complementarity.max((s - 1.0).abs());
            }
        }
        v
    }

    /// Lemma-style positive definiteness of the `a` kernels against a real
    /// sequence `w`: returns the summed-form slack (LHS − RHS, nonnegative up
    /// to rounding) and the worst per-step slack.
    pub fn positive_definiteness_slack(&self, w: &[f64]) -> (f64, f64) {
        let n = w.len().min(self.num_steps());
        let mut lhs_sum = 0.0;
        let mut rhs_sum = 0.0;
        let mut worst_step = f64::INFINITY;
        let q_n = &self.q_rows[n - 1];
        for k in 1..=n {
            let a_k = &self.a_rows[k - 1];
            let conv: f64 = (1..=k).map(|j| a_k[j - 1] * w[j - 1]).sum();
            let lhs_k = 2.0 * w[k - 1] * conv;
            let a_sum: f64 = a_k[..k].iter().sum();
            let q_k = &self.q_rows[k - 1];
            let mut rhs_k = w[k - 1] * w[k - 1] * a_sum;
            for j in 1..=k {
                rhs_k += q_k[j - 1] * w[j - 1] * w[j - 1];
            }
            if k >= 2 {
                let q_km1 = &self.q_rows[k - 2];
                for j in 1..k {
                    rhs_k -= q_km1[j - 1] * w[j - 1] * w[j - 1];
                }
            }
            worst_step = worst_step.min(lhs_k - rhs_k);

            lhs_sum += lhs_k;
            rhs_sum += w[k - 1] * w[k - 1] * a_sum;
        }
        for k in 1..=n {
            rhs_sum += q_n[k - 1] * w[k - 1] * w[k - 1];
        }
        (lhs_sum - rhs_sum, worst_step)
    }
}

/// Residual summary of [`KernelTable::verify`].
#[derive(Debug, Clone)]
pub struct KernelVerification {
    pub doc_orthogonality: f64,
    pub mutual_orthogonality: f64,
    pub dcc_complementarity: f64,
    pub dco_complementarity: f64,
    pub signs_ok: bool,
    pub q_positive_ok: bool,
    pub doc_positive_ok: bool,
    pub doc_monotone_ok: bool,
}

impl Default for KernelVerification {
    fn default() -> Self {
        KernelVerification {
            doc_orthogonality: 0.0,
            mutual_orthogonality: 0.0,
            dcc_complementarity: 0.0,
            dco_complementarity: 0.0,
            signs_ok: true,
            q_positive_ok: true,
            doc_positive_ok: true,
            doc_monotone_ok: true,
        }
    }
}

impl KernelVerification {
    pub fn max_residual(&self) -> f64 {
        self.doc_orthogonality
            .max(self.mutual_orthogonality)
            .max(self.dcc_complementarity)
            .max(self.dco_complementarity)
    }

    pub fn all_ok(&self, tol: f64) -> bool {
        self.max_residual() <= tol
            && self.signs_ok
            && self.q_positive_ok
            && self.doc_positive_ok
            && self.doc_monotone_ok
    }
}
