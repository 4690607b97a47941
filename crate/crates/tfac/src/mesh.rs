//! Nonuniform time meshes and the adaptive step controller.
//!
//! All kernel computations sit on top of a [`TimeMesh`]: a strictly
//! increasing list of time points starting at zero, with derived step sizes
//! `τ_k = t_k − t_{k−1}` and adjacent step ratios `r_n = τ_n / τ_{n−1}`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Strictly increasing time points `t_0 = 0 < t_1 < … < t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMesh {
    points: Vec<f64>,
    steps: Vec<f64>,
}

impl TimeMesh {
    /// Builds a mesh from raw points, validating the monotonicity invariant.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("mesh needs at least two points"));
        }
        if points[0] != 0.0 {
            return Err(Error::invalid("mesh must start at t = 0"));
        }
        let mut steps = Vec::with_capacity(points.len() - 1);
        for w in points.windows(2) {
            let tau = w[1] - w[0];
            if !(tau > 0.0) || !tau.is_finite() {
                return Err(Error::invalid(format!(
                    "mesh points must be strictly increasing (step {tau})"
                )));
            }
            steps.push(tau);
        }
        Ok(TimeMesh { points, steps })
    }

    /// Uniform mesh with `n` steps covering `[0, t_end]`.
    pub fn uniform(t_end: f64, n: usize) -> Result<Self> {
        if !(t_end > 0.0) || n == 0 {
            return Err(Error::invalid("uniform mesh needs t_end > 0 and n >= 1"));
        }
        let mut points: Vec<f64> = (0..=n).map(|k| t_end * k as f64 / n as f64).collect();
        points[n] = t_end;
        TimeMesh::from_points(points)
    }

    /// Number of steps `N`.
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn time(&self, k: usize) -> f64 {
        self.points[k]
    }

    /// Step `τ_k`, 1-based.
    pub fn step(&self, k: usize) -> f64 {
        self.steps[k - 1]
    }

    /// Step ratio `r_n = τ_n / τ_{n−1}` for `n ≥ 2`.
    pub fn ratio(&self, n: usize) -> f64 {
        assert!(n >= 2, "step ratios are defined for n >= 2");
        self.steps[n - 1] / self.steps[n - 2]
    }

    pub fn max_step(&self) -> f64 {
        self.steps.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_step(&self) -> f64 {
        self.steps.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// Two-column CSV `index,t`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,t")?;
        for (k, t) in self.points.iter().enumerate() {
            writeln!(w, "{},{:.17e}", k, t)?;
        }
        Ok(())
    }
}

/// Rounds quotients that are within 1e-9 of an integer, otherwise ceils.
fn ceil_with_slack(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Graded mesh `t_k = t0 (k/n0)^γ` on `[0, t0]`.
pub fn build_graded(t0: f64, n0: usize, gamma: f64) -> Result<TimeMesh> {
    if !(t0 > 0.0) {
        return Err(Error::invalid("graded mesh needs t0 > 0"));
    }
    if n0 == 0 {
        return Err(Error::invalid("graded mesh needs n0 >= 1"));
    }
    if !(gamma >= 1.0) {
        return Err(Error::invalid("grading exponent must satisfy gamma >= 1"));
    }
    let mut points = Vec::with_capacity(n0 + 1);
    for k in 0..=n0 {
        points.push(t0 * (k as f64 / n0 as f64).powf(gamma));
    }
    points[0] = 0.0;
    points[n0] = t0;
    TimeMesh::from_points(points)
}

/// Graded mesh on `[0, t0]` followed by uniform steps of size at most
/// `tau_tail` filling `(t0, t_end]`; only the final step is shortened so that
/// the last point lands on `t_end` exactly.
pub fn build_graded_uniform(
    t0: f64,
    n0: usize,
    gamma: f64,
    t_end: f64,
    tau_tail: f64,
) -> Result<TimeMesh> {
    if !(tau_tail > 0.0) {
        return Err(Error::invalid("tail step must be positive"));
    }
    if !(t_end > t0) {
        return Err(Error::invalid("horizon must exceed the graded cell"));
    }
    let graded = build_graded(t0, n0, gamma)?;
    let mut points = graded.points().to_vec();
    let m = ceil_with_slack((t_end - t0) / tau_tail).max(1);
    for i in 1..m {
        points.push(t0 + i as f64 * tau_tail);
    }
    points.push(t_end);
    TimeMesh::from_points(points)
}

/// Graded cell `[0, t0]` with `t0 = min{1/γ, t_end}` and
/// `n0 = ⌈n_total / (t_end + 1 − 1/γ)⌉`, followed by random steps
/// proportional to uniform `(0,1)` draws and normalized to fill
/// `(t0, t_end]` exactly.
pub fn build_graded_random(
    gamma: f64,
    t_end: f64,
    n_total: usize,
    seed: u64,
) -> Result<TimeMesh> {
    if !(gamma >= 1.0) {
        return Err(Error::invalid("grading exponent must satisfy gamma >= 1"));
    }
    let t0 = (1.0 / gamma).min(t_end);
    if !(t_end > t0) {
        return Err(Error::invalid(
            "horizon leaves no room for the random tail (t_end <= t0)",
        ));
    }
    let n0 = ceil_with_slack(n_total as f64 / (t_end + 1.0 - 1.0 / gamma));
    if n_total <= n0 {
        return Err(Error::invalid(format!(
            "n_total = {n_total} must exceed the graded cell count n0 = {n0}"
        )));
    }
    let graded = build_graded(t0, n0, gamma)?;
    let mut points = graded.points().to_vec();

    let mut rng = SplitMix64::new(seed);
    let draws: Vec<f64> = (0..n_total - n0).map(|_| rng.next_open01()).collect();
    let total: f64 = draws.iter().sum();
    let scale = (t_end - t0) / total;
    let mut t = t0;
    for d in &draws[..draws.len() - 1] {
        t += d * scale;
        points.push(t);
    }
    points.push(t_end);
    TimeMesh::from_points(points)
}

/// Feed-forward adaptive step controller
/// `τ = max{τ_min, τ_max / sqrt(1 + κ |E'|²)}`.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveController {
    pub kappa: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Additionally clip each step by the maximum-bound restriction.
    pub enforce_restriction: bool,
}

impl AdaptiveController {
    pub fn new(kappa: f64, tau_min: f64, tau_max: f64) -> Result<Self> {
        if !(kappa >= 0.0) {
            return Err(Error::invalid("adaptivity level must satisfy kappa >= 0"));
        }
        if !(tau_min > 0.0 && tau_min <= tau_max) {
            return Err(Error::invalid("need 0 < tau_min <= tau_max"));
        }
        Ok(AdaptiveController {
            kappa,
            tau_min,
            tau_max,
            enforce_restriction: false,
        })
    }

    /// Next step from the current energy rate. There is no step rejection:
    /// the controller is purely feed-forward.
    pub fn next_step(&self, energy_rate: f64) -> f64 {
        let denom = (1.0 + self.kappa * energy_rate * energy_rate).sqrt();
        (self.tau_max / denom).max(self.tau_min)
    }
}
