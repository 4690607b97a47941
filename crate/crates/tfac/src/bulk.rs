//! Double-well bulk chemistry.
//!
//! `F(u) = ¼(1−u²)²` with force `f = F' = u³ − u`. The Crank-Nicolson step
//! evaluates the force through the two-point form
//!
//! ```text
//! H(a, b) = a³/3 + a b²/2 + b³/6 − (a + b)/2
//! ```
//!
//! which is second-order accurate between the endpoints, consistent
//! (`H(a,a) = f(a)`), and satisfies the coercivity identity
//! `H(a,b)(a−b) = F(a) − F(b) + (a−b)⁴/12` that makes the energy estimate
//! unconditional. Field application is elementwise.

/// `F(u) = ¼ (1 − u²)²`.
pub fn potential(u: f64) -> f64 {
    let w = 1.0 - u * u;
    0.25 * w * w
}

/// `f(u) = F'(u) = u³ − u`.
pub fn force(u: f64) -> f64 {
    u * u * u - u
}

/// Two-point bulk force `H(new, old)` of the Crank-Nicolson step.
pub fn two_point_force(new: f64, old: f64) -> f64 {
    new * new * new / 3.0 + 0.5 * new * old * old + old * old * old / 6.0 - 0.5 * (new + old)
}

/// `∂H/∂new = new² + (old² − 1)/2`, the diagonal of the Newton Jacobian.
pub fn two_point_force_du(new: f64, old: f64) -> f64 {
    new * new + 0.5 * (old * old - 1.0)
}
