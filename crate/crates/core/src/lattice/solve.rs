//! Stage-two solve for one spanning node.
//!
//! A spanning node with conditional mean `m_self` mixes the inner neighbour's
//! transition law (mean `m_inner`, variance `v`) with a point mass at a new
//! outer node `x`. Matching the node's own mean and variance gives
//!
//! ```text
//! f1(x) = (x - m_self) / (x - m_inner)
//! f2(x) = (v - (x - m_self)^2) / (v + (m_inner - m_self)^2 - (x - m_self)^2)
//! ```
//!
//! and `p = f1(x) = f2(x)` is the sibling probability. `f1 - f2` changes sign
//! exactly once on `[m_self, m_self + sqrt(v)]` when `m_self >= m_inner`, and on
//! `[m_self - sqrt(v), m_self]` otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 200;

/// `|m_self - m_inner|` below this (relative to `max(1, |m_self|)`) is treated
/// as degenerate.
pub const DEGENERATE_GAP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSolve {
    /// Value of the spawned outer node at the next level.
    pub x: f64,
    /// Probability of the sibling move toward the center.
    pub p: f64,
    /// Set when `p == 1` and `x` carries no probability.
    pub degenerate: bool,
}

/// `f1` and `f2` in offset form, `a = x - m_self`, `d = m_inner - m_self`.
#[inline]
fn f1(a: f64, d: f64) -> f64 {
    a / (a - d)
}

#[cfg(test)]
fn f2(a: f64, d: f64, v: f64) -> f64 {
    (v - a * a) / (v + d * d - a * a)
}

/// The half-bracket that contains the root.
pub fn bracket(m_self: f64, m_inner: f64, v: f64) -> (f64, f64) {
    let s = v.sqrt();
    if m_self >= m_inner {
        (m_self, m_self + s)
    } else {
        (m_self - s, m_self)
    }
}

/// `f1 - f2` over a common denominator:
///
/// ```text
/// f1 - f2 = d (v - a (a - d)) / ((a - d) (v + d^2 - a^2))
/// ```
///
/// Subtracting `f1` and `f2` directly loses everything when `|d|` is tiny:
/// both are then `1 - O(d / sqrt(v))` and `v - a^2` cancels. The quadratic
/// `v - a (a - d)` does not, so its sign (and the root) stays exact.
#[inline]
fn gap(a: f64, d: f64, v: f64) -> f64 {
    d * (v - a * (a - d)) / ((a - d) * (v + d * d - a * a))
}

/// `f1(x) - f2(x)`, evaluated without cancellation.
pub fn residual(x: f64, m_self: f64, m_inner: f64, v: f64) -> f64 {
    gap(x - m_self, m_inner - m_self, v)
}

pub fn solve_branch_equation(m_self: f64, m_inner: f64, v: f64) -> Result<BranchSolve> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::NonPositiveVariance(v));
    }
    if !m_self.is_finite() || !m_inner.is_finite() {
        return Err(Error::NonFiniteMoment { j: 0 });
    }
    let d = m_inner - m_self;
    let s = v.sqrt();
    // Outward direction: away from the inner neighbour.
    let dir = if d <= 0.0 { 1.0 } else { -1.0 };
    if d.abs() < DEGENERATE_GAP * m_self.abs().max(1.0) {
        return Ok(BranchSolve {
            x: m_self + dir * s,
            p: 1.0,
            degenerate: true,
        });
    }

    // Work in a = x - m_self so the bracket keeps full precision when |m_self|
    // is large relative to sqrt(v). g(0) < 0 and g(dir * s) > 0.
    let g = |a: f64| gap(a, d, v);
    let mut neg = 0.0_f64;
    let mut pos = dir * s;
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let mid = 0.5 * (neg + pos);
        if mid == neg || mid == pos {
            converged = true;
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            neg = mid;
            pos = mid;
            converged = true;
            break;
        }
        if gm < 0.0 {
            neg = mid;
        } else {
            pos = mid;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: MAX_ITERATIONS,
        });
    }
    let a = if g(neg).abs() <= g(pos).abs() {
        neg
    } else {
        pos
    };
    let p = f1(a, d).clamp(0.0, 1.0);
    Ok(BranchSolve {
        x: m_self + a,
        p,
        degenerate: false,
    })
}
