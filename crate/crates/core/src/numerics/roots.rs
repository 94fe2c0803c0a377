//! Bisection for monotone scalar functions.

use crate::error::{Error, Result};

/// Result of a bracketed bisection: the final bracket `[lo, hi]` with
/// `f(lo) < target ≤ f(hi)` for an increasing function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

/// Bisects an increasing function `f` for `f(x) = target` on `[lo, hi]`.
///
/// Stops when the bracket is narrower than `max(x_tol_abs, x_tol_rel·|hi|)`
/// or after `max_iter` halvings. The returned bracket keeps `f(hi) ≥ target`.
pub fn bisect_increasing<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    mut lo: f64,
    mut hi: f64,
    x_tol_abs: f64,
    x_tol_rel: f64,
    max_iter: usize,
) -> Result<Bracket> {
    if !(lo <= hi) {
        return Err(Error::Numeric(format!("empty bisection bracket [{lo}, {hi}]")));
    }
    let flo = f(lo);
    let fhi = f(hi);
    if flo >= target {
        return Ok(Bracket {
            lo,
            hi: lo,
            iterations: 0,
        });
    }
    if fhi < target {
        return Err(Error::Numeric(format!(
            "no sign change on [{lo}, {hi}]: f(lo) = {flo}, f(hi) = {fhi}, target {target}"
        )));
    }
    let mut it = 0;
    while it < max_iter && hi - lo > x_tol_abs.max(x_tol_rel * hi.abs()) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        it += 1;
    }
    Ok(Bracket { lo, hi, iterations: it })
}

/// Bisects a decreasing function for `f(x) = target`; the returned bracket
/// keeps `f(hi) ≤ target`.
pub fn bisect_decreasing<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    lo: f64,
    hi: f64,
    x_tol_abs: f64,
    x_tol_rel: f64,
    max_iter: usize,
) -> Result<Bracket> {
    bisect_increasing(|x| -f(x), -target, lo, hi, x_tol_abs, x_tol_rel, max_iter)
}
