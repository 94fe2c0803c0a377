//! Maximum willingness to pay of a log-utility homeowner whose wealth per
//! square metre equals the reconstruction cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{reimbursement, LossDistribution, Policy};
use crate::numerics::roots::bisect_increasing;

pub const MAX_BISECTION_STEPS: usize = 60;
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WtpFlag {
    Priced,
    /// The policy never pays in this cell, so the premium is zero.
    ZeroCover,
    /// No sign change of the indifference residual inside the bracket.
    NoPositiveWtp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandQuote {
    pub policy: Policy,
    pub p_h: f64,
    pub residual: f64,
    pub flag: WtpFlag,
}

/// Expected utility lost by buying at price `p`:
/// `E[log((RC − l + 1)/(RC − p − l + x + 1))]`. Increasing in `p`, and
/// nonpositive at `p = 0`.
pub fn indifference_residual(p: f64, dist: &LossDistribution, policy: &Policy) -> Result<f64> {
    let rc = dist.rc;
    if !(0.0..rc).contains(&p) {
        return Err(Error::Domain(format!("premium {p} outside [0, RC = {rc})")));
    }
    let mut acc = 0.0;
    for (&w, &l) in dist.weights.iter().zip(&dist.losses) {
        if w == 0.0 {
            continue;
        }
        let base = rc - l + 1.0;
        let shift = reimbursement(l, policy) - p;
        if base + shift <= 0.0 {
            return Err(Error::Domain(format!(
                "premium {p} leaves non-positive wealth at loss {l} (reimbursement {})",
                shift + p
            )));
        }
        acc -= w * (shift / base).ln_1p();
    }
    Ok(acc)
}

/// Largest premium keeping every log argument positive, capped by RC and
/// by E + D.
fn upper_bracket(dist: &LossDistribution, policy: &Policy) -> (f64, bool) {
    let by_wealth = dist
        .weights
        .iter()
        .zip(&dist.losses)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, &l)| dist.rc - l + reimbursement(l, policy) + 1.0)
        .fold(f64::INFINITY, f64::min);
    let cap = dist.rc.min(policy.max_payment() + policy.deductible);
    if by_wealth <= cap {
        (by_wealth, true)
    } else {
        (cap, false)
    }
}

/// Solves `residual(p) = 0` by bisection.
pub fn solve_wtp(dist: &LossDistribution, policy: &Policy) -> Result<DemandQuote> {
    policy.check_rc(dist.rc)?;
    if dist.expected_reimbursement(policy) <= 0.0 {
        return Ok(DemandQuote {
            policy: *policy,
            p_h: 0.0,
            residual: 0.0,
            flag: WtpFlag::ZeroCover,
        });
    }
    let r0 = indifference_residual(0.0, dist, policy)?;
    let (mut hi, open) = upper_bracket(dist, policy);
    if open || hi >= dist.rc {
        hi = hi.next_down().min(dist.rc.next_down());
        // stay clear of the pole of the logarithm
        hi -= 1e-9 * hi.max(1.0);
    }
    let r_hi = indifference_residual(hi, dist, policy)?;
    if r0 > 0.0 || r_hi <= 0.0 {
        return Ok(DemandQuote {
            policy: *policy,
            p_h: 0.0,
            residual: r0,
            flag: WtpFlag::NoPositiveWtp,
        });
    }
    let f = |p: f64| indifference_residual(p, dist, policy).unwrap_or(f64::INFINITY);
    let b = bisect_increasing(f, 0.0, 0.0, hi, 0.0, 0.0, MAX_BISECTION_STEPS)?;
    let (rl, rh) = (f(b.lo), f(b.hi));
    let (p_h, residual) = if rl.abs() < rh.abs() { (b.lo, rl) } else { (b.hi, rh) };
    Ok(DemandQuote {
        policy: *policy,
        p_h,
        residual,
        flag: WtpFlag::Priced,
    })
}

/// Multi-hazard willingness to pay: the sum of the single-peril quotes.
pub fn multi_hazard_wtp(seismic: &DemandQuote, flood: &DemandQuote) -> Result<DemandQuote> {
    if seismic.policy != flood.policy {
        return Err(Error::input(
            "multi-hazard quote needs both perils priced on the same policy",
        ));
    }
    let flag = if seismic.flag == WtpFlag::Priced || flood.flag == WtpFlag::Priced {
        WtpFlag::Priced
    } else {
        seismic.flag
    };
    Ok(DemandQuote {
        policy: seismic.policy,
        p_h: seismic.p_h + flood.p_h,
        residual: seismic.residual + flood.residual,
        flag,
    })
}
