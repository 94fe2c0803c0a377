//! Hoeffding-type solvency bounds, the demand/supply reconciliation and the
//! optimal public-private scheme, per grouping sample and aggregated.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GroupingSample;
use crate::loss::{ClaimSeverity, ClaimUnit, GroupStats};
use crate::numerics::mean_cov;
use crate::numerics::roots::bisect_decreasing;

pub const DEFAULT_EPS1: f64 = 0.01;
pub const DEFAULT_EPS2: f64 = 0.02;
pub const DEFAULT_SAMPLINGS: usize = 100;
const PHI_REL_TOL: f64 = 1e-10;
const H_GRID_POINTS: usize = 241;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BoundMode {
    /// Per-group exponential bound `Σ w_g exp(−2φ²n_g²/b_g²)`.
    SimplifiedBernoulli,
    /// Bernoulli moment generating functions with one common `h`; `None`
    /// optimizes `h` on a log grid.
    GenericMgf { h: Option<f64> },
}

impl BoundMode {
    pub fn label(&self) -> &'static str {
        match self {
            BoundMode::SimplifiedBernoulli => "simplified",
            BoundMode::GenericMgf { .. } => "generic",
        }
    }
}

pub fn check_epsilons(eps1: f64, eps2: f64) -> Result<()> {
    if !(eps1 > 0.0 && eps1 < 1.0) || !(eps2 > 0.0 && eps2 < 1.0) {
        return Err(Error::input(format!(
            "epsilons must lie in (0, 1), got {eps1} and {eps2}"
        )));
    }
    if eps2 < eps1 {
        return Err(Error::input(format!(
            "eps2 = {eps2} is below eps1 = {eps1}: insolvency should never be preferred to a refill"
        )));
    }
    Ok(())
}

/// Everything the bounds need from one grouping sample.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    pub stats: Vec<GroupStats>,
    pub units: Vec<Vec<ClaimUnit>>,
    pub n_c: usize,
    pub e_y: f64,
    pub mode: BoundMode,
}

impl BoundInputs {
    pub fn new(severity: &ClaimSeverity, grouping: &GroupingSample, mode: BoundMode) -> Result<Self> {
        if let BoundMode::GenericMgf { h: Some(h) } = mode {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::input(format!("h must be positive, got {h}")));
            }
        }
        Ok(BoundInputs {
            stats: severity.group_stats(grouping)?,
            units: severity.units_by_group(grouping),
            n_c: severity.n_munis,
            e_y: severity.expected_total(),
            mode,
        })
    }

    fn all_zero(&self) -> bool {
        self.stats.iter().all(|g| g.b == 0.0)
    }

    fn scale(&self) -> f64 {
        self.stats.iter().map(|g| g.b / g.n as f64).fold(0.0, f64::max)
    }

    /// Analytic bound on `P(Y > N_c·φ + E[Y])`.
    pub fn bound(&self, phi: f64) -> f64 {
        if !(phi > 0.0) {
            return 1.0;
        }
        match self.mode {
            BoundMode::SimplifiedBernoulli => simplified_bound(&self.stats, phi),
            BoundMode::GenericMgf { h: Some(h) } => (self.log_mgf(h) - h * phi).exp().min(1.0),
            BoundMode::GenericMgf { h: None } => {
                if self.all_zero() {
                    return 0.0;
                }
                // convex in h
                let (_, v) = minimize_log_grid(|h| self.log_mgf(h) - h * phi, self.h_range());
                v.exp().min(1.0)
            }
        }
    }

    /// Smallest φ whose bound equals `eps`.
    pub fn solve(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::input(format!("target probability {eps} outside (0, 1)")));
        }
        if self.all_zero() {
            return Ok(0.0);
        }
        match self.mode {
            BoundMode::SimplifiedBernoulli => {
                let hi = 2.0 * self.scale() * ((1.0 / eps).ln() / 2.0).sqrt();
                let b = bisect_decreasing(
                    |p| simplified_bound(&self.stats, p),
                    eps,
                    0.0,
                    hi,
                    0.0,
                    PHI_REL_TOL,
                    400,
                )?;
                Ok(b.hi)
            }
            BoundMode::GenericMgf { h: Some(h) } => Ok(((self.log_mgf(h) - eps.ln()) / h).max(0.0)),
            BoundMode::GenericMgf { h: None } => {
                // quasi-convex in h
                let (_, v) = minimize_log_grid(|h| (self.log_mgf(h) - eps.ln()) / h, self.h_range());
                Ok(v.max(0.0))
            }
        }
    }

    fn h_range(&self) -> (f64, f64) {
        let s = self.scale();
        (1e-4 / s, 1e3 / s)
    }

    /// `log Σ_g w_g e^{−h E[Y^g]/n_g} Π_c (1 + (e^{h a_c/n_g} − 1) q_c)`.
    pub fn log_mgf(&self, h: f64) -> f64 {
        let terms: Vec<f64> = self
            .stats
            .iter()
            .zip(&self.units)
            .map(|(g, units)| {
                let t = h / g.n as f64;
                let lp: f64 = units.iter().map(|u| log_bernoulli_mgf(t * u.a, u.q)).sum();
                g.weight.ln() - t * g.expected + lp
            })
            .collect();
        log_sum_exp(&terms)
    }
}

/// `ln(1 + (e^t − 1)·q)` without overflow.
fn log_bernoulli_mgf(t: f64, q: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else if t < 30.0 {
        (q * t.exp_m1()).ln_1p()
    } else {
        t + (q + (1.0 - q) * (-t).exp()).ln()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn simplified_bound(stats: &[GroupStats], phi: f64) -> f64 {
    if !(phi > 0.0) {
        return 1.0;
    }
    stats
        .iter()
        .filter(|g| g.b > 0.0)
        .map(|g| {
            let r = phi * g.n as f64 / g.b;
            g.weight * (-2.0 * r * r).exp()
        })
        .sum()
}

/// Minimizes a unimodal function of `h` over a log grid, then refines by
/// golden-section search between the neighbours of the best grid point.
fn minimize_log_grid<F: Fn(f64) -> f64>(f: F, (lo, hi): (f64, f64)) -> (f64, f64) {
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (H_GRID_POINTS - 1) as f64;
    let g = |x: f64| {
        let v = f(x.exp());
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let (mut best_i, mut best_v) = (0, f64::INFINITY);
    for i in 0..H_GRID_POINTS {
        let v = g(a + step * i as f64);
        if v < best_v {
            best_i = i;
            best_v = v;
        }
    }
    let mut l = a + step * best_i.saturating_sub(1) as f64;
    let mut r = a + step * (best_i + 1).min(H_GRID_POINTS - 1) as f64;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = r - inv_phi * (r - l);
    let mut x2 = l + inv_phi * (r - l);
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..80 {
        if f1 < f2 {
            r = x2;
            x2 = x1;
            f2 = f1;
            x1 = r - inv_phi * (r - l);
            f1 = g(x1);
        } else {
            l = x1;
            x1 = x2;
            f1 = f2;
            x2 = l + inv_phi * (r - l);
            f2 = g(x2);
        }
    }
    let (x, v) = if f1 < f2 { (x1, f1) } else { (x2, f2) };
    if v < best_v {
        (x.exp(), v)
    } else {
        ((a + step * best_i as f64).exp(), best_v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub c: f64,
    pub sum_p_g: f64,
    pub sum_p_star: f64,
    /// Premiums are required but nobody is willing to pay any.
    pub total_market_failure: bool,
}

/// `c = (N_c·γ + E[Y]) / Σp^H` and `Σp* = min(c, 1)·Σp^H`.
pub fn reconcile(sum_p_h: f64, gamma: f64, e_y: f64, n_c: usize) -> Result<Reconciliation> {
    if !(sum_p_h >= 0.0) {
        return Err(Error::input(format!(
            "sum of demand premiums must be >= 0, got {sum_p_h}"
        )));
    }
    let sum_p_g = n_c as f64 * gamma + e_y;
    if sum_p_h == 0.0 {
        return Ok(Reconciliation {
            c: if sum_p_g > 0.0 { f64::INFINITY } else { 1.0 },
            sum_p_g,
            sum_p_star: 0.0,
            total_market_failure: sum_p_g > 0.0,
        });
    }
    let c = sum_p_g / sum_p_h;
    Ok(Reconciliation {
        c,
        sum_p_g,
        sum_p_star: c.min(1.0) * sum_p_h,
        total_market_failure: false,
    })
}

/// Scheme outcome for one grouping sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeSolution {
    pub phi: f64,
    pub gamma: f64,
    pub e_y: f64,
    pub sum_p_h: f64,
    pub c: f64,
    pub sum_p_star: f64,
    pub w_d_star: f64,
    pub phi_star: f64,
    pub gamma_star: f64,
    pub eps1_star: f64,
    pub eps2_star: f64,
    /// `γ* ≤ 0`: premiums do not even cover expected claims, so the refill
    /// bound is vacuous and `ε2*` is reported as one.
    pub refill_bound_vacuous: bool,
    pub total_market_failure: bool,
}

pub fn solve_phi(inputs: &BoundInputs, eps1: f64) -> Result<f64> {
    inputs.solve(eps1)
}

pub fn solve_gamma(inputs: &BoundInputs, eps2: f64) -> Result<f64> {
    inputs.solve(eps2)
}

/// `W_d* = max(N_c φ + E[Y] − Σp*, 0)` and the realized probabilities.
pub fn finalize_scheme(
    inputs: &BoundInputs,
    phi: f64,
    gamma: f64,
    sum_p_h: f64,
    rec: &Reconciliation,
) -> SchemeSolution {
    let n = inputs.n_c as f64;
    let w_d_star = (n * phi + inputs.e_y - rec.sum_p_star).max(0.0);
    let gamma_star = (rec.sum_p_star - inputs.e_y) / n;
    // algebraically φ when the deposit is positive; avoid the round-off
    let phi_star = if w_d_star > 0.0 { phi } else { gamma_star };
    let eps1_star = inputs.bound(phi_star);
    let (eps2_star, vacuous) = if gamma_star > 0.0 {
        (inputs.bound(gamma_star), false)
    } else {
        (1.0, true)
    };
    SchemeSolution {
        phi,
        gamma,
        e_y: inputs.e_y,
        sum_p_h,
        c: rec.c,
        sum_p_star: rec.sum_p_star,
        w_d_star,
        phi_star,
        gamma_star,
        eps1_star,
        eps2_star,
        refill_bound_vacuous: vacuous,
        total_market_failure: rec.total_market_failure,
    }
}

/// Full single-sample pipeline.
pub fn solve_scheme(inputs: &BoundInputs, sum_p_h: f64, eps1: f64, eps2: f64) -> Result<SchemeSolution> {
    check_epsilons(eps1, eps2)?;
    let phi = solve_phi(inputs, eps1)?;
    let gamma = solve_gamma(inputs, eps2)?;
    let rec = reconcile(sum_p_h, gamma, inputs.e_y, inputs.n_c)?;
    Ok(finalize_scheme(inputs, phi, gamma, sum_p_h, &rec))
}

/// Share of the willingness to pay actually charged when one premium per
/// municipality must serve every grouping sample: the mean of `min(c, 1)`.
pub fn common_charge_share(recs: &[Reconciliation]) -> f64 {
    if recs.is_empty() {
        return 0.0;
    }
    recs.iter().map(|r| r.c.min(1.0)).sum::<f64>() / recs.len() as f64
}

/// Solves every grouping sample at one common premium pool
/// `Σp* = mean_s min(c_s, 1)·Σp^H`, so `Σp*` does not vary across samples
/// while `φ`, `γ`, `c` and the deposit do.
pub fn solve_samplings(inputs: &[BoundInputs], sum_p_h: f64, eps1: f64, eps2: f64) -> Result<Vec<SchemeSolution>> {
    check_epsilons(eps1, eps2)?;
    let solved = inputs
        .par_iter()
        .map(|inp| {
            let phi = solve_phi(inp, eps1)?;
            let gamma = solve_gamma(inp, eps2)?;
            Ok((phi, gamma, reconcile(sum_p_h, gamma, inp.e_y, inp.n_c)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let recs: Vec<Reconciliation> = solved.iter().map(|s| s.2).collect();
    let sum_p_star = common_charge_share(&recs) * sum_p_h;
    Ok(inputs
        .iter()
        .zip(&solved)
        .map(|(inp, &(phi, gamma, rec))| {
            finalize_scheme(inp, phi, gamma, sum_p_h, &Reconciliation { sum_p_star, ..rec })
        })
        .collect())
}

/// Joint scheme for a portfolio of seismic and flood policies on the same
/// municipalities.
pub fn multi_hazard_bounds(
    seismic: &ClaimSeverity,
    flood: &ClaimSeverity,
    grouping: &GroupingSample,
    mode: BoundMode,
    sum_p_h: f64,
    eps1: f64,
    eps2: f64,
) -> Result<SchemeSolution> {
    let joint = ClaimSeverity::combine(seismic, flood)?;
    let inputs = BoundInputs::new(&joint, grouping, mode)?;
    solve_scheme(&inputs, sum_p_h, eps1, eps2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCov {
    pub mean: f64,
    pub cov: f64,
}

impl MeanCov {
    fn of(values: &[f64]) -> Self {
        let (mean, cov) = mean_cov(values);
        MeanCov { mean, cov }
    }
}

/// Field-wise mean and coefficient of variation across samplings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateSolution {
    pub n_samplings: usize,
    pub sum_p_star: MeanCov,
    pub c: MeanCov,
    pub w_d_star: MeanCov,
    pub eps1_star: MeanCov,
    pub eps2_star: MeanCov,
    pub phi_star: MeanCov,
    pub gamma_star: MeanCov,
    pub phi: MeanCov,
    pub gamma: MeanCov,
}

pub fn aggregate_over_samplings(per_sampling: &[SchemeSolution]) -> Result<AggregateSolution> {
    if per_sampling.is_empty() {
        return Err(Error::input("no samplings to aggregate"));
    }
    let f = |g: fn(&SchemeSolution) -> f64| MeanCov::of(&per_sampling.iter().map(g).collect::<Vec<_>>());
    Ok(AggregateSolution {
        n_samplings: per_sampling.len(),
        sum_p_star: f(|s| s.sum_p_star),
        c: f(|s| s.c),
        w_d_star: f(|s| s.w_d_star),
        eps1_star: f(|s| s.eps1_star),
        eps2_star: f(|s| s.eps2_star),
        phi_star: f(|s| s.phi_star),
        gamma_star: f(|s| s.gamma_star),
        phi: f(|s| s.phi),
        gamma: f(|s| s.gamma),
    })
}
