//! Monte Carlo and exhaustive-enumeration checks of the analytic quantities.
//!
//! Every draw uses its own ChaCha stream (`set_stream(draw_index)`), so
//! results do not depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GroupingSample, Typology};
use crate::hazard::{DepthDistribution, PowerLawHazard};
use crate::loss::{reimbursement, ClaimSeverity, Policy};
use crate::scheme::{BoundInputs, BoundMode};
use crate::vulnerability::{Catalogue, DepthDamageCurve};

pub const MIN_DRAWS: usize = 10_000;
pub const MAX_ENUMERATED_UNITS: usize = 20;
pub const WILSON_Z: f64 = 1.96;

fn draw_rng(seed: u64, draw: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw);
    rng
}

/// Independent Bernoulli draws of `Y = Σ_c Bern(q_c)·a_c`.
pub fn simulate_aggregate_claims(sev: &ClaimSeverity, n_draws: usize, seed: u64) -> Result<Vec<f64>> {
    if n_draws < MIN_DRAWS {
        return Err(Error::input(format!(
            "at least {MIN_DRAWS} draws are required, got {n_draws}"
        )));
    }
    Ok((0..n_draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = draw_rng(seed, i);
            sev.units
                .iter()
                .filter(|u| rng.random::<f64>() < u.q)
                .map(|u| u.a)
                .sum()
        })
        .collect())
}

/// Sample mean and its standard error.
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    BoundRespected,
    BoundViolated,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::BoundRespected => "bound-respected",
            Verdict::BoundViolated => "bound-violated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub n_draws: usize,
    pub seed: u64,
    pub phi: f64,
    pub threshold: f64,
    pub exceedances: usize,
    pub empirical_exceedance: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub analytic_bound: f64,
    pub verdict: Verdict,
}

pub fn check_bound(
    sev: &ClaimSeverity,
    grouping: &GroupingSample,
    mode: BoundMode,
    phi: f64,
    n_draws: usize,
    seed: u64,
) -> Result<SimulationReport> {
    Ok(check_bounds(sev, grouping, mode, &[phi], n_draws, seed)?.remove(0))
}

/// Compares `P(Y > N_c·φ + E[Y])` with the analytic bound for several φ,
/// reusing one simulation of `Y`.
pub fn check_bounds(
    sev: &ClaimSeverity,
    grouping: &GroupingSample,
    mode: BoundMode,
    phis: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<SimulationReport>> {
    let cases: Vec<(&GroupingSample, f64)> = phis.iter().map(|&p| (grouping, p)).collect();
    check_samplings(sev, &cases, mode, n_draws, seed)
}

/// One simulation of `Y` checked against every `(grouping, φ)` pair. The law
/// of `Y` does not depend on the grouping, only the bounds do.
pub fn check_samplings(
    sev: &ClaimSeverity,
    cases: &[(&GroupingSample, f64)],
    mode: BoundMode,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<SimulationReport>> {
    if let Some((_, p)) = cases.iter().find(|(_, p)| !(*p > 0.0)) {
        return Err(Error::input(format!("phi must be positive, got {p}")));
    }
    let mut y = simulate_aggregate_claims(sev, n_draws, seed)?;
    y.sort_by(f64::total_cmp);
    let n_c = sev.n_munis as f64;
    let e_y = sev.expected_total();
    cases
        .iter()
        .map(|&(grouping, phi)| {
            let inputs = BoundInputs::new(sev, grouping, mode)?;
            let threshold = n_c * phi + e_y;
            let k = n_draws - y.partition_point(|&v| v <= threshold);
            let (lo, hi) = wilson_interval(k, n_draws, WILSON_Z);
            let bound = inputs.bound(phi);
            Ok(SimulationReport {
                n_draws,
                seed,
                phi,
                threshold,
                exceedances: k,
                empirical_exceedance: k as f64 / n_draws as f64,
                wilson_lo: lo,
                wilson_hi: hi,
                analytic_bound: bound,
                verdict: if lo > bound {
                    Verdict::BoundViolated
                } else {
                    Verdict::BoundRespected
                },
            })
        })
        .collect()
}

/// Exact law of `Y` as `(value, probability)` pairs sorted by value, with
/// coinciding values merged.
pub fn enumerate_small(sev: &ClaimSeverity) -> Result<Vec<(f64, f64)>> {
    let m = sev.units.len();
    if m > MAX_ENUMERATED_UNITS {
        return Err(Error::input(format!(
            "exact enumeration supports at most {MAX_ENUMERATED_UNITS} claim units, got {m}"
        )));
    }
    let mut atoms: Vec<(f64, f64)> = (0u32..1 << m)
        .map(|mask| {
            let mut y = 0.0;
            let mut p = 1.0;
            for (j, u) in sev.units.iter().enumerate() {
                if mask >> j & 1 == 1 {
                    y += u.a;
                    p *= u.q;
                } else {
                    p *= 1.0 - u.q;
                }
            }
            (y, p)
        })
        .filter(|&(_, p)| p > 0.0)
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (y, p) in atoms {
        match merged.last_mut() {
            Some(last) if last.0 == y => last.1 += p,
            _ => merged.push((y, p)),
        }
    }
    Ok(merged)
}

pub fn exact_tail(pmf: &[(f64, f64)], t: f64) -> f64 {
    pmf.iter().filter(|(y, _)| *y > t).map(|(_, p)| p).sum()
}

/// Monte Carlo mean and standard error of a loss and of its reimbursement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub loss: f64,
    pub loss_stderr: f64,
    pub reimbursement: f64,
    pub reimbursement_stderr: f64,
}

fn estimate<F>(n_draws: usize, seed: u64, policy: &Policy, draw: F) -> Result<McEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    if n_draws < MIN_DRAWS {
        return Err(Error::input(format!(
            "at least {MIN_DRAWS} draws are required, got {n_draws}"
        )));
    }
    let losses: Vec<f64> = (0..n_draws as u64)
        .into_par_iter()
        .map(|i| draw(&mut draw_rng(seed, i)))
        .collect();
    let paid: Vec<f64> = losses.iter().map(|&l| reimbursement(l, policy)).collect();
    let (loss, loss_stderr) = mean_and_stderr(&losses);
    let (reimbursement, reimbursement_stderr) = mean_and_stderr(&paid);
    Ok(McEstimate {
        loss,
        loss_stderr,
        reimbursement,
        reimbursement_stderr,
    })
}

/// Simulates PGA by inverse transform from the amplified power law.
#[allow(clippy::too_many_arguments)]
pub fn mc_seismic(
    hazard: &PowerLawHazard,
    amplification: f64,
    typology: Typology,
    catalogue: &Catalogue,
    rc: f64,
    damage_exponent: f64,
    policy: &Policy,
    n_draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    let h = hazard.amplified(amplification)?;
    estimate(n_draws, seed, policy, |rng| {
        let u = 1.0 - rng.random::<f64>();
        rc * catalogue.loss_fraction(typology, h.quantile_upper(u).ln(), damage_exponent)
    })
}

pub fn mc_flood(
    freq_prob: f64,
    depth: &DepthDistribution,
    curve: &DepthDamageCurve,
    rc: f64,
    policy: &Policy,
    n_draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    let gamma = Gamma::new(depth.shape, 1.0 / depth.rate).map_err(|e| Error::input(format!("depth law: {e}")))?;
    estimate(n_draws, seed, policy, |rng| {
        if rng.random::<f64>() < freq_prob {
            rc * curve.value(gamma.sample(rng)) / 100.0
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::Peril;

    fn sev(a: &[f64], q: &[f64]) -> ClaimSeverity {
        let ex: Vec<f64> = a.iter().zip(q).map(|(a, q)| a * q).collect();
        ClaimSeverity::from_municipal(Peril::Seismic, &ex, q).unwrap()
    }

    #[test]
    fn degenerate_probabilities() {
        let s = sev(&[1.0, 2.0], &[0.0, 0.0]);
        assert!(simulate_aggregate_claims(&s, MIN_DRAWS, 1)
            .unwrap()
            .iter()
            .all(|&y| y == 0.0));
        let s = sev(&[1.0, 2.0], &[1.0, 1.0]);
        assert!(simulate_aggregate_claims(&s, MIN_DRAWS, 1)
            .unwrap()
            .iter()
            .all(|&y| y == 3.0));
        assert!(simulate_aggregate_claims(&s, 10, 1).is_err());
    }

    #[test]
    fn three_unit_pmf_matches_enumeration() {
        let s = sev(&[1.0, 2.0, 4.0], &[0.3, 0.5, 0.1]);
        let pmf = enumerate_small(&s).unwrap();
        assert_eq!(pmf.len(), 8);
        assert!((pmf.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-15);
        let n = 200_000;
        let y = simulate_aggregate_claims(&s, n, 42).unwrap();
        for &(v, p) in &pmf {
            let freq = y.iter().filter(|&&x| x == v).count() as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * se, "{v}: {freq} vs {p}");
        }
        let (m, se) = mean_and_stderr(&y);
        assert!((m - s.expected_total()).abs() < 3.0 * se);
    }

    #[test]
    fn enumeration_mean_is_exact() {
        let a: Vec<f64> = (1..=12).map(|i| i as f64 * 0.7).collect();
        let q: Vec<f64> = (1..=12).map(|i| 0.02 * i as f64).collect();
        let s = sev(&a, &q);
        let pmf = enumerate_small(&s).unwrap();
        let mean: f64 = pmf.iter().map(|(y, p)| y * p).sum();
        assert!((mean - s.expected_total()).abs() < 1e-12);
        let one = enumerate_small(&sev(&[2.5], &[0.3])).unwrap();
        assert_eq!(one, vec![(0.0, 0.7), (2.5, 0.3)]);
        let big = sev(&[1.0; 21], &[0.1; 21]);
        assert!(enumerate_small(&big).is_err());
    }

    #[test]
    fn exact_tails_below_simplified_bound() {
        let a = [1.0, 3.0, 0.5, 2.0, 1.5, 0.7];
        let q = [0.2, 0.05, 0.4, 0.1, 0.15, 0.3];
        let s = sev(&a, &q);
        let g = GroupingSample::from_groups(0, vec![vec![0, 2, 4], vec![1, 3, 5]], 6).unwrap();
        let inp = BoundInputs::new(&s, &g, BoundMode::SimplifiedBernoulli).unwrap();
        let pmf = enumerate_small(&s).unwrap();
        for i in 1..60 {
            let phi = 0.025 * i as f64;
            let t = 6.0 * phi + s.expected_total();
            assert!(exact_tail(&pmf, t) <= inp.bound(phi), "phi = {phi}");
        }
    }

    #[test]
    fn single_unit_bound_check() {
        let s = sev(&[1.0], &[0.5]);
        let g = GroupingSample::from_groups(0, vec![vec![0]], 1).unwrap();
        let r = check_bound(&s, &g, BoundMode::SimplifiedBernoulli, 0.5, MIN_DRAWS, 3).unwrap();
        assert_eq!(r.exceedances, 0);
        assert!((r.analytic_bound - 0.6065306597).abs() < 1e-9);
        assert_eq!(r.verdict, Verdict::BoundRespected);
        // beyond the maximum total claim
        let r = check_bound(&s, &g, BoundMode::SimplifiedBernoulli, 2.0, MIN_DRAWS, 3).unwrap();
        assert_eq!(r.empirical_exceedance, 0.0);
        assert!(r.analytic_bound > 0.0);
        assert!(check_bound(&s, &g, BoundMode::SimplifiedBernoulli, 0.0, MIN_DRAWS, 3).is_err());
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(0, 100, WILSON_Z);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.036994).abs() < 1e-5);
        let (lo, hi) = wilson_interval(50, 100, WILSON_Z);
        assert!((lo - 0.403832).abs() < 1e-5 && (hi - 0.596168).abs() < 1e-5);
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let s = sev(&[1.0, 2.0, 4.0], &[0.3, 0.5, 0.1]);
        let a = simulate_aggregate_claims(&s, MIN_DRAWS, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_aggregate_claims(&s, MIN_DRAWS, 9).unwrap());
        assert_eq!(a, b);
    }
}
