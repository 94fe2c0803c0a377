//! End-to-end evaluation of a bundle: hazard fits, loss cells, demand
//! quotes, claim severities and the solvency scheme per policy.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{sample_groupings, FloodCluster, GroupingSample, Municipality, DEFAULT_R_KM};
use crate::hazard::{fit_depth_gamma, fit_flood_frequency, fit_power_law, DepthFit, FloodFrequency, PowerLawHazard};
use crate::io::Bundle;
use crate::loss::{
    flood_cells, policy_kinks, seismic_cells, Cell, CellClass, ClaimSeverity, LossConfig, Peril, Policy,
};
use crate::pricing::{solve_wtp, DemandQuote};
use crate::scheme::{
    aggregate_over_samplings, check_epsilons, solve_samplings, AggregateSolution, BoundInputs, BoundMode,
    SchemeSolution, DEFAULT_EPS1, DEFAULT_EPS2, DEFAULT_SAMPLINGS,
};

/// The four (deductible, maximum coverage) pairs of the default report.
pub fn policy_grid() -> Vec<Policy> {
    [(0.0, 1500.0), (0.0, 1200.0), (200.0, 1500.0), (200.0, 1200.0)]
        .iter()
        .map(|&(d, e)| Policy::new(d, e).expect("valid grid policy"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FloodFits {
    pub frequencies: BTreeMap<String, FloodFrequency>,
    pub depth: DepthFit,
}

pub fn fit_flood(bundle: &Bundle) -> Result<FloodFits> {
    let rec = bundle
        .flood
        .as_ref()
        .ok_or_else(|| Error::input("bundle has no flood records"))?;
    let mut frequencies = BTreeMap::new();
    for c in [FloodCluster::P1, FloodCluster::P2] {
        let counts: Vec<u64> = rec
            .counts
            .iter()
            .filter(|r| r.cluster == c)
            .map(|r| r.n_events)
            .collect();
        let row = rec.clusters.iter().find(|r| r.cluster == c);
        let used = bundle.municipalities.iter().any(|m| m.cluster == c);
        match (counts.is_empty(), row) {
            (false, Some(row)) => {
                let (size, prob) =
                    fit_flood_frequency(&counts).map_err(|e| Error::Fit(format!("cluster {}: {e}", c.label())))?;
                frequencies.insert(
                    c.label().to_string(),
                    FloodFrequency::new(size, prob, row.mean_flooded_munis, row.cluster_size)?,
                );
            }
            _ if used => {
                return Err(Error::input(format!(
                    "cluster {} has municipalities but lacks yearly counts or a cluster row",
                    c.label()
                )))
            }
            _ => {}
        }
    }
    let depths: Vec<f64> = rec.depths.iter().map(|d| d.depth_m).collect();
    Ok(FloodFits {
        frequencies,
        depth: fit_depth_gamma(&depths)?,
    })
}

pub fn flood_probability(m: &Municipality, fits: &FloodFits) -> f64 {
    match (m.cluster, m.p3_extent) {
        (FloodCluster::NoCluster, _) | (_, None) => 0.0,
        (c, Some(ext)) => fits
            .frequencies
            .get(c.label())
            .map_or(0.0, |f| f.prob_at_least_one_flood(ext)),
    }
}

/// Municipalities with complete inputs for a peril, and their loss cells.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub peril: Peril,
    pub municipalities: Vec<Municipality>,
    pub dropped: Vec<String>,
    pub hazards: Vec<PowerLawHazard>,
    pub flood_fits: Option<FloodFits>,
    pub seismic: Option<Vec<Cell>>,
    pub flood: Option<Vec<Cell>>,
    pub cfg: LossConfig,
}

impl Prepared {
    pub fn n(&self) -> usize {
        self.municipalities.len()
    }
}

/// Fits the hazards and builds every loss cell. `policies` lists the
/// contracts that will be evaluated, so their kinks are resolved exactly.
pub fn prepare(bundle: &Bundle, peril: Peril, cfg: &LossConfig, policies: &[Policy]) -> Result<Prepared> {
    bundle.require(peril)?;
    cfg.validate()?;
    for p in policies {
        p.check_rc(cfg.rc)?;
    }
    let seismic = matches!(peril, Peril::Seismic | Peril::Multi);
    let flood = matches!(peril, Peril::Flood | Peril::Multi);
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for m in &bundle.municipalities {
        let ok = (!seismic || bundle.exceedance.contains_key(&m.id)) && (!flood || m.p3_extent.is_some());
        if ok {
            kept.push(m.clone());
        } else {
            dropped.push(m.id.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::input(format!(
            "no municipality has complete {} inputs",
            peril.label()
        )));
    }
    let kinks = policy_kinks(policies);

    let hazards: Vec<PowerLawHazard> = if seismic {
        kept.iter()
            .map(|m| fit_power_law(&bundle.exceedance[&m.id]).map_err(|e| Error::Fit(format!("{}: {e}", m.id))))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let seismic_cells = if seismic {
        let catalogue = bundle.catalogue()?;
        let exposures: Vec<[f64; 5]> = kept.iter().map(|m| m.structural).collect();
        let amps: Vec<f64> = kept.iter().map(|m| m.amplification).collect();
        Some(seismic_cells(&exposures, &hazards, &amps, &catalogue, cfg, &kinks)?)
    } else {
        None
    };

    let (flood_fits, flood_cells) = if flood {
        let fits = fit_flood(bundle)?;
        let curves = bundle.depth_damage()?;
        let exposures: Vec<[f64; 3]> = kept.iter().map(|m| m.storeys).collect();
        let probs: Vec<f64> = kept.iter().map(|m| flood_probability(m, &fits)).collect();
        let cells = flood_cells(&exposures, &probs, &fits.depth.dist, &curves, cfg, &kinks)?;
        (Some(fits), Some(cells))
    } else {
        (None, None)
    };

    Ok(Prepared {
        peril,
        municipalities: kept,
        dropped,
        hazards,
        flood_fits,
        seismic: seismic_cells,
        flood: flood_cells,
        cfg: *cfg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellQuote {
    pub muni: usize,
    pub peril: Peril,
    pub class: CellClass,
    pub exposure: f64,
    pub expected_loss: f64,
    pub expected_reimbursement: f64,
    pub quote: DemandQuote,
}

/// Demand and claims of one policy on a prepared portfolio.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub policy: Policy,
    pub quotes: Vec<CellQuote>,
    /// Willingness to pay summed over each municipality's exposure.
    pub municipal_p_h: Vec<f64>,
    pub sum_p_h: f64,
    pub severity: ClaimSeverity,
}

fn quote_cells(peril: Peril, cells: &[Cell], policy: &Policy) -> Result<Vec<CellQuote>> {
    cells
        .par_iter()
        .map(|c| {
            Ok(CellQuote {
                muni: c.muni,
                peril,
                class: c.class,
                exposure: c.exposure,
                expected_loss: c.dist.expected_loss(),
                expected_reimbursement: c.dist.expected_reimbursement(policy),
                quote: solve_wtp(&c.dist, policy)?,
            })
        })
        .collect()
}

fn single_peril(prep: &Prepared, peril: Peril, policy: &Policy) -> Result<PolicyEvaluation> {
    let cells = match peril {
        Peril::Seismic => prep.seismic.as_ref(),
        Peril::Flood => prep.flood.as_ref(),
        Peril::Multi => None,
    }
    .ok_or_else(|| Error::input(format!("portfolio was not prepared for the {} peril", peril.label())))?;
    let quotes = quote_cells(peril, cells, policy)?;
    let mut municipal_p_h = vec![0.0; prep.n()];
    for q in &quotes {
        municipal_p_h[q.muni] += q.exposure * q.quote.p_h;
    }
    let sum_p_h = municipal_p_h.iter().sum();
    let severity = ClaimSeverity::from_cells(peril, cells, prep.n(), policy)?;
    Ok(PolicyEvaluation {
        policy: *policy,
        quotes,
        municipal_p_h,
        sum_p_h,
        severity,
    })
}

pub fn evaluate_policy(prep: &Prepared, peril: Peril, policy: &Policy) -> Result<PolicyEvaluation> {
    if peril != Peril::Multi {
        return single_peril(prep, peril, policy);
    }
    let s = single_peril(prep, Peril::Seismic, policy)?;
    let f = single_peril(prep, Peril::Flood, policy)?;
    Ok(PolicyEvaluation {
        policy: *policy,
        municipal_p_h: s
            .municipal_p_h
            .iter()
            .zip(&f.municipal_p_h)
            .map(|(a, b)| a + b)
            .collect(),
        sum_p_h: s.sum_p_h + f.sum_p_h,
        severity: ClaimSeverity::combine(&s.severity, &f.severity)?,
        quotes: s.quotes.into_iter().chain(f.quotes).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub eps1: f64,
    pub eps2: f64,
    pub r_km: f64,
    pub samplings: usize,
    pub seed: u64,
    pub mode: BoundMode,
}

impl Default for SchemeParams {
    fn default() -> Self {
        SchemeParams {
            eps1: DEFAULT_EPS1,
            eps2: DEFAULT_EPS2,
            r_km: DEFAULT_R_KM,
            samplings: DEFAULT_SAMPLINGS,
            seed: crate::synth::DEFAULT_SEED,
            mode: BoundMode::SimplifiedBernoulli,
        }
    }
}

impl SchemeParams {
    pub fn validate(&self) -> Result<()> {
        check_epsilons(self.eps1, self.eps2)?;
        if !(self.r_km > 0.0) {
            return Err(Error::input(format!("r must be positive, got {}", self.r_km)));
        }
        if self.samplings == 0 {
            return Err(Error::input("at least one sampling is required"));
        }
        Ok(())
    }

    pub fn groupings(&self, munis: &[Municipality]) -> Result<Vec<GroupingSample>> {
        self.validate()?;
        sample_groupings(munis, self.r_km, self.samplings, self.seed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SchemeRun {
    pub per_sampling: Vec<SchemeSolution>,
    pub aggregate: AggregateSolution,
}

pub fn run_scheme(
    severity: &ClaimSeverity,
    sum_p_h: f64,
    groupings: &[GroupingSample],
    params: &SchemeParams,
) -> Result<SchemeRun> {
    params.validate()?;
    let inputs = groupings
        .par_iter()
        .map(|g| BoundInputs::new(severity, g, params.mode))
        .collect::<Result<Vec<_>>>()?;
    let per_sampling = solve_samplings(&inputs, sum_p_h, params.eps1, params.eps2)?;
    let aggregate = aggregate_over_samplings(&per_sampling)?;
    Ok(SchemeRun {
        per_sampling,
        aggregate,
    })
}

/// Premium actually charged per municipality, `Σp*/Σp^H · p^H`.
pub fn charged_premiums(eval: &PolicyEvaluation, run: &SchemeRun) -> Vec<f64> {
    let share = match run.per_sampling.first() {
        Some(s) if s.sum_p_h > 0.0 => s.sum_p_star / s.sum_p_h,
        _ => 0.0,
    };
    eval.municipal_p_h.iter().map(|p| p * share).collect()
}
