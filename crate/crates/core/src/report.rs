//! Text, CSV, JSON and GeoJSON renderings of assessments, schemes and
//! simulation checks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Result;
use crate::geo::{GroupingSample, Municipality};
use crate::io::csv_bytes;
use crate::loss::{Cell, ClaimSeverity, Peril, Policy};
use crate::oracle::SimulationReport;
use crate::pipeline::{CellQuote, SchemeParams};
use crate::scheme::{AggregateSolution, MeanCov, SchemeSolution};

const MLN: f64 = 1e6;

pub fn mean_cov_cell(m: &MeanCov, scale: f64, digits: usize) -> String {
    format!("{:.*} ({:.3})", digits, m.mean / scale, m.cov)
}

/// Everything `simulate` needs to re-check a scheme, plus the results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeDocument {
    pub peril: Peril,
    pub params: SchemeParams,
    pub rc: f64,
    pub municipality_ids: Vec<String>,
    pub dropped: Vec<String>,
    pub groupings: Vec<GroupingSample>,
    pub policies: Vec<PolicyResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: Policy,
    pub sum_p_h: f64,
    pub severity: ClaimSeverity,
    /// φ solved at `ε1` for each grouping sample.
    pub phi: Vec<f64>,
    /// Results only; non-finite values are written as null, so they are not
    /// read back.
    #[serde(skip_deserializing, default)]
    pub per_sampling: Vec<SchemeSolution>,
    #[serde(skip_deserializing, default)]
    pub aggregate: Option<AggregateSolution>,
}

pub fn scheme_table(doc: &SchemeDocument) -> String {
    let p = &doc.params;
    let mut s = String::new();
    let _ = writeln!(s, "Public-private {} insurance scheme", doc.peril.label());
    let _ = writeln!(
        s,
        "eps1 = {}, eps2 = {}, r = {} km, {} samplings (seed {}), {} bound",
        p.eps1,
        p.eps2,
        p.r_km,
        p.samplings,
        p.seed,
        p.mode.label()
    );
    let _ = writeln!(
        s,
        "municipalities: {} (dropped {})",
        doc.municipality_ids.len(),
        doc.dropped.len()
    );
    let _ = writeln!(
        s,
        "amounts in millions of euro; cells show mean (coefficient of variation)"
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:>6} {:>7} | {:>22} {:>16} {:>22} {:>16} {:>16}",
        "D", "E", "sum p*", "c", "W_d*", "eps1*", "eps2*"
    );
    for r in &doc.policies {
        let Some(a) = &r.aggregate else { continue };
        let _ = writeln!(
            s,
            "{:>6} {:>7} | {:>22} {:>16} {:>22} {:>16} {:>16}",
            r.policy.deductible,
            r.policy.max_coverage,
            mean_cov_cell(&a.sum_p_star, MLN, 3),
            mean_cov_cell(&a.c, 1.0, 3),
            mean_cov_cell(&a.w_d_star, MLN, 3),
            mean_cov_cell(&a.eps1_star, 1.0, 3),
            mean_cov_cell(&a.eps2_star, 1.0, 3),
        );
    }
    let flagged: Vec<String> = doc
        .policies
        .iter()
        .filter(|r| {
            r.per_sampling
                .iter()
                .any(|x| x.refill_bound_vacuous || x.total_market_failure)
        })
        .map(|r| format!("D={} E={}", r.policy.deductible, r.policy.max_coverage))
        .collect();
    if !flagged.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "premiums below expected claims (eps2* reported as 1) for: {}",
            flagged.join(", ")
        );
    }
    s
}

#[derive(Serialize)]
struct QuoteRow<'a> {
    municipality_id: &'a str,
    peril: &'static str,
    class: &'static str,
    deductible: f64,
    max_coverage: f64,
    exposure_sqm: f64,
    expected_loss_per_sqm: f64,
    expected_reimbursement_per_sqm: f64,
    p_h_per_sqm: f64,
    residual: f64,
    flag: crate::pricing::WtpFlag,
}

pub fn quotes_csv(munis: &[Municipality], quotes: &[(Policy, Vec<CellQuote>)]) -> Result<Vec<u8>> {
    let rows: Vec<QuoteRow> = quotes
        .iter()
        .flat_map(|(policy, qs)| {
            qs.iter().map(move |q| QuoteRow {
                municipality_id: &munis[q.muni].id,
                peril: q.peril.label(),
                class: q.class.label(),
                deductible: policy.deductible,
                max_coverage: policy.max_coverage,
                exposure_sqm: q.exposure,
                expected_loss_per_sqm: q.expected_loss,
                expected_reimbursement_per_sqm: q.expected_reimbursement,
                p_h_per_sqm: q.quote.p_h,
                residual: q.quote.residual,
                flag: q.quote.flag,
            })
        })
        .collect();
    csv_bytes(&rows)
}

#[derive(Serialize)]
struct PremiumRow<'a> {
    municipality_id: &'a str,
    name: &'a str,
    deductible: f64,
    max_coverage: f64,
    p_h_eur: f64,
    p_star_eur: f64,
}

/// `premiums[k][i]` is `(p^H, p*)` of municipality `i` under `policies[k]`.
pub fn premiums_csv(munis: &[Municipality], policies: &[Policy], premiums: &[Vec<(f64, f64)>]) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for (policy, per_muni) in policies.iter().zip(premiums) {
        for (m, &(p_h, p_star)) in munis.iter().zip(per_muni) {
            rows.push(PremiumRow {
                municipality_id: &m.id,
                name: &m.name,
                deductible: policy.deductible,
                max_coverage: policy.max_coverage,
                p_h_eur: p_h,
                p_star_eur: p_star,
            });
        }
    }
    csv_bytes(&rows)
}

pub fn policy_key(p: &Policy) -> String {
    format!("D{}_E{}", p.deductible, p.max_coverage)
}

pub fn premiums_geojson(munis: &[Municipality], policies: &[Policy], premiums: &[Vec<(f64, f64)>]) -> String {
    let features: Vec<serde_json::Value> = munis
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut props = serde_json::Map::new();
            props.insert("id".into(), json!(m.id));
            props.insert("name".into(), json!(m.name));
            for (p, per_muni) in policies.iter().zip(premiums) {
                props.insert(format!("p_star_{}", policy_key(p)), json!(per_muni[i].1));
                props.insert(format!("p_h_{}", policy_key(p)), json!(per_muni[i].0));
            }
            json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [m.lon, m.lat] },
                "properties": props,
            })
        })
        .collect();
    let doc = json!({ "type": "FeatureCollection", "features": features });
    serde_json::to_string_pretty(&doc).expect("json values serialize") + "\n"
}

/// Per-municipality expected losses of one peril.
pub struct LossTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: String,
    pub national_total: f64,
}

pub fn loss_table(munis: &[Municipality], peril: Peril, cells: &[Cell]) -> LossTable {
    let classes: Vec<&'static str> = {
        let mut v: Vec<&'static str> = Vec::new();
        for c in cells {
            if !v.contains(&c.class.label()) {
                v.push(c.class.label());
            }
        }
        v
    };
    let mut header = vec![
        "municipality_id".to_string(),
        "name".to_string(),
        "expected_loss_eur".to_string(),
    ];
    header.extend(classes.iter().map(|c| format!("l_{c}")));
    let mut per_muni: Vec<Vec<f64>> = vec![vec![0.0; classes.len()]; munis.len()];
    let mut totals = vec![0.0; munis.len()];
    let mut max_l = (f64::NEG_INFINITY, 0usize, "");
    for c in cells {
        let l = c.dist.expected_loss();
        let k = classes
            .iter()
            .position(|x| *x == c.class.label())
            .expect("class listed");
        per_muni[c.muni][k] = l;
        totals[c.muni] += l * c.exposure;
        if c.exposure > 0.0 && l > max_l.0 {
            max_l = (l, c.muni, c.class.label());
        }
    }
    let rows = munis
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut r = vec![m.id.clone(), m.name.clone(), totals[i].to_string()];
            r.extend(per_muni[i].iter().map(|v| v.to_string()));
            r
        })
        .collect();
    let national_total: f64 = totals.iter().sum();
    let (imax, lmax) = totals.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
    );
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "{} expected annual losses, {} municipalities",
        peril.label(),
        munis.len()
    );
    if max_l.0.is_finite() {
        let _ = writeln!(
            summary,
            "maximum expected loss per square metre: {:.4} euro ({}, {})",
            max_l.0, munis[max_l.1].id, max_l.2
        );
    } else {
        let _ = writeln!(summary, "maximum expected loss per square metre: none (no exposure)");
    }
    let _ = writeln!(
        summary,
        "maximum municipal expected loss: {:.6} Mln euro ({})",
        lmax / MLN,
        munis[imax].id
    );
    let _ = writeln!(summary, "national total: {:.6} Mln euro", national_total / MLN);
    LossTable {
        header,
        rows,
        summary,
        national_total,
    }
}

#[derive(Serialize)]
struct SimulationRow {
    deductible: f64,
    max_coverage: f64,
    sampling: usize,
    grouping_seed: u64,
    phi: f64,
    threshold: f64,
    n_draws: usize,
    exceedances: usize,
    empirical: f64,
    wilson_lo: f64,
    wilson_hi: f64,
    bound: f64,
    verdict: &'static str,
}

pub fn simulation_csv(rows: &[(Policy, usize, u64, SimulationReport)]) -> Result<Vec<u8>> {
    let out: Vec<SimulationRow> = rows
        .iter()
        .map(|(p, i, seed, r)| SimulationRow {
            deductible: p.deductible,
            max_coverage: p.max_coverage,
            sampling: *i,
            grouping_seed: *seed,
            phi: r.phi,
            threshold: r.threshold,
            n_draws: r.n_draws,
            exceedances: r.exceedances,
            empirical: r.empirical_exceedance,
            wilson_lo: r.wilson_lo,
            wilson_hi: r.wilson_hi,
            bound: r.analytic_bound,
            verdict: r.verdict.label(),
        })
        .collect();
    csv_bytes(&out)
}
