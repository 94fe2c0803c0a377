//! Expected losses per square metre, policy reimbursements, municipal
//! aggregates and Bernoulli claim severities.
//!
//! Every (municipality, class) cell is reduced to a [`LossDistribution`]: a
//! finite set of probability-weighted loss values made of atoms and the
//! nodes of a converged adaptive quadrature rule. Reimbursement kinks are
//! placed on subinterval boundaries so that any expectation of a function
//! of the loss that is smooth between kinks is integrated to the same
//! accuracy as the loss itself.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GroupingSample, StoreyClass, Typology};
use crate::hazard::{DepthDistribution, PowerLawHazard};
use crate::numerics::quadrature::{adaptive_rule, QuadOptions};
use crate::numerics::roots::bisect_increasing;
use crate::vulnerability::{invert_depth, Catalogue, DepthDamageCurve};

pub const DEFAULT_RC: f64 = 1500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Peril {
    Seismic,
    Flood,
    Multi,
}

impl Peril {
    pub fn label(self) -> &'static str {
        match self {
            Peril::Seismic => "seismic",
            Peril::Flood => "flood",
            Peril::Multi => "multi",
        }
    }
}

/// What the policy pays once the loss passes the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapConvention {
    /// `x = E` for `l ≥ E + D`.
    #[default]
    CapAtCoverage,
    /// `x = E − D` for `l ≥ E`.
    CapNetOfDeductible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub deductible: f64,
    pub max_coverage: f64,
    #[serde(default)]
    pub cap: CapConvention,
}

impl Policy {
    pub fn new(deductible: f64, max_coverage: f64) -> Result<Self> {
        Policy::with_cap(deductible, max_coverage, CapConvention::default())
    }

    pub fn with_cap(deductible: f64, max_coverage: f64, cap: CapConvention) -> Result<Self> {
        if !(deductible >= 0.0) || !deductible.is_finite() {
            return Err(Error::input(format!("deductible must be >= 0, got {deductible}")));
        }
        if !(max_coverage > 0.0) || !max_coverage.is_finite() {
            return Err(Error::input(format!(
                "maximum coverage must be > 0, got {max_coverage}"
            )));
        }
        if cap == CapConvention::CapNetOfDeductible && max_coverage <= deductible {
            return Err(Error::input("net-of-deductible cap needs E > D"));
        }
        Ok(Policy {
            deductible,
            max_coverage,
            cap,
        })
    }

    pub fn check_rc(&self, rc: f64) -> Result<()> {
        if self.deductible >= rc {
            return Err(Error::input(format!(
                "deductible {} must be below the reconstruction cost {rc}",
                self.deductible
            )));
        }
        Ok(())
    }

    /// Loss levels at which the reimbursement changes slope.
    pub fn kinks(&self) -> [f64; 2] {
        match self.cap {
            CapConvention::CapAtCoverage => [self.deductible, self.deductible + self.max_coverage],
            CapConvention::CapNetOfDeductible => [self.deductible, self.max_coverage],
        }
    }

    /// Largest possible payment per square metre.
    pub fn max_payment(&self) -> f64 {
        match self.cap {
            CapConvention::CapAtCoverage => self.max_coverage,
            CapConvention::CapNetOfDeductible => self.max_coverage - self.deductible,
        }
    }
}

/// Reimbursement per square metre for a loss per square metre.
pub fn reimbursement(loss: f64, policy: &Policy) -> f64 {
    let d = policy.deductible;
    match policy.cap {
        CapConvention::CapAtCoverage => {
            if loss <= d {
                0.0
            } else {
                (loss - d).min(policy.max_coverage)
            }
        }
        CapConvention::CapNetOfDeductible => {
            if loss <= d {
                0.0
            } else if loss < policy.max_coverage {
                loss - d
            } else {
                policy.max_coverage - d
            }
        }
    }
}

/// Every kink of a set of policies, for building shared distributions.
pub fn policy_kinks(policies: &[Policy]) -> Vec<f64> {
    let mut v: Vec<f64> = policies.iter().flat_map(|p| p.kinks()).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Annual loss per square metre of one cell as weighted support points.
#[derive(Debug, Clone, PartialEq)]
pub struct LossDistribution {
    pub rc: f64,
    pub weights: Vec<f64>,
    pub losses: Vec<f64>,
    /// `(loss level, P(loss > level))` for the kinks the distribution was
    /// built with.
    exceedance: Vec<(f64, f64)>,
    /// Support points are genuine atoms, so tail probabilities can be read
    /// off directly.
    atomic: bool,
}

impl LossDistribution {
    /// A cell that never loses anything.
    pub fn no_loss(rc: f64) -> Self {
        LossDistribution::from_atoms(rc, &[(1.0, 0.0)]).expect("valid atom")
    }

    /// A purely discrete loss law from `(probability, loss)` pairs.
    pub fn from_atoms(rc: f64, atoms: &[(f64, f64)]) -> Result<Self> {
        let mass: f64 = atoms.iter().map(|a| a.0).sum();
        if atoms.iter().any(|&(w, l)| !(w >= 0.0) || !(0.0..=rc).contains(&l)) || (mass - 1.0).abs() > 1e-12 {
            return Err(Error::input(
                "atoms need probabilities summing to one and losses in [0, RC]",
            ));
        }
        Ok(LossDistribution {
            rc,
            weights: atoms.iter().map(|a| a.0).collect(),
            losses: atoms.iter().map(|a| a.1).collect(),
            exceedance: Vec::new(),
            atomic: true,
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn expected_loss(&self) -> f64 {
        self.expect(|l| l)
    }

    pub fn expected_reimbursement(&self, policy: &Policy) -> f64 {
        self.expect(|l| reimbursement(l, policy))
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.weights.iter().zip(&self.losses).map(|(w, &l)| w * f(l)).sum()
    }

    pub fn max_loss(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.losses)
            .filter(|(w, _)| **w > 0.0)
            .map(|(_, &l)| l)
            .fold(0.0, f64::max)
    }

    /// Probability that the loss exceeds `level`; `level` must be one of
    /// the kinks given at construction (or at least the largest loss).
    pub fn prob_exceeds(&self, level: f64) -> Result<f64> {
        if level >= self.max_loss() {
            return Ok(0.0);
        }
        if self.atomic {
            return Ok(self.expect(|l| if l > level { 1.0 } else { 0.0 }));
        }
        self.exceedance
            .iter()
            .find(|(l, _)| *l == level)
            .map(|(_, p)| *p)
            .ok_or_else(|| {
                Error::Consistency(format!(
                    "loss level {level} was not prepared as a kink of this distribution"
                ))
            })
    }
}

/// Shared settings of the loss engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub rc: f64,
    /// Exponent of the damage map `(LS/N)^α`.
    pub damage_exponent: f64,
    pub quad: QuadOptions,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            rc: DEFAULT_RC,
            damage_exponent: 1.0,
            quad: QuadOptions::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rc > 0.0) || !self.rc.is_finite() {
            return Err(Error::input(format!(
                "reconstruction cost must be positive, got {}",
                self.rc
            )));
        }
        if !(self.damage_exponent > 0.0) {
            return Err(Error::input("damage exponent must be positive"));
        }
        Ok(())
    }
}

/// Loss distribution of a seismic cell. `hazard` is the bedrock law; the
/// site amplification rescales PGA before the fragility curves apply.
pub fn seismic_distribution(
    hazard: &PowerLawHazard,
    amplification: f64,
    typology: Typology,
    catalogue: &Catalogue,
    cfg: &LossConfig,
    kinks: &[f64],
) -> Result<LossDistribution> {
    cfg.validate()?;
    if !catalogue.has_typology(typology) {
        return Err(Error::input(format!(
            "fragility catalogue has no model for typology {}",
            typology.label()
        )));
    }
    let h = hazard.amplified(amplification)?;
    let rc = cfg.rc;
    let alpha = cfg.damage_exponent;
    let loss = |u: f64| rc * catalogue.loss_fraction(typology, u, alpha);
    let u0 = h.pga_min.ln();
    let u_hi = catalogue.log_saturation(typology);
    // ln-PGA density: π(x)·x = α·x^{1−β}
    let dens = |u: f64| h.alpha * ((1.0 - h.beta) * u).exp();
    let tail = |u: f64| h.exceedance(u.exp());

    if u_hi <= u0 {
        let l = loss(u0);
        let exceedance = kinks.iter().map(|&k| (k, if l > k { 1.0 } else { 0.0 })).collect();
        return Ok(LossDistribution {
            rc,
            weights: vec![1.0],
            losses: vec![l],
            exceedance,
            atomic: false,
        });
    }

    let mut breaks = catalogue.log_medians(typology);
    let mut exceedance = Vec::with_capacity(kinks.len());
    for &k in kinks {
        let zeta = if loss(u0) > k {
            u0
        } else if loss(u_hi) <= k {
            u_hi
        } else {
            bisect_increasing(&loss, k.next_up(), u0, u_hi, 1e-13, 0.0, 200)?.hi
        };
        breaks.push(zeta);
        let p = if k >= rc { 0.0 } else { tail(zeta) };
        exceedance.push((k, p));
    }

    let (rule, _) = adaptive_rule(
        |u, out| {
            let d = dens(u);
            out[0] = d;
            out[1] = d * loss(u) / rc;
        },
        2,
        u0,
        u_hi,
        &breaks,
        cfg.quad,
    )?;
    let mut weights = Vec::with_capacity(rule.len() + 1);
    let mut losses = Vec::with_capacity(rule.len() + 1);
    for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
        weights.push(w * dens(u));
        losses.push(loss(u));
    }
    // beyond saturation every curve has reached collapse
    weights.push(tail(u_hi));
    losses.push(rc * catalogue.loss_fraction(typology, f64::INFINITY, alpha));
    Ok(LossDistribution {
        rc,
        weights,
        losses,
        exceedance,
        atomic: false,
    })
}

/// Loss distribution of a flood cell: no flood with probability
/// `1 − freq_prob`, otherwise a gamma depth mapped through the curve.
pub fn flood_distribution(
    freq_prob: f64,
    depth: &DepthDistribution,
    curve: &DepthDamageCurve,
    cfg: &LossConfig,
    kinks: &[f64],
) -> Result<LossDistribution> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&freq_prob) {
        return Err(Error::input(format!("flood probability {freq_prob} outside [0, 1]")));
    }
    let rc = cfg.rc;
    if freq_prob == 0.0 {
        let mut d = LossDistribution::no_loss(rc);
        d.exceedance = kinks.iter().map(|&k| (k, 0.0)).collect();
        return Ok(d);
    }
    let loss = |delta: f64| rc * curve.value(delta) / 100.0;
    let dmax = curve.delta_max;
    let mut weights = vec![1.0 - freq_prob];
    let mut losses = vec![0.0];
    let mut exceedance = Vec::with_capacity(kinks.len());
    let mut breaks = Vec::with_capacity(kinks.len());
    for &k in kinks {
        let p = if k >= rc {
            0.0
        } else if k < 0.0 {
            1.0
        } else {
            let target = 100.0 * k / rc;
            if target < curve.value(0.0) {
                freq_prob
            } else {
                let dk = invert_depth(curve, target)?;
                breaks.push(dk);
                // the curve equals the target at dk; losses above it start there
                let dk = if loss(dk) > k {
                    dk
                } else {
                    next_above(curve, dk, target)?
                };
                freq_prob * depth.sf(dk)
            }
        };
        exceedance.push((k, p));
    }
    if dmax > 0.0 {
        let (rule, _) = adaptive_rule(
            |d, out| {
                let f = depth.pdf(d);
                out[0] = f;
                out[1] = f * curve.value(d) / 100.0;
            },
            2,
            0.0,
            dmax,
            &breaks,
            cfg.quad,
        )?;
        for (&d, &w) in rule.nodes.iter().zip(&rule.weights) {
            weights.push(freq_prob * w * depth.pdf(d));
            losses.push(loss(d));
        }
    }
    weights.push(freq_prob * depth.sf(dmax));
    losses.push(rc);
    Ok(LossDistribution {
        rc,
        weights,
        losses,
        exceedance,
        atomic: false,
    })
}

/// Right end of a flat stretch of the curve at `target`.
fn next_above(curve: &DepthDamageCurve, from: f64, target: f64) -> Result<f64> {
    if curve.value(from) > target {
        return Ok(from);
    }
    let b = bisect_increasing(
        |d| curve.value(d),
        target.next_up(),
        from,
        curve.delta_max,
        1e-12,
        0.0,
        200,
    )?;
    Ok(b.hi)
}

pub fn seismic_loss_per_sqm(
    hazard: &PowerLawHazard,
    typology: Typology,
    catalogue: &Catalogue,
    rc: f64,
    amplification: f64,
) -> Result<f64> {
    let cfg = LossConfig {
        rc,
        ..LossConfig::default()
    };
    Ok(seismic_distribution(hazard, amplification, typology, catalogue, &cfg, &[])?.expected_loss())
}

pub fn expected_reimbursement_seismic(
    hazard: &PowerLawHazard,
    typology: Typology,
    catalogue: &Catalogue,
    policy: &Policy,
    rc: f64,
    amplification: f64,
) -> Result<f64> {
    let cfg = LossConfig {
        rc,
        ..LossConfig::default()
    };
    let d = seismic_distribution(hazard, amplification, typology, catalogue, &cfg, &policy.kinks())?;
    Ok(d.expected_reimbursement(policy))
}

pub fn flood_loss_per_sqm(freq_prob: f64, depth: &DepthDistribution, curve: &DepthDamageCurve, rc: f64) -> Result<f64> {
    let cfg = LossConfig {
        rc,
        ..LossConfig::default()
    };
    Ok(flood_distribution(freq_prob, depth, curve, &cfg, &[])?.expected_loss())
}

pub fn expected_reimbursement_flood(
    freq_prob: f64,
    depth: &DepthDistribution,
    curve: &DepthDamageCurve,
    policy: &Policy,
    rc: f64,
) -> Result<f64> {
    let cfg = LossConfig {
        rc,
        ..LossConfig::default()
    };
    let d = flood_distribution(freq_prob, depth, curve, &cfg, &policy.kinks())?;
    Ok(d.expected_reimbursement(policy))
}

/// Exposure class of a cell: a structural typology or a storey class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellClass {
    Structural(Typology),
    Storeys(StoreyClass),
}

impl CellClass {
    pub fn label(self) -> &'static str {
        match self {
            CellClass::Structural(t) => t.label(),
            CellClass::Storeys(s) => s.label(),
        }
    }
}

/// One (municipality, class) cell. `muni` is a position in the
/// municipality list the cells were built from.
#[derive(Debug, Clone)]
pub struct Cell {
    pub muni: usize,
    pub class: CellClass,
    pub exposure: f64,
    pub dist: LossDistribution,
}

/// Seismic cells for every municipality and typology, in (municipality,
/// typology) order. `hazards[i]` is the bedrock hazard of `amplifications[i]`'s
/// municipality.
pub fn seismic_cells(
    exposures: &[[f64; 5]],
    hazards: &[PowerLawHazard],
    amplifications: &[f64],
    catalogue: &Catalogue,
    cfg: &LossConfig,
    kinks: &[f64],
) -> Result<Vec<Cell>> {
    if exposures.len() != hazards.len() || hazards.len() != amplifications.len() {
        return Err(Error::input("seismic inputs have mismatched lengths"));
    }
    (0..exposures.len() * 5)
        .into_par_iter()
        .map(|k| {
            let (i, t) = (k / 5, Typology::ALL[k % 5]);
            let dist =
                seismic_distribution(&hazards[i], amplifications[i], t, catalogue, cfg, kinks).map_err(
                    |e| match e {
                        Error::Numeric(m) => Error::Numeric(format!("municipality #{i}, {}: {m}", t.label())),
                        other => other,
                    },
                )?;
            Ok(Cell {
                muni: i,
                class: CellClass::Structural(t),
                exposure: exposures[i][t.index()],
                dist,
            })
        })
        .collect()
}

/// Flood cells for every municipality and storey class.
pub fn flood_cells(
    exposures: &[[f64; 3]],
    flood_probs: &[f64],
    depth: &DepthDistribution,
    curves: &crate::vulnerability::DepthDamageSet,
    cfg: &LossConfig,
    kinks: &[f64],
) -> Result<Vec<Cell>> {
    if exposures.len() != flood_probs.len() {
        return Err(Error::input("flood inputs have mismatched lengths"));
    }
    (0..exposures.len() * 3)
        .into_par_iter()
        .map(|k| {
            let (i, s) = (k / 3, StoreyClass::ALL[k % 3]);
            let dist = flood_distribution(flood_probs[i], depth, curves.curve(s), cfg, kinks)?;
            Ok(Cell {
                muni: i,
                class: CellClass::Storeys(s),
                exposure: exposures[i][s.index()],
                dist,
            })
        })
        .collect()
}

/// Expected losses per square metre and their municipal and national sums.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossSurface {
    /// `(municipality position, class label, l per m², exposure m²)`.
    pub cells: Vec<(usize, &'static str, f64, f64)>,
    pub municipal_totals: Vec<f64>,
    pub national_total: f64,
}

impl LossSurface {
    pub fn from_cells(cells: &[Cell], n_munis: usize) -> Self {
        let mut municipal_totals = vec![0.0; n_munis];
        let mut rows = Vec::with_capacity(cells.len());
        for c in cells {
            let l = c.dist.expected_loss();
            municipal_totals[c.muni] += l * c.exposure;
            rows.push((c.muni, c.class.label(), l, c.exposure));
        }
        let national_total = municipal_totals.iter().sum();
        LossSurface {
            cells: rows,
            municipal_totals,
            national_total,
        }
    }
}

/// Bernoulli claim unit: the municipality pays `a` with probability `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimUnit {
    pub muni: usize,
    pub peril: Peril,
    pub q: f64,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSeverity {
    pub n_munis: usize,
    pub units: Vec<ClaimUnit>,
}

/// Per-group summaries entering the solvency bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupStats {
    pub n: usize,
    pub weight: f64,
    pub b: f64,
    pub expected: f64,
}

impl ClaimSeverity {
    /// Builds one unit per municipality from `Σ_j M_j·E[x_j]` and the claim
    /// probability `q_c`.
    pub fn from_municipal(peril: Peril, expected_claims: &[f64], q: &[f64]) -> Result<Self> {
        if expected_claims.len() != q.len() {
            return Err(Error::input("claims and probabilities have different lengths"));
        }
        let mut units = Vec::with_capacity(q.len());
        for (i, (&ex, &qc)) in expected_claims.iter().zip(q).enumerate() {
            if !(0.0..=1.0).contains(&qc) || !(ex >= 0.0) {
                return Err(Error::input(format!(
                    "municipality #{i}: invalid claim inputs ({ex}, {qc})"
                )));
            }
            let a = if qc > 0.0 {
                ex / qc
            } else if ex > 0.0 {
                return Err(Error::Consistency(format!(
                    "municipality #{i} has expected claims {ex} but zero claim probability"
                )));
            } else {
                0.0
            };
            units.push(ClaimUnit {
                muni: i,
                peril,
                q: qc,
                a,
            });
        }
        Ok(ClaimSeverity {
            n_munis: q.len(),
            units,
        })
    }

    /// Severities of cells under a policy: `a_c = Σ_j M_j E[x_j] / q_c` with
    /// `q_c = max_j P(l_j > D)` over classes with positive exposure.
    pub fn from_cells(peril: Peril, cells: &[Cell], n_munis: usize, policy: &Policy) -> Result<Self> {
        let mut ex = vec![0.0; n_munis];
        let mut q = vec![0.0f64; n_munis];
        for c in cells {
            if c.exposure > 0.0 {
                ex[c.muni] += c.exposure * c.dist.expected_reimbursement(policy);
                q[c.muni] = q[c.muni].max(c.dist.prob_exceeds(policy.deductible)?);
            }
        }
        ClaimSeverity::from_municipal(peril, &ex, &q)
    }

    /// Two independent units per municipality.
    pub fn combine(a: &ClaimSeverity, b: &ClaimSeverity) -> Result<Self> {
        if a.n_munis != b.n_munis {
            return Err(Error::input(format!(
                "severities cover {} and {} municipalities",
                a.n_munis, b.n_munis
            )));
        }
        let units = a.units.iter().chain(&b.units).copied().collect();
        Ok(ClaimSeverity {
            n_munis: a.n_munis,
            units,
        })
    }

    pub fn expected_total(&self) -> f64 {
        self.units.iter().map(|u| u.q * u.a).sum()
    }

    pub fn max_total(&self) -> f64 {
        self.units.iter().map(|u| u.a).sum()
    }

    pub fn group_stats(&self, grouping: &GroupingSample) -> Result<Vec<GroupStats>> {
        if grouping.n_units() != self.n_munis {
            return Err(Error::input(format!(
                "grouping covers {} municipalities, severities {}",
                grouping.n_units(),
                self.n_munis
            )));
        }
        let mut per_muni_b = vec![0.0; self.n_munis];
        let mut per_muni_e = vec![0.0; self.n_munis];
        for u in &self.units {
            per_muni_b[u.muni] += u.a;
            per_muni_e[u.muni] += u.q * u.a;
        }
        Ok(grouping
            .groups
            .iter()
            .zip(&grouping.weights)
            .map(|(g, &w)| GroupStats {
                n: g.len(),
                weight: w,
                b: g.iter().map(|&i| per_muni_b[i]).sum(),
                expected: g.iter().map(|&i| per_muni_e[i]).sum(),
            })
            .collect())
    }

    /// Units of each group, for moment-generating-function bounds.
    pub fn units_by_group(&self, grouping: &GroupingSample) -> Vec<Vec<ClaimUnit>> {
        let mut of_muni: Vec<Vec<ClaimUnit>> = vec![Vec::new(); self.n_munis];
        for u in &self.units {
            of_muni[u.muni].push(*u);
        }
        grouping
            .groups
            .iter()
            .map(|g| g.iter().flat_map(|&i| of_muni[i].iter().copied()).collect())
            .collect()
    }
}
