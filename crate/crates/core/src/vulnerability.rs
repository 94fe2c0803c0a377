//! Structural vulnerability: lognormal fragility curves per limit state,
//! the monetary damage map RC(LS), and clamped monotone depth-damage
//! polynomials per storey class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{StoreyClass, Typology};
use crate::numerics::roots::bisect_increasing;
use crate::numerics::std_normal_cdf;

const BUILTIN_CATALOGUE: &str = include_str!("../assets/fragility_catalogue.toml");
const BUILTIN_DEPTH_DAMAGE: &str = include_str!("../assets/depth_damage.csv");

/// Quantile multiplier beyond which every curve is treated as saturated
/// (Φ(8.3) differs from one by about 5e-17).
pub const SATURATION_Z: f64 = 8.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Structure {
    M,
    RC,
    A,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Load {
    Gravity,
    Seismic,
}

/// Catalogue rows used by each exposure typology.
pub fn typology_models(t: Typology) -> (Structure, Load) {
    match t {
        Typology::RcGravity => (Structure::RC, Load::Gravity),
        Typology::RcSeismic => (Structure::RC, Load::Seismic),
        Typology::OtherGravity => (Structure::A, Load::Gravity),
        Typology::OtherSeismic => (Structure::A, Load::Seismic),
        Typology::Masonry => (Structure::M, Load::Seismic),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragilityModel {
    pub id: String,
    #[serde(default)]
    pub source: String,
    pub structure: Structure,
    pub load: Load,
    /// Limit-state count as stated by the catalogue; the parameter rows are
    /// authoritative when the two disagree.
    pub n_limit_states: usize,
    /// `(μ, σ)` of ln PGA per limit state, lightest damage first.
    pub params: Vec<(f64, f64)>,
}

impl FragilityModel {
    pub fn n(&self) -> usize {
        self.params.len()
    }

    /// Unordered lognormal exceedance probability of limit state `ls`
    /// (1-based); zero for `ls = N + 1`.
    pub fn raw_prob(&self, ls: usize, pga: f64) -> Result<f64> {
        let n = self.n();
        if ls == 0 || ls > n + 1 {
            return Err(Error::input(format!("limit state {ls} outside 1..={}", n + 1)));
        }
        if !(pga > 0.0) {
            return Err(Error::input(format!("PGA must be positive, got {pga}")));
        }
        if ls == n + 1 {
            return Ok(0.0);
        }
        let (mu, sigma) = self.params[ls - 1];
        Ok(std_normal_cdf((pga.ln() - mu) / sigma))
    }

    /// Probabilities of reaching each limit state at `ln_pga`, made
    /// nonincreasing in the limit state by `P̃_LS = max_{k ≥ LS} P_k`.
    pub fn ordered_probs(&self, ln_pga: f64, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.params.iter().map(|(mu, s)| std_normal_cdf((ln_pga - mu) / s)));
        for i in (0..out.len().saturating_sub(1)).rev() {
            out[i] = out[i].max(out[i + 1]);
        }
    }

    fn median_order_ok(&self) -> bool {
        self.params.windows(2).all(|w| w[0].0 <= w[1].0)
    }

    /// Expected damage as a fraction of RC at a given ln PGA.
    pub fn loss_fraction(&self, ln_pga: f64, alpha: f64, buf: &mut Vec<f64>) -> f64 {
        self.ordered_probs(ln_pga, buf);
        let n = buf.len();
        let mut acc = 0.0;
        for ls in 1..=n {
            let next = if ls < n { buf[ls] } else { 0.0 };
            acc += damage_fraction_unchecked(ls, n, alpha) * (buf[ls - 1] - next);
        }
        acc
    }
}

fn damage_fraction_unchecked(ls: usize, n: usize, alpha: f64) -> f64 {
    if alpha == 1.0 {
        ls as f64 / n as f64
    } else {
        (ls as f64 / n as f64).powf(alpha)
    }
}

/// Probability of reaching limit state `ls` at `pga`, after ordering the
/// curves; exactly zero for `ls = N + 1`.
pub fn fragility_prob(model: &FragilityModel, ls: usize, pga: f64) -> Result<f64> {
    model.raw_prob(ls, pga)?;
    if ls == model.n() + 1 {
        return Ok(0.0);
    }
    let mut buf = Vec::new();
    model.ordered_probs(pga.ln(), &mut buf);
    Ok(buf[ls - 1])
}

/// Share of reconstruction cost lost at limit state `ls`: `(ls/N)^α`.
pub fn damage_fraction(model: &FragilityModel, ls: usize, alpha: f64) -> Result<f64> {
    if ls == 0 || ls > model.n() {
        return Err(Error::input(format!("limit state {ls} outside 1..={}", model.n())));
    }
    Ok(damage_fraction_unchecked(ls, model.n(), alpha))
}

/// Non-fatal findings collected while loading a catalogue.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    /// `(model id, stated N_LS, printed rows)`.
    pub row_count_mismatches: Vec<(String, usize, usize)>,
    /// `(model id, lighter limit state, PGA in g)` where the raw curve of a
    /// heavier state lies above the lighter one.
    pub crossings: Vec<(String, usize, f64)>,
}

#[derive(Debug, Deserialize)]
struct CatalogueFile {
    model: Vec<FragilityModel>,
}

#[derive(Debug, Clone)]
pub struct Catalogue {
    pub models: Vec<FragilityModel>,
    by_typology: [Vec<usize>; 5],
    pub report: LoadReport,
}

impl Catalogue {
    pub fn builtin() -> Self {
        Catalogue::from_toml_str(BUILTIN_CATALOGUE).expect("shipped catalogue is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: CatalogueFile = toml::from_str(s).map_err(|e| Error::input(format!("fragility catalogue: {e}")))?;
        Catalogue::new(file.model)
    }

    pub fn new(models: Vec<FragilityModel>) -> Result<Self> {
        let mut report = LoadReport::default();
        for m in &models {
            if m.params.is_empty() {
                return Err(Error::input(format!("model {} has no limit states", m.id)));
            }
            if let Some((mu, s)) = m
                .params
                .iter()
                .find(|(mu, s)| !(*s > 0.0) || !mu.is_finite() || !s.is_finite())
            {
                return Err(Error::input(format!(
                    "model {} has invalid parameters ({mu}, {s})",
                    m.id
                )));
            }
            if !m.median_order_ok() {
                return Err(Error::input(format!(
                    "model {}: limit-state medians are not in increasing order",
                    m.id
                )));
            }
            if m.n_limit_states != m.n() {
                report
                    .row_count_mismatches
                    .push((m.id.clone(), m.n_limit_states, m.n()));
            }
            for ls in 1..m.n() {
                if let Some(pga) = first_crossing(m, ls) {
                    report.crossings.push((m.id.clone(), ls, pga));
                }
            }
        }
        let mut by_typology: [Vec<usize>; 5] = Default::default();
        for t in Typology::ALL {
            let (st, load) = typology_models(t);
            by_typology[t.index()] = models
                .iter()
                .enumerate()
                .filter(|(_, m)| m.structure == st && m.load == load)
                .map(|(i, _)| i)
                .collect();
        }
        Ok(Catalogue {
            models,
            by_typology,
            report,
        })
    }

    pub fn models_for(&self, t: Typology) -> impl Iterator<Item = &FragilityModel> {
        self.by_typology[t.index()].iter().map(|&i| &self.models[i])
    }

    pub fn has_typology(&self, t: Typology) -> bool {
        !self.by_typology[t.index()].is_empty()
    }

    /// Average expected damage fraction over the typology's models.
    pub fn loss_fraction(&self, t: Typology, ln_pga: f64, alpha: f64) -> f64 {
        let idx = &self.by_typology[t.index()];
        if idx.is_empty() {
            return 0.0;
        }
        let mut buf = Vec::with_capacity(8);
        let sum: f64 = idx
            .iter()
            .map(|&i| self.models[i].loss_fraction(ln_pga, alpha, &mut buf))
            .sum();
        sum / idx.len() as f64
    }

    /// Medians (ln g) of every curve used by the typology, sorted.
    pub fn log_medians(&self, t: Typology) -> Vec<f64> {
        let mut v: Vec<f64> = self.models_for(t).flat_map(|m| m.params.iter().map(|p| p.0)).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// ln PGA above which every curve of the typology is saturated.
    pub fn log_saturation(&self, t: Typology) -> f64 {
        self.models_for(t)
            .flat_map(|m| m.params.iter().map(|(mu, s)| mu + SATURATION_Z * s))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// ln PGA below which every curve of the typology is negligible.
    pub fn log_floor(&self, t: Typology) -> f64 {
        self.models_for(t)
            .flat_map(|m| m.params.iter().map(|(mu, s)| mu - SATURATION_Z * s))
            .fold(f64::INFINITY, f64::min)
    }
}

fn first_crossing(m: &FragilityModel, ls: usize) -> Option<f64> {
    let (mu1, s1) = m.params[ls - 1];
    let (mu2, s2) = m.params[ls];
    (0..=1400).map(|i| -9.0 + 0.01 * i as f64).find_map(|x| {
        let p1 = std_normal_cdf((x - mu1) / s1);
        let p2 = std_normal_cdf((x - mu2) / s2);
        (p2 > p1 + 1e-12).then(|| x.exp())
    })
}

/// Percent damage as a clamped, monotone polynomial of water depth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthDamageCurve {
    pub storeys: StoreyClass,
    /// Polynomial coefficients, constant term first (degree ≤ 3).
    pub coefficients: Vec<f64>,
    pub delta_max: f64,
    #[serde(skip)]
    critical: Vec<f64>,
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, k| acc * x + k)
}

impl DepthDamageCurve {
    /// Builds the curve and derives `delta_max`, the first depth at which
    /// the monotone envelope reaches 100.
    pub fn new(storeys: StoreyClass, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() || coefficients.len() > 4 {
            return Err(Error::input("depth-damage polynomial must have degree 0 to 3"));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("depth-damage coefficients must be finite"));
        }
        let mut critical = derivative_roots(&coefficients);
        critical.retain(|&x| x > 0.0);
        critical.sort_by(f64::total_cmp);
        let mut curve = DepthDamageCurve {
            storeys,
            coefficients,
            delta_max: f64::INFINITY,
            critical,
        };
        if curve.envelope(0.0) >= 100.0 {
            curve.delta_max = 0.0;
            return Ok(curve);
        }
        let mut hi = 1.0;
        while curve.envelope(hi) < 100.0 {
            hi *= 2.0;
            if hi > 1e4 {
                return Err(Error::input(format!(
                    "depth-damage curve for {} never reaches 100%",
                    storeys.label()
                )));
            }
        }
        let b = bisect_increasing(|d| curve.envelope(d), 100.0, 0.0, hi, 1e-13, 0.0, 200)?;
        curve.delta_max = b.hi;
        Ok(curve)
    }

    /// Running maximum of the polynomial over `[0, depth]`, clamped to [0, 100].
    fn envelope(&self, depth: f64) -> f64 {
        let mut v = poly(&self.coefficients, depth).max(poly(&self.coefficients, 0.0));
        for &c in self.critical.iter().take_while(|&&c| c < depth) {
            v = v.max(poly(&self.coefficients, c));
        }
        v.clamp(0.0, 100.0)
    }

    /// Percent damage at `depth` metres (no input check).
    pub fn value(&self, depth: f64) -> f64 {
        if depth >= self.delta_max {
            100.0
        } else {
            self.envelope(depth.max(0.0))
        }
    }
}

fn derivative_roots(c: &[f64]) -> Vec<f64> {
    match c.len() {
        3 if c[2] != 0.0 => vec![-c[1] / (2.0 * c[2])],
        4 => {
            let (a, b, cc) = (3.0 * c[3], 2.0 * c[2], c[1]);
            if a == 0.0 {
                return derivative_roots(&c[..3]);
            }
            let disc = b * b - 4.0 * a * cc;
            if disc < 0.0 {
                Vec::new()
            } else {
                let s = disc.sqrt();
                vec![(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)]
            }
        }
        _ => Vec::new(),
    }
}

pub fn depth_damage(curve: &DepthDamageCurve, depth: f64) -> Result<f64> {
    if !(depth >= 0.0) {
        return Err(Error::input(format!("flood depth must be >= 0, got {depth}")));
    }
    Ok(curve.value(depth))
}

/// Smallest depth at which the curve reaches `percent_target`.
pub fn invert_depth(curve: &DepthDamageCurve, percent_target: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&percent_target) {
        return Err(Error::input(format!("damage target {percent_target} outside [0, 100]")));
    }
    if percent_target <= curve.value(0.0) {
        return Ok(0.0);
    }
    if percent_target >= 100.0 {
        return Ok(curve.delta_max);
    }
    let b = bisect_increasing(
        |d| curve.value(d),
        percent_target,
        0.0,
        curve.delta_max,
        1e-12,
        0.0,
        200,
    )?;
    Ok(b.hi)
}

#[derive(Debug, Clone)]
pub struct DepthDamageSet {
    curves: [DepthDamageCurve; 3],
}

#[derive(Debug, Deserialize)]
struct DepthDamageRow {
    storeys: StoreyClass,
    c0: f64,
    c1: f64,
    c2: f64,
    c3: f64,
    delta_max: Option<f64>,
}

impl DepthDamageSet {
    pub fn builtin() -> Self {
        DepthDamageSet::from_csv_str(BUILTIN_DEPTH_DAMAGE).expect("shipped curves are valid")
    }

    /// Parses `storeys,c0,c1,c2,c3,delta_max`; a stated `delta_max` must
    /// agree with the derived one to 1e-6 m.
    pub fn from_csv_str(s: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(s.as_bytes());
        let mut found: [Option<DepthDamageCurve>; 3] = Default::default();
        for (i, row) in rdr.deserialize::<DepthDamageRow>().enumerate() {
            let row = row.map_err(|e| Error::Csv {
                file: "depth_damage.csv".into(),
                row: i + 2,
                message: e.to_string(),
            })?;
            let mut coeffs = vec![row.c0, row.c1, row.c2, row.c3];
            while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
                coeffs.pop();
            }
            let curve = DepthDamageCurve::new(row.storeys, coeffs)?;
            if let Some(d) = row.delta_max {
                if (d - curve.delta_max).abs() > 1e-6 {
                    return Err(Error::input(format!(
                        "depth-damage {}: stated delta_max {d} but the curve reaches 100% at {}",
                        row.storeys.label(),
                        curve.delta_max
                    )));
                }
            }
            found[row.storeys.index()] = Some(curve);
        }
        let [a, b, c] = found;
        match (a, b, c) {
            (Some(a), Some(b), Some(c)) => Ok(DepthDamageSet { curves: [a, b, c] }),
            _ => Err(Error::input("depth-damage table must define S1, S2 and S3plus")),
        }
    }

    pub fn curve(&self, s: StoreyClass) -> &DepthDamageCurve {
        &self.curves[s.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn shared() -> &'static Catalogue {
        static C: OnceLock<Catalogue> = OnceLock::new();
        C.get_or_init(Catalogue::builtin)
    }

    fn rota2() -> FragilityModel {
        Catalogue::builtin()
            .models
            .into_iter()
            .find(|m| m.id == "Rota2-M-seismic")
            .unwrap()
    }

    #[test]
    fn builtin_catalogue_shape() {
        let c = Catalogue::builtin();
        assert_eq!(c.models_for(Typology::Masonry).count(), 5);
        assert_eq!(c.models_for(Typology::RcGravity).count(), 11);
        assert_eq!(c.models_for(Typology::RcSeismic).count(), 10);
        assert_eq!(c.models_for(Typology::OtherGravity).count(), 1);
        assert_eq!(c.models_for(Typology::OtherSeismic).count(), 1);
        assert!(c.report.row_count_mismatches.is_empty());
        // curves with different dispersions cross somewhere
        assert!(c.report.crossings.iter().any(|x| x.0 == "Rota2-M-seismic"));
    }

    #[test]
    fn median_gives_one_half() {
        let m = rota2();
        let p = fragility_prob(&m, 1, (-2.03f64).exp()).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        assert_eq!(fragility_prob(&m, 4, 0.7).unwrap(), 0.0);
        assert!(fragility_prob(&m, 5, 0.7).is_err());
        assert!(fragility_prob(&m, 0, 0.7).is_err());
    }

    #[test]
    fn unit_pga_on_first_rota_curve() {
        let raw = rota2().raw_prob(1, 1.0).unwrap();
        let oracle = 1.0 - statrs::function::erf::erfc(2.03 / 0.36 / std::f64::consts::SQRT_2) / 2.0;
        assert!((raw - oracle).abs() < 1e-12);
        assert!(raw > 0.99999999);
        // the steeper second curve overtakes the first here, so the ordered
        // value is the larger of the two
        let p = fragility_prob(&rota2(), 1, 1.0).unwrap();
        assert!(p >= raw && p < 1.0);
    }

    #[test]
    fn damage_fraction_examples() {
        let m = rota2();
        assert_eq!(damage_fraction(&m, 3, 1.0).unwrap(), 1.0);
        let four = Catalogue::builtin().models.into_iter().find(|m| m.n() == 4).unwrap();
        assert_eq!(damage_fraction(&four, 1, 1.0).unwrap(), 0.25);
        assert!((damage_fraction(&m, 2, 2.0).unwrap() - 4.0 / 9.0).abs() < 1e-15);
        assert!(damage_fraction(&m, 4, 1.0).is_err());
    }

    #[test]
    fn out_of_order_medians_rejected_and_row_mismatch_reported() {
        let bad = r#"
[[model]]
id = "x"
structure = "M"
load = "seismic"
n_limit_states = 2
params = [[-1.0, 0.3], [-1.5, 0.3]]
"#;
        assert!(Catalogue::from_toml_str(bad).is_err());
        let mismatch = r#"
[[model]]
id = "y"
structure = "M"
load = "seismic"
n_limit_states = 2
params = [[-1.0, 0.3], [-0.8, 0.3], [-0.5, 0.3]]
"#;
        let c = Catalogue::from_toml_str(mismatch).unwrap();
        assert_eq!(c.report.row_count_mismatches, vec![("y".to_string(), 2, 3)]);
        assert_eq!(c.models[0].n(), 3);
    }

    #[test]
    fn shipped_depth_curves() {
        let set = DepthDamageSet::builtin();
        for s in StoreyClass::ALL {
            let c = set.curve(s);
            let g0 = depth_damage(c, 0.0).unwrap();
            assert!((0.0..=100.0).contains(&g0));
            assert_eq!(depth_damage(c, c.delta_max).unwrap(), 100.0);
            assert_eq!(depth_damage(c, c.delta_max + 3.0).unwrap(), 100.0);
            assert!(depth_damage(c, 1.0).unwrap() <= depth_damage(c, 2.0).unwrap());
            let mut prev = g0;
            for i in 1..=2000 {
                let v = c.value(i as f64 * 0.01);
                assert!(v >= prev);
                prev = v;
            }
            assert_eq!(invert_depth(c, 100.0).unwrap(), c.delta_max);
            assert_eq!(invert_depth(c, g0).unwrap(), 0.0);
        }
        assert!(depth_damage(set.curve(StoreyClass::One), -0.1).is_err());
    }

    #[test]
    fn linear_curve_inversion() {
        let c = DepthDamageCurve::new(StoreyClass::One, vec![0.0, 20.0]).unwrap();
        assert!((c.delta_max - 5.0).abs() < 1e-12);
        assert!((invert_depth(&c, 50.0).unwrap() - 2.5).abs() < 1e-9);
    }

    #[test]
    fn dipping_polynomial_is_made_monotone() {
        // rises to a local max at 1, dips, then climbs past 100
        let c = DepthDamageCurve::new(StoreyClass::Two, vec![0.0, 60.0, -45.0, 10.0]).unwrap();
        let peak = poly(&c.coefficients, 1.0);
        assert!(poly(&c.coefficients, 2.0) < peak);
        assert_eq!(c.value(2.0), peak);
        assert!(c.value(c.delta_max - 1e-6) < 100.0);
    }

    #[test]
    fn stated_delta_max_must_match() {
        let bad = "storeys,c0,c1,c2,c3,delta_max\nS1,0,20,0,0,4\nS2,0,20,0,0,5\nS3plus,0,20,0,0,5\n";
        assert!(DepthDamageSet::from_csv_str(bad).is_err());
    }

    proptest! {
        #[test]
        fn ordered_probabilities(ln_pga in -6.0f64..2.0) {
            let c = shared();
            let mut buf = Vec::new();
            for m in &c.models {
                m.ordered_probs(ln_pga, &mut buf);
                for w in buf.windows(2) {
                    prop_assert!(w[0] >= w[1]);
                }
                let mut total = 0.0;
                for ls in 1..=m.n() {
                    let next = if ls < m.n() { buf[ls] } else { 0.0 };
                    prop_assert!(buf[ls - 1] - next >= 0.0);
                    total += buf[ls - 1] - next;
                }
                prop_assert!((total - buf[0]).abs() < 1e-12 && total <= 1.0);
            }
        }

        #[test]
        fn inversion_roundtrip(target in 0.0f64..100.0) {
            let set = DepthDamageSet::builtin();
            for s in StoreyClass::ALL {
                let c = set.curve(s);
                if target > c.value(0.0) {
                    let d = invert_depth(c, target).unwrap();
                    prop_assert!((c.value(d) - target).abs() < 1e-6);
                }
            }
        }
    }
}
