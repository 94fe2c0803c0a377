//! Hazard distributions: power-law PGA exceedance, negative-binomial flood
//! frequency and gamma flood depth, with their fitters.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Gamma};
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::numerics::roots::bisect_decreasing;

/// Power-law PGA hazard with exceedance `λ(x) = α/(β−1)·x^{−(β−1)}` and
/// density `α·x^{−β}` on `[pga_min, ∞)`, where `λ(pga_min) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawHazard {
    pub alpha: f64,
    pub beta: f64,
    pub pga_min: f64,
}

impl PowerLawHazard {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::input(format!("power-law alpha must be positive, got {alpha}")));
        }
        if !(beta > 1.0) || !beta.is_finite() {
            return Err(Error::Fit(format!("power-law beta must exceed 1, got {beta}")));
        }
        let pga_min = ((alpha / (beta - 1.0)).ln() / (beta - 1.0)).exp();
        Ok(PowerLawHazard { alpha, beta, pga_min })
    }

    /// Annual probability that PGA exceeds `pga`.
    pub fn exceedance(&self, pga: f64) -> f64 {
        if pga <= self.pga_min {
            1.0
        } else {
            (pga / self.pga_min).powf(1.0 - self.beta)
        }
    }

    pub fn density(&self, pga: f64) -> f64 {
        if pga < self.pga_min {
            0.0
        } else {
            self.alpha * pga.powf(-self.beta)
        }
    }

    /// Law of `s·PGA`: again a power law with the same exponent.
    pub fn amplified(&self, s: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::input(format!("amplification must be positive, got {s}")));
        }
        PowerLawHazard::new(self.alpha * s.powf(self.beta - 1.0), self.beta)
    }

    /// Inverse-CDF sample from a uniform `u ∈ (0, 1]`.
    pub fn quantile_upper(&self, u: f64) -> f64 {
        self.pga_min * u.powf(-1.0 / (self.beta - 1.0))
    }
}

/// Density of the amplified PGA `s·X` at `pga`.
pub fn pga_density(h: &PowerLawHazard, pga: f64, amplification: f64) -> Result<f64> {
    Ok(h.amplified(amplification)?.density(pga))
}

/// Ordinary least squares of `ln λ` on `ln PGA`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawHazard> {
    if points.len() < 3 {
        return Err(Error::Fit(format!(
            "power-law fit needs at least 3 exceedance points, got {}",
            points.len()
        )));
    }
    for &(x, p) in points {
        if !(x > 0.0) || !(p > 0.0 && p < 1.0) {
            return Err(Error::Fit(format!(
                "exceedance point ({x}, {p}) needs pga > 0 and probability in (0, 1)"
            )));
        }
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all exceedance points share the same PGA".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let beta = 1.0 - slope;
    if !(beta > 1.0) {
        return Err(Error::Fit(format!(
            "fitted exponent beta = {beta} does not exceed 1; the density is not integrable"
        )));
    }
    PowerLawHazard::new((beta - 1.0) * intercept.exp(), beta)
}

/// Negative-binomial yearly flood counts of a cluster, plus the cluster
/// geometry used to turn a cluster event into a municipal probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloodFrequency {
    pub nb_size: f64,
    pub nb_prob: f64,
    pub mean_flooded_munis: f64,
    pub cluster_size: f64,
}

impl FloodFrequency {
    pub fn new(nb_size: f64, nb_prob: f64, mean_flooded_munis: f64, cluster_size: f64) -> Result<Self> {
        if !(nb_size > 0.0) || !(nb_prob > 0.0 && nb_prob <= 1.0) {
            return Err(Error::input(format!(
                "negative binomial needs size > 0 and prob in (0,1], got ({nb_size}, {nb_prob})"
            )));
        }
        if !(mean_flooded_munis > 0.0 && mean_flooded_munis <= cluster_size) {
            return Err(Error::input(format!(
                "mean flooded municipalities {mean_flooded_munis} must lie in (0, cluster size {cluster_size}]"
            )));
        }
        Ok(FloodFrequency {
            nb_size,
            nb_prob,
            mean_flooded_munis,
            cluster_size,
        })
    }

    /// Probability of no flood in the cluster in a year.
    pub fn pmf_zero(&self) -> f64 {
        (self.nb_size * self.nb_prob.ln()).exp()
    }

    pub fn mean(&self) -> f64 {
        self.nb_size * (1.0 - self.nb_prob) / self.nb_prob
    }

    /// Probability that a municipality with flood-zone share `p3_extent`
    /// experiences at least one flood in a year.
    pub fn prob_at_least_one_flood(&self, p3_extent: f64) -> f64 {
        let p = -(self.nb_size * self.nb_prob.ln()).exp_m1() * p3_extent * self.mean_flooded_munis / self.cluster_size;
        p.clamp(0.0, 1.0)
    }
}

const NB_SIZE_MIN: f64 = 1e-8;
const NB_SIZE_MAX: f64 = 1e8;

/// Maximum-likelihood negative binomial `(size, prob)` for yearly counts.
///
/// The profile likelihood fixes `prob = size/(size + mean)`, so the fitted
/// mean always equals the sample mean. Under-dispersed samples have no
/// finite maximiser and return the largest admissible size.
pub fn fit_flood_frequency(counts: &[u64]) -> Result<(f64, f64)> {
    if counts.len() < 10 {
        return Err(Error::Fit(format!(
            "negative-binomial fit needs at least 10 yearly counts, got {}",
            counts.len()
        )));
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<u64>() as f64 / n;
    if mean == 0.0 {
        return Err(Error::Fit("all yearly flood counts are zero".into()));
    }
    let max = *counts.iter().max().expect("non-empty") as usize;
    let mut hist = vec![0.0f64; max + 1];
    for &c in counts {
        hist[c as usize] += 1.0;
    }
    // tail[k] = number of observations strictly greater than k
    let mut tail = vec![0.0f64; max + 1];
    let mut acc = 0.0;
    for k in (0..=max).rev() {
        tail[k] = acc;
        acc += hist[k];
    }
    // d/dr of the profile log-likelihood; decreasing in r
    let score = |log_r: f64| {
        let r = log_r.exp();
        let s: f64 = tail.iter().enumerate().map(|(k, t)| t / (r + k as f64)).sum();
        s - n * (mean / r).ln_1p()
    };
    let (lo, hi) = (NB_SIZE_MIN.ln(), NB_SIZE_MAX.ln());
    let size = if score(hi) >= 0.0 {
        NB_SIZE_MAX
    } else if score(lo) <= 0.0 {
        NB_SIZE_MIN
    } else {
        bisect_decreasing(score, 0.0, lo, hi, 1e-13, 0.0, 200)?.hi.exp()
    };
    Ok((size, size / (size + mean)))
}

/// Gamma law of the flood depth (metres) given a flood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthDistribution {
    pub shape: f64,
    pub rate: f64,
}

impl DepthDistribution {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
            return Err(Error::input(format!(
                "gamma needs shape, rate > 0, got ({shape}, {rate})"
            )));
        }
        Ok(DepthDistribution { shape, rate })
    }

    fn law(&self) -> Gamma {
        Gamma::new(self.shape, self.rate).expect("validated parameters")
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.law().pdf(x)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.law().cdf(x)
        }
    }

    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else {
            self.law().sf(x)
        }
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

/// Gamma fit with the goodness-of-fit summaries used for model comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthFit {
    pub dist: DepthDistribution,
    /// Sum of squared differences between empirical and fitted bin masses.
    pub sse: f64,
    /// Sum of absolute differences between empirical and fitted bin masses.
    pub sae: f64,
}

pub const DEPTH_HIST_BINS: usize = 50;

/// Gamma maximum likelihood: solves `ln k − ψ(k) = ln x̄ − mean(ln x)`.
pub fn fit_depth_gamma(depths: &[f64]) -> Result<DepthFit> {
    if depths.len() < 10 {
        return Err(Error::Fit(format!(
            "gamma fit needs at least 10 depths, got {}",
            depths.len()
        )));
    }
    if let Some(bad) = depths.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        return Err(Error::input(format!("flood depth {bad} must be strictly positive")));
    }
    let n = depths.len() as f64;
    let mean = depths.iter().sum::<f64>() / n;
    let mean_log = depths.iter().map(|d| d.ln()).sum::<f64>() / n;
    let s = mean.ln() - mean_log;
    if !(s > 0.0) {
        return Err(Error::Fit("all depths are identical; gamma shape is unbounded".into()));
    }
    // ln k − ψ(k) decreases from +∞ to 0; start near Minka's approximation
    let k0 = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    let g = |log_k: f64| {
        let k = log_k.exp();
        k.ln() - digamma(k)
    };
    let (mut lo, mut hi) = (k0.ln() - 1.0, k0.ln() + 1.0);
    while g(lo) < s {
        lo -= 2.0;
    }
    while g(hi) > s {
        hi += 2.0;
    }
    let shape = bisect_decreasing(g, s, lo, hi, 1e-14, 0.0, 200)?.hi.exp();
    let dist = DepthDistribution::new(shape, shape / mean)?;

    let max = depths.iter().copied().fold(0.0, f64::max);
    let width = max / DEPTH_HIST_BINS as f64;
    let mut counts = [0.0f64; DEPTH_HIST_BINS];
    for &d in depths {
        let b = ((d / width) as usize).min(DEPTH_HIST_BINS - 1);
        counts[b] += 1.0;
    }
    let (mut sse, mut sae) = (0.0, 0.0);
    for (b, c) in counts.iter().enumerate() {
        let fitted = dist.cdf((b + 1) as f64 * width) - dist.cdf(b as f64 * width);
        let diff = c / n - fitted;
        sse += diff * diff;
        sae += diff.abs();
    }
    Ok(DepthFit { dist, sse, sae })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quadrature::{integrate, QuadOptions};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;

    fn total_mass(h: &PowerLawHazard) -> f64 {
        // ∫ over [pga_min, 10·pga_min] numerically, the rest in closed form
        let top = 10.0 * h.pga_min;
        let body = integrate(|x| h.density(x), h.pga_min, top, &[], QuadOptions::default()).unwrap();
        body + h.exceedance(top)
    }

    #[test]
    fn exact_recovery_from_noiseless_points() {
        let pts: Vec<_> = (1..=9)
            .map(|i| {
                let x = 0.05 * i as f64;
                (x, 0.01 * x.powf(-1.5))
            })
            .collect();
        let h = fit_power_law(&pts).unwrap();
        assert!((h.alpha - 0.015).abs() / 0.015 < 1e-9);
        assert!((h.beta - 2.5).abs() / 2.5 < 1e-9);
    }

    #[test]
    fn pga_min_closed_form() {
        let h = PowerLawHazard::new(0.001, 2.0).unwrap();
        assert!((h.pga_min - 0.001).abs() < 1e-15);
        assert!((h.density(h.pga_min) - 1000.0).abs() < 1e-9);
        assert_eq!(h.density(0.5 * h.pga_min), 0.0);
    }

    #[test]
    fn fit_errors() {
        assert!(fit_power_law(&[(0.1, 0.1), (0.2, 0.05)]).is_err());
        assert!(fit_power_law(&[(0.1, 0.1), (0.2, 0.05), (-0.3, 0.01)]).is_err());
        // increasing exceedance gives beta < 1
        assert!(fit_power_law(&[(0.1, 0.01), (0.2, 0.02), (0.3, 0.03)]).is_err());
    }

    #[test]
    fn densities_integrate_to_one() {
        let h = fit_power_law(&[(0.1, 0.02), (0.2, 0.005), (0.4, 0.0011), (0.8, 0.0003)]).unwrap();
        assert!((total_mass(&h) - 1.0).abs() < 1e-9);
        let a = h.amplified(2.0).unwrap();
        assert!((a.pga_min - 2.0 * h.pga_min).abs() < 1e-12 * a.pga_min);
        assert!((total_mass(&a) - 1.0).abs() < 1e-9);
        assert!(pga_density(&h, 0.3, 0.0).is_err());
    }

    #[test]
    fn amplified_exceedance_is_scaled() {
        let h = PowerLawHazard::new(0.004, 2.7).unwrap();
        let a = h.amplified(1.3).unwrap();
        for x in [0.05, 0.2, 0.9] {
            assert!((a.exceedance(1.3 * x) - h.exceedance(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn flood_probability_examples() {
        // size 1, prob 0.5 gives f(0) = 0.5
        let ff = FloodFrequency::new(1.0, 0.5, 10.0, 100.0).unwrap();
        assert!((ff.prob_at_least_one_flood(0.2) - 0.01).abs() < 1e-15);
        assert_eq!(ff.prob_at_least_one_flood(0.0), 0.0);
        // f(0) = 0.9 through size 2
        let p = 0.9f64.sqrt();
        let ff = FloodFrequency::new(2.0, p, 5.0, 100.0).unwrap();
        let f0 = statrs::distribution::NegativeBinomial::new(2.0, p).unwrap();
        use statrs::distribution::Discrete;
        assert!((f0.pmf(0) - 0.9).abs() < 1e-12);
        assert!((ff.prob_at_least_one_flood(1.0) - 0.005).abs() < 1e-12);
    }

    fn nb_sample(size: f64, prob: f64, n: usize, seed: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = rand_distr::Gamma::new(size, (1.0 - prob) / prob).unwrap();
        (0..n)
            .map(|_| {
                let lam: f64 = g.sample(&mut rng);
                if lam <= 0.0 {
                    0
                } else {
                    rand_distr::Poisson::new(lam).unwrap().sample(&mut rng) as u64
                }
            })
            .collect()
    }

    #[test]
    fn negative_binomial_recovery() {
        let xs = nb_sample(5.0, 0.3, 10_000, 11);
        let (r, p) = fit_flood_frequency(&xs).unwrap();
        assert!((r - 5.0).abs() / 5.0 < 0.05, "size {r}");
        assert!((p - 0.3).abs() / 0.3 < 0.05, "prob {p}");
        let mean = xs.iter().sum::<u64>() as f64 / xs.len() as f64;
        assert!((r * (1.0 - p) / p - mean).abs() / mean < 1e-9);
    }

    #[test]
    fn poisson_like_sample_gives_large_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pois = rand_distr::Poisson::new(11.95).unwrap();
        let xs: Vec<u64> = (0..5000).map(|_| pois.sample(&mut rng) as u64).collect();
        let (r, p) = fit_flood_frequency(&xs).unwrap();
        let mean = xs.iter().sum::<u64>() as f64 / xs.len() as f64;
        assert!(r > 100.0, "size {r}");
        assert!((r * (1.0 - p) / p - mean).abs() / mean < 0.01);
    }

    #[test]
    fn negative_binomial_errors() {
        assert!(fit_flood_frequency(&[0; 20]).is_err());
        assert!(fit_flood_frequency(&[3; 5]).is_err());
    }

    #[test]
    fn gamma_recovery_and_summaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = rand_distr::Gamma::new(2.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| g.sample(&mut rng)).collect();
        let fit = fit_depth_gamma(&xs).unwrap();
        assert!((fit.dist.shape - 2.0).abs() / 2.0 < 0.05);
        assert!((fit.dist.rate - 1.0).abs() < 0.05);
        assert!(fit.sse >= 0.0 && fit.sse.is_finite());
        assert!(fit.sae >= 0.0 && fit.sae.is_finite());
        assert!((fit.dist.cdf(1e6) - 1.0).abs() < 1e-15);
        assert_eq!(fit.dist.cdf(0.0), 0.0);
    }

    #[test]
    fn gamma_errors() {
        assert!(fit_depth_gamma(&[1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(fit_depth_gamma(&[1.0; 3]).is_err());
    }

    #[test]
    fn gamma_density_integrates_to_one() {
        for shape in [0.7, 1.6, 4.0] {
            let d = DepthDistribution::new(shape, 1.3).unwrap();
            let body = integrate(|x| d.pdf(x), 0.0, 30.0, &[1.0], QuadOptions::default()).unwrap();
            assert!((body + d.sf(30.0) - 1.0).abs() < 1e-6, "shape {shape}");
        }
    }

    proptest! {
        #[test]
        fn noiseless_roundtrip(alpha in 1e-5f64..0.05, beta in 1.5f64..4.0) {
            let h = PowerLawHazard::new(alpha, beta).unwrap();
            let pts: Vec<_> = [0.05, 0.08, 0.12, 0.17, 0.24, 0.33, 0.45, 0.62, 0.85]
                .iter()
                .map(|&x: &f64| x.max(h.pga_min * 1.01))
                .map(|x| (x, h.exceedance(x)))
                .filter(|p| p.1 < 1.0)
                .collect();
            prop_assume!(pts.len() >= 3 && pts.windows(2).all(|w| w[0].0 < w[1].0));
            let f = fit_power_law(&pts).unwrap();
            prop_assert!((f.alpha - alpha).abs() / alpha < 1e-9);
            prop_assert!((f.beta - beta).abs() / beta < 1e-9);
        }

        #[test]
        fn flood_probability_monotone(e1 in 0.0f64..1.0, e2 in 0.0f64..1.0, size in 0.1f64..20.0, p in 0.05f64..0.95) {
            let ff = FloodFrequency::new(size, p, 3.0, 50.0).unwrap();
            let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(ff.prob_at_least_one_flood(lo) <= ff.prob_at_least_one_flood(hi));
            let ff2 = FloodFrequency::new(size * 1.5, p, 3.0, 50.0).unwrap();
            prop_assert!(ff.prob_at_least_one_flood(hi) <= ff2.prob_at_least_one_flood(hi) + 1e-15);
        }
    }
}
