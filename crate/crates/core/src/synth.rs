//! Reproducible synthetic input bundles.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{FloodCluster, Municipality};
use crate::hazard::PowerLawHazard;
use crate::io::{Bundle, ClusterRow, DepthRow, FloodCountRow, FloodRecords};

/// Return periods (years) of the exceedance points emitted per municipality.
pub const RETURN_PERIODS: [f64; 9] = [30.0, 50.0, 72.0, 101.0, 140.0, 201.0, 475.0, 975.0, 2475.0];
pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_N: usize = 200;

const KM_PER_DEG: f64 = 111.195;
const ORIGIN: (f64, f64) = (42.5, 12.5);
const COUNT_YEARS: i32 = 60;
const FIRST_YEAR: i32 = 1960;
const N_DEPTHS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    ItalyLike,
    Uniform,
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub n: usize,
    pub seed: u64,
    pub profile: Profile,
    /// Side of the square region; defaults to `25·√n` km.
    pub extent_km: Option<f64>,
    /// Log-normal noise on exceedance probabilities; 0 gives exact curves.
    pub noise: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            n: DEFAULT_N,
            seed: DEFAULT_SEED,
            profile: Profile::ItalyLike,
            extent_km: None,
            noise: 0.0,
        }
    }
}

/// A generated bundle together with the hazard laws that produced it.
#[derive(Debug, Clone)]
pub struct Portfolio {
    pub bundle: Bundle,
    pub hazards: Vec<PowerLawHazard>,
}

/// PGA whose annual exceedance probability is `p`.
pub fn pga_at(h: &PowerLawHazard, p: f64) -> f64 {
    h.quantile_upper(p)
}

fn hazard_from_pga475(pga475: f64, beta: f64) -> Result<PowerLawHazard> {
    // λ(x) = α/(β−1)·x^{1−β} with λ(pga475) = 1/475
    let alpha = (beta - 1.0) / 475.0 * pga475.powf(beta - 1.0);
    PowerLawHazard::new(alpha, beta)
}

fn exceedance_points(h: &PowerLawHazard, noise: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    RETURN_PERIODS
        .iter()
        .map(|t| {
            let p = 1.0 / t;
            let pga = pga_at(h, p);
            let p = if noise > 0.0 {
                (p * (noise * normal.sample(rng)).exp()).min(0.999)
            } else {
                p
            };
            (pga, p)
        })
        .collect()
}

fn nb_counts(
    mean: f64,
    size: f64,
    years: i32,
    cluster: FloodCluster,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FloodCountRow>> {
    let g = Gamma::new(size, mean / size).map_err(|e| Error::input(e.to_string()))?;
    (0..years)
        .map(|y| {
            let lambda: f64 = g.sample(rng);
            let n = if lambda > 0.0 {
                Poisson::new(lambda)
                    .map_err(|e| Error::input(e.to_string()))?
                    .sample(rng) as u64
            } else {
                0
            };
            Ok(FloodCountRow {
                year: FIRST_YEAR + y,
                cluster,
                n_events: n,
            })
        })
        .collect()
}

fn round_to(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s).round() / s
}

pub fn generate_portfolio(opts: &SynthOptions) -> Result<Portfolio> {
    if opts.n == 0 {
        return Err(Error::input("number of municipalities must be at least 1"));
    }
    if !(opts.noise >= 0.0) {
        return Err(Error::input(format!("noise must be >= 0, got {}", opts.noise)));
    }
    match opts.profile {
        Profile::Fixture => fixture(opts.n),
        Profile::ItalyLike | Profile::Uniform => random_portfolio(opts),
    }
}

fn random_portfolio(opts: &SynthOptions) -> Result<Portfolio> {
    let italy = opts.profile == Profile::ItalyLike;
    let n = opts.n;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let extent = opts.extent_km.unwrap_or(25.0 * (n as f64).sqrt());
    if !(extent > 0.0) {
        return Err(Error::input(format!("spatial extent must be positive, got {extent}")));
    }
    let side = (n as f64).sqrt().ceil() as usize;
    let spacing = extent / side as f64;
    let lon_scale = KM_PER_DEG * ORIGIN.0.to_radians().cos();

    let mut munis = Vec::with_capacity(n);
    let mut hazards = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y) = if italy {
            let (r, c) = (i / side, i % side);
            let j = 0.3 * spacing;
            (
                (c as f64 + 0.5) * spacing + rng.random_range(-j..=j),
                (r as f64 + 0.5) * spacing + rng.random_range(-j..=j),
            )
        } else {
            (rng.random_range(0.0..extent), rng.random_range(0.0..extent))
        };
        let lat = round_to(ORIGIN.0 + (y - extent / 2.0) / KM_PER_DEG, 6);
        let lon = round_to(ORIGIN.1 + (x - extent / 2.0) / lon_scale, 6);

        let (pga475, beta, amp) = if italy {
            // smooth hazard field, stronger along one diagonal band
            let field = 0.5 + 0.5 * (x / 140.0).sin() * (y / 190.0).cos();
            let pga = (0.06 + 0.22 * field + rng.random_range(-0.02..0.02)).clamp(0.04, 0.35);
            (pga, rng.random_range(2.0..3.5), rng.random_range(1.0..1.5))
        } else {
            (
                rng.random_range(0.05..0.35),
                rng.random_range(1.5..4.0),
                rng.random_range(1.0..2.0),
            )
        };
        let h = hazard_from_pga475(pga475, beta)?;

        let total: f64 = if italy {
            LogNormal::new((4.0e5f64).ln(), 0.8)
                .map_err(|e| Error::input(e.to_string()))?
                .sample(&mut rng)
        } else {
            rng.random_range(5.0e4..1.0e6)
        };
        // shares of RC.gl, RC.sl, A.gl, A.sl, M
        let shares: [f64; 5] = if italy {
            let m = rng.random_range(0.45..0.7);
            let w = [0.45, 0.25, 0.2, 0.1].map(|s: f64| s * rng.random_range(0.7..1.3));
            let ws: f64 = w.iter().sum();
            [
                w[0] / ws * (1.0 - m),
                w[1] / ws * (1.0 - m),
                w[2] / ws * (1.0 - m),
                w[3] / ws * (1.0 - m),
                m,
            ]
        } else {
            let w: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let ws: f64 = w.iter().sum();
            w.map(|v| v / ws)
        };
        let structural = shares.map(|s| round_to(s * total, 1));
        let s1 = rng.random_range(0.2..0.35);
        let s2 = rng.random_range(0.35..0.5);
        let storeys = [s1, s2, 1.0 - s1 - s2].map(|s| round_to(s * total, 1));

        let u: f64 = rng.random_range(0.0..1.0);
        let cluster = if italy {
            if u < 0.5 {
                FloodCluster::P1
            } else if u < 0.85 {
                FloodCluster::P2
            } else {
                FloodCluster::NoCluster
            }
        } else if u < 1.0 / 3.0 {
            FloodCluster::P1
        } else if u < 2.0 / 3.0 {
            FloodCluster::P2
        } else {
            FloodCluster::NoCluster
        };
        let p3 = if cluster == FloodCluster::NoCluster {
            0.0
        } else {
            round_to(rng.random_range(0.0..0.25), 4)
        };
        let p2 = round_to((p3 + rng.random_range(0.0..0.3)).min(1.0), 4);

        munis.push(Municipality {
            id: format!("m{:04}", i + 1),
            name: format!("Comune {:04}", i + 1),
            lat,
            lon,
            cluster,
            p2_index: p2,
            p3_extent: Some(p3),
            amplification: round_to(amp, 3),
            structural,
            storeys,
        });
        hazards.push(h);
    }

    let mut exceedance = BTreeMap::new();
    for (m, h) in munis.iter().zip(&hazards) {
        exceedance.insert(m.id.clone(), exceedance_points(h, opts.noise, &mut rng));
    }

    let size_of = |c: FloodCluster| munis.iter().filter(|m| m.cluster == c).count().max(1) as f64;
    let (n1, n2) = (size_of(FloodCluster::P1), size_of(FloodCluster::P2));
    let clusters = vec![
        ClusterRow {
            cluster: FloodCluster::P1,
            mean_flooded_munis: (0.08 * n1).max(1.0).min(n1),
            cluster_size: n1,
        },
        ClusterRow {
            cluster: FloodCluster::P2,
            mean_flooded_munis: (0.12 * n2).max(1.0).min(n2),
            cluster_size: n2,
        },
    ];
    let mut counts = nb_counts(11.95, 4.0, COUNT_YEARS, FloodCluster::P1, &mut rng)?;
    counts.extend(nb_counts(42.58, 6.0, COUNT_YEARS, FloodCluster::P2, &mut rng)?);
    let depth_law = Gamma::new(1.8, 1.0 / 1.5).map_err(|e| Error::input(e.to_string()))?;
    let depths = (0..N_DEPTHS)
        .map(|i| DepthRow {
            event_id: format!("e{:05}", i + 1),
            depth_m: round_to(depth_law.sample(&mut rng), 4).max(1e-4),
        })
        .collect();

    Ok(Portfolio {
        bundle: Bundle {
            municipalities: munis,
            has_structural: true,
            has_storeys: true,
            exceedance,
            flood: Some(FloodRecords {
                counts,
                clusters,
                depths,
            }),
            catalogue_toml: None,
            depth_damage_csv: None,
        },
        hazards,
    })
}

/// Five hand-specified municipalities; ignores the seed.
fn fixture(n: usize) -> Result<Portfolio> {
    if n != 5 {
        return Err(Error::input(format!(
            "the fixture profile has exactly 5 municipalities, got {n}"
        )));
    }
    // id, lat, lon, cluster, p3, amplification, (pga475, beta), structural, storeys
    type Row = (
        &'static str,
        f64,
        f64,
        FloodCluster,
        f64,
        f64,
        (f64, f64),
        [f64; 5],
        [f64; 3],
    );
    let rows: [Row; 5] = [
        (
            "f1",
            42.0,
            12.0,
            FloodCluster::P1,
            0.10,
            1.2,
            (0.25, 2.5),
            [2000.0, 1000.0, 500.0, 0.0, 6000.0],
            [3000.0, 4000.0, 2500.0],
        ),
        (
            "f2",
            42.2,
            12.1,
            FloodCluster::P1,
            0.20,
            1.0,
            (0.20, 2.0),
            [1500.0, 500.0, 0.0, 0.0, 4000.0],
            [2000.0, 3000.0, 1000.0],
        ),
        (
            "f3",
            42.9,
            12.5,
            FloodCluster::P2,
            0.05,
            1.4,
            (0.15, 3.0),
            [0.0, 0.0, 800.0, 400.0, 3000.0],
            [1500.0, 2000.0, 700.0],
        ),
        (
            "f4",
            43.6,
            13.0,
            FloodCluster::P2,
            0.15,
            1.1,
            (0.10, 2.2),
            [3000.0, 2000.0, 0.0, 0.0, 2000.0],
            [2000.0, 2500.0, 2500.0],
        ),
        (
            "f5",
            41.2,
            14.0,
            FloodCluster::NoCluster,
            0.0,
            1.3,
            (0.30, 1.8),
            [500.0, 0.0, 0.0, 0.0, 9000.0],
            [5000.0, 3500.0, 1000.0],
        ),
    ];
    let mut munis = Vec::new();
    let mut hazards = Vec::new();
    let mut exceedance = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (id, lat, lon, cluster, p3, amp, (pga475, beta), structural, storeys) in rows {
        let h = hazard_from_pga475(pga475, beta)?;
        exceedance.insert(id.to_string(), exceedance_points(&h, 0.0, &mut rng));
        hazards.push(h);
        munis.push(Municipality {
            id: id.to_string(),
            name: format!("Fixture {id}"),
            lat,
            lon,
            cluster,
            p2_index: (p3 * 2.0f64).min(1.0),
            p3_extent: Some(p3),
            amplification: amp,
            structural,
            storeys,
        });
    }
    let p1 = [0, 1, 3, 0, 2, 5, 1, 0, 4, 2, 1, 0, 7, 2, 1, 3, 0, 1, 2, 5];
    let p2 = [3, 8, 1, 12, 5, 2, 9, 4, 0, 6, 15, 3, 7, 2, 5, 10, 4, 1, 6, 3];
    let mut counts = Vec::new();
    for (cluster, series) in [(FloodCluster::P1, p1), (FloodCluster::P2, p2)] {
        for (i, &c) in series.iter().enumerate() {
            counts.push(FloodCountRow {
                year: 2000 + i as i32,
                cluster,
                n_events: c,
            });
        }
    }
    let clusters = vec![
        ClusterRow {
            cluster: FloodCluster::P1,
            mean_flooded_munis: 2.5,
            cluster_size: 40.0,
        },
        ClusterRow {
            cluster: FloodCluster::P2,
            mean_flooded_munis: 4.0,
            cluster_size: 60.0,
        },
    ];
    let depth_values = [
        0.3, 0.8, 1.2, 0.5, 2.1, 0.9, 1.6, 0.4, 3.2, 1.1, 0.7, 1.9, 0.6, 2.6, 1.4, 0.2, 1.0, 2.3, 0.85, 1.35,
    ];
    let depths = depth_values
        .iter()
        .enumerate()
        .map(|(i, &d)| DepthRow {
            event_id: format!("e{:02}", i + 1),
            depth_m: d,
        })
        .collect();
    Ok(Portfolio {
        bundle: Bundle {
            municipalities: munis,
            has_structural: true,
            has_storeys: true,
            exceedance,
            flood: Some(FloodRecords {
                counts,
                clusters,
                depths,
            }),
            catalogue_toml: None,
            depth_damage_csv: None,
        },
        hazards,
    })
}
