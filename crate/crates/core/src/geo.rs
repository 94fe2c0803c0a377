//! Municipality registry, great-circle distances and r-independent
//! groupings built by randomized greedy coloring of the conflict graph.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0088;
pub const DEFAULT_R_KM: f64 = 50.0;

/// Structural typologies used for seismic exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Typology {
    #[serde(rename = "RC.gl")]
    RcGravity,
    #[serde(rename = "RC.sl")]
    RcSeismic,
    #[serde(rename = "A.gl")]
    OtherGravity,
    #[serde(rename = "A.sl")]
    OtherSeismic,
    #[serde(rename = "M")]
    Masonry,
}

impl Typology {
    pub const ALL: [Typology; 5] = [
        Typology::RcGravity,
        Typology::RcSeismic,
        Typology::OtherGravity,
        Typology::OtherSeismic,
        Typology::Masonry,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Typology::RcGravity => "RC.gl",
            Typology::RcSeismic => "RC.sl",
            Typology::OtherGravity => "A.gl",
            Typology::OtherSeismic => "A.sl",
            Typology::Masonry => "M",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Storey classes used for flood exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StoreyClass {
    #[serde(rename = "S1")]
    One,
    #[serde(rename = "S2")]
    Two,
    #[serde(rename = "S3plus")]
    ThreePlus,
}

impl StoreyClass {
    pub const ALL: [StoreyClass; 3] = [StoreyClass::One, StoreyClass::Two, StoreyClass::ThreePlus];

    pub fn label(self) -> &'static str {
        match self {
            StoreyClass::One => "S1",
            StoreyClass::Two => "S2",
            StoreyClass::ThreePlus => "S3plus",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Flood-frequency cluster membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FloodCluster {
    #[serde(rename = "A_P1")]
    P1,
    #[serde(rename = "A_P2")]
    P2,
    #[serde(rename = "none")]
    NoCluster,
}

impl FloodCluster {
    pub fn label(self) -> &'static str {
        match self {
            FloodCluster::P1 => "A_P1",
            FloodCluster::P2 => "A_P2",
            FloodCluster::NoCluster => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "A_P1" => Ok(FloodCluster::P1),
            "A_P2" => Ok(FloodCluster::P2),
            "none" | "" => Ok(FloodCluster::NoCluster),
            other => Err(Error::input(format!("unknown flood cluster '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Municipality {
    pub id: String,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub cluster: FloodCluster,
    pub p2_index: f64,
    /// Share of the municipal surface in the low-probability flood zone;
    /// `None` when flood data are unavailable.
    pub p3_extent: Option<f64>,
    pub amplification: f64,
    /// Square metres per structural typology, indexed by [`Typology::index`].
    pub structural: [f64; 5],
    /// Square metres per storey class, indexed by [`StoreyClass::index`].
    pub storeys: [f64; 3],
}

impl Municipality {
    pub fn validate(&self) -> Result<()> {
        check_coords(self.lat, self.lon)?;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.p2_index) {
            return Err(Error::input(format!(
                "{}: p2 index {} outside [0,1]",
                self.id, self.p2_index
            )));
        }
        if let Some(p3) = self.p3_extent {
            if !unit(p3) {
                return Err(Error::input(format!("{}: p3 extent {p3} outside [0,1]", self.id)));
            }
        }
        if !(self.amplification >= 0.0) || !self.amplification.is_finite() {
            return Err(Error::input(format!(
                "{}: amplification {} must be a finite value >= 0",
                self.id, self.amplification
            )));
        }
        for v in self.structural.iter().chain(&self.storeys) {
            if !(*v >= 0.0) || !v.is_finite() {
                return Err(Error::input(format!(
                    "{}: exposure {v} must be finite and >= 0",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn exposure(&self, t: Typology) -> f64 {
        self.structural[t.index()]
    }

    pub fn storey_exposure(&self, s: StoreyClass) -> f64 {
        self.storeys[s.index()]
    }
}

fn check_coords(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(Error::input(format!("coordinates ({lat}, {lon}) out of range")));
    }
    Ok(())
}

/// Haversine distance between two (lat, lon) points in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> Result<f64> {
    check_coords(lat1, lon1)?;
    check_coords(lat2, lon2)?;
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin())
}

pub fn distance_km(a: &Municipality, b: &Municipality) -> Result<f64> {
    haversine_km(a.lat, a.lon, b.lat, b.lon)
}

/// One partition of the municipalities into mutually r-distant groups.
/// Groups hold indices into the municipality slice they were built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingSample {
    pub seed: u64,
    pub groups: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

impl GroupingSample {
    /// Builds a sample from explicit groups over `n` units, checking that
    /// they partition `0..n`.
    pub fn from_groups(seed: u64, groups: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::input("empty group"));
            }
            for &i in g {
                if i >= n || seen[i] {
                    return Err(Error::input(format!("group member {i} out of range or duplicated")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::input("groups do not cover every municipality"));
        }
        let weights = groups.iter().map(|g| g.len() as f64 / n as f64).collect();
        Ok(GroupingSample { seed, groups, weights })
    }

    pub fn n_units(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// Conflict graph: an edge joins two municipalities closer than `r_km`.
#[derive(Debug, Clone)]
pub struct ConflictGraph {
    adjacency: Vec<Vec<usize>>,
}

impl ConflictGraph {
    pub fn build(munis: &[Municipality], r_km: f64) -> Result<Self> {
        if !(r_km > 0.0) {
            return Err(Error::input(format!("r must be positive, got {r_km}")));
        }
        for m in munis {
            check_coords(m.lat, m.lon)?;
        }
        let n = munis.len();
        let adjacency: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .filter(|&j| {
                        j != i
                            && haversine_km(munis[i].lat, munis[i].lon, munis[j].lat, munis[j].lon)
                                .map(|d| d < r_km)
                                .unwrap_or(false)
                    })
                    .collect()
            })
            .collect();
        Ok(ConflictGraph { adjacency })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Greedy coloring over a seed-shuffled vertex order.
    pub fn color(&self, seed: u64) -> Result<GroupingSample> {
        let n = self.len();
        if n == 0 {
            return Err(Error::input("cannot group an empty municipality set"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut color = vec![usize::MAX; n];
        let mut taken = Vec::new();
        let mut n_colors = 0;
        for &v in &order {
            taken.clear();
            taken.resize(n_colors + 1, false);
            for &u in &self.adjacency[v] {
                if color[u] != usize::MAX {
                    taken[color[u]] = true;
                }
            }
            let c = taken.iter().position(|t| !t).expect("a free color always exists");
            color[v] = c;
            n_colors = n_colors.max(c + 1);
        }
        let mut groups = vec![Vec::new(); n_colors];
        for (v, &c) in color.iter().enumerate() {
            groups[c].push(v);
        }
        GroupingSample::from_groups(seed, groups, n)
    }
}

pub fn build_grouping(munis: &[Municipality], r_km: f64, seed: u64) -> Result<GroupingSample> {
    if munis.is_empty() {
        return Err(Error::input("cannot group an empty municipality set"));
    }
    ConflictGraph::build(munis, r_km)?.color(seed)
}

/// SplitMix64 finaliser, used to derive well-spread per-sampling seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sampling_seed(base_seed: u64, i: usize) -> u64 {
    splitmix64(base_seed.wrapping_add(i as u64))
}

pub fn sample_groupings(
    munis: &[Municipality],
    r_km: f64,
    n_samples: usize,
    base_seed: u64,
) -> Result<Vec<GroupingSample>> {
    if n_samples == 0 {
        return Err(Error::input("at least one grouping sample is required"));
    }
    if munis.is_empty() {
        return Err(Error::input("cannot group an empty municipality set"));
    }
    let graph = ConflictGraph::build(munis, r_km)?;
    (0..n_samples)
        .into_par_iter()
        .map(|i| graph.color(sampling_seed(base_seed, i)))
        .collect()
}

/// Smallest within-group centroid distance over all groups, or `None` when
/// every group is a singleton.
pub fn min_within_group_distance(munis: &[Municipality], sample: &GroupingSample) -> Result<Option<f64>> {
    let mut best: Option<f64> = None;
    for g in &sample.groups {
        for (x, &i) in g.iter().enumerate() {
            for &j in &g[x + 1..] {
                let d = distance_km(&munis[i], &munis[j])?;
                best = Some(best.map_or(d, |b: f64| b.min(d)));
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
pub(crate) fn test_muni(id: &str, lat: f64, lon: f64) -> Municipality {
    Municipality {
        id: id.to_string(),
        name: id.to_string(),
        lat,
        lon,
        cluster: FloodCluster::NoCluster,
        p2_index: 0.0,
        p3_extent: Some(0.0),
        amplification: 1.0,
        structural: [0.0; 5],
        storeys: [0.0; 3],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const KM_PER_DEG: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

    fn line(km: &[f64]) -> Vec<Municipality> {
        km.iter()
            .enumerate()
            .map(|(i, d)| test_muni(&format!("m{i}"), 0.0, d / KM_PER_DEG))
            .collect()
    }

    #[test]
    fn one_degree_on_equator() {
        let d = haversine_km(0.0, 0.0, 0.0, 1.0).unwrap();
        assert!((d - 111.195).abs() < 1e-3, "{d}");
        assert_eq!(haversine_km(0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn bad_coordinates_rejected() {
        assert!(haversine_km(91.0, 0.0, 0.0, 0.0).is_err());
        assert!(haversine_km(0.0, 0.0, 0.0, -181.0).is_err());
    }

    #[test]
    fn chain_of_three_gives_two_groups() {
        let m = line(&[0.0, 30.0, 60.0]);
        for seed in 0..20 {
            let g = build_grouping(&m, 50.0, seed).unwrap();
            let mut groups = g.groups.clone();
            groups.sort();
            assert_eq!(groups, vec![vec![0, 2], vec![1]], "seed {seed}");
        }
    }

    #[test]
    fn far_apart_is_one_group() {
        let m = line(&[0.0, 100.0, 200.0, 300.0]);
        let g = build_grouping(&m, 50.0, 3).unwrap();
        assert_eq!(g.groups, vec![vec![0, 1, 2, 3]]);
        assert_eq!(g.weights, vec![1.0]);
    }

    #[test]
    fn close_pair_is_two_singletons() {
        let m = line(&[0.0, 10.0]);
        let g = build_grouping(&m, 50.0, 1).unwrap();
        assert_eq!(g.groups.len(), 2);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(build_grouping(&[], 50.0, 1).is_err());
        assert!(sample_groupings(&line(&[0.0]), 50.0, 0, 1).is_err());
    }

    #[test]
    fn samplings_are_reproducible() {
        let m: Vec<_> = (0..30)
            .map(|i| test_muni(&i.to_string(), 42.0 + (i / 6) as f64 * 0.3, 12.0 + (i % 6) as f64 * 0.3))
            .collect();
        let a = sample_groupings(&m, 50.0, 100, 9).unwrap();
        let b = sample_groupings(&m, 50.0, 100, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(sample_groupings(&m, 50.0, 1, 9).unwrap().len(), 1);
    }

    #[test]
    fn grid_samplings_respect_radius() {
        let m: Vec<_> = (0..20)
            .map(|i| {
                test_muni(
                    &i.to_string(),
                    42.0 + (i / 5) as f64 * 0.25,
                    12.0 + (i % 5) as f64 * 0.3,
                )
            })
            .collect();
        for s in sample_groupings(&m, 50.0, 50, 1).unwrap() {
            if let Some(d) = min_within_group_distance(&m, &s).unwrap() {
                assert!(d >= 50.0);
            }
            assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn distance_symmetric(a in -89.0f64..89.0, b in -179.0f64..179.0, c in -89.0f64..89.0, d in -179.0f64..179.0) {
            let x = haversine_km(a, b, c, d).unwrap();
            let y = haversine_km(c, d, a, b).unwrap();
            prop_assert!((x - y).abs() <= 1e-9 * x.max(1.0));
            prop_assert!(x >= 0.0);
        }

        #[test]
        fn grouping_partitions_and_separates(
            pts in prop::collection::vec((40.0f64..44.0, 10.0f64..15.0), 1..40),
            seed in any::<u64>(),
            r in 10.0f64..120.0,
        ) {
            let m: Vec<_> = pts.iter().enumerate().map(|(i, (la, lo))| test_muni(&i.to_string(), *la, *lo)).collect();
            let s = build_grouping(&m, r, seed).unwrap();
            let mut all: Vec<usize> = s.groups.iter().flatten().copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..m.len()).collect::<Vec<_>>());
            if let Some(d) = min_within_group_distance(&m, &s).unwrap() {
                prop_assert!(d >= r);
            }
            // any conflict triangle needs three colors
            let g = ConflictGraph::build(&m, r).unwrap();
            for i in 0..m.len() {
                for &j in g.neighbours(i) {
                    for &k in g.neighbours(j) {
                        if k != i && g.neighbours(i).contains(&k) {
                            prop_assert!(s.groups.len() >= 3);
                        }
                    }
                }
            }
        }
    }
}
