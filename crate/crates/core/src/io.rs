//! Input bundles on disk: CSV schemas, validation with row numbers, and
//! atomic output writes.
//!
//! A bundle directory holds
//! - `municipalities.csv`: `id,name,lat,lon,cluster,p2,p3_ext,amplification`
//!   followed by exposure columns (`RC.gl,RC.sl,A.gl,A.sl,M` for seismic,
//!   `S1,S2,S3plus` for flood); an empty `p3_ext` marks missing flood data
//! - `pga_exceedance.csv`: `municipality_id,pga,exceedance_prob`
//! - `flood_counts.csv`: `year,cluster,n_events`
//! - `flood_clusters.csv`: `cluster,mean_flooded_munis,cluster_size`
//! - `flood_depths.csv`: `event_id,depth_m`
//! - optionally `fragility_catalogue.toml` and `depth_damage.csv`, which
//!   replace the built-in vulnerability tables.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{FloodCluster, Municipality, StoreyClass, Typology};
use crate::loss::Peril;
use crate::vulnerability::{Catalogue, DepthDamageSet};

pub const MUNICIPALITIES: &str = "municipalities.csv";
pub const PGA_EXCEEDANCE: &str = "pga_exceedance.csv";
pub const FLOOD_COUNTS: &str = "flood_counts.csv";
pub const FLOOD_CLUSTERS: &str = "flood_clusters.csv";
pub const FLOOD_DEPTHS: &str = "flood_depths.csv";
pub const CATALOGUE_FILE: &str = "fragility_catalogue.toml";
pub const DEPTH_DAMAGE_FILE: &str = "depth_damage.csv";

const BASE_COLUMNS: [&str; 8] = ["id", "name", "lat", "lon", "cluster", "p2", "p3_ext", "amplification"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloodCountRow {
    pub year: i32,
    pub cluster: FloodCluster,
    pub n_events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster: FloodCluster,
    pub mean_flooded_munis: f64,
    pub cluster_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub event_id: String,
    pub depth_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceRow {
    pub municipality_id: String,
    pub pga: f64,
    pub exceedance_prob: f64,
}

/// Flood records; all three tables are needed for the flood peril.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FloodRecords {
    pub counts: Vec<FloodCountRow>,
    pub clusters: Vec<ClusterRow>,
    pub depths: Vec<DepthRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub municipalities: Vec<Municipality>,
    pub has_structural: bool,
    pub has_storeys: bool,
    /// Exceedance points keyed by municipality id, in file order.
    pub exceedance: BTreeMap<String, Vec<(f64, f64)>>,
    pub flood: Option<FloodRecords>,
    /// Raw text of overriding vulnerability tables.
    pub catalogue_toml: Option<String>,
    pub depth_damage_csv: Option<String>,
}

impl Bundle {
    pub fn catalogue(&self) -> Result<Catalogue> {
        match &self.catalogue_toml {
            Some(s) => Catalogue::from_toml_str(s),
            None => Ok(Catalogue::builtin()),
        }
    }

    pub fn depth_damage(&self) -> Result<DepthDamageSet> {
        match &self.depth_damage_csv {
            Some(s) => DepthDamageSet::from_csv_str(s),
            None => Ok(DepthDamageSet::builtin()),
        }
    }

    /// Lists what the bundle lacks for `peril`, as file or column names.
    pub fn missing_for(&self, peril: Peril) -> Vec<String> {
        let mut missing = Vec::new();
        let seismic = matches!(peril, Peril::Seismic | Peril::Multi);
        let flood = matches!(peril, Peril::Flood | Peril::Multi);
        if seismic {
            if !self.has_structural {
                missing.extend(Typology::ALL.iter().map(|t| format!("{MUNICIPALITIES}:{}", t.label())));
            }
            if self.exceedance.is_empty() {
                missing.push(PGA_EXCEEDANCE.to_string());
            }
        }
        if flood {
            if !self.has_storeys {
                missing.extend(
                    StoreyClass::ALL
                        .iter()
                        .map(|s| format!("{MUNICIPALITIES}:{}", s.label())),
                );
            }
            if self.flood.is_none() {
                missing.extend([FLOOD_COUNTS, FLOOD_CLUSTERS, FLOOD_DEPTHS].map(String::from));
            }
        }
        missing
    }

    pub fn require(&self, peril: Peril) -> Result<()> {
        let missing = self.missing_for(peril);
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::input(format!(
                "bundle lacks inputs for the {} peril: {}",
                peril.label(),
                missing.join(", ")
            )))
        }
    }
}

fn csv_err(file: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Csv {
        file: file.to_string(),
        row,
        message: message.into(),
    }
}

fn open_csv(dir: &Path, file: &str) -> Result<csv::Reader<fs::File>> {
    let path = dir.join(file);
    let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

/// Reads typed rows, reporting the 1-based line number of bad records.
fn read_rows<T: for<'de> Deserialize<'de>>(dir: &Path, file: &str) -> Result<Vec<T>> {
    let mut rdr = open_csv(dir, file)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<T>() {
        match rec {
            Ok(r) => out.push(r),
            Err(e) => {
                let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
                return Err(csv_err(file, row, e.to_string()));
            }
        }
    }
    Ok(out)
}

fn parse_f64(file: &str, row: usize, col: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| csv_err(file, row, format!("column {col}: '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(csv_err(file, row, format!("column {col}: non-finite value")));
    }
    Ok(v)
}

pub fn read_municipalities(dir: &Path) -> Result<(Vec<Municipality>, bool, bool)> {
    let file = MUNICIPALITIES;
    let mut rdr = open_csv(dir, file)?;
    let headers = rdr.headers().map_err(|e| csv_err(file, 1, e.to_string()))?.clone();
    let col: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let missing: Vec<&str> = BASE_COLUMNS.iter().copied().filter(|c| !col.contains_key(c)).collect();
    if !missing.is_empty() {
        return Err(csv_err(file, 1, format!("missing columns: {}", missing.join(", "))));
    }
    let structural_cols: Vec<Option<usize>> = Typology::ALL.iter().map(|t| col.get(t.label()).copied()).collect();
    let storey_cols: Vec<Option<usize>> = StoreyClass::ALL.iter().map(|s| col.get(s.label()).copied()).collect();
    let has_structural = structural_cols.iter().all(Option::is_some);
    let has_storeys = storey_cols.iter().all(Option::is_some);
    for (present, names) in [
        (&structural_cols, Typology::ALL.map(|t| t.label()).to_vec()),
        (&storey_cols, StoreyClass::ALL.map(|s| s.label()).to_vec()),
    ] {
        let some = present.iter().filter(|c| c.is_some()).count();
        if some > 0 && some < present.len() {
            let absent: Vec<&str> = present
                .iter()
                .zip(&names)
                .filter(|(c, _)| c.is_none())
                .map(|(_, n)| *n)
                .collect();
            return Err(csv_err(
                file,
                1,
                format!("incomplete exposure columns, missing: {}", absent.join(", ")),
            ));
        }
    }

    let mut munis = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
            csv_err(file, row, e.to_string())
        })?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let get = |name: &str| rec.get(col[name]).unwrap_or("");
        let num = |name: &str| parse_f64(file, row, name, get(name));
        let id = get("id").to_string();
        if id.is_empty() {
            return Err(csv_err(file, row, "empty municipality id"));
        }
        if let Some(prev) = seen.insert(id.clone(), row) {
            return Err(csv_err(
                file,
                row,
                format!("duplicate id '{id}' (first seen on row {prev})"),
            ));
        }
        let p3 = match get("p3_ext") {
            "" => None,
            s => Some(parse_f64(file, row, "p3_ext", s)?),
        };
        let mut structural = [0.0; 5];
        if has_structural {
            for (i, t) in Typology::ALL.iter().enumerate() {
                structural[i] = num(t.label())?;
            }
        }
        let mut storeys = [0.0; 3];
        if has_storeys {
            for (i, s) in StoreyClass::ALL.iter().enumerate() {
                storeys[i] = num(s.label())?;
            }
        }
        let m = Municipality {
            name: get("name").to_string(),
            lat: num("lat")?,
            lon: num("lon")?,
            cluster: FloodCluster::parse(get("cluster")).map_err(|e| csv_err(file, row, e.to_string()))?,
            p2_index: num("p2")?,
            p3_extent: p3,
            amplification: num("amplification")?,
            structural,
            storeys,
            id,
        };
        m.validate().map_err(|e| csv_err(file, row, e.to_string()))?;
        munis.push(m);
    }
    if munis.is_empty() {
        return Err(csv_err(file, 1, "no municipalities"));
    }
    Ok((munis, has_structural, has_storeys))
}

pub fn read_bundle(dir: &Path) -> Result<Bundle> {
    if !dir.is_dir() {
        return Err(Error::input(format!(
            "input directory {} does not exist",
            dir.display()
        )));
    }
    let (municipalities, has_structural, has_storeys) = read_municipalities(dir)?;
    let ids: HashMap<&str, ()> = municipalities.iter().map(|m| (m.id.as_str(), ())).collect();

    let mut exceedance: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    if dir.join(PGA_EXCEEDANCE).exists() {
        let rows: Vec<ExceedanceRow> = read_rows(dir, PGA_EXCEEDANCE)?;
        for (i, r) in rows.into_iter().enumerate() {
            if !ids.contains_key(r.municipality_id.as_str()) {
                return Err(csv_err(
                    PGA_EXCEEDANCE,
                    i + 2,
                    format!("unknown municipality '{}'", r.municipality_id),
                ));
            }
            exceedance
                .entry(r.municipality_id)
                .or_default()
                .push((r.pga, r.exceedance_prob));
        }
    }

    // partial flood records leave the flood peril unavailable; `require`
    // then lists the three files
    let complete = [FLOOD_COUNTS, FLOOD_CLUSTERS, FLOOD_DEPTHS]
        .iter()
        .all(|f| dir.join(f).exists());
    let flood = if complete {
        let depths: Vec<DepthRow> = read_rows(dir, FLOOD_DEPTHS)?;
        for (i, d) in depths.iter().enumerate() {
            if !(d.depth_m > 0.0) || !d.depth_m.is_finite() {
                return Err(csv_err(
                    FLOOD_DEPTHS,
                    i + 2,
                    format!("depth {} must be positive", d.depth_m),
                ));
            }
        }
        Some(FloodRecords {
            counts: read_rows(dir, FLOOD_COUNTS)?,
            clusters: read_rows(dir, FLOOD_CLUSTERS)?,
            depths,
        })
    } else {
        None
    };

    let read_opt = |f: &str| -> Result<Option<String>> {
        let p = dir.join(f);
        if p.exists() {
            fs::read_to_string(&p).map(Some).map_err(|e| Error::io(&p, e))
        } else {
            Ok(None)
        }
    };
    Ok(Bundle {
        municipalities,
        has_structural,
        has_storeys,
        exceedance,
        flood,
        catalogue_toml: read_opt(CATALOGUE_FILE)?,
        depth_damage_csv: read_opt(DEPTH_DAMAGE_FILE)?,
    })
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::input(format!("{} is not a file path", path.display())))?;
    let tmp: PathBuf = parent.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Serializes rows to CSV bytes.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::input(format!("csv serialization: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Error::input(format!("csv serialization: {e}")))
}

fn records_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::input(format!("csv serialization: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| Error::input(format!("csv serialization: {e}")))
}

pub fn write_bundle(dir: &Path, b: &Bundle) -> Result<()> {
    create_dir(dir)?;
    let mut header: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    if b.has_structural {
        header.extend(Typology::ALL.iter().map(|t| t.label().to_string()));
    }
    if b.has_storeys {
        header.extend(StoreyClass::ALL.iter().map(|s| s.label().to_string()));
    }
    let rows: Vec<Vec<String>> = b
        .municipalities
        .iter()
        .map(|m| {
            let mut r = vec![
                m.id.clone(),
                m.name.clone(),
                m.lat.to_string(),
                m.lon.to_string(),
                m.cluster.label().to_string(),
                m.p2_index.to_string(),
                m.p3_extent.map(|v| v.to_string()).unwrap_or_default(),
                m.amplification.to_string(),
            ];
            if b.has_structural {
                r.extend(m.structural.iter().map(|v| v.to_string()));
            }
            if b.has_storeys {
                r.extend(m.storeys.iter().map(|v| v.to_string()));
            }
            r
        })
        .collect();
    write_atomic(&dir.join(MUNICIPALITIES), &records_bytes(&header, &rows)?)?;

    // keep municipality order rather than the map's key order
    let mut ex_rows = Vec::new();
    for m in &b.municipalities {
        if let Some(points) = b.exceedance.get(&m.id) {
            for &(pga, p) in points {
                ex_rows.push(ExceedanceRow {
                    municipality_id: m.id.clone(),
                    pga,
                    exceedance_prob: p,
                });
            }
        }
    }
    if !ex_rows.is_empty() {
        write_atomic(&dir.join(PGA_EXCEEDANCE), &csv_bytes(&ex_rows)?)?;
    }
    if let Some(f) = &b.flood {
        write_atomic(&dir.join(FLOOD_COUNTS), &csv_bytes(&f.counts)?)?;
        write_atomic(&dir.join(FLOOD_CLUSTERS), &csv_bytes(&f.clusters)?)?;
        write_atomic(&dir.join(FLOOD_DEPTHS), &csv_bytes(&f.depths)?)?;
    }
    if let Some(s) = &b.catalogue_toml {
        write_atomic(&dir.join(CATALOGUE_FILE), s.as_bytes())?;
    }
    if let Some(s) = &b.depth_damage_csv {
        write_atomic(&dir.join(DEPTH_DAMAGE_FILE), s.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,name,lat,lon,cluster,p2,p3_ext,amplification,RC.gl,RC.sl,A.gl,A.sl,M\n";

    fn dir_with(files: &[(&str, &str)]) -> tempfile::TempDir {
        let d = tempfile::tempdir().unwrap();
        for (name, body) in files {
            fs::write(d.path().join(name), body).unwrap();
        }
        d
    }

    #[test]
    fn malformed_row_reports_line() {
        let body = format!("{HEADER}a,A,42,12,none,0,0.1,1,1,1,1,1,1\nb,B,42,xx,none,0,0.1,1,1,1,1,1,1\n");
        let d = dir_with(&[(MUNICIPALITIES, &body)]);
        let e = read_bundle(d.path()).unwrap_err();
        match e {
            Error::Csv { row, ref message, .. } => {
                assert_eq!(row, 3);
                assert!(message.contains("lon"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_flood_inputs_are_listed() {
        let body = format!("{HEADER}a,A,42,12,A_P1,0,,1,1,1,1,1,1\n");
        let d = dir_with(&[
            (MUNICIPALITIES, &body),
            (PGA_EXCEEDANCE, "municipality_id,pga,exceedance_prob\na,0.1,0.01\n"),
        ]);
        let b = read_bundle(d.path()).unwrap();
        assert!(b.require(Peril::Seismic).is_ok());
        assert_eq!(b.municipalities[0].p3_extent, None);
        let msg = b.require(Peril::Multi).unwrap_err().to_string();
        assert!(msg.contains("S1") && msg.contains(FLOOD_DEPTHS), "{msg}");
    }

    #[test]
    fn duplicate_and_unknown_ids() {
        let body = format!("{HEADER}a,A,42,12,none,0,0,1,1,1,1,1,1\na,B,42,12,none,0,0,1,1,1,1,1,1\n");
        let d = dir_with(&[(MUNICIPALITIES, &body)]);
        assert!(read_bundle(d.path()).unwrap_err().to_string().contains("duplicate"));
        let body = format!("{HEADER}a,A,42,12,none,0,0,1,1,1,1,1,1\n");
        let d = dir_with(&[
            (MUNICIPALITIES, &body),
            (PGA_EXCEEDANCE, "municipality_id,pga,exceedance_prob\nz,0.1,0.01\n"),
        ]);
        assert!(read_bundle(d.path())
            .unwrap_err()
            .to_string()
            .contains("unknown municipality"));
    }

    #[test]
    fn partial_exposure_columns_rejected() {
        let body = "id,name,lat,lon,cluster,p2,p3_ext,amplification,S1,S2\na,A,42,12,none,0,0,1,1,1\n";
        let d = dir_with(&[(MUNICIPALITIES, body)]);
        assert!(read_bundle(d.path()).unwrap_err().to_string().contains("S3plus"));
    }

    #[test]
    fn atomic_write_replaces() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(d.path()).unwrap().count(), 1);
    }
}
