//! Loading and classifying geounits.
//!
//! A geounit is one census block group or place: polygon geometry in a
//! planar metric CRS plus the five-group population counts joined from an
//! attribute table. Units are classified as core city, suburb, or outside
//! the analysis area; suburbs are the places whose polygons touch the core.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use geojson::{GeoJson, Value as GjValue};

use crate::error::{Error, Result};
use crate::geometry::{quantize, Geometry, Polygon, QuantizedPoint};

/// Which side of the core-city border a unit is on.
///
/// `Outside` units are retained for geometry but excluded from the
/// disparity analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RegionLabel {
    Core,
    Suburb,
    Outside,
}

impl RegionLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegionLabel::Core => "core",
            RegionLabel::Suburb => "suburb",
            RegionLabel::Outside => "outside",
        }
    }
}

/// One polygon geounit with its demographic attributes.
#[derive(Debug, Clone)]
pub struct GeoUnit {
    /// GEOID-style identifier, unique within a dataset.
    pub id: String,
    /// Metro identifier.
    pub msa_id: String,
    /// Census place containing this unit; empty if unincorporated.
    pub place_id: String,
    pub region_label: RegionLabel,
    /// White, Black, Asian, Latino, Other population counts.
    pub counts: [u64; 5],
    pub median_income: Option<f64>,
    pub land_area_m2: Option<f64>,
    pub geometry: Geometry,
    /// True once an attribute row has been joined onto this unit.
    pub attributes_joined: bool,
}

impl GeoUnit {
    pub fn total_population(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Supported geometry input formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeoFormat {
    GeoJson,
}

/// Attribute row for one geounit id.
#[derive(Debug, Clone, Default)]
pub struct AttributeRow {
    pub counts: [u64; 5],
    pub median_income: Option<f64>,
    pub land_area_m2: Option<f64>,
}

/// Attribute table keyed by geounit id.
///
/// CSV schema is fixed: `id,white,black,asian,latino,other,median_income,land_area_m2`
/// with `median_income` and `land_area_m2` allowed to be empty.
#[derive(Debug, Clone, Default)]
pub struct AttributeTable {
    pub rows: BTreeMap<String, AttributeRow>,
}

pub const ATTRIBUTE_CSV_HEADER: [&str; 8] = [
    "id",
    "white",
    "black",
    "asian",
    "latino",
    "other",
    "median_income",
    "land_area_m2",
];

impl AttributeTable {
    pub fn from_csv_path(path: &Path) -> Result<AttributeTable> {
        let display = path.display().to_string();
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
            path: display.clone(),
            detail: e.to_string(),
        })?;
        let headers = reader.headers()?.clone();
        let expected: Vec<&str> = ATTRIBUTE_CSV_HEADER.to_vec();
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::ColumnMapping(format!(
                "{display}: expected header {expected:?}, found {got:?}"
            )));
        }

        let mut rows = BTreeMap::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let parse_count = |field: usize| -> Result<u64> {
                record[field].trim().parse::<u64>().map_err(|_| Error::Parse {
                    path: display.clone(),
                    detail: format!(
                        "row {}: column {:?} is not a non-negative integer: {:?}",
                        line + 2,
                        ATTRIBUTE_CSV_HEADER[field],
                        &record[field]
                    ),
                })
            };
            let parse_opt = |field: usize| -> Result<Option<f64>> {
                let raw = record[field].trim();
                if raw.is_empty() {
                    return Ok(None);
                }
                raw.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                    path: display.clone(),
                    detail: format!(
                        "row {}: column {:?} is not a number: {raw:?}",
                        line + 2,
                        ATTRIBUTE_CSV_HEADER[field]
                    ),
                })
            };
            let id = record[0].to_string();
            let row = AttributeRow {
                counts: [
                    parse_count(1)?,
                    parse_count(2)?,
                    parse_count(3)?,
                    parse_count(4)?,
                    parse_count(5)?,
                ],
                median_income: parse_opt(6)?,
                land_area_m2: parse_opt(7)?,
            };
            rows.insert(id, row);
        }
        Ok(AttributeTable { rows })
    }
}

/// Loads geounits from a GeoJSON FeatureCollection.
///
/// Required feature properties: `id`, `msa`, `place` (empty string allowed).
/// Geometry must be Polygon or MultiPolygon; rings are validated for closure.
/// Unknown properties are ignored.
pub fn load_geounits(path: &Path, format: GeoFormat) -> Result<Vec<GeoUnit>> {
    match format {
        GeoFormat::GeoJson => load_geojson(path),
    }
}

fn load_geojson(path: &Path) -> Result<Vec<GeoUnit>> {
    let display = path.display().to_string();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: display.clone(),
        detail: e.to_string(),
    })?;
    let geojson: GeoJson = raw.parse().map_err(|e| Error::Parse {
        path: display.clone(),
        detail: format!("{e}"),
    })?;
    let collection = match geojson {
        GeoJson::FeatureCollection(fc) => fc,
        other => {
            return Err(Error::Parse {
                path: display,
                detail: format!("expected FeatureCollection, found {}", geojson_kind(&other)),
            })
        }
    };

    let mut units = Vec::with_capacity(collection.features.len());
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (index, feature) in collection.features.iter().enumerate() {
        let prop = |name: &str| -> Result<String> {
            feature
                .properties
                .as_ref()
                .and_then(|p| p.get(name))
                .and_then(|v| v.as_str().map(str::to_string))
                .ok_or_else(|| Error::Parse {
                    path: display.clone(),
                    detail: format!("feature {index}: missing string property {name:?}"),
                })
        };
        let id = prop("id")?;
        if let Some(&first) = seen.get(&id) {
            return Err(Error::DuplicateId {
                id,
                first,
                second: index,
            });
        }
        seen.insert(id.clone(), index);

        let geom = feature.geometry.as_ref().ok_or_else(|| Error::Parse {
            path: display.clone(),
            detail: format!("feature {index} ({id}): missing geometry"),
        })?;
        let mut geometry = match &geom.value {
            GjValue::Polygon(rings) => Geometry::from_polygon(convert_rings(rings)),
            GjValue::MultiPolygon(polys) => Geometry {
                polygons: polys
                    .iter()
                    .map(|rings| Polygon {
                        rings: convert_rings(rings),
                    })
                    .collect(),
            },
            other => {
                return Err(Error::GeometryKind {
                    index,
                    id,
                    found: geojson_value_kind(other).to_string(),
                })
            }
        };
        geometry.validate(&id)?;

        units.push(GeoUnit {
            msa_id: prop("msa")?,
            place_id: prop("place")?,
            id,
            region_label: RegionLabel::Outside,
            counts: [0; 5],
            median_income: None,
            land_area_m2: None,
            geometry,
            attributes_joined: false,
        });
    }
    Ok(units)
}

fn convert_rings(rings: &[Vec<Vec<f64>>]) -> Vec<Vec<(f64, f64)>> {
    rings
        .iter()
        .map(|ring| ring.iter().map(|pos| (pos[0], pos[1])).collect())
        .collect()
}

fn geojson_kind(g: &GeoJson) -> &'static str {
    match g {
        GeoJson::Geometry(_) => "Geometry",
        GeoJson::Feature(_) => "Feature",
        GeoJson::FeatureCollection(_) => "FeatureCollection",
    }
}

fn geojson_value_kind(v: &GjValue) -> &'static str {
    match v {
        GjValue::Point(_) => "Point",
        GjValue::MultiPoint(_) => "MultiPoint",
        GjValue::LineString(_) => "LineString",
        GjValue::MultiLineString(_) => "MultiLineString",
        GjValue::Polygon(_) => "Polygon",
        GjValue::MultiPolygon(_) => "MultiPolygon",
        GjValue::GeometryCollection(_) => "GeometryCollection",
    }
}

/// Outcome of joining an attribute table onto loaded units.
#[derive(Debug, Clone, Default)]
pub struct JoinReport {
    /// Units whose ids were found in the table.
    pub populated: usize,
    /// Ids of units with no attribute row; excluded from analysis.
    pub excluded: Vec<String>,
    /// Table ids that matched no geometry (collected, not fatal).
    pub warnings: Vec<String>,
}

/// Fills counts and covariates from the table. Units absent from the table
/// are flagged excluded; table rows absent from the geometry produce
/// warnings.
pub fn join_attributes(
    mut units: Vec<GeoUnit>,
    table: &AttributeTable,
) -> (Vec<GeoUnit>, JoinReport) {
    let mut report = JoinReport::default();
    let unit_ids: HashSet<&str> = units.iter().map(|u| u.id.as_str()).collect();
    for id in table.rows.keys() {
        if !unit_ids.contains(id.as_str()) {
            report
                .warnings
                .push(format!("attribute row {id:?} matches no geometry"));
        }
    }
    for unit in &mut units {
        match table.rows.get(&unit.id) {
            Some(row) => {
                unit.counts = row.counts;
                unit.median_income = row.median_income;
                unit.land_area_m2 = row.land_area_m2;
                unit.attributes_joined = true;
                report.populated += 1;
            }
            None => report.excluded.push(unit.id.clone()),
        }
    }
    (units, report)
}

/// Labels every unit Core, Suburb, or Outside by place membership.
pub fn classify_regions(
    mut units: Vec<GeoUnit>,
    core_place_ids: &BTreeSet<String>,
    suburb_place_ids: &BTreeSet<String>,
) -> Result<Vec<GeoUnit>> {
    if core_place_ids.is_empty() {
        return Err(Error::Config(
            "core_place_ids is empty; at least one core place is required".to_string(),
        ));
    }
    for unit in &mut units {
        unit.region_label = if core_place_ids.contains(&unit.place_id) {
            RegionLabel::Core
        } else if suburb_place_ids.contains(&unit.place_id) {
            RegionLabel::Suburb
        } else {
            RegionLabel::Outside
        };
    }
    Ok(units)
}

/// Finds every place whose polygon shares at least one boundary point with
/// the union of core-place polygons, using the same quantized point-sharing
/// predicate as queen contiguity. Core places themselves are not suburbs.
pub fn identify_suburbs(
    places: &[GeoUnit],
    core_place_ids: &BTreeSet<String>,
    snap_tolerance: f64,
) -> Result<BTreeSet<String>> {
    if core_place_ids.is_empty() {
        return Err(Error::Config(
            "core_place_ids is empty; at least one core place is required".to_string(),
        ));
    }
    let mut core_points: HashSet<QuantizedPoint> = HashSet::new();
    for place in places {
        if core_place_ids.contains(&place.id) {
            for v in place.geometry.vertices() {
                core_points.insert(quantize(v, snap_tolerance));
            }
        }
    }

    let touches = crate::par::map_slice(places, |place| {
        if core_place_ids.contains(&place.id) {
            return false;
        }
        place
            .geometry
            .vertices()
            .any(|v| core_points.contains(&quantize(v, snap_tolerance)))
    });

    Ok(places
        .iter()
        .zip(touches)
        .filter(|(_, t)| *t)
        .map(|(p, _)| p.id.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::square_ring;
    use std::io::Write;

    fn place(id: &str, x0: f64) -> GeoUnit {
        GeoUnit {
            id: id.to_string(),
            msa_id: "M".to_string(),
            place_id: id.to_string(),
            region_label: RegionLabel::Outside,
            counts: [0; 5],
            median_income: None,
            land_area_m2: None,
            geometry: Geometry::from_polygon(vec![square_ring(x0, 0.0, 1.0)]),
            attributes_joined: false,
        }
    }

    fn write_temp(contents: &str, ext: &str) -> tempfile::TempPath {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.into_temp_path()
    }

    const TWO_FEATURES: &str = r##"{"type":"FeatureCollection","features":[
      {"type":"Feature","properties":{"id":"A","msa":"M","place":"P"},
       "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
      {"type":"Feature","properties":{"id":"B","msa":"M","place":""},
       "geometry":{"type":"MultiPolygon","coordinates":[[[[2,0],[3,0],[3,1],[2,1],[2,0]]]]}}
    ]}"##;

    #[test]
    fn load_round_trips_two_features() {
        let path = write_temp(TWO_FEATURES, ".geojson");
        let units = load_geounits(&path, GeoFormat::GeoJson).unwrap();
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].id, "A");
        assert_eq!(units[1].id, "B");
        assert_eq!(units[0].place_id, "P");
        assert!(units[1].place_id.is_empty());
    }

    #[test]
    fn load_rejects_linestring() {
        let doc = r##"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"id":"L","msa":"M","place":""},
           "geometry":{"type":"LineString","coordinates":[[0,0],[1,1]]}}
        ]}"##;
        let path = write_temp(doc, ".geojson");
        match load_geounits(&path, GeoFormat::GeoJson) {
            Err(Error::GeometryKind { index, id, found }) => {
                assert_eq!(index, 0);
                assert_eq!(id, "L");
                assert_eq!(found, "LineString");
            }
            other => panic!("expected GeometryKind error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_duplicate_ids() {
        let doc = r##"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"id":"X","msa":"M","place":""},
           "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
          {"type":"Feature","properties":{"id":"X","msa":"M","place":""},
           "geometry":{"type":"Polygon","coordinates":[[[2,0],[3,0],[3,1],[2,1],[2,0]]]}}
        ]}"##;
        let path = write_temp(doc, ".geojson");
        match load_geounits(&path, GeoFormat::GeoJson) {
            Err(Error::DuplicateId { id, first, second }) => {
                assert_eq!(id, "X");
                assert_eq!((first, second), (0, 1));
            }
            other => panic!("expected DuplicateId error, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_feature_index_on_missing_property() {
        let doc = r##"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"id":"A","msa":"M","place":""},
           "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
          {"type":"Feature","properties":{"msa":"M","place":""},
           "geometry":{"type":"Polygon","coordinates":[[[2,0],[3,0],[3,1],[2,1],[2,0]]]}}
        ]}"##;
        let path = write_temp(doc, ".geojson");
        let err = load_geounits(&path, GeoFormat::GeoJson).unwrap_err();
        assert!(err.to_string().contains("feature 1"), "{err}");
    }

    fn table_of(ids: &[&str]) -> AttributeTable {
        let mut rows = BTreeMap::new();
        for id in ids {
            rows.insert(
                id.to_string(),
                AttributeRow {
                    counts: [10, 0, 0, 0, 0],
                    median_income: Some(50_000.0),
                    land_area_m2: None,
                },
            );
        }
        AttributeTable { rows }
    }

    #[test]
    fn join_totality() {
        let path = write_temp(TWO_FEATURES, ".geojson");
        let units = load_geounits(&path, GeoFormat::GeoJson).unwrap();

        let (units, report) = join_attributes(units, &table_of(&["A", "B"]));
        assert_eq!(report.populated, 2);
        assert!(report.excluded.is_empty());
        assert!(units.iter().all(|u| u.attributes_joined));

        let (units, report) = join_attributes(units, &table_of(&["A"]));
        assert_eq!(report.populated, 1);
        assert_eq!(report.excluded, vec!["B".to_string()]);
        assert_eq!(report.populated + report.excluded.len(), units.len());
    }

    #[test]
    fn join_warns_on_unmatched_table_id() {
        let path = write_temp(TWO_FEATURES, ".geojson");
        let units = load_geounits(&path, GeoFormat::GeoJson).unwrap();
        let (_, report) = join_attributes(units, &table_of(&["A", "B", "ZZZ"]));
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].contains("ZZZ"));
    }

    #[test]
    fn attribute_csv_schema_is_fixed() {
        let good = "id,white,black,asian,latino,other,median_income,land_area_m2\nA,1,2,3,4,5,,\n";
        let path = write_temp(good, ".csv");
        let table = AttributeTable::from_csv_path(&path).unwrap();
        assert_eq!(table.rows["A"].counts, [1, 2, 3, 4, 5]);
        assert_eq!(table.rows["A"].median_income, None);

        let bad = "id,white,black\nA,1,2\n";
        let path = write_temp(bad, ".csv");
        assert!(matches!(
            AttributeTable::from_csv_path(&path),
            Err(Error::ColumnMapping(_))
        ));
    }

    #[test]
    fn classify_partitions_units() {
        let path = write_temp(TWO_FEATURES, ".geojson");
        let mut units = load_geounits(&path, GeoFormat::GeoJson).unwrap();
        units[1].place_id = "S".to_string();
        let core: BTreeSet<String> = ["P".to_string()].into();
        let suburbs: BTreeSet<String> = ["S".to_string()].into();
        let units = classify_regions(units, &core, &suburbs).unwrap();
        assert_eq!(units[0].region_label, RegionLabel::Core);
        assert_eq!(units[1].region_label, RegionLabel::Suburb);

        let err = classify_regions(units, &BTreeSet::new(), &suburbs);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn suburbs_strip_only_adjacent() {
        // [A|B|C]: B touches A, C does not.
        let places = vec![place("A", 0.0), place("B", 1.0), place("C", 2.0)];
        let core: BTreeSet<String> = ["A".to_string()].into();
        let suburbs = identify_suburbs(&places, &core, 0.001).unwrap();
        assert_eq!(suburbs, ["B".to_string()].into());
    }

    #[test]
    fn suburbs_grid_corner_touch_counts() {
        // 3x3 grid of unit squares, core in the middle: all 8 others touch.
        let mut places = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                let id = format!("p{r}{c}");
                let mut p = place(&id, 0.0);
                p.geometry = Geometry::from_polygon(vec![square_ring(c as f64, r as f64, 1.0)]);
                places.push(p);
            }
        }
        let core: BTreeSet<String> = ["p11".to_string()].into();
        let suburbs = identify_suburbs(&places, &core, 0.001).unwrap();
        assert_eq!(suburbs.len(), 8);
        assert!(!suburbs.contains("p11"));
    }

    #[test]
    fn suburbs_water_gap_excluded() {
        // D is 0.5 m away from A: no shared point, not a suburb.
        let places = vec![place("A", 0.0), place("D", 1.5)];
        let core: BTreeSet<String> = ["A".to_string()].into();
        let suburbs = identify_suburbs(&places, &core, 0.001).unwrap();
        assert!(suburbs.is_empty());
    }

    #[test]
    fn suburbs_invariant_under_input_order() {
        let mut places = vec![place("A", 0.0), place("B", 1.0), place("C", 2.0)];
        let core: BTreeSet<String> = ["A".to_string()].into();
        let forward = identify_suburbs(&places, &core, 0.001).unwrap();
        places.reverse();
        let reversed = identify_suburbs(&places, &core, 0.001).unwrap();
        assert_eq!(forward, reversed);
    }
}
