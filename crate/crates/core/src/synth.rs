//! Synthetic dataset generation.
//!
//! Deterministic fixtures used by the test suites, the benchmarks, and for
//! demo runs: the canonical twelve-unit border example, random two-region
//! grids, and full multi-metro datasets that can be written to disk in the
//! exact input formats the pipeline consumes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{square_ring, Geometry, Ring};
use crate::ingest::{AttributeRow, AttributeTable, GeoUnit, RegionLabel};

/// Rectangle ring with a vertex at every cell corner along the boundary,
/// so place polygons share exact vertex chains with their member cells.
pub fn rect_ring_cells(x0: f64, y0: f64, w_cells: usize, h_cells: usize, cell: f64) -> Ring {
    let mut ring = Vec::with_capacity(2 * (w_cells + h_cells) + 1);
    for i in 0..=w_cells {
        ring.push((x0 + i as f64 * cell, y0));
    }
    for j in 1..=h_cells {
        ring.push((x0 + w_cells as f64 * cell, y0 + j as f64 * cell));
    }
    for i in (0..w_cells).rev() {
        ring.push((x0 + i as f64 * cell, y0 + h_cells as f64 * cell));
    }
    for j in (1..h_cells).rev() {
        ring.push((x0, y0 + j as f64 * cell));
    }
    ring.push((x0, y0));
    ring
}

fn unit(id: String, msa: &str, place: &str, geometry: Geometry) -> GeoUnit {
    GeoUnit {
        id,
        msa_id: msa.to_string(),
        place_id: place.to_string(),
        region_label: RegionLabel::Outside,
        counts: [0; 5],
        median_income: None,
        land_area_m2: None,
        geometry,
        attributes_joined: false,
    }
}

/// The canonical worked example: twelve unit squares in a 4x3 grid with a
/// vertical border down the middle. Every left cell is maximally diverse
/// (five equal groups, H = 0.8), every right cell is monoethnic (H = 0).
/// The two central units each have eight neighbors, three of them across
/// the border, giving BDI = -0.3 on the diverse side and +0.3 on the
/// uniform side.
pub struct FigureFixture {
    pub units: Vec<GeoUnit>,
    pub labels: Vec<RegionLabel>,
    pub places: Vec<GeoUnit>,
    /// Index of the central unit on the diverse (core) side.
    pub diverse_center: usize,
    /// Index of the central unit on the uniform (suburb) side.
    pub uniform_center: usize,
    pub msa_id: String,
    pub core_place_id: String,
    pub suburb_place_id: String,
}

pub fn figure_fixture() -> FigureFixture {
    let msa = "FIG";
    let mut units = Vec::with_capacity(12);
    let mut labels = Vec::with_capacity(12);
    for r in 0..3 {
        for c in 0..4 {
            let core_side = c < 2;
            let place = if core_side { "CORE" } else { "SUB" };
            let mut u = unit(
                format!("F{r}{c}"),
                msa,
                place,
                Geometry::from_polygon(vec![square_ring(c as f64, r as f64, 1.0)]),
            );
            u.counts = if core_side {
                [20, 20, 20, 20, 20]
            } else {
                [100, 0, 0, 0, 0]
            };
            u.median_income = Some(if core_side { 50_000.0 } else { 60_000.0 });
            u.attributes_joined = true;
            u.region_label = if core_side {
                RegionLabel::Core
            } else {
                RegionLabel::Suburb
            };
            labels.push(u.region_label);
            units.push(u);
        }
    }
    let places = vec![
        unit(
            "CORE".to_string(),
            msa,
            "CORE",
            Geometry::from_polygon(vec![rect_ring_cells(0.0, 0.0, 2, 3, 1.0)]),
        ),
        unit(
            "SUB".to_string(),
            msa,
            "SUB",
            Geometry::from_polygon(vec![rect_ring_cells(2.0, 0.0, 2, 3, 1.0)]),
        ),
    ];
    FigureFixture {
        units,
        labels,
        places,
        diverse_center: 5,  // row 1, col 1
        uniform_center: 6,  // row 1, col 2
        msa_id: msa.to_string(),
        core_place_id: "CORE".to_string(),
        suburb_place_id: "SUB".to_string(),
    }
}

/// A rows x cols grid of unit squares with a jagged vertical two-region
/// split and a random attribute field in [0, 0.8].
pub struct GridFixture {
    pub units: Vec<GeoUnit>,
    pub labels: Vec<RegionLabel>,
    pub x: Vec<f64>,
}

pub fn random_two_region_grid(rows: usize, cols: usize, seed: u64) -> GridFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = cols / 2;
    let splits: Vec<usize> = (0..rows)
        .map(|_| (base as i64 + rng.gen_range(-1i64..=1)).clamp(1, cols as i64 - 1) as usize)
        .collect();
    let mut units = Vec::with_capacity(rows * cols);
    let mut labels = Vec::with_capacity(rows * cols);
    let mut x = Vec::with_capacity(rows * cols);
    for (r, &split) in splits.iter().enumerate() {
        for c in 0..cols {
            let core_side = c < split;
            let mut u = unit(
                format!("G{r:03}{c:03}"),
                "GRID",
                if core_side { "C" } else { "S" },
                Geometry::from_polygon(vec![square_ring(c as f64, r as f64, 1.0)]),
            );
            u.region_label = if core_side {
                RegionLabel::Core
            } else {
                RegionLabel::Suburb
            };
            u.attributes_joined = true;
            labels.push(u.region_label);
            x.push(rng.gen_range(0.0..=0.8));
            units.push(u);
        }
    }
    GridFixture { units, labels, x }
}

/// Shape of a generated multi-metro dataset.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub metros: usize,
    /// Grid rows per metro.
    pub rows: usize,
    /// Columns of core-city cells per metro.
    pub core_cols: usize,
    /// Columns of suburban cells per metro.
    pub suburb_cols: usize,
    /// Horizontal bands the suburban strip is split into; each band is one
    /// census place touching the core.
    pub suburb_bands: usize,
    /// Cell edge length in meters.
    pub cell_size: f64,
    pub seed: u64,
    /// Append an unincorporated strip touching the suburbs plus a detached
    /// exurb place, both of which classify as Outside.
    pub with_outside: bool,
    /// Split the first metro's core into two core places.
    pub split_first_core: bool,
    /// Extra suburb columns for the last metro (to hit exact unit counts).
    pub extra_suburb_cols_last: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            metros: 2,
            rows: 12,
            core_cols: 6,
            suburb_cols: 6,
            suburb_bands: 3,
            cell_size: 100.0,
            seed: 1,
            with_outside: false,
            split_first_core: false,
            extra_suburb_cols_last: 0,
        }
    }
}

/// A generated dataset in the exact shape the pipeline ingests.
pub struct SynthDataset {
    pub units: Vec<GeoUnit>,
    pub places: Vec<GeoUnit>,
    pub unit_attributes: AttributeTable,
    pub place_attributes: AttributeTable,
    /// msa id -> core place ids.
    pub metros: Vec<(String, Vec<String>)>,
}

/// Generates a deterministic multi-metro dataset. Core cells are diverse,
/// each suburb band leans toward one dominant group, and a few units are
/// deliberately defective: every 53rd analysis cell has zero population and
/// every 97th is missing from the attribute table. Every 7th suburb place
/// has no median income, exercising listwise deletion downstream.
pub fn synthetic_metros(opts: &SynthOptions) -> SynthDataset {
    let cell = opts.cell_size;
    let mut units = Vec::new();
    let mut places = Vec::new();
    let mut unit_rows: BTreeMap<String, AttributeRow> = BTreeMap::new();
    let mut place_rows: BTreeMap<String, AttributeRow> = BTreeMap::new();
    let mut metros = Vec::new();

    let outside_cols = if opts.with_outside { 3 } else { 0 }; // strip + gap + exurb
    let mut global_index: u64 = 0;
    let mut suburb_counter = 0usize;

    for m in 0..opts.metros {
        let msa = format!("M{m:02}");
        let suburb_cols = opts.suburb_cols
            + if m + 1 == opts.metros {
                opts.extra_suburb_cols_last
            } else {
                0
            };
        let metro_cols = opts.core_cols + suburb_cols + outside_cols;
        // 2-cell gap between metros so nothing touches across metros.
        let x0 = (m * (metro_cols + 2)) as f64 * cell;

        // Core place polygons.
        let core_ids: Vec<String> = if opts.split_first_core && m == 0 {
            let half = opts.core_cols / 2;
            let ids = vec![format!("{msa}CA"), format!("{msa}CB")];
            places.push(unit(
                ids[0].clone(),
                &msa,
                &ids[0],
                Geometry::from_polygon(vec![rect_ring_cells(x0, 0.0, half, opts.rows, cell)]),
            ));
            places.push(unit(
                ids[1].clone(),
                &msa,
                &ids[1],
                Geometry::from_polygon(vec![rect_ring_cells(
                    x0 + half as f64 * cell,
                    0.0,
                    opts.core_cols - half,
                    opts.rows,
                    cell,
                )]),
            ));
            ids
        } else {
            let id = format!("{msa}C");
            places.push(unit(
                id.clone(),
                &msa,
                &id,
                Geometry::from_polygon(vec![rect_ring_cells(
                    x0,
                    0.0,
                    opts.core_cols,
                    opts.rows,
                    cell,
                )]),
            ));
            vec![id]
        };
        for id in &core_ids {
            place_rows.insert(id.clone(), AttributeRow::default());
        }

        // Suburb band polygons: rows split into nearly equal bands.
        let bands = opts.suburb_bands.clamp(1, opts.rows);
        let mut band_of_row = vec![0usize; opts.rows];
        let mut band_ranges = Vec::with_capacity(bands);
        for b in 0..bands {
            let r0 = b * opts.rows / bands;
            let r1 = (b + 1) * opts.rows / bands;
            band_of_row[r0..r1].fill(b);
            band_ranges.push((r0, r1));
        }
        let suburb_x = x0 + opts.core_cols as f64 * cell;
        for (b, &(r0, r1)) in band_ranges.iter().enumerate() {
            let id = format!("{msa}S{b:02}");
            places.push(unit(
                id.clone(),
                &msa,
                &id,
                Geometry::from_polygon(vec![rect_ring_cells(
                    suburb_x,
                    r0 as f64 * cell,
                    suburb_cols,
                    r1 - r0,
                    cell,
                )]),
            ));
            let income = if suburb_counter % 7 == 6 {
                None
            } else {
                Some(42_000.0 + 2_500.0 * b as f64 + 750.0 * m as f64)
            };
            let land_area = if suburb_counter % 5 == 4 {
                None // fall back to polygon area
            } else {
                Some((suburb_cols * (r1 - r0)) as f64 * cell * cell)
            };
            place_rows.insert(
                id.clone(),
                AttributeRow {
                    counts: [0; 5],
                    median_income: income,
                    land_area_m2: land_area,
                },
            );
            suburb_counter += 1;
        }

        // Detached exurb place, two cells past the unincorporated strip.
        let exurb_id = format!("{msa}X");
        if opts.with_outside {
            let exurb_x = suburb_x + (suburb_cols + 2) as f64 * cell;
            places.push(unit(
                exurb_id.clone(),
                &msa,
                &exurb_id,
                Geometry::from_polygon(vec![rect_ring_cells(exurb_x, 0.0, 1, opts.rows, cell)]),
            ));
            place_rows.insert(exurb_id.clone(), AttributeRow::default());
        }

        // Block-group cells.
        for (r, &band) in band_of_row.iter().enumerate() {
            for c in 0..metro_cols {
                if opts.with_outside && c == opts.core_cols + suburb_cols + 1 {
                    continue; // the gap column holds no units
                }
                let cx = x0 + c as f64 * cell;
                let cy = r as f64 * cell;
                let id = format!("{msa}-{r:03}-{c:04}");
                let place = if c < opts.core_cols {
                    if opts.split_first_core && m == 0 && c < opts.core_cols / 2 {
                        core_ids[0].clone()
                    } else {
                        core_ids[core_ids.len() - 1].clone()
                    }
                } else if c < opts.core_cols + suburb_cols {
                    format!("{msa}S{band:02}")
                } else if c == opts.core_cols + suburb_cols {
                    String::new() // unincorporated strip: Outside
                } else {
                    exurb_id.clone()
                };
                units.push(unit(
                    id.clone(),
                    &msa,
                    &place,
                    Geometry::from_polygon(vec![square_ring(cx, cy, cell)]),
                ));

                let analysis_cell = c < opts.core_cols + suburb_cols;
                let seq = global_index;
                global_index += 1;
                if analysis_cell && seq % 97 == 96 {
                    continue; // simulate a missing attribute row
                }
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(seq);
                let counts: [u64; 5] = if analysis_cell && seq % 53 == 52 {
                    [0; 5] // simulate an uninhabited cell
                } else if c < opts.core_cols {
                    core::array::from_fn(|_| rng.gen_range(20..120))
                } else {
                    let dominant = (band + m) % 5;
                    core::array::from_fn(|g| {
                        if g == dominant {
                            rng.gen_range(200..400)
                        } else {
                            rng.gen_range(0..40)
                        }
                    })
                };
                unit_rows.insert(
                    id,
                    AttributeRow {
                        counts,
                        median_income: Some(rng.gen_range(25_000.0..90_000.0)),
                        land_area_m2: Some(cell * cell),
                    },
                );
            }
        }

        // Aggregate counts into the place rows for realism.
        for u in units.iter().filter(|u| u.msa_id == msa) {
            if u.place_id.is_empty() {
                continue;
            }
            if let Some(row) = unit_rows.get(&u.id) {
                if let Some(place_row) = place_rows.get_mut(&u.place_id) {
                    for g in 0..5 {
                        place_row.counts[g] += row.counts[g];
                    }
                }
            }
        }
        for id in &core_ids {
            if let Some(row) = place_rows.get_mut(id) {
                row.median_income = Some(48_000.0 + 1_000.0 * m as f64);
            }
        }

        metros.push((msa, core_ids));
    }

    SynthDataset {
        units,
        places,
        unit_attributes: AttributeTable { rows: unit_rows },
        place_attributes: AttributeTable { rows: place_rows },
        metros,
    }
}

/// The figure fixture in dataset form, ready for [`write_dataset`].
pub fn figure_dataset() -> SynthDataset {
    let fx = figure_fixture();
    let mut unit_rows = BTreeMap::new();
    for u in &fx.units {
        unit_rows.insert(
            u.id.clone(),
            AttributeRow {
                counts: u.counts,
                median_income: u.median_income,
                land_area_m2: Some(1.0),
            },
        );
    }
    let mut place_rows = BTreeMap::new();
    for (id, income) in [(&fx.core_place_id, 50_000.0), (&fx.suburb_place_id, 60_000.0)] {
        place_rows.insert(
            id.clone(),
            AttributeRow {
                counts: [0; 5],
                median_income: Some(income),
                land_area_m2: None,
            },
        );
    }
    SynthDataset {
        units: fx.units,
        places: fx.places,
        unit_attributes: AttributeTable { rows: unit_rows },
        place_attributes: AttributeTable { rows: place_rows },
        metros: vec![(fx.msa_id, vec![fx.core_place_id])],
    }
}

/// File paths of a dataset written with [`write_dataset`].
pub struct DatasetPaths {
    pub geometry: PathBuf,
    pub attributes: PathBuf,
    pub places_geometry: PathBuf,
    pub place_attributes: PathBuf,
}

/// Writes the dataset to `dir` in the pipeline's input formats.
pub fn write_dataset(dir: &Path, data: &SynthDataset) -> Result<DatasetPaths> {
    std::fs::create_dir_all(dir)?;
    let paths = DatasetPaths {
        geometry: dir.join("units.geojson"),
        attributes: dir.join("units.csv"),
        places_geometry: dir.join("places.geojson"),
        place_attributes: dir.join("places.csv"),
    };
    write_geojson(&paths.geometry, &data.units)?;
    write_geojson(&paths.places_geometry, &data.places)?;
    write_attribute_csv(&paths.attributes, &data.unit_attributes)?;
    write_attribute_csv(&paths.place_attributes, &data.place_attributes)?;
    Ok(paths)
}

fn write_geojson(path: &Path, units: &[GeoUnit]) -> Result<()> {
    let features: Vec<geojson::Feature> = units
        .iter()
        .map(|u| {
            let mut properties = geojson::JsonObject::new();
            properties.insert("id".to_string(), u.id.clone().into());
            properties.insert("msa".to_string(), u.msa_id.clone().into());
            properties.insert("place".to_string(), u.place_id.clone().into());
            geojson::Feature {
                bbox: None,
                geometry: Some(geojson::Geometry::new(geometry_to_geojson(&u.geometry))),
                id: None,
                properties: Some(properties),
                foreign_members: None,
            }
        })
        .collect();
    let collection = geojson::FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    };
    std::fs::write(path, geojson::GeoJson::from(collection).to_string())?;
    Ok(())
}

fn geometry_to_geojson(g: &Geometry) -> geojson::Value {
    let polys: Vec<Vec<Vec<Vec<f64>>>> = g
        .polygons
        .iter()
        .map(|p| {
            p.rings
                .iter()
                .map(|ring| ring.iter().map(|&(x, y)| vec![x, y]).collect())
                .collect()
        })
        .collect();
    if polys.len() == 1 {
        geojson::Value::Polygon(polys.into_iter().next().unwrap())
    } else {
        geojson::Value::MultiPolygon(polys)
    }
}

/// A pipeline config over a written dataset, with library defaults
/// (herfindahl attribute, no Moran, no regressions).
pub fn dataset_config(
    paths: &DatasetPaths,
    metros: &[(String, Vec<String>)],
    output_dir: PathBuf,
) -> crate::pipeline::PipelineConfig {
    crate::pipeline::PipelineConfig {
        geometry: paths.geometry.clone(),
        attributes: paths.attributes.clone(),
        places_geometry: paths.places_geometry.clone(),
        place_attributes: Some(paths.place_attributes.clone()),
        metros: metros
            .iter()
            .map(|(msa, cores)| crate::pipeline::MetroConfig {
                msa: msa.clone(),
                core_place_ids: cores.clone(),
            })
            .collect(),
        attribute: "herfindahl".to_string(),
        snap_tolerance: crate::contiguity::DEFAULT_SNAP_TOLERANCE,
        permutations: 999,
        seed: 42,
        moran: false,
        excluded_places: Vec::new(),
        output_dir,
        ranking_cutoff: 0.05,
        regressions: Vec::new(),
    }
}

fn write_attribute_csv(path: &Path, table: &AttributeTable) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(crate::ingest::ATTRIBUTE_CSV_HEADER)?;
    for (id, row) in &table.rows {
        writer.write_record([
            id.as_str(),
            &row.counts[0].to_string(),
            &row.counts[1].to_string(),
            &row.counts[2].to_string(),
            &row.counts[3].to_string(),
            &row.counts[4].to_string(),
            &row.median_income.map(|v| v.to_string()).unwrap_or_default(),
            &row.land_area_m2.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
