//! End-to-end pipeline: ingest, contiguity, indices, aggregation,
//! regression, and all file outputs.
//!
//! Every run is a pure function of the config and input files: maps are
//! ordered, floats print in shortest round-trip form, and random streams
//! derive from the configured seed, so re-running a config reproduces every
//! output byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::{
    metric_correlations, metro_summaries, place_summaries, rank_places, MetroSummary,
    PlaceDiagnostic, PlaceInfo, PlaceSummary, RankMetric, PLACE_METRICS,
};
use crate::contiguity::{
    build_queen_contiguity, mask_cross_border, row_normalize, shared_border_length, BorderPair,
    ContiguityMatrix, MaskedMatrix, DEFAULT_SNAP_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::indices::{
    bdi, local_morans_i, AnalysisAttribute, DisparityRecord, EthnicComposition, MoranResult,
};
use crate::ingest::{
    classify_regions, identify_suburbs, join_attributes, load_geounits, AttributeTable, GeoFormat,
    GeoUnit, RegionLabel,
};
use crate::regression::{fit_model, RegressionResult, RegressionSpec, Regressor};

/// Threshold (in pooled standard deviations) for "extreme" BDI values.
const EXTREME_SD_MULTIPLE: f64 = 2.0;

/// One metro: its id and the place ids forming the core city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetroConfig {
    pub msa: String,
    pub core_place_ids: Vec<String>,
}

/// One regression specification from the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub name: String,
    pub regressors: Vec<String>,
}

fn default_attribute() -> String {
    "herfindahl".to_string()
}
fn default_snap() -> f64 {
    DEFAULT_SNAP_TOLERANCE
}
fn default_permutations() -> usize {
    999
}
fn default_seed() -> u64 {
    42
}
fn default_ranking_cutoff() -> f64 {
    0.05
}

/// Run configuration, loaded from a single JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Block-group geometry (GeoJSON FeatureCollection).
    pub geometry: PathBuf,
    /// Block-group attribute CSV.
    pub attributes: PathBuf,
    /// Place-level geometry (GeoJSON FeatureCollection).
    pub places_geometry: PathBuf,
    /// Optional place-level attribute CSV (median income, land area).
    #[serde(default)]
    pub place_attributes: Option<PathBuf>,
    pub metros: Vec<MetroConfig>,
    /// Scalar field to analyze: "herfindahl" or "percent_<group>".
    #[serde(default = "default_attribute")]
    pub attribute: String,
    #[serde(default = "default_snap")]
    pub snap_tolerance: f64,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Whether to run local Moran's I and write moran.csv.
    #[serde(default)]
    pub moran: bool,
    /// Places excluded from the suburb set (e.g. contact only across water).
    #[serde(default)]
    pub excluded_places: Vec<String>,
    pub output_dir: PathBuf,
    #[serde(default = "default_ranking_cutoff")]
    pub ranking_cutoff: f64,
    #[serde(default)]
    pub regressions: Vec<RegressionConfig>,
}

/// CLI-level overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub snap_tolerance: Option<f64>,
    pub attribute: Option<String>,
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_path(path: &Path) -> Result<PipelineConfig> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let config: PipelineConfig = serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn apply_overrides(&mut self, overrides: &ConfigOverrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(snap) = overrides.snap_tolerance {
            self.snap_tolerance = snap;
        }
        if let Some(attribute) = &overrides.attribute {
            self.attribute = attribute.clone();
        }
        if let Some(out) = &overrides.output_dir {
            self.output_dir = out.clone();
        }
    }

    /// Validates paths and parameters before any computation starts.
    pub fn validate(&self) -> Result<AnalysisAttribute> {
        for (label, path) in [
            ("geometry", &self.geometry),
            ("attributes", &self.attributes),
            ("places_geometry", &self.places_geometry),
        ] {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "{label} file does not exist: {}",
                    path.display()
                )));
            }
        }
        if let Some(path) = &self.place_attributes {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "place_attributes file does not exist: {}",
                    path.display()
                )));
            }
        }
        if self.metros.is_empty() {
            return Err(Error::Config("no metros configured".to_string()));
        }
        for metro in &self.metros {
            if metro.core_place_ids.is_empty() {
                return Err(Error::Config(format!(
                    "metro {} has no core place ids",
                    metro.msa
                )));
            }
        }
        if self.snap_tolerance < 0.0 {
            return Err(Error::Config("snap_tolerance must be >= 0".to_string()));
        }
        if self.moran && self.permutations < 99 {
            return Err(Error::Config(
                "permutations must be >= 99 when moran is enabled".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.ranking_cutoff) {
            return Err(Error::Config("ranking_cutoff must lie in [0,1]".to_string()));
        }
        for r in &self.regressions {
            parse_regression(r)?;
        }
        AnalysisAttribute::parse(&self.attribute)
    }
}

fn parse_regression(config: &RegressionConfig) -> Result<RegressionSpec> {
    let regressors: Vec<Regressor> = config
        .regressors
        .iter()
        .map(|name| Regressor::parse(name))
        .collect::<Result<_>>()?;
    RegressionSpec::new(config.name.clone(), regressors)
}

/// Everything the stages after ingestion need.
pub struct PreparedData {
    pub units: Vec<GeoUnit>,
    /// Indices into `units` of the Core/Suburb analysis set.
    pub analysis: Vec<usize>,
    pub places: Vec<GeoUnit>,
    pub suburb_ids: BTreeSet<String>,
    pub metro_cores: BTreeMap<String, Vec<String>>,
    /// (id, reason) per unit excluded from the analysis set.
    pub excluded_units: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

/// Ingestion stage: load, join, identify suburbs, classify, select the
/// analysis set.
pub fn prepare(config: &PipelineConfig) -> Result<PreparedData> {
    let units = load_geounits(&config.geometry, GeoFormat::GeoJson)?;
    let table = AttributeTable::from_csv_path(&config.attributes)?;
    let (units, join_report) = join_attributes(units, &table);
    let places = load_geounits(&config.places_geometry, GeoFormat::GeoJson)?;

    let mut core_ids: BTreeSet<String> = BTreeSet::new();
    let mut metro_cores = BTreeMap::new();
    for metro in &config.metros {
        let mut ids = metro.core_place_ids.clone();
        ids.sort();
        for id in &ids {
            if !places.iter().any(|p| &p.id == id) {
                return Err(Error::Config(format!(
                    "core place {id:?} of metro {} not found in places geometry",
                    metro.msa
                )));
            }
            core_ids.insert(id.clone());
        }
        metro_cores.insert(metro.msa.clone(), ids);
    }

    let mut suburb_ids = identify_suburbs(&places, &core_ids, config.snap_tolerance)?;
    for excluded in &config.excluded_places {
        suburb_ids.remove(excluded);
    }

    let units = classify_regions(units, &core_ids, &suburb_ids)?;

    let mut excluded_units: Vec<(String, String)> = Vec::new();
    let mut analysis = Vec::new();
    for (i, unit) in units.iter().enumerate() {
        if unit.region_label == RegionLabel::Outside {
            continue;
        }
        if !unit.attributes_joined {
            excluded_units.push((unit.id.clone(), "missing_attributes".to_string()));
        } else if unit.total_population() == 0 {
            excluded_units.push((unit.id.clone(), "zero_population".to_string()));
        } else {
            analysis.push(i);
        }
    }

    Ok(PreparedData {
        units,
        analysis,
        places,
        suburb_ids,
        metro_cores,
        excluded_units,
        warnings: join_report.warnings,
    })
}

/// Contiguity + indices stage output.
pub struct IndicesOutput {
    pub records: Vec<DisparityRecord>,
    pub w_u: ContiguityMatrix,
    pub masked: MaskedMatrix,
    /// (id, reason) rows for masked_isolates.csv.
    pub isolates: Vec<(String, String)>,
    pub x: Vec<f64>,
    pub moran: Option<Vec<MoranResult>>,
}

/// Builds both weight matrices over the analysis set and computes the
/// disparity records (plus Moran's I when requested).
pub fn compute_indices(
    prepared: &PreparedData,
    config: &PipelineConfig,
    attribute: AnalysisAttribute,
) -> Result<IndicesOutput> {
    let analysis_units: Vec<GeoUnit> = prepared
        .analysis
        .iter()
        .map(|&i| prepared.units[i].clone())
        .collect();
    let labels: Vec<RegionLabel> = analysis_units.iter().map(|u| u.region_label).collect();

    let w_raw = build_queen_contiguity(&analysis_units, config.snap_tolerance)?;
    let w_u = row_normalize(&w_raw);
    let masked = mask_cross_border(&w_u, &labels)?;

    let compositions: Vec<EthnicComposition> = analysis_units
        .iter()
        .map(|u| EthnicComposition::from_counts(u.counts))
        .collect::<Result<_>>()?;
    let h: Vec<f64> = compositions.iter().map(crate::indices::herfindahl).collect();
    let x: Vec<f64> = compositions.iter().map(|c| attribute.value(c)).collect();

    let values = bdi(&w_u, &masked.matrix, &x, &labels)?;

    let mut isolates = Vec::new();
    for &i in &w_u.isolates() {
        isolates.push((analysis_units[i as usize].id.clone(), "no_neighbors".to_string()));
    }
    for &i in &masked.emptied_rows {
        isolates.push((
            analysis_units[i as usize].id.clone(),
            "all_neighbors_cross_border".to_string(),
        ));
    }
    isolates.sort();

    let records: Vec<DisparityRecord> = analysis_units
        .iter()
        .enumerate()
        .map(|(i, u)| DisparityRecord {
            id: u.id.clone(),
            msa_id: u.msa_id.clone(),
            place_id: u.place_id.clone(),
            region: u.region_label,
            h: h[i],
            attribute_value: x[i],
            ndi_u: values.ndi_u[i],
            ndi_a: values.ndi_a[i],
            bdi: values.bdi[i],
            on_border: values.on_border[i],
        })
        .collect();

    let moran = if config.moran {
        Some(local_morans_i(&w_u, &x, config.permutations, config.seed)?)
    } else {
        None
    };

    Ok(IndicesOutput {
        records,
        w_u,
        masked,
        isolates,
        x,
        moran,
    })
}

/// Builds the per-place covariate carriers: one entry per suburb plus one
/// core pseudo-entry per metro (so core-side maxima and minima are
/// derivable alongside the suburbs).
pub fn build_place_infos(
    prepared: &PreparedData,
    config: &PipelineConfig,
) -> Result<(Vec<PlaceInfo>, Vec<BorderPair>)> {
    let place_table = match &config.place_attributes {
        Some(path) => AttributeTable::from_csv_path(path)?,
        None => AttributeTable::default(),
    };
    let place_by_id: BTreeMap<&str, &GeoUnit> =
        prepared.places.iter().map(|p| (p.id.as_str(), p)).collect();

    // Aggregate analysis-unit counts per place and per metro core.
    let mut place_counts: BTreeMap<String, [u64; 5]> = BTreeMap::new();
    let mut core_counts: BTreeMap<String, [u64; 5]> = BTreeMap::new();
    let mut core_place_pops: BTreeMap<String, u64> = BTreeMap::new();
    for &i in &prepared.analysis {
        let u = &prepared.units[i];
        match u.region_label {
            RegionLabel::Suburb => {
                let entry: &mut [u64; 5] = place_counts.entry(u.place_id.clone()).or_default();
                for (total, count) in entry.iter_mut().zip(&u.counts) {
                    *total += count;
                }
            }
            RegionLabel::Core => {
                let entry: &mut [u64; 5] = core_counts.entry(u.msa_id.clone()).or_default();
                for (total, count) in entry.iter_mut().zip(&u.counts) {
                    *total += count;
                }
                *core_place_pops.entry(u.place_id.clone()).or_default() +=
                    u.total_population();
            }
            RegionLabel::Outside => {}
        }
    }

    let area_of = |place: &GeoUnit| -> f64 {
        place_table
            .rows
            .get(&place.id)
            .and_then(|r| r.land_area_m2)
            .unwrap_or_else(|| place.geometry.area())
    };

    let mut infos = Vec::new();
    let mut border_pairs = Vec::new();

    for (msa, cores) in &prepared.metro_cores {
        let core_places: Vec<&GeoUnit> = cores
            .iter()
            .map(|id| {
                place_by_id.get(id.as_str()).copied().ok_or_else(|| {
                    Error::Config(format!("core place {id:?} missing from places geometry"))
                })
            })
            .collect::<Result<_>>()?;

        // Population-weighted core median income across core places.
        let mut weighted = 0.0;
        let mut weight = 0.0;
        for p in &core_places {
            if let Some(income) = place_table.rows.get(&p.id).and_then(|r| r.median_income) {
                let pop = *core_place_pops.get(&p.id).unwrap_or(&0) as f64;
                let w = if pop > 0.0 { pop } else { 1.0 };
                weighted += income * w;
                weight += w;
            }
        }
        let core_income = if weight > 0.0 {
            Some(weighted / weight)
        } else {
            None
        };
        let core_area: f64 = core_places.iter().map(|p| area_of(p)).sum();

        infos.push(PlaceInfo {
            place_id: cores.join("+"),
            msa_id: msa.clone(),
            is_core: true,
            counts: core_counts.get(msa).copied().unwrap_or_default(),
            median_income: core_income,
            land_area_m2: if core_area > 0.0 { Some(core_area) } else { None },
            border_m: None,
            perimeter_m: None,
        });

        // Suburbs of this metro.
        let metro_suburbs: Vec<&GeoUnit> = prepared
            .places
            .iter()
            .filter(|p| &p.msa_id == msa && prepared.suburb_ids.contains(&p.id))
            .collect();
        let borders: Vec<f64> = crate::par::map_slice(&metro_suburbs, |suburb| {
            core_places
                .iter()
                .map(|core| {
                    shared_border_length(&suburb.geometry, &core.geometry, config.snap_tolerance)
                })
                .sum()
        });
        for (suburb, border_m) in metro_suburbs.iter().zip(borders) {
            border_pairs.push(BorderPair {
                suburb_place_id: suburb.id.clone(),
                shared_length: border_m,
            });
            infos.push(PlaceInfo {
                place_id: suburb.id.clone(),
                msa_id: msa.clone(),
                is_core: false,
                counts: place_counts.get(&suburb.id).copied().unwrap_or_default(),
                median_income: place_table
                    .rows
                    .get(&suburb.id)
                    .and_then(|r| r.median_income),
                land_area_m2: Some(area_of(suburb)),
                border_m: Some(border_m),
                perimeter_m: Some(suburb.geometry.perimeter()),
            });
        }
    }
    infos.sort_by(|a, b| (&a.msa_id, &a.place_id).cmp(&(&b.msa_id, &b.place_id)));
    border_pairs.sort_by(|a, b| a.suburb_place_id.cmp(&b.suburb_place_id));
    Ok((infos, border_pairs))
}

/// What a run produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
    pub counts: BTreeMap<String, u64>,
}

/// Full pipeline: ingest, contiguity, indices, aggregation, regression,
/// and every output file.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    run_analyze(config)
}

pub fn run_analyze(config: &PipelineConfig) -> Result<RunSummary> {
    let attribute = config.validate()?;
    let prepared = prepare(config).map_err(|e| e.in_stage("ingestion"))?;
    let indices = compute_indices(&prepared, config, attribute)
        .map_err(|e| e.in_stage("indices"))?;
    let out = ensure_output_dir(config)?;

    let mut outputs = Vec::new();
    outputs.push(write_bdi_csv(&out, &indices.records)?);
    if let Some(moran) = &indices.moran {
        outputs.push(write_moran_csv(&out, &indices.records, moran)?);
    }
    outputs.push(write_diagnostics(&out, "excluded_units.csv", &prepared.excluded_units)?);
    outputs.push(write_diagnostics(&out, "masked_isolates.csv", &indices.isolates)?);

    let (place_infos, _border_pairs) =
        build_place_infos(&prepared, config).map_err(|e| e.in_stage("aggregation"))?;
    let (summaries, place_diags) = place_summaries(&indices.records, &place_infos)
        .map_err(|e| e.in_stage("aggregation"))?;
    let metros = metro_summaries(&indices.records, EXTREME_SD_MULTIPLE)
        .map_err(|e| e.in_stage("aggregation"))?;
    outputs.push(write_metro_summary_csv(&out, &metros)?);
    outputs.push(write_place_summary_csv(&out, &summaries)?);

    let suburbs: Vec<PlaceSummary> = summaries.iter().filter(|s| !s.is_core).cloned().collect();
    let top_max = rank_places(&suburbs, RankMetric::Max, config.ranking_cutoff);
    let top_min = rank_places(&suburbs, RankMetric::Min, config.ranking_cutoff);
    outputs.push(write_ranking_csv(&out, "rankings_max.csv", &top_max)?);
    outputs.push(write_ranking_csv(&out, "rankings_min.csv", &top_min)?);

    let correlations = metric_correlations(&summaries).map_err(|e| e.in_stage("aggregation"))?;
    outputs.push(write_correlations_csv(&out, &correlations)?);

    let mut regression_results = Vec::new();
    for entry in &config.regressions {
        let spec = parse_regression(entry)?;
        let result = fit_model(&suburbs, &spec).map_err(|e| e.in_stage("regression"))?;
        regression_results.push(result);
    }
    outputs.extend(write_regressions(&out, &regression_results, &config.attribute)?);

    outputs.push(write_bdi_geojson(&out, config, &indices.records)?);

    let manifest = Manifest::collect(
        config,
        &prepared,
        &indices,
        &summaries,
        &suburbs,
        (&top_max, &top_min),
        &place_diags,
    );
    outputs.push(manifest.write(&out)?);

    let mut counts = BTreeMap::new();
    counts.insert("units_total".to_string(), prepared.units.len() as u64);
    counts.insert("analysis_units".to_string(), prepared.analysis.len() as u64);
    counts.insert(
        "border_units".to_string(),
        indices.records.iter().filter(|r| r.on_border).count() as u64,
    );
    counts.insert("suburbs".to_string(), prepared.suburb_ids.len() as u64);
    Ok(RunSummary { outputs, counts })
}

/// Contiguity subcommand: emit the row-normalized queen weights only.
pub fn run_contiguity(config: &PipelineConfig) -> Result<RunSummary> {
    config.validate()?;
    let prepared = prepare(config).map_err(|e| e.in_stage("ingestion"))?;
    let analysis_units: Vec<GeoUnit> = prepared
        .analysis
        .iter()
        .map(|&i| prepared.units[i].clone())
        .collect();
    let w = row_normalize(
        &build_queen_contiguity(&analysis_units, config.snap_tolerance)
            .map_err(|e| e.in_stage("contiguity"))?,
    );
    let out = ensure_output_dir(config)?;
    let path = write_weights(&out, &analysis_units, &w)?;
    let mut counts = BTreeMap::new();
    counts.insert("analysis_units".to_string(), analysis_units.len() as u64);
    counts.insert("pairs".to_string(), w.nnz() as u64);
    Ok(RunSummary {
        outputs: vec![path],
        counts,
    })
}

/// Indices subcommand: bdi.csv, the annotated GeoJSON, diagnostics, and
/// moran.csv when enabled. No aggregation or regression.
pub fn run_bdi(config: &PipelineConfig) -> Result<RunSummary> {
    let attribute = config.validate()?;
    let prepared = prepare(config).map_err(|e| e.in_stage("ingestion"))?;
    let indices = compute_indices(&prepared, config, attribute)
        .map_err(|e| e.in_stage("indices"))?;
    let out = ensure_output_dir(config)?;
    let mut outputs = Vec::new();
    outputs.push(write_bdi_csv(&out, &indices.records)?);
    if let Some(moran) = &indices.moran {
        outputs.push(write_moran_csv(&out, &indices.records, moran)?);
    }
    outputs.push(write_diagnostics(&out, "excluded_units.csv", &prepared.excluded_units)?);
    outputs.push(write_diagnostics(&out, "masked_isolates.csv", &indices.isolates)?);
    outputs.push(write_bdi_geojson(&out, config, &indices.records)?);
    let mut counts = BTreeMap::new();
    counts.insert(
        "border_units".to_string(),
        indices.records.iter().filter(|r| r.on_border).count() as u64,
    );
    Ok(RunSummary { outputs, counts })
}

/// Regression subcommand: fit the configured specifications against an
/// existing place_summary.csv.
pub fn run_regress(config: &PipelineConfig, place_summary: &Path) -> Result<RunSummary> {
    let summaries = read_place_summaries(place_summary)?;
    let suburbs: Vec<PlaceSummary> = summaries.into_iter().filter(|s| !s.is_core).collect();
    let out = ensure_output_dir(config)?;
    let mut results = Vec::new();
    for entry in &config.regressions {
        let spec = parse_regression(entry)?;
        results.push(fit_model(&suburbs, &spec).map_err(|e| e.in_stage("regression"))?);
    }
    let outputs = write_regressions(&out, &results, &config.attribute)?;
    let mut counts = BTreeMap::new();
    counts.insert("suburbs".to_string(), suburbs.len() as u64);
    Ok(RunSummary { outputs, counts })
}

fn ensure_output_dir(config: &PipelineConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&config.output_dir)?;
    Ok(config.output_dir.clone())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_bdi_csv(out: &Path, records: &[DisparityRecord]) -> Result<PathBuf> {
    let path = out.join("bdi.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record([
        "id", "msa", "place", "region", "attribute", "ndi_u", "ndi_a", "bdi", "on_border",
    ])?;
    for r in records {
        writer.write_record([
            r.id.as_str(),
            r.msa_id.as_str(),
            r.place_id.as_str(),
            r.region.as_str(),
            &r.attribute_value.to_string(),
            &fmt_opt(r.ndi_u),
            &fmt_opt(r.ndi_a),
            &fmt_opt(r.bdi),
            if r.on_border { "true" } else { "false" },
        ])?;
    }
    writer.flush()?;
    Ok(path)
}

fn write_moran_csv(
    out: &Path,
    records: &[DisparityRecord],
    moran: &[MoranResult],
) -> Result<PathBuf> {
    let path = out.join("moran.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record(["id", "local_i", "pseudo_p", "class"])?;
    for (r, m) in records.iter().zip(moran) {
        writer.write_record([
            r.id.as_str(),
            &fmt_opt(m.local_i),
            &fmt_opt(m.pseudo_p),
            m.class.as_str(),
        ])?;
    }
    writer.flush()?;
    Ok(path)
}

fn write_diagnostics(out: &Path, name: &str, rows: &[(String, String)]) -> Result<PathBuf> {
    let path = out.join(name);
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record(["id", "reason"])?;
    for (id, reason) in rows {
        writer.write_record([id.as_str(), reason.as_str()])?;
    }
    writer.flush()?;
    Ok(path)
}

fn write_metro_summary_csv(out: &Path, metros: &[MetroSummary]) -> Result<PathBuf> {
    let path = out.join("metro_summary.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    let mut header = vec!["msa".to_string()];
    for prefix in ["attr", "bdi"] {
        for stat in [
            "min", "q05", "q25", "median", "q75", "q95", "max", "mean", "sd", "n",
        ] {
            header.push(format!("{prefix}_{stat}"));
        }
    }
    header.extend(
        ["extreme_city_pos", "extreme_city_neg", "extreme_sub_pos", "extreme_sub_neg"]
            .map(String::from),
    );
    writer.write_record(&header)?;
    for m in metros {
        let mut row = vec![m.msa_id.clone()];
        let push_summary = |row: &mut Vec<String>, s: Option<&crate::aggregation::FieldSummary>| {
            match s {
                Some(s) => {
                    for v in [s.min, s.q05, s.q25, s.median, s.q75, s.q95, s.max, s.mean, s.sd] {
                        row.push(v.to_string());
                    }
                    row.push(s.n.to_string());
                }
                None => row.extend(std::iter::repeat_n(String::new(), 10)),
            }
        };
        push_summary(&mut row, Some(&m.attribute));
        push_summary(&mut row, m.bdi.as_ref());
        for v in [
            m.extreme.city_pos,
            m.extreme.city_neg,
            m.extreme.sub_pos,
            m.extreme.sub_neg,
        ] {
            row.push(v.to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(path)
}

const PLACE_SUMMARY_HEADER: [&str; 21] = [
    "place",
    "msa",
    "is_core",
    "n_border_units",
    "mean",
    "sum",
    "max",
    "min",
    "range",
    "h",
    "hgap",
    "border_m",
    "percborder",
    "percblk",
    "blkdiff",
    "whtdiff",
    "medinc",
    "medincrat",
    "popdens",
    "popdensrat",
    "popratio",
];

fn write_place_summary_csv(out: &Path, summaries: &[PlaceSummary]) -> Result<PathBuf> {
    let path = out.join("place_summary.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record(PLACE_SUMMARY_HEADER)?;
    for s in summaries {
        writer.write_record([
            s.place_id.as_str(),
            s.msa_id.as_str(),
            if s.is_core { "true" } else { "false" },
            &s.n_border_units.to_string(),
            &s.mean.to_string(),
            &s.sum.to_string(),
            &s.max.to_string(),
            &s.min.to_string(),
            &s.range.to_string(),
            &s.h.to_string(),
            &s.hgap.to_string(),
            &fmt_opt(s.border_m),
            &fmt_opt(s.percborder),
            &s.percblk.to_string(),
            &s.blkdiff.to_string(),
            &s.whtdiff.to_string(),
            &fmt_opt(s.medinc),
            &fmt_opt(s.medincrat),
            &fmt_opt(s.popdens),
            &fmt_opt(s.popdensrat),
            &s.popratio.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(path)
}

/// Reads a place_summary.csv back; the inverse of [`write_place_summary_csv`].
pub fn read_place_summaries(path: &Path) -> Result<Vec<PlaceSummary>> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: display.clone(),
        detail: e.to_string(),
    })?;
    let got: Vec<&str> = reader.headers()?.iter().collect();
    if got != PLACE_SUMMARY_HEADER.to_vec() {
        return Err(Error::ColumnMapping(format!(
            "{display}: unexpected place_summary header {got:?}"
        )));
    }
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|_| Error::Parse {
                path: display.clone(),
                detail: format!("row {}: bad number {:?}", line + 2, &record[i]),
            })
        };
        let parse_opt = |i: usize| -> Result<Option<f64>> {
            if record[i].is_empty() {
                Ok(None)
            } else {
                parse(i).map(Some)
            }
        };
        out.push(PlaceSummary {
            place_id: record[0].to_string(),
            msa_id: record[1].to_string(),
            is_core: &record[2] == "true",
            n_border_units: record[3].parse().unwrap_or(0),
            mean: parse(4)?,
            sum: parse(5)?,
            max: parse(6)?,
            min: parse(7)?,
            range: parse(8)?,
            h: parse(9)?,
            hgap: parse(10)?,
            border_m: parse_opt(11)?,
            percborder: parse_opt(12)?,
            percblk: parse(13)?,
            blkdiff: parse(14)?,
            whtdiff: parse(15)?,
            medinc: parse_opt(16)?,
            medincrat: parse_opt(17)?,
            popdens: parse_opt(18)?,
            popdensrat: parse_opt(19)?,
            popratio: parse(20)?,
        });
    }
    Ok(out)
}

fn write_ranking_csv(out: &Path, name: &str, rows: &[PlaceSummary]) -> Result<PathBuf> {
    let path = out.join(name);
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record(["rank", "msa", "place", "mean", "sum", "max", "min", "range"])?;
    for (i, s) in rows.iter().enumerate() {
        writer.write_record([
            &(i + 1).to_string(),
            s.msa_id.as_str(),
            s.place_id.as_str(),
            &s.mean.to_string(),
            &s.sum.to_string(),
            &s.max.to_string(),
            &s.min.to_string(),
            &s.range.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(path)
}

fn write_correlations_csv(out: &Path, matrix: &[[Option<f64>; 5]; 5]) -> Result<PathBuf> {
    let path = out.join("metric_correlations.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    let mut header = vec!["metric".to_string()];
    header.extend(PLACE_METRICS.map(String::from));
    writer.write_record(&header)?;
    for (name, values) in PLACE_METRICS.iter().zip(matrix) {
        let mut row = vec![name.to_string()];
        row.extend(values.iter().map(|&v| fmt_opt(v)));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(path)
}

fn write_regressions(
    out: &Path,
    results: &[RegressionResult],
    attribute: &str,
) -> Result<Vec<PathBuf>> {
    let mut outputs = Vec::new();
    for (i, result) in results.iter().enumerate() {
        let name = if i == 0 {
            "regression.csv".to_string()
        } else {
            format!("regression_{}.csv", result.spec_name)
        };
        let path = out.join(name);
        let mut writer = csv::Writer::from_path(&path)?;
        writer.write_record(["variable", "coefficient", "se", "t", "p"])?;
        for j in 0..result.variables.len() {
            writer.write_record([
                result.variables[j].as_str(),
                &result.coefficients[j].to_string(),
                &result.se[j].to_string(),
                &result.t[j].to_string(),
                &result.p[j].to_string(),
            ])?;
        }
        writer.flush()?;
        outputs.push(path);
    }

    #[derive(Serialize)]
    struct RegressionMeta<'a> {
        name: &'a str,
        dependent: String,
        regressors: Vec<&'a str>,
        n_used: usize,
        n_clusters: usize,
        r_squared: f64,
        adj_r_squared: f64,
        se_type: &'static str,
        inference: &'static str,
        dropped: Vec<BTreeMap<&'static str, &'a str>>,
    }
    let metas: Vec<RegressionMeta> = results
        .iter()
        .map(|r| RegressionMeta {
            name: &r.spec_name,
            dependent: format!("max_bdi_{attribute}"),
            regressors: r.variables.iter().skip(1).map(String::as_str).collect(),
            n_used: r.n_used,
            n_clusters: r.n_clusters,
            r_squared: r.r_squared,
            adj_r_squared: r.adj_r_squared,
            se_type: "CR1",
            inference: "t(G-1)",
            dropped: r
                .dropped
                .iter()
                .map(|(place, var)| {
                    BTreeMap::from([("place", place.as_str()), ("missing", var.as_str())])
                })
                .collect(),
        })
        .collect();
    let meta_path = out.join("regression_meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&metas)?)?;
    outputs.push(meta_path);
    Ok(outputs)
}

fn write_weights(out: &Path, units: &[GeoUnit], w: &ContiguityMatrix) -> Result<PathBuf> {
    let path = out.join("weights.txt");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    for (i, unit) in units.iter().enumerate() {
        write!(file, "{} {}", unit.id, w.degree(i))?;
        for &(j, weight) in w.row(i) {
            write!(file, " {}:{}", units[j as usize].id, weight)?;
        }
        writeln!(file)?;
    }
    file.flush()?;
    Ok(path)
}

/// Echoes the input features with the computed indices appended as
/// properties. Geometry objects pass through the parser untouched, so
/// coordinate values are preserved exactly.
fn write_bdi_geojson(
    out: &Path,
    config: &PipelineConfig,
    records: &[DisparityRecord],
) -> Result<PathBuf> {
    let raw = std::fs::read_to_string(&config.geometry)?;
    let geojson: geojson::GeoJson = raw.parse().map_err(|e| Error::Parse {
        path: config.geometry.display().to_string(),
        detail: format!("{e}"),
    })?;
    let geojson::GeoJson::FeatureCollection(mut collection) = geojson else {
        return Err(Error::Parse {
            path: config.geometry.display().to_string(),
            detail: "expected FeatureCollection".to_string(),
        });
    };
    let by_id: BTreeMap<&str, &DisparityRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    for feature in &mut collection.features {
        let id = feature
            .properties
            .as_ref()
            .and_then(|p| p.get("id"))
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string();
        let properties = feature.properties.get_or_insert_with(geojson::JsonObject::new);
        let num = |v: Option<f64>| match v {
            Some(v) => serde_json::json!(v),
            None => serde_json::Value::Null,
        };
        match by_id.get(id.as_str()) {
            Some(r) => {
                properties.insert("region".to_string(), r.region.as_str().into());
                properties.insert("h".to_string(), serde_json::json!(r.h));
                properties.insert("attribute".to_string(), serde_json::json!(r.attribute_value));
                properties.insert("ndi_u".to_string(), num(r.ndi_u));
                properties.insert("ndi_a".to_string(), num(r.ndi_a));
                properties.insert("bdi".to_string(), num(r.bdi));
                properties.insert("on_border".to_string(), r.on_border.into());
            }
            None => {
                properties.insert("region".to_string(), "outside".into());
                for key in ["h", "attribute", "ndi_u", "ndi_a", "bdi", "on_border"] {
                    properties.insert(key.to_string(), serde_json::Value::Null);
                }
            }
        }
    }
    let path = out.join("bdi.geojson");
    std::fs::write(&path, geojson::GeoJson::FeatureCollection(collection).to_string())?;
    Ok(path)
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a PipelineConfig,
    counts: BTreeMap<&'static str, u64>,
    omitted_places: Vec<BTreeMap<&'static str, &'a str>>,
    warnings: &'a [String],
    notes: Vec<String>,
}

impl<'a> Manifest<'a> {
    #[allow(clippy::too_many_arguments)]
    fn collect(
        config: &'a PipelineConfig,
        prepared: &'a PreparedData,
        indices: &'a IndicesOutput,
        summaries: &[PlaceSummary],
        suburbs: &[PlaceSummary],
        rankings: (&[PlaceSummary], &[PlaceSummary]),
        place_diags: &'a [PlaceDiagnostic],
    ) -> Manifest<'a> {
        let mut counts = BTreeMap::new();
        counts.insert("units_total", prepared.units.len() as u64);
        counts.insert("analysis_units", prepared.analysis.len() as u64);
        counts.insert(
            "border_units",
            indices.records.iter().filter(|r| r.on_border).count() as u64,
        );
        counts.insert("excluded_units", prepared.excluded_units.len() as u64);
        counts.insert("masked_isolates", indices.isolates.len() as u64);
        counts.insert("suburbs_identified", prepared.suburb_ids.len() as u64);
        counts.insert("place_summaries", summaries.len() as u64);
        counts.insert("suburbs_ranked", suburbs.len() as u64);
        counts.insert("ranking_rows_max", rankings.0.len() as u64);
        counts.insert("ranking_rows_min", rankings.1.len() as u64);
        Manifest {
            version: env!("CARGO_PKG_VERSION"),
            config,
            counts,
            omitted_places: place_diags
                .iter()
                .map(|d| {
                    BTreeMap::from([
                        ("place", d.place_id.as_str()),
                        ("reason", d.reason.as_str()),
                    ])
                })
                .collect(),
            warnings: &prepared.warnings,
            notes: vec![
                "metric correlations and place summaries cover suburbs plus one core row per \
                 metro; rankings cover suburbs only"
                    .to_string(),
            ],
        }
    }

    fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join("run_manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}
