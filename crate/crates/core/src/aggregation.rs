//! Metro- and place-level summaries of the disparity records.
//!
//! Aggregation happens at three levels: the full sample (pooled extreme-value
//! thresholds), each metro (quantile envelopes and tail shares), and each
//! place (per-suburb statistics plus the covariates the regression consumes).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::indices::DisparityRecord;
use crate::ingest::RegionLabel;

/// Distribution summary of one field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSummary {
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation (denominator n-1); 0 when n = 1.
    pub sd: f64,
    pub n: usize,
}

/// Fractions of a metro's border units beyond the pooled two-sided
/// threshold, split by side of the border and sign.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtremeShares {
    pub city_pos: f64,
    pub city_neg: f64,
    pub sub_pos: f64,
    pub sub_neg: f64,
}

/// One metro's summary row.
#[derive(Debug, Clone)]
pub struct MetroSummary {
    pub msa_id: String,
    /// Attribute distribution over all analysis units of the metro.
    pub attribute: FieldSummary,
    /// BDI distribution over border units with a defined index.
    pub bdi: Option<FieldSummary>,
    pub extreme: ExtremeShares,
}

/// Linear-interpolation quantiles: probability `q` indexes the sorted sample
/// at position `q * (n - 1)`.
pub fn quantiles(values: &[f64], qs: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::contract("quantiles", "empty input"));
    }
    if qs.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(Error::contract("quantiles", "probabilities must lie in [0,1]"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(qs
        .iter()
        .map(|&q| {
            let pos = q * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            if lo == hi {
                sorted[lo]
            } else {
                sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
            }
        })
        .collect())
}

/// Summarizes a nonempty sample.
pub fn summarize(values: &[f64]) -> Result<FieldSummary> {
    let n = values.len();
    let q = quantiles(values, &[0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0])?;
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(FieldSummary {
        min: q[0],
        q05: q[1],
        q25: q[2],
        median: q[3],
        q75: q[4],
        q95: q[5],
        max: q[6],
        mean,
        sd,
        n,
    })
}

/// Pooled mean and sample standard deviation of the defined border BDI
/// values across every metro. Needs at least two values.
pub fn pooled_border_stats(records: &[DisparityRecord]) -> Result<(f64, f64)> {
    let values: Vec<f64> = records
        .iter()
        .filter(|r| r.on_border)
        .filter_map(|r| r.bdi)
        .collect();
    if values.len() < 2 {
        return Err(Error::contract(
            "pooled_border_stats",
            format!("need at least 2 border units, have {}", values.len()),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok((mean, sd))
}

/// Per-metro shares of border units whose BDI lies more than `k` pooled
/// standard deviations from the pooled mean, split by region and sign.
pub fn extreme_shares(
    records: &[DisparityRecord],
    pooled_mean: f64,
    pooled_sd: f64,
    k: f64,
) -> BTreeMap<String, ExtremeShares> {
    let hi = pooled_mean + k * pooled_sd;
    let lo = pooled_mean - k * pooled_sd;
    let mut counts: BTreeMap<String, [usize; 6]> = BTreeMap::new();
    // [city_n, city_pos, city_neg, sub_n, sub_pos, sub_neg]
    for r in records.iter().filter(|r| r.on_border) {
        let Some(bdi) = r.bdi else { continue };
        let entry = counts.entry(r.msa_id.clone()).or_default();
        let base = match r.region {
            RegionLabel::Core => 0,
            RegionLabel::Suburb => 3,
            RegionLabel::Outside => continue,
        };
        entry[base] += 1;
        if bdi > hi {
            entry[base + 1] += 1;
        }
        if bdi < lo {
            entry[base + 2] += 1;
        }
    }
    counts
        .into_iter()
        .map(|(msa, c)| {
            let share = |num: usize, den: usize| {
                if den == 0 {
                    0.0
                } else {
                    num as f64 / den as f64
                }
            };
            (
                msa,
                ExtremeShares {
                    city_pos: share(c[1], c[0]),
                    city_neg: share(c[2], c[0]),
                    sub_pos: share(c[4], c[3]),
                    sub_neg: share(c[5], c[3]),
                },
            )
        })
        .collect()
}

/// Builds one [`MetroSummary`] per metro.
pub fn metro_summaries(records: &[DisparityRecord], k: f64) -> Result<Vec<MetroSummary>> {
    let (mean, sd) = pooled_border_stats(records)?;
    let shares = extreme_shares(records, mean, sd, k);
    let mut by_msa: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let entry = by_msa.entry(r.msa_id.clone()).or_default();
        entry.0.push(r.attribute_value);
        if r.on_border {
            if let Some(bdi) = r.bdi {
                entry.1.push(bdi);
            }
        }
    }
    by_msa
        .into_iter()
        .map(|(msa_id, (attr, bdi))| {
            Ok(MetroSummary {
                extreme: shares.get(&msa_id).cloned().unwrap_or_default(),
                attribute: summarize(&attr)?,
                bdi: if bdi.is_empty() {
                    None
                } else {
                    Some(summarize(&bdi)?)
                },
                msa_id,
            })
        })
        .collect()
}

/// Place-level inputs assembled by the pipeline: one entry per suburb plus
/// one pseudo-entry per metro for the core side of the border.
#[derive(Debug, Clone)]
pub struct PlaceInfo {
    pub place_id: String,
    pub msa_id: String,
    pub is_core: bool,
    /// Aggregate counts over every analysis unit of the place.
    pub counts: [u64; 5],
    pub median_income: Option<f64>,
    pub land_area_m2: Option<f64>,
    /// Shared border with the core, meters (suburbs only).
    pub border_m: Option<f64>,
    /// Place polygon perimeter, meters (suburbs only).
    pub perimeter_m: Option<f64>,
}

/// Per-place aggregate of border BDI values plus regression covariates.
///
/// The percentage covariates (PERCBLK, BLKDIFF, WHTDIFF, PERCBORDER) are in
/// percentage points (0-100). Density is persons per km².
#[derive(Debug, Clone)]
pub struct PlaceSummary {
    pub place_id: String,
    pub msa_id: String,
    pub is_core: bool,
    pub n_border_units: usize,
    pub mean: f64,
    pub sum: f64,
    pub max: f64,
    pub min: f64,
    pub range: f64,
    /// The place's own diversity index, from aggregate counts.
    pub h: f64,
    /// Place H minus core-city H.
    pub hgap: f64,
    pub border_m: Option<f64>,
    pub percborder: Option<f64>,
    pub percblk: f64,
    pub blkdiff: f64,
    pub whtdiff: f64,
    pub medinc: Option<f64>,
    pub medincrat: Option<f64>,
    pub popdens: Option<f64>,
    pub popdensrat: Option<f64>,
    pub popratio: f64,
}

/// A suburb that could not be summarized, with the reason.
#[derive(Debug, Clone)]
pub struct PlaceDiagnostic {
    pub place_id: String,
    pub reason: String,
}

fn herfindahl_of_counts(counts: &[u64; 5]) -> Option<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let t = total as f64;
    Some(1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>())
}

/// Aggregates each place's border-unit BDI values and derives covariates
/// relative to the same metro's core. Suburbs without any border unit
/// carrying a defined BDI are omitted and reported.
pub fn place_summaries(
    records: &[DisparityRecord],
    places: &[PlaceInfo],
) -> Result<(Vec<PlaceSummary>, Vec<PlaceDiagnostic>)> {
    // Border BDI values per (msa, suburb place) and per metro core side.
    let mut suburb_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut core_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.on_border) {
        let Some(bdi) = r.bdi else { continue };
        match r.region {
            RegionLabel::Suburb => suburb_values
                .entry(r.place_id.clone())
                .or_default()
                .push(bdi),
            RegionLabel::Core => core_values.entry(r.msa_id.clone()).or_default().push(bdi),
            RegionLabel::Outside => {}
        }
    }

    let cores: BTreeMap<&str, &PlaceInfo> = places
        .iter()
        .filter(|p| p.is_core)
        .map(|p| (p.msa_id.as_str(), p))
        .collect();

    let mut summaries = Vec::new();
    let mut diagnostics = Vec::new();
    for place in places {
        let core = cores.get(place.msa_id.as_str()).ok_or_else(|| {
            Error::contract(
                "place_summaries",
                format!("no core entry for metro {}", place.msa_id),
            )
        })?;
        let values = if place.is_core {
            core_values.get(&place.msa_id)
        } else {
            suburb_values.get(&place.place_id)
        };
        let Some(values) = values.filter(|v| !v.is_empty()) else {
            diagnostics.push(PlaceDiagnostic {
                place_id: place.place_id.clone(),
                reason: "no border units with a defined disparity index".to_string(),
            });
            continue;
        };

        let n = values.len();
        let sum: f64 = values.iter().sum();
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);

        let h = herfindahl_of_counts(&place.counts).unwrap_or(0.0);
        let core_h = herfindahl_of_counts(&core.counts).unwrap_or(0.0);
        let pop: u64 = place.counts.iter().sum();
        let core_pop: u64 = core.counts.iter().sum();
        let pct = |counts: &[u64; 5], g: usize| {
            let total: u64 = counts.iter().sum();
            if total == 0 {
                0.0
            } else {
                100.0 * counts[g] as f64 / total as f64
            }
        };
        let percblk = pct(&place.counts, 1);
        let blkdiff = percblk - pct(&core.counts, 1);
        let whtdiff = pct(&place.counts, 0) - pct(&core.counts, 0);
        let medincrat = match (place.median_income, core.median_income) {
            (Some(s), Some(c)) if c > 0.0 => Some(s / c),
            _ => None,
        };
        let dens = |pop: u64, area: Option<f64>| -> Option<f64> {
            area.filter(|a| *a > 0.0).map(|a| pop as f64 / (a / 1e6))
        };
        let popdens = dens(pop, place.land_area_m2);
        let core_dens = dens(core_pop, core.land_area_m2);
        let popdensrat = match (popdens, core_dens) {
            (Some(s), Some(c)) if c > 0.0 => Some(s / c),
            _ => None,
        };
        let percborder = match (place.border_m, place.perimeter_m) {
            (Some(b), Some(p)) if p > 0.0 => Some(100.0 * b / p),
            _ => None,
        };

        summaries.push(PlaceSummary {
            place_id: place.place_id.clone(),
            msa_id: place.msa_id.clone(),
            is_core: place.is_core,
            n_border_units: n,
            mean: sum / n as f64,
            sum,
            max,
            min,
            range: max - min,
            h,
            hgap: h - core_h,
            border_m: place.border_m,
            percborder,
            percblk,
            blkdiff,
            whtdiff,
            medinc: place.median_income,
            medincrat,
            popdens,
            popdensrat,
            popratio: if core_pop > 0 {
                pop as f64 / core_pop as f64
            } else {
                0.0
            },
        });
    }
    Ok((summaries, diagnostics))
}

/// Average ranks with ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average-ranked data.
/// Returns `None` when either argument has zero rank variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::contract(
            "spearman",
            format!("need equal lengths >= 3, got {} and {}", x.len(), y.len()),
        ));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..x.len() {
        let a = rx[i] - mx;
        let b = ry[i] - my;
        num += a * b;
        dx += a * a;
        dy += b * b;
    }
    if dx == 0.0 || dy == 0.0 {
        return Ok(None);
    }
    Ok(Some(num / (dx * dy).sqrt()))
}

/// The five candidate place-level aggregates of the BDI.
pub const PLACE_METRICS: [&str; 5] = ["mean", "sum", "max", "min", "range"];

/// Spearman correlation matrix among the five place metrics. Off-diagonal
/// entries are undefined for fewer than three places or degenerate ranks.
pub fn metric_correlations(summaries: &[PlaceSummary]) -> Result<[[Option<f64>; 5]; 5]> {
    if summaries.len() < 3 {
        let mut out = [[None; 5]; 5];
        for (i, row) in out.iter_mut().enumerate() {
            row[i] = Some(1.0);
        }
        return Ok(out);
    }
    let columns: [Vec<f64>; 5] = [
        summaries.iter().map(|s| s.mean).collect(),
        summaries.iter().map(|s| s.sum).collect(),
        summaries.iter().map(|s| s.max).collect(),
        summaries.iter().map(|s| s.min).collect(),
        summaries.iter().map(|s| s.range).collect(),
    ];
    let mut out = [[None; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            out[i][j] = if i == j {
                Some(1.0)
            } else {
                spearman(&columns[i], &columns[j])?
            };
        }
    }
    Ok(out)
}

/// Which aggregate a ranking sorts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMetric {
    /// Descending by the place maximum.
    Max,
    /// Ascending by the place minimum.
    Min,
}

/// Top slice of places under a fractional cutoff: `ceil(cutoff * count)`
/// rows, ties broken by lexicographic place id.
pub fn rank_places(
    summaries: &[PlaceSummary],
    metric: RankMetric,
    cutoff_fraction: f64,
) -> Vec<PlaceSummary> {
    let mut sorted: Vec<&PlaceSummary> = summaries.iter().collect();
    match metric {
        RankMetric::Max => sorted.sort_by(|a, b| {
            b.max
                .partial_cmp(&a.max)
                .unwrap()
                .then_with(|| a.place_id.cmp(&b.place_id))
        }),
        RankMetric::Min => sorted.sort_by(|a, b| {
            a.min
                .partial_cmp(&b.min)
                .unwrap()
                .then_with(|| a.place_id.cmp(&b.place_id))
        }),
    }
    let take = (cutoff_fraction * summaries.len() as f64).ceil() as usize;
    sorted.into_iter().take(take).cloned().collect()
}
