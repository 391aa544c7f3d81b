//! Queen contiguity weight matrices and shared-border geometry.
//!
//! Two polygons are queen neighbors when they share at least one boundary
//! point (edge or corner). The predicate is evaluated on coordinates
//! quantized to a snap tolerance, so exact census topology is matched in
//! O(total vertices) expected time via hash buckets while staying robust to
//! re-serialization jitter.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::geometry::{quantize, Geometry, Point, QuantizedPoint};
use crate::ingest::{GeoUnit, RegionLabel};
use crate::par;

/// Default coordinate snap tolerance in meters.
pub const DEFAULT_SNAP_TOLERANCE: f64 = 0.001;

/// Sparse row-major neighbor weights over a fixed set of geounits.
///
/// Rows hold `(neighbor_index, weight)` pairs sorted by neighbor index.
/// Structure is symmetric as built (`j` in row `i` iff `i` in row `j`);
/// masking may break symmetry of weights but never introduces new pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ContiguityMatrix {
    n: usize,
    rows: Vec<Vec<(u32, f64)>>,
    normalized: bool,
}

impl ContiguityMatrix {
    /// Builds an unnormalized binary matrix from adjacency lists.
    /// Self-loops are rejected; rows are sorted and deduplicated.
    pub fn from_neighbor_lists(lists: Vec<Vec<u32>>) -> Result<ContiguityMatrix> {
        let n = lists.len();
        let mut rows = Vec::with_capacity(n);
        for (i, mut list) in lists.into_iter().enumerate() {
            list.sort_unstable();
            list.dedup();
            if list.iter().any(|&j| j as usize == i) {
                return Err(Error::contract(
                    "ContiguityMatrix::from_neighbor_lists",
                    format!("self-loop on row {i}"),
                ));
            }
            if let Some(&j) = list.iter().find(|&&j| j as usize >= n) {
                return Err(Error::contract(
                    "ContiguityMatrix::from_neighbor_lists",
                    format!("row {i} references out-of-range index {j}"),
                ));
            }
            rows.push(list.into_iter().map(|j| (j, 1.0)).collect());
        }
        Ok(ContiguityMatrix {
            n,
            rows,
            normalized: false,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(u32, f64)>] {
        &self.rows
    }

    pub fn degree(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    /// Indices of units with no neighbors at all.
    pub fn isolates(&self) -> Vec<u32> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_empty())
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Total number of stored (directed) pairs.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Builds the order-one queen contiguity matrix over `units`.
///
/// Units are neighbors iff their polygons (any part, any ring) share at
/// least one boundary vertex after quantization to `snap_tolerance`.
/// The result is unnormalized: every stored weight is 1. Isolated units get
/// empty rows.
pub fn build_queen_contiguity(units: &[GeoUnit], snap_tolerance: f64) -> Result<ContiguityMatrix> {
    if snap_tolerance < 0.0 {
        return Err(Error::contract(
            "build_queen_contiguity",
            "snap_tolerance must be >= 0",
        ));
    }
    let n = units.len();
    if n > u32::MAX as usize {
        return Err(Error::contract(
            "build_queen_contiguity",
            "more than u32::MAX units",
        ));
    }

    // Per-unit quantized vertex sets, deduplicated so each unit lands in a
    // bucket at most once per distinct point.
    let vertex_sets: Vec<Vec<QuantizedPoint>> = par::map_slice(units, |u| {
        let mut pts: Vec<QuantizedPoint> = u
            .geometry
            .vertices()
            .map(|v| quantize(v, snap_tolerance))
            .collect();
        pts.sort_unstable();
        pts.dedup();
        pts
    });

    let mut buckets: HashMap<QuantizedPoint, Vec<u32>> = HashMap::new();
    for (i, pts) in vertex_sets.iter().enumerate() {
        for &p in pts {
            buckets.entry(p).or_default().push(i as u32);
        }
    }

    // Emit directed pairs per bucket, then sort/dedup globally. Bucket
    // iteration order is irrelevant after the sort.
    let shared: Vec<&Vec<u32>> = buckets.values().filter(|v| v.len() > 1).collect();
    let pair_lists: Vec<Vec<(u32, u32)>> = par::map_slice(&shared, |members| {
        let mut pairs = Vec::with_capacity(members.len() * (members.len() - 1));
        for (a, &i) in members.iter().enumerate() {
            for &j in members.iter().skip(a + 1) {
                pairs.push((i, j));
                pairs.push((j, i));
            }
        }
        pairs
    });
    let mut pairs: Vec<(u32, u32)> = pair_lists.into_iter().flatten().collect();
    par::sort(&mut pairs);
    pairs.dedup();

    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (i, j) in pairs {
        rows[i as usize].push((j, 1.0));
    }
    Ok(ContiguityMatrix {
        n,
        rows,
        normalized: false,
    })
}

/// Row-normalizes: every nonempty row gets uniform weights 1/degree.
/// Empty rows stay empty. Idempotent.
pub fn row_normalize(w: &ContiguityMatrix) -> ContiguityMatrix {
    let rows = par::map_slice(w.rows(), |row| {
        let deg = row.len();
        if deg == 0 {
            return Vec::new();
        }
        let weight = 1.0 / deg as f64;
        row.iter().map(|&(j, _)| (j, weight)).collect()
    });
    ContiguityMatrix {
        n: w.n,
        rows,
        normalized: true,
    }
}

/// Result of masking cross-border pairs out of a weight matrix.
#[derive(Debug, Clone)]
pub struct MaskedMatrix {
    pub matrix: ContiguityMatrix,
    /// Units whose rows lost every neighbor (all neighbors were across the
    /// border). Their adjusted lag is undefined downstream.
    pub emptied_rows: Vec<u32>,
}

/// Removes every `(i, j)` pair whose labels differ and re-normalizes the
/// remaining rows to sum to one. Only label equality matters, so swapping
/// the two labels everywhere leaves the result unchanged.
pub fn mask_cross_border(w: &ContiguityMatrix, labels: &[RegionLabel]) -> Result<MaskedMatrix> {
    if labels.len() != w.n() {
        return Err(Error::contract(
            "mask_cross_border",
            format!("{} labels for {} rows", labels.len(), w.n()),
        ));
    }
    let rows: Vec<Vec<(u32, f64)>> = par::map_indexed(w.n(), |i| {
        let kept: Vec<u32> = w
            .row(i)
            .iter()
            .filter(|&&(j, _)| labels[j as usize] == labels[i])
            .map(|&(j, _)| j)
            .collect();
        if kept.is_empty() {
            return Vec::new();
        }
        let weight = 1.0 / kept.len() as f64;
        kept.into_iter().map(|j| (j, weight)).collect()
    });
    let emptied_rows = rows
        .iter()
        .enumerate()
        .filter(|(i, r)| r.is_empty() && !w.row(*i).is_empty())
        .map(|(i, _)| i as u32)
        .collect();
    Ok(MaskedMatrix {
        matrix: ContiguityMatrix {
            n: w.n(),
            rows,
            normalized: true,
        },
        emptied_rows,
    })
}

/// True for every unit with at least one neighbor across the border.
/// Isolated units are never on the border.
pub fn border_flags(w: &ContiguityMatrix, labels: &[RegionLabel]) -> Result<Vec<bool>> {
    if labels.len() != w.n() {
        return Err(Error::contract(
            "border_flags",
            format!("{} labels for {} rows", labels.len(), w.n()),
        ));
    }
    Ok(par::map_indexed(w.n(), |i| {
        w.row(i)
            .iter()
            .any(|&(j, _)| labels[j as usize] != labels[i])
    }))
}

/// A suburb's shared border with the core city.
#[derive(Debug, Clone, PartialEq)]
pub struct BorderPair {
    pub suburb_place_id: String,
    /// Meters of common boundary; 0 for point-only contact.
    pub shared_length: f64,
}

fn dequantize(q: QuantizedPoint, snap_tolerance: f64) -> Point {
    if snap_tolerance <= 0.0 {
        (f64::from_bits(q.0 as u64), f64::from_bits(q.1 as u64))
    } else {
        (q.0 as f64 * snap_tolerance, q.1 as f64 * snap_tolerance)
    }
}

type SegmentKey = (QuantizedPoint, QuantizedPoint);

fn segment_keys(g: &Geometry, snap_tolerance: f64) -> HashSet<SegmentKey> {
    g.segments()
        .filter_map(|(a, b)| {
            let qa = quantize(a, snap_tolerance);
            let qb = quantize(b, snap_tolerance);
            if qa == qb {
                return None; // degenerate after snapping
            }
            Some(if qa <= qb { (qa, qb) } else { (qb, qa) })
        })
        .collect()
}

/// Total length of boundary segments common to both polygons after
/// quantization, in meters. Point-only contact yields 0. Segments are
/// matched whole, endpoint to endpoint, which is exact for geometries that
/// share vertex chains (census topology); symmetric in its arguments.
pub fn shared_border_length(a: &Geometry, b: &Geometry, snap_tolerance: f64) -> f64 {
    let keys_a = segment_keys(a, snap_tolerance);
    let keys_b = segment_keys(b, snap_tolerance);
    // Sort the matches so the float sum has one well-defined order.
    let mut common: Vec<SegmentKey> = keys_a.intersection(&keys_b).copied().collect();
    common.sort_unstable();
    common
        .iter()
        .map(|&(qa, qb)| {
            let pa = dequantize(qa, snap_tolerance);
            let pb = dequantize(qb, snap_tolerance);
            ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt()
        })
        .sum()
}
