//! Diversity and border disparity indices.
//!
//! The Herfindahl diversity index of a five-group composition is
//! `H = 1 - sum(p_i^2)`, ranging from 0 (monoethnic) to 0.8 (five equal
//! groups). The neighborhood diversity of a unit is the spatial lag of an
//! attribute field: `NDI^U` over all queen neighbors, `NDI^A` over same-side
//! neighbors only. Their difference `BDI = NDI^U - NDI^A` isolates how much
//! of a unit's neighborhood diversity sits across the border: positive means
//! the border keeps higher values out, negative that it keeps them in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::contiguity::ContiguityMatrix;
use crate::error::{Error, Result};
use crate::ingest::RegionLabel;
use crate::par;

/// The five population groups, in fixed column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EthnicGroup {
    White,
    Black,
    Asian,
    Latino,
    Other,
}

impl EthnicGroup {
    pub const ALL: [EthnicGroup; 5] = [
        EthnicGroup::White,
        EthnicGroup::Black,
        EthnicGroup::Asian,
        EthnicGroup::Latino,
        EthnicGroup::Other,
    ];

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EthnicGroup::White => "white",
            EthnicGroup::Black => "black",
            EthnicGroup::Asian => "asian",
            EthnicGroup::Latino => "latino",
            EthnicGroup::Other => "other",
        }
    }
}

/// Five group proportions summing to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EthnicComposition {
    p: [f64; 5],
}

impl EthnicComposition {
    /// Builds proportions from raw counts. The total must be positive:
    /// a zero-population unit has no defined composition.
    pub fn from_counts(counts: [u64; 5]) -> Result<EthnicComposition> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::contract(
                "EthnicComposition::from_counts",
                "total population is zero; H is undefined",
            ));
        }
        let t = total as f64;
        Ok(EthnicComposition {
            p: [
                counts[0] as f64 / t,
                counts[1] as f64 / t,
                counts[2] as f64 / t,
                counts[3] as f64 / t,
                counts[4] as f64 / t,
            ],
        })
    }

    /// Builds directly from proportions; they must be non-negative and sum
    /// to one within 1e-9.
    pub fn from_proportions(p: [f64; 5]) -> Result<EthnicComposition> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::contract(
                "EthnicComposition::from_proportions",
                format!("proportions must lie in [0,1] and sum to 1, got sum {sum}"),
            ));
        }
        Ok(EthnicComposition { p })
    }

    pub fn proportions(&self) -> &[f64; 5] {
        &self.p
    }
}

/// `H = 1 - sum(p_i^2)`; in [0, 0.8] for five groups, 0.8 only at the
/// uniform composition.
pub fn herfindahl(c: &EthnicComposition) -> f64 {
    1.0 - c.p.iter().map(|p| p * p).sum::<f64>()
}

/// The share of one group; used to run the same border analysis on a single
/// proportion (e.g. percent Black) instead of H.
pub fn percent_attribute(c: &EthnicComposition, group: EthnicGroup) -> f64 {
    c.p[group.index()]
}

/// Which scalar field the disparity analysis runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisAttribute {
    Herfindahl,
    Percent(EthnicGroup),
}

impl AnalysisAttribute {
    pub fn parse(name: &str) -> Result<AnalysisAttribute> {
        match name {
            "herfindahl" => Ok(AnalysisAttribute::Herfindahl),
            other => {
                if let Some(group) = other.strip_prefix("percent_") {
                    for g in EthnicGroup::ALL {
                        if g.as_str() == group {
                            return Ok(AnalysisAttribute::Percent(g));
                        }
                    }
                }
                Err(Error::Config(format!(
                    "unknown attribute {name:?}; expected \"herfindahl\" or \"percent_<group>\""
                )))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            AnalysisAttribute::Herfindahl => "herfindahl".to_string(),
            AnalysisAttribute::Percent(g) => format!("percent_{}", g.as_str()),
        }
    }

    pub fn value(&self, c: &EthnicComposition) -> f64 {
        match self {
            AnalysisAttribute::Herfindahl => herfindahl(c),
            AnalysisAttribute::Percent(g) => percent_attribute(c, *g),
        }
    }
}

/// Sparse spatial lag: `out_i = sum_j w_ij x_j`. `None` for empty rows.
pub fn spatial_lag(w: &ContiguityMatrix, x: &[f64]) -> Result<Vec<Option<f64>>> {
    if !w.is_normalized() {
        return Err(Error::contract("spatial_lag", "matrix must be row-normalized"));
    }
    if x.len() != w.n() {
        return Err(Error::contract(
            "spatial_lag",
            format!("x has {} entries for {} rows", x.len(), w.n()),
        ));
    }
    Ok(par::map_indexed(w.n(), |i| {
        let row = w.row(i);
        if row.is_empty() {
            None
        } else {
            Some(row.iter().map(|&(j, wij)| wij * x[j as usize]).sum())
        }
    }))
}

/// Per-unit lag and disparity values, aligned by unit index.
#[derive(Debug, Clone)]
pub struct BdiValues {
    pub ndi_u: Vec<Option<f64>>,
    pub ndi_a: Vec<Option<f64>>,
    pub bdi: Vec<Option<f64>>,
    pub on_border: Vec<bool>,
}

/// Computes `BDI = NDI^U - NDI^A` from the unadjusted matrix and its masked
/// counterpart. `w_a` must be exactly the label-masked version of `w_u`;
/// any structural mismatch is a provenance violation.
///
/// A unit with no same-label neighbors has an undefined adjusted lag, hence
/// undefined BDI. A unit with no cross-label neighbors at all gets BDI
/// exactly 0: both lags run over the identical row.
pub fn bdi(
    w_u: &ContiguityMatrix,
    w_a: &ContiguityMatrix,
    x: &[f64],
    labels: &[RegionLabel],
) -> Result<BdiValues> {
    if w_a.n() != w_u.n() {
        return Err(Error::contract(
            "bdi",
            format!("matrix sizes differ: {} vs {}", w_u.n(), w_a.n()),
        ));
    }
    if labels.len() != w_u.n() {
        return Err(Error::contract(
            "bdi",
            format!("{} labels for {} rows", labels.len(), w_u.n()),
        ));
    }
    if !w_u.is_normalized() || !w_a.is_normalized() {
        return Err(Error::contract("bdi", "both matrices must be row-normalized"));
    }
    // Provenance: every adjusted row must equal the unadjusted row filtered
    // by label equality.
    for i in 0..w_u.n() {
        let expected: Vec<u32> = w_u
            .row(i)
            .iter()
            .filter(|&&(j, _)| labels[j as usize] == labels[i])
            .map(|&(j, _)| j)
            .collect();
        let actual: Vec<u32> = w_a.row(i).iter().map(|&(j, _)| j).collect();
        if expected != actual {
            return Err(Error::contract(
                "bdi",
                format!("row {i}: adjusted matrix is not the label mask of the unadjusted one"),
            ));
        }
    }

    let ndi_u = spatial_lag(w_u, x)?;
    let ndi_a = spatial_lag(w_a, x)?;
    let on_border = crate::contiguity::border_flags(w_u, labels)?;
    let bdi = ndi_u
        .iter()
        .zip(&ndi_a)
        .map(|(u, a)| match (u, a) {
            (Some(u), Some(a)) => Some(u - a),
            _ => None,
        })
        .collect();
    Ok(BdiValues {
        ndi_u,
        ndi_a,
        bdi,
        on_border,
    })
}

/// Full per-unit disparity record, ready for CSV output.
#[derive(Debug, Clone)]
pub struct DisparityRecord {
    pub id: String,
    pub msa_id: String,
    pub place_id: String,
    pub region: RegionLabel,
    /// The unit's own Herfindahl index.
    pub h: f64,
    /// The analyzed scalar (H or a group share).
    pub attribute_value: f64,
    pub ndi_u: Option<f64>,
    pub ndi_a: Option<f64>,
    pub bdi: Option<f64>,
    pub on_border: bool,
}

/// Local spatial association class at the chosen significance level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterClass {
    HighHigh,
    LowLow,
    HighLow,
    LowHigh,
    NotSig,
}

impl ClusterClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClusterClass::HighHigh => "HH",
            ClusterClass::LowLow => "LL",
            ClusterClass::HighLow => "HL",
            ClusterClass::LowHigh => "LH",
            ClusterClass::NotSig => "NotSig",
        }
    }
}

/// One unit's local Moran's I result.
#[derive(Debug, Clone)]
pub struct MoranResult {
    pub local_i: Option<f64>,
    pub pseudo_p: Option<f64>,
    pub class: ClusterClass,
}

const MORAN_ALPHA: f64 = 0.05;

/// Univariate local Moran's I with conditional permutation inference.
///
/// `I_i = z_i * sum_j w_ij z_j` where `z` standardizes `x` by the mean and
/// the population (denominator n) standard deviation. The pseudo p-value for
/// unit i comes from `permutations` draws of its neighbor values from the
/// other n-1 observations; each unit's RNG stream is derived from
/// `(seed, unit index)`, so results are identical for any thread count.
///
/// A constant field has zero variance: every unit is reported `NotSig` with
/// undefined I. Units with no neighbors are likewise `NotSig`.
pub fn local_morans_i(
    w: &ContiguityMatrix,
    x: &[f64],
    permutations: usize,
    seed: u64,
) -> Result<Vec<MoranResult>> {
    let n = w.n();
    if n < 3 {
        return Err(Error::contract("local_morans_i", "need at least 3 units"));
    }
    if permutations < 99 {
        return Err(Error::contract(
            "local_morans_i",
            "need at least 99 permutations",
        ));
    }
    if x.len() != n {
        return Err(Error::contract(
            "local_morans_i",
            format!("x has {} entries for {} rows", x.len(), n),
        ));
    }
    if !w.is_normalized() {
        return Err(Error::contract(
            "local_morans_i",
            "matrix must be row-normalized",
        ));
    }

    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let variance = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    if variance == 0.0 {
        return Ok(vec![
            MoranResult {
                local_i: None,
                pseudo_p: None,
                class: ClusterClass::NotSig,
            };
            n
        ]);
    }
    let sd = variance.sqrt();
    let z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();

    let results = par::map_indexed(n, |i| {
        let row = w.row(i);
        if row.is_empty() {
            return MoranResult {
                local_i: None,
                pseudo_p: None,
                class: ClusterClass::NotSig,
            };
        }
        let lag: f64 = row.iter().map(|&(j, wij)| wij * z[j as usize]).sum();
        let observed = z[i] * lag;

        // Conditional permutation: hold z_i, draw this row's neighbor values
        // from every other observation.
        let pool: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| z[j]).collect();
        let weights: Vec<f64> = row.iter().map(|&(_, wij)| wij).collect();
        let k = weights.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);

        let mut at_least = 0usize; // simulated I >= observed
        let mut at_most = 0usize; // simulated I <= observed
        for _ in 0..permutations {
            let draw = rand::seq::index::sample(&mut rng, n - 1, k);
            let sim_lag: f64 = draw
                .iter()
                .zip(&weights)
                .map(|(idx, wij)| wij * pool[idx])
                .sum();
            let sim = z[i] * sim_lag;
            if sim >= observed {
                at_least += 1;
            }
            if sim <= observed {
                at_most += 1;
            }
        }
        let tail = at_least.min(at_most);
        let p = (tail as f64 + 1.0) / (permutations as f64 + 1.0);

        let class = if p > MORAN_ALPHA {
            ClusterClass::NotSig
        } else {
            match (z[i] >= 0.0, lag >= 0.0) {
                (true, true) => ClusterClass::HighHigh,
                (false, false) => ClusterClass::LowLow,
                (true, false) => ClusterClass::HighLow,
                (false, true) => ClusterClass::LowHigh,
            }
        };
        MoranResult {
            local_i: Some(observed),
            pseudo_p: Some(p),
            class,
        }
    });
    Ok(results)
}
