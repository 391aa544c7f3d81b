//! Place-level OLS with cluster-robust standard errors.
//!
//! Each suburb's maximum BDI is modeled on geographic and socioeconomic
//! covariates. Coefficients come from a QR solve; inference uses the CR1
//! sandwich estimator with errors clustered by metro and a t distribution
//! with (clusters - 1) degrees of freedom.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::aggregation::PlaceSummary;
use crate::error::{Error, Result};

/// Covariates available to a regression specification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Regressor {
    H,
    HGap,
    Border,
    PercBorder,
    PercBlk,
    BlkDiff,
    WhtDiff,
    MedInc,
    MedIncRat,
    PopDens,
    PopDensRat,
    PopRatio,
}

impl Regressor {
    pub fn parse(name: &str) -> Result<Regressor> {
        Ok(match name {
            "H" => Regressor::H,
            "HGAP" => Regressor::HGap,
            "BORDER" => Regressor::Border,
            "PERCBORDER" => Regressor::PercBorder,
            "PERCBLK" => Regressor::PercBlk,
            "BLKDIFF" => Regressor::BlkDiff,
            "WHTDIFF" => Regressor::WhtDiff,
            "MEDINC" => Regressor::MedInc,
            "MEDINCRAT" => Regressor::MedIncRat,
            "POPDENS" => Regressor::PopDens,
            "POPDENSRAT" => Regressor::PopDensRat,
            "POPRATIO" => Regressor::PopRatio,
            other => {
                return Err(Error::Config(format!("unknown regressor {other:?}")));
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regressor::H => "H",
            Regressor::HGap => "HGAP",
            Regressor::Border => "BORDER",
            Regressor::PercBorder => "PERCBORDER",
            Regressor::PercBlk => "PERCBLK",
            Regressor::BlkDiff => "BLKDIFF",
            Regressor::WhtDiff => "WHTDIFF",
            Regressor::MedInc => "MEDINC",
            Regressor::MedIncRat => "MEDINCRAT",
            Regressor::PopDens => "POPDENS",
            Regressor::PopDensRat => "POPDENSRAT",
            Regressor::PopRatio => "POPRATIO",
        }
    }

    /// Pulls this covariate from a summary; `None` triggers listwise
    /// deletion of the row.
    fn value(&self, s: &PlaceSummary) -> Option<f64> {
        match self {
            Regressor::H => Some(s.h),
            Regressor::HGap => Some(s.hgap),
            Regressor::Border => s.border_m,
            Regressor::PercBorder => s.percborder,
            Regressor::PercBlk => Some(s.percblk),
            Regressor::BlkDiff => Some(s.blkdiff),
            Regressor::WhtDiff => Some(s.whtdiff),
            Regressor::MedInc => s.medinc,
            Regressor::MedIncRat => s.medincrat,
            Regressor::PopDens => s.popdens,
            Regressor::PopDensRat => s.popdensrat,
            Regressor::PopRatio => Some(s.popratio),
        }
    }
}

/// An ordered, duplicate-free regressor list. The intercept is always
/// included and is not part of the list.
#[derive(Debug, Clone)]
pub struct RegressionSpec {
    pub name: String,
    pub regressors: Vec<Regressor>,
}

impl RegressionSpec {
    pub fn new(name: impl Into<String>, regressors: Vec<Regressor>) -> Result<RegressionSpec> {
        let mut seen = BTreeSet::new();
        for r in &regressors {
            if !seen.insert(*r) {
                return Err(Error::Config(format!(
                    "duplicate regressor {} in specification",
                    r.as_str()
                )));
            }
        }
        Ok(RegressionSpec {
            name: name.into(),
            regressors,
        })
    }

    /// Intercept plus regressor names, in design-matrix column order.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["INPT".to_string()];
        names.extend(self.regressors.iter().map(|r| r.as_str().to_string()));
        names
    }
}

/// Design matrix with rows listwise-deleted for missing covariates.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub cluster_ids: Vec<String>,
    pub column_names: Vec<String>,
    /// (place_id, missing covariate) for every dropped row.
    pub dropped: Vec<(String, String)>,
}

/// Builds the design matrix from suburb summaries: intercept column, then
/// the spec's regressors in order; `y` is each place's maximum BDI and the
/// cluster id is its metro.
pub fn build_design_matrix(
    summaries: &[PlaceSummary],
    spec: &RegressionSpec,
) -> Result<DesignMatrix> {
    if summaries.is_empty() {
        return Err(Error::contract("build_design_matrix", "no summaries"));
    }
    let k = spec.regressors.len() + 1;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    let mut cluster_ids = Vec::new();
    let mut dropped = Vec::new();
    'rows: for s in summaries {
        let mut row = Vec::with_capacity(k);
        row.push(1.0);
        for r in &spec.regressors {
            match r.value(s) {
                Some(v) => row.push(v),
                None => {
                    dropped.push((s.place_id.clone(), r.as_str().to_string()));
                    continue 'rows;
                }
            }
        }
        rows.push(row);
        y.push(s.max);
        cluster_ids.push(s.msa_id.clone());
    }
    let n = rows.len();
    if n <= k {
        return Err(Error::contract(
            "build_design_matrix",
            format!("{n} usable rows for {k} columns; system is underdetermined"),
        ));
    }
    let x = DMatrix::from_row_iterator(n, k, rows.into_iter().flatten());
    Ok(DesignMatrix {
        x,
        y: DVector::from_vec(y),
        cluster_ids,
        column_names: spec.column_names(),
        dropped,
    })
}

/// OLS fit: coefficients, residuals, and fit statistics.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub n: usize,
    pub k: usize,
}

/// Least squares via QR. Rank deficiency is an error naming the dependent
/// columns, never a silent drop.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>, column_names: &[String]) -> Result<OlsFit> {
    let n = x.nrows();
    let k = x.ncols();
    if y.len() != n {
        return Err(Error::contract(
            "ols_fit",
            format!("y has {} entries for {} rows", y.len(), n),
        ));
    }
    if n <= k {
        return Err(Error::contract(
            "ols_fit",
            format!("{n} rows for {k} columns"),
        ));
    }

    let qr = x.clone().qr();
    let r = qr.r();
    // Column scales make the deficiency test dimension-free.
    let scales: Vec<f64> = (0..k).map(|j| x.column(j).norm().max(1e-300)).collect();
    let collinear: Vec<String> = (0..k)
        .filter(|&j| r[(j, j)].abs() <= 1e-10 * scales[j])
        .map(|j| {
            column_names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("column {j}"))
        })
        .collect();
    if !collinear.is_empty() {
        return Err(Error::RankDeficient { columns: collinear });
    }

    // Thin QR: solve R b = Q' y by back-substitution.
    let qt_y = qr.q().transpose() * y;
    let coefficients = r
        .solve_upper_triangular(&qt_y)
        .ok_or_else(|| Error::contract("ols_fit", "QR solve failed"))?;
    let fitted = x * &coefficients;
    let residuals = y - &fitted;
    let ssr = residuals.dot(&residuals);
    let mean_y = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let r_squared = if sst > 0.0 {
        1.0 - ssr / sst
    } else if ssr < 1e-300 {
        1.0
    } else {
        0.0
    };
    let adj_r_squared = 1.0 - (1.0 - r_squared) * (n as f64 - 1.0) / ((n - k) as f64);
    Ok(OlsFit {
        coefficients,
        fitted,
        residuals,
        r_squared,
        adj_r_squared,
        n,
        k,
    })
}

/// Cluster-robust inference for a fitted model.
#[derive(Debug, Clone)]
pub struct ClusteredInference {
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub n_clusters: usize,
}

/// CR1 sandwich:
/// `V = c (X'X)^-1 [sum_g s_g s_g'] (X'X)^-1`, `s_g = X_g' u_g`,
/// `c = G/(G-1) * (n-1)/(n-k)`.
/// With one observation per cluster this reduces exactly to HC1.
/// P-values use a t distribution with G-1 degrees of freedom.
pub fn clustered_se(
    x: &DMatrix<f64>,
    coefficients: &DVector<f64>,
    residuals: &DVector<f64>,
    cluster_ids: &[String],
) -> Result<ClusteredInference> {
    let n = x.nrows();
    let k = x.ncols();
    if residuals.len() != n || cluster_ids.len() != n {
        return Err(Error::contract(
            "clustered_se",
            "residuals and cluster ids must align with the design matrix rows",
        ));
    }
    let clusters: BTreeSet<&String> = cluster_ids.iter().collect();
    let g = clusters.len();
    if g < 2 {
        return Err(Error::contract(
            "clustered_se",
            format!("need at least 2 clusters, have {g}"),
        ));
    }

    let xtx = x.transpose() * x;
    let bread = xtx.try_inverse().ok_or_else(|| Error::RankDeficient {
        columns: vec!["X'X is singular".to_string()],
    })?;

    let mut meat = DMatrix::<f64>::zeros(k, k);
    for cluster in &clusters {
        let mut score = DVector::<f64>::zeros(k);
        for (i, id) in cluster_ids.iter().enumerate() {
            if id == *cluster {
                score += x.row(i).transpose() * residuals[i];
            }
        }
        meat += &score * score.transpose();
    }

    let correction =
        (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / ((n - k) as f64));
    let covariance = &bread * meat * &bread * correction;

    let t_dist = StudentsT::new(0.0, 1.0, (g - 1) as f64)
        .map_err(|e| Error::contract("clustered_se", e.to_string()))?;
    let mut se = Vec::with_capacity(k);
    let mut t = Vec::with_capacity(k);
    let mut p = Vec::with_capacity(k);
    for j in 0..k {
        let s = covariance[(j, j)].max(0.0).sqrt();
        let tj = if s > 0.0 { coefficients[j] / s } else { f64::NAN };
        se.push(s);
        t.push(tj);
        p.push(if tj.is_nan() {
            f64::NAN
        } else {
            2.0 * (1.0 - t_dist.cdf(tj.abs()))
        });
    }
    Ok(ClusteredInference {
        se,
        t,
        p,
        covariance,
        n_clusters: g,
    })
}

/// One fitted specification, ready for output.
#[derive(Debug, Clone)]
pub struct RegressionResult {
    pub spec_name: String,
    pub variables: Vec<String>,
    pub coefficients: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub n_used: usize,
    pub n_clusters: usize,
    pub dropped: Vec<(String, String)>,
}

/// Builds the design matrix, fits OLS, and attaches clustered inference.
pub fn fit_model(summaries: &[PlaceSummary], spec: &RegressionSpec) -> Result<RegressionResult> {
    let design = build_design_matrix(summaries, spec)?;
    let fit = ols_fit(&design.x, &design.y, &design.column_names)?;
    let inference = clustered_se(&design.x, &fit.coefficients, &fit.residuals, &design.cluster_ids)?;
    Ok(RegressionResult {
        spec_name: spec.name.clone(),
        variables: design.column_names,
        coefficients: fit.coefficients.iter().cloned().collect(),
        se: inference.se,
        t: inference.t,
        p: inference.p,
        r_squared: fit.r_squared,
        adj_r_squared: fit.adj_r_squared,
        n_used: fit.n,
        n_clusters: inference.n_clusters,
        dropped: design.dropped,
    })
}
