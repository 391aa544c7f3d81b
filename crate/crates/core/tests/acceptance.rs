//! Acceptance suite: every release gate in one place, one pass/fail line
//! per criterion (run with `cargo test --test acceptance -- --nocapture`
//! to see them).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bdi_core::aggregation::{rank_places, spearman, RankMetric};
use bdi_core::contiguity::{
    build_queen_contiguity, mask_cross_border, row_normalize, ContiguityMatrix,
};
use bdi_core::indices::{bdi, herfindahl, local_morans_i, EthnicComposition};
use bdi_core::ingest::RegionLabel;
use bdi_core::pipeline::{run_analyze, RegressionConfig};
use bdi_core::regression::{clustered_se, ols_fit};
use bdi_core::synth::{
    self, dataset_config, figure_fixture, random_two_region_grid, synthetic_metros, SynthOptions,
};

fn pass(n: u32, detail: &str) {
    println!("acceptance {n} PASS: {detail}");
}

/// Criterion 1: the twelve-unit worked example reproduces the canonical
/// values exactly (1e-12), in under a second.
#[test]
fn criterion_01_figure_oracle() {
    let start = Instant::now();
    let fx = figure_fixture();
    let w = row_normalize(&build_queen_contiguity(&fx.units, 0.001).unwrap());
    let masked = mask_cross_border(&w, &fx.labels).unwrap();
    let x: Vec<f64> = fx
        .units
        .iter()
        .map(|u| herfindahl(&EthnicComposition::from_counts(u.counts).unwrap()))
        .collect();
    let values = bdi(&w, &masked.matrix, &x, &fx.labels).unwrap();

    let checks = [
        (values.ndi_u[fx.diverse_center].unwrap(), 0.5, "diverse NDI^U"),
        (values.ndi_a[fx.diverse_center].unwrap(), 0.8, "diverse NDI^A"),
        (values.bdi[fx.diverse_center].unwrap(), -0.3, "diverse BDI"),
        (values.ndi_u[fx.uniform_center].unwrap(), 0.3, "uniform NDI^U"),
        (values.ndi_a[fx.uniform_center].unwrap(), 0.0, "uniform NDI^A"),
        (values.bdi[fx.uniform_center].unwrap(), 0.3, "uniform BDI"),
    ];
    for (got, want, label) in checks {
        assert!(
            (got - want).abs() <= 1e-12,
            "{label}: got {got}, want {want}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(1, &format!("figure oracle exact to 1e-12 in {elapsed:?}"));
}

/// Criterion 2: Herfindahl bounds over 10,000 random compositions;
/// 0.8 is attained only within 1e-9 of the uniform composition.
#[test]
fn criterion_02_herfindahl_bounds() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0usize;
    for i in 0..10_000 {
        let counts: [u64; 5] = match i % 4 {
            // Dense, sparse, huge, and near-uniform families.
            0 => core::array::from_fn(|_| rng.gen_range(0..1000)),
            1 => core::array::from_fn(|g| if g <= i % 5 { rng.gen_range(1..50) } else { 0 }),
            2 => core::array::from_fn(|_| rng.gen_range(100_000..10_000_000)),
            _ => {
                let base = rng.gen_range(1..10_000u64);
                core::array::from_fn(|_| base + rng.gen_range(0..2))
            }
        };
        if counts.iter().sum::<u64>() == 0 {
            continue;
        }
        let c = EthnicComposition::from_counts(counts).unwrap();
        let h = herfindahl(&c);
        assert!(h >= -1e-12, "H = {h} for {counts:?}");
        assert!(h <= 0.8 + 1e-12, "H = {h} for {counts:?}");
        if h > 0.8 - 1e-9 {
            // 0.8 - H equals the squared distance to the uniform
            // composition, so near-maximal H forces near-uniform p.
            let dist: f64 = c.proportions().iter().map(|p| (p - 0.2).powi(2)).sum();
            assert!(dist <= 1e-9 + 1e-12, "H = {h} but distance {dist}");
        }
        checked += 1;
    }
    let uniform = herfindahl(&EthnicComposition::from_counts([7; 5]).unwrap());
    assert!((uniform - 0.8).abs() < 1e-12);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(
        2,
        &format!("{checked} compositions inside [0, 0.8], max only at uniform, in {elapsed:?}"),
    );
}

fn dense_of(w: &ContiguityMatrix) -> DMatrix<f64> {
    let n = w.n();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for &(j, weight) in w.row(i) {
            m[(i, j as usize)] = weight;
        }
    }
    m
}

/// Criterion 3: on random 20x20 two-region grids, off-border BDI is exactly
/// zero and border BDI matches a dense-matrix recomputation to 1e-12.
#[test]
fn criterion_03_off_border_zero_and_dense_equivalence() {
    let start = Instant::now();
    let mut border_units = 0usize;
    for seed in 0..5 {
        let grid = random_two_region_grid(20, 20, seed);
        let w = row_normalize(&build_queen_contiguity(&grid.units, 0.001).unwrap());
        let masked = mask_cross_border(&w, &grid.labels).unwrap();
        let values = bdi(&w, &masked.matrix, &grid.x, &grid.labels).unwrap();

        let dense_u = dense_of(&w);
        let dense_a = dense_of(&masked.matrix);
        let xv = DVector::from_vec(grid.x.clone());
        let lag_u = &dense_u * &xv;
        let lag_a = &dense_a * &xv;

        for i in 0..grid.units.len() {
            if !values.on_border[i] {
                assert_eq!(values.bdi[i], Some(0.0), "seed {seed}, unit {i}");
            } else if let Some(got) = values.bdi[i] {
                let want = lag_u[i] - lag_a[i];
                assert!(
                    (got - want).abs() <= 1e-12,
                    "seed {seed}, unit {i}: {got} vs dense {want}"
                );
                border_units += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    pass(
        3,
        &format!("{border_units} border units match the dense oracle; interiors exactly 0"),
    );
}

/// Criterion 4: swapping the two labels leaves every BDI unchanged (1e-15)
/// on 100 random fixtures.
#[test]
fn criterion_04_label_flip_invariance() {
    for seed in 0..100 {
        let grid = random_two_region_grid(8, 8, 1000 + seed);
        let w = row_normalize(&build_queen_contiguity(&grid.units, 0.001).unwrap());
        let flipped: Vec<RegionLabel> = grid
            .labels
            .iter()
            .map(|l| match l {
                RegionLabel::Core => RegionLabel::Suburb,
                RegionLabel::Suburb => RegionLabel::Core,
                RegionLabel::Outside => RegionLabel::Outside,
            })
            .collect();
        let a = {
            let masked = mask_cross_border(&w, &grid.labels).unwrap();
            bdi(&w, &masked.matrix, &grid.x, &grid.labels).unwrap()
        };
        let b = {
            let masked = mask_cross_border(&w, &flipped).unwrap();
            bdi(&w, &masked.matrix, &grid.x, &flipped).unwrap()
        };
        for i in 0..grid.units.len() {
            match (a.bdi[i], b.bdi[i]) {
                (Some(x), Some(y)) => {
                    assert!((x - y).abs() <= 1e-15, "seed {seed}, unit {i}: {x} vs {y}")
                }
                (x, y) => assert_eq!(x, y, "seed {seed}, unit {i}"),
            }
        }
    }
    pass(4, "label flip leaves BDI unchanged on 100 random fixtures");
}

/// Criterion 5: local Moran's I matches a dense evaluation to 1e-12,
/// checkerboards are uniformly negative, and pseudo-p values reproduce
/// across runs and thread counts for a fixed seed.
#[test]
fn criterion_05_moran_oracle() {
    // Dense oracle on a 10x10 queen grid with a random field.
    let grid = random_two_region_grid(10, 10, 77);
    let w = row_normalize(&build_queen_contiguity(&grid.units, 0.001).unwrap());
    let results = local_morans_i(&w, &grid.x, 199, 42).unwrap();
    let n = grid.x.len() as f64;
    let mean = grid.x.iter().sum::<f64>() / n;
    let sd = (grid.x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let z: Vec<f64> = grid.x.iter().map(|v| (v - mean) / sd).collect();
    let dense = dense_of(&w);
    for i in 0..grid.x.len() {
        let lag: f64 = (0..grid.x.len()).map(|j| dense[(i, j)] * z[j]).sum();
        let want = z[i] * lag;
        let got = results[i].local_i.unwrap();
        assert!((got - want).abs() <= 1e-12, "unit {i}: {got} vs {want}");
    }

    // Checkerboard on a hand-built rook 4x4: perfect dispersion.
    let idx = |r: i64, c: i64| (r * 4 + c) as u32;
    let mut lists = Vec::new();
    for r in 0..4i64 {
        for c in 0..4i64 {
            let mut row = Vec::new();
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r + dr, c + dc);
                if (0..4).contains(&nr) && (0..4).contains(&nc) {
                    row.push(idx(nr, nc));
                }
            }
            lists.push(row);
        }
    }
    let rook = row_normalize(&ContiguityMatrix::from_neighbor_lists(lists).unwrap());
    let board: Vec<f64> = (0..16)
        .map(|i| if (i / 4 + i % 4) % 2 == 0 { 1.0 } else { 0.0 })
        .collect();
    for res in local_morans_i(&rook, &board, 199, 42).unwrap() {
        assert!(res.local_i.unwrap() < 0.0);
    }

    // Same seed, same pseudo-p: across repeat runs...
    let again = local_morans_i(&w, &grid.x, 199, 42).unwrap();
    for (a, b) in results.iter().zip(&again) {
        assert_eq!(a.pseudo_p, b.pseudo_p);
    }
    // ...and across thread counts when running on a pool.
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| local_morans_i(&w, &grid.x, 199, 42).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| local_morans_i(&w, &grid.x, 199, 42).unwrap());
        for (a, b) in single.iter().zip(&many) {
            assert_eq!(a.pseudo_p, b.pseudo_p);
            assert_eq!(a.local_i, b.local_i);
        }
    }
    pass(5, "Moran's I matches the dense oracle; seeds reproduce across thread counts");
}

/// Independent rank-then-Pearson oracle for criterion 6.
fn spearman_brute(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (i, &vi) in v.iter().enumerate() {
            let less = v.iter().filter(|&&vj| vj < vi).count();
            let equal = v.iter().filter(|&&vj| vj == vi).count();
            // Average of positions less+1 ..= less+equal.
            out[i] = less as f64 + (equal as f64 + 1.0) / 2.0;
        }
        out
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let num: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let dx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let dy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if dx == 0.0 || dy == 0.0 {
        None
    } else {
        Some(num / (dx * dy).sqrt())
    }
}

/// Criterion 6: Spearman matches the brute-force oracle on 1,000 random
/// vectors with ties, and returns exactly +/-1 on monotone transforms.
#[test]
fn criterion_06_spearman_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..1_000 {
        let n = rng.gen_range(3..40);
        // Coarse quantization forces plenty of ties.
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..12) as f64 / 2.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..12) as f64 / 2.0).collect();
        let got = spearman(&x, &y).unwrap();
        let want = spearman_brute(&x, &y);
        match (got, want) {
            (Some(a), Some(b)) => {
                assert!((a - b).abs() <= 1e-12, "case {case}: {a} vs {b}")
            }
            (a, b) => assert_eq!(a, b, "case {case}"),
        }
    }
    let x: Vec<f64> = (0..25).map(|i| ((i * 17) % 25) as f64).collect();
    let up: Vec<f64> = x.iter().map(|v| (v + 1.0).exp().sqrt()).collect();
    let down: Vec<f64> = x.iter().map(|v| -(v.powi(3))).collect();
    assert_eq!(spearman(&x, &up).unwrap(), Some(1.0));
    assert_eq!(spearman(&x, &down).unwrap(), Some(-1.0));
    pass(6, "Spearman matches brute force on 1,000 tied vectors; monotone gives +/-1");
}

/// Criterion 7: OLS matches the normal equations to 1e-10; clustered SEs
/// match a direct sandwich evaluation to 1e-10; singleton clusters equal
/// HC1.
#[test]
fn criterion_07_regression_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..20 {
        let n = rng.gen_range(40..80);
        let k = rng.gen_range(2..6);
        let x = DMatrix::from_fn(n, k, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.gen_range(-3.0..3.0)
            }
        });
        let y = DVector::from_fn(n, |i, _| {
            x.row(i).iter().sum::<f64>() * 0.3 + rng.gen_range(-1.0..1.0)
        });
        let names: Vec<String> = (0..k).map(|j| format!("c{j}")).collect();
        let fit = ols_fit(&x, &y, &names).unwrap();

        let beta = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &y;
        for j in 0..k {
            assert!(
                (fit.coefficients[j] - beta[j]).abs() <= 1e-10,
                "case {case} col {j}"
            );
        }

        // Clustered SEs against a direct evaluation of the formula.
        let g = rng.gen_range(4..10);
        let ids: Vec<String> = (0..n).map(|i| format!("g{}", i % g)).collect();
        let inference = clustered_se(&x, &fit.coefficients, &fit.residuals, &ids).unwrap();
        let bread = (x.transpose() * &x).try_inverse().unwrap();
        let mut meat = DMatrix::<f64>::zeros(k, k);
        for gid in 0..g {
            let mut s = DVector::<f64>::zeros(k);
            for i in 0..n {
                if i % g == gid {
                    s += x.row(i).transpose() * fit.residuals[i];
                }
            }
            meat += &s * s.transpose();
        }
        let c = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / ((n - k) as f64));
        let v = &bread * meat * &bread * c;
        for j in 0..k {
            assert!(
                (inference.se[j] - v[(j, j)].sqrt()).abs() <= 1e-10,
                "case {case} col {j}: {} vs {}",
                inference.se[j],
                v[(j, j)].sqrt()
            );
        }

        // One observation per cluster degenerates to HC1.
        let singleton_ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let singleton =
            clustered_se(&x, &fit.coefficients, &fit.residuals, &singleton_ids).unwrap();
        let mut hc1_meat = DMatrix::<f64>::zeros(k, k);
        for i in 0..n {
            let xi = x.row(i).transpose();
            hc1_meat += &xi * xi.transpose() * fit.residuals[i].powi(2);
        }
        let hc1 = &bread * hc1_meat * &bread * (n as f64 / ((n - k) as f64));
        for j in 0..k {
            assert!(
                (singleton.se[j] - hc1[(j, j)].sqrt()).abs() <= 1e-10,
                "case {case} col {j} (HC1)"
            );
        }
    }
    pass(7, "OLS and CR1 match their oracles to 1e-10; singleton clusters equal HC1");
}

/// Criterion 8: with 357 synthetic suburbs, a 5% cutoff yields exactly 18
/// rows in each ranking table.
#[test]
fn criterion_08_ranking_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let summaries: Vec<_> = (0..357)
        .map(|i| {
            let max = rng.gen_range(-0.3..0.4);
            bdi_core::aggregation::PlaceSummary {
                place_id: format!("P{i:03}"),
                msa_id: format!("M{}", i % 23),
                is_core: false,
                n_border_units: 1 + i % 9,
                mean: max / 2.0,
                sum: max * 2.0,
                max,
                min: max - rng.gen_range(0.0..0.3),
                range: 0.0,
                h: 0.4,
                hgap: 0.0,
                border_m: None,
                percborder: None,
                percblk: 0.0,
                blkdiff: 0.0,
                whtdiff: 0.0,
                medinc: None,
                medincrat: None,
                popdens: None,
                popdensrat: None,
                popratio: 1.0,
            }
        })
        .collect();
    let top = rank_places(&summaries, RankMetric::Max, 0.05);
    let bottom = rank_places(&summaries, RankMetric::Min, 0.05);
    assert_eq!(top.len(), 18);
    assert_eq!(bottom.len(), 18);
    // Descending maxima and ascending minima.
    for pair in top.windows(2) {
        assert!(pair[0].max >= pair[1].max);
    }
    for pair in bottom.windows(2) {
        assert!(pair[0].min <= pair[1].min);
    }
    pass(8, "357 suburbs at a 5% cutoff give exactly 18 rows per table");
}

/// Criterion 9: two full pipeline runs over a ~2,500-unit, 20-suburb
/// synthetic fixture produce byte-identical outputs, each in under 30 s.
#[test]
fn criterion_09_pipeline_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        metros: 4,
        rows: 44,
        core_cols: 6,
        suburb_cols: 6,
        suburb_bands: 5,
        with_outside: true,
        split_first_core: true,
        seed: 9,
        ..SynthOptions::default()
    };
    let data = synthetic_metros(&opts);
    let paths = synth::write_dataset(&tmp.path().join("data"), &data).unwrap();
    let mut config = dataset_config(&paths, &data.metros, tmp.path().join("out"));
    config.moran = true;
    config.permutations = 199;
    config.regressions = vec![RegressionConfig {
        name: "base".to_string(),
        regressors: ["HGAP", "PERCBORDER", "PERCBLK", "MEDINCRAT"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    }];

    let start = Instant::now();
    let summary = run_analyze(&config).unwrap();
    let first_elapsed = start.elapsed();
    assert!(summary.counts["analysis_units"] >= 2_000);
    assert_eq!(summary.counts["suburbs"], 20);
    assert!(first_elapsed.as_secs_f64() < 30.0, "took {first_elapsed:?}");

    let first: BTreeMap<String, Vec<u8>> = read_dir_bytes(&config.output_dir);
    run_analyze(&config).unwrap();
    let second = read_dir_bytes(&config.output_dir);
    assert_eq!(first.len(), second.len());
    for (name, bytes) in &first {
        assert_eq!(bytes, &second[name], "{name} differs between runs");
    }
    pass(
        9,
        &format!(
            "{} outputs byte-identical across runs ({} units, 20 suburbs, {first_elapsed:?})",
            first.len(),
            summary.counts["analysis_units"]
        ),
    );
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            out.insert(
                entry.file_name().to_string_lossy().to_string(),
                std::fs::read(entry.path()).unwrap(),
            );
        }
    }
    out
}

fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix("VmHWM:") {
            let kb: u64 = rest.trim().trim_end_matches(" kB").trim().parse().ok()?;
            return Some(kb * 1024);
        }
    }
    None
}

/// Criterion 10: queen contiguity plus the full BDI pipeline over a
/// 33,484-unit dataset finishes in under 60 s and under 2 GB.
#[test]
fn criterion_10_scale() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        metros: 4,
        rows: 44,
        core_cols: 95,
        suburb_cols: 95,
        suburb_bands: 5,
        extra_suburb_cols_last: 1,
        seed: 10,
        ..SynthOptions::default()
    };
    let data = synthetic_metros(&opts);
    assert_eq!(data.units.len(), 33_484);
    let paths = synth::write_dataset(&tmp.path().join("data"), &data).unwrap();
    let mut config = dataset_config(&paths, &data.metros, tmp.path().join("out"));
    config.regressions = vec![RegressionConfig {
        name: "base".to_string(),
        regressors: ["HGAP", "PERCBORDER", "PERCBLK", "MEDINCRAT"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    }];

    let start = Instant::now();
    let summary = run_analyze(&config).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(summary.counts["units_total"], 33_484);
    assert!(summary.counts["border_units"] > 0);
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    if let Some(peak) = peak_rss_bytes() {
        assert!(
            peak < 2 * 1024 * 1024 * 1024,
            "peak RSS {} MB exceeds 2 GB",
            peak / (1024 * 1024)
        );
    }
    pass(
        10,
        &format!(
            "33,484-unit pipeline in {elapsed:?}, peak RSS {} MB",
            peak_rss_bytes().map(|b| b / (1024 * 1024)).unwrap_or(0)
        ),
    );
}
