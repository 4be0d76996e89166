//! End-to-end acceptance checks. Each test prints one verdict line; run with
//! `cargo test -p uplift-core --test acceptance -- --nocapture`.

mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use rand::Rng;
use rand_distr::{Exp1, Gamma, LogNormal, Normal, StudentT, Weibull};
use rayon::prelude::*;

use common::*;
use uplift::directsampling::{ds_simulate, ds_simulate_traced, pattern_distance, DsParams, Pattern};
use uplift::field::{Field, Grid, GridStack};
use uplift::lifting::{lift_event, lift_with_level, postprocess_map, ExtremeEvent};
use uplift::marginal::{
    fit_marginal, gpd_cdf, gpd_density, gpd_quantile, gpd_survival, ShapeEstimator,
};
use uplift::naive::{
    naive_resample_with, renyi_order_statistics, spacing_diagnostics, ExponentialMargins, RankSource,
};
use uplift::pipeline::{run_on_stack, Extraction, LowerLevel, PipelineConfig};
use uplift::risk::{apply_risk, estimate_theta, summary_series, RiskFunctional};
use uplift::rng::stream;
use uplift::synth::{simulate, CovarianceSpec, FactorMethod, Family, MarginTransform, SynthSpec};

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn criterion_1_gpd_closed_forms() {
    criterion(1, "gpd closed forms", secs(1), || {
        let mut rng = stream(101, 0);
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let sigma = 10f64.powf(rng.random_range(-2.0f64..2.0));
            let xi = loop {
                let x: f64 = rng.random_range(-0.9..1.5);
                if x.abs() >= 0.01 {
                    break x;
                }
            };
            let ymax = if xi < 0.0 { -sigma / xi } else { 50.0 * sigma };
            let y: f64 = ymax * rng.random_range(1e-6..0.999);
            let p: f64 = rng.random_range(1e-6..1.0 - 1e-6);

            let z = 1.0 + xi * y / sigma;
            let s = z.powf(-1.0 / xi);
            let f = z.powf(-1.0 / xi - 1.0) / sigma;
            let q = sigma / xi * ((1.0 - p).powf(-xi) - 1.0);

            let errs = [
                (gpd_survival(y, sigma, xi) - s).abs(),
                (gpd_cdf(y, sigma, xi) - (1.0 - s)).abs(),
                (gpd_density(y, sigma, xi) - f).abs() / f.max(1.0),
                (gpd_quantile(p, sigma, xi) - q).abs() / (sigma + q.abs()),
            ];
            worst = errs.iter().copied().fold(worst, f64::max);
        }
        let mut branch = 0.0f64;
        for &xi in &[1e-8f64, -1e-8] {
            for &y in &[0.01f64, 0.5, 1.0, 3.0, 10.0] {
                branch = branch
                    .max((gpd_survival(y, 1.0, xi) - (-y).exp()).abs())
                    .max((gpd_density(y, 1.0, xi) - (-y).exp()).abs());
            }
            for &p in &[0.01f64, 0.5, 0.9, 0.999] {
                branch = branch.max((gpd_quantile(p, 1.0, xi) + (-p).ln_1p()).abs());
            }
        }
        (worst <= 1e-12 && branch < 1e-6, format!("max closed-form error {worst:.2e}, max branch gap {branch:.2e}"))
    });
}

fn random_sample(kind: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, 1);
    match kind {
        0 => (0..n).map(|_| rng.sample::<f64, _>(Normal::new(0.0, 1.0).unwrap())).collect(),
        1 => (0..n).map(|_| rng.sample(Gamma::new(2.0, 1.5).unwrap())).collect(),
        2 => (0..n).map(|_| rng.sample(LogNormal::new(0.0, 0.6).unwrap())).collect(),
        3 => (0..n).map(|_| rng.sample(StudentT::new(5.0).unwrap())).collect(),
        4 => (0..n).map(|_| rng.sample(Weibull::new(1.0, 1.5).unwrap())).collect(),
        _ => (0..n)
            .map(|_| {
                let z: f64 = rng.sample(Normal::new(0.0, 1.0).unwrap());
                if rng.random_bool(0.3) { 4.0 + 0.5 * z } else { z }
            })
            .collect(),
    }
}

#[test]
fn criterion_2_splice_continuity() {
    criterion(2, "splice continuity", secs(10), || {
        let estimators = [ShapeEstimator::Ml, ShapeEstimator::MlNonPositive, ShapeEstimator::Moment, ShapeEstimator::Hill];
        let results: Vec<(f64, f64)> = (0..100u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(202, i);
                let kind = (i % 6) as usize;
                let n = rng.random_range(400..2000);
                let p_u = rng.random_range(0.03..0.1);
                let sample = random_sample(kind, n, 202 + i);
                let method = estimators[(i / 6) as usize % estimators.len()];
                let model = fit_marginal(&sample, p_u, method).expect("fit");
                let u = model.tail().u;
                let eps = 1e-6;
                let gap = (model.density(u - eps) - model.density(u + eps)).abs();
                let mut trip = 0.0f64;
                for k in 1..200 {
                    let p = k as f64 / 200.0;
                    trip = trip.max((model.cdf(model.quantile(p).unwrap()) - p).abs());
                }
                for p in [1.0 - p_u - 1e-7, 1.0 - p_u, 1.0 - p_u + 1e-7, 0.999, 1e-4] {
                    trip = trip.max((model.cdf(model.quantile(p).unwrap()) - p).abs());
                }
                (gap, trip)
            })
            .collect();
        let gap = results.iter().map(|r| r.0).fold(0.0, f64::max);
        let trip = results.iter().map(|r| r.1).fold(0.0, f64::max);
        (gap < 1e-6 && trip < 1e-8, format!("max density gap {gap:.2e}, max round-trip error {trip:.2e}"))
    });
}

fn moment_xi(values: &[f64], p_u: f64) -> f64 {
    fit_marginal(values, p_u, ShapeEstimator::Moment).expect("fit").tail().xi
}

#[test]
fn criterion_3_tail_index_reproduction() {
    criterion(3, "tail index reproduction", secs(300), || {
        let estimates: Vec<(f64, f64)> = (0..20u64)
            .map(|seed| {
                let spec = SynthSpec {
                    grid: Grid::unit_square(250, 250).unwrap(),
                    cov: CovarianceSpec::exponential(0.03),
                    m: 1,
                    family: Family::Gaussian,
                    margin: MarginTransform::None,
                    method: FactorMethod::Circulant,
                    seed,
                };
                let g = simulate(&spec).expect("simulate").into_values();
                let lg: Vec<f64> = g.iter().map(|x| x.exp()).collect();
                (moment_xi(&g, 0.1), moment_xi(&lg, 0.002))
            })
            .collect();
        let (g0, lg0) = estimates[0];
        let mg = mean(&estimates.iter().map(|e| e.0).collect::<Vec<_>>());
        let mlg = mean(&estimates.iter().map(|e| e.1).collect::<Vec<_>>());
        let ok = (g0 + 0.08).abs() <= 0.15
            && (lg0 - 0.38).abs() <= 0.20
            && (mg + 0.08).abs() <= 0.08
            && (mlg - 0.38).abs() <= 0.08;
        (
            ok,
            format!("seed 0: gaussian {g0:.3}, log-gaussian {lg0:.3}; 20-seed means: gaussian {mg:.3}, log-gaussian {mlg:.3}"),
        )
    });
}

#[test]
fn criterion_4_renyi_equivalence() {
    criterion(4, "renyi equivalence", secs(60), || {
        let n = 1000;
        let reps = 2000u64;
        let draws: Vec<(f64, f64, f64, f64)> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(404, r);
                let renyi = renyi_order_statistics(n, &mut rng);
                let mut iid: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                iid.sort_by(f64::total_cmp);
                (renyi[n - 1], iid[n - 1], renyi[n - 1] - renyi[n - 2], iid[n - 1] - iid[n - 2])
            })
            .collect();
        let col = |k: usize| -> Vec<f64> {
            draws.iter().map(|d| [d.0, d.1, d.2, d.3][k]).collect()
        };
        let (_, p_max) = ks_two_sample(&col(0), &col(1));
        let exp_cdf = |x: f64| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() };
        let (_, p_sp_renyi) = ks_one_sample(&col(2), exp_cdf);
        let (_, p_sp_iid) = ks_one_sample(&col(3), exp_cdf);

        let big = 90_000;
        let maxima: Vec<f64> =
            (0..10_000u64).into_par_iter().map(|r| renyi_order_statistics(big, &mut stream(405, r))[big - 1]).collect();
        let mc = mean(&maxima);
        let h = harmonic(big);
        let ok = p_max > 0.01 && p_sp_renyi > 0.01 && p_sp_iid > 0.01 && (mc - h).abs() <= 0.05;
        (
            ok,
            format!(
                "maxima KS p={p_max:.3}, final-spacing KS p={p_sp_renyi:.3} (renyi) {p_sp_iid:.3} (iid), mean max {mc:.4} vs H_n {h:.4}"
            ),
        )
    });
}

#[test]
fn criterion_5_naive_resampling_pathologies() {
    criterion(5, "naive resampling pathologies", secs(300), || {
        let pairs = 200;
        let m = 100;
        let spec = SynthSpec {
            grid: Grid::unit_square(30, 30).unwrap(),
            cov: CovarianceSpec::exponential(0.2),
            m: pairs * m,
            family: Family::Student(3.0),
            margin: MarginTransform::Exponential,
            method: FactorMethod::Dense,
            seed: 505,
        };
        let all = simulate(&spec).expect("simulate");
        let rows: Vec<(f64, f64, f64, f64)> = (0..pairs)
            .into_par_iter()
            .map(|i| {
                let idx: Vec<usize> = (i * m..(i + 1) * m).collect();
                let dep = all.select(&idx).unwrap();
                let mut rng = stream(506, i as u64);
                let iid = naive_resample_with(&dep, &RankSource::Copy, |_| rng.sample::<f64, _>(Exp1)).unwrap().stack;
                let d = spacing_diagnostics(&[dep, iid], ExponentialMargins::Identity).unwrap();
                (d.maxima[0], d.maxima[1], d.top_spacings[0].abs(), d.top_spacings[1].abs())
            })
            .collect();
        let dmax: Vec<f64> = rows.iter().map(|r| r.1 - r.0).collect();
        let dsp: Vec<f64> = rows.iter().map(|r| r.3 - r.2).collect();
        let (mean_max, p_max) = paired_t_greater(&dmax);
        let (mean_sp, p_sp) = paired_t_greater(&dsp);
        let ok = mean_max > 0.0 && p_max < 0.01 && mean_sp > 0.0 && p_sp < 0.01;
        (
            ok,
            format!(
                "iid-minus-dependent max {mean_max:.3} (p={p_max:.1e}), |top spacing| {mean_sp:.3} (p={p_sp:.1e})"
            ),
        )
    });
}

fn random_functional<R: Rng>(rng: &mut R, n: usize) -> RiskFunctional {
    match rng.random_range(0..6) {
        0 => RiskFunctional::Max,
        1 => RiskFunctional::Min,
        2 => RiskFunctional::Mean,
        3 => RiskFunctional::Median,
        4 => RiskFunctional::Site(rng.random_range(0..n)),
        _ => RiskFunctional::OrderStatistic(rng.random_range(1..=n)),
    }
}

fn order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

#[test]
fn criterion_6_lifting_exactness() {
    criterion(6, "lifting exactness", secs(10), || {
        let mut rng = stream(606, 0);
        let (mut v_err, mut pp_err, mut rank_ok) = (0.0f64, 0.0f64, true);
        for j in 0..1000 {
            let (nx, ny) = (rng.random_range(1..8), rng.random_range(1..8));
            let grid = Grid::unit_square(nx, ny).unwrap();
            let values: Vec<f64> = (0..nx * ny).map(|_| -rng.random_range(1e-4f64..1.0).powi(3)).collect();
            let r = random_functional(&mut rng, nx * ny);
            let v = apply_risk(&r, &values).unwrap();
            let ev = ExtremeEvent { replicate_index: j, x_u: Field::new(grid, values.clone()).unwrap(), v };
            // Keep the plain rescaling inside [-1, 0].
            let lowest = values.iter().copied().fold(0.0, f64::min);
            let s = rng.random_range(0.05..(1.0 / -lowest).min(3.0));
            let v_new = s * v;

            let lifted = lift_event(&ev, v_new);
            v_err = v_err.max((apply_risk(&r, &lifted.values).unwrap() - v_new).abs());
            rank_ok &= order(&lifted.values) == order(&values);

            let u_marg = -rng.random_range(0.01..0.5);
            if let Ok(pp) = lift_with_level(&ev, v_new, u_marg) {
                let s = pp.s;
                pp_err = pp_err
                    .max((postprocess_map(-1.0, s, u_marg) + 1.0).abs())
                    .max((postprocess_map(u_marg, s, u_marg) - s * u_marg).abs())
                    .max((postprocess_map(u_marg + 1e-15, s, u_marg) - s * u_marg).abs());
                rank_ok &= order(&pp.x_u.values) == order(&values);
                for (x, y) in values.iter().zip(&pp.x_u.values) {
                    if *x > u_marg {
                        pp_err = pp_err.max((y - s * x).abs());
                    }
                }
            }
        }
        (
            v_err <= 1e-10 && pp_err <= 1e-12 && rank_ok,
            format!("max |V - v_new| {v_err:.2e}, max post-processing error {pp_err:.2e}, ranks preserved: {rank_ok}"),
        )
    });
}

#[test]
fn criterion_7_theta_estimator() {
    criterion(7, "extremal coefficient estimator", secs(10), || {
        let m = 10_000;
        let u = -0.05;
        let grid = Grid::unit_square(3, 3).unwrap();
        let mut rng = stream(707, 0);
        let values: Vec<f64> = (0..m).flat_map(|_| vec![-rng.random::<f64>(); 9]).collect();
        let stack = GridStack::new(grid, m, values).unwrap();
        let (lo, hi) = binomial_band(m as u64, 0.05, 0.99);
        let band = (lo as f64 / 500.0, hi as f64 / 500.0);
        let mut ok = true;
        let mut detail = Vec::new();
        for r in [
            RiskFunctional::Max,
            RiskFunctional::Min,
            RiskFunctional::Mean,
            RiskFunctional::Median,
            RiskFunctional::Site(4),
            RiskFunctional::OrderStatistic(3),
        ] {
            let theta = estimate_theta(&summary_series(&r, &stack).unwrap(), u).unwrap().theta;
            ok &= band.0 <= theta && theta <= band.1;
            detail.push(format!("{r}={theta:.3}"));
        }
        let quiet = GridStack::new(grid, 100, vec![-0.5; 900]).unwrap();
        let zero = estimate_theta(&summary_series(&RiskFunctional::Max, &quiet).unwrap(), u).unwrap().theta;
        ok &= zero == 0.0;
        (ok, format!("band [{:.3}, {:.3}], {}, zero-exceedance theta {zero}", band.0, band.1, detail.join(" ")))
    });
}

#[test]
fn criterion_8_direct_sampling_oracle() {
    criterion(8, "direct sampling oracle", secs(120), || {
        let spec = SynthSpec {
            grid: Grid::unit_square(20, 20).unwrap(),
            cov: CovarianceSpec::exponential(0.15),
            m: 1,
            family: Family::Gaussian,
            margin: MarginTransform::None,
            method: FactorMethod::Dense,
            seed: 808,
        };
        let ti = simulate(&spec).unwrap();
        let grid = *ti.grid();
        let params = DsParams { n_neighbors: 8, dist_threshold: 0.0, scan_fraction: 1.0, coord_weight: 0.0, seed: 809 };
        let mut conditioning = BTreeMap::new();
        conditioning.insert(0, 1.25);
        conditioning.insert(210, -0.75);
        let (reals, traces) = ds_simulate_traced(&ti, &grid, &params, &conditioning, 4).unwrap();
        let t = ti.replicate(0);
        let at = |r: isize, c: isize| -> Option<f64> {
            (r >= 0 && c >= 0 && (r as usize) < grid.ny && (c as usize) < grid.nx)
                .then(|| t[grid.index(r as usize, c as usize)])
        };

        let (lo, hi) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let candidate = |r0: isize, c0: isize, offsets: &[(isize, isize)]| -> Option<Pattern> {
            let values = offsets.iter().map(|&(dr, dc)| at(r0 + dr, c0 + dc)).collect::<Option<Vec<f64>>>()?;
            Some(Pattern { offsets: offsets.to_vec(), values, anchor: grid.normalized_center(grid.index(r0 as usize, c0 as usize)) })
        };

        // Exhaustive oracle: the pasted candidate must be a nearest training pattern,
        // and every pattern present verbatim in the training image must be found.
        let (mut checked, mut verbatim, mut mismatches) = (0usize, 0usize, 0usize);
        for trace in traces.iter().flatten() {
            if trace.pattern.offsets.is_empty() {
                continue;
            }
            checked += 1;
            let mut best = f64::INFINITY;
            for r0 in 0..grid.ny as isize {
                for c0 in 0..grid.nx as isize {
                    if let Some(p) = candidate(r0, c0, &trace.pattern.offsets) {
                        best = best.min(pattern_distance(&trace.pattern, &p, 0.0, hi - lo).unwrap());
                    }
                }
            }
            let (sr, sc) = grid.row_col(trace.source_cell);
            let pasted = candidate(sr as isize, sc as isize, &trace.pattern.offsets)
                .map(|p| pattern_distance(&trace.pattern, &p, 0.0, hi - lo).unwrap());
            verbatim += usize::from(best == 0.0);
            let ok = trace.value == t[trace.source_cell]
                && pasted == Some(trace.distance)
                && (trace.distance - best).abs() <= 1e-12;
            mismatches += usize::from(!ok);
        }
        let cond_ok = (0..reals.m())
            .all(|j| conditioning.iter().all(|(&cell, &v)| reals.replicate(j)[cell] == v));

        let spec30 = SynthSpec { grid: Grid::unit_square(30, 30).unwrap(), m: 50, seed: 810, ..spec };
        let train = simulate(&spec30).unwrap();
        let ds = ds_simulate(&train, train.grid(), &DsParams { seed: 811, ..DsParams::default() }, &BTreeMap::new(), 50)
            .unwrap();
        let d = ks_distance(train.values(), ds.values());
        (
            mismatches == 0 && checked > 0 && cond_ok && d < 0.1,
            format!(
                "{checked} patterns checked against exhaustive search ({verbatim} present verbatim), {mismatches} mismatches; conditioning exact: {cond_ok}; pooled KS D {d:.4}"
            ),
        )
    });
}

fn desk_run(seed: u64, dir: &std::path::Path) -> (usize, f64) {
    let spec = SynthSpec {
        grid: Grid::unit_square(40, 40).unwrap(),
        cov: CovarianceSpec::exponential(0.2),
        m: 300,
        family: Family::Student(3.0),
        margin: MarginTransform::None,
        method: FactorMethod::Auto,
        seed,
    };
    let input = simulate(&spec).expect("simulate");
    // The median of a field sits below the default post-processing threshold,
    // which would leave it almost untouched by lifting; -0.5 scales it exactly.
    // A tight acceptance distance keeps field-wide levels coherent in DS.
    let config = PipelineConfig::parse(&format!(
        "input = unused\noutput_dir = unused\nseed = {seed}\np_u = 0.05\nshape_estimator = moment\n\
         top_k = 10\nholdout = 20\nmin_separation = 0\nlift_v1 = holdout\nlift_v2 = 0\nu_marg = -0.5\n\
         m_lifted = 20\nm_simulations = 250\nds_n_neighbors = 20\nds_dist_threshold = 0.01\n\
         ds_scan_fraction = 0.3\nds_coord_weight = 0.1\n"
    ))
    .expect("config");
    assert_eq!(config.extraction, Extraction::TopK(10));
    assert_eq!(config.lift_v1, LowerLevel::Holdout);
    let out = run_on_stack(&config, &input, dir).expect("pipeline");
    let report = out.report.expect("report");
    (report.covered_statistics(), report.coverage_fraction())
}

#[test]
fn criterion_9_desk_scale_pipeline() {
    criterion(9, "desk-scale pipeline", secs(900), || {
        let tmp = tempfile::tempdir().unwrap();
        let runs: Vec<(usize, f64)> = (0..5u64)
            .map(|k| {
                let dir = tmp.path().join(format!("run{k}"));
                std::fs::create_dir_all(&dir).unwrap();
                desk_run(9000 + k, &dir)
            })
            .collect();
        let every_run = runs.iter().all(|&(c, _)| c >= 5);
        let fraction = mean(&runs.iter().map(|r| r.1).collect::<Vec<_>>());
        let per_run: Vec<String> = runs.iter().map(|(c, f)| format!("{c}/6 ({f:.3})")).collect();
        (
            every_run && fraction >= 0.9,
            format!("covered statistics per run {}; mean coverage fraction {fraction:.3}", per_run.join(", ")),
        )
    });
}
