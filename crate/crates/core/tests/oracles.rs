mod common;

use btc_core::btc::{btc_beta_average, btc_beta_profile, btc_classify, BtcParams, ResidualVector};
use btc_core::data::{build_dictionary, HsiCube, LabelMap, NormMode};
use btc_core::ensemble::{ensemble_classify, make_sparse_projection, EnsembleConfig, SeedSchedule};
use btc_core::eval::evaluate;
use btc_core::kbtc::{kbtc_classify, kbtc_threshold_profile, kernel_cache, KbtcParams, KernelSpec};
use btc_core::linalg::{
    mutual_coherence, pca_first_component, solve_spd_regularized, top_m_select, SelectionMode,
};
use btc_core::spatial::{
    box_smooth, build_residual_cube, decide_from_cube, mask_by_classmap, wls_smooth, CubeNormalization,
    PixelClassifier, ResidualCube, WlsParams,
};
use common::*;
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn regularized_solve_matches_elimination() {
    let mut r = rng(11);
    for _ in 0..50 {
        let n = r.random_range(1..12);
        let d = Array2::from_shape_simple_fn((n + 3, n), || StandardNormal.sample(&mut r));
        let g = d.t().dot(&d);
        let b = Array1::from_shape_simple_fn(n, || StandardNormal.sample(&mut r));
        let alpha = r.random_range(0.001..0.5);
        let x = solve_spd_regularized(g.view(), b.view(), alpha).unwrap();
        let mut gm = to_mat(&g);
        for (i, row) in gm.iter_mut().enumerate() {
            row[i] += alpha;
        }
        let want = dense_solve(&gm, b.as_slice().unwrap());
        assert!(max_abs_diff(x.as_slice().unwrap(), &want) < 1e-9);
    }
}

#[test]
fn selection_matches_sort() {
    let mut r = rng(12);
    for _ in 0..100 {
        let n = r.random_range(1..40);
        // coarse values force plenty of ties
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-4i32..=4) as f64 / 2.0).collect();
        let m = r.random_range(1..=n);
        let got = top_m_select(Array1::from(v.clone()).view(), m, SelectionMode::Magnitude).unwrap();
        let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        let mut want = sorted_by_score(&abs)[..m].to_vec();
        want.sort_unstable();
        let mut got = got.to_vec();
        got.sort_unstable();
        assert_eq!(got, want);
        let raw = top_m_select(Array1::from(v.clone()).view(), m, SelectionMode::Raw).unwrap();
        let mut want = sorted_by_score(&v)[..m].to_vec();
        want.sort_unstable();
        let mut raw = raw.to_vec();
        raw.sort_unstable();
        assert_eq!(raw, want);
    }
}

#[test]
fn btc_matches_brute_force() {
    for seed in 0..100 {
        let inst = random_instance(seed, 20, 40, 4);
        let (rows, labels) = inst.as_rows();
        let dict = build_dictionary(rows.view(), &labels, NormMode::L2Columns).unwrap();
        let m = 1 + (seed as usize) % (inst.b() - 1).min(inst.n());
        let alpha = 0.01;
        let (eps, _) = btc_classify(&dict, Array1::from(inst.y.clone()).view(), &BtcParams::new(m, alpha)).unwrap();
        let want = btc_oracle(&inst, m, alpha);
        assert!(max_abs_diff(eps.values(), &want) < 1e-9, "seed {seed}");
    }
}

#[test]
fn kbtc_matches_brute_force() {
    for seed in 0..100 {
        let inst = random_instance(1000 + seed, 20, 40, 4);
        let (rows, labels) = inst.as_rows();
        let dict = build_dictionary(rows.view(), &labels, NormMode::RangeScaled).unwrap();
        let m = 1 + (seed as usize) % (inst.b() - 1).min(inst.n());
        let gamma = 2f64.powi(-(seed as i32 % 6));
        let params = KbtcParams::new(m, 1e-6, KernelSpec::rbf(gamma));
        let cache = kernel_cache(&dict, params.kernel).unwrap();
        let y = dict.prepare_sample(Array1::from(inst.y.clone()).view()).unwrap();
        let (eps, _) = kbtc_classify(&dict, y.view(), &params, &cache).unwrap();
        let want = kbtc_oracle(&inst, m, 1e-6, gamma);
        assert!(max_abs_diff(eps.values(), &want) < 1e-9, "seed {seed}");
    }
}

#[test]
fn beta_average_matches_brute_force() {
    for seed in 0..30 {
        let inst = random_instance(2000 + seed, 12, 20, 3);
        let (rows, labels) = inst.as_rows();
        let dict = build_dictionary(rows.view(), &labels, NormMode::L2Columns).unwrap();
        let hi = (inst.b() - 1).min(inst.n());
        for m in 2..=hi {
            let got = btc_beta_average(&dict, m, 0.01).unwrap();
            let want = btc_beta_average_oracle(&inst, m, 0.01);
            assert!((got - want).abs() < 1e-9, "seed {seed} M={m}");
        }
        let profile = btc_beta_profile(&dict, 0.01, 2..=hi).unwrap();
        for (m, b) in profile {
            assert!((b - btc_beta_average_oracle(&inst, m, 0.01)).abs() < 1e-9);
        }
    }
}

#[test]
fn kernel_profile_matches_brute_force() {
    for seed in 0..20 {
        let inst = random_instance(3000 + seed, 10, 16, 3);
        let (rows, labels) = inst.as_rows();
        let dict = build_dictionary(rows.view(), &labels, NormMode::RangeScaled).unwrap();
        let gamma = 0.5;
        let cache = kernel_cache(&dict, KernelSpec::rbf(gamma)).unwrap();
        let hi = (inst.b() - 1).min(inst.n());
        let ms: Vec<usize> = (1..=hi).collect();
        let profile = kbtc_threshold_profile(&dict, 1e-9, &cache, &ms).unwrap();

        let (cols, _) = range_scale(&inst.cols, &inst.y);
        let k = move |a: &[f64], b: &[f64]| rbf(gamma, a, b);
        for (m, got) in profile {
            let mut total = 0.0;
            for i in 0..cols.len() {
                let scores: Vec<f64> = cols.iter().map(|c| k(c, &cols[i])).collect();
                let support: Vec<usize> =
                    sorted_by_score(&scores).into_iter().filter(|&j| j != i).take(m - 1).collect();
                let eps = kernel_residuals(&k, &cols, &inst.classes, inst.num_classes, &cols[i], &support, 1e-9);
                total += ratio(&eps, inst.classes[i]);
            }
            assert!((got - total / cols.len() as f64).abs() < 1e-9, "seed {seed} M={m}");
        }
    }
}

#[test]
fn pca_matches_jacobi() {
    let mut r = rng(21);
    for _ in 0..10 {
        let (h, w, b) = (r.random_range(2..7), r.random_range(2..7), r.random_range(2..6));
        let scales: Vec<f64> = (0..b).map(|k| 1.0 + 2.0 * k as f64).collect();
        let hwb = ndarray::Array3::from_shape_fn((h, w, b), |(_, _, k)| {
            scales[k] * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)
        });
        let cube = HsiCube::from_hwb(hwb.view()).unwrap();
        let got = pca_first_component(&cube).unwrap();

        let x = to_mat(&cube.pixels());
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..b).map(|k| x.iter().map(|p| p[k]).sum::<f64>() / n).collect();
        let xc: Mat = x.iter().map(|p| p.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
        let cov: Mat = (0..b)
            .map(|i| (0..b).map(|j| xc.iter().map(|p| p[i] * p[j]).sum::<f64>() / n).collect())
            .collect();
        let (vals, vecs) = jacobi_eigen(&cov);
        let top = (0..b).max_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
        let v: Vec<f64> = (0..b).map(|k| vecs[k][top]).collect();
        let mut pc: Vec<f64> = xc.iter().map(|p| dot(p, &v)).collect();
        let bm: Vec<f64> = x.iter().map(|p| p.iter().sum::<f64>() / b as f64).collect();
        let bmm = bm.iter().sum::<f64>() / n;
        if pc.iter().zip(&bm).map(|(p, q)| p * (q - bmm)).sum::<f64>() < 0.0 {
            pc.iter_mut().for_each(|p| *p = -*p);
        }
        let lo = pc.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = pc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let want: Vec<f64> = pc.iter().map(|p| (p - lo) / (hi - lo)).collect();
        assert!(max_abs_diff(got.as_slice().unwrap(), &want) < 1e-6);
    }
}

#[test]
fn coherence_matches_pairwise_scan() {
    for seed in 0..20 {
        let inst = random_instance(4000 + seed, 10, 15, 3);
        let (rows, labels) = inst.as_rows();
        let dict = build_dictionary(rows.view(), &labels, NormMode::L2Columns).unwrap();
        let cols: Mat = inst.cols.iter().map(|c| unit(c)).collect();
        let mut want: f64 = 0.0;
        for i in 0..cols.len() {
            for j in 0..cols.len() {
                if i != j {
                    want = want.max(dot(&cols[i], &cols[j]).abs());
                }
            }
        }
        assert!((mutual_coherence(&dict).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn box_matches_double_loop() {
    let mut r = rng(31);
    for window in [1, 3, 5, 7] {
        let map = Array2::from_shape_simple_fn((5, 5), || r.random::<f64>());
        let got = box_smooth(map.view(), window).unwrap();
        let want = box_oracle(&to_mat(&map), window);
        let want: Vec<f64> = want.into_iter().flatten().collect();
        assert!(max_abs_diff(got.as_slice().unwrap(), &want) < 1e-12);
    }
}

fn step_instance(seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut r = rng(seed);
    let map = Array2::from_shape_fn((16, 16), |(_, c)| {
        (if c < 8 { 0.2 } else { 0.8 }) + 0.05 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)
    });
    let guide = Array2::from_shape_fn((16, 16), |(_, c)| if c < 8 { 0.1 } else { 0.9 });
    (map, guide)
}

#[test]
fn wls_matches_dense_solve() {
    let tight = WlsParams {
        cg_tol: 1e-12,
        ..WlsParams::default()
    };
    for seed in 0..5 {
        let (map, guide) = step_instance(seed);
        let got = wls_smooth(map.view(), guide.view(), &tight).unwrap();
        let want = wls_dense_solve(&to_mat(&map), &to_mat(&guide), 0.4, 0.9, 1e-4);
        let want: Vec<f64> = want.into_iter().flatten().collect();
        assert!(max_abs_diff(got.as_slice().unwrap(), &want) < 1e-6);

        // random guidance as well
        let mut r = rng(100 + seed);
        let g = Array2::from_shape_simple_fn((16, 16), || r.random::<f64>());
        let got = wls_smooth(map.view(), g.view(), &tight).unwrap();
        let want: Vec<f64> = wls_dense_solve(&to_mat(&map), &to_mat(&g), 0.4, 0.9, 1e-4)
            .into_iter()
            .flatten()
            .collect();
        assert!(max_abs_diff(got.as_slice().unwrap(), &want) < 1e-6);
    }
}

#[test]
fn wls_default_tolerance_close_to_dense() {
    let (map, guide) = step_instance(9);
    let got = wls_smooth(map.view(), guide.view(), &WlsParams::default()).unwrap();
    let want: Vec<f64> = wls_dense_solve(&to_mat(&map), &to_mat(&guide), 0.4, 0.9, 1e-4)
        .into_iter()
        .flatten()
        .collect();
    assert!(max_abs_diff(got.as_slice().unwrap(), &want) < 1e-4);
}

fn region_variance(a: &Array2<f64>, left: bool) -> f64 {
    let vals: Vec<f64> = a
        .indexed_iter()
        .filter(|((_, c), _)| (*c < 8) == left)
        .map(|(_, &v)| v)
        .collect();
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64
}

#[test]
fn wls_step_edge_smooths_flats_and_keeps_edge() {
    let (map, guide) = step_instance(3);
    let out = wls_smooth(map.view(), guide.view(), &WlsParams::default()).unwrap();
    for left in [true, false] {
        assert!(region_variance(&out, left) < region_variance(&map, left));
    }
    let contrast = |a: &Array2<f64>| {
        let l: f64 = a.column(7).sum() / 16.0;
        let r: f64 = a.column(8).sum() / 16.0;
        r - l
    };
    assert!(contrast(&out) >= 0.8 * contrast(&map));
}

#[test]
fn metrics_match_formula() {
    let mut r = rng(41);
    for _ in 0..20 {
        let truth: Vec<usize> = (0..100).map(|_| r.random_range(1..=3)).collect();
        let pred: Vec<usize> = (0..100).map(|_| r.random_range(1..=3)).collect();
        let rep = evaluate(&pred, &truth).unwrap();
        let (oa, aa, k) = metrics_oracle(&pred, &truth);
        assert!((rep.oa - oa).abs() < 1e-12 && (rep.aa - aa).abs() < 1e-12 && (rep.kappa - k).abs() < 1e-12);
    }
}

#[test]
fn mask_and_decide_match_elementwise() {
    let mut r = rng(51);
    let (h, w, c) = (6, 5, 4);
    let data = Array3::from_shape_simple_fn((h, w, c), || r.random::<f64>());
    let labels: Vec<usize> = (0..h * w).map(|_| r.random_range(1..=c)).collect();
    let map = LabelMap::new(h, w, labels).unwrap();
    let cube = ResidualCube::new(data.clone(), true).unwrap();
    let masked = mask_by_classmap(&cube, &map).unwrap();
    for ((i, j, k), &v) in masked.data().indexed_iter() {
        let want = if map.get(i, j) == k + 1 { data[[i, j, k]] } else { 1.0 };
        assert_eq!(v, want);
        assert!(v >= data[[i, j, k]]);
    }
    let decided = decide_from_cube(&cube);
    for i in 0..h {
        for j in 0..w {
            let lane: Vec<f64> = (0..c).map(|k| data[[i, j, k]]).collect();
            let best = (0..c).min_by(|&a, &b| lane[a].total_cmp(&lane[b]).then(a.cmp(&b))).unwrap();
            assert_eq!(decided.get(i, j), best + 1);
        }
    }
}

#[test]
fn residual_cube_matches_pixel_loop() {
    let mut r = rng(61);
    let centres = [vec![1.0, 0.2, 0.1, 0.5], vec![0.1, 0.9, 0.7, 0.2]];
    let (h, w, b) = (10, 10, 4);
    let noisy = |k: usize, r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        centres[k].iter().map(|v| v + 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, r)).collect()
    };
    let hwb = Array3::from_shape_fn((h, w, b), |(_, c, _)| if c < 5 { 0.0 } else { 1.0 });
    let mut hwb = hwb;
    for i in 0..h {
        for j in 0..w {
            let s = noisy(usize::from(j >= 5), &mut r);
            for k in 0..b {
                hwb[[i, j, k]] = s[k];
            }
        }
    }
    let cube = HsiCube::from_hwb(hwb.view()).unwrap();
    let train: Vec<Vec<f64>> = (0..12).map(|i| noisy(i % 2, &mut r)).collect();
    let labels: Vec<i64> = (0..12).map(|i| (i % 2) as i64 + 1).collect();
    let rows = Array2::from_shape_fn((12, b), |(i, k)| train[i][k]);
    let dict = build_dictionary(rows.view(), &labels, NormMode::L2Columns).unwrap();
    let params = BtcParams::new(3, 1e-4);
    let (rc, pixelwise) = build_residual_cube(&cube, &dict, &PixelClassifier::Btc(params), CubeNormalization::Global).unwrap();
    let raw: Vec<ResidualVector> = (0..h * w)
        .map(|p| btc_classify(&dict, cube.pixel(p / w, p % w).view(), &params).unwrap().0)
        .collect();
    let lo = raw.iter().flat_map(|e| e.values().to_vec()).fold(f64::INFINITY, f64::min);
    let hi = raw.iter().flat_map(|e| e.values().to_vec()).fold(f64::NEG_INFINITY, f64::max);
    for (p, eps) in raw.iter().enumerate() {
        let want: Vec<f64> = eps.values().iter().map(|v| (v - lo) / (hi - lo)).collect();
        assert!(max_abs_diff(rc.residuals(p / w, p % w).values(), &want) < 1e-12);
        assert_eq!(pixelwise.get(p / w, p % w), eps.predicted_class());
    }
}

#[test]
fn residual_cube_single_pixel() {
    let cube = HsiCube::new(1, 1, 3, vec![0.9, 0.1, 0.2]).unwrap();
    let rows = ndarray::array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let dict = build_dictionary(rows.view(), &[1, 2, 3], NormMode::L2Columns).unwrap();
    let p = BtcParams::new(2, 1e-4);
    let (rc, _) = build_residual_cube(&cube, &dict, &PixelClassifier::Btc(p), CubeNormalization::Global).unwrap();
    let eps = btc_classify(&dict, cube.pixel(0, 0).view(), &p).unwrap().0;
    let (lo, hi) = eps.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let want: Vec<f64> = eps.values().iter().map(|v| (v - lo) / (hi - lo)).collect();
    assert!(max_abs_diff(rc.residuals(0, 0).values(), &want) < 1e-12);
}

#[test]
fn single_member_ensemble_is_projected_btc() {
    let inst = random_instance(77, 20, 40, 4);
    let mut r = rng(78);
    let m = 60;
    let raw_rows = Array2::from_shape_simple_fn((inst.n(), m), || StandardNormal.sample(&mut r));
    let (_, labels) = inst.as_rows();
    let y = Array1::from_shape_simple_fn(m, || StandardNormal.sample(&mut r));
    let params = BtcParams::new(5, 0.01);
    let config = EnsembleConfig {
        members: 1,
        target_dim: 12,
        sparsity: 3,
        seed: 5,
        schedule: SeedSchedule::Sequential,
        params,
    };
    let (class, eps) = ensemble_classify(raw_rows.view(), &labels, y.view(), config).unwrap();
    let proj = make_sparse_projection(12, m, 3, 6).unwrap();
    let projected = raw_rows.dot(&proj.entries().t());
    let dict = build_dictionary(projected.view(), &labels, NormMode::L2Columns).unwrap();
    let (want, _) = btc_classify(&dict, proj.project(y.view()).unwrap().view(), &params).unwrap();
    assert_eq!(eps, want);
    assert_eq!(class, want.predicted_class());

    let repeated = EnsembleConfig {
        members: 4,
        schedule: SeedSchedule::Repeated,
        seed: 6,
        ..config
    };
    let (_, dup) = ensemble_classify(raw_rows.view(), &labels, y.view(), repeated).unwrap();
    assert!(max_abs_diff(dup.values(), want.values()) < 1e-15);
}
