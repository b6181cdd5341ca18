mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sozloc::balance::{nearest_neighbors, smote_oversample, smote_with, SmoteConfig};
use sozloc::eki::{fit_weights, normalize_rows, objective};
use sozloc::features::{atrous_transform, band_sine_coefficients, gini_index, SparsityConfig};
use sozloc::slices::{cluster_activations, DbscanParams, PixelMask};

fn random_mask(rng: &mut ChaCha8Rng) -> PixelMask {
    let h = rng.random_range(1..=64);
    let w = rng.random_range(1..=64);
    let density = rng.random_range(0.05..0.6);
    PixelMask::from_fn(h, w, |_, _| rng.random::<f64>() < density)
}

#[test]
fn dbscan_matches_connected_components_on_random_masks() {
    let params = DbscanParams {
        eps: std::f64::consts::SQRT_2 * 1.01,
        v_min: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let mask = random_mask(&mut rng);
        let (h, w) = mask.dims();
        let mut got: Vec<Vec<(usize, usize)>> = cluster_activations(&mask, params)
            .unwrap()
            .into_iter()
            .map(|c| {
                let mut p: Vec<_> = c.members.points().collect();
                p.sort_unstable();
                assert_eq!(p.len(), c.size);
                p
            })
            .collect();
        got.sort();
        assert_eq!(got, common::components_8(mask.bits(), h, w));
    }
}

#[test]
fn single_blob_is_one_cluster_and_distant_blobs_two() {
    let blob = |r0: usize, c0: usize| move |r: usize, c: usize| r >= r0 && r < r0 + 10 && c >= c0 && c < c0 + 20;
    let a = blob(5, 5);
    let mask = PixelMask::from_fn(80, 90, |r, c| a(r, c));
    let cs = cluster_activations(&mask, DbscanParams::default()).unwrap();
    assert_eq!(cs.len(), 1);
    assert_eq!(cs[0].size, 200);
    let b = blob(5, 65);
    let mask = PixelMask::from_fn(80, 90, |r, c| a(r, c) || b(r, c));
    assert_eq!(cluster_activations(&mask, DbscanParams::default()).unwrap().len(), 2);
    assert!(cluster_activations(&PixelMask::empty(5, 5), DbscanParams::default())
        .unwrap()
        .is_empty());
}

proptest! {
    #[test]
    fn clusters_are_disjoint_subsets(seed in any::<u64>(), eps in 1.0f64..3.0, v_min in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = random_mask(&mut rng);
        let cs = cluster_activations(&mask, DbscanParams { eps, v_min }).unwrap();
        let (h, w) = mask.dims();
        let mut covered = PixelMask::empty(h, w);
        for c in &cs {
            prop_assert!(c.size >= 1);
            prop_assert!(!covered.intersects(&c.members));
            for (r, col) in c.members.points() {
                prop_assert!(mask.contains(r, col));
            }
            covered.union_with(&c.members);
        }
        for pair in cs.windows(2) {
            prop_assert!(pair[0].size >= pair[1].size);
        }
    }
}

#[test]
fn eki_closed_form_matches_brute_force() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let t = if i % 2 == 0 { 1.0 } else { -1.0 };
            let row: Vec<f64> = (0..4)
                .map(|j| rng.random_range(-1.0..1.0) + if j < 2 { 0.8 * t } else { 0.0 })
                .collect();
            rows.push(row);
            y.push(t);
        }
        let omega = fit_weights(&rows, &y).unwrap();
        assert!((omega.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let (g, yy) = normalize_rows(&rows, &y);
        let closed = objective(&omega, &g, &yy);
        let (_, brute) = common::brute_force_eki(&rows, &y);
        assert!((closed - brute).abs() < 1e-3, "seed {seed}: {closed} vs {brute}");
        assert!(closed <= brute + 1e-9);
    }
}

#[test]
fn eki_beats_random_feasible_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y: Vec<f64> = (0..30).map(|i| if rows[i][0] + rows[i][2] > 0.0 { 1.0 } else { -1.0 }).collect();
    let omega = fit_weights(&rows, &y).unwrap();
    let (g, yy) = normalize_rows(&rows, &y);
    let best = objective(&omega, &g, &yy);
    for _ in 0..1000 {
        let mut w: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        w.push(1.0 - w.iter().sum::<f64>());
        assert!(best <= objective(&w, &g, &yy) + 1e-12);
    }
}

#[test]
fn symmetric_pair_beats_uniform_weights() {
    let rows = vec![vec![1.0, 0.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0, 0.0]];
    let y = [1.0, -1.0];
    let w = fit_weights(&rows, &y).unwrap();
    assert!(w[1..].iter().all(|&x| w[0] >= x));
    let (g, yy) = normalize_rows(&rows, &y);
    assert!(objective(&w, &g, &yy) < objective(&[0.25; 4], &g, &yy));
}

#[test]
fn gini_matches_reference_values() {
    let v = [1.0, 2.0, 3.0, 4.0];
    assert!((gini_index(&v).unwrap() - 0.25).abs() < 1e-12);
    assert!((common::gini_reference(&v) - 0.25).abs() < 1e-12);
    for n in [1usize, 4, 9, 100] {
        let mut one_hot = vec![0.0; n];
        one_hot[n / 2] = 3.5;
        assert!((gini_index(&one_hot).unwrap() - (1.0 - 1.0 / n as f64)).abs() < 1e-12);
        assert!(gini_index(&vec![-2.0; n]).unwrap().abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn gini_agrees_with_reference(v in proptest::collection::vec(-100.0f64..100.0, 1..60)) {
        let g = gini_index(&v).unwrap();
        prop_assert!((g - common::gini_reference(&v)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&g));
    }

    #[test]
    fn gini_scale_and_permutation_invariant(
        v in proptest::collection::vec(-100.0f64..100.0, 2..60),
        c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        seed in any::<u64>(),
    ) {
        let g = gini_index(&v).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        prop_assert!((gini_index(&scaled).unwrap() - g).abs() < 1e-9);
        let mut shuffled = v.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        prop_assert!((gini_index(&shuffled).unwrap() - g).abs() < 1e-9);
    }

    #[test]
    fn atrous_reconstructs_exactly(v in proptest::collection::vec(-1e3f64..1e3, 256)) {
        let a = atrous_transform(&v, &SparsityConfig::default()).unwrap();
        prop_assert_eq!(a.details.len(), 4);
        let r = a.reconstruct();
        let err = r.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10, "{}", err);
    }
}

#[test]
fn atrous_constant_and_impulse() {
    let cfg = SparsityConfig::default();
    let a = atrous_transform(&[3.0; 256], &cfg).unwrap();
    assert!(a.concatenated_details().iter().all(|d| d.abs() < 1e-12));
    let mut impulse = vec![0.0; 256];
    impulse[128] = 1.0;
    let a = atrous_transform(&impulse, &cfg).unwrap();
    let err = a.reconstruct().iter().zip(&impulse).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10);
    assert!(atrous_transform(&[0.0; 100], &cfg).is_err());
}

#[test]
fn burst_is_sparser_than_noise() {
    let cfg = SparsityConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut burst = vec![0.0; 256];
    for (i, b) in burst.iter_mut().enumerate().skip(120).take(6) {
        *b = if i % 2 == 0 { 3.0 } else { -3.0 };
    }
    let g = |x: &[f64]| gini_index(&atrous_transform(x, &cfg).unwrap().concatenated_details()).unwrap();
    assert!(g(&burst) > g(&noise));
}

#[test]
fn sine_band_selects_in_band_tones() {
    let cfg = SparsityConfig::default();
    let tone = |hz: f64| -> Vec<f64> {
        (0..256).map(|t| (2.0 * std::f64::consts::PI * hz * t as f64 * cfg.tr_seconds).sin()).collect()
    };
    // 0.05 Hz and 0.2 Hz fall between bins (25.6 and 102.4 cycles per
    // window) and leak; the tones below are the nearest bin-centred ones.
    let inband = band_sine_coefficients(&tone(26.0 / 512.0), &cfg).unwrap();
    assert_eq!(inband.len(), 51 - 6 + 1);
    assert!(gini_index(&inband).unwrap() > 0.9);
    let out = band_sine_coefficients(&tone(102.0 / 512.0), &cfg).unwrap();
    let l1 = |v: &[f64]| v.iter().sum::<f64>();
    assert!(l1(&out) < 0.01 * l1(&inband));
    assert!(band_sine_coefficients(&[0.0; 256], &cfg).unwrap().iter().all(|&x| x == 0.0));
}

#[test]
fn smote_synthetics_stay_near_their_parents() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let pts: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let cfg = SmoteConfig {
        k_neighbors: 3,
        target_count: 100,
        seed: 1,
    };
    let syn = smote_with(&pts, &cfg, |r| r.random::<f64>()).unwrap();
    assert_eq!(syn.len(), 90);
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    for s in &syn {
        let knn = nearest_neighbors(&pts, s.base, 3);
        assert!(knn.contains(&s.neighbor));
        let nearest = (0..pts.len())
            .min_by(|&i, &j| d2(&s.point, &pts[i]).total_cmp(&d2(&s.point, &pts[j])))
            .unwrap();
        assert!(nearest == s.base || knn.contains(&nearest), "nearest {nearest} base {}", s.base);
        for j in 0..4 {
            let (lo, hi) = (pts[s.base][j].min(pts[s.neighbor][j]), pts[s.base][j].max(pts[s.neighbor][j]));
            assert!(s.point[j] >= lo - 1e-12 && s.point[j] <= hi + 1e-12);
        }
    }
}

#[test]
fn smote_is_seeded_and_leaves_inputs_alone() {
    let pts = vec![vec![0.0, 1.0], vec![2.0, 2.0], vec![5.0, -1.0]];
    let before = pts.clone();
    let cfg = SmoteConfig {
        k_neighbors: 2,
        target_count: 12,
        seed: 9,
    };
    let a = smote_oversample(&pts, &cfg).unwrap();
    let b = smote_oversample(&pts, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 9);
    assert_eq!(pts, before);
}

#[test]
fn backprop_matches_central_differences() {
    for outputs in [1, 3] {
        let (net, xs, ys) = common::gradient_fixture(outputs);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let err = common::gradient_error(&net, &refs, &ys);
        assert!(err < 1e-4, "outputs {outputs}: {err}");
    }
}

#[test]
fn zero_output_layer_gradient() {
    let (mut net, xs, ys) = common::gradient_fixture(1);
    let n = net.params.len();
    // Output weights and bias are the last dense_units + 1 parameters.
    for p in &mut net.params[n - 5..] {
        *p = 0.0;
    }
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    assert!(common::gradient_error(&net, &refs, &ys) < 1e-4);
}
