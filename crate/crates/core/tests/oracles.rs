//! Library routines checked against the independent references in `oracle/`.

mod oracle;

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use sfm_regkit::geometry::random_rotation;
use sfm_regkit::metrics::{MetricConfig, MetricSource, NamedImage};
use sfm_regkit::ordering::{tsp_exact, tsp_heuristic};
use sfm_regkit::pairs::{SimilarityEdge, SimilarityGraph};
use sfm_regkit::{
    best_registration, build_distance_matrix, fit_similarity, mst, Correspondences, DistanceMatrix, GrayImage, Metric,
    Pose, RotationMatrix, Scene, SimilarityTransform,
};

fn scene_from_centers(centers: &[Vector3<f64>]) -> Scene {
    let mut s = Scene::new("d", "s");
    for (i, c) in centers.iter().enumerate() {
        s.push(format!("im{i}"), Some(Pose::from_center(RotationMatrix::identity(), c)))
            .unwrap();
    }
    s
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| {
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect()
}

#[test]
fn svd_and_quaternion_fits_agree_on_noisy_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..200 {
        let n = rng.random_range(3..15);
        let src = random_points(&mut rng, n);
        let dst = random_points(&mut rng, n);
        let fit = fit_similarity(&Correspondences::new(src.clone(), dst.clone()).unwrap()).unwrap();
        let (s, r, t) = oracle::horn_quaternion(&src, &dst).unwrap();
        assert!((fit.scale() - s).abs() < 1e-8, "{} vs {s}", fit.scale());
        assert!((fit.rotation().matrix() - r).amax() < 1e-8);
        assert!((fit.translation() - t).amax() < 1e-8);
    }
}

#[test]
fn registration_matches_brute_force() {
    let noise = Normal::new(0.0, 0.01).unwrap();
    for seed in 0..60u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=6);
        let gt = random_points(&mut rng, n);
        let sim = SimilarityTransform::new(
            rng.random_range(0.2..5.0),
            random_rotation(&mut rng),
            Vector3::new(1.0, -2.0, 0.5),
        )
        .unwrap();
        let mut pred: Vec<_> = gt.iter().map(|c| sim.inverse().apply(c)).collect();
        for p in pred.iter_mut() {
            *p += Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
        }
        if seed % 2 == 1 {
            let k = rng.random_range(0..n);
            pred[k] += Vector3::new(rng.random_range(0.5..2.0), 0.0, rng.random_range(-1.0..1.0));
        }
        let threshold = [0.02, 0.05, 0.2][seed as usize % 3];
        let got = best_registration(&scene_from_centers(&pred), &scene_from_centers(&gt), threshold)
            .unwrap()
            .registered_count();
        let want = oracle::brute_force_registered(&pred, &gt, threshold).unwrap();
        assert_eq!(got, want, "seed {seed}");
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DistanceMatrix {
    DistanceMatrix::from_fn((0..n).map(|i| i.to_string()).collect(), |_, _| {
        rng.random_range(0.1..10.0)
    })
    .unwrap()
}

#[test]
fn exact_tsp_is_optimal_and_heuristic_never_better() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..60 {
        let n = rng.random_range(1..=8);
        let d = random_matrix(&mut rng, n);
        let exact = tsp_exact(&d).unwrap();
        let brute = oracle::brute_tsp(n, |i, j| d.get(i, j));
        assert!((exact.cost - brute).abs() < 1e-9, "{} vs {brute}", exact.cost);
        let heur = tsp_heuristic(&d, 1).unwrap();
        assert!(heur.cost >= exact.cost - 1e-9);
    }
}

#[test]
fn heuristic_is_two_opt_local_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..30 {
        let n = rng.random_range(4..40);
        let d = random_matrix(&mut rng, n);
        let t = tsp_heuristic(&d, 0).unwrap();
        let o = &t.order;
        for i in 0..n - 1 {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let delta = d.get(o[i], o[j]) + d.get(o[i + 1], o[(j + 1) % n])
                    - d.get(o[i], o[i + 1])
                    - d.get(o[j], o[(j + 1) % n]);
                assert!(delta >= -1e-9, "improving move ({i},{j}) left: {delta}");
            }
        }
    }
}

#[test]
fn tours_invariant_under_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let n = rng.random_range(3..=9);
        let d = random_matrix(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pd = d.permuted(&perm);
        let a = tsp_exact(&d).unwrap();
        let b = tsp_exact(&pd).unwrap();
        let mut mapped: Vec<_> = b
            .edges()
            .into_iter()
            .map(|(x, y)| (perm[x].min(perm[y]), perm[x].max(perm[y])))
            .collect();
        mapped.sort_unstable();
        assert_eq!(a.edges(), mapped);
    }
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> SimilarityGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                edges.push(SimilarityEdge {
                    i,
                    j,
                    similarity: rng.random_range(-1.0..1.0),
                });
            }
        }
    }
    SimilarityGraph {
        labels: (0..n).map(|i| i.to_string()).collect(),
        edges,
    }
}

#[test]
fn mst_matches_spanning_tree_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let g = random_graph(&mut rng, n, 0.8);
        let edges: Vec<_> = g.edges.iter().map(|e| (e.i, e.j, e.weight())).collect();
        let t = mst(&g);
        match oracle::brute_mst(n, &edges) {
            Some(best) => {
                assert!(!t.is_forest);
                assert_eq!(t.edges.len(), n.saturating_sub(1));
                assert!((t.total_weight - best).abs() < 1e-12);
            }
            None => assert!(t.is_forest),
        }
    }
}

#[test]
fn ssim_agrees_with_moment_formula() {
    let cfg = MetricConfig::default();
    let checker = GrayImage::from_fn(256, 256, |x, y| ((x + y) % 2) as f64);
    let inverted = GrayImage::from_fn(256, 256, |x, y| ((x + y + 1) % 2) as f64);
    let got = cfg.ssim_weight(&checker, &inverted).unwrap();
    let want = 1.0 - oracle::naive_ssim(checker.data(), inverted.data(), 256, 256, 8, 4);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!(got > 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..5 {
        let a = GrayImage::from_fn(256, 256, |_, _| rng.random());
        let b = GrayImage::from_fn(256, 256, |x, y| {
            (a.get(x, y) * 0.7 + 0.2 * rng.random::<f64>()).min(1.0)
        });
        let got = cfg.ssim_weight(&a, &b).unwrap();
        let want = 1.0 - oracle::naive_ssim(a.data(), b.data(), 256, 256, 8, 4);
        assert!((got - want).abs() < 1e-9);
    }
}

#[test]
fn flow_matrix_is_symmetrized() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = MetricConfig {
        working_size: 64,
        ..MetricConfig::default()
    };
    let images: Vec<_> = (0..3)
        .map(|i| NamedImage {
            id: format!("f{i}"),
            image: GrayImage::from_fn(64, 64, |_, _| rng.random()),
        })
        .collect();
    let d = build_distance_matrix(MetricSource::Images(&images), Metric::Flow, &cfg).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(d.get(i, j), d.get(j, i));
        }
    }
    let ab = cfg.flow_std_weight(&images[0].image, &images[1].image).unwrap();
    let ba = cfg.flow_std_weight(&images[1].image, &images[0].image).unwrap();
    assert_eq!(d.get(0, 1), 0.5 * (ab + ba));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn similarity_invariance(seed in any::<u64>(), n in 3usize..10, scale in 0.1..10.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_points(&mut rng, n);
        let s = SimilarityTransform::new(scale, random_rotation(&mut rng), Vector3::new(3.0, 1.0, -2.0)).unwrap();
        let pred: Vec<_> = gt.iter().map(|c| s.apply(c)).collect();
        let rep = sfm_regkit::maa(&scene_from_centers(&pred), &scene_from_centers(&gt), &[0.001, 0.01, 0.1]).unwrap();
        prop_assert_eq!(rep.maa, 1.0);
    }

    #[test]
    fn registered_count_monotone_in_threshold(seed in any::<u64>(), n in 4usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_points(&mut rng, n);
        let pred: Vec<_> = gt
            .iter()
            .map(|c| c + Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
            .collect();
        let rep = sfm_regkit::maa(&scene_from_centers(&pred), &scene_from_centers(&gt), &sfm_regkit::maa::default_thresholds()).unwrap();
        for w in rep.per_threshold.windows(2) {
            prop_assert!(w[0].registered <= w[1].registered);
        }
    }

    #[test]
    fn proposals_monotone_in_threshold(seed in any::<u64>(), n in 2usize..9, hi in -1.0..1.0f64, drop in 0.0..1.0f64, quota in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 1.0);
        let key = |e: &SimilarityEdge| (e.i, e.j);
        let strict: std::collections::BTreeSet<_> =
            sfm_regkit::propose_pairs(&g, hi, quota).iter().map(key).collect();
        let loose: std::collections::BTreeSet<_> =
            sfm_regkit::propose_pairs(&g, hi - drop, quota).iter().map(key).collect();
        prop_assert!(strict.is_subset(&loose));
    }
}
