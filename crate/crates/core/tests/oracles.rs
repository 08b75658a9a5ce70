//! Solver results against independent dense and brute-force references.

use nalgebra::Vector2;
use pgo_core::oracle::{
    brute_force, dense_translations, four_pose_graph, max_translation_gap, random_translation_problem,
};
use pgo_core::{gauss_newton, generate, levenberg_marquardt, translation_lls, EnvParams};

#[test]
fn zero_noise_solvers_converge_within_five_iterations() {
    let gen = generate(&EnvParams::new(300, 0.0, 0.0, 3.0, 0.5, 1));
    let init = gen.graph.odometry_init().unwrap();
    for (name, report) in [
        ("gn", gauss_newton(&gen.graph, &init, 5).unwrap()),
        ("lm", levenberg_marquardt(&gen.graph, &init, 5).unwrap()),
    ] {
        assert!(report.iterations <= 5);
        assert!(report.final_chi2() <= 1e-10, "{name}: {}", report.final_chi2());
    }
}

#[test]
fn translations_recovered_from_true_orientations() {
    for seed in 0..3 {
        let gen = generate(&EnvParams::new(200, 0.0, 0.0, 3.0, 0.5, seed));
        let gt = &gen.ground_truth;
        let t = translation_lls(&gen.graph, &gt.thetas).unwrap();
        let anchored: Vec<Vector2<f64>> = gt.translations.iter().map(|p| p - gt.translations[0]).collect();
        assert!(max_translation_gap(&t, &anchored) <= 1e-9, "seed {seed}");
    }
}

#[test]
fn translations_match_dense_normal_equations() {
    for seed in 0..5 {
        let (g, thetas) = random_translation_problem(50, seed);
        let fast = translation_lls(&g, &thetas).unwrap();
        let dense = dense_translations(&g, &thetas);
        let gap = max_translation_gap(&fast, &dense);
        assert!(gap <= 1e-9, "seed {seed}: {gap}");
    }
}

#[test]
fn small_graphs_match_exhaustive_search() {
    for seed in 0..3 {
        let (g, init) = four_pose_graph(seed);
        let oracle = brute_force(&g);
        let gn = gauss_newton(&g, &init, 100).unwrap().final_chi2();
        let lm = levenberg_marquardt(&g, &init, 100).unwrap().final_chi2();
        eprintln!("seed {seed}: oracle {oracle:.12} gn {gn:.12} lm {lm:.12}");
        assert!((gn - oracle).abs() <= 1e-6, "seed {seed}: gn {gn} vs {oracle}");
        assert!((lm - oracle).abs() <= 1e-6, "seed {seed}: lm {lm} vs {oracle}");
    }
}
