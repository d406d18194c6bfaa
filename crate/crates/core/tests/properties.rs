mod common;

use common::*;
use fbsdej::markovian::{condexp_quadrature_1d, condexp_regress, RegressionBasis};
use fbsdej::problem::example_1d;
use fbsdej::stochastic::make_noise;
use fbsdej::TimeGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn autodiff_matches_finite_differences() {
    let worst = gradcheck_worst(100, 2024);
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn levy_quadrature_exact_on_polynomials() {
    let worst = levy_polynomial_worst();
    assert!(worst < 1e-12, "{worst:e}");
}

#[test]
fn gamma_matches_closed_form() {
    let worst = gamma_oracle_worst();
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn exact_solution_solves_pide() {
    let worst = pide_residual_worst();
    assert!(worst < 1e-4, "{worst:e}");
}

#[test]
fn poisson_moments_within_three_sigma() {
    for (name, z) in poisson_moment_zscores(1_000_000, 17) {
        assert!(z.abs() < 3.0, "{name}: z = {z}");
    }
}

#[test]
fn projections_recover_planted_values() {
    let (z, g) = projection_zscores(200_000, 5);
    assert!(z.abs() < 3.0, "Z projection z-score {z}");
    assert!(g.abs() < 3.0, "Gamma projection z-score {g}");
}

#[test]
fn coupled_iteration_contracts() {
    let deltas = coupled_sup_deltas(5, 10, 20_000);
    assert_eq!(deltas.len(), 5);
    assert!(strictly_decreasing(&deltas), "{deltas:?}");
}

#[test]
fn quadrature_tower_property() {
    let worst = tower_worst();
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn regression_agrees_with_quadrature_oracle() {
    let spec = example_1d();
    let dt = 0.1;
    let samples = 20_000;
    let grid = TimeGrid::uniform(dt, 1).unwrap();
    let noise = make_noise(&grid, 1, samples, &spec.measure, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..samples).map(|_| rng.random_range(-1.5..1.5)).collect();
    let phi = |v: f64| v.sin() + 2.0;
    let y: Vec<f64> = (0..samples)
        .map(|s| {
            let xn = spec.forward_step(0.0, &[x[s]], 0.0, dt, noise.dw(s, 0), noise.jumps(s, 0));
            phi(xn[0])
        })
        .collect();
    let basis = RegressionBasis::polynomial(6);
    let fit = condexp_regress(&x, 1, &y, &basis).unwrap();

    let boots = 40;
    let points = [-0.5, 0.0, 0.5];
    let mut reps = vec![Vec::with_capacity(boots); points.len()];
    for _ in 0..boots {
        let idx: Vec<usize> = (0..samples).map(|_| rng.random_range(0..samples)).collect();
        let bx: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let bf = condexp_regress(&bx, 1, &by, &basis).unwrap();
        for (k, &p) in points.iter().enumerate() {
            reps[k].push(bf.eval(&[p]));
        }
    }
    for (k, &p) in points.iter().enumerate() {
        let mean = reps[k].iter().sum::<f64>() / boots as f64;
        let se = (reps[k].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (boots as f64 - 1.0)).sqrt();
        let oracle = condexp_quadrature_1d(&spec, &phi, 0.0, p, 0.0, dt).unwrap();
        let got = fit.eval(&[p]);
        assert!(
            (got - oracle).abs() < 3.0 * se,
            "x = {p}: {got} vs {oracle} (se {se:e})"
        );
    }
}
