//! Measurements shared by the property tests and the acceptance report.
#![allow(dead_code)]

use fbsdej::markovian::{
    condexp_quadrature_1d, project_gamma, project_z, run_markovian, LeastSquares, MarkovianConfig, RegressionBasis,
};
use fbsdej::net::{gradient_check, Activation, MlpLayout, Tensor};
use fbsdej::problem::{exact_residual, example_1d, example_1d_coupled};
use fbsdej::stochastic::{levy_integral, make_noise, JumpMeasure};
use fbsdej::TimeGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Worst relative gradient error over `nets` random tanh networks.
pub fn gradcheck_worst(nets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..nets {
        let input = rng.random_range(1..6usize);
        let depth = rng.random_range(1..4usize);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..9usize)).collect();
        let out = rng.random_range(1..5usize);
        let l = MlpLayout::new(input, &hidden, out, Activation::Tanh, 0).unwrap();
        let p: Vec<f64> = (0..l.end()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows = rng.random_range(1..8usize);
        let x: Vec<f64> = (0..rows * input).map(|_| rng.random_range(-2.0..2.0)).collect();
        let e = gradient_check(&l, &p, &Tensor::from_vec(rows, input, x), 1e-5).unwrap();
        worst = worst.max(e);
    }
    worst
}

/// Worst error of the mark quadrature on `e^k`, `k < 2 * order`, relative
/// to `int |e|^k dlambda`, for several uniform measures.
pub fn levy_polynomial_worst() -> f64 {
    let mut worst: f64 = 0.0;
    for &delta in &[0.5, 1.0, 2.0] {
        for &order in &[4usize, 16, 32] {
            let m = JumpMeasure::uniform(delta).unwrap().with_quad_order(order).unwrap();
            let lam = m.total_intensity();
            for k in 0..2 * order {
                let got = levy_integral(|e| e.powi(k as i32), &m).unwrap();
                // int |e|^k sets the scale for odd k as well
                let scale = lam * delta.powi(k as i32) / (k as f64 + 1.0);
                let want = if k % 2 == 0 { scale } else { 0.0 };
                worst = worst.max((got - want).abs() / scale);
            }
        }
    }
    worst
}

/// Worst gap between the quadrature value of the exact jump functional
/// and `2 (sin 1 - 1) sin(x + t)`.
pub fn gamma_oracle_worst() -> f64 {
    let spec = example_1d();
    let mut worst: f64 = 0.0;
    for i in 0..11 {
        for j in 0..11 {
            let t = i as f64 / 10.0;
            let x = -3.0 + 6.0 * j as f64 / 10.0;
            let want = 2.0 * (1f64.sin() - 1.0) * (x + t).sin();
            worst = worst.max((spec.exact_gamma(t, &[x]).unwrap() - want).abs());
        }
    }
    worst
}

/// Worst PIDE residual of the exact solution on a 10 x 10 interior grid.
pub fn pide_residual_worst() -> f64 {
    let spec = example_1d();
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        for j in 0..10 {
            let t = (i as f64 + 1.0) / 11.0;
            let x = -2.0 + 4.0 * (j as f64 + 1.0) / 11.0;
            worst = worst.max(exact_residual(&spec, t, &[x], 1e-4).unwrap().abs());
        }
    }
    worst
}

/// `(name, z-score)` of sample moments of the jump noise against their
/// exact values, over `draws` unit-time intervals.
pub fn poisson_moment_zscores(draws: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let delta = 1.0;
    let m = JumpMeasure::uniform(delta).unwrap();
    let grid = TimeGrid::uniform(1.0, 1).unwrap();
    let noise = make_noise(&grid, 1, draws, &m, seed).unwrap();
    let lam = m.total_intensity();
    let mut cols: Vec<(&'static str, f64, Vec<f64>)> = vec![
        ("count_mean", lam, Vec::with_capacity(draws)),
        ("count_factorial_2", lam * lam, Vec::with_capacity(draws)),
        ("mark_sum_mean", 0.0, Vec::with_capacity(draws)),
        ("mark_sum_second", lam * delta * delta / 3.0, Vec::with_capacity(draws)),
        ("compensated_mean", 0.0, Vec::with_capacity(draws)),
        ("compensated_second", m.gamma_mass(), Vec::with_capacity(draws)),
    ];
    for s in 0..draws {
        let marks = noise.jumps(s, 0);
        let k = marks.len() as f64;
        let sum: f64 = marks.iter().sum();
        let comp = m.compensated_gamma(marks, 1.0);
        let vals = [k, k * (k - 1.0), sum, sum * sum, comp, comp * comp];
        for (c, v) in cols.iter_mut().zip(vals) {
            c.2.push(v);
        }
    }
    cols.into_iter()
        .map(|(name, want, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            (name, (mean - want) / (var / n).sqrt())
        })
        .collect()
}

/// Z-scores of the projections against a planted `Z` and `int gamma^2 dlambda`.
pub fn projection_zscores(samples: usize, seed: u64) -> (f64, f64) {
    let m = JumpMeasure::uniform(1.0).unwrap();
    let dt = 0.05;
    let planted_z = 0.7;
    let grid = TimeGrid::uniform(dt, 1).unwrap();
    let noise = make_noise(&grid, 1, samples, &m, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x: Vec<f64> = (0..samples).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dw: Vec<f64> = (0..samples).map(|s| noise.dw(s, 0)[0]).collect();
    let mg: Vec<f64> = (0..samples)
        .map(|s| m.compensated_gamma(noise.jumps(s, 0), dt))
        .collect();
    let y: Vec<f64> = (0..samples)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[i].sin() + planted_z * dw[i] + mg[i] + 0.1 * e
        })
        .collect();
    let basis = RegressionBasis::polynomial(2).fitted_to(&x, 1).unwrap();
    let ls = LeastSquares::new(&x, &basis, 0.0, 1e12).unwrap();

    let zscore = |target: Vec<f64>, fit_mean: f64, want: f64| {
        let n = target.len() as f64;
        let mean = target.iter().sum::<f64>() / n;
        let var = target.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (fit_mean - want) / (var / n).sqrt()
    };
    let avg = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;

    let z = project_z(&ls, &y, &dw, dt).unwrap();
    let z_mean = avg(ls.predict(&z[0]));
    let z_target: Vec<f64> = y.iter().zip(&dw).map(|(a, b)| a * b / dt).collect();
    let g = project_gamma(&ls, &y, &mg, dt).unwrap();
    let g_mean = avg(ls.predict(&g));
    let g_target: Vec<f64> = y.iter().zip(&mg).map(|(a, b)| a * b / dt).collect();
    (
        zscore(z_target, z_mean, planted_z),
        zscore(g_target, g_mean, m.gamma_mass()),
    )
}

/// Sup-deltas of the regression iteration on the coupled problem.
pub fn coupled_sup_deltas(sweeps: usize, steps: usize, samples: usize) -> Vec<f64> {
    let spec = example_1d_coupled(0.05);
    let grid = TimeGrid::uniform(spec.terminal_time, steps).unwrap();
    let cfg = MarkovianConfig {
        samples,
        max_sweeps: sweeps,
        tol: 0.0,
        ..MarkovianConfig::default()
    };
    run_markovian(&spec, &grid, &cfg)
        .unwrap()
        .history
        .iter()
        .map(|r| r.sup_delta)
        .collect()
}

/// Worst `|E_h E_h phi - E_{2h} phi|` of the one-step quadrature.
pub fn tower_worst() -> f64 {
    let spec = example_1d();
    let dt = 0.05;
    let phi = |x: f64| x.cos() + 0.1 * x * x + 0.01 * x.powi(3);
    let inner = |x: f64| condexp_quadrature_1d(&spec, &phi, 0.0, x, 0.0, dt).unwrap();
    let mut worst: f64 = 0.0;
    for &x in &[-1.0, -0.3, 0.0, 0.4, 1.5] {
        let two = condexp_quadrature_1d(&spec, &inner, 0.0, x, 0.0, dt).unwrap();
        let one = condexp_quadrature_1d(&spec, &phi, 0.0, x, 0.0, 2.0 * dt).unwrap();
        worst = worst.max((two - one).abs());
    }
    worst
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}
