//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! The 100-dimensional training run takes hours on one core and only runs
//! with `FBSDEJ_ACCEPT_HIGHDIM=1`; otherwise criterion 2 is judged on the
//! 10-dimensional smoke variant.

mod common;

use std::time::Instant;

use common::*;
use fbsdej::analysis::{posterior_check, rate_study, RateMode};
use fbsdej::deep::{train_with, TrainConfig, TrainReport};
use fbsdej::problem::{example_1d, example_highdim};

const HIGHDIM_ENV: &str = "FBSDEJ_ACCEPT_HIGHDIM";

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String, started: Instant) {
        if !pass {
            self.failed += 1;
        }
        println!(
            "{} [{id}] {name}: {detail} ({:.0} s)",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
}

fn train_1d() -> TrainReport {
    let spec = example_1d();
    let cfg = TrainConfig {
        steps: 20,
        batch_size: 256,
        iterations: 4000,
        runs: 5,
        checkpoint_every: 500,
        seed: 1,
        ..TrainConfig::default()
    };
    train_with(&spec, &cfg, |c| {
        eprintln!(
            "  d=1 iteration {:>4}: loss {:.5}, y0 {:.5} +- {:.5}",
            c.iteration, c.loss_mean, c.y0_mean, c.y0_std
        )
    })
    .expect("d=1 training")
}

fn criterion_1(r: &mut Report, t: &TrainReport, started: Instant) {
    let last = t.last().expect("checkpoints");
    let pass = (last.y0_mean - 2.0).abs() <= 0.03 && last.y0_std <= 0.05 && (0.08..=0.25).contains(&last.loss_mean);
    r.line(
        1,
        "d=1 training band",
        pass,
        format!(
            "mean Y0 {:.5} (|.-2| <= 0.03), std {:.5} (<= 0.05), loss {:.5} (in [0.08, 0.25])",
            last.y0_mean, last.y0_std, last.loss_mean
        ),
        started,
    );
}

fn criterion_2(r: &mut Report) {
    let started = Instant::now();
    let full = std::env::var(HIGHDIM_ENV).is_ok_and(|v| v == "1");
    let (d, iterations) = if full { (100, 2000) } else { (10, 2000) };
    let spec = example_highdim(d).expect("high-dimensional problem");
    let cfg = TrainConfig {
        steps: 20,
        batch_size: 256,
        iterations,
        runs: 5,
        checkpoint_every: 500,
        seed: 1,
        ..TrainConfig::default()
    };
    let t = train_with(&spec, &cfg, |c| {
        eprintln!(
            "  d={d} iteration {:>4}: loss {:.5}, y0 {:.5} +- {:.5}",
            c.iteration, c.loss_mean, c.y0_mean, c.y0_std
        )
    })
    .expect("high-dimensional training");
    let last = t.last().expect("checkpoints");
    if full {
        let pass = (last.y0_mean - 2.0).abs() <= 0.03 && (0.35..=0.70).contains(&last.loss_mean);
        r.line(
            2,
            "d=100 training band",
            pass,
            format!(
                "mean Y0 {:.5} (|.-2| <= 0.03), loss {:.5} (in [0.35, 0.70])",
                last.y0_mean, last.loss_mean
            ),
            started,
        );
    } else {
        let pass = (last.y0_mean - 2.0).abs() <= 0.05;
        r.line(
            2,
            "high-dimensional training, d=10 smoke variant",
            pass,
            format!(
                "mean Y0 {:.5} (|.-2| <= 0.05), loss {:.5}; d=100 needs {HIGHDIM_ENV}=1",
                last.y0_mean, last.loss_mean
            ),
            started,
        );
    }
}

fn criterion_3(r: &mut Report, t: &TrainReport, started: Instant) {
    let window = 100;
    let l0 = t.smoothed_loss(0, window).expect("loss history");
    let l1500 = t.smoothed_loss(1500, window).expect("loss history");
    let end = t.loss_history.iter().map(|h| h.len()).min().unwrap_or(1) - 1;
    let lend = t.smoothed_loss(end, window).expect("loss history");
    let early = (l0 - l1500).abs();
    let late = (l1500 - lend).abs();
    let pass = l1500 < 0.3 * l0 && late < early;
    r.line(
        3,
        "loss-decay shape",
        pass,
        format!(
            "smoothed loss {l0:.4} -> {l1500:.4} (iter 1500, < {:.4}) -> {lend:.4} (iter {end}); change {early:.4} then {late:.4}",
            0.3 * l0
        ),
        started,
    );
}

fn criterion_4(r: &mut Report) {
    let started = Instant::now();
    let spec = example_1d();
    let report = rate_study(&spec, &[10, 20, 40, 80], 100_000, RateMode::OraclePolicy, 1).expect("rate study");
    let errors: Vec<String> = report
        .levels
        .iter()
        .map(|l| format!("N={} {:.3e}", l.steps, l.error))
        .collect();
    let (pass, detail) = match report.fit {
        Some(f) => (
            (0.7..=1.3).contains(&f.slope) && f.r_squared >= 0.9,
            format!(
                "slope {:.4} +- {:.4} (in [0.7, 1.3]), R^2 {:.5} (>= 0.9); {}",
                f.slope,
                f.slope_stderr,
                f.r_squared,
                errors.join(", ")
            ),
        ),
        None => (false, format!("degenerate fit; {}", errors.join(", "))),
    };
    r.line(4, "time-discretization rate", pass, detail, started);
}

fn criterion_5(r: &mut Report, t: &TrainReport, started: Instant) {
    let points: Vec<(f64, f64)> = t
        .checkpoints
        .iter()
        .map(|c| {
            let err = c.y0s.iter().map(|y| (y - 2.0) * (y - 2.0)).sum::<f64>() / c.y0s.len() as f64;
            (c.loss_mean, err)
        })
        .collect();
    let (pass, detail) = match posterior_check(&points) {
        Ok(p) => {
            let rho = p.spearman.unwrap_or(f64::NAN);
            (
                p.points >= 8 && rho >= 0.8 && p.bound_fits(),
                format!(
                    "{} checkpoints, Spearman {rho:.4} (>= 0.8), error^2 <= {:.3e} + {:.4} loss (envelope a {:.3e})",
                    p.points, p.a, p.b, p.envelope_a
                ),
            )
        }
        Err(e) => (false, e.to_string()),
    };
    r.line(5, "loss versus error diagnostic", pass, detail, started);
}

fn criterion_6(r: &mut Report) {
    let started = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, value: f64, pass: bool| {
        ok &= pass;
        parts.push(format!("{name} {value:.2e}{}", if pass { "" } else { " [fail]" }));
    };
    let g = gradcheck_worst(100, 2024);
    check("gradcheck", g, g < 1e-5);
    let l = levy_polynomial_worst();
    check("levy", l, l < 1e-12);
    let gm = gamma_oracle_worst();
    check("gamma", gm, gm < 1e-8);
    let p = pide_residual_worst();
    check("residual", p, p < 1e-4);
    let zmax = poisson_moment_zscores(1_000_000, 17)
        .iter()
        .map(|(_, z)| z.abs())
        .fold(0.0, f64::max);
    check("poisson |z|", zmax, zmax < 3.0);
    let (zz, zg) = projection_zscores(200_000, 5);
    check("project_z |z|", zz.abs(), zz.abs() < 3.0);
    check("project_gamma |z|", zg.abs(), zg.abs() < 3.0);
    let deltas = coupled_sup_deltas(5, 10, 20_000);
    check(
        "sup-delta last",
        *deltas.last().unwrap_or(&f64::NAN),
        deltas.len() == 5 && strictly_decreasing(&deltas),
    );
    let tw = tower_worst();
    check("tower", tw, tw < 1e-8);
    r.line(6, "property suites", ok, parts.join(", "), started);
}

fn main() {
    // cargo passes harness flags such as --list; there is nothing to list
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut r = Report { failed: 0 };

    criterion_6(&mut r);
    criterion_4(&mut r);

    let started = Instant::now();
    let t = train_1d();
    criterion_1(&mut r, &t, started);
    criterion_3(&mut r, &t, started);
    criterion_5(&mut r, &t, started);

    criterion_2(&mut r);

    println!("acceptance: {} of 6 criteria failed", r.failed);
    if r.failed > 0 {
        std::process::exit(1);
    }
}
