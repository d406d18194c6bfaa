use fbsdej::analysis::{loglog_fit, spearman};
use fbsdej::markovian::CubicSpline;
use fbsdej::net::{checkpoint, init_params, NetConfig};
use proptest::prelude::*;

proptest! {
    #[test]
    fn spearman_ignores_monotone_maps(v in prop::collection::vec(-100.0f64..100.0, 5..40)) {
        let w: Vec<f64> = v.iter().map(|x| x.exp().ln_1p() + 3.0 * x).collect();
        if let Some(r) = spearman(&v, &w) {
            prop_assert!((r - 1.0).abs() < 1e-12);
        }
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        if let Some(r) = spearman(&v, &neg) {
            prop_assert!((r + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loglog_fit_recovers_power_laws(slope in 0.2f64..3.0, c in 0.01f64..100.0) {
        let h: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];
        let e: Vec<f64> = h.iter().map(|h| c * h.powf(slope)).collect();
        let f = loglog_fit(&h, &e).unwrap();
        prop_assert!((f.slope - slope).abs() < 1e-9);
        prop_assert!(f.r_squared > 1.0 - 1e-9);
    }

    #[test]
    fn spline_reproduces_lines(a in -5.0f64..5.0, b in -5.0f64..5.0, x in -12.0f64..12.0) {
        let n = 17;
        let (lo, hi) = (-4.0, 4.0);
        let values: Vec<f64> = (0..n).map(|i| a + b * (lo + (hi - lo) * i as f64 / (n - 1) as f64)).collect();
        let s = CubicSpline::new(lo, hi, values).unwrap();
        prop_assert!((s.eval(x) - (a + b * x)).abs() < 1e-9);
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), d in 1usize..4, steps in 1usize..4) {
        let p = init_params(&NetConfig::default(), d, steps, seed).unwrap();
        let (q, s) = checkpoint::from_str(&checkpoint::to_string(&p, seed)).unwrap();
        prop_assert_eq!(s, seed);
        prop_assert_eq!(q.values, p.values);
    }
}
