use echolab_core::probe::*;
use proptest::prelude::*;

const N: usize = 1 << 14;

fn power(a: f64, r: f64, n: usize) -> (Vec<f64>, f64) {
    let h = 1.0 / n as f64;
    let q = (0..n)
        .map(|i| {
            let x = i as f64 * h - a;
            if x > 0.0 {
                x.powf(r)
            } else {
                0.0
            }
        })
        .collect();
    (q, h)
}

fn s_star(q: &[f64], h: f64) -> RegularityEstimate {
    estimate_regularity(q, h, SearchRange::POSITIVE, Method::DyadicBand).unwrap()
}

fn diff(q: &[f64], h: f64) -> Vec<f64> {
    let mut d = vec![0.0; q.len()];
    for i in 1..q.len() {
        d[i] = (q[i] - q[i - 1]) / h;
    }
    d
}

#[test]
fn power_functions_sit_half_above_their_exponent() {
    for a in [0.0, 0.3] {
        let mut last = f64::NEG_INFINITY;
        for r in [0.1, 0.25, 0.4] {
            let (q, h) = power(a, r, N);
            let e = s_star(&q, h);
            assert!((e.s_star - (r + 0.5)).abs() <= 0.05, "a {a} r {r}: {}", e.s_star);
            assert!(e.s_star > last, "estimates must increase with r");
            last = e.s_star;
        }
    }
}

#[test]
fn quarter_power_example() {
    let (q, h) = power(0.0, 0.25, N);
    assert!((s_star(&q, h).s_star - 0.75).abs() <= 0.05);
}

#[test]
fn singularity_is_localized() {
    // Windows are read as signals that vanish before their left end, so the
    // excluded pieces start from zero.
    let (q, h) = power(0.3, 0.25, N);
    let cut = N / 2;
    let before = s_star(&q[..N / 4], h);
    assert!(before.smooth, "no singularity on (0, 0.25): {before:?}");
    let after: Vec<f64> = q[cut..].iter().map(|v| v - q[cut]).collect();
    let after = s_star(&after, h);
    assert!(after.smooth, "no singularity on (0.5, 1): {after:?}");
    let near = s_star(&q[..cut], h);
    assert!((near.s_star - 0.75).abs() <= 0.05, "{}", near.s_star);
}

#[test]
fn g_breakpoint_follows_one_minus_b() {
    let g = build_g_cells(&GSpec::default(), 1.0 / N as f64, N);
    let h = 1.0 / N as f64;
    for b in [0.3, 0.5, 0.7] {
        let end = (b * N as f64) as usize;
        let e = s_star(&g[..end], h);
        assert!((e.s_star - (1.0 - b)).abs() <= 0.05, "b {b}: {}", e.s_star);
    }
}

#[test]
fn probe_follows_linear_schedule() {
    for (r0, horizon) in [(0.25, 1.0), (0.4, 2.0)] {
        let p = build_probe(&GSpec::default(), r0, horizon, horizon / N as f64).unwrap();
        for frac in [0.25, 0.5, 0.9] {
            let end = (frac * N as f64) as usize;
            let e = s_star(&p.samples[..end], p.dt);
            let want = r0 * (1.0 - frac);
            assert!((e.s_star - want).abs() <= 0.05, "r0 {r0} t/T {frac}: {} vs {want}", e.s_star);
        }
    }
}

#[test]
fn probe_rejects_out_of_class_r0() {
    for r0 in [0.0, 0.5, -0.1, 0.7] {
        assert!(build_probe(&GSpec::default(), r0, 1.0, 1e-3).is_err());
    }
    let p = build_probe(&GSpec::default(), 0.4, 2.0, 2.0 / N as f64).unwrap();
    assert_eq!(p.samples[0], 0.0);
    assert_eq!(p.origin, Origin::GDerived);
}

#[test]
fn negative_order_of_differenced_power() {
    let (q, h) = power(0.0, 0.25, N);
    let e = estimate_regularity_neg(&diff(&q, h), h, SearchRange::NEGATIVE, Method::DyadicBand).unwrap();
    assert!((e.s_star + 0.25).abs() <= 0.07, "{}", e.s_star);
    assert!((e.s_star - (s_star(&q, h).s_star - 1.0)).abs() <= 0.07);
}

#[test]
fn negative_order_of_differenced_g() {
    let h = 1.0 / N as f64;
    let g = build_g_cells(&GSpec::default(), h, N / 2);
    let e = estimate_regularity_neg(&diff(&g, h), h, SearchRange::NEGATIVE, Method::DyadicBand).unwrap();
    assert!((e.s_star + 0.5).abs() <= 0.07, "{}", e.s_star);
}

#[test]
fn smooth_signal_clamps_to_the_top() {
    let h = 1.0 / N as f64;
    let q: Vec<f64> = (0..N).map(|i| (5.0 * i as f64 * h).sin()).collect();
    let e = s_star(&q, h);
    assert!(e.smooth && e.s_star == SearchRange::POSITIVE.hi);
}

#[test]
fn sweep_agrees_with_band_estimator() {
    let (q, h) = power(0.0, 0.25, N);
    let sweep = estimate_regularity(&q, h, SearchRange::POSITIVE, Method::GagliardoSweep).unwrap();
    assert!((sweep.s_star - 0.75).abs() <= 0.1, "{}", sweep.s_star);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn seminorm_is_quadratic(lambda in -5.0f64..5.0, s in 0.05f64..0.95, r in 0.1f64..0.9) {
        let (q, h) = power(0.2, r, 256);
        let scaled: Vec<f64> = q.iter().map(|v| lambda * v).collect();
        let base = gagliardo_seminorm(&q, h, s).unwrap();
        let got = gagliardo_seminorm(&scaled, h, s).unwrap();
        prop_assert!((got - lambda * lambda * base).abs() <= 1e-12 * (1.0 + got.abs()));
    }

    #[test]
    fn seminorm_ignores_constants(c in -3.0f64..3.0, s in 0.05f64..0.95) {
        let (q, h) = power(0.1, 0.3, 256);
        let shifted: Vec<f64> = q.iter().map(|v| v + c).collect();
        let a = gagliardo_seminorm(&q, h, s).unwrap();
        let b = gagliardo_seminorm(&shifted, h, s).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn estimator_is_scale_invariant(lambda in 1e-3f64..1e3, r in 0.1f64..0.45) {
        let (q, h) = power(0.3, r, 4096);
        let scaled: Vec<f64> = q.iter().map(|v| lambda * v).collect();
        let a = s_star(&q, h).s_star;
        let b = s_star(&scaled, h).s_star;
        prop_assert!((a - b).abs() <= 1e-6, "{} vs {}", a, b);
    }
}
