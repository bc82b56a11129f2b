use echolab_core::ansatz::AnsatzField;
use echolab_core::inversion::*;
use echolab_core::medium::*;
use echolab_core::probe::*;
use echolab_core::solver::Measurement;
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};

const T: f64 = 2.0;
const R0: f64 = 0.4;

fn dt() -> f64 {
    T / (1usize << 14) as f64
}

fn medium(kind: TrajectoryKind, k: f64) -> MediumSpec {
    let tr = InterfaceTrajectory::new(kind, T).unwrap();
    MediumSpec::new(1.0, k, T, tr).unwrap()
}

fn probe() -> ProbeSignal {
    build_probe(&GSpec::default(), R0, T, dt()).unwrap()
}

fn trace(m: &MediumSpec, p: &ProbeSignal) -> Measurement {
    AnsatzField::new(m.clone(), p.clone(), None)
        .unwrap()
        .trace()
        .unwrap()
        .into()
}

fn constant() -> TrajectoryKind {
    TrajectoryKind::Constant { a0: 0.5 }
}

fn slow_sine() -> TrajectoryKind {
    TrajectoryKind::Sinusoidal {
        a0: 0.5,
        amplitude: 0.1,
        omega: FRAC_PI_2,
        phase: FRAC_PI_2,
    }
}

fn measurement(samples: Vec<f64>) -> Measurement {
    let mut g: Measurement = trace(&medium(constant(), 2.0), &probe());
    g.samples = samples;
    g
}

#[test]
fn zero_signal_never_reaches_the_interface() {
    let cfg = InversionConfig::default();
    let det = detect_mu0(&measurement(vec![0.0; 1 << 14]), R0, &cfg).unwrap();
    assert_eq!(det.verdict, Mu0Verdict::NotReached);
    assert!(det.mu0.is_none());
}

#[test]
fn smooth_signal_never_reaches_the_interface() {
    let n = 1usize << 14;
    let s: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * dt();
            (3.0 * t).sin() * (-(t - 1.0) * (t - 1.0)).exp()
        })
        .collect();
    let det = detect_mu0(&measurement(s), R0, &InversionConfig::default()).unwrap();
    assert_eq!(det.verdict, Mu0Verdict::NotReached);
}

#[test]
fn first_arrival_of_constant_interface() {
    let p = probe();
    let g = trace(&medium(constant(), 2.0), &p);
    let det = detect_mu0(&g, R0, &InversionConfig::default()).unwrap();
    assert_eq!(det.verdict, Mu0Verdict::Detected);
    let mu0 = det.mu0.unwrap();
    assert!((mu0 - 1.0).abs() <= 0.05, "mu0 {mu0}");
}

#[test]
fn short_measurement_is_rejected() {
    let r = detect_mu0(&measurement(vec![0.0; 16]), R0, &InversionConfig::default());
    assert!(matches!(r, Err(InversionError::TooShort { .. })), "{r:?}");
}

#[test]
fn constant_profile_is_a_unit_shift() {
    let p = probe();
    let g = trace(&medium(constant(), 2.0), &p);
    let pr = xi_profile(&g, R0, T, Some(&p), &InversionConfig::default()).unwrap();
    let mut seen = 0;
    for (mu, xi) in pr.mu.iter().zip(&pr.xi) {
        if let Some(x) = xi {
            assert!((x - (mu - 1.0)).abs() <= 0.1, "mu {mu} xi {x}");
            assert!(*x < *mu);
            seen += 1;
        }
    }
    assert!(seen > pr.mu.len() / 2);
    let first = pr.xi[0].expect("first window estimated");
    assert!(first.abs() <= 0.05, "xi at mu0 {first}");
    for w in pr.xi.iter().flatten().collect::<Vec<_>>().windows(2) {
        assert!(w[1] >= w[0]);
    }
}

#[test]
fn sinusoidal_profile_tracks_characteristics() {
    let p = probe();
    let m = medium(slow_sine(), 2.0);
    let maps = CharMaps::new(m.clone());
    let g = trace(&m, &p);
    let pr = xi_profile(&g, R0, T, Some(&p), &InversionConfig::default()).unwrap();
    let worst = pr
        .mu
        .iter()
        .zip(&pr.xi)
        .filter_map(|(mu, x)| x.map(|x| (x - maps.xi_of_mu(*mu).unwrap()).abs()))
        .fold(0.0, f64::max);
    assert!(worst <= 0.1 * T, "max profile error {worst}");
    for a in &pr.anchors {
        let truth = maps.xi_of_mu(a.mu).unwrap();
        assert!((a.xi - truth).abs() <= 2.0 * dt(), "anchor {a:?} truth {truth}");
    }
}

#[test]
fn constant_trajectory_is_flat() {
    let p = probe();
    let g = trace(&medium(constant(), 2.0), &p);
    let pr = xi_profile(&g, R0, T, Some(&p), &InversionConfig::default()).unwrap();
    let tj = reconstruct_a(&pr, 101).unwrap();
    for (a, v) in tj.a.iter().zip(&tj.adot) {
        assert!((a - 0.5).abs() <= 0.02, "a {a}");
        assert!(v.abs() <= 0.05, "adot {v}");
    }
    for w in tj.t.windows(2) {
        assert!(w[1] > w[0]);
    }
    assert!((tj.t0 - pr.mu0 / 2.0).abs() <= 0.025);
}

#[test]
fn sinusoidal_trajectory_round_trip() {
    let p = probe();
    let m = medium(slow_sine(), 2.0);
    let g = trace(&m, &p);
    let pr = xi_profile(&g, R0, T, Some(&p), &InversionConfig::default()).unwrap();
    let tj = reconstruct_a(&pr, 201).unwrap();
    let worst = tj
        .t
        .iter()
        .zip(&tj.a)
        .map(|(t, a)| (a - m.trajectory.position(*t)).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 0.02 * m.b, "max |a - a_true| {worst}");
}

#[test]
fn single_anchor_profile_is_degenerate_but_valid() {
    let p = probe();
    let g = trace(&medium(constant(), 2.0), &p);
    let mut pr = xi_profile(&g, R0, T, Some(&p), &InversionConfig::default()).unwrap();
    pr.anchors.truncate(1);
    let tj = reconstruct_a(&pr, 101).unwrap();
    assert_eq!(tj.t0, tj.t_max);
    assert_eq!(tj.t.len(), 1);
    assert!((tj.a[0] - 0.5).abs() <= 0.02);
    pr.anchors.clear();
    assert!(matches!(reconstruct_a(&pr, 101), Err(InversionError::EmptyProfile)));
}

#[test]
fn alpha_of_static_interface() {
    let p = probe();
    let g = trace(&medium(constant(), 2.0), &p);
    let cfg = InversionConfig::default();
    let pr = xi_profile(&g, R0, T, Some(&p), &cfg).unwrap();
    let tj = reconstruct_a(&pr, 101).unwrap();
    let al = estimate_alpha(&g, &p, &pr, &tj, &cfg).unwrap();
    for a in &al.alpha {
        assert!((a + 1.0 / 3.0).abs() <= 0.02, "alpha {a}");
    }
}

#[test]
fn alpha_survives_smooth_perturbation() {
    let p = probe();
    let m = medium(slow_sine(), 2.0);
    let mut g = trace(&m, &p);
    let rms = (g.samples.iter().map(|v| v * v).sum::<f64>() / g.samples.len() as f64).sqrt();
    let dt = g.dt;
    for (i, v) in g.samples.iter_mut().enumerate() {
        *v += 0.1 * rms * (2.0 * PI * 1.5 * i as f64 * dt).sin();
    }
    let rep = invert(&g, &p, T, &InversionConfig::default()).unwrap();
    let r = rep.reconstruction.unwrap();
    for (t, a) in r.alpha.t.iter().zip(&r.alpha.alpha) {
        let truth = m.reflection_coeffs(*t).alpha;
        assert!((a - truth).abs() <= 0.05, "t {t} alpha {a} truth {truth}");
    }
}

#[test]
fn silent_probe_is_flagged() {
    let p = probe();
    let g = trace(&medium(constant(), 2.0), &p);
    let cfg = InversionConfig::default();
    let pr = xi_profile(&g, R0, T, Some(&p), &cfg).unwrap();
    let tj = reconstruct_a(&pr, 101).unwrap();
    let mut silent = p.clone();
    silent.samples.iter_mut().for_each(|v| *v = 0.0);
    silent.shape = None;
    let r = estimate_alpha(&g, &silent, &pr, &tj, &cfg);
    assert!(matches!(r, Err(InversionError::Degenerate(_))), "{r:?}");
}

#[test]
fn weak_contrast_trips_the_alpha_gate() {
    let p = probe();
    let g = trace(&medium(constant(), 1.03), &p);
    let r = invert(&g, &p, T, &InversionConfig::default());
    assert!(matches!(r, Err(InversionError::AlphaGate { .. })), "{r:?}");
}

#[test]
fn static_roots_in_closed_form() {
    for (alpha, k) in [(-1.0 / 3.0, 2.0), (-0.5, 3.0)] {
        let r = recover_k(&[1.0], &[alpha], &[0.0], 2e-3).unwrap();
        assert_eq!(r.verdict, RootVerdict::UniquePositive);
        assert!((r.k.unwrap() - k).abs() <= 1e-12);
        assert!((r.k.unwrap() - (1.0 - alpha) / (1.0 + alpha)).abs() <= 1e-12);
    }
}

#[test]
fn receding_interface_has_one_positive_root() {
    let c = coefficients(2.0, -0.2);
    let r = recover_k(&[1.0], &[c.alpha], &[-0.2], 2e-3).unwrap();
    assert_eq!(r.verdict, RootVerdict::UniquePositive);
    assert!((r.k.unwrap() - 2.0).abs() <= 1e-9);
}

fn round_trip(kind: TrajectoryKind, k: f64) {
    let p = probe();
    let m = medium(kind, k);
    let g = trace(&m, &p);
    let rep = invert(&g, &p, T, &InversionConfig::default()).unwrap();
    let r = rep.reconstruction.unwrap();
    let tj = &r.trajectory;
    let worst = tj
        .t
        .iter()
        .zip(&tj.a)
        .map(|(t, a)| (a - m.trajectory.position(*t)).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 0.02 * m.b, "max |a - a_true| {worst}");
    assert_eq!(r.roots.verdict, RootVerdict::UniquePositive);
    let kh = r.roots.k.unwrap();
    assert!((kh - k).abs() <= 0.01 * k, "k {kh}");
    let t0 = CharMaps::new(m.clone()).xi_inv(0.0).unwrap();
    assert!((r.mu0 - 2.0 * t0).abs() <= 0.05);
    assert!(r.roots.max_vieta_defect <= 1e-6);
}

#[test]
fn round_trip_constant() {
    round_trip(constant(), 2.0);
    round_trip(constant(), 0.5);
}

#[test]
fn round_trip_affine_receding() {
    round_trip(TrajectoryKind::Affine { a0: 0.6, slope: -0.1 }, 2.0);
    round_trip(TrajectoryKind::Affine { a0: 0.6, slope: -0.1 }, 0.5);
}

#[test]
fn round_trip_sinusoidal() {
    round_trip(slow_sine(), 2.0);
    round_trip(slow_sine(), 0.5);
}

#[test]
fn advancing_interface_is_ambiguous() {
    let p = probe();
    let kind = TrajectoryKind::Sinusoidal {
        a0: 0.5,
        amplitude: 0.1,
        omega: PI,
        phase: 0.3,
    };
    let g = trace(&medium(kind, 2.0), &p);
    let r = invert(&g, &p, T, &InversionConfig::default())
        .unwrap()
        .reconstruction
        .unwrap();
    assert_eq!(r.roots.verdict, RootVerdict::Ambiguous);
    assert!(r.roots.k.is_none());
    let s = r.roots.reference;
    assert!(s.adot > 0.0 && s.k1 > 0.0 && s.k2 > 0.0);
    assert!(s.residual(s.k1).abs() <= 1e-9 && s.residual(s.k2).abs() <= 1e-9);
}

proptest! {
    #[test]
    fn contrast_equation_recovers_k(k in 0.2f64..5.0, frac in -0.95f64..0.95) {
        let adot = frac * k.min(1.0);
        let c = coefficients(k, adot);
        let s = RootSample::solve(0.0, c.alpha, adot).unwrap();
        let scale = 1.0 + k;
        prop_assert!(s.residual(k).abs() <= 1e-12 * scale);
        let nearest = (s.k1 - k).abs().min((s.k2 - k).abs());
        prop_assert!(nearest <= 1e-9 * scale, "k {} roots {} {}", k, s.k1, s.k2);
        let vieta = s.k1 * s.k2 - adot * (s.k1 + s.k2);
        prop_assert!(vieta.abs() <= 1e-9 * (1.0 + (s.k1 * s.k2).abs()));
        if adot <= 0.0 {
            prop_assert!(s.k1 <= 1e-12);
        }
    }

    #[test]
    fn isotonic_is_monotone_projection(y in prop::collection::vec(-10.0f64..10.0, 1..60)) {
        let w = vec![1.0; y.len()];
        let f = isotonic(&y, &w);
        prop_assert_eq!(f.len(), y.len());
        for p in f.windows(2) {
            prop_assert!(p[1] >= p[0] - 1e-12);
        }
        let (sy, sf): (f64, f64) = (y.iter().sum(), f.iter().sum());
        prop_assert!((sy - sf).abs() <= 1e-9 * (1.0 + sy.abs()));
        let again = isotonic(&f, &w);
        for (a, b) in again.iter().zip(&f) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
