use std::f64::consts::PI;

use echolab_core::ansatz::AnsatzField;
use echolab_core::medium::{InterfaceTrajectory, MediumSpec, TrajectoryKind};
use echolab_core::probe::{smooth_pulse, ProbeSignal};
use echolab_core::solver::*;
use proptest::prelude::*;

const DT: f64 = 1e-3;

fn static_medium(k: f64, horizon: f64) -> MediumSpec {
    MediumSpec::new(1.0, k, horizon, InterfaceTrajectory::constant(0.5, horizon).unwrap()).unwrap()
}

fn moving_medium(k: f64) -> MediumSpec {
    let tr = InterfaceTrajectory::new(
        TrajectoryKind::Sinusoidal {
            a0: 0.5,
            amplitude: 0.1,
            omega: PI,
            phase: 0.3,
        },
        2.0,
    )
    .unwrap();
    MediumSpec::new(1.0, k, 2.0, tr).unwrap()
}

fn pulse(horizon: f64) -> ProbeSignal {
    smooth_pulse(0.3, 0.005, 1.0, 0.4, horizon, DT).unwrap()
}

fn solve(m: &MediumSpec, n: usize, p: ProbeSignal) -> (LiftedProblem, Trajectory) {
    let basis = SpectralBasis::new(n, m.b).unwrap();
    let l = lift(m, basis, p, None, None).unwrap();
    let sub = substeps_for(m, &basis, DT);
    let tr = integrate(m, &l, DT / sub as f64, sub).unwrap();
    (l, tr)
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Low-mode data: sin(πx/b) and a bump, sampled densely.
fn smooth_data(basis: &SpectralBasis) -> (Vec<f64>, Vec<f64>) {
    let m = 8 * basis.n + 1;
    let h = basis.b / (m - 1) as f64;
    let u0: Vec<f64> = (0..m).map(|i| (PI * i as f64 * h / basis.b).sin()).collect();
    let u1: Vec<f64> = (0..m)
        .map(|i| {
            let x = i as f64 * h;
            (x * (basis.b - x)).powi(3) * 10.0
        })
        .collect();
    (project(basis, &u0).unwrap(), project(basis, &u1).unwrap())
}

#[test]
fn static_energy_is_conserved() {
    let m = static_medium(2.0, 2.0);
    let basis = SpectralBasis::new(64, 1.0).unwrap();
    let (v0, v1) = smooth_data(&basis);
    let l = LiftedProblem::free(basis, v0, v1).unwrap();
    let tr = integrate(&m, &l, 2.5e-5, 40).unwrap();
    let audit = energy_audit(&m, &l, &tr).unwrap();
    assert!(audit.max_relative_drift < 1e-6, "drift {}", audit.max_relative_drift);
    assert_eq!(audit.gronwall_constant, 1.0);
}

#[test]
fn moving_energy_stays_under_envelope() {
    let m = moving_medium(0.5);
    let basis = SpectralBasis::new(48, 1.0).unwrap();
    let (v0, v1) = smooth_data(&basis);
    let l = LiftedProblem::free(basis, v0, v1).unwrap();
    let sub = substeps_for(&m, &basis, DT);
    let tr = integrate(&m, &l, DT / sub as f64, sub).unwrap();
    let audit = energy_audit(&m, &l, &tr).unwrap();
    assert!(audit.bounded());
    assert!(audit.gronwall_constant > 1.0);
    // The motion does change the energy.
    assert!(audit.max_relative_drift > 1e-4);
}

#[test]
fn forced_energy_stays_under_envelope() {
    let m = moving_medium(2.0);
    let (l, tr) = solve(&m, 64, pulse(2.0));
    let audit = energy_audit(&m, &l, &tr).unwrap();
    assert!(audit.bounded());
}

#[test]
fn integrator_is_reversible() {
    let m = static_medium(2.0, 1.0);
    let basis = SpectralBasis::new(64, 1.0).unwrap();
    let (v0, v1) = smooth_data(&basis);
    let l = LiftedProblem::free(basis, v0.clone(), v1.clone()).unwrap();
    let dt = 0.5 * stability_limit(2.0, &basis);
    let steps = (1.0 / dt) as usize;
    let mut st = Stepper::new(&m, &l);
    let mut s = SpectralState { t: 0.0, v: v0.clone(), vdot: v1.clone() };
    for _ in 0..steps {
        st.step(&mut s, dt);
    }
    for _ in 0..steps {
        st.step(&mut s, -dt);
    }
    let err = s
        .v
        .iter()
        .zip(&v0)
        .chain(s.vdot.iter().zip(&v1))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-8, "{err}");
}

#[test]
fn trace_vanishes_before_first_echo() {
    let m = static_medium(2.0, 2.0);
    let (l, tr) = solve(&m, 256, pulse(2.0));
    let g = measure_g(&tr, TraceFilter::default(), l.a_m);
    let mu0 = m.mu0().unwrap();
    let cut = ((mu0 - 5.0 * DT) / DT) as usize;
    let early = l2(&g.samples[..cut]);
    assert!(early < 1e-3 * l2(&g.samples), "{early}");
}

#[test]
fn echo_arrivals_follow_travel_times() {
    let horizon = 3.0;
    let m = static_medium(2.0, horizon);
    let p = pulse(horizon);
    let (l, tr) = solve(&m, 256, p.clone());
    let g = measure_g(&tr, TraceFilter::default(), l.a_m);
    let echoes = image_echoes(&m).unwrap();
    let mut arrivals: Vec<f64> = echoes.iter().map(|e| e.delay).collect();
    arrivals.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    // 2a, 2a + 2(b − a)/k, 2a + 4(b − a)/k, ...
    for (i, t) in arrivals.iter().take(3).enumerate() {
        assert!((t - (1.0 + 0.5 * i as f64)).abs() < 1e-12);
    }
    let mut checked = 0;
    for t in arrivals.iter().filter(|t| **t + 0.3 + 0.15 < horizon) {
        let (lag, _) = fit_echo(&g, &p, t - 0.1, t + 0.1, t + 0.15, t + 0.45);
        assert!((lag - t).abs() <= 2.0 * DT + 1e-12, "arrival {t}, fitted {lag}");
        checked += 1;
    }
    assert!(checked >= 3);
}

#[test]
fn galerkin_error_halves_with_resolution() {
    let m = static_medium(2.0, 2.0);
    let trs: Vec<Trajectory> = [64, 128, 256, 512].iter().map(|&n| solve(&m, n, pulse(2.0)).1).collect();
    // L²(Ω_T) distance between consecutive resolutions, by Parseval.
    let dist: Vec<f64> = trs
        .windows(2)
        .map(|w| {
            let mut s = 0.0;
            for (a, b) in w[0].states.iter().zip(&w[1].states) {
                for (j, y) in b.v.iter().enumerate() {
                    s += (a.v.get(j).copied().unwrap_or(0.0) - y).powi(2);
                }
            }
            (s * DT).sqrt()
        })
        .collect();
    for w in dist.windows(2) {
        assert!(w[0] / w[1] >= 2.0, "distances {dist:?}");
    }
}

#[test]
fn solver_tracks_ansatz_trace() {
    let m = moving_medium(2.0);
    let ga = AnsatzField::new(m.clone(), pulse(2.0), None).unwrap().trace().unwrap();
    let end = ((ga.mu0 + 0.3 * (m.horizon - ga.mu0)) / DT) as usize;
    let norm = l2(&ga.samples[..end]);
    let rel: Vec<f64> = [128, 256, 512]
        .iter()
        .map(|&n| {
            let (l, tr) = solve(&m, n, pulse(2.0));
            let g = measure_g(&tr, TraceFilter::default(), l.a_m);
            let d: Vec<f64> = (0..end).map(|i| g.samples[i] - ga.samples[i]).collect();
            l2(&d) / norm
        })
        .collect();
    assert!(rel[2] <= 0.10, "{rel:?}");
    assert!(rel[0] > rel[1] && rel[1] > rel[2], "{rel:?}");
}

#[test]
fn duality_pairing_matches_trace() {
    let m = moving_medium(2.0);
    let (l, tr) = solve(&m, 256, pulse(2.0));
    let g = measure_g(&tr, TraceFilter::default(), l.a_m);
    // Smooth bumps centred on the first and second echoes.
    for (c, r) in [(1.45, 0.2), (1.6, 0.3)] {
        let phi = |t: f64| {
            let y = (t - c) / r;
            if y.abs() >= 1.0 {
                (0.0, 0.0)
            } else {
                let cz = (0.5 * PI * y).cos();
                let sz = (0.5 * PI * y).sin();
                (cz.powi(4), -4.0 * cz.powi(3) * sz * 0.5 * PI / r)
            }
        };
        let direct: f64 = g
            .samples
            .iter()
            .enumerate()
            .map(|(i, v)| v * phi(i as f64 * DT).0)
            .sum::<f64>()
            * DT;
        let dual = duality_pairing(&l, &tr, phi);
        assert!(
            (direct - dual).abs() <= 0.02 * direct.abs().max(1e-3),
            "{direct} vs {dual}"
        );
    }
}

#[test]
fn lifting_residual_vanishes_weakly() {
    // ∫∫ u_in (φ_tt − φ_xx) + F φ = 0 for u_in = f(t − x)Φ(x), γ = 1 near x = 0.
    let m = static_medium(2.0, 2.0);
    let p = pulse(2.0);
    let basis = SpectralBasis::new(16, 1.0).unwrap();
    let l = lift(&m, basis, p.clone(), None, None).unwrap();
    let phi = l.phi();
    let nodes = echolab_core::probe::gauss_nodes();
    let weights = echolab_core::probe::gauss_weights();
    for (tc, xc) in [(0.4, 0.3), (0.5, 0.35), (0.45, 0.25), (0.6, 0.4), (0.35, 0.28)]
        .iter()
        .flat_map(|&(t, x)| [(t, x), (t + 0.05, x - 0.03)])
    {
        let (rt, rx) = (0.15, 0.12);
        let bump = |s: f64| if s.abs() >= 1.0 { 0.0 } else { (0.5 * PI * s).cos().powi(6) };
        let d2bump = |s: f64| {
            if s.abs() >= 1.0 {
                return 0.0;
            }
            let w = 0.5 * PI;
            let (c, sn) = ((w * s).cos(), (w * s).sin());
            w * w * (30.0 * c.powi(4) * sn * sn - 6.0 * c.powi(6))
        };
        let panels = 60;
        let mut total = 0.0;
        let mut scale = 0.0;
        for pt in 0..panels {
            for (nt, wt) in nodes.iter().zip(weights) {
                let st = -1.0 + 2.0 * (pt as f64 + nt) / panels as f64;
                let t = tc + rt * st;
                for px in 0..panels {
                    for (nx, wx) in nodes.iter().zip(weights) {
                        let sx = -1.0 + 2.0 * (px as f64 + nx) / panels as f64;
                        let x = xc + rx * sx;
                        let w = wt * wx * (2.0 * rt / panels as f64) * (2.0 * rx / panels as f64);
                        let u = p.shape.as_ref().unwrap().value(t - x) * phi.value(x);
                        let box_phi = d2bump(st) * bump(sx) / (rt * rt) - bump(st) * d2bump(sx) / (rx * rx);
                        let f = l.source(t, x) * bump(st) * bump(sx);
                        total += w * (u * box_phi + f);
                        scale += w * (u * box_phi).abs();
                    }
                }
            }
        }
        assert!(total.abs() < 1e-4 * scale.max(1.0), "({tc}, {xc}): {total}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stiffness_is_symmetric_positive(k in 0.3f64..3.0, a in 0.1f64..0.9, n in 2usize..24) {
        let m = static_medium(k, 1.0);
        let basis = SpectralBasis::new(n, 1.0).unwrap();
        let b = Stiffness::new(basis, m.k).dense(a);
        prop_assert!((&b - b.transpose()).amax() <= 1e-10 * b.amax());
        let floor = k.min(1.0).powi(2) * basis.lambda(1);
        prop_assert!(b.symmetric_eigenvalues().min() >= floor - 1e-9 * b.amax());
    }

    #[test]
    fn reversibility_holds_for_random_data(k in 0.4f64..2.5, seed in 0u64..1000) {
        let m = static_medium(k, 1.0);
        let basis = SpectralBasis::new(12, 1.0).unwrap();
        let v0: Vec<f64> = (0..12).map(|j| (((seed + 1) * (j as u64 + 3)) % 17) as f64 / 17.0 - 0.5).collect();
        let v1: Vec<f64> = v0.iter().rev().cloned().collect();
        let l = LiftedProblem::free(basis, v0.clone(), v1.clone()).unwrap();
        let dt = stability_limit(k, &basis);
        let mut st = Stepper::new(&m, &l);
        let mut s = SpectralState { t: 0.0, v: v0.clone(), vdot: v1.clone() };
        for _ in 0..200 { st.step(&mut s, dt); }
        for _ in 0..200 { st.step(&mut s, -dt); }
        for (a, b) in s.v.iter().zip(&v0) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
