//! Explicit leading-order field for a boundary probe f launched at x = 0:
//! incident wave f(t − x), reflected wave f₂(t + x) with its mirror image at
//! the boundary, and transmitted wave f₃(t − x/k) cut off before x = b.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::medium::{coefficient_slopes, CharMaps, MediumError, MediumSpec};
use crate::probe::{gauss_nodes, MappedCell, ProbeSignal};

#[derive(Debug, Error)]
pub enum AnsatzError {
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error("cutoff width {eps} outside (0, {max}]")]
    BadEpsilon { eps: f64, max: f64 },
    #[error("point (t = {t}, x = {x}) outside [0, {horizon}] x [0, {b}]")]
    OutOfDomain { t: f64, x: f64, horizon: f64, b: f64 },
}

/// Φ_ε: equal to 1 on [0, ε/2], 0 beyond ε, quintic smoothstep in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub eps: f64,
}

impl Cutoff {
    fn local(&self, x: f64) -> Option<f64> {
        let h = 0.5 * self.eps;
        let u = (x - h) / h;
        if u <= 0.0 || u >= 1.0 {
            None
        } else {
            Some(u)
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.local(x) {
            Some(u) => 1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u),
            None if x <= 0.5 * self.eps => 1.0,
            None => 0.0,
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self.local(x) {
            Some(u) => -30.0 * u * u * (1.0 - u) * (1.0 - u) / (0.5 * self.eps),
            None => 0.0,
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self.local(x) {
            Some(u) => {
                let h = 0.5 * self.eps;
                -60.0 * u * (1.0 - u) * (1.0 - 2.0 * u) / (h * h)
            }
            None => 0.0,
        }
    }
}

/// Boundary trace of the ansatz on the uniform μ-grid μ_i = i·dt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSignal {
    pub samples: Vec<f64>,
    pub dt: f64,
    pub mu0: f64,
}

#[derive(Debug, Clone)]
pub struct AnsatzField {
    pub medium: MediumSpec,
    pub probe: ProbeSignal,
    pub epsilon: f64,
    pub cutoff: Cutoff,
    maps: CharMaps,
    mu0: f64,
    nu0: f64,
}

/// Default cutoff width: 0.4 · min_t min(a, b − a).
pub fn default_epsilon(medium: &MediumSpec) -> f64 {
    0.8 * medium.delta()
}

impl AnsatzField {
    pub fn new(
        medium: MediumSpec,
        probe: ProbeSignal,
        epsilon: Option<f64>,
    ) -> Result<Self, AnsatzError> {
        medium.require_h1d()?;
        let max = medium.delta();
        let eps = epsilon.unwrap_or_else(|| default_epsilon(&medium));
        if !(eps > 0.0 && eps <= max) {
            return Err(AnsatzError::BadEpsilon { eps, max });
        }
        let maps = CharMaps::new(medium.clone());
        let t0 = maps.xi_inv(0.0)?;
        let mu0 = maps.mu(t0);
        let nu0 = maps.nu(t0);
        Ok(Self {
            medium,
            probe,
            epsilon: eps,
            cutoff: Cutoff { eps },
            maps,
            mu0,
            nu0,
        })
    }

    pub fn maps(&self) -> &CharMaps {
        &self.maps
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    fn f(&self, s: f64) -> f64 {
        self.probe.value_at(s)
    }

    fn df(&self, s: f64) -> f64 {
        self.probe.derivative_at(s)
    }

    /// (A(t), dA/dμ) with A = α dμ/dξ.
    fn reflected_amp(&self, t: f64) -> (f64, f64) {
        let tr = &self.medium.trajectory;
        let v = tr.velocity(t);
        let c = self.medium.reflection_coeffs(t);
        let (da, _) = coefficient_slopes(self.medium.k, v);
        (c.alpha * c.dmu_dxi, da * tr.acceleration(t) / (1.0 + v))
    }

    fn transmitted_amp(&self, t: f64) -> (f64, f64) {
        let tr = &self.medium.trajectory;
        let v = tr.velocity(t);
        let c = self.medium.reflection_coeffs(t);
        let (_, db) = coefficient_slopes(self.medium.k, v);
        let k = self.medium.k;
        (c.beta * c.dnu_dxi, db * tr.acceleration(t) / (1.0 - v / k))
    }

    /// f₂(μ) = α dμ/dξ f(ξ), zero before the first echo.
    pub fn f2_at(&self, m: f64) -> Result<f64, AnsatzError> {
        if m < self.mu0 {
            return Ok(0.0);
        }
        let t = self.maps.mu_inv(m)?;
        Ok(self.reflected_amp(t).0 * self.f(self.maps.xi(t)))
    }

    /// f₂′(μ) = d(α dμ/dξ)/dμ f(ξ) + α f′(ξ).
    pub fn df2_at(&self, m: f64) -> Result<f64, AnsatzError> {
        if m < self.mu0 {
            return Ok(0.0);
        }
        let t = self.maps.mu_inv(m)?;
        let (_, dam) = self.reflected_amp(t);
        let xi = self.maps.xi(t);
        let alpha = self.medium.reflection_coeffs(t).alpha;
        Ok(dam * self.f(xi) + alpha * self.df(xi))
    }

    pub fn f3_at(&self, n: f64) -> Result<f64, AnsatzError> {
        if n < self.nu0 {
            return Ok(0.0);
        }
        let t = self.maps.nu_inv(n)?;
        Ok(self.transmitted_amp(t).0 * self.f(self.maps.xi(t)))
    }

    pub fn df3_at(&self, n: f64) -> Result<f64, AnsatzError> {
        if n < self.nu0 {
            return Ok(0.0);
        }
        let t = self.maps.nu_inv(n)?;
        let (_, dbn) = self.transmitted_amp(t);
        let xi = self.maps.xi(t);
        let beta = self.medium.reflection_coeffs(t).beta;
        Ok(dbn * self.f(xi) + beta * self.df(xi))
    }

    fn check(&self, t: f64, x: f64) -> Result<(), AnsatzError> {
        let (h, b) = (self.medium.horizon, self.medium.b);
        if (0.0..=h).contains(&t) && (0.0..=b).contains(&x) {
            Ok(())
        } else {
            Err(AnsatzError::OutOfDomain {
                t,
                x,
                horizon: h,
                b,
            })
        }
    }

    fn psi(&self) -> impl Fn(f64) -> (f64, f64, f64) + '_ {
        let shift = self.medium.b - 2.0 * self.epsilon;
        move |x| {
            let y = x - shift;
            (self.cutoff.value(y), self.cutoff.d1(y), self.cutoff.d2(y))
        }
    }

    fn left_of_interface(&self, t: f64, x: f64) -> bool {
        x < self.medium.trajectory.position(t)
    }

    /// u_A(t, x).
    pub fn eval(&self, t: f64, x: f64) -> Result<f64, AnsatzError> {
        self.check(t, x)?;
        if self.left_of_interface(t, x) {
            self.left_value(t, x)
        } else {
            self.right_value(t, x)
        }
    }

    fn left_value(&self, t: f64, x: f64) -> Result<f64, AnsatzError> {
        Ok(self.f(t - x) + self.f2_at(t + x)? - self.f2_at(t - x)? * self.cutoff.value(x))
    }

    fn right_value(&self, t: f64, x: f64) -> Result<f64, AnsatzError> {
        let (p, _, _) = self.psi()(x);
        if p == 0.0 {
            return Ok(0.0);
        }
        Ok(p * self.f3_at(t - x / self.medium.k)?)
    }

    /// (∂ₜu_A, ∂ₓu_A) from the closed-form derivatives of each wave.
    pub fn gradient(&self, t: f64, x: f64) -> Result<(f64, f64), AnsatzError> {
        self.check(t, x)?;
        if self.left_of_interface(t, x) {
            self.left_gradient(t, x)
        } else {
            self.right_gradient(t, x)
        }
    }

    fn left_gradient(&self, t: f64, x: f64) -> Result<(f64, f64), AnsatzError> {
        let (ph, dph) = (self.cutoff.value(x), self.cutoff.d1(x));
        let d_in = self.df(t - x);
        let d_up = self.df2_at(t + x)?;
        let d_dn = self.df2_at(t - x)?;
        let ut = d_in + d_up - d_dn * ph;
        let ux = -d_in + d_up + d_dn * ph - self.f2_at(t - x)? * dph;
        Ok((ut, ux))
    }

    fn right_gradient(&self, t: f64, x: f64) -> Result<(f64, f64), AnsatzError> {
        let k = self.medium.k;
        let (p, dp, _) = self.psi()(x);
        let n = t - x / k;
        let d3 = self.df3_at(n)?;
        Ok((p * d3, dp * self.f3_at(n)? - p * d3 / k))
    }

    /// [∂ₓu_A] across x = a(t), right minus left.
    pub fn ux_jump(&self, t: f64) -> Result<f64, AnsatzError> {
        let x = self.medium.trajectory.position(t);
        Ok(self.right_gradient(t, x)?.1 - self.left_gradient(t, x)?.1)
    }

    /// Full weight of δ_{a(t)} in L u_A, so that L u_A = F₁ − w(t) δ_{a(t)}.
    /// Besides the flux jump τ f(ξ) it carries ȧ [∂ₜu_A] = −ȧ² [∂ₓu_A], the
    /// contribution of the moving kink of ∂ₜu_A to the second time derivative.
    pub fn interface_weight(&self, t: f64) -> Result<f64, AnsatzError> {
        let v = self.medium.trajectory.velocity(t);
        Ok(self.flux_jump(t) - v * v * self.ux_jump(t)?)
    }

    /// Smooth part F₁ of L u_A; the interface contributes −τ f(ξ) δ_{a(t)} on top.
    pub fn residual_f1(&self, t: f64, x: f64) -> Result<f64, AnsatzError> {
        self.check(t, x)?;
        if self.left_of_interface(t, x) {
            let (d1, d2) = (self.cutoff.d1(x), self.cutoff.d2(x));
            if d1 == 0.0 && d2 == 0.0 {
                return Ok(0.0);
            }
            Ok(d2 * self.f2_at(t - x)? - 2.0 * d1 * self.df2_at(t - x)?)
        } else {
            let k = self.medium.k;
            let (_, d1, d2) = self.psi()(x);
            if d1 == 0.0 && d2 == 0.0 {
                return Ok(0.0);
            }
            let n = t - x / k;
            Ok(-k * k * d2 * self.f3_at(n)? + 2.0 * k * d1 * self.df3_at(n)?)
        }
    }

    /// Flux jump [γ ∂ₓu_A] across x = a(t) predicted by τ: τ(t) f(ξ(t)).
    pub fn flux_jump(&self, t: f64) -> f64 {
        self.medium.jump_tau(t) * self.f(self.maps.xi(t))
    }

    fn grid_len(&self) -> usize {
        self.probe.samples.len()
    }

    /// f₂ on μ_i = i·dt.
    pub fn transform_f2(&self) -> Result<Vec<f64>, AnsatzError> {
        let dt = self.probe.dt;
        (0..self.grid_len())
            .into_par_iter()
            .map(|i| self.f2_at(i as f64 * dt))
            .collect()
    }

    /// f₃ on ν_i = i·dt.
    pub fn transform_f3(&self) -> Result<Vec<f64>, AnsatzError> {
        let dt = self.probe.dt;
        (0..self.grid_len())
            .into_par_iter()
            .map(|i| self.f3_at(i as f64 * dt))
            .collect()
    }

    /// Average of f∘ξ over the μ-cell [lo, hi].
    fn mu_cell_average(&self, lo: f64, hi: f64) -> Result<f64, AnsatzError> {
        if hi <= self.mu0 {
            return Ok(0.0);
        }
        let g = gauss_nodes();
        let mut nodes = [0.0; 6];
        for (n, u) in nodes.iter_mut().zip(g) {
            *n = self.maps.xi_of_mu(lo + (hi - lo) * u)?;
        }
        let cell = MappedCell {
            lo: self.maps.xi_of_mu(lo)?,
            hi: self.maps.xi_of_mu(hi)?,
            nodes,
        };
        Ok(self.probe.cell_average(&cell))
    }

    /// g_A(μ_i) = 2α f′(ξ), with f′ the grid-scale difference quotient of f∘ξ
    /// in μ rescaled by dμ/dξ; zero while the cell ahead lies before μ₀.
    pub fn trace(&self) -> Result<TraceSignal, AnsatzError> {
        let dt = self.probe.dt;
        let n = self.grid_len();
        let cells: Vec<f64> = (0..=n)
            .into_par_iter()
            .map(|i| {
                let hi = i as f64 * dt;
                self.mu_cell_average(hi - dt, hi)
            })
            .collect::<Result<_, _>>()?;
        let samples = (0..n)
            .into_par_iter()
            .map(|i| {
                let m = i as f64 * dt;
                // The difference at μ_i reaches into the cell [μ_i, μ_i + dt].
                if m + dt <= self.mu0 {
                    return Ok(0.0);
                }
                let t = self.maps.mu_inv(m)?;
                let c = self.medium.reflection_coeffs(t);
                Ok(2.0 * c.alpha * c.dmu_dxi * (cells[i + 1] - cells[i]) / dt)
            })
            .collect::<Result<Vec<f64>, AnsatzError>>()?;
        Ok(TraceSignal {
            samples,
            dt,
            mu0: self.mu0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{InterfaceTrajectory, TrajectoryKind};
    use crate::probe::{build_probe, smooth_pulse, GSpec};

    fn constant() -> MediumSpec {
        MediumSpec::new(1.0, 2.0, 2.0, InterfaceTrajectory::constant(0.5, 2.0).unwrap()).unwrap()
    }

    fn sinus() -> MediumSpec {
        let tr = InterfaceTrajectory::new(
            TrajectoryKind::Sinusoidal {
                a0: 0.5,
                amplitude: 0.1,
                omega: std::f64::consts::PI,
                phase: 0.3,
            },
            2.0,
        )
        .unwrap();
        MediumSpec::new(1.0, 2.0, 2.0, tr).unwrap()
    }

    fn pulse() -> ProbeSignal {
        smooth_pulse(0.3, 0.005, 1.0, 0.4, 2.0, 1e-3).unwrap()
    }

    #[test]
    fn cutoff_plateaus_and_derivatives() {
        let c = Cutoff { eps: 0.2 };
        assert_eq!(c.value(0.05), 1.0);
        assert_eq!(c.value(0.25), 0.0);
        assert!((c.value(0.15) - 0.5).abs() < 1e-15);
        let h = 1e-6;
        for x in [0.11, 0.13, 0.17, 0.19] {
            let d = (c.value(x + h) - c.value(x - h)) / (2.0 * h);
            assert!((d - c.d1(x)).abs() < 1e-6);
            let dd = (c.d1(x + h) - c.d1(x - h)) / (2.0 * h);
            assert!((dd - c.d2(x)).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_interface_closed_forms() {
        let a = AnsatzField::new(constant(), pulse(), None).unwrap();
        for m in [1.1, 1.3, 1.7] {
            let want = -pulse().value_at(m - 1.0) / 3.0;
            assert!((a.f2_at(m).unwrap() - want).abs() < 1e-12);
            let want3 = 2.0 / 3.0 * pulse().value_at(m - 0.25);
            assert!((a.f3_at(m).unwrap() - want3).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_probe_gives_zero_field() {
        let zero = smooth_pulse(0.3, 0.005, 0.0, 0.4, 2.0, 1e-2).unwrap();
        let a = AnsatzField::new(sinus(), zero, None).unwrap();
        assert!(a.transform_f2().unwrap().iter().all(|v| *v == 0.0));
        assert!(a.transform_f3().unwrap().iter().all(|v| *v == 0.0));
        assert!(a.trace().unwrap().samples.iter().all(|v| *v == 0.0));
        assert_eq!(a.residual_f1(1.4, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn sinusoidal_f2_spot_checks() {
        let m = sinus();
        let a = AnsatzField::new(m.clone(), pulse(), None).unwrap();
        let tr = &m.trajectory;
        for t in [0.7, 0.9, 1.1, 1.3, 1.5] {
            let (pos, v) = (tr.position(t), tr.velocity(t));
            let alpha = (1.0 - 2.0 + 1.5 * v) / (3.0 + 1.5 * v);
            let dmu = (1.0 + v) / (1.0 - v);
            let want = alpha * dmu * pulse().value_at(t - pos);
            let got = a.f2_at(t + pos).unwrap();
            assert!((got - want).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn continuity_across_interface() {
        let m = sinus();
        let a = AnsatzField::new(m.clone(), pulse(), None).unwrap();
        for i in 0..20 {
            let t = 0.2 + 0.09 * i as f64;
            let x = m.trajectory.position(t);
            let l = a.left_value(t, x).unwrap();
            let r = a.right_value(t, x).unwrap();
            assert!((l - r).abs() < 1e-10, "t={t}: {l} vs {r}");
        }
    }

    #[test]
    fn vanishes_near_far_end() {
        let a = AnsatzField::new(sinus(), pulse(), None).unwrap();
        let e = a.epsilon;
        for t in [0.5, 1.0, 1.9] {
            assert_eq!(a.eval(t, 1.0 - 0.4 * e).unwrap(), 0.0);
        }
    }

    #[test]
    fn incident_only_before_first_echo() {
        let a = AnsatzField::new(sinus(), pulse(), None).unwrap();
        let t = 0.6 * a.mu0();
        let x = 0.9 * a.epsilon;
        assert_eq!(a.eval(t, x).unwrap(), pulse().value_at(t - x));
    }

    #[test]
    fn residual_support() {
        let a = AnsatzField::new(sinus(), pulse(), None).unwrap();
        let e = a.epsilon;
        let mut hit = 0;
        for i in 0..200 {
            let t = 0.01 * i as f64;
            for j in 0..100 {
                let x = j as f64 / 99.0;
                let v = a.residual_f1(t, x).unwrap();
                if x <= 0.5 * e || (x >= e && x <= 1.0 - 1.5 * e) || x >= 1.0 - e {
                    assert_eq!(v, 0.0, "t={t} x={x}");
                }
                if v != 0.0 {
                    hit += 1;
                }
            }
        }
        assert!(hit > 0);
    }

    #[test]
    fn trace_zero_before_first_echo() {
        let probe = build_probe(&GSpec::default(), 0.4, 2.0, 1.0 / 1024.0).unwrap();
        let a = AnsatzField::new(sinus(), probe, None).unwrap();
        let g = a.trace().unwrap();
        let cut = ((a.mu0() - 2.0 * g.dt) / g.dt).floor() as usize;
        assert!(g.samples[..cut].iter().all(|v| *v == 0.0));
        assert!(g.samples[cut + 8..].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn constant_interface_trace_of_pulse() {
        let p = pulse();
        let a = AnsatzField::new(constant(), p.clone(), None).unwrap();
        let g = a.trace().unwrap();
        for i in [1100, 1250, 1300, 1400] {
            let m = i as f64 * g.dt;
            let want = -2.0 / 3.0 * p.derivative_at(m - 1.0);
            let scale = 2.0 / 3.0 * (2.0 / 0.005f64).sqrt();
            assert!((g.samples[i] - want).abs() < 1e-3 * scale, "mu={m}");
        }
    }
}
