//! Galerkin solver in the Dirichlet sine basis. The boundary probe is lifted
//! into an interior source through u_in = f(t − x)Φ(x); the remainder v solves
//! V″ + B(t)V = F(t) and is advanced with a drift-kick-drift Verlet scheme.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ansatz::{Cutoff, TraceSignal};
use crate::medium::{MediumError, MediumSpec};
use crate::probe::{gauss_nodes, gauss_weights, ProbeSignal};

/// Safety factor in dt ≤ C_STAB / (max(1, k) √λ_N).
pub const C_STAB: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error("time step {dt} exceeds the stability limit {limit}")]
    Unstable { dt: f64, limit: f64 },
    #[error("initial data has {samples} samples, the basis needs at least {need}")]
    Resolution { samples: usize, need: usize },
    #[error("the image-series oracle needs a static interface")]
    NotStatic,
    #[error("invalid solver parameter: {0}")]
    InvalidParameter(String),
}

/// e_j(x) = √(2/b) sin(jπx/b), λ_j = (jπ/b)², j = 1..=n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    pub n: usize,
    pub b: f64,
}

impl SpectralBasis {
    pub fn new(n: usize, b: f64) -> Result<Self, SolverError> {
        if n == 0 || !(b > 0.0 && b.is_finite()) {
            return Err(SolverError::InvalidParameter(format!("n = {n}, b = {b}")));
        }
        Ok(Self { n, b })
    }

    pub fn theta(&self) -> f64 {
        PI / self.b
    }

    pub fn lambda(&self, j: usize) -> f64 {
        let w = j as f64 * self.theta();
        w * w
    }

    fn norm(&self) -> f64 {
        (2.0 / self.b).sqrt()
    }

    pub fn e(&self, j: usize, x: f64) -> f64 {
        self.norm() * (j as f64 * self.theta() * x).sin()
    }

    pub fn de(&self, j: usize, x: f64) -> f64 {
        let w = j as f64 * self.theta();
        self.norm() * w * (w * x).cos()
    }

    /// Σ_j c_j e_j(x).
    pub fn synthesize(&self, c: &[f64], x: f64) -> f64 {
        c.iter()
            .enumerate()
            .map(|(i, v)| v * self.e(i + 1, x))
            .sum()
    }
}

/// Matrix-free B(t): b_ij = k² λ_i δ_ij + (1 − k²) ∫₀^a e_i′ e_j′ dx, using
/// ∫₀^a cos(iθx) cos(jθx) dx = ½ [S(i − j) + S(i + j)], S(m) = sin(mθa)/(mθ).
#[derive(Debug, Clone)]
pub struct Stiffness {
    basis: SpectralBasis,
    k: f64,
    table: Vec<f64>,
    weighted: Vec<f64>,
}

impl Stiffness {
    pub fn new(basis: SpectralBasis, k: f64) -> Self {
        Self {
            basis,
            k,
            table: vec![0.0; 2 * basis.n + 1],
            weighted: vec![0.0; basis.n],
        }
    }

    fn fill(&mut self, a: f64) {
        let th = self.basis.theta();
        self.table[0] = a;
        for m in 1..self.table.len() {
            let w = m as f64 * th;
            self.table[m] = (w * a).sin() / w;
        }
    }

    /// out = B(a) v.
    pub fn apply(&mut self, a: f64, v: &[f64], out: &mut [f64]) {
        let n = self.basis.n;
        self.fill(a);
        let k2 = self.k * self.k;
        let th = self.basis.theta();
        let c = (1.0 - k2) * (2.0 / self.basis.b) * th * th * 0.5;
        for j in 0..n {
            self.weighted[j] = (j + 1) as f64 * v[j];
        }
        let s = &self.table;
        for i in 0..n {
            let ii = i + 1;
            let mut acc = 0.0;
            for (j, w) in self.weighted.iter().enumerate() {
                let jj = j + 1;
                acc += (s[ii.abs_diff(jj)] + s[ii + jj]) * w;
            }
            out[i] = k2 * self.basis.lambda(ii) * v[i] + c * ii as f64 * acc;
        }
    }

    pub fn dense(&mut self, a: f64) -> DMatrix<f64> {
        let n = self.basis.n;
        self.fill(a);
        let k2 = self.k * self.k;
        let th = self.basis.theta();
        let c = (1.0 - k2) * (2.0 / self.basis.b) * th * th * 0.5;
        DMatrix::from_fn(n, n, |i, j| {
            let (ii, jj) = (i + 1, j + 1);
            let diag = if i == j { k2 * self.basis.lambda(ii) } else { 0.0 };
            diag + c * (ii * jj) as f64 * (self.table[ii.abs_diff(jj)] + self.table[ii + jj])
        })
    }
}

/// B(t) as a dense symmetric matrix.
pub fn assemble_b(medium: &MediumSpec, basis: &SpectralBasis, t: f64) -> DMatrix<f64> {
    Stiffness::new(*basis, medium.k).dense(medium.trajectory.position(t))
}

/// Lifted problem: Φ = 1 on [0, a_m/2], smoothstep down to 0 at a_m.
#[derive(Debug, Clone)]
pub struct LiftedProblem {
    pub basis: SpectralBasis,
    pub a_m: f64,
    pub v0: Vec<f64>,
    pub v1: Vec<f64>,
    pub probe: Option<ProbeSignal>,
    nodes: Vec<f64>,
    /// Row j: w_m (−Φ″ e_j − 2 Φ′ e_j′)(x_m), so F_j(t) = Σ_m K_jm f(t − x_m).
    kernel: Vec<f64>,
}

impl LiftedProblem {
    pub fn phi(&self) -> Cutoff {
        Cutoff { eps: self.a_m }
    }

    /// F(t, x) = −2 f′(t − x) Φ′(x) + f(t − x) Φ″(x).
    pub fn source(&self, t: f64, x: f64) -> f64 {
        match &self.probe {
            None => 0.0,
            Some(p) => {
                let c = self.phi();
                -2.0 * p.derivative_at(t - x) * c.d1(x) + p.value_at(t - x) * c.d2(x)
            }
        }
    }

    /// Projected source F_N(t), integrated by parts so only f itself is sampled.
    pub fn forcing(&self, t: f64, out: &mut [f64]) {
        let p = match &self.probe {
            None => {
                out.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            Some(p) => p,
        };
        let fv: Vec<f64> = self.nodes.iter().map(|x| p.value_at(t - x)).collect();
        let m = self.nodes.len();
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.kernel[j * m..(j + 1) * m];
            *o = row.iter().zip(&fv).map(|(k, f)| k * f).sum();
        }
    }

    /// Homogeneous problem with the given coefficient data.
    pub fn free(basis: SpectralBasis, v0: Vec<f64>, v1: Vec<f64>) -> Result<Self, SolverError> {
        if v0.len() != basis.n || v1.len() != basis.n {
            return Err(SolverError::InvalidParameter(
                "coefficient vectors must have one entry per mode".into(),
            ));
        }
        Ok(Self {
            basis,
            a_m: 0.0,
            v0,
            v1,
            probe: None,
            nodes: Vec::new(),
            kernel: Vec::new(),
        })
    }
}

/// L² projection of samples on x_i = i b/(m − 1) by the trapezoid rule.
pub fn project(basis: &SpectralBasis, samples: &[f64]) -> Result<Vec<f64>, SolverError> {
    let need = 2 * basis.n + 1;
    if samples.len() < need {
        return Err(SolverError::Resolution {
            samples: samples.len(),
            need,
        });
    }
    let h = basis.b / (samples.len() - 1) as f64;
    Ok((1..=basis.n)
        .map(|j| {
            samples
                .iter()
                .enumerate()
                .map(|(i, u)| {
                    let w = if i == 0 || i + 1 == samples.len() { 0.5 } else { 1.0 };
                    w * u * basis.e(j, i as f64 * h)
                })
                .sum::<f64>()
                * h
        })
        .collect())
}

/// Builds the lifted problem. `u0`, `u1` default to zero; since f vanishes on
/// negative times the lifting leaves them unchanged.
pub fn lift(
    medium: &MediumSpec,
    basis: SpectralBasis,
    probe: ProbeSignal,
    u0: Option<&[f64]>,
    u1: Option<&[f64]>,
) -> Result<LiftedProblem, SolverError> {
    let report = medium.require_h1d()?;
    let a_m = 0.9 * report.min_a;
    let v0 = match u0 {
        Some(s) => project(&basis, s)?,
        None => vec![0.0; basis.n],
    };
    let v1 = match u1 {
        Some(s) => project(&basis, s)?,
        None => vec![0.0; basis.n],
    };
    // Gauss panels on the transition band [a_m/2, a_m].
    let panels = (basis.n / 2).max(64);
    let (lo, hi) = (0.5 * a_m, a_m);
    let h = (hi - lo) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * 6);
    let mut weights = Vec::with_capacity(panels * 6);
    for p in 0..panels {
        for (x, w) in gauss_nodes().iter().zip(gauss_weights()) {
            nodes.push(lo + h * (p as f64 + x));
            weights.push(w * h);
        }
    }
    let phi = Cutoff { eps: a_m };
    let m = nodes.len();
    let mut kernel = vec![0.0; basis.n * m];
    for j in 0..basis.n {
        for (i, (&x, &w)) in nodes.iter().zip(&weights).enumerate() {
            kernel[j * m + i] = w * (-phi.d2(x) * basis.e(j + 1, x) - 2.0 * phi.d1(x) * basis.de(j + 1, x));
        }
    }
    Ok(LiftedProblem {
        basis,
        a_m,
        v0,
        v1,
        probe: Some(probe),
        nodes,
        kernel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub t: f64,
    pub v: Vec<f64>,
    pub vdot: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<SpectralState>,
    pub dt_ode: f64,
    /// Spacing of the recorded states.
    pub record_dt: f64,
    pub basis: SpectralBasis,
}

/// Largest admissible Verlet step.
pub fn stability_limit(k: f64, basis: &SpectralBasis) -> f64 {
    C_STAB / (k.max(1.0) * basis.lambda(basis.n).sqrt())
}

/// Verlet stepper for V″ + B(t) V = F(t).
pub struct Stepper<'a> {
    medium: &'a MediumSpec,
    lifted: &'a LiftedProblem,
    stiff: Stiffness,
    force: Vec<f64>,
    bv: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(medium: &'a MediumSpec, lifted: &'a LiftedProblem) -> Self {
        let n = lifted.basis.n;
        Self {
            medium,
            lifted,
            stiff: Stiffness::new(lifted.basis, medium.k),
            force: vec![0.0; n],
            bv: vec![0.0; n],
        }
    }

    /// One drift-kick-drift step; a negative dt runs backwards.
    pub fn step(&mut self, s: &mut SpectralState, dt: f64) {
        let half = 0.5 * dt;
        for (v, w) in s.v.iter_mut().zip(&s.vdot) {
            *v += half * w;
        }
        let tm = s.t + half;
        let a = self.medium.trajectory.position(tm);
        self.stiff.apply(a, &s.v, &mut self.bv);
        self.lifted.forcing(tm, &mut self.force);
        for ((w, f), b) in s.vdot.iter_mut().zip(&self.force).zip(&self.bv) {
            *w += dt * (f - b);
        }
        for (v, w) in s.v.iter_mut().zip(&s.vdot) {
            *v += half * w;
        }
        s.t += dt;
    }

    /// ½|V̇|² + ½ Vᵀ B(t) V.
    pub fn energy(&mut self, s: &SpectralState) -> f64 {
        let a = self.medium.trajectory.position(s.t);
        self.stiff.apply(a, &s.v, &mut self.bv);
        let pot: f64 = s.v.iter().zip(&self.bv).map(|(v, b)| v * b).sum();
        let kin: f64 = s.vdot.iter().map(|w| w * w).sum();
        0.5 * (kin + pot)
    }
}

/// Smallest number of substeps per record interval that respects stability.
pub fn substeps_for(medium: &MediumSpec, basis: &SpectralBasis, record_dt: f64) -> usize {
    (record_dt / stability_limit(medium.k, basis)).ceil().max(1.0) as usize
}

/// Integrates from t = 0, recording every `substeps` steps of size `dt_ode`
/// up to the medium horizon.
pub fn integrate(
    medium: &MediumSpec,
    lifted: &LiftedProblem,
    dt_ode: f64,
    substeps: usize,
) -> Result<Trajectory, SolverError> {
    integrate_until(medium, lifted, dt_ode, substeps, medium.horizon)
}

pub fn integrate_until(
    medium: &MediumSpec,
    lifted: &LiftedProblem,
    dt_ode: f64,
    substeps: usize,
    horizon: f64,
) -> Result<Trajectory, SolverError> {
    let limit = stability_limit(medium.k, &lifted.basis);
    if !(dt_ode > 0.0) || dt_ode > limit * (1.0 + 1e-12) {
        return Err(SolverError::Unstable { dt: dt_ode, limit });
    }
    if substeps == 0 {
        return Err(SolverError::InvalidParameter("substeps must be positive".into()));
    }
    let record_dt = dt_ode * substeps as f64;
    let records = (horizon / record_dt).round() as usize;
    let mut stepper = Stepper::new(medium, lifted);
    let mut s = SpectralState {
        t: 0.0,
        v: lifted.v0.clone(),
        vdot: lifted.v1.clone(),
    };
    let mut states = Vec::with_capacity(records + 1);
    states.push(s.clone());
    for r in 1..=records {
        for _ in 0..substeps {
            stepper.step(&mut s, dt_ode);
        }
        // Pin the clock to the record grid to avoid drift in t.
        s.t = r as f64 * record_dt;
        states.push(s.clone());
    }
    Ok(Trajectory {
        states,
        dt_ode,
        record_dt,
        basis: lifted.basis,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TraceFilter {
    /// σ_j = exp(−strength (j/(N+1))^order).
    Exponential { order: u32, strength: f64 },
    /// σ_j = 1 − j/(N+1).
    Fejer,
    None,
}

impl Default for TraceFilter {
    fn default() -> Self {
        TraceFilter::Exponential {
            order: 8,
            strength: 36.0,
        }
    }
}

impl TraceFilter {
    pub fn weight(&self, j: usize, n: usize) -> f64 {
        let r = j as f64 / (n + 1) as f64;
        match self {
            TraceFilter::Exponential { order, strength } => (-strength * r.powi(*order as i32)).exp(),
            TraceFilter::Fejer => 1.0 - r,
            TraceFilter::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementMeta {
    pub source: String,
    pub n_modes: Option<usize>,
    pub dt_ode: Option<f64>,
    pub filter: Option<TraceFilter>,
    pub a_m: Option<f64>,
}

/// g = ∂ₓu|ₓ₌₀ + f′ on t_i = i·dt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub samples: Vec<f64>,
    pub dt: f64,
    pub meta: MeasurementMeta,
}

impl From<TraceSignal> for Measurement {
    fn from(t: TraceSignal) -> Self {
        Measurement {
            samples: t.samples,
            dt: t.dt,
            meta: MeasurementMeta {
                source: "ansatz".into(),
                n_modes: None,
                dt_ode: None,
                filter: None,
                a_m: None,
            },
        }
    }
}

impl Measurement {
    pub fn times(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|i| i as f64 * self.dt).collect()
    }
}

/// Filtered spectral trace. ∂ₓu_in(t, 0) = −f′(t) because Φ′(0) = 0, so
/// g reduces to ∂ₓv(t, 0).
pub fn measure_g(traj: &Trajectory, filter: TraceFilter, a_m: f64) -> Measurement {
    let basis = traj.basis;
    let w: Vec<f64> = (1..=basis.n)
        .map(|j| filter.weight(j, basis.n) * basis.de(j, 0.0))
        .collect();
    let samples = traj
        .states
        .iter()
        .map(|s| s.v.iter().zip(&w).map(|(v, c)| v * c).sum())
        .collect();
    Measurement {
        samples,
        dt: traj.record_dt,
        meta: MeasurementMeta {
            source: "solver".into(),
            n_modes: Some(basis.n),
            dt_ode: Some(traj.dt_ode),
            filter: Some(filter),
            a_m: Some(a_m),
        },
    }
}

/// Echo returning to x = 0: amplitude c and delay τ in g = 2 Σ c f′(t − τ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Echo {
    pub delay: f64,
    pub amplitude: f64,
}

/// Image series for a static interface, truncated below 1e−10 or past T.
pub fn image_echoes(medium: &MediumSpec) -> Result<Vec<Echo>, SolverError> {
    if !medium.trajectory.is_static() {
        return Err(SolverError::NotStatic);
    }
    let k = medium.k;
    let a = medium.trajectory.position(0.0);
    let b = medium.b;
    let t_end = medium.horizon;
    let r12 = (1.0 - k) / (1.0 + k);
    let t12 = 2.0 / (1.0 + k);
    let r21 = -r12;
    let t21 = 2.0 * k / (1.0 + k);
    let d1 = 2.0 * a;
    let d2 = 2.0 * (b - a) / k;
    let delay = |n1: usize, n2: usize| n1 as f64 * d1 + n2 as f64 * d2;
    // p: right-going wave leaving x = 0; q: wave in D returning to the interface.
    let mut p: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut q: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut out: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    p.insert((0, 0), 1.0);
    let max_level = (t_end / d1.min(d2)).ceil() as usize + 2;
    for level in 0..=max_level {
        for n1 in 0..=level {
            let key = (n1, level - n1);
            let (n1, n2) = key;
            let mut back = 0.0;
            if let Some(&amp) = p.get(&key) {
                back += r12 * amp;
                let tr = -t12 * amp;
                if tr.abs() > 1e-10 && delay(n1, n2 + 1) <= t_end {
                    *q.entry((n1, n2 + 1)).or_default() += tr;
                }
            }
            if let Some(&amp) = q.get(&key) {
                back += t21 * amp;
                let re = -r21 * amp;
                if re.abs() > 1e-10 && delay(n1, n2 + 1) <= t_end {
                    *q.entry((n1, n2 + 1)).or_default() += re;
                }
            }
            if back.abs() > 1e-10 && delay(n1 + 1, n2) <= t_end {
                *out.entry((n1 + 1, n2)).or_default() += back;
                *p.entry((n1 + 1, n2)).or_default() -= back;
            }
        }
    }
    let mut echoes: Vec<Echo> = out
        .into_iter()
        .map(|((n1, n2), c)| Echo {
            delay: delay(n1, n2),
            amplitude: c,
        })
        .collect();
    echoes.sort_by(|x, y| x.delay.total_cmp(&y.delay));
    Ok(echoes)
}

/// d'Alembert/image solution of the static problem, sampled on the probe grid.
pub fn oracle_static(medium: &MediumSpec, probe: &ProbeSignal) -> Result<Measurement, SolverError> {
    let echoes = image_echoes(medium)?;
    let n = probe.samples.len();
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 * probe.dt;
            echoes
                .iter()
                .filter(|e| e.delay < t)
                .map(|e| 2.0 * e.amplitude * probe.derivative_at(t - e.delay))
                .sum()
        })
        .collect();
    Ok(Measurement {
        samples,
        dt: probe.dt,
        meta: MeasurementMeta {
            source: "image-oracle".into(),
            n_modes: None,
            dt_ode: None,
            filter: None,
            a_m: None,
        },
    })
}

/// Least-squares fit g ≈ A f′(t − L) over lags in [lag_lo, lag_hi] and the
/// window [w_lo, w_hi]; returns (L, A) for the lag of largest |correlation|.
pub fn fit_echo(
    g: &Measurement,
    probe: &ProbeSignal,
    lag_lo: f64,
    lag_hi: f64,
    w_lo: f64,
    w_hi: f64,
) -> (f64, f64) {
    let dt = g.dt;
    let i_lo = (w_lo / dt).ceil().max(0.0) as usize;
    let i_hi = ((w_hi / dt).floor() as usize).min(g.samples.len() - 1);
    let l_lo = (lag_lo / dt).round() as i64;
    let l_hi = (lag_hi / dt).round() as i64;
    let mut best = (0.0, 0.0, -1.0);
    for l in l_lo..=l_hi {
        let lag = l as f64 * dt;
        let (mut num, mut den) = (0.0, 0.0);
        for i in i_lo..=i_hi {
            let d = probe.derivative_at(i as f64 * dt - lag);
            num += g.samples[i] * d;
            den += d * d;
        }
        if den <= 0.0 {
            continue;
        }
        let score = num * num / den;
        if score > best.2 {
            best = (lag, num / den, score);
        }
    }
    (best.0, best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyAudit {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// ρ_N(t) = |(k² − 1) ȧ| cᵀ B⁻¹ c with c_i = e_i′(a(t)).
    pub rho: Vec<f64>,
    /// √E(t) ≤ e^{½∫ρ} (√E(0) + ∫ e^{−½∫ρ} |F_N| / √2).
    pub envelope: Vec<f64>,
    /// exp(∫₀ᵀ ρ), the Grönwall factor on E.
    pub gronwall_constant: f64,
    pub max_relative_drift: f64,
}

impl EnergyAudit {
    pub fn bounded(&self) -> bool {
        self.energy
            .iter()
            .zip(&self.envelope)
            .all(|(e, b)| *e <= b * (1.0 + 1e-12))
    }
}

/// Energy along a trajectory against its Grönwall envelope. The growth rate
/// comes from (cᵀV)² ≤ (cᵀB⁻¹c)(VᵀBV), which bounds ½VᵀḂV by ρ_N E.
pub fn energy_audit(
    medium: &MediumSpec,
    lifted: &LiftedProblem,
    traj: &Trajectory,
) -> Result<EnergyAudit, SolverError> {
    let basis = traj.basis;
    let mut stepper = Stepper::new(medium, lifted);
    let mut stiff = Stiffness::new(basis, medium.k);
    let mut force = vec![0.0; basis.n];
    let k2 = medium.k * medium.k;
    let mut times = Vec::new();
    let mut energy = Vec::new();
    let mut rho = Vec::new();
    let mut fnorm = Vec::new();
    for s in &traj.states {
        times.push(s.t);
        energy.push(stepper.energy(s));
        let v = medium.trajectory.velocity(s.t);
        let r = if v == 0.0 || k2 == 1.0 {
            0.0
        } else {
            let a = medium.trajectory.position(s.t);
            let b = stiff.dense(a);
            let c = DVector::from_fn(basis.n, |i, _| basis.de(i + 1, a));
            let chol = b
                .cholesky()
                .ok_or_else(|| SolverError::InvalidParameter("B(t) is not positive definite".into()))?;
            ((k2 - 1.0) * v).abs() * c.dot(&chol.solve(&c))
        };
        rho.push(r);
        lifted.forcing(s.t, &mut force);
        fnorm.push(force.iter().map(|f| f * f).sum::<f64>().sqrt());
    }
    let mut envelope = Vec::with_capacity(times.len());
    let mut int_rho = 0.0;
    let mut int_src = 0.0;
    let e0 = energy.first().copied().unwrap_or(0.0);
    envelope.push(e0);
    for i in 1..times.len() {
        let h = times[i] - times[i - 1];
        let prev = int_rho;
        int_rho += 0.5 * h * (rho[i] + rho[i - 1]);
        // Sources enter through the larger of the endpoint values on each
        // interval, which keeps the discrete envelope above the continuous one.
        let fmax = fnorm[i].max(fnorm[i - 1]);
        int_src += h * (-0.5 * prev).exp() * fmax / 2f64.sqrt();
        let y = (0.5 * int_rho).exp() * (e0.sqrt() + int_src);
        envelope.push(y * y);
    }
    let max_relative_drift = if e0 > 0.0 {
        energy.iter().map(|e| (e - e0).abs() / e0).fold(0.0, f64::max)
    } else {
        0.0
    };
    Ok(EnergyAudit {
        times,
        energy,
        rho,
        envelope,
        gronwall_constant: int_rho.exp(),
        max_relative_drift,
    })
}

/// ⟨∂ₓv|ₓ₌₀, φ⟩ by Green's identity with q(t, x) = φ(t + x) χ(x), χ a cutoff
/// with support inside (0, a_m): the pairing equals ∫∫ F q − ∫∫ v (q_tt − q_xx),
/// with q_tt − q_xx = −2 φ′(t + x) χ′(x) − φ(t + x) χ″(x). Needs zero initial
/// data and φ vanishing near 0 and near T − a_m.
pub fn duality_pairing<P>(lifted: &LiftedProblem, traj: &Trajectory, phi: P) -> f64
where
    P: Fn(f64) -> (f64, f64),
{
    let chi = Cutoff { eps: lifted.a_m };
    let panels = 64;
    let (lo, hi) = (0.0, lifted.a_m);
    let h = (hi - lo) / panels as f64;
    let mut xs = Vec::new();
    for p in 0..panels {
        for (x, w) in gauss_nodes().iter().zip(gauss_weights()) {
            xs.push((lo + h * (p as f64 + x), w * h));
        }
    }
    let basis = traj.basis;
    let evals: Vec<Vec<f64>> = xs
        .iter()
        .map(|(x, _)| (1..=basis.n).map(|j| basis.e(j, *x)).collect())
        .collect();
    let n = traj.states.len();
    let mut total = 0.0;
    for (i, s) in traj.states.iter().enumerate() {
        let wt = if i == 0 || i + 1 == n { 0.5 } else { 1.0 } * traj.record_dt;
        let mut inner = 0.0;
        for ((x, wx), ev) in xs.iter().zip(&evals) {
            let (p, dp) = phi(s.t + x);
            let c = chi.value(*x);
            let src = lifted.source(s.t, *x) * p * c;
            let (d1, d2) = (chi.d1(*x), chi.d2(*x));
            let box_q = -2.0 * dp * d1 - p * d2;
            let v = if box_q == 0.0 {
                0.0
            } else {
                s.v.iter().zip(ev).map(|(a, e)| a * e).sum::<f64>()
            };
            inner += wx * (src - v * box_q);
        }
        total += wt * inner;
    }
    total
}
