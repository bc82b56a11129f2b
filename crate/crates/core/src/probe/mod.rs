//! Probing signals: the dense-singularity function G, its time-scaled probe
//! variant, a smooth pulse, and regularity measurement of sampled signals.

mod regularity;

pub use regularity::{
    estimate_regularity, estimate_regularity_neg, gagliardo_seminorm, primitive, BandAnalysis,
    BandConfig, Candidate, Diagnostics, Method, RegularityEstimate, SearchRange,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("base regularity r0 = {0} outside (0, 1/2)")]
    BadR0(f64),
    #[error("invalid probe parameter: {0}")]
    InvalidParameter(String),
    #[error("signal too short: {len} samples, need at least {need}")]
    TooShort { len: usize, need: usize },
    #[error("exponent s = {0} outside (0, 1)")]
    BadExponent(f64),
    #[error("search range [{0}, {1}] is empty or outside [-1, 1]")]
    BadRange(f64, f64),
}

/// Guard added to the probe exponents so the schedule holds strictly.
pub const EXPONENT_GUARD: f64 = 0.01;

/// Base-2 radical inverse of `i` (van der Corput).
pub fn van_der_corput(mut i: u64) -> f64 {
    let mut v = 0.0;
    let mut den = 1.0;
    while i > 0 {
        den *= 2.0;
        v += (i & 1) as f64 / den;
        i >>= 1;
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GSpec {
    pub n_terms: usize,
}

impl Default for GSpec {
    fn default() -> Self {
        Self { n_terms: 32 }
    }
}

impl GSpec {
    /// a_n for n = 1..=n_terms; a_1 = 0.
    pub fn points(&self) -> Vec<f64> {
        (0..self.n_terms as u64).map(van_der_corput).collect()
    }

    /// Largest gap of {a_n} ∪ {0, 1} in [0, 1].
    pub fn fill_distance(&self) -> f64 {
        let mut p = self.points();
        p.push(0.0);
        p.push(1.0);
        p.sort_by(f64::total_cmp);
        p.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Terms w_n ((x − a_n)₊)^{1/2 − a_n} of the plain G.
    pub fn g_terms(&self) -> Vec<PowerTerm> {
        self.points()
            .into_iter()
            .enumerate()
            .map(|(i, a)| PowerTerm {
                weight: 0.5f64.powi(i as i32 + 1),
                shift: a,
                exponent: 0.5 - a,
            })
            .collect()
    }

    /// Terms with exponent r0 (1 − a_n) − 1/2 + guard, giving local
    /// regularity r0 (1 − x) + guard at x = a_n.
    pub fn probe_terms(&self, r0: f64) -> Vec<PowerTerm> {
        self.points()
            .into_iter()
            .enumerate()
            .map(|(i, a)| PowerTerm {
                weight: 0.5f64.powi(i as i32 + 1),
                shift: a,
                exponent: r0 * (1.0 - a) - 0.5 + EXPONENT_GUARD,
            })
            .collect()
    }
}

const GAUSS_X: [f64; 6] = [
    0.033_765_242_898_423_99,
    0.169_395_306_766_867_74,
    0.380_690_406_958_401_5,
    0.619_309_593_041_598_5,
    0.830_604_693_233_132_3,
    0.966_234_757_101_576,
];
const GAUSS_W: [f64; 6] = [
    0.085_662_246_189_585_17,
    0.180_380_786_524_069_3,
    0.233_956_967_286_345_5,
    0.233_956_967_286_345_5,
    0.180_380_786_524_069_3,
    0.085_662_246_189_585_17,
];

/// Six-point Gauss-Legendre nodes scaled to [0, 1].
pub fn gauss_nodes() -> [f64; 6] {
    GAUSS_X
}

/// Weights matching `gauss_nodes`; they sum to one.
pub fn gauss_weights() -> [f64; 6] {
    GAUSS_W
}

/// A cell of the sampling grid seen through a monotone change of variable.
/// `lo`, `hi` are the mapped endpoints and `nodes` the mapped Gauss nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappedCell {
    pub lo: f64,
    pub hi: f64,
    pub nodes: [f64; 6],
}

impl MappedCell {
    pub fn identity(lo: f64, hi: f64) -> Self {
        let mut nodes = [0.0; 6];
        for (n, g) in nodes.iter_mut().zip(GAUSS_X) {
            *n = lo + (hi - lo) * g;
        }
        Self { lo, hi, nodes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTerm {
    pub weight: f64,
    pub shift: f64,
    pub exponent: f64,
}

impl PowerTerm {
    pub fn value(&self, x: f64) -> f64 {
        if x > self.shift {
            self.weight * (x - self.shift).powf(self.exponent)
        } else {
            0.0
        }
    }

    fn primitive(&self, x: f64) -> f64 {
        if x > self.shift {
            self.weight * (x - self.shift).powf(self.exponent + 1.0) / (self.exponent + 1.0)
        } else {
            0.0
        }
    }

    /// Average over a mapped cell. Gauss quadrature away from the
    /// singularity, the exact primitive next to it.
    pub fn cell_average(&self, c: &MappedCell) -> f64 {
        let w = c.hi - c.lo;
        if c.hi <= self.shift || w <= 0.0 {
            return 0.0;
        }
        if c.lo >= self.shift + 8.0 * w {
            let mut s = 0.0;
            for (x, g) in c.nodes.iter().zip(GAUSS_W) {
                s += g * (x - self.shift).powf(self.exponent);
            }
            self.weight * s
        } else {
            (self.primitive(c.hi) - self.primitive(c.lo)) / w
        }
    }
}

/// Analytic description of a probe, when one is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum ProbeShape {
    /// Σ w_n ((t/T − a_n)₊)^{e_n}
    PowerSum {
        terms: Vec<PowerTerm>,
        time_scale: f64,
    },
    /// amplitude · exp(−(t − center)²/width) for t > 0, zero otherwise.
    Pulse {
        center: f64,
        width: f64,
        amplitude: f64,
    },
}

impl ProbeShape {
    pub fn value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            ProbeShape::PowerSum { terms, time_scale } => {
                let x = t / time_scale;
                terms.iter().map(|p| p.value(x)).sum()
            }
            ProbeShape::Pulse {
                center,
                width,
                amplitude,
            } => amplitude * (-(t - center).powi(2) / width).exp(),
        }
    }

    /// Pointwise derivative; for power sums this is the classical derivative
    /// away from the singular times.
    pub fn derivative(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            ProbeShape::PowerSum { terms, time_scale } => {
                let x = t / time_scale;
                terms
                    .iter()
                    .filter(|p| x > p.shift)
                    .map(|p| {
                        p.weight * p.exponent * (x - p.shift).powf(p.exponent - 1.0) / time_scale
                    })
                    .sum()
            }
            ProbeShape::Pulse {
                center,
                width,
                amplitude,
            } => -2.0 * (t - center) / width * amplitude * (-(t - center).powi(2) / width).exp(),
        }
    }

    /// Average of f over a cell given in time units (possibly mapped).
    pub fn cell_average(&self, c: &MappedCell) -> f64 {
        match self {
            ProbeShape::PowerSum { terms, time_scale } => {
                let mut scaled = *c;
                scaled.lo /= time_scale;
                scaled.hi /= time_scale;
                for n in scaled.nodes.iter_mut() {
                    *n /= time_scale;
                }
                terms.iter().map(|p| p.cell_average(&scaled)).sum()
            }
            ProbeShape::Pulse { .. } => c
                .nodes
                .iter()
                .zip(GAUSS_W)
                .map(|(x, g)| g * self.value(*x))
                .sum(),
        }
    }

    /// Times of the singular points, with the term index (1-based weight
    /// exponent) and the local exponent.
    pub fn singular_times(&self) -> Vec<SingularTime> {
        match self {
            ProbeShape::PowerSum { terms, time_scale } => terms
                .iter()
                .enumerate()
                .map(|(i, p)| SingularTime {
                    time: p.shift * time_scale,
                    order: i + 1,
                    weight: p.weight,
                    exponent: p.exponent,
                })
                .collect(),
            ProbeShape::Pulse { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularTime {
    pub time: f64,
    pub order: usize,
    pub weight: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    GDerived,
    SmoothPulse,
    External,
}

/// Uniformly sampled boundary input; sample i sits at t = i·dt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSignal {
    pub samples: Vec<f64>,
    pub dt: f64,
    pub r0: f64,
    pub origin: Origin,
    pub shape: Option<ProbeShape>,
}

impl ProbeSignal {
    pub fn horizon(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|i| i as f64 * self.dt).collect()
    }

    /// f(t): analytic when the shape is known, linear interpolation otherwise.
    pub fn value_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if let Some(s) = &self.shape {
            return s.value(t);
        }
        let x = t / self.dt;
        let i = x.floor() as usize;
        let n = self.samples.len();
        if i + 1 >= n {
            return self.samples.last().copied().unwrap_or(0.0);
        }
        let w = x - i as f64;
        (1.0 - w) * self.samples[i] + w * self.samples[i + 1]
    }

    /// f'(t): analytic for smooth shapes, centred difference otherwise.
    pub fn derivative_at(&self, t: f64) -> f64 {
        match &self.shape {
            Some(s @ ProbeShape::Pulse { .. }) => s.derivative(t),
            _ => (self.value_at(t + 0.5 * self.dt) - self.value_at(t - 0.5 * self.dt)) / self.dt,
        }
    }

    /// Average of f over a mapped cell.
    pub fn cell_average(&self, c: &MappedCell) -> f64 {
        match &self.shape {
            Some(s) => s.cell_average(c),
            None => c
                .nodes
                .iter()
                .zip(GAUSS_W)
                .map(|(x, g)| g * self.value_at(*x))
                .sum(),
        }
    }
}

fn check_grid(horizon: f64, dt: f64) -> Result<usize, ProbeError> {
    if !(horizon.is_finite() && horizon > 0.0 && dt.is_finite() && dt > 0.0) {
        return Err(ProbeError::InvalidParameter(format!(
            "horizon = {horizon}, dt = {dt}"
        )));
    }
    let n = (horizon / dt).round() as usize;
    if n < 2 {
        return Err(ProbeError::InvalidParameter(
            "fewer than two samples".into(),
        ));
    }
    Ok(n)
}

/// G at the given points: Σ 2⁻ⁿ ((x − a_n)₊)^{1/2 − a_n}.
pub fn build_g(gspec: &GSpec, grid: &[f64]) -> Vec<f64> {
    let terms = gspec.g_terms();
    grid.iter()
        .map(|&x| terms.iter().map(|p| p.value(x)).sum())
        .collect()
}

/// Cell averages of G over [x_i − h, x_i] with x_i = i·h, i < n.
pub fn build_g_cells(gspec: &GSpec, h: f64, n: usize) -> Vec<f64> {
    let terms = gspec.g_terms();
    (0..n)
        .map(|i| {
            let x = i as f64 * h;
            let c = MappedCell::identity(x - h, x);
            terms.iter().map(|p| p.cell_average(&c)).sum()
        })
        .collect()
}

/// Samples of the scaled power sum as backward cell averages.
fn sample_shape(shape: &ProbeShape, dt: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            shape.cell_average(&MappedCell::identity(t - dt, t))
        })
        .collect()
}

/// The singular probe f(t) = Σ 2⁻ⁿ ((t/T − a_n)₊)^{r0(1−a_n) − 1/2 + guard}.
pub fn build_probe(gspec: &GSpec, r0: f64, horizon: f64, dt: f64) -> Result<ProbeSignal, ProbeError> {
    if !(r0 > 0.0 && r0 < 0.5) {
        return Err(ProbeError::BadR0(r0));
    }
    if gspec.n_terms == 0 {
        return Err(ProbeError::InvalidParameter("n_terms must be positive".into()));
    }
    let n = check_grid(horizon, dt)?;
    let shape = ProbeShape::PowerSum {
        terms: gspec.probe_terms(r0),
        time_scale: horizon,
    };
    Ok(ProbeSignal {
        samples: sample_shape(&shape, dt, n),
        dt,
        r0,
        origin: Origin::GDerived,
        shape: Some(shape),
    })
}

/// Gaussian pulse sampled pointwise.
pub fn smooth_pulse(
    center: f64,
    width: f64,
    amplitude: f64,
    r0: f64,
    horizon: f64,
    dt: f64,
) -> Result<ProbeSignal, ProbeError> {
    if !(width > 0.0 && center.is_finite() && amplitude.is_finite()) {
        return Err(ProbeError::InvalidParameter(format!(
            "pulse center {center}, width {width}"
        )));
    }
    let n = check_grid(horizon, dt)?;
    let shape = ProbeShape::Pulse {
        center,
        width,
        amplitude,
    };
    Ok(ProbeSignal {
        samples: (0..n).map(|i| shape.value(i as f64 * dt)).collect(),
        dt,
        r0,
        origin: Origin::SmoothPulse,
        shape: Some(shape),
    })
}
