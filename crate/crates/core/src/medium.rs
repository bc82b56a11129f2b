//! Interface geometry: the trajectory a(t), the coefficient γ, the
//! characteristic maps ξ, μ, ν and the reflection/transmission coefficients.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance (time units) of every inverse characteristic map.
pub const TOL_INV: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MediumError {
    #[error("invalid medium parameter: {0}")]
    InvalidParameter(String),
    #[error("interface leaves (0, b): a({t}) = {a} with b = {b}")]
    OutOfRange { t: f64, a: f64, b: f64 },
    #[error("interface too fast: max |a'| = {max_speed} is not below min(1, k) = {limit}")]
    H1dViolated { max_speed: f64, limit: f64 },
    #[error("position x = {x} outside [0, {b}]")]
    OutOfDomain { x: f64, b: f64 },
    #[error("inverse query {value} outside map range [{lo}, {hi}]")]
    InverseRange { value: f64, lo: f64, hi: f64 },
    #[error("time s = {s} outside [0, {horizon}]")]
    TimeOutOfRange { s: f64, horizon: f64 },
    #[error("spline needs at least two strictly increasing knots with matching values")]
    BadSpline,
}

/// Parametric description of the interface motion.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Constant {
        a0: f64,
    },
    Affine {
        a0: f64,
        slope: f64,
    },
    /// a0 + amplitude * sin(omega t + phase)
    Sinusoidal {
        a0: f64,
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    CubicSplineSamples {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

/// Natural cubic spline through (times, values).
#[derive(Debug, Clone, PartialEq)]
pub struct Spline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self, MediumError> {
        let n = x.len();
        if n < 2 || y.len() != n || x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MediumError::BadSpline);
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(MediumError::BadSpline);
        }
        // Thomas algorithm for the interior second derivatives.
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut upper = vec![0.0; k];
            for i in 0..k {
                let h0 = x[i + 1] - x[i];
                let h1 = x[i + 2] - x[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// (value, first derivative, second derivative); cubic extrapolation
    /// from the end segments.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let dd = a * m0 + b * m1;
        (v, d, dd)
    }
}

/// Interface trajectory on [0, t_ext], extended by constants (zero slope) outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryRepr", into = "TrajectoryRepr")]
pub struct InterfaceTrajectory {
    kind: TrajectoryKind,
    t_ext: f64,
    spline: Option<Spline>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRepr {
    #[serde(flatten)]
    kind: TrajectoryKind,
    t_ext: f64,
}

impl TryFrom<TrajectoryRepr> for InterfaceTrajectory {
    type Error = MediumError;
    fn try_from(r: TrajectoryRepr) -> Result<Self, MediumError> {
        InterfaceTrajectory::new(r.kind, r.t_ext)
    }
}

impl From<InterfaceTrajectory> for TrajectoryRepr {
    fn from(t: InterfaceTrajectory) -> Self {
        TrajectoryRepr {
            kind: t.kind,
            t_ext: t.t_ext,
        }
    }
}

impl InterfaceTrajectory {
    pub fn new(kind: TrajectoryKind, t_ext: f64) -> Result<Self, MediumError> {
        if !(t_ext.is_finite() && t_ext > 0.0) {
            return Err(MediumError::InvalidParameter(format!("t_ext = {t_ext}")));
        }
        let finite = match &kind {
            TrajectoryKind::Constant { a0 } => a0.is_finite(),
            TrajectoryKind::Affine { a0, slope } => a0.is_finite() && slope.is_finite(),
            TrajectoryKind::Sinusoidal {
                a0,
                amplitude,
                omega,
                phase,
            } => [a0, amplitude, omega, phase].iter().all(|v| v.is_finite()),
            TrajectoryKind::CubicSplineSamples { .. } => true,
        };
        if !finite {
            return Err(MediumError::InvalidParameter(
                "non-finite trajectory parameter".into(),
            ));
        }
        let spline = match &kind {
            TrajectoryKind::CubicSplineSamples { times, values } => {
                Some(Spline::new(times, values)?)
            }
            _ => None,
        };
        Ok(Self {
            kind,
            t_ext,
            spline,
        })
    }

    pub fn constant(a0: f64, t_ext: f64) -> Result<Self, MediumError> {
        Self::new(TrajectoryKind::Constant { a0 }, t_ext)
    }

    pub fn kind(&self) -> &TrajectoryKind {
        &self.kind
    }

    pub fn t_ext(&self) -> f64 {
        self.t_ext
    }

    /// (a, ȧ, ä) on the raw parametrisation, no clamping.
    fn raw(&self, t: f64) -> (f64, f64, f64) {
        match &self.kind {
            TrajectoryKind::Constant { a0 } => (*a0, 0.0, 0.0),
            TrajectoryKind::Affine { a0, slope } => (a0 + slope * t, *slope, 0.0),
            TrajectoryKind::Sinusoidal {
                a0,
                amplitude,
                omega,
                phase,
            } => {
                let arg = omega * t + phase;
                (
                    a0 + amplitude * arg.sin(),
                    amplitude * omega * arg.cos(),
                    -amplitude * omega * omega * arg.sin(),
                )
            }
            TrajectoryKind::CubicSplineSamples { .. } => {
                self.spline.as_ref().expect("spline built in new").eval(t)
            }
        }
    }

    fn clamped(&self, t: f64) -> (f64, f64, f64) {
        if t < 0.0 {
            (self.raw(0.0).0, 0.0, 0.0)
        } else if t > self.t_ext {
            (self.raw(self.t_ext).0, 0.0, 0.0)
        } else {
            self.raw(t)
        }
    }

    pub fn position(&self, t: f64) -> f64 {
        self.clamped(t).0
    }

    pub fn velocity(&self, t: f64) -> f64 {
        self.clamped(t).1
    }

    pub fn acceleration(&self, t: f64) -> f64 {
        self.clamped(t).2
    }

    /// True when a is constant on its whole domain.
    pub fn is_static(&self) -> bool {
        match &self.kind {
            TrajectoryKind::Constant { .. } => true,
            TrajectoryKind::Affine { slope, .. } => *slope == 0.0,
            TrajectoryKind::Sinusoidal {
                amplitude, omega, ..
            } => *amplitude == 0.0 || *omega == 0.0,
            TrajectoryKind::CubicSplineSamples { values, .. } => {
                values.iter().all(|v| *v == values[0])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub b: f64,
    pub k: f64,
    /// Observation horizon T.
    pub horizon: f64,
    pub trajectory: InterfaceTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1dReport {
    pub max_speed: f64,
    pub limit: f64,
    pub margin: f64,
    pub pass: bool,
    pub min_a: f64,
    pub max_a: f64,
}

/// Coefficient bundle at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub alpha: f64,
    pub beta: f64,
    pub dmu_dxi: f64,
    pub dnu_dxi: f64,
}

/// α, β and the map derivatives for contrast `k` and interface speed `adot`.
pub fn coefficients(k: f64, adot: f64) -> Coefficients {
    let c = k - 1.0 / k;
    let den = 1.0 + k + c * adot;
    Coefficients {
        alpha: (1.0 - k + c * adot) / den,
        beta: 2.0 / den,
        dmu_dxi: (1.0 + adot) / (1.0 - adot),
        dnu_dxi: (1.0 - adot / k) / (1.0 - adot),
    }
}

/// Derivatives with respect to ȧ of α dμ/dξ and β dν/dξ.
pub fn coefficient_slopes(k: f64, adot: f64) -> (f64, f64) {
    let v = adot;
    let c = k - 1.0 / k;
    let den = 1.0 + k + c * v;
    let cf = coefficients(k, v);
    let dalpha = 2.0 * c * k / (den * den);
    let dbeta = -2.0 * c / (den * den);
    let da = dalpha * cf.dmu_dxi + cf.alpha * 2.0 / ((1.0 - v) * (1.0 - v));
    let db = dbeta * cf.dnu_dxi + cf.beta * (1.0 - 1.0 / k) / ((1.0 - v) * (1.0 - v));
    (da, db)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub t_s: f64,
    pub t_star: f64,
}

impl MediumSpec {
    pub fn new(
        b: f64,
        k: f64,
        horizon: f64,
        trajectory: InterfaceTrajectory,
    ) -> Result<Self, MediumError> {
        let spec = Self {
            b,
            k,
            horizon,
            trajectory,
        };
        spec.check_parameters()?;
        Ok(spec)
    }

    /// Positivity and horizon checks; run again after deserialisation.
    pub fn check_parameters(&self) -> Result<(), MediumError> {
        for (name, v) in [("b", self.b), ("k", self.k), ("horizon", self.horizon)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(MediumError::InvalidParameter(format!("{name} = {v}")));
            }
        }
        if self.trajectory.t_ext() < self.horizon {
            return Err(MediumError::InvalidParameter(format!(
                "t_ext = {} is shorter than the horizon {}",
                self.trajectory.t_ext(),
                self.horizon
            )));
        }
        Ok(())
    }

    fn grid(&self, count: usize) -> impl Iterator<Item = f64> + '_ {
        let te = self.trajectory.t_ext();
        let n = count.max(2);
        (0..n).map(move |i| te * i as f64 / (n - 1) as f64)
    }

    /// Dense-grid check of the speed hypothesis sup |ȧ| < min(1, k).
    pub fn validate_h1d(&self, sample_count: usize) -> Result<H1dReport, MediumError> {
        if sample_count < 2 {
            return Err(MediumError::InvalidParameter(
                "sample_count must be at least 2".into(),
            ));
        }
        self.check_parameters()?;
        let mut max_speed: f64 = 0.0;
        let (mut min_a, mut max_a) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in self.grid(sample_count) {
            let (a, v, _) = self.trajectory.clamped(t);
            if !(a > 0.0 && a < self.b) {
                return Err(MediumError::OutOfRange { t, a, b: self.b });
            }
            max_speed = max_speed.max(v.abs());
            min_a = min_a.min(a);
            max_a = max_a.max(a);
        }
        let limit = self.k.min(1.0);
        let margin = limit - max_speed;
        Ok(H1dReport {
            max_speed,
            limit,
            margin,
            pass: margin > 0.0,
            min_a,
            max_a,
        })
    }

    /// Like `validate_h1d` but turns a failed check into an error.
    pub fn require_h1d(&self) -> Result<H1dReport, MediumError> {
        let r = self.validate_h1d(4097)?;
        if r.pass {
            Ok(r)
        } else {
            Err(MediumError::H1dViolated {
                max_speed: r.max_speed,
                limit: r.limit,
            })
        }
    }

    /// Half the smallest distance between the interface and ∂Ω.
    pub fn delta(&self) -> f64 {
        let d = self
            .grid(4097)
            .map(|t| {
                let a = self.trajectory.position(t);
                a.min(self.b - a)
            })
            .fold(f64::INFINITY, f64::min);
        0.5 * d
    }

    /// γ(t, x); the interface point itself takes the right limit k².
    pub fn eval_gamma(&self, t: f64, x: f64) -> Result<f64, MediumError> {
        if !(0.0..=self.b).contains(&x) {
            return Err(MediumError::OutOfDomain { x, b: self.b });
        }
        Ok(if x < self.trajectory.position(t) {
            1.0
        } else {
            self.k * self.k
        })
    }

    pub fn reflection_coeffs(&self, t: f64) -> Coefficients {
        coefficients(self.k, self.trajectory.velocity(t))
    }

    /// Flux-jump factor τ(t) from the closed-form derivatives of α dμ/dξ and β dν/dξ.
    pub fn jump_tau(&self, t: f64) -> f64 {
        let k = self.k;
        let (_, v, acc) = self.trajectory.clamped(t);
        if acc == 0.0 {
            return 0.0;
        }
        let (da, db) = coefficient_slopes(k, v);
        -k * db * acc / (1.0 - v / k) - da * acc / (1.0 + v)
    }

    /// τ(t) by centred differences in ν and μ, step `h` in t.
    pub fn jump_tau_numeric(&self, t: f64, h: f64) -> f64 {
        let k = self.k;
        let maps = CharMaps::new(self.clone());
        let am = |s: f64| {
            let c = self.reflection_coeffs(s);
            c.alpha * c.dmu_dxi
        };
        let bn = |s: f64| {
            let c = self.reflection_coeffs(s);
            c.beta * c.dnu_dxi
        };
        let d_mu = (am(t + h) - am(t - h)) / (maps.mu(t + h) - maps.mu(t - h));
        let d_nu = (bn(t + h) - bn(t - h)) / (maps.nu(t + h) - maps.nu(t - h));
        -k * d_nu - d_mu
    }

    /// t_s (root of a(t) = t − s) and t*(s) = 2 t_s − s.
    pub fn first_arrival(&self, s: f64) -> Result<Arrival, MediumError> {
        if !(0.0..=self.horizon).contains(&s) {
            return Err(MediumError::TimeOutOfRange {
                s,
                horizon: self.horizon,
            });
        }
        let t_s = CharMaps::new(self.clone()).xi_inv(s)?;
        Ok(Arrival {
            t_s,
            t_star: 2.0 * t_s - s,
        })
    }

    /// μ₀ = 2 t₀, the first return time of the interface echo.
    pub fn mu0(&self) -> Result<f64, MediumError> {
        Ok(self.first_arrival(0.0)?.t_star)
    }
}

/// ξ, μ, ν and their inverses for one medium.
#[derive(Debug, Clone)]
pub struct CharMaps {
    medium: MediumSpec,
    lo: f64,
    hi: f64,
}

#[derive(Clone, Copy)]
enum Map {
    Xi,
    Mu,
    Nu,
}

impl CharMaps {
    pub fn new(medium: MediumSpec) -> Self {
        let lo = -medium.b;
        let hi = medium.trajectory.t_ext() + medium.b;
        Self { medium, lo, hi }
    }

    pub fn medium(&self) -> &MediumSpec {
        &self.medium
    }

    pub fn xi(&self, t: f64) -> f64 {
        t - self.medium.trajectory.position(t)
    }

    pub fn mu(&self, t: f64) -> f64 {
        t + self.medium.trajectory.position(t)
    }

    pub fn nu(&self, t: f64) -> f64 {
        t - self.medium.trajectory.position(t) / self.medium.k
    }

    fn apply(&self, m: Map, t: f64) -> (f64, f64) {
        let tr = &self.medium.trajectory;
        let (a, v, _) = tr.clamped(t);
        match m {
            Map::Xi => (t - a, 1.0 - v),
            Map::Mu => (t + a, 1.0 + v),
            Map::Nu => (t - a / self.medium.k, 1.0 - v / self.medium.k),
        }
    }

    fn invert(&self, m: Map, y: f64) -> Result<f64, MediumError> {
        let (mut lo, mut hi) = (self.lo, self.hi);
        let (ylo, yhi) = (self.apply(m, lo).0, self.apply(m, hi).0);
        if !(y >= ylo && y <= yhi) {
            return Err(MediumError::InverseRange {
                value: y,
                lo: ylo,
                hi: yhi,
            });
        }
        let a = self.medium.trajectory.position(y);
        let mut t = match m {
            Map::Xi => y + a,
            Map::Mu => y - a,
            Map::Nu => y + a / self.medium.k,
        }
        .clamp(lo, hi);
        for _ in 0..200 {
            let (val, slope) = self.apply(m, t);
            let r = val - y;
            if r == 0.0 {
                return Ok(t);
            }
            if r > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let mut next = t - r / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() < 1e-3 * TOL_INV || hi - lo < 1e-3 * TOL_INV {
                return Ok(next);
            }
            t = next;
        }
        Ok(t)
    }

    /// ξ⁻¹(s) = t_s.
    pub fn xi_inv(&self, s: f64) -> Result<f64, MediumError> {
        self.invert(Map::Xi, s)
    }

    pub fn mu_inv(&self, m: f64) -> Result<f64, MediumError> {
        self.invert(Map::Mu, m)
    }

    pub fn nu_inv(&self, n: f64) -> Result<f64, MediumError> {
        self.invert(Map::Nu, n)
    }

    /// ξ as a function of μ.
    pub fn xi_of_mu(&self, m: f64) -> Result<f64, MediumError> {
        Ok(self.xi(self.mu_inv(m)?))
    }
}
