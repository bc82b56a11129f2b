//! Local Sobolev-regularity measurement of sampled signals.
//!
//! The default estimator works on band increments of p-th order difference
//! energies around candidate singular points: for a singularity of order s the
//! energy captured at scale δ behaves like A δ^{2s} + B, where the constant B
//! comes from the grid itself. Differencing successive scales removes B, and
//! the slope of the increments in log-log coordinates gives 2s. The reported
//! exponent is the minimum over candidates, i.e. the worst point of the window.

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::ProbeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GagliardoSweep,
    DyadicBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRange {
    pub lo: f64,
    pub hi: f64,
}

impl SearchRange {
    pub const POSITIVE: SearchRange = SearchRange { lo: 0.0, hi: 1.0 };
    pub const NEGATIVE: SearchRange = SearchRange { lo: -1.0, hi: 0.0 };

    fn check(&self) -> Result<(), ProbeError> {
        if self.lo < self.hi && self.lo >= -1.0 && self.hi <= 1.0 {
            Ok(())
        } else {
            Err(ProbeError::BadRange(self.lo, self.hi))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    /// Order p of the finite differences.
    pub order: usize,
    /// Dyadic scale exponents j: δ_j = 2^j dt for j in [first, last].
    pub first_scale: u32,
    pub last_scale: u32,
    /// Half-width of the local-maximum test for candidates.
    pub radius: usize,
    /// Extra stencils taken on both sides of a candidate.
    pub margin: usize,
    /// Minimum number of band increments for a fit.
    pub min_increments: usize,
    /// Roundoff floor relative to max |q|.
    pub rel_floor: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            order: 8,
            first_scale: 1,
            last_scale: 5,
            radius: 2,
            margin: 2,
            min_increments: 3,
            rel_floor: 1e-12,
        }
    }
}

impl BandConfig {
    /// Shortest signal that supports one full fit.
    pub fn min_len(&self) -> usize {
        let j = self.first_scale as usize + self.min_increments;
        self.order * (1 << j) + 2 * self.margin + self.radius + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Sample index of the candidate singular point.
    pub index: usize,
    pub s: f64,
    /// Half the fitted intercept: log2 of the singular amplitude up to a
    /// constant that depends only on the exponent.
    pub log2_amplitude: f64,
    pub scales_used: usize,
    /// RMS residual of the log-log fit.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Diagnostics {
    Bands {
        scales: Vec<f64>,
        candidates: Vec<Candidate>,
        best_increments: Vec<f64>,
    },
    Sweep {
        s_grid: Vec<f64>,
        /// log2 growth of the band seminorms between successive refinements.
        log2_growth: Vec<f64>,
        /// Band seminorms B_ℓ(s), finest retained band first, one row per s.
        bands: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityEstimate {
    pub s_star: f64,
    pub method: Method,
    /// No singular behaviour inside the search range.
    pub smooth: bool,
    /// The raw estimate fell outside the search range and was clamped.
    pub clamped: bool,
    pub converged: bool,
    /// Sample index of the worst point (dyadic-band only).
    pub location: Option<usize>,
    pub diagnostics: Diagnostics,
}

fn binomial(p: usize, k: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (p - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Squared p-th differences at the given step.
fn squared_differences(q: &[f64], p: usize, step: usize) -> Vec<f64> {
    let span = p * step;
    if q.len() <= span {
        return Vec::new();
    }
    let coef: Vec<f64> = (0..=p)
        .map(|k| {
            let c = binomial(p, k);
            if (p - k) % 2 == 0 {
                c
            } else {
                -c
            }
        })
        .collect();
    (0..q.len() - span)
        .map(|i| {
            let d: f64 = coef
                .iter()
                .enumerate()
                .map(|(k, c)| c * q[i + k * step])
                .sum();
            d * d
        })
        .collect()
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - icpt - slope * a).powi(2))
        .sum();
    (slope, icpt, (rss / n).sqrt())
}

#[derive(Debug, Clone)]
struct RawCandidate {
    index: usize,
    peak: f64,
    energies: Vec<f64>,
}

/// Candidate singular points of a signal with their band energies. Windows
/// (0, t) of the same signal are evaluated without recomputation.
#[derive(Debug, Clone)]
pub struct BandAnalysis {
    cfg: BandConfig,
    dt: f64,
    n: usize,
    prefix_max: Vec<f64>,
    cands: Vec<RawCandidate>,
}

impl BandAnalysis {
    pub fn new(q: &[f64], dt: f64, cfg: BandConfig) -> Self {
        let n = q.len();
        let p = cfg.order;
        let jmax = cfg.last_scale;
        let pad = (p + 1) << jmax;
        let mut qq = vec![0.0; pad];
        qq.extend_from_slice(q);
        let len = qq.len();

        let mut prefix_max = Vec::with_capacity(n);
        let mut m: f64 = 0.0;
        for v in q {
            m = m.max(v.abs());
            prefix_max.push(m);
        }

        // Fine-scale energy attached to each sample.
        let d1 = squared_differences(&qq, p, 1);
        let fine: Vec<f64> = (0..len)
            .map(|s| {
                let lo = s.saturating_sub(p);
                let hi = (s + 1).min(d1.len());
                if lo >= hi {
                    0.0
                } else {
                    d1[lo..hi].iter().sum::<f64>() * dt
                }
            })
            .collect();

        let per_scale: Vec<Vec<f64>> = (cfg.first_scale..=cfg.last_scale)
            .map(|j| squared_differences(&qq, p, 1 << j))
            .collect();

        let r = cfg.radius;
        let w = cfg.margin;
        let mut cands = Vec::new();
        for s in pad..len {
            let e = fine[s];
            if e <= 0.0 {
                continue;
            }
            let lo = s.saturating_sub(r).max(pad);
            let hi = (s + r + 1).min(len);
            // Strict against the left, weak against the right: one candidate per plateau.
            if fine[lo..s].iter().any(|&v| v >= e) || fine[s + 1..hi].iter().any(|&v| v > e) {
                continue;
            }
            let mut energies = Vec::with_capacity(per_scale.len());
            for (jj, d) in per_scale.iter().enumerate() {
                let span = p << (cfg.first_scale as usize + jj);
                let i0 = s - span - w;
                let i1 = s + w;
                if i1 >= d.len() {
                    break;
                }
                energies.push(d[i0..=i1].iter().sum::<f64>() * dt);
            }
            if energies.len() < cfg.min_increments + 1 {
                continue;
            }
            cands.push(RawCandidate {
                index: s - pad,
                peak: e,
                energies,
            });
        }
        Self {
            cfg,
            dt,
            n,
            prefix_max,
            cands,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn config(&self) -> &BandConfig {
        &self.cfg
    }

    /// All fitted candidates of the window made of the first `end` samples.
    pub fn candidates(&self, end: usize) -> Vec<Candidate> {
        self.fitted(end).into_iter().map(|(c, _)| c).collect()
    }

    fn fitted(&self, end: usize) -> Vec<(Candidate, Vec<f64>)> {
        let end = end.min(self.n);
        if end == 0 {
            return Vec::new();
        }
        let cfg = &self.cfg;
        let scale = self.prefix_max[end - 1];
        let floor = (cfg.rel_floor * scale).powi(2) * self.dt;
        let mut out = Vec::new();
        for c in &self.cands {
            if c.index >= end {
                break;
            }
            if c.peak <= floor {
                continue;
            }
            let usable = c
                .energies
                .iter()
                .enumerate()
                .take_while(|(jj, _)| {
                    c.index + cfg.margin + (cfg.order << (cfg.first_scale as usize + jj)) < end
                })
                .count();
            if usable < cfg.min_increments + 1 {
                continue;
            }
            let inc: Vec<f64> = c.energies[..usable].windows(2).map(|e| e[1] - e[0]).collect();
            if inc.iter().any(|&v| v <= floor) {
                continue;
            }
            let x: Vec<f64> = (0..inc.len())
                .map(|jj| (cfg.first_scale as f64 + jj as f64) + self.dt.log2())
                .collect();
            let y: Vec<f64> = inc.iter().map(|v| v.log2()).collect();
            let (slope, icpt, res) = linear_fit(&x, &y);
            out.push((
                Candidate {
                    index: c.index,
                    s: 0.5 * slope,
                    log2_amplitude: 0.5 * icpt,
                    scales_used: usable,
                    residual: res,
                },
                inc,
            ));
        }
        out
    }

    /// Windowed estimate on the first `end` samples.
    pub fn window(&self, end: usize, range: SearchRange) -> RegularityEstimate {
        let fitted = self.fitted(end);
        let scales: Vec<f64> = (self.cfg.first_scale..self.cfg.last_scale)
            .map(|j| (1u64 << j) as f64 * self.dt)
            .collect();
        let best = fitted
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .0.s.total_cmp(&b.1 .0.s))
            .map(|(i, _)| i);
        let (raw, location, converged, best_inc) = match best {
            Some(i) => {
                let (c, inc) = &fitted[i];
                (c.s, Some(c.index), c.residual < 0.35, inc.clone())
            }
            None => (f64::INFINITY, None, true, Vec::new()),
        };
        let smooth = raw >= range.hi;
        let clamped = raw < range.lo || raw > range.hi;
        RegularityEstimate {
            s_star: raw.clamp(range.lo, range.hi),
            method: Method::DyadicBand,
            smooth,
            clamped,
            converged,
            location: if smooth { None } else { location },
            diagnostics: Diagnostics::Bands {
                scales,
                candidates: fitted.into_iter().map(|(c, _)| c).collect(),
                best_increments: best_inc,
            },
        }
    }
}

/// Running sum times dt; the primitive vanishes before the first sample.
pub fn primitive(q: &[f64], dt: f64) -> Vec<f64> {
    let mut acc = 0.0;
    q.iter()
        .map(|v| {
            acc += v;
            acc * dt
        })
        .collect()
}

/// S_m = Σ_i (q_{i+m} − q_i)² for m = 0..n−1. Short lags are summed directly,
/// long lags through an FFT autocorrelation.
fn structure_function(q: &[f64]) -> Vec<f64> {
    let n = q.len();
    let mean = q.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = q.iter().map(|v| v - mean).collect();
    let direct = 64.min(n - 1);
    let mut s = vec![0.0; n];
    for m in 1..=direct {
        s[m] = (0..n - m).map(|i| (c[i + m] - c[i]).powi(2)).sum();
    }
    if direct + 1 < n {
        let size = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let mut buf: Vec<Complex<f64>> = c.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(size, Complex::new(0.0, 0.0));
        fwd.process(&mut buf);
        for z in buf.iter_mut() {
            *z = Complex::new(z.norm_sqr(), 0.0);
        }
        inv.process(&mut buf);
        let mut sq = vec![0.0; n + 1];
        for i in 0..n {
            sq[i + 1] = sq[i] + c[i] * c[i];
        }
        for m in direct + 1..n {
            let r = buf[m].re / size as f64;
            s[m] = ((sq[n] - sq[m]) + sq[n - m] - 2.0 * r).max(0.0);
        }
    }
    s
}

fn check_len(len: usize, need: usize) -> Result<(), ProbeError> {
    if len < need {
        Err(ProbeError::TooShort { len, need })
    } else {
        Ok(())
    }
}

/// Discrete Gagliardo double integral with the band |x − y| < dt excluded.
pub fn gagliardo_seminorm(q: &[f64], dt: f64, s: f64) -> Result<f64, ProbeError> {
    if !(s > 0.0 && s < 1.0) {
        return Err(ProbeError::BadExponent(s));
    }
    check_len(q.len(), 8)?;
    let sf = structure_function(q);
    Ok(seminorm_from(&sf, dt, s))
}

fn seminorm_from(sf: &[f64], dt: f64, s: f64) -> f64 {
    2.0 * sf
        .iter()
        .enumerate()
        .skip(1)
        .map(|(m, v)| v * dt * dt / (m as f64 * dt).powf(1.0 + 2.0 * s))
        .sum::<f64>()
}

/// Bands ℓ with lags in [2^ℓ, 2^{ℓ+1}). The finest bands are left out: a
/// sampled cusp looks like a grid-scale jump there.
const SWEEP_FIRST: usize = 4;
const SWEEP_LEVELS: usize = 9;

fn sweep(q: &[f64], dt: f64, range: SearchRange) -> Result<RegularityEstimate, ProbeError> {
    check_len(q.len(), 8 << SWEEP_LEVELS)?;
    let sf = structure_function(q);
    let lo = range.lo.max(0.005);
    let hi = range.hi.min(0.995);
    let count = ((hi - lo) / 0.01).round().max(1.0) as usize + 1;
    let s_grid: Vec<f64> = (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1).max(1) as f64)
        .collect();
    // B_ℓ(s): contribution of lags in [2^ℓ, 2^{ℓ+1}).
    let rows: Vec<(Vec<f64>, f64)> = s_grid
        .par_iter()
        .map(|&s| {
            let bands: Vec<f64> = (SWEEP_FIRST..SWEEP_LEVELS)
                .map(|l| {
                    let a = 1usize << l;
                    let b = (a << 1).min(sf.len());
                    (a..b)
                        .map(|m| 2.0 * sf[m] * dt * dt / (m as f64 * dt).powf(1.0 + 2.0 * s))
                        .sum()
                })
                .collect();
            let growth: Vec<f64> = bands
                .windows(2)
                .filter(|w| w[0] > 0.0 && w[1] > 0.0)
                .map(|w| (w[0] / w[1]).log2())
                .collect();
            let g = if growth.is_empty() {
                f64::NEG_INFINITY
            } else {
                growth.iter().sum::<f64>() / growth.len() as f64
            };
            (bands, g)
        })
        .collect();
    let growth: Vec<f64> = rows.iter().map(|r| r.1).collect();
    // Zero-growth crossing: the seminorm sequence stops being Cauchy there.
    let mut raw = f64::INFINITY;
    if growth[0] >= 0.0 {
        raw = f64::NEG_INFINITY;
    } else {
        for i in 1..growth.len() {
            if growth[i] >= 0.0 {
                let (g0, g1) = (growth[i - 1], growth[i]);
                let w = if g1 > g0 { -g0 / (g1 - g0) } else { 0.0 };
                raw = s_grid[i - 1] + w * (s_grid[i] - s_grid[i - 1]);
                break;
            }
        }
    }
    let smooth = raw >= range.hi;
    let clamped = raw < range.lo || raw > range.hi;
    Ok(RegularityEstimate {
        s_star: raw.clamp(range.lo, range.hi),
        method: Method::GagliardoSweep,
        smooth,
        clamped,
        converged: growth.iter().all(|g| g.is_finite()),
        location: None,
        diagnostics: Diagnostics::Sweep {
            s_grid,
            log2_growth: growth,
            bands: rows.into_iter().map(|r| r.0).collect(),
        },
    })
}

/// Critical Sobolev exponent of a sampled signal on its whole interval.
pub fn estimate_regularity(
    q: &[f64],
    dt: f64,
    range: SearchRange,
    method: Method,
) -> Result<RegularityEstimate, ProbeError> {
    range.check()?;
    if q.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::InvalidParameter("non-finite sample".into()));
    }
    match method {
        Method::DyadicBand => {
            let cfg = BandConfig::default();
            check_len(q.len(), cfg.min_len())?;
            Ok(BandAnalysis::new(q, dt, cfg).window(q.len(), range))
        }
        Method::GagliardoSweep => sweep(q, dt, range),
    }
}

/// Negative-order estimate: the regularity of the primitive, minus one.
pub fn estimate_regularity_neg(
    q: &[f64],
    dt: f64,
    range: SearchRange,
    method: Method,
) -> Result<RegularityEstimate, ProbeError> {
    range.check()?;
    let shifted = SearchRange {
        lo: range.lo + 1.0,
        hi: range.hi + 1.0,
    };
    if shifted.hi > 1.0 {
        return Err(ProbeError::BadRange(range.lo, range.hi));
    }
    let mut est = estimate_regularity(&primitive(q, dt), dt, shifted, method)?;
    est.s_star -= 1.0;
    Ok(est)
}
