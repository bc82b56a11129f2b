//! Recovery of the first echo time, the regularity profile ξ(μ), the
//! interface trajectory, the reflection coefficient and the contrast k from
//! a single boundary measurement.
//!
//! Singular arrivals in g are located with the dyadic-band estimator on the
//! primitive of g. Each arrival carries the exponent of the probe singularity
//! that produced it, so with a known probe the arrivals are matched to the
//! probe's singular times, which pins ξ exactly at those μ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::medium::{MediumError, Spline};
use crate::probe::{
    gauss_nodes, primitive, BandAnalysis, BandConfig, Candidate, MappedCell, ProbeSignal,
    SearchRange, EXPONENT_GUARD,
};
use crate::solver::Measurement;

#[derive(Debug, Error)]
pub enum InversionError {
    #[error("measurement has {len} samples, the estimator needs {need}")]
    TooShort { len: usize, need: usize },
    #[error("no singular arrival in (0, T): T ≤ μ₀")]
    NoArrival,
    #[error("the regularity profile has no usable point")]
    EmptyProfile,
    #[error("degenerate alpha fit: {0}")]
    Degenerate(String),
    #[error("|alpha| = {alpha:.4} < {gate} at t = {t:.4}; the regularity signature is lost")]
    AlphaGate { t: f64, alpha: f64, gate: f64 },
    #[error("negative discriminant {disc:.3e} at t = {t:.4}: alpha and adot are inconsistent")]
    NegativeDiscriminant { t: f64, disc: f64 },
    #[error("leading coefficient {lead:.3e} is not positive at t = {t:.4}")]
    LeadingCoefficient { t: f64, lead: f64 },
    #[error("invalid inversion parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Medium(#[from] MediumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub window_count: usize,
    /// Regularity drop (positive scale) that counts as a singular arrival.
    pub tol_reg: f64,
    /// Calibration offset between probe exponents and r0(1 − t/T).
    pub guard: f64,
    /// Standard deviation of the estimated exponents, used for matching.
    pub snap_sigma: f64,
    /// Spread of arrival amplitudes about the probe weights, in octaves.
    pub snap_sigma_amplitude: f64,
    /// Cost of leaving a candidate unmatched, in squared standard deviations.
    pub skip_penalty: f64,
    /// Largest residual of the candidate log-log fit.
    pub max_fit_residual: f64,
    /// Polynomial degree of α·dμ/dξ in t.
    pub degree: usize,
    /// Samples excluded around each anchor in the α fit.
    pub anchor_mask: usize,
    /// ȧ below this counts as nonpositive for root selection.
    pub tol_adot: f64,
    pub alpha_gate: f64,
    pub grid_points: usize,
    /// Half-width in samples of the local fit that refines each anchor.
    pub refine_window: usize,
    pub refine_iterations: usize,
    pub band: BandConfig,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            window_count: 64,
            tol_reg: 0.05,
            guard: EXPONENT_GUARD,
            snap_sigma: 0.005,
            snap_sigma_amplitude: 1.5,
            skip_penalty: 9.0,
            max_fit_residual: 0.35,
            degree: 3,
            anchor_mask: 4,
            tol_adot: 2e-3,
            alpha_gate: 0.02,
            grid_points: 201,
            refine_window: 32,
            refine_iterations: 2,
            band: BandConfig::default(),
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<(), InversionError> {
        let ok = self.window_count >= 1
            && self.tol_reg > 0.0
            && self.snap_sigma > 0.0
            && self.snap_sigma_amplitude > 0.0
            && self.skip_penalty > 0.0
            && self.tol_adot >= 0.0
            && self.alpha_gate >= 0.0
            && self.grid_points >= 2
            && self.band.order >= 1
            && self.band.first_scale < self.band.last_scale;
        if ok {
            Ok(())
        } else {
            Err(InversionError::InvalidParameter(format!("{self:?}")))
        }
    }

    /// ξ from a positive-scale exponent s: T (1 − (s − guard)/r0).
    fn xi_of_s(&self, s: f64, r0: f64, horizon: f64) -> f64 {
        horizon * (1.0 - (s - self.guard) / r0)
    }
}

/// Primitive of g and its band analysis, shared by the stages.
struct Analysed {
    q: Vec<f64>,
    ba: BandAnalysis,
    dt: f64,
}

impl Analysed {
    fn new(g: &Measurement, cfg: &InversionConfig) -> Result<Self, InversionError> {
        let need = cfg.band.min_len();
        if g.samples.len() < need {
            return Err(InversionError::TooShort {
                len: g.samples.len(),
                need,
            });
        }
        if g.samples.iter().any(|v| !v.is_finite()) || !(g.dt > 0.0) {
            return Err(InversionError::InvalidParameter("non-finite measurement".into()));
        }
        let q = primitive(&g.samples, g.dt);
        let ba = BandAnalysis::new(&q, g.dt, cfg.band);
        Ok(Self { q, ba, dt: g.dt })
    }

    fn singular(&self, c: &Candidate, r0: f64, cfg: &InversionConfig) -> bool {
        c.s < r0 + cfg.guard + cfg.tol_reg && c.residual < cfg.max_fit_residual
    }

    /// Window ends at which the set of usable scales of some candidate grows.
    fn events(&self) -> Vec<usize> {
        let b = &self.ba.config();
        let n = self.ba.len();
        let mut ends: Vec<usize> = self
            .ba
            .candidates(n)
            .iter()
            .flat_map(|c| {
                (b.min_increments + 1..=(b.last_scale - b.first_scale + 1) as usize).map(move |u| {
                    c.index + b.margin + (b.order << (b.first_scale as usize + u - 1)) + 1
                })
            })
            .filter(|e| *e <= n)
            .collect();
        ends.sort_unstable();
        ends.dedup();
        ends
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mu0Verdict {
    Detected,
    /// No singular arrival inside the record: T ≤ μ₀.
    NotReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mu0Detection {
    pub verdict: Mu0Verdict,
    /// Location of the first singular arrival.
    pub mu0: Option<f64>,
    /// End of the first window whose estimate drops below the threshold.
    pub window_end: Option<f64>,
    /// Negative-order estimate in that window.
    pub s_star: Option<f64>,
    pub threshold: f64,
}

fn detect(a: &Analysed, r0: f64, cfg: &InversionConfig) -> Mu0Detection {
    let threshold = r0 + cfg.guard + cfg.tol_reg;
    for end in a.events() {
        let est = a.ba.window(end, SearchRange::POSITIVE);
        if est.smooth || !est.converged || est.s_star >= threshold {
            continue;
        }
        let loc = est.location.unwrap_or(end);
        let cand = a.ba.candidates(end).into_iter().find(|c| c.index == loc);
        if let Some(c) = cand {
            if !a.singular(&c, r0, cfg) {
                continue;
            }
        }
        return Mu0Detection {
            verdict: Mu0Verdict::Detected,
            mu0: Some(loc as f64 * a.dt),
            window_end: Some(end as f64 * a.dt),
            s_star: Some(est.s_star - 1.0),
            threshold: threshold - 1.0,
        };
    }
    Mu0Detection {
        verdict: Mu0Verdict::NotReached,
        mu0: None,
        window_end: None,
        s_star: None,
        threshold: threshold - 1.0,
    }
}

/// First singular arrival, found by growing windows (0, μ).
pub fn detect_mu0(
    g: &Measurement,
    r0: f64,
    cfg: &InversionConfig,
) -> Result<Mu0Detection, InversionError> {
    cfg.validate()?;
    Ok(detect(&Analysed::new(g, cfg)?, r0, cfg))
}

/// A point where ξ is pinned by a singular arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub mu: f64,
    pub xi: f64,
    /// Positive-scale exponent of the arrival.
    pub s: f64,
    /// ξ predicted from the exponent alone.
    pub xi_from_s: f64,
    /// log2 amplitude of the band-energy fit.
    pub log2_amplitude: f64,
    /// Term order of the matched probe singularity; `None` when unmatched.
    pub order: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityProfile {
    pub horizon: f64,
    pub r0: f64,
    pub mu0: f64,
    pub mu: Vec<f64>,
    /// Windowed negative-order estimate s*(μ); `None` where not converged.
    pub s_star: Vec<Option<f64>>,
    pub xi_raw: Vec<Option<f64>>,
    /// Isotonic projection of `xi_raw`.
    pub xi: Vec<Option<f64>>,
    pub half_width: Vec<f64>,
    pub anchors: Vec<Anchor>,
}

/// Weighted pool-adjacent-violators: the nondecreasing least-squares fit.
pub fn isotonic(y: &[f64], w: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (v, wt) in y.iter().zip(w) {
        blocks.push((*v, *wt, 1));
        while blocks.len() > 1 {
            let (v1, w1, n1) = blocks[blocks.len() - 1];
            let (v0, w0, n0) = blocks[blocks.len() - 2];
            if v0 <= v1 {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().expect("two blocks");
            let ws = w0 + w1;
            *last = ((v0 * w0 + v1 * w1) / ws, ws, n0 + n1);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, _, n)| std::iter::repeat(v).take(n))
        .collect()
}

/// Order-preserving assignment of candidates (sorted by μ) to known singular
/// times (sorted ascending). `cost(i, j)` is the squared score of pairing
/// candidate i with time j, `None` when the pair is ruled out; each skipped
/// candidate costs `skip`.
fn align<C: Fn(usize, usize) -> Option<f64>>(n: usize, m: usize, cost: C, skip: f64) -> Vec<Option<usize>> {
    let inf = f64::INFINITY;
    let mut acc = vec![vec![inf; m + 1]; n + 1];
    // 0 = skip candidate, 1 = match, 2 = skip known time.
    let mut back = vec![vec![0u8; m + 1]; n + 1];
    for c in acc[0].iter_mut() {
        *c = 0.0;
    }
    for i in 1..=n {
        for j in 0..=m {
            let mut best = acc[i - 1][j] + skip;
            let mut how = 0;
            if j > 0 {
                if let Some(z2) = cost(i - 1, j - 1) {
                    if acc[i - 1][j - 1] + z2 < best {
                        best = acc[i - 1][j - 1] + z2;
                        how = 1;
                    }
                }
                if acc[i][j - 1] < best {
                    best = acc[i][j - 1];
                    how = 2;
                }
            }
            acc[i][j] = best;
            back[i][j] = how;
        }
    }
    let mut out = vec![None; n];
    let (mut i, mut j) = (n, m);
    while i > 0 {
        match back[i][j] {
            0 => i -= 1,
            1 => {
                out[i - 1] = Some(j - 1);
                i -= 1;
                j -= 1;
            }
            _ => j -= 1,
        }
    }
    out
}

/// Gaussian gate on a standardised score.
fn gated(z: f64) -> Option<f64> {
    (z.abs() <= 4.0).then_some(z * z)
}

fn profile(
    a: &Analysed,
    det: &Mu0Detection,
    r0: f64,
    horizon: f64,
    probe: Option<&ProbeSignal>,
    cfg: &InversionConfig,
) -> Result<RegularityProfile, InversionError> {
    let mu0 = det.mu0.ok_or(InversionError::NoArrival)?;
    let dt = a.dt;
    let n = a.ba.len();
    let first_end = det.window_end.unwrap_or(mu0);
    let count = cfg.window_count;
    let known: Vec<(f64, usize, f64)> = probe
        .and_then(|p| p.shape.as_ref())
        .map(|s| {
            let mut v: Vec<(f64, usize, f64)> = s
                .singular_times()
                .iter()
                .map(|t| (t.time, t.order, t.weight.abs().log2()))
                .collect();
            v.sort_by(|x, y| x.0.total_cmp(&y.0));
            v.dedup_by(|x, y| (x.0 - y.0).abs() < 1e-12);
            v
        })
        .unwrap_or_default();
    let gap_above = |xi: f64| -> f64 {
        known
            .iter()
            .map(|k| k.0)
            .find(|t| *t > xi)
            .map(|t| t - xi)
            .unwrap_or(0.0)
    };
    let sigma_xi = horizon * cfg.snap_sigma / r0;

    let mut mu = Vec::with_capacity(count + 1);
    let mut s_star = Vec::with_capacity(count + 1);
    let mut xi_raw = Vec::with_capacity(count + 1);
    let mut half_width = Vec::with_capacity(count + 1);
    for j in 0..=count {
        let m = if j == 0 {
            first_end
        } else {
            first_end + (horizon - first_end) * j as f64 / count as f64
        };
        let end = ((m / dt).round() as usize).clamp(1, n);
        let est = a.ba.window(end, SearchRange::POSITIVE);
        mu.push(m);
        if est.converged && !est.smooth {
            let x = cfg.xi_of_s(est.s_star, r0, horizon).clamp(0.0, m);
            s_star.push(Some(est.s_star - 1.0));
            xi_raw.push(Some(x));
            half_width.push(2.0 * sigma_xi + gap_above(x));
        } else {
            s_star.push(None);
            xi_raw.push(None);
            half_width.push(f64::NAN);
        }
    }
    let present: Vec<(usize, f64)> = xi_raw
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();
    let fitted = isotonic(
        &present.iter().map(|p| p.1).collect::<Vec<_>>(),
        &vec![1.0; present.len()],
    );
    let mut xi = vec![None; mu.len()];
    for ((i, _), v) in present.iter().zip(fitted) {
        xi[*i] = Some(v);
    }

    // Anchors from the individual singular candidates of the full record;
    // fits truncated by the end of the record are biased and left out.
    let full = (cfg.band.last_scale - cfg.band.first_scale + 1) as usize;
    let lo = ((mu0 / dt).round() as usize).saturating_sub(2);
    let cands: Vec<Candidate> = a
        .ba
        .candidates(n)
        .into_iter()
        .filter(|c| c.index >= lo && a.singular(c, r0, cfg) && c.scales_used == full)
        .collect();
    let pred: Vec<f64> = cands.iter().map(|c| cfg.xi_of_s(c.s, r0, horizon)).collect();
    let mut anchors: Vec<Anchor> = if known.is_empty() {
        let iso = isotonic(&pred, &vec![1.0; pred.len()]);
        cands
            .iter()
            .zip(pred.iter().zip(iso))
            .map(|(c, (p, x))| Anchor {
                mu: c.index as f64 * dt,
                xi: x.clamp(0.0, c.index as f64 * dt),
                s: c.s,
                xi_from_s: *p,
                log2_amplitude: c.log2_amplitude,
                order: None,
            })
            .collect()
    } else {
        let times: Vec<f64> = known.iter().map(|k| k.0).collect();
        let by_time = |i: usize, j: usize| gated((pred[i] - times[j]) / sigma_xi);
        let first = align(pred.len(), times.len(), by_time, cfg.skip_penalty);
        // The amplitude of an arrival tracks the probe weight up to a slowly
        // varying factor; the first pass calibrates that offset, the second
        // uses it to separate neighbours whose exponents are close.
        let mut offsets: Vec<f64> = first
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|j| cands[i].log2_amplitude - known[j].2))
            .collect();
        let matched = if offsets.is_empty() {
            first
        } else {
            let offset = median(&mut offsets);
            let sigma_amp = cfg.snap_sigma_amplitude;
            align(
                pred.len(),
                times.len(),
                |i, j| {
                    let za = (cands[i].log2_amplitude - known[j].2 - offset) / sigma_amp;
                    Some(by_time(i, j)? + gated(za)?)
                },
                cfg.skip_penalty,
            )
        };
        cands
            .iter()
            .zip(&pred)
            .zip(matched)
            .filter_map(|((c, p), m)| {
                m.map(|j| Anchor {
                    mu: c.index as f64 * dt,
                    xi: times[j],
                    s: c.s,
                    xi_from_s: *p,
                    log2_amplitude: c.log2_amplitude,
                    order: Some(known[j].1),
                })
            })
            .filter(|a| a.xi < a.mu)
            .collect()
    };

    if let (Some(p), true) = (probe, anchors.len() >= 2) {
        for _ in 0..cfg.refine_iterations {
            refine_anchors(&a.q, dt, p, &mut anchors, cfg.refine_window)?;
        }
    }
    Ok(RegularityProfile {
        horizon,
        r0,
        mu0,
        mu,
        s_star,
        xi_raw,
        xi,
        half_width,
        anchors,
    })
}

/// Average of f∘ξ over the μ-cell [lo, hi].
fn mapped_average<F: Fn(f64) -> f64>(probe: &ProbeSignal, xi: &F, lo: f64, hi: f64) -> f64 {
    let mut nodes = [0.0; 6];
    for (n, u) in nodes.iter_mut().zip(gauss_nodes()) {
        *n = xi(lo + (hi - lo) * u);
    }
    probe.cell_average(&MappedCell {
        lo: xi(lo),
        hi: xi(hi),
        nodes,
    })
}

/// Least-squares residual of y ≈ β m + γ₀ + γ₁ i.
fn local_rss(y: &[f64], m: &[f64]) -> f64 {
    let n = y.len();
    let a = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => m[i],
        1 => 1.0,
        _ => i as f64 / n as f64,
    });
    let b = DVector::from_column_slice(y);
    match a.clone().svd(true, true).solve(&b, 1e-14) {
        Ok(x) => (&a * x - b).norm_squared(),
        Err(_) => f64::INFINITY,
    }
}

/// Moves each anchor by a sub-sample shift so that the local shape of the
/// primitive of g matches f∘ξ̂ with the singular point at the shifted μ.
fn refine_anchors(
    q: &[f64],
    dt: f64,
    probe: &ProbeSignal,
    anchors: &mut [Anchor],
    window: usize,
) -> Result<(), InversionError> {
    let mus: Vec<f64> = anchors.iter().map(|a| a.mu).collect();
    let xis: Vec<f64> = anchors.iter().map(|a| a.xi).collect();
    let spline = Spline::new(&mus, &xis)?;
    let n = q.len();
    for (idx, anchor) in anchors.iter_mut().enumerate() {
        let c = (mus[idx] / dt).round() as i64;
        // Stay clear of the neighbouring anchors.
        let mut lo = c - window as i64;
        let mut hi = c + window as i64;
        if idx > 0 {
            lo = lo.max(((mus[idx - 1] + mus[idx]) / (2.0 * dt)) as i64);
        }
        if idx + 1 < mus.len() {
            hi = hi.min(((mus[idx] + mus[idx + 1]) / (2.0 * dt)) as i64);
        }
        let lo = lo.max(0) as usize;
        let hi = (hi.max(0) as usize).min(n - 1);
        if hi < lo + 8 {
            continue;
        }
        let y = &q[lo..=hi];
        let rss = |d: f64| {
            let map = |m: f64| spline.eval(m - d * dt).0;
            let model: Vec<f64> = (lo..=hi)
                .map(|i| {
                    let m = i as f64 * dt;
                    mapped_average(probe, &map, m, m + dt)
                })
                .collect();
            local_rss(y, &model)
        };
        // Coarse sweep over ±4 samples, then a fine one around the minimum.
        let mut best = 0.0;
        for (span, step) in [(4.0f64, 0.1f64), (0.1, 0.004)] {
            let centre = best;
            let count = (span / step).round() as i64;
            best = (-count..=count)
                .map(|k| centre + k as f64 * step)
                .map(|d| (d, rss(d)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(d, _)| d)
                .unwrap_or(centre);
        }
        anchor.mu = mus[idx] + best * dt;
    }
    Ok(())
}

/// Derivative at `t` of the least-squares cubic through the `npts` nearest points.
fn local_slope(xs: &[f64], ys: &[f64], t: f64, npts: usize) -> f64 {
    let n = xs.len();
    let take = npts.min(n);
    let deg = 3.min(take - 1);
    let nearest = xs.partition_point(|x| *x < t);
    let start = nearest.saturating_sub(take / 2).min(n - take);
    let (x, y) = (&xs[start..start + take], &ys[start..start + take]);
    let h = (x[take - 1] - x[0]).max(1e-12);
    let a = DMatrix::from_fn(take, deg + 1, |i, j| ((x[i] - t) / h).powi(j as i32));
    let b = DVector::from_column_slice(y);
    match a.svd(true, true).solve(&b, 1e-14) {
        Ok(c) if deg >= 1 => c[1] / h,
        _ => 0.0,
    }
}

/// ξ̂ on a μ-grid over (μ̂₀, T] from windowed estimates, plus anchors pinned by
/// individual arrivals (matched to the probe's singular times when known).
pub fn xi_profile(
    g: &Measurement,
    r0: f64,
    horizon: f64,
    probe: Option<&ProbeSignal>,
    cfg: &InversionConfig,
) -> Result<RegularityProfile, InversionError> {
    cfg.validate()?;
    let a = Analysed::new(g, cfg)?;
    let det = detect(&a, r0, cfg);
    profile(&a, &det, r0, horizon, probe, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEstimate {
    pub t: Vec<f64>,
    pub a: Vec<f64>,
    pub adot: Vec<f64>,
    /// Anchor points (t_n, a_n) = ((μ + ξ)/2, (μ − ξ)/2).
    pub anchor_t: Vec<f64>,
    pub anchor_a: Vec<f64>,
    pub t0: f64,
    /// Last time pinned by an anchor.
    pub t_max: f64,
    /// ξ̂(T), extrapolated from the last anchors.
    pub s_star_t: f64,
    /// (T + ξ̂(T))/2.
    pub t_max_extrapolated: f64,
}

/// Trajectory from the anchors of a profile: â interpolates the anchor points
/// with a natural cubic spline, ȧ̂ is the slope of a local cubic fit through
/// the five nearest anchors (the spline's end conditions bias its slope).
pub fn reconstruct_a(
    profile: &RegularityProfile,
    grid_points: usize,
) -> Result<TrajectoryEstimate, InversionError> {
    let anchors = &profile.anchors;
    if anchors.is_empty() {
        return Err(InversionError::EmptyProfile);
    }
    let at: Vec<f64> = anchors.iter().map(|a| 0.5 * (a.mu + a.xi)).collect();
    let aa: Vec<f64> = anchors.iter().map(|a| 0.5 * (a.mu - a.xi)).collect();
    let t0 = at[0];
    let t_max = *at.last().expect("nonempty");
    if anchors.len() == 1 {
        let s = anchors[0].xi + (profile.horizon - anchors[0].mu);
        return Ok(TrajectoryEstimate {
            t: vec![t0],
            a: vec![aa[0]],
            adot: vec![0.0],
            anchor_t: at,
            anchor_a: aa,
            t0,
            t_max,
            s_star_t: s,
            t_max_extrapolated: 0.5 * (profile.horizon + s),
        });
    }
    let spline = Spline::new(&at, &aa)?;
    let t: Vec<f64> = (0..grid_points)
        .map(|i| t0 + (t_max - t0) * i as f64 / (grid_points - 1) as f64)
        .collect();
    let a: Vec<f64> = t.iter().map(|x| spline.eval(*x).0).collect();
    let adot: Vec<f64> = t.iter().map(|x| local_slope(&at, &aa, *x, 5)).collect();
    // Linear extrapolation of ξ(μ) from the last anchor to T.
    let last = anchors.len() - 1;
    let d_last = local_slope(&at, &aa, t_max, 5);
    let slope = (1.0 - d_last) / (1.0 + d_last);
    let s_star_t = anchors[last].xi + slope * (profile.horizon - anchors[last].mu);
    Ok(TrajectoryEstimate {
        t,
        a,
        adot,
        anchor_t: at,
        anchor_a: aa,
        t0,
        t_max,
        s_star_t,
        t_max_extrapolated: 0.5 * (profile.horizon + s_star_t),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    /// Coefficients of α·dμ/dξ in powers of (t − centre)/half_width.
    pub coeffs: Vec<f64>,
    pub centre: f64,
    pub half_width: f64,
    pub t: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Rough-band energy of the residual relative to that of g.
    pub residual: f64,
}

impl AlphaEstimate {
    pub fn a_mu(&self, t: f64) -> f64 {
        let s = (t - self.centre) / self.half_width;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }
}

/// Fits g(μ) ≈ 2 P(t(μ)) d/dμ f(ξ̂(μ)) with P = α·dμ/dξ a polynomial in t,
/// by least squares on fine dyadic differences of the primitive. Smooth
/// perturbations of g carry almost no energy in those bands.
pub fn estimate_alpha(
    g: &Measurement,
    probe: &ProbeSignal,
    profile: &RegularityProfile,
    traj: &TrajectoryEstimate,
    cfg: &InversionConfig,
) -> Result<AlphaEstimate, InversionError> {
    let anchors = &profile.anchors;
    if anchors.len() < 2 {
        return Err(InversionError::Degenerate(
            "at least two anchors are needed".into(),
        ));
    }
    let dt = g.dt;
    let mus: Vec<f64> = anchors.iter().map(|a| a.mu).collect();
    let xis: Vec<f64> = anchors.iter().map(|a| a.xi).collect();
    let xi_of_mu = Spline::new(&mus, &xis)?;
    let xi = |m: f64| xi_of_mu.eval(m).0;
    let i_lo = (mus[0] / dt).floor() as usize;
    let i_hi = ((mus[mus.len() - 1] / dt).floor() as usize).min(g.samples.len() - 1);
    if i_hi <= i_lo + 8 {
        return Err(InversionError::Degenerate("anchors span too few samples".into()));
    }
    // Cell averages of f∘ξ̂ over [μ_i − dt, μ_i].
    let cells: Vec<f64> = (i_lo..=i_hi + 1)
        .map(|i| {
            let hi = i as f64 * dt;
            mapped_average(probe, &xi, hi - dt, hi)
        })
        .collect();
    let centre = 0.5 * (traj.t0 + traj.t_max);
    let half = (0.5 * (traj.t_max - traj.t0)).max(1e-9);
    let ncol = cfg.degree + 1;
    let len = i_hi - i_lo + 1;
    let mut cols = vec![vec![0.0; len]; ncol];
    for r in 0..len {
        let i = i_lo + r;
        let m = i as f64 * dt;
        let s = (0.5 * (m + xi(m)) - centre) / half;
        let d = 2.0 * (cells[r + 1] - cells[r]) / dt;
        let mut p = 1.0;
        for col in cols.iter_mut() {
            col[r] = p * d;
            p *= s;
        }
    }
    let target: Vec<f64> = g.samples[i_lo..=i_hi].to_vec();
    let prim_cols: Vec<Vec<f64>> = cols.iter().map(|c| primitive(c, dt)).collect();
    let prim_t = primitive(&target, dt);

    // Exclude stencils that touch the immediate neighbourhood of an anchor.
    let mut masked = vec![false; len];
    for a in anchors {
        let c = (a.mu / dt).round() as i64 - i_lo as i64;
        for k in -(cfg.anchor_mask as i64)..=cfg.anchor_mask as i64 {
            let r = c + k;
            if r >= 0 && (r as usize) < len {
                masked[r as usize] = true;
            }
        }
    }
    let mut blocked = vec![0usize; len + 1];
    for r in 0..len {
        blocked[r + 1] = blocked[r] + masked[r] as usize;
    }
    let order = cfg.band.order;
    let coef: Vec<f64> = (0..=order)
        .map(|k| {
            let c = binomial(order, k);
            if (order - k) % 2 == 0 {
                c
            } else {
                -c
            }
        })
        .collect();
    let mut ata = DMatrix::<f64>::zeros(ncol, ncol);
    let mut atb = DVector::<f64>::zeros(ncol);
    let mut btb = 0.0;
    let mut row = vec![0.0; ncol];
    // Steps 1, 2, 4 and 8.
    for j in 0..4 {
        let step = 1usize << j;
        let span = order * step;
        if span >= len {
            break;
        }
        for i in 0..len - span {
            if blocked[i + span + 1] != blocked[i] {
                continue;
            }
            let diff = |v: &[f64]| -> f64 { coef.iter().enumerate().map(|(k, c)| c * v[i + k * step]).sum() };
            let y = diff(&prim_t);
            for (rv, pc) in row.iter_mut().zip(&prim_cols) {
                *rv = diff(pc);
            }
            for p in 0..ncol {
                atb[p] += row[p] * y;
                for q in 0..ncol {
                    ata[(p, q)] += row[p] * row[q];
                }
            }
            btb += y * y;
        }
    }
    let scale = ata.diagonal().max();
    if !(scale > 0.0) || !(btb > 0.0) {
        return Err(InversionError::Degenerate("f′ vanishes over the fit window".into()));
    }
    let eig = ata.clone().symmetric_eigen();
    let (emin, emax) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if emin <= 1e-13 * emax {
        return Err(InversionError::Degenerate(format!(
            "normal equations are singular (eigenvalue ratio {:.1e})",
            emin / emax
        )));
    }
    let sol = ata
        .clone()
        .cholesky()
        .ok_or_else(|| InversionError::Degenerate("normal equations not positive".into()))?
        .solve(&atb);
    let res = (btb - 2.0 * sol.dot(&atb) + (sol.transpose() * &ata * &sol)[(0, 0)]).max(0.0);
    let coeffs: Vec<f64> = sol.iter().copied().collect();
    let mut est = AlphaEstimate {
        coeffs,
        centre,
        half_width: half,
        t: traj.t.clone(),
        alpha: Vec::new(),
        residual: (res / btb).sqrt(),
    };
    est.alpha = traj
        .t
        .iter()
        .zip(&traj.adot)
        .map(|(t, v)| est.a_mu(*t) * (1.0 - v) / (1.0 + v))
        .collect();
    Ok(est)
}

fn binomial(p: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |c, i| c * (p - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RootVerdict {
    UniquePositive,
    Ambiguous,
    None,
}

/// Roots of (α + 1 + ȧ(α − 1)) k² + (α − 1) k + ȧ(1 − α) = 0 at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootSample {
    pub t: f64,
    pub alpha: f64,
    pub adot: f64,
    pub discriminant: f64,
    pub k1: f64,
    pub k2: f64,
}

impl RootSample {
    pub fn solve(t: f64, alpha: f64, adot: f64) -> Result<Self, InversionError> {
        let (l, b, c) = contrast_quadratic(alpha, adot);
        if !(l > 0.0) {
            return Err(InversionError::LeadingCoefficient { t, lead: l });
        }
        let disc = b * b - 4.0 * l * c;
        if disc < 0.0 {
            return Err(InversionError::NegativeDiscriminant { t, disc });
        }
        let sq = disc.sqrt();
        // Cancellation-free pair.
        let qv = -0.5 * (b + b.signum() * sq);
        let (r1, r2) = if qv == 0.0 {
            (0.0, 0.0)
        } else {
            (qv / l, c / qv)
        };
        Ok(Self {
            t,
            alpha,
            adot,
            discriminant: disc,
            k1: r1.min(r2),
            k2: r1.max(r2),
        })
    }

    /// Value of the quadratic at k.
    pub fn residual(&self, k: f64) -> f64 {
        let (l, b, c) = contrast_quadratic(self.alpha, self.adot);
        (l * k + b) * k + c
    }
}

/// (leading, linear, constant) coefficients of the contrast equation.
pub fn contrast_quadratic(alpha: f64, adot: f64) -> (f64, f64, f64) {
    (alpha + 1.0 + adot * (alpha - 1.0), alpha - 1.0, adot * (1.0 - alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootReport {
    pub verdict: RootVerdict,
    /// Median of the selected positive root (unique-positive only).
    pub k: Option<f64>,
    /// Medians of the smaller and larger roots.
    pub k1: f64,
    pub k2: f64,
    /// Sample whose roots are reported verbatim: the largest ȧ̂ when
    /// ambiguous, the median root otherwise.
    pub reference: RootSample,
    /// Largest |k₁k₂ − ȧ(k₁ + k₂)| relative to max(1, |k₁k₂|).
    pub max_vieta_defect: f64,
    pub samples: Vec<RootSample>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Solves the contrast equation at every sample and aggregates by median.
pub fn recover_k(
    t: &[f64],
    alpha: &[f64],
    adot: &[f64],
    tol_adot: f64,
) -> Result<RootReport, InversionError> {
    if t.is_empty() || t.len() != alpha.len() || t.len() != adot.len() {
        return Err(InversionError::InvalidParameter(
            "alpha and adot must share a nonempty grid".into(),
        ));
    }
    let samples = t
        .iter()
        .zip(alpha.iter().zip(adot))
        .map(|(t, (a, v))| RootSample::solve(*t, *a, *v))
        .collect::<Result<Vec<_>, _>>()?;
    let max_vieta_defect = samples
        .iter()
        .map(|s| (s.k1 * s.k2 - s.adot * (s.k1 + s.k2)).abs() / (s.k1 * s.k2).abs().max(1.0))
        .fold(0.0, f64::max);
    let non_positive_motion = adot.iter().all(|v| *v <= tol_adot);
    let one_positive = samples.iter().all(|s| s.k1 <= 0.0 && s.k2 > 0.0);
    let none_positive = samples.iter().all(|s| s.k2 <= 0.0);
    let k1 = median(&mut samples.iter().map(|s| s.k1).collect::<Vec<_>>());
    let k2 = median(&mut samples.iter().map(|s| s.k2).collect::<Vec<_>>());
    let (verdict, k) = if none_positive {
        (RootVerdict::None, None)
    } else if non_positive_motion || one_positive {
        (RootVerdict::UniquePositive, Some(k2))
    } else {
        (RootVerdict::Ambiguous, None)
    };
    let reference = match verdict {
        RootVerdict::Ambiguous => *samples
            .iter()
            .max_by(|a, b| a.adot.total_cmp(&b.adot))
            .expect("nonempty"),
        _ => *samples
            .iter()
            .min_by(|a, b| (a.k2 - k2).abs().total_cmp(&(b.k2 - k2).abs()))
            .expect("nonempty"),
    };
    Ok(RootReport {
        verdict,
        k,
        k1,
        k2,
        reference,
        max_vieta_defect,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub mu0: f64,
    pub trajectory: TrajectoryEstimate,
    pub alpha: AlphaEstimate,
    pub roots: RootReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub detection: Mu0Detection,
    pub profile: Option<RegularityProfile>,
    pub reconstruction: Option<Reconstruction>,
}

/// Full pipeline. A record without singular arrivals yields the verdict
/// T ≤ μ₀ and no reconstruction.
pub fn invert(
    g: &Measurement,
    probe: &ProbeSignal,
    horizon: f64,
    cfg: &InversionConfig,
) -> Result<InversionReport, InversionError> {
    cfg.validate()?;
    let r0 = probe.r0;
    let a = Analysed::new(g, cfg)?;
    let detection = detect(&a, r0, cfg);
    if detection.verdict == Mu0Verdict::NotReached {
        return Ok(InversionReport {
            detection,
            profile: None,
            reconstruction: None,
        });
    }
    let prof = profile(&a, &detection, r0, horizon, Some(probe), cfg)?;
    let traj = reconstruct_a(&prof, cfg.grid_points)?;
    let alpha = estimate_alpha(g, probe, &prof, &traj, cfg)?;
    if let Some((t, al)) = alpha
        .t
        .iter()
        .zip(&alpha.alpha)
        .find(|(_, al)| al.abs() < cfg.alpha_gate)
    {
        return Err(InversionError::AlphaGate {
            t: *t,
            alpha: *al,
            gate: cfg.alpha_gate,
        });
    }
    let roots = recover_k(&traj.t, &alpha.alpha, &traj.adot, cfg.tol_adot)?;
    Ok(InversionReport {
        reconstruction: Some(Reconstruction {
            mu0: prof.mu0,
            trajectory: traj,
            alpha,
            roots,
        }),
        detection,
        profile: Some(prof),
    })
}
