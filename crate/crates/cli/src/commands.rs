//! Pipeline commands. Each writes its artifacts plus `run.json` (manifest
//! and checks) into the output directory; wall-clock timings go to
//! `run_timing.json`, which is outside the manifest.

use crate::config::{ExperimentConfig, Prepared, Source};
use crate::io::{read_column, ArtifactWriter, ManifestEntry};
use crate::CliError;
use echolab_core::ansatz::AnsatzField;
use echolab_core::inversion::{invert, InversionReport, RootSample, RootVerdict};
use echolab_core::medium::{coefficients, CharMaps, InterfaceTrajectory, MediumSpec, TrajectoryKind};
use echolab_core::probe::{Origin, ProbeSignal};
use echolab_core::solver::{integrate, lift, measure_g, Measurement, MeasurementMeta};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const MEASUREMENT_CSV: &str = "measurement.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: String,
    pub medium_hash: String,
    pub files: Vec<ManifestEntry>,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    command: String,
    stages: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSidecar {
    pub config_hash: String,
    pub medium_hash: String,
    pub r0: f64,
    pub dt: f64,
    pub samples: usize,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSidecar {
    pub config_hash: String,
    pub medium_hash: String,
    pub dt: f64,
    pub samples: usize,
    pub meta: MeasurementMeta,
}

/// Exit status and a short report for stdout.
#[derive(Debug)]
pub struct Outcome {
    pub code: u8,
    pub report: serde_json::Value,
}

pub struct Session {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub override_hash: bool,
    pub measurement: Option<PathBuf>,
    command: String,
    stages: Vec<(String, f64)>,
    checks: Vec<Check>,
}

fn stage<T, E: std::fmt::Display>(name: &'static str, r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Runtime {
        stage: name,
        message: e.to_string(),
    })
}

impl Session {
    pub fn new(
        config: ExperimentConfig,
        out: PathBuf,
        override_hash: bool,
        measurement: Option<PathBuf>,
        command: &str,
    ) -> Self {
        Self {
            config,
            out,
            override_hash,
            measurement,
            command: command.to_string(),
            stages: Vec::new(),
            checks: Vec::new(),
        }
    }

    fn timed<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let v = f();
        self.stages.push((name.to_string(), t.elapsed().as_secs_f64()));
        v
    }

    fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn finish(&mut self, w: &mut ArtifactWriter) -> Result<bool, CliError> {
        let record = RunRecord {
            command: self.command.clone(),
            config_hash: self.config.hash(),
            medium_hash: self.config.medium_hash(),
            files: w.entries().to_vec(),
            checks: self.checks.clone(),
        };
        w.json("run.json", &record)?;
        w.untracked(
            "run_timing.json",
            &Timing {
                command: self.command.clone(),
                stages: self.stages.clone(),
            },
        )?;
        Ok(self.checks.iter().all(|c| c.passed))
    }

    fn prepare(&mut self) -> Result<Prepared, CliError> {
        let c = self.config.clone();
        self.timed("validate", || c.prepare())
    }

    pub fn validate(&mut self) -> Result<Outcome, CliError> {
        let p = self.prepare()?;
        let h1d = p.medium.require_h1d().map_err(|e| CliError::Validation(e.to_string()))?;
        let mu0 = p.medium.mu0().ok();
        let report = serde_json::json!({
            "config_hash": self.config.hash(),
            "medium_hash": self.config.medium_hash(),
            "h1d": h1d,
            "mu0": mu0,
            "horizon": p.medium.horizon,
            "probe_dt": p.probe.dt,
            "dt_ode": p.dt_ode,
            "substeps": p.substeps,
            "blocks": ["medium", "probe", "solver", "inversion"],
        });
        Ok(Outcome { code: 0, report })
    }

    fn write_probe(&self, w: &mut ArtifactWriter, probe: &ProbeSignal) -> Result<(), CliError> {
        w.csv("probe.csv", &["t", "f"], &[&probe.times(), &probe.samples])?;
        w.json(
            "probe.json",
            &ProbeSidecar {
                config_hash: self.config.hash(),
                medium_hash: self.config.medium_hash(),
                r0: probe.r0,
                dt: probe.dt,
                samples: probe.samples.len(),
                origin: probe.origin,
            },
        )?;
        Ok(())
    }

    fn write_measurement(&self, w: &mut ArtifactWriter, name: &str, g: &Measurement) -> Result<PathBuf, CliError> {
        let path = w.csv(&format!("{name}.csv"), &["t", "g"], &[&g.times(), &g.samples])?;
        w.json(
            &format!("{name}.json"),
            &MeasurementSidecar {
                config_hash: self.config.hash(),
                medium_hash: self.config.medium_hash(),
                dt: g.dt,
                samples: g.samples.len(),
                meta: g.meta.clone(),
            },
        )?;
        Ok(path)
    }

    pub fn probe(&mut self) -> Result<Outcome, CliError> {
        let p = self.prepare()?;
        let mut w = ArtifactWriter::new(&self.out)?;
        self.write_probe(&mut w, &p.probe)?;
        self.finish(&mut w)?;
        Ok(Outcome {
            code: 0,
            report: serde_json::json!({"probe": "probe.csv", "samples": p.probe.samples.len()}),
        })
    }

    fn ansatz_trace(&mut self, p: &Prepared) -> Result<Measurement, CliError> {
        let (m, probe) = (p.medium.clone(), p.probe.clone());
        let g = self.timed("ansatz", || {
            AnsatzField::new(m, probe, None).and_then(|a| a.trace())
        });
        Ok(stage("ansatz", g)?.into())
    }

    fn solver_trace(&mut self, p: &Prepared) -> Result<Measurement, CliError> {
        let filter = self.config.solver.filter;
        let g = self.timed("simulate", || {
            let l = lift(&p.medium, p.basis, p.probe.clone(), None, None)?;
            let traj = integrate(&p.medium, &l, p.dt_ode, p.substeps)?;
            Ok::<_, echolab_core::solver::SolverError>(measure_g(&traj, filter, l.a_m))
        });
        stage("simulate", g)
    }

    pub fn ansatz(&mut self) -> Result<Outcome, CliError> {
        let p = self.prepare()?;
        let g = self.ansatz_trace(&p)?;
        let mut w = ArtifactWriter::new(&self.out)?;
        self.write_measurement(&mut w, "ansatz", &g)?;
        let mu0 = p.medium.mu0().ok();
        if let Some(mu0) = mu0 {
            let quiet = g
                .samples
                .iter()
                .enumerate()
                .take_while(|(i, _)| (*i as f64) * g.dt < mu0 - 2.0 * g.dt)
                .all(|(_, v)| *v == 0.0);
            self.check(Check::new("trace_vanishes_before_mu0", quiet, format!("mu0 {mu0}")));
        }
        let ok = self.finish(&mut w)?;
        Ok(Outcome {
            code: if ok { 0 } else { 1 },
            report: serde_json::json!({"measurement": "ansatz.csv", "mu0": mu0}),
        })
    }

    pub fn simulate(&mut self) -> Result<Outcome, CliError> {
        let p = self.prepare()?;
        let g = self.solver_trace(&p)?;
        let mut w = ArtifactWriter::new(&self.out)?;
        self.write_measurement(&mut w, "measurement", &g)?;
        self.finish(&mut w)?;
        Ok(Outcome {
            code: 0,
            report: serde_json::json!({
                "measurement": MEASUREMENT_CSV,
                "n_modes": p.basis.n,
                "dt_ode": p.dt_ode,
            }),
        })
    }

    fn load_measurement(&self, csv: &Path) -> Result<Measurement, CliError> {
        let side = csv.with_extension("json");
        let text = std::fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
        let meta: MeasurementSidecar = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", side.display())))?;
        let expected = self.config.medium_hash();
        if meta.medium_hash != expected && !self.override_hash {
            return Err(CliError::HashMismatch {
                found: meta.medium_hash,
                expected,
            });
        }
        let samples = read_column(csv, "g")?;
        if samples.len() != meta.samples {
            return Err(CliError::Config(format!(
                "{}: {} samples, sidecar says {}",
                csv.display(),
                samples.len(),
                meta.samples
            )));
        }
        Ok(Measurement {
            samples,
            dt: meta.dt,
            meta: meta.meta,
        })
    }

    fn write_inversion(
        &mut self,
        w: &mut ArtifactWriter,
        medium: &MediumSpec,
        rep: &InversionReport,
    ) -> Result<(), CliError> {
        w.json("reconstruction.json", rep)?;
        if let Some(pr) = &rep.profile {
            let opt = |v: &[Option<f64>]| v.iter().map(|x| x.unwrap_or(f64::NAN)).collect::<Vec<_>>();
            w.csv(
                "profile.csv",
                &["mu", "s_star", "xi_raw", "xi", "half_width"],
                &[&pr.mu, &opt(&pr.s_star), &opt(&pr.xi_raw), &opt(&pr.xi), &pr.half_width],
            )?;
        }
        if let Some(r) = &rep.reconstruction {
            let tj = &r.trajectory;
            let a_true: Vec<f64> = tj.t.iter().map(|t| medium.trajectory.position(*t)).collect();
            let adot_true: Vec<f64> = tj.t.iter().map(|t| medium.trajectory.velocity(*t)).collect();
            let alpha_true: Vec<f64> = tj.t.iter().map(|t| medium.reflection_coeffs(*t).alpha).collect();
            w.csv(
                "reconstruction.csv",
                &["t", "a_true", "a_hat", "adot_true", "adot_hat", "alpha_true", "alpha_hat"],
                &[&tj.t, &a_true, &tj.a, &adot_true, &tj.adot, &alpha_true, &r.alpha.alpha],
            )?;
        }
        Ok(())
    }

    /// Summary and exit code of an inversion; ambiguity maps to 3.
    fn inversion_summary(&mut self, rep: &InversionReport) -> (u8, serde_json::Value) {
        match &rep.reconstruction {
            None => (0, serde_json::json!({"verdict": "T <= mu0"})),
            Some(r) => {
                let roots = &r.roots;
                let s = roots.reference;
                let code = if roots.verdict == RootVerdict::Ambiguous { 3 } else { 0 };
                if roots.verdict == RootVerdict::Ambiguous {
                    let worst = s.residual(s.k1).abs().max(s.residual(s.k2).abs());
                    self.check(Check::new(
                        "ambiguous_roots_solve_contrast_equation",
                        worst <= 1e-9,
                        format!("k1 {} k2 {} at t {} residual {worst:e}", s.k1, s.k2, s.t),
                    ));
                }
                self.check(Check::new(
                    "root_product_identity",
                    roots.max_vieta_defect <= 1e-6,
                    format!("max defect {:e}", roots.max_vieta_defect),
                ));
                (
                    code,
                    serde_json::json!({
                        "verdict": roots.verdict,
                        "mu0": r.mu0,
                        "k": roots.k,
                        "k1": s.k1,
                        "k2": s.k2,
                        "reference_t": s.t,
                        "t0": r.trajectory.t0,
                        "t_max": r.trajectory.t_max,
                        "s_star_T": r.trajectory.s_star_t,
                    }),
                )
            }
        }
    }

    pub fn invert(&mut self) -> Result<Outcome, CliError> {
        let p = self.prepare()?;
        let path = self
            .measurement
            .clone()
            .unwrap_or_else(|| self.out.join(MEASUREMENT_CSV));
        let g = self.load_measurement(&path)?;
        let cfg = self.config.inversion;
        let rep = self.timed("invert", || invert(&g, &p.probe, p.medium.horizon, &cfg));
        let rep = stage("inversion", rep)?;
        let mut w = ArtifactWriter::new(&self.out)?;
        self.write_inversion(&mut w, &p.medium, &rep)?;
        let (code, report) = self.inversion_summary(&rep);
        let ok = self.finish(&mut w)?;
        Ok(Outcome {
            code: if code == 0 && !ok { 1 } else { code },
            report,
        })
    }

    pub fn roundtrip(&mut self) -> Result<Outcome, CliError> {
        let p = self.prepare()?;
        let g = match self.config.source {
            Source::Ansatz => self.ansatz_trace(&p)?,
            Source::Solver => self.solver_trace(&p)?,
        };
        let mut w = ArtifactWriter::new(&self.out)?;
        self.write_probe(&mut w, &p.probe)?;
        self.write_measurement(&mut w, "measurement", &g)?;
        let cfg = self.config.inversion;
        let rep = self.timed("invert", || invert(&g, &p.probe, p.medium.horizon, &cfg));
        let rep = stage("inversion", rep)?;
        self.write_inversion(&mut w, &p.medium, &rep)?;

        let m = &p.medium;
        let mu0_true = m.mu0().ok().filter(|v| *v < m.horizon);
        let mut report = serde_json::json!({
            "k_true": m.k,
            "mu0_true": mu0_true,
        });
        match &rep.reconstruction {
            None => {
                self.check(Check::new(
                    "no_arrival_iff_horizon_before_mu0",
                    mu0_true.is_none(),
                    format!("true mu0 {mu0_true:?}"),
                ));
            }
            Some(r) => {
                let tj = &r.trajectory;
                let a_err = tj
                    .t
                    .iter()
                    .zip(&tj.a)
                    .map(|(t, a)| (a - m.trajectory.position(*t)).abs())
                    .fold(0.0, f64::max);
                self.check(Check::new(
                    "trajectory_within_2pct_of_b",
                    a_err <= 0.02 * m.b,
                    format!("max |a_hat - a| = {a_err:e} on [{}, {}]", tj.t0, tj.t_max),
                ));
                let mu0_err = mu0_true.map(|v| (r.mu0 - v).abs()).unwrap_or(f64::INFINITY);
                self.check(Check::new(
                    "mu0_within_0.05",
                    mu0_err <= 0.05,
                    format!("mu0_hat {} true {mu0_true:?}", r.mu0),
                ));
                if let Some(k) = r.roots.k {
                    let rel = (k - m.k).abs() / m.k;
                    self.check(Check::new(
                        "contrast_within_1pct",
                        rel <= 0.01,
                        format!("k_hat {k} true {} relative error {rel:e}", m.k),
                    ));
                    report["k_hat"] = serde_json::json!(k);
                    report["k_rel_error"] = serde_json::json!(rel);
                }
                report["max_a_error"] = serde_json::json!(a_err);
            }
        }
        let (code, summary) = self.inversion_summary(&rep);
        report["inversion"] = summary;
        report["checks"] = serde_json::to_value(&self.checks).expect("checks serialize");
        w.json("roundtrip.json", &report)?;
        let ok = self.finish(&mut w)?;
        Ok(Outcome {
            code: if code == 0 && !ok { 1 } else { code },
            report,
        })
    }

    /// Closed-form identities of the model, on a fixed sample of media and
    /// on the configured one.
    pub fn verify(&mut self) -> Result<Outcome, CliError> {
        let p = self.prepare()?;
        let checks = self.timed("verify", || identity_checks(&p));
        let checks = stage("verify", checks)?;
        for c in checks {
            self.check(c);
        }
        let mut w = ArtifactWriter::new(&self.out)?;
        w.json("verify.json", &self.checks)?;
        let ok = self.finish(&mut w)?;
        Ok(Outcome {
            code: if ok { 0 } else { 1 },
            report: serde_json::to_value(&self.checks).expect("checks serialize"),
        })
    }
}

/// 1000 (t, trajectory, k) triples on a stratified grid.
fn identity_media() -> Result<Vec<MediumSpec>, echolab_core::medium::MediumError> {
    let t = 2.0;
    let kinds = [
        TrajectoryKind::Constant { a0: 0.5 },
        TrajectoryKind::Affine { a0: 0.6, slope: -0.1 },
        TrajectoryKind::Affine { a0: 0.4, slope: 0.1 },
        TrajectoryKind::Sinusoidal {
            a0: 0.5,
            amplitude: 0.1,
            omega: std::f64::consts::PI,
            phase: 0.3,
        },
    ];
    let mut out = Vec::new();
    for kind in kinds {
        for k in [0.5, 2.0, 3.0] {
            let tr = InterfaceTrajectory::new(kind.clone(), t)?;
            out.push(MediumSpec::new(1.0, k, t, tr)?);
        }
    }
    Ok(out)
}

fn identity_checks(p: &Prepared) -> Result<Vec<Check>, echolab_core::medium::MediumError> {
    let mut media = identity_media()?;
    media.push(p.medium.clone());
    let per = 1000 / media.len() + 1;
    let (mut p0, mut p1, mut n) = (0.0f64, 0.0f64, 0usize);
    for m in &media {
        for i in 0..per {
            let t = m.horizon * (i as f64 + 0.5) / per as f64;
            let c = m.reflection_coeffs(t);
            p0 = p0.max((c.alpha * c.dmu_dxi - c.beta * c.dnu_dxi + 1.0).abs());
            p1 = p1.max((c.alpha + m.k * c.beta - 1.0).abs());
            n += 1;
        }
    }
    let mut checks = vec![
        Check::new(
            "alpha_dmu_minus_beta_dnu_is_minus_one",
            p0 <= 1e-12,
            format!("max defect {p0:e} over {n} samples"),
        ),
        Check::new(
            "alpha_plus_k_beta_is_one",
            p1 <= 1e-12,
            format!("max defect {p1:e} over {n} samples"),
        ),
    ];

    let m = &p.medium;
    let mut tau = 0.0f64;
    for i in 1..100 {
        let t = m.horizon * i as f64 / 100.0;
        let (a, b) = (m.jump_tau(t), m.jump_tau_numeric(t, 1e-4));
        tau = tau.max((a - b).abs() / (1.0 + a.abs()));
    }
    checks.push(Check::new(
        "flux_jump_matches_difference_quotient",
        tau <= 1e-6,
        format!("max relative defect {tau:e}"),
    ));

    let maps = CharMaps::new(m.clone());
    let mut inv = 0.0f64;
    for i in 0..=100 {
        let t = m.horizon * i as f64 / 100.0;
        for back in [
            maps.xi_inv(maps.xi(t)),
            maps.mu_inv(maps.mu(t)),
            maps.nu_inv(maps.nu(t)),
        ] {
            inv = inv.max((back? - t).abs());
        }
    }
    checks.push(Check::new(
        "characteristic_maps_invert",
        inv <= 1e-9,
        format!("max |map^-1(map(t)) - t| = {inv:e}"),
    ));

    let mut roots = 0.0f64;
    for (alpha, k) in [(-1.0 / 3.0, 2.0), (-0.5, 3.0), (1.0 / 3.0, 0.5)] {
        let s = RootSample::solve(0.0, alpha, 0.0).map_err(|e| {
            echolab_core::medium::MediumError::InvalidParameter(e.to_string())
        })?;
        roots = roots.max((s.k2 - k).abs());
    }
    for (k, adot) in [(2.0, -0.2), (0.5, -0.3), (3.0, -0.5)] {
        let c = coefficients(k, adot);
        let s = RootSample::solve(0.0, c.alpha, adot).map_err(|e| {
            echolab_core::medium::MediumError::InvalidParameter(e.to_string())
        })?;
        roots = roots.max((s.k2 - k).abs()).max(s.k1.max(0.0));
    }
    checks.push(Check::new(
        "contrast_roots_closed_form",
        roots <= 1e-9,
        format!("max error {roots:e}"),
    ));
    Ok(checks)
}
