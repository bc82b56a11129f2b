//! Experiment configuration: one JSON file with medium, probe, solver and
//! inversion blocks.

use crate::CliError;
use echolab_core::inversion::InversionConfig;
use echolab_core::medium::{InterfaceTrajectory, MediumSpec, TrajectoryKind};
use echolab_core::probe::{build_probe, smooth_pulse, GSpec, ProbeSignal};
use echolab_core::solver::{stability_limit, substeps_for, SpectralBasis, TraceFilter};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumBlock {
    pub b: f64,
    pub k: f64,
    /// Experiment horizon T; defaults to 2b.
    #[serde(default)]
    pub horizon: Option<f64>,
    pub trajectory: TrajectoryKind,
}

impl MediumBlock {
    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(2.0 * self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShapeBlock {
    G {
        #[serde(default = "default_terms")]
        n_terms: usize,
    },
    Pulse {
        center: f64,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
}

fn default_terms() -> usize {
    GSpec::default().n_terms
}

fn one() -> f64 {
    1.0
}

fn default_samples() -> usize {
    1 << 14
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    pub r0: f64,
    /// Samples on [0, T); dt = T / samples.
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub shape: ShapeBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub n_modes: usize,
    /// Integrator step; must divide the probe step. Chosen from the
    /// stability limit when absent.
    #[serde(default)]
    pub dt_ode: Option<f64>,
    #[serde(default)]
    pub filter: TraceFilter,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            n_modes: 512,
            dt_ode: None,
            filter: TraceFilter::default(),
        }
    }
}

/// Which forward model produces the measurement for `roundtrip`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    #[default]
    Ansatz,
    Solver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub medium: MediumBlock,
    pub probe: ProbeBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub source: Source,
    /// Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Everything built from a validated config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub medium: MediumSpec,
    pub probe: ProbeSignal,
    pub basis: SpectralBasis,
    pub dt_ode: f64,
    pub substeps: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse errors carry the line and column of the offending token, and the
    /// path of the enclosing block.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let block = if path == "." { "top level".to_string() } else { format!("block `{path}`") };
            CliError::Config(format!(
                "line {}, column {}: {block}: {inner}",
                inner.line(),
                inner.column()
            ))
        })
    }

    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }

    pub fn medium_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(&self.medium).expect("medium serializes"))
    }

    pub fn dt(&self) -> f64 {
        self.medium.horizon() / self.probe.samples as f64
    }

    /// Builds and checks every block; the first failure names its block.
    pub fn prepare(&self) -> Result<Prepared, CliError> {
        let bad = |block: &str, msg: String| CliError::Validation(format!("{block}: {msg}"));
        let m = &self.medium;
        let horizon = m.horizon();
        let trajectory = InterfaceTrajectory::new(m.trajectory.clone(), horizon)
            .map_err(|e| bad("medium.trajectory", e.to_string()))?;
        let medium =
            MediumSpec::new(m.b, m.k, horizon, trajectory).map_err(|e| bad("medium", e.to_string()))?;
        medium.require_h1d().map_err(|e| bad("medium", e.to_string()))?;

        if self.probe.samples < 2 {
            return Err(bad("probe", "at least two samples are needed".into()));
        }
        let dt = self.dt();
        let probe = match self.probe.shape {
            ShapeBlock::G { n_terms } => build_probe(&GSpec { n_terms }, self.probe.r0, horizon, dt),
            ShapeBlock::Pulse {
                center,
                width,
                amplitude,
            } => smooth_pulse(center, width, amplitude, self.probe.r0, horizon, dt),
        }
        .map_err(|e| bad("probe", e.to_string()))?;

        let basis =
            SpectralBasis::new(self.solver.n_modes, m.b).map_err(|e| bad("solver", e.to_string()))?;
        let (dt_ode, substeps) = match self.solver.dt_ode {
            None => {
                let sub = substeps_for(&medium, &basis, dt);
                (dt / sub as f64, sub)
            }
            Some(h) => {
                let sub = (dt / h).round();
                if !(h > 0.0) || sub < 1.0 || (sub * h - dt).abs() > 1e-9 * dt {
                    return Err(bad("solver", format!("dt_ode {h} does not divide the probe step {dt}")));
                }
                let limit = stability_limit(medium.k, &basis);
                if h > limit {
                    return Err(bad("solver", format!("dt_ode {h} exceeds the stability limit {limit}")));
                }
                (h, sub as usize)
            }
        };
        self.inversion
            .validate()
            .map_err(|e| bad("inversion", e.to_string()))?;
        Ok(Prepared {
            medium,
            probe,
            basis,
            dt_ode,
            substeps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = r#"{
        "medium": {"b": 1.0, "k": 2.0, "trajectory": {"kind": "constant", "a0": 0.5}},
        "probe": {"r0": 0.4, "shape": {"kind": "g"}}
    }"#;

    #[test]
    fn defaults_fill_optional_blocks() {
        let c = ExperimentConfig::parse(REFERENCE).unwrap();
        assert_eq!(c.medium.horizon(), 2.0);
        assert_eq!(c.probe.samples, 1 << 14);
        assert_eq!(c.solver, SolverBlock::default());
        assert_eq!(c.source, Source::Ansatz);
        c.prepare().unwrap();
    }

    #[test]
    fn missing_trajectory_names_the_block() {
        let text = r#"{"medium": {"b": 1.0, "k": 2.0}, "probe": {"r0": 0.4, "shape": {"kind": "g"}}}"#;
        let e = ExperimentConfig::parse(text).unwrap_err().to_string();
        assert!(e.contains("medium") && e.contains("trajectory"), "{e}");
        assert!(e.contains("line 1"), "{e}");
    }

    #[test]
    fn supersonic_interface_fails_validation() {
        let text = r#"{
            "medium": {"b": 1.0, "k": 0.5,
                       "trajectory": {"kind": "sinusoidal", "a0": 0.5, "amplitude": 0.2, "omega": 3.0}},
            "probe": {"r0": 0.4, "shape": {"kind": "g"}}
        }"#;
        let c = ExperimentConfig::parse(text).unwrap();
        let e = c.prepare().unwrap_err();
        assert_eq!(e.exit_code(), crate::EXIT_VALIDATION);
        assert!(e.to_string().contains("too fast"), "{e}");
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::parse(REFERENCE).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.medium.k = 3.0;
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.medium_hash(), b.medium_hash());
    }

    #[test]
    fn dt_ode_must_divide_the_probe_step() {
        let mut c = ExperimentConfig::parse(REFERENCE).unwrap();
        c.solver.dt_ode = Some(c.dt() / 2.5);
        assert!(c.prepare().is_err());
        c.solver.n_modes = 64;
        c.solver.dt_ode = Some(c.dt() / 4.0);
        assert_eq!(c.prepare().unwrap().substeps, 4);
    }
}
