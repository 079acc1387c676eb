//! JSON run configuration with per-example defaults and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Rect;
use crate::sparse::SolverOpts;
use crate::state::SimParams;
use crate::stepper::Scheme;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleKind {
    /// Manufactured solution on the unit square.
    Mms,
    /// Smooth relaxing texture on the centered square.
    Smooth,
    /// Two-defect annihilation on the centered square.
    Defects,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditPolicy {
    /// Report energy-law violations on stderr and keep going.
    Warn,
    /// Stop the run on the first violation.
    Abort,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub nu: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_final: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    /// Cells in y; equal to `nx` when omitted.
    pub ny: Option<usize>,
    /// `[xmin, xmax, ymin, ymax]`; the example's own domain when omitted.
    pub domain: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub maxit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let opts = SolverOpts::default();
        SolverConfig { tol: opts.tol, maxit: opts.maxit }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Steps between field snapshots; 0 disables all but the final one.
    pub field_stride: usize,
    /// Steps between energy CSV rows; the first and last rows always land.
    pub energy_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            field_stride: 0,
            energy_stride: 1,
        }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_scheme() -> String {
    "pcsav".to_string()
}

fn default_audit() -> AuditPolicy {
    AuditPolicy::Abort
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub example: ExampleKind,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default)]
    pub physics: PhysicsConfig,
    pub time: TimeConfig,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "default_audit")]
    pub audit: AuditPolicy,
}

/// Per-example defaults: `(nu, lambda, gamma, epsilon)`.
fn physics_defaults(example: ExampleKind) -> [f64; 4] {
    match example {
        ExampleKind::Mms => [0.01, 0.1, 1.0, 0.01],
        ExampleKind::Smooth => [0.1, 1.0, 1.0, 0.05],
        ExampleKind::Defects => [1.0, 0.01, 1.0, 0.05],
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        self.scheme()?;
        let [nu, lambda, gamma, epsilon] = self.resolved_physics();
        for (name, v) in [
            ("nu", nu),
            ("lambda", lambda),
            ("gamma", gamma),
            ("epsilon", epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let TimeConfig { dt, t_final } = self.time;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        // A run of exactly one (starting) step is legitimate.
        if t_final < dt * (1.0 - 1e-9) {
            return Err(Error::Config(format!(
                "t_final ({t_final}) must be at least dt ({dt})"
            )));
        }
        if self.mesh.nx < 2 || self.mesh.ny.unwrap_or(self.mesh.nx) < 2 {
            return Err(Error::Config("mesh needs at least 2 cells per side".into()));
        }
        let d = self.domain();
        if !(d.xmax > d.xmin && d.ymax > d.ymin) {
            return Err(Error::Config(format!(
                "degenerate domain [{}, {}] x [{}, {}]",
                d.xmin, d.xmax, d.ymin, d.ymax
            )));
        }
        if self.example == ExampleKind::Mms && d != Rect::unit() {
            return Err(Error::Config(
                "the manufactured solution is defined on the unit square only".into(),
            ));
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            return Err(Error::Config(format!(
                "solver tol must lie in (0, 1), got {}",
                self.solver.tol
            )));
        }
        if self.solver.maxit == 0 {
            return Err(Error::Config("solver maxit must be positive".into()));
        }
        Ok(())
    }

    fn resolved_physics(&self) -> [f64; 4] {
        let d = physics_defaults(self.example);
        [
            self.physics.nu.unwrap_or(d[0]),
            self.physics.lambda.unwrap_or(d[1]),
            self.physics.gamma.unwrap_or(d[2]),
            self.physics.epsilon.unwrap_or(d[3]),
        ]
    }

    pub fn scheme(&self) -> Result<Scheme> {
        Scheme::from_name(&self.scheme)
            .map_err(|_| Error::Config(format!("unknown scheme '{}'", self.scheme)))
    }

    pub fn domain(&self) -> Rect {
        match self.mesh.domain {
            Some([xmin, xmax, ymin, ymax]) => Rect { xmin, xmax, ymin, ymax },
            None => match self.example {
                ExampleKind::Mms => Rect::unit(),
                _ => Rect::centered(1.0),
            },
        }
    }

    pub fn ny(&self) -> usize {
        self.mesh.ny.unwrap_or(self.mesh.nx)
    }

    /// Simulation parameters with the auxiliary-variable decay constant
    /// tied to the run's final time.
    pub fn sim_params(&self) -> Result<SimParams> {
        let [nu, lambda, gamma, eps] = self.resolved_physics();
        let p = SimParams {
            nu,
            lambda,
            gamma,
            eps,
            t_sav: self.time.t_final,
            dt: self.time.dt,
            solver: SolverOpts {
                tol: self.solver.tol,
                maxit: self.solver.maxit,
                ..SolverOpts::default()
            },
        };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(example: &str) -> String {
        format!(
            r#"{{"example":"{example}","time":{{"dt":0.01,"t_final":0.5}},"mesh":{{"nx":16}}}}"#
        )
    }

    #[test]
    fn minimal_config_gets_example_defaults() {
        let cfg = RunConfig::from_json_str(&minimal("smooth")).expect("parse");
        let p = cfg.sim_params().expect("params");
        assert_eq!(p.nu, 0.1);
        assert_eq!(p.lambda, 1.0);
        assert_eq!(p.gamma, 1.0);
        assert_eq!(p.eps, 0.05);
        assert_eq!(p.t_sav, 0.5);
        assert_eq!(cfg.domain(), Rect::centered(1.0));
        assert_eq!(cfg.ny(), 16);
        assert_eq!(cfg.scheme().expect("scheme").name(), "pcsav");

        let cfg = RunConfig::from_json_str(&minimal("defects")).expect("parse");
        let p = cfg.sim_params().expect("params");
        assert_eq!((p.nu, p.lambda, p.eps), (1.0, 0.01, 0.05));

        let cfg = RunConfig::from_json_str(&minimal("mms")).expect("parse");
        let p = cfg.sim_params().expect("params");
        assert_eq!((p.nu, p.lambda, p.eps), (0.01, 0.1, 0.01));
        assert_eq!(cfg.domain(), Rect::unit());
    }

    #[test]
    fn overrides_win_over_defaults() {
        let text = r#"{
            "example": "smooth",
            "scheme": "pcsav-ect",
            "physics": {"epsilon": 0.2, "nu": 0.3},
            "time": {"dt": 0.0025, "t_final": 1.0},
            "mesh": {"nx": 24, "ny": 32, "domain": [-1.0, 1.0, -1.0, 1.0]},
            "solver": {"tol": 1e-11, "maxit": 5000},
            "audit": "warn"
        }"#;
        let cfg = RunConfig::from_json_str(text).expect("parse");
        let p = cfg.sim_params().expect("params");
        assert_eq!(p.eps, 0.2);
        assert_eq!(p.nu, 0.3);
        assert_eq!(p.lambda, 1.0);
        assert_eq!(p.solver.tol, 1e-11);
        assert_eq!(cfg.ny(), 32);
        assert_eq!(cfg.scheme().expect("scheme").name(), "pcsav-ect");
        assert_eq!(cfg.audit, AuditPolicy::Warn);
    }

    #[test]
    fn bad_configs_are_rejected_with_reasons() {
        let cases = [
            (r#"{"example":"mms","time":{"dt":0.01,"t_final":0.5},"mesh":{"nx":16},"bogus":1}"#, "bogus"),
            (r#"{"example":"mms","time":{"dt":0.6,"t_final":0.5},"mesh":{"nx":16}}"#, "t_final"),
            (r#"{"example":"smooth","physics":{"nu":-1.0},"time":{"dt":0.01,"t_final":0.5},"mesh":{"nx":16}}"#, "nu"),
            (r#"{"example":"smooth","scheme":"verlet","time":{"dt":0.01,"t_final":0.5},"mesh":{"nx":16}}"#, "scheme"),
            (r#"{"example":"smooth","schema":9,"time":{"dt":0.01,"t_final":0.5},"mesh":{"nx":16}}"#, "schema"),
            (r#"{"example":"mms","time":{"dt":0.01,"t_final":0.5},"mesh":{"nx":16,"domain":[-1.0,1.0,-1.0,1.0]}}"#, "unit square"),
            (r#"{"example":"smooth","time":{"dt":0.01,"t_final":0.5},"mesh":{"nx":1}}"#, "cells"),
        ];
        for (text, needle) in cases {
            let err = RunConfig::from_json_str(text).expect_err(needle);
            let msg = err.to_string();
            assert!(
                msg.contains(needle) || matches!(err, Error::Config(_)),
                "unexpected error for {needle}: {msg}"
            );
            assert_eq!(err.exit_code(), 2, "wrong exit code for {needle}");
        }
    }

    #[test]
    fn configs_round_trip_through_json() {
        let cfg = RunConfig::from_json_str(&minimal("defects")).expect("parse");
        let text = serde_json::to_string(&cfg).expect("serialize");
        let back = RunConfig::from_json_str(&text).expect("reparse");
        assert_eq!(back.example, ExampleKind::Defects);
        assert_eq!(back.time.dt, cfg.time.dt);
        assert_eq!(back.output.energy_stride, 1);
    }
}
