//! Operation-mode controllers: the auto-relock supervisor and active drift
//! compensation.
//!
//! The [`Supervisor`] is a pure state machine. It consumes readings and emits
//! [`PlantCommand`]s; it never looks inside the plant. Drivers in
//! [`sequence`] connect it to a [`crate::plant::Plant`].

pub mod sequence;
pub mod supervisor;
pub mod vcurve;

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{ChannelId, Plant, PlantError};

pub use sequence::{
    apply_command, exhaustive_beat_scan, find_double_resonance, run_relock_attempts, run_relock_sequence,
    take_reading, RelockOutcome,
};
pub use supervisor::{ControllerPhase, ControllerState, EventLogEntry, Supervisor};
pub use vcurve::{fit_v_curve, fit_v_curve_with, VCurveError, VCurveFit, VCurveModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupervisorError {
    #[error("invalid supervisor config `{field}`: {reason}")]
    Config { field: String, reason: String },
}

#[derive(Debug, Error)]
pub enum DriveError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Supervisor(#[from] SupervisorError),
}

fn config_err(field: &str, reason: impl Into<String>) -> SupervisorError {
    SupervisorError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationMode {
    /// Relock from scratch whenever squeezing drops below threshold.
    AutoRelock,
    /// Track the optimum phase with perturb-and-observe steps.
    DriftCompensation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VCurveScanConfig {
    pub half_range_rad: f64,
    pub n_points: usize,
    pub dwell_s: f64,
    pub model: VCurveModel,
    /// Re-centred scans allowed when the vertex lands on the scan edge.
    pub max_rescans: usize,
}

impl Default for VCurveScanConfig {
    fn default() -> Self {
        Self {
            half_range_rad: 30e-3,
            n_points: 11,
            dwell_s: 0.3,
            model: VCurveModel::Vee,
            max_rescans: 1,
        }
    }
}

impl VCurveScanConfig {
    /// Scan offsets relative to the scan centre.
    pub fn offsets(&self) -> Vec<f64> {
        let n = self.n_points;
        (0..n)
            .map(|k| self.half_range_rad * (2.0 * k as f64 / (n - 1) as f64 - 1.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftCompConfig {
    pub probe_step_rad: f64,
    pub trigger_drop_db: f64,
    /// Samples averaged per perturb-and-observe cycle.
    pub cycle_length: usize,
    /// Decay of the best-seen reference after each probe run, dB.
    pub reference_decay_db: f64,
}

impl Default for DriftCompConfig {
    fn default() -> Self {
        Self {
            probe_step_rad: 1e-3,
            trigger_drop_db: 0.2,
            cycle_length: 5,
            reference_decay_db: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisorConfig {
    pub mode: OperationMode,
    /// Squeezing magnitude below which the supervisor intervenes, dB.
    pub squeezing_threshold_db: f64,
    pub debounce_samples: usize,
    pub beat_threshold: f64,
    pub sample_period_s: f64,
    /// Wait after engaging a lock before relying on it.
    pub acquisition_wait_s: f64,
    pub teardown_s: f64,
    pub max_retries: usize,
    /// Largest cumulative phase offset the actuator can apply, rad.
    pub actuator_range_rad: f64,
    pub vcurve: VCurveScanConfig,
    pub drift_comp: DriftCompConfig,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            mode: OperationMode::AutoRelock,
            squeezing_threshold_db: 9.5,
            debounce_samples: 2,
            beat_threshold: 0.5,
            sample_period_s: 1.0,
            acquisition_wait_s: 2.0,
            teardown_s: 0.1,
            max_retries: 3,
            actuator_range_rad: PI,
            vcurve: VCurveScanConfig::default(),
            drift_comp: DriftCompConfig::default(),
        }
    }
}

impl SupervisorConfig {
    pub fn with_mode(mut self, mode: OperationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), SupervisorError> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(field, format!("must be positive, got {v}")))
            }
        };
        positive("supervisor.squeezing_threshold_db", self.squeezing_threshold_db)?;
        positive("supervisor.sample_period_s", self.sample_period_s)?;
        positive("supervisor.acquisition_wait_s", self.acquisition_wait_s)?;
        positive("supervisor.teardown_s", self.teardown_s)?;
        positive("supervisor.actuator_range_rad", self.actuator_range_rad)?;
        positive("supervisor.vcurve.half_range_rad", self.vcurve.half_range_rad)?;
        positive("supervisor.vcurve.dwell_s", self.vcurve.dwell_s)?;
        positive("supervisor.drift_comp.probe_step_rad", self.drift_comp.probe_step_rad)?;
        positive("supervisor.drift_comp.trigger_drop_db", self.drift_comp.trigger_drop_db)?;
        if !(0.0..=1.0).contains(&self.beat_threshold) {
            return Err(config_err("supervisor.beat_threshold", "must lie in [0, 1]"));
        }
        if self.debounce_samples == 0 {
            return Err(config_err("supervisor.debounce_samples", "must be at least 1"));
        }
        if self.vcurve.n_points < 3 {
            return Err(config_err("supervisor.vcurve.n_points", "must be at least 3"));
        }
        if self.drift_comp.cycle_length == 0 {
            return Err(config_err("supervisor.drift_comp.cycle_length", "must be at least 1"));
        }
        if !(self.drift_comp.reference_decay_db >= 0.0) {
            return Err(config_err("supervisor.drift_comp.reference_decay_db", "must be non-negative"));
        }
        Ok(())
    }
}

/// What the supervisor sees at each wake-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    /// Signed squeezing reading, dB.
    pub squeezing_db: f64,
    pub valid: bool,
    /// Auxiliary/LO beat amplitude.
    pub beat: f64,
}

/// The plant operations a controller may request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PlantCommand {
    SetLock { channel: ChannelId, engage: bool },
    LockToMode { mode: usize },
    ApplyPhaseOffset { delta_rad: f64 },
}

impl PlantCommand {
    pub fn apply(&self, plant: &mut Plant) -> Result<(), PlantError> {
        match *self {
            PlantCommand::SetLock { channel, engage } => plant.set_lock(channel, engage),
            PlantCommand::LockToMode { mode } => plant.lock_to_mode(mode),
            PlantCommand::ApplyPhaseOffset { delta_rad } => plant.apply_phase_offset(delta_rad),
        }
    }
}

impl fmt::Display for PlantCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlantCommand::SetLock { channel, engage } => {
                write!(f, "set_lock:{}:{}", channel.label(), if *engage { "on" } else { "off" })
            }
            PlantCommand::LockToMode { mode } => write!(f, "lock_to_mode:{mode}"),
            PlantCommand::ApplyPhaseOffset { delta_rad } => write!(f, "apply_phase_offset:{:+.6}", delta_rad),
        }
    }
}
