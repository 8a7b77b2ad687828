use serde::{Deserialize, Serialize};

use super::PlantError;
use crate::opa_model::{ModelParams, CHARACTERIZATION_FREQ_HZ};

/// Static configuration of the simulated apparatus.
///
/// Drift magnitudes are calibration values, not measured physics: they are
/// chosen so that an uncontrolled squeezing angle wanders past the relock
/// threshold within tens of minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub model: ModelParams,
    /// Pump power set point relative to threshold.
    pub nominal_pump_ratio: f64,
    /// Fourier frequency of the squeezing readout, Hz.
    pub fourier_freq_hz: f64,
    /// Resonant OPA modes per scan ramp of the length actuator.
    pub n_modes_per_scan: usize,
    /// Mode that is initially doubly resonant.
    pub double_resonance_mode: usize,
    /// Dead time from engaging a lock to it being locked, s.
    pub lock_acquisition_s: f64,
    /// Relative pump step applied by a `PumpJump` disturbance.
    pub pump_jump_fraction: f64,
    /// Full span of the OPA length actuator ramp, arbitrary volts.
    pub scan_ramp_span: f64,
    pub drift: DriftConfig,
    pub readout: ReadoutConfig,
    pub beat: BeatConfig,
    pub labels: OpticalLabels,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            model: ModelParams::default(),
            nominal_pump_ratio: 0.67,
            fourier_freq_hz: CHARACTERIZATION_FREQ_HZ,
            n_modes_per_scan: 8,
            double_resonance_mode: 0,
            lock_acquisition_s: 2.0,
            pump_jump_fraction: 0.10,
            scan_ramp_span: 10.0,
            drift: DriftConfig::default(),
            readout: ReadoutConfig::default(),
            beat: BeatConfig::default(),
            labels: OpticalLabels::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    /// Relaxation time of the Ornstein-Uhlenbeck pump-power fluctuation, s.
    pub pump_relaxation_s: f64,
    /// Stationary rms of the pump power as a fraction of its set point.
    pub pump_rms_fraction: f64,
    /// Diffusion of the squeezing angle, rad/sqrt(s).
    pub angle_walk_rad_per_sqrt_s: f64,
    /// Deterministic squeezing-angle drift, rad/s.
    pub angle_drift_rad_per_s: f64,
    /// Diffusion of the OPA resonance detuning, 1/sqrt(s).
    pub resonance_walk_per_sqrt_s: f64,
    /// Detuning magnitude at which the cavity hops to a new doubly resonant mode.
    pub resonance_hop_threshold: f64,
    /// Rms detuning drawn by a resonance shift.
    pub resonance_shift_detuning_rms: f64,
    /// Poisson rate of sporadic lock losses, 1/s.
    pub lock_loss_rate_per_s: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            pump_relaxation_s: 60.0,
            pump_rms_fraction: 0.005,
            angle_walk_rad_per_sqrt_s: 7.0e-4,
            angle_drift_rad_per_s: 0.0,
            resonance_walk_per_sqrt_s: 1.0e-3,
            resonance_hop_threshold: 1.0,
            resonance_shift_detuning_rms: 0.3,
            lock_loss_rate_per_s: 1.0 / (7.0 * 24.0 * 3600.0),
        }
    }
}

impl DriftConfig {
    /// All stochastic and deterministic drifts switched off.
    pub fn frozen() -> Self {
        Self {
            pump_rms_fraction: 0.0,
            angle_walk_rad_per_sqrt_s: 0.0,
            angle_drift_rad_per_s: 0.0,
            resonance_walk_per_sqrt_s: 0.0,
            lock_loss_rate_per_s: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutConfig {
    pub measurement_period_s: f64,
    /// Rms of the readout noise in dB; samples are truncated at three sigma.
    pub noise_rms_db: f64,
    /// Actual clearance of detector dark noise below shot noise, dB.
    pub electronic_noise_clearance_db: f64,
    /// Clearance assumed by the readout chain when correcting, dB.
    pub calibrated_clearance_db: f64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            measurement_period_s: 1.0,
            noise_rms_db: 0.05,
            electronic_noise_clearance_db: 18.0,
            calibrated_clearance_db: 18.0,
        }
    }
}

/// Contrast model for the LO/auxiliary-field beat used to detect double resonance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeatConfig {
    /// Normalized amplitude when doubly resonant with the pump/auxiliary lock engaged.
    pub resonant_amplitude: f64,
    /// Amplitude once the LO/auxiliary lock is also engaged.
    pub locked_amplitude: f64,
    /// Amplitude off double resonance.
    pub off_resonant_amplitude: f64,
    /// Rms of additive readout noise; samples are truncated at three sigma.
    pub noise_rms: f64,
}

impl Default for BeatConfig {
    fn default() -> Self {
        Self {
            resonant_amplitude: 0.9,
            locked_amplitude: 1.0,
            off_resonant_amplitude: 0.05,
            noise_rms: 0.02,
        }
    }
}

/// Descriptive optical parameters carried for reports only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticalLabels {
    pub fundamental_wavelength_nm: f64,
    pub pump_wavelength_nm: f64,
    pub aom_shift_hz: f64,
}

impl Default for OpticalLabels {
    fn default() -> Self {
        Self {
            fundamental_wavelength_nm: 1550.0,
            pump_wavelength_nm: 775.0,
            aom_shift_hz: 40e6,
        }
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), PlantError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(PlantError::config(field, format!("must be finite and >= 0, got {v}")))
    }
}

fn positive(field: &str, v: f64) -> Result<(), PlantError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(PlantError::config(field, format!("must be finite and > 0, got {v}")))
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        self.model
            .validate()
            .map_err(|e| PlantError::config("model", e.to_string()))?;
        if !(self.nominal_pump_ratio >= 0.0 && self.nominal_pump_ratio < 1.0) {
            return Err(PlantError::config(
                "nominal_pump_ratio",
                format!("must lie in [0, 1), got {}", self.nominal_pump_ratio),
            ));
        }
        non_negative("fourier_freq_hz", self.fourier_freq_hz)?;
        if self.n_modes_per_scan < 2 {
            return Err(PlantError::config(
                "n_modes_per_scan",
                format!("must be >= 2, got {}", self.n_modes_per_scan),
            ));
        }
        if self.double_resonance_mode >= self.n_modes_per_scan {
            return Err(PlantError::config(
                "double_resonance_mode",
                format!(
                    "must be < n_modes_per_scan ({}), got {}",
                    self.n_modes_per_scan, self.double_resonance_mode
                ),
            ));
        }
        non_negative("lock_acquisition_s", self.lock_acquisition_s)?;
        non_negative("pump_jump_fraction", self.pump_jump_fraction.abs())?;
        positive("scan_ramp_span", self.scan_ramp_span)?;

        let d = &self.drift;
        positive("drift.pump_relaxation_s", d.pump_relaxation_s)?;
        non_negative("drift.pump_rms_fraction", d.pump_rms_fraction)?;
        non_negative("drift.angle_walk_rad_per_sqrt_s", d.angle_walk_rad_per_sqrt_s)?;
        non_negative("drift.angle_drift_rad_per_s", d.angle_drift_rad_per_s.abs())?;
        non_negative("drift.resonance_walk_per_sqrt_s", d.resonance_walk_per_sqrt_s)?;
        positive("drift.resonance_hop_threshold", d.resonance_hop_threshold)?;
        non_negative("drift.resonance_shift_detuning_rms", d.resonance_shift_detuning_rms)?;
        non_negative("drift.lock_loss_rate_per_s", d.lock_loss_rate_per_s)?;

        let r = &self.readout;
        positive("readout.measurement_period_s", r.measurement_period_s)?;
        non_negative("readout.noise_rms_db", r.noise_rms_db)?;
        positive("readout.electronic_noise_clearance_db", r.electronic_noise_clearance_db)?;
        positive("readout.calibrated_clearance_db", r.calibrated_clearance_db)?;

        let b = &self.beat;
        for (field, v) in [
            ("beat.resonant_amplitude", b.resonant_amplitude),
            ("beat.locked_amplitude", b.locked_amplitude),
            ("beat.off_resonant_amplitude", b.off_resonant_amplitude),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PlantError::config(field, format!("must lie in [0, 1], got {v}")));
            }
        }
        non_negative("beat.noise_rms", b.noise_rms)?;
        Ok(())
    }
}
