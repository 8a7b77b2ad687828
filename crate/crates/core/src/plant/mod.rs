//! Seeded discrete-time simulator of the squeezed-light apparatus.
//!
//! The plant owns two independent random streams: one drives the hidden
//! process (pump power, squeezing-angle and resonance drift, sporadic lock
//! losses), the other drives readout noise. Reading the plant therefore never
//! perturbs its trajectory, so a command log replayed against a fresh plant
//! with the same seed reproduces the hidden state bit for bit.

mod channel;
mod config;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use channel::{ChannelId, LockChannel, LockStatus};
pub use config::{BeatConfig, DriftConfig, OpticalLabels, PlantConfig, ReadoutConfig};

use crate::characterize::noise::{contaminate_electronic_noise, correct_electronic_noise};
use crate::opa_model::{quadrature_variance, rotate_quadratures, OperatingPoint};

/// Pump ratios are clamped below this value; the plant never crosses threshold.
pub const MAX_PUMP_RATIO: f64 = 0.99;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("invalid plant config `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("time step must be positive and finite, got {0} s")]
    TimeStep(f64),
    #[error("cannot engage {channel}: prerequisite {prerequisite} is not locked")]
    PrerequisiteNotLocked {
        channel: ChannelId,
        prerequisite: ChannelId,
    },
    #[error("{0} must be engaged for this operation")]
    NotEngaged(ChannelId),
    #[error("{0} must be locked for this operation")]
    NotLocked(ChannelId),
    #[error("mode index {index} out of range (plant has {n_modes} modes per scan)")]
    ModeOutOfRange { index: usize, n_modes: usize },
}

impl PlantError {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        PlantError::Config {
            field: field.to_owned(),
            reason: reason.into(),
        }
    }
}

/// Scripted disturbances for tests and scenario campaigns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disturbance {
    /// Drop the OPA length lock and everything that depends on it.
    LockLoss,
    /// Step the pump power by the configured fraction.
    PumpJump,
    /// Redraw the doubly resonant mode and the resonance detuning.
    ResonanceShift,
    /// Kick the squeezing angle by the given amount.
    AngleStep { rad: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PlantEventKind {
    LockLoss(ChannelId),
    ResonanceHop { new_mode: usize },
    Disturbance(Disturbance),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantEvent {
    pub t: f64,
    pub kind: PlantEventKind,
}

impl PlantEvent {
    pub fn label(&self) -> String {
        match self.kind {
            PlantEventKind::LockLoss(ch) => format!("lock_loss:{ch}"),
            PlantEventKind::ResonanceHop { .. } => "resonance_hop".to_owned(),
            PlantEventKind::Disturbance(d) => match d {
                Disturbance::LockLoss => "inject:lock_loss".to_owned(),
                Disturbance::PumpJump => "inject:pump_jump".to_owned(),
                Disturbance::ResonanceShift => "inject:resonance_shift".to_owned(),
                Disturbance::AngleStep { .. } => "inject:angle_step".to_owned(),
            },
        }
    }
}

/// Full hidden state of the apparatus.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub time_s: f64,
    pub channels: [LockChannel; 4],
    /// Mode the OPA is locked to, once its length lock has acquired.
    pub current_mode: Option<usize>,
    /// Mode the OPA actuator is parked on.
    pub target_mode: usize,
    pub double_resonance_mode: usize,
    pub pump_power_w: f64,
    /// Environmental part of the squeezing-angle error, rad.
    pub angle_drift_rad: f64,
    /// Phase offset applied between the B and C locks, rad.
    pub controller_offset_rad: f64,
    pub resonance_detuning: f64,
    /// Actuator offset of each resonant mode along the scan ramp.
    pub stored_mode_offsets: Vec<f64>,
    process_rng: ChaCha8Rng,
    readout_rng: ChaCha8Rng,
}

impl PlantState {
    pub fn channel(&self, id: ChannelId) -> &LockChannel {
        &self.channels[id.index()]
    }

    pub fn status(&self, id: ChannelId) -> LockStatus {
        self.channel(id).status
    }

    /// Squeezing-angle mismatch seen by the homodyne detector.
    pub fn angle_error(&self) -> f64 {
        self.angle_drift_rad - self.controller_offset_rad
    }

    pub fn all_locked(&self) -> bool {
        self.channels.iter().all(|c| c.status.is_locked())
    }

    pub fn is_double_resonant(&self) -> bool {
        self.current_mode == Some(self.double_resonance_mode)
    }
}

/// Squeezing readout in signed dB relative to shot noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingReading {
    pub db: f64,
    /// False when the OPA is not producing squeezing (any lock off or wrong mode).
    pub valid: bool,
}

/// Noiseless view of the coherent-control beat notes and phase offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentControlState {
    pub phase_offset_b: f64,
    pub phase_offset_c: f64,
    /// Pump / up-converted auxiliary beat at twice the AOM shift.
    pub beat_amplitude_2omega: f64,
    /// Auxiliary / LO beat at the AOM shift.
    pub beat_amplitude_omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    config: PlantConfig,
    state: PlantState,
    events: Vec<PlantEvent>,
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 3.0 {
            return z;
        }
    }
}

/// Map an angle onto the squeezing ellipse's period, [-pi/2, pi/2).
pub fn wrap_ellipse_angle(angle: f64) -> f64 {
    let w = angle - PI * (angle / PI).round();
    if w >= PI / 2.0 {
        w - PI
    } else {
        w
    }
}

impl Plant {
    /// Build a plant with every lock disengaged and drifts drawn from `seed`.
    pub fn new(config: PlantConfig, seed: u64) -> Result<Self, PlantError> {
        config.validate()?;
        let mut process_rng = ChaCha8Rng::seed_from_u64(seed);
        process_rng.set_stream(0);
        let mut readout_rng = ChaCha8Rng::seed_from_u64(seed);
        readout_rng.set_stream(1);

        let nominal = config.nominal_pump_ratio * config.model.threshold_power_w;
        let d = &config.drift;
        let pump_power_w = if d.pump_rms_fraction > 0.0 {
            let z: f64 = process_rng.sample(StandardNormal);
            (nominal * (1.0 + d.pump_rms_fraction * z)).max(0.0)
        } else {
            nominal
        };

        let n = config.n_modes_per_scan;
        let spacing = config.scan_ramp_span / n as f64;
        let stored_mode_offsets = (0..n)
            .map(|i| {
                let jitter: f64 = process_rng.random_range(-0.05..0.05);
                spacing * (i as f64 + 0.5 + jitter)
            })
            .collect();

        let state = PlantState {
            time_s: 0.0,
            channels: ChannelId::ALL.map(LockChannel::new),
            current_mode: None,
            target_mode: 0,
            double_resonance_mode: config.double_resonance_mode,
            pump_power_w,
            angle_drift_rad: 0.0,
            controller_offset_rad: 0.0,
            resonance_detuning: 0.0,
            stored_mode_offsets,
            process_rng,
            readout_rng,
        };
        Ok(Self {
            config,
            state,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    /// Swap the drift model, e.g. to switch noise on after a clean lock-up.
    pub fn set_drift(&mut self, drift: DriftConfig) -> Result<(), PlantError> {
        let mut config = self.config.clone();
        config.drift = drift;
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.state.time_s
    }

    pub fn n_modes(&self) -> usize {
        self.config.n_modes_per_scan
    }

    /// Hand over events recorded since the last call.
    pub fn drain_events(&mut self) -> Vec<PlantEvent> {
        std::mem::take(&mut self.events)
    }

    fn record(&mut self, kind: PlantEventKind) {
        self.events.push(PlantEvent {
            t: self.state.time_s,
            kind,
        });
    }

    /// Advance the plant by `dt` seconds.
    pub fn step(&mut self, dt: f64) -> Result<(), PlantError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PlantError::TimeStep(dt));
        }
        let d = self.config.drift.clone();
        let s = &mut self.state;

        // Exact OU update around the pump set point.
        let nominal = self.config.nominal_pump_ratio * self.config.model.threshold_power_w;
        let decay = (-dt / d.pump_relaxation_s).exp();
        let mut pump = nominal + (s.pump_power_w - nominal) * decay;
        if d.pump_rms_fraction > 0.0 {
            let stationary = d.pump_rms_fraction * nominal;
            let z: f64 = s.process_rng.sample(StandardNormal);
            pump += stationary * (1.0 - decay * decay).sqrt() * z;
        }
        s.pump_power_w = pump.max(0.0);

        s.angle_drift_rad += d.angle_drift_rad_per_s * dt;
        if d.angle_walk_rad_per_sqrt_s > 0.0 {
            let z: f64 = s.process_rng.sample(StandardNormal);
            s.angle_drift_rad += d.angle_walk_rad_per_sqrt_s * dt.sqrt() * z;
        }

        if d.resonance_walk_per_sqrt_s > 0.0 {
            let z: f64 = s.process_rng.sample(StandardNormal);
            s.resonance_detuning += d.resonance_walk_per_sqrt_s * dt.sqrt() * z;
        }
        if s.resonance_detuning.abs() > d.resonance_hop_threshold {
            let new_mode = s.process_rng.random_range(0..self.config.n_modes_per_scan);
            s.double_resonance_mode = new_mode;
            s.resonance_detuning = 0.0;
            self.record(PlantEventKind::ResonanceHop { new_mode });
        }

        if d.lock_loss_rate_per_s > 0.0 {
            let p_hit = -(-d.lock_loss_rate_per_s * dt).exp_m1();
            let u: f64 = self.state.process_rng.random();
            if u < p_hit {
                let locked: Vec<ChannelId> = ChannelId::ALL
                    .into_iter()
                    .filter(|&c| self.state.status(c).is_locked())
                    .collect();
                if !locked.is_empty() {
                    let pick = self.state.process_rng.random_range(0..locked.len());
                    self.disengage_cascade(locked[pick]);
                    self.record(PlantEventKind::LockLoss(locked[pick]));
                }
            }
        }

        let s = &mut self.state;
        for id in ChannelId::ALL {
            let prerequisite_locked = id
                .prerequisite()
                .is_none_or(|p| s.channels[p.index()].status.is_locked());
            let ch = &mut s.channels[id.index()];
            if let LockStatus::Acquiring { remaining_s } = ch.status {
                let remaining_s = (remaining_s - dt).max(0.0);
                if remaining_s <= TIME_EPS && prerequisite_locked && !ch.faulted {
                    ch.status = LockStatus::Locked;
                    if id == ChannelId::OpaLength {
                        s.current_mode = Some(s.target_mode);
                        s.resonance_detuning = 0.0;
                    }
                } else {
                    ch.status = LockStatus::Acquiring { remaining_s };
                }
            }
        }

        s.time_s += dt;
        Ok(())
    }

    fn disengage_cascade(&mut self, id: ChannelId) {
        for &dep in id.with_dependents() {
            self.state.channels[dep.index()].status = LockStatus::Disengaged;
        }
        if id <= ChannelId::OpaLength {
            self.state.current_mode = None;
        }
    }

    /// Engage or release a lock. Releasing also releases its dependents.
    pub fn set_lock(&mut self, id: ChannelId, engage: bool) -> Result<(), PlantError> {
        if !engage {
            self.disengage_cascade(id);
            return Ok(());
        }
        if self.state.status(id).is_engaged() {
            return Ok(());
        }
        if let Some(p) = id.prerequisite() {
            if !self.state.status(p).is_locked() {
                return Err(PlantError::PrerequisiteNotLocked {
                    channel: id,
                    prerequisite: p,
                });
            }
        }
        self.state.channels[id.index()].status = LockStatus::Acquiring {
            remaining_s: self.config.lock_acquisition_s,
        };
        Ok(())
    }

    /// Park the OPA length actuator on a stored mode offset and relock there.
    pub fn lock_to_mode(&mut self, mode_index: usize) -> Result<(), PlantError> {
        let n_modes = self.config.n_modes_per_scan;
        if mode_index >= n_modes {
            return Err(PlantError::ModeOutOfRange {
                index: mode_index,
                n_modes,
            });
        }
        if !self.state.status(ChannelId::OpaLength).is_engaged() {
            return Err(PlantError::NotEngaged(ChannelId::OpaLength));
        }
        // Moving the cavity drops the offset locks that ride on it.
        self.disengage_cascade(ChannelId::PumpCsfOffset);
        let s = &mut self.state;
        s.target_mode = mode_index;
        s.current_mode = None;
        let opa = &mut s.channels[ChannelId::OpaLength.index()];
        opa.actuator_offset = s.stored_mode_offsets[mode_index];
        opa.status = LockStatus::Acquiring {
            remaining_s: self.config.lock_acquisition_s,
        };
        Ok(())
    }

    /// Shift the B/C offset so the squeezing angle error changes by `-delta`.
    pub fn apply_phase_offset(&mut self, delta: f64) -> Result<(), PlantError> {
        if !self.state.status(ChannelId::CsfLoOffset).is_locked() {
            return Err(PlantError::NotLocked(ChannelId::CsfLoOffset));
        }
        self.state.controller_offset_rad += delta;
        self.state.channels[ChannelId::CsfLoOffset.index()].actuator_offset =
            self.state.controller_offset_rad;
        Ok(())
    }

    pub fn inject_disturbance(&mut self, kind: Disturbance) {
        match kind {
            Disturbance::LockLoss => self.disengage_cascade(ChannelId::OpaLength),
            Disturbance::PumpJump => {
                self.state.pump_power_w *= 1.0 + self.config.pump_jump_fraction;
            }
            Disturbance::ResonanceShift => {
                let s = &mut self.state;
                s.double_resonance_mode = s.process_rng.random_range(0..self.config.n_modes_per_scan);
                let z: f64 = s.process_rng.sample(StandardNormal);
                s.resonance_detuning = self.config.drift.resonance_shift_detuning_rms * z;
            }
            Disturbance::AngleStep { rad } => self.state.angle_drift_rad += rad,
        }
        self.record(PlantEventKind::Disturbance(kind));
    }

    /// Force the doubly resonant mode; a deterministic resonance shift for fixtures.
    pub fn shift_resonance_to(&mut self, mode_index: usize) -> Result<(), PlantError> {
        let n_modes = self.config.n_modes_per_scan;
        if mode_index >= n_modes {
            return Err(PlantError::ModeOutOfRange {
                index: mode_index,
                n_modes,
            });
        }
        self.state.double_resonance_mode = mode_index;
        Ok(())
    }

    /// Mark a channel as unable to acquire lock.
    pub fn set_channel_fault(&mut self, id: ChannelId, faulted: bool) {
        self.state.channels[id.index()].faulted = faulted;
    }

    pub fn effective_pump_ratio(&self) -> f64 {
        let s = &self.state;
        let ratio = s.pump_power_w / self.config.model.threshold_power_w;
        (ratio * (-s.resonance_detuning * s.resonance_detuning).exp()).clamp(0.0, MAX_PUMP_RATIO)
    }

    fn producing_squeezing(&self) -> bool {
        self.state.all_locked() && self.state.is_double_resonant()
    }

    /// True squeezed-quadrature variance at the detector, before readout.
    pub fn true_variance(&self) -> f64 {
        if !self.producing_squeezing() {
            return 1.0;
        }
        let op = OperatingPoint {
            pump_ratio: self.effective_pump_ratio(),
            fourier_freq_hz: self.config.fourier_freq_hz,
        };
        let pair = quadrature_variance(&self.config.model, &op)
            .expect("pump ratio is clamped below threshold");
        let mismatch = wrap_ellipse_angle(self.state.angle_error());
        let total = self.config.model.phase_jitter_rad.hypot(mismatch);
        rotate_quadratures(pair, total).v_squeezed
    }

    /// Squeezing the readout chain reports with zero readout noise, dB.
    pub fn noiseless_squeezing_db(&self) -> f64 {
        let r = &self.config.readout;
        let raw = contaminate_electronic_noise(self.true_variance(), r.electronic_noise_clearance_db);
        let corrected = correct_electronic_noise(raw, r.calibrated_clearance_db).unwrap_or(raw);
        10.0 * corrected.log10()
    }

    /// Shot-noise-normalized, dark-noise-corrected squeezing reading.
    pub fn read_squeezing(&mut self) -> SqueezingReading {
        let noise = if self.config.readout.noise_rms_db > 0.0 {
            self.config.readout.noise_rms_db * truncated_normal(&mut self.state.readout_rng)
        } else {
            0.0
        };
        SqueezingReading {
            db: self.noiseless_squeezing_db() + noise,
            valid: self.producing_squeezing(),
        }
    }

    fn beat_omega(&self) -> f64 {
        let s = &self.state;
        let b = &self.config.beat;
        let resonant = s.status(ChannelId::OpaLength).is_locked()
            && s.status(ChannelId::PumpCsfOffset).is_locked()
            && s.is_double_resonant();
        if !resonant {
            b.off_resonant_amplitude
        } else if s.status(ChannelId::CsfLoOffset).is_locked() {
            b.locked_amplitude
        } else {
            b.resonant_amplitude
        }
    }

    /// Normalized amplitude of the auxiliary/LO beat, with readout noise.
    pub fn read_beat_amplitude(&mut self) -> f64 {
        let noise = if self.config.beat.noise_rms > 0.0 {
            self.config.beat.noise_rms * truncated_normal(&mut self.state.readout_rng)
        } else {
            0.0
        };
        (self.beat_omega() + noise).clamp(0.0, 1.0)
    }

    pub fn coherent_control(&self) -> CoherentControlState {
        let s = &self.state;
        let pump_beat = s.status(ChannelId::ShgLength).is_locked() && s.status(ChannelId::OpaLength).is_locked();
        CoherentControlState {
            phase_offset_b: s.channel(ChannelId::PumpCsfOffset).actuator_offset,
            phase_offset_c: s.controller_offset_rad,
            beat_amplitude_2omega: if pump_beat { 1.0 } else { 0.0 },
            beat_amplitude_omega: self.beat_omega(),
        }
    }

    /// Engage all four locks on `mode` and step until they are acquired.
    pub fn lock_all_on_mode(&mut self, mode: usize, dt: f64) -> Result<(), PlantError> {
        let settle = self.config.lock_acquisition_s;
        let ticks = ((settle / dt).ceil() as usize).max(1);
        self.set_lock(ChannelId::ShgLength, true)?;
        self.run_for(ticks, dt)?;
        self.set_lock(ChannelId::OpaLength, true)?;
        self.lock_to_mode(mode)?;
        self.run_for(ticks, dt)?;
        self.set_lock(ChannelId::PumpCsfOffset, true)?;
        self.run_for(ticks, dt)?;
        self.set_lock(ChannelId::CsfLoOffset, true)?;
        self.run_for(ticks, dt)
    }

    fn run_for(&mut self, ticks: usize, dt: f64) -> Result<(), PlantError> {
        for _ in 0..ticks {
            self.step(dt)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
