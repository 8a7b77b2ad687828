//! Drivers that run the supervisor, or plain search procedures, against a plant.

use serde::{Deserialize, Serialize};

use super::supervisor::Supervisor;
use super::{DriveError, OperationMode, PlantCommand, Reading, SupervisorConfig};
use crate::plant::{ChannelId, Plant, PlantError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelockOutcome {
    pub success: bool,
    pub elapsed_s: f64,
    /// First reading after the sequence, dB (signed).
    pub final_squeezing_db: f64,
    pub modes_tried: usize,
}

pub fn apply_command(plant: &mut Plant, command: &PlantCommand) -> Result<(), PlantError> {
    command.apply(plant)
}

/// Squeezing reading plus beat amplitude, as the supervisor consumes them.
pub fn take_reading(plant: &mut Plant) -> Reading {
    let s = plant.read_squeezing();
    Reading {
        squeezing_db: s.db,
        valid: s.valid,
        beat: plant.read_beat_amplitude(),
    }
}

fn settle(plant: &mut Plant, seconds: f64, dt: f64) -> Result<(), PlantError> {
    let ticks = ((seconds / dt) - 1e-9).ceil().max(1.0) as usize;
    for _ in 0..ticks {
        plant.step(dt)?;
    }
    Ok(())
}

/// Lock the OPA onto `mode`, engage B and read the beat amplitude.
fn probe_mode(plant: &mut Plant, mode: usize, config: &SupervisorConfig, dt: f64) -> Result<f64, PlantError> {
    plant.set_lock(ChannelId::OpaLength, true)?;
    plant.lock_to_mode(mode)?;
    settle(plant, config.acquisition_wait_s, dt)?;
    match plant.set_lock(ChannelId::PumpCsfOffset, true) {
        Ok(()) | Err(PlantError::PrerequisiteNotLocked { .. }) => {}
        Err(e) => return Err(e),
    }
    settle(plant, config.acquisition_wait_s, dt)?;
    Ok(plant.read_beat_amplitude())
}

/// First mode whose beat amplitude reaches the threshold, in stored-offset
/// order. Requires the SHG lock.
pub fn find_double_resonance(plant: &mut Plant, config: &SupervisorConfig, dt: f64) -> Result<Option<usize>, PlantError> {
    if !plant.state().status(ChannelId::ShgLength).is_locked() {
        return Err(PlantError::NotLocked(ChannelId::ShgLength));
    }
    for mode in 0..plant.n_modes() {
        if probe_mode(plant, mode, config, dt)? >= config.beat_threshold {
            return Ok(Some(mode));
        }
    }
    Ok(None)
}

/// Beat amplitude of every mode; the exhaustive reference for
/// [`find_double_resonance`].
pub fn exhaustive_beat_scan(plant: &mut Plant, config: &SupervisorConfig, dt: f64) -> Result<Vec<f64>, PlantError> {
    if !plant.state().status(ChannelId::ShgLength).is_locked() {
        return Err(PlantError::NotLocked(ChannelId::ShgLength));
    }
    (0..plant.n_modes()).map(|m| probe_mode(plant, m, config, dt)).collect()
}

/// Run one full relock sequence (tear-down to vertex) and report how it went.
pub fn run_relock_sequence(plant: &mut Plant, config: &SupervisorConfig, dt: f64) -> Result<RelockOutcome, DriveError> {
    let outcomes = run_relock_attempts(plant, config, dt, 1, |_, _| {})?;
    Ok(outcomes[0])
}

/// Run relock sequences, restarting automatically after failures, until one
/// succeeds or `max_attempts` have been made. `hook` is called every tick
/// with the time since the start, e.g. to inject disturbances.
pub fn run_relock_attempts<F>(
    plant: &mut Plant,
    config: &SupervisorConfig,
    dt: f64,
    max_attempts: usize,
    mut hook: F,
) -> Result<Vec<RelockOutcome>, DriveError>
where
    F: FnMut(&mut Plant, f64),
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(PlantError::TimeStep(dt).into());
    }
    let cfg = config.clone().with_mode(OperationMode::AutoRelock);
    let n = plant.n_modes();
    let worst_attempt = cfg.teardown_s
        + cfg.acquisition_wait_s * (2 * n + 2) as f64
        + cfg.vcurve.dwell_s * (cfg.vcurve.n_points * (1 + cfg.vcurve.max_rescans)) as f64;
    let timeout = 2.0 * worst_attempt + 10.0 * cfg.acquisition_wait_s * (cfg.max_retries + 1) as f64;

    let mut sup = Supervisor::new(cfg, n)?;
    let t0 = plant.time();
    let mut attempt_start = t0;
    let mut outcomes = Vec::new();
    let mut k: u64 = 0;
    loop {
        let clock = t0 + k as f64 * dt;
        if sup.is_due(clock) {
            let failed_before = sup.state().sequences_failed;
            let reading = take_reading(plant);
            for cmd in sup.supervise_step(&reading, clock) {
                if let Err(e) = cmd.apply(plant) {
                    sup.command_failed(&cmd, &e.to_string(), clock);
                    break;
                }
            }
            let modes_tried = sup.state().modes_tried;
            if sup.state().sequences_failed > failed_before {
                outcomes.push(RelockOutcome {
                    success: false,
                    elapsed_s: clock - attempt_start,
                    final_squeezing_db: reading.squeezing_db,
                    modes_tried,
                });
                attempt_start = clock;
                if outcomes.len() >= max_attempts {
                    return Ok(outcomes);
                }
            }
            if sup.state().sequences_completed > 0 {
                outcomes.push(RelockOutcome {
                    success: true,
                    elapsed_s: clock - attempt_start,
                    final_squeezing_db: plant.read_squeezing().db,
                    modes_tried,
                });
                return Ok(outcomes);
            }
        }
        if clock - attempt_start > timeout {
            outcomes.push(RelockOutcome {
                success: false,
                elapsed_s: clock - attempt_start,
                final_squeezing_db: plant.read_squeezing().db,
                modes_tried: sup.state().modes_tried,
            });
            if outcomes.len() >= max_attempts {
                return Ok(outcomes);
            }
            attempt_start = clock;
            sup.begin_relock(clock, false);
        }
        hook(plant, clock - t0);
        plant.step(dt)?;
        k += 1;
    }
}
