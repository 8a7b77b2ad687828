//! Long-run campaigns: a plant and a supervisor sharing one fixed-step clock.
//!
//! Every plant interaction is recorded in an action log, so a campaign can be
//! replayed against a fresh plant built from the same seed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autolock::{take_reading, EventLogEntry, PlantCommand, Reading, Supervisor, SupervisorConfig, SupervisorError};
use crate::characterize::{duty_cycle_report, summarize_trace, CharacterizeError, DutyCycleReport, TraceRecord, TraceSummary};
use crate::plant::{ChannelId, Disturbance, DriftConfig, Plant, PlantConfig, PlantError, PlantEventKind, PlantState};

const CLOCK_EPS: f64 = 1e-6;

/// Thresholds of the cumulative duty curve reported with every campaign, dB.
pub const DEFAULT_THRESHOLDS_DB: [f64; 15] =
    [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 9.5, 10.0, 11.0, 12.0, 13.0];

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign config `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Supervisor(#[from] SupervisorError),
    #[error(transparent)]
    Analysis(#[from] CharacterizeError),
}

fn config_err(field: &str, reason: impl Into<String>) -> CampaignError {
    CampaignError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledDisturbance {
    pub t_s: f64,
    pub kind: Disturbance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub plant: PlantConfig,
    pub supervisor: SupervisorConfig,
    pub duration_s: f64,
    pub seed: u64,
    pub dt_s: f64,
    /// Simulated seconds per wall-clock second; informational only.
    pub time_compression: f64,
    pub disturbances: Vec<ScheduledDisturbance>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::default(),
            supervisor: SupervisorConfig::default(),
            duration_s: 3600.0,
            seed: 42,
            dt_s: 0.1,
            time_compression: 1.0,
            disturbances: Vec::new(),
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), CampaignError> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(config_err("duration_s", format!("must be positive, got {}", self.duration_s)));
        }
        if !(self.dt_s > 0.0 && self.dt_s <= self.duration_s) {
            return Err(config_err("dt_s", format!("must lie in (0, duration_s], got {}", self.dt_s)));
        }
        if !(self.time_compression > 0.0 && self.time_compression.is_finite()) {
            return Err(config_err("time_compression", "must be positive"));
        }
        for (i, d) in self.disturbances.iter().enumerate() {
            if !(0.0..=self.duration_s).contains(&d.t_s) {
                return Err(config_err(
                    &format!("disturbances[{i}].t_s"),
                    format!("{} lies outside the campaign", d.t_s),
                ));
            }
        }
        self.plant.validate()?;
        self.supervisor.validate()?;
        Ok(())
    }

    fn n_ticks(&self) -> u64 {
        (self.duration_s / self.dt_s).round() as u64
    }
}

/// One plant interaction, stamped with its tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Read,
    Command { command: PlantCommand },
    Disturb { kind: Disturbance },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedAction {
    pub tick: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub duration_s: f64,
    pub seed: u64,
    pub relock_count: usize,
    pub failed_sequences: usize,
    pub probe_runs: usize,
    pub lock_loss_events: usize,
    pub resonance_hops: usize,
    pub trace: TraceSummary,
    pub duty: DutyCycleReport,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub trace: Vec<TraceRecord>,
    pub events: Vec<EventLogEntry>,
    pub actions: Vec<LoggedAction>,
    /// Every reading taken, in order.
    pub readings: Vec<Reading>,
    pub final_state: PlantState,
    pub summary: CampaignSummary,
}

pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignResult, CampaignError> {
    config.validate()?;
    let mut plant = Plant::new(config.plant.clone(), config.seed)?;
    let mut sup = Supervisor::new(config.supervisor.clone(), plant.n_modes())?;
    let dt = config.dt_s;
    let period = config.plant.readout.measurement_period_s;

    let mut disturbances = config.disturbances.clone();
    disturbances.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
    let mut next_disturbance = 0;

    let mut trace = Vec::new();
    let mut events = Vec::new();
    let mut actions = Vec::new();
    let mut readings = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    let (mut lock_losses, mut hops) = (0, 0);
    let mut n_measured: u64 = 0;

    for tick in 0..config.n_ticks() {
        let t = tick as f64 * dt;
        while next_disturbance < disturbances.len() && disturbances[next_disturbance].t_s <= t + CLOCK_EPS {
            let kind = disturbances[next_disturbance].kind;
            plant.inject_disturbance(kind);
            actions.push(LoggedAction {
                tick,
                action: Action::Disturb { kind },
            });
            next_disturbance += 1;
        }
        for ev in plant.drain_events() {
            match ev.kind {
                PlantEventKind::LockLoss(_) => lock_losses += 1,
                PlantEventKind::ResonanceHop { .. } => hops += 1,
                PlantEventKind::Disturbance(_) => {}
            }
            pending.push(ev.label());
        }

        let measure = t + CLOCK_EPS >= n_measured as f64 * period;
        let wake = sup.is_due(t);
        if measure || wake {
            let reading = take_reading(&mut plant);
            actions.push(LoggedAction {
                tick,
                action: Action::Read,
            });
            readings.push(reading);
            if wake {
                for command in sup.supervise_step(&reading, t) {
                    actions.push(LoggedAction {
                        tick,
                        action: Action::Command { command },
                    });
                    if let Err(e) = command.apply(&mut plant) {
                        sup.command_failed(&command, &e.to_string(), t);
                        break;
                    }
                }
                pending.extend(sup.drain_notices());
            }
            if measure {
                trace.push(TraceRecord {
                    t,
                    squeezing_db: reading.squeezing_db,
                    antisqueezing_db: None,
                    locked: reading.valid,
                    controller_phase: sup.phase().label().to_string(),
                    applied_offset_rad: sup.state().applied_offset_rad,
                    pump_mw: plant.state().pump_power_w * 1e3,
                    event: (!pending.is_empty()).then(|| pending.join(";")),
                });
                pending.clear();
                n_measured += 1;
            }
        }
        events.extend(sup.drain_log());
        plant.step(dt)?;
    }

    let duty = duty_cycle_report(&trace, &DEFAULT_THRESHOLDS_DB, crate::characterize::duty::DEFAULT_BIN_WIDTH_DB)?;
    let trace_summary = summarize_trace(&trace)?;
    let st = sup.state();
    let summary = CampaignSummary {
        duration_s: config.duration_s,
        seed: config.seed,
        relock_count: st.relock_count,
        failed_sequences: st.sequences_failed,
        probe_runs: st.probe_runs,
        lock_loss_events: lock_losses,
        resonance_hops: hops,
        trace: trace_summary,
        duty,
    };
    Ok(CampaignResult {
        trace,
        events,
        actions,
        readings,
        final_state: plant.state().clone(),
        summary,
    })
}

#[derive(Debug, Clone)]
pub struct Replay {
    pub readings: Vec<Reading>,
    pub final_state: PlantState,
}

/// Re-apply an action log to a fresh plant. Commands the plant rejected in
/// the original run are rejected again and ignored.
pub fn replay(config: &CampaignConfig, actions: &[LoggedAction]) -> Result<Replay, CampaignError> {
    config.validate()?;
    let mut plant = Plant::new(config.plant.clone(), config.seed)?;
    let mut readings = Vec::new();
    let mut next = 0;
    for tick in 0..config.n_ticks() {
        while next < actions.len() && actions[next].tick == tick {
            match actions[next].action {
                Action::Read => readings.push(take_reading(&mut plant)),
                Action::Command { command } => {
                    let _ = command.apply(&mut plant);
                }
                Action::Disturb { kind } => plant.inject_disturbance(kind),
            }
            next += 1;
        }
        plant.drain_events();
        plant.step(config.dt_s)?;
    }
    Ok(Replay {
        readings,
        final_state: plant.state().clone(),
    })
}

/// Noiseless squeezing of the locked, optimally phased plant with drifts off, dB (signed).
pub fn drift_free_baseline_db(config: &PlantConfig) -> Result<f64, PlantError> {
    let cfg = PlantConfig {
        drift: DriftConfig::frozen(),
        ..config.clone()
    };
    let mode = cfg.double_resonance_mode;
    let mut plant = Plant::new(cfg, 0)?;
    plant.lock_all_on_mode(mode, 0.1)?;
    debug_assert!(plant.state().status(ChannelId::CsfLoOffset).is_locked());
    Ok(plant.noiseless_squeezing_db())
}
