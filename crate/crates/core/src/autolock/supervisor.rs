//! Supervisory state machine.
//!
//! Each phase names the action taken at the next wake-up. Handlers either
//! schedule the following wake-up or fall straight through to the next phase
//! within the same call.

use serde::{Deserialize, Serialize};

use super::vcurve::fit_v_curve_with;
use super::{OperationMode, PlantCommand, Reading, SupervisorConfig, SupervisorError};
use crate::plant::ChannelId;

const CLOCK_EPS: f64 = 1e-6;
/// A vertex further out than this fraction of the half range triggers a re-centred scan.
const EDGE_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum ControllerPhase {
    Monitoring,
    TearDown,
    RelockShg,
    RelockOpaModeSearch { mode: usize },
    EngageB { mode: usize },
    CheckDoubleResonance { mode: usize },
    EngageC,
    /// `(absolute offset rad, squeezing magnitude dB)` collected so far.
    VCurveScan { collected: Vec<(f64, f64)> },
    ApplyOffset,
    /// `history` holds the cycle means seen during this probe run.
    CompensateProbe { direction: i8, history: Vec<f64> },
}

impl ControllerPhase {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerPhase::Monitoring => "monitoring",
            ControllerPhase::TearDown => "tear_down",
            ControllerPhase::RelockShg => "relock_shg",
            ControllerPhase::RelockOpaModeSearch { .. } => "relock_opa_mode_search",
            ControllerPhase::EngageB { .. } => "engage_b",
            ControllerPhase::CheckDoubleResonance { .. } => "check_double_resonance",
            ControllerPhase::EngageC => "engage_c",
            ControllerPhase::VCurveScan { .. } => "vcurve_scan",
            ControllerPhase::ApplyOffset => "apply_offset",
            ControllerPhase::CompensateProbe { .. } => "compensate_probe",
        }
    }

    pub fn in_sequence(&self) -> bool {
        !matches!(self, ControllerPhase::Monitoring | ControllerPhase::CompensateProbe { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub phase: ControllerPhase,
    pub best_squeezing_seen_db: Option<f64>,
    /// Cumulative phase offset commanded so far, rad.
    pub applied_offset_rad: f64,
    /// Relock sequences triggered from monitoring (the initial lock-up is not counted).
    pub relock_count: usize,
    pub time_in_sequence_s: f64,
    pub modes_tried: usize,
    pub last_good_mode: usize,
    pub sequences_completed: usize,
    pub sequences_failed: usize,
    pub probe_runs: usize,
}

/// One JSON-lines record of the controller event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub t: f64,
    pub phase: String,
    pub command: Option<String>,
    #[serde(rename = "reading_dB")]
    pub reading_db: Option<f64>,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq)]
struct ScanPlan {
    center: f64,
    next_index: usize,
    rescans: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct ProbeRun {
    baseline: f64,
    last: f64,
    improved: bool,
    reversed: bool,
}

enum Next {
    Wait(f64),
    Now,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Supervisor {
    config: SupervisorConfig,
    n_modes: usize,
    state: ControllerState,
    next_wake: f64,
    sequence_start: f64,
    startup: bool,
    mode_cursor: usize,
    scan: ScanPlan,
    probe: ProbeRun,
    cycle: Vec<f64>,
    bad_streak: usize,
    below_streak: usize,
    issuer: Option<ControllerPhase>,
    failing_phase: Option<(String, usize)>,
    log: Vec<EventLogEntry>,
    notices: Vec<String>,
}

impl Supervisor {
    /// A supervisor that starts by locking the apparatus up from scratch.
    pub fn new(config: SupervisorConfig, n_modes: usize) -> Result<Self, SupervisorError> {
        config.validate()?;
        if n_modes == 0 {
            return Err(SupervisorError::Config {
                field: "n_modes".into(),
                reason: "plant reports no resonant modes".into(),
            });
        }
        Ok(Self {
            config,
            n_modes,
            state: ControllerState {
                phase: ControllerPhase::TearDown,
                best_squeezing_seen_db: None,
                applied_offset_rad: 0.0,
                relock_count: 0,
                time_in_sequence_s: 0.0,
                modes_tried: 0,
                last_good_mode: 0,
                sequences_completed: 0,
                sequences_failed: 0,
                probe_runs: 0,
            },
            next_wake: 0.0,
            sequence_start: 0.0,
            startup: true,
            mode_cursor: 0,
            scan: ScanPlan {
                center: 0.0,
                next_index: 0,
                rescans: 0,
            },
            probe: ProbeRun {
                baseline: 0.0,
                last: 0.0,
                improved: false,
                reversed: false,
            },
            cycle: Vec::new(),
            bad_streak: 0,
            below_streak: 0,
            issuer: None,
            failing_phase: None,
            log: Vec::new(),
            notices: Vec::new(),
        })
    }

    /// A supervisor that believes the apparatus is already locked and optimised.
    pub fn monitoring(config: SupervisorConfig, n_modes: usize, now: f64) -> Result<Self, SupervisorError> {
        let mut s = Self::new(config, n_modes)?;
        s.startup = false;
        s.state.phase = ControllerPhase::Monitoring;
        s.next_wake = now;
        Ok(s)
    }

    pub fn config(&self) -> &SupervisorConfig {
        &self.config
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn phase(&self) -> &ControllerPhase {
        &self.state.phase
    }

    /// Clock time of the next wake-up.
    pub fn next_wake(&self) -> f64 {
        self.next_wake
    }

    pub fn is_due(&self, clock: f64) -> bool {
        clock + CLOCK_EPS >= self.next_wake
    }

    pub fn drain_log(&mut self) -> Vec<EventLogEntry> {
        std::mem::take(&mut self.log)
    }

    /// Short labels of notable transitions (relock start/done/failed) since the last call.
    pub fn drain_notices(&mut self) -> Vec<String> {
        std::mem::take(&mut self.notices)
    }

    /// Handle a reading. Returns nothing until the scheduled wake-up is due.
    pub fn supervise_step(&mut self, reading: &Reading, clock: f64) -> Vec<PlantCommand> {
        let mut out = Vec::new();
        if !self.is_due(clock) {
            return out;
        }
        for _ in 0..64 {
            let from = self.state.phase.clone();
            let before = out.len();
            let next = self.handle(reading, clock, &mut out);
            if out.len() > before {
                self.issuer = Some(from.clone());
            }
            if self.state.phase != from || out.len() > before {
                let outcome = if out.len() > before { "issued" } else { "transition" };
                let cmds: Vec<String> = out[before..].iter().map(|c| c.to_string()).collect();
                self.push_log(
                    clock,
                    &from,
                    (!cmds.is_empty()).then(|| cmds.join(";")),
                    Some(reading.squeezing_db),
                    format!("{outcome}->{}", self.state.phase.label()),
                );
            }
            match next {
                Next::Wait(dt) => {
                    self.next_wake = clock + dt;
                    break;
                }
                Next::Now => continue,
            }
        }
        if self.state.phase.in_sequence() {
            self.state.time_in_sequence_s = clock - self.sequence_start;
        }
        out
    }

    /// Report that a command emitted by the last step was rejected by the plant.
    /// The issuing phase is retried after a lock-acquisition wait; persistent
    /// failure restarts the whole sequence.
    pub fn command_failed(&mut self, command: &PlantCommand, error: &str, clock: f64) {
        let issuer = self.issuer.clone().unwrap_or(ControllerPhase::TearDown);
        let key = issuer.label().to_string();
        let count = match &self.failing_phase {
            Some((k, n)) if *k == key => n + 1,
            _ => 1,
        };
        self.failing_phase = Some((key, count));
        self.push_log(
            clock,
            &issuer,
            Some(command.to_string()),
            None,
            format!("rejected: {error}"),
        );
        if count > self.config.max_retries {
            self.failing_phase = None;
            self.fail_sequence(clock, "retries exhausted");
        } else {
            self.state.phase = issuer;
        }
        self.next_wake = clock + self.config.acquisition_wait_s;
    }

    /// Begin a relock sequence now, e.g. from an external trigger.
    pub fn begin_relock(&mut self, clock: f64, counted: bool) {
        if counted {
            self.state.relock_count += 1;
            self.notices.push("relock_start".into());
        }
        self.startup = !counted && self.startup;
        self.state.phase = ControllerPhase::TearDown;
        self.next_wake = clock;
    }

    fn push_log(&mut self, t: f64, phase: &ControllerPhase, command: Option<String>, reading_db: Option<f64>, outcome: String) {
        self.log.push(EventLogEntry {
            t,
            phase: phase.label().to_string(),
            command,
            reading_db,
            outcome,
        });
    }

    fn mode_at(&self, cursor: usize) -> usize {
        (self.state.last_good_mode + cursor) % self.n_modes
    }

    fn fail_sequence(&mut self, clock: f64, reason: &str) {
        self.state.sequences_failed += 1;
        let phase = self.state.phase.clone();
        self.push_log(clock, &phase, None, None, format!("sequence_failed: {reason}"));
        self.notices.push("relock_failed".into());
        self.state.phase = ControllerPhase::TearDown;
    }

    fn start_relock(&mut self, counted: bool) -> Next {
        if counted {
            self.state.relock_count += 1;
            self.notices.push("relock_start".into());
        }
        self.state.phase = ControllerPhase::TearDown;
        Next::Now
    }

    /// Wait until the next sampling-grid instant.
    fn wait_for_sample(&self, clock: f64) -> Next {
        let p = self.config.sample_period_s;
        let next = ((clock + CLOCK_EPS) / p).floor() * p + p;
        Next::Wait(next - clock)
    }

    fn emit_offset(&mut self, delta: f64, out: &mut Vec<PlantCommand>) {
        let range = self.config.actuator_range_rad;
        let target = (self.state.applied_offset_rad + delta).clamp(-range, range);
        let delta = target - self.state.applied_offset_rad;
        if delta != 0.0 {
            self.state.applied_offset_rad = target;
            out.push(PlantCommand::ApplyPhaseOffset { delta_rad: delta });
        }
    }

    fn handle(&mut self, r: &Reading, clock: f64, out: &mut Vec<PlantCommand>) -> Next {
        let acq = self.config.acquisition_wait_s;
        match self.state.phase.clone() {
            ControllerPhase::Monitoring => self.monitor(r, clock, out),
            ControllerPhase::CompensateProbe { direction, history } => self.probe_step(r, clock, direction, history, out),
            ControllerPhase::TearDown => {
                self.sequence_start = clock;
                self.state.time_in_sequence_s = 0.0;
                self.state.modes_tried = 0;
                self.mode_cursor = 0;
                for &ch in ChannelId::ALL.iter().rev() {
                    out.push(PlantCommand::SetLock {
                        channel: ch,
                        engage: false,
                    });
                }
                self.state.phase = ControllerPhase::RelockShg;
                Next::Wait(self.config.teardown_s)
            }
            ControllerPhase::RelockShg => {
                out.push(PlantCommand::SetLock {
                    channel: ChannelId::ShgLength,
                    engage: true,
                });
                self.state.phase = ControllerPhase::RelockOpaModeSearch { mode: self.mode_at(0) };
                Next::Wait(acq)
            }
            ControllerPhase::RelockOpaModeSearch { mode } => {
                out.push(PlantCommand::SetLock {
                    channel: ChannelId::OpaLength,
                    engage: true,
                });
                out.push(PlantCommand::LockToMode { mode });
                self.state.modes_tried = self.state.modes_tried.max(self.mode_cursor + 1);
                self.state.phase = ControllerPhase::EngageB { mode };
                Next::Wait(acq)
            }
            ControllerPhase::EngageB { mode } => {
                out.push(PlantCommand::SetLock {
                    channel: ChannelId::PumpCsfOffset,
                    engage: true,
                });
                self.state.phase = ControllerPhase::CheckDoubleResonance { mode };
                Next::Wait(acq)
            }
            ControllerPhase::CheckDoubleResonance { mode } => {
                if r.beat >= self.config.beat_threshold {
                    self.state.last_good_mode = mode;
                    self.mode_cursor = 0;
                    self.state.phase = ControllerPhase::EngageC;
                    return Next::Now;
                }
                self.mode_cursor += 1;
                if self.mode_cursor >= self.n_modes {
                    self.fail_sequence(clock, "no double resonance");
                    return Next::Now;
                }
                let next = self.mode_at(self.mode_cursor);
                out.push(PlantCommand::LockToMode { mode: next });
                self.state.modes_tried = self.mode_cursor + 1;
                self.state.phase = ControllerPhase::EngageB { mode: next };
                Next::Wait(acq)
            }
            ControllerPhase::EngageC => {
                out.push(PlantCommand::SetLock {
                    channel: ChannelId::CsfLoOffset,
                    engage: true,
                });
                self.scan = ScanPlan {
                    center: self.state.applied_offset_rad,
                    next_index: 0,
                    rescans: 0,
                };
                self.state.phase = ControllerPhase::VCurveScan { collected: Vec::new() };
                Next::Wait(acq)
            }
            ControllerPhase::VCurveScan { mut collected } => {
                if self.scan.next_index > 0 {
                    if !r.valid {
                        self.fail_sequence(clock, "lock lost during scan");
                        return Next::Now;
                    }
                    collected.push((self.state.applied_offset_rad, -r.squeezing_db));
                }
                let offsets = self.config.vcurve.offsets();
                if self.scan.next_index >= offsets.len() {
                    self.state.phase = ControllerPhase::VCurveScan { collected };
                    return self.apply_vertex(clock, out);
                }
                let target = self.scan.center + offsets[self.scan.next_index];
                self.emit_offset(target - self.state.applied_offset_rad, out);
                self.scan.next_index += 1;
                self.state.phase = ControllerPhase::VCurveScan { collected };
                Next::Wait(self.config.vcurve.dwell_s)
            }
            ControllerPhase::ApplyOffset => self.apply_vertex(clock, out),
        }
    }

    fn apply_vertex(&mut self, clock: f64, out: &mut Vec<PlantCommand>) -> Next {
        let collected = match &self.state.phase {
            ControllerPhase::VCurveScan { collected } => collected.clone(),
            _ => Vec::new(),
        };
        self.state.phase = ControllerPhase::ApplyOffset;
        let half = self.config.vcurve.half_range_rad;
        let fit = fit_v_curve_with(&collected, self.config.vcurve.model);
        let can_rescan = self.scan.rescans < self.config.vcurve.max_rescans;
        let target = match fit {
            Ok(f) if (f.vertex_rad - self.scan.center).abs() > EDGE_FRACTION * half && can_rescan => {
                return self.rescan(f.vertex_rad);
            }
            Ok(f) => f.vertex_rad,
            Err(_) if can_rescan => return self.rescan(self.scan.center),
            Err(_) => collected
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map_or(self.scan.center, |p| p.0),
        };
        self.emit_offset(target - self.state.applied_offset_rad, out);
        self.complete_sequence(clock);
        self.wait_for_sample(clock)
    }

    fn rescan(&mut self, center: f64) -> Next {
        self.scan = ScanPlan {
            center,
            next_index: 0,
            rescans: self.scan.rescans + 1,
        };
        self.state.phase = ControllerPhase::VCurveScan { collected: Vec::new() };
        Next::Now
    }

    fn complete_sequence(&mut self, clock: f64) {
        self.state.sequences_completed += 1;
        self.state.time_in_sequence_s = clock - self.sequence_start;
        self.failing_phase = None;
        self.bad_streak = 0;
        self.below_streak = 0;
        self.cycle.clear();
        self.state.best_squeezing_seen_db = None;
        let label = if self.startup { "startup_done" } else { "relock_done" };
        self.startup = false;
        self.notices.push(label.into());
        self.push_log(
            clock,
            &ControllerPhase::ApplyOffset,
            None,
            None,
            format!("{label}: {:.1} s, {} modes", self.state.time_in_sequence_s, self.state.modes_tried),
        );
        self.state.phase = ControllerPhase::Monitoring;
    }

    /// Debounced check for readings that demand a relock. In drift
    /// compensation only invalid readings do.
    fn relock_due(&mut self, r: &Reading) -> bool {
        let bad = match self.config.mode {
            OperationMode::AutoRelock => !r.valid || -r.squeezing_db < self.config.squeezing_threshold_db,
            OperationMode::DriftCompensation => !r.valid,
        };
        self.bad_streak = if bad { self.bad_streak + 1 } else { 0 };
        self.bad_streak >= self.config.debounce_samples
    }

    fn monitor(&mut self, r: &Reading, clock: f64, out: &mut Vec<PlantCommand>) -> Next {
        if self.relock_due(r) {
            self.bad_streak = 0;
            return self.start_relock(true);
        }
        if self.config.mode == OperationMode::AutoRelock || !r.valid {
            return self.wait_for_sample(clock);
        }

        let magnitude = -r.squeezing_db;
        let dc = self.config.drift_comp.clone();
        self.below_streak = if magnitude < self.config.squeezing_threshold_db {
            self.below_streak + 1
        } else {
            0
        };
        self.cycle.push(magnitude);
        let crossed = self.below_streak >= self.config.debounce_samples;
        if self.cycle.len() < dc.cycle_length && !crossed {
            return self.wait_for_sample(clock);
        }
        let mean = self.cycle.iter().sum::<f64>() / self.cycle.len() as f64;
        self.cycle.clear();
        let best = match self.state.best_squeezing_seen_db {
            None => mean,
            Some(b) => mean.max(b),
        };
        self.state.best_squeezing_seen_db = Some(best);
        if crossed || best - mean >= dc.trigger_drop_db {
            self.below_streak = 0;
            self.state.probe_runs += 1;
            self.probe = ProbeRun {
                baseline: mean,
                last: mean,
                improved: false,
                reversed: false,
            };
            self.emit_offset(dc.probe_step_rad, out);
            self.state.phase = ControllerPhase::CompensateProbe {
                direction: 1,
                history: vec![mean],
            };
        }
        self.wait_for_sample(clock)
    }

    fn probe_step(
        &mut self,
        r: &Reading,
        clock: f64,
        direction: i8,
        mut history: Vec<f64>,
        out: &mut Vec<PlantCommand>,
    ) -> Next {
        if self.relock_due(r) {
            self.bad_streak = 0;
            self.cycle.clear();
            return self.start_relock(true);
        }
        if !r.valid {
            return self.wait_for_sample(clock);
        }
        let dc = self.config.drift_comp.clone();
        self.cycle.push(-r.squeezing_db);
        if self.cycle.len() < dc.cycle_length {
            return self.wait_for_sample(clock);
        }
        let mean = self.cycle.iter().sum::<f64>() / self.cycle.len() as f64;
        self.cycle.clear();
        history.push(mean);
        let dir = f64::from(direction);
        let step = dc.probe_step_rad;
        // Runaway guard: a probe run never walks further than the actuator allows.
        let max_steps = (self.config.actuator_range_rad / step).ceil() as usize + 2;

        let converge = |this: &mut Self, level: f64| {
            let prev = this.state.best_squeezing_seen_db.unwrap_or(level);
            this.state.best_squeezing_seen_db = Some(level.max(prev - dc.reference_decay_db));
            this.state.phase = ControllerPhase::Monitoring;
        };
        if mean > self.probe.last && history.len() < max_steps {
            self.probe.improved = true;
            self.probe.last = mean;
            self.emit_offset(dir * step, out);
            self.state.phase = ControllerPhase::CompensateProbe { direction, history };
        } else if !self.probe.improved && !self.probe.reversed {
            self.probe.reversed = true;
            self.probe.last = self.probe.baseline;
            self.emit_offset(-2.0 * dir * step, out);
            self.state.phase = ControllerPhase::CompensateProbe {
                direction: -direction,
                history,
            };
        } else {
            // Step back onto the best point found.
            self.emit_offset(-dir * step, out);
            let level = self.probe.last;
            converge(self, level);
        }
        self.wait_for_sample(clock)
    }
}
