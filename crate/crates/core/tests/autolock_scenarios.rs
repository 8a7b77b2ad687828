use squeezelab::autolock::{
    run_relock_attempts, take_reading, ControllerPhase, OperationMode, PlantCommand, Supervisor, SupervisorConfig,
};
use squeezelab::plant::{Disturbance, DriftConfig, Plant, PlantConfig};

const DT: f64 = 0.1;

fn quiet_config(dr_mode: usize) -> PlantConfig {
    let mut cfg = PlantConfig {
        drift: DriftConfig::frozen(),
        double_resonance_mode: dr_mode,
        ..PlantConfig::default()
    };
    cfg.readout.noise_rms_db = 0.0;
    cfg.beat.noise_rms = 0.0;
    cfg
}

fn locked(cfg: PlantConfig, seed: u64) -> Plant {
    let mode = cfg.double_resonance_mode;
    let mut p = Plant::new(cfg, seed).unwrap();
    p.lock_all_on_mode(mode, DT).unwrap();
    p
}

/// Drive a supervisor for `samples` wake-ups; returns every command issued.
fn drive(plant: &mut Plant, sup: &mut Supervisor, samples: usize) -> Vec<PlantCommand> {
    let mut issued = Vec::new();
    let mut woken = 0;
    while woken < samples {
        let now = plant.time();
        if sup.is_due(now) {
            woken += 1;
            let r = take_reading(plant);
            for cmd in sup.supervise_step(&r, now) {
                cmd.apply(plant).unwrap();
                issued.push(cmd);
            }
        }
        plant.step(DT).unwrap();
    }
    issued
}

fn compensator(trigger_db: f64) -> SupervisorConfig {
    let mut cfg = SupervisorConfig::default().with_mode(OperationMode::DriftCompensation);
    cfg.drift_comp.trigger_drop_db = trigger_db;
    cfg
}

fn restore_after_step(step_rad: f64, trigger_db: f64) -> (usize, f64) {
    let cfg = compensator(trigger_db);
    let cycle = cfg.drift_comp.cycle_length;
    let mut p = locked(quiet_config(0), 3);
    let mut sup = Supervisor::monitoring(cfg, p.n_modes(), p.time()).unwrap();
    drive(&mut p, &mut sup, 4 * cycle);
    assert!(sup.state().best_squeezing_seen_db.is_some());

    p.inject_disturbance(Disturbance::AngleStep { rad: step_rad });
    let mut cycles = 0;
    let mut started = false;
    while cycles < 40 {
        drive(&mut p, &mut sup, cycle);
        cycles += 1;
        started |= sup.state().probe_runs > 0;
        if started && matches!(sup.phase(), ControllerPhase::Monitoring) {
            break;
        }
    }
    (cycles, p.state().angle_error())
}

#[test]
fn compensator_restores_four_mrad_step() {
    // A 4 mrad error costs about 0.1 dB, below the default trigger.
    let (cycles, err) = restore_after_step(4e-3, 0.05);
    assert!(cycles <= 8, "took {cycles} cycles");
    assert!(err.abs() <= 0.5e-3 + 1e-12, "residual {err}");
}

#[test]
fn compensator_restores_eight_mrad_step_at_default_trigger() {
    let (cycles, err) = restore_after_step(8e-3, 0.2);
    assert!(cycles <= 12, "took {cycles} cycles");
    assert!(err.abs() <= 0.5e-3 + 1e-12, "residual {err}");
}

#[test]
fn compensator_restores_negative_step() {
    let (cycles, err) = restore_after_step(-6e-3, 0.2);
    assert!(cycles <= 10, "took {cycles} cycles");
    assert!(err.abs() <= 0.5e-3 + 1e-12, "residual {err}");
}

#[test]
fn zero_drift_issues_no_probes() {
    let mut cfg = quiet_config(0);
    cfg.readout.noise_rms_db = 0.05;
    let mut p = locked(cfg, 9);
    let sc = SupervisorConfig::default().with_mode(OperationMode::DriftCompensation);
    let mut sup = Supervisor::monitoring(sc, p.n_modes(), p.time()).unwrap();
    let issued = drive(&mut p, &mut sup, 10_000);
    assert!(issued.is_empty(), "{} commands", issued.len());
    assert_eq!(sup.state().probe_runs, 0);
}

#[test]
fn auto_relock_triggers_after_debounce() {
    let mut p = locked(quiet_config(0), 4);
    let mut sup = Supervisor::monitoring(SupervisorConfig::default(), p.n_modes(), p.time()).unwrap();
    drive(&mut p, &mut sup, 3);
    assert_eq!(sup.state().relock_count, 0);
    p.inject_disturbance(Disturbance::AngleStep { rad: 0.1 });
    drive(&mut p, &mut sup, 1);
    assert!(matches!(sup.phase(), ControllerPhase::Monitoring));
    drive(&mut p, &mut sup, 1);
    assert_eq!(sup.state().relock_count, 1);
    assert!(sup.phase().in_sequence());
}

#[test]
fn resonance_shift_mid_sequence_fails_then_recovers() {
    let mut p = Plant::new(quiet_config(0), 5).unwrap();
    let mut shifted = false;
    let outcomes = run_relock_attempts(&mut p, &SupervisorConfig::default(), DT, 4, |plant, t| {
        if !shifted && t >= 9.0 {
            plant.shift_resonance_to(3).unwrap();
            shifted = true;
        }
    })
    .unwrap();
    assert!(shifted);
    assert!(outcomes.len() >= 2, "{outcomes:?}");
    assert!(!outcomes[0].success);
    let last = outcomes.last().unwrap();
    assert!(last.success);
    assert!(-last.final_squeezing_db >= 9.5);
    assert!(p.state().all_locked() && p.state().is_double_resonant());
    assert_eq!(p.state().double_resonance_mode, 3);
}

#[test]
fn relock_prefers_last_good_mode() {
    let mut p = locked(quiet_config(5), 6);
    let mut sup = Supervisor::monitoring(SupervisorConfig::default(), p.n_modes(), p.time()).unwrap();
    drive(&mut p, &mut sup, 2);
    p.inject_disturbance(Disturbance::LockLoss);
    drive(&mut p, &mut sup, 2);
    assert!(sup.phase().in_sequence());
    let start = p.time();
    let mut n = 0;
    while !matches!(sup.phase(), ControllerPhase::Monitoring) && n < 400 {
        drive(&mut p, &mut sup, 1);
        n += 1;
    }
    assert!(matches!(sup.phase(), ControllerPhase::Monitoring));
    // Cold start has no memory: mode 5 is the sixth mode tried.
    assert!(sup.state().modes_tried >= 6);
    assert!(p.time() - start <= 40.0, "{}", p.time() - start);
    assert!(-p.noiseless_squeezing_db() >= 9.5);

    p.inject_disturbance(Disturbance::LockLoss);
    drive(&mut p, &mut sup, 2);
    let start = p.time();
    while !matches!(sup.phase(), ControllerPhase::Monitoring) {
        drive(&mut p, &mut sup, 1);
    }
    assert_eq!(sup.state().modes_tried, 1);
    assert!(p.time() - start <= 20.0, "{}", p.time() - start);
}
