use std::f64::consts::FRAC_PI_2;

use approx::assert_relative_eq;
use proptest::prelude::*;

use super::*;
use crate::opa_model::{squeezing_level_db, OperatingPoint};

const DT: f64 = 0.1;

fn frozen_config() -> PlantConfig {
    PlantConfig {
        drift: DriftConfig::frozen(),
        ..PlantConfig::default()
    }
}

fn noiseless_config() -> PlantConfig {
    let mut c = frozen_config();
    c.readout.noise_rms_db = 0.0;
    c.beat.noise_rms = 0.0;
    c
}

fn locked_plant(config: PlantConfig, seed: u64) -> Plant {
    let mode = config.double_resonance_mode;
    let mut p = Plant::new(config, seed).unwrap();
    p.lock_all_on_mode(mode, DT).unwrap();
    p
}

fn steps(p: &mut Plant, n: usize) {
    for _ in 0..n {
        p.step(DT).unwrap();
    }
}

#[test]
fn init_is_deterministic_and_seed_sensitive() {
    let a = Plant::new(PlantConfig::default(), 1).unwrap();
    let b = Plant::new(PlantConfig::default(), 1).unwrap();
    assert_eq!(a, b);
    let c = Plant::new(PlantConfig::default(), 2).unwrap();
    assert_ne!(a.state().pump_power_w, c.state().pump_power_w);
    assert!(a.state().channels.iter().all(|c| c.status == LockStatus::Disengaged));
    assert_eq!(a.state().stored_mode_offsets.len(), 8);
}

#[test]
fn invalid_config_names_field() {
    let cfg = PlantConfig {
        n_modes_per_scan: 1,
        ..PlantConfig::default()
    };
    let err = Plant::new(cfg, 1).unwrap_err();
    assert!(matches!(&err, PlantError::Config { field, .. } if field == "n_modes_per_scan"));

    let mut cfg = PlantConfig::default();
    cfg.drift.lock_loss_rate_per_s = -1.0;
    let err = Plant::new(cfg, 1).unwrap_err();
    assert!(err.to_string().contains("drift.lock_loss_rate_per_s"));

    let cfg = PlantConfig {
        double_resonance_mode: 8,
        ..PlantConfig::default()
    };
    assert!(Plant::new(cfg, 1).is_err());
}

#[test]
fn step_rejects_bad_dt() {
    let mut p = Plant::new(PlantConfig::default(), 1).unwrap();
    assert_eq!(p.step(0.0), Err(PlantError::TimeStep(0.0)));
    assert!(p.step(-1.0).is_err());
    assert!(p.step(f64::NAN).is_err());
}

#[test]
fn frozen_plant_only_advances_time() {
    let mut p = locked_plant(frozen_config(), 3);
    let before = p.state().clone();
    steps(&mut p, 500);
    let mut after = p.state().clone();
    assert_relative_eq!(after.time_s, before.time_s + 50.0, epsilon = 1e-9);
    after.time_s = before.time_s;
    assert_eq!(after, before);
}

#[test]
fn pump_ou_matches_stationary_variance() {
    let mut cfg = PlantConfig::default();
    cfg.drift = DriftConfig {
        pump_relaxation_s: 60.0,
        pump_rms_fraction: 0.01,
        ..DriftConfig::frozen()
    };
    let nominal = cfg.nominal_pump_ratio * cfg.model.threshold_power_w;
    let expected_var = (0.01 * nominal).powi(2);
    let mut p = Plant::new(cfg, 11).unwrap();
    let n = 100_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        p.step(10.0).unwrap();
        let x = p.state().pump_power_w - nominal;
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / n as f64;
    let var = sum_sq / n as f64 - mean * mean;
    assert!((var / expected_var - 1.0).abs() < 0.05, "var ratio {}", var / expected_var);
}

#[test]
fn acquisition_takes_configured_dead_time() {
    let mut p = Plant::new(frozen_config(), 1).unwrap();
    p.set_lock(ChannelId::ShgLength, true).unwrap();
    assert!(matches!(p.state().status(ChannelId::ShgLength), LockStatus::Acquiring { .. }));
    steps(&mut p, 19);
    assert!(!p.state().status(ChannelId::ShgLength).is_locked());
    steps(&mut p, 1);
    assert!(p.state().status(ChannelId::ShgLength).is_locked());
}

#[test]
fn prerequisites_enforced() {
    let mut p = Plant::new(frozen_config(), 1).unwrap();
    assert_eq!(
        p.set_lock(ChannelId::PumpCsfOffset, true),
        Err(PlantError::PrerequisiteNotLocked {
            channel: ChannelId::PumpCsfOffset,
            prerequisite: ChannelId::OpaLength
        })
    );
    p.set_lock(ChannelId::ShgLength, true).unwrap();
    // engaging, not yet locked
    assert!(p.set_lock(ChannelId::OpaLength, true).is_err());
}

#[test]
fn disengage_cascades() {
    let mut p = locked_plant(frozen_config(), 1);
    assert!(p.state().all_locked());
    p.set_lock(ChannelId::OpaLength, false).unwrap();
    let s = p.state();
    assert!(s.status(ChannelId::ShgLength).is_locked());
    for id in [ChannelId::OpaLength, ChannelId::PumpCsfOffset, ChannelId::CsfLoOffset] {
        assert_eq!(s.status(id), LockStatus::Disengaged);
    }
    assert_eq!(s.current_mode, None);
}

#[test]
fn lock_loss_disturbance_cascades_and_flags_reading() {
    let mut p = locked_plant(frozen_config(), 1);
    assert!(p.read_squeezing().valid);
    p.inject_disturbance(Disturbance::LockLoss);
    let s = p.state();
    assert_eq!(s.status(ChannelId::PumpCsfOffset), LockStatus::Disengaged);
    assert_eq!(s.status(ChannelId::CsfLoOffset), LockStatus::Disengaged);
    let r = p.read_squeezing();
    assert!(!r.valid);
    assert!(r.db.abs() <= 3.0 * 0.05);
    assert_eq!(p.drain_events().len(), 1);
}

#[test]
fn beat_amplitude_discriminates_modes() {
    let cfg = PlantConfig {
        double_resonance_mode: 3,
        ..frozen_config()
    };
    let mut on = locked_plant(cfg.clone(), 5);
    let mut off = Plant::new(cfg.clone(), 5).unwrap();
    off.lock_all_on_mode(1, DT).unwrap();
    for _ in 0..200 {
        let a = on.read_beat_amplitude();
        let b = off.read_beat_amplitude();
        assert!(a >= 0.8, "{a}");
        assert!(b <= 0.2, "{b}");
        assert!(a - b >= 0.5);
    }
    assert!(on.coherent_control().beat_amplitude_omega > 0.95);
    assert!(off.coherent_control().beat_amplitude_omega < 0.1);

    // B released: no sideband field to beat, whatever the mode
    on.set_lock(ChannelId::PumpCsfOffset, false).unwrap();
    for _ in 0..50 {
        assert!(on.read_beat_amplitude() <= 0.2);
    }
}

#[test]
fn lock_to_mode_bounds_and_requirements() {
    let mut p = Plant::new(frozen_config(), 1).unwrap();
    assert_eq!(p.lock_to_mode(0), Err(PlantError::NotEngaged(ChannelId::OpaLength)));
    assert_eq!(
        p.lock_to_mode(8),
        Err(PlantError::ModeOutOfRange { index: 8, n_modes: 8 })
    );
    p.set_lock(ChannelId::ShgLength, true).unwrap();
    steps(&mut p, 20);
    p.set_lock(ChannelId::OpaLength, true).unwrap();
    p.lock_to_mode(4).unwrap();
    assert_eq!(p.state().channel(ChannelId::OpaLength).actuator_offset, p.state().stored_mode_offsets[4]);
    assert_eq!(p.state().current_mode, None);
    steps(&mut p, 20);
    assert_eq!(p.state().current_mode, Some(4));
}

#[test]
fn squeezing_reading_at_operating_point() {
    let cfg = noiseless_config();
    let predicted = squeezing_level_db(&cfg.model, &OperatingPoint::new(0.67, 5e5).unwrap()).unwrap();
    let mut p = locked_plant(cfg, 1);
    let r = p.read_squeezing();
    assert!(r.valid);
    assert!((r.db + 12.1).abs() <= 0.2, "{}", r.db);
    assert_relative_eq!(-r.db, predicted, epsilon = 1e-9);
}

#[test]
fn disengaged_plant_reads_shot_noise() {
    let mut p = Plant::new(PlantConfig::default(), 1).unwrap();
    for _ in 0..100 {
        let r = p.read_squeezing();
        assert!(!r.valid);
        assert!(r.db.abs() <= 3.0 * 0.05 + 1e-12);
    }
}

#[test]
fn quarter_turn_rotates_anti_squeezing_in() {
    let mut p = locked_plant(noiseless_config(), 1);
    p.inject_disturbance(Disturbance::AngleStep { rad: FRAC_PI_2 });
    let r = p.read_squeezing();
    assert!((r.db - 19.7).abs() < 0.1, "{}", r.db);
}

#[test]
fn phase_offset_requires_c_and_nulls_error() {
    let mut p = Plant::new(frozen_config(), 1).unwrap();
    assert_eq!(p.apply_phase_offset(0.01), Err(PlantError::NotLocked(ChannelId::CsfLoOffset)));

    let mut p = locked_plant(noiseless_config(), 1);
    let optimum = p.read_squeezing().db;
    p.inject_disturbance(Disturbance::AngleStep { rad: 0.012 });
    assert!(p.read_squeezing().db > optimum + 0.5);
    p.apply_phase_offset(p.state().angle_error()).unwrap();
    assert_relative_eq!(p.read_squeezing().db, optimum, epsilon = 1e-12);

    let before = p.state().clone();
    p.apply_phase_offset(0.0).unwrap();
    assert_eq!(p.state(), &before);

    let mut q = p.clone();
    p.apply_phase_offset(0.003).unwrap();
    p.apply_phase_offset(-0.001).unwrap();
    q.apply_phase_offset(0.002).unwrap();
    assert_relative_eq!(p.read_squeezing().db, q.read_squeezing().db, epsilon = 1e-12);
}

#[test]
fn pump_jump_raises_pump_ratio() {
    let cfg = noiseless_config();
    let model = cfg.model;
    let mut p = locked_plant(cfg, 1);
    p.inject_disturbance(Disturbance::PumpJump);
    assert_relative_eq!(p.effective_pump_ratio(), 0.737, epsilon = 1e-12);
    let expected = squeezing_level_db(&model, &OperatingPoint::new(0.737, 5e5).unwrap()).unwrap();
    assert_relative_eq!(-p.read_squeezing().db, expected, epsilon = 1e-9);
    assert_relative_eq!(expected, 12.309, epsilon = 1e-3);
}

#[test]
fn resonance_shift_moves_double_resonance() {
    let mut p = locked_plant(noiseless_config(), 1);
    assert!(p.read_beat_amplitude() >= 0.8);
    p.shift_resonance_to(5).unwrap();
    assert!(p.read_beat_amplitude() <= 0.2);
    assert!(!p.read_squeezing().valid);
    assert!(p.shift_resonance_to(8).is_err());

    // random redraw stays in range and records the event
    p.inject_disturbance(Disturbance::ResonanceShift);
    assert!(p.state().double_resonance_mode < 8);
    assert_eq!(p.drain_events().len(), 1);
}

#[test]
fn locked_mean_matches_model() {
    let cfg = frozen_config();
    let sigma = cfg.readout.noise_rms_db;
    let predicted = squeezing_level_db(&cfg.model, &OperatingPoint::new(0.67, 5e5).unwrap()).unwrap();
    let mut p = locked_plant(cfg, 9);
    let n = 1000;
    let mean: f64 = (0..n).map(|_| p.read_squeezing().db).sum::<f64>() / n as f64;
    assert!((mean + predicted).abs() <= 3.0 * sigma / (n as f64).sqrt(), "{mean} vs {predicted}");
}

#[test]
fn reading_never_beats_efficiency_bound() {
    let mut cfg = PlantConfig::default();
    cfg.drift.lock_loss_rate_per_s = 0.0;
    let floor = 10.0 * (1.0 - cfg.model.total_efficiency).log10() - 3.0 * cfg.readout.noise_rms_db;
    let mut p = locked_plant(cfg, 4);
    for _ in 0..2000 {
        p.step(DT).unwrap();
        assert!(p.read_squeezing().db >= floor);
    }
}

#[test]
fn sporadic_lock_losses_occur_at_configured_rate() {
    let rate = 0.1;
    let seeds = 400;
    let mut total = 0.0;
    for seed in 0..seeds {
        let mut p = locked_plant(frozen_config(), seed);
        p.set_drift(DriftConfig {
            lock_loss_rate_per_s: rate,
            ..DriftConfig::frozen()
        })
        .unwrap();
        let start = p.time();
        while p.state().all_locked() {
            p.step(DT).unwrap();
        }
        assert!(matches!(p.drain_events()[0].kind, PlantEventKind::LockLoss(_)));
        total += p.time() - start;
    }
    let mean = total / seeds as f64;
    // exponential waiting time, 3 sigma of the sample mean is 15 %
    assert!((mean * rate - 1.0).abs() < 0.15, "mean wait {mean}");
}

#[test]
fn wrap_keeps_ellipse_period() {
    assert_relative_eq!(wrap_ellipse_angle(0.1 + std::f64::consts::PI), 0.1, epsilon = 1e-12);
    assert_relative_eq!(wrap_ellipse_angle(-0.1 - 3.0 * std::f64::consts::PI), -0.1, epsilon = 1e-12);
    let w = wrap_ellipse_angle(FRAC_PI_2);
    assert!((-FRAC_PI_2..FRAC_PI_2).contains(&w));
}

#[derive(Debug, Clone)]
enum Action {
    Engage(usize),
    Release(usize),
    Mode(usize),
    Offset(f64),
    Step(usize),
    Disturb(u8),
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        (0usize..4).prop_map(Action::Engage),
        (0usize..4).prop_map(Action::Release),
        (0usize..8).prop_map(Action::Mode),
        (-0.01f64..0.01).prop_map(Action::Offset),
        (1usize..40).prop_map(Action::Step),
        (0u8..3).prop_map(Action::Disturb),
    ]
}

fn apply(p: &mut Plant, a: &Action) {
    match *a {
        Action::Engage(i) => {
            let _ = p.set_lock(ChannelId::ALL[i], true);
        }
        Action::Release(i) => p.set_lock(ChannelId::ALL[i], false).unwrap(),
        Action::Mode(m) => {
            let _ = p.lock_to_mode(m);
        }
        Action::Offset(d) => {
            let _ = p.apply_phase_offset(d);
        }
        Action::Step(n) => steps(p, n),
        Action::Disturb(k) => p.inject_disturbance(match k {
            0 => Disturbance::LockLoss,
            1 => Disturbance::PumpJump,
            _ => Disturbance::ResonanceShift,
        }),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lock_dag_always_respected(seed in 0u64..1000, actions in prop::collection::vec(action(), 1..60)) {
        let mut cfg = PlantConfig::default();
        cfg.drift.lock_loss_rate_per_s = 0.02;
        let mut p = Plant::new(cfg, seed).unwrap();
        for a in &actions {
            apply(&mut p, a);
            let s = p.state();
            for id in ChannelId::ALL {
                if let Some(pre) = id.prerequisite() {
                    if s.status(id).is_locked() {
                        prop_assert!(s.status(pre).is_locked(), "{id} locked without {pre}");
                    }
                    if s.status(id).is_engaged() {
                        prop_assert!(s.status(pre).is_engaged());
                    }
                }
            }
            prop_assert!(s.pump_power_w >= 0.0);
        }
    }

    #[test]
    fn identical_inputs_identical_trajectories(seed in 0u64..1000, actions in prop::collection::vec(action(), 1..40)) {
        let mut a = Plant::new(PlantConfig::default(), seed).unwrap();
        let mut b = Plant::new(PlantConfig::default(), seed).unwrap();
        for act in &actions {
            apply(&mut a, act);
            apply(&mut b, act);
            prop_assert_eq!(a.read_squeezing().db.to_bits(), b.read_squeezing().db.to_bits());
        }
        prop_assert_eq!(a.state(), b.state());
    }
}
