//! Duty-cycle and lock statistics over telemetry traces.
//!
//! Every record stands for the interval up to the next record; the final
//! record reuses the interval before it. Squeezing magnitudes are reported as
//! positive dB below shot noise.

use serde::{Deserialize, Serialize};

use super::trace::{validate_trace, TraceRecord};
use super::CharacterizeError;

pub const DEFAULT_BIN_WIDTH_DB: f64 = 0.1;
pub const RELOCK_EVENT: &str = "relock_start";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutyPoint {
    pub threshold_db: f64,
    /// Fraction of all time spent locked at or above the threshold.
    pub duty: f64,
    /// Same, as a fraction of locked time only.
    pub duty_of_locked: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges_db: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn build(values: &[f64], width: f64) -> Self {
        if values.is_empty() {
            return Self {
                bin_edges_db: Vec::new(),
                counts: Vec::new(),
            };
        }
        let bin = |v: f64| (v / width).floor() as i64;
        let lo = values.iter().map(|&v| bin(v)).min().unwrap();
        let hi = values.iter().map(|&v| bin(v)).max().unwrap();
        let mut counts = vec![0u64; (hi - lo + 1) as usize];
        for &v in values {
            counts[(bin(v) - lo) as usize] += 1;
        }
        let bin_edges_db = (lo..=hi + 1).map(|k| k as f64 * width).collect();
        Self { bin_edges_db, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutyCycleReport {
    pub total_duration_s: f64,
    pub n_samples: usize,
    pub lock_fraction: f64,
    pub cumulative: Vec<DutyPoint>,
    /// Squeezing magnitudes of locked samples.
    pub histogram: Histogram,
    pub mean_db_of_db: f64,
    pub db_of_mean_variance: f64,
    pub max_db: f64,
}

impl DutyCycleReport {
    pub fn duty_at(&self, threshold_db: f64) -> Option<f64> {
        self.cumulative
            .iter()
            .find(|p| (p.threshold_db - threshold_db).abs() < 1e-12)
            .map(|p| p.duty)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub duration_s: f64,
    pub mean_db_of_db: f64,
    pub db_of_mean_variance: f64,
    pub max_db: f64,
    pub relock_count: usize,
    pub longest_unbroken_lock_s: f64,
}

fn weights(records: &[TraceRecord]) -> Vec<f64> {
    if records.len() == 1 {
        return vec![1.0];
    }
    let mut w: Vec<f64> = records.windows(2).map(|p| p[1].t - p[0].t).collect();
    w.push(*w.last().unwrap());
    w
}

fn magnitude(r: &TraceRecord) -> f64 {
    -r.squeezing_db
}

struct Means {
    mean_db_of_db: f64,
    db_of_mean_variance: f64,
    max_db: f64,
}

/// Time-weighted means over locked samples, or over all samples if none are locked.
fn means(records: &[TraceRecord], w: &[f64]) -> Means {
    let any_locked = records.iter().any(|r| r.locked);
    let (mut sw, mut s_db, mut s_var, mut max_db) = (0.0, 0.0, 0.0, f64::NEG_INFINITY);
    for (r, &wi) in records.iter().zip(w) {
        if any_locked && !r.locked {
            continue;
        }
        sw += wi;
        s_db += wi * r.squeezing_db;
        s_var += wi * 10f64.powf(r.squeezing_db / 10.0);
        max_db = max_db.max(magnitude(r));
    }
    Means {
        mean_db_of_db: -s_db / sw,
        db_of_mean_variance: -10.0 * (s_var / sw).log10(),
        max_db,
    }
}

pub fn duty_cycle_report(
    records: &[TraceRecord],
    thresholds_db: &[f64],
    bin_width_db: f64,
) -> Result<DutyCycleReport, CharacterizeError> {
    validate_trace(records)?;
    let w = weights(records);
    let total: f64 = w.iter().sum();
    let locked_time: f64 = records.iter().zip(&w).filter(|(r, _)| r.locked).map(|(_, &wi)| wi).sum();

    let mut thresholds = thresholds_db.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let cumulative = thresholds
        .into_iter()
        .map(|th| {
            let above: f64 = records
                .iter()
                .zip(&w)
                .filter(|(r, _)| r.locked && magnitude(r) >= th)
                .map(|(_, &wi)| wi)
                .sum();
            DutyPoint {
                threshold_db: th,
                duty: above / total,
                duty_of_locked: if locked_time > 0.0 { above / locked_time } else { 0.0 },
            }
        })
        .collect();

    let locked_mags: Vec<f64> = records.iter().filter(|r| r.locked).map(magnitude).collect();
    let m = means(records, &w);
    Ok(DutyCycleReport {
        total_duration_s: total,
        n_samples: records.len(),
        lock_fraction: locked_time / total,
        cumulative,
        histogram: Histogram::build(&locked_mags, bin_width_db),
        mean_db_of_db: m.mean_db_of_db,
        db_of_mean_variance: m.db_of_mean_variance,
        max_db: m.max_db,
    })
}

pub fn summarize_trace(records: &[TraceRecord]) -> Result<TraceSummary, CharacterizeError> {
    validate_trace(records)?;
    let w = weights(records);
    let m = means(records, &w);

    let relock_count = records
        .iter()
        .filter(|r| r.event.as_deref().is_some_and(|e| e.contains(RELOCK_EVENT)))
        .count();
    let (mut run, mut longest) = (0.0f64, 0.0f64);
    for (r, &wi) in records.iter().zip(&w) {
        run = if r.locked { run + wi } else { 0.0 };
        longest = longest.max(run);
    }

    Ok(TraceSummary {
        duration_s: w.iter().sum(),
        mean_db_of_db: m.mean_db_of_db,
        db_of_mean_variance: m.db_of_mean_variance,
        max_db: m.max_db,
        relock_count,
        longest_unbroken_lock_s: longest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t: f64, db: f64, locked: bool) -> TraceRecord {
        TraceRecord {
            t,
            squeezing_db: db,
            antisqueezing_db: None,
            locked,
            controller_phase: "monitoring".into(),
            applied_offset_rad: 0.0,
            pump_mw: 475.7,
            event: None,
        }
    }

    #[test]
    fn counting_duty() {
        let trace: Vec<_> = (0..3600)
            .map(|i| rec(i as f64, if i < 3480 { -11.0 } else { -9.0 }, true))
            .collect();
        let r = duty_cycle_report(&trace, &[10.0], DEFAULT_BIN_WIDTH_DB).unwrap();
        assert!((r.duty_at(10.0).unwrap() - 3480.0 / 3600.0).abs() < 1e-12);
        assert_eq!(r.lock_fraction, 1.0);
        assert_eq!(r.histogram.total(), 3600);
        assert_eq!(r.total_duration_s, 3600.0);
    }

    #[test]
    fn constant_and_two_level_means() {
        let flat: Vec<_> = (0..10).map(|i| rec(i as f64, -11.9, true)).collect();
        let s = summarize_trace(&flat).unwrap();
        assert!((s.mean_db_of_db - 11.9).abs() < 1e-12);
        assert!((s.db_of_mean_variance - 11.9).abs() < 1e-12);
        assert!((s.max_db - 11.9).abs() < 1e-12);

        let two: Vec<_> = (0..10)
            .map(|i| rec(i as f64, if i % 2 == 0 { -10.0 } else { -12.0 }, true))
            .collect();
        let s = summarize_trace(&two).unwrap();
        assert!((s.mean_db_of_db - 11.0).abs() < 1e-12);
        assert!((s.db_of_mean_variance - 10.885_873_928_696_414).abs() < 1e-9);
    }

    #[test]
    fn lock_episodes_and_relocks() {
        let mut trace: Vec<_> = (0..20).map(|i| rec(i as f64, -12.0, !(5..8).contains(&i))).collect();
        trace[5].event = Some(RELOCK_EVENT.into());
        trace[15].event = Some(format!("inject:pump_jump;{RELOCK_EVENT}"));
        let s = summarize_trace(&trace).unwrap();
        assert_eq!(s.relock_count, 2);
        assert_eq!(s.longest_unbroken_lock_s, 12.0);
        let r = duty_cycle_report(&trace, &[0.0], 0.1).unwrap();
        assert!((r.lock_fraction - 17.0 / 20.0).abs() < 1e-12);
        assert!((r.cumulative[0].duty_of_locked - 1.0).abs() < 1e-12);
        assert_eq!(r.histogram.total(), 17);
    }

    #[test]
    fn unlocked_trace_falls_back_to_all_samples() {
        let trace: Vec<_> = (0..4).map(|i| rec(i as f64, 0.01, false)).collect();
        let r = duty_cycle_report(&trace, &[10.0], 0.1).unwrap();
        assert_eq!(r.lock_fraction, 0.0);
        assert_eq!(r.duty_at(10.0), Some(0.0));
        assert!(r.histogram.counts.is_empty());
        assert!((r.mean_db_of_db + 0.01).abs() < 1e-12);
    }

    #[test]
    fn empty_trace_rejected() {
        assert!(matches!(duty_cycle_report(&[], &[10.0], 0.1), Err(CharacterizeError::EmptyTrace)));
        assert!(matches!(summarize_trace(&[]), Err(CharacterizeError::EmptyTrace)));
    }

    proptest! {
        #[test]
        fn report_invariants(
            levels in prop::collection::vec((-14.0f64..1.0, any::<bool>(), 0.1f64..3.0), 1..200),
            thresholds in prop::collection::vec(-1.0f64..14.0, 1..8),
        ) {
            let mut t = 0.0;
            let trace: Vec<_> = levels.iter().map(|&(db, locked, dt)| { t += dt; rec(t, db, locked) }).collect();
            let r = duty_cycle_report(&trace, &thresholds, 0.1).unwrap();
            for p in &r.cumulative {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&p.duty));
                prop_assert!((0.0..=1.0 + 1e-12).contains(&p.duty_of_locked));
            }
            for w in r.cumulative.windows(2) {
                prop_assert!(w[1].duty <= w[0].duty);
            }
            prop_assert!((0.0..=1.0).contains(&r.lock_fraction));
            let n_locked = trace.iter().filter(|x| x.locked).count() as u64;
            prop_assert_eq!(r.histogram.total(), n_locked);
            prop_assert!(r.db_of_mean_variance <= r.mean_db_of_db + 1e-9);
        }
    }
}
