//! Dark (electronic) noise handling for shot-noise-normalized homodyne traces.
//!
//! Dark noise with variance `d` (relative to shot noise) adds to both the
//! signal trace and the shot-noise reference, so a normalized raw reading is
//! `(V + d) / (1 + d)`.

use super::CharacterizeError;

/// Dark-noise variance relative to shot noise for a given clearance in dB.
pub fn dark_noise_fraction(clearance_db: f64) -> f64 {
    10f64.powf(-clearance_db / 10.0)
}

/// Forward model: the normalized reading a detector with the given dark-noise
/// clearance produces for a true variance `v`.
pub fn contaminate_electronic_noise(v: f64, clearance_db: f64) -> f64 {
    let d = dark_noise_fraction(clearance_db);
    (v + d) / (1.0 + d)
}

/// Remove dark noise from a shot-noise-normalized variance.
pub fn correct_electronic_noise(raw_variance: f64, clearance_db: f64) -> Result<f64, CharacterizeError> {
    if !(raw_variance > 0.0 && raw_variance.is_finite()) {
        return Err(CharacterizeError::NonPositiveVariance(raw_variance));
    }
    if !(clearance_db > 0.0 && clearance_db.is_finite()) {
        return Err(CharacterizeError::Clearance(clearance_db));
    }
    let d = dark_noise_fraction(clearance_db);
    let corrected = raw_variance + (raw_variance - 1.0) * d;
    if corrected <= 0.0 {
        return Err(CharacterizeError::DarkNoiseExceedsSignal {
            raw: raw_variance,
            clearance_db,
        });
    }
    Ok(corrected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn shot_noise_is_fixed_point() {
        for c in [10.0, 18.0, 25.0, 40.0] {
            assert_eq!(correct_electronic_noise(1.0, c).unwrap(), 1.0);
        }
    }

    #[test]
    fn eighteen_db_example() {
        assert_relative_eq!(dark_noise_fraction(18.0), 0.015_848_931_924_611_13, max_relative = 1e-14);
        let v = correct_electronic_noise(0.074_667, 18.0).unwrap();
        assert_relative_eq!(v, 0.060_001_460_275_403_8, max_relative = 1e-12);
    }

    #[test]
    fn unphysical_reading_rejected() {
        // raw below d/(1+d) cannot come from a non-negative true variance
        let err = correct_electronic_noise(0.01, 18.0).unwrap_err();
        assert!(matches!(err, CharacterizeError::DarkNoiseExceedsSignal { .. }));
        assert!(err.to_string().contains("unphysical"));
        assert!(correct_electronic_noise(0.0, 18.0).is_err());
        assert!(correct_electronic_noise(0.5, 0.0).is_err());
    }

    #[test]
    fn squeezed_reading_corrects_downwards() {
        let raw = 0.08;
        assert!(correct_electronic_noise(raw, 18.0).unwrap() < raw);
        let raw = 5.0;
        assert!(correct_electronic_noise(raw, 18.0).unwrap() > raw);
    }

    proptest! {
        #[test]
        fn correction_inverts_contamination(log_v in -3.0f64..3.0, clearance in 10.0f64..40.0) {
            let v = 10f64.powf(log_v);
            let back = correct_electronic_noise(contaminate_electronic_noise(v, clearance), clearance).unwrap();
            prop_assert!((back - v).abs() <= 1e-12 * v.max(1.0));
        }
    }
}
