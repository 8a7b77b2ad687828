//! Joint fit of total efficiency and phase jitter (optionally threshold
//! power) to a pump-power sweep of both quadratures.
//!
//! The objective is the weighted sum of squared dB residuals over both
//! quadratures. A damped Gauss-Newton (Levenberg-Marquardt) descent is
//! started from every node of a coarse (efficiency, jitter) grid and the best
//! optimum wins. Uncertainties come from the curvature of the objective at
//! that optimum.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::CharacterizeError;
use crate::opa_model::{ideal_quadratures, rotate_quadratures, ModelParams, CHARACTERIZATION_FREQ_HZ};

const MIN_POINTS: usize = 4;
const MIN_PUMP_SPAN: f64 = 0.3;
const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpSweepPoint {
    /// Pump power relative to the nominal threshold.
    pub pump_ratio: f64,
    pub v_minus_db: f64,
    pub v_plus_db: f64,
    pub sigma_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Hold the threshold power at its independently measured value.
    Fixed,
    /// Fit the threshold power together with efficiency and jitter.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub decay_rate: f64,
    pub fourier_freq_hz: f64,
    /// Threshold used to express the sweep's pump ratios, W.
    pub p_thr_w: f64,
    pub threshold: ThresholdMode,
}

impl Default for FitOptions {
    fn default() -> Self {
        let params = ModelParams::default();
        Self {
            decay_rate: params.decay_rate(),
            fourier_freq_hz: CHARACTERIZATION_FREQ_HZ,
            p_thr_w: params.threshold_power_w,
            threshold: ThresholdMode::Fixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub eta_total: Estimate,
    /// Rms phase jitter, rad.
    pub theta_jitter: Estimate,
    /// 95% profile-likelihood interval for the jitter, rad. The objective
    /// depends on the jitter only through sin², so the curvature-based sigma
    /// is unreliable near zero; this interval is not.
    pub theta_interval_95: (f64, f64),
    pub p_thr_mw: Option<Estimate>,
    /// Rms of the unweighted dB residuals over both quadratures.
    pub residual_rms: f64,
    pub n_points: usize,
    pub chi_squared: f64,
    /// Efficiency ended on the edge of [0, 1].
    pub eta_at_bound: bool,
    pub converged_starts: usize,
}

/// Model readings (squeezed dB, anti-squeezed dB) for one pump ratio.
pub fn sweep_model_db(eta: f64, theta: f64, pump_ratio: f64, decay_rate: f64, fourier_freq_hz: f64) -> (f64, f64) {
    let pair = rotate_quadratures(ideal_quadratures(eta, decay_rate, pump_ratio, fourier_freq_hz), theta);
    (pair.squeezed_db(), pair.antisqueezed_db())
}

/// Sweep generated from the model with seeded Gaussian dB noise.
pub fn synthetic_sweep(
    eta: f64,
    theta: f64,
    pump_ratios: &[f64],
    sigma_db: f64,
    options: &FitOptions,
    seed: u64,
) -> Vec<PumpSweepPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma_db).expect("sigma is finite and non-negative");
    pump_ratios
        .iter()
        .map(|&r| {
            let (m, p) = sweep_model_db(eta, theta, r, options.decay_rate, options.fourier_freq_hz);
            PumpSweepPoint {
                pump_ratio: r,
                v_minus_db: m + noise.sample(&mut rng),
                v_plus_db: p + noise.sample(&mut rng),
                sigma_db,
            }
        })
        .collect()
}

struct SweepProblem<'a> {
    points: &'a [PumpSweepPoint],
    options: &'a FitOptions,
    /// Hold the jitter at the start value (profile fits).
    theta_fixed: bool,
}

const ETA: usize = 0;
const THETA: usize = 1;
const PTHR: usize = 2;

impl SweepProblem<'_> {
    fn n_params(&self) -> usize {
        match self.options.threshold {
            ThresholdMode::Fixed => 2,
            ThresholdMode::Free => 3,
        }
    }

    fn typical_scale(&self, j: usize) -> f64 {
        match j {
            ETA => 1.0,
            THETA => 1e-3,
            _ => self.options.p_thr_w,
        }
    }

    fn project(&self, p: &mut DVector<f64>) {
        p[ETA] = p[ETA].clamp(0.0, 1.0);
        if p.len() > PTHR {
            p[PTHR] = p[PTHR].max(1e-6 * self.options.p_thr_w);
        }
    }

    /// Weighted residuals; `None` when the parameters put a point above threshold.
    fn residuals(&self, p: &DVector<f64>) -> Option<DVector<f64>> {
        let scale = if p.len() > PTHR { self.options.p_thr_w / p[PTHR] } else { 1.0 };
        let mut r = DVector::zeros(2 * self.points.len());
        for (i, pt) in self.points.iter().enumerate() {
            let ratio = pt.pump_ratio * scale;
            if !(0.0..1.0).contains(&ratio) {
                return None;
            }
            let (m, a) = sweep_model_db(p[ETA], p[THETA], ratio, self.options.decay_rate, self.options.fourier_freq_hz);
            r[2 * i] = (m - pt.v_minus_db) / pt.sigma_db;
            r[2 * i + 1] = (a - pt.v_plus_db) / pt.sigma_db;
        }
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn cost(&self, p: &DVector<f64>) -> Option<f64> {
        self.residuals(p).map(|r| r.norm_squared())
    }

    fn jacobian(&self, p: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = self.n_params();
        let mut jac = DMatrix::zeros(2 * self.points.len(), n);
        for j in 0..n {
            let h = 1e-7 * p[j].abs().max(self.typical_scale(j));
            let mut hi = p.clone();
            hi[j] += h;
            let mut lo = p.clone();
            lo[j] -= h;
            // one-sided at the efficiency bounds
            if j == ETA {
                hi[j] = hi[j].min(1.0);
                lo[j] = lo[j].max(0.0);
            }
            if j == THETA && self.theta_fixed {
                continue;
            }
            let span = hi[j] - lo[j];
            let col = (self.residuals(&hi)? - self.residuals(&lo)?) / span;
            jac.set_column(j, &col);
        }
        Some(jac)
    }

    /// Numerical Hessian of the objective.
    fn hessian(&self, p: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = self.n_params();
        let h: Vec<f64> = (0..n).map(|j| 1e-3 * self.typical_scale(j)).collect();
        let f = |dp: &[(usize, f64)]| {
            let mut q = p.clone();
            for &(j, d) in dp {
                q[j] += d;
            }
            self.cost(&q)
        };
        let f0 = f(&[])?;
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            let fp = f(&[(i, h[i])])?;
            let fm = f(&[(i, -h[i])])?;
            hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
            for j in 0..i {
                let fpp = f(&[(i, h[i]), (j, h[j])])?;
                let fpm = f(&[(i, h[i]), (j, -h[j])])?;
                let fmp = f(&[(i, -h[i]), (j, h[j])])?;
                let fmm = f(&[(i, -h[i]), (j, -h[j])])?;
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        Some(hess)
    }
}

struct LocalOptimum {
    params: DVector<f64>,
    cost: f64,
    converged: bool,
}

fn levenberg_marquardt(problem: &SweepProblem<'_>, start: DVector<f64>) -> Option<LocalOptimum> {
    let mut p = start;
    problem.project(&mut p);
    let mut cost = problem.cost(&p)?;
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..MAX_ITERATIONS {
        if cost < 1e-26 {
            converged = true;
            break;
        }
        let r = problem.residuals(&p)?;
        let jac = problem.jacobian(&p)?;
        let jt = jac.transpose();
        let normal = &jt * &jac;
        let gradient = &jt * &r;
        if gradient.amax() <= 1e-12 * (1.0 + cost) {
            converged = true;
            break;
        }
        let diag_floor = normal.diagonal().max() * 1e-12 + 1e-30;

        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = normal.clone();
            for k in 0..damped.nrows() {
                damped[(k, k)] += lambda * normal[(k, k)].max(diag_floor);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&gradient))) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = &p + &step;
            problem.project(&mut trial);
            match problem.cost(&trial) {
                Some(c) if c < cost => {
                    let moved = (&trial - &p).amax();
                    let scale = p.amax().max(1e-3);
                    let small_change = cost - c <= 1e-14 * cost;
                    p = trial;
                    cost = c;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if moved <= 1e-14 * scale || small_change {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 4.0,
            }
        }
        if !accepted {
            // No descent direction left at machine precision.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Some(LocalOptimum {
        params: p,
        cost,
        converged,
    })
}

/// Chi-squared change at the 95% level for one parameter.
const PROFILE_DELTA_CHI2: f64 = 3.841_458_820_694_124;

/// Minimum objective with the jitter held at `theta`, warm-started from `start`.
fn profile_cost(points: &[PumpSweepPoint], options: &FitOptions, start: &DVector<f64>, theta: f64) -> Option<f64> {
    let problem = SweepProblem {
        points,
        options,
        theta_fixed: true,
    };
    let mut p = start.clone();
    p[THETA] = theta;
    levenberg_marquardt(&problem, p).map(|o| o.cost)
}

/// Interval of jitter values whose profile objective lies within the 95%
/// threshold of the optimum.
fn profile_interval(points: &[PumpSweepPoint], options: &FitOptions, best: &DVector<f64>, best_cost: f64) -> (f64, f64) {
    let theta_hat = best[THETA].abs();
    let level = best_cost + PROFILE_DELTA_CHI2;
    let outside = |theta: f64| profile_cost(points, options, best, theta).is_none_or(|c| c > level);
    let bisect = |mut inside: f64, mut out: f64| {
        for _ in 0..40 {
            let mid = 0.5 * (inside + out);
            if outside(mid) {
                out = mid;
            } else {
                inside = mid;
            }
        }
        0.5 * (inside + out)
    };

    let lower = if outside(0.0) { bisect(theta_hat, 0.0) } else { 0.0 };
    let mut step = theta_hat.max(1e-3);
    let mut far = theta_hat + step;
    while !outside(far) && far < std::f64::consts::FRAC_PI_2 {
        step *= 2.0;
        far = theta_hat + step;
    }
    let upper = bisect(theta_hat, far.min(std::f64::consts::FRAC_PI_2));
    (lower, upper)
}

fn validate_points(points: &[PumpSweepPoint]) -> Result<(), CharacterizeError> {
    if points.len() < MIN_POINTS {
        return Err(CharacterizeError::TooFewPoints {
            needed: MIN_POINTS,
            got: points.len(),
        });
    }
    for (index, pt) in points.iter().enumerate() {
        let reason = if !(0.0..1.0).contains(&pt.pump_ratio) {
            Some(format!("pump ratio {} outside [0, 1)", pt.pump_ratio))
        } else if !(pt.sigma_db > 0.0 && pt.sigma_db.is_finite()) {
            Some(format!("sigma_db must be positive, got {}", pt.sigma_db))
        } else if !pt.v_minus_db.is_finite() || !pt.v_plus_db.is_finite() {
            return Err(CharacterizeError::MissingQuadrature);
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(CharacterizeError::InvalidPoint { index, reason });
        }
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.pump_ratio), hi.max(p.pump_ratio)));
    if hi - lo < MIN_PUMP_SPAN {
        return Err(CharacterizeError::NarrowPumpSpan {
            span: hi - lo,
            required: MIN_PUMP_SPAN,
        });
    }
    Ok(())
}

/// Fit the quadrature model to a pump sweep.
pub fn fit_pump_sweep(points: &[PumpSweepPoint], options: &FitOptions) -> Result<FitResult, CharacterizeError> {
    validate_points(points)?;
    let problem = SweepProblem {
        points,
        options,
        theta_fixed: false,
    };

    let mut best: Option<LocalOptimum> = None;
    let mut converged_starts = 0;
    for i in 0..=10 {
        let eta0 = 0.5 + 0.05 * i as f64;
        for k in 0..=10 {
            let theta0 = 5e-3 * k as f64;
            let mut start = vec![eta0, theta0];
            if options.threshold == ThresholdMode::Free {
                start.push(options.p_thr_w);
            }
            let Some(opt) = levenberg_marquardt(&problem, DVector::from_vec(start)) else {
                continue;
            };
            converged_starts += usize::from(opt.converged);
            // Converged optima beat unconverged ones regardless of cost.
            let replace = best
                .as_ref()
                .is_none_or(|b| (opt.converged, -opt.cost) > (b.converged, -b.cost));
            if replace {
                best = Some(opt);
            }
        }
    }

    let best = best.ok_or(CharacterizeError::NonConvergence {
        eta: f64::NAN,
        theta: f64::NAN,
    })?;
    if converged_starts == 0 {
        return Err(CharacterizeError::NonConvergence {
            eta: best.params[ETA],
            theta: best.params[THETA].abs(),
        });
    }

    let p = &best.params;
    let covariance = problem
        .hessian(p)
        .and_then(|h| (h * 0.5).cholesky())
        .map(|c| c.inverse())
        .or_else(|| {
            let jac = problem.jacobian(p)?;
            (jac.transpose() * jac).try_inverse()
        });
    let sigma = |j: usize| {
        covariance
            .as_ref()
            .map(|c| c[(j, j)].max(0.0).sqrt())
            .unwrap_or(f64::INFINITY)
    };

    let weighted = problem.residuals(p).expect("optimum is evaluable");
    let sq: f64 = points
        .iter()
        .enumerate()
        .map(|(i, pt)| (weighted[2 * i] * pt.sigma_db).powi(2) + (weighted[2 * i + 1] * pt.sigma_db).powi(2))
        .sum();
    let residual_rms = (sq / (2 * points.len()) as f64).sqrt();

    Ok(FitResult {
        eta_total: Estimate {
            value: p[ETA],
            sigma: sigma(ETA),
        },
        theta_jitter: Estimate {
            value: p[THETA].abs(),
            sigma: sigma(THETA),
        },
        theta_interval_95: profile_interval(points, options, &best.params, best.cost),
        p_thr_mw: (options.threshold == ThresholdMode::Free).then(|| Estimate {
            value: p[PTHR] * 1e3,
            sigma: sigma(PTHR) * 1e3,
        }),
        residual_rms,
        n_points: points.len(),
        chi_squared: best.cost,
        eta_at_bound: p[ETA] <= 0.0 || p[ETA] >= 1.0,
        converged_starts,
    })
}

/// Dense model curve for plotting: (pump ratio, squeezed dB, anti-squeezed dB).
pub fn model_curve(eta: f64, theta: f64, options: &FitOptions, max_ratio: f64, n: usize) -> Vec<(f64, f64, f64)> {
    (0..n)
        .map(|i| {
            let r = max_ratio * i as f64 / (n - 1).max(1) as f64;
            let (m, p) = sweep_model_db(eta, theta, r, options.decay_rate, options.fourier_freq_hz);
            (r, m, p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratios(n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.2 + 0.7 * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn noiseless_sweep_recovered_exactly() {
        let opts = FitOptions::default();
        let pts = synthetic_sweep(0.95, 4.36e-3, &ratios(8), 0.0, &opts, 0)
            .into_iter()
            .map(|p| PumpSweepPoint { sigma_db: 0.1, ..p })
            .collect::<Vec<_>>();
        let fit = fit_pump_sweep(&pts, &opts).unwrap();
        assert!(fit.residual_rms < 1e-9, "{}", fit.residual_rms);
        assert!((fit.eta_total.value - 0.95).abs() < 1e-9);
        assert!((fit.theta_jitter.value - 4.36e-3).abs() < 1e-9);
        assert!(!fit.eta_at_bound);
        assert_eq!(fit.n_points, 8);
    }

    #[test]
    fn free_threshold_recovers_threshold() {
        let opts = FitOptions {
            threshold: ThresholdMode::Free,
            ..FitOptions::default()
        };
        let pts: Vec<_> = synthetic_sweep(0.95, 4.36e-3, &ratios(8), 0.0, &opts, 0)
            .into_iter()
            .map(|p| PumpSweepPoint { sigma_db: 0.1, ..p })
            .collect();
        let fit = fit_pump_sweep(&pts, &opts).unwrap();
        let pthr = fit.p_thr_mw.unwrap();
        assert!((pthr.value - 710.0).abs() < 1e-5, "{pthr:?}");
        assert!((fit.eta_total.value - 0.95).abs() < 1e-8);
    }

    #[test]
    fn noisy_sweep_within_quoted_scale() {
        let opts = FitOptions::default();
        let pts = synthetic_sweep(0.95, 4.36e-3, &ratios(8), 0.1, &opts, 17);
        let fit = fit_pump_sweep(&pts, &opts).unwrap();
        assert!((fit.eta_total.value - 0.95).abs() < 0.01);
        assert!((fit.theta_jitter.value - 4.36e-3).abs() < 1e-3);
        assert!(fit.eta_total.sigma > 0.0 && fit.eta_total.sigma < 0.01);
        assert!(fit.residual_rms > 0.0);
        let (lo, hi) = fit.theta_interval_95;
        assert!(lo < fit.theta_jitter.value && fit.theta_jitter.value < hi, "{lo} {hi}");
        assert!(lo < 4.36e-3 && 4.36e-3 < hi);
    }

    #[test]
    fn preconditions_reported() {
        let opts = FitOptions::default();
        let pts = synthetic_sweep(0.95, 4.36e-3, &ratios(8), 0.0, &opts, 0);
        let pts: Vec<_> = pts.into_iter().map(|p| PumpSweepPoint { sigma_db: 0.1, ..p }).collect();
        assert!(matches!(
            fit_pump_sweep(&pts[..3], &opts),
            Err(CharacterizeError::TooFewPoints { needed: 4, got: 3 })
        ));
        let narrow: Vec<_> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| PumpSweepPoint {
                pump_ratio: 0.5 + 0.01 * i as f64,
                ..*p
            })
            .collect();
        assert!(matches!(
            fit_pump_sweep(&narrow, &opts),
            Err(CharacterizeError::NarrowPumpSpan { .. })
        ));
        let mut missing = pts.clone();
        missing[2].v_plus_db = f64::NAN;
        let err = fit_pump_sweep(&missing, &opts).unwrap_err();
        assert_eq!(err.to_string(), "both quadratures required");
        let mut bad_sigma = pts.clone();
        bad_sigma[1].sigma_db = 0.0;
        assert!(matches!(
            fit_pump_sweep(&bad_sigma, &opts),
            Err(CharacterizeError::InvalidPoint { index: 1, .. })
        ));
    }

    #[test]
    fn uncertainty_shrinks_with_more_points() {
        let opts = FitOptions::default();
        let mean_sigma = |n: usize| {
            let seeds = 20;
            (0..seeds)
                .map(|s| {
                    let pts = synthetic_sweep(0.95, 4.36e-3, &ratios(n), 0.1, &opts, 1000 + s);
                    fit_pump_sweep(&pts, &opts).unwrap().eta_total.sigma
                })
                .sum::<f64>()
                / seeds as f64
        };
        let ratio = mean_sigma(16) / mean_sigma(8);
        let expected = std::f64::consts::FRAC_1_SQRT_2;
        assert!((ratio / expected - 1.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn zero_jitter_truth_is_consistent_with_zero() {
        let opts = FitOptions::default();
        let covered = (0..100)
            .filter(|&s| {
                let pts = synthetic_sweep(0.95, 0.0, &ratios(8), 0.1, &opts, 5000 + s);
                let fit = fit_pump_sweep(&pts, &opts).unwrap();
                fit.theta_interval_95.0 == 0.0
            })
            .count();
        assert!(covered >= 95, "{covered}/100");
    }

    #[test]
    fn model_curve_spans_range() {
        let c = model_curve(0.95, 4.36e-3, &FitOptions::default(), 0.95, 96);
        assert_eq!(c.len(), 96);
        assert_eq!(c[0], (0.0, 0.0, 0.0));
        assert!((c[95].0 - 0.95).abs() < 1e-12);
        assert!(c.windows(2).all(|w| w[1].2 > w[0].2));
    }
}
