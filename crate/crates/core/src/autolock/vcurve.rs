//! Vertex fit of a phase-offset scan.
//!
//! The default model is the literal v-curve `b - a|phi - phi0|` on squeezing
//! magnitudes. For a fixed vertex the model is linear in `(a, b)`, and on each
//! interval between neighbouring scan offsets it is linear in
//! `(b, a, a*phi0)`, so every interval has an exact least-squares solution.
//! The optimum is either such an interior solution or sits on a scan offset.
//!
//! The alternative `Quadrature` model fits the variance form
//! `A + B sin^2(phi - phi0)` with a grid plus golden-section vertex search.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VCurveModel {
    Vee,
    Quadrature,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VCurveError {
    #[error("v-curve fit needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("scan offsets must be distinct and finite")]
    DegenerateOffsets,
    #[error("flat scan")]
    FlatScan,
    #[error("scan has no maximum (fitted slope {0:.3e})")]
    NoVertex(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VCurveFit {
    pub model: VCurveModel,
    /// Offset of maximum squeezing, rad.
    pub vertex_rad: f64,
    /// dB/rad for `Vee`; the sin^2 variance coefficient for `Quadrature`.
    pub slope: f64,
    /// Squeezing magnitude at the vertex, dB.
    pub floor_db: f64,
    pub residual_rms_db: f64,
}

/// Fit the v-curve model to `(offset rad, squeezing magnitude dB)` samples.
pub fn fit_v_curve(samples: &[(f64, f64)]) -> Result<VCurveFit, VCurveError> {
    fit_v_curve_with(samples, VCurveModel::Vee)
}

pub fn fit_v_curve_with(samples: &[(f64, f64)], model: VCurveModel) -> Result<VCurveFit, VCurveError> {
    if samples.len() < 3 {
        return Err(VCurveError::TooFewSamples(samples.len()));
    }
    let mut s = samples.to_vec();
    if s.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(VCurveError::DegenerateOffsets);
    }
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    if s.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(VCurveError::DegenerateOffsets);
    }
    let (lo, hi) = s
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return Err(VCurveError::FlatScan);
    }
    let xs: Vec<f64> = s.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = s.iter().map(|p| p.1).collect();
    match model {
        VCurveModel::Vee => fit_vee(&xs, &ys),
        VCurveModel::Quadrature => fit_quadrature(&xs, &ys),
    }
}

/// Least squares of `y = c0 + c1*u`; returns (c0, c1, sse).
fn line_fit(u: impl Iterator<Item = f64> + Clone, y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = y.len() as f64;
    let mu = u.clone().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut suu, mut suy) = (0.0, 0.0);
    for (ui, &yi) in u.clone().zip(y) {
        suu += (ui - mu) * (ui - mu);
        suy += (ui - mu) * (yi - my);
    }
    if suu <= 0.0 {
        return None;
    }
    let c1 = suy / suu;
    let c0 = my - c1 * mu;
    let sse = u.zip(y).map(|(ui, &yi)| (yi - c0 - c1 * ui).powi(2)).sum();
    Some((c0, c1, sse))
}

fn vee_at(xs: &[f64], ys: &[f64], vertex: f64) -> Option<(f64, f64, f64)> {
    // y = b - a|x - v|
    line_fit(xs.iter().map(move |&x| (x - vertex).abs()), ys).map(|(b, neg_a, sse)| (-neg_a, b, sse))
}

fn fit_vee(xs: &[f64], ys: &[f64]) -> Result<VCurveFit, VCurveError> {
    let mut candidates: Vec<f64> = xs.to_vec();
    for k in 0..xs.len() - 1 {
        // Samples left of the vertex have sign -1, the rest +1:
        // y_i = b + a*(-s_i x_i) + c*s_i with c = a*v.
        let mut ata = Matrix3::zeros();
        let mut aty = Vector3::zeros();
        for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
            let s = if i <= k { -1.0 } else { 1.0 };
            let row = Vector3::new(1.0, -s * x, s);
            ata += row * row.transpose();
            aty += row * y;
        }
        if let Some(sol) = ata.lu().solve(&aty) {
            let (a, c) = (sol[1], sol[2]);
            if a > 0.0 {
                let v = c / a;
                if v > xs[k] && v < xs[k + 1] {
                    candidates.push(v);
                }
            }
        }
    }

    let mut best: Option<(f64, f64, f64, f64)> = None;
    for v in candidates {
        if let Some((a, b, sse)) = vee_at(xs, ys, v) {
            if best.is_none_or(|bst| sse < bst.3) {
                best = Some((v, a, b, sse));
            }
        }
    }
    let (vertex, a, b, sse) = best.ok_or(VCurveError::FlatScan)?;
    if a <= 0.0 {
        return Err(VCurveError::NoVertex(a));
    }
    Ok(VCurveFit {
        model: VCurveModel::Vee,
        vertex_rad: vertex,
        slope: a,
        floor_db: b,
        residual_rms_db: (sse / xs.len() as f64).sqrt(),
    })
}

fn quadrature_at(xs: &[f64], vs: &[f64], vertex: f64) -> Option<(f64, f64, f64)> {
    line_fit(xs.iter().map(move |&x| (x - vertex).sin().powi(2)), vs)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn fit_quadrature(xs: &[f64], ys: &[f64]) -> Result<VCurveFit, VCurveError> {
    let vs: Vec<f64> = ys.iter().map(|y| 10f64.powf(-y / 10.0)).collect();
    let sse = |v: f64| quadrature_at(xs, &vs, v).map_or(f64::INFINITY, |r| r.2);
    let mut candidates = xs.to_vec();
    for w in xs.windows(2) {
        candidates.push(golden_min(sse, w[0], w[1]));
    }
    let vertex = candidates
        .into_iter()
        .fold((f64::NAN, f64::INFINITY), |best, v| {
            let e = sse(v);
            if e < best.1 {
                (v, e)
            } else {
                best
            }
        })
        .0;
    let (floor_var, coef, _) = quadrature_at(xs, &vs, vertex).ok_or(VCurveError::FlatScan)?;
    if coef <= 0.0 || floor_var <= 0.0 {
        return Err(VCurveError::NoVertex(coef));
    }
    let resid: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let model = -10.0 * (floor_var + coef * (x - vertex).sin().powi(2)).log10();
            (y - model).powi(2)
        })
        .sum();
    Ok(VCurveFit {
        model: VCurveModel::Quadrature,
        vertex_rad: vertex,
        slope: coef,
        floor_db: -10.0 * floor_var.log10(),
        residual_rms_db: (resid / xs.len() as f64).sqrt(),
    })
}
