use std::f64::consts::LN_10;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HILL_N_MIN: f64 = 0.1;
pub const HILL_N_MAX: f64 = 10.0;
const MAX_ITERATIONS: usize = 200;
const REL_SSE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DosePoint {
    /// Molar.
    pub concentration: f64,
    pub response: f64,
    pub n_wells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseResponse {
    pub compound_id: String,
    /// Sorted by concentration, one point per distinct concentration.
    pub points: Vec<DosePoint>,
}

impl DoseResponse {
    /// Groups per-well `(concentration, response)` pairs by concentration and
    /// averages each group; every well carries equal weight in the fit.
    pub fn from_wells(compound_id: impl Into<String>, wells: &[(f64, f64)]) -> Result<Self> {
        let mut sorted = wells.to_vec();
        if sorted.iter().any(|(c, r)| !(c.is_finite() && *c > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidArgument(
                "concentrations must be positive and responses finite".into(),
            ));
        }
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points: Vec<DosePoint> = Vec::new();
        for (c, r) in sorted {
            match points.last_mut() {
                Some(p) if p.concentration == c => {
                    p.response += r;
                    p.n_wells += 1;
                }
                _ => points.push(DosePoint {
                    concentration: c,
                    response: r,
                    n_wells: 1,
                }),
            }
        }
        for p in &mut points {
            p.response /= p.n_wells as f64;
        }
        Ok(Self {
            compound_id: compound_id.into(),
            points,
        })
    }

    pub fn distinct_concentrations(&self) -> usize {
        self.points.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillFit {
    pub s0: f64,
    pub s_inf: f64,
    /// Molar.
    pub ec50: f64,
    pub n: f64,
    pub residual_sse: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl HillFit {
    pub fn predict(&self, concentration: f64) -> f64 {
        hill(self.s0, self.s_inf, self.ec50.log10(), self.n, concentration.log10())
    }
}

/// Fraction of the way from S0 to S∞ at log-concentration `x`, computed as a
/// logistic in `n·(log ec50 − x)·ln 10` so it never overflows.
#[inline]
fn hill_fraction(log_ec50: f64, n: f64, x: f64) -> f64 {
    let e = n * (log_ec50 - x) * LN_10;
    if e >= 0.0 {
        let t = (-e).exp();
        t / (1.0 + t)
    } else {
        1.0 / (1.0 + e.exp())
    }
}

/// `S0 + (S∞ − S0) / (1 + (EC50/[C])^n)` with `x = log10 [C]`.
#[inline]
pub fn hill(s0: f64, s_inf: f64, log_ec50: f64, n: f64, x: f64) -> f64 {
    s0 + (s_inf - s0) * hill_fraction(log_ec50, n, x)
}

struct Problem {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl Problem {
    fn sse(&self, p: &Vector4<f64>) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .zip(&self.w)
            .map(|((x, y), w)| {
                let r = y - hill(p[0], p[1], p[2], p[3], *x);
                w * r * r
            })
            .sum()
    }

    /// Normal matrix `JᵀWJ` and gradient `JᵀWr` at `p`.
    fn normal_equations(&self, p: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
        let (s0, s_inf, l, n) = (p[0], p[1], p[2], p[3]);
        let mut a = Matrix4::zeros();
        let mut g = Vector4::zeros();
        for ((x, y), w) in self.x.iter().zip(&self.y).zip(&self.w) {
            let f = hill_fraction(l, n, *x);
            let r = y - (s0 + (s_inf - s0) * f);
            // d f / d e = -f(1-f) with e = n (l - x) ln10.
            let slope = -(s_inf - s0) * f * (1.0 - f) * LN_10;
            let j = Vector4::new(1.0 - f, f, slope * n, slope * (l - x));
            a += *w * j * j.transpose();
            g += *w * r * j;
        }
        (a, g)
    }
}

/// Least-squares fit of the four-parameter Hill equation in
/// `(S0, S∞, log10 EC50, n)` by Levenberg-Marquardt with Marquardt diagonal
/// scaling, which keeps the fit equivariant under response scaling.
pub fn fit_hill(dr: &DoseResponse) -> Result<HillFit> {
    let k = dr.distinct_concentrations();
    if k < 4 {
        return Err(Error::NotEnoughPoints(k));
    }
    let pts = &dr.points;
    if pts.windows(2).any(|w| w[0].concentration >= w[1].concentration)
        || pts.iter().any(|p| !(p.concentration.is_finite() && p.concentration > 0.0) || !p.response.is_finite())
    {
        return Err(Error::InvalidArgument(
            "dose-response points must be sorted, distinct, positive and finite".into(),
        ));
    }
    let prob = Problem {
        x: pts.iter().map(|p| p.concentration.log10()).collect(),
        y: pts.iter().map(|p| p.response).collect(),
        w: pts.iter().map(|p| p.n_wells.max(1) as f64).collect(),
    };
    let (xmin, xmax) = (prob.x[0], prob.x[k - 1]);
    let mut p = Vector4::new(pts[0].response, pts[k - 1].response, 0.5 * (xmin + xmax), 1.0);

    let lo = prob.y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = prob.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        // Flat responses: EC50 is unidentifiable.
        return Ok(HillFit {
            s0: p[0],
            s_inf: p[1],
            ec50: 10f64.powf(p[2]),
            n: p[3],
            residual_sse: 0.0,
            converged: false,
            iterations: 0,
        });
    }
    let scale: f64 = prob.y.iter().zip(&prob.w).map(|(y, w)| w * y * y).sum();

    let mut sse = prob.sse(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (a, g) = prob.normal_equations(&p);
        let dmax = a.diagonal().max();
        let mut accepted = None;
        while lambda <= 1e16 {
            let mut damped = a;
            for i in 0..4 {
                damped[(i, i)] += lambda * a[(i, i)].max(1e-15 * dmax);
            }
            if let Some(step) = damped.cholesky().map(|c| c.solve(&g)) {
                let mut trial = p + step;
                trial[3] = trial[3].clamp(HILL_N_MIN, HILL_N_MAX);
                let trial_sse = prob.sse(&trial);
                if trial_sse.is_finite() && trial_sse < sse {
                    accepted = Some((trial, trial_sse));
                    lambda = (lambda * 0.1).max(1e-12);
                    break;
                }
            }
            lambda *= 10.0;
        }
        let Some((next, next_sse)) = accepted else {
            // No damping level decreases the SSE: a numerical minimum.
            converged = true;
            break;
        };
        let change = (sse - next_sse) / sse;
        p = next;
        sse = next_sse;
        if change < REL_SSE_TOL || sse <= 1e-28 * scale {
            converged = true;
            break;
        }
    }
    let spread = (p[1] - p[0]).abs();
    if spread <= 1e-12 * p[0].abs().max(p[1].abs()) {
        converged = false;
    }
    Ok(HillFit {
        s0: p[0],
        s_inf: p[1],
        ec50: 10f64.powf(p[2]),
        n: p[3],
        residual_sse: sse,
        converged,
        iterations,
    })
}
