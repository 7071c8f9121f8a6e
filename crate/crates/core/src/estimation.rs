//! One-parameter maximum composite-likelihood estimators.
//!
//! The free parameter is searched over a compact interval: a coarse grid of
//! probes picks the best bracket, then Brent's golden-section/parabolic
//! iteration refines it. The other parameter is held at its true value.

use serde::{Deserialize, Serialize};

use crate::error::{EstimationError, LikelihoodError};
use crate::fields::FieldParams;
use crate::geometry::{EdgeSet, TriangleSet};
use crate::likelihood::{pairwise_cl, triplewise_cl};

/// Probes used to locate the initial bracket.
pub const PROBES: usize = 32;
/// Absolute tolerance on the located maximiser.
pub const TOLERANCE: f64 = 1e-6;
const MAX_ITERATIONS: usize = 200;
const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// A closed interval [lo, hi] with lo < hi, both finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct CompactInterval {
    lo: f64,
    hi: f64,
}

impl CompactInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, EstimationError> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(EstimationError::InvalidInterval { lo, hi })
        }
    }

    /// Default search range for sigma.
    pub fn default_sigma() -> Self {
        Self { lo: 0.2, hi: 5.0 }
    }

    /// Default search range for alpha.
    pub fn default_alpha() -> Self {
        Self { lo: 0.05, hi: 0.95 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

impl TryFrom<[f64; 2]> for CompactInterval {
    type Error = EstimationError;

    fn try_from([lo, hi]: [f64; 2]) -> Result<Self, Self::Error> {
        Self::new(lo, hi)
    }
}

impl From<CompactInterval> for [f64; 2] {
    fn from(c: CompactInterval) -> Self {
        [c.lo, c.hi]
    }
}

/// Which composite likelihood to maximise, with its design.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Pairwise(&'a EdgeSet),
    Triplewise(&'a TriangleSet),
}

impl Objective<'_> {
    pub fn order(&self) -> u8 {
        match self {
            Objective::Pairwise(_) => 2,
            Objective::Triplewise(_) => 3,
        }
    }

    pub fn evaluate(&self, eta: &[f64], params: &FieldParams) -> Result<f64, LikelihoodError> {
        match self {
            Objective::Pairwise(edges) => pairwise_cl(eta, edges, params),
            Objective::Triplewise(triangles) => triplewise_cl(eta, triangles, params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub objective_at_estimate: f64,
    /// Refinement iterations after the probe grid.
    pub iterations: usize,
    /// Objective evaluations, probes included.
    pub evaluations: usize,
    pub bracket_width_final: f64,
    pub boundary_hit: bool,
}

/// Maximises `f` over `range`.
pub fn maximize(
    range: CompactInterval,
    mut f: impl FnMut(f64) -> Result<f64, EstimationError>,
) -> Result<EstimateReport, EstimationError> {
    let (lo, hi) = (range.lo, range.hi);
    let step = (hi - lo) / (PROBES - 1) as f64;
    let xs: Vec<f64> = (0..PROBES)
        .map(|i| {
            if i == PROBES - 1 {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect();
    let mut values = Vec::with_capacity(PROBES);
    for &x in &xs {
        let y = f(x)?;
        if !y.is_finite() {
            return Err(EstimationError::NonFiniteObjective(x));
        }
        values.push(y);
    }
    let mut evaluations = PROBES;
    // first index attaining the maximum keeps ties deterministic
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, &y)| if y > values[b] { i } else { b });
    let mut a = xs[best.saturating_sub(1)];
    let mut b = xs[(best + 1).min(PROBES - 1)];

    // Brent's method on -f, seeded with the best probe.
    let (mut x, mut fx) = (xs[best], -values[best]);
    let (mut w, mut fw, mut v, mut fv) = (x, fx, x, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let m = 0.5 * (a + b);
        let tol1 = 0.2 * TOLERANCE + 1e-10 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        iterations += 1;
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let u = u.clamp(lo, hi);
        let yu = f(u)?;
        evaluations += 1;
        if !yu.is_finite() {
            return Err(EstimationError::NonFiniteObjective(u));
        }
        let fu = -yu;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    let boundary_hit = x - lo <= TOLERANCE || hi - x <= TOLERANCE;
    Ok(EstimateReport {
        estimate: x,
        objective_at_estimate: -fx,
        iterations,
        evaluations,
        bracket_width_final: b - a,
        boundary_hit,
    })
}

/// Maximum composite-likelihood estimate of sigma with alpha fixed.
pub fn mcle_sigma(
    objective: Objective<'_>,
    eta: &[f64],
    alpha0: f64,
    range: CompactInterval,
) -> Result<EstimateReport, EstimationError> {
    if !(alpha0 > 0.0 && alpha0 < 2.0) || range.lo <= 0.0 {
        return Err(EstimationError::InvalidInterval {
            lo: range.lo,
            hi: range.hi,
        });
    }
    maximize(range, |sigma| {
        let params =
            FieldParams::new(sigma, alpha0).map_err(|_| LikelihoodError::InvalidParams {
                sigma,
                alpha: alpha0,
            })?;
        Ok(objective.evaluate(eta, &params)?)
    })
}

/// Maximum composite-likelihood estimate of alpha with sigma fixed.
pub fn mcle_alpha(
    objective: Objective<'_>,
    eta: &[f64],
    sigma0: f64,
    range: CompactInterval,
) -> Result<EstimateReport, EstimationError> {
    if sigma0.is_nan() || sigma0 <= 0.0 || range.lo <= 0.0 || range.hi >= 2.0 {
        return Err(EstimationError::InvalidInterval {
            lo: range.lo,
            hi: range.hi,
        });
    }
    maximize(range, |alpha| {
        let params =
            FieldParams::new(sigma0, alpha).map_err(|_| LikelihoodError::InvalidParams {
                sigma: sigma0,
                alpha,
            })?;
        Ok(objective.evaluate(eta, &params)?)
    })
}
