//! Exponent functions and low-order densities of the Brown-Resnick field,
//! the Delaunay-restricted composite likelihoods, and the small-distance
//! limits of the pairwise and triplewise scores.
//!
//! Everything that can underflow is carried in log space. For a pair at
//! distance `d` the only scale that matters is `a = sigma d^(alpha/2)`, and
//! the standardised log ratio `u = log(z2/z1)/a` grows like `1/a`, so direct
//! evaluation breaks down long before the distances met at large N.

use crate::error::LikelihoodError;
use crate::fields::FieldParams;
use crate::gaussian::{bvn, cdf, log_bvn, log_bvn_dh, log_bvn_pdf, log_cdf, log_pdf, Correlation};
use crate::geometry::{EdgeSet, TriangleSet};

/// Slack allowed in the triangle inequality, relative to the longest side.
const TRIANGLE_SLACK: f64 = 1e-12;

fn check_z(z: f64) -> Result<(), LikelihoodError> {
    if z > 0.0 && !z.is_nan() {
        Ok(())
    } else {
        Err(LikelihoodError::InvalidObservation)
    }
}

fn check_finite_z(z: f64) -> Result<(), LikelihoodError> {
    if z > 0.0 && z.is_finite() {
        Ok(())
    } else {
        Err(LikelihoodError::InvalidObservation)
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Two sites at distance `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeometry {
    d: f64,
    a: f64,
}

impl PairGeometry {
    pub fn new(d: f64, params: &FieldParams) -> Result<Self, LikelihoodError> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(LikelihoodError::InvalidDistance(d));
        }
        let a = params.increment_scale(d);
        if !(a > 0.0 && a.is_finite()) {
            return Err(LikelihoodError::InvalidDistance(d));
        }
        Ok(Self { d, a })
    }

    /// A pair at unit distance whose increment scale is `a`.
    pub fn from_scale(a: f64) -> Result<Self, LikelihoodError> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(LikelihoodError::InvalidDistance(a));
        }
        Ok(Self { d: 1.0, a })
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    /// Standard deviation of the increment between the two sites.
    pub fn a(&self) -> f64 {
        self.a
    }

    /// log(z2/z1)/a.
    pub fn u(&self, z1: f64, z2: f64) -> f64 {
        (z2.ln() - z1.ln()) / self.a
    }
}

/// Three sites given by their side lengths (d12, d13, d23).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleGeometry {
    d: [f64; 3],
    a: [f64; 3],
    r: [Correlation; 3],
}

impl TripleGeometry {
    pub fn new(sides: [f64; 3], params: &FieldParams) -> Result<Self, LikelihoodError> {
        for &s in &sides {
            if !(s > 0.0 && s.is_finite()) {
                return Err(LikelihoodError::InvalidDistance(s));
            }
        }
        let [d12, d13, d23] = sides;
        let longest = d12.max(d13).max(d23);
        let slack = TRIANGLE_SLACK * longest;
        if d12 > d13 + d23 + slack || d13 > d12 + d23 + slack || d23 > d12 + d13 + slack {
            return Err(LikelihoodError::TriangleInequality(sides));
        }
        let alpha = params.alpha();
        let p = sides.map(|s| s.powf(alpha));
        let corr = |near: f64, near2: f64, far: f64, dn: f64, dn2: f64| {
            (near + near2 - far) / (2.0 * (dn * dn2).powf(0.5 * alpha))
        };
        let r1 = corr(p[0], p[1], p[2], d12, d13);
        let r2 = corr(p[0], p[2], p[1], d12, d23);
        let r3 = corr(p[1], p[2], p[0], d13, d23);
        let r = [
            Correlation::clamped(r1)?,
            Correlation::clamped(r2)?,
            Correlation::clamped(r3)?,
        ];
        Ok(Self {
            d: sides,
            a: sides.map(|s| params.increment_scale(s)),
            r,
        })
    }

    /// Side lengths (d12, d13, d23).
    pub fn sides(&self) -> [f64; 3] {
        self.d
    }

    /// Increment scales (a12, a13, a23).
    pub fn scales(&self) -> [f64; 3] {
        self.a
    }

    /// Correlations of the increments seen from sites 1, 2 and 3.
    pub fn correlations(&self) -> [Correlation; 3] {
        self.r
    }

    fn require_nondegenerate(&self) -> Result<(), LikelihoodError> {
        match self.r.iter().find(|r| r.is_degenerate()) {
            Some(r) => Err(LikelihoodError::DegenerateGeometry(r.value())),
            None => Ok(()),
        }
    }
}

/// Pairwise exponent function. `z2` may be `+inf`.
pub fn pair_exponent(z1: f64, z2: f64, geom: &PairGeometry) -> Result<f64, LikelihoodError> {
    check_z(z1)?;
    check_z(z2)?;
    if z1.is_infinite() && z2.is_infinite() {
        return Ok(0.0);
    }
    if z2.is_infinite() {
        return Ok(1.0 / z1);
    }
    if z1.is_infinite() {
        return Ok(1.0 / z2);
    }
    let a = geom.a;
    let u = geom.u(z1, z2);
    Ok(cdf(0.5 * a + u) / z1 + cdf(0.5 * a - u) / z2)
}

/// Log of the bivariate density of (eta(x1), eta(x2)).
pub fn pair_log_density(z1: f64, z2: f64, geom: &PairGeometry) -> Result<f64, LikelihoodError> {
    check_finite_z(z1)?;
    check_finite_z(z2)?;
    let a = geom.a;
    let (l1, l2) = (z1.ln(), z2.ln());
    let u = (l2 - l1) / a;
    let (vp, vm) = (0.5 * a + u, 0.5 * a - u);
    let v = cdf(vp) / z1 + cdf(vm) / z2;
    // e^{-V} (V1 V2 - V12), both terms positive.
    let product = log_cdf(vp) + log_cdf(vm) - l2;
    let mixed = log_pdf(vp) - a.ln();
    Ok(-v - 2.0 * l1 - l2 + logsumexp(&[product, mixed]))
}

pub fn pair_density(z1: f64, z2: f64, geom: &PairGeometry) -> Result<f64, LikelihoodError> {
    pair_log_density(z1, z2, geom).map(f64::exp)
}

/// Per-site standardised quantities of a triple at one observation.
struct TripleArgs {
    lz: [f64; 3],
    /// Arguments of the three bivariate terms, centred at sites 1, 2, 3.
    h: [(f64, f64); 3],
}

fn triple_args(z: [f64; 3], geom: &TripleGeometry) -> TripleArgs {
    let lz = z.map(f64::ln);
    let [a12, a13, a23] = geom.a;
    let u12 = (lz[1] - lz[0]) / a12;
    let u13 = (lz[2] - lz[0]) / a13;
    let u23 = (lz[2] - lz[1]) / a23;
    TripleArgs {
        lz,
        h: [
            (0.5 * a12 + u12, 0.5 * a13 + u13),
            (0.5 * a12 - u12, 0.5 * a23 + u23),
            (0.5 * a13 - u13, 0.5 * a23 - u23),
        ],
    }
}

/// Trivariate exponent function. Any coordinate may be `+inf`.
pub fn triple_exponent(
    z1: f64,
    z2: f64,
    z3: f64,
    geom: &TripleGeometry,
) -> Result<f64, LikelihoodError> {
    let z = [z1, z2, z3];
    for &zi in &z {
        check_z(zi)?;
    }
    let args = triple_args(z, geom);
    let mut v = 0.0;
    for ((&zi, &(h, k)), r) in z.iter().zip(&args.h).zip(&geom.r) {
        if zi.is_finite() {
            v += bvn(h, k, r.value()) / zi;
        }
    }
    Ok(v)
}

/// First, mixed second, and mixed third partial derivatives of an exponent
/// function of three arguments, together with its value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentPartials {
    pub v: f64,
    pub v_i: [f64; 3],
    pub v12: f64,
    pub v13: f64,
    pub v23: f64,
    pub v123: f64,
}

impl ExponentPartials {
    /// log of the third mixed derivative of exp(-V).
    ///
    /// For an exponent measure all first and mixed partials are negative,
    /// which makes every term below positive.
    pub fn log_density(&self) -> f64 {
        let m = |x: f64| (-x).ln();
        log_density_from_magnitudes(
            self.v,
            self.v_i.map(m),
            [m(self.v12), m(self.v13), m(self.v23)],
            m(self.v123),
        )
    }
}

/// d^3 exp(-V)/dz1 dz2 dz3
///   = exp(-V) (-V123 + V13 V2 + V1 V23 + V12 V3 - V1 V2 V3),
/// from the log magnitudes of the (negative) partials.
fn log_density_from_magnitudes(v: f64, l: [f64; 3], l2: [f64; 3], l123: f64) -> f64 {
    let [l12, l13, l23] = l2;
    -v + logsumexp(&[l123, l13 + l[1], l[0] + l23, l12 + l[2], l[0] + l[1] + l[2]])
}

/// Log magnitudes of all partials of the trivariate exponent.
struct LogPartials {
    v: f64,
    l: [f64; 3],
    l2: [f64; 3],
    l123: f64,
}

fn triple_log_partials(z: [f64; 3], geom: &TripleGeometry) -> Result<LogPartials, LikelihoodError> {
    for &zi in &z {
        check_finite_z(zi)?;
    }
    geom.require_nondegenerate()?;
    let args = triple_args(z, geom);
    let lz = args.lz;
    let la = geom.a.map(f64::ln);
    let r = geom.r.map(Correlation::value);
    let [(h1, k1), (h2, k2), (h3, k3)] = args.h;

    let v = bvn(h1, k1, r[0]) / z[0] + bvn(h2, k2, r[1]) / z[1] + bvn(h3, k3, r[2]) / z[2];
    let l = [
        log_bvn(h1, k1, r[0]) - 2.0 * lz[0],
        log_bvn(h2, k2, r[1]) - 2.0 * lz[1],
        log_bvn(h3, k3, r[2]) - 2.0 * lz[2],
    ];
    let l12 = log_bvn_dh(h1, k1, r[0]) - 2.0 * lz[0] - la[0] - lz[1];
    let l13 = log_bvn_dh(k1, h1, r[0]) - 2.0 * lz[0] - la[1] - lz[2];
    let l23 = log_bvn_dh(k2, h2, r[1]) - 2.0 * lz[1] - la[2] - lz[2];
    let l123 = log_bvn_pdf(h1, k1, r[0]) - 2.0 * lz[0] - lz[1] - lz[2] - la[0] - la[1];
    Ok(LogPartials {
        v,
        l,
        l2: [l12, l13, l23],
        l123,
    })
}

/// All partials of the trivariate exponent at finite positive arguments.
pub fn triple_exponent_partials(
    z1: f64,
    z2: f64,
    z3: f64,
    geom: &TripleGeometry,
) -> Result<ExponentPartials, LikelihoodError> {
    let p = triple_log_partials([z1, z2, z3], geom)?;
    let neg = |x: f64| -x.exp();
    Ok(ExponentPartials {
        v: p.v,
        v_i: p.l.map(neg),
        v12: neg(p.l2[0]),
        v13: neg(p.l2[1]),
        v23: neg(p.l2[2]),
        v123: neg(p.l123),
    })
}

/// Log of the trivariate density of (eta(x1), eta(x2), eta(x3)).
pub fn triple_log_density(
    z1: f64,
    z2: f64,
    z3: f64,
    geom: &TripleGeometry,
) -> Result<f64, LikelihoodError> {
    let p = triple_log_partials([z1, z2, z3], geom)?;
    Ok(log_density_from_magnitudes(p.v, p.l, p.l2, p.l123))
}

pub fn triple_density(
    z1: f64,
    z2: f64,
    z3: f64,
    geom: &TripleGeometry,
) -> Result<f64, LikelihoodError> {
    triple_log_density(z1, z2, z3, geom).map(f64::exp)
}

/// Sum by recursive halving so the rounding pattern depends only on the
/// number of terms.
fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise composite log-likelihood over the edge set; `eta` is indexed by
/// vertex id.
pub fn pairwise_cl(
    eta: &[f64],
    edges: &EdgeSet,
    params: &FieldParams,
) -> Result<f64, LikelihoodError> {
    let terms = edges
        .pairs
        .iter()
        .zip(&edges.lengths)
        .enumerate()
        .map(|(idx, (&(i, j), &d))| {
            let geom = PairGeometry::new(d, params)?;
            let term = pair_log_density(eta[i], eta[j], &geom)?;
            if term.is_finite() {
                Ok(term)
            } else {
                Err(LikelihoodError::NonFinite(idx))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pairwise_sum(&terms))
}

/// Triplewise composite log-likelihood over the triangle set.
pub fn triplewise_cl(
    eta: &[f64],
    triangles: &TriangleSet,
    params: &FieldParams,
) -> Result<f64, LikelihoodError> {
    let terms = triangles
        .triples
        .iter()
        .zip(&triangles.sides)
        .enumerate()
        .map(|(idx, (&[i, j, k], &sides))| {
            let geom = TripleGeometry::new(sides, params)?;
            let term = triple_log_density(eta[i], eta[j], eta[k], &geom)?;
            if term.is_finite() {
                Ok(term)
            } else {
                Err(LikelihoodError::NonFinite(idx))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pairwise_sum(&terms))
}

/// Limits of the sigma-score and the (1/log d)-scaled alpha-score of one
/// density term as the distances shrink with the standardised ratios fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreLimit {
    pub d_sigma: f64,
    pub d_alpha_scaled: f64,
}

/// Pair term: both limits are multiples of u^2 - 1.
pub fn pair_score_limit(u: f64, sigma: f64) -> ScoreLimit {
    let h2 = u * u - 1.0;
    ScoreLimit {
        d_sigma: h2 / sigma,
        d_alpha_scaled: 0.5 * h2,
    }
}

/// Triple term: both limits are multiples of Q - 2, where Q is the
/// quadratic form of (u2, u3) under the correlation seen from site 1.
pub fn triple_score_limit(
    u2: f64,
    u3: f64,
    r1: Correlation,
    sigma: f64,
) -> Result<ScoreLimit, LikelihoodError> {
    if r1.is_degenerate() {
        return Err(LikelihoodError::DegenerateGeometry(r1.value()));
    }
    let r = r1.value();
    let q = (u2 * u2 - 2.0 * r * u2 * u3 + u3 * u3) / ((1.0 - r) * (1.0 + r));
    Ok(ScoreLimit {
        d_sigma: (q - 2.0) / sigma,
        d_alpha_scaled: 0.5 * (q - 2.0),
    })
}
