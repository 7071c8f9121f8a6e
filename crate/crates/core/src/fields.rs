//! Fractional Brownian fields and Brown-Resnick max-stable fields.
//!
//! The Brownian field is anchored at the origin, W(0) = 0, and sampled
//! through one dense Cholesky factor per set of evaluation points. The
//! max-stable field is built from the truncated spectral series
//! max_i U_i exp(W_i - gamma), keeping every retained row so that cells and
//! local times can be read off afterwards.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch};
use faer::linalg::matmul::triangular::{matmul, BlockStructure};
use faer::{Accum, Mat, Par};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::FieldError;
use crate::rng::StreamRng;

pub type Point = [f64; 2];

#[inline]
pub fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

#[inline]
pub fn dist(p: Point, q: Point) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Scale and roughness of the variogram sigma^2 |h|^alpha / 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    sigma: f64,
    alpha: f64,
}

impl FieldParams {
    pub fn new(sigma: f64, alpha: f64) -> Result<Self, FieldError> {
        if !(sigma > 0.0 && sigma.is_finite()) || !(alpha > 0.0 && alpha < 2.0) {
            return Err(FieldError::InvalidParams(format!(
                "sigma={sigma}, alpha={alpha}"
            )));
        }
        Ok(Self { sigma, alpha })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// gamma(h) = sigma^2 |h|^alpha / 2.
    #[inline]
    pub fn variogram(&self, h: f64) -> f64 {
        0.5 * self.sigma * self.sigma * h.powf(self.alpha)
    }

    /// Standard deviation of an increment over distance `d`: sigma d^(alpha/2).
    #[inline]
    pub fn increment_scale(&self, d: f64) -> f64 {
        self.sigma * d.powf(0.5 * self.alpha)
    }
}

/// Distinct, finite evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoints {
    points: Vec<Point>,
}

impl EvalPoints {
    pub fn new(points: Vec<Point>) -> Result<Self, FieldError> {
        if let Some(i) = points
            .iter()
            .position(|p| !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(FieldError::InvalidParams(format!(
                "non-finite evaluation point {i}"
            )));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).expect("finite"));
        if let Some(w) = order.windows(2).find(|w| points[w[0]] == points[w[1]]) {
            return Err(FieldError::DuplicatePoint(w[0].max(w[1])));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }
}

/// Covariance of the anchored Brownian field.
pub fn fbm_cov(params: &FieldParams, x: Point, y: Point) -> f64 {
    let a = params.alpha;
    0.5 * params.sigma * params.sigma * (norm(x).powf(a) + norm(y).powf(a) - dist(x, y).powf(a))
}

/// Lower Cholesky factor of the covariance at the non-origin points.
///
/// A point at the origin has W = 0 exactly and is kept out of the factor.
#[derive(Debug)]
pub struct CovarianceFactor {
    n: usize,
    /// Row of the factor for each evaluation point, `None` at the origin.
    slot: Vec<Option<usize>>,
    l: Mat<f64>,
    jitter: f64,
}

impl CovarianceFactor {
    /// Number of evaluation points.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Dimension of the factored block.
    pub fn rank(&self) -> usize {
        self.l.nrows()
    }

    /// Entry (i, j) of the factor in evaluation-point indexing.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match (self.slot[i], self.slot[j]) {
            (Some(a), Some(b)) if b <= a => self.l[(a, b)],
            _ => 0.0,
        }
    }

    /// Draws `count` independent fields, one per column of the result,
    /// indexed by evaluation point. Column c uses normals c*rank..(c+1)*rank
    /// of the stream, so the output does not depend on how draws are batched.
    fn sample_columns<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Mat<f64> {
        let r = self.rank();
        let mut g = Mat::<f64>::zeros(r, count);
        for c in 0..count {
            for i in 0..r {
                g[(i, c)] = StandardNormal.sample(rng);
            }
        }
        let mut w = Mat::<f64>::zeros(r, count);
        if r > 0 {
            matmul(
                w.as_mut(),
                BlockStructure::Rectangular,
                Accum::Replace,
                self.l.as_ref(),
                BlockStructure::TriangularLower,
                g.as_ref(),
                BlockStructure::Rectangular,
                1.0,
                Par::Seq,
            );
        }
        if r == self.n {
            return w;
        }
        Mat::from_fn(self.n, count, |p, c| {
            self.slot[p].map_or(0.0, |a| w[(a, c)])
        })
    }
}

fn fill_covariance(m: &mut Mat<f64>, pts: &[Point], params: &FieldParams, jitter: f64) {
    let a = params.alpha;
    let half_s2 = 0.5 * params.sigma * params.sigma;
    let npow: Vec<f64> = pts.iter().map(|&p| norm(p).powf(a)).collect();
    let n = pts.len();
    for j in 0..n {
        let pj = pts[j];
        for i in j..n {
            let pi = pts[i];
            let dx = pi[0] - pj[0];
            let dy = pi[1] - pj[1];
            let dpow = (dx * dx + dy * dy).powf(0.5 * a);
            m[(i, j)] = half_s2 * (npow[i] + npow[j] - dpow);
        }
        m[(j, j)] += jitter;
    }
}

/// Factors the covariance, escalating jitter from 0 through
/// 1e-12 to 1e-8 (relative to the largest variance) until it succeeds.
pub fn build_factor(
    points: &EvalPoints,
    params: &FieldParams,
) -> Result<CovarianceFactor, FieldError> {
    let mut slot = Vec::with_capacity(points.len());
    let mut active = Vec::new();
    for &p in points.points() {
        if p == [0.0, 0.0] {
            slot.push(None);
        } else {
            slot.push(Some(active.len()));
            active.push(p);
        }
    }
    let r = active.len();
    let max_var = active
        .iter()
        .map(|&p| params.sigma * params.sigma * norm(p).powf(params.alpha))
        .fold(0.0, f64::max);
    let jitters = std::iter::once(0.0).chain((0..=4).map(|e| max_var * 1e-12 * 10f64.powi(e)));
    let mut l = Mat::<f64>::zeros(r, r);
    let mut buf = MemBuffer::new(cholesky_in_place_scratch::<f64>(
        r,
        Par::Seq,
        Default::default(),
    ));
    let mut last_pivot = 0;
    let mut last_jitter = 0.0;
    for jitter in jitters {
        fill_covariance(&mut l, &active, params, jitter);
        match cholesky_in_place(
            l.as_mut(),
            Default::default(),
            Par::Seq,
            MemStack::new(&mut buf),
            Default::default(),
        ) {
            Ok(_) => {
                for j in 1..r {
                    for i in 0..j {
                        l[(i, j)] = 0.0;
                    }
                }
                return Ok(CovarianceFactor {
                    n: points.len(),
                    slot,
                    l,
                    jitter,
                });
            }
            Err(e) => {
                let faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index } = e;
                last_pivot = index;
                last_jitter = jitter;
            }
        }
    }
    Err(FieldError::NotPositiveDefinite {
        jitter: last_jitter,
        pivot: last_pivot,
    })
}

/// One draw of the Brownian field at the factor's evaluation points.
pub fn sample_fbm<R: Rng + ?Sized>(factor: &CovarianceFactor, rng: &mut R) -> Vec<f64> {
    let w = factor.sample_columns(rng, 1);
    (0..factor.n).map(|p| w[(p, 0)]).collect()
}

/// Per-point drift gamma(x) = sigma^2 |x|^alpha / 2.
pub fn gamma_values(points: &EvalPoints, params: &FieldParams) -> Vec<f64> {
    points
        .points()
        .iter()
        .map(|&p| params.variogram(norm(p)))
        .collect()
}

const PILOT_BATCH: usize = 64;

/// Empirical (1 - delta) quantile of max_p exp(W(p) - gamma(p)).
/// When delta is below 1/pilot_reps this is the pilot maximum.
pub fn sup_y_quantile_with<R: Rng + ?Sized>(
    factor: &CovarianceFactor,
    gamma: &[f64],
    delta: f64,
    pilot_reps: usize,
    rng: &mut R,
) -> Result<f64, FieldError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(FieldError::InvalidTruncation(format!("delta={delta}")));
    }
    if pilot_reps < 1000 {
        return Err(FieldError::InvalidTruncation(format!(
            "pilot_reps={pilot_reps} < 1000"
        )));
    }
    let mut maxima = Vec::with_capacity(pilot_reps);
    while maxima.len() < pilot_reps {
        let count = PILOT_BATCH.min(pilot_reps - maxima.len());
        let w = factor.sample_columns(rng, count);
        for c in 0..count {
            let m = (0..factor.n)
                .map(|p| w[(p, c)] - gamma[p])
                .fold(f64::NEG_INFINITY, f64::max);
            maxima.push(m);
        }
    }
    maxima.sort_by(f64::total_cmp);
    let rank = ((1.0 - delta) * pilot_reps as f64).ceil() as usize;
    Ok(maxima[rank.clamp(1, pilot_reps) - 1].exp())
}

/// Builds the factor for `points` and returns the pilot quantile.
pub fn sup_y_quantile<R: Rng + ?Sized>(
    points: &EvalPoints,
    params: &FieldParams,
    delta: f64,
    pilot_reps: usize,
    rng: &mut R,
) -> Result<f64, FieldError> {
    let factor = build_factor(points, params)?;
    let gamma = gamma_values(points, params);
    sup_y_quantile_with(&factor, &gamma, delta, pilot_reps, rng)
}

/// Retained spectral functions Z_i = log U_i + W_i - gamma, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRecord {
    n: usize,
    z_values: Vec<f64>,
    log_u: Vec<f64>,
    argmax: Vec<u32>,
    gamma_values: Vec<f64>,
    truncation_delta: f64,
}

impl SpectralRecord {
    /// Number of retained functions.
    pub fn k(&self) -> usize {
        self.log_u.len()
    }

    /// Number of evaluation points.
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn z(&self, i: usize, p: usize) -> f64 {
        self.z_values[i * self.n + p]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z_values[i * self.n..(i + 1) * self.n]
    }

    pub fn log_u(&self, i: usize) -> f64 {
        self.log_u[i]
    }

    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }

    pub fn gamma_values(&self) -> &[f64] {
        &self.gamma_values
    }

    pub fn truncation_delta(&self) -> f64 {
        self.truncation_delta
    }

    /// Brownian field of function i at point p: Z_i - log U_i + gamma.
    #[inline]
    pub fn w(&self, i: usize, p: usize) -> f64 {
        self.z(i, p) - self.log_u[i] + self.gamma_values[p]
    }

    /// The two largest functions at point p, largest first.
    pub fn top_two(&self, p: usize) -> Option<(usize, usize)> {
        if self.k() < 2 {
            return None;
        }
        let (mut first, mut second) = (0usize, 1usize);
        if self.z(1, p) > self.z(0, p) {
            first = 1;
            second = 0;
        }
        for i in 2..self.k() {
            let z = self.z(i, p);
            if z > self.z(first, p) {
                second = first;
                first = i;
            } else if z > self.z(second, p) {
                second = i;
            }
        }
        Some((first, second))
    }

    /// Builds a record from explicit rows; argmax is the first maximising row.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        log_u: Vec<f64>,
        gamma_values: Vec<f64>,
        truncation_delta: f64,
    ) -> Result<Self, FieldError> {
        let n = gamma_values.len();
        if rows.is_empty() || rows.len() != log_u.len() || rows.iter().any(|r| r.len() != n) {
            return Err(FieldError::InvalidParams(
                "inconsistent spectral rows".into(),
            ));
        }
        let z_values: Vec<f64> = rows.into_iter().flatten().collect();
        let mut rec = Self {
            n,
            z_values,
            log_u,
            argmax: Vec::new(),
            gamma_values,
            truncation_delta,
        };
        rec.argmax = rec.compute_argmax();
        Ok(rec)
    }

    fn compute_argmax(&self) -> Vec<u32> {
        (0..self.n)
            .map(|p| {
                let mut best = 0;
                for i in 1..self.k() {
                    if self.z(i, p) > self.z(best, p) {
                        best = i;
                    }
                }
                best as u32
            })
            .collect()
    }
}

/// Max-stable values with the spectral record that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    eta: Vec<f64>,
    record: SpectralRecord,
}

impl FieldSample {
    pub fn from_record(record: SpectralRecord) -> Self {
        let eta = (0..record.n)
            .map(|p| record.z(record.argmax[p] as usize, p).exp())
            .collect();
        Self { eta, record }
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn record(&self) -> &SpectralRecord {
        &self.record
    }

    /// Checks eta = exp(max_i Z_i) and the argmax labels exactly.
    pub fn is_consistent(&self) -> bool {
        let r = &self.record;
        (0..r.n).all(|p| {
            let a = r.argmax[p] as usize;
            let top = r.z(a, p);
            (0..r.k()).all(|i| r.z(i, p) <= top) && self.eta[p] == top.exp() && self.eta[p] > 0.0
        })
    }
}

pub const DEFAULT_DELTA: f64 = 1e-5;
pub const DEFAULT_PILOT_REPS: usize = 1000;
pub const DEFAULT_CAP: usize = 10_000;

/// Reusable Brown-Resnick simulator for one set of evaluation points.
#[derive(Debug)]
pub struct BrownResnickSampler {
    factor: CovarianceFactor,
    gamma: Vec<f64>,
    tau: f64,
    delta: f64,
    cap: usize,
}

impl BrownResnickSampler {
    /// Factors the covariance and estimates the stopping bound from `pilot_rng`.
    pub fn new<R: Rng + ?Sized>(
        points: &EvalPoints,
        params: &FieldParams,
        delta: f64,
        pilot_reps: usize,
        cap: usize,
        pilot_rng: &mut R,
    ) -> Result<Self, FieldError> {
        let factor = build_factor(points, params)?;
        let gamma = gamma_values(points, params);
        let tau = sup_y_quantile_with(&factor, &gamma, delta, pilot_reps, pilot_rng)?;
        Ok(Self {
            factor,
            gamma,
            tau,
            delta,
            cap,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn factor(&self) -> &CovarianceFactor {
        &self.factor
    }

    /// Runs the truncated series. Arrival times and Gaussian draws come from
    /// separate streams so the number of normals consumed never shifts the
    /// arrival sequence.
    pub fn sample<R: Rng + ?Sized, S: Rng + ?Sized>(
        &self,
        arrivals: &mut R,
        normals: &mut S,
    ) -> Result<FieldSample, FieldError> {
        let n = self.factor.n;
        let log_tau = self.tau.ln();
        let mut running_max = vec![f64::NEG_INFINITY; n];
        let mut z_values: Vec<f64> = Vec::new();
        let mut log_u: Vec<f64> = Vec::new();
        let mut arrival: f64 = Exp1.sample(arrivals);
        let mut batch = Mat::<f64>::zeros(0, 0);
        let mut next_col = 0;
        let mut batch_size = 8usize;
        loop {
            if next_col == batch.ncols() {
                batch = self.factor.sample_columns(normals, batch_size);
                next_col = 0;
                batch_size = (batch_size * 2).min(64);
            }
            let lu = -arrival.ln();
            let col = batch.col(next_col);
            next_col += 1;
            for p in 0..n {
                let z = lu + col[p] - self.gamma[p];
                z_values.push(z);
                if z > running_max[p] {
                    running_max[p] = z;
                }
            }
            log_u.push(lu);
            let gap: f64 = Exp1.sample(arrivals);
            arrival += gap;
            let min_log_eta = running_max.iter().copied().fold(f64::INFINITY, f64::min);
            if -arrival.ln() + log_tau < min_log_eta {
                break;
            }
            if log_u.len() >= self.cap {
                return Err(FieldError::CapReached { cap: self.cap });
            }
        }
        let mut record = SpectralRecord {
            n,
            z_values,
            log_u,
            argmax: Vec::new(),
            gamma_values: self.gamma.clone(),
            truncation_delta: self.delta,
        };
        record.argmax = record.compute_argmax();
        Ok(FieldSample::from_record(record))
    }
}

/// One Brown-Resnick draw with default pilot size and cap; the three
/// internal streams are seeded from `rng`.
pub fn sample_brown_resnick<R: Rng + ?Sized>(
    points: &EvalPoints,
    params: &FieldParams,
    delta: f64,
    rng: &mut R,
) -> Result<FieldSample, FieldError> {
    let mut pilot = StreamRng::seed_from_u64(rng.random());
    let mut arrivals = StreamRng::seed_from_u64(rng.random());
    let mut normals = StreamRng::seed_from_u64(rng.random());
    let sampler = BrownResnickSampler::new(
        points,
        params,
        delta,
        DEFAULT_PILOT_REPS,
        DEFAULT_CAP,
        &mut pilot,
    )?;
    sampler.sample(&mut arrivals, &mut normals)
}
