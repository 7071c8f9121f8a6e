//! Replicated simulation studies: one observation design per intensity,
//! independent field replicates on it, and the summaries used by the rate
//! and local-time diagnostics.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    cell_partition, default_bandwidth, local_time_at_zero, unit_grid, IncrementSample,
};
use crate::error::Error;
use crate::estimation::{mcle_alpha, mcle_sigma, CompactInterval, Objective};
use crate::fields::{BrownResnickSampler, EvalPoints, FieldParams, FieldSample, Point};
use crate::geometry::{
    default_margin, delaunay, edge_set, sample_poisson, triangle_set, EdgeSet, TriangleSet,
};
use crate::rng::{stream, Purpose};
use crate::stats::{median, ols, pearson, LineFit};

/// Replicate ids at or above this value are reserved for design streams.
pub const DESIGN_STREAM_BASE: u64 = 1 << 48;

fn default_delta() -> f64 {
    crate::fields::DEFAULT_DELTA
}
fn default_pilot_reps() -> usize {
    crate::fields::DEFAULT_PILOT_REPS
}
fn default_cap() -> usize {
    crate::fields::DEFAULT_CAP
}
fn default_min_angle() -> f64 {
    crate::geometry::DEFAULT_MIN_ANGLE
}
fn default_grid() -> usize {
    64
}
fn yes() -> bool {
    true
}

/// Settings shared by every replicate of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Poisson intensities N, ascending.
    pub intensities: Vec<f64>,
    pub replicates: u64,
    pub sigma0: f64,
    pub alpha0: f64,
    #[serde(default = "CompactInterval::default_sigma")]
    pub s_sigma: CompactInterval,
    #[serde(default = "CompactInterval::default_alpha")]
    pub s_alpha: CompactInterval,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_pilot_reps")]
    pub pilot_reps: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Local-time grid resolution; 0 disables the grid.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Kernel variance; the default is sigma0^2 (1/grid)^alpha0.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default = "default_min_angle")]
    pub min_angle: f64,
    /// Fit the pairwise estimators.
    #[serde(default = "yes")]
    pub pairwise: bool,
    /// Fit the triplewise estimators.
    #[serde(default)]
    pub triplewise: bool,
    /// Draw a fresh site pattern for every replicate instead of one per
    /// intensity.
    #[serde(default)]
    pub resample_sites: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<FieldParams, Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.intensities.is_empty() {
            return bad("intensities must be non-empty");
        }
        if self
            .intensities
            .iter()
            .any(|n| !(*n >= 1.0 && n.is_finite()))
        {
            return bad("intensities must be finite and at least 1");
        }
        if self.intensities.windows(2).any(|w| w[0] >= w[1]) {
            return bad("intensities must be strictly ascending");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if self.pilot_reps == 0 || self.cap == 0 {
            return bad("pilot_reps and cap must be at least 1");
        }
        if self.grid != 0 && self.grid < crate::asymptotics::MIN_GRID {
            return bad("grid must be 0 or at least 32");
        }
        if let Some(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return bad("bandwidth must be positive");
            }
        }
        if !(self.alpha0 > 0.0 && self.alpha0 < 1.0) {
            return bad("alpha0 must lie in (0, 1)");
        }
        if !self.s_sigma.contains(self.sigma0) || self.s_sigma.lo() <= 0.0 {
            return bad("s_sigma must be positive and contain sigma0");
        }
        if !self.s_alpha.contains(self.alpha0)
            || self.s_alpha.lo() <= 0.0
            || self.s_alpha.hi() >= 1.0
        {
            return bad("s_alpha must lie in (0, 1) and contain alpha0");
        }
        FieldParams::new(self.sigma0, self.alpha0).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Sites, their Delaunay structure, the evaluation points, and a factored
/// field sampler, all for one intensity.
#[derive(Debug)]
pub struct Design {
    pub intensity: f64,
    /// Observed sites first, then grid points.
    pub points: Vec<Point>,
    /// Edges and triangles indexed into `points`.
    pub edges: EdgeSet,
    pub triangles: TriangleSet,
    pub grid: usize,
    pub grid_index: Vec<usize>,
    pub sampler: BrownResnickSampler,
}

/// Stream id of the design for intensity `n` (and replicate, when sites are
/// redrawn per replicate).
fn design_stream(n: f64, replicate: Option<u64>) -> u64 {
    let base = DESIGN_STREAM_BASE + ((n.round() as u64) << 20);
    base + replicate.map_or(0, |r| r + 1)
}

impl Design {
    pub fn build(
        intensity: f64,
        params: &FieldParams,
        cfg: &ExperimentConfig,
        seed: u64,
        replicate: Option<u64>,
    ) -> Result<Self, Error> {
        let id = design_stream(intensity, replicate);
        let pattern = sample_poisson(
            intensity,
            default_margin(intensity),
            &mut stream(seed, id, Purpose::Sites),
        )?;
        let tri = delaunay(&pattern.points)?;
        let raw_edges = edge_set(&tri);
        let raw_triangles = triangle_set(&tri, cfg.min_angle);

        let mut slot = vec![usize::MAX; pattern.points.len()];
        let mut points = Vec::new();
        let mut observe = |v: usize, points: &mut Vec<Point>| {
            if slot[v] == usize::MAX {
                slot[v] = points.len();
                points.push(pattern.points[v]);
            }
            slot[v]
        };
        let mut pairs = Vec::with_capacity(raw_edges.len());
        for &(a, b) in &raw_edges.pairs {
            pairs.push((observe(a, &mut points), observe(b, &mut points)));
        }
        let mut triples = Vec::with_capacity(raw_triangles.len());
        for t in &raw_triangles.triples {
            triples.push(t.map(|v| observe(v, &mut points)));
        }
        let edges = EdgeSet {
            pairs,
            lengths: raw_edges.lengths,
        };
        let triangles = TriangleSet {
            triples,
            sides: raw_triangles.sides,
            excluded: raw_triangles.excluded,
        };

        let grid_index: Vec<usize> = if cfg.grid > 0 {
            let start = points.len();
            points.extend(unit_grid(cfg.grid));
            (start..points.len()).collect()
        } else {
            Vec::new()
        };
        let eval = EvalPoints::new(points)?;
        let sampler = BrownResnickSampler::new(
            &eval,
            params,
            cfg.delta,
            cfg.pilot_reps,
            cfg.cap,
            &mut stream(seed, id, Purpose::Pilot),
        )?;
        Ok(Self {
            intensity,
            points: eval.points().to_vec(),
            edges,
            triangles,
            grid: cfg.grid,
            grid_index,
            sampler,
        })
    }

    /// Field replicate `replicate`; depends only on the seed and the id.
    pub fn sample(&self, seed: u64, replicate: u64) -> Result<FieldSample, Error> {
        let mut arrivals = stream(seed, replicate, Purpose::Arrivals);
        let mut normals = stream(seed, replicate, Purpose::Normals);
        Ok(self.sampler.sample(&mut arrivals, &mut normals)?)
    }
}

/// One replicate at one intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub replicate: u64,
    pub intensity: f64,
    pub sigma2_pair: Option<f64>,
    pub sigma2_triple: Option<f64>,
    pub alpha_pair: Option<f64>,
    pub alpha_triple: Option<f64>,
    pub v2: Option<f64>,
    pub v3: Option<f64>,
    pub local_time: Option<f64>,
    pub edges: usize,
    pub triangles: usize,
    pub retained: usize,
    /// Estimators whose maximiser sits on the search boundary.
    pub boundary_hits: u32,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl ResultRow {
    fn failed(replicate: u64, design: &Design, err: &Error, started: Instant) -> Self {
        Self {
            replicate,
            intensity: design.intensity,
            sigma2_pair: None,
            sigma2_triple: None,
            alpha_pair: None,
            alpha_triple: None,
            v2: None,
            v3: None,
            local_time: None,
            edges: design.edges.len(),
            triangles: design.triangles.len(),
            retained: 0,
            boundary_hits: 0,
            wall_time_s: started.elapsed().as_secs_f64(),
            error: Some(err.to_string()),
        }
    }
}

/// Simulates one replicate on `design` and computes every enabled summary.
/// Failures are returned as rows carrying the error message.
pub fn run_replicate(
    design: &Design,
    cfg: &ExperimentConfig,
    params: &FieldParams,
    seed: u64,
    replicate: u64,
) -> ResultRow {
    let started = Instant::now();
    match replicate_inner(design, cfg, params, seed, replicate, started) {
        Ok(row) => row,
        Err(e) => ResultRow::failed(replicate, design, &e, started),
    }
}

fn replicate_inner(
    design: &Design,
    cfg: &ExperimentConfig,
    params: &FieldParams,
    seed: u64,
    replicate: u64,
    started: Instant,
) -> Result<ResultRow, Error> {
    let sample = design.sample(seed, replicate)?;
    let eta = sample.eta();
    let inc = IncrementSample::new(eta, &design.edges, &design.triangles, params)?;
    let v2 = inc.v2().ok();
    let v3 = inc.v3().ok();
    let local_time = if design.grid > 0 {
        let part = cell_partition(sample.record(), &design.grid_index, design.grid)?;
        let bw = cfg
            .bandwidth
            .unwrap_or_else(|| default_bandwidth(params, design.grid));
        Some(local_time_at_zero(sample.record(), &part, bw)?.total)
    } else {
        None
    };
    let mut boundary_hits = 0;
    let mut fit = |objective: Objective<'_>| -> Result<(f64, f64), Error> {
        let s = mcle_sigma(objective, eta, params.alpha(), cfg.s_sigma)?;
        let a = mcle_alpha(objective, eta, params.sigma(), cfg.s_alpha)?;
        boundary_hits += s.boundary_hit as u32 + a.boundary_hit as u32;
        Ok((s.estimate * s.estimate, a.estimate))
    };
    let pair = if cfg.pairwise {
        Some(fit(Objective::Pairwise(&design.edges))?)
    } else {
        None
    };
    let triple = if cfg.triplewise {
        Some(fit(Objective::Triplewise(&design.triangles))?)
    } else {
        None
    };
    Ok(ResultRow {
        replicate,
        intensity: design.intensity,
        sigma2_pair: pair.map(|p| p.0),
        sigma2_triple: triple.map(|p| p.0),
        alpha_pair: pair.map(|p| p.1),
        alpha_triple: triple.map(|p| p.1),
        v2,
        v3,
        local_time,
        edges: design.edges.len(),
        triangles: design.triangles.len(),
        retained: sample.record().k(),
        boundary_hits,
        wall_time_s: started.elapsed().as_secs_f64(),
        error: None,
    })
}

/// Runs replicates `ids` for one intensity across `workers` threads and
/// hands finished rows to `sink` in id order.
pub fn run_intensity(
    intensity: f64,
    cfg: &ExperimentConfig,
    seed: u64,
    ids: &[u64],
    workers: usize,
    mut sink: impl FnMut(ResultRow) -> Result<(), Error>,
) -> Result<(), Error> {
    let params = cfg.validate()?;
    if ids.is_empty() {
        return Ok(());
    }
    let workers = workers.max(1);
    if cfg.resample_sites {
        for &id in ids {
            let design = Design::build(intensity, &params, cfg, seed, Some(id))?;
            sink(run_replicate(&design, cfg, &params, seed, id))?;
        }
        return Ok(());
    }
    let design = Design::build(intensity, &params, cfg, seed, None)?;
    for chunk in ids.chunks(workers) {
        let rows: Vec<ResultRow> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&id| {
                    let design = &design;
                    let params = &params;
                    s.spawn(move || run_replicate(design, cfg, params, seed, id))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("replicate worker panicked"))
                .collect()
        });
        for row in rows {
            sink(row)?;
        }
    }
    Ok(())
}

/// Theorem-1 style summary over intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeReport {
    pub per_intensity: Vec<LocalTimeLevel>,
    /// Slope of log median |V2| against log N.
    pub v2_growth: LineFit,
    pub v3_growth: LineFit,
    /// Pooled through-origin slopes of the scaled statistics on the local time.
    pub c_v2: f64,
    pub c_v3: f64,
    /// Ordinary least-squares fit of scaled V2 on local time, with intercept.
    pub v2_on_local_time: LineFit,
    /// corr(V2, V3) at the largest intensity.
    pub corr_v2_v3_largest: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeLevel {
    pub intensity: f64,
    pub replicates: usize,
    pub median_abs_v2: f64,
    pub median_abs_v3: f64,
    pub fraction_v2_negative: f64,
    /// R^2 of scaled V2 on local time within this intensity.
    pub r_squared: f64,
    /// Standard deviation of scaled V2 / scaled V3.
    pub ratio_dispersion: f64,
    pub corr_v2_v3: f64,
}

/// Multiplier applied to V2 before comparing with the local time.
pub fn v2_scale(n: f64, alpha: f64) -> f64 {
    3f64.sqrt() / 3.0 * n.powf(-(2.0 - alpha) / 4.0)
}

pub fn v3_scale(n: f64, alpha: f64) -> f64 {
    2f64.sqrt() / 2.0 * n.powf(-(2.0 - alpha) / 4.0)
}

fn by_intensity(rows: &[ResultRow]) -> Vec<(f64, Vec<&ResultRow>)> {
    let mut levels: Vec<(f64, Vec<&ResultRow>)> = Vec::new();
    for r in rows.iter().filter(|r| r.error.is_none()) {
        match levels.iter_mut().find(|(n, _)| *n == r.intensity) {
            Some((_, v)) => v.push(r),
            None => levels.push((r.intensity, vec![r])),
        }
    }
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));
    levels
}

pub fn local_time_report(rows: &[ResultRow], alpha0: f64) -> Result<LocalTimeReport, Error> {
    let levels = by_intensity(rows);
    if levels.len() < 2 {
        return Err(Error::Config("need at least two intensities".into()));
    }
    let mut per_intensity = Vec::new();
    let (mut pooled_x, mut pooled_y2, mut pooled_y3) = (Vec::new(), Vec::new(), Vec::new());
    for (n, rs) in &levels {
        let complete: Vec<(f64, f64, f64)> = rs
            .iter()
            .filter_map(|r| Some((r.v2?, r.v3?, r.local_time?)))
            .collect();
        if complete.len() < 3 {
            return Err(Error::Config(format!(
                "too few complete replicates at N = {n}"
            )));
        }
        let v2: Vec<f64> = complete.iter().map(|c| c.0).collect();
        let v3: Vec<f64> = complete.iter().map(|c| c.1).collect();
        let lt: Vec<f64> = complete.iter().map(|c| c.2).collect();
        let s2: Vec<f64> = v2.iter().map(|v| v * v2_scale(*n, alpha0)).collect();
        let s3: Vec<f64> = v3.iter().map(|v| v * v3_scale(*n, alpha0)).collect();
        let ratio: Vec<f64> = s2.iter().zip(&s3).map(|(a, b)| a / b).collect();
        per_intensity.push(LocalTimeLevel {
            intensity: *n,
            replicates: complete.len(),
            median_abs_v2: median(&v2.iter().map(|v| v.abs()).collect::<Vec<_>>()),
            median_abs_v3: median(&v3.iter().map(|v| v.abs()).collect::<Vec<_>>()),
            fraction_v2_negative: s2.iter().filter(|v| **v < 0.0).count() as f64 / s2.len() as f64,
            r_squared: ols(&lt, &s2).r_squared,
            ratio_dispersion: crate::stats::std_dev(&ratio),
            corr_v2_v3: pearson(&v2, &v3),
        });
        pooled_x.extend(lt);
        pooled_y2.extend(s2);
        pooled_y3.extend(s3);
    }
    let log_n: Vec<f64> = per_intensity.iter().map(|l| l.intensity.ln()).collect();
    let through_origin = |x: &[f64], y: &[f64]| {
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        sxy / sxx
    };
    Ok(LocalTimeReport {
        v2_growth: ols(
            &log_n,
            &per_intensity
                .iter()
                .map(|l| l.median_abs_v2.ln())
                .collect::<Vec<_>>(),
        ),
        v3_growth: ols(
            &log_n,
            &per_intensity
                .iter()
                .map(|l| l.median_abs_v3.ln())
                .collect::<Vec<_>>(),
        ),
        c_v2: through_origin(&pooled_x, &pooled_y2),
        c_v3: through_origin(&pooled_x, &pooled_y3),
        v2_on_local_time: ols(&pooled_x, &pooled_y2),
        corr_v2_v3_largest: per_intensity.last().map_or(f64::NAN, |l| l.corr_v2_v3),
        per_intensity,
    })
}

/// Theorem-2 style summary of the pairwise estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub per_intensity: Vec<RateLevel>,
    /// Slope of log median |sigma2_hat - sigma0^2| against log N.
    pub sigma2_rate: LineFit,
    /// Slope of log median (log N |alpha_hat - alpha0|) against log N.
    pub alpha_rate: LineFit,
    /// Share of replicates (largest N) whose two errors have opposite signs.
    pub opposite_sign_fraction_largest: f64,
    /// Same share over every replicate of every intensity.
    pub opposite_sign_fraction_pooled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateLevel {
    pub intensity: f64,
    pub replicates: usize,
    pub median_abs_sigma2_error: f64,
    pub median_scaled_abs_alpha_error: f64,
    pub opposite_sign_fraction: f64,
    /// Share of replicates with |sigma2_hat - sigma0^2| > 0.2.
    pub fraction_sigma2_far: f64,
    pub boundary_hits: u32,
}

pub fn rate_report(rows: &[ResultRow], sigma0: f64, alpha0: f64) -> Result<RateReport, Error> {
    let levels = by_intensity(rows);
    if levels.len() < 2 {
        return Err(Error::Config("need at least two intensities".into()));
    }
    let s2 = sigma0 * sigma0;
    let mut per_intensity = Vec::new();
    let (mut opposite, mut total) = (0usize, 0usize);
    for (n, rs) in &levels {
        let pairs: Vec<(f64, f64)> = rs
            .iter()
            .filter_map(|r| Some((r.sigma2_pair? - s2, r.alpha_pair? - alpha0)))
            .collect();
        if pairs.len() < 3 {
            return Err(Error::Config(format!(
                "too few complete replicates at N = {n}"
            )));
        }
        opposite += pairs.iter().filter(|p| p.0 * p.1 < 0.0).count();
        total += pairs.len();
        let es: Vec<f64> = pairs.iter().map(|p| p.0.abs()).collect();
        let ea: Vec<f64> = pairs.iter().map(|p| n.ln() * p.1.abs()).collect();
        per_intensity.push(RateLevel {
            intensity: *n,
            replicates: pairs.len(),
            median_abs_sigma2_error: median(&es),
            median_scaled_abs_alpha_error: median(&ea),
            opposite_sign_fraction: pairs.iter().filter(|p| p.0 * p.1 < 0.0).count() as f64
                / pairs.len() as f64,
            fraction_sigma2_far: es.iter().filter(|e| **e > 0.2).count() as f64 / es.len() as f64,
            boundary_hits: rs.iter().map(|r| r.boundary_hits).sum(),
        });
    }
    let log_n: Vec<f64> = per_intensity.iter().map(|l| l.intensity.ln()).collect();
    Ok(RateReport {
        sigma2_rate: ols(
            &log_n,
            &per_intensity
                .iter()
                .map(|l| l.median_abs_sigma2_error.ln())
                .collect::<Vec<_>>(),
        ),
        alpha_rate: ols(
            &log_n,
            &per_intensity
                .iter()
                .map(|l| l.median_scaled_abs_alpha_error.ln())
                .collect::<Vec<_>>(),
        ),
        opposite_sign_fraction_largest: per_intensity
            .last()
            .map_or(f64::NAN, |l| l.opposite_sign_fraction),
        opposite_sign_fraction_pooled: opposite as f64 / total as f64,
        per_intensity,
    })
}
