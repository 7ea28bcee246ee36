//! Iterated selection: how an occupation's gender share evolves when each
//! round keeps only the true positives of a classifier whose TPR gap depends
//! linearly on that share.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when checking that a TPR lies in `(0, 1]`.
const TPR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRegression {
    pub slope: f64,
    pub intercept: f64,
    pub rss: f64,
    pub n: usize,
}

impl GapRegression {
    pub fn new(slope: f64, intercept: f64) -> Self {
        Self {
            slope,
            intercept,
            rss: 0.0,
            n: 0,
        }
    }

    pub fn gap_at(&self, pi: f64) -> f64 {
        self.slope * pi + self.intercept
    }
}

/// Ordinary least squares of gap on share over `(pi, gap)` points.
pub fn fit_gap_regression(points: &[(f64, f64)]) -> Result<GapRegression> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            found: points.len(),
        });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateVariance("all shares are equal"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = points
        .iter()
        .map(|p| {
            let r = p.1 - (slope * p.0 + intercept);
            r * r
        })
        .sum();
    Ok(GapRegression {
        slope,
        intercept,
        rss,
        n: points.len(),
    })
}

/// Next-round share given `TPR_g` and the gap `TPR_g - TPR_~g`.
pub fn step(pi: f64, tpr_g: f64, gap: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::InvalidArgument(format!("share {pi} is outside [0, 1]")));
    }
    let tpr_other = tpr_g - gap;
    let ok = |t: f64| t > 0.0 && t <= 1.0 + TPR_EPS;
    if !ok(tpr_g) || !ok(tpr_other) {
        return Err(Error::InfeasibleTpr { tpr: tpr_g, gap });
    }
    if gap == 0.0 {
        return Ok(pi);
    }
    let num = pi * tpr_g.min(1.0);
    Ok(num / (num + (1.0 - pi) * tpr_other.min(1.0)))
}

/// `n` evenly spaced values on `[lo, hi]`.
pub fn tpr_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// 21 values on `[0.5, 1.0]`.
pub fn default_tpr_grid() -> Vec<f64> {
    tpr_grid(0.5, 1.0, 21)
}

/// Grid values of `TPR_g` for which both rates are in `(0, 1]`.
pub fn feasible(grid: &[f64], gap: f64) -> Vec<f64> {
    grid.iter()
        .copied()
        .filter(|&t| step(0.5, t, gap).is_ok())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    pub central: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub pi0: f64,
    /// `points[0]` is the initial share; one more point per round.
    pub points: Vec<TracePoint>,
}

impl SimulationTrace {
    pub fn central(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.central).collect()
    }
}

/// Iterates the share for `horizon` rounds. The central trajectory uses the
/// middle feasible grid value of `TPR_g` each round. The band is the envelope
/// of every feasible grid value applied to the band edges and the centre.
pub fn run(pi0: f64, horizon: usize, reg: &GapRegression, grid: &[f64]) -> Result<SimulationTrace> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("TPR grid is empty".into()));
    }
    if !(0.0..=1.0).contains(&pi0) {
        return Err(Error::InvalidArgument(format!("initial share {pi0} is outside [0, 1]")));
    }
    let mut points = vec![TracePoint {
        t: 0,
        central: pi0,
        band_lo: pi0,
        band_hi: pi0,
    }];
    for t in 0..horizon {
        let cur = points[t];
        let mut next = TracePoint {
            t: t + 1,
            central: f64::NAN,
            band_lo: f64::INFINITY,
            band_hi: f64::NEG_INFINITY,
        };
        for (which, pi) in [(0, cur.central), (1, cur.band_lo), (2, cur.band_hi)] {
            let gap = reg.gap_at(pi);
            let ok = feasible(grid, gap);
            if ok.is_empty() {
                return Err(Error::EmptyFeasibleGrid(t));
            }
            for &tpr in &ok {
                let v = step(pi, tpr, gap)?.clamp(0.0, 1.0);
                next.band_lo = next.band_lo.min(v);
                next.band_hi = next.band_hi.max(v);
            }
            if which == 0 {
                let mid = ok[(ok.len() - 1) / 2];
                next.central = step(pi, mid, gap)?.clamp(0.0, 1.0);
            }
        }
        points.push(next);
    }
    Ok(SimulationTrace { pi0, points })
}

pub fn run_many(
    pi0s: &[f64],
    horizon: usize,
    reg: &GapRegression,
    grid: &[f64],
) -> Result<Vec<SimulationTrace>> {
    pi0s.iter().map(|&p| run(p, horizon, reg, grid)).collect()
}
