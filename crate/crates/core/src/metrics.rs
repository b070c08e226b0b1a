//! Pareto-front quality metrics.

use std::fmt;

use crate::error::{Error, Result};
use crate::pareto::{dominates_unchecked, ParetoFrontSample};

/// Largest objective count handled by the exact hypervolume.
pub const MAX_HV_OBJECTIVES: usize = 9;

/// Reference point for hypervolume, dominated by every front under comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct HypervolumeConfig {
    pub reference_point: Vec<f64>,
}

impl HypervolumeConfig {
    pub fn new(reference_point: Vec<f64>) -> Result<Self> {
        let k = reference_point.len();
        if k == 0 || k > MAX_HV_OBJECTIVES {
            return Err(Error::Input(format!(
                "hypervolume supports 1..={MAX_HV_OBJECTIVES} objectives, got {k}"
            )));
        }
        if reference_point.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "reference point {reference_point:?} not finite"
            )));
        }
        Ok(Self { reference_point })
    }

    /// Componentwise minimum of `front` minus `margin`.
    pub fn from_front(front: &ParetoFrontSample, margin: f64) -> Result<Self> {
        if front.is_empty() {
            return Err(Error::Input("empty front".into()));
        }
        Self::new(
            front
                .per_objective_min()
                .iter()
                .map(|v| v - margin)
                .collect(),
        )
    }
}

/// Exact hypervolume of the region dominated by `points` and bounded below by
/// the reference point. Every point must strictly exceed the reference point.
pub fn hypervolume(points: &[Vec<f64>], config: &HypervolumeConfig) -> Result<f64> {
    let r = &config.reference_point;
    let mut shifted = Vec::with_capacity(points.len());
    for p in points {
        if p.len() != r.len() {
            return Err(Error::Input(format!(
                "point {p:?} has {} objectives, reference has {}",
                p.len(),
                r.len()
            )));
        }
        if !p.iter().zip(r).all(|(a, b)| a > b) {
            return Err(Error::Input(format!(
                "point {p:?} does not dominate reference point {r:?}"
            )));
        }
        shifted.push(p.iter().zip(r).map(|(a, b)| a - b).collect::<Vec<f64>>());
    }
    Ok(union_volume(shifted))
}

/// Hypervolume of a front sample.
pub fn front_hypervolume(front: &ParetoFrontSample, config: &HypervolumeConfig) -> Result<f64> {
    hypervolume(&front.points, config)
}

/// Hypervolume after dropping points that do not strictly exceed the reference
/// point. Returns 0 when nothing is left.
pub fn hypervolume_clipped(points: &[Vec<f64>], config: &HypervolumeConfig) -> Result<f64> {
    let r = &config.reference_point;
    let kept: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| p.len() == r.len() && p.iter().zip(r).all(|(a, b)| a > b))
        .cloned()
        .collect();
    hypervolume(&kept, config)
}

// Volume of the union of boxes [0, q] for positive vectors q.
fn union_volume(mut pts: Vec<Vec<f64>>) -> f64 {
    pts = nondominated(pts);
    match pts.first().map(Vec::len) {
        None => 0.0,
        Some(1) => pts.iter().map(|p| p[0]).fold(0.0, f64::max),
        Some(2) => sweep_2d(pts),
        Some(k) => {
            // Peeling in descending order of the last objective keeps limit sets small.
            pts.sort_by(|a, b| b[k - 1].total_cmp(&a[k - 1]));
            let mut total = 0.0;
            for i in 0..pts.len() {
                let incl: f64 = pts[i].iter().product();
                let limited: Vec<Vec<f64>> = pts[i + 1..]
                    .iter()
                    .map(|q| q.iter().zip(&pts[i]).map(|(a, b)| a.min(*b)).collect())
                    .collect();
                total += incl - union_volume(limited);
            }
            total
        }
    }
}

fn sweep_2d(mut pts: Vec<Vec<f64>>) -> f64 {
    pts.sort_by(|a, b| b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1])));
    let mut area = 0.0;
    let mut top = 0.0;
    for p in &pts {
        if p[1] > top {
            area += p[0] * (p[1] - top);
            top = p[1];
        }
    }
    area
}

fn nondominated(pts: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut pts = pts;
    pts.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| y.total_cmp(x))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    pts.dedup();
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(pts.len());
    for p in pts {
        if !kept.iter().any(|q| dominates_unchecked(q, &p)) {
            kept.push(p);
        }
    }
    kept
}

/// Mean over reference points of the minimum Euclidean distance to the
/// recovered front.
pub fn r2_distance(reference: &[Vec<f64>], recovered: &[Vec<f64>]) -> Result<f64> {
    if reference.is_empty() || recovered.is_empty() {
        return Err(Error::Input("r2 distance needs two nonempty fronts".into()));
    }
    let k = reference[0].len();
    if reference.iter().chain(recovered).any(|p| p.len() != k) {
        return Err(Error::Input(
            "fronts have mismatched objective counts".into(),
        ));
    }
    let total: f64 = reference
        .iter()
        .map(|a| {
            recovered
                .iter()
                .map(|b| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(total / reference.len() as f64)
}

/// Outcome of comparing the cost two methods need to reach a target PHV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostReduction {
    /// `1 - C_a / C_b`.
    Factor(f64),
    /// One of the series never reached the target.
    DidNotConverge { a_reached: bool, b_reached: bool },
}

impl CostReduction {
    pub fn percent(&self) -> Option<f64> {
        match self {
            CostReduction::Factor(g) => Some(100.0 * g),
            CostReduction::DidNotConverge { .. } => None,
        }
    }
}

impl fmt::Display for CostReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostReduction::Factor(g) => write!(f, "{:.1}%", 100.0 * g),
            CostReduction::DidNotConverge { .. } => write!(f, "did not converge"),
        }
    }
}

/// Earliest cost at which a `(cost, phv)` series reaches `target`.
pub fn cost_to_reach(series: &[(f64, f64)], target: f64) -> Option<f64> {
    series.iter().find(|(_, v)| *v >= target).map(|(c, _)| *c)
}

/// Cost reduction of series `a` relative to series `b` at `target`.
pub fn cost_reduction(a: &[(f64, f64)], b: &[(f64, f64)], target: f64) -> CostReduction {
    match (cost_to_reach(a, target), cost_to_reach(b, target)) {
        (Some(ca), Some(cb)) if cb > 0.0 => CostReduction::Factor(1.0 - ca / cb),
        (ca, cb) => CostReduction::DidNotConverge {
            a_reached: ca.is_some(),
            b_reached: cb.is_some(),
        },
    }
}

/// `n` evenly spaced cost checkpoints `i * max_cost / n` for `i = 1..=n`.
pub fn cost_checkpoints(max_cost: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| max_cost * i as f64 / n as f64).collect()
}

/// Step interpolation: the last value recorded at or before `cost`.
pub fn step_value(series: &[(f64, f64)], cost: f64) -> Option<f64> {
    series
        .iter()
        .take_while(|(c, _)| *c <= cost)
        .last()
        .map(|(_, v)| *v)
}

/// Per-checkpoint mean and population variance over several runs.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedStats {
    pub cost: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Runs that had a value at the checkpoint.
    pub count: Vec<usize>,
}

impl BinnedStats {
    pub fn std_dev(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }
}

/// Aggregates step-interpolated series on shared checkpoints. Runs without a
/// value yet at a checkpoint are left out there; a checkpoint no run reached
/// gets NaN.
pub fn binned_stats(series: &[Vec<(f64, f64)>], checkpoints: &[f64]) -> BinnedStats {
    let mut out = BinnedStats {
        cost: checkpoints.to_vec(),
        mean: Vec::with_capacity(checkpoints.len()),
        variance: Vec::with_capacity(checkpoints.len()),
        count: Vec::with_capacity(checkpoints.len()),
    };
    for &c in checkpoints {
        let vals: Vec<f64> = series.iter().filter_map(|s| step_value(s, c)).collect();
        let n = vals.len();
        if n == 0 {
            out.mean.push(f64::NAN);
            out.variance.push(f64::NAN);
        } else {
            let m = vals.iter().sum::<f64>() / n as f64;
            out.mean.push(m);
            out.variance
                .push(vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64);
        }
        out.count.push(n);
    }
    out
}
