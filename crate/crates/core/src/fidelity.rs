//! Fidelity-space reduction.
//!
//! For each objective and iteration a candidate fidelity `z != 1` is admissible
//! when the posterior is still uncertain there relative to its cost-weighted
//! information gap, and when it is far enough from the top fidelity. The top
//! fidelity is always admissible.

use std::fmt;
use std::sync::Arc;

use crate::cfgp::{JointMoments, Surrogate};
use crate::error::{Error, Result};

/// The highest fidelity.
pub const Z_TOP: f64 = 1.0;

/// Evaluation cost of one objective as a function of input and fidelity.
pub trait CostCurve: Send + Sync {
    fn cost(&self, x: &[f64], z: f64) -> f64;
}

impl<F> CostCurve for F
where
    F: Fn(&[f64], f64) -> f64 + Send + Sync,
{
    fn cost(&self, x: &[f64], z: f64) -> f64 {
        self(x, z)
    }
}

/// `n` evenly spaced fidelities `i / n` for `i < n`, followed by 1.0.
pub fn default_grid(n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    g.push(Z_TOP);
    g
}

#[derive(Clone)]
pub struct FidelityReductionConfig {
    /// Fidelity bandwidth `h` of the objective's kernel.
    pub bandwidth_z: f64,
    /// `1 / (d + 3)`.
    pub exponent_q: f64,
    /// Sorted candidate fidelities, ending in 1.0.
    pub candidate_grid: Vec<f64>,
    pub cost: Arc<dyn CostCurve>,
}

impl fmt::Debug for FidelityReductionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FidelityReductionConfig")
            .field("bandwidth_z", &self.bandwidth_z)
            .field("exponent_q", &self.exponent_q)
            .field("candidate_grid", &self.candidate_grid.len())
            .finish()
    }
}

impl FidelityReductionConfig {
    /// Config for input dimension `d` using the 64-point grid plus 1.0.
    pub fn new(bandwidth_z: f64, d: usize, cost: Arc<dyn CostCurve>) -> Result<Self> {
        Self::with_grid(bandwidth_z, d, cost, default_grid(64))
    }

    pub fn with_grid(
        bandwidth_z: f64,
        d: usize,
        cost: Arc<dyn CostCurve>,
        candidate_grid: Vec<f64>,
    ) -> Result<Self> {
        if !(bandwidth_z.is_finite() && bandwidth_z > 0.0) {
            return Err(Error::Config("fidelity bandwidth must be > 0".into()));
        }
        if candidate_grid.last() != Some(&Z_TOP)
            || candidate_grid.windows(2).any(|w| !(w[0] < w[1]))
            || candidate_grid.iter().any(|z| !(0.0..=1.0).contains(z))
        {
            return Err(Error::Config(
                "candidate grid must be strictly increasing in [0, 1] and end at 1".into(),
            ));
        }
        Ok(Self {
            bandwidth_z,
            exponent_q: 1.0 / (d as f64 + 3.0),
            candidate_grid,
            cost,
        })
    }

    /// `||xi||_inf` over the candidate grid.
    pub fn sup_info_gap(&self) -> f64 {
        self.candidate_grid
            .iter()
            .map(|&z| info_gap(z, self.bandwidth_z))
            .fold(0.0, f64::max)
    }
}

/// Information gap `min(1, |z - 1| / h)`.
pub fn info_gap(z: f64, bandwidth_z: f64) -> f64 {
    ((z - Z_TOP).abs() / bandwidth_z).min(1.0)
}

/// `xi(z) * (C(x, z) / C(x, 1))^q`.
pub fn gamma_threshold(z: f64, x: &[f64], config: &FidelityReductionConfig) -> Result<f64> {
    let c = config.cost.cost(x, z);
    let c_top = config.cost.cost(x, Z_TOP);
    if !(c > 0.0 && c_top > 0.0) {
        return Err(Error::Config(format!(
            "cost must be positive (got {c} at z={z}, {c_top} at z=1)"
        )));
    }
    Ok(info_gap(z, config.bandwidth_z) * (c / c_top).powf(config.exponent_q))
}

/// `sqrt(0.5 ln((2t + 1) / h))`, clamped to 0 when the log argument is <= 1.
pub fn beta_t(t: usize, bandwidth_z: f64) -> f64 {
    let arg = (2.0 * t as f64 + 1.0) / bandwidth_z;
    if arg <= 1.0 {
        0.0
    } else {
        (0.5 * arg.ln()).sqrt()
    }
}

/// Admissible fidelities at `x` for iteration `t`, ascending, always ending in 1.0.
pub fn reduced_set<M: Surrogate + ?Sized>(
    x: &[f64],
    t: usize,
    model: &M,
    config: &FidelityReductionConfig,
) -> Result<Vec<f64>> {
    Ok(reduced_set_with_moments(x, t, model, config)?
        .into_iter()
        .map(|(z, _)| z)
        .collect())
}

/// Like [`reduced_set`] but also returns the joint posterior moments at each
/// admissible fidelity so callers can reuse them.
pub fn reduced_set_with_moments<M: Surrogate + ?Sized>(
    x: &[f64],
    t: usize,
    model: &M,
    config: &FidelityReductionConfig,
) -> Result<Vec<(f64, JointMoments)>> {
    let h = config.bandwidth_z;
    let threshold = beta_t(t, h) * config.sup_info_gap();
    let far: Vec<f64> = config
        .candidate_grid
        .iter()
        .copied()
        .filter(|&z| z != Z_TOP && info_gap(z, h) > threshold)
        .collect();
    let mut zs = far.clone();
    zs.push(Z_TOP);
    let moments = model.joint_moments(x, &zs);
    let mut out = Vec::with_capacity(zs.len());
    for (&z, m) in far.iter().zip(&moments) {
        if m.std_g > gamma_threshold(z, x, config)? {
            out.push((z, *m));
        }
    }
    out.push((Z_TOP, moments[far.len()]));
    Ok(out)
}
