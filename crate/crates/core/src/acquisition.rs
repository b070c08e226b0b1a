//! Output-space entropy acquisition functions.
//!
//! The information gain about the Pareto front decomposes into per-objective,
//! per-front-sample entropy reductions. The Gaussian entropy constants cancel
//! between the two terms, so only the remaining summands are computed here:
//!
//! * truncated form: `g phi(g) / (2 Phi(g)) - ln Phi(g)` at the query fidelity,
//! * extended-skew form: the same with a correlation weight plus an expectation
//!   under the ESG law, evaluated with Simpson's rule,
//! * the single-fidelity score, which is the truncated form at `z = 1` without
//!   cost normalization.

use std::sync::Arc;

use crate::cfgp::{JointMoments, Surrogate};
use crate::error::{Error, Result};
use crate::fidelity::{CostCurve, Z_TOP};
use crate::pareto::ParetoFrontSample;
use crate::stats::{log_norm_cdf, log_norm_pdf, pdf_over_cdf, simpson};

/// Floor applied to posterior standard deviations.
pub const STD_FLOOR: f64 = 1e-9;
/// Correlations within this distance of +-1 use the truncated limit.
pub const TAU_EPS: f64 = 1e-6;

/// Simpson settings for the ESG expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    /// Odd node count.
    pub nodes: usize,
    /// Integration half-width in ESG standard deviations.
    pub half_width: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            nodes: 201,
            half_width: 5.0,
        }
    }
}

/// Which entropy approximation drives the multi-fidelity score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approximation {
    Truncated,
    ExtendedSkew,
}

/// Entropy reduction of a standard normal truncated above at `gamma`.
pub fn truncated_entropy_term(gamma: f64) -> f64 {
    0.5 * gamma * pdf_over_cdf(gamma) - log_norm_cdf(gamma)
}

/// Mean and variance of the normalized extended-skew Gaussian with density
/// `phi(u) Phi((g - tau u) / sqrt(1 - tau^2)) / Phi(g)`.
///
/// Conditioning on the correlated top-fidelity value lying below `g` pulls
/// the mean down, so the mean is `-tau phi(g) / Phi(g)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsgMoments {
    pub mean: f64,
    pub variance: f64,
    pub tau: f64,
    pub gamma_f: f64,
}

pub fn esg_moments(tau: f64, gamma_f: f64) -> Result<EsgMoments> {
    if !(tau.abs() <= 1.0) {
        return Err(Error::Input(format!("correlation {tau} outside [-1, 1]")));
    }
    let r = pdf_over_cdf(gamma_f);
    Ok(EsgMoments {
        mean: -tau * r,
        variance: 1.0 - tau * tau * r * (gamma_f + r),
        tau,
        gamma_f,
    })
}

/// Per-(objective, sample) summand of the extended-skew score.
///
/// The expectation is taken by Simpson's rule over `mean -+ c * sd` of the
/// ESG law and normalized by the quadrature mass on the same nodes.
pub fn esg_entropy_term(tau: f64, gamma_f: f64, quad: &QuadConfig) -> f64 {
    if tau.abs() >= 1.0 - TAU_EPS {
        return truncated_entropy_term(gamma_f);
    }
    let m = match esg_moments(tau, gamma_f) {
        Ok(m) => m,
        Err(_) => return truncated_entropy_term(gamma_f),
    };
    let sd = m.variance.max(1e-12).sqrt();
    let (a, b) = (m.mean - quad.half_width * sd, m.mean + quad.half_width * sd);
    let s = (1.0 - tau * tau).sqrt();
    let log_cdf_gamma = log_norm_cdf(gamma_f);
    let (mut mass, mut expect) = (0.0, 0.0);
    let nodes = if quad.nodes % 2 == 0 {
        quad.nodes + 1
    } else {
        quad.nodes.max(3)
    };
    let h = (b - a) / (nodes - 1) as f64;
    for i in 0..nodes {
        let w = if i == 0 || i == nodes - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let u = a + i as f64 * h;
        let inner = log_norm_cdf((gamma_f - tau * u) / s);
        let density = (log_norm_pdf(u) + inner - log_cdf_gamma).exp();
        mass += w * density;
        expect += w * density * inner;
    }
    let expectation = if mass > 0.0 { expect / mass } else { 0.0 };
    0.5 * tau * tau * gamma_f * pdf_over_cdf(gamma_f) - log_cdf_gamma + expectation
}

/// The unnormalized Simpson expectation `E[ln Phi((g - tau u)/sqrt(1 - tau^2))]`,
/// exposed for quadrature diagnostics.
pub fn esg_expectation_simpson(tau: f64, gamma_f: f64, quad: &QuadConfig) -> Result<f64> {
    let m = esg_moments(tau, gamma_f)?;
    let sd = m.variance.max(1e-12).sqrt();
    let s = (1.0 - tau * tau).sqrt();
    let lg = log_norm_cdf(gamma_f);
    Ok(simpson(
        |u| {
            let inner = log_norm_cdf((gamma_f - tau * u) / s);
            (log_norm_pdf(u) + inner - lg).exp() * inner
        },
        m.mean - quad.half_width * sd,
        m.mean + quad.half_width * sd,
        quad.nodes,
    ))
}

/// An acquisition value and whether any standard deviation hit the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub std_floored: bool,
}

/// Everything the scores need: one surrogate and cost curve per objective and
/// the sampled Pareto fronts.
pub struct AcquisitionContext<'a, M: Surrogate> {
    pub models: &'a [M],
    pub fronts: &'a [ParetoFrontSample],
    pub costs: &'a [Arc<dyn CostCurve>],
    pub quad: QuadConfig,
}

impl<'a, M: Surrogate> AcquisitionContext<'a, M> {
    pub fn new(
        models: &'a [M],
        fronts: &'a [ParetoFrontSample],
        costs: &'a [Arc<dyn CostCurve>],
        quad: QuadConfig,
    ) -> Result<Self> {
        if fronts.is_empty() {
            return Err(Error::Input("at least one front sample is required".into()));
        }
        let k = models.len();
        if k == 0 || costs.len() != k || fronts.iter().any(|f| f.num_objectives() != k) {
            return Err(Error::Input(format!(
                "need matching objective counts: {k} models, {} costs, fronts {:?}",
                costs.len(),
                fronts
                    .iter()
                    .map(|f| f.num_objectives())
                    .collect::<Vec<_>>()
            )));
        }
        Ok(Self {
            models,
            fronts,
            costs,
            quad,
        })
    }

    pub fn num_objectives(&self) -> usize {
        self.models.len()
    }

    pub fn num_samples(&self) -> usize {
        self.fronts.len()
    }

    /// Cost of objective `j` at `z` relative to its top-fidelity cost.
    pub fn cost_ratio(&self, j: usize, x: &[f64], z: f64) -> f64 {
        self.costs[j].cost(x, z) / self.costs[j].cost(x, Z_TOP)
    }

    /// Sum of per-objective cost ratios; equals K at the top fidelity.
    pub fn normalized_cost(&self, x: &[f64], z: &[f64]) -> f64 {
        z.iter()
            .enumerate()
            .map(|(j, &zj)| self.cost_ratio(j, x, zj))
            .sum()
    }

    /// Sample-averaged information term of objective `j` (no cost division).
    pub fn objective_info(&self, approx: Approximation, j: usize, m: &JointMoments) -> (f64, bool) {
        let floored = m.std_g < STD_FLOOR || m.std_f < STD_FLOOR;
        let sg = m.std_g.max(STD_FLOOR);
        let sf = m.std_f.max(STD_FLOOR);
        let s = self.fronts.len() as f64;
        let total: f64 = match approx {
            Approximation::Truncated => self
                .fronts
                .iter()
                .map(|f| truncated_entropy_term((f.per_objective_max[j] - m.mean_g) / sg))
                .sum(),
            Approximation::ExtendedSkew => {
                let tau = (m.cov_gf / (sg * sf)).clamp(-1.0 + TAU_EPS, 1.0 - TAU_EPS);
                self.fronts
                    .iter()
                    .map(|f| {
                        esg_entropy_term(tau, (f.per_objective_max[j] - m.mean_f) / sf, &self.quad)
                    })
                    .sum()
            }
        };
        (total / s, floored)
    }

    /// Top-fidelity information term of objective `j`.
    pub fn top_info(&self, j: usize, mean_f: f64, std_f: f64) -> (f64, bool) {
        let floored = std_f < STD_FLOOR;
        let sf = std_f.max(STD_FLOOR);
        let total: f64 = self
            .fronts
            .iter()
            .map(|f| truncated_entropy_term((f.per_objective_max[j] - mean_f) / sf))
            .sum();
        (total / self.fronts.len() as f64, floored)
    }

    fn multi_fidelity_score(&self, approx: Approximation, x: &[f64], z: &[f64]) -> Result<Score> {
        if z.len() != self.num_objectives() {
            return Err(Error::Input("fidelity vector length must equal K".into()));
        }
        let mut value = 0.0;
        let mut std_floored = false;
        for (j, (model, &zj)) in self.models.iter().zip(z).enumerate() {
            let m = model.joint_moments(x, &[zj])[0];
            let (v, f) = self.objective_info(approx, j, &m);
            value += v;
            std_floored |= f;
        }
        Ok(Score {
            value: value / self.normalized_cost(x, z),
            std_floored,
        })
    }

    /// Truncated-Gaussian information gain per unit cost.
    pub fn imoca_t_score(&self, x: &[f64], z: &[f64]) -> Result<Score> {
        self.multi_fidelity_score(Approximation::Truncated, x, z)
    }

    /// Extended-skew-Gaussian information gain per unit cost.
    pub fn imoca_e_score(&self, x: &[f64], z: &[f64]) -> Result<Score> {
        self.multi_fidelity_score(Approximation::ExtendedSkew, x, z)
    }

    /// Single-fidelity information gain at `z = 1`, not divided by cost.
    pub fn mesmo_score(&self, x: &[f64]) -> Score {
        let mut value = 0.0;
        let mut std_floored = false;
        for (j, model) in self.models.iter().enumerate() {
            let (mu, sd) = model.moments(x, Z_TOP);
            let (v, f) = self.top_info(j, mu, sd);
            value += v;
            std_floored |= f;
        }
        Score { value, std_floored }
    }
}
