//! Continuous-fidelity Gaussian process surrogate.
//!
//! Each objective is modelled by an independent zero-mean GP over the product
//! space `[0,1]^d x [0,1]` with a separable squared-exponential kernel
//! `a^2 * k_x(x, x') * k_z(z, z')`. Posterior function draws use random
//! Fourier features conditioned on the training data.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;

/// First jitter tried when the Gram matrix is not positive definite.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter before fitting gives up.
pub const JITTER_MAX: f64 = 1e-4;

/// Hyperparameters of the product kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    /// Signal standard deviation.
    pub amplitude: f64,
    /// Per-dimension input bandwidths.
    pub lengthscales_x: Vec<f64>,
    /// Fidelity bandwidth `h`.
    pub bandwidth_z: f64,
    /// Observation noise variance.
    pub noise_var: f64,
}

impl KernelParams {
    /// Amplitude 1, lengthscale 0.2 per input, fidelity bandwidth 0.5, noise 1e-6.
    pub fn default_for(d: usize) -> Self {
        Self {
            amplitude: 1.0,
            lengthscales_x: vec![0.2; d],
            bandwidth_z: 0.5,
            noise_var: 1e-6,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales_x.len()
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.amplitude) || !pos(self.bandwidth_z) {
            return Err(Error::Input(
                "amplitude and fidelity bandwidth must be > 0".into(),
            ));
        }
        if self.lengthscales_x.is_empty() || !self.lengthscales_x.iter().all(|&l| pos(l)) {
            return Err(Error::Input("lengthscales must be > 0".into()));
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(Error::Input("noise variance must be >= 0".into()));
        }
        Ok(())
    }

    /// Unit-amplitude input kernel.
    pub fn input_kernel(&self, x: &[f64], x2: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(x2)
            .zip(&self.lengthscales_x)
            .map(|((a, b), l)| {
                let u = (a - b) / l;
                u * u
            })
            .sum();
        (-0.5 * r2).exp()
    }

    /// Unit-amplitude fidelity kernel.
    pub fn fidelity_kernel(&self, z: f64, z2: f64) -> f64 {
        let u = (z - z2) / self.bandwidth_z;
        (-0.5 * u * u).exp()
    }

    /// Full product kernel value.
    pub fn eval(&self, x: &[f64], z: f64, x2: &[f64], z2: f64) -> f64 {
        self.amplitude * self.amplitude * self.input_kernel(x, x2) * self.fidelity_kernel(z, z2)
    }
}

/// One observation of an objective at input `x` and fidelity `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub z: f64,
    pub value: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, z: f64, value: f64) -> Self {
        Self { x, z, value }
    }
}

/// Posterior moments of `g(x, z)` together with the top-fidelity `f(x) = g(x, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointMoments {
    pub mean_g: f64,
    pub std_g: f64,
    pub mean_f: f64,
    pub std_f: f64,
    /// Posterior covariance between `g(x, z)` and `f(x)`.
    pub cov_gf: f64,
}

/// Read-only view of a fidelity-aware posterior. Implemented by [`CfGpModel`]
/// and by test stubs.
pub trait Surrogate: Sync {
    /// Posterior mean and standard deviation at `(x, z)`.
    fn moments(&self, x: &[f64], z: f64) -> (f64, f64);

    /// Posterior covariance between `g(x, z_low)` and `g(x, z_high)`.
    fn cross_covariance(&self, x: &[f64], z_low: f64, z_high: f64) -> f64;

    fn posterior_std(&self, x: &[f64], z: f64) -> f64 {
        self.moments(x, z).1
    }

    /// Joint moments for several fidelities at one input, each paired with `z = 1`.
    fn joint_moments(&self, x: &[f64], zs: &[f64]) -> Vec<JointMoments> {
        let (mean_f, std_f) = self.moments(x, 1.0);
        zs.iter()
            .map(|&z| {
                let (mean_g, std_g) = self.moments(x, z);
                JointMoments {
                    mean_g,
                    std_g,
                    mean_f,
                    std_f,
                    cov_gf: self.cross_covariance(x, z, 1.0),
                }
            })
            .collect()
    }
}

/// GP posterior for one objective.
#[derive(Debug, Clone)]
pub struct CfGpModel {
    params: KernelParams,
    xs: Vec<Vec<f64>>,
    zs: Vec<f64>,
    ys: Vec<f64>,
    factor: Option<CholeskyFactor>,
    alpha: Vec<f64>,
    jitter: f64,
    groups: FidelityGroups,
}

/// Training points bucketed by their (few) distinct fidelity values, with the
/// inverse Gram matrix kept for batched queries over many fidelities.
#[derive(Debug, Clone, Default)]
struct FidelityGroups {
    values: Vec<f64>,
    index: Vec<usize>,
    gram_inv: Vec<f64>,
}

impl FidelityGroups {
    fn build(zs: &[f64], factor: &CholeskyFactor) -> Self {
        let mut values: Vec<f64> = Vec::new();
        let index = zs
            .iter()
            .map(|&z| match values.iter().position(|&v| v == z) {
                Some(p) => p,
                None => {
                    values.push(z);
                    values.len() - 1
                }
            })
            .collect();
        let n = zs.len();
        let mut gram_inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = factor.solve(&e);
            for i in 0..n {
                gram_inv[i * n + j] = col[i];
            }
        }
        Self {
            values,
            index,
            gram_inv,
        }
    }
}

impl CfGpModel {
    /// The GP prior: no data, mean 0, std equal to the amplitude.
    pub fn prior(params: KernelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            xs: Vec::new(),
            zs: Vec::new(),
            ys: Vec::new(),
            factor: None,
            alpha: Vec::new(),
            jitter: 0.0,
            groups: FidelityGroups::default(),
        })
    }

    /// Conditions the prior on `records`.
    pub fn fit(records: &[Observation], params: KernelParams) -> Result<Self> {
        params.validate()?;
        if records.is_empty() {
            return Err(Error::Input("at least one record is required".into()));
        }
        let d = params.dim();
        for r in records {
            if r.x.len() != d {
                return Err(Error::Input(format!(
                    "record has {} inputs, kernel expects {d}",
                    r.x.len()
                )));
            }
            check_unit(&r.x, r.z)?;
            if !r.value.is_finite() {
                return Err(Error::Input("non-finite training value".into()));
            }
        }
        let n = records.len();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = params.eval(&records[i].x, records[i].z, &records[j].x, records[j].z);
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
            gram[i * n + i] += params.noise_var;
        }
        let (factor, jitter) = CholeskyFactor::with_jitter(&gram, n, JITTER_START, JITTER_MAX)
            .ok_or(Error::Fitting { jitter: JITTER_MAX })?;
        let ys: Vec<f64> = records.iter().map(|r| r.value).collect();
        let alpha = factor.solve(&ys);
        let zs: Vec<f64> = records.iter().map(|r| r.z).collect();
        let groups = FidelityGroups::build(&zs, &factor);
        Ok(Self {
            params,
            xs: records.iter().map(|r| r.x.clone()).collect(),
            zs,
            ys,
            factor: Some(factor),
            alpha,
            jitter,
            groups,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn num_points(&self) -> usize {
        self.ys.len()
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Jitter added to the diagonal during fitting (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// The cached lower-triangular factor of the regularized Gram matrix.
    pub fn factor(&self) -> Option<&CholeskyFactor> {
        self.factor.as_ref()
    }

    pub fn training_points(&self) -> impl Iterator<Item = (&[f64], f64, f64)> {
        self.xs
            .iter()
            .zip(&self.zs)
            .zip(&self.ys)
            .map(|((x, &z), &y)| (x.as_slice(), z, y))
    }

    /// Validated posterior mean and standard deviation.
    pub fn posterior(&self, x: &[f64], z: f64) -> Result<(f64, f64)> {
        self.check_query(x, z)?;
        Ok(self.moments(x, z))
    }

    /// Validated posterior covariance between two fidelities at one input.
    pub fn cross_cov(&self, x: &[f64], z_low: f64, z_high: f64) -> Result<f64> {
        self.check_query(x, z_low)?;
        check_unit(x, z_high)?;
        Ok(self.cross_covariance(x, z_low, z_high))
    }

    /// Posterior mean only; cheaper than [`Surrogate::moments`].
    pub fn mean(&self, x: &[f64], z: f64) -> f64 {
        self.xs
            .iter()
            .zip(&self.zs)
            .zip(&self.alpha)
            .map(|((xi, &zi), a)| a * self.params.eval(x, z, xi, zi))
            .sum()
    }

    fn check_query(&self, x: &[f64], z: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Input(format!(
                "query has {} inputs, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        check_unit(x, z)
    }

    fn input_kernel_row(&self, x: &[f64]) -> Vec<f64> {
        self.xs
            .iter()
            .map(|xi| self.params.input_kernel(x, xi))
            .collect()
    }

    /// `k(p, X)` for `p = (x, z)` given the precomputed input-kernel row.
    fn kernel_row(&self, kx: &[f64], z: f64) -> Vec<f64> {
        let a2 = self.params.amplitude * self.params.amplitude;
        kx.iter()
            .zip(&self.zs)
            .map(|(k, &zi)| a2 * k * self.params.fidelity_kernel(z, zi))
            .collect()
    }

    fn whitened(&self, mut k: Vec<f64>) -> Vec<f64> {
        if let Some(f) = &self.factor {
            f.solve_lower_in_place(&mut k);
        }
        k
    }

    /// Joint moments for many fidelities at once. Training points sharing a
    /// fidelity collapse into one group, so each extra fidelity costs
    /// `O(groups^2)` instead of `O(n^2)`.
    fn grouped_joint_moments(&self, kx: &[f64], zs: &[f64]) -> Vec<JointMoments> {
        let g = &self.groups;
        let m = g.values.len();
        let n = self.num_points();
        let a2 = self.params.amplitude * self.params.amplitude;
        let mut quad = vec![0.0; m * m];
        let mut lin = vec![0.0; m];
        let mut acc = vec![0.0; m];
        for i in 0..n {
            let row = &g.gram_inv[i * n..(i + 1) * n];
            let gi = g.index[i];
            lin[gi] += kx[i] * self.alpha[i];
            acc.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..n {
                acc[g.index[j]] += row[j] * kx[j];
            }
            for (q, v) in acc.iter().enumerate() {
                quad[gi * m + q] += kx[i] * v;
            }
        }
        let weights = |z: f64| -> Vec<f64> {
            g.values
                .iter()
                .map(|&zp| a2 * self.params.fidelity_kernel(z, zp))
                .collect()
        };
        let form = |u: &[f64], v: &[f64]| -> f64 {
            let mut s = 0.0;
            for p in 0..m {
                let mut r = 0.0;
                for q in 0..m {
                    r += quad[p * m + q] * v[q];
                }
                s += u[p] * r;
            }
            s
        };
        let w_top = weights(1.0);
        let mean_f: f64 = w_top.iter().zip(&lin).map(|(a, b)| a * b).sum();
        let std_f = (a2 - form(&w_top, &w_top)).max(0.0).sqrt();
        zs.iter()
            .map(|&z| {
                let w = weights(z);
                JointMoments {
                    mean_g: w.iter().zip(&lin).map(|(a, b)| a * b).sum(),
                    std_g: (a2 - form(&w, &w)).max(0.0).sqrt(),
                    mean_f,
                    std_f,
                    cov_gf: a2 * self.params.fidelity_kernel(z, 1.0) - form(&w, &w_top),
                }
            })
            .collect()
    }

    /// Draws an approximate posterior function using `num_features` random
    /// Fourier features. Deterministic in `seed`.
    pub fn sample_posterior_function(&self, num_features: usize, seed: u64) -> SampledFunction {
        let num_features = num_features.max(1);
        let d = self.dim();
        let width = d + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frequencies = Vec::with_capacity(num_features * width);
        let mut phases = Vec::with_capacity(num_features);
        for _ in 0..num_features {
            for l in &self.params.lengthscales_x {
                let w: f64 = rng.sample(StandardNormal);
                frequencies.push(w / l);
            }
            let w: f64 = rng.sample(StandardNormal);
            frequencies.push(w / self.params.bandwidth_z);
            phases.push(rng.random_range(0.0..2.0 * PI));
        }
        let scale = self.params.amplitude * (2.0 / num_features as f64).sqrt();
        let mut prior_weights: Vec<f64> = (0..num_features)
            .map(|_| rng.sample(StandardNormal))
            .collect();

        let mut f = SampledFunction {
            weights: Vec::new(),
            frequencies,
            phases,
            scale,
            dim: d,
        };
        let n = self.num_points();
        if n == 0 {
            f.weights = prior_weights;
            return f;
        }

        // Pathwise update of the weight-space posterior:
        // w = w0 + Phi^T (Phi Phi^T + s2 I)^-1 (y - Phi w0 - eps)
        let s2 = self.params.noise_var + self.jitter;
        let mut phi = vec![0.0; n * num_features];
        for (i, (x, z)) in self.xs.iter().zip(&self.zs).enumerate() {
            f.features_into(x, *z, &mut phi[i * num_features..(i + 1) * num_features]);
        }
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            let ri = &phi[i * num_features..(i + 1) * num_features];
            for j in 0..=i {
                let rj = &phi[j * num_features..(j + 1) * num_features];
                let v: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                gram[i * n + j] = v;
                gram[j * n + i] = v;
            }
            gram[i * n + i] += s2;
        }
        let resid: Vec<f64> = (0..n)
            .map(|i| {
                let ri = &phi[i * num_features..(i + 1) * num_features];
                let fit: f64 = ri.iter().zip(&prior_weights).map(|(a, b)| a * b).sum();
                let eps: f64 = rng.sample::<f64, _>(StandardNormal) * s2.sqrt();
                self.ys[i] - fit - eps
            })
            .collect();
        match CholeskyFactor::with_jitter(&gram, n, JITTER_START, 1e-2) {
            Some((factor, _)) => {
                let c = factor.solve(&resid);
                for (i, ci) in c.iter().enumerate() {
                    let ri = &phi[i * num_features..(i + 1) * num_features];
                    for (w, p) in prior_weights.iter_mut().zip(ri) {
                        *w += p * ci;
                    }
                }
            }
            None => log::warn!("feature-space system singular; returning prior draw"),
        }
        f.weights = prior_weights;
        f
    }

    /// Writes training points and hyperparameters as plain text.
    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# cfgp-model v1")?;
        writeln!(w, "amplitude,{}", self.params.amplitude)?;
        let ls: Vec<String> = self
            .params
            .lengthscales_x
            .iter()
            .map(|v| v.to_string())
            .collect();
        writeln!(w, "lengthscales_x,{}", ls.join(","))?;
        writeln!(w, "bandwidth_z,{}", self.params.bandwidth_z)?;
        writeln!(w, "noise_var,{}", self.params.noise_var)?;
        writeln!(w, "jitter,{}", self.jitter)?;
        for (x, z, y) in self.training_points() {
            let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            writeln!(w, "point,{},{z},{y}", xs.join(","))?;
        }
        Ok(())
    }
}

impl Surrogate for CfGpModel {
    fn moments(&self, x: &[f64], z: f64) -> (f64, f64) {
        let prior_var = self.params.amplitude * self.params.amplitude;
        if self.factor.is_none() {
            return (0.0, prior_var.sqrt());
        }
        let kx = self.input_kernel_row(x);
        let k = self.kernel_row(&kx, z);
        let mean: f64 = k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = self.whitened(k);
        let var = prior_var - v.iter().map(|a| a * a).sum::<f64>();
        (mean, var.max(0.0).sqrt())
    }

    fn cross_covariance(&self, x: &[f64], z_low: f64, z_high: f64) -> f64 {
        let prior = self.params.eval(x, z_low, x, z_high);
        if self.factor.is_none() {
            return prior;
        }
        let kx = self.input_kernel_row(x);
        let v1 = self.whitened(self.kernel_row(&kx, z_low));
        let v2 = self.whitened(self.kernel_row(&kx, z_high));
        prior - v1.iter().zip(&v2).map(|(a, b)| a * b).sum::<f64>()
    }

    fn joint_moments(&self, x: &[f64], zs: &[f64]) -> Vec<JointMoments> {
        let a2 = self.params.amplitude * self.params.amplitude;
        if self.factor.is_none() {
            return zs
                .iter()
                .map(|&z| JointMoments {
                    mean_g: 0.0,
                    std_g: a2.sqrt(),
                    mean_f: 0.0,
                    std_f: a2.sqrt(),
                    cov_gf: a2 * self.params.fidelity_kernel(z, 1.0),
                })
                .collect();
        }
        let kx = self.input_kernel_row(x);
        if zs.len() > 2 && 2 * self.groups.values.len() < self.num_points() {
            return self.grouped_joint_moments(&kx, zs);
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let k_top = self.kernel_row(&kx, 1.0);
        let mean_f = dot(&k_top, &self.alpha);
        let v_top = self.whitened(k_top);
        let std_f = (a2 - dot(&v_top, &v_top)).max(0.0).sqrt();
        zs.iter()
            .map(|&z| {
                let k = self.kernel_row(&kx, z);
                let mean_g = dot(&k, &self.alpha);
                let v = self.whitened(k);
                JointMoments {
                    mean_g,
                    std_g: (a2 - dot(&v, &v)).max(0.0).sqrt(),
                    mean_f,
                    std_f,
                    cov_gf: a2 * self.params.fidelity_kernel(z, 1.0) - dot(&v, &v_top),
                }
            })
            .collect()
    }
}

fn check_unit(x: &[f64], z: f64) -> Result<()> {
    let inside = |v: f64| (0.0..=1.0).contains(&v);
    if !x.iter().all(|&v| inside(v)) {
        return Err(Error::Input(format!("input {x:?} outside the unit cube")));
    }
    if !inside(z) {
        return Err(Error::Input(format!("fidelity {z} outside [0, 1]")));
    }
    Ok(())
}

/// A deterministic approximate posterior draw `g(x, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    pub weights: Vec<f64>,
    /// Row-major `M x (d + 1)`; the last column multiplies the fidelity.
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
    pub scale: f64,
    dim: usize,
}

impl SampledFunction {
    pub fn num_features(&self) -> usize {
        self.phases.len()
    }

    fn features_into(&self, x: &[f64], z: f64, out: &mut [f64]) {
        let width = self.dim + 1;
        for (m, o) in out.iter_mut().enumerate() {
            let w = &self.frequencies[m * width..(m + 1) * width];
            let arg: f64 = w[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                + w[self.dim] * z
                + self.phases[m];
            *o = self.scale * arg.cos();
        }
    }

    pub fn eval(&self, x: &[f64], z: f64) -> f64 {
        let width = self.dim + 1;
        let mut acc = 0.0;
        for m in 0..self.phases.len() {
            let w = &self.frequencies[m * width..(m + 1) * width];
            let arg: f64 = w[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                + w[self.dim] * z
                + self.phases[m];
            acc += self.weights[m] * arg.cos();
        }
        self.scale * acc
    }
}

/// Box constraints for hyperparameter search.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperBounds {
    pub amplitude: (f64, f64),
    pub lengthscale: (f64, f64),
    pub bandwidth_z: (f64, f64),
    pub noise_var: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            amplitude: (1e-2, 10.0),
            lengthscale: (0.02, 5.0),
            bandwidth_z: (0.05, 20.0),
            noise_var: (1e-6, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperFitOptions {
    pub bounds: HyperBounds,
    /// Random restarts in addition to the default (and warm) start.
    pub random_starts: usize,
    /// Likelihood evaluations per local search.
    pub max_evals: usize,
    pub seed: u64,
    pub warm_start: Option<KernelParams>,
}

impl Default for HyperFitOptions {
    fn default() -> Self {
        Self {
            bounds: HyperBounds::default(),
            random_starts: 2,
            max_evals: 200,
            seed: 0,
            warm_start: None,
        }
    }
}

/// Result of hyperparameter fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperFit {
    pub params: KernelParams,
    pub log_likelihood: f64,
    pub default_log_likelihood: f64,
    /// Set when no start produced a finite likelihood and defaults were returned.
    pub fell_back: bool,
}

/// Log marginal likelihood of mean-centred `records` under `params`.
pub fn log_marginal_likelihood(records: &[Observation], params: &KernelParams) -> f64 {
    let n = records.len();
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    let mean = records.iter().map(|r| r.value).sum::<f64>() / n as f64;
    let y: Vec<f64> = records.iter().map(|r| r.value - mean).collect();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = params.eval(&records[i].x, records[i].z, &records[j].x, records[j].z);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
        gram[i * n + i] += params.noise_var;
    }
    let Some((factor, _)) = CholeskyFactor::with_jitter(&gram, n, JITTER_START, JITTER_MAX) else {
        return f64::NEG_INFINITY;
    };
    let alpha = factor.solve(&y);
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    -0.5 * fit - 0.5 * factor.log_det() - 0.5 * n as f64 * (2.0 * PI).ln()
}

fn encode(p: &KernelParams) -> Vec<f64> {
    let mut v = vec![p.amplitude.ln()];
    v.extend(p.lengthscales_x.iter().map(|l| l.ln()));
    v.push(p.bandwidth_z.ln());
    v.push(p.noise_var.max(1e-300).ln());
    v
}

fn decode(v: &[f64]) -> KernelParams {
    let d = v.len() - 3;
    KernelParams {
        amplitude: v[0].exp(),
        lengthscales_x: v[1..1 + d].iter().map(|u| u.exp()).collect(),
        bandwidth_z: v[1 + d].exp(),
        noise_var: v[2 + d].exp(),
    }
}

fn log_box(bounds: &HyperBounds, d: usize) -> Vec<(f64, f64)> {
    let ln = |(a, b): (f64, f64)| (a.ln(), b.ln());
    let mut b = vec![ln(bounds.amplitude)];
    b.extend(std::iter::repeat_n(ln(bounds.lengthscale), d));
    b.push(ln(bounds.bandwidth_z));
    b.push(ln(bounds.noise_var));
    b
}

/// Maximizes the log marginal likelihood over a log-space box by multi-start
/// Nelder-Mead. The default parameters are always one of the starts.
pub fn fit_hyperparams(records: &[Observation], options: &HyperFitOptions) -> Result<HyperFit> {
    if records.len() < 2 {
        return Err(Error::Input(
            "hyperparameter fitting needs at least 2 records".into(),
        ));
    }
    let d = records[0].x.len();
    if d == 0 || records.iter().any(|r| r.x.len() != d) {
        return Err(Error::Input("inconsistent input dimension".into()));
    }
    let defaults = KernelParams::default_for(d);
    let default_ll = log_marginal_likelihood(records, &defaults);
    let bounds = log_box(&options.bounds, d);
    let clamp = |v: &mut Vec<f64>| {
        for (x, (lo, hi)) in v.iter_mut().zip(&bounds) {
            *x = x.clamp(*lo, *hi);
        }
    };
    let objective = |v: &[f64]| {
        let ll = log_marginal_likelihood(records, &decode(v));
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };

    let mut starts = Vec::new();
    let mut s = encode(&defaults);
    clamp(&mut s);
    starts.push(s);
    if let Some(w) = &options.warm_start {
        if w.dim() == d {
            let mut s = encode(w);
            clamp(&mut s);
            starts.push(s);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    for _ in 0..options.random_starts {
        starts.push(
            bounds
                .iter()
                .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                .collect(),
        );
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let (v, val) = nelder_mead(&objective, start, &bounds, options.max_evals);
        if val.is_finite() && best.as_ref().is_none_or(|(_, b)| val < *b) {
            best = Some((v, val));
        }
    }
    Ok(match best {
        Some((v, val)) => HyperFit {
            params: decode(&v),
            log_likelihood: -val,
            default_log_likelihood: default_ll,
            fell_back: false,
        },
        None => HyperFit {
            params: defaults,
            log_likelihood: default_ll,
            default_log_likelihood: default_ll,
            fell_back: true,
        },
    })
}

/// Bounded Nelder-Mead minimization; vertices are projected into the box.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: Vec<f64>,
    bounds: &[(f64, f64)],
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let n = start.len();
    let project = |v: &mut [f64]| {
        for (x, (lo, hi)) in v.iter_mut().zip(bounds) {
            *x = x.clamp(*lo, *hi);
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = f(&start);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut v = start.clone();
        let (lo, hi) = bounds[i];
        let step = 0.25 * (hi - lo).max(1e-3);
        v[i] = if v[i] + step <= hi {
            v[i] + step
        } else {
            v[i] - step
        };
        project(&mut v);
        let fv = f(&v);
        simplex.push((v, fv));
    }
    let mut evals = n + 1;
    let cmp = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| a.1.total_cmp(&b.1);
    while evals < max_evals {
        simplex.sort_by(cmp);
        let spread = simplex[n].1 - simplex[0].1;
        if spread.is_finite() && spread.abs() < 1e-9 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(v, _)| v[k]).sum::<f64>() / n as f64)
            .collect();
        let toward = |t: f64| {
            let mut v: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect();
            project(&mut v);
            v
        };
        let xr = toward(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = toward(-2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = toward(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = toward(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let mut v: Vec<f64> = best
                        .iter()
                        .zip(&item.0)
                        .map(|(b, w)| b + 0.5 * (w - b))
                        .collect();
                    project(&mut v);
                    let fv = f(&v);
                    *item = (v, fv);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(cmp);
    simplex.swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params(d: usize) -> KernelParams {
        KernelParams {
            amplitude: 1.0,
            lengthscales_x: vec![0.3; d],
            bandwidth_z: 0.5,
            noise_var: 0.0,
        }
    }

    #[test]
    fn kernel_diagonal_is_amplitude_squared() {
        let p = KernelParams {
            amplitude: 1.7,
            ..KernelParams::default_for(3)
        };
        let x = [0.1, 0.5, 0.9];
        assert_eq!(p.eval(&x, 0.3, &x, 0.3), 1.7 * 1.7);
    }

    #[test]
    fn single_record_factor_is_scalar_cholesky() {
        let p = KernelParams {
            amplitude: 2.0,
            noise_var: 0.5,
            ..KernelParams::default_for(2)
        };
        let m = CfGpModel::fit(&[Observation::new(vec![0.2, 0.4], 0.5, 1.0)], p).unwrap();
        let l = m.factor().unwrap();
        assert_eq!(l.dim(), 1);
        assert!((l.get(0, 0) - (4.0f64 + 0.5).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn duplicate_noiseless_points_use_jitter() {
        let recs = vec![
            Observation::new(vec![0.5], 1.0, 1.0),
            Observation::new(vec![0.5], 1.0, 1.0),
        ];
        let m = CfGpModel::fit(&recs, unit_params(1)).unwrap();
        assert!(m.jitter() > 0.0 && m.jitter() <= JITTER_MAX);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = unit_params(2);
        assert!(CfGpModel::fit(&[], p.clone()).is_err());
        assert!(CfGpModel::fit(&[Observation::new(vec![0.1], 1.0, 0.0)], p.clone()).is_err());
        assert!(CfGpModel::fit(&[Observation::new(vec![0.1, 1.5], 1.0, 0.0)], p.clone()).is_err());
        let mut bad = p;
        bad.bandwidth_z = 0.0;
        assert!(CfGpModel::prior(bad).is_err());
    }

    #[test]
    fn prior_moments() {
        let p = KernelParams {
            amplitude: 1.3,
            ..KernelParams::default_for(2)
        };
        let m = CfGpModel::prior(p.clone()).unwrap();
        let (mu, sd) = m.posterior(&[0.3, 0.3], 0.2).unwrap();
        assert_eq!(mu, 0.0);
        assert!((sd - 1.3).abs() < 1e-15);
        let c = m.cross_cov(&[0.3, 0.3], 0.2, 0.9).unwrap();
        let want = 1.3 * 1.3 * (-(0.7f64 * 0.7) / (2.0 * 0.25)).exp();
        assert!((c - want).abs() < 1e-14);
    }

    #[test]
    fn one_point_posterior_mean_matches_hand_formula() {
        let p = KernelParams {
            amplitude: 1.0,
            lengthscales_x: vec![0.4],
            bandwidth_z: 0.6,
            noise_var: 0.1,
        };
        let m = CfGpModel::fit(&[Observation::new(vec![0.2], 0.7, 2.0)], p.clone()).unwrap();
        let k = p.eval(&[0.5], 0.9, &[0.2], 0.7);
        let (mu, sd) = m.posterior(&[0.5], 0.9).unwrap();
        assert!((mu - k * 2.0 / 1.1).abs() < 1e-12);
        assert!((sd * sd - (1.0 - k * k / 1.1)).abs() < 1e-12);
    }

    #[test]
    fn joint_moments_agree_with_scalar_queries() {
        let recs: Vec<_> = (0..6)
            .map(|i| {
                let t = i as f64 / 5.0;
                Observation::new(
                    vec![t, 1.0 - t * t],
                    (0.3 * i as f64) % 1.0,
                    (3.0 * t).sin(),
                )
            })
            .collect();
        let m = CfGpModel::fit(&recs, KernelParams::default_for(2)).unwrap();
        let x = [0.35, 0.6];
        let zs = [0.0, 0.4, 1.0];
        for (jm, &z) in m.joint_moments(&x, &zs).iter().zip(&zs) {
            let (mg, sg) = m.moments(&x, z);
            let (mf, sf) = m.moments(&x, 1.0);
            assert!((jm.mean_g - mg).abs() < 1e-12 && (jm.std_g - sg).abs() < 1e-12);
            assert!((jm.mean_f - mf).abs() < 1e-12 && (jm.std_f - sf).abs() < 1e-12);
            assert!((jm.cov_gf - m.cross_covariance(&x, z, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn grouped_moments_agree_with_scalar_queries() {
        // 30 points on three fidelities triggers the batched path.
        let recs: Vec<_> = (0..30)
            .map(|i| {
                let t = i as f64 / 29.0;
                let z = [0.25, 0.5, 1.0][i % 3];
                Observation::new(vec![t, (7.0 * t) % 1.0], z, (3.0 * t).sin() + z)
            })
            .collect();
        let m = CfGpModel::fit(&recs, KernelParams::default_for(2)).unwrap();
        let x = [0.41, 0.13];
        let zs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        for (jm, &z) in m.joint_moments(&x, &zs).iter().zip(&zs) {
            let (mg, sg) = m.moments(&x, z);
            let (mf, sf) = m.moments(&x, 1.0);
            assert!((jm.mean_g - mg).abs() < 1e-8, "z={z}");
            assert!(
                (jm.std_g - sg).abs() < 1e-6 && (jm.std_f - sf).abs() < 1e-6,
                "z={z}"
            );
            assert!((jm.mean_f - mf).abs() < 1e-8);
            assert!((jm.cov_gf - m.cross_covariance(&x, z, 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn sampled_function_is_deterministic_in_seed() {
        let recs = vec![Observation::new(vec![0.3], 1.0, 0.5)];
        let m = CfGpModel::fit(&recs, KernelParams::default_for(1)).unwrap();
        let a = m.sample_posterior_function(64, 7);
        let b = m.sample_posterior_function(64, 7);
        let c = m.sample_posterior_function(64, 8);
        assert_eq!(a, b);
        assert_ne!(a.eval(&[0.7], 1.0), c.eval(&[0.7], 1.0));
    }

    #[test]
    fn hyperfit_minimal_and_constant_data() {
        let two = vec![
            Observation::new(vec![0.1, 0.1], 1.0, 3.0),
            Observation::new(vec![0.9, 0.4], 0.5, 3.0),
        ];
        let fit = fit_hyperparams(&two, &HyperFitOptions::default()).unwrap();
        assert!(fit.params.validate().is_ok());
        assert!(fit.log_likelihood.is_finite());

        let flat: Vec<_> = (0..12)
            .map(|i| Observation::new(vec![i as f64 / 11.0], (i % 3) as f64 / 2.0, -4.0))
            .collect();
        let fit = fit_hyperparams(&flat, &HyperFitOptions::default()).unwrap();
        let b = HyperBounds::default();
        assert!(
            fit.params.noise_var < 10.0 * b.noise_var.0,
            "{:?}",
            fit.params
        );
        assert!(
            fit.params.amplitude < 10.0 * b.amplitude.0,
            "{:?}",
            fit.params
        );
        assert!(fit.log_likelihood >= fit.default_log_likelihood);
    }

    #[test]
    fn hyperfit_rejects_single_record() {
        let one = vec![Observation::new(vec![0.1], 1.0, 3.0)];
        assert!(fit_hyperparams(&one, &HyperFitOptions::default()).is_err());
    }
}
