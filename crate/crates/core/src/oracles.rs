//! Slow, independent reference computations used to cross-check the fast
//! paths. None of these share code with the routines they check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::cfgp::{KernelParams, Observation};
use crate::error::{Error, Result};

fn kernel(p: &KernelParams, x: &[f64], z: f64, x2: &[f64], z2: f64) -> f64 {
    let mut s = 0.0;
    for ((a, b), l) in x.iter().zip(x2).zip(&p.lengthscales_x) {
        s += ((a - b) / l).powi(2);
    }
    s += ((z - z2) / p.bandwidth_z).powi(2);
    p.amplitude * p.amplitude * (-0.5 * s).exp()
}

/// Joint Gaussian conditioning with a dense LU solve. Returns the posterior
/// mean vector and covariance matrix at the query points.
pub fn dense_conditioning(
    records: &[Observation],
    params: &KernelParams,
    queries: &[(Vec<f64>, f64)],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = records.len();
    let m = queries.len();
    let gram = DMatrix::from_fn(n, n, |i, j| {
        let k = kernel(
            params,
            &records[i].x,
            records[i].z,
            &records[j].x,
            records[j].z,
        );
        if i == j {
            k + params.noise_var
        } else {
            k
        }
    });
    let cross = DMatrix::from_fn(n, m, |i, q| {
        kernel(
            params,
            &records[i].x,
            records[i].z,
            &queries[q].0,
            queries[q].1,
        )
    });
    let prior = DMatrix::from_fn(m, m, |a, b| {
        kernel(
            params,
            &queries[a].0,
            queries[a].1,
            &queries[b].0,
            queries[b].1,
        )
    });
    let y = DVector::from_iterator(n, records.iter().map(|r| r.value));
    let lu = gram.lu();
    let solved_y = lu.solve(&y).ok_or_else(|| Error::Fitting { jitter: 0.0 })?;
    let solved_k = lu
        .solve(&cross)
        .ok_or_else(|| Error::Fitting { jitter: 0.0 })?;
    let mean = cross.transpose() * solved_y;
    let cov = prior - cross.transpose() * solved_k;
    Ok((
        mean.iter().copied().collect(),
        (0..m)
            .map(|a| (0..m).map(|b| cov[(a, b)]).collect())
            .collect(),
    ))
}

/// Differential entropy of N(0, 1).
pub fn standard_normal_entropy() -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
}

/// Monte-Carlo estimate of `H[N(0,1)] - H[N(0,1) | u <= gamma]` from `n`
/// inverse-cdf draws of the truncated law.
pub fn mc_truncated_entropy_gap(gamma: f64, n: usize, seed: u64) -> f64 {
    let normal = Normal::standard();
    let mass = normal.cdf(gamma);
    let log_mass = mass.ln();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..n {
        let p = rng.random::<f64>() * mass;
        let u = normal.inverse_cdf(p.max(f64::MIN_POSITIVE));
        acc += normal.ln_pdf(u) - log_mass;
    }
    standard_normal_entropy() + acc / n as f64
}

/// `H[N(0,1)] - H[ESG(tau, gamma)]` by the trapezoid rule on the ESG density
/// over `[-half_width, half_width]`.
pub fn esg_entropy_gap_quadrature(tau: f64, gamma: f64, nodes: usize, half_width: f64) -> f64 {
    let normal = Normal::standard();
    let s = (1.0 - tau * tau).sqrt();
    let mass = normal.cdf(gamma);
    let h = 2.0 * half_width / (nodes - 1) as f64;
    let mut entropy = 0.0;
    for i in 0..nodes {
        let u = -half_width + i as f64 * h;
        let p = normal.pdf(u) * normal.cdf((gamma - tau * u) / s) / mass;
        let w = if i == 0 || i == nodes - 1 { 0.5 } else { 1.0 };
        if p > 0.0 {
            entropy -= w * h * p * p.ln();
        }
    }
    standard_normal_entropy() - entropy
}

/// Monte-Carlo hypervolume: fraction of uniform draws in the box between the
/// reference point and the componentwise maximum that some point dominates.
pub fn mc_hypervolume(points: &[Vec<f64>], reference: &[f64], n: usize, seed: u64) -> f64 {
    let k = reference.len();
    let upper: Vec<f64> = (0..k)
        .map(|j| {
            points
                .iter()
                .map(|p| p[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let volume: f64 = upper.iter().zip(reference).map(|(u, r)| u - r).product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut s = vec![0.0; k];
    for _ in 0..n {
        for j in 0..k {
            s[j] = reference[j] + rng.random::<f64>() * (upper[j] - reference[j]);
        }
        if points.iter().any(|p| p.iter().zip(&s).all(|(a, b)| a >= b)) {
            hits += 1;
        }
    }
    volume * hits as f64 / n as f64
}

/// Indices of points no other point dominates, by exhaustive comparison.
pub fn brute_force_nondominated(points: &[Vec<f64>]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points.iter().any(|q| {
                q.iter().zip(&points[i]).all(|(a, b)| a >= b)
                    && q.iter().zip(&points[i]).any(|(a, b)| a > b)
            })
        })
        .collect()
}

/// Average nearest distance by an explicit double loop.
pub fn brute_force_r2(reference: &[Vec<f64>], recovered: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for a in reference {
        let mut best = f64::INFINITY;
        for b in recovered {
            let mut s = 0.0;
            for (u, v) in a.iter().zip(b) {
                s += (u - v) * (u - v);
            }
            best = best.min(s.sqrt());
        }
        total += best;
    }
    total / reference.len() as f64
}
