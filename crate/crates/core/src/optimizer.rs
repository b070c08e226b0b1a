//! Derivative-free acquisition maximization over `[0,1]^d` and admissible
//! fidelity vectors.
//!
//! Latin-hypercube candidates are scored, then the best few are refined by a
//! coordinate pattern search whose step halves from 0.1 down to 1e-3. At every
//! probed input the fidelity vector is re-chosen from the admissible sets at
//! that input, so returned pairs are admissible by construction. Ties keep the
//! first-evaluated candidate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fidelity::{CostCurve, Z_TOP};

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub num_random: usize,
    pub num_local: usize,
    pub local_steps: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            num_random: 1000,
            num_local: 5,
            local_steps: 40,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_random == 0 || self.num_local == 0 || self.local_steps == 0 {
            return Err(Error::Config("search counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Best input, its fidelity vector (empty for input-only searches) and score.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub score: f64,
}

const STEP_START: f64 = 0.1;
const STEP_MIN: f64 = 1e-3;

/// `n` stratified samples in `[0,1]^d`.
pub fn latin_hypercube<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for k in 0..d {
        strata.shuffle(rng);
        for (p, &s) in pts.iter_mut().zip(&strata) {
            p[k] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Outer search. `select` returns the best admissible fidelity vector and its
/// score at an input, or `None` when nothing can be scored there.
pub fn maximize_with<F>(mut select: F, d: usize, config: &SearchConfig) -> Result<Optimum>
where
    F: FnMut(&[f64]) -> Result<Option<(Vec<f64>, f64)>>,
{
    config.validate()?;
    if d == 0 {
        return Err(Error::Input("input dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut scored: Vec<Optimum> = Vec::with_capacity(config.num_random);
    for x in latin_hypercube(config.num_random, d, &mut rng) {
        if let Some((z, s)) = select(&x)? {
            if s.is_finite() {
                scored.push(Optimum { x, z, score: s });
            }
        }
    }
    if scored.is_empty() {
        return Err(Error::Evaluation(
            "no candidate produced a finite score".into(),
        ));
    }
    let mut best = scored[0].clone();
    for c in &scored[1..] {
        if c.score > best.score {
            best = c.clone();
        }
    }

    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].score.total_cmp(&scored[a].score).then(a.cmp(&b)));
    for &i in order.iter().take(config.num_local) {
        let mut cur = scored[i].clone();
        let mut step = STEP_START;
        for _ in 0..config.local_steps {
            if step < STEP_MIN {
                break;
            }
            let mut improved = false;
            for k in 0..d {
                for sign in [1.0, -1.0] {
                    let mut x = cur.x.clone();
                    x[k] = (x[k] + sign * step).clamp(0.0, 1.0);
                    if x[k] == cur.x[k] {
                        continue;
                    }
                    if let Some((z, s)) = select(&x)? {
                        if s.is_finite() && s > cur.score {
                            cur = Optimum { x, z, score: s };
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if cur.score > best.score {
            best = cur;
        }
    }
    Ok(best)
}

/// Maximizes `score(x, z)` over inputs and, per input, over the Cartesian
/// product of the admissible sets `reduced_set(x, j)`.
pub fn maximize_joint<S, R>(
    score: S,
    reduced_set: R,
    num_objectives: usize,
    d: usize,
    config: &SearchConfig,
) -> Result<Optimum>
where
    S: Fn(&[f64], &[f64]) -> f64,
    R: Fn(&[f64], usize) -> Vec<f64>,
{
    let best = maximize_with(
        |x| {
            let sets: Vec<Vec<f64>> = (0..num_objectives).map(|j| reduced_set(x, j)).collect();
            Ok(best_over_product(&sets, |z| score(x, z)))
        },
        d,
        config,
    )?;
    for (j, zj) in best.z.iter().enumerate() {
        if !reduced_set(&best.x, j).contains(zj) {
            return Err(Error::Evaluation(format!(
                "selected fidelity {zj} for objective {j} is not admissible"
            )));
        }
    }
    Ok(best)
}

/// Exhaustive maximization over the product of `sets`; first maximum wins.
pub fn best_over_product<F>(sets: &[Vec<f64>], mut score: F) -> Option<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> f64,
{
    if sets.iter().any(Vec::is_empty) {
        return None;
    }
    let mut idx = vec![0usize; sets.len()];
    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        let z: Vec<f64> = idx.iter().zip(sets).map(|(&i, s)| s[i]).collect();
        let s = score(&z);
        if s.is_finite() && best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((z, s));
        }
        let mut k = 0;
        loop {
            if k == sets.len() {
                return best;
            }
            idx[k] += 1;
            if idx[k] < sets[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Maximizes `sum_j info[j][i_j] / sum_j cost[j][i_j]` over index choices by
/// Dinkelbach iteration. Costs must be positive. Returns the chosen indices
/// and the ratio.
pub fn best_ratio(info: &[Vec<f64>], cost: &[Vec<f64>]) -> Option<(Vec<usize>, f64)> {
    if info.is_empty() || info.len() != cost.len() {
        return None;
    }
    if info
        .iter()
        .zip(cost)
        .any(|(a, c)| a.is_empty() || a.len() != c.len())
    {
        return None;
    }
    let ratio = |idx: &[usize]| {
        let a: f64 = idx.iter().enumerate().map(|(j, &i)| info[j][i]).sum();
        let c: f64 = idx.iter().enumerate().map(|(j, &i)| cost[j][i]).sum();
        a / c
    };
    let mut idx: Vec<usize> = info.iter().map(|a| a.len() - 1).collect();
    let mut lambda = ratio(&idx);
    for _ in 0..100 {
        let next: Vec<usize> = info
            .iter()
            .zip(cost)
            .map(|(a, c)| {
                let mut best = 0;
                for i in 1..a.len() {
                    if a[i] - lambda * c[i] > a[best] - lambda * c[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();
        let r = ratio(&next);
        if !(r > lambda + 1e-15 * lambda.abs().max(1e-300)) {
            break;
        }
        idx = next;
        lambda = r;
    }
    Some((idx, lambda))
}

/// Maximizes `score(x)` over the unit cube.
pub fn maximize_input_only<S>(score: S, d: usize, config: &SearchConfig) -> Result<(Vec<f64>, f64)>
where
    S: Fn(&[f64]) -> f64,
{
    let best = maximize_with(|x| Ok(Some((Vec::new(), score(x)))), d, config)?;
    Ok((best.x, best.score))
}

/// Lowest-cost member of an admissible set; ties go to the smaller fidelity.
pub fn cheapest_admissible(x: &[f64], admissible: &[f64], cost: &dyn CostCurve) -> f64 {
    let mut best: Option<(f64, f64)> = None;
    for &z in admissible {
        let c = cost.cost(x, z);
        match best {
            Some((bz, bc)) if c > bc || (c == bc && z >= bz) => {}
            _ => best = Some((z, c)),
        }
    }
    best.map_or(Z_TOP, |(z, _)| z)
}
