//! Pareto dominance (maximization), nondominated filtering and NSGA-II.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Nondominated objective vectors plus their per-objective maxima.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFrontSample {
    pub points: Vec<Vec<f64>>,
    pub per_objective_max: Vec<f64>,
}

impl ParetoFrontSample {
    /// Builds a front from points already known to be mutually nondominated.
    pub fn from_nondominated(points: Vec<Vec<f64>>) -> Result<Self> {
        let k = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Input("empty front".into()))?;
        if points.iter().any(|p| p.len() != k) {
            return Err(Error::Input("front points have mixed dimension".into()));
        }
        let per_objective_max = (0..k)
            .map(|j| {
                points
                    .iter()
                    .map(|p| p[j])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        Ok(Self {
            points,
            per_objective_max,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_objectives(&self) -> usize {
        self.per_objective_max.len()
    }

    /// Componentwise minimum over the front.
    pub fn per_objective_min(&self) -> Vec<f64> {
        (0..self.num_objectives())
            .map(|j| {
                self.points
                    .iter()
                    .map(|p| p[j])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

/// `a` dominates `b`: no worse everywhere, strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "cannot compare vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(dominates_unchecked(a, b))
}

pub(crate) fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

fn lex_desc(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.total_cmp(x) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Indices of the maximal elements of `points`, in input order.
pub fn nondominated_indices(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    // A dominator always precedes what it dominates in descending lexicographic order.
    order.sort_by(|&i, &j| lex_desc(&points[i], &points[j]).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if !kept
            .iter()
            .any(|&k| dominates_unchecked(&points[k], &points[i]))
        {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

/// The maximal elements of `points`.
pub fn nondominated_filter(points: &[Vec<f64>]) -> Result<ParetoFrontSample> {
    if points.is_empty() {
        return Err(Error::Input(
            "nondominated filter needs at least one point".into(),
        ));
    }
    let k = points[0].len();
    if points.iter().any(|p| p.len() != k) {
        return Err(Error::Input("points have mixed dimension".into()));
    }
    let kept = nondominated_indices(points);
    ParetoFrontSample::from_nondominated(kept.into_iter().map(|i| points[i].clone()).collect())
}

/// NSGA-II settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Nsga2Config {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub crossover_eta: f64,
    pub mutation_eta: f64,
    /// Per-gene mutation probability; `None` means `1 / d`.
    pub mutation_prob: Option<f64>,
    pub seed: u64,
}

impl Default for Nsga2Config {
    fn default() -> Self {
        Self {
            population: 100,
            generations: 100,
            crossover_prob: 0.9,
            crossover_eta: 15.0,
            mutation_eta: 20.0,
            mutation_prob: None,
            seed: 0,
        }
    }
}

/// Final nondominated set of an NSGA-II run with the inputs that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Nsga2Result {
    pub front: ParetoFrontSample,
    pub inputs: Vec<Vec<f64>>,
}

struct Individual {
    x: Vec<f64>,
    f: Vec<f64>,
    rank: usize,
    crowding: f64,
}

/// Maximizes the objectives jointly over `[0,1]^d` and returns the final
/// population's nondominated set.
pub fn nsga2_solve(
    objectives: &[&dyn Fn(&[f64]) -> f64],
    d: usize,
    config: &Nsga2Config,
) -> Result<Nsga2Result> {
    if objectives.is_empty() || d == 0 {
        return Err(Error::Input(
            "NSGA-II needs at least one objective and input".into(),
        ));
    }
    if config.population < 4 || config.population % 2 != 0 {
        return Err(Error::Config("population must be even and >= 4".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let evaluate = |x: Vec<f64>| -> Result<Individual> {
        let f: Vec<f64> = objectives.iter().map(|o| o(&x)).collect();
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { input: x });
        }
        Ok(Individual {
            x,
            f,
            rank: 0,
            crowding: 0.0,
        })
    };

    let mut pop = Vec::with_capacity(config.population);
    for _ in 0..config.population {
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        pop.push(evaluate(x)?);
    }
    assign_rank_and_crowding(&mut pop);

    let pm = config.mutation_prob.unwrap_or(1.0 / d as f64);
    for _ in 0..config.generations {
        let mut offspring = Vec::with_capacity(config.population);
        while offspring.len() < config.population {
            let p1 = tournament(&pop, &mut rng);
            let p2 = tournament(&pop, &mut rng);
            let (mut c1, mut c2) = (pop[p1].x.clone(), pop[p2].x.clone());
            if rng.random::<f64>() < config.crossover_prob {
                sbx(&mut c1, &mut c2, config.crossover_eta, &mut rng);
            }
            polynomial_mutation(&mut c1, config.mutation_eta, pm, &mut rng);
            polynomial_mutation(&mut c2, config.mutation_eta, pm, &mut rng);
            offspring.push(evaluate(c1)?);
            offspring.push(evaluate(c2)?);
        }
        pop.extend(offspring);
        assign_rank_and_crowding(&mut pop);
        pop = survivors(pop, config.population);
    }

    let fs: Vec<Vec<f64>> = pop.iter().map(|i| i.f.clone()).collect();
    let kept = nondominated_indices(&fs);
    let inputs = kept.iter().map(|&i| pop[i].x.clone()).collect();
    let front =
        ParetoFrontSample::from_nondominated(kept.into_iter().map(|i| fs[i].clone()).collect())?;
    Ok(Nsga2Result { front, inputs })
}

fn tournament(pop: &[Individual], rng: &mut ChaCha8Rng) -> usize {
    let a = rng.random_range(0..pop.len());
    let b = rng.random_range(0..pop.len());
    let (ia, ib) = (&pop[a], &pop[b]);
    if ia.rank != ib.rank {
        return if ia.rank < ib.rank { a } else { b };
    }
    if ia.crowding != ib.crowding {
        return if ia.crowding > ib.crowding { a } else { b };
    }
    a.min(b)
}

fn sbx(c1: &mut [f64], c2: &mut [f64], eta: f64, rng: &mut ChaCha8Rng) {
    for i in 0..c1.len() {
        if rng.random::<f64>() > 0.5 {
            continue;
        }
        let (y1, y2) = (c1[i].min(c2[i]), c1[i].max(c2[i]));
        if y2 - y1 < 1e-14 {
            continue;
        }
        let u: f64 = rng.random();
        let spread = |beta: f64| {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
            }
        };
        let b1 = 1.0 + 2.0 * y1 / (y2 - y1);
        let b2 = 1.0 + 2.0 * (1.0 - y2) / (y2 - y1);
        let a = 0.5 * ((y1 + y2) - spread(b1) * (y2 - y1));
        let b = 0.5 * ((y1 + y2) + spread(b2) * (y2 - y1));
        let (a, b) = (a.clamp(0.0, 1.0), b.clamp(0.0, 1.0));
        if rng.random::<f64>() < 0.5 {
            c1[i] = b;
            c2[i] = a;
        } else {
            c1[i] = a;
            c2[i] = b;
        }
    }
}

fn polynomial_mutation(x: &mut [f64], eta: f64, prob: f64, rng: &mut ChaCha8Rng) {
    for v in x.iter_mut() {
        if rng.random::<f64>() >= prob {
            continue;
        }
        let y = *v;
        let u: f64 = rng.random();
        let power = 1.0 / (eta + 1.0);
        let delta = if u < 0.5 {
            let xy = 1.0 - y;
            let val = 2.0 * u + (1.0 - 2.0 * u) * xy.powf(eta + 1.0);
            val.powf(power) - 1.0
        } else {
            let xy = y;
            let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy.powf(eta + 1.0);
            1.0 - val.powf(power)
        };
        *v = (y + delta).clamp(0.0, 1.0);
    }
}

/// Fast nondominated sort followed by per-front crowding distance.
fn assign_rank_and_crowding(pop: &mut [Individual]) {
    let n = pop.len();
    let mut dominated_by_me: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates_unchecked(&pop[i].f, &pop[j].f) {
                dominated_by_me[i].push(j);
                domination_count[j] += 1;
            } else if dominates_unchecked(&pop[j].f, &pop[i].f) {
                dominated_by_me[j].push(i);
                domination_count[i] += 1;
            }
        }
    }
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    let mut rank = 0;
    while !current.is_empty() {
        for &i in &current {
            pop[i].rank = rank;
        }
        crowding(pop, &current);
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by_me[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        current = next;
        rank += 1;
    }
}

fn crowding(pop: &mut [Individual], front: &[usize]) {
    for &i in front {
        pop[i].crowding = 0.0;
    }
    if front.len() <= 2 {
        for &i in front {
            pop[i].crowding = f64::INFINITY;
        }
        return;
    }
    let k = pop[front[0]].f.len();
    let mut order = front.to_vec();
    for m in 0..k {
        order.sort_by(|&a, &b| pop[a].f[m].total_cmp(&pop[b].f[m]).then(a.cmp(&b)));
        let lo = pop[order[0]].f[m];
        let hi = pop[order[order.len() - 1]].f[m];
        pop[order[0]].crowding = f64::INFINITY;
        pop[order[order.len() - 1]].crowding = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..order.len() - 1 {
            let gap = (pop[order[w + 1]].f[m] - pop[order[w - 1]].f[m]) / range;
            pop[order[w]].crowding += gap;
        }
    }
}

fn survivors(mut pop: Vec<Individual>, size: usize) -> Vec<Individual> {
    let mut order: Vec<usize> = (0..pop.len()).collect();
    // Rank ascending, crowding descending, lower index first on ties.
    order.sort_by(|&a, &b| {
        pop[a]
            .rank
            .cmp(&pop[b].rank)
            .then(pop[b].crowding.total_cmp(&pop[a].crowding))
            .then(a.cmp(&b))
    });
    order.truncate(size);
    order.sort_unstable();
    let mut keep = vec![false; pop.len()];
    for &i in &order {
        keep[i] = true;
    }
    let mut idx = 0;
    pop.retain(|_| {
        let k = keep[idx];
        idx += 1;
        k
    });
    pop
}
