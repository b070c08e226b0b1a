//! Synthetic multi-fidelity benchmark problems in maximization form.
//!
//! Every problem takes inputs in the unit cube and maps them affinely onto the
//! native domain of its test functions. Fidelity `z = 1` reproduces the
//! unperturbed function.

use std::f64::consts::{E, PI};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fidelity::Z_TOP;
use crate::pareto::{
    nondominated_filter, nondominated_indices, nsga2_solve, Nsga2Config, ParetoFrontSample,
};

/// Floor on Currin's second input, which appears as `exp(-1 / (2 x2))`.
pub const CURRIN_X2_FLOOR: f64 = 1e-6;

/// Largest full grid evaluated for a reference front before switching to NSGA-II.
pub const MAX_GRID_POINTS: usize = 250_000;

/// Fidelity structure of one objective.
#[derive(Debug, Clone, PartialEq)]
pub enum FidelityKind {
    Continuous,
    /// Allowed fidelity values, ascending, ending at 1.
    Discrete(Vec<f64>),
}

/// A multi-objective, multi-fidelity black box over `[0,1]^d`.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn num_objectives(&self) -> usize;
    fn fidelity_kind(&self, j: usize) -> FidelityKind;
    /// Objective values `g_j(x, z_j)`.
    fn evaluate(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>>;
    /// Cost of evaluating objective `j` at fidelity `z`.
    fn cost(&self, j: usize, x: &[f64], z: f64) -> f64;

    fn evaluate_top(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.evaluate(x, &vec![Z_TOP; self.num_objectives()])
    }

    /// True when every objective has a continuous fidelity.
    fn is_continuous(&self) -> bool {
        (0..self.num_objectives()).all(|j| self.fidelity_kind(j) == FidelityKind::Continuous)
    }

    /// `sum_j C_j(x, z_j) / C_j(x, 1)`.
    fn normalized_cost(&self, x: &[f64], z: &[f64]) -> f64 {
        z.iter()
            .enumerate()
            .map(|(j, &zj)| self.cost(j, x, zj) / self.cost(j, x, Z_TOP))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    BraninCurrin,
    AckleyRosenSphere,
    Dtlz1,
    Qv { low_weights: [f64; 8] },
}

/// One of the built-in benchmark bundles.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkProblem {
    name: &'static str,
    d: usize,
    k: usize,
    kind: Kind,
}

pub const PROBLEM_NAMES: [&str; 4] = ["branin-currin", "ackley-rosen-sphere", "dtlz1", "qv"];

const DTLZ1_LEVELS: [f64; 3] = [0.2, 0.6, 1.0];
const DTLZ1_COSTS: [f64; 3] = [0.01, 0.1, 1.0];
const QV_LOW: f64 = 0.0;
const QV_WEIGHTS: [f64; 8] = [0.9, 1.1, 0.9, 1.1, 0.9, 1.1, 0.9, 1.1];

/// Branin (mapped from `[-5, 10] x [0, 15]`) and Currin exponential, d = 2.
pub fn branin_currin() -> BenchmarkProblem {
    BenchmarkProblem {
        name: "branin-currin",
        d: 2,
        k: 2,
        kind: Kind::BraninCurrin,
    }
}

/// Ackley, Rosenbrock and Sphere on `[-2, 2]^5`.
pub fn ackley_rosen_sphere() -> BenchmarkProblem {
    BenchmarkProblem {
        name: "ackley-rosen-sphere",
        d: 5,
        k: 3,
        kind: Kind::AckleyRosenSphere,
    }
}

/// Six-objective DTLZ1 variant with fidelities {0.2, 0.6, 1}.
pub fn dtlz1() -> BenchmarkProblem {
    BenchmarkProblem {
        name: "dtlz1",
        d: 5,
        k: 6,
        kind: Kind::Dtlz1,
    }
}

/// Two-objective QV problem, d = 8; only the second objective has a low fidelity.
pub fn qv() -> BenchmarkProblem {
    qv_with_low_fidelity_weights(QV_WEIGHTS)
}

/// QV with custom per-dimension weights on the low-fidelity quadratic term.
pub fn qv_with_low_fidelity_weights(low_weights: [f64; 8]) -> BenchmarkProblem {
    BenchmarkProblem {
        name: "qv",
        d: 8,
        k: 2,
        kind: Kind::Qv { low_weights },
    }
}

/// Looks up a benchmark by its registered name.
pub fn by_name(name: &str) -> Result<BenchmarkProblem> {
    match name {
        "branin-currin" => Ok(branin_currin()),
        "ackley-rosen-sphere" => Ok(ackley_rosen_sphere()),
        "dtlz1" => Ok(dtlz1()),
        "qv" => Ok(qv()),
        _ => Err(Error::Config(format!(
            "unknown problem '{name}'; registered: {}",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}

fn branin(u: &[f64], z: f64) -> f64 {
    let x1 = -5.0 + 15.0 * u[0];
    let x2 = 15.0 * u[1];
    let b = 5.1 / (4.0 * PI * PI) - 0.01 * (1.0 - z);
    let c = 5.0 / PI - 0.1 * (1.0 - z);
    let t = 1.0 / (8.0 * PI) + 0.05 * (1.0 - z);
    let (a, r, s) = (1.0, 6.0, 10.0);
    let q = x2 - b * x1 * x1 + c * x1 - r;
    -(a * q * q + s * (1.0 - t) * x1.cos() + s)
}

fn currin(u: &[f64], z: f64) -> f64 {
    let x1 = u[0];
    let x2 = u[1].max(CURRIN_X2_FLOOR);
    let factor = 1.0 - 0.1 * (1.0 - z) * (-1.0 / (2.0 * x2)).exp();
    let num = 2300.0 * x1.powi(3) + 1900.0 * x1 * x1 + 2092.0 * x1 + 60.0;
    let den = 100.0 * x1.powi(3) + 500.0 * x1 * x1 + 4.0 * x1 + 20.0;
    -factor * num / den
}

fn to_box(u: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    u.iter().map(|v| lo + (hi - lo) * v).collect()
}

fn ackley(u: &[f64], z: f64) -> f64 {
    let x = to_box(u, -2.0, 2.0);
    let d = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
    let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
    -(-20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + E + 20.0) - 0.01 * (1.0 - z)
}

fn rosenbrock(u: &[f64], z: f64) -> f64 {
    let x = to_box(u, -2.0, 2.0);
    -x.windows(2)
        .map(|w| {
            let a = w[1] - w[0] * w[0] + 0.01 * (1.0 - z);
            100.0 * a * a + (1.0 - w[0]).powi(2)
        })
        .sum::<f64>()
}

fn sphere(u: &[f64], z: f64) -> f64 {
    let x = to_box(u, -2.0, 2.0);
    -x.iter().map(|v| v * v).sum::<f64>() - 0.01 * (1.0 - z)
}

fn dtlz1_objective(j: usize, x: &[f64], z: f64) -> f64 {
    let d = x.len();
    let r = 100.0
        * (d as f64
            + x.iter()
                .map(|v| (v - 0.5).powi(2) - (10.0 * PI * (v - 0.5)).cos())
                .sum::<f64>());
    let scale = -(1.0 + r) * 0.5;
    // j is zero-based: objective 1 uses every input, objective 6 only (1 - x1).
    let f = match j {
        0 => scale * x.iter().product::<f64>(),
        5 => scale * (1.0 - x[0]),
        _ => {
            let m = 6 - (j + 1);
            scale * (1.0 - x[m]) * x[..m].iter().product::<f64>()
        }
    };
    let alpha = 1.0 - z;
    let e: f64 = x
        .iter()
        .map(|v| alpha * (10.0 * PI * alpha * v + 0.5 * PI * alpha + PI).cos())
        .sum();
    f - e
}

/// Fourth root that keeps the sign of a negative radicand.
fn signed_fourth_root(v: f64) -> f64 {
    v.signum() * v.abs().powf(0.25)
}

fn qv_first(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    let m = x.iter().map(|v| v * v - 20.0 * PI * v + 10.0).sum::<f64>() / d;
    -signed_fourth_root(m)
}

fn qv_second(x: &[f64], weights: Option<&[f64; 8]>) -> f64 {
    let d = x.len() as f64;
    let m = x
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s = v - 1.5;
            let w = weights.map_or(1.0, |w| w[i]);
            w * s * s - 20.0 * PI * s + 10.0
        })
        .sum::<f64>()
        / d;
    -signed_fourth_root(m)
}

impl BenchmarkProblem {
    fn check(&self, x: &[f64], z: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Input(format!(
                "{} expects {} inputs, got {}",
                self.name,
                self.d,
                x.len()
            )));
        }
        if !x.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Input(format!("input {x:?} outside the unit cube")));
        }
        if z.len() != self.k {
            return Err(Error::Input(format!(
                "{} expects {} fidelities, got {}",
                self.name,
                self.k,
                z.len()
            )));
        }
        for (j, &zj) in z.iter().enumerate() {
            let ok = match self.fidelity_kind(j) {
                FidelityKind::Continuous => (0.0..=1.0).contains(&zj),
                FidelityKind::Discrete(levels) => levels.iter().any(|&l| (l - zj).abs() < 1e-12),
            };
            if !ok {
                return Err(Error::Input(format!(
                    "fidelity {zj} not available for objective {j} of {}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

impl Problem for BenchmarkProblem {
    fn name(&self) -> &str {
        self.name
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn num_objectives(&self) -> usize {
        self.k
    }

    fn fidelity_kind(&self, j: usize) -> FidelityKind {
        match &self.kind {
            Kind::BraninCurrin | Kind::AckleyRosenSphere => FidelityKind::Continuous,
            Kind::Dtlz1 => FidelityKind::Discrete(DTLZ1_LEVELS.to_vec()),
            Kind::Qv { .. } if j == 0 => FidelityKind::Discrete(vec![Z_TOP]),
            Kind::Qv { .. } => FidelityKind::Discrete(vec![QV_LOW, Z_TOP]),
        }
    }

    fn evaluate(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check(x, z)?;
        let out = match &self.kind {
            Kind::BraninCurrin => vec![branin(x, z[0]), currin(x, z[1])],
            Kind::AckleyRosenSphere => {
                vec![ackley(x, z[0]), rosenbrock(x, z[1]), sphere(x, z[2])]
            }
            Kind::Dtlz1 => (0..6).map(|j| dtlz1_objective(j, x, z[j])).collect(),
            Kind::Qv { low_weights } => {
                let second = if z[1] == Z_TOP {
                    qv_second(x, None)
                } else {
                    qv_second(x, Some(low_weights))
                };
                vec![qv_first(x), second]
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!(
                "{} produced {out:?} at {x:?}",
                self.name
            )));
        }
        Ok(out)
    }

    fn cost(&self, j: usize, _x: &[f64], z: f64) -> f64 {
        match &self.kind {
            Kind::BraninCurrin if j == 1 => 0.1 + z * z,
            Kind::BraninCurrin | Kind::AckleyRosenSphere => 0.05 + z.powf(6.5),
            Kind::Dtlz1 => DTLZ1_LEVELS
                .iter()
                .zip(DTLZ1_COSTS)
                .find(|(l, _)| (**l - z).abs() < 1e-12)
                .map_or(1.0, |(_, c)| c),
            Kind::Qv { .. } => {
                if j == 1 && z != Z_TOP {
                    0.1
                } else {
                    1.0
                }
            }
        }
    }
}

fn grid_points(density: usize, d: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..density)
        .map(|i| {
            if density == 1 {
                0.5
            } else {
                i as f64 / (density - 1) as f64
            }
        })
        .collect();
    let total = density.pow(d as u32);
    let mut pts = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        pts.push(idx.iter().map(|&i| axis[i]).collect());
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < density {
                break;
            }
            *slot = 0;
        }
    }
    pts
}

/// Sub-grid of `(2r+1)^d` points spanning one grid cell on each side of every
/// front input, with `r <= 8` chosen so the total stays under
/// [`MAX_GRID_POINTS`]. Empty when even `r = 1` does not fit.
fn refine_around(front: &[Vec<f64>], density: usize) -> Vec<Vec<f64>> {
    if density < 2 || front.is_empty() {
        return Vec::new();
    }
    let d = front[0].len();
    let fits = |r: usize| {
        (2 * r + 1)
            .checked_pow(d as u32)
            .and_then(|n| n.checked_mul(front.len()))
            .is_some_and(|n| n <= MAX_GRID_POINTS)
    };
    let Some(r) = (1..=8).rev().find(|&r| fits(r)) else {
        return Vec::new();
    };
    let step = 1.0 / ((density - 1) * r) as f64;
    let offsets = grid_points(2 * r + 1, d);
    let mut out = Vec::with_capacity(front.len() * offsets.len());
    for x in front {
        for o in &offsets {
            // offsets are on [0, 1]; map to -r..=r sub-steps
            let p: Vec<f64> = x
                .iter()
                .zip(o)
                .map(|(&xi, &oi)| xi + (oi * (2 * r) as f64 - r as f64).round() * step)
                .collect();
            if p.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)) {
                out.push(p.into_iter().map(|v| v.clamp(0.0, 1.0)).collect());
            }
        }
    }
    out.sort_by(|a: &Vec<f64>, b| {
        a.iter()
            .zip(b)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    out.dedup();
    out
}

/// Pareto front of the top-fidelity objectives on a `density^d` grid refined
/// around its nondominated points, or by a large NSGA-II run when the grid
/// would exceed [`MAX_GRID_POINTS`].
pub fn reference_front<P: Problem + ?Sized>(
    problem: &P,
    density: usize,
) -> Result<ParetoFrontSample> {
    let d = problem.dim();
    if density == 0 {
        return Err(Error::Config("grid density must be >= 1".into()));
    }
    let grid_size = density
        .checked_pow(d as u32)
        .filter(|&n| n <= MAX_GRID_POINTS);
    match grid_size {
        Some(_) => {
            let inputs = grid_points(density, d);
            let values = inputs
                .iter()
                .map(|x| problem.evaluate_top(x))
                .collect::<Result<Vec<_>>>()?;
            let front: Vec<Vec<f64>> = nondominated_indices(&values)
                .into_iter()
                .map(|i| inputs[i].clone())
                .collect();
            let mut candidates = refine_around(&front, density);
            if candidates.is_empty() {
                candidates = front;
            }
            let values = candidates
                .iter()
                .map(|x| problem.evaluate_top(x))
                .collect::<Result<Vec<_>>>()?;
            nondominated_filter(&values)
        }
        None => {
            log::warn!(
                "grid {density}^{d} too large for {}; using NSGA-II for the reference front",
                problem.name()
            );
            let k = problem.num_objectives();
            let fns: Vec<Box<dyn Fn(&[f64]) -> f64 + '_>> = (0..k)
                .map(|j| {
                    Box::new(move |x: &[f64]| problem.evaluate_top(x).map_or(f64::NAN, |v| v[j]))
                        as Box<dyn Fn(&[f64]) -> f64>
                })
                .collect();
            let refs: Vec<&dyn Fn(&[f64]) -> f64> = fns.iter().map(|f| f.as_ref()).collect();
            let cfg = Nsga2Config {
                population: 200,
                generations: 300,
                seed: 0,
                ..Default::default()
            };
            Ok(nsga2_solve(&refs, d, &cfg)?.front)
        }
    }
}

/// Path of the cached reference front for `name` at `density`.
pub fn reference_cache_path(dir: &Path, name: &str, density: usize) -> PathBuf {
    dir.join(format!("reference_v2_{name}_{density}.csv"))
}

/// Loads the cached reference front or computes and stores it.
pub fn reference_front_cached<P: Problem + ?Sized>(
    problem: &P,
    density: usize,
    dir: &Path,
) -> Result<ParetoFrontSample> {
    let path = reference_cache_path(dir, problem.name(), density);
    if path.exists() {
        return read_front(&path);
    }
    let front = reference_front(problem, density)?;
    fs::create_dir_all(dir)?;
    write_front(&path, &front)?;
    Ok(front)
}

const FRONT_HEADER: &str = "# reference-front v2";

pub fn write_front(path: &Path, front: &ParetoFrontSample) -> Result<()> {
    let mut s = String::from(FRONT_HEADER);
    s.push('\n');
    for p in &front.points {
        let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_front(path: &Path) -> Result<ParetoFrontSample> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(FRONT_HEADER) {
        return Err(Error::Format(format!(
            "{} is not a reference front",
            path.display()
        )));
    }
    let points = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(e.to_string()))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    ParetoFrontSample::from_nondominated(points)
}
