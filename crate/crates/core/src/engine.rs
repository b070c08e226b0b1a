//! Outer optimization loops, budget accounting and run traces.
//!
//! A run evaluates a seeded Latin-hypercube initial design, then repeats:
//! refit one GP per objective, draw Pareto-front samples from posterior
//! function draws, pick the next query by the method's acquisition, evaluate
//! it and charge its normalized cost. The loop stops once the cumulative cost
//! reaches the budget; the last query may overshoot it.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{AcquisitionContext, Approximation, QuadConfig};
use crate::benchmarks::{self, FidelityKind, Problem};
use crate::cfgp::{
    fit_hyperparams, CfGpModel, HyperFitOptions, JointMoments, KernelParams, Observation,
};
use crate::error::{Error, Result};
use crate::fidelity::{
    reduced_set, reduced_set_with_moments, CostCurve, FidelityReductionConfig, Z_TOP,
};
use crate::metrics::{hypervolume, hypervolume_clipped, r2_distance, HypervolumeConfig};
use crate::optimizer::{
    best_ratio, cheapest_admissible, latin_hypercube, maximize_input_only, maximize_with,
    SearchConfig,
};
use crate::pareto::{
    nondominated_filter, nsga2_solve, Nsga2Config, Nsga2Result, ParetoFrontSample,
};

/// Margin between the reference front's minima and the hypervolume reference point.
pub const REFERENCE_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    ImocaT,
    ImocaE,
    NaiveCfmo,
    Mesmo,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::ImocaT,
        Method::ImocaE,
        Method::NaiveCfmo,
        Method::Mesmo,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::ImocaT => "imoca-t",
            Method::ImocaE => "imoca-e",
            Method::NaiveCfmo => "naive-cfmo",
            Method::Mesmo => "mesmo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!(
                    "unknown method '{s}'; registered: {}",
                    names.join(", ")
                ))
            })
    }
}

/// Everything that determines a run. Two runs with equal configs produce
/// byte-identical traces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub problem: String,
    pub seed: u64,
    /// Total normalized cost.
    pub budget: f64,
    /// Pareto-front samples per iteration.
    pub num_samples: usize,
    pub init_count: usize,
    pub rff_features: usize,
    pub front_population: usize,
    pub front_generations: usize,
    pub recovered_population: usize,
    pub recovered_generations: usize,
    pub search_random: usize,
    pub search_local: usize,
    pub search_steps: usize,
    pub quad_nodes: usize,
    pub quad_half_width: f64,
    pub hyper_starts: usize,
    pub hyper_evals: usize,
    /// Hyperparameters are refit every this many iterations.
    pub refit_every: usize,
    /// Candidate fidelities below 1 for continuous problems.
    pub fidelity_grid: usize,
    pub reference_density: usize,
    /// Hard stop on BO iterations regardless of budget.
    pub max_iterations: usize,
}

impl RunConfig {
    pub fn new(method: Method, problem: &str, seed: u64) -> Self {
        Self {
            method,
            problem: problem.to_string(),
            seed,
            budget: 100.0,
            num_samples: 1,
            init_count: 5,
            rff_features: 500,
            front_population: 50,
            front_generations: 60,
            recovered_population: 50,
            recovered_generations: 50,
            search_random: 500,
            search_local: 3,
            search_steps: 30,
            quad_nodes: 201,
            quad_half_width: 5.0,
            hyper_starts: 1,
            hyper_evals: 150,
            refit_every: 5,
            fidelity_grid: 64,
            reference_density: 200,
            max_iterations: 5000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return bad("budget must be > 0");
        }
        if self.num_samples == 0 {
            return bad("number of front samples must be >= 1");
        }
        if self.init_count == 0 {
            return bad("init count must be >= 1");
        }
        if self.rff_features == 0 || self.fidelity_grid == 0 || self.reference_density == 0 {
            return bad("feature count, fidelity grid and reference density must be >= 1");
        }
        if self.front_population < 4 || self.front_population % 2 == 1 {
            return bad("front population must be even and >= 4");
        }
        if self.recovered_population < 4 || self.recovered_population % 2 == 1 {
            return bad("recovered population must be even and >= 4");
        }
        if self.search_random == 0 || self.search_local == 0 || self.search_steps == 0 {
            return bad("search counts must be >= 1");
        }
        if self.quad_nodes < 3 || self.quad_nodes % 2 == 0 || !(self.quad_half_width > 0.0) {
            return bad("quadrature needs an odd node count >= 3 and a positive half-width");
        }
        if self.hyper_evals == 0 || self.refit_every == 0 {
            return bad("hyperparameter evaluations and refit period must be >= 1");
        }
        Ok(())
    }

    /// Sets one field from its echo key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' for '{key}'")))
        }
        match key {
            "method" => self.method = value.parse()?,
            "problem" => self.problem = value.to_string(),
            "seed" => self.seed = num(key, value)?,
            "budget" => self.budget = num(key, value)?,
            "samples" => self.num_samples = num(key, value)?,
            "init" => self.init_count = num(key, value)?,
            "rff_features" => self.rff_features = num(key, value)?,
            "front_population" => self.front_population = num(key, value)?,
            "front_generations" => self.front_generations = num(key, value)?,
            "recovered_population" => self.recovered_population = num(key, value)?,
            "recovered_generations" => self.recovered_generations = num(key, value)?,
            "search_random" => self.search_random = num(key, value)?,
            "search_local" => self.search_local = num(key, value)?,
            "search_steps" => self.search_steps = num(key, value)?,
            "quad_nodes" => self.quad_nodes = num(key, value)?,
            "quad_half_width" => self.quad_half_width = num(key, value)?,
            "hyper_starts" => self.hyper_starts = num(key, value)?,
            "hyper_evals" => self.hyper_evals = num(key, value)?,
            "refit_every" => self.refit_every = num(key, value)?,
            "fidelity_grid" => self.fidelity_grid = num(key, value)?,
            "reference_density" => self.reference_density = num(key, value)?,
            "max_iterations" => self.max_iterations = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("method", self.method.to_string()),
            ("problem", self.problem.clone()),
            ("seed", self.seed.to_string()),
            ("budget", self.budget.to_string()),
            ("samples", self.num_samples.to_string()),
            ("init", self.init_count.to_string()),
            ("rff_features", self.rff_features.to_string()),
            ("front_population", self.front_population.to_string()),
            ("front_generations", self.front_generations.to_string()),
            (
                "recovered_population",
                self.recovered_population.to_string(),
            ),
            (
                "recovered_generations",
                self.recovered_generations.to_string(),
            ),
            ("search_random", self.search_random.to_string()),
            ("search_local", self.search_local.to_string()),
            ("search_steps", self.search_steps.to_string()),
            ("quad_nodes", self.quad_nodes.to_string()),
            ("quad_half_width", self.quad_half_width.to_string()),
            ("hyper_starts", self.hyper_starts.to_string()),
            ("hyper_evals", self.hyper_evals.to_string()),
            ("refit_every", self.refit_every.to_string()),
            ("fidelity_grid", self.fidelity_grid.to_string()),
            ("reference_density", self.reference_density.to_string()),
            ("max_iterations", self.max_iterations.to_string()),
        ]
    }

    /// Space-separated `key=value` pairs covering every field.
    pub fn to_echo(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Inverse of [`RunConfig::to_echo`]. Every key must be present.
    pub fn from_echo(echo: &str) -> Result<Self> {
        let mut cfg = RunConfig::new(Method::Mesmo, "", 0);
        let mut seen = Vec::new();
        for tok in echo.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config token '{tok}' is not key=value")))?;
            cfg.set(k, v)?;
            seen.push(k.to_string());
        }
        for (k, _) in cfg.pairs() {
            if !seen.iter().any(|s| s == k) {
                return Err(Error::Format(format!("config echo lacks '{k}'")));
            }
        }
        Ok(cfg)
    }

    pub fn quad(&self) -> QuadConfig {
        QuadConfig {
            nodes: self.quad_nodes,
            half_width: self.quad_half_width,
        }
    }

    fn search(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            num_random: self.search_random,
            num_local: self.search_local,
            local_steps: self.search_steps,
            seed,
        }
    }

    /// File name of this run's trace.
    pub fn trace_file_name(&self) -> String {
        format!("{}_{}_{}.trace", self.problem, self.method, self.seed)
    }
}

/// One evaluated query.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    /// Normalized cost of this query.
    pub cost: f64,
    pub cumulative_cost: f64,
    /// 0 for the initial design.
    pub iteration: usize,
    /// Seconds since the run started. Not persisted.
    pub wall_time: f64,
    /// Metrics of the recovered front after this record; NaN when not computed.
    pub phv: f64,
    pub r2: f64,
    /// Acquisition value at the chosen query; NaN for the initial design.
    pub acquisition: f64,
    /// Every `z_j` was admissible when the query was selected.
    pub admissible: bool,
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub config: RunConfig,
    pub dim: usize,
    pub num_objectives: usize,
    pub reference_point: Vec<f64>,
    pub reference_phv: f64,
    pub records: Vec<EvaluationRecord>,
    /// Final recovered front in true objective values.
    pub front: Vec<Vec<f64>>,
}

const TRACE_HEADER: &str = "# imoca-trace v1";

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|a| a.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_floats(s: &str, sep: char) -> Result<Vec<f64>> {
    s.split(sep)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number '{t}'")))
        })
        .collect()
}

impl RunTrace {
    pub fn iterations(&self) -> usize {
        self.records.iter().filter(|r| r.iteration > 0).count()
    }

    pub fn total_cost(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_cost)
    }

    /// `(cumulative cost, phv)` at every record with a computed PHV.
    pub fn phv_series(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter(|r| r.phv.is_finite())
            .map(|r| (r.cumulative_cost, r.phv))
            .collect()
    }

    pub fn r2_series(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter(|r| r.r2.is_finite())
            .map(|r| (r.cumulative_cost, r.r2))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let (d, k) = (self.dim, self.num_objectives);
        let mut s = String::new();
        s.push_str(TRACE_HEADER);
        s.push('\n');
        s.push_str(&format!("# config {}\n", self.config.to_echo()));
        s.push_str(&format!("# shape d={d} k={k}\n"));
        s.push_str(&format!(
            "# reference_point {}\n",
            join(&self.reference_point)
        ));
        s.push_str(&format!("# reference_phv {}\n", self.reference_phv));
        let mut cols = vec!["row".to_string(), "iteration".to_string()];
        cols.extend((1..=d).map(|i| format!("x{i}")));
        cols.extend((1..=k).map(|i| format!("z{i}")));
        cols.extend((1..=k).map(|i| format!("y{i}")));
        for c in [
            "cost",
            "cumulative_cost",
            "phv",
            "r2",
            "acquisition",
            "admissible",
        ] {
            cols.push(c.to_string());
        }
        s.push_str(&cols.join(","));
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "eval,{},{},{},{},{},{},{},{},{},{}\n",
                r.iteration,
                join(&r.x),
                join(&r.z),
                join(&r.y),
                r.cost,
                r.cumulative_cost,
                r.phv,
                r.r2,
                r.acquisition,
                u8::from(r.admissible)
            ));
        }
        for p in &self.front {
            s.push_str(&format!("front,{}\n", join(p)));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(Error::Format("missing trace header".into()));
        }
        let meta = |line: Option<&str>, tag: &str| -> Result<String> {
            line.and_then(|l| l.strip_prefix(tag))
                .map(|v| v.trim().to_string())
                .ok_or_else(|| Error::Format(format!("expected '{tag}' line")))
        };
        let config = RunConfig::from_echo(&meta(lines.next(), "# config ")?)?;
        let shape = meta(lines.next(), "# shape ")?;
        let mut dim = None;
        let mut num_objectives = None;
        for tok in shape.split_whitespace() {
            match tok.split_once('=') {
                Some(("d", v)) => dim = v.parse::<usize>().ok(),
                Some(("k", v)) => num_objectives = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let (d, k) = dim
            .zip(num_objectives)
            .ok_or_else(|| Error::Format(format!("bad shape line '{shape}'")))?;
        let reference_point = parse_floats(&meta(lines.next(), "# reference_point")?, ',')?;
        let reference_phv = meta(lines.next(), "# reference_phv")?
            .parse::<f64>()
            .map_err(|_| Error::Format("bad reference_phv".into()))?;
        lines.next();
        let mut records = Vec::new();
        let mut front = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (kind, rest) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad trace row '{line}'")))?;
            match kind {
                "eval" => {
                    let f = parse_floats(rest, ',')?;
                    if f.len() != 1 + d + 2 * k + 6 {
                        return Err(Error::Format(format!("eval row has {} fields", f.len())));
                    }
                    let o = 1 + d + 2 * k;
                    records.push(EvaluationRecord {
                        iteration: f[0] as usize,
                        x: f[1..1 + d].to_vec(),
                        z: f[1 + d..1 + d + k].to_vec(),
                        y: f[1 + d + k..o].to_vec(),
                        cost: f[o],
                        cumulative_cost: f[o + 1],
                        wall_time: 0.0,
                        phv: f[o + 2],
                        r2: f[o + 3],
                        acquisition: f[o + 4],
                        admissible: f[o + 5] != 0.0,
                    });
                }
                "front" => front.push(parse_floats(rest, ',')?),
                _ => return Err(Error::Format(format!("unknown row kind '{kind}'"))),
            }
        }
        Ok(Self {
            config,
            dim: d,
            num_objectives: k,
            reference_point,
            reference_phv,
            records,
            front,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Reference front with its fixed hypervolume reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceData {
    pub front: ParetoFrontSample,
    pub hv: HypervolumeConfig,
    pub phv: f64,
}

impl ReferenceData {
    pub fn new(front: ParetoFrontSample) -> Result<Self> {
        let hv = HypervolumeConfig::from_front(&front, REFERENCE_MARGIN)?;
        let phv = hypervolume(&front.points, &hv)?;
        Ok(Self { front, hv, phv })
    }

    pub fn compute<P: Problem + ?Sized>(problem: &P, density: usize) -> Result<Self> {
        Self::new(benchmarks::reference_front(problem, density)?)
    }

    /// Loads the reference front from `dir` or computes and caches it.
    pub fn cached<P: Problem + ?Sized>(problem: &P, density: usize, dir: &Path) -> Result<Self> {
        Self::new(benchmarks::reference_front_cached(problem, density, dir)?)
    }

    /// Clipped PHV and R2 distance of a recovered front.
    pub fn score(&self, front: &[Vec<f64>]) -> Result<(f64, f64)> {
        Ok((
            hypervolume_clipped(front, &self.hv)?,
            r2_distance(&self.front.points, front)?,
        ))
    }
}

/// A run that stopped on an error, with everything recorded up to that point.
#[derive(Debug)]
pub struct RunFailure {
    pub trace: Box<RunTrace>,
    pub error: Error,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run failed after {} records: {}",
            self.trace.records.len(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {}

pub type RunResult = std::result::Result<RunTrace, RunFailure>;

fn mix(mut v: u64) -> u64 {
    v = v.wrapping_add(0x9E37_79B9_7F4A_7C15);
    v = (v ^ (v >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    v = (v ^ (v >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    v ^ (v >> 31)
}

/// Independent stream seed for `(base, tags...)`.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

struct ObjectiveCost {
    problem: Arc<dyn Problem>,
    j: usize,
}

impl CostCurve for ObjectiveCost {
    fn cost(&self, x: &[f64], z: f64) -> f64 {
        self.problem.cost(self.j, x, z)
    }
}

fn objective_costs(problem: &Arc<dyn Problem>) -> Vec<Arc<dyn CostCurve>> {
    (0..problem.num_objectives())
        .map(|j| {
            Arc::new(ObjectiveCost {
                problem: Arc::clone(problem),
                j,
            }) as Arc<dyn CostCurve>
        })
        .collect()
}

fn reduction_configs(
    problem: &Arc<dyn Problem>,
    costs: &[Arc<dyn CostCurve>],
    bandwidths: &[f64],
    grid: usize,
) -> Result<Vec<Option<FidelityReductionConfig>>> {
    (0..problem.num_objectives())
        .map(|j| match problem.fidelity_kind(j) {
            FidelityKind::Continuous => FidelityReductionConfig::with_grid(
                bandwidths[j],
                problem.dim(),
                Arc::clone(&costs[j]),
                crate::fidelity::default_grid(grid),
            )
            .map(Some),
            FidelityKind::Discrete(_) => Ok(None),
        })
        .collect()
}

fn levels(problem: &dyn Problem, j: usize) -> Vec<f64> {
    match problem.fidelity_kind(j) {
        FidelityKind::Discrete(l) => l,
        FidelityKind::Continuous => vec![Z_TOP],
    }
}

/// Seeded Latin-hypercube inputs, each paired with a random admissible
/// fidelity per objective under the default prior. Single-fidelity MESMO
/// starts at the top fidelity.
pub fn initial_design(
    config: &RunConfig,
    problem: &Arc<dyn Problem>,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let d = problem.dim();
    let k = problem.num_objectives();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[1]));
    let xs = latin_hypercube(config.init_count, d, &mut rng);
    let prior = CfGpModel::prior(KernelParams::default_for(d))?;
    let costs = objective_costs(problem);
    let reductions = reduction_configs(
        problem,
        &costs,
        &vec![prior.params().bandwidth_z; k],
        config.fidelity_grid,
    )?;
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let mut z = Vec::with_capacity(k);
        for j in 0..k {
            if config.method == Method::Mesmo {
                z.push(Z_TOP);
                continue;
            }
            let set = match &reductions[j] {
                Some(cfg) => reduced_set(&x, 0, &prior, cfg)?,
                None => levels(problem.as_ref(), j),
            };
            z.push(*set.choose(&mut rng).unwrap_or(&Z_TOP));
        }
        out.push((x, z));
    }
    Ok(out)
}

/// Pareto set of the posterior means at the top fidelity, found by NSGA-II.
/// Duplicate points are dropped.
pub fn recovered_front(
    models: &[CfGpModel],
    d: usize,
    config: &Nsga2Config,
) -> Result<Nsga2Result> {
    let fns: Vec<Box<dyn Fn(&[f64]) -> f64 + '_>> = models
        .iter()
        .map(|m| Box::new(move |x: &[f64]| m.mean(x, Z_TOP)) as Box<dyn Fn(&[f64]) -> f64>)
        .collect();
    let refs: Vec<&dyn Fn(&[f64]) -> f64> = fns.iter().map(|f| f.as_ref()).collect();
    let res = nsga2_solve(&refs, d, config)?;
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut inputs = Vec::new();
    for (p, x) in res.front.points.into_iter().zip(res.inputs) {
        if !points.contains(&p) {
            points.push(p);
            inputs.push(x);
        }
    }
    Ok(Nsga2Result {
        front: ParetoFrontSample::from_nondominated(points)?,
        inputs,
    })
}

struct Scaling {
    mean: f64,
    std: f64,
}

struct Session<'a> {
    config: &'a RunConfig,
    problem: Arc<dyn Problem>,
    reference: &'a ReferenceData,
    costs: Vec<Arc<dyn CostCurve>>,
    records: Vec<EvaluationRecord>,
    params: Vec<KernelParams>,
    last_refit: Option<usize>,
    start: Instant,
}

impl<'a> Session<'a> {
    fn new(
        config: &'a RunConfig,
        problem: Arc<dyn Problem>,
        reference: &'a ReferenceData,
    ) -> Result<Self> {
        config.validate()?;
        if config.problem != problem.name() {
            return Err(Error::Config(format!(
                "config names problem '{}' but '{}' was supplied",
                config.problem,
                problem.name()
            )));
        }
        if reference.front.num_objectives() != problem.num_objectives() {
            return Err(Error::Config(
                "reference front has the wrong objective count".into(),
            ));
        }
        let d = problem.dim();
        let k = problem.num_objectives();
        Ok(Self {
            config,
            costs: objective_costs(&problem),
            problem,
            reference,
            records: Vec::new(),
            params: vec![KernelParams::default_for(d); k],
            last_refit: None,
            start: Instant::now(),
        })
    }

    fn cumulative_cost(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_cost)
    }

    fn evaluate(
        &mut self,
        x: Vec<f64>,
        z: Vec<f64>,
        iteration: usize,
        acquisition: f64,
        admissible: bool,
    ) -> Result<()> {
        let y = self.problem.evaluate(&x, &z)?;
        let cost = self.problem.normalized_cost(&x, &z);
        if !(cost > 0.0 && cost.is_finite()) {
            return Err(Error::Evaluation(format!(
                "non-positive cost {cost} at {x:?}"
            )));
        }
        let cumulative_cost = self.cumulative_cost() + cost;
        self.records.push(EvaluationRecord {
            x,
            z,
            y,
            cost,
            cumulative_cost,
            iteration,
            wall_time: self.start.elapsed().as_secs_f64(),
            phv: f64::NAN,
            r2: f64::NAN,
            acquisition,
            admissible,
        });
        Ok(())
    }

    fn scaling(&self, j: usize) -> Scaling {
        let n = self.records.len() as f64;
        let mean = self.records.iter().map(|r| r.y[j]).sum::<f64>() / n;
        let var = self
            .records
            .iter()
            .map(|r| (r.y[j] - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Scaling { mean, std }
    }

    /// Refits every objective's GP on all records, in standardized units.
    fn fit_models(&mut self, iteration: usize) -> Result<Vec<CfGpModel>> {
        let k = self.problem.num_objectives();
        let refit = self.records.len() >= 2
            && self
                .last_refit
                .is_none_or(|last| iteration >= last + self.config.refit_every);
        let mut models = Vec::with_capacity(k);
        for j in 0..k {
            let s = self.scaling(j);
            let obs: Vec<Observation> = self
                .records
                .iter()
                .map(|r| Observation::new(r.x.clone(), r.z[j], (r.y[j] - s.mean) / s.std))
                .collect();
            if refit {
                let opts = HyperFitOptions {
                    random_starts: self.config.hyper_starts,
                    max_evals: self.config.hyper_evals,
                    seed: derive_seed(self.config.seed, &[2, iteration as u64, j as u64]),
                    warm_start: self.last_refit.map(|_| self.params[j].clone()),
                    ..Default::default()
                };
                self.params[j] = fit_hyperparams(&obs, &opts)?.params;
            }
            models.push(CfGpModel::fit(&obs, self.params[j].clone())?);
        }
        if refit {
            self.last_refit = Some(iteration);
        }
        Ok(models)
    }

    fn sample_fronts(
        &self,
        models: &[CfGpModel],
        iteration: usize,
    ) -> Result<Vec<ParetoFrontSample>> {
        let d = self.problem.dim();
        (0..self.config.num_samples)
            .map(|s| {
                let draws: Vec<_> = models
                    .iter()
                    .enumerate()
                    .map(|(j, m)| {
                        let seed = derive_seed(
                            self.config.seed,
                            &[3, iteration as u64, s as u64, j as u64],
                        );
                        m.sample_posterior_function(self.config.rff_features, seed)
                    })
                    .collect();
                let fns: Vec<Box<dyn Fn(&[f64]) -> f64 + '_>> = draws
                    .iter()
                    .map(|g| {
                        Box::new(move |x: &[f64]| g.eval(x, Z_TOP)) as Box<dyn Fn(&[f64]) -> f64>
                    })
                    .collect();
                let refs: Vec<&dyn Fn(&[f64]) -> f64> = fns.iter().map(|f| f.as_ref()).collect();
                let cfg = Nsga2Config {
                    population: self.config.front_population,
                    generations: self.config.front_generations,
                    seed: derive_seed(self.config.seed, &[4, iteration as u64, s as u64]),
                    ..Default::default()
                };
                Ok(nsga2_solve(&refs, d, &cfg)?.front)
            })
            .collect()
    }

    /// True objective values at the recovered Pareto set, nondominated.
    fn recovered_values(&self, models: &[CfGpModel], iteration: usize) -> Result<Vec<Vec<f64>>> {
        let cfg = Nsga2Config {
            population: self.config.recovered_population,
            generations: self.config.recovered_generations,
            seed: derive_seed(self.config.seed, &[5, iteration as u64]),
            ..Default::default()
        };
        let res = recovered_front(models, self.problem.dim(), &cfg)?;
        let values = res
            .inputs
            .iter()
            .map(|x| self.problem.evaluate_top(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(nondominated_filter(&values)?.points)
    }

    fn record_metrics(&mut self, iteration: usize) -> Result<Vec<CfGpModel>> {
        let models = self.fit_models(iteration)?;
        let front = self.recovered_values(&models, iteration)?;
        let (phv, r2) = self.reference.score(&front)?;
        if let Some(last) = self.records.last_mut() {
            last.phv = phv;
            last.r2 = r2;
        }
        Ok(models)
    }

    fn trace(&self, models: Option<&[CfGpModel]>) -> RunTrace {
        let front = models
            .and_then(|m| self.recovered_values(m, usize::MAX).ok())
            .unwrap_or_default();
        RunTrace {
            config: self.config.clone(),
            dim: self.problem.dim(),
            num_objectives: self.problem.num_objectives(),
            reference_point: self.reference.hv.reference_point.clone(),
            reference_phv: self.reference.phv,
            records: self.records.clone(),
            front,
        }
    }

    fn select_imoca(
        &self,
        approx: Approximation,
        models: &[CfGpModel],
        fronts: &[ParetoFrontSample],
        t: usize,
    ) -> Result<(Vec<f64>, Vec<f64>, f64, bool)> {
        let k = self.problem.num_objectives();
        let ctx = AcquisitionContext::new(models, fronts, &self.costs, self.config.quad())?;
        let bandwidths: Vec<f64> = models.iter().map(|m| m.params().bandwidth_z).collect();
        let reductions = reduction_configs(
            &self.problem,
            &self.costs,
            &bandwidths,
            self.config.fidelity_grid,
        )?;
        let level_sets: Vec<Vec<f64>> = (0..k).map(|j| levels(self.problem.as_ref(), j)).collect();
        let candidates = |x: &[f64], j: usize| -> Result<Vec<(f64, JointMoments)>> {
            match &reductions[j] {
                Some(cfg) => reduced_set_with_moments(x, t, &models[j], cfg),
                None => {
                    use crate::cfgp::Surrogate;
                    let zs = &level_sets[j];
                    Ok(zs
                        .iter()
                        .copied()
                        .zip(models[j].joint_moments(x, zs))
                        .collect())
                }
            }
        };
        let search = self
            .config
            .search(derive_seed(self.config.seed, &[6, t as u64]));
        let best = maximize_with(
            |x| {
                let mut info = Vec::with_capacity(k);
                let mut cost = Vec::with_capacity(k);
                let mut zs = Vec::with_capacity(k);
                for j in 0..k {
                    let c = candidates(x, j)?;
                    info.push(
                        c.iter()
                            .map(|(_, m)| ctx.objective_info(approx, j, m).0)
                            .collect(),
                    );
                    cost.push(c.iter().map(|(z, _)| ctx.cost_ratio(j, x, *z)).collect());
                    zs.push(c.into_iter().map(|(z, _)| z).collect::<Vec<f64>>());
                }
                Ok(best_ratio(&info, &cost)
                    .map(|(idx, r)| (idx.iter().enumerate().map(|(j, &i)| zs[j][i]).collect(), r)))
            },
            self.problem.dim(),
            &search,
        )?;
        let mut admissible = true;
        for (j, zj) in best.z.iter().enumerate() {
            let set: Vec<f64> = candidates(&best.x, j)?
                .into_iter()
                .map(|(z, _)| z)
                .collect();
            admissible &= set.contains(zj);
        }
        Ok((best.x, best.z, best.score, admissible))
    }

    fn select_mesmo(
        &self,
        models: &[CfGpModel],
        fronts: &[ParetoFrontSample],
        t: usize,
    ) -> Result<(Vec<f64>, f64)> {
        let ctx = AcquisitionContext::new(models, fronts, &self.costs, self.config.quad())?;
        let search = self
            .config
            .search(derive_seed(self.config.seed, &[6, t as u64]));
        maximize_input_only(|x| ctx.mesmo_score(x).value, self.problem.dim(), &search)
    }

    fn select_naive(
        &self,
        models: &[CfGpModel],
        fronts: &[ParetoFrontSample],
        t: usize,
    ) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let (x, score) = self.select_mesmo(models, fronts, t)?;
        let bandwidths: Vec<f64> = models.iter().map(|m| m.params().bandwidth_z).collect();
        let reductions = reduction_configs(
            &self.problem,
            &self.costs,
            &bandwidths,
            self.config.fidelity_grid,
        )?;
        let mut z = Vec::with_capacity(models.len());
        for (j, red) in reductions.iter().enumerate() {
            let set = match red {
                Some(cfg) => reduced_set(&x, t, &models[j], cfg)?,
                None => levels(self.problem.as_ref(), j),
            };
            z.push(cheapest_admissible(&x, &set, self.costs[j].as_ref()));
        }
        Ok((x, z, score))
    }

    fn step(&mut self, t: usize, models: &[CfGpModel]) -> Result<()> {
        let fronts = self.sample_fronts(models, t)?;
        match self.config.method {
            Method::ImocaT | Method::ImocaE => {
                let approx = if self.config.method == Method::ImocaT {
                    Approximation::Truncated
                } else {
                    Approximation::ExtendedSkew
                };
                let (x, z, score, admissible) = self.select_imoca(approx, models, &fronts, t)?;
                if !admissible {
                    log::warn!(
                        "iteration {t}: selected fidelities {z:?} failed the admissibility audit"
                    );
                }
                self.evaluate(x, z, t, score, admissible)
            }
            Method::NaiveCfmo => {
                let (x, z, score) = self.select_naive(models, &fronts, t)?;
                self.evaluate(x, z, t, score, true)
            }
            Method::Mesmo => {
                let (x, score) = self.select_mesmo(models, &fronts, t)?;
                let z = vec![Z_TOP; self.problem.num_objectives()];
                self.evaluate(x, z, t, score, true)
            }
        }
    }

    fn run(&mut self) -> Result<Vec<CfGpModel>> {
        for (x, z) in initial_design(self.config, &self.problem)? {
            self.evaluate(x, z, 0, f64::NAN, true)?;
        }
        let mut models = self.record_metrics(0)?;
        let mut t = 1;
        while self.cumulative_cost() < self.config.budget && t <= self.config.max_iterations {
            self.step(t, &models)?;
            models = self.record_metrics(t)?;
            log::debug!(
                "{} {} seed {} iter {t}: cost {:.3} phv {:.4}",
                self.config.problem,
                self.config.method,
                self.config.seed,
                self.cumulative_cost(),
                self.records.last().map_or(f64::NAN, |r| r.phv)
            );
            t += 1;
        }
        Ok(models)
    }
}

/// Runs the configured method. On failure the partial trace is returned with
/// the error.
pub fn run(config: &RunConfig, problem: Arc<dyn Problem>, reference: &ReferenceData) -> RunResult {
    let mut session = match Session::new(config, problem.clone(), reference) {
        Ok(s) => s,
        Err(error) => {
            let trace = RunTrace {
                config: config.clone(),
                dim: problem.dim(),
                num_objectives: problem.num_objectives(),
                reference_point: reference.hv.reference_point.clone(),
                reference_phv: reference.phv,
                records: Vec::new(),
                front: Vec::new(),
            };
            return Err(RunFailure {
                trace: Box::new(trace),
                error,
            });
        }
    };
    match session.run() {
        Ok(models) => Ok(session.trace(Some(&models))),
        Err(error) => Err(RunFailure {
            trace: Box::new(session.trace(None)),
            error,
        }),
    }
}

fn run_checked(
    allowed: &[Method],
    config: &RunConfig,
    problem: Arc<dyn Problem>,
    reference: &ReferenceData,
) -> RunResult {
    if !allowed.contains(&config.method) {
        let err = Error::Config(format!(
            "method {} is not handled by this loop",
            config.method
        ));
        return Err(RunFailure {
            trace: Box::new(RunTrace {
                config: config.clone(),
                dim: problem.dim(),
                num_objectives: problem.num_objectives(),
                reference_point: reference.hv.reference_point.clone(),
                reference_phv: reference.phv,
                records: Vec::new(),
                front: Vec::new(),
            }),
            error: err,
        });
    }
    run(config, problem, reference)
}

/// Cost-aware multi-fidelity loop with either entropy approximation.
pub fn run_imoca(
    config: &RunConfig,
    problem: Arc<dyn Problem>,
    reference: &ReferenceData,
) -> RunResult {
    run_checked(
        &[Method::ImocaT, Method::ImocaE],
        config,
        problem,
        reference,
    )
}

/// Single-fidelity input selection followed by the cheapest admissible fidelities.
pub fn run_naive_cfmo(
    config: &RunConfig,
    problem: Arc<dyn Problem>,
    reference: &ReferenceData,
) -> RunResult {
    run_checked(&[Method::NaiveCfmo], config, problem, reference)
}

/// Single-fidelity baseline; every query is at the top fidelity.
pub fn run_mesmo(
    config: &RunConfig,
    problem: Arc<dyn Problem>,
    reference: &ReferenceData,
) -> RunResult {
    run_checked(&[Method::Mesmo], config, problem, reference)
}
