use std::path::PathBuf;
use std::sync::Arc;

use imoca::benchmarks::{self, FidelityKind, Problem};
use imoca::cfgp::{CfGpModel, KernelParams, Observation};
use imoca::engine::{
    self, initial_design, recovered_front, Method, ReferenceData, RunConfig, RunTrace,
};
use imoca::metrics::r2_distance;
use imoca::pareto::{nondominated_filter, Nsga2Config};
use imoca::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fast(method: Method, problem: &str, seed: u64, budget: f64) -> RunConfig {
    let mut c = RunConfig::new(method, problem, seed);
    c.budget = budget;
    c.search_random = 100;
    c.search_local = 1;
    c.search_steps = 10;
    c.rff_features = 100;
    c.front_population = 20;
    c.front_generations = 10;
    c.recovered_population = 20;
    c.recovered_generations = 10;
    c.hyper_evals = 40;
    c.reference_density = 60;
    c
}

fn cache() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("engine-reference")
}

fn run(cfg: &RunConfig) -> RunTrace {
    let problem = benchmarks::by_name(&cfg.problem).unwrap();
    let reference = ReferenceData::cached(&problem, cfg.reference_density, &cache()).unwrap();
    engine::run(cfg, Arc::new(problem), &reference).unwrap()
}

fn check_common(t: &RunTrace) {
    assert_eq!(t.records.len(), t.iterations() + t.config.init_count);
    for w in t.records.windows(2) {
        assert!(w[1].cumulative_cost > w[0].cumulative_cost);
    }
    for r in t.records.iter().filter(|r| r.iteration > 0) {
        assert!(
            r.cumulative_cost - r.cost < t.config.budget,
            "query issued past the budget"
        );
        assert!(r.admissible);
    }
}

#[test]
fn budget_equal_to_init_cost_runs_no_iterations() {
    let mut cfg = fast(Method::ImocaT, "branin-currin", 4, 0.0);
    let problem: Arc<dyn Problem> = Arc::new(benchmarks::branin_currin());
    let init = initial_design(&cfg, &problem).unwrap();
    cfg.budget = init
        .iter()
        .map(|(x, z)| problem.normalized_cost(x, z))
        .sum();
    let t = run(&cfg);
    assert_eq!(t.iterations(), 0);
    assert_eq!(t.records.len(), cfg.init_count);
    check_common(&t);
}

#[test]
fn discrete_problem_queries_listed_levels() {
    let mut cfg = fast(Method::ImocaE, "dtlz1", 1, 8.0);
    cfg.init_count = 2;
    let t = run(&cfg);
    assert!(t.iterations() > 0);
    for r in &t.records {
        assert!(r.z.iter().all(|z| [0.2, 0.6, 1.0].contains(z)), "{:?}", r.z);
    }
    check_common(&t);
}

#[test]
fn mesmo_stays_at_top_fidelity_with_nonnegative_acquisition() {
    let t = run(&fast(Method::Mesmo, "branin-currin", 2, 12.0));
    assert!(t.iterations() > 0);
    assert!(t.records.iter().all(|r| r.z == vec![1.0, 1.0]));
    for r in t.records.iter().filter(|r| r.iteration > 0) {
        assert!(r.acquisition >= 0.0);
        assert!((r.cost - 2.0).abs() < 1e-12);
    }
    check_common(&t);
}

#[test]
fn reruns_are_bit_identical() {
    for method in Method::ALL {
        let cfg = fast(method, "branin-currin", 9, 15.0);
        let a = run(&cfg);
        let b = run(&cfg);
        assert_eq!(a.to_text(), b.to_text(), "{method}");
        check_common(&a);
        let echoed = RunTrace::parse(&a.to_text()).unwrap();
        assert_eq!(echoed.config, cfg);
    }
}

#[test]
fn imoca_e_bc_budget_50_is_deterministic() {
    let mut cfg = RunConfig::new(Method::ImocaE, "branin-currin", 0);
    cfg.budget = 50.0;
    let a = run(&cfg);
    let b = run(&cfg);
    assert_eq!(a.to_text(), b.to_text());
}

struct TopOnly;

impl Problem for TopOnly {
    fn name(&self) -> &str {
        "top-only"
    }
    fn dim(&self) -> usize {
        1
    }
    fn num_objectives(&self) -> usize {
        2
    }
    fn fidelity_kind(&self, _j: usize) -> FidelityKind {
        FidelityKind::Discrete(vec![1.0])
    }
    fn evaluate(&self, x: &[f64], _z: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![x[0], 1.0 - x[0] * x[0]])
    }
    fn cost(&self, _j: usize, _x: &[f64], _z: f64) -> f64 {
        3.0
    }
}

#[test]
fn naive_with_top_only_sets_costs_k_per_iteration() {
    let mut cfg = fast(Method::NaiveCfmo, "top-only", 0, 14.0);
    cfg.reference_density = 101;
    let problem = TopOnly;
    let reference = ReferenceData::compute(&problem, 101).unwrap();
    let t = engine::run(&cfg, Arc::new(problem), &reference).unwrap();
    assert!(t.iterations() > 0);
    for r in &t.records {
        assert_eq!(r.z, vec![1.0, 1.0]);
        assert_eq!(r.cost, 2.0);
    }
}

#[test]
fn fidelities_tend_to_rise_over_a_run() {
    let (mut early, mut late) = (0.0, 0.0);
    for seed in 0..10 {
        let t = run(&fast(Method::ImocaT, "branin-currin", seed, 25.0));
        let zs: Vec<f64> = t
            .records
            .iter()
            .filter(|r| r.iteration > 0)
            .map(|r| r.z.iter().sum::<f64>() / r.z.len() as f64)
            .collect();
        let q = (zs.len() / 4).max(1);
        early += zs[..q].iter().sum::<f64>() / q as f64;
        late += zs[zs.len() - q..].iter().sum::<f64>() / q as f64;
    }
    assert!(late >= early, "late {late} < early {early}");
}

fn fitted_models(points: &[Vec<f64>], problem: &dyn Problem) -> Vec<CfGpModel> {
    (0..problem.num_objectives())
        .map(|j| {
            let vals: Vec<f64> = points
                .iter()
                .map(|x| problem.evaluate_top(x).unwrap()[j])
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd =
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            let recs: Vec<Observation> = points
                .iter()
                .zip(&vals)
                .map(|(x, v)| Observation::new(x.clone(), 1.0, (v - mean) / sd))
                .collect();
            let params = KernelParams {
                lengthscales_x: vec![0.25; problem.dim()],
                ..KernelParams::default_for(problem.dim())
            };
            CfGpModel::fit(&recs, params).unwrap()
        })
        .collect()
}

#[test]
fn recovered_front_beats_a_random_front() {
    let bc = benchmarks::branin_currin();
    let reference = ReferenceData::cached(&bc, 60, &cache()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dense: Vec<Vec<f64>> = (0..120).map(|_| vec![rng.random(), rng.random()]).collect();
    let models = fitted_models(&dense, &bc);
    let cfg = Nsga2Config {
        population: 40,
        generations: 40,
        seed: 2,
        ..Default::default()
    };
    let rec = recovered_front(&models, 2, &cfg).unwrap();
    assert_eq!(recovered_front(&models, 2, &cfg).unwrap(), rec);
    let true_vals: Vec<Vec<f64>> = rec
        .inputs
        .iter()
        .map(|x| bc.evaluate_top(x).unwrap())
        .collect();
    let recovered = nondominated_filter(&true_vals).unwrap().points;
    let random_vals: Vec<Vec<f64>> = (0..rec.inputs.len())
        .map(|_| bc.evaluate_top(&[rng.random(), rng.random()]).unwrap())
        .collect();
    let random = nondominated_filter(&random_vals).unwrap().points;
    let r_rec = r2_distance(&reference.front.points, &recovered).unwrap();
    let r_rand = r2_distance(&reference.front.points, &random).unwrap();
    assert!(r_rec < r_rand, "recovered {r_rec} vs random {r_rand}");
}

#[test]
fn single_objective_recovered_front_is_a_singleton() {
    let recs: Vec<Observation> = (0..8)
        .map(|i| {
            let x = i as f64 / 7.0;
            Observation::new(vec![x], 1.0, -(x - 0.4).powi(2))
        })
        .collect();
    let model = CfGpModel::fit(&recs, KernelParams::default_for(1)).unwrap();
    let res = recovered_front(&[model], 1, &Nsga2Config::default()).unwrap();
    assert_eq!(res.front.points.len(), 1);
}
