use std::f64::consts::PI;

use imoca::benchmarks::{self, reference_front, FidelityKind, Problem};
use imoca::fidelity::CostCurve;
use imoca::metrics::{hypervolume, HypervolumeConfig};
use imoca::optimizer::{cheapest_admissible, maximize_input_only, maximize_joint, SearchConfig};
use imoca::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn top_fidelity_has_no_perturbation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bc = benchmarks::branin_currin();
    for _ in 0..20 {
        let u: Vec<f64> = (0..2).map(|_| rng.random()).collect();
        let y = bc.evaluate_top(&u).unwrap();
        let (x1, x2) = (-5.0 + 15.0 * u[0], 15.0 * u[1]);
        let b = 5.1 / (4.0 * PI * PI);
        let q = x2 - b * x1 * x1 + 5.0 / PI * x1 - 6.0;
        let branin = -(q * q + 10.0 * (1.0 - 1.0 / (8.0 * PI)) * x1.cos() + 10.0);
        assert!((y[0] - branin).abs() < 1e-9);
        let a = u[0];
        let currin = -(2300.0 * a.powi(3) + 1900.0 * a * a + 2092.0 * a + 60.0)
            / (100.0 * a.powi(3) + 500.0 * a * a + 4.0 * a + 20.0);
        assert!((y[1] - currin).abs() < 1e-9);
    }
}

#[test]
fn costs_positive_monotone_and_sum_to_k_at_top() {
    for name in benchmarks::PROBLEM_NAMES {
        let p = benchmarks::by_name(name).unwrap();
        let x = vec![0.5; p.dim()];
        let top = vec![1.0; p.num_objectives()];
        assert!(
            (p.normalized_cost(&x, &top) - p.num_objectives() as f64).abs() < 1e-12,
            "{name}"
        );
        for j in 0..p.num_objectives() {
            let levels = match p.fidelity_kind(j) {
                FidelityKind::Continuous => (0..=100).map(|i| i as f64 / 100.0).collect(),
                FidelityKind::Discrete(l) => l,
            };
            let costs: Vec<f64> = levels.iter().map(|&z| p.cost(j, &x, z)).collect();
            assert!(costs.iter().all(|&c| c > 0.0), "{name} {j}");
            assert!(
                costs.windows(2).all(|w| w[1] > w[0]) || costs.len() == 1,
                "{name} {j}"
            );
        }
    }
}

#[test]
fn qv_weights_and_fidelity_rules() {
    let unit = benchmarks::qv_with_low_fidelity_weights([1.0; 8]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x: Vec<f64> = (0..8).map(|_| rng.random()).collect();
    assert_eq!(
        unit.evaluate(&x, &[1.0, 0.0]).unwrap(),
        unit.evaluate(&x, &[1.0, 1.0]).unwrap()
    );
    let qv = benchmarks::qv();
    assert!(qv.evaluate(&x, &[0.0, 1.0]).is_err());

    let alpha = [0.9, 1.1, 0.9, 1.1, 0.9, 1.1, 0.9, 1.1];
    let mut sum = 0.0;
    for i in 0..8 {
        let s = x[i] - 1.5;
        sum += alpha[i] * s * s - 20.0 * PI * s + 10.0;
    }
    let m: f64 = sum / 8.0;
    let oracle = -m.signum() * m.abs().powf(0.25);
    let got = qv.evaluate(&x, &[1.0, 0.0]).unwrap()[1];
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    assert!((qv.cost(1, &x, 0.0) - 0.1).abs() < 1e-15);
}

#[test]
fn dtlz1_symmetric_point() {
    let p = benchmarks::dtlz1();
    let x = [0.5; 5];
    let y = p.evaluate(&x, &[1.0; 6]).unwrap();
    assert!((y[5] + 0.25).abs() < 1e-12, "{}", y[5]);
    assert_eq!(p.cost(0, &x, 0.6), 0.1);
}

#[test]
fn branin_currin_reference_front_and_grid_convergence() {
    let bc = benchmarks::branin_currin();
    let coarse = reference_front(&bc, 200).unwrap();
    assert!(coarse.len() >= 20, "{}", coarse.len());
    let fine = reference_front(&bc, 400).unwrap();
    let reference: Vec<f64> = (0..2)
        .map(|j| {
            coarse
                .points
                .iter()
                .chain(&fine.points)
                .map(|p| p[j])
                .fold(f64::INFINITY, f64::min)
                - 1.0
        })
        .collect();
    let cfg = HypervolumeConfig::new(reference).unwrap();
    let a = hypervolume(&coarse.points, &cfg).unwrap();
    let b = hypervolume(&fine.points, &cfg).unwrap();
    assert!((a - b).abs() / b < 0.005, "{a} vs {b}");
}

struct Peak;

impl Problem for Peak {
    fn name(&self) -> &str {
        "peak"
    }
    fn dim(&self) -> usize {
        1
    }
    fn num_objectives(&self) -> usize {
        1
    }
    fn fidelity_kind(&self, _j: usize) -> FidelityKind {
        FidelityKind::Continuous
    }
    fn evaluate(&self, x: &[f64], _z: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![-(x[0] - 0.3).powi(2)])
    }
    fn cost(&self, _j: usize, _x: &[f64], _z: f64) -> f64 {
        1.0
    }
}

#[test]
fn single_objective_reference_front_is_the_argmax() {
    let front = reference_front(&Peak, 11).unwrap();
    assert_eq!(front.points.len(), 1);
    assert!(front.points[0][0].abs() < 1e-12);
}

#[test]
fn quadratic_maximum_is_found() {
    let cfg = SearchConfig::default();
    let best = maximize_joint(
        |x, _z| -((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)),
        |_x, _j| vec![0.0, 0.5, 1.0],
        2,
        2,
        &cfg,
    )
    .unwrap();
    assert!(
        best.x.iter().all(|v| (v - 0.5).abs() < 0.05),
        "{:?}",
        best.x
    );
    let (x, _) = maximize_input_only(|x| -(x[0] - 0.5).powi(2), 1, &cfg).unwrap();
    assert!((x[0] - 0.5).abs() < 0.05);
}

#[test]
fn top_fidelity_reward_returns_all_ones() {
    let best = maximize_joint(
        |x, z| z.iter().filter(|&&v| v == 1.0).count() as f64 + 0.01 * x[0],
        |_x, _j| vec![0.0, 0.25, 1.0],
        3,
        2,
        &SearchConfig::default(),
    )
    .unwrap();
    assert_eq!(best.z, vec![1.0; 3]);
}

#[test]
fn cheapest_matches_linear_scan_on_non_monotone_cost() {
    let bumpy = |_: &[f64], z: f64| 1.5 + (7.0 * z).sin();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let mut set: Vec<f64> = (0..5)
            .map(|_| (rng.random::<f64>() * 20.0).round() / 20.0)
            .collect();
        set.push(1.0);
        let mut want = set[0];
        for &z in &set {
            let (c, cw) = (bumpy.cost(&[], z), bumpy.cost(&[], want));
            if c < cw || (c == cw && z < want) {
                want = z;
            }
        }
        assert_eq!(cheapest_admissible(&[0.0], &set, &bumpy), want);
    }
}

#[test]
fn doubling_candidates_does_not_hurt_on_average() {
    let f = |x: &[f64]| (9.0 * x[0]).sin() * (7.0 * x[1]).cos() - (x[0] - 0.7).powi(2);
    let mut small = 0.0;
    let mut large = 0.0;
    for seed in 0..20 {
        let base = SearchConfig {
            num_random: 100,
            num_local: 1,
            local_steps: 3,
            seed,
        };
        small += maximize_input_only(f, 2, &base).unwrap().1;
        let doubled = SearchConfig {
            num_random: 200,
            ..base
        };
        large += maximize_input_only(f, 2, &doubled).unwrap().1;
    }
    assert!(large / 20.0 >= small / 20.0 - 1e-12);
}
