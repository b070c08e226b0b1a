use std::sync::Arc;

use imoca::acquisition::{
    esg_entropy_term, truncated_entropy_term, AcquisitionContext, QuadConfig,
};
use imoca::benchmarks::{self, FidelityKind, Problem};
use imoca::cfgp::{CfGpModel, KernelParams, Observation, Surrogate};
use imoca::fidelity::{info_gap, reduced_set, CostCurve, FidelityReductionConfig};
use imoca::metrics::{hypervolume, r2_distance, HypervolumeConfig};
use imoca::oracles::brute_force_nondominated;
use imoca::pareto::{dominates, nondominated_filter, ParetoFrontSample};
use proptest::prelude::*;

struct Wide;

impl Surrogate for Wide {
    fn moments(&self, _x: &[f64], _z: f64) -> (f64, f64) {
        (0.0, 1e6)
    }

    fn cross_covariance(&self, _x: &[f64], _a: f64, _b: f64) -> f64 {
        0.0
    }
}

fn vec_k(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u8..5).prop_map(f64::from), k)
}

fn points(k: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, k), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dominance_is_a_strict_partial_order(a in vec_k(3), b in vec_k(3), c in vec_k(3)) {
        prop_assert!(!dominates(&a, &a).unwrap());
        if dominates(&a, &b).unwrap() {
            prop_assert!(!dominates(&b, &a).unwrap());
            if dominates(&b, &c).unwrap() {
                prop_assert!(dominates(&a, &c).unwrap());
            }
        }
    }

    #[test]
    fn filter_is_idempotent_and_matches_brute_force(pts in points(3, 40)) {
        let front = nondominated_filter(&pts).unwrap();
        let again = nondominated_filter(&front.points).unwrap();
        prop_assert_eq!(&again.points, &front.points);
        let want: Vec<Vec<f64>> = brute_force_nondominated(&pts).into_iter().map(|i| pts[i].clone()).collect();
        prop_assert_eq!(front.points, want);
    }

    #[test]
    fn hypervolume_ignores_order_and_dominated_points(pts in points(3, 10), shift in 0usize..10) {
        let cfg = HypervolumeConfig::new(vec![0.0; 3]).unwrap();
        let base = hypervolume(&pts, &cfg).unwrap();
        let mut rotated = pts.clone();
        let n = rotated.len();
        rotated.rotate_left(shift % n);
        prop_assert!((hypervolume(&rotated, &cfg).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
        let mut with_dominated = pts.clone();
        with_dominated.push(pts[0].iter().map(|v| v * 0.5).collect());
        prop_assert!((hypervolume(&with_dominated, &cfg).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn hypervolume_grows_with_a_new_nondominated_point(pts in points(2, 10), p in prop::collection::vec(0.01f64..1.2, 2)) {
        let front = nondominated_filter(&pts).unwrap().points;
        if front.iter().all(|q| !dominates(q, &p).unwrap() && q != &p) {
            let cfg = HypervolumeConfig::new(vec![0.0; 2]).unwrap();
            let mut more = front.clone();
            more.push(p);
            prop_assert!(hypervolume(&more, &cfg).unwrap() > hypervolume(&front, &cfg).unwrap());
        }
    }

    #[test]
    fn r2_shrinks_as_the_recovered_front_grows(a in points(2, 12), b in points(2, 12), extra in points(2, 5)) {
        prop_assert_eq!(r2_distance(&a, &a).unwrap(), 0.0);
        let mut bigger = b.clone();
        bigger.extend(extra);
        prop_assert!(r2_distance(&a, &bigger).unwrap() <= r2_distance(&a, &b).unwrap());
    }

    #[test]
    fn posterior_std_never_exceeds_prior(
        data in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -2.0f64..2.0), 1..10),
        qx in 0.0f64..1.0,
        qz in 0.0f64..1.0,
    ) {
        let params = KernelParams { amplitude: 1.3, lengthscales_x: vec![0.3], bandwidth_z: 0.6, noise_var: 1e-4 };
        let recs: Vec<Observation> = data.iter().map(|&(x, z, y)| Observation::new(vec![x], z, y)).collect();
        let model = CfGpModel::fit(&recs, params).unwrap();
        let (_, sd) = model.posterior(&[qx], qz).unwrap();
        prop_assert!(sd <= 1.3 + 1e-9);
    }

    #[test]
    fn truncated_term_decreases(g in -6.0f64..8.0, step in 0.01f64..1.0) {
        let a = truncated_entropy_term(g);
        let b = truncated_entropy_term(g + step);
        prop_assert!(a >= 0.0 && b >= 0.0);
        prop_assert!(b < a || a < 1e-12);
    }

    #[test]
    fn simpson_halving_is_stable(tau in 0.05f64..0.95, g in -2.0f64..2.0) {
        let full = esg_entropy_term(tau, g, &QuadConfig::default());
        let half = esg_entropy_term(tau, g, &QuadConfig { nodes: 101, half_width: 5.0 });
        prop_assert!((full - half).abs() < 1e-4, "{} vs {}", full, half);
    }

    #[test]
    fn scores_ignore_front_order(seed in 0u64..1000, x in 0.0f64..1.0, z in 0.0f64..1.0) {
        let p = KernelParams::default_for(1);
        let recs = vec![
            Observation::new(vec![0.2], 1.0, 0.3),
            Observation::new(vec![0.8], 0.4, -0.1),
        ];
        let models = [CfGpModel::fit(&recs, p.clone()).unwrap(), CfGpModel::fit(&recs, p).unwrap()];
        let costs: Vec<Arc<dyn CostCurve>> = vec![
            Arc::new(|_: &[f64], z: f64| 0.05 + z.powf(6.5)),
            Arc::new(|_: &[f64], z: f64| 0.1 + z * z),
        ];
        let f = |a: f64, b: f64| ParetoFrontSample::from_nondominated(vec![vec![a, b]]).unwrap();
        let s = seed as f64 / 1000.0;
        let fronts = vec![f(s, 0.4), f(0.9, -s), f(0.1, 0.2)];
        let mut rev = fronts.clone();
        rev.reverse();
        let a = AcquisitionContext::new(&models, &fronts, &costs, QuadConfig::default()).unwrap();
        let b = AcquisitionContext::new(&models, &rev, &costs, QuadConfig::default()).unwrap();
        let zz = [z, 1.0];
        prop_assert!((a.imoca_t_score(&[x], &zz).unwrap().value - b.imoca_t_score(&[x], &zz).unwrap().value).abs() < 1e-12);
        prop_assert!((a.imoca_e_score(&[x], &zz).unwrap().value - b.imoca_e_score(&[x], &zz).unwrap().value).abs() < 1e-12);
        prop_assert!((a.mesmo_score(&[x]).value - b.mesmo_score(&[x]).value).abs() < 1e-12);
    }

    #[test]
    fn info_gap_condition_shrinks_toward_the_top(h in 0.2f64..3.0, t1 in 1usize..200, dt in 0usize..5000, x in 0.0f64..1.0) {
        // A huge std passes the uncertainty test, leaving only the information-gap condition.
        let model = Wide;
        let cost: Arc<dyn CostCurve> = Arc::new(|_: &[f64], z: f64| 0.05 + z.powf(6.5));
        let cfg = FidelityReductionConfig::new(h, 2, cost).unwrap();
        let a = reduced_set(&[x, 0.5], t1, &model, &cfg).unwrap();
        let b = reduced_set(&[x, 0.5], t1 + dt, &model, &cfg).unwrap();
        prop_assert!(b.iter().all(|z| a.contains(z)));
        for &z in &cfg.candidate_grid {
            if z == 1.0 || a.contains(&z) {
                continue;
            }
            for &closer in cfg.candidate_grid.iter().filter(|&&c| c != 1.0 && info_gap(c, h) < info_gap(z, h)) {
                prop_assert!(!a.contains(&closer));
            }
        }
    }

    #[test]
    fn benchmark_costs_are_positive(name_idx in 0usize..4, u in prop::collection::vec(0.0f64..1.0, 8), z in 0.0f64..1.0) {
        let p = benchmarks::by_name(benchmarks::PROBLEM_NAMES[name_idx]).unwrap();
        let x = &u[..p.dim()];
        for j in 0..p.num_objectives() {
            let zz = match p.fidelity_kind(j) {
                FidelityKind::Continuous => z,
                FidelityKind::Discrete(l) => l[(z * l.len() as f64) as usize % l.len()],
            };
            prop_assert!(p.cost(j, x, zz) > 0.0);
            if p.fidelity_kind(j) == FidelityKind::Continuous {
                prop_assert!(p.cost(j, x, zz) <= p.cost(j, x, (zz + 0.1).min(1.0)));
            }
        }
    }
}
