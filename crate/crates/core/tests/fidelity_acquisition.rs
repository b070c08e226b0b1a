use std::sync::Arc;

use imoca::acquisition::{
    esg_entropy_term, esg_moments, truncated_entropy_term, AcquisitionContext, QuadConfig,
};
use imoca::cfgp::{CfGpModel, KernelParams, Surrogate};
use imoca::fidelity::{
    beta_t, gamma_threshold, info_gap, reduced_set, CostCurve, FidelityReductionConfig,
};
use imoca::pareto::ParetoFrontSample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Posterior with a fixed std per fidelity and independent fidelities.
struct TableModel {
    stds: Vec<(f64, f64)>,
    corr: f64,
}

impl Surrogate for TableModel {
    fn moments(&self, _x: &[f64], z: f64) -> (f64, f64) {
        let sd = self
            .stds
            .iter()
            .find(|(g, _)| (g - z).abs() < 1e-12)
            .map_or(1.0, |(_, s)| *s);
        (0.0, sd)
    }

    fn cross_covariance(&self, x: &[f64], z_low: f64, z_high: f64) -> f64 {
        if z_low == z_high {
            return self.moments(x, z_low).1.powi(2);
        }
        self.corr * self.moments(x, z_low).1 * self.moments(x, z_high).1
    }
}

fn branin_cost() -> Arc<dyn CostCurve> {
    Arc::new(|_: &[f64], z: f64| 0.05 + z.powf(6.5))
}

#[test]
fn stub_grid_membership_matches_both_inequalities() {
    let grid = vec![0.0, 0.25, 0.5, 0.75, 1.0];
    let stub = TableModel {
        stds: vec![
            (0.0, 0.1),
            (0.25, 0.9),
            (0.5, 0.05),
            (0.75, 1.0),
            (1.0, 0.3),
        ],
        corr: 0.0,
    };
    let h = 2.0;
    let cfg = FidelityReductionConfig::with_grid(h, 2, branin_cost(), grid.clone()).unwrap();
    let x = [0.3, 0.3];
    for t in [1, 2, 5, 50] {
        let got = reduced_set(&x, t, &stub, &cfg).unwrap();
        let sup = grid.iter().map(|&z| info_gap(z, h)).fold(0.0, f64::max);
        let want: Vec<f64> = grid
            .iter()
            .copied()
            .filter(|&z| {
                if z == 1.0 {
                    return true;
                }
                let first = info_gap(z, h) > beta_t(t, h) * sup;
                let c = (0.05 + z.powf(6.5)) / 1.05;
                let second = stub.moments(&x, z).1 > info_gap(z, h) * c.powf(1.0 / 5.0);
                first && second
            })
            .collect();
        assert_eq!(got, want, "t = {t}");
    }
    assert_eq!(reduced_set(&x, 1, &stub, &cfg).unwrap(), vec![0.25, 1.0]);
}

#[test]
fn reduced_set_at_huge_t_is_top_only() {
    let model = CfGpModel::prior(KernelParams::default_for(2)).unwrap();
    let cfg = FidelityReductionConfig::new(0.5, 2, branin_cost()).unwrap();
    assert_eq!(
        reduced_set(&[0.4, 0.6], 1_000_000, &model, &cfg).unwrap(),
        vec![1.0]
    );
}

#[test]
fn gamma_threshold_direct_evaluation() {
    let cfg = FidelityReductionConfig::new(1.0, 2, branin_cost()).unwrap();
    // 0.5^6.5 = 0.0110485
    let ratio: f64 = (0.05 + 0.011_048_543_456_039_806) / 1.05;
    let want = 0.5 * ratio.powf(0.2);
    assert!((gamma_threshold(0.5, &[0.2, 0.2], &cfg).unwrap() - want).abs() < 1e-14);
}

#[test]
fn esg_moments_match_rejection_sampling() {
    let (tau, gamma) = (0.5, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let s = (1.0f64 - tau * tau).sqrt();
    let mut acc = Vec::with_capacity(1_000_000);
    while acc.len() < 1_000_000 {
        let u: f64 = StandardNormal.sample(&mut rng);
        let v: f64 = StandardNormal.sample(&mut rng);
        if tau * u + s * v <= gamma {
            acc.push(u);
        }
    }
    let n = acc.len() as f64;
    let mean = acc.iter().sum::<f64>() / n;
    let var = acc.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / n;
    let m = esg_moments(tau, gamma).unwrap();
    assert!((m.mean - mean).abs() < 3e-3, "{} vs {mean}", m.mean);
    assert!((m.variance - var).abs() < 3e-3, "{} vs {var}", m.variance);
}

#[test]
fn esg_term_matches_fine_quadrature_at_documented_point() {
    let oracle = imoca::oracles::esg_entropy_gap_quadrature(0.7, 0.5, 20_001, 8.0);
    assert!((esg_entropy_term(0.7, 0.5, &QuadConfig::default()) - oracle).abs() < 1e-4);
}

fn front(max: f64) -> ParetoFrontSample {
    ParetoFrontSample::from_nondominated(vec![vec![max]]).unwrap()
}

#[test]
fn single_objective_closed_forms() {
    let model = CfGpModel::prior(KernelParams::default_for(1)).unwrap();
    let models = [model];
    let costs: Vec<Arc<dyn CostCurve>> = vec![Arc::new(|_: &[f64], _: f64| 1.0)];
    let fronts = [front(0.0)];
    let ctx = AcquisitionContext::new(&models, &fronts, &costs, QuadConfig::default()).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((ctx.mesmo_score(&[0.3]).value - ln2).abs() < 1e-12);
    assert!((ctx.imoca_t_score(&[0.3], &[1.0]).unwrap().value - ln2).abs() < 1e-12);

    let far = [front(1e6)];
    let ctx = AcquisitionContext::new(&models, &far, &costs, QuadConfig::default()).unwrap();
    assert!(ctx.mesmo_score(&[0.3]).value < 1e-12);
    assert!(ctx.imoca_t_score(&[0.3], &[0.4]).unwrap().value < 1e-12);
}

#[test]
fn prior_correlation_identity_gives_hand_score() {
    let p = KernelParams {
        amplitude: 1.5,
        lengthscales_x: vec![0.2],
        bandwidth_z: 0.4,
        noise_var: 1e-6,
    };
    let models = [CfGpModel::prior(p.clone()).unwrap()];
    let cost = |_: &[f64], z: f64| 0.1 + z * z;
    let costs: Vec<Arc<dyn CostCurve>> = vec![Arc::new(cost)];
    let fronts = [front(0.9)];
    let ctx = AcquisitionContext::new(&models, &fronts, &costs, QuadConfig::default()).unwrap();
    let z = 0.7;
    let m = models[0].joint_moments(&[0.5], &[z])[0];
    let tau = m.cov_gf / (m.std_g * m.std_f);
    let want_tau = (-(z - 1.0f64).powi(2) / (2.0 * 0.16)).exp();
    assert!((tau - want_tau).abs() < 1e-12);
    let gamma = 0.9 / 1.5;
    let hand =
        esg_entropy_term(want_tau, gamma, &QuadConfig::default()) / (cost(&[], z) / cost(&[], 1.0));
    let got = ctx.imoca_e_score(&[0.5], &[z]).unwrap().value;
    assert!((got - hand).abs() < 1e-12, "{got} vs {hand}");
}

#[test]
fn uncorrelated_stub_scores_zero() {
    let stub = TableModel {
        stds: vec![],
        corr: 0.0,
    };
    let models = [stub];
    let costs: Vec<Arc<dyn CostCurve>> = vec![branin_cost()];
    let fronts = [front(0.5)];
    let ctx = AcquisitionContext::new(&models, &fronts, &costs, QuadConfig::default()).unwrap();
    assert!(ctx.imoca_e_score(&[0.1], &[0.3]).unwrap().value.abs() < 1e-12);
}

#[test]
fn mesmo_equals_top_fidelity_score_times_k() {
    let models = [
        CfGpModel::prior(KernelParams::default_for(2)).unwrap(),
        CfGpModel::prior(KernelParams::default_for(2)).unwrap(),
    ];
    let costs: Vec<Arc<dyn CostCurve>> =
        vec![branin_cost(), Arc::new(|_: &[f64], z: f64| 0.1 + z * z)];
    let fronts = [
        ParetoFrontSample::from_nondominated(vec![vec![0.5, 1.2]]).unwrap(),
        ParetoFrontSample::from_nondominated(vec![vec![-0.3, 2.0]]).unwrap(),
    ];
    let ctx = AcquisitionContext::new(&models, &fronts, &costs, QuadConfig::default()).unwrap();
    let x = [0.2, 0.7];
    let mesmo = ctx.mesmo_score(&x).value;
    assert!((2.0 * ctx.imoca_t_score(&x, &[1.0, 1.0]).unwrap().value - mesmo).abs() < 1e-12);
    assert!(truncated_entropy_term(8.0) < 1e-12);
}
