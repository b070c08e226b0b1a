//! `selftest`: library numerics against independent oracles.
//!
//! The implementations under test are plain function pointers so a broken
//! one can be swapped in and the matching check observed to fail.

use std::io::Write;

use imoca::acquisition::{esg_entropy_term, truncated_entropy_term, QuadConfig};
use imoca::cfgp::{CfGpModel, KernelParams, Observation};
use imoca::metrics::{hypervolume, r2_distance, HypervolumeConfig};
use imoca::oracles;
use imoca::pareto::nondominated_filter;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type HvFn = fn(&[Vec<f64>], &HypervolumeConfig) -> imoca::Result<f64>;
pub type R2Fn = fn(&[Vec<f64>], &[Vec<f64>]) -> imoca::Result<f64>;

#[derive(Clone, Copy)]
pub struct Implementations {
    pub truncated: fn(f64) -> f64,
    pub esg: fn(f64, f64, &QuadConfig) -> f64,
    pub hypervolume: HvFn,
    pub r2: R2Fn,
}

impl Default for Implementations {
    fn default() -> Self {
        Self {
            truncated: truncated_entropy_term,
            esg: esg_entropy_term,
            hypervolume,
            r2: r2_distance,
        }
    }
}

pub type CheckFn = Box<dyn Fn() -> Result<String, String>>;

pub struct Check {
    pub name: &'static str,
    pub run: CheckFn,
}

fn within(name: &str, err: f64, tol: f64) -> Result<String, String> {
    let msg = format!("{name} max error {err:.2e} (tol {tol:.0e})");
    if err < tol {
        Ok(msg)
    } else {
        Err(msg)
    }
}

pub fn checks(imp: Implementations) -> Vec<Check> {
    vec![
        Check {
            name: "truncated-entropy",
            run: Box::new(move || {
                let mut worst = 0.0f64;
                for (i, g) in [-2.0, 0.0, 2.0].into_iter().enumerate() {
                    let mc = oracles::mc_truncated_entropy_gap(g, 200_000, i as u64);
                    worst = worst.max(((imp.truncated)(g) - mc).abs());
                }
                within("vs Monte Carlo", worst, 1e-2)
            }),
        },
        Check {
            name: "esg-entropy",
            run: Box::new(move || {
                let quad = QuadConfig::default();
                let mut worst = 0.0f64;
                for tau in [0.2, 0.5, 0.8] {
                    for g in [-1.0, 0.0, 1.5] {
                        let oracle = oracles::esg_entropy_gap_quadrature(tau, g, 20_001, 10.0);
                        worst = worst.max(((imp.esg)(tau, g, &quad) - oracle).abs());
                    }
                }
                within("vs fine quadrature", worst, 1e-4)
            }),
        },
        Check {
            name: "gp-conditioning",
            run: Box::new(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let params = KernelParams {
                    amplitude: 1.3,
                    lengthscales_x: vec![0.3, 0.5],
                    bandwidth_z: 0.7,
                    noise_var: 1e-4,
                };
                let recs: Vec<Observation> = (0..8)
                    .map(|_| {
                        let x = vec![rng.random(), rng.random()];
                        let y = x[0] - x[1];
                        Observation::new(x, rng.random(), y)
                    })
                    .collect();
                let model = CfGpModel::fit(&recs, params.clone()).map_err(|e| e.to_string())?;
                let qs: Vec<(Vec<f64>, f64)> = (0..5)
                    .map(|_| (vec![rng.random(), rng.random()], rng.random()))
                    .collect();
                let (mean, cov) =
                    oracles::dense_conditioning(&recs, &params, &qs).map_err(|e| e.to_string())?;
                let mut worst = 0.0f64;
                for (i, (x, z)) in qs.iter().enumerate() {
                    let (mu, sd) = model.posterior(x, *z).map_err(|e| e.to_string())?;
                    worst = worst
                        .max((mu - mean[i]).abs())
                        .max((sd * sd - cov[i][i]).abs());
                }
                within("vs dense conditioning", worst, 1e-8)
            }),
        },
        Check {
            name: "hypervolume",
            run: Box::new(move || {
                let origin = HypervolumeConfig::new(vec![0.0, 0.0]).map_err(|e| e.to_string())?;
                let boxed = (imp.hypervolume)(&[vec![2.0, 1.0], vec![1.0, 2.0]], &origin)
                    .map_err(|e| e.to_string())?;
                if boxed != 3.0 {
                    return Err(format!("boxed example gave {boxed}, expected 3"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(9);
                let pts: Vec<Vec<f64>> = (0..8)
                    .map(|_| (0..3).map(|_| rng.random_range(0.1..1.0)).collect())
                    .collect();
                let front = nondominated_filter(&pts).map_err(|e| e.to_string())?.points;
                let cfg = HypervolumeConfig::new(vec![0.0; 3]).map_err(|e| e.to_string())?;
                let exact = (imp.hypervolume)(&front, &cfg).map_err(|e| e.to_string())?;
                let mc = oracles::mc_hypervolume(&front, &cfg.reference_point, 1_000_000, 1);
                within("relative, vs Monte Carlo", (exact - mc).abs() / mc, 1e-2)
            }),
        },
        Check {
            name: "r2-distance",
            run: Box::new(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(21);
                let a: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random(), rng.random()]).collect();
                let b: Vec<Vec<f64>> = (0..7).map(|_| vec![rng.random(), rng.random()]).collect();
                let got = (imp.r2)(&a, &b).map_err(|e| e.to_string())?;
                within(
                    "vs brute force",
                    (got - oracles::brute_force_r2(&a, &b)).abs(),
                    1e-12,
                )
            }),
        },
    ]
}

/// Runs every check, printing one line each. Returns whether all passed.
pub fn run_checks(checks: &[Check], out: &mut dyn Write) -> bool {
    let mut ok = true;
    for c in checks {
        let (tag, msg) = match (c.run)() {
            Ok(m) => ("PASS", m),
            Err(m) => {
                ok = false;
                ("FAIL", m)
            }
        };
        let _ = writeln!(out, "{tag} {}: {msg}", c.name);
    }
    ok
}
